//! Fully connected autoencoder with a one-dimensional sigmoid code.
//!
//! Encoder: `input_dim → h₁ → h₂ → h₃ → h₄ → 1`, leaky ReLU after every
//! intermediate layer and a sigmoid on the code. Decoder mirrors it,
//! `1 → h₄ → h₃ → h₂ → h₁ → input_dim`, with a tanh output. Inputs are filter
//! coordinates in the zero-sum hyperplane basis (`input_dim = k² − 1`).
//!
//! Training minimizes the batch mean of the mean-centered cosine dissimilarity
//! between each filter and its reconstruction, both lifted back to the full
//! k×k space. Gradients are derived by hand and the optimizer is Adam. All
//! accumulation runs in a fixed order so a seed pins the result bit for bit.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{check_kernel_size, Corpus};
use crate::error::{Error, Result};
use crate::geometry::{center, dot, norm, HyperplaneBasis, PreprocessedFilter, EPS_NORM};

pub const MODEL_MAGIC: [u8; 4] = *b"KAE1";
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

/// Default hidden widths for a kernel size, tapering towards the 1D code.
pub fn default_hidden_dims(kernel_size: u32) -> [usize; 4] {
    match kernel_size {
        3 => [16, 8, 4, 2],
        5 => [20, 12, 6, 3],
        _ => [32, 16, 8, 4],
    }
}

/// Affine layer, weights stored row-major as `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn glorot(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Dense {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.inputs).zip(&self.bias))
        {
            *o = b + dot(row, x);
        }
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Activation {
    Leaky(f64),
    Sigmoid,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Leaky(s) => {
                if z > 0.0 {
                    z
                } else {
                    s * z
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn grad(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Leaky(s) => {
                if z > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    kernel_size: u32,
    hidden: [usize; 4],
    leaky_slope: f64,
    encoder: Vec<Dense>,
    decoder: Vec<Dense>,
    basis: HyperplaneBasis,
}

/// Parameter-shaped gradient collection.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder: Vec<Dense>,
    pub decoder: Vec<Dense>,
}

impl Gradients {
    fn zeros_like(model: &AutoencoderModel) -> Self {
        let z = |ls: &[Dense]| ls.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect();
        Gradients {
            encoder: z(&model.encoder),
            decoder: z(&model.decoder),
        }
    }

    /// Flattened in the same order as [`AutoencoderModel::param`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in self.encoder.iter().chain(&self.decoder) {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    fn scale(&mut self, s: f64) {
        for l in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            l.weights.iter_mut().for_each(|g| *g *= s);
            l.bias.iter_mut().for_each(|g| *g *= s);
        }
    }
}

/// (inputs, outputs) of each layer.
type Shapes = Vec<(usize, usize)>;

fn layer_dims(input_dim: usize, hidden: [usize; 4]) -> (Shapes, Shapes) {
    let enc_sizes = [input_dim, hidden[0], hidden[1], hidden[2], hidden[3], 1];
    let dec_sizes = [1, hidden[3], hidden[2], hidden[1], hidden[0], input_dim];
    let pairs = |s: &[usize]| s.windows(2).map(|w| (w[0], w[1])).collect();
    (pairs(&enc_sizes), pairs(&dec_sizes))
}

pub fn init_model(kernel_size: u32, hidden: [usize; 4], seed: u64) -> Result<AutoencoderModel> {
    AutoencoderModel::new(kernel_size, hidden, DEFAULT_LEAKY_SLOPE, seed)
}

impl AutoencoderModel {
    /// Glorot-uniform weights drawn from `seed`, zero biases.
    pub fn new(kernel_size: u32, hidden: [usize; 4], leaky_slope: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(kernel_size, hidden, leaky_slope, |i, o| {
            Dense::glorot(i, o, &mut rng)
        })
    }

    fn build(
        kernel_size: u32,
        hidden: [usize; 4],
        leaky_slope: f64,
        mut layer: impl FnMut(usize, usize) -> Dense,
    ) -> Result<Self> {
        check_kernel_size(kernel_size)?;
        if hidden.contains(&0) {
            return Err(Error::InvalidModel(format!("hidden widths must be positive: {hidden:?}")));
        }
        if !leaky_slope.is_finite() {
            return Err(Error::InvalidModel("leaky slope must be finite".into()));
        }
        let n = (kernel_size * kernel_size) as usize;
        let basis = HyperplaneBasis::new(n)?;
        let (enc, dec) = layer_dims(n - 1, hidden);
        let encoder = enc.into_iter().map(|(i, o)| layer(i, o)).collect();
        let decoder = dec.into_iter().map(|(i, o)| layer(i, o)).collect();
        Ok(AutoencoderModel {
            kernel_size,
            hidden,
            leaky_slope,
            encoder,
            decoder,
            basis,
        })
    }

    pub fn kernel_size(&self) -> u32 {
        self.kernel_size
    }

    pub fn input_dim(&self) -> usize {
        self.basis.reduced_dim()
    }

    pub fn hidden_dims(&self) -> [usize; 4] {
        self.hidden
    }

    pub fn leaky_slope(&self) -> f64 {
        self.leaky_slope
    }

    pub fn basis(&self) -> &HyperplaneBasis {
        &self.basis
    }

    pub fn encoder(&self) -> &[Dense] {
        &self.encoder
    }

    pub fn decoder(&self) -> &[Dense] {
        &self.decoder
    }

    /// Mutable layer access for tests and tooling; shapes must not change.
    pub fn layers_mut(&mut self) -> (&mut [Dense], &mut [Dense]) {
        (&mut self.encoder, &mut self.decoder)
    }

    pub fn n_params(&self) -> usize {
        self.encoder.iter().chain(&self.decoder).map(Dense::n_params).sum()
    }

    fn locate(&self, mut idx: usize) -> (bool, usize, bool, usize) {
        for (enc, layers) in [(true, &self.encoder), (false, &self.decoder)] {
            for (li, l) in layers.iter().enumerate() {
                if idx < l.weights.len() {
                    return (enc, li, true, idx);
                }
                idx -= l.weights.len();
                if idx < l.bias.len() {
                    return (enc, li, false, idx);
                }
                idx -= l.bias.len();
            }
        }
        panic!("parameter index out of range");
    }

    /// Flat parameter access: encoder layers then decoder layers, each as
    /// weights (row-major) followed by bias.
    pub fn param(&self, idx: usize) -> f64 {
        let (enc, li, w, i) = self.locate(idx);
        let l = if enc { &self.encoder[li] } else { &self.decoder[li] };
        if w {
            l.weights[i]
        } else {
            l.bias[i]
        }
    }

    pub fn param_mut(&mut self, idx: usize) -> &mut f64 {
        let (enc, li, w, i) = self.locate(idx);
        let l = if enc {
            &mut self.encoder[li]
        } else {
            &mut self.decoder[li]
        };
        if w {
            &mut l.weights[i]
        } else {
            &mut l.bias[i]
        }
    }

    fn activation(&self, layer: usize, encoder: bool) -> Activation {
        if layer + 1 < self.encoder.len() {
            Activation::Leaky(self.leaky_slope)
        } else if encoder {
            Activation::Sigmoid
        } else {
            Activation::Tanh
        }
    }

    fn check_input(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: u.len(),
            });
        }
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("non-finite encoder input".into()));
        }
        Ok(())
    }

    /// Code in (0, 1) for hyperplane coordinates `u`.
    pub fn encode(&self, u: &[f64]) -> Result<f64> {
        self.check_input(u)?;
        let mut ws = Workspace::new(self);
        Ok(self.run(&self.encoder, true, u, &mut ws.enc_z, &mut ws.enc_a)[0])
    }

    /// Hyperplane coordinates in (−1, 1) reconstructed from `code`.
    pub fn decode(&self, code: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&code) {
            return Err(Error::CodeOutOfRange(code));
        }
        let mut ws = Workspace::new(self);
        Ok(self
            .run(&self.decoder, false, &[code], &mut ws.dec_z, &mut ws.dec_a)
            .to_vec())
    }

    /// Decoded reconstruction lifted to the full k² space, row-major.
    pub fn decode_full(&self, code: f64) -> Result<Vec<f64>> {
        Ok(self.basis.lift(&self.decode(code)?))
    }

    pub fn reconstruct(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.decode(self.encode(u)?)
    }

    fn run<'w>(
        &self,
        layers: &[Dense],
        encoder: bool,
        input: &[f64],
        zs: &mut [Vec<f64>],
        acts: &'w mut [Vec<f64>],
    ) -> &'w [f64] {
        acts[0].copy_from_slice(input);
        for (li, l) in layers.iter().enumerate() {
            let (prev, rest) = acts.split_at_mut(li + 1);
            l.forward(&prev[li], &mut zs[li]);
            let act = self.activation(li, encoder);
            for (a, &z) in rest[0].iter_mut().zip(&zs[li]) {
                *a = act.apply(z);
            }
        }
        &acts[layers.len()]
    }

    /// Largest |activation| seen across both networks for one input.
    pub fn max_activation(&self, u: &[f64]) -> Result<f64> {
        self.check_input(u)?;
        let mut ws = Workspace::new(self);
        let code = self.run(&self.encoder, true, u, &mut ws.enc_z, &mut ws.enc_a)[0];
        self.run(&self.decoder, false, &[code], &mut ws.dec_z, &mut ws.dec_a);
        let m = ws
            .enc_z
            .iter()
            .chain(&ws.dec_z)
            .chain(&ws.enc_a)
            .chain(&ws.dec_a)
            .flat_map(|v| v.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()));
        Ok(m)
    }
}

/// Anything that maps hyperplane coordinates to a reconstruction of the same
/// dimension. Lets the loss be checked against exact test doubles.
pub trait Reconstruct {
    fn basis(&self) -> &HyperplaneBasis;
    fn reconstruct_reduced(&self, u: &[f64]) -> Result<Vec<f64>>;
}

impl Reconstruct for AutoencoderModel {
    fn basis(&self) -> &HyperplaneBasis {
        &self.basis
    }

    fn reconstruct_reduced(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.reconstruct(u)
    }
}

/// Per-sample mc dissimilarity and the gradient w.r.t. the full-space
/// reconstruction `y`. Returns `None` when `y` is degenerate.
fn mc_loss_and_grad(y: &[f64], target: &[f64]) -> Option<(f64, Vec<f64>)> {
    let cy = center(y);
    let cx = center(target);
    let ny = norm(&cy);
    let nx = norm(&cx);
    if ny <= EPS_NORM || nx <= EPS_NORM {
        return None;
    }
    let cos = dot(&cy, &cx) / (ny * nx);
    // d(1 − cos)/dcy = −(x̂ − cos·ŷ)/‖cy‖; already zero-mean, so the
    // centering projection leaves it unchanged.
    let g = cy
        .iter()
        .zip(&cx)
        .map(|(a, b)| -(b / nx - cos * a / ny) / ny)
        .collect();
    Some((1.0 - cos.clamp(-1.0, 1.0), g))
}

/// Outcome of evaluating the loss over a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub mean: f64,
    /// Samples whose reconstruction had near-zero centered norm; each
    /// contributes 1 to the sum.
    pub degenerate: usize,
}

pub fn loss_with<R: Reconstruct>(model: &R, batch: &[PreprocessedFilter]) -> Result<LossValue> {
    if batch.is_empty() {
        return Err(Error::Empty("loss batch".into()));
    }
    let basis = model.basis();
    let mut sum = 0.0;
    let mut degenerate = 0;
    for f in batch {
        let y = basis.lift(&model.reconstruct_reduced(&f.reduced)?);
        let target = basis.lift(&f.reduced);
        match mc_loss_and_grad(&y, &target) {
            Some((l, _)) => sum += l,
            None => {
                degenerate += 1;
                sum += 1.0;
            }
        }
    }
    Ok(LossValue {
        mean: sum / batch.len() as f64,
        degenerate,
    })
}

pub fn loss(model: &AutoencoderModel, batch: &[PreprocessedFilter]) -> Result<f64> {
    Ok(loss_with(model, batch)?.mean)
}

struct Workspace {
    enc_z: Vec<Vec<f64>>,
    enc_a: Vec<Vec<f64>>,
    dec_z: Vec<Vec<f64>>,
    dec_a: Vec<Vec<f64>>,
    delta: Vec<f64>,
    next: Vec<f64>,
}

impl Workspace {
    fn new(model: &AutoencoderModel) -> Self {
        let acts = |ls: &[Dense]| {
            let mut v = vec![vec![0.0; ls[0].inputs]];
            v.extend(ls.iter().map(|l| vec![0.0; l.outputs]));
            v
        };
        let zs = |ls: &[Dense]| ls.iter().map(|l| vec![0.0; l.outputs]).collect();
        Workspace {
            enc_z: zs(&model.encoder),
            enc_a: acts(&model.encoder),
            dec_z: zs(&model.decoder),
            dec_a: acts(&model.decoder),
            delta: Vec::new(),
            next: Vec::new(),
        }
    }
}

impl AutoencoderModel {
    /// Backpropagates `delta` (gradient w.r.t. the network output) through
    /// `layers`, accumulating into `grads`, and leaves the gradient w.r.t. the
    /// network input in `ws.delta`.
    fn backprop(
        &self,
        encoder: bool,
        grads: &mut [Dense],
        ws: &mut Workspace,
    ) {
        let Workspace {
            enc_z,
            enc_a,
            dec_z,
            dec_a,
            delta,
            next,
        } = ws;
        let (layers, zs, acts) = if encoder {
            (&self.encoder, enc_z, enc_a)
        } else {
            (&self.decoder, dec_z, dec_a)
        };
        for li in (0..layers.len()).rev() {
            let l = &layers[li];
            let act = self.activation(li, encoder);
            // delta ← dL/dz
            for (d, (&z, &a)) in delta.iter_mut().zip(zs[li].iter().zip(&acts[li + 1])) {
                *d *= act.grad(z, a);
            }
            let g = &mut grads[li];
            let input = &acts[li];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] += d;
                for (gw, &x) in g.weights[o * l.inputs..(o + 1) * l.inputs]
                    .iter_mut()
                    .zip(input)
                {
                    *gw += d * x;
                }
            }
            next.clear();
            next.resize(l.inputs, 0.0);
            for (o, &d) in delta.iter().enumerate() {
                for (n, &w) in next.iter_mut().zip(&l.weights[o * l.inputs..(o + 1) * l.inputs]) {
                    *n += d * w;
                }
            }
            std::mem::swap(delta, next);
        }
    }

    /// Adds one sample's loss gradient to `grads`; returns its loss, or
    /// `None` (and adds nothing) when the reconstruction is degenerate.
    fn accumulate(
        &self,
        f: &PreprocessedFilter,
        grads: &mut Gradients,
        ws: &mut Workspace,
    ) -> Option<f64> {
        let code = self.run(&self.encoder, true, &f.reduced, &mut ws.enc_z, &mut ws.enc_a)[0];
        let out = self.run(&self.decoder, false, &[code], &mut ws.dec_z, &mut ws.dec_a);
        let y = self.basis.lift(out);
        let target = self.basis.lift(&f.reduced);
        let (l, gy) = mc_loss_and_grad(&y, &target)?;
        // full space → reduced coordinates (transpose of the lift)
        ws.delta = self.basis.project(&gy);
        self.backprop(false, &mut grads.decoder, ws);
        // ws.delta is now dL/dcode
        self.backprop(true, &mut grads.encoder, ws);
        Some(l)
    }
}

/// Exact gradient of [`loss`] w.r.t. every parameter.
pub fn gradients(model: &AutoencoderModel, batch: &[PreprocessedFilter]) -> Result<Gradients> {
    Ok(loss_and_gradients(model, batch)?.1)
}

pub fn loss_and_gradients(
    model: &AutoencoderModel,
    batch: &[PreprocessedFilter],
) -> Result<(LossValue, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Empty("gradient batch".into()));
    }
    for f in batch {
        model.check_input(&f.reduced)?;
    }
    let mut grads = Gradients::zeros_like(model);
    let mut ws = Workspace::new(model);
    let mut sum = 0.0;
    let mut degenerate = 0;
    for f in batch {
        match model.accumulate(f, &mut grads, &mut ws) {
            Some(l) => sum += l,
            None => {
                sum += 1.0;
                degenerate += 1;
            }
        }
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    Ok((
        LossValue {
            mean: sum / n,
            degenerate,
        },
        grads,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 256,
            learning_rate: 1e-3,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

/// Adam with β₁ = 0.9, β₂ = 0.999, ε = 1e−8.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, model: &mut AutoencoderModel, grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let mut i = 0;
        let layers = model.encoder.iter_mut().chain(model.decoder.iter_mut());
        let glayers = grads.encoder.iter().chain(&grads.decoder);
        for (l, gl) in layers.zip(glayers) {
            for (p, &g) in l
                .weights
                .iter_mut()
                .chain(l.bias.iter_mut())
                .zip(gl.weights.iter().chain(&gl.bias))
            {
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                let mh = self.m[i] / c1;
                let vh = self.v[i] / c2;
                *p -= self.lr * mh / (vh.sqrt() + self.eps);
                i += 1;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: AutoencoderModel,
    /// Mean training loss of each epoch, averaged over its batches.
    pub loss_history: Vec<f64>,
    /// Full-data loss of the model before the first update.
    pub initial_loss: f64,
    /// Corpus indices excluded because their centered norm vanished.
    pub excluded: Vec<usize>,
}

/// Preprocesses every record of `corpus`, splitting off degenerate ones.
pub fn preprocess_corpus(
    corpus: &Corpus,
    basis: &HyperplaneBasis,
) -> Result<(Vec<PreprocessedFilter>, Vec<usize>)> {
    let mut kept = Vec::with_capacity(corpus.len());
    let mut excluded = Vec::new();
    for (i, r) in corpus.records().iter().enumerate() {
        match PreprocessedFilter::from_raw(&r.weights_f64(), basis, i) {
            Ok(p) => kept.push(p),
            Err(Error::DegenerateFilter { .. }) => excluded.push(i),
            Err(e) => return Err(e),
        }
    }
    Ok((kept, excluded))
}

pub fn train(
    model: &AutoencoderModel,
    corpus: &Corpus,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if corpus.kernel_size() != model.kernel_size {
        return Err(Error::KernelSizeMismatch {
            expected: model.kernel_size,
            got: corpus.kernel_size(),
        });
    }
    let (data, excluded) = preprocess_corpus(corpus, &model.basis)?;
    let mut outcome = train_filters(model, &data, config)?;
    outcome.excluded = excluded;
    Ok(outcome)
}

/// Trains on already preprocessed filters.
pub fn train_filters(
    model: &AutoencoderModel,
    data: &[PreprocessedFilter],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let mut model = model.clone();
    let initial_loss = loss(&model, data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut adam = Adam::new(model.n_params(), config.learning_rate);
    let mut ws = Workspace::new(&model);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let mut grads = Gradients::zeros_like(&model);
            let mut sum = 0.0;
            for &i in chunk {
                sum += model.accumulate(&data[i], &mut grads, &mut ws).unwrap_or(1.0);
            }
            grads.scale(1.0 / chunk.len() as f64);
            adam.step(&mut model, &grads);
            epoch_loss += sum / chunk.len() as f64;
            batches += 1;
        }
        let mean = epoch_loss / batches as f64;
        log::debug!("epoch {epoch}: loss {mean:.6}");
        history.push(mean);
    }

    Ok(TrainOutcome {
        model,
        loss_history: history,
        initial_loss,
        excluded: Vec::new(),
    })
}

// --- persistence ------------------------------------------------------------

/// Serializes the model as `KAE1`:
///
/// ```text
/// magic "KAE1" | kernel_size u32 | h1 h2 h3 h4 u32 | leaky_slope f64 |
/// encoder layers, then decoder layers, each as weights (row-major,
/// outputs × inputs) followed by bias, all f64
/// ```
///
/// Everything is little-endian.
pub fn encode_model(model: &AutoencoderModel) -> Vec<u8> {
    let mut buf = Vec::with_capacity(32 + 8 * model.n_params());
    buf.extend_from_slice(&MODEL_MAGIC);
    buf.extend_from_slice(&model.kernel_size.to_le_bytes());
    for h in model.hidden {
        buf.extend_from_slice(&(h as u32).to_le_bytes());
    }
    buf.extend_from_slice(&model.leaky_slope.to_le_bytes());
    for l in model.encoder.iter().chain(&model.decoder) {
        for x in l.weights.iter().chain(&l.bias) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf
}

pub fn decode_model(bytes: &[u8]) -> Result<AutoencoderModel> {
    const HEADER: usize = 4 + 4 + 16 + 8;
    if bytes.len() < 4 || bytes[..4] != MODEL_MAGIC {
        let mut found = [0u8; 4];
        let n = bytes.len().min(4);
        found[..n].copy_from_slice(&bytes[..n]);
        return Err(Error::BadMagic {
            expected: MODEL_MAGIC,
            found,
        });
    }
    if bytes.len() < HEADER {
        return Err(Error::Truncated("model header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let kernel_size = u32_at(4);
    let hidden = [u32_at(8), u32_at(12), u32_at(16), u32_at(20)].map(|h| h as usize);
    let leaky_slope = f64::from_le_bytes(bytes[24..32].try_into().unwrap());
    let mut model = AutoencoderModel::build(kernel_size, hidden, leaky_slope, Dense::zeros)?;
    let payload = &bytes[HEADER..];
    let expected = 8 * model.n_params();
    if payload.len() < expected {
        return Err(Error::Truncated(format!(
            "model parameters: need {expected} bytes, found {}",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(Error::InvalidModel(format!(
            "dimension chain mismatch: {} parameter bytes for a chain needing {expected}",
            payload.len()
        )));
    }
    let mut vals = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for l in model.encoder.iter_mut().chain(model.decoder.iter_mut()) {
        for p in l.weights.iter_mut().chain(l.bias.iter_mut()) {
            *p = vals.next().unwrap();
            if !p.is_finite() {
                return Err(Error::InvalidModel("non-finite parameter".into()));
            }
        }
    }
    Ok(model)
}

pub fn save_model(model: &AutoencoderModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<AutoencoderModel> {
    decode_model(&fs::read(path)?)
}
