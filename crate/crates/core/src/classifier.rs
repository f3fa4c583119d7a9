//! Codebook classification of preprocessed filters, and the k-means path used
//! for 3×3 kernels.
//!
//! A codebook decodes uniformly spaced codes into preprocessed kernels. A
//! filter takes the code of its least dissimilar codebook kernel and, when that
//! dissimilarity is under the threshold, the label-map class of the code.

use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::autoencoder::{encode_model, preprocess_corpus, AutoencoderModel};
use crate::corpus::Corpus;
use crate::dogfamily::{nearest_template, PatternClass, Template};
use crate::error::{Error, Result};
use crate::geometry::{center, dot, normalize, HyperplaneBasis, PreprocessedFilter};
use crate::spectrum::LabelMap;

pub const DEFAULT_CODEBOOK_SIZE: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    kernel_size: u32,
    codes: Vec<f64>,
    /// Row-major `codes.len() × k²`, each row centered and unit-norm.
    kernels: Vec<f64>,
    model_ref: String,
    dropped: usize,
}

impl Codebook {
    pub fn kernel_size(&self) -> u32 {
        self.kernel_size
    }

    pub fn codes(&self) -> &[f64] {
        &self.codes
    }

    pub fn kernel(&self, i: usize) -> &[f64] {
        let n = self.dim();
        &self.kernels[i * n..(i + 1) * n]
    }

    pub fn dim(&self) -> usize {
        (self.kernel_size * self.kernel_size) as usize
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Short digest of the generating model's parameters.
    pub fn model_ref(&self) -> &str {
        &self.model_ref
    }

    /// Codes whose decoded kernel was degenerate and got dropped.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    /// Index and dissimilarity of the closest kernel; ties go to the
    /// smallest code. `full` must be centered and unit-norm, in which case
    /// `1 − ⟨full, kernel⟩` equals the mean-centered cosine dissimilarity.
    pub fn nearest(&self, full: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, k) in self.kernels.chunks_exact(self.dim()).enumerate() {
            let d = 1.0 - dot(full, k);
            if d < best.1 {
                best = (i, d);
            }
        }
        (best.0, best.1.clamp(0.0, 2.0))
    }
}

pub fn model_digest(model: &AutoencoderModel) -> String {
    let digest = Sha256::digest(encode_model(model));
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Decodes codes `i / (n_codes − 1)` into preprocessed kernels, dropping
/// degenerate ones.
pub fn build_codebook(model: &AutoencoderModel, n_codes: usize) -> Result<Codebook> {
    if n_codes < 2 {
        return Err(Error::InvalidConfig(format!(
            "codebook needs at least 2 codes, got {n_codes}"
        )));
    }
    let mut codes = Vec::with_capacity(n_codes);
    let mut kernels = Vec::with_capacity(n_codes * model.basis().dim());
    let mut dropped = 0;
    for i in 0..n_codes {
        let code = i as f64 / (n_codes - 1) as f64;
        match normalize(&center(&model.decode_full(code)?)) {
            Ok(k) => {
                codes.push(code);
                kernels.extend_from_slice(&k);
            }
            Err(Error::DegenerateFilter { .. }) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    if codes.is_empty() {
        return Err(Error::InvalidModel("every decoded codebook kernel is degenerate".into()));
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} degenerate codebook entries");
    }
    Ok(Codebook {
        kernel_size: model.kernel_size(),
        codes,
        kernels,
        model_ref: model_digest(model),
        dropped,
    })
}

/// 0.3 for 7×7, 0.2 for 5×5 and, with a logged notice, 0.2 for every other
/// size.
pub fn default_threshold(kernel_size: u32) -> f64 {
    match kernel_size {
        7 => 0.3,
        5 => 0.2,
        k => {
            log::warn!("no published threshold for {k}x{k} kernels; using the stricter 0.2");
            0.2
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reason {
    /// Below threshold, code inside a labelled interval.
    Matched,
    /// Minimum dissimilarity not below the threshold.
    AboveThreshold,
    /// Below threshold, but the matched code falls in a label-map gap.
    Unlabeled,
    /// Centered norm vanished; the filter has no direction to compare.
    Degenerate,
}

impl Reason {
    pub fn name(self) -> &'static str {
        match self {
            Reason::Matched => "matched",
            Reason::AboveThreshold => "above_threshold",
            Reason::Unlabeled => "unlabeled",
            Reason::Degenerate => "degenerate",
        }
    }
}

impl FromStr for Reason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matched" => Ok(Reason::Matched),
            "above_threshold" => Ok(Reason::AboveThreshold),
            "unlabeled" => Ok(Reason::Unlabeled),
            "degenerate" => Ok(Reason::Degenerate),
            other => Err(Error::Csv(format!("unknown reason {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub source_index: usize,
    /// Set when the minimum dissimilarity passed the threshold.
    pub matched_code: Option<f64>,
    pub class: PatternClass,
    pub dissimilarity: f64,
    pub reason: Reason,
}

impl Assignment {
    pub fn degenerate(source_index: usize) -> Self {
        Assignment {
            source_index,
            matched_code: None,
            class: PatternClass::Other,
            dissimilarity: 1.0,
            reason: Reason::Degenerate,
        }
    }

    pub fn is_clustered(&self) -> bool {
        self.class != PatternClass::Other
    }
}

pub fn classify_filter(
    filter: &PreprocessedFilter,
    codebook: &Codebook,
    labelmap: &LabelMap,
    threshold: f64,
) -> Result<Assignment> {
    if filter.full.len() != codebook.dim() {
        return Err(Error::KernelSizeMismatch {
            expected: codebook.kernel_size,
            got: filter.kernel_size(),
        });
    }
    let (idx, d) = codebook.nearest(&filter.full);
    let mut a = Assignment {
        source_index: filter.source_index,
        matched_code: None,
        class: PatternClass::Other,
        dissimilarity: d,
        reason: Reason::AboveThreshold,
    };
    if d < threshold {
        let code = codebook.codes[idx];
        a.matched_code = Some(code);
        a.class = labelmap.lookup(code);
        a.reason = if a.class == PatternClass::Other {
            Reason::Unlabeled
        } else {
            Reason::Matched
        };
    }
    Ok(a)
}

/// One assignment per record, in corpus order. `jobs` sets the worker count;
/// results are identical for every value.
pub fn classify_corpus(
    corpus: &Corpus,
    codebook: &Codebook,
    labelmap: &LabelMap,
    threshold: f64,
    jobs: usize,
) -> Result<Vec<Assignment>> {
    if corpus.kernel_size() != codebook.kernel_size {
        return Err(Error::KernelSizeMismatch {
            expected: codebook.kernel_size,
            got: corpus.kernel_size(),
        });
    }
    let basis = HyperplaneBasis::new(codebook.dim())?;
    let one = |(i, r): (usize, &crate::corpus::FilterRecord)| -> Result<Assignment> {
        match PreprocessedFilter::from_raw(&r.weights_f64(), &basis, i) {
            Ok(f) => classify_filter(&f, codebook, labelmap, threshold),
            Err(Error::DegenerateFilter { .. }) => Ok(Assignment::degenerate(i)),
            Err(e) => Err(e),
        }
    };
    if jobs <= 1 {
        return corpus.records().iter().enumerate().map(one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| corpus.records().par_iter().enumerate().map(one).collect())
}

/// Classifies already preprocessed filters; handy when the caller kept them.
pub fn classify_filters(
    filters: &[PreprocessedFilter],
    codebook: &Codebook,
    labelmap: &LabelMap,
    threshold: f64,
) -> Result<Vec<Assignment>> {
    filters
        .iter()
        .map(|f| classify_filter(f, codebook, labelmap, threshold))
        .collect()
}

pub const ASSIGNMENT_COLUMNS: [&str; 8] = [
    "source_index",
    "model_id",
    "layer_index",
    "channel_index",
    "class",
    "matched_code",
    "dissimilarity",
    "reason",
];

pub fn write_assignments_csv<W: Write>(
    corpus: &Corpus,
    assignments: &[Assignment],
    writer: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(ASSIGNMENT_COLUMNS)?;
    for a in assignments {
        let r = corpus.records().get(a.source_index).ok_or(Error::Misaligned {
            left: a.source_index,
            right: corpus.len(),
        })?;
        wtr.write_record([
            a.source_index.to_string(),
            r.model_id.clone(),
            r.layer_index.to_string(),
            r.channel_index.to_string(),
            a.class.name().to_string(),
            a.matched_code.map_or(String::new(), |c| c.to_string()),
            a.dissimilarity.to_string(),
            a.reason.name().to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_assignments_csv<R: Read>(reader: R) -> Result<Vec<Assignment>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ASSIGNMENT_COLUMNS {
        return Err(Error::Csv(format!("unexpected assignment header {header:?}")));
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |col: &str| Error::Csv(format!("row {row}: bad {col}"));
        let matched = &rec[5];
        out.push(Assignment {
            source_index: rec[0].parse().map_err(|_| bad("source_index"))?,
            class: rec[4].parse()?,
            matched_code: if matched.is_empty() {
                None
            } else {
                Some(matched.parse().map_err(|_| bad("matched_code"))?)
            },
            dissimilarity: rec[6].parse().map_err(|_| bad("dissimilarity"))?,
            reason: rec[7].parse()?,
        });
    }
    Ok(out)
}

// --- k-means ----------------------------------------------------------------

/// `(v − min) / (max − min)` elementwise.
pub fn minmax_encode(filter: &[f64]) -> Result<Vec<f64>> {
    let lo = filter.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = filter.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo || hi.is_nan() || lo.is_nan() {
        return Err(Error::ConstantFilter);
    }
    let span = hi - lo;
    Ok(filter.iter().map(|v| (v - lo) / span).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k_clusters: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub n_restarts: usize,
}

impl KMeansConfig {
    pub fn new(seed: u64) -> Self {
        KMeansConfig {
            k_clusters: 10,
            seed,
            max_iter: 300,
            n_restarts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step of the winning restart.
    pub inertia_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![data[rng.random_range(0..data.len())].clone()];
    let mut d2: Vec<f64> = data.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            d2.iter()
                .position(|&d| {
                    acc += d;
                    acc > target
                })
                .unwrap_or(data.len() - 1)
        } else {
            rng.random_range(0..data.len())
        };
        let c = data[pick].clone();
        for (d, p) in d2.iter_mut().zip(data) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Assigns each point to its nearest centroid (lowest index on ties) and
/// returns the inertia.
fn assign(data: &[Vec<f64>], centroids: &[Vec<f64>], labels: &mut [usize], dists: &mut [f64]) -> f64 {
    let mut inertia = 0.0;
    for ((p, l), dist) in data.iter().zip(labels.iter_mut()).zip(dists.iter_mut()) {
        let mut best = (0, f64::INFINITY);
        for (ci, c) in centroids.iter().enumerate() {
            let d = sq_dist(p, c);
            if d < best.1 {
                best = (ci, d);
            }
        }
        *l = best.0;
        *dist = best.1;
        inertia += best.1;
    }
    inertia
}

fn lloyd(
    data: &[Vec<f64>],
    mut centroids: Vec<Vec<f64>>,
    max_iter: usize,
) -> KMeansResult {
    let k = centroids.len();
    let dim = data[0].len();
    let mut labels = vec![usize::MAX; data.len()];
    let mut next = vec![0; data.len()];
    let mut dists = vec![0.0; data.len()];
    let mut history = Vec::new();
    for _ in 0..max_iter.max(1) {
        let inertia = assign(data, &centroids, &mut next, &mut dists);
        history.push(inertia);
        if next == labels {
            break;
        }
        labels.copy_from_slice(&next);

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in data.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for (ci, (s, &n)) in sums.into_iter().zip(&counts).enumerate() {
            if n > 0 {
                centroids[ci] = s.into_iter().map(|x| x / n as f64).collect();
            } else {
                // Re-seed from the point currently farthest from its centroid.
                let far = dists
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (i, &d)| if d > b.1 { (i, d) } else { b })
                    .0;
                centroids[ci] = data[far].clone();
                dists[far] = 0.0;
            }
        }
    }
    let inertia = *history.last().unwrap();
    if labels[0] == usize::MAX || labels != next {
        labels = next;
    }
    KMeansResult {
        centroids,
        labels,
        inertia,
        inertia_history: history,
    }
}

/// Lloyd's algorithm from k-means++ seeds; the lowest-inertia result over
/// `n_restarts` wins, earliest restart on ties.
pub fn kmeans_fit(data: &[Vec<f64>], config: &KMeansConfig) -> Result<KMeansResult> {
    let k = config.k_clusters;
    if k == 0 {
        return Err(Error::InvalidConfig("k_clusters must be positive".into()));
    }
    if data.len() < k {
        return Err(Error::InvalidConfig(format!(
            "{} filters cannot form {k} clusters",
            data.len()
        )));
    }
    let dim = data[0].len();
    if data.iter().any(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: data.iter().find(|p| p.len() != dim).unwrap().len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..config.n_restarts.max(1) {
        let seeds = kmeans_pp(data, k, &mut rng);
        let run = lloyd(data, seeds, config.max_iter);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

/// Min-max encodes every record; constant kernels are skipped and their
/// corpus indices returned separately.
pub fn minmax_corpus(corpus: &Corpus) -> (Vec<Vec<f64>>, Vec<usize>, Vec<usize>) {
    let mut data = Vec::new();
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for (i, r) in corpus.records().iter().enumerate() {
        match minmax_encode(&r.weights_f64()) {
            Ok(v) => {
                data.push(v);
                kept.push(i);
            }
            Err(_) => skipped.push(i),
        }
    }
    (data, kept, skipped)
}

/// Names each centroid by its nearest template after centering; centroids
/// with no direction are `Other`.
pub fn label_centroids(result: &KMeansResult, bank: &[Template]) -> Result<Vec<PatternClass>> {
    result
        .centroids
        .iter()
        .map(|c| match nearest_template(c, bank) {
            Ok(m) => Ok(m.class),
            Err(Error::DegenerateFilter { .. }) => Ok(PatternClass::Other),
            Err(e) => Err(e),
        })
        .collect()
}

/// Preprocesses and classifies in one go, keeping degenerate filters as
/// `Other`. Convenience wrapper over [`classify_filter`].
pub fn classify_corpus_preprocessed(
    corpus: &Corpus,
    codebook: &Codebook,
    labelmap: &LabelMap,
    threshold: f64,
) -> Result<Vec<Assignment>> {
    let basis = HyperplaneBasis::new(codebook.dim())?;
    let (filters, excluded) = preprocess_corpus(corpus, &basis)?;
    let mut out: Vec<Assignment> = classify_filters(&filters, codebook, labelmap, threshold)?;
    out.extend(excluded.into_iter().map(Assignment::degenerate));
    out.sort_by_key(|a| a.source_index);
    Ok(out)
}
