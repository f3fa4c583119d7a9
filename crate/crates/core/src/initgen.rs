//! DoG-family initialization kernels for depthwise layers.
//!
//! Each kernel draws a pattern group from the configured proportions, then a
//! random σ, variant and polarity within the group. Kernels are emitted raw
//! (not centered) and rescaled to the elementwise standard deviation of a
//! Kaiming-style initializer, `√(2 / k²)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{check_kernel_size, Corpus, FilterRecord};
use crate::dogfamily::{render_raw, Family, PatternClass, Polarity, TemplateSpec};
use crate::error::{Error, Result};

/// Coarse pattern groups used for initialization and synthetic proportions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    OnCentre = 0,
    OffCentre = 1,
    Cross = 2,
    FirstDerivative = 3,
    SecondDerivative = 4,
}

impl Group {
    pub const ALL: [Group; 5] = [
        Group::OnCentre,
        Group::OffCentre,
        Group::Cross,
        Group::FirstDerivative,
        Group::SecondDerivative,
    ];

    pub fn of(class: PatternClass) -> Option<Group> {
        use PatternClass::*;
        match class {
            OnCentre => Some(Group::OnCentre),
            OffCentre => Some(Group::OffCentre),
            OnCross | OffCross => Some(Group::Cross),
            OnDx | OffDx | OnDy | OffDy => Some(Group::FirstDerivative),
            OnSecond | OffSecond => Some(Group::SecondDerivative),
            SquareOn | SquareOff | Other => None,
        }
    }
}

/// Fractions per [`Group`], indexed in [`Group::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proportions(pub [f64; 5]);

impl Default for Proportions {
    /// 45% on-centre, 10% off-centre, 15% cross, 20% first derivative and
    /// the remaining 10% second derivatives.
    fn default() -> Self {
        Proportions([0.45, 0.10, 0.15, 0.20, 0.10])
    }
}

impl Proportions {
    pub fn get(&self, g: Group) -> f64 {
        self.0[g as usize]
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "proportions must be non-negative: {:?}",
                self.0
            )));
        }
        let sum: f64 = self.0.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("proportions sum to {sum}, not 1")));
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Group {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for g in Group::ALL {
            acc += self.get(g);
            if u < acc {
                return g;
            }
        }
        // u landed in the rounding gap at the top; take the last non-empty group
        *Group::ALL.iter().rev().find(|g| self.get(**g) > 0.0).unwrap()
    }
}

pub const CROSS_SIGMA_INIT: (f64, f64) = (0.4, 0.8);

#[derive(Debug, Clone, PartialEq)]
pub struct InitSpec {
    pub kernel_size: u32,
    /// Channel count of each depthwise layer, front to back.
    pub layer_channels: Vec<u32>,
    pub proportions: Proportions,
    pub sigma1_range: (f64, f64),
    pub sigma_ratio: f64,
    pub seed: u64,
    pub model_id: String,
}

impl InitSpec {
    pub fn new(kernel_size: u32, layer_channels: Vec<u32>, seed: u64) -> Self {
        InitSpec {
            kernel_size,
            layer_channels,
            proportions: Proportions::default(),
            sigma1_range: (0.5, 1.3),
            sigma_ratio: 2.0,
            seed,
            model_id: "dog-init".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_kernel_size(self.kernel_size)?;
        self.proportions.validate()?;
        let (lo, hi) = self.sigma1_range;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma1 range ({lo}, {hi}) must be positive with lo < hi"
            )));
        }
        if !(self.sigma_ratio > 1.0 && self.sigma_ratio.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma ratio {} must exceed 1",
                self.sigma_ratio
            )));
        }
        let k = self.kernel_size as f64;
        if hi * self.sigma_ratio > k {
            return Err(Error::InvalidConfig(format!(
                "outer sigma up to {} exceeds kernel size {k}",
                hi * self.sigma_ratio
            )));
        }
        Ok(())
    }
}

/// Draws one kernel spec from a per-kernel RNG stream.
fn draw_spec(spec: &InitSpec, rng: &mut ChaCha8Rng) -> TemplateSpec {
    let k = spec.kernel_size;
    let (lo, hi) = spec.sigma1_range;
    let s1 = rng.random_range(lo..hi);
    let s2 = s1 * spec.sigma_ratio;
    let polarity = |rng: &mut ChaCha8Rng| {
        if rng.random_bool(0.5) {
            Polarity::On
        } else {
            Polarity::Off
        }
    };
    match spec.proportions.sample(rng) {
        Group::OnCentre => TemplateSpec::new(Family::Dog, Polarity::On, s1, s2, k),
        Group::OffCentre => TemplateSpec::new(Family::Dog, Polarity::Off, s1, s2, k),
        Group::Cross => {
            let s = rng.random_range(CROSS_SIGMA_INIT.0..CROSS_SIGMA_INIT.1);
            let p = polarity(rng);
            TemplateSpec::new(Family::Cross, p, s, s, k)
        }
        Group::FirstDerivative => {
            let f = [Family::DogDx, Family::DogDy][rng.random_range(0..2)];
            let p = polarity(rng);
            TemplateSpec::new(f, p, s1, s2, k)
        }
        Group::SecondDerivative => {
            let f = [Family::DogDxx, Family::DogDyy, Family::DogDxy][rng.random_range(0..3)];
            let p = polarity(rng);
            TemplateSpec::new(f, p, s1, s2, k)
        }
    }
}

fn kernel_rng(seed: u64, layer: u32, channel: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((layer as u64) << 32) | channel as u64);
    rng
}

/// Rescales `v` to population standard deviation `target`.
fn rescale_std(v: &mut [f64], target: f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std > 0.0 {
        let s = target / std;
        v.iter_mut().for_each(|x| *x *= s);
    }
}

/// Generated corpus plus the spec each kernel was rendered from.
pub fn generate_init_with_specs(spec: &InitSpec) -> Result<(Corpus, Vec<TemplateSpec>)> {
    spec.validate()?;
    let k = spec.kernel_size;
    let target_std = (2.0 / (k * k) as f64).sqrt();
    let slots: Vec<(u32, u32)> = spec
        .layer_channels
        .iter()
        .enumerate()
        .flat_map(|(l, &c)| (0..c).map(move |ch| (l as u32, ch)))
        .collect();
    let drawn: Vec<(FilterRecord, TemplateSpec)> = slots
        .par_iter()
        .map(|&(layer, channel)| {
            let mut rng = kernel_rng(spec.seed, layer, channel);
            let ts = draw_spec(spec, &mut rng);
            let mut raw = render_raw(&ts)?;
            rescale_std(&mut raw, target_std);
            Ok((
                FilterRecord {
                    weights: raw.iter().map(|&x| x as f32).collect(),
                    model_id: spec.model_id.clone(),
                    layer_index: layer,
                    stage_index: 0,
                    channel_index: channel,
                    kernel_size: k,
                },
                ts,
            ))
        })
        .collect::<Result<_>>()?;
    let (records, specs): (Vec<_>, Vec<_>) = drawn.into_iter().unzip();
    Ok((Corpus::new(k, records)?, specs))
}

pub fn generate_init(spec: &InitSpec) -> Result<Corpus> {
    Ok(generate_init_with_specs(spec)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_proportions() {
        let p = Proportions::default();
        assert_eq!(p.0, [0.45, 0.10, 0.15, 0.20, 0.10]);
        p.validate().unwrap();
        assert!(Proportions([0.5, 0.5, 0.1, 0.0, 0.0]).validate().is_err());
        assert!(Proportions([1.2, -0.2, 0.0, 0.0, 0.0]).validate().is_err());
    }

    #[test]
    fn class_fractions_converge() {
        let spec = InitSpec::new(7, vec![2500; 4], 123);
        let (corpus, specs) = generate_init_with_specs(&spec).unwrap();
        assert_eq!(corpus.len(), 10_000);
        let mut counts = [0usize; 5];
        for s in &specs {
            counts[Group::of(s.class()).unwrap() as usize] += 1;
        }
        for (g, &c) in Group::ALL.iter().zip(&counts) {
            let frac = c as f64 / 10_000.0;
            assert!(
                (frac - spec.proportions.get(*g)).abs() <= 0.015,
                "{g:?}: {frac}"
            );
        }
    }

    #[test]
    fn deterministic_and_scaled() {
        let spec = InitSpec::new(5, vec![16, 8], 7);
        let a = generate_init(&spec).unwrap();
        assert_eq!(a, generate_init(&spec).unwrap());
        let target = (2.0f64 / 25.0).sqrt();
        for r in a.records() {
            let v = r.weights_f64();
            let m = v.iter().sum::<f64>() / 25.0;
            let std = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 25.0).sqrt();
            assert!((std - target).abs() < 1e-6);
        }
        assert_eq!(a.manifest()["dog-init"][&1], 8);
    }

    #[test]
    fn invalid_specs() {
        let mut spec = InitSpec::new(7, vec![4], 1);
        spec.sigma1_range = (1.0, 0.5);
        assert!(generate_init(&spec).is_err());
        let mut spec = InitSpec::new(3, vec![4], 1);
        spec.sigma_ratio = 3.0;
        assert!(generate_init(&spec).is_err());
        assert!(generate_init(&InitSpec::new(6, vec![4], 1)).is_err());
    }
}
