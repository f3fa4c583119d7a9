//! Labelled synthetic corpora drawn from the template bank with additive
//! Gaussian noise. Used by the acceptance suite and for controlled runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{Corpus, FilterRecord};
use crate::dogfamily::{PatternClass, Template};
use crate::error::{Error, Result};
use crate::geometry::{center, normalize};
use crate::initgen::{Group, Proportions};

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub n_filters: usize,
    pub proportions: Proportions,
    /// Signal-to-noise power ratio `‖s‖² / E‖η‖²`; `None` draws clean
    /// templates.
    pub snr: Option<f64>,
    /// Records are spread over this many layers in contiguous blocks.
    pub layers: u32,
    pub model_id: String,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_filters: 10_000,
            proportions: Proportions::default(),
            snr: Some(10.0),
            layers: 1,
            model_id: "synthetic".into(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    /// Preprocessed (centered, unit-norm) noisy filters stored as f32.
    pub corpus: Corpus,
    /// Generating class of each record.
    pub classes: Vec<PatternClass>,
    /// Bank index of each record's clean template.
    pub template_index: Vec<usize>,
}

/// Draws `n_filters` templates, grouped by [`Group`] with the configured
/// proportions and uniform within a group, and perturbs each with i.i.d.
/// Gaussian noise of per-entry variance `1 / (snr · k²)`.
pub fn generate(bank: &[Template], config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    config.proportions.validate()?;
    let first = bank
        .first()
        .ok_or_else(|| Error::Empty("template bank".into()))?;
    let k = first.spec.size;
    let n = (k * k) as usize;
    let members: Vec<Vec<usize>> = Group::ALL
        .iter()
        .map(|g| {
            bank.iter()
                .enumerate()
                .filter(|(_, t)| Group::of(t.class) == Some(*g))
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    for (g, m) in Group::ALL.iter().zip(&members) {
        if m.is_empty() && config.proportions.get(*g) > 0.0 {
            return Err(Error::InvalidConfig(format!("bank has no templates for {g:?}")));
        }
    }
    let noise = match config.snr {
        Some(snr) if snr > 0.0 && snr.is_finite() => {
            Some(Normal::new(0.0, (1.0 / (snr * n as f64)).sqrt()).unwrap())
        }
        Some(snr) => return Err(Error::InvalidConfig(format!("snr must be positive, got {snr}"))),
        None => None,
    };
    let layers = config.layers.max(1) as usize;
    let per_layer = config.n_filters.div_ceil(layers).max(1);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::with_capacity(config.n_filters);
    let mut classes = Vec::with_capacity(config.n_filters);
    let mut template_index = Vec::with_capacity(config.n_filters);
    while records.len() < config.n_filters {
        let g = config.proportions.sample(&mut rng);
        let m = &members[g as usize];
        let ti = m[rng.random_range(0..m.len())];
        let mut v = bank[ti].kernel.clone();
        if let Some(dist) = &noise {
            for x in v.iter_mut() {
                *x += dist.sample(&mut rng);
            }
        }
        let v = match normalize(&center(&v)) {
            Ok(v) => v,
            // vanishingly unlikely at any sane SNR; redraw
            Err(Error::DegenerateFilter { .. }) => continue,
            Err(e) => return Err(e),
        };
        let i = records.len();
        records.push(FilterRecord {
            weights: v.iter().map(|&x| x as f32).collect(),
            model_id: config.model_id.clone(),
            layer_index: (i / per_layer) as u32,
            stage_index: 0,
            channel_index: (i % per_layer) as u32,
            kernel_size: k,
        });
        classes.push(bank[ti].class);
        template_index.push(ti);
    }
    Ok(SyntheticCorpus {
        corpus: Corpus::new(k, records)?,
        classes,
        template_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dogfamily::{default_bank, nearest_template};

    #[test]
    fn clean_draws_reproduce_templates() {
        let bank = default_bank(7).unwrap();
        let cfg = SyntheticConfig {
            n_filters: 200,
            snr: None,
            seed: 4,
            ..SyntheticConfig::default()
        };
        let s = generate(&bank, &cfg).unwrap();
        for (r, &ti) in s.corpus.records().iter().zip(&s.template_index) {
            let m = nearest_template(&r.weights_f64(), &bank).unwrap();
            assert_eq!(m.class, bank[ti].class);
            assert!(m.dissimilarity < 1e-6);
        }
    }

    #[test]
    fn noisy_draws_keep_their_class() {
        let bank = default_bank(7).unwrap();
        let cfg = SyntheticConfig {
            n_filters: 500,
            seed: 5,
            ..SyntheticConfig::default()
        };
        let s = generate(&bank, &cfg).unwrap();
        let agree = s
            .corpus
            .records()
            .iter()
            .zip(&s.classes)
            .filter(|(r, c)| nearest_template(&r.weights_f64(), &bank).unwrap().class == **c)
            .count();
        assert!(agree >= 490, "{agree}");
        assert_eq!(s.corpus.layer_indices(), vec![0]);
    }

    #[test]
    fn deterministic() {
        let bank = default_bank(5).unwrap();
        let cfg = SyntheticConfig {
            n_filters: 50,
            layers: 5,
            seed: 9,
            ..SyntheticConfig::default()
        };
        let a = generate(&bank, &cfg).unwrap();
        let b = generate(&bank, &cfg).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.corpus.layer_indices(), vec![0, 1, 2, 3, 4]);
    }
}
