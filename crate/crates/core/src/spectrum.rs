//! Reconstruction spectrum of a trained decoder and the code-interval label
//! map derived from it.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autoencoder::AutoencoderModel;
use crate::dogfamily::{nearest_template, PatternClass, Template};
use crate::error::{Error, Result};

pub const DEFAULT_SPECTRUM_SAMPLES: usize = 500;

/// Samples whose nearest template is at least this dissimilar stay unlabeled.
pub const SUGGEST_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSample {
    pub code: f64,
    /// Decoded kernel in full k×k space, row-major.
    pub kernel: Vec<f64>,
    pub suggested: Option<(PatternClass, f64)>,
}

/// Decodes codes `i / (n − 1)`, `i = 0..n`.
pub fn sample_spectrum(model: &AutoencoderModel, n: usize) -> Result<Vec<SpectrumSample>> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!("spectrum needs n >= 2, got {n}")));
    }
    (0..n)
        .map(|i| {
            let code = i as f64 / (n - 1) as f64;
            Ok(SpectrumSample {
                code,
                kernel: model.decode_full(code)?,
                suggested: None,
            })
        })
        .collect()
}

/// Fills `suggested` with the nearest bank template of every sample. Samples
/// whose decoded kernel is degenerate keep `None`.
pub fn annotate(spectrum: &mut [SpectrumSample], bank: &[Template]) -> Result<()> {
    if bank.is_empty() {
        return Err(Error::Empty("template bank".into()));
    }
    for s in spectrum.iter_mut() {
        s.suggested = match nearest_template(&s.kernel, bank) {
            Ok(m) => Some((m.class, m.dissimilarity)),
            Err(Error::DegenerateFilter { .. }) => None,
            Err(e) => return Err(e),
        };
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelInterval {
    pub lo: f64,
    pub hi: f64,
    pub class: PatternClass,
}

/// Sorted, non-overlapping half-open code intervals `[lo, hi)`; an interval
/// ending at 1.0 also contains 1.0. Uncovered codes are `Other`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelMap {
    intervals: Vec<LabelInterval>,
}

impl LabelMap {
    pub fn new(intervals: Vec<LabelInterval>) -> Result<Self> {
        for (i, iv) in intervals.iter().enumerate() {
            if !(iv.lo.is_finite() && iv.hi.is_finite()) || iv.lo < 0.0 || iv.hi > 1.0 {
                return Err(Error::InvalidLabelMap(format!(
                    "interval {i} [{}, {}) leaves [0, 1]",
                    iv.lo, iv.hi
                )));
            }
            if iv.lo >= iv.hi {
                return Err(Error::InvalidLabelMap(format!(
                    "interval {i} has lo {} >= hi {}",
                    iv.lo, iv.hi
                )));
            }
        }
        for (i, w) in intervals.windows(2).enumerate() {
            if w[1].lo < w[0].lo {
                return Err(Error::InvalidLabelMap(format!(
                    "intervals {i} and {} are not sorted",
                    i + 1
                )));
            }
            if w[1].lo < w[0].hi {
                return Err(Error::InvalidLabelMap(format!(
                    "intervals {i} and {} overlap",
                    i + 1
                )));
            }
        }
        Ok(LabelMap { intervals })
    }

    pub fn intervals(&self) -> &[LabelInterval] {
        &self.intervals
    }

    pub fn lookup(&self, code: f64) -> PatternClass {
        let idx = self.intervals.partition_point(|iv| iv.lo <= code);
        if idx == 0 {
            return PatternClass::Other;
        }
        let iv = &self.intervals[idx - 1];
        if code < iv.hi || (code == 1.0 && iv.hi == 1.0) {
            iv.class
        } else {
            PatternClass::Other
        }
    }

    /// Fraction of [0, 1] covered by intervals of `class`.
    pub fn coverage(&self, class: PatternClass) -> f64 {
        self.intervals
            .iter()
            .filter(|iv| iv.class == class)
            .map(|iv| iv.hi - iv.lo)
            .sum()
    }
}

pub fn lookup(map: &LabelMap, code: f64) -> PatternClass {
    map.lookup(code)
}

/// Labels runs of consecutive samples that share a nearest-template class
/// below [`SUGGEST_THRESHOLD`]. Interval edges sit halfway between the first
/// or last sample of a run and its neighbour, or at 0 and 1 at the ends.
pub fn suggest_labels(spectrum: &[SpectrumSample], bank: &[Template]) -> Result<LabelMap> {
    let mut annotated = spectrum.to_vec();
    annotate(&mut annotated, bank)?;
    Ok(labels_from_annotated(&annotated))
}

fn labels_from_annotated(spectrum: &[SpectrumSample]) -> LabelMap {
    let label = |s: &SpectrumSample| match s.suggested {
        Some((c, d)) if d < SUGGEST_THRESHOLD => Some(c),
        _ => None,
    };
    let n = spectrum.len();
    let mut intervals = Vec::new();
    let mut i = 0;
    while i < n {
        let cls = label(&spectrum[i]);
        let mut j = i;
        while j + 1 < n && label(&spectrum[j + 1]) == cls {
            j += 1;
        }
        if let Some(class) = cls {
            let lo = if i == 0 {
                0.0
            } else {
                0.5 * (spectrum[i - 1].code + spectrum[i].code)
            };
            let hi = if j == n - 1 {
                1.0
            } else {
                0.5 * (spectrum[j].code + spectrum[j + 1].code)
            };
            intervals.push(LabelInterval { lo, hi, class });
        }
        i = j + 1;
    }
    LabelMap { intervals }
}

pub fn save_labelmap(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(&map.intervals)?;
    fs::write(path, json + "\n")?;
    Ok(())
}

pub fn parse_labelmap(json: &str) -> Result<LabelMap> {
    #[derive(Deserialize)]
    struct Raw {
        lo: f64,
        hi: f64,
        class: String,
    }
    let raw: Vec<Raw> = serde_json::from_str(json)?;
    let intervals = raw
        .into_iter()
        .map(|r| {
            Ok(LabelInterval {
                lo: r.lo,
                hi: r.hi,
                class: r.class.parse()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LabelMap::new(intervals)
}

pub fn load_labelmap(path: impl AsRef<Path>) -> Result<LabelMap> {
    parse_labelmap(&fs::read_to_string(path)?)
}

/// CSV with `code, w0..w(k²−1), suggested_class, dissimilarity`.
pub fn write_spectrum_csv<W: Write>(spectrum: &[SpectrumSample], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let n = spectrum.first().map_or(0, |s| s.kernel.len());
    let mut header = vec!["code".to_string()];
    header.extend((0..n).map(|j| format!("w{j}")));
    header.push("suggested_class".into());
    header.push("dissimilarity".into());
    wtr.write_record(&header)?;
    for s in spectrum {
        let mut row = vec![s.code.to_string()];
        row.extend(s.kernel.iter().map(|w| w.to_string()));
        match s.suggested {
            Some((c, d)) => {
                row.push(c.name().to_string());
                row.push(d.to_string());
            }
            None => {
                row.push(String::new());
                row.push(String::new());
            }
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::init_model;
    use crate::dogfamily::default_bank;
    use proptest::prelude::*;

    fn iv(lo: f64, hi: f64, class: PatternClass) -> LabelInterval {
        LabelInterval { lo, hi, class }
    }

    #[test]
    fn sample_codes() {
        let m = init_model(5, [20, 12, 6, 3], 1).unwrap();
        let s = sample_spectrum(&m, 2).unwrap();
        assert_eq!(s.iter().map(|x| x.code).collect::<Vec<_>>(), vec![0.0, 1.0]);
        let s = sample_spectrum(&m, 500).unwrap();
        assert_eq!(s.len(), 500);
        assert!((s[1].code - 1.0 / 499.0).abs() < 1e-16);
        assert!(s.iter().all(|x| x.kernel.len() == 25));
        assert!(s.iter().flat_map(|x| &x.kernel).all(|v| v.abs() < 1.0));
        assert!(sample_spectrum(&m, 1).is_err());
    }

    #[test]
    fn lookup_boundaries() {
        use PatternClass::*;
        let map = LabelMap::new(vec![iv(0.0, 0.5, OnCentre), iv(0.5, 1.0, OffCentre)]).unwrap();
        assert_eq!(map.lookup(0.5), OffCentre);
        assert_eq!(map.lookup(0.0), OnCentre);
        assert_eq!(map.lookup(1.0), OffCentre);
        let gappy = LabelMap::new(vec![iv(0.1, 0.2, OnDx), iv(0.6, 0.9, OffDx)]).unwrap();
        assert_eq!(gappy.lookup(0.4), Other);
        assert_eq!(gappy.lookup(0.05), Other);
        assert_eq!(gappy.lookup(0.9), Other);
        assert_eq!(gappy.lookup(1.0), Other);
    }

    #[test]
    fn validation() {
        use PatternClass::*;
        assert!(LabelMap::new(vec![iv(0.0, 0.6, OnCentre), iv(0.5, 1.0, OffCentre)]).is_err());
        assert!(LabelMap::new(vec![iv(0.5, 1.0, OnCentre), iv(0.0, 0.5, OffCentre)]).is_err());
        assert!(LabelMap::new(vec![iv(0.3, 0.3, OnCentre)]).is_err());
        assert!(LabelMap::new(vec![iv(0.3, 1.2, OnCentre)]).is_err());
    }

    #[test]
    fn json_round_trip_and_errors() {
        use PatternClass::*;
        let map = LabelMap::new(vec![iv(0.0, 0.25, OnDy), iv(0.3, 1.0, SquareOn)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.json");
        save_labelmap(&map, &p).unwrap();
        assert_eq!(load_labelmap(&p).unwrap(), map);

        let overlap = r#"[{"lo":0.0,"hi":0.6,"class":"OnCentre"},{"lo":0.5,"hi":1.0,"class":"OffCentre"}]"#;
        assert!(matches!(parse_labelmap(overlap), Err(Error::InvalidLabelMap(_))));
        let misspelt = r#"[{"lo":0.0,"hi":0.5,"class":"OnCenter"}]"#;
        assert!(matches!(parse_labelmap(misspelt), Err(Error::UnknownClass(_))));
    }

    #[test]
    fn suggestion_merges_runs() {
        use PatternClass::*;
        let mk = |code: f64, s: Option<(PatternClass, f64)>| SpectrumSample {
            code,
            kernel: vec![],
            suggested: s,
        };
        let spec = vec![
            mk(0.0, Some((OnCentre, 0.1))),
            mk(0.25, Some((OnCentre, 0.2))),
            mk(0.5, Some((OnCentre, 0.4))),
            mk(0.75, Some((OffDx, 0.05))),
            mk(1.0, Some((OffDx, 0.05))),
        ];
        let map = labels_from_annotated(&spec);
        assert_eq!(
            map.intervals(),
            &[iv(0.0, 0.375, OnCentre), iv(0.625, 1.0, OffDx)]
        );
        LabelMap::new(map.intervals().to_vec()).unwrap();
        let m = init_model(5, [20, 12, 6, 3], 1).unwrap();
        let s = sample_spectrum(&m, 10).unwrap();
        assert!(suggest_labels(&s, &[]).is_err());
        let bank = default_bank(5).unwrap();
        let map = suggest_labels(&s, &bank).unwrap();
        LabelMap::new(map.intervals().to_vec()).unwrap();
    }

    fn arb_map() -> impl Strategy<Value = LabelMap> {
        prop::collection::vec((0.0f64..1.0, 0usize..12, any::<bool>()), 0..12).prop_map(|cuts| {
            let mut pts: Vec<f64> = cuts.iter().map(|c| c.0).collect();
            pts.push(0.0);
            pts.push(1.0);
            pts.sort_by(f64::total_cmp);
            pts.dedup();
            let intervals = pts
                .windows(2)
                .zip(&cuts)
                .filter(|(_, c)| c.2)
                .map(|(w, c)| iv(w[0], w[1], PatternClass::ALL[c.1]))
                .collect();
            LabelMap::new(intervals).unwrap()
        })
    }

    proptest! {
        #[test]
        fn lookup_matches_linear_scan(map in arb_map(), code in 0.0f64..=1.0) {
            let linear = map
                .intervals()
                .iter()
                .find(|iv| (iv.lo <= code && code < iv.hi) || (code == 1.0 && iv.hi == 1.0))
                .map_or(PatternClass::Other, |iv| iv.class);
            prop_assert_eq!(map.lookup(code), linear);
        }
    }
}
