//! Aggregate statistics over classified corpora: per-layer proportions,
//! clustered percentages, total-activation box statistics, PCA embeddings,
//! merged labels and snapshot timelines.
//!
//! Every table keeps `Other` and degenerate filters so rows partition the
//! input exactly; emitters can drop `Other` for plots that exclude it.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::classifier::{Assignment, Reason};
use crate::corpus::Corpus;
use crate::dogfamily::PatternClass;
use crate::error::{Error, Result};

/// A table column: a pattern class, or the filters with no direction at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Bucket {
    Class(PatternClass),
    Degenerate,
}

impl Bucket {
    pub fn of(a: &Assignment) -> Bucket {
        if a.reason == Reason::Degenerate {
            Bucket::Degenerate
        } else {
            Bucket::Class(a.class)
        }
    }

    /// Every bucket in table order.
    pub fn all() -> Vec<Bucket> {
        PatternClass::ALL
            .iter()
            .map(|&c| Bucket::Class(c))
            .chain([Bucket::Degenerate])
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Bucket::Class(c) => c.name(),
            Bucket::Degenerate => "Degenerate",
        }
    }

    pub fn is_clustered(self) -> bool {
        matches!(self, Bucket::Class(c) if c != PatternClass::Other)
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Assignments must be in corpus order with matching source indices.
pub fn check_aligned(corpus: &Corpus, assignments: &[Assignment]) -> Result<()> {
    if assignments.len() != corpus.len() {
        return Err(Error::Misaligned {
            left: assignments.len(),
            right: corpus.len(),
        });
    }
    match assignments.iter().enumerate().find(|(i, a)| a.source_index != *i) {
        Some((i, a)) => Err(Error::Misaligned {
            left: a.source_index,
            right: i,
        }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProportionRow {
    pub layer_index: u32,
    pub bucket: Bucket,
    pub count: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProportionTable {
    /// One row per (layer, bucket), layers ascending, buckets in
    /// [`Bucket::all`] order, zero counts included.
    pub rows: Vec<ProportionRow>,
    pub layer_totals: BTreeMap<u32, usize>,
}

impl ProportionTable {
    pub fn layer(&self, layer: u32) -> impl Iterator<Item = &ProportionRow> {
        self.rows.iter().filter(move |r| r.layer_index == layer)
    }

    pub fn fraction(&self, layer: u32, bucket: Bucket) -> f64 {
        self.layer(layer)
            .find(|r| r.bucket == bucket)
            .map_or(0.0, |r| r.fraction)
    }
}

fn bucket_counts<'a>(assignments: impl Iterator<Item = &'a Assignment>) -> BTreeMap<Bucket, usize> {
    let mut counts: BTreeMap<Bucket, usize> = Bucket::all().into_iter().map(|b| (b, 0)).collect();
    for a in assignments {
        *counts.get_mut(&Bucket::of(a)).unwrap() += 1;
    }
    counts
}

pub fn layer_proportions(corpus: &Corpus, assignments: &[Assignment]) -> Result<ProportionTable> {
    check_aligned(corpus, assignments)?;
    let mut by_layer: BTreeMap<u32, Vec<&Assignment>> = BTreeMap::new();
    for (r, a) in corpus.records().iter().zip(assignments) {
        by_layer.entry(r.layer_index).or_default().push(a);
    }
    let mut rows = Vec::new();
    let mut layer_totals = BTreeMap::new();
    for (layer, members) in by_layer {
        let total = members.len();
        layer_totals.insert(layer, total);
        for (bucket, count) in bucket_counts(members.into_iter()) {
            rows.push(ProportionRow {
                layer_index: layer,
                bucket,
                count,
                fraction: count as f64 / total as f64,
            });
        }
    }
    Ok(ProportionTable { rows, layer_totals })
}

/// Fraction of every bucket over the whole set, in [`Bucket::all`] order.
pub fn overall_proportions(assignments: &[Assignment]) -> Result<BTreeMap<Bucket, f64>> {
    if assignments.is_empty() {
        return Err(Error::Empty("assignments".into()));
    }
    let n = assignments.len() as f64;
    Ok(bucket_counts(assignments.iter())
        .into_iter()
        .map(|(b, c)| (b, c as f64 / n))
        .collect())
}

/// `100 · clustered / total`, where clustered excludes `Other` and
/// degenerate filters.
pub fn clustered_percentage(assignments: &[Assignment]) -> Result<f64> {
    if assignments.is_empty() {
        return Err(Error::Empty("assignments".into()));
    }
    let clustered = assignments
        .iter()
        .filter(|a| Bucket::of(a).is_clustered())
        .count();
    Ok(100.0 * clustered as f64 / assignments.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSummary {
    pub model_id: String,
    pub filters: usize,
    pub clustered_percentage: f64,
}

/// One clustered-percentage line per model, in model-id order.
pub fn summarize_models(corpus: &Corpus, assignments: &[Assignment]) -> Result<Vec<ModelSummary>> {
    check_aligned(corpus, assignments)?;
    let mut by_model: BTreeMap<&str, Vec<Assignment>> = BTreeMap::new();
    for (r, a) in corpus.records().iter().zip(assignments) {
        by_model.entry(&r.model_id).or_default().push(a.clone());
    }
    by_model
        .into_iter()
        .map(|(m, a)| {
            Ok(ModelSummary {
                model_id: m.to_string(),
                filters: a.len(),
                clustered_percentage: clustered_percentage(&a)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

/// Linear-interpolation quantile of ascending data: position `p · (n − 1)`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Result<BoxStats> {
        if values.is_empty() {
            return Err(Error::Empty("box statistics input".into()));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Ok(BoxStats {
            count: v.len(),
            min: v[0],
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
            mean: values.iter().sum::<f64>() / v.len() as f64,
        })
    }
}

/// Box statistics of total activation (sum of raw weights) per bucket.
/// Buckets with no filters are absent.
pub type ActivationStats = BTreeMap<Bucket, BoxStats>;

pub fn activation_stats(corpus: &Corpus, assignments: &[Assignment]) -> Result<ActivationStats> {
    check_aligned(corpus, assignments)?;
    let mut totals: BTreeMap<Bucket, Vec<f64>> = BTreeMap::new();
    for (r, a) in corpus.records().iter().zip(assignments) {
        totals.entry(Bucket::of(a)).or_default().push(r.total_activation());
    }
    totals
        .into_iter()
        .map(|(b, v)| Ok((b, BoxStats::from_values(&v)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    /// Feature means removed before projection.
    pub mean: Vec<f64>,
    /// Unit principal axes, descending eigenvalue.
    pub components: Vec<Vec<f64>>,
    pub explained_ratio: Vec<f64>,
    /// One row per input, one column per component.
    pub embeddings: Vec<Vec<f64>>,
}

/// Eigenvalues at or below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-12;

/// PCA by eigendecomposition of the sample covariance. Each axis is signed
/// so its largest-magnitude loading is positive (first such on ties). When
/// the data has rank below `n_components`, only the non-null components are
/// returned.
pub fn pca_embed(data: &[Vec<f64>], n_components: usize) -> Result<PcaResult> {
    if n_components == 0 {
        return Err(Error::InvalidConfig("n_components must be positive".into()));
    }
    if data.len() < n_components + 1 {
        return Err(Error::InvalidConfig(format!(
            "PCA with {n_components} components needs at least {} filters, got {}",
            n_components + 1,
            data.len()
        )));
    }
    let d = data[0].len();
    if let Some(bad) = data.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    if n_components > d {
        return Err(Error::InvalidConfig(format!(
            "{n_components} components exceed dimension {d}"
        )));
    }
    let n = data.len();
    let mut mean = vec![0.0; d];
    for row in data {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let x = DMatrix::from_fn(n, d, |i, j| data[i][j] - mean[j]);
    let cov = (x.transpose() * &x) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = vals.iter().sum();
    let top = vals[0];
    let rank = vals.iter().filter(|&&v| top > 0.0 && v > RANK_TOL * top).count();
    let kept = n_components.min(rank);
    if kept < n_components {
        log::warn!("data has rank {rank}; returning {kept} of {n_components} components");
    }

    let mut components = Vec::with_capacity(kept);
    for &i in order.iter().take(kept) {
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        let lead = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |b, (j, x)| if x.abs() > b.1.abs() { (j, *x) } else { b });
        if lead.1 < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
    }
    let explained_ratio = vals[..kept].iter().map(|v| v / total).collect();
    let embeddings = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|c| c.iter().zip(x.row(i).iter()).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    Ok(PcaResult {
        mean,
        components,
        explained_ratio,
        embeddings,
    })
}

/// PCA of the corpus' raw vectorized kernels.
pub fn pca_corpus(corpus: &Corpus, n_components: usize) -> Result<PcaResult> {
    let data: Vec<Vec<f64>> = corpus.records().iter().map(|r| r.weights_f64()).collect();
    pca_embed(&data, n_components)
}

pub type Merges = BTreeMap<PatternClass, PatternClass>;

/// The pairing used for the on/off balance analysis.
pub fn centre_cross_merges() -> Merges {
    Merges::from([
        (PatternClass::OnCross, PatternClass::OnCentre),
        (PatternClass::OffCross, PatternClass::OffCentre),
    ])
}

/// Relabels a copy; unmapped classes are kept. Merges touching `Other` are
/// rejected because they would change which filters count as clustered.
pub fn merge_labels(assignments: &[Assignment], merges: &Merges) -> Result<Vec<Assignment>> {
    if let Some((from, to)) = merges
        .iter()
        .find(|(f, t)| **f == PatternClass::Other || **t == PatternClass::Other)
    {
        return Err(Error::InvalidConfig(format!(
            "merge {from} -> {to} involves other"
        )));
    }
    Ok(assignments
        .iter()
        .map(|a| {
            let mut a = a.clone();
            if let Some(&to) = merges.get(&a.class) {
                a.class = to;
            }
            a
        })
        .collect())
}

/// Parses `from=to` pairs separated by commas, e.g.
/// `OnCross=OnCentre,OffCross=OffCentre`.
pub fn parse_merges(s: &str) -> Result<Merges> {
    let mut out = Merges::new();
    for pair in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (from, to) = pair
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("merge {pair:?} is not from=to")))?;
        out.insert(from.trim().parse()?, to.trim().parse()?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimelineRow {
    pub tag: String,
    pub filters: usize,
    pub clustered_percentage: f64,
    pub proportions: BTreeMap<Bucket, f64>,
}

/// One row per snapshot, in input order.
pub fn timeline(snapshots: &[(String, Vec<Assignment>)]) -> Result<Vec<TimelineRow>> {
    if snapshots.is_empty() {
        return Err(Error::Empty("timeline snapshots".into()));
    }
    snapshots
        .iter()
        .map(|(tag, a)| {
            Ok(TimelineRow {
                tag: tag.clone(),
                filters: a.len(),
                clustered_percentage: clustered_percentage(a)?,
                proportions: overall_proportions(a)?,
            })
        })
        .collect()
}

// --- emitters ---------------------------------------------------------------

/// `%g`-style rendering with 6 significant digits.
pub fn fmt_g(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    trim_zeros(&format!("{x:.*}", (5 - exp) as usize)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Columns `layer_index,class,count,fraction`. With `include_other` false
/// the `Other` and `Degenerate` rows are dropped, as in published barplots.
pub fn write_proportions_csv<W: Write>(
    table: &ProportionTable,
    include_other: bool,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["layer_index", "class", "count", "fraction"])?;
    for r in &table.rows {
        if !include_other && !r.bucket.is_clustered() {
            continue;
        }
        w.write_record([
            r.layer_index.to_string(),
            r.bucket.name().to_string(),
            r.count.to_string(),
            fmt_g(r.fraction),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_activation_csv<W: Write>(stats: &ActivationStats, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["class", "count", "min", "q1", "median", "q3", "max", "mean"])?;
    for (b, s) in stats {
        w.write_record([
            b.name().to_string(),
            s.count.to_string(),
            fmt_g(s.min),
            fmt_g(s.q1),
            fmt_g(s.median),
            fmt_g(s.q3),
            fmt_g(s.max),
            fmt_g(s.mean),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `source_index,model_id,layer_index,pc1..pcN`, plus `class` when
/// assignments are given.
pub fn write_pca_csv<W: Write>(
    corpus: &Corpus,
    pca: &PcaResult,
    assignments: Option<&[Assignment]>,
    writer: W,
) -> Result<()> {
    if let Some(a) = assignments {
        check_aligned(corpus, a)?;
    }
    if pca.embeddings.len() != corpus.len() {
        return Err(Error::Misaligned {
            left: pca.embeddings.len(),
            right: corpus.len(),
        });
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["source_index".to_string(), "model_id".into(), "layer_index".into()];
    header.extend((1..=pca.components.len()).map(|i| format!("pc{i}")));
    if assignments.is_some() {
        header.push("class".into());
    }
    w.write_record(&header)?;
    for (i, (r, e)) in corpus.records().iter().zip(&pca.embeddings).enumerate() {
        let mut row = vec![i.to_string(), r.model_id.clone(), r.layer_index.to_string()];
        row.extend(e.iter().map(|&v| fmt_g(v)));
        if let Some(a) = assignments {
            row.push(a[i].class.name().to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `component,explained_ratio`.
pub fn write_pca_ratios_csv<W: Write>(pca: &PcaResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["component", "explained_ratio"])?;
    for (i, r) in pca.explained_ratio.iter().enumerate() {
        w.write_record([format!("pc{}", i + 1), fmt_g(*r)])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `tag,filters,clustered_percentage`, then one fraction column per
/// bucket.
pub fn write_timeline_csv<W: Write>(rows: &[TimelineRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let buckets = Bucket::all();
    let mut header = vec!["tag".to_string(), "filters".into(), "clustered_percentage".into()];
    header.extend(buckets.iter().map(|b| b.name().to_string()));
    w.write_record(&header)?;
    for r in rows {
        let mut row = vec![r.tag.clone(), r.filters.to_string(), fmt_g(r.clustered_percentage)];
        row.extend(buckets.iter().map(|b| fmt_g(r.proportions.get(b).copied().unwrap_or(0.0))));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::FilterRecord;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assignment(i: usize, class: PatternClass) -> Assignment {
        Assignment {
            source_index: i,
            matched_code: (class != PatternClass::Other).then_some(0.5),
            class,
            dissimilarity: 0.1,
            reason: if class == PatternClass::Other { Reason::AboveThreshold } else { Reason::Matched },
        }
    }

    fn corpus_with_layers(layers: &[u32], weights: impl Fn(usize) -> Vec<f32>) -> Corpus {
        Corpus::new(
            3,
            layers
                .iter()
                .enumerate()
                .map(|(i, &l)| FilterRecord {
                    weights: weights(i),
                    model_id: if i % 2 == 0 { "a".into() } else { "b".into() },
                    layer_index: l,
                    stage_index: 0,
                    channel_index: i as u32,
                    kernel_size: 3,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn all_other_is_one() {
        let c = corpus_with_layers(&[0, 0, 1, 2, 2], |_| vec![0.1; 9]);
        let a: Vec<_> = (0..5).map(|i| assignment(i, PatternClass::Other)).collect();
        let t = layer_proportions(&c, &a).unwrap();
        for l in 0..3 {
            assert_eq!(t.fraction(l, Bucket::Class(PatternClass::Other)), 1.0);
        }
        assert_eq!(t.rows.len(), 3 * Bucket::all().len());
        assert_eq!(clustered_percentage(&a).unwrap(), 0.0);
    }

    #[test]
    fn misalignment_and_empty() {
        let c = corpus_with_layers(&[0, 0], |_| vec![0.1; 9]);
        let a = vec![assignment(0, PatternClass::OnDx)];
        assert!(layer_proportions(&c, &a).is_err());
        let swapped = vec![assignment(1, PatternClass::OnDx), assignment(0, PatternClass::OnDx)];
        assert!(activation_stats(&c, &swapped).is_err());
        assert!(clustered_percentage(&[]).is_err());
        assert!(timeline(&[]).is_err());
    }

    #[test]
    fn degenerate_is_its_own_bucket() {
        let a = vec![assignment(0, PatternClass::OnCentre), Assignment::degenerate(1)];
        assert_eq!(clustered_percentage(&a).unwrap(), 50.0);
        let p = overall_proportions(&a).unwrap();
        assert_eq!(p[&Bucket::Degenerate], 0.5);
        assert_eq!(p[&Bucket::Class(PatternClass::Other)], 0.0);
    }

    #[test]
    fn type7_quantiles() {
        let s = BoxStats::from_values(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max), (1.0, 1.75, 2.5, 3.25, 4.0));
        assert_eq!(s.mean, 2.5);
        let s = BoxStats::from_values(&[7.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (7.0, 7.0, 7.0));
    }

    #[test]
    fn negation_mirrors_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w: Vec<Vec<f32>> = (0..41).map(|_| (0..9).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let layers = vec![0; 41];
        let pos = corpus_with_layers(&layers, |i| w[i].clone());
        let neg = corpus_with_layers(&layers, |i| w[i].iter().map(|x| -x).collect());
        let a: Vec<_> = (0..41).map(|i| assignment(i, PatternClass::OnCentre)).collect();
        let p = activation_stats(&pos, &a).unwrap()[&Bucket::Class(PatternClass::OnCentre)];
        let n = activation_stats(&neg, &a).unwrap()[&Bucket::Class(PatternClass::OnCentre)];
        assert_eq!(p.min, -n.max);
        assert_eq!(p.max, -n.min);
        assert_eq!(p.median, -n.median);
        assert_eq!(p.q1, -n.q3);
        assert_eq!(p.count, 41);
    }

    #[test]
    fn pca_line() {
        let dir = [1.0, -2.0, 0.5, 3.0];
        let data: Vec<Vec<f64>> = (0..20)
            .map(|i| dir.iter().map(|d| d * (i as f64 - 7.3)).collect())
            .collect();
        let p = pca_embed(&data, 3).unwrap();
        assert!((p.explained_ratio[0] - 1.0).abs() < 1e-10);
        assert!(p.explained_ratio[1..].iter().all(|r| r.abs() < 1e-10));
        // largest loading (the 3.0 entry) is positive
        assert!(p.components[0][3] > 0.0);
        assert!(pca_embed(&data[..3], 3).is_err());
    }

    #[test]
    fn pca_rotation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![3.0 * rng.random::<f64>(), rng.random::<f64>(), 0.3 * rng.random::<f64>()])
            .collect();
        let (c, s) = (0.6f64, 0.8f64);
        let rotated: Vec<Vec<f64>> = data
            .iter()
            .map(|v| vec![c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]])
            .collect();
        let a = pca_embed(&data, 3).unwrap();
        let b = pca_embed(&rotated, 3).unwrap();
        for (x, y) in a.explained_ratio.iter().zip(&b.explained_ratio) {
            assert!((x - y).abs() < 1e-10);
        }
        // embeddings agree up to a per-axis sign
        for j in 0..3 {
            let dot: f64 = a.embeddings.iter().zip(&b.embeddings).map(|(u, v)| u[j] * v[j]).sum();
            let na: f64 = a.embeddings.iter().map(|u| u[j] * u[j]).sum();
            assert!((dot.abs() / na - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn merges() {
        let classes = [
            PatternClass::OnCentre,
            PatternClass::OnCross,
            PatternClass::OffCross,
            PatternClass::Other,
            PatternClass::OffCentre,
        ];
        let a: Vec<_> = classes.iter().enumerate().map(|(i, &c)| assignment(i, c)).collect();
        let m = merge_labels(&a, &centre_cross_merges()).unwrap();
        let count = |v: &[Assignment], c| v.iter().filter(|a| a.class == c).count();
        assert_eq!(count(&m, PatternClass::OnCentre), 2);
        assert_eq!(count(&m, PatternClass::OffCentre), 2);
        assert_eq!(merge_labels(&a, &Merges::new()).unwrap(), a);
        assert_eq!(parse_merges("OnCross=OnCentre, OffCross=OffCentre").unwrap(), centre_cross_merges());
        assert!(parse_merges("OnCross=Bogus").is_err());
        assert!(parse_merges("OnCross").is_err());
        let bad = Merges::from([(PatternClass::OnDx, PatternClass::Other)]);
        assert!(merge_labels(&a, &bad).is_err());
    }

    #[test]
    fn timeline_rows() {
        let a: Vec<_> = (0..4).map(|i| assignment(i, PatternClass::OnDy)).collect();
        let t = timeline(&[("e0".into(), a.clone()), ("e1".into(), a)]).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].tag, "e0");
        assert_eq!(t[0].proportions, t[1].proportions);
        assert_eq!(t[0].clustered_percentage, 100.0);
    }

    #[test]
    fn summary_per_model() {
        let c = corpus_with_layers(&[0, 0, 0, 0], |_| vec![0.1; 9]);
        let a = vec![
            assignment(0, PatternClass::OnDx),
            assignment(1, PatternClass::OnDx),
            assignment(2, PatternClass::Other),
            assignment(3, PatternClass::Other),
        ];
        let s = summarize_models(&c, &a).unwrap();
        assert_eq!(s[0].model_id, "a");
        assert_eq!(s[0].clustered_percentage, 50.0);
        assert_eq!(s[1].clustered_percentage, 50.0);
    }

    #[test]
    fn g_format() {
        assert_eq!(fmt_g(0.0), "0");
        assert_eq!(fmt_g(1.0), "1");
        assert_eq!(fmt_g(0.45), "0.45");
        assert_eq!(fmt_g(97.333333333), "97.3333");
        assert_eq!(fmt_g(123456789.0), "1.23457e+08");
        assert_eq!(fmt_g(-0.0000123456), "-1.23456e-05");
        assert_eq!(fmt_g(0.0001), "0.0001");
        assert_eq!(fmt_g(999999.6), "1e+06");
        assert_eq!(fmt_g(1.0 / 3.0), "0.333333");
    }

    proptest! {
        #[test]
        fn rows_partition_each_layer(seed in any::<u64>(), n in 1usize..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let layers: Vec<u32> = (0..n).map(|_| rng.random_range(0..5)).collect();
            let c = corpus_with_layers(&layers, |_| vec![0.1; 9]);
            let a: Vec<_> = (0..n)
                .map(|i| {
                    if rng.random_bool(0.1) {
                        Assignment::degenerate(i)
                    } else {
                        assignment(i, PatternClass::ALL[rng.random_range(0..PatternClass::ALL.len())])
                    }
                })
                .collect();
            let t = layer_proportions(&c, &a).unwrap();
            for (&l, &total) in &t.layer_totals {
                let sum: f64 = t.layer(l).map(|r| r.fraction).sum();
                prop_assert!((sum - 1.0).abs() <= 1e-12);
                prop_assert_eq!(t.layer(l).map(|r| r.count).sum::<usize>(), total);
            }
            let merged = merge_labels(&a, &centre_cross_merges()).unwrap();
            prop_assert_eq!(clustered_percentage(&merged).unwrap(), clustered_percentage(&a).unwrap());
        }

        #[test]
        fn pca_ratios_are_sane(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<Vec<f64>> = (0..30).map(|_| (0..9).map(|_| rng.random::<f64>()).collect()).collect();
            let p = pca_embed(&data, 3).unwrap();
            prop_assert!(p.explained_ratio.iter().all(|&r| r >= 0.0));
            prop_assert!(p.explained_ratio.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(p.explained_ratio.iter().sum::<f64>() <= 1.0 + 1e-10);
        }
    }
}
