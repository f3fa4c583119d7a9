//! Filter preprocessing: centering, unit normalization and the change of
//! basis onto the zero-sum hyperplane `1ᵀr = 0`, plus the mean-centered
//! cosine dissimilarity shared by training and classification.

use crate::error::{Error, Result};

/// Centered norms at or below this are treated as degenerate.
pub const EPS_NORM: f64 = 1e-8;

/// Largest |sum| accepted by [`HyperplaneBasis::to_hyperplane`].
pub const CENTERED_TOL: f64 = 1e-6;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn center(v: &[f64]) -> Vec<f64> {
    let m = mean(v);
    v.iter().map(|x| x - m).collect()
}

pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n <= EPS_NORM {
        return Err(Error::DegenerateFilter { norm: n, eps: EPS_NORM });
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Sum with entries related by a 180° rotation of the row-major grid added
/// pairwise first, so vectors odd under that rotation sum to exactly 0.
pub fn paired_sum(v: &[f64]) -> f64 {
    let n = v.len();
    let mut total = 0.0;
    for i in 0..n / 2 {
        total += v[i] + v[n - 1 - i];
    }
    if n % 2 == 1 {
        total += v[n / 2];
    }
    total
}

/// `1 − cos(center(a), center(b))`, in [0, 2].
pub fn mc_cosine_dissim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let ca = center(a);
    let cb = center(b);
    let na = norm(&ca);
    let nb = norm(&cb);
    for n in [na, nb] {
        if n <= EPS_NORM {
            return Err(Error::DegenerateFilter { norm: n, eps: EPS_NORM });
        }
    }
    let cos = (dot(&ca, &cb) / (na * nb)).clamp(-1.0, 1.0);
    Ok(1.0 - cos)
}

/// Orthonormal Helmert basis of the hyperplane orthogonal to the all-ones
/// vector in ℝⁿ.
///
/// Row `i` (1-based, `i = 1..n−1`) holds `1/√(i(i+1))` in positions `1..=i`,
/// `−i/√(i(i+1))` in position `i+1`, and zeros after. The explicit rows are
/// kept for inspection; the transforms use an O(n) prefix/suffix-sum form of
/// the same matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperplaneBasis {
    n: usize,
    rows: Vec<Vec<f64>>,
    // coef[i] = 1/√((i+1)(i+2)) for 0-based row i
    coef: Vec<f64>,
}

impl HyperplaneBasis {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidConfig(format!(
                "hyperplane basis needs n >= 2, got {n}"
            )));
        }
        let coef: Vec<f64> = (1..n)
            .map(|i| {
                let i = i as f64;
                1.0 / (i * (i + 1.0)).sqrt()
            })
            .collect();
        let rows = (0..n - 1)
            .map(|r| {
                let mut row = vec![0.0; n];
                for x in row.iter_mut().take(r + 1) {
                    *x = coef[r];
                }
                row[r + 1] = -((r + 1) as f64) * coef[r];
                row
            })
            .collect();
        Ok(HyperplaneBasis { n, rows, coef })
    }

    /// Ambient dimension n.
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn reduced_dim(&self) -> usize {
        self.n - 1
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// `basis · v` for a centered `v`.
    pub fn to_hyperplane(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: v.len(),
            });
        }
        let s: f64 = v.iter().sum();
        if s.abs() > CENTERED_TOL {
            return Err(Error::NotCentered(s));
        }
        Ok(self.project(v))
    }

    /// `basis · v` without the centering check.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n - 1);
        let mut prefix = 0.0;
        for r in 0..self.n - 1 {
            prefix += v[r];
            out.push(self.coef[r] * (prefix - (r + 1) as f64 * v[r + 1]));
        }
        out
    }

    /// `basisᵀ · u`; the result always sums to zero.
    pub fn from_hyperplane(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.n - 1 {
            return Err(Error::DimensionMismatch {
                expected: self.n - 1,
                got: u.len(),
            });
        }
        Ok(self.lift(u))
    }

    pub(crate) fn lift(&self, u: &[f64]) -> Vec<f64> {
        let m = self.n - 1;
        let mut out = vec![0.0; self.n];
        // out[j] = Σ_{r ≥ j} coef[r]·u[r]  −  j·coef[j−1]·u[j−1]
        let mut suffix = 0.0;
        for j in (0..self.n).rev() {
            if j < m {
                suffix += self.coef[j] * u[j];
            }
            out[j] = suffix;
            if j > 0 {
                out[j] -= j as f64 * self.coef[j - 1] * u[j - 1];
            }
        }
        out
    }
}

pub fn hyperplane_basis(n: usize) -> Result<HyperplaneBasis> {
    HyperplaneBasis::new(n)
}

/// A centered, unit-norm filter and its hyperplane coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedFilter {
    pub full: Vec<f64>,
    pub reduced: Vec<f64>,
    pub source_index: usize,
}

impl PreprocessedFilter {
    /// Center → normalize → change of basis.
    pub fn from_raw(raw: &[f64], basis: &HyperplaneBasis, source_index: usize) -> Result<Self> {
        if raw.len() != basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.dim(),
                got: raw.len(),
            });
        }
        let full = normalize(&center(raw))?;
        let reduced = basis.to_hyperplane(&full)?;
        Ok(PreprocessedFilter {
            full,
            reduced,
            source_index,
        })
    }

    pub fn kernel_size(&self) -> u32 {
        (self.full.len() as f64).sqrt().round() as u32
    }
}
