//! Reference patterns: difference of Gaussians, its first and second partial
//! derivatives, and the sum-of-orthogonal-Gaussians cross, rendered on an
//! integer-spaced k×k grid.
//!
//! Grids are row-major. Row `r` holds `y = r − (k−1)/2` and column `c` holds
//! `x = c − (k−1)/2`, so the first entry is the `(−h, −h)` corner.
//!
//! The bank built from these templates is a brute-force oracle: it suggests
//! labels for the autoencoder spectrum and checks classifier output in tests.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::check_kernel_size;
use crate::error::{Error, Result};
use crate::geometry::{self, center, normalize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PatternClass {
    OnCentre,
    OffCentre,
    OnCross,
    OffCross,
    OnDx,
    OffDx,
    OnDy,
    OffDy,
    OnSecond,
    OffSecond,
    SquareOn,
    SquareOff,
    Other,
}

impl PatternClass {
    pub const ALL: [PatternClass; 13] = [
        PatternClass::OnCentre,
        PatternClass::OffCentre,
        PatternClass::OnCross,
        PatternClass::OffCross,
        PatternClass::OnDx,
        PatternClass::OffDx,
        PatternClass::OnDy,
        PatternClass::OffDy,
        PatternClass::OnSecond,
        PatternClass::OffSecond,
        PatternClass::SquareOn,
        PatternClass::SquareOff,
        PatternClass::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PatternClass::OnCentre => "OnCentre",
            PatternClass::OffCentre => "OffCentre",
            PatternClass::OnCross => "OnCross",
            PatternClass::OffCross => "OffCross",
            PatternClass::OnDx => "OnDx",
            PatternClass::OffDx => "OffDx",
            PatternClass::OnDy => "OnDy",
            PatternClass::OffDy => "OffDy",
            PatternClass::OnSecond => "OnSecond",
            PatternClass::OffSecond => "OffSecond",
            PatternClass::SquareOn => "SquareOn",
            PatternClass::SquareOff => "SquareOff",
            PatternClass::Other => "Other",
        }
    }

    pub fn is_first_derivative(self) -> bool {
        matches!(
            self,
            PatternClass::OnDx | PatternClass::OffDx | PatternClass::OnDy | PatternClass::OffDy
        )
    }

    pub fn is_cross(self) -> bool {
        matches!(self, PatternClass::OnCross | PatternClass::OffCross)
    }
}

impl fmt::Display for PatternClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PatternClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PatternClass::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::UnknownClass(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Dog,
    DogDx,
    DogDy,
    DogDxx,
    DogDyy,
    DogDxy,
    Cross,
}

impl Family {
    pub fn is_dog(self) -> bool {
        !matches!(self, Family::Cross)
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "dog" => Family::Dog,
            "dog_dx" => Family::DogDx,
            "dog_dy" => Family::DogDy,
            "dog_dxx" => Family::DogDxx,
            "dog_dyy" => Family::DogDyy,
            "dog_dxy" => Family::DogDxy,
            "cross" => Family::Cross,
            other => return Err(Error::InvalidTemplate(format!("unknown family {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    On,
    Off,
}

impl Polarity {
    fn sign(self) -> f64 {
        match self {
            Polarity::On => 1.0,
            Polarity::Off => -1.0,
        }
    }
}

impl FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "on" => Ok(Polarity::On),
            "off" => Ok(Polarity::Off),
            other => Err(Error::InvalidTemplate(format!("unknown polarity {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    XY,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub family: Family,
    pub polarity: Polarity,
    /// Inner standard deviation in grid units; the only σ used by `cross`.
    pub sigma1: f64,
    /// Outer standard deviation in grid units.
    pub sigma2: f64,
    pub size: u32,
}

impl TemplateSpec {
    pub fn new(family: Family, polarity: Polarity, sigma1: f64, sigma2: f64, size: u32) -> Self {
        TemplateSpec {
            family,
            polarity,
            sigma1,
            sigma2,
            size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_kernel_size(self.size)?;
        let k = self.size as f64;
        let in_range = |s: f64| s.is_finite() && s > 0.0 && s <= k;
        if !in_range(self.sigma1) {
            return Err(Error::InvalidTemplate(format!(
                "sigma1 = {} outside (0, {k}]",
                self.sigma1
            )));
        }
        if self.family.is_dog() {
            if !in_range(self.sigma2) {
                return Err(Error::InvalidTemplate(format!(
                    "sigma2 = {} outside (0, {k}]",
                    self.sigma2
                )));
            }
            if self.sigma1 >= self.sigma2 {
                return Err(Error::InvalidTemplate(format!(
                    "sigma1 = {} must be below sigma2 = {}",
                    self.sigma1, self.sigma2
                )));
            }
        }
        Ok(())
    }

    /// Cluster label a kernel rendered from this spec belongs to.
    ///
    /// For first derivatives the on-polarity kernel has its positive lobe on
    /// the negative side of the axis, which is the leading lobe in row-major
    /// order.
    pub fn class(&self) -> PatternClass {
        use PatternClass::*;
        let on = self.polarity == Polarity::On;
        match self.family {
            Family::Dog => if on { OnCentre } else { OffCentre },
            Family::DogDx => if on { OnDx } else { OffDx },
            Family::DogDy => if on { OnDy } else { OffDy },
            Family::DogDxx | Family::DogDyy | Family::DogDxy => {
                if on { OnSecond } else { OffSecond }
            }
            Family::Cross => if on { OnCross } else { OffCross },
        }
    }
}

/// Row-major `(x, y)` coordinates of a k×k grid centred on the origin.
pub fn grid_coords(size: u32) -> Result<Vec<(f64, f64)>> {
    check_kernel_size(size)?;
    let h = (size as i64 - 1) / 2;
    let mut out = Vec::with_capacity((size * size) as usize);
    for y in -h..=h {
        for x in -h..=h {
            out.push((x as f64, y as f64));
        }
    }
    Ok(out)
}

fn gaussian(x: f64, y: f64, s: f64) -> f64 {
    let s2 = s * s;
    (-(x * x + y * y) / (2.0 * s2)).exp() / (2.0 * PI * s2)
}

/// Value of the named DoG family member at `(x, y)`, before polarity.
fn dog_family_value(family: Family, x: f64, y: f64, s1: f64, s2: f64) -> f64 {
    let term = |s: f64| {
        let g = gaussian(x, y, s);
        let v = s * s;
        match family {
            Family::Dog => g,
            Family::DogDx => -x / v * g,
            Family::DogDy => -y / v * g,
            Family::DogDxx => (x * x / (v * v) - 1.0 / v) * g,
            Family::DogDyy => (y * y / (v * v) - 1.0 / v) * g,
            Family::DogDxy => x * y / (v * v) * g,
            Family::Cross => unreachable!(),
        }
    };
    term(s1) - term(s2)
}

fn cross_value(x: f64, y: f64, s: f64) -> f64 {
    let d = 2.0 * s * s;
    (-x * x / d).exp() + (-y * y / d).exp()
}

/// Renders the spec on its grid with polarity applied but no centering or
/// normalization. Does not validate σ; callers that need the checks use the
/// family-specific constructors.
pub fn render_raw(spec: &TemplateSpec) -> Result<Vec<f64>> {
    let sign = spec.polarity.sign();
    Ok(grid_coords(spec.size)?
        .into_iter()
        .map(|(x, y)| {
            let v = match spec.family {
                Family::Cross => cross_value(x, y, spec.sigma1),
                f => dog_family_value(f, x, y, spec.sigma1, spec.sigma2),
            };
            sign * v
        })
        .collect())
}

fn preprocess(raw: Vec<f64>) -> Result<Vec<f64>> {
    normalize(&center(&raw))
}

/// Centered, unit-norm DoG kernel.
pub fn dog_kernel(spec: &TemplateSpec) -> Result<Vec<f64>> {
    if spec.family != Family::Dog {
        return Err(Error::InvalidTemplate(format!(
            "dog_kernel needs family dog, got {:?}",
            spec.family
        )));
    }
    spec.validate()?;
    preprocess(render_raw(spec)?)
}

pub fn derivative_family(order: u8, axis: Axis) -> Result<Family> {
    match (order, axis) {
        (1, Axis::X) => Ok(Family::DogDx),
        (1, Axis::Y) => Ok(Family::DogDy),
        (2, Axis::X) => Ok(Family::DogDxx),
        (2, Axis::Y) => Ok(Family::DogDyy),
        (2, Axis::XY) => Ok(Family::DogDxy),
        _ => Err(Error::InvalidTemplate(format!(
            "no derivative of order {order} along {axis:?}"
        ))),
    }
}

/// Centered, unit-norm analytic derivative of the DoG described by `spec`.
/// `spec.family` is overridden by the `(order, axis)` pair.
pub fn dog_derivative_kernel(spec: &TemplateSpec, order: u8, axis: Axis) -> Result<Vec<f64>> {
    let family = derivative_family(order, axis)?;
    let spec = TemplateSpec { family, ..*spec };
    spec.validate()?;
    preprocess(render_raw(&spec)?)
}

pub const CROSS_SIGMA_RANGE: (f64, f64) = (0.3, 1.0);

/// Centered, unit-norm `exp(−x²/2σ²) + exp(−y²/2σ²)` with σ = `spec.sigma1`.
pub fn cross_kernel(spec: &TemplateSpec) -> Result<Vec<f64>> {
    if spec.family != Family::Cross {
        return Err(Error::InvalidTemplate(format!(
            "cross_kernel needs family cross, got {:?}",
            spec.family
        )));
    }
    spec.validate()?;
    let (lo, hi) = CROSS_SIGMA_RANGE;
    if !(lo..=hi).contains(&spec.sigma1) {
        return Err(Error::InvalidTemplate(format!(
            "cross sigma {} outside [{lo}, {hi}]",
            spec.sigma1
        )));
    }
    preprocess(render_raw(spec)?)
}

/// Validated, preprocessed kernel for any family.
pub fn render(spec: &TemplateSpec) -> Result<Vec<f64>> {
    match spec.family {
        Family::Dog => dog_kernel(spec),
        Family::Cross => cross_kernel(spec),
        _ => {
            spec.validate()?;
            preprocess(render_raw(spec)?)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub class: PatternClass,
    pub spec: TemplateSpec,
    /// Centered, unit-norm k×k kernel.
    pub kernel: Vec<f64>,
}

pub const DOG_FAMILIES: [Family; 6] = [
    Family::Dog,
    Family::DogDx,
    Family::DogDy,
    Family::DogDxx,
    Family::DogDyy,
    Family::DogDxy,
];

/// Every DoG family × polarity × (σ₁, σ₂), then cross × polarity × σ.
pub fn template_bank(
    size: u32,
    sigma_grid: &[(f64, f64)],
    cross_sigmas: &[f64],
) -> Result<Vec<Template>> {
    if sigma_grid.is_empty() || cross_sigmas.is_empty() {
        return Err(Error::InvalidConfig("template bank needs non-empty sigma lists".into()));
    }
    let mut bank = Vec::new();
    let mut push = |spec: TemplateSpec| -> Result<()> {
        bank.push(Template {
            class: spec.class(),
            kernel: render(&spec)?,
            spec,
        });
        Ok(())
    };
    for family in DOG_FAMILIES {
        for &(s1, s2) in sigma_grid {
            for polarity in [Polarity::On, Polarity::Off] {
                push(TemplateSpec::new(family, polarity, s1, s2, size))?;
            }
        }
    }
    for &s in cross_sigmas {
        for polarity in [Polarity::On, Polarity::Off] {
            push(TemplateSpec::new(Family::Cross, polarity, s, s, size))?;
        }
    }
    Ok(bank)
}

pub const DEFAULT_SIGMA1: [f64; 3] = [0.6, 0.9, 1.2];
pub const DEFAULT_SIGMA_RATIO: f64 = 2.0;
pub const DEFAULT_CROSS_SIGMAS: [f64; 5] = [0.4, 0.5, 0.6, 0.7, 0.8];

pub fn default_sigma_grid() -> Vec<(f64, f64)> {
    DEFAULT_SIGMA1
        .iter()
        .map(|&s| (s, s * DEFAULT_SIGMA_RATIO))
        .collect()
}

pub fn default_bank(size: u32) -> Result<Vec<Template>> {
    template_bank(size, &default_sigma_grid(), &DEFAULT_CROSS_SIGMAS)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemplateMatch {
    pub class: PatternClass,
    pub dissimilarity: f64,
    pub index: usize,
}

/// Brute-force argmin of mean-centered cosine dissimilarity over the bank;
/// the lowest bank index wins ties.
pub fn nearest_template(filter: &[f64], bank: &[Template]) -> Result<TemplateMatch> {
    let mut best: Option<TemplateMatch> = None;
    for (index, t) in bank.iter().enumerate() {
        let d = geometry::mc_cosine_dissim(filter, &t.kernel)?;
        if best.is_none_or(|b| d < b.dissimilarity) {
            best = Some(TemplateMatch {
                class: t.class,
                dissimilarity: d,
                index,
            });
        }
    }
    best.ok_or_else(|| Error::Empty("template bank".into()))
}
