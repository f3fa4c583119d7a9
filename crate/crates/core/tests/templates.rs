//! Rendered templates against closed-form values computed here, and
//! template-bank self-identification.

use std::f64::consts::PI;

use kernelscope::dogfamily::{
    cross_kernel, default_bank, dog_derivative_kernel, dog_kernel, nearest_template, render_raw,
    Axis, Family, PatternClass, Polarity, TemplateSpec,
};
use kernelscope::geometry::{center, dot, normalize};
use proptest::prelude::*;

fn g(x: f64, y: f64, s: f64) -> f64 {
    (-(x * x + y * y) / (2.0 * s * s)).exp() / (2.0 * PI * s * s)
}

/// Closed-form value at grid cell (row, col) of a k×k grid.
fn oracle(family: Family, k: u32, row: usize, col: usize, s1: f64, s2: f64) -> f64 {
    let h = (k / 2) as f64;
    let x = col as f64 - h;
    let y = row as f64 - h;
    let term = |s: f64| {
        let v = s * s;
        let base = g(x, y, s);
        match family {
            Family::Dog => base,
            Family::DogDx => -x / v * base,
            Family::DogDy => -y / v * base,
            Family::DogDxx => (x * x - v) / (v * v) * base,
            Family::DogDyy => (y * y - v) / (v * v) * base,
            Family::DogDxy => x * y / (v * v) * base,
            Family::Cross => unreachable!(),
        }
    };
    match family {
        Family::Cross => (-x * x / (2.0 * s1 * s1)).exp() + (-y * y / (2.0 * s1 * s1)).exp(),
        _ => term(s1) - term(s2),
    }
}

#[test]
fn dog_centre_and_polarity() {
    let on = dog_kernel(&TemplateSpec::new(Family::Dog, Polarity::On, 1.0, 2.0, 7)).unwrap();
    let off = dog_kernel(&TemplateSpec::new(Family::Dog, Polarity::Off, 1.0, 2.0, 7)).unwrap();
    let peak = on.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(on[24], peak);
    for (a, b) in on.iter().zip(&off) {
        assert_eq!(*a, -b);
    }
}

#[test]
fn derivative_dispatch_matches_family() {
    let base = TemplateSpec::new(Family::Dog, Polarity::On, 0.9, 1.8, 5);
    for (order, axis, family) in [
        (1, Axis::X, Family::DogDx),
        (1, Axis::Y, Family::DogDy),
        (2, Axis::X, Family::DogDxx),
        (2, Axis::Y, Family::DogDyy),
        (2, Axis::XY, Family::DogDxy),
    ] {
        let via = dog_derivative_kernel(&base, order, axis).unwrap();
        let direct = kernelscope::dogfamily::render(&TemplateSpec { family, ..base }).unwrap();
        assert_eq!(via, direct, "{family:?}");
    }
}

#[test]
fn cross_is_plus_shaped() {
    let k = cross_kernel(&TemplateSpec::new(Family::Cross, Polarity::On, 0.5, 0.5, 7)).unwrap();
    let centre_row: f64 = k[21..28].iter().sum();
    let top_row: f64 = k[0..7].iter().sum();
    assert!(centre_row > top_row);
    // symmetric under transpose
    for r in 0..7 {
        for c in 0..7 {
            assert!((k[r * 7 + c] - k[c * 7 + r]).abs() < 1e-15);
        }
    }
    assert!(cross_kernel(&TemplateSpec::new(Family::Cross, Polarity::On, 1.5, 1.5, 7)).is_err());
}

#[test]
fn every_bank_template_identifies_itself() {
    for k in [3, 5, 7] {
        let bank = default_bank(k).unwrap();
        assert_eq!(bank.len(), 46);
        for t in &bank {
            let m = nearest_template(&t.kernel, &bank).unwrap();
            assert!(m.dissimilarity < 1e-12);
            assert_eq!(m.class, t.class);
            let scaled: Vec<f64> = t.kernel.iter().map(|v| 3.0 * v - 1.0).collect();
            assert_eq!(nearest_template(&scaled, &bank).unwrap().class, t.class);
        }
        let ons = bank.iter().filter(|t| t.class == PatternClass::OnCentre).count();
        assert_eq!(ons, 3);
    }
}

proptest! {
    #[test]
    fn renderer_matches_closed_form(
        fam in prop_oneof![
            Just(Family::Dog), Just(Family::DogDx), Just(Family::DogDy),
            Just(Family::DogDxx), Just(Family::DogDyy), Just(Family::DogDxy), Just(Family::Cross)
        ],
        k in prop_oneof![Just(3u32), Just(5), Just(7), Just(9)],
        s1 in 0.3f64..1.0,
        ratio in 1.1f64..3.0,
        on in any::<bool>(),
    ) {
        let s2 = if fam == Family::Cross { s1 } else { (s1 * ratio).min(k as f64) };
        let pol = if on { Polarity::On } else { Polarity::Off };
        let sign = if on { 1.0 } else { -1.0 };
        let raw = render_raw(&TemplateSpec::new(fam, pol, s1, s2, k)).unwrap();
        let ku = k as usize;
        for r in 0..ku {
            for c in 0..ku {
                let want = sign * oracle(fam, k, r, c, s1, s2);
                prop_assert!((raw[r * ku + c] - want).abs() <= 1e-14 * want.abs().max(1.0));
            }
        }
        let pre = kernelscope::dogfamily::render(&TemplateSpec::new(fam, pol, s1, s2, k));
        if let Ok(p) = pre {
            prop_assert!(p.iter().sum::<f64>().abs() < 1e-12);
            prop_assert!((dot(&p, &p) - 1.0).abs() < 1e-12);
            prop_assert_eq!(p, normalize(&center(&raw)).unwrap());
        }
    }
}
