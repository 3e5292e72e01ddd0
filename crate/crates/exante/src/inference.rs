//! Pointwise and uniform (sup-t) bootstrap bands for estimated curves.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dr_estimator::CLAMP;
use crate::returns_engine::{Band, BandKind, ReturnsCurve};
use crate::special::phi_inv;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("{0} bootstrap draws; bands need at least {MIN_DRAWS}")]
    TooFewDraws(usize),
    #[error("draw {0} is on a different grid than the point estimate")]
    GridMismatch(usize),
    #[error("band level {0} outside (0.5, 1)")]
    InvalidLevel(f64),
    #[error("region mask has {got} entries for a grid of {want}")]
    MaskLength { got: usize, want: usize },
}

pub const MIN_DRAWS: usize = 50;

/// IQR-to-sigma ratio of the normal distribution.
const IQR_SCALE: f64 = 1.349;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub level: f64,
    pub kind: BandKind,
}

impl Default for BandSpec {
    fn default() -> Self {
        BandSpec {
            level: 0.9,
            kind: BandKind::Uniform,
        }
    }
}

impl BandSpec {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.level > 0.5 && self.level < 1.0 {
            Ok(())
        } else {
            Err(InferenceError::InvalidLevel(self.level))
        }
    }
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// IQR / 1.349 of a sample.
pub fn robust_sigma(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    (quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25)) / IQR_SCALE
}

fn check(
    point: &ReturnsCurve,
    draws: &[ReturnsCurve],
    spec: &BandSpec,
) -> Result<(), InferenceError> {
    spec.validate()?;
    if draws.len() < MIN_DRAWS {
        return Err(InferenceError::TooFewDraws(draws.len()));
    }
    for (b, d) in draws.iter().enumerate() {
        if d.grid != point.grid {
            return Err(InferenceError::GridMismatch(b));
        }
    }
    Ok(())
}

fn sigmas(point: &ReturnsCurve, draws: &[ReturnsCurve]) -> Vec<f64> {
    let mut col = vec![0.0; draws.len()];
    (0..point.grid.len())
        .map(|i| {
            for (c, d) in col.iter_mut().zip(draws) {
                *c = d.values[i];
            }
            robust_sigma(&col)
        })
        .collect()
}

fn with_band(
    point: &ReturnsCurve,
    sigma: &[f64],
    critical: f64,
    spec: &BandSpec,
    kind: BandKind,
) -> ReturnsCurve {
    // a value at the fitted-probability clamp says only "at most CLAMP from
    // the boundary", so the band reaches the boundary there
    let edge = CLAMP * (1.0 + 1e-9);
    let lower = point
        .values
        .iter()
        .zip(sigma)
        .map(|(&v, s)| {
            if v <= edge {
                0.0
            } else {
                (v - critical * s).clamp(0.0, 1.0)
            }
        })
        .collect();
    let upper = point
        .values
        .iter()
        .zip(sigma)
        .map(|(&v, s)| {
            if v >= 1.0 - edge {
                1.0
            } else {
                (v + critical * s).clamp(0.0, 1.0)
            }
        })
        .collect();
    ReturnsCurve {
        band: Some(Band {
            lower,
            upper,
            level: spec.level,
            kind,
            critical,
        }),
        ..point.clone()
    }
}

/// point ± z_{(1+level)/2} · σ̂(s), clipped to [0, 1].
pub fn pointwise_band(
    point: &ReturnsCurve,
    draws: &[ReturnsCurve],
    spec: &BandSpec,
) -> Result<ReturnsCurve, InferenceError> {
    check(point, draws, spec)?;
    let sigma = sigmas(point, draws);
    let z = phi_inv(0.5 * (1.0 + spec.level));
    Ok(with_band(point, &sigma, z, spec, BandKind::Pointwise))
}

/// point ± k̂ · σ̂(s), with k̂ the level-quantile over draws of
/// sup_s |draw − point| / σ̂ on the region. Points with σ̂ = 0 are left out of
/// the sup.
pub fn uniform_band(
    point: &ReturnsCurve,
    draws: &[ReturnsCurve],
    spec: &BandSpec,
    region: &[bool],
) -> Result<ReturnsCurve, InferenceError> {
    check(point, draws, spec)?;
    if region.len() != point.grid.len() {
        return Err(InferenceError::MaskLength {
            got: region.len(),
            want: point.grid.len(),
        });
    }
    let sigma = sigmas(point, draws);
    let active: Vec<usize> = (0..sigma.len())
        .filter(|&i| region[i] && sigma[i] > 0.0)
        .collect();
    if active.is_empty() {
        let mut c = with_band(point, &sigma, 0.0, spec, BandKind::Uniform);
        c.warnings
            .push("robust scale is zero on the whole region; band has zero width".into());
        return Ok(c);
    }
    let mut sup: Vec<f64> = draws
        .iter()
        .map(|d| {
            active
                .iter()
                .map(|&i| (d.values[i] - point.values[i]).abs() / sigma[i])
                .fold(0.0, f64::max)
        })
        .collect();
    sup.sort_by(f64::total_cmp);
    let k = quantile_sorted(&sup, spec.level);
    Ok(with_band(point, &sigma, k, spec, BandKind::Uniform))
}

/// Dispatches on the spec's kind; the uniform band uses the curve's
/// non-extrapolated points as its region.
pub fn band(
    point: &ReturnsCurve,
    draws: &[ReturnsCurve],
    spec: &BandSpec,
) -> Result<ReturnsCurve, InferenceError> {
    match spec.kind {
        BandKind::Pointwise => pointwise_band(point, draws, spec),
        BandKind::Uniform => {
            let region: Vec<bool> = point.extrapolated.iter().map(|e| !e).collect();
            uniform_band(point, draws, spec, &region)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn curve(values: Vec<f64>) -> ReturnsCurve {
        let grid = (0..values.len()).map(|i| i as f64).collect();
        ReturnsCurve::new("fq", Some(0.5), grid, values)
    }

    fn noisy_draws(point: &[f64], sd: f64, b: usize, seed: u64) -> Vec<ReturnsCurve> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, sd).unwrap();
        (0..b)
            .map(|_| curve(point.iter().map(|v| v + n.sample(&mut rng)).collect()))
            .collect()
    }

    #[test]
    fn identical_draws_give_zero_width() {
        let p = curve(vec![0.1, 0.4, 0.8]);
        let draws = vec![p.clone(); 60];
        let spec = BandSpec {
            level: 0.9,
            kind: BandKind::Pointwise,
        };
        let b = pointwise_band(&p, &draws, &spec).unwrap().band.unwrap();
        assert_eq!(b.lower, p.values);
        assert_eq!(b.upper, p.values);
        let u = uniform_band(&p, &draws, &spec, &[true; 3]).unwrap();
        assert_eq!(u.band.unwrap().upper, p.values);
        assert!(!u.warnings.is_empty());
    }

    #[test]
    fn robust_sigma_of_normal() {
        let draws = noisy_draws(&[0.5], 0.1, 4000, 1);
        let v: Vec<f64> = draws.iter().map(|d| d.values[0]).collect();
        assert!((robust_sigma(&v) - 0.1).abs() < 0.015);
        assert_eq!(quantile_sorted(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
    }

    #[test]
    fn band_clipped_and_errors() {
        let p = curve(vec![0.99, 0.995]);
        let draws = noisy_draws(&p.values, 0.05, 100, 2);
        let spec = BandSpec {
            level: 0.9,
            kind: BandKind::Pointwise,
        };
        let b = pointwise_band(&p, &draws, &spec).unwrap().band.unwrap();
        assert!(b.upper.iter().all(|v| *v <= 1.0));
        assert!(matches!(
            pointwise_band(&p, &draws[..10], &spec),
            Err(InferenceError::TooFewDraws(10))
        ));
        let mut bad = draws.clone();
        bad[3].grid[0] = 7.0;
        assert!(matches!(
            pointwise_band(&p, &bad, &spec),
            Err(InferenceError::GridMismatch(3))
        ));
        assert!(BandSpec {
            level: 0.4,
            kind: BandKind::Uniform
        }
        .validate()
        .is_err());
    }

    #[test]
    fn singleton_region_reduces_to_abs_t_quantile() {
        let p = curve(vec![0.3, 0.5, 0.7]);
        let draws = noisy_draws(&p.values, 0.05, 400, 3);
        let spec = BandSpec {
            level: 0.9,
            kind: BandKind::Uniform,
        };
        let u = uniform_band(&p, &draws, &spec, &[false, true, false])
            .unwrap()
            .band
            .unwrap();
        let col: Vec<f64> = draws.iter().map(|d| d.values[1]).collect();
        let s = robust_sigma(&col);
        let mut t: Vec<f64> = col.iter().map(|v| (v - 0.5).abs() / s).collect();
        t.sort_by(f64::total_cmp);
        assert!((u.critical - quantile_sorted(&t, 0.9)).abs() < 1e-12);
        assert!((u.upper[1] - (0.5 + u.critical * s)).abs() < 1e-12);
    }

    #[test]
    fn uniform_wider_than_pointwise() {
        let p = curve((0..40).map(|i| 0.1 + 0.02 * i as f64).collect());
        let draws = noisy_draws(&p.values, 0.03, 300, 4);
        let spec = BandSpec {
            level: 0.9,
            kind: BandKind::Uniform,
        };
        let pw = pointwise_band(&p, &draws, &spec).unwrap().band.unwrap();
        let un = uniform_band(&p, &draws, &spec, &[true; 40])
            .unwrap()
            .band
            .unwrap();
        for i in 0..40 {
            assert!(un.upper[i] - un.lower[i] >= pw.upper[i] - pw.lower[i]);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn bands_nest_and_contain_point(seed in 0u64..1000, sd in 0.001f64..0.2, l1 in 0.55f64..0.9, dl in 0.01f64..0.09) {
            let p = curve(vec![0.05, 0.3, 0.5, 0.9, 0.98]);
            let draws = noisy_draws(&p.values, sd, 60, seed);
            for kind in [BandKind::Pointwise, BandKind::Uniform] {
                let lo = band(&p, &draws, &BandSpec { level: l1, kind }).unwrap().band.unwrap();
                let hi = band(&p, &draws, &BandSpec { level: l1 + dl, kind }).unwrap().band.unwrap();
                for i in 0..5 {
                    prop_assert!(lo.lower[i] <= p.values[i] && p.values[i] <= lo.upper[i]);
                    prop_assert!(hi.lower[i] <= lo.lower[i] + 1e-15 && lo.upper[i] <= hi.upper[i] + 1e-15);
                }
                let again = band(&p, &draws, &BandSpec { level: l1, kind }).unwrap();
                prop_assert_eq!(again.band.unwrap(), lo);
            }
        }
    }
}
