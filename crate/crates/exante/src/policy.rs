//! Predicted realized-return distributions and wage-transfer costs.
//!
//! F_S(s) = mean over τ of ω_τ F_Q(s; τ). Hiring x more workers into option 1
//! needs the transfer T(x) = F_S⁻¹[F_S(0) + x], paid to every hire, so the
//! wage bill goes from F_S(0)·w to (F_S(0) + x)(w + T(x)).

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, Continuous};
use thiserror::Error;

use crate::returns_engine::{ReturnsCurve, XTilde};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("probability {q} is below the curve's minimum {min}; left boundary of the attainable range [{min}, {max}]")]
    LeftBoundary { q: f64, min: f64, max: f64 },
    #[error("probability {q} is above the curve's maximum {max}; right boundary of the attainable range [{min}, {max}]")]
    RightBoundary { q: f64, min: f64, max: f64 },
    #[error("tau grid of the curves does not match the weight scheme")]
    TauMismatch,
    #[error("curves are on different grids")]
    GridMismatch,
    #[error("invalid weight parameters: {0}")]
    InvalidParams(String),
    #[error("cost table has no row at x = {0}")]
    MissingX(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightKind {
    Uniform,
    Beta {
        a: f64,
        b: f64,
    },
    /// All weight on one τ of the grid.
    PointMass {
        tau: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightScheme {
    pub name: String,
    pub kind: WeightKind,
    pub taus: Vec<f64>,
    /// ω_τ, mean 1 over the grid.
    pub weights: Vec<f64>,
}

/// τ = 0.05, 0.10, ..., 0.95.
pub fn default_taus() -> Vec<f64> {
    (1..=19).map(|k| k as f64 / 20.0).collect()
}

pub fn make_weights(
    name: &str,
    kind: WeightKind,
    taus: &[f64],
) -> Result<WeightScheme, PolicyError> {
    if taus.is_empty() || taus.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        return Err(PolicyError::InvalidParams(
            "tau grid must be nonempty inside (0,1)".into(),
        ));
    }
    let raw: Vec<f64> = match kind {
        WeightKind::Uniform => vec![1.0; taus.len()],
        WeightKind::Beta { a, b } => {
            if !(a > 0.0 && b > 0.0) {
                return Err(PolicyError::InvalidParams(format!(
                    "beta parameters must be positive, got ({a}, {b})"
                )));
            }
            let d = Beta::new(a, b).map_err(|e| PolicyError::InvalidParams(e.to_string()))?;
            taus.iter().map(|&t| d.pdf(t)).collect()
        }
        WeightKind::PointMass { tau } => {
            let k = taus
                .iter()
                .position(|t| (t - tau).abs() < 1e-12)
                .ok_or_else(|| {
                    PolicyError::InvalidParams(format!("point mass tau={tau} is not on the grid"))
                })?;
            (0..taus.len())
                .map(|i| f64::from(u8::from(i == k)))
                .collect()
        }
    };
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    if !(mean > 0.0) || !mean.is_finite() {
        return Err(PolicyError::InvalidParams(
            "weights vanish on the tau grid".into(),
        ));
    }
    let weights = if matches!(kind, WeightKind::Uniform) {
        raw
    } else {
        raw.iter().map(|w| w / mean).collect()
    };
    Ok(WeightScheme {
        name: name.into(),
        kind,
        taus: taus.to_vec(),
        weights,
    })
}

/// Uniform baseline, (2,2), (5,2) and the optimism correction (2,5).
pub fn default_schemes() -> Vec<WeightScheme> {
    let t = default_taus();
    [
        ("baseline", WeightKind::Uniform),
        ("tails_down", WeightKind::Beta { a: 2.0, b: 2.0 }),
        ("lower_tail_down", WeightKind::Beta { a: 5.0, b: 2.0 }),
        ("optimism_corrected", WeightKind::Beta { a: 2.0, b: 5.0 }),
    ]
    .into_iter()
    .map(|(n, k)| make_weights(n, k, &t).expect("default schemes are valid"))
    .collect()
}

/// Weighted τ-average of F_Q curves whose `param` is their τ.
pub fn predict_fs(curves: &[ReturnsCurve], w: &WeightScheme) -> Result<ReturnsCurve, PolicyError> {
    if curves.len() != w.taus.len() {
        return Err(PolicyError::TauMismatch);
    }
    for (c, t) in curves.iter().zip(&w.taus) {
        if c.param.is_none_or(|p| (p - t).abs() > 1e-12) {
            return Err(PolicyError::TauMismatch);
        }
        if c.grid != curves[0].grid {
            return Err(PolicyError::GridMismatch);
        }
    }
    let n = curves.len() as f64;
    let grid = curves[0].grid.clone();
    let values = (0..grid.len())
        .map(|i| {
            curves
                .iter()
                .zip(&w.weights)
                .map(|(c, wt)| wt * c.values[i])
                .sum::<f64>()
                / n
        })
        .collect();
    let extrapolated = (0..grid.len())
        .map(|i| curves.iter().any(|c| c.extrapolated[i]))
        .collect();
    let mut c = ReturnsCurve::new(&format!("fs_{}", w.name), None, grid, values).monotone();
    c.extrapolated = extrapolated;
    Ok(c)
}

/// Generalized inverse with linear interpolation between bracketing grid points.
pub fn invert_fs(fs: &ReturnsCurve, q: f64) -> Result<f64, PolicyError> {
    let v = &fs.values;
    let (min, max) = (v[0], v[v.len() - 1]);
    if q < min {
        return Err(PolicyError::LeftBoundary { q, min, max });
    }
    if q > max {
        return Err(PolicyError::RightBoundary { q, min, max });
    }
    let k = v.partition_point(|&u| u < q);
    if k == 0 {
        return Ok(fs.grid[0]);
    }
    let (v0, v1) = (v[k - 1], v[k]);
    let (s0, s1) = (fs.grid[k - 1], fs.grid[k]);
    Ok(s0 + (q - v0) / (v1 - v0) * (s1 - s0))
}

/// Mass-weighted option-0 wage of the scenario distribution.
pub fn baseline_wage(x_tilde: &XTilde) -> f64 {
    let total: f64 = x_tilde.iter().map(|a| a.1).sum();
    x_tilde.iter().map(|(x, m)| x.y0 * m).sum::<f64>() / total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub x: f64,
    /// Marginal transfer F_S⁻¹[F_S(0) + x] (kCFA).
    pub transfer: f64,
    /// (F_S(0) + x) · transfer, the shaded area.
    pub cost_area: f64,
    /// cost_area relative to the baseline bill F_S(0) · wage.
    pub cost_multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub f0: f64,
    pub wage: f64,
    pub rows: Vec<CostRow>,
}

pub fn transfer_cost_curve(
    fs: &ReturnsCurve,
    x_grid: &[f64],
    wage: f64,
) -> Result<CostTable, PolicyError> {
    if !(wage > 0.0) {
        return Err(PolicyError::InvalidParams(format!(
            "baseline wage must be positive, got {wage}"
        )));
    }
    if x_grid.iter().any(|x| !(*x >= 0.0)) {
        return Err(PolicyError::InvalidParams(
            "expansion shares must be nonnegative".into(),
        ));
    }
    let f0 = fs.value_at(0.0);
    let rows = x_grid
        .iter()
        .map(|&x| {
            let transfer = invert_fs(fs, f0 + x)?;
            let cost_area = (f0 + x) * transfer;
            Ok(CostRow {
                x,
                transfer,
                cost_area,
                cost_multiplier: cost_area / (f0 * wage),
            })
        })
        .collect::<Result<Vec<_>, PolicyError>>()?;
    Ok(CostTable { f0, wage, rows })
}

/// Percent change of the wage bill per percent change of hires at x = 0.01.
pub fn cost_elasticity(table: &CostTable) -> Result<f64, PolicyError> {
    let x = 0.01;
    let row = table
        .rows
        .iter()
        .find(|r| (r.x - x).abs() < 1e-12)
        .ok_or(PolicyError::MissingX(x))?;
    let bill0 = table.f0 * table.wage;
    let bill = (table.f0 + row.x) * (table.wage + row.transfer);
    Ok((bill / bill0 - 1.0) / (row.x / table.f0))
}

/// Cost tables as CSV: x, transfer_kcfa, cost_area, cost_multiplier, scheme.
pub fn cost_csv(tables: &[(String, CostTable)], header: &[String]) -> String {
    let mut out = String::new();
    for h in header {
        out.push_str(&format!("# {h}\n"));
    }
    for (name, t) in tables {
        out.push_str(&format!(
            "# scheme {name}: fs_at_zero={} wage={}\n",
            t.f0, t.wage
        ));
    }
    out.push_str("x,transfer_kcfa,cost_area,cost_multiplier,scheme\n");
    for (name, t) in tables {
        for r in &t.rows {
            out.push_str(&format!(
                "{},{},{},{},{name}\n",
                r.x, r.transfer, r.cost_area, r.cost_multiplier
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn uniform_fs() -> ReturnsCurve {
        let grid: Vec<f64> = (0..=200).map(|i| -1.0 + i as f64 * 0.01).collect();
        let values = grid.iter().map(|s| (s + 1.0) / 2.0).collect();
        ReturnsCurve::new("fs", None, grid, values)
    }

    fn fq(tau: f64, shift: f64) -> ReturnsCurve {
        let grid: Vec<f64> = (-50..=50).map(|i| i as f64).collect();
        let values = grid
            .iter()
            .map(|s| (1.0 / (1.0 + (-(s - shift) / 8.0).exp())).clamp(0.0, 1.0))
            .collect();
        ReturnsCurve::new("fq", Some(tau), grid, values)
    }

    fn curves(taus: &[f64]) -> Vec<ReturnsCurve> {
        taus.iter().map(|&t| fq(t, -20.0 + 40.0 * t)).collect()
    }

    #[test]
    fn weight_shapes() {
        let t = default_taus();
        let one = make_weights("b11", WeightKind::Beta { a: 1.0, b: 1.0 }, &t).unwrap();
        assert!(one.weights.iter().all(|w| (w - 1.0).abs() < 1e-12));
        let s = make_weights("b22", WeightKind::Beta { a: 2.0, b: 2.0 }, &t).unwrap();
        for i in 0..t.len() {
            assert!((s.weights[i] - s.weights[t.len() - 1 - i]).abs() < 1e-12);
        }
        assert!(s.weights[9] > s.weights[0] && s.weights[9] > 1.0);
        let o = make_weights("b25", WeightKind::Beta { a: 2.0, b: 5.0 }, &t).unwrap();
        assert!(o.weights[18] < o.weights[0] && o.weights[18] < 0.01);
        for w in [&s, &o] {
            assert!((w.weights.iter().sum::<f64>() / 19.0 - 1.0).abs() < 1e-12);
        }
        assert!(make_weights("bad", WeightKind::Beta { a: 0.0, b: 1.0 }, &t).is_err());
        assert!(make_weights("bad", WeightKind::PointMass { tau: 0.33 }, &t).is_err());
    }

    #[test]
    fn predict_fs_identities() {
        let t = default_taus();
        let cs = curves(&t);
        let u = predict_fs(&cs, &make_weights("u", WeightKind::Uniform, &t).unwrap()).unwrap();
        for i in 0..u.grid.len() {
            let avg = cs.iter().map(|c| c.values[i]).sum::<f64>() / 19.0;
            assert!((u.values[i] - avg).abs() < 1e-12);
        }
        let pm = predict_fs(
            &cs,
            &make_weights("pm", WeightKind::PointMass { tau: 0.5 }, &t).unwrap(),
        )
        .unwrap();
        for (a, b) in pm.values.iter().zip(&cs[9].values) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(matches!(
            predict_fs(
                &cs[1..],
                &make_weights("u", WeightKind::Uniform, &t).unwrap()
            ),
            Err(PolicyError::TauMismatch)
        ));
    }

    #[test]
    fn inversion_examples() {
        let fs = uniform_fs();
        assert!((invert_fs(&fs, 0.6).unwrap() - 0.2).abs() < 1e-12);
        assert!(matches!(
            invert_fs(&fs, -0.1),
            Err(PolicyError::LeftBoundary { .. })
        ));
        let err = invert_fs(&fs, 1.2).unwrap_err();
        assert!(err.to_string().contains("[0, 1]"));
        for i in [3, 50, 170] {
            let s = fs.grid[i];
            assert!((invert_fs(&fs, fs.values[i]).unwrap() - s).abs() <= 0.01);
        }
    }

    #[test]
    fn uniform_calibration() {
        let fs = uniform_fs();
        let w = 3.0;
        let t = transfer_cost_curve(&fs, &[0.0, 0.01, 0.1], w).unwrap();
        assert!((t.f0 - 0.5).abs() < 1e-12);
        assert!(t.rows[0].transfer.abs() < 1e-12);
        assert!((t.rows[2].transfer - 0.2).abs() < 1e-6);
        assert!((t.rows[2].cost_area - 0.12).abs() < 1e-6);
        let e = cost_elasticity(&t).unwrap();
        assert!((e - (1.0 + 1.02 / w)).abs() < 1e-6);
        assert!(matches!(
            transfer_cost_curve(&fs, &[0.6], w),
            Err(PolicyError::RightBoundary { .. })
        ));
        assert!(matches!(
            cost_elasticity(&transfer_cost_curve(&fs, &[0.1], w).unwrap()),
            Err(PolicyError::MissingX(_))
        ));
    }

    #[test]
    fn no_heterogeneity_elasticity_is_one() {
        let grid: Vec<f64> = (-100..=100).map(|i| i as f64 * 0.01).collect();
        let values = grid
            .iter()
            .map(|s| {
                if *s < 0.0 {
                    0.0
                } else if *s == 0.0 {
                    0.5
                } else {
                    1.0
                }
            })
            .collect();
        let fs = ReturnsCurve::new("fs", None, grid, values);
        let e = cost_elasticity(&transfer_cost_curve(&fs, &[0.01], 500.0).unwrap()).unwrap();
        assert!((e - 1.0).abs() < 1e-3);
    }

    #[test]
    fn lower_tau_mass_dominates() {
        let t = default_taus();
        let cs = curves(&t);
        let lo = predict_fs(
            &cs,
            &make_weights("a", WeightKind::Beta { a: 2.0, b: 5.0 }, &t).unwrap(),
        )
        .unwrap();
        let mid = predict_fs(
            &cs,
            &make_weights("b", WeightKind::Beta { a: 2.0, b: 2.0 }, &t).unwrap(),
        )
        .unwrap();
        let hi = predict_fs(
            &cs,
            &make_weights("c", WeightKind::Beta { a: 5.0, b: 2.0 }, &t).unwrap(),
        )
        .unwrap();
        for i in 0..lo.grid.len() {
            assert!(lo.values[i] >= mid.values[i] - 1e-12 && mid.values[i] >= hi.values[i] - 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn fs_bounded_and_costs_monotone(a in 0.5f64..6.0, b in 0.5f64..6.0) {
            let t = default_taus();
            let cs = curves(&t);
            let fs = predict_fs(&cs, &make_weights("p", WeightKind::Beta { a, b }, &t).unwrap()).unwrap();
            for i in 0..fs.grid.len() {
                let lo = cs.iter().map(|c| c.values[i]).fold(f64::INFINITY, f64::min);
                let hi = cs.iter().map(|c| c.values[i]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(fs.values[i] >= lo - 1e-12 && fs.values[i] <= hi + 1e-12);
            }
            let f0 = fs.value_at(0.0);
            let top = *fs.values.last().unwrap();
            let xs: Vec<f64> = (0..=20).map(|k| k as f64 * 0.01).filter(|x| f0 + x < top).collect();
            let table = transfer_cost_curve(&fs, &xs, 500.0).unwrap();
            for w in table.rows.windows(2) {
                prop_assert!(w[1].transfer >= w[0].transfer);
                prop_assert!(w[1].cost_area >= w[0].cost_area - 1e-12);
            }
        }
    }
}
