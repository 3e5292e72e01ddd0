//! Identified return distributions from a fitted distribution regression.
//!
//! For a scenario x and a shift s of the option-0 wage, t(s, x) raises y0 by s.
//! F_Q(s; τ) averages F̂(1 − τ | t(s, x)) over the scenario distribution X̃.
//! The rank-a individual's mean, τ-quantile and interquantile range of S are
//! integrals over s of the quantile response q(t(s, x), a).

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{in_identified_region, Attribute, Dataset, Scenario, SupportSpec};
use crate::dr_estimator::{cdf_at, quantile_from_values, DrError, DrModel};
use crate::isotonic::pava;

#[derive(Debug, Error)]
pub enum ReturnsError {
    #[error("scenario distribution is empty")]
    EmptyXTilde,
    #[error("scenario masses must be positive and finite")]
    InvalidMass,
    #[error("tau={0} outside (0,1)")]
    InvalidTau(f64),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("no respondent answered two scenarios; qWTP and mWTP need two elicitations per respondent (just ask them twice)")]
    Gate,
    #[error("{n} rank pairs are too few for a {bins}x{bins} checkerboard copula (need {need}); use the independence or comonotone copula")]
    TooFewPairs { n: usize, bins: usize, need: usize },
    #[error(transparent)]
    Dr(#[from] DrError),
}

/// Finite scenario distribution: (scenario, mass) atoms.
pub type XTilde = Vec<(Scenario, f64)>;

pub fn check_x_tilde(x_tilde: &XTilde) -> Result<(), ReturnsError> {
    if x_tilde.is_empty() {
        return Err(ReturnsError::EmptyXTilde);
    }
    if x_tilde.iter().any(|(_, m)| !(*m > 0.0) || !m.is_finite()) {
        return Err(ReturnsError::InvalidMass);
    }
    Ok(())
}

fn normalized(x_tilde: &XTilde) -> Result<Vec<(Scenario, f64)>, ReturnsError> {
    check_x_tilde(x_tilde)?;
    let total: f64 = x_tilde.iter().map(|a| a.1).sum();
    Ok(x_tilde.iter().map(|(x, m)| (*x, m / total)).collect())
}

/// Attribute shift h, applied additively (employer dummies flip).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Shift {
    pub changes: Vec<(Attribute, f64)>,
}

impl Shift {
    pub fn zero() -> Shift {
        Shift::default()
    }

    pub fn single(attr: Attribute, delta: f64) -> Shift {
        Shift {
            changes: vec![(attr, delta)],
        }
    }

    pub fn apply(&self, x: &Scenario) -> Scenario {
        self.changes
            .iter()
            .fold(*x, |acc, &(a, d)| acc.shifted(a, d))
    }

    pub fn is_zero(&self) -> bool {
        self.changes.iter().all(|c| c.1 == 0.0)
    }
}

/// Grid of option-0 wage shifts, tied to the support that defines the
/// identified region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SGrid {
    values: Vec<f64>,
    pub support: SupportSpec,
}

impl SGrid {
    pub fn new(values: Vec<f64>, support: SupportSpec) -> Result<SGrid, ReturnsError> {
        if values.len() < 2 || values.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ReturnsError::Grid(
                "s-grid must be strictly increasing with at least two points".into(),
            ));
        }
        if !values.contains(&0.0) {
            return Err(ReturnsError::Grid("s-grid must contain 0".into()));
        }
        Ok(SGrid { values, support })
    }

    /// Multiples of `step` within [lo, hi].
    pub fn uniform(
        lo: f64,
        hi: f64,
        step: f64,
        support: SupportSpec,
    ) -> Result<SGrid, ReturnsError> {
        if !(step > 0.0) || !(lo <= 0.0 && hi >= 0.0) {
            return Err(ReturnsError::Grid(format!(
                "need step > 0 and lo <= 0 <= hi, got [{lo}, {hi}] step {step}"
            )));
        }
        let a = (lo / step).ceil() as i64;
        let b = (hi / step).floor() as i64;
        SGrid::new((a..=b).map(|k| k as f64 * step).collect(), support)
    }

    /// Spans [wage_min − max y0, wage_max − min y0] over the scenario distribution.
    pub fn for_support(
        support: &SupportSpec,
        x_tilde: &XTilde,
        step: f64,
    ) -> Result<SGrid, ReturnsError> {
        check_x_tilde(x_tilde)?;
        let y0max = x_tilde
            .iter()
            .map(|a| a.0.y0)
            .fold(f64::NEG_INFINITY, f64::max);
        let y0min = x_tilde.iter().map(|a| a.0.y0).fold(f64::INFINITY, f64::min);
        SGrid::uniform(
            support.wage_min - y0max,
            support.wage_max - y0min,
            step,
            support.clone(),
        )
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True where t(s, x) lies in the support.
    pub fn mask(&self, x: &Scenario) -> Vec<bool> {
        self.values
            .iter()
            .map(|&s| in_identified_region(&self.support, s, x))
            .collect()
    }

    /// Trapezoid node weights.
    pub fn node_weights(&self) -> Vec<f64> {
        let s = &self.values;
        let n = s.len();
        (0..n)
            .map(|i| {
                let lo = if i == 0 { s[0] } else { s[i - 1] };
                let hi = if i + 1 == n { s[n - 1] } else { s[i + 1] };
                0.5 * (hi - lo)
            })
            .collect()
    }

    /// t(s, x) with y0 + s clamped to the wage range (flat extrapolation).
    fn evaluation_point(&self, x: &Scenario, s: f64) -> Scenario {
        let y0 = (x.y0 + s).clamp(self.support.wage_min, self.support.wage_max);
        Scenario { y0, ..*x }
    }
}

/// Default a-grid: 100 midpoints 0.005, 0.015, ..., 0.995.
pub fn a_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect()
}

/// Multiples of `step` in [lo, hi].
pub fn uniform_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let a = (lo / step).ceil() as i64;
    let b = (hi / step).floor() as i64;
    (a..=b).map(|k| k as f64 * step).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandKind {
    Pointwise,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
    pub kind: BandKind,
    /// Normal quantile (pointwise) or bootstrap sup-t quantile (uniform).
    pub critical: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnsCurve {
    pub label: String,
    pub param: Option<f64>,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub extrapolated: Vec<bool>,
    pub band: Option<Band>,
    pub warnings: Vec<String>,
}

impl ReturnsCurve {
    pub fn new(label: &str, param: Option<f64>, grid: Vec<f64>, values: Vec<f64>) -> ReturnsCurve {
        let n = grid.len();
        ReturnsCurve {
            label: label.into(),
            param,
            grid,
            values,
            extrapolated: vec![false; n],
            band: None,
            warnings: Vec::new(),
        }
    }

    /// Isotonic projection along the grid, then clipping to [0, 1].
    pub(crate) fn monotone(mut self) -> ReturnsCurve {
        self.values = pava(&self.values)
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
        self
    }

    /// Linear interpolation, flat outside the grid.
    pub fn value_at(&self, y: f64) -> f64 {
        let g = &self.grid;
        let k = g.partition_point(|&v| v <= y);
        if k == 0 {
            return self.values[0];
        }
        if k == g.len() {
            return self.values[g.len() - 1];
        }
        let t = (y - g[k - 1]) / (g[k] - g[k - 1]);
        self.values[k - 1] + t * (self.values[k] - self.values[k - 1])
    }
}

/// Sup-distance between two curves on the points where `mask` holds.
pub fn sup_distance(a: &[f64], b: &[f64], mask: Option<&[bool]>) -> f64 {
    a.iter()
        .zip(b)
        .enumerate()
        .filter(|(i, _)| mask.is_none_or(|m| m[*i]))
        .map(|(_, (u, v))| (u - v).abs())
        .fold(0.0, f64::max)
}

/// Weighted empirical cdf of `(value, weight)` points on `grid`.
pub(crate) fn weighted_ecdf(mut pts: Vec<(f64, f64)>, grid: &[f64]) -> Vec<f64> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pts.iter().map(|p| p.1).sum();
    let mut cum = Vec::with_capacity(pts.len());
    let mut acc = 0.0;
    for p in &pts {
        acc += p.1;
        cum.push(acc);
    }
    grid.iter()
        .map(|&y| {
            let k = pts.partition_point(|p| p.0 <= y);
            if k == 0 {
                0.0
            } else {
                (cum[k - 1] / total).min(1.0)
            }
        })
        .collect()
}

fn check_tau(tau: f64) -> Result<(), ReturnsError> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(ReturnsError::InvalidTau(tau))
    }
}

/// F_Q(s; τ) on the s-grid.
pub fn fq_curve(
    m: &DrModel,
    tau: f64,
    s_grid: &SGrid,
    x_tilde: &XTilde,
) -> Result<ReturnsCurve, ReturnsError> {
    check_tau(tau)?;
    let atoms = normalized(x_tilde)?;
    let n = s_grid.len();
    let parts: Vec<(Vec<f64>, Vec<bool>)> = atoms
        .par_iter()
        .map(|(x, mass)| {
            let mask = s_grid.mask(x);
            let v = s_grid
                .values()
                .iter()
                .map(|&s| mass * cdf_at(m, 1.0 - tau, &s_grid.evaluation_point(x, s)))
                .collect();
            (v, mask)
        })
        .collect();
    let mut values = vec![0.0; n];
    let mut extrapolated = vec![false; n];
    for (v, mask) in parts {
        for i in 0..n {
            values[i] += v[i];
            extrapolated[i] |= !mask[i];
        }
    }
    let mut c = ReturnsCurve::new("fq", Some(tau), s_grid.values().to_vec(), values).monotone();
    c.extrapolated = extrapolated;
    Ok(c)
}

/// Value of an s-integral with the integrand at both grid ends (truncation check).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AIntegral {
    pub value: f64,
    pub first: f64,
    pub last: f64,
}

/// Fitted cdf values of P across thresholds at every t(s, x), so that the
/// quantile response q(t(s, x), a) can be read off for many ranks a.
#[derive(Debug, Clone)]
pub struct Profile {
    s: Vec<f64>,
    weights: Vec<f64>,
    thresholds: Vec<f64>,
    values: Vec<f64>,
    pub extrapolated: Vec<bool>,
}

impl Profile {
    pub fn new(m: &DrModel, x: &Scenario, s_grid: &SGrid) -> Profile {
        let k = m.grid.len();
        let mut values = Vec::with_capacity(k * s_grid.len());
        let mut row = vec![0.0; m.map.dim()];
        let mut buf = Vec::with_capacity(k);
        for &s in s_grid.values() {
            m.cdf_values_into(&s_grid.evaluation_point(x, s), &mut row, &mut buf);
            values.extend_from_slice(&buf);
        }
        Profile {
            s: s_grid.values().to_vec(),
            weights: s_grid.node_weights(),
            thresholds: m.grid.thresholds().to_vec(),
            values,
            extrapolated: s_grid.mask(x).into_iter().map(|b| !b).collect(),
        }
    }

    fn q(&self, i: usize, a: f64) -> f64 {
        let k = self.thresholds.len();
        quantile_from_values(&self.thresholds, &self.values[i * k..(i + 1) * k], a)
    }

    fn integrate(&self, f: impl Fn(usize, f64) -> f64) -> AIntegral {
        let n = self.s.len();
        let mut value = 0.0;
        for i in 0..n {
            value += self.weights[i] * f(i, self.s[i]);
        }
        AIntegral {
            value,
            first: f(0, self.s[0]),
            last: f(n - 1, self.s[n - 1]),
        }
    }

    /// A^μ(x, a) = ∫ [q(t(s,x), a) − 1{s ≤ 0}] ds.
    pub fn a_mu(&self, a: f64) -> AIntegral {
        self.integrate(|i, s| self.q(i, a) - step(s))
    }

    /// A^τ(x, a) = ∫ [1{q(t(s,x), a) ≥ 1 − τ} − 1{s ≤ 0}] ds.
    pub fn a_tau(&self, a: f64, tau: f64) -> AIntegral {
        let c = 1.0 - tau;
        self.integrate(|i, s| f64::from(u8::from(self.q(i, a) >= c)) - step(s))
    }

    /// ∫ 1{1 − τ2 ≤ q < 1 − τ1} ds, half-open so that it equals
    /// a_tau(τ2) − a_tau(τ1) on the same grid.
    pub fn a_iqr(&self, a: f64, tau1: f64, tau2: f64) -> AIntegral {
        let (c1, c2) = (1.0 - tau1, 1.0 - tau2);
        self.integrate(|i, _| {
            let q = self.q(i, a);
            f64::from(u8::from(q >= c2)) - f64::from(u8::from(q >= c1))
        })
    }
}

fn step(s: f64) -> f64 {
    f64::from(u8::from(s <= 0.0))
}

pub fn a_mu(m: &DrModel, x: &Scenario, a: f64, s_grid: &SGrid) -> AIntegral {
    Profile::new(m, x, s_grid).a_mu(a)
}

pub fn a_tau(m: &DrModel, x: &Scenario, a: f64, tau: f64, s_grid: &SGrid) -> AIntegral {
    Profile::new(m, x, s_grid).a_tau(a, tau)
}

pub fn a_iqr(m: &DrModel, x: &Scenario, a: f64, tau1: f64, tau2: f64, s_grid: &SGrid) -> AIntegral {
    Profile::new(m, x, s_grid).a_iqr(a, tau1, tau2)
}

/// Integrands above this at a grid end mean the s-grid truncates mass.
const TRUNCATION_WARN: f64 = 1e-3;

fn truncation_warning(worst: f64) -> Option<String> {
    (worst > TRUNCATION_WARN).then(|| {
        format!("integrand reaches {worst:.4} at an s-grid end; the s-range truncates the integral")
    })
}

fn dist_over_ranks<F>(
    m: &DrModel,
    x_tilde: &XTilde,
    y_grid: &[f64],
    s_grid: &SGrid,
    a_grid: &[f64],
    label: &str,
    param: Option<f64>,
    f: F,
) -> Result<ReturnsCurve, ReturnsError>
where
    F: Fn(&Profile, f64) -> AIntegral + Sync,
{
    let atoms = normalized(x_tilde)?;
    if a_grid.is_empty() || a_grid.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(ReturnsError::Grid(
            "a-grid must be nonempty inside (0,1)".into(),
        ));
    }
    check_increasing(y_grid)?;
    let per_x: Vec<(Vec<(f64, f64)>, f64)> = atoms
        .par_iter()
        .map(|(x, mass)| {
            let p = Profile::new(m, x, s_grid);
            let w = mass / a_grid.len() as f64;
            let mut worst: f64 = 0.0;
            let pts = a_grid
                .iter()
                .map(|&a| {
                    let r = f(&p, a);
                    worst = worst.max(r.first.abs()).max(r.last.abs());
                    (r.value, w)
                })
                .collect();
            (pts, worst)
        })
        .collect();
    let worst = per_x.iter().map(|p| p.1).fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = per_x.into_iter().flat_map(|p| p.0).collect();
    let mut c =
        ReturnsCurve::new(label, param, y_grid.to_vec(), weighted_ecdf(pts, y_grid)).monotone();
    c.warnings.extend(truncation_warning(worst));
    Ok(c)
}

fn check_increasing(g: &[f64]) -> Result<(), ReturnsError> {
    if g.is_empty() || g.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(ReturnsError::Grid(
            "y-grid must be nonempty and strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Pr(μ_S(X, η) ≤ y) over the y-grid.
pub fn dist_mu(
    m: &DrModel,
    x_tilde: &XTilde,
    y_grid: &[f64],
    s_grid: &SGrid,
    a_grid: &[f64],
) -> Result<ReturnsCurve, ReturnsError> {
    dist_over_ranks(m, x_tilde, y_grid, s_grid, a_grid, "mu", None, |p, a| {
        p.a_mu(a)
    })
}

/// Pr(Q(τ2) − Q(τ1) ≤ y) over the y-grid.
#[allow(clippy::too_many_arguments)]
pub fn dist_iqr(
    m: &DrModel,
    x_tilde: &XTilde,
    tau1: f64,
    tau2: f64,
    y_grid: &[f64],
    s_grid: &SGrid,
    a_grid: &[f64],
) -> Result<ReturnsCurve, ReturnsError> {
    check_tau(tau1)?;
    check_tau(tau2)?;
    if !(tau1 < tau2) {
        return Err(ReturnsError::Grid(format!(
            "need tau1 < tau2, got {tau1} and {tau2}"
        )));
    }
    dist_over_ranks(
        m,
        x_tilde,
        y_grid,
        s_grid,
        a_grid,
        "iqr",
        Some(tau2 - tau1),
        |p, a| p.a_iqr(a, tau1, tau2),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PairRule {
    /// The two lowest scenario indices of each respondent.
    LowestIndices,
    /// Two given scenario indices; respondents missing either are skipped.
    Indices(u32, u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankPair {
    pub respondent_id: String,
    pub v1: f64,
    pub v2: f64,
    pub x1: Scenario,
    pub x2: Scenario,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankPairs {
    pub pairs: Vec<RankPair>,
}

/// V_k = F̂(P_k | X_k) for two scenarios per respondent.
pub fn pseudo_ranks(m: &DrModel, d: &Dataset, rule: &PairRule) -> Result<RankPairs, ReturnsError> {
    let (idx, n) = d.respondent_index();
    let mut by_resp: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (r, &i) in idx.iter().enumerate() {
        by_resp[i].push(r);
    }
    let mut pairs = Vec::new();
    for rows in by_resp {
        let pick = match rule {
            PairRule::LowestIndices => {
                if rows.len() < 2 {
                    continue;
                }
                let mut sorted = rows.clone();
                sorted.sort_by_key(|&r| d.records[r].scenario_index);
                Some((sorted[0], sorted[1]))
            }
            PairRule::Indices(i1, i2) => {
                let f = |k: u32| {
                    rows.iter()
                        .copied()
                        .find(|&r| d.records[r].scenario_index == k)
                };
                f(*i1).zip(f(*i2))
            }
        };
        let Some((r1, r2)) = pick else { continue };
        let (a, b) = (&d.records[r1], &d.records[r2]);
        pairs.push(RankPair {
            respondent_id: a.respondent_id.clone(),
            v1: cdf_at(m, a.p_stated, &a.scenario),
            v2: cdf_at(m, b.p_stated, &b.scenario),
            x1: a.scenario,
            x2: b.scenario,
        });
    }
    if pairs.is_empty() {
        return Err(ReturnsError::Gate);
    }
    Ok(RankPairs { pairs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CopulaKind {
    Independence,
    Comonotone,
    Empirical,
    Checkerboard,
}

/// Pooled copula of (V1, V2): m×m bin masses and the (v1, v2, mass)
/// representatives used for integration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaModel {
    pub kind: CopulaKind,
    pub bins: usize,
    /// Row-major, rows indexed by the V1 bin.
    pub masses: Vec<f64>,
    pub points: Vec<(f64, f64, f64)>,
    pub warnings: Vec<String>,
}

const REPRESENTATIVES: usize = 100;

impl CopulaModel {
    pub fn mass(&self, i: usize, j: usize) -> f64 {
        self.masses[i * self.bins + j]
    }

    /// Spearman's rho, 12 E[V1 V2] − 3, from the representatives.
    pub fn spearman(&self) -> f64 {
        12.0 * self.points.iter().map(|p| p.0 * p.1 * p.2).sum::<f64>() - 3.0
    }

    fn from_bins(
        kind: CopulaKind,
        bins: usize,
        masses: Vec<f64>,
        warnings: Vec<String>,
    ) -> CopulaModel {
        let r = REPRESENTATIVES.div_ceil(bins).max(1);
        let mut points = Vec::new();
        for i in 0..bins {
            for j in 0..bins {
                let w = masses[i * bins + j];
                if w <= 0.0 {
                    continue;
                }
                for u in 0..r {
                    for v in 0..r {
                        let v1 = (i as f64 + (u as f64 + 0.5) / r as f64) / bins as f64;
                        let v2 = (j as f64 + (v as f64 + 0.5) / r as f64) / bins as f64;
                        points.push((v1, v2, w / (r * r) as f64));
                    }
                }
            }
        }
        CopulaModel {
            kind,
            bins,
            masses,
            points,
            warnings,
        }
    }
}

fn bin_of(v: f64, m: usize) -> usize {
    ((v * m as f64).floor() as usize).min(m - 1)
}

/// Scales rows and columns until both margins are 1/m.
fn sinkhorn(masses: &mut [f64], m: usize) {
    let target = 1.0 / m as f64;
    for _ in 0..100_000 {
        for i in 0..m {
            let s: f64 = masses[i * m..(i + 1) * m].iter().sum();
            for v in &mut masses[i * m..(i + 1) * m] {
                *v *= target / s;
            }
        }
        let mut worst: f64 = 0.0;
        for j in 0..m {
            let s: f64 = (0..m).map(|i| masses[i * m + j]).sum();
            for i in 0..m {
                masses[i * m + j] *= target / s;
            }
        }
        for i in 0..m {
            let s: f64 = masses[i * m..(i + 1) * m].iter().sum();
            worst = worst.max((s - target).abs());
        }
        if worst < 1e-12 {
            break;
        }
    }
}

pub fn fit_copula(
    pairs: &RankPairs,
    kind: CopulaKind,
    bins: usize,
) -> Result<CopulaModel, ReturnsError> {
    if bins == 0 {
        return Err(ReturnsError::Grid("copula needs at least one bin".into()));
    }
    let m = bins;
    let n = pairs.pairs.len();
    match kind {
        CopulaKind::Independence => Ok(CopulaModel::from_bins(
            kind,
            m,
            vec![1.0 / (m * m) as f64; m * m],
            Vec::new(),
        )),
        CopulaKind::Comonotone => {
            let mut masses = vec![0.0; m * m];
            for i in 0..m {
                masses[i * m + i] = 1.0 / m as f64;
            }
            let points = a_grid(REPRESENTATIVES)
                .into_iter()
                .map(|a| (a, a, 1.0 / REPRESENTATIVES as f64))
                .collect();
            Ok(CopulaModel {
                kind,
                bins: m,
                masses,
                points,
                warnings: Vec::new(),
            })
        }
        CopulaKind::Empirical | CopulaKind::Checkerboard => {
            let need = 5 * m;
            if kind == CopulaKind::Checkerboard && n < need {
                return Err(ReturnsError::TooFewPairs { n, bins: m, need });
            }
            if n == 0 {
                return Err(ReturnsError::Gate);
            }
            let mut masses = vec![0.0; m * m];
            for p in &pairs.pairs {
                masses[bin_of(p.v1, m) * m + bin_of(p.v2, m)] += 1.0 / n as f64;
            }
            if kind == CopulaKind::Empirical {
                let points = pairs
                    .pairs
                    .iter()
                    .map(|p| (p.v1, p.v2, 1.0 / n as f64))
                    .collect();
                return Ok(CopulaModel {
                    kind,
                    bins: m,
                    masses,
                    points,
                    warnings: Vec::new(),
                });
            }
            let mut warnings = Vec::new();
            let empty_line = (0..m).any(|i| masses[i * m..(i + 1) * m].iter().sum::<f64>() == 0.0)
                || (0..m).any(|j| (0..m).map(|i| masses[i * m + j]).sum::<f64>() == 0.0);
            if empty_line {
                for v in &mut masses {
                    *v += 1e-6 / (m * m) as f64;
                }
                warnings.push(
                    "empty copula row or column; added 1e-6 uniform mass before balancing".into(),
                );
            }
            sinkhorn(&mut masses, m);
            Ok(CopulaModel::from_bins(kind, m, masses, warnings))
        }
    }
}

fn key(v: f64) -> u64 {
    v.to_bits()
}

#[allow(clippy::too_many_arguments)]
fn dist_wtp<F>(
    m: &DrModel,
    copula: &CopulaModel,
    x_tilde: &XTilde,
    h: &Shift,
    y_grid: &[f64],
    s_grid: &SGrid,
    label: &str,
    param: Option<f64>,
    f: F,
) -> Result<ReturnsCurve, ReturnsError>
where
    F: Fn(&Profile, f64) -> AIntegral + Sync,
{
    let atoms = normalized(x_tilde)?;
    check_increasing(y_grid)?;
    let per_x: Vec<(Vec<(f64, f64)>, f64, bool)> = atoms
        .par_iter()
        .map(|(x, mass)| {
            let xh = h.apply(x);
            let p0 = Profile::new(m, x, s_grid);
            let p1 = Profile::new(m, &xh, s_grid);
            let mut c0: HashMap<u64, f64> = HashMap::new();
            let mut c1: HashMap<u64, f64> = HashMap::new();
            let mut worst: f64 = 0.0;
            let mut pts = Vec::with_capacity(copula.points.len());
            for &(v1, v2, w) in &copula.points {
                let a0 = *c0.entry(key(v1)).or_insert_with(|| {
                    let r = f(&p0, v1);
                    worst = worst.max(r.first.abs()).max(r.last.abs());
                    r.value
                });
                let a1 = *c1.entry(key(v2)).or_insert_with(|| {
                    let r = f(&p1, v2);
                    worst = worst.max(r.first.abs()).max(r.last.abs());
                    r.value
                });
                pts.push((a1 - a0, mass * w));
            }
            (pts, worst, s_grid.support.contains(&xh))
        })
        .collect();
    let worst = per_x.iter().map(|p| p.1).fold(0.0, f64::max);
    let outside = per_x.iter().any(|p| !p.2);
    let pts: Vec<(f64, f64)> = per_x.into_iter().flat_map(|p| p.0).collect();
    let mut c =
        ReturnsCurve::new(label, param, y_grid.to_vec(), weighted_ecdf(pts, y_grid)).monotone();
    c.warnings.extend(truncation_warning(worst));
    if outside {
        c.warnings
            .push("x + h leaves the support for some scenario; values are extrapolated".into());
        c.extrapolated = vec![true; c.grid.len()];
    }
    Ok(c)
}

/// Pr(A^μ(x + h, V2) − A^μ(x, V1) ≤ y).
pub fn dist_mwtp(
    m: &DrModel,
    copula: &CopulaModel,
    x_tilde: &XTilde,
    h: &Shift,
    y_grid: &[f64],
    s_grid: &SGrid,
) -> Result<ReturnsCurve, ReturnsError> {
    dist_wtp(
        m,
        copula,
        x_tilde,
        h,
        y_grid,
        s_grid,
        "mwtp",
        None,
        |p, a| p.a_mu(a),
    )
}

/// Pr(A^τ(x + h, V2) − A^τ(x, V1) ≤ y).
#[allow(clippy::too_many_arguments)]
pub fn dist_qwtp(
    m: &DrModel,
    copula: &CopulaModel,
    x_tilde: &XTilde,
    h: &Shift,
    tau: f64,
    y_grid: &[f64],
    s_grid: &SGrid,
) -> Result<ReturnsCurve, ReturnsError> {
    check_tau(tau)?;
    dist_wtp(
        m,
        copula,
        x_tilde,
        h,
        y_grid,
        s_grid,
        "qwtp",
        Some(tau),
        |p, a| p.a_tau(a, tau),
    )
}

/// Curves as CSV with `#` metadata lines.
pub fn curves_csv(curves: &[ReturnsCurve], header: &[String]) -> String {
    let mut out = String::new();
    for h in header {
        out.push_str(&format!("# {h}\n"));
    }
    for c in curves {
        if let Some(b) = &c.band {
            let kind = match b.kind {
                BandKind::Pointwise => "pointwise",
                BandKind::Uniform => "uniform",
            };
            out.push_str(&format!(
                "# band {} {}: kind={kind} level={} critical={}\n",
                c.label,
                fmt_param(c.param),
                b.level,
                b.critical
            ));
        }
        for w in &c.warnings {
            out.push_str(&format!(
                "# warning {} {}: {w}\n",
                c.label,
                fmt_param(c.param)
            ));
        }
    }
    out.push_str("estimand,tau_or_level,grid_value,point,lower,upper,extrapolated\n");
    for c in curves {
        for i in 0..c.grid.len() {
            let (lo, hi) = match &c.band {
                Some(b) => (b.lower[i].to_string(), b.upper[i].to_string()),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.label,
                fmt_param(c.param),
                c.grid[i],
                c.values[i],
                lo,
                hi,
                u8::from(c.extrapolated[i])
            ));
        }
    }
    out
}

fn fmt_param(p: Option<f64>) -> String {
    p.map(|v| v.to_string()).unwrap_or_default()
}
