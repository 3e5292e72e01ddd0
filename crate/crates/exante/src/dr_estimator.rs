//! Distribution regression: one penalized logit of `1{P <= p}` per threshold.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Attribute, Dataset, Scenario};

#[derive(Debug, Error)]
pub enum DrError {
    #[error("singular penalized normal equations at threshold p={threshold}")]
    Singular { threshold: f64 },
    #[error("too few records: {n} records for {dim} features")]
    TooFewRecords { n: usize, dim: usize },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid threshold grid: {0}")]
    InvalidGrid(String),
    #[error("invalid design map: {0}")]
    InvalidMap(String),
}

/// Wages enter the index divided by 100.
pub const WAGE_SCALE: f64 = 100.0;

fn standardized(x: &Scenario, a: Attribute) -> f64 {
    match a {
        Attribute::Y0 | Attribute::Y1 => x.get(a) / WAGE_SCALE,
        _ => x.get(a),
    }
}

/// One regressor built from a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Intercept,
    Attr(Attribute),
    Product(Attribute, Attribute),
}

impl Feature {
    pub fn eval(&self, x: &Scenario) -> f64 {
        match *self {
            Feature::Intercept => 1.0,
            Feature::Attr(a) => standardized(x, a),
            Feature::Product(a, b) => standardized(x, a) * standardized(x, b),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Feature::Intercept => "intercept".into(),
            Feature::Attr(a) => a.name().into(),
            Feature::Product(a, b) => format!("{a}*{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMap {
    pub features: Vec<Feature>,
}

impl Default for DesignMap {
    /// Intercept, both wages, their product, employer dummies, hours,
    /// layoff and promotion probabilities for both sectors.
    fn default() -> Self {
        use Attribute::*;
        let mut features = vec![
            Feature::Intercept,
            Feature::Attr(Y0),
            Feature::Attr(Y1),
            Feature::Product(Y0, Y1),
        ];
        for a in [
            EmployerPub,
            EmployerPriv,
            HoursPub,
            HoursPriv,
            LayoffPub,
            LayoffPriv,
            PromoPub,
            PromoPriv,
        ] {
            features.push(Feature::Attr(a));
        }
        DesignMap { features }
    }
}

impl DesignMap {
    pub fn intercept_only() -> Self {
        DesignMap {
            features: vec![Feature::Intercept],
        }
    }

    /// Default map plus extra terms appended at the end.
    pub fn with_extra(extra: &[Feature]) -> Self {
        let mut m = DesignMap::default();
        m.features.extend_from_slice(extra);
        m
    }

    pub fn validate(&self) -> Result<(), DrError> {
        if self.features.first() != Some(&Feature::Intercept) {
            return Err(DrError::InvalidMap(
                "first feature must be the intercept".into(),
            ));
        }
        if self.features[1..].contains(&Feature::Intercept) {
            return Err(DrError::InvalidMap("intercept listed twice".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn row_into(&self, x: &Scenario, out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.features) {
            *o = f.eval(x);
        }
    }
}

pub fn design_row(map: &DesignMap, x: &Scenario) -> Vec<f64> {
    map.features.iter().map(|f| f.eval(x)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    thresholds: Vec<f64>,
}

impl ThresholdGrid {
    /// Sorts, deduplicates and appends p = 1 when missing.
    pub fn new(mut p: Vec<f64>) -> Result<Self, DrError> {
        if p.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
            return Err(DrError::InvalidGrid("thresholds must lie in (0, 1]".into()));
        }
        p.sort_by(f64::total_cmp);
        p.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        if p.last().is_none_or(|&v| v < 1.0) {
            p.push(1.0);
        }
        Ok(ThresholdGrid { thresholds: p })
    }

    /// Empirical quantiles of the stated probabilities at 0.02, 0.04, ..., 0.98,
    /// merged with `extra`, plus p = 1.
    pub fn from_data(d: &Dataset, extra: &[f64]) -> Result<Self, DrError> {
        let mut p: Vec<f64> = d.records.iter().map(|r| r.p_stated).collect();
        p.sort_by(f64::total_cmp);
        let n = p.len();
        let mut out: Vec<f64> = (1..=49)
            .map(|k| {
                let level = 0.02 * k as f64;
                let idx = ((level * n as f64).ceil() as usize).clamp(1, n) - 1;
                p[idx]
            })
            .filter(|v| *v > 0.0)
            .collect();
        out.extend_from_slice(extra);
        ThresholdGrid::new(out)
    }

    /// Evenly spaced thresholds `step, 2 step, ..., 1`.
    pub fn uniform(step: f64) -> Result<Self, DrError> {
        if !(step > 0.0 && step <= 1.0) {
            return Err(DrError::InvalidGrid("step must lie in (0, 1]".into()));
        }
        let n = (1.0 / step).round() as usize;
        ThresholdGrid::new((1..=n).map(|k| (k as f64 * step).min(1.0)).collect())
    }

    pub fn union(&self, other: &ThresholdGrid) -> ThresholdGrid {
        let mut p = self.thresholds.clone();
        p.extend_from_slice(&other.thresholds);
        ThresholdGrid::new(p).expect("union of valid grids is valid")
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    /// Index of the largest threshold `<= p`, if any.
    pub fn index_at_or_below(&self, p: f64) -> Option<usize> {
        let k = self.thresholds.partition_point(|&t| t <= p + 1e-14);
        k.checked_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub ridge: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            ridge: 1e-6,
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdDiagnostics {
    pub threshold: f64,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub separated: bool,
    /// All indicators equal (0 or 1); the logit was not fitted.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrModel {
    pub map: DesignMap,
    pub grid: ThresholdGrid,
    /// One coefficient row per threshold.
    pub coef: Vec<Vec<f64>>,
    pub rearranged: bool,
    pub diagnostics: Vec<ThresholdDiagnostics>,
}

/// Fitted probabilities are kept in [CLAMP, 1 − CLAMP].
pub(crate) const CLAMP: f64 = 1e-6;
const SEPARATION_INDEX: f64 = 30.0;

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl DrModel {
    /// Fitted cdf values across the threshold grid at `x`: clamped, sorted when
    /// the model is rearranged, and 1 at p = 1.
    pub fn cdf_values(&self, x: &Scenario) -> Vec<f64> {
        let mut row = vec![0.0; self.map.dim()];
        let mut out = Vec::with_capacity(self.grid.len());
        self.cdf_values_into(x, &mut row, &mut out);
        out
    }

    pub fn cdf_values_into(&self, x: &Scenario, row: &mut [f64], out: &mut Vec<f64>) {
        self.map.row_into(x, row);
        out.clear();
        for (b, &p) in self.coef.iter().zip(self.grid.thresholds()) {
            if p >= 1.0 {
                out.push(1.0);
                continue;
            }
            let t: f64 = b.iter().zip(row.iter()).map(|(u, v)| u * v).sum();
            out.push(logistic(t).clamp(CLAMP, 1.0 - CLAMP));
        }
        if self.rearranged {
            out.sort_by(f64::total_cmp);
        }
    }

    pub fn coefficients_at(&self, k: usize) -> &[f64] {
        &self.coef[k]
    }
}

/// Marks the model for evaluation-time sorting of fitted values across p.
pub fn rearrange(m: &DrModel) -> DrModel {
    DrModel {
        rearranged: true,
        ..m.clone()
    }
}

/// Step (nearest-below) evaluation of F̂(p | x). `p <= 0` gives 0, `p >= 1` gives 1.
pub fn cdf_at(m: &DrModel, p: f64, x: &Scenario) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    match m.grid.index_at_or_below(p) {
        None => 0.0,
        Some(k) => m.cdf_values(x)[k],
    }
}

/// Smallest grid threshold whose fitted cdf reaches `a`.
pub fn quantile_at(m: &DrModel, a: f64, x: &Scenario) -> f64 {
    quantile_from_values(m.grid.thresholds(), &m.cdf_values(x), a)
}

pub(crate) fn quantile_from_values(grid: &[f64], values: &[f64], a: f64) -> f64 {
    let k = values.partition_point(|&v| v < a);
    grid[k.min(grid.len() - 1)]
}

/// Design matrix of a dataset, row-major.
#[derive(Debug, Clone)]
pub struct Design {
    pub n: usize,
    pub dim: usize,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

impl Design {
    pub fn new(d: &Dataset, map: &DesignMap) -> Design {
        let dim = map.dim();
        let mut x = vec![0.0; d.len() * dim];
        for (r, chunk) in d.records.iter().zip(x.chunks_mut(dim)) {
            map.row_into(&r.scenario, chunk);
        }
        Design {
            n: d.len(),
            dim,
            x,
            p: d.records.iter().map(|r| r.p_stated).collect(),
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }
}

struct ThresholdFit {
    coef: Vec<f64>,
    diag: ThresholdDiagnostics,
}

fn penalized_objective(
    design: &Design,
    y: &[f64],
    w: &[f64],
    b: &[f64],
    ridge: f64,
    eta: &mut [f64],
) -> (f64, f64) {
    let mut ll = 0.0;
    for i in 0..design.n {
        let t: f64 = design.row(i).iter().zip(b).map(|(u, v)| u * v).sum();
        eta[i] = t;
        if w[i] == 0.0 {
            continue;
        }
        // y log L(t) + (1 - y) log(1 - L(t))
        ll -= w[i] * (y[i] * softplus(-t) + (1.0 - y[i]) * softplus(t));
    }
    let pen: f64 = b[1..].iter().map(|v| v * v).sum::<f64>() * ridge;
    (ll - pen, ll)
}

fn fit_threshold(
    design: &Design,
    w: &[f64],
    p: f64,
    opts: &FitOptions,
    start: Option<&[f64]>,
) -> Result<ThresholdFit, DrError> {
    let dim = design.dim;
    let y: Vec<f64> = design
        .p
        .iter()
        .map(|&v| if v <= p { 1.0 } else { 0.0 })
        .collect();
    let sw: f64 = w.iter().sum();
    let sw1: f64 = w.iter().zip(&y).map(|(a, b)| a * b).sum();
    if sw1 <= 0.0 || sw1 >= sw {
        let mut coef = vec![0.0; dim];
        coef[0] = if sw1 <= 0.0 {
            -SEPARATION_INDEX
        } else {
            SEPARATION_INDEX
        };
        return Ok(ThresholdFit {
            coef,
            diag: ThresholdDiagnostics {
                threshold: p,
                loglik: 0.0,
                iterations: 0,
                converged: true,
                separated: true,
                degenerate: true,
            },
        });
    }
    let mut b = match start {
        Some(s) if s.iter().all(|v| v.is_finite()) && s[0].abs() < SEPARATION_INDEX => s.to_vec(),
        _ => {
            let share = sw1 / sw;
            let mut b = vec![0.0; dim];
            b[0] = (share / (1.0 - share)).ln();
            b
        }
    };
    let mut eta = vec![0.0; design.n];
    let (mut obj, mut ll) = penalized_objective(design, &y, w, &b, opts.ridge, &mut eta);
    let mut iterations = 0;
    let mut converged = false;
    let mut trial = vec![0.0; dim];
    let mut eta_trial = vec![0.0; design.n];
    while iterations < opts.max_iter {
        iterations += 1;
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let mut g = DVector::<f64>::zeros(dim);
        for i in 0..design.n {
            if w[i] == 0.0 {
                continue;
            }
            let mu = logistic(eta[i]);
            let wi = w[i] * mu * (1.0 - mu);
            let ri = w[i] * (y[i] - mu);
            let row = design.row(i);
            for a in 0..dim {
                g[a] += ri * row[a];
                let wa = wi * row[a];
                for c in a..dim {
                    h[(a, c)] += wa * row[c];
                }
            }
        }
        for a in 0..dim {
            for c in 0..a {
                h[(a, c)] = h[(c, a)];
            }
        }
        for a in 1..dim {
            h[(a, a)] += 2.0 * opts.ridge;
            g[a] -= 2.0 * opts.ridge * b[a];
        }
        let delta = match h.cholesky() {
            Some(ch) => ch.solve(&g),
            None => return Err(DrError::Singular { threshold: p }),
        };
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(DrError::Singular { threshold: p });
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            for a in 0..dim {
                trial[a] = b[a] + step * delta[a];
            }
            let (o, l) = penalized_objective(design, &y, w, &trial, opts.ridge, &mut eta_trial);
            if o >= obj - 1e-12 * obj.abs().max(1.0) {
                debug_assert!(
                    o >= obj - 1e-9 * obj.abs().max(1.0),
                    "penalized likelihood decreased"
                );
                obj = o;
                ll = l;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no ascent direction left at machine precision
            converged = true;
            break;
        }
        let change = delta.iter().map(|v| (v * step).abs()).fold(0.0, f64::max);
        b.copy_from_slice(&trial);
        std::mem::swap(&mut eta, &mut eta_trial);
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    // every weighted record on the side of the fitted boundary its indicator says
    let separated = (0..design.n).all(|i| w[i] == 0.0 || (y[i] == 1.0) == (eta[i] > 0.0));
    Ok(ThresholdFit {
        coef: b,
        diag: ThresholdDiagnostics {
            threshold: p,
            loglik: ll,
            iterations,
            converged,
            separated,
            degenerate: false,
        },
    })
}

fn check_weights(w: &[f64], n: usize) -> Result<(), DrError> {
    if w.len() != n {
        return Err(DrError::InvalidWeights(format!(
            "{} weights for {} records",
            w.len(),
            n
        )));
    }
    if w.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(DrError::InvalidWeights(
            "weights must be positive and finite".into(),
        ));
    }
    Ok(())
}

/// Fits every threshold on a prebuilt design. `start` warm-starts each
/// threshold from a previous coefficient matrix.
pub fn fit_design(
    design: &Design,
    grid: &ThresholdGrid,
    map: &DesignMap,
    weights: Option<&[f64]>,
    opts: &FitOptions,
    start: Option<&[Vec<f64>]>,
) -> Result<DrModel, DrError> {
    map.validate()?;
    if design.n < map.dim() + 1 {
        return Err(DrError::TooFewRecords {
            n: design.n,
            dim: map.dim(),
        });
    }
    let unit;
    let w = match weights {
        Some(w) => {
            check_weights(w, design.n)?;
            w
        }
        None => {
            unit = vec![1.0; design.n];
            &unit
        }
    };
    let mut coef = Vec::with_capacity(grid.len());
    let mut diagnostics = Vec::with_capacity(grid.len());
    let mut prev: Option<Vec<f64>> = None;
    for (k, &p) in grid.thresholds().iter().enumerate() {
        let s = start.map(|s| s[k].as_slice()).or(prev.as_deref());
        let fit = fit_threshold(design, w, p, opts, s)?;
        if !fit.diag.degenerate {
            prev = Some(fit.coef.clone());
        }
        coef.push(fit.coef);
        diagnostics.push(fit.diag);
    }
    Ok(DrModel {
        map: map.clone(),
        grid: grid.clone(),
        coef,
        rearranged: false,
        diagnostics,
    })
}

/// Per-record weights are optional; `None` means unit weights.
pub fn fit_dr(
    d: &Dataset,
    grid: &ThresholdGrid,
    map: &DesignMap,
    weights: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<DrModel, DrError> {
    fit_design(&Design::new(d, map), grid, map, weights, opts, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapWeights {
    Exponential,
    /// Every weight 1; replicates reproduce the main fit.
    Unit,
}

#[derive(Debug, Clone)]
pub struct BootstrapResult {
    pub models: Vec<DrModel>,
    /// Replicate index and error of refits that failed.
    pub dropped: Vec<(usize, String)>,
}

/// Respondent-level weights for replicate `b`, expanded to records.
pub fn replicate_weights(d: &Dataset, seed: u64, b: usize, mode: BootstrapWeights) -> Vec<f64> {
    let (idx, n_resp) = d.respondent_index();
    let per: Vec<f64> = match mode {
        BootstrapWeights::Unit => vec![1.0; n_resp],
        BootstrapWeights::Exponential => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            (0..n_resp)
                .map(|_| {
                    let e: f64 = Exp1.sample(&mut rng);
                    e.max(1e-12)
                })
                .collect()
        }
    };
    idx.into_iter().map(|i| per[i]).collect()
}

/// Weighted-bootstrap refits warm-started from `main`.
pub fn bootstrap_from(
    main: &DrModel,
    d: &Dataset,
    b: usize,
    seed: u64,
    mode: BootstrapWeights,
    opts: &FitOptions,
) -> BootstrapResult {
    let design = Design::new(d, &main.map);
    let results: Vec<Result<DrModel, DrError>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let w = replicate_weights(d, seed, r, mode);
            fit_design(
                &design,
                &main.grid,
                &main.map,
                Some(&w),
                opts,
                Some(&main.coef),
            )
            .map(|m| DrModel {
                rearranged: main.rearranged,
                ..m
            })
        })
        .collect();
    let mut models = Vec::with_capacity(b);
    let mut dropped = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(m) => models.push(m),
            Err(e) => dropped.push((r, e.to_string())),
        }
    }
    BootstrapResult { models, dropped }
}

pub fn bootstrap_fits(
    d: &Dataset,
    grid: &ThresholdGrid,
    map: &DesignMap,
    b: usize,
    seed: u64,
    opts: &FitOptions,
) -> Result<BootstrapResult, DrError> {
    if b == 0 {
        return Ok(BootstrapResult {
            models: Vec::new(),
            dropped: Vec::new(),
        });
    }
    let main = rearrange(&fit_dr(d, grid, map, None, opts)?);
    Ok(bootstrap_from(
        &main,
        d,
        b,
        seed,
        BootstrapWeights::Exponential,
        opts,
    ))
}

/// Fit diagnostics as CSV: threshold, loglik, iterations, converged, separated, degenerate.
pub fn diagnostics_csv(m: &DrModel) -> String {
    let mut s = String::from("threshold,loglik,iterations,converged,separated,degenerate\n");
    for d in &m.diagnostics {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            d.threshold, d.loglik, d.iterations, d.converged, d.separated, d.degenerate
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ChoiceRecord, EmployerPriv, EmployerPub, SupportSpec};
    use proptest::prelude::*;
    use rand::Rng;

    fn scenario(y0: f64, y1: f64) -> Scenario {
        Scenario {
            y0,
            y1,
            employer_pub: EmployerPub::Administration,
            employer_priv: EmployerPriv::Sme,
            hours_pub: 40.0,
            hours_priv: 40.0,
            layoff_pub: 0.05,
            layoff_priv: 0.1,
            promo_pub: 0.1,
            promo_priv: 0.1,
        }
    }

    /// Logit-generated probabilities over random scenarios.
    fn toy_dataset(n: usize, seed: u64) -> Dataset {
        let support = SupportSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut recs = Vec::new();
        for i in 0..n {
            let u: f64 = rng.random();
            let rho = (u / (1.0 - u)).ln() * 60.0;
            for t in 1..=2 {
                let x = support.sample(&mut rng);
                let z = (x.y1 - x.y0 + rho + 300.0 * (x.layoff_pub - x.layoff_priv)) / 80.0;
                let p = statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2) / 2.0;
                recs.push(ChoiceRecord {
                    respondent_id: format!("r{i}"),
                    scenario_index: t,
                    scenario: x,
                    p_stated: p,
                });
            }
        }
        Dataset::new(recs, support).unwrap()
    }

    #[test]
    fn default_map_has_twelve_features() {
        let m = DesignMap::default();
        assert_eq!(m.dim(), 12);
        let r = design_row(&m, &scenario(750.0, 750.0));
        assert_eq!(r.len(), 12);
        assert_eq!(r[0], 1.0);
        assert_eq!(r[3], 7.5 * 7.5);
        assert_eq!(r, design_row(&m, &scenario(750.0, 750.0)));
        m.validate().unwrap();
        assert!(DesignMap {
            features: vec![Feature::Attr(Attribute::Y0)]
        }
        .validate()
        .is_err());
    }

    #[test]
    fn grid_construction() {
        let g = ThresholdGrid::new(vec![0.5, 0.2, 0.2]).unwrap();
        assert_eq!(g.thresholds(), &[0.2, 0.5, 1.0]);
        assert!(ThresholdGrid::new(vec![0.0]).is_err());
        assert_eq!(g.index_at_or_below(0.1), None);
        assert_eq!(g.index_at_or_below(0.2), Some(0));
        assert_eq!(g.index_at_or_below(0.7), Some(1));
        let u = ThresholdGrid::uniform(0.25).unwrap();
        assert_eq!(u.thresholds(), &[0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn heaped_data_gives_few_thresholds() {
        let mut d = toy_dataset(100, 1);
        for r in d.records.iter_mut() {
            r.p_stated = (r.p_stated * 2.0).round() / 2.0;
        }
        let g = ThresholdGrid::from_data(&d, &[]).unwrap();
        assert!(g.len() <= 2, "{:?}", g.thresholds());
        assert_eq!(*g.thresholds().last().unwrap(), 1.0);
    }

    #[test]
    fn intercept_only_matches_share() {
        let d = toy_dataset(300, 2);
        let g = ThresholdGrid::from_data(&d, &[0.5]).unwrap();
        let opts = FitOptions {
            ridge: 0.0,
            ..FitOptions::default()
        };
        let m = rearrange(&fit_dr(&d, &g, &DesignMap::intercept_only(), None, &opts).unwrap());
        let x = scenario(500.0, 600.0);
        for &p in g.thresholds() {
            let share =
                d.records.iter().filter(|r| r.p_stated <= p).count() as f64 / d.len() as f64;
            let share = if p < 1.0 {
                share.clamp(CLAMP, 1.0 - CLAMP)
            } else {
                share
            };
            assert!(
                (cdf_at(&m, p, &x) - share).abs() < 1e-6,
                "p={p} {} {share}",
                cdf_at(&m, p, &x)
            );
            assert_eq!(cdf_at(&m, p, &x), cdf_at(&m, p, &scenario(900.0, 300.0)));
        }
    }

    #[test]
    fn p_one_threshold_is_one() {
        let d = toy_dataset(200, 3);
        let g = ThresholdGrid::from_data(&d, &[]).unwrap();
        let m = fit_dr(&d, &g, &DesignMap::default(), None, &FitOptions::default()).unwrap();
        let last = m.diagnostics.last().unwrap();
        assert!(last.degenerate);
        assert_eq!(cdf_at(&m, 1.0, &scenario(300.0, 1000.0)), 1.0);
        assert_eq!(cdf_at(&m, 0.0, &scenario(300.0, 1000.0)), 0.0);
    }

    #[test]
    fn weight_scale_invariance() {
        let d = toy_dataset(200, 4);
        let g = ThresholdGrid::from_data(&d, &[]).unwrap();
        let map = DesignMap::default();
        let opts = FitOptions {
            ridge: 0.0,
            ..FitOptions::default()
        };
        let a = fit_dr(&d, &g, &map, None, &opts).unwrap();
        let b = fit_dr(&d, &g, &map, Some(&vec![2.0; d.len()]), &opts).unwrap();
        for (ra, rb) in a.coef.iter().zip(&b.coef) {
            for (u, v) in ra.iter().zip(rb) {
                assert!((u - v).abs() < 1e-8, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn rejects_bad_weights_and_small_samples() {
        let d = toy_dataset(50, 5);
        let g = ThresholdGrid::from_data(&d, &[]).unwrap();
        let map = DesignMap::default();
        let err = fit_dr(
            &d,
            &g,
            &map,
            Some(&vec![0.0; d.len()]),
            &FitOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, DrError::InvalidWeights(_)));
        let small = Dataset::new(d.records[..5].to_vec(), d.support.clone()).unwrap();
        assert!(matches!(
            fit_dr(&small, &g, &map, None, &FitOptions::default()),
            Err(DrError::TooFewRecords { .. })
        ));
    }

    #[test]
    fn rearrangement_sorts_values() {
        let grid = ThresholdGrid::new(vec![0.2, 0.5, 0.8]).unwrap();
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let m = DrModel {
            map: DesignMap::intercept_only(),
            grid,
            coef: vec![
                vec![logit(0.3)],
                vec![logit(0.2)],
                vec![logit(0.5)],
                vec![0.0],
            ],
            rearranged: false,
            diagnostics: Vec::new(),
        };
        let x = scenario(500.0, 500.0);
        let raw = m.cdf_values(&x);
        assert!((raw[0] - 0.3).abs() < 1e-12 && (raw[1] - 0.2).abs() < 1e-12);
        let r = rearrange(&m);
        let v = r.cdf_values(&x);
        assert!(
            (v[0] - 0.2).abs() < 1e-12 && (v[1] - 0.3).abs() < 1e-12 && (v[2] - 0.5).abs() < 1e-12
        );
        assert_eq!(rearrange(&r).cdf_values(&x), v);
    }

    #[test]
    fn step_quantile_inversion() {
        let grid = ThresholdGrid::new(vec![0.2, 0.5, 0.8]).unwrap();
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let m = rearrange(&DrModel {
            map: DesignMap::intercept_only(),
            grid,
            coef: vec![
                vec![logit(0.1)],
                vec![logit(0.6)],
                vec![logit(0.9)],
                vec![0.0],
            ],
            rearranged: false,
            diagnostics: Vec::new(),
        });
        let x = scenario(500.0, 500.0);
        assert_eq!(quantile_at(&m, 0.5, &x), 0.5);
        assert_eq!(quantile_at(&m, 0.95, &x), 1.0);
        assert_eq!(quantile_at(&m, 0.05, &x), 0.2);
        assert!((cdf_at(&m, 0.6, &x) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariance() {
        let d = toy_dataset(300, 6);
        let g = ThresholdGrid::from_data(&d, &[]).unwrap();
        let map = DesignMap::default();
        let a = fit_dr(&d, &g, &map, None, &FitOptions::default()).unwrap();
        let mut rev = d.clone();
        rev.records.reverse();
        let b = fit_dr(&rev, &g, &map, None, &FitOptions::default()).unwrap();
        for (ra, rb) in a.coef.iter().zip(&b.coef) {
            for (u, v) in ra.iter().zip(rb) {
                assert!((u - v).abs() < 1e-10, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn bootstrap_basics() {
        let d = toy_dataset(150, 7);
        let g = ThresholdGrid::from_data(&d, &[]).unwrap();
        let map = DesignMap::default();
        let opts = FitOptions::default();
        assert!(bootstrap_fits(&d, &g, &map, 0, 1, &opts)
            .unwrap()
            .models
            .is_empty());
        let main = rearrange(&fit_dr(&d, &g, &map, None, &opts).unwrap());
        let unit = bootstrap_from(&main, &d, 2, 9, BootstrapWeights::Unit, &opts);
        for m in &unit.models {
            for (ra, rb) in m.coef.iter().zip(&main.coef) {
                for (u, v) in ra.iter().zip(rb) {
                    assert!((u - v).abs() < 1e-8);
                }
            }
        }
        let a = bootstrap_from(&main, &d, 3, 11, BootstrapWeights::Exponential, &opts);
        let b = bootstrap_from(&main, &d, 3, 11, BootstrapWeights::Exponential, &opts);
        assert_eq!(a.models, b.models);
        assert_ne!(a.models[0].coef, a.models[1].coef);
    }

    #[test]
    fn weights_shared_within_respondent() {
        let d = toy_dataset(20, 8);
        let w = replicate_weights(&d, 5, 0, BootstrapWeights::Exponential);
        for pair in w.chunks(2) {
            assert_eq!(pair[0], pair[1]);
        }
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!(mean > 0.3 && mean < 3.0);
    }

    #[test]
    fn json_round_trip() {
        let d = toy_dataset(100, 9);
        let g = ThresholdGrid::from_data(&d, &[]).unwrap();
        let m = rearrange(
            &fit_dr(&d, &g, &DesignMap::default(), None, &FitOptions::default()).unwrap(),
        );
        let s = serde_json::to_string(&m).unwrap();
        let back: DrModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(diagnostics_csv(&m).lines().count() == g.len() + 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn rearranged_cdf_monotone_and_galois(
            y0 in 300.0f64..1000.0, y1 in 300.0f64..1000.0, a in 0.001f64..0.999, p in 0.0f64..1.0
        ) {
            let m = fitted_model();
            let x = scenario(y0, y1);
            let v = m.cdf_values(&x);
            for w in v.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            let q = quantile_at(&m, a, &x);
            prop_assert!(cdf_at(&m, q, &x) >= a);
            let c = cdf_at(&m, p, &x);
            prop_assert!((0.0..=1.0).contains(&c));
        }
    }

    fn fitted_model() -> &'static DrModel {
        static M: std::sync::OnceLock<DrModel> = std::sync::OnceLock::new();
        M.get_or_init(|| {
            let d = toy_dataset(400, 10);
            let g = ThresholdGrid::from_data(&d, &[]).unwrap();
            rearrange(&fit_dr(&d, &g, &DesignMap::default(), None, &FitOptions::default()).unwrap())
        })
    }
}
