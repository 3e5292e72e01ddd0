//! Synthetic data-generating processes with brute-force ground truth.
//!
//! Two regimes. `gaussian_linear` has linear utility (β = 1) and a normal
//! belief over the amenity difference d = a1 − a0, so S = y1 − y0 + k·d with
//! k = (1 − α)/α. The belief location is μ_a + ρ_i + Σ γ_j f_j(z) and its
//! scale σ_a + Σ κ_j f_j(z). `ces_lognormal` has CES utility with a bivariate
//! lognormal amenity belief whose log-correlation is the individual's ρ_i.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ChoiceRecord, Dataset, DatasetError, Scenario, SupportSpec};
use crate::dr_estimator::Feature;
use crate::policy::{self, CostTable, PolicyError, WeightScheme};
use crate::quadrature::{hermite_512, hermite_64};
use crate::returns_engine::{
    check_x_tilde, weighted_ecdf, ReturnsCurve, ReturnsError, Shift, XTilde,
};
use crate::special::{logistic_quantile, normal_interval, phi, phi_inv};

#[derive(Debug, Error)]
pub enum DgpError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("nonpositive CES base {base} at draw (a0={a0}, a1={a1}, alpha={alpha}, beta={beta}); 1/beta power undefined")]
    NonPositiveBase {
        base: f64,
        a0: f64,
        a1: f64,
        alpha: f64,
        beta: f64,
    },
    #[error("nonpositive belief scale {0}")]
    NonPositiveScale(f64),
    #[error("quantile search failed: {0}")]
    Quantile(String),
    #[error(transparent)]
    Scenario(#[from] DatasetError),
    #[error(transparent)]
    Returns(#[from] ReturnsError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum ScalarDist {
    Fixed { value: f64 },
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
    Logistic { loc: f64, scale: f64 },
}

impl ScalarDist {
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            ScalarDist::Fixed { value } => value,
            ScalarDist::Uniform { lo, hi } => lo + (hi - lo) * u,
            ScalarDist::Normal { mean, sd } => mean + sd * phi_inv(u),
            ScalarDist::Logistic { loc, scale } => loc + scale * logistic_quantile(u),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ScalarDist::Fixed { value } => value,
            ScalarDist::Uniform { lo, hi } => 0.5 * (lo + hi),
            ScalarDist::Normal { mean, .. } => mean,
            ScalarDist::Logistic { loc, .. } => loc,
        }
    }

    /// Closed range of attainable values.
    pub fn range(&self) -> (f64, f64) {
        match *self {
            ScalarDist::Fixed { value } => (value, value),
            ScalarDist::Uniform { lo, hi } => (lo, hi),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    fn validate(&self, name: &str) -> Result<(), DgpError> {
        let ok = match *self {
            ScalarDist::Fixed { value } => value.is_finite(),
            ScalarDist::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            ScalarDist::Normal { mean, sd } => mean.is_finite() && sd > 0.0 && sd.is_finite(),
            ScalarDist::Logistic { loc, scale } => {
                loc.is_finite() && scale > 0.0 && scale.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(DgpError::Config(format!(
                "invalid distribution for {name}: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpKind {
    GaussianLinear,
    CesLognormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Loading {
    pub feature: Feature,
    pub coef: f64,
}

/// Lognormal amenity belief for the CES regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CesAmenity {
    pub log_mean0: f64,
    pub log_mean1: f64,
    pub log_sd0: f64,
    pub log_sd1: f64,
}

impl Default for CesAmenity {
    fn default() -> Self {
        CesAmenity {
            log_mean0: 0.0,
            log_mean1: 0.0,
            log_sd0: 0.5,
            log_sd1: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub kind: DgpKind,
    pub alpha: ScalarDist,
    pub beta: ScalarDist,
    pub rho: ScalarDist,
    pub mu_a: f64,
    pub sigma_a: f64,
    /// Attribute effects on the belief location (log a1 mean for CES).
    pub location_loadings: Vec<Loading>,
    /// Attribute effects on the belief scale (gaussian_linear only).
    pub scale_loadings: Vec<Loading>,
    pub ces: CesAmenity,
    /// Drive α, β and ρ by one latent uniform per respondent.
    pub rank_coupled: bool,
    pub t: usize,
    pub n: usize,
    pub support: SupportSpec,
    /// Round stated probabilities to the nearest 0.05.
    pub rounding: bool,
    pub signed_power: bool,
    pub brute_force_m: usize,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            kind: DgpKind::GaussianLinear,
            alpha: ScalarDist::Fixed { value: 0.5 },
            beta: ScalarDist::Fixed { value: 1.0 },
            rho: ScalarDist::Fixed { value: 0.0 },
            mu_a: 0.0,
            sigma_a: 100.0,
            location_loadings: Vec::new(),
            scale_loadings: Vec::new(),
            ces: CesAmenity::default(),
            rank_coupled: false,
            t: 2,
            n: 1000,
            support: SupportSpec::default(),
            rounding: false,
            signed_power: false,
            brute_force_m: 200_000,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<(), DgpError> {
        if self.n == 0 || self.t == 0 {
            return Err(DgpError::Config("n and t must be at least 1".into()));
        }
        if !(self.sigma_a > 0.0) {
            return Err(DgpError::Config("sigma_a must be positive".into()));
        }
        self.alpha.validate("alpha")?;
        self.beta.validate("beta")?;
        self.rho.validate("rho")?;
        let (alo, ahi) = self.alpha.range();
        if !(alo > 0.0 && ahi < 1.0) {
            return Err(DgpError::Config(
                "alpha must lie in (0,1) almost surely".into(),
            ));
        }
        self.support.validate()?;
        if self.kind == DgpKind::CesLognormal {
            let (blo, bhi) = self.beta.range();
            if !blo.is_finite() || !bhi.is_finite() {
                return Err(DgpError::Config("beta needs a bounded distribution".into()));
            }
            if self.signed_power {
                if blo <= 0.0 && bhi >= 0.0 {
                    return Err(DgpError::Config("beta = 0 is not allowed".into()));
                }
            } else if !(blo > 0.0 && bhi <= 1.0) {
                return Err(DgpError::Config(
                    "beta must lie in (0,1] with lognormal amenities unless signed_power is set"
                        .into(),
                ));
            }
            let (rlo, rhi) = self.rho.range();
            if !(rlo >= -1.0 && rhi <= 1.0) {
                return Err(DgpError::Config(
                    "rho is a correlation and must lie in [-1,1]".into(),
                ));
            }
            let c = &self.ces;
            if !(c.log_sd0 >= 0.0 && c.log_sd1 >= 0.0) {
                return Err(DgpError::Config(
                    "amenity log-sd must be nonnegative".into(),
                ));
            }
            if !self.scale_loadings.is_empty() {
                return Err(DgpError::Config(
                    "scale loadings apply to gaussian_linear only".into(),
                ));
            }
        }
        Ok(())
    }

    fn location_shift(&self, x: &Scenario) -> f64 {
        self.location_loadings
            .iter()
            .map(|l| l.coef * l.feature.eval(x))
            .sum()
    }

    fn scale_at(&self, x: &Scenario) -> Result<f64, DgpError> {
        let s = self.sigma_a
            + self
                .scale_loadings
                .iter()
                .map(|l| l.coef * l.feature.eval(x))
                .sum::<f64>();
        if s > 0.0 {
            Ok(s)
        } else {
            Err(DgpError::NonPositiveScale(s))
        }
    }
}

/// Individual traits η = (α, β, ρ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eta {
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
}

impl Eta {
    pub fn k(&self) -> f64 {
        (1.0 - self.alpha) / self.alpha
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationDraw {
    pub seed: u64,
    pub eta: Vec<Eta>,
}

fn open_uniform(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.random::<u64>() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

fn respondent_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

fn draw_eta(cfg: &DgpConfig, seed: u64, i: usize) -> Eta {
    let mut rng = respondent_rng(seed, i);
    let u = open_uniform(&mut rng);
    let (ub, ur) = if cfg.rank_coupled {
        (u, u)
    } else {
        (open_uniform(&mut rng), open_uniform(&mut rng))
    };
    let beta = match cfg.kind {
        DgpKind::GaussianLinear => 1.0,
        DgpKind::CesLognormal => cfg.beta.quantile(ub),
    };
    Eta {
        alpha: cfg.alpha.quantile(u),
        beta,
        rho: cfg.rho.quantile(ur),
    }
}

pub fn draw_population(cfg: &DgpConfig, seed: u64) -> Result<PopulationDraw, DgpError> {
    cfg.validate()?;
    Ok(PopulationDraw {
        seed,
        eta: (0..cfg.n).map(|i| draw_eta(cfg, seed, i)).collect(),
    })
}

fn draw_many(cfg: &DgpConfig, m: usize, seed: u64) -> Vec<Eta> {
    (0..m).map(|i| draw_eta(cfg, seed, i)).collect()
}

/// Mean and sd of S in the gaussian_linear regime.
fn gaussian_moments(cfg: &DgpConfig, x: &Scenario, eta: &Eta) -> Result<(f64, f64), DgpError> {
    let k = eta.k();
    let loc = cfg.mu_a + eta.rho + cfg.location_shift(x);
    let sc = cfg.scale_at(x)?;
    Ok((x.y1 - x.y0 + k * loc, k * sc))
}

fn spow(x: f64, p: f64) -> f64 {
    x.signum() * x.abs().powf(p)
}

const NEGLIGIBLE_NODE: f64 = 1e-12;

struct Ces {
    beta: f64,
    k: f64,
    y0: f64,
    y1: f64,
    m0: f64,
    m1: f64,
    s0: f64,
    s1: f64,
    rho: f64,
    signed: bool,
}

type Intervals = Vec<(f64, f64)>;

impl Ces {
    fn new(cfg: &DgpConfig, x: &Scenario, eta: &Eta) -> Ces {
        Ces {
            beta: eta.beta,
            k: eta.k(),
            y0: x.y0,
            y1: x.y1,
            m0: cfg.ces.log_mean0,
            m1: cfg.ces.log_mean1 + cfg.location_shift(x),
            s0: cfg.ces.log_sd0,
            s1: cfg.ces.log_sd1,
            rho: eta.rho.clamp(-1.0, 1.0),
            signed: cfg.signed_power,
        }
    }

    /// Income equivalent E with U(E, a0) = U(y1, a1), from the CES base
    /// y1^β + k(a1^β − a0^β). S = E − y0.
    fn equivalent(&self, base: f64) -> f64 {
        if self.signed {
            spow(base, 1.0 / self.beta)
        } else if base <= 0.0 {
            f64::NEG_INFINITY
        } else {
            base.powf(1.0 / self.beta)
        }
    }

    /// Base values with E <= c.
    fn le_set(&self, c: f64) -> Intervals {
        let b = self.beta;
        if b > 0.0 {
            if self.signed {
                vec![(f64::NEG_INFINITY, spow(c, b))]
            } else if c > 0.0 {
                vec![(f64::NEG_INFINITY, c.powf(b))]
            } else {
                vec![(f64::NEG_INFINITY, 0.0)]
            }
        } else if c > 0.0 {
            vec![(f64::NEG_INFINITY, 0.0), (c.powf(b), f64::INFINITY)]
        } else if c < 0.0 {
            vec![(-(c.abs().powf(b)), 0.0)]
        } else {
            vec![(f64::NEG_INFINITY, 0.0)]
        }
    }

    /// Base values with E >= c.
    fn ge_set(&self, c: f64) -> Intervals {
        let b = self.beta;
        if b > 0.0 {
            if self.signed {
                vec![(spow(c, b), f64::INFINITY)]
            } else if c > 0.0 {
                vec![(c.powf(b), f64::INFINITY)]
            } else {
                vec![(0.0, f64::INFINITY)]
            }
        } else if c > 0.0 {
            vec![(0.0, c.powf(b))]
        } else if c < 0.0 {
            vec![
                (f64::NEG_INFINITY, -(c.abs().powf(b))),
                (0.0, f64::INFINITY),
            ]
        } else {
            vec![(0.0, f64::INFINITY)]
        }
    }

    /// Pr(A + slope·a^β ∈ set) with log a ~ N(mean, sd).
    fn prob_in(&self, set: &Intervals, a: f64, slope: f64, mean: f64, sd: f64) -> f64 {
        if sd <= 1e-300 {
            let base = a + slope * (self.beta * mean).exp();
            return f64::from(u8::from(
                set.iter().any(|&(lo, hi)| base >= lo && base <= hi),
            ));
        }
        let mut p = 0.0;
        for &(lo, hi) in set {
            let (vl, vh) = if slope > 0.0 {
                ((lo - a) / slope, (hi - a) / slope)
            } else {
                ((hi - a) / slope, (lo - a) / slope)
            };
            let vl = vl.max(0.0);
            if !(vh > vl) {
                continue;
            }
            let (ll, lu) = if self.beta > 0.0 {
                (vl.ln() / self.beta, vh.ln() / self.beta)
            } else {
                (vh.ln() / self.beta, vl.ln() / self.beta)
            };
            p += normal_interval((ll - mean) / sd, (lu - mean) / sd);
        }
        p.min(1.0)
    }

    /// E[g(z)] over a standard normal: Gauss–Hermite when the conditional law
    /// is nondegenerate, a fine midpoint rule when it is an indicator in z.
    fn outer(&self, cond_sd: f64, mut g: impl FnMut(f64) -> f64) -> f64 {
        if cond_sd > 1e-300 {
            hermite_512().expect_std_normal(g)
        } else {
            let n = 40_000;
            let (lo, hi) = (-9.0, 9.0);
            let h = (hi - lo) / n as f64;
            let mut acc = 0.0;
            let mut mass = 0.0;
            for i in 0..n {
                let z = lo + (i as f64 + 0.5) * h;
                let w = (-0.5 * z * z).exp();
                acc += w * g(z);
                mass += w;
            }
            acc / mass
        }
    }

    /// m = Pr(E >= y0), integrating over log a0 and conditioning log a1 on it.
    fn demand(&self, c: f64) -> f64 {
        let set = self.ge_set(c);
        let cond_sd = self.s1 * (1.0 - self.rho * self.rho).max(0.0).sqrt();
        let y1b = spow(self.y1, self.beta);
        self.outer(cond_sd, |z| {
            let a0b = (self.beta * (self.m0 + self.s0 * z)).exp();
            let mean1 = self.m1 + self.s1 * self.rho * z;
            self.prob_in(&set, y1b - self.k * a0b, self.k, mean1, cond_sd)
        })
    }

    /// Pr(E <= c), integrating over log a1 and conditioning log a0 on it.
    fn cdf(&self, c: f64) -> f64 {
        let set = self.le_set(c);
        let cond_sd = self.s0 * (1.0 - self.rho * self.rho).max(0.0).sqrt();
        let y1b = spow(self.y1, self.beta);
        self.outer(cond_sd, |z| {
            let a1b = (self.beta * (self.m1 + self.s1 * z)).exp();
            let mean0 = self.m0 + self.s0 * self.rho * z;
            self.prob_in(&set, y1b + self.k * a1b, -self.k, mean0, cond_sd)
        })
    }

    fn base(&self, a0: f64, a1: f64) -> f64 {
        spow(self.y1, self.beta) + self.k * (a1.powf(self.beta) - a0.powf(self.beta))
    }

    fn realized(&self, a0: f64, a1: f64, alpha: f64) -> Result<f64, DgpError> {
        let base = self.base(a0, a1);
        if !self.signed && base <= 0.0 {
            return Err(DgpError::NonPositiveBase {
                base,
                a0,
                a1,
                alpha,
                beta: self.beta,
            });
        }
        Ok(self.equivalent(base) - self.y0)
    }

    /// Nested 64×64 Gauss–Hermite mean of S. A nonpositive base at a node
    /// with non-negligible weight is an error: the mean does not exist.
    fn mean(&self, alpha: f64) -> Result<f64, DgpError> {
        let rule = hermite_64();
        let norm = std::f64::consts::PI;
        let sq2 = std::f64::consts::SQRT_2;
        let cs = (1.0 - self.rho * self.rho).max(0.0).sqrt();
        let mut acc = 0.0;
        for (u, wu) in rule.nodes.iter().zip(&rule.weights) {
            if *wu == 0.0 {
                continue;
            }
            for (v, wv) in rule.nodes.iter().zip(&rule.weights) {
                if *wv == 0.0 {
                    continue;
                }
                let z0 = sq2 * u;
                let z1 = self.rho * z0 + cs * sq2 * v;
                let a0 = (self.m0 + self.s0 * z0).exp();
                let a1 = (self.m1 + self.s1 * z1).exp();
                let w = wu * wv / norm;
                match self.realized(a0, a1, alpha) {
                    Ok(s) => acc += w * s,
                    // nodes far in the tails carry no numerical weight
                    Err(_) if w < NEGLIGIBLE_NODE => {}
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(acc)
    }
}

/// Stated probability of choosing option 1.
pub fn stated_demand_m(x: &Scenario, eta: &Eta, cfg: &DgpConfig) -> Result<f64, DgpError> {
    if !(x.y0 > 0.0 && x.y1 > 0.0) {
        return Err(DgpError::Config(format!(
            "wages must be positive, got y0={} y1={}",
            x.y0, x.y1
        )));
    }
    match cfg.kind {
        DgpKind::GaussianLinear => {
            let (mean, sd) = gaussian_moments(cfg, x, eta)?;
            Ok(phi(mean / sd))
        }
        DgpKind::CesLognormal => Ok(Ces::new(cfg, x, eta).demand(x.y0)),
    }
}

/// F_{S,i}(s; x): the individual's belief cdf of S, computed directly from the
/// belief distribution (not through the stated demand).
pub fn individual_cdf(s: f64, x: &Scenario, eta: &Eta, cfg: &DgpConfig) -> Result<f64, DgpError> {
    match cfg.kind {
        DgpKind::GaussianLinear => {
            let (mean, sd) = gaussian_moments(cfg, x, eta)?;
            Ok(phi((s - mean) / sd))
        }
        DgpKind::CesLognormal => Ok(Ces::new(cfg, x, eta).cdf(x.y0 + s)),
    }
}

/// Q_{S,i}(τ; x). May be −∞ for CES beliefs with mass on a nonpositive base.
pub fn individual_quantile(
    tau: f64,
    x: &Scenario,
    eta: &Eta,
    cfg: &DgpConfig,
) -> Result<f64, DgpError> {
    match cfg.kind {
        DgpKind::GaussianLinear => {
            let (mean, sd) = gaussian_moments(cfg, x, eta)?;
            Ok(mean + sd * phi_inv(tau))
        }
        DgpKind::CesLognormal => {
            let ces = Ces::new(cfg, x, eta);
            let f = |s: f64| ces.cdf(x.y0 + s);
            let scale = x.y0.max(x.y1).max(1.0);
            let mut lo = if cfg.signed_power { -scale } else { -x.y0 };
            if f(lo) >= tau {
                if !cfg.signed_power {
                    return Ok(f64::NEG_INFINITY);
                }
                let mut n = 0;
                while f(lo) >= tau {
                    lo *= 2.0;
                    n += 1;
                    if n > 200 {
                        return Err(DgpError::Quantile("no lower bracket".into()));
                    }
                }
            }
            let mut hi = scale;
            let mut n = 0;
            while f(hi) < tau {
                hi = hi * 2.0 + scale;
                n += 1;
                if n > 200 {
                    return Err(DgpError::Quantile("no upper bracket".into()));
                }
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(mid) >= tau {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if hi - lo < 1e-9 * scale {
                    break;
                }
            }
            Ok(hi)
        }
    }
}

/// μ_S(x, η): mean of the individual's belief distribution of S.
pub fn individual_mean(x: &Scenario, eta: &Eta, cfg: &DgpConfig) -> Result<f64, DgpError> {
    match cfg.kind {
        DgpKind::GaussianLinear => Ok(gaussian_moments(cfg, x, eta)?.0),
        DgpKind::CesLognormal => Ces::new(cfg, x, eta).mean(eta.alpha),
    }
}

/// One draw of S from the individual's belief distribution (a realized η*).
pub fn realized_return(
    x: &Scenario,
    eta: &Eta,
    cfg: &DgpConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64, DgpError> {
    match cfg.kind {
        DgpKind::GaussianLinear => {
            let (mean, sd) = gaussian_moments(cfg, x, eta)?;
            let z: f64 = rng.sample(StandardNormal);
            Ok(mean + sd * z)
        }
        DgpKind::CesLognormal => {
            let ces = Ces::new(cfg, x, eta);
            let z0: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            let z1 = ces.rho * z0 + (1.0 - ces.rho * ces.rho).max(0.0).sqrt() * e;
            let a0 = (ces.m0 + ces.s0 * z0).exp();
            let a1 = (ces.m1 + ces.s1 * z1).exp();
            ces.realized(a0, a1, eta.alpha)
        }
    }
}

/// T scenarios per respondent drawn from the support, independently of η.
pub fn simulate_survey(
    pop: &PopulationDraw,
    cfg: &DgpConfig,
    seed: u64,
) -> Result<Dataset, DgpError> {
    cfg.validate()?;
    let mut records = Vec::with_capacity(pop.eta.len() * cfg.t);
    for (i, eta) in pop.eta.iter().enumerate() {
        let mut rng = respondent_rng(seed, i);
        for t in 0..cfg.t {
            let x = cfg.support.sample(&mut rng);
            let mut p = stated_demand_m(&x, eta, cfg)?;
            if cfg.rounding {
                p = (p * 20.0).round() / 20.0;
            }
            records.push(ChoiceRecord {
                respondent_id: (i + 1).to_string(),
                scenario_index: (t + 1) as u32,
                scenario: x,
                p_stated: p,
            });
        }
    }
    Ok(Dataset::new(records, cfg.support.clone())?)
}

fn brute_force<F>(
    cfg: &DgpConfig,
    x_tilde: &XTilde,
    grid: &[f64],
    m: usize,
    seed: u64,
    f: F,
) -> Result<Vec<f64>, DgpError>
where
    F: Fn(&Scenario, &Eta) -> Result<f64, DgpError>,
{
    cfg.validate()?;
    check_x_tilde(x_tilde)?;
    let m = m.max(1);
    let draws = draw_many(cfg, m, seed);
    let mut pts = Vec::with_capacity(m * x_tilde.len());
    for (x, mass) in x_tilde {
        for eta in &draws {
            pts.push((f(x, eta)?, mass / m as f64));
        }
    }
    Ok(weighted_ecdf(pts, grid))
}

/// F_Q(s; τ) = Pr(Q_{S,i}(τ; X̃) <= s) by direct simulation of η.
pub fn true_fq(
    cfg: &DgpConfig,
    tau: f64,
    s_grid: &[f64],
    x_tilde: &XTilde,
    m: usize,
    seed: u64,
) -> Result<ReturnsCurve, DgpError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(DgpError::Config(format!("tau={tau} outside (0,1)")));
    }
    let v = brute_force(cfg, x_tilde, s_grid, m, seed, |x, eta| {
        individual_quantile(tau, x, eta, cfg)
    })?;
    Ok(ReturnsCurve::new("true_fq", Some(tau), s_grid.to_vec(), v))
}

pub fn true_dist_mu(
    cfg: &DgpConfig,
    x_tilde: &XTilde,
    y_grid: &[f64],
    m: usize,
    seed: u64,
) -> Result<ReturnsCurve, DgpError> {
    let v = brute_force(cfg, x_tilde, y_grid, m, seed, |x, eta| {
        individual_mean(x, eta, cfg)
    })?;
    Ok(ReturnsCurve::new("true_mu", None, y_grid.to_vec(), v))
}

pub fn true_dist_iqr(
    cfg: &DgpConfig,
    x_tilde: &XTilde,
    tau1: f64,
    tau2: f64,
    y_grid: &[f64],
    m: usize,
    seed: u64,
) -> Result<ReturnsCurve, DgpError> {
    let v = brute_force(cfg, x_tilde, y_grid, m, seed, |x, eta| {
        Ok(individual_quantile(tau2, x, eta, cfg)? - individual_quantile(tau1, x, eta, cfg)?)
    })?;
    Ok(ReturnsCurve::new(
        "true_iqr",
        Some(tau2 - tau1),
        y_grid.to_vec(),
        v,
    ))
}

/// Distribution of Q_{S,i}(τ; x + h) − Q_{S,i}(τ; x) for the same η.
pub fn true_dist_qwtp(
    cfg: &DgpConfig,
    x_tilde: &XTilde,
    h: &Shift,
    tau: f64,
    y_grid: &[f64],
    m: usize,
    seed: u64,
) -> Result<ReturnsCurve, DgpError> {
    let v = brute_force(cfg, x_tilde, y_grid, m, seed, |x, eta| {
        Ok(individual_quantile(tau, &h.apply(x), eta, cfg)?
            - individual_quantile(tau, x, eta, cfg)?)
    })?;
    Ok(ReturnsCurve::new(
        "true_qwtp",
        Some(tau),
        y_grid.to_vec(),
        v,
    ))
}

pub fn true_dist_mwtp(
    cfg: &DgpConfig,
    x_tilde: &XTilde,
    h: &Shift,
    y_grid: &[f64],
    m: usize,
    seed: u64,
) -> Result<ReturnsCurve, DgpError> {
    let v = brute_force(cfg, x_tilde, y_grid, m, seed, |x, eta| {
        Ok(individual_mean(&h.apply(x), eta, cfg)? - individual_mean(x, eta, cfg)?)
    })?;
    Ok(ReturnsCurve::new("true_mwtp", None, y_grid.to_vec(), v))
}

#[derive(Debug, Clone)]
pub struct TruePolicy {
    pub fs: ReturnsCurve,
    pub table: CostTable,
    pub elasticity: f64,
}

/// Brute-force F_S, cost table and cost elasticity for a weight scheme.
#[allow(clippy::too_many_arguments)]
pub fn true_policy_objects(
    cfg: &DgpConfig,
    x_tilde: &XTilde,
    weights: &WeightScheme,
    s_grid: &[f64],
    x_grid: &[f64],
    m: usize,
    seed: u64,
) -> Result<TruePolicy, DgpError> {
    let curves = weights
        .taus
        .iter()
        .map(|&tau| true_fq(cfg, tau, s_grid, x_tilde, m, seed))
        .collect::<Result<Vec<_>, DgpError>>()?;
    let fs = policy::predict_fs(&curves, weights)?;
    let wage = policy::baseline_wage(x_tilde);
    let table = policy::transfer_cost_curve(&fs, x_grid, wage)?;
    let elasticity = policy::cost_elasticity(&table)?;
    Ok(TruePolicy {
        fs,
        table,
        elasticity,
    })
}
