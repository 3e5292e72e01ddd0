//! Reference synthetic designs used by `selftest`, the default run config and
//! the acceptance tests.
//!
//! Both designs are gaussian_linear with α = 1/2 (so k = 1) and individual
//! heterogeneity only through a logistic location ρ_i with scale 70. The
//! belief location moves with public layoff risk and hours, the belief scale
//! with private promotion chances. Under these designs 1{P <= p} given x is an
//! exact logit in the default design map, so the estimator is correctly
//! specified.

use crate::dataset::{Attribute, EmployerPriv, EmployerPub, Scenario, SupportSpec};
use crate::dr_estimator::{DesignMap, Feature};
use crate::oracle_dgp::{DgpConfig, DgpKind, Loading, ScalarDist};
use crate::returns_engine::{Shift, XTilde};

/// Logistic scale of the individual location ρ_i.
pub const RHO_SCALE: f64 = 70.0;
pub const MU_A: f64 = -56.0;
pub const SIGMA_A: f64 = 40.0;
pub const SCALE_PROMO: f64 = 300.0;
pub const LOC_LAYOFF_PUB: f64 = 400.0;
pub const LOC_HOURS: f64 = 3.0;
/// Layoff(public) x promotion(private) location loading of design B.
pub const LOC_INTERACTION: f64 = 3000.0;

pub fn support() -> SupportSpec {
    SupportSpec {
        wage_min: 100.0,
        wage_max: 1700.0,
        wage_step: 50.0,
        employer_pub: vec![EmployerPub::Administration, EmployerPub::PublicFirm],
        employer_priv: vec![EmployerPriv::Sme, EmployerPriv::LargeFirm],
        hours_pub: vec![35.0, 40.0],
        hours_priv: vec![40.0, 50.0, 60.0],
        layoff_pub: vec![0.02, 0.05, 0.08, 0.10, 0.20, 0.30],
        layoff_priv: vec![0.02, 0.05, 0.08, 0.10, 0.20, 0.30],
        promo_pub: vec![0.1, 0.2, 0.3, 0.4, 0.5],
        promo_priv: vec![0.1, 0.2, 0.3, 0.4, 0.5],
    }
}

/// Design A: location-scale beliefs, rank-invariant heterogeneity.
pub fn design_a(n: usize) -> DgpConfig {
    DgpConfig {
        kind: DgpKind::GaussianLinear,
        alpha: ScalarDist::Fixed { value: 0.5 },
        beta: ScalarDist::Fixed { value: 1.0 },
        rho: ScalarDist::Logistic {
            loc: 0.0,
            scale: RHO_SCALE,
        },
        mu_a: MU_A,
        sigma_a: SIGMA_A,
        location_loadings: vec![
            Loading {
                feature: Feature::Attr(Attribute::LayoffPub),
                coef: LOC_LAYOFF_PUB,
            },
            Loading {
                feature: Feature::Attr(Attribute::HoursPub),
                coef: LOC_HOURS,
            },
            Loading {
                feature: Feature::Attr(Attribute::HoursPriv),
                coef: -LOC_HOURS,
            },
        ],
        scale_loadings: vec![Loading {
            feature: Feature::Attr(Attribute::PromoPriv),
            coef: SCALE_PROMO,
        }],
        t: 2,
        n,
        support: support(),
        ..DgpConfig::default()
    }
}

/// Design B: design A plus a layoff x promotion location term, so the
/// willingness-to-pay for public layoff risk varies across scenarios.
pub fn design_b(n: usize) -> DgpConfig {
    let mut cfg = design_a(n);
    cfg.location_loadings.push(Loading {
        feature: Feature::Product(Attribute::LayoffPub, Attribute::PromoPriv),
        coef: LOC_INTERACTION,
    });
    cfg
}

/// Design A on the narrower 300..1000 wage range, centered at 650/650. The
/// identified region then ends before F_Q gets within 1e-5 of 0 or 1, where
/// relative tail errors of the logit would dominate any band.
pub fn coverage_design(n: usize) -> DgpConfig {
    let mut cfg = design_a(n);
    cfg.support.wage_min = 300.0;
    cfg.support.wage_max = 1000.0;
    cfg
}

pub fn coverage_center() -> XTilde {
    vec![(
        Scenario {
            y0: 650.0,
            y1: 650.0,
            ..center_scenario()
        },
        1.0,
    )]
}

/// Default design map, plus the interaction design B needs.
pub fn design_b_map() -> DesignMap {
    DesignMap::with_extra(&[Feature::Product(Attribute::LayoffPub, Attribute::PromoPriv)])
}

/// Equal wages at 525, layoff 0.08 in both sectors, promotion 0.30 in both.
pub fn center_scenario() -> Scenario {
    Scenario {
        y0: 525.0,
        y1: 525.0,
        employer_pub: EmployerPub::Administration,
        employer_priv: EmployerPriv::Sme,
        hours_pub: 40.0,
        hours_priv: 50.0,
        layoff_pub: 0.08,
        layoff_priv: 0.08,
        promo_pub: 0.30,
        promo_priv: 0.30,
    }
}

pub fn center() -> XTilde {
    vec![(center_scenario(), 1.0)]
}

/// Wages 900/900 with private promotion spread evenly over 41 values in
/// [0.10, 0.50], so the spread of beliefs varies across the mixture.
pub fn promo_mixture() -> XTilde {
    (0..=40)
        .map(|k| {
            let promo_priv = 0.10 + 0.01 * k as f64;
            (
                Scenario {
                    y0: 900.0,
                    y1: 900.0,
                    promo_priv,
                    ..center_scenario()
                },
                1.0,
            )
        })
        .collect()
}

/// Raise public layoff risk by 0.12.
pub fn layoff_shift() -> Shift {
    Shift::single(Attribute::LayoffPub, 0.12)
}

/// Belief location of design A at x, excluding ρ_i.
pub fn location(x: &Scenario) -> f64 {
    x.y1 - x.y0 + MU_A + LOC_LAYOFF_PUB * x.layoff_pub + LOC_HOURS * (x.hours_pub - x.hours_priv)
}

pub fn scale(x: &Scenario) -> f64 {
    SIGMA_A + SCALE_PROMO * x.promo_priv
}

/// Closed-form F_Q(s; τ) of design A at a single scenario.
pub fn fq_closed_form(s: f64, tau: f64, x: &Scenario) -> f64 {
    let q = location(x) + scale(x) * crate::special::phi_inv(tau);
    1.0 / (1.0 + (-(s - q) / RHO_SCALE).exp())
}

/// 1 − τ for each τ, the thresholds every F_Q evaluation lands on.
pub fn tau_thresholds(taus: &[f64]) -> Vec<f64> {
    taus.iter().map(|t| 1.0 - t).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle_dgp::{draw_population, individual_quantile};

    #[test]
    fn closed_form_matches_oracle_quantiles() {
        let cfg = design_a(200);
        let pop = draw_population(&cfg, 3).unwrap();
        let x = center_scenario();
        for eta in pop.eta.iter().take(50) {
            let q = individual_quantile(0.25, &x, eta, &cfg).unwrap();
            let want = location(&x) + eta.rho + scale(&x) * crate::special::phi_inv(0.25);
            assert!((q - want).abs() < 1e-9);
        }
        assert!(support().contains(&x));
        assert!(promo_mixture().iter().all(|(x, _)| support().contains(x)));
        assert!(support().contains(&layoff_shift().apply(&x)));
    }
}
