//! Oracle checks on the reference synthetic designs. Each check returns the
//! measured discrepancy; `run` compares them with tolerances, writes a report
//! and runs the full pipeline twice to confirm identical artifacts.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cli::{execute, manifest_of, stage_seed, write_file, CliError, Command};
use crate::config::RunConfig;
use crate::dataset::{ChoiceRecord, Dataset};
use crate::dr_estimator::{
    bootstrap_from, cdf_at, fit_dr, rearrange, BootstrapWeights, DesignMap, DrModel, FitOptions,
    ThresholdGrid,
};
use crate::inference::{uniform_band, BandSpec};
use crate::oracle_dgp::{
    self, draw_population, individual_cdf, simulate_survey, stated_demand_m, DgpConfig, DgpKind,
    Eta, ScalarDist,
};
use crate::policy::{self, make_weights, WeightKind};
use crate::returns_engine::{fq_curve, sup_distance, BandKind, ReturnsCurve, SGrid, XTilde};
use crate::synthetic;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    /// Pass when value <= tolerance, or value >= tolerance when `at_least`.
    pub at_least: bool,
    /// Non-gating checks are reported but do not fail the run.
    pub gating: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, tolerance: f64) -> Check {
        Check {
            name: name.into(),
            value,
            tolerance,
            at_least: false,
            gating: true,
        }
    }

    pub fn at_least(name: &str, value: f64, tolerance: f64) -> Check {
        Check {
            name: name.into(),
            value,
            tolerance,
            at_least: true,
            gating: true,
        }
    }

    pub fn passed(&self) -> bool {
        if self.at_least {
            self.value >= self.tolerance
        } else {
            self.value <= self.tolerance
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed() || !c.gating)
    }

    pub fn gating(&self) -> usize {
        self.checks.iter().filter(|c| c.gating).count()
    }

    pub fn failed_gating(&self) -> usize {
        self.checks
            .iter()
            .filter(|c| c.gating && !c.passed())
            .count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("check,value,tolerance,direction,gating,result\n");
        for c in &self.checks {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.name,
                c.value,
                c.tolerance,
                if c.at_least { ">=" } else { "<=" },
                c.gating,
                if c.passed() { "PASS" } else { "FAIL" }
            ));
        }
        s
    }
}

fn random_eta(rng: &mut ChaCha8Rng, kind: DgpKind) -> Eta {
    let alpha = rng.random_range(0.3..0.7);
    match kind {
        DgpKind::GaussianLinear => Eta {
            alpha,
            beta: 1.0,
            rho: rng.random_range(-150.0..150.0),
        },
        DgpKind::CesLognormal => Eta {
            alpha,
            beta: rng.random_range(0.3..0.9),
            rho: rng.random_range(-0.9..0.9),
        },
    }
}

/// CES design used for the identity check: lognormal amenities on the
/// default wage support.
pub fn ces_design() -> DgpConfig {
    DgpConfig {
        kind: DgpKind::CesLognormal,
        alpha: ScalarDist::Uniform { lo: 0.3, hi: 0.7 },
        beta: ScalarDist::Uniform { lo: 0.3, hi: 0.9 },
        rho: ScalarDist::Uniform { lo: -0.9, hi: 0.9 },
        ces: oracle_dgp::CesAmenity {
            log_mean0: 5.5,
            log_mean1: 5.6,
            log_sd0: 0.4,
            log_sd1: 0.5,
        },
        ..DgpConfig::default()
    }
}

/// Max over probes of |F_S,i(s; x) − (1 − m(y0 + s, ...))|, with the belief
/// cdf computed from the belief law and m from the stated-demand formula.
pub fn lemma_identity_error(
    cfg: &DgpConfig,
    probes: usize,
    points: usize,
    seed: u64,
) -> Result<f64, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let x = cfg.support.sample(&mut rng);
        let eta = random_eta(&mut rng, cfg.kind);
        // y0 + s stays positive
        let (lo, hi) = (-0.9 * x.y0, 1.5 * x.y1.max(x.y0));
        for j in 0..points {
            let s = lo + (hi - lo) * j as f64 / (points - 1) as f64;
            let f = individual_cdf(s, &x, &eta, cfg)?;
            let m = stated_demand_m(&x.shift_y0(s), &eta, cfg)?;
            worst = worst.max((f - (1.0 - m)).abs());
        }
    }
    Ok(worst)
}

/// P-quantile thresholds, a 0.02 lattice and the 1 − τ points.
pub fn fine_grid(d: &Dataset, taus: &[f64]) -> Result<ThresholdGrid, CliError> {
    let extra = synthetic::tau_thresholds(taus);
    Ok(ThresholdGrid::from_data(d, &extra)?.union(&ThresholdGrid::uniform(0.02)?))
}

/// 0.1, ..., 0.9 plus 1 − τ and 1.
pub fn coarse_grid(taus: &[f64]) -> Result<ThresholdGrid, CliError> {
    let mut p: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
    p.extend(synthetic::tau_thresholds(taus));
    Ok(ThresholdGrid::new(p)?)
}

pub fn simulate(cfg: &DgpConfig, seed: u64) -> Result<Dataset, CliError> {
    let pop = draw_population(cfg, stage_seed(seed, 0))?;
    Ok(simulate_survey(&pop, cfg, stage_seed(seed, 1))?)
}

/// Fitted F_Q curves on design A and their sup-distance to the closed form on
/// the identified region, one per τ.
pub fn recovery_errors(n: usize, taus: &[f64], seed: u64) -> Result<(DrModel, Vec<f64>), CliError> {
    let cfg = synthetic::design_a(n);
    let d = simulate(&cfg, seed)?;
    let grid = fine_grid(&d, taus)?;
    let m = rearrange(&fit_dr(
        &d,
        &grid,
        &DesignMap::default(),
        None,
        &FitOptions::default(),
    )?);
    let xt = synthetic::center();
    let sg = SGrid::for_support(&cfg.support, &xt, 1.0)?;
    let mut errs = Vec::new();
    for &tau in taus {
        let c = fq_curve(&m, tau, &sg, &xt)?;
        errs.push(closed_form_distance(&c, tau, &xt[0].0));
    }
    Ok((m, errs))
}

fn closed_form_distance(c: &ReturnsCurve, tau: f64, x: &crate::dataset::Scenario) -> f64 {
    let truth: Vec<f64> = c
        .grid
        .iter()
        .map(|&s| synthetic::fq_closed_form(s, tau, x))
        .collect();
    let region: Vec<bool> = c.extrapolated.iter().map(|e| !e).collect();
    sup_distance(&c.values, &truth, Some(&region))
}

/// Max |intercept-only DR − empirical cdf of P| over the thresholds.
pub fn intercept_only_error(d: &Dataset) -> Result<f64, CliError> {
    let grid = ThresholdGrid::from_data(d, &[])?;
    let m = fit_dr(
        d,
        &grid,
        &DesignMap::intercept_only(),
        None,
        &FitOptions::default(),
    )?;
    let x = d.records[0].scenario;
    let n = d.len() as f64;
    let mut worst: f64 = 0.0;
    for (k, &p) in grid.thresholds().iter().enumerate() {
        let ecdf = d.records.iter().filter(|r| r.p_stated <= p).count() as f64 / n;
        let fitted = m.cdf_values(&x)[k];
        worst = worst.max((fitted - ecdf).abs());
    }
    Ok(worst)
}

/// Count of p1 < p2 probe pairs where the rearranged cdf decreases.
pub fn monotonicity_violations(
    m: &DrModel,
    support: &crate::dataset::SupportSpec,
    probes: usize,
    seed: u64,
) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..probes)
        .filter(|_| {
            let x = support.sample(&mut rng);
            let (a, b): (f64, f64) = (rng.random(), rng.random());
            let (p1, p2) = (a.min(b), a.max(b));
            cdf_at(m, p1, &x) > cdf_at(m, p2, &x)
        })
        .count()
}

/// Max coefficient difference between an integer-weighted fit and the fit on
/// data with every respondent's records repeated weight-many times.
pub fn integer_weight_error(d: &Dataset, seed: u64) -> Result<f64, CliError> {
    let (idx, n_resp) = d.respondent_index();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per: Vec<usize> = (0..n_resp).map(|_| rng.random_range(1..=3)).collect();
    let weights: Vec<f64> = idx.iter().map(|&i| per[i] as f64).collect();
    let mut records: Vec<ChoiceRecord> = Vec::new();
    for (r, &i) in d.records.iter().zip(&idx) {
        for c in 0..per[i] {
            records.push(ChoiceRecord {
                respondent_id: format!("{}#{c}", r.respondent_id),
                ..r.clone()
            });
        }
    }
    let rep = Dataset::new(records, d.support.clone())?;
    let grid = ThresholdGrid::uniform(0.1)?;
    let map = DesignMap::default();
    let opts = FitOptions {
        tol: 1e-12,
        ..FitOptions::default()
    };
    let a = fit_dr(d, &grid, &map, Some(&weights), &opts)?;
    let b = fit_dr(&rep, &grid, &map, None, &opts)?;
    let mut worst: f64 = 0.0;
    for (ra, rb) in a.coef.iter().zip(&b.coef) {
        for (u, v) in ra.iter().zip(rb) {
            worst = worst.max((u - v).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct CoverageResult {
    pub datasets: usize,
    pub covered: usize,
    /// Per dataset: sup-t critical value and max |estimate − truth|.
    pub runs: Vec<(f64, f64)>,
}

impl CoverageResult {
    pub fn rate(&self) -> f64 {
        self.covered as f64 / self.datasets as f64
    }
}

/// Monte Carlo coverage of the nominal-90% uniform band for F_Q(·; 0.5) on
/// the coverage design.
pub fn band_coverage(
    datasets: usize,
    n: usize,
    b: usize,
    seed: u64,
) -> Result<CoverageResult, CliError> {
    let tau = 0.5;
    let cfg = synthetic::coverage_design(n);
    let xt: XTilde = synthetic::coverage_center();
    let x = xt[0].0;
    let sg = SGrid::for_support(&cfg.support, &xt, 5.0)?;
    let spec = BandSpec {
        level: 0.9,
        kind: BandKind::Uniform,
    };
    let opts = FitOptions::default();
    let mut covered = 0;
    let mut runs = Vec::with_capacity(datasets);
    for r in 0..datasets {
        let ds = stage_seed(seed, 100 + r as u64);
        let d = simulate(&cfg, ds)?;
        let m = rearrange(&fit_dr(
            &d,
            &coarse_grid(&[tau])?,
            &DesignMap::default(),
            None,
            &opts,
        )?);
        let point = fq_curve(&m, tau, &sg, &xt)?;
        let boot = bootstrap_from(
            &m,
            &d,
            b,
            stage_seed(ds, 3),
            BootstrapWeights::Exponential,
            &opts,
        );
        let draws = boot
            .models
            .par_iter()
            .map(|bm| fq_curve(bm, tau, &sg, &xt))
            .collect::<Result<Vec<_>, _>>()?;
        let region: Vec<bool> = point.extrapolated.iter().map(|e| !e).collect();
        let banded = uniform_band(&point, &draws, &spec, &region)?;
        let band = banded.band.as_ref().expect("band attached");
        let mut inside = true;
        let mut err: f64 = 0.0;
        for i in (0..point.grid.len()).filter(|&i| region[i]) {
            let t = synthetic::fq_closed_form(point.grid[i], tau, &x);
            err = err.max((point.values[i] - t).abs());
            inside &= band.lower[i] <= t && t <= band.upper[i];
        }
        covered += usize::from(inside);
        runs.push((band.critical, err));
    }
    Ok(CoverageResult {
        datasets,
        covered,
        runs,
    })
}

/// Max |uniform-weight F_S − plain τ-average of the F_Q curves|.
pub fn uniform_average_error(m: &DrModel, sg: &SGrid, xt: &XTilde) -> Result<f64, CliError> {
    let taus = policy::default_taus();
    let fq = taus
        .iter()
        .map(|&t| fq_curve(m, t, sg, xt))
        .collect::<Result<Vec<_>, _>>()?;
    let w = make_weights("baseline", WeightKind::Uniform, &taus)?;
    let fs = policy::predict_fs(&fq, &w)?;
    let mut worst: f64 = 0.0;
    for i in 0..fs.grid.len() {
        let avg = fq.iter().map(|c| c.values[i]).sum::<f64>() / fq.len() as f64;
        worst = worst.max((fs.values[i] - avg).abs());
    }
    Ok(worst)
}

/// |transfer − 0.2| and |cost area − 0.12| at x = 0.1 for F_S uniform on [−1, 1].
pub fn uniform_calibration_error() -> Result<(f64, f64), CliError> {
    let grid: Vec<f64> = (0..=2000).map(|i| -1.0 + i as f64 * 0.001).collect();
    let values = grid.iter().map(|s| (s + 1.0) / 2.0).collect();
    let fs = ReturnsCurve::new("fs_uniform", None, grid, values);
    let t = policy::transfer_cost_curve(&fs, &[0.01, 0.1], 1.0)?;
    let row = &t.rows[1];
    Ok(((row.transfer - 0.2).abs(), (row.cost_area - 0.12).abs()))
}

/// Baseline and optimism-corrected cost elasticities from brute-force truth.
pub fn true_elasticities(
    cfg: &DgpConfig,
    xt: &XTilde,
    m: usize,
    seed: u64,
) -> Result<(f64, f64), CliError> {
    let taus = policy::default_taus();
    let sg = SGrid::for_support(&cfg.support, xt, 1.0)?;
    let x_grid = [0.01];
    let base = make_weights("baseline", WeightKind::Uniform, &taus)?;
    let opt = make_weights(
        "optimism_corrected",
        WeightKind::Beta { a: 2.0, b: 5.0 },
        &taus,
    )?;
    let e0 =
        oracle_dgp::true_policy_objects(cfg, xt, &base, sg.values(), &x_grid, m, seed)?.elasticity;
    let e1 =
        oracle_dgp::true_policy_objects(cfg, xt, &opt, sg.values(), &x_grid, m, seed)?.elasticity;
    Ok((e0, e1))
}

fn timed<T>(label: &str, f: impl FnOnce() -> Result<T, CliError>) -> Result<T, CliError> {
    let t0 = Instant::now();
    let out = f()?;
    println!("  {label} ({:.1}s)", t0.elapsed().as_secs_f64());
    Ok(out)
}

/// Runs the reduced oracle suite; artifacts go to `<out>/selftest`.
pub fn run(cfg: &RunConfig) -> Result<Report, CliError> {
    let dir = cfg.out.join("selftest");
    std::fs::create_dir_all(&dir).map_err(|source| CliError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let seed = cfg.seed;
    let mut r = Report::default();
    println!("selftest seed={seed}");

    timed("lemma identity", || {
        let g = DgpConfig {
            alpha: ScalarDist::Uniform { lo: 0.3, hi: 0.7 },
            ..synthetic::design_a(100)
        };
        r.checks.push(Check::at_most(
            "lemma_identity_gaussian",
            lemma_identity_error(&g, 20, 50, seed)?,
            1e-10,
        ));
        r.checks.push(Check::at_most(
            "lemma_identity_ces",
            lemma_identity_error(&ces_design(), 20, 50, seed)?,
            5e-4,
        ));
        Ok(())
    })?;

    let taus = [0.25, 0.5, 0.75];
    let model = timed("quantile-return recovery", || {
        let (m, errs) = recovery_errors(5000, &taus, seed)?;
        for (t, e) in taus.iter().zip(errs) {
            r.checks
                .push(Check::at_most(&format!("fq_recovery_tau_{t}"), e, 0.06));
        }
        Ok(m)
    })?;

    timed("distribution regression", || {
        let d = simulate(&synthetic::design_a(300), stage_seed(seed, 7))?;
        r.checks.push(Check::at_most(
            "dr_intercept_only_ecdf",
            intercept_only_error(&d)?,
            1e-6,
        ));
        let v = monotonicity_violations(&model, &synthetic::support(), 10_000, seed);
        r.checks
            .push(Check::at_most("dr_rearranged_violations", v as f64, 0.0));
        r.checks.push(Check::at_most(
            "dr_integer_weights",
            integer_weight_error(&d, seed)?,
            1e-8,
        ));
        Ok(())
    })?;

    timed("band coverage 10x100", || {
        let c = band_coverage(10, 2000, 100, seed)?;
        // ten datasets cannot resolve 80% from 90%; the smoke run guards
        // against gross undercoverage only
        r.checks
            .push(Check::at_least("band_coverage_smoke", c.rate(), 0.7));
        Ok(())
    })?;

    timed("policy identities", || {
        let xt = synthetic::center();
        let sg = SGrid::for_support(&synthetic::support(), &xt, 5.0)?;
        r.checks.push(Check::at_most(
            "policy_uniform_average",
            uniform_average_error(&model, &sg, &xt)?,
            1e-12,
        ));
        let (dt, da) = uniform_calibration_error()?;
        r.checks
            .push(Check::at_most("policy_uniform_transfer", dt, 1e-6));
        r.checks
            .push(Check::at_most("policy_uniform_cost_area", da, 1e-6));
        let (e0, e1) = true_elasticities(&synthetic::design_a(100), &xt, 20_000, seed)?;
        let mut c = Check::at_least("policy_optimism_elasticity_gap", e0 - e1, f64::MIN_POSITIVE);
        c.gating = false;
        r.checks.push(c);
        Ok(())
    })?;

    timed("pipeline determinism", || {
        let mut manifests = Vec::new();
        for run in ["run_a", "run_b"] {
            let out = dir.join(run);
            if out.exists() {
                std::fs::remove_dir_all(&out).map_err(|source| CliError::Io {
                    path: out.display().to_string(),
                    source,
                })?;
            }
            let sub = RunConfig {
                out: out.clone(),
                ..cfg.clone()
            };
            for c in [
                Command::Simulate,
                Command::Fit,
                Command::Curves,
                Command::Policy,
            ] {
                execute(c, &sub)?;
            }
            manifests.push(manifest_of(&out, &sub.hash())?);
        }
        let differ = manifests[0] != manifests[1] || manifests[0].files.is_empty();
        r.checks.push(Check::at_most(
            "pipeline_identical_hashes",
            f64::from(u8::from(differ)),
            0.0,
        ));
        Ok(())
    })?;

    for c in &r.checks {
        let tag = if c.passed() {
            "PASS"
        } else if c.gating {
            "FAIL"
        } else {
            "FAIL (informational)"
        };
        let dir = if c.at_least { ">=" } else { "<=" };
        println!(
            "{tag} {} value={:e} {dir} {:e}",
            c.name, c.value, c.tolerance
        );
    }
    println!(
        "selftest: {}/{} gating checks passed",
        r.gating() - r.failed_gating(),
        r.gating()
    );
    write_report(&dir, cfg, &r)?;
    Ok(r)
}

fn write_report(dir: &Path, cfg: &RunConfig, r: &Report) -> Result<(), CliError> {
    let text = format!(
        "# exante selftest config_hash={} seed={}\n{}",
        cfg.hash(),
        cfg.seed,
        r.to_csv()
    );
    write_file(&dir.join("report.csv"), &text)
}
