//! Batch driver: simulate → fit → curves (with bands) → policy, plus selftest.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{hex, ConfigError, RunConfig};
use crate::dataset::{self, Dataset, DatasetError};
use crate::dr_estimator::{self, BootstrapWeights, DrError, DrModel};
use crate::inference::{self, InferenceError};
use crate::oracle_dgp::{self, DgpError};
use crate::policy::{self, PolicyError};
use crate::returns_engine::{self, PairRule, ReturnsCurve, ReturnsError, SGrid};
use crate::selftest;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("dr_estimator: {0}")]
    Dr(#[from] DrError),
    #[error("oracle_dgp: {0}")]
    Dgp(#[from] DgpError),
    #[error("returns_engine: {0}")]
    Returns(#[from] ReturnsError),
    #[error("inference: {0}")]
    Inference(#[from] InferenceError),
    #[error("policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("cli: fit required: no model at {0}; run `exante fit` first")]
    FitRequired(String),
    #[error("cli: {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cli: model file {path}: {source}")]
    ModelFile {
        path: String,
        source: serde_json::Error,
    },
    #[error("cli: EXANTE_THREADS={0} is not a positive integer")]
    Threads(String),
    #[error("selftest: {0}")]
    Selftest(String),
}

#[derive(Debug, Parser)]
#[command(
    name = "exante",
    version,
    about = "Distributions of ex ante returns and willingness-to-pay"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub bootstrap: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Synthetic dataset and truth curves from the DGP.
    Simulate,
    /// Distribution regression fit and diagnostics.
    Fit,
    /// F_Q, μ, IQR, qWTP and mWTP curves with bootstrap bands.
    Curves,
    /// Predicted F_S, transfer-cost tables and elasticities.
    Policy,
    /// Oracle acceptance suite on synthetic data.
    Selftest,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fit => "fit",
            Command::Curves => "curves",
            Command::Policy => "policy",
            Command::Selftest => "selftest",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST: &str = "manifest.json";

/// Caps the global rayon pool at EXANTE_THREADS when set.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("EXANTE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Threads(v.clone()))?;
    // a second call (tests, embedding) keeps the existing pool
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

/// Loads the config and applies command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(b) = cli.bootstrap {
        cfg.bootstrap = b;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<Manifest, CliError> {
    init_threads()?;
    let cfg = resolve_config(cli)?;
    execute(cli.command, &cfg)
}

pub fn execute(command: Command, cfg: &RunConfig) -> Result<Manifest, CliError> {
    create_dir(&cfg.out)?;
    match command {
        Command::Simulate => simulate(cfg)?,
        Command::Fit => fit(cfg)?,
        Command::Curves => curves(cfg)?,
        Command::Policy => policy_cmd(cfg)?,
        Command::Selftest => {
            let report = selftest::run(cfg)?;
            if !report.passed() {
                write_manifest(cfg)?;
                return Err(CliError::Selftest(format!(
                    "{} of {} gating checks failed",
                    report.failed_gating(),
                    report.gating()
                )));
            }
        }
    }
    write_manifest(cfg)
}

/// Independent seed for a named stage.
pub fn stage_seed(seed: u64, stage: u64) -> u64 {
    seed.wrapping_add(stage.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

const STAGE_POPULATION: u64 = 0;
const STAGE_SURVEY: u64 = 1;
const STAGE_TRUTH: u64 = 2;
const STAGE_BOOTSTRAP: u64 = 3;

fn header(cfg: &RunConfig, command: &str) -> Vec<String> {
    vec![format!(
        "exante {command} config_hash={} seed={}",
        cfg.hash(),
        cfg.seed
    )]
}

fn create_dir(p: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(p).map_err(|source| CliError::Io {
        path: p.display().to_string(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    config_hash: String,
    model: DrModel,
}

fn load_data(cfg: &RunConfig) -> Result<Dataset, CliError> {
    Ok(dataset::load_dataset(
        cfg.data_path(),
        &cfg.schema,
        Some(cfg.data_support()),
    )?)
}

fn load_model(cfg: &RunConfig) -> Result<DrModel, CliError> {
    let path = cfg.model_path();
    if !path.exists() {
        return Err(CliError::FitRequired(path.display().to_string()));
    }
    let text = std::fs::read_to_string(&path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let f: ModelFile = serde_json::from_str(&text).map_err(|source| CliError::ModelFile {
        path: path.display().to_string(),
        source,
    })?;
    Ok(f.model)
}

fn s_grid(cfg: &RunConfig) -> Result<SGrid, CliError> {
    Ok(SGrid::for_support(
        &cfg.data_support(),
        &cfg.x_tilde(),
        cfg.s_step,
    )?)
}

fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let dgp = &cfg.dgp;
    let pop = oracle_dgp::draw_population(dgp, stage_seed(cfg.seed, STAGE_POPULATION))?;
    let d = oracle_dgp::simulate_survey(&pop, dgp, stage_seed(cfg.seed, STAGE_SURVEY))?;
    let mut buf = Vec::new();
    dataset::write_dataset(&d, &mut buf)?;
    let mut text = String::new();
    for h in header(cfg, "simulate") {
        text.push_str(&format!("# {h}\n"));
    }
    text.push_str(&String::from_utf8(buf).expect("csv output is utf-8"));
    write_file(&cfg.out.join("data.csv"), &text)?;

    let xt = cfg.x_tilde();
    let sg = SGrid::for_support(&dgp.support, &xt, cfg.s_step)?;
    let (m, seed) = (dgp.brute_force_m, stage_seed(cfg.seed, STAGE_TRUTH));
    let mut truth = Vec::new();
    for &tau in &cfg.taus {
        let mut c = oracle_dgp::true_fq(dgp, tau, sg.values(), &xt, m, seed)?;
        c.extrapolated = extrapolated(&sg, &xt);
        truth.push(c);
    }
    truth.push(oracle_dgp::true_dist_mu(
        dgp,
        &xt,
        &cfg.mu_grid.values(),
        m,
        seed,
    )?);
    truth.push(oracle_dgp::true_dist_iqr(
        dgp,
        &xt,
        cfg.iqr.0,
        cfg.iqr.1,
        &cfg.iqr_grid.values(),
        m,
        seed,
    )?);
    if let Some(w) = &cfg.wtp {
        let y = w.y_grid.values();
        truth.push(oracle_dgp::true_dist_qwtp(
            dgp, &xt, &w.shift, w.tau, &y, m, seed,
        )?);
        truth.push(oracle_dgp::true_dist_mwtp(dgp, &xt, &w.shift, &y, m, seed)?);
    }
    let mut h = header(cfg, "simulate");
    h.push(format!(
        "truth by brute force over M={m} simulated individuals"
    ));
    write_file(
        &cfg.out.join("truth.csv"),
        &returns_engine::curves_csv(&truth, &h),
    )
}

/// Points whose t(s, x) leaves the support for some scenario.
fn extrapolated(sg: &SGrid, xt: &returns_engine::XTilde) -> Vec<bool> {
    let mut out = vec![false; sg.len()];
    for (x, _) in xt {
        for (o, inside) in out.iter_mut().zip(sg.mask(x)) {
            *o |= !inside;
        }
    }
    out
}

fn fit(cfg: &RunConfig) -> Result<(), CliError> {
    let d = load_data(cfg)?;
    let grid = cfg.threshold_grid(&d)?;
    let model = dr_estimator::rearrange(&dr_estimator::fit_dr(
        &d,
        &grid,
        &cfg.design,
        None,
        &cfg.fit,
    )?);
    let file = ModelFile {
        config_hash: cfg.hash(),
        model,
    };
    let json = serde_json::to_string_pretty(&file).expect("model serializes");
    write_file(&cfg.model_path(), &json)?;
    let report = dataset::validate(&d);
    let mut text = String::new();
    for h in header(cfg, "fit") {
        text.push_str(&format!("# {h}\n"));
    }
    text.push_str(&format!(
        "# records={} respondents={} out_of_support={} heaping_share={} paired={}\n",
        report.n_records,
        report.n_respondents,
        report.out_of_support,
        report.heaping_share,
        report.paired_count
    ));
    text.push_str(&dr_estimator::diagnostics_csv(&file.model));
    write_file(&cfg.out.join("diagnostics.csv"), &text)
}

/// Every estimated curve of the `curves` command for one model.
fn curve_set(
    cfg: &RunConfig,
    m: &DrModel,
    sg: &SGrid,
    copula: Option<&returns_engine::CopulaModel>,
) -> Result<Vec<ReturnsCurve>, CliError> {
    let xt = cfg.x_tilde();
    let a = returns_engine::a_grid(cfg.a_points);
    let mut out = Vec::new();
    for &tau in &cfg.taus {
        out.push(returns_engine::fq_curve(m, tau, sg, &xt)?);
    }
    out.push(returns_engine::dist_mu(
        m,
        &xt,
        &cfg.mu_grid.values(),
        sg,
        &a,
    )?);
    out.push(returns_engine::dist_iqr(
        m,
        &xt,
        cfg.iqr.0,
        cfg.iqr.1,
        &cfg.iqr_grid.values(),
        sg,
        &a,
    )?);
    if let (Some(w), Some(c)) = (&cfg.wtp, copula) {
        let y = w.y_grid.values();
        out.push(returns_engine::dist_qwtp(
            m, c, &xt, &w.shift, w.tau, &y, sg,
        )?);
        out.push(returns_engine::dist_mwtp(m, c, &xt, &w.shift, &y, sg)?);
    }
    Ok(out)
}

/// Point curves and, when B > 0, bands from weighted-bootstrap refits.
pub fn estimate_with_bands(
    cfg: &RunConfig,
    d: &Dataset,
    m: &DrModel,
) -> Result<(Vec<ReturnsCurve>, Vec<String>), CliError> {
    let sg = s_grid(cfg)?;
    let copula = match &cfg.wtp {
        Some(w) => {
            let pairs = returns_engine::pseudo_ranks(m, d, &PairRule::LowestIndices)?;
            Some(returns_engine::fit_copula(&pairs, w.copula, w.bins)?)
        }
        None => None,
    };
    let point = curve_set(cfg, m, &sg, copula.as_ref())?;
    let mut notes = Vec::new();
    if cfg.bootstrap == 0 {
        return Ok((point, notes));
    }
    let boot = dr_estimator::bootstrap_from(
        m,
        d,
        cfg.bootstrap,
        stage_seed(cfg.seed, STAGE_BOOTSTRAP),
        BootstrapWeights::Exponential,
        &cfg.fit,
    );
    for (r, e) in &boot.dropped {
        notes.push(format!("bootstrap replicate {r} dropped: {e}"));
    }
    let reps = boot
        .models
        .par_iter()
        .map(|bm| curve_set(cfg, bm, &sg, copula.as_ref()))
        .collect::<Result<Vec<_>, CliError>>()?;
    let banded = point
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let draws: Vec<ReturnsCurve> = reps.iter().map(|r| r[j].clone()).collect();
            inference::band(p, &draws, &cfg.band)
        })
        .collect::<Result<Vec<_>, InferenceError>>()?;
    notes.push(format!(
        "bootstrap replicates used: {} of {}",
        boot.models.len(),
        cfg.bootstrap
    ));
    Ok((banded, notes))
}

fn curves(cfg: &RunConfig) -> Result<(), CliError> {
    let m = load_model(cfg)?;
    let d = load_data(cfg)?;
    let (curves, notes) = estimate_with_bands(cfg, &d, &m)?;
    let mut h = header(cfg, "curves");
    h.extend(notes);
    write_file(
        &cfg.out.join("curves.csv"),
        &returns_engine::curves_csv(&curves, &h),
    )
}

fn policy_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let m = load_model(cfg)?;
    let sg = s_grid(cfg)?;
    let xt = cfg.x_tilde();
    let fq = cfg
        .policy
        .taus
        .iter()
        .map(|&tau| returns_engine::fq_curve(&m, tau, &sg, &xt))
        .collect::<Result<Vec<_>, ReturnsError>>()?;
    let wage = policy::baseline_wage(&xt);
    let mut fs_curves = Vec::new();
    let mut tables = Vec::new();
    let mut elasticities = String::from("scheme,elasticity\n");
    for scheme in cfg.policy.schemes()? {
        let fs = policy::predict_fs(&fq, &scheme)?;
        let table = policy::transfer_cost_curve(&fs, &cfg.policy.x_grid, wage)?;
        elasticities.push_str(&format!(
            "{},{}\n",
            scheme.name,
            policy::cost_elasticity(&table)?
        ));
        fs_curves.push(fs);
        tables.push((scheme.name.clone(), table));
    }
    let h = header(cfg, "policy");
    write_file(
        &cfg.out.join("policy_fs.csv"),
        &returns_engine::curves_csv(&fs_curves, &h),
    )?;
    write_file(
        &cfg.out.join("policy_costs.csv"),
        &policy::cost_csv(&tables, &h),
    )?;
    let mut text: String = h.iter().map(|l| format!("# {l}\n")).collect();
    text.push_str(&elasticities);
    write_file(&cfg.out.join("elasticities.csv"), &text)
}

fn sha256_file(path: &Path) -> Result<(u64, String), CliError> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok((bytes.len() as u64, hex(&Sha256::digest(&bytes))))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let rd = std::fs::read_dir(dir).map_err(|source| CliError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    for entry in rd {
        let entry = entry.map_err(|source| CliError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let p = entry.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else if p.file_name().is_some_and(|n| n != MANIFEST) {
            out.push(
                p.strip_prefix(root)
                    .expect("walk stays under root")
                    .to_path_buf(),
            );
        }
    }
    Ok(())
}

/// Hashes every file under `dir` (manifests excluded).
pub fn manifest_of(dir: &Path, config_hash: &str) -> Result<Manifest, CliError> {
    let mut paths = Vec::new();
    collect_files(dir, dir, &mut paths)?;
    paths.sort();
    let files = paths
        .into_iter()
        .map(|rel| {
            let (bytes, sha256) = sha256_file(&dir.join(&rel))?;
            Ok(ManifestEntry {
                path: rel.to_string_lossy().replace('\\', "/"),
                bytes,
                sha256,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(Manifest {
        config_hash: config_hash.into(),
        files,
    })
}

fn write_manifest(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let m = manifest_of(&cfg.out, &cfg.hash())?;
    let json = serde_json::to_string_pretty(&m).expect("manifest serializes");
    write_file(&cfg.out.join(MANIFEST), &json)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> PathBuf {
        let p = std::env::temp_dir().join(format!("exante-cli-{name}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&p);
        p
    }

    fn small(out: PathBuf) -> RunConfig {
        let mut cfg = RunConfig {
            out,
            bootstrap: 0,
            ..RunConfig::default()
        };
        cfg.dgp.n = 400;
        cfg.dgp.brute_force_m = 2000;
        cfg.policy.x_grid = vec![0.01, 0.02];
        cfg
    }

    #[test]
    fn curves_without_fit_is_an_error() {
        let cfg = small(tmp("nofit"));
        let err = execute(Command::Curves, &cfg).unwrap_err();
        assert!(matches!(err, CliError::FitRequired(_)));
        assert!(err.to_string().contains("fit required"));
    }

    #[test]
    fn pipeline_artifacts_carry_config_hash_and_repeat() {
        let mut hashes = Vec::new();
        for run in ["a", "b"] {
            let cfg = small(tmp(&format!("pipe-{run}")));
            for c in [
                Command::Simulate,
                Command::Fit,
                Command::Curves,
                Command::Policy,
            ] {
                execute(c, &cfg).unwrap();
            }
            let m = manifest_of(&cfg.out, &cfg.hash()).unwrap();
            for f in &m.files {
                let text = std::fs::read_to_string(cfg.out.join(&f.path)).unwrap();
                assert!(
                    text.contains(&cfg.hash()),
                    "{} lacks the config hash",
                    f.path
                );
            }
            let names: Vec<&str> = m.files.iter().map(|f| f.path.as_str()).collect();
            assert_eq!(
                names,
                [
                    "curves.csv",
                    "data.csv",
                    "diagnostics.csv",
                    "elasticities.csv",
                    "model.json",
                    "policy_costs.csv",
                    "policy_fs.csv",
                    "truth.csv"
                ]
            );
            hashes.push(m);
            std::fs::remove_dir_all(&cfg.out).unwrap();
        }
        assert_eq!(hashes[0], hashes[1]);
    }

    #[test]
    fn overrides_apply() {
        let cli = Cli::parse_from([
            "exante",
            "fit",
            "--seed",
            "9",
            "--bootstrap",
            "60",
            "--out",
            "/tmp/x",
        ]);
        assert_eq!(cli.command, Command::Fit);
        let cfg = resolve_config(&cli).unwrap();
        assert_eq!(
            (cfg.seed, cfg.bootstrap, cfg.out),
            (9, 60, PathBuf::from("/tmp/x"))
        );
    }
}
