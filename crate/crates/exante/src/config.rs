//! Run configuration: one JSON file, with command-line overrides for seed,
//! bootstrap size and output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::dataset::{ColumnMap, Scenario, SupportSpec};
use crate::dr_estimator::{DesignMap, DrError, FitOptions, ThresholdGrid};
use crate::inference::BandSpec;
use crate::oracle_dgp::DgpConfig;
use crate::policy::{make_weights, PolicyError, WeightKind, WeightScheme};
use crate::returns_engine::{uniform_grid, CopulaKind, Shift, XTilde};
use crate::synthetic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub scenario: Scenario,
    pub mass: f64,
}

/// Multiples of `step` in [lo, hi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn values(&self) -> Vec<f64> {
        uniform_grid(self.lo, self.hi, self.step)
    }
}

/// Thresholds: data quantiles (optional), a uniform lattice (optional), the
/// 1 − τ points of the requested τ list and any extra values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdSpec {
    pub from_data: bool,
    pub uniform_step: Option<f64>,
    pub extra: Vec<f64>,
}

impl Default for ThresholdSpec {
    fn default() -> Self {
        ThresholdSpec {
            from_data: true,
            uniform_step: Some(0.02),
            extra: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WtpSpec {
    pub shift: Shift,
    pub tau: f64,
    pub copula: CopulaKind,
    pub bins: usize,
    pub y_grid: GridSpec,
}

impl Default for WtpSpec {
    fn default() -> Self {
        WtpSpec {
            shift: synthetic::layoff_shift(),
            tau: 0.5,
            copula: CopulaKind::Comonotone,
            bins: 10,
            y_grid: GridSpec {
                lo: -200.0,
                hi: 400.0,
                step: 2.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub name: String,
    pub weights: WeightKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicySpec {
    pub taus: Vec<f64>,
    pub schemes: Vec<SchemeSpec>,
    /// Expansion shares; must contain 0.01 for the elasticity.
    pub x_grid: Vec<f64>,
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec {
            taus: crate::policy::default_taus(),
            schemes: vec![
                SchemeSpec {
                    name: "baseline".into(),
                    weights: WeightKind::Uniform,
                },
                SchemeSpec {
                    name: "tails_down".into(),
                    weights: WeightKind::Beta { a: 2.0, b: 2.0 },
                },
                SchemeSpec {
                    name: "lower_tail_down".into(),
                    weights: WeightKind::Beta { a: 5.0, b: 2.0 },
                },
                SchemeSpec {
                    name: "optimism_corrected".into(),
                    weights: WeightKind::Beta { a: 2.0, b: 5.0 },
                },
            ],
            x_grid: vec![0.01, 0.02, 0.05, 0.10],
        }
    }
}

impl PolicySpec {
    pub fn schemes(&self) -> Result<Vec<WeightScheme>, PolicyError> {
        self.schemes
            .iter()
            .map(|s| make_weights(&s.name, s.weights, &self.taus))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Input dataset for `fit` and `curves`; defaults to `<out>/data.csv`.
    pub data: Option<PathBuf>,
    /// Fitted model for `curves` and `policy`; defaults to `<out>/model.json`.
    pub model: Option<PathBuf>,
    pub schema: ColumnMap,
    /// Support of the input data; defaults to the DGP support.
    pub support: Option<SupportSpec>,
    pub dgp: DgpConfig,
    pub thresholds: ThresholdSpec,
    pub design: DesignMap,
    pub fit: FitOptions,
    pub x_tilde: Vec<Atom>,
    pub s_step: f64,
    pub taus: Vec<f64>,
    pub mu_grid: GridSpec,
    pub iqr: (f64, f64),
    pub iqr_grid: GridSpec,
    pub a_points: usize,
    pub bootstrap: usize,
    pub band: BandSpec,
    pub wtp: Option<WtpSpec>,
    pub policy: PolicySpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 20240601,
            out: PathBuf::from("exante_out"),
            data: None,
            model: None,
            schema: ColumnMap::default(),
            support: None,
            dgp: synthetic::design_a(2000),
            thresholds: ThresholdSpec::default(),
            design: DesignMap::default(),
            fit: FitOptions::default(),
            x_tilde: synthetic::center()
                .into_iter()
                .map(|(scenario, mass)| Atom { scenario, mass })
                .collect(),
            s_step: 5.0,
            taus: vec![0.25, 0.5, 0.75],
            mu_grid: GridSpec {
                lo: -600.0,
                hi: 600.0,
                step: 5.0,
            },
            iqr: (0.25, 0.75),
            iqr_grid: GridSpec {
                lo: 0.0,
                hi: 600.0,
                step: 2.0,
            },
            a_points: 100,
            bootstrap: 100,
            band: BandSpec::default(),
            wtp: Some(WtpSpec::default()),
            policy: PolicySpec::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.x_tilde.is_empty() {
            return bad("x_tilde needs at least one scenario".into());
        }
        if self.taus.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return bad("taus must lie in (0,1)".into());
        }
        if !(self.s_step > 0.0) {
            return bad("s_step must be positive".into());
        }
        if !(self.iqr.0 > 0.0 && self.iqr.0 < self.iqr.1 && self.iqr.1 < 1.0) {
            return bad(format!(
                "iqr levels {:?} must satisfy 0 < t1 < t2 < 1",
                self.iqr
            ));
        }
        for (name, g) in [("mu_grid", &self.mu_grid), ("iqr_grid", &self.iqr_grid)] {
            if !(g.step > 0.0 && g.lo < g.hi) {
                return bad(format!("{name} needs lo < hi and step > 0"));
            }
        }
        if self.a_points == 0 {
            return bad("a_points must be positive".into());
        }
        if !self.policy.x_grid.iter().any(|x| (x - 0.01).abs() < 1e-12) {
            return bad("policy.x_grid must contain 0.01".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form. The output directory is left out,
    /// so the same run written to two places carries the same hash.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&RunConfig {
            out: PathBuf::new(),
            ..self.clone()
        })
        .expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }

    pub fn x_tilde(&self) -> XTilde {
        self.x_tilde.iter().map(|a| (a.scenario, a.mass)).collect()
    }

    pub fn data_support(&self) -> SupportSpec {
        self.support
            .clone()
            .unwrap_or_else(|| self.dgp.support.clone())
    }

    pub fn data_path(&self) -> PathBuf {
        self.data
            .clone()
            .unwrap_or_else(|| self.out.join("data.csv"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.model
            .clone()
            .unwrap_or_else(|| self.out.join("model.json"))
    }

    /// Every τ whose 1 − τ should sit on the threshold grid.
    fn all_taus(&self) -> Vec<f64> {
        let mut t = self.taus.clone();
        t.extend_from_slice(&self.policy.taus);
        t.push(self.iqr.0);
        t.push(self.iqr.1);
        if let Some(w) = &self.wtp {
            t.push(w.tau);
        }
        t
    }

    pub fn threshold_grid(&self, d: &Dataset) -> Result<ThresholdGrid, DrError> {
        let mut extra = self.thresholds.extra.clone();
        extra.extend(synthetic::tau_thresholds(&self.all_taus()));
        let mut grid = if self.thresholds.from_data {
            ThresholdGrid::from_data(d, &extra)?
        } else {
            ThresholdGrid::new(extra)?
        };
        if let Some(step) = self.thresholds.uniform_step {
            grid = grid.union(&ThresholdGrid::uniform(step)?);
        }
        Ok(grid)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_and_validates() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let partial: RunConfig = serde_json::from_str(r#"{"seed": 7}"#).unwrap();
        assert_eq!(partial.seed, 7);
        assert_ne!(partial.hash(), cfg.hash());
        assert!(serde_json::from_str::<RunConfig>(r#"{"sede": 7}"#).is_err());
    }
}
