//! TOML scenario files.
//!
//! ```toml
//! name = "double_integrator"
//!
//! [plant]
//! A = [[1.0, 1.0], [0.0, 1.0]]
//! B = [[0.5], [1.0]]
//! Q = [[1.0, 0.0], [0.0, 1.0]]
//! R = [[0.01]]
//!
//! [constraints]
//! horizon = 9
//! eps = [0.2]
//! state = { C = [[0.0, 1.0]], d = [2.0] }
//! input = { box = [5.0] }
//! disturbance = { box = [0.6, 0.6] }
//!
//! [simulation]
//! x0 = [-5.0, -2.0]
//!
//! [disturbance.online]
//! components = [{ weight = 1.0, mean = [0.0, 0.0], std = [0.1, 0.1] }]
//! ```
//!
//! Unknown keys are rejected. Optional tables fall back to the library
//! defaults.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::Settings;
use crate::dpmm::{LearnerSettings, NwPrior};
use crate::mpc::{MpcConfig, TerminalMode, DEFAULT_MEMBERSHIP_TOL, DEFAULT_MRPI_ITER};
use crate::polytope::HPolytope;
use crate::regulator::Plant;
use crate::sim::{ControllerMode, DisturbanceSpec, Scenario};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("{0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub name: String,
    pub plant: PlantSpec,
    pub constraints: ConstraintSpec,
    #[serde(default)]
    pub controller: ControllerSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    pub simulation: SimulationSpec,
    pub disturbance: GeneratorSpec,
    #[serde(default)]
    pub prior: Option<PriorSpec>,
    #[serde(default)]
    pub learner: Option<LearnerSettings>,
    #[serde(default)]
    pub analysis: AnalysisSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
}

/// Either `box = [r1, r2, ...]` for `|x_i| ≤ r_i`, or explicit `C`, `d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolytopeSpec {
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub horizon: usize,
    pub eps: Vec<f64>,
    pub state: PolytopeSpec,
    pub input: PolytopeSpec,
    pub disturbance: PolytopeSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSpec {
    pub mode: ControllerMode,
    /// Defaults to online terminal sets for `n ≤ 2`.
    pub terminal_mode: Option<TerminalMode>,
    pub beta_nonneg: bool,
    pub membership_tol: f64,
    pub mrpi_max_iter: usize,
}

impl Default for ControllerSpec {
    fn default() -> Self {
        ControllerSpec {
            mode: ControllerMode::OnlineLearning,
            terminal_mode: None,
            beta_nonneg: false,
            membership_tol: DEFAULT_MEMBERSHIP_TOL,
            mrpi_max_iter: DEFAULT_MRPI_ITER,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let s = Settings::default();
        SolverSpec { tol: s.tol_feas, max_iter: s.max_iter }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub x0: Vec<f64>,
    #[serde(default = "default_t_s")]
    pub t_s: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub historical_samples: usize,
    #[serde(default)]
    pub quiet_after: Option<usize>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_t_s() -> usize {
    20
}

fn default_runs() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    #[serde(default)]
    pub historical: Option<DisturbanceSpec>,
    pub online: DisturbanceSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub theta0: Option<Vec<f64>>,
    pub lambda0: Option<f64>,
    pub omega0: Option<f64>,
    pub psi0: Option<Vec<Vec<f64>>>,
    pub alpha: Option<f64>,
    pub kmax: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSpec {
    /// Truncation parameter of the minimal-RPI outer bound.
    pub rpi_alpha: f64,
    pub oracle_grid: usize,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        AnalysisSpec { rpi_alpha: 0.05, oracle_grid: 241 }
    }
}

/// A validated configuration.
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub file: ConfigFile,
    pub scenario: Scenario,
    pub out_dir: Option<PathBuf>,
    pub analysis: AnalysisSpec,
}

fn invalid(s: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(s.into())
}

pub fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, ConfigError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(invalid(format!("{what} must be a nonempty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl PolytopeSpec {
    pub fn build(&self, what: &str) -> Result<HPolytope, ConfigError> {
        let err = |e: crate::polytope::PolytopeError| invalid(format!("{what}: {e}"));
        match (&self.radii, &self.c, &self.d) {
            (Some(r), None, None) => HPolytope::symmetric_box(r).map_err(err),
            (None, Some(c), Some(d)) => HPolytope::new(matrix(c, what)?, DVector::from_vec(d.clone())).map_err(err),
            _ => Err(invalid(format!("{what} needs either `box` or both `C` and `d`"))),
        }
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn plant(&self) -> Result<Plant, ConfigError> {
        let p = &self.plant;
        Plant::new(matrix(&p.a, "A")?, matrix(&p.b, "B")?, matrix(&p.q, "Q")?, matrix(&p.r, "R")?)
            .map_err(|e| invalid(e.to_string()))
    }

    pub fn mpc_config(&self) -> Result<MpcConfig, ConfigError> {
        let plant = self.plant()?;
        let c = &self.constraints;
        let terminal = self.controller.terminal_mode.unwrap_or_else(|| TerminalMode::default_for(plant.n()));
        let mut cfg = MpcConfig::new(
            plant,
            c.horizon,
            c.state.build("state constraints")?,
            c.eps.clone(),
            c.input.build("input constraints")?,
            c.disturbance.build("disturbance support")?,
            terminal,
        )
        .map_err(|e| invalid(e.to_string()))?;
        cfg.beta_nonneg = self.controller.beta_nonneg;
        cfg.membership_tol = self.controller.membership_tol;
        cfg.mrpi_max_iter = self.controller.mrpi_max_iter;
        cfg.solver = Settings { max_iter: self.solver.max_iter, ..Settings::with_tol(self.solver.tol) };
        cfg.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn prior(&self, n: usize) -> Result<NwPrior, ConfigError> {
        let mut prior = NwPrior::default_for(n);
        if let Some(p) = &self.prior {
            if let Some(t) = &p.theta0 {
                prior.theta0 = DVector::from_vec(t.clone());
            }
            if let Some(v) = p.lambda0 {
                prior.lambda0 = v;
            }
            if let Some(v) = p.omega0 {
                prior.omega0 = v;
            }
            if let Some(m) = &p.psi0 {
                prior.psi0 = matrix(m, "psi0")?;
            }
            if let Some(v) = p.alpha {
                prior.alpha = v;
            }
            if let Some(v) = p.kmax {
                prior.kmax = v;
            }
        }
        Ok(prior)
    }

    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        let cfg = self.mpc_config()?;
        let n = cfg.n();
        let s = &self.simulation;
        let scn = Scenario {
            name: self.name.clone(),
            prior: self.prior(n)?,
            cfg,
            x0: DVector::from_vec(s.x0.clone()),
            historical: self.disturbance.historical.clone(),
            online: self.disturbance.online.clone(),
            historical_samples: s.historical_samples,
            t_s: s.t_s,
            runs: s.runs,
            seed: s.seed,
            mode: self.controller.mode,
            learner: self.learner.unwrap_or_default(),
            quiet_after: s.quiet_after,
        };
        scn.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(scn)
    }

    pub fn build(self) -> Result<SimConfig, ConfigError> {
        let scenario = self.scenario()?;
        if !(self.analysis.rpi_alpha > 0.0 && self.analysis.rpi_alpha < 1.0) {
            return Err(invalid("analysis.rpi_alpha must lie in (0, 1)"));
        }
        Ok(SimConfig { out_dir: self.simulation.out_dir.clone(), analysis: self.analysis.clone(), scenario, file: self })
    }
}

pub fn parse_config(text: &str) -> Result<SimConfig, ConfigError> {
    ConfigFile::parse(text)?.build()
}

pub fn load_config(path: &Path) -> Result<SimConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.display().to_string(), msg: e.to_string() })?;
    parse_config(&text).map_err(|e| match e {
        ConfigError::Parse(m) => ConfigError::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}
