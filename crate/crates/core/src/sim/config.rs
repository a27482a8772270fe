//! Experiment configuration, parsed strictly from JSON.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{Band, SensorModel, StateSpaceModel};
use crate::linalg::SymMatrix;
use crate::solver::{SolverConfig, SolverMethod};

pub const METHOD_NAMES: [&str; 4] = ["kf1", "ckf", "ci", "mcmdrkf"];

/// Row-major dense matrix as nested JSON arrays.
pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub h: Rows,
    pub r: Rows,
}

/// Nominal model. `f` and `g` default to the constant-acceleration model for
/// the configured sampling period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub f: Option<Rows>,
    pub g: Option<Rows>,
    pub q: Rows,
    pub sensors: Vec<SensorConfig>,
    pub x0: Vec<f64>,
    pub v0: Rows,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let sensor = |r: f64| SensorConfig {
            h: vec![vec![1.0, 0.0, 0.0]],
            r: vec![vec![r]],
        };
        ModelConfig {
            f: None,
            g: None,
            q: vec![vec![1.0]],
            sensors: vec![sensor(1.0), sensor(4.0), sensor(9.0)],
            x0: vec![0.0; 3],
            v0: (0..3)
                .map(|i| (0..3).map(|j| if i == j { 100.0 } else { 0.0 }).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaPair {
    pub gamma1: f64,
    pub gamma2: f64,
}

impl GammaPair {
    pub fn band(&self) -> Band {
        Band::new(self.gamma1, self.gamma2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Barrier,
    ProjectedAscent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub method: SolverKind,
    pub max_iter: usize,
    pub obj_tol: f64,
    pub feas_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let d = SolverConfig::default();
        SolverSettings {
            method: SolverKind::Barrier,
            max_iter: d.max_iter,
            obj_tol: d.obj_tol,
            feas_tol: d.feas_tol,
        }
    }
}

impl SolverSettings {
    pub fn to_config(&self) -> SolverConfig {
        SolverConfig {
            method: match self.method {
                SolverKind::Barrier => SolverMethod::Barrier,
                SolverKind::ProjectedAscent => SolverMethod::ProjectedAscent,
            },
            max_iter: self.max_iter,
            obj_tol: self.obj_tol,
            feas_tol: self.feas_tol,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub ts: f64,
    pub steps: usize,
    pub runs: usize,
    pub seed: u64,
    /// Coupling of each sensor's noise to the previous process noise.
    pub beta: Vec<f64>,
    pub model: ModelConfig,
    /// Band shared by all sensors in the robust filter.
    pub gamma: GammaPair,
    pub gamma_grid: Option<Vec<GammaPair>>,
    /// Held-out runs used by gamma tuning.
    pub tuning_runs: usize,
    pub methods: Vec<String>,
    pub output_dir: PathBuf,
    pub solver: SolverSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            ts: 0.1,
            steps: 300,
            runs: 200,
            seed: 2024,
            beta: vec![1.0, 0.5, 0.25],
            model: ModelConfig::default(),
            gamma: GammaPair {
                gamma1: 1.0,
                gamma2: 1.0,
            },
            gamma_grid: None,
            tuning_runs: 50,
            methods: METHOD_NAMES.iter().map(|s| s.to_string()).collect(),
            output_dir: PathBuf::from("out"),
            solver: SolverSettings::default(),
        }
    }
}

fn matrix(rows: &Rows, what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn symmetric(rows: &Rows, what: &str) -> Result<SymMatrix> {
    let m = matrix(rows, what)?;
    SymMatrix::new(m).map_err(|e| Error::Config(format!("{what}: {e}")))
}

/// Constant-acceleration transition for sampling period `ts`.
pub fn constant_acceleration(ts: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let f = DMatrix::from_row_slice(3, 3, &[1.0, ts, ts * ts / 2.0, 0.0, 1.0, ts, 0.0, 0.0, 1.0]);
    let g = DMatrix::from_column_slice(3, 1, &[ts * ts / 2.0, ts, 1.0]);
    (f, g)
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(Error::Config("ts must be positive".into()));
        }
        if self.steps < 1 || self.runs < 1 {
            return Err(Error::Config("steps and runs must be at least 1".into()));
        }
        if self.beta.len() != self.model.sensors.len() {
            return Err(Error::Config(format!(
                "beta has {} entries for {} sensors",
                self.beta.len(),
                self.model.sensors.len()
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods must not be empty".into()));
        }
        for m in &self.methods {
            if !METHOD_NAMES.contains(&m.as_str()) {
                return Err(Error::Config(format!(
                    "unknown method {m:?}; expected one of {}",
                    METHOD_NAMES.join(", ")
                )));
            }
        }
        if let Some(grid) = &self.gamma_grid {
            if grid.is_empty() {
                return Err(Error::Config("gamma_grid must not be empty".into()));
            }
        }
        let model = self.state_space()?;
        let r = model.q.dim();
        for (i, (s, b)) in model.sensors.iter().zip(&self.beta).enumerate() {
            if *b != 0.0 && s.h.nrows() != r {
                return Err(Error::Config(format!(
                    "sensor {i}: noise coupling needs measurement dimension {r}, got {}",
                    s.h.nrows()
                )));
            }
        }
        self.solver.to_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn state_space(&self) -> Result<StateSpaceModel> {
        let (f_ca, g_ca) = constant_acceleration(self.ts);
        let m = &self.model;
        let f = match &m.f {
            Some(f) => matrix(f, "model.f")?,
            None => f_ca,
        };
        let g = match &m.g {
            Some(g) => matrix(g, "model.g")?,
            None => g_ca,
        };
        let sensors = m
            .sensors
            .iter()
            .enumerate()
            .map(|(i, s)| {
                Ok(SensorModel {
                    h: matrix(&s.h, &format!("model.sensors[{i}].h"))?,
                    r: symmetric(&s.r, &format!("model.sensors[{i}].r"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        StateSpaceModel::new(
            f,
            g,
            symmetric(&m.q, "model.q")?,
            sensors,
            DVector::from_column_slice(&m.x0),
            symmetric(&m.v0, "model.v0")?,
        )
        .map_err(|e| Error::Config(format!("model: {e}")))
    }

    pub fn solver_config(&self) -> SolverConfig {
        self.solver.to_config()
    }

    /// Names of the state components, used in output files.
    pub fn component_names(&self, n: usize) -> Vec<String> {
        if n == 3 && self.model.f.is_none() {
            ["position", "velocity", "acceleration"].map(String::from).to_vec()
        } else {
            (1..=n).map(|i| format!("x{i}")).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let model = cfg.state_space().unwrap();
        assert_eq!(model.n(), 3);
        assert_eq!(model.m_total(), 3);
        assert!((model.g[(0, 0)] - 0.005).abs() < 1e-15);
    }

    #[test]
    fn empty_object_is_the_default() {
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_json(r#"{"steps": 10, "stepz": 3}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(ExperimentConfig::from_json(r#"{"model": {"qq": [[1]]}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"gamma": {"gamma1": 1, "gamma2": 1, "g3": 0}}"#).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            r#"{"ts": 0}"#,
            r#"{"runs": 0}"#,
            r#"{"beta": [1, 2]}"#,
            r#"{"methods": ["kl"]}"#,
            r#"{"gamma_grid": []}"#,
            r#"{"model": {"q": [[-1]]}}"#,
            r#"{"solver": {"obj_tol": 0}}"#,
        ] {
            assert!(ExperimentConfig::from_json(text).is_err(), "{text}");
        }
    }

    #[test]
    fn round_trip() {
        let mut cfg = ExperimentConfig {
            gamma_grid: Some(vec![GammaPair { gamma1: 1.0, gamma2: 1.0 }]),
            ..ExperimentConfig::default()
        };
        cfg.solver.method = SolverKind::ProjectedAscent;
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }
}
