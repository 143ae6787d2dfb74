//! JSON experiment configuration.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::atoms::{AtomicSet, Budget};
use crate::error::{Error, Result};
use crate::generate::{self, BpdnKind, CompletionParams, Instance, RpcaParams};
use crate::linops::{LinOp, Mat};
use crate::objectives::{Formulation, Loss, ProblemSpec};
use crate::retrieval::{Limits, OracleChoice};
use crate::solvers::ReducedOptions;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    pub experiment: Experiment,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    Bpdn {
        problem: BpdnKind,
        #[serde(default)]
        noise: f64,
        #[serde(default = "default_alpha_rel")]
        alpha_rel: f64,
    },
    MatrixCompletion(CompletionParams),
    Rpca(RpcaParams),
    /// Small dense problem given inline.
    Custom {
        /// Row-major operator entries.
        matrix: Vec<Vec<f64>>,
        b: Vec<f64>,
        set: AtomicSet,
        /// Misfit bound on `||b - M x||^2 / 2`.
        alpha: f64,
        budget: Vec<usize>,
        #[serde(default)]
        eps_tol: f64,
    },
}

fn default_alpha_rel() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_formulation")]
    pub formulation: Formulation,
    #[serde(default)]
    pub oracle: OracleChoice,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub cadence: Option<usize>,
    #[serde(default = "default_reduced_tol")]
    pub reduced_tol: f64,
    #[serde(default = "default_reduced_max_iter")]
    pub reduced_max_iter: usize,
}

fn default_formulation() -> Formulation {
    Formulation::P3
}
fn default_max_iter() -> usize {
    500
}
fn default_reduced_tol() -> f64 {
    ReducedOptions::default().tol
}
fn default_reduced_max_iter() -> usize {
    ReducedOptions::default().max_iter
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            formulation: default_formulation(),
            oracle: OracleChoice::Auto,
            max_iter: default_max_iter(),
            cadence: None,
            reduced_tol: default_reduced_tol(),
            reduced_max_iter: default_reduced_max_iter(),
        }
    }
}

impl SolverConfig {
    pub fn limits(&self) -> Limits {
        Limits {
            max_iter: self.max_iter,
            cadence: self.cadence,
            reduced: ReducedOptions { tol: self.reduced_tol, max_iter: self.reduced_max_iter, radius: None },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory for `report.json` and `trace.csv`.
    #[serde(default)]
    pub dir: Option<String>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.solver.max_iter == 0 {
            return Err(Error::Config("solver.max_iter must be at least 1".into()));
        }
        if self.solver.cadence == Some(0) {
            return Err(Error::Config("solver.cadence must be at least 1".into()));
        }
        if !(self.solver.reduced_tol > 0.0) || self.solver.reduced_max_iter == 0 {
            return Err(Error::Config("reduced_tol must be positive and reduced_max_iter at least 1".into()));
        }
        Ok(())
    }

    /// Build the problem instance. Argument errors from the generators are
    /// reported as configuration errors.
    pub fn instance(&self) -> Result<Instance> {
        let form = self.solver.formulation;
        let as_config = |e: Error| match e {
            Error::Argument(m) | Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        match &self.experiment {
            Experiment::Bpdn { problem, noise, alpha_rel } => {
                generate::bpdn(*problem, self.seed, *noise, *alpha_rel, form).map_err(as_config)
            }
            Experiment::MatrixCompletion(p) => generate::matrix_completion(p, self.seed, form).map_err(as_config),
            Experiment::Rpca(p) => generate::rpca(p, self.seed, form).map_err(as_config),
            Experiment::Custom { matrix, b, set, alpha, budget, eps_tol } => {
                let rows = matrix.len();
                let cols = matrix.first().map_or(0, |r| r.len());
                if rows == 0 || cols == 0 || matrix.iter().any(|r| r.len() != cols) {
                    return Err(Error::Config("custom matrix must be a nonempty rectangular array".into()));
                }
                let m = Mat::from_fn(rows, cols, |i, j| matrix[i][j]);
                let op = LinOp::dense(m).map_err(as_config)?;
                let bv = Mat::from_column_slice(b.len(), 1, b);
                let spec = ProblemSpec::new(
                    Loss::HalfSqNorm,
                    Arc::new(op),
                    bv,
                    set.clone(),
                    form,
                    *alpha,
                    Budget(budget.clone()),
                    *eps_tol,
                )
                .map_err(as_config)?;
                let x_true = spec.op.domain().zeros();
                Ok(Instance { spec, x_true, support: Vec::new(), components: Vec::new() })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::from_json(
            r#"{"version": 1, "seed": 3, "experiment": {"kind": "bpdn", "problem": "smoke"}}"#,
        )
        .unwrap();
        assert_eq!(cfg.solver.max_iter, 500);
        assert_eq!(cfg.solver.formulation, Formulation::P3);
        let inst = cfg.instance().unwrap();
        assert_eq!(inst.support.len(), 1);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            r#"{"version": 2, "experiment": {"kind": "bpdn", "problem": "smoke"}}"#,
            r#"{"version": 1, "experiment": {"kind": "bpdn", "problem": "smoke", "extra": 1}}"#,
            r#"{"version": 1, "experiment": {"kind": "nope"}}"#,
            r#"{"version": 1, "experiment": {"kind": "bpdn", "problem": "smoke"}, "solver": {"max_iter": 0}}"#,
            "not json",
        ] {
            assert!(matches!(ExperimentConfig::from_json(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn custom_and_generator_errors_are_config_errors() {
        let cfg = ExperimentConfig::from_json(
            r#"{"version": 1, "experiment": {"kind": "matrix_completion", "m": 4, "n": 4, "rank": 9, "fraction": 0.5}}"#,
        )
        .unwrap();
        assert!(matches!(cfg.instance(), Err(Error::Config(_))));
        let cfg = ExperimentConfig::from_json(
            r#"{"version": 1, "experiment": {"kind": "custom", "matrix": [[1, 0], [0, 2]], "b": [1, 2],
                "set": {"kind": "signed_canonical", "shape": {"rows": 2, "cols": 1}}, "alpha": 0.0, "budget": [2]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.instance().unwrap().spec.op.domain().len(), 2);
    }
}
