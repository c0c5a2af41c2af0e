//! Run configuration, read from TOML.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use superstat::erm::LabelMode;
use superstat::{DeltaMethod, LossKind, SeparabilityConfig, SolverConfig, VarianceModel};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SweepAlpha,
    Separability,
    Bayes,
    Simulate,
    RandomLabels,
    OptimalLambda,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SweepAlpha => "sweep-alpha",
            Command::Separability => "separability",
            Command::Bayes => "bayes",
            Command::Simulate => "simulate",
            Command::RandomLabels => "random-labels",
            Command::OptimalLambda => "optimal-lambda",
        }
    }
}

/// Explicit list of values or an evenly spaced range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    Range {
        start: f64,
        stop: f64,
        points: usize,
        /// Space the points evenly in `ln x`.
        #[serde(default)]
        log: bool,
    },
}

impl Grid {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        match *self {
            Grid::List(ref v) => Ok(v.clone()),
            Grid::Range { start, stop, points, log } => {
                if points == 0 {
                    return Err(CliError::Config("grid needs at least one point".into()));
                }
                if log && !(start > 0.0 && stop > 0.0) {
                    return Err(CliError::Config("log grid needs positive bounds".into()));
                }
                let at = |i: usize| {
                    let t = if points == 1 { 0.0 } else { i as f64 / (points - 1) as f64 };
                    if log {
                        (start.ln() + t * (stop.ln() - start.ln())).exp()
                    } else {
                        start + t * (stop - start)
                    }
                };
                Ok((0..points).map(at).collect())
            }
        }
    }
}

/// Variance law as written in the config. `unit_covariance` is the
/// inverse-gamma family with `c = a − 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VarianceConfig {
    PointMass { delta: f64 },
    InverseGamma { a: f64, c: f64 },
    UnitCovariance { a: f64 },
    Contaminated { r: f64, a: f64, c: f64 },
}

impl VarianceConfig {
    pub fn model(self) -> Result<VarianceModel, CliError> {
        let model = match self {
            VarianceConfig::PointMass { delta } => VarianceModel::PointMass { delta },
            VarianceConfig::InverseGamma { a, c } => VarianceModel::InverseGamma { a, c },
            VarianceConfig::UnitCovariance { a } => VarianceModel::unit_covariance(a)?,
            VarianceConfig::Contaminated { r, a, c } => VarianceModel::Contaminated { r, a, c },
        };
        model.validate()?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(t) => vec![t.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Ridge grid for `optimal-lambda`.
    #[serde(default)]
    pub lambdas: Option<Grid>,
    #[serde(default = "default_rho")]
    pub rho_plus: f64,
    #[serde(default)]
    pub alphas: Option<Grid>,
    /// Single sample complexity for `optimal-lambda`.
    #[serde(default)]
    pub alpha: Option<f64>,
}

fn default_loss() -> LossKind {
    LossKind::Square
}

fn default_rho() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaChoice {
    Quadrature,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub zeta_nodes: usize,
    pub delta_method: DeltaChoice,
    /// Trapezoid refinement level for `delta_method = "quadrature"`.
    pub refinement: u32,
    pub mc_samples: usize,
    pub seed: u64,
    pub newton: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        SolverSection {
            tol: s.tol,
            max_iter: s.max_iter,
            damping: s.damping,
            zeta_nodes: s.zeta_quadrature_nodes,
            delta_method: DeltaChoice::Quadrature,
            refinement: 0,
            mc_samples: 100_000,
            seed: 0,
            newton: s.newton,
        }
    }
}

impl SolverSection {
    pub fn delta_method(&self) -> DeltaMethod {
        match self.delta_method {
            DeltaChoice::Quadrature => DeltaMethod::Quadrature { refinement: self.refinement },
            DeltaChoice::MonteCarlo => DeltaMethod::MonteCarlo {
                samples: self.mc_samples,
                seed: self.seed,
            },
        }
    }

    pub fn solver(&self) -> Result<SolverConfig, CliError> {
        let cfg = SolverConfig {
            damping: self.damping,
            tol: self.tol,
            max_iter: self.max_iter,
            zeta_quadrature_nodes: self.zeta_nodes,
            delta_method: self.delta_method(),
            init: None,
            square_fast_path: true,
            newton: self.newton,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    /// Dimension; 0 skips the simulations.
    pub d: usize,
    pub seeds: usize,
    pub n_test: usize,
    /// Root seed from which every dataset seed is derived.
    pub seed: u64,
    pub label_mode: LabelMode,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            d: 0,
            seeds: 10,
            n_test: 10_000,
            seed: 0,
            label_mode: LabelMode::Class,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeparabilitySection {
    pub theta_points: usize,
    pub gamma_points: usize,
    pub gamma_max: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub refinement: u32,
}

impl Default for SeparabilitySection {
    fn default() -> Self {
        let s = SeparabilityConfig::default();
        let refinement = match s.delta_method {
            DeltaMethod::Quadrature { refinement } => refinement,
            DeltaMethod::MonteCarlo { .. } => 1,
        };
        SeparabilitySection {
            theta_points: s.theta_points,
            gamma_points: s.gamma_points,
            gamma_max: s.gamma_max,
            tol: s.tol,
            max_iter: s.max_iter,
            refinement,
        }
    }
}

impl SeparabilitySection {
    pub fn config(&self) -> SeparabilityConfig {
        SeparabilityConfig {
            theta_points: self.theta_points,
            gamma_points: self.gamma_points,
            gamma_max: self.gamma_max,
            tol: self.tol,
            max_iter: self.max_iter,
            delta_method: DeltaMethod::Quadrature { refinement: self.refinement },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_problem")]
    pub problem: ProblemConfig,
    pub variance: OneOrMany<VarianceConfig>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub separability: SeparabilitySection,
}

fn default_problem() -> ProblemConfig {
    ProblemConfig {
        loss: default_loss(),
        lambda: None,
        lambdas: None,
        rho_plus: default_rho(),
        alphas: None,
        alpha: None,
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The single variance law of every command except `separability`.
    pub fn model(&self) -> Result<VarianceModel, CliError> {
        match &self.variance {
            OneOrMany::One(v) => v.model(),
            OneOrMany::Many(v) if v.len() == 1 => v[0].model(),
            OneOrMany::Many(_) => Err(CliError::Config(format!(
                "{} takes exactly one [variance] table",
                self.command.name()
            ))),
        }
    }

    pub fn models(&self) -> Result<Vec<(VarianceConfig, VarianceModel)>, CliError> {
        let list = self.variance.to_vec();
        if list.is_empty() {
            return Err(CliError::Config("no variance model given".into()));
        }
        list.into_iter().map(|v| Ok((v, v.model()?))).collect()
    }

    pub fn lambda(&self) -> Result<f64, CliError> {
        self.problem
            .lambda
            .ok_or_else(|| CliError::Config(format!("{} needs problem.lambda", self.command.name())))
    }

    pub fn alphas(&self) -> Result<Vec<f64>, CliError> {
        let grid = self
            .problem
            .alphas
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("{} needs problem.alphas", self.command.name())))?
            .values()?;
        if grid.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(CliError::Config("alpha values must be positive".into()));
        }
        Ok(grid)
    }

    pub fn lambdas(&self) -> Result<Vec<f64>, CliError> {
        let grid = self
            .problem
            .lambdas
            .as_ref()
            .ok_or_else(|| CliError::Config("optimal-lambda needs problem.lambdas".into()))?
            .values()?;
        if grid.is_empty() {
            return Err(CliError::Config("problem.lambdas is empty".into()));
        }
        if grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(CliError::Config("lambda values must be nonnegative".into()));
        }
        Ok(grid)
    }

    pub fn seeds(&self) -> Vec<u64> {
        let e = &self.experiment;
        (0..e.seeds as u64)
            .map(|i| superstat::erm::derive_seed(e.seed, i))
            .collect()
    }
}
