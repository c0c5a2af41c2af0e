//! Experiment runner behind the `solver` binary: one TOML config in, one CSV
//! table out.

pub mod config;
pub mod table;

use rayon::prelude::*;
use superstat::erm::{self, ExperimentConfig, ExperimentRow, Fitter, LabelMode, DEFAULT_LOGISTIC_TOL};
use superstat::metrics::{self, ErrorReport};
use superstat::state_evolution::{solve_rl_square, solve_se};
use superstat::{Error, LossKind, ProblemSpec, SolverConfig, VarianceModel};

pub use config::{Command, RunConfig};
pub use table::{Cell, Table};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Solver(#[from] Error),
}

/// Columns of `sweep-alpha`.
pub const SWEEP_COLUMNS: [&str; 12] = [
    "alpha",
    "eps_g_theory",
    "eps_t_theory",
    "eps_l_theory",
    "eps_bayes",
    "eps_g_emp_mean",
    "eps_g_emp_se",
    "eps_t_emp_mean",
    "eps_t_emp_se",
    "eps_l_emp_mean",
    "eps_l_emp_se",
    "converged",
];

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub table: Table,
    /// Every solve and fit behind the table succeeded.
    pub all_converged: bool,
    /// One-line summary for the terminal, if the command has one.
    pub summary: Option<String>,
}

/// Executes the configured command.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    match cfg.command {
        Command::SweepAlpha => sweep_alpha(cfg),
        Command::Separability => separability(cfg),
        Command::Bayes => bayes(cfg),
        Command::Simulate => simulate(cfg),
        Command::RandomLabels => random_labels(cfg),
        Command::OptimalLambda => optimal_lambda(cfg),
    }
}

fn spec_at(cfg: &RunConfig, model: VarianceModel, alpha: f64, lambda: f64) -> Result<ProblemSpec, CliError> {
    let spec = ProblemSpec {
        alpha,
        lambda,
        rho_plus: cfg.problem.rho_plus,
        loss: cfg.problem.loss,
        geometry: Default::default(),
        variance: model,
    };
    spec.validate()?;
    Ok(spec)
}

struct Theory {
    report: Option<ErrorReport>,
    converged: bool,
}

fn theory_point(spec: &ProblemSpec, solver: &SolverConfig) -> Theory {
    let solved = solve_se(spec, solver).and_then(|r| Ok((metrics::error_report(&r.params, spec, solver)?, r.converged)));
    match solved {
        Ok((report, converged)) => Theory {
            report: Some(report),
            converged,
        },
        Err(_) => Theory {
            report: None,
            converged: false,
        },
    }
}

fn fitter(cfg: &RunConfig, lambda: f64) -> Fitter {
    match cfg.problem.loss {
        LossKind::Square => Fitter::RidgeSquare { lambda },
        LossKind::Logistic => Fitter::Logistic {
            lambda,
            tol: DEFAULT_LOGISTIC_TOL,
        },
    }
}

fn experiment(cfg: &RunConfig, spec: &ProblemSpec, alphas: &[f64], lambda: f64) -> Result<Vec<ExperimentRow>, CliError> {
    let e = &cfg.experiment;
    if e.seeds == 0 {
        return Err(CliError::Config("experiment.seeds must be at least 1".into()));
    }
    let exp = ExperimentConfig {
        d: e.d,
        n_test: e.n_test,
        label_mode: e.label_mode,
    };
    Ok(erm::run_experiment(spec, alphas, &cfg.seeds(), &fitter(cfg, lambda), &exp)?)
}

fn sweep_alpha(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let model = cfg.model()?;
    let lambda = cfg.lambda()?;
    let alphas = cfg.alphas()?;
    let solver = cfg.solver.solver()?;
    let specs = alphas
        .iter()
        .map(|&a| spec_at(cfg, model, a, lambda))
        .collect::<Result<Vec<_>, _>>()?;
    let theory: Vec<Theory> = specs.par_iter().map(|s| theory_point(s, &solver)).collect();
    let empirical = match (cfg.experiment.d, specs.first()) {
        (0, _) | (_, None) => None,
        (_, Some(first)) => Some(experiment(cfg, first, &alphas, lambda)?),
    };

    let mut table = Table::new(&SWEEP_COLUMNS);
    let mut all = true;
    for (i, (&alpha, th)) in alphas.iter().zip(&theory).enumerate() {
        let r = th.report.as_ref();
        let mut converged = th.converged;
        let mut row = vec![
            Cell::Num(alpha),
            Cell::opt(r.map(|r| r.eps_g)),
            Cell::opt(r.map(|r| r.eps_t)),
            Cell::opt(r.map(|r| r.eps_l)),
            Cell::opt(metrics::bayes_optimal_error(&model, cfg.problem.rho_plus, alpha, &solver.delta_method).ok()),
        ];
        match empirical.as_ref().map(|rows| &rows[i]) {
            Some(e) => {
                converged &= e.failures == 0;
                for m in [e.eps_g, e.eps_t, e.eps_l] {
                    row.push(Cell::Num(m.mean));
                    row.push(Cell::Num(m.stderr));
                }
            }
            None => row.extend(std::iter::repeat_n(Cell::Empty, 6)),
        }
        row.push(Cell::Bool(converged));
        all &= converged;
        table.push(row);
    }
    Ok(RunOutcome {
        table,
        all_converged: all,
        summary: None,
    })
}

fn simulate(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let model = cfg.model()?;
    let lambda = cfg.lambda()?;
    let alphas = cfg.alphas()?;
    if cfg.experiment.d == 0 {
        return Err(CliError::Config("simulate needs experiment.d > 0".into()));
    }
    let spec = spec_at(cfg, model, alphas[0], lambda)?;
    let rows = experiment(cfg, &spec, &alphas, lambda)?;
    let mut table = Table::new(&[
        "alpha",
        "n",
        "eps_g_emp_mean",
        "eps_g_emp_se",
        "eps_t_emp_mean",
        "eps_t_emp_se",
        "eps_l_emp_mean",
        "eps_l_emp_se",
        "mse_g_emp_mean",
        "mse_g_emp_se",
        "failures",
        "diverged",
        "converged",
    ]);
    let mut all = true;
    for r in &rows {
        let n = ((r.alpha * cfg.experiment.d as f64).round() as u64).max(1);
        let mut row = vec![Cell::Num(r.alpha), Cell::Int(n)];
        for m in [r.eps_g, r.eps_t, r.eps_l, r.mse_g] {
            row.push(Cell::Num(m.mean));
            row.push(Cell::Num(m.stderr));
        }
        let ok = r.failures == 0;
        all &= ok;
        row.extend([Cell::Int(r.failures as u64), Cell::Int(r.diverged as u64), Cell::Bool(ok)]);
        table.push(row);
    }
    Ok(RunOutcome {
        table,
        all_converged: all,
        summary: None,
    })
}

fn bayes(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let model = cfg.model()?;
    let alphas = cfg.alphas()?;
    let method = cfg.solver.delta_method();
    let rho = cfg.problem.rho_plus;
    let mut table = Table::new(&["alpha", "eps_bayes", "eps_bayes_informed"]);
    for &alpha in &alphas {
        let closed = match metrics::bayes_optimal_error(&model, rho, alpha, &method) {
            Ok(x) => Some(x),
            Err(Error::MomentCondition { .. }) => None,
            Err(e) => return Err(e.into()),
        };
        let informed = metrics::informed_bayes_error(&model, rho, alpha, &method)?;
        table.push(vec![Cell::Num(alpha), Cell::opt(closed), Cell::Num(informed)]);
    }
    Ok(RunOutcome {
        table,
        all_converged: true,
        summary: None,
    })
}

fn separability(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    use config::VarianceConfig as V;
    let sep = cfg.separability.config();
    let rho = cfg.problem.rho_plus;
    let mut table = Table::new(&[
        "kind",
        "a",
        "c",
        "delta",
        "r",
        "rho_plus",
        "alpha_star",
        "theta_star",
        "gamma_star",
        "s_at_opt",
        "converged",
    ]);
    let mut all = true;
    for (raw, model) in cfg.models()? {
        let res = superstat::separability::alpha_star(&model, rho, &sep)?;
        let (kind, a, c, delta, r) = match raw {
            V::PointMass { delta } => ("point_mass", None, None, Some(delta), None),
            V::InverseGamma { a, c } => ("inverse_gamma", Some(a), Some(c), None, None),
            V::UnitCovariance { a } => ("unit_covariance", Some(a), Some(a - 1.0), None, None),
            V::Contaminated { r, a, c } => ("contaminated", Some(a), Some(c), None, Some(r)),
        };
        let ok = res.converged && res.certified;
        all &= ok;
        table.push(vec![
            Cell::Text(kind.into()),
            Cell::opt(a),
            Cell::opt(c),
            Cell::opt(delta),
            Cell::opt(r),
            Cell::Num(rho),
            Cell::Num(res.alpha_star),
            Cell::Num(res.theta_star),
            Cell::Num(res.gamma_star),
            Cell::Num(res.s_at_opt),
            Cell::Bool(ok),
        ]);
    }
    Ok(RunOutcome {
        table,
        all_converged: all,
        summary: None,
    })
}

fn random_labels(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    if cfg.problem.loss != LossKind::Square {
        return Err(CliError::Config("random-labels theory is implemented for square loss".into()));
    }
    let model = cfg.model()?;
    let lambda = cfg.lambda()?;
    let alphas = cfg.alphas()?;
    let solver = cfg.solver.solver()?;
    let nodes = model.nodes(&solver.delta_method);
    let theory: Vec<_> = alphas
        .par_iter()
        .map(|&alpha| {
            let r = solve_rl_square(alpha, lambda, &model, &solver)?;
            let (eps_l, eps_t) = metrics::rl_training_metrics(r.v, r.q, &nodes)?;
            Ok::<_, Error>((r, eps_l, eps_t))
        })
        .collect();
    let empirical = if cfg.experiment.d > 0 {
        let mut local = cfg.clone();
        local.experiment.label_mode = LabelMode::Random;
        let spec = spec_at(cfg, model, alphas[0], lambda)?;
        Some(experiment(&local, &spec, &alphas, lambda)?)
    } else {
        None
    };
    let mut table = Table::new(&[
        "alpha",
        "v",
        "q",
        "eps_l_theory",
        "eps_t_theory",
        "eps_l_universal",
        "mse_g_theory",
        "eps_l_emp_mean",
        "eps_l_emp_se",
        "eps_t_emp_mean",
        "eps_t_emp_se",
        "converged",
    ]);
    let mut all = true;
    for (i, (&alpha, th)) in alphas.iter().zip(&theory).enumerate() {
        let mut row = vec![Cell::Num(alpha)];
        let mut ok = match th {
            Ok((r, eps_l, eps_t)) => {
                row.extend([
                    Cell::Num(r.v),
                    Cell::Num(r.q),
                    Cell::Num(*eps_l),
                    Cell::Num(*eps_t),
                    Cell::Num(metrics::rl_training_loss(alpha)),
                    Cell::Num(metrics::rl_mse(r.q, &model)),
                ]);
                r.converged
            }
            Err(_) => {
                row.extend(std::iter::repeat_n(Cell::Empty, 4));
                row.push(Cell::Num(metrics::rl_training_loss(alpha)));
                row.push(Cell::Empty);
                false
            }
        };
        match empirical.as_ref().map(|rows| &rows[i]) {
            Some(e) => {
                ok &= e.failures == 0;
                row.extend([
                    Cell::Num(e.eps_l.mean),
                    Cell::Num(e.eps_l.stderr),
                    Cell::Num(e.eps_t.mean),
                    Cell::Num(e.eps_t.stderr),
                ]);
            }
            None => row.extend(std::iter::repeat_n(Cell::Empty, 4)),
        }
        row.push(Cell::Bool(ok));
        all &= ok;
        table.push(row);
    }
    Ok(RunOutcome {
        table,
        all_converged: all,
        summary: None,
    })
}

fn optimal_lambda(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let model = cfg.model()?;
    let lambdas = cfg.lambdas()?;
    let alpha = cfg
        .problem
        .alpha
        .ok_or_else(|| CliError::Config("optimal-lambda needs problem.alpha".into()))?;
    let solver = cfg.solver.solver()?;
    let specs = lambdas
        .iter()
        .map(|&l| spec_at(cfg, model, alpha, l))
        .collect::<Result<Vec<_>, _>>()?;
    let theory: Vec<Theory> = specs.par_iter().map(|s| theory_point(s, &solver)).collect();
    let best = theory
        .iter()
        .enumerate()
        .filter(|(_, t)| t.converged)
        .filter_map(|(i, t)| t.report.as_ref().map(|r| (i, r.eps_g)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    let mut table = Table::new(&[
        "alpha",
        "lambda",
        "eps_g_theory",
        "eps_t_theory",
        "eps_l_theory",
        "is_optimal",
        "converged",
    ]);
    let mut all = true;
    for (i, (&lambda, th)) in lambdas.iter().zip(&theory).enumerate() {
        let r = th.report.as_ref();
        all &= th.converged;
        table.push(vec![
            Cell::Num(alpha),
            Cell::Num(lambda),
            Cell::opt(r.map(|r| r.eps_g)),
            Cell::opt(r.map(|r| r.eps_t)),
            Cell::opt(r.map(|r| r.eps_l)),
            Cell::Bool(best == Some(i)),
            Cell::Bool(th.converged),
        ]);
    }
    let summary = best.map(|i| {
        let edge = if i == 0 || i + 1 == lambdas.len() { " (grid boundary)" } else { "" };
        format!("lambda_star = {:.6e}{edge}", lambdas[i])
    });
    Ok(RunOutcome {
        table,
        all_converged: all,
        summary,
    })
}
