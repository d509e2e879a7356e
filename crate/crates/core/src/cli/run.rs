use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use super::config::{ConfigError, ExperimentConfig};
use super::scenarios::{build_drivers, build_marks, build_model, closed_form_y0, deferred_ode, ScenarioInfo};
use crate::driver::{BoundParamsA, DriverSpec, ProbeSet, TerminalCondition};
use crate::forward::{simulate_paths, PathBundle, Start, TimeGrid};
use crate::norms::{check_jump_norm_lemmas, doleans_check, energy_check, estimate_norms, NormReport};
use crate::solver::{build_u_map, DiscreteSolution, ULattice};
use crate::stats::ordered_sum;
use crate::verify::{
    check_universal_bounds, comparison_experiment, m_convergence_check, picard_trace_check, solve_scenario,
    stability_experiment, u_regularity_check, u_seed_spread_check, uniqueness_proxy, z_growth_check, BoundEvaluation,
};
use crate::Error;

pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const NODES_FILE: &str = "nodes.csv";
pub const FAILURE_FILE: &str = "failure.txt";

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Solver(Error),
    Io(std::io::Error),
}

impl RunError {
    /// 2 for schema and precondition errors, 3 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Io(_) => 2,
            RunError::Solver(Error::InvalidInput(_) | Error::Precondition(_) | Error::Unsupported(_) | Error::Io(_)) => 2,
            RunError::Solver(_) => 3,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "config error: {e}"),
            RunError::Solver(e) => write!(f, "{e}"),
            RunError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Solver(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub initial_value: f64,
    pub initial_value_std_error: f64,
    pub y_sup: f64,
    pub iterations: usize,
    pub cascade_levels: Option<Vec<f64>>,
    pub cascade_distances: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub crate_name: &'static str,
    pub crate_version: &'static str,
    pub scenario: &'static str,
    pub driver: &'static str,
    pub exercises: &'static str,
    pub seed: u64,
    pub threads: usize,
    pub config: ExperimentConfig,
    pub summary: SolveSummary,
    pub results_file: &'static str,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<BoundEvaluation>,
    pub manifest: Manifest,
    pub nodes: Option<String>,
}

impl RunOutput {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

fn row(name: &str, lhs: f64, rhs: f64, pass: bool) -> BoundEvaluation {
    BoundEvaluation {
        pass,
        ..BoundEvaluation::new(name, lhs, rhs, 0.0)
    }
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// The results table: fixed header and 17 significant digits.
pub fn results_csv(rows: &[BoundEvaluation]) -> String {
    let mut s = String::from("check,lhs,rhs,slack,pass\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.name, fmt_float(r.lhs), fmt_float(r.rhs), fmt_float(r.slack), r.pass);
    }
    s
}

fn nodes_csv(sol: &DiscreteSolution, bundle: &PathBundle) -> String {
    let marks = bundle.marks();
    let paths = sol.n_paths();
    let mut s = String::from("node,time,y_mean,y_sd,z_abs_mean,psi_l2_mean\n");
    for i in sol.start_node..sol.y.nodes() {
        let mean = ordered_sum(paths, |p| sol.y.value(i, p)) / paths as f64;
        let var = ordered_sum(paths, |p| (sol.y.value(i, p) - mean).powi(2)) / paths as f64;
        let z = ordered_sum(paths, |p| sol.z.get(i, p).iter().map(|v| v * v).sum::<f64>().sqrt()) / paths as f64;
        let psi = ordered_sum(paths, |p| marks.l2_norm_sq(sol.psi.get(i, p)).sqrt()) / paths as f64;
        let _ = writeln!(
            s,
            "{i},{},{},{},{},{}",
            fmt_float(sol.grid.time(i)),
            fmt_float(mean),
            fmt_float(var.sqrt()),
            fmt_float(z),
            fmt_float(psi)
        );
    }
    s
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    info: &'static ScenarioInfo,
    grid: TimeGrid,
    bundle: PathBundle,
    driver: DriverSpec,
    upper: Option<DriverSpec>,
    basis: crate::condexp::RegressionBasis,
    solver: crate::solver::SolverConfig,
}

/// Simulate, solve, estimate norms and run every requested check.
/// `config` must already be resolved.
pub fn execute(config: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let info = config.scenario_info()?;
    let grid = TimeGrid::uniform(config.grid.horizon, config.grid.steps)?;
    let marks = Arc::new(build_marks(config)?);
    let model = build_model(config);
    let bundle = simulate_paths(
        &model,
        &grid,
        &marks,
        &Start::origin(vec![config.model.x0]),
        config.paths(),
        config.monte_carlo.seed,
    )?;
    let (driver, upper) = build_drivers(config, marks.clone())?;
    let ctx = Context {
        config,
        info,
        grid,
        bundle,
        driver,
        upper,
        basis: config.basis().build()?,
        solver: config.solver.build(),
    };
    let (sol, cascade) = solve_scenario(&ctx.bundle, &ctx.driver, &ctx.solver, &ctx.basis)?;
    let needs_norms = config
        .checks()
        .iter()
        .any(|c| matches!(c.as_str(), "universal_bounds" | "jump_chain" | "energy"));
    let norms = if needs_norms {
        Some(estimate_norms(&sol, &ctx.bundle, &marks, &ctx.basis, &[2.0])?)
    } else {
        None
    };
    let mut rows = Vec::new();
    for check in config.checks() {
        run_check(&ctx, check, &sol, cascade.as_ref(), norms.as_ref(), &mut rows)?;
    }
    let est = sol.initial_value_estimate();
    let summary = SolveSummary {
        initial_value: sol.initial_value(),
        initial_value_std_error: est.std_error,
        y_sup: sol.y_sup(),
        iterations: sol.total_iterations(),
        cascade_levels: cascade.as_ref().map(|c| c.levels.clone()),
        cascade_distances: cascade.as_ref().map(|c| c.distances.clone()),
    };
    let manifest = Manifest {
        crate_name: env!("CARGO_PKG_NAME"),
        crate_version: env!("CARGO_PKG_VERSION"),
        scenario: info.name,
        driver: info.driver,
        exercises: info.exercises,
        seed: config.monte_carlo.seed,
        threads: rayon::current_num_threads(),
        config: config.clone(),
        summary,
        results_file: RESULTS_FILE,
    };
    let nodes = config.node_summaries.then(|| nodes_csv(&sol, &ctx.bundle));
    Ok(RunOutput { rows, manifest, nodes })
}

fn run_check(
    ctx: &Context<'_>,
    check: &str,
    sol: &DiscreteSolution,
    cascade: Option<&crate::solver::CascadeReport>,
    norms: Option<&NormReport>,
    rows: &mut Vec<BoundEvaluation>,
) -> Result<(), RunError> {
    let c = ctx.config;
    let norms = || norms.expect("norms are estimated for norm-based checks");
    match check {
        "cole_hopf" => {
            let gamma = c.driver.gamma;
            let xi = ctx.driver.terminal();
            let n = ctx.grid.n_steps();
            let paths = ctx.bundle.n_paths();
            let mean = ordered_sum(paths, |p| (gamma * xi.eval(ctx.bundle.state(n, p))).exp()) / paths as f64;
            let oracle = mean.ln() / gamma;
            let err = (sol.initial_value() - oracle).abs() / oracle.abs().max(f64::MIN_POSITIVE);
            rows.push(row("cole_hopf_rel_error", err, 0.02, err < 0.02));
        }
        "closed_form" => {
            let oracle = closed_form_y0(c);
            let err = (sol.initial_value() - oracle).abs() / oracle.abs().max(f64::MIN_POSITIVE);
            rows.push(row("closed_form_rel_error", err, 0.01, err < 0.01));
            if c.scenario == "deferred_value" {
                let big_t = c.grid.horizon;
                let node = ctx.grid.first_node_at_or_after(big_t - c.driver.lag / 2.0);
                let t = ctx.grid.time(node);
                let oracle = deferred_ode(c.terminal().level, c.driver.kappa, c.driver.lag, big_t, t);
                let err = (sol.y.value(node, 0) - oracle).abs() / oracle.abs().max(f64::MIN_POSITIVE);
                rows.push(row("closed_form_mid_rel_error", err, 0.01, err < 0.01));
            }
        }
        "universal_bounds" => {
            let a = BoundParamsA::new(ctx.driver.terminal().sup(), *ctx.driver.structure(), ctx.grid.horizon())?;
            rows.extend(check_universal_bounds(norms(), &a)?);
        }
        "jump_chain" => rows.extend(check_jump_norm_lemmas(norms()).rows),
        "energy" => {
            for n in [1, 2] {
                rows.push(energy_check(&sol.z, &ctx.bundle, n, norms().h2_bmo_sq)?.row);
            }
        }
        "doleans" => {
            let r = doleans_check(&sol.z, &ctx.bundle)?;
            rows.push(row("doleans_mean", (r.mean.mean - 1.0).abs(), 3.0 * r.mean.std_error, r.pass));
        }
        "m_convergence" => {
            let report = cascade.expect("validated: cascade scenario");
            let eps_fix = 1e-3 * sol.y_sup().max(1.0);
            let r = m_convergence_check(report, eps_fix);
            let rise = r.distances.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
            rows.push(row("m_convergence_monotone", rise, 0.0, r.nonincreasing));
            rows.push(row("m_convergence_last", r.last, eps_fix, r.last < eps_fix));
        }
        "picard" => {
            let r = picard_trace_check(sol, 0.9);
            rows.push(row("picard_tail_ratio", r.worst_tail_ratio, 0.9, r.pass));
        }
        "stability" => {
            let s = &c.stability;
            let base = &ctx.driver;
            let direction = TerminalCondition::cosine(s.terminal_weight);
            let perturb = |e: f64| -> crate::Result<DriverSpec> {
                let t = base.terminal().perturbed(e, &direction);
                Ok(base.shifted(e * s.generator_weight)?.with_terminal(t))
            };
            let r = stability_experiment(&ctx.bundle, base, perturb, &s.eps, s.p, &ctx.solver, &ctx.basis)?;
            let at_zero = r
                .eps
                .iter()
                .zip(&r.distances)
                .filter(|(e, _)| **e == 0.0)
                .map(|(_, d)| *d)
                .fold(0.0, f64::max);
            rows.push(row("stability_zero", at_zero, 0.0, r.zero_exact));
            rows.push(row("stability_slope_error", (r.slope - 1.0).abs(), 0.15, r.pass));
        }
        "comparison" => {
            let upper = match &ctx.upper {
                Some(u) => u.clone(),
                None => ctx.driver.shifted(c.driver.shift)?,
            };
            let probes = ProbeSet::random(&ctx.grid, 1, &upper, c.comparison.probes, 3.0, 1.0, c.monte_carlo.seed);
            let r = comparison_experiment(
                &ctx.bundle,
                &ctx.driver,
                &upper,
                &probes,
                c.comparison.noise_floor,
                &ctx.solver,
                &ctx.basis,
            )?;
            rows.push(row("comparison_violation", r.max_violation, r.noise_floor, r.pass));
            let same = comparison_experiment(&ctx.bundle, &upper, &upper, &probes, Some(0.0), &ctx.solver, &ctx.basis)?;
            rows.push(row("comparison_identical", same.max_violation, 0.0, same.pass));
        }
        "uniqueness" => {
            let r = uniqueness_proxy(&ctx.bundle, &ctx.driver, &ctx.solver, &ctx.basis)?;
            rows.push(row("uniqueness_distance", r.distance, r.tolerance, r.pass));
        }
        "z_growth" => {
            let r = z_growth_check(sol, &ctx.bundle, 0.0)?;
            rows.push(row("z_growth_z_tail", r.z.q999, 2.0 * r.z.median, r.z.pass));
            rows.push(row("z_growth_psi_tail", r.psi.q999, 2.0 * r.psi.median, r.psi.pass));
        }
        "u_regularity" => {
            let u = &c.u_map;
            let lattice = ULattice::scalar(u.times.clone(), &u.states);
            let table = build_u_map(
                &ctx.driver,
                ctx.bundle.model(),
                &ctx.grid,
                ctx.bundle.marks(),
                &ctx.basis,
                &ctx.solver,
                &lattice,
                u.paths,
                &u.seeds,
            )?;
            let r = u_regularity_check(&table, u.rho, u.alpha, u.max_over_median)?;
            let ratio = if r.median_ratio > 0.0 {
                r.fitted_constant / r.median_ratio
            } else {
                0.0
            };
            rows.push(row("u_regularity_max_over_median", ratio, u.max_over_median, r.pass));
            let s = u_seed_spread_check(&table, 3.0);
            rows.push(row("u_seed_spread", s.worst_score, 3.0, s.pass));
        }
        other => {
            return Err(ConfigError::new("checks", format!("check {other:?} is not supported by {}", ctx.info.name)).into());
        }
    }
    Ok(())
}

/// Write the results table, manifest and optional node summaries into `dir`.
pub fn write_artifacts(out: &RunOutput, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(RESULTS_FILE), results_csv(&out.rows))?;
    let manifest = serde_json::to_string_pretty(&out.manifest).map_err(std::io::Error::other)?;
    std::fs::write(dir.join(MANIFEST_FILE), manifest + "\n")?;
    if let Some(nodes) = &out.nodes {
        std::fs::write(dir.join(NODES_FILE), nodes)?;
    }
    Ok(())
}

/// Record a solver failure (with its iteration trace) next to the results.
pub fn write_failure(err: &RunError, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(FAILURE_FILE), format!("{err}\n{err:?}\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(text).unwrap().resolve().unwrap()
    }

    #[test]
    fn csv_layout() {
        let rows = vec![row("a", 0.1, 1.0, true), BoundEvaluation::new("b", 2.0, 1.0, 0.0)];
        let csv = results_csv(&rows);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "check,lhs,rhs,slack,pass");
        assert_eq!(lines[1], "a,1.0000000000000001e-1,1.0000000000000000e0,9.0000000000000002e-1,true");
        assert!(lines[2].ends_with(",false"));
    }

    #[test]
    fn zero_scenario_passes_everything() {
        let c = config("scenario = \"zero\"\n[grid]\nsteps = 20\n[monte_carlo]\npaths = 500\n");
        let out = execute(&c).unwrap();
        assert!(out.passed(), "{}", results_csv(&out.rows));
        assert_eq!(out.manifest.summary.initial_value, 0.0);
    }

    #[test]
    fn closed_forms_for_lipschitz_scenarios() {
        for s in ["linear_y", "anticipated_sup", "deferred_value"] {
            let c = config(&format!("scenario = \"{s}\"\n[monte_carlo]\npaths = 200\n"));
            let out = execute(&c).unwrap();
            assert!(out.passed(), "{s}\n{}", results_csv(&out.rows));
        }
    }

    #[test]
    fn comparison_pair_default() {
        let c = config("scenario = \"comparison_pair\"\n[grid]\nsteps = 20\n[monte_carlo]\npaths = 1000\n");
        let out = execute(&c).unwrap();
        assert!(out.passed(), "{}", results_csv(&out.rows));
        assert!(out.rows.iter().any(|r| r.name == "comparison_identical" && r.lhs == 0.0));
    }

    #[test]
    fn node_summaries_cover_the_grid() {
        let c = config("scenario = \"linear_y\"\nnode_summaries = true\nchecks = []\n[grid]\nsteps = 5\n[monte_carlo]\npaths = 10\n");
        let out = execute(&c).unwrap();
        assert_eq!(out.nodes.unwrap().lines().count(), 7);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(RunError::Config(ConfigError::new("x", "y")).exit_code(), 2);
        assert_eq!(RunError::Solver(Error::Precondition("p".into())).exit_code(), 2);
        let nc = Error::NonConvergence {
            window_start: 0.0,
            window_end: 1.0,
            trace: vec![1.0, 0.9],
        };
        assert_eq!(RunError::Solver(nc).exit_code(), 3);
    }
}
