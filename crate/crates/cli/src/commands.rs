//! One function per subcommand; each computes in parallel, then hands results to the collector.

use std::f64::consts::PI;

use serde::Serialize;
use spdelab::diagnostics::{
    apriori_certificate, energy_ledger, l1_contraction_probe, refinement_study, suggested_delta, DeltaSuggestion,
};
use spdelab::control::{optimize_control, OptimizationResult};
use spdelab::ergodic::{boundedness_profile, test_function_average, time_average_measure, FunctionalAverage};
use spdelab::io::{trajectory_rows, write_trajectory_csv};
use spdelab::model::AssumptionReport;
use spdelab::{run_ensemble, validate_assumptions, Control, Field, Model, RngPolicy, Trajectory};

use crate::config::RunConfig;
use crate::output::{num, Collector};
use crate::CliError;

/// What a finished command reports back to `main`.
pub enum Outcome {
    Complete,
    /// Outputs were written but some paths failed.
    Partial(String),
    /// Outputs were written but a model assumption failed.
    Rejected(String),
}

fn strings(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}

fn control_for(cfg: &RunConfig, model: &Model) -> Result<Control, CliError> {
    if cfg.control.theta.is_empty() {
        return Ok(Control::zero(cfg.scheme.horizon, 1, model.mesh.node_count()));
    }
    Ok(cfg.family(&model.mesh)?.realize(&cfg.control.theta)?)
}

/// Splits path results into successes and errors; all-failed runs surface the first error.
fn partition(results: Vec<spdelab::Result<Trajectory>>) -> Result<(Vec<Trajectory>, Vec<String>), CliError> {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    let mut first = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => ok.push(t),
            Err(e) if e.is_solver_failure() => {
                failed.push(format!("path {i}: {e}"));
                first.get_or_insert(e);
            }
            Err(e) => return Err(e.into()),
        }
    }
    if ok.is_empty() {
        return Err(first.expect("at least one path").into());
    }
    Ok((ok, failed))
}

fn partial_or_complete(failed: &[String]) -> Outcome {
    if failed.is_empty() {
        Outcome::Complete
    } else {
        Outcome::Partial(format!("{} path(s) failed; first: {}", failed.len(), failed[0]))
    }
}

#[derive(Serialize)]
struct PathSummary {
    path: u64,
    final_l2_norm: f64,
    max_newton_iters: usize,
    picard_steps: usize,
    worst_relative_energy_residual: f64,
    total_dissipation: f64,
}

#[derive(Serialize)]
struct SimulateSummary {
    paths: Vec<PathSummary>,
    failures: Vec<String>,
}

pub fn simulate(cfg: &RunConfig, out: &mut Collector) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let control = control_for(cfg, &model)?;
    let rng = RngPolicy::new(cfg.rng.seed);
    let results = run_ensemble(&model, &cfg.scheme, &control, &rng, 0, cfg.rng.paths);
    let (trajs, failed) = partition(results)?;
    let ledgers = trajs
        .iter()
        .map(|t| energy_ledger(t, &model))
        .collect::<spdelab::Result<Vec<_>>>()?;

    let mut summary = SimulateSummary { paths: Vec::new(), failures: failed.clone() };
    for (t, ledger) in trajs.iter().zip(&ledgers) {
        let mut body = Vec::new();
        write_trajectory_csv(&mut body, &trajectory_rows(t, &model)?).map_err(|e| CliError::Io(e.to_string()))?;
        out.csv_raw(&format!("trajectory_{:04}.csv", t.path), &body)?;

        let columns =
            strings(&["step", "kinetic", "dissipation", "increment", "work", "noise_work", "residual", "rhs_norm"]);
        let rows: Vec<Vec<String>> = ledger
            .entries
            .iter()
            .map(|e| {
                vec![
                    e.step.to_string(),
                    num(e.kinetic),
                    num(e.dissipation),
                    num(e.increment),
                    num(e.work),
                    num(e.noise_work),
                    num(e.residual),
                    num(e.rhs_norm),
                ]
            })
            .collect();
        out.csv(&format!("energy_{:04}.csv", t.path), &columns, &rows)?;
        if cfg.output.states {
            out.states(&format!("states_{:04}.bin", t.path), &t.states)?;
        }
        summary.paths.push(PathSummary {
            path: t.path,
            final_l2_norm: model.mesh.l2_norm(t.final_state()),
            max_newton_iters: t.stats.iter().map(|s| s.iterations).max().unwrap_or(0),
            picard_steps: t.stats.iter().map(|s| s.picard_steps).sum(),
            worst_relative_energy_residual: ledger.worst_relative_residual(),
            total_dissipation: ledger.total_dissipation,
        });
    }
    out.json("simulate.json", &summary)?;
    Ok(partial_or_complete(&failed))
}

#[derive(Serialize)]
struct CertifySummary {
    report: spdelab::diagnostics::RefinementReport<f64>,
    any_upward_trend: bool,
    failures: Vec<String>,
}

pub fn certify(cfg: &RunConfig, out: &mut Collector) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let control = control_for(cfg, &model)?;
    let rng = RngPolicy::new(cfg.rng.seed);
    if cfg.certify.levels.is_empty() {
        return Err(CliError::Config("certify.levels must list at least one step count".into()));
    }
    let mut levels = Vec::new();
    let mut failed = Vec::new();
    for &steps in &cfg.certify.levels {
        let mut scheme = cfg.scheme.clone();
        scheme.steps = steps;
        scheme.validate(&model)?;
        let (trajs, f) = partition(run_ensemble(&model, &scheme, &control, &rng, 0, cfg.certify.paths))?;
        failed.extend(f.into_iter().map(|m| format!("{steps} steps, {m}")));
        levels.push(apriori_certificate(&trajs, &model)?);
    }
    let columns = strings(&[
        "steps",
        "kappa",
        "paths",
        "sup_mean_sq",
        "sup_mean_sq_se",
        "increment_sum",
        "increment_sum_se",
        "gradient_sum",
        "gradient_sum_se",
        "sup_in_time",
        "sup_in_time_se",
        "interpolation_gap",
        "interpolation_gap_se",
    ]);
    let rows: Vec<Vec<String>> = cfg
        .certify
        .levels
        .iter()
        .zip(&levels)
        .map(|(steps, l)| {
            let mut r = vec![steps.to_string(), num(l.kappa), l.paths.to_string()];
            for e in [l.sup_mean_sq, l.increment_sum, l.gradient_sum, l.sup_in_time, l.interpolation_gap] {
                r.push(num(e.mean));
                r.push(num(e.se));
            }
            r
        })
        .collect();
    out.csv("certify.csv", &columns, &rows)?;
    let report = refinement_study(levels);
    let summary = CertifySummary { any_upward_trend: report.any_upward_trend(), report, failures: failed.clone() };
    out.json("certify.json", &summary)?;
    Ok(partial_or_complete(&failed))
}

pub fn uniqueness(cfg: &RunConfig, out: &mut Collector) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let control = control_for(cfg, &model)?;
    let rng = RngPolicy::new(cfg.rng.seed);
    let mesh = &model.mesh;
    let bump = Field::interpolate(mesh, |x| cfg.uniqueness.perturbation * (2.0 * PI * mesh.unit_coordinate(x)).sin());
    let u0_b = model.initial.add(&bump);
    let report = l1_contraction_probe(
        &model,
        &cfg.scheme,
        &model.initial,
        &u0_b,
        &control,
        &rng,
        cfg.uniqueness.paths,
        &cfg.uniqueness.thetas,
    )?;
    let columns = strings(&["time", "mean_l1"]);
    let rows: Vec<Vec<String>> =
        report.times.iter().zip(&report.mean_l1).map(|(t, l)| vec![num(*t), num(*l)]).collect();
    out.csv("uniqueness.csv", &columns, &rows)?;
    out.json("uniqueness.json", &report)?;
    Ok(if report.failed_paths > 0 {
        Outcome::Partial(format!("{} of {} path pairs failed", report.failed_paths, cfg.uniqueness.paths))
    } else {
        Outcome::Complete
    })
}

pub fn control_opt(cfg: &RunConfig, out: &mut Collector) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let family = cfg.family(&model.mesh)?;
    let spec = cfg.cost(&model);
    let rng = RngPolicy::new(cfg.rng.seed);
    let result: OptimizationResult<f64> =
        optimize_control(&model, &cfg.scheme, &family, &spec, &rng, &cfg.control.optimizer)?;
    let mut columns = vec!["iteration".to_string()];
    columns.extend((0..family.dim()).map(|i| format!("theta_{i}")));
    columns.extend(strings(&["cost_mean", "cost_se", "accepted"]));
    let rows: Vec<Vec<String>> = result
        .trace
        .iter()
        .map(|s| {
            let mut r = vec![s.iteration.to_string()];
            r.extend(s.theta.iter().map(|v| num(*v)));
            r.extend([num(s.mean), num(s.se), s.accepted.to_string()]);
            r
        })
        .collect();
    out.csv("control_trace.csv", &columns, &rows)?;
    out.json("control.json", &result)?;
    Ok(if result.cost.is_partial() {
        Outcome::Partial(format!("{} path(s) failed in the final cost estimate", result.cost.failures))
    } else {
        Outcome::Complete
    })
}

#[derive(Serialize)]
struct InvariantSummary {
    snapshots: usize,
    burn_in: usize,
    stride: usize,
    kappa: f64,
    window_start_norm_sq: f64,
    delta: f64,
    delta_suggestion: DeltaSuggestion<f64>,
    functionals: Vec<FunctionalAverage<f64>>,
    failure: Option<String>,
}

pub fn invariant(cfg: &RunConfig, out: &mut Collector) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let e = &cfg.ergodic;
    let mut scheme = cfg.scheme.clone();
    scheme.steps = e.steps;
    scheme.horizon = e.horizon;
    scheme.validate(&model)?;
    let rng = RngPolicy::new(cfg.rng.seed);
    let measure = time_average_measure(&model, &scheme, &rng, 0, e.burn_in, e.stride)?;
    if measure.len() < 2 {
        return Err(measure.failure.clone().map_or_else(
            || CliError::Config("averaging window holds fewer than two snapshots".into()),
            CliError::Solver,
        ));
    }
    let suggestion = suggested_delta(&model)?;
    let delta = e.delta.unwrap_or(0.5 * suggestion.delta);
    let rows = boundedness_profile(&measure, &e.radii, &model, Some(delta))?;
    let functionals = e
        .functionals
        .iter()
        .map(|phi| test_function_average(&measure, phi, &model.mesh))
        .collect::<spdelab::Result<Vec<_>>>()?;

    let columns = strings(&["radius", "fraction", "se", "bound"]);
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![num(r.radius), num(r.fraction), num(r.se), r.bound.map_or_else(String::new, num)])
        .collect();
    out.csv("boundedness.csv", &columns, &table)?;
    if e.dump_snapshots {
        out.states("snapshots.bin", &measure.snapshots)?;
    }
    let summary = InvariantSummary {
        snapshots: measure.len(),
        burn_in: measure.burn_in,
        stride: measure.stride,
        kappa: measure.kappa,
        window_start_norm_sq: measure.window_start_norm_sq,
        delta,
        delta_suggestion: suggestion,
        functionals,
        failure: measure.failure.clone(),
    };
    out.json("invariant.json", &summary)?;
    Ok(match &measure.failure {
        Some(f) => Outcome::Partial(format!("trajectory stopped early: {f}")),
        None => Outcome::Complete,
    })
}

/// Returns the report text as well, for printing on standard output.
pub fn check_model(cfg: &RunConfig, out: &mut Collector) -> Result<(Outcome, String), CliError> {
    let model = cfg.model()?;
    let report: AssumptionReport<f64> = validate_assumptions(&model, cfg.check.sample_budget)?;
    out.json("check_model.json", &report)?;
    let text = out.json_text(&report)?;
    let outcome = if report.all_passed() {
        Outcome::Complete
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.id.as_str()).collect();
        Outcome::Rejected(format!("assumptions failed: {}", failed.join(", ")))
    };
    Ok((outcome, text))
}
