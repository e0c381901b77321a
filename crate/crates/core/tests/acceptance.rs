//! End-to-end acceptance suite. Runs as a plain binary so every criterion reports one line.

mod common;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spdelab::control::{cost_evaluate, optimize_control, ControlFamily, CostSpec, OptimizerConfig, TargetProfile};
use spdelab::diagnostics::{
    apriori_certificate, dissipativity_margin, energy_ledger, l1_contraction_probe, refinement_study,
    suggested_delta, upsilon_eval, UpsilonSpec, DEFAULT_THETAS,
};
use spdelab::ergodic::{
    boundedness_profile, time_average_measure, weak_feller_probe, OscillatingSequence, TestFunctional,
};
use spdelab::model::{FluxModel, JumpDensity, JumpModel, LevyMeasureSpec};
use spdelab::noise::{compensated_jump_increment, sample_jump_events, JumpSampler};
use spdelab::scheme::{run_ensemble, run_trajectory, smooth_initial, SmoothedInitial, SolveStats};
use spdelab::{project_control, Control, Field, RngPolicy, Scheme, Trajectory};

use common::*;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const TOL: f64 = 1e-10;

fn residual_ok(s: &SolveStats<f64>, factor: f64) -> bool {
    s.residual <= factor * TOL * (1.0 + s.rhs_norm)
}

fn c01_step_residual() -> Outcome {
    let model = default_model(31, sine(31));
    let cfg = Scheme { steps: 256, horizon: 1.0, tol_nl: TOL, ..Scheme::default() };
    let start = Instant::now();
    let runs = run_ensemble(&model, &cfg, &Control::zero(1.0, 256, 31), &RngPolicy::new(2024), 0, 10);
    let elapsed = start.elapsed();
    let mut steps = 0;
    let mut worst: f64 = 0.0;
    for r in runs {
        let t = r.map_err(|e| format!("solver failure: {e}"))?;
        for s in &t.stats {
            steps += 1;
            worst = worst.max(s.residual / (TOL * (1.0 + s.rhs_norm)));
            if !residual_ok(s, 1.0) {
                return Err(format!("step residual {:e} exceeds bound", s.residual));
            }
        }
    }
    check(
        steps == 2560 && elapsed < Duration::from_secs(60),
        format!("{steps} steps, worst residual/bound {worst:.2e}, {:.2}s", elapsed.as_secs_f64()),
    )
}

fn c02_energy_identity() -> Outcome {
    let mut total = 0;
    let mut worst: f64 = 0.0;
    for p in [3.0, 4.0] {
        for steps in [64, 256] {
            let mut model = default_model(31, sine(31));
            model.flux = FluxModel { p, ..FluxModel::default() };
            let cfg = Scheme { steps, horizon: 1.0, tol_nl: TOL, ..Scheme::default() };
            for r in run_ensemble(&model, &cfg, &Control::zero(1.0, steps, 31), &RngPolicy::new(77), 0, 4) {
                let t = r.map_err(|e| e.to_string())?;
                let ledger = energy_ledger(&t, &model).map_err(|e| e.to_string())?;
                for e in &ledger.entries {
                    total += 1;
                    let rel = e.residual.abs() / (10.0 * TOL * (1.0 + e.rhs_norm));
                    worst = worst.max(rel);
                    if rel > 1.0 {
                        return Err(format!("p = {p}, N = {steps}, step {}: |r| = {:e}", e.step, e.residual));
                    }
                }
            }
        }
    }
    Ok(format!("{total} ledger entries, worst |r|/bound {worst:.2e}"))
}

// Thomas algorithm on a symmetric constant-coefficient tridiagonal system
fn thomas(main: f64, off: f64, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = off / main;
    d[0] = rhs[0] / main;
    for i in 1..n {
        let m = main - off * c[i - 1];
        c[i] = off / m;
        d[i] = (rhs[i] - off * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

fn c03_linear_oracle() -> Outcome {
    let m = 63;
    let u0 = Field::interpolate(&unit_mesh(m), |x| (PI * x).sin() + 0.4 * (5.0 * PI * x).sin());
    let model = oracle_model(m, u0.clone());
    let cfg = Scheme { steps: 256, horizon: 1.0, tol_nl: TOL, oracle_mode: true, ..Scheme::default() };
    let traj = run_trajectory(&model, &cfg, &Control::zero(1.0, 256, m), &RngPolicy::new(1), 0)
        .map_err(|e| e.to_string())?;
    let h = 1.0 / (m as f64 + 1.0);
    let kappa = cfg.kappa();
    let (main, off) = (4.0 * h / 6.0 + 2.0 * kappa / h, h / 6.0 - kappa / h);
    let mass = |v: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|i| {
                let l = if i > 0 { v[i - 1] } else { 0.0 };
                let r = if i + 1 < m { v[i + 1] } else { 0.0 };
                h / 6.0 * (l + 4.0 * v[i] + r)
            })
            .collect()
    };
    let mut v = thomas(main, off, &mass(&u0));
    let mut worst = traj.states[0].iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    for k in 0..256 {
        v = thomas(main, off, &mass(&v));
        let err = traj.states[k + 1].iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
    }
    check(worst <= 1e-9, format!("max nodal error {worst:.2e} over 256 steps, M = 63"))
}

fn c04_smoothing() -> Outcome {
    let m = 63;
    let model = default_model(m, sine(m));
    let data = [("sin", sine(m)), ("x(1-x)", parabola(m)), ("random H1", random_h1(m, 99))];
    let mut worst = f64::NEG_INFINITY;
    for (name, u0) in &data {
        for kappa in [1e-1, 1e-2, 1e-3] {
            let SmoothedInitial { slack, .. } = smooth_initial(u0, kappa, &model, TOL).map_err(|e| e.to_string())?;
            worst = worst.max(slack);
            if slack > 1e-8 {
                return Err(format!("{name}, κ = {kappa}: slack {slack:e}"));
            }
        }
    }
    Ok(format!("9 cases, largest slack {worst:.2e}"))
}

fn random_field(rng: &mut ChaCha8Rng, m: usize) -> Field {
    Field::from((0..m).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>())
}

fn c05_projection() -> Outcome {
    let m = 15;
    let mesh = unit_mesh(m);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // idempotence
    let pc = Control::Piecewise { horizon: 1.0, values: (0..8).map(|_| random_field(&mut rng, m)).collect() };
    let once = project_control(&pc, 0.125).map_err(|e| e.to_string())?;
    let twice = project_control(&once, 0.125).map_err(|e| e.to_string())?;
    let bits = |c: &Control| -> Vec<u64> { c.pieces().unwrap().iter().flat_map(|f| f.iter().map(|v| v.to_bits())).collect() };
    if bits(&once) != bits(&pc) || bits(&twice) != bits(&once) {
        return Err("projection is not idempotent".into());
    }
    // non-expansiveness
    let mut worst_ratio: f64 = 0.0;
    for i in 0..100 {
        let kappa = [0.5, 0.25, 0.125, 0.0625][i % 4];
        let sig = if i % 2 == 0 {
            let n = [3, 7, 16, 64][i / 2 % 4];
            Control::Piecewise { horizon: 1.0, values: (0..n).map(|_| random_field(&mut rng, m)).collect() }
        } else {
            let (a, b) = (random_field(&mut rng, m), random_field(&mut rng, m));
            let (fa, fb) = (rng.random_range(0.5..6.0), rng.random_range(0.5..6.0));
            Control::dense(1.0, move |t: f64| {
                let mut f = a.scaled((fa * t).sin());
                f.axpy((fb * t * t).cos(), &b);
                f
            })
        };
        let p = project_control(&sig, kappa).map_err(|e| e.to_string())?;
        let ratio = p.l2_norm_sq(&mesh) / sig.l2_norm_sq(&mesh);
        worst_ratio = worst_ratio.max(ratio);
        if ratio > 1.0 + 1e-12 {
            return Err(format!("signal {i}: ‖ΠU‖²/‖U‖² = {ratio}"));
        }
    }
    // convergence order for f(t) = t·w
    let w = random_field(&mut rng, m);
    let mut errs = Vec::new();
    let kappas = [0.25, 0.125, 0.0625, 0.03125, 0.015625];
    for &kappa in &kappas {
        let ww = w.clone();
        let f = Control::dense(1.0, move |t: f64| ww.scaled(t));
        let p = project_control(&f, kappa).map_err(|e| e.to_string())?;
        let wd = w.clone();
        let diff = Control::dense(1.0, move |t: f64| p.evaluate(t).sub(&wd.scaled(t)));
        errs.push(diff.l2_norm_sq(&mesh).sqrt());
    }
    let orders: Vec<f64> = errs.windows(2).map(|e| (e[0] / e[1]).log2()).collect();
    let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);
    check(
        min_order >= 0.9,
        format!("idempotent, max ‖ΠU‖²/‖U‖² = {worst_ratio:.4}, orders {orders:.3?}"),
    )
}

fn apriori_level(steps: usize, seed: u64) -> Result<spdelab::diagnostics::AprioriEstimates<f64>, String> {
    let model = apriori_model();
    let cfg = Scheme { steps, horizon: 1.0, tol_nl: TOL, ..Scheme::default() };
    let ens: Vec<Trajectory> = run_ensemble(&model, &cfg, &Control::zero(1.0, steps, 31), &RngPolicy::new(seed), 0, 64)
        .into_iter()
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    apriori_certificate(&ens, &model).map_err(|e| e.to_string())
}

// Small, noise-dominated regime: zero initial datum and dense weak additive jump forcing.
fn apriori_model() -> spdelab::Model {
    let m = 31;
    let jumps = JumpModel {
        g_const: 0.0,
        g_amp: 0.002,
        lambda_star: 0.0,
        measure: LevyMeasureSpec::CompoundPoisson { rate: 1000.0, density: JumpDensity::Normal { mean: 0.0, std: 0.5 } },
    };
    default_model(m, Field::zeros(m)).with_jumps(jumps).unwrap()
}

fn c06_apriori() -> Outcome {
    let levels: Vec<_> = [64, 128, 256].iter().map(|&n| apriori_level(n, 606)).collect::<Result<_, _>>()?;
    let rep = refinement_study(levels);
    let ratios_ok = rep.gap_ratios.iter().all(|r| (r - 2.0).abs() <= 0.3);
    let detail = format!(
        "trend t-stats sup {:.2}, incr {:.2}, grad {:.2}; gap ratios {:.3?}",
        rep.sup_mean_sq_trend.t_stat, rep.increment_sum_trend.t_stat, rep.gradient_sum_trend.t_stat, rep.gap_ratios
    );
    check(!rep.any_upward_trend() && ratios_ok, detail)
}

fn c07_uniqueness() -> Outcome {
    let model = default_model(31, sine(31));
    let cfg = Scheme { steps: 128, horizon: 1.0, tol_nl: TOL, ..Scheme::default() };
    let ctrl = Control::dense(1.0, |t: f64| Field::interpolate(&unit_mesh(31), |x| t * (PI * x).sin()));
    let a = run_trajectory(&model, &cfg, &ctrl, &RngPolicy::new(31), 3).map_err(|e| e.to_string())?;
    let b = run_trajectory(&model, &cfg, &ctrl, &RngPolicy::new(31), 3).map_err(|e| e.to_string())?;
    let bits = |t: &Trajectory| -> Vec<u64> { t.states.iter().flat_map(|f| f.iter().map(|v| v.to_bits())).collect() };
    if bits(&a) != bits(&b) {
        return Err("repeated run differs".into());
    }
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let serial = single.install(|| run_ensemble(&model, &cfg, &ctrl, &RngPolicy::new(31), 0, 6));
    let parallel = run_ensemble(&model, &cfg, &ctrl, &RngPolicy::new(31), 0, 6);
    for (s, p) in serial.iter().zip(&parallel) {
        if bits(s.as_ref().unwrap()) != bits(p.as_ref().unwrap()) {
            return Err("ensemble depends on thread count".into());
        }
    }
    let u0 = sine(31);
    let probe = l1_contraction_probe(&model, &cfg, &u0, &u0, &ctrl, &RngPolicy::new(31), 4, &DEFAULT_THETAS)
        .map_err(|e| e.to_string())?;
    let zero = probe
        .curves
        .iter()
        .all(|c| c.l1.iter().all(|&v| v == 0.0) && c.smoothed.iter().all(|s| s.iter().all(|&v| v == 0.0)));
    check(zero && probe.curves.len() == 4, "bit-identical reruns and thread counts; zero L¹ curves".into())
}

fn c08_martingale() -> Outcome {
    let m = 31;
    let base = default_model(m, sine(m));
    let tempered = LevyMeasureSpec::TemperedTruncated { alpha: 1.2, beta: 1.0, scale: 1.0, cutoff: 0.05 };
    let normal = LevyMeasureSpec::CompoundPoisson { rate: 2.0, density: JumpDensity::Normal { mean: 0.0, std: 0.5 } };
    let mut details = Vec::new();
    for (name, spec) in [("compound Poisson", normal), ("tempered", tempered)] {
        let mut jumps = base.jumps.clone();
        jumps.measure = spec;
        let model = base.with_jumps(jumps).map_err(|e| e.to_string())?;
        let sampler = JumpSampler::new(spec).map_err(|e| e.to_string())?;
        let policy = RngPolicy::new(8);
        let kappa = 0.01;
        let u = sine(m);
        let probes: Vec<usize> = (0..10).map(|i| 1 + 3 * i).collect();
        let n = 10_000;
        let mut sum = [0.0; 10];
        let mut sq = [0.0; 10];
        for k in 0..n {
            let ev = sample_jump_events::<f64>(&policy, 0, k, &sampler, kappa).map_err(|e| e.to_string())?;
            let dj = compensated_jump_increment(&model, &u, &ev, kappa).map_err(|e| e.to_string())?;
            for (j, &i) in probes.iter().enumerate() {
                sum[j] += dj[i];
                sq[j] += dj[i] * dj[i];
            }
        }
        let nf = n as f64;
        let mut worst: f64 = 0.0;
        for j in 0..10 {
            let mean = sum[j] / nf;
            let se = ((sq[j] / nf - mean * mean) * nf / (nf - 1.0) / nf).sqrt();
            let z = mean.abs() / se;
            worst = worst.max(z);
            if z > 3.0 {
                return Err(format!("{name}: node {} mean {mean:e} is {z:.2} se from 0", probes[j]));
            }
        }
        details.push(format!("{name} max |mean|/se {worst:.2}"));
    }
    Ok(details.join(", "))
}

fn c09_upsilon() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let m1 = UpsilonSpec::<f64>::M1;
    let m2 = UpsilonSpec::<f64>::M2;
    let mut violations = 0;
    for _ in 0..100_000 {
        let theta = 10f64.powf(rng.random_range(-8.0..3.0));
        let r = theta * rng.random_range(-6.0..6.0);
        let spec = UpsilonSpec::new(theta).unwrap();
        let (v, _, d2) = upsilon_eval(&spec, r);
        let curvature_ok = if r.abs() <= theta { d2.abs() <= m2 / theta } else { d2 == 0.0 };
        if !(v <= r.abs() && v >= r.abs() - m1 * theta && curvature_ok) {
            violations += 1;
        }
    }
    check(violations == 0, format!("{violations} violations in 100000 samples"))
}

fn c10_cost() -> Outcome {
    let m = 15;
    let mesh = unit_mesh(m);
    let steps = 32;
    let target: Vec<Field> = (0..=steps).map(|k| sine(m).scaled(1.0 - k as f64 / steps as f64)).collect();
    let offset = Field::interpolate(&mesh, |x| 0.3 + x * x);
    let states: Vec<Field> = target.iter().map(|f| f.add(&offset)).collect();
    let traj = Trajectory {
        path: 0,
        seed: 0,
        kappa: 2.0 / steps as f64,
        horizon: 2.0,
        mass: Default::default(),
        smoothing: SmoothedInitial { field: states[0].clone(), energy: 0.0, bound: 0.0, slack: 0.0 },
        stats: vec![SolveStats { iterations: 0, picard_steps: 0, residual: 0.0, rhs_norm: 0.0 }; steps],
        controls: vec![Field::zeros(m); steps],
        noise: None,
        states,
    };
    let spec = CostSpec::tracking(TargetProfile::Sampled(target));
    let zero = Control::zero(2.0, steps, m);
    let c = cost_evaluate(&traj, &zero, &spec, &mesh).map_err(|e| e.to_string())?;
    let expected = 2.0 * mesh.l2_norm_sq(&offset);
    let offset_err = (c.total - expected).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let u = Control::Piecewise { horizon: 2.0, values: (0..steps).map(|_| random_field(&mut rng, m)).collect() };
    let u2 = Control::Piecewise { horizon: 2.0, values: u.pieces().unwrap().iter().map(|f| f.scaled(2.0)).collect() };
    let c1 = cost_evaluate(&traj, &u, &spec, &mesh).map_err(|e| e.to_string())?;
    let c2 = cost_evaluate(&traj, &u2, &spec, &mesh).map_err(|e| e.to_string())?;
    let homog_err = (c2.control - 4.0 * c1.control).abs();
    if offset_err > 1e-12 || homog_err > 1e-12 {
        return Err(format!("offset error {offset_err:e}, homogeneity error {homog_err:e}"));
    }
    let model = default_model(m, sine(m));
    let cfg = Scheme { steps: 16, horizon: 1.0, tol_nl: TOL, ..Scheme::default() };
    let family = ControlFamily::tensor(&mesh, 1.0, 16, 2, 1).map_err(|e| e.to_string())?;
    let spec = CostSpec::tracking(TargetProfile::Constant(sine(m).scaled(0.5)));
    let opt = OptimizerConfig { budget: 10, paths: 4, initial_step: 0.5, ..OptimizerConfig::default() };
    for seed in 0..20 {
        let res = optimize_control(&model, &cfg, &family, &spec, &RngPolicy::new(seed), &opt).map_err(|e| e.to_string())?;
        if res.incumbent_costs.windows(2).any(|w| w[1] > w[0]) {
            return Err(format!("run {seed}: incumbent costs increase {:?}", res.incumbent_costs));
        }
    }
    Ok(format!("offset error {offset_err:.1e}, homogeneity error {homog_err:.1e}, 20 optimizer runs monotone"))
}

fn c11_boundedness() -> Outcome {
    let m = 31;
    let model = default_model(m, sine(m));
    let steps = 100_000;
    let cfg = Scheme { steps, horizon: 1000.0, tol_nl: TOL, ..Scheme::default() };
    let start = Instant::now();
    let meas = time_average_measure(&model, &cfg, &RngPolicy::new(11), 0, 0, 10).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    if meas.is_partial() {
        return Err(format!("trajectory stopped early: {:?}", meas.failure));
    }
    let delta = 0.5 * suggested_delta(&model).map_err(|e| e.to_string())?.delta;
    let min_margin = meas
        .snapshots
        .iter()
        .map(|u| dissipativity_margin(&model, u, delta).unwrap())
        .fold(f64::INFINITY, f64::min);
    if min_margin < 0.0 {
        return Err(format!("dissipativity margin {min_margin:e} is negative along the trajectory"));
    }
    let rows = boundedness_profile(&meas, &[1.0, 2.0, 4.0, 8.0], &model, Some(delta)).map_err(|e| e.to_string())?;
    let ok = rows.iter().all(|r| r.fraction <= r.bound.unwrap() + 3.0 * r.se);
    let table: Vec<String> =
        rows.iter().map(|r| format!("R={} frac {:.3} ≤ {:.3e}", r.radius, r.fraction, r.bound.unwrap())).collect();
    check(
        ok && elapsed < Duration::from_secs(600),
        format!("{}; min margin {min_margin:.3}, {:.1}s", table.join(", "), elapsed.as_secs_f64()),
    )
}

fn c12_weak_feller() -> Outcome {
    let m = 127;
    let model = default_model(m, sine(m));
    let cfg = Scheme { steps: 32, horizon: 0.1, tol_nl: TOL, ..Scheme::default() };
    let seq = OscillatingSequence::doubling(sine(m), 0.5, 7);
    let phi = TestFunctional::Exponential { c: 1.0 };
    let rep = weak_feller_probe(&model, &cfg, &RngPolicy::new(12), &phi, &seq, 256).map_err(|e| e.to_string())?;
    check(
        rep.significant_decrease && rep.failed_paths == 0,
        format!(
            "differences [{}], Spearman ρ = {:.3}, p = {:.4}",
            rep.differences.iter().map(|d| format!("{d:.2e}")).collect::<Vec<_>>().join(", "),
            rep.trend.rho,
            rep.trend.p_decreasing
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [Criterion; 12] = [
        ("per-step variational residual", c01_step_residual),
        ("energy identity", c02_energy_identity),
        ("linear oracle", c03_linear_oracle),
        ("initial smoothing inequality", c04_smoothing),
        ("control projection", c05_projection),
        ("a-priori stability under refinement", c06_apriori),
        ("discrete pathwise uniqueness", c07_uniqueness),
        ("jump compensation martingale", c08_martingale),
        ("smoothed sign bounds", c09_upsilon),
        ("cost functional", c10_cost),
        ("boundedness in probability", c11_boundedness),
        ("weak-Feller probe", c12_weak_feller),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {:>2} PASS {name}: {d} [{secs:.1}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {d} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
