mod common;

use common::{default_model, sine, unit_mesh};
use proptest::prelude::*;
use spdelab::model::{
    chg_constant, compensator_field, derived_constants, jump_weight, DiffusionVariant, JumpDensity, JumpModel,
    LevyMeasureSpec, WienerDiffusionModel,
};
use spdelab::validate_assumptions;

/// Composite Simpson on `[a, b]` with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    s * h / 3.0
}

fn normal_pdf(z: f64, mean: f64, std: f64) -> f64 {
    let t = (z - mean) / std;
    (-0.5 * t * t).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}

/// `∫ γ^k dμ` for `μ = ρ·N(mean, std²)`, split at the kinks of `γ`.
fn normal_gamma_moment(rate: f64, mean: f64, std: f64, k: i32) -> f64 {
    let f = |z: f64| rate * jump_weight(z).powi(k) * normal_pdf(z, mean, std);
    let (lo, hi) = (mean - 20.0 * std, mean + 20.0 * std);
    let mut cuts = vec![lo, hi];
    cuts.extend([-1.0, 0.0, 1.0].into_iter().filter(|c| *c > lo && *c < hi));
    cuts.sort_by(f64::total_cmp);
    cuts.windows(2).map(|w| simpson(f, w[0], w[1], 20_000)).sum()
}

#[test]
fn default_model_passes_with_zero_c3() {
    let model = default_model(31, sine(31));
    let report = validate_assumptions(&model, 2000).unwrap();
    assert!(report.all_passed(), "{:?}", report.checks);
    assert_eq!(report.constants.c3, 0.0);
}

#[test]
fn lambda_star_above_one_fails() {
    let base = default_model(15, sine(15));
    let model = base.with_jumps(JumpModel { lambda_star: 1.2, ..JumpModel::default() }).unwrap();
    let report = validate_assumptions(&model, 200).unwrap();
    assert!(!report.all_passed());
    assert!(report.checks.iter().any(|c| !c.passed && c.id.contains("A6")), "{:?}", report.checks);
}

#[test]
fn silent_jumps_have_zero_compensator() {
    let base = default_model(15, sine(15));
    let jumps = JumpModel { g_const: 0.0, g_amp: 0.0, lambda_star: 0.0, ..JumpModel::default() };
    let model = base.with_jumps(jumps).unwrap();
    assert!(compensator_field(&model, &model.initial).unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn compensator_matches_direct_quadrature() {
    let (rate, mean, std) = (3.0, 0.2, 0.7);
    let jumps = JumpModel {
        g_const: 0.15,
        g_amp: 0.4,
        lambda_star: 0.6,
        measure: LevyMeasureSpec::CompoundPoisson { rate, density: JumpDensity::Normal { mean, std } },
    };
    let model = default_model(15, sine(15)).with_jumps(jumps.clone()).unwrap();
    let gm = normal_gamma_moment(rate, mean, std, 1);
    let comp = compensator_field(&model, &model.initial).unwrap();
    for (i, c) in comp.iter().enumerate() {
        let y = model.mesh.node(i);
        let expected = (jumps.g(y) + jumps.lambda_star * model.initial[i]) * gm;
        assert!((c - expected).abs() < 1e-10, "node {i}: {c} vs {expected}");
    }
    let cg = normal_gamma_moment(rate, mean, std, 2);
    assert!((model.jump_quadrature().c_gamma - cg).abs() < 1e-10);
}

#[test]
fn compensator_is_linear_in_g() {
    let base = default_model(15, sine(15));
    let one = JumpModel { lambda_star: 0.0, ..JumpModel::default() };
    let two = JumpModel { g_const: 2.0 * one.g_const, g_amp: 2.0 * one.g_amp, ..one.clone() };
    let a = compensator_field(&base.with_jumps(one).unwrap(), &base.initial).unwrap();
    let b = compensator_field(&base.with_jumps(two).unwrap(), &base.initial).unwrap();
    for (x, y) in a.iter().zip(b.iter()) {
        assert!((2.0 * x - y).abs() <= 1e-15 * y.abs());
    }
}

#[test]
fn chg_cases() {
    let mut model = default_model(15, sine(15)).with_jumps(JumpModel::off()).unwrap();
    model.diffusion = WienerDiffusionModel::off();
    assert_eq!(chg_constant(&model), 0.0);

    let model = default_model(15, sine(15));
    let d = &model.diffusion;
    let c5: f64 = (1..=d.modes).map(|n| d.sigma * d.sigma * (n as f64).powf(-2.0 - 2.0 * d.decay)).sum();
    let LevyMeasureSpec::CompoundPoisson { rate, density: JumpDensity::Normal { mean, std } } = model.jumps.measure
    else {
        unreachable!()
    };
    let cg = normal_gamma_moment(rate, mean, std, 2);
    let g = model.jumps.g_const + model.jumps.g_amp;
    let expected = 2.0 * (c5 + cg * g * g) * 2.0;
    assert!((chg_constant(&model) - expected).abs() < 1e-12 * expected, "{} vs {expected}", chg_constant(&model));
    assert!((derived_constants(&model).c_hg - expected).abs() < 1e-12 * expected);
}

#[test]
fn wiener_envelope_holds_on_samples() {
    for variant in [DiffusionVariant::Linear, DiffusionVariant::Bounded] {
        let d = WienerDiffusionModel { variant, ..WienerDiffusionModel::default() };
        let c5 = d.c5();
        for i in 0..10_000 {
            let xi = -50.0 + 100.0 * i as f64 / 9_999.0;
            let s: f64 = (1..=d.modes).map(|n| d.h_n(n, xi).powi(2)).sum();
            assert!(s <= c5 * (1.0 + xi * xi) * (1.0 + 1e-12));
        }
    }
}

proptest! {
    #[test]
    fn eta_envelope_and_lipschitz(y in 0.0f64..1.0, a in -20.0f64..20.0, b in -20.0f64..20.0, z in -10.0f64..10.0) {
        let j = JumpModel::<f64>::default();
        let g = jump_weight(z);
        prop_assert!(j.eta(y, a, z).abs() <= g * (j.g_sup() + j.lambda_star * a.abs()) * (1.0 + 1e-14));
        prop_assert!((j.eta(y, a, z) - j.eta(y, b, z)).abs() <= g * j.lambda_star * (a - b).abs() * (1.0 + 1e-12) + 1e-15);
    }
}

#[test]
fn model_rejects_wrong_initial_length() {
    let m = default_model(7, sine(7));
    assert!(m.with_initial(sine(9)).is_err());
    assert_eq!(unit_mesh(7).node_count(), 7);
}
