mod common;

use common::{parabola, unit_mesh};
use proptest::prelude::*;
use spdelab::grid::{assemble_flux_parts, assemble_weak_flux, flux_pairing, grad_lp_norm, lq_norm, FluxParts};
use spdelab::model::{derived_constants, ConvectionModel, FluxModel, JumpModel, WienerDiffusionModel};
use spdelab::{Field, MassKind, Model};

fn field(values: Vec<f64>) -> Field {
    Field::from(values)
}

fn flux_model(m: usize, flux: FluxModel<f64>, convection: ConvectionModel<f64>) -> Model {
    Model::new(
        unit_mesh(m),
        flux,
        convection,
        WienerDiffusionModel::off(),
        JumpModel::off(),
        Field::zeros(m),
    )
    .unwrap()
}

#[test]
fn mesh_widths() {
    assert_eq!(unit_mesh(3).h(), 0.25);
    assert_eq!(unit_mesh(63).h(), 1.0 / 64.0);
}

#[test]
fn parabola_norm_converges_at_second_order() {
    let exact = (1.0f64 / 30.0).sqrt();
    let errs: Vec<f64> = [15, 31, 63, 127]
        .iter()
        .map(|&m| (lq_norm(&unit_mesh(m), &parabola(m), 2.0).unwrap() - exact).abs())
        .collect();
    assert!(errs[3] < 1e-5, "{errs:?}");
    for w in errs.windows(2) {
        let rate = (w[0] / w[1]).log2();
        assert!(rate > 1.9 && rate < 2.1, "{errs:?}");
    }
}

#[test]
fn zero_field_norms() {
    let mesh = unit_mesh(7);
    let z = Field::zeros(7);
    assert_eq!(lq_norm(&mesh, &z, 2.0).unwrap(), 0.0);
    assert_eq!(lq_norm(&mesh, &z, 3.5).unwrap(), 0.0);
    assert_eq!(grad_lp_norm(&mesh, &z, 3.0).unwrap(), 0.0);
}

#[test]
fn single_node_mesh_rejected() {
    assert!(matches!(spdelab::build_mesh(1, (0.0, 1.0)), Err(spdelab::Error::Config(_))));
}

#[test]
fn fractional_exponent_of_tent() {
    // tent of height 1 over two elements of width h: ∫|f|^q = 2h/(q+1)
    let mesh = unit_mesh(3);
    let q = 2.5;
    let v = lq_norm(&mesh, &field(vec![0.0, 1.0, 0.0]), q).unwrap();
    assert!((v.powf(q) - 0.5 / (q + 1.0)).abs() < 1e-14);
}

#[test]
fn linear_flux_is_stiffness_product() {
    let m = 31;
    let model = flux_model(m, FluxModel::linear(), ConvectionModel::none());
    let f = common::random_h1(m, 3);
    let a = assemble_weak_flux(&model, &f).unwrap();
    let k = model.mesh.stiffness_matrix().matvec(&f);
    for (x, y) in a.iter().zip(&k) {
        assert!((x - y).abs() < 1e-12 * (1.0 + y.abs()), "{x} vs {y}");
    }
}

#[test]
fn convection_pairing_vanishes_at_first_order() {
    let conv = ConvectionModel { velocity: 1.0, ..ConvectionModel::default() };
    let pairing = |m: usize| {
        let model = flux_model(m, FluxModel::default(), conv.clone());
        let f = Field::interpolate(&model.mesh, |x| (std::f64::consts::PI * x).sin() + 0.3 * x * (1.0 - x));
        let v = assemble_flux_parts(&model, &f, FluxParts::ConvectionOnly).unwrap();
        v.iter().zip(f.iter()).map(|(a, b)| a * b).sum::<f64>().abs()
    };
    let p: Vec<f64> = [15, 31, 63, 127].iter().map(|&m| pairing(m)).collect();
    assert!(p[3] < 1e-2, "{p:?}");
    for w in p.windows(2) {
        assert!(w[1] <= w[0] * 0.6 || w[1] < 1e-13, "{p:?}");
    }
}

fn nodal(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, m)
}

proptest! {
    #[test]
    fn l2_norm_is_mass_quadratic_form(v in nodal(17)) {
        let mesh = unit_mesh(17);
        let mv = mesh.mass_matrix(MassKind::Consistent).matvec(&v);
        let direct = v.iter().zip(&mv).map(|(a, b)| a * b).sum::<f64>().sqrt();
        let n = lq_norm(&mesh, &v, 2.0).unwrap();
        prop_assert!((n - direct).abs() <= 1e-12 * (1.0 + direct));
    }

    #[test]
    fn lq_norm_homogeneous_and_subadditive(a in nodal(9), b in nodal(9), c in -4.0f64..4.0, q in 1.0f64..6.0) {
        let mesh = unit_mesh(9);
        let na = lq_norm(&mesh, &a, q).unwrap();
        let nb = lq_norm(&mesh, &b, q).unwrap();
        let scaled: Vec<f64> = a.iter().map(|x| c * x).collect();
        let ns = lq_norm(&mesh, &scaled, q).unwrap();
        prop_assert!((ns - c.abs() * na).abs() <= 1e-10 * (1.0 + ns));
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        prop_assert!(lq_norm(&mesh, &sum, q).unwrap() <= (na + nb) * (1.0 + 1e-12) + 1e-14);
    }

    #[test]
    fn gradient_norm_scaling(a in nodal(11), c in -3.0f64..3.0, p in 1.5f64..6.0) {
        let mesh = unit_mesh(11);
        let g = grad_lp_norm(&mesh, &a, p).unwrap();
        let scaled: Vec<f64> = a.iter().map(|x| c * x).collect();
        let gs = grad_lp_norm(&mesh, &scaled, p).unwrap();
        prop_assert!((gs - c.abs().powf(p) * g).abs() <= 1e-10 * (1.0 + gs));
    }

    #[test]
    fn weak_flux_is_monotone(a in nodal(13), b in nodal(13), p in 2.0f64..6.0, cx in 0.0f64..2.0, v in -2.0f64..2.0) {
        let flux = FluxModel { p, coeff_space: cx, ..FluxModel::default() };
        let conv = ConvectionModel { velocity: v, ..ConvectionModel::default() };
        let model = flux_model(13, flux, conv);
        let fa = assemble_weak_flux(&model, &a).unwrap();
        let fb = assemble_weak_flux(&model, &b).unwrap();
        let pairing: f64 = (0..13).map(|i| (fa[i] - fb[i]) * (a[i] - b[i])).sum();
        let scale: f64 = (0..13).map(|i| (fa[i] - fb[i]).abs() * (a[i] - b[i]).abs()).sum();
        prop_assert!(pairing >= -1e-10 * (1.0 + scale), "pairing {pairing}");
    }

    #[test]
    fn weak_flux_is_coercive(a in nodal(13), p in 2.0f64..6.0, cx in 0.0f64..2.0) {
        let flux = FluxModel { p, coeff_space: cx, ..FluxModel::default() };
        let model = flux_model(13, flux, ConvectionModel::none());
        let k = derived_constants(&model);
        let g = grad_lp_norm(&model.mesh, &a, p).unwrap();
        let lhs = flux_pairing(&model, &a);
        prop_assert!(lhs >= k.c1 * g * (1.0 - 1e-12) - k.k1 * model.mesh.length(), "{lhs} < {}", k.c1 * g);
    }
}
