#![allow(dead_code)]

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use spdelab::grid::build_mesh;
use spdelab::model::{ConvectionModel, FluxModel, JumpModel, WienerDiffusionModel};
use spdelab::{Field, Model};

pub fn unit_mesh(m: usize) -> spdelab::Mesh {
    build_mesh(m, (0.0, 1.0)).unwrap()
}

pub fn sine(m: usize) -> Field {
    Field::interpolate(&unit_mesh(m), |x| (PI * x).sin())
}

pub fn parabola(m: usize) -> Field {
    Field::interpolate(&unit_mesh(m), |x| x * (1.0 - x))
}

/// `Σ_n ξ_n/n·sin(nπx)`, an H¹ sample with decaying random coefficients.
pub fn random_h1(m: usize, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<f64> = (1..=24).map(|n| Distribution::<f64>::sample(&StandardNormal, &mut rng) / (n as f64).powi(2)).collect();
    Field::interpolate(&unit_mesh(m), |x| {
        coeffs.iter().enumerate().map(|(i, c)| c * ((i + 1) as f64 * PI * x).sin()).sum()
    })
}

pub fn default_model(m: usize, initial: Field) -> Model {
    Model::new(
        unit_mesh(m),
        FluxModel::default(),
        ConvectionModel::default(),
        WienerDiffusionModel::default(),
        JumpModel::default(),
        initial,
    )
    .unwrap()
}

pub fn oracle_model(m: usize, initial: Field) -> Model {
    Model::new(
        unit_mesh(m),
        FluxModel::linear(),
        ConvectionModel::none(),
        WienerDiffusionModel::off(),
        JumpModel::off(),
        initial,
    )
    .unwrap()
}

pub fn noise_free(model: &Model) -> Model {
    let mut m = model.with_jumps(JumpModel::off()).unwrap();
    m.diffusion = WienerDiffusionModel::off();
    m
}
