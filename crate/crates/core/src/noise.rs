//! Reproducible sampling of Wiener mode increments and Poisson jump events.
//!
//! Every `(seed, path, step, channel)` tuple keys its own ChaCha stream, so a step's noise
//! does not depend on which thread produced it or in which order paths were run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::NodalField;
use crate::model::{compensator_field, JumpDensity, LevyMeasureSpec, ModelSpec};
use crate::scalar::Real;

/// Independent sub-streams of one `(path, step)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Wiener,
    Jumps,
    /// Random initial data and other per-path draws.
    Initial,
    Auxiliary(u32),
}

impl Channel {
    fn id(self) -> u64 {
        match self {
            Channel::Wiener => 1,
            Channel::Jumps => 2,
            Channel::Initial => 3,
            Channel::Auxiliary(k) => 0x100 + k as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngPolicy {
    pub seed: u64,
}

impl RngPolicy {
    pub fn new(seed: u64) -> Self {
        RngPolicy { seed }
    }

    /// Stream keyed by `(seed, path, step, channel)`.
    pub fn stream(&self, path: u64, step: u64, channel: Channel) -> ChaCha12Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&path.to_le_bytes());
        key[16..24].copy_from_slice(&step.to_le_bytes());
        key[24..].copy_from_slice(&channel.id().to_le_bytes());
        ChaCha12Rng::from_seed(key)
    }

    /// Policy for an unrelated batch, e.g. a second seed batch in a stability check.
    pub fn derive(&self, salt: u64) -> Self {
        let mut x = self.seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        // splitmix64 finalizer
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        RngPolicy { seed: x ^ (x >> 31) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent<T> {
    /// Time since the start of the step, in `(0, κ]`.
    pub offset: T,
    pub mark: T,
}

/// Noise driving one step `t_k → t_{k+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseIncrement<T> {
    /// `Δβ_n ~ N(0, κ)`, one per mode.
    pub wiener: Vec<T>,
    pub jumps: Vec<JumpEvent<T>>,
    /// Step length `κ`; scales the compensator.
    pub kappa: T,
}

impl<T: Real> NoiseIncrement<T> {
    pub fn silent(kappa: T) -> Self {
        NoiseIncrement { wiener: Vec::new(), jumps: Vec::new(), kappa }
    }
}

/// `n_modes` i.i.d. `N(0, κ)` draws from the `(path, step, Wiener)` stream.
pub fn sample_wiener_increments<T: Real>(
    rng: &RngPolicy,
    path: u64,
    step: u64,
    n_modes: usize,
    kappa: T,
) -> Result<Vec<T>> {
    if !(kappa > T::zero()) {
        return Err(Error::Config(format!("step length must be positive, got {kappa}")));
    }
    let mut s = rng.stream(path, step, Channel::Wiener);
    let sd = kappa.as_f64().sqrt();
    Ok((0..n_modes)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut s);
            T::lit(sd * z)
        })
        .collect())
}

/// Exact sampler for the (truncated) Lévy measure normalized to a probability law.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpSampler {
    spec: LevyMeasureSpec,
    total_mass: f64,
}

impl JumpSampler {
    pub fn new(spec: LevyMeasureSpec) -> Result<Self> {
        let total_mass = spec.quadrature::<f64>()?.total_mass;
        Self::with_mass(spec, total_mass)
    }

    pub(crate) fn with_mass(spec: LevyMeasureSpec, total_mass: f64) -> Result<Self> {
        if !total_mass.is_finite() || total_mass < 0.0 {
            return Err(Error::Config(format!("jump measure has non-finite mass {total_mass}")));
        }
        Ok(JumpSampler { spec, total_mass })
    }

    /// `Λ_m`, the event rate per unit time.
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn spec(&self) -> &LevyMeasureSpec {
        &self.spec
    }

    /// One mark from `μ / Λ_m`.
    pub fn sample_mark<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.spec {
            LevyMeasureSpec::CompoundPoisson { density, .. } => match density {
                JumpDensity::Normal { mean, std } => Normal::new(mean, std).expect("validated").sample(rng),
                JumpDensity::Uniform { low, high } => rng.random_range(low..high),
            },
            LevyMeasureSpec::TemperedTruncated { alpha, beta, cutoff, .. } => loop {
                // Pareto proposal ∝ z^{-1-α} on z ≥ ε, accept with e^{-β(z-ε)}
                let u: f64 = 1.0 - rng.random::<f64>();
                let z = cutoff * u.powf(-1.0 / alpha);
                if rng.random::<f64>() <= (-beta * (z - cutoff)).exp() {
                    break if rng.random_bool(0.5) { z } else { -z };
                }
            },
        }
    }
}

/// Poisson(κΛ_m) events with i.i.d. marks and uniform offsets, from the `(path, step, Jumps)` stream.
pub fn sample_jump_events<T: Real>(
    rng: &RngPolicy,
    path: u64,
    step: u64,
    sampler: &JumpSampler,
    kappa: T,
) -> Result<Vec<JumpEvent<T>>> {
    if !(kappa > T::zero()) {
        return Err(Error::Config(format!("step length must be positive, got {kappa}")));
    }
    let mean = kappa.as_f64() * sampler.total_mass;
    if mean == 0.0 {
        return Ok(Vec::new());
    }
    let mut s = rng.stream(path, step, Channel::Jumps);
    let count = Poisson::new(mean)
        .map_err(|e| Error::Config(format!("invalid Poisson mean {mean}: {e}")))?
        .sample(&mut s) as usize;
    let k = kappa.as_f64();
    Ok((0..count)
        .map(|_| {
            let offset = k * (1.0 - s.random::<f64>());
            let mark = sampler.sample_mark(&mut s);
            JumpEvent { offset: T::lit(offset), mark: T::lit(mark) }
        })
        .collect())
}

/// `Σ_events η(·, u; z) − κ·∫ η(·, u; z) m(dz)` with `η` frozen at the left-endpoint state.
pub fn compensated_jump_increment<T: Real>(
    model: &ModelSpec<T>,
    u: &[T],
    events: &[JumpEvent<T>],
    kappa: T,
) -> Result<NodalField<T>> {
    let mut out = compensator_field(model, u)?.scaled(-kappa);
    for ev in events {
        out.axpy(T::one(), &model.eta_field(u, ev.mark));
    }
    if !out.is_finite() {
        return Err(Error::Numeric("non-finite compensated jump increment".into()));
    }
    Ok(out)
}

/// `ΔM_i = Σ_n h_n(u_i)·Δβ_n` at every node.
pub fn wiener_increment_field<T: Real>(model: &ModelSpec<T>, u: &[T], wiener: &[T]) -> NodalField<T> {
    let d = &model.diffusion;
    let amplitude: T = wiener.iter().enumerate().map(|(n, &db)| d.mode_weight(n + 1) * db).sum();
    NodalField(u.iter().map(|&v| d.shape(v) * amplitude).collect())
}

/// Per-model noise generator used by the trajectory driver.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    pub policy: RngPolicy,
    modes: usize,
    wiener_on: bool,
    jumps: JumpSampler,
}

impl NoiseSource {
    pub fn new<T: Real>(model: &ModelSpec<T>, policy: RngPolicy) -> Result<Self> {
        let jumps = JumpSampler::with_mass(model.jumps.measure, model.jump_quadrature().total_mass.as_f64())?;
        Ok(NoiseSource {
            policy,
            modes: model.diffusion.modes,
            wiener_on: model.diffusion.is_active(),
            jumps,
        })
    }

    pub fn increment<T: Real>(&self, path: u64, step: u64, kappa: T) -> Result<NoiseIncrement<T>> {
        let wiener = if self.wiener_on {
            sample_wiener_increments(&self.policy, path, step, self.modes, kappa)?
        } else {
            Vec::new()
        };
        let jumps = sample_jump_events(&self.policy, path, step, &self.jumps, kappa)?;
        Ok(NoiseIncrement { wiener, jumps, kappa })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::{default_model, oracle_model};

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let p = RngPolicy::new(7);
        let a: Vec<f64> = sample_wiener_increments(&p, 3, 11, 8, 0.01).unwrap();
        let b: Vec<f64> = sample_wiener_increments(&p, 3, 11, 8, 0.01).unwrap();
        let c: Vec<f64> = sample_wiener_increments(&p, 3, 12, 8, 0.01).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(sample_wiener_increments::<f64>(&p, 0, 0, 4, 0.0).is_err());
    }

    #[test]
    fn zero_mass_yields_no_events() {
        let s = JumpSampler::new(LevyMeasureSpec::CompoundPoisson {
            rate: 0.0,
            density: JumpDensity::Normal { mean: 0.0, std: 1.0 },
        })
        .unwrap();
        let p = RngPolicy::new(1);
        for step in 0..200 {
            assert!(sample_jump_events::<f64>(&p, 0, step, &s, 0.5).unwrap().is_empty());
        }
    }

    #[test]
    fn offsets_lie_in_step() {
        let s = JumpSampler::new(LevyMeasureSpec::default()).unwrap();
        let p = RngPolicy::new(2);
        for step in 0..500 {
            for ev in sample_jump_events::<f64>(&p, 1, step, &s, 0.25).unwrap() {
                assert!(ev.offset > 0.0 && ev.offset <= 0.25);
            }
        }
    }

    #[test]
    fn tempered_marks_respect_cutoff() {
        let s = JumpSampler::new(LevyMeasureSpec::TemperedTruncated { alpha: 0.8, beta: 2.0, scale: 0.5, cutoff: 1e-2 })
            .unwrap();
        let mut r = RngPolicy::new(3).stream(0, 0, Channel::Auxiliary(0));
        for _ in 0..2000 {
            assert!(s.sample_mark(&mut r).abs() >= 1e-2);
        }
    }

    #[test]
    fn silent_increment_is_zero() {
        let m = oracle_model(6);
        let u = vec![0.3; 6];
        let j = compensated_jump_increment(&m, &u, &[], 0.1).unwrap();
        assert!(j.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn large_mark_contributes_g_plus_lambda_u() {
        let m = default_model(9);
        let u: Vec<f64> = (0..9).map(|i| 0.1 * i as f64).collect();
        let ev = [JumpEvent { offset: 0.05, mark: 1e6 }];
        let with = compensated_jump_increment(&m, &u, &ev, 0.1).unwrap();
        let without = compensated_jump_increment(&m, &u, &[], 0.1).unwrap();
        for i in 0..9 {
            let y = m.mesh.unit_coordinate(m.mesh.node(i));
            let expected = m.jumps.g(y) + m.jumps.lambda_star * u[i];
            assert!((with[i] - without[i] - expected).abs() < 1e-15);
        }
    }
}
