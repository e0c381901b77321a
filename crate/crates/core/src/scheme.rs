//! The semi-implicit time discretization: control projection, initial smoothing, the implicit
//! step and whole-trajectory generation.
//!
//! Step `k → k+1` solves, for `v = û_{k+1}`,
//!
//! ```text
//! M(v − û_k) + κ·R(v) = κ·M·U_k + M·ΔM_k + M·ΔJ_k
//! ```
//!
//! where `R` is the assembled weak flux, `ΔM_k = Σ_n h_n(û_k)Δβ_n` and `ΔJ_k` is the
//! compensated jump increment, both evaluated at the left endpoint.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    assemble_flux_jacobian, assemble_flux_parts, assemble_weak_flux, frozen_diffusion_matrix, grad_lp_norm,
    FluxParts, MassKind, NodalField,
};
use crate::linalg::{norm2, Tridiagonal};
use crate::model::{ConvectionModel, FluxModel, ModelSpec};
use crate::noise::{compensated_jump_increment, wiener_increment_field, NoiseIncrement, NoiseSource, RngPolicy};
use crate::quadrature::GaussRule;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct SchemeConfig<T> {
    pub steps: usize,
    pub horizon: T,
    /// Relative tolerance of the nonlinear solve.
    pub tol_nl: T,
    pub max_newton: usize,
    /// Admits `p = 2`.
    pub oracle_mode: bool,
    pub mass: MassKind,
    /// Keep every step's noise in the trajectory record (needed by the energy ledger).
    pub record_noise: bool,
}

impl<T: Real> Default for SchemeConfig<T> {
    fn default() -> Self {
        SchemeConfig {
            steps: 256,
            horizon: T::one(),
            tol_nl: T::lit(1e-10),
            max_newton: 60,
            oracle_mode: false,
            mass: MassKind::Consistent,
            record_noise: true,
        }
    }
}

impl<T: Real> SchemeConfig<T> {
    pub fn kappa(&self) -> T {
        self.horizon / T::from_usize_lossy(self.steps)
    }

    pub fn time(&self, k: usize) -> T {
        T::from_usize_lossy(k) * self.kappa()
    }

    pub fn validate(&self, model: &ModelSpec<T>) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("scheme needs at least one step".into()));
        }
        if !(self.horizon > T::zero() && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.kappa() > T::one() {
            return Err(Error::Config(format!("step length κ = {} exceeds 1", self.kappa())));
        }
        if !(self.tol_nl > T::zero()) {
            return Err(Error::Config("nonlinear tolerance must be positive".into()));
        }
        if self.max_newton == 0 {
            return Err(Error::Config("max_newton must be at least 1".into()));
        }
        let p = model.flux.p;
        let two = T::lit(2.0);
        if p < two || (p == two && !self.oracle_mode) {
            return Err(Error::Config(format!("growth exponent p = {p} requires p > 2 (p = 2 only in oracle mode)")));
        }
        Ok(())
    }
}

type DenseFn<T> = Arc<dyn Fn(T) -> NodalField<T> + Send + Sync>;

/// Control `U(t)` on `[0, T]`.
#[derive(Clone)]
pub enum ControlSignal<T> {
    /// `values[j]` holds on `(t_j, t_{j+1}]` of a uniform partition.
    Piecewise { horizon: T, values: Vec<NodalField<T>> },
    Dense { horizon: T, f: DenseFn<T> },
}

impl<T: Real> fmt::Debug for ControlSignal<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlSignal::Piecewise { horizon, values } => f
                .debug_struct("Piecewise")
                .field("horizon", horizon)
                .field("intervals", &values.len())
                .finish(),
            ControlSignal::Dense { horizon, .. } => f.debug_struct("Dense").field("horizon", horizon).finish(),
        }
    }
}

impl<T: Real> ControlSignal<T> {
    pub fn zero(horizon: T, intervals: usize, nodes: usize) -> Self {
        ControlSignal::Piecewise { horizon, values: vec![NodalField::zeros(nodes); intervals] }
    }

    pub fn dense(horizon: T, f: impl Fn(T) -> NodalField<T> + Send + Sync + 'static) -> Self {
        ControlSignal::Dense { horizon, f: Arc::new(f) }
    }

    pub fn horizon(&self) -> T {
        match self {
            ControlSignal::Piecewise { horizon, .. } | ControlSignal::Dense { horizon, .. } => *horizon,
        }
    }

    pub fn pieces(&self) -> Option<&[NodalField<T>]> {
        match self {
            ControlSignal::Piecewise { values, .. } => Some(values),
            ControlSignal::Dense { .. } => None,
        }
    }

    /// Value at time `t`; piecewise signals are left-open, right-closed.
    pub fn evaluate(&self, t: T) -> NodalField<T> {
        match self {
            ControlSignal::Piecewise { horizon, values } => {
                let n = values.len();
                let pos = (t / *horizon * T::from_usize_lossy(n)).ceil().to_usize().unwrap_or(1);
                values[pos.clamp(1, n) - 1].clone()
            }
            ControlSignal::Dense { f, .. } => f(t),
        }
    }

    /// `‖U‖²_{L²(0,T;L²)}`; exact for piecewise signals, 8-point Gauss on 256 panels for dense ones.
    pub fn l2_norm_sq(&self, mesh: &crate::grid::SpatialMesh<T>) -> T {
        match self {
            ControlSignal::Piecewise { horizon, values } => {
                let len = *horizon / T::from_usize_lossy(values.len());
                values.iter().map(|v| mesh.l2_norm_sq(v)).sum::<T>() * len
            }
            ControlSignal::Dense { horizon, f } => {
                let rule = GaussRule::<T>::new(8);
                let panels = 256;
                let len = *horizon / T::from_usize_lossy(panels);
                (0..panels)
                    .map(|j| {
                        let t0 = T::from_usize_lossy(j) * len;
                        rule.integrate(t0, t0 + len, |t| mesh.l2_norm_sq(&f(t)))
                    })
                    .sum()
            }
        }
    }
}

/// `L²(0,T)` projection onto fields constant on each `(t_j, t_{j+1}]`, `κ = T/N`.
pub fn project_control<T: Real>(signal: &ControlSignal<T>, kappa: T) -> Result<ControlSignal<T>> {
    let horizon = signal.horizon();
    let ratio = horizon / kappa;
    let n = ratio.round();
    if !(kappa > T::zero()) || (ratio - n).abs() > T::lit(1e-9) * ratio || n < T::one() {
        return Err(Error::Config(format!("κ = {kappa} does not partition [0, {horizon}]")));
    }
    let n = n.to_usize().unwrap_or(1);
    let kap = horizon / T::from_usize_lossy(n);
    let values = match signal {
        ControlSignal::Piecewise { values, .. } if values.len() == n => values.clone(),
        ControlSignal::Piecewise { values, .. } => {
            let m = values.len();
            let src = horizon / T::from_usize_lossy(m);
            let nodes = values.first().map_or(0, |v| v.len());
            (0..n)
                .map(|j| {
                    let (a, b) = (T::from_usize_lossy(j) * kap, T::from_usize_lossy(j + 1) * kap);
                    let first = (a / src).floor().to_usize().unwrap_or(0).min(m - 1);
                    let mut acc = NodalField::zeros(nodes);
                    let mut i = first;
                    while i < m {
                        let (s0, s1) = (T::from_usize_lossy(i) * src, T::from_usize_lossy(i + 1) * src);
                        if s0 >= b {
                            break;
                        }
                        let overlap = s1.min(b) - s0.max(a);
                        if overlap > T::zero() {
                            acc.axpy(overlap / kap, &values[i]);
                        }
                        i += 1;
                    }
                    acc
                })
                .collect()
        }
        ControlSignal::Dense { f, .. } => {
            let rule = GaussRule::<T>::new(5);
            (0..n)
                .map(|j| {
                    let a = T::from_usize_lossy(j) * kap;
                    let mut acc: Option<NodalField<T>> = None;
                    for (s, w) in rule.iter() {
                        let v = f(a + s * kap);
                        match acc.as_mut() {
                            None => acc = Some(v.scaled(w)),
                            Some(x) => x.axpy(w, &v),
                        }
                    }
                    acc.unwrap_or_default()
                })
                .collect()
        }
    };
    Ok(ControlSignal::Piecewise { horizon, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveStats<T> {
    pub iterations: usize,
    pub picard_steps: usize,
    /// `‖G(û_{k+1})‖₂` of the variational residual.
    pub residual: T,
    /// `‖rhs‖₂`, the scale of the residual bound.
    pub rhs_norm: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSolution<T> {
    pub state: NodalField<T>,
    pub stats: SolveStats<T>,
}

/// Solves `M·v + κ·R(v) = rhs` by damped Newton with a lagged-diffusivity Picard fallback.
pub(crate) fn solve_resolvent<T: Real>(
    model: &ModelSpec<T>,
    mass: &Tridiagonal<T>,
    kappa: T,
    rhs: &[T],
    guess: &[T],
    tol: T,
    max_iter: usize,
) -> Result<StepSolution<T>> {
    let residual = |v: &[T]| -> Result<Vec<T>> {
        let flux = assemble_weak_flux(model, v)?;
        Ok(mass.matvec(v).iter().zip(flux.iter()).zip(rhs).map(|((&m, &f), &b)| m + kappa * f - b).collect())
    };
    let rhs_norm = norm2(rhs);
    let target = tol * (T::one() + rhs_norm);
    let mut v = guess.to_vec();
    let mut r = residual(&v)?;
    let mut rn = norm2(&r);
    let mut iterations = 0;
    let mut picard_steps = 0;
    let armijo = T::lit(1e-4);

    while rn > target {
        if iterations >= max_iter {
            return Err(Error::Solver { iterations, residual: rn.as_f64() });
        }
        iterations += 1;
        let jac = mass.add_scaled(kappa, &assemble_flux_jacobian(model, &v));
        let neg: Vec<T> = r.iter().map(|&x| -x).collect();
        let mut accepted = false;
        if let Ok(delta) = jac.solve(&neg) {
            let mut alpha = T::one();
            for _ in 0..4 {
                let trial: Vec<T> = v.iter().zip(&delta).map(|(&a, &d)| a + alpha * d).collect();
                if trial.iter().all(|x| x.is_finite()) {
                    if let Ok(rt) = residual(&trial) {
                        let rtn = norm2(&rt);
                        if rtn <= (T::one() - armijo * alpha) * rn {
                            v = trial;
                            r = rt;
                            rn = rtn;
                            accepted = true;
                            break;
                        }
                    }
                }
                alpha *= T::lit(0.5);
            }
        }
        if !accepted {
            // lagged diffusivity: (M + κ·K(v)) w = rhs − κ·F-part(v)
            picard_steps += 1;
            let frozen = mass.add_scaled(kappa, &frozen_diffusion_matrix(model, &v));
            let conv = assemble_flux_parts(model, &v, FluxParts::ConvectionOnly)?;
            let b: Vec<T> = rhs.iter().zip(conv.iter()).map(|(&x, &c)| x - kappa * c).collect();
            v = frozen.solve(&b)?;
            r = residual(&v)?;
            rn = norm2(&r);
            if !rn.is_finite() {
                return Err(Error::Numeric("non-finite iterate in nonlinear solve".into()));
            }
        }
    }
    // one polishing Newton step keeps the energy-identity residual near rounding level
    if rn > T::zero() {
        let jac = mass.add_scaled(kappa, &assemble_flux_jacobian(model, &v));
        let neg: Vec<T> = r.iter().map(|&x| -x).collect();
        if let Ok(delta) = jac.solve(&neg) {
            let trial: Vec<T> = v.iter().zip(&delta).map(|(&a, &d)| a + d).collect();
            if let Ok(rt) = residual(&trial) {
                let rtn = norm2(&rt);
                if rtn < rn {
                    v = trial;
                    rn = rtn;
                }
            }
        }
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite solution of nonlinear step".into()));
    }
    Ok(StepSolution { state: NodalField(v), stats: SolveStats { iterations, picard_steps, residual: rn, rhs_norm } })
}

/// Result of the initial resolvent smoothing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothedInitial<T> {
    pub field: NodalField<T>,
    /// `½‖u_{0,κ}‖² + κ‖∇u_{0,κ}‖_p^p`
    pub energy: T,
    /// `½‖u₀‖²`
    pub bound: T,
    /// `energy − bound`; non-positive up to solver tolerance.
    pub slack: T,
}

/// Resolvent `u − κ·div(|∇u|^{p−2}∇u) = u₀` in weak form, with the smoothing inequality recorded.
pub fn smooth_initial<T: Real>(
    u0: &NodalField<T>,
    kappa: T,
    model: &ModelSpec<T>,
    tol: T,
) -> Result<SmoothedInitial<T>> {
    if !(kappa > T::zero()) {
        return Err(Error::Config(format!("smoothing parameter must be positive, got {kappa}")));
    }
    model.mesh.check_len(u0)?;
    let plain = ModelSpec {
        flux: FluxModel { p: model.flux.p, eps_reg: model.flux.eps_reg, ..FluxModel::default() },
        convection: ConvectionModel::none(),
        ..model.clone()
    };
    let mass = model.mesh.mass_matrix(MassKind::Consistent);
    let rhs = mass.matvec(u0);
    let sol = solve_resolvent(&plain, &mass, kappa, &rhs, u0, tol, 100)?;
    let mesh = &model.mesh;
    let half = T::lit(0.5);
    let energy = half * mesh.l2_norm_sq(&sol.state) + kappa * grad_lp_norm(mesh, &sol.state, model.flux.p)?;
    let bound = half * mesh.l2_norm_sq(u0);
    Ok(SmoothedInitial { field: sol.state, energy, bound, slack: energy - bound })
}

/// `ΔM_k + ΔJ_k` at the left state `u_prev`.
pub fn noise_field<T: Real>(model: &ModelSpec<T>, u_prev: &[T], noise: &NoiseIncrement<T>, kappa: T) -> Result<NodalField<T>> {
    let mut out = compensated_jump_increment(model, u_prev, &noise.jumps, kappa)?;
    if !noise.wiener.is_empty() {
        out.axpy(T::one(), &wiener_increment_field(model, u_prev, &noise.wiener));
    }
    Ok(out)
}

/// Reusable per-model stepping context.
#[derive(Debug, Clone)]
pub struct Stepper<'a, T> {
    pub model: &'a ModelSpec<T>,
    pub cfg: &'a SchemeConfig<T>,
    mass: Tridiagonal<T>,
}

impl<'a, T: Real> Stepper<'a, T> {
    pub fn new(model: &'a ModelSpec<T>, cfg: &'a SchemeConfig<T>) -> Result<Self> {
        cfg.validate(model)?;
        Ok(Stepper { model, cfg, mass: model.mesh.mass_matrix(cfg.mass) })
    }

    pub fn mass(&self) -> &Tridiagonal<T> {
        &self.mass
    }

    /// `u_prev + κU_k + ΔM_k + ΔJ_k` before multiplication by the mass matrix.
    pub fn explicit_terms(&self, u_prev: &[T], control: &[T], noise: &NoiseIncrement<T>) -> Result<NodalField<T>> {
        let mut total = noise_field(self.model, u_prev, noise, self.cfg.kappa())?;
        total.axpy(T::one(), u_prev);
        total.axpy(self.cfg.kappa(), control);
        Ok(total)
    }

    pub fn step_from(
        &self,
        u_prev: &[T],
        control: &[T],
        noise: &NoiseIncrement<T>,
        guess: &[T],
    ) -> Result<StepSolution<T>> {
        self.model.mesh.check_len(u_prev)?;
        self.model.mesh.check_len(control)?;
        let explicit = self.explicit_terms(u_prev, control, noise)?;
        let rhs = self.mass.matvec(&explicit);
        solve_resolvent(self.model, &self.mass, self.cfg.kappa(), &rhs, guess, self.cfg.tol_nl, self.cfg.max_newton)
    }

    pub fn step(&self, u_prev: &[T], control: &[T], noise: &NoiseIncrement<T>) -> Result<StepSolution<T>> {
        self.step_from(u_prev, control, noise, u_prev)
    }
}

/// One semi-implicit step from `u_prev` (Newton started at `u_prev`).
pub fn implicit_step<T: Real>(
    u_prev: &NodalField<T>,
    control_k: &NodalField<T>,
    noise: &NoiseIncrement<T>,
    model: &ModelSpec<T>,
    cfg: &SchemeConfig<T>,
) -> Result<StepSolution<T>> {
    Stepper::new(model, cfg)?.step(u_prev, control_k, noise)
}

/// Discrete path `û_0 … û_N` with solver statistics and the noise that drove it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord<T> {
    pub path: u64,
    pub seed: u64,
    pub kappa: T,
    pub horizon: T,
    pub mass: MassKind,
    pub states: Vec<NodalField<T>>,
    /// Projected control `U_k` used in step `k`.
    pub controls: Vec<NodalField<T>>,
    pub noise: Option<Vec<NoiseIncrement<T>>>,
    pub stats: Vec<SolveStats<T>>,
    pub smoothing: SmoothedInitial<T>,
}

impl<T: Real> TrajectoryRecord<T> {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn final_state(&self) -> &NodalField<T> {
        self.states.last().expect("trajectory has at least the initial state")
    }

    fn locate(&self, t: T) -> (usize, T) {
        let n = self.steps();
        let s = (t / self.kappa).max(T::zero());
        let k = s.floor().to_usize().unwrap_or(0).min(n.saturating_sub(1));
        (k, s - T::from_usize_lossy(k))
    }

    /// `u_κ(t) = û_{k+1}` on `(t_k, t_{k+1}]`, `u_κ(0) = û_0`.
    pub fn piecewise_constant(&self, t: T) -> &NodalField<T> {
        if t <= T::zero() {
            return &self.states[0];
        }
        let k = (t / self.kappa).ceil().to_usize().unwrap_or(1).clamp(1, self.steps());
        &self.states[k]
    }

    /// `ū_κ(t) = û_k` on `(t_k, t_{k+1}]`.
    pub fn piecewise_constant_left(&self, t: T) -> &NodalField<T> {
        if t <= T::zero() {
            return &self.states[0];
        }
        let k = (t / self.kappa).ceil().to_usize().unwrap_or(1).clamp(1, self.steps());
        &self.states[k - 1]
    }

    /// `ũ_κ(t) = û_k + (t − t_k)/κ·(û_{k+1} − û_k)` on `[t_k, t_{k+1})`.
    pub fn piecewise_affine(&self, t: T) -> NodalField<T> {
        if t >= self.horizon {
            return self.final_state().clone();
        }
        let (k, frac) = self.locate(t);
        let mut out = self.states[k].scaled(T::one() - frac);
        out.axpy(frac, &self.states[k + 1]);
        out
    }
}

/// Runs `N` steps from the smoothed initial datum.
pub fn run_trajectory<T: Real>(
    model: &ModelSpec<T>,
    cfg: &SchemeConfig<T>,
    control: &ControlSignal<T>,
    rng: &RngPolicy,
    path: u64,
) -> Result<TrajectoryRecord<T>> {
    let stepper = Stepper::new(model, cfg)?;
    let kappa = cfg.kappa();
    let projected = project_control(control, kappa)?;
    let controls = projected.pieces().expect("projection is piecewise").to_vec();
    if controls.len() != cfg.steps {
        return Err(Error::Data(format!(
            "control horizon {} does not match scheme horizon {}",
            control.horizon(),
            cfg.horizon
        )));
    }
    let smoothing = smooth_initial(&model.initial, kappa, model, cfg.tol_nl)?;
    let source = NoiseSource::new(model, *rng)?;
    let mut states = Vec::with_capacity(cfg.steps + 1);
    let mut stats = Vec::with_capacity(cfg.steps);
    let mut noises = Vec::with_capacity(if cfg.record_noise { cfg.steps } else { 0 });
    states.push(smoothing.field.clone());
    for k in 0..cfg.steps {
        let noise = source.increment(path, k as u64, kappa).map_err(|e| e.at_step(k))?;
        let sol = stepper.step(&states[k], &controls[k], &noise).map_err(|e| e.at_step(k))?;
        states.push(sol.state);
        stats.push(sol.stats);
        if cfg.record_noise {
            noises.push(noise);
        }
    }
    Ok(TrajectoryRecord {
        path,
        seed: rng.seed,
        kappa,
        horizon: cfg.horizon,
        mass: cfg.mass,
        states,
        controls,
        noise: cfg.record_noise.then_some(noises),
        stats,
        smoothing,
    })
}

/// Runs `N` steps without storing the path, calling `visit(k, û_k)` for `k = 0 … N`.
///
/// A `None` control means `U ≡ 0`. Returns the final state.
pub fn run_streaming<T: Real>(
    model: &ModelSpec<T>,
    cfg: &SchemeConfig<T>,
    control: Option<&ControlSignal<T>>,
    rng: &RngPolicy,
    path: u64,
    mut visit: impl FnMut(usize, &NodalField<T>),
) -> Result<NodalField<T>> {
    let stepper = Stepper::new(model, cfg)?;
    let kappa = cfg.kappa();
    let projected = control.map(|c| project_control(c, kappa)).transpose()?;
    let pieces = projected.as_ref().and_then(|p| p.pieces());
    if pieces.is_some_and(|p| p.len() != cfg.steps) {
        return Err(Error::Data("control horizon does not match scheme horizon".into()));
    }
    let zero = NodalField::zeros(model.mesh.node_count());
    let source = NoiseSource::new(model, *rng)?;
    let mut u = smooth_initial(&model.initial, kappa, model, cfg.tol_nl)?.field;
    visit(0, &u);
    for k in 0..cfg.steps {
        let noise = source.increment(path, k as u64, kappa).map_err(|e| e.at_step(k))?;
        let ctrl = pieces.map_or(&zero, |p| &p[k]);
        u = stepper.step(&u, ctrl, &noise).map_err(|e| e.at_step(k))?.state;
        visit(k + 1, &u);
    }
    Ok(u)
}

/// Paths `first_path .. first_path + count` in parallel; output order follows the path id.
pub fn run_ensemble<T: Real>(
    model: &ModelSpec<T>,
    cfg: &SchemeConfig<T>,
    control: &ControlSignal<T>,
    rng: &RngPolicy,
    first_path: u64,
    count: usize,
) -> Vec<Result<TrajectoryRecord<T>>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| run_trajectory(model, cfg, control, rng, first_path + i))
        .collect()
}
