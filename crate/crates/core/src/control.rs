//! Monte Carlo evaluation of the tracking cost and derivative-free minimization over a
//! finite-dimensional family of piecewise-constant controls.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{MassKind, NodalField, SpatialMesh};
use crate::model::ModelSpec;
use crate::noise::RngPolicy;
use crate::scalar::Real;
use crate::scheme::{run_trajectory, ControlSignal, SchemeConfig, TrajectoryRecord};
use crate::stats::mean_se;

/// Deterministic target `u_det` at the partition times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", bound(deserialize = "T: Real + Deserialize<'de>"))]
pub enum TargetProfile<T> {
    Constant(NodalField<T>),
    /// One field per time `t_0 … t_N`.
    Sampled(Vec<NodalField<T>>),
}

impl<T: Real> TargetProfile<T> {
    pub fn at(&self, k: usize) -> &NodalField<T> {
        match self {
            TargetProfile::Constant(f) => f,
            TargetProfile::Sampled(v) => &v[k],
        }
    }

    fn check(&self, steps: usize, nodes: usize) -> Result<()> {
        let bad = match self {
            TargetProfile::Constant(f) => f.len() != nodes,
            TargetProfile::Sampled(v) => v.len() != steps + 1 || v.iter().any(|f| f.len() != nodes),
        };
        if bad {
            return Err(Error::Data(format!("target profile does not cover {steps} steps on {nodes} nodes")));
        }
        Ok(())
    }
}

/// Lipschitz terminal payoff `Ψ` on `L²`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound(deserialize = "T: Real + Deserialize<'de>"))]
pub enum TerminalPayoff<T> {
    #[default]
    None,
    /// `a·‖u − w‖ + c`
    Affine { scale: T, reference: NodalField<T>, offset: T },
    /// `clamp((u, w), lo, hi)`
    ClippedLinear { weight: NodalField<T>, lo: T, hi: T },
}

impl<T: Real> TerminalPayoff<T> {
    pub fn eval(&self, mesh: &SpatialMesh<T>, u: &[T]) -> T {
        match self {
            TerminalPayoff::None => T::zero(),
            TerminalPayoff::Affine { scale, reference, offset } => {
                *scale * mesh.l2_norm(&NodalField(u.to_vec()).sub(reference)) + *offset
            }
            TerminalPayoff::ClippedLinear { weight, lo, hi } => mesh.l2_inner(u, weight).max(*lo).min(*hi),
        }
    }

    pub fn lipschitz(&self, mesh: &SpatialMesh<T>) -> T {
        match self {
            TerminalPayoff::None => T::zero(),
            TerminalPayoff::Affine { scale, .. } => scale.abs(),
            TerminalPayoff::ClippedLinear { weight, .. } => mesh.l2_norm(weight),
        }
    }

    fn check(&self, nodes: usize) -> Result<()> {
        match self {
            TerminalPayoff::Affine { reference, .. } if reference.len() != nodes => {
                Err(Error::Data("terminal reference has the wrong length".into()))
            }
            TerminalPayoff::ClippedLinear { weight, lo, hi } if weight.len() != nodes || lo > hi => {
                Err(Error::Data("clipped terminal payoff is malformed".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct CostSpec<T> {
    pub target: TargetProfile<T>,
    pub terminal: TerminalPayoff<T>,
    /// Weight of the `‖U‖²` term.
    pub control_weight: T,
}

impl<T: Real> CostSpec<T> {
    pub fn tracking(target: TargetProfile<T>) -> Self {
        CostSpec { target, terminal: TerminalPayoff::None, control_weight: T::one() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostBreakdown<T> {
    pub tracking: T,
    pub control: T,
    pub terminal: T,
    pub total: T,
}

/// Single-path cost with left-endpoint time quadrature.
pub fn cost_evaluate<T: Real>(
    traj: &TrajectoryRecord<T>,
    control: &ControlSignal<T>,
    spec: &CostSpec<T>,
    mesh: &SpatialMesh<T>,
) -> Result<CostBreakdown<T>> {
    let n = traj.steps();
    spec.target.check(n, mesh.node_count())?;
    spec.terminal.check(mesh.node_count())?;
    let pieces = control
        .pieces()
        .filter(|p| p.len() == n)
        .ok_or_else(|| Error::Data(format!("control is not piecewise constant on the {n}-step partition")))?;
    let kappa = traj.kappa;
    let tracking = kappa
        * (0..n)
            .map(|k| mesh.l2_norm_sq(&traj.states[k].sub(spec.target.at(k))))
            .sum::<T>();
    let control_term = spec.control_weight * kappa * pieces.iter().map(|u| mesh.l2_norm_sq(u)).sum::<T>();
    let terminal = spec.terminal.eval(mesh, traj.final_state());
    Ok(CostBreakdown { tracking, control: control_term, terminal, total: tracking + control_term + terminal })
}

/// Controls `U_θ = Σ θ_j·atom_j` with atoms piecewise constant on the scheme partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlFamily<T> {
    horizon: T,
    atoms: Vec<Vec<NodalField<T>>>,
    gram: Vec<Vec<T>>,
}

impl<T: Real> ControlFamily<T> {
    pub fn new(mesh: &SpatialMesh<T>, horizon: T, atoms: Vec<Vec<NodalField<T>>>) -> Result<Self> {
        let steps = atoms.first().map_or(0, |a| a.len());
        if atoms.is_empty() || steps == 0 {
            return Err(Error::Config("control family needs at least one non-empty atom".into()));
        }
        if atoms.iter().any(|a| a.len() != steps || a.iter().any(|f| f.len() != mesh.node_count())) {
            return Err(Error::Data("control atoms disagree in shape".into()));
        }
        let m = mesh.mass_matrix(MassKind::Consistent);
        let kappa = horizon / T::from_usize_lossy(steps);
        let k = atoms.len();
        let mut gram = vec![vec![T::zero(); k]; k];
        for i in 0..k {
            for j in 0..=i {
                let g = kappa
                    * (0..steps)
                        .map(|t| crate::linalg::dot(&atoms[i][t], &m.matvec(&atoms[j][t])))
                        .sum::<T>();
                gram[i][j] = g;
                gram[j][i] = g;
            }
        }
        let fam = ControlFamily { horizon, atoms, gram };
        if !fam.gram_positive_definite() {
            return Err(Error::Config("control atoms are linearly dependent".into()));
        }
        Ok(fam)
    }

    /// Atoms `1_{block b}(t)·sin(jπy)` for `b < time_blocks`, `1 ≤ j ≤ modes`.
    pub fn tensor(mesh: &SpatialMesh<T>, horizon: T, steps: usize, time_blocks: usize, modes: usize) -> Result<Self> {
        if time_blocks == 0 || time_blocks > steps || modes == 0 {
            return Err(Error::Config(format!("cannot split {steps} steps into {time_blocks} blocks with {modes} modes")));
        }
        let mut atoms = Vec::with_capacity(time_blocks * modes);
        for b in 0..time_blocks {
            for j in 1..=modes {
                let shape = NodalField::interpolate(mesh, |x| {
                    (T::PI() * T::from_usize_lossy(j) * mesh.unit_coordinate(x)).sin()
                });
                let zero = NodalField::zeros(mesh.node_count());
                atoms.push(
                    (0..steps)
                        .map(|t| if t * time_blocks / steps == b { shape.clone() } else { zero.clone() })
                        .collect(),
                );
            }
        }
        Self::new(mesh, horizon, atoms)
    }

    pub fn dim(&self) -> usize {
        self.atoms.len()
    }

    pub fn steps(&self) -> usize {
        self.atoms[0].len()
    }

    pub fn gram(&self) -> &[Vec<T>] {
        &self.gram
    }

    fn gram_positive_definite(&self) -> bool {
        // Cholesky
        let k = self.gram.len();
        let mut l = vec![vec![T::zero(); k]; k];
        for i in 0..k {
            for j in 0..=i {
                let s: T = (0..j).map(|m| l[i][m] * l[j][m]).sum();
                if i == j {
                    let d = self.gram[i][i] - s;
                    if !(d > T::epsilon() * T::lit(1e6) * self.gram[i][i]) {
                        return false;
                    }
                    l[i][i] = d.sqrt();
                } else {
                    l[i][j] = (self.gram[i][j] - s) / l[j][j];
                }
            }
        }
        true
    }

    /// `θᵀGθ = ‖U_θ‖²_{L²(0,T;L²)}`
    pub fn penalty(&self, theta: &[T]) -> T {
        theta
            .iter()
            .zip(&self.gram)
            .map(|(&a, row)| a * row.iter().zip(theta).map(|(&g, &b)| g * b).sum::<T>())
            .sum()
    }

    pub fn realize(&self, theta: &[T]) -> Result<ControlSignal<T>> {
        if theta.len() != self.dim() {
            return Err(Error::Data(format!("θ has {} components, family has {}", theta.len(), self.dim())));
        }
        let nodes = self.atoms[0][0].len();
        let values = (0..self.steps())
            .map(|t| {
                let mut f = NodalField::zeros(nodes);
                for (a, &c) in self.atoms.iter().zip(theta) {
                    f.axpy(c, &a[t]);
                }
                f
            })
            .collect();
        Ok(ControlSignal::Piecewise { horizon: self.horizon, values })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostEstimate<T> {
    pub mean: T,
    pub se: T,
    /// `w·θᵀGθ`, shared by every path.
    pub control_term: T,
    pub paths: usize,
    pub failures: usize,
}

impl<T: Real> CostEstimate<T> {
    pub fn is_partial(&self) -> bool {
        self.failures > 0
    }
}

/// Mean cost over paths `0 … n_paths−1` of `rng`; reusing `rng` across θ gives common random numbers.
#[allow(clippy::too_many_arguments)]
pub fn mc_cost_estimate<T: Real>(
    model: &ModelSpec<T>,
    cfg: &SchemeConfig<T>,
    theta: &[T],
    family: &ControlFamily<T>,
    spec: &CostSpec<T>,
    rng: &RngPolicy,
    n_paths: usize,
) -> Result<CostEstimate<T>> {
    if n_paths < 2 {
        return Err(Error::Config("cost estimate needs at least two paths".into()));
    }
    if family.steps() != cfg.steps {
        return Err(Error::Data("control family and scheme use different partitions".into()));
    }
    let control = family.realize(theta)?;
    let control_term = spec.control_weight * family.penalty(theta);
    let cfg = SchemeConfig { record_noise: false, ..cfg.clone() };
    let runs: Vec<Result<T>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|path| {
            let traj = run_trajectory(model, &cfg, &control, rng, path)?;
            let c = cost_evaluate(&traj, &control, &CostSpec { control_weight: T::zero(), ..spec.clone() }, &model.mesh)?;
            Ok(c.total + control_term)
        })
        .collect();
    let mut costs = Vec::with_capacity(n_paths);
    let mut failures = 0;
    for r in runs {
        match r {
            Ok(c) => costs.push(c),
            Err(e) if e.is_solver_failure() => failures += 1,
            Err(e) => return Err(e),
        }
    }
    let e = mean_se(&costs);
    Ok(CostEstimate { mean: e.mean, se: e.se, control_term, paths: costs.len(), failures })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct OptimizerConfig<T> {
    /// Maximum number of cost estimates.
    pub budget: usize,
    pub paths: usize,
    pub initial_step: T,
    pub shrink: T,
    pub min_step: T,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<T>>,
}

impl<T: Real> Default for OptimizerConfig<T> {
    fn default() -> Self {
        OptimizerConfig {
            budget: 60,
            paths: 16,
            initial_step: T::one(),
            shrink: T::lit(0.5),
            min_step: T::lit(1e-3),
            theta0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizationStep<T> {
    pub iteration: usize,
    pub theta: Vec<T>,
    pub mean: T,
    pub se: T,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizationStatus {
    /// Step size fell below the floor.
    Converged,
    BudgetExhausted,
    /// Budget exhausted without a single accepted move.
    NoImprovement,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizationResult<T> {
    pub theta: Vec<T>,
    pub cost: CostEstimate<T>,
    pub trace: Vec<OptimizationStep<T>>,
    /// Cost of the incumbent after every accepted move, starting with the initial point.
    pub incumbent_costs: Vec<T>,
    pub evaluations: usize,
    pub status: OptimizationStatus,
}

/// Coordinate search with shrinking steps; a move is kept only if it lowers the estimated cost.
pub fn optimize_control<T: Real>(
    model: &ModelSpec<T>,
    cfg: &SchemeConfig<T>,
    family: &ControlFamily<T>,
    spec: &CostSpec<T>,
    rng: &RngPolicy,
    opt: &OptimizerConfig<T>,
) -> Result<OptimizationResult<T>> {
    if opt.budget == 0 || !(opt.initial_step > T::zero()) || !(opt.shrink > T::zero() && opt.shrink < T::one()) {
        return Err(Error::Config("optimizer needs a positive budget, step and shrink factor in (0, 1)".into()));
    }
    let mut theta = opt.theta0.clone().unwrap_or_else(|| vec![T::zero(); family.dim()]);
    let mut best = mc_cost_estimate(model, cfg, &theta, family, spec, rng, opt.paths)?;
    let mut evaluations = 1;
    let mut trace = vec![OptimizationStep { iteration: 0, theta: theta.clone(), mean: best.mean, se: best.se, accepted: true }];
    let mut incumbent_costs = vec![best.mean];
    let mut step = opt.initial_step;
    let mut improved_ever = false;
    let status = 'search: loop {
        let mut improved = false;
        for i in 0..family.dim() {
            for sign in [T::one(), -T::one()] {
                if evaluations >= opt.budget {
                    break 'search if improved_ever { OptimizationStatus::BudgetExhausted } else { OptimizationStatus::NoImprovement };
                }
                let mut trial = theta.clone();
                trial[i] += sign * step;
                let est = mc_cost_estimate(model, cfg, &trial, family, spec, rng, opt.paths)?;
                evaluations += 1;
                let accepted = !est.is_partial() && est.mean < best.mean;
                trace.push(OptimizationStep { iteration: evaluations - 1, theta: trial.clone(), mean: est.mean, se: est.se, accepted });
                if accepted {
                    theta = trial;
                    best = est;
                    incumbent_costs.push(best.mean);
                    improved = true;
                    improved_ever = true;
                    break;
                }
            }
        }
        if !improved {
            step *= opt.shrink;
            if step < opt.min_step {
                break OptimizationStatus::Converged;
            }
        }
    };
    Ok(OptimizationResult { theta, cost: best, trace, incumbent_costs, evaluations, status })
}
