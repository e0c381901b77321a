//! Post-processing probes: per-step energy ledgers, Monte Carlo a-priori bounds, the smoothed
//! sign function `Υ_ϑ`, paired L¹ distance curves and the dissipativity margin.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{grad_lp_norm, NodalField, SpatialMesh};
use crate::linalg::{dot, smallest_generalized_eigenvalue, Tridiagonal};
use crate::model::{chg_constant, derived_constants, ModelSpec};
use crate::noise::RngPolicy;
use crate::quadrature::{linear_power_integral, GaussRule};
use crate::scalar::Real;
use crate::scheme::{noise_field, run_trajectory, ControlSignal, SchemeConfig, TrajectoryRecord};
use crate::stats::{mean_se, trend_test, Estimate, TrendTest};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyEntry<T> {
    pub step: usize,
    /// `½‖û_{k+1}‖²`
    pub kinetic: T,
    /// `κ⟨A + F, ∇û_{k+1}⟩`
    pub dissipation: T,
    /// `‖û_{k+1} − û_k‖²`
    pub increment: T,
    /// `κ(U_k, û_{k+1})`
    pub work: T,
    /// `(ΔM_k + ΔJ_k, û_{k+1})`
    pub noise_work: T,
    /// Energy identity defect.
    pub residual: T,
    pub rhs_norm: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport<T> {
    pub initial_kinetic: T,
    pub entries: Vec<EnergyEntry<T>>,
    pub max_norm_sq: T,
    pub total_dissipation: T,
    pub total_increment: T,
    pub total_work: T,
    pub total_noise_work: T,
    pub max_abs_residual: T,
}

impl<T: Real> EnergyReport<T> {
    /// Largest `|r_k| / (1 + ‖rhs_k‖)`.
    pub fn worst_relative_residual(&self) -> T {
        self.entries
            .iter()
            .map(|e| e.residual.abs() / (T::one() + e.rhs_norm))
            .fold(T::zero(), T::max)
    }
}

fn quad_form<T: Real>(m: &Tridiagonal<T>, a: &[T], b: &[T]) -> T {
    dot(a, &m.matvec(b))
}

/// Ledger of the per-step energy identity, in the inner product of the scheme's mass matrix.
pub fn energy_ledger<T: Real>(traj: &TrajectoryRecord<T>, model: &ModelSpec<T>) -> Result<EnergyReport<T>> {
    let noise = traj
        .noise
        .as_ref()
        .ok_or_else(|| Error::Data("trajectory was recorded without its noise increments".into()))?;
    let n = traj.steps();
    if noise.len() != n || traj.controls.len() != n || traj.stats.len() != n {
        return Err(Error::Data("trajectory record has inconsistent lengths".into()));
    }
    let m = model.mesh.mass_matrix(traj.mass);
    let half = T::lit(0.5);
    let kappa = traj.kappa;
    let initial_kinetic = half * quad_form(&m, &traj.states[0], &traj.states[0]);
    let mut prev_kin = initial_kinetic;
    let mut entries = Vec::with_capacity(n);
    for k in 0..n {
        let (u, v) = (&traj.states[k], &traj.states[k + 1]);
        let diff = v.sub(u);
        let kinetic = half * quad_form(&m, v, v);
        let increment = quad_form(&m, &diff, &diff);
        let dissipation = kappa * crate::grid::flux_pairing(model, v);
        let work = kappa * quad_form(&m, &traj.controls[k], v);
        let dn = noise_field(model, u, &noise[k], kappa)?;
        let noise_work = quad_form(&m, &dn, v);
        let residual = kinetic - prev_kin + half * increment + dissipation - work - noise_work;
        entries.push(EnergyEntry {
            step: k,
            kinetic,
            dissipation,
            increment,
            work,
            noise_work,
            residual,
            rhs_norm: traj.stats[k].rhs_norm,
        });
        prev_kin = kinetic;
    }
    let sum = |f: fn(&EnergyEntry<T>) -> T| entries.iter().map(f).sum::<T>();
    Ok(EnergyReport {
        initial_kinetic,
        max_norm_sq: entries.iter().map(|e| e.kinetic + e.kinetic).fold(initial_kinetic + initial_kinetic, T::max),
        total_dissipation: sum(|e| e.dissipation),
        total_increment: sum(|e| e.increment),
        total_work: sum(|e| e.work),
        total_noise_work: sum(|e| e.noise_work),
        max_abs_residual: entries.iter().map(|e| e.residual.abs()).fold(T::zero(), T::max),
        entries,
    })
}

/// Monte Carlo estimates of the discrete a-priori quantities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AprioriEstimates<T> {
    pub kappa: T,
    pub paths: usize,
    /// `max_n E‖û_n‖²`
    pub sup_mean_sq: Estimate<T>,
    /// `Σ_k E‖û_{k+1} − û_k‖²`
    pub increment_sum: Estimate<T>,
    /// `κ Σ_k E‖∇û_{k+1}‖_p^p`
    pub gradient_sum: Estimate<T>,
    /// `E max_n ‖û_n‖²`
    pub sup_in_time: Estimate<T>,
    /// `E ∫‖u_κ − ũ_κ‖² dt`
    pub interpolation_gap: Estimate<T>,
    /// `E ∫‖∇ũ_κ‖_p^p dt`
    pub affine_gradient_integral: Estimate<T>,
}

struct PathQuantities<T> {
    norms: Vec<T>,
    increment_sum: T,
    gradient_sum: T,
    affine_gradient: T,
}

fn path_quantities<T: Real>(traj: &TrajectoryRecord<T>, mesh: &SpatialMesh<T>, p: T) -> Result<PathQuantities<T>> {
    let norms: Vec<T> = traj.states.iter().map(|u| mesh.l2_norm_sq(u)).collect();
    let mut increment_sum = T::zero();
    let mut gradient_sum = T::zero();
    let mut affine_gradient = T::zero();
    let h = mesh.h();
    for k in 0..traj.steps() {
        let (u, v) = (&traj.states[k], &traj.states[k + 1]);
        increment_sum += mesh.l2_norm_sq(&v.sub(u));
        gradient_sum += grad_lp_norm(mesh, v, p)?;
        affine_gradient += (0..mesh.element_count())
            .map(|e| {
                let (a0, a1) = mesh.element_values(u, e);
                let (b0, b1) = mesh.element_values(v, e);
                linear_power_integral((a1 - a0) / h, (b1 - b0) / h, p) * h
            })
            .sum::<T>();
    }
    Ok(PathQuantities {
        norms,
        increment_sum,
        gradient_sum: traj.kappa * gradient_sum,
        affine_gradient: traj.kappa * affine_gradient,
    })
}

/// Estimates over an ensemble sharing one configuration; invariant under path order.
pub fn apriori_certificate<T: Real>(ensemble: &[TrajectoryRecord<T>], model: &ModelSpec<T>) -> Result<AprioriEstimates<T>> {
    let first = ensemble.first().ok_or_else(|| Error::Data("empty ensemble".into()))?;
    if ensemble.iter().any(|t| t.states.len() != first.states.len() || t.kappa != first.kappa) {
        return Err(Error::Data("ensemble members use different partitions".into()));
    }
    let p = model.flux.p;
    let q: Vec<PathQuantities<T>> = ensemble
        .par_iter()
        .map(|t| path_quantities(t, &model.mesh, p))
        .collect::<Result<_>>()?;
    let col = |f: &dyn Fn(&PathQuantities<T>) -> T| -> Vec<T> { q.iter().map(f).collect() };
    let mut sup_mean_sq = Estimate { mean: T::neg_infinity(), se: T::zero(), samples: q.len() };
    for n in 0..first.states.len() {
        let e = mean_se(&col(&|x| x.norms[n]));
        if e.mean > sup_mean_sq.mean {
            sup_mean_sq = e;
        }
    }
    let kappa = first.kappa;
    let third = kappa / T::lit(3.0);
    Ok(AprioriEstimates {
        kappa,
        paths: q.len(),
        sup_mean_sq,
        increment_sum: mean_se(&col(&|x| x.increment_sum)),
        gradient_sum: mean_se(&col(&|x| x.gradient_sum)),
        sup_in_time: mean_se(&col(&|x| x.norms.iter().copied().fold(T::zero(), T::max))),
        interpolation_gap: mean_se(&col(&|x| third * x.increment_sum)),
        affine_gradient_integral: mean_se(&col(&|x| x.affine_gradient)),
    })
}

/// Refinement study over several step lengths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementReport<T> {
    pub levels: Vec<AprioriEstimates<T>>,
    pub sup_mean_sq_trend: TrendTest,
    pub increment_sum_trend: TrendTest,
    pub gradient_sum_trend: TrendTest,
    /// `gap(κ_i) / gap(κ_{i+1})` for consecutive levels.
    pub gap_ratios: Vec<T>,
}

impl<T: Real> RefinementReport<T> {
    pub fn any_upward_trend(&self) -> bool {
        self.sup_mean_sq_trend.significant_increase
            || self.increment_sum_trend.significant_increase
            || self.gradient_sum_trend.significant_increase
    }
}

/// Trend of each bounded quantity against the refinement level, levels ordered coarse to fine.
pub fn refinement_study<T: Real>(levels: Vec<AprioriEstimates<T>>) -> RefinementReport<T> {
    let x: Vec<f64> = (0..levels.len()).map(|i| i as f64).collect();
    let trend = |f: &dyn Fn(&AprioriEstimates<T>) -> Estimate<T>| {
        let y: Vec<f64> = levels.iter().map(|l| f(l).mean.as_f64()).collect();
        let s: Vec<f64> = levels.iter().map(|l| f(l).se.as_f64()).collect();
        trend_test(&x, &y, &s)
    };
    RefinementReport {
        sup_mean_sq_trend: trend(&|l| l.sup_mean_sq),
        increment_sum_trend: trend(&|l| l.increment_sum),
        gradient_sum_trend: trend(&|l| l.gradient_sum),
        gap_ratios: levels
            .windows(2)
            .map(|w| w[0].interpolation_gap.mean / w[1].interpolation_gap.mean)
            .collect(),
        levels,
    }
}

/// Smoothed absolute value `Υ_ϑ(r) = ϑΥ(r/ϑ)` with `Υ′(s) = (15s − 10s³ + 3s⁵)/8` on `[−1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UpsilonSpec<T> {
    pub theta: T,
}

impl<T: Real> UpsilonSpec<T> {
    /// `|r| − M₁ϑ ≤ Υ_ϑ(r)`
    pub const M1: f64 = 5.0 / 16.0;
    /// `|Υ_ϑ″| ≤ M₂/ϑ`
    pub const M2: f64 = 15.0 / 8.0;

    pub fn new(theta: T) -> Result<Self> {
        if !(theta > T::zero() && theta.is_finite()) {
            return Err(Error::Domain(format!("smoothing scale must be positive, got {theta}")));
        }
        Ok(UpsilonSpec { theta })
    }

    pub fn m1() -> T {
        T::lit(Self::M1)
    }

    pub fn m2() -> T {
        T::lit(Self::M2)
    }
}

// |s| − Υ(s) on |s| ≤ 1, clamped into its exact range [0, M₁]
fn upsilon_defect<T: Real>(s: T) -> T {
    let s = s.abs();
    let s2 = s * s;
    let poly = s2 * (T::lit(7.5) + s2 * (T::lit(-2.5) + T::lit(0.5) * s2)) / T::lit(8.0);
    (s - poly).max(T::zero()).min(T::lit(UpsilonSpec::<f64>::M1))
}

/// `(Υ_ϑ(r), Υ_ϑ′(r), Υ_ϑ″(r))`
pub fn upsilon_eval<T: Real>(spec: &UpsilonSpec<T>, r: T) -> (T, T, T) {
    let th = spec.theta;
    let a = r.abs();
    if a >= th {
        return (a - UpsilonSpec::<T>::m1() * th, r.signum(), T::zero());
    }
    let s = r / th;
    let s2 = s * s;
    let value = a - th * upsilon_defect(s);
    let d1 = (s * (T::lit(15.0) + s2 * (T::lit(-10.0) + T::lit(3.0) * s2)) / T::lit(8.0)).max(-T::one()).min(T::one());
    let w = T::one() - s2;
    let d2 = UpsilonSpec::<T>::m2() * (w * w) / th;
    (value, d1, d2)
}

/// `∫_D |f_h|` and `∫_D Υ_ϑ(f_h)` of a P1 field, both exact.
pub fn l1_and_smoothed<T: Real>(mesh: &SpatialMesh<T>, f: &[T], spec: &UpsilonSpec<T>) -> (T, T) {
    let rule = GaussRule::<T>::new(4);
    let th = spec.theta;
    let m1 = UpsilonSpec::<T>::m1();
    let h = mesh.h();
    let (mut l1, mut smooth) = (T::zero(), T::zero());
    for e in 0..mesh.element_count() {
        let (a, b) = mesh.element_values(f, e);
        let mut cuts = vec![T::zero(), T::one()];
        if a != b {
            for level in [-th, T::zero(), th] {
                let s = (level - a) / (b - a);
                if s > T::zero() && s < T::one() {
                    cuts.push(s);
                }
            }
        }
        cuts.sort_by(|x, y| x.as_f64().total_cmp(&y.as_f64()));
        for w in cuts.windows(2) {
            let len = w[1] - w[0];
            if len <= T::zero() {
                continue;
            }
            let (va, vb) = (a + w[0] * (b - a), a + w[1] * (b - a));
            let abs_part = len * T::lit(0.5) * (va.abs() + vb.abs());
            l1 += h * abs_part;
            let mid = T::lit(0.5) * (va + vb);
            if mid.abs() >= th {
                smooth += h * (abs_part - m1 * th * len);
            } else {
                let defect: T = rule.iter().map(|(s, wt)| wt * upsilon_defect((va + s * (vb - va)) / th)).sum();
                smooth += h * (abs_part - th * len * defect);
            }
        }
    }
    (l1, smooth)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairCurve<T> {
    pub path: u64,
    pub l1: Vec<T>,
    /// One curve per smoothing scale, in the order of `L1ProbeReport::thetas`.
    pub smoothed: Vec<Vec<T>>,
    /// Least-squares slope of `l1` against time.
    pub slope: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct L1ProbeReport<T> {
    pub times: Vec<T>,
    pub thetas: Vec<T>,
    pub curves: Vec<PairCurve<T>>,
    /// Path-mean L¹ distance at each time.
    pub mean_l1: Vec<T>,
    pub slope: Estimate<T>,
    /// Growth over the horizon significant at 95%.
    pub significant_growth: bool,
    pub failed_paths: usize,
}

pub const DEFAULT_THETAS: [f64; 3] = [1e-2, 1e-3, 1e-4];

/// Paired runs from `u0_a` and `u0_b` driven by identical noise streams.
#[allow(clippy::too_many_arguments)]
pub fn l1_contraction_probe<T: Real>(
    model: &ModelSpec<T>,
    cfg: &SchemeConfig<T>,
    u0_a: &NodalField<T>,
    u0_b: &NodalField<T>,
    control: &ControlSignal<T>,
    rng: &RngPolicy,
    paths: usize,
    thetas: &[T],
) -> Result<L1ProbeReport<T>> {
    let specs: Vec<UpsilonSpec<T>> = thetas.iter().map(|&t| UpsilonSpec::new(t)).collect::<Result<_>>()?;
    let ma = model.with_initial(u0_a.clone())?;
    let mb = model.with_initial(u0_b.clone())?;
    let cfg = SchemeConfig { record_noise: false, ..cfg.clone() };
    let times: Vec<T> = (0..=cfg.steps).map(|k| cfg.time(k)).collect();
    let tm = times.iter().copied().sum::<T>() / T::from_usize_lossy(times.len());
    let sxx: T = times.iter().map(|&t| (t - tm) * (t - tm)).sum();
    let results: Vec<Result<PairCurve<T>>> = (0..paths as u64)
        .into_par_iter()
        .map(|path| {
            let ta = run_trajectory(&ma, &cfg, control, rng, path)?;
            let tb = run_trajectory(&mb, &cfg, control, rng, path)?;
            let mut l1 = Vec::with_capacity(times.len());
            let mut smoothed = vec![Vec::with_capacity(times.len()); specs.len()];
            for (a, b) in ta.states.iter().zip(&tb.states) {
                let d = a.sub(b);
                let mut base = None;
                for (j, s) in specs.iter().enumerate() {
                    let (l, sm) = l1_and_smoothed(&model.mesh, &d, s);
                    base.get_or_insert(l);
                    smoothed[j].push(sm);
                }
                l1.push(base.unwrap_or_else(|| l1_and_smoothed(&model.mesh, &d, &UpsilonSpec { theta: T::one() }).0));
            }
            let slope = times.iter().zip(&l1).map(|(&t, &v)| (t - tm) * v).sum::<T>() / sxx;
            Ok(PairCurve { path, l1, smoothed, slope })
        })
        .collect();
    let mut curves = Vec::new();
    let mut failed_paths = 0;
    for r in results {
        match r {
            Ok(c) => curves.push(c),
            Err(e) if e.is_solver_failure() => failed_paths += 1,
            Err(e) => return Err(e),
        }
    }
    let mean_l1 = (0..times.len())
        .map(|i| mean_se(&curves.iter().map(|c| c.l1[i]).collect::<Vec<_>>()).mean)
        .collect();
    let slope = mean_se(&curves.iter().map(|c| c.slope).collect::<Vec<_>>());
    let significant_growth = slope.se > T::zero() && slope.mean / slope.se > T::lit(crate::stats::Z_ONE_SIDED_95)
        || slope.se == T::zero() && slope.mean > T::zero();
    Ok(L1ProbeReport {
        times,
        thetas: thetas.to_vec(),
        curves,
        mean_l1,
        slope,
        significant_growth,
        failed_paths,
    })
}

/// `C_hg + 2C₁‖∇u‖_p^p − ‖h(u)‖²_HS − ∫‖η(u; z)‖² m(dz) − δ‖u‖^p`
pub fn dissipativity_margin<T: Real>(model: &ModelSpec<T>, u: &[T], delta: T) -> Result<T> {
    let p = model.flux.p;
    let c1 = model.flux.coeff_min();
    let grad = grad_lp_norm(&model.mesh, u, p)?;
    let l2 = model.mesh.l2_norm(u);
    Ok(chg_constant(model) + T::lit(2.0) * c1 * grad
        - model.hilbert_schmidt_sq(u)
        - model.jump_energy(u)
        - delta * l2.powf(p))
}

/// `δ = 2C₁/(C_S·C_P)^p` with `‖u‖_{L²} ≤ C_S‖u‖_{L^p}` and `‖u‖_{L^p} ≤ C_P‖∇u‖_{L^p}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaSuggestion<T> {
    pub delta: T,
    pub c_sobolev: T,
    pub c_poincare: T,
}

/// For `p = 2` the Poincaré constant is `λ₁^{−1/2}` of the discrete generalized eigenproblem;
/// otherwise `C_S = |D|^{1/2 − 1/p}` and `C_P = |D|/2`.
pub fn suggested_delta<T: Real>(model: &ModelSpec<T>) -> Result<DeltaSuggestion<T>> {
    let p = model.flux.p;
    let c1 = derived_constants(model).c1;
    let len = model.mesh.length();
    let (c_sobolev, c_poincare) = if p == T::lit(2.0) {
        let mesh = &model.mesh;
        let lambda = smallest_generalized_eigenvalue(
            &mesh.stiffness_matrix(),
            &mesh.mass_matrix(crate::grid::MassKind::Consistent),
            500,
        )?;
        (T::one(), T::one() / lambda.sqrt())
    } else {
        (len.powf(T::lit(0.5) - T::one() / p), len / T::lit(2.0))
    };
    Ok(DeltaSuggestion { delta: T::lit(2.0) * c1 / (c_sobolev * c_poincare).powf(p), c_sobolev, c_poincare })
}
