//! Long-run averages of the uncontrolled equation: empirical occupation measures, bounded test
//! functionals, exceedance profiles and the weak-Feller probe.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{NodalField, SpatialMesh};
use crate::model::{chg_constant, derived_constants, ModelSpec};
use crate::noise::RngPolicy;
use crate::scalar::Real;
use crate::scheme::{run_streaming, SchemeConfig};
use crate::stats::{batch_means, mean_se, spearman_trend, Estimate, RankTrend};

/// Thinned snapshots of one long trajectory with `U ≡ 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalMeasure<T> {
    pub snapshots: Vec<NodalField<T>>,
    pub times: Vec<T>,
    pub burn_in: usize,
    pub stride: usize,
    pub kappa: T,
    /// `‖u‖_{L²}` of every snapshot.
    pub norms: Vec<T>,
    /// `‖û_{burn_in}‖²`, the state the averaging window starts from.
    pub window_start_norm_sq: T,
    /// Set when the trajectory stopped early; holds the failure description.
    pub failure: Option<String>,
}

impl<T: Real> EmpiricalMeasure<T> {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn is_partial(&self) -> bool {
        self.failure.is_some()
    }

    /// Length of the averaging window actually covered.
    pub fn window(&self) -> T {
        T::from_usize_lossy(self.stride * self.snapshots.len()) * self.kappa
    }
}

/// Snapshots at steps `burn_in + stride·j`, `j = 1 … ⌊(N − burn_in)/stride⌋`.
pub fn time_average_measure<T: Real>(
    model: &ModelSpec<T>,
    cfg_long: &SchemeConfig<T>,
    rng: &RngPolicy,
    path: u64,
    burn_in: usize,
    stride: usize,
) -> Result<EmpiricalMeasure<T>> {
    if stride == 0 || burn_in >= cfg_long.steps {
        return Err(Error::Config(format!(
            "need stride ≥ 1 and burn-in below {} steps, got stride {stride}, burn-in {burn_in}",
            cfg_long.steps
        )));
    }
    let count = (cfg_long.steps - burn_in) / stride;
    let mesh = &model.mesh;
    let mut snapshots = Vec::with_capacity(count);
    let mut times = Vec::with_capacity(count);
    let mut norms = Vec::with_capacity(count);
    let mut window_start_norm_sq = T::zero();
    let result = run_streaming(model, cfg_long, None, rng, path, |k, u| {
        if k == burn_in {
            window_start_norm_sq = mesh.l2_norm_sq(u);
        }
        if k > burn_in && (k - burn_in).is_multiple_of(stride) && snapshots.len() < count {
            snapshots.push(u.clone());
            times.push(cfg_long.time(k));
            norms.push(mesh.l2_norm(u));
        }
    });
    let failure = match result {
        Ok(_) => None,
        Err(e) if e.is_solver_failure() => Some(e.to_string()),
        Err(e) => return Err(e),
    };
    Ok(EmpiricalMeasure {
        snapshots,
        times,
        burn_in,
        stride,
        kappa: cfg_long.kappa(),
        norms,
        window_start_norm_sq,
        failure,
    })
}

/// Bounded, weakly sequentially continuous functionals on `L²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound(deserialize = "T: Real + Deserialize<'de>"))]
pub enum TestFunctional<T> {
    /// `exp(−c‖u‖²)`
    Exponential { c: T },
    /// `tanh((u, w))`
    Tanh { weight: NodalField<T> },
}

impl<T: Real> TestFunctional<T> {
    pub fn eval(&self, mesh: &SpatialMesh<T>, u: &[T]) -> T {
        match self {
            TestFunctional::Exponential { c } => (-*c * mesh.l2_norm_sq(u)).exp(),
            TestFunctional::Tanh { weight } => mesh.l2_inner(u, weight).tanh(),
        }
    }

    pub fn validate(&self, nodes: usize) -> Result<()> {
        match self {
            TestFunctional::Exponential { c } if !(*c >= T::zero()) => {
                Err(Error::Config(format!("exponential test functional needs c ≥ 0, got {c}")))
            }
            TestFunctional::Tanh { weight } if weight.len() != nodes => {
                Err(Error::Data("test functional weight has the wrong length".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalAverage<T> {
    /// `A_m = (1/m)Σ_{i≤m} φ(u_i)`
    pub prefix: Vec<T>,
    /// `max_{m ≥ m₀} |A_m − A_last|` with `m₀` at half the sample.
    pub cauchy_gap: T,
    /// Final average with a batch-means standard error.
    pub estimate: Estimate<T>,
}

pub fn test_function_average<T: Real>(
    measure: &EmpiricalMeasure<T>,
    phi: &TestFunctional<T>,
    mesh: &SpatialMesh<T>,
) -> Result<FunctionalAverage<T>> {
    if measure.len() < 2 {
        return Err(Error::Data("test function average needs at least two snapshots".into()));
    }
    phi.validate(mesh.node_count())?;
    let values: Vec<T> = measure.snapshots.iter().map(|u| phi.eval(mesh, u)).collect();
    let mut prefix = Vec::with_capacity(values.len());
    let mut acc = T::zero();
    for (i, &v) in values.iter().enumerate() {
        acc += v;
        prefix.push(acc / T::from_usize_lossy(i + 1));
    }
    let last = *prefix.last().unwrap_or(&T::zero());
    let m0 = values.len().div_ceil(2);
    let cauchy_gap = prefix[m0 - 1..].iter().map(|&a| (a - last).abs()).fold(T::zero(), T::max);
    let mut estimate = batch_means(&values, 20);
    estimate.mean = last;
    Ok(FunctionalAverage { prefix, cauchy_gap, estimate })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundednessRow<T> {
    pub radius: T,
    /// `#{‖u‖ > R} / #snapshots`
    pub fraction: T,
    pub se: T,
    /// `(2‖K₁‖ + C_hg + ‖u_start‖²/T)/(R^p δ)`, when δ was supplied.
    pub bound: Option<T>,
}

/// Exceedance fractions of the snapshot norms.
pub fn boundedness_profile<T: Real>(
    measure: &EmpiricalMeasure<T>,
    radii: &[T],
    model: &ModelSpec<T>,
    delta: Option<T>,
) -> Result<Vec<BoundednessRow<T>>> {
    if measure.is_empty() {
        return Err(Error::Data("empty measure".into()));
    }
    if radii.iter().any(|r| !(*r >= T::zero())) || radii.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("radii must be non-negative and increasing".into()));
    }
    if let Some(d) = delta {
        if !(d > T::zero()) {
            return Err(Error::Config(format!("δ must be positive, got {d}")));
        }
    }
    let n = T::from_usize_lossy(measure.len());
    let k1 = derived_constants(model).k1 * model.mesh.length();
    let chg = chg_constant(model);
    let window = measure.window();
    let p = model.flux.p;
    Ok(radii
        .iter()
        .map(|&r| {
            let ind: Vec<T> = measure.norms.iter().map(|&x| if x > r { T::one() } else { T::zero() }).collect();
            let count = ind.iter().copied().sum::<T>();
            let se = batch_means(&ind, 20).se;
            let bound = delta.map(|d| {
                (T::lit(2.0) * k1 + chg + measure.window_start_norm_sq / window) / (r.powf(p) * d)
            });
            BoundednessRow { radius: r, fraction: count / n, se, bound }
        })
        .collect())
}

/// `v_n = v + amp·sin(k_n π y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct OscillatingSequence<T> {
    pub base: NodalField<T>,
    pub amplitude: T,
    pub frequencies: Vec<usize>,
}

impl<T: Real> OscillatingSequence<T> {
    /// Frequencies `1, 2, 4, …, 2^{levels−1}`.
    pub fn doubling(base: NodalField<T>, amplitude: T, levels: usize) -> Self {
        OscillatingSequence { base, amplitude, frequencies: (0..levels).map(|i| 1usize << i).collect() }
    }

    pub fn member(&self, mesh: &SpatialMesh<T>, n: usize) -> NodalField<T> {
        let k = T::from_usize_lossy(self.frequencies[n]);
        let osc = NodalField::interpolate(mesh, |x| (T::PI() * k * mesh.unit_coordinate(x)).sin());
        let mut v = self.base.clone();
        v.axpy(self.amplitude, &osc);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakFellerReport<T> {
    pub frequencies: Vec<usize>,
    pub base_value: Estimate<T>,
    pub values: Vec<Estimate<T>>,
    /// `|(P_tφ)(v_n) − (P_tφ)(v)|` from paired paths.
    pub differences: Vec<T>,
    pub difference_se: Vec<T>,
    pub trend: RankTrend,
    pub significant_decrease: bool,
    pub failed_paths: usize,
}

/// Monte Carlo `(P_Tφ)(v_n)` with every initial datum driven by the same noise paths.
pub fn weak_feller_probe<T: Real>(
    model: &ModelSpec<T>,
    cfg: &SchemeConfig<T>,
    rng: &RngPolicy,
    phi: &TestFunctional<T>,
    sequence: &OscillatingSequence<T>,
    paths: usize,
) -> Result<WeakFellerReport<T>> {
    let mesh = &model.mesh;
    phi.validate(mesh.node_count())?;
    mesh.check_len(&sequence.base)?;
    if paths < 2 {
        return Err(Error::Config("weak-Feller probe needs at least two paths".into()));
    }
    let levels = sequence.frequencies.len();
    let mut models = vec![model.with_initial(sequence.base.clone())?];
    for n in 0..levels {
        models.push(model.with_initial(sequence.member(mesh, n))?);
    }
    let runs: Vec<Result<Vec<T>>> = (0..paths as u64)
        .into_par_iter()
        .map(|path| {
            models
                .iter()
                .map(|m| run_streaming(m, cfg, None, rng, path, |_, _| {}).map(|u| phi.eval(mesh, &u)))
                .collect()
        })
        .collect();
    let mut rows = Vec::with_capacity(paths);
    let mut failed_paths = 0;
    for r in runs {
        match r {
            Ok(v) => rows.push(v),
            Err(e) if e.is_solver_failure() => failed_paths += 1,
            Err(e) => return Err(e),
        }
    }
    let column = |j: usize| -> Vec<T> { rows.iter().map(|r| r[j]).collect() };
    let base_value = mean_se(&column(0));
    let mut values = Vec::with_capacity(levels);
    let mut differences = Vec::with_capacity(levels);
    let mut difference_se = Vec::with_capacity(levels);
    for n in 0..levels {
        values.push(mean_se(&column(n + 1)));
        let paired: Vec<T> = rows.iter().map(|r| r[n + 1] - r[0]).collect();
        let e = mean_se(&paired);
        differences.push(e.mean.abs());
        difference_se.push(e.se);
    }
    let trend = spearman_trend(&differences.iter().map(|d| d.as_f64()).collect::<Vec<_>>());
    Ok(WeakFellerReport {
        frequencies: sequence.frequencies.clone(),
        base_value,
        values,
        differences,
        difference_se,
        significant_decrease: trend.rho < 0.0 && trend.p_decreasing < 0.05,
        trend,
        failed_paths,
    })
}
