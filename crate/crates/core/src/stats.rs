//! Small Monte Carlo summaries shared by the harnesses.

use serde::Serialize;

use crate::scalar::Real;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate<T> {
    pub mean: T,
    pub se: T,
    pub samples: usize,
}

impl<T: Real> Estimate<T> {
    pub fn exact(value: T) -> Self {
        Estimate { mean: value, se: T::zero(), samples: 1 }
    }

    /// `|a − b| ≤ k·sqrt(se_a² + se_b²)`
    pub fn agrees_with(&self, other: &Estimate<T>, k: T) -> bool {
        (self.mean - other.mean).abs() <= k * self.se.hypot(other.se)
    }
}

/// Sum after sorting, so the result does not depend on input order.
pub fn sorted_sum<T: Real>(values: &[T]) -> T {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.as_f64().total_cmp(&b.as_f64()));
    v.into_iter().sum()
}

/// Mean and standard error `s/√n`; the result is invariant under permutation of `values`.
pub fn mean_se<T: Real>(values: &[T]) -> Estimate<T> {
    let n = values.len();
    if n == 0 {
        return Estimate { mean: T::nan(), se: T::nan(), samples: 0 };
    }
    let nf = T::from_usize_lossy(n);
    let mean = sorted_sum(values) / nf;
    if n == 1 {
        return Estimate { mean, se: T::zero(), samples: 1 };
    }
    let dev: Vec<T> = values.iter().map(|&v| (v - mean) * (v - mean)).collect();
    let var = sorted_sum(&dev) / (nf - T::one());
    Estimate { mean, se: (var / nf).sqrt(), samples: n }
}

/// Mean with a batch-means standard error for a correlated series.
pub fn batch_means<T: Real>(series: &[T], batches: usize) -> Estimate<T> {
    let n = series.len();
    let batches = batches.max(2);
    if n < batches {
        return mean_se(series);
    }
    let len = n / batches;
    let means: Vec<T> = (0..batches)
        .map(|b| {
            let chunk = &series[b * len..(b + 1) * len];
            chunk.iter().copied().sum::<T>() / T::from_usize_lossy(len)
        })
        .collect();
    let all = series.iter().copied().sum::<T>() / T::from_usize_lossy(n);
    let e = mean_se(&means);
    Estimate { mean: all, se: e.se, samples: n }
}

/// Weighted least-squares slope of `y` against `x` with known standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrendTest {
    pub slope: f64,
    pub slope_se: f64,
    pub t_stat: f64,
    /// One-sided test at the 95% level.
    pub significant_increase: bool,
    pub significant_decrease: bool,
}

pub const Z_ONE_SIDED_95: f64 = 1.6448536269514722;

pub fn trend_test(x: &[f64], y: &[f64], se: &[f64]) -> TrendTest {
    let floor = se.iter().copied().filter(|s| *s > 0.0).fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor * 1e-6 } else { 1e-300 };
    let w: Vec<f64> = se.iter().map(|s| 1.0 / s.max(floor).powi(2)).collect();
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(&w).map(|(a, b)| b * (a - xm).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).zip(&w).map(|((a, c), b)| b * (a - xm) * (c - ym)).sum();
    let slope = sxy / sxx;
    let slope_se = (1.0 / sxx).sqrt();
    let t_stat = slope / slope_se;
    TrendTest {
        slope,
        slope_se,
        t_stat,
        significant_increase: t_stat > Z_ONE_SIDED_95,
        significant_decrease: t_stat < -Z_ONE_SIDED_95,
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Spearman rank correlation of `y` with its index, plus the one-sided p-value for a
/// negative association.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankTrend {
    pub rho: f64,
    pub p_decreasing: f64,
}

/// Exact permutation p-value for up to 8 points, normal approximation beyond.
pub fn spearman_trend(y: &[f64]) -> RankTrend {
    let n = y.len();
    let x: Vec<f64> = (1..=n).map(|i| i as f64).collect();
    let ry = ranks(y);
    let rho = pearson(&x, &ry);
    if n < 3 {
        return RankTrend { rho, p_decreasing: 1.0 };
    }
    let p_decreasing = if n <= 8 {
        let mut perm: Vec<f64> = ry.clone();
        perm.sort_by(f64::total_cmp);
        let (mut hits, mut total) = (0u64, 0u64);
        permute(&mut perm, 0, &mut |p| {
            total += 1;
            if pearson(&x, p) <= rho + 1e-12 {
                hits += 1;
            }
        });
        hits as f64 / total as f64
    } else {
        let z = rho * ((n - 1) as f64).sqrt();
        0.5 * erfc_approx(-z / std::f64::consts::SQRT_2)
    };
    RankTrend { rho, p_decreasing }
}

fn permute(v: &mut Vec<f64>, k: usize, f: &mut impl FnMut(&[f64])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

// Abramowitz-Stegun 7.1.26; absolute error below 1.5e-7
fn erfc_approx(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * z);
    let poly = t * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let r = poly * (-z * z).exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}
