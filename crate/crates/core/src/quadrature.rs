//! Gauss-Legendre rules on the unit interval and a closed-form power integral for
//! linear interpolants.

use crate::scalar::Real;

/// Gauss-Legendre rule mapped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule<T> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Real> GaussRule<T> {
    /// `n`-point rule, exact for polynomials of degree `2n - 1`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss rule needs at least one node");
        let (x, w) = legendre_nodes(n);
        GaussRule {
            nodes: x.iter().map(|&v| T::lit(0.5 * (v + 1.0))).collect(),
            weights: w.iter().map(|&v| T::lit(0.5 * v)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (T, T)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    /// Integrates `f` over `[lo, hi]`.
    pub fn integrate(&self, lo: T, hi: T, mut f: impl FnMut(T) -> T) -> T {
        let len = hi - lo;
        self.iter().map(|(s, w)| w * f(lo + s * len)).sum::<T>() * len
    }
}

/// Nodes and weights on `[-1, 1]` by Newton iteration on the Legendre recurrence.
fn legendre_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                let jf = j as f64;
                p0 = ((2.0 * jf + 1.0) * z * p1 - jf * p2) / (jf + 1.0);
            }
            dp = nf * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// `∫_0^1 |(1-s)·a + s·b|^q ds` for `q >= 0`.
///
/// Uses the antiderivative on sign-definite pieces; falls back to an 8-point Gauss rule when
/// the endpoint magnitudes are too close for the difference quotient to be accurate.
pub fn linear_power_integral<T: Real>(a: T, b: T, q: T) -> T {
    if a == b {
        return a.abs().powf(q);
    }
    let zero = T::zero();
    if (a > zero && b < zero) || (a < zero && b > zero) {
        // split at the root s0 = a / (a - b)
        let s0 = a / (a - b);
        let q1 = q + T::one();
        return s0 * a.abs().powf(q) / q1 + (T::one() - s0) * b.abs().powf(q) / q1;
    }
    let (lo, hi) = {
        let (x, y) = (a.abs(), b.abs());
        if x < y { (x, y) } else { (y, x) }
    };
    if hi - lo > T::lit(1e-3) * hi {
        let q1 = q + T::one();
        (hi.powf(q1) - lo.powf(q1)) / (q1 * (hi - lo))
    } else {
        GaussRule::<T>::new(8).integrate(zero, T::one(), |s| (lo + s * (hi - lo)).powf(q))
    }
}
