//! Tridiagonal matrices: the only sparse structure a 1D P1 discretization needs.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Square tridiagonal matrix stored by diagonals. `lower[i]` sits at `(i+1, i)`,
/// `upper[i]` at `(i, i+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal<T> {
    pub lower: Vec<T>,
    pub diag: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Real> Tridiagonal<T> {
    pub fn zeros(n: usize) -> Self {
        let off = n.saturating_sub(1);
        Tridiagonal {
            lower: vec![T::zero(); off],
            diag: vec![T::zero(); n],
            upper: vec![T::zero(); off],
        }
    }

    /// Constant-band matrix `tridiag(off, main, off)`.
    pub fn symmetric_constant(n: usize, main: T, off: T) -> Self {
        let k = n.saturating_sub(1);
        Tridiagonal {
            lower: vec![off; k],
            diag: vec![main; n],
            upper: vec![off; k],
        }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let n = self.dim();
        assert_eq!(x.len(), n);
        (0..n)
            .map(|i| {
                let mut acc = self.diag[i] * x[i];
                if i > 0 {
                    acc += self.lower[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    acc += self.upper[i] * x[i + 1];
                }
                acc
            })
            .collect()
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: T, other: &Self) -> Self {
        let zip = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| x + alpha * y).collect();
        Tridiagonal {
            lower: zip(&self.lower, &other.lower),
            diag: zip(&self.diag, &other.diag),
            upper: zip(&self.upper, &other.upper),
        }
    }

    /// Solves `self · x = rhs` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, rhs: &[T]) -> Result<Vec<T>> {
        let n = self.dim();
        if rhs.len() != n {
            return Err(Error::Data(format!(
                "right-hand side has length {}, matrix is {n}x{n}",
                rhs.len()
            )));
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut dl = self.lower.clone();
        let mut d = self.diag.clone();
        let mut du = self.upper.clone();
        let mut b = rhs.to_vec();
        let singular = || Error::Numeric("singular tridiagonal system".into());

        for i in 0..n.saturating_sub(1) {
            if d[i].abs() >= dl[i].abs() {
                if d[i] == T::zero() {
                    return Err(singular());
                }
                let fact = dl[i] / d[i];
                d[i + 1] -= fact * du[i];
                b[i + 1] = b[i + 1] - fact * b[i];
                dl[i] = T::zero();
            } else {
                // swap rows i and i+1; dl[i] then stores the second superdiagonal
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                let temp = d[i + 1];
                d[i + 1] = du[i] - fact * temp;
                if i + 2 < n {
                    dl[i] = du[i + 1];
                    du[i + 1] = -fact * dl[i];
                } else {
                    dl[i] = T::zero();
                }
                du[i] = temp;
                let tb = b[i];
                b[i] = b[i + 1];
                b[i + 1] = tb - fact * b[i + 1];
            }
        }
        if d[n - 1] == T::zero() {
            return Err(singular());
        }
        b[n - 1] /= d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - du[i] * b[i + 1] - dl[i] * b[i + 2]) / d[i];
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite solution of tridiagonal system".into()));
        }
        Ok(b)
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm2<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Smallest eigenvalue of the symmetric-definite pencil `stiff · v = λ · mass · v`
/// by inverse iteration.
pub fn smallest_generalized_eigenvalue<T: Real>(
    stiff: &Tridiagonal<T>,
    mass: &Tridiagonal<T>,
    max_iter: usize,
) -> Result<T> {
    let n = stiff.dim();
    // start from a positive vector, which has a component along the ground state
    let mut v: Vec<T> = (0..n)
        .map(|i| {
            let s = T::from_usize_lossy(i + 1) / T::from_usize_lossy(n + 1);
            s * (T::one() - s)
        })
        .collect();
    let mut lambda = T::zero();
    for _ in 0..max_iter {
        let w = stiff.solve(&mass.matvec(&v))?;
        let scale = norm2(&w);
        v = w.into_iter().map(|x| x / scale).collect();
        let next = dot(&v, &stiff.matvec(&v)) / dot(&v, &mass.matvec(&v));
        if (next - lambda).abs() <= T::lit(1e-13) * next.abs() {
            return Ok(next);
        }
        lambda = next;
    }
    Ok(lambda)
}
