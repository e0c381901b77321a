//! One-dimensional P1 finite elements on a uniform mesh with homogeneous Dirichlet boundary.
//!
//! Unknowns live on the `M` interior nodes `x_i = a + (i+1)·h`, `h = (b-a)/(M+1)`. Element `e`
//! (`0 ≤ e ≤ M`) spans `[x_{e-1}, x_e]` with the boundary values fixed to zero.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Tridiagonal;
use crate::model::ModelSpec;
use crate::quadrature::{linear_power_integral, GaussRule};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialMesh<T> {
    nodes: usize,
    left: T,
    right: T,
    h: T,
}

/// Builds a uniform mesh with `node_count` interior nodes on `(a, b)`.
pub fn build_mesh<T: Real>(node_count: usize, endpoints: (T, T)) -> Result<SpatialMesh<T>> {
    SpatialMesh::new(node_count, endpoints)
}

impl<T: Real> SpatialMesh<T> {
    pub fn new(node_count: usize, (a, b): (T, T)) -> Result<Self> {
        if node_count < 2 {
            return Err(Error::Config(format!(
                "mesh needs at least 2 interior nodes, got {node_count}"
            )));
        }
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::Config(format!("invalid domain endpoints ({a}, {b})")));
        }
        let h = (b - a) / T::from_usize_lossy(node_count + 1);
        Ok(SpatialMesh { nodes: node_count, left: a, right: b, h })
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn element_count(&self) -> usize {
        self.nodes + 1
    }

    pub fn h(&self) -> T {
        self.h
    }

    pub fn endpoints(&self) -> (T, T) {
        (self.left, self.right)
    }

    /// `|D| = b - a`.
    pub fn length(&self) -> T {
        self.right - self.left
    }

    /// Coordinate of interior node `i`.
    pub fn node(&self, i: usize) -> T {
        self.left + T::from_usize_lossy(i + 1) * self.h
    }

    /// Maps `x` to `(x - a)/(b - a) ∈ [0, 1]`.
    pub fn unit_coordinate(&self, x: T) -> T {
        (x - self.left) / self.length()
    }

    /// Left coordinate of element `e`.
    pub fn element_start(&self, e: usize) -> T {
        self.left + T::from_usize_lossy(e) * self.h
    }

    /// Endpoint values of element `e` for field `f`, zero on the boundary.
    #[inline]
    pub fn element_values(&self, f: &[T], e: usize) -> (T, T) {
        let l = if e == 0 { T::zero() } else { f[e - 1] };
        let r = if e == self.nodes { T::zero() } else { f[e] };
        (l, r)
    }

    /// Consistent P1 mass matrix `tridiag(h/6, 2h/3, h/6)`.
    pub fn mass_matrix(&self, kind: MassKind) -> Tridiagonal<T> {
        match kind {
            MassKind::Consistent => Tridiagonal::symmetric_constant(
                self.nodes,
                T::lit(4.0) * self.h / T::lit(6.0),
                self.h / T::lit(6.0),
            ),
            MassKind::Lumped => Tridiagonal::symmetric_constant(self.nodes, self.h, T::zero()),
        }
    }

    /// Stiffness matrix of `-u''`: `tridiag(-1/h, 2/h, -1/h)`.
    pub fn stiffness_matrix(&self) -> Tridiagonal<T> {
        Tridiagonal::symmetric_constant(self.nodes, T::lit(2.0) / self.h, -T::one() / self.h)
    }

    /// `(f, g)_{L²}` of the P1 interpolants (consistent mass).
    pub fn l2_inner(&self, f: &[T], g: &[T]) -> T {
        let n = self.nodes;
        let six = T::lit(6.0);
        let mut acc = T::zero();
        for i in 0..n {
            let mut row = T::lit(4.0) * f[i];
            if i > 0 {
                row += f[i - 1];
            }
            if i + 1 < n {
                row += f[i + 1];
            }
            acc += row * g[i];
        }
        acc * self.h / six
    }

    pub fn l2_norm_sq(&self, f: &[T]) -> T {
        self.l2_inner(f, f)
    }

    pub fn l2_norm(&self, f: &[T]) -> T {
        self.l2_norm_sq(f).max(T::zero()).sqrt()
    }

    /// `∫_D |f_h| dx` of the interpolant.
    pub fn l1_norm(&self, f: &[T]) -> T {
        (0..self.element_count())
            .map(|e| {
                let (l, r) = self.element_values(f, e);
                linear_power_integral(l, r, T::one())
            })
            .sum::<T>()
            * self.h
    }

    pub fn check_len(&self, f: &[T]) -> Result<()> {
        if f.len() == self.nodes {
            Ok(())
        } else {
            Err(Error::Data(format!(
                "field has {} values, mesh has {} interior nodes",
                f.len(),
                self.nodes
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MassKind {
    #[default]
    Consistent,
    Lumped,
}

/// Values of a P1 field at the interior nodes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodalField<T>(pub Vec<T>);

impl<T: Real> NodalField<T> {
    pub fn zeros(n: usize) -> Self {
        NodalField(vec![T::zero(); n])
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(mesh: &SpatialMesh<T>, mut f: impl FnMut(T) -> T) -> Self {
        NodalField((0..mesh.node_count()).map(|i| f(mesh.node(i))).collect())
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn scaled(&self, c: T) -> Self {
        NodalField(self.0.iter().map(|&v| c * v).collect())
    }

    pub fn add(&self, other: &[T]) -> Self {
        NodalField(self.0.iter().zip(other).map(|(&a, &b)| a + b).collect())
    }

    pub fn sub(&self, other: &[T]) -> Self {
        NodalField(self.0.iter().zip(other).map(|(&a, &b)| a - b).collect())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &[T]) {
        for (a, &b) in self.0.iter_mut().zip(other) {
            *a += alpha * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.0.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

impl<T> Deref for NodalField<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T> DerefMut for NodalField<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.0
    }
}

impl<T> From<Vec<T>> for NodalField<T> {
    fn from(v: Vec<T>) -> Self {
        NodalField(v)
    }
}

/// `‖f_h‖_{L^q}` of the P1 interpolant.
///
/// Even integer exponents use a Gauss rule that integrates `f_h^q` exactly; other exponents
/// integrate `|f_h|^q` in closed form on each sign-definite piece.
pub fn lq_norm<T: Real>(mesh: &SpatialMesh<T>, f: &[T], q: T) -> Result<T> {
    if !(q >= T::one()) || !q.is_finite() {
        return Err(Error::Domain(format!("L^q norm needs q ≥ 1, got {q}")));
    }
    mesh.check_len(f)?;
    let qf = q.as_f64();
    let even = qf.fract() == 0.0 && (qf as u64).is_multiple_of(2) && qf <= 64.0;
    let total: T = if even {
        let rule = GaussRule::<T>::new(qf as usize / 2 + 1);
        let qi = qf as i32;
        (0..mesh.element_count())
            .map(|e| {
                let (l, r) = mesh.element_values(f, e);
                rule.iter()
                    .map(|(s, w)| w * (l + s * (r - l)).powi(qi))
                    .sum::<T>()
            })
            .sum()
    } else {
        (0..mesh.element_count())
            .map(|e| {
                let (l, r) = mesh.element_values(f, e);
                linear_power_integral(l, r, q)
            })
            .sum()
    };
    Ok((total * mesh.h()).powf(T::one() / q))
}

/// `‖∇f_h‖_{L^p}^p = Σ_e h·|slope_e|^p`.
pub fn grad_lp_norm<T: Real>(mesh: &SpatialMesh<T>, f: &[T], p: T) -> Result<T> {
    if !(p > T::one()) {
        return Err(Error::Domain(format!("gradient norm needs p > 1, got {p}")));
    }
    mesh.check_len(f)?;
    let h = mesh.h();
    Ok((0..mesh.element_count())
        .map(|e| {
            let (l, r) = mesh.element_values(f, e);
            ((r - l) / h).abs().powf(p)
        })
        .sum::<T>()
        * h)
}

/// Which parts of `A + F` to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluxParts {
    Full,
    DiffusionOnly,
    ConvectionOnly,
}

impl FluxParts {
    fn diffusion(self) -> bool {
        !matches!(self, FluxParts::ConvectionOnly)
    }
    fn convection(self) -> bool {
        !matches!(self, FluxParts::DiffusionOnly)
    }
}

/// Element integrals `Q_e = ∫_e (A(x, f_h, f_h') + F(f_h)) dx` by 3-point Gauss.
fn element_fluxes<T: Real>(model: &ModelSpec<T>, f: &[T], parts: FluxParts) -> Vec<T> {
    let mesh = &model.mesh;
    let h = mesh.h();
    (0..mesh.element_count())
        .map(|e| {
            let (l, r) = mesh.element_values(f, e);
            let slope = (r - l) / h;
            let x0 = mesh.element_start(e);
            model
                .quad
                .iter()
                .map(|(s, w)| {
                    let u = l + s * (r - l);
                    let y = mesh.unit_coordinate(x0 + s * h);
                    let mut v = T::zero();
                    if parts.diffusion() {
                        v += model.flux.eval(y, u, slope);
                    }
                    if parts.convection() {
                        v += model.convection.eval(u);
                    }
                    w * v
                })
                .sum::<T>()
                * h
        })
        .collect()
}

/// Weak flux vector with entries `∫_D (A(x,f,∇f) + F(f))·φ_i' dx`.
pub fn assemble_weak_flux<T: Real>(model: &ModelSpec<T>, f: &[T]) -> Result<NodalField<T>> {
    assemble_flux_parts(model, f, FluxParts::Full)
}

pub fn assemble_flux_parts<T: Real>(
    model: &ModelSpec<T>,
    f: &[T],
    parts: FluxParts,
) -> Result<NodalField<T>> {
    model.mesh.check_len(f)?;
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite field passed to flux assembly".into()));
    }
    let q = element_fluxes(model, f, parts);
    let h = model.mesh.h();
    let out: Vec<T> = (0..model.mesh.node_count()).map(|i| (q[i] - q[i + 1]) / h).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("flux assembly produced non-finite values".into()));
    }
    Ok(NodalField(out))
}

/// `⟨assemble_weak_flux(f), f⟩ = ∫_D (A + F)·∇f_h dx`, summed element-wise.
pub fn flux_pairing<T: Real>(model: &ModelSpec<T>, f: &[T]) -> T {
    let q = element_fluxes(model, f, FluxParts::Full);
    let h = model.mesh.h();
    q.iter()
        .enumerate()
        .map(|(e, &qe)| {
            let (l, r) = model.mesh.element_values(f, e);
            qe * (r - l) / h
        })
        .sum()
}

/// Jacobian of [`assemble_weak_flux`] with respect to the nodal values.
pub fn assemble_flux_jacobian<T: Real>(model: &ModelSpec<T>, f: &[T]) -> Tridiagonal<T> {
    let mesh = &model.mesh;
    let h = mesh.h();
    let n = mesh.node_count();
    // d Q_e / d u_left, d Q_e / d u_right
    let dq: Vec<(T, T)> = (0..mesh.element_count())
        .map(|e| {
            let (l, r) = mesh.element_values(f, e);
            let slope = (r - l) / h;
            let x0 = mesh.element_start(e);
            let (mut dl, mut dr) = (T::zero(), T::zero());
            for (s, w) in model.quad.iter() {
                let u = l + s * (r - l);
                let y = mesh.unit_coordinate(x0 + s * h);
                let dz = model.flux.d_zeta(y, u, slope);
                let dv = model.flux.d_lambda(y, u, slope) + model.convection.derivative(u);
                dl += w * (dv * (T::one() - s) - dz / h);
                dr += w * (dv * s + dz / h);
            }
            (dl * h, dr * h)
        })
        .collect();
    let mut jac = Tridiagonal::zeros(n);
    for i in 0..n {
        jac.diag[i] = (dq[i].1 - dq[i + 1].0) / h;
        if i > 0 {
            jac.lower[i - 1] = dq[i].0 / h;
        }
        if i + 1 < n {
            jac.upper[i] = -dq[i + 1].1 / h;
        }
    }
    jac
}

/// Linearization with the diffusion coefficient frozen at `f`:
/// `∫ c(x,f)(ε² + |f'|²)^{(p-2)/2} φ_j' φ_i' dx`. Used by the Picard iteration.
pub fn frozen_diffusion_matrix<T: Real>(model: &ModelSpec<T>, f: &[T]) -> Tridiagonal<T> {
    let mesh = &model.mesh;
    let h = mesh.h();
    let n = mesh.node_count();
    let coef: Vec<T> = (0..mesh.element_count())
        .map(|e| {
            let (l, r) = mesh.element_values(f, e);
            let slope = (r - l) / h;
            let x0 = mesh.element_start(e);
            model
                .quad
                .iter()
                .map(|(s, w)| {
                    let u = l + s * (r - l);
                    let y = mesh.unit_coordinate(x0 + s * h);
                    w * model.flux.secant_coefficient(y, u, slope)
                })
                .sum::<T>()
                / h
        })
        .collect();
    let mut m = Tridiagonal::zeros(n);
    for i in 0..n {
        m.diag[i] = coef[i] + coef[i + 1];
        if i > 0 {
            m.lower[i - 1] = -coef[i];
        }
        if i + 1 < n {
            m.upper[i] = -coef[i + 1];
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::oracle_model;

    #[test]
    fn mesh_width_and_errors() {
        let m = build_mesh(3, (0.0, 1.0)).unwrap();
        assert_eq!(m.h(), 0.25);
        assert_eq!(build_mesh(63, (0.0, 1.0)).unwrap().h(), 1.0 / 64.0);
        assert!(matches!(build_mesh(1, (0.0, 1.0)), Err(Error::Config(_))));
        assert!(matches!(build_mesh(4, (1.0, 1.0)), Err(Error::Config(_))));
        assert!(matches!(build_mesh(4, (0.0, f64::NAN)), Err(Error::Config(_))));
    }

    #[test]
    fn lq_norm_rejects_small_exponent() {
        let m = build_mesh(4, (0.0, 1.0)).unwrap();
        let f = NodalField::zeros(4);
        assert!(matches!(lq_norm(&m, &f, 0.5), Err(Error::Domain(_))));
        assert_eq!(lq_norm(&m, &f, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn hat_function_gradient_norm() {
        // the hat 1 - 2|x - 1/2| is resolved exactly on any mesh with a node at 1/2
        for m in [3usize, 7, 15] {
            let mesh = build_mesh(m, (0.0, 1.0)).unwrap();
            let f = NodalField::interpolate(&mesh, |x: f64| 1.0 - 2.0 * (x - 0.5).abs());
            let v = grad_lp_norm(&mesh, &f, 3.0).unwrap();
            assert!((v - 8.0).abs() < 1e-12, "m={m}: {v}");
        }
    }

    #[test]
    fn gradient_norm_is_p_homogeneous() {
        let mesh = build_mesh(10, (0.0, 1.0)).unwrap();
        let f = NodalField::interpolate(&mesh, |x: f64| (3.0 * x).sin() * x);
        let base = grad_lp_norm(&mesh, &f, 3.5).unwrap();
        let scaled = grad_lp_norm(&mesh, &f.scaled(-1.7), 3.5).unwrap();
        assert!((scaled - 1.7f64.powf(3.5) * base).abs() < 1e-12 * scaled);
        assert_eq!(grad_lp_norm(&mesh, &NodalField::zeros(10), 3.0).unwrap(), 0.0);
    }

    #[test]
    fn lumped_mass_is_diagonal() {
        let m = build_mesh(5, (0.0f64, 2.0)).unwrap();
        let l = m.mass_matrix(MassKind::Lumped);
        assert!(l.upper.iter().all(|&v| v == 0.0));
        assert!(l.diag.iter().all(|&v| (v - m.h()).abs() < 1e-15));
    }

    #[test]
    fn frozen_matrix_matches_stiffness_for_linear_flux() {
        let model = oracle_model(9);
        let f: Vec<f64> = (0..9).map(|i| (i as f64 * 0.7).sin()).collect();
        let a = frozen_diffusion_matrix(&model, &f);
        let k = model.mesh.stiffness_matrix();
        for (x, y) in a.diag.iter().zip(&k.diag) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
