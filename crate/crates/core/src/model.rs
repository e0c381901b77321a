//! Parametric coefficient families for the drift, convection, Wiener and jump terms, together
//! with sampled checks of the structural assumptions they must satisfy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{NodalField, SpatialMesh};
use crate::quadrature::GaussRule;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxFamily {
    /// `A = c(x,λ)(ε² + |ζ|²)^{(p-2)/2} ζ`.
    #[default]
    PLaplace,
    /// Sign-flipped flux; violates monotonicity. Only for exercising the validator.
    Reversed,
}

/// `A(x,λ,ζ) = c(x,λ)·(ε_reg² + |ζ|²)^{(p-2)/2}·ζ` with
/// `c(x,λ) = c₀ + c_x·(1 + sin 2πy)/2 + c_λ·(1 + tanh λ)/2`, `y = (x-a)/|D|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct FluxModel<T> {
    pub family: FluxFamily,
    pub p: T,
    pub coeff_base: T,
    pub coeff_space: T,
    pub coeff_state: T,
    pub eps_reg: T,
}

impl<T: Real> Default for FluxModel<T> {
    fn default() -> Self {
        FluxModel {
            family: FluxFamily::PLaplace,
            p: T::lit(4.0),
            coeff_base: T::one(),
            coeff_space: T::zero(),
            coeff_state: T::zero(),
            eps_reg: T::lit(1e-8),
        }
    }
}

impl<T: Real> FluxModel<T> {
    /// The linear oracle `A(ζ) = ζ`.
    pub fn linear() -> Self {
        FluxModel { p: T::lit(2.0), eps_reg: T::zero(), ..Self::default() }
    }

    fn sign(&self) -> T {
        match self.family {
            FluxFamily::PLaplace => T::one(),
            FluxFamily::Reversed => -T::one(),
        }
    }

    pub fn coefficient(&self, y: T, lambda: T) -> T {
        let half = T::lit(0.5);
        let two_pi = T::lit(2.0) * T::PI();
        self.coeff_base
            + self.coeff_space * half * (T::one() + (two_pi * y).sin())
            + self.coeff_state * half * (T::one() + lambda.tanh())
    }

    fn d_coefficient(&self, lambda: T) -> T {
        let t = lambda.tanh();
        self.coeff_state * T::lit(0.5) * (T::one() - t * t)
    }

    /// `(ε² + ζ²)^{(p-2)/2}`.
    #[inline]
    fn modulus(&self, zeta: T) -> T {
        let e = self.eps_reg;
        let r = (self.p - T::lit(2.0)) * T::lit(0.5);
        if r == T::zero() {
            T::one()
        } else {
            (e * e + zeta * zeta).powf(r)
        }
    }

    pub fn eval(&self, y: T, lambda: T, zeta: T) -> T {
        self.sign() * self.coefficient(y, lambda) * self.modulus(zeta) * zeta
    }

    pub fn d_zeta(&self, y: T, lambda: T, zeta: T) -> T {
        let e2 = self.eps_reg * self.eps_reg;
        let two = T::lit(2.0);
        let r = (self.p - T::lit(4.0)) / two;
        let s = e2 + zeta * zeta;
        let core = if self.p == two {
            T::one()
        } else if s == T::zero() {
            T::zero()
        } else {
            s.powf(r) * (e2 + (self.p - T::one()) * zeta * zeta)
        };
        self.sign() * self.coefficient(y, lambda) * core
    }

    pub fn d_lambda(&self, _y: T, lambda: T, zeta: T) -> T {
        self.sign() * self.d_coefficient(lambda) * self.modulus(zeta) * zeta
    }

    /// `A(x,λ,ζ)/ζ`, the frozen diffusivity of the Picard iteration.
    pub fn secant_coefficient(&self, y: T, lambda: T, zeta: T) -> T {
        self.sign() * self.coefficient(y, lambda) * self.modulus(zeta)
    }

    pub fn coeff_min(&self) -> T {
        self.coeff_base
    }

    pub fn coeff_max(&self) -> T {
        self.coeff_base + self.coeff_space + self.coeff_state
    }

    /// `max(1, 2^{(p-4)/2})`, from `(a+b)^r ≤ max(1, 2^{r-1})(a^r + b^r)`.
    fn split_factor(&self) -> T {
        let r = (self.p - T::lit(2.0)) * T::lit(0.5);
        T::one().max(T::lit(2.0).powf(r - T::one()))
    }

    fn eps_power(&self) -> T {
        if self.eps_reg == T::zero() {
            T::zero()
        } else {
            self.eps_reg.powf(self.p - T::lit(2.0))
        }
    }

    /// `(C₂, K₂)` with `|A| ≤ C₂|ζ|^{p-1} + K₂`.
    pub fn growth_constants(&self) -> (T, T) {
        let cmax = self.coeff_max();
        if self.p == T::lit(2.0) || self.eps_power() == T::zero() {
            return (cmax, T::zero());
        }
        let k = self.split_factor();
        let ep = self.eps_power();
        (cmax * k * (T::one() + ep), cmax * k * ep)
    }

    /// `(C₄, K₃)` with `|A(λ₁) - A(λ₂)| ≤ (C₄|ζ|^{p-1} + K₃)|λ₁ - λ₂|`.
    pub fn state_lipschitz_constants(&self) -> (T, T) {
        let lip = self.coeff_state * T::lit(0.5);
        if self.p == T::lit(2.0) || self.eps_power() == T::zero() {
            return (lip, T::zero());
        }
        let k = self.split_factor();
        let ep = self.eps_power();
        (lip * k * (T::one() + ep), lip * k * ep)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvectionMode {
    #[default]
    Linear,
    Saturated,
}

/// `F(u) = b·u` or `F(u) = b·s·tanh(u/s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct ConvectionModel<T> {
    pub mode: ConvectionMode,
    pub velocity: T,
    pub saturation: T,
}

impl<T: Real> Default for ConvectionModel<T> {
    fn default() -> Self {
        ConvectionModel { mode: ConvectionMode::Linear, velocity: T::lit(0.5), saturation: T::one() }
    }
}

impl<T: Real> ConvectionModel<T> {
    pub fn none() -> Self {
        ConvectionModel { velocity: T::zero(), ..Self::default() }
    }

    pub fn eval(&self, u: T) -> T {
        match self.mode {
            ConvectionMode::Linear => self.velocity * u,
            ConvectionMode::Saturated => self.velocity * self.saturation * (u / self.saturation).tanh(),
        }
    }

    pub fn derivative(&self, u: T) -> T {
        match self.mode {
            ConvectionMode::Linear => self.velocity,
            ConvectionMode::Saturated => {
                let t = (u / self.saturation).tanh();
                self.velocity * (T::one() - t * t)
            }
        }
    }

    pub fn lipschitz(&self) -> T {
        self.velocity.abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionVariant {
    /// `h_n(ξ) = σ·ξ·n^{-(1+a)}`
    #[default]
    Linear,
    /// `h_n(ξ) = σ·n^{-(1+a)}·sin ξ`
    Bounded,
}

/// Mode-wise multiplicative Wiener coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct WienerDiffusionModel<T> {
    pub modes: usize,
    pub sigma: T,
    pub decay: T,
    pub variant: DiffusionVariant,
}

impl<T: Real> Default for WienerDiffusionModel<T> {
    fn default() -> Self {
        WienerDiffusionModel { modes: 32, sigma: T::lit(0.5), decay: T::lit(0.5), variant: DiffusionVariant::Linear }
    }
}

impl<T: Real> WienerDiffusionModel<T> {
    pub fn off() -> Self {
        WienerDiffusionModel { sigma: T::zero(), ..Self::default() }
    }

    /// `σ·n^{-(1+a)}` for mode `n ≥ 1`.
    pub fn mode_weight(&self, n: usize) -> T {
        self.sigma * T::from_usize_lossy(n).powf(-(T::one() + self.decay))
    }

    pub fn mode_weights(&self) -> Vec<T> {
        (1..=self.modes).map(|n| self.mode_weight(n)).collect()
    }

    pub fn shape(&self, xi: T) -> T {
        match self.variant {
            DiffusionVariant::Linear => xi,
            DiffusionVariant::Bounded => xi.sin(),
        }
    }

    pub fn h_n(&self, n: usize, xi: T) -> T {
        self.mode_weight(n) * self.shape(xi)
    }

    /// `Σ_n |h_n(ξ)|²`.
    pub fn sum_sq(&self, xi: T) -> T {
        let s = self.shape(xi);
        self.c5() * s * s
    }

    /// `C₅ = σ²·Σ_{n ≤ N} n^{-2-2a}`; also the Lipschitz constant `L_σ`.
    pub fn c5(&self) -> T {
        (1..=self.modes).map(|n| self.mode_weight(n).powi(2)).sum()
    }

    /// Integral bound `σ²·N^{-1-2a}/(1+2a)` on the discarded modes.
    pub fn tail_bound(&self) -> T {
        let e = T::one() + T::lit(2.0) * self.decay;
        self.sigma * self.sigma * T::from_usize_lossy(self.modes).powf(-e) / e
    }

    pub fn is_active(&self) -> bool {
        self.sigma != T::zero() && self.modes > 0
    }
}

/// Jump-size law of the compound Poisson variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum JumpDensity {
    Normal { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
}

impl JumpDensity {
    pub fn pdf(&self, z: f64) -> f64 {
        match *self {
            JumpDensity::Normal { mean, std } => {
                let t = (z - mean) / std;
                (-0.5 * t * t).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
            }
            JumpDensity::Uniform { low, high } => {
                if (low..=high).contains(&z) {
                    1.0 / (high - low)
                } else {
                    0.0
                }
            }
        }
    }

    fn support(&self) -> (f64, f64) {
        match *self {
            JumpDensity::Normal { mean, std } => (mean - 14.0 * std, mean + 14.0 * std),
            JumpDensity::Uniform { low, high } => (low, high),
        }
    }

    fn scale(&self) -> f64 {
        match *self {
            JumpDensity::Normal { std, .. } => std,
            JumpDensity::Uniform { low, high } => high - low,
        }
    }
}

/// One-dimensional Lévy measure `μ` on `ℝ* = ℝ \ {0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LevyMeasureSpec {
    /// `μ(dz) = ρ·q(z) dz`.
    CompoundPoisson { rate: f64, density: JumpDensity },
    /// `μ(dz) = c·e^{-β|z|}|z|^{-1-α} dz` restricted to `|z| ≥ ε_jump`.
    TemperedTruncated { alpha: f64, beta: f64, scale: f64, cutoff: f64 },
}

impl Default for LevyMeasureSpec {
    fn default() -> Self {
        LevyMeasureSpec::CompoundPoisson {
            rate: 2.0,
            density: JumpDensity::Normal { mean: 0.0, std: 0.5 },
        }
    }
}

/// `γ(z) = min(1, |z|)`.
#[inline]
pub fn jump_weight<T: Real>(z: T) -> T {
    z.abs().min(T::one())
}

impl LevyMeasureSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match *self {
            LevyMeasureSpec::CompoundPoisson { rate, density } => {
                if !(rate >= 0.0 && rate.is_finite()) {
                    return bad(format!("jump rate must be finite and non-negative, got {rate}"));
                }
                match density {
                    JumpDensity::Normal { mean, std } if !(std > 0.0 && mean.is_finite() && std.is_finite()) => {
                        bad(format!("normal jump law needs std > 0, got {std}"))
                    }
                    JumpDensity::Uniform { low, high } if !(low < high && low.is_finite() && high.is_finite()) => {
                        bad(format!("uniform jump law needs low < high, got ({low}, {high})"))
                    }
                    _ => Ok(()),
                }
            }
            LevyMeasureSpec::TemperedTruncated { alpha, beta, scale, cutoff } => {
                if !(alpha > 0.0 && alpha < 2.0) {
                    return bad(format!("stability index must lie in (0,2), got {alpha}"));
                }
                if !(beta > 0.0 && beta.is_finite()) {
                    return bad(format!("tempering rate must be positive, got {beta}"));
                }
                if !(scale >= 0.0 && scale.is_finite()) {
                    return bad(format!("measure scale must be non-negative, got {scale}"));
                }
                if !(cutoff > 0.0 && cutoff.is_finite()) {
                    return bad(format!("small-jump cutoff must be positive, got {cutoff}"));
                }
                Ok(())
            }
        }
    }

    /// Density of `μ` with respect to Lebesgue measure (zero inside the truncation).
    pub fn density(&self, z: f64) -> f64 {
        match *self {
            LevyMeasureSpec::CompoundPoisson { rate, density } => {
                if z == 0.0 {
                    0.0
                } else {
                    rate * density.pdf(z)
                }
            }
            LevyMeasureSpec::TemperedTruncated { alpha, beta, scale, cutoff } => {
                let a = z.abs();
                if a < cutoff {
                    0.0
                } else {
                    scale * (-beta * a).exp() * a.powf(-1.0 - alpha)
                }
            }
        }
    }

    /// Builds the cached node/weight rule for integrals against `μ`.
    pub fn quadrature<T: Real>(&self) -> Result<JumpQuadrature<T>> {
        self.validate()?;
        let rule = GaussRule::<f64>::new(10);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let push_panel = |lo: f64, hi: f64, nodes: &mut Vec<f64>, weights: &mut Vec<f64>| {
            let len = hi - lo;
            for (s, w) in rule.iter() {
                let z = lo + s * len;
                let wt = w * len * self.density(z);
                if wt != 0.0 {
                    nodes.push(z);
                    weights.push(wt);
                }
            }
        };
        let mut truncated_c_gamma = 0.0;
        match *self {
            LevyMeasureSpec::CompoundPoisson { rate, density } => {
                if rate > 0.0 {
                    let (lo, hi) = density.support();
                    let width = 0.25 * density.scale();
                    let mut edges = vec![lo, hi];
                    edges.extend([-1.0, 0.0, 1.0].into_iter().filter(|&b| b > lo && b < hi));
                    edges.sort_by(f64::total_cmp);
                    for pair in edges.windows(2) {
                        let (a, b) = (pair[0], pair[1]);
                        let k = ((b - a) / width).ceil().max(1.0) as usize;
                        for j in 0..k {
                            let p0 = a + (b - a) * j as f64 / k as f64;
                            let p1 = a + (b - a) * (j + 1) as f64 / k as f64;
                            push_panel(p0, p1, &mut nodes, &mut weights);
                        }
                    }
                }
            }
            LevyMeasureSpec::TemperedTruncated { alpha, beta, scale, cutoff } => {
                let mut edges = vec![cutoff];
                let mut e = cutoff;
                while e * 2.0 < 1.0 {
                    e *= 2.0;
                    edges.push(e);
                }
                let top = cutoff.max(1.0) + 45.0 / beta;
                let start = *edges.last().unwrap();
                if start < 1.0 {
                    edges.push(1.0);
                }
                let base = *edges.last().unwrap();
                let width = (0.5 / beta).min(0.5);
                let k = ((top - base) / width).ceil() as usize;
                for j in 1..=k {
                    edges.push(base + (top - base) * j as f64 / k as f64);
                }
                for pair in edges.windows(2) {
                    push_panel(pair[0], pair[1], &mut nodes, &mut weights);
                    push_panel(-pair[1], -pair[0], &mut nodes, &mut weights);
                }
                // ∫_{|z|<ε} γ² dμ ≤ 2c·ε^{2-α}/(2-α)
                truncated_c_gamma = 2.0 * scale * cutoff.powf(2.0 - alpha) / (2.0 - alpha);
            }
        }
        let total_mass: f64 = weights.iter().sum();
        let gamma_mean: f64 = nodes.iter().zip(&weights).map(|(&z, &w)| w * jump_weight(z)).sum();
        let c_gamma: f64 = nodes.iter().zip(&weights).map(|(&z, &w)| w * jump_weight(z).powi(2)).sum();
        if !(total_mass.is_finite() && gamma_mean.is_finite() && c_gamma.is_finite()) {
            return Err(Error::Numeric("jump-measure quadrature diverged".into()));
        }
        Ok(JumpQuadrature {
            nodes: nodes.into_iter().map(T::lit).collect(),
            weights: weights.into_iter().map(T::lit).collect(),
            total_mass: T::lit(total_mass),
            gamma_mean: T::lit(gamma_mean),
            c_gamma: T::lit(c_gamma),
            truncated_c_gamma: T::lit(truncated_c_gamma),
        })
    }
}

/// Fixed quadrature for `∫ f(z) μ(dz)`, plus the moments the scheme uses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpQuadrature<T> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
    /// `Λ_m = μ(ℝ*)` after truncation.
    pub total_mass: T,
    /// `∫ γ dμ`
    pub gamma_mean: T,
    /// `c_γ = ∫ γ² dμ`
    pub c_gamma: T,
    /// Bound on `∫ γ² dμ` over the discarded small jumps.
    pub truncated_c_gamma: T,
}

impl<T: Real> JumpQuadrature<T> {
    pub fn integrate(&self, mut f: impl FnMut(T) -> T) -> T {
        self.nodes.iter().zip(&self.weights).map(|(&z, &w)| w * f(z)).sum()
    }
}

/// `η(x,ζ;z) = γ(z)·(g(x) + λ*·ζ)` with `g(x) = g₀ + g₁·sin²(πy)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct JumpModel<T> {
    pub g_const: T,
    pub g_amp: T,
    pub lambda_star: T,
    pub measure: LevyMeasureSpec,
}

impl<T: Real> Default for JumpModel<T> {
    fn default() -> Self {
        JumpModel {
            g_const: T::lit(0.1),
            g_amp: T::lit(0.2),
            lambda_star: T::lit(0.3),
            measure: LevyMeasureSpec::default(),
        }
    }
}

impl<T: Real> JumpModel<T> {
    pub fn off() -> Self {
        JumpModel {
            g_const: T::zero(),
            g_amp: T::zero(),
            lambda_star: T::zero(),
            measure: LevyMeasureSpec::CompoundPoisson {
                rate: 0.0,
                density: JumpDensity::Normal { mean: 0.0, std: 1.0 },
            },
        }
    }

    pub fn g(&self, y: T) -> T {
        let s = (T::PI() * y).sin();
        self.g_const + self.g_amp * s * s
    }

    pub fn g_sup(&self) -> T {
        self.g_const.abs() + self.g_amp.abs()
    }

    pub fn eta(&self, y: T, zeta: T, z: T) -> T {
        jump_weight(z) * (self.g(y) + self.lambda_star * zeta)
    }
}

/// Coefficients of the controlled equation on a fixed mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec<T> {
    pub mesh: SpatialMesh<T>,
    pub flux: FluxModel<T>,
    pub convection: ConvectionModel<T>,
    pub diffusion: WienerDiffusionModel<T>,
    /// Change through [`ModelSpec::with_jumps`] so the measure quadrature stays in sync.
    pub jumps: JumpModel<T>,
    pub initial: NodalField<T>,
    pub(crate) quad: GaussRule<T>,
    pub(crate) jump_quad: JumpQuadrature<T>,
}

impl<T: Real> ModelSpec<T> {
    pub fn new(
        mesh: SpatialMesh<T>,
        flux: FluxModel<T>,
        convection: ConvectionModel<T>,
        diffusion: WienerDiffusionModel<T>,
        jumps: JumpModel<T>,
        initial: NodalField<T>,
    ) -> Result<Self> {
        mesh.check_len(&initial)?;
        let jump_quad = jumps.measure.quadrature()?;
        Ok(ModelSpec { mesh, flux, convection, diffusion, jumps, initial, quad: GaussRule::new(3), jump_quad })
    }

    pub fn with_initial(&self, initial: NodalField<T>) -> Result<Self> {
        self.mesh.check_len(&initial)?;
        Ok(ModelSpec { initial, ..self.clone() })
    }

    /// Replaces the jump coefficients and rebuilds the cached measure quadrature.
    pub fn with_jumps(&self, jumps: JumpModel<T>) -> Result<Self> {
        let jump_quad = jumps.measure.quadrature()?;
        Ok(ModelSpec { jumps, jump_quad, ..self.clone() })
    }

    pub fn jump_quadrature(&self) -> &JumpQuadrature<T> {
        &self.jump_quad
    }

    pub fn p(&self) -> T {
        self.flux.p
    }

    /// `η(x_i, u_i; z)` at every node.
    pub fn eta_field(&self, u: &[T], z: T) -> NodalField<T> {
        NodalField(
            u.iter()
                .enumerate()
                .map(|(i, &v)| self.jumps.eta(self.mesh.unit_coordinate(self.mesh.node(i)), v, z))
                .collect(),
        )
    }

    /// `‖h(u)‖²_{𝓛₂(L²)} = ∫_D Σ_n h_n(u_h(x))² dx` by element Gauss quadrature.
    pub fn hilbert_schmidt_sq(&self, u: &[T]) -> T {
        let mesh = &self.mesh;
        (0..mesh.element_count())
            .map(|e| {
                let (l, r) = mesh.element_values(u, e);
                self.quad.iter().map(|(s, w)| w * self.diffusion.sum_sq(l + s * (r - l))).sum::<T>()
            })
            .sum::<T>()
            * mesh.h()
    }

    /// `∫_E ‖η(·,u;z)‖²_{L²} m(dz) = c_γ·‖g + λ*u‖²_{L²}`.
    pub fn jump_energy(&self, u: &[T]) -> T {
        let mesh = &self.mesh;
        let (g, ls) = (&self.jumps, self.jumps.lambda_star);
        let h = mesh.h();
        let integral = (0..mesh.element_count())
            .map(|e| {
                let (l, r) = mesh.element_values(u, e);
                let x0 = mesh.element_start(e);
                self.quad
                    .iter()
                    .map(|(s, w)| {
                        let y = mesh.unit_coordinate(x0 + s * h);
                        let v = g.g(y) + ls * (l + s * (r - l));
                        w * v * v
                    })
                    .sum::<T>()
            })
            .sum::<T>()
            * h;
        self.jump_quad.c_gamma * integral
    }

    /// `‖g‖²_{L²}` by quadrature.
    pub fn g_l2_sq(&self) -> T {
        let mesh = &self.mesh;
        let h = mesh.h();
        let rule = GaussRule::<T>::new(6);
        (0..mesh.element_count())
            .map(|e| {
                let x0 = mesh.element_start(e);
                rule.iter().map(|(s, w)| w * self.jumps.g(mesh.unit_coordinate(x0 + s * h)).powi(2)).sum::<T>()
            })
            .sum::<T>()
            * h
    }
}

/// Nodal values of `x ↦ ∫_E η(x, u(x); z) m(dz)`.
pub fn compensator_field<T: Real>(model: &ModelSpec<T>, u: &[T]) -> Result<NodalField<T>> {
    model.mesh.check_len(u)?;
    let mean = model.jump_quad.gamma_mean;
    if !mean.is_finite() {
        return Err(Error::Numeric("jump compensator integral diverged".into()));
    }
    let out = model.eta_field(u, T::one()).scaled(mean);
    if !out.is_finite() {
        return Err(Error::Numeric("non-finite jump compensator".into()));
    }
    Ok(out)
}

/// `C_hg = 2(C₅ + c_γ‖g‖²_∞)(1 + |D|)`.
pub fn chg_constant<T: Real>(model: &ModelSpec<T>) -> T {
    let g = model.jumps.g_sup();
    T::lit(2.0) * (model.diffusion.c5() + model.jump_quad.c_gamma * g * g) * (T::one() + model.mesh.length())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub id: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivedConstants<T> {
    pub p: T,
    pub c1: T,
    pub c2: T,
    pub c3: T,
    pub c4: T,
    pub k1: T,
    pub k2: T,
    pub k3: T,
    pub c5: T,
    pub l_sigma: T,
    pub noise_tail: T,
    pub lip_f: T,
    pub lambda_star: T,
    pub g_sup: T,
    pub l_eta: T,
    pub c_gamma: T,
    pub jump_mass: T,
    pub truncated_c_gamma: T,
    pub c_hg: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport<T> {
    pub checks: Vec<AssumptionCheck>,
    pub constants: DerivedConstants<T>,
    pub samples: usize,
}

impl<T> AssumptionReport<T> {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, id: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.id == id)
    }
}

pub fn derived_constants<T: Real>(model: &ModelSpec<T>) -> DerivedConstants<T> {
    let (c2, k2) = model.flux.growth_constants();
    let (c4, k3) = model.flux.state_lipschitz_constants();
    let c5 = model.diffusion.c5();
    let len = model.mesh.length();
    DerivedConstants {
        p: model.flux.p,
        c1: model.flux.coeff_min(),
        c2,
        c3: T::zero(),
        c4,
        k1: T::zero(),
        k2: k2 * len.powf(T::one() - T::one() / model.flux.p),
        k3: k3 * len,
        c5,
        l_sigma: c5,
        noise_tail: model.diffusion.tail_bound(),
        lip_f: model.convection.lipschitz(),
        lambda_star: model.jumps.lambda_star,
        g_sup: model.jumps.g_sup(),
        l_eta: model.jumps.g_amp.abs() * T::PI() / len,
        c_gamma: model.jump_quad.c_gamma,
        jump_mass: model.jump_quad.total_mass,
        truncated_c_gamma: model.jump_quad.truncated_c_gamma,
        c_hg: chg_constant(model),
    }
}

/// Checks the structural assumptions by sampling `sample_budget` random points per inequality.
/// Sampling is seeded, so the report is reproducible.
pub fn validate_assumptions<T: Real>(model: &ModelSpec<T>, sample_budget: usize) -> Result<AssumptionReport<T>> {
    if sample_budget == 0 {
        return Err(Error::Config("sample budget must be at least 1".into()));
    }
    let k = derived_constants(model);
    let analytic = [
        k.c1, k.c2, k.c4, k.k2, k.k3, k.c5, k.l_sigma, k.c_gamma, k.c_hg, k.g_sup, k.l_eta, k.jump_mass,
    ];
    if analytic.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite analytic constant".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_a55e);
    let flux = &model.flux;
    let p = flux.p;
    let tol = T::lit(1e-10);
    let mut checks = Vec::new();
    let mut push = |id: &str, passed: bool, detail: String| {
        checks.push(AssumptionCheck { id: id.to_string(), passed, detail });
    };
    let sample_zeta = |rng: &mut ChaCha8Rng| -> T {
        let mag = 10f64.powf(rng.random_range(-3.0..1.5));
        T::lit(if rng.random_bool(0.5) { mag } else { -mag })
    };
    let sample_y = |rng: &mut ChaCha8Rng| T::lit(rng.random_range(0.0..=1.0));
    let sample_lambda = |rng: &mut ChaCha8Rng| T::lit(rng.random_range(-5.0..5.0));

    let two = T::lit(2.0);
    let p_ok = p >= two;
    push(
        "A2(p)",
        p_ok && p.is_finite(),
        if p == two {
            "p = 2 admitted in oracle mode only".into()
        } else {
            format!("p = {p}")
        },
    );

    let positive = flux.coeff_base > T::zero() && flux.coeff_space >= T::zero() && flux.coeff_state >= T::zero();
    let mut worst = (true, String::from("ok"));
    for _ in 0..sample_budget {
        let (y, th) = (sample_y(&mut rng), sample_lambda(&mut rng));
        let (z1, z2) = (sample_zeta(&mut rng), sample_zeta(&mut rng));
        let lhs = (flux.eval(y, th, z1) - flux.eval(y, th, z2)) * (z1 - z2);
        let scale = (flux.eval(y, th, z1).abs() + flux.eval(y, th, z2).abs()) * (z1 - z2).abs();
        if lhs < -tol * scale {
            worst = (false, format!("(A(ζ₁)-A(ζ₂))(ζ₁-ζ₂) = {lhs} at ζ₁={z1}, ζ₂={z2}"));
            break;
        }
    }
    push("A2(i)", worst.0, worst.1);

    let mut worst = (positive, format!("C₁ = {}, K₁ = 0", k.c1));
    if positive {
        for _ in 0..sample_budget {
            let (y, l, z) = (sample_y(&mut rng), sample_lambda(&mut rng), sample_zeta(&mut rng));
            let lhs = flux.eval(y, l, z) * z;
            let rhs = k.c1 * z.abs().powf(p) - k.k1;
            if lhs < rhs - tol * rhs.abs() {
                worst = (false, format!("A·ζ = {lhs} < C₁|ζ|^p - K₁ = {rhs} at ζ={z}"));
                break;
            }
        }
    } else {
        worst.1 = "coefficient bounds must satisfy c₀ > 0, c_x ≥ 0, c_λ ≥ 0".into();
    }
    push("A2(ii)", worst.0, worst.1);

    let mut worst = (true, format!("C₂ = {}, C₃ = 0, K₂ = {} (K₂ ∈ L^p', K₂ ≥ 0)", k.c2, k.k2));
    let (c2, k2pt) = flux.growth_constants();
    for _ in 0..sample_budget {
        let (y, l, z) = (sample_y(&mut rng), sample_lambda(&mut rng), sample_zeta(&mut rng));
        let lhs = flux.eval(y, l, z).abs();
        let rhs = c2 * z.abs().powf(p - T::one()) + k2pt;
        if lhs > rhs * (T::one() + tol) {
            worst = (false, format!("|A| = {lhs} > {rhs} at ζ={z}"));
            break;
        }
    }
    push("A2(iii)", worst.0, worst.1);

    let mut worst = (true, format!("C₄ = {}, K₃ = {}", k.c4, k.k3));
    let (c4, k3pt) = flux.state_lipschitz_constants();
    for _ in 0..sample_budget {
        let (y, z) = (sample_y(&mut rng), sample_zeta(&mut rng));
        let (l1, l2) = (sample_lambda(&mut rng), sample_lambda(&mut rng));
        let lhs = (flux.eval(y, l1, z) - flux.eval(y, l2, z)).abs();
        let rhs = (c4 * z.abs().powf(p - T::one()) + k3pt) * (l1 - l2).abs();
        if lhs > rhs * (T::one() + tol) + T::lit(1e-300).max(T::min_positive_value()) {
            worst = (false, format!("λ-Lipschitz bound violated: {lhs} > {rhs}"));
            break;
        }
    }
    push("A2(iv)", worst.0, worst.1);

    let conv = &model.convection;
    let mut worst = (conv.eval(T::zero()) == T::zero(), format!("Lipschitz constant {}", k.lip_f));
    if conv.mode == ConvectionMode::Saturated && !(conv.saturation > T::zero()) {
        worst = (false, "saturation level must be positive".into());
    }
    if worst.0 {
        for _ in 0..sample_budget {
            let (a, b) = (sample_zeta(&mut rng), sample_zeta(&mut rng));
            let lhs = (conv.eval(a) - conv.eval(b)).abs();
            if lhs > k.lip_f * (a - b).abs() * (T::one() + tol) {
                worst = (false, format!("|F(a)-F(b)| = {lhs} exceeds Lipschitz bound"));
                break;
            }
        }
    }
    push("A3", worst.0, worst.1);

    let diff = &model.diffusion;
    let mut worst = (diff.sigma >= T::zero() && diff.decay > T::zero(), format!("C₅ = L_σ = {}, discarded-mode tail ≤ {}", k.c5, k.noise_tail));
    if worst.0 {
        for _ in 0..sample_budget {
            let (a, b) = (sample_zeta(&mut rng), sample_zeta(&mut rng));
            let direct: T = (1..=diff.modes).map(|n| diff.h_n(n, a).powi(2)).sum();
            if direct > k.c5 * (T::one() + a * a) * (T::one() + tol) {
                worst = (false, format!("Σ|h_n(ξ)|² = {direct} exceeds C₅(1+ξ²) at ξ={a}"));
                break;
            }
            let lip: T = (1..=diff.modes).map(|n| (diff.h_n(n, a) - diff.h_n(n, b)).powi(2)).sum();
            if lip > k.l_sigma * (a - b).powi(2) * (T::one() + tol) {
                worst = (false, format!("Σ|h_n(ξ)-h_n(ζ)|² = {lip} exceeds L_σ|ξ-ζ|²"));
                break;
            }
        }
    } else {
        worst.1 = "diffusion needs σ ≥ 0 and decay a > 0".into();
    }
    push("A4", worst.0, worst.1);

    push(
        "A5",
        k.jump_mass.is_finite(),
        format!("truncated mass Λ_m = {}, small-jump γ²-mass ≤ {}", k.jump_mass, k.truncated_c_gamma),
    );

    let jumps = &model.jumps;
    let ls = jumps.lambda_star;
    let mut worst = (true, format!("λ* = {ls}, c_γ = {}, L_η = {}", k.c_gamma, k.l_eta));
    if !(ls >= T::zero() && ls < T::one()) {
        worst = (false, format!("λ* = {ls} outside [0,1)"));
    } else if jumps.g_const < T::zero() || jumps.g_const + jumps.g_amp.min(T::zero()) < T::zero() {
        worst = (false, "g must be non-negative".into());
    } else {
        let len = model.mesh.length();
        for _ in 0..sample_budget {
            let (y1, y2) = (sample_y(&mut rng), sample_y(&mut rng));
            let (a, b) = (sample_zeta(&mut rng), sample_zeta(&mut rng));
            let z = T::lit(10f64.powf(rng.random_range(-4.0..1.0)));
            let g = jumps.g(y1);
            let envelope = g.max(ls) * jump_weight(z) * (T::one() + a.abs());
            let eta = jumps.eta(y1, a, z);
            if eta.abs() > envelope * (T::one() + tol) {
                worst = (false, format!("|η| = {eta} exceeds envelope {envelope}"));
                break;
            }
            let diff_eta = (eta - jumps.eta(y2, b, z)).abs();
            let bound = jump_weight(z) * (ls * (a - b).abs() + k.l_eta * (y1 - y2).abs() * len);
            if diff_eta > bound * (T::one() + tol) + T::lit(1e-14) {
                worst = (false, format!("η Lipschitz bound violated: {diff_eta} > {bound}"));
                break;
            }
        }
    }
    push("A6", worst.0 && k.c_gamma.is_finite(), worst.1);

    push(
        "A1",
        model.initial.is_finite(),
        format!("‖u₀‖_L² = {}", model.mesh.l2_norm(&model.initial)),
    );

    Ok(AssumptionReport { checks, constants: k, samples: sample_budget })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::grid::build_mesh;

    pub(crate) fn oracle_model(m: usize) -> ModelSpec<f64> {
        let mesh = build_mesh(m, (0.0, 1.0)).unwrap();
        ModelSpec::new(
            mesh,
            FluxModel::linear(),
            ConvectionModel::none(),
            WienerDiffusionModel::off(),
            JumpModel::off(),
            NodalField::zeros(m),
        )
        .unwrap()
    }

    pub(crate) fn default_model(m: usize) -> ModelSpec<f64> {
        let mesh = build_mesh(m, (0.0, 1.0)).unwrap();
        let u0 = NodalField::interpolate(&mesh, |x: f64| (std::f64::consts::PI * x).sin());
        ModelSpec::new(
            mesh,
            FluxModel::default(),
            ConvectionModel::default(),
            WienerDiffusionModel::default(),
            JumpModel::default(),
            u0,
        )
        .unwrap()
    }

    #[test]
    fn default_model_passes_every_check() {
        let m = default_model(31);
        let r = validate_assumptions(&m, 2000).unwrap();
        assert!(r.all_passed(), "{:#?}", r.checks);
        assert_eq!(r.constants.c3, 0.0);
        assert_eq!(r.constants.k1, 0.0);
    }

    #[test]
    fn lambda_star_out_of_range_fails_a6() {
        let mut m = default_model(15);
        m.jumps.lambda_star = 1.2;
        let r = validate_assumptions(&m, 100).unwrap();
        assert!(!r.check("A6").unwrap().passed);
        assert!(r.check("A2(i)").unwrap().passed);
    }

    #[test]
    fn reversed_flux_fails_monotonicity() {
        let mut m = oracle_model(7);
        m.flux.family = FluxFamily::Reversed;
        let r = validate_assumptions(&m, 100).unwrap();
        assert!(!r.check("A2(i)").unwrap().passed);
        assert!(!r.check("A2(ii)").unwrap().passed);
    }

    #[test]
    fn zero_budget_is_rejected() {
        assert!(validate_assumptions(&oracle_model(4), 0).is_err());
    }

    #[test]
    fn chg_formula() {
        let m = oracle_model(4);
        assert_eq!(chg_constant(&m), 0.0);
        // C5 = σ²Σn^{-3} over one mode = σ²; choose σ=1. c_γ from a uniform law on [2,3]: γ=1 ⇒ c_γ = ρ.
        let mut m = default_model(7);
        m.diffusion = WienerDiffusionModel { modes: 1, sigma: 1.0, decay: 0.5, variant: DiffusionVariant::Linear };
        m.jumps = JumpModel {
            g_const: 1.0,
            g_amp: 0.0,
            lambda_star: 0.0,
            measure: LevyMeasureSpec::CompoundPoisson { rate: 2.0, density: JumpDensity::Uniform { low: 2.0, high: 3.0 } },
        };
        let m = ModelSpec::new(m.mesh, m.flux, m.convection, m.diffusion, m.jumps, m.initial).unwrap();
        assert!((m.jump_quad.c_gamma - 2.0).abs() < 1e-13);
        assert!((chg_constant(&m) - 12.0).abs() < 1e-12);
    }

    #[test]
    fn flux_derivatives_match_finite_differences() {
        let f = FluxModel::<f64> { coeff_space: 0.3, coeff_state: 0.4, p: 3.5, ..FluxModel::default() };
        for &(y, l, z) in &[(0.2, 0.3, 0.7), (0.9, -1.0, -2.0), (0.5, 2.0, 0.05)] {
            let e = 1e-6;
            let dz = (f.eval(y, l, z + e) - f.eval(y, l, z - e)) / (2.0 * e);
            let dl = (f.eval(y, l + e, z) - f.eval(y, l - e, z)) / (2.0 * e);
            assert!((dz - f.d_zeta(y, l, z)).abs() < 1e-6 * dz.abs().max(1.0));
            assert!((dl - f.d_lambda(y, l, z)).abs() < 1e-6 * dl.abs().max(1.0));
        }
    }

    #[test]
    fn invalid_measure_is_a_config_error() {
        let bad = LevyMeasureSpec::TemperedTruncated { alpha: 2.5, beta: 1.0, scale: 1.0, cutoff: 1e-3 };
        assert!(matches!(bad.quadrature::<f64>(), Err(Error::Config(_))));
    }
}
