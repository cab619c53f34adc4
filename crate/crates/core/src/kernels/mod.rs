//! Bessel-potential and Gaussian mollifiers, their bandwidth scaling, grid
//! sampling, Fourier-side bounds and the weighted Stein kernel.

mod bessel;
mod sampling;

pub use bessel::{bessel_k_nu, k0_k1};
pub use sampling::{moment_stencil, sample_on_grid, sample_tent_on_grid, semigroup_error};

use std::f64::consts::PI;

use serde::Serialize;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::potentials::{PotentialSpec, LOG_WEIGHT_CLAMP};
use crate::quad;

fn is_half_or_integer(nu: f64) -> bool {
    let t = 2.0 * nu;
    (t - t.round()).abs() < 1e-12
}

fn normalizer(alpha: f64, d: usize) -> f64 {
    let df = d as f64;
    2f64.powf(0.5 * (df + alpha - 2.0)) * PI.powf(0.5 * df) * gamma(0.5 * alpha)
}

/// Bessel potential `G_α` in dimension `d` at radius `r`.
pub fn bessel_potential_radial(alpha: f64, d: usize, r: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} must be positive")));
    }
    let df = d as f64;
    let nu = 0.5 * (df - alpha);
    if !is_half_or_integer(nu) {
        return Err(Error::UnsupportedOrder(nu));
    }
    let c = normalizer(alpha, d);
    if r == 0.0 {
        if alpha > df {
            let mu = -nu;
            return Ok(0.5 * gamma(mu) * 2f64.powf(mu) / c);
        }
        return Err(Error::SingularEvaluation(format!("G_{alpha} in d = {d}")));
    }
    Ok(bessel_k_nu(nu, r)? * r.powf(-nu) / c)
}

/// `G_α(x)`, with `x.len()` the dimension.
pub fn bessel_potential(alpha: f64, d: usize, x: &[f64]) -> Result<f64> {
    check_dim(d, x)?;
    bessel_potential_radial(alpha, d, norm(x))
}

/// Coefficient `s(r)` with `∇G_α(x) = s(|x|) x`, for `α ∈ {1, 2}`.
fn bessel_gradient_coefficient(alpha: f64, d: usize, r: f64) -> Result<f64> {
    if r == 0.0 {
        return Err(Error::SingularEvaluation(format!("gradient of G_{alpha} at the origin")));
    }
    let df = d as f64;
    if alpha == 1.0 {
        let c = 2f64.powf(0.5 * (df - 1.0)) * PI.powf(0.5 * df) * PI.sqrt();
        Ok(-r.powf(-0.5 * (df + 1.0)) * bessel_k_nu(0.5 * (df + 1.0), r)? / c)
    } else if alpha == 2.0 {
        Ok(-(2.0 * PI).powf(-0.5 * df) * r.powf(-0.5 * df) * bessel_k_nu(0.5 * df, r)?)
    } else {
        Err(Error::InvalidArgument(format!("gradient only for alpha in {{1, 2}}, got {alpha}")))
    }
}

pub fn bessel_potential_grad(alpha: f64, d: usize, x: &[f64]) -> Result<[f64; 2]> {
    check_dim(d, x)?;
    let s = bessel_gradient_coefficient(alpha, d, norm(x))?;
    let mut g = [0.0; 2];
    for (gi, xi) in g.iter_mut().zip(x) {
        *gi = s * xi;
    }
    Ok(g)
}

fn check_dim(d: usize, x: &[f64]) -> Result<()> {
    if !(1..=2).contains(&d) || x.len() != d {
        return Err(Error::InvalidArgument(format!(
            "point of length {} in dimension {d}",
            x.len()
        )));
    }
    Ok(())
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelBase {
    /// `ω = G_1`, so that `k = ω ∗ ω = G_2`
    BesselG1,
    /// standard normal density, `k` the normal density of variance 2
    Gaussian,
}

impl std::str::FromStr for KernelBase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bessel" | "bessel_g1" => Ok(Self::BesselG1),
            "gaussian" => Ok(Self::Gaussian),
            other => Err(Error::Config(format!("unknown kernel base '{other}'"))),
        }
    }
}

/// Which member of the factorization `k = ω ∗ ω` a [`ScaledKernel`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Mollifier,
    Interaction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelSpec {
    pub base: KernelBase,
    pub sigma: f64,
    pub dim: usize,
}

impl KernelSpec {
    pub fn new(base: KernelBase, sigma: f64, dim: usize) -> Result<Self> {
        if !(sigma > 0.0 && sigma <= 1.0) {
            return Err(Error::InvalidArgument(format!("bandwidth {sigma} not in (0, 1]")));
        }
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidArgument(format!("dimension {dim} not in {{1, 2}}")));
        }
        Ok(Self { base, sigma, dim })
    }

    pub fn bessel(sigma: f64, dim: usize) -> Result<Self> {
        Self::new(KernelBase::BesselG1, sigma, dim)
    }

    /// `ω_σ`
    pub fn mollifier(&self) -> ScaledKernel {
        ScaledKernel {
            spec: *self,
            profile: Profile::Mollifier,
        }
    }

    /// `k_σ = ω_σ ∗ ω_σ`
    pub fn interaction(&self) -> ScaledKernel {
        ScaledKernel {
            spec: *self,
            profile: Profile::Interaction,
        }
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(self.base, sigma, self.dim)
    }
}

/// The bandwidth-`σ` mollifier `ω_σ(x) = σ^{-d} ω(x/σ)`.
pub fn scale(spec: &KernelSpec) -> ScaledKernel {
    spec.mollifier()
}

/// A radially symmetric kernel at bandwidth `σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaledKernel {
    pub spec: KernelSpec,
    pub profile: Profile,
}

impl ScaledKernel {
    pub fn sigma(&self) -> f64 {
        self.spec.sigma
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    fn bessel_alpha(&self) -> f64 {
        match self.profile {
            Profile::Mollifier => 1.0,
            Profile::Interaction => 2.0,
        }
    }

    /// Whether the unscaled profile is unbounded at the origin.
    pub fn singular_at_origin(&self) -> bool {
        match self.spec.base {
            KernelBase::Gaussian => false,
            KernelBase::BesselG1 => self.bessel_alpha() <= self.spec.dim as f64,
        }
    }

    /// Unscaled profile at radius `u > 0` (or `u = 0` when bounded).
    pub fn base_radial(&self, u: f64) -> Result<f64> {
        let d = self.spec.dim as f64;
        match self.spec.base {
            KernelBase::BesselG1 => bessel_potential_radial(self.bessel_alpha(), self.spec.dim, u),
            KernelBase::Gaussian => Ok(match self.profile {
                Profile::Mollifier => (2.0 * PI).powf(-0.5 * d) * (-0.5 * u * u).exp(),
                Profile::Interaction => (4.0 * PI).powf(-0.5 * d) * (-0.25 * u * u).exp(),
            }),
        }
    }

    /// `s(u)` with `∇f(y) = s(|y|) y` for the unscaled profile.
    fn base_gradient_coefficient(&self, u: f64) -> Result<f64> {
        match self.spec.base {
            KernelBase::BesselG1 => bessel_gradient_coefficient(self.bessel_alpha(), self.spec.dim, u),
            KernelBase::Gaussian => {
                let f = self.base_radial(u)?;
                Ok(match self.profile {
                    Profile::Mollifier => -f,
                    Profile::Interaction => -0.5 * f,
                })
            }
        }
    }

    /// Scaled value at radius `r`.
    pub fn radial(&self, r: f64) -> Result<f64> {
        let s = self.spec.sigma;
        Ok(s.powi(-(self.spec.dim as i32)) * self.base_radial(r / s)?)
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.spec.dim, x)?;
        self.radial(norm(x))
    }

    /// Gradient of the scaled kernel. Bounded kernels get the odd limit 0 at
    /// the origin; singular ones report an error there.
    pub fn gradient(&self, x: &[f64]) -> Result<[f64; 2]> {
        check_dim(self.spec.dim, x)?;
        let r = norm(x);
        if r == 0.0 {
            if self.singular_at_origin() {
                return Err(Error::SingularEvaluation("kernel gradient at the origin".into()));
            }
            return Ok([0.0; 2]);
        }
        let s = self.spec.sigma;
        // ∇f_σ(x) = σ^{-d-1} (∇f)(x/σ) = σ^{-d-2} s(r/σ) x
        let c = s.powi(-(self.spec.dim as i32) - 2) * self.base_gradient_coefficient(r / s)?;
        let mut g = [0.0; 2];
        for (gi, xi) in g.iter_mut().zip(x) {
            *gi = c * xi;
        }
        Ok(g)
    }

    /// Value and gradient together; the 1-D Bessel interaction kernel
    /// `e^{-|z|/σ} / (2σ)` is evaluated in closed form.
    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, [f64; 2])> {
        if self.spec.dim == 1 && self.spec.base == KernelBase::BesselG1 && self.profile == Profile::Interaction {
            check_dim(1, x)?;
            let s = self.spec.sigma;
            let k = (-x[0].abs() / s).exp() / (2.0 * s);
            let g = if x[0] == 0.0 { 0.0 } else { -x[0].signum() * k / s };
            return Ok((k, [g, 0.0]));
        }
        Ok((self.value(x)?, self.gradient(x)?))
    }

    /// Fourier transform `∫ e^{-2πi x·ξ} f(x) dx` at `|ξ|`.
    pub fn fourier(&self, xi: f64) -> f64 {
        let z = self.spec.sigma * xi;
        let one = match self.spec.base {
            KernelBase::BesselG1 => (1.0 + 4.0 * PI * PI * z * z).powf(-0.5),
            KernelBase::Gaussian => (-2.0 * PI * PI * z * z).exp(),
        };
        match self.profile {
            Profile::Mollifier => one,
            Profile::Interaction => one * one,
        }
    }

    /// `‖|y|^k f_σ‖_{L²}` by radial quadrature.
    pub fn moment_l2_norm(&self, k: f64) -> Result<f64> {
        let sq = self.radial_integral(|r, v| (r.powf(k) * v).powi(2))?;
        Ok(sq.sqrt())
    }

    /// `‖|y|^k f_σ‖_{L¹}` by radial quadrature (the profiles are nonnegative).
    pub fn moment_l1_norm(&self, k: f64) -> Result<f64> {
        self.radial_integral(|r, v| r.powf(k) * v.abs())
    }

    fn radial_integral<F: Fn(f64, f64) -> f64>(&self, g: F) -> Result<f64> {
        let s = self.spec.sigma;
        let d = self.spec.dim;
        let surface = if d == 1 { 2.0 } else { 2.0 * PI };
        let integrand = |r: f64| {
            let v = self.radial(r).unwrap_or(0.0);
            g(r, v) * r.powi(d as i32 - 1)
        };
        // the tails of every profile decay at least like e^{-r/σ}
        let near = quad::adaptive(&integrand, 0.0, s, 1e-14 * s);
        let far = quad::composite(integrand, s, 80.0 * s, 400);
        let total = surface * (near + far);
        if !total.is_finite() {
            return Err(Error::NonFinite("kernel moment".into()));
        }
        Ok(total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FourierReport {
    pub d0_estimate: f64,
    pub d1_estimate: f64,
    pub sandwich_ok: bool,
    pub xi_max: f64,
    pub n_xi: usize,
    pub min_zeta: f64,
    /// frequency where `ζ` is smallest
    pub witness_xi: f64,
    /// log-log slope of `ζ` over the top decade of the sampled range
    pub tail_slope: f64,
}

/// Samples `ζ(ξ) = ω̂_σ(ξ) (1 + ξ²)^{1/2}` at 0 and on `n_xi` log-spaced
/// frequencies in `[1e-3, ξ_max]`, and estimates the two-sided bound constants.
pub fn verify_fourier_sandwich(spec: &KernelSpec, xi_max: f64, n_xi: usize) -> FourierReport {
    let w = spec.mollifier();
    let n_xi = n_xi.max(2);
    let lo = 1e-3f64.min(xi_max).ln();
    let hi = xi_max.ln();
    let mut xs = vec![0.0];
    xs.extend((0..n_xi).map(|i| (lo + (hi - lo) * i as f64 / (n_xi - 1) as f64).exp()));
    let zeta: Vec<f64> = xs.iter().map(|&x| w.fourier(x) * (1.0 + x * x).sqrt()).collect();
    let (mut min_z, mut arg) = (f64::INFINITY, 0.0);
    let mut max_z = 0.0f64;
    for (&x, &z) in xs.iter().zip(&zeta) {
        if z < min_z {
            min_z = z;
            arg = x;
        }
        max_z = max_z.max(z);
    }
    let top = xi_max / 10.0;
    let i0 = xs.iter().position(|&x| x >= top).unwrap_or(xs.len() - 2).min(xs.len() - 2);
    let (za, zb) = (zeta[i0], zeta[xs.len() - 1]);
    let tail_slope = if za > 0.0 && zb > 0.0 {
        (zb.ln() - za.ln()) / (xs[xs.len() - 1].ln() - xs[i0].ln())
    } else {
        f64::NEG_INFINITY
    };
    let d0 = if min_z > 0.0 { 1.0 / min_z } else { f64::INFINITY };
    FourierReport {
        d0_estimate: d0,
        d1_estimate: max_z,
        sandwich_ok: min_z >= 1e-12 && tail_slope.abs() <= 0.05,
        xi_max,
        n_xi,
        min_zeta: min_z,
        witness_xi: arg,
        tail_slope,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SigmaStar {
    pub sigma: f64,
    pub delta: f64,
    pub c: f64,
}

/// Largest bandwidth below 1 meeting `c σ² < 1` and `1 + δ²/σ² ≥ c (1 + δ²)`
/// with `c = D0 (1 - ε)`, where `δ` is the widest radius on which the sampled
/// `f` stays above `1 - ε`.
pub fn sigma_star(eps: f64, d0: f64, f: &dyn Fn(f64) -> f64) -> Result<SigmaStar> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon {eps} not in (0, 1)")));
    }
    if !(d0 >= 1.0) {
        return Err(Error::InvalidArgument(format!("D0 = {d0} must be at least 1")));
    }
    let floor = 1.0 - eps;
    let holds = |delta: f64| (0..=256).all(|i| f(delta * i as f64 / 256.0) >= floor);
    let delta_hi = 1e6;
    let delta = if holds(delta_hi) {
        delta_hi
    } else {
        if !holds(1e-12) {
            return Err(Error::NoAdmissibleDelta);
        }
        let (mut lo, mut hi) = (1e-12, delta_hi);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if holds(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * hi {
                break;
            }
        }
        lo
    };
    let c = d0 * floor;
    let below: f64 = 1.0 - 1e-12;
    let mut sigma = below;
    if c > 0.0 {
        sigma = sigma.min(below / c.sqrt());
    }
    let excess = c * (1.0 + delta * delta) - 1.0;
    if excess > 0.0 {
        sigma = sigma.min(delta / excess.sqrt());
    }
    Ok(SigmaStar { sigma, delta, c })
}

/// Checks `f(σx) ≥ (1 - ε)/(1 + x²)` on `n` points of `[0, x_max]`; returns
/// the first failing `x`.
pub fn sigma_star_check(f: &dyn Fn(f64) -> f64, eps: f64, sigma: f64, n: usize, x_max: f64) -> Option<f64> {
    (0..n)
        .map(|i| x_max * i as f64 / (n - 1) as f64)
        .find(|&x| f(sigma * x) < (1.0 - eps) / (1.0 + x * x))
}

/// `w(x) = e^{V(x) - 𝕍(x)/2}`, with the exponent clamped at the overflow guard.
pub fn weight_w(potential: &PotentialSpec, x: &[f64]) -> f64 {
    potential.log_weight(x).min(LOG_WEIGHT_CLAMP).exp()
}

/// `K(x, y) = w(x) k_σ(x - y) w(y)` and `∇_y K(x, y)`.
pub fn weighted_kernel(
    kernel: &ScaledKernel,
    potential: &PotentialSpec,
    x: &[f64],
    y: &[f64],
) -> Result<(f64, [f64; 2])> {
    let d = kernel.dim();
    check_dim(d, x)?;
    check_dim(d, y)?;
    let mut z = [0.0; 2];
    for a in 0..d {
        z[a] = x[a] - y[a];
    }
    let k = kernel.value(&z[..d])?;
    let gk = kernel.gradient(&z[..d])?;
    let wx = weight_w(potential, x);
    let wy = weight_w(potential, y);
    let lg = potential.log_weight_gradient(y);
    let mut g = [0.0; 2];
    for a in 0..d {
        g[a] = wx * (-gk[a] * wy + k * lg[a] * wy);
    }
    Ok((wx * k * wy, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{Minorant, PotentialKind};
    use proptest::prelude::*;

    #[test]
    fn fast_pair_evaluation_matches_general_path() {
        let k = KernelSpec::bessel(0.3, 1).unwrap().interaction();
        for z in [-1.2, -0.01, 0.0, 0.2, 2.5] {
            let (v, g) = k.value_and_gradient(&[z]).unwrap();
            assert!((v - k.value(&[z]).unwrap()).abs() < 1e-13);
            assert!((g[0] - k.gradient(&[z]).unwrap()[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_forms_1d() {
        for x in [0.1, 1.0, 3.0] {
            let g2 = bessel_potential(2.0, 1, &[x]).unwrap();
            assert!((g2 - 0.5 * (-x).exp()).abs() < 1e-10);
            let g1 = bessel_potential(1.0, 1, &[x]).unwrap();
            assert!((g1 - bessel_k_nu(0.0, x).unwrap() / PI).abs() < 1e-14);
        }
        assert!((bessel_potential(2.0, 1, &[0.0]).unwrap() - 0.5).abs() < 1e-14);
        assert!(matches!(bessel_potential(1.0, 1, &[0.0]), Err(Error::SingularEvaluation(_))));
        assert!(matches!(bessel_potential(2.0, 2, &[0.0, 0.0]), Err(Error::SingularEvaluation(_))));
    }

    #[test]
    fn closed_forms_2d() {
        let r: f64 = 0.7;
        let g1 = bessel_potential(1.0, 2, &[r, 0.0]).unwrap();
        assert!((g1 - (-r).exp() / (2.0 * PI * r)).abs() < 1e-13);
        let g2 = bessel_potential(2.0, 2, &[0.0, r]).unwrap();
        assert!((g2 - bessel_k_nu(0.0, r).unwrap() / (2.0 * PI)).abs() < 1e-14);
    }

    #[test]
    fn gradient_values() {
        let g = bessel_potential_grad(2.0, 1, &[1.0]).unwrap();
        assert!((g[0] + 0.5 * (-1f64).exp()).abs() < 1e-14);
        assert!((g[0] + 0.18394).abs() < 1e-5);
        assert!(bessel_potential_grad(1.0, 1, &[0.0]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences_2d() {
        let x = [0.3, 0.4];
        let h = 1e-6;
        for alpha in [1.0, 2.0] {
            let g = bessel_potential_grad(alpha, 2, &x).unwrap();
            for a in 0..2 {
                let mut p = x;
                let mut m = x;
                p[a] += h;
                m[a] -= h;
                let fd = (bessel_potential(alpha, 2, &p).unwrap() - bessel_potential(alpha, 2, &m).unwrap()) / (2.0 * h);
                assert!(((fd - g[a]) / g[a]).abs() < 1e-5, "alpha={alpha} axis={a}");
            }
        }
    }

    #[test]
    fn unit_mass_by_radial_quadrature() {
        for d in [1, 2] {
            for base in [KernelBase::BesselG1, KernelBase::Gaussian] {
                let spec = KernelSpec::new(base, 1.0, d).unwrap();
                for k in [spec.mollifier(), spec.interaction()] {
                    let m = k.moment_l1_norm(0.0).unwrap();
                    assert!((m - 1.0).abs() < 1e-6, "{base:?} d={d} {:?}: {m}", k.profile);
                }
            }
        }
    }

    #[test]
    fn moment_scaling() {
        let base = KernelSpec::bessel(1.0, 1).unwrap().mollifier();
        let half = KernelSpec::bessel(0.5, 1).unwrap().mollifier();
        let l1 = base.moment_l1_norm(1.0).unwrap();
        assert!((half.moment_l1_norm(1.0).unwrap() - 0.5 * l1).abs() < 1e-9 * l1);
        for k in [1.0, 2.0] {
            let a = base.moment_l2_norm(k).unwrap();
            let b = half.moment_l2_norm(k).unwrap();
            let expect = 0.5f64.powf(k - 0.5) * a;
            assert!((b - expect).abs() < 1e-8 * expect, "k={k}: {b} vs {expect}");
        }
    }

    #[test]
    fn unit_bandwidth_is_identity() {
        let k = KernelSpec::bessel(1.0, 1).unwrap().mollifier();
        for x in [0.2, 1.0, 2.5] {
            assert_eq!(k.value(&[x]).unwrap(), bessel_potential(1.0, 1, &[x]).unwrap());
        }
    }

    #[test]
    fn bessel_sandwich() {
        let r = verify_fourier_sandwich(&KernelSpec::bessel(1.0, 1).unwrap(), 1e4, 400);
        assert!(r.sandwich_ok);
        assert!((r.d0_estimate - 2.0 * PI).abs() < 5e-3, "{}", r.d0_estimate);
        assert!((r.d1_estimate - 1.0).abs() < 1e-3);
        assert!(r.d0_estimate * r.d1_estimate >= 1.0);
    }

    #[test]
    fn gaussian_sandwich_fails() {
        let r = verify_fourier_sandwich(&KernelSpec::new(KernelBase::Gaussian, 1.0, 1).unwrap(), 10.0, 200);
        assert!(!r.sandwich_ok);
        assert!(r.witness_xi > 1.0);
        let xi = 10.0f64;
        assert!((-2.0 * PI * PI * xi * xi).exp() < (1.0 + xi * xi).powf(-0.5) * 1e-12);
    }

    #[test]
    fn scaled_fourier_transform() {
        let k = KernelSpec::bessel(1.0, 1).unwrap().interaction();
        let ks = KernelSpec::bessel(0.3, 1).unwrap().interaction();
        for xi in [0.0, 0.1, 1.0, 7.0] {
            assert!((ks.fourier(xi) - k.fourier(0.3 * xi)).abs() < 1e-15);
        }
    }

    #[test]
    fn sandwich_persists_under_scaling() {
        let base = verify_fourier_sandwich(&KernelSpec::bessel(1.0, 1).unwrap(), 1e4, 400).min_zeta;
        for s in [1.0, 0.5, 0.1] {
            let r = verify_fourier_sandwich(&KernelSpec::bessel(s, 1).unwrap(), 1e4, 400);
            assert!(r.min_zeta >= base - 1e-15);
        }
    }

    fn bessel_khat(x: f64) -> f64 {
        1.0 / (1.0 + 4.0 * PI * PI * x * x)
    }

    #[test]
    fn sigma_star_bessel() {
        let s = sigma_star(0.5, 2.0 * PI, &bessel_khat).unwrap();
        assert!(s.sigma > 0.0 && s.sigma < 1.0);
        assert!((s.delta - 1.0 / (2.0 * PI)).abs() < 1e-6);
        for sigma in [0.5 * s.sigma, 0.25 * s.sigma] {
            assert_eq!(sigma_star_check(&bessel_khat, 0.5, sigma, 10_000, 1e3), None);
        }
    }

    #[test]
    fn sigma_star_degenerate_and_monotone() {
        let s = sigma_star(1.0 - 1e-12, 2.0 * PI, &bessel_khat).unwrap();
        assert!(s.sigma > 0.999 && s.sigma < 1.0);
        let lo = sigma_star(0.2, 2.0 * PI, &bessel_khat).unwrap().sigma;
        let hi = sigma_star(0.8, 2.0 * PI, &bessel_khat).unwrap().sigma;
        assert!(hi >= lo);
        assert!(matches!(sigma_star(0.5, 2.0, &|_| 0.1), Err(Error::NoAdmissibleDelta)));
    }

    #[test]
    fn weights() {
        let g = PotentialSpec::gaussian();
        for x in [0.0, 0.5, 2.0] {
            assert!((weight_w(&g, &[x]) - (0.25 * x * x).exp()).abs() < 1e-14 * (0.25 * x * x).exp());
            assert!(weight_w(&g, &[x]) >= (0.5 * g.minorant_value(&[x])).exp() * (1.0 - 1e-15));
        }
        let q = PotentialSpec::quartic();
        assert!((weight_w(&q, &[1.0]) - 0.5f64.exp()).abs() < 1e-14);
    }

    #[test]
    fn weighted_kernel_reduces_to_plain() {
        let k = KernelSpec::bessel(0.4, 1).unwrap().interaction();
        let flat = PotentialSpec::new(PotentialKind::Flat, Minorant::isotropic(1.0), "flat").with_unit_weight();
        let (v, g) = weighted_kernel(&k, &flat, &[0.3], &[-0.2]).unwrap();
        assert!((v - k.value(&[0.5]).unwrap()).abs() < 1e-15);
        let grad = bessel_potential_grad(2.0, 1, &[0.5 / 0.4]).unwrap()[0] / (0.4 * 0.4);
        assert!((g[0] + grad).abs() < 1e-12);
    }

    #[test]
    fn weighted_kernel_gradient_matches_finite_differences() {
        let k = KernelSpec::bessel(0.5, 2).unwrap().interaction();
        let q = PotentialSpec::quartic();
        let x = [0.2, -0.4];
        let y = [0.6, 0.1];
        let (_, g) = weighted_kernel(&k, &q, &x, &y).unwrap();
        let h = 1e-6;
        for a in 0..2 {
            let mut p = y;
            let mut m = y;
            p[a] += h;
            m[a] -= h;
            let fd = (weighted_kernel(&k, &q, &x, &p).unwrap().0 - weighted_kernel(&k, &q, &x, &m).unwrap().0) / (2.0 * h);
            assert!(((fd - g[a]) / g[a]).abs() < 1e-5);
        }
    }

    proptest! {
        #[test]
        fn weighted_kernel_symmetric(x in -2.0f64..2.0, y in -2.0f64..2.0) {
            let k = KernelSpec::bessel(0.3, 1).unwrap().interaction();
            let q = PotentialSpec::quartic();
            let a = weighted_kernel(&k, &q, &[x], &[y]).unwrap().0;
            let b = weighted_kernel(&k, &q, &[y], &[x]).unwrap().0;
            prop_assert!((a - b).abs() <= 1e-13 * a.abs().max(1.0));
        }

        #[test]
        fn gradient_points_inward(x in -5.0f64..5.0, y in -5.0f64..5.0) {
            prop_assume!(x.abs() + y.abs() > 1e-6);
            for alpha in [1.0, 2.0] {
                let g = bessel_potential_grad(alpha, 2, &[x, y]).unwrap();
                prop_assert!(g[0] * x + g[1] * y < 0.0);
            }
        }
    }
}
