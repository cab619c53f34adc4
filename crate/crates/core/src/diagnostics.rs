//! Scalar functionals on fields and trajectories: KL divergence, Stein
//! dissipations, W₁, entropy-balance residuals, decay fits, and the inequality
//! checks (commutator, kernel moments, negative-log lower bound).

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{convolve, convolve_onto, Convolver, Field};
use crate::kernels::{moment_stencil, sample_on_grid, sample_tent_on_grid, KernelSpec};
use crate::pde::{Operator, PdeVariant, TrajectoryLog, VariantTag};
use crate::potentials::PotentialSpec;

/// Cells below this density are skipped in entropy sums.
pub const DENSITY_FLOOR: f64 = 1e-300;
/// Decay fits ignore samples with KL at or below this.
pub const KL_FLOOR: f64 = 1e-12;

/// `Σ ρ log(ρ/ρ∞) h^d`.
pub fn kl_divergence(rho: &Field, rho_inf: &Field) -> Result<f64> {
    rho.check_same_grid(rho_inf)?;
    let mut s = 0.0;
    for (i, (&r, &q)) in rho.values().iter().zip(rho_inf.values()).enumerate() {
        if r < DENSITY_FLOOR {
            continue;
        }
        if q <= 0.0 {
            return Err(Error::SupportViolation { cell: i });
        }
        s += r * (r / q).ln();
    }
    Ok(s * rho.grid().cell_volume())
}

/// As [`kl_divergence`] with `log ρ∞` given directly (no underflow).
pub fn kl_divergence_log(rho: &Field, log_rho_inf: &Field) -> Result<f64> {
    rho.check_same_grid(log_rho_inf)?;
    let s: f64 = rho
        .values()
        .iter()
        .zip(log_rho_inf.values())
        .filter(|(&r, _)| r >= DENSITY_FLOOR)
        .map(|(&r, &lq)| r * (r.ln() - lq))
        .sum();
    Ok(s * rho.grid().cell_volume())
}

fn nonlocal(tag: VariantTag, kernel: &KernelSpec) -> Result<PdeVariant> {
    PdeVariant::nonlocal(tag, *kernel)
}

fn factorized(rho: &Field, kernel: &KernelSpec, potential: &PotentialSpec, tag: VariantTag) -> Result<f64> {
    let op = Operator::new(rho.grid(), nonlocal(tag, kernel)?, potential)?;
    let w = sample_on_grid(&kernel.mollifier(), rho.grid())?;
    let mut total = 0.0;
    for g in op.force(rho)? {
        total += convolve(&g, &w)?.values().iter().map(|v| v * v).sum::<f64>();
    }
    Ok(total * rho.grid().cell_volume())
}

/// `‖ω_σ ∗ G‖²` over the whole line with `G = (∇ρ + ρ∇V) e^{V-𝕍/2}` on the
/// faces. The solver's own dissipation restricts `ω_σ ∗ G` to the box.
pub fn dissipation_weighted(rho: &Field, kernel: &KernelSpec, potential: &PotentialSpec) -> Result<f64> {
    factorized(rho, kernel, potential, VariantTag::NonlocalWeighted)
}

/// `‖ω_σ ∗ (∇ρ + ρ∇V)‖²`.
pub fn dissipation_plain(rho: &Field, kernel: &KernelSpec, potential: &PotentialSpec) -> Result<f64> {
    factorized(rho, kernel, potential, VariantTag::NonlocalPlain)
}

/// `∫ G · (k_σ ∗ G)` with the interaction kernel sampled directly (tent
/// averages, see [`sample_tent_on_grid`]).
pub fn dissipation_direct(rho: &Field, kernel: &KernelSpec, potential: &PotentialSpec, weighted: bool) -> Result<f64> {
    let tag = if weighted {
        VariantTag::NonlocalWeighted
    } else {
        VariantTag::NonlocalPlain
    };
    let op = Operator::new(rho.grid(), nonlocal(tag, kernel)?, potential)?;
    let k = sample_tent_on_grid(&kernel.interaction(), rho.grid())?;
    let mut total = 0.0;
    for g in op.force(rho)? {
        let conv = Convolver::new(&k, g.grid(), g.grid())?;
        let kg = conv.apply(&g);
        total += g.values().iter().zip(kg.values()).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(total * rho.grid().cell_volume())
}

/// `‖(∇ρ + ρ∇V) e^{V-𝕍/2}‖²` (weighted) or `‖∇ρ + ρ∇V‖²` (plain).
pub fn dissipation_local(rho: &Field, potential: &PotentialSpec, weighted: bool) -> Result<f64> {
    let tag = if weighted {
        VariantTag::LocalWeighted
    } else {
        VariantTag::LocalPlain
    };
    Operator::new(rho.grid(), PdeVariant::local(tag)?, potential)?.dissipation(rho)
}

/// `∫ |F_μ - F_ν| dx` from cumulative sums (d = 1).
pub fn w1_distance_1d(mu: &Field, nu: &Field) -> Result<f64> {
    mu.check_same_grid(nu)?;
    if mu.grid().dim() != 1 {
        return Err(Error::InvalidArgument("W1 is implemented for d = 1 only".into()));
    }
    let h = mu.grid().spacing();
    let mut cum = 0.0;
    let mut total = 0.0;
    for (a, b) in mu.values().iter().zip(nu.values()) {
        cum += (a - b) * h;
        total += cum.abs();
    }
    Ok(total * h)
}

/// W₁ in d = 1, L¹ otherwise.
pub fn transport_distance(mu: &Field, nu: &Field) -> Result<f64> {
    if mu.grid().dim() == 1 {
        w1_distance_1d(mu, nu)
    } else {
        mu.l1_distance(nu)
    }
}

/// Largest `|ΔKL/Δt + D̄²| / max(D̄², 1e-8)` over the recorded intervals,
/// where `D̄²` is the time average of the per-step dissipation.
pub fn entropy_identity_residual(log: &TrajectoryLog) -> Result<f64> {
    if log.len() < 3 {
        return Err(Error::InsufficientSamples { needed: 3, have: log.len() });
    }
    let mut worst = 0.0f64;
    for k in 1..log.len() {
        let dt = log.times[k] - log.times[k - 1];
        if dt <= 0.0 {
            continue;
        }
        let dkl = (log.kl[k] - log.kl[k - 1]) / dt;
        let d2 = log.dissipation_mean[k];
        worst = worst.max((dkl + d2).abs() / d2.max(1e-8));
    }
    Ok(worst)
}

/// `D²_weighted / KL`.
pub fn slsi_ratio(rho: &Field, rho_inf: &Field, kernel: &KernelSpec, potential: &PotentialSpec) -> Result<f64> {
    let kl = kl_divergence(rho, rho_inf)?;
    if kl <= KL_FLOOR {
        return Err(Error::KlAtFloor(kl));
    }
    Ok(dissipation_weighted(rho, kernel, potential)? / kl)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    /// `-slope`, clipped at 0
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub samples: usize,
}

/// Least-squares line through `(t, ln kl)` over samples with `kl > 1e-12`.
pub fn fit_decay_rate(times: &[f64], kls: &[f64]) -> Result<DecayFit> {
    fit_decay_rate_from(times, kls, f64::NEG_INFINITY)
}

/// As [`fit_decay_rate`], using only samples with `t ≥ t_min`.
pub fn fit_decay_rate_from(times: &[f64], kls: &[f64], t_min: f64) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(kls)
        .filter(|(&t, &k)| t >= t_min && k > KL_FLOOR)
        .map(|(&t, &k)| (t, k.ln()))
        .collect();
    if pts.len() < 5 {
        return Err(Error::InsufficientSamples {
            needed: 5,
            have: pts.len(),
        });
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if stt <= 0.0 {
        return Err(Error::InvalidArgument("decay fit needs distinct times".into()));
    }
    let slope = sty / stt;
    let intercept = my - slope * mt;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy <= 1e-300 {
        1.0
    } else {
        (1.0 - sse / syy).clamp(0.0, 1.0)
    };
    Ok(DecayFit {
        rate: (-slope).max(0.0),
        intercept,
        r_squared,
        window: (pts[0].0, pts[pts.len() - 1].0),
        samples: pts.len(),
    })
}

/// `‖(fχ) ∗ ω_σ - χ (f ∗ ω_σ)‖_{L²}` on the grid of `f`.
pub fn commutator_norm(f: &Field, chi: &Field, kernel: &KernelSpec) -> Result<f64> {
    f.check_same_grid(chi)?;
    let w = sample_on_grid(&kernel.mollifier(), f.grid())?;
    let fchi = Field::from_raw(
        f.grid().clone(),
        f.values().iter().zip(chi.values()).map(|(a, b)| a * b).collect(),
    );
    let a = convolve_onto(&fchi, &w, f.grid())?;
    let b = convolve_onto(f, &w, f.grid())?;
    let diff = Field::from_raw(
        f.grid().clone(),
        a.values()
            .iter()
            .zip(b.values())
            .zip(chi.values())
            .map(|((x, y), c)| x - c * y)
            .collect(),
    );
    Ok(diff.l2_norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentCheck {
    pub measured: f64,
    pub bound: f64,
}

impl MomentCheck {
    pub fn holds(&self, slack: f64) -> bool {
        self.measured <= self.bound * (1.0 + slack)
    }
}

/// `‖ρ ∗ (|y|^r ω_σ)‖_{L²}` against `σ^{r-d/2} ‖ρ‖_{L¹} ‖|x|^r ω‖_{L²}`.
pub fn moment_norm_check(rho: &Field, r: f64, kernel: &KernelSpec) -> Result<MomentCheck> {
    let d = rho.grid().dim() as f64;
    if r < 0.5 * d {
        return Err(Error::InvalidArgument(format!("moment order {r} below d/2")));
    }
    let m = moment_stencil(&kernel.mollifier(), rho.grid(), r)?;
    let measured = convolve(rho, &m)?.l2_norm();
    let unit = kernel.with_sigma(1.0)?.mollifier().moment_l2_norm(r)?;
    let l1: f64 = rho.values().iter().map(|v| v.abs()).sum::<f64>() * rho.grid().cell_volume();
    let bound = kernel.sigma.powf(r - 0.5 * d) * l1 * unit;
    Ok(MomentCheck { measured, bound })
}

/// `min_cells [½ ρ ln ρ + ρ V + e^{-V}/e]` with `0 ln 0 = 0`.
pub fn neg_log_bound_check(rho: &Field, potential: &PotentialSpec) -> f64 {
    let g = rho.grid();
    let d = g.dim();
    rho.values()
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let v = potential.value(&g.point(i)[..d]);
            let ent = if r > 0.0 { 0.5 * r * r.ln() } else { 0.0 };
            ent + r * v + (-v - 1.0).exp()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Short hex digest of a field's grid and values.
pub fn field_digest(f: &Field) -> String {
    let mut h = Sha256::new();
    let g = f.grid();
    h.update((g.dim() as u64).to_le_bytes());
    for s in g.shape() {
        h.update((s as u64).to_le_bytes());
    }
    h.update(g.spacing().to_le_bytes());
    for v in f.values() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// One diagnostic value, as emitted to CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticRow {
    pub name: String,
    pub digest: String,
    pub value: f64,
}

impl DiagnosticRow {
    pub fn new(name: impl Into<String>, input: &Field, value: f64) -> Self {
        Self {
            name: name.into(),
            digest: field_digest(input),
            value,
        }
    }

    pub fn csv_line(&self) -> String {
        format!("{},{},{:?}", self.name, self.digest, self.value)
    }
}
