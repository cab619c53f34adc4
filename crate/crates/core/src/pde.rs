//! Explicit finite-volume solvers for the nonlocal transport equations and
//! their local limits on a no-flux box.
//!
//! Every variant is written as `∂t ρ = div(m u)` on interior faces with
//!
//! * `a = ln ρ + V` at cells,
//! * `ρ_f` the logarithmic mean of the two neighbouring cells,
//! * `m_f = w_f ρ_f` and `G_f = w_f (Δρ + ρ_f ΔV) / h = w_f ρ_f Δa / h`,
//! * `u = ω_σ ∗ (ω_σ ∗ G)` for the nonlocal variants and `u = G` for the
//!   local ones,
//!
//! where `w_f = e^{V - 𝕍/2}` at the face for the weighted variants and 1 for
//! the plain ones. Nonlocal convolutions use mirror images across the walls
//! (odd in the wall-normal direction), so the nonlocal velocity vanishes on
//! the boundary and no mass is pushed into it. With this choice the
//! semi-discrete entropy balance is exact: `d/dt KL = -‖ω_σ ∗ G‖²` over the
//! box (nonlocal) or `-‖G‖²` (local), and the discrete equilibrium
//! `ρ ∝ e^{-V}` has `G ≡ 0`.

use std::f64::consts::PI;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, ReflectingConvolver};
use crate::kernels::{sample_on_grid, KernelBase, KernelSpec};
use crate::potentials::{log_rho_infinity, PotentialSpec, LOG_WEIGHT_CLAMP};

/// Pre-clamp values below this abort the run.
pub const POSITIVITY_TOLERANCE: f64 = 1e-12;
/// Densities below this on a face with a clamped weight are tolerated.
pub const CLAMP_SUPPORT_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantTag {
    NonlocalPlain,
    NonlocalWeighted,
    LocalPlain,
    LocalWeighted,
}

impl VariantTag {
    pub fn is_nonlocal(self) -> bool {
        matches!(self, Self::NonlocalPlain | Self::NonlocalWeighted)
    }

    pub fn is_weighted(self) -> bool {
        matches!(self, Self::NonlocalWeighted | Self::LocalWeighted)
    }

    /// The local limit of a nonlocal variant (identity on local ones).
    pub fn local_limit(self) -> Self {
        match self {
            Self::NonlocalPlain | Self::LocalPlain => Self::LocalPlain,
            Self::NonlocalWeighted | Self::LocalWeighted => Self::LocalWeighted,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::NonlocalPlain => "nonlocal_plain",
            Self::NonlocalWeighted => "nonlocal_weighted",
            Self::LocalPlain => "local_plain",
            Self::LocalWeighted => "local_weighted",
        }
    }
}

impl std::str::FromStr for VariantTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nonlocal_plain" => Ok(Self::NonlocalPlain),
            "nonlocal_weighted" => Ok(Self::NonlocalWeighted),
            "local_plain" => Ok(Self::LocalPlain),
            "local_weighted" => Ok(Self::LocalWeighted),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }
}

/// An equation together with its kernel (nonlocal variants only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PdeVariant {
    pub tag: VariantTag,
    pub kernel: Option<KernelSpec>,
}

impl PdeVariant {
    pub fn nonlocal(tag: VariantTag, kernel: KernelSpec) -> Result<Self> {
        if !tag.is_nonlocal() {
            return Err(Error::InvalidArgument(format!("{} takes no kernel", tag.name())));
        }
        Ok(Self {
            tag,
            kernel: Some(kernel),
        })
    }

    pub fn local(tag: VariantTag) -> Result<Self> {
        if tag.is_nonlocal() {
            return Err(Error::InvalidArgument(format!("{} needs a kernel", tag.name())));
        }
        Ok(Self { tag, kernel: None })
    }

    /// Convenience constructor with the Bessel base in dimension `dim`.
    pub fn bessel(tag: VariantTag, sigma: f64, dim: usize) -> Result<Self> {
        Self::nonlocal(tag, KernelSpec::new(KernelBase::BesselG1, sigma, dim)?)
    }

    pub fn sigma(&self) -> Option<f64> {
        self.kernel.map(|k| k.sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PositivityPolicy {
    /// Clamp values in `(-tol, 0)` to 0 and restore the mass; abort below `-tol`.
    #[default]
    ClampAndRenormalize,
    /// Abort on any negative value.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    pub variant: PdeVariant,
    pub t_end: f64,
    pub cfl: f64,
    /// record a sample every `stride` steps (and at the final time)
    pub stride: usize,
    pub positivity: PositivityPolicy,
    /// keep a copy of the field every this many recorded samples
    pub snapshot_every: Option<usize>,
    pub max_steps: usize,
}

impl SolverConfig {
    pub fn new(variant: PdeVariant, t_end: f64) -> Self {
        Self {
            variant,
            t_end,
            cfl: 0.25,
            stride: 1,
            positivity: PositivityPolicy::default(),
            snapshot_every: None,
            max_steps: 100_000_000,
        }
    }

    pub fn with_cfl(mut self, cfl: f64) -> Self {
        self.cfl = cfl;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_snapshots(mut self, every: usize) -> Self {
        self.snapshot_every = Some(every);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidArgument(format!("end time {} must be positive", self.t_end)));
        }
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return Err(Error::InvalidArgument(format!("CFL factor {} not in (0, 1)", self.cfl)));
        }
        if self.stride == 0 {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        Ok(())
    }
}

/// Logarithmic mean `(b - a)/(ln b - ln a)`, 0 when either argument is ≤ 0.
pub fn log_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        return 0.0;
    }
    let s = a + b;
    let x = (b - a) / s;
    if x.abs() < 1e-3 {
        let x2 = x * x;
        0.5 * s * (1.0 - x2 / 3.0 - 4.0 * x2 * x2 / 45.0)
    } else {
        (b - a) / (b.ln() - a.ln())
    }
}

/// Face fluxes (one field per axis, on the interior face lattices) with the
/// quantities the step-size rule and the entropy balance need.
#[derive(Debug, Clone)]
pub struct FluxEval {
    pub faces: Vec<Field>,
    /// `‖ω_σ ∗ G‖²` over the box (nonlocal) or `‖G‖²` (local)
    pub dissipation: f64,
    /// `max_f w_f² ρ_f`
    pub mobility: f64,
    /// `max_f |w_f u_f|`
    pub speed: f64,
}

/// One value per interior face, per axis.
type FaceValues = Vec<Vec<f64>>;

/// Precomputed discretization of one variant on one grid.
#[derive(Debug)]
pub struct Operator {
    grid: Grid,
    variant: PdeVariant,
    potential: PotentialSpec,
    v_cells: Vec<f64>,
    log_rho_inf: Field,
    axes: Vec<AxisData>,
    /// spectral bound of the linearized diffusion operator per unit mobility
    lambda: f64,
}

#[derive(Debug)]
struct AxisData {
    faces: Grid,
    /// `w_f`, `None` where `log w_f` exceeds the clamp
    weight: Vec<Option<f64>>,
    conv: Option<ReflectingConvolver>,
    /// cell offset between the two neighbours of a face
    stride: usize,
}

impl Operator {
    pub fn new(grid: &Grid, variant: PdeVariant, potential: &PotentialSpec) -> Result<Self> {
        let d = grid.dim();
        let h = grid.spacing();
        if let Some(k) = variant.kernel {
            if k.dim != d {
                return Err(Error::GridMismatch(format!("kernel dimension {} on a {d}-D grid", k.dim)));
            }
        }
        let weighted = variant.tag.is_weighted();
        let omega = match variant.kernel {
            Some(k) => Some(sample_on_grid(&k.mollifier(), grid)?),
            None => None,
        };
        let mut axes = Vec::with_capacity(d);
        let mut lambda = 0.0;
        for axis in 0..d {
            let faces = grid.face_lattice(axis);
            let weight = (0..faces.len())
                .map(|f| {
                    if !weighted {
                        return Some(1.0);
                    }
                    let lw = potential.log_weight(&faces.point(f)[..d]);
                    (lw <= LOG_WEIGHT_CLAMP).then(|| lw.exp())
                })
                .collect();
            let conv = match &omega {
                Some(w) => Some(ReflectingConvolver::new(w, grid, axis)?),
                None => None,
            };
            let stride = if axis == 0 { grid.shape()[1] } else { 1 };
            axes.push(AxisData {
                faces,
                weight,
                conv,
                stride,
            });
        }
        if let Some(conv) = axes.first().and_then(|a| a.conv.as_ref()) {
            // max over DFT frequencies of Σ_axes (4/h²) sin²(π m / N) |h^d ŵ|²
            let [n0, n1] = conv.torus_shape();
            let spec = conv.kernel_spectrum();
            let hd = grid.cell_volume();
            for i in 0..n0 {
                for j in 0..n1 {
                    let mut sym = (PI * i as f64 / n0 as f64).sin().powi(2);
                    if d == 2 {
                        sym += (PI * j as f64 / n1 as f64).sin().powi(2);
                    }
                    let what = spec[i * n1 + j].norm() * hd;
                    lambda = f64::max(lambda, 4.0 / (h * h) * sym * what * what);
                }
            }
        } else {
            lambda = 4.0 * d as f64 / (h * h);
        }
        let v_cells = (0..grid.len()).map(|i| potential.value(&grid.point(i)[..d])).collect();
        Ok(Self {
            grid: grid.clone(),
            variant,
            potential: potential.clone(),
            v_cells,
            log_rho_inf: log_rho_infinity(potential, grid),
            axes,
            lambda,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn variant(&self) -> PdeVariant {
        self.variant
    }

    pub fn potential(&self) -> &PotentialSpec {
        &self.potential
    }

    /// `log ρ∞` normalized on the box.
    pub fn log_rho_infinity(&self) -> &Field {
        &self.log_rho_inf
    }

    pub fn spectral_bound(&self) -> f64 {
        self.lambda
    }

    /// `G` on the faces of each axis, with the face mobilities `m = w ρ_f`.
    fn driving_force(&self, rho: &Field) -> Result<(FaceValues, FaceValues)> {
        let h = self.grid.spacing();
        let r = rho.values();
        let mut gs = Vec::with_capacity(self.axes.len());
        let mut ms = Vec::with_capacity(self.axes.len());
        for (axis, ax) in self.axes.iter().enumerate() {
            let nf = ax.faces.len();
            let mut g = vec![0.0; nf];
            let mut m = vec![0.0; nf];
            for f in 0..nf {
                let [fi, fj] = ax.faces.coords(f);
                let left = self.grid.index(fi, fj);
                let right = left + ax.stride;
                debug_assert!(axis == 1 || right == self.grid.index(fi + 1, fj));
                let rl = log_mean(r[left], r[right]);
                match ax.weight[f] {
                    Some(w) => {
                        let dv = self.v_cells[right] - self.v_cells[left];
                        g[f] = w * ((r[right] - r[left]) + rl * dv) / h;
                        m[f] = w * rl;
                    }
                    None => {
                        if rl > CLAMP_SUPPORT_TOLERANCE {
                            return Err(Error::WeightOverflow { face: f, rho: rl });
                        }
                    }
                }
            }
            gs.push(g);
            ms.push(m);
        }
        Ok((gs, ms))
    }

    /// Face fluxes of the configured variant.
    pub fn flux(&self, rho: &Field) -> Result<FluxEval> {
        if rho.grid() != &self.grid {
            return Err(Error::GridMismatch("density is not on the solver grid".into()));
        }
        let (gs, ms) = self.driving_force(rho)?;
        let hd = self.grid.cell_volume();
        let mut faces = Vec::with_capacity(gs.len());
        let mut dissipation = 0.0;
        let mut mobility = 0.0f64;
        let mut speed = 0.0f64;
        for ((ax, g), m) in self.axes.iter().zip(&gs).zip(&ms) {
            let u = match &ax.conv {
                Some(conv) => {
                    let mut half = vec![0.0; g.len()];
                    conv.apply_into(g, &mut half);
                    dissipation += half.iter().map(|v| v * v).sum::<f64>() * hd;
                    let mut u = vec![0.0; g.len()];
                    conv.apply_into(&half, &mut u);
                    u
                }
                None => {
                    dissipation += g.iter().map(|v| v * v).sum::<f64>() * hd;
                    g.clone()
                }
            };
            let mut flux = vec![0.0; g.len()];
            for f in 0..g.len() {
                flux[f] = m[f] * u[f];
                if let Some(w) = ax.weight[f] {
                    mobility = mobility.max(w * m[f]);
                    speed = speed.max((w * u[f]).abs());
                }
            }
            if flux.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("face flux".into()));
            }
            faces.push(Field::from_raw(ax.faces.clone(), flux));
        }
        Ok(FluxEval {
            faces,
            dissipation,
            mobility,
            speed,
        })
    }

    /// Dissipation only (no flux assembly).
    pub fn dissipation(&self, rho: &Field) -> Result<f64> {
        Ok(self.flux(rho)?.dissipation)
    }

    /// `ω_σ ∗ G` per axis (nonlocal variants) or `G` (local), on the faces.
    pub fn mollified_force(&self, rho: &Field) -> Result<Vec<Field>> {
        let (gs, _) = self.driving_force(rho)?;
        Ok(self
            .axes
            .iter()
            .zip(gs)
            .map(|(ax, g)| {
                let v = match &ax.conv {
                    Some(conv) => {
                        let mut half = vec![0.0; g.len()];
                        conv.apply_into(&g, &mut half);
                        half
                    }
                    None => g,
                };
                Field::from_raw(ax.faces.clone(), v)
            })
            .collect())
    }

    /// The unmollified driving force `G` per axis on the faces.
    pub fn force(&self, rho: &Field) -> Result<Vec<Field>> {
        let (gs, _) = self.driving_force(rho)?;
        Ok(self
            .axes
            .iter()
            .zip(gs)
            .map(|(ax, g)| Field::from_raw(ax.faces.clone(), g))
            .collect())
    }

    /// `θ · 2 / (M λ + 2 max|w u| / h)`, capped at `remaining`.
    pub fn stable_dt(&self, eval: &FluxEval, cfl: f64, remaining: f64) -> f64 {
        let rate = eval.mobility * self.lambda + 2.0 * eval.speed / self.grid.spacing();
        if !(rate > 0.0) {
            return remaining;
        }
        (cfl * 2.0 / rate).min(remaining)
    }
}

/// Result of one conservative update.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub rho: Field,
    /// smallest value before clamping
    pub min_pre_clamp: f64,
}

/// `ρ'_i = ρ_i + dt/h Σ_axes (F_{i+1/2} - F_{i-1/2})` with zero flux on the
/// boundary faces, followed by the positivity policy.
pub fn step(rho: &Field, flux: &[Field], dt: f64, time: f64, policy: PositivityPolicy) -> Result<StepOutcome> {
    let g = rho.grid();
    let h = g.spacing();
    let [n0, n1] = g.shape();
    let c = dt / h;
    let mut out = rho.values().to_vec();
    for (axis, f) in flux.iter().enumerate() {
        let fv = f.values();
        let fshape = f.grid().shape();
        for i in 0..n0 {
            for j in 0..n1 {
                let (pos, len) = if axis == 0 { (i, n0) } else { (j, n1) };
                let right = if pos + 1 < len { fv[i * fshape[1] + j] } else { 0.0 };
                let left = if pos > 0 {
                    if axis == 0 {
                        fv[(i - 1) * fshape[1] + j]
                    } else {
                        fv[i * fshape[1] + j - 1]
                    }
                } else {
                    0.0
                };
                out[i * n1 + j] += c * (right - left);
            }
        }
    }
    let (min_idx, min_pre) = out
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("density at t = {time}")));
    }
    if min_pre < 0.0 {
        let abort = match policy {
            PositivityPolicy::Strict => true,
            PositivityPolicy::ClampAndRenormalize => min_pre < -POSITIVITY_TOLERANCE,
        };
        if abort {
            return Err(Error::Positivity {
                cell: min_idx,
                value: min_pre,
                time,
            });
        }
        let before: f64 = out.iter().sum();
        for v in &mut out {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let after: f64 = out.iter().sum();
        if after > 0.0 {
            let s = before / after;
            for v in &mut out {
                *v *= s;
            }
        }
    }
    Ok(StepOutcome {
        rho: Field::from_raw(g.clone(), out),
        min_pre_clamp: min_pre,
    })
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrajectoryLog {
    pub variant: Option<PdeVariant>,
    pub times: Vec<f64>,
    pub mass: Vec<f64>,
    pub min_rho: Vec<f64>,
    /// smallest pre-clamp value over the steps leading to each sample
    pub min_pre_clamp: Vec<f64>,
    pub kl: Vec<f64>,
    /// dissipation at the sampled state
    pub dissipation: Vec<f64>,
    /// time average of the per-step dissipation over the preceding interval
    pub dissipation_mean: Vec<f64>,
    /// largest |flux| on the two outermost interior faces of each axis
    pub edge_flux: Vec<f64>,
    #[serde(skip)]
    pub snapshots: Vec<(f64, Field)>,
    #[serde(skip)]
    pub final_field: Option<Field>,
    pub steps: usize,
    /// largest increase of KL over a single step
    pub max_step_kl_increase: f64,
}

pub const TRAJECTORY_CSV_VERSION: &str = "# steinflow trajectory v1";

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_density(&self) -> Option<&Field> {
        self.final_field.as_ref()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{TRAJECTORY_CSV_VERSION}")?;
        writeln!(w, "time,mass,min_rho,kl,dissipation")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{:?},{:?},{:?},{:?},{:?}",
                self.times[i], self.mass[i], self.min_rho[i], self.kl[i], self.dissipation[i]
            )?;
        }
        Ok(())
    }

    /// Largest `|mass - reference|` over the samples.
    pub fn max_mass_drift(&self, reference: f64) -> f64 {
        self.mass.iter().fold(0.0, |m, v| m.max((v - reference).abs()))
    }

    pub fn min_pre_clamp_floor(&self) -> f64 {
        self.min_pre_clamp.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn edge_flux(faces: &[Field]) -> f64 {
    faces
        .iter()
        .map(|f| {
            let g = f.grid();
            let [s0, s1] = g.shape();
            let v = f.values();
            let mut m = 0.0f64;
            for idx in 0..g.len() {
                let [i, j] = g.coords(idx);
                let edge = i == 0 || i + 1 == s0 || (g.dim() == 2 && (j == 0 || j + 1 == s1));
                if edge {
                    m = m.max(v[idx].abs());
                }
            }
            m
        })
        .fold(0.0, f64::max)
}

fn log_field(rho: &Field) -> Vec<f64> {
    rho.values().iter().map(|&v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY }).collect()
}

fn kl_from_log(rho: &Field, log_rho: &[f64], log_inf: &Field) -> f64 {
    let hd = rho.grid().cell_volume();
    rho.values()
        .iter()
        .zip(log_rho)
        .zip(log_inf.values())
        .filter(|((&r, _), _)| r >= 1e-300)
        .map(|((&r, &lr), &li)| r * (lr - li))
        .sum::<f64>()
        * hd
}

/// Checks the initial datum: nonnegative, finite, unit mass.
pub fn validate_initial(rho0: &Field) -> Result<()> {
    if rho0.min() < 0.0 {
        return Err(Error::InvalidArgument(format!("initial density has negative value {}", rho0.min())));
    }
    let m = rho0.mass();
    if (m - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidArgument(format!("initial density has mass {m}, expected 1")));
    }
    Ok(())
}

/// Advances `rho0` to `config.t_end`, recording diagnostics.
pub fn run(config: &SolverConfig, rho0: &Field, potential: &PotentialSpec) -> Result<TrajectoryLog> {
    let op = Operator::new(rho0.grid(), config.variant, potential)?;
    run_with(&op, config, rho0)
}

/// As [`run`], reusing a prepared [`Operator`].
pub fn run_with(op: &Operator, config: &SolverConfig, rho0: &Field) -> Result<TrajectoryLog> {
    config.validate()?;
    validate_initial(rho0)?;
    if op.variant() != config.variant {
        return Err(Error::InvalidArgument("operator and config variants differ".into()));
    }
    let log_inf = op.log_rho_infinity().clone();
    let mut log = TrajectoryLog {
        variant: Some(config.variant),
        ..Default::default()
    };
    let mut rho = rho0.clone();
    let mut lr = log_field(&rho);
    let mut kl = kl_from_log(&rho, &lr, &log_inf);
    let mut eval = op.flux(&rho)?;
    let mut t = 0.0;
    let record = |log: &mut TrajectoryLog, t: f64, rho: &Field, kl: f64, eval: &FluxEval, mean: f64, pre: f64| {
        log.times.push(t);
        log.mass.push(rho.mass());
        log.min_rho.push(rho.min());
        log.min_pre_clamp.push(pre);
        log.kl.push(kl);
        log.dissipation.push(eval.dissipation);
        log.dissipation_mean.push(mean);
        log.edge_flux.push(edge_flux(&eval.faces));
        if let Some(every) = config.snapshot_every {
            if (log.times.len() - 1).is_multiple_of(every.max(1)) {
                log.snapshots.push((t, rho.clone()));
            }
        }
    };
    record(&mut log, t, &rho, kl, &eval, eval.dissipation, rho.min());
    let mut acc = 0.0;
    let mut acc_t = 0.0;
    let mut pre_min = f64::INFINITY;
    let mut steps = 0usize;
    while t < config.t_end {
        if steps >= config.max_steps {
            return Err(Error::InvalidArgument(format!(
                "step budget of {} exhausted at t = {t}",
                config.max_steps
            )));
        }
        let remaining = config.t_end - t;
        let dt = op.stable_dt(&eval, config.cfl, remaining);
        let out = step(&rho, &eval.faces, dt, t, config.positivity)?;
        acc += eval.dissipation * dt;
        acc_t += dt;
        pre_min = pre_min.min(out.min_pre_clamp);
        t = if dt >= remaining { config.t_end } else { t + dt };
        steps += 1;
        rho = out.rho;
        lr = log_field(&rho);
        let new_kl = kl_from_log(&rho, &lr, &log_inf);
        log.max_step_kl_increase = log.max_step_kl_increase.max(new_kl - kl);
        kl = new_kl;
        eval = op.flux(&rho)?;
        if steps.is_multiple_of(config.stride) || t >= config.t_end {
            record(&mut log, t, &rho, kl, &eval, acc / acc_t, pre_min);
            acc = 0.0;
            acc_t = 0.0;
            pre_min = f64::INFINITY;
        }
    }
    log.steps = steps;
    log.final_field = Some(rho);
    Ok(log)
}

fn single_flux(rho: &Field, variant: PdeVariant, potential: &PotentialSpec) -> Result<Vec<Field>> {
    Ok(Operator::new(rho.grid(), variant, potential)?.flux(rho)?.faces)
}

/// Face fluxes of the plain nonlocal equation.
pub fn flux_nonlocal_plain(rho: &Field, kernel: &KernelSpec, potential: &PotentialSpec) -> Result<Vec<Field>> {
    single_flux(rho, PdeVariant::nonlocal(VariantTag::NonlocalPlain, *kernel)?, potential)
}

/// Face fluxes of the weighted nonlocal equation.
pub fn flux_nonlocal_weighted(rho: &Field, kernel: &KernelSpec, potential: &PotentialSpec) -> Result<Vec<Field>> {
    single_flux(rho, PdeVariant::nonlocal(VariantTag::NonlocalWeighted, *kernel)?, potential)
}

/// Face fluxes of the plain local limit `div(ρ² ∇(ln ρ + V))`.
pub fn flux_local_plain(rho: &Field, potential: &PotentialSpec) -> Result<Vec<Field>> {
    single_flux(rho, PdeVariant::local(VariantTag::LocalPlain)?, potential)
}

/// Face fluxes of the weighted local limit `div(ρ² e^{2V-𝕍} ∇(ln ρ + V))`.
pub fn flux_local_weighted(rho: &Field, potential: &PotentialSpec) -> Result<Vec<Field>> {
    single_flux(rho, PdeVariant::local(VariantTag::LocalWeighted)?, potential)
}

/// Step size at the current state for `variant`, capped at `t_end`.
pub fn stable_dt(rho: &Field, variant: PdeVariant, potential: &PotentialSpec, cfl: f64, t_end: f64) -> Result<f64> {
    let op = Operator::new(rho.grid(), variant, potential)?;
    let eval = op.flux(rho)?;
    Ok(op.stable_dt(&eval, cfl, t_end))
}
