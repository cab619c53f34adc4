//! Experiment orchestration: config ingestion, studies and their CSV outputs.
//!
//! Every table is written with a versioned header comment and a plot-ready
//! long-format companion (`series,x,y`). Tables depend only on the config, so
//! identical configs give byte-identical CSV files; timings live in the
//! manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{
    dissipation_local, dissipation_plain, dissipation_weighted, fit_decay_rate_from, kl_divergence_log,
    moment_norm_check, neg_log_bound_check, slsi_ratio, transport_distance, DecayFit, DiagnosticRow,
};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::io::{load_field, write_field_csv};
use crate::kernels::{
    semigroup_error, sigma_star, sigma_star_check, verify_fourier_sandwich, FourierReport, KernelBase, KernelSpec,
    SigmaStar,
};
use crate::particles::{inverse_cdf_init, kde_density, random_init, run_particles, KernelMode, ParticleConfig};
use crate::pde::{run, PdeVariant, SolverConfig, TrajectoryLog, VariantTag};
use crate::potentials::{box_equilibrium, gaussian_bump, log_rho_infinity, PotentialSpec};

pub const PLOT_CSV_VERSION: &str = "# steinflow plot v1";
pub const SWEEP_CSV_VERSION: &str = "# steinflow sweep v1";
pub const DECAY_CSV_VERSION: &str = "# steinflow decay v1";
pub const KERNEL_CSV_VERSION: &str = "# steinflow kernel-check v1";
pub const COMPARISON_CSV_VERSION: &str = "# steinflow particle-vs-pde v1";
pub const DIAGNOSTICS_CSV_VERSION: &str = "# steinflow diagnostics v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    KernelCheck,
    SimulatePde,
    SimulateParticles,
    SweepSigma,
    DecayStudy,
    ParticleVsPde,
    Diagnose,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::KernelCheck => "kernel-check",
            Self::SimulatePde => "simulate-pde",
            Self::SimulateParticles => "simulate-particles",
            Self::SweepSigma => "sweep-sigma",
            Self::DecayStudy => "decay-study",
            Self::ParticleVsPde => "particle-vs-pde",
            Self::Diagnose => "diagnose",
        }
    }
}

/// Flat experiment description. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// may be left out when the CLI subcommand names the experiment
    pub experiment: Option<Experiment>,
    /// `quartic` or `gaussian`
    pub potential: String,
    pub variant: String,
    /// kernel base, `bessel` or `gaussian`
    pub kernel: String,
    /// particle kernel, `plain` or `weighted`
    pub kernel_mode: String,
    pub dim: usize,
    pub half_width: f64,
    pub cells: usize,
    pub sigma: f64,
    pub sigmas: Vec<f64>,
    pub t_end: f64,
    pub cfl: f64,
    pub stride: usize,
    /// 0 disables snapshots
    pub snapshot_every: usize,
    pub seed: u64,
    /// `bump` or `equilibrium`
    pub init: String,
    pub init_center: f64,
    pub init_width: f64,
    pub particles: Vec<usize>,
    /// `quantile` or `random`
    pub particle_init: String,
    pub particle_dt: Option<f64>,
    pub kde_bandwidth: f64,
    pub fit_from: f64,
    /// largest allowed max/min ratio of fitted decay rates
    pub rate_spread: f64,
    pub check_monotone: bool,
    pub semigroup_cells: Vec<usize>,
    pub semigroup_tol: f64,
    pub xi_max: f64,
    pub n_xi: usize,
    pub epsilon: f64,
    pub moment_order: f64,
    pub snapshots: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            potential: "quartic".into(),
            variant: "nonlocal_plain".into(),
            kernel: "bessel".into(),
            kernel_mode: "plain".into(),
            dim: 1,
            half_width: 8.0,
            cells: 2048,
            sigma: 0.2,
            sigmas: vec![0.4, 0.2, 0.1, 0.05],
            t_end: 0.5,
            cfl: 0.25,
            stride: 50,
            snapshot_every: 0,
            seed: 0,
            init: "bump".into(),
            init_center: 0.5,
            init_width: 0.35,
            particles: vec![500, 2000],
            particle_init: "quantile".into(),
            particle_dt: None,
            kde_bandwidth: 0.02,
            fit_from: 0.0,
            rate_spread: 1.2,
            check_monotone: true,
            semigroup_cells: vec![1024, 2048, 4096],
            semigroup_tol: 1e-3,
            xi_max: 1e4,
            n_xi: 400,
            epsilon: 0.5,
            moment_order: 1.0,
            snapshots: Vec::new(),
            out: None,
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn experiment(&self) -> Result<Experiment> {
        self.experiment.ok_or_else(|| config_err("no experiment selected"))
    }

    pub fn potential_spec(&self) -> Result<PotentialSpec> {
        match self.potential.as_str() {
            "quartic" => Ok(PotentialSpec::quartic()),
            "gaussian" => Ok(PotentialSpec::gaussian()),
            other => Err(config_err(format!("unknown potential '{other}'"))),
        }
    }

    pub fn variant_tag(&self) -> Result<VariantTag> {
        self.variant.parse().map_err(|e: Error| config_err(e.to_string()))
    }

    pub fn kernel_base(&self) -> Result<KernelBase> {
        self.kernel.parse().map_err(|e: Error| config_err(e.to_string()))
    }

    pub fn kernel_spec(&self, sigma: f64) -> Result<KernelSpec> {
        KernelSpec::new(self.kernel_base()?, sigma, self.dim).map_err(|e| config_err(e.to_string()))
    }

    pub fn particle_mode(&self) -> Result<KernelMode> {
        self.kernel_mode.parse().map_err(|e: Error| config_err(e.to_string()))
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dim, self.half_width, self.cells).map_err(|e| config_err(e.to_string()))
    }

    /// Variant for `sigma`; the kernel is ignored for local tags.
    pub fn pde_variant(&self, tag: VariantTag, sigma: f64) -> Result<PdeVariant> {
        if tag.is_nonlocal() {
            PdeVariant::nonlocal(tag, self.kernel_spec(sigma)?)
        } else {
            PdeVariant::local(tag)
        }
    }

    pub fn initial(&self, grid: &Grid) -> Result<Field> {
        match self.init.as_str() {
            "bump" => Ok(gaussian_bump(grid, self.init_center, self.init_width)),
            "equilibrium" => Ok(box_equilibrium(&self.potential_spec()?, grid)),
            other => Err(config_err(format!("unknown initial datum '{other}'"))),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let exp = self.experiment()?;
        self.potential_spec()?;
        self.kernel_base()?;
        let tag = self.variant_tag()?;
        self.particle_mode()?;
        self.grid()?;
        let check_sigma = |s: f64| {
            if s > 0.0 && s <= 1.0 {
                Ok(())
            } else {
                Err(config_err(format!("sigma {s} not in (0, 1]")))
            }
        };
        check_sigma(self.sigma)?;
        for &s in &self.sigmas {
            check_sigma(s)?;
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(config_err(format!("t_end {} must be positive", self.t_end)));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(config_err(format!("cfl {} not in (0, 1]", self.cfl)));
        }
        if self.stride == 0 {
            return Err(config_err("stride must be at least 1"));
        }
        if !matches!(self.init.as_str(), "bump" | "equilibrium") {
            return Err(config_err(format!("unknown initial datum '{}'", self.init)));
        }
        if !matches!(self.particle_init.as_str(), "quantile" | "random") {
            return Err(config_err(format!("unknown particle init '{}'", self.particle_init)));
        }
        if !(self.kde_bandwidth > 0.0) {
            return Err(config_err("kde_bandwidth must be positive"));
        }
        if let Some(dt) = self.particle_dt {
            if !(dt > 0.0) {
                return Err(config_err("particle_dt must be positive"));
            }
        }
        let sweep_like = matches!(exp, Experiment::SweepSigma | Experiment::DecayStudy);
        if sweep_like {
            if self.sigmas.is_empty() {
                return Err(config_err("sigmas must not be empty"));
            }
            if self.sigmas.windows(2).any(|w| !(w[1] < w[0])) {
                return Err(config_err("sigmas must be strictly decreasing"));
            }
        }
        match exp {
            Experiment::SweepSigma if !tag.is_nonlocal() => {
                return Err(config_err("sweep-sigma needs a nonlocal variant"));
            }
            Experiment::DecayStudy if tag != VariantTag::NonlocalWeighted => {
                return Err(config_err("decay-study needs variant = \"nonlocal_weighted\""));
            }
            Experiment::SimulateParticles | Experiment::ParticleVsPde => {
                if self.particles.is_empty() || self.particles.contains(&0) {
                    return Err(config_err("particles must list positive counts"));
                }
                if exp == Experiment::ParticleVsPde {
                    if self.dim != 1 || self.particle_mode()? != KernelMode::Plain {
                        return Err(config_err("particle-vs-pde needs dim = 1 and kernel_mode = \"plain\""));
                    }
                    if self.particles.windows(2).any(|w| !(w[1] > w[0])) {
                        return Err(config_err("particles must be strictly increasing"));
                    }
                }
            }
            Experiment::Diagnose if self.snapshots.is_empty() => {
                return Err(config_err("diagnose needs at least one snapshot file"));
            }
            Experiment::KernelCheck => {
                if self.semigroup_cells.is_empty() {
                    return Err(config_err("semigroup_cells must not be empty"));
                }
                if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
                    return Err(config_err("epsilon not in (0, 1)"));
                }
                if !(self.moment_order > 0.5 * self.dim as f64) {
                    return Err(config_err("moment_order must exceed dim/2"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Long-format plot rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotData {
    pub rows: Vec<(String, f64, f64)>,
}

impl PlotData {
    pub fn push(&mut self, series: impl Into<String>, x: f64, y: f64) {
        self.rows.push((series.into(), x, y));
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{PLOT_CSV_VERSION}\nseries,x,y\n");
        for (name, x, y) in &self.rows {
            let _ = writeln!(s, "{name},{x:?},{y:?}");
        }
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MemberTiming {
    pub label: String,
    pub runtime_seconds: f64,
}

/// Everything an experiment produces, before it is written out.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub experiment: Experiment,
    /// false when an assertion (monotonicity, rate spread, checks) fails
    pub passed: bool,
    pub notes: Vec<String>,
    /// file name and contents
    pub tables: Vec<(String, String)>,
    pub plot: PlotData,
    pub members: Vec<MemberTiming>,
    pub report: Option<serde_json::Value>,
}

impl Outcome {
    fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            passed: true,
            notes: Vec::new(),
            tables: Vec::new(),
            plot: PlotData::default(),
            members: Vec::new(),
            report: None,
        }
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t0 = Instant::now();
    let v = f();
    (v, t0.elapsed().as_secs_f64())
}

fn field_csv(f: &Field) -> Result<String> {
    let mut buf = Vec::new();
    write_field_csv(f, &mut buf)?;
    Ok(String::from_utf8(buf).expect("ascii"))
}

fn trajectory_csv(log: &TrajectoryLog) -> Result<String> {
    let mut buf = Vec::new();
    log.write_csv(&mut buf)?;
    Ok(String::from_utf8(buf).expect("ascii"))
}

fn solver_config(cfg: &ExperimentConfig, variant: PdeVariant) -> SolverConfig {
    let mut sc = SolverConfig::new(variant, cfg.t_end).with_cfl(cfg.cfl).with_stride(cfg.stride);
    if cfg.snapshot_every > 0 {
        sc = sc.with_snapshots(cfg.snapshot_every);
    }
    sc
}

/// Mass and positivity record of one solver run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunHealth {
    /// largest `|mass - 1|` over the samples
    pub mass_drift: f64,
    pub min_rho: f64,
    pub pre_clamp_floor: f64,
}

impl RunHealth {
    pub fn of(log: &TrajectoryLog) -> Self {
        Self {
            mass_drift: log.max_mass_drift(1.0),
            min_rho: log.min_rho.iter().copied().fold(f64::INFINITY, f64::min),
            pre_clamp_floor: log.min_pre_clamp_floor(),
        }
    }
}

// ---------------------------------------------------------------- kernel check

#[derive(Debug, Clone, Serialize)]
pub struct SemigroupRow {
    pub cells: usize,
    pub spacing: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SigmaStarVerification {
    pub sigma: f64,
    /// first grid point where the bound fails
    pub first_failure: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentRow {
    pub sigma: f64,
    pub measured: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelReport {
    pub base: KernelBase,
    pub sigma: f64,
    pub sandwich: FourierReport,
    pub slsi_eligible: bool,
    pub semigroup: Vec<SemigroupRow>,
    /// error ratios between consecutive refinements
    pub semigroup_ratios: Vec<f64>,
    pub semigroup_tol: f64,
    pub semigroup_passed: bool,
    pub sigma_star: Option<SigmaStar>,
    pub sigma_star_note: Option<String>,
    pub sigma_star_checks: Vec<SigmaStarVerification>,
    pub moments: Vec<MomentRow>,
}

impl KernelReport {
    /// Sandwich failure marks the base ineligible but is not a check failure.
    pub fn passed(&self) -> bool {
        self.semigroup_passed
            && self.sigma_star_checks.iter().all(|c| c.first_failure.is_none())
            && self.moments.iter().all(|m| m.holds)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{KERNEL_CSV_VERSION}\ncheck,measured,bound,passed\n");
        let sw = &self.sandwich;
        let _ = writeln!(s, "sandwich_d0,{:?},,{}", sw.d0_estimate, sw.sandwich_ok);
        let _ = writeln!(s, "sandwich_d1,{:?},,{}", sw.d1_estimate, sw.sandwich_ok);
        let _ = writeln!(s, "sandwich_witness_xi,{:?},,{}", sw.witness_xi, sw.sandwich_ok);
        let _ = writeln!(s, "sandwich_tail_slope,{:?},,{}", sw.tail_slope, sw.sandwich_ok);
        // the tolerance applies to the finest grid only
        let finest = self.semigroup.iter().map(|r| r.cells).max();
        for r in &self.semigroup {
            if Some(r.cells) == finest {
                let ok = r.error <= self.semigroup_tol;
                let _ = writeln!(s, "semigroup_n{},{:?},{:?},{ok}", r.cells, r.error, self.semigroup_tol);
            } else {
                let _ = writeln!(s, "semigroup_n{},{:?},,", r.cells, r.error);
            }
        }
        if let Some(st) = &self.sigma_star {
            let _ = writeln!(s, "sigma_star,{:?},,true", st.sigma);
        }
        for c in &self.sigma_star_checks {
            let at = c.first_failure.map(|x| format!("{x:?}")).unwrap_or_default();
            let _ = writeln!(s, "sigma_star_check_{:?},{at},,{}", c.sigma, c.first_failure.is_none());
        }
        for m in &self.moments {
            let _ = writeln!(s, "moment_sigma_{:?},{:?},{:?},{}", m.sigma, m.measured, m.bound, m.holds);
        }
        s
    }
}

/// Fourier sandwich, semigroup refinement, `σ*` with post-hoc grid checks and
/// moment-norm bounds. Failures are recorded, not raised.
pub fn run_kernel_verification(cfg: &ExperimentConfig) -> Result<KernelReport> {
    let spec = cfg.kernel_spec(cfg.sigma)?;
    // the constants belong to the unscaled base
    let sandwich = verify_fourier_sandwich(&spec.with_sigma(1.0)?, cfg.xi_max, cfg.n_xi);
    let mut semigroup = Vec::new();
    for &n in &cfg.semigroup_cells {
        let g = Grid::new(cfg.dim, cfg.half_width, n)?;
        semigroup.push(SemigroupRow {
            cells: n,
            spacing: g.spacing(),
            error: semigroup_error(&spec, &g)?,
        });
    }
    let semigroup_ratios = semigroup.windows(2).map(|w| w[0].error / w[1].error).collect();
    let finest = semigroup.iter().max_by_key(|r| r.cells).map(|r| r.error).unwrap_or(f64::INFINITY);

    let (mut star, mut note, mut checks) = (None, None, Vec::new());
    if sandwich.sandwich_ok {
        let unit = spec.with_sigma(1.0)?.interaction();
        let khat = |x: f64| unit.fourier(x);
        match sigma_star(cfg.epsilon, sandwich.d0_estimate, &khat) {
            Ok(s) => {
                for sig in [s.sigma / 2.0, s.sigma / 4.0] {
                    checks.push(SigmaStarVerification {
                        sigma: sig,
                        first_failure: sigma_star_check(&khat, cfg.epsilon, sig, 10_000, 1e3),
                    });
                }
                star = Some(s);
            }
            Err(e) => note = Some(e.to_string()),
        }
    } else {
        note = Some("sandwich fails: base is not eligible for the log-Sobolev bound".into());
    }

    let grid = cfg.grid()?;
    let rho = gaussian_bump(&grid, cfg.init_center, cfg.init_width);
    let mut moments = Vec::new();
    for sig in [cfg.sigma, cfg.sigma / 2.0, cfg.sigma / 4.0] {
        let m = moment_norm_check(&rho, cfg.moment_order, &spec.with_sigma(sig)?)?;
        moments.push(MomentRow {
            sigma: sig,
            measured: m.measured,
            bound: m.bound,
            holds: m.holds(1e-6),
        });
    }
    Ok(KernelReport {
        base: spec.base,
        sigma: cfg.sigma,
        slsi_eligible: sandwich.sandwich_ok,
        sandwich,
        semigroup,
        semigroup_ratios,
        semigroup_tol: cfg.semigroup_tol,
        semigroup_passed: finest <= cfg.semigroup_tol,
        sigma_star: star,
        sigma_star_note: note,
        sigma_star_checks: checks,
        moments,
    })
}

fn kernel_check(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new(Experiment::KernelCheck);
    let report = run_kernel_verification(cfg)?;
    out.passed = report.passed();
    if !report.slsi_eligible {
        out.notes.push(format!(
            "{:?} base fails the Fourier sandwich (witness xi = {}); SLSI-ineligible",
            report.base, report.sandwich.witness_xi
        ));
    }
    for r in &report.semigroup {
        out.plot.push("semigroup_error", r.spacing, r.error);
    }
    for m in &report.moments {
        out.plot.push("moment_measured", m.sigma, m.measured);
        out.plot.push("moment_bound", m.sigma, m.bound);
    }
    out.tables.push(("kernel_check.csv".into(), report.to_csv()));
    let json = serde_json::to_value(&report).map_err(|e| Error::Io(e.to_string()))?;
    out.tables
        .push(("kernel_report.json".into(), serde_json::to_string_pretty(&json).expect("json") + "\n"));
    out.report = Some(json);
    Ok(out)
}

// ---------------------------------------------------------------- simulate

fn simulate_pde(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new(Experiment::SimulatePde);
    let grid = cfg.grid()?;
    let potential = cfg.potential_spec()?;
    let tag = cfg.variant_tag()?;
    let rho0 = cfg.initial(&grid)?;
    let (log, secs) = timed(|| run(&solver_config(cfg, cfg.pde_variant(tag, cfg.sigma)?), &rho0, &potential));
    let log = log?;
    out.members.push(MemberTiming {
        label: tag.name().into(),
        runtime_seconds: secs,
    });
    for (i, &t) in log.times.iter().enumerate() {
        out.plot.push("kl", t, log.kl[i]);
        out.plot.push("dissipation", t, log.dissipation[i]);
        out.plot.push("mass", t, log.mass[i]);
    }
    out.notes.push(format!(
        "{} steps, mass drift {:.3e}, pre-clamp floor {:.3e}",
        log.steps,
        log.max_mass_drift(1.0),
        log.min_pre_clamp_floor()
    ));
    out.tables.push(("trajectory.csv".into(), trajectory_csv(&log)?));
    if let Some(f) = log.final_density() {
        out.tables.push(("final_density.csv".into(), field_csv(f)?));
    }
    for (k, (_, f)) in log.snapshots.iter().enumerate() {
        out.tables.push((format!("snapshot_{k:04}.csv"), field_csv(f)?));
    }
    Ok(out)
}

fn initial_ensemble(cfg: &ExperimentConfig, rho0: &Field, n: usize) -> Result<crate::particles::ParticleEnsemble> {
    match cfg.particle_init.as_str() {
        "random" => random_init(rho0, n, cfg.seed),
        _ => inverse_cdf_init(rho0, n),
    }
}

fn simulate_particles(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new(Experiment::SimulateParticles);
    let grid = cfg.grid()?;
    let potential = cfg.potential_spec()?;
    let rho0 = cfg.initial(&grid)?;
    let pc = ParticleConfig {
        mode: cfg.particle_mode()?,
        kernel: cfg.kernel_spec(cfg.sigma)?,
        t_end: cfg.t_end,
        dt: cfg.particle_dt,
    };
    if pc.mode == KernelMode::Weighted {
        out.notes.push("weighted particle mode is exploratory: no mean-field limit is known".into());
    }
    let runs: Vec<_> = cfg
        .particles
        .par_iter()
        .map(|&n| {
            timed(|| -> Result<_> {
                let ens = initial_ensemble(cfg, &rho0, n)?;
                let r = run_particles(&pc, &ens, &potential)?;
                let kde = kde_density(&r.ensemble, cfg.kde_bandwidth, &grid)?;
                Ok((r, kde))
            })
        })
        .collect();
    for (&n, (res, secs)) in cfg.particles.iter().zip(runs) {
        let (r, kde) = res?;
        out.members.push(MemberTiming {
            label: format!("N={n}"),
            runtime_seconds: secs,
        });
        let mut buf = Vec::new();
        r.ensemble.write_csv(&mut buf)?;
        out.tables.push((format!("particles_{n}.csv"), String::from_utf8(buf).expect("ascii")));
        if grid.dim() == 1 {
            for (i, v) in kde.values().iter().enumerate() {
                out.plot.push(format!("kde_N{n}"), grid.point(i)[0], *v);
            }
        }
        out.tables.push((format!("kde_{n}.csv"), field_csv(&kde)?));
        out.notes.push(format!("N={n}: {} steps of dt = {:.3e}", r.steps, r.dt));
    }
    Ok(out)
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub l1: f64,
    pub w1: f64,
    pub runtime_seconds: f64,
    pub steps: usize,
    pub health: RunHealth,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub variant: VariantTag,
    pub reference: VariantTag,
    pub reference_steps: usize,
    pub reference_health: RunHealth,
    pub reference_runtime_seconds: f64,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Columns `sigma,l1,w1` (runtimes are reported in the manifest).
    pub fn to_csv(&self) -> String {
        let mut s = format!("{SWEEP_CSV_VERSION}\nsigma,l1,w1\n");
        for r in &self.rows {
            let _ = writeln!(s, "{:?},{:?},{:?}", r.sigma, r.l1, r.w1);
        }
        s
    }

    pub fn w1_strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].w1 < w[0].w1)
    }

    pub fn l1_strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].l1 < w[0].l1)
    }
}

/// Solves the local limit once, then the nonlocal variant per `σ`, all
/// concurrently, and reports distances at `t_end` to the reference.
pub fn run_sigma_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let tag = cfg.variant_tag()?;
    if !tag.is_nonlocal() {
        return Err(config_err("sweep-sigma needs a nonlocal variant"));
    }
    let grid = cfg.grid()?;
    let potential = cfg.potential_spec()?;
    let rho0 = cfg.initial(&grid)?;
    let final_state = |log: TrajectoryLog| {
        let health = RunHealth::of(&log);
        log.final_field
            .ok_or_else(|| Error::NonFinite("run produced no final state".into()))
            .map(|f| (f, log.steps, health))
    };
    let reference_tag = tag.local_limit();
    let (reference, members) = rayon::join(
        || timed(|| run(&solver_config(cfg, PdeVariant::local(reference_tag)?), &rho0, &potential).and_then(final_state)),
        || {
            cfg.sigmas
                .par_iter()
                .map(|&s| {
                    timed(|| {
                        let v = cfg.pde_variant(tag, s)?;
                        run(&solver_config(cfg, v), &rho0, &potential).and_then(final_state)
                    })
                })
                .collect::<Vec<_>>()
        },
    );
    let ((ref_field, ref_steps, ref_health), ref_secs) = (reference.0?, reference.1);
    let mut rows = Vec::with_capacity(members.len());
    for (&sigma, (res, secs)) in cfg.sigmas.iter().zip(members) {
        let member = |e: Error| Error::SweepMember {
            sigma,
            message: e.to_string(),
        };
        let (f, steps, health) = res.map_err(member)?;
        rows.push(SweepRow {
            sigma,
            l1: f.l1_distance(&ref_field).map_err(member)?,
            w1: transport_distance(&f, &ref_field).map_err(member)?,
            runtime_seconds: secs,
            steps,
            health,
        });
    }
    Ok(SweepResult {
        variant: tag,
        reference: reference_tag,
        reference_steps: ref_steps,
        reference_health: ref_health,
        reference_runtime_seconds: ref_secs,
        rows,
    })
}

fn sweep_sigma(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new(Experiment::SweepSigma);
    let res = run_sigma_sweep(cfg)?;
    out.members.push(MemberTiming {
        label: format!("reference {}", res.reference.name()),
        runtime_seconds: res.reference_runtime_seconds,
    });
    for r in &res.rows {
        out.members.push(MemberTiming {
            label: format!("sigma={}", r.sigma),
            runtime_seconds: r.runtime_seconds,
        });
        out.plot.push("w1", r.sigma, r.w1);
        out.plot.push("l1", r.sigma, r.l1);
    }
    if cfg.check_monotone && res.rows.len() > 1 {
        let (w, l) = (res.w1_strictly_decreasing(), res.l1_strictly_decreasing());
        if !w {
            out.notes.push("W1 error is not strictly decreasing in sigma".into());
        }
        if !l {
            out.notes.push("L1 error is not strictly decreasing in sigma".into());
        }
        out.passed = w && l;
    }
    out.tables.push(("sweep.csv".into(), res.to_csv()));
    out.report = Some(serde_json::to_value(&res).map_err(|e| Error::Io(e.to_string()))?);
    Ok(out)
}

// ---------------------------------------------------------------- decay

#[derive(Debug, Clone, Serialize)]
pub struct DecayRow {
    pub sigma: f64,
    pub fit: DecayFit,
    pub max_step_kl_increase: f64,
    pub runtime_seconds: f64,
    pub health: RunHealth,
    #[serde(skip)]
    pub times: Vec<f64>,
    #[serde(skip)]
    pub kl: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayTable {
    pub rows: Vec<DecayRow>,
    /// largest over smallest fitted rate
    pub spread: f64,
    pub threshold: f64,
    pub flagged: bool,
}

impl DecayTable {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{DECAY_CSV_VERSION}\nsigma,rate,intercept,r_squared,samples,max_step_kl_increase\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:?},{:?},{:?},{:?},{},{:?}",
                r.sigma, r.fit.rate, r.fit.intercept, r.fit.r_squared, r.fit.samples, r.max_step_kl_increase
            );
        }
        s
    }
}

/// Weighted nonlocal runs per `σ` with a log-linear KL fit on each.
pub fn run_decay_study(cfg: &ExperimentConfig) -> Result<DecayTable> {
    let tag = cfg.variant_tag()?;
    if tag != VariantTag::NonlocalWeighted {
        return Err(config_err("decay-study needs variant = \"nonlocal_weighted\""));
    }
    let grid = cfg.grid()?;
    let potential = cfg.potential_spec()?;
    let rho0 = cfg.initial(&grid)?;
    let results: Vec<_> = cfg
        .sigmas
        .par_iter()
        .map(|&s| timed(|| run(&solver_config(cfg, cfg.pde_variant(tag, s)?), &rho0, &potential)))
        .collect();
    let mut rows = Vec::new();
    for (&sigma, (log, secs)) in cfg.sigmas.iter().zip(results) {
        let log = log.map_err(|e| Error::SweepMember {
            sigma,
            message: e.to_string(),
        })?;
        let fit = fit_decay_rate_from(&log.times, &log.kl, cfg.fit_from)?;
        rows.push(DecayRow {
            sigma,
            fit,
            max_step_kl_increase: log.max_step_kl_increase,
            runtime_seconds: secs,
            health: RunHealth::of(&log),
            times: log.times,
            kl: log.kl,
        });
    }
    let hi = rows.iter().map(|r| r.fit.rate).fold(f64::NEG_INFINITY, f64::max);
    let lo = rows.iter().map(|r| r.fit.rate).fold(f64::INFINITY, f64::min);
    let spread = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    Ok(DecayTable {
        rows,
        spread,
        threshold: cfg.rate_spread,
        flagged: spread > cfg.rate_spread,
    })
}

fn decay_study(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new(Experiment::DecayStudy);
    let table = run_decay_study(cfg)?;
    for r in &table.rows {
        out.members.push(MemberTiming {
            label: format!("sigma={}", r.sigma),
            runtime_seconds: r.runtime_seconds,
        });
        for (t, k) in r.times.iter().zip(&r.kl) {
            out.plot.push(format!("kl_sigma={}", r.sigma), *t, *k);
        }
    }
    if table.flagged {
        out.notes.push(format!(
            "fitted rates spread by a factor {:.3} (threshold {})",
            table.spread, table.threshold
        ));
        out.passed = false;
    }
    out.tables.push(("decay.csv".into(), table.to_csv()));
    out.report = Some(serde_json::to_value(&table).map_err(|e| Error::Io(e.to_string()))?);
    Ok(out)
}

// ---------------------------------------------------------------- particles vs PDE

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub particles: usize,
    pub w1: f64,
    pub steps: usize,
    pub dt: f64,
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub sigma: f64,
    pub t_end: f64,
    pub kde_bandwidth: f64,
    pub pde_steps: usize,
    pub pde_health: RunHealth,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{COMPARISON_CSV_VERSION}\nparticles,w1,steps,dt\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:?},{},{:?}", r.particles, r.w1, r.steps, r.dt);
        }
        s
    }

    pub fn w1_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].w1 < w[0].w1)
    }
}

/// W₁ between the KDE of `N` SVGD particles and the NonlocalPlain PDE at `t_end`.
pub fn run_particle_vs_pde(cfg: &ExperimentConfig) -> Result<ComparisonTable> {
    if cfg.dim != 1 || cfg.particle_mode()? != KernelMode::Plain {
        return Err(config_err("particle-vs-pde needs dim = 1 and kernel_mode = \"plain\""));
    }
    let grid = cfg.grid()?;
    let potential = cfg.potential_spec()?;
    let rho0 = cfg.initial(&grid)?;
    let kernel = cfg.kernel_spec(cfg.sigma)?;
    let pde = run(
        &solver_config(cfg, PdeVariant::nonlocal(VariantTag::NonlocalPlain, kernel)?),
        &rho0,
        &potential,
    )?;
    let pde_steps = pde.steps;
    let pde_health = RunHealth::of(&pde);
    let target = pde
        .final_field
        .ok_or_else(|| Error::NonFinite("run produced no final state".into()))?;
    let pc = ParticleConfig {
        mode: KernelMode::Plain,
        kernel,
        t_end: cfg.t_end,
        dt: cfg.particle_dt,
    };
    let rows = cfg
        .particles
        .par_iter()
        .map(|&n| {
            let (res, secs) = timed(|| -> Result<_> {
                let ens = initial_ensemble(cfg, &rho0, n)?;
                let r = run_particles(&pc, &ens, &potential)?;
                let kde = kde_density(&r.ensemble, cfg.kde_bandwidth, &grid)?;
                Ok((transport_distance(&kde, &target)?, r.steps, r.dt))
            });
            let (w1, steps, dt) = res?;
            Ok(ComparisonRow {
                particles: n,
                w1,
                steps,
                dt,
                runtime_seconds: secs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonTable {
        sigma: cfg.sigma,
        t_end: cfg.t_end,
        kde_bandwidth: cfg.kde_bandwidth,
        pde_steps,
        pde_health,
        rows,
    })
}

fn particle_vs_pde(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new(Experiment::ParticleVsPde);
    let table = run_particle_vs_pde(cfg)?;
    for r in &table.rows {
        out.members.push(MemberTiming {
            label: format!("N={}", r.particles),
            runtime_seconds: r.runtime_seconds,
        });
        out.plot.push("w1", r.particles as f64, r.w1);
    }
    if cfg.check_monotone && !table.w1_decreasing() {
        out.notes.push("W1 does not decrease with the particle count".into());
        out.passed = false;
    }
    out.tables.push(("particle_vs_pde.csv".into(), table.to_csv()));
    out.report = Some(serde_json::to_value(&table).map_err(|e| Error::Io(e.to_string()))?);
    Ok(out)
}

// ---------------------------------------------------------------- diagnose

/// Every diagnostic that applies to `rho`; the second list names the skipped ones.
pub fn diagnose_field(
    rho: &Field,
    potential: &PotentialSpec,
    kernel: &KernelSpec,
    moment_order: f64,
) -> (Vec<DiagnosticRow>, Vec<String>) {
    let mut rows = vec![
        DiagnosticRow::new("mass", rho, rho.mass()),
        DiagnosticRow::new("min_rho", rho, rho.min()),
    ];
    let mut skipped = Vec::new();
    let grid = rho.grid();
    let log_inf = log_rho_infinity(potential, grid);
    let eq = log_inf.map(f64::exp);
    let mut add = |name: &str, v: Result<f64>| match v {
        Ok(v) if v.is_finite() => rows.push(DiagnosticRow::new(name, rho, v)),
        Ok(v) => skipped.push(format!("{name}: non-finite value {v}")),
        Err(e) => skipped.push(format!("{name}: {e}")),
    };
    add("kl", kl_divergence_log(rho, &log_inf));
    add("dissipation_nonlocal_plain", dissipation_plain(rho, kernel, potential));
    add("dissipation_nonlocal_weighted", dissipation_weighted(rho, kernel, potential));
    add("dissipation_local_plain", dissipation_local(rho, potential, false));
    add("dissipation_local_weighted", dissipation_local(rho, potential, true));
    add("slsi_ratio", slsi_ratio(rho, &eq, kernel, potential));
    add("neg_log_margin", Ok(neg_log_bound_check(rho, potential)));
    add("transport_to_equilibrium", transport_distance(rho, &eq));
    if moment_order > 0.5 * grid.dim() as f64 {
        match moment_norm_check(rho, moment_order, kernel) {
            Ok(m) => {
                add("moment_measured", Ok(m.measured));
                add("moment_bound", Ok(m.bound));
            }
            Err(e) => add("moment_measured", Err(e)),
        }
    }
    (rows, skipped)
}

fn diagnose(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::new(Experiment::Diagnose);
    let potential = cfg.potential_spec()?;
    let mut csv = format!("{DIAGNOSTICS_CSV_VERSION}\nfile,name,digest,value\n");
    for path in &cfg.snapshots {
        let field = load_field(path).map_err(|e| match e {
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })?;
        let kernel = KernelSpec::new(cfg.kernel_base()?, cfg.sigma, field.grid().dim())?;
        let (rows, skipped) = diagnose_field(&field, &potential, &kernel, cfg.moment_order);
        let label = path.display().to_string();
        for r in &rows {
            let _ = writeln!(csv, "{label},{}", r.csv_line());
            out.plot.push(format!("{label}:{}", r.name), 0.0, r.value);
        }
        out.notes.extend(skipped.into_iter().map(|s| format!("{label}: skipped {s}")));
    }
    out.tables.push(("diagnostics.csv".into(), csv));
    Ok(out)
}

// ---------------------------------------------------------------- driver

/// Runs the configured experiment without touching the filesystem (except
/// reading snapshot files for `diagnose`).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    match cfg.experiment()? {
        Experiment::KernelCheck => kernel_check(cfg),
        Experiment::SimulatePde => simulate_pde(cfg),
        Experiment::SimulateParticles => simulate_particles(cfg),
        Experiment::SweepSigma => sweep_sigma(cfg),
        Experiment::DecayStudy => decay_study(cfg),
        Experiment::ParticleVsPde => particle_vs_pde(cfg),
        Experiment::Diagnose => diagnose(cfg),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: Experiment,
    pub config_digest: String,
    pub dim: usize,
    pub half_width: f64,
    pub cells: usize,
    pub spacing: f64,
    pub runtime_seconds: f64,
    pub members: Vec<MemberTiming>,
    pub passed: bool,
    pub notes: Vec<String>,
    pub outputs: Vec<String>,
}

/// Single collector: writes tables, `plot.csv` and `manifest.json` into `dir`.
pub fn write_outputs(cfg: &ExperimentConfig, outcome: &Outcome, dir: &Path, runtime_seconds: f64) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut outputs = Vec::new();
    for (name, contents) in &outcome.tables {
        std::fs::write(dir.join(name), contents)?;
        outputs.push(name.clone());
    }
    std::fs::write(dir.join("plot.csv"), outcome.plot.to_csv())?;
    outputs.push("plot.csv".into());
    let spacing = 2.0 * cfg.half_width / cfg.cells as f64;
    let manifest = Manifest {
        tool: "steinflow",
        version: env!("CARGO_PKG_VERSION"),
        experiment: outcome.experiment,
        config_digest: cfg.digest(),
        dim: cfg.dim,
        half_width: cfg.half_width,
        cells: cfg.cells,
        spacing,
        runtime_seconds,
        members: outcome.members.clone(),
        passed: outcome.passed,
        notes: outcome.notes.clone(),
        outputs,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(manifest)
}

/// `run_experiment` followed by [`write_outputs`].
pub fn execute(cfg: &ExperimentConfig, dir: &Path) -> Result<(Outcome, Manifest)> {
    let (outcome, secs) = timed(|| run_experiment(cfg));
    let outcome = outcome?;
    let manifest = write_outputs(cfg, &outcome, dir, secs)?;
    Ok((outcome, manifest))
}
