//! C interface to the steinflow solvers and diagnostics.
//!
//! Every function returns an [`SfStatus`]; on failure the message is available
//! from [`sf_last_error`] on the same thread. Handles are created by `*_new`
//! and released by the matching `*_free`. Densities are plain `double` arrays
//! of [`sf_grid_len`] values in row-major cell order.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use steinflow::diagnostics::{dissipation_local, dissipation_plain, dissipation_weighted, kl_divergence_log, w1_distance_1d};
use steinflow::kernels::{bessel_k_nu, KernelSpec};
use steinflow::particles::{svgd_velocity, KernelMode, ParticleEnsemble};
use steinflow::pde::{run, PdeVariant, SolverConfig, VariantTag};
use steinflow::potentials::{log_rho_infinity, PotentialSpec};
use steinflow::{Error, Field, Grid};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// grid construction or grid/array size mismatch
    Grid = 3,
    /// kernel under-resolved or singular
    Kernel = 4,
    Positivity = 5,
    /// non-finite values, weight overflow, support violations
    Numeric = 6,
    Io = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfVariant {
    NonlocalPlain = 0,
    NonlocalWeighted = 1,
    LocalPlain = 2,
    LocalWeighted = 3,
}

impl From<SfVariant> for VariantTag {
    fn from(v: SfVariant) -> Self {
        match v {
            SfVariant::NonlocalPlain => VariantTag::NonlocalPlain,
            SfVariant::NonlocalWeighted => VariantTag::NonlocalWeighted,
            SfVariant::LocalPlain => VariantTag::LocalPlain,
            SfVariant::LocalWeighted => VariantTag::LocalWeighted,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfPotentialKind {
    /// `V = x²/2 + x⁴/4`
    Quartic = 0,
    /// `V = x²/2`
    Gaussian = 1,
}

/// Summary of a solver run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SfRunSummary {
    pub steps: u64,
    pub samples: u64,
    pub final_kl: f64,
    pub max_mass_drift: f64,
    pub min_pre_clamp: f64,
}

pub struct SfGrid(Grid);

pub struct SfPotential(PotentialSpec);

pub struct SfSolver {
    grid: Grid,
    potential: PotentialSpec,
    variant: PdeVariant,
    cfl: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SfStatus {
    match e {
        Error::InvalidGrid(_) | Error::GridMismatch(_) | Error::TailMass { .. } | Error::BoxSearchExhausted(_) => {
            SfStatus::Grid
        }
        Error::SingularEvaluation(_) | Error::UnderResolvedKernel { .. } | Error::UnsupportedOrder(_) => {
            SfStatus::Kernel
        }
        Error::Positivity { .. } => SfStatus::Positivity,
        Error::NonFinite(_) | Error::WeightOverflow { .. } | Error::SupportViolation { .. } | Error::KlAtFloor(_) => {
            SfStatus::Numeric
        }
        Error::Io(_) | Error::Parse { .. } => SfStatus::Io,
        _ => SfStatus::InvalidArgument,
    }
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (SfStatus, String)>) -> SfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SfStatus::Ok
        }
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            SfStatus::Panic
        }
    }
}

fn lift<T>(r: steinflow::Result<T>) -> Result<T, (SfStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (SfStatus, String) {
    (SfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (SfStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn field_from(grid: &Grid, ptr: *const f64, len: usize, what: &str) -> Result<Field, (SfStatus, String)> {
    if ptr.is_null() {
        return Err(null(what));
    }
    if len != grid.len() {
        return Err((SfStatus::Grid, format!("{what} has {len} values, grid has {}", grid.len())));
    }
    lift(Field::new(grid.clone(), std::slice::from_raw_parts(ptr, len).to_vec()))
}

unsafe fn write_out<T>(out: *mut T, v: T, what: &str) -> Result<(), (SfStatus, String)> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = v;
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn sf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Uniform box `[-half_width, half_width]^dim` with `cells` cells per axis.
///
/// # Safety
/// `out` must be valid for writing a pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_grid_new(dim: usize, half_width: f64, cells: usize, out: *mut *mut SfGrid) -> SfStatus {
    guard(|| {
        let g = lift(Grid::new(dim, half_width, cells))?;
        write_out(out, Box::into_raw(Box::new(SfGrid(g))), "out")
    })
}

/// # Safety
/// `grid` must come from [`sf_grid_new`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sf_grid_free(grid: *mut SfGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Number of cells, or 0 for a null handle.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_grid_len(grid: *const SfGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.len())
}

/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sf_grid_spacing(grid: *const SfGrid) -> f64 {
    grid.as_ref().map_or(f64::NAN, |g| g.0.spacing())
}

/// Cell centres along the first axis (`cells` values).
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sf_grid_centres(grid: *const SfGrid, out: *mut f64, len: usize) -> SfStatus {
    guard(|| {
        let g = &deref(grid, "grid")?.0;
        let n = g.cells_per_axis();
        if out.is_null() {
            return Err(null("out"));
        }
        if len != n {
            return Err((SfStatus::Grid, format!("buffer holds {len} values, axis has {n}")));
        }
        let s = std::slice::from_raw_parts_mut(out, len);
        for (i, v) in s.iter_mut().enumerate() {
            *v = g.point(g.index(i, 0))[0];
        }
        Ok(())
    })
}

/// # Safety
/// `out` must be valid for writing a pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_potential_new(kind: SfPotentialKind, out: *mut *mut SfPotential) -> SfStatus {
    guard(|| {
        let p = match kind {
            SfPotentialKind::Quartic => PotentialSpec::quartic(),
            SfPotentialKind::Gaussian => PotentialSpec::gaussian(),
        };
        write_out(out, Box::into_raw(Box::new(SfPotential(p))), "out")
    })
}

/// # Safety
/// `potential` must come from [`sf_potential_new`]. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sf_potential_free(potential: *mut SfPotential) {
    if !potential.is_null() {
        drop(Box::from_raw(potential));
    }
}

/// Discrete equilibrium `∝ e^{-V}` on the grid.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sf_equilibrium(
    grid: *const SfGrid,
    potential: *const SfPotential,
    out: *mut f64,
    len: usize,
) -> SfStatus {
    guard(|| {
        let g = &deref(grid, "grid")?.0;
        let p = &deref(potential, "potential")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        if len != g.len() {
            return Err((SfStatus::Grid, format!("buffer holds {len} values, grid has {}", g.len())));
        }
        let eq = log_rho_infinity(p, g).map(f64::exp);
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(eq.values());
        Ok(())
    })
}

fn variant(v: SfVariant, sigma: f64, dim: usize) -> steinflow::Result<PdeVariant> {
    let tag = VariantTag::from(v);
    if tag.is_nonlocal() {
        PdeVariant::bessel(tag, sigma, dim)
    } else {
        PdeVariant::local(tag)
    }
}

/// Solver for one equation with the Bessel kernel of bandwidth `sigma`
/// (ignored by local variants). The grid and potential are copied.
///
/// # Safety
/// Handles must be live; `out` must be valid for writing a pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_solver_new(
    grid: *const SfGrid,
    potential: *const SfPotential,
    kind: SfVariant,
    sigma: f64,
    cfl: f64,
    out: *mut *mut SfSolver,
) -> SfStatus {
    guard(|| {
        let g = &deref(grid, "grid")?.0;
        let p = &deref(potential, "potential")?.0;
        let v = lift(variant(kind, sigma, g.dim()))?;
        lift(SolverConfig::new(v, 1.0).with_cfl(cfl).validate())?;
        let s = SfSolver {
            grid: g.clone(),
            potential: p.clone(),
            variant: v,
            cfl,
        };
        write_out(out, Box::into_raw(Box::new(s)), "out")
    })
}

/// # Safety
/// `solver` must come from [`sf_solver_new`]. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sf_solver_free(solver: *mut SfSolver) {
    if !solver.is_null() {
        drop(Box::from_raw(solver));
    }
}

/// Evolves `rho0` to `t_end` and writes the final density to `rho_out`.
/// `summary` may be null.
///
/// # Safety
/// `rho0` and `rho_out` must each hold `len` doubles; they may alias.
#[no_mangle]
pub unsafe extern "C" fn sf_solver_run(
    solver: *const SfSolver,
    rho0: *const f64,
    rho_out: *mut f64,
    len: usize,
    t_end: f64,
    summary: *mut SfRunSummary,
) -> SfStatus {
    guard(|| {
        let s = deref(solver, "solver")?;
        let f0 = field_from(&s.grid, rho0, len, "rho0")?;
        if rho_out.is_null() {
            return Err(null("rho_out"));
        }
        let cfg = SolverConfig::new(s.variant, t_end).with_cfl(s.cfl).with_stride(usize::MAX);
        let log = lift(run(&cfg, &f0, &s.potential))?;
        let last = lift(log.final_density().cloned().ok_or_else(|| Error::NonFinite("empty run".into())))?;
        std::slice::from_raw_parts_mut(rho_out, len).copy_from_slice(last.values());
        if !summary.is_null() {
            *summary = SfRunSummary {
                steps: log.steps as u64,
                samples: log.len() as u64,
                final_kl: log.kl.last().copied().unwrap_or(f64::NAN),
                max_mass_drift: log.max_mass_drift(1.0),
                min_pre_clamp: log.min_pre_clamp_floor(),
            };
        }
        Ok(())
    })
}

/// `KL(ρ ‖ ρ∞)` against the discrete equilibrium of `potential`.
///
/// # Safety
/// `rho` must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_kl_divergence(
    grid: *const SfGrid,
    potential: *const SfPotential,
    rho: *const f64,
    len: usize,
    out: *mut f64,
) -> SfStatus {
    guard(|| {
        let g = &deref(grid, "grid")?.0;
        let p = &deref(potential, "potential")?.0;
        let f = field_from(g, rho, len, "rho")?;
        write_out(out, lift(kl_divergence_log(&f, &log_rho_infinity(p, g)))?, "out")
    })
}

/// Dissipation of `rho` for the selected equation.
///
/// # Safety
/// `rho` must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_dissipation(
    grid: *const SfGrid,
    potential: *const SfPotential,
    kind: SfVariant,
    sigma: f64,
    rho: *const f64,
    len: usize,
    out: *mut f64,
) -> SfStatus {
    guard(|| {
        let g = &deref(grid, "grid")?.0;
        let p = &deref(potential, "potential")?.0;
        let f = field_from(g, rho, len, "rho")?;
        let kernel = || KernelSpec::bessel(sigma, g.dim());
        let d = match kind {
            SfVariant::LocalPlain => dissipation_local(&f, p, false),
            SfVariant::LocalWeighted => dissipation_local(&f, p, true),
            SfVariant::NonlocalPlain => kernel().and_then(|k| dissipation_plain(&f, &k, p)),
            SfVariant::NonlocalWeighted => kernel().and_then(|k| dissipation_weighted(&f, &k, p)),
        };
        write_out(out, lift(d)?, "out")
    })
}

/// W₁ distance between two one-dimensional densities.
///
/// # Safety
/// `a` and `b` must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_w1_distance(
    grid: *const SfGrid,
    a: *const f64,
    b: *const f64,
    len: usize,
    out: *mut f64,
) -> SfStatus {
    guard(|| {
        let g = &deref(grid, "grid")?.0;
        let fa = field_from(g, a, len, "a")?;
        let fb = field_from(g, b, len, "b")?;
        write_out(out, lift(w1_distance_1d(&fa, &fb))?, "out")
    })
}

/// Modified Bessel function of the second kind `K_ν(x)`, for integer and
/// half-integer `ν`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_bessel_k(nu: f64, x: f64, out: *mut f64) -> SfStatus {
    guard(|| write_out(out, lift(bessel_k_nu(nu, x))?, "out"))
}

/// Plain SVGD velocities of `n` particles on the line with the Bessel kernel.
///
/// # Safety
/// `x` and `v_out` must each hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn sf_svgd_velocity(
    potential: *const SfPotential,
    sigma: f64,
    x: *const f64,
    n: usize,
    v_out: *mut f64,
) -> SfStatus {
    guard(|| {
        let p = &deref(potential, "potential")?.0;
        if x.is_null() {
            return Err(null("x"));
        }
        if v_out.is_null() {
            return Err(null("v_out"));
        }
        let ens = lift(ParticleEnsemble::from_1d(std::slice::from_raw_parts(x, n)))?;
        let k = lift(KernelSpec::bessel(sigma, 1))?;
        let v = lift(svgd_velocity(&ens, KernelMode::Plain, &k, p))?;
        let out = std::slice::from_raw_parts_mut(v_out, n);
        for (o, vi) in out.iter_mut().zip(v) {
            *o = vi[0];
        }
        Ok(())
    })
}
