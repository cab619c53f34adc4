//! Confining potentials `V`, their quadratic minorants, the equilibrium
//! density `ρ∞ ∝ e^{-V}` and sampled checks of the growth conditions the
//! solvers rely on.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::quad;

/// Largest exponent passed to `exp` before the weight is treated as overflowed.
pub const LOG_WEIGHT_CLAMP: f64 = 700.0;

/// Radially symmetric potentials with closed-form derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialKind {
    /// `a |x|² / 2`
    Quadratic { a: f64 },
    /// `a |x|² / 2 + b |x|⁴ / 4`
    Quartic { a: f64, b: f64 },
    /// `exp(|x|²)`
    ExpSquare,
    /// `0`
    Flat,
}

/// `𝕍(x) = ½ (x - m)ᵀ A (x - m) + c0`
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Minorant {
    pub a: [[f64; 2]; 2],
    pub center: [f64; 2],
    pub offset: f64,
}

impl Minorant {
    /// `c |x|² / 2`
    pub fn isotropic(c: f64) -> Self {
        Self {
            a: [[c, 0.0], [0.0, c]],
            center: [0.0; 2],
            offset: 0.0,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let d = x.len();
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s += (x[i] - self.center[i]) * self.a[i][j] * (x[j] - self.center[j]);
            }
        }
        0.5 * s + self.offset
    }

    pub fn gradient(&self, x: &[f64]) -> [f64; 2] {
        let d = x.len();
        let mut g = [0.0; 2];
        for i in 0..d {
            for j in 0..d {
                g[i] += self.a[i][j] * (x[j] - self.center[j]);
            }
        }
        g
    }

    /// Smallest eigenvalue of the symmetrized `A` restricted to the first `dim` axes.
    pub fn min_eigenvalue(&self, dim: usize) -> f64 {
        if dim == 1 {
            return self.a[0][0];
        }
        let p = self.a[0][0];
        let q = self.a[1][1];
        let r = 0.5 * (self.a[0][1] + self.a[1][0]);
        0.5 * (p + q) - (0.25 * (p - q) * (p - q) + r * r).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub minorant: Minorant,
    pub label: String,
    /// Replace the weight `e^{V - 𝕍/2}` by 1 (used to compare weighted code
    /// paths against the plain ones).
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub unit_weight: bool,
}

impl PotentialSpec {
    pub fn new(kind: PotentialKind, minorant: Minorant, label: impl Into<String>) -> Self {
        Self {
            kind,
            minorant,
            label: label.into(),
            unit_weight: false,
        }
    }

    /// `V = 𝕍 = |x|²/2`
    pub fn gaussian() -> Self {
        Self::new(PotentialKind::Quadratic { a: 1.0 }, Minorant::isotropic(1.0), "gaussian")
    }

    /// `V = |x|²/2 + |x|⁴/4` with `𝕍 = |x|²/2`
    pub fn quartic() -> Self {
        Self::new(
            PotentialKind::Quartic { a: 1.0, b: 1.0 },
            Minorant::isotropic(1.0),
            "quartic",
        )
    }

    pub fn with_unit_weight(mut self) -> Self {
        self.unit_weight = true;
        self
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let r2 = norm2(x);
        match self.kind {
            PotentialKind::Quadratic { a } => 0.5 * a * r2,
            PotentialKind::Quartic { a, b } => 0.5 * a * r2 + 0.25 * b * r2 * r2,
            PotentialKind::ExpSquare => r2.exp(),
            PotentialKind::Flat => 0.0,
        }
    }

    /// `V` along a ray, `r ≥ 0`.
    pub fn radial_value(&self, r: f64) -> f64 {
        self.value(&[r])
    }

    pub fn gradient(&self, x: &[f64]) -> [f64; 2] {
        let r2 = norm2(x);
        let s = match self.kind {
            PotentialKind::Quadratic { a } => a,
            PotentialKind::Quartic { a, b } => a + b * r2,
            PotentialKind::ExpSquare => 2.0 * r2.exp(),
            PotentialKind::Flat => 0.0,
        };
        let mut g = [0.0; 2];
        for (gi, xi) in g.iter_mut().zip(x) {
            *gi = s * xi;
        }
        g
    }

    pub fn hessian(&self, x: &[f64]) -> [[f64; 2]; 2] {
        let r2 = norm2(x);
        let (iso, outer) = match self.kind {
            PotentialKind::Quadratic { a } => (a, 0.0),
            PotentialKind::Quartic { a, b } => (a + b * r2, 2.0 * b),
            PotentialKind::ExpSquare => (2.0 * r2.exp(), 4.0 * r2.exp()),
            PotentialKind::Flat => (0.0, 0.0),
        };
        let mut h = [[0.0; 2]; 2];
        for i in 0..x.len() {
            for j in 0..x.len() {
                h[i][j] = outer * x[i] * x[j] + if i == j { iso } else { 0.0 };
            }
        }
        h
    }

    pub fn minorant_value(&self, x: &[f64]) -> f64 {
        self.minorant.value(x)
    }

    /// `V - 𝕍/2`, the exponent of the weight.
    pub fn log_weight(&self, x: &[f64]) -> f64 {
        if self.unit_weight {
            0.0
        } else {
            self.value(x) - 0.5 * self.minorant.value(x)
        }
    }

    /// `∇V - ∇𝕍/2`
    pub fn log_weight_gradient(&self, x: &[f64]) -> [f64; 2] {
        if self.unit_weight {
            return [0.0; 2];
        }
        let g = self.gradient(x);
        let m = self.minorant.gradient(x);
        [g[0] - 0.5 * m[0], g[1] - 0.5 * m[1]]
    }

    /// `e^{-V}` integrated outside `[-half_width, half_width]^d`, bounded via
    /// the complement of the inscribed ball in 2D.
    pub fn tail_integral(&self, dim: usize, half_width: f64) -> f64 {
        let far = (10.0 * half_width).max(half_width + 50.0);
        let panels = 256;
        match dim {
            1 => 2.0 * quad::composite(|r| (-self.radial_value(r)).exp(), half_width, far, panels),
            _ => {
                2.0 * std::f64::consts::PI
                    * quad::composite(|r| r * (-self.radial_value(r)).exp(), half_width, far, panels)
            }
        }
    }

    /// Relative mass of `e^{-V}` outside the box.
    pub fn tail_mass(&self, dim: usize, half_width: f64) -> f64 {
        let tail = self.tail_integral(dim, half_width);
        let inside = self.box_integral(dim, half_width);
        tail / (tail + inside)
    }

    fn box_integral(&self, dim: usize, half_width: f64) -> f64 {
        let panels = 64;
        let line = quad::composite(|x| (-self.radial_value(x.abs())).exp(), -half_width, half_width, panels);
        if dim == 1 {
            line
        } else {
            quad::composite(
                |y| {
                    quad::composite(|x| (-self.value(&[x, y])).exp(), -half_width, half_width, panels)
                },
                -half_width,
                half_width,
                panels,
            )
        }
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn spectral_norm(h: &[[f64; 2]; 2], dim: usize) -> f64 {
    if dim == 1 {
        return h[0][0].abs();
    }
    let p = h[0][0];
    let q = h[1][1];
    let r = 0.5 * (h[0][1] + h[1][0]);
    let disc = (0.25 * (p - q) * (p - q) + r * r).sqrt();
    (0.5 * (p + q) + disc).abs().max((0.5 * (p + q) - disc).abs())
}

/// `log ρ∞` normalized on the grid by midpoint quadrature, without a tail check.
pub fn log_rho_infinity(spec: &PotentialSpec, grid: &Grid) -> Field {
    let mut lv: Vec<f64> = {
        let d = grid.dim();
        (0..grid.len())
            .map(|i| -spec.value(&grid.point(i)[..d]))
            .collect()
    };
    let shift = lv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = lv.iter().map(|v| (v - shift).exp()).sum::<f64>() * grid.cell_volume();
    let log_z = shift + z.ln();
    for v in &mut lv {
        *v -= log_z;
    }
    Field::from_raw(grid.clone(), lv)
}

/// Discrete equilibrium of the no-flux box (normalized on the box, no tail check).
pub fn box_equilibrium(spec: &PotentialSpec, grid: &Grid) -> Field {
    log_rho_infinity(spec, grid).map(f64::exp)
}

/// Tail tolerance used by [`rho_infinity`].
pub const TAIL_TOLERANCE: f64 = 1e-10;

/// `e^{-V(x_i)} / Z` with unit discrete mass; the box must hold all but
/// [`TAIL_TOLERANCE`] of the mass.
pub fn rho_infinity(spec: &PotentialSpec, grid: &Grid) -> Result<Field> {
    let tail = spec.tail_mass(grid.dim(), grid.half_width());
    if !(tail < TAIL_TOLERANCE) {
        return Err(Error::TailMass {
            tail,
            half_width: grid.half_width(),
            tolerance: TAIL_TOLERANCE,
        });
    }
    Ok(box_equilibrium(spec, grid))
}

/// Smallest `L = 2^k`, `0 ≤ k ≤ 10`, with relative tail mass below `tail_tol`.
pub fn box_size_for(spec: &PotentialSpec, dim: usize, tail_tol: f64) -> Result<f64> {
    let mut l = 1.0;
    while l <= 1024.0 {
        if spec.tail_mass(dim, l) < tail_tol {
            return Ok(l);
        }
        l *= 2.0;
    }
    Err(Error::BoxSearchExhausted(1024.0))
}

/// Off-centre Gaussian bump `N(center, width²)` normalized on the grid.
pub fn gaussian_bump(grid: &Grid, center: f64, width: f64) -> Field {
    let f = Field::from_fn(grid, |x| {
        let r2: f64 = x.iter().map(|v| (v - center) * (v - center)).sum();
        (-0.5 * r2 / (width * width)).exp()
    });
    let m = f.mass();
    f.map(|v| v / m)
}

/// Default initial datum: bump centred at 0.5 with width 0.35.
pub fn default_initial(grid: &Grid) -> Field {
    gaussian_bump(grid, 0.5, 0.35)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub witness: Option<Vec<f64>>,
    pub measured: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub potential: String,
    pub checks: Vec<Check>,
    pub c_v: Option<f64>,
    pub tail_mass: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    fn push(&mut self, name: &str, passed: bool, witness: Option<Vec<f64>>, measured: Option<f64>) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            witness,
            measured,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "potential {}: tail mass {:.3e}", self.potential, self.tail_mass)?;
        if let Some(c) = self.c_v {
            writeln!(f, "  C_V estimate {c:.6e}")?;
        }
        for c in &self.checks {
            write!(f, "  [{}] {}", if c.passed { "pass" } else { "FAIL" }, c.name)?;
            if let Some(m) = c.measured {
                write!(f, " measured={m:.6e}")?;
            }
            if let Some(w) = &c.witness {
                write!(f, " witness={w:?}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn grid_points(grid: &Grid) -> Vec<Vec<f64>> {
    let d = grid.dim();
    (0..grid.len()).map(|i| grid.point(i)[..d].to_vec()).collect()
}

/// Positive-definite minorant below `V`, consistent gradients, and a finite
/// entropy-plus-energy for the initial datum `rho0`.
pub fn validate_assumption_a(spec: &PotentialSpec, grid: &Grid, rho0: &Field) -> ValidationReport {
    let d = grid.dim();
    let mut report = ValidationReport {
        potential: spec.label.clone(),
        checks: Vec::new(),
        c_v: None,
        tail_mass: spec.tail_mass(d, grid.half_width()),
    };

    let lam = spec.minorant.min_eigenvalue(d);
    report.push(
        "minorant_positive_definite",
        lam > 0.0,
        (lam <= 0.0).then(|| spec.minorant.center[..d].to_vec()),
        Some(lam),
    );
    let c0 = spec.minorant.offset;
    report.push(
        "minorant_offset_nonnegative",
        c0 >= 0.0,
        (c0 < 0.0).then(|| spec.minorant.center[..d].to_vec()),
        Some(c0),
    );

    let pts = grid_points(grid);
    let (worst_gap, worst_at) = pts
        .iter()
        .map(|x| {
            let v = spec.value(x);
            let gap = (v - spec.minorant_value(x)) / (1.0 + v.abs());
            (gap, x)
        })
        .fold((f64::INFINITY, &pts[0]), |acc, it| if it.0 < acc.0 { it } else { acc });
    let ok = worst_gap >= -1e-12;
    report.push("v_above_minorant", ok, (!ok).then(|| worst_at.clone()), Some(worst_gap));

    let stride = (pts.len() / 256).max(1);
    let mut worst_rel = 0.0f64;
    let mut worst_pt = pts[0].clone();
    for x in pts.iter().step_by(stride) {
        let g = spec.gradient(x);
        for a in 0..d {
            let step = 1e-5 * x[a].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[a] += step;
            xm[a] -= step;
            let fd = (spec.value(&xp) - spec.value(&xm)) / (2.0 * step);
            let rel = (g[a] - fd).abs() / g[a].abs().max(1.0);
            if rel > worst_rel {
                worst_rel = rel;
                worst_pt = x.clone();
            }
        }
    }
    let ok = worst_rel <= 1e-4;
    report.push("gradient_consistency", ok, (!ok).then_some(worst_pt), Some(worst_rel));

    let h = grid.cell_volume();
    let mut total = 0.0;
    let mut worst = (0.0f64, 0usize);
    for (i, &r) in rho0.values().iter().enumerate() {
        let term = if r > 0.0 {
            r * r.ln().abs() + r * spec.value(&pts[i])
        } else {
            0.0
        };
        if term.abs() > worst.0 || !term.is_finite() {
            worst = (term.abs(), i);
        }
        total += term * h;
    }
    let ok = total.is_finite() && rho0.min() >= 0.0;
    report.push(
        "initial_entropy_energy_finite",
        ok,
        (!ok).then(|| pts[worst.1].clone()),
        Some(total),
    );
    report
}

/// Growth bounds on `V` and its derivatives, sampled on the grid and on
/// seeded random pairs. A constant counts as unbounded when its estimate on
/// the full box exceeds 1.5 times the one on the half box.
pub fn validate_assumption_b(spec: &PotentialSpec, p0: f64, grid: &Grid, seed: u64) -> ValidationReport {
    let d = grid.dim();
    let l = grid.half_width();
    let mut report = ValidationReport {
        potential: spec.label.clone(),
        checks: Vec::new(),
        c_v: None,
        tail_mass: spec.tail_mass(d, l),
    };
    let pts = grid_points(grid);
    let inf_norm = |x: &[f64]| x.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let (vmin, vmin_at) = pts
        .iter()
        .map(|x| (spec.value(x), x))
        .fold((f64::INFINITY, &pts[0]), |a, b| if b.0 < a.0 { b } else { a });
    report.push("nonnegative", vmin >= 0.0, (vmin < 0.0).then(|| vmin_at.clone()), Some(vmin));

    // coercivity: shell minima of V by sup-norm radius
    let shells = 16usize;
    let mut shell_min = vec![f64::INFINITY; shells];
    let mut shell_arg = vec![pts[0].clone(); shells];
    for x in &pts {
        let k = ((inf_norm(x) / l * shells as f64) as usize).min(shells - 1);
        let v = spec.value(x);
        if v < shell_min[k] {
            shell_min[k] = v;
            shell_arg[k] = x.clone();
        }
    }
    let mut coercive = shell_min[shells - 1] > shell_min[0];
    let mut witness = (!coercive).then(|| shell_arg[shells - 1].clone());
    for k in 1..shells {
        if shell_min[k] < shell_min[k - 1] - 1e-12 * (1.0 + shell_min[k - 1].abs()) {
            coercive = false;
            witness = Some(shell_arg[k].clone());
            break;
        }
    }
    report.push(
        "coercive_shells",
        coercive,
        witness,
        Some(shell_min[shells - 1] - shell_min[0]),
    );

    // gradient growth
    let grad_ratio = |x: &[f64]| {
        let g = spec.gradient(x);
        let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
        gn.powf(p0) / (1.0 + spec.value(x))
    };
    let (full, full_at, half) = max_full_and_half(&pts, l, grad_ratio);
    let bounded = full.is_finite() && full <= 1.5 * half.max(f64::MIN_POSITIVE);
    report.c_v = Some(full.max(1.0));
    report.push("gradient_growth", bounded, (!bounded).then_some(full_at), Some(full));

    // Hessian along segments
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..2000)
        .map(|_| {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-l..l)).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-l..l)).collect();
            (x, y)
        })
        .collect();
    let mut full = (0.0f64, pairs[0].0.clone());
    let mut half = 0.0f64;
    for (x, y) in &pairs {
        let mut best = 0.0f64;
        for theta in [0.0, 0.5, 1.0] {
            let z: Vec<f64> = x.iter().zip(y).map(|(a, b)| theta * a + (1.0 - theta) * b).collect();
            let hn = spectral_norm(&spec.hessian(&z), d);
            best = best.max(hn.powf(p0) / (1.0 + spec.value(x) + spec.value(y)));
        }
        if best > full.0 || !best.is_finite() {
            full = (best, x.clone());
        }
        if inf_norm(x) <= 0.5 * l && inf_norm(y) <= 0.5 * l {
            half = half.max(best);
        }
    }
    let bounded = full.0.is_finite() && full.0 <= 1.5 * half.max(f64::MIN_POSITIVE);
    report.push("hessian_segment_growth", bounded, (!bounded).then_some(full.1), Some(full.0));

    for (alpha, beta) in [(1.0, 1.0), (2.0, 1.0)] {
        let mut full = (0.0f64, pts[0].clone());
        let mut half = 0.0f64;
        for (x, _) in pairs.iter().take(500) {
            let rx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let radius = alpha * rx + beta;
            let mut best = 0.0f64;
            for _ in 0..16 {
                let dir: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let nd = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                let s = radius * rng.gen::<f64>().powf(1.0 / d as f64);
                let mut y: Vec<f64> = dir.iter().map(|v| v / nd * s).collect();
                // include the extreme radius deterministically
                if best == 0.0 {
                    y = dir.iter().map(|v| v / nd * radius * (1.0 - 1e-12)).collect();
                }
                let g = spec.gradient(&y);
                let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
                let hn = spectral_norm(&spec.hessian(&y), d);
                best = best.max((1.0 + rx) * (gn + hn) / (1.0 + spec.value(x)));
            }
            if best > full.0 || !best.is_finite() {
                full = (best, x.clone());
            }
            if inf_norm(x) <= 0.5 * l {
                half = half.max(best);
            }
        }
        let bounded = full.0.is_finite() && full.0 <= 1.5 * half.max(f64::MIN_POSITIVE);
        report.push(
            &format!("local_derivative_growth_a{alpha}_b{beta}"),
            bounded,
            (!bounded).then_some(full.1),
            Some(full.0),
        );
    }
    report
}

fn max_full_and_half<F: Fn(&[f64]) -> f64>(pts: &[Vec<f64>], l: f64, f: F) -> (f64, Vec<f64>, f64) {
    let mut full = (f64::NEG_INFINITY, pts[0].clone());
    let mut half = f64::NEG_INFINITY;
    for x in pts {
        let v = f(x);
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if v > full.0 {
            full = (v, x.clone());
        }
        if x.iter().all(|c| c.abs() <= 0.5 * l) {
            half = half.max(v);
        }
    }
    (full.0, full.1, half)
}
