//! Uniform lattices, scalar fields on them, midpoint quadrature, finite
//! differences and zero-padded FFT convolution.
//!
//! A [`Grid`] is any uniform lattice of cells with spacing `h`. The simulation
//! box `[-L, L]^d` is one such lattice (cell centres at `-L + (i + 1/2) h`);
//! kernel stencils (cells centred at integer multiples of `h`) and the interior
//! face lattices used by the finite-volume fluxes are others. Convolving fields
//! on two lattices with the same spacing lands on their Minkowski-sum lattice.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

const ALIGN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    shape: [usize; 2],
    spacing: f64,
    origin: [f64; 2],
}

impl Grid {
    /// The simulation box `[-half_width, half_width]^dim` with `cells` cells per axis.
    pub fn new(dim: usize, half_width: f64, cells: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in {{1, 2}}")));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidGrid(format!("half-width {half_width} must be positive")));
        }
        if cells < 8 || !cells.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "cells per axis {cells} must be a power of two >= 8"
            )));
        }
        let h = 2.0 * half_width / cells as f64;
        let first = -half_width + 0.5 * h;
        let (shape, origin) = if dim == 1 {
            ([cells, 1], [first, 0.0])
        } else {
            ([cells, cells], [first, first])
        };
        Ok(Self {
            dim,
            shape,
            spacing: h,
            origin,
        })
    }

    /// A general lattice: `shape[a]` cells along axis `a`, first cell centre at `origin`.
    pub fn lattice(dim: usize, spacing: f64, shape: [usize; 2], origin: [f64; 2]) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in {{1, 2}}")));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing {spacing} must be positive")));
        }
        if shape[0] == 0 || shape[1] == 0 || (dim == 1 && shape[1] != 1) {
            return Err(Error::InvalidGrid(format!("bad lattice shape {shape:?}")));
        }
        let origin = if dim == 1 { [origin[0], 0.0] } else { origin };
        Ok(Self {
            dim,
            shape,
            spacing,
            origin,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    /// Cells along the first axis.
    pub fn cells_per_axis(&self) -> usize {
        self.shape[0]
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    /// Half the extent of the lattice along the first axis (`L` for the box).
    pub fn half_width(&self) -> f64 {
        0.5 * self.shape[0] as f64 * self.spacing
    }

    pub fn len(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `h^d`
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.shape[1] + j
    }

    pub fn coords(&self, idx: usize) -> [usize; 2] {
        [idx / self.shape[1], idx % self.shape[1]]
    }

    /// Centre of cell `idx`; the second entry is zero in 1D.
    pub fn point(&self, idx: usize) -> [f64; 2] {
        let [i, j] = self.coords(idx);
        let x = self.origin[0] + i as f64 * self.spacing;
        if self.dim == 1 {
            [x, 0.0]
        } else {
            [x, self.origin[1] + j as f64 * self.spacing]
        }
    }

    /// Offsets `m h` covering every pairwise difference of cell centres of
    /// this lattice: `2 n - 1` cells per axis centred on the origin.
    pub fn kernel_stencil(&self) -> Grid {
        let mut shape = [1, 1];
        let mut origin = [0.0, 0.0];
        for a in 0..self.dim {
            shape[a] = 2 * self.shape[a] - 1;
            origin[a] = -((self.shape[a] - 1) as f64) * self.spacing;
        }
        Grid {
            dim: self.dim,
            shape,
            spacing: self.spacing,
            origin,
        }
    }

    /// Interior faces normal to `axis` (boundary faces carry no flux).
    pub fn face_lattice(&self, axis: usize) -> Grid {
        assert!(axis < self.dim);
        let mut shape = self.shape;
        let mut origin = self.origin;
        shape[axis] -= 1;
        origin[axis] += 0.5 * self.spacing;
        Grid {
            dim: self.dim,
            shape,
            spacing: self.spacing,
            origin,
        }
    }

    fn same_spacing(&self, other: &Grid) -> bool {
        self.dim == other.dim && (self.spacing - other.spacing).abs() <= 1e-12 * self.spacing
    }

    /// Integer cell offset of `other`'s origin relative to this lattice.
    pub fn offset_of(&self, other: &Grid) -> Option<[i64; 2]> {
        if !self.same_spacing(other) {
            return None;
        }
        let mut out = [0i64; 2];
        for a in 0..self.dim {
            let s = (other.origin[a] - self.origin[a]) / self.spacing;
            let r = s.round();
            if (s - r).abs() > ALIGN_TOL {
                return None;
            }
            out[a] = r as i64;
        }
        Some(out)
    }
}

/// Scalar values, one per cell of a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} cells",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("field value at cell {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self {
            values: vec![0.0; grid.len()],
            grid: grid.clone(),
        }
    }

    /// Samples `f` at cell centres. The closure receives a slice of length `dim`.
    pub fn from_fn<F: Fn(&[f64]) -> f64>(grid: &Grid, f: F) -> Self {
        let d = grid.dim();
        let values = (0..grid.len())
            .map(|idx| {
                let p = grid.point(idx);
                f(&p[..d])
            })
            .collect();
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(grid.len(), values.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mass(&self) -> f64 {
        integrate(self)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Field {
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Rescaled copy with unit mass.
    pub fn normalized(&self) -> Result<Field> {
        let m = self.mass();
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::InvalidArgument(format!("cannot normalize a field of mass {m}")));
        }
        Ok(self.map(|v| v / m))
    }

    /// Max-norm of the difference; the grids must match.
    pub fn max_abs_diff(&self, other: &Field) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// `∫ |f - g|` by midpoint quadrature.
    pub fn l1_distance(&self, other: &Field) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.grid.cell_volume())
    }

    /// `(∫ f^2)^{1/2}` by midpoint quadrature.
    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    pub fn check_same_grid(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid.shape(),
                other.grid.shape()
            )));
        }
        Ok(())
    }
}

/// Midpoint rule: `Σ f_i h^d`.
pub fn integrate(f: &Field) -> f64 {
    f.values.iter().sum::<f64>() * f.grid.cell_volume()
}

/// Per-axis derivative: central differences inside, one-sided at the two
/// boundary cells of each axis.
pub fn gradient(f: &Field) -> Vec<Field> {
    let g = &f.grid;
    let [n0, n1] = g.shape();
    let h = g.spacing();
    (0..g.dim())
        .map(|axis| {
            let (n, stride) = if axis == 0 { (n0, n1) } else { (n1, 1) };
            let mut out = vec![0.0; g.len()];
            for (idx, slot) in out.iter_mut().enumerate() {
                let c = g.coords(idx)[axis];
                let v = &f.values;
                *slot = if n < 2 {
                    0.0
                } else if c == 0 {
                    (v[idx + stride] - v[idx]) / h
                } else if c == n - 1 {
                    (v[idx] - v[idx - stride]) / h
                } else {
                    (v[idx + stride] - v[idx - stride]) / (2.0 * h)
                };
            }
            Field::from_raw(g.clone(), out)
        })
        .collect()
}

/// Full linear convolution `∫ f(x - y) g(y) dy`, evaluated on the lattice
/// whose cell centres are the pairwise sums of the inputs' centres.
pub fn convolve(f: &Field, g: &Field) -> Result<Field> {
    let out = full_lattice(f.grid(), g.grid())?;
    let conv = Convolver::new(g, f.grid(), &out)?;
    Ok(conv.apply(f))
}

/// Linear convolution sampled on `target`, which must lie on the same lattice
/// as the full convolution output (cells outside the support read as zero).
pub fn convolve_onto(f: &Field, g: &Field, target: &Grid) -> Result<Field> {
    let conv = Convolver::new(g, f.grid(), target)?;
    Ok(conv.apply(f))
}

fn full_lattice(a: &Grid, b: &Grid) -> Result<Grid> {
    if !a.same_spacing(b) {
        return Err(Error::GridMismatch(format!(
            "spacings {} and {} (dims {} and {})",
            a.spacing, b.spacing, a.dim, b.dim
        )));
    }
    let mut shape = [1, 1];
    let mut origin = [0.0, 0.0];
    for ax in 0..a.dim {
        shape[ax] = a.shape[ax] + b.shape[ax] - 1;
        origin[ax] = a.origin[ax] + b.origin[ax];
    }
    Grid::lattice(a.dim, a.spacing, shape, origin)
}

/// Repeated convolution of fields on a fixed input lattice with a fixed
/// kernel, with the kernel spectrum and FFT plans cached.
pub struct Convolver {
    input: Grid,
    output: Grid,
    fft_shape: [usize; 2],
    /// offset of the output lattice inside the full-convolution lattice
    offset: [i64; 2],
    spectrum: Vec<Complex64>,
    forward: [Arc<dyn Fft<f64>>; 2],
    inverse: [Arc<dyn Fft<f64>>; 2],
    scale: f64,
}

impl std::fmt::Debug for Convolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Convolver")
            .field("input", &self.input.shape())
            .field("output", &self.output.shape())
            .field("fft_shape", &self.fft_shape)
            .finish()
    }
}

impl Convolver {
    pub fn new(kernel: &Field, input: &Grid, output: &Grid) -> Result<Self> {
        let full = full_lattice(input, kernel.grid())?;
        let offset = full
            .offset_of(output)
            .ok_or_else(|| Error::GridMismatch("output lattice not aligned with convolution lattice".into()))?;
        let dim = input.dim();
        let mut fft_shape = [1, 1];
        for a in 0..dim {
            fft_shape[a] = full.shape()[a].next_power_of_two();
        }
        let mut planner = FftPlanner::<f64>::new();
        let forward = [planner.plan_fft_forward(fft_shape[0]), planner.plan_fft_forward(fft_shape[1])];
        let inverse = [planner.plan_fft_inverse(fft_shape[0]), planner.plan_fft_inverse(fft_shape[1])];
        let total = fft_shape[0] * fft_shape[1];
        let mut spectrum = vec![Complex64::new(0.0, 0.0); total];
        scatter(kernel.values(), kernel.grid().shape(), &mut spectrum, fft_shape);
        fft2(&mut spectrum, fft_shape, &forward);
        let scale = input.cell_volume() / total as f64;
        Ok(Self {
            input: input.clone(),
            output: output.clone(),
            fft_shape,
            offset,
            spectrum,
            forward,
            inverse,
            scale,
        })
    }

    pub fn input(&self) -> &Grid {
        &self.input
    }

    pub fn output(&self) -> &Grid {
        &self.output
    }

    pub fn fft_shape(&self) -> [usize; 2] {
        self.fft_shape
    }

    /// DFT of the kernel values (without the `h^d` factor).
    pub fn kernel_spectrum(&self) -> &[Complex64] {
        &self.spectrum
    }

    pub fn apply(&self, f: &Field) -> Field {
        assert_eq!(f.grid().shape(), self.input.shape(), "input lattice mismatch");
        let mut out = vec![0.0; self.output.len()];
        self.apply_into(f.values(), &mut out);
        Field::from_raw(self.output.clone(), out)
    }

    /// Raw-slice variant of [`Convolver::apply`].
    pub fn apply_into(&self, input: &[f64], out: &mut [f64]) {
        let total = self.fft_shape[0] * self.fft_shape[1];
        let mut buf = vec![Complex64::new(0.0, 0.0); total];
        scatter(input, self.input.shape(), &mut buf, self.fft_shape);
        fft2(&mut buf, self.fft_shape, &self.forward);
        for (b, k) in buf.iter_mut().zip(&self.spectrum) {
            *b *= k;
        }
        fft2(&mut buf, self.fft_shape, &self.inverse);
        let [o0, o1] = self.output.shape();
        for i in 0..o0 {
            let fi = i as i64 + self.offset[0];
            for j in 0..o1 {
                let fj = j as i64 + self.offset[1];
                let v = if fi >= 0
                    && fj >= 0
                    && (fi as usize) < self.fft_shape[0]
                    && (fj as usize) < self.fft_shape[1]
                {
                    buf[fi as usize * self.fft_shape[1] + fj as usize].re * self.scale
                } else {
                    0.0
                };
                out[i * o1 + j] = v;
            }
        }
    }
}

/// Convolution of fields on the interior faces normal to `axis` of a box
/// grid, with mirror images across the walls: the input is extended oddly in
/// the `axis` direction and evenly in the other, which makes it periodic on a
/// torus of twice the box. The result is odd across the walls as well, so it
/// vanishes on them.
pub struct ReflectingConvolver {
    faces: Grid,
    axis: usize,
    cells: [usize; 2],
    torus: [usize; 2],
    spectrum: Vec<Complex64>,
    forward: [Arc<dyn Fft<f64>>; 2],
    inverse: [Arc<dyn Fft<f64>>; 2],
    scale: f64,
}

impl std::fmt::Debug for ReflectingConvolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReflectingConvolver")
            .field("axis", &self.axis)
            .field("torus", &self.torus)
            .finish()
    }
}

impl ReflectingConvolver {
    /// `kernel` must be even and live on `grid.kernel_stencil()`.
    pub fn new(kernel: &Field, grid: &Grid, axis: usize) -> Result<Self> {
        let stencil = grid.kernel_stencil();
        if kernel.grid().shape() != stencil.shape() {
            return Err(Error::GridMismatch("kernel is not on the grid stencil".into()));
        }
        if axis >= grid.dim() {
            return Err(Error::InvalidArgument(format!("axis {axis} on a {}-D grid", grid.dim())));
        }
        let cells = grid.shape();
        let mut torus = [1, 1];
        for a in 0..grid.dim() {
            torus[a] = 2 * cells[a];
        }
        let mut planner = FftPlanner::<f64>::new();
        let forward = [planner.plan_fft_forward(torus[0]), planner.plan_fft_forward(torus[1])];
        let inverse = [planner.plan_fft_inverse(torus[0]), planner.plan_fft_inverse(torus[1])];
        let total = torus[0] * torus[1];
        let mut spectrum = vec![Complex64::new(0.0, 0.0); total];
        let [s0, s1] = stencil.shape();
        let (c0, c1) = ((s0 / 2) as i64, (s1 / 2) as i64);
        for i in 0..s0 {
            let ti = (i as i64 - c0).rem_euclid(torus[0] as i64) as usize;
            for j in 0..s1 {
                let tj = (j as i64 - c1).rem_euclid(torus[1] as i64) as usize;
                spectrum[ti * torus[1] + tj] += Complex64::new(kernel.values()[i * s1 + j], 0.0);
            }
        }
        fft2(&mut spectrum, torus, &forward);
        Ok(Self {
            faces: grid.face_lattice(axis),
            axis,
            cells,
            torus,
            spectrum,
            forward,
            inverse,
            scale: grid.cell_volume() / total as f64,
        })
    }

    pub fn faces(&self) -> &Grid {
        &self.faces
    }

    pub fn torus_shape(&self) -> [usize; 2] {
        self.torus
    }

    /// DFT of the periodized kernel (without the `h^d` factor).
    pub fn kernel_spectrum(&self) -> &[Complex64] {
        &self.spectrum
    }

    /// Torus index and sign of the images of face `(i, j)`.
    fn images(&self, i: usize, j: usize) -> [(usize, f64); 4] {
        let n = self.cells;
        let [t0, t1] = self.torus;
        // position along the normal axis in units of h from the lower wall
        let (p, q) = if self.axis == 0 { (i + 1, j) } else { (j + 1, i) };
        let (np, nq) = if self.axis == 0 { (n[0], n[1]) } else { (n[1], n[0]) };
        let tp = [p, 2 * np - p];
        let tq = if nq > 1 || self.faces.dim() == 2 { [q, 2 * nq - 1 - q] } else { [0, 0] };
        let mut out = [(0usize, 0.0); 4];
        let mut k = 0;
        for (a, &pp) in tp.iter().enumerate() {
            let sign = if a == 0 { 1.0 } else { -1.0 };
            for (b, &qq) in tq.iter().enumerate() {
                let w = if self.faces.dim() == 1 && b == 1 { 0.0 } else { sign };
                let (ti, tj) = if self.axis == 0 { (pp, qq) } else { (qq, pp) };
                out[k] = ((ti % t0) * t1 + (tj % t1), w);
                k += 1;
            }
        }
        out
    }

    /// Convolves a field given on the faces, returning the face values.
    pub fn apply_into(&self, input: &[f64], out: &mut [f64]) {
        let total = self.torus[0] * self.torus[1];
        let mut buf = vec![Complex64::new(0.0, 0.0); total];
        let [f0, f1] = self.faces.shape();
        for i in 0..f0 {
            for j in 0..f1 {
                let v = input[i * f1 + j];
                for (idx, w) in self.images(i, j) {
                    if w != 0.0 {
                        buf[idx].re += w * v;
                    }
                }
            }
        }
        fft2(&mut buf, self.torus, &self.forward);
        for (b, k) in buf.iter_mut().zip(&self.spectrum) {
            *b *= k;
        }
        fft2(&mut buf, self.torus, &self.inverse);
        for i in 0..f0 {
            for j in 0..f1 {
                out[i * f1 + j] = buf[self.images(i, j)[0].0].re * self.scale;
            }
        }
    }

    pub fn apply(&self, f: &Field) -> Field {
        assert_eq!(f.grid().shape(), self.faces.shape(), "input lattice mismatch");
        let mut out = vec![0.0; self.faces.len()];
        self.apply_into(f.values(), &mut out);
        Field::from_raw(self.faces.clone(), out)
    }
}

fn scatter(values: &[f64], shape: [usize; 2], buf: &mut [Complex64], fft_shape: [usize; 2]) {
    for i in 0..shape[0] {
        for j in 0..shape[1] {
            buf[i * fft_shape[1] + j] = Complex64::new(values[i * shape[1] + j], 0.0);
        }
    }
}

fn fft2(buf: &mut [Complex64], shape: [usize; 2], plans: &[Arc<dyn Fft<f64>>; 2]) {
    let [n0, n1] = shape;
    if n1 > 1 {
        for row in buf.chunks_exact_mut(n1) {
            plans[1].process(row);
        }
    }
    if n0 > 1 {
        if n1 == 1 {
            plans[0].process(buf);
        } else {
            let mut col = vec![Complex64::new(0.0, 0.0); n0];
            for j in 0..n1 {
                for i in 0..n0 {
                    col[i] = buf[i * n1 + j];
                }
                plans[0].process(&mut col);
                for i in 0..n0 {
                    buf[i * n1 + j] = col[i];
                }
            }
        }
    }
}
