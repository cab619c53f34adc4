//! Cell averages of radial kernels on the stencil lattice of a grid.

use std::f64::consts::FRAC_PI_4;

use super::{KernelSpec, ScaledKernel};
use crate::error::{Error, Result};
use crate::grid::{convolve_onto, Field, Grid};
use crate::quad;

/// Cells within this many cells of the origin get refined quadrature.
const NEAR: i64 = 2;

/// Cell averages of the kernel on `grid.kernel_stencil()`, renormalized to
/// unit mass. The kernel must be resolved: `σ ≥ h`.
pub fn sample_on_grid(kernel: &ScaledKernel, grid: &Grid) -> Result<Field> {
    let sigma = kernel.sigma();
    check_resolved(sigma, grid)?;
    if grid.dim() != kernel.dim() {
        return Err(Error::GridMismatch(format!(
            "kernel dimension {} on a {}-dimensional grid",
            kernel.dim(),
            grid.dim()
        )));
    }
    let profile = |u: f64| kernel.base_radial(u).unwrap_or(0.0);
    let scale = sigma.powi(-(grid.dim() as i32));
    let mut f = sample_radial(&profile, &grid.kernel_stencil(), sigma, scale);
    let m = f.mass();
    for v in f.values_mut() {
        *v /= m;
    }
    Ok(f)
}

/// Tent-weighted averages `(1/h^d) ∫ f_σ(mh + t) Π(1 - |t_i|/h) dt` on the
/// stencil lattice, renormalized. These carry the same moment structure as a
/// discrete convolution of two cell-averaged factors.
pub fn sample_tent_on_grid(kernel: &ScaledKernel, grid: &Grid) -> Result<Field> {
    let sigma = kernel.sigma();
    check_resolved(sigma, grid)?;
    let stencil = grid.kernel_stencil();
    let s = stencil.spacing() / sigma;
    let scale = sigma.powi(-(grid.dim() as i32));
    let f = |u: f64| kernel.base_radial(u).unwrap_or(0.0);
    let [n0, n1] = stencil.shape();
    let mut out = vec![0.0; stencil.len()];
    if grid.dim() == 1 {
        let half = (n0 / 2) as i64;
        let vals: Vec<f64> = (0..=half)
            .map(|m| {
                let c = m as f64 * s;
                let g = |t: f64| f((c + t).abs()) * (1.0 - t.abs() / s);
                let (a, b) = if m.abs() <= NEAR {
                    (quad::adaptive(&g, -s, 0.0, 1e-15 * s), quad::adaptive(&g, 0.0, s, 1e-15 * s))
                } else {
                    (quad::fixed(g, -s, 0.0, 16), quad::fixed(g, 0.0, s, 16))
                };
                scale * (a + b) / s
            })
            .collect();
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = vals[(i as i64 - half).unsigned_abs() as usize];
        }
    } else {
        let h0 = (n0 / 2) as i64;
        let h1 = (n1 / 2) as i64;
        for i in 0..n0 {
            for j in 0..n1 {
                let cx = (i as i64 - h0) as f64 * s;
                let cy = (j as i64 - h1) as f64 * s;
                let mut total = 0.0;
                for (x0, x1) in [(-s, 0.0), (0.0, s)] {
                    for (y0, y1) in [(-s, 0.0), (0.0, s)] {
                        total += quad::fixed(
                            |tx| {
                                quad::fixed(
                                    |ty| {
                                        let r = ((cx + tx).powi(2) + (cy + ty).powi(2)).sqrt();
                                        f(r) * (1.0 - tx.abs() / s) * (1.0 - ty.abs() / s)
                                    },
                                    y0,
                                    y1,
                                    8,
                                )
                            },
                            x0,
                            x1,
                            8,
                        );
                    }
                }
                out[i * n1 + j] = scale * total / (s * s);
            }
        }
    }
    let mut field = Field::from_raw(stencil, out);
    let m = field.mass();
    for v in field.values_mut() {
        *v /= m;
    }
    Ok(field)
}

/// `max |k_σ - ω_σ ∗ ω_σ|` over the stencil, both sides sampled by cell averages.
pub fn semigroup_error(spec: &KernelSpec, grid: &Grid) -> Result<f64> {
    let w = sample_on_grid(&spec.mollifier(), grid)?;
    let k = sample_on_grid(&spec.interaction(), grid)?;
    let ww = convolve_onto(&w, &w, k.grid())?;
    ww.max_abs_diff(&k)
}

/// Cell averages of `|y|^r f_σ(y)` on the stencil lattice, not renormalized.
pub fn moment_stencil(kernel: &ScaledKernel, grid: &Grid, r: f64) -> Result<Field> {
    let sigma = kernel.sigma();
    check_resolved(sigma, grid)?;
    let profile = |u: f64| u.powf(r) * kernel.base_radial(u).unwrap_or(0.0);
    let scale = sigma.powf(r - grid.dim() as f64);
    Ok(sample_radial(&profile, &grid.kernel_stencil(), sigma, scale))
}

fn check_resolved(sigma: f64, grid: &Grid) -> Result<()> {
    if sigma < grid.spacing() {
        return Err(Error::UnderResolvedKernel {
            sigma,
            spacing: grid.spacing(),
        });
    }
    Ok(())
}

/// `scale · (1/s^d) ∫_cell f(|u|) du` in the unscaled variable `u = y/σ`,
/// for every cell of a stencil lattice (centres at integer multiples of `h`).
fn sample_radial(f: &dyn Fn(f64) -> f64, stencil: &Grid, sigma: f64, scale: f64) -> Field {
    let s = stencil.spacing() / sigma;
    let [n0, n1] = stencil.shape();
    let mut out = vec![0.0; stencil.len()];
    if stencil.dim() == 1 {
        let half = (n0 / 2) as i64;
        let vals: Vec<f64> = (0..=half).map(|m| scale * average_1d(f, m, s)).collect();
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = vals[(i as i64 - half).unsigned_abs() as usize];
        }
    } else {
        let h0 = (n0 / 2) as i64;
        let h1 = (n1 / 2) as i64;
        let side = h0.max(h1) as usize + 1;
        // 8-fold symmetry of radial profiles on a square lattice
        let mut cache = vec![f64::NAN; side * side];
        for i in 0..n0 {
            let a = (i as i64 - h0).unsigned_abs() as usize;
            for j in 0..n1 {
                let b = (j as i64 - h1).unsigned_abs() as usize;
                let (p, q) = if a >= b { (a, b) } else { (b, a) };
                let slot = &mut cache[p * side + q];
                if slot.is_nan() {
                    *slot = scale * average_2d(f, p as i64, q as i64, s);
                }
                out[i * n1 + j] = *slot;
            }
        }
    }
    Field::from_raw(stencil.clone(), out)
}

fn average_1d(f: &dyn Fn(f64) -> f64, m: i64, s: f64) -> f64 {
    let c = m as f64 * s;
    let (a, b) = (c - 0.5 * s, c + 0.5 * s);
    let g = |u: f64| f(u.abs());
    if m == 0 {
        2.0 * quad::adaptive(&g, 0.0, 0.5 * s, 1e-15 * s) / s
    } else if m.abs() <= NEAR {
        quad::adaptive(&g, a, b, 1e-15 * s) / s
    } else {
        quad::fixed(g, a, b, 8) / s
    }
}

fn average_2d(f: &dyn Fn(f64) -> f64, mi: i64, mj: i64, s: f64) -> f64 {
    let area = s * s;
    if mi == 0 && mj == 0 {
        // eight triangles 0 ≤ θ ≤ π/4, 0 ≤ r ≤ (s/2)/cos θ
        let a = 0.5 * s;
        let radial = |theta: f64| {
            let rmax = a / theta.cos();
            quad::adaptive(&|r: f64| f(r) * r, 0.0, rmax, 1e-15 * area)
        };
        return 8.0 * quad::composite(radial, 0.0, FRAC_PI_4, 2) / area;
    }
    let cx = mi as f64 * s;
    let cy = mj as f64 * s;
    let sub = if mi.abs().max(mj.abs()) <= NEAR { 4 } else { 1 };
    let w = s / sub as f64;
    let mut total = 0.0;
    for p in 0..sub {
        let x0 = cx - 0.5 * s + p as f64 * w;
        for q in 0..sub {
            let y0 = cy - 0.5 * s + q as f64 * w;
            total += quad::fixed(
                |x| quad::fixed(|y| f((x * x + y * y).sqrt()), y0, y0 + w, 8),
                x0,
                x0 + w,
                8,
            );
        }
    }
    total / area
}
