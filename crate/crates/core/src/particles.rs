//! Deterministic interacting-particle (SVGD) transport whose mean-field
//! limit is the nonlocal equations of [`crate::pde`].

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::kernels::{weighted_kernel, KernelSpec};
use crate::potentials::PotentialSpec;

pub const PARTICLE_CSV_VERSION: &str = "# steinflow particles v1";

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    dim: usize,
    positions: Vec<[f64; 2]>,
}

impl ParticleEnsemble {
    pub fn new(dim: usize, positions: Vec<[f64; 2]>) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidArgument(format!("dimension {dim} not supported")));
        }
        if positions.is_empty() {
            return Err(Error::InvalidArgument("ensemble needs at least one particle".into()));
        }
        if positions.iter().any(|p| p[..dim].iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("particle position".into()));
        }
        Ok(Self { dim, positions })
    }

    pub fn from_1d(xs: &[f64]) -> Result<Self> {
        Self::new(1, xs.iter().map(|&x| [x, 0.0]).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{PARTICLE_CSV_VERSION}")?;
        if self.dim == 1 {
            writeln!(w, "index,x")?;
        } else {
            writeln!(w, "index,x,y")?;
        }
        for (i, p) in self.positions.iter().enumerate() {
            if self.dim == 1 {
                writeln!(w, "{i},{:?}", p[0])?;
            } else {
                writeln!(w, "{i},{:?},{:?}", p[0], p[1])?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    #[default]
    Plain,
    /// `w(x) k_σ(x - y) w(y)`; exploratory, no particle limit is known
    Weighted,
}

impl std::str::FromStr for KernelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Self::Plain),
            "weighted" => Ok(Self::Weighted),
            other => Err(Error::Config(format!("unknown kernel mode '{other}'"))),
        }
    }
}

/// `v_i = (1/N) Σ_j [-K(x_i, x_j) ∇V(x_j) + ∇_y K(x_i, x_j)]`.
pub fn svgd_velocity(
    ens: &ParticleEnsemble,
    mode: KernelMode,
    kernel: &KernelSpec,
    potential: &PotentialSpec,
) -> Result<Vec<[f64; 2]>> {
    let d = ens.dim();
    if kernel.dim != d {
        return Err(Error::GridMismatch(format!("kernel dimension {} for {d}-D particles", kernel.dim)));
    }
    let k = kernel.interaction();
    let xs = ens.positions();
    let grads: Vec<[f64; 2]> = xs.iter().map(|x| potential.gradient(&x[..d])).collect();
    let n = xs.len() as f64;
    xs.par_iter()
        .map(|xi| {
            let mut v = [0.0; 2];
            for (xj, gv) in xs.iter().zip(&grads) {
                let (kv, gy) = match mode {
                    KernelMode::Plain => {
                        let mut z = [0.0; 2];
                        for a in 0..d {
                            z[a] = xi[a] - xj[a];
                        }
                        let (kv, g) = k.value_and_gradient(&z[..d])?;
                        (kv, [-g[0], -g[1]])
                    }
                    KernelMode::Weighted => weighted_kernel(&k, potential, &xi[..d], &xj[..d])?,
                };
                for a in 0..d {
                    v[a] += -kv * gv[a] + gy[a];
                }
            }
            for c in &mut v {
                *c /= n;
            }
            Ok(v)
        })
        .collect()
}

/// `x_i' = x_i + dt v_i`.
pub fn step_euler(ens: &ParticleEnsemble, velocities: &[[f64; 2]], dt: f64) -> Result<ParticleEnsemble> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step {dt} must be positive")));
    }
    if velocities.len() != ens.len() {
        return Err(Error::InvalidArgument("one velocity per particle expected".into()));
    }
    let positions = ens
        .positions()
        .iter()
        .zip(velocities)
        .map(|(x, v)| [x[0] + dt * v[0], x[1] + dt * v[1]])
        .collect();
    ParticleEnsemble::new(ens.dim(), positions)
}

/// `0.1 σ² / max(1, max_i |∇V(x_i)|)`.
pub fn default_dt(ens: &ParticleEnsemble, kernel: &KernelSpec, potential: &PotentialSpec) -> f64 {
    let d = ens.dim();
    let gmax = ens
        .positions()
        .iter()
        .map(|x| {
            let g = potential.gradient(&x[..d]);
            (g[0] * g[0] + g[1] * g[1]).sqrt()
        })
        .fold(0.0, f64::max);
    0.1 * kernel.sigma * kernel.sigma / gmax.max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticleConfig {
    pub mode: KernelMode,
    pub kernel: KernelSpec,
    pub t_end: f64,
    /// fixed step; the default rule is applied to the initial ensemble if absent
    pub dt: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ParticleRun {
    pub ensemble: ParticleEnsemble,
    pub dt: f64,
    pub steps: usize,
}

/// Euler integration to `t_end` (the last step is shortened to land on it).
pub fn run_particles(config: &ParticleConfig, ens: &ParticleEnsemble, potential: &PotentialSpec) -> Result<ParticleRun> {
    if !(config.t_end > 0.0) {
        return Err(Error::InvalidArgument(format!("end time {} must be positive", config.t_end)));
    }
    let dt = config.dt.unwrap_or_else(|| default_dt(ens, &config.kernel, potential));
    let mut cur = ens.clone();
    let mut t = 0.0;
    let mut steps = 0;
    while t < config.t_end {
        let h = dt.min(config.t_end - t);
        let v = svgd_velocity(&cur, config.mode, &config.kernel, potential)?;
        cur = step_euler(&cur, &v, h)?;
        t = if h < dt { config.t_end } else { t + h };
        steps += 1;
    }
    Ok(ParticleRun {
        ensemble: cur,
        dt,
        steps,
    })
}

/// Quantile of the piecewise-constant cell density at level `u ∈ (0, 1)`.
fn quantile(cdf: &[f64], grid: &Grid, u: f64) -> f64 {
    let h = grid.spacing();
    let lo = grid.origin()[0] - 0.5 * h;
    let i = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
    let prev = if i == 0 { 0.0 } else { cdf[i - 1] };
    let mass = cdf[i] - prev;
    let frac = if mass > 0.0 { (u - prev) / mass } else { 0.5 };
    lo + (i as f64 + frac) * h
}

fn cumulative(rho: &Field) -> Result<Vec<f64>> {
    if rho.grid().dim() != 1 {
        return Err(Error::InvalidArgument("inverse-CDF initialization is 1-D only".into()));
    }
    if rho.min() < 0.0 || rho.mass() <= 0.0 {
        return Err(Error::InvalidArgument("density must be nonnegative with positive mass".into()));
    }
    let total: f64 = rho.values().iter().sum();
    let mut acc = 0.0;
    Ok(rho
        .values()
        .iter()
        .map(|v| {
            acc += v / total;
            acc
        })
        .collect())
}

/// Stratified quantiles `(k + 1/2)/N` of `rho` (d = 1).
pub fn inverse_cdf_init(rho: &Field, n: usize) -> Result<ParticleEnsemble> {
    let cdf = cumulative(rho)?;
    let xs: Vec<f64> = (0..n)
        .map(|k| quantile(&cdf, rho.grid(), (k as f64 + 0.5) / n as f64))
        .collect();
    ParticleEnsemble::from_1d(&xs)
}

/// Seeded i.i.d. draws from `rho` (d = 1).
pub fn random_init(rho: &Field, n: usize, seed: u64) -> Result<ParticleEnsemble> {
    let cdf = cumulative(rho)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..n).map(|_| quantile(&cdf, rho.grid(), rng.gen::<f64>())).collect();
    ParticleEnsemble::from_1d(&xs)
}

/// Gaussian kernel density estimate at the cell centres, renormalized to
/// unit mass on the box. Requires `bandwidth ≥ h`.
pub fn kde_density(ens: &ParticleEnsemble, bandwidth: f64, grid: &Grid) -> Result<Field> {
    if bandwidth < grid.spacing() {
        return Err(Error::InvalidArgument(format!(
            "bandwidth {bandwidth} below the grid spacing {}",
            grid.spacing()
        )));
    }
    if ens.dim() != grid.dim() {
        return Err(Error::GridMismatch("ensemble and grid dimensions differ".into()));
    }
    let d = grid.dim();
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let c = grid.point(i);
            ens.positions()
                .iter()
                .map(|p| {
                    let r2: f64 = (0..d).map(|a| (c[a] - p[a]).powi(2)).sum();
                    (-r2 * inv).exp()
                })
                .sum::<f64>()
        })
        .collect();
    Field::new(grid.clone(), values)?.normalized()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::w1_distance_1d;
    use crate::potentials::{rho_infinity, Minorant, PotentialKind};
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn bessel(s: f64) -> KernelSpec {
        KernelSpec::bessel(s, 1).unwrap()
    }

    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    /// Naive double loop with double-double accumulation; the 1-D kernel is
    /// `k_σ(z) = e^{-|z|/σ} / (2σ)`.
    fn naive_velocity(xs: &[f64], sigma: f64, grad_v: impl Fn(f64) -> f64) -> Vec<f64> {
        xs.iter()
            .map(|&xi| {
                let (mut hi, mut lo) = (0.0, 0.0);
                for &xj in xs {
                    let z = xi - xj;
                    let k = (-z.abs() / sigma).exp() / (2.0 * sigma);
                    // ∇_y k(x - y) = sign(z) k / σ
                    let gy = if z == 0.0 { 0.0 } else { z.signum() * k / sigma };
                    for term in [-k * grad_v(xj), gy] {
                        let (s, e) = two_sum(hi, term);
                        hi = s;
                        lo += e;
                    }
                }
                (hi + lo) / xs.len() as f64
            })
            .collect()
    }

    #[test]
    fn single_particle_at_minimum_is_fixed() {
        let ens = ParticleEnsemble::from_1d(&[0.0]).unwrap();
        let v = svgd_velocity(&ens, KernelMode::Plain, &bessel(0.3), &PotentialSpec::quartic()).unwrap();
        assert_eq!(v[0][0], 0.0);
    }

    #[test]
    fn mirror_pair_has_opposite_velocities() {
        let ens = ParticleEnsemble::from_1d(&[-0.7, 0.7]).unwrap();
        for mode in [KernelMode::Plain, KernelMode::Weighted] {
            let v = svgd_velocity(&ens, mode, &bessel(0.3), &PotentialSpec::quartic()).unwrap();
            assert!((v[0][0] + v[1][0]).abs() <= 1e-12);
        }
    }

    #[test]
    fn velocities_match_extended_precision_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..50).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let ens = ParticleEnsemble::from_1d(&xs).unwrap();
        let sigma = 0.3;
        let v = svgd_velocity(&ens, KernelMode::Plain, &bessel(sigma), &PotentialSpec::quartic()).unwrap();
        let oracle = naive_velocity(&xs, sigma, |x| x + x * x * x);
        for (a, b) in v.iter().zip(&oracle) {
            assert!((a[0] - b).abs() <= 1e-12 * b.abs().max(1.0), "{} {b}", a[0]);
        }
    }

    #[test]
    fn zero_velocity_step_is_identity() {
        let ens = ParticleEnsemble::from_1d(&[0.1, 0.5]).unwrap();
        assert_eq!(step_euler(&ens, &[[0.0; 2]; 2], 0.1).unwrap(), ens);
        assert!(step_euler(&ens, &[[0.0; 2]; 2], 0.0).is_err());
    }

    #[test]
    fn single_particle_descends_monotonically() {
        let q = PotentialSpec::gaussian();
        let mut ens = ParticleEnsemble::from_1d(&[1.5]).unwrap();
        let k = bessel(0.5);
        let dt = default_dt(&ens, &k, &q);
        let mut last = 1.5;
        for _ in 0..200 {
            let v = svgd_velocity(&ens, KernelMode::Plain, &k, &q).unwrap();
            ens = step_euler(&ens, &v, dt).unwrap();
            let x = ens.positions()[0][0];
            assert!(x < last && x > 0.0);
            last = x;
        }
        // one particle: ẋ = -k(0) x, solved exactly by e^{-k(0) t}
        let k0 = 1.0 / (2.0 * 0.5);
        let exact = 1.5 * (1.0 - dt * k0).powi(200);
        assert!((last - exact).abs() < 1e-12);
    }

    #[test]
    fn two_half_steps_match_one_full_step() {
        let q = PotentialSpec::quartic();
        let k = bessel(0.4);
        let ens = ParticleEnsemble::from_1d(&[-0.8, -0.1, 0.3, 0.9]).unwrap();
        let gap = |dt: f64| {
            let v = svgd_velocity(&ens, KernelMode::Plain, &k, &q).unwrap();
            let one = step_euler(&ens, &v, 2.0 * dt).unwrap();
            let half = step_euler(&ens, &v, dt).unwrap();
            let v2 = svgd_velocity(&half, KernelMode::Plain, &k, &q).unwrap();
            let two = step_euler(&half, &v2, dt).unwrap();
            one.positions().iter().zip(two.positions()).map(|(a, b)| (a[0] - b[0]).abs()).fold(0.0, f64::max)
        };
        let (a, b) = (gap(1e-3), gap(5e-4));
        assert!(a < 1e-4 && (a / b - 4.0).abs() < 0.2, "{a} {b}");
    }

    #[test]
    fn kde_examples() {
        let g = Grid::new(1, 4.0, 256).unwrap();
        let ens = ParticleEnsemble::from_1d(&[0.0]).unwrap();
        let f = kde_density(&ens, 0.2, &g).unwrap();
        assert!((f.mass() - 1.0).abs() < 1e-12);
        let v = f.values();
        assert_eq!(v[127], v[128]);
        assert!(v[128] > v[140]);
        assert!(kde_density(&ens, 0.01, &g).is_err());
    }

    #[test]
    fn kde_of_target_samples_is_close_in_w1() {
        let g = Grid::new(1, 8.0, 1024).unwrap();
        let p = PotentialSpec::gaussian();
        let target = rho_infinity(&p, &g).unwrap();
        // ten trials; each must be within the bound
        for seed in 0..10 {
            let ens = random_init(&target, 10_000, seed).unwrap();
            let kde = kde_density(&ens, 0.1, &g).unwrap();
            assert!(w1_distance_1d(&kde, &target).unwrap() <= 0.05);
        }
    }

    #[test]
    fn inverse_cdf_reproduces_quantiles() {
        let g = Grid::new(1, 1.0, 64).unwrap();
        let uniform = Field::from_fn(&g, |_| 0.5);
        let ens = inverse_cdf_init(&uniform, 4).unwrap();
        let xs: Vec<f64> = ens.positions().iter().map(|p| p[0]).collect();
        for (x, e) in xs.iter().zip([-0.75, -0.25, 0.25, 0.75]) {
            assert!((x - e).abs() < 1e-12);
        }
        assert_eq!(random_init(&uniform, 8, 3).unwrap(), random_init(&uniform, 8, 3).unwrap());
    }

    #[test]
    fn csv_layout() {
        let ens = ParticleEnsemble::from_1d(&[0.5, -1.0]).unwrap();
        let mut buf = Vec::new();
        ens.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{PARTICLE_CSV_VERSION}\nindex,x\n0,0.5\n1,-1.0\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn permutation_equivariance(xs in proptest::collection::vec(-2.0f64..2.0, 2..12), rot in 0usize..12) {
            let q = PotentialSpec::quartic();
            let k = bessel(0.3);
            let ens = ParticleEnsemble::from_1d(&xs).unwrap();
            let mut perm = xs.clone();
            let r = rot % xs.len();
            perm.rotate_left(r);
            let v = svgd_velocity(&ens, KernelMode::Plain, &k, &q).unwrap();
            let vp = svgd_velocity(&ParticleEnsemble::from_1d(&perm).unwrap(), KernelMode::Plain, &k, &q).unwrap();
            for i in 0..xs.len() {
                prop_assert!((vp[i][0] - v[(i + r) % xs.len()][0]).abs() <= 1e-12);
            }
        }

        #[test]
        fn translation_invariance_for_flat_potential(xs in proptest::collection::vec(-2.0f64..2.0, 2..12), shift in -3.0f64..3.0) {
            let flat = PotentialSpec::new(PotentialKind::Flat, Minorant::isotropic(1.0), "flat");
            let k = bessel(0.3);
            let a = svgd_velocity(&ParticleEnsemble::from_1d(&xs).unwrap(), KernelMode::Plain, &k, &flat).unwrap();
            let moved: Vec<f64> = xs.iter().map(|x| x + shift).collect();
            let b = svgd_velocity(&ParticleEnsemble::from_1d(&moved).unwrap(), KernelMode::Plain, &k, &flat).unwrap();
            for (u, w) in a.iter().zip(&b) {
                prop_assert!((u[0] - w[0]).abs() <= 1e-10);
            }
        }
    }
}
