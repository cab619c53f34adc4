use std::ffi::CStr;
use std::ptr;

use steinflow_ffi::*;

fn last_error() -> String {
    let p = sf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Handles {
    grid: *mut SfGrid,
    potential: *mut SfPotential,
}

impl Handles {
    fn new(half_width: f64, cells: usize) -> Self {
        let mut grid = ptr::null_mut();
        let mut potential = ptr::null_mut();
        unsafe {
            assert_eq!(sf_grid_new(1, half_width, cells, &mut grid), SfStatus::Ok);
            assert_eq!(sf_potential_new(SfPotentialKind::Quartic, &mut potential), SfStatus::Ok);
        }
        Self { grid, potential }
    }

    fn equilibrium(&self) -> Vec<f64> {
        let n = unsafe { sf_grid_len(self.grid) };
        let mut eq = vec![0.0; n];
        assert_eq!(unsafe { sf_equilibrium(self.grid, self.potential, eq.as_mut_ptr(), n) }, SfStatus::Ok);
        eq
    }
}

impl Drop for Handles {
    fn drop(&mut self) {
        unsafe {
            sf_grid_free(self.grid);
            sf_potential_free(self.potential);
        }
    }
}

#[test]
fn grid_queries() {
    let h = Handles::new(4.0, 64);
    unsafe {
        assert_eq!(sf_grid_len(h.grid), 64);
        assert_eq!(sf_grid_spacing(h.grid), 0.125);
        let mut xs = vec![0.0; 64];
        assert_eq!(sf_grid_centres(h.grid, xs.as_mut_ptr(), 64), SfStatus::Ok);
        assert_eq!(xs[0], -4.0 + 0.0625);
        assert_eq!(sf_grid_len(ptr::null()), 0);
    }
}

#[test]
fn errors_set_status_and_message() {
    let mut grid = ptr::null_mut();
    unsafe {
        assert_eq!(sf_grid_new(3, 1.0, 8, &mut grid), SfStatus::Grid);
        assert!(grid.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(sf_grid_new(1, 1.0, 8, ptr::null_mut()), SfStatus::NullPointer);
        assert!(last_error().contains("null"));
        // success clears the message
        assert_eq!(sf_grid_new(1, 1.0, 8, &mut grid), SfStatus::Ok);
        assert!(sf_last_error().is_null());
        let mut out = 0.0;
        let v = [1.0; 4];
        assert_eq!(sf_w1_distance(grid, v.as_ptr(), v.as_ptr(), 4, &mut out), SfStatus::Grid);
        assert_eq!(sf_bessel_k(0.3, 1.0, &mut out), SfStatus::Kernel);
        sf_grid_free(grid);
        sf_grid_free(ptr::null_mut());
    }
}

#[test]
fn equilibrium_is_stationary_through_the_solver() {
    let h = Handles::new(8.0, 512);
    let eq = h.equilibrium();
    let n = eq.len();
    let mut solver = ptr::null_mut();
    unsafe {
        assert_eq!(
            sf_solver_new(h.grid, h.potential, SfVariant::NonlocalPlain, 0.3, 0.25, &mut solver),
            SfStatus::Ok
        );
        let mut out = vec![0.0; n];
        let mut s = SfRunSummary::default();
        assert_eq!(sf_solver_run(solver, eq.as_ptr(), out.as_mut_ptr(), n, 0.2, &mut s), SfStatus::Ok);
        assert!(s.steps > 0);
        assert!(s.final_kl.abs() < 1e-12);
        assert!(s.max_mass_drift < 1e-12);
        let mut kl = 1.0;
        assert_eq!(sf_kl_divergence(h.grid, h.potential, out.as_ptr(), n, &mut kl), SfStatus::Ok);
        assert!(kl.abs() < 1e-12);
        let mut d = 1.0;
        assert_eq!(
            sf_dissipation(h.grid, h.potential, SfVariant::LocalPlain, 0.0, eq.as_ptr(), n, &mut d),
            SfStatus::Ok
        );
        assert!(d < 1e-20);
        sf_solver_free(solver);
    }
}

#[test]
fn solver_moves_mass_toward_equilibrium() {
    let h = Handles::new(8.0, 512);
    let eq = h.equilibrium();
    let n = eq.len();
    let mut rho: Vec<f64> = {
        let mut xs = vec![0.0; n];
        unsafe { sf_grid_centres(h.grid, xs.as_mut_ptr(), n) };
        xs.iter().map(|x| (-(x - 0.5) * (x - 0.5) / (2.0 * 0.35 * 0.35)).exp()).collect()
    };
    let m: f64 = rho.iter().sum::<f64>() * unsafe { sf_grid_spacing(h.grid) };
    rho.iter_mut().for_each(|v| *v /= m);
    let (mut kl0, mut kl1, mut w0, mut w1) = (0.0, 0.0, 0.0, 0.0);
    let mut solver = ptr::null_mut();
    unsafe {
        sf_kl_divergence(h.grid, h.potential, rho.as_ptr(), n, &mut kl0);
        sf_w1_distance(h.grid, rho.as_ptr(), eq.as_ptr(), n, &mut w0);
        assert_eq!(
            sf_solver_new(h.grid, h.potential, SfVariant::LocalPlain, 0.0, 0.25, &mut solver),
            SfStatus::Ok
        );
        // in place
        let p = rho.as_mut_ptr();
        assert_eq!(sf_solver_run(solver, p, p, n, 0.2, ptr::null_mut()), SfStatus::Ok);
        sf_kl_divergence(h.grid, h.potential, rho.as_ptr(), n, &mut kl1);
        sf_w1_distance(h.grid, rho.as_ptr(), eq.as_ptr(), n, &mut w1);
        sf_solver_free(solver);
    }
    assert!(kl1 < kl0 && w1 < w0, "{kl0} {kl1} {w0} {w1}");
}

#[test]
fn bessel_and_svgd() {
    let mut k = 0.0;
    unsafe {
        assert_eq!(sf_bessel_k(0.5, 2.0, &mut k), SfStatus::Ok);
    }
    let exact = (std::f64::consts::PI / 4.0).sqrt() * (-2.0f64).exp();
    assert!((k - exact).abs() < 1e-14 * exact);

    let h = Handles::new(4.0, 8);
    let xs = [-0.5, 0.0, 0.7];
    let mut v = [0.0; 3];
    unsafe {
        assert_eq!(sf_svgd_velocity(h.potential, 0.3, xs.as_ptr(), 3, v.as_mut_ptr()), SfStatus::Ok);
        assert_eq!(sf_svgd_velocity(h.potential, 0.3, ptr::null(), 3, v.as_mut_ptr()), SfStatus::NullPointer);
    }
    for (i, &xi) in xs.iter().enumerate() {
        let mut e = 0.0;
        for &xj in &xs {
            let z: f64 = xi - xj;
            let k = (-z.abs() / 0.3).exp() / 0.6;
            let dk = if z == 0.0 { 0.0 } else { z.signum() * k / 0.3 };
            e += -k * (xj + xj.powi(3)) + dk;
        }
        assert!((v[i] - e / 3.0).abs() < 1e-14, "{i}: {} vs {}", v[i], e / 3.0);
    }
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/steinflow.h");
    let src = include_str!("../src/lib.rs");
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("SF_STATUS_OK = 0"));
    let v = unsafe { CStr::from_ptr(sf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
