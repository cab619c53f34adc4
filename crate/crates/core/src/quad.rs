//! Gauss-Legendre quadrature, fixed-order and adaptive.

use std::sync::OnceLock;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn rule(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static GL8: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static GL16: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    match n {
        8 => GL8.get_or_init(|| gauss_legendre(8)),
        16 => GL16.get_or_init(|| gauss_legendre(16)),
        _ => panic!("only 8- and 16-point rules are cached"),
    }
}

/// Fixed-order rule on [a, b]; `order` must be 8 or 16.
pub fn fixed<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, order: usize) -> f64 {
    let (x, w) = rule(order);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    x.iter()
        .zip(w)
        .map(|(xi, wi)| wi * f(mid + half * xi))
        .sum::<f64>()
        * half
}

/// Adaptive bisection with a 16-point rule. Never evaluates the endpoints, so
/// integrable endpoint singularities are handled by repeated refinement.
pub fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let whole = fixed(f, a, b, 16);
    adaptive_rec(f, a, b, whole, tol, 0)
}

fn adaptive_rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let left = fixed(f, a, m, 16);
    let right = fixed(f, m, b, 16);
    let refined = left + right;
    if depth >= 60 || (refined - whole).abs() <= tol.max(1e-15 * refined.abs()) {
        return refined;
    }
    adaptive_rec(f, a, m, left, 0.5 * tol, depth + 1) + adaptive_rec(f, m, b, right, 0.5 * tol, depth + 1)
}

/// Composite 16-point rule over `panels` equal sub-intervals.
pub fn composite<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let width = (b - a) / panels as f64;
    (0..panels)
        .map(|p| {
            let lo = a + p as f64 * width;
            fixed(&f, lo, lo + width, 16)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules_integrate_polynomials_exactly() {
        for &n in &[8usize, 16] {
            // exact for degree 2n - 1
            let deg = 2 * n - 1;
            let got = fixed(|x| x.powi(deg as i32 - 1), 0.0, 1.0, n);
            assert!((got - 1.0 / (deg as f64)).abs() < 1e-14, "n={n} got={got}");
        }
        let (_, w) = gauss_legendre(16);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_handles_log_singularity() {
        // ∫_0^1 -ln x dx = 1
        let got = adaptive(&|x: f64| -x.ln(), 0.0, 1.0, 1e-13);
        assert!((got - 1.0).abs() < 1e-11, "got {got}");
    }
}
