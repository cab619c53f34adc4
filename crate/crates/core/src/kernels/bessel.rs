//! Modified Bessel functions of the second kind for integer and half-integer order.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const SERIES_CROSSOVER: f64 = 2.0;

/// `K_ν(r)` for `ν` an integer or half-integer (sign of `ν` is irrelevant).
pub fn bessel_k_nu(nu: f64, r: f64) -> Result<f64> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::InvalidArgument(format!("K_nu needs r > 0, got {r}")));
    }
    let nu = nu.abs();
    let twice = 2.0 * nu;
    if (twice - twice.round()).abs() > 1e-12 {
        return Err(Error::UnsupportedOrder(nu));
    }
    let twice = twice.round() as u32;
    if twice % 2 == 1 {
        Ok(half_integer(twice / 2, r))
    } else {
        Ok(integer(twice / 2, r))
    }
}

/// `K_{n+1/2}(r)` from the closed form of `K_{1/2}` and upward recurrence.
fn half_integer(n: u32, r: f64) -> f64 {
    let k_half = (FRAC_PI_2 / r).sqrt() * (-r).exp();
    let mut prev = k_half; // K_{-1/2} = K_{1/2}
    let mut cur = k_half;
    for j in 0..n {
        let nu = j as f64 + 0.5;
        let next = prev + 2.0 * nu / r * cur;
        prev = cur;
        cur = next;
    }
    cur
}

fn integer(n: u32, r: f64) -> f64 {
    let (k0, k1) = k0_k1(r);
    if n == 0 {
        return k0;
    }
    let mut prev = k0;
    let mut cur = k1;
    for j in 1..n {
        let next = prev + 2.0 * j as f64 / r * cur;
        prev = cur;
        cur = next;
    }
    cur
}

/// `(K_0(r), K_1(r))`
pub fn k0_k1(r: f64) -> (f64, f64) {
    if r <= SERIES_CROSSOVER {
        series_k0_k1(r)
    } else {
        continued_fraction_k0_k1(r)
    }
}

fn series_k0_k1(r: f64) -> (f64, f64) {
    let q = 0.25 * r * r;
    let l = (0.5 * r).ln();
    // I_0, I_1
    let mut i0 = 0.0;
    let mut i1 = 0.0;
    let mut s0 = 0.0; // Σ ψ(k+1) q^k / (k!)²
    let mut s1 = 0.0; // Σ (ψ(k+1) + ψ(k+2)) q^k / (k! (k+1)!)
    let mut t0 = 1.0; // q^k / (k!)²
    let mut t1 = 1.0; // q^k / (k! (k+1)!)
    let mut psi = -EULER_GAMMA; // ψ(k+1)
    for k in 0..60 {
        let kf = k as f64;
        let psi_next = psi + 1.0 / (kf + 1.0);
        i0 += t0;
        i1 += t1;
        s0 += psi * t0;
        s1 += (psi + psi_next) * t1;
        if t0 < 1e-18 * i0 && k > 2 {
            break;
        }
        t0 *= q / ((kf + 1.0) * (kf + 1.0));
        t1 *= q / ((kf + 1.0) * (kf + 2.0));
        psi = psi_next;
    }
    let i1 = 0.5 * r * i1;
    let k0 = -l * i0 + s0;
    let k1 = 1.0 / r + l * i1 - 0.25 * r * s1;
    (k0, k1)
}

/// Steed's method for the second continued fraction, order 0.
fn continued_fraction_k0_k1(x: f64) -> (f64, f64) {
    let a1 = 0.25;
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut delh = d;
    let mut h = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 1..10_000 {
        let fi = i as f64;
        a -= 2.0 * fi;
        c = -a * c / (fi + 1.0);
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh *= b * d - 1.0;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < 1e-17 {
            break;
        }
    }
    let h = a1 * h;
    let k0 = (PI / (2.0 * x)).sqrt() * (-x).exp() / s;
    let k1 = k0 * (x + 0.5 - h) / x;
    (k0, k1)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `∫_0^∞ e^{-r cosh t} cosh(νt) dt` by the trapezoid rule, which converges
    /// geometrically for this doubly-exponentially decaying integrand.
    fn integral_oracle(nu: f64, r: f64) -> f64 {
        let step: f64 = 1e-3;
        let mut s = 0.5 * (-r).exp();
        let mut t = step;
        loop {
            let v = (-r * t.cosh()).exp() * (nu * t).cosh();
            s += v;
            if v < 1e-300 || t > 50.0 {
                break;
            }
            t += step;
        }
        s * step
    }

    #[test]
    fn half_order_closed_form() {
        for r in [0.5, 1.0, 2.0] {
            let expect = (PI / (2.0 * r)).sqrt() * (-r).exp();
            assert!((bessel_k_nu(0.5, r).unwrap() - expect).abs() < 1e-15 * expect.max(1.0));
        }
    }

    #[test]
    fn k0_at_one() {
        assert!((bessel_k_nu(0.0, 1.0).unwrap() - 0.421_024_438_2).abs() < 1e-9);
    }

    #[test]
    fn against_integral_representation() {
        for nu in [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0] {
            for r in [0.01, 0.1, 0.5, 1.0, 1.9, 2.0, 2.1, 3.0, 5.0, 10.0, 30.0] {
                let got = bessel_k_nu(nu, r).unwrap();
                let want = integral_oracle(nu, r);
                assert!(((got - want) / want).abs() < 1e-10, "nu={nu} r={r}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn decreasing_in_r() {
        for nu in [0.0, 0.5, 1.0] {
            assert!(bessel_k_nu(nu, 1.0).unwrap() > bessel_k_nu(nu, 2.0).unwrap());
        }
    }

    #[test]
    fn bad_inputs() {
        assert!(matches!(bessel_k_nu(0.0, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(bessel_k_nu(0.0, -1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(bessel_k_nu(0.3, 1.0), Err(Error::UnsupportedOrder(_))));
    }

    #[test]
    fn branches_agree_at_crossover() {
        let (a0, a1) = series_k0_k1(2.0);
        let (b0, b1) = continued_fraction_k0_k1(2.0);
        assert!(((a0 - b0) / a0).abs() < 1e-13);
        assert!(((a1 - b1) / a1).abs() < 1e-13);
    }
}
