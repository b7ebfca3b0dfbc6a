//! Scalar special functions used by the covariance and likelihood code.

use statrs::function::gamma::ln_gamma;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Modified Bessel functions of the second kind `(K0(x), K1(x))` for `x > 0`.
///
/// Power series below `x = 2`; above, trapezoidal quadrature of
/// `K_v(x) = ∫_0^∞ exp(-x cosh t) cosh(v t) dt`, which converges
/// geometrically in the step size for this analytic integrand.
pub fn bessel_k01(x: f64) -> (f64, f64) {
    debug_assert!(x > 0.0);
    if x <= 2.0 {
        k01_series(x)
    } else {
        k01_integral(x)
    }
}

pub fn bessel_k1(x: f64) -> f64 {
    bessel_k01(x).1
}

pub fn bessel_k0(x: f64) -> f64 {
    bessel_k01(x).0
}

fn k01_series(x: f64) -> (f64, f64) {
    let q = 0.25 * x * x;
    let log_half = (0.5 * x).ln();

    // k-th terms: q^k / (k!)^2 and q^k / (k! (k+1)!)
    let mut t0 = 1.0;
    let mut t1 = 1.0;
    let mut harmonic = 0.0; // H_k
    let mut i0 = 0.0;
    let mut i1_sum = 0.0;
    let mut k0_tail = 0.0;
    let mut k1_tail = 0.0;
    for k in 0..60 {
        let kf = k as f64;
        if k > 0 {
            t0 *= q / (kf * kf);
            t1 *= q / (kf * (kf + 1.0));
            harmonic += 1.0 / kf;
        }
        i0 += t0;
        i1_sum += t1;
        k0_tail += harmonic * t0;
        // psi(k+1) + psi(k+2) = 2 H_k + 1/(k+1) - 2 gamma
        k1_tail += (2.0 * harmonic + 1.0 / (kf + 1.0) - 2.0 * EULER_GAMMA) * t1;
        if t0 < 1e-18 * i0 && t1 < 1e-18 * i1_sum {
            break;
        }
    }
    let i1 = 0.5 * x * i1_sum;
    let k0 = -(log_half + EULER_GAMMA) * i0 + k0_tail;
    let k1 = 1.0 / x + log_half * i1 - 0.25 * x * k1_tail;
    (k0, k1)
}

fn k01_integral(x: f64) -> (f64, f64) {
    const STEP: f64 = 0.125;
    // scaled by exp(x) to keep terms O(1)
    let mut k0 = 0.5;
    let mut k1 = 0.5;
    let mut t = STEP;
    loop {
        let ch = t.cosh();
        let e = (-x * (ch - 1.0)).exp();
        if e < 1e-18 {
            break;
        }
        k0 += e;
        k1 += e * ch;
        t += STEP;
    }
    let scale = STEP * (-x).exp();
    (k0 * scale, k1 * scale)
}

/// `log(n choose k)` for real `k` in `[0, n]`.
pub fn ln_binomial(n: f64, k: f64) -> f64 {
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(1 + exp(x))` without overflow.
pub fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `log Σ exp(v)`; `-inf` when every term is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Polynomial approximations (Abramowitz & Stegun 9.8.1-9.8.8), ~1e-7 relative.
    fn k0_poly(x: f64) -> f64 {
        if x <= 2.0 {
            let t = (x / 3.75).powi(2);
            let i0 = 1.0 + t * (3.5156229 + t * (3.0899424 + t * (1.2067492 + t * (0.2659732 + t * (0.0360768 + t * 0.0045813)))));
            let y = x * x / 4.0;
            -(x / 2.0).ln() * i0
                + (-0.57721566
                    + y * (0.42278420 + y * (0.23069756 + y * (0.03488590 + y * (0.00262698 + y * (0.00010750 + y * 0.0000074))))))
        } else {
            let y = 2.0 / x;
            (-x).exp() / x.sqrt()
                * (1.25331414
                    + y * (-0.07832358 + y * (0.02189568 + y * (-0.01062446 + y * (0.00587872 + y * (-0.00251540 + y * 0.00053208))))))
        }
    }

    fn k1_poly(x: f64) -> f64 {
        if x <= 2.0 {
            let t = (x / 3.75).powi(2);
            let i1 =
                x * (0.5 + t * (0.87890594 + t * (0.51498869 + t * (0.15084934 + t * (0.02658733 + t * (0.00301532 + t * 0.00032411))))));
            let y = x * x / 4.0;
            (x / 2.0).ln() * i1
                + (1.0 / x)
                    * (1.0
                        + y * (0.15443144
                            + y * (-0.67278579 + y * (-0.18156897 + y * (-0.01919402 + y * (-0.00110404 + y * (-0.00004686)))))))
        } else {
            let y = 2.0 / x;
            (-x).exp() / x.sqrt()
                * (1.25331414
                    + y * (0.23498619 + y * (-0.03655620 + y * (0.01504268 + y * (-0.00780353 + y * (0.00325614 + y * (-0.00068245)))))))
        }
    }

    #[test]
    fn bessel_matches_polynomial_approximations() {
        for i in 1..400 {
            let x = 0.01 * i as f64 * 1.7;
            let (k0, k1) = bessel_k01(x);
            assert!((k0 - k0_poly(x)).abs() <= 2e-7 * k0_poly(x).abs().max(1e-300), "K0({x})");
            assert!((k1 - k1_poly(x)).abs() <= 2e-7 * k1_poly(x), "K1({x}) = {k1} vs {}", k1_poly(x));
        }
    }

    #[test]
    fn bessel_is_continuous_at_branch_switch() {
        let (a0, a1) = k01_series(2.0);
        let (b0, b1) = k01_integral(2.0);
        assert!((a0 - b0).abs() < 1e-14 && (a1 - b1).abs() < 1e-14);
    }

    #[test]
    fn matern_value_at_range() {
        let x = 8f64.sqrt();
        assert!((x * bessel_k1(x) - 0.1397).abs() < 5e-5);
    }

    #[test]
    fn stable_logistic_helpers() {
        assert_eq!(logistic(0.0), 0.5);
        assert!(logistic(-800.0) > 0.0 || logistic(-800.0) == 0.0);
        assert!((log1p_exp(800.0) - 800.0).abs() < 1e-12);
        assert!((log1p_exp(-800.0)).abs() < 1e-300);
        assert!((logit(logistic(1.3)) - 1.3).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn binomial_coefficient() {
        assert!((ln_binomial(100.0, 50.0) - 66.783_841_652_017_37).abs() < 1e-9);
        assert!(ln_binomial(1.0, 1.0).abs() < 1e-12);
    }
}
