use crate::error::Result;
use crate::field::BasisField;
use crate::quadrature::IntegrationScheme;
use crate::special::{ln_binomial, log1p_exp, log_sum_exp, logistic};

use super::{Family, HyperParams};

/// Log likelihood and its first two derivatives in `eta`, plus the
/// derivative in `log(sigma_n)` (zero for the binomial family).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsDerivs {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d_log_sigma_n: f64,
}

/// Log likelihood of one observation at linear predictor `eta`.
///
/// Binomial: `log C(n, y) + y log p + (n - y) log(1 - p)` with
/// `p = logistic(eta)`; Gaussian: `log N(y; eta, sigma_n^2)`.
pub fn obs_loglik(y: f64, n: u32, eta: f64, family: Family, sigma_n: Option<f64>) -> f64 {
    obs_loglik_derivs(y, n, eta, family, sigma_n, ln_binomial(n as f64, y)).value
}

/// As [`obs_loglik`] with derivatives; `log_norm` is the binomial
/// coefficient term (ignored for the Gaussian family).
pub fn obs_loglik_derivs(y: f64, n: u32, eta: f64, family: Family, sigma_n: Option<f64>, log_norm: f64) -> ObsDerivs {
    match family {
        Family::Binomial => {
            let n = n as f64;
            let p = logistic(eta);
            ObsDerivs { value: log_norm + y * eta - n * log1p_exp(eta), d1: y - n * p, d2: -n * p * (1.0 - p), d_log_sigma_n: 0.0 }
        }
        Family::Gaussian => {
            let s = sigma_n.expect("Gaussian family needs sigma_n");
            let var = s * s;
            let r = y - eta;
            ObsDerivs {
                value: -0.5 * (std::f64::consts::TAU * var).ln() - 0.5 * r * r / var,
                d1: r / var,
                d2: -1.0 / var,
                d_log_sigma_n: -1.0 + r * r / var,
            }
        }
    }
}

/// `log Σ_p λ_p π(y | eta(s_p))` over the quadrature points of one cluster.
pub fn cluster_mixture_loglik(
    scheme: &IntegrationScheme,
    y: f64,
    n: u32,
    w: &[f64],
    theta: &HyperParams,
    field: &BasisField,
    family: Family,
) -> Result<f64> {
    let log_norm = ln_binomial(n as f64, y);
    let mut terms = Vec::with_capacity(scheme.len());
    for (p, &lambda) in scheme.points.iter().zip(&scheme.weights) {
        let eta = theta.mu + field.eval(p, w)?;
        terms.push(lambda.ln() + obs_loglik_derivs(y, n, eta, family, theta.sigma_n(), log_norm).value);
    }
    Ok(log_sum_exp(&terms))
}
