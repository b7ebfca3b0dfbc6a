use serde::{Deserialize, Serialize};

use super::HyperParams;

/// Prior settings.
///
/// The spatial prior is the penalized-complexity prior for a 2-D Matérn
/// field: `P(sigma_s > sigma_u0) = sigma_alpha` and
/// `P(range < rho0) = rho_alpha` (0.5 makes `rho0` the prior median).
/// The nugget standard deviation gets an exponential prior with
/// `P(sigma_n > nugget_u0) = nugget_alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub mu_var: f64,
    pub sigma_u0: f64,
    pub sigma_alpha: f64,
    pub rho0: f64,
    pub rho_alpha: f64,
    pub nugget_u0: f64,
    pub nugget_alpha: f64,
}

impl PriorSpec {
    pub fn with_rho0(rho0: f64) -> Self {
        Self { rho0, ..Self::default() }
    }

    pub fn lambda_sigma(&self) -> f64 {
        -self.sigma_alpha.ln() / self.sigma_u0
    }

    pub fn lambda_rho(&self) -> f64 {
        -self.rho_alpha.ln() * self.rho0
    }

    pub fn lambda_nugget(&self) -> f64 {
        -self.nugget_alpha.ln() / self.nugget_u0
    }

    /// Negative log prior density of the optimization-scale parameters,
    /// including the Jacobian of the log transforms.
    pub fn neg_log_density_internal(&self, theta: &HyperParams) -> f64 {
        let mut lp = self.log_density_natural(theta);
        lp += theta.log_rho + theta.log_sigma_s;
        if let Some(ls) = theta.log_sigma_n {
            lp += ls;
        }
        -lp
    }

    /// Log prior density of `(mu, rho, sigma_s[, sigma_n])` on the natural scale.
    pub fn log_density_natural(&self, theta: &HyperParams) -> f64 {
        let mut lp = -0.5 * (std::f64::consts::TAU * self.mu_var).ln() - 0.5 * theta.mu * theta.mu / self.mu_var;
        lp += pc_prior_logdensity(theta.rho(), theta.sigma_s(), self);
        if let Some(sn) = theta.sigma_n() {
            let lam = self.lambda_nugget();
            lp += lam.ln() - lam * sn;
        }
        lp
    }

    /// Gradient of [`Self::log_density_natural`] with respect to
    /// `(mu, log_rho, log_sigma_s[, log_sigma_n])`.
    pub fn log_density_natural_grad(&self, theta: &HyperParams) -> Vec<f64> {
        let lr = self.lambda_rho();
        let ls = self.lambda_sigma();
        let rho = theta.rho();
        let sigma = theta.sigma_s();
        let mut g = vec![-theta.mu / self.mu_var, -2.0 + lr / rho, -ls * sigma];
        if let Some(sn) = theta.sigma_n() {
            g.push(-self.lambda_nugget() * sn);
        }
        g
    }
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { mu_var: 1000.0, sigma_u0: 1.0, sigma_alpha: 0.05, rho0: 160.0, rho_alpha: 0.5, nugget_u0: 1.0, nugget_alpha: 0.05 }
    }
}

/// Joint log density of the PC prior for `(range, sigma)` in two dimensions:
/// `log[λ_ρ ρ^-2 exp(-λ_ρ/ρ)] + log[λ_σ exp(-λ_σ σ)]`.
pub fn pc_prior_logdensity(rho: f64, sigma: f64, spec: &PriorSpec) -> f64 {
    let lr = spec.lambda_rho();
    let ls = spec.lambda_sigma();
    lr.ln() - 2.0 * rho.ln() - lr / rho + ls.ln() - ls * sigma
}
