//! Latent Gaussian model for (possibly jittered) cluster data.
//!
//! The linear predictor at a location is `eta(s) = mu + Σ_k φ_k(s) w_k` with
//! knot weights `w ~ N(0, Σ(range, sigma_s))`. Each cluster contributes the
//! log of a weighted mixture of observation likelihoods over its quadrature
//! points; with a single-point quadrature this is the ordinary geostatistical
//! likelihood. The weights are integrated out by a Laplace approximation and
//! the hyperparameters are found by quasi-Newton optimization.

mod fit;
mod latent;
mod likelihood;
mod optim;
mod predict;
mod prior;

pub use fit::{build_schemes, fit, fit_model, FitConfig, FitResult, ModelVariant, ParamSummary, FIELD_MARGIN_KM};
pub use latent::{JointEval, LaplaceSolution, LatentModel};
pub use likelihood::{cluster_mixture_loglik, obs_loglik, obs_loglik_derivs, ObsDerivs};
pub use optim::{minimize_bfgs, BfgsConfig, BfgsOutcome};
pub use predict::{predict, predict_resolved, PredictConfig, PredictMode, Prediction};
pub use prior::{pc_prior_logdensity, PriorSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Logit link, `y ~ Binomial(n, logistic(eta))`.
    Binomial,
    /// Identity link, `y ~ N(eta, sigma_n^2)`.
    Gaussian,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binomial" => Ok(Family::Binomial),
            "gaussian" => Ok(Family::Gaussian),
            other => Err(Error::InvalidArgument(format!("unknown family `{other}`"))),
        }
    }
}

impl Family {
    pub fn n_hyper(&self) -> usize {
        match self {
            Family::Binomial => 3,
            Family::Gaussian => 4,
        }
    }
}

/// Hyperparameters on the optimization scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub mu: f64,
    pub log_rho: f64,
    pub log_sigma_s: f64,
    /// Gaussian family only.
    pub log_sigma_n: Option<f64>,
}

impl HyperParams {
    pub fn natural(mu: f64, rho: f64, sigma2_s: f64, sigma2_n: Option<f64>) -> Self {
        Self { mu, log_rho: rho.ln(), log_sigma_s: 0.5 * sigma2_s.ln(), log_sigma_n: sigma2_n.map(|v| 0.5 * v.ln()) }
    }

    pub fn rho(&self) -> f64 {
        self.log_rho.exp()
    }

    pub fn sigma_s(&self) -> f64 {
        self.log_sigma_s.exp()
    }

    pub fn sigma2_s(&self) -> f64 {
        (2.0 * self.log_sigma_s).exp()
    }

    pub fn sigma_n(&self) -> Option<f64> {
        self.log_sigma_n.map(f64::exp)
    }

    pub fn sigma2_n(&self) -> Option<f64> {
        self.log_sigma_n.map(|v| (2.0 * v).exp())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.mu, self.log_rho, self.log_sigma_s];
        v.extend(self.log_sigma_n);
        v
    }

    pub fn from_slice(v: &[f64], family: Family) -> Result<Self> {
        if v.len() != family.n_hyper() {
            return Err(Error::InvalidArgument(format!("expected {} hyperparameters for {family:?}, got {}", family.n_hyper(), v.len())));
        }
        Ok(Self { mu: v[0], log_rho: v[1], log_sigma_s: v[2], log_sigma_n: v.get(3).copied() })
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|x| x.is_finite())
    }

    pub fn matern(&self) -> crate::field::MaternParams {
        crate::field::MaternParams { sigma2: self.sigma2_s(), range: self.rho() }
    }
}
