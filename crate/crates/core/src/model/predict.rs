use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::BasisRow;
use crate::geo::PlanarPoint;
use crate::special::logistic;

use super::{Family, FitResult, HyperParams, LatentModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictMode {
    /// Field weights from the Gaussian approximation at the hyperparameter mode.
    Fixed,
    /// Re-solve the conditional mode of the weights for every hyperparameter draw.
    Resolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub mode: PredictMode,
    /// Hyperparameter draws in resolved mode; samples are split evenly among them.
    pub n_theta: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self { n_samples: 1000, seed: 1, mode: PredictMode::Fixed, n_theta: 20 }
    }
}

/// Posterior draws of the latent surface at each point: the prevalence
/// `logistic(eta)` for binomial fits, `eta` itself for Gaussian fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub points: Vec<PlanarPoint>,
    /// `samples[i]` holds the draws at `points[i]`.
    pub samples: Vec<Vec<f64>>,
}

impl Prediction {
    pub fn mean(&self, i: usize) -> f64 {
        let s = &self.samples[i];
        s.iter().sum::<f64>() / s.len() as f64
    }

    pub fn sd(&self, i: usize) -> f64 {
        let s = &self.samples[i];
        let m = self.mean(i);
        (s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (s.len() as f64 - 1.0).max(1.0)).sqrt()
    }

    /// Empirical quantile with linear interpolation.
    pub fn quantile(&self, i: usize, q: f64) -> f64 {
        let mut s = self.samples[i].clone();
        s.sort_by(f64::total_cmp);
        let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
    }
}

fn split_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

fn lower_factor(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.unpack()).ok_or_else(|| Error::Factorization(what.into()))
}

struct Sampler<'a> {
    rows: &'a [BasisRow],
    family: Family,
}

impl Sampler<'_> {
    fn surface(&self, mu: f64, w: &DVector<f64>) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| {
                let eta = mu + row.dot(w.as_slice());
                match self.family {
                    Family::Binomial => logistic(eta),
                    Family::Gaussian => eta,
                }
            })
            .collect()
    }

    /// `count` draws of `w ~ N(w_hat, H⁻¹)` paired with `mu` values.
    fn draws(&self, w_hat: &DVector<f64>, hessian: &DMatrix<f64>, mus: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
        let l = lower_factor(hessian, "latent Hessian")?;
        let lt = l.transpose();
        mus.iter()
            .map(|&mu| {
                let z = normal_vec(rng, w_hat.len());
                let dw = lt.solve_upper_triangular(&z).ok_or_else(|| Error::Factorization("triangular solve".into()))?;
                Ok(self.surface(mu, &(w_hat + dw)))
            })
            .collect()
    }
}

fn theta_draws(fit: &FitResult, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let center = DVector::from_vec(fit.theta_hat.to_vec());
    let l = lower_factor(&fit.theta_cov_matrix(), "hyperparameter covariance")?;
    Ok((0..count).map(|_| (&center + &l * normal_vec(rng, center.len())).as_slice().to_vec()).collect())
}

fn transpose(draws: Vec<Vec<f64>>, n_points: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(draws.len()); n_points];
    for d in draws {
        for (o, v) in out.iter_mut().zip(d) {
            o.push(v);
        }
    }
    out
}

/// Posterior predictive draws from the stored Gaussian approximation:
/// hyperparameters from their approximate posterior, field weights from
/// the approximation at the mode.
pub fn predict(fit: &FitResult, points: &[PlanarPoint], config: &PredictConfig) -> Result<Prediction> {
    let h = fit.w_hessian.as_ref().ok_or_else(|| Error::InvalidArgument("fit has no latent Hessian".into()))?;
    let rows = points.iter().map(|p| fit.field.eval_basis(p)).collect::<Result<Vec<_>>>()?;
    let sampler = Sampler { rows: &rows, family: fit.family };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mus: Vec<f64> = theta_draws(fit, config.n_samples, &mut rng)?.iter().map(|t| t[0]).collect();
    let w_hat = DVector::from_column_slice(&fit.w_hat);
    let draws = sampler.draws(&w_hat, h, &mus, &mut rng)?;
    Ok(Prediction { points: points.to_vec(), samples: transpose(draws, points.len()) })
}

/// As [`predict`], but the conditional weight mode and Hessian are
/// recomputed at every hyperparameter draw.
pub fn predict_resolved(fit: &FitResult, model: &LatentModel, points: &[PlanarPoint], config: &PredictConfig) -> Result<Prediction> {
    if config.mode == PredictMode::Fixed {
        return predict(fit, points, config);
    }
    let rows = points.iter().map(|p| fit.field.eval_basis(p)).collect::<Result<Vec<_>>>()?;
    let sampler = Sampler { rows: &rows, family: fit.family };
    let n_theta = config.n_theta.clamp(1, config.n_samples.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let thetas = theta_draws(fit, n_theta, &mut rng)?;
    let groups: Vec<Vec<Vec<f64>>> = thetas
        .par_iter()
        .enumerate()
        .map(|(g, t)| {
            let theta = HyperParams::from_slice(t, fit.family)?;
            let sol = model.laplace(&theta, Some(&fit.w_hat))?;
            let count = config.n_samples / n_theta + usize::from(g < config.n_samples % n_theta);
            let mut grng = ChaCha8Rng::seed_from_u64(split_seed(config.seed, g as u64 + 1));
            sampler.draws(&sol.w_hat, &sol.hessian, &vec![theta.mu; count], &mut grng)
        })
        .collect::<Result<_>>()?;
    Ok(Prediction { points: points.to_vec(), samples: transpose(groups.into_iter().flatten().collect(), points.len()) })
}
