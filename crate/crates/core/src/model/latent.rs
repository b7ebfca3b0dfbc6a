use std::f64::consts::TAU;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::BasisField;
use crate::geo::ClusterRecord;
use crate::quadrature::IntegrationScheme;
use crate::special::{ln_binomial, log_sum_exp};

use super::likelihood::obs_loglik_derivs;
use super::{Family, HyperParams, PriorSpec};

const MAX_NEWTON: usize = 100;
/// Clusters per reduction chunk; fixed so sums do not depend on thread count.
const CHUNK: usize = 16;

/// One cluster's quadrature, pre-evaluated against the basis. Basis rows use
/// local knot indices into `knots`.
#[derive(Debug, Clone)]
struct ClusterDesign {
    y: f64,
    n: u32,
    log_norm: f64,
    ln_weights: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
    knots: Vec<usize>,
}

impl ClusterDesign {
    fn new(record: &ClusterRecord, scheme: &IntegrationScheme, field: &BasisField, family: Family) -> Result<Self> {
        let mut knots: Vec<usize> = Vec::new();
        let mut rows = Vec::with_capacity(scheme.len());
        let mut ln_weights = Vec::with_capacity(scheme.len());
        for (p, &lambda) in scheme.points.iter().zip(&scheme.weights) {
            if lambda <= 0.0 {
                continue;
            }
            let basis = field.eval_basis(p)?;
            let row = basis
                .iter()
                .map(|(k, v)| {
                    let local = match knots.iter().position(|&g| g == k) {
                        Some(i) => i,
                        None => {
                            knots.push(k);
                            knots.len() - 1
                        }
                    };
                    (local, v)
                })
                .collect();
            rows.push(row);
            ln_weights.push(lambda.ln());
        }
        let log_norm = match family {
            Family::Binomial => ln_binomial(record.n as f64, record.y),
            Family::Gaussian => 0.0,
        };
        Ok(Self { y: record.y, n: record.n, log_norm, ln_weights, rows, knots })
    }
}

/// Accumulated negative data log likelihood and derivatives.
#[derive(Debug, Clone)]
struct DataTerms {
    value: f64,
    grad: Vec<f64>,
    hess: Option<DMatrix<f64>>,
    d_mu: f64,
    d_log_sigma_n: f64,
}

impl DataTerms {
    fn zeros(k: usize, hess: bool) -> Self {
        Self { value: 0.0, grad: vec![0.0; k], hess: hess.then(|| DMatrix::zeros(k, k)), d_mu: 0.0, d_log_sigma_n: 0.0 }
    }

    fn add(&mut self, other: &DataTerms) {
        self.value += other.value;
        self.grad.iter_mut().zip(&other.grad).for_each(|(a, b)| *a += b);
        if let (Some(a), Some(b)) = (self.hess.as_mut(), other.hess.as_ref()) {
            *a += b;
        }
        self.d_mu += other.d_mu;
        self.d_log_sigma_n += other.d_log_sigma_n;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Need {
    Value,
    Gradient,
    Hessian,
}

/// Covariance factorization for one hyperparameter value.
struct ThetaState {
    theta: HyperParams,
    chol: Cholesky<f64, Dyn>,
    precision: DMatrix<f64>,
    log_det_cov: f64,
}

/// `joint_neg_logpost` output.
#[derive(Debug, Clone)]
pub struct JointEval {
    pub value: f64,
    pub grad_w: Vec<f64>,
    /// With respect to `(mu, log_rho, log_sigma_s[, log_sigma_n])`.
    pub grad_theta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LaplaceSolution {
    /// Negative log marginal posterior of the optimization-scale hyperparameters.
    pub value: f64,
    pub w_hat: DVector<f64>,
    /// `w`-Hessian of the joint negative log posterior at `w_hat`.
    pub hessian: DMatrix<f64>,
    pub log_det_hessian: f64,
    pub joint_at_mode: f64,
    pub iterations: usize,
}

/// Data, quadrature and basis assembled for one model fit.
#[derive(Debug, Clone)]
pub struct LatentModel {
    family: Family,
    field: BasisField,
    prior: PriorSpec,
    clusters: Vec<ClusterDesign>,
}

impl LatentModel {
    pub fn new(
        family: Family,
        records: &[ClusterRecord],
        schemes: &[IntegrationScheme],
        field: BasisField,
        prior: PriorSpec,
    ) -> Result<Self> {
        if records.len() != schemes.len() {
            return Err(Error::InvalidArgument(format!("{} clusters but {} schemes", records.len(), schemes.len())));
        }
        for (i, r) in records.iter().enumerate() {
            let ok = match family {
                Family::Binomial => r.n >= 1 && r.y >= 0.0 && r.y <= r.n as f64 && r.y.fract() == 0.0,
                Family::Gaussian => r.y.is_finite(),
            };
            if !ok {
                return Err(Error::InvalidArgument(format!("cluster {i}: invalid response y={} n={}", r.y, r.n)));
            }
        }
        let clusters = records.iter().zip(schemes).map(|(r, s)| ClusterDesign::new(r, s, &field, family)).collect::<Result<Vec<_>>>()?;
        Ok(Self { family, field, prior, clusters })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn field(&self) -> &BasisField {
        &self.field
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn n_knots(&self) -> usize {
        self.field.n_knots()
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    fn check_theta(&self, theta: &HyperParams) -> Result<()> {
        if !theta.is_finite() {
            return Err(Error::NonFinite("hyperparameters"));
        }
        if (self.family == Family::Gaussian) != theta.log_sigma_n.is_some() {
            return Err(Error::InvalidArgument("log_sigma_n must be present exactly for the Gaussian family".into()));
        }
        Ok(())
    }

    fn prepare(&self, theta: &HyperParams) -> Result<ThetaState> {
        self.check_theta(theta)?;
        let cov = self.field.weight_cov(&theta.matern());
        let chol = cov.cholesky().ok_or_else(|| Error::Factorization("knot covariance".into()))?;
        let log_det_cov = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let precision = chol.inverse();
        Ok(ThetaState { theta: *theta, chol, precision, log_det_cov })
    }

    fn cluster_terms(&self, c: &ClusterDesign, w: &[f64], theta: &HyperParams, need: Need, out: &mut DataTerms) {
        let sigma_n = theta.sigma_n();
        let np = c.ln_weights.len();
        let mut a = Vec::with_capacity(np);
        let mut d1 = Vec::with_capacity(np);
        let mut d2 = Vec::with_capacity(np);
        let mut dls = Vec::with_capacity(np);
        for (row, lw) in c.rows.iter().zip(&c.ln_weights) {
            let eta = theta.mu + row.iter().map(|&(l, v)| v * w[c.knots[l]]).sum::<f64>();
            let od = obs_loglik_derivs(c.y, c.n, eta, self.family, sigma_n, c.log_norm);
            a.push(lw + od.value);
            d1.push(od.d1);
            d2.push(od.d2);
            dls.push(od.d_log_sigma_n);
        }
        let mix = log_sum_exp(&a);
        out.value -= mix;
        if need == Need::Value || !mix.is_finite() {
            return;
        }
        let resp: Vec<f64> = a.iter().map(|ai| (ai - mix).exp()).collect();

        let nk = c.knots.len();
        let mut v = vec![0.0; nk];
        for p in 0..np {
            let rd = resp[p] * d1[p];
            out.d_mu -= rd;
            out.d_log_sigma_n -= resp[p] * dls[p];
            for &(l, val) in &c.rows[p] {
                v[l] += rd * val;
            }
        }
        for (l, &g) in c.knots.iter().enumerate() {
            out.grad[g] -= v[l];
        }
        if need != Need::Hessian {
            return;
        }
        // -[Σ r (d2 + d1²) φ φᵀ - v vᵀ], assembled on the local knot block
        let mut local = vec![0.0; nk * nk];
        for p in 0..np {
            let coef = resp[p] * (d2[p] + d1[p] * d1[p]);
            for &(i, vi) in &c.rows[p] {
                for &(j, vj) in &c.rows[p] {
                    local[i * nk + j] -= coef * vi * vj;
                }
            }
        }
        let hess = out.hess.as_mut().expect("hessian buffer");
        for i in 0..nk {
            for j in 0..nk {
                hess[(c.knots[i], c.knots[j])] += local[i * nk + j] + v[i] * v[j];
            }
        }
    }

    fn data_terms(&self, w: &[f64], theta: &HyperParams, need: Need) -> DataTerms {
        let k = self.n_knots();
        let partials: Vec<DataTerms> = self
            .clusters
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut acc = DataTerms::zeros(k, need == Need::Hessian);
                for c in chunk {
                    self.cluster_terms(c, w, theta, need, &mut acc);
                }
                acc
            })
            .collect();
        let mut total = DataTerms::zeros(k, need == Need::Hessian);
        for p in &partials {
            total.add(p);
        }
        total
    }

    /// Joint terms that do not involve the hyperprior:
    /// data + `½ wᵀQw + ½ log|Σ| + (K/2) log 2π`.
    fn joint_core(&self, state: &ThetaState, data_value: f64, w: &DVector<f64>) -> f64 {
        let k = self.n_knots() as f64;
        let z = state.chol.l_dirty().solve_lower_triangular(w).expect("triangular solve");
        data_value + 0.5 * z.norm_squared() + 0.5 * state.log_det_cov + 0.5 * k * TAU.ln()
    }

    /// Negative log joint posterior of `(w, theta)` with gradients in `w` and
    /// in the hyperparameters (natural-scale priors, no Jacobian).
    pub fn joint_neg_logpost(&self, w: &[f64], theta: &HyperParams) -> Result<JointEval> {
        if w.len() != self.n_knots() {
            return Err(Error::InvalidArgument(format!("w has length {}, expected {}", w.len(), self.n_knots())));
        }
        let (cov, dcov_range) = {
            self.check_theta(theta)?;
            self.field.weight_cov_with_range_derivative(&theta.matern())
        };
        let chol = cov.cholesky().ok_or_else(|| Error::Factorization("knot covariance".into()))?;
        let log_det_cov = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let precision = chol.inverse();
        let state = ThetaState { theta: *theta, chol, precision, log_det_cov };

        let wv = DVector::from_column_slice(w);
        let data = self.data_terms(w, theta, Need::Gradient);
        let value = self.joint_core(&state, data.value, &wv) - self.prior.log_density_natural(theta);

        let qw = &state.precision * &wv;
        let grad_w: Vec<f64> = data.grad.iter().zip(qw.iter()).map(|(a, b)| a + b).collect();

        let prior_grad = self.prior.log_density_natural_grad(theta);
        let k = self.n_knots() as f64;
        // d/dθ [½ wᵀΣ⁻¹w + ½ log|Σ|] = -½ (Qw)ᵀ Σ' (Qw) + ½ tr(Q Σ')
        let quad_range = -0.5 * qw.dot(&(&dcov_range * &qw));
        let trace_range = 0.5 * state.precision.component_mul(&dcov_range).sum();
        let wqw = wv.dot(&qw);
        let mut grad_theta = vec![
            data.d_mu - prior_grad[0],
            quad_range + trace_range - prior_grad[1],
            // Σ scales with sigma², so Σ' = 2Σ
            -wqw + k - prior_grad[2],
        ];
        if self.family == Family::Gaussian {
            grad_theta.push(data.d_log_sigma_n - prior_grad[3]);
        }
        let _ = state.theta;
        Ok(JointEval { value, grad_w, grad_theta })
    }

    /// Value-only version of [`Self::joint_neg_logpost`].
    pub fn joint_value(&self, w: &[f64], theta: &HyperParams) -> Result<f64> {
        let state = self.prepare(theta)?;
        let data = self.data_terms(w, theta, Need::Value);
        Ok(self.joint_core(&state, data.value, &DVector::from_column_slice(w)) - self.prior.log_density_natural(theta))
    }

    /// Dense `w`-Hessian of the joint negative log posterior.
    pub fn joint_hessian(&self, w: &[f64], theta: &HyperParams) -> Result<DMatrix<f64>> {
        let state = self.prepare(theta)?;
        let data = self.data_terms(w, theta, Need::Hessian);
        Ok(data.hess.expect("hessian requested") + &state.precision)
    }

    /// Conditional mode of `w` by damped Newton, and the Laplace
    /// approximation of the negative log marginal posterior of `theta`
    /// (optimization scale, Jacobian included).
    ///
    /// Newton runs on whitened weights `z` with `w = L z`, `LLᵀ = Σ`: the
    /// prior term becomes `½|z|²` and the Hessian `I + Lᵀ H_data L` stays well
    /// conditioned however smooth the field is. `log|Σ|` then cancels from
    /// the approximation.
    pub fn laplace(&self, theta: &HyperParams, warm_start: Option<&[f64]>) -> Result<LaplaceSolution> {
        let state = self.prepare(theta)?;
        let k = self.n_knots();
        let l = state.chol.l();
        let mut z = match warm_start {
            Some(ws) if ws.len() == k && ws.iter().all(|x| x.is_finite()) => {
                l.solve_lower_triangular(&DVector::from_column_slice(ws)).ok_or_else(|| Error::Factorization("warm start".into()))?
            }
            _ => DVector::zeros(k),
        };
        let objective = |z: &DVector<f64>, need: Need| {
            let w = &l * z;
            let data = self.data_terms(w.as_slice(), theta, need);
            (data.value + 0.5 * z.norm_squared(), data, w)
        };
        let mut last_grad_norm = f64::INFINITY;
        for iteration in 0..MAX_NEWTON {
            let (f, data, w) = objective(&z, Need::Hessian);
            if !f.is_finite() {
                return Err(Error::NonFinite("joint objective"));
            }
            let g = &z + l.tr_mul(&DVector::from_vec(data.grad));
            let data_hess = data.hess.expect("hessian requested");
            let mut hess = l.tr_mul(&(&data_hess * &l));
            hess = (&hess + hess.transpose()) * 0.5;
            for i in 0..k {
                hess[(i, i)] += 1.0;
            }
            last_grad_norm = g.amax();

            let (chol, damped) = match hess.clone().cholesky() {
                Some(c) => (c, false),
                None => (damped_cholesky(&hess)?, true),
            };
            let delta = -chol.solve(&g);
            let decrement = -g.dot(&delta);
            let converged = decrement <= 1e-20 * f.abs().max(1.0) || delta.amax() <= 1e-12 * (1.0 + z.amax());
            if converged && !damped {
                return Ok(self.finish(&state, theta, w, f, data_hess, chol, iteration));
            }

            if !damped && decrement <= 1e-10 * f.abs().max(1.0) {
                // quadratic regime: the predicted decrease is below the
                // rounding of f, so a line search cannot judge the step
                z += &delta;
                continue;
            }
            let armijo = 1e-4 * g.dot(&delta);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial = &z + &delta * t;
                let (fv, _, _) = objective(&trial, Need::Value);
                if fv.is_finite() && fv <= f + t * armijo {
                    z = trial;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                // no representable decrease left: accept the current point if
                // it is already a mode up to rounding
                if !damped && decrement <= 1e-12 * f.abs().max(1.0) {
                    return Ok(self.finish(&state, theta, w, f, data_hess, chol, iteration));
                }
                return Err(Error::InnerNewton { iterations: iteration + 1, grad_norm: last_grad_norm });
            }
        }
        Err(Error::InnerNewton { iterations: MAX_NEWTON, grad_norm: last_grad_norm })
    }

    /// `whitened` is the data term plus `½|z|²`; `chol` factors the whitened Hessian.
    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        state: &ThetaState,
        theta: &HyperParams,
        w: DVector<f64>,
        whitened: f64,
        data_hess: DMatrix<f64>,
        chol: Cholesky<f64, Dyn>,
        iterations: usize,
    ) -> LaplaceSolution {
        let k = self.n_knots() as f64;
        let log_det_whitened = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let core = whitened + 0.5 * state.log_det_cov + 0.5 * k * TAU.ln();
        let joint_at_mode = core - self.prior.log_density_natural(&state.theta);
        let value = whitened + 0.5 * log_det_whitened + self.prior.neg_log_density_internal(theta);
        let hessian = data_hess + &state.precision;
        LaplaceSolution { value, w_hat: w, hessian, log_det_hessian: log_det_whitened - state.log_det_cov, joint_at_mode, iterations }
    }

    /// Laplace-approximated negative log marginal posterior of `theta`.
    pub fn laplace_marginal(&self, theta: &HyperParams) -> Result<f64> {
        Ok(self.laplace(theta, None)?.value)
    }
}

fn damped_cholesky(h: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let scale = h.diagonal().iter().map(|d| d.abs()).fold(0.0, f64::max).max(1e-12);
    let mut tau = 1e-8 * scale;
    for _ in 0..30 {
        let shifted = h + DMatrix::identity(h.nrows(), h.ncols()) * tau;
        if let Some(c) = shifted.cholesky() {
            return Ok(c);
        }
        tau *= 10.0;
    }
    Err(Error::Factorization("w-Hessian could not be regularized".into()))
}
