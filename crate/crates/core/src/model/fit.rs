use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::BasisField;
use crate::geo::{ClusterRecord, PlanarPoint, RegionSet};
use crate::jitter::JitterScheme;
use crate::quadrature::{build_scheme, IntegrationScheme};
use crate::special::logit;

use super::optim::{minimize_bfgs, BfgsConfig};
use super::{Family, HyperParams, LatentModel, PriorSpec};

const LATENT_MAGIC: &[u8; 8] = b"GMLATNT1";

/// Default padding of the basis grid beyond the largest displacement, km.
pub const FIELD_MARGIN_KM: f64 = 1.0;

/// Which likelihood the clusters enter with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelVariant {
    /// Observed locations treated as exact.
    Standard,
    /// Integrate over the true location under the given displacement scheme.
    Jittered(JitterScheme),
}

impl ModelVariant {
    pub fn label(&self) -> &'static str {
        match self {
            ModelVariant::Standard => "standard",
            ModelVariant::Jittered(_) => "jittered",
        }
    }

    fn max_radius(&self) -> f64 {
        match self {
            ModelVariant::Standard => 0.0,
            ModelVariant::Jittered(j) => j.max_radius(false).max(j.max_radius(true)),
        }
    }
}

/// Integration schemes for every cluster; single points for the standard model.
pub fn build_schemes(records: &[ClusterRecord], regions: &RegionSet, variant: &ModelVariant) -> Result<Vec<IntegrationScheme>> {
    records
        .par_iter()
        .enumerate()
        .map(|(i, r)| match variant {
            ModelVariant::Standard => Ok(IntegrationScheme::single_point(i, r.location)),
            ModelVariant::Jittered(jitter) => {
                let region = regions.get(&r.region).ok_or_else(|| Error::UnknownRegion { row: i, region: r.region.clone() })?;
                build_scheme(i, r.location, r.urban, region, jitter)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub family: Family,
    pub variant: ModelVariant,
    pub prior: PriorSpec,
    /// Knots per axis of the basis grid.
    pub grid: usize,
    /// Padding of the basis grid beyond the region bounding box, km.
    /// Defaults to the largest displacement plus [`FIELD_MARGIN_KM`]. The knot
    /// covariance is stationary, so the grid needs no padding against edge
    /// effects; it only has to hold every integration point.
    pub buffer: Option<f64>,
    /// Explicit basis grid; overrides `grid` and `buffer`.
    pub field: Option<BasisField>,
    pub start: Option<HyperParams>,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Step of the central differences for the hyperparameter gradient.
    pub gradient_step: f64,
    /// Step of the finite-difference curvature at the optimum.
    pub hessian_step: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            family: Family::Binomial,
            variant: ModelVariant::Standard,
            prior: PriorSpec::default(),
            grid: 15,
            buffer: None,
            field: None,
            start: None,
            max_iter: 200,
            grad_tol: 1e-6,
            gradient_step: 1e-3,
            hessian_step: 2e-3,
        }
    }
}

/// Posterior summary of one hyperparameter on its reporting scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    /// Posterior median (the transformed mode of the optimization-scale parameter).
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub internal_mean: f64,
    pub internal_sd: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub family: Family,
    pub variant: ModelVariant,
    pub prior: PriorSpec,
    pub field: BasisField,
    pub theta_hat: HyperParams,
    /// Inverse of the curvature of the negative log marginal posterior
    /// on the optimization scale.
    pub theta_cov: Vec<Vec<f64>>,
    pub summaries: Vec<ParamSummary>,
    pub neg_log_marginal: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub grad_max: f64,
    /// Conditional mode of the knot weights at `theta_hat`.
    #[serde(skip)]
    pub w_hat: Vec<f64>,
    /// `w`-Hessian of the joint negative log posterior at the mode.
    #[serde(skip)]
    pub w_hessian: Option<DMatrix<f64>>,
}

impl FitResult {
    pub fn summary(&self, name: &str) -> Option<&ParamSummary> {
        self.summaries.iter().find(|s| s.name == name)
    }

    pub fn theta_cov_matrix(&self) -> DMatrix<f64> {
        let n = self.theta_cov.len();
        DMatrix::from_fn(n, n, |i, j| self.theta_cov[i][j])
    }

    /// Binary dump of `w_hat` and the `w`-Hessian (little-endian f64).
    pub fn write_latent(&self, mut out: impl Write) -> Result<()> {
        let k = self.w_hat.len();
        let h = self.w_hessian.as_ref().ok_or_else(|| Error::InvalidArgument("fit has no latent Hessian".into()))?;
        out.write_all(LATENT_MAGIC)?;
        out.write_all(&(k as u64).to_le_bytes())?;
        for v in self.w_hat.iter().chain(h.as_slice()) {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_latent(&mut self, mut input: impl Read) -> Result<()> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != LATENT_MAGIC {
            return Err(Error::InvalidArgument("not a latent dump".into()));
        }
        let mut buf = [0u8; 8];
        input.read_exact(&mut buf)?;
        let k = u64::from_le_bytes(buf) as usize;
        if k != self.field.n_knots() {
            return Err(Error::InvalidArgument(format!("latent dump has {k} weights, fit expects {}", self.field.n_knots())));
        }
        let mut read = |n: usize| -> Result<Vec<f64>> {
            (0..n)
                .map(|_| {
                    input.read_exact(&mut buf)?;
                    Ok(f64::from_le_bytes(buf))
                })
                .collect()
        };
        self.w_hat = read(k)?;
        self.w_hessian = Some(DMatrix::from_vec(k, k, read(k * k)?));
        Ok(())
    }

    pub fn save(&self, json_path: &Path, latent_path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(json_path, json + "\n")?;
        self.write_latent(std::io::BufWriter::new(std::fs::File::create(latent_path)?))
    }

    pub fn load(json_path: &Path, latent_path: &Path) -> Result<Self> {
        let mut fit: FitResult = serde_json::from_str(&std::fs::read_to_string(json_path)?)?;
        fit.read_latent(std::io::BufReader::new(std::fs::File::open(latent_path)?))?;
        Ok(fit)
    }
}

fn default_start(records: &[ClusterRecord], family: Family, prior: &PriorSpec) -> HyperParams {
    let (sy, sn) = records.iter().fold((0.0, 0.0), |(a, b), r| (a + r.y, b + r.n as f64));
    let mu = match family {
        Family::Binomial => logit(((sy + 0.5) / (sn + 1.0)).clamp(1e-3, 1.0 - 1e-3)),
        Family::Gaussian => sy / records.len().max(1) as f64,
    };
    HyperParams { mu, log_rho: prior.rho0.ln(), log_sigma_s: 0.0, log_sigma_n: (family == Family::Gaussian).then(|| 0.3f64.ln()) }
}

fn choose_field(records: &[ClusterRecord], regions: &RegionSet, config: &FitConfig) -> Result<BasisField> {
    if let Some(f) = config.field {
        return Ok(f);
    }
    let buffer = config.buffer.unwrap_or(config.variant.max_radius() + FIELD_MARGIN_KM);
    let mut corners: Vec<PlanarPoint> = records.iter().map(|r| r.location).collect();
    if !regions.is_empty() {
        let (lo, hi) = regions.bbox();
        corners.push(lo);
        corners.push(hi);
    }
    BasisField::covering(&corners, buffer, config.grid, config.grid)
}

/// Laplace evaluations sharing a warm start.
struct Marginal<'a> {
    model: &'a LatentModel,
    family: Family,
    warm: Option<Vec<f64>>,
}

impl Marginal<'_> {
    fn value_at(&self, x: &[f64], warm: Option<&[f64]>) -> Result<(f64, Vec<f64>)> {
        let theta = HyperParams::from_slice(x, self.family)?;
        let sol = self.model.laplace(&theta, warm)?;
        Ok((sol.value, sol.w_hat.as_slice().to_vec()))
    }

    /// Value and central-difference gradient.
    fn value_grad(&mut self, x: &[f64], h: f64) -> Result<(f64, Vec<f64>)> {
        let (value, w) = self.value_at(x, self.warm.as_deref())?;
        if !value.is_finite() {
            return Err(Error::NonFinite("Laplace marginal"));
        }
        let n = x.len();
        let shifted: Vec<f64> = (0..2 * n)
            .into_par_iter()
            .map(|j| {
                let mut y = x.to_vec();
                y[j / 2] += if j % 2 == 0 { h } else { -h };
                self.value_at(&y, Some(&w)).map(|(v, _)| v)
            })
            .collect::<Result<_>>()?;
        let grad = (0..n).map(|i| (shifted[2 * i] - shifted[2 * i + 1]) / (2.0 * h)).collect();
        self.warm = Some(w);
        Ok((value, grad))
    }

    /// Central-difference Hessian of the marginal.
    fn hessian(&self, x: &[f64], f0: f64, w: &[f64], h: f64) -> Result<DMatrix<f64>> {
        let n = x.len();
        let mut jobs = Vec::new();
        for i in 0..n {
            for j in i..n {
                let signs: &[(f64, f64)] =
                    if i == j { &[(1.0, 0.0), (-1.0, 0.0)] } else { &[(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] };
                for &(si, sj) in signs {
                    jobs.push((i, j, si, sj));
                }
            }
        }
        let values: Vec<f64> = jobs
            .par_iter()
            .map(|&(i, j, si, sj)| {
                let mut y = x.to_vec();
                y[i] += si * h;
                if i != j {
                    y[j] += sj * h;
                }
                self.value_at(&y, Some(w)).map(|(v, _)| v)
            })
            .collect::<Result<_>>()?;
        let mut hess = DMatrix::zeros(n, n);
        let mut idx = 0;
        for i in 0..n {
            for j in i..n {
                if i == j {
                    hess[(i, i)] = (values[idx] - 2.0 * f0 + values[idx + 1]) / (h * h);
                    idx += 2;
                } else {
                    let v = (values[idx] - values[idx + 1] - values[idx + 2] + values[idx + 3]) / (4.0 * h * h);
                    hess[(i, j)] = v;
                    hess[(j, i)] = v;
                    idx += 4;
                }
            }
        }
        Ok(hess)
    }
}

/// Inverse of a symmetric matrix with eigenvalues clamped to stay positive.
fn pd_inverse(h: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(h.clone());
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max).max(1e-12);
    let inv_vals = eig.eigenvalues.map(|l| 1.0 / l.max(1e-8 * top));
    &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose()
}

fn summarize(theta: &HyperParams, cov: &DMatrix<f64>) -> Vec<ParamSummary> {
    let v = theta.to_vec();
    let mut names = vec![("mu", 1.0, false), ("range", 1.0, true), ("sigma2_s", 2.0, true)];
    if theta.log_sigma_n.is_some() {
        names.push(("sigma2_n", 2.0, true));
    }
    names
        .into_iter()
        .enumerate()
        .map(|(i, (name, power, log))| {
            let sd = cov[(i, i)].max(0.0).sqrt();
            let map = |x: f64| if log { (power * x).exp() } else { x };
            ParamSummary {
                name: name.into(),
                estimate: map(v[i]),
                lower: map(v[i] - 1.959_963_984_540_054 * sd),
                upper: map(v[i] + 1.959_963_984_540_054 * sd),
                internal_mean: v[i],
                internal_sd: sd,
            }
        })
        .collect()
}

/// Fit the model: maximize the Laplace-approximated marginal posterior of the
/// hyperparameters and record the conditional mode of the field weights.
pub fn fit(records: &[ClusterRecord], regions: &RegionSet, config: &FitConfig) -> Result<FitResult> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no clusters to fit".into()));
    }
    let schemes = build_schemes(records, regions, &config.variant)?;
    let field = choose_field(records, regions, config)?;
    let model = LatentModel::new(config.family, records, &schemes, field, config.prior)?;
    fit_model(&model, records, config)
}

/// As [`fit`] for an already assembled model.
pub fn fit_model(model: &LatentModel, records: &[ClusterRecord], config: &FitConfig) -> Result<FitResult> {
    let family = model.family();
    let start = config.start.unwrap_or_else(|| default_start(records, family, model.prior()));
    let mut marginal = Marginal { model, family, warm: None };
    let bfgs = BfgsConfig { max_iter: config.max_iter, grad_tol: config.grad_tol, ..BfgsConfig::default() };
    let h = config.gradient_step;
    let out = minimize_bfgs(|x| marginal.value_grad(x, h), &start.to_vec(), &bfgs)?;

    let theta_hat = HyperParams::from_slice(&out.x, family)?;
    let sol = model.laplace(&theta_hat, marginal.warm.as_deref())?;
    let curvature = marginal.hessian(&out.x, sol.value, sol.w_hat.as_slice(), config.hessian_step)?;
    let cov = pd_inverse(&curvature);
    let theta_cov = (0..cov.nrows()).map(|i| cov.row(i).iter().copied().collect()).collect();
    let w_hat: DVector<f64> = sol.w_hat;
    Ok(FitResult {
        family,
        variant: config.variant,
        prior: *model.prior(),
        field: *model.field(),
        theta_hat,
        theta_cov,
        summaries: summarize(&theta_hat, &cov),
        neg_log_marginal: sol.value,
        converged: out.converged,
        iterations: out.iterations,
        evaluations: out.evaluations,
        grad_max: out.grad.iter().fold(0.0, |m, g| m.max(g.abs())),
        w_hat: w_hat.as_slice().to_vec(),
        w_hessian: Some(sol.hessian),
    })
}
