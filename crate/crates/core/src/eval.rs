//! Scoring rules, coverage and bias summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Family, FitResult, HyperParams, Prediction};
use crate::special::logit;

/// Sample CRPS, `mean|X - y| - ½ mean|X - X'|`, with the unbiased pairwise
/// estimator for the second term (sorted, O(m log m)).
pub fn crps_samples(samples: &[f64], truth: f64) -> Result<f64> {
    let m = samples.len();
    if m < 2 {
        return Err(Error::InvalidArgument("CRPS needs at least two samples".into()));
    }
    if !truth.is_finite() || samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("CRPS input"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let abs_err = s.iter().map(|x| (x - truth).abs()).sum::<f64>() / m as f64;
    let mf = m as f64;
    let pair_sum: f64 = s.iter().enumerate().map(|(i, x)| (2.0 * i as f64 - mf + 1.0) * x).sum();
    let spread = 2.0 * pair_sum / (mf * (mf - 1.0));
    Ok((abs_err - 0.5 * spread).max(0.0))
}

/// Closed-form CRPS of `N(mean, sd²)` at `truth`.
pub fn crps_gaussian(mean: f64, sd: f64, truth: f64) -> f64 {
    let z = (truth - mean) / sd;
    let pdf = (-0.5 * z * z).exp() / std::f64::consts::TAU.sqrt();
    let cdf = 0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2);
    sd * (z * (2.0 * cdf - 1.0) + 2.0 * pdf - 1.0 / std::f64::consts::PI.sqrt())
}

/// How the predictive density in the log score is estimated from samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogScoreRule {
    /// Gaussian with the sample moments, on the scale given.
    Gaussian,
    /// Gaussian with the sample moments after a logit transform of samples and truth.
    GaussianLogit,
    /// Gaussian kernel density with Silverman's bandwidth.
    Kde,
}

impl LogScoreRule {
    /// The rule used for each family's predictand.
    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Binomial => LogScoreRule::GaussianLogit,
            Family::Gaussian => LogScoreRule::Gaussian,
        }
    }
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Negative log predictive density at `truth`.
pub fn log_score(samples: &[f64], truth: f64, rule: LogScoreRule) -> Result<f64> {
    if samples.len() < 30 {
        return Err(Error::InvalidArgument("log score needs at least 30 samples".into()));
    }
    let (xs, y): (Vec<f64>, f64) = match rule {
        LogScoreRule::GaussianLogit => {
            let clamp = |p: f64| logit(p.clamp(1e-12, 1.0 - 1e-12));
            (samples.iter().map(|&p| clamp(p)).collect(), clamp(truth))
        }
        _ => (samples.to_vec(), truth),
    };
    if !y.is_finite() || xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("log score input"));
    }
    let (mean, var) = mean_var(&xs);
    if var <= 0.0 {
        return Err(Error::InvalidArgument("samples have zero variance".into()));
    }
    match rule {
        LogScoreRule::Gaussian | LogScoreRule::GaussianLogit => {
            Ok(0.5 * (std::f64::consts::TAU * var).ln() + 0.5 * (y - mean).powi(2) / var)
        }
        LogScoreRule::Kde => {
            let n = xs.len() as f64;
            let h = 1.06 * var.sqrt() * n.powf(-0.2);
            let terms: Vec<f64> = xs.iter().map(|x| -0.5 * ((y - x) / h).powi(2)).collect();
            let lse = crate::special::log_sum_exp(&terms);
            Ok(-(lse - n.ln() - h.ln() - 0.5 * std::f64::consts::TAU.ln()))
        }
    }
}

/// Fraction of intervals containing their truth.
pub fn coverage(intervals: &[(f64, f64)], truths: &[f64]) -> Result<f64> {
    if intervals.len() != truths.len() {
        return Err(Error::InvalidArgument("intervals and truths differ in length".into()));
    }
    if truths.is_empty() {
        return Err(Error::InvalidArgument("coverage of nothing".into()));
    }
    let hit = intervals.iter().zip(truths).filter(|((lo, hi), t)| *lo <= **t && **t <= *hi).count();
    Ok(hit as f64 / truths.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationScore {
    pub location: usize,
    pub crps: f64,
    pub log_score: f64,
    pub lower: f64,
    pub upper: f64,
    pub truth: f64,
}

/// Scores of one prediction against the true surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub locations: Vec<LocationScore>,
    pub mean_crps: f64,
    pub mean_log_score: f64,
    /// Share of locations whose central 95% interval holds the truth.
    pub coverage: f64,
}

pub fn score_prediction(prediction: &Prediction, truth: &[f64], rule: LogScoreRule) -> Result<ScoreReport> {
    if truth.len() != prediction.samples.len() {
        return Err(Error::InvalidArgument("truth and prediction differ in length".into()));
    }
    let locations = truth
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            Ok(LocationScore {
                location: i,
                crps: crps_samples(&prediction.samples[i], t)?,
                log_score: log_score(&prediction.samples[i], t, rule)?,
                lower: prediction.quantile(i, 0.025),
                upper: prediction.quantile(i, 0.975),
                truth: t,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = locations.len() as f64;
    let intervals: Vec<(f64, f64)> = locations.iter().map(|l| (l.lower, l.upper)).collect();
    Ok(ScoreReport {
        mean_crps: locations.iter().map(|l| l.crps).sum::<f64>() / n,
        mean_log_score: locations.iter().map(|l| l.log_score).sum::<f64>() / n,
        coverage: coverage(&intervals, truth)?,
        locations,
    })
}

/// Paired comparison of two models on one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreDiff {
    /// `100 (CRPS_a - CRPS_b) / CRPS_b`.
    pub crps_rel_pct: f64,
    /// `LS_a - LS_b`.
    pub log_score_diff: f64,
}

pub fn score_diff(a: &ScoreReport, b: &ScoreReport) -> ScoreDiff {
    ScoreDiff { crps_rel_pct: 100.0 * (a.mean_crps - b.mean_crps) / b.mean_crps, log_score_diff: a.mean_log_score - b.mean_log_score }
}

/// Average bias and CI length of one parameter over replicate fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub parameter: String,
    /// Absolute for `mu`, relative for the others.
    pub bias: f64,
    pub ci_length: f64,
    pub n_fits: usize,
}

fn truth_value(truth: &HyperParams, name: &str) -> Option<f64> {
    match name {
        "mu" => Some(truth.mu),
        "range" => Some(truth.rho()),
        "sigma2_s" => Some(truth.sigma2_s()),
        "sigma2_n" => truth.sigma2_n(),
        _ => None,
    }
}

pub fn bias_table(fits: &[FitResult], truth: &HyperParams) -> Result<Vec<BiasRow>> {
    if fits.len() < 2 {
        return Err(Error::InvalidArgument("bias table needs at least two fits".into()));
    }
    let names: Vec<String> = fits[0].summaries.iter().map(|s| s.name.clone()).collect();
    names
        .into_iter()
        .map(|name| {
            let t = truth_value(truth, &name).ok_or_else(|| Error::InvalidArgument(format!("truth has no value for `{name}`")))?;
            let mut bias = 0.0;
            let mut ci = 0.0;
            for f in fits {
                let s = f.summary(&name).ok_or_else(|| Error::InvalidArgument(format!("fit lacks `{name}`")))?;
                bias += if name == "mu" { s.estimate - t } else { (s.estimate - t) / t };
                ci += s.upper - s.lower;
            }
            let n = fits.len() as f64;
            Ok(BiasRow { parameter: name, bias: bias / n, ci_length: ci / n, n_fits: fits.len() })
        })
        .collect()
}

/// Jittered-model row with the standard model's value alongside, as in
/// "J (S)" tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedBiasRow {
    pub parameter: String,
    pub bias_j: f64,
    pub bias_s: f64,
    pub ci_length_j: f64,
    pub ci_length_s: f64,
}

pub fn paired_bias_table(j_fits: &[FitResult], s_fits: &[FitResult], truth: &HyperParams) -> Result<Vec<PairedBiasRow>> {
    let j = bias_table(j_fits, truth)?;
    let s = bias_table(s_fits, truth)?;
    j.into_iter()
        .map(|rj| {
            let rs = s
                .iter()
                .find(|r| r.parameter == rj.parameter)
                .ok_or_else(|| Error::InvalidArgument(format!("standard fits lack `{}`", rj.parameter)))?;
            Ok(PairedBiasRow {
                parameter: rj.parameter.clone(),
                bias_j: rj.bias,
                bias_s: rs.bias,
                ci_length_j: rj.ci_length,
                ci_length_s: rs.ci_length,
            })
        })
        .collect()
}
