use anyhow::{anyhow, bail, Context, Result};
use geomask::jitter::JitterScheme;
use geomask::model::{Family, HyperParams, PredictMode, PriorSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Basis grid settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    /// Knots per axis; `grid²` knots in total.
    pub grid: usize,
    /// Padding around the study region, km. `None` picks the largest
    /// displacement of the jitter preset plus a 1 km margin.
    pub buffer_km: Option<f64>,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self { grid: 15, buffer_km: None }
    }
}

/// Hyperprior settings. `rho0 = None` sets the prior median range to the
/// true range of the simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub rho0: Option<f64>,
    pub rho_alpha: f64,
    pub sigma_u0: f64,
    pub sigma_alpha: f64,
    pub nugget_u0: f64,
    pub nugget_alpha: f64,
    pub mu_var: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        let p = PriorSpec::default();
        Self {
            rho0: None,
            rho_alpha: p.rho_alpha,
            sigma_u0: p.sigma_u0,
            sigma_alpha: p.sigma_alpha,
            nugget_u0: p.nugget_u0,
            nugget_alpha: p.nugget_alpha,
            mu_var: p.mu_var,
        }
    }
}

/// One simulation scenario and the models fitted to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub family: Family,
    pub mu: f64,
    pub sigma2_s: f64,
    pub range: f64,
    /// Nugget variance of the Gaussian family.
    pub sigma2_n: f64,
    pub n_clusters: usize,
    /// Trials per cluster (binomial family).
    pub n_trials: u32,
    pub urban_fraction: f64,
    /// `dhs` or `dhs4x`.
    pub jitter: String,
    pub replicates: usize,
    /// Side length of the square domain, km.
    pub domain_km: f64,
    /// Counties per axis.
    pub counties: usize,
    /// Prediction points per axis.
    pub prediction_grid: usize,
    pub seed: u64,
    pub field: FieldConfig,
    pub prior: PriorConfig,
    pub predict_samples: usize,
    pub predict_mode: PredictMode,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            family: Family::Binomial,
            mu: 0.0,
            sigma2_s: 1.0,
            range: 160.0,
            sigma2_n: 0.1,
            n_clusters: 150,
            n_trials: 100,
            urban_fraction: 0.3,
            jitter: "dhs4x".into(),
            replicates: 20,
            domain_km: 400.0,
            counties: 4,
            prediction_grid: 20,
            seed: 20_240_601,
            field: FieldConfig::default(),
            prior: PriorConfig::default(),
            predict_samples: 1000,
            predict_mode: PredictMode::Fixed,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 1 {
            bail!("replicates must be at least 1");
        }
        if self.n_clusters < 1 {
            bail!("n_clusters must be at least 1");
        }
        if !(self.range > 0.0 && self.sigma2_s > 0.0 && self.domain_km > 0.0) {
            bail!("range, sigma2_s and domain_km must be positive");
        }
        if self.family == Family::Gaussian && self.sigma2_n.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            bail!("sigma2_n must be positive for the Gaussian family");
        }
        if !(0.0..=1.0).contains(&self.urban_fraction) {
            bail!("urban_fraction must lie in [0, 1]");
        }
        if self.counties < 1 || self.prediction_grid < 1 {
            bail!("counties and prediction_grid must be at least 1");
        }
        if self.field.grid < 2 {
            bail!("field.grid must be at least 2");
        }
        if self.predict_samples < 30 {
            bail!("predict_samples must be at least 30");
        }
        if self.prior_spec().rho0 <= 0.0 {
            bail!("prior rho0 must be positive");
        }
        self.jitter_scheme()?;
        Ok(())
    }

    pub fn jitter_scheme(&self) -> Result<JitterScheme> {
        JitterScheme::preset(&self.jitter).map_err(|e| anyhow!(e))
    }

    pub fn prior_spec(&self) -> PriorSpec {
        let p = &self.prior;
        PriorSpec {
            mu_var: p.mu_var,
            sigma_u0: p.sigma_u0,
            sigma_alpha: p.sigma_alpha,
            rho0: p.rho0.unwrap_or(self.range),
            rho_alpha: p.rho_alpha,
            nugget_u0: p.nugget_u0,
            nugget_alpha: p.nugget_alpha,
        }
    }

    pub fn truth(&self) -> HyperParams {
        let nugget = (self.family == Family::Gaussian).then_some(self.sigma2_n);
        HyperParams::natural(self.mu, self.range, self.sigma2_s, nugget)
    }

    /// Load a JSON file (or the defaults) and apply `key=value` overrides.
    pub fn load(path: Option<&std::path::Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => serde_json::to_value(StudyConfig::default())?,
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let config: StudyConfig = serde_json::from_value(value).context("invalid configuration")?;
        config.validate()?;
        Ok(config)
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Set a dotted key such as `field.grid=12`. The value is read as JSON when
/// it parses and as a plain string otherwise.
pub fn apply_override(target: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| anyhow!("override `{assignment}` is not key=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = target;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| anyhow!("`{key}`: `{part}` is not inside an object"))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    bail!("empty override key")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_keys() {
        let c = StudyConfig::load(None, &["field.grid=9".into(), "jitter=dhs".into(), "prior.rho0=200".into()]).unwrap();
        assert_eq!(c.field.grid, 9);
        assert_eq!(c.jitter, "dhs");
        assert_eq!(c.prior_spec().rho0, 200.0);
    }

    #[test]
    fn prior_median_defaults_to_true_range() {
        let c = StudyConfig::load(None, &["range=340".into()]).unwrap();
        assert_eq!(c.prior_spec().rho0, 340.0);
    }

    #[test]
    fn bad_configs_rejected() {
        assert!(StudyConfig::load(None, &["replicates=0".into()]).is_err());
        assert!(StudyConfig::load(None, &["jitter=swap".into()]).is_err());
        assert!(StudyConfig::load(None, &["no_such_key=1".into()]).is_err());
        assert!(StudyConfig::load(None, &["grid".into()]).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = StudyConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
