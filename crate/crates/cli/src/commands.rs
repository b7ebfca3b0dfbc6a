//! The subcommands as library functions.

use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use geomask::eval::{score_diff, score_prediction, LogScoreRule, ScoreReport};
use geomask::geo::{ingest_clusters, CoordMode, Ingested};
use geomask::jitter::JitterScheme;
use geomask::model::{build_schemes, fit, Family, FitConfig, FitResult, ModelVariant, PredictConfig, PredictMode, PriorSpec};
use rayon::prelude::*;

use crate::config::StudyConfig;
use crate::io::{self, num};
use crate::simulate::{simulate_replicate, synthetic_regions};
use crate::study::{write_scores, RunManifest, SCORES_HEADER};

pub fn read_dataset(clusters: &Path, regions: &Path, coords: CoordMode) -> Result<Ingested> {
    let c = File::open(clusters).with_context(|| format!("opening {}", clusters.display()))?;
    let r = File::open(regions).with_context(|| format!("opening {}", regions.display()))?;
    Ok(ingest_clusters(c, r, coords)?)
}

/// Write every replicate of the configured scenario under `out/rep_XXX/`.
pub fn cmd_simulate(config: &StudyConfig, out: &Path) -> Result<RunManifest> {
    config.validate()?;
    std::fs::create_dir_all(out)?;
    let regions = synthetic_regions(config);
    let mut manifest = RunManifest::new(config);
    io::write_regions_geojson(&out.join("regions.geojson"), &regions)?;
    manifest.outputs.push("regions.geojson".into());
    let written: Vec<Vec<PathBuf>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| -> Result<Vec<PathBuf>> {
            let data = simulate_replicate(config, &regions, r)?;
            let rel = PathBuf::from(format!("rep_{r:03}"));
            let dir = out.join(&rel);
            std::fs::create_dir_all(&dir)?;
            io::write_clusters(&dir.join("clusters.csv"), &data)?;
            io::write_truth_clusters(&dir.join("truth_clusters.csv"), &data)?;
            io::write_prediction_truth(&dir.join("prediction.csv"), &data.prediction_points, &data.truth)?;
            Ok(["clusters.csv", "truth_clusters.csv", "prediction.csv"].iter().map(|f| rel.join(f)).collect())
        })
        .collect::<Result<_>>()?;
    manifest.outputs.extend(written.into_iter().flatten());
    manifest.write(&out.join("manifest.json"))?;
    Ok(manifest)
}

/// Options of the `fit` subcommand.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub family: Family,
    /// `None` fits Model-S; otherwise Model-J under this scheme.
    pub jitter: Option<JitterScheme>,
    pub prior: PriorSpec,
    pub grid: usize,
    pub buffer_km: Option<f64>,
}

/// Fit one model. Writes `out` (JSON) and the latent dump beside it with
/// extension `latent.bin`.
pub fn cmd_fit(data: &Ingested, options: &FitOptions, out: &Path) -> Result<FitResult> {
    let variant = match options.jitter {
        None => ModelVariant::Standard,
        Some(j) => ModelVariant::Jittered(j),
    };
    let config = FitConfig {
        family: options.family,
        variant,
        prior: options.prior,
        grid: options.grid,
        buffer: options.buffer_km,
        ..FitConfig::default()
    };
    let f = fit(&data.clusters, &data.regions, &config)?;
    f.save(out, &latent_path(out))?;
    Ok(f)
}

pub fn latent_path(json: &Path) -> PathBuf {
    json.with_extension("latent.bin")
}

pub fn load_fit(json: &Path) -> Result<FitResult> {
    FitResult::load(json, &latent_path(json)).with_context(|| format!("loading fit {}", json.display()))
}

pub fn predict_config(samples: usize, seed: u64) -> PredictConfig {
    PredictConfig { n_samples: samples, seed, mode: PredictMode::Fixed, ..PredictConfig::default() }
}

/// Posterior summaries at the points of `points_csv`.
pub fn cmd_predict(fit_json: &Path, points_csv: &Path, config: &PredictConfig, out: &Path) -> Result<()> {
    let f = load_fit(fit_json)?;
    let (points, _) = io::read_points(points_csv)?;
    let pred = geomask::model::predict(&f, &points, config)?;
    io::write_predictions(out, &pred)
}

/// Score one or both fits against the `truth` column of `truth_csv`. Writes
/// `scores.csv` and `coverage.csv`, and `score_diffs.csv` when both fits are
/// given.
pub fn cmd_score(
    standard: Option<&Path>,
    jittered: Option<&Path>,
    truth_csv: &Path,
    config: &PredictConfig,
    out: &Path,
) -> Result<Vec<ScoreReport>> {
    if standard.is_none() && jittered.is_none() {
        bail!("score needs at least one fit");
    }
    let (points, truth) = io::read_points(truth_csv)?;
    let truth = truth.ok_or_else(|| anyhow!("{} has no `truth` column", truth_csv.display()))?;
    std::fs::create_dir_all(out)?;
    let mut scores = csv::Writer::from_path(out.join("scores.csv"))?;
    scores.write_record(SCORES_HEADER)?;
    let mut coverage = csv::Writer::from_path(out.join("coverage.csv"))?;
    coverage.write_record(["replicate", "model", "coverage"])?;
    let mut reports = Vec::new();
    let mut by_model = [None, None];
    for (slot, (label, path)) in [("S", standard), ("J", jittered)].into_iter().enumerate() {
        let Some(path) = path else { continue };
        let f = load_fit(path)?;
        let pred = geomask::model::predict(&f, &points, config)?;
        let report = score_prediction(&pred, &truth, LogScoreRule::for_family(f.family))?;
        let moments: Vec<(f64, f64)> = (0..points.len()).map(|i| (pred.mean(i), pred.sd(i))).collect();
        write_scores(&mut scores, 0, label, &points, &moments, &report)?;
        coverage.write_record(["0", label, &num(report.coverage)])?;
        by_model[slot] = Some(reports.len());
        reports.push(report);
    }
    scores.flush()?;
    coverage.flush()?;
    if let [Some(s), Some(j)] = by_model {
        let d = score_diff(&reports[j], &reports[s]);
        let mut w = csv::Writer::from_path(out.join("score_diffs.csv"))?;
        w.write_record(["replicate", "crps_j", "crps_s", "crps_rel_pct", "log_score_j", "log_score_s", "log_score_diff"])?;
        w.write_record([
            "0".to_string(),
            num(reports[j].mean_crps),
            num(reports[s].mean_crps),
            num(d.crps_rel_pct),
            num(reports[j].mean_log_score),
            num(reports[s].mean_log_score),
            num(d.log_score_diff),
        ])?;
        w.flush()?;
    }
    Ok(reports)
}

/// Integration points and weights of every cluster.
pub fn cmd_quad_dump(data: &Ingested, jitter: &JitterScheme, out: impl std::io::Write) -> Result<()> {
    let schemes = build_schemes(&data.clusters, &data.regions, &ModelVariant::Jittered(*jitter))?;
    let ids: Vec<String> = data.clusters.iter().map(|c| c.id.clone()).collect();
    io::write_quad_dump(out, &schemes, &ids)
}
