use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use geomask::eval::{paired_bias_table, score_diff, score_prediction, LogScoreRule, PairedBiasRow, ScoreDiff, ScoreReport};
use geomask::geo::RegionSet;
use geomask::model::{fit, FitConfig, FitResult, ModelVariant, PredictConfig, FIELD_MARGIN_KM};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::StudyConfig;
use crate::io::{self, num};
use crate::seeds::ReplicateSeeds;
use crate::simulate::{simulate_replicate, synthetic_regions, Dataset};

/// Environment variable holding the number of replicate workers.
pub const WORKERS_ENV: &str = "GEOMASK_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Model {
    S,
    J,
}

impl Model {
    pub fn label(&self) -> &'static str {
        match self {
            Model::S => "S",
            Model::J => "J",
        }
    }
}

/// Fit, prediction and scores of one model on one replicate. A fit that
/// errors is recorded with its message and left out of every table.
#[derive(Debug, Clone)]
pub struct ModelRun {
    pub model: Model,
    pub fit: Option<FitResult>,
    pub report: Option<ScoreReport>,
    /// Predictive mean and standard deviation at each prediction point.
    pub moments: Vec<(f64, f64)>,
    pub error: Option<String>,
    pub fit_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub data: Dataset,
    pub standard: ModelRun,
    pub jittered: ModelRun,
}

impl ReplicateOutcome {
    pub fn runs(&self) -> [&ModelRun; 2] {
        [&self.standard, &self.jittered]
    }

    /// `J` relative to `S`, when both models produced scores.
    pub fn diff(&self) -> Option<ScoreDiff> {
        Some(score_diff(self.jittered.report.as_ref()?, self.standard.report.as_ref()?))
    }
}

/// Deterministic aggregate of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub replicates: usize,
    pub fitted_s: usize,
    pub fitted_j: usize,
    pub converged_s: usize,
    pub converged_j: usize,
    pub bias: Vec<PairedBiasRow>,
    pub mean_crps_s: f64,
    pub mean_crps_j: f64,
    pub mean_log_score_s: f64,
    pub mean_log_score_j: f64,
    pub mean_coverage_s: f64,
    pub mean_coverage_j: f64,
    /// Means over replicates where both models were scored.
    pub mean_crps_rel_pct: f64,
    pub mean_log_score_diff: f64,
    pub failures: Vec<String>,
}

impl StudySummary {
    pub fn bias_row(&self, parameter: &str) -> Option<&PairedBiasRow> {
        self.bias.iter().find(|r| r.parameter == parameter)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
    pub mean_fit_seconds_s: f64,
    pub mean_fit_seconds_j: f64,
    /// Mean Model-J fit time over mean Model-S fit time.
    pub runtime_ratio_j_over_s: f64,
    pub workers: usize,
}

/// What was run and where the results went. Everything except `timings` is a
/// function of the configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub config: StudyConfig,
    pub seeds: Vec<ReplicateSeeds>,
    pub outputs: Vec<PathBuf>,
    pub timings: Option<Timings>,
}

impl RunManifest {
    pub fn new(config: &StudyConfig) -> Self {
        Self {
            config_hash: config.hash(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            seeds: (0..config.replicates).map(|r| ReplicateSeeds::new(config.seed, r)).collect(),
            outputs: Vec::new(),
            timings: None,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// Both models share one basis grid, sized to hold Model-J's integration
/// points, so they differ only in the likelihood.
pub fn fit_config(config: &StudyConfig, model: Model) -> Result<FitConfig> {
    let scheme = config.jitter_scheme()?;
    let variant = match model {
        Model::S => ModelVariant::Standard,
        Model::J => ModelVariant::Jittered(scheme),
    };
    let reach = scheme.max_radius(true).max(scheme.max_radius(false));
    Ok(FitConfig {
        family: config.family,
        variant,
        prior: config.prior_spec(),
        grid: config.field.grid,
        buffer: Some(config.field.buffer_km.unwrap_or(reach + FIELD_MARGIN_KM)),
        ..FitConfig::default()
    })
}

/// A fit with its scores and predictive moments.
type Scored = (FitResult, ScoreReport, Vec<(f64, f64)>);

fn run_model(config: &StudyConfig, regions: &RegionSet, data: &Dataset, model: Model) -> ModelRun {
    let start = Instant::now();
    let attempt = || -> Result<Scored> {
        let f = fit(&data.records(), regions, &fit_config(config, model)?)?;
        let seed = match model {
            Model::S => data.seeds.predict_standard,
            Model::J => data.seeds.predict_jittered,
        };
        let pc = PredictConfig { n_samples: config.predict_samples, seed, mode: config.predict_mode, ..PredictConfig::default() };
        let pred = geomask::model::predict(&f, &data.prediction_points, &pc)?;
        let report = score_prediction(&pred, &data.truth, LogScoreRule::for_family(config.family))?;
        let moments = (0..pred.points.len()).map(|i| (pred.mean(i), pred.sd(i))).collect();
        Ok((f, report, moments))
    };
    let outcome = attempt();
    let fit_seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok((f, r, moments)) => ModelRun { model, fit: Some(f), report: Some(r), moments, error: None, fit_seconds },
        Err(e) => ModelRun { model, fit: None, report: None, moments: Vec::new(), error: Some(format!("{e:#}")), fit_seconds },
    }
}

/// Simulate one replicate and fit, predict and score both models.
pub fn run_replicate(config: &StudyConfig, regions: &RegionSet, replicate: usize) -> Result<ReplicateOutcome> {
    let data = simulate_replicate(config, regions, replicate)?;
    let standard = run_model(config, regions, &data, Model::S);
    let jittered = run_model(config, regions, &data, Model::J);
    Ok(ReplicateOutcome { data, standard, jittered })
}

/// Worker count from the environment, else the available parallelism.
pub fn workers_from_env() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

pub struct StudyRun {
    pub summary: StudySummary,
    pub outcomes: Vec<ReplicateOutcome>,
    pub manifest: RunManifest,
}

/// Run every replicate on a pool of `workers` threads and, when `out` is
/// given, write the tables there. Results do not depend on the worker count.
pub fn run_study(config: &StudyConfig, out: Option<&Path>, workers: usize) -> Result<StudyRun> {
    config.validate()?;
    let regions = synthetic_regions(config);
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    let outcomes: Vec<ReplicateOutcome> = pool.install(|| {
        (0..config.replicates)
            .into_par_iter()
            .map(|r| {
                let o = run_replicate(config, &regions, r)?;
                if let Some(dir) = out {
                    write_replicate(&dir.join(format!("rep_{r:03}")), &o)?;
                }
                Ok(o)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = summarize(config, &outcomes)?;
    let mut manifest = RunManifest::new(config);
    let fit_time = |m: Model| {
        let t: Vec<f64> = outcomes.iter().flat_map(|o| o.runs()).filter(|r| r.model == m).map(|r| r.fit_seconds).collect();
        t.iter().sum::<f64>() / t.len() as f64
    };
    let (ts, tj) = (fit_time(Model::S), fit_time(Model::J));
    manifest.timings = Some(Timings {
        total_seconds: start.elapsed().as_secs_f64(),
        mean_fit_seconds_s: ts,
        mean_fit_seconds_j: tj,
        runtime_ratio_j_over_s: tj / ts,
        workers,
    });
    if let Some(dir) = out {
        manifest.outputs = write_study_tables(dir, config, &outcomes, &summary)?;
        for r in 0..config.replicates {
            manifest.outputs.push(PathBuf::from(format!("rep_{r:03}")));
        }
        manifest.write(&dir.join("manifest.json"))?;
    }
    Ok(StudyRun { summary, outcomes, manifest })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn summarize(config: &StudyConfig, outcomes: &[ReplicateOutcome]) -> Result<StudySummary> {
    let fits = |m: Model| -> Vec<FitResult> {
        outcomes.iter().flat_map(|o| o.runs()).filter(|r| r.model == m).filter_map(|r| r.fit.clone()).collect()
    };
    let (fs, fj) = (fits(Model::S), fits(Model::J));
    let bias = if fs.len() >= 2 && fj.len() >= 2 { paired_bias_table(&fj, &fs, &config.truth())? } else { Vec::new() };
    let reports = |m: Model| -> Vec<&ScoreReport> {
        outcomes.iter().flat_map(|o| o.runs()).filter(|r| r.model == m).filter_map(|r| r.report.as_ref()).collect()
    };
    let (rs, rj) = (reports(Model::S), reports(Model::J));
    let diffs: Vec<ScoreDiff> = outcomes.iter().filter_map(|o| o.diff()).collect();
    let failures = outcomes
        .iter()
        .flat_map(|o| o.runs().map(|r| (o.data.replicate, r)))
        .filter_map(|(rep, r)| r.error.as_ref().map(|e| format!("replicate {rep} model {}: {e}", r.model.label())))
        .collect();
    Ok(StudySummary {
        replicates: outcomes.len(),
        fitted_s: fs.len(),
        fitted_j: fj.len(),
        converged_s: fs.iter().filter(|f| f.converged).count(),
        converged_j: fj.iter().filter(|f| f.converged).count(),
        bias,
        mean_crps_s: mean(rs.iter().map(|r| r.mean_crps)),
        mean_crps_j: mean(rj.iter().map(|r| r.mean_crps)),
        mean_log_score_s: mean(rs.iter().map(|r| r.mean_log_score)),
        mean_log_score_j: mean(rj.iter().map(|r| r.mean_log_score)),
        mean_coverage_s: mean(rs.iter().map(|r| r.coverage)),
        mean_coverage_j: mean(rj.iter().map(|r| r.coverage)),
        mean_crps_rel_pct: mean(diffs.iter().map(|d| d.crps_rel_pct)),
        mean_log_score_diff: mean(diffs.iter().map(|d| d.log_score_diff)),
        failures,
    })
}

/// Per-replicate directory: the simulated data and both fits.
fn write_replicate(dir: &Path, o: &ReplicateOutcome) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    io::write_clusters(&dir.join("clusters.csv"), &o.data)?;
    io::write_truth_clusters(&dir.join("truth_clusters.csv"), &o.data)?;
    io::write_prediction_truth(&dir.join("prediction.csv"), &o.data.prediction_points, &o.data.truth)?;
    for run in o.runs() {
        if let Some(f) = &run.fit {
            let stem = format!("fit_{}", run.model.label());
            f.save(&dir.join(format!("{stem}.json")), &dir.join(format!("{stem}.latent.bin")))?;
        }
    }
    Ok(())
}

fn csv_writer(dir: &Path, name: &str, outputs: &mut Vec<PathBuf>) -> Result<csv::Writer<std::fs::File>> {
    outputs.push(PathBuf::from(name));
    let path = dir.join(name);
    csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))
}

/// Rows of `scores.csv` for one scored prediction.
pub fn write_scores(
    w: &mut csv::Writer<impl std::io::Write>,
    replicate: usize,
    model: &str,
    points: &[geomask::geo::PlanarPoint],
    moments: &[(f64, f64)],
    report: &ScoreReport,
) -> Result<()> {
    for l in &report.locations {
        let p = points[l.location];
        let (m, sd) = moments[l.location];
        w.write_record([
            replicate.to_string(),
            model.to_string(),
            l.location.to_string(),
            num(p.x),
            num(p.y),
            num(l.truth),
            num(m),
            num(sd),
            num(l.lower),
            num(l.upper),
            num(l.crps),
            num(l.log_score),
        ])?;
    }
    Ok(())
}

pub const SCORES_HEADER: [&str; 12] =
    ["replicate", "model", "location", "x_km", "y_km", "truth", "mean", "sd", "lower", "upper", "crps", "log_score"];

fn pct(x: f64) -> String {
    format!("{:.0}%", 100.0 * x)
}

/// Study-level tables; returns their file names.
pub fn write_study_tables(dir: &Path, config: &StudyConfig, outcomes: &[ReplicateOutcome], summary: &StudySummary) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut outputs = Vec::new();

    let mut w = csv_writer(dir, "scores.csv", &mut outputs)?;
    w.write_record(SCORES_HEADER)?;
    for o in outcomes {
        for run in o.runs() {
            if let Some(r) = &run.report {
                write_scores(&mut w, o.data.replicate, run.model.label(), &o.data.prediction_points, &run.moments, r)?;
            }
        }
    }
    w.flush()?;

    let mut w = csv_writer(dir, "coverage.csv", &mut outputs)?;
    w.write_record(["replicate", "model", "coverage"])?;
    for o in outcomes {
        for run in o.runs() {
            if let Some(r) = &run.report {
                w.write_record([o.data.replicate.to_string(), run.model.label().into(), num(r.coverage)])?;
            }
        }
    }
    w.write_record(["mean".into(), "S".into(), num(summary.mean_coverage_s)])?;
    w.write_record(["mean".into(), "J".into(), num(summary.mean_coverage_j)])?;
    w.flush()?;

    let mut w = csv_writer(dir, "score_diffs.csv", &mut outputs)?;
    w.write_record(["replicate", "crps_j", "crps_s", "crps_rel_pct", "log_score_j", "log_score_s", "log_score_diff"])?;
    for o in outcomes {
        if let (Some(j), Some(s), Some(d)) = (&o.jittered.report, &o.standard.report, o.diff()) {
            w.write_record([
                o.data.replicate.to_string(),
                num(j.mean_crps),
                num(s.mean_crps),
                num(d.crps_rel_pct),
                num(j.mean_log_score),
                num(s.mean_log_score),
                num(d.log_score_diff),
            ])?;
        }
    }
    w.flush()?;

    let mut w = csv_writer(dir, "bias_table.csv", &mut outputs)?;
    w.write_record(["parameter", "bias_j", "bias_s", "ci_length_j", "ci_length_s", "n_j", "n_s", "display"])?;
    for row in &summary.bias {
        let display = if row.parameter == "mu" {
            format!("{:.2} ({:.2})", row.bias_j, row.bias_s)
        } else {
            format!("{} ({})", pct(row.bias_j), pct(row.bias_s))
        };
        w.write_record([
            row.parameter.clone(),
            num(row.bias_j),
            num(row.bias_s),
            num(row.ci_length_j),
            num(row.ci_length_s),
            summary.fitted_j.to_string(),
            summary.fitted_s.to_string(),
            display,
        ])?;
    }
    w.flush()?;

    let mut w = csv_writer(dir, "fits.csv", &mut outputs)?;
    w.write_record(["replicate", "model", "status", "converged", "iterations", "parameter", "estimate", "lower", "upper"])?;
    for o in outcomes {
        for run in o.runs() {
            let rep = o.data.replicate.to_string();
            match &run.fit {
                Some(f) => {
                    for s in &f.summaries {
                        w.write_record([
                            rep.clone(),
                            run.model.label().into(),
                            "ok".into(),
                            f.converged.to_string(),
                            f.iterations.to_string(),
                            s.name.clone(),
                            num(s.estimate),
                            num(s.lower),
                            num(s.upper),
                        ])?;
                    }
                }
                None => {
                    let msg = run.error.clone().unwrap_or_default();
                    w.write_record([
                        rep,
                        run.model.label().into(),
                        format!("failed: {msg}"),
                        "false".into(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                    ])?;
                }
            }
        }
    }
    w.flush()?;

    outputs.push(PathBuf::from("summary.json"));
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(summary)? + "\n")?;
    outputs.push(PathBuf::from("regions.geojson"));
    io::write_regions_geojson(&dir.join("regions.geojson"), &synthetic_regions(config))?;
    Ok(outputs)
}
