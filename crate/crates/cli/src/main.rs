use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use geomask::geo::CoordMode;
use geomask::jitter::JitterScheme;
use geomask::model::{Family, PriorSpec};
use geomask_cli::commands::{self, FitOptions};
use geomask_cli::study::{run_study, workers_from_env, WORKERS_ENV};
use geomask_cli::StudyConfig;

#[derive(Parser)]
#[command(name = "geomask", version, about = "Geostatistical models for jittered survey clusters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Coords {
    /// `lon,lat` columns and a lon/lat boundary file
    Lonlat,
    /// `x_km,y_km` columns and a boundary file in km
    Km,
}

impl From<Coords> for CoordMode {
    fn from(c: Coords) -> Self {
        match c {
            Coords::Lonlat => CoordMode::LonLat,
            Coords::Km => CoordMode::Km,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    /// Observed locations treated as exact
    S,
    /// Integrates over the displacement
    J,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Study configuration (JSON); defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set field.grid=12`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<StudyConfig> {
        StudyConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate datasets for every replicate of a scenario
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit Model-S or Model-J to a cluster file
    Fit {
        #[arg(long)]
        clusters: PathBuf,
        #[arg(long)]
        regions: PathBuf,
        #[arg(long, value_enum, default_value = "lonlat")]
        coords: Coords,
        #[arg(long, value_enum)]
        model: ModelArg,
        /// Displacement preset for Model-J: dhs or dhs4x
        #[arg(long, default_value = "dhs")]
        jitter: String,
        #[arg(long, default_value = "binomial")]
        family: String,
        /// Prior median of the range, km
        #[arg(long)]
        rho0: f64,
        /// Knots per axis of the basis grid
        #[arg(long, default_value_t = 15)]
        grid: usize,
        #[arg(long)]
        buffer_km: Option<f64>,
        /// FitResult JSON; the latent dump goes beside it as `.latent.bin`
        #[arg(long)]
        out: PathBuf,
    },
    /// Posterior summaries at prediction points (`x_km,y_km` CSV)
    Predict {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        points: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score fits against a true surface (`x_km,y_km,truth` CSV)
    Score {
        #[arg(long)]
        standard: Option<PathBuf>,
        #[arg(long)]
        jittered: Option<PathBuf>,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the simulation study; the worker count comes from GEOMASK_WORKERS
    Study {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the integration points and weights of every cluster
    QuadDump {
        #[arg(long)]
        clusters: PathBuf,
        #[arg(long)]
        regions: PathBuf,
        #[arg(long, value_enum, default_value = "lonlat")]
        coords: Coords,
        #[arg(long, default_value = "dhs")]
        jitter: String,
        /// Output CSV; standard output when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate { config, out } => {
            let m = commands::cmd_simulate(&config.load()?, &out)?;
            eprintln!("wrote {} files under {} (config {})", m.outputs.len(), out.display(), &m.config_hash[..12]);
        }
        Command::Fit { clusters, regions, coords, model, jitter, family, rho0, grid, buffer_km, out } => {
            let data = commands::read_dataset(&clusters, &regions, coords.into())?;
            if !data.dropped.is_empty() {
                eprintln!("dropped {} clusters outside their region: {}", data.dropped.len(), data.dropped.join(", "));
            }
            let options = FitOptions {
                family: family.parse::<Family>()?,
                jitter: match model {
                    ModelArg::S => None,
                    ModelArg::J => Some(JitterScheme::preset(&jitter)?),
                },
                prior: PriorSpec::with_rho0(rho0),
                grid,
                buffer_km,
            };
            let f = commands::cmd_fit(&data, &options, &out)?;
            for s in &f.summaries {
                eprintln!("{:>9} {:>10.4} [{:.4}, {:.4}]", s.name, s.estimate, s.lower, s.upper);
            }
            eprintln!("converged: {} after {} iterations", f.converged, f.iterations);
        }
        Command::Predict { fit, points, samples, seed, out } => {
            commands::cmd_predict(&fit, &points, &commands::predict_config(samples, seed), &out)?;
        }
        Command::Score { standard, jittered, truth, samples, seed, out } => {
            let cfg = commands::predict_config(samples, seed);
            let reports = commands::cmd_score(standard.as_deref(), jittered.as_deref(), &truth, &cfg, &out)?;
            for r in reports {
                eprintln!("CRPS {:.5}  log score {:.4}  coverage {:.3}", r.mean_crps, r.mean_log_score, r.coverage);
            }
        }
        Command::Study { config, out } => {
            let config = config.load()?;
            let workers = workers_from_env();
            eprintln!("{} replicates on {workers} workers (set {WORKERS_ENV} to change)", config.replicates);
            let run = run_study(&config, Some(&out), workers)?;
            let s = &run.summary;
            for row in &s.bias {
                eprintln!(
                    "{:>9} bias J {:+.3} S {:+.3}  CI J {:.3} S {:.3}",
                    row.parameter, row.bias_j, row.bias_s, row.ci_length_j, row.ci_length_s
                );
            }
            eprintln!("CRPS J {:.5} S {:.5}  coverage J {:.3} S {:.3}", s.mean_crps_j, s.mean_crps_s, s.mean_coverage_j, s.mean_coverage_s);
            if let Some(t) = &run.manifest.timings {
                eprintln!(
                    "mean fit time J {:.2}s S {:.2}s (ratio {:.2}), total {:.1}s",
                    t.mean_fit_seconds_j, t.mean_fit_seconds_s, t.runtime_ratio_j_over_s, t.total_seconds
                );
            }
            for f in &s.failures {
                eprintln!("failed: {f}");
            }
        }
        Command::QuadDump { clusters, regions, coords, jitter, out } => {
            let data = commands::read_dataset(&clusters, &regions, coords.into())?;
            let scheme = JitterScheme::preset(&jitter)?;
            match out {
                Some(p) => {
                    let f = std::fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
                    commands::cmd_quad_dump(&data, &scheme, std::io::BufWriter::new(f))?
                }
                None => commands::cmd_quad_dump(&data, &scheme, std::io::stdout().lock())?,
            }
        }
    }
    Ok(())
}
