use anyhow::{anyhow, Result};
use geomask::field::{simulate_grf, MaternParams};
use geomask::geo::{ClusterRecord, PlanarPoint, RegionSet};
use geomask::jitter::sample_jitter;
use geomask::model::Family;
use geomask::special::logistic;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::StudyConfig;
use crate::seeds::ReplicateSeeds;

/// One simulated cluster with both its true and its published location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCluster {
    pub id: String,
    pub true_location: PlanarPoint,
    pub location: PlanarPoint,
    pub urban: bool,
    pub region: String,
    /// Field value (without the intercept) at the true location.
    pub field: f64,
    pub y: f64,
    pub n: u32,
}

/// One replicate: clusters, the prediction grid and the true surface on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub replicate: usize,
    pub seeds: ReplicateSeeds,
    pub clusters: Vec<SimCluster>,
    pub prediction_points: Vec<PlanarPoint>,
    /// The predictand at each prediction point: prevalence for the binomial
    /// family, the linear predictor for the Gaussian family.
    pub truth: Vec<f64>,
}

impl Dataset {
    /// Records as published: jittered locations.
    pub fn records(&self) -> Vec<ClusterRecord> {
        self.clusters
            .iter()
            .map(|c| ClusterRecord { id: c.id.clone(), location: c.location, urban: c.urban, y: c.y, n: c.n, region: c.region.clone() })
            .collect()
    }
}

/// The square study domain split into `counties × counties` rectangles.
pub fn synthetic_regions(config: &StudyConfig) -> RegionSet {
    let d = config.domain_km;
    RegionSet::grid(0.0, 0.0, d, d, config.counties, config.counties)
}

/// Cell centres of an even `g × g` grid over the domain.
pub fn prediction_grid(config: &StudyConfig) -> Vec<PlanarPoint> {
    let g = config.prediction_grid;
    let step = config.domain_km / g as f64;
    (0..g).flat_map(|row| (0..g).map(move |col| PlanarPoint::new((col as f64 + 0.5) * step, (row as f64 + 0.5) * step))).collect()
}

fn predictand(family: Family, eta: f64) -> f64 {
    match family {
        Family::Binomial => logistic(eta),
        Family::Gaussian => eta,
    }
}

/// Simulate one replicate. True locations are uniform on the domain, the
/// field is an exact Matérn draw at clusters and prediction points jointly,
/// and each cluster is displaced under the configured jitter preset within
/// its county. The displacement scheme has its own seed stream, so the
/// `dhs` and `dhs4x` presets share locations, field and responses.
pub fn simulate_replicate(config: &StudyConfig, regions: &RegionSet, replicate: usize) -> Result<Dataset> {
    let seeds = ReplicateSeeds::new(config.seed, replicate);
    let scheme = config.jitter_scheme()?;
    let d = config.domain_km;

    let mut design = ChaCha8Rng::seed_from_u64(seeds.design);
    let sites: Vec<(PlanarPoint, bool)> = (0..config.n_clusters)
        .map(|_| {
            let p = PlanarPoint::new(design.random_range(0.0..d), design.random_range(0.0..d));
            (p, design.random_bool(config.urban_fraction))
        })
        .collect();

    let points = prediction_grid(config);
    let mut at: Vec<PlanarPoint> = sites.iter().map(|s| s.0).collect();
    at.extend(&points);
    let matern = MaternParams::new(config.sigma2_s, config.range).map_err(|e| anyhow!(e))?;
    let field = simulate_grf(&matern, &at, seeds.field).map_err(|e| anyhow!(e))?;

    let mut response = ChaCha8Rng::seed_from_u64(seeds.response);
    let nugget = Normal::new(0.0, config.sigma2_n.sqrt()).map_err(|e| anyhow!("{e}"))?;
    let clusters = sites
        .iter()
        .enumerate()
        .map(|(i, &(loc, urban))| {
            let region = regions.locate(&loc).ok_or_else(|| anyhow!("cluster {i} lies outside every county"))?;
            let eta = config.mu + field[i];
            let (y, n) = match config.family {
                Family::Binomial => {
                    let b = Binomial::new(config.n_trials as u64, logistic(eta)).map_err(|e| anyhow!("{e}"))?;
                    (b.sample(&mut response) as f64, config.n_trials)
                }
                Family::Gaussian => (eta + nugget.sample(&mut response), 1),
            };
            let seed = ReplicateSeeds::jitter(config.seed, replicate, i);
            let draw = sample_jitter(loc, urban, &scheme, region, seed).map_err(|e| anyhow!(e))?;
            Ok(SimCluster {
                id: format!("c{i:04}"),
                true_location: loc,
                location: draw.jittered,
                urban,
                region: region.id.clone(),
                field: field[i],
                y,
                n,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let truth = field[config.n_clusters..].iter().map(|f| predictand(config.family, config.mu + f)).collect();
    Ok(Dataset { replicate, seeds, clusters, prediction_points: points, truth })
}
