//! File layouts. All coordinates are planar kilometres.
//!
//! | file                 | columns                                                                          |
//! |----------------------|----------------------------------------------------------------------------------|
//! | `clusters.csv`       | `id,x_km,y_km,urban,y,n,region` (jittered locations; readable by `fit`)          |
//! | `truth_clusters.csv` | `id,true_x_km,true_y_km,x_km,y_km,urban,region,field,y,n`                         |
//! | `prediction.csv`     | `location,x_km,y_km,truth`                                                       |
//! | `regions.geojson`    | FeatureCollection, one Polygon per county with a `region` property               |
//! | `predictions.csv`    | `location,x_km,y_km,mean,sd,lower,upper`                                         |
//! | `scores.csv`         | `replicate,model,location,x_km,y_km,truth,mean,sd,lower,upper,crps,log_score`    |
//! | `coverage.csv`       | `replicate,model,coverage` with a final `mean` row per model                     |
//! | `score_diffs.csv`    | `replicate,crps_j,crps_s,crps_rel_pct,log_score_j,log_score_s,log_score_diff`     |
//! | `bias_table.csv`     | `parameter,bias_j,bias_s,ci_length_j,ci_length_s,n_j,n_s,display`                |
//! | `fits.csv`           | `replicate,model,status,converged,iterations,seconds,parameter,estimate,lower,upper` |
//! | quadrature dump      | `cluster,ring,k,x,y,weight,weight_uncorrected`                                   |
//!
//! In `score_diffs.csv` the relative CRPS difference is `100 (J - S) / S` and
//! the log-score difference is `J - S`; negative values favour Model-J.
//! `bias_table.csv` reports absolute bias for `mu` and relative bias otherwise;
//! `display` renders `J (S)` as in the usual study tables.

use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use geomask::geo::{PlanarPoint, RegionSet};
use geomask::model::Prediction;
use geomask::quadrature::IntegrationScheme;
use serde_json::json;

use crate::simulate::Dataset;

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

/// Shortest representation that parses back to the same f64.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn write_clusters(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["id", "x_km", "y_km", "urban", "y", "n", "region"])?;
    for c in &data.clusters {
        let urban = if c.urban { "U" } else { "R" };
        w.write_record([c.id.clone(), num(c.location.x), num(c.location.y), urban.into(), num(c.y), c.n.to_string(), c.region.clone()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_truth_clusters(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["id", "true_x_km", "true_y_km", "x_km", "y_km", "urban", "region", "field", "y", "n"])?;
    for c in &data.clusters {
        let urban = if c.urban { "U" } else { "R" };
        w.write_record([
            c.id.clone(),
            num(c.true_location.x),
            num(c.true_location.y),
            num(c.location.x),
            num(c.location.y),
            urban.into(),
            c.region.clone(),
            num(c.field),
            num(c.y),
            c.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_prediction_truth(path: &Path, points: &[PlanarPoint], truth: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["location", "x_km", "y_km", "truth"])?;
    for (i, (p, t)) in points.iter().zip(truth).enumerate() {
        w.write_record([i.to_string(), num(p.x), num(p.y), num(*t)])?;
    }
    w.flush()?;
    Ok(())
}

/// Points and, when present, the `truth` column of a prediction-location file.
pub fn read_points(path: &Path) -> Result<(Vec<PlanarPoint>, Option<Vec<f64>>)> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (cx, cy) =
        (col("x_km").ok_or_else(|| anyhow!("missing column `x_km`"))?, col("y_km").ok_or_else(|| anyhow!("missing column `y_km`"))?);
    let ct = col("truth");
    let mut points = Vec::new();
    let mut truth = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let get = |c: usize| -> Result<f64> {
            rec.get(c).unwrap_or("").parse::<f64>().map_err(|_| anyhow!("{} row {}: unparsable number", path.display(), i + 1))
        };
        points.push(PlanarPoint::new(get(cx)?, get(cy)?));
        if let Some(c) = ct {
            truth.push(get(c)?);
        }
    }
    Ok((points, ct.map(|_| truth)))
}

pub fn write_regions_geojson(path: &Path, regions: &RegionSet) -> Result<()> {
    let features: Vec<_> = regions
        .iter()
        .flat_map(|r| {
            r.polygons.iter().map(move |poly| {
                let ring = |pts: &[PlanarPoint]| {
                    let mut c: Vec<[f64; 2]> = pts.iter().map(|p| [p.x, p.y]).collect();
                    if let Some(first) = c.first().copied() {
                        c.push(first);
                    }
                    c
                };
                let mut rings = vec![ring(&poly.exterior)];
                rings.extend(poly.holes.iter().map(|h| ring(h)));
                json!({
                    "type": "Feature",
                    "properties": { "region": r.id },
                    "geometry": { "type": "Polygon", "coordinates": rings }
                })
            })
        })
        .collect();
    let doc = json!({ "type": "FeatureCollection", "features": features });
    std::fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}

pub fn write_predictions(path: &Path, pred: &Prediction) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["location", "x_km", "y_km", "mean", "sd", "lower", "upper"])?;
    for (i, p) in pred.points.iter().enumerate() {
        w.write_record([
            i.to_string(),
            num(p.x),
            num(p.y),
            num(pred.mean(i)),
            num(pred.sd(i)),
            num(pred.quantile(i, 0.025)),
            num(pred.quantile(i, 0.975)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_quad_dump(out: impl Write, schemes: &[IntegrationScheme], ids: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cluster", "ring", "k", "x", "y", "weight", "weight_uncorrected"])?;
    for s in schemes {
        for (((ring, k), p), (wt, wu)) in s.labels().into_iter().zip(&s.points).zip(s.weights.iter().zip(&s.uncorrected_weights)) {
            w.write_record([ids[s.cluster].clone(), ring.to_string(), k.to_string(), num(p.x), num(p.y), num(*wt), num(*wu)])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use geomask::geo::{ingest_clusters, CoordMode};

    use crate::config::StudyConfig;
    use crate::simulate::{simulate_replicate, synthetic_regions};

    #[test]
    fn simulated_files_ingest_cleanly() {
        let c = StudyConfig { n_clusters: 30, prediction_grid: 3, ..StudyConfig::default() };
        let regions = synthetic_regions(&c);
        let data = simulate_replicate(&c, &regions, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (cp, rp, pp) = (dir.path().join("c.csv"), dir.path().join("r.geojson"), dir.path().join("p.csv"));
        write_clusters(&cp, &data).unwrap();
        write_regions_geojson(&rp, &regions).unwrap();
        write_prediction_truth(&pp, &data.prediction_points, &data.truth).unwrap();

        let ing = ingest_clusters(std::fs::File::open(&cp).unwrap(), std::fs::File::open(&rp).unwrap(), CoordMode::Km).unwrap();
        assert!(ing.dropped.is_empty());
        assert_eq!(ing.clusters, data.records());
        assert_eq!(ing.regions.len(), 16);
        let (pts, truth) = read_points(&pp).unwrap();
        assert_eq!(pts, data.prediction_points);
        assert_eq!(truth.unwrap(), data.truth);
    }
}
