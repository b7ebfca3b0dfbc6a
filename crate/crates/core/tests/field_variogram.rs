use geomask::field::{matern_cov, simulate_grf, BasisField, MaternParams};
use geomask::geo::PlanarPoint;

/// Empirical semivariogram of exact GRF draws on a regular transect grid
/// against `σ² - C(d)`.
#[test]
fn simulated_field_follows_the_matern_variogram() {
    let p = MaternParams::new(1.5, 60.0).unwrap();
    let pts: Vec<PlanarPoint> = (0..20).flat_map(|i| (0..20).map(move |j| PlanarPoint::new(10.0 * i as f64, 10.0 * j as f64))).collect();
    let lags = [10.0, 20.0, 40.0, 80.0];
    let mut sums = [0.0; 4];
    let mut counts = [0usize; 4];
    for seed in 0..40 {
        let z = simulate_grf(&p, &pts, seed).unwrap();
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                let d = pts[i].distance(&pts[j]);
                if let Some(k) = lags.iter().position(|l| (d - l).abs() < 1e-9) {
                    sums[k] += 0.5 * (z[i] - z[j]).powi(2);
                    counts[k] += 1;
                }
            }
        }
    }
    for (k, lag) in lags.iter().enumerate() {
        let empirical = sums[k] / counts[k] as f64;
        let theory = p.sigma2 - matern_cov(*lag, &p);
        assert!((empirical - theory).abs() < 0.1 * theory, "lag {lag}: {empirical} vs {theory}");
    }
}

/// The knot weights carry the Matérn covariance, so the field reproduces it
/// exactly at knots and interpolates it in between.
#[test]
fn basis_field_variance_at_knots_and_between() {
    let field = BasisField::new(PlanarPoint::new(0.0, 0.0), PlanarPoint::new(100.0, 100.0), 6, 6).unwrap();
    let p = MaternParams::new(2.0, 50.0).unwrap();
    let cov = field.weight_cov(&p);
    let var_at = |pt: PlanarPoint| {
        let row = field.eval_basis(&pt).unwrap();
        let mut v = 0.0;
        for (i, a) in row.iter() {
            for (j, b) in row.iter() {
                v += a * b * cov[(i, j)];
            }
        }
        v
    };
    assert!((var_at(field.knot(14)) - 2.0).abs() < 1e-6);
    // at a cell centre the four corner weights are each 1/4
    let mid = var_at(PlanarPoint::new(30.0, 30.0));
    let corners = [field.knot(7), field.knot(8), field.knot(13), field.knot(14)];
    let oracle: f64 = corners.iter().flat_map(|a| corners.iter().map(move |b| matern_cov(a.distance(b), &p) / 16.0)).sum();
    assert!((mid - oracle).abs() < 1e-6, "{mid} vs {oracle}");
    assert!(mid < 2.0);
}
