use std::f64::consts::{PI, TAU};

use geomask::field::{BasisField, MaternParams};
use geomask::geo::{AdminRegion, HalfPlane, PlanarPoint, Plane, Region};
use geomask::jitter::{sample_jitter_with, JitterScheme};
use geomask::model::{cluster_mixture_loglik, obs_loglik, Family, HyperParams};
use geomask::quadrature::{build_rings, build_scheme, IntegrationScheme, RingSpec};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn golden_table_urban_and_rural() {
    let dhs = JitterScheme::dhs();
    let urban = build_scheme(0, PlanarPoint::ORIGIN, true, &Plane, &dhs).unwrap();
    let expected_urban = [0.0, 0.28, 0.76, 1.25, 1.74];
    assert_eq!(urban.len(), 61);
    for (ring, r) in urban.rings.iter().zip(expected_urban) {
        assert!((ring.com_radius - r).abs() <= 0.005, "ring {}: {} vs {r}", ring.index, ring.com_radius);
    }
    assert!(urban.weights.iter().all(|w| (w - 0.0164).abs() <= 2e-4));

    let rural = build_scheme(0, PlanarPoint::ORIGIN, false, &Plane, &dhs).unwrap();
    let expected_rural = [0.0, 0.69, 1.91, 3.13, 4.35, 5.46, 6.45, 7.45, 8.44, 9.43];
    assert_eq!(rural.len(), 136);
    for (ring, r) in rural.rings.iter().zip(expected_rural) {
        assert!((ring.com_radius - r).abs() <= 0.005, "ring {}: {} vs {r}", ring.index, ring.com_radius);
    }
    for (i, w) in rural.weights.iter().enumerate() {
        let target = if i < 61 { 0.0163 } else { 0.0001 };
        assert!((w - target).abs() <= 2e-4, "point {i}: {w}");
    }
    // inner band carries 0.99 + 0.01/2 of the mass
    let inner: f64 = rural.weights[..61].iter().sum();
    assert!((inner - 0.995).abs() < 1e-12);
}

/// Centre of mass along the bisector of an annular sector under a `1/r`
/// density, by composite Simpson in both coordinates.
fn numeric_com(r_lo: f64, r_hi: f64, width: f64) -> f64 {
    let n = 400;
    let simpson = |f: &dyn Fn(f64) -> f64, a: f64, b: f64| {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    // density 1/r times area element r dr da: uniform in (r, a)
    let num = simpson(&|r| simpson(&|a| r * f64::cos(a), -0.5 * width, 0.5 * width), r_lo, r_hi);
    let den = (r_hi - r_lo) * width;
    num / den
}

#[test]
fn ring_radii_are_sector_centres_of_mass() {
    for urban in [true, false] {
        for ring in build_rings(urban, &JitterScheme::dhs4x()).iter().filter(|r| r.index > 1) {
            let com = numeric_com(ring.r_lo, ring.r_hi, ring.sector_width());
            assert!((com - ring.com_radius).abs() < 1e-10, "ring {}: {com} vs {}", ring.index, ring.com_radius);
        }
    }
}

/// Expectation of `f(center + offset)` under the displacement law on the
/// plane, by fine radial Simpson and periodic angular trapezoid rules.
fn exact_expectation(f: &dyn Fn(PlanarPoint) -> f64, urban: bool, jitter: &JitterScheme) -> f64 {
    let (nr, na) = (2000, 720);
    jitter
        .branches(urban)
        .iter()
        .map(|&(p, d)| {
            let h = d / nr as f64;
            let ring_mean =
                |r: f64| (0..na).map(|k| f(PlanarPoint::ORIGIN.offset_polar(r, TAU * k as f64 / na as f64))).sum::<f64>() / na as f64;
            let mut s = ring_mean(0.0) + ring_mean(d);
            for i in 1..nr {
                s += ring_mean(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            p * s * h / 3.0 / d
        })
        .sum()
}

#[test]
fn quadrature_integrates_smooth_bumps() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for jitter in [JitterScheme::dhs(), JitterScheme::dhs4x()] {
        for urban in [true, false] {
            let scheme = build_scheme(0, PlanarPoint::ORIGIN, urban, &Plane, &jitter).unwrap();
            let reach = jitter.max_radius(urban);
            let spacing = scheme.rings.iter().map(|r| r.r_hi - r.r_lo).fold(0.0, f64::max);
            for _ in 0..5 {
                let c = PlanarPoint::new(rng.random_range(-0.5..0.5) * reach, rng.random_range(-0.5..0.5) * reach);
                let width = spacing * rng.random_range(1.0..3.0);
                let bump = |p: PlanarPoint| (-0.5 * (p.distance(&c) / width).powi(2)).exp();
                let quad: f64 = scheme.points.iter().zip(&scheme.weights).map(|(p, w)| w * bump(*p)).sum();
                let exact = exact_expectation(&bump, urban, &jitter);
                assert!((quad - exact).abs() < 0.01 * exact, "urban={urban}: {quad} vs {exact}");
            }
        }
    }
}

#[test]
fn rotation_keeps_weights() {
    let region = AdminRegion::rect("a", 0.0, 0.0, 50.0, 30.0).unwrap();
    let pivot = PlanarPoint::new(25.0, 15.0);
    let jitter = JitterScheme::dhs4x();
    for (loc, urban) in [(PlanarPoint::new(25.0, 15.0), true), (PlanarPoint::new(4.0, 6.0), false), (PlanarPoint::new(45.0, 27.0), true)] {
        let base = build_scheme(0, loc, urban, &region, &jitter).unwrap();
        for angle in [0.3, PI / 2.0, 2.0] {
            let rotated = build_scheme(0, loc.rotate_about(&pivot, angle), urban, &region.rotate_about(&pivot, angle), &jitter).unwrap();
            let sorted = |s: &IntegrationScheme| {
                let mut w = s.weights.clone();
                w.sort_by(f64::total_cmp);
                w
            };
            if region.boundary_distance(&loc) > jitter.max_radius(urban) {
                assert_eq!(base.weights, rotated.weights);
            } else {
                // boundary clusters: the secondary grid turns with the sectors,
                // so only the total mass per ring is compared
                let mass = |s: &IntegrationScheme, ring: &RingSpec| -> f64 {
                    let start: usize = s.rings.iter().take_while(|r| r.index < ring.index).map(|r| r.m).sum();
                    s.weights[start..start + ring.m].iter().sum()
                };
                for ring in &base.rings {
                    assert!((mass(&base, ring) - mass(&rotated, ring)).abs() < 0.15 * mass(&base, ring).max(1e-3));
                }
                assert_eq!(sorted(&base).len(), sorted(&rotated).len());
            }
            for q in &rotated.points {
                let back = q.rotate_about(&pivot, -angle);
                assert!(back.distance(&loc) <= jitter.max_radius(urban) + 1e-9);
            }
        }
    }
}

/// Sector index of an offset within a scheme's layout.
fn sector_of(rings: &[RingSpec], r: f64, angle: f64) -> Option<usize> {
    let mut start = 0;
    for ring in rings {
        if r >= ring.r_lo && (r < ring.r_hi || (r == ring.r_hi && ring.index == rings.len())) {
            if ring.m == 1 {
                return Some(start);
            }
            let rel = (angle - ring.angular_offset).rem_euclid(TAU);
            let k = ((rel / ring.sector_width()).floor() as usize).min(ring.m - 1);
            return Some(start + k);
        }
        start += ring.m;
    }
    None
}

/// Sector frequencies of displacements that land inside `region`, for a
/// cluster at the origin.
fn monte_carlo_sectors(region: &dyn Region, urban: bool, jitter: &JitterScheme, rings: &[RingSpec], draws: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = rings.iter().map(|r| r.m).sum();
    let mut counts = vec![0usize; n];
    let mut kept = 0usize;
    for _ in 0..draws {
        let draw = sample_jitter_with(PlanarPoint::ORIGIN, urban, jitter, &Plane, &mut rng).unwrap();
        if region.contains(&draw.jittered) {
            kept += 1;
            if let Some(i) = sector_of(rings, draw.distance, draw.angle) {
                counts[i] += 1;
            }
        }
    }
    counts.iter().map(|&c| c as f64 / kept as f64).collect()
}

/// Half-planes through and beside the cluster, horizontal and at random
/// angles: MC sector frequencies of in-region displacements against the
/// corrected weights.
#[test]
fn half_plane_weights_match_monte_carlo() {
    let jitter = JitterScheme::dhs();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cases = vec![(true, (0.0, 1.0), 0.0), (false, (0.0, -1.0), 0.0)];
    for trial in 0..6 {
        let angle: f64 = rng.random_range(0.0..TAU);
        let urban = trial % 2 == 1;
        cases.push((urban, (angle.cos(), angle.sin()), rng.random_range(-0.6..0.6) * jitter.max_radius(urban)));
    }
    for (case, (urban, normal, offset)) in cases.into_iter().enumerate() {
        let region = HalfPlane::new(PlanarPoint::new(-offset * normal.0, -offset * normal.1), normal);
        let scheme = build_scheme(0, PlanarPoint::ORIGIN, urban, &region, &jitter).unwrap();
        let mc = monte_carlo_sectors(&region, urban, &jitter, &scheme.rings, 2_000_000, case as u64);
        assert!((scheme.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (i, (&w, &m)) in scheme.weights.iter().zip(&mc).enumerate() {
            if w > 1e-3 {
                assert!((w - m).abs() <= 0.1 * m, "case {case} urban={urban} normal={normal:?} point {i}: {w} vs {m}");
            }
        }
    }
}

fn smooth_field(rng: &mut ChaCha8Rng) -> (BasisField, Vec<f64>) {
    let field = BasisField::new(PlanarPoint::new(-200.0, -200.0), PlanarPoint::new(200.0, 200.0), 9, 9).unwrap();
    let cov = field.weight_cov(&MaternParams::new(0.8, 250.0).unwrap());
    let l = cov.cholesky().unwrap().unpack();
    let z = DVector::from_iterator(81, (0..81).map(|_| StandardNormal.sample(rng)));
    (field, (l * z).as_slice().to_vec())
}

#[test]
fn mixture_likelihood_matches_monte_carlo() {
    let jitter = JitterScheme::dhs4x();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let theta = HyperParams { mu: -0.3, log_rho: 0.0, log_sigma_s: 0.0, log_sigma_n: None };
    for trial in 0..20 {
        let (field, w) = smooth_field(&mut rng);
        let urban = trial % 2 == 0;
        let center = PlanarPoint::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        let n = 30;
        let eta0 = theta.mu + field.eval(&center, &w).unwrap();
        let y = (n as f64 * geomask::special::logistic(eta0)).round();
        let scheme = build_scheme(0, center, urban, &Plane, &jitter).unwrap();
        let quad = cluster_mixture_loglik(&scheme, y, n, &w, &theta, &field, Family::Binomial).unwrap().exp();
        let draws = 100_000;
        let mc = (0..draws)
            .map(|_| {
                let d = sample_jitter_with(center, urban, &jitter, &Plane, &mut rng).unwrap();
                obs_loglik(y, n, theta.mu + field.eval(&d.jittered, &w).unwrap(), Family::Binomial, None).exp()
            })
            .sum::<f64>()
            / draws as f64;
        assert!((quad - mc).abs() < 0.02 * mc, "trial {trial}: {quad} vs {mc}");
    }
}
