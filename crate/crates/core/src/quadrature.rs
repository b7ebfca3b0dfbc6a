//! Polar quadrature over the unknown true location of a jittered cluster.
//!
//! Integration areas are annular sectors around the observed location. Ring 1
//! is the central disc carrying a single point at the observed location; the
//! remaining rings carry 15 angularly equispaced points each. Ring radii are
//! chosen so that points within a constant-density band of the displacement
//! law share one weight:
//!
//! * urban: 5 rings on `[0, D]`, 61 points, all weights `1/61`;
//! * rural: 5 inner rings on `[0, L']` and 5 outer rings on `[L', L]`,
//!   136 points, inner and outer points weighted by the mass of their band.
//!
//! Each point sits at the centre of mass of its sector under the `1/r`
//! density, which shrinks the mid-radius by the chord factor
//! `sqrt(2(1 - cos Δa)) / Δa`.
//!
//! When the displacement disc crosses the cluster's administrative boundary,
//! every sector is split into a 10 × 10 polar grid of secondary sectors and
//! its weight is scaled by the share of secondary mass inside the region.
//! Secondary sectors lying wholly on one side of the boundary count by their
//! centre of mass; those the boundary passes through are split 2 × 2, up to
//! [`MAX_REFINE`] times, so the share resolves the boundary to 1/16 of a
//! secondary sector.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{PlanarPoint, Region};
use crate::jitter::JitterScheme;

/// Rings per constant-density band.
pub const RINGS_PER_BAND: usize = 5;
/// Points on every ring but the first.
pub const POINTS_PER_RING: usize = 15;
/// Radial and angular subdivisions of the secondary grid.
pub const SECONDARY_GRID: usize = 10;
/// Halvings of a boundary-straddling secondary sector.
pub const MAX_REFINE: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingSpec {
    /// 1-based ring index.
    pub index: usize,
    /// Points in this ring.
    pub m: usize,
    pub r_lo: f64,
    pub r_hi: f64,
    /// Angular position of the first sector boundary, radians.
    pub angular_offset: f64,
    /// Distance of the ring's points from the centre, km.
    pub com_radius: f64,
}

impl RingSpec {
    pub fn sector_width(&self) -> f64 {
        TAU / self.m as f64
    }

    /// Angle of the k-th point (0-based): the middle of its sector.
    pub fn point_angle(&self, k: usize) -> f64 {
        self.angular_offset + (k as f64 + 0.5) * self.sector_width()
    }
}

/// `sqrt(2 (1 - cos Δa)) / Δa`, the ratio of centre-of-mass radius to
/// mid-radius for a sector of angular width `Δa` under the `1/r` density.
pub fn chord_factor(width: f64) -> f64 {
    // 2 sin(Δa/2) is the same quantity without cancellation for small Δa
    2.0 * (0.5 * width).sin() / width
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationScheme {
    /// Position of the cluster in the dataset.
    pub cluster: usize,
    pub center: PlanarPoint,
    pub rings: Vec<RingSpec>,
    /// Ring by ring, in angular order within each ring.
    pub points: Vec<PlanarPoint>,
    /// Normalized, boundary-corrected weights.
    pub weights: Vec<f64>,
    /// Normalized weights before boundary correction.
    pub uncorrected_weights: Vec<f64>,
}

impl IntegrationScheme {
    /// One point at `location` with weight 1; the quadrature that treats the
    /// observed location as exact.
    pub fn single_point(cluster: usize, location: PlanarPoint) -> Self {
        Self {
            cluster,
            center: location,
            rings: vec![RingSpec { index: 1, m: 1, r_lo: 0.0, r_hi: 0.0, angular_offset: 0.0, com_radius: 0.0 }],
            points: vec![location],
            weights: vec![1.0],
            uncorrected_weights: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `(ring index, point index within ring)` for every point.
    pub fn labels(&self) -> Vec<(usize, usize)> {
        self.rings.iter().flat_map(|ring| (0..ring.m).map(move |k| (ring.index, k + 1))).collect()
    }
}

/// Ring layout for one cluster class.
pub fn build_rings(urban: bool, scheme: &JitterScheme) -> Vec<RingSpec> {
    // band edges: distinct positive maximum radii of the mixture branches
    let mut edges: Vec<f64> = scheme.branches(urban).iter().map(|b| b.1).filter(|&r| r > 0.0).collect();
    edges.sort_by(f64::total_cmp);
    edges.dedup();

    if edges.is_empty() {
        return vec![RingSpec { index: 1, m: 1, r_lo: 0.0, r_hi: 0.0, angular_offset: 0.0, com_radius: 0.0 }];
    }

    let mut rings = Vec::with_capacity(RINGS_PER_BAND * edges.len());
    let mut band_lo = 0.0;
    for (band, &band_hi) in edges.iter().enumerate() {
        let counts: Vec<usize> = (0..RINGS_PER_BAND).map(|j| if band == 0 && j == 0 { 1 } else { POINTS_PER_RING }).collect();
        let total: usize = counts.iter().sum();
        let mut cum = 0;
        let mut r_prev = band_lo;
        for &m in &counts {
            cum += m;
            let index = rings.len() + 1;
            let r_hi = if cum == total { band_hi } else { band_lo + (band_hi - band_lo) * cum as f64 / total as f64 };
            let angular_offset = if index % 2 == 1 && index >= 5 { PI / m as f64 } else { 0.0 };
            let com_radius = if index == 1 { 0.0 } else { 0.5 * (r_prev + r_hi) * chord_factor(TAU / m as f64) };
            rings.push(RingSpec { index, m, r_lo: r_prev, r_hi, angular_offset, com_radius });
            r_prev = r_hi;
        }
        band_lo = band_hi;
    }
    rings
}

/// Normalized weights, one per point in ring order: each sector gets the
/// displacement-law mass of its annulus divided by the ring's point count.
pub fn base_weights(rings: &[RingSpec], urban: bool, scheme: &JitterScheme) -> Vec<f64> {
    let mut weights = Vec::with_capacity(rings.iter().map(|r| r.m).sum());
    for ring in rings {
        let per_point = scheme.radial_mass(urban, ring.r_lo, ring.r_hi) / ring.m as f64;
        weights.extend(std::iter::repeat_n(per_point, ring.m));
    }
    normalize(&mut weights);
    weights
}

fn normalize(weights: &mut [f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        weights.iter_mut().for_each(|w| *w /= total);
    }
    total
}

fn ring_points(center: &PlanarPoint, rings: &[RingSpec]) -> Vec<PlanarPoint> {
    rings.iter().flat_map(|ring| (0..ring.m).map(move |k| center.offset_polar(ring.com_radius, ring.point_angle(k)))).collect()
}

/// Centres of mass of the secondary sectors of sector `k` in `ring`.
pub fn secondary_points(center: &PlanarPoint, ring: &RingSpec, k: usize) -> Vec<PlanarPoint> {
    let width = ring.sector_width() / SECONDARY_GRID as f64;
    let start = ring.angular_offset + k as f64 * ring.sector_width();
    let dr = (ring.r_hi - ring.r_lo) / SECONDARY_GRID as f64;
    let shrink = chord_factor(width);
    let mut pts = Vec::with_capacity(SECONDARY_GRID * SECONDARY_GRID);
    for a in 0..SECONDARY_GRID {
        let angle = start + (a as f64 + 0.5) * width;
        for r in 0..SECONDARY_GRID {
            let radius = (ring.r_lo + (r as f64 + 0.5) * dr) * shrink;
            pts.push(center.offset_polar(radius, angle));
        }
    }
    pts
}

/// Share of the polar cell `[r0, r1] × [a0, a1]` (mass uniform in radius and
/// angle) inside `region`.
fn cell_share(center: &PlanarPoint, r0: f64, r1: f64, a0: f64, a1: f64, region: &dyn Region, depth: u32) -> f64 {
    let width = a1 - a0;
    let com = center.offset_polar(0.5 * (r0 + r1) * chord_factor(width), 0.5 * (a0 + a1));
    let inside = if region.contains(&com) { 1.0 } else { 0.0 };
    // every point of the cell is within this distance of its centre of mass
    let extent = 1.5 * ((r1 - r0) + r1 * width);
    if depth == 0 || region.boundary_distance(&com) > extent {
        return inside;
    }
    let (rm, am) = (0.5 * (r0 + r1), 0.5 * (a0 + a1));
    0.25 * (cell_share(center, r0, rm, a0, am, region, depth - 1)
        + cell_share(center, rm, r1, a0, am, region, depth - 1)
        + cell_share(center, r0, rm, am, a1, region, depth - 1)
        + cell_share(center, rm, r1, am, a1, region, depth - 1))
}

/// Share of sector `k` of `ring` inside `region`, on the secondary grid.
pub fn sector_share(center: &PlanarPoint, ring: &RingSpec, k: usize, region: &dyn Region) -> f64 {
    if ring.r_hi == 0.0 {
        return if region.contains(center) { 1.0 } else { 0.0 };
    }
    let width = ring.sector_width() / SECONDARY_GRID as f64;
    let start = ring.angular_offset + k as f64 * ring.sector_width();
    let dr = (ring.r_hi - ring.r_lo) / SECONDARY_GRID as f64;
    let mut total = 0.0;
    for a in 0..SECONDARY_GRID {
        let a0 = start + a as f64 * width;
        for r in 0..SECONDARY_GRID {
            let r0 = ring.r_lo + r as f64 * dr;
            total += cell_share(center, r0, r0 + dr, a0, a0 + width, region, MAX_REFINE);
        }
    }
    total / (SECONDARY_GRID * SECONDARY_GRID) as f64
}

/// Scale each weight by the share of its sector inside `region` and
/// renormalize. Clusters farther than the maximum displacement from the
/// boundary are returned unchanged.
pub fn boundary_correct(
    mut scheme: IntegrationScheme,
    urban: bool,
    region: &dyn Region,
    jitter: &JitterScheme,
) -> Result<IntegrationScheme> {
    let reach = jitter.max_radius(urban);
    if region.boundary_distance(&scheme.center) > reach {
        return Ok(scheme);
    }
    let mut corrected = Vec::with_capacity(scheme.weights.len());
    let mut idx = 0;
    for ring in &scheme.rings {
        for k in 0..ring.m {
            corrected.push(scheme.uncorrected_weights[idx] * sector_share(&scheme.center, ring, k, region));
            idx += 1;
        }
    }
    if normalize(&mut corrected) <= 0.0 {
        return Err(Error::EmptyScheme(scheme.cluster));
    }
    scheme.weights = corrected;
    Ok(scheme)
}

/// Rings, points, base weights and boundary correction for one cluster.
pub fn build_scheme(
    cluster: usize,
    location: PlanarPoint,
    urban: bool,
    region: &dyn Region,
    jitter: &JitterScheme,
) -> Result<IntegrationScheme> {
    let rings = build_rings(urban, jitter);
    let weights = base_weights(&rings, urban, jitter);
    let scheme = IntegrationScheme {
        cluster,
        center: location,
        points: ring_points(&location, &rings),
        uncorrected_weights: weights.clone(),
        weights,
        rings,
    };
    boundary_correct(scheme, urban, region, jitter)
}
