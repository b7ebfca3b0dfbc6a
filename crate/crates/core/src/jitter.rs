//! DHS displacement model: radial distances uniform on `(0, D)` with a
//! uniform angle, redrawn until the displaced point stays inside the
//! cluster's own administrative area.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{PlanarPoint, Region};

pub const MAX_REJECTIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterScheme {
    /// Maximum urban displacement, km.
    pub urban_max: f64,
    /// Radius used by most rural clusters, km.
    pub rural_inner: f64,
    /// Radius used by the remaining rural clusters, km.
    pub rural_outer: f64,
    /// Probability a rural cluster uses `rural_outer`.
    pub rural_outer_prob: f64,
    /// Multiplier applied to every radius.
    pub scale: f64,
}

impl JitterScheme {
    pub fn new(urban_max: f64, rural_inner: f64, rural_outer: f64, rural_outer_prob: f64, scale: f64) -> Result<Self> {
        let s = Self { urban_max, rural_inner, rural_outer, rural_outer_prob, scale };
        s.validate()?;
        Ok(s)
    }

    pub fn dhs() -> Self {
        Self { urban_max: 2.0, rural_inner: 5.0, rural_outer: 10.0, rural_outer_prob: 0.01, scale: 1.0 }
    }

    pub fn dhs4x() -> Self {
        Self { scale: 4.0, ..Self::dhs() }
    }

    /// No displacement at all: every quadrature collapses to the observed point.
    pub fn none() -> Self {
        Self { urban_max: 0.0, rural_inner: 0.0, rural_outer: 0.0, rural_outer_prob: 0.0, scale: 1.0 }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "dhs" => Ok(Self::dhs()),
            "dhs4x" => Ok(Self::dhs4x()),
            "none" => Ok(Self::none()),
            other => Err(Error::InvalidScheme(format!("unknown preset `{other}` (expected dhs, dhs4x or none)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let radii = [self.urban_max, self.rural_inner, self.rural_outer];
        if radii.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::InvalidScheme("radii must be finite and non-negative".into()));
        }
        if self.rural_inner > self.rural_outer {
            return Err(Error::InvalidScheme("rural_inner must not exceed rural_outer".into()));
        }
        if !(0.0..=1.0).contains(&self.rural_outer_prob) {
            return Err(Error::InvalidScheme("rural_outer_prob must lie in [0, 1]".into()));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::InvalidScheme("scale must be positive".into()));
        }
        Ok(())
    }

    /// Mixture components `(probability, max radius)` for one cluster class,
    /// with the scale already applied. Zero-probability branches are omitted.
    pub fn branches(&self, urban: bool) -> Vec<(f64, f64)> {
        if urban {
            vec![(1.0, self.urban_max * self.scale)]
        } else {
            [(1.0 - self.rural_outer_prob, self.rural_inner), (self.rural_outer_prob, self.rural_outer)]
                .into_iter()
                .filter(|(p, _)| *p > 0.0)
                .map(|(p, r)| (p, r * self.scale))
                .collect()
        }
    }

    /// Largest displacement a cluster of this class can receive.
    pub fn max_radius(&self, urban: bool) -> f64 {
        self.branches(urban).iter().map(|b| b.1).fold(0.0, f64::max)
    }

    /// Probability mass of an annulus `r_lo <= r < r_hi` (full circle) under
    /// the region-free displacement law.
    pub fn radial_mass(&self, urban: bool, r_lo: f64, r_hi: f64) -> f64 {
        self.branches(urban)
            .iter()
            .map(|&(p, d)| {
                if d == 0.0 {
                    // point mass at the origin
                    if r_lo <= 0.0 {
                        p
                    } else {
                        0.0
                    }
                } else {
                    p * (r_hi.min(d) - r_lo.min(d)).max(0.0) / d
                }
            })
            .sum()
    }
}

impl Default for JitterScheme {
    fn default() -> Self {
        Self::dhs()
    }
}

/// Region-free displacement density at an offset. Not normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JitterDensity {
    Value(f64),
    /// Zero offset: the 1/r singularity, represented in quadrature by the
    /// central point.
    CenterAtom,
}

impl JitterDensity {
    pub fn value(&self) -> Option<f64> {
        match self {
            JitterDensity::Value(v) => Some(*v),
            JitterDensity::CenterAtom => None,
        }
    }
}

/// Density of a displacement `offset` (km): `Σ_b p_b / (2π D_b r)` over the
/// branches with `r < D_b`.
pub fn jitter_density(offset: (f64, f64), urban: bool, scheme: &JitterScheme) -> JitterDensity {
    let r = offset.0.hypot(offset.1);
    if r == 0.0 {
        return JitterDensity::CenterAtom;
    }
    let value = scheme.branches(urban).iter().filter(|&&(_, d)| r < d).map(|&(p, d)| p / (TAU * d * r)).sum();
    JitterDensity::Value(value)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterDraw {
    pub jittered: PlanarPoint,
    pub distance: f64,
    pub angle: f64,
    /// Proposals rejected for leaving the region.
    pub rejections: usize,
}

/// Displace `true_loc` with a generator seeded from `seed`.
pub fn sample_jitter(true_loc: PlanarPoint, urban: bool, scheme: &JitterScheme, region: &dyn Region, seed: u64) -> Result<JitterDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_jitter_with(true_loc, urban, scheme, region, &mut rng)
}

/// As [`sample_jitter`] with a caller-owned generator. The rural radius
/// branch is chosen once, before the rejection loop.
pub fn sample_jitter_with<R: Rng + ?Sized>(
    true_loc: PlanarPoint,
    urban: bool,
    scheme: &JitterScheme,
    region: &dyn Region,
    rng: &mut R,
) -> Result<JitterDraw> {
    let max_dist = if urban {
        scheme.urban_max * scheme.scale
    } else if rng.random::<f64>() < scheme.rural_outer_prob {
        scheme.rural_outer * scheme.scale
    } else {
        scheme.rural_inner * scheme.scale
    };
    for rejections in 0..=MAX_REJECTIONS {
        let angle = rng.random::<f64>() * TAU;
        let distance = rng.random::<f64>() * max_dist;
        let jittered = true_loc.offset_polar(distance, angle);
        if region.contains(&jittered) {
            return Ok(JitterDraw { jittered, distance, angle, rejections });
        }
    }
    Err(Error::RejectionLimit(MAX_REJECTIONS))
}
