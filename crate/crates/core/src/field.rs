//! Matérn covariance (smoothness 1), the bilinear tent-basis representation
//! of the latent field, and exact Gaussian random field simulation.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::PlanarPoint;
use crate::special::bessel_k01;

/// Relative diagonal lift added to the knot covariance.
pub const COV_LIFT: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub sigma2: f64,
    /// Range in km: distance at which correlation is about 0.14.
    pub range: f64,
}

impl MaternParams {
    pub fn new(sigma2: f64, range: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite() && range > 0.0 && range.is_finite()) {
            return Err(Error::InvalidArgument(format!("Matérn parameters must be positive (sigma2={sigma2}, range={range})")));
        }
        Ok(Self { sigma2, range })
    }

    /// `sqrt(8 nu) / range` with `nu = 1`.
    pub fn kappa(&self) -> f64 {
        8f64.sqrt() / self.range
    }
}

/// Matérn correlation with smoothness 1 at distance `d`: `x K1(x)`, `x = kappa d`.
pub fn matern_corr(d: f64, range: f64) -> f64 {
    let x = 8f64.sqrt() * d / range;
    if x < 1e-300 {
        return 1.0;
    }
    x * bessel_k01(x).1
}

/// Correlation and its derivative with respect to `log(range)`:
/// `d/dlog(range) [x K1(x)] = x^2 K0(x)`.
pub fn matern_corr_dlogrange(d: f64, range: f64) -> (f64, f64) {
    let x = 8f64.sqrt() * d / range;
    if x < 1e-300 {
        return (1.0, 0.0);
    }
    let (k0, k1) = bessel_k01(x);
    (x * k1, x * x * k0)
}

pub fn matern_cov(d: f64, p: &MaternParams) -> f64 {
    p.sigma2 * matern_corr(d, p.range)
}

/// One row of the basis matrix: at most four `(knot, value)` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BasisRow {
    idx: [usize; 4],
    val: [f64; 4],
    len: usize,
}

impl BasisRow {
    fn push(&mut self, i: usize, v: f64) {
        if v != 0.0 {
            self.idx[self.len] = i;
            self.val[self.len] = v;
            self.len += 1;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.idx[..self.len].iter().copied().zip(self.val[..self.len].iter().copied())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dot(&self, w: &[f64]) -> f64 {
        self.iter().map(|(i, v)| v * w[i]).sum()
    }
}

/// A regular `nx × ny` knot grid with bilinear tent basis functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisField {
    pub origin: PlanarPoint,
    pub dx: f64,
    pub dy: f64,
    pub nx: usize,
    pub ny: usize,
}

impl BasisField {
    pub fn new(lo: PlanarPoint, hi: PlanarPoint, nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidArgument("basis grid needs at least 2 knots per axis".into()));
        }
        if !(hi.x > lo.x && hi.y > lo.y) {
            return Err(Error::InvalidArgument("basis grid bounds are empty".into()));
        }
        Ok(Self { origin: lo, dx: (hi.x - lo.x) / (nx - 1) as f64, dy: (hi.y - lo.y) / (ny - 1) as f64, nx, ny })
    }

    /// Grid over the bounding box of `points`, padded by `buffer` km.
    pub fn covering(points: &[PlanarPoint], buffer: f64, nx: usize, ny: usize) -> Result<Self> {
        let mut lo = PlanarPoint::new(f64::INFINITY, f64::INFINITY);
        let mut hi = PlanarPoint::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        if !lo.is_finite() {
            return Err(Error::InvalidArgument("cannot cover an empty point set".into()));
        }
        Self::new(lo.translate(-buffer, -buffer), hi.translate(buffer, buffer), nx, ny)
    }

    pub fn n_knots(&self) -> usize {
        self.nx * self.ny
    }

    pub fn knot(&self, i: usize) -> PlanarPoint {
        let (ix, iy) = (i % self.nx, i / self.nx);
        PlanarPoint::new(self.origin.x + ix as f64 * self.dx, self.origin.y + iy as f64 * self.dy)
    }

    pub fn knots(&self) -> Vec<PlanarPoint> {
        (0..self.n_knots()).map(|i| self.knot(i)).collect()
    }

    pub fn upper(&self) -> PlanarPoint {
        self.origin.translate((self.nx - 1) as f64 * self.dx, (self.ny - 1) as f64 * self.dy)
    }

    pub fn contains(&self, p: &PlanarPoint) -> bool {
        let hi = self.upper();
        p.x >= self.origin.x && p.y >= self.origin.y && p.x <= hi.x && p.y <= hi.y
    }

    /// Basis values at `p`: bilinear interpolation weights of the enclosing cell.
    pub fn eval_basis(&self, p: &PlanarPoint) -> Result<BasisRow> {
        if !p.is_finite() || !self.contains(p) {
            return Err(Error::OutsideGrid { x: p.x, y: p.y });
        }
        let fx = (p.x - self.origin.x) / self.dx;
        let fy = (p.y - self.origin.y) / self.dy;
        let ix = (fx.floor() as usize).min(self.nx - 2);
        let iy = (fy.floor() as usize).min(self.ny - 2);
        let tx = (fx - ix as f64).clamp(0.0, 1.0);
        let ty = (fy - iy as f64).clamp(0.0, 1.0);
        let base = iy * self.nx + ix;
        let mut row = BasisRow::default();
        row.push(base, (1.0 - tx) * (1.0 - ty));
        row.push(base + 1, tx * (1.0 - ty));
        row.push(base + self.nx, (1.0 - tx) * ty);
        row.push(base + self.nx + 1, tx * ty);
        Ok(row)
    }

    /// Field value `Σ φ_k(p) w_k`.
    pub fn eval(&self, p: &PlanarPoint, w: &[f64]) -> Result<f64> {
        Ok(self.eval_basis(p)?.dot(w))
    }

    /// Correlation table indexed by knot offset `(|Δix|, |Δiy|)`; the grid
    /// is regular so the K × K matrix has only `nx · ny` distinct entries.
    fn offset_table(&self, range: f64, with_derivative: bool) -> (Vec<f64>, Vec<f64>) {
        let mut corr = vec![0.0; self.nx * self.ny];
        let mut dcorr = vec![0.0; if with_derivative { self.nx * self.ny } else { 0 }];
        for oy in 0..self.ny {
            for ox in 0..self.nx {
                let d = (ox as f64 * self.dx).hypot(oy as f64 * self.dy);
                let (c, dc) = matern_corr_dlogrange(d, range);
                corr[oy * self.nx + ox] = c;
                if with_derivative {
                    dcorr[oy * self.nx + ox] = dc;
                }
            }
        }
        (corr, dcorr)
    }

    fn fill_from_table(&self, table: &[f64], scale: f64, diag_extra: f64) -> DMatrix<f64> {
        let k = self.n_knots();
        let mut m = DMatrix::zeros(k, k);
        for i in 0..k {
            let (ix, iy) = (i % self.nx, i / self.nx);
            for j in 0..k {
                let (jx, jy) = (j % self.nx, j / self.nx);
                m[(i, j)] = scale * table[ix.abs_diff(jx) + self.nx * iy.abs_diff(jy)];
            }
            m[(i, i)] += diag_extra;
        }
        m
    }

    /// Covariance of the knot weights: Matérn at the knots plus a
    /// `COV_LIFT · sigma2` diagonal.
    pub fn weight_cov(&self, p: &MaternParams) -> DMatrix<f64> {
        let (table, _) = self.offset_table(p.range, false);
        self.fill_from_table(&table, p.sigma2, COV_LIFT * p.sigma2)
    }

    /// `weight_cov` and its derivative with respect to `log(range)`.
    pub fn weight_cov_with_range_derivative(&self, p: &MaternParams) -> (DMatrix<f64>, DMatrix<f64>) {
        let (table, dtable) = self.offset_table(p.range, true);
        (self.fill_from_table(&table, p.sigma2, COV_LIFT * p.sigma2), self.fill_from_table(&dtable, p.sigma2, 0.0))
    }
}

/// Exact zero-mean Matérn field values at `at`, via dense Cholesky.
pub fn simulate_grf(p: &MaternParams, at: &[PlanarPoint], seed: u64) -> Result<Vec<f64>> {
    let n = at.len();
    let cov = DMatrix::from_fn(n, n, |i, j| matern_cov(at[i].distance(&at[j]), p));
    let chol =
        cov.cholesky().ok_or_else(|| Error::Factorization("Matérn covariance is not positive definite (duplicate points?)".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
    Ok((chol.l() * z).iter().copied().collect())
}
