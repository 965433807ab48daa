//! Hyper-ellipsoids `(x − a)ᵀ M (x − a) = 1` parameterized by a center `a`
//! and a lower-triangular Cholesky factor `L` with `M = L·Lᵀ`.
//!
//! Distances use the radial approximation: the gap between a point and the
//! surface measured along the ray from the center through the point,
//!
//! ```text
//! D(e) = |1 − 1/√q| · ‖e − a‖₂,    q = (e − a)ᵀ M (e − a) = ‖Lᵀ(e − a)‖²
//! ```
//!
//! which is exact for spheres. `M` is never materialized on the hot path;
//! all quantities go through the factor.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Minimum value allowed on the diagonal of `L`.
pub const DIAG_FLOOR: f64 = 1e-6;
/// Below this quadratic form a point counts as sitting on the center.
pub const Q_FLOOR: f64 = 1e-12;
/// Samples with `|q − 1|` below this are on the surface, where `D` has a kink.
pub const SURFACE_BAND: f64 = 1e-9;
const INIT_EPS: f64 = 1e-6;

/// Packed lower-triangular matrix, row-major: row `i` holds columns `0..=i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    dim: usize,
    data: Vec<f64>,
}

#[inline]
fn packed_index(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

impl LowerTriangular {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diagonal(&vec![1.0; dim])
    }

    pub fn from_packed(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * (dim + 1) / 2 {
            return Err(Error::DimensionMismatch {
                expected: dim * (dim + 1) / 2,
                found: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    /// From a dense row-major `dim × dim` matrix; the upper triangle must be
    /// zero.
    pub fn from_dense(dim: usize, dense: &[f64]) -> Result<Self> {
        if dense.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: dense.len(),
            });
        }
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                let v = dense[i * dim + j];
                if j > i {
                    if v != 0.0 {
                        return Err(Error::Config(format!(
                            "entry ({i}, {j}) above the diagonal is {v}, expected 0"
                        )));
                    }
                } else {
                    m.set(i, j, v);
                }
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Entry `(i, j)`; zero above the diagonal.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.data[packed_index(i, j)]
        }
    }

    /// Set entry `(i, j)` with `j ≤ i`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(j <= i, "cannot write above the diagonal ({i}, {j})");
        self.data[packed_index(i, j)] = v;
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn min_diagonal(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.get(i, i))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn packed(&self) -> &[f64] {
        &self.data
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let k = self.dim;
        let mut out = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..=i {
                out[i * k + j] = self.get(i, j);
            }
        }
        out
    }

    /// `Lᵀ·y`
    pub fn transpose_mul(&self, y: &[f64]) -> Vec<f64> {
        let k = self.dim;
        let mut z = vec![0.0; k];
        for (i, &yi) in y.iter().enumerate() {
            let row = &self.data[packed_index(i, 0)..=packed_index(i, i)];
            for (zj, &lij) in z.iter_mut().zip(row) {
                *zj += lij * yi;
            }
        }
        z
    }

    /// `L·z`
    pub fn mul(&self, z: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| {
                let row = &self.data[packed_index(i, 0)..=packed_index(i, i)];
                row.iter().zip(z).map(|(l, v)| l * v).sum()
            })
            .collect()
    }

    fn clamp_diagonal(&mut self, floor: f64) {
        for i in 0..self.dim {
            let idx = packed_index(i, i);
            if self.data[idx] < floor || self.data[idx].is_nan() {
                self.data[idx] = floor;
            }
        }
    }
}

/// Gradient of the radial distance with respect to the center and the
/// factor. The factor gradient is lower-triangular by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidGradient {
    pub center: Vec<f64>,
    pub factor: LowerTriangular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    center: Vec<f64>,
    factor: LowerTriangular,
}

impl Ellipsoid {
    /// Validates dimensions, finiteness and a strictly positive diagonal.
    pub fn new(center: Vec<f64>, factor: LowerTriangular) -> Result<Self> {
        if center.len() != factor.dim() {
            return Err(Error::DimensionMismatch {
                expected: factor.dim(),
                found: center.len(),
            });
        }
        if center.is_empty() {
            return Err(Error::Config("ellipsoid dimension must be positive".into()));
        }
        if !center.iter().chain(factor.packed()).all(|v| v.is_finite()) {
            return Err(Error::Config("ellipsoid has non-finite parameters".into()));
        }
        if factor.min_diagonal() <= 0.0 {
            return Err(Error::Config(
                "Cholesky factor needs a strictly positive diagonal".into(),
            ));
        }
        Ok(Self { center, factor })
    }

    pub fn sphere(center: Vec<f64>, radius: f64) -> Result<Self> {
        let k = center.len();
        Self::new(center, LowerTriangular::from_diagonal(&vec![1.0 / radius; k]))
    }

    /// From a dense symmetric positive definite `M`, via Cholesky.
    pub fn from_spd(center: Vec<f64>, matrix: &[f64]) -> Result<Self> {
        let k = center.len();
        if matrix.len() != k * k {
            return Err(Error::DimensionMismatch {
                expected: k * k,
                found: matrix.len(),
            });
        }
        let mut l = LowerTriangular::zeros(k);
        for i in 0..k {
            for j in 0..=i {
                let mut sum = matrix[i * k + j];
                for p in 0..j {
                    sum -= l.get(i, p) * l.get(j, p);
                }
                if i == j {
                    if sum <= 0.0 {
                        return Err(Error::Config("matrix is not positive definite".into()));
                    }
                    l.set(i, i, sum.sqrt());
                } else {
                    l.set(i, j, sum / l.get(j, j));
                }
            }
        }
        Self::new(center, l)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn factor(&self) -> &LowerTriangular {
        &self.factor
    }

    /// Dense `M = L·Lᵀ`. Diagnostics only.
    pub fn matrix(&self) -> Vec<f64> {
        let k = self.dim();
        let mut m = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                m[i * k + j] = (0..=i.min(j))
                    .map(|p| self.factor.get(i, p) * self.factor.get(j, p))
                    .sum();
            }
        }
        m
    }

    fn check_dim(&self, e: &[f64]) -> Result<()> {
        if e.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: e.len(),
            });
        }
        Ok(())
    }

    /// Offset `y = e − a`, `z = Lᵀy`, `q = ‖z‖²` and `‖y‖₂`.
    fn radial(&self, e: &[f64]) -> (Vec<f64>, Vec<f64>, f64, f64) {
        let y: Vec<f64> = e.iter().zip(&self.center).map(|(x, a)| x - a).collect();
        let z = self.factor.transpose_mul(&y);
        let q = z.iter().map(|v| v * v).sum();
        let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        (y, z, q, n)
    }

    /// `(e − a)ᵀ M (e − a)`, computed as `‖Lᵀ(e − a)‖²`.
    pub fn quad_form(&self, e: &[f64]) -> Result<f64> {
        self.check_dim(e)?;
        let (_, _, q, _) = self.radial(e);
        Ok(q)
    }

    /// Strictly inside (`q < 1`).
    pub fn contains(&self, e: &[f64]) -> Result<bool> {
        Ok(self.quad_form(e)? < 1.0)
    }

    /// Radial distance to the surface. `Ok(None)` when `e` sits on the
    /// center (`q < Q_FLOOR`), where the ray is undefined.
    pub fn distance(&self, e: &[f64]) -> Result<Option<f64>> {
        self.check_dim(e)?;
        let (_, _, q, n) = self.radial(e);
        Ok(radial_distance(q, n))
    }

    /// Training score: the radial distance for every point, inside or out.
    /// A point on the center scores 0.
    pub fn score_train(&self, e: &[f64]) -> Result<f64> {
        Ok(self.distance(e)?.unwrap_or(0.0))
    }

    /// Test-time penalty: 0 strictly inside, the radial distance otherwise.
    pub fn score_test(&self, e: &[f64]) -> Result<f64> {
        self.check_dim(e)?;
        let (_, _, q, n) = self.radial(e);
        if q < 1.0 {
            Ok(0.0)
        } else {
            Ok(radial_distance(q, n).unwrap_or(0.0))
        }
    }

    /// Analytic gradient of [`distance`](Self::distance). `Ok(None)` at the
    /// center and within `SURFACE_BAND` of the surface.
    pub fn gradient(&self, e: &[f64]) -> Result<Option<EllipsoidGradient>> {
        self.check_dim(e)?;
        let (y, z, q, n) = self.radial(e);
        if q < Q_FLOOR || (q - 1.0).abs() < SURFACE_BAND {
            return Ok(None);
        }
        let inv_sqrt = 1.0 / q.sqrt();
        let sign = if 1.0 - inv_sqrt >= 0.0 { 1.0 } else { -1.0 };
        // dD/dq = sign · n / 2 · q^{-3/2}; dq/dy = 2·L·z; dq/dL_ij = 2·y_i·z_j
        let c = sign * n * inv_sqrt / q;
        let lz = self.factor.mul(&z);
        let radial_part = sign * (1.0 - inv_sqrt) / n;
        let center = y
            .iter()
            .zip(&lz)
            .map(|(yi, lzi)| -(radial_part * yi + c * lzi))
            .collect();
        let k = self.dim();
        let mut factor = LowerTriangular::zeros(k);
        for i in 0..k {
            for j in 0..=i {
                factor.set(i, j, c * y[i] * z[j]);
            }
        }
        Ok(Some(EllipsoidGradient { center, factor }))
    }

    fn step(&mut self, grad: &EllipsoidGradient, learning_rate: f64, diag_floor: f64) {
        for (a, g) in self.center.iter_mut().zip(&grad.center) {
            *a -= learning_rate * g;
        }
        for (l, g) in self.factor.data.iter_mut().zip(&grad.factor.data) {
            *l -= learning_rate * g;
        }
        self.factor.clamp_diagonal(diag_floor);
    }

    /// Append the standalone record: `k` (u64 LE), center, packed factor.
    pub fn write_record(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        for v in self.center.iter().chain(self.factor.packed()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    /// Parse a record written by [`write_record`](Self::write_record),
    /// returning the ellipsoid and the number of bytes consumed.
    pub fn read_record(bytes: &[u8]) -> Result<(Self, usize)> {
        let truncated = || Error::Format("truncated ellipsoid record".into());
        let k = u64::from_le_bytes(bytes.get(..8).ok_or_else(truncated)?.try_into().unwrap());
        let k = usize::try_from(k).map_err(|_| truncated())?;
        let n_floats = k
            .checked_mul(k + 1)
            .map(|t| t / 2 + k)
            .ok_or_else(truncated)?;
        let end = n_floats
            .checked_mul(8)
            .and_then(|b| b.checked_add(8))
            .ok_or_else(truncated)?;
        let body = bytes.get(8..end).ok_or_else(truncated)?;
        let floats: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let center = floats[..k].to_vec();
        let factor = LowerTriangular::from_packed(k, floats[k..].to_vec())?;
        let ellipsoid = Self::new(center, factor)
            .map_err(|e| Error::Format(format!("invalid ellipsoid record: {e}")))?;
        Ok((ellipsoid, end))
    }
}

#[inline]
fn radial_distance(q: f64, n: f64) -> Option<f64> {
    if q < Q_FLOOR {
        None
    } else {
        Some((1.0 - 1.0 / q.sqrt()).abs() * n)
    }
}

/// SGD settings for fitting one ellipsoid.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub diag_floor: f64,
    /// Domains with fewer members are skipped by the domain pipeline.
    pub min_members: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            batch_size: 120,
            epochs: 500,
            seed: 0,
            diag_floor: DIAG_FLOOR,
            min_members: 2,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("fit learning rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("fit epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("fit batch size must be at least 1".into()));
        }
        if !(self.diag_floor > 0.0) {
            return Err(Error::Config("diag_floor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub ellipsoid: Ellipsoid,
    pub initial_mean: f64,
    pub final_mean: f64,
    /// Parameter updates applied (degenerate samples excluded).
    pub updates: usize,
    /// True when SGD ended worse than the initialization and was discarded.
    pub reverted: bool,
}

fn check_points<P: AsRef<[f64]>>(points: &[P]) -> Result<usize> {
    let first = points
        .first()
        .ok_or_else(|| Error::EmptyInput("cannot fit an ellipsoid to zero points".into()))?;
    let k = first.as_ref().len();
    if k == 0 {
        return Err(Error::Config("points must have positive dimension".into()));
    }
    for p in points {
        if p.as_ref().len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: p.as_ref().len(),
            });
        }
    }
    Ok(k)
}

/// Axis-aligned starting ellipsoid: center at the sample mean, semi-axis
/// `σ_i·√k` along dimension `i`.
pub fn initial_ellipsoid<P: AsRef<[f64]>>(points: &[P], diag_floor: f64) -> Result<Ellipsoid> {
    let k = check_points(points)?;
    let n = points.len() as f64;
    let mut mean = vec![0.0; k];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p.as_ref()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; k];
    for p in points {
        for ((s, v), m) in var.iter_mut().zip(p.as_ref()).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let sqrt_k = (k as f64).sqrt();
    let diag: Vec<f64> = var
        .iter()
        .map(|s| (1.0 / ((s / n).sqrt() * sqrt_k + INIT_EPS)).max(diag_floor))
        .collect();
    Ellipsoid::new(mean, LowerTriangular::from_diagonal(&diag))
}

/// Mean training score over `points`.
pub fn mean_score_train<P: AsRef<[f64]>>(ellipsoid: &Ellipsoid, points: &[P]) -> Result<f64> {
    let mut total = 0.0;
    for p in points {
        total += ellipsoid.score_train(p.as_ref())?;
    }
    Ok(total / points.len() as f64)
}

/// Fit an ellipsoid so that the points lie close to its surface.
pub fn fit<P: AsRef<[f64]>>(points: &[P], config: &FitConfig) -> Result<Ellipsoid> {
    Ok(fit_with_outcome(points, config)?.ellipsoid)
}

/// [`fit`] plus before/after diagnostics.
///
/// SGD over shuffled mini-batches, one `learning_rate` step per sample on
/// the center and the lower triangle of `L`, clamping `diag(L)` to
/// `diag_floor` after each step. Samples on the center or on the surface
/// are skipped. If the final mean score is worse than the initial one the
/// initialization is returned instead.
pub fn fit_with_outcome<P: AsRef<[f64]>>(points: &[P], config: &FitConfig) -> Result<FitOutcome> {
    config.validate()?;
    let init = initial_ellipsoid(points, config.diag_floor)?;
    let initial_mean = mean_score_train(&init, points)?;

    let mut current = init.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..points.len()).collect();
    let mut updates = 0usize;
    'epochs: for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            for &idx in batch {
                if let Some(grad) = current.gradient(points[idx].as_ref())? {
                    current.step(&grad, config.learning_rate, config.diag_floor);
                    updates += 1;
                }
            }
            if !current.center.iter().chain(current.factor.packed()).all(|v| v.is_finite()) {
                log::warn!("ellipsoid fit produced non-finite parameters; stopping early");
                break 'epochs;
            }
        }
    }

    let final_mean = if current.center.iter().chain(current.factor.packed()).all(|v| v.is_finite())
    {
        mean_score_train(&current, points)?
    } else {
        f64::INFINITY
    };
    let reverted = !(final_mean <= initial_mean);
    let (ellipsoid, final_mean) = if reverted {
        (init, initial_mean)
    } else {
        (current, final_mean)
    };
    Ok(FitOutcome {
        ellipsoid,
        initial_mean,
        final_mean,
        updates,
        reverted,
    })
}
