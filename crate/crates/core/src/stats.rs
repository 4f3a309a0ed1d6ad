//! Seeded random streams and shared statistical primitives.

use nalgebra::{Cholesky, DMatrix};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Purpose tags for stream derivation. Distinct tags give independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Cohort = 1,
    Missingness = 2,
    Imputation = 3,
    Estimator = 4,
    Matching = 5,
    Oracle = 6,
    Cli = 7,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic random stream keyed by `(seed, replication, purpose)`.
///
/// Child streams are derived by hashing an extra tag into the key, so a
/// replication can hand out independent sub-streams (one per imputation, one
/// per estimator) without coordinating draw counts.
#[derive(Debug, Clone)]
pub struct RngStream {
    key: [u64; 4],
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, replication: u64, purpose: Purpose) -> Self {
        Self::from_key([seed, replication, purpose as u64, 0])
    }

    /// Stream for ad hoc use outside the replication structure.
    pub fn from_seed(seed: u64) -> Self {
        Self::new(seed, 0, Purpose::Cli)
    }

    fn from_key(key: [u64; 4]) -> Self {
        let mut h = 0x6A09_E667_F3BC_C908u64;
        let mut bytes = [0u8; 32];
        for (chunk, k) in bytes.chunks_mut(8).zip(key.iter()) {
            h = splitmix(h ^ splitmix(*k));
            chunk.copy_from_slice(&h.to_le_bytes());
        }
        Self {
            key,
            rng: ChaCha8Rng::from_seed(bytes),
        }
    }

    /// Independent sub-stream identified by `tag`.
    pub fn child(&self, tag: u64) -> Self {
        let [a, b, c, d] = self.key;
        Self::from_key([a, b, splitmix(c ^ splitmix(d)), tag.wrapping_add(1)])
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// Inverse logit.
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Correlation structure with unit diagonal and sparse off-diagonal entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpec {
    pub dim: usize,
    pub off_diagonal: Vec<(usize, usize, f64)>,
}

impl CovarianceSpec {
    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            off_diagonal: Vec::new(),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::identity(self.dim, self.dim);
        for &(i, j, r) in &self.off_diagonal {
            m[(i, j)] = r;
            m[(j, i)] = r;
        }
        m
    }

    /// Lower Cholesky factor.
    pub fn cholesky(&self) -> Result<DMatrix<f64>> {
        Cholesky::new(self.to_matrix())
            .map(|c| c.l())
            .ok_or(Error::NotPositiveDefinite)
    }
}

/// `n` zero-mean draws with the given covariance, column-major (`out[j][i]`).
pub fn sample_mvn<R: RngCore>(n: usize, cov: &CovarianceSpec, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let l = cov.cholesky()?;
    let p = cov.dim;
    let mut out = vec![vec![0.0; n]; p];
    let mut z = vec![0.0; p];
    for i in 0..n {
        for zk in z.iter_mut() {
            *zk = StandardNormal.sample(rng);
        }
        for j in 0..p {
            let mut s = 0.0;
            for k in 0..=j {
                s += l[(j, k)] * z[k];
            }
            out[j][i] = s;
        }
    }
    Ok(out)
}

/// Sup-distance between two weighted empirical CDFs (weights normalized per sample).
pub fn ks_statistic(x: &[f64], wx: &[f64], y: &[f64], wy: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptySample);
    }
    if x.len() != wx.len() || y.len() != wy.len() {
        return Err(Error::InvalidWeights("length mismatch".into()));
    }
    let tx: f64 = wx.iter().sum();
    let ty: f64 = wy.iter().sum();
    if wx.iter().chain(wy).any(|&w| w < 0.0 || !w.is_finite()) || tx <= 0.0 || ty <= 0.0 {
        return Err(Error::InvalidWeights(
            "weights must be nonnegative with positive sum".into(),
        ));
    }
    let mut pooled: Vec<(f64, f64)> = x
        .iter()
        .zip(wx)
        .map(|(&v, &w)| (v, w / tx))
        .chain(y.iter().zip(wy).map(|(&v, &w)| (v, -w / ty)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut diff = 0.0f64;
    let mut best = 0.0f64;
    for (k, &(v, signed)) in pooled.iter().enumerate() {
        diff += signed;
        let boundary = pooled.get(k + 1).map_or(true, |next| next.0 != v);
        if boundary {
            best = best.max(diff.abs());
        }
    }
    Ok(best.min(1.0))
}

pub fn weighted_mean(x: &[f64], w: &[f64]) -> Result<f64> {
    if x.is_empty() || x.len() != w.len() {
        return Err(Error::Degenerate("weighted mean needs matching non-empty inputs".into()));
    }
    let tw: f64 = w.iter().sum();
    if tw <= 0.0 {
        return Err(Error::InvalidWeights("weights sum to zero".into()));
    }
    Ok(x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / tw)
}

/// Standard deviation under frequency weights (divisor `sum(w) - 1`).
pub fn weighted_sd(x: &[f64], w: &[f64]) -> Result<f64> {
    let m = weighted_mean(x, w)?;
    let tw: f64 = w.iter().sum();
    if tw <= 1.0 {
        return Err(Error::Degenerate("weighted sd needs total weight above one".into()));
    }
    let ss: f64 = x.iter().zip(w).map(|(a, b)| b * (a - m).powi(2)).sum();
    Ok((ss / (tw - 1.0)).sqrt())
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation with divisor `n - 1`.
pub fn empirical_sd(x: &[f64]) -> Result<f64> {
    if x.len() < 2 {
        return Err(Error::Degenerate("sd needs at least two observations".into()));
    }
    let m = mean(x);
    let ss: f64 = x.iter().map(|a| (a - m).powi(2)).sum();
    Ok((ss / (x.len() - 1) as f64).sqrt())
}

/// Pearson correlation.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}
