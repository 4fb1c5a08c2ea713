//! Sign-random-projection codes and the collision-count neighbor filter.
//!
//! Each vector is summarized by `m` sign bits, one per Gaussian projection.
//! For two vectors at angle `theta` a single bit agrees with probability
//! `1 - theta / pi`, so the number of agreeing bits ("collisions") is a
//! Binomial(m, 1 - theta/pi) estimate of the angle.
//!
//! During bottom-layer traversal a candidate whose collision count falls
//! below a threshold is unlikely to be within the current cutoff distance of
//! the query and can be skipped. The threshold follows from the one-sided
//! Hoeffding bound `Pr[X <= m p - t] <= exp(-2 t^2 / m)`: choosing
//! `t = sqrt((m / 2) ln(1 / eps))` keeps the false-negative rate of a
//! within-cutoff candidate at or below `eps`.

use std::cmp::Reverse;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::VectorId;

pub const DEFAULT_BITS: usize = 128;

/// `m` Gaussian projection vectors of dimension `d`, regenerated
/// deterministically from a seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    bits: usize,
    dim: usize,
    seed: u64,
    /// Row-major `bits x dim`.
    rows: Vec<f32>,
}

impl ProjectionSet {
    pub fn new(bits: usize, dim: usize, seed: u64) -> Result<Self> {
        if bits == 0 || dim == 0 {
            return Err(Error::invalid("projection set needs bits > 0 and dim > 0"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..bits * dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z as f32
            })
            .collect();
        Ok(Self {
            bits,
            dim,
            seed,
            rows,
        })
    }

    /// Builds a set from explicit projection rows.
    pub fn from_rows(rows: Vec<Vec<f32>>) -> Result<Self> {
        let bits = rows.len();
        let dim = rows.first().map_or(0, Vec::len);
        if bits == 0 || dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid(
                "projection rows must be non-empty and equal length",
            ));
        }
        Ok(Self {
            bits,
            dim,
            seed: 0,
            rows: rows.into_iter().flatten().collect(),
        })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// Sign code of `x`; bit `i` is set iff `x . a_i >= 0`.
    pub fn hash(&self, x: &[f32]) -> Result<HashCode> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut code = HashCode::zeros(self.bits);
        for i in 0..self.bits {
            let dot: f64 = self
                .row(i)
                .iter()
                .zip(x)
                .map(|(a, b)| *a as f64 * *b as f64)
                .sum();
            if dot >= 0.0 {
                code.words[i / 64] |= 1 << (i % 64);
            }
        }
        Ok(code)
    }
}

/// Packed sign vector: a set bit is `+1`, a clear bit is `-1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HashCode {
    len: usize,
    words: Vec<u64>,
}

impl HashCode {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_signs(signs: &[i8]) -> Self {
        let mut c = Self::zeros(signs.len());
        for (i, &s) in signs.iter().enumerate() {
            if s > 0 {
                c.words[i / 64] |= 1 << (i % 64);
            }
        }
        c
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn sign(&self, i: usize) -> i8 {
        if self.words[i / 64] >> (i % 64) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    pub fn signs(&self) -> Vec<i8> {
        (0..self.len).map(|i| self.sign(i)).collect()
    }

    pub fn hamming(&self, other: &HashCode) -> u32 {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    /// Little-endian byte image, `ceil(m / 8)` bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out: Vec<u8> = self.words.iter().flat_map(|w| w.to_le_bytes()).collect();
        out.truncate(self.len.div_ceil(8));
        out
    }

    pub fn from_bytes(len: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::CodeLength(len.div_ceil(8), bytes.len()));
        }
        let mut c = Self::zeros(len);
        for (i, b) in bytes.iter().enumerate() {
            c.words[i / 8] |= (*b as u64) << (8 * (i % 8));
        }
        Ok(c)
    }
}

/// Number of agreeing bits, `m - hamming(a, b)`.
pub fn collisions(a: &HashCode, b: &HashCode) -> Result<u32> {
    if a.len != b.len {
        return Err(Error::CodeLength(a.len, b.len));
    }
    Ok(a.len as u32 - a.hamming(b))
}

/// Filter settings for bottom-layer traversal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    /// Target false-negative rate of the collision test, in (0, 1).
    pub epsilon: f64,
    /// Fraction of candidates always kept, in (0, 1].
    pub rho: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            rho: 1.0,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid(format!(
                "epsilon {} outside (0, 1)",
                self.epsilon
            )));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::invalid(format!("rho {} outside (0, 1]", self.rho)));
        }
        Ok(())
    }
}

/// Probability that one sign bit agrees for a pair at distance `delta`,
/// treating both vectors as having the query's norm: `cos theta = 1 -
/// delta^2 / (2 |q|^2)`, `p = 1 - theta / pi`.
pub fn collision_probability(delta: f64, query_norm_sq: f64) -> f64 {
    if !delta.is_finite() {
        return 0.0;
    }
    if query_norm_sq <= 0.0 {
        return 0.0;
    }
    let cos = (1.0 - delta * delta / (2.0 * query_norm_sq)).clamp(-1.0, 1.0);
    1.0 - cos.acos() / PI
}

/// Hoeffding deviation `sqrt((m / 2) ln(1 / eps))`.
pub fn hoeffding_margin(bits: usize, epsilon: f64) -> f64 {
    ((bits as f64 / 2.0) * (1.0 / epsilon).ln()).sqrt()
}

/// Collision threshold for collision probability `p`:
/// `ceil(m p - sqrt((m/2) ln(1/eps)))` clamped to `[0, m]`.
pub fn threshold_for_probability(bits: usize, epsilon: f64, p: f64) -> u32 {
    let t = (bits as f64 * p - hoeffding_margin(bits, epsilon)).ceil();
    t.clamp(0.0, bits as f64) as u32
}

/// Minimum collision count a candidate needs, given cutoff distance `delta`
/// and the query vector. An infinite `delta` yields 0.
pub fn collision_threshold(bits: usize, epsilon: f64, delta: f64, query: &[f32]) -> Result<u32> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!("epsilon {epsilon} outside (0, 1)")));
    }
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::invalid(format!("delta {delta} must be positive")));
    }
    let norm_sq: f64 = query.iter().map(|v| (*v as f64) * (*v as f64)).sum();
    Ok(threshold_for_probability(
        bits,
        epsilon,
        collision_probability(delta, norm_sq),
    ))
}

/// Selects which candidates to evaluate: every candidate with at least
/// `threshold` collisions, plus the `ceil(rho * n)` candidates with the most
/// collisions. Output is ordered by collisions descending, then id.
pub fn filter_neighbors(
    query_code: &HashCode,
    candidates: &[(VectorId, &HashCode)],
    rho: f64,
    threshold: u32,
) -> Result<Vec<VectorId>> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let mut scored: Vec<(u32, VectorId)> = candidates
        .iter()
        .map(|(id, code)| collisions(query_code, code).map(|c| (c, *id)))
        .collect::<Result<_>>()?;
    scored.sort_unstable_by_key(|&(c, id)| (Reverse(c), id));
    let floor = ((rho * scored.len() as f64).ceil() as usize).min(scored.len());
    Ok(scored
        .iter()
        .enumerate()
        .take_while(|&(rank, &(c, _))| rank < floor || c >= threshold)
        .map(|(_, &(_, id))| id)
        .collect())
}
