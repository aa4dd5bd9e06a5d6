//! Unbiased compression operators `C` with `E[C(x)] = x` and `E‖C(x)‖² ≤ (ω+1)‖x‖²`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::DenseVector;

/// Bits charged per transmitted coordinate value.
pub const VALUE_BITS: u64 = 64;
/// Bits charged per transmitted coordinate index.
pub const INDEX_BITS: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum CompressorKind {
    Identity,
    RandK { k: usize },
}

/// A compressor bound to a dimension. `k ≤ d` is checked here, never at call time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressorSpec {
    kind: CompressorKind,
    dim: usize,
    omega: f64,
}

/// Output of compressing `x − h` for a client holding shift `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedMessage {
    /// The transmitted message `q = C(x − h)`.
    pub q: DenseVector,
    /// The receiver's reconstruction `h + q`.
    pub decoded: DenseVector,
}

impl CompressorSpec {
    pub fn identity(dim: usize) -> Self {
        Self { kind: CompressorKind::Identity, dim, omega: 0.0 }
    }

    pub fn rand_k(k: usize, dim: usize) -> Result<Self> {
        if k == 0 || k > dim {
            return Err(Error::Config(format!("RandK requires 1 <= k <= d, got k={k}, d={dim}")));
        }
        Ok(Self { kind: CompressorKind::RandK { k }, dim, omega: dim as f64 / k as f64 - 1.0 })
    }

    pub fn new(kind: CompressorKind, dim: usize) -> Result<Self> {
        match kind {
            CompressorKind::Identity => Ok(Self::identity(dim)),
            CompressorKind::RandK { k } => Self::rand_k(k, dim),
        }
    }

    pub fn kind(&self) -> CompressorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Tight variance parameter: 0 for identity, `d/k − 1` for random-k sparsification.
    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Bits sent per message: `64·d` dense, `k·(64+32)` for value/index pairs.
    pub fn uplink_bits(&self) -> u64 {
        match self.kind {
            CompressorKind::Identity => VALUE_BITS * self.dim as u64,
            CompressorKind::RandK { k } => k as u64 * (VALUE_BITS + INDEX_BITS),
        }
    }

    /// Draws the kept coordinate set by a partial Fisher–Yates shuffle of `0..d`.
    pub fn sample_support<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let k = match self.kind {
            CompressorKind::Identity => return (0..self.dim).collect(),
            CompressorKind::RandK { k } => k,
        };
        let mut idx: Vec<usize> = (0..self.dim).collect();
        for j in 0..k {
            let r = rng.random_range(j..self.dim);
            idx.swap(j, r);
        }
        idx.truncate(k);
        idx
    }

    /// Deterministic part of the operator: keeps `support`, scaled by `d/|support|`.
    pub fn sparsify_with(&self, x: &[f64], support: &[usize]) -> DenseVector {
        let mut out = DenseVector::zeros(x.len());
        match self.kind {
            CompressorKind::Identity => out.copy_from_slice(x),
            CompressorKind::RandK { k } => {
                let scale = self.dim as f64 / k as f64;
                for &j in support {
                    out[j] = scale * x[j];
                }
            }
        }
        out
    }

    pub fn compress<R: Rng + ?Sized>(&self, x: &DenseVector, rng: &mut R) -> DenseVector {
        assert_eq!(x.len(), self.dim, "compressor dimension mismatch");
        match self.kind {
            CompressorKind::Identity => x.clone(),
            CompressorKind::RandK { .. } => {
                let support = self.sample_support(rng);
                self.sparsify_with(x.as_slice(), &support)
            }
        }
    }

    /// Compresses `x − shift`. The identity operator decodes to `x` itself; every other
    /// operator decodes to `shift + q`.
    pub fn compress_shifted<R: Rng + ?Sized>(
        &self,
        x: &DenseVector,
        shift: &DenseVector,
        rng: &mut R,
    ) -> ShiftedMessage {
        let diff = x - shift;
        match self.kind {
            CompressorKind::Identity => ShiftedMessage { q: diff, decoded: x.clone() },
            CompressorKind::RandK { .. } => {
                let q = self.compress(&diff, rng);
                let decoded = shift + &q;
                ShiftedMessage { q, decoded }
            }
        }
    }
}
