//! LIBSVM text parsing, synthetic problem generation and client partitioning.

use std::io::BufRead;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::problem::{ClientData, FederatedProblem};
use crate::rng::{rng_substream, Purpose};
use crate::shuffle::sample_permutation;

/// Largest accepted feature index.
pub const MAX_FEATURE_INDEX: usize = 1_000_000;
/// Largest dense materialization, in matrix entries.
pub const MAX_DENSE_ENTRIES: usize = 20_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("empty dataset")]
    Empty,
    #[error("invalid UTF-8 at line {line}")]
    InvalidUtf8 { line: usize },
    #[error("invalid label `{token}` at line {line}, column {column}")]
    InvalidLabel { token: String, line: usize, column: usize },
    #[error("malformed feature `{token}` (expected idx:value) at line {line}, column {column}")]
    MalformedFeature { token: String, line: usize, column: usize },
    #[error("invalid index `{token}` at line {line}, column {column}")]
    InvalidIndex { token: String, line: usize, column: usize },
    #[error("index must be >= 1 at line {line}, column {column}")]
    IndexBelowOne { line: usize, column: usize },
    #[error("index not strictly increasing at line {line}, column {column}")]
    NonIncreasingIndex { line: usize, column: usize },
    #[error("index {index} exceeds the limit {limit} at line {line}, column {column}")]
    IndexTooLarge { index: usize, limit: usize, line: usize, column: usize },
    #[error("invalid value `{token}` at line {line}, column {column}")]
    InvalidValue { token: String, line: usize, column: usize },
    #[error("dataset of {rows} rows x {dim} features exceeds the dense size limit")]
    TooLarge { rows: usize, dim: usize },
    #[error("io error: {0}")]
    Io(String),
}

/// A dense labeled dataset with rows stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    features: Vec<f64>,
    targets: Vec<f64>,
    dim: usize,
    pub source: String,
}

impl RawDataset {
    pub fn new(features: Vec<f64>, targets: Vec<f64>, dim: usize, source: impl Into<String>) -> Result<Self> {
        if targets.is_empty() || dim == 0 {
            return Err(Error::InvalidProblem("dataset needs at least one row and one feature".into()));
        }
        if features.len() != targets.len() * dim {
            return Err(Error::DimensionMismatch { expected: targets.len() * dim, got: features.len() });
        }
        if features.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem("non-finite value in dataset".into()));
        }
        Ok(Self { features, targets, dim, source: source.into() })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }
}

/// Whitespace-separated tokens of `line` with their 1-based byte columns.
fn tokens(line: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut rest = line;
    let mut offset = 0;
    std::iter::from_fn(move || {
        let start = rest.find(|c: char| !c.is_whitespace())?;
        let tail = &rest[start..];
        let len = tail.find(char::is_whitespace).unwrap_or(tail.len());
        let column = offset + start + 1;
        let tok = &tail[..len];
        offset += start + len;
        rest = &tail[len..];
        Some((column, tok))
    })
}

fn parse_finite(tok: &str) -> Option<f64> {
    tok.parse::<f64>().ok().filter(|v| v.is_finite())
}

type SparseRow = (f64, Vec<(usize, f64)>);

fn parse_line(text: &str, line: usize, limit: usize) -> std::result::Result<Option<SparseRow>, ParseError> {
    let body = text.split('#').next().unwrap_or("");
    let mut toks = tokens(body);
    let Some((col, label_tok)) = toks.next() else {
        return Ok(None);
    };
    let label = parse_finite(label_tok)
        .ok_or_else(|| ParseError::InvalidLabel { token: label_tok.into(), line, column: col })?;
    let mut entries = Vec::new();
    let mut last = 0usize;
    for (column, tok) in toks {
        let (idx_tok, val_tok) = tok
            .split_once(':')
            .ok_or_else(|| ParseError::MalformedFeature { token: tok.into(), line, column })?;
        let idx: usize = match idx_tok.parse::<i64>() {
            Ok(i) if i < 1 => return Err(ParseError::IndexBelowOne { line, column }),
            Ok(_) => idx_tok
                .parse()
                .map_err(|_| ParseError::InvalidIndex { token: idx_tok.into(), line, column })?,
            Err(_) if idx_tok.bytes().all(|b| b.is_ascii_digit()) && !idx_tok.is_empty() => {
                return Err(ParseError::IndexTooLarge { index: usize::MAX, limit: MAX_FEATURE_INDEX, line, column })
            }
            Err(_) => return Err(ParseError::InvalidIndex { token: idx_tok.into(), line, column }),
        };
        if idx > limit {
            return Err(ParseError::IndexTooLarge { index: idx, limit, line, column });
        }
        if idx <= last {
            return Err(ParseError::NonIncreasingIndex { line, column });
        }
        last = idx;
        let value = parse_finite(val_tok).ok_or_else(|| ParseError::InvalidValue {
            token: val_tok.into(),
            line,
            column: column + idx_tok.len() + 1,
        })?;
        entries.push((idx, value));
    }
    Ok(Some((label, entries)))
}

/// Parses LIBSVM text. `dim` overrides the inferred dimension (the largest index seen);
/// an index above an explicit `dim` is an error.
pub fn parse_libsvm_with_dim<R: BufRead>(mut reader: R, dim: Option<usize>) -> std::result::Result<RawDataset, ParseError> {
    let mut rows: Vec<SparseRow> = Vec::new();
    let mut buf = Vec::new();
    let mut line = 0;
    let mut max_idx = 0;
    loop {
        buf.clear();
        let read = reader.read_until(b'\n', &mut buf).map_err(|e| ParseError::Io(e.to_string()))?;
        if read == 0 {
            break;
        }
        line += 1;
        let text = std::str::from_utf8(&buf).map_err(|_| ParseError::InvalidUtf8 { line })?;
        if let Some(row) = parse_line(text, line, dim.unwrap_or(MAX_FEATURE_INDEX).min(MAX_FEATURE_INDEX))? {
            if let Some(&(idx, _)) = row.1.last() {
                max_idx = max_idx.max(idx);
            }
            rows.push(row);
        }
    }
    if rows.is_empty() {
        return Err(ParseError::Empty);
    }
    let d = dim.unwrap_or(max_idx).max(1);
    if rows.len().saturating_mul(d) > MAX_DENSE_ENTRIES {
        return Err(ParseError::TooLarge { rows: rows.len(), dim: d });
    }
    let mut features = vec![0.0; rows.len() * d];
    let mut targets = Vec::with_capacity(rows.len());
    for (r, (label, entries)) in rows.into_iter().enumerate() {
        targets.push(label);
        for (idx, v) in entries {
            features[r * d + idx - 1] = v;
        }
    }
    Ok(RawDataset { features, targets, dim: d, source: String::new() })
}

pub fn parse_libsvm<R: BufRead>(reader: R) -> std::result::Result<RawDataset, ParseError> {
    parse_libsvm_with_dim(reader, None)
}

pub fn parse_libsvm_str(text: &str) -> std::result::Result<RawDataset, ParseError> {
    parse_libsvm(text.as_bytes())
}

pub fn load_libsvm(path: &std::path::Path, dim: Option<usize>) -> Result<RawDataset> {
    let file = std::fs::File::open(path)?;
    let mut raw = parse_libsvm_with_dim(std::io::BufReader::new(file), dim)?;
    raw.source = path.display().to_string();
    Ok(raw)
}

/// Serializes to LIBSVM text, omitting zero entries. `f64` display is shortest round-trip.
pub fn to_libsvm(raw: &RawDataset) -> String {
    let mut out = String::new();
    for i in 0..raw.len() {
        out.push_str(&raw.targets[i].to_string());
        for (j, v) in raw.row(i).iter().enumerate() {
            if *v != 0.0 {
                out.push_str(&format!(" {}:{}", j + 1, v));
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionKind {
    IID,
    SortedByTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionScheme {
    pub kind: PartitionKind,
    pub clients: usize,
}

/// Splits `raw` into `scheme.clients` equal blocks. Rows past `M·⌊N/M⌋` (in file order)
/// are dropped first; IID then shuffles, SortedByTarget stably sorts by target.
/// `lambda` defaults to `1/n`.
pub fn partition(raw: &RawDataset, scheme: PartitionScheme, lambda: Option<f64>, seed: u64) -> Result<FederatedProblem> {
    let mm = scheme.clients;
    if mm == 0 || raw.len() < mm {
        return Err(Error::Config(format!("cannot split {} rows across {mm} clients", raw.len())));
    }
    let n = raw.len() / mm;
    let kept = n * mm;
    if kept < raw.len() {
        log::warn!("partition: dropping {} of {} rows to give {mm} clients {n} rows each", raw.len() - kept, raw.len());
    }
    let order: Vec<usize> = match scheme.kind {
        PartitionKind::IID => {
            let mut rng = rng_substream(seed, 0, 0, Purpose::Data);
            sample_permutation(&mut rng, kept).as_slice().to_vec()
        }
        PartitionKind::SortedByTarget => {
            let mut idx: Vec<usize> = (0..kept).collect();
            idx.sort_by(|&a, &b| raw.targets[a].total_cmp(&raw.targets[b]));
            idx
        }
    };
    let clients = order
        .chunks(n)
        .map(|block| {
            let features = block.iter().flat_map(|&i| raw.row(i).iter().copied()).collect();
            let targets = block.iter().map(|&i| raw.targets[i]).collect();
            ClientData::new(features, targets, raw.dim)
        })
        .collect::<Result<Vec<_>>>()?;
    FederatedProblem::new(clients, lambda.unwrap_or(1.0 / n as f64))
}

/// Pooled linear-model dataset: Gaussian rows, planted Gaussian `w`, `y = aᵀw + noise·ξ`.
pub fn generate_raw(seed: u64, rows: usize, dim: usize, noise: f64) -> Result<RawDataset> {
    let mut rng = rng_substream(seed, 0, 0, Purpose::Data);
    let w: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let mut features = Vec::with_capacity(rows * dim);
    let mut targets = Vec::with_capacity(rows);
    for _ in 0..rows {
        let a: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let xi: f64 = rng.sample(StandardNormal);
        targets.push(crate::problem::dot(&a, &w) + noise * xi);
        features.extend(a);
    }
    RawDataset::new(features, targets, dim, format!("synthetic(seed={seed})"))
}

/// Parameters of a synthetic federated problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub clients: usize,
    pub n: usize,
    pub d: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub heterogeneity: f64,
    /// Every client draws rows and noise from the same stream.
    #[serde(default)]
    pub shared_rows: bool,
    /// Defaults to `1/n`.
    #[serde(default)]
    pub lambda: Option<f64>,
}

/// Client `m` has planted model `w̄ + heterogeneity·u_m`, Gaussian rows and `y = aᵀw_m + noise·ξ`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<FederatedProblem> {
    if spec.clients == 0 || spec.n == 0 || spec.d == 0 {
        return Err(Error::Config("synthetic sizes must be >= 1".into()));
    }
    if !(spec.noise >= 0.0 && spec.heterogeneity >= 0.0) {
        return Err(Error::Config("noise and heterogeneity must be >= 0".into()));
    }
    let d = spec.d;
    let gauss = |rng: &mut crate::rng::Stream, k: usize| -> Vec<f64> { (0..k).map(|_| rng.sample(StandardNormal)).collect() };
    let w_bar = gauss(&mut rng_substream(seed, 0, u64::MAX, Purpose::Data), d);
    let clients = (0..spec.clients)
        .map(|m| {
            let u = gauss(&mut rng_substream(seed, 1, m as u64, Purpose::Data), d);
            let w: Vec<f64> = w_bar.iter().zip(&u).map(|(b, u)| b + spec.heterogeneity * u).collect();
            let stream = if spec.shared_rows { 0 } else { m as u64 };
            let mut rows = rng_substream(seed, 2, stream, Purpose::Data);
            let mut features = Vec::with_capacity(spec.n * d);
            let mut targets = Vec::with_capacity(spec.n);
            for _ in 0..spec.n {
                let a = gauss(&mut rows, d);
                let xi: f64 = rows.sample(StandardNormal);
                targets.push(crate::problem::dot(&a, &w) + spec.noise * xi);
                features.extend(a);
            }
            ClientData::new(features, targets, d)
        })
        .collect::<Result<Vec<_>>>()?;
    FederatedProblem::new(clients, spec.lambda.unwrap_or(1.0 / spec.n as f64))
}
