//! Configuration-driven experiment runner behind the `fedshuffle` binary.
//!
//! A run reads a JSON [`ExperimentConfig`], builds the problem, executes `repeats` seeds and
//! writes `<prefix>.trace.csv`, `<prefix>.theory.json` and a copy of the config as
//! `<prefix>.config.json`. Relative paths in a config resolve against the config's directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use itertools::iproduct;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{run, Algorithm, InitialPoint, RunConfig, Trace};
use crate::compress::CompressorSpec;
use crate::data::{generate_synthetic, load_libsvm, partition, PartitionKind, PartitionScheme, SyntheticSpec};
use crate::error::Error;
use crate::problem::{DenseVector, FederatedProblem};
use crate::shuffle::ShuffleMode;
use crate::theory::Theory;

pub const TRACE_VERSION_LINE: &str = "# fedshuffle-trace v1, uplink-only bits, 32-bit indices";
pub const TRACE_HEADER: &str = "epoch,seed,cum_bits,sq_dist,f_gap,lyapunov";
pub const MANIFEST_HEADER: &str = "point,algorithm,gamma,k,prefix";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(vs) => vs.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub clients: usize,
    pub n: usize,
    pub d: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub heterogeneity: f64,
    #[serde(default)]
    pub shared_rows: bool,
    /// Seed of the data stream, independent of the run seed.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibsvmSource {
    pub path: PathBuf,
    pub partition: PartitionKind,
    pub clients: usize,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSource {
    Synthetic(SyntheticSource),
    Libsvm(LibsvmSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum X0Spec {
    Named(X0Name),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum X0Name {
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSource,
    /// Overrides the default `λ = 1/n`.
    #[serde(default)]
    pub lambda: Option<f64>,
    pub algorithm: OneOrMany<Algorithm>,
    #[serde(default)]
    pub shuffle: ShuffleMode,
    pub gamma: OneOrMany<f64>,
    /// RandK sparsity; absent means no compression.
    #[serde(default)]
    pub k: Option<OneOrMany<usize>>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub eta: Option<f64>,
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub repeats: usize,
    #[serde(default)]
    pub x0: Option<X0Spec>,
    #[serde(default = "yes")]
    pub parallel: bool,
    pub output: PathBuf,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

/// One point of the (algorithm × γ × k) grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub k: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            HarnessError::Config(format!("at `{path}`: {}", e.into_inner()))
        })
    }

    pub fn load(path: &Path) -> Result<(Self, String), HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok((Self::from_json(&text)?, text))
    }

    /// Grid in `algorithm`, then `gamma`, then `k` order. Empty lists are rejected.
    pub fn grid(&self) -> Result<Vec<GridPoint>, HarnessError> {
        let algorithms = nonempty("algorithm", self.algorithm.values())?;
        let gammas = nonempty("gamma", self.gamma.values())?;
        let ks: Vec<Option<usize>> = match &self.k {
            None => vec![None],
            Some(k) => nonempty("k", k.values())?.into_iter().map(Some).collect(),
        };
        Ok(iproduct!(algorithms, gammas, ks).map(|(algorithm, gamma, k)| GridPoint { algorithm, gamma, k }).collect())
    }

    /// The unique grid point, or a config error naming the first list-valued field.
    pub fn single_point(&self) -> Result<GridPoint, HarnessError> {
        let grid = self.grid()?;
        if grid.len() == 1 {
            return Ok(grid[0]);
        }
        let field = [
            ("algorithm", self.algorithm.values().len()),
            ("gamma", self.gamma.values().len()),
            ("k", self.k.as_ref().map_or(1, |k| k.values().len())),
        ]
        .into_iter()
        .find(|(_, len)| *len > 1)
        .map_or("algorithm", |(f, _)| f);
        Err(HarnessError::Config(format!("at `{field}`: list-valued fields require the sweep command")))
    }

    pub fn build_problem(&self, base_dir: &Path) -> Result<FederatedProblem, HarnessError> {
        let problem = match &self.problem {
            ProblemSource::Synthetic(s) => {
                let spec = SyntheticSpec {
                    clients: s.clients,
                    n: s.n,
                    d: s.d,
                    noise: s.noise,
                    heterogeneity: s.heterogeneity,
                    shared_rows: s.shared_rows,
                    lambda: self.lambda,
                };
                generate_synthetic(&spec, s.seed)
            }
            ProblemSource::Libsvm(l) => load_libsvm(&base_dir.join(&l.path), l.dim).and_then(|raw| {
                partition(&raw, PartitionScheme { kind: l.partition, clients: l.clients }, self.lambda, l.seed)
            }),
        };
        problem.map_err(|e| match e {
            Error::Config(msg) | Error::InvalidProblem(msg) => HarnessError::Config(format!("at `problem`: {msg}")),
            other => HarnessError::Runtime(other),
        })
    }

    pub fn run_config(&self, problem: &FederatedProblem, point: GridPoint, seed: u64) -> Result<RunConfig, HarnessError> {
        let compressor = match point.k {
            None => CompressorSpec::identity(problem.dim()),
            Some(k) => CompressorSpec::rand_k(k, problem.dim()).map_err(|e| HarnessError::Config(format!("at `k`: {e}")))?,
        };
        let mut cfg = RunConfig::new(point.algorithm, compressor, point.gamma, self.epochs)
            .with_shuffle(self.shuffle)
            .with_seed(seed)
            .with_parallel(self.parallel);
        if let Some(a) = self.alpha {
            cfg = cfg.with_alpha(a);
        }
        if let Some(e) = self.eta {
            cfg = cfg.with_eta(e);
        }
        if let Some(X0Spec::Vector(v)) = &self.x0 {
            cfg.x0 = InitialPoint::Vector(DenseVector::from_column_slice(v));
        }
        cfg.validate(problem).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

fn nonempty<T>(field: &str, values: Vec<T>) -> Result<Vec<T>, HarnessError> {
    if values.is_empty() {
        Err(HarnessError::Config(format!("at `{field}`: empty list")))
    } else {
        Ok(values)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error {0}")]
    Config(String),
    #[error("run diverged ({reason}); partial trace written to {}", trace.display())]
    Divergence { reason: String, trace: PathBuf },
    #[error(transparent)]
    Runtime(#[from] Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Divergence { .. } => 3,
            HarnessError::Runtime(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CliOptions {
    pub seed: Option<u64>,
    pub quiet: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub prefixes: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

/// Conditions that apply to each method's guarantee.
fn relevant_theorems(algorithm: Algorithm) -> &'static [&'static str] {
    match algorithm {
        Algorithm::FedCRR | Algorithm::FedRR => &["Theorem 2"],
        Algorithm::FedCrrVr => &["Theorem 3"],
        Algorithm::FedCrrVr2 => &["Theorem 4", "Lemma 4"],
    }
}

fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::from)?;
    }
    fs::write(path, contents).map_err(|e| Error::from(e).into())
}

/// CSV body rows for one trace: 17 significant digits, empty `lyapunov` when absent.
pub fn trace_rows(trace: &Trace, out: &mut String) {
    for r in &trace.records {
        let lyap = r.lyapunov.map(|v| format!("{v:.16e}")).unwrap_or_default();
        writeln!(out, "{},{},{},{:.16e},{:.16e},{}", r.t, trace.config.seed, r.cum_bits, r.sq_dist, r.f_gap, lyap)
            .expect("writing to a String");
    }
}

struct PointResult {
    warnings: Vec<String>,
    divergence: Option<String>,
}

fn execute_point(
    cfg: &ExperimentConfig,
    raw_config: &str,
    problem: &FederatedProblem,
    point: GridPoint,
    base_seed: u64,
    prefix: &Path,
) -> Result<PointResult, HarnessError> {
    let run_configs = (0..cfg.repeats as u64)
        .map(|r| cfg.run_config(problem, point, base_seed.wrapping_add(r)))
        .collect::<Result<Vec<_>, _>>()?;
    let warnings = point_warnings(problem, &run_configs[0])?;
    let traces = run_configs.par_iter().map(|rc| run(problem, rc)).collect::<Result<Vec<_>, _>>()?;

    let mut csv = format!("{TRACE_VERSION_LINE}\n{TRACE_HEADER}\n");
    for trace in &traces {
        trace_rows(trace, &mut csv);
    }
    write_file(&suffixed(prefix, ".trace.csv"), &csv)?;
    write_theory(problem, &run_configs[0], prefix)?;
    write_file(&suffixed(prefix, ".config.json"), raw_config)?;
    let divergence = traces
        .iter()
        .find_map(|t| t.terminated_early.as_ref().map(|r| format!("seed {}: {r}", t.config.seed)));
    Ok(PointResult { warnings, divergence })
}

fn point_warnings(problem: &FederatedProblem, rc: &RunConfig) -> Result<Vec<String>, HarnessError> {
    let theory = Theory::new(problem)?;
    let validity = theory.validate_parameters(&rc.method_params());
    let theorems = relevant_theorems(rc.algorithm);
    Ok(validity
        .violations()
        .filter(|c| theorems.contains(&c.theorem.as_str()))
        .map(|c| format!("warning [{} gamma={}]: {}", rc.algorithm, rc.gamma, c.warning()))
        .collect())
}

fn write_theory(problem: &FederatedProblem, rc: &RunConfig, prefix: &Path) -> Result<PathBuf, HarnessError> {
    let report = Theory::new(problem)?.report(&rc.method_params());
    let path = suffixed(prefix, ".theory.json");
    let mut json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    json.push('\n');
    write_file(&path, &json)?;
    Ok(path)
}

fn base_dir(config_path: &Path) -> PathBuf {
    config_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn emit(warnings: &[String], opts: CliOptions) {
    if !opts.quiet {
        for w in warnings {
            eprintln!("{w}");
        }
    }
}

/// Executes a single-point config.
pub fn cli_run(config_path: &Path, opts: CliOptions) -> Result<RunOutcome, HarnessError> {
    let (cfg, raw) = ExperimentConfig::load(config_path)?;
    check_repeats(&cfg)?;
    let point = cfg.single_point()?;
    let dir = base_dir(config_path);
    let problem = cfg.build_problem(&dir)?;
    let prefix = dir.join(&cfg.output);
    let result = execute_point(&cfg, &raw, &problem, point, opts.seed.unwrap_or(cfg.seed), &prefix)?;
    emit(&result.warnings, opts);
    if let Some(reason) = result.divergence {
        return Err(HarnessError::Divergence { reason, trace: suffixed(&prefix, ".trace.csv") });
    }
    Ok(RunOutcome { prefixes: vec![prefix], warnings: result.warnings })
}

/// Executes the Cartesian grid and writes `<output>.manifest.csv` once at the end.
pub fn cli_sweep(config_path: &Path, opts: CliOptions) -> Result<RunOutcome, HarnessError> {
    let (cfg, raw) = ExperimentConfig::load(config_path)?;
    check_repeats(&cfg)?;
    let grid = cfg.grid()?;
    let dir = base_dir(config_path);
    let problem = cfg.build_problem(&dir)?;
    let output = dir.join(&cfg.output);
    let seed = opts.seed.unwrap_or(cfg.seed);

    let mut outcome = RunOutcome::default();
    let mut manifest = format!("{MANIFEST_HEADER}\n");
    let mut divergence = None;
    for (idx, point) in grid.iter().enumerate() {
        let prefix = suffixed(&output, &format!(".p{idx:03}"));
        let result = execute_point(&cfg, &raw, &problem, *point, seed, &prefix)?;
        emit(&result.warnings, opts);
        outcome.warnings.extend(result.warnings);
        if divergence.is_none() {
            divergence = result.divergence.map(|r| (r, suffixed(&prefix, ".trace.csv")));
        }
        let k = point.k.map(|k| k.to_string()).unwrap_or_default();
        writeln!(manifest, "{idx},{},{},{k},{}", point.algorithm, point.gamma, prefix.display()).expect("writing to a String");
        outcome.prefixes.push(prefix);
    }
    write_file(&suffixed(&output, ".manifest.csv"), &manifest)?;
    if let Some((reason, trace)) = divergence {
        return Err(HarnessError::Divergence { reason, trace });
    }
    Ok(outcome)
}

/// Writes only `<prefix>.theory.json`.
pub fn cli_theory(config_path: &Path, opts: CliOptions) -> Result<PathBuf, HarnessError> {
    let (cfg, _) = ExperimentConfig::load(config_path)?;
    let point = cfg.single_point()?;
    let dir = base_dir(config_path);
    let problem = cfg.build_problem(&dir)?;
    let rc = cfg.run_config(&problem, point, opts.seed.unwrap_or(cfg.seed))?;
    emit(&point_warnings(&problem, &rc)?, opts);
    write_theory(&problem, &rc, &dir.join(&cfg.output))
}

/// Parses a LIBSVM file and summarizes it.
pub fn parse_check(path: &Path) -> Result<String, HarnessError> {
    let raw = load_libsvm(path, None)?;
    Ok(format!("{}: {} rows, {} features", path.display(), raw.len(), raw.dim()))
}

fn check_repeats(cfg: &ExperimentConfig) -> Result<(), HarnessError> {
    if cfg.repeats == 0 {
        return Err(HarnessError::Config("at `repeats`: must be positive".into()));
    }
    Ok(())
}
