//! Federated outer loops: compressed random reshuffling, its shifted variance-reduced
//! variant, and the double variance-reduced variant with an SVRG-style local estimator.
//!
//! Every random draw comes from [`rng_substream`] keyed by `(seed, epoch, client, purpose)`
//! and client results are summed in client-index order, so serial and parallel runs agree
//! bitwise.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compress::CompressorSpec;
use crate::error::{Error, Result};
use crate::problem::{DenseVector, FederatedProblem};
use crate::rng::{rng_substream, Purpose};
use crate::shuffle::{local_epoch_plain, local_epoch_vr, sample_permutation, Permutation, ShuffleMode, DIVERGENCE_THRESHOLD};
use crate::theory::{lyapunov, MethodParams, ShuffledLimit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    FedCRR,
    #[serde(rename = "FedCRR_VR")]
    FedCrrVr,
    #[serde(rename = "FedCRR_VR2")]
    FedCrrVr2,
    FedRR,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::FedCRR, Algorithm::FedCrrVr, Algorithm::FedCrrVr2, Algorithm::FedRR];

    /// Whether the method keeps per-client shifts (and so records a Lyapunov value).
    pub fn uses_shifts(self) -> bool {
        matches!(self, Algorithm::FedCrrVr | Algorithm::FedCrrVr2)
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedCRR => "FedCRR",
            Algorithm::FedCrrVr => "FedCRR_VR",
            Algorithm::FedCrrVr2 => "FedCRR_VR2",
            Algorithm::FedRR => "FedRR",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialPoint {
    Zeros,
    Vector(DenseVector),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub shuffle: ShuffleMode,
    pub gamma: f64,
    /// Shift learning rate (shifted variants only).
    pub alpha: f64,
    /// Server mixing rate (shifted variants only).
    pub eta: f64,
    pub epochs: usize,
    pub compressor: CompressorSpec,
    pub seed: u64,
    pub x0: InitialPoint,
    /// Run clients on the rayon pool. Results do not depend on this flag.
    pub parallel: bool,
    pub record_permutations: bool,
    pub record_iterates: bool,
}

impl RunConfig {
    /// Defaults: RR, `α = 1/(ω+1)`, `η = 1`, seed 0, `x0 = 0`, parallel clients.
    /// `FedRR` always runs with the identity compressor.
    pub fn new(algorithm: Algorithm, compressor: CompressorSpec, gamma: f64, epochs: usize) -> Self {
        let compressor = match algorithm {
            Algorithm::FedRR => CompressorSpec::identity(compressor.dim()),
            _ => compressor,
        };
        Self {
            algorithm,
            shuffle: ShuffleMode::RR,
            gamma,
            alpha: 1.0 / (compressor.omega() + 1.0),
            eta: 1.0,
            epochs,
            compressor,
            seed: 0,
            x0: InitialPoint::Zeros,
            parallel: true,
            record_permutations: false,
            record_iterates: false,
        }
    }

    pub fn with_shuffle(mut self, shuffle: ShuffleMode) -> Self {
        self.shuffle = shuffle;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_x0(mut self, x0: DenseVector) -> Self {
        self.x0 = InitialPoint::Vector(x0);
        self
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn recording_permutations(mut self) -> Self {
        self.record_permutations = true;
        self
    }

    pub fn recording_iterates(mut self) -> Self {
        self.record_iterates = true;
        self
    }

    pub fn method_params(&self) -> MethodParams {
        MethodParams { gamma: self.gamma, alpha: self.alpha, eta: self.eta, omega: self.compressor.omega() }
    }

    pub fn validate(&self, problem: &FederatedProblem) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive and finite, got {}", self.gamma));
        }
        if self.algorithm.uses_shifts() {
            if !(self.alpha > 0.0 && self.alpha <= 1.0) {
                return bad(format!("alpha must lie in (0, 1], got {}", self.alpha));
            }
            if !(self.eta > 0.0 && self.eta <= 1.0) {
                return bad(format!("eta must lie in (0, 1], got {}", self.eta));
            }
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.compressor.dim() != problem.dim() {
            return Err(Error::DimensionMismatch { expected: problem.dim(), got: self.compressor.dim() });
        }
        if self.algorithm == Algorithm::FedRR && self.compressor.omega() != 0.0 {
            return bad("FedRR runs without compression".into());
        }
        if let InitialPoint::Vector(x0) = &self.x0 {
            if x0.len() != problem.dim() {
                return Err(Error::DimensionMismatch { expected: problem.dim(), got: x0.len() });
            }
            if x0.iter().any(|v| !v.is_finite()) {
                return bad("x0 must be finite".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub t: usize,
    pub sq_dist: f64,
    pub f_gap: f64,
    pub lyapunov: Option<f64>,
    pub cum_bits: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub config: RunConfig,
    /// `records[t]` describes `x_t`; `epochs + 1` entries unless the run stopped early.
    pub records: Vec<EpochRecord>,
    pub terminated_early: Option<String>,
    /// Per epoch, per client, when `record_permutations` is set.
    pub permutations: Option<Vec<Vec<Permutation>>>,
    /// `x_t` for every recorded epoch, when `record_iterates` is set.
    pub iterates: Option<Vec<DenseVector>>,
    pub final_x: DenseVector,
    /// Client shifts after the last completed epoch (shifted variants only).
    pub final_shifts: Option<Vec<DenseVector>>,
}

impl Trace {
    pub fn last(&self) -> &EpochRecord {
        self.records.last().expect("a trace always holds the initial record")
    }
}

pub fn run(problem: &FederatedProblem, config: &RunConfig) -> Result<Trace> {
    config.validate(problem)?;
    simulate(problem, config)
}

/// Compressed random reshuffling (also serves `FedRR`).
pub fn run_fedcrr(problem: &FederatedProblem, config: &RunConfig) -> Result<Trace> {
    expect_algorithm(config, &[Algorithm::FedCRR, Algorithm::FedRR])?;
    run(problem, config)
}

/// Shifted compression with server mixing.
pub fn run_fedcrr_vr(problem: &FederatedProblem, config: &RunConfig) -> Result<Trace> {
    expect_algorithm(config, &[Algorithm::FedCrrVr])?;
    run(problem, config)
}

/// Shifted compression with the variance-reduced local estimator anchored at `x_t`.
pub fn run_fedcrr_vr2(problem: &FederatedProblem, config: &RunConfig) -> Result<Trace> {
    expect_algorithm(config, &[Algorithm::FedCrrVr2])?;
    run(problem, config)
}

fn expect_algorithm(config: &RunConfig, allowed: &[Algorithm]) -> Result<()> {
    if allowed.contains(&config.algorithm) {
        Ok(())
    } else {
        Err(Error::Config(format!("{} cannot be run by this entry point", config.algorithm)))
    }
}

struct ClientOutput {
    contribution: DenseVector,
    new_shift: Option<DenseVector>,
}

fn client_round(
    problem: &FederatedProblem,
    config: &RunConfig,
    m: usize,
    x: &DenseVector,
    shift: Option<&DenseVector>,
    perm: &Permutation,
    t: usize,
) -> Result<ClientOutput> {
    let local = match config.algorithm {
        Algorithm::FedCrrVr2 => local_epoch_vr(problem, m, x, x, perm, config.gamma)?,
        _ => local_epoch_plain(problem, m, x, perm, config.gamma)?,
    };
    let mut rng = rng_substream(config.seed, t as u64, m as u64, Purpose::Compress);
    match shift {
        None => Ok(ClientOutput { contribution: config.compressor.compress(&local, &mut rng), new_shift: None }),
        Some(h) => {
            let msg = config.compressor.compress_shifted(&local, h, &mut rng);
            let new_shift = h + config.alpha * &msg.q;
            Ok(ClientOutput { contribution: msg.decoded, new_shift: Some(new_shift) })
        }
    }
}

fn simulate(problem: &FederatedProblem, config: &RunConfig) -> Result<Trace> {
    let mm = problem.num_clients();
    let d = problem.dim();
    let n = problem.n();
    let x_star = problem.exact_solution()?;
    let limits = ShuffledLimit::endpoints(problem, &x_star, config.gamma);
    let omega = config.compressor.omega();
    let bits_per_epoch = mm as u64 * config.compressor.uplink_bits();

    let mut x = match &config.x0 {
        InitialPoint::Zeros => DenseVector::zeros(d),
        InitialPoint::Vector(v) => v.clone(),
    };
    let mut shifts: Option<Vec<DenseVector>> = config.algorithm.uses_shifts().then(|| vec![DenseVector::zeros(d); mm]);
    let fixed_perms: Option<Vec<Permutation>> = (config.shuffle == ShuffleMode::SO).then(|| {
        (0..mm)
            .map(|m| sample_permutation(&mut rng_substream(config.seed, 0, m as u64, Purpose::Permutation), n))
            .collect()
    });

    let record = |t: usize, x: &DenseVector, shifts: &Option<Vec<DenseVector>>| -> Result<EpochRecord> {
        Ok(EpochRecord {
            t,
            sq_dist: (x - &x_star).norm_squared(),
            f_gap: problem.objective_gap(x, &x_star)?,
            lyapunov: shifts.as_ref().map(|h| lyapunov(x, h, &limits, config.alpha, config.eta, omega)),
            cum_bits: t as u64 * bits_per_epoch,
        })
    };

    let mut records = Vec::with_capacity(config.epochs + 1);
    records.push(record(0, &x, &shifts)?);
    let mut permutations = config.record_permutations.then(Vec::new);
    let mut iterates = config.record_iterates.then(|| vec![x.clone()]);
    let mut terminated_early = None;

    for t in 0..config.epochs {
        let perms: Vec<Permutation> = match &fixed_perms {
            Some(p) => p.clone(),
            None => (0..mm)
                .map(|m| sample_permutation(&mut rng_substream(config.seed, t as u64, m as u64, Purpose::Permutation), n))
                .collect(),
        };
        let work = |m: usize| client_round(problem, config, m, &x, shifts.as_ref().map(|h| &h[m]), &perms[m], t);
        let outputs: Vec<Result<ClientOutput>> = if config.parallel {
            (0..mm).into_par_iter().map(work).collect()
        } else {
            (0..mm).map(work).collect()
        };

        let mut sum = DenseVector::zeros(d);
        let mut new_shifts = Vec::with_capacity(mm);
        let mut failure = None;
        for (m, out) in outputs.into_iter().enumerate() {
            match out {
                Ok(o) => {
                    sum += &o.contribution;
                    new_shifts.extend(o.new_shift);
                }
                Err(Error::Divergence { step }) => {
                    failure = Some(format!("divergence in epoch {t}, client {m}, local step {step}"));
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if failure.is_none() {
            let avg = sum / mm as f64;
            x = if config.algorithm.uses_shifts() { (1.0 - config.eta) * &x + config.eta * avg } else { avg };
            if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_THRESHOLD) {
                failure = Some(format!("divergence in server aggregation at epoch {t}"));
            }
        }
        if let Some(reason) = failure {
            log::warn!("{reason}");
            terminated_early = Some(reason);
            break;
        }
        if let Some(h) = shifts.as_mut() {
            *h = new_shifts;
        }
        if let Some(p) = permutations.as_mut() {
            p.push(perms);
        }
        if let Some(it) = iterates.as_mut() {
            it.push(x.clone());
        }
        records.push(record(t + 1, &x, &shifts)?);
    }

    Ok(Trace {
        config: config.clone(),
        records,
        terminated_early,
        permutations,
        iterates,
        final_x: x,
        final_shifts: shifts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_relative_eq;

    fn identity(p: &FederatedProblem) -> CompressorSpec {
        CompressorSpec::identity(p.dim())
    }

    #[test]
    fn p0_first_epoch_with_fixed_order() {
        let p = fixtures::p0();
        // find a seed whose shuffle-once permutation is (1,2)
        let seed = (0..64)
            .find(|&s| {
                let mut rng = rng_substream(s, 0, 0, Purpose::Permutation);
                sample_permutation(&mut rng, 2) == Permutation::identity(2)
            })
            .unwrap();
        let cfg = RunConfig::new(Algorithm::FedCRR, identity(&p), 0.1, 3)
            .with_shuffle(ShuffleMode::SO)
            .with_seed(seed)
            .recording_iterates();
        let trace = run_fedcrr(&p, &cfg).unwrap();
        let x1 = &trace.iterates.unwrap()[1];
        assert_relative_eq!(x1[0], 0.09, epsilon = 1e-15);
        assert_relative_eq!(x1[1], 0.1, epsilon = 1e-15);
    }

    #[test]
    fn fedrr_is_fedcrr_with_identity() {
        let p = fixtures::p1();
        let rand_k = CompressorSpec::rand_k(2, p.dim()).unwrap();
        let rr = run(&p, &RunConfig::new(Algorithm::FedRR, rand_k, 0.01, 20).with_seed(4)).unwrap();
        let crr = run(&p, &RunConfig::new(Algorithm::FedCRR, identity(&p), 0.01, 20).with_seed(4)).unwrap();
        assert_eq!(rr.records, crr.records);
        assert_eq!(rr.config.compressor.omega(), 0.0);
    }

    #[test]
    fn shifted_method_collapses_without_compression() {
        let p = fixtures::p1();
        let a = run(&p, &RunConfig::new(Algorithm::FedCRR, identity(&p), 0.02, 30).with_seed(8)).unwrap();
        let b = run(&p, &RunConfig::new(Algorithm::FedCrrVr, identity(&p), 0.02, 30).with_seed(8).with_alpha(1.0).with_eta(1.0)).unwrap();
        assert_eq!(a.final_x, b.final_x);
        let sq: Vec<f64> = a.records.iter().map(|r| r.sq_dist).collect();
        let sq_b: Vec<f64> = b.records.iter().map(|r| r.sq_dist).collect();
        assert_eq!(sq, sq_b);
    }

    #[test]
    fn first_shift_update_is_half_the_local_iterate() {
        let p = fixtures::p0();
        let cfg = RunConfig::new(Algorithm::FedCrrVr, identity(&p), 0.1, 1).with_alpha(0.5).recording_permutations();
        let trace = run(&p, &cfg).unwrap();
        let perm = &trace.permutations.unwrap()[0][0];
        let local = local_epoch_plain(&p, 0, &DenseVector::zeros(2), perm, 0.1).unwrap();
        assert_relative_eq!(trace.final_x, local.clone(), epsilon = 1e-15);
        let h1 = &trace.final_shifts.unwrap()[0];
        assert_relative_eq!(*h1, 0.5 * &local, epsilon = 1e-15);
        assert_eq!(trace.records[1].lyapunov, Some(trace.records[1].sq_dist));
    }

    #[test]
    fn bits_accumulate_linearly() {
        let p = fixtures::p1();
        let c = CompressorSpec::rand_k(3, p.dim()).unwrap();
        let trace = run(&p, &RunConfig::new(Algorithm::FedCrrVr, c, 0.01, 7)).unwrap();
        for r in &trace.records {
            assert_eq!(r.cum_bits, r.t as u64 * 10 * 3 * 96);
            assert!(r.sq_dist >= 0.0 && r.lyapunov.is_some());
        }
        assert_eq!(trace.records.len(), 8);
    }

    #[test]
    fn shuffle_once_reuses_permutations() {
        let p = fixtures::p1();
        let c = CompressorSpec::rand_k(2, p.dim()).unwrap();
        let so = run(&p, &RunConfig::new(Algorithm::FedCRR, c, 0.01, 5).with_shuffle(ShuffleMode::SO).recording_permutations()).unwrap();
        let perms = so.permutations.unwrap();
        assert!(perms.iter().all(|epoch| *epoch == perms[0]));
        let rr = run(&p, &RunConfig::new(Algorithm::FedCRR, c, 0.01, 5).recording_permutations()).unwrap();
        let perms = rr.permutations.unwrap();
        assert!(perms.iter().any(|epoch| *epoch != perms[0]));
    }

    #[test]
    fn parallel_and_serial_agree() {
        let p = fixtures::p1();
        let c = CompressorSpec::rand_k(2, p.dim()).unwrap();
        for alg in [Algorithm::FedCRR, Algorithm::FedCrrVr, Algorithm::FedCrrVr2] {
            let cfg = RunConfig::new(alg, c, 0.01, 15).with_seed(3).with_eta(0.5);
            let a = run(&p, &cfg).unwrap();
            let b = run(&p, &cfg.clone().with_parallel(false)).unwrap();
            assert_eq!(a.records, b.records);
            assert_eq!(a.final_x, b.final_x);
        }
    }

    #[test]
    fn vr2_single_client_converges_exactly() {
        let p = fixtures::small_heterogeneous(1, 10, 3, 2);
        let l = p.smoothness_constants().l;
        let cfg = RunConfig::new(Algorithm::FedCrrVr2, identity(&p), 0.2 / l, 1500).with_x0(DenseVector::from_element(3, 1.0));
        let trace = run(&p, &cfg).unwrap();
        assert!(trace.last().sq_dist < 1e-20, "{}", trace.last().sq_dist);
    }

    #[test]
    fn vr2_optimum_is_a_fixed_point_for_homogeneous_data() {
        let p = fixtures::homogeneous(3, 6, 2, 0.5, 1);
        let x_star = p.exact_solution().unwrap();
        let cfg = RunConfig::new(Algorithm::FedCrrVr2, identity(&p), 0.05, 1).with_x0(x_star.clone());
        let trace = run(&p, &cfg).unwrap();
        assert!((trace.final_x - x_star).norm() < 1e-14);
    }

    #[test]
    fn divergence_truncates_the_trace() {
        let p = fixtures::p1();
        let cfg = RunConfig::new(Algorithm::FedCRR, identity(&p), 50.0, 100);
        let trace = run(&p, &cfg).unwrap();
        assert!(trace.terminated_early.is_some());
        assert!(trace.records.len() < 101);
        assert!(trace.records.iter().all(|r| r.sq_dist.is_finite()));
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let p = fixtures::p0();
        let c = identity(&p);
        assert!(run(&p, &RunConfig::new(Algorithm::FedCRR, c, 0.0, 1)).is_err());
        assert!(run(&p, &RunConfig::new(Algorithm::FedCrrVr, c, 0.1, 1).with_alpha(1.5)).is_err());
        assert!(run(&p, &RunConfig::new(Algorithm::FedCrrVr, c, 0.1, 1).with_eta(0.0)).is_err());
        assert!(run(&p, &RunConfig::new(Algorithm::FedCRR, c, 0.1, 0)).is_err());
        assert!(run(&p, &RunConfig::new(Algorithm::FedCRR, CompressorSpec::identity(3), 0.1, 1)).is_err());
        assert!(run_fedcrr_vr(&p, &RunConfig::new(Algorithm::FedCRR, c, 0.1, 1)).is_err());
    }
}
