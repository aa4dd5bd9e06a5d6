//! Permutation sampling and the per-client local epoch kernels.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{DenseVector, FiniteSumOracle};

/// Iterates with a coordinate beyond this magnitude are treated as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ShuffleMode {
    /// Random reshuffling: a fresh permutation per client per epoch.
    #[default]
    RR,
    /// Shuffle once: each client's permutation is drawn before epoch 0 and reused.
    SO,
}

/// A permutation of the component indices, stored 0-based and displayed 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &i in &order {
            if i >= order.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidProblem(format!("{order:?} is not a permutation")));
            }
        }
        Ok(Self(order))
    }

    /// Builds a permutation from 1-based indices.
    pub fn from_one_based(order: &[usize]) -> Result<Self> {
        Self::new(order.iter().map(|&i| i.wrapping_sub(1)).collect())
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|i| i + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, i) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", i + 1)?;
        }
        write!(f, ")")
    }
}

/// Uniform permutation of `0..n` by Fisher–Yates.
pub fn sample_permutation<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Permutation {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    Permutation(order)
}

fn check_finite(x: &[f64], step: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite() && v.abs() <= DIVERGENCE_THRESHOLD) {
        Ok(())
    } else {
        Err(Error::Divergence { step })
    }
}

/// `n` sequential steps `x ← x − γ∇f_{m,π_i}(x)` in permutation order.
///
/// A diverged iterate aborts with the 0-based local step that produced it.
pub fn local_epoch_plain<P: FiniteSumOracle + ?Sized>(
    problem: &P,
    m: usize,
    x0: &DenseVector,
    perm: &Permutation,
    gamma: f64,
) -> Result<DenseVector> {
    let mut x = x0.clone();
    let mut g = vec![0.0; x.len()];
    for (step, &i) in perm.as_slice().iter().enumerate() {
        problem.component_grad_into(m, i, x.as_slice(), &mut g);
        for (xj, gj) in x.iter_mut().zip(&g) {
            *xj -= gamma * gj;
        }
        check_finite(x.as_slice(), step)?;
    }
    Ok(x)
}

/// Component gradients of one client at a fixed anchor `y`, with their sum `∇F_m(y)`.
#[derive(Debug, Clone)]
pub struct AnchorGradients {
    grads: Vec<DenseVector>,
    full: DenseVector,
}

impl AnchorGradients {
    pub fn new<P: FiniteSumOracle + ?Sized>(problem: &P, m: usize, anchor: &DenseVector) -> Self {
        let d = anchor.len();
        let mut full = DenseVector::zeros(d);
        let grads: Vec<DenseVector> = (0..problem.components())
            .map(|i| {
                let mut g = DenseVector::zeros(d);
                problem.component_grad_into(m, i, anchor.as_slice(), g.as_mut_slice());
                full += &g;
                g
            })
            .collect();
        Self { grads, full }
    }

    /// `∇F_m(y)`.
    pub fn full(&self) -> &DenseVector {
        &self.full
    }

    pub fn component(&self, i: usize) -> &DenseVector {
        &self.grads[i]
    }

    /// Linear perturbation `a_i = −∇f_{m,i}(y) + (1/n)∇F_m(y)`; these sum to zero.
    pub fn perturbation(&self, i: usize) -> DenseVector {
        &self.full / self.grads.len() as f64 - &self.grads[i]
    }

    /// Estimator `∇f_{m,i}(x) − ∇f_{m,i}(y) + (1/n)∇F_m(y)`.
    pub fn estimator<P: FiniteSumOracle + ?Sized>(&self, problem: &P, m: usize, i: usize, x: &DenseVector) -> DenseVector {
        let mut g = DenseVector::zeros(x.len());
        problem.component_grad_into(m, i, x.as_slice(), g.as_mut_slice());
        self.add_correction(i, g.as_mut_slice());
        g
    }

    #[inline]
    fn add_correction(&self, i: usize, g: &mut [f64]) {
        let inv_n = 1.0 / self.grads.len() as f64;
        for ((gj, aj), fj) in g.iter_mut().zip(self.grads[i].iter()).zip(self.full.iter()) {
            *gj = *gj - aj + inv_n * fj;
        }
    }
}

/// Variance-reduced epoch: `n` steps `x ← x − γ·g(x, y)` against the anchor `y`.
/// `∇F_m(y)` and the anchor component gradients are evaluated once per epoch.
pub fn local_epoch_vr<P: FiniteSumOracle + ?Sized>(
    problem: &P,
    m: usize,
    x0: &DenseVector,
    anchor: &DenseVector,
    perm: &Permutation,
    gamma: f64,
) -> Result<DenseVector> {
    let anchor_grads = AnchorGradients::new(problem, m, anchor);
    let mut x = x0.clone();
    let mut g = vec![0.0; x.len()];
    for (step, &i) in perm.as_slice().iter().enumerate() {
        problem.component_grad_into(m, i, x.as_slice(), &mut g);
        anchor_grads.add_correction(i, &mut g);
        for (xj, gj) in x.iter_mut().zip(&g) {
            *xj -= gamma * gj;
        }
        check_finite(x.as_slice(), step)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::problem::{ClientData, FederatedProblem};
    use crate::rng::{rng_substream, Purpose};
    use approx::assert_relative_eq;
    use itertools::Itertools;
    use std::collections::HashMap;

    fn v(xs: &[f64]) -> DenseVector {
        DenseVector::from_column_slice(xs)
    }

    #[test]
    fn single_element_permutation() {
        let mut rng = rng_substream(0, 0, 0, Purpose::Permutation);
        assert_eq!(sample_permutation(&mut rng, 1).one_based(), vec![1]);
    }

    #[test]
    fn permutation_validation_and_display() {
        assert!(Permutation::new(vec![0, 0]).is_err());
        assert!(Permutation::from_one_based(&[0, 1]).is_err());
        let p = Permutation::from_one_based(&[2, 3, 1]).unwrap();
        assert_eq!(p.as_slice(), &[1, 2, 0]);
        assert_eq!(p.to_string(), "(2,3,1)");
    }

    #[test]
    fn permutations_of_three_are_uniform() {
        let mut rng = rng_substream(17, 0, 0, Purpose::Permutation);
        let draws = 60_000;
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for _ in 0..draws {
            *counts.entry(sample_permutation(&mut rng, 3).as_slice().to_vec()).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        let p = 1.0 / 6.0;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        for (perm, c) in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - p).abs() < 4.0 * se, "{perm:?}: {freq}");
        }
    }

    #[test]
    fn seeded_permutation_repeats() {
        let a = sample_permutation(&mut rng_substream(3, 1, 2, Purpose::Permutation), 12);
        let b = sample_permutation(&mut rng_substream(3, 1, 2, Purpose::Permutation), 12);
        assert_eq!(a, b);
        let mut sorted = a.as_slice().to_vec();
        sorted.sort();
        assert_eq!(sorted, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn p0_plain_epoch_two_steps() {
        let p = fixtures::p0();
        let perm = Permutation::identity(2);
        let x = local_epoch_plain(&p, 0, &v(&[0.0, 0.0]), &perm, 0.1).unwrap();
        assert_relative_eq!(x, v(&[0.09, 0.1]), epsilon = 1e-16);
    }

    #[test]
    fn plain_epoch_fixed_point_at_shared_optimum() {
        // one component per client: the component minimizer is a fixed point
        let c = ClientData::from_rows(&[vec![2.0, -1.0]], vec![1.5]).unwrap();
        let p = FederatedProblem::new(vec![c], 0.3).unwrap();
        let xs = p.exact_solution().unwrap();
        let x = local_epoch_plain(&p, 0, &xs, &Permutation::identity(1), 0.1).unwrap();
        assert_relative_eq!(x, xs, epsilon = 1e-15);
    }

    #[test]
    fn single_step_epoch_is_one_gradient_step() {
        let c = ClientData::from_rows(&[vec![2.0, -1.0]], vec![1.5]).unwrap();
        let p = FederatedProblem::new(vec![c], 0.3).unwrap();
        let x0 = v(&[0.4, -0.2]);
        let got = local_epoch_plain(&p, 0, &x0, &Permutation::identity(1), 0.05).unwrap();
        let want = &x0 - 0.05 * p.component_grad(0, 0, &x0).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn divergence_reports_step() {
        let p = fixtures::p1();
        let x0 = DenseVector::from_element(p.dim(), 1e99);
        let err = local_epoch_plain(&p, 0, &x0, &Permutation::identity(p.n()), 1e4).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 0 }));
    }

    #[test]
    fn vr_first_estimator_is_scaled_full_gradient() {
        let p = fixtures::p1();
        let y = DenseVector::from_fn(p.dim(), |j, _| 0.2 * j as f64 - 0.5);
        let ag = AnchorGradients::new(&p, 2, &y);
        let g = ag.estimator(&p, 2, 5, &y);
        assert_relative_eq!(g, ag.full() / p.n() as f64, epsilon = 1e-12);
        assert_relative_eq!(ag.full(), &p.local_full_grad(2, &y).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn perturbations_sum_to_zero() {
        let p = fixtures::p1();
        let y = DenseVector::from_fn(p.dim(), |j, _| (j as f64).sin());
        let ag = AnchorGradients::new(&p, 1, &y);
        let sum = (0..p.n()).fold(DenseVector::zeros(p.dim()), |acc, i| acc + ag.perturbation(i));
        assert!(sum.norm() < 1e-12 * (1.0 + ag.full().norm()));
    }

    #[test]
    fn estimator_telescopes_at_anchor() {
        let p = fixtures::p1();
        let y = DenseVector::from_fn(p.dim(), |j, _| 1.0 - 0.1 * j as f64);
        let ag = AnchorGradients::new(&p, 0, &y);
        let sum = (0..p.n()).fold(DenseVector::zeros(p.dim()), |acc, i| acc + ag.estimator(&p, 0, i, &y));
        assert_relative_eq!(sum, ag.full().clone(), epsilon = 1e-11);
    }

    #[test]
    fn p0_vr_first_step() {
        let p = fixtures::p0();
        let zero = v(&[0.0, 0.0]);
        let ag = AnchorGradients::new(&p, 0, &zero);
        assert_eq!(ag.estimator(&p, 0, 0, &zero), v(&[-0.5, -0.5]));
        // first of two steps, taken by hand through the estimator
        let x1 = &zero - 0.1 * ag.estimator(&p, 0, 0, &zero);
        assert_relative_eq!(x1, v(&[0.05, 0.05]), epsilon = 1e-17);
        // the full epoch continues from x1 with the second component
        let full = local_epoch_vr(&p, 0, &zero, &zero, &Permutation::identity(2), 0.1).unwrap();
        let x2 = &x1 - 0.1 * ag.estimator(&p, 0, 1, &x1);
        assert_relative_eq!(full, x2, epsilon = 1e-16);
    }

    #[test]
    fn epochs_are_deterministic() {
        let p = fixtures::p1();
        let x0 = DenseVector::from_element(p.dim(), 0.3);
        let perm = sample_permutation(&mut rng_substream(1, 2, 3, Purpose::Permutation), p.n());
        let a = local_epoch_plain(&p, 4, &x0, &perm, 0.01).unwrap();
        let b = local_epoch_plain(&p, 4, &x0, &perm, 0.01).unwrap();
        assert_eq!(a, b);
        let c = local_epoch_vr(&p, 4, &x0, &a, &perm, 0.01).unwrap();
        let d = local_epoch_vr(&p, 4, &x0, &a, &perm, 0.01).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn epoch_contraction_over_all_permutations() {
        // E_π‖x^n − x^n_*‖² ≤ (1−γμ)^n‖x0 − x*‖² + 2γ³σ_rad²Σ_j(1−γμ)^j, exhaustively over n!.
        let p = fixtures::p0();
        let s = p.smoothness_constants();
        let xs = p.exact_solution().unwrap();
        let x0 = v(&[2.0, -1.0]);
        for gamma in [0.05, 0.2, 1.0 / s.l] {
            let limit = &xs - gamma * p.local_full_grad(0, &xs).unwrap();
            let perms: Vec<Vec<usize>> = (0..p.n()).permutations(p.n()).collect();
            let mean = perms
                .iter()
                .map(|o| {
                    let x = local_epoch_plain(&p, 0, &x0, &Permutation::new(o.clone()).unwrap(), gamma).unwrap();
                    (x - &limit).norm_squared()
                })
                .sum::<f64>()
                / perms.len() as f64;
            let q = 1.0 - gamma * s.mu;
            let rad = crate::theory::shuffling_radius_exact(&p, gamma).unwrap().unwrap();
            let geo: f64 = (0..p.n()).map(|j| q.powi(j as i32)).sum();
            let bound = q.powi(p.n() as i32) * (&x0 - &xs).norm_squared() + 2.0 * gamma.powi(3) * rad * geo;
            assert!(mean <= bound, "gamma {gamma}: {mean} > {bound}");
        }
    }
}
