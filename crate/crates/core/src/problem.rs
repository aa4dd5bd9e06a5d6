//! Federated ridge-regression objective.
//!
//! The objective is `f(x) = (1/M) Σ_m g_m(x)` with `g_m(x) = (1/n) Σ_i f_{m,i}(x)` and
//! ridge components `f_{m,i}(x) = ½(a_{m,i}ᵀx − y_{m,i})² + (λ/2)‖x‖²`.
//! Client and component indices are 0-based throughout the API.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type DenseVector = DVector<f64>;
pub type DenseMatrix = DMatrix<f64>;

/// Component-gradient access used by the local epoch kernels.
pub trait FiniteSumOracle: Sync {
    fn num_clients(&self) -> usize;
    fn components(&self) -> usize;
    fn dim(&self) -> usize;
    /// Writes `∇f_{m,i}(x)` into `out`. Indices and lengths are the caller's responsibility.
    fn component_grad_into(&self, m: usize, i: usize, x: &[f64], out: &mut [f64]);
}

/// One client's local dataset: `n` rows of features (row-major) and `n` targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    features: Vec<f64>,
    targets: Vec<f64>,
    dim: usize,
}

impl ClientData {
    pub fn new(features: Vec<f64>, targets: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidProblem("feature dimension must be positive".into()));
        }
        if features.len() != targets.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: targets.len() * dim,
                got: features.len(),
            });
        }
        if features.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem("non-finite value in client data".into()));
        }
        Ok(Self { features, targets, dim })
    }

    pub fn from_rows(rows: &[Vec<f64>], targets: Vec<f64>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: bad.len() });
        }
        Self::new(rows.concat(), targets, dim)
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

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }
}

/// How the strong-convexity constant normalizes the smallest Gram eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuNormalization {
    /// `ρ_min(AᵀA)/(M·n) + λ`, the true curvature of `f`.
    #[default]
    TotalRows,
    /// `ρ_min(AᵀA)/n + λ`, dividing by the per-client row count only.
    ClientRows,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConstants {
    /// Component smoothness constant used by every stepsize rule (equals `l_max`).
    pub l: f64,
    pub l_max: f64,
    pub mu: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederatedProblem {
    clients: Vec<ClientData>,
    lambda: f64,
    n: usize,
    d: usize,
}

impl FederatedProblem {
    pub fn new(clients: Vec<ClientData>, lambda: f64) -> Result<Self> {
        let first = clients
            .first()
            .ok_or_else(|| Error::InvalidProblem("at least one client is required".into()))?;
        let (n, d) = (first.len(), first.dim());
        if n == 0 {
            return Err(Error::InvalidProblem("clients must hold at least one row".into()));
        }
        for c in &clients {
            if c.len() != n {
                return Err(Error::InvalidProblem(format!(
                    "clients must hold equal row counts ({} vs {n})",
                    c.len()
                )));
            }
            if c.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, got: c.dim() });
            }
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidProblem(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(Self { clients, lambda, n, d })
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidProblem(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        self.lambda = lambda;
        Ok(self)
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn clients(&self) -> &[ClientData] {
        &self.clients
    }

    pub fn client(&self, m: usize) -> &ClientData {
        &self.clients[m]
    }

    pub fn total_rows(&self) -> usize {
        self.clients.len() * self.n
    }

    fn check_index(&self, m: usize, i: usize) -> Result<()> {
        if m >= self.clients.len() {
            return Err(Error::ClientOutOfRange { index: m, clients: self.clients.len() });
        }
        if i >= self.n {
            return Err(Error::ComponentOutOfRange { index: i, n: self.n });
        }
        Ok(())
    }

    fn check_dim(&self, x: &DenseVector) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: x.len() });
        }
        Ok(())
    }

    #[inline]
    fn residual(&self, m: usize, i: usize, x: &[f64]) -> f64 {
        let c = &self.clients[m];
        dot(c.row(i), x) - c.target(i)
    }

    pub fn component_value(&self, m: usize, i: usize, x: &DenseVector) -> Result<f64> {
        self.check_index(m, i)?;
        self.check_dim(x)?;
        let r = self.residual(m, i, x.as_slice());
        Ok(0.5 * r * r + 0.5 * self.lambda * x.norm_squared())
    }

    /// `∇f_{m,i}(x) = a_{m,i}(a_{m,i}ᵀx − y_{m,i}) + λx`.
    pub fn component_grad(&self, m: usize, i: usize, x: &DenseVector) -> Result<DenseVector> {
        self.check_index(m, i)?;
        self.check_dim(x)?;
        let mut out = DenseVector::zeros(self.d);
        self.component_grad_into(m, i, x.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// `∇F_m(x) = Σ_i ∇f_{m,i}(x)`; a sum over the client's components, not an average.
    pub fn local_full_grad(&self, m: usize, x: &DenseVector) -> Result<DenseVector> {
        self.check_index(m, 0)?;
        self.check_dim(x)?;
        Ok(self.local_full_grad_unchecked(m, x.as_slice()))
    }

    pub(crate) fn local_full_grad_unchecked(&self, m: usize, x: &[f64]) -> DenseVector {
        let c = &self.clients[m];
        let mut out = DenseVector::zeros(self.d);
        for i in 0..self.n {
            let r = self.residual(m, i, x);
            for (o, a) in out.iter_mut().zip(c.row(i)) {
                *o += a * r;
            }
        }
        let reg = self.lambda * self.n as f64;
        for (o, xi) in out.iter_mut().zip(x) {
            *o += reg * xi;
        }
        out
    }

    /// `∇f(x) = (1/(Mn)) Σ_m Σ_i ∇f_{m,i}(x)`.
    pub fn global_grad(&self, x: &DenseVector) -> Result<DenseVector> {
        self.check_dim(x)?;
        let mut out = DenseVector::zeros(self.d);
        for m in 0..self.num_clients() {
            out += self.local_full_grad_unchecked(m, x.as_slice());
        }
        Ok(out / self.total_rows() as f64)
    }

    pub fn objective(&self, x: &DenseVector) -> Result<f64> {
        self.check_dim(x)?;
        let mut sq = 0.0;
        for m in 0..self.num_clients() {
            for i in 0..self.n {
                let r = self.residual(m, i, x.as_slice());
                sq += r * r;
            }
        }
        Ok(0.5 * sq / self.total_rows() as f64 + 0.5 * self.lambda * x.norm_squared())
    }

    /// `f(x) − f(x*)` evaluated as the exact quadratic form `½(x−x*)ᵀ∇²f(x−x*)`, which
    /// avoids the cancellation of subtracting two nearly equal objective values.
    pub fn objective_gap(&self, x: &DenseVector, x_star: &DenseVector) -> Result<f64> {
        self.check_dim(x)?;
        self.check_dim(x_star)?;
        let e = x - x_star;
        let mut sq = 0.0;
        for c in &self.clients {
            for i in 0..self.n {
                let p = dot(c.row(i), e.as_slice());
                sq += p * p;
            }
        }
        Ok(0.5 * sq / self.total_rows() as f64 + 0.5 * self.lambda * e.norm_squared())
    }

    /// Bregman divergence `D_{f_{m,i}}(x, y)` of a ridge component, in closed form.
    pub fn component_bregman(&self, m: usize, i: usize, x: &DenseVector, y: &DenseVector) -> Result<f64> {
        self.check_index(m, i)?;
        self.check_dim(x)?;
        self.check_dim(y)?;
        Ok(self.bregman_of_difference(m, i, (x - y).as_slice()))
    }

    /// `D_{f_{m,i}}(y + δ, y) = ½(aᵀδ)² + (λ/2)‖δ‖²`; independent of `y` for quadratics.
    pub(crate) fn bregman_of_difference(&self, m: usize, i: usize, delta: &[f64]) -> f64 {
        let p = dot(self.clients[m].row(i), delta);
        0.5 * p * p + 0.5 * self.lambda * dot(delta, delta)
    }

    /// Stacked Gram matrix `AᵀA` over all `M·n` rows.
    pub fn gram(&self) -> DenseMatrix {
        let mut g = DenseMatrix::zeros(self.d, self.d);
        for c in &self.clients {
            for i in 0..self.n {
                let a = c.row(i);
                for r in 0..self.d {
                    for s in 0..self.d {
                        g[(r, s)] += a[r] * a[s];
                    }
                }
            }
        }
        g
    }

    fn hessian(&self) -> DenseMatrix {
        let mut h = self.gram() / self.total_rows() as f64;
        for j in 0..self.d {
            h[(j, j)] += self.lambda;
        }
        h
    }

    fn stacked_rhs(&self) -> DenseVector {
        let mut b = DenseVector::zeros(self.d);
        for c in &self.clients {
            for i in 0..self.n {
                let y = c.target(i);
                for (bj, a) in b.iter_mut().zip(c.row(i)) {
                    *bj += a * y;
                }
            }
        }
        b
    }

    /// Closed-form minimizer of `f`: solves `(AᵀA/(Mn) + λI)x = Aᵀy/(Mn)`.
    pub fn exact_solution(&self) -> Result<DenseVector> {
        let h = self.hessian();
        let eig = h.clone().symmetric_eigen();
        let (lo, hi) = eig
            .eigenvalues
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v.abs())));
        if lo.is_nan() || lo <= 1e-13 * hi.max(f64::MIN_POSITIVE) {
            return Err(Error::NotStronglyConvex);
        }
        let chol = h.clone().cholesky().ok_or(Error::NotStronglyConvex)?;
        let b = self.stacked_rhs() / self.total_rows() as f64;
        let mut x = chol.solve(&b);
        // one step of iterative refinement
        let r = &b - &h * &x;
        x += chol.solve(&r);
        Ok(x)
    }

    pub fn smoothness_constants(&self) -> SmoothnessConstants {
        self.smoothness_constants_with(MuNormalization::TotalRows)
    }

    pub fn smoothness_constants_with(&self, norm: MuNormalization) -> SmoothnessConstants {
        let max_row = self
            .clients
            .iter()
            .flat_map(|c| (0..self.n).map(move |i| dot(c.row(i), c.row(i))))
            .fold(0.0f64, f64::max);
        let l_max = max_row + self.lambda;
        let rho_min = self
            .gram()
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b))
            .max(0.0);
        let denom = match norm {
            MuNormalization::TotalRows => self.total_rows(),
            MuNormalization::ClientRows => self.n,
        } as f64;
        let mu = rho_min / denom + self.lambda;
        SmoothnessConstants { l: l_max, l_max, mu, kappa: l_max / mu }
    }
}

impl FiniteSumOracle for FederatedProblem {
    fn num_clients(&self) -> usize {
        self.clients.len()
    }

    fn components(&self) -> usize {
        self.n
    }

    fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    fn component_grad_into(&self, m: usize, i: usize, x: &[f64], out: &mut [f64]) {
        let a = self.clients[m].row(i);
        let r = dot(a, x) - self.clients[m].target(i);
        for ((o, aj), xj) in out.iter_mut().zip(a).zip(x) {
            *o = aj * r + self.lambda * xj;
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DenseVector {
        DenseVector::from_column_slice(xs)
    }

    #[test]
    fn p0_component_grad_at_origin() {
        let p = fixtures::p0();
        let g = p.component_grad(0, 0, &v(&[0.0, 0.0])).unwrap();
        assert_eq!(g, v(&[-1.0, 0.0]));
    }

    #[test]
    fn p0_component_grads_cancel_at_optimum() {
        let p = fixtures::p0();
        let xs = v(&[1.0 / 3.0, 1.0 / 3.0]);
        let s = p.component_grad(0, 0, &xs).unwrap() + p.component_grad(0, 1, &xs).unwrap();
        assert!(s.norm() < 1e-15);
    }

    #[test]
    fn zero_data_zero_lambda_gives_zero_gradient() {
        let c = ClientData::from_rows(&[vec![1.0, 2.0]], vec![0.0]).unwrap();
        let p = FederatedProblem::new(vec![c], 0.0).unwrap();
        assert_eq!(p.component_grad(0, 0, &v(&[0.0, 0.0])).unwrap(), v(&[0.0, 0.0]));
    }

    #[test]
    fn index_and_dimension_errors() {
        let p = fixtures::p0();
        assert!(matches!(
            p.component_grad(1, 0, &v(&[0.0, 0.0])),
            Err(Error::ClientOutOfRange { .. })
        ));
        assert!(matches!(
            p.component_grad(0, 2, &v(&[0.0, 0.0])),
            Err(Error::ComponentOutOfRange { .. })
        ));
        assert!(matches!(
            p.component_grad(0, 0, &v(&[0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(p.global_grad(&v(&[0.0; 3])).is_err());
    }

    #[test]
    fn local_full_grad_is_sum_of_components() {
        let p = fixtures::p1();
        let x = DenseVector::from_fn(p.dim(), |j, _| 0.1 * j as f64 - 0.3);
        let full = p.local_full_grad(3, &x).unwrap();
        let mut sum = DenseVector::zeros(p.dim());
        for i in 0..p.n() {
            sum += p.component_grad(3, i, &x).unwrap();
        }
        assert_relative_eq!(full, sum, epsilon = 1e-12);
    }

    #[test]
    fn p0_local_full_grad_vanishes_at_optimum() {
        let p = fixtures::p0();
        let xs = p.exact_solution().unwrap();
        assert!(p.local_full_grad(0, &xs).unwrap().norm() < 1e-15);
    }

    #[test]
    fn heterogeneous_local_gradients_are_nonzero_at_optimum() {
        let p = fixtures::p1();
        let xs = p.exact_solution().unwrap();
        for m in 0..p.num_clients() {
            assert!(p.local_full_grad(m, &xs).unwrap().norm() > 1e-3);
        }
    }

    #[test]
    fn p0_global_grad_at_origin() {
        let p = fixtures::p0();
        assert_eq!(p.global_grad(&v(&[0.0, 0.0])).unwrap(), v(&[-0.5, -0.5]));
    }

    #[test]
    fn single_row_global_grad_equals_component_grad() {
        let c = ClientData::from_rows(&[vec![0.5, -2.0, 1.0]], vec![3.0]).unwrap();
        let p = FederatedProblem::new(vec![c], 0.25).unwrap();
        let x = v(&[0.3, 0.1, -0.7]);
        assert_eq!(p.global_grad(&x).unwrap(), p.component_grad(0, 0, &x).unwrap());
    }

    #[test]
    fn p0_exact_solution() {
        let xs = fixtures::p0().exact_solution().unwrap();
        assert_relative_eq!(xs, v(&[1.0 / 3.0, 1.0 / 3.0]), epsilon = 1e-15);
    }

    #[test]
    fn exact_solution_residual_is_tiny() {
        let p = fixtures::p1();
        let xs = p.exact_solution().unwrap();
        let aty = p.stacked_rhs().norm();
        assert!(p.global_grad(&xs).unwrap().norm() <= 1e-10 * (1.0 + aty));
    }

    #[test]
    fn zero_targets_give_zero_solution() {
        let c = ClientData::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]], vec![0.0, 0.0]).unwrap();
        let p = FederatedProblem::new(vec![c], 0.1).unwrap();
        assert_eq!(p.exact_solution().unwrap(), v(&[0.0, 0.0]));
    }

    #[test]
    fn solution_norm_shrinks_with_lambda() {
        let base = fixtures::p1();
        let mut prev = f64::INFINITY;
        for lam in [0.01, 0.1, 1.0, 10.0, 100.0] {
            let xs = base.clone().with_lambda(lam).unwrap().exact_solution().unwrap();
            assert!(xs.norm() < prev);
            prev = xs.norm();
        }
    }

    #[test]
    fn singular_unregularized_problem_is_rejected() {
        let c = ClientData::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]], vec![1.0, 2.0]).unwrap();
        let p = FederatedProblem::new(vec![c], 0.0).unwrap();
        assert!(matches!(p.exact_solution(), Err(Error::NotStronglyConvex)));
    }

    #[test]
    fn p0_smoothness_constants() {
        let s = fixtures::p0().smoothness_constants();
        assert_relative_eq!(s.l, 2.0);
        assert_relative_eq!(s.mu, 1.5, epsilon = 1e-14);
        assert_relative_eq!(s.kappa, 4.0 / 3.0, epsilon = 1e-14);
        let literal = fixtures::p0().smoothness_constants_with(MuNormalization::ClientRows);
        assert_relative_eq!(literal.mu, 1.5, epsilon = 1e-14);
    }

    #[test]
    fn zero_data_constants_equal_lambda() {
        let c = ClientData::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]], vec![1.0, 2.0]).unwrap();
        let s = FederatedProblem::new(vec![c], 1.0).unwrap().smoothness_constants();
        assert_eq!((s.l, s.mu), (1.0, 1.0));
    }

    #[test]
    fn row_scaling_is_quadratic_in_constants() {
        let p = fixtures::p1();
        let scale = 3.0;
        let scaled: Vec<ClientData> = p
            .clients()
            .iter()
            .map(|c| {
                ClientData::new(c.features().iter().map(|a| a * scale).collect(), c.targets().to_vec(), c.dim())
                    .unwrap()
            })
            .collect();
        let q = FederatedProblem::new(scaled, p.lambda()).unwrap();
        let (a, b) = (p.smoothness_constants(), q.smoothness_constants());
        let lam = p.lambda();
        assert_relative_eq!(b.l - lam, scale * scale * (a.l - lam), max_relative = 1e-12);
        assert_relative_eq!(b.mu - lam, scale * scale * (a.mu - lam), max_relative = 1e-9);
    }

    #[test]
    fn unequal_clients_are_rejected() {
        let a = ClientData::from_rows(&[vec![1.0], vec![2.0]], vec![0.0, 0.0]).unwrap();
        let b = ClientData::from_rows(&[vec![1.0]], vec![0.0]).unwrap();
        assert!(FederatedProblem::new(vec![a, b], 0.1).is_err());
    }
}
