//! Quantities that appear in the convergence guarantees, evaluated exactly on a problem.
//!
//! Scaling conventions: `∇F_m` is the *sum* of a client's `n` component gradients, the
//! objective is `f = (1/(Mn)) Σ_m F_m`, and the lifted problem stacks one copy of `x` per
//! client with components `f_j(x_1, …, x_M) = Σ_m f_{m,j}(x_m)`.

use std::collections::BTreeMap;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::problem::{DenseVector, FederatedProblem, FiniteSumOracle, MuNormalization, SmoothnessConstants};
use crate::shuffle::Permutation;

/// Largest `n` for which the shuffling radius is evaluated by full enumeration (`6! = 720`).
pub const EXACT_RADIUS_MAX_N: usize = 6;

/// `δ² = 1/8`, the value implied by the balance condition of the double variance-reduced method.
pub const BIG_DATA_DELTA_SQ: f64 = 0.125;

/// Method parameters entering the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodParams {
    pub gamma: f64,
    pub alpha: f64,
    pub eta: f64,
    pub omega: f64,
}

/// Limit points of the epoch map started and evaluated at `x*`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShuffledLimit {
    pub x_star: DenseVector,
    /// `x^n_{*,m} = x* − γ Σ_j ∇f_{m,π_j}(x*)`, one per client.
    pub client_points: Vec<DenseVector>,
    /// `step_points[m][i-1] = x*^i` for `i = 1..n−1`; empty when built with [`ShuffledLimit::endpoints`].
    pub step_points: Vec<Vec<DenseVector>>,
}

impl ShuffledLimit {
    /// Endpoints only. A full epoch sums every component, so the endpoint does not
    /// depend on the permutation.
    pub fn endpoints(problem: &FederatedProblem, x_star: &DenseVector, gamma: f64) -> Self {
        let client_points = (0..problem.num_clients())
            .map(|m| x_star - gamma * problem.local_full_grad_unchecked(m, x_star.as_slice()))
            .collect();
        Self { x_star: x_star.clone(), client_points, step_points: Vec::new() }
    }

    pub fn mean_client_point(&self) -> DenseVector {
        let mut s = DenseVector::zeros(self.x_star.len());
        for p in &self.client_points {
            s += p;
        }
        s / self.client_points.len() as f64
    }
}

/// One parameter condition with both sides attached. It holds iff `lhs <= rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub theorem: String,
    pub name: String,
    pub formula: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl Condition {
    fn new(theorem: &str, name: &str, formula: &str, lhs: f64, rhs: f64) -> Self {
        Self {
            theorem: theorem.into(),
            name: name.into(),
            formula: formula.into(),
            lhs,
            rhs,
            holds: lhs <= rhs,
        }
    }

    pub fn warning(&self) -> String {
        format!(
            "{} condition `{}` violated: {} (lhs = {:.6e}, rhs = {:.6e})",
            self.theorem, self.name, self.formula, self.lhs, self.rhs
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validity {
    pub conditions: Vec<Condition>,
}

impl Validity {
    /// True when every condition attached to `theorem` holds.
    pub fn holds(&self, theorem: &str) -> bool {
        self.conditions.iter().filter(|c| c.theorem == theorem).all(|c| c.holds)
    }

    pub fn get(&self, theorem: &str, name: &str) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.theorem == theorem && c.name == name)
    }

    pub fn violations(&self) -> impl Iterator<Item = &Condition> {
        self.conditions.iter().filter(|c| !c.holds)
    }
}

/// Asymptotic (T → ∞) neighborhoods of the three methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighborhoods {
    /// Compressed method: compression term plus `(2/μ)(1+2ω/M)γ²L·(1/M)Σδ_m`.
    pub thm2: f64,
    /// Same bound without the `(1+2ω/M)` factor on the shuffling term.
    pub thm2_statement: f64,
    pub thm3: f64,
    pub thm4: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusBoundMode {
    /// All `M·n` components pooled into one finite sum.
    Single,
    /// Lifted product-space problem.
    Lifted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub x_star: Vec<f64>,
    pub clients: usize,
    pub n: usize,
    pub d: usize,
    pub lambda: f64,
    pub constants: SmoothnessConstants,
    pub mu_client_rows: f64,
    pub params: MethodParams,
    pub sigma_star_m: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub sigma_star_pooled: f64,
    pub sigma_rad_bound: f64,
    pub sigma_rad_bound_single: f64,
    pub sigma_rad_exact: Option<f64>,
    pub thm2_neighborhood: f64,
    pub thm2_neighborhood_statement: f64,
    pub thm3_neighborhood: f64,
    pub thm4_neighborhood: f64,
    pub delta: f64,
    pub delta_prime: f64,
    pub validity: Vec<Condition>,
    pub scaling: BTreeMap<String, String>,
}

/// Exact optimum and everything evaluated at it, computed once per problem.
#[derive(Debug, Clone)]
pub struct Theory<'a> {
    problem: &'a FederatedProblem,
    constants: SmoothnessConstants,
    x_star: DenseVector,
    /// `∇f_{m,i}(x*)`, indexed `[m][i]`.
    grads_at_opt: Vec<Vec<DenseVector>>,
    local_grads: Vec<DenseVector>,
}

impl<'a> Theory<'a> {
    pub fn new(problem: &'a FederatedProblem) -> Result<Self> {
        let x_star = problem.exact_solution()?;
        let d = problem.dim();
        let grads_at_opt: Vec<Vec<DenseVector>> = (0..problem.num_clients())
            .map(|m| {
                (0..problem.n())
                    .map(|i| {
                        let mut g = DenseVector::zeros(d);
                        problem.component_grad_into(m, i, x_star.as_slice(), g.as_mut_slice());
                        g
                    })
                    .collect()
            })
            .collect();
        let local_grads = grads_at_opt
            .iter()
            .map(|gs| gs.iter().fold(DenseVector::zeros(d), |acc, g| acc + g))
            .collect();
        Ok(Self {
            problem,
            constants: problem.smoothness_constants(),
            x_star,
            grads_at_opt,
            local_grads,
        })
    }

    pub fn problem(&self) -> &FederatedProblem {
        self.problem
    }

    pub fn x_star(&self) -> &DenseVector {
        &self.x_star
    }

    pub fn constants(&self) -> SmoothnessConstants {
        self.constants
    }

    /// `∇F_m(x*)`.
    pub fn local_grad_at_opt(&self, m: usize) -> &DenseVector {
        &self.local_grads[m]
    }

    pub fn local_grad_norm_sq(&self, m: usize) -> f64 {
        self.local_grads[m].norm_squared()
    }

    pub fn shuffled_limits(&self, gamma: f64, perms: &[Permutation]) -> ShuffledLimit {
        let mut limit = ShuffledLimit::endpoints(self.problem, &self.x_star, gamma);
        limit.step_points = perms
            .iter()
            .enumerate()
            .map(|(m, perm)| {
                let mut x = self.x_star.clone();
                let order = perm.as_slice();
                order[..order.len().saturating_sub(1)]
                    .iter()
                    .map(|&j| {
                        x -= gamma * &self.grads_at_opt[m][j];
                        x.clone()
                    })
                    .collect()
            })
            .collect();
        limit
    }

    /// `σ²_{m,*} = (1/n) Σ_j ‖∇f_{m,j}(x*) − (1/n)∇F_m(x*)‖²`.
    pub fn local_variance_at_opt(&self, m: usize) -> f64 {
        let n = self.problem.n() as f64;
        let mean = &self.local_grads[m] / n;
        self.grads_at_opt[m].iter().map(|g| (g - &mean).norm_squared()).sum::<f64>() / n
    }

    fn pooled_mean_grad(&self) -> DenseVector {
        let total = self.problem.total_rows() as f64;
        self.local_grads.iter().fold(DenseVector::zeros(self.problem.dim()), |acc, g| acc + g) / total
    }

    /// Variance at the optimum of the pooled `M·n`-component problem.
    pub fn variance_at_opt(&self) -> f64 {
        let mean = self.pooled_mean_grad();
        let total = self.problem.total_rows() as f64;
        self.grads_at_opt.iter().flatten().map(|g| (g - &mean).norm_squared()).sum::<f64>() / total
    }

    /// Lifted shuffling radius by enumeration of all `n!` permutations, or `None` above
    /// [`EXACT_RADIUS_MAX_N`]. Zero when `n = 1`.
    pub fn shuffling_radius_exact(&self, gamma: f64) -> Option<f64> {
        let n = self.problem.n();
        if n > EXACT_RADIUS_MAX_N {
            return None;
        }
        if n == 1 {
            return Some(0.0);
        }
        let d = self.problem.dim();
        let mut per_step = vec![0.0; n];
        let mut count = 0usize;
        for order in (0..n).permutations(n) {
            count += 1;
            for m in 0..self.problem.num_clients() {
                let mut delta = DenseVector::zeros(d);
                for i in 1..n {
                    // x*^i − x* = −γ Σ_{j<i} ∇f_{π_j}(x*)
                    delta -= gamma * &self.grads_at_opt[m][order[i - 1]];
                    per_step[i] += self.problem.bregman_of_difference(m, order[i], delta.as_slice());
                }
            }
        }
        let scale = 1.0 / (count as f64 * gamma * gamma);
        Some(per_step[1..].iter().fold(0.0f64, |a, &b| a.max(b * scale)))
    }

    pub fn shuffling_radius_bound(&self, mode: RadiusBoundMode) -> f64 {
        let n = self.problem.n() as f64;
        match mode {
            RadiusBoundMode::Lifted => {
                self.constants.l
                    * (0..self.problem.num_clients())
                        .map(|m| self.local_grad_norm_sq(m) + n / 4.0 * self.local_variance_at_opt(m))
                        .sum::<f64>()
            }
            RadiusBoundMode::Single => {
                let total = self.problem.total_rows() as f64;
                let g = self.pooled_mean_grad().norm_squared();
                self.constants.l_max / 2.0 * total * (total * g + 0.5 * self.variance_at_opt())
            }
        }
    }

    /// `δ_m = ‖∇F_m(x*)‖² + (n/4)σ²_{m,*}`.
    fn delta_m(&self, m: usize) -> f64 {
        self.local_grad_norm_sq(m) + self.problem.n() as f64 / 4.0 * self.local_variance_at_opt(m)
    }

    fn contraction_base(&self, gamma: f64) -> f64 {
        (1.0 - gamma * self.constants.mu).max(0.0)
    }

    pub fn theorem_neighborhoods(&self, p: &MethodParams) -> Neighborhoods {
        let mm = self.problem.num_clients() as f64;
        let n = self.problem.n() as f64;
        let SmoothnessConstants { l, mu, .. } = self.constants;
        let (gamma, alpha, eta, omega) = (p.gamma, p.alpha, p.eta, p.omega);

        let limit = ShuffledLimit::endpoints(self.problem, &self.x_star, gamma);
        let mean_limit_sq = limit.client_points.iter().map(|x| x.norm_squared()).sum::<f64>() / mm;
        let sum_delta: f64 = (0..self.problem.num_clients()).map(|m| self.delta_m(m)).sum();
        let sum_drift: f64 = (0..self.problem.num_clients()).map(|m| self.local_grad_norm_sq(m)).sum();

        let compression = 2.0 * omega / mm / (gamma * mu) * mean_limit_sq;
        let shuffling = 2.0 / mu * gamma * gamma * l * sum_delta / mm;
        let thm2 = compression + (1.0 + 2.0 * omega / mm) * shuffling;
        let thm2_statement = compression + shuffling;

        let q = self.contraction_base(gamma);
        let weight = alpha + eta + 2.0 * eta * eta * omega / mm;
        let min3 = alpha.min(eta * (1.0 - q.powf(n)));
        let min4 = alpha.min(eta * (1.0 - q.powf(n / 2.0)));
        let thm3 = 2.0 * weight * gamma.powi(3) * l * sum_delta / (mm * min3);
        let thm4 = 2.0 * weight * gamma.powi(3) * l * sum_drift / (mm * min4);
        Neighborhoods { thm2, thm2_statement, thm3, thm4 }
    }

    /// Full right-hand side after `epochs` rounds for the compressed method, given `‖x0 − x*‖²`.
    pub fn thm2_rhs(&self, p: &MethodParams, epochs: usize, initial_sq_dist: f64) -> f64 {
        let n = self.problem.n() as f64;
        let q = self.contraction_base(p.gamma);
        q.powf(n * epochs as f64 / 2.0) * initial_sq_dist + self.theorem_neighborhoods(p).thm2
    }

    /// Per-epoch Lyapunov contraction factor `1 − ½min(α, η(1 − (1−γμ)^n))`.
    pub fn thm3_contraction(&self, p: &MethodParams) -> f64 {
        let q = self.contraction_base(p.gamma).powf(self.problem.n() as f64);
        1.0 - 0.5 * p.alpha.min(p.eta * (1.0 - q))
    }

    /// Per-epoch contraction factor with exponent `n/2`.
    pub fn thm4_contraction(&self, p: &MethodParams) -> f64 {
        let q = self.contraction_base(p.gamma).powf(self.problem.n() as f64 / 2.0);
        1.0 - 0.5 * p.alpha.min(p.eta * (1.0 - q))
    }

    /// Additive term of the one-epoch Lyapunov recursion,
    /// `(α + η + 2η²ω/M)·2γ³·(σ²_rad/M)·Σ_{j<n}(1−γμ)^j`, with the lifted radius bound.
    pub fn thm3_epoch_increment(&self, p: &MethodParams) -> f64 {
        let mm = self.problem.num_clients() as f64;
        let q = self.contraction_base(p.gamma);
        let geo: f64 = (0..self.problem.n()).map(|j| q.powi(j as i32)).sum();
        let weight = p.alpha + p.eta + 2.0 * p.eta * p.eta * p.omega / mm;
        weight * 2.0 * p.gamma.powi(3) * self.shuffling_radius_bound(RadiusBoundMode::Lifted) / mm * geo
    }

    pub fn validate_parameters(&self, p: &MethodParams) -> Validity {
        let mm = self.problem.num_clients() as f64;
        let n = self.problem.n() as f64;
        let SmoothnessConstants { l, mu, .. } = self.constants;
        let q = self.contraction_base(p.gamma);
        let q_full = q.powf(n);
        let q_half = q.powf(n / 2.0);
        let eta_cap = |qq: f64| {
            if p.omega == 0.0 {
                1.0
            } else {
                1.0f64.min((1.0 - qq) * mm / (12.0 * p.omega * qq))
            }
        };
        let omega_cap = if q_half == 0.0 { f64::INFINITY } else { mm / 2.0 * (1.0 - q_half) / q_half };
        let big_data_rhs = (1.0 / (1.0 - BIG_DATA_DELTA_SQ)).ln() / (1.0 / (1.0 - p.gamma * mu)).ln();

        let conditions = vec![
            Condition::new("Theorem 2", "stepsize", "gamma <= 1/L", p.gamma, 1.0 / l),
            Condition::new(
                "Theorem 2",
                "compression",
                "omega <= (M/2)(1-(1-gamma mu)^(n/2))/(1-gamma mu)^(n/2)",
                p.omega,
                omega_cap,
            ),
            Condition::new("Theorem 3", "stepsize", "gamma <= 1/L", p.gamma, 1.0 / l),
            Condition::new("Theorem 3", "shift_rate", "alpha <= 1/(omega+1)", p.alpha, 1.0 / (p.omega + 1.0)),
            Condition::new(
                "Theorem 3",
                "server_rate",
                "eta <= min(1, (1-(1-gamma mu)^n) M / (12 omega (1-gamma mu)^n))",
                p.eta,
                eta_cap(q_full),
            ),
            Condition::new(
                "Theorem 4",
                "stepsize",
                "gamma <= (1/(8L)) sqrt(mu/(nL))",
                p.gamma,
                (mu / (n * l)).sqrt() / (8.0 * l),
            ),
            Condition::new("Theorem 4", "shift_rate", "alpha <= 1/(omega+1)", p.alpha, 1.0 / (p.omega + 1.0)),
            Condition::new(
                "Theorem 4",
                "server_rate",
                "eta <= min(1, (1-(1-gamma mu)^(n/2)) M / (12 omega (1-gamma mu)^(n/2)))",
                p.eta,
                eta_cap(q_half),
            ),
            Condition::new(
                "Theorem 4",
                "balance",
                "1/8 <= (1-gamma mu)^(n/2) (1-(1-gamma mu)^(n/2))",
                0.125,
                q_half * (1.0 - q_half),
            ),
            Condition::new(
                "Lemma 4",
                "big_data",
                "log(1/(1-delta^2)) / log(1/(1-gamma mu)) < n, delta^2 = 1/8",
                big_data_rhs,
                n,
            )
            .strict(),
        ];
        Validity { conditions }
    }

    /// Variance of the perturbed components at `x*` for anchor `y`, pooled over all clients:
    /// `(1/N) Σ ‖∇f_i(x*) − ∇f_i(y) + ∇f(y) − ∇f(x*)‖²`.
    pub fn reformulated_variance(&self, y: &DenseVector) -> f64 {
        let d = self.problem.dim();
        let total = self.problem.total_rows() as f64;
        let mut at_y = Vec::with_capacity(self.problem.total_rows());
        let mut mean_y = DenseVector::zeros(d);
        for m in 0..self.problem.num_clients() {
            for i in 0..self.problem.n() {
                let mut g = DenseVector::zeros(d);
                self.problem.component_grad_into(m, i, y.as_slice(), g.as_mut_slice());
                mean_y += &g;
                at_y.push(g);
            }
        }
        mean_y /= total;
        let mean_opt = self.pooled_mean_grad();
        self.grads_at_opt
            .iter()
            .flatten()
            .zip(&at_y)
            .map(|(go, gy)| (go - gy + &mean_y - &mean_opt).norm_squared())
            .sum::<f64>()
            / total
    }

    pub fn report(&self, p: &MethodParams) -> TheoryReport {
        let mm = self.problem.num_clients();
        let n = self.problem.n();
        let nb = self.theorem_neighborhoods(p);
        let sigma_star_m: Vec<f64> = (0..mm).map(|m| self.local_variance_at_opt(m)).collect();
        let grad_norms: Vec<f64> = (0..mm).map(|m| self.local_grad_norm_sq(m)).collect();
        let delta_prime = grad_norms.iter().map(|g| g.sqrt()).sum::<f64>() / mm as f64;
        let delta = grad_norms
            .iter()
            .zip(&sigma_star_m)
            .map(|(g, s)| g.sqrt() + (n as f64).sqrt() * s.sqrt())
            .sum::<f64>()
            / mm as f64;
        TheoryReport {
            x_star: self.x_star.iter().copied().collect(),
            clients: mm,
            n,
            d: self.problem.dim(),
            lambda: self.problem.lambda(),
            constants: self.constants,
            mu_client_rows: self.problem.smoothness_constants_with(MuNormalization::ClientRows).mu,
            params: *p,
            sigma_star_m,
            grad_norms,
            sigma_star_pooled: self.variance_at_opt(),
            sigma_rad_bound: self.shuffling_radius_bound(RadiusBoundMode::Lifted),
            sigma_rad_bound_single: self.shuffling_radius_bound(RadiusBoundMode::Single),
            sigma_rad_exact: self.shuffling_radius_exact(p.gamma),
            thm2_neighborhood: nb.thm2,
            thm2_neighborhood_statement: nb.thm2_statement,
            thm3_neighborhood: nb.thm3,
            thm4_neighborhood: nb.thm4,
            delta,
            delta_prime,
            validity: self.validate_parameters(p).conditions,
            scaling: scaling_metadata(),
        }
    }
}

impl Condition {
    fn strict(mut self) -> Self {
        self.holds = self.lhs < self.rhs;
        self
    }
}

fn scaling_metadata() -> BTreeMap<String, String> {
    [
        ("objective", "f(x) = (1/(M n)) sum_m F_m(x)"),
        ("local_gradient", "grad F_m(x) = sum_{i=1..n} grad f_{m,i}(x) (sum, not average)"),
        ("grad_norms", "||grad F_m(x*)||^2 per client"),
        ("sigma_star_m", "(1/n) sum_j ||grad f_{m,j}(x*) - (1/n) grad F_m(x*)||^2"),
        ("sigma_star_pooled", "(1/(M n)) sum_{m,i} ||grad f_{m,i}(x*) - grad f(x*)||^2"),
        ("sigma_rad_exact", "lifted problem, max_i (1/gamma^2) E_pi D(x*^i, x*), enumerated over n!"),
        ("sigma_rad_bound", "lifted: L sum_m (||grad F_m(x*)||^2 + (n/4) sigma_{m,*}^2)"),
        ("sigma_rad_bound_single", "pooled N = M n: (L_max/2) N (N ||grad f(x*)||^2 + sigma_star_pooled/2)"),
        ("L", "max_{m,i} ||a_{m,i}||^2 + lambda (component constant)"),
        ("mu", "rho_min(A^T A)/(M n) + lambda"),
        ("mu_client_rows", "rho_min(A^T A)/n + lambda"),
        ("thm2_neighborhood", "(2 omega/M)(1/(gamma mu)) mean ||x^n_{*,m}||^2 + (2/mu)(1 + 2 omega/M) gamma^2 L mean delta_m"),
        ("thm2_neighborhood_statement", "same without the (1 + 2 omega/M) factor"),
        ("delta_m", "||grad F_m(x*)||^2 + (n/4) sigma_{m,*}^2"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

/// Convenience wrapper: lifted shuffling radius of `problem` by enumeration.
pub fn shuffling_radius_exact(problem: &FederatedProblem, gamma: f64) -> Result<Option<f64>> {
    Ok(Theory::new(problem)?.shuffling_radius_exact(gamma))
}

/// `Ψ = ‖x − x*‖² + (4η²ω/(αM))·(1/M)Σ_m‖h_m − x^n_{*,m}‖²`.
pub fn lyapunov(x: &DenseVector, shifts: &[DenseVector], limits: &ShuffledLimit, alpha: f64, eta: f64, omega: f64) -> f64 {
    let sq = (x - &limits.x_star).norm_squared();
    if omega == 0.0 {
        return sq;
    }
    let mm = shifts.len() as f64;
    let shift_err = shifts
        .iter()
        .zip(&limits.client_points)
        .map(|(h, p)| (h - p).norm_squared())
        .sum::<f64>()
        / mm;
    sq + 4.0 * eta * eta * omega / (alpha * mm) * shift_err
}
