//! Small reference problems shared by tests, examples and the acceptance suite.

use crate::data::{generate_raw, generate_synthetic, partition, PartitionKind, PartitionScheme, SyntheticSpec};
use crate::problem::{ClientData, FederatedProblem};

/// One client, two components, `A = I₂`, `y = (1, 1)`, `λ = 1`. Optimum `(1/3, 1/3)`.
pub fn p0() -> FederatedProblem {
    let c = ClientData::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![1.0, 1.0]).expect("valid rows");
    FederatedProblem::new(vec![c], 1.0).expect("valid problem")
}

/// Ten clients of twenty rows in `d = 10`, split by sorted target so client optima differ.
/// `λ = 1/n`.
pub fn p1() -> FederatedProblem {
    p1_seeded(2024)
}

pub fn p1_seeded(seed: u64) -> FederatedProblem {
    let raw = generate_raw(seed, 200, 10, 0.1).expect("valid sizes");
    let scheme = PartitionScheme { kind: PartitionKind::SortedByTarget, clients: 10 };
    partition(&raw, scheme, None, seed).expect("200 rows over 10 clients")
}

/// Clients with different planted models and noisy targets.
pub fn small_heterogeneous(clients: usize, n: usize, d: usize, seed: u64) -> FederatedProblem {
    let spec = SyntheticSpec { clients, n, d, noise: 0.1, heterogeneity: 1.0, shared_rows: false, lambda: None };
    generate_synthetic(&spec, seed).expect("valid synthetic spec")
}

/// Identical clients (shared data stream, no heterogeneity), so `∇F_m(x*) = 0` for all `m`.
pub fn homogeneous(clients: usize, n: usize, d: usize, lambda: f64, seed: u64) -> FederatedProblem {
    let spec = SyntheticSpec { clients, n, d, noise: 0.1, heterogeneity: 0.0, shared_rows: true, lambda: Some(lambda) };
    generate_synthetic(&spec, seed).expect("valid synthetic spec")
}
