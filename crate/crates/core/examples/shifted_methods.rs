//! Compares the plain, shifted and anchored-shift methods at equal communication.

use fedshuffle::algorithms::{run, Algorithm, RunConfig};
use fedshuffle::compress::CompressorSpec;
use fedshuffle::fixtures::homogeneous;
use fedshuffle::theory::{MethodParams, Theory};

fn main() -> fedshuffle::Result<()> {
    let problem = homogeneous(4, 20, 5, 1.0, 3);
    let theory = Theory::new(&problem)?;
    let c = CompressorSpec::rand_k(1, problem.dim())?;
    let gamma = 0.5 / theory.constants().l;
    let alpha = 1.0 / (c.omega() + 1.0);
    let probe = MethodParams { gamma, alpha, eta: 1.0, omega: c.omega() };
    let eta = theory
        .validate_parameters(&probe)
        .get("Theorem 3", "server_rate")
        .map_or(0.5, |cond| cond.rhs.min(1.0));

    for alg in [Algorithm::FedCRR, Algorithm::FedCrrVr, Algorithm::FedCrrVr2] {
        let cfg = RunConfig::new(alg, c, gamma, 400).with_alpha(alpha).with_eta(eta);
        let trace = run(&problem, &cfg)?;
        let last = trace.last();
        print!("{alg:<11} bits = {:>8}  |x_T - x*|^2 = {:.3e}", last.cum_bits, last.sq_dist);
        match last.lyapunov {
            Some(psi) => println!("  Psi_T = {psi:.3e}"),
            None => println!(),
        }
    }
    Ok(())
}
