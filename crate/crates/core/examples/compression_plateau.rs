//! Compressed local shuffling stalls at a neighborhood that widens as the stepsize shrinks.

use fedshuffle::algorithms::{run, Algorithm, RunConfig};
use fedshuffle::compress::CompressorSpec;
use fedshuffle::fixtures::p1;
use fedshuffle::theory::{MethodParams, Theory};

fn main() -> fedshuffle::Result<()> {
    let problem = p1();
    let theory = Theory::new(&problem)?;
    let l = theory.constants().l;
    let c = CompressorSpec::rand_k(2, problem.dim())?;

    println!("{:>10} {:>14} {:>14}", "gamma*L", "E|x_T - x*|^2", "bound");
    for scale in [0.5, 0.25, 0.125] {
        let gamma = scale / l;
        let seeds = 20;
        let mut tail = 0.0;
        for seed in 0..seeds {
            let trace = run(&problem, &RunConfig::new(Algorithm::FedCRR, c, gamma, 300).with_seed(seed))?;
            tail += trace.last().sq_dist / seeds as f64;
        }
        let params = MethodParams { gamma, alpha: 1.0, eta: 1.0, omega: c.omega() };
        println!("{scale:>10} {tail:>14.4e} {:>14.4e}", theory.theorem_neighborhoods(&params).thm2);
    }

    let exact = run(&problem, &RunConfig::new(Algorithm::FedRR, c, 0.5 / l, 300))?;
    println!("uncompressed baseline: {:.4e} after {} bits", exact.last().sq_dist, exact.last().cum_bits);
    Ok(())
}
