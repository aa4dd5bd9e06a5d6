//! Prints the full theoretical report for a small problem as JSON.

use fedshuffle::compress::CompressorSpec;
use fedshuffle::fixtures::small_heterogeneous;
use fedshuffle::theory::{MethodParams, Theory};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let problem = small_heterogeneous(3, 5, 4, 11);
    let theory = Theory::new(&problem)?;
    let omega = CompressorSpec::rand_k(2, problem.dim())?.omega();
    let gamma = 0.2 / theory.constants().l;
    let params = MethodParams { gamma, alpha: 1.0 / (omega + 1.0), eta: 0.1, omega };

    let report = theory.report(&params);
    println!("{}", serde_json::to_string_pretty(&report)?);
    for c in theory.validate_parameters(&params).violations() {
        eprintln!("{}", c.warning());
    }
    Ok(())
}
