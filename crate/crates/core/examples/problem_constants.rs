//! Builds the reference problem and prints its optimum and conditioning.

use fedshuffle::fixtures::p1;
use fedshuffle::problem::MuNormalization;

fn main() -> fedshuffle::Result<()> {
    let problem = p1();
    let x_star = problem.exact_solution()?;
    let c = problem.smoothness_constants();
    let per_client = problem.smoothness_constants_with(MuNormalization::ClientRows);

    println!("M = {}, n = {}, d = {}, lambda = {:.4}", problem.num_clients(), problem.n(), problem.dim(), problem.lambda());
    println!("L = {:.4}  mu = {:.4e}  kappa = {:.1}", c.l, c.mu, c.kappa);
    println!("mu with per-client normalization = {:.4e}", per_client.mu);
    println!("f(x*) = {:.6}  |grad f(x*)| = {:.2e}", problem.objective(&x_star)?, problem.global_grad(&x_star)?.norm());
    for m in 0..problem.num_clients() {
        println!("client {m}: |grad F_m(x*)| = {:.4}", problem.local_full_grad(m, &x_star)?.norm());
    }
    Ok(())
}
