//! Empirical mean and variance of Rand-k against its variance parameter.

use fedshuffle::compress::CompressorSpec;
use fedshuffle::problem::DenseVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> fedshuffle::Result<()> {
    let d = 8;
    let x = DenseVector::from_fn(d, |i, _| (i as f64 + 1.0).sin());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let trials = 200_000;

    for k in [1, 2, 4, 8] {
        let c = CompressorSpec::rand_k(k, d)?;
        let mut mean = DenseVector::zeros(d);
        let mut second = 0.0;
        for _ in 0..trials {
            let q = c.compress(&x, &mut rng);
            second += (&q - &x).norm_squared();
            mean += q;
        }
        mean /= trials as f64;
        let ratio = second / trials as f64 / x.norm_squared();
        println!(
            "k = {k}: omega = {:.3}, empirical = {ratio:.3}, |E[C(x)] - x| = {:.1e}, bits = {}",
            c.omega(),
            (&mean - &x).norm(),
            c.uplink_bits()
        );
    }
    Ok(())
}
