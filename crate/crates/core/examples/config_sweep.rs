//! Runs a small grid through the harness and prints the manifest.

use std::path::PathBuf;

use fedshuffle::harness::{cli_sweep, CliOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("fedshuffle-sweep-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let config = dir.join("sweep.json");
    std::fs::write(
        &config,
        r#"{
            "problem": {"synthetic": {"clients": 4, "n": 10, "d": 6, "noise": 0.1, "heterogeneity": 1.0}},
            "algorithm": ["FedCRR", "FedCRR_VR"],
            "gamma": [0.005, 0.01],
            "k": 2,
            "eta": 0.2,
            "epochs": 50,
            "repeats": 2,
            "output": "results/grid"
        }"#,
    )?;

    let outcome = cli_sweep(&config, CliOptions { seed: Some(1), quiet: true })?;
    print!("{}", std::fs::read_to_string(dir.join("results/grid.manifest.csv"))?);
    for prefix in &outcome.prefixes {
        let trace = std::fs::read_to_string(PathBuf::from(format!("{}.trace.csv", prefix.display())))?;
        println!("{}: {}", prefix.display(), trace.lines().last().unwrap_or_default());
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
