//! The whole pipeline through the command layer: write a graph and a config,
//! then certify, solve, and verify exactly as the `depo-lab` binary would,
//! ending with the per-check verdicts and the run manifest.
//!
//! ```text
//! cargo run --example experiment_pipeline
//! ```

use depo_lab::cli::{cmd_certify, cmd_solve, cmd_verify, ExperimentConfig, Overrides};

fn main() -> depo_lab::Result<()> {
    let dir = std::env::temp_dir().join("depo-lab-pipeline");
    std::fs::create_dir_all(&dir)?;
    let graph_path = dir.join("p3.json");
    std::fs::write(&graph_path, r#"{"n":3,"edges":[[0,1],[1,2]]}"#)?;

    let overrides = Overrides {
        graph: Some(graph_path),
        seed: Some(42),
        out: Some(dir.join("out")),
        horizon: Some(400),
        replicas: Some(300),
        threads: Some(1),
        ..Default::default()
    };
    let cfg = ExperimentConfig::from_sources(None, &overrides)?;

    let manifest = cmd_certify(&cfg)?;
    println!("certify: config {}", &manifest.config_sha256[..12]);

    let manifest = cmd_solve(&cfg)?;
    for artifact in &manifest.artifacts {
        println!("solve artifact: {} ({} bytes)", artifact.file, artifact.bytes);
    }

    let (_, report) = cmd_verify(&cfg)?;
    println!("\nverification battery (seed {}):", report.seed);
    for check in &report.checks {
        println!("  {:<14} {}", check.name, if check.pass { "pass" } else { "FAIL" });
    }
    println!("\neverything lands in {:?}", cfg.out);
    Ok(())
}
