//! Runs an experiment from a JSON config, as the command-line harness does,
//! and writes the result CSV with its sidecars.
//!
//! `cargo run --example experiment_config -- out.csv`

use ep_core::harness::{run_experiment, write_outputs, ExperimentConfig};

const CONFIG: &str = r#"{
    "experiment": "clutter",
    "x_true": [2.0],
    "n": 12,
    "w": 0.5,
    "methods": ["adf", "ep", "oracle"],
    "ep": { "tolerance": 1e-6, "max_sweeps": 50 },
    "seeds": [1, 2, 3]
}"#;

fn main() -> ep_core::Result<()> {
    let config = ExperimentConfig::from_json(CONFIG)?;
    config.validate()?;
    let rows = run_experiment(&config)?;
    let out = std::env::args().nth(1).unwrap_or_else(|| "clutter_results.csv".into());
    write_outputs(&config, &rows, out.as_ref())?;
    println!("wrote {} rows to {out}", rows.len());
    Ok(())
}
