//! Trains a Bayes point machine with EP and compares it to importance sampling.
//!
//! `cargo run --release --example bpm_train -- [data.csv]`
//! The CSV has feature columns followed by a `label` column of ±1; without
//! an argument the built-in three-point set is used.

use std::fs::File;

use ep_core::bpm::{bpm_predict, bpm_train, error_rate, three_point_dataset, BpmDataset, BpmProblem};
use ep_core::engine::EpOptions;
use ep_core::gaussian::FullGaussian;
use ep_core::oracles::importance_sampler;
use nalgebra::DVector;

fn main() -> ep_core::Result<()> {
    let data = match std::env::args().nth(1) {
        Some(path) => BpmDataset::read_csv(File::open(path)?, 0.0, true)?,
        None => three_point_dataset(),
    };
    let dim = data.dim().unwrap_or(1);
    let opts = EpOptions { tolerance: 1e-8, max_sweeps: 200, ..Default::default() };
    let model = bpm_train(&data, dim, &opts)?;
    let (rate, errors) = error_rate(&model, &data)?;
    println!("Bayes point {:?}", model.posterior.mean.as_slice());
    println!("log evidence {:.6}", model.log_evidence);
    println!("training errors {errors} ({rate:.3})");
    println!("sweeps {}, converged {}", model.diagnostics.sweeps, model.diagnostics.converged);

    let problem = BpmProblem::new(&data, dim)?;
    let is = importance_sampler(|w| problem.log_likelihood(w), &FullGaussian::standard(dim), 200_000, 11)?;
    println!("importance-sampled mean {:?} (ESS {:.0})", is.mean.value, is.ess);
    println!("importance-sampled log evidence {:.6}", is.log_evidence);

    // Probes carry the bias coordinate when the model was trained with one.
    let probe = if model.bias_augmented { DVector::from_vec(vec![0.5, 0.5, 1.0]) } else { DVector::from_element(dim, 0.5) };
    let p = bpm_predict(&model, &probe)?;
    println!("prediction at {:?}: {} (tie {})", probe.as_slice(), p.label, p.tie);
    model.write_json(std::io::stdout().lock())?;
    println!();
    Ok(())
}
