use std::time::Instant;

use nalgebra::DVector;

use super::{BpmParams, ClutterParams, ExperimentConfig, LoopyParams, Method, ModelConfig, NetworkSource, ResultRow};
use crate::bpm::{three_point_dataset, BpmDataset, BpmProblem};
use crate::clutter::{generate_clutter_data, ClutterDataSpec};
use crate::engine::{run_adf, run_ep_observed, EpOptions, ModelBinding};
use crate::factor_graph::{bk_adf, frustrated_triangle, load_network, loopy_ep, random_tree, DiscreteFactorGraph};
use crate::gaussian::FullGaussian;
use crate::oracles::{enumerate_discrete, exact_clutter, importance_sampler};
use crate::{Error, Result};

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm()
}

/// Dispatches on the experiment kind and validates the config first.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    config.validate()?;
    match &config.model {
        ModelConfig::Clutter(_) => run_clutter_experiment(config),
        ModelConfig::Bpm(_) => run_bpm_experiment(config),
        ModelConfig::Loopy(_) => run_loopy_experiment(config),
    }
}

fn clutter_params(config: &ExperimentConfig) -> Result<&ClutterParams> {
    match &config.model {
        ModelConfig::Clutter(p) => Ok(p),
        other => Err(Error::Config(format!("expected a clutter config, got {}", other.name()))),
    }
}

/// Clutter: for each seed, draw data, then compare ADF, every EP sweep and
/// importance sampling at each configured sample count against the exact
/// mixture posterior.
pub fn run_clutter_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let p = clutter_params(config)?;
    let d = p.x_true.len();
    let mut rows = Vec::new();
    for &seed in &config.seeds {
        let spec = ClutterDataSpec {
            x_true: p.x_true.clone(),
            n: p.n,
            w: p.w,
            d,
            seed,
            prior_variance: p.prior_variance,
            clutter_variance: p.clutter_variance,
        };
        let model = generate_clutter_data(&spec)?;
        let row = |method: Method, checkpoint: u64| ResultRow::new("clutter", seed, method.name(), checkpoint);

        let exact = if config.has(Method::Oracle) {
            let start = Instant::now();
            let exact = exact_clutter(&model)?;
            let mut r = row(Method::Oracle, 0);
            r.op_tally = Some((exact.component_count * p.n.max(1) * d) as u64);
            r.evidence_error = Some(0.0);
            r.mean_error = Some(0.0);
            r.wall_ms = elapsed_ms(start);
            rows.push(r);
            Some(exact)
        } else {
            None
        };
        let evidence_err = |log_ev: f64| exact.as_ref().map(|e| (log_ev - e.log_evidence).abs());
        let mean_err = |m: &DVector<f64>| exact.as_ref().map(|e| distance(m, &e.mean));

        if config.has(Method::Adf) {
            let start = Instant::now();
            let order: Vec<usize> = (0..model.n()).collect();
            let adf = run_adf(&model, &order)?;
            let mut r = row(Method::Adf, 1);
            r.op_tally = Some(adf.diagnostics.tally.count);
            r.evidence_error = evidence_err(adf.log_evidence);
            r.mean_error = mean_err(&adf.posterior.mean);
            r.converged = Some(true);
            r.sweeps = Some(1);
            r.wall_ms = elapsed_ms(start);
            rows.push(r);
        }

        if config.has(Method::Ep) {
            let start = Instant::now();
            let mut sweep_rows = Vec::new();
            let result = run_ep_observed(&model, &config.ep, |snap| {
                let mut r = row(Method::Ep, snap.sweep as u64);
                r.op_tally = Some(snap.tally.count);
                r.evidence_error = model.log_evidence(snap.posterior, snap.sites).ok().and_then(&evidence_err);
                r.mean_error = mean_err(&snap.posterior.mean);
                r.wall_ms = elapsed_ms(start);
                sweep_rows.push(r);
            })?;
            if sweep_rows.is_empty() {
                let mut r = row(Method::Ep, 0);
                r.op_tally = Some(0);
                r.evidence_error = evidence_err(result.log_evidence);
                r.mean_error = mean_err(&result.posterior.mean);
                sweep_rows.push(r);
            }
            for mut r in sweep_rows {
                r.converged = Some(result.converged);
                r.sweeps = Some(result.sweeps);
                rows.push(r);
            }
        }

        if config.has(Method::Importance) {
            let prior = model.prior_gaussian().to_full();
            for &s in &p.importance_samples {
                let start = Instant::now();
                let est = importance_sampler(|x| model.log_likelihood(x), &prior, s, seed)?;
                let mut r = row(Method::Importance, s as u64);
                r.op_tally = Some((s * (d * d + p.n * d)) as u64);
                r.evidence_error = evidence_err(est.log_evidence);
                r.mean_error = mean_err(&DVector::from_vec(est.mean.value.clone()));
                r.reference_se = Some(est.evidence.standard_error / est.evidence.value);
                r.wall_ms = elapsed_ms(start);
                rows.push(r);
            }
        }
    }
    Ok(rows)
}

fn load_bpm_dataset(p: &BpmParams) -> Result<BpmDataset> {
    match &p.dataset {
        None => {
            let mut data = three_point_dataset();
            data.slack = p.slack;
            Ok(data)
        }
        Some(path) => {
            let file = std::fs::File::open(path)
                .map_err(|e| Error::Config(format!("cannot read dataset {}: {e}", path.display())))?;
            BpmDataset::read_csv(file, p.slack, p.bias)
        }
    }
}

/// Misclassification rate of `sign(mᵀx)` with ties counted as +1.
fn training_error(mean: &DVector<f64>, data: &BpmDataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let wrong = data
        .points
        .iter()
        .zip(&data.labels)
        .filter(|(x, &y)| (if mean.dot(x) < 0.0 { -1 } else { 1 }) != y)
        .count();
    wrong as f64 / data.len() as f64
}

/// BPM: the importance-sampled Bayes point (seeded per row seed) is the
/// reference; ADF and every EP sweep are scored by Euclidean distance to it.
pub fn run_bpm_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let ModelConfig::Bpm(p) = &config.model else {
        return Err(Error::Config(format!("expected a bpm config, got {}", config.model.name())));
    };
    let data = load_bpm_dataset(p)?;
    let dim = data.dim().unwrap_or(p.dim);
    let problem = BpmProblem::new(&data, dim)?;
    let n = problem.site_count();
    let mut rows = Vec::new();
    for &seed in &config.seeds {
        let row = |method: Method, checkpoint: u64| ResultRow::new("bpm", seed, method.name(), checkpoint);
        let reference = if config.has(Method::Importance) || config.has(Method::Oracle) {
            let start = Instant::now();
            let est = importance_sampler(|w| problem.log_likelihood(w), &FullGaussian::standard(dim), p.importance_samples, seed)?;
            let se = DVector::from_vec(est.mean.standard_error.clone()).norm();
            let mut r = row(Method::Importance, p.importance_samples as u64);
            r.op_tally = Some((p.importance_samples * (dim * dim + n * dim)) as u64);
            r.mean_error = Some(0.0);
            r.reference_se = Some(se);
            r.train_error_rate = Some(training_error(&DVector::from_vec(est.mean.value.clone()), &data));
            r.wall_ms = elapsed_ms(start);
            rows.push(r);
            Some((DVector::from_vec(est.mean.value), est.log_evidence, se))
        } else {
            None
        };
        let fill = |r: &mut ResultRow, mean: &DVector<f64>, log_ev: Option<f64>| {
            if let Some((m, ev, se)) = &reference {
                r.mean_error = Some(distance(mean, m));
                r.evidence_error = log_ev.map(|l| (l - ev).abs()).filter(|e| e.is_finite());
                r.reference_se = Some(*se);
            }
            r.train_error_rate = Some(training_error(mean, &data));
        };

        if config.has(Method::Adf) {
            let start = Instant::now();
            let adf = run_adf(&problem, &(0..n).collect::<Vec<_>>())?;
            let mut r = row(Method::Adf, 1);
            r.op_tally = Some(adf.diagnostics.tally.count);
            fill(&mut r, &adf.posterior.mean, Some(adf.log_evidence));
            r.converged = Some(true);
            r.sweeps = Some(1);
            r.wall_ms = elapsed_ms(start);
            rows.push(r);
        }

        if config.has(Method::Ep) {
            let start = Instant::now();
            let mut sweep_rows = Vec::new();
            let result = run_ep_observed(&problem, &config.ep, |snap| {
                let mut r = row(Method::Ep, snap.sweep as u64);
                r.op_tally = Some(snap.tally.count);
                fill(&mut r, &snap.posterior.mean, problem.log_evidence(snap.posterior, snap.sites).ok());
                r.wall_ms = elapsed_ms(start);
                sweep_rows.push(r);
            })?;
            if sweep_rows.is_empty() {
                let mut r = row(Method::Ep, 0);
                r.op_tally = Some(0);
                fill(&mut r, &result.posterior.mean, Some(result.log_evidence));
                sweep_rows.push(r);
            }
            for mut r in sweep_rows {
                r.converged = Some(result.converged);
                r.sweeps = Some(result.sweeps);
                rows.push(r);
            }
        }
    }
    Ok(rows)
}

fn network_for(p: &LoopyParams, seed: u64) -> Result<DiscreteFactorGraph> {
    match &p.network {
        NetworkSource::File { path } => {
            let file = std::fs::File::open(path)
                .map_err(|e| Error::Config(format!("cannot read network {}: {e}", path.display())))?;
            load_network(file)
        }
        NetworkSource::RandomTree { variables, max_cardinality } => {
            if *max_cardinality < 2 {
                return Err(Error::Config("max_cardinality must be at least 2".into()));
            }
            Ok(random_tree(*variables, *max_cardinality, seed))
        }
        NetworkSource::FrustratedTriangle { coupling, bias } => Ok(frustrated_triangle(*coupling, *bias)),
    }
}

/// Loopy: BK-ADF and loopy EP (at each configured damping) against exact
/// enumeration. One row per variable with its L1 error, plus a summary row
/// (`variable = NA`) with the worst L1 error and the log-evidence error.
pub fn run_loopy_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let ModelConfig::Loopy(p) = &config.model else {
        return Err(Error::Config(format!("expected a loopy config, got {}", config.model.name())));
    };
    let dampings = if p.dampings.is_empty() { vec![config.ep.damping] } else { p.dampings.clone() };
    let mut rows = Vec::new();
    for &seed in &config.seeds {
        let net = network_for(p, seed)?;
        let ids: Vec<String> = net.variables().iter().map(|v| v.id.clone()).collect();
        let exact = if config.has(Method::Oracle) {
            let start = Instant::now();
            match enumerate_discrete(&net) {
                Ok(e) => {
                    let mut r = ResultRow::new("loopy", seed, "oracle", 0);
                    r.evidence_error = Some(0.0);
                    r.l1_error = Some(0.0);
                    r.wall_ms = elapsed_ms(start);
                    rows.push(r);
                    Some(e)
                }
                Err(Error::StateSpaceTooLarge { .. }) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let emit = |rows: &mut Vec<ResultRow>, template: ResultRow, beliefs: &[Vec<f64>], log_ev: f64| {
            let l1: Option<Vec<f64>> = exact.as_ref().map(|e| {
                beliefs
                    .iter()
                    .zip(&e.marginals)
                    .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
                    .collect()
            });
            for (k, id) in ids.iter().enumerate() {
                let mut r = template.clone();
                r.variable = Some(id.clone());
                r.l1_error = l1.as_ref().map(|v| v[k]);
                rows.push(r);
            }
            let mut r = template;
            r.l1_error = l1.map(|v| v.into_iter().fold(0.0, f64::max));
            r.evidence_error = exact.as_ref().map(|e| (log_ev - e.log_partition).abs());
            rows.push(r);
        };

        if config.has(Method::Adf) {
            let start = Instant::now();
            let adf = bk_adf(&net, &(0..net.factors().len()).collect::<Vec<_>>())?;
            let mut r = ResultRow::new("loopy", seed, "adf", 1);
            r.op_tally = Some(adf.tally.count);
            r.converged = Some(true);
            r.sweeps = Some(1);
            r.wall_ms = elapsed_ms(start);
            emit(&mut rows, r, &adf.beliefs.beliefs, adf.log_evidence);
        }

        if config.has(Method::Ep) {
            for &g in &dampings {
                let start = Instant::now();
                let opts = EpOptions { damping: g, ..config.ep.clone() };
                let ep = loopy_ep(&net, &opts)?;
                let mut r = ResultRow::new("loopy", seed, "ep", ep.sweeps as u64);
                r.damping = Some(g);
                r.op_tally = Some(ep.tally.count);
                r.converged = Some(ep.converged);
                r.sweeps = Some(ep.sweeps);
                r.wall_ms = elapsed_ms(start);
                emit(&mut rows, r, &ep.beliefs.beliefs, ep.log_evidence);
            }
        }
    }
    Ok(rows)
}
