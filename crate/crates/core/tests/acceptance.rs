//! Acceptance gate. Each criterion prints one PASS/FAIL line; the test fails
//! if any criterion fails. Run with `--nocapture` to see the lines.

use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ep_core::bpm::{bpm_train, error_rate, three_point_dataset, BpmDataset, BpmProblem};
use ep_core::clutter::{generate_clutter_data, ClutterDataSpec, ClutterModel};
use ep_core::engine::{ep_energy, run_adf, run_ep, run_ep_observed, EpOptions, EpResult, Schedule};
use ep_core::factor_graph::{loopy_ep, random_tree};
use ep_core::gaussian::special::LN_2PI;
use ep_core::gaussian::{FullGaussian, NaturalSpherical, RankOneSite, SphericalGaussian};
use ep_core::harness::oracle_check::{bpm_battery, clutter_battery};
use ep_core::oracles::{enumerate_discrete, exact_clutter, importance_sampler};

struct Outcome {
    passed: bool,
    detail: String,
    elapsed: Duration,
}

fn report(id: usize, title: &str, limit: Option<Duration>, run: impl FnOnce() -> (bool, String)) -> bool {
    let start = Instant::now();
    let (ok, detail) = run();
    let outcome = Outcome { passed: ok, detail, elapsed: start.elapsed() };
    let in_time = limit.is_none_or(|l| outcome.elapsed <= l);
    let passed = outcome.passed && in_time;
    let budget = limit.map_or(String::new(), |l| format!(" / {:.0?} budget", l));
    println!(
        "criterion {id} [{}] {title}: {} ({:.2?}{budget})",
        if passed { "PASS" } else { "FAIL" },
        outcome.detail,
        outcome.elapsed,
    );
    passed
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn std_dev(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

fn fig1_data(seed: u64) -> ClutterModel {
    generate_clutter_data(&ClutterDataSpec::new(vec![2.0], 12, 0.5, seed)).unwrap()
}

fn fig1_options() -> EpOptions {
    EpOptions { tolerance: 1e-6, max_sweeps: 50, ..Default::default() }
}

/// Fixed points collected for the energy check.
#[derive(Default)]
struct FixedPoints {
    clutter: Vec<(ClutterModel, EpResult<SphericalGaussian, NaturalSpherical>)>,
    bpm: Vec<(BpmProblem, EpResult<FullGaussian, RankOneSite>)>,
}

fn conjugate_exactness(fixed: &mut FixedPoints) -> (bool, String) {
    let model = generate_clutter_data(&ClutterDataSpec::new(vec![2.0], 12, 0.0, 1)).unwrap();
    let ep = run_ep(&model, &fig1_options()).unwrap();
    let n = model.n() as f64;
    let v0 = model.prior_variance;
    let sum: f64 = model.data.iter().map(|y| y[0]).sum();
    let sum_sq: f64 = model.data.iter().map(|y| y[0] * y[0]).sum();
    let var = 1.0 / (1.0 / v0 + n);
    let mean = var * sum;
    let log_ev = -0.5 * n * LN_2PI - 0.5 * (1.0 + n * v0).ln() - 0.5 * (sum_sq - v0 * sum * sum / (1.0 + n * v0));
    let errs = [
        (ep.posterior.mean[0] - mean).abs(),
        (ep.posterior.variance - var).abs(),
        (ep.log_evidence - log_ev).abs(),
    ];
    let worst = errs.iter().copied().fold(0.0, f64::max);
    let ok = worst <= 1e-10 && ep.converged && ep.sweeps <= 2;
    let detail = format!("max error {worst:.2e}, sweeps {}, converged {}", ep.sweeps, ep.converged);
    fixed.clutter.push((model, ep));
    (ok, detail)
}

fn random_bpm(rng: &mut ChaCha8Rng) -> BpmDataset {
    let d = rng.random_range(1..=5);
    let n = rng.random_range(1..=10);
    let w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let score: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 0.3 * rng.sample::<f64, _>(StandardNormal);
        labels.push(if score >= 0.0 { 1 } else { -1 });
        features.push(x);
    }
    let slack = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.1..2.0) };
    BpmDataset::new(features, labels, slack, false).unwrap()
}

fn max_abs(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

fn first_pass_identity() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let one_sweep = EpOptions { max_sweeps: 1, ..Default::default() };
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let d = rng.random_range(1..=3);
        let x_true: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let spec = ClutterDataSpec::new(x_true, rng.random_range(1..=15), rng.random_range(0.0..0.9), rng.random());
        let model = generate_clutter_data(&spec).unwrap();
        let adf = run_adf(&model, &(0..model.n()).collect::<Vec<_>>()).unwrap();
        let ep = run_ep(&model, &one_sweep).unwrap();
        worst = worst
            .max(max_abs(&adf.posterior.mean, &ep.posterior.mean))
            .max((adf.posterior.variance - ep.posterior.variance).abs())
            .max((adf.log_evidence - ep.diagnostics.sweep_log_z).abs());
    }
    for _ in 0..10 {
        let data = random_bpm(&mut rng);
        let problem = BpmProblem::new(&data, data.dim().unwrap()).unwrap();
        let adf = run_adf(&problem, &(0..data.len()).collect::<Vec<_>>()).unwrap();
        let ep = run_ep(&problem, &one_sweep).unwrap();
        worst = worst
            .max(max_abs(&adf.posterior.mean, &ep.posterior.mean))
            .max((&adf.posterior.covariance - &ep.posterior.covariance).amax())
            .max((adf.log_evidence - ep.diagnostics.sweep_log_z).abs());
    }
    (worst <= 1e-12, format!("max difference {worst:.2e} over 20 clutter + 10 BPM instances"))
}

fn oracle_agreement() -> (bool, String) {
    let c = clutter_battery(200, 31).unwrap();
    let b = bpm_battery(200, 32).unwrap();
    (c <= 1e-8 && b <= 1e-8, format!("clutter max rel {c:.2e}, probit max rel {b:.2e}"))
}

fn ep_beats_adf(fixed: &mut FixedPoints) -> (bool, String) {
    let mut ep_mean = Vec::new();
    let mut adf_mean = Vec::new();
    let mut ep_ev = Vec::new();
    let mut adf_ev = Vec::new();
    let mut unconverged = 0;
    for seed in 1..=20 {
        let model = fig1_data(seed);
        let exact = exact_clutter(&model).unwrap();
        let adf = run_adf(&model, &(0..model.n()).collect::<Vec<_>>()).unwrap();
        let ep = run_ep(&model, &fig1_options()).unwrap();
        adf_mean.push((adf.posterior.mean[0] - exact.mean[0]).abs());
        ep_mean.push((ep.posterior.mean[0] - exact.mean[0]).abs());
        adf_ev.push((adf.log_evidence - exact.log_evidence).abs());
        ep_ev.push((ep.log_evidence - exact.log_evidence).abs());
        unconverged += usize::from(!ep.converged);
        fixed.clutter.push((model, ep));
    }
    let (em, am, ee, ae) = (median(ep_mean), median(adf_mean), median(ep_ev), median(adf_ev));
    (
        em <= am && ee <= ae,
        format!(
            "median |mean err| EP {em:.3e} vs ADF {am:.3e}; median |log-evidence err| EP {ee:.3e} vs ADF {ae:.3e}; {unconverged} EP runs unconverged"
        ),
    )
}

fn order_robustness() -> (bool, String) {
    let mut wins = 0;
    for seed in 1..=20u64 {
        let model = fig1_data(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut adf_means = Vec::new();
        let mut ep_means = Vec::new();
        for _ in 0..10 {
            let mut order: Vec<usize> = (0..model.n()).collect();
            order.shuffle(&mut rng);
            adf_means.push(run_adf(&model, &order).unwrap().posterior.mean[0]);
            let opts = EpOptions { schedule: Schedule::Fixed { order }, ..fig1_options() };
            ep_means.push(run_ep(&model, &opts).unwrap().posterior.mean[0]);
        }
        wins += usize::from(std_dev(&ep_means) <= std_dev(&adf_means));
    }
    (wins >= 15, format!("EP spread ≤ ADF spread in {wins}/20 seeds"))
}

fn tree_exactness() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let opts = EpOptions { tolerance: 1e-13, max_sweeps: 500, ..Default::default() };
    let mut worst_marginal: f64 = 0.0;
    let mut worst_evidence: f64 = 0.0;
    let mut all_converged = true;
    for _ in 0..25 {
        let n = rng.random_range(2..=8);
        let net = random_tree(n, 4, rng.random());
        let ep = loopy_ep(&net, &opts).unwrap();
        let exact = enumerate_discrete(&net).unwrap();
        all_converged &= ep.converged;
        for (a, b) in ep.beliefs.beliefs.iter().zip(&exact.marginals) {
            for (x, y) in a.iter().zip(b) {
                worst_marginal = worst_marginal.max((x - y).abs());
            }
        }
        worst_evidence = worst_evidence.max((ep.log_evidence - exact.log_partition).abs());
    }
    (
        all_converged && worst_marginal <= 1e-10 && worst_evidence <= 1e-10,
        format!("max marginal error {worst_marginal:.2e}, max log-evidence error {worst_evidence:.2e}, all converged {all_converged}"),
    )
}

fn bpm_correctness(fixed: &mut FixedPoints) -> (bool, String) {
    let tight = EpOptions { tolerance: 1e-8, max_sweeps: 200, ..Default::default() };
    let one = BpmDataset::new(vec![vec![1.0]], vec![1], 1.0, false).unwrap();
    let m1 = bpm_train(&one, 1, &tight).unwrap();
    let mean_err = (m1.posterior.mean[0] - 0.5641896).abs();
    let ev_err = (m1.log_evidence - 0.5f64.ln()).abs();

    let data = three_point_dataset();
    let problem = BpmProblem::new(&data, 3).unwrap();
    let model = bpm_train(&data, 3, &tight).unwrap();
    let (train_err, _) = error_rate(&model, &data).unwrap();
    let is = importance_sampler(|w| problem.log_likelihood(w), &FullGaussian::standard(3), 1_000_000, 7).unwrap();
    let reference = DVector::from_vec(is.mean.value.clone());
    let radius = 3.0 * DVector::from_vec(is.mean.standard_error.clone()).norm();
    let dist = (&model.posterior.mean - &reference).norm();

    fixed.bpm.push((BpmProblem::new(&one, 1).unwrap(), run_ep(&BpmProblem::new(&one, 1).unwrap(), &tight).unwrap()));
    fixed.bpm.push((problem.clone(), run_ep(&problem, &tight).unwrap()));
    let ok = mean_err <= 1e-6 && ev_err <= 1e-6 && train_err == 0.0 && dist <= radius && model.diagnostics.converged;
    (
        ok,
        format!(
            "one-point mean err {mean_err:.1e}, log-evidence err {ev_err:.1e}; three-point training error {train_err}, |EP - IS| = {dist:.2e} vs 3-SE radius {radius:.2e}"
        ),
    )
}

fn per_site_tally(d: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
    let n = 40;
    let features: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let labels: Vec<i8> = (0..n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
    let data = BpmDataset::new(features, labels, 1.0, false).unwrap();
    let problem = BpmProblem::new(&data, d).unwrap();
    let mut counts = Vec::new();
    let opts = EpOptions { max_sweeps: 2, tolerance: 1e-300, ..Default::default() };
    run_ep_observed(&problem, &opts, |snap| counts.push(snap.tally.count)).unwrap();
    // The second sweep removes and refits non-vacuous sites: a full update.
    (counts[1] - counts[0]) as f64 / n as f64
}

fn complexity() -> (bool, String) {
    let (t10, t20) = (per_site_tally(10), per_site_tally(20));
    let ratio = t20 / t10;
    ((3.5..=4.5).contains(&ratio), format!("ops per site update d=10: {t10}, d=20: {t20}, ratio {ratio:.3}"))
}

fn energy_diagnostics(fixed: &FixedPoints) -> (bool, String) {
    let mut constraint: f64 = 0.0;
    let mut moments: f64 = 0.0;
    let mut count = 0;
    let mut unevaluable = 0;
    let mut check = |report: ep_core::engine::EnergyReport| {
        constraint = constraint.max(report.constraint_residual);
        moments = moments.max(report.max_moment_residual());
        unevaluable += report.unevaluable().len();
        count += 1;
    };
    for (model, ep) in fixed.clutter.iter().filter(|(_, ep)| ep.converged) {
        check(ep_energy(model, &ep.posterior, &ep.sites).unwrap());
    }
    for (problem, ep) in fixed.bpm.iter().filter(|(_, ep)| ep.converged) {
        check(ep_energy(problem, &ep.posterior, &ep.sites).unwrap());
    }
    (
        constraint <= 1e-10 && moments <= 1e-4 && unevaluable == 0,
        format!("{count} fixed points: max constraint residual {constraint:.2e}, max moment residual {moments:.2e}, {unevaluable} unevaluable sites"),
    )
}

#[test]
fn acceptance_criteria() {
    let mut fixed = FixedPoints::default();
    let s = Duration::from_secs;
    let results = [
        report(1, "conjugate exactness", Some(s(1)), || conjugate_exactness(&mut fixed)),
        report(2, "first-pass identity", Some(s(5)), first_pass_identity),
        report(3, "oracle agreement", Some(s(30)), oracle_agreement),
        report(4, "EP beats ADF", Some(s(60)), || ep_beats_adf(&mut fixed)),
        report(5, "order robustness", None, order_robustness),
        report(6, "tree exactness", Some(s(10)), tree_exactness),
        report(7, "BPM correctness", Some(s(60)), || bpm_correctness(&mut fixed)),
        report(8, "complexity", None, complexity),
        report(9, "energy diagnostics", None, || energy_diagnostics(&fixed)),
    ];
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, ok)| !**ok).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

