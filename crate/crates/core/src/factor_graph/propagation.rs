use serde::Serialize;

use super::{BeliefSet, DiscreteFactorGraph, Message, MessageSet};
use crate::engine::{EpOptions, SweepOrder};
use crate::gaussian::OpTally;
use crate::{Error, Result};

/// Message components below this are raised to it before dividing.
pub const POSITIVITY_FLOOR: f64 = 1e-300;

/// What multiplying factor `i` into a fully factorized `q` produces.
struct Tilt {
    z: f64,
    /// `raw[pos](x_k) = Σ_{x \ x_k} t_i(x) ∏_{j≠k} q_j(x_j)`.
    raw: Vec<Vec<f64>>,
}

fn tilt(net: &DiscreteFactorGraph, i: usize, q: &[&[f64]], tally: &mut OpTally) -> Tilt {
    let scope = net.scope(i);
    let cards: Vec<usize> = scope.iter().map(|&k| net.cardinality(k)).collect();
    let m = scope.len();
    let mut raw: Vec<Vec<f64>> = cards.iter().map(|&c| vec![0.0; c]).collect();
    let mut z = 0.0;
    let mut state = vec![0usize; m];
    let mut prefix = vec![1.0; m + 1];
    let mut suffix = vec![1.0; m + 1];
    let table = &net.factors()[i].table;
    for &t in table {
        if t != 0.0 {
            for j in 0..m {
                prefix[j + 1] = prefix[j] * q[j][state[j]];
            }
            for j in (0..m).rev() {
                suffix[j] = suffix[j + 1] * q[j][state[j]];
            }
            z += t * prefix[m];
            for j in 0..m {
                raw[j][state[j]] += t * prefix[j] * suffix[j + 1];
            }
        }
        for j in (0..m).rev() {
            state[j] += 1;
            if state[j] < cards[j] {
                break;
            }
            state[j] = 0;
        }
    }
    tally.charge(table.len() * 3 * m);
    Tilt { z, raw }
}

fn normalize(v: &mut [f64]) -> f64 {
    let total: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= total;
    }
    total
}

fn uniform_beliefs(net: &DiscreteFactorGraph) -> Vec<Vec<f64>> {
    net.variables().iter().map(|v| vec![1.0 / v.cardinality as f64; v.cardinality]).collect()
}

fn belief_set(net: &DiscreteFactorGraph, beliefs: Vec<Vec<f64>>) -> BeliefSet {
    BeliefSet { ids: net.variables().iter().map(|v| v.id.clone()).collect(), beliefs }
}

fn contradiction(net: &DiscreteFactorGraph, i: usize) -> Error {
    Error::ContradictoryEvidence { factor: net.factors()[i].id.clone() }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdfBeliefs {
    pub beliefs: BeliefSet,
    /// `Σ ln Z_i` plus `Σ_k ln |X_k|`, which converts the uniform starting
    /// distribution back to counting measure.
    pub log_evidence: f64,
    pub tally: OpTally,
}

/// One pass of ADF with a fully factorized `q`: each factor in `order` is
/// multiplied in and every `q_k` in its scope replaced by the marginal of
/// the result.
pub fn bk_adf(net: &DiscreteFactorGraph, order: &[usize]) -> Result<AdfBeliefs> {
    crate::engine::validate_order(order, net.factors().len())?;
    let mut q = uniform_beliefs(net);
    let mut tally = OpTally::new();
    let mut log_evidence: f64 = net.variables().iter().map(|v| (v.cardinality as f64).ln()).sum();
    for &i in order {
        let scope = net.scope(i);
        let views: Vec<&[f64]> = scope.iter().map(|&k| q[k].as_slice()).collect();
        let Tilt { z, raw } = tilt(net, i, &views, &mut tally);
        if !(z > 0.0) {
            return Err(contradiction(net, i));
        }
        log_evidence += z.ln();
        for (pos, &k) in scope.iter().enumerate() {
            let marginal: Vec<f64> = raw[pos].iter().zip(&q[k]).map(|(r, qk)| r * qk / z).collect();
            q[k] = marginal;
        }
    }
    Ok(AdfBeliefs { beliefs: belief_set(net, q), log_evidence, tally })
}

#[derive(Debug, Clone, Serialize)]
pub struct LoopyResult {
    pub beliefs: BeliefSet,
    pub messages: MessageSet,
    pub converged: bool,
    pub sweeps: usize,
    /// `ln Σ_x ∏_i t̃_i(x)`; exact on forests, a Bethe-type approximation
    /// otherwise.
    pub log_evidence: f64,
    pub evidence_is_approximate: bool,
    /// Divisions where a message component was raised to [`POSITIVITY_FLOOR`].
    pub floor_events: usize,
    pub last_change: f64,
    pub tally: OpTally,
}

/// Expectation propagation with a fully factorized `q`, i.e. loopy belief
/// propagation.
pub fn loopy_ep(net: &DiscreteFactorGraph, opts: &EpOptions) -> Result<LoopyResult> {
    loopy_ep_observed(net, opts, |_, _, _| {})
}

/// [`loopy_ep`], calling `observer(sweep, beliefs, messages)` after each sweep.
///
/// Messages start at 1. For factor `i`, the cavity `q_k / t̃_ik` is formed for
/// every variable in scope, the new message is
/// `t̃_ik(x_k) = Σ_{x \ x_k} t_i(x) ∏_{j≠k} q\_j(x_j)` and `q_k` becomes the
/// cavity times the new message. With damping `γ < 1` messages are mixed
/// geometrically, `old^(1-γ) new^γ`.
pub fn loopy_ep_observed<F>(net: &DiscreteFactorGraph, opts: &EpOptions, mut observer: F) -> Result<LoopyResult>
where
    F: FnMut(usize, &[Vec<f64>], &MessageSet),
{
    let nf = net.factors().len();
    opts.validate(nf)?;
    let mut q = uniform_beliefs(net);
    let mut msgs = MessageSet::unit(net);
    let mut tally = OpTally::new();
    let mut floor_events = 0;
    let mut orders = SweepOrder::new(&opts.schedule, nf);
    let gamma = opts.damping;
    let mut sweeps = 0;
    let mut converged = nf == 0;
    let mut last_change = 0.0;

    while !converged && sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for i in orders.next_order() {
            let scope = net.scope(i);
            let mut cavities = Vec::with_capacity(scope.len());
            for (pos, &k) in scope.iter().enumerate() {
                let mut cav: Vec<f64> = q[k]
                    .iter()
                    .zip(&msgs.messages[i][pos].shape)
                    .map(|(qk, &m)| {
                        if m < POSITIVITY_FLOOR {
                            floor_events += 1;
                            qk / POSITIVITY_FLOOR
                        } else {
                            qk / m
                        }
                    })
                    .collect();
                if !(normalize(&mut cav) > 0.0) {
                    return Err(contradiction(net, i));
                }
                cavities.push(cav);
            }
            let views: Vec<&[f64]> = cavities.iter().map(|c| c.as_slice()).collect();
            let Tilt { z, raw } = tilt(net, i, &views, &mut tally);
            if !(z > 0.0) {
                return Err(contradiction(net, i));
            }
            let log_z = z.ln();
            for (pos, &k) in scope.iter().enumerate() {
                let mut shape = raw[pos].clone();
                let total = normalize(&mut shape);
                let mut fresh = Message { shape, log_scale: total.ln() - log_z };
                let old = &msgs.messages[i][pos];
                if gamma != 1.0 {
                    fresh.shape = fresh
                        .shape
                        .iter()
                        .zip(&old.shape)
                        .map(|(n, o)| o.powf(1.0 - gamma) * n.powf(gamma))
                        .collect();
                    let t = normalize(&mut fresh.shape);
                    fresh.log_scale = (1.0 - gamma) * old.log_scale + gamma * fresh.log_scale + t.ln();
                }
                let change = fresh.shape.iter().zip(&old.shape).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                max_change = max_change.max(change);
                let mut qk: Vec<f64> = cavities[pos].iter().zip(&fresh.shape).map(|(c, m)| c * m).collect();
                if !(normalize(&mut qk) > 0.0) {
                    return Err(Error::ContradictoryMessages { variable: net.variables()[k].id.clone() });
                }
                q[k] = qk;
                msgs.messages[i][pos] = fresh;
            }
            msgs.factor_log_z[i] = if gamma == 1.0 { log_z } else { (1.0 - gamma) * msgs.factor_log_z[i] + gamma * log_z };
        }
        last_change = max_change;
        observer(sweeps, &q, &msgs);
        converged = max_change < opts.tolerance;
    }

    Ok(LoopyResult {
        log_evidence: msgs.log_evidence(),
        evidence_is_approximate: !net.is_forest(),
        beliefs: belief_set(net, q),
        messages: msgs,
        converged,
        sweeps,
        floor_events,
        last_change,
        tally,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor_graph::{Factor, Variable};
    use crate::oracles::enumerate_discrete;

    fn net(vars: &[(&str, usize)], factors: &[(&str, &[&str], &[f64])]) -> DiscreteFactorGraph {
        DiscreteFactorGraph::new(
            vars.iter().map(|(id, c)| Variable { id: id.to_string(), cardinality: *c }).collect(),
            factors
                .iter()
                .map(|(id, scope, table)| Factor {
                    id: id.to_string(),
                    scope: scope.iter().map(|s| s.to_string()).collect(),
                    table: table.to_vec(),
                    kind: None,
                })
                .collect(),
        )
        .unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn single_unary_factor() {
        let g = net(&[("a", 2)], &[("f", &["a"], &[0.3, 0.7])]);
        let adf = bk_adf(&g, &[0]).unwrap();
        assert!(close(&adf.beliefs.beliefs[0], &[0.3, 0.7], 1e-15));
        assert!(adf.log_evidence.abs() < 1e-15);
        let ep = loopy_ep(&g, &EpOptions::default()).unwrap();
        assert!(close(&ep.beliefs.beliefs[0], &[0.3, 0.7], 1e-15));
        assert!(ep.log_evidence.abs() < 1e-15);
        assert!(ep.converged);
    }

    #[test]
    fn independent_factors_are_exact() {
        let g = net(&[("a", 2), ("b", 3)], &[("f", &["a"], &[1.0, 3.0]), ("g", &["b"], &[2.0, 1.0, 1.0])]);
        let adf = bk_adf(&g, &[1, 0]).unwrap();
        assert!(close(&adf.beliefs.beliefs[0], &[0.25, 0.75], 1e-15));
        assert!(close(&adf.beliefs.beliefs[1], &[0.5, 0.25, 0.25], 1e-15));
        assert!((adf.log_evidence - 16f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn adf_marginals_follow_each_tilt() {
        let g = net(
            &[("a", 2), ("b", 2)],
            &[("pa", &["a"], &[0.6, 0.4]), ("pb", &["a", "b"], &[0.9, 0.1, 0.2, 0.8])],
        );
        let adf = bk_adf(&g, &[0, 1]).unwrap();
        let exact = enumerate_discrete(&g).unwrap();
        for k in 0..2 {
            assert!(close(&adf.beliefs.beliefs[k], &exact.marginals[k], 1e-15));
        }
        assert!((adf.log_evidence - exact.log_partition).abs() < 1e-14);
    }

    #[test]
    fn contradictory_evidence_names_the_factor() {
        let g = net(&[("a", 2)], &[("f", &["a"], &[1.0, 0.0]), ("g", &["a"], &[0.0, 1.0])]);
        match bk_adf(&g, &[0, 1]) {
            Err(Error::ContradictoryEvidence { factor }) => assert_eq!(factor, "g"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn first_sweep_matches_adf() {
        let g = crate::factor_graph::frustrated_triangle(1.5, 0.3);
        let order = vec![3, 0, 4, 1, 2, 5];
        let adf = bk_adf(&g, &order).unwrap();
        let opts = EpOptions { max_sweeps: 1, schedule: crate::engine::Schedule::Fixed { order }, ..Default::default() };
        let ep = loopy_ep(&g, &opts).unwrap();
        for k in 0..3 {
            assert!(close(&adf.beliefs.beliefs[k], &ep.beliefs.beliefs[k], 1e-12));
        }
    }

    #[test]
    fn maintained_beliefs_match_message_products() {
        let g = crate::factor_graph::random_tree(6, 3, 17);
        let mut worst: f64 = 0.0;
        loopy_ep_observed(&g, &EpOptions::default(), |_, q, msgs| {
            for (k, qk) in q.iter().enumerate() {
                let rebuilt = msgs.belief(k).unwrap();
                worst = worst.max(qk.iter().zip(&rebuilt).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
                assert!((qk.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        })
        .unwrap();
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn zero_table_entries_use_floor() {
        let g = net(
            &[("a", 2), ("b", 2)],
            &[("f", &["a"], &[1.0, 0.0]), ("g", &["a", "b"], &[0.5, 0.5, 0.0, 1.0]), ("h", &["b"], &[0.3, 0.7])],
        );
        let ep = loopy_ep(&g, &EpOptions { tolerance: 1e-12, ..Default::default() }).unwrap();
        let exact = enumerate_discrete(&g).unwrap();
        assert!(ep.floor_events > 0);
        for k in 0..2 {
            assert!(close(&ep.beliefs.beliefs[k], &exact.marginals[k], 1e-10));
        }
    }
}
