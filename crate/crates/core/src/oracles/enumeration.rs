use crate::factor_graph::{strides, DiscreteFactorGraph};
use crate::{Error, Result};

/// Largest joint state space that will be enumerated.
pub const MAX_JOINT_STATES: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteExact {
    pub marginals: Vec<Vec<f64>>,
    /// `ln Σ_x ∏_i t_i(x)`.
    pub log_partition: f64,
}

/// Exact marginals and log partition by summing the product of all factor
/// tables over every joint configuration.
///
/// Two passes over the state space: the first finds the largest log product,
/// the second accumulates scaled masses.
pub fn enumerate_discrete(net: &DiscreteFactorGraph) -> Result<DiscreteExact> {
    let cards: Vec<usize> = net.variables().iter().map(|v| v.cardinality).collect();
    let states = cards.iter().fold(1u128, |acc, &c| acc.saturating_mul(c as u128));
    if states > MAX_JOINT_STATES {
        return Err(Error::StateSpaceTooLarge { states, limit: MAX_JOINT_STATES });
    }
    let log_tables: Vec<Vec<f64>> = net.factors().iter().map(|f| f.table.iter().map(|t| t.ln()).collect()).collect();
    let factor_strides: Vec<Vec<usize>> = (0..net.factors().len())
        .map(|i| strides(&net.scope(i).iter().map(|&k| cards[k]).collect::<Vec<_>>()))
        .collect();
    let log_product = |state: &[usize]| -> f64 {
        let mut total = 0.0;
        for (i, lt) in log_tables.iter().enumerate() {
            let idx: usize = net.scope(i).iter().zip(&factor_strides[i]).map(|(&k, s)| state[k] * s).sum();
            total += lt[idx];
        }
        total
    };
    let advance = |state: &mut [usize]| -> bool {
        for j in (0..state.len()).rev() {
            state[j] += 1;
            if state[j] < cards[j] {
                return true;
            }
            state[j] = 0;
        }
        false
    };

    let mut state = vec![0usize; cards.len()];
    let mut max = f64::NEG_INFINITY;
    loop {
        max = max.max(log_product(&state));
        if !advance(&mut state) {
            break;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(Error::InvalidNetwork("every joint configuration has zero mass".into()));
    }

    let mut marginals: Vec<Vec<f64>> = cards.iter().map(|&c| vec![0.0; c]).collect();
    let mut total = 0.0;
    let mut state = vec![0usize; cards.len()];
    loop {
        let mass = (log_product(&state) - max).exp();
        total += mass;
        for (k, &s) in state.iter().enumerate() {
            marginals[k][s] += mass;
        }
        if !advance(&mut state) {
            break;
        }
    }
    for m in &mut marginals {
        for v in m.iter_mut() {
            *v /= total;
        }
    }
    Ok(DiscreteExact { marginals, log_partition: max + total.ln() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor_graph::{Factor, Variable};

    fn binary(ids: &[&str]) -> Vec<Variable> {
        ids.iter().map(|id| Variable { id: id.to_string(), cardinality: 2 }).collect()
    }

    fn factor(id: &str, scope: &[&str], table: &[f64]) -> Factor {
        Factor { id: id.into(), scope: scope.iter().map(|s| s.to_string()).collect(), table: table.to_vec(), kind: None }
    }

    #[test]
    fn single_unary() {
        let net = DiscreteFactorGraph::new(binary(&["a"]), vec![factor("f", &["a"], &[0.3, 0.7])]).unwrap();
        let ex = enumerate_discrete(&net).unwrap();
        assert!((ex.marginals[0][0] - 0.3).abs() < 1e-15);
        assert!(ex.log_partition.abs() < 1e-15);
    }

    #[test]
    fn independent_unaries_multiply() {
        let net = DiscreteFactorGraph::new(
            binary(&["a", "b"]),
            vec![factor("f", &["a"], &[1.0, 3.0]), factor("g", &["b"], &[2.0, 2.0])],
        )
        .unwrap();
        let ex = enumerate_discrete(&net).unwrap();
        for (got, want) in ex.marginals.iter().flatten().zip([0.25, 0.75, 0.5, 0.5]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!((ex.log_partition - 16f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn three_cycle_by_hand() {
        // ψ_ab = [[2,1],[1,3]], ψ_bc = [[1,2],[2,1]], ψ_ca = [[4,1],[1,1]].
        // Products over (a,b,c):
        //   000: 2·1·4 = 8    001: 2·2·1 = 4    010: 1·2·4 = 8    011: 1·1·1 = 1
        //   100: 1·1·1 = 1    101: 1·2·1 = 2    110: 3·2·1 = 6    111: 3·1·1 = 3
        // Z = 33; p(a=0) = 21/33, p(b=0) = 15/33, p(c=0) = 23/33.
        let net = DiscreteFactorGraph::new(
            binary(&["a", "b", "c"]),
            vec![
                factor("ab", &["a", "b"], &[2.0, 1.0, 1.0, 3.0]),
                factor("bc", &["b", "c"], &[1.0, 2.0, 2.0, 1.0]),
                factor("ca", &["c", "a"], &[4.0, 1.0, 1.0, 1.0]),
            ],
        )
        .unwrap();
        let ex = enumerate_discrete(&net).unwrap();
        assert!((ex.log_partition - 33f64.ln()).abs() < 1e-12);
        for (k, num) in [21.0, 15.0, 23.0].iter().enumerate() {
            assert!((ex.marginals[k][0] - num / 33.0).abs() < 1e-12);
            assert!((ex.marginals[k][1] - (1.0 - num / 33.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn refuses_huge_state_space() {
        let vars: Vec<Variable> = (0..24).map(|k| Variable { id: format!("x{k}"), cardinality: 2 }).collect();
        let net = DiscreteFactorGraph::new(vars, vec![]).unwrap();
        assert!(matches!(enumerate_discrete(&net), Err(Error::StateSpaceTooLarge { .. })));
    }
}
