use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DiscreteFactorGraph, Factor, FactorKind, Variable};

fn potential(id: String, scope: Vec<String>, table: Vec<f64>) -> Factor {
    Factor { id, scope, table, kind: Some(FactorKind::Potential) }
}

/// A random tree on `n` variables with cardinalities in `2..=max_card`: a
/// unary potential on every variable and a pairwise potential between each
/// variable `k ≥ 1` and a uniformly chosen earlier variable. Entries are
/// drawn from `[0.05, 1)`.
pub fn random_tree(n: usize, max_card: usize, seed: u64) -> DiscreteFactorGraph {
    assert!(max_card >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let variables: Vec<Variable> = (0..n)
        .map(|k| Variable { id: format!("x{k}"), cardinality: rng.random_range(2..=max_card) })
        .collect();
    let mut factors = Vec::new();
    for v in &variables {
        let table = (0..v.cardinality).map(|_| rng.random_range(0.05..1.0)).collect();
        factors.push(potential(format!("u_{}", v.id), vec![v.id.clone()], table));
    }
    for k in 1..n {
        let parent = rng.random_range(0..k);
        let size = variables[parent].cardinality * variables[k].cardinality;
        let table = (0..size).map(|_| rng.random_range(0.05..1.0)).collect();
        factors.push(potential(
            format!("e_{}_{}", variables[parent].id, variables[k].id),
            vec![variables[parent].id.clone(), variables[k].id.clone()],
            table,
        ));
    }
    DiscreteFactorGraph::new(variables, factors).expect("generated tree is valid")
}

/// A chain `x0 - x1 - … ` of binary variables written as CPTs: a prior on
/// `x0` and `p(x_k | x_{k-1})` that copies the parent with probability `stay`.
pub fn chain(n: usize, stay: f64) -> DiscreteFactorGraph {
    let variables: Vec<Variable> = (0..n).map(|k| Variable { id: format!("x{k}"), cardinality: 2 }).collect();
    let mut factors = Vec::new();
    if n > 0 {
        factors.push(Factor { id: "p_x0".into(), scope: vec!["x0".into()], table: vec![0.7, 0.3], kind: Some(FactorKind::Cpt) });
    }
    for k in 1..n {
        factors.push(Factor {
            id: format!("p_x{k}"),
            scope: vec![format!("x{}", k - 1), format!("x{k}")],
            table: vec![stay, 1.0 - stay, 1.0 - stay, stay],
            kind: Some(FactorKind::Cpt),
        });
    }
    DiscreteFactorGraph::new(variables, factors).expect("chain is valid")
}

/// Three binary variables on a cycle with pairwise potentials `e^{coupling}`
/// when the endpoints differ and `e^{-coupling}` when they agree, plus a
/// unary tilt `e^{±bias}` on each variable (alternating in sign) so the
/// symmetric fixed point is not trivially uniform. For large `coupling`
/// undamped propagation can oscillate.
pub fn frustrated_triangle(coupling: f64, bias: f64) -> DiscreteFactorGraph {
    let ids = ["a", "b", "c"];
    let variables = ids.iter().map(|id| Variable { id: id.to_string(), cardinality: 2 }).collect();
    let (same, diff) = ((-coupling).exp(), coupling.exp());
    let mut factors = Vec::new();
    for (j, id) in ids.iter().enumerate() {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        factors.push(potential(format!("u_{id}"), vec![id.to_string()], vec![(sign * bias).exp(), (-sign * bias).exp()]));
    }
    for j in 0..3 {
        let (a, b) = (ids[j], ids[(j + 1) % 3]);
        factors.push(potential(format!("e_{a}_{b}"), vec![a.into(), b.into()], vec![same, diff, diff, same]));
    }
    DiscreteFactorGraph::new(variables, factors).expect("triangle is valid")
}
