//! Discrete factor graphs under a fully factorized approximation.
//!
//! With `q(x) = ∏_k q_k(x_k)`, one ADF pass over the factors is the
//! Boyen–Koller filter ([`bk_adf`]) and iterating to a fixed point is loopy
//! belief propagation ([`loopy_ep`]).

mod generators;
mod propagation;

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use generators::{chain, frustrated_triangle, random_tree};
pub use propagation::{bk_adf, loopy_ep, loopy_ep_observed, AdfBeliefs, LoopyResult, POSITIVITY_FLOOR};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub id: String,
    pub cardinality: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    /// A conditional table `p(x_last | x_rest)`.
    Cpt,
    Potential,
}

/// A nonnegative table over `scope`, flattened row-major with the last scope
/// variable varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub id: String,
    pub scope: Vec<String>,
    pub table: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<FactorKind>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetworkDocument {
    variables: Vec<Variable>,
    factors: Vec<Factor>,
}

/// A validated network with scopes resolved to variable indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteFactorGraph {
    variables: Vec<Variable>,
    factors: Vec<Factor>,
    scopes: Vec<Vec<usize>>,
    incident: Vec<Vec<(usize, usize)>>,
}

impl DiscreteFactorGraph {
    pub fn new(variables: Vec<Variable>, factors: Vec<Factor>) -> Result<Self> {
        let mut index = HashMap::new();
        for (k, v) in variables.iter().enumerate() {
            if v.cardinality < 2 {
                return Err(Error::InvalidNetwork(format!("variable {} has cardinality {}", v.id, v.cardinality)));
            }
            if index.insert(v.id.as_str(), k).is_some() {
                return Err(Error::InvalidNetwork(format!("duplicate variable id {}", v.id)));
            }
        }
        let mut factor_ids = HashMap::new();
        let mut scopes = Vec::with_capacity(factors.len());
        let mut incident = vec![Vec::new(); variables.len()];
        for (i, f) in factors.iter().enumerate() {
            if factor_ids.insert(f.id.as_str(), i).is_some() {
                return Err(Error::InvalidNetwork(format!("duplicate factor id {}", f.id)));
            }
            if f.scope.is_empty() {
                return Err(Error::InvalidNetwork(format!("factor {} has an empty scope", f.id)));
            }
            let mut scope = Vec::with_capacity(f.scope.len());
            for (pos, id) in f.scope.iter().enumerate() {
                let &k = index
                    .get(id.as_str())
                    .ok_or_else(|| Error::InvalidNetwork(format!("factor {} refers to unknown variable {id}", f.id)))?;
                if scope.contains(&k) {
                    return Err(Error::InvalidNetwork(format!("factor {} lists variable {id} twice", f.id)));
                }
                scope.push(k);
                incident[k].push((i, pos));
            }
            let size: usize = scope.iter().map(|&k| variables[k].cardinality).product();
            if f.table.len() != size {
                return Err(Error::InvalidNetwork(format!(
                    "factor {} has {} table entries, scope needs {size}",
                    f.id,
                    f.table.len()
                )));
            }
            if f.table.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
                return Err(Error::InvalidNetwork(format!("factor {} has a negative or non-finite entry", f.id)));
            }
            if f.table.iter().all(|&t| t == 0.0) {
                return Err(Error::InvalidNetwork(format!("factor {} is identically zero", f.id)));
            }
            scopes.push(scope);
        }
        Ok(Self { variables, factors, scopes, incident })
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn cardinality(&self, k: usize) -> usize {
        self.variables[k].cardinality
    }

    pub fn variable_index(&self, id: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.id == id)
    }

    /// Variable indices in factor `i`'s scope, in table order.
    pub fn scope(&self, i: usize) -> &[usize] {
        &self.scopes[i]
    }

    /// `(factor, position in its scope)` for every factor touching `k`.
    pub fn incident(&self, k: usize) -> &[(usize, usize)] {
        &self.incident[k]
    }

    /// Adds an indicator factor clamping `id` to `value`.
    pub fn observe(&self, id: &str, value: usize) -> Result<Self> {
        let k = self
            .variable_index(id)
            .ok_or_else(|| Error::InvalidNetwork(format!("unknown variable {id}")))?;
        let card = self.cardinality(k);
        if value >= card {
            return Err(Error::InvalidNetwork(format!("value {value} out of range for {id}")));
        }
        let mut table = vec![0.0; card];
        table[value] = 1.0;
        let mut factors = self.factors.clone();
        factors.push(Factor { id: format!("observe:{id}"), scope: vec![id.to_string()], table, kind: None });
        Self::new(self.variables.clone(), factors)
    }

    /// True when the variable–factor incidence graph has no cycles, so
    /// loopy propagation is exact.
    pub fn is_forest(&self) -> bool {
        let nv = self.variables.len();
        let mut parent: Vec<usize> = (0..nv + self.factors.len()).collect();
        fn find(p: &mut [usize], mut a: usize) -> usize {
            while p[a] != a {
                p[a] = p[p[a]];
                a = p[a];
            }
            a
        }
        for (i, scope) in self.scopes.iter().enumerate() {
            for &k in scope {
                let (a, b) = (find(&mut parent, k), find(&mut parent, nv + i));
                if a == b {
                    return false;
                }
                parent[a] = b;
            }
        }
        true
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = NetworkDocument { variables: self.variables.clone(), factors: self.factors.clone() };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// Parses and validates a JSON network document:
///
/// ```json
/// {"variables": [{"id": "a", "cardinality": 2}],
///  "factors": [{"id": "f", "scope": ["a"], "table": [0.3, 0.7]}]}
/// ```
pub fn load_network<R: Read>(reader: R) -> Result<DiscreteFactorGraph> {
    let doc: NetworkDocument = serde_json::from_reader(reader)?;
    DiscreteFactorGraph::new(doc.variables, doc.factors)
}

/// Row-major strides with the last scope variable fastest.
pub(crate) fn strides(cards: &[usize]) -> Vec<usize> {
    let mut s = vec![1; cards.len()];
    for j in (0..cards.len().saturating_sub(1)).rev() {
        s[j] = s[j + 1] * cards[j + 1];
    }
    s
}

/// One probability vector per variable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeliefSet {
    pub ids: Vec<String>,
    pub beliefs: Vec<Vec<f64>>,
}

impl BeliefSet {
    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.ids.iter().position(|v| v == id).map(|k| self.beliefs[k].as_slice())
    }

    /// Per-variable L1 distance to `other`.
    pub fn l1_distances(&self, other: &[Vec<f64>]) -> Vec<f64> {
        self.beliefs
            .iter()
            .zip(other)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
            .collect()
    }

    /// Rows of `variable,state,probability`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["variable", "state", "probability"])?;
        for (id, b) in self.ids.iter().zip(&self.beliefs) {
            for (s, p) in b.iter().enumerate() {
                out.write_record([id.clone(), s.to_string(), format!("{p:?}")])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// A factor-to-variable message `exp(log_scale) · shape`, with `shape`
/// summing to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Message {
    pub shape: Vec<f64>,
    pub log_scale: f64,
}

impl Message {
    pub fn unit(card: usize) -> Self {
        Self { shape: vec![1.0 / card as f64; card], log_scale: (card as f64).ln() }
    }
}

/// Messages `t̃_ik` for every (factor, scope position), plus each factor's
/// constant so that `t̃_i(x) = exp(factor_log_z[i]) ∏_k t̃_ik(x_k)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MessageSet {
    pub messages: Vec<Vec<Message>>,
    pub factor_log_z: Vec<f64>,
    #[serde(skip)]
    incident: Vec<Vec<(usize, usize)>>,
    #[serde(skip)]
    cards: Vec<usize>,
    #[serde(skip)]
    ids: Vec<String>,
}

impl MessageSet {
    /// All messages equal to 1, so every `t̃_i ≡ 1`.
    pub fn unit(net: &DiscreteFactorGraph) -> Self {
        let messages = (0..net.factors.len())
            .map(|i| net.scope(i).iter().map(|&k| Message::unit(net.cardinality(k))).collect())
            .collect();
        Self {
            messages,
            factor_log_z: vec![0.0; net.factors.len()],
            incident: net.incident.clone(),
            cards: net.variables.iter().map(|v| v.cardinality).collect(),
            ids: net.variables.iter().map(|v| v.id.clone()).collect(),
        }
    }

    /// Replaces the shape of the message from factor `i` at scope position `pos`.
    pub fn set_shape(&mut self, i: usize, pos: usize, shape: Vec<f64>) {
        self.messages[i][pos].shape = shape;
    }

    /// `q_k ∝ ∏_{i ∋ k} t̃_ik`.
    pub fn belief(&self, k: usize) -> Result<Vec<f64>> {
        let mut b = vec![1.0; self.cards[k]];
        for &(i, pos) in &self.incident[k] {
            for (bv, m) in b.iter_mut().zip(&self.messages[i][pos].shape) {
                *bv *= m;
            }
        }
        let total: f64 = b.iter().sum();
        if !(total > 0.0) {
            return Err(Error::ContradictoryMessages { variable: self.ids[k].clone() });
        }
        Ok(b.into_iter().map(|v| v / total).collect())
    }

    /// `ln Σ_x ∏_i t̃_i(x)`, the evidence implied by the current messages.
    pub fn log_evidence(&self) -> f64 {
        let mut total: f64 = self.factor_log_z.iter().sum();
        for (k, inc) in self.incident.iter().enumerate() {
            let mut log_terms = vec![0.0; self.cards[k]];
            for &(i, pos) in inc {
                let m = &self.messages[i][pos];
                total += m.log_scale;
                for (lt, s) in log_terms.iter_mut().zip(&m.shape) {
                    *lt += s.ln();
                }
            }
            total += crate::gaussian::special::log_sum_exp(log_terms);
        }
        total
    }
}
