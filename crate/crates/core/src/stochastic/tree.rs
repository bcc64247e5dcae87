//! Finite-support disturbance laws and the event trees they generate.

use std::io::Write;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::Disturbance;
use crate::error::{Error, Result};

pub const DEFAULT_NODE_CAP: usize = 100_000;
const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum DisturbanceLaw {
    /// Outcome `j` occurs with probability `probs[j]` every period.
    Iid { probs: Vec<f64> },
    /// Outcome of period `t+1` drawn from row `transition[outcome(t)]`;
    /// the first period uses row `initial_state`.
    Markov {
        initial_state: usize,
        transition: Vec<Vec<f64>>,
    },
}

/// Joint law of the common disturbance `(w, v)` over a finite outcome set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    pub outcomes: Vec<Disturbance>,
    pub law: DisturbanceLaw,
}

impl DisturbanceSpec {
    /// The zero disturbance with probability one.
    pub fn deterministic() -> Self {
        Self {
            outcomes: vec![Disturbance::ZERO],
            law: DisturbanceLaw::Iid { probs: vec![1.0] },
        }
    }

    /// Independent i.i.d. `w` and `v`, each a list of `(value, probability)`;
    /// the joint outcomes enumerate `w` outer, `v` inner.
    pub fn independent(w: &[(f64, f64)], v: &[(f64, f64)]) -> Self {
        let mut outcomes = Vec::with_capacity(w.len() * v.len());
        let mut probs = Vec::with_capacity(w.len() * v.len());
        for &(wv, wp) in w {
            for &(vv, vp) in v {
                outcomes.push(Disturbance { w: wv, v: vv });
                probs.push(wp * vp);
            }
        }
        Self {
            outcomes,
            law: DisturbanceLaw::Iid { probs },
        }
    }

    /// `w = ±w_mag` and `v = ±v_mag`, each sign with probability one half.
    /// A zero magnitude collapses that component to a single outcome.
    pub fn symmetric(w_mag: f64, v_mag: f64) -> Self {
        let two = |m: f64| {
            if m == 0.0 {
                vec![(0.0, 1.0)]
            } else {
                vec![(-m, 0.5), (m, 0.5)]
            }
        };
        Self::independent(&two(w_mag), &two(v_mag))
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let k = self.outcomes.len();
        if k == 0 {
            out.push("disturbance support is empty".into());
            return out;
        }
        if self.outcomes.iter().any(|d| !d.w.is_finite() || !d.v.is_finite()) {
            out.push("disturbance outcomes must be finite".into());
        }
        let check_row = |row: &[f64], what: &str, out: &mut Vec<String>| {
            if row.len() != k {
                out.push(format!("{what} has {} entries for {k} outcomes", row.len()));
            } else if row.iter().any(|p| !(*p >= 0.0)) {
                out.push(format!("{what} has a negative probability"));
            } else if (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                out.push(format!("{what} sums to {} instead of 1", row.iter().sum::<f64>()));
            }
        };
        match &self.law {
            DisturbanceLaw::Iid { probs } => check_row(probs, "outcome probabilities", &mut out),
            DisturbanceLaw::Markov {
                initial_state,
                transition,
            } => {
                if *initial_state >= k {
                    out.push(format!("initial state {initial_state} out of range"));
                }
                if transition.len() != k {
                    out.push(format!("transition matrix has {} rows for {k} outcomes", transition.len()));
                }
                for (i, row) in transition.iter().enumerate() {
                    check_row(row, &format!("transition row {i}"), &mut out);
                }
            }
        }
        out
    }

    /// Distribution of the next outcome given the current one (`None` before period 1).
    pub fn next_distribution(&self, current: Option<usize>) -> Vec<f64> {
        match &self.law {
            DisturbanceLaw::Iid { probs } => probs.clone(),
            DisturbanceLaw::Markov {
                initial_state,
                transition,
            } => transition[current.unwrap_or(*initial_state)].clone(),
        }
    }

    /// Mean disturbance `steps` periods after the current outcome (`steps >= 1`).
    pub fn forecast(&self, current: Option<usize>, steps: usize) -> Disturbance {
        let mut dist = self.next_distribution(current);
        if let DisturbanceLaw::Markov { transition, .. } = &self.law {
            for _ in 1..steps {
                let mut next = vec![0.0; dist.len()];
                for (i, &p) in dist.iter().enumerate() {
                    for (j, &q) in transition[i].iter().enumerate() {
                        next[j] += p * q;
                    }
                }
                dist = next;
            }
        }
        let mut mean = Disturbance::ZERO;
        for (p, d) in dist.iter().zip(&self.outcomes) {
            mean.w += p * d.w;
            mean.v += p * d.v;
        }
        mean
    }

    /// Draws a path of outcome indices from a ChaCha8 stream seeded by `seed`.
    pub fn sample_path(&self, horizon: usize, seed: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut path = Vec::with_capacity(horizon);
        let mut current = None;
        for _ in 0..horizon {
            let dist = self.next_distribution(current);
            let j = if dist.len() == 1 {
                0
            } else {
                WeightedIndex::new(&dist)
                    .expect("validated probabilities")
                    .sample(&mut rng)
            };
            path.push(j);
            current = Some(j);
        }
        path
    }

    pub fn realize(&self, path: &[usize]) -> Vec<Disturbance> {
        path.iter().map(|&j| self.outcomes[j]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: usize,
    pub depth: usize,
    pub parent: Option<usize>,
    /// Index into the outcome table; `None` for the root.
    pub outcome: Option<usize>,
    /// Probability of reaching the node from the root.
    pub probability: f64,
    /// Probability of the node given its parent.
    pub conditional: f64,
    pub children: Vec<usize>,
}

/// Event tree of the common disturbance. Node 0 is the root (depth 0, no
/// decision); a node at depth `t` carries the history `omega(1..t)` and the
/// period-`t` decision. Nodes are stored breadth-first.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    pub nodes: Vec<Node>,
    pub outcomes: Vec<Disturbance>,
    pub horizon: usize,
}

impl ScenarioTree {
    pub const ROOT: usize = 0;

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn disturbance(&self, node: usize) -> Disturbance {
        self.nodes[node]
            .outcome
            .map(|j| self.outcomes[j])
            .unwrap_or(Disturbance::ZERO)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Node> {
        let h = self.horizon;
        self.nodes.iter().filter(move |n| n.depth == h)
    }

    /// Nodes on the path from depth 1 to `node`, in order.
    pub fn path(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = node;
        while let Some(p) = self.nodes[cur].parent {
            out.push(cur);
            cur = p;
        }
        out.reverse();
        out
    }

    /// Node reached by following a sequence of outcome indices from the root.
    pub fn follow(&self, outcomes: &[usize]) -> Option<usize> {
        let mut cur = Self::ROOT;
        for &o in outcomes {
            cur = *self.nodes[cur]
                .children
                .iter()
                .find(|&&c| self.nodes[c].outcome == Some(o))?;
        }
        Some(cur)
    }

    /// CSV dump: `node_id,parent_id,depth,outcome,probability,w,v`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "node_id,parent_id,depth,outcome,probability,w,v")?;
        for n in &self.nodes {
            let parent = n.parent.map(|p| p.to_string()).unwrap_or_default();
            let outcome = n.outcome.map(|o| o.to_string()).unwrap_or_default();
            let d = self.disturbance(n.id);
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                n.id, parent, n.depth, outcome, n.probability, d.w, d.v
            )?;
        }
        Ok(())
    }
}

/// Enumerates every outcome history up to `horizon`. Zero-probability
/// branches are omitted.
pub fn build_tree(spec: &DisturbanceSpec, horizon: usize, node_cap: usize) -> Result<ScenarioTree> {
    if horizon == 0 {
        return Err(Error::InvalidInput("tree horizon must be at least 1".into()));
    }
    let v = spec.violations();
    if !v.is_empty() {
        return Err(Error::InvalidInput(v.join("; ")));
    }
    // Upper bound on the node count before allocating anything.
    let k = spec.len();
    let mut bound: usize = 1;
    let mut level: usize = 1;
    for _ in 0..horizon {
        level = level.saturating_mul(k);
        bound = bound.saturating_add(level);
    }
    if bound > node_cap {
        return Err(Error::ExplosionGuard {
            nodes: bound,
            cap: node_cap,
        });
    }

    let mut nodes = vec![Node {
        id: 0,
        depth: 0,
        parent: None,
        outcome: None,
        probability: 1.0,
        conditional: 1.0,
        children: Vec::new(),
    }];
    let mut frontier = vec![0usize];
    for depth in 1..=horizon {
        let mut next = Vec::new();
        for &pid in &frontier {
            let dist = spec.next_distribution(nodes[pid].outcome);
            for (j, &p) in dist.iter().enumerate() {
                if p <= 0.0 {
                    continue;
                }
                let id = nodes.len();
                nodes.push(Node {
                    id,
                    depth,
                    parent: Some(pid),
                    outcome: Some(j),
                    probability: nodes[pid].probability * p,
                    conditional: p,
                    children: Vec::new(),
                });
                nodes[pid].children.push(id);
                next.push(id);
            }
        }
        frontier = next;
    }
    let tree = ScenarioTree {
        nodes,
        outcomes: spec.outcomes.clone(),
        horizon,
    };
    let total: f64 = tree.leaves().map(|n| n.probability).sum();
    debug_assert!((total - 1.0).abs() < 1e-9);
    Ok(tree)
}

/// True when the conditional probabilities below every inner node sum to one.
pub fn children_sum_to_one(tree: &ScenarioTree) -> bool {
    tree.nodes
        .iter()
        .filter(|n| !n.children.is_empty())
        .all(|n| {
            let s: f64 = n.children.iter().map(|&c| tree.nodes[c].conditional).sum();
            (s - 1.0).abs() <= PROB_TOL
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_iid_tree_counts() {
        let spec = DisturbanceSpec::symmetric(0.5, 0.0);
        let tree = build_tree(&spec, 3, DEFAULT_NODE_CAP).unwrap();
        assert_eq!(tree.len() - 1, 14);
        let leaves: Vec<_> = tree.leaves().collect();
        assert_eq!(leaves.len(), 8);
        assert!(leaves.iter().all(|n| (n.probability - 0.125).abs() < 1e-15));
        assert!(children_sum_to_one(&tree));
    }

    #[test]
    fn single_outcome_is_a_chain() {
        let tree = build_tree(&DisturbanceSpec::deterministic(), 5, DEFAULT_NODE_CAP).unwrap();
        assert_eq!(tree.len(), 6);
        assert!(tree.nodes.iter().all(|n| n.probability == 1.0 && n.children.len() <= 1));
    }

    #[test]
    fn markov_leaf_probabilities_are_path_products() {
        let spec = DisturbanceSpec {
            outcomes: vec![Disturbance { w: -0.5, v: 0.0 }, Disturbance { w: 0.5, v: 0.0 }],
            law: DisturbanceLaw::Markov {
                initial_state: 0,
                transition: vec![vec![0.9, 0.1], vec![0.4, 0.6]],
            },
        };
        let tree = build_tree(&spec, 2, DEFAULT_NODE_CAP).unwrap();
        let p = |path: &[usize]| tree.nodes[tree.follow(path).unwrap()].probability;
        assert!((p(&[0, 0]) - 0.81).abs() < 1e-15);
        assert!((p(&[0, 1]) - 0.09).abs() < 1e-15);
        assert!((p(&[1, 0]) - 0.04).abs() < 1e-15);
        assert!((p(&[1, 1]) - 0.06).abs() < 1e-15);
    }

    #[test]
    fn explosion_guard() {
        let spec = DisturbanceSpec::symmetric(0.5, 0.2);
        let err = build_tree(&spec, 10, 1000).unwrap_err();
        assert!(matches!(err, Error::ExplosionGuard { cap: 1000, .. }));
    }

    #[test]
    fn forecasts_and_sampling() {
        let spec = DisturbanceSpec::symmetric(0.5, 0.2);
        assert_eq!(spec.forecast(None, 1), Disturbance::ZERO);
        let a = spec.sample_path(20, 9);
        assert_eq!(a, spec.sample_path(20, 9));
        assert!(a.iter().all(|&j| j < 4));
        let markov = DisturbanceSpec {
            outcomes: vec![Disturbance { w: 0.0, v: 0.0 }, Disturbance { w: 1.0, v: 0.0 }],
            law: DisturbanceLaw::Markov {
                initial_state: 0,
                transition: vec![vec![0.9, 0.1], vec![0.4, 0.6]],
            },
        };
        assert!((markov.forecast(Some(1), 1).w - 0.6).abs() < 1e-15);
        // Two steps from state 1: 0.4 * 0.1 + 0.6 * 0.6
        assert!((markov.forecast(Some(1), 2).w - 0.4).abs() < 1e-15);
    }

    #[test]
    fn csv_dump_has_one_row_per_node() {
        let tree = build_tree(&DisturbanceSpec::symmetric(0.5, 0.0), 2, DEFAULT_NODE_CAP).unwrap();
        let mut buf = Vec::new();
        tree.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + tree.len());
        assert!(text.starts_with("node_id,parent_id,depth,outcome,probability,w,v\n0,,0,,1,0,0\n"));
    }
}
