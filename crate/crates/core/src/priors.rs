//! Random-graph prior samplers adapted to attributed DAGs, plus the
//! epsilon-greedy exploration schedule.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ArchGraph;
use crate::space::SpaceSpec;

/// Exploration probability as a function of the search step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EpsilonSchedule {
    /// eps_start * (1 - step/anneal_steps), floored at 0.
    LinearAnneal { eps_start: f64, anneal_steps: u64 },
    /// eps_start while step < anneal_steps, then 0.
    StepCutoff { eps_start: f64, anneal_steps: u64 },
    Constant { eps: f64 },
}

impl EpsilonSchedule {
    pub fn epsilon_at(&self, step: u64) -> f64 {
        match *self {
            EpsilonSchedule::LinearAnneal {
                eps_start,
                anneal_steps,
            } => {
                if anneal_steps == 0 {
                    0.0
                } else {
                    (eps_start * (1.0 - step as f64 / anneal_steps as f64)).max(0.0)
                }
            }
            EpsilonSchedule::StepCutoff {
                eps_start,
                anneal_steps,
            } => {
                if step < anneal_steps {
                    eps_start
                } else {
                    0.0
                }
            }
            EpsilonSchedule::Constant { eps } => eps,
        }
    }
}

/// Prior graph distribution over a space's attributed DAGs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorSpec {
    ErdosRenyi { p: f64 },
    WattsStrogatz { k: usize, p_rewire: f64 },
}

impl PriorSpec {
    pub fn check(&self, n: usize) -> Result<()> {
        match *self {
            PriorSpec::ErdosRenyi { p } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidArgument(format!("ER p {} not in [0,1]", p)));
                }
            }
            PriorSpec::WattsStrogatz { k, p_rewire } => {
                if k % 2 != 0 || k >= n {
                    return Err(Error::InvalidArgument(format!(
                        "WS k {} must be even and < n {}",
                        k, n
                    )));
                }
                if !(0.0..=1.0).contains(&p_rewire) {
                    return Err(Error::InvalidArgument(format!(
                        "WS p_rewire {} not in [0,1]",
                        p_rewire
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn sample(&self, space: &SpaceSpec, rng: &mut ChaCha20Rng) -> Result<ArchGraph> {
        match *self {
            PriorSpec::ErdosRenyi { p } => er_dag_sample(space.n_nodes, p, space, rng),
            PriorSpec::WattsStrogatz { k, p_rewire } => {
                ws_dag_sample(space.n_nodes, k, p_rewire, space, rng)
            }
        }
    }
}

/// Attributes uniform over allowed ops; role-forced nodes take their op.
fn sample_ops(space: &SpaceSpec, n: usize, rng: &mut ChaCha20Rng) -> Vec<usize> {
    (0..n)
        .map(|node| match space.forced_op(node) {
            Some(op) => op,
            None => rng.gen_range(0..space.d_ops),
        })
        .collect()
}

/// Each lower-triangular entry set independently with probability p.
pub fn er_dag_sample(
    n: usize,
    p: f64,
    space: &SpaceSpec,
    rng: &mut ChaCha20Rng,
) -> Result<ArchGraph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("ER p {} not in [0,1]", p)));
    }
    let tri = n * (n - 1) / 2;
    let bits: Vec<bool> = (0..tri).map(|_| rng.gen::<f64>() < p).collect();
    let ops = sample_ops(space, n, rng);
    ArchGraph::new(n, &bits, ops, space.d_ops, space.graph_roles())
}

/// Ring lattice of degree k, each edge's far endpoint rewired independently
/// with probability p_rewire (avoiding self-loops and duplicates), then every
/// undirected edge {i, j} with i > j oriented as the DAG entry j -> i.
pub fn ws_dag_sample(
    n: usize,
    k: usize,
    p_rewire: f64,
    space: &SpaceSpec,
    rng: &mut ChaCha20Rng,
) -> Result<ArchGraph> {
    if k % 2 != 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "WS k {} must be even and < n {}",
            k, n
        )));
    }
    if !(0.0..=1.0).contains(&p_rewire) {
        return Err(Error::InvalidArgument(format!(
            "WS p_rewire {} not in [0,1]",
            p_rewire
        )));
    }
    // undirected adjacency as a set of normalized pairs (lo, hi)
    let mut edges: std::collections::BTreeSet<(usize, usize)> = std::collections::BTreeSet::new();
    for u in 0..n {
        for step in 1..=(k / 2) {
            let v = (u + step) % n;
            let pair = if u < v { (u, v) } else { (v, u) };
            edges.insert(pair);
        }
    }
    // rewire in deterministic iteration order
    let lattice: Vec<(usize, usize)> = edges.iter().copied().collect();
    for (u, v) in lattice {
        if rng.gen::<f64>() < p_rewire {
            // candidate far endpoints preserving u, avoiding self-loops and
            // duplicate edges
            let candidates: Vec<usize> = (0..n)
                .filter(|&w| {
                    w != u && w != v && {
                        let pair = if u < w { (u, w) } else { (w, u) };
                        !edges.contains(&pair)
                    }
                })
                .collect();
            if candidates.is_empty() {
                continue;
            }
            let w = candidates[rng.gen_range(0..candidates.len())];
            edges.remove(&(if u < v { (u, v) } else { (v, u) }));
            edges.insert(if u < w { (u, w) } else { (w, u) });
        }
    }
    let tri = n * (n - 1) / 2;
    let mut bits = vec![false; tri];
    for (lo, hi) in edges {
        bits[hi * (hi - 1) / 2 + lo] = true;
    }
    let ops = sample_ops(space, n, rng);
    ArchGraph::new(n, &bits, ops, space.d_ops, space.graph_roles())
}

/// Where the next candidate comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Prior,
    Generator,
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Source::Prior => f.write_str("prior"),
            Source::Generator => f.write_str("generator"),
        }
    }
}

/// Prior with probability eps, generator otherwise.
pub fn choose_source(rng: &mut ChaCha20Rng, eps: f64) -> Source {
    if rng.gen::<f64>() < eps {
        Source::Prior
    } else {
        Source::Generator
    }
}
