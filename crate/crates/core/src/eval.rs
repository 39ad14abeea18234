//! Pluggable architecture evaluators: tabular benchmark lookup, synthetic
//! planted landscapes, plus caching and budget accounting.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{ArchGraph, GraphRecord};
use crate::space::{enumerate_space, SpaceSpec};

/// Reward (higher is better) plus evaluation cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub reward: f64,
    pub cost: f64,
}

/// One line of a tabular evaluator file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularRow {
    pub graph: GraphRecord,
    pub reward: f64,
    #[serde(default)]
    pub test_reward: Option<f64>,
    #[serde(default = "default_cost")]
    pub cost: f64,
}

fn default_cost() -> f64 {
    1.0
}

/// Anything that can score a graph. Implementations are deterministic
/// functions of (graph, seed) and safe for concurrent use.
pub trait Evaluator: Send + Sync {
    fn evaluate(&self, g: &ArchGraph) -> Result<EvalResult>;
    /// Multiple evaluators of one space may coexist at different fidelities.
    fn fidelity(&self) -> &str {
        "full"
    }
}

/// Exact reward lookup keyed by canonical graph hash.
pub struct TabularEvaluator {
    rows: HashMap<String, TabularRow>,
}

impl TabularEvaluator {
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut rows = HashMap::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: TabularRow = serde_json::from_str(&line).map_err(|e| Error::Parse {
                field: format!("tabular line {}", lineno + 1),
                message: e.to_string(),
            })?;
            let g = ArchGraph::from_record(&row.graph)?;
            if rows.insert(g.canonical_hash(), row).is_some() {
                return Err(Error::DuplicateTabularEntry { line: lineno + 1 });
            }
        }
        Ok(TabularEvaluator { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dump(&self, out: &mut impl Write) -> Result<()> {
        // stable order for reproducible dumps
        let mut keys: Vec<&String> = self.rows.keys().collect();
        keys.sort();
        for k in keys {
            writeln!(out, "{}", serde_json::to_string(&self.rows[k])?)?;
        }
        Ok(())
    }
}

impl Evaluator for TabularEvaluator {
    fn evaluate(&self, g: &ArchGraph) -> Result<EvalResult> {
        let row = self
            .rows
            .get(&g.canonical_hash())
            .ok_or(Error::TabularMiss)?;
        Ok(EvalResult {
            reward: row.reward,
            cost: row.cost,
        })
    }
}

/// Synthetic landscape flavors. Both are pure functions of the graph with a
/// known global optimum, standing in for training-based oracles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SyntheticSpec {
    /// reward = 1 - w1*|avgpath - tau|/tau - w2*|density - rho|
    ///            - w3*(1 - fraction of nodes with target op), clamped to [0,1].
    PlantedStats {
        tau: f64,
        rho: f64,
        target_op: usize,
        #[serde(default = "default_weights")]
        weights: [f64; 3],
    },
    /// Deterministic pseudo-random reward in [0,1) from seed x graph hash;
    /// the enumerated graph with the highest raw value is planted at 1.0.
    HashedRandom { seed: u64 },
}

fn default_weights() -> [f64; 3] {
    [0.4, 0.3, 0.3]
}

pub struct SyntheticEvaluator {
    spec: SyntheticSpec,
    /// canonical hash of the planted optimum (hashed-random only)
    optimum: Option<String>,
}

fn hashed_unit(seed: u64, graph_hash: &str) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(graph_hash.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(bytes) >> 11) as f64 / (1u64 << 53) as f64
}

impl SyntheticEvaluator {
    /// For hashed-random the space must be enumerable so the planted optimum
    /// is well defined.
    pub fn new(space: &SpaceSpec, spec: SyntheticSpec) -> Result<Self> {
        let optimum = match &spec {
            SyntheticSpec::HashedRandom { seed } => {
                let mut best: Option<(f64, String)> = None;
                for g in enumerate_space(space)? {
                    let h = g.canonical_hash();
                    let v = hashed_unit(*seed, &h);
                    if best.as_ref().map_or(true, |(bv, _)| v > *bv) {
                        best = Some((v, h));
                    }
                }
                Some(
                    best.ok_or_else(|| {
                        Error::InvalidArgument("space has no valid graphs".into())
                    })?
                    .1,
                )
            }
            SyntheticSpec::PlantedStats { target_op, .. } => {
                if *target_op >= space.d_ops {
                    return Err(Error::InvalidArgument(format!(
                        "target op {} out of range for {} ops",
                        target_op, space.d_ops
                    )));
                }
                None
            }
        };
        Ok(SyntheticEvaluator { spec, optimum })
    }

    /// Canonical hash of the planted optimum, when one exists.
    pub fn optimum_hash(&self) -> Option<&str> {
        self.optimum.as_deref()
    }
}

impl Evaluator for SyntheticEvaluator {
    fn evaluate(&self, g: &ArchGraph) -> Result<EvalResult> {
        let reward = match &self.spec {
            SyntheticSpec::PlantedStats {
                tau,
                rho,
                target_op,
                weights,
            } => {
                let stats = g.stats();
                let n = g.n_nodes();
                let tri = n * (n - 1) / 2;
                let density = if tri == 0 {
                    0.0
                } else {
                    stats.edge_count as f64 / tri as f64
                };
                let frac_target = g
                    .node_ops()
                    .iter()
                    .filter(|&&op| op == *target_op)
                    .count() as f64
                    / n as f64;
                let raw = 1.0
                    - weights[0] * (stats.avg_shortest_path - tau).abs() / tau
                    - weights[1] * (density - rho).abs()
                    - weights[2] * (1.0 - frac_target);
                raw.clamp(0.0, 1.0)
            }
            SyntheticSpec::HashedRandom { seed } => {
                let h = g.canonical_hash();
                if self.optimum.as_deref() == Some(h.as_str()) {
                    1.0
                } else {
                    hashed_unit(*seed, &h)
                }
            }
        };
        Ok(EvalResult { reward, cost: 1.0 })
    }

    fn fidelity(&self) -> &str {
        "synthetic"
    }
}

/// What a budget counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetUnit {
    Evaluations,
    Cost,
}

/// Monotone evaluation budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetMeter {
    pub consumed: f64,
    pub limit: f64,
    pub unit: BudgetUnit,
}

impl BudgetMeter {
    pub fn new(unit: BudgetUnit, limit: f64) -> Self {
        BudgetMeter {
            consumed: 0.0,
            limit,
            unit,
        }
    }

    pub fn exhausted(&self) -> bool {
        self.consumed >= self.limit
    }

    fn charge(&mut self, cost: f64) -> Result<()> {
        let amount = match self.unit {
            BudgetUnit::Evaluations => 1.0,
            BudgetUnit::Cost => cost,
        };
        if self.consumed + amount > self.limit {
            return Err(Error::BudgetExhausted {
                consumed: self.consumed,
                limit: self.limit,
            });
        }
        self.consumed += amount;
        Ok(())
    }
}

/// Caching, budget-accounting wrapper. Repeat queries on the same canonical
/// hash are served from the cache and consume no budget; fresh queries are
/// charged before being admitted.
pub struct CachedEvaluator<E: Evaluator> {
    inner: E,
    state: Mutex<CacheState>,
}

#[derive(Debug, Clone)]
struct CacheState {
    cache: HashMap<String, EvalResult>,
    meter: BudgetMeter,
}

/// Whether a result came from the cache or charged the meter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Freshness {
    Fresh,
    Cached,
}

impl<E: Evaluator> CachedEvaluator<E> {
    pub fn new(inner: E, meter: BudgetMeter) -> Self {
        CachedEvaluator {
            inner,
            state: Mutex::new(CacheState {
                cache: HashMap::new(),
                meter,
            }),
        }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn meter(&self) -> BudgetMeter {
        self.state.lock().expect("cache lock").meter
    }

    pub fn evaluate_tracked(&self, g: &ArchGraph) -> Result<(EvalResult, Freshness)> {
        let hash = g.canonical_hash();
        let mut state = self.state.lock().expect("cache lock");
        if let Some(hit) = state.cache.get(&hash) {
            return Ok((*hit, Freshness::Cached));
        }
        // probe first: misses and errors must not consume budget
        let result = self.inner.evaluate(g)?;
        state.meter.charge(result.cost)?;
        state.cache.insert(hash, result);
        Ok((result, Freshness::Fresh))
    }

    /// Cache lookup by canonical hash without charging the meter.
    pub fn peek(&self, canonical_hash: &str) -> Option<EvalResult> {
        let state = self.state.lock().expect("cache lock");
        state.cache.get(canonical_hash).copied()
    }

    /// Snapshot of the cache for checkpointing.
    pub fn cache_entries(&self) -> Vec<(String, EvalResult)> {
        let state = self.state.lock().expect("cache lock");
        let mut entries: Vec<(String, EvalResult)> =
            state.cache.iter().map(|(k, v)| (k.clone(), *v)).collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        entries
    }

    pub fn restore(&self, entries: Vec<(String, EvalResult)>, meter: BudgetMeter) {
        let mut state = self.state.lock().expect("cache lock");
        state.cache = entries.into_iter().collect();
        state.meter = meter;
    }
}

impl<E: Evaluator> Evaluator for CachedEvaluator<E> {
    fn evaluate(&self, g: &ArchGraph) -> Result<EvalResult> {
        self.evaluate_tracked(g).map(|(r, _)| r)
    }

    fn fidelity(&self) -> &str {
        self.inner.fidelity()
    }
}
