//! Search-loop orchestration: configuration with presets, the epsilon-greedy
//! sample/evaluate/train loop, checkpointing, and artifact emission.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::RngCore;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{
    BudgetMeter, BudgetUnit, CachedEvaluator, EvalResult, Evaluator, SyntheticEvaluator,
    SyntheticSpec, TabularEvaluator,
};
use crate::generator::{GeneratorKind, GeneratorModel, ModelConfig};
use crate::graph::{ArchGraph, GraphRecord};
use crate::params::{derive_rng, AdamState};
use crate::priors::{choose_source, EpsilonSchedule, PriorSpec, Source};
use crate::rl::{train_update, ReplayBuffer, SampleRecord, SampleRecordWire, TrainerConfig};
use crate::space::{rejection_sample, SpaceSpec};

// ---------------------------------------------------------------------------
// configuration

/// Replay buffer sizing: either a fixed capacity or a fraction of all
/// accepted evaluations so far (re-applied after every insertion).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct BufferSizing {
    pub capacity: Option<usize>,
    pub top_fraction: Option<f64>,
}

impl BufferSizing {
    pub fn fixed(capacity: usize) -> Self {
        BufferSizing {
            capacity: Some(capacity),
            top_fraction: None,
        }
    }

    fn validate(&self) -> Result<()> {
        match (self.capacity, self.top_fraction) {
            (Some(c), None) => {
                if c == 0 {
                    return Err(Error::Config("buffer capacity must be positive".into()));
                }
            }
            (None, Some(f)) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::Config(format!(
                        "buffer top_fraction {} not in (0, 1]",
                        f
                    )));
                }
            }
            _ => {
                return Err(Error::Config(
                    "buffer needs exactly one of capacity or top_fraction".into(),
                ))
            }
        }
        Ok(())
    }

    fn capacity_for(&self, accepted: u64) -> usize {
        match (self.capacity, self.top_fraction) {
            (Some(c), _) => c,
            (None, Some(f)) => ((accepted as f64 * f).ceil() as usize).max(1),
            _ => 1,
        }
    }
}

/// Which reward oracle a run uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EvaluatorSpec {
    /// Newline-delimited JSON table of exact rewards.
    Tabular { path: String },
    /// Synthetic landscape rewarding target graph statistics.
    PlantedStats {
        tau: f64,
        rho: f64,
        target_op: usize,
        #[serde(default = "planted_weights")]
        weights: [f64; 3],
    },
    /// Deterministic pseudo-random landscape with one planted optimum;
    /// seed defaults to a stream derived from the master seed.
    HashedRandom {
        #[serde(default)]
        seed: Option<u64>,
    },
}

fn planted_weights() -> [f64; 3] {
    [0.4, 0.3, 0.3]
}

/// A run's evaluator, built from its spec.
pub enum EngineEvaluator {
    Tabular(TabularEvaluator),
    Synthetic(SyntheticEvaluator),
}

impl Evaluator for EngineEvaluator {
    fn evaluate(&self, g: &ArchGraph) -> Result<EvalResult> {
        match self {
            EngineEvaluator::Tabular(e) => e.evaluate(g),
            EngineEvaluator::Synthetic(e) => e.evaluate(g),
        }
    }

    fn fidelity(&self) -> &str {
        match self {
            EngineEvaluator::Tabular(e) => e.fidelity(),
            EngineEvaluator::Synthetic(e) => e.fidelity(),
        }
    }
}

impl EngineEvaluator {
    pub fn optimum_hash(&self) -> Option<&str> {
        match self {
            EngineEvaluator::Synthetic(e) => e.optimum_hash(),
            EngineEvaluator::Tabular(_) => None,
        }
    }
}

impl EvaluatorSpec {
    pub fn build(&self, space: &SpaceSpec, master_seed: u64) -> Result<EngineEvaluator> {
        match self {
            EvaluatorSpec::Tabular { path } => Ok(EngineEvaluator::Tabular(
                TabularEvaluator::load(Path::new(path))?,
            )),
            EvaluatorSpec::PlantedStats {
                tau,
                rho,
                target_op,
                weights,
            } => Ok(EngineEvaluator::Synthetic(SyntheticEvaluator::new(
                space,
                SyntheticSpec::PlantedStats {
                    tau: *tau,
                    rho: *rho,
                    target_op: *target_op,
                    weights: *weights,
                },
            )?)),
            EvaluatorSpec::HashedRandom { seed } => {
                let seed = seed
                    .unwrap_or_else(|| derive_rng(master_seed, "synthetic-evaluator").next_u64());
                Ok(EngineEvaluator::Synthetic(SyntheticEvaluator::new(
                    space,
                    SyntheticSpec::HashedRandom { seed },
                )?))
            }
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub space: SpaceSpec,
    pub model: ModelConfig,
    pub generator_seed: u64,
    pub prior: PriorSpec,
    pub epsilon: EpsilonSchedule,
    pub trainer: TrainerConfig,
    pub buffer: BufferSizing,
    pub evaluator: Option<EvaluatorSpec>,
    pub budget_unit: BudgetUnit,
    pub budget_limit: f64,
    pub samples_per_step: u64,
    pub top_k: usize,
    pub max_steps: Option<u64>,
    pub rejection_max_tries: usize,
    pub out_dir: Option<String>,
    pub master_seed: u64,
}

// --- raw (file-level) configuration; every field optional so presets,
// files, and command-line overrides can be layered.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpaceField {
    Preset(String),
    Inline(SpaceSpec),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawGenerator {
    pub kind: Option<GeneratorKind>,
    pub k: Option<usize>,
    pub s: Option<usize>,
    pub hidden: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawTrainer {
    pub lr: Option<f64>,
    pub clip: Option<f64>,
    pub minibatch: Option<usize>,
    pub epochs: Option<usize>,
    pub beta: Option<f64>,
    pub update_every: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawBudget {
    pub unit: Option<BudgetUnit>,
    pub limit: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawConfig {
    pub space: Option<SpaceField>,
    pub generator: Option<RawGenerator>,
    pub prior: Option<PriorSpec>,
    pub epsilon: Option<EpsilonSchedule>,
    pub trainer: Option<RawTrainer>,
    pub buffer: Option<BufferSizing>,
    pub evaluator: Option<EvaluatorSpec>,
    pub budget: Option<RawBudget>,
    pub samples_per_step: Option<u64>,
    pub top_k: Option<usize>,
    pub max_steps: Option<u64>,
    pub rejection_max_tries: Option<usize>,
    pub out_dir: Option<String>,
    pub master_seed: Option<u64>,
}

fn merge_generator(base: Option<RawGenerator>, over: Option<RawGenerator>) -> Option<RawGenerator> {
    match (base, over) {
        (Some(b), Some(o)) => Some(RawGenerator {
            kind: o.kind.or(b.kind),
            k: o.k.or(b.k),
            s: o.s.or(b.s),
            hidden: o.hidden.or(b.hidden),
            seed: o.seed.or(b.seed),
        }),
        (b, o) => o.or(b),
    }
}

fn merge_trainer(base: Option<RawTrainer>, over: Option<RawTrainer>) -> Option<RawTrainer> {
    match (base, over) {
        (Some(b), Some(o)) => Some(RawTrainer {
            lr: o.lr.or(b.lr),
            clip: o.clip.or(b.clip),
            minibatch: o.minibatch.or(b.minibatch),
            epochs: o.epochs.or(b.epochs),
            beta: o.beta.or(b.beta),
            update_every: o.update_every.or(b.update_every),
        }),
        (b, o) => o.or(b),
    }
}

fn merge_budget(base: Option<RawBudget>, over: Option<RawBudget>) -> Option<RawBudget> {
    match (base, over) {
        (Some(b), Some(o)) => Some(RawBudget {
            unit: o.unit.or(b.unit),
            limit: o.limit.or(b.limit),
        }),
        (b, o) => o.or(b),
    }
}

/// `over` wins field-by-field (nested knobs merge at the leaf level).
pub fn merge_raw(base: RawConfig, over: RawConfig) -> RawConfig {
    RawConfig {
        space: over.space.or(base.space),
        generator: merge_generator(base.generator, over.generator),
        prior: over.prior.or(base.prior),
        epsilon: over.epsilon.or(base.epsilon),
        trainer: merge_trainer(base.trainer, over.trainer),
        buffer: over.buffer.or(base.buffer),
        evaluator: over.evaluator.or(base.evaluator),
        budget: merge_budget(base.budget, over.budget),
        samples_per_step: over.samples_per_step.or(base.samples_per_step),
        top_k: over.top_k.or(base.top_k),
        max_steps: over.max_steps.or(base.max_steps),
        rejection_max_tries: over.rejection_max_tries.or(base.rejection_max_tries),
        out_dir: over.out_dir.or(base.out_dir),
        master_seed: over.master_seed.or(base.master_seed),
    }
}

/// Named run presets bundling a space with its published hyperparameters.
pub fn preset_raw(name: &str) -> Result<RawConfig> {
    match name {
        // 7-node constrained space: Erdos-Renyi prior at p=0.25, epsilon
        // annealed 1 -> 0 over 30 steps, top-30 buffer, update every 10
        // evaluations, 70 epochs per update at lr 1e-3, minibatch 2.
        "nasbench101" => Ok(RawConfig {
            space: Some(SpaceField::Preset("nasbench101-like".into())),
            prior: Some(PriorSpec::ErdosRenyi { p: 0.25 }),
            epsilon: Some(EpsilonSchedule::LinearAnneal {
                eps_start: 1.0,
                anneal_steps: 30,
            }),
            buffer: Some(BufferSizing::fixed(30)),
            trainer: Some(RawTrainer {
                lr: Some(1e-3),
                minibatch: Some(2),
                epochs: Some(70),
                update_every: Some(10),
                ..RawTrainer::default()
            }),
            ..RawConfig::default()
        }),
        // 4-node cell, 5 op types: explorer only for the first 10 steps,
        // top-15 buffer, default oracle budget of 150 evaluations (the
        // published settings also use 80 and 40; override `budget.limit`).
        "nasbench201" => Ok(RawConfig {
            space: Some(SpaceField::Inline(SpaceSpec::free(
                "nasbench201-like",
                4,
                5,
            ))),
            epsilon: Some(EpsilonSchedule::StepCutoff {
                eps_start: 1.0,
                anneal_steps: 10,
            }),
            buffer: Some(BufferSizing::fixed(15)),
            budget: Some(RawBudget {
                unit: Some(BudgetUnit::Evaluations),
                limit: Some(150.0),
            }),
            ..RawConfig::default()
        }),
        // macro-skeleton style: 100 candidates per step, buffer keeps the
        // top 20% of everything evaluated so far, minibatch 32.
        "enas-macro-style" => Ok(RawConfig {
            space: Some(SpaceField::Inline(SpaceSpec::free("enas-macro-like", 12, 6))),
            samples_per_step: Some(100),
            buffer: Some(BufferSizing {
                capacity: None,
                top_fraction: Some(0.2),
            }),
            trainer: Some(RawTrainer {
                minibatch: Some(32),
                ..RawTrainer::default()
            }),
            ..RawConfig::default()
        }),
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}

/// Command-line overrides applied on top of preset and file.
#[derive(Debug, Clone, Default)]
pub struct ConfigOverrides {
    pub master_seed: Option<u64>,
    pub out_dir: Option<String>,
}

/// Layers defaults <- preset <- file <- overrides and validates the result.
pub fn load_config(
    path: Option<&Path>,
    preset: Option<&str>,
    overrides: &ConfigOverrides,
) -> Result<SearchConfig> {
    let mut raw = RawConfig::default();
    if let Some(name) = preset {
        raw = merge_raw(raw, preset_raw(name)?);
    }
    if let Some(p) = path {
        let text = fs::read_to_string(p)?;
        let file_raw: RawConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        raw = merge_raw(raw, file_raw);
    }
    if let Some(seed) = overrides.master_seed {
        raw.master_seed = Some(seed);
    }
    if let Some(out) = &overrides.out_dir {
        raw.out_dir = Some(out.clone());
    }
    resolve_config(raw)
}

/// Fills defaults (mixture K=10, rounds S=7, hidden 128; lr 1e-4, clip 1.0,
/// minibatch 16, epochs 2000) and validates.
pub fn resolve_config(raw: RawConfig) -> Result<SearchConfig> {
    let space = match raw.space {
        Some(SpaceField::Preset(name)) => SpaceSpec::preset(&name)?,
        Some(SpaceField::Inline(s)) => s,
        None => return Err(Error::Config("space is required".into())),
    };
    space.check_well_formed()?;

    let master_seed = raw.master_seed.unwrap_or(0);
    let g = raw.generator.unwrap_or_default();
    let model = ModelConfig {
        kind: g.kind.unwrap_or(GeneratorKind::Graph),
        k: g.k.unwrap_or(10),
        s: g.s.unwrap_or(7),
        hidden: g.hidden.unwrap_or(128),
        n_max: space.n_nodes,
    };
    if model.k == 0 || model.hidden == 0 {
        return Err(Error::Config("generator needs k >= 1 and hidden >= 1".into()));
    }
    let generator_seed = g.seed.unwrap_or(master_seed);

    let prior = raw.prior.unwrap_or(PriorSpec::ErdosRenyi { p: 0.25 });
    prior.check(space.n_nodes)?;

    let epsilon = raw.epsilon.unwrap_or(EpsilonSchedule::LinearAnneal {
        eps_start: 1.0,
        anneal_steps: 30,
    });
    let eps0 = epsilon.epsilon_at(0);
    if !(0.0..=1.0).contains(&eps0) {
        return Err(Error::Config(format!("epsilon {} not in [0,1]", eps0)));
    }

    let samples_per_step = raw.samples_per_step.unwrap_or(16);
    if samples_per_step == 0 {
        return Err(Error::Config("samples_per_step must be positive".into()));
    }

    let t = raw.trainer.unwrap_or_default();
    let trainer = TrainerConfig {
        lr: t.lr.unwrap_or(1e-4),
        clip: t.clip.unwrap_or(1.0),
        minibatch: t.minibatch.unwrap_or(16),
        epochs: t.epochs.unwrap_or(2000),
        beta: t.beta.unwrap_or(1.0),
        update_every: t.update_every.unwrap_or(samples_per_step),
    };
    if trainer.lr <= 0.0 || trainer.clip <= 0.0 {
        return Err(Error::Config("trainer lr and clip must be positive".into()));
    }
    if trainer.minibatch == 0 || trainer.update_every == 0 {
        return Err(Error::Config(
            "trainer minibatch and update_every must be positive".into(),
        ));
    }
    if trainer.beta < 0.0 {
        return Err(Error::Config("trainer beta must be non-negative".into()));
    }

    let buffer = raw.buffer.unwrap_or(BufferSizing::fixed(30));
    buffer.validate()?;

    let b = raw.budget.unwrap_or_default();
    let budget_limit = b.limit.unwrap_or(100.0);
    if !budget_limit.is_finite() || budget_limit < 0.0 {
        return Err(Error::Config(format!(
            "budget limit {} must be finite and >= 0",
            budget_limit
        )));
    }

    let rejection_max_tries = raw.rejection_max_tries.unwrap_or(10_000);
    if rejection_max_tries == 0 {
        return Err(Error::Config("rejection_max_tries must be positive".into()));
    }

    Ok(SearchConfig {
        space,
        model,
        generator_seed,
        prior,
        epsilon,
        trainer,
        buffer,
        evaluator: raw.evaluator,
        budget_unit: b.unit.unwrap_or(BudgetUnit::Evaluations),
        budget_limit,
        samples_per_step,
        top_k: raw.top_k.unwrap_or(8),
        max_steps: raw.max_steps,
        rejection_max_tries,
        out_dir: raw.out_dir,
        master_seed,
    })
}

// ---------------------------------------------------------------------------
// trace

pub const TRACE_HEADER: &str = "step,eval_id,source,reward,buffer_mean,buffer_std,epsilon,log_prob,clustering_coefficient,avg_shortest_path";

/// One accepted evaluation, as written to the trace file.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub eval_id: u64,
    pub source: Source,
    pub reward: f64,
    pub buffer_mean: f64,
    pub buffer_std: f64,
    pub epsilon: f64,
    /// Exact log-probability of the raw sample; generator rows only.
    pub log_prob: Option<f64>,
    pub clustering_coefficient: f64,
    pub avg_shortest_path: f64,
}

impl TraceRow {
    fn render(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.eval_id,
            self.source,
            self.reward,
            self.buffer_mean,
            self.buffer_std,
            self.epsilon,
            self.log_prob.map_or(String::new(), |v| v.to_string()),
            self.clustering_coefficient,
            self.avg_shortest_path,
        )
    }
}

fn parse_f64(field: &str, s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|e| Error::Parse {
        field: field.into(),
        message: e.to_string(),
    })
}

/// Reads a trace file back into rows.
pub fn parse_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == TRACE_HEADER => {}
        _ => {
            return Err(Error::Parse {
                field: "trace".into(),
                message: "missing or unexpected header".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 10 {
            return Err(Error::Parse {
                field: "trace".into(),
                message: format!("expected 10 columns, got {}", cols.len()),
            });
        }
        let source = match cols[2] {
            "prior" => Source::Prior,
            "generator" => Source::Generator,
            other => {
                return Err(Error::Parse {
                    field: "trace.source".into(),
                    message: format!("unknown source {:?}", other),
                })
            }
        };
        rows.push(TraceRow {
            step: parse_f64("trace.step", cols[0])? as u64,
            eval_id: parse_f64("trace.eval_id", cols[1])? as u64,
            source,
            reward: parse_f64("trace.reward", cols[3])?,
            buffer_mean: parse_f64("trace.buffer_mean", cols[4])?,
            buffer_std: parse_f64("trace.buffer_std", cols[5])?,
            epsilon: parse_f64("trace.epsilon", cols[6])?,
            log_prob: if cols[7].is_empty() {
                None
            } else {
                Some(parse_f64("trace.log_prob", cols[7])?)
            },
            clustering_coefficient: parse_f64("trace.clustering", cols[8])?,
            avg_shortest_path: parse_f64("trace.avg_path", cols[9])?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// checkpoints

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    /// SHA-256 hex of the payload string.
    digest: String,
    /// Serialized CheckpointPayload (kept as a string so the digest has
    /// well-defined bytes to cover).
    payload: String,
}

/// Everything needed to continue a run to a byte-identical trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointPayload {
    pub config: SearchConfig,
    pub model: GeneratorModel,
    pub opt: AdamState,
    pub buffer_capacity: usize,
    pub buffer: Vec<SampleRecordWire>,
    pub cache: Vec<(String, EvalResult)>,
    pub meter: BudgetMeter,
    pub accepted: u64,
    pub evals_since_update: u64,
    pub updates: u64,
    pub skipped: u64,
    pub trace_rows: u64,
    pub rng_sampling: ChaCha20Rng,
    pub rng_explorer: ChaCha20Rng,
    pub rng_prior: ChaCha20Rng,
    pub rng_shuffle: ChaCha20Rng,
}

pub fn save_checkpoint(path: &Path, payload: &CheckpointPayload) -> Result<()> {
    let payload_text = serde_json::to_string(payload)?;
    let digest = hex::encode(Sha256::digest(payload_text.as_bytes()));
    let file = CheckpointFile {
        format_version: CHECKPOINT_VERSION,
        digest,
        payload: payload_text,
    };
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_string(&file)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointPayload> {
    let text = fs::read_to_string(path)?;
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|e| Error::CheckpointCorrupt(e.to_string()))?;
    if file.format_version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            expected: CHECKPOINT_VERSION,
            got: file.format_version,
        });
    }
    let digest = hex::encode(Sha256::digest(file.payload.as_bytes()));
    if digest != file.digest {
        return Err(Error::CheckpointCorrupt("digest mismatch".into()));
    }
    serde_json::from_str(&file.payload).map_err(|e| Error::CheckpointCorrupt(e.to_string()))
}

// ---------------------------------------------------------------------------
// run artifacts

/// File layout of one run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub out_dir: PathBuf,
    pub trace: PathBuf,
    pub checkpoint: PathBuf,
    pub summary: PathBuf,
    pub topk: PathBuf,
    pub scatter: PathBuf,
    pub analysis: PathBuf,
}

impl RunPaths {
    pub fn new(out_dir: &Path) -> Self {
        RunPaths {
            out_dir: out_dir.to_path_buf(),
            trace: out_dir.join("trace.csv"),
            checkpoint: out_dir.join("checkpoint.json"),
            summary: out_dir.join("summary.json"),
            topk: out_dir.join("topk.jsonl"),
            scatter: out_dir.join("scatter.csv"),
            analysis: out_dir.join("analysis.json"),
        }
    }
}

/// One graph sampled from the final model (or prior, for baseline runs).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopSample {
    pub graph: GraphRecord,
    pub log_prob: Option<f64>,
    /// Reward if this graph was evaluated during the run (cache lookup only).
    pub cached_reward: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub best_reward: Option<f64>,
    pub best_graph: Option<GraphRecord>,
    pub accepted_evaluations: u64,
    pub budget_consumed: f64,
    pub budget_limit: f64,
    pub steps_completed: u64,
    pub updates: u64,
    pub skipped_candidates: u64,
    pub wall_time_secs: f64,
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub paths: RunPaths,
    pub summary: RunSummary,
    pub top_k: Vec<TopSample>,
}

/// Search runs train the generator; baseline runs sample the prior only,
/// under the same budget and trace schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Search,
    BaselineRandom,
}

// ---------------------------------------------------------------------------
// the loop

/// Pads a pruned graph back to the space's node count with isolated nodes so
/// the generator can score it in teacher mode: interior nodes keep their
/// indices, the output node moves to index n-1, padding sits in between.
pub fn embed_into_space(space: &SpaceSpec, g: &ArchGraph) -> Result<ArchGraph> {
    let n = space.n_nodes;
    let gn = g.n_nodes();
    if gn == n {
        return Ok(g.clone());
    }
    if gn > n {
        return Err(Error::InvalidArgument(format!(
            "graph has {} nodes, space only {}",
            gn, n
        )));
    }
    let roles = space.graph_roles().ok_or(Error::RolesMissing(
        "embedding a smaller graph requires io roles",
    ))?;
    let mut bits = vec![false; n * (n - 1) / 2];
    for (src, dst) in g.edges() {
        // src < dst, so only the destination can be the old output node
        let d = if dst == gn - 1 { n - 1 } else { dst };
        bits[d * (d - 1) / 2 + src] = true;
    }
    let mut ops = vec![0usize; n];
    for (i, &op) in g.node_ops().iter().enumerate() {
        let idx = if i == gn - 1 { n - 1 } else { i };
        ops[idx] = op;
    }
    for pad in (gn - 1)..(n - 1) {
        ops[pad] = space.forced_op(pad).unwrap_or(0);
    }
    ArchGraph::new(n, &bits, ops, space.d_ops, Some(roles))
}

struct EngineState {
    model: GeneratorModel,
    opt: AdamState,
    buffer: ReplayBuffer,
    evaluator: CachedEvaluator<EngineEvaluator>,
    accepted: u64,
    evals_since_update: u64,
    updates: u64,
    skipped: u64,
    trace_rows: u64,
    rng_sampling: ChaCha20Rng,
    rng_explorer: ChaCha20Rng,
    rng_prior: ChaCha20Rng,
    rng_shuffle: ChaCha20Rng,
}

impl EngineState {
    fn fresh(config: &SearchConfig) -> Result<Self> {
        let evaluator_spec = config
            .evaluator
            .as_ref()
            .ok_or_else(|| Error::Config("an evaluator is required to run a search".into()))?;
        let inner = evaluator_spec.build(&config.space, config.master_seed)?;
        let meter = BudgetMeter::new(config.budget_unit, config.budget_limit);
        let model = GeneratorModel::init(&config.space, config.model, config.generator_seed)?;
        let opt = AdamState::new(&model.params, config.trainer.lr);
        Ok(EngineState {
            model,
            opt,
            buffer: ReplayBuffer::new(config.buffer.capacity_for(0)),
            evaluator: CachedEvaluator::new(inner, meter),
            accepted: 0,
            evals_since_update: 0,
            updates: 0,
            skipped: 0,
            trace_rows: 0,
            rng_sampling: derive_rng(config.master_seed, "sampling"),
            rng_explorer: derive_rng(config.master_seed, "explorer"),
            rng_prior: derive_rng(config.master_seed, "prior"),
            rng_shuffle: derive_rng(config.master_seed, "trainer-shuffle"),
        })
    }

    fn from_checkpoint(config: &SearchConfig, payload: CheckpointPayload) -> Result<Self> {
        if &payload.config != config {
            return Err(Error::Config(
                "checkpoint was produced by a different configuration".into(),
            ));
        }
        let evaluator_spec = config
            .evaluator
            .as_ref()
            .ok_or_else(|| Error::Config("an evaluator is required to run a search".into()))?;
        let inner = evaluator_spec.build(&config.space, config.master_seed)?;
        let evaluator = CachedEvaluator::new(inner, payload.meter);
        evaluator.restore(payload.cache, payload.meter);
        let mut buffer = ReplayBuffer::new(payload.buffer_capacity);
        for wire in &payload.buffer {
            buffer.insert(SampleRecord::from_wire(wire)?);
        }
        Ok(EngineState {
            model: payload.model,
            opt: payload.opt,
            buffer,
            evaluator,
            accepted: payload.accepted,
            evals_since_update: payload.evals_since_update,
            updates: payload.updates,
            skipped: payload.skipped,
            trace_rows: payload.trace_rows,
            rng_sampling: payload.rng_sampling,
            rng_explorer: payload.rng_explorer,
            rng_prior: payload.rng_prior,
            rng_shuffle: payload.rng_shuffle,
        })
    }

    fn to_payload(&self, config: &SearchConfig) -> CheckpointPayload {
        CheckpointPayload {
            config: config.clone(),
            model: self.model.clone(),
            opt: self.opt.clone(),
            buffer_capacity: self.buffer.capacity(),
            buffer: self.buffer.records().iter().map(|r| r.to_wire()).collect(),
            cache: self.evaluator.cache_entries(),
            meter: self.evaluator.meter(),
            accepted: self.accepted,
            evals_since_update: self.evals_since_update,
            updates: self.updates,
            skipped: self.skipped,
            trace_rows: self.trace_rows,
            rng_sampling: self.rng_sampling.clone(),
            rng_explorer: self.rng_explorer.clone(),
            rng_prior: self.rng_prior.clone(),
            rng_shuffle: self.rng_shuffle.clone(),
        }
    }
}

/// Truncates the trace file to its header plus the first `rows` data lines.
fn truncate_trace(path: &Path, rows: u64) -> Result<()> {
    let text = fs::read_to_string(path)?;
    let mut kept = String::new();
    for (i, line) in text.lines().enumerate() {
        if i as u64 > rows {
            break;
        }
        kept.push_str(line);
        kept.push('\n');
    }
    fs::write(path, kept)?;
    Ok(())
}

const MAX_CONSECUTIVE_SKIPS: u64 = 10_000;

/// Runs the search (or baseline) loop to completion and writes all
/// artifacts: trace.csv, checkpoint.json, summary.json, topk.jsonl,
/// scatter.csv, analysis.json.
pub fn run(
    config: &SearchConfig,
    out_dir: &Path,
    mode: RunMode,
    resume: bool,
) -> Result<RunArtifacts> {
    let started = Instant::now();
    let paths = RunPaths::new(out_dir);
    fs::create_dir_all(out_dir)?;

    if resume && mode != RunMode::Search {
        return Err(Error::Config("only search runs can be resumed".into()));
    }

    let mut state = if resume {
        let payload = load_checkpoint(&paths.checkpoint)?;
        let state = EngineState::from_checkpoint(config, payload)?;
        truncate_trace(&paths.trace, state.trace_rows)?;
        state
    } else {
        let state = EngineState::fresh(config)?;
        fs::write(&paths.trace, format!("{}\n", TRACE_HEADER))?;
        state
    };

    let mut trace = BufWriter::new(
        fs::OpenOptions::new()
            .append(true)
            .open(&paths.trace)?,
    );

    let mut consecutive_skips: u64 = 0;
    loop {
        if state.evaluator.meter().exhausted() {
            break;
        }
        let step = state.accepted / config.samples_per_step;
        if let Some(max) = config.max_steps {
            if step >= max {
                break;
            }
        }
        let epsilon = match mode {
            RunMode::Search => config.epsilon.epsilon_at(step),
            RunMode::BaselineRandom => 1.0,
        };
        let source = match mode {
            RunMode::Search => choose_source(&mut state.rng_explorer, epsilon),
            RunMode::BaselineRandom => Source::Prior,
        };

        let mut sample_log_prob: Option<f64> = None;
        let (graph, _tries) = match source {
            Source::Prior => rejection_sample(
                || config.prior.sample(&config.space, &mut state.rng_prior),
                &config.space,
                config.rejection_max_tries,
            )?,
            Source::Generator => {
                let model = &state.model;
                let rng = &mut state.rng_sampling;
                let logp = &mut sample_log_prob;
                rejection_sample(
                    || {
                        let (g, lp) = model.sample(&config.space, rng)?;
                        *logp = Some(lp);
                        Ok(g)
                    },
                    &config.space,
                    config.rejection_max_tries,
                )?
            }
        };

        let (result, _freshness) = match state.evaluator.evaluate_tracked(&graph) {
            Ok(pair) => pair,
            Err(Error::BudgetExhausted { .. }) => break,
            Err(Error::TabularMiss) => {
                state.skipped += 1;
                consecutive_skips += 1;
                if consecutive_skips > MAX_CONSECUTIVE_SKIPS {
                    return Err(Error::Config(format!(
                        "{} consecutive candidates missing from the evaluator table",
                        consecutive_skips
                    )));
                }
                eprintln!(
                    "skipping candidate {}: not in evaluator table",
                    graph.canonical_hash()
                );
                continue;
            }
            Err(e) => return Err(e),
        };
        consecutive_skips = 0;

        let eval_id = state.accepted;
        state.accepted += 1;
        let embedded = embed_into_space(&config.space, &graph)?;
        state.buffer.insert(SampleRecord {
            graph: embedded,
            reward: result.reward,
            source,
            step,
            eval_id,
        });
        if config.buffer.top_fraction.is_some() {
            state
                .buffer
                .set_capacity(config.buffer.capacity_for(state.accepted));
        }

        let buffer_stats = state.buffer.stats()?;
        let gstats = graph.stats();
        let row = TraceRow {
            step,
            eval_id,
            source,
            reward: result.reward,
            buffer_mean: buffer_stats.baseline,
            buffer_std: buffer_stats.sigma,
            epsilon,
            log_prob: match source {
                Source::Generator => sample_log_prob,
                Source::Prior => None,
            },
            clustering_coefficient: gstats.clustering_coefficient,
            avg_shortest_path: gstats.avg_shortest_path,
        };
        writeln!(trace, "{}", row.render())?;
        trace.flush()?;
        state.trace_rows += 1;

        state.evals_since_update += 1;
        if mode == RunMode::Search
            && state.evals_since_update >= config.trainer.update_every
            && !state.buffer.is_empty()
        {
            train_update(
                &mut state.model,
                &config.space,
                &state.buffer,
                &mut state.opt,
                &config.trainer,
                &mut state.rng_shuffle,
            )?;
            state.evals_since_update = 0;
            state.updates += 1;
            save_checkpoint(&paths.checkpoint, &state.to_payload(config))?;
        }
    }
    drop(trace);

    if mode == RunMode::Search {
        save_checkpoint(&paths.checkpoint, &state.to_payload(config))?;
    }

    // final sample set: k draws from the searched generator (prior for
    // baseline runs), annotated with cached rewards where available
    let mut top_k = Vec::with_capacity(config.top_k);
    for _ in 0..config.top_k {
        let mut lp: Option<f64> = None;
        let (g, _) = match mode {
            RunMode::Search => {
                let model = &state.model;
                let rng = &mut state.rng_sampling;
                let lp_slot = &mut lp;
                rejection_sample(
                    || {
                        let (g, logp) = model.sample(&config.space, rng)?;
                        *lp_slot = Some(logp);
                        Ok(g)
                    },
                    &config.space,
                    config.rejection_max_tries,
                )?
            }
            RunMode::BaselineRandom => rejection_sample(
                || config.prior.sample(&config.space, &mut state.rng_prior),
                &config.space,
                config.rejection_max_tries,
            )?,
        };
        let cached_reward = state.evaluator.peek(&g.canonical_hash()).map(|r| r.reward);
        top_k.push(TopSample {
            graph: g.to_record(),
            log_prob: lp,
            cached_reward,
        });
    }
    let mut topk_file = BufWriter::new(fs::File::create(&paths.topk)?);
    for s in &top_k {
        writeln!(topk_file, "{}", serde_json::to_string(s)?)?;
    }
    topk_file.flush()?;

    let best = state.buffer.best();
    let summary = RunSummary {
        best_reward: best.map(|r| r.reward),
        best_graph: best.map(|r| r.graph.to_record()),
        accepted_evaluations: state.accepted,
        budget_consumed: state.evaluator.meter().consumed,
        budget_limit: config.budget_limit,
        steps_completed: state.accepted / config.samples_per_step,
        updates: state.updates,
        skipped_candidates: state.skipped,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    fs::write(&paths.summary, serde_json::to_string_pretty(&summary)?)?;

    emit_analysis(&paths, &top_k)?;

    Ok(RunArtifacts {
        paths,
        summary,
        top_k,
    })
}

pub fn run_search(config: &SearchConfig, out_dir: &Path, resume: bool) -> Result<RunArtifacts> {
    run(config, out_dir, RunMode::Search, resume)
}

pub fn run_baseline(config: &SearchConfig, out_dir: &Path) -> Result<RunArtifacts> {
    run(config, out_dir, RunMode::BaselineRandom, false)
}

// ---------------------------------------------------------------------------
// analysis

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisTable {
    pub top_k_count: usize,
    /// Mean over the final sample set's input->output path statistics;
    /// absent for spaces without io roles.
    pub top_k_io_avg_path: Option<f64>,
    pub top_k_io_longest_path: Option<f64>,
}

/// Writes scatter.csv (one row per accepted evaluation for external
/// plotting) and analysis.json (io path statistics of the final sample set).
pub fn emit_analysis(paths: &RunPaths, top_k: &[TopSample]) -> Result<AnalysisTable> {
    let rows = parse_trace(&paths.trace)?;
    let mut scatter = BufWriter::new(fs::File::create(&paths.scatter)?);
    writeln!(
        scatter,
        "clustering_coefficient,avg_shortest_path,reward,source,step"
    )?;
    for r in &rows {
        writeln!(
            scatter,
            "{},{},{},{},{}",
            r.clustering_coefficient, r.avg_shortest_path, r.reward, r.source, r.step
        )?;
    }
    scatter.flush()?;

    let mut avg_sum = 0.0;
    let mut longest_sum = 0.0;
    let mut io_count = 0usize;
    for s in top_k {
        let g = ArchGraph::from_record(&s.graph)?;
        if let Some(io) = g.stats().io {
            avg_sum += io.avg_path;
            longest_sum += io.longest_path as f64;
            io_count += 1;
        }
    }
    let table = AnalysisTable {
        top_k_count: top_k.len(),
        top_k_io_avg_path: (io_count > 0).then(|| avg_sum / io_count as f64),
        top_k_io_longest_path: (io_count > 0).then(|| longest_sum / io_count as f64),
    };
    fs::write(&paths.analysis, serde_json::to_string_pretty(&table)?)?;
    Ok(table)
}

/// Draws `num` graphs from a checkpointed model (used by the CLI).
pub fn sample_from_checkpoint(
    checkpoint: &Path,
    num: usize,
    seed: u64,
) -> Result<Vec<(ArchGraph, f64)>> {
    let payload = load_checkpoint(checkpoint)?;
    let space = payload.config.space.clone();
    let model = payload.model;
    let mut rng = derive_rng(seed, "sampling");
    let mut out = Vec::with_capacity(num);
    for _ in 0..num {
        let mut lp = 0.0;
        let (g, _) = rejection_sample(
            || {
                let (g, logp) = model.sample(&space, &mut rng)?;
                lp = logp;
                Ok(g)
            },
            &space,
            payload.config.rejection_max_tries,
        )?;
        out.push((g, lp));
    }
    Ok(out)
}
