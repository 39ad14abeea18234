//! Replay buffer, reward standardization, the reweighted REINFORCE
//! objective, and the generator update procedure.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::GeneratorModel;
use crate::graph::{ArchGraph, GraphRecord};
use crate::params::{AdamState, Gradients};
use crate::priors::Source;
use crate::space::SpaceSpec;
use crate::tensor::{log1mexp, Tape, TensorRef};

/// One evaluated architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub graph: ArchGraph,
    pub reward: f64,
    pub source: Source,
    pub step: u64,
    pub eval_id: u64,
}

/// Serialized form of a SampleRecord (checkpoints).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecordWire {
    pub graph: GraphRecord,
    pub reward: f64,
    pub source: Source,
    pub step: u64,
    pub eval_id: u64,
}

impl SampleRecord {
    pub fn to_wire(&self) -> SampleRecordWire {
        SampleRecordWire {
            graph: self.graph.to_record(),
            reward: self.reward,
            source: self.source,
            step: self.step,
            eval_id: self.eval_id,
        }
    }

    pub fn from_wire(w: &SampleRecordWire) -> Result<Self> {
        Ok(SampleRecord {
            graph: ArchGraph::from_record(&w.graph)?,
            reward: w.reward,
            source: w.source,
            step: w.step,
            eval_id: w.eval_id,
        })
    }
}

/// Capacity-bounded top-reward store, deduplicated by canonical hash.
/// Contents always equal the top-M records by reward among everything
/// inserted; ties break toward earlier eval_id, duplicates keep the best
/// reward.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    records: Vec<SampleRecord>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            records: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Re-bounds the buffer (top-fraction sizing); evicts the worst records
    /// if it shrinks below the current occupancy.
    pub fn set_capacity(&mut self, capacity: usize) -> Vec<SampleRecord> {
        self.capacity = capacity.max(1);
        let mut evicted = Vec::new();
        while self.records.len() > self.capacity {
            evicted.push(self.records.pop().expect("nonempty"));
        }
        evicted
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    fn better(a: &SampleRecord, b: &SampleRecord) -> std::cmp::Ordering {
        b.reward
            .partial_cmp(&a.reward)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.eval_id.cmp(&b.eval_id))
    }

    /// Inserts one record; returns everything evicted (possibly the record
    /// itself when it does not make the top-M).
    pub fn insert(&mut self, record: SampleRecord) -> Vec<SampleRecord> {
        if !record.reward.is_finite() {
            return vec![record];
        }
        let hash = record.graph.canonical_hash();
        if let Some(pos) = self
            .records
            .iter()
            .position(|r| r.graph.canonical_hash() == hash)
        {
            // duplicate graph keeps the max reward
            if record.reward > self.records[pos].reward {
                let old = std::mem::replace(&mut self.records[pos], record);
                self.records.sort_by(Self::better);
                return vec![old];
            }
            return vec![record];
        }
        self.records.push(record);
        self.records.sort_by(Self::better);
        if self.records.len() > self.capacity {
            vec![self.records.pop().expect("nonempty")]
        } else {
            Vec::new()
        }
    }

    pub fn best(&self) -> Option<&SampleRecord> {
        self.records.first()
    }

    /// Baseline C (mean reward) and spread sigma (population standard
    /// deviation, substituted by 1.0 when below the floor).
    pub fn stats(&self) -> Result<RewardStats> {
        if self.records.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let n = self.records.len() as f64;
        let mean = self.records.iter().map(|r| r.reward).sum::<f64>() / n;
        let var = self
            .records
            .iter()
            .map(|r| (r.reward - mean).powi(2))
            .sum::<f64>()
            / n;
        let raw_sigma = var.sqrt();
        let sigma = if raw_sigma < SIGMA_FLOOR { 1.0 } else { raw_sigma };
        Ok(RewardStats {
            baseline: mean,
            sigma,
            sigma_floored: raw_sigma < SIGMA_FLOOR,
        })
    }
}

const SIGMA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardStats {
    pub baseline: f64,
    pub sigma: f64,
    pub sigma_floored: bool,
}

/// Standardized reward (R - C) / sigma.
pub fn standardize_reward(reward: f64, stats: &RewardStats) -> f64 {
    (reward - stats.baseline) / stats.sigma
}

/// Reweighted REINFORCE surrogate on a plain log-probability.
///
/// Above-baseline samples contribute -R * log P; at-or-below-baseline
/// samples contribute -|R| * beta * log(1 - P), whose gradient in P is
/// bounded so low-probability bad samples cannot blow up the update.
pub fn reweighted_loss(log_p: f64, standardized: f64, beta: f64) -> Result<f64> {
    if log_p > 0.0 {
        return Err(Error::InvalidArgument(format!(
            "log probability must be <= 0, got {}",
            log_p
        )));
    }
    if standardized > 0.0 {
        Ok(-standardized * log_p)
    } else if standardized == 0.0 {
        Ok(0.0)
    } else {
        Ok(-standardized.abs() * beta * log1mexp(log_p)?)
    }
}

/// Tape-resident version of [`reweighted_loss`], differentiable through
/// `log_p`.
pub fn reweighted_loss_on(
    tape: &mut Tape,
    log_p: TensorRef,
    standardized: f64,
    beta: f64,
) -> Result<TensorRef> {
    if standardized > 0.0 {
        tape.affine(log_p, -standardized, 0.0)
    } else if standardized == 0.0 {
        Ok(tape.scalar_const(0.0))
    } else {
        let lm = tape.log1mexp(log_p)?;
        tape.affine(lm, -standardized.abs() * beta, 0.0)
    }
}

/// Trainer knobs for one update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub lr: f64,
    pub clip: f64,
    pub minibatch: usize,
    pub epochs: usize,
    pub beta: f64,
    /// Run one update every this many accepted evaluations.
    pub update_every: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainMetrics {
    pub mean_loss: f64,
    pub last_grad_norm: f64,
    pub epochs_run: usize,
}

/// Trains the generator on the replay buffer: reward statistics are frozen
/// at update start, then for E epochs the buffer is shuffled and consumed in
/// minibatches with the reweighted loss averaged per batch.
pub fn train_update(
    model: &mut GeneratorModel,
    space: &SpaceSpec,
    buffer: &ReplayBuffer,
    opt: &mut AdamState,
    cfg: &TrainerConfig,
    rng: &mut ChaCha20Rng,
) -> Result<TrainMetrics> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    if cfg.epochs == 0 {
        return Ok(TrainMetrics {
            mean_loss: 0.0,
            last_grad_norm: 0.0,
            epochs_run: 0,
        });
    }
    let stats = buffer.stats()?;
    let batch = cfg.minibatch.max(1);
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    let mut last_norm = 0.0;
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let mut terms = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let rec = &buffer.records()[idx];
                let log_p = model.log_prob_on(&mut tape, &bound, space, &rec.graph)?;
                let r_bar = standardize_reward(rec.reward, &stats);
                terms.push(reweighted_loss_on(&mut tape, log_p, r_bar, cfg.beta)?);
            }
            let total = crate::generator::sum_terms(&mut tape, &terms)?;
            let loss = tape.affine(total, 1.0 / chunk.len() as f64, 0.0)?;
            loss_sum += tape.scalar(loss);
            loss_count += 1;
            let grads = tape.backward(loss)?;
            let collected: Gradients = bound.collect_grads(&model.params, &grads, &tape);
            last_norm = opt.step(&mut model.params, collected, cfg.clip)?;
        }
    }
    Ok(TrainMetrics {
        mean_loss: loss_sum / loss_count as f64,
        last_grad_norm: last_norm,
        epochs_run: cfg.epochs,
    })
}
