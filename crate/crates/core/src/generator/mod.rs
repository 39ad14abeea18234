//! Probabilistic graph generators.
//!
//! Two models share one interface: an auto-regressive GNN generator with
//! mixture-of-Bernoulli edge blocks, and a flat sequence (GRU) baseline.
//! Both expose exact log-likelihoods under the canonical node order, so a
//! sampled graph's reported log-probability and a teacher-forced evaluation
//! of the same graph agree to rounding.

mod gnn;
mod rnn;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ArchGraph;
use crate::params::{derive_rng, BoundParams, ParamSet};
use crate::space::SpaceSpec;
use crate::tensor::{Tape, TensorRef};

pub use gnn::propagate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Graph,
    Rnn,
}

/// Model hyperparameters. Defaults: K=10 mixture components, S=7 message
/// passing rounds, hidden width 128.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: GeneratorKind,
    pub k: usize,
    pub s: usize,
    pub hidden: usize,
    pub n_max: usize,
}

impl ModelConfig {
    pub fn defaults(kind: GeneratorKind, n_max: usize) -> Self {
        ModelConfig {
            kind,
            k: 10,
            s: 7,
            hidden: 128,
            n_max,
        }
    }
}

/// A generator model: config plus learnable weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorModel {
    pub config: ModelConfig,
    pub params: ParamSet,
}

/// How decisions are made during a forward pass.
pub enum Mode<'a> {
    Sample(&'a mut ChaCha20Rng),
    Teacher(&'a ArchGraph),
}

impl GeneratorModel {
    /// Deterministic initialization from a seed.
    pub fn init(space: &SpaceSpec, config: ModelConfig, seed: u64) -> Result<Self> {
        if config.n_max < space.n_nodes {
            return Err(Error::InvalidArgument(format!(
                "n_max {} smaller than space size {}",
                config.n_max, space.n_nodes
            )));
        }
        if config.k < 1 || config.hidden < 1 {
            return Err(Error::InvalidArgument(
                "model needs k >= 1 and hidden >= 1".into(),
            ));
        }
        let mut rng = derive_rng(seed, "generator-init");
        let params = match config.kind {
            GeneratorKind::Graph => gnn::init_params(space, &config, &mut rng),
            GeneratorKind::Rnn => rnn::init_params(space, &config, &mut rng),
        };
        Ok(GeneratorModel { config, params })
    }

    /// Draws one graph; returns it with its exact (mixture-marginalized)
    /// log-probability.
    pub fn sample(
        &self,
        space: &SpaceSpec,
        rng: &mut ChaCha20Rng,
    ) -> Result<(ArchGraph, f64)> {
        let mut tape = Tape::no_grad();
        let bound = self.params.bind(&mut tape);
        let (g, logp) = self.forward(&mut tape, &bound, space, &mut Mode::Sample(rng))?;
        Ok((g, tape.scalar(logp)))
    }

    /// Exact log P(g) as a plain number.
    pub fn log_prob(&self, space: &SpaceSpec, g: &ArchGraph) -> Result<f64> {
        let mut tape = Tape::no_grad();
        let bound = self.params.bind(&mut tape);
        let (_, logp) = self.forward(&mut tape, &bound, space, &mut Mode::Teacher(g))?;
        Ok(tape.scalar(logp))
    }

    /// Differentiable log P(g) on a caller-owned tape with caller-bound
    /// parameters (one binding can serve many graphs).
    pub fn log_prob_on(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        space: &SpaceSpec,
        g: &ArchGraph,
    ) -> Result<TensorRef> {
        let (_, logp) = self.forward(tape, bound, space, &mut Mode::Teacher(g))?;
        Ok(logp)
    }

    pub(crate) fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        space: &SpaceSpec,
        mode: &mut Mode,
    ) -> Result<(ArchGraph, TensorRef)> {
        if space.n_nodes > self.config.n_max {
            return Err(Error::InvalidArgument(format!(
                "space has {} nodes, model supports {}",
                space.n_nodes, self.config.n_max
            )));
        }
        match self.config.kind {
            GeneratorKind::Graph => gnn::forward(&self.config, tape, bound, space, mode),
            GeneratorKind::Rnn => rnn::forward(&self.config, tape, bound, space, mode),
        }
    }
}

/// One categorical draw from unnormalized-free log-probabilities.
pub(crate) fn sample_categorical(log_probs: &[f64], rng: &mut ChaCha20Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    log_probs.len() - 1
}

/// The decision for node `t`'s attribute, honoring role forcing.
pub(crate) fn decide_attribute(
    t: usize,
    space: &SpaceSpec,
    log_probs: &[f64],
    mode: &mut Mode,
) -> Result<(usize, bool)> {
    if let Some(op) = space.forced_op(t) {
        // forced attributes contribute log-prob 0
        if let Mode::Teacher(g) = mode {
            if g.node_ops()[t] != op {
                return Err(Error::InvalidArgument(format!(
                    "graph op {} at node {} violates role forcing {}",
                    g.node_ops()[t],
                    t,
                    op
                )));
            }
        }
        return Ok((op, true));
    }
    match mode {
        Mode::Sample(rng) => Ok((sample_categorical(log_probs, rng), false)),
        Mode::Teacher(g) => {
            let op = g.node_ops()[t];
            if op >= space.d_ops {
                return Err(Error::OpOutOfRange {
                    node: t,
                    op,
                    d: space.d_ops,
                });
            }
            Ok((op, false))
        }
    }
}

/// Sums a list of scalar log-probability terms; zero scalar when empty.
pub(crate) fn sum_terms(tape: &mut Tape, terms: &[TensorRef]) -> Result<TensorRef> {
    match terms.split_first() {
        None => Ok(tape.scalar_const(0.0)),
        Some((&first, rest)) => {
            let mut acc = first;
            for &t in rest {
                acc = tape.add(acc, t)?;
            }
            Ok(acc)
        }
    }
}

/// Bernoulli log-likelihood matrix for one edge row: entry (j, k) is
/// log Bern(bit_j | sigmoid(theta[j, k])), computed as -softplus(+/-theta).
pub(crate) fn bernoulli_log_likelihood(
    tape: &mut Tape,
    theta: TensorRef,
    bits: &[bool],
) -> Result<TensorRef> {
    let (t, k) = tape.shape(theta);
    debug_assert_eq!(t, bits.len());
    let mut signs = Vec::with_capacity(t * k);
    for &b in bits {
        let s = if b { -1.0 } else { 1.0 };
        signs.extend(std::iter::repeat(s).take(k));
    }
    let sign_mat = tape.constant(t, k, signs);
    let signed = tape.mul(theta, sign_mat)?;
    let sp = tape.softplus(signed)?;
    tape.affine(sp, -1.0, 0.0)
}
