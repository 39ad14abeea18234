//! Sequence baseline generator.
//!
//! Graph decisions are flattened into one token stream: for each node t, one
//! attribute token followed by t edge tokens. A single gated recurrent cell
//! (fed the embedding of the previous decision) drives a categorical head
//! for attributes and a Bernoulli head for edges.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::error::Result;
use crate::graph::ArchGraph;
use crate::params::{BoundParams, ParamSet};
use crate::space::SpaceSpec;
use crate::tensor::{sigmoid, Tape, TensorRef};

use super::{decide_attribute, gnn::gru_update, sum_terms, Mode, ModelConfig};

pub(super) fn init_params(
    space: &SpaceSpec,
    config: &ModelConfig,
    rng: &mut ChaCha20Rng,
) -> ParamSet {
    let h = config.hidden;
    let d = space.d_ops;
    let mut p = ParamSet::new();
    p.add_matrix("tok_start", 1, h, rng);
    p.add_matrix("tok_op", d, h, rng);
    p.add_matrix("tok_bit", 2, h, rng);
    for gate in ["z", "r", "h"] {
        p.add_matrix(&format!("gru_w{gate}"), h, h, rng);
        p.add_matrix(&format!("gru_u{gate}"), h, h, rng);
        p.add_zeros(&format!("gru_b{gate}"), 1, h);
    }
    p.add_matrix("attr_head", h, d, rng);
    p.add_zeros("attr_head_b", 1, d);
    p.add_matrix("edge_head", h, 1, rng);
    p.add_zeros("edge_head_b", 1, 1);
    p
}

pub(super) fn forward(
    config: &ModelConfig,
    tape: &mut Tape,
    bound: &BoundParams,
    space: &SpaceSpec,
    mode: &mut Mode,
) -> Result<(ArchGraph, TensorRef)> {
    let n = space.n_nodes;
    let mut ops = Vec::with_capacity(n);
    let mut bits = Vec::with_capacity(n * (n - 1) / 2);
    let mut terms = Vec::new();

    let mut hidden = tape.zeros(1, config.hidden);
    let mut prev_tok = bound.get("tok_start");

    for t in 0..n {
        hidden = gru_update(tape, bound, prev_tok, hidden)?;
        let logits_pre = tape.matmul(hidden, bound.get("attr_head"))?;
        let logits = tape.add_bias(logits_pre, bound.get("attr_head_b"))?;
        let log_probs = tape.log_softmax_rows(logits)?;
        let lp_values = tape.value(log_probs).to_vec();
        let (op_t, forced) = decide_attribute(t, space, &lp_values, mode)?;
        if !forced {
            terms.push(tape.select(log_probs, 0, op_t)?);
        }
        ops.push(op_t);
        prev_tok = tape.gather_rows(bound.get("tok_op"), &[op_t])?;

        for j in 0..t {
            hidden = gru_update(tape, bound, prev_tok, hidden)?;
            let logit_pre = tape.matmul(hidden, bound.get("edge_head"))?;
            let logit = tape.add_bias(logit_pre, bound.get("edge_head_b"))?;
            let bit = match mode {
                Mode::Sample(rng) => rng.gen::<f64>() < sigmoid(tape.scalar(logit)),
                Mode::Teacher(g) => g.edge(t, j),
            };
            // log Bern(bit | sigmoid(logit)) = -softplus(-/+logit)
            let sign = if bit { -1.0 } else { 1.0 };
            let signed = tape.affine(logit, sign, 0.0)?;
            let sp = tape.softplus(signed)?;
            terms.push(tape.affine(sp, -1.0, 0.0)?);
            bits.push(bit);
            prev_tok = tape.gather_rows(bound.get("tok_bit"), &[usize::from(bit)])?;
        }
    }

    let graph = ArchGraph::new(n, &bits, ops, space.d_ops, space.graph_roles())?;
    let logp = sum_terms(tape, &terms)?;
    Ok((graph, logp))
}
