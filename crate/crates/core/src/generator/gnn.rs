//! Auto-regressive GNN generator.
//!
//! Nodes are generated in canonical index order. Step t samples node t's
//! attribute from a context head, runs S rounds of message passing over the
//! partial graph (realized edges plus candidate edges joining node t to every
//! previous node, each direction tagged with an edge-state embedding, node
//! states updated by a gated recurrent cell), then samples node t's edge row
//! from a K-component mixture of independent Bernoullis. Likelihoods always
//! marginalize the mixture component by log-sum-exp.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::error::Result;
use crate::graph::ArchGraph;
use crate::params::{BoundParams, ParamSet};
use crate::space::SpaceSpec;
use crate::tensor::{sigmoid, Tape, TensorRef};

use super::{
    bernoulli_log_likelihood, decide_attribute, sample_categorical, sum_terms, Mode, ModelConfig,
};

const REALIZED: usize = 0;
const CANDIDATE: usize = 1;

pub(super) fn init_params(
    space: &SpaceSpec,
    config: &ModelConfig,
    rng: &mut ChaCha20Rng,
) -> ParamSet {
    let h = config.hidden;
    let (d, k) = (space.d_ops, config.k);
    let mut p = ParamSet::new();
    p.add_matrix("op_embed", d, h, rng);
    p.add_matrix("pos_embed", config.n_max, h, rng);
    p.add_matrix("edge_state_embed", 2, h, rng);
    p.add_matrix("msg_w1", 3 * h, h, rng);
    p.add_zeros("msg_b1", 1, h);
    p.add_matrix("msg_w2", h, h, rng);
    p.add_zeros("msg_b2", 1, h);
    for gate in ["z", "r", "h"] {
        p.add_matrix(&format!("gru_w{gate}"), h, h, rng);
        p.add_matrix(&format!("gru_u{gate}"), h, h, rng);
        p.add_zeros(&format!("gru_b{gate}"), 1, h);
    }
    p.add_matrix("edge_w", 2 * h, h, rng);
    p.add_zeros("edge_b", 1, h);
    p.add_matrix("theta_proj", h, k, rng);
    p.add_zeros("theta_bias", 1, k);
    p.add_matrix("alpha_w", h, k, rng);
    p.add_zeros("alpha_b", 1, k);
    p.add_matrix("attr_w1", 2 * h, h, rng);
    p.add_zeros("attr_b1", 1, h);
    p.add_matrix("attr_w2", h, d, rng);
    p.add_zeros("attr_b2", 1, d);
    p
}

/// One gated recurrent cell update for every row: x is the aggregated
/// message, h the current state.
pub(super) fn gru_update(
    tape: &mut Tape,
    bound: &BoundParams,
    x: TensorRef,
    h: TensorRef,
) -> Result<TensorRef> {
    let gate = |tape: &mut Tape, w: &str, u: &str, b: &str, other: TensorRef| -> Result<TensorRef> {
        let wx = tape.matmul(x, bound.get(w))?;
        let uh = tape.matmul(other, bound.get(u))?;
        let s = tape.add(wx, uh)?;
        tape.add_bias(s, bound.get(b))
    };
    let z_pre = gate(tape, "gru_wz", "gru_uz", "gru_bz", h)?;
    let z = tape.sigmoid(z_pre)?;
    let r_pre = gate(tape, "gru_wr", "gru_ur", "gru_br", h)?;
    let r = tape.sigmoid(r_pre)?;
    let rh = tape.mul(r, h)?;
    let c_pre = gate(tape, "gru_wh", "gru_uh", "gru_bh", rh)?;
    let cand = tape.tanh(c_pre)?;
    let keep = tape.affine(z, -1.0, 1.0)?; // 1 - z
    let kept = tape.mul(keep, h)?;
    let new = tape.mul(z, cand)?;
    tape.add(kept, new)
}

/// S rounds of message passing over the partial graph with `t_new + 1` nodes:
/// realized edges are those already decided, candidate edges join the new
/// node to every previous node. Both directions of every edge carry a
/// message tagged by the edge-state embedding; messages aggregate by
/// segment-sum at the receiver and node states update through the gated
/// cell. Returns final node embeddings, one row per node.
pub fn propagate(
    config: &ModelConfig,
    tape: &mut Tape,
    bound: &BoundParams,
    node_ops: &[usize],
    realized: &[(usize, usize)],
    t_new: usize,
) -> Result<TensorRef> {
    let m = t_new + 1;
    debug_assert_eq!(node_ops.len(), m);
    let op_rows = tape.gather_rows(bound.get("op_embed"), node_ops)?;
    let positions: Vec<usize> = (0..m).collect();
    let pos_rows = tape.gather_rows(bound.get("pos_embed"), &positions)?;
    let mut h = tape.add(op_rows, pos_rows)?;

    // directed message edges in a fixed order: realized pairs both ways,
    // then candidate pairs both ways
    let mut srcs = Vec::new();
    let mut dsts = Vec::new();
    let mut states = Vec::new();
    for &(j, i) in realized {
        srcs.push(j);
        dsts.push(i);
        states.push(REALIZED);
        srcs.push(i);
        dsts.push(j);
        states.push(REALIZED);
    }
    for j in 0..t_new {
        srcs.push(j);
        dsts.push(t_new);
        states.push(CANDIDATE);
        srcs.push(t_new);
        dsts.push(j);
        states.push(CANDIDATE);
    }

    for _ in 0..config.s {
        let aggregated = if srcs.is_empty() {
            tape.zeros(m, config.hidden)
        } else {
            let recv = tape.gather_rows(h, &dsts)?;
            let send = tape.gather_rows(h, &srcs)?;
            let tag = tape.gather_rows(bound.get("edge_state_embed"), &states)?;
            let pair = tape.concat_cols(recv, send)?;
            let input = tape.concat_cols(pair, tag)?;
            let h1_pre = tape.matmul(input, bound.get("msg_w1"))?;
            let h1_b = tape.add_bias(h1_pre, bound.get("msg_b1"))?;
            let h1 = tape.relu(h1_b)?;
            let msg_pre = tape.matmul(h1, bound.get("msg_w2"))?;
            let msg = tape.add_bias(msg_pre, bound.get("msg_b2"))?;
            tape.segment_sum(msg, &dsts, m)?
        };
        h = gru_update(tape, bound, aggregated, h)?;
    }
    Ok(h)
}

pub(super) fn forward(
    config: &ModelConfig,
    tape: &mut Tape,
    bound: &BoundParams,
    space: &SpaceSpec,
    mode: &mut Mode,
) -> Result<(ArchGraph, TensorRef)> {
    let n = space.n_nodes;
    let h_dim = config.hidden;
    let mut ops: Vec<usize> = Vec::with_capacity(n);
    let mut bits: Vec<bool> = Vec::with_capacity(n * (n - 1) / 2);
    let mut realized: Vec<(usize, usize)> = Vec::new();
    let mut prev_h: Option<TensorRef> = None;
    let mut terms: Vec<TensorRef> = Vec::new();

    for t in 0..n {
        // attribute head on [mean of previous node embeddings, position]
        let ctx_mean = match prev_h {
            Some(ph) => tape.mean_rows(ph)?,
            None => tape.zeros(1, h_dim),
        };
        let pos_t = tape.gather_rows(bound.get("pos_embed"), &[t])?;
        let ctx = tape.concat_cols(ctx_mean, pos_t)?;
        let a1_pre = tape.matmul(ctx, bound.get("attr_w1"))?;
        let a1_b = tape.add_bias(a1_pre, bound.get("attr_b1"))?;
        let a1 = tape.relu(a1_b)?;
        let logits_pre = tape.matmul(a1, bound.get("attr_w2"))?;
        let logits = tape.add_bias(logits_pre, bound.get("attr_b2"))?;
        let log_probs = tape.log_softmax_rows(logits)?;
        let lp_values = tape.value(log_probs).to_vec();
        let (op_t, forced) = decide_attribute(t, space, &lp_values, mode)?;
        if !forced {
            terms.push(tape.select(log_probs, 0, op_t)?);
        }
        ops.push(op_t);

        let h = propagate(config, tape, bound, &ops, &realized, t)?;

        if t > 0 {
            let h_new = tape.gather_rows(h, &[t])?;
            let prev_idx: Vec<usize> = (0..t).collect();
            let h_prev = tape.gather_rows(h, &prev_idx)?;
            let h_new_rep = tape.gather_rows(h, &vec![t; t])?;
            let pair = tape.concat_cols(h_new_rep, h_prev)?;
            let f_pre = tape.matmul(pair, bound.get("edge_w"))?;
            let f_b = tape.add_bias(f_pre, bound.get("edge_b"))?;
            let feats = tape.relu(f_b)?;
            let theta_pre = tape.matmul(feats, bound.get("theta_proj"))?;
            let theta = tape.add_bias(theta_pre, bound.get("theta_bias"))?; // t x K
            let alpha_pre = tape.matmul(h_new, bound.get("alpha_w"))?;
            let alpha = tape.add_bias(alpha_pre, bound.get("alpha_b"))?; // 1 x K
            let log_alpha = tape.log_softmax_rows(alpha)?;

            let row_bits: Vec<bool> = match mode {
                Mode::Sample(rng) => {
                    // draw a component, then independent Bernoulli edges
                    let comp = sample_categorical(tape.value(log_alpha), rng);
                    let theta_vals = tape.value(theta).to_vec();
                    (0..t)
                        .map(|j| rng.gen::<f64>() < sigmoid(theta_vals[j * config.k + comp]))
                        .collect()
                }
                Mode::Teacher(g) => (0..t).map(|j| g.edge(t, j)).collect(),
            };

            // exact mixture log-likelihood: logsumexp_k [log alpha_k + sum_j log Bern]
            let log_bern = bernoulli_log_likelihood(tape, theta, &row_bits)?;
            let ones = tape.constant(1, t, vec![1.0; t]);
            let col_sums = tape.matmul(ones, log_bern)?; // 1 x K
            let per_comp = tape.add(log_alpha, col_sums)?;
            terms.push(tape.log_sum_exp_rows(per_comp)?);

            for (j, &b) in row_bits.iter().enumerate() {
                bits.push(b);
                if b {
                    realized.push((j, t));
                }
            }
        }
        prev_h = Some(h);
    }

    let graph = ArchGraph::new(n, &bits, ops, space.d_ops, space.graph_roles())?;
    let logp = sum_terms(tape, &terms)?;
    Ok((graph, logp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{GeneratorKind, GeneratorModel};
    use crate::params::derive_rng;

    fn model(s: usize) -> (SpaceSpec, GeneratorModel) {
        let space = SpaceSpec::free("tiny", 3, 2);
        let cfg = ModelConfig {
            kind: GeneratorKind::Graph,
            k: 3,
            s,
            hidden: 8,
            n_max: 4,
        };
        (space.clone(), GeneratorModel::init(&space, cfg, 5).unwrap())
    }

    #[test]
    fn propagate_without_rounds_returns_initial_embeddings() {
        let (_, m) = model(0);
        let mut tape = Tape::no_grad();
        let bound = m.params.bind(&mut tape);
        let h = propagate(&m.config, &mut tape, &bound, &[1, 0], &[(0, 1)], 1).unwrap();
        let op = m.params.get("op_embed").unwrap();
        let pos = m.params.get("pos_embed").unwrap();
        let expect: Vec<f64> = (0..8)
            .map(|i| op.data[8 + i] + pos.data[i])
            .chain((0..8).map(|i| op.data[i] + pos.data[8 + i]))
            .collect();
        assert_eq!(tape.value(h), &expect[..]);
    }

    #[test]
    fn first_node_propagates_with_empty_messages() {
        let (_, m) = model(2);
        let mut tape = Tape::no_grad();
        let bound = m.params.bind(&mut tape);
        let h = propagate(&m.config, &mut tape, &bound, &[0], &[], 0).unwrap();
        assert_eq!(tape.shape(h), (1, 8));
        // repeated evaluation is bit-identical
        let h2 = propagate(&m.config, &mut tape, &bound, &[0], &[], 0).unwrap();
        assert_eq!(tape.value(h), tape.value(h2));
    }

    #[test]
    fn k1_log_prob_equals_independent_bernoulli_product() {
        let space = SpaceSpec::free("tiny", 3, 2);
        let cfg = ModelConfig {
            kind: GeneratorKind::Graph,
            k: 1,
            s: 1,
            hidden: 8,
            n_max: 3,
        };
        let m = GeneratorModel::init(&space, cfg, 7).unwrap();
        // with K=1, log-sum-exp over one component is that component; the
        // probabilities over the full space must still sum to 1
        let mut total = 0.0;
        for g in crate::space::enumerate_space(&space).unwrap() {
            total += m.log_prob(&space, &g).unwrap().exp();
        }
        assert!((total - 1.0).abs() < 1e-9, "sum {}", total);
    }

    #[test]
    fn monotonicity_in_edge_logit_at_k1() {
        // doubling theta logits toward a present edge increases log_prob
        let space = SpaceSpec::free("pair", 2, 1);
        let cfg = ModelConfig {
            kind: GeneratorKind::Graph,
            k: 1,
            s: 1,
            hidden: 8,
            n_max: 2,
        };
        let mut m = GeneratorModel::init(&space, cfg, 3).unwrap();
        let g = ArchGraph::new(2, &[true], vec![0, 0], 1, None).unwrap();
        let base = m.log_prob(&space, &g).unwrap();
        // a positive bias on the single mixture component's logit raises the
        // edge probability
        m.params.get_mut("theta_bias").unwrap().data[0] += 2.0;
        let bumped = m.log_prob(&space, &g).unwrap();
        assert!(bumped > base, "{} vs {}", bumped, base);
    }

    #[test]
    fn sampling_consumes_its_own_rng_stream() {
        let (space, m) = model(2);
        let mut r1 = derive_rng(42, "sampling");
        let mut r2 = derive_rng(43, "sampling");
        let (g1, _) = m.sample(&space, &mut r1).unwrap();
        let (g2, _) = m.sample(&space, &mut r2).unwrap();
        // different streams usually give different graphs; both are valid
        assert!(space.validate(&g1).is_empty());
        assert!(space.validate(&g2).is_empty());
    }
}
