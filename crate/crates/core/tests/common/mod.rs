//! Shared independent oracles for integration and acceptance tests.

use rand::Rng;

use dagsearch_core::generator::GeneratorModel;
use dagsearch_core::graph::ArchGraph;
use dagsearch_core::params::derive_rng;
use dagsearch_core::space::SpaceSpec;
use dagsearch_core::tensor::{Tape, TensorRef};

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Central finite difference of `f` at `x[i]`.
pub fn central_diff(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
    let mut hi = x.to_vec();
    let mut lo = x.to_vec();
    hi[i] += FD_STEP;
    lo[i] -= FD_STEP;
    (f(&hi) - f(&lo)) / (2.0 * FD_STEP)
}

/// Checks the tape gradient of a scalar function of a 2x3 leaf against
/// central finite differences; panics with context on mismatch.
pub fn grad_check(name: &str, build: impl Fn(&mut Tape, TensorRef) -> TensorRef) {
    let mut rng = derive_rng(42, name);
    let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.5..1.5)).collect();

    let mut eval = |vals: &[f64]| {
        let mut tape = Tape::new();
        let leaf = tape.leaf(2, 3, vals.to_vec());
        let out = build(&mut tape, leaf);
        tape.scalar(out)
    };

    let mut tape = Tape::new();
    let leaf = tape.leaf(2, 3, x.clone());
    let out = build(&mut tape, leaf);
    let grads = tape.backward(out).unwrap();
    let analytic = grads[leaf.index()].as_ref().unwrap();

    for i in 0..6 {
        let numeric = central_diff(&mut eval, &x, i);
        assert!(
            rel_err(analytic[i], numeric) <= FD_REL_TOL,
            "{}: coord {}: analytic {} vs numeric {}",
            name,
            i,
            analytic[i],
            numeric
        );
    }
}

/// Runs grad_check over every tensor primitive.
pub fn check_all_primitives() {
    grad_check("sigmoid", |t, x| {
        let y = t.sigmoid(x).unwrap();
        t.sum_all(y).unwrap()
    });
    grad_check("tanh", |t, x| {
        let y = t.tanh(x).unwrap();
        t.sum_all(y).unwrap()
    });
    grad_check("softplus", |t, x| {
        let y = t.softplus(x).unwrap();
        t.sum_all(y).unwrap()
    });
    grad_check("relu-shifted", |t, x| {
        // shift away from the kink at 0
        let s = t.affine(x, 1.0, 2.5).unwrap();
        let y = t.relu(s).unwrap();
        t.sum_all(y).unwrap()
    });
    grad_check("affine", |t, x| {
        let y = t.affine(x, -0.7, 0.3).unwrap();
        t.sum_all(y).unwrap()
    });
    grad_check("mul-self", |t, x| {
        let y = t.mul(x, x).unwrap();
        t.sum_all(y).unwrap()
    });
    grad_check("matmul", |t, x| {
        let w = t.constant(3, 2, vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.7]);
        let y = t.matmul(x, w).unwrap();
        t.sum_all(y).unwrap()
    });
    grad_check("add_bias", |t, x| {
        let b = t.constant(1, 3, vec![0.2, -0.3, 0.4]);
        let y = t.add_bias(x, b).unwrap();
        let sq = t.mul(y, y).unwrap();
        t.sum_all(sq).unwrap()
    });
    grad_check("softmax_rows", |t, x| {
        let y = t.softmax_rows(x).unwrap();
        let sq = t.mul(y, y).unwrap();
        t.sum_all(sq).unwrap()
    });
    grad_check("log_softmax_rows", |t, x| {
        let y = t.log_softmax_rows(x).unwrap();
        t.sum_all(y).unwrap()
    });
    grad_check("log_sum_exp_rows", |t, x| {
        let y = t.log_sum_exp_rows(x).unwrap();
        t.sum_all(y).unwrap()
    });
    grad_check("mean_rows", |t, x| {
        let y = t.mean_rows(x).unwrap();
        t.sum_all(y).unwrap()
    });
    grad_check("add-sub", |t, x| {
        let c = t.constant(2, 3, vec![0.1; 6]);
        let a = t.add(x, c).unwrap();
        let d = t.sub(a, x).unwrap();
        let e = t.add(d, x).unwrap();
        t.sum_all(e).unwrap()
    });
    grad_check("concat_cols", |t, x| {
        let c = t.constant(2, 2, vec![0.4, -0.1, 0.2, 0.9]);
        let y = t.concat_cols(x, c).unwrap();
        let sq = t.mul(y, y).unwrap();
        t.sum_all(sq).unwrap()
    });
    grad_check("gather-segment", |t, x| {
        let g = t.gather_rows(x, &[1, 0, 1]).unwrap();
        let s = t.segment_sum(g, &[0, 1, 0], 2).unwrap();
        let sq = t.mul(s, s).unwrap();
        t.sum_all(sq).unwrap()
    });
    grad_check("select", |t, x| {
        let y = t.mul(x, x).unwrap();
        t.select(y, 1, 2).unwrap()
    });
    grad_check("log1mexp", |t, x| {
        // map into strictly negative range first: -softplus(x) - 0.01
        let sp = t.softplus(x).unwrap();
        let neg = t.affine(sp, -1.0, -0.01).unwrap();
        let y = t.log1mexp(neg).unwrap();
        t.sum_all(y).unwrap()
    });
}

/// Full-pipeline check: d log P(G) / d phi vs finite differences for every
/// parameter of `model`.
pub fn check_log_prob_gradient(model: &mut GeneratorModel, space: &SpaceSpec, g: &ArchGraph) {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let logp = model.log_prob_on(&mut tape, &bound, space, g).unwrap();
    let grads = tape.backward(logp).unwrap();
    let analytic = bound.collect_grads(&model.params, &grads, &tape);

    let entry_count = model.params.entries().len();
    for e in 0..entry_count {
        let len = model.params.entries()[e].data.len();
        for i in 0..len {
            let orig = model.params.entries()[e].data[i];
            let name = model.params.entries()[e].name.clone();

            model.params.get_mut(&name).unwrap().data[i] = orig + FD_STEP;
            let hi = model.log_prob(space, g).unwrap();
            model.params.get_mut(&name).unwrap().data[i] = orig - FD_STEP;
            let lo = model.log_prob(space, g).unwrap();
            model.params.get_mut(&name).unwrap().data[i] = orig;

            let numeric = (hi - lo) / (2.0 * FD_STEP);
            let a = analytic.arrays[e][i];
            assert!(
                rel_err(a, numeric) <= FD_REL_TOL,
                "{} [{}]: analytic {} vs numeric {}",
                name,
                i,
                a,
                numeric
            );
        }
    }
}

// --- brute-force graph statistics ---

fn undirected(g: &ArchGraph, a: usize, b: usize) -> bool {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi != lo && g.edge(hi, lo)
}

pub fn brute_force_clustering(g: &ArchGraph) -> f64 {
    let n = g.n_nodes();
    let mut total = 0.0;
    for v in 0..n {
        let nbrs: Vec<usize> = (0..n).filter(|&u| undirected(g, v, u)).collect();
        let deg = nbrs.len();
        if deg < 2 {
            continue;
        }
        let mut tri = 0;
        for a in 0..deg {
            for b in (a + 1)..deg {
                if undirected(g, nbrs[a], nbrs[b]) {
                    tri += 1;
                }
            }
        }
        total += 2.0 * tri as f64 / (deg * (deg - 1)) as f64;
    }
    total / n as f64
}

/// Floyd-Warshall all-pairs mean distance over connected unordered pairs.
pub fn brute_force_avg_shortest_path(g: &ArchGraph) -> f64 {
    let n = g.n_nodes();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for v in 0..n {
        d[v][v] = 0;
    }
    for a in 0..n {
        for b in 0..n {
            if undirected(g, a, b) {
                d[a][b] = 1;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    let mut sum = 0u64;
    let mut count = 0u64;
    for i in 0..n {
        for j in (i + 1)..n {
            if d[i][j] < inf {
                sum += d[i][j] as u64;
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum as f64 / count as f64
    }
}

/// Explicit enumeration of all directed input->output paths:
/// (count, mean length, longest length).
pub fn brute_force_io_paths(g: &ArchGraph, input: usize, output: usize) -> (u128, f64, usize) {
    fn walk(
        g: &ArchGraph,
        node: usize,
        output: usize,
        len: usize,
        count: &mut u128,
        len_sum: &mut u128,
        longest: &mut usize,
    ) {
        if node == output {
            *count += 1;
            *len_sum += len as u128;
            *longest = (*longest).max(len);
            return;
        }
        for next in (node + 1)..g.n_nodes() {
            if g.edge(next, node) {
                walk(g, next, output, len + 1, count, len_sum, longest);
            }
        }
    }
    let mut count = 0;
    let mut len_sum = 0;
    let mut longest = 0;
    walk(g, input, output, 0, &mut count, &mut len_sum, &mut longest);
    if count == 0 {
        (0, 0.0, 0)
    } else {
        (count, len_sum as f64 / count as f64, longest)
    }
}

/// Compares `stats()` against all three brute-force oracles to 1e-12.
pub fn assert_stats_match(g: &ArchGraph, context: &str) {
    let s = g.stats();
    let cc = brute_force_clustering(g);
    let ap = brute_force_avg_shortest_path(g);
    assert!(
        (s.clustering_coefficient - cc).abs() <= 1e-12,
        "{}: clustering {} vs {}",
        context,
        s.clustering_coefficient,
        cc
    );
    assert!(
        (s.avg_shortest_path - ap).abs() <= 1e-12,
        "{}: avg path {} vs {}",
        context,
        s.avg_shortest_path,
        ap
    );
    if let Some(roles) = g.roles() {
        let (pc, pap, plp) = brute_force_io_paths(g, roles.input, roles.output);
        let io = s.io.unwrap();
        assert_eq!(io.path_count, pc, "{}: path count", context);
        assert!(
            (io.avg_path - pap).abs() <= 1e-12,
            "{}: io avg path {} vs {}",
            context,
            io.avg_path,
            pap
        );
        assert_eq!(io.longest_path, plp, "{}: longest path", context);
    }
}
