//! Attributed-DAG representation, validation, canonical identity,
//! serialization, and graph statistics.
//!
//! Adjacency is strictly lower triangular: an entry `a[i][j]` with `j < i`
//! means the output of node `j` feeds node `i`, so every directed path runs
//! from low index to high index and acyclicity holds by construction.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Designated input/output node indices of an architecture graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Roles {
    pub input: usize,
    pub output: usize,
}

/// An attributed DAG: strictly lower-triangular boolean adjacency plus a
/// categorical operation type per node.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArchGraph {
    n_nodes: usize,
    /// Row-major lower-triangular bits: entry for (i, j), j < i, lives at
    /// `i*(i-1)/2 + j`.
    adjacency: Vec<bool>,
    node_ops: Vec<usize>,
    roles: Option<Roles>,
}

fn tri_len(n: usize) -> usize {
    n * (n - 1) / 2
}

fn tri_index(i: usize, j: usize) -> usize {
    debug_assert!(j < i);
    i * (i - 1) / 2 + j
}

impl ArchGraph {
    /// Builds a validated graph from row-major lower-triangular bits.
    ///
    /// `d_ops` bounds the attribute alphabet; every `node_ops` entry must be
    /// below it.
    pub fn new(
        n_nodes: usize,
        adjacency_bits: &[bool],
        node_ops: Vec<usize>,
        d_ops: usize,
        roles: Option<Roles>,
    ) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::InvalidArgument("n_nodes must be positive".into()));
        }
        if adjacency_bits.len() != tri_len(n_nodes) {
            return Err(Error::BitLengthMismatch {
                expected: tri_len(n_nodes),
                got: adjacency_bits.len(),
            });
        }
        if node_ops.len() != n_nodes {
            return Err(Error::InvalidArgument(format!(
                "node_ops length {} != n_nodes {}",
                node_ops.len(),
                n_nodes
            )));
        }
        for (node, &op) in node_ops.iter().enumerate() {
            if op >= d_ops {
                return Err(Error::OpOutOfRange { node, op, d: d_ops });
            }
        }
        if let Some(r) = roles {
            if r.input == r.output {
                return Err(Error::InvalidRoles("input and output coincide".into()));
            }
            if r.input >= n_nodes || r.output >= n_nodes {
                return Err(Error::InvalidRoles(format!(
                    "role index out of range for {} nodes",
                    n_nodes
                )));
            }
        }
        Ok(ArchGraph {
            n_nodes,
            adjacency: adjacency_bits.to_vec(),
            node_ops,
            roles,
        })
    }

    /// Parses adjacency bits from a "0"/"1" string.
    pub fn from_bit_string(
        n_nodes: usize,
        bits: &str,
        node_ops: Vec<usize>,
        d_ops: usize,
        roles: Option<Roles>,
    ) -> Result<Self> {
        let mut adj = Vec::with_capacity(bits.len());
        for c in bits.chars() {
            match c {
                '0' => adj.push(false),
                '1' => adj.push(true),
                other => {
                    return Err(Error::Parse {
                        field: "bits".into(),
                        message: format!("unexpected character {:?}", other),
                    })
                }
            }
        }
        ArchGraph::new(n_nodes, &adj, node_ops, d_ops, roles)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn node_ops(&self) -> &[usize] {
        &self.node_ops
    }

    pub fn roles(&self) -> Option<Roles> {
        self.roles
    }

    pub fn set_roles(&mut self, roles: Option<Roles>) {
        self.roles = roles;
    }

    /// True iff node `j` feeds node `i`. Requires `j < i`.
    pub fn edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[tri_index(i, j)]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.adjacency
    }

    pub fn bit_string(&self) -> String {
        self.adjacency
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect()
    }

    /// Directed edges as (src, dst) pairs with src < dst.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 1..self.n_nodes {
            for j in 0..i {
                if self.edge(i, j) {
                    out.push((j, i));
                }
            }
        }
        out
    }

    /// Stable identity over (n, bits, ops, roles); hex SHA-256.
    pub fn canonical_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.n_nodes.to_le_bytes());
        hasher.update(self.bit_string().as_bytes());
        for &op in &self.node_ops {
            hasher.update((op as u64).to_le_bytes());
        }
        match self.roles {
            Some(r) => {
                hasher.update([1u8]);
                hasher.update((r.input as u64).to_le_bytes());
                hasher.update((r.output as u64).to_le_bytes());
            }
            None => hasher.update([0u8]),
        }
        hex::encode(hasher.finalize())
    }

    /// Directed reachability s -> t. A node reaches itself (length-0 path).
    pub fn has_path(&self, s: usize, t: usize) -> Result<bool> {
        for &idx in &[s, t] {
            if idx >= self.n_nodes {
                return Err(Error::NodeOutOfRange {
                    index: idx,
                    n: self.n_nodes,
                });
            }
        }
        if s == t {
            return Ok(true);
        }
        if s > t {
            return Ok(false);
        }
        // reachable[v] = s reaches v; edges go low -> high so one pass suffices
        let mut reachable = vec![false; self.n_nodes];
        reachable[s] = true;
        for i in (s + 1)..=t {
            for j in s..i {
                if reachable[j] && self.edge(i, j) {
                    reachable[i] = true;
                    break;
                }
            }
        }
        Ok(reachable[t])
    }

    /// Induced subgraph on nodes lying on some input->output connectivity
    /// (reachable from input AND reaching output). Input and output are
    /// always retained; surviving nodes keep their relative order.
    pub fn prune_to_io_connected(&self) -> Result<ArchGraph> {
        let roles = self
            .roles
            .ok_or(Error::RolesMissing("prune_to_io_connected requires roles"))?;
        let n = self.n_nodes;
        let mut from_input = vec![false; n];
        from_input[roles.input] = true;
        for i in 0..n {
            for j in 0..i {
                if from_input[j] && self.edge(i, j) {
                    from_input[i] = true;
                }
            }
        }
        let mut to_output = vec![false; n];
        to_output[roles.output] = true;
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                if to_output[k] && self.edge(k, i) {
                    to_output[i] = true;
                }
            }
        }
        let keep: Vec<usize> = (0..n)
            .filter(|&v| (from_input[v] && to_output[v]) || v == roles.input || v == roles.output)
            .collect();
        let mut relabel = vec![usize::MAX; n];
        for (new, &old) in keep.iter().enumerate() {
            relabel[old] = new;
        }
        let m = keep.len();
        let mut bits = vec![false; tri_len(m)];
        for (ni, &oi) in keep.iter().enumerate() {
            for (nj, &oj) in keep.iter().enumerate().take(ni) {
                if self.edge(oi, oj) {
                    bits[tri_index(ni, nj)] = true;
                }
            }
        }
        let ops: Vec<usize> = keep.iter().map(|&v| self.node_ops[v]).collect();
        let d = self.node_ops.iter().copied().max().unwrap_or(0) + 1;
        ArchGraph::new(
            m,
            &bits,
            ops,
            d,
            Some(Roles {
                input: relabel[roles.input],
                output: relabel[roles.output],
            }),
        )
    }

    /// Undirected adjacency lists (edge directions dropped).
    fn undirected_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nbrs = vec![Vec::new(); self.n_nodes];
        for (u, v) in self.edges() {
            nbrs[u].push(v);
            nbrs[v].push(u);
        }
        nbrs
    }

    pub fn stats(&self) -> GraphStats {
        let n = self.n_nodes;
        let nbrs = self.undirected_neighbors();

        // mean local clustering; degree-<2 nodes contribute 0
        let mut clustering = 0.0;
        for v in 0..n {
            let deg = nbrs[v].len();
            if deg < 2 {
                continue;
            }
            let mut links = 0usize;
            for a in 0..deg {
                for b in (a + 1)..deg {
                    let (x, y) = (nbrs[v][a], nbrs[v][b]);
                    let (hi, lo) = if x > y { (x, y) } else { (y, x) };
                    if hi != lo && self.edge(hi, lo) {
                        links += 1;
                    }
                }
            }
            clustering += 2.0 * links as f64 / (deg * (deg - 1)) as f64;
        }
        clustering /= n as f64;

        // mean shortest path over connected unordered pairs (undirected BFS);
        // 0 when no pair is connected
        let mut dist_sum = 0u64;
        let mut pair_count = 0u64;
        for s in 0..n {
            let mut dist = vec![usize::MAX; n];
            dist[s] = 0;
            let mut queue = std::collections::VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &w in &nbrs[u] {
                    if dist[w] == usize::MAX {
                        dist[w] = dist[u] + 1;
                        queue.push_back(w);
                    }
                }
            }
            for t in (s + 1)..n {
                if dist[t] != usize::MAX {
                    dist_sum += dist[t] as u64;
                    pair_count += 1;
                }
            }
        }
        let avg_shortest_path = if pair_count == 0 {
            0.0
        } else {
            dist_sum as f64 / pair_count as f64
        };

        // directed input->output path statistics by DP in index order
        let io = self.roles.map(|roles| {
            let (s, t) = (roles.input, roles.output);
            let mut path_count = vec![0u128; n];
            let mut length_sum = vec![0u128; n];
            let mut longest = vec![i64::MIN; n];
            if s <= t {
                path_count[s] = 1;
                longest[s] = 0;
                for i in (s + 1)..=t {
                    for j in s..i {
                        if self.edge(i, j) && path_count[j] > 0 {
                            path_count[i] += path_count[j];
                            length_sum[i] += length_sum[j] + path_count[j];
                            longest[i] = longest[i].max(longest[j] + 1);
                        }
                    }
                }
            }
            if path_count[t] == 0 {
                IoPathStats {
                    path_count: 0,
                    avg_path: 0.0,
                    longest_path: 0,
                }
            } else {
                IoPathStats {
                    path_count: path_count[t],
                    avg_path: length_sum[t] as f64 / path_count[t] as f64,
                    longest_path: longest[t] as usize,
                }
            }
        });

        GraphStats {
            edge_count: self.edge_count(),
            clustering_coefficient: clustering,
            avg_shortest_path,
            io,
        }
    }

    /// Wire record used by every file format in this crate.
    pub fn to_record(&self) -> GraphRecord {
        GraphRecord {
            n: self.n_nodes,
            bits: self.bit_string(),
            ops: self.node_ops.clone(),
            roles: self.roles,
        }
    }

    pub fn from_record(rec: &GraphRecord) -> Result<ArchGraph> {
        let d = rec.ops.iter().copied().max().unwrap_or(0) + 1;
        ArchGraph::from_bit_string(rec.n, &rec.bits, rec.ops.clone(), d, rec.roles).map_err(|e| {
            match e {
                Error::BitLengthMismatch { expected, got } => Error::Parse {
                    field: "bits".into(),
                    message: format!("length mismatch: expected {}, got {}", expected, got),
                },
                other => other,
            }
        })
    }
}

/// Directed input->output path statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IoPathStats {
    pub path_count: u128,
    /// Mean length over all directed input->output paths.
    pub avg_path: f64,
    pub longest_path: usize,
}

/// Statistics on the undirected view plus optional io path statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphStats {
    pub edge_count: usize,
    pub clustering_coefficient: f64,
    pub avg_shortest_path: f64,
    /// Present only when the graph has roles.
    pub io: Option<IoPathStats>,
}

/// Structured-text record: one JSON object per graph, newline-delimited in
/// files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphRecord {
    pub n: usize,
    pub bits: String,
    pub ops: Vec<usize>,
    #[serde(default)]
    pub roles: Option<Roles>,
}

/// Encodes a graph as its JSON record.
pub fn encode_graph(g: &ArchGraph) -> String {
    serde_json::to_string(&g.to_record()).expect("graph record serializes")
}

/// Decodes a graph from a JSON record; whitespace-insensitive.
pub fn decode_graph(text: &str) -> Result<ArchGraph> {
    let rec: GraphRecord = serde_json::from_str(text).map_err(|e| Error::Parse {
        field: "graph record".into(),
        message: e.to_string(),
    })?;
    ArchGraph::from_record(&rec)
}

/// Exact size of the search space: d^n * 2^(n(n-1)/2).
pub fn space_size(n: u64, d: u64) -> num_bigint::BigUint {
    use num_bigint::BigUint;
    BigUint::from(d).pow(n as u32) * (BigUint::from(1u8) << (n * (n - 1) / 2))
}
