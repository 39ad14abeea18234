//! Search-space definitions, constraint validation, rejection sampling, and
//! exhaustive enumeration of tiny spaces.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{space_size, ArchGraph, Roles};

/// Fixed input/output node positions, optionally with forced operation types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleConstraint {
    pub input_node: usize,
    pub output_node: usize,
    #[serde(default)]
    pub input_op: Option<usize>,
    #[serde(default)]
    pub output_op: Option<usize>,
}

/// Everything that defines one search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    pub name: String,
    pub n_nodes: usize,
    pub d_ops: usize,
    #[serde(default)]
    pub roles: Option<RoleConstraint>,
    #[serde(default)]
    pub max_edges: Option<usize>,
    #[serde(default)]
    pub require_io_path: bool,
    #[serde(default)]
    pub prune_dangling: bool,
}

impl SpaceSpec {
    pub fn free(name: &str, n_nodes: usize, d_ops: usize) -> Self {
        SpaceSpec {
            name: name.to_string(),
            n_nodes,
            d_ops,
            roles: None,
            max_edges: None,
            require_io_path: false,
            prune_dangling: false,
        }
    }

    /// Named preset spaces.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            // free 32-operator cell topology
            "randwire-cell" => Ok(SpaceSpec::free("randwire-cell", 32, 3)),
            // 7-node DAG, at most 9 edges, io path required, dangling nodes pruned
            "nasbench101-like" => Ok(SpaceSpec {
                name: "nasbench101-like".to_string(),
                n_nodes: 7,
                d_ops: 3,
                roles: Some(RoleConstraint {
                    input_node: 0,
                    output_node: 6,
                    input_op: Some(0),
                    output_op: Some(0),
                }),
                max_edges: Some(9),
                require_io_path: true,
                prune_dangling: true,
            }),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }

    pub fn check_well_formed(&self) -> Result<()> {
        if self.n_nodes < 1 || self.d_ops < 1 {
            return Err(Error::InvalidArgument(
                "space needs n_nodes >= 1 and d_ops >= 1".into(),
            ));
        }
        let tri = self.n_nodes * (self.n_nodes - 1) / 2;
        if let Some(m) = self.max_edges {
            if m > tri {
                return Err(Error::InvalidArgument(format!(
                    "max_edges {} exceeds {} possible edges",
                    m, tri
                )));
            }
        }
        if let Some(r) = &self.roles {
            if r.input_node >= self.n_nodes
                || r.output_node >= self.n_nodes
                || r.input_node == r.output_node
            {
                return Err(Error::InvalidRoles(format!(
                    "roles ({}, {}) invalid for {} nodes",
                    r.input_node, r.output_node, self.n_nodes
                )));
            }
            for op in [r.input_op, r.output_op].into_iter().flatten() {
                if op >= self.d_ops {
                    return Err(Error::InvalidRoles(format!(
                        "forced op {} out of range for {} ops",
                        op, self.d_ops
                    )));
                }
            }
        }
        Ok(())
    }

    /// Roles carried by graphs sampled in this space.
    pub fn graph_roles(&self) -> Option<Roles> {
        self.roles.map(|r| Roles {
            input: r.input_node,
            output: r.output_node,
        })
    }

    /// The operation forced at `node`, if any.
    pub fn forced_op(&self, node: usize) -> Option<usize> {
        let r = self.roles.as_ref()?;
        if node == r.input_node {
            r.input_op
        } else if node == r.output_node {
            r.output_op
        } else {
            None
        }
    }

    /// Pruning (when enabled and roles are set) followed by validation.
    /// Returns the processed graph and its violations; empty = valid.
    pub fn apply(&self, g: &ArchGraph) -> (ArchGraph, Vec<Violation>) {
        let processed = if self.prune_dangling && g.roles().is_some() {
            g.prune_to_io_connected().unwrap_or_else(|_| g.clone())
        } else {
            g.clone()
        };
        let mut violations = Vec::new();
        for (node, &op) in processed.node_ops().iter().enumerate() {
            if op >= self.d_ops {
                violations.push(Violation {
                    kind: ViolationKind::OpOutOfRange,
                    detail: format!("node {} has op {} >= {}", node, op, self.d_ops),
                });
            }
        }
        if let Some(max) = self.max_edges {
            let e = processed.edge_count();
            if e > max {
                violations.push(Violation {
                    kind: ViolationKind::TooManyEdges,
                    detail: format!("{} edges > {}", e, max),
                });
            }
        }
        if let Some(roles) = processed.roles() {
            if let Some(rc) = &self.roles {
                for (node, forced) in [(roles.input, rc.input_op), (roles.output, rc.output_op)] {
                    if let Some(op) = forced {
                        if processed.node_ops()[node] != op {
                            violations.push(Violation {
                                kind: ViolationKind::RoleMismatch,
                                detail: format!(
                                    "node {} has op {}, role forces {}",
                                    node,
                                    processed.node_ops()[node],
                                    op
                                ),
                            });
                        }
                    }
                }
            }
            if self.require_io_path {
                let ok = processed.has_path(roles.input, roles.output).unwrap_or(false);
                // a role node never reaches itself through edges; input == output
                // is rejected at construction
                if !ok {
                    violations.push(Violation {
                        kind: ViolationKind::NoIoPath,
                        detail: format!("no path {} -> {}", roles.input, roles.output),
                    });
                }
            }
        } else if self.require_io_path {
            violations.push(Violation {
                kind: ViolationKind::NoIoPath,
                detail: "graph carries no roles".to_string(),
            });
        }
        (processed, violations)
    }

    pub fn validate(&self, g: &ArchGraph) -> Vec<Violation> {
        self.apply(g).1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    TooManyEdges,
    NoIoPath,
    OpOutOfRange,
    RoleMismatch,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationKind::TooManyEdges => "too-many-edges",
            ViolationKind::NoIoPath => "no-io-path",
            ViolationKind::OpOutOfRange => "op-out-of-range",
            ViolationKind::RoleMismatch => "role-mismatch",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

/// Repeatedly draws from `sampler`, prunes and validates, and returns the
/// first valid (processed) graph with the attempt count. On exhaustion the
/// error carries a histogram of the violations seen.
pub fn rejection_sample(
    mut sampler: impl FnMut() -> Result<ArchGraph>,
    space: &SpaceSpec,
    max_tries: usize,
) -> Result<(ArchGraph, usize)> {
    if max_tries < 1 {
        return Err(Error::InvalidArgument("max_tries must be >= 1".into()));
    }
    let mut histogram: BTreeMap<ViolationKind, usize> = BTreeMap::new();
    for tries in 1..=max_tries {
        let raw = sampler()?;
        let (processed, violations) = space.apply(&raw);
        if violations.is_empty() {
            return Ok((processed, tries));
        }
        for v in violations {
            *histogram.entry(v.kind).or_insert(0) += 1;
        }
    }
    let hist_text = histogram
        .iter()
        .map(|(k, c)| format!("{}: {}", k, c))
        .collect::<Vec<_>>()
        .join(", ");
    Err(Error::RejectionExhausted {
        tries: max_tries,
        histogram: hist_text,
    })
}

const ENUMERATION_GUARD: u64 = 10_000_000;

/// All valid graphs of a tiny space, each exactly once, in lexicographic
/// order over adjacency bits then ops. Nodes with role-forced operations are
/// not enumerated over alternatives.
pub fn enumerate_space(space: &SpaceSpec) -> Result<Vec<ArchGraph>> {
    space.check_well_formed()?;
    let size = space_size(space.n_nodes as u64, space.d_ops as u64);
    if size > ENUMERATION_GUARD.into() {
        return Err(Error::EnumerationGuard(size.to_string(), ENUMERATION_GUARD));
    }
    let n = space.n_nodes;
    let tri = n * (n - 1) / 2;
    let roles = space.graph_roles();
    // per-node op choices, honoring forced roles
    let choices: Vec<Vec<usize>> = (0..n)
        .map(|node| match space.forced_op(node) {
            Some(op) => vec![op],
            None => (0..space.d_ops).collect(),
        })
        .collect();
    let mut out = Vec::new();
    let mut bits = vec![false; tri];
    'bits: loop {
        let mut cursor = vec![0usize; n];
        'ops: loop {
            let ops: Vec<usize> = cursor
                .iter()
                .zip(&choices)
                .map(|(&c, ch)| ch[c])
                .collect();
            let g = ArchGraph::new(n, &bits, ops, space.d_ops, roles)?;
            if space.validate(&g).is_empty() {
                out.push(space.apply(&g).0);
            }
            // advance the ops odometer, last node fastest
            let mut pos = n;
            loop {
                if pos == 0 {
                    break 'ops;
                }
                pos -= 1;
                cursor[pos] += 1;
                if cursor[pos] < choices[pos].len() {
                    break;
                }
                cursor[pos] = 0;
            }
        }
        // advance the bit pattern, last bit fastest
        let mut i = tri;
        loop {
            if i == 0 {
                break 'bits;
            }
            i -= 1;
            if !bits[i] {
                bits[i] = true;
                break;
            }
            bits[i] = false;
        }
    }
    Ok(out)
}
