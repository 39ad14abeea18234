//! Named parameter store, deterministic initialization, and an Adam
//! optimizer with global-norm gradient clipping.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, TensorRef};

/// Ordered collection of named weight arrays. The order is the creation
/// order and is part of the store's identity (checkpoints preserve it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    /// Matrix initialized uniform in [-s, s], s = sqrt(6 / (fan_in + fan_out)).
    pub fn add_matrix(&mut self, name: &str, rows: usize, cols: usize, rng: &mut ChaCha20Rng) {
        let s = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-s..=s)).collect();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            rows,
            cols,
            data,
        });
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) {
        self.entries.push(ParamEntry {
            name: name.to_string(),
            rows,
            cols,
            data: vec![0.0; rows * cols],
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.iter_mut().find(|e| e.name == name)
    }

    /// Binds every parameter into a tape as a differentiable leaf, returning
    /// handles in entry order.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let mut refs = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            refs.push(tape.leaf(e.rows, e.cols, e.data.clone()));
        }
        BoundParams {
            names: self.entries.iter().map(|e| e.name.clone()).collect(),
            refs,
        }
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        ParamSet::new()
    }
}

/// Tape handles for one forward pass, keyed by parameter name.
pub struct BoundParams {
    names: Vec<String>,
    refs: Vec<TensorRef>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> TensorRef {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.refs[i]
    }

    /// Collects per-parameter gradients (zeros for untouched parameters)
    /// from a finished backward pass, in entry order.
    pub fn collect_grads(
        &self,
        params: &ParamSet,
        grads: &[Option<Vec<f64>>],
        tape: &Tape,
    ) -> Gradients {
        let _ = tape;
        let mut out = Vec::with_capacity(self.refs.len());
        for (i, r) in self.refs.iter().enumerate() {
            match &grads[r.index()] {
                Some(g) => out.push(g.clone()),
                None => out.push(vec![0.0; params.entries[i].data.len()]),
            }
        }
        Gradients { arrays: out }
    }
}

/// Gradients aligned with a ParamSet's entry order.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub arrays: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn global_norm(&self) -> f64 {
        self.arrays
            .iter()
            .flat_map(|a| a.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for a in &mut self.arrays {
            for v in a.iter_mut() {
                *v *= c;
            }
        }
    }
}

/// Adam state: first/second moments per parameter plus hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.entries.iter().map(|e| vec![0.0; e.data.len()]).collect(),
            v: params.entries.iter().map(|e| vec![0.0; e.data.len()]).collect(),
        }
    }

    /// One bias-corrected Adam update; gradients are global-norm clipped to
    /// `clip_norm` jointly across all arrays first (infinite = no clipping).
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        mut grads: Gradients,
        clip_norm: f64,
    ) -> Result<f64> {
        if grads.arrays.len() != params.entries.len() {
            return Err(Error::InvalidArgument(
                "gradient count does not match parameter count".into(),
            ));
        }
        for a in &grads.arrays {
            if !a.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { op: "adam_step" });
            }
        }
        let norm = grads.global_norm();
        if clip_norm.is_finite() && norm > clip_norm && norm > 0.0 {
            grads.scale(clip_norm / norm);
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for ((entry, m), (v, g)) in params
            .entries
            .iter_mut()
            .zip(&mut self.m)
            .zip(self.v.iter_mut().zip(&grads.arrays))
        {
            for i in 0..entry.data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                entry.data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(norm)
    }
}

/// Deterministic per-purpose RNG stream derived from a master seed.
pub fn derive_rng(master_seed: u64, stream: &str) -> ChaCha20Rng {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(stream.as_bytes());
    let digest = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha20Rng::from_seed(seed)
}
