//! State-update topologies that fuse each iteration's shifted update into the
//! running loop state.
//!
//! * **Anchor** re-attaches every iteration to the pre-loop output:
//!   `h⁽ᵗ⁺¹⁾ = ũ⁽ᵗ⁾ + h⁽⁰⁾`.
//! * **MeSH** keeps `B` memory slots shaped like the state. Per token, a write
//!   router distributes `ũ` across slots and a read router mixes the updated
//!   slots into the next state. A transitional write/read pair, driven by the
//!   token embeddings, seeds the buffer from the pre-loop output.
//!
//! All routing is per token row, so the batched functions here are loops over
//! the row-level ones used during decoding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{softmax, vec_mat, Matrix};
use crate::transformer::gaussian;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Topology {
    Anchor,
    Mesh { slots: usize },
}

impl Default for Topology {
    fn default() -> Self {
        Topology::Mesh { slots: 4 }
    }
}

/// Cross-iteration state carried by the topology.
#[derive(Debug, Clone, PartialEq)]
pub enum TopologyCarrier {
    Anchor { h0: Matrix },
    Mesh { slots: Vec<Matrix> },
}

/// Linear map d → B followed by a softmax over slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRouter {
    /// d × B
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl SlotRouter {
    pub fn random<R: Rng>(d_model: usize, slots: usize, rng: &mut R) -> Self {
        Self {
            weight: gaussian(d_model, slots, rng),
            bias: vec![0.0; slots],
        }
    }

    pub fn zeros(d_model: usize, slots: usize) -> Self {
        Self {
            weight: Matrix::zeros(d_model, slots),
            bias: vec![0.0; slots],
        }
    }

    pub fn slots(&self) -> usize {
        self.bias.len()
    }

    /// Slot distribution for one token row.
    pub fn weights(&self, row: &[f64]) -> Vec<f64> {
        let mut logits = vec_mat(row, &self.weight);
        for (l, b) in logits.iter_mut().zip(&self.bias) {
            *l += b;
        }
        softmax(&logits)
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterPair {
    pub write: SlotRouter,
    pub read: SlotRouter,
}

impl RouterPair {
    pub fn random<R: Rng>(d_model: usize, slots: usize, rng: &mut R) -> Self {
        Self {
            write: SlotRouter::random(d_model, slots, rng),
            read: SlotRouter::random(d_model, slots, rng),
        }
    }

    pub fn zeros(d_model: usize, slots: usize) -> Self {
        Self {
            write: SlotRouter::zeros(d_model, slots),
            read: SlotRouter::zeros(d_model, slots),
        }
    }
}

/// Transitional routers plus one independent pair per loop iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshRouters {
    pub transitional: RouterPair,
    pub steps: Vec<RouterPair>,
}

impl MeshRouters {
    pub fn random<R: Rng>(d_model: usize, slots: usize, iterations: usize, rng: &mut R) -> Self {
        Self {
            transitional: RouterPair::random(d_model, slots, rng),
            steps: (0..iterations)
                .map(|_| RouterPair::random(d_model, slots, rng))
                .collect(),
        }
    }

    pub fn slots(&self) -> usize {
        self.transitional.write.slots()
    }

    pub fn parameter_count(&self) -> usize {
        std::iter::once(&self.transitional)
            .chain(&self.steps)
            .map(|p| p.write.parameter_count() + p.read.parameter_count())
            .sum()
    }
}

/// `h⁽ᵗ⁺¹⁾ = ũ + h⁽⁰⁾`; the carrier is returned untouched.
pub fn anchor_update(u_tilde: &Matrix, carrier: &TopologyCarrier) -> Result<Matrix> {
    match carrier {
        TopologyCarrier::Anchor { h0 } => u_tilde.add(h0),
        TopologyCarrier::Mesh { .. } => Err(Error::Config("anchor update on a MeSH carrier".into())),
    }
}

/// One token's slot rows across the buffer.
pub type SlotRows = Vec<Vec<f64>>;

/// Transitional write/read for a single token. Returns `(h⁽⁰⁾ row, slots)`.
pub fn mesh_init_row(x: &[f64], v: &[f64], routers: &RouterPair) -> (Vec<f64>, SlotRows) {
    let slots = routers.write.slots();
    let w_write = routers.write.weights(x);
    let w_read = routers.read.weights(x);
    let mut m: SlotRows = vec![vec![0.0; x.len()]; slots];
    m[0].copy_from_slice(x);
    write_row(&mut m, v, &w_write);
    let h = read_row(&m, &w_read);
    (h, m)
}

/// Main-loop write/read for a single token; routers read the current state.
pub fn mesh_update_row(u_tilde: &[f64], h: &[f64], slots: &mut SlotRows, routers: &RouterPair) -> Vec<f64> {
    let w_write = routers.write.weights(h);
    let w_read = routers.read.weights(h);
    write_row(slots, u_tilde, &w_write);
    read_row(slots, &w_read)
}

fn write_row(slots: &mut SlotRows, update: &[f64], weights: &[f64]) {
    for (m, &w) in slots.iter_mut().zip(weights) {
        for (a, &u) in m.iter_mut().zip(update) {
            *a += u * w;
        }
    }
}

fn read_row(slots: &SlotRows, weights: &[f64]) -> Vec<f64> {
    let mut h = vec![0.0; slots[0].len()];
    for (m, &w) in slots.iter().zip(weights) {
        for (a, &v) in h.iter_mut().zip(m) {
            *a += v * w;
        }
    }
    h
}

/// Seeds the buffer from embeddings `x` and pre-loop output `v`.
pub fn mesh_init(x: &Matrix, v: &Matrix, routers: &MeshRouters) -> Result<(Matrix, TopologyCarrier)> {
    if x.shape() != v.shape() {
        return Err(shape_err(
            "mesh_init",
            format!("{:?}", x.shape()),
            format!("{:?}", v.shape()),
        ));
    }
    let b = routers.slots();
    if b == 0 {
        return Err(Error::Config("MeSH needs at least one slot".into()));
    }
    let (rows, cols) = x.shape();
    let mut h = Matrix::zeros(rows, cols);
    let mut slots = vec![Matrix::zeros(rows, cols); b];
    for i in 0..rows {
        let (h_row, m) = mesh_init_row(x.row(i), v.row(i), &routers.transitional);
        h.row_mut(i).copy_from_slice(&h_row);
        for (slot, row) in slots.iter_mut().zip(&m) {
            slot.row_mut(i).copy_from_slice(row);
        }
    }
    Ok((h, TopologyCarrier::Mesh { slots }))
}

/// Distributed write of `ũ` then read of the next state.
pub fn mesh_update(
    u_tilde: &Matrix,
    h: &Matrix,
    carrier: &TopologyCarrier,
    routers: &RouterPair,
) -> Result<(Matrix, TopologyCarrier)> {
    let TopologyCarrier::Mesh { slots } = carrier else {
        return Err(Error::Config("MeSH update on an anchor carrier".into()));
    };
    if u_tilde.shape() != h.shape() || slots.iter().any(|s| s.shape() != h.shape()) {
        return Err(shape_err(
            "mesh_update",
            format!("{:?}", h.shape()),
            format!("{:?}", u_tilde.shape()),
        ));
    }
    if slots.len() != routers.write.slots() {
        return Err(shape_err("mesh_update slots", routers.write.slots(), slots.len()));
    }
    let mut next = slots.clone();
    let mut h_next = Matrix::zeros(h.rows(), h.cols());
    for i in 0..h.rows() {
        let mut m: SlotRows = slots.iter().map(|s| s.row(i).to_vec()).collect();
        let row = mesh_update_row(u_tilde.row(i), h.row(i), &mut m, routers);
        h_next.row_mut(i).copy_from_slice(&row);
        for (slot, r) in next.iter_mut().zip(&m) {
            slot.row_mut(i).copy_from_slice(r);
        }
    }
    Ok((h_next, TopologyCarrier::Mesh { slots: next }))
}
