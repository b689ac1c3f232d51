//! Closed-form prefill FLOPs.
//!
//! Every product `(m×k)·(k×n)` costs `2mkn`. Per layer at length `ℓ`: the
//! four attention projections and the 4× MLP give `2·12d²·ℓ`, scores and
//! weighted values give `4ℓ²d`. Pre/post layers run at `L`, loop layers at
//! each iteration's `L_t`. The LM head adds `2VdL`; each iteration's scorer
//! and router add `2dL + 2d·g·L_t`. Norms, softmax and element-wise work are
//! not counted.

use serde::{Deserialize, Serialize};

use crate::config::Allocation;

/// Dimensions of a reference model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preset {
    pub name: &'static str,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub vocab: usize,
}

pub const PRESETS: [Preset; 4] = [
    Preset {
        name: "160m",
        d_model: 768,
        layers: 12,
        heads: 12,
        vocab: 50257,
    },
    Preset {
        name: "410m",
        d_model: 1024,
        layers: 24,
        heads: 16,
        vocab: 50257,
    },
    Preset {
        name: "1b",
        d_model: 2048,
        layers: 16,
        heads: 8,
        vocab: 50257,
    },
    Preset {
        name: "1.4b",
        d_model: 2048,
        layers: 24,
        heads: 16,
        vocab: 50257,
    },
];

pub fn preset(name: &str) -> Option<Preset> {
    let name = name.to_ascii_lowercase();
    PRESETS.iter().copied().find(|p| p.name == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub linear: u64,
    pub attention: u64,
    pub lm_head: u64,
    pub scaler: u64,
    pub total: u64,
}

impl FlopsReport {
    pub fn total_f64(&self) -> f64 {
        self.total as f64
    }
}

fn layer_linear(d: u64, len: u64) -> u64 {
    2 * 12 * d * d * len
}

fn layer_attention(d: u64, len: u64) -> u64 {
    4 * len * len * d
}

pub fn estimate_flops(allocation: &Allocation, d_model: usize, vocab: usize, len: usize) -> FlopsReport {
    let (d, v, l) = (d_model as u64, vocab as u64, len as u64);
    let full_layers = (allocation.n_pre + allocation.n_post) as u64;
    let mut linear = full_layers * layer_linear(d, l);
    let mut attention = full_layers * layer_attention(d, l);
    let mut scaler = 0;
    for res in &allocation.schedule {
        let g = res.chunk as u64;
        let lt = l / g;
        linear += allocation.n_loop as u64 * layer_linear(d, lt);
        attention += allocation.n_loop as u64 * layer_attention(d, lt);
        scaler += 2 * d * l + 2 * d * g * lt;
    }
    let lm_head = 2 * v * d * l;
    FlopsReport {
        linear,
        attention,
        lm_head,
        scaler,
        total: linear + attention + lm_head + scaler,
    }
}
