//! Attention probes over the shared core's captured maps.
//!
//! - Key-marginal entropy: average each head's attention over queries, then
//!   take the entropy of that key distribution normalized by `ln L_t`.
//! - Local attention mass: share of attention that falls in the strictly
//!   backward window `[q − M, q)` with `M = ⌈γ·r_t⌉`.
//! - Dynamic heads: heads whose metric varies most across loop iterations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::Model;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const LAM_GAMMA: f64 = 32.0;
pub const DYNAMIC_FRACTION: f64 = 0.4;

fn check_square(attn: &Matrix) -> Result<usize> {
    let (rows, cols) = attn.shape();
    if rows != cols || rows == 0 {
        return Err(Error::Analysis(format!(
            "attention map must be square and non-empty, got {rows}×{cols}"
        )));
    }
    Ok(rows)
}

/// Query-averaged key distribution, renormalized to sum to one.
pub fn key_marginal(attn: &Matrix) -> Result<Vec<f64>> {
    let n = check_square(attn)?;
    let mut p = vec![0.0; n];
    for row in attn.iter_rows() {
        for (acc, a) in p.iter_mut().zip(row) {
            *acc += a / n as f64;
        }
    }
    let total: f64 = p.iter().sum();
    if total > 0.0 {
        p.iter_mut().for_each(|v| *v /= total);
    }
    Ok(p)
}

/// Normalized key-marginal entropy in `[0, 1]`; a single key gives 0.
pub fn entropy(attn: &Matrix) -> Result<f64> {
    let p = key_marginal(attn)?;
    if p.len() == 1 {
        return Ok(0.0);
    }
    let h: f64 = p.iter().filter(|&&v| v > 0.0).map(|v| -v * v.ln()).sum();
    Ok((h / (p.len() as f64).ln()).clamp(0.0, 1.0))
}

/// Window length `⌈γ·r⌉`.
pub fn lam_window(ratio: f64, gamma: f64) -> usize {
    (gamma * ratio - 1e-9).ceil().max(0.0) as usize
}

/// Mean over queries of the attention mass on keys `q − M ≤ k < q`.
pub fn lam(attn: &Matrix, window: usize) -> Result<f64> {
    let n = check_square(attn)?;
    let mass: f64 = (0..n)
        .map(|q| attn.row(q)[q.saturating_sub(window)..q].iter().sum::<f64>())
        .sum();
    Ok((mass / n as f64).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicHeads {
    /// Cross-loop range `max_t − min_t` per head.
    pub ranges: Vec<f64>,
    /// Flagged head indices, largest range first.
    pub flagged: Vec<usize>,
}

/// Ranks heads by cross-loop range. `values[t][h]` is head `h` at loop `t`;
/// heads are indexed layer-major so ties fall back to (layer, head) order.
pub fn dynamic_heads(values: &[Vec<f64>], fraction: f64) -> Result<DynamicHeads> {
    if values.len() < 2 {
        return Err(Error::Analysis(format!("need at least 2 loops, got {}", values.len())));
    }
    let heads = values[0].len();
    if values.iter().any(|v| v.len() != heads) {
        return Err(Error::Analysis("loops disagree on head count".into()));
    }
    let ranges: Vec<f64> = (0..heads)
        .map(|h| {
            let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v[h]), hi.max(v[h]))
            });
            hi - lo
        })
        .collect();
    let count = ((fraction * heads as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..heads).collect();
    order.sort_by(|&a, &b| ranges[b].total_cmp(&ranges[a]).then(a.cmp(&b)));
    order.truncate(count.min(heads));
    Ok(DynamicHeads { ranges, flagged: order })
}

/// Min–max normalization over all cells; constant or non-finite grids map to
/// all zeros.
pub fn normalize_heatmap(grid: &Matrix) -> Matrix {
    let data = grid.data();
    let (rows, cols) = grid.shape();
    if data.is_empty() || data.iter().any(|v| !v.is_finite()) {
        return Matrix::zeros(rows, cols);
    }
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-12 {
        return Matrix::zeros(rows, cols);
    }
    let scaled = data.iter().map(|v| (v - lo) / (hi - lo)).collect();
    Matrix::from_vec(rows, cols, scaled).expect("same shape")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadStat {
    pub loop_index: usize,
    pub layer: usize,
    pub head: usize,
    pub entropy: f64,
    pub lam: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub dynamic: DynamicHeads,
    /// Normalized cross-loop range, layers × heads.
    pub heatmap: Matrix,
    /// Mean over heads, per loop.
    pub loop_means: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub layers: usize,
    pub heads: usize,
    pub sequences: usize,
    pub len: usize,
    pub windows: Vec<usize>,
    /// Averaged over sequences; ordered by (loop, layer, head).
    pub stats: Vec<HeadStat>,
    pub entropy: MetricSummary,
    pub lam: MetricSummary,
}

fn summarize(values: Vec<Vec<f64>>, layers: usize, heads: usize) -> Result<MetricSummary> {
    let loop_means = values
        .iter()
        .map(|v| v.iter().sum::<f64>() / v.len().max(1) as f64)
        .collect();
    let dynamic = dynamic_heads(&values, DYNAMIC_FRACTION)?;
    let grid = Matrix::from_vec(layers, heads, dynamic.ranges.clone())?;
    Ok(MetricSummary {
        heatmap: normalize_heatmap(&grid),
        dynamic,
        loop_means,
    })
}

/// Probes the core of `model` on `sequences` random sequences of length
/// `len`, averaging each head's metrics over sequences.
pub fn probe_model(model: &Model, sequences: usize, len: usize, seed: u64, threads: usize) -> Result<ProbeReport> {
    if sequences == 0 {
        return Err(Error::Analysis("at least one sequence is required".into()));
    }
    let cfg = &model.config;
    let loops = cfg.iterations();
    let layers = cfg.allocation.n_loop;
    let heads = cfg.n_heads;
    let windows: Vec<usize> = cfg
        .allocation
        .schedule
        .iter()
        .map(|r| lam_window(r.ratio, LAM_GAMMA))
        .collect();

    let per_seq = super::run_indexed(sequences, threads, |n| -> Result<Vec<(f64, f64)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(n as u64));
        let tokens: Vec<usize> = (0..len).map(|_| rng.random_range(0..cfg.vocab)).collect();
        let out = model.forward(&tokens, true)?;
        let mut cells = Vec::with_capacity(loops * layers * heads);
        for (t, cap) in out.captures.iter().enumerate() {
            for layer in cap {
                for attn in layer {
                    cells.push((entropy(attn)?, lam(attn, windows[t])?));
                }
            }
        }
        Ok(cells)
    });

    let mut sums = vec![(0.0, 0.0); loops * layers * heads];
    for cells in per_seq {
        for (acc, (h, l)) in sums.iter_mut().zip(cells?) {
            acc.0 += h;
            acc.1 += l;
        }
    }
    let n = sequences as f64;
    let mut stats = Vec::with_capacity(sums.len());
    let mut ent = vec![vec![0.0; layers * heads]; loops];
    let mut loc = vec![vec![0.0; layers * heads]; loops];
    for (idx, (h, l)) in sums.into_iter().enumerate() {
        let (t, rest) = (idx / (layers * heads), idx % (layers * heads));
        ent[t][rest] = h / n;
        loc[t][rest] = l / n;
        stats.push(HeadStat {
            loop_index: t,
            layer: rest / heads,
            head: rest % heads,
            entropy: h / n,
            lam: l / n,
        });
    }
    Ok(ProbeReport {
        layers,
        heads,
        sequences,
        len,
        windows,
        stats,
        entropy: summarize(ent, layers, heads)?,
        lam: summarize(loc, layers, heads)?,
    })
}
