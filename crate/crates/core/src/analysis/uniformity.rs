//! Per-token trigger counts across a schedule.
//!
//! With zero offsets every chunk boundary of a coarse iteration is also a
//! boundary of all finer ones, so a few tokens trigger at every resolution
//! while most trigger only at full resolution. Half-chunk offsets spread the
//! boundaries apart.

use serde::{Deserialize, Serialize};

use crate::decoder::trigger_positions;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniformityReport {
    /// Core invocations attributed to each token.
    pub counts: Vec<usize>,
    pub min: usize,
    pub max: usize,
    pub spread: usize,
}

pub fn uniformity_histogram(chunks: &[usize], offsets: &[usize], len: usize) -> Result<UniformityReport> {
    if chunks.len() != offsets.len() {
        return Err(Error::Analysis(format!(
            "{} chunk sizes but {} offsets",
            chunks.len(),
            offsets.len()
        )));
    }
    let mut counts = vec![0; len];
    for (&g, &omega) in chunks.iter().zip(offsets) {
        for i in trigger_positions(g, omega, len)? {
            counts[i] += 1;
        }
    }
    let min = counts.iter().copied().min().unwrap_or(0);
    let max = counts.iter().copied().max().unwrap_or(0);
    Ok(UniformityReport {
        counts,
        min,
        max,
        spread: max - min,
    })
}
