//! Decode-time scheduling of coarse iterations off the critical path.
//!
//! With `s_t ≥ g_t`, every position in chunk `j` reads latents of chunks
//! `≤ j − 1` only. The down→core→up work for a chunk can therefore start as
//! soon as its last token is through the full-resolution stream and run on a
//! background lane, while later tokens only read the cached result.
//!
//! The simulator walks tokens in order with one background lane per coarse
//! iteration and integer costs, so work totals compare exactly.

use serde::{Deserialize, Serialize};

use crate::config::{Allocation, ModelConfig};
use crate::decoder::trigger_positions;
use crate::error::{Error, Result};
use crate::resolution::ChunkMap;

/// Latency proxy per unit of work.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub pre: u64,
    pub post: u64,
    /// One full-resolution iteration for one token.
    pub fine_iteration: u64,
    /// One core call on one chunk latent.
    pub core_call: u64,
    /// Aggregation and allocation cost per chunk member.
    pub per_member: u64,
    /// Reading and expanding a cached latent.
    pub cache_read: u64,
}

impl CostModel {
    pub fn unit() -> Self {
        Self {
            pre: 1,
            post: 1,
            fine_iteration: 1,
            core_call: 1,
            per_member: 0,
            cache_read: 1,
        }
    }

    /// Per-token FLOPs of each stage, using the linear terms of the FLOPs
    /// model (attention cost grows with the cache and is left out).
    pub fn from_flops(allocation: &Allocation, d_model: usize, vocab: usize) -> Self {
        let d = d_model as u64;
        let layer = 2 * 12 * d * d;
        Self {
            pre: allocation.n_pre as u64 * layer,
            post: allocation.n_post as u64 * layer + 2 * vocab as u64 * d,
            fine_iteration: allocation.n_loop as u64 * layer + 4 * d,
            core_call: allocation.n_loop as u64 * layer,
            per_member: 4 * d,
            cache_read: d,
        }
    }

    pub fn coarse_task(&self, chunk: usize) -> u64 {
        self.core_call + self.per_member * chunk as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTiming {
    pub critical: u64,
    /// Time spent waiting on a background latent.
    pub stall: u64,
    pub finish: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkTask {
    pub iteration: usize,
    pub chunk: usize,
    /// Token whose arrival closes the chunk.
    pub launch_step: usize,
    /// Chunks whose latents the positions of this chunk read.
    pub dependencies: Vec<usize>,
    pub start: u64,
    pub finish: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub tokens: Vec<TokenTiming>,
    pub tasks: Vec<ChunkTask>,
    pub sequential_latency: u64,
    pub pipelined_latency: u64,
    pub sequential_work: u64,
    pub pipelined_work: u64,
    /// Every chunk depends only on strictly earlier chunks.
    pub dependencies_hold: bool,
    /// First token from which every coarse update is a cache read.
    pub steady_from: usize,
    /// Critical-path cost is the same for all tokens from `steady_from` on.
    pub critical_path_constant: bool,
}

pub fn simulate_pipeline(config: &ModelConfig, len: usize, cost: &CostModel) -> Result<PipelineReport> {
    config.validate()?;
    let chunks = config.chunks();
    let coarse: Vec<usize> = (0..chunks.len()).filter(|&t| chunks[t] > 1).collect();
    for &t in &coarse {
        if config.shifts[t] < chunks[t] {
            return Err(Error::Analysis(format!(
                "iteration {t} has s = {} < g = {}; it cannot run in the background",
                config.shifts[t], chunks[t]
            )));
        }
    }
    let fine = chunks.len() - coarse.len();
    let maps = coarse
        .iter()
        .map(|&t| ChunkMap::for_iteration(t, len, chunks[t], config.offsets[t]))
        .collect::<Result<Vec<_>>>()?;
    let triggers = coarse
        .iter()
        .map(|&t| trigger_positions(chunks[t], config.offsets[t], len))
        .collect::<Result<Vec<_>>>()?;

    let critical: Vec<u64> = (0..len)
        .map(|i| {
            let reads = coarse.iter().filter(|&&t| i >= config.shifts[t]).count() as u64;
            cost.pre + cost.post + fine as u64 * cost.fine_iteration + reads * cost.cache_read
        })
        .collect();

    // finish[c][j]: completion time of coarse iteration c's task for chunk j
    let mut finish: Vec<Vec<Option<u64>>> = maps.iter().map(|m| vec![None; m.n_chunks() + 1]).collect();
    let mut lane_free = vec![0u64; coarse.len()];
    let mut tasks = Vec::new();
    let mut tokens = Vec::with_capacity(len);
    let mut now = 0u64;
    let mut lane_work = 0u64;
    let mut sequential = 0u64;

    for (i, &crit) in critical.iter().enumerate() {
        let mut clock = now + cost.pre;
        let mut stall = 0;
        for (t, &g) in chunks.iter().enumerate() {
            let Some(c) = coarse.iter().position(|&ct| ct == t) else {
                clock += cost.fine_iteration;
                continue;
            };
            let map = &maps[c];
            let s = config.shifts[t];
            if triggers[c].binary_search(&i).is_ok() {
                // h⁽ᵗ⁾ of the closing token is ready: launch the chunk
                let (j, _) = map.locate(i);
                let mut dependencies: Vec<usize> = map
                    .members(j)
                    .filter(|&k| k >= s)
                    .map(|k| map.locate(k - s).0)
                    .collect();
                dependencies.dedup();
                let work = cost.coarse_task(g);
                let start = clock.max(lane_free[c]);
                lane_free[c] = start + work;
                lane_work += work;
                sequential += work;
                finish[c][j] = Some(lane_free[c]);
                tasks.push(ChunkTask {
                    iteration: t,
                    chunk: j,
                    launch_step: i,
                    dependencies,
                    start,
                    finish: lane_free[c],
                });
            }
            if i >= s {
                let (pi, _) = map.locate(i - s);
                let ready = finish[c].get(pi).copied().flatten().ok_or(Error::Analysis(format!(
                    "token {i} at iteration {t} reads chunk {pi} before it is launched"
                )))?;
                if ready > clock {
                    stall += ready - clock;
                    clock = ready;
                }
                clock += cost.cache_read;
            }
        }
        now = clock + cost.post;
        sequential += crit;
        tokens.push(TokenTiming {
            critical: crit,
            stall,
            finish: now,
        });
    }

    let dependencies_hold = tasks
        .iter()
        .all(|task| task.dependencies.iter().all(|&d| d < task.chunk));
    let steady_from = coarse.iter().map(|&t| config.shifts[t]).max().unwrap_or(0);
    let critical_path_constant = critical
        .get(steady_from..)
        .is_none_or(|rest| rest.windows(2).all(|w| w[0] == w[1]));
    Ok(PipelineReport {
        sequential_latency: sequential,
        pipelined_latency: now,
        sequential_work: sequential,
        pipelined_work: critical.iter().sum::<u64>() + lane_work,
        tokens,
        tasks,
        dependencies_hold,
        steady_from,
        critical_path_constant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_allocation;

    fn config(alloc: &str, shifts: Vec<usize>) -> ModelConfig {
        ModelConfig::new(parse_allocation(alloc).unwrap())
            .with_dims(16, 2, 32)
            .with_shifts(shifts)
    }

    #[test]
    fn full_resolution_has_nothing_to_offload() {
        let r = simulate_pipeline(&config("1+1×{1}+1", vec![0]), 16, &CostModel::unit()).unwrap();
        assert!(r.tasks.is_empty());
        assert_eq!(r.pipelined_latency, r.sequential_latency);
        assert_eq!(r.sequential_latency, 16 * 3);
    }

    #[test]
    fn coarse_iteration_runs_off_the_critical_path() {
        // unit costs, 16 tokens, g=8, ω=4, s=8: tokens 0..8 cost 3, 8..16
        // cost 4; chunks close at 3 and 11; nothing ever waits.
        let r = simulate_pipeline(&config("1+1×{1/8,1}+1", vec![8, 0]), 16, &CostModel::unit()).unwrap();
        let crit: Vec<u64> = r.tokens.iter().map(|t| t.critical).collect();
        assert_eq!(&crit[..8], &[3; 8]);
        assert_eq!(&crit[8..], &[4; 8]);
        assert!(r.tokens.iter().all(|t| t.stall == 0));
        let launches: Vec<usize> = r.tasks.iter().map(|t| t.launch_step).collect();
        assert_eq!(launches, vec![3, 11]);
        assert!(r.tasks[0].dependencies.is_empty());
        assert_eq!(r.tasks[1].dependencies, vec![0]);
        assert!(r.dependencies_hold);
        assert_eq!(r.steady_from, 8);
        assert!(r.critical_path_constant);
        assert_eq!(r.pipelined_work, r.sequential_work);
        assert_eq!(r.sequential_latency, 8 * 3 + 8 * 4 + 2);
        assert_eq!(r.pipelined_latency, 8 * 3 + 8 * 4);
    }

    #[test]
    fn overlapping_shift_is_rejected() {
        let err = simulate_pipeline(&config("1+1×{1/8,1}+1", vec![7, 0]), 16, &CostModel::unit());
        assert!(matches!(err, Err(Error::Analysis(_))));
    }

    #[test]
    fn flop_costs_conserve_work() {
        let cfg = config("2+3×{1/8,1/4,1/2,1}+2", vec![8, 4, 2, 0]);
        let cost = CostModel::from_flops(&cfg.allocation, 64, 256);
        let r = simulate_pipeline(&cfg, 64, &cost).unwrap();
        assert_eq!(r.pipelined_work, r.sequential_work);
        assert!(r.pipelined_latency < r.sequential_latency);
        assert!(r.dependencies_hold && r.critical_path_constant);
    }
}
