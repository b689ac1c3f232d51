//! Measurements over the engine: causality probing, attention probes, the
//! FLOPs model, pipeline simulation and per-token trigger counts.

pub mod causality;
pub mod flops;
pub mod pipeline;
pub mod probe;
pub mod uniformity;

pub use causality::{probe_causality, CausalityOptions, CausalityReport, ShiftRegime, Violation};
pub use flops::{estimate_flops, preset, FlopsReport, Preset, PRESETS};
pub use pipeline::{simulate_pipeline, CostModel, PipelineReport};
pub use probe::{dynamic_heads, entropy, lam, lam_window, normalize_heatmap, probe_model, DynamicHeads, ProbeReport};
pub use uniformity::{uniformity_histogram, UniformityReport};

/// Evaluates `f(0..n)` in index order. `threads == 0` runs on the calling
/// thread; otherwise a pool of that many workers is used. Results do not
/// depend on the thread count.
pub fn run_indexed<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    if threads == 0 {
        return (0..n).map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        Err(_) => (0..n).map(f).collect(),
    }
}
