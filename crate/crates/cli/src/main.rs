//! `mrloop` command-line front end.
//!
//! Exit codes: 0 success, 1 failed verification check, 2 config or parse
//! error, 3 shape or length error, 4 I/O error.

mod output;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use mrloop::analysis::{
    estimate_flops, preset, probe_causality, probe_model, simulate_pipeline, uniformity_histogram, CausalityOptions,
    CostModel, Preset,
};
use mrloop::config::{parse_allocation, Allocation, ModelConfig};
use mrloop::decoder::{batch_aligned, generate, trigger_positions, DecodeState};
use mrloop::engine::Model;
use mrloop::resolution::ChunkMap;
use mrloop::tensor::{Matrix, Precision};
use mrloop::Error;

use output::{print_json, run_id, sha256_hex, OutDir};

const DEFAULT_ALLOCATION: &str = "2+2×{1/8,1/4,1/2,1}+2";

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn io(path: &Path, err: std::io::Error) -> Self {
        Self::new(4, format!("{}: {err}", path.display()))
    }

    fn internal(err: impl fmt::Display) -> Self {
        Self::new(4, err.to_string())
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        let code = match err {
            Error::Shape { .. } | Error::EmptySchedule { .. } | Error::Token { .. } | Error::StepOrder { .. } => 3,
            _ => 2,
        };
        Self::new(code, err.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "mrloop",
    version,
    about = "Multi-resolution looped transformer engine and verification harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Config file in `key = value` format.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Allocation string overriding the config, e.g. "2+2x{1/8,1/4,1/2,1}+2".
    #[arg(long)]
    alloc: Option<String>,
    /// Arithmetic precision: single or double.
    #[arg(long)]
    precision: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Causality,
    Equivalence,
    Triggers,
    Pipeline,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Cost {
    Unit,
    Flops,
}

#[derive(Subcommand)]
enum Command {
    /// Batched forward pass; prints shapes, loop lengths and an h_out checksum.
    Forward {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        len: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy generation from a seeded random prompt.
    Decode {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        seed: u64,
        /// Prompt length.
        #[arg(long, default_value_t = 16)]
        len: usize,
        /// Tokens to generate.
        #[arg(long, default_value_t = 8)]
        new: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs verification suites; exits 1 if any check fails.
    Verify {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
        #[arg(long)]
        len: Option<usize>,
        /// Causality trials.
        #[arg(long, default_value_t = 64)]
        trials: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attention probes over the looped core; writes CSVs and a summary.
    Probe {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        sequences: usize,
        #[arg(long, default_value_t = 256)]
        len: usize,
    },
    /// Itemized prefill FLOPs for an allocation at a preset's dimensions.
    Flops {
        /// Allocation string, or "baseline" for the preset's plain stack.
        #[arg(long)]
        alloc: String,
        /// 160m, 410m, 1b, 1.4b or custom.
        #[arg(long, default_value = "410m")]
        preset: String,
        #[arg(long, default_value_t = 4096)]
        len: usize,
        /// Model width for the custom preset.
        #[arg(long)]
        d_model: Option<usize>,
        /// Vocabulary for the custom preset.
        #[arg(long)]
        vocab: Option<usize>,
        /// Layer count used by "baseline" with the custom preset.
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trigger positions and per-token trigger counts.
    Triggers {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 64)]
        len: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulates moving coarse iterations off the decode critical path.
    Pipeline {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 64)]
        len: usize,
        #[arg(long, value_enum, default_value_t = Cost::Unit)]
        cost: Cost,
        /// Raise every coarse shift to at least its chunk size.
        #[arg(long)]
        no_overlap: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn threads() -> usize {
    std::env::var("SPIRAL_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

fn load_config(args: &ModelArgs) -> Result<ModelConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::new(2, format!("{}: {e}", path.display())))?;
            ModelConfig::from_text(&text)?
        }
        None => ModelConfig::new(parse_allocation(DEFAULT_ALLOCATION)?),
    };
    if let Some(text) = &args.alloc {
        let fresh = ModelConfig::new(parse_allocation(text)?);
        cfg.offsets = fresh.offsets;
        cfg.shifts = fresh.shifts;
        cfg.allocation = fresh.allocation;
    }
    if let Some(p) = &args.precision {
        cfg.precision = p.parse::<Precision>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn config_hash(cfg: &ModelConfig) -> String {
    sha256_hex(cfg.to_text().as_bytes())
}

fn random_tokens(len: usize, vocab: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(0..vocab)).collect()
}

fn matrix_checksum(m: &Matrix) -> String {
    let bytes: Vec<u8> = m.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    sha256_hex(&bytes)
}

#[derive(Serialize)]
struct ForwardSummary {
    run_id: String,
    len: usize,
    shape: [usize; 2],
    loop_lengths: Vec<usize>,
    checksum: String,
}

fn cmd_forward(model: &ModelArgs, seed: u64, len: usize, out: Option<&Path>) -> Result<(), CliError> {
    let cfg = load_config(model)?;
    let hash = config_hash(&cfg);
    let id = run_id(&["forward", &hash, &seed.to_string(), &len.to_string()]);
    let m = Model::new(cfg, seed)?;
    let tokens = random_tokens(len, m.config.vocab, seed);
    let result = m.forward(&tokens, false)?;
    let summary = ForwardSummary {
        run_id: id.clone(),
        len,
        shape: [result.h_out.rows(), result.h_out.cols()],
        loop_lengths: result.loop_lengths,
        checksum: matrix_checksum(&result.h_out),
    };
    print_json(&summary)?;
    if let Some(dir) = out {
        let mut od = OutDir::create(dir)?;
        od.write_json("forward.json", &summary)?;
        od.finish(id, Some(hash), Some(seed))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct DecodeSummary {
    run_id: String,
    prompt: Vec<usize>,
    generated: Vec<usize>,
}

fn cmd_decode(model: &ModelArgs, seed: u64, len: usize, new: usize, out: Option<&Path>) -> Result<(), CliError> {
    let cfg = load_config(model)?;
    let hash = config_hash(&cfg);
    let id = run_id(&["decode", &hash, &seed.to_string(), &len.to_string(), &new.to_string()]);
    let m = Model::new(cfg, seed)?;
    let prompt = random_tokens(len, m.config.vocab, seed);
    let tokens = generate(&m, &prompt, new)?;
    let summary = DecodeSummary {
        run_id: id.clone(),
        generated: tokens[prompt.len()..].to_vec(),
        prompt,
    };
    print_json(&summary)?;
    if let Some(dir) = out {
        let mut od = OutDir::create(dir)?;
        od.write_json("decode.json", &summary)?;
        od.finish(id, Some(hash), Some(seed))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Check {
    suite: &'static str,
    name: String,
    passed: bool,
    magnitude: Option<f64>,
    detail: serde_json::Value,
}

fn check(
    suite: &'static str,
    name: impl Into<String>,
    passed: bool,
    magnitude: Option<f64>,
    detail: serde_json::Value,
) -> Check {
    Check {
        suite,
        name: name.into(),
        passed,
        magnitude,
        detail,
    }
}

fn suite_causality(m: &Model, seed: u64, len: usize, trials: usize) -> Result<Vec<Check>, CliError> {
    let opts = CausalityOptions {
        len,
        trials,
        seed,
        threads: threads(),
        stop_at_first: false,
    };
    let r = probe_causality(&m.config, &m.weights, opts)?;
    let detail = serde_json::json!({
        "shifts": r.shifts,
        "trials": r.trials,
        "violations": r.violations,
        "suspect_iterations": r.suspect_iterations,
        "first_violation": r.first_violation.map(|v| serde_json::json!({
            "iterations": r.suspect_iterations,
            "perturbed": v.perturbed,
            "affected": v.affected,
            "trial": v.trial,
        })),
    });
    Ok(vec![check(
        "causality",
        "no leak to earlier positions",
        r.is_causal(),
        Some(r.max_leak),
        detail,
    )])
}

fn suite_equivalence(m: &Model, seed: u64, len: usize) -> Result<Vec<Check>, CliError> {
    let aligned = (m.config.max_chunk()..=len)
        .rev()
        .find(|&l| batch_aligned(&m.config, l));
    let Some(len) = aligned else {
        return Ok(vec![check(
            "equivalence",
            "decode matches forward",
            false,
            None,
            serde_json::json!({ "error": format!("no usable length ≤ {len}") }),
        )]);
    };
    let tokens = random_tokens(len, m.config.vocab, seed);
    let batch = m.forward(&tokens, false)?.h_out;
    let rows = match DecodeState::new(m).and_then(|mut s| s.prefill(&tokens)) {
        Ok(rows) => rows,
        Err(e) => {
            return Ok(vec![check(
                "equivalence",
                "decode matches forward",
                false,
                None,
                serde_json::json!({ "error": e.to_string() }),
            )])
        }
    };
    let dev = batch.max_abs_diff(&Matrix::from_rows(&rows)?).unwrap_or(f64::INFINITY);
    Ok(vec![check(
        "equivalence",
        "decode matches forward",
        dev <= 1e-10,
        Some(dev),
        serde_json::json!({ "len": len, "tolerance": 1e-10 }),
    )])
}

fn suite_triggers(cfg: &ModelConfig, len: usize) -> Result<Vec<Check>, CliError> {
    let mut checks = Vec::new();
    for t in 0..cfg.iterations() {
        let (g, omega) = (cfg.chunk(t), cfg.offsets[t]);
        let positions = trigger_positions(g, omega, len)?;
        let complete = ChunkMap::for_iteration(t, len, g, omega).map_or(0, |m| m.n_chunks());
        let residues = positions.iter().all(|i| (i + omega) % g == g - 1);
        checks.push(check(
            "triggers",
            format!("iteration {t}: one trigger per chunk"),
            positions.len() == complete && residues,
            None,
            serde_json::json!({ "chunk": g, "offset": omega, "triggers": positions.len(), "chunks": complete }),
        ));
    }
    let current = uniformity_histogram(&cfg.chunks(), &cfg.offsets, len)?;
    let aligned = uniformity_histogram(&cfg.chunks(), &vec![0; cfg.iterations()], len)?;
    checks.push(check(
        "triggers",
        "offsets do not widen per-token spread",
        current.spread <= aligned.spread,
        Some(current.spread as f64),
        serde_json::json!({ "spread": current.spread, "spread_zero_offsets": aligned.spread }),
    ));
    Ok(checks)
}

fn no_overlap(cfg: &ModelConfig) -> ModelConfig {
    let shifts = cfg
        .chunks()
        .iter()
        .zip(&cfg.shifts)
        .map(|(&g, &s)| if g > 1 { s.max(g) } else { s })
        .collect();
    cfg.clone().with_shifts(shifts)
}

fn suite_pipeline(cfg: &ModelConfig, len: usize) -> Result<Vec<Check>, CliError> {
    let cfg = no_overlap(cfg);
    let r = simulate_pipeline(&cfg, len, &CostModel::unit())?;
    let detail = serde_json::json!({
        "shifts": cfg.shifts,
        "sequential_latency": r.sequential_latency,
        "pipelined_latency": r.pipelined_latency,
    });
    Ok(vec![
        check(
            "pipeline",
            "chunks read only earlier chunks",
            r.dependencies_hold,
            None,
            detail.clone(),
        ),
        check(
            "pipeline",
            "work conserved",
            r.pipelined_work == r.sequential_work,
            Some(r.pipelined_work as f64 - r.sequential_work as f64),
            detail.clone(),
        ),
        check(
            "pipeline",
            "constant critical path",
            r.critical_path_constant,
            None,
            detail,
        ),
    ])
}

#[derive(Serialize)]
struct VerifyReport {
    run_id: String,
    passed: bool,
    checks: Vec<Check>,
}

fn cmd_verify(
    model: &ModelArgs,
    seed: u64,
    suite: Suite,
    len: Option<usize>,
    trials: usize,
    out: Option<&Path>,
) -> Result<bool, CliError> {
    let cfg = load_config(model)?;
    let hash = config_hash(&cfg);
    let suite_name = suite
        .to_possible_value()
        .map(|v| v.get_name().to_string())
        .unwrap_or_default();
    let id = run_id(&[
        "verify",
        &hash,
        &seed.to_string(),
        &suite_name,
        &format!("{len:?}"),
        &trials.to_string(),
    ]);
    let m = Model::new(cfg, seed)?;
    let run = |s: Suite| matches!(suite, Suite::All) || std::mem::discriminant(&s) == std::mem::discriminant(&suite);
    let mut checks = Vec::new();
    if run(Suite::Causality) {
        checks.extend(suite_causality(&m, seed, len.unwrap_or(64), trials)?);
    }
    if run(Suite::Equivalence) {
        checks.extend(suite_equivalence(&m, seed, len.unwrap_or(96))?);
    }
    if run(Suite::Triggers) {
        checks.extend(suite_triggers(&m.config, len.unwrap_or(64))?);
    }
    if run(Suite::Pipeline) {
        checks.extend(suite_pipeline(&m.config, len.unwrap_or(64))?);
    }
    let report = VerifyReport {
        run_id: id.clone(),
        passed: checks.iter().all(|c| c.passed),
        checks,
    };
    print_json(&report)?;
    if let Some(dir) = out {
        let mut od = OutDir::create(dir)?;
        od.write_json("verify.json", &report)?;
        od.finish(id, Some(hash), Some(seed))?;
    }
    Ok(report.passed)
}

#[derive(Serialize)]
struct MetricRow {
    #[serde(rename = "loop")]
    loop_index: usize,
    layer: usize,
    head: usize,
    value: f64,
}

#[derive(Serialize)]
struct DynamicRow {
    metric: &'static str,
    rank: usize,
    layer: usize,
    head: usize,
    range: f64,
}

#[derive(Serialize)]
struct HeatmapRow {
    metric: &'static str,
    layer: usize,
    head: usize,
    value: f64,
}

#[derive(Serialize)]
struct ProbeSummary {
    run_id: String,
    sequences: usize,
    len: usize,
    windows: Vec<usize>,
    entropy_loop_means: Vec<f64>,
    lam_loop_means: Vec<f64>,
    dynamic_heads: usize,
}

fn cmd_probe(model: &ModelArgs, seed: u64, out: &Path, sequences: usize, len: usize) -> Result<(), CliError> {
    let cfg = load_config(model)?;
    let hash = config_hash(&cfg);
    let id = run_id(&[
        "probe",
        &hash,
        &seed.to_string(),
        &sequences.to_string(),
        &len.to_string(),
    ]);
    let m = Model::new(cfg, seed)?;
    let r = probe_model(&m, sequences, len, seed, threads())?;

    let rows = |f: fn(&mrloop::analysis::probe::HeadStat) -> f64| -> Vec<MetricRow> {
        r.stats
            .iter()
            .map(|s| MetricRow {
                loop_index: s.loop_index,
                layer: s.layer,
                head: s.head,
                value: f(s),
            })
            .collect()
    };
    let mut dynamic = Vec::new();
    let mut heatmap = Vec::new();
    for (metric, summary) in [("entropy", &r.entropy), ("lam", &r.lam)] {
        for (rank, &idx) in summary.dynamic.flagged.iter().enumerate() {
            dynamic.push(DynamicRow {
                metric,
                rank,
                layer: idx / r.heads,
                head: idx % r.heads,
                range: summary.dynamic.ranges[idx],
            });
        }
        for layer in 0..r.layers {
            for head in 0..r.heads {
                heatmap.push(HeatmapRow {
                    metric,
                    layer,
                    head,
                    value: summary.heatmap.get(layer, head),
                });
            }
        }
    }
    let summary = ProbeSummary {
        run_id: id.clone(),
        sequences,
        len,
        windows: r.windows.clone(),
        entropy_loop_means: r.entropy.loop_means.clone(),
        lam_loop_means: r.lam.loop_means.clone(),
        dynamic_heads: r.entropy.dynamic.flagged.len(),
    };
    let mut od = OutDir::create(out)?;
    od.write_csv("entropy.csv", &rows(|s| s.entropy))?;
    od.write_csv("lam.csv", &rows(|s| s.lam))?;
    od.write_csv("dynamic_heads.csv", &dynamic)?;
    od.write_csv("heatmap.csv", &heatmap)?;
    od.write_json("summary.json", &summary)?;
    od.finish(id, Some(hash), Some(seed))?;
    print_json(&summary)
}

#[derive(Serialize)]
struct FlopsRow {
    allocation: String,
    preset: String,
    d_model: usize,
    vocab: usize,
    len: usize,
    linear: u64,
    attention: u64,
    lm_head: u64,
    scaler: u64,
    total: u64,
}

#[allow(clippy::too_many_arguments)]
fn cmd_flops(
    alloc: &str,
    preset_name: &str,
    len: usize,
    d_model: Option<usize>,
    vocab: Option<usize>,
    layers: Option<usize>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let dims = if preset_name.eq_ignore_ascii_case("custom") {
        Preset {
            name: "custom",
            d_model: d_model.ok_or_else(|| CliError::new(2, "custom preset needs --d-model"))?,
            layers: layers.unwrap_or(0),
            heads: 1,
            vocab: vocab.ok_or_else(|| CliError::new(2, "custom preset needs --vocab"))?,
        }
    } else {
        preset(preset_name).ok_or_else(|| CliError::new(2, format!("unknown preset {preset_name:?}")))?
    };
    let allocation = if alloc.trim().eq_ignore_ascii_case("baseline") {
        if dims.layers == 0 {
            return Err(CliError::new(2, "baseline with the custom preset needs --layers"));
        }
        Allocation::baseline(dims.layers)
    } else {
        parse_allocation(alloc)?
    };
    let r = estimate_flops(&allocation, dims.d_model, dims.vocab, len);
    println!("allocation  {allocation}");
    println!(
        "preset      {} (d={}, V={}, L={len})",
        dims.name, dims.d_model, dims.vocab
    );
    for (name, v) in [
        ("linear", r.linear),
        ("attention", r.attention),
        ("lm_head", r.lm_head),
        ("scaler", r.scaler),
        ("total", r.total),
    ] {
        println!("{name:<11} {:.4e}", v as f64);
    }
    if let Some(dir) = out {
        let row = FlopsRow {
            allocation: allocation.to_string(),
            preset: dims.name.to_string(),
            d_model: dims.d_model,
            vocab: dims.vocab,
            len,
            linear: r.linear,
            attention: r.attention,
            lm_head: r.lm_head,
            scaler: r.scaler,
            total: r.total,
        };
        let id = run_id(&[
            "flops",
            &row.allocation,
            dims.name,
            &dims.d_model.to_string(),
            &len.to_string(),
        ]);
        let mut od = OutDir::create(dir)?;
        od.write_csv("flops.csv", &[row])?;
        od.finish(id, None, None)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TriggerRow {
    token: usize,
    count: usize,
}

#[derive(Serialize)]
struct TriggerSummary {
    run_id: String,
    len: usize,
    positions: Vec<Vec<usize>>,
    spread: usize,
    spread_zero_offsets: usize,
}

fn cmd_triggers(model: &ModelArgs, len: usize, out: Option<&Path>) -> Result<(), CliError> {
    let cfg = load_config(model)?;
    let hash = config_hash(&cfg);
    let id = run_id(&["triggers", &hash, &len.to_string()]);
    let positions = (0..cfg.iterations())
        .map(|t| trigger_positions(cfg.chunk(t), cfg.offsets[t], len))
        .collect::<Result<Vec<_>, _>>()?;
    let hist = uniformity_histogram(&cfg.chunks(), &cfg.offsets, len)?;
    let aligned = uniformity_histogram(&cfg.chunks(), &vec![0; cfg.iterations()], len)?;
    let summary = TriggerSummary {
        run_id: id.clone(),
        len,
        positions,
        spread: hist.spread,
        spread_zero_offsets: aligned.spread,
    };
    print_json(&summary)?;
    if let Some(dir) = out {
        let rows: Vec<TriggerRow> = hist
            .counts
            .iter()
            .enumerate()
            .map(|(token, &count)| TriggerRow { token, count })
            .collect();
        let mut od = OutDir::create(dir)?;
        od.write_csv("triggers.csv", &rows)?;
        od.write_json("triggers.json", &summary)?;
        od.finish(id, Some(hash), None)?;
    }
    Ok(())
}

fn cmd_pipeline(
    model: &ModelArgs,
    len: usize,
    cost: Cost,
    overlap_free: bool,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let mut cfg = load_config(model)?;
    if overlap_free {
        cfg = no_overlap(&cfg);
    }
    let hash = config_hash(&cfg);
    let cost_name = match cost {
        Cost::Unit => "unit",
        Cost::Flops => "flops",
    };
    let id = run_id(&["pipeline", &hash, &len.to_string(), cost_name]);
    let model = match cost {
        Cost::Unit => CostModel::unit(),
        Cost::Flops => CostModel::from_flops(&cfg.allocation, cfg.d_model, cfg.vocab),
    };
    let report = simulate_pipeline(&cfg, len, &model)?;
    let summary = serde_json::json!({
        "run_id": id,
        "shifts": cfg.shifts,
        "sequential_latency": report.sequential_latency,
        "pipelined_latency": report.pipelined_latency,
        "sequential_work": report.sequential_work,
        "pipelined_work": report.pipelined_work,
        "dependencies_hold": report.dependencies_hold,
        "steady_from": report.steady_from,
        "critical_path_constant": report.critical_path_constant,
        "tasks": report.tasks.len(),
    });
    print_json(&summary)?;
    if let Some(dir) = out {
        let mut od = OutDir::create(dir)?;
        od.write_json("pipeline.json", &report)?;
        od.finish(id, Some(hash), None)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Forward { model, seed, len, out } => cmd_forward(&model, seed, len, out.as_deref()).map(|_| true),
        Command::Decode {
            model,
            seed,
            len,
            new,
            out,
        } => cmd_decode(&model, seed, len, new, out.as_deref()).map(|_| true),
        Command::Verify {
            model,
            seed,
            suite,
            len,
            trials,
            out,
        } => cmd_verify(&model, seed, suite, len, trials, out.as_deref()),
        Command::Probe {
            model,
            seed,
            out,
            sequences,
            len,
        } => cmd_probe(&model, seed, &out, sequences, len).map(|_| true),
        Command::Flops {
            alloc,
            preset,
            len,
            d_model,
            vocab,
            layers,
            out,
        } => cmd_flops(&alloc, &preset, len, d_model, vocab, layers, out.as_deref()).map(|_| true),
        Command::Triggers { model, len, out } => cmd_triggers(&model, len, out.as_deref()).map(|_| true),
        Command::Pipeline {
            model,
            len,
            cost,
            no_overlap,
            out,
        } => cmd_pipeline(&model, len, cost, no_overlap, out.as_deref()).map(|_| true),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
