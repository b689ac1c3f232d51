//! Autoregressive decoding with chunk-triggered recomputation.
//!
//! Each loop iteration keeps a buffer of the current chunk's token states.
//! When a token lands on the last slot of its chunk (`ρ = g − 1`) the buffer
//! is aggregated and pushed through the shared core as one more step of that
//! iteration's compressed sequence, with its own key/value cache. Every token
//! then reads its shifted update from the latent of chunk `π(i − s)`, which
//! is already final whenever `s ≥ g − 1`.
//!
//! The per-row kernels are the ones the batched pass uses, so a token-by-token
//! prefill reproduces [`crate::engine::forward`] exactly.

use crate::config::{ModelConfig, RopePositions};
use crate::engine::Model;
use crate::error::{Error, Result};
use crate::resolution::{aggregate_chunk, chunk_map, expand_row};
use crate::topology::{mesh_init_row, mesh_update_row, SlotRows};
use crate::transformer::{lm_head_and_sample, BlockCache};

/// Positions that close a kept chunk: `i ≡ g − 1 − ω (mod g)` inside the
/// kept prefix of a length-`len` sequence.
pub fn trigger_positions(chunk: usize, offset: usize, len: usize) -> Result<Vec<usize>> {
    chunk_map(0, chunk, offset)?;
    let kept_end = (len / chunk * chunk).saturating_sub(offset);
    Ok((0..kept_end).filter(|i| (i + offset) % chunk == chunk - 1).collect())
}

/// Whether the batched pass at length `len` keeps every chunk the decoder
/// would finalize. The batched pass keeps `⌊len/g⌋` chunks; with `ω > 0` the
/// tail can hold one more complete chunk, which a prefix-consistent decoder
/// fires but the batched pass drops. Equivalence of rows is exact only when
/// this holds, e.g. whenever `len` is a multiple of every chunk size.
pub fn batch_aligned(config: &ModelConfig, len: usize) -> bool {
    (0..config.iterations()).all(|t| {
        let g = config.chunk(t);
        len % g < g - config.offsets[t]
    })
}

#[derive(Debug, Clone)]
struct LoopLane {
    chunk: usize,
    offset: usize,
    shift: usize,
    core: BlockCache,
    buffer: Vec<Option<Vec<f64>>>,
    chunk_id: Option<usize>,
    /// Core output of every finalized chunk, indexed by chunk id.
    latents: Vec<Vec<f64>>,
    last_latent: Vec<f64>,
}

impl LoopLane {
    fn locate(&self, i: usize) -> (usize, usize) {
        let shifted = i + self.offset;
        (shifted / self.chunk, shifted % self.chunk)
    }
}

enum RowCarrier {
    Anchor(Vec<f64>),
    Mesh(SlotRows),
}

/// Caches and chunk buffers for one decoding stream.
#[derive(Debug, Clone)]
pub struct DecodeState<'m> {
    model: &'m Model,
    pre: BlockCache,
    post: BlockCache,
    lanes: Vec<LoopLane>,
    step: usize,
}

impl<'m> DecodeState<'m> {
    /// Fails if any iteration's shift would read a chunk that is still open.
    pub fn new(model: &'m Model) -> Result<Self> {
        let cfg = &model.config;
        cfg.validate()?;
        if let Some(&t) = cfg.noncausal_iterations().first() {
            return Err(Error::NonCausalShift {
                iteration: t,
                shift: cfg.shifts[t],
                chunk: cfg.chunk(t),
            });
        }
        let lanes = (0..cfg.iterations())
            .map(|t| LoopLane {
                chunk: cfg.chunk(t),
                offset: cfg.offsets[t],
                shift: cfg.shifts[t],
                core: BlockCache::new(&model.weights.core),
                buffer: vec![None; cfg.chunk(t)],
                chunk_id: None,
                latents: Vec::new(),
                last_latent: vec![0.0; cfg.d_model],
            })
            .collect();
        Ok(Self {
            model,
            pre: BlockCache::new(&model.weights.pre),
            post: BlockCache::new(&model.weights.post),
            lanes,
            step: 0,
        })
    }

    /// Index of the next position to decode.
    pub fn position(&self) -> usize {
        self.step
    }

    /// Entries in iteration `t`'s core cache, i.e. triggers fired so far.
    pub fn loop_cache_len(&self, t: usize) -> usize {
        self.lanes[t].core.len()
    }

    pub fn chunk_id(&self, t: usize) -> Option<usize> {
        self.lanes[t].chunk_id
    }

    /// Most recent core output of iteration `t` (zero before the first
    /// trigger).
    pub fn last_latent(&self, t: usize) -> &[f64] {
        &self.lanes[t].last_latent
    }

    /// Processes token `token` at position `i` and returns its `h_out` row.
    pub fn decode_step(&mut self, i: usize, token: usize) -> Result<Vec<f64>> {
        if i != self.step {
            return Err(Error::StepOrder {
                expected: self.step,
                got: i,
            });
        }
        let cfg = &self.model.config;
        let w = &self.model.weights;
        let precision = cfg.precision;

        let mut x = w.embedding.embed_one(token)?.to_vec();
        precision.round_slice(&mut x);
        let mut v = self.pre.step(&x, &w.pre, i)?;
        precision.round_slice(&mut v);

        let (mut h, mut carrier) = match &w.mesh {
            Some(routers) => {
                let (h, slots) = mesh_init_row(&x, &v, &routers.transitional);
                (h, RowCarrier::Mesh(slots))
            }
            None => (v.clone(), RowCarrier::Anchor(v)),
        };
        precision.round_slice(&mut h);

        for t in 0..self.lanes.len() {
            let mut u = self.loop_update(t, i, &h)?;
            precision.round_slice(&mut u);
            h = match &mut carrier {
                RowCarrier::Anchor(h0) => u.iter().zip(h0.iter()).map(|(a, b)| a + b).collect(),
                RowCarrier::Mesh(slots) => {
                    let routers = &w.mesh.as_ref().expect("mesh carrier implies routers").steps[t];
                    mesh_update_row(&u, &h, slots, routers)
                }
            };
            precision.round_slice(&mut h);
        }

        let mut out = self.post.step(&h, &w.post, i)?;
        precision.round_slice(&mut out);
        self.step += 1;
        Ok(out)
    }

    /// Buffers `h` for iteration `t`, fires the core on a chunk boundary, and
    /// returns the shifted update for position `i`.
    fn loop_update(&mut self, t: usize, i: usize, h: &[f64]) -> Result<Vec<f64>> {
        let cfg = &self.model.config;
        let w = &self.model.weights;
        let params = &w.scalers[t];
        let lane = &mut self.lanes[t];
        let (pi, rho) = lane.locate(i);
        if lane.chunk_id != Some(pi) {
            lane.chunk_id = Some(pi);
            lane.buffer.iter_mut().for_each(|slot| *slot = None);
        }
        lane.buffer[rho] = Some(h.to_vec());

        if rho == lane.chunk - 1 {
            // head chunk may be short when ω > 0; aggregate what is present
            let rows: Vec<&[f64]> = lane.buffer.iter().flatten().map(Vec::as_slice).collect();
            let mut z = aggregate_chunk(&rows, cfg.downscale, cfg.mean_divisor, params);
            cfg.precision.round_slice(&mut z);
            let pos = match cfg.rope_positions {
                RopePositions::ChunkIndex => pi,
                RopePositions::Token => i,
            };
            let mut z_hat = lane.core.step(&z, &w.core, pos)?;
            cfg.precision.round_slice(&mut z_hat);
            debug_assert_eq!(lane.latents.len(), pi);
            lane.latents.push(z_hat.clone());
            lane.last_latent = z_hat;
        }

        if i < lane.shift {
            return Ok(vec![0.0; h.len()]);
        }
        let (pi_s, rho_s) = lane.locate(i - lane.shift);
        let latent = lane.latents.get(pi_s).ok_or(Error::NonCausalShift {
            iteration: t,
            shift: lane.shift,
            chunk: lane.chunk,
        })?;
        Ok(expand_row(latent, rho_s, cfg.upscale, params))
    }

    /// Token-by-token prefill; returns the `h_out` row of every prompt token.
    pub fn prefill(&mut self, prompt: &[usize]) -> Result<Vec<Vec<f64>>> {
        prompt
            .iter()
            .map(|&tok| {
                let i = self.step;
                self.decode_step(i, tok)
            })
            .collect()
    }
}

/// Greedy continuation of `prompt` by `new_tokens` tokens.
pub fn generate(model: &Model, prompt: &[usize], new_tokens: usize) -> Result<Vec<usize>> {
    if prompt.is_empty() {
        return Err(Error::Config("prompt must not be empty".into()));
    }
    let mut state = DecodeState::new(model)?;
    let mut out = prompt.to_vec();
    if new_tokens == 0 {
        return Ok(out);
    }
    let mut last = state.prefill(prompt)?.pop().expect("non-empty prompt");
    for n in 0..new_tokens {
        let next = lm_head_and_sample(&last, &model.weights.embedding)?;
        out.push(next);
        if n + 1 < new_tokens {
            last = state.decode_step(out.len() - 1, next)?;
        }
    }
    Ok(out)
}
