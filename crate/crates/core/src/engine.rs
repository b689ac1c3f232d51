//! Weight initialization and the batched forward pass.
//!
//! ```text
//! v = f_pre(embed(x))
//! (h, H) = init_topology(x, v)
//! for t in 0..T:
//!     z  = downscale_t(h)          # L_t = ⌊L/g_t⌋ latents
//!     ẑ  = f_loop(z)               # shared core at the compressed length
//!     u  = upscale_t(ẑ)            # back to L rows, gain √g_t
//!     ũ  = right_shift(u, s_t)
//!     (h, H) = topology(ũ, h, H; t)
//! h_out = f_post(h)
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, RopePositions};
use crate::error::Result;
use crate::resolution::{downscale, right_shift, upscale, ChunkMap, ScalerParams};
use crate::tensor::Matrix;
use crate::topology::{anchor_update, mesh_init, mesh_update, MeshRouters, Topology, TopologyCarrier};
use crate::transformer::{lm_head_and_sample, run_block, BlockCapture, BlockWeights, EmbeddingWeights};

/// Every parameter of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub embedding: EmbeddingWeights,
    pub pre: BlockWeights,
    pub core: BlockWeights,
    pub post: BlockWeights,
    /// One scorer/router pair per loop iteration.
    pub scalers: Vec<ScalerParams>,
    pub mesh: Option<MeshRouters>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCounts {
    pub embedding: usize,
    pub blocks: usize,
    pub scalers: usize,
    pub mesh_routers: usize,
    pub total: usize,
}

impl Weights {
    pub fn parameter_counts(&self) -> ParameterCounts {
        let embedding = 2 * self.embedding.input.rows() * self.embedding.input.cols();
        let blocks = self.pre.parameter_count() + self.core.parameter_count() + self.post.parameter_count();
        let scalers = self.scalers.iter().map(ScalerParams::parameter_count).sum();
        let mesh_routers = self.mesh.as_ref().map_or(0, MeshRouters::parameter_count);
        ParameterCounts {
            embedding,
            blocks,
            scalers,
            mesh_routers,
            total: embedding + blocks + scalers + mesh_routers,
        }
    }
}

/// Seeded N(0, 0.02²) weights, unit norm gains, zero biases.
pub fn init_weights(config: &ModelConfig, seed: u64) -> Result<Weights> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, heads) = (config.d_model, config.n_heads);
    let alloc = &config.allocation;
    let embedding = EmbeddingWeights::random(config.vocab, d, &mut rng);
    let pre = BlockWeights::random(alloc.n_pre, d, heads, &mut rng)?;
    let core = BlockWeights::random(alloc.n_loop, d, heads, &mut rng)?;
    let post = BlockWeights::random(alloc.n_post, d, heads, &mut rng)?;
    let scalers = config
        .chunks()
        .into_iter()
        .map(|g| ScalerParams::random(d, g, &mut rng))
        .collect();
    let mesh = match config.topology {
        Topology::Anchor => None,
        Topology::Mesh { slots } => Some(MeshRouters::random(d, slots, config.iterations(), &mut rng)),
    };
    Ok(Weights {
        embedding,
        pre,
        core,
        post,
        scalers,
        mesh,
    })
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub h_out: Matrix,
    /// `L_t` per iteration.
    pub loop_lengths: Vec<usize>,
    /// Core attention per iteration, `[t][layer][head]`; empty unless requested.
    pub captures: Vec<BlockCapture>,
}

/// Rotary positions fed to the core at iteration `t`.
pub(crate) fn core_position(map: &ChunkMap, chunk: usize, mode: RopePositions) -> usize {
    match mode {
        RopePositions::ChunkIndex => chunk,
        RopePositions::Token => map.members(chunk).end - 1,
    }
}

/// Chunk maps for every iteration at sequence length `len`.
pub fn chunk_maps(config: &ModelConfig, len: usize) -> Result<Vec<ChunkMap>> {
    (0..config.iterations())
        .map(|t| ChunkMap::for_iteration(t, len, config.chunk(t), config.offsets[t]))
        .collect()
}

/// Batched forward pass over `tokens`.
pub fn forward(tokens: &[usize], config: &ModelConfig, weights: &Weights, capture: bool) -> Result<ForwardOutput> {
    config.validate()?;
    let maps = chunk_maps(config, tokens.len())?;
    let precision = config.precision;
    let positions: Vec<usize> = (0..tokens.len()).collect();

    let mut x = weights.embedding.embed(tokens)?;
    precision.round(&mut x);
    let mut v = run_block(&x, &weights.pre, &positions, None)?;
    precision.round(&mut v);

    let (mut h, mut carrier) = match (&config.topology, &weights.mesh) {
        (Topology::Mesh { .. }, Some(routers)) => mesh_init(&x, &v, routers)?,
        _ => (v.clone(), TopologyCarrier::Anchor { h0: v }),
    };
    precision.round(&mut h);

    let mut captures = Vec::new();
    for (t, map) in maps.iter().enumerate() {
        let params = &weights.scalers[t];
        let mut z = downscale(&h, map, config.downscale, config.mean_divisor, params)?;
        precision.round(&mut z);
        let core_pos: Vec<usize> = (0..map.n_chunks())
            .map(|j| core_position(map, j, config.rope_positions))
            .collect();
        let mut cap = BlockCapture::new();
        let mut z_hat = run_block(&z, &weights.core, &core_pos, capture.then_some(&mut cap))?;
        precision.round(&mut z_hat);
        if capture {
            captures.push(cap);
        }
        let mut u = upscale(&z_hat, map, config.upscale, params)?;
        precision.round(&mut u);
        let u_tilde = right_shift(&u, config.shifts[t]);
        (h, carrier) = match (&carrier, &weights.mesh) {
            (TopologyCarrier::Mesh { .. }, Some(routers)) => mesh_update(&u_tilde, &h, &carrier, &routers.steps[t])?,
            _ => (anchor_update(&u_tilde, &carrier)?, carrier),
        };
        precision.round(&mut h);
    }

    let mut h_out = run_block(&h, &weights.post, &positions, None)?;
    precision.round(&mut h_out);
    Ok(ForwardOutput {
        h_out,
        loop_lengths: maps.iter().map(ChunkMap::n_chunks).collect(),
        captures,
    })
}

/// A config paired with its weights.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub weights: Weights,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let weights = init_weights(&config, seed)?;
        Ok(Self { config, weights })
    }

    pub fn forward(&self, tokens: &[usize], capture: bool) -> Result<ForwardOutput> {
        forward(tokens, &self.config, &self.weights, capture)
    }

    /// Greedy next token after `tokens`, computed with the batched pass.
    pub fn next_token(&self, tokens: &[usize]) -> Result<usize> {
        let out = self.forward(tokens, false)?;
        lm_head_and_sample(out.h_out.row(out.h_out.rows() - 1), &self.weights.embedding)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_allocation, Allocation};
    use crate::error::Error;

    fn cfg(alloc: &str) -> ModelConfig {
        ModelConfig::new(parse_allocation(alloc).unwrap()).with_dims(16, 2, 32)
    }

    fn tokens(n: usize) -> Vec<usize> {
        (0..n).map(|i| (i * 7 + 3) % 32).collect()
    }

    #[test]
    fn init_is_bit_identical_per_seed() {
        let c = cfg("1+1×{1/4,1}+1");
        assert_eq!(init_weights(&c, 7).unwrap(), init_weights(&c, 7).unwrap());
        assert_ne!(init_weights(&c, 7).unwrap(), init_weights(&c, 8).unwrap());
    }

    #[test]
    fn init_statistics() {
        let c = ModelConfig::new(parse_allocation("1+1×{1}+1").unwrap()).with_dims(8, 2, 1250);
        let w = init_weights(&c, 7).unwrap();
        let draws = w.embedding.input.data();
        assert_eq!(draws.len(), 10_000);
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!(mean.abs() < 0.01);
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!((var.sqrt() - 0.02).abs() < 0.001);
        assert!(w.pre.layers[0].mlp_norm.iter().all(|&g| g == 1.0));
    }

    #[test]
    fn mesh_router_overhead_is_reported() {
        let w = init_weights(&cfg("1+1×{1/4,1}+1"), 1).unwrap();
        let p = w.parameter_counts();
        // (transitional + 2 steps) × (write + read) × (16·4 + 4)
        assert_eq!(p.mesh_routers, 3 * 2 * (16 * 4 + 4));
        assert_eq!(p.total, p.embedding + p.blocks + p.scalers + p.mesh_routers);
    }

    #[test]
    fn capture_shapes_follow_loop_lengths() {
        let c = cfg("1+2×{1/8,1/4,1/2,1}+1");
        let w = init_weights(&c, 3).unwrap();
        let out = forward(&tokens(37), &c, &w, true).unwrap();
        assert_eq!(out.loop_lengths, vec![4, 9, 18, 37]);
        for (t, cap) in out.captures.iter().enumerate() {
            assert_eq!(cap.len(), 2);
            for head in &cap[0] {
                assert_eq!(head.shape(), (out.loop_lengths[t], out.loop_lengths[t]));
            }
        }
        assert_eq!(out.h_out.shape(), (37, 16));
        assert!(out.h_out.is_finite());
    }

    #[test]
    fn short_sequence_names_iteration() {
        let c = cfg("1+1×{1,1/8}+1");
        let w = init_weights(&c, 3).unwrap();
        let err = forward(&tokens(5), &c, &w, false).unwrap_err();
        assert_eq!(
            err,
            Error::EmptySchedule {
                iteration: 1,
                len: 5,
                chunk: 8
            }
        );
    }

    #[test]
    fn empty_schedule_is_pre_then_post() {
        let mut c = cfg("1+1×{1}+1");
        c.allocation = Allocation {
            n_pre: 2,
            n_loop: 1,
            schedule: vec![],
            n_post: 2,
        };
        c.offsets.clear();
        c.shifts.clear();
        c.topology = Topology::Anchor;
        let w = init_weights(&c, 5).unwrap();
        let toks = tokens(9);
        let pos: Vec<usize> = (0..9).collect();
        let x = w.embedding.embed(&toks).unwrap();
        let expect = run_block(&run_block(&x, &w.pre, &pos, None).unwrap(), &w.post, &pos, None).unwrap();
        assert_eq!(forward(&toks, &c, &w, false).unwrap().h_out, expect);
    }

    #[test]
    fn forward_is_deterministic_for_both_topologies() {
        for topo in [Topology::Anchor, Topology::Mesh { slots: 3 }] {
            let c = cfg("1+1×{1/4,1/2,1}+1").with_topology(topo);
            let m = Model::new(c, 9).unwrap();
            let a = m.forward(&tokens(20), false).unwrap().h_out;
            assert_eq!(a, m.forward(&tokens(20), false).unwrap().h_out);
            assert_eq!(a.shape(), (20, 16));
        }
    }
}
