//! Model configuration: dimensions, layer allocation, resolution schedule,
//! per-iteration offsets and shifts, and operator choices.
//!
//! Layer allocations use the notation `P+C×{r0,...,rT-1}+Q`: `P` pre-loop
//! layers, a `C`-layer shared core run once per listed resolution, and `Q`
//! post-loop layers. `x` may replace `×`, and resolutions may be written as
//! fractions (`1/8`) or decimals (`0.125`).
//!
//! Config files are flat UTF-8 `key = value` lines (`#` starts a comment)
//! whose keys are the [`ModelConfig`] field names; see
//! [`ModelConfig::from_text`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resolution::{DownscaleMode, MeanDivisor, UpscaleMode};
use crate::tensor::Precision;
use crate::topology::Topology;

/// One entry of the resolution schedule: the ratio `r` and its chunk size
/// `g = ⌊1/r⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub ratio: f64,
    pub chunk: usize,
}

impl Resolution {
    /// Resolution `1/g`.
    pub fn reciprocal(chunk: usize) -> Self {
        assert!(chunk >= 1);
        Self {
            ratio: 1.0 / chunk as f64,
            chunk,
        }
    }

    pub fn from_ratio(ratio: f64) -> Result<Self> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::Resolution(ratio));
        }
        // tolerate decimal round-off such as 1/0.1 = 9.999…
        let chunk = (1.0 / ratio + 1e-9).floor() as usize;
        Ok(Self { ratio, chunk })
    }
}

impl FromStr for Resolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("cannot parse resolution {s:?}"));
        if let Some((num, den)) = s.split_once('/') {
            let num: usize = num.trim().parse().map_err(|_| bad())?;
            let den: usize = den.trim().parse().map_err(|_| bad())?;
            if num == 0 || den == 0 || num > den {
                return Err(Error::Resolution(num as f64 / den.max(1) as f64));
            }
            Ok(Self {
                ratio: num as f64 / den as f64,
                chunk: den / num,
            })
        } else {
            Self::from_ratio(s.parse().map_err(|_| bad())?)
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if (self.ratio - 1.0 / self.chunk as f64).abs() < 1e-15 {
            if self.chunk == 1 {
                write!(f, "1")
            } else {
                write!(f, "1/{}", self.chunk)
            }
        } else {
            write!(f, "{}", self.ratio)
        }
    }
}

/// Coarse-to-fine schedule `r_t = 2·r_{t−1}` starting at `1/start_chunk`.
pub fn coarse_to_fine(start_chunk: usize, iterations: usize) -> Result<Vec<Resolution>> {
    (0..iterations)
        .map(|t| {
            let div = 1usize << t;
            if !start_chunk.is_multiple_of(div) {
                return Err(Error::Resolution(div as f64 / start_chunk as f64));
            }
            Ok(Resolution::reciprocal(start_chunk / div))
        })
        .collect()
}

/// Layer allocation `P+C×{r…}+Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub n_pre: usize,
    pub n_loop: usize,
    pub schedule: Vec<Resolution>,
    pub n_post: usize,
}

impl Allocation {
    /// A non-looped stack of `layers` layers.
    pub fn baseline(layers: usize) -> Self {
        Self {
            n_pre: layers,
            n_loop: 0,
            schedule: Vec::new(),
            n_post: 0,
        }
    }

    pub fn iterations(&self) -> usize {
        self.schedule.len()
    }

    /// Distinct parameterized layers.
    pub fn unique_layers(&self) -> usize {
        self.n_pre + self.n_loop + self.n_post
    }
}

/// Parses `P+C×{r0,...,rT-1}+Q`.
pub fn parse_allocation(text: &str) -> Result<Allocation> {
    let err = |reason: &str| Error::Allocation {
        text: text.to_string(),
        reason: reason.to_string(),
    };
    let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let open = compact.find('{').ok_or_else(|| err("missing '{'"))?;
    let close = compact.rfind('}').ok_or_else(|| err("missing '}'"))?;
    if close < open {
        return Err(err("braces out of order"));
    }
    let head = &compact[..open];
    let body = &compact[open + 1..close];
    let tail = &compact[close + 1..];

    let head = head
        .strip_suffix('×')
        .or_else(|| head.strip_suffix('x'))
        .or_else(|| head.strip_suffix('X'))
        .ok_or_else(|| err("expected '×' or 'x' before the schedule"))?;
    let (pre, core) = head
        .split_once('+')
        .ok_or_else(|| err("expected 'P+C' before the schedule"))?;
    let post = tail
        .strip_prefix('+')
        .ok_or_else(|| err("expected '+Q' after the schedule"))?;
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| err(&format!("bad {what} count {s:?}")));

    if body.is_empty() {
        return Err(err("empty schedule"));
    }
    let schedule = body
        .split(',')
        .map(|r| r.parse::<Resolution>())
        .collect::<Result<Vec<_>>>()?;
    Ok(Allocation {
        n_pre: num(pre, "pre-loop")?,
        n_loop: num(core, "core")?,
        schedule,
        n_post: num(post, "post-loop")?,
    })
}

impl fmt::Display for Allocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.schedule.is_empty() {
            return write!(f, "{} layers", self.n_pre + self.n_post);
        }
        let rs: Vec<String> = self.schedule.iter().map(|r| r.to_string()).collect();
        write!(f, "{}+{}x{{{}}}+{}", self.n_pre, self.n_loop, rs.join(","), self.n_post)
    }
}

/// Which positions the loop core's rotary embedding sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RopePositions {
    /// Chunk indices `0..L_t`.
    #[default]
    ChunkIndex,
    /// Original position of each chunk's last member.
    Token,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub vocab: usize,
    pub train_len: usize,
    pub allocation: Allocation,
    /// Chunk offsets `ω_t`.
    pub offsets: Vec<usize>,
    /// Right-shift sizes `s_t`.
    pub shifts: Vec<usize>,
    pub topology: Topology,
    pub downscale: DownscaleMode,
    pub upscale: UpscaleMode,
    pub mean_divisor: MeanDivisor,
    pub rope_positions: RopePositions,
    pub precision: Precision,
}

impl ModelConfig {
    /// Desk-scale defaults (d=64, 4 heads, 256-token vocabulary) with
    /// half-chunk offsets and single-token-overlap shifts.
    pub fn new(allocation: Allocation) -> Self {
        let offsets = allocation.schedule.iter().map(|r| r.chunk / 2).collect();
        let shifts = allocation.schedule.iter().map(|r| r.chunk - 1).collect();
        Self {
            d_model: 64,
            n_heads: 4,
            vocab: 256,
            train_len: 256,
            allocation,
            offsets,
            shifts,
            topology: Topology::default(),
            downscale: DownscaleMode::default(),
            upscale: UpscaleMode::default(),
            mean_divisor: MeanDivisor::default(),
            rope_positions: RopePositions::default(),
            precision: Precision::default(),
        }
    }

    pub fn with_dims(mut self, d_model: usize, n_heads: usize, vocab: usize) -> Self {
        self.d_model = d_model;
        self.n_heads = n_heads;
        self.vocab = vocab;
        self
    }

    pub fn with_topology(mut self, topology: Topology) -> Self {
        self.topology = topology;
        self
    }

    pub fn with_scaling(mut self, down: DownscaleMode, up: UpscaleMode) -> Self {
        self.downscale = down;
        self.upscale = up;
        self
    }

    pub fn with_offsets(mut self, offsets: Vec<usize>) -> Self {
        self.offsets = offsets;
        self
    }

    pub fn with_shifts(mut self, shifts: Vec<usize>) -> Self {
        self.shifts = shifts;
        self
    }

    pub fn with_zero_offsets(self) -> Self {
        let n = self.iterations();
        self.with_offsets(vec![0; n])
    }

    pub fn iterations(&self) -> usize {
        self.allocation.schedule.len()
    }

    pub fn chunk(&self, t: usize) -> usize {
        self.allocation.schedule[t].chunk
    }

    pub fn chunks(&self) -> Vec<usize> {
        self.allocation.schedule.iter().map(|r| r.chunk).collect()
    }

    pub fn max_chunk(&self) -> usize {
        self.chunks().into_iter().max().unwrap_or(1)
    }

    /// Iterations whose shift is below `g − 1`.
    pub fn noncausal_iterations(&self) -> Vec<usize> {
        (0..self.iterations())
            .filter(|&t| self.shifts[t] + 1 < self.chunk(t))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.iterations();
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::HeadSplit {
                d_model: self.d_model,
                heads: self.n_heads,
            });
        }
        if !(self.d_model / self.n_heads).is_multiple_of(2) {
            return Err(Error::OddHeadDim(self.d_model / self.n_heads));
        }
        if self.vocab == 0 {
            return Err(Error::Config("vocab must be positive".into()));
        }
        if self.offsets.len() != t || self.shifts.len() != t {
            return Err(Error::Config(format!(
                "schedule has {t} iterations but {} offsets and {} shifts",
                self.offsets.len(),
                self.shifts.len()
            )));
        }
        for (i, r) in self.allocation.schedule.iter().enumerate() {
            if !(r.ratio > 0.0 && r.ratio <= 1.0) || r.chunk == 0 {
                return Err(Error::Resolution(r.ratio));
            }
            if self.offsets[i] >= r.chunk {
                return Err(Error::OffsetOutOfRange {
                    omega: self.offsets[i],
                    chunk: r.chunk,
                });
            }
        }
        if let Topology::Mesh { slots: 0 } = self.topology {
            return Err(Error::Config("mesh_slots must be at least 1".into()));
        }
        Ok(())
    }

    /// Parses the flat `key = value` format.
    ///
    /// `allocation` is required. `offsets` and `shifts` are comma-separated
    /// per-iteration lists and default to `⌊g/2⌋` and `g − 1`.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let alloc_text = pairs
            .iter()
            .find(|(k, _)| k == "allocation")
            .map(|(_, v)| v.clone())
            .ok_or_else(|| Error::Config("missing key 'allocation'".into()))?;
        let mut cfg = ModelConfig::new(parse_allocation(&alloc_text)?);
        let mut slots = None;
        let mut mesh = matches!(cfg.topology, Topology::Mesh { .. });

        let int = |k: &str, v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::Config(format!("{k}: expected an integer, got {v:?}")))
        };
        let list = |k: &str, v: &str| -> Result<Vec<usize>> {
            v.split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| int(k, s.trim()))
                .collect()
        };
        for (k, v) in &pairs {
            let v = v.as_str();
            match k.as_str() {
                "allocation" => {}
                "d_model" => cfg.d_model = int(k, v)?,
                "n_heads" => cfg.n_heads = int(k, v)?,
                "vocab" => cfg.vocab = int(k, v)?,
                "train_len" => cfg.train_len = int(k, v)?,
                "offsets" => cfg.offsets = list(k, v)?,
                "shifts" => cfg.shifts = list(k, v)?,
                "mesh_slots" => slots = Some(int(k, v)?),
                "topology" => {
                    mesh = match v {
                        "anchor" => false,
                        "mesh" => true,
                        _ => return Err(Error::Config(format!("topology: unknown {v:?}"))),
                    }
                }
                "downscale" => {
                    cfg.downscale = match v {
                        "mean" => DownscaleMode::Mean,
                        "self_agg" => DownscaleMode::SelfAgg,
                        _ => return Err(Error::Config(format!("downscale: unknown {v:?}"))),
                    }
                }
                "upscale" => {
                    cfg.upscale = match v {
                        "uniform" => UpscaleMode::Uniform,
                        "routed" => UpscaleMode::Routed,
                        _ => return Err(Error::Config(format!("upscale: unknown {v:?}"))),
                    }
                }
                "mean_divisor" => {
                    cfg.mean_divisor = match v {
                        "members" => MeanDivisor::Members,
                        "chunk_size" => MeanDivisor::ChunkSize,
                        _ => return Err(Error::Config(format!("mean_divisor: unknown {v:?}"))),
                    }
                }
                "rope_positions" => {
                    cfg.rope_positions = match v {
                        "chunk_index" => RopePositions::ChunkIndex,
                        "token" => RopePositions::Token,
                        _ => return Err(Error::Config(format!("rope_positions: unknown {v:?}"))),
                    }
                }
                "precision" => cfg.precision = v.parse()?,
                other => return Err(Error::Config(format!("unknown key {other:?}"))),
            }
        }
        cfg.topology = if mesh {
            Topology::Mesh {
                slots: slots.unwrap_or(4),
            }
        } else {
            Topology::Anchor
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders the config in the format read by [`ModelConfig::from_text`].
    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut out = format!(
            "allocation = {}\nd_model = {}\nn_heads = {}\nvocab = {}\ntrain_len = {}\noffsets = {}\nshifts = {}\n",
            self.allocation,
            self.d_model,
            self.n_heads,
            self.vocab,
            self.train_len,
            join(&self.offsets),
            join(&self.shifts)
        );
        match self.topology {
            Topology::Anchor => out.push_str("topology = anchor\n"),
            Topology::Mesh { slots } => out.push_str(&format!("topology = mesh\nmesh_slots = {slots}\n")),
        }
        let down = match self.downscale {
            DownscaleMode::Mean => "mean",
            DownscaleMode::SelfAgg => "self_agg",
        };
        let up = match self.upscale {
            UpscaleMode::Uniform => "uniform",
            UpscaleMode::Routed => "routed",
        };
        let div = match self.mean_divisor {
            MeanDivisor::Members => "members",
            MeanDivisor::ChunkSize => "chunk_size",
        };
        let rope = match self.rope_positions {
            RopePositions::ChunkIndex => "chunk_index",
            RopePositions::Token => "token",
        };
        let precision = match self.precision {
            Precision::Single => "single",
            Precision::Double => "double",
        };
        out.push_str(&format!(
            "downscale = {down}\nupscale = {up}\nmean_divisor = {div}\nrope_positions = {rope}\nprecision = {precision}\n"
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunks(a: &Allocation) -> Vec<usize> {
        a.schedule.iter().map(|r| r.chunk).collect()
    }

    #[test]
    fn parses_published_allocations() {
        let a = parse_allocation("4+8×{1/8,1/4,1/2,1}+4").unwrap();
        assert_eq!((a.n_pre, a.n_loop, a.n_post), (4, 8, 4));
        assert_eq!(chunks(&a), vec![8, 4, 2, 1]);
        assert_eq!(a.schedule[0].ratio, 0.125);

        let a = parse_allocation("2+4×{1,1}+2").unwrap();
        assert_eq!((a.n_pre, a.n_loop, a.n_post, a.iterations()), (2, 4, 2, 2));
        assert_eq!(chunks(&a), vec![1, 1]);

        let a = parse_allocation("3+5×{1/8,1/4,1/2,1}+3").unwrap();
        assert_eq!((a.n_pre, a.n_loop, a.n_post, a.iterations()), (3, 5, 3, 4));
    }

    #[test]
    fn accepts_ascii_and_decimals() {
        let a = parse_allocation(" 2 + 4 x { 0.125, 0.25 , 0.5,1 } + 2").unwrap();
        assert_eq!(chunks(&a), vec![8, 4, 2, 1]);
        let b = parse_allocation("1+1x{0.1}+1").unwrap();
        assert_eq!(chunks(&b), vec![10]);
        let c = parse_allocation("1+1x{1/3}+1").unwrap();
        assert_eq!(chunks(&c), vec![3]);
    }

    #[test]
    fn rejects_malformed() {
        for bad in [
            "",
            "4+8{1}+4",
            "4+8×{}+4",
            "4+8×{1/8}",
            "a+8×{1}+4",
            "4×{1}+4",
            "4+8×{2}+4",
            "4+8×{0}+4",
            "4+8×{3/2}+4",
            "4+8×{-1}+4",
        ] {
            assert!(parse_allocation(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn display_round_trips() {
        let a = parse_allocation("4+8×{1/8,1/4,1/2,1}+4").unwrap();
        assert_eq!(parse_allocation(&a.to_string()).unwrap(), a);
    }

    #[test]
    fn defaults_follow_chunk_sizes() {
        let cfg = ModelConfig::new(parse_allocation("1+1×{1/8,1/4,1/2,1}+1").unwrap());
        assert_eq!(cfg.offsets, vec![4, 2, 1, 0]);
        assert_eq!(cfg.shifts, vec![7, 3, 1, 0]);
        assert_eq!(cfg.topology, Topology::Mesh { slots: 4 });
        assert!(cfg.noncausal_iterations().is_empty());
        assert!(cfg.clone().with_shifts(vec![6, 1, 1, 0]).noncausal_iterations() == vec![0, 1]);
    }

    #[test]
    fn coarse_to_fine_doubles() {
        let s = coarse_to_fine(16, 4).unwrap();
        assert_eq!(s.iter().map(|r| r.chunk).collect::<Vec<_>>(), vec![16, 8, 4, 2]);
        for w in s.windows(2) {
            assert_eq!(w[1].ratio, 2.0 * w[0].ratio);
        }
        assert!(coarse_to_fine(4, 4).is_err());
    }

    #[test]
    fn config_text_round_trips() {
        let text = "\
# desk config
allocation = 2+2x{1/8,1/4,1/2,1}+2
d_model = 32
n_heads = 4
topology = anchor
downscale = mean
upscale = uniform
shifts = 8,4,2,1
precision = single
";
        let cfg = ModelConfig::from_text(text).unwrap();
        assert_eq!(cfg.d_model, 32);
        assert_eq!(cfg.topology, Topology::Anchor);
        assert_eq!(cfg.shifts, vec![8, 4, 2, 1]);
        assert_eq!(cfg.offsets, vec![4, 2, 1, 0]);
        assert_eq!(cfg.precision, Precision::Single);
        assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn config_errors() {
        assert!(ModelConfig::from_text("d_model = 8").is_err());
        assert!(ModelConfig::from_text("allocation = 1+1x{1}+1\nbogus = 1").is_err());
        assert!(ModelConfig::from_text("allocation = 1+1x{1/4}+1\noffsets = 4").is_err());
        assert!(ModelConfig::from_text("allocation = 1+1x{1}+1\nshifts = 0,0").is_err());
        assert!(ModelConfig::from_text("allocation = 1+1x{1}+1\nd_model = 12\nn_heads = 4").is_err());
    }
}
