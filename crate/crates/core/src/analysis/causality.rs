//! Empirical causality check by token replacement.
//!
//! A trial draws a random sequence, runs the batched pass, replaces the token
//! at one position `j` and runs it again. Any difference in an output row
//! `i < j` is a leak from the future.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::engine::{forward, Weights};
use crate::error::{Error, Result};

/// Shift assignment used to exercise the three causality regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftRegime {
    /// `s = g − 1` everywhere: one token of overlap, still causal.
    SingleOverlap,
    /// `s = g` everywhere: each chunk reads only earlier chunks.
    NoOverlap,
    /// `s = g − 2` at one iteration, `g − 1` elsewhere.
    Leaky { iteration: usize },
}

impl ShiftRegime {
    pub fn shifts(self, config: &ModelConfig) -> Result<Vec<usize>> {
        let chunks = config.chunks();
        match self {
            ShiftRegime::SingleOverlap => Ok(chunks.iter().map(|g| g - 1).collect()),
            ShiftRegime::NoOverlap => Ok(chunks.clone()),
            ShiftRegime::Leaky { iteration } => {
                let g = *chunks
                    .get(iteration)
                    .ok_or_else(|| Error::Config(format!("no iteration {iteration}")))?;
                if g < 2 {
                    return Err(Error::Config(format!(
                        "iteration {iteration} has g = {g}; nothing can leak"
                    )));
                }
                let mut s: Vec<usize> = chunks.iter().map(|g| g - 1).collect();
                s[iteration] = g - 2;
                Ok(s)
            }
        }
    }

    pub fn apply(self, config: &ModelConfig) -> Result<ModelConfig> {
        Ok(config.clone().with_shifts(self.shifts(config)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CausalityOptions {
    pub len: usize,
    pub trials: usize,
    pub seed: u64,
    pub threads: usize,
    /// End the report at the first violating trial.
    pub stop_at_first: bool,
}

impl Default for CausalityOptions {
    fn default() -> Self {
        Self {
            len: 64,
            trials: 16,
            seed: 0,
            threads: 0,
            stop_at_first: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub trial: usize,
    /// Perturbed position.
    pub perturbed: usize,
    /// Earliest earlier row that changed.
    pub affected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalityReport {
    pub shifts: Vec<usize>,
    /// Iterations whose shift is below `g − 1`.
    pub suspect_iterations: Vec<usize>,
    /// Trials actually run.
    pub trials: usize,
    pub violations: usize,
    pub first_violation: Option<Violation>,
    pub max_leak: f64,
    pub threshold: f64,
}

impl CausalityReport {
    pub fn is_causal(&self) -> bool {
        self.violations == 0
    }
}

struct TrialOutcome {
    leak: f64,
    affected: Option<usize>,
    perturbed: usize,
}

/// Runs `trials` replacement trials. Perturbed positions walk a seeded
/// permutation of `1..len`, so `len − 1` trials visit every position once.
pub fn probe_causality(config: &ModelConfig, weights: &Weights, options: CausalityOptions) -> Result<CausalityReport> {
    if options.trials == 0 {
        return Err(Error::Analysis("at least one trial is required".into()));
    }
    if options.len < 2 {
        return Err(Error::Analysis("sequences need at least two tokens".into()));
    }
    config.validate()?;
    let threshold = config.precision.leak_threshold();
    let vocab = config.vocab;

    let mut order: Vec<usize> = (1..options.len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(options.seed));

    let run_trial = |trial: usize| -> Result<TrialOutcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ (trial as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let tokens: Vec<usize> = (0..options.len).map(|_| rng.random_range(0..vocab)).collect();
        let j = order[trial % order.len()];
        let mut perturbed = tokens.clone();
        perturbed[j] = (tokens[j] + rng.random_range(1..vocab.max(2))) % vocab;

        let base = forward(&tokens, config, weights, false)?.h_out;
        let other = forward(&perturbed, config, weights, false)?.h_out;
        let mut leak = 0.0_f64;
        let mut affected = None;
        for i in 0..j {
            let row_leak = base
                .row(i)
                .iter()
                .zip(other.row(i))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if row_leak > threshold && affected.is_none() {
                affected = Some(i);
            }
            leak = leak.max(row_leak);
        }
        Ok(TrialOutcome {
            leak,
            affected,
            perturbed: j,
        })
    };
    let outcomes: Vec<Result<TrialOutcome>> = if options.stop_at_first && options.threads == 0 {
        let mut done = Vec::new();
        for trial in 0..options.trials {
            let outcome = run_trial(trial);
            let stop = matches!(&outcome, Ok(o) if o.affected.is_some()) || outcome.is_err();
            done.push(outcome);
            if stop {
                break;
            }
        }
        done
    } else {
        super::run_indexed(options.trials, options.threads, run_trial)
    };

    let mut report = CausalityReport {
        shifts: config.shifts.clone(),
        suspect_iterations: config.noncausal_iterations(),
        trials: options.trials,
        violations: 0,
        first_violation: None,
        max_leak: 0.0,
        threshold,
    };
    let mut ran = 0;
    for (trial, outcome) in outcomes.into_iter().enumerate() {
        let outcome = outcome?;
        ran += 1;
        report.max_leak = report.max_leak.max(outcome.leak);
        if let Some(affected) = outcome.affected {
            report.violations += 1;
            report.first_violation.get_or_insert(Violation {
                trial,
                perturbed: outcome.perturbed,
                affected,
            });
            if options.stop_at_first {
                break;
            }
        }
    }
    report.trials = ran;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_allocation;
    use crate::engine::init_weights;
    use crate::topology::Topology;

    fn config(alloc: &str) -> ModelConfig {
        ModelConfig::new(parse_allocation(alloc).unwrap())
            .with_dims(16, 2, 32)
            .with_topology(Topology::Anchor)
    }

    fn probe(cfg: &ModelConfig, trials: usize) -> CausalityReport {
        let w = init_weights(cfg, 1).unwrap();
        let opts = CausalityOptions {
            len: 24,
            trials,
            seed: 3,
            threads: 0,
            stop_at_first: false,
        };
        probe_causality(cfg, &w, opts).unwrap()
    }

    #[test]
    fn regimes_set_expected_shifts() {
        let cfg = config("1+1×{1/4,1/2,1}+1");
        assert_eq!(ShiftRegime::SingleOverlap.shifts(&cfg).unwrap(), vec![3, 1, 0]);
        assert_eq!(ShiftRegime::NoOverlap.shifts(&cfg).unwrap(), vec![4, 2, 1]);
        assert_eq!(ShiftRegime::Leaky { iteration: 1 }.shifts(&cfg).unwrap(), vec![3, 0, 0]);
        assert!(ShiftRegime::Leaky { iteration: 2 }.shifts(&cfg).is_err());
    }

    #[test]
    fn causal_regimes_leak_nothing() {
        let cfg = config("1+1×{1/4,1}+1");
        for regime in [ShiftRegime::SingleOverlap, ShiftRegime::NoOverlap] {
            let r = probe(&regime.apply(&cfg).unwrap(), 23);
            assert!(r.is_causal());
            assert_eq!(r.max_leak, 0.0);
            assert!(r.first_violation.is_none());
        }
    }

    #[test]
    fn leaky_shift_is_caught_at_a_chunk_end() {
        let cfg = ShiftRegime::Leaky { iteration: 0 }
            .apply(&config("1+1×{1/4,1}+1"))
            .unwrap();
        let r = probe(&cfg, 23);
        assert!(!r.is_causal());
        assert!(r.max_leak > 0.0);
        assert_eq!(r.suspect_iterations, vec![0]);
        let v = r.first_violation.unwrap();
        // only the last member of a chunk reaches back, and only by one row
        assert_eq!((v.perturbed + cfg.offsets[0]) % 4, 3);
        assert_eq!(v.affected, v.perturbed - 1);
    }

    #[test]
    fn thread_count_does_not_change_report() {
        let cfg = ShiftRegime::Leaky { iteration: 0 }
            .apply(&config("1+1×{1/4}+1"))
            .unwrap();
        let w = init_weights(&cfg, 1).unwrap();
        let mut opts = CausalityOptions {
            len: 16,
            trials: 15,
            seed: 5,
            threads: 0,
            stop_at_first: false,
        };
        for stop in [false, true] {
            opts.stop_at_first = stop;
            opts.threads = 0;
            let a = probe_causality(&cfg, &w, opts).unwrap();
            opts.threads = 3;
            assert_eq!(a, probe_causality(&cfg, &w, opts).unwrap());
            assert_eq!(a.violations == 1, stop);
        }
    }

    #[test]
    fn zero_trials_rejected() {
        let cfg = config("1+1×{1}+1");
        let w = init_weights(&cfg, 1).unwrap();
        let opts = CausalityOptions {
            trials: 0,
            ..CausalityOptions::default()
        };
        assert!(probe_causality(&cfg, &w, opts).is_err());
    }
}
