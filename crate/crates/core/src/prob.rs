//! Finite-alphabet observation distributions and log-likelihood arithmetic.
//!
//! Everything downstream works in the log domain: probabilities are never
//! multiplied directly, so long trials at small observation costs cannot
//! underflow.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability floor applied by model generators and enforced by
/// [`ObservationModel`]: every model entry lies in `[PROB_FLOOR, 1]`, which
/// keeps every pairwise KL divergence finite.
pub const PROB_FLOOR: f64 = 1e-6;

/// Tolerance for "sums to one" checks on probability vectors.
const SIMPLEX_TOL: f64 = 1e-12;

/// A categorical distribution over a finite alphabet of size >= 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    /// Validates and wraps a probability vector: entries non-negative and
    /// summing to one within 1e-12, alphabet size at least two.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidDistribution {
                reason: format!("alphabet size {} < 2", probs.len()),
            });
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution {
                reason: format!("entry {p} is negative or non-finite"),
            });
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidDistribution {
                reason: format!("entries sum to {sum}, not 1"),
            });
        }
        Ok(Self { probs })
    }

    /// Two-symbol distribution with `P(1) = p`, `P(0) = 1 - p`.
    pub fn bernoulli(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidDistribution {
                reason: format!("bernoulli parameter {p} outside [0, 1]"),
            });
        }
        Ok(Self {
            probs: vec![1.0 - p, p],
        })
    }

    pub fn alphabet_size(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, a: usize) -> f64 {
        self.probs[a]
    }

    /// Draws an alphabet index. Deterministic given the stream state.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(&self.probs, rng)
    }
}

/// Inverse-CDF draw from an unnormalized-but-near-simplex weight slice.
pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    probs.len() - 1
}

/// KL divergence D(p || q) in nats over a shared finite alphabet.
///
/// Terms with `p(a) = 0` contribute zero. `q(a) = 0` where `p(a) > 0` is an
/// [`Error::InfiniteDivergence`]; model construction rules that case out via
/// [`PROB_FLOOR`].
pub fn kl_divergence(p: &Categorical, q: &Categorical) -> Result<f64> {
    if p.alphabet_size() != q.alphabet_size() {
        return Err(Error::DimensionMismatch {
            expected: p.alphabet_size(),
            got: q.alphabet_size(),
        });
    }
    let mut sum = 0.0;
    for (a, (&pa, &qa)) in p.probs.iter().zip(q.probs.iter()).enumerate() {
        if pa > 0.0 {
            if qa <= 0.0 {
                return Err(Error::InfiniteDivergence { index: a });
            }
            sum += pa * (pa / qa).ln();
        }
    }
    Ok(sum.max(0.0))
}

/// The full observation model: one categorical distribution per
/// (hypothesis, sensor, action) triple, all over a shared alphabet.
///
/// Standard models have exactly `hypotheses` actions; the fusion-center
/// expansion uses `hypotheses * sensors` actions on a single super-sensor
/// (see [`crate::engine::build_fct_model`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    hypotheses: usize,
    sensors: usize,
    actions: usize,
    alphabet: usize,
    /// Index: `(hyp * sensors + sensor) * actions + action`.
    dists: Vec<Categorical>,
    /// ln of each probability entry, same layout with the alphabet unrolled.
    logs: Vec<f64>,
}

impl ObservationModel {
    /// Standard model with action-set cardinality equal to the hypothesis
    /// count. `dists` is indexed `(hyp * sensors + sensor) * hypotheses + action`.
    pub fn new(hypotheses: usize, sensors: usize, dists: Vec<Categorical>) -> Result<Self> {
        Self::from_parts(hypotheses, sensors, hypotheses, dists)
    }

    /// General constructor allowing `actions != hypotheses` (the fusion-center
    /// expansion needs `hypotheses * sensors` actions).
    pub fn from_parts(
        hypotheses: usize,
        sensors: usize,
        actions: usize,
        dists: Vec<Categorical>,
    ) -> Result<Self> {
        if hypotheses < 2 {
            return Err(Error::InvalidDistribution {
                reason: format!("need at least 2 hypotheses, got {hypotheses}"),
            });
        }
        if sensors == 0 || actions == 0 {
            return Err(Error::InvalidDistribution {
                reason: "need at least one sensor and one action".into(),
            });
        }
        let expected = hypotheses * sensors * actions;
        if dists.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: dists.len(),
            });
        }
        let alphabet = dists[0].alphabet_size();
        for d in &dists {
            if d.alphabet_size() != alphabet {
                return Err(Error::DimensionMismatch {
                    expected: alphabet,
                    got: d.alphabet_size(),
                });
            }
            // Floor keeps every pairwise divergence finite.
            if let Some(p) = d.probs().iter().find(|p| **p < PROB_FLOOR * (1.0 - 1e-9)) {
                return Err(Error::InvalidDistribution {
                    reason: format!("model entry {p} below probability floor {PROB_FLOOR}"),
                });
            }
        }
        let logs = dists
            .iter()
            .flat_map(|d| d.probs().iter().map(|p| p.ln()))
            .collect();
        Ok(Self {
            hypotheses,
            sensors,
            actions,
            alphabet,
            dists,
            logs,
        })
    }

    /// Builds a model by evaluating `f(hypothesis, sensor, action)`.
    pub fn from_fn(
        hypotheses: usize,
        sensors: usize,
        actions: usize,
        mut f: impl FnMut(usize, usize, usize) -> Categorical,
    ) -> Result<Self> {
        let mut dists = Vec::with_capacity(hypotheses * sensors * actions);
        for hyp in 0..hypotheses {
            for sensor in 0..sensors {
                for action in 0..actions {
                    dists.push(f(hyp, sensor, action));
                }
            }
        }
        Self::from_parts(hypotheses, sensors, actions, dists)
    }

    pub fn hypotheses(&self) -> usize {
        self.hypotheses
    }

    pub fn sensors(&self) -> usize {
        self.sensors
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet
    }

    /// Distribution of the observation at `sensor` under `hyp` when probing
    /// with `action`. Panics on out-of-range indices.
    pub fn dist(&self, hyp: usize, sensor: usize, action: usize) -> &Categorical {
        assert!(hyp < self.hypotheses, "hypothesis {hyp} out of range");
        assert!(sensor < self.sensors, "sensor {sensor} out of range");
        assert!(action < self.actions, "action {action} out of range");
        &self.dists[(hyp * self.sensors + sensor) * self.actions + action]
    }

    /// ln p(obs) for every hypothesis at a fixed (sensor, action, obs).
    /// Used additively to maintain cumulative log-likelihoods.
    /// Panics on out-of-range indices.
    pub fn log_likelihoods(&self, sensor: usize, action: usize, obs: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.hypotheses];
        self.accumulate_log_likelihoods(sensor, action, obs, &mut out);
        out
    }

    /// Adds ln p(obs) per hypothesis into `acc` without allocating.
    pub fn accumulate_log_likelihoods(
        &self,
        sensor: usize,
        action: usize,
        obs: usize,
        acc: &mut [f64],
    ) {
        assert!(sensor < self.sensors, "sensor {sensor} out of range");
        assert!(action < self.actions, "action {action} out of range");
        assert!(obs < self.alphabet, "observation {obs} out of range");
        assert_eq!(acc.len(), self.hypotheses);
        for (hyp, slot) in acc.iter_mut().enumerate() {
            let base = ((hyp * self.sensors + sensor) * self.actions + action) * self.alphabet;
            *slot += self.logs[base + obs];
        }
    }

    /// Checks the separability assumption: for every sensor and every ordered
    /// hypothesis pair there is an action with strictly positive divergence.
    pub fn check_separability(&self) -> Result<()> {
        for sensor in 0..self.sensors {
            for a in 0..self.hypotheses {
                for b in 0..self.hypotheses {
                    if a == b {
                        continue;
                    }
                    let separated = (0..self.actions).any(|k| {
                        kl_divergence(self.dist(a, sensor, k), self.dist(b, sensor, k))
                            .map(|d| d > 1e-12)
                            .unwrap_or(true)
                    });
                    if !separated {
                        return Err(Error::Indistinguishable {
                            sensor,
                            hyp_a: a,
                            hyp_b: b,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}
