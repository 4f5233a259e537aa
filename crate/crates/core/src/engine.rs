//! The single-sensor adaptive test engine shared by every protocol.
//!
//! Each step the sensor draws a probing action from the maximin distribution
//! of its current leader, samples an observation, and accumulates per-
//! hypothesis log-likelihoods. With a uniform prior, the maximum-posterior
//! temporary decision is the cumulative log-likelihood argmax, and the
//! worst-case log-likelihood ratio is the leader's margin over the runner-up.

use rand::Rng;

use crate::error::{Error, Result};
use crate::maximin::PolicyTable;
use crate::prob::{sample_index, ObservationModel};

/// Steps after which a test run is abandoned as mis-specified.
pub const DEFAULT_STEP_CAP: u64 = 10_000_000;

/// Per-sensor running state of the adaptive test.
#[derive(Debug, Clone)]
pub struct SensorTestState {
    sensor: usize,
    cum_llh: Vec<f64>,
    n: u64,
    temp_decision: usize,
}

/// The stopping statistic: leader and its margin over the best alternative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorstCaseLlr {
    pub leader: usize,
    /// `cum_llh[leader] - max_{j != leader} cum_llh[j]`, in nats; >= 0.
    pub margin: f64,
}

impl SensorTestState {
    pub fn new(hypotheses: usize, sensor: usize) -> Self {
        assert!(hypotheses >= 2, "need at least 2 hypotheses");
        Self {
            sensor,
            cum_llh: vec![0.0; hypotheses],
            n: 0,
            temp_decision: 0,
        }
    }

    pub fn sensor(&self) -> usize {
        self.sensor
    }

    pub fn cum_llh(&self) -> &[f64] {
        &self.cum_llh
    }

    /// Number of update steps since construction.
    pub fn steps(&self) -> u64 {
        self.n
    }

    /// Current maximum-posterior decision; lowest index wins ties.
    pub fn temp_decision(&self) -> usize {
        self.temp_decision
    }

    /// One test step: draw an action from the leader's maximin distribution,
    /// sample the observation under `true_hyp`, fold in log-likelihoods, and
    /// refresh the temporary decision. Returns (action, observation).
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        model: &ObservationModel,
        policy: &PolicyTable,
        true_hyp: usize,
        rng: &mut R,
    ) -> (usize, usize) {
        let pmf = policy.pmf(self.sensor, self.temp_decision);
        let action = sample_index(&pmf.q, rng);
        let obs = model.dist(true_hyp, self.sensor, action).sample(rng);
        model.accumulate_log_likelihoods(self.sensor, action, obs, &mut self.cum_llh);
        self.temp_decision = argmax(&self.cum_llh);
        self.n += 1;
        (action, obs)
    }

    pub fn worst_case_llr(&self) -> WorstCaseLlr {
        let leader = self.temp_decision;
        let runner_up = self
            .cum_llh
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != leader)
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        WorstCaseLlr {
            leader,
            margin: (self.cum_llh[leader] - runner_up).max(0.0),
        }
    }

    /// Margin of the current leader, the left side of the stopping rule.
    pub fn margin(&self) -> f64 {
        self.worst_case_llr().margin
    }

    #[cfg(test)]
    pub(crate) fn force_cum_llh(&mut self, cum: Vec<f64>) {
        self.cum_llh = cum;
        self.temp_decision = argmax(&self.cum_llh);
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Runs the standard test on one sensor until the margin crosses `gamma`,
/// with the default step cap. Returns (decision, stopping step).
pub fn run_standard_test<R: Rng + ?Sized>(
    model: &ObservationModel,
    policy: &PolicyTable,
    sensor: usize,
    gamma: f64,
    true_hyp: usize,
    rng: &mut R,
) -> Result<(usize, u64)> {
    run_standard_test_capped(
        model,
        policy,
        sensor,
        gamma,
        true_hyp,
        rng,
        DEFAULT_STEP_CAP,
    )
}

/// As [`run_standard_test`] with an explicit step cap. Exceeding the cap is
/// an error rather than a silent truncation: it signals a model that cannot
/// separate hypotheses.
pub fn run_standard_test_capped<R: Rng + ?Sized>(
    model: &ObservationModel,
    policy: &PolicyTable,
    sensor: usize,
    gamma: f64,
    true_hyp: usize,
    rng: &mut R,
    cap: u64,
) -> Result<(usize, u64)> {
    debug_assert!(gamma > 0.0, "threshold must be positive");
    let mut state = SensorTestState::new(model.hypotheses(), sensor);
    for _ in 0..cap {
        state.step(model, policy, true_hyp, rng);
        let stat = state.worst_case_llr();
        if stat.margin >= gamma {
            return Ok((stat.leader, state.steps()));
        }
    }
    Err(Error::StepCapExceeded { cap })
}

/// Expands an `L`-sensor model into the fusion-center form: one super-sensor
/// whose action `a = sensor * M + base_action` activates that sensor with
/// that probing action. Running the standard test on the result realizes the
/// fusion-center protocol with one active sensor per step, so its stopping
/// step equals its total sample count.
pub fn build_fct_model(model: &ObservationModel) -> ObservationModel {
    let m = model.hypotheses();
    let l = model.sensors();
    ObservationModel::from_fn(m, 1, m * l, |hyp, _s, a| {
        let (sensor, action) = fct_action(a, m);
        model.dist(hyp, sensor, action).clone()
    })
    .expect("expansion of a valid model is valid")
}

/// Decodes an expanded fusion-center action into (sensor, base action).
pub fn fct_action(a: usize, hypotheses: usize) -> (usize, usize) {
    (a / hypotheses, a % hypotheses)
}
