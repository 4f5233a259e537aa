//! The consensus-based test for fully-flat networks: no fusion center.
//!
//! Phase 1: sensors average their capability rows over the graph with weight
//! matrix `W`, detecting uniformly-local agreement at threshold `c / L^2`
//! with the y/z counter rule — `y` counts consecutive locally-agreed rounds,
//! `z` percolates the network minimum, and `z > L + 1` certifies that every
//! sensor agreed simultaneously at some recent round. The certifying sensor
//! freezes, scales its estimate by `L`, and floods a termination bit.
//!
//! Phase 2 runs the test engine in parallel from round one, but local
//! decisions only update after the sensor finishes Phase 1: the leader is
//! adopted when its margin clears `v(leader) / I_est(leader) * |ln c|`, and
//! reset to null otherwise, every round.
//!
//! Phase 3 detects network-wide agreement on the local decisions with the
//! x/d counter pair — `x` is the agreement streak, `d` its percolated
//! minimum — and `d > L + 1` certifies a full-network streak, at which point
//! the sensor fixes its final decision and floods the halt bit.
//!
//! Rounds are synchronous; termination bits received during a round take
//! effect at the next round boundary, so each flood hop costs one round.

use rand::Rng;

use crate::dct::CapabilityTable;
use crate::engine::SensorTestState;
use crate::error::{Error, Result};
use crate::maximin::PolicyTable;
use crate::network::{NetworkGraph, WeightMatrix};
use crate::prob::ObservationModel;

/// Per-sensor state of a running consensus trial.
#[derive(Debug, Clone)]
pub struct CctSensorState {
    /// Working consensus estimate of `I / L` (unscaled); frozen at Phase-1
    /// termination and rebroadcast to neighbors that are still averaging.
    est: Vec<f64>,
    /// Consecutive rounds of local agreement at threshold `c / L^2`.
    y: u64,
    /// Percolated minimum agreement counter.
    z: u64,
    phase1_done: bool,
    phase1_round: Option<u64>,
    /// `L * est`, the estimate of the network capability vector, available
    /// once Phase 1 terminates at this sensor.
    capability_est: Option<Vec<f64>>,
    test: SensorTestState,
    local_decision: Option<usize>,
    prev_decision: Option<usize>,
    /// Agreement streak (x) and its percolated minimum (d).
    x: u64,
    d: u64,
    /// Last d value heard from each neighbor slot.
    neighbor_d: Vec<u64>,
    halted: bool,
    halt_round: Option<u64>,
    final_decision: Option<usize>,
    sent_p1_term: bool,
    sent_p3_term: bool,
    pending_p1_term: bool,
    pending_final: Option<usize>,
    messages: MessageCounts,
}

/// Broadcast counts per payload type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MessageCounts {
    pub consensus: u64,
    pub phase1_term: u64,
    pub decision: u64,
    pub phase3_term: u64,
}

impl MessageCounts {
    pub fn total(&self) -> u64 {
        self.consensus + self.phase1_term + self.decision + self.phase3_term
    }
}

/// One broadcast within a round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMessage {
    pub sender: usize,
    pub payload: Payload,
}

/// Message payloads. Detection-phase traffic is small by construction: a
/// decision payload carries one hypothesis index and one counter.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Consensus { est: Vec<f64>, z: u64 },
    Phase1Term,
    Decision { hyp: usize, d: u64 },
    Phase3Term { final_hyp: usize },
}

/// Local-decision rule: adopt the leader when its margin clears the
/// estimated threshold share, otherwise null. Errors if the capability
/// estimate for the leader is non-positive.
fn local_decision(
    sensor: usize,
    stat: crate::engine::WorstCaseLlr,
    v_row: &[f64],
    capability_est: &[f64],
    log_cost: f64,
) -> Result<Option<usize>> {
    let est = capability_est[stat.leader];
    if est <= 0.0 {
        return Err(Error::BadEstimate {
            sensor,
            hypothesis: stat.leader,
        });
    }
    let threshold = v_row[stat.leader] / est * log_cost;
    Ok((stat.margin >= threshold).then_some(stat.leader))
}

/// Agreement-streak update: `x + 1` on an unchanged unanimous neighborhood,
/// reset to 1 when unanimous but the own decision changed, 0 otherwise. A
/// missing report (own or neighbor) forces 0.
fn update_agreement_streak(
    own_now: Option<usize>,
    own_prev: Option<usize>,
    neighbors_now: &[Option<usize>],
    x_prev: u64,
) -> u64 {
    let Some(own) = own_now else { return 0 };
    if neighbors_now.iter().any(|n| *n != Some(own)) {
        return 0;
    }
    if own_prev == Some(own) {
        x_prev + 1
    } else {
        1
    }
}

/// Percolation update: minimum of the neighborhood's previous d values and
/// the own previous streak, plus one.
fn percolated_min(own_d_prev: u64, neighbor_d_prev: &[u64], x_prev: u64) -> u64 {
    let nbr_min = neighbor_d_prev.iter().copied().min().unwrap_or(u64::MAX);
    own_d_prev.min(nbr_min).min(x_prev) + 1
}

impl CctSensorState {
    fn new(sensor: usize, table: &CapabilityTable, degree: usize) -> Self {
        Self {
            est: table.capability_row(sensor),
            y: 0,
            z: 0,
            phase1_done: false,
            phase1_round: None,
            capability_est: None,
            test: SensorTestState::new(table.hypotheses(), sensor),
            local_decision: None,
            prev_decision: None,
            x: 0,
            d: 0,
            neighbor_d: vec![0; degree],
            halted: false,
            halt_round: None,
            final_decision: None,
            sent_p1_term: false,
            sent_p3_term: false,
            pending_p1_term: false,
            pending_final: None,
            messages: MessageCounts::default(),
        }
    }

    fn finish_phase1(&mut self, round: u64, scale: f64) {
        self.phase1_done = true;
        self.phase1_round = Some(round);
        self.capability_est = Some(self.est.iter().map(|v| v * scale).collect());
    }
}

/// Event log of one trial, round by round, for replay-style verification.
#[derive(Debug, Clone)]
pub struct CctLog {
    pub events: Vec<CctEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CctEvent {
    pub round: u64,
    pub sensor: usize,
    pub kind: CctEventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CctEventKind {
    /// Estimate broadcast this round (pre-update value).
    ConsensusEst(Vec<f64>),
    Phase1Done,
    Decision(Option<usize>),
    Counters {
        x: u64,
        d: u64,
    },
    Halt(usize),
}

/// Outcome of one consensus trial.
#[derive(Debug, Clone)]
pub struct CctTrial {
    /// The network-wide final decision.
    pub decision: usize,
    /// Final decision adopted at each sensor (all equal on sound runs).
    pub finals: Vec<usize>,
    /// Round at which the last sensor halted.
    pub rounds: u64,
    /// Round at which the last sensor finished Phase 1.
    pub phase1_rounds: u64,
    pub phase1_round_per_sensor: Vec<u64>,
    /// Scaled capability estimates at Phase-1 termination, per sensor.
    pub capability_estimates: Vec<Vec<f64>>,
    pub messages: Vec<MessageCounts>,
    pub log: Option<CctLog>,
}

/// Runs one consensus trial to global halt. `cap` bounds the round count.
#[allow(clippy::too_many_arguments)]
pub fn run_cct_trial<R: Rng + ?Sized>(
    model: &ObservationModel,
    policy: &PolicyTable,
    table: &CapabilityTable,
    graph: &NetworkGraph,
    weights: &WeightMatrix,
    cost: f64,
    true_hyp: usize,
    rng: &mut R,
    cap: u64,
    keep_log: bool,
) -> Result<CctTrial> {
    assert!(cost > 0.0 && cost < 1.0, "cost must lie in (0, 1)");
    let l = graph.sensors();
    assert_eq!(
        l,
        table.sensors(),
        "graph and table disagree on sensor count"
    );
    assert_eq!(
        l,
        weights.size(),
        "graph and weights disagree on sensor count"
    );
    let log_cost = cost.ln().abs();
    let local_tol = cost / (l * l) as f64;

    let mut sensors: Vec<CctSensorState> = (0..l)
        .map(|s| CctSensorState::new(s, table, graph.degree(s)))
        .collect();
    let mut events = keep_log.then(Vec::new);
    let log_event = |events: &mut Option<Vec<CctEvent>>, round, sensor, kind| {
        if let Some(ev) = events {
            ev.push(CctEvent {
                round,
                sensor,
                kind,
            });
        }
    };

    for round in 1..=cap {
        // Round boundary: termination bits received last round take effect.
        let mut p1_outbox: Vec<usize> = Vec::new();
        let mut p3_outbox: Vec<(usize, usize)> = Vec::new();
        for s in 0..l {
            if sensors[s].pending_p1_term && !sensors[s].phase1_done {
                sensors[s].finish_phase1(round - 1, l as f64);
                log_event(&mut events, round - 1, s, CctEventKind::Phase1Done);
                if !sensors[s].sent_p1_term {
                    sensors[s].sent_p1_term = true;
                    sensors[s].messages.phase1_term += 1;
                    p1_outbox.push(s);
                }
            }
            sensors[s].pending_p1_term = false;
            if let Some(final_hyp) = sensors[s].pending_final.take() {
                if !sensors[s].halted {
                    sensors[s].halted = true;
                    sensors[s].halt_round = Some(round);
                    sensors[s].final_decision = Some(final_hyp);
                    log_event(&mut events, round, s, CctEventKind::Halt(final_hyp));
                    if !sensors[s].sent_p3_term {
                        sensors[s].sent_p3_term = true;
                        sensors[s].messages.phase3_term += 1;
                        p3_outbox.push((s, final_hyp));
                    }
                }
            }
        }

        if sensors.iter().all(|s| s.halted) {
            return Ok(finish(sensors, events));
        }

        // Observation, decision update, and message composition.
        let mut consensus_snapshots: Vec<Option<(Vec<f64>, u64)>> = vec![None; l];
        let mut decisions_now: Vec<Option<usize>> = vec![None; l];
        let mut d_now: Vec<u64> = vec![0; l];
        let mut in_phase3: Vec<bool> = vec![false; l];
        for s in 0..l {
            if sensors[s].halted {
                continue;
            }
            sensors[s].test.step(model, policy, true_hyp, rng);

            let broadcasting_consensus = !sensors[s].phase1_done
                || graph.neighbors(s).iter().any(|&j| !sensors[j].phase1_done);
            if broadcasting_consensus {
                consensus_snapshots[s] = Some((sensors[s].est.clone(), sensors[s].z));
                sensors[s].messages.consensus += 1;
                if !sensors[s].phase1_done {
                    log_event(
                        &mut events,
                        round,
                        s,
                        CctEventKind::ConsensusEst(sensors[s].est.clone()),
                    );
                }
            }

            if sensors[s].phase1_done {
                in_phase3[s] = true;
                let stat = sensors[s].test.worst_case_llr();
                let capability_est = sensors[s]
                    .capability_est
                    .as_ref()
                    .expect("set at phase-1 termination")
                    .clone();
                let v_row = table.capability_row(s);
                let decision = local_decision(s, stat, &v_row, &capability_est, log_cost)?;
                sensors[s].local_decision = decision;
                decisions_now[s] = decision;
                log_event(&mut events, round, s, CctEventKind::Decision(decision));

                let d_new = percolated_min(sensors[s].d, &sensors[s].neighbor_d, sensors[s].x);
                d_now[s] = d_new;

                if d_new > (l as u64) + 1 {
                    // Stop rule fires; the agreement streak certifies the
                    // decision even if this round's margin dipped.
                    let final_hyp = decision
                        .or(sensors[s].prev_decision)
                        .expect("a streak long enough to certify implies a recent decision");
                    sensors[s].halted = true;
                    sensors[s].halt_round = Some(round);
                    sensors[s].final_decision = Some(final_hyp);
                    sensors[s].d = d_new;
                    log_event(&mut events, round, s, CctEventKind::Halt(final_hyp));
                    if !sensors[s].sent_p3_term {
                        sensors[s].sent_p3_term = true;
                        sensors[s].messages.phase3_term += 1;
                        p3_outbox.push((s, final_hyp));
                    }
                } else if decision.is_some() {
                    sensors[s].messages.decision += 1;
                }
            }
        }

        // Delivery plus local updates from this round's broadcasts.
        for s in 0..l {
            if sensors[s].halted {
                continue;
            }
            if !sensors[s].phase1_done {
                let (own_est, _) = consensus_snapshots[s]
                    .as_ref()
                    .expect("active sensors broadcast every round");
                let own_est = own_est.clone();

                // Weighted average over the own and neighbor snapshots.
                let mut next: Vec<f64> = own_est.iter().map(|v| v * weights.get(s, s)).collect();
                let mut z_min = sensors[s].z;
                let mut locally_agreed = true;
                for &j in graph.neighbors(s) {
                    let (nbr_est, nbr_z) = consensus_snapshots[j]
                        .as_ref()
                        .expect("neighbors of an averaging sensor broadcast");
                    let w = weights.get(s, j);
                    for (slot, v) in next.iter_mut().zip(nbr_est) {
                        *slot += w * v;
                    }
                    z_min = z_min.min(*nbr_z);
                    if locally_agreed {
                        locally_agreed = own_est
                            .iter()
                            .zip(nbr_est)
                            .all(|(a, b)| (a - b).abs() <= local_tol);
                    }
                }
                sensors[s].est = next;
                sensors[s].z = sensors[s].y.min(z_min) + 1;
                if sensors[s].z > (l as u64) + 1 {
                    sensors[s].finish_phase1(round, l as f64);
                    log_event(&mut events, round, s, CctEventKind::Phase1Done);
                    sensors[s].sent_p1_term = true;
                    sensors[s].messages.phase1_term += 1;
                    p1_outbox.push(s);
                } else if locally_agreed {
                    sensors[s].y += 1;
                } else {
                    sensors[s].y = 0;
                }
            } else if in_phase3[s] {
                let neighbor_decisions: Vec<Option<usize>> = graph
                    .neighbors(s)
                    .iter()
                    .map(|&j| if in_phase3[j] { decisions_now[j] } else { None })
                    .collect();
                let x_new = update_agreement_streak(
                    decisions_now[s],
                    sensors[s].prev_decision,
                    &neighbor_decisions,
                    sensors[s].x,
                );
                for idx in 0..graph.neighbors(s).len() {
                    let j = graph.neighbors(s)[idx];
                    sensors[s].neighbor_d[idx] = if in_phase3[j] { d_now[j] } else { 0 };
                }
                log_event(
                    &mut events,
                    round,
                    s,
                    CctEventKind::Counters {
                        x: x_new,
                        d: d_now[s],
                    },
                );
                sensors[s].x = x_new;
                sensors[s].d = d_now[s];
                sensors[s].prev_decision = decisions_now[s];
            }
        }

        // Termination bits land now and take effect at the next boundary.
        for s in p1_outbox {
            for &j in graph.neighbors(s) {
                if !sensors[j].phase1_done {
                    sensors[j].pending_p1_term = true;
                }
            }
        }
        for (s, final_hyp) in p3_outbox {
            for &j in graph.neighbors(s) {
                if !sensors[j].halted && sensors[j].pending_final.is_none() {
                    sensors[j].pending_final = Some(final_hyp);
                }
            }
        }

        if sensors.iter().all(|s| s.halted) {
            return Ok(finish(sensors, events));
        }
    }
    Err(Error::StepCapExceeded { cap })
}

fn finish(sensors: Vec<CctSensorState>, events: Option<Vec<CctEvent>>) -> CctTrial {
    let finals: Vec<usize> = sensors
        .iter()
        .map(|s| s.final_decision.expect("halted sensors carry a decision"))
        .collect();
    let phase1_round_per_sensor: Vec<u64> = sensors
        .iter()
        .map(|s| s.phase1_round.expect("halted sensors finished phase 1"))
        .collect();
    CctTrial {
        decision: finals[0],
        rounds: sensors
            .iter()
            .map(|s| s.halt_round.expect("all sensors halted"))
            .max()
            .unwrap(),
        phase1_rounds: *phase1_round_per_sensor.iter().max().unwrap(),
        phase1_round_per_sensor,
        capability_estimates: sensors
            .iter()
            .map(|s| s.capability_est.clone().expect("phase 1 finished"))
            .collect(),
        messages: sensors.iter().map(|s| s.messages).collect(),
        finals,
        log: events.map(|events| CctLog { events }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dct::dct_initialize;
    use crate::network::metropolis_weights;
    use crate::prob::Categorical;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bern(p: f64) -> Categorical {
        Categorical::bernoulli(p).unwrap()
    }

    fn complete_graph(n: usize) -> NetworkGraph {
        NetworkGraph::new(n, (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b)))).unwrap()
    }

    /// Distinct per-sensor binary models so initial capability rows differ.
    fn staggered_model(l: usize) -> ObservationModel {
        ObservationModel::from_fn(2, l, 2, |hyp, sensor, _a| {
            let p = 0.75 + 0.03 * sensor as f64;
            bern(if hyp == 0 { p } else { 1.0 - p })
        })
        .unwrap()
    }

    struct Setup {
        model: ObservationModel,
        policy: PolicyTable,
        table: CapabilityTable,
        graph: NetworkGraph,
        weights: WeightMatrix,
    }

    fn setup(model: ObservationModel, graph: NetworkGraph) -> Setup {
        let policy = PolicyTable::build(&model);
        let table = dct_initialize(&policy).unwrap();
        let weights = metropolis_weights(&graph);
        Setup {
            model,
            policy,
            table,
            graph,
            weights,
        }
    }

    #[test]
    fn complete_graph_phase1_terminates_after_the_counter_run() {
        // One multiply reaches the exact mean; agreement holds from round 2,
        // so the z counter crosses L + 1 at round L + 3.
        let l = 4;
        let s = setup(staggered_model(l), complete_graph(l));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trial = run_cct_trial(
            &s.model, &s.policy, &s.table, &s.graph, &s.weights, 0.05, 0, &mut rng, 10_000, false,
        )
        .unwrap();
        assert_eq!(trial.phase1_rounds, (l as u64) + 3);
        assert!(trial
            .phase1_round_per_sensor
            .iter()
            .all(|&r| r == (l as u64) + 3));
    }

    #[test]
    fn phase1_spread_is_within_cost_after_scaling() {
        let l = 5;
        let s = setup(staggered_model(l), complete_graph(l));
        for seed in 0..20 {
            let c = 0.02;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let trial = run_cct_trial(
                &s.model, &s.policy, &s.table, &s.graph, &s.weights, c, 0, &mut rng, 100_000, false,
            )
            .unwrap();
            for a in 0..l {
                for b in 0..l {
                    for hyp in 0..2 {
                        let gap = (trial.capability_estimates[a][hyp]
                            - trial.capability_estimates[b][hyp])
                            .abs();
                        assert!(gap <= c, "spread {gap} exceeds c = {c}");
                    }
                }
            }
        }
    }

    #[test]
    fn capability_estimates_approach_the_true_totals() {
        let l = 5;
        let s = setup(staggered_model(l), complete_graph(l));
        let c = 0.01;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let trial = run_cct_trial(
            &s.model, &s.policy, &s.table, &s.graph, &s.weights, c, 0, &mut rng, 100_000, false,
        )
        .unwrap();
        for est in &trial.capability_estimates {
            for hyp in 0..2 {
                assert!(
                    (est[hyp] - s.table.total(hyp)).abs() <= c,
                    "estimate {} vs total {}",
                    est[hyp],
                    s.table.total(hyp)
                );
            }
        }
    }

    #[test]
    fn finals_agree_and_match_the_strong_hypothesis() {
        let l = 5;
        let s = setup(staggered_model(l), complete_graph(l));
        for seed in 0..30 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let trial = run_cct_trial(
                &s.model, &s.policy, &s.table, &s.graph, &s.weights, 0.01, 1, &mut rng, 100_000,
                false,
            )
            .unwrap();
            assert!(trial.finals.iter().all(|&f| f == trial.decision));
            assert_eq!(trial.decision, 1);
        }
    }

    #[test]
    fn no_decision_updates_before_phase1_termination() {
        let l = 4;
        let s = setup(staggered_model(l), complete_graph(l));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trial = run_cct_trial(
            &s.model, &s.policy, &s.table, &s.graph, &s.weights, 0.05, 0, &mut rng, 100_000, true,
        )
        .unwrap();
        let log = trial.log.unwrap();
        let mut done_round = vec![u64::MAX; l];
        for ev in &log.events {
            if ev.kind == CctEventKind::Phase1Done {
                done_round[ev.sensor] = ev.round;
            }
        }
        for ev in &log.events {
            if let CctEventKind::Decision(Some(_)) = ev.kind {
                assert!(
                    ev.round > done_round[ev.sensor],
                    "sensor {} decided at round {} before finishing phase 1 at {}",
                    ev.sensor,
                    ev.round,
                    done_round[ev.sensor]
                );
            }
        }
    }

    #[test]
    fn halting_certifies_a_prior_unanimous_round() {
        // Whenever a sensor halts via d > L + 1, the log must show a round at
        // which every sensor's local decision equaled the final decision.
        let l = 5;
        let s = setup(staggered_model(l), complete_graph(l));
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
            let trial = run_cct_trial(
                &s.model, &s.policy, &s.table, &s.graph, &s.weights, 0.02, 0, &mut rng, 100_000,
                true,
            )
            .unwrap();
            assert!(log_shows_unanimous_round(
                trial.log.as_ref().unwrap(),
                l,
                trial.decision,
                trial.rounds
            ));
        }
    }

    /// Scans a trial log for a round at which every sensor reported the
    /// final decision.
    pub(crate) fn log_shows_unanimous_round(
        log: &CctLog,
        sensors: usize,
        decision: usize,
        last_round: u64,
    ) -> bool {
        use std::collections::HashMap;
        let mut per_round: HashMap<u64, usize> = HashMap::new();
        for ev in &log.events {
            if let CctEventKind::Decision(Some(h)) = ev.kind {
                if h == decision {
                    *per_round.entry(ev.round).or_insert(0) += 1;
                }
            }
        }
        (1..=last_round).any(|r| per_round.get(&r).copied() == Some(sensors))
    }

    #[test]
    fn agreement_streak_rules() {
        // Unanimous and unchanged: streak grows.
        assert_eq!(
            update_agreement_streak(Some(2), Some(2), &[Some(2), Some(2)], 4),
            5
        );
        // Unanimous but own decision changed: reset to one.
        assert_eq!(
            update_agreement_streak(Some(1), Some(2), &[Some(1), Some(1)], 4),
            1
        );
        // A disagreeing neighbor zeroes the streak.
        assert_eq!(
            update_agreement_streak(Some(1), Some(1), &[Some(1), Some(0)], 4),
            0
        );
        // A silent neighbor zeroes the streak.
        assert_eq!(update_agreement_streak(Some(1), Some(1), &[None], 4), 0);
        // A null own decision zeroes the streak.
        assert_eq!(update_agreement_streak(None, Some(1), &[Some(1)], 4), 0);
    }

    #[test]
    fn percolation_takes_the_neighborhood_minimum() {
        assert_eq!(percolated_min(3, &[5, 7], 10), 4);
        assert_eq!(percolated_min(9, &[5, 7], 2), 3);
        assert_eq!(percolated_min(9, &[], 2), 3);
        assert_eq!(percolated_min(0, &[0, 0], 0), 1);
    }

    #[test]
    fn decision_payload_is_one_index_and_one_counter() {
        let msg = RoundMessage {
            sender: 3,
            payload: Payload::Decision { hyp: 2, d: 7 },
        };
        match msg.payload {
            Payload::Decision { hyp, d } => {
                assert_eq!((hyp, d), (2, 7));
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn local_decision_thresholds_against_the_estimate() {
        let stat = crate::engine::WorstCaseLlr {
            leader: 1,
            margin: 2.0,
        };
        let v_row = [0.5, 1.0];
        let est = [2.0, 2.0];
        // threshold = 1.0 / 2.0 * |ln c|; margin 2.0 crosses for c = e^-4.
        let d = local_decision(0, stat, &v_row, &est, 4.0).unwrap();
        assert_eq!(d, Some(1));
        let d = local_decision(0, stat, &v_row, &est, 4.1).unwrap();
        assert_eq!(d, None, "condition fails, decision resets to null");
        let bad = local_decision(0, stat, &v_row, &[2.0, 0.0], 4.0);
        assert!(matches!(bad, Err(Error::BadEstimate { .. })));
    }

    #[test]
    fn single_sensor_reduces_to_the_standard_threshold() {
        // L = 1: est equals the capability row exactly, the estimated
        // fraction is 1, and the trigger is |ln c| itself.
        let model = ObservationModel::from_fn(2, 1, 2, |hyp, _s, _a| {
            bern(if hyp == 0 { 0.8 } else { 0.2 })
        })
        .unwrap();
        let graph = NetworkGraph::new(1, []).unwrap();
        let s = setup(model, graph);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let trial = run_cct_trial(
            &s.model, &s.policy, &s.table, &s.graph, &s.weights, 0.01, 0, &mut rng, 100_000, false,
        )
        .unwrap();
        assert_eq!(trial.decision, 0);
        for hyp in 0..2 {
            assert!((trial.capability_estimates[0][hyp] - s.table.total(hyp)).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_replay_for_a_seed() {
        let l = 4;
        let s = setup(staggered_model(l), complete_graph(l));
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = run_cct_trial(
                &s.model, &s.policy, &s.table, &s.graph, &s.weights, 0.03, 0, &mut rng, 100_000,
                false,
            )
            .unwrap();
            (
                t.decision,
                t.rounds,
                t.phase1_rounds,
                t.capability_estimates.clone(),
            )
        };
        assert_eq!(run(42), run(42));
    }

    /// Broadcast estimates per round, for rounds in which every sensor was
    /// still averaging (exactly `l` estimate events logged).
    fn full_rounds(log: &CctLog, l: usize) -> Vec<(u64, Vec<Vec<f64>>)> {
        use std::collections::BTreeMap;
        let mut per_round: BTreeMap<u64, Vec<(usize, Vec<f64>)>> = BTreeMap::new();
        for ev in &log.events {
            if let CctEventKind::ConsensusEst(est) = &ev.kind {
                per_round
                    .entry(ev.round)
                    .or_default()
                    .push((ev.sensor, est.clone()));
            }
        }
        per_round
            .into_iter()
            .filter(|(_, v)| v.len() == l)
            .map(|(round, mut v)| {
                v.sort_by_key(|(s, _)| *s);
                (round, v.into_iter().map(|(_, e)| e).collect())
            })
            .collect()
    }

    fn spread(ests: &[Vec<f64>]) -> f64 {
        let hyps = ests[0].len();
        let mut worst = 0.0f64;
        for a in 0..ests.len() {
            for b in a + 1..ests.len() {
                for h in 0..hyps {
                    worst = worst.max((ests[a][h] - ests[b][h]).abs());
                }
            }
        }
        worst
    }

    #[test]
    fn homogeneous_agreement_halts_within_the_counter_run() {
        // Once every sensor holds the final decision and keeps it, x grows
        // by one per round, d follows, the first halt comes within about
        // L + 2 rounds, and the termination bit floods the graph within its
        // diameter.
        let graph = crate::harness::generate_topology(8, 5).unwrap();
        let model = crate::harness::generate_bernoulli_model(3, 8, 5).unwrap();
        let l = 8;
        let s = setup(model, graph);
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
            let trial = run_cct_trial(
                &s.model, &s.policy, &s.table, &s.graph, &s.weights, 0.01, 0, &mut rng, 200_000,
                true,
            )
            .unwrap();
            let log = trial.log.as_ref().unwrap();
            // First round from which all sensors report the final decision
            // in every later round up to the first halt.
            let first_halt = log
                .events
                .iter()
                .filter(|ev| matches!(ev.kind, CctEventKind::Halt(_)))
                .map(|ev| ev.round)
                .min()
                .unwrap();
            let mut per_round = std::collections::HashMap::new();
            for ev in &log.events {
                if let CctEventKind::Decision(d) = ev.kind {
                    per_round
                        .entry(ev.round)
                        .or_insert_with(Vec::new)
                        .push(d == Some(trial.decision));
                }
            }
            let stable_from = (1..first_halt)
                .rev()
                .take_while(|r| {
                    per_round
                        .get(r)
                        .map(|v| v.len() == l && v.iter().all(|ok| *ok))
                        .unwrap_or(false)
                })
                .last()
                .expect("agreement precedes the halt");
            let slack = (l as u64) + 2 + s.graph.diameter() as u64 + 2;
            assert!(
                first_halt <= stable_from + slack,
                "halt at {first_halt}, stable from {stable_from}, slack {slack}"
            );
            assert!(trial.rounds <= first_halt + s.graph.diameter() as u64);
        }
    }

    #[test]
    fn phase1_conserves_the_capability_sum() {
        // With doubly stochastic weights the column sums of the estimate
        // matrix are invariant, so the unscaled estimates keep summing to
        // the true network totals while everyone is averaging.
        let graph = crate::harness::generate_topology(8, 5).unwrap();
        let model = crate::harness::generate_bernoulli_model(3, 8, 5).unwrap();
        let s = setup(model, graph);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let trial = run_cct_trial(
            &s.model, &s.policy, &s.table, &s.graph, &s.weights, 0.01, 0, &mut rng, 200_000, true,
        )
        .unwrap();
        let rounds = full_rounds(trial.log.as_ref().unwrap(), 8);
        assert!(rounds.len() > 5, "expected a real averaging window");
        for (round, ests) in &rounds {
            for hyp in 0..3 {
                let sum: f64 = ests.iter().map(|e| e[hyp]).sum();
                assert!(
                    (sum - s.table.total(hyp)).abs() <= 1e-9,
                    "round {round}: column sum {sum} drifted from {}",
                    s.table.total(hyp)
                );
            }
        }
    }

    #[test]
    fn phase1_spread_contracts_at_the_ergodic_rate() {
        // Sampling the logged trajectory every radius-many rounds, the
        // pairwise spread decays at least as fast as (1 - eta(W^h))^n.
        let graph = crate::harness::generate_topology(8, 5).unwrap();
        let model = crate::harness::generate_bernoulli_model(3, 8, 5).unwrap();
        let s = setup(model, graph);
        let radius = s.graph.radius().max(1);
        let eta = crate::network::ergodic_coefficient(&s.weights.pow(radius));
        assert!(eta > 0.0 && eta < 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let trial = run_cct_trial(
            &s.model, &s.policy, &s.table, &s.graph, &s.weights, 0.01, 0, &mut rng, 200_000, true,
        )
        .unwrap();
        let rounds = full_rounds(trial.log.as_ref().unwrap(), 8);
        let initial = spread(&rounds[0].1);
        assert!(initial > 0.0);
        let mut checked = 0;
        for (n, chunk) in rounds.chunks(radius).enumerate() {
            let bound = (1.0 - eta).powi(n as i32) * initial;
            let measured = spread(&chunk[0].1);
            assert!(
                measured <= bound * (1.0 + 1e-9),
                "after {n} radius-blocks: spread {measured} exceeds {bound}"
            );
            checked += 1;
        }
        assert!(checked > 3, "trajectory too short to be meaningful");
    }
}
