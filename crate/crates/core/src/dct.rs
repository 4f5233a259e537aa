//! The decentralized test: a fusion center splits the global threshold
//! across sensors in proportion to capability, each sensor reports a local
//! decision whenever its share of the worst-case log-likelihood ratio is
//! reached (and re-reports on every change), and the center halts everyone
//! once the reports are unanimous.
//!
//! Rounds are synchronous: every sensor takes one observation per round and
//! messages arrive within the round, which realizes the instant-communication
//! network assumption deterministically.

use rand::Rng;

use crate::engine::SensorTestState;
use crate::error::{Error, Result};
use crate::maximin::PolicyTable;
use crate::prob::ObservationModel;

/// Capabilities v(hyp, sensor), network totals I(hyp), and response
/// fractions rho = v / I. One global threshold |ln c| splits across sensors
/// as rho * |ln c|, so the rho columns sum to one per hypothesis.
#[derive(Debug, Clone)]
pub struct CapabilityTable {
    sensors: usize,
    hypotheses: usize,
    /// v, row-major [sensor][hyp].
    v: Vec<f64>,
    /// I(hyp) = sum over sensors of v.
    totals: Vec<f64>,
    /// rho, row-major [sensor][hyp].
    rho: Vec<f64>,
}

impl CapabilityTable {
    /// Builds the table from solved policies. Every capability must be
    /// strictly positive: a sensor with v = 0 for some hypothesis would get
    /// a zero trigger threshold, which the protocol does not define.
    pub fn from_policy(policy: &PolicyTable) -> Result<Self> {
        let sensors = policy.sensors();
        let hypotheses = policy.hypotheses();
        let mut v = vec![0.0; sensors * hypotheses];
        for sensor in 0..sensors {
            for hyp in 0..hypotheses {
                let cap = policy.capability(sensor, hyp);
                if cap <= 0.0 {
                    return Err(Error::ZeroCapability {
                        hypothesis: hyp,
                        sensor,
                    });
                }
                v[sensor * hypotheses + hyp] = cap;
            }
        }
        let totals: Vec<f64> = (0..hypotheses)
            .map(|hyp| (0..sensors).map(|s| v[s * hypotheses + hyp]).sum())
            .collect();
        let rho: Vec<f64> = (0..sensors)
            .flat_map(|s| {
                let v = &v;
                let totals = &totals;
                (0..hypotheses).map(move |hyp| v[s * hypotheses + hyp] / totals[hyp])
            })
            .collect();
        Ok(Self {
            sensors,
            hypotheses,
            v,
            totals,
            rho,
        })
    }

    pub fn sensors(&self) -> usize {
        self.sensors
    }

    pub fn hypotheses(&self) -> usize {
        self.hypotheses
    }

    pub fn capability(&self, sensor: usize, hyp: usize) -> f64 {
        self.v[sensor * self.hypotheses + hyp]
    }

    /// Capability row of one sensor, the initial consensus estimate.
    pub fn capability_row(&self, sensor: usize) -> Vec<f64> {
        (0..self.hypotheses)
            .map(|hyp| self.capability(sensor, hyp))
            .collect()
    }

    /// Network total I(hyp).
    pub fn total(&self, hyp: usize) -> f64 {
        self.totals[hyp]
    }

    pub fn totals(&self) -> &[f64] {
        &self.totals
    }

    pub fn max_total(&self) -> f64 {
        self.totals
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn response_fraction(&self, sensor: usize, hyp: usize) -> f64 {
        self.rho[sensor * self.hypotheses + hyp]
    }
}

/// Builds the capability table; the initialization exchange costs each
/// sensor two messages (capabilities up, response fractions down), which
/// [`FusionState::new`] pre-books.
pub fn dct_initialize(policy: &PolicyTable) -> Result<CapabilityTable> {
    CapabilityTable::from_policy(policy)
}

/// Fusion-center bookkeeping: latest report per sensor, the unanimity
/// decision once reached, and per-sensor communication counts (both
/// directions, initialization included).
#[derive(Debug, Clone)]
pub struct FusionState {
    latest: Vec<Option<usize>>,
    decided: Option<usize>,
    comms: Vec<u64>,
}

impl FusionState {
    pub fn new(sensors: usize) -> Self {
        Self {
            latest: vec![None; sensors],
            decided: None,
            // Initialization: capabilities sent, response fractions received.
            comms: vec![2; sensors],
        }
    }

    pub fn latest(&self) -> &[Option<usize>] {
        &self.latest
    }

    pub fn decided(&self) -> Option<usize> {
        self.decided
    }

    pub fn comms(&self) -> &[u64] {
        &self.comms
    }

    /// Ingests one round's local-decision messages. When all sensors' latest
    /// reports agree, the decision is made and the halt broadcast is booked
    /// (one more message per sensor). Returns the decision if reached.
    pub fn process_round(&mut self, messages: &[(usize, usize)]) -> Option<usize> {
        if self.decided.is_some() {
            return self.decided;
        }
        for &(sensor, hyp) in messages {
            self.latest[sensor] = Some(hyp);
            self.comms[sensor] += 1;
        }
        let first = self.latest[0];
        if first.is_some() && self.latest.iter().all(|d| *d == first) {
            self.decided = first;
            for c in &mut self.comms {
                *c += 1; // halt broadcast
            }
        }
        self.decided
    }
}

/// One sensor of a running decentralized trial.
#[derive(Debug, Clone)]
pub struct DctSensor {
    test: SensorTestState,
    /// Trigger thresholds rho * |ln c| per hypothesis.
    thresholds: Vec<f64>,
    last_sent: Option<usize>,
    first_trigger_round: Option<u64>,
    last_trigger_round: Option<u64>,
    messages_sent: u64,
}

impl DctSensor {
    pub fn new(sensor: usize, table: &CapabilityTable, cost: f64) -> Self {
        let log_cost = cost.ln().abs();
        Self {
            test: SensorTestState::new(table.hypotheses(), sensor),
            thresholds: (0..table.hypotheses())
                .map(|hyp| table.response_fraction(sensor, hyp) * log_cost)
                .collect(),
            last_sent: None,
            first_trigger_round: None,
            last_trigger_round: None,
            messages_sent: 0,
        }
    }

    pub fn test(&self) -> &SensorTestState {
        &self.test
    }

    /// One synchronous round: take an observation, then report the leader if
    /// the margin clears its threshold and it differs from the last report.
    /// The sensor never stops on its own; halting is the center's call.
    pub fn round<R: Rng + ?Sized>(
        &mut self,
        model: &ObservationModel,
        policy: &PolicyTable,
        true_hyp: usize,
        round: u64,
        rng: &mut R,
    ) -> Option<usize> {
        self.test.step(model, policy, true_hyp, rng);
        let stat = self.test.worst_case_llr();
        if stat.margin >= self.thresholds[stat.leader] && self.last_sent != Some(stat.leader) {
            self.last_sent = Some(stat.leader);
            self.first_trigger_round.get_or_insert(round);
            self.last_trigger_round = Some(round);
            self.messages_sent += 1;
            return Some(stat.leader);
        }
        None
    }
}

/// Outcome of one decentralized trial.
#[derive(Debug, Clone)]
pub struct DctTrial {
    pub decision: usize,
    /// Round at which the fusion center reached unanimity.
    pub rounds: u64,
    /// First round each sensor reported anything.
    pub trigger_rounds: Vec<u64>,
    /// Round of each sensor's final (unanimity-forming) report.
    pub last_report_rounds: Vec<u64>,
    /// Messages exchanged with each sensor, both directions.
    pub comms: Vec<u64>,
    /// Decision messages each sensor sent (excludes initialization / halt).
    pub decision_messages: Vec<u64>,
}

/// Runs one trial to unanimity. `cap` bounds the number of rounds.
pub fn run_dct_trial<R: Rng + ?Sized>(
    model: &ObservationModel,
    policy: &PolicyTable,
    table: &CapabilityTable,
    cost: f64,
    true_hyp: usize,
    rng: &mut R,
    cap: u64,
) -> Result<DctTrial> {
    assert!(cost > 0.0 && cost < 1.0, "cost must lie in (0, 1)");
    let sensors = table.sensors();
    let mut fusion = FusionState::new(sensors);
    let mut nodes: Vec<DctSensor> = (0..sensors)
        .map(|s| DctSensor::new(s, table, cost))
        .collect();

    let mut inbox = Vec::new();
    for round in 1..=cap {
        inbox.clear();
        for node in nodes.iter_mut() {
            if let Some(hyp) = node.round(model, policy, true_hyp, round, rng) {
                inbox.push((node.test.sensor(), hyp));
            }
        }
        if let Some(decision) = fusion.process_round(&inbox) {
            return Ok(DctTrial {
                decision,
                rounds: round,
                trigger_rounds: nodes
                    .iter()
                    .map(|n| n.first_trigger_round.expect("every sensor reported"))
                    .collect(),
                last_report_rounds: nodes
                    .iter()
                    .map(|n| n.last_trigger_round.expect("every sensor reported"))
                    .collect(),
                comms: fusion.comms().to_vec(),
                decision_messages: nodes.iter().map(|n| n.messages_sent).collect(),
            });
        }
    }
    Err(Error::StepCapExceeded { cap })
}
