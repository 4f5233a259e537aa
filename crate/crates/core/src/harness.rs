//! Seeded Monte Carlo experiments over the four protocols.
//!
//! Reproducibility contract: every random draw of a trial comes from a
//! ChaCha stream derived from `(master seed, sweep cell index, trial index)`
//! by a splitmix chain, the generated model and topology come from salted
//! master-seed streams, and aggregation folds records in trial order. The
//! same config therefore yields byte-identical CSV no matter how many worker
//! threads run the trials (rayon with the `parallel` feature, a plain loop
//! without).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cct::{run_cct_trial, CctEventKind, CctLog, MessageCounts};
use crate::dct::{dct_initialize, run_dct_trial, CapabilityTable};
use crate::engine::{build_fct_model, fct_action, SensorTestState};
use crate::error::{Error, Result};
use crate::maximin::PolicyTable;
use crate::network::{ergodic_coefficient, metropolis_weights, NetworkGraph, WeightMatrix};
use crate::prob::{Categorical, ObservationModel, PROB_FLOOR};

/// Round/step cap for a single trial unless overridden.
pub const DEFAULT_TRIAL_CAP: u64 = 10_000_000;

const MODEL_SALT: u64 = 0x6d6f_64656c;
const TOPOLOGY_SALT: u64 = 0x746f_706f;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Standard,
    Fct,
    Dct,
    Cct,
}

impl Protocol {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Standard => "standard",
            Self::Fct => "fct",
            Self::Dct => "dct",
            Self::Cct => "cct",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "fct" => Ok(Self::Fct),
            "dct" => Ok(Self::Dct),
            "cct" => Ok(Self::Cct),
            other => Err(Error::Config(format!("unknown protocol `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TopologySpec {
    Generated,
    File(std::path::PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelSpec {
    Bernoulli,
    File(std::path::PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrueHypothesisPolicy {
    /// Condition every trial on this hypothesis.
    Fixed(usize),
    /// Draw the truth uniformly per trial (Bayes-averaged quantities).
    Uniform,
}

/// One Monte Carlo block's worth of settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub hypotheses: usize,
    pub sensors: usize,
    /// Observation cost per unit time; thresholds scale with |ln c|.
    pub cost: f64,
    /// Wrong-decision cost per hypothesis.
    pub omega: Vec<f64>,
    pub trials: u64,
    pub seed: u64,
    pub topology: TopologySpec,
    pub model: ModelSpec,
    pub true_hypothesis: TrueHypothesisPolicy,
    pub log_events: bool,
    /// Worker threads; 0 means all cores, 1 forces the sequential path.
    pub jobs: usize,
    /// Slack multiplier standing in for the bounds' (1 + o(1)) factors;
    /// None picks 1.5 for c <= 1e-3 and 2.0 otherwise.
    pub slack: Option<f64>,
    pub step_cap: u64,
}

impl ExperimentConfig {
    pub fn new(protocol: Protocol, hypotheses: usize, sensors: usize, cost: f64) -> Self {
        Self {
            protocol,
            hypotheses,
            sensors,
            cost,
            omega: vec![1.0; hypotheses],
            trials: 1,
            seed: 0,
            topology: TopologySpec::Generated,
            model: ModelSpec::Bernoulli,
            true_hypothesis: TrueHypothesisPolicy::Fixed(0),
            log_events: false,
            jobs: 0,
            slack: None,
            step_cap: DEFAULT_TRIAL_CAP,
        }
    }

    pub fn effective_slack(&self) -> f64 {
        self.slack
            .unwrap_or(if self.cost <= 1e-3 { 1.5 } else { 2.0 })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cost > 0.0 && self.cost < 1.0) {
            return Err(Error::Config(format!(
                "cost must lie in (0, 1), got {}",
                self.cost
            )));
        }
        if self.hypotheses < 2 {
            return Err(Error::Config("need at least 2 hypotheses".into()));
        }
        if self.sensors == 0 {
            return Err(Error::Config("need at least 1 sensor".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("need at least 1 trial".into()));
        }
        if self.omega.len() != self.hypotheses {
            return Err(Error::Config(format!(
                "omega needs {} entries, got {}",
                self.hypotheses,
                self.omega.len()
            )));
        }
        if self.omega.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::Config("omega entries must be non-negative".into()));
        }
        if self.protocol == Protocol::Standard && self.sensors != 1 {
            return Err(Error::Config(
                "the standard protocol is single-sensor; set L = 1".into(),
            ));
        }
        if let TrueHypothesisPolicy::Fixed(h) = self.true_hypothesis {
            if h >= self.hypotheses {
                return Err(Error::Config(format!(
                    "true hypothesis {h} out of range for M = {}",
                    self.hypotheses
                )));
            }
        }
        if let Some(s) = self.slack {
            if s < 1.0 {
                return Err(Error::Config("slack must be >= 1".into()));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Seed derivation
// ---------------------------------------------------------------------------

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn absorb(state: u64, value: u64) -> u64 {
    let mut s = state ^ value.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    s = (s ^ (s >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    s = (s ^ (s >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    s ^ (s >> 31)
}

/// The documented splittable scheme: one independent ChaCha stream per
/// (master seed, sweep cell, trial index).
pub fn derive_trial_rng(master: u64, cell: u64, trial: u64) -> ChaCha8Rng {
    let mut state = absorb(absorb(absorb(master, 0x7472_69616c), cell), trial);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// Experiment topology: a ring over about half the sensors with the rest
/// attached as pendants to uniformly random ring nodes. Connected by
/// construction. For fewer than three sensors there is no ring; the fallback
/// is a single node or a single edge.
pub fn generate_topology(sensors: usize, seed: u64) -> Result<NetworkGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match sensors {
        0 => Err(Error::Config("topology needs at least one sensor".into())),
        1 => NetworkGraph::new(1, []),
        2 => NetworkGraph::new(2, [(0, 1)]),
        _ => {
            // A two-node "ring" would be a multi-edge, so the ring never
            // shrinks below a triangle; L = 3 is a full cycle.
            let ring = sensors.div_ceil(2).max(3).min(sensors);
            let mut edges: Vec<(usize, usize)> = (0..ring).map(|i| (i, (i + 1) % ring)).collect();
            for pendant in ring..sensors {
                edges.push((pendant, rng.random_range(0..ring)));
            }
            NetworkGraph::new(sensors, edges)
        }
    }
}

/// Independent Bernoulli observation distributions: each (hypothesis,
/// sensor, action) draws its parameter uniformly from the hypothesis' slice
/// of (0, 1) — thirds for M = 3 — clamped away from the boundary so all
/// divergences stay finite.
pub fn generate_bernoulli_model(
    hypotheses: usize,
    sensors: usize,
    seed: u64,
) -> Result<ObservationModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = hypotheses as f64;
    ObservationModel::from_fn(hypotheses, sensors, hypotheses, |hyp, _sensor, _action| {
        let lo = hyp as f64 / m;
        let hi = (hyp + 1) as f64 / m;
        let p = (lo + rng.random::<f64>() * (hi - lo)).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        Categorical::bernoulli(p).expect("clamped parameter is valid")
    })
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    hypotheses: usize,
    sensors: usize,
    actions: usize,
    /// probs[hyp][sensor][action] -> probability vector.
    dists: Vec<Vec<Vec<Vec<f64>>>>,
}

/// Reads a model from its JSON file form.
pub fn model_from_json(text: &str) -> Result<ObservationModel> {
    let file: ModelFile =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("model file: {e}")))?;
    let mut dists = Vec::new();
    if file.dists.len() != file.hypotheses {
        return Err(Error::Config(
            "model file: hypothesis count mismatch".into(),
        ));
    }
    for per_hyp in &file.dists {
        if per_hyp.len() != file.sensors {
            return Err(Error::Config("model file: sensor count mismatch".into()));
        }
        for per_sensor in per_hyp {
            if per_sensor.len() != file.actions {
                return Err(Error::Config("model file: action count mismatch".into()));
            }
            for probs in per_sensor {
                dists.push(Categorical::new(probs.clone())?);
            }
        }
    }
    ObservationModel::from_parts(file.hypotheses, file.sensors, file.actions, dists)
}

/// Renders a model into its JSON file form.
pub fn model_to_json(model: &ObservationModel) -> String {
    let dists: Vec<Vec<Vec<Vec<f64>>>> = (0..model.hypotheses())
        .map(|hyp| {
            (0..model.sensors())
                .map(|sensor| {
                    (0..model.actions())
                        .map(|action| model.dist(hyp, sensor, action).probs().to_vec())
                        .collect()
                })
                .collect()
        })
        .collect();
    let file = ModelFile {
        hypotheses: model.hypotheses(),
        sensors: model.sensors(),
        actions: model.actions(),
        dists,
    };
    serde_json::to_string_pretty(&file).expect("plain data serializes")
}

// ---------------------------------------------------------------------------
// Records and aggregates
// ---------------------------------------------------------------------------

/// Communication accounting, shaped per protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CommRecord {
    /// Messages exchanged with the fusion center per sensor (both ways).
    PerSensor(Vec<u64>),
    /// Broadcast counts per payload type per sensor.
    PerPayload(Vec<MessageCounts>),
    /// No network traffic (isolated standard test).
    None,
}

impl CommRecord {
    /// Mean messages per sensor.
    pub fn mean_per_sensor(&self) -> f64 {
        match self {
            Self::PerSensor(v) if !v.is_empty() => v.iter().sum::<u64>() as f64 / v.len() as f64,
            Self::PerPayload(v) if !v.is_empty() => {
                v.iter().map(|m| m.total()).sum::<u64>() as f64 / v.len() as f64
            }
            _ => 0.0,
        }
    }
}

/// Outcome of one trial, protocol-independent core plus optional extras.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub trial: u64,
    pub truth: usize,
    pub decision: usize,
    pub correct: bool,
    /// Global decision time in rounds (total samples for fct/standard).
    pub rounds: u64,
    /// Consensus-phase duration; cct only.
    pub phase1_rounds: Option<u64>,
    /// First-report round per sensor; dct only.
    pub trigger_rounds: Vec<u64>,
    pub comms: CommRecord,
    /// Scaled capability estimates at consensus termination; cct only.
    pub capability_estimates: Option<Vec<Vec<f64>>>,
    pub log: Option<CctLog>,
}

/// Monte Carlo summary in the fixed CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub protocol: Protocol,
    pub hypotheses: usize,
    pub sensors: usize,
    pub cost: f64,
    pub trials: u64,
    pub errors: u64,
    pub err_rate: f64,
    pub err_lo: f64,
    pub err_hi: f64,
    pub mean_n: f64,
    pub mean_n2: f64,
    pub mean_nc: f64,
    /// Empirical risk: mean of `c N + omega(truth) * 1{wrong}`.
    pub risk: f64,
    pub mean_comms: f64,
    pub bound_err: f64,
    pub bound_en: f64,
    pub bound_nc: f64,
    pub seed: u64,
}

/// Wilson 95% score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054_f64;
    let n = trials as f64;
    let phat = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (phat + z2 / (2.0 * n)) / denom;
    let half = z * (phat * (1.0 - phat) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // At the degenerate counts the score endpoint is exactly 0 or 1; clamp
    // the float residue away.
    let lo = if successes == 0 {
        0.0
    } else {
        (center - half).max(0.0)
    };
    let hi = if successes == trials {
        1.0
    } else {
        (center + half).min(1.0)
    };
    (lo, hi)
}

// ---------------------------------------------------------------------------
// Theoretical bound evaluation
// ---------------------------------------------------------------------------

/// Graph quantities entering the consensus-phase bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphArtifacts {
    pub diameter: usize,
    pub radius: usize,
    pub eta_w: f64,
    pub eta_w_pow_radius: f64,
}

impl GraphArtifacts {
    pub fn from_graph(graph: &NetworkGraph, weights: &WeightMatrix) -> Self {
        let radius = graph.radius().max(1);
        Self {
            diameter: graph.diameter().max(1),
            radius,
            eta_w: ergodic_coefficient(weights),
            eta_w_pow_radius: ergodic_coefficient(&weights.pow(radius)),
        }
    }
}

/// Leading-order theoretical bounds at finite cost. The asymptotic
/// `(1 + o(1))` factors are reported as bare leading terms; acceptance
/// checks multiply in a configured slack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    /// Wrong-decision probability bound.
    pub err: f64,
    /// Expected decision time, leading term.
    pub expected_n: f64,
    /// Consensus-phase duration bound (cct only, else 0).
    pub phase1: f64,
    /// Converse reference: no consistent test beats |ln c| / I(i) to leading
    /// order.
    pub converse_n: f64,
}

/// Evaluates the bounds for a protocol at cost `c`. `capability` is the
/// per-step information rate the protocol works against: the single-sensor
/// (or expanded-action) capability for standard/fct, the network total
/// I(true) for dct/cct. `i_max` is the largest network total over
/// hypotheses; `graph` supplies the consensus quantities for cct.
pub fn theoretical_bounds(
    protocol: Protocol,
    hypotheses: usize,
    sensors: usize,
    cost: f64,
    capability: f64,
    i_max: f64,
    graph: Option<&GraphArtifacts>,
) -> BoundReport {
    let m = hypotheses as f64;
    let log_cost = cost.ln().abs();
    let union_err = ((m - 1.0) * cost).min(1.0);
    let converse_n = log_cost / capability;
    match protocol {
        Protocol::Standard | Protocol::Fct | Protocol::Dct => BoundReport {
            err: union_err,
            expected_n: log_cost / capability,
            phase1: 0.0,
            converse_n,
        },
        Protocol::Cct => {
            let g = graph.expect("cct bounds need graph artifacts");
            let h = g.radius as f64;
            let log_contraction = (1.0 - g.eta_w_pow_radius).ln();
            // Both logs are negative, so the ratio is a non-negative round
            // count; perfect mixing sends the contraction log to -inf and
            // the term to zero.
            let consensus_term = h * (cost / i_max).ln() / log_contraction;
            let err = if cost < capability {
                ((m - 1.0) * cost.powf(1.0 / (1.0 - cost / capability))).min(1.0)
            } else {
                1.0
            };
            let detect_term = if capability > cost {
                log_cost / (capability - cost)
            } else {
                f64::INFINITY
            };
            let k0 = h * ((cost / i_max).ln() / log_contraction + 1.0);
            let kd = h * (-(g.diameter as f64).ln() / log_contraction + 1.0) + sensors as f64 + 1.0;
            BoundReport {
                err,
                expected_n: consensus_term.max(detect_term),
                phase1: k0 + kd,
                converse_n,
            }
        }
    }
}

// ---------------------------------------------------------------------------
// The Monte Carlo driver
// ---------------------------------------------------------------------------

/// Everything a cell shares across trials, built once and read-only.
pub struct CellSetup {
    pub model: ObservationModel,
    pub policy: PolicyTable,
    pub table: Option<CapabilityTable>,
    pub graph: Option<NetworkGraph>,
    pub weights: Option<WeightMatrix>,
    pub artifacts: Option<GraphArtifacts>,
    pub bounds: BoundReport,
}

/// Builds the shared state for one cell: model, policies, capability table,
/// and (for cct) the graph, weights, and bound inputs.
pub fn prepare_cell(cfg: &ExperimentConfig) -> Result<CellSetup> {
    cfg.validate()?;
    let base_model = match &cfg.model {
        ModelSpec::Bernoulli => {
            generate_bernoulli_model(cfg.hypotheses, cfg.sensors, absorb(cfg.seed, MODEL_SALT))?
        }
        ModelSpec::File(path) => {
            let text = std::fs::read_to_string(path)?;
            let model = model_from_json(&text)?;
            if model.hypotheses() != cfg.hypotheses || model.sensors() != cfg.sensors {
                return Err(Error::Config(format!(
                    "model file is {} hypotheses x {} sensors, config says {} x {}",
                    model.hypotheses(),
                    model.sensors(),
                    cfg.hypotheses,
                    cfg.sensors
                )));
            }
            model
        }
    };
    base_model.check_separability()?;

    let (model, needs_table) = match cfg.protocol {
        Protocol::Fct => (build_fct_model(&base_model), false),
        Protocol::Standard => (base_model, false),
        Protocol::Dct | Protocol::Cct => (base_model, true),
    };
    let policy = PolicyTable::build(&model);
    let table = if needs_table {
        Some(dct_initialize(&policy)?)
    } else {
        None
    };

    let (graph, weights, artifacts) = if cfg.protocol == Protocol::Cct {
        let graph = match &cfg.topology {
            TopologySpec::Generated => {
                generate_topology(cfg.sensors, absorb(cfg.seed, TOPOLOGY_SALT))?
            }
            TopologySpec::File(path) => {
                let text = std::fs::read_to_string(path)?;
                let g = NetworkGraph::from_edge_list_text(&text)?;
                if g.sensors() != cfg.sensors {
                    return Err(Error::Config(format!(
                        "graph file has {} sensors, config says {}",
                        g.sensors(),
                        cfg.sensors
                    )));
                }
                g
            }
        };
        let weights = metropolis_weights(&graph);
        let artifacts = GraphArtifacts::from_graph(&graph, &weights);
        (Some(graph), Some(weights), Some(artifacts))
    } else {
        (None, None, None)
    };

    // Conditioned bounds: at the fixed truth, or at the weakest hypothesis
    // under the uniform policy.
    let (capability, i_max) = match (&table, cfg.true_hypothesis) {
        (Some(t), TrueHypothesisPolicy::Fixed(h)) => (t.total(h), t.max_total()),
        (Some(t), TrueHypothesisPolicy::Uniform) => (
            t.totals().iter().cloned().fold(f64::INFINITY, f64::min),
            t.max_total(),
        ),
        (None, policy_kind) => {
            let caps: Vec<f64> = (0..policy.hypotheses())
                .map(|h| policy.capability(0, h))
                .collect();
            let cap = match policy_kind {
                TrueHypothesisPolicy::Fixed(h) => caps[h],
                TrueHypothesisPolicy::Uniform => caps.iter().cloned().fold(f64::INFINITY, f64::min),
            };
            let max = caps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (cap, max)
        }
    };
    let bounds = theoretical_bounds(
        cfg.protocol,
        cfg.hypotheses,
        cfg.sensors,
        cfg.cost,
        capability,
        i_max,
        artifacts.as_ref(),
    );

    Ok(CellSetup {
        model,
        policy,
        table,
        graph,
        weights,
        artifacts,
        bounds,
    })
}

fn run_one_trial(
    cfg: &ExperimentConfig,
    setup: &CellSetup,
    cell: u64,
    trial: u64,
) -> Result<TrialRecord> {
    let mut rng = derive_trial_rng(cfg.seed, cell, trial);
    let truth = match cfg.true_hypothesis {
        TrueHypothesisPolicy::Fixed(h) => h,
        TrueHypothesisPolicy::Uniform => rng.random_range(0..cfg.hypotheses),
    };
    let wrap = |cause: Error| Error::TrialFailed {
        trial,
        cause: Box::new(cause),
    };

    match cfg.protocol {
        Protocol::Standard => {
            let gamma = cfg.cost.ln().abs();
            let (decision, n) = crate::engine::run_standard_test_capped(
                &setup.model,
                &setup.policy,
                0,
                gamma,
                truth,
                &mut rng,
                cfg.step_cap,
            )
            .map_err(wrap)?;
            Ok(TrialRecord {
                trial,
                truth,
                decision,
                correct: decision == truth,
                rounds: n,
                phase1_rounds: None,
                trigger_rounds: Vec::new(),
                comms: CommRecord::None,
                capability_estimates: None,
                log: None,
            })
        }
        Protocol::Fct => {
            let gamma = cfg.cost.ln().abs();
            let mut state = SensorTestState::new(cfg.hypotheses, 0);
            let mut activations = vec![0u64; cfg.sensors];
            let mut outcome = None;
            for _ in 0..cfg.step_cap {
                let (action, _) = state.step(&setup.model, &setup.policy, truth, &mut rng);
                let (sensor, _) = fct_action(action, cfg.hypotheses);
                activations[sensor] += 1;
                let stat = state.worst_case_llr();
                if stat.margin >= gamma {
                    outcome = Some((stat.leader, state.steps()));
                    break;
                }
            }
            let (decision, n) = outcome
                .ok_or(Error::StepCapExceeded { cap: cfg.step_cap })
                .map_err(wrap)?;
            // Each activation costs two channel uses: the center's probing
            // command down, the observation back up.
            let comms = CommRecord::PerSensor(activations.iter().map(|a| 2 * a).collect());
            Ok(TrialRecord {
                trial,
                truth,
                decision,
                correct: decision == truth,
                rounds: n,
                phase1_rounds: None,
                trigger_rounds: Vec::new(),
                comms,
                capability_estimates: None,
                log: None,
            })
        }
        Protocol::Dct => {
            let table = setup.table.as_ref().expect("dct setup builds the table");
            let trial_out = run_dct_trial(
                &setup.model,
                &setup.policy,
                table,
                cfg.cost,
                truth,
                &mut rng,
                cfg.step_cap,
            )
            .map_err(wrap)?;
            Ok(TrialRecord {
                trial,
                truth,
                decision: trial_out.decision,
                correct: trial_out.decision == truth,
                rounds: trial_out.rounds,
                phase1_rounds: None,
                trigger_rounds: trial_out.trigger_rounds,
                comms: CommRecord::PerSensor(trial_out.comms),
                capability_estimates: None,
                log: None,
            })
        }
        Protocol::Cct => {
            let table = setup.table.as_ref().expect("cct setup builds the table");
            let graph = setup.graph.as_ref().expect("cct setup builds the graph");
            let weights = setup.weights.as_ref().expect("cct setup builds weights");
            let trial_out = run_cct_trial(
                &setup.model,
                &setup.policy,
                table,
                graph,
                weights,
                cfg.cost,
                truth,
                &mut rng,
                cfg.step_cap,
                cfg.log_events,
            )
            .map_err(wrap)?;
            Ok(TrialRecord {
                trial,
                truth,
                decision: trial_out.decision,
                correct: trial_out.decision == truth,
                rounds: trial_out.rounds,
                phase1_rounds: Some(trial_out.phase1_rounds),
                trigger_rounds: Vec::new(),
                comms: CommRecord::PerPayload(trial_out.messages),
                capability_estimates: Some(trial_out.capability_estimates),
                log: trial_out.log,
            })
        }
    }
}

#[cfg(feature = "parallel")]
fn map_trials<F>(trials: u64, jobs: usize, f: F) -> Result<Vec<TrialRecord>>
where
    F: Fn(u64) -> Result<TrialRecord> + Sync + Send,
{
    if jobs == 1 {
        return (0..trials).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        use rayon::prelude::*;
        (0..trials).into_par_iter().map(f).collect()
    })
}

#[cfg(not(feature = "parallel"))]
fn map_trials<F>(trials: u64, _jobs: usize, f: F) -> Result<Vec<TrialRecord>>
where
    F: Fn(u64) -> Result<TrialRecord> + Sync,
{
    (0..trials).map(f).collect()
}

/// Runs one Monte Carlo block (sweep cell 0).
pub fn run_monte_carlo(cfg: &ExperimentConfig) -> Result<MonteCarloOutput> {
    run_monte_carlo_cell(cfg, 0)
}

/// Output of a Monte Carlo block: the summary plus every trial record.
pub struct MonteCarloOutput {
    pub stats: AggregateStats,
    pub records: Vec<TrialRecord>,
    pub setup: CellSetup,
}

/// Runs one Monte Carlo block under the given sweep cell index (which enters
/// per-trial seed derivation only).
pub fn run_monte_carlo_cell(cfg: &ExperimentConfig, cell: u64) -> Result<MonteCarloOutput> {
    let setup = prepare_cell(cfg)?;
    let records = map_trials(cfg.trials, cfg.jobs, |trial| {
        run_one_trial(cfg, &setup, cell, trial)
    })?;
    let stats = aggregate(cfg, &setup, &records);
    Ok(MonteCarloOutput {
        stats,
        records,
        setup,
    })
}

fn aggregate(cfg: &ExperimentConfig, setup: &CellSetup, records: &[TrialRecord]) -> AggregateStats {
    let trials = records.len() as u64;
    let errors = records.iter().filter(|r| !r.correct).count() as u64;
    let (err_lo, err_hi) = wilson_interval(errors, trials);
    let nf = trials as f64;
    let mean_n = records.iter().map(|r| r.rounds as f64).sum::<f64>() / nf;
    let mean_n2 = records
        .iter()
        .map(|r| (r.rounds as f64) * (r.rounds as f64))
        .sum::<f64>()
        / nf;
    let mean_nc = records
        .iter()
        .map(|r| r.phase1_rounds.unwrap_or(0) as f64)
        .sum::<f64>()
        / nf;
    let risk = records
        .iter()
        .map(|r| cfg.cost * r.rounds as f64 + if r.correct { 0.0 } else { cfg.omega[r.truth] })
        .sum::<f64>()
        / nf;
    let mean_comms = records
        .iter()
        .map(|r| r.comms.mean_per_sensor())
        .sum::<f64>()
        / nf;
    AggregateStats {
        protocol: cfg.protocol,
        hypotheses: cfg.hypotheses,
        sensors: cfg.sensors,
        cost: cfg.cost,
        trials,
        errors,
        err_rate: errors as f64 / nf,
        err_lo,
        err_hi,
        mean_n,
        mean_n2,
        mean_nc,
        risk,
        mean_comms,
        bound_err: setup.bounds.err,
        bound_en: setup.bounds.expected_n,
        bound_nc: setup.bounds.phase1,
        seed: cfg.seed,
    }
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Cost,
    Sensors,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c" | "cost" => Ok(Self::Cost),
            "L" | "l" | "sensors" => Ok(Self::Sensors),
            other => Err(Error::Config(format!("unknown sweep axis `{other}`"))),
        }
    }
}

/// One sweep cell's outcome; failures are recorded and the sweep continues.
pub struct SweepRow {
    pub value: f64,
    pub result: Result<AggregateStats>,
}

/// Runs a Monte Carlo block per axis value. At least two values required.
pub fn sweep(
    template: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
) -> Result<Vec<SweepRow>> {
    if values.len() < 2 {
        return Err(Error::Config("a sweep needs at least two values".into()));
    }
    Ok(values
        .iter()
        .enumerate()
        .map(|(cell, &value)| {
            let mut cfg = template.clone();
            match axis {
                SweepAxis::Cost => cfg.cost = value,
                SweepAxis::Sensors => cfg.sensors = value as usize,
            }
            SweepRow {
                value,
                result: run_monte_carlo_cell(&cfg, cell as u64).map(|out| out.stats),
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// CSV rendering
// ---------------------------------------------------------------------------

pub const CSV_HEADER: &str = "protocol,M,L,c,trials,err_rate,err_lo,err_hi,mean_N,mean_N2,mean_Nc,risk,mean_comms,bound_err,bound_EN,bound_Nc,seed";

impl AggregateStats {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.protocol.as_str(),
            self.hypotheses,
            self.sensors,
            self.cost,
            self.trials,
            self.err_rate,
            self.err_lo,
            self.err_hi,
            self.mean_n,
            self.mean_n2,
            self.mean_nc,
            self.risk,
            self.mean_comms,
            self.bound_err,
            self.bound_en,
            self.bound_nc,
            self.seed
        )
    }
}

/// Renders rows under the fixed header.
pub fn to_csv(rows: &[AggregateStats]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_row());
        out.push('\n');
    }
    out
}

/// Renders per-(round, sensor) trial events in the documented schema:
/// `trial,round,sensor,event,payload`. Estimates join entries with `;`.
pub fn event_log_csv(records: &[TrialRecord]) -> String {
    let mut out = String::from("trial,round,sensor,event,payload\n");
    for record in records {
        let Some(log) = &record.log else { continue };
        for ev in &log.events {
            let (event, payload) = match &ev.kind {
                CctEventKind::ConsensusEst(est) => (
                    "est",
                    est.iter()
                        .map(|v| v.to_string())
                        .collect::<Vec<_>>()
                        .join(";"),
                ),
                CctEventKind::Phase1Done => ("phase1_done", String::new()),
                CctEventKind::Decision(d) => (
                    "decision",
                    d.map(|h| h.to_string()).unwrap_or_else(|| "-".into()),
                ),
                CctEventKind::Counters { x, d } => ("counters", format!("{x};{d}")),
                CctEventKind::Halt(h) => ("halt", h.to_string()),
            };
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                record.trial, ev.round, ev.sensor, event, payload
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topology_l10_is_a_five_ring_with_five_pendants() {
        let g = generate_topology(10, 7).unwrap();
        assert_eq!(g.sensors(), 10);
        assert_eq!(g.edge_count(), 10, "five ring edges plus five pendants");
        // Ring nodes 0..5 each have two ring neighbors; pendants have one.
        for pendant in 5..10 {
            assert_eq!(g.degree(pendant), 1);
        }
        for node in 0..5 {
            assert!(g.degree(node) >= 2);
        }
    }

    #[test]
    fn topology_l3_is_a_triangle() {
        let g = generate_topology(3, 1).unwrap();
        assert_eq!(g.edge_count(), 3);
        assert_eq!(g.diameter(), 1);
    }

    #[test]
    fn generated_topologies_are_connected_for_a_thousand_seeds() {
        for seed in 0..1000 {
            let l = 3 + (seed % 20) as usize;
            // NetworkGraph::new validates connectivity internally.
            let g = generate_topology(l, seed).unwrap();
            assert_eq!(g.sensors(), l);
        }
    }

    #[test]
    fn small_networks_fall_back_to_path_shapes() {
        assert_eq!(generate_topology(1, 0).unwrap().edge_count(), 0);
        assert_eq!(generate_topology(2, 0).unwrap().edge_count(), 1);
        assert!(generate_topology(0, 0).is_err());
    }

    #[test]
    fn bernoulli_parameters_land_in_their_slices() {
        let model = generate_bernoulli_model(3, 4, 99).unwrap();
        for hyp in 0..3 {
            for sensor in 0..4 {
                for action in 0..3 {
                    let p = model.dist(hyp, sensor, action).prob(1);
                    let lo = hyp as f64 / 3.0;
                    let hi = (hyp + 1) as f64 / 3.0;
                    assert!(
                        p >= lo - 1e-12 && p <= hi + 1e-12,
                        "p = {p} outside slice [{lo}, {hi}]"
                    );
                }
            }
        }
    }

    #[test]
    fn generated_models_have_positive_capabilities() {
        for seed in 0..1000 {
            let model = generate_bernoulli_model(3, 2, seed).unwrap();
            model.check_separability().unwrap();
        }
        // Spot-check the actual capabilities on a few seeds; the parameter
        // slices are disjoint so every pair separates.
        for seed in 0..50 {
            let model = generate_bernoulli_model(3, 2, seed).unwrap();
            let policy = PolicyTable::build(&model);
            for sensor in 0..2 {
                for hyp in 0..3 {
                    assert!(policy.capability(sensor, hyp) > 0.0);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_model() {
        let a = generate_bernoulli_model(3, 5, 1234).unwrap();
        let b = generate_bernoulli_model(3, 5, 1234).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn model_json_round_trip() {
        let model = generate_bernoulli_model(3, 2, 5).unwrap();
        let text = model_to_json(&model);
        let back = model_from_json(&text).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn trial_rngs_are_independent_across_indices() {
        let a: Vec<u64> = {
            let mut rng = derive_trial_rng(1, 0, 0);
            (0..8).map(|_| rng.random()).collect()
        };
        let b: Vec<u64> = {
            let mut rng = derive_trial_rng(1, 0, 1);
            (0..8).map(|_| rng.random()).collect()
        };
        let c: Vec<u64> = {
            let mut rng = derive_trial_rng(1, 1, 0);
            (0..8).map(|_| rng.random()).collect()
        };
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(b, c);
        let a2: Vec<u64> = {
            let mut rng = derive_trial_rng(1, 0, 0);
            (0..8).map(|_| rng.random()).collect()
        };
        assert_eq!(a, a2);
    }

    #[test]
    fn wilson_interval_brackets_the_point_estimate() {
        let (lo, hi) = wilson_interval(0, 100);
        assert!(lo.abs() < 1e-12);
        assert!(hi > 0.0 && hi < 0.05);
        let (lo, hi) = wilson_interval(50, 100);
        assert!(lo < 0.5 && hi > 0.5);
        assert!(hi - lo < 0.21);
    }

    #[test]
    fn bounds_examples() {
        let report = theoretical_bounds(Protocol::Dct, 3, 5, 0.01, 2.0, 2.0, None);
        assert!((report.err - 0.02).abs() < 1e-12);
        assert!((report.expected_n - 0.01f64.ln().abs() / 2.0).abs() < 1e-12);
        assert!((report.expected_n - 2.302_585_092_994_046).abs() < 1e-12);
    }

    #[test]
    fn cct_error_bound_is_no_weaker_than_dct() {
        // The exponent 1 / (1 - c/I) exceeds one for 0 < c < I, so the cct
        // bound sits at or below (M - 1) c on a grid.
        for &c in &[0.1, 0.03, 0.01, 0.003, 0.001] {
            for &i in &[0.5, 1.0, 2.0, 5.0] {
                if c >= i {
                    continue;
                }
                let g = GraphArtifacts {
                    diameter: 3,
                    radius: 2,
                    eta_w: 0.2,
                    eta_w_pow_radius: 0.3,
                };
                let cct = theoretical_bounds(Protocol::Cct, 3, 6, c, i, i, Some(&g));
                let dct = theoretical_bounds(Protocol::Dct, 3, 6, c, i, i, None);
                assert!(cct.err <= dct.err + 1e-15, "c={c} I={i}");
            }
        }
    }

    #[test]
    fn single_trial_monte_carlo_reduces_to_one_run() {
        let mut cfg = ExperimentConfig::new(Protocol::Dct, 3, 5, 0.05);
        cfg.trials = 1;
        cfg.seed = 11;
        let out = run_monte_carlo(&cfg).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.stats.trials, 1);
        let r = &out.records[0];
        assert_eq!(out.stats.mean_n, r.rounds as f64);
        assert_eq!(out.stats.err_rate, if r.correct { 0.0 } else { 1.0 });
    }

    #[test]
    fn aggregation_is_independent_of_worker_count() {
        let mut cfg = ExperimentConfig::new(Protocol::Dct, 3, 4, 0.03);
        cfg.trials = 64;
        cfg.seed = 21;
        cfg.jobs = 1;
        let seq = run_monte_carlo(&cfg).unwrap();
        cfg.jobs = 4;
        let par = run_monte_carlo(&cfg).unwrap();
        assert_eq!(seq.stats, par.stats);
        assert_eq!(to_csv(&[seq.stats.clone()]), to_csv(&[par.stats.clone()]));
    }

    #[test]
    fn csv_is_reproducible_byte_for_byte() {
        let mut cfg = ExperimentConfig::new(Protocol::Cct, 3, 6, 0.05);
        cfg.trials = 16;
        cfg.seed = 33;
        let a = to_csv(&[run_monte_carlo(&cfg).unwrap().stats]);
        let b = to_csv(&[run_monte_carlo(&cfg).unwrap().stats]);
        assert_eq!(a, b);
        assert!(a.starts_with(CSV_HEADER));
    }

    #[test]
    fn sweep_reports_per_cell_failures_without_aborting() {
        let mut cfg = ExperimentConfig::new(Protocol::Dct, 3, 3, 0.05);
        cfg.trials = 4;
        cfg.seed = 3;
        let rows = sweep(&cfg, SweepAxis::Cost, &[0.1, 2.0]).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].result.is_ok());
        assert!(rows[1].result.is_err(), "c = 2.0 is invalid and must fail");
        assert!(sweep(&cfg, SweepAxis::Cost, &[0.1]).is_err());
    }

    #[test]
    fn measured_time_respects_the_converse_floor() {
        // No consistent test decides faster than |ln c| / I to leading
        // order; at desk scale a loose factor-half proxy must hold.
        let mut cfg = ExperimentConfig::new(Protocol::Dct, 3, 5, 0.001);
        cfg.trials = 2_000;
        cfg.seed = 71;
        let out = run_monte_carlo(&cfg).unwrap();
        let i_true = out.setup.table.as_ref().unwrap().total(0);
        let floor = 0.5 * cfg.cost.ln().abs() / i_true;
        assert!(
            out.stats.mean_n >= floor,
            "mean_N {} under the converse proxy {floor}",
            out.stats.mean_n
        );
    }

    #[test]
    fn fct_total_samples_undercut_dct() {
        // One active sensor per step makes the fusion-center test the
        // total-sample benchmark: L * mean_N for dct, mean_N for fct.
        let mut dct = ExperimentConfig::new(Protocol::Dct, 3, 5, 0.01);
        dct.trials = 3_000;
        dct.seed = 71;
        let dct_out = run_monte_carlo(&dct).unwrap();
        let mut fct = dct.clone();
        fct.protocol = Protocol::Fct;
        let fct_out = run_monte_carlo(&fct).unwrap();
        let dct_samples = 5.0 * dct_out.stats.mean_n;
        let fct_samples = fct_out.stats.mean_n;
        assert!(
            fct_samples <= 1.1 * dct_samples,
            "fct used {fct_samples} samples vs dct {dct_samples}"
        );
    }

    #[test]
    fn event_log_csv_has_the_documented_shape() {
        let mut cfg = ExperimentConfig::new(Protocol::Cct, 3, 4, 0.05);
        cfg.trials = 2;
        cfg.seed = 9;
        cfg.log_events = true;
        let out = run_monte_carlo(&cfg).unwrap();
        let csv = event_log_csv(&out.records);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("trial,round,sensor,event,payload"));
        let body: Vec<&str> = lines.collect();
        assert!(!body.is_empty());
        assert!(body.iter().any(|l| l.contains(",est,")));
        assert!(body.iter().any(|l| l.contains(",phase1_done,")));
        assert!(body.iter().any(|l| l.contains(",halt,")));
        for line in body {
            assert_eq!(line.split(',').count(), 5, "bad line: {line}");
        }
    }
}
