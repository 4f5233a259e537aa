//! Command-line front end: single Monte Carlo blocks, sweeps, bound reports,
//! and graph validation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chernoff_net::config::{
    apply_config_text, parse_model, parse_topology, render_config, set_key,
};
use chernoff_net::harness::{
    event_log_csv, run_monte_carlo, sweep, to_csv, AggregateStats, ExperimentConfig,
    GraphArtifacts, Protocol, SweepAxis, TrueHypothesisPolicy,
};
use chernoff_net::network::{
    check_cct_conditions, ergodic_coefficient, metropolis_weights, validate_weights, NetworkGraph,
};
use chernoff_net::{Error, Result};

#[derive(Parser)]
#[command(
    name = "chernoff-net",
    version,
    about = "Sequential adaptive hypothesis testing over sensor networks",
    long_about = "Runs seeded Monte Carlo experiments for the standard, fusion-center (fct), \
decentralized (dct), and consensus-based (cct) sequential tests, sweeps them over the \
observation cost or the network size, evaluates the theoretical bounds, and validates \
consensus weight matrices on network graphs."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one Monte Carlo block and emit CSV (or JSON) stats.
    Run(RunArgs),
    /// Run one Monte Carlo block per value of a swept axis.
    Sweep(SweepArgs),
    /// Print the theoretical bound values for a configuration.
    Bounds(BoundsArgs),
    /// Check a graph file (or a generated topology): metrics, weights,
    /// ergodic coefficients, and the consensus sufficient conditions.
    ValidateGraph(ValidateGraphArgs),
}

/// Experiment settings; flags override config-file values.
#[derive(Args, Clone)]
struct ExperimentFlags {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// standard | fct | dct | cct
    #[arg(long)]
    protocol: Option<String>,
    /// Hypothesis count.
    #[arg(long = "M", id = "M")]
    hypotheses: Option<usize>,
    /// Sensor count.
    #[arg(long = "L", id = "L")]
    sensors: Option<usize>,
    /// Observation cost per unit time, in (0, 1).
    #[arg(long)]
    c: Option<f64>,
    /// Comma-separated wrong-decision costs, one per hypothesis.
    #[arg(long)]
    omega: Option<String>,
    #[arg(long)]
    trials: Option<u64>,
    /// Master seed; mandatory (no wall-clock default), so every number is
    /// replayable.
    #[arg(long)]
    seed: Option<u64>,
    /// generated | file:<path>
    #[arg(long)]
    topology: Option<String>,
    /// bernoulli | file:<path>
    #[arg(long)]
    model: Option<String>,
    /// Hypothesis index, or `uniform` for a per-trial draw.
    #[arg(long = "true-hypothesis")]
    true_hypothesis: Option<String>,
    /// Write the per-round event log next to the output file.
    #[arg(long = "log-events")]
    log_events: bool,
    /// Worker threads (0 = all cores, 1 = sequential).
    #[arg(long, env = "CHERNOFF_NET_JOBS")]
    jobs: Option<usize>,
    /// Slack multiplier for bound checks.
    #[arg(long)]
    slack: Option<f64>,
    /// Per-trial round cap.
    #[arg(long = "step-cap")]
    step_cap: Option<u64>,
}

impl ExperimentFlags {
    /// defaults -> config file -> flags, tracking whether a seed appeared.
    fn build(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::new(Protocol::Dct, 3, 5, 0.01);
        cfg.trials = 1000;
        let mut seed_set = false;
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            seed_set |= config_text_sets_seed(&text);
            cfg = apply_config_text(cfg, &text)?;
        }
        if let Some(v) = &self.protocol {
            cfg.protocol = v.parse()?;
        }
        if let Some(v) = self.hypotheses {
            cfg.hypotheses = v;
            if cfg.omega.len() != v {
                cfg.omega = vec![1.0; v];
            }
        }
        if let Some(v) = self.sensors {
            cfg.sensors = v;
        }
        if let Some(v) = self.c {
            cfg.cost = v;
        }
        if let Some(v) = &self.omega {
            set_key(&mut cfg, "omega", v)?;
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
            seed_set = true;
        }
        if let Some(v) = &self.topology {
            cfg.topology = parse_topology(v)?;
        }
        if let Some(v) = &self.model {
            cfg.model = parse_model(v)?;
        }
        if let Some(v) = &self.true_hypothesis {
            cfg.true_hypothesis = if v == "uniform" {
                TrueHypothesisPolicy::Uniform
            } else {
                TrueHypothesisPolicy::Fixed(
                    v.parse()
                        .map_err(|e| Error::Config(format!("bad true-hypothesis `{v}`: {e}")))?,
                )
            };
        }
        if self.log_events {
            cfg.log_events = true;
        }
        if let Some(v) = self.jobs {
            cfg.jobs = v;
        }
        if let Some(v) = self.slack {
            cfg.slack = Some(v);
        }
        if let Some(v) = self.step_cap {
            cfg.step_cap = v;
        }
        if !seed_set {
            return Err(Error::Config(
                "a master seed is required: pass --seed or set seed= in the config".into(),
            ));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn config_text_sets_seed(text: &str) -> bool {
    text.lines().any(|raw| {
        let line = raw.split('#').next().unwrap_or("").trim();
        line.split_once('=')
            .map(|(k, _)| k.trim() == "seed")
            .unwrap_or(false)
    })
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    flags: ExperimentFlags,
    /// Output path (.csv or .json). Stats print to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Echo the effective config (replayable key=value form) and exit.
    #[arg(long = "print-config")]
    print_config: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    flags: ExperimentFlags,
    /// Swept axis: c | L
    #[arg(long)]
    axis: String,
    /// Comma-separated axis values.
    #[arg(long)]
    values: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    /// standard | fct | dct | cct
    #[arg(long, default_value = "dct")]
    protocol: String,
    #[arg(long = "M", id = "M", default_value_t = 3)]
    hypotheses: usize,
    #[arg(long = "L", id = "L", default_value_t = 5)]
    sensors: usize,
    #[arg(long)]
    c: f64,
    /// Cumulative capability I(i) of the conditioned hypothesis, in nats.
    #[arg(long = "I", id = "I")]
    capability: f64,
    /// Largest I(j) over hypotheses; defaults to --I.
    #[arg(long = "Imax", id = "Imax")]
    capability_max: Option<f64>,
    /// Graph file for the cct consensus terms.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Seed for a generated topology when no graph file is given.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ValidateGraphArgs {
    /// Edge-list file (`L <count>` header, one `a b` pair per line).
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Generate the experiment topology instead of reading a file.
    #[arg(long = "L", id = "L")]
    sensors: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated cumulative capabilities I(i) for the sufficient
    /// conditions report.
    #[arg(long = "I", id = "I")]
    capabilities: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Bounds(args) => cmd_bounds(args),
        Command::ValidateGraph(args) => cmd_validate_graph(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::InvalidEdge { .. }
        | Error::Disconnected
        | Error::InvalidDistribution { .. }
        | Error::DimensionMismatch { .. }
        | Error::Indistinguishable { .. }
        | Error::ZeroCapability { .. } => 2,
        Error::StepCapExceeded { .. }
        | Error::TrialFailed { .. }
        | Error::Io(_)
        | Error::InfiniteDivergence { .. }
        | Error::BadEstimate { .. } => 3,
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let cfg = args.flags.build()?;
    if args.print_config {
        print!("{}", render_config(&cfg));
        return Ok(ExitCode::SUCCESS);
    }
    if cfg.log_events && args.out.is_none() {
        return Err(Error::Config(
            "--log-events needs --out to name the event file".into(),
        ));
    }
    let out = run_monte_carlo(&cfg)?;
    emit_stats(std::slice::from_ref(&out.stats), args.out.as_deref())?;
    if cfg.log_events {
        let path = args.out.as_ref().expect("checked above");
        let events_path = path.with_file_name(format!(
            "{}.events.csv",
            path.file_stem().and_then(|s| s.to_str()).unwrap_or("run")
        ));
        write_atomic(&events_path, &event_log_csv(&out.records))?;
        println!("events: {}", events_path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode> {
    let cfg = args.flags.build()?;
    let axis: SweepAxis = args.axis.parse()?;
    let values: Vec<f64> = args
        .values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad sweep value `{v}`: {e}")))
        })
        .collect::<Result<_>>()?;
    let rows = sweep(&cfg, axis, &values)?;
    let mut ok_rows = Vec::new();
    let mut failures = 0;
    for row in &rows {
        match &row.result {
            Ok(stats) => ok_rows.push(stats.clone()),
            Err(e) => {
                failures += 1;
                eprintln!("cell {}={} failed: {e}", args.axis, row.value);
            }
        }
    }
    emit_stats(&ok_rows, args.out.as_deref())?;
    if failures > 0 {
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bounds(args: BoundsArgs) -> Result<ExitCode> {
    let protocol: Protocol = args.protocol.parse()?;
    let i_max = args.capability_max.unwrap_or(args.capability);
    let artifacts = match (&args.graph, protocol) {
        (Some(path), _) => {
            let g = NetworkGraph::from_edge_list_text(&std::fs::read_to_string(path)?)?;
            let w = metropolis_weights(&g);
            Some(GraphArtifacts::from_graph(&g, &w))
        }
        (None, Protocol::Cct) => {
            let seed = args.seed.ok_or_else(|| {
                Error::Config("cct bounds need --graph or --seed for a generated topology".into())
            })?;
            let g = chernoff_net::harness::generate_topology(args.sensors, seed)?;
            let w = metropolis_weights(&g);
            Some(GraphArtifacts::from_graph(&g, &w))
        }
        _ => None,
    };
    let report = chernoff_net::harness::theoretical_bounds(
        protocol,
        args.hypotheses,
        args.sensors,
        args.c,
        args.capability,
        i_max,
        artifacts.as_ref(),
    );
    println!("bound_err = {}", fmt_short(report.err));
    println!("bound_EN = {}", fmt_short(report.expected_n));
    if protocol == Protocol::Cct {
        println!("bound_Nc = {}", fmt_short(report.phase1));
    }
    println!("converse_EN = {}", fmt_short(report.converse_n));
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate_graph(args: ValidateGraphArgs) -> Result<ExitCode> {
    let graph = match (&args.graph, args.sensors) {
        (Some(path), _) => NetworkGraph::from_edge_list_text(&std::fs::read_to_string(path)?)?,
        (None, Some(l)) => {
            let seed = args
                .seed
                .ok_or_else(|| Error::Config("generated topology needs --seed".into()))?;
            if l < 3 {
                eprintln!("warning: L < 3 has no ring; using the path fallback");
            }
            chernoff_net::harness::generate_topology(l, seed)?
        }
        (None, None) => {
            return Err(Error::Config(
                "pass --graph <file> or --L <n> --seed <s>".into(),
            ))
        }
    };
    let weights = metropolis_weights(&graph);
    let report = validate_weights(&weights, &graph);
    let radius = graph.radius().max(1);
    let eta_w = ergodic_coefficient(&weights);
    let eta_wh = ergodic_coefficient(&weights.pow(radius));
    println!("L = {}", graph.sensors());
    println!("edges = {}", graph.edge_count());
    println!("diameter = {}", graph.diameter());
    println!("radius = {}", radius);
    println!("eta_W = {}", fmt_short(eta_w));
    println!("eta_W_radius = {}", fmt_short(eta_wh));
    println!(
        "weights: row_ok={} col_ok={} support_ok={} spectral_radius={}{}",
        report.row_ok,
        report.col_ok,
        report.support_ok,
        fmt_short(report.spectral_radius),
        if report.converged {
            ""
        } else {
            " (power iteration did not converge)"
        }
    );
    println!("eta_interior = {}", eta_wh > 0.0 && eta_wh < 1.0);
    if let Some(caps) = &args.capabilities {
        let cumulative: Vec<f64> = caps
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad capability `{v}`: {e}")))
            })
            .collect::<Result<_>>()?;
        let cond = check_cct_conditions(&cumulative, &weights, &graph);
        println!(
            "conditions: (i) {} [rhs {}], (ii) {} [rhs {}], (iii) {} [rhs {}]",
            cond.holds_i,
            fmt_short(cond.rhs_i),
            cond.holds_ii,
            fmt_short(cond.rhs_ii),
            cond.holds_iii,
            fmt_short(cond.rhs_iii),
        );
    }
    if !report.all_ok() {
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn emit_stats(rows: &[AggregateStats], out: Option<&Path>) -> Result<()> {
    match out {
        None => {
            print!("{}", to_csv(rows));
            Ok(())
        }
        Some(path) => {
            let rendered = if path.extension().and_then(|e| e.to_str()) == Some("json") {
                serde_json::to_string_pretty(rows).map_err(|e| Error::Io(e.to_string()))? + "\n"
            } else {
                to_csv(rows)
            };
            write_atomic(path, &rendered)?;
            for row in rows {
                println!(
                    "{} M={} L={} c={} trials={}: err={} mean_N={} -> {}",
                    row.protocol.as_str(),
                    row.hypotheses,
                    row.sensors,
                    row.cost,
                    row.trials,
                    row.err_rate,
                    row.mean_n,
                    path.display()
                );
            }
            Ok(())
        }
    }
}

/// Write-to-temp then rename, so failures never leave a partial file.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let file_name = path
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Io(format!("bad output path {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Four decimals, trailing zeros trimmed.
fn fmt_short(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".into()
    } else {
        s.to_string()
    }
}
