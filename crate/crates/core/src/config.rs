//! Flat `key=value` experiment config files.
//!
//! One assignment per line, `#` comments, keys mirroring the experiment
//! fields (`protocol`, `M`, `L`, `c`, `omega`, `trials`, `seed`, `topology`,
//! `model`, `true_hypothesis`, `log_events`, `jobs`, `slack`, `step_cap`).
//! Unknown keys are rejected with a line diagnostic. A rendered config
//! re-parses to the same experiment, which keeps printed configs replayable.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::harness::{ExperimentConfig, ModelSpec, TopologySpec, TrueHypothesisPolicy};

/// Parses config text into an experiment, starting from `base` so that
/// partial files (or CLI flag layering) work naturally.
pub fn apply_config_text(base: ExperimentConfig, text: &str) -> Result<ExperimentConfig> {
    let mut cfg = base;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected key=value, got `{line}`",
                lineno + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        set_key(&mut cfg, key, value)
            .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
    }
    Ok(cfg)
}

/// Applies one assignment; shared by the file parser and flag layering.
pub fn set_key(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "protocol" => cfg.protocol = value.parse()?,
        "M" => cfg.hypotheses = parse_num(key, value)?,
        "L" => cfg.sensors = parse_num(key, value)?,
        "c" => cfg.cost = parse_num(key, value)?,
        "omega" => {
            cfg.omega = value
                .split(',')
                .map(|v| parse_num("omega entry", v.trim()))
                .collect::<Result<Vec<f64>>>()?;
        }
        "trials" => cfg.trials = parse_num(key, value)?,
        "seed" => cfg.seed = parse_num(key, value)?,
        "topology" => cfg.topology = parse_topology(value)?,
        "model" => cfg.model = parse_model(value)?,
        "true_hypothesis" => {
            cfg.true_hypothesis = if value == "uniform" {
                TrueHypothesisPolicy::Uniform
            } else {
                TrueHypothesisPolicy::Fixed(parse_num("true_hypothesis", value)?)
            };
        }
        "log_events" => {
            cfg.log_events = match value {
                "true" | "1" => true,
                "false" | "0" => false,
                other => {
                    return Err(Error::Config(format!(
                        "log_events must be true or false, got `{other}`"
                    )))
                }
            };
        }
        "jobs" => cfg.jobs = parse_num(key, value)?,
        "slack" => cfg.slack = Some(parse_num(key, value)?),
        "step_cap" => cfg.step_cap = parse_num(key, value)?,
        other => return Err(Error::Config(format!("unknown key `{other}`"))),
    }
    Ok(())
}

pub fn parse_topology(value: &str) -> Result<TopologySpec> {
    if value == "generated" {
        Ok(TopologySpec::Generated)
    } else if let Some(path) = value.strip_prefix("file:") {
        Ok(TopologySpec::File(PathBuf::from(path)))
    } else {
        Err(Error::Config(format!(
            "topology must be `generated` or `file:<path>`, got `{value}`"
        )))
    }
}

pub fn parse_model(value: &str) -> Result<ModelSpec> {
    if value == "bernoulli" {
        Ok(ModelSpec::Bernoulli)
    } else if let Some(path) = value.strip_prefix("file:") {
        Ok(ModelSpec::File(PathBuf::from(path)))
    } else {
        Err(Error::Config(format!(
            "model must be `bernoulli` or `file:<path>`, got `{value}`"
        )))
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad {key} `{value}`: {e}")))
}

/// Renders an experiment back into the flat format. Round-trips through
/// [`apply_config_text`].
pub fn render_config(cfg: &ExperimentConfig) -> String {
    let topology = match &cfg.topology {
        TopologySpec::Generated => "generated".to_string(),
        TopologySpec::File(p) => format!("file:{}", p.display()),
    };
    let model = match &cfg.model {
        ModelSpec::Bernoulli => "bernoulli".to_string(),
        ModelSpec::File(p) => format!("file:{}", p.display()),
    };
    let truth = match cfg.true_hypothesis {
        TrueHypothesisPolicy::Uniform => "uniform".to_string(),
        TrueHypothesisPolicy::Fixed(h) => h.to_string(),
    };
    let omega = cfg
        .omega
        .iter()
        .map(|w| w.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let mut out = String::new();
    out.push_str(&format!("protocol={}\n", cfg.protocol.as_str()));
    out.push_str(&format!("M={}\n", cfg.hypotheses));
    out.push_str(&format!("L={}\n", cfg.sensors));
    out.push_str(&format!("c={}\n", cfg.cost));
    out.push_str(&format!("omega={omega}\n"));
    out.push_str(&format!("trials={}\n", cfg.trials));
    out.push_str(&format!("seed={}\n", cfg.seed));
    out.push_str(&format!("topology={topology}\n"));
    out.push_str(&format!("model={model}\n"));
    out.push_str(&format!("true_hypothesis={truth}\n"));
    out.push_str(&format!("log_events={}\n", cfg.log_events));
    out.push_str(&format!("jobs={}\n", cfg.jobs));
    if let Some(slack) = cfg.slack {
        out.push_str(&format!("slack={slack}\n"));
    }
    out.push_str(&format!("step_cap={}\n", cfg.step_cap));
    out
}
