//! Scenario files: a TOML document with one `[params]` table and one table
//! for the selected experiment.
//!
//! ```toml
//! name = "cycle-default"
//! experiment = "cycle"        # ode | cycle | sde | chaos | entropy | full-suite
//! seed = 7
//!
//! [params]
//! pe = 0.6
//! a = 0.5
//! n_conc = 2.0
//!
//! [cycle]
//! eps1 = 0.05
//! eps2 = 0.05
//! ```
//!
//! Unknown keys anywhere are errors, and a table for an experiment other
//! than the selected one is rejected.

use crate::chaos::{ChaosConfig, LawSource};
use crate::error::{Result, RodError};
use crate::linalg::Mat;
use crate::ode::{OdeConfig, OdeMethod};
use crate::sde::{Scheme, SdeConfig};
use crate::suite::{criterion, SuiteOptions, CRITERIA};
use crate::types::{ModelParams, ModelTag};
use serde::Deserialize;
use std::path::PathBuf;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Ode,
    Cycle,
    Sde,
    Chaos,
    Entropy,
    FullSuite,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Ode => "ode",
            ExperimentKind::Cycle => "cycle",
            ExperimentKind::Sde => "sde",
            ExperimentKind::Chaos => "chaos",
            ExperimentKind::Entropy => "entropy",
            ExperimentKind::FullSuite => "full-suite",
        }
    }

    fn section(&self) -> &'static str {
        match self {
            ExperimentKind::FullSuite => "suite",
            other => other.as_str(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    experiment: ExperimentKind,
    seed: Option<u64>,
    output_dir: Option<String>,
    params: Option<RawParams>,
    ode: Option<RawOde>,
    cycle: Option<RawCycle>,
    sde: Option<RawSde>,
    chaos: Option<RawChaos>,
    entropy: Option<RawEntropy>,
    suite: Option<RawSuite>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    pe: Option<f64>,
    a: Option<f64>,
    n_conc: Option<f64>,
    length: Option<f64>,
    dim: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOde {
    method: Option<String>,
    step: Option<f64>,
    t_end: Option<f64>,
    stride: Option<usize>,
    rel_tol: Option<f64>,
    abs_tol: Option<f64>,
    m0: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCycle {
    eps1: Option<f64>,
    eps2: Option<f64>,
    step: Option<f64>,
    tol: Option<f64>,
    x0: Option<f64>,
    fd_sections: Option<usize>,
    horizon: Option<f64>,
    starts: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSde {
    model: Option<String>,
    scheme: Option<String>,
    step: Option<f64>,
    t_end: Option<f64>,
    n_particles: Option<usize>,
    stride: Option<usize>,
    m0: Option<Vec<f64>>,
    resume_from: Option<String>,
    save_checkpoint: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChaos {
    replica_counts: Option<Vec<usize>>,
    trials: Option<usize>,
    horizon: Option<f64>,
    step: Option<f64>,
    y_oracle_particles: Option<usize>,
    maier_saupe: Option<bool>,
    law: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntropy {
    step: Option<f64>,
    t_end: Option<f64>,
    stride: Option<usize>,
    m1: Option<Vec<f64>>,
    m2: Option<Vec<f64>>,
    psi_start: Option<[f64; 2]>,
    eps1: Option<f64>,
    eps2: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSuite {
    criteria: Option<Vec<String>>,
    sde_step: Option<f64>,
    sde_particles: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OdeSpec {
    pub config: OdeConfig<f64>,
    pub m0: Mat<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CycleSpec {
    pub eps1: f64,
    pub eps2: f64,
    pub step: f64,
    pub tol: f64,
    pub x0: Option<f64>,
    pub fd_sections: usize,
    /// Horizon for the convergence-rate runs from `starts`.
    pub horizon: f64,
    pub starts: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdeSpec {
    pub model: ModelTag,
    pub config: SdeConfig<f64>,
    /// Covariance of the Gaussian initial ensemble before it is projected
    /// onto the model's constraint.
    pub m0: Mat<f64>,
    pub resume_from: Option<PathBuf>,
    pub save_checkpoint: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntropySpec {
    pub config: OdeConfig<f64>,
    pub m1: Mat<f64>,
    pub m2: Mat<f64>,
    pub psi_start: Option<[f64; 2]>,
    pub eps1: f64,
    pub eps2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteSpec {
    pub criteria: Vec<String>,
    pub options: SuiteOptions,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Experiment {
    Ode(OdeSpec),
    Cycle(CycleSpec),
    Sde(SdeSpec),
    Chaos(ChaosConfig),
    Entropy(EntropySpec),
    FullSuite(SuiteSpec),
}

impl Experiment {
    pub fn kind(&self) -> ExperimentKind {
        match self {
            Experiment::Ode(_) => ExperimentKind::Ode,
            Experiment::Cycle(_) => ExperimentKind::Cycle,
            Experiment::Sde(_) => ExperimentKind::Sde,
            Experiment::Chaos(_) => ExperimentKind::Chaos,
            Experiment::Entropy(_) => ExperimentKind::Entropy,
            Experiment::FullSuite(_) => ExperimentKind::FullSuite,
        }
    }
}

pub const DEFAULT_SEED: u64 = 7;

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub params: ModelParams<f64>,
    pub experiment: Experiment,
    /// The parsed document, kept for the run manifest and for sweeps.
    pub source: toml::Table,
}

fn config_error(msg: impl Into<String>) -> RodError {
    RodError::Config(msg.into())
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| config_error(describe_toml_error(text, &e)))?;
    let raw: RawScenario =
        toml::from_str(text).map_err(|e: toml::de::Error| config_error(describe_toml_error(text, &e)))?;
    build(raw, table).map_err(as_config)
}

/// `line L, column C: message` for a TOML parse or schema error.
fn describe_toml_error(text: &str, e: &toml::de::Error) -> String {
    let msg = e.message().trim().to_string();
    match e.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
            format!("line {line}, column {col}: {msg}")
        }
        None => msg,
    }
}

pub fn scenario_from_table(table: toml::Table) -> Result<Scenario> {
    let raw: RawScenario = toml::Value::Table(table.clone())
        .try_into()
        .map_err(|e: toml::de::Error| config_error(e.message().trim().to_string()))?;
    build(raw, table).map_err(as_config)
}

/// Anything rejected while validating a scenario is a configuration error.
fn as_config(e: RodError) -> RodError {
    match e {
        RodError::Config(_) | RodError::InvalidParam { .. } => e,
        other => RodError::Config(other.to_string()),
    }
}

fn build(raw: RawScenario, table: toml::Table) -> Result<Scenario> {
    let name = raw.name.trim().to_string();
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) || name.starts_with('.') {
        return Err(RodError::param("name", "nonempty, only [A-Za-z0-9._-], not starting with '.'", raw.name));
    }
    let kind = raw.experiment;
    let present = [
        ("ode", raw.ode.is_some()),
        ("cycle", raw.cycle.is_some()),
        ("sde", raw.sde.is_some()),
        ("chaos", raw.chaos.is_some()),
        ("entropy", raw.entropy.is_some()),
        ("suite", raw.suite.is_some()),
    ];
    for (section, is_set) in present {
        if is_set && section != kind.section() {
            return Err(config_error(format!(
                "section [{section}] does not apply to experiment `{}`",
                kind.as_str()
            )));
        }
    }
    let rp = raw.params.unwrap_or_default();
    let params = ModelParams::new(
        rp.pe.unwrap_or(0.6),
        rp.a.unwrap_or(0.5),
        rp.n_conc.unwrap_or(2.0),
        rp.length.unwrap_or(1.0),
        rp.dim.unwrap_or(2),
    )?;
    let seed = raw.seed.unwrap_or(DEFAULT_SEED);
    let experiment = match kind {
        ExperimentKind::Ode => Experiment::Ode(ode_spec(raw.ode.unwrap_or_default(), &params)?),
        ExperimentKind::Cycle => Experiment::Cycle(cycle_spec(raw.cycle.unwrap_or_default())?),
        ExperimentKind::Sde => Experiment::Sde(sde_spec(raw.sde.unwrap_or_default(), &params, seed)?),
        ExperimentKind::Chaos => Experiment::Chaos(chaos_config(raw.chaos.unwrap_or_default(), seed)?),
        ExperimentKind::Entropy => Experiment::Entropy(entropy_spec(raw.entropy.unwrap_or_default(), &params)?),
        ExperimentKind::FullSuite => Experiment::FullSuite(suite_spec(raw.suite.unwrap_or_default(), seed)?),
    };
    Ok(Scenario {
        name,
        seed,
        output_dir: raw.output_dir.map(PathBuf::from),
        params,
        experiment,
        source: table,
    })
}

/// Row-major `d×d` tensor from a flat list; isotropic `(L²/d)·Id` if absent.
fn tensor(values: Option<Vec<f64>>, key: &'static str, params: &ModelParams<f64>) -> Result<Mat<f64>> {
    let d = params.dim;
    match values {
        None => Ok(Mat::scaled_identity(d, params.length_sq() / d as f64)),
        Some(v) if v.len() == d * d => {
            let m = Mat::from_row_major(d, v);
            crate::types::ConfTensor::new(m.clone(), params.length)?;
            Ok(m)
        }
        Some(v) => Err(RodError::param(key, "d·d entries, row-major", format!("{} entries", v.len()))),
    }
}

fn positive(key: &'static str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(RodError::param(key, "> 0", v))
    }
}

fn ode_config(
    method: Option<String>,
    step: Option<f64>,
    t_end: Option<f64>,
    stride: Option<usize>,
    tols: (Option<f64>, Option<f64>),
) -> Result<OdeConfig<f64>> {
    let method: OdeMethod = method.as_deref().unwrap_or("rk4").parse()?;
    let t_end = positive("t_end", t_end.unwrap_or(50.0))?;
    let mut cfg = match method {
        OdeMethod::Rk4 => OdeConfig::rk4(positive("step", step.unwrap_or(1e-3))?, t_end),
        OdeMethod::Rk45 => {
            let mut c = OdeConfig::rk45(t_end, tols.0.unwrap_or(1e-10), tols.1.unwrap_or(1e-12));
            if let Some(h) = step {
                c.step = positive("step", h)?;
            }
            c
        }
    };
    cfg = cfg.with_stride(stride.unwrap_or(10));
    cfg.validate()?;
    Ok(cfg)
}

fn ode_spec(r: RawOde, params: &ModelParams<f64>) -> Result<OdeSpec> {
    Ok(OdeSpec {
        config: ode_config(r.method, r.step, r.t_end, r.stride, (r.rel_tol, r.abs_tol))?,
        m0: tensor(r.m0, "m0", params)?,
    })
}

fn cycle_spec(r: RawCycle) -> Result<CycleSpec> {
    let fd_sections = r.fd_sections.unwrap_or(64);
    if fd_sections == 0 {
        return Err(RodError::param("fd_sections", "fd_sections ≥ 1", 0));
    }
    Ok(CycleSpec {
        eps1: r.eps1.unwrap_or(0.05),
        eps2: r.eps2.unwrap_or(0.05),
        step: positive("step", r.step.unwrap_or(1e-3))?,
        tol: positive("tol", r.tol.unwrap_or(1e-11))?,
        x0: r.x0,
        fd_sections,
        horizon: positive("horizon", r.horizon.unwrap_or(15.0))?,
        starts: r.starts.unwrap_or_default(),
    })
}

fn sde_spec(r: RawSde, params: &ModelParams<f64>, seed: u64) -> Result<SdeSpec> {
    let model: ModelTag = r.model.as_deref().unwrap_or("meanfield-a").parse()?;
    let mut config = SdeConfig::new(
        r.step.unwrap_or(1e-3),
        r.t_end.unwrap_or(10.0),
        r.n_particles.unwrap_or(10_000),
        seed,
    );
    config.scheme = r.scheme.as_deref().unwrap_or("euler-maruyama-project").parse::<Scheme>()?;
    config.stride = r.stride.unwrap_or(10);
    config.validate()?;
    if config.scheme == Scheme::HeunStratonovich && model != ModelTag::Original {
        return Err(RodError::param(
            "scheme",
            "heun-stratonovich only with model = \"original\"",
            model.as_str(),
        ));
    }
    Ok(SdeSpec {
        model,
        config,
        m0: tensor(r.m0, "m0", params)?,
        resume_from: r.resume_from.map(PathBuf::from),
        save_checkpoint: r.save_checkpoint.unwrap_or(false),
    })
}

fn chaos_config(r: RawChaos, seed: u64) -> Result<ChaosConfig> {
    let d = ChaosConfig::default();
    let law: LawSource = match r.law {
        Some(s) => s.parse()?,
        None => d.law,
    };
    let cfg = ChaosConfig {
        replica_counts: r.replica_counts.unwrap_or(d.replica_counts),
        trials: r.trials.unwrap_or(d.trials),
        horizon: r.horizon.unwrap_or(d.horizon),
        step: r.step.unwrap_or(d.step),
        seed,
        y_oracle_particles: r.y_oracle_particles.unwrap_or(d.y_oracle_particles),
        maier_saupe: r.maier_saupe.unwrap_or(d.maier_saupe),
        law,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn entropy_spec(r: RawEntropy, params: &ModelParams<f64>) -> Result<EntropySpec> {
    let config = ode_config(None, r.step, Some(r.t_end.unwrap_or(10.0)), r.stride, (None, None))?;
    let m1 = tensor(r.m1, "m1", params)?;
    let m2 = match r.m2 {
        Some(v) => tensor(Some(v), "m2", params)?,
        None => {
            let d = params.dim;
            let mut m = Mat::scaled_identity(d, params.length_sq() / d as f64);
            let shift = 0.1 * params.length_sq();
            m[(0, 0)] += shift;
            m[(1, 1)] -= shift;
            m
        }
    };
    Ok(EntropySpec {
        config,
        m1,
        m2,
        psi_start: r.psi_start,
        eps1: r.eps1.unwrap_or(0.05),
        eps2: r.eps2.unwrap_or(0.05),
    })
}

fn suite_spec(r: RawSuite, seed: u64) -> Result<SuiteSpec> {
    let criteria = match r.criteria {
        Some(list) => {
            if list.is_empty() {
                return Err(RodError::param("criteria", "at least one criterion", "[]"));
            }
            for id in &list {
                if criterion(id).is_none() {
                    return Err(RodError::param("criteria", "ids c01 … c13", id));
                }
            }
            list
        }
        None => CRITERIA.iter().map(|c| c.id.to_string()).collect(),
    };
    let defaults = SuiteOptions::default();
    Ok(SuiteSpec {
        criteria,
        options: SuiteOptions {
            seed,
            sde_step: positive("sde_step", r.sde_step.unwrap_or(defaults.sde_step))?,
            sde_particles: r.sde_particles.unwrap_or(defaults.sde_particles).max(1),
            chaos: defaults.chaos,
        },
    })
}

/// Copy of `table` with `axis` set to `value`. A bare key (`pe`) refers to
/// `[params]`; `section.key` addresses any other table.
pub fn set_axis(table: &toml::Table, axis: &str, value: toml::Value) -> Result<toml::Table> {
    let (section, key) = match axis.split_once('.') {
        Some((s, k)) => (s, k),
        None if ["name", "seed", "output_dir", "experiment"].contains(&axis) => ("", axis),
        None => ("params", axis),
    };
    if key.is_empty() || key.contains('.') {
        return Err(config_error(format!("invalid sweep axis `{axis}`")));
    }
    let mut out = table.clone();
    let target = if section.is_empty() {
        &mut out
    } else {
        out.entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| config_error(format!("`{section}` is not a table")))?
    };
    target.insert(key.to_string(), value);
    Ok(out)
}

/// Parses a command-line sweep value as a TOML scalar; bare words become
/// strings.
pub fn parse_axis_value(text: &str) -> toml::Value {
    let text = text.trim();
    format!("v = {text}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

/// Rebuilds the scenario with one field replaced, retrying integral floats
/// (`1e5`) as integers for count-valued keys.
pub fn with_axis(base: &Scenario, axis: &str, value: &toml::Value) -> Result<Scenario> {
    let first = scenario_from_table(set_axis(&base.source, axis, value.clone())?);
    match (first, value) {
        (Err(e), toml::Value::Float(f)) if f.fract() == 0.0 && f.abs() < 9.0e15 => {
            scenario_from_table(set_axis(&base.source, axis, toml::Value::Integer(*f as i64))?).map_err(|_| e)
        }
        (res, _) => res,
    }
}
