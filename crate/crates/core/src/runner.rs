//! Executes scenarios and writes their artifacts.
//!
//! Every experiment is computed fully in memory first; CSVs are written
//! atomically only once the computation succeeded, followed by
//! `manifest.json`. A failed run leaves only a manifest carrying the error.

use crate::closure::integrate;
use crate::cycle::{annulus, convergence_rate, find_cycle_with, CycleOptions, CycleReport};
use crate::error::{Result, RodError};
use crate::gaussian::{entropy_dissipation_check, lsi_constant, psi_convergence_experiment};
use crate::io::{write_atomic, CsvTable};
use crate::ode::OdeConfig;
use crate::scenario::{
    parse_axis_value, set_axis, with_axis, CycleSpec, EntropySpec, Experiment, OdeSpec, Scenario, SdeSpec,
    SuiteSpec,
};
use crate::sde::{load_checkpoint, run as run_sde, save_checkpoint};
use crate::suite::{run_criterion, with_threads, Outcome};
use crate::types::{conf_from_q, make_shear_kappa, q_from_matrix, ConfTensor, Ensemble, ModelTag, QState};
use rayon::prelude::*;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const ENV_OUTPUT_DIR: &str = "RODLAB_OUTPUT_DIR";
pub const ENV_THREADS: &str = "RODLAB_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ExitStatus {
    Success,
    Config,
    Numerical,
    Acceptance,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::Config => 2,
            ExitStatus::Numerical => 3,
            ExitStatus::Acceptance => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ExitStatus::Success => "ok",
            ExitStatus::Config => "config-error",
            ExitStatus::Numerical => "numerical-failure",
            ExitStatus::Acceptance => "acceptance-failure",
        }
    }

    pub fn of_error(err: &RodError) -> Self {
        match err {
            RodError::Config(_)
            | RodError::InvalidParam { .. }
            | RodError::InvalidSlack(_)
            | RodError::Regime(_)
            | RodError::UnsupportedDimension { .. } => ExitStatus::Config,
            _ => ExitStatus::Numerical,
        }
    }
}

pub fn error_kind(err: &RodError) -> &'static str {
    match err {
        RodError::UnsupportedDimension { .. } => "unsupported-dimension",
        RodError::InvalidParam { .. } => "invalid-param",
        RodError::Config(_) => "config",
        RodError::InvalidState(_) => "invalid-state",
        RodError::Degenerate(_) => "degenerate",
        RodError::Singularity(_) => "singularity",
        RodError::InvalidSlack(_) => "invalid-slack",
        RodError::Regime(_) => "regime",
        RodError::IntegrationFailure { .. } => "integration-failure",
        RodError::NoReturn { .. } => "no-return",
        RodError::NonConvergence { .. } => "non-convergence",
        RodError::Domain(_) => "domain",
        RodError::Numerical(_) => "numerical",
        RodError::Fit(_) => "fit",
        RodError::Checkpoint(_) => "checkpoint",
        RodError::Io(_) => "io",
    }
}

/// Machine-readable error record, also printed by the command-line tool.
pub fn error_record(err: &RodError) -> Value {
    json!({
        "kind": error_kind(err),
        "exit_code": ExitStatus::of_error(err).code(),
        "message": err.to_string(),
    })
}

/// Command-line and environment overrides. Explicit fields win over the
/// environment, which wins over the scenario file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOptions {
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub stride: Option<usize>,
}

impl RunOptions {
    /// Fills unset fields from `RODLAB_OUTPUT_DIR` and `RODLAB_THREADS`.
    pub fn with_env(mut self) -> Result<Self> {
        if self.output_dir.is_none() {
            self.output_dir = std::env::var_os(ENV_OUTPUT_DIR).filter(|v| !v.is_empty()).map(PathBuf::from);
        }
        if self.threads.is_none() {
            if let Ok(v) = std::env::var(ENV_THREADS) {
                let n: usize = v
                    .trim()
                    .parse()
                    .map_err(|_| RodError::Config(format!("{ENV_THREADS}={v:?} is not a thread count")))?;
                self.threads = Some(n);
            }
        }
        if self.threads == Some(0) {
            return Err(RodError::param("threads", "threads ≥ 1", 0));
        }
        Ok(self)
    }
}

/// Applies seed and stride overrides by rewriting the document, so the
/// result is validated exactly like a file.
pub fn apply_overrides(scenario: &Scenario, opts: &RunOptions) -> Result<Scenario> {
    let mut table = scenario.source.clone();
    if let Some(seed) = opts.seed {
        let seed = i64::try_from(seed).map_err(|_| RodError::param("seed", "seed < 2⁶³", seed))?;
        table = set_axis(&table, "seed", toml::Value::Integer(seed))?;
    }
    if let Some(stride) = opts.stride {
        let section = match scenario.experiment {
            Experiment::Ode(_) => "ode",
            Experiment::Sde(_) => "sde",
            Experiment::Entropy(_) => "entropy",
            _ => return Err(RodError::Config(format!(
                "--stride does not apply to experiment `{}`",
                scenario.experiment.kind().as_str()
            ))),
        };
        table = set_axis(&table, &format!("{section}.stride"), toml::Value::Integer(stride as i64))?;
    }
    crate::scenario::scenario_from_table(table)
}

/// The full acceptance suite under the scenario's name, seed and output
/// directory. A `[suite]` table is kept if the scenario already is one.
pub fn as_suite(scenario: &Scenario) -> Result<Scenario> {
    if matches!(scenario.experiment, Experiment::FullSuite(_)) {
        return Ok(scenario.clone());
    }
    let mut table = toml::Table::new();
    for key in ["name", "seed", "output_dir"] {
        if let Some(v) = scenario.source.get(key) {
            table.insert(key.into(), v.clone());
        }
    }
    table.insert("experiment".into(), toml::Value::String("full-suite".into()));
    crate::scenario::scenario_from_table(table)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub name: String,
    pub status: ExitStatus,
    pub output_dir: PathBuf,
    pub artifacts: Vec<PathBuf>,
    pub scalars: Vec<(String, f64)>,
    pub outcomes: Vec<Outcome>,
    pub error: Option<String>,
    pub wall_seconds: f64,
}

impl RunReport {
    pub fn scalar(&self, key: &str) -> Option<f64> {
        self.scalars.iter().find(|(k, _)| k == key).map(|&(_, v)| v)
    }
}

#[derive(Default)]
struct Computed {
    files: Vec<(String, Vec<u8>)>,
    scalars: Vec<(String, f64)>,
    outcomes: Vec<Outcome>,
}

impl Computed {
    fn table(&mut self, name: &str, table: &CsvTable) -> Result<()> {
        self.files.push((name.to_string(), table.to_bytes()?));
        Ok(())
    }

    fn scalar(&mut self, key: impl Into<String>, v: f64) {
        self.scalars.push((key.into(), v));
    }
}

pub fn resolve_output_dir(scenario: &Scenario, opts: &RunOptions) -> PathBuf {
    opts.output_dir
        .clone()
        .or_else(|| scenario.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&scenario.name))
}

/// Runs one scenario. Configuration problems are returned as errors before
/// anything is written; failures during the run produce a report with a
/// nonzero status and an error manifest.
pub fn execute(scenario: &Scenario, opts: &RunOptions) -> Result<RunReport> {
    let scenario = apply_overrides(scenario, opts)?;
    let out_dir = resolve_output_dir(&scenario, opts);
    execute_in(&scenario, opts.threads, &out_dir)
}

fn execute_in(scenario: &Scenario, threads: Option<usize>, out_dir: &Path) -> Result<RunReport> {
    let start = Instant::now();
    let computed = match threads {
        Some(n) => with_threads(n, || compute(scenario))?,
        None => compute(scenario),
    };
    let wall_seconds = start.elapsed().as_secs_f64();
    let mut report = RunReport {
        name: scenario.name.clone(),
        status: ExitStatus::Success,
        output_dir: out_dir.to_path_buf(),
        artifacts: Vec::new(),
        scalars: Vec::new(),
        outcomes: Vec::new(),
        error: None,
        wall_seconds,
    };
    let mut error_json = Value::Null;
    match computed {
        Ok(c) => {
            for (name, bytes) in &c.files {
                let path = out_dir.join(name);
                write_atomic(&path, bytes)?;
                report.artifacts.push(path);
            }
            if c.outcomes.iter().any(|o| !o.passed) {
                report.status = ExitStatus::Acceptance;
            }
            report.scalars = c.scalars;
            report.outcomes = c.outcomes;
        }
        Err(e) => {
            report.status = ExitStatus::of_error(&e);
            report.error = Some(e.to_string());
            error_json = error_record(&e);
        }
    }
    let manifest = manifest_json(scenario, threads, &report, error_json);
    let bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| RodError::Io(std::io::Error::other(e)))?;
    let path = out_dir.join("manifest.json");
    write_atomic(&path, &bytes)?;
    report.artifacts.push(path);
    Ok(report)
}

fn manifest_json(scenario: &Scenario, threads: Option<usize>, report: &RunReport, error: Value) -> Value {
    let results: serde_json::Map<String, Value> =
        report.scalars.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
    let criteria: Vec<Value> = report
        .outcomes
        .iter()
        .map(|o| {
            let metrics: serde_json::Map<String, Value> =
                o.metrics.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
            json!({
                "id": o.id,
                "title": o.title,
                "passed": o.passed,
                "seconds": o.seconds,
                "budget_seconds": o.budget_seconds,
                "metrics": metrics,
                "error": o.error,
            })
        })
        .collect();
    let artifacts: Vec<String> = report
        .artifacts
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    json!({
        "name": scenario.name,
        "experiment": scenario.experiment.kind().as_str(),
        "status": report.status.as_str(),
        "exit_code": report.status.code(),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": scenario.seed,
        "threads": threads.unwrap_or_else(rayon::current_num_threads),
        "wall_time_seconds": report.wall_seconds,
        "scenario": scenario.source,
        "artifacts": artifacts,
        "results": results,
        "criteria": criteria,
        "error": error,
    })
}

fn compute(scenario: &Scenario) -> Result<Computed> {
    let mut c = Computed::default();
    match &scenario.experiment {
        Experiment::Ode(spec) => ode(scenario, spec, &mut c)?,
        Experiment::Cycle(spec) => cycle(scenario, spec, &mut c)?,
        Experiment::Sde(spec) => sde(scenario, spec, &mut c)?,
        Experiment::Chaos(cfg) => {
            let k = make_shear_kappa(&scenario.params)?;
            let res = crate::chaos::run_chaos_experiment::<f64>(cfg, &scenario.params, &k)?;
            c.table("chaos_errors.csv", &res.errors_csv())?;
            c.table("chaos_summary.csv", &res.summary_csv())?;
            c.table("chaos_fit.csv", &res.fit_csv())?;
            c.scalar("slope", res.fit.slope);
            c.scalar("intercept", res.fit.intercept);
            c.scalar("r_squared", res.fit.r_squared);
            c.scalar("oracle_floor", res.oracle_floor);
            c.scalar("monotone", f64::from(u8::from(res.is_monotone_decreasing())));
            for (i, m) in res.replica_counts.iter().zip(&res.mean) {
                c.scalar(format!("mean_error_I{i}"), *m);
            }
        }
        Experiment::Entropy(spec) => entropy(scenario, spec, &mut c)?,
        Experiment::FullSuite(spec) => suite(spec, &mut c)?,
    }
    Ok(c)
}

fn ode(s: &Scenario, spec: &OdeSpec, c: &mut Computed) -> Result<()> {
    let k = make_shear_kappa(&s.params)?;
    let m0 = ConfTensor::new(spec.m0.clone(), s.params.length)?;
    let traj = integrate(&m0, &s.params, &k, &spec.config)?;
    c.table("trajectory.csv", &traj.to_csv())?;
    c.scalar("max_trace_drift", traj.max_trace_drift);
    c.scalar("max_asymmetry", traj.max_asymmetry);
    c.scalar("min_eigenvalue", traj.min_eigenvalue);
    c.scalar("psd_warning", f64::from(u8::from(traj.psd_warning())));
    if s.params.dim == 2 {
        let q = q_from_matrix(traj.last())?;
        c.scalar("final_x", q.x);
        c.scalar("final_y", q.y);
    }
    Ok(())
}

fn find(s: &Scenario, eps1: f64, eps2: f64, step: f64, tol: f64, x0: Option<f64>, fd: usize) -> Result<CycleReport<f64>> {
    let ann = annulus(&s.params, eps1, eps2)?;
    let opts = CycleOptions {
        x0,
        tol,
        fd_sections: fd,
        ..CycleOptions::default()
    };
    find_cycle_with(&s.params, &ann, &OdeConfig::rk4(step, 1.0), &opts)
}

fn cycle(s: &Scenario, spec: &CycleSpec, c: &mut Computed) -> Result<()> {
    let report = find(s, spec.eps1, spec.eps2, spec.step, spec.tol, spec.x0, spec.fd_sections)?;
    c.table("cycle_orbit.csv", &report.orbit_csv())?;
    c.table("cycle_summary.csv", &report.summary_csv())?;
    c.scalar("x_star", report.x_star);
    c.scalar("period", report.period);
    c.scalar("ln_rho", report.ln_rho);
    c.scalar("ln_rho_tilde", report.ln_rho_tilde);
    c.scalar("lambda", report.lambda);
    c.scalar("lsi_mu", lsi_constant(&report));
    if !spec.starts.is_empty() {
        let cfg = OdeConfig::rk4(spec.step, spec.horizon);
        let mut table = CsvTable::new(["x0", "y0", "rate", "rate_over_lambda"]);
        for &[x, y] in &spec.starts {
            let m0 = conf_from_q(&QState::new(x, y))?;
            let rate = convergence_rate(&m0, &report, &s.params, &cfg)?.value();
            table.push_nums(&[x, y, rate, rate / report.lambda]);
        }
        c.table("convergence.csv", &table)?;
    }
    Ok(())
}

fn sde(s: &Scenario, spec: &SdeSpec, c: &mut Computed) -> Result<()> {
    let k = make_shear_kappa(&s.params)?;
    let init = match &spec.resume_from {
        Some(path) => {
            let ens: Ensemble<f64> = load_checkpoint(&std::fs::read(path)?)?;
            if ens.model != spec.model || ens.dim() != s.params.dim {
                return Err(RodError::Config(format!(
                    "checkpoint holds a {} ensemble in dimension {}, scenario asks for {} in dimension {}",
                    ens.model.as_str(),
                    ens.dim(),
                    spec.model.as_str(),
                    s.params.dim
                )));
            }
            ens
        }
        None => {
            let mut ens = Ensemble::gaussian(&spec.m0, spec.config.n_particles, spec.model, spec.config.seed)?;
            match spec.model {
                ModelTag::Original => ens.project_each_to_sphere(s.params.length)?,
                _ => ens.normalize_mean_square(s.params.length)?,
            }
            ens
        }
    };
    let (series, last) = run_sde(&init, &s.params, &k, &spec.config)?;
    c.table("moments.csv", &series.to_csv())?;
    if spec.save_checkpoint {
        c.files.push(("final.ckpt".into(), save_checkpoint(&last)));
    }
    c.scalar("n_particles", last.n() as f64);
    c.scalar("steps", last.step as f64);
    c.scalar("final_time", last.time);
    c.scalar("final_mean_square", last.mean_square_norm());
    let m = last.second_moment();
    c.scalar("final_trace", m.trace());
    if spec.model == ModelTag::Original {
        c.scalar("max_sphere_violation", last.max_sphere_violation(s.params.length));
    }
    Ok(())
}

fn entropy(s: &Scenario, spec: &EntropySpec, c: &mut Computed) -> Result<()> {
    let k = make_shear_kappa(&s.params)?;
    let m1 = ConfTensor::new(spec.m1.clone(), s.params.length)?;
    let m2 = ConfTensor::new(spec.m2.clone(), s.params.length)?;
    let series = entropy_dissipation_check(&m1, &m2, &s.params, &k, &spec.config)?;
    c.table("entropy.csv", &series.to_csv())?;
    c.scalar("max_residual", series.max_residual());
    c.scalar("max_increase", series.max_increase());
    if let Some([x, y]) = spec.psi_start {
        let report = find(s, spec.eps1, spec.eps2, spec.config.step, 1e-11, None, 64)?;
        let psi = psi_convergence_experiment(
            &conf_from_q(&QState::new(x, y))?,
            &report,
            &s.params,
            &OdeConfig::rk4(spec.config.step, spec.config.t_end),
        )?;
        c.table("psi.csv", &psi.to_csv())?;
        c.scalar("psi_rate", psi.rate.value());
        c.scalar("two_lambda", 2.0 * report.lambda);
        c.scalar("lsi_mu", lsi_constant(&report));
    }
    Ok(())
}

fn suite(spec: &SuiteSpec, c: &mut Computed) -> Result<()> {
    let mut table = CsvTable::new(["id", "title", "passed", "seconds", "budget_seconds", "metrics", "error"]);
    for id in &spec.criteria {
        let o = run_criterion(id, &spec.options)?;
        let metrics: Vec<String> = o.metrics.iter().map(|(k, v)| format!("{k}={v:e}")).collect();
        table.push(vec![
            o.id.to_string(),
            o.title.to_string(),
            o.passed.to_string(),
            format!("{:.3}", o.seconds),
            format!("{}", o.budget_seconds),
            metrics.join(";"),
            o.error.clone().unwrap_or_default(),
        ]);
        c.scalar(format!("{}_passed", o.id), f64::from(u8::from(o.passed)));
        c.outcomes.push(o);
    }
    c.table("suite.csv", &table)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub output_dir: PathBuf,
    pub rows: Vec<(String, RunReport)>,
    pub status: ExitStatus,
    pub combined: PathBuf,
}

/// Runs the scenario once per value of `axis`, each in its own
/// subdirectory, and writes `sweep.csv` with one row per value. A row
/// that fails does not stop the others.
///
/// Values that do not validate become failed rows without output; if none
/// validates (usually a misspelled axis) the sweep is rejected outright.
pub fn sweep(base: &Scenario, axis: &str, values: &[String], opts: &RunOptions) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(RodError::param("values", "at least one sweep value", "[]"));
    }
    let base = apply_overrides(base, opts)?;
    let scenarios: Vec<Result<Scenario>> = values
        .iter()
        .map(|v| with_axis(&base, axis, &parse_axis_value(v)))
        .collect();
    if scenarios.iter().all(|s| s.is_err()) {
        return Err(scenarios.into_iter().find_map(|s| s.err()).expect("values is nonempty"));
    }
    let out_dir = resolve_output_dir(&base, opts);
    let dir_for = |v: &str| out_dir.join(format!("{}={}", axis.replace('.', "_"), sanitize(v)));
    let body = || {
        scenarios
            .par_iter()
            .zip(values.par_iter())
            .map(|(s, v)| {
                let dir = dir_for(v);
                let report = s.as_ref().map_err(clone_error).and_then(|s| execute_in(s, None, &dir));
                let report = report.unwrap_or_else(|e| RunReport {
                    name: base.name.clone(),
                    status: ExitStatus::of_error(&e),
                    output_dir: dir.clone(),
                    artifacts: Vec::new(),
                    scalars: Vec::new(),
                    outcomes: Vec::new(),
                    error: Some(e.to_string()),
                    wall_seconds: 0.0,
                });
                (v.clone(), report)
            })
            .collect::<Vec<_>>()
    };
    let rows = match opts.threads {
        Some(n) => with_threads(n, body)?,
        None => body(),
    };

    let mut keys: Vec<String> = Vec::new();
    for (_, r) in &rows {
        for (k, _) in &r.scalars {
            if !keys.contains(k) {
                keys.push(k.clone());
            }
        }
    }
    let mut header = vec![axis.to_string(), "status".into(), "exit_code".into(), "error".into()];
    header.extend(keys.iter().cloned());
    let mut table = CsvTable::new(header);
    for (v, r) in &rows {
        let mut row = vec![
            v.clone(),
            r.status.as_str().to_string(),
            r.status.code().to_string(),
            r.error.clone().unwrap_or_default(),
        ];
        row.extend(keys.iter().map(|k| r.scalar(k).map(crate::io::fmt_num).unwrap_or_default()));
        table.push(row);
    }
    let combined = out_dir.join("sweep.csv");
    table.write(&combined)?;
    let status = rows.iter().map(|(_, r)| r.status).max().unwrap_or(ExitStatus::Success);
    Ok(SweepReport {
        output_dir: out_dir,
        rows,
        status,
        combined,
    })
}

fn clone_error(e: &RodError) -> RodError {
    match ExitStatus::of_error(e) {
        ExitStatus::Config => RodError::Config(e.to_string()),
        _ => RodError::Numerical(e.to_string()),
    }
}

fn sanitize(v: &str) -> String {
    v.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.+".contains(c) { c } else { '_' })
        .collect()
}
