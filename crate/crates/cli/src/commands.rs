//! The four subcommands. Each one loads a [`Context`], computes a document
//! and writes it under the output directory.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use skt_core::blowup::{analyze, weighted_average, write_trajectory_csv, BlowupReport};
use skt_core::grid::{principal_eigenpair, EigenMode, EigenPair};
use skt_core::iteration::{
    initial_bracket, simulate, write_snapshots_csv, FailureKind, Simulation, StepSummary, SystemState,
    Termination,
};
use skt_core::model::PARAM_KEYS;
use skt_core::regimes::{
    classify_blowup, classify_global, search_multipliers, t0_estimate, BlowupCertificate, GlobalVerdict,
    NWindow, RegimeReport,
};
use skt_core::Error;

use crate::config::{ConfigError, RunConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("bracket construction failed: {0}")]
    Bracket(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Bracket(_) => 3,
            Self::Solver(_) => 4,
            Self::Io(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.0)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

fn core_err(e: Error) -> CliError {
    match e {
        Error::Domain(m) | Error::Precondition(m) => CliError::Config(m),
        Error::Bracket(m) => CliError::Bracket(m),
        other => CliError::Solver(other.to_string()),
    }
}

/// A parsed configuration plus command-line overrides.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: RunConfig,
    pub out_dir: PathBuf,
    pub lambda0_mode: EigenMode,
}

impl Context {
    pub fn load(config: &Path, out: Option<&Path>, mode: Option<EigenMode>) -> Result<Self, CliError> {
        let text = fs::read_to_string(config)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", config.display())))?;
        Ok(Self::from_config(RunConfig::parse(&text)?, out, mode))
    }

    pub fn from_config(cfg: RunConfig, out: Option<&Path>, mode: Option<EigenMode>) -> Self {
        let out_dir = out
            .map(Path::to_path_buf)
            .or_else(|| cfg.output.directory.clone())
            .unwrap_or_else(|| PathBuf::from("output"));
        let lambda0_mode = mode.unwrap_or(cfg.blowup.lambda0_mode);
        Self { cfg, out_dir, lambda0_mode }
    }

    fn eigenpair(&self) -> Result<EigenPair, CliError> {
        principal_eigenpair(&self.cfg.grid, self.lambda0_mode).map_err(core_err)
    }

    fn path(&self, name: &str) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.out_dir)?;
        Ok(self.out_dir.join(name))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_with<F>(path: &Path, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
{
    let mut w = BufWriter::new(fs::File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Regime and blow-up classification for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub schema_version: u32,
    pub lambda0: f64,
    pub lambda0_mode: EigenMode,
    pub eigen_residual: f64,
    pub global: RegimeReport,
    /// `(p̂1, p̂2)` of the initial data; zero without an `[initial]` section.
    pub p_hat_components: [f64; 2],
    pub blowup: BlowupCertificate,
    pub t0: Option<f64>,
}

fn certificate(
    cfg: &RunConfig,
    lambda0: f64,
    p_hat: (f64, f64),
) -> Result<BlowupCertificate, CliError> {
    let b = &cfg.blowup;
    if b.search {
        search_multipliers(&cfg.model, lambda0, p_hat, b.search_resolution)
    } else {
        classify_blowup(&cfg.model, lambda0, b.mu1, b.mu2, b.mu1 * p_hat.0 + b.mu2 * p_hat.1)
    }
    .map_err(core_err)
}

pub fn classify(ctx: &Context) -> Result<Classification, CliError> {
    let cfg = &ctx.cfg;
    let eig = ctx.eigenpair()?;
    let mut global = classify_global(&cfg.model, eig.lambda0).map_err(core_err)?;
    global.lambda0_mode = Some(ctx.lambda0_mode);
    let p_hat = match &cfg.initial {
        Some(init) => {
            let (u1, u2) = init.fields(&cfg.grid, &eig)?;
            let state = SystemState::from_u(&cfg.model, 0.0, u1, u2).map_err(core_err)?;
            let w = weighted_average(&eig, 1.0, 1.0, &state).map_err(core_err)?;
            (w.p_hat1, w.p_hat2)
        }
        None => (0.0, 0.0),
    };
    let blowup = certificate(cfg, eig.lambda0, p_hat)?;
    let t0 = if blowup.is_certified() { t0_estimate(&blowup, blowup.p_hat0).ok() } else { None };
    Ok(Classification {
        schema_version: SCHEMA_VERSION,
        lambda0: eig.lambda0,
        lambda0_mode: ctx.lambda0_mode,
        eigen_residual: eig.residual,
        global,
        p_hat_components: [p_hat.0, p_hat.1],
        blowup,
        t0,
    })
}

/// Writes the classification JSON to `report` (default `<out>/regime_report.json`).
pub fn cmd_classify(ctx: &Context, report: Option<&Path>) -> Result<Classification, CliError> {
    let doc = classify(ctx)?;
    let path = match report {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            p.to_path_buf()
        }
        None => ctx.path("regime_report.json")?,
    };
    write_json(&path, &doc)?;
    Ok(doc)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub schema_version: u32,
    pub lambda0: f64,
    pub lambda0_mode: EigenMode,
    pub t_end: f64,
    pub termination: Termination,
    pub steps_taken: usize,
    pub snapshots: usize,
    /// Worst signed ordering violation over all inner iterates; `<= 0` when ordered.
    pub worst_ordering_violation: Option<f64>,
    pub worst_sandwich_violation: Option<f64>,
    pub max_final_gap: f64,
    pub max_u1: f64,
    pub max_u2: f64,
    pub global_verdict: GlobalVerdict,
    pub window: Option<NWindow>,
    /// Upper constants of the global-existence bracket, when it exists.
    pub bracket_caps: Option<[f64; 2]>,
    /// Why the window bracket could not be built: parameters not certified
    /// or initial data above the window.
    pub window_bracket_error: Option<String>,
    pub steps: Vec<StepSummary>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

struct Run {
    eig: EigenPair,
    sim: Simulation,
    summary: SimulationSummary,
}

fn run_simulation(ctx: &Context) -> Result<Run, CliError> {
    let cfg = &ctx.cfg;
    let init = cfg
        .initial
        .as_ref()
        .ok_or_else(|| CliError::Config("missing section [initial]".into()))?;
    let eig = ctx.eigenpair()?;
    let (u1, u2) = init.fields(&cfg.grid, &eig)?;
    let global = classify_global(&cfg.model, eig.lambda0).map_err(core_err)?;
    // data outside the certified window is still simulated; the per-step
    // brackets of the solver do not depend on the window
    let (bracket_caps, window_bracket_error) = match initial_bracket(&cfg.model, &eig, (&u1, &u2), &global) {
        Ok(b) => (Some([b.upper.u1().max(), b.upper.u2().max()]), None),
        Err(e) if cfg.require_window_bracket => return Err(core_err(e)),
        Err(e) => (None, Some(e.to_string())),
    };
    let sim = simulate(&cfg.model, (u1, u2), &cfg.solver, cfg.t_end).map_err(core_err)?;
    let max_of = |f: fn(&SystemState) -> f64| sim.snapshots.iter().map(f).fold(0.0, f64::max);
    let summary = SimulationSummary {
        schema_version: SCHEMA_VERSION,
        lambda0: eig.lambda0,
        lambda0_mode: ctx.lambda0_mode,
        t_end: cfg.t_end,
        termination: sim.termination.clone(),
        steps_taken: sim.steps.len(),
        snapshots: sim.snapshots.len(),
        worst_ordering_violation: finite(sim.worst_violation()),
        worst_sandwich_violation: finite(
            sim.steps.iter().map(|s| s.sandwich_violation).fold(f64::NEG_INFINITY, f64::max),
        ),
        max_final_gap: sim.max_final_gap(),
        max_u1: max_of(|s| s.u1().max()),
        max_u2: max_of(|s| s.u2().max()),
        global_verdict: global.verdict,
        window: global.window,
        bracket_caps,
        window_bracket_error,
        steps: sim.steps.clone(),
    };
    Ok(Run { eig, sim, summary })
}

fn termination_error(t: &Termination) -> Result<(), CliError> {
    match t {
        Termination::Failed { t, kind: FailureKind::Bracket, reason } => {
            Err(CliError::Bracket(format!("at t = {t}: {reason}")))
        }
        Termination::Failed { t, reason, .. } => Err(CliError::Solver(format!("at t = {t}: {reason}"))),
        _ => Ok(()),
    }
}

/// Writes `snapshots.csv` and `simulation_summary.json`.
///
/// Outputs are written before a failed termination is turned into an error.
pub fn cmd_simulate(ctx: &Context) -> Result<SimulationSummary, CliError> {
    let run = run_simulation(ctx)?;
    if ctx.cfg.output.csv {
        write_with(&ctx.path("snapshots.csv")?, |w| write_snapshots_csv(w, &run.sim.snapshots))?;
    }
    if ctx.cfg.output.json {
        write_json(&ctx.path("simulation_summary.json")?, &run.summary)?;
    }
    termination_error(&run.sim.termination)?;
    Ok(run.summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowupDocument {
    pub schema_version: u32,
    pub lambda0: f64,
    pub lambda0_mode: EigenMode,
    pub termination: Termination,
    #[serde(flatten)]
    pub report: BlowupReport,
}

pub fn blowup_document(ctx: &Context) -> Result<(BlowupDocument, Termination), CliError> {
    let run = run_simulation(ctx)?;
    let first = &run.sim.snapshots[0];
    let w = weighted_average(&run.eig, 1.0, 1.0, first).map_err(core_err)?;
    let cert = certificate(&ctx.cfg, run.eig.lambda0, (w.p_hat1, w.p_hat2))?;
    let report = analyze(&run.sim, &cert, &run.eig).map_err(core_err)?;
    let doc = BlowupDocument {
        schema_version: SCHEMA_VERSION,
        lambda0: run.eig.lambda0,
        lambda0_mode: ctx.lambda0_mode,
        termination: run.sim.termination.clone(),
        report,
    };
    Ok((doc, run.sim.termination))
}

/// Writes `blowup_report.json` and `blowup_trajectory.csv`.
pub fn cmd_blowup(ctx: &Context) -> Result<BlowupDocument, CliError> {
    let (doc, termination) = blowup_document(ctx)?;
    if ctx.cfg.output.json {
        write_json(&ctx.path("blowup_report.json")?, &doc)?;
    }
    if ctx.cfg.output.csv {
        write_with(&ctx.path("blowup_trajectory.csv")?, |w| write_trajectory_csv(w, &doc.report))?;
    }
    termination_error(&termination)?;
    Ok(doc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub key: String,
    pub min: f64,
    pub max: f64,
    pub count: usize,
    pub scale: Scale,
}

impl SweepAxis {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        if !(PARAM_KEYS.contains(&self.key.as_str()) || self.key == "mu1" || self.key == "mu2") {
            return Err(CliError::Config(format!(
                "sweep axis '{}' is not a model parameter or multiplier",
                self.key
            )));
        }
        if self.count == 0 {
            return Err(CliError::Config("sweep count must be >= 1".into()));
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.min <= self.max) {
            return Err(CliError::Config(format!(
                "sweep range [{}, {}] must be finite with min <= max",
                self.min, self.max
            )));
        }
        if self.scale == Scale::Log && self.min <= 0.0 {
            return Err(CliError::Config(format!("log-scale sweep needs min > 0, got {}", self.min)));
        }
        let n = self.count;
        Ok((0..n)
            .map(|k| {
                if n == 1 {
                    return self.min;
                }
                let s = k as f64 / (n - 1) as f64;
                match self.scale {
                    Scale::Linear => self.min + (self.max - self.min) * s,
                    Scale::Log => (self.min.ln() + (self.max.ln() - self.min.ln()) * s).exp(),
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub classification: Classification,
    /// Present with `--simulate`: the blow-up run of this row, or its error.
    pub run: Option<Result<BlowupDocument, String>>,
}

fn with_axis(ctx: &Context, key: &str, value: f64) -> Result<Context, CliError> {
    let mut c = ctx.clone();
    match key {
        "mu1" => c.cfg.blowup.mu1 = value,
        "mu2" => c.cfg.blowup.mu2 = value,
        k => {
            c.cfg.model.set(k, value).map_err(core_err)?;
            c.cfg.model = c
                .cfg
                .model
                .validated()
                .map_err(|e| CliError::Config(format!("sweep value {key} = {value}: {e}")))?;
        }
    }
    if key.starts_with("mu") && !(value > 0.0) {
        return Err(CliError::Config(format!("sweep value {key} = {value} must be > 0")));
    }
    Ok(c)
}

pub fn sweep(ctx: &Context, axis: &SweepAxis, run_blowup: bool) -> Result<Vec<SweepRow>, CliError> {
    let values = axis.values()?;
    let contexts = values
        .iter()
        .map(|&v| with_axis(ctx, &axis.key, v))
        .collect::<Result<Vec<_>, _>>()?;
    values
        .par_iter()
        .zip(contexts.par_iter())
        .map(|(&value, c)| {
            let classification = classify(c)?;
            let run = run_blowup.then(|| blowup_document(c).map(|(d, _)| d).map_err(|e| e.to_string()));
            Ok(SweepRow { value, classification, run })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn snake<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|j| j.as_str().map(str::to_owned))
        .unwrap_or_default()
}

pub fn write_sweep_csv<W: Write>(out: &mut W, key: &str, rows: &[SweepRow], with_run: bool) -> std::io::Result<()> {
    write!(
        out,
        "{key},global_verdict,blowup_verdict,branch,branch_holds,growth_valid,mu1,mu2,p_hat0,threshold,t0"
    )?;
    if with_run {
        write!(out, ",termination,detected_blowup_time,bound_violations")?;
    }
    writeln!(out)?;
    for r in rows {
        let c = &r.classification;
        let b = &c.blowup;
        write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.value,
            snake(&c.global.verdict),
            snake(&b.verdict),
            snake(&b.branch),
            b.branch_holds,
            b.growth.valid(),
            b.mu1,
            b.mu2,
            b.p_hat0,
            opt(b.threshold),
            opt(c.t0)
        )?;
        if with_run {
            match &r.run {
                Some(Ok(d)) => {
                    let status = match d.termination {
                        Termination::Completed => "completed".to_owned(),
                        Termination::Overflowed { .. } => "overflowed".to_owned(),
                        Termination::Failed { kind, .. } => format!("failed_{}", snake(&kind)),
                    };
                    write!(
                        out,
                        ",{status},{},{}",
                        opt(d.report.detected_blowup_time),
                        d.report.bound_violations
                    )?;
                }
                Some(Err(_)) => write!(out, ",error,,")?,
                None => write!(out, ",,,")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Writes `sweep.csv`, one row per axis value in increasing order.
pub fn cmd_sweep(ctx: &Context, axis: &SweepAxis, run_blowup: bool) -> Result<Vec<SweepRow>, CliError> {
    let rows = sweep(ctx, axis, run_blowup)?;
    write_with(&ctx.path("sweep.csv")?, |w| write_sweep_csv(w, &axis.key, &rows, run_blowup))?;
    Ok(rows)
}
