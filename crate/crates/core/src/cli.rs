//! Command-line front end: config parsing, subcommand dispatch and the
//! exit-code contract (0 ok, 1 config, 2 numerical failure, 3 I/O).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dynamics::{IntegratorConfig, DEFAULT_DECIMATION, DEFAULT_DT};
use crate::experiments::{self as ex, CsvTable, ExperimentError, RunSettings};
use crate::optimize::{
    optimize_schedule, FreeParameter, Objective, OptimizationProblem, OptimizeError,
    ParameterBound,
};
use crate::params::{preset_by_name, validate_params, PresetName, SystemParams};
use crate::protocol::{
    build_schedule, emit_photon, release_schedule, simulate_gate, GateTiming, ProtocolError,
};
use crate::spectral::adiabaticity_report;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match &e {
            ExperimentError::Io { .. } => CliError::Io(e.to_string()),
            ExperimentError::Optimize(o) => o.clone().into(),
            _ if e.is_numerical() => CliError::Numerical(e.to_string()),
            ExperimentError::Pool(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

impl From<OptimizeError> for CliError {
    fn from(e: OptimizeError) -> Self {
        match e {
            OptimizeError::AllFailed { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// One gate run with the configured timing.
    #[default]
    Gate,
    Fig2,
    Fig3a,
    Fig3b,
    Fig3c,
    Realizations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalBlock {
    pub q_factor: f64,
    pub omega_c_rad_s: f64,
    /// Defaults to γ = ω_c/(2Q).
    #[serde(default)]
    pub kappa_abs_rad_s: Option<f64>,
}

impl PhysicalBlock {
    pub fn kappa_abs(&self) -> f64 {
        self.kappa_abs_rad_s
            .unwrap_or(self.omega_c_rad_s / (2.0 * self.q_factor))
    }

    pub fn time_unit_s(&self) -> f64 {
        1.0 / self.kappa_abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorBlock {
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub decimation: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    params: Option<SystemParams>,
    #[serde(default)]
    physical: Option<PhysicalBlock>,
    #[serde(default)]
    timing: Option<GateTiming>,
    #[serde(default)]
    integrator: IntegratorBlock,
    #[serde(default)]
    experiment: ExperimentKind,
    #[serde(default)]
    optimization: Option<OptimizationBlock>,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    workers: Option<usize>,
}

/// Free parameters and objective for the `optimize` subcommand; the seed is
/// the config's timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizationBlock {
    pub free: Vec<ParameterBound>,
    #[serde(default = "default_objective")]
    pub objective: Objective,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub calibrate_phase: bool,
}

fn default_objective() -> Objective {
    Objective::Fidelity
}

fn default_budget() -> usize {
    ex::FIG2_BUDGET
}

impl Default for OptimizationBlock {
    fn default() -> Self {
        Self {
            free: vec![
                ParameterBound {
                    parameter: FreeParameter::AlignmentOffset,
                    lower: -5.0,
                    upper: 5.0,
                },
                ParameterBound {
                    parameter: FreeParameter::HoldMargin,
                    lower: -5.0,
                    upper: 5.0,
                },
            ],
            objective: Objective::Fidelity,
            budget: ex::FIG2_BUDGET,
            calibrate_phase: false,
        }
    }
}

/// A parsed config with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub params: SystemParams,
    pub physical: Option<PhysicalBlock>,
    pub timing: GateTiming,
    pub integrator: IntegratorConfig,
    pub experiment: ExperimentKind,
    pub optimization: OptimizationBlock,
    pub output_dir: Option<PathBuf>,
    pub workers: usize,
}

impl RunConfig {
    pub fn settings(&self) -> RunSettings {
        RunSettings {
            dt: Some(self.integrator.dt),
            decimation: self.integrator.decimation,
            workers: self.workers,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let params = SystemParams::reference();
        Self {
            timing: GateTiming::default_for(&params).expect("reference parameters are valid"),
            params,
            physical: None,
            integrator: IntegratorConfig::default(),
            experiment: ExperimentKind::Gate,
            optimization: OptimizationBlock::default(),
            output_dir: None,
            workers: 0,
        }
    }
}

/// Strict parse: unknown keys and invalid parameters are errors.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let raw: RawConfig =
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let params = raw.params.unwrap_or_else(SystemParams::reference);
    validate_params(&params).map_err(|e| CliError::Config(e.to_string()))?;
    let timing = match raw.timing {
        Some(t) => t,
        None => GateTiming::default_for(&params)?,
    };
    timing.validate()?;
    let dt = raw.integrator.dt.unwrap_or(DEFAULT_DT);
    if !(dt.is_finite() && dt > 0.0) {
        return Err(CliError::Config(format!("integrator.dt must be positive, got {dt}")));
    }
    let decimation = raw.integrator.decimation.unwrap_or(DEFAULT_DECIMATION);
    if decimation == 0 {
        return Err(CliError::Config("integrator.decimation must be ≥ 1".into()));
    }
    if let Some(ph) = raw.physical {
        if !(ph.q_factor > 0.0 && ph.omega_c_rad_s > 0.0 && ph.kappa_abs() > 0.0) {
            return Err(CliError::Config("physical block must be positive".into()));
        }
    }
    Ok(RunConfig {
        params,
        physical: raw.physical,
        timing,
        integrator: IntegratorConfig {
            dt,
            decimation,
            record_output_field: false,
        },
        experiment: raw.experiment,
        optimization: raw.optimization.unwrap_or_default(),
        output_dir: raw.output_dir,
        workers: raw.workers.unwrap_or(0),
    })
}

#[derive(Debug, Parser)]
#[command(name = "qswitch", version, about = "Q-switched cavity-QED CZ gate simulator")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "QSWITCH_OUT")]
    out: Option<PathBuf>,
    /// Worker threads for sweep points (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Integration step in κ⁻¹.
    #[arg(long, global = true)]
    dt: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment named in the config (a single gate by default).
    Simulate,
    /// Run a parameter sweep with its default grid.
    Sweep {
        #[arg(value_enum)]
        which: SweepKind,
    },
    /// Emit a photon through the release ramp and record its shape.
    Emit,
    /// Tune the configured timing; writes the trace and the best timing.
    Optimize,
    /// Adiabaticity and dressed spectrum along the configured schedule.
    Analyze,
    /// Print a device preset in κ-units.
    Preset {
        #[arg(value_enum)]
        name: PresetArg,
    },
    /// Regenerate every figure dataset and the device estimates.
    ReproduceAll,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepKind {
    Fig3a,
    Fig3b,
    Fig3c,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    NvDiamond,
    CircuitQed,
}

impl From<PresetArg> for PresetName {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::NvDiamond => PresetName::NvDiamond,
            PresetArg::CircuitQed => PresetName::CircuitQed,
        }
    }
}

struct Context {
    config: RunConfig,
    /// Whether a config file was given.
    explicit: bool,
    out: PathBuf,
    settings: RunSettings,
}

impl Context {
    fn from_cli(cli: &Cli) -> Result<Self, CliError> {
        let (mut config, explicit) = match &cli.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                (parse_config(&text)?, true)
            }
            None => (RunConfig::default(), false),
        };
        if let Some(dt) = cli.dt {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(CliError::Config(format!("--dt must be positive, got {dt}")));
            }
            config.integrator.dt = dt;
        }
        if let Some(w) = cli.workers {
            config.workers = w;
        }
        let out = cli
            .out
            .clone()
            .or_else(|| config.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        // Experiments pick their own step unless one was asked for.
        let dt_given = cli.dt.is_some()
            || (explicit && config_has_dt(cli.config.as_deref().unwrap_or(Path::new(""))));
        let settings = RunSettings {
            dt: dt_given.then_some(config.integrator.dt),
            decimation: config.integrator.decimation,
            workers: config.workers,
        };
        Ok(Self {
            config,
            explicit,
            out,
            settings,
        })
    }
}

fn config_has_dt(path: &Path) -> bool {
    fs::read_to_string(path)
        .ok()
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .is_some_and(|v| v["integrator"]["dt"].is_number())
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn physical_metrics(ctx: &Context, t_gate: f64) -> serde_json::Value {
    match ctx.config.physical {
        Some(ph) => json!({
            "time_unit_s": ph.time_unit_s(),
            "t_gate_s": t_gate * ph.time_unit_s(),
        }),
        None => serde_json::Value::Null,
    }
}

fn cmd_gate(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let c = &ctx.config;
    let run = simulate_gate(&c.params, &c.timing, &c.integrator)?;
    let mut meta = ex::run_meta(&c.params, &run, &c.integrator);
    meta["physical"] = physical_metrics(ctx, run.result.t_gate);
    let ledger = crate::dynamics::norm_ledger(&run.record);
    meta["norm_ledger"] = json!(ledger);
    Ok(ex::write_artifacts(
        &ctx.out,
        "simulate",
        &ex::trajectory_table(&run.record),
        &meta,
        &ex::gate_metrics(&run.result),
    )?)
}

fn cmd_simulate(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    match ctx.config.experiment {
        ExperimentKind::Gate => cmd_gate(ctx),
        ExperimentKind::Fig2 => Ok(ex::write_fig2(&ex::run_fig2(&ctx.settings)?, &ctx.out)?),
        ExperimentKind::Fig3a => cmd_sweep(ctx, SweepKind::Fig3a),
        ExperimentKind::Fig3b => cmd_sweep(ctx, SweepKind::Fig3b),
        ExperimentKind::Fig3c => cmd_sweep(ctx, SweepKind::Fig3c),
        ExperimentKind::Realizations => Ok(ex::write_realizations(
            &ex::run_realizations(&ctx.settings)?,
            &ctx.out,
        )?),
    }
}

fn fig3c_timing(ctx: &Context) -> Result<GateTiming, CliError> {
    if ctx.explicit {
        return Ok(ctx.config.timing);
    }
    Ok(ex::run_fig2(&ctx.settings)?.run.timing)
}

fn cmd_sweep(ctx: &Context, which: SweepKind) -> Result<Vec<PathBuf>, CliError> {
    let s = &ctx.settings;
    let paths = match which {
        SweepKind::Fig3a => {
            let out = ex::run_fig3a(&ex::default_fig3a(), GateTiming::DEFAULT_SWITCH_TIME, s)?;
            ex::write_fig3a(&out, &ctx.out)?
        }
        SweepKind::Fig3b => {
            let out = ex::run_fig3b(&ex::default_fig3b(), s)?;
            println!("fig3b log-log slope: {:.4}", out.slope);
            ex::write_fig3b(&out, &ctx.out)?
        }
        SweepKind::Fig3c => {
            let timing = fig3c_timing(ctx)?;
            let out = ex::run_fig3c(&ex::default_fig3c(), &timing, s)?;
            ex::write_fig3c(&out, &ctx.out)?
        }
    };
    Ok(paths)
}

fn cmd_emit(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let c = &ctx.config;
    let t = &c.timing;
    let sched = release_schedule(&c.params, 0.0, t.release(), t.emission_tail, t.profile)?;
    let cfg = IntegratorConfig {
        record_output_field: true,
        ..c.integrator.clone()
    };
    let em = emit_photon(&c.params, &sched, &cfg)?;
    let mut table = CsvTable::new(&["t", "re_fout", "im_fout", "abs2_fout"]);
    for (k, a) in em.pulse.samples.iter().enumerate() {
        table.push(vec![em.pulse.time(k), a.re, a.im, a.norm_sqr()]);
    }
    let meta = json!({
        "params": c.params,
        "schedule": sched,
        "integrator": cfg,
    });
    let metrics = json!({
        "p_out": em.p_out,
        "failed": em.failed,
        "centroid": em.pulse.centroid(),
        "fwhm": em.pulse.fwhm(),
    });
    Ok(ex::write_artifacts(&ctx.out, "emit", &table, &meta, &metrics)?)
}

fn cmd_optimize(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let c = &ctx.config;
    let o = &c.optimization;
    let problem = OptimizationProblem {
        free: o.free.clone(),
        objective: o.objective,
        budget: o.budget,
        seed: c.timing,
        calibrate_phase: o.calibrate_phase,
    };
    let (best, trace) = optimize_schedule(&problem, &c.params, &c.integrator)?;
    let mut header = vec!["iteration".to_string()];
    header.extend(trace.parameters.iter().map(|p| {
        serde_json::to_value(p)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default()
    }));
    header.push("objective".into());
    let mut table = CsvTable {
        header,
        rows: Vec::new(),
    };
    for e in &trace.entries {
        let mut row = vec![e.evaluation as f64];
        row.extend(&e.point);
        row.push(e.value);
        table.rows.push(row);
    }
    let trace_path = ctx.out.join("optimize_trace.csv");
    ex::write_csv(&table, &trace_path)?;
    let best_path = ctx.out.join("optimize_best.json");
    let body = json!({
        "timing": best,
        "best_point": trace.best_point,
        "best_value": trace.best_value,
        "seed_value": trace.seed_value,
        "converged": trace.converged,
    });
    let mut text = serde_json::to_string_pretty(&body).expect("json values serialize");
    text.push('\n');
    ex::write_atomic(&best_path, &text)?;
    Ok(vec![trace_path, best_path])
}

pub const ANALYZE_HEADER: [&str; 8] = [
    "t",
    "E1",
    "E2",
    "E3",
    "overlap_s",
    "overlap_q",
    "overlap_e",
    "A_t",
];

fn cmd_analyze(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let c = &ctx.config;
    let sched = build_schedule(&c.params, &c.timing)?;
    let rep = adiabaticity_report(&c.params, &sched, 0.1)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let mut table = CsvTable::new(&ANALYZE_HEADER);
    for p in &rep.points {
        table.push(vec![
            p.t,
            p.energies[0],
            p.energies[1],
            p.energies[2],
            p.overlaps[0],
            p.overlaps[1],
            p.overlaps[2],
            p.value.unwrap_or(f64::NAN),
        ]);
    }
    let meta = json!({
        "params": c.params,
        "timing": c.timing,
        "schedule": sched,
    });
    let metrics = json!({
        "adiabaticity_max": rep.max,
        "t_max": rep.t_max,
        "adiabaticity_mean": rep.mean,
        "gap_collapses": rep.gap_collapses,
    });
    Ok(ex::write_artifacts(&ctx.out, "analyze", &table, &meta, &metrics)?)
}

fn cmd_preset(name: PresetName) -> Result<Vec<PathBuf>, CliError> {
    let p = preset_by_name(name);
    let text = serde_json::to_string_pretty(&p).expect("json values serialize");
    println!("{text}");
    Ok(Vec::new())
}

fn cmd_reproduce_all(ctx: &Context) -> Result<Vec<PathBuf>, CliError> {
    let s = &ctx.settings;
    let mut paths = Vec::new();
    let fig2 = ex::run_fig2(s)?;
    println!("fig2: F = {:.6}", fig2.run.result.fidelity);
    paths.extend(ex::write_fig2(&fig2, &ctx.out)?);
    let a = ex::run_fig3a(&ex::default_fig3a(), GateTiming::DEFAULT_SWITCH_TIME, s)?;
    paths.extend(ex::write_fig3a(&a, &ctx.out)?);
    let b = ex::run_fig3b(&ex::default_fig3b(), s)?;
    println!("fig3b: slope = {:.4}", b.slope);
    paths.extend(ex::write_fig3b(&b, &ctx.out)?);
    let cc = ex::run_fig3c(&ex::default_fig3c(), &fig2.run.timing, s)?;
    paths.extend(ex::write_fig3c(&cc, &ctx.out)?);
    let r = ex::run_realizations(s)?;
    for case in &r.cases {
        println!(
            "{}: F = {:.4}, gate = {:.3e} s",
            case.name, case.result.fidelity, case.gate_time_s
        );
    }
    paths.extend(ex::write_realizations(&r, &ctx.out)?);
    Ok(paths)
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    if let Command::Preset { name } = cli.command {
        return cmd_preset(name.into());
    }
    let ctx = Context::from_cli(&cli)?;
    match cli.command {
        Command::Simulate => cmd_simulate(&ctx),
        Command::Sweep { which } => cmd_sweep(&ctx, which),
        Command::Emit => cmd_emit(&ctx),
        Command::Optimize => cmd_optimize(&ctx),
        Command::Analyze => cmd_analyze(&ctx),
        Command::ReproduceAll => cmd_reproduce_all(&ctx),
        Command::Preset { .. } => unreachable!(),
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit
/// code. Usage errors count as config errors.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(paths) => {
            report(&paths);
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config(
            r#"{"params": {"omega_s": 5, "omega_q": 20, "gamma": 1,
                "cavity_detuning": 10, "storage_detuning": 1000,
                "gamma_q": 0, "gamma_e": 0}}"#,
        )
        .unwrap();
        assert_eq!(c.params, SystemParams::reference());
        assert_eq!(c.integrator.dt, 1e-3);
        assert_eq!(c.integrator.decimation, 100);
        assert!((c.timing.hold_time - 40.0 * std::f64::consts::PI).abs() < 1e-9);
        assert_eq!(c.experiment, ExperimentKind::Gate);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = parse_config(r#"{"typo_key": 1}"#).unwrap_err();
        assert!(e.to_string().contains("typo_key"), "{e}");
        assert_eq!(e.code(), EXIT_CONFIG);
        let e = parse_config(r#"{"params": {"omega_s": 5, "omega_x": 1}}"#).unwrap_err();
        assert!(e.to_string().contains("omega_x"), "{e}");
    }

    #[test]
    fn empty_and_invalid() {
        assert!(parse_config("").is_err());
        let e = parse_config(r#"{"integrator": {"dt": -1}}"#).unwrap_err();
        assert_eq!(e.code(), EXIT_CONFIG);
    }

    #[test]
    fn usage_error_maps_to_config_code() {
        assert_eq!(dispatch(["qswitch", "no-such-command"]), EXIT_CONFIG);
        assert_eq!(dispatch(["qswitch", "sweep", "fig9"]), EXIT_CONFIG);
    }
}
