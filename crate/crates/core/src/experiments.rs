//! Canned runs that regenerate the figure data and the device estimates, and
//! the CSV/JSON artifacts they are written to.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::dynamics::{recommended_dt, IntegratorConfig, SimulationRecord, DEFAULT_DECIMATION};
use crate::optimize::{
    optimize_schedule, FreeParameter, Objective, OptimizationProblem, OptimizationTrace,
    OptimizeError, ParameterBound,
};
use crate::params::{preset_by_name, PresetName, SystemParams};
use crate::protocol::{
    build_schedule, calibrate_hold, emit_photon, release_schedule, GateResult, GateRun,
    GateTiming, ProtocolError, StorageModulation,
};
use crate::schedule::Profile;
use crate::spectral::{self, adiabaticity_report, AdiabaticityReport, SpectralError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("invalid sweep: {0}")]
    Sweep(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("thread pool: {0}")]
    Pool(String),
}

impl ExperimentError {
    pub fn is_numerical(&self) -> bool {
        match self {
            ExperimentError::Protocol(e) => e.is_numerical(),
            _ => false,
        }
    }
}

/// Integration settings shared by the experiment runners. Without an
/// explicit `dt` each run uses the step recommended for its fastest rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub dt: Option<f64>,
    pub decimation: usize,
    /// Worker threads for sweep points; 0 lets the pool decide.
    pub workers: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            dt: None,
            decimation: DEFAULT_DECIMATION,
            workers: 0,
        }
    }
}

impl RunSettings {
    pub fn integrator(&self, params: &SystemParams, timing: &GateTiming) -> IntegratorConfig {
        let dt = self.dt.unwrap_or_else(|| match build_schedule(params, timing) {
            Ok(s) => recommended_dt(params, &s),
            Err(_) => crate::dynamics::DEFAULT_DT,
        });
        IntegratorConfig {
            dt,
            decimation: self.decimation,
            record_output_field: false,
        }
    }

    /// Runs `f` on a pool of `workers` threads.
    pub fn in_pool<T: Send>(
        &self,
        f: impl FnOnce() -> T + Send,
    ) -> Result<T, ExperimentError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| ExperimentError::Pool(e.to_string()))?;
        Ok(pool.install(f))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweptParameter {
    Gamma,
    OmegaQ,
    GammaQ,
    GammaE,
    /// γ_q = γ_e = value.
    GammaBoth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulePolicy {
    /// One schedule for every point.
    Fixed,
    /// Operating points, T_π and pulse re-derived per point.
    Rederived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub parameter: SweptParameter,
    pub values: Vec<f64>,
    pub fixed: SystemParams,
    pub policy: SchedulePolicy,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.values.is_empty() {
            return Err(ExperimentError::Sweep("value list is empty".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(ExperimentError::Sweep("non-finite value".into()));
        }
        let up = self.values.windows(2).all(|w| w[1] > w[0]);
        let down = self.values.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(ExperimentError::Sweep(
                "values must be strictly monotone".into(),
            ));
        }
        Ok(())
    }

    pub fn apply(&self, value: f64) -> SystemParams {
        let mut p = self.fixed;
        match self.parameter {
            SweptParameter::Gamma => p.gamma = value,
            SweptParameter::OmegaQ => p.omega_q = value,
            SweptParameter::GammaQ => p.gamma_q = value,
            SweptParameter::GammaE => p.gamma_e = value,
            SweptParameter::GammaBoth => {
                p.gamma_q = value;
                p.gamma_e = value;
            }
        }
        p
    }

    /// Values in ascending order.
    pub fn ascending(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        v
    }
}

/// `n` points log-spaced from `a` to `b` inclusive.
pub fn log_space(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let (la, lb) = (a.log10(), b.log10());
    (0..n)
        .map(|k| {
            if k == 0 {
                a
            } else if k == n - 1 {
                b
            } else {
                10f64.powf(la + (lb - la) * k as f64 / (n - 1) as f64)
            }
        })
        .collect()
}

/// Plain table of numbers with a header.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Scientific notation with 12 significant digits, LF line endings.
    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.11e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or("empty csv")?
            .split(',')
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row = line
                .split(',')
                .map(|c| c.parse::<f64>().map_err(|e| format!("row {i}: {e}")))
                .collect::<Result<Vec<f64>, String>>()?;
            if row.len() != header.len() {
                return Err(format!("row {i} has {} cells", row.len()));
            }
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

pub const TRAJECTORY_HEADER: [&str; 20] = [
    "t", "re_fin", "im_fin", "ps_g", "ds", "pq_g", "dq_g", "ps_f", "pq_f", "dq_f", "re_fout_g",
    "im_fout_g", "re_fout_f", "im_fout_f", "delta_q", "delta_s", "n_int", "n_out", "n_in",
    "n_decoh",
];

/// Trajectory table; population columns are |amplitude|².
pub fn trajectory_table(rec: &SimulationRecord) -> CsvTable {
    let mut t = CsvTable::new(&TRAJECTORY_HEADER);
    for i in 0..rec.len() {
        let s = &rec.states[i];
        t.push(vec![
            rec.times[i],
            rec.f_in[i].re,
            rec.f_in[i].im,
            s.c_s_g.norm_sqr(),
            s.d_s.norm_sqr(),
            s.c_q_g.norm_sqr(),
            s.d_q_g.norm_sqr(),
            s.c_s_f.norm_sqr(),
            s.c_q_f.norm_sqr(),
            s.d_q_f.norm_sqr(),
            rec.f_out_g[i].re,
            rec.f_out_g[i].im,
            rec.f_out_f[i].re,
            rec.f_out_f[i].im,
            rec.delta_q[i],
            rec.delta_s[i],
            rec.n_int[i],
            rec.n_out[i],
            rec.n_in[i],
            rec.n_decoh[i],
        ]);
    }
    t
}

/// Writes `content` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, content: &str) -> Result<(), ExperimentError> {
    let io_err = |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io_err)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, content).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_err(e)
    })
}

pub fn write_csv(table: &CsvTable, path: &Path) -> Result<(), ExperimentError> {
    write_atomic(path, &table.render())
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

/// `<name>.csv`, `<name>.meta.json` and `<name>.metrics.json` in `dir`.
pub fn write_artifacts(
    dir: &Path,
    name: &str,
    table: &CsvTable,
    meta: &Value,
    metrics: &Value,
) -> Result<Vec<PathBuf>, ExperimentError> {
    let csv = dir.join(format!("{name}.csv"));
    let meta_path = dir.join(format!("{name}.meta.json"));
    let metrics_path = dir.join(format!("{name}.metrics.json"));
    // Render everything first so a failure leaves nothing behind.
    let (a, b, c) = (table.render(), pretty(meta), pretty(metrics));
    write_atomic(&csv, &a)?;
    write_atomic(&meta_path, &b)?;
    write_atomic(&metrics_path, &c)?;
    Ok(vec![csv, meta_path, metrics_path])
}

pub fn gate_metrics(r: &GateResult) -> Value {
    json!({
        "fidelity": r.fidelity,
        "conditional_phase_rad": r.conditional_phase,
        "p_return": r.p_return,
        "loss_decoherence": r.loss_decoherence,
        "loss_residual_internal": r.loss_residual_internal,
        "mode_overlap": r.mode_overlap,
        "t_gate_kappa_units": r.t_gate,
    })
}

pub fn run_meta(params: &SystemParams, run: &GateRun, cfg: &IntegratorConfig) -> Value {
    json!({
        "params": params,
        "timing": run.timing,
        "integrator": cfg,
        "schedule": run.schedule,
        "emission_p_out": run.emission_p_out,
        "input_norm": run.input.norm_sqr(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Fig2Output {
    pub params: SystemParams,
    pub run: GateRun,
    pub integrator: IntegratorConfig,
    /// Fidelity with the phase-calibrated hold, before the optimizer.
    pub calibrated_fidelity: f64,
    pub trace: OptimizationTrace,
    pub adiabaticity: AdiabaticitySummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdiabaticitySummary {
    pub max: f64,
    pub t_max: f64,
    pub mean: f64,
    pub gap_collapses: usize,
}

impl From<&AdiabaticityReport> for AdiabaticitySummary {
    fn from(r: &AdiabaticityReport) -> Self {
        Self {
            max: r.max,
            t_max: r.t_max,
            mean: r.mean,
            gap_collapses: r.gap_collapses.len(),
        }
    }
}

/// Optimizer budget for the reference gate.
pub const FIG2_BUDGET: usize = 40;

/// Reference gate: linear 10 κ⁻¹ ramps, hold calibrated for a π phase, then
/// alignment and hold refined by the simplex search.
pub fn run_fig2(settings: &RunSettings) -> Result<Fig2Output, ExperimentError> {
    let params = SystemParams::reference();
    let seed = GateTiming::default_for(&params)?;
    let cfg = settings.integrator(&params, &seed);
    let calibrated = calibrate_hold(&params, &seed, &cfg, 4)?;
    let problem = OptimizationProblem {
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
        budget: FIG2_BUDGET,
        seed: calibrated.timing,
        calibrate_phase: false,
    };
    let (timing, trace) = optimize_schedule(&problem, &params, &cfg)?;
    let run = crate::protocol::simulate_gate(&params, &timing, &cfg)?;
    let report = adiabaticity_report(&params, &run.schedule, 0.1)?;
    Ok(Fig2Output {
        params,
        integrator: cfg,
        calibrated_fidelity: calibrated.result.fidelity,
        trace,
        adiabaticity: AdiabaticitySummary::from(&report),
        run,
    })
}

pub fn write_fig2(out: &Fig2Output, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut meta = run_meta(&out.params, &out.run, &out.integrator);
    meta["calibrated_fidelity"] = json!(out.calibrated_fidelity);
    meta["optimizer"] = json!({
        "parameters": out.trace.parameters,
        "best_point": out.trace.best_point,
        "best_value": out.trace.best_value,
        "seed_value": out.trace.seed_value,
        "evaluations": out.trace.entries.len(),
        "converged": out.trace.converged,
    });
    meta["adiabaticity"] = json!(out.adiabaticity);
    write_artifacts(
        dir,
        "fig2",
        &trajectory_table(&out.run.record),
        &meta,
        &gate_metrics(&out.run.result),
    )
}

pub fn default_fig3a() -> SweepSpec {
    SweepSpec {
        parameter: SweptParameter::Gamma,
        values: log_space(0.1, 10.0, 21),
        fixed: SystemParams::reference(),
        policy: SchedulePolicy::Fixed,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Fig3aOutput {
    pub gamma: Vec<f64>,
    pub p_out: Vec<f64>,
    pub argmax: f64,
    pub interior_max: bool,
    pub switch_time: f64,
    pub tail: f64,
}

/// Emission probability through the release ramp versus γ.
pub fn run_fig3a(
    spec: &SweepSpec,
    switch_time: f64,
    settings: &RunSettings,
) -> Result<Fig3aOutput, ExperimentError> {
    spec.validate()?;
    let values = spec.ascending();
    let tail = 2.0 * switch_time;
    let results: Vec<Result<f64, ExperimentError>> = settings.in_pool(|| {
        use rayon::prelude::*;
        values
            .par_iter()
            .map(|&g| {
                let p = spec.apply(g);
                let sched = release_schedule(&p, 0.0, switch_time, tail, Profile::Linear)?;
                let cfg = IntegratorConfig {
                    dt: settings.dt.unwrap_or_else(|| recommended_dt(&p, &sched)),
                    decimation: settings.decimation,
                    record_output_field: false,
                };
                Ok(emit_photon(&p, &sched, &cfg)?.p_out)
            })
            .collect()
    })?;
    let p_out = results.into_iter().collect::<Result<Vec<f64>, _>>()?;
    let imax = (0..p_out.len())
        .max_by(|&a, &b| p_out[a].total_cmp(&p_out[b]))
        .unwrap();
    Ok(Fig3aOutput {
        argmax: values[imax],
        interior_max: imax > 0 && imax + 1 < values.len(),
        gamma: values,
        p_out,
        switch_time,
        tail,
    })
}

pub fn write_fig3a(out: &Fig3aOutput, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut t = CsvTable::new(&["gamma_over_kappa", "p_out"]);
    for (g, p) in out.gamma.iter().zip(&out.p_out) {
        t.push(vec![*g, *p]);
    }
    let meta = json!({
        "params": SystemParams::reference(),
        "switch_time": out.switch_time,
        "tail": out.tail,
        "profile": Profile::Linear,
    });
    let metrics = json!({
        "argmax_gamma_over_kappa": out.argmax,
        "interior_max": out.interior_max,
        "p_out_max": out.p_out.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    });
    write_artifacts(dir, "fig3a", &t, &meta, &metrics)
}

/// Lossless, slow (20 κ⁻¹) ramps and Δ_s = 10⁴κ.
pub fn default_fig3b() -> SweepSpec {
    SweepSpec {
        parameter: SweptParameter::OmegaQ,
        values: vec![10.0, 20.0, 40.0, 80.0, 100.0],
        fixed: SystemParams {
            storage_detuning: 1e4,
            ..SystemParams::reference()
        },
        policy: SchedulePolicy::Rederived,
    }
}

pub const FIG3B_SWITCH_TIME: f64 = 20.0;

#[derive(Debug, Clone, Serialize)]
pub struct Fig3bPoint {
    pub omega_q: f64,
    pub fidelity: f64,
    pub infidelity: f64,
    pub leakage_reference: f64,
    pub conditional_phase: f64,
    pub p_return: f64,
    pub hold_time: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Fig3bOutput {
    pub points: Vec<Fig3bPoint>,
    /// Least-squares slope of ln(1−F) against ln(Ω_q).
    pub slope: f64,
    pub switch_time: f64,
}

/// Least-squares slope of y against x.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Gate infidelity from premature leakage versus Ω_q. Each point re-derives
/// its operating points, T_π and pulse, and calibrates its hold.
pub fn run_fig3b(spec: &SweepSpec, settings: &RunSettings) -> Result<Fig3bOutput, ExperimentError> {
    spec.validate()?;
    let values = spec.ascending();
    let results: Vec<Result<Fig3bPoint, ExperimentError>> = settings.in_pool(|| {
        use rayon::prelude::*;
        values
            .par_iter()
            .map(|&w| {
                let p = spec.apply(w).lossless();
                let mut timing = GateTiming::with_switch_time(&p, FIG3B_SWITCH_TIME)?;
                // Start from the held-photon rate rather than the bare T_π.
                timing.hold_time = std::f64::consts::PI
                    / spectral::held_phase_rate(&p, p.storage_detuning);
                let cfg = settings.integrator(&p, &timing);
                let run = calibrate_hold(&p, &timing, &cfg, 3)?;
                Ok(Fig3bPoint {
                    omega_q: w,
                    fidelity: run.result.fidelity,
                    infidelity: 1.0 - run.result.fidelity,
                    leakage_reference: 1.0 / (w * w),
                    conditional_phase: run.result.conditional_phase,
                    p_return: run.result.p_return,
                    hold_time: run.timing.hold_time,
                    dt: cfg.dt,
                })
            })
            .collect()
    })?;
    let points = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let lx: Vec<f64> = points.iter().map(|p| p.omega_q.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.infidelity.ln()).collect();
    Ok(Fig3bOutput {
        slope: fit_slope(&lx, &ly),
        points,
        switch_time: FIG3B_SWITCH_TIME,
    })
}

pub fn write_fig3b(out: &Fig3bOutput, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut t = CsvTable::new(&[
        "omega_q_over_kappa",
        "infidelity",
        "leakage_reference",
        "fidelity",
        "conditional_phase_rad",
        "p_return",
        "hold_time",
    ]);
    for p in &out.points {
        t.push(vec![
            p.omega_q,
            p.infidelity,
            p.leakage_reference,
            p.fidelity,
            p.conditional_phase,
            p.p_return,
            p.hold_time,
        ]);
    }
    let meta = json!({
        "params": default_fig3b().fixed,
        "switch_time": out.switch_time,
        "tail": 2.0 * out.switch_time,
        "dt": out.points.iter().map(|p| p.dt).collect::<Vec<_>>(),
        "slope": out.slope,
    });
    let metrics = json!({
        "loglog_slope": out.slope,
        "fidelity_at_max_omega_q": out.points.last().map(|p| p.fidelity),
    });
    write_artifacts(dir, "fig3b", &t, &meta, &metrics)
}

pub fn default_fig3c() -> SweepSpec {
    let mut values = vec![0.0];
    values.extend(log_space(1e-4, 1.0, 9));
    SweepSpec {
        parameter: SweptParameter::GammaBoth,
        values,
        fixed: SystemParams::reference(),
        policy: SchedulePolicy::Fixed,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Fig3cOutput {
    pub gamma: Vec<f64>,
    pub gamma_q_only: Vec<f64>,
    pub gamma_e_only: Vec<f64>,
    pub both: Vec<f64>,
    pub timing: GateTiming,
}

/// Fidelity versus decoherence with one fixed schedule and pulse; three
/// series (γ_q only, γ_e only, both equal).
pub fn run_fig3c(
    spec: &SweepSpec,
    timing: &GateTiming,
    settings: &RunSettings,
) -> Result<Fig3cOutput, ExperimentError> {
    spec.validate()?;
    let values = spec.ascending();
    let base = spec.fixed;
    let cfg = settings.integrator(&base, timing);
    let jobs: Vec<(usize, f64)> = (0..3)
        .flat_map(|series| values.iter().map(move |&v| (series, v)))
        .collect();
    let results: Vec<Result<f64, ExperimentError>> = settings.in_pool(|| {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|&(series, v)| {
                let mut p = base;
                match series {
                    0 => p.gamma_q = v,
                    1 => p.gamma_e = v,
                    _ => {
                        p.gamma_q = v;
                        p.gamma_e = v;
                    }
                }
                Ok(crate::protocol::simulate_gate(&p, timing, &cfg)?.result.fidelity)
            })
            .collect()
    })?;
    let f = results.into_iter().collect::<Result<Vec<f64>, _>>()?;
    let n = values.len();
    Ok(Fig3cOutput {
        gamma_q_only: f[..n].to_vec(),
        gamma_e_only: f[n..2 * n].to_vec(),
        both: f[2 * n..].to_vec(),
        gamma: values,
        timing: *timing,
    })
}

fn non_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

pub fn write_fig3c(out: &Fig3cOutput, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut t = CsvTable::new(&[
        "gamma_beta",
        "fidelity_gamma_q",
        "fidelity_gamma_e",
        "fidelity_both",
    ]);
    for i in 0..out.gamma.len() {
        t.push(vec![
            out.gamma[i],
            out.gamma_q_only[i],
            out.gamma_e_only[i],
            out.both[i],
        ]);
    }
    let meta = json!({
        "params": SystemParams::reference(),
        "timing": out.timing,
    });
    let metrics = json!({
        "monotone_gamma_q": non_increasing(&out.gamma_q_only),
        "monotone_gamma_e": non_increasing(&out.gamma_e_only),
        "monotone_both": non_increasing(&out.both),
        "fidelity_zero_loss": out.both.first(),
    });
    write_artifacts(dir, "fig3c", &t, &meta, &metrics)
}

#[derive(Debug, Clone, Serialize)]
pub struct Realization {
    pub name: String,
    pub preset: PresetName,
    pub modulated: bool,
    pub result: GateResult,
    pub timing: GateTiming,
    pub gate_time_s: f64,
    /// Intensity FWHM of the input pulse.
    pub pulse_fwhm_s: f64,
    pub storage_detuning_hold: f64,
    /// (Ω_s/Δ_s)² during the hold.
    pub absorption_hold: f64,
    pub time_unit_s: f64,
}

/// λ (per κ⁻¹) of the composite objective for the modulated variant.
pub const GATE_TIME_PENALTY: f64 = 1e-4;

fn realization(
    name: &str,
    preset: PresetName,
    run: GateRun,
    time_unit_s: f64,
    params: &SystemParams,
) -> Realization {
    let hold_ds = run.timing.hold_storage_detuning(params);
    Realization {
        name: name.to_string(),
        preset,
        modulated: run.timing.storage_modulation.is_some(),
        gate_time_s: run.result.t_gate * time_unit_s,
        pulse_fwhm_s: run.input.fwhm() * time_unit_s,
        storage_detuning_hold: hold_ds,
        absorption_hold: (params.omega_s / hold_ds).powi(2),
        time_unit_s,
        result: run.result,
        timing: run.timing,
    }
}

/// Static Δ_s, 10 κ⁻¹ linear ramps, hold calibrated for a π phase.
pub fn run_static_realization(
    preset: PresetName,
    settings: &RunSettings,
) -> Result<Realization, ExperimentError> {
    let pr = preset_by_name(preset);
    let p = pr.system;
    let timing = GateTiming::default_for(&p)?;
    let cfg = settings.integrator(&p, &timing);
    let run = calibrate_hold(&p, &timing, &cfg, 4)?;
    Ok(realization(
        &format!("{}-static", preset.as_str()),
        preset,
        run,
        pr.time_unit_s,
        &p,
    ))
}

pub const REALIZATION_BUDGET: usize = 14;

/// Δ_s raised to 10⁴κ while switching and lowered during the hold; the hold
/// value is searched between the absorption-budget floor and the static
/// value, with the hold recalibrated at each point.
pub fn run_modulated_realization(
    preset: PresetName,
    settings: &RunSettings,
) -> Result<(Realization, OptimizationTrace), ExperimentError> {
    let pr = preset_by_name(preset);
    let p = pr.system;
    let floor = p.omega_s / pr.absorption_budget.sqrt();
    let ceiling = p.storage_detuning.max(2.0 * floor);
    let mut seed = GateTiming::default_for(&p)?;
    seed.storage_modulation = Some(StorageModulation {
        high: StorageModulation::DEFAULT_HIGH.max(p.storage_detuning),
        low: floor,
        ramp: StorageModulation::DEFAULT_RAMP,
    });
    seed.hold_time = (std::f64::consts::PI / spectral::held_phase_rate(&p, floor))
        .max(2.0 * StorageModulation::DEFAULT_RAMP);
    let cfg = settings.integrator(&p, &seed);
    let problem = OptimizationProblem {
        free: vec![ParameterBound {
            parameter: FreeParameter::StorageDetuningLow,
            lower: floor,
            upper: ceiling,
        }],
        objective: Objective::FidelityMinusTime {
            lambda: GATE_TIME_PENALTY,
        },
        budget: REALIZATION_BUDGET,
        seed,
        calibrate_phase: true,
    };
    let (timing, trace) = optimize_schedule(&problem, &p, &cfg)?;
    let run = crate::protocol::simulate_gate(&p, &timing, &cfg)?;
    Ok((
        realization(
            &format!("{}-modulated", preset.as_str()),
            preset,
            run,
            pr.time_unit_s,
            &p,
        ),
        trace,
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct RealizationsOutput {
    pub cases: Vec<Realization>,
}

pub fn run_realizations(settings: &RunSettings) -> Result<RealizationsOutput, ExperimentError> {
    let nv_static = run_static_realization(PresetName::NvDiamond, settings)?;
    let (nv_mod, _) = run_modulated_realization(PresetName::NvDiamond, settings)?;
    let (cqed, _) = run_modulated_realization(PresetName::CircuitQed, settings)?;
    Ok(RealizationsOutput {
        cases: vec![nv_static, nv_mod, cqed],
    })
}

pub fn write_realizations(
    out: &RealizationsOutput,
    dir: &Path,
) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut t = CsvTable::new(&[
        "case",
        "fidelity",
        "gate_time_s",
        "gate_time_kappa_units",
        "pulse_fwhm_s",
        "storage_detuning_hold",
        "absorption_hold",
    ]);
    for (i, c) in out.cases.iter().enumerate() {
        t.push(vec![
            i as f64,
            c.result.fidelity,
            c.gate_time_s,
            c.result.t_gate,
            c.pulse_fwhm_s,
            c.storage_detuning_hold,
            c.absorption_hold,
        ]);
    }
    let meta = json!({
        "cases": out.cases.iter().map(|c| json!({
            "name": c.name,
            "preset": c.preset,
            "timing": c.timing,
            "time_unit_s": c.time_unit_s,
            "params": preset_by_name(c.preset).system,
        })).collect::<Vec<_>>(),
    });
    let metrics = json!({
        "cases": out.cases.iter().map(|c| {
            let mut m = gate_metrics(&c.result);
            m["name"] = json!(c.name);
            m["gate_time_s"] = json!(c.gate_time_s);
            m["pulse_fwhm_s"] = json!(c.pulse_fwhm_s);
            m["absorption_hold"] = json!(c.absorption_hold);
            m
        }).collect::<Vec<_>>(),
    });
    write_artifacts(dir, "realizations", &t, &meta, &metrics)
}
