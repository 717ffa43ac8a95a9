//! Single-excitation amplitude equations with the waveguide eliminated, and a
//! fixed-step RK4 integrator that carries the probability ledgers and the
//! gate overlaps as extra states of the same scheme.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::SystemParams;
use crate::pulse::Pulse;
use crate::schedule::{ControlSchedule, ScheduleError};

const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_DECIMATION: usize = 100;
/// Ledger violation that aborts a run.
pub const LEDGER_FAILURE: f64 = 1e-4;
/// Largest dt·ρ accepted, ρ being a Gershgorin bound on the generator. RK4 is
/// stable on the imaginary axis up to 2√2.
pub const STABILITY_LIMIT: f64 = 2.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("numerical failure: norm ledger violated by {violation:.3e} at t = {t}")]
    NumericalFailure { t: f64, violation: f64 },
    #[error("step dt = {dt} exceeds the RK4 stability bound {limit:.3e} for this schedule")]
    UnstableStep { dt: f64, limit: f64 },
    #[error("invalid time span [{0}, {1}]")]
    BadSpan(f64, f64),
}

/// The seven single-excitation amplitudes. `_g` and `_f` label the storage
/// atom's state; only the g-branch couples to the storage atom.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QuantumState {
    pub c_s_g: Complex64,
    pub d_s: Complex64,
    pub c_q_g: Complex64,
    pub d_q_g: Complex64,
    pub c_s_f: Complex64,
    pub c_q_f: Complex64,
    pub d_q_f: Complex64,
}

impl QuantumState {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_array(a: [Complex64; 7]) -> Self {
        Self {
            c_s_g: a[0],
            d_s: a[1],
            c_q_g: a[2],
            d_q_g: a[3],
            c_s_f: a[4],
            c_q_f: a[5],
            d_q_f: a[6],
        }
    }

    pub fn to_array(&self) -> [Complex64; 7] {
        [
            self.c_s_g, self.d_s, self.c_q_g, self.d_q_g, self.c_s_f, self.c_q_f, self.d_q_f,
        ]
    }

    pub fn norm_g(&self) -> f64 {
        self.c_s_g.norm_sqr() + self.d_s.norm_sqr() + self.c_q_g.norm_sqr() + self.d_q_g.norm_sqr()
    }

    pub fn norm_f(&self) -> f64 {
        self.c_s_f.norm_sqr() + self.c_q_f.norm_sqr() + self.d_q_f.norm_sqr()
    }
}

/// Probability weights of the storage-atom basis states in the initial qubit
/// state; they weight the per-branch ledgers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchWeights {
    pub g: f64,
    pub f: f64,
}

impl BranchWeights {
    pub const EQUAL: Self = Self { g: 0.5, f: 0.5 };
    pub const G_ONLY: Self = Self { g: 1.0, f: 0.0 };
    pub const F_ONLY: Self = Self { g: 0.0, f: 1.0 };
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Rates {
    omega_s: f64,
    omega_q: f64,
    kappa: f64,
    sqrt_gamma: f64,
    /// iδ_q + (γ+γ_q)/2
    cq_decay: Complex64,
    delta_q0: f64,
    half_gamma_e: f64,
    gamma_q: f64,
    gamma_e: f64,
}

impl Rates {
    fn new(p: &SystemParams) -> Self {
        Self {
            omega_s: p.omega_s,
            omega_q: p.omega_q,
            kappa: p.kappa,
            sqrt_gamma: p.gamma.sqrt(),
            cq_decay: Complex64::new((p.gamma + p.gamma_q) / 2.0, p.cavity_detuning),
            delta_q0: p.cavity_detuning,
            half_gamma_e: p.gamma_e / 2.0,
            gamma_q: p.gamma_q,
            gamma_e: p.gamma_e,
        }
    }
}

#[inline]
fn rhs(y: &[Complex64; 7], dq: f64, ds: f64, fin: Complex64, r: &Rates) -> [Complex64; 7] {
    let dq_decay = Complex64::new(r.half_gamma_e, r.delta_q0 + dq);
    let drive = fin * r.sqrt_gamma;
    [
        -I * (y[1] * r.omega_s + y[2] * r.kappa),
        -I * (y[1] * ds + y[0] * r.omega_s),
        -r.cq_decay * y[2] - I * (y[0] * r.kappa + y[3] * r.omega_q) + drive,
        -dq_decay * y[3] - I * (y[2] * r.omega_q),
        -I * (y[5] * r.kappa),
        -r.cq_decay * y[5] - I * (y[4] * r.kappa + y[6] * r.omega_q) + drive,
        -dq_decay * y[6] - I * (y[5] * r.omega_q),
    ]
}

/// Right-hand side of the amplitude equations at time `t`.
pub fn derivative(
    state: &QuantumState,
    t: f64,
    params: &SystemParams,
    schedule: &ControlSchedule,
    f_in: [Complex64; 2],
) -> Result<QuantumState, DynamicsError> {
    schedule.check_covers(t)?;
    let r = Rates::new(params);
    let dq = schedule.delta_q_at(t);
    let ds = schedule.delta_s_at(t, params.storage_detuning);
    let y = state.to_array();
    let g = rhs(&y, dq, ds, f_in[0], &r);
    let f = rhs(&y, dq, ds, f_in[1], &r);
    Ok(QuantumState::from_array([g[0], g[1], g[2], g[3], f[4], f[5], f[6]]))
}

/// One classic RK4 step for an arbitrary linear or nonlinear system.
pub fn rk4_step<const N: usize>(
    y: &[Complex64; N],
    t: f64,
    dt: f64,
    f: impl Fn(f64, &[Complex64; N]) -> [Complex64; N],
) -> [Complex64; N] {
    let axpy = |a: &[Complex64; N], k: &[Complex64; N], h: f64| {
        let mut out = *a;
        for i in 0..N {
            out[i] += k[i] * h;
        }
        out
    };
    let k1 = f(t, y);
    let k2 = f(t + dt / 2.0, &axpy(y, &k1, dt / 2.0));
    let k3 = f(t + dt / 2.0, &axpy(y, &k2, dt / 2.0));
    let k4 = f(t + dt, &axpy(y, &k3, dt));
    let mut out = *y;
    for i in 0..N {
        out[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (dt / 6.0);
    }
    out
}

/// Gershgorin bound on the generator's spectral radius over the schedule.
pub fn rate_bound(params: &SystemParams, schedule: &ControlSchedule) -> f64 {
    let ds = schedule
        .delta_s
        .as_ref()
        .map_or(params.storage_detuning.abs(), |t| t.max_abs());
    let dq = schedule.delta_q.max_abs();
    let half_loss = (params.gamma + params.gamma_q) / 2.0;
    let row_s = params.omega_s + params.kappa;
    let row_ds = ds + params.omega_s;
    let row_cq = params.cavity_detuning.abs() + half_loss + params.kappa + params.omega_q;
    let row_dq = params.cavity_detuning.abs() + dq + params.gamma_e / 2.0 + params.omega_q;
    row_s.max(row_ds).max(row_cq).max(row_dq)
}

/// Default step (1e-3 κ⁻¹) refined by an integer factor when the fastest
/// rate exceeds 10³κ.
pub fn recommended_dt(params: &SystemParams, schedule: &ControlSchedule) -> f64 {
    let factor = (rate_bound(params, schedule) / 1100.0).ceil().max(1.0);
    DEFAULT_DT / factor
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    /// Store every `decimation`-th step in the trajectory record.
    pub decimation: usize,
    /// Keep f_out at every grid point (needed for emitted pulses).
    #[serde(default)]
    pub record_output_field: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            decimation: DEFAULT_DECIMATION,
            record_output_field: false,
        }
    }
}

impl IntegratorConfig {
    pub fn with_dt(dt: f64) -> Self {
        Self {
            dt,
            ..Self::default()
        }
    }
}

/// Integrals accumulated over the whole run, per unit branch weight.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Totals {
    /// ∫|f_in|²
    pub n_in: f64,
    /// ∫|f_out^g|², ∫|f_out^f|²
    pub out_g: f64,
    pub out_f: f64,
    /// ∫ γ_q|C_q|² + γ_e|D_q|² per branch.
    pub decoh_g: f64,
    pub decoh_f: f64,
    /// ∫|(f_out^f − f_out^g)/2|² and ∫|(f_out^f + f_out^g)/2|²
    pub minus: f64,
    pub plus: f64,
    /// ∫ conj(f_out^g)·f_out^f
    pub cross: Complex64,
    /// ∫ conj(f_ref)·(f_out^f − f_out^g)/2 and ∫|f_ref|², when a reference is given.
    pub reference_overlap: Complex64,
    pub reference_norm: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Acc {
    n_in: f64,
    out_g: f64,
    out_f: f64,
    decoh_g: f64,
    decoh_f: f64,
    minus: f64,
    plus: f64,
    cross: Complex64,
    ref_ov: Complex64,
    ref_norm: f64,
}

impl Acc {
    #[inline]
    fn rate(y: &[Complex64; 7], fin: Complex64, fref: Complex64, r: &Rates) -> Self {
        let og = y[2] * r.sqrt_gamma - fin;
        let of = y[5] * r.sqrt_gamma - fin;
        let minus = (of - og) * 0.5;
        let plus = (of + og) * 0.5;
        Self {
            n_in: fin.norm_sqr(),
            out_g: og.norm_sqr(),
            out_f: of.norm_sqr(),
            decoh_g: r.gamma_q * y[2].norm_sqr() + r.gamma_e * y[3].norm_sqr(),
            decoh_f: r.gamma_q * y[5].norm_sqr() + r.gamma_e * y[6].norm_sqr(),
            minus: minus.norm_sqr(),
            plus: plus.norm_sqr(),
            cross: og.conj() * of,
            ref_ov: fref.conj() * minus,
            ref_norm: fref.norm_sqr(),
        }
    }

    #[inline]
    fn add_weighted(&mut self, k: &[Acc; 4], h: f64) {
        macro_rules! simpson {
            ($($field:ident),*) => {
                $( self.$field += (k[0].$field + (k[1].$field + k[2].$field) * 2.0 + k[3].$field) * h; )*
            };
        }
        simpson!(n_in, out_g, out_f, decoh_g, decoh_f, minus, plus, cross, ref_ov, ref_norm);
    }

    fn totals(&self) -> Totals {
        Totals {
            n_in: self.n_in,
            out_g: self.out_g,
            out_f: self.out_f,
            decoh_g: self.decoh_g,
            decoh_f: self.decoh_f,
            minus: self.minus,
            plus: self.plus,
            cross: self.cross,
            reference_overlap: self.ref_ov,
            reference_norm: self.ref_norm,
        }
    }
}

/// Full-resolution output field on the integration grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputField {
    pub t0: f64,
    pub dt: f64,
    pub g: Vec<Complex64>,
    pub f: Vec<Complex64>,
}

impl OutputField {
    pub fn branch_f(&self) -> Pulse {
        Pulse {
            t0: self.t0,
            dt: self.dt,
            samples: self.f.clone(),
        }
    }

    pub fn branch_g(&self) -> Pulse {
        Pulse {
            t0: self.t0,
            dt: self.dt,
            samples: self.g.clone(),
        }
    }
}

/// Decimated trajectory with ledgers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationRecord {
    pub dt: f64,
    pub weights: BranchWeights,
    pub times: Vec<f64>,
    pub states: Vec<QuantumState>,
    pub f_in: Vec<Complex64>,
    pub f_out_g: Vec<Complex64>,
    pub f_out_f: Vec<Complex64>,
    pub delta_q: Vec<f64>,
    pub delta_s: Vec<f64>,
    /// Weighted internal norm.
    pub n_int: Vec<f64>,
    pub n_out: Vec<f64>,
    /// Input delivered so far plus the initial internal norm.
    pub n_in: Vec<f64>,
    pub n_decoh: Vec<f64>,
    pub totals: Totals,
    pub final_state: QuantumState,
    pub output_field: Option<OutputField>,
}

impl SimulationRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn empty(dt: f64) -> Self {
        Self {
            dt,
            weights: BranchWeights::EQUAL,
            times: vec![],
            states: vec![],
            f_in: vec![],
            f_out_g: vec![],
            f_out_f: vec![],
            delta_q: vec![],
            delta_s: vec![],
            n_int: vec![],
            n_out: vec![],
            n_in: vec![],
            n_decoh: vec![],
            totals: Totals::default(),
            final_state: QuantumState::zero(),
            output_field: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormReport {
    pub max_violation: f64,
    pub t_at_max: f64,
}

/// max over stored points of |N_int + N_out + N_decoh − N_in|.
pub fn norm_ledger(record: &SimulationRecord) -> NormReport {
    let mut report = NormReport {
        max_violation: 0.0,
        t_at_max: record.times.first().copied().unwrap_or(0.0),
    };
    for i in 0..record.len() {
        let v = (record.n_int[i] + record.n_out[i] + record.n_decoh[i] - record.n_in[i]).abs();
        if v > report.max_violation {
            report = NormReport {
                max_violation: v,
                t_at_max: record.times[i],
            };
        }
    }
    report
}

/// Input pulse mapped onto the integration grid.
struct GridPulse {
    pulse: Pulse,
    /// Grid index of the pulse's first sample.
    offset: isize,
}

impl GridPulse {
    fn new(pulse: &Pulse, t_start: f64, dt: f64) -> Self {
        let x = (pulse.t0 - t_start) / dt;
        let aligned = (pulse.dt - dt).abs() <= 1e-12 * dt && (x - x.round()).abs() < 1e-6;
        if aligned {
            Self {
                pulse: pulse.clone(),
                offset: x.round() as isize,
            }
        } else {
            let first = x.ceil().max(0.0);
            let t0 = t_start + first * dt;
            Self {
                pulse: pulse.resampled(t0, dt),
                offset: first as isize,
            }
        }
    }

    #[inline]
    fn interval(&self, step: usize) -> [Complex64; 3] {
        self.pulse
            .interval(step as isize - self.offset)
            .unwrap_or([ZERO; 3])
    }

    #[inline]
    fn at(&self, step: usize) -> Complex64 {
        self.pulse.at_index(step as isize - self.offset)
    }
}

/// Everything one integration needs besides the step configuration.
#[derive(Debug, Clone)]
pub struct Integration<'a> {
    pub params: &'a SystemParams,
    pub schedule: &'a ControlSchedule,
    pub input: Option<&'a Pulse>,
    pub initial: QuantumState,
    pub weights: BranchWeights,
    pub t_span: (f64, f64),
    /// Reference pulse for the output mode overlap.
    pub reference: Option<&'a Pulse>,
}

impl<'a> Integration<'a> {
    pub fn new(params: &'a SystemParams, schedule: &'a ControlSchedule) -> Self {
        Self {
            params,
            schedule,
            input: None,
            initial: QuantumState::zero(),
            weights: BranchWeights::EQUAL,
            t_span: (schedule.start(), schedule.end()),
            reference: None,
        }
    }

    pub fn input(mut self, pulse: &'a Pulse) -> Self {
        self.input = Some(pulse);
        self
    }

    pub fn initial(mut self, state: QuantumState, weights: BranchWeights) -> Self {
        self.initial = state;
        self.weights = weights;
        self
    }

    pub fn span(mut self, t0: f64, t1: f64) -> Self {
        self.t_span = (t0, t1);
        self
    }

    pub fn reference(mut self, pulse: &'a Pulse) -> Self {
        self.reference = Some(pulse);
        self
    }

    pub fn run(&self, cfg: &IntegratorConfig) -> Result<SimulationRecord, DynamicsError> {
        run(self, cfg)
    }
}

/// Integrates from zero initial amplitudes with equal branch weights.
pub fn integrate(
    params: &SystemParams,
    schedule: &ControlSchedule,
    pulse: Option<&Pulse>,
    t_span: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<SimulationRecord, DynamicsError> {
    let mut job = Integration::new(params, schedule).span(t_span.0, t_span.1);
    job.input = pulse;
    run(&job, cfg)
}

fn run(job: &Integration<'_>, cfg: &IntegratorConfig) -> Result<SimulationRecord, DynamicsError> {
    let (t0, t1) = job.t_span;
    let dt = cfg.dt;
    if !(t0.is_finite() && t1.is_finite() && t1 >= t0) {
        return Err(DynamicsError::BadSpan(t0, t1));
    }
    job.schedule.check_covers(t0)?;
    job.schedule.check_covers(t1)?;
    let limit = STABILITY_LIMIT / rate_bound(job.params, job.schedule);
    if !(dt > 0.0 && dt <= limit) {
        return Err(DynamicsError::UnstableStep { dt, limit });
    }

    let p = job.params;
    let r = Rates::new(p);
    let sched = job.schedule;
    let w = job.weights;
    let baseline = p.storage_detuning;
    let nsteps = ((t1 - t0) / dt).round() as usize;
    let decimation = cfg.decimation.max(1);

    let input = job.input.map(|q| GridPulse::new(q, t0, dt));
    let reference = job.reference.map(|q| GridPulse::new(q, t0, dt));
    let fin_interval = |n: usize| input.as_ref().map_or([ZERO; 3], |g| g.interval(n));
    let fin_at = |n: usize| input.as_ref().map_or(ZERO, |g| g.at(n));
    let ref_interval = |n: usize| reference.as_ref().map_or([ZERO; 3], |g| g.interval(n));

    let mut y = job.initial.to_array();
    let mut acc = Acc::default();
    let n_int0 = w.g * job.initial.norm_g() + w.f * job.initial.norm_f();

    let cap = nsteps / decimation + 2;
    let mut rec = SimulationRecord::empty(dt);
    rec.weights = w;
    for v in [
        &mut rec.times,
        &mut rec.delta_q,
        &mut rec.delta_s,
        &mut rec.n_int,
        &mut rec.n_out,
        &mut rec.n_in,
        &mut rec.n_decoh,
    ] {
        v.reserve(cap);
    }
    let mut field = cfg.record_output_field.then(|| OutputField {
        t0,
        dt,
        g: Vec::with_capacity(nsteps + 1),
        f: Vec::with_capacity(nsteps + 1),
    });

    let store = |rec: &mut SimulationRecord, n: usize, y: &[Complex64; 7], acc: &Acc| {
        let t = t0 + n as f64 * dt;
        let fin = fin_at(n);
        let st = QuantumState::from_array(*y);
        let n_int = w.g * st.norm_g() + w.f * st.norm_f();
        let n_out = w.g * acc.out_g + w.f * acc.out_f;
        let n_decoh = w.g * acc.decoh_g + w.f * acc.decoh_f;
        let n_in = acc.n_in + n_int0;
        rec.times.push(t);
        rec.states.push(st);
        rec.f_in.push(fin);
        rec.f_out_g.push(y[2] * r.sqrt_gamma - fin);
        rec.f_out_f.push(y[5] * r.sqrt_gamma - fin);
        rec.delta_q.push(sched.delta_q_at(t));
        rec.delta_s.push(sched.delta_s_at(t, baseline));
        rec.n_int.push(n_int);
        rec.n_out.push(n_out);
        rec.n_in.push(n_in);
        rec.n_decoh.push(n_decoh);
        (n_int + n_out + n_decoh - n_in).abs()
    };

    store(&mut rec, 0, &y, &acc);
    if let Some(fl) = field.as_mut() {
        let fin = fin_at(0);
        fl.g.push(y[2] * r.sqrt_gamma - fin);
        fl.f.push(y[5] * r.sqrt_gamma - fin);
    }

    let h = dt / 2.0;
    for n in 0..nsteps {
        let t = t0 + n as f64 * dt;
        let [f0, fh, f1] = fin_interval(n);
        let [r0, rh, r1] = ref_interval(n);
        let (q0, qh, q1) = (
            sched.delta_q_at(t),
            sched.delta_q_at(t + h),
            sched.delta_q_at(t + dt),
        );
        let (s0, sh, s1) = (
            sched.delta_s_at(t, baseline),
            sched.delta_s_at(t + h, baseline),
            sched.delta_s_at(t + dt, baseline),
        );

        let k1 = rhs(&y, q0, s0, f0, &r);
        let a1 = Acc::rate(&y, f0, r0, &r);
        let y2 = axpy(&y, &k1, h);
        let k2 = rhs(&y2, qh, sh, fh, &r);
        let a2 = Acc::rate(&y2, fh, rh, &r);
        let y3 = axpy(&y, &k2, h);
        let k3 = rhs(&y3, qh, sh, fh, &r);
        let a3 = Acc::rate(&y3, fh, rh, &r);
        let y4 = axpy(&y, &k3, dt);
        let k4 = rhs(&y4, q1, s1, f1, &r);
        let a4 = Acc::rate(&y4, f1, r1, &r);

        for i in 0..7 {
            y[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (dt / 6.0);
        }
        acc.add_weighted(&[a1, a2, a3, a4], dt / 6.0);

        let step = n + 1;
        if let Some(fl) = field.as_mut() {
            let fin = fin_at(step);
            fl.g.push(y[2] * r.sqrt_gamma - fin);
            fl.f.push(y[5] * r.sqrt_gamma - fin);
        }
        if step % decimation == 0 || step == nsteps {
            let v = store(&mut rec, step, &y, &acc);
            let t = t0 + step as f64 * dt;
            if !v.is_finite() || v > LEDGER_FAILURE {
                return Err(DynamicsError::NumericalFailure { t, violation: v });
            }
        }
    }

    rec.totals = acc.totals();
    rec.final_state = QuantumState::from_array(y);
    rec.output_field = field;
    Ok(rec)
}

#[inline]
fn axpy(y: &[Complex64; 7], k: &[Complex64; 7], h: f64) -> [Complex64; 7] {
    let mut out = *y;
    for i in 0..7 {
        out[i] += k[i] * h;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{Profile, Segment, Track};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn zero_state_has_zero_rate() {
        let p = SystemParams::reference();
        let s = ControlSchedule::pinned(0.0, 1.0, 30.0);
        let d = derivative(&QuantumState::zero(), 0.5, &p, &s, [ZERO; 2]).unwrap();
        assert_eq!(d, QuantumState::zero());
    }

    #[test]
    fn storage_photon_rates() {
        let p = SystemParams::reference();
        let s = ControlSchedule::pinned(0.0, 1.0, 30.0);
        let st = QuantumState {
            c_s_g: c(1.0, 0.0),
            ..QuantumState::zero()
        };
        let d = derivative(&st, 0.0, &p, &s, [ZERO; 2]).unwrap();
        assert_eq!(d.d_s, c(0.0, -5.0));
        assert_eq!(d.c_q_g, c(0.0, -1.0));
        assert_eq!(d.c_s_g, ZERO);
    }

    #[test]
    fn gap_is_reported() {
        let p = SystemParams::reference();
        let s = ControlSchedule::pinned(0.0, 1.0, 30.0);
        let err = derivative(&QuantumState::zero(), 2.0, &p, &s, [ZERO; 2]).unwrap_err();
        assert!(err.to_string().contains("schedule gap"));
    }

    #[test]
    fn closed_system_conserves_norm() {
        let mut p = SystemParams::reference();
        p.gamma = 0.0;
        let track = Track::new(vec![
            Segment::constant(0.0, 20.0, 30.0),
            Segment::ramp(20.0, 40.0, Profile::Linear, 30.0, -10.0),
            Segment::constant(40.0, 100.0, -10.0),
        ])
        .unwrap();
        let s = ControlSchedule::new(track, None).unwrap();
        // Storage atom amplitude on its slow dressed value; RK4 damps modes
        // with ω·dt ~ 1, so the fast one must not be populated.
        let init = QuantumState {
            c_s_g: c(0.6, 0.0),
            d_s: c(-0.6 * p.omega_s / p.storage_detuning, 0.0),
            d_q_g: c(0.0, 0.8),
            c_s_f: c(0.3, 0.4),
            c_q_f: c(0.0, -0.5),
            d_q_f: c(0.5, 0.5),
            ..QuantumState::zero()
        };
        let drift = |dt: f64| {
            let rec = Integration::new(&p, &s)
                .initial(init, BranchWeights::EQUAL)
                .run(&IntegratorConfig::with_dt(dt))
                .unwrap();
            let n0 = rec.n_int[0];
            rec.n_int.iter().map(|n| (n - n0).abs()).fold(0.0, f64::max)
        };
        // RK4 loses (ω·dt)⁶/72 per step on a mode of frequency ω, so the
        // drift falls as dt⁵. Here the switch levels near 50κ dominate.
        let (coarse, fine) = (drift(1e-3), drift(5e-4));
        assert!(coarse < 1e-5, "{coarse}");
        assert!(fine < coarse / 20.0, "{fine} vs {coarse}");
    }

    #[test]
    fn empty_record_has_zero_violation() {
        assert_eq!(norm_ledger(&SimulationRecord::empty(1e-3)).max_violation, 0.0);
    }

    #[test]
    fn rk4_step_is_exact_to_fourth_order_for_rotation() {
        let w = 2.0;
        let y = [c(1.0, 0.0)];
        let dt = 1e-2;
        let out = rk4_step(&y, 0.0, dt, |_, y| [-I * w * y[0]]);
        let exact = (-I * w * dt).exp();
        // Local error (ω·dt)⁵/120.
        let bound = (w * dt).powi(5) / 120.0;
        assert!((out[0] - exact).norm() < 1.01 * bound);
        assert!((out[0] - exact).norm() > 0.99 * bound);
    }

    #[test]
    fn stability_guard_rejects_large_steps() {
        let p = SystemParams::reference();
        let s = ControlSchedule::pinned(0.0, 1.0, 30.0);
        let err = integrate(&p, &s, None, (0.0, 1.0), &IntegratorConfig::with_dt(0.01)).unwrap_err();
        assert!(matches!(err, DynamicsError::UnstableStep { .. }));
        assert_eq!(recommended_dt(&p, &s), 1e-3);
    }

    #[test]
    fn output_field_is_full_resolution() {
        let p = SystemParams::reference();
        let s = ControlSchedule::pinned(0.0, 1.0, 30.0);
        let cfg = IntegratorConfig {
            record_output_field: true,
            ..IntegratorConfig::default()
        };
        let rec = integrate(&p, &s, None, (0.0, 1.0), &cfg).unwrap();
        assert_eq!(rec.output_field.as_ref().unwrap().f.len(), 1001);
        assert_eq!(rec.len(), 11);
    }
}
