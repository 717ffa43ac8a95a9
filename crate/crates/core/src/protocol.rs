//! The three-step gate: capture the photon into the storage cavity, hold it
//! while the storage atom imprints its phase, release it. Pulses are designed
//! by time-reversing a release.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    rk4_step, BranchWeights, DynamicsError, Integration, IntegratorConfig, QuantumState,
    SimulationRecord,
};
use crate::params::{ParamError, SystemParams};
use crate::pulse::{fit_gaussian, time_reverse, GaussianFit, Pulse, PulseError};
use crate::schedule::{ControlSchedule, Profile, ScheduleError, Segment, Track};
use crate::spectral::{self, held_phase_rate, operating_points, SpectralError};

/// Emissions below this probability are flagged as failed.
pub const EMISSION_FAILURE: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Pulse(#[from] PulseError),
    #[error("invalid timing: {0}")]
    Timing(String),
    #[error("emission failed: P_out = {0:.3e}")]
    EmissionFailed(f64),
}

impl ProtocolError {
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            ProtocolError::Dynamics(DynamicsError::NumericalFailure { .. })
                | ProtocolError::Dynamics(DynamicsError::UnstableStep { .. })
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PulsePolicy {
    /// Conjugate time reverse of the photon emitted by the release ramp.
    #[default]
    TimeReversed,
    /// Gaussian envelope; missing centre/width are taken from a fit to the
    /// time-reversed pulse.
    Gaussian {
        #[serde(default)]
        center: Option<f64>,
        #[serde(default)]
        width: Option<f64>,
    },
}

/// Storage-atom detuning lowered during the hold to speed up the phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageModulation {
    /// Δ_s while the switch ramps.
    pub high: f64,
    /// Δ_s in the middle of the hold.
    pub low: f64,
    /// Duration of each raised-cosine Δ_s ramp, inside the hold.
    pub ramp: f64,
}

impl StorageModulation {
    pub const DEFAULT_HIGH: f64 = 1e4;
    pub const DEFAULT_RAMP: f64 = 2.0;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateTiming {
    /// Duration of the capture ramp Δ_q^on → Δ_q^off (κ⁻¹).
    pub switch_time: f64,
    /// Duration of the release ramp; defaults to `switch_time`.
    #[serde(default)]
    pub release_time: Option<f64>,
    /// Time at Δ_q^off between the ramps.
    pub hold_time: f64,
    /// Time the release schedule stays open after its ramp when the pulse is
    /// designed; also the lead of the input pulse before the capture ramp.
    pub emission_tail: f64,
    /// Shift of the capture ramp relative to the designed pulse.
    #[serde(default)]
    pub alignment_offset: f64,
    /// Simulated time after the release ramp.
    pub settle_time: f64,
    #[serde(default = "default_profile")]
    pub profile: Profile,
    #[serde(default)]
    pub pulse: PulsePolicy,
    #[serde(default)]
    pub storage_modulation: Option<StorageModulation>,
}

fn default_profile() -> Profile {
    Profile::Linear
}

impl GateTiming {
    pub const DEFAULT_SWITCH_TIME: f64 = 10.0;

    /// Linear ramps of 10 κ⁻¹, hold T_π, tail 2·T_sw.
    pub fn default_for(params: &SystemParams) -> Result<Self, ProtocolError> {
        Ok(Self::with_switch_time(params, Self::DEFAULT_SWITCH_TIME)?)
    }

    pub fn with_switch_time(params: &SystemParams, switch_time: f64) -> Result<Self, ProtocolError> {
        let hold = spectral::t_pi(params)?;
        let tail = 2.0 * switch_time;
        Ok(Self {
            switch_time,
            release_time: None,
            hold_time: hold,
            emission_tail: tail,
            alignment_offset: 0.0,
            settle_time: tail + 5.0,
            profile: Profile::Linear,
            pulse: PulsePolicy::TimeReversed,
            storage_modulation: None,
        })
    }

    pub fn release(&self) -> f64 {
        self.release_time.unwrap_or(self.switch_time)
    }

    /// Capture ramp start to release ramp end.
    pub fn gate_time(&self) -> f64 {
        self.switch_time + self.hold_time + self.release()
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |what: &str, v: f64| Err(ProtocolError::Timing(format!("{what} = {v}")));
        let finite = [
            self.switch_time,
            self.release(),
            self.hold_time,
            self.emission_tail,
            self.alignment_offset,
            self.settle_time,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(ProtocolError::Timing("non-finite duration".into()));
        }
        if self.switch_time <= 0.0 {
            return bad("switch_time", self.switch_time);
        }
        if self.release() <= 0.0 {
            return bad("release_time", self.release());
        }
        if self.hold_time < 0.0 {
            return bad("hold_time", self.hold_time);
        }
        if self.emission_tail <= 0.0 {
            return bad("emission_tail", self.emission_tail);
        }
        if self.settle_time < 0.0 {
            return bad("settle_time", self.settle_time);
        }
        if self.emission_tail + self.alignment_offset < 0.0 {
            return bad("alignment_offset", self.alignment_offset);
        }
        if let Some(m) = self.storage_modulation {
            if !(m.ramp > 0.0 && 2.0 * m.ramp <= self.hold_time) {
                return Err(ProtocolError::Timing(format!(
                    "storage ramps of {} do not fit in hold {}",
                    m.ramp, self.hold_time
                )));
            }
            if !(m.high.is_finite() && m.low.is_finite()) {
                return Err(ProtocolError::Timing("non-finite storage detuning".into()));
            }
        }
        if let PulsePolicy::Gaussian { width: Some(w), .. } = self.pulse {
            if !(w > 0.0) {
                return bad("pulse width", w);
            }
        }
        Ok(())
    }

    /// Every duration rounded to the integration grid, so that schedule
    /// joints fall on step boundaries.
    pub fn snapped(&self, dt: f64) -> Self {
        let s = |x: f64| (x / dt).round() * dt;
        Self {
            switch_time: s(self.switch_time),
            release_time: self.release_time.map(s),
            hold_time: s(self.hold_time),
            emission_tail: s(self.emission_tail),
            alignment_offset: s(self.alignment_offset),
            settle_time: s(self.settle_time),
            storage_modulation: self.storage_modulation.map(|m| StorageModulation {
                ramp: s(m.ramp),
                ..m
            }),
            ..*self
        }
    }

    /// Storage detuning in effect during the hold.
    pub fn hold_storage_detuning(&self, params: &SystemParams) -> f64 {
        self.storage_modulation
            .map_or(params.storage_detuning, |m| m.low)
    }
}

/// Key times of a gate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GateMarks {
    pub capture_start: f64,
    pub capture_end: f64,
    pub release_start: f64,
    pub release_end: f64,
    pub end: f64,
}

pub fn gate_marks(timing: &GateTiming) -> GateMarks {
    let t1 = timing.emission_tail + timing.alignment_offset;
    let t2 = t1 + timing.switch_time;
    let t3 = t2 + timing.hold_time;
    let t4 = t3 + timing.release();
    GateMarks {
        capture_start: t1,
        capture_end: t2,
        release_start: t3,
        release_end: t4,
        end: t4 + timing.settle_time,
    }
}

/// Five-segment Δ_q track (open, close, hold, open, open) plus the optional
/// Δ_s track.
pub fn build_schedule(
    params: &SystemParams,
    timing: &GateTiming,
) -> Result<ControlSchedule, ProtocolError> {
    timing.validate()?;
    let ops = operating_points(params)?;
    let m = gate_marks(timing);
    let (on, off) = (ops.on, ops.off);
    let mut segs = Vec::with_capacity(5);
    if m.capture_start > 0.0 {
        segs.push(Segment::constant(0.0, m.capture_start, on));
    }
    segs.push(Segment::ramp(m.capture_start, m.capture_end, timing.profile, on, off));
    if timing.hold_time > 0.0 {
        segs.push(Segment::constant(m.capture_end, m.release_start, off));
    }
    segs.push(Segment::ramp(m.release_start, m.release_end, timing.profile, off, on));
    if m.end > m.release_end {
        segs.push(Segment::constant(m.release_end, m.end, on));
    }
    let delta_q = Track::new(segs)?;
    let delta_s = match timing.storage_modulation {
        None => None,
        Some(sm) => {
            let a = m.capture_end;
            let b = m.release_start;
            let mut s = Vec::with_capacity(5);
            s.push(Segment::constant(0.0, a, sm.high));
            s.push(Segment::ramp(a, a + sm.ramp, Profile::RaisedCosine, sm.high, sm.low));
            if b - sm.ramp > a + sm.ramp {
                s.push(Segment::constant(a + sm.ramp, b - sm.ramp, sm.low));
            }
            s.push(Segment::ramp(b - sm.ramp, b, Profile::RaisedCosine, sm.low, sm.high));
            s.push(Segment::constant(b, m.end, sm.high));
            Some(Track::new(s)?)
        }
    };
    Ok(ControlSchedule::new(delta_q, delta_s)?)
}

/// Release-only schedule: closed for `lead`, ramp open over `ramp`, open for `tail`.
pub fn release_schedule(
    params: &SystemParams,
    lead: f64,
    ramp: f64,
    tail: f64,
    profile: Profile,
) -> Result<ControlSchedule, ProtocolError> {
    let ops = operating_points(params)?;
    let mut segs = Vec::with_capacity(3);
    if lead > 0.0 {
        segs.push(Segment::constant(0.0, lead, ops.off));
    }
    segs.push(Segment::ramp(lead, lead + ramp, profile, ops.off, ops.on));
    segs.push(Segment::constant(lead + ramp, lead + ramp + tail, ops.on));
    Ok(ControlSchedule::new(Track::new(segs)?, None)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Emission {
    /// Outgoing field f_out(t) on the integration grid.
    pub pulse: Pulse,
    /// ∫|f_out|²dt
    pub p_out: f64,
    /// Set when P_out < 0.5: the schedule never opened the switch.
    pub failed: bool,
}

/// Releases a photon that starts in the storage mode (C_s = 1, storage atom
/// in |f⟩) under `schedule`, with no input field.
pub fn emit_photon(
    params: &SystemParams,
    schedule: &ControlSchedule,
    cfg: &IntegratorConfig,
) -> Result<Emission, ProtocolError> {
    let init = QuantumState {
        c_s_f: Complex64::new(1.0, 0.0),
        ..QuantumState::zero()
    };
    let cfg = IntegratorConfig {
        record_output_field: true,
        decimation: cfg.decimation.max(1000),
        ..cfg.clone()
    };
    let rec = Integration::new(params, schedule)
        .initial(init, BranchWeights::F_ONLY)
        .run(&cfg)?;
    let field = rec.output_field.expect("requested output field");
    let p_out = rec.totals.out_f;
    Ok(Emission {
        pulse: field.branch_f(),
        p_out,
        failed: p_out < EMISSION_FAILURE,
    })
}

/// Photon released by the timing's release ramp, from lossless parameters.
pub fn design_emission(
    params: &SystemParams,
    timing: &GateTiming,
    cfg: &IntegratorConfig,
) -> Result<Emission, ProtocolError> {
    let lossless = params.lossless();
    let sched = release_schedule(
        &lossless,
        0.0,
        timing.release(),
        timing.emission_tail,
        timing.profile,
    )?;
    emit_photon(&lossless, &sched, cfg)
}

/// Normalized input pulse for `timing`, starting at t = 0.
pub fn input_pulse(emission: &Emission, timing: &GateTiming) -> Result<Pulse, ProtocolError> {
    if emission.failed {
        return Err(ProtocolError::EmissionFailed(emission.p_out));
    }
    let reversed = time_reverse(&emission.pulse).normalized()?;
    match timing.pulse {
        PulsePolicy::TimeReversed => Ok(reversed),
        PulsePolicy::Gaussian { center, width } => {
            let (t, dt, n) = (reversed.t0, reversed.dt, reversed.len());
            if let (Some(c), Some(w)) = (center, width) {
                return Ok(crate::pulse::gaussian(c, w, t, dt, n));
            }
            // Missing shape parameters come from the best fit, carrier included.
            let mut fit = fit_gaussian(&reversed)?;
            fit.t0 = center.unwrap_or(fit.t0);
            fit.sigma = width.unwrap_or(fit.sigma);
            Ok(fit.pulse(t, dt, n))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QubitInit {
    /// (|g⟩ + |f⟩)/√2
    Plus,
    /// (|g⟩ − |f⟩)/√2
    Minus,
    G,
    F,
}

impl QubitInit {
    pub fn weights(self) -> BranchWeights {
        match self {
            QubitInit::Plus | QubitInit::Minus => BranchWeights::EQUAL,
            QubitInit::G => BranchWeights::G_ONLY,
            QubitInit::F => BranchWeights::F_ONLY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateResult {
    /// Probability of the photon leaving in the flipped qubit state.
    pub fidelity: f64,
    /// arg ∫ conj(f_out^g)·f_out^f dt, in (−π, π].
    pub conditional_phase: f64,
    pub p_return: f64,
    pub loss_decoherence: f64,
    pub loss_residual_internal: f64,
    /// |⟨f_out^−|f_ref⟩|² of the normalized shapes; zero without a reference.
    pub mode_overlap: f64,
    pub t_gate: f64,
}

/// Integrates both branches with the same input and forms the gate metrics.
///
/// For `Plus`/`Minus` the fidelity is ∫|(f_out^f − f_out^g)/2|²dt; for a
/// single branch it is that branch's return probability.
pub fn run_gate(
    params: &SystemParams,
    schedule: &ControlSchedule,
    pulse: &Pulse,
    init: QubitInit,
    reference: Option<&Pulse>,
    cfg: &IntegratorConfig,
) -> Result<(GateResult, SimulationRecord), ProtocolError> {
    let mut job = Integration::new(params, schedule)
        .input(pulse)
        .initial(QuantumState::zero(), init.weights());
    job.reference = reference;
    let rec = job.run(cfg)?;
    let t = &rec.totals;
    let w = rec.weights;
    let fidelity = match init {
        QubitInit::Plus | QubitInit::Minus => t.minus,
        QubitInit::G => t.out_g,
        QubitInit::F => t.out_f,
    };
    let conditional_phase = if t.cross.norm() == 0.0 { 0.0 } else { t.cross.arg() };
    let mode_overlap = if t.minus > 0.0 && t.reference_norm > 0.0 {
        t.reference_overlap.norm_sqr() / (t.minus * t.reference_norm)
    } else {
        0.0
    };
    let final_int = w.g * rec.final_state.norm_g() + w.f * rec.final_state.norm_f();
    let result = GateResult {
        fidelity,
        conditional_phase,
        p_return: w.g * t.out_g + w.f * t.out_f,
        loss_decoherence: w.g * t.decoh_g + w.f * t.decoh_f,
        loss_residual_internal: final_int,
        mode_overlap: mode_overlap.min(1.0),
        t_gate: 0.0,
    };
    Ok((result, rec))
}

/// Everything produced by one end-to-end gate simulation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateRun {
    pub timing: GateTiming,
    pub result: GateResult,
    #[serde(skip)]
    pub record: SimulationRecord,
    #[serde(skip)]
    pub schedule: ControlSchedule,
    #[serde(skip)]
    pub input: Pulse,
    pub emission_p_out: f64,
}

/// Designs the pulse, builds the schedule and runs the gate from |+⟩.
pub fn simulate_gate(
    params: &SystemParams,
    timing: &GateTiming,
    cfg: &IntegratorConfig,
) -> Result<GateRun, ProtocolError> {
    let timing = timing.snapped(cfg.dt);
    let emission = design_emission(params, &timing, cfg)?;
    simulate_gate_with(params, &timing, &emission, cfg)
}

/// As [`simulate_gate`] with a pulse design computed beforehand; `timing`
/// must already be on the grid.
pub fn simulate_gate_with(
    params: &SystemParams,
    timing: &GateTiming,
    emission: &Emission,
    cfg: &IntegratorConfig,
) -> Result<GateRun, ProtocolError> {
    let input = input_pulse(emission, timing)?;
    let schedule = build_schedule(params, timing)?;
    let marks = gate_marks(timing);
    let reference = emission.pulse.shifted(marks.release_start);
    let (mut result, record) =
        run_gate(params, &schedule, &input, QubitInit::Plus, Some(&reference), cfg)?;
    result.t_gate = timing.gate_time();
    Ok(GateRun {
        timing: *timing,
        result,
        record,
        schedule,
        input,
        emission_p_out: emission.p_out,
    })
}

/// Wraps an angle into (−π, π].
pub fn wrap_phase(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

/// Phase rotated beyond π by the hold: wrap(π − φ).
pub fn over_rotation(conditional_phase: f64) -> f64 {
    wrap_phase(PI - conditional_phase)
}

/// Adjusts the hold so the conditional phase is π, by Newton steps using the
/// held-photon phase rate. Returns the calibrated run.
pub fn calibrate_hold(
    params: &SystemParams,
    timing: &GateTiming,
    cfg: &IntegratorConfig,
    max_iterations: usize,
) -> Result<GateRun, ProtocolError> {
    let mut timing = timing.snapped(cfg.dt);
    let emission = design_emission(params, &timing, cfg)?;
    let rate = held_phase_rate(params, timing.hold_storage_detuning(params));
    let min_hold = timing.storage_modulation.map_or(0.0, |m| 2.0 * m.ramp);
    let mut run = simulate_gate_with(params, &timing, &emission, cfg)?;
    if rate <= 0.0 {
        return Ok(run);
    }
    for _ in 0..max_iterations {
        let over = over_rotation(run.result.conditional_phase);
        if over.abs() < 1e-9 {
            break;
        }
        let hold = (timing.hold_time - over / rate).max(min_hold);
        let next = GateTiming {
            hold_time: hold,
            ..timing
        }
        .snapped(cfg.dt);
        if next.hold_time == timing.hold_time {
            break;
        }
        timing = next;
        run = simulate_gate_with(params, &timing, &emission, cfg)?;
    }
    Ok(run)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakageInit {
    /// The E = 0 eigenvector at Δ_q^off.
    ExactDark,
    /// The internal state left by the capture half of the gate.
    PostCaptureState,
}

/// Fraction of the internal population lost (emitted or decohered) while
/// the switch is held at Δ_q^off for `duration`. Uses the f-branch, where
/// the held state does not see the storage atom.
pub fn hold_leakage(
    params: &SystemParams,
    timing: &GateTiming,
    duration: f64,
    init: LeakageInit,
    cfg: &IntegratorConfig,
) -> Result<f64, ProtocolError> {
    let ops = operating_points(params)?;
    let start = match init {
        LeakageInit::ExactDark => {
            let k = params.kappa;
            let w = params.omega_q;
            let n = (k * k + w * w).sqrt();
            QuantumState {
                c_s_f: Complex64::new(w / n, 0.0),
                d_q_f: Complex64::new(-k / n, 0.0),
                ..QuantumState::zero()
            }
        }
        LeakageInit::PostCaptureState => {
            let timing = timing.snapped(cfg.dt);
            let emission = design_emission(params, &timing, cfg)?;
            let input = input_pulse(&emission, &timing)?;
            let marks = gate_marks(&timing);
            let full = build_schedule(params, &timing)?;
            let rec = Integration::new(params, &full)
                .input(&input)
                .initial(QuantumState::zero(), BranchWeights::F_ONLY)
                .span(0.0, marks.capture_end)
                .run(cfg)?;
            let s = rec.final_state;
            QuantumState {
                c_s_f: s.c_s_f,
                c_q_f: s.c_q_f,
                d_q_f: s.d_q_f,
                ..QuantumState::zero()
            }
        }
    };
    let n0 = start.norm_f();
    let hold = ControlSchedule::pinned(0.0, duration, ops.off);
    let rec = Integration::new(params, &hold)
        .initial(start, BranchWeights::F_ONLY)
        .run(cfg)?;
    Ok(1.0 - rec.final_state.norm_f() / n0)
}

/// Probability left inside the cavities after `pulse` drives the f-branch
/// under `schedule` (the storage atom is inert there).
pub fn capture_probability(
    params: &SystemParams,
    schedule: &ControlSchedule,
    pulse: &Pulse,
    cfg: &IntegratorConfig,
) -> Result<f64, ProtocolError> {
    let rec = Integration::new(params, schedule)
        .input(pulse)
        .initial(QuantumState::zero(), BranchWeights::F_ONLY)
        .run(cfg)?;
    Ok(rec.final_state.norm_f() / pulse.norm_sqr())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReciprocityReport {
    pub emission_p_out: f64,
    pub capture_time_reversed: f64,
    pub capture_gaussian: f64,
    pub gaussian_fit: GaussianFit,
}

/// Emits with the release schedule, then captures the reversed photon (and
/// its best-fit Gaussian) with the mirrored schedule.
pub fn reciprocity(
    params: &SystemParams,
    ramp: f64,
    tail: f64,
    profile: Profile,
    cfg: &IntegratorConfig,
) -> Result<ReciprocityReport, ProtocolError> {
    let release = release_schedule(params, 0.0, ramp, tail, profile)?;
    let emission = emit_photon(params, &release, cfg)?;
    if emission.failed {
        return Err(ProtocolError::EmissionFailed(emission.p_out));
    }
    let capture = release.mirrored();
    let reversed = time_reverse(&emission.pulse).normalized()?;
    let fit = fit_gaussian(&reversed)?;
    let gauss = fit.pulse(reversed.t0, reversed.dt, reversed.len());
    Ok(ReciprocityReport {
        emission_p_out: emission.p_out,
        capture_time_reversed: capture_probability(params, &capture, &reversed, cfg)?,
        capture_gaussian: capture_probability(params, &capture, &gauss, cfg)?,
        gaussian_fit: fit,
    })
}

/// Accumulated conditional phase with the photon already stored: both
/// branches start with C_s = 1 and the switch pinned at Δ_q^off. Returns the
/// unwrapped magnitude of arg(C_s^f·conj(C_s^g)) after `duration`.
pub fn held_phase(
    params: &SystemParams,
    duration: f64,
    cfg: &IntegratorConfig,
) -> Result<f64, ProtocolError> {
    let ops = operating_points(params)?;
    let hold = ControlSchedule::pinned(0.0, duration, ops.off);
    let one = Complex64::new(1.0, 0.0);
    let init = QuantumState {
        c_s_g: one,
        c_s_f: one,
        ..QuantumState::zero()
    };
    let cfg = IntegratorConfig {
        decimation: cfg.decimation.clamp(1, 10),
        ..cfg.clone()
    };
    let rec = Integration::new(params, &hold)
        .initial(init, BranchWeights::EQUAL)
        .run(&cfg)?;
    let phases = rec.states.iter().map(|s| (s.c_s_g * s.c_s_f.conj()).arg());
    Ok(unwrap_total(phases).abs())
}

/// Phase accumulated by a dressed storage photon with the storage pair
/// isolated from the switch (κ = 0): the initial state is the dressed
/// eigenvector, so the only rotation is the dispersive shift.
pub fn storage_phase(omega_s: f64, storage_detuning: f64, duration: f64, dt: f64) -> f64 {
    let (w, d) = (omega_s, storage_detuning);
    let chi = spectral::exact_phase_rate(w, d);
    // Eigenvector of [[0, Ω],[Ω, Δ]] with eigenvalue −χ.
    let n = (w * w + chi * chi).sqrt();
    let mut y = [Complex64::new(w / n, 0.0), Complex64::new(-chi / n, 0.0)];
    let i = Complex64::new(0.0, 1.0);
    let steps = (duration / dt).round() as usize;
    let h = duration / steps.max(1) as f64;
    let mut phases = Vec::with_capacity(steps + 1);
    phases.push(y[0].arg());
    for k in 0..steps {
        y = rk4_step(&y, k as f64 * h, h, |_, v| {
            [-i * v[1] * w, -i * (v[1] * d + v[0] * w)]
        });
        phases.push(y[0].arg());
    }
    unwrap_total(phases.into_iter()).abs()
}

fn unwrap_total(phases: impl Iterator<Item = f64>) -> f64 {
    let mut total = 0.0;
    let mut prev: Option<f64> = None;
    for p in phases {
        if let Some(q) = prev {
            total += wrap_phase(p - q);
        }
        prev = Some(p);
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StaticBaseline {
    /// Carrier differential phase 2·arctan(2χ/γ).
    pub differential_phase: f64,
    /// |arg⟨r_f* r_g⟩| averaged over the pulse spectrum.
    pub averaged_phase: f64,
    /// |⟨r_f* r_g⟩|² over the pulse spectrum.
    pub mode_overlap: f64,
}

/// Reflection of a single-sided cavity at detuning δ: (iδ − γ/2)/(iδ + γ/2).
pub fn reflection(delta: f64, gamma: f64) -> Complex64 {
    let i = Complex64::new(0.0, 1.0);
    (i * delta - gamma / 2.0) / (i * delta + gamma / 2.0)
}

/// Static-cavity gate: the storage atom pulls the cavity by χ in the
/// g-branch only. `pulse_sigma` is the intensity standard deviation in time
/// of a Gaussian pulse; zero means monochromatic.
pub fn static_baseline(gamma: f64, chi: f64, pulse_sigma: f64) -> StaticBaseline {
    let differential_phase = 2.0 * (2.0 * chi / gamma).atan();
    if pulse_sigma <= 0.0 {
        return StaticBaseline {
            differential_phase,
            averaged_phase: differential_phase,
            mode_overlap: 1.0,
        };
    }
    // |f(t)|² with standard deviation σ has spectral std 1/(2σ).
    let sw = 1.0 / (2.0 * pulse_sigma);
    let n = 4001;
    let span = 8.0 * sw;
    let step = 2.0 * span / (n - 1) as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    let mut wsum = 0.0;
    for k in 0..n {
        let w = -span + k as f64 * step;
        let p = (-w * w / (2.0 * sw * sw)).exp();
        acc += reflection(w, gamma).conj() * reflection(w + chi, gamma) * p;
        wsum += p;
    }
    let a = acc / wsum;
    StaticBaseline {
        differential_phase,
        averaged_phase: a.arg().abs(),
        mode_overlap: a.norm_sqr(),
    }
}

/// χ giving phase error ε with sin²(ε/2) = `infidelity` in a cavity of decay γ.
pub fn calibrate_static_shift(gamma: f64, infidelity: f64) -> f64 {
    let eps = 2.0 * infidelity.sqrt().asin();
    gamma / 2.0 * ((PI - eps) / 2.0).tan()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let p = SystemParams::reference();
        let t = GateTiming::default_for(&p).unwrap().snapped(1e-3);
        let s = build_schedule(&p, &t).unwrap();
        assert_eq!(s.delta_q.segments().len(), 5);
        let m = gate_marks(&t);
        assert_eq!(s.delta_q_at(0.0), 30.0);
        assert_eq!(s.delta_q_at(m.capture_end + 1.0), -10.0);
        assert_eq!(s.delta_q_at(m.end), 30.0);
    }

    #[test]
    fn echo_schedule_without_hold() {
        let p = SystemParams::reference();
        let mut t = GateTiming::default_for(&p).unwrap();
        t.hold_time = 0.0;
        let s = build_schedule(&p, &t).unwrap();
        assert_eq!(s.delta_q.segments().len(), 4);
    }

    #[test]
    fn raised_cosine_joints_are_flat() {
        let p = SystemParams::reference();
        let mut t = GateTiming::default_for(&p).unwrap();
        t.profile = Profile::RaisedCosine;
        let s = build_schedule(&p, &t).unwrap();
        for j in s.delta_q.joints() {
            assert!(s.delta_q.rate(j).abs() < 1e-12);
        }
    }

    #[test]
    fn modulated_storage_track() {
        let p = SystemParams::reference();
        let mut t = GateTiming::default_for(&p).unwrap();
        t.hold_time = 20.0;
        t.storage_modulation = Some(StorageModulation {
            high: 1e4,
            low: 700.0,
            ramp: 2.0,
        });
        let s = build_schedule(&p, &t).unwrap();
        let m = gate_marks(&t);
        assert_eq!(s.delta_s_at(m.capture_start, 0.0), 1e4);
        assert_eq!(s.delta_s_at(m.capture_end + 10.0, 0.0), 700.0);
        t.hold_time = 3.0;
        assert!(build_schedule(&p, &t).is_err());
    }

    #[test]
    fn wrap_and_over_rotation() {
        assert!((wrap_phase(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert!((over_rotation(PI - 0.1) - 0.1).abs() < 1e-12);
        assert!((over_rotation(-PI + 0.1) + 0.1).abs() < 1e-12);
    }

    #[test]
    fn static_limits() {
        assert_eq!(static_baseline(1.0, 0.0, 0.0).differential_phase, 0.0);
        assert!((static_baseline(1.0, 1e9, 0.0).differential_phase - PI).abs() < 1e-8);
        let chi = calibrate_static_shift(1.0, 1e-3);
        let eps = PI - static_baseline(1.0, chi, 0.0).differential_phase;
        assert!(((eps / 2.0).sin().powi(2) - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn reflection_is_unitary() {
        for d in [-3.0, 0.0, 0.7, 100.0] {
            assert!((reflection(d, 2.0).norm() - 1.0).abs() < 1e-14);
        }
        assert!((reflection(0.0, 1.0) + 1.0).norm() < 1e-15);
    }

    #[test]
    fn storage_phase_matches_dressed_rate() {
        let ph = storage_phase(5.0, 1000.0, 10.0, 1e-3);
        let expect = 10.0 * spectral::exact_phase_rate(5.0, 1000.0);
        assert!((ph - expect).abs() < 1e-9 * expect.max(1.0) + 1e-10);
    }
}
