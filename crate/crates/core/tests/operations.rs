//! End-to-end checks of individual operations against simulation and
//! closed-form references.

use std::f64::consts::PI;

use num_complex::Complex64;
use qswitch::dynamics::{derivative, BranchWeights, Integration, IntegratorConfig, QuantumState};
use qswitch::experiments::{run_fig2, RunSettings};
use qswitch::optimize::{
    objective_gate, optimize_schedule, FreeParameter, Objective, OptimizationProblem, ParameterBound,
};
use qswitch::params::{preset, to_dimensionless, PhysicalParams, SystemParams};
use qswitch::protocol::{
    build_schedule, design_emission, emit_photon, gate_marks, hold_leakage, input_pulse,
    release_schedule, run_gate, simulate_gate, simulate_gate_with, GateTiming, LeakageInit, QubitInit,
};
use qswitch::pulse::{fit_gaussian, time_reverse};
use qswitch::schedule::{ControlSchedule, Profile};
use qswitch::spectral::{
    absorption_estimate, adiabaticity, dressed_matrix, eigensystem, operating_points, t_pi,
};

fn cfg(dt: f64) -> IntegratorConfig {
    IntegratorConfig::with_dt(dt)
}

fn fig2_settings() -> RunSettings {
    RunSettings {
        dt: Some(1e-3),
        ..RunSettings::default()
    }
}

#[test]
fn lossless_generator_is_hermitian() {
    let p = SystemParams {
        gamma: 0.0,
        ..SystemParams::reference()
    };
    let sched = ControlSchedule::pinned(0.0, 1.0, 7.5);
    // Fixed pseudo-random amplitudes; a Weyl sequence is enough here.
    let amp = |k: usize| {
        let x = (k as f64 * 0.754_877_666).fract() - 0.5;
        let y = (k as f64 * 0.569_840_290).fract() - 0.5;
        Complex64::new(x, y)
    };
    for shift in 0..5 {
        let s = QuantumState::from_array(std::array::from_fn(|k| amp(7 * shift + k + 1)));
        let d = derivative(&s, 0.5, &p, &sched, [Complex64::default(); 2]).unwrap();
        let rate: f64 = s
            .to_array()
            .iter()
            .zip(d.to_array())
            .map(|(a, b)| 2.0 * (a.conj() * b).re)
            .sum();
        assert!(rate.abs() < 1e-12, "d‖ψ‖²/dt = {rate:e}");
    }
}

#[test]
fn reference_gate_stores_and_releases_the_photon() {
    let out = run_fig2(&fig2_settings()).unwrap();
    let rec = &out.run.record;
    let stored: Vec<f64> = rec
        .states
        .iter()
        .map(|s| 0.5 * (s.c_s_g.norm_sqr() + s.c_s_f.norm_sqr()))
        .collect();
    let peak = stored.iter().cloned().fold(0.0, f64::max);
    assert!(peak > 0.95, "storage peak {peak}");
    let last = *stored.last().unwrap();
    assert!(last < 1e-3, "storage left at the end {last:e}");
    let n_in = *rec.n_in.last().unwrap();
    assert!((n_in - 1.0).abs() < 1e-9, "N_in = {n_in}");
}

#[test]
fn capture_half_converges_with_step() {
    // Capture only: the state at the end of the capture ramp, at three steps.
    let p = SystemParams::reference();
    let timing = GateTiming::default_for(&p).unwrap().snapped(1e-3);
    let emission = design_emission(&p, &timing, &cfg(1e-3)).unwrap();
    let input = input_pulse(&emission, &timing).unwrap();
    let sched = build_schedule(&p, &timing).unwrap();
    let end = gate_marks(&timing).capture_end;
    let finals: Vec<[Complex64; 7]> = [1e-3, 5e-4, 2.5e-4]
        .iter()
        .map(|&dt| {
            Integration::new(&p, &sched)
                .input(&input)
                .initial(QuantumState::zero(), BranchWeights::EQUAL)
                .span(0.0, end)
                .run(&cfg(dt))
                .unwrap()
                .final_state
                .to_array()
        })
        .collect();
    let dist = |a: &[Complex64; 7], b: &[Complex64; 7]| {
        a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
    };
    let ratio = dist(&finals[0], &finals[1]) / dist(&finals[1], &finals[2]);
    assert!((ratio - 16.0).abs() < 4.0, "Richardson ratio {ratio}");
}

#[test]
fn open_point_eigenvalues_to_leading_order() {
    let p = SystemParams::reference();
    let es = eigensystem(&dressed_matrix(&p, 30.0, false));
    let split = 2.0 / 5f64.sqrt();
    let expect = [-split, split, 50.0];
    let mut got: Vec<f64> = es.values.iter().map(|z| z.re).collect();
    got.sort_by(f64::total_cmp);
    for (g, e) in got.iter().zip(expect) {
        // Corrections are second order in κ over the 50κ dressed gap.
        assert!((g - e).abs() < 0.05, "{g} vs {e}");
    }
}

#[test]
fn adiabaticity_is_linear_in_sweep_rate() {
    let p = SystemParams::reference();
    let ops = operating_points(&p).unwrap();
    let value_at_midpoint = |ramp: f64| {
        let sched = release_schedule(&p, 0.0, ramp, 1.0, Profile::Linear).unwrap();
        let mid = 0.5 * ramp;
        let dq = sched.delta_q_at(mid);
        assert!((dq - 0.5 * (ops.on + ops.off)).abs() < 1e-12);
        // Follow the eigenvector nearest zero energy at that Δ_q.
        let es = eigensystem(&dressed_matrix(&p, dq, false));
        let i = (0..3)
            .min_by(|&a, &b| es.values[a].norm().total_cmp(&es.values[b].norm()))
            .unwrap();
        let v: Vec<f64> = es.vectors[i].iter().map(|z| z.re).collect();
        adiabaticity(&p, &sched, mid, &v).unwrap().0
    };
    let fast = value_at_midpoint(10.0);
    let slow = value_at_midpoint(20.0);
    assert!(fast > 0.0);
    assert!((fast / slow - 2.0).abs() < 1e-9, "ratio {}", fast / slow);
}

#[test]
fn phase_flip_time_and_absorption_for_wide_detuning() {
    let p = SystemParams {
        storage_detuning: 1e4,
        ..SystemParams::reference()
    };
    assert!((t_pi(&p).unwrap() - 400.0 * PI).abs() < 1e-9);
    assert!((absorption_estimate(&p).eta - 2.5e-7).abs() < 1e-18);
}

#[test]
fn nv_unit_conversion() {
    let nv = preset("nv-diamond").unwrap();
    let g = nv.physical.gamma_abs();
    assert!((g - 1.475e9).abs() < 1.0, "γ_abs = {g}");
    let (_, time_unit) = to_dimensionless(&PhysicalParams {
        kappa_abs: Some(g),
        ..nv.physical
    })
    .unwrap();
    assert!((20e-9 / time_unit - 29.5).abs() < 1e-9);
}

#[test]
fn emission_limits() {
    let p = SystemParams::reference();
    let open = release_schedule(&p, 0.0, 10.0, 20.0, Profile::Linear).unwrap();
    let e = emit_photon(&p, &open, &cfg(1e-3)).unwrap();
    assert!(e.p_out >= 1.0 - 1e-3, "P_out = {}", e.p_out);

    let sealed = SystemParams {
        gamma: 0.0,
        ..p
    };
    let e = emit_photon(&sealed, &open, &cfg(1e-3)).unwrap();
    assert_eq!(e.p_out, 0.0);
    assert!(e.failed);

}

/// The stored photon is not exactly the dark state: its bright part,
/// weight κ²/(κ²+Ω_q²), leaves through the switch.
#[test]
fn closed_switch_leaks_only_the_bright_part() {
    let p = SystemParams::reference();
    let ops = operating_points(&p).unwrap();
    let dark = ControlSchedule::pinned(0.0, 100.0, ops.off);
    let e = emit_photon(&p, &dark, &cfg(1e-3)).unwrap();
    let bright = 1.0 / (1.0 + p.omega_q * p.omega_q);
    assert!((e.p_out - bright).abs() < 1e-5, "P_out = {:e}", e.p_out);
}

#[test]
#[ignore = "a photon starting in the storage mode leaks about 2.5e-3; see the decisions ledger"]
fn closed_switch_emits_below_1e_3() {
    let p = SystemParams::reference();
    let ops = operating_points(&p).unwrap();
    let dark = ControlSchedule::pinned(0.0, 100.0, ops.off);
    let e = emit_photon(&p, &dark, &cfg(1e-3)).unwrap();
    assert!(e.p_out < 1e-3, "P_out = {:e}", e.p_out);
}

/// Does not reproduce: at γ = κ the photon and the open switch state are
/// underdamped, and the beat leaves a residual near 0.37.
#[test]
#[ignore = "emitted pulse is not near-Gaussian in this model; see the decisions ledger"]
fn emitted_pulse_is_near_gaussian() {
    let p = SystemParams::reference();
    let timing = GateTiming::default_for(&p).unwrap();
    let e = design_emission(&p, &timing, &cfg(1e-3)).unwrap();
    let fit = fit_gaussian(&time_reverse(&e.pulse)).unwrap();
    assert!(fit.residual < 0.05, "residual {}", fit.residual);
}

#[test]
fn no_storage_coupling_means_no_gate() {
    let p = SystemParams {
        omega_s: 0.0,
        ..SystemParams::reference()
    };
    let mut timing = GateTiming::default_for(&SystemParams::reference()).unwrap();
    timing.hold_time = 40.0 * PI;
    let run = simulate_gate(&p, &timing, &cfg(1e-3)).unwrap();
    assert_eq!(run.result.conditional_phase, 0.0);
    assert_eq!(run.result.fidelity, 0.0);
}

#[test]
fn closed_switch_reflects() {
    let p = SystemParams::reference();
    let timing = GateTiming::default_for(&p).unwrap().snapped(1e-3);
    let emission = design_emission(&p, &timing, &cfg(1e-3)).unwrap();
    let input = input_pulse(&emission, &timing).unwrap();
    let ops = operating_points(&p).unwrap();
    let sched = ControlSchedule::pinned(0.0, gate_marks(&timing).end, ops.off);
    let (r, _) = run_gate(&p, &sched, &input, QubitInit::Plus, None, &cfg(1e-3)).unwrap();
    assert!(r.p_return > 0.99, "p_return {}", r.p_return);
    assert!(r.fidelity < 1e-2, "F {}", r.fidelity);
}

#[test]
fn post_capture_leakage_is_of_order_1e_3() {
    let p = SystemParams::reference();
    let timing = GateTiming::default_for(&p).unwrap();
    let leak = hold_leakage(
        &p,
        &timing,
        timing.hold_time,
        LeakageInit::PostCaptureState,
        &cfg(1e-3),
    )
    .unwrap();
    assert!((1e-4..1e-2).contains(&leak), "leakage {leak:e}");
}

#[test]
fn optimizer_repairs_misalignment() {
    let p = SystemParams::reference();
    let mut seed = GateTiming::default_for(&p).unwrap();
    seed.alignment_offset = 5.0;
    let problem = OptimizationProblem {
        free: vec![ParameterBound {
            parameter: FreeParameter::AlignmentOffset,
            lower: -5.0,
            upper: 8.0,
        }],
        objective: Objective::Fidelity,
        budget: 16,
        seed,
        calibrate_phase: false,
    };
    let (_, trace) = optimize_schedule(&problem, &p, &cfg(1e-3)).unwrap();
    let gain = trace.best_value - trace.seed_value;
    assert!(gain >= 0.05, "seed {} best {}", trace.seed_value, trace.best_value);
}

/// Does not reproduce: each timing gets its own time-reversed pulse, which
/// undoes the fast ramps exactly, so F stays near 0.996.
#[test]
#[ignore = "the time-reversed pulse absorbs diabatic ramps; see the decisions ledger"]
fn diabatic_switching_fails() {
    let p = SystemParams::reference();
    // Ramps of 0.1 κ⁻¹, with the reference pulse tail so a photon is still designed.
    let timing = GateTiming {
        switch_time: 0.1,
        ..GateTiming::default_for(&p).unwrap()
    };
    let (f, _) = objective_gate(&p, &timing, Objective::Fidelity, false, &cfg(1e-3)).unwrap();
    assert!(f < 0.5, "F {f}");
}

#[test]
fn diabatic_switching_fails_for_a_fixed_pulse() {
    let p = SystemParams::reference();
    let slow = GateTiming::default_for(&p).unwrap().snapped(1e-3);
    let emission = design_emission(&p, &slow, &cfg(1e-3)).unwrap();
    let fast = GateTiming {
        switch_time: 0.1,
        ..slow
    };
    let adiabatic = simulate_gate_with(&p, &slow, &emission, &cfg(1e-3)).unwrap();
    let diabatic = simulate_gate_with(&p, &fast, &emission, &cfg(1e-3)).unwrap();
    assert!(adiabatic.result.fidelity > 0.9, "F {}", adiabatic.result.fidelity);
    assert!(diabatic.result.fidelity < 0.5, "F {}", diabatic.result.fidelity);
}

#[test]
fn over_rotated_hold_costs_fidelity() {
    let p = SystemParams::reference();
    let timing = GateTiming::default_for(&p).unwrap();
    let exact = simulate_gate(&p, &timing, &cfg(1e-3)).unwrap().result;
    let long = GateTiming {
        hold_time: 1.1 * timing.hold_time,
        ..timing
    };
    let over = simulate_gate(&p, &long, &cfg(1e-3)).unwrap().result;
    assert!(over.fidelity < exact.fidelity, "{} vs {}", over.fidelity, exact.fidelity);
}
