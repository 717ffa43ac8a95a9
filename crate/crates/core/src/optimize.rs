//! Bounded downhill-simplex maximization and its use for tuning gate timings.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::IntegratorConfig;
use crate::params::SystemParams;
use crate::protocol::{calibrate_hold, simulate_gate, GateTiming, PulsePolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error("bounds must be finite with lower < upper (dimension {0})")]
    BadBounds(usize),
    #[error("seed point has dimension {got}, bounds have {want}")]
    Dimension { got: usize, want: usize },
    #[error("budget {budget} is below dimension + 1 = {need}")]
    Budget { budget: usize, need: usize },
    #[error("every objective evaluation failed")]
    AllFailed { trace: Vec<TraceEntry> },
    #[error("parameter {0:?} needs a storage modulation in the seed timing")]
    MissingModulation(FreeParameter),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, OptimizeError> {
        if lower.len() != upper.len() {
            return Err(OptimizeError::Dimension {
                got: upper.len(),
                want: lower.len(),
            });
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(OptimizeError::BadBounds(i));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn range(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    /// Mirror a coordinate back inside its interval, clamping if the mirror
    /// overshoots the far side.
    fn reflect(&self, x: &mut [f64]) {
        for (i, xi) in x.iter_mut().enumerate() {
            let (l, u) = (self.lower[i], self.upper[i]);
            if *xi < l {
                *xi = l + (l - *xi);
            } else if *xi > u {
                *xi = u - (*xi - u);
            }
            *xi = xi.clamp(l, u);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    pub max_evaluations: usize,
    /// Stop when the simplex values agree to this (absolute).
    pub f_tolerance: f64,
    /// ... and its vertices agree to this fraction of each bound range.
    pub x_tolerance: f64,
    /// Initial simplex edge as a fraction of each bound range.
    pub initial_step_fraction: f64,
    /// Rebuild the simplex once around the best point after convergence.
    pub restart: bool,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evaluations: 200,
            f_tolerance: 1e-10,
            x_tolerance: 1e-6,
            initial_step_fraction: 0.1,
            restart: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub evaluation: usize,
    pub point: Vec<f64>,
    /// `-inf` for a rejected point.
    pub value: f64,
    pub best_so_far: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOutcome {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
}

struct Evaluator<F> {
    f: F,
    trace: Vec<TraceEntry>,
    best: f64,
    best_point: Vec<f64>,
    budget: usize,
}

impl<F: FnMut(&[f64]) -> Option<f64>> Evaluator<F> {
    fn exhausted(&self) -> bool {
        self.trace.len() >= self.budget
    }

    /// Cost to minimize (negated objective); +inf on rejection.
    fn cost(&mut self, x: &[f64]) -> f64 {
        let v = (self.f)(x).filter(|v| !v.is_nan()).unwrap_or(f64::NEG_INFINITY);
        if self.best_point.is_empty() || v > self.best {
            self.best = self.best.max(v);
            self.best_point = x.to_vec();
        }
        self.trace.push(TraceEntry {
            evaluation: self.trace.len(),
            point: x.to_vec(),
            value: v,
            best_so_far: self.best,
        });
        -v
    }
}

/// Maximizes `f` inside `bounds` from `seed`. `f` returns `None` for a
/// rejected point. Deterministic for fixed inputs.
pub fn nelder_mead<F: FnMut(&[f64]) -> Option<f64>>(
    f: F,
    seed: &[f64],
    bounds: &Bounds,
    opts: &NelderMeadOptions,
) -> Result<NelderMeadOutcome, OptimizeError> {
    let n = bounds.dim();
    if seed.len() != n {
        return Err(OptimizeError::Dimension {
            got: seed.len(),
            want: n,
        });
    }
    if opts.max_evaluations < n + 1 {
        return Err(OptimizeError::Budget {
            budget: opts.max_evaluations,
            need: n + 1,
        });
    }
    let mut ev = Evaluator {
        f,
        trace: Vec::new(),
        best: f64::NEG_INFINITY,
        best_point: Vec::new(),
        budget: opts.max_evaluations,
    };
    let mut start = seed.to_vec();
    bounds.reflect(&mut start);
    let mut converged = run_simplex(&mut ev, &start, bounds, opts);
    if converged && opts.restart && !ev.exhausted() && ev.best.is_finite() {
        let from = ev.best_point.clone();
        converged = run_simplex(&mut ev, &from, bounds, opts);
    }
    if !ev.best.is_finite() {
        return Err(OptimizeError::AllFailed { trace: ev.trace });
    }
    Ok(NelderMeadOutcome {
        best_point: ev.best_point,
        best_value: ev.best,
        converged,
        trace: ev.trace,
    })
}

fn run_simplex<F: FnMut(&[f64]) -> Option<f64>>(
    ev: &mut Evaluator<F>,
    start: &[f64],
    bounds: &Bounds,
    opts: &NelderMeadOptions,
) -> bool {
    let n = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    if ev.exhausted() {
        return false;
    }
    let c0 = ev.cost(start);
    simplex.push((start.to_vec(), c0));
    for i in 0..n {
        if ev.exhausted() {
            return false;
        }
        let mut x = start.to_vec();
        let step = opts.initial_step_fraction * bounds.range(i);
        x[i] = if x[i] + step <= bounds.upper[i] { x[i] + step } else { x[i] - step };
        let c = ev.cost(&x);
        simplex.push((x, c));
    }

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best_c, worst_c) = (simplex[0].1, simplex[n].1);
        let spread_f = if best_c.is_finite() && worst_c.is_finite() {
            worst_c - best_c
        } else {
            f64::INFINITY
        };
        let spread_x = (0..n)
            .map(|i| {
                let (lo, hi) = simplex
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                        (lo.min(v.0[i]), hi.max(v.0[i]))
                    });
                (hi - lo) / bounds.range(i)
            })
            .fold(0.0, f64::max);
        if spread_f <= opts.f_tolerance && spread_x <= opts.x_tolerance {
            return true;
        }
        if ev.exhausted() {
            return false;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|i| simplex[..n].iter().map(|v| v.0[i]).sum::<f64>() / n as f64)
            .collect();
        let toward = |coef: f64| -> Vec<f64> {
            let mut x: Vec<f64> = (0..n)
                .map(|i| centroid[i] + coef * (centroid[i] - simplex[n].0[i]))
                .collect();
            bounds.reflect(&mut x);
            x
        };

        let xr = toward(1.0);
        let cr = ev.cost(&xr);
        if cr < simplex[0].1 {
            if ev.exhausted() {
                simplex[n] = (xr, cr);
                continue;
            }
            let xe = toward(2.0);
            let ce = ev.cost(&xe);
            simplex[n] = if ce < cr { (xe, ce) } else { (xr, cr) };
            continue;
        }
        if cr < simplex[n - 1].1 {
            simplex[n] = (xr, cr);
            continue;
        }
        if ev.exhausted() {
            return false;
        }
        // Outside contraction when the reflection helped a little, inside otherwise.
        let xc = toward(if cr < simplex[n].1 { 0.5 } else { -0.5 });
        let cc = ev.cost(&xc);
        if cc < simplex[n].1.min(cr) {
            simplex[n] = (xc, cc);
            continue;
        }
        // Shrink toward the best vertex.
        let best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            if ev.exhausted() {
                return false;
            }
            let mut x: Vec<f64> = (0..n).map(|i| best[i] + 0.5 * (v.0[i] - best[i])).collect();
            bounds.reflect(&mut x);
            let c = ev.cost(&x);
            *v = (x, c);
        }
    }
}

/// Timing quantities the optimizer may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreeParameter {
    /// Width σ of a Gaussian input pulse (switches the pulse policy to Gaussian).
    PulseWidth,
    AlignmentOffset,
    /// Capture and release ramp duration; the pulse tail is kept.
    SwitchTime,
    /// Added to the seed hold time.
    HoldMargin,
    /// Δ_s during the hold, for the modulated variant.
    StorageDetuningLow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterBound {
    pub parameter: FreeParameter,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Objective {
    Fidelity,
    /// F − λ·t_gate (λ per κ⁻¹).
    FidelityMinusTime { lambda: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizationProblem {
    pub free: Vec<ParameterBound>,
    pub objective: Objective,
    pub budget: usize,
    pub seed: GateTiming,
    /// Recalibrate the hold for a conditional phase of π at every point.
    #[serde(default)]
    pub calibrate_phase: bool,
}

impl OptimizationProblem {
    pub fn bounds(&self) -> Result<Bounds, OptimizeError> {
        Bounds::new(
            self.free.iter().map(|b| b.lower).collect(),
            self.free.iter().map(|b| b.upper).collect(),
        )
    }

    /// Seed coordinates read from the seed timing.
    pub fn seed_point(&self) -> Result<Vec<f64>, OptimizeError> {
        self.free
            .iter()
            .map(|b| {
                Ok(match b.parameter {
                    FreeParameter::PulseWidth => match self.seed.pulse {
                        PulsePolicy::Gaussian { width: Some(w), .. } => w,
                        _ => 0.5 * (b.lower + b.upper),
                    },
                    FreeParameter::AlignmentOffset => self.seed.alignment_offset,
                    FreeParameter::SwitchTime => self.seed.switch_time,
                    FreeParameter::HoldMargin => 0.0,
                    FreeParameter::StorageDetuningLow => {
                        self.seed
                            .storage_modulation
                            .ok_or(OptimizeError::MissingModulation(b.parameter))?
                            .low
                    }
                })
            })
            .collect()
    }

    /// The seed timing with coordinates `x` applied.
    pub fn timing_at(&self, x: &[f64]) -> GateTiming {
        let mut t = self.seed;
        for (b, &v) in self.free.iter().zip(x) {
            match b.parameter {
                FreeParameter::PulseWidth => {
                    let center = match t.pulse {
                        PulsePolicy::Gaussian { center, .. } => center,
                        PulsePolicy::TimeReversed => None,
                    };
                    t.pulse = PulsePolicy::Gaussian {
                        center,
                        width: Some(v),
                    };
                }
                FreeParameter::AlignmentOffset => t.alignment_offset = v,
                FreeParameter::SwitchTime => t.switch_time = v,
                FreeParameter::HoldMargin => t.hold_time = self.seed.hold_time + v,
                FreeParameter::StorageDetuningLow => {
                    if let Some(m) = t.storage_modulation.as_mut() {
                        m.low = v;
                    }
                }
            }
        }
        t
    }
}

/// Objective value of one timing; `None` when the run is rejected
/// (invalid timing or numerical failure). With phase calibration the
/// returned timing carries the calibrated hold.
pub fn objective_gate(
    params: &SystemParams,
    timing: &GateTiming,
    objective: Objective,
    calibrate_phase: bool,
    cfg: &IntegratorConfig,
) -> Option<(f64, GateTiming)> {
    let run = if calibrate_phase {
        calibrate_hold(params, timing, cfg, 3)
    } else {
        simulate_gate(params, timing, cfg)
    };
    let run = run.ok()?;
    let f = run.result.fidelity;
    let value = match objective {
        Objective::Fidelity => f,
        Objective::FidelityMinusTime { lambda } => f - lambda * run.result.t_gate,
    };
    value.is_finite().then_some((value, run.timing))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub parameters: Vec<FreeParameter>,
    pub entries: Vec<TraceEntry>,
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub seed_value: f64,
    pub converged: bool,
}

/// Maximizes the gate objective over the free timing parameters.
pub fn optimize_schedule(
    problem: &OptimizationProblem,
    params: &SystemParams,
    cfg: &IntegratorConfig,
) -> Result<(GateTiming, OptimizationTrace), OptimizeError> {
    let bounds = problem.bounds()?;
    let seed = problem.seed_point()?;
    let opts = NelderMeadOptions {
        max_evaluations: problem.budget,
        f_tolerance: 1e-7,
        x_tolerance: 1e-4,
        ..NelderMeadOptions::default()
    };
    let eval = |x: &[f64]| {
        objective_gate(
            params,
            &problem.timing_at(x),
            problem.objective,
            problem.calibrate_phase,
            cfg,
        )
        .map(|(v, _)| v)
    };
    let out = nelder_mead(eval, &seed, &bounds, &opts)?;
    let (_, best_timing) = objective_gate(
        params,
        &problem.timing_at(&out.best_point),
        problem.objective,
        problem.calibrate_phase,
        cfg,
    )
    .expect("best point was evaluated successfully");
    let seed_value = out.trace.first().map_or(f64::NEG_INFINITY, |e| e.value);
    Ok((
        best_timing,
        OptimizationTrace {
            parameters: problem.free.iter().map(|b| b.parameter).collect(),
            entries: out.trace,
            best_point: out.best_point,
            best_value: out.best_value,
            seed_value,
            converged: out.converged,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_optimum() {
        let b = Bounds::new(vec![0.0], vec![10.0]).unwrap();
        let opts = NelderMeadOptions {
            max_evaluations: 60,
            ..Default::default()
        };
        let out = nelder_mead(|x| Some(-(x[0] - 3.0).powi(2)), &[8.0], &b, &opts).unwrap();
        assert!((out.best_point[0] - 3.0).abs() < 1e-4, "{:?}", out.best_point);
        assert!(out.trace.len() <= 60);
    }

    #[test]
    fn best_so_far_is_monotone_and_max() {
        let b = Bounds::new(vec![-5.0, -5.0], vec![5.0, 5.0]).unwrap();
        let f = |x: &[f64]| Some(-(x[0] - 1.0).powi(2) - 10.0 * (x[1] + 0.5).powi(2));
        let out = nelder_mead(f, &[4.0, 4.0], &b, &NelderMeadOptions::default()).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for e in &out.trace {
            assert!(e.best_so_far >= prev);
            prev = e.best_so_far;
        }
        let max = out.trace.iter().map(|e| e.value).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.best_value, max);
        assert!(out.converged);
    }

    #[test]
    fn minimal_budget_is_not_converged() {
        let b = Bounds::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let out = nelder_mead(
            |x| Some(-(x[0] - 0.3).powi(2) - x[1] * x[1]),
            &[0.5, 0.5],
            &b,
            &NelderMeadOptions {
                max_evaluations: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(out.trace.len(), 3);
        assert!(!out.converged);
        let low = nelder_mead(|_| Some(0.0), &[0.5, 0.5], &b, &NelderMeadOptions {
            max_evaluations: 2,
            ..Default::default()
        });
        assert!(matches!(low, Err(OptimizeError::Budget { .. })));
    }

    #[test]
    fn rejected_points_do_not_win() {
        let b = Bounds::new(vec![0.0], vec![10.0]).unwrap();
        let out = nelder_mead(
            |x| if x[0] > 6.0 { None } else { Some(x[0]) },
            &[2.0],
            &b,
            &NelderMeadOptions::default(),
        )
        .unwrap();
        assert!(out.best_point[0] <= 6.0 && out.best_point[0] > 5.9);
        let all_bad = nelder_mead(|_| None, &[2.0], &b, &NelderMeadOptions::default());
        assert!(matches!(all_bad, Err(OptimizeError::AllFailed { .. })));
    }

    #[test]
    fn reflection_stays_in_bounds() {
        let b = Bounds::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let mut x = vec![-0.25, 1.5];
        b.reflect(&mut x);
        assert_eq!(x, vec![0.25, 0.5]);
        let mut far = vec![-5.0, 0.5];
        b.reflect(&mut far);
        assert_eq!(far[0], 1.0);
    }

    #[test]
    fn deterministic_trace() {
        let b = Bounds::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
        let f = |x: &[f64]| Some(-(x[0] * x[0] + (x[1] - 0.7).powi(2)));
        let a = nelder_mead(f, &[1.0, 1.0], &b, &NelderMeadOptions::default()).unwrap();
        let c = nelder_mead(f, &[1.0, 1.0], &b, &NelderMeadOptions::default()).unwrap();
        assert_eq!(a, c);
    }
}
