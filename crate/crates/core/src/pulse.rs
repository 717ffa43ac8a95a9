//! Sampled waveguide amplitudes f(t) in units of κ^{1/2}, so that ∫|f|²dt is
//! a probability.
//!
//! Samples live on a uniform grid and are treated as zero outside it. Values
//! between samples use four-point cubic interpolation, which keeps the drive
//! term consistent with the fourth-order integrator.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimize::{nelder_mead, Bounds, NelderMeadOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PulseError {
    #[error("pulse has zero norm")]
    ZeroNorm,
    #[error("pulse grid spacing must be positive and finite (got {0})")]
    BadSpacing(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    /// Time of the first sample (κ⁻¹).
    pub t0: f64,
    /// Grid spacing (κ⁻¹).
    pub dt: f64,
    pub samples: Vec<Complex64>,
}

/// Weights of the cubic Lagrange interpolant through samples n−1..n+2,
/// evaluated at fractional position `u` ∈ [0, 1] past sample n.
#[inline]
fn cubic_weights(u: f64) -> [f64; 4] {
    let (um1, up1, um2) = (u - 1.0, u + 1.0, u - 2.0);
    [
        -u * um1 * um2 / 6.0,
        up1 * um1 * um2 / 2.0,
        -up1 * u * um2 / 2.0,
        up1 * u * um1 / 6.0,
    ]
}

impl Pulse {
    pub fn new(t0: f64, dt: f64, samples: Vec<Complex64>) -> Result<Self, PulseError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(PulseError::BadSpacing(dt));
        }
        Ok(Self { t0, dt, samples })
    }

    pub fn zeros(t0: f64, dt: f64, len: usize) -> Self {
        Self {
            t0,
            dt,
            samples: vec![Complex64::new(0.0, 0.0); len],
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Time of the last sample.
    pub fn t_end(&self) -> f64 {
        self.t0 + (self.len().saturating_sub(1)) as f64 * self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    /// Sample `k`, zero outside the grid.
    #[inline]
    pub fn at_index(&self, k: isize) -> Complex64 {
        if k < 0 || k as usize >= self.samples.len() {
            Complex64::new(0.0, 0.0)
        } else {
            self.samples[k as usize]
        }
    }

    /// Cubic interpolant at fractional position `u` past sample `k`, using the
    /// centred four-point stencil where possible and a one-sided one at the
    /// edges. Only meaningful for `0 <= k <= len - 2`.
    #[inline]
    fn interior(&self, k: usize, u: f64) -> Complex64 {
        let n = self.samples.len();
        if n < 4 {
            let a = self.samples[k];
            let b = self.samples[(k + 1).min(n - 1)];
            return a + (b - a) * u;
        }
        let s = k.saturating_sub(1).min(n - 4);
        let w = cubic_weights(u + (k - s) as f64 - 1.0);
        self.samples[s] * w[0]
            + self.samples[s + 1] * w[1]
            + self.samples[s + 2] * w[2]
            + self.samples[s + 3] * w[3]
    }

    /// Endpoint, midpoint and endpoint values on grid interval `k`
    /// (samples `k` and `k + 1`); `None` outside the support.
    #[inline]
    pub fn interval(&self, k: isize) -> Option<[Complex64; 3]> {
        if k < 0 || k as usize + 1 >= self.samples.len() {
            return None;
        }
        let k = k as usize;
        Some([self.samples[k], self.interior(k, 0.5), self.samples[k + 1]])
    }

    /// Interpolated value at an arbitrary time; zero outside `[t0, t_end]`.
    pub fn sample_at(&self, t: f64) -> Complex64 {
        let n = self.samples.len();
        if n == 0 {
            return Complex64::new(0.0, 0.0);
        }
        let x = (t - self.t0) / self.dt;
        if x < 0.0 || x > (n - 1) as f64 {
            return Complex64::new(0.0, 0.0);
        }
        if n == 1 {
            return self.samples[0];
        }
        let k = (x.floor() as usize).min(n - 2);
        self.interior(k, x - k as f64)
    }

    /// ∫|f|²dt over the support, by the three-point rule the integrator uses
    /// for its ledgers (endpoints plus cubic midpoint of each interval).
    pub fn norm_sqr(&self) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.samples.len().saturating_sub(1) {
            let [a, m, b] = self.interval(k as isize).expect("interior interval");
            acc += a.norm_sqr() + 4.0 * m.norm_sqr() + b.norm_sqr();
        }
        acc * self.dt / 6.0
    }

    /// Same samples moved onto a grid starting at `t0` with spacing `dt`, by
    /// cubic interpolation.
    pub fn resampled(&self, t0: f64, dt: f64) -> Self {
        let len = if self.is_empty() {
            0
        } else {
            ((self.t_end() - t0) / dt + 1e-9).floor().max(-1.0) as isize + 1
        };
        let samples = (0..len.max(0))
            .map(|k| self.sample_at(t0 + k as f64 * dt))
            .collect();
        Self { t0, dt, samples }
    }

    pub fn normalized(&self) -> Result<Self, PulseError> {
        let n = self.norm_sqr();
        if !(n > 0.0) {
            return Err(PulseError::ZeroNorm);
        }
        let s = 1.0 / n.sqrt();
        Ok(Self {
            t0: self.t0,
            dt: self.dt,
            samples: self.samples.iter().map(|z| z * s).collect(),
        })
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            t0: self.t0,
            dt: self.dt,
            samples: self.samples.iter().map(|z| z * factor).collect(),
        }
    }

    pub fn shifted(&self, by: f64) -> Self {
        Self {
            t0: self.t0 + by,
            ..self.clone()
        }
    }

    /// Centroid of |f|².
    pub fn centroid(&self) -> f64 {
        let (mut w, mut m) = (0.0, 0.0);
        for (k, z) in self.samples.iter().enumerate() {
            let p = z.norm_sqr();
            w += p;
            m += p * self.time(k);
        }
        if w > 0.0 {
            m / w
        } else {
            self.t0
        }
    }

    /// Full width at half maximum of |f|², by linear interpolation of the crossings.
    pub fn fwhm(&self) -> f64 {
        let p: Vec<f64> = self.samples.iter().map(|z| z.norm_sqr()).collect();
        let Some((imax, &pmax)) = p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
        else {
            return 0.0;
        };
        if pmax <= 0.0 {
            return 0.0;
        }
        let half = pmax / 2.0;
        let mut left = self.t0;
        for k in (0..imax).rev() {
            if p[k] < half {
                let frac = (half - p[k]) / (p[k + 1] - p[k]);
                left = self.time(k) + frac * self.dt;
                break;
            }
        }
        let mut right = self.t_end();
        for k in imax + 1..p.len() {
            if p[k] < half {
                let frac = (p[k - 1] - half) / (p[k - 1] - p[k]);
                right = self.time(k - 1) + frac * self.dt;
                break;
            }
        }
        right - left
    }
}

/// f'(t) = conj(f(T_end − t)) on the same grid.
pub fn time_reverse(pulse: &Pulse) -> Pulse {
    Pulse {
        t0: pulse.t0,
        dt: pulse.dt,
        samples: pulse.samples.iter().rev().map(|z| z.conj()).collect(),
    }
}

/// Normalized Gaussian amplitude (2πσ²)^(−1/4)·exp(−(t−center)²/(4σ²)),
/// sampled on `[t_start, t_start + (len−1)·dt]` and renormalized on the grid.
pub fn gaussian(center: f64, sigma: f64, t_start: f64, dt: f64, len: usize) -> Pulse {
    let amp = (2.0 * std::f64::consts::PI * sigma * sigma).powf(-0.25);
    let samples = (0..len)
        .map(|k| {
            let t = t_start + k as f64 * dt;
            let x = t - center;
            Complex64::new(amp * (-x * x / (4.0 * sigma * sigma)).exp(), 0.0)
        })
        .collect();
    let p = Pulse {
        t0: t_start,
        dt,
        samples,
    };
    p.normalized().unwrap_or(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianFit {
    pub t0: f64,
    pub sigma: f64,
    /// Carrier offset ω in exp(−iωt).
    pub frequency: f64,
    /// Constant phase of the projection.
    pub phase: f64,
    /// |⟨g|f⟩|² with g normalized, as a fraction of ‖f‖².
    pub overlap: f64,
    /// ‖f − A·g‖/‖f‖ on the sample grid at the best amplitude A.
    pub residual: f64,
    /// False when the simplex search did not converge; the moment-based
    /// estimate is returned if it was the better one.
    pub converged: bool,
}

impl GaussianFit {
    /// Unit-norm Gaussian with the fitted centre, width, carrier and phase.
    pub fn pulse(&self, t_start: f64, dt: f64, len: usize) -> Pulse {
        let env = gaussian(self.t0, self.sigma, t_start, dt, len);
        let samples = env
            .samples
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let t = t_start + k as f64 * dt;
                a * Complex64::from_polar(1.0, self.phase - self.frequency * t)
            })
            .collect();
        Pulse { samples, ..env }
    }
}

/// Least-squares fit of A·exp(−(t−t0)²/(4σ²) − iωt) to `pulse`, with the
/// complex amplitude A from the projection and (t0, σ, ω) searched by simplex.
pub fn fit_gaussian(pulse: &Pulse) -> Result<GaussianFit, PulseError> {
    let total = pulse.norm_sqr();
    if !(total > 0.0) {
        return Err(PulseError::ZeroNorm);
    }
    let w: Vec<f64> = pulse.samples.iter().map(|z| z.norm_sqr()).collect();
    let wsum: f64 = w.iter().sum();
    let times: Vec<f64> = (0..pulse.len()).map(|k| pulse.time(k)).collect();
    let mean = w.iter().zip(&times).map(|(m, t)| m * t).sum::<f64>() / wsum;
    let var = w
        .iter()
        .zip(&times)
        .map(|(m, t)| m * (t - mean) * (t - mean))
        .sum::<f64>()
        / wsum;
    // |f|² of the model has standard deviation σ.
    let sigma0 = var.sqrt().max(pulse.dt);
    // Mean instantaneous frequency, Im ∫ f* f' / ∫|f|², with ω = −that.
    let mut cur = 0.0;
    for k in 1..pulse.len() {
        let (a, b) = (pulse.samples[k - 1], pulse.samples[k]);
        cur += (a.conj() * b).arg() * 0.5 * (w[k - 1] + w[k]);
    }
    let omega0 = -cur / (wsum * pulse.dt);

    let model = |x: &[f64]| {
        GaussianFit {
            t0: x[0],
            sigma: x[1],
            frequency: x[2],
            phase: 0.0,
            overlap: 0.0,
            residual: 0.0,
            converged: false,
        }
        .pulse(pulse.t0, pulse.dt, pulse.len())
    };
    let energy: f64 = w.iter().sum();
    // Best complex amplitude on the sample grid, and the relative L2 misfit
    // summed directly so it stays accurate far below 1e-8.
    let misfit = |x: &[f64]| -> (Complex64, f64) {
        let g = model(x);
        let gg: f64 = g.samples.iter().map(|z| z.norm_sqr()).sum();
        let c = g
            .samples
            .iter()
            .zip(&pulse.samples)
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
            / gg;
        let r: f64 = g
            .samples
            .iter()
            .zip(&pulse.samples)
            .map(|(a, b)| (b - c * a).norm_sqr())
            .sum();
        (c, (r / energy).sqrt())
    };

    let seed = [mean, sigma0, omega0];
    let span = pulse.t_end() - pulse.t0;
    let nyquist = std::f64::consts::PI / pulse.dt;
    let reach = (omega0.abs() + 10.0 / sigma0).min(nyquist);
    let bounds = Bounds::new(
        vec![pulse.t0, pulse.dt, -reach],
        vec![pulse.t_end(), span.max(2.0 * pulse.dt), reach],
    )
    .expect("fit bounds are ordered");
    let opts = NelderMeadOptions {
        max_evaluations: 2000,
        f_tolerance: 1e-15,
        x_tolerance: 1e-12,
        initial_step_fraction: 0.02,
        restart: true,
    };
    let seed_misfit = misfit(&seed).1;
    let (best, converged) = match nelder_mead(|x| Some(-misfit(x).1), &seed, &bounds, &opts) {
        Ok(out) if -out.best_value <= seed_misfit => (out.best_point, out.converged),
        _ => (seed.to_vec(), false),
    };
    let (c, residual) = misfit(&best);
    let g = model(&best);
    let overlap = c.norm_sqr() * g.norm_sqr() / total;
    Ok(GaussianFit {
        t0: best[0],
        sigma: best[1],
        frequency: best[2],
        phase: c.arg(),
        overlap,
        residual,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_is_normalized() {
        let p = gaussian(10.0, 2.0, 0.0, 1e-2, 2001);
        assert!((p.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cubic_interpolation_is_exact_for_cubics() {
        let f = |t: f64| 0.3 * t * t * t - t * t + 2.0 * t + 1.0;
        let samples = (0..10)
            .map(|k| Complex64::new(f(k as f64 * 0.5), 0.0))
            .collect();
        let p = Pulse::new(0.0, 0.5, samples).unwrap();
        for &t in &[1.1, 2.25, 3.0, 3.7] {
            assert!((p.sample_at(t).re - f(t)).abs() < 1e-12);
        }
        assert!((p.interval(3).unwrap()[1].re - f(1.75)).abs() < 1e-12);
        // One-sided stencils at both edges are still exact for cubics.
        assert!((p.interval(0).unwrap()[1].re - f(0.25)).abs() < 1e-12);
        assert!((p.interval(8).unwrap()[1].re - f(4.25)).abs() < 1e-12);
        assert!((p.sample_at(0.1).re - f(0.1)).abs() < 1e-12);
        assert_eq!(p.sample_at(-2.0), Complex64::new(0.0, 0.0));
        assert!(p.interval(9).is_none());
    }

    #[test]
    fn reversal_preserves_norm_and_is_involutive() {
        let samples = (0..200)
            .map(|k| {
                let t = k as f64 * 0.05;
                Complex64::new((-(t - 4.0) * (t - 4.0)).exp(), (0.3 * t).sin() * 0.1)
            })
            .collect();
        let p = Pulse::new(1.0, 0.05, samples).unwrap();
        let r = time_reverse(&p);
        assert!((r.norm_sqr() - p.norm_sqr()).abs() < 1e-14);
        assert_eq!(time_reverse(&r), p);
    }

    #[test]
    fn symmetric_real_gaussian_is_reversal_invariant() {
        let p = gaussian(5.0, 1.0, 0.0, 0.01, 1001);
        let r = time_reverse(&p);
        for (a, b) in p.samples.iter().zip(&r.samples) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn fit_recovers_exact_gaussian() {
        let p = gaussian(7.0, 1.5, 0.0, 0.01, 1501);
        let fit = fit_gaussian(&p).unwrap();
        assert!((fit.t0 - 7.0).abs() < 1e-6);
        assert!((fit.sigma - 1.5).abs() < 1e-6);
        assert!(fit.frequency.abs() < 1e-6);
        assert!(fit.overlap > 1.0 - 1e-10, "overlap {}", fit.overlap);
        assert!(fit.residual < 1e-10, "residual {}", fit.residual);
    }

    #[test]
    fn fit_recovers_carrier_and_phase() {
        let truth = GaussianFit {
            t0: 5.0,
            sigma: 1.0,
            frequency: 1.3,
            phase: 0.4,
            overlap: 1.0,
            residual: 0.0,
            converged: true,
        };
        let p = truth.pulse(0.0, 0.01, 1001);
        let fit = fit_gaussian(&p).unwrap();
        assert!((fit.frequency - 1.3).abs() < 1e-6, "{fit:?}");
        assert!((fit.t0 - 5.0).abs() < 1e-6);
        assert!((wrap(fit.phase - 0.4)).abs() < 1e-5);
        assert!(fit.overlap > 1.0 - 1e-10);
    }

    fn wrap(x: f64) -> f64 {
        (x + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI
    }

    #[test]
    fn fit_rejects_zero_pulse() {
        let p = Pulse::zeros(0.0, 0.1, 10);
        assert_eq!(fit_gaussian(&p).unwrap_err(), PulseError::ZeroNorm);
    }

    #[test]
    fn fwhm_of_gaussian_intensity() {
        // |f|² has standard deviation σ, so FWHM = 2√(2 ln 2)·σ.
        let p = gaussian(10.0, 2.0, 0.0, 1e-3, 20001);
        let expect = 2.0 * (2.0 * 2f64.ln()).sqrt() * 2.0;
        assert!((p.fwhm() - expect).abs() < 1e-5);
    }
}
