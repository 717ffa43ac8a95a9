//! Dressed-state analysis of the switch subsystem: the 3×3 single-excitation
//! block in the basis (|1⟩_s, |1⟩_q, |e⟩_q), its eigensystem, the operating
//! points of the switch and the adiabaticity of a schedule.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::params::{SystemParams, DISPERSIVE_LIMIT};
use crate::schedule::ControlSchedule;

/// Eigenvalues closer than this are treated as degenerate.
pub const DEGENERACY_TOLERANCE: f64 = 1e-12;
/// Gaps below this make the adiabaticity ratio meaningless.
pub const GAP_COLLAPSE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("singular operating point: cavity_detuning = 0")]
    SingularOperatingPoint,
    #[error("storage coupling is zero; no phase flip time")]
    NoStorageCoupling,
    #[error("gap collapse at t = {t}: |ΔE| = {gap:.3e}")]
    GapCollapse { t: f64, gap: f64 },
}

type C = Complex64;
const ZERO: C = C::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DressedMatrix(pub [[C; 3]; 3]);

impl DressedMatrix {
    pub fn is_real(&self) -> bool {
        self.0.iter().flatten().all(|z| z.im == 0.0)
    }

    pub fn apply(&self, v: &[C; 3]) -> [C; 3] {
        let m = &self.0;
        [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
    }
}

/// Switch-subsystem matrix at detuning `delta_q`. With `include_loss` the
/// diagonal carries −i(γ+γ_q)/2 on |1⟩_q and −iγ_e/2 on |e⟩_q.
pub fn dressed_matrix(params: &SystemParams, delta_q: f64, include_loss: bool) -> DressedMatrix {
    let (lq, le) = if include_loss {
        ((params.gamma + params.gamma_q) / 2.0, params.gamma_e / 2.0)
    } else {
        (0.0, 0.0)
    };
    let k = C::new(params.kappa, 0.0);
    let w = C::new(params.omega_q, 0.0);
    let d = params.cavity_detuning;
    DressedMatrix([
        [ZERO, k, ZERO],
        [k, C::new(d, -lq), w],
        [ZERO, w, C::new(d + delta_q, -le)],
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenSystem {
    /// Ascending by real part.
    pub values: [C; 3],
    /// Unit vectors (Hermitian norm), `vectors[i]` belongs to `values[i]`.
    pub vectors: [[C; 3]; 3],
    /// Norms of the unnormalized null vectors the eigenvectors came from.
    pub norms: [f64; 3],
    pub degenerate: bool,
}

fn det3(m: &[[C; 3]; 3]) -> C {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Coefficients (c2, c1, c0) of λ³ + c2λ² + c1λ + c0 = det(λI − M).
fn char_poly(m: &[[C; 3]; 3]) -> [C; 3] {
    let tr = m[0][0] + m[1][1] + m[2][2];
    let minors = m[0][0] * m[1][1] - m[0][1] * m[1][0] + m[0][0] * m[2][2] - m[0][2] * m[2][0]
        + m[1][1] * m[2][2]
        - m[1][2] * m[2][1];
    [-tr, minors, -det3(m)]
}

fn eval_poly(c: &[C; 3], x: C) -> (C, C) {
    let f = ((x + c[0]) * x + c[1]) * x + c[2];
    let df = (x * 3.0 + c[0] * 2.0) * x + c[1];
    (f, df)
}

fn polish(c: &[C; 3], mut x: C) -> C {
    for _ in 0..3 {
        let (f, df) = eval_poly(c, x);
        if df.norm() == 0.0 {
            break;
        }
        let next = x - f / df;
        if eval_poly(c, next).0.norm() < f.norm() {
            x = next;
        } else {
            break;
        }
    }
    x
}

/// Roots of a real-symmetric 3×3 by the trigonometric formula.
fn symmetric_roots(m: &[[f64; 3]; 3]) -> [f64; 3] {
    let p1 = m[0][1].powi(2) + m[0][2].powi(2) + m[1][2].powi(2);
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    if p == 0.0 {
        return [q; 3];
    }
    let mut b = *m;
    for (i, row) in b.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = (*x - if i == j { q } else { 0.0 }) / p;
        }
    }
    let det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
        - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let phi = (det / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
    [e3, 3.0 * q - e1 - e3, e1]
}

/// Roots of a general complex cubic by Durand–Kerner iteration.
fn durand_kerner(c: &[C; 3]) -> [C; 3] {
    let scale = 1.0 + c.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let seed = C::new(0.4, 0.9);
    let mut z = [seed * scale, seed * seed * scale, seed * seed * seed * scale];
    for _ in 0..500 {
        let mut delta = 0.0f64;
        for i in 0..3 {
            let (f, _) = eval_poly(c, z[i]);
            let mut denom = C::new(1.0, 0.0);
            for j in 0..3 {
                if j != i {
                    denom *= z[i] - z[j];
                }
            }
            if denom.norm() == 0.0 {
                denom = C::new(1e-300, 0.0);
            }
            let step = f / denom;
            z[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta <= 1e-15 * scale {
            break;
        }
    }
    z
}

fn cross(a: &[C; 3], b: &[C; 3]) -> [C; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn hnorm(v: &[C; 3]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn hdot(a: &[C; 3], b: &[C; 3]) -> C {
    a[0].conj() * b[0] + a[1].conj() * b[1] + a[2].conj() * b[2]
}

/// Fixes the global phase so the largest component is real and positive.
fn normalize_phase(v: [C; 3]) -> ([C; 3], f64) {
    let n = hnorm(&v);
    let big = v
        .iter()
        .copied()
        .max_by(|a, b| a.norm_sqr().total_cmp(&b.norm_sqr()))
        .unwrap_or(ZERO);
    let phase = if big.norm() > 0.0 { big.conj() / big.norm() } else { C::new(1.0, 0.0) };
    (v.map(|z| z * phase / n), n)
}

/// Largest cross product of row pairs of (M − λI); spans the null space
/// when λ is a simple eigenvalue.
fn null_vector(m: &[[C; 3]; 3], lambda: C) -> [C; 3] {
    let mut a = *m;
    for (i, row) in a.iter_mut().enumerate() {
        row[i] -= lambda;
    }
    [cross(&a[0], &a[1]), cross(&a[0], &a[2]), cross(&a[1], &a[2])]
        .into_iter()
        .max_by(|x, y| hnorm(x).total_cmp(&hnorm(y)))
        .unwrap()
}

/// Orthonormal pair spanning the vectors orthogonal to the dominant row of
/// (M − λI), for a doubly degenerate λ.
fn degenerate_pair(m: &[[C; 3]; 3], lambda: C) -> [[C; 3]; 2] {
    let mut a = *m;
    for (i, row) in a.iter_mut().enumerate() {
        row[i] -= lambda;
    }
    let r = a
        .into_iter()
        .max_by(|x, y| hnorm(x).total_cmp(&hnorm(y)))
        .unwrap();
    let unit = |k: usize| {
        let mut e = [ZERO; 3];
        e[k] = C::new(1.0, 0.0);
        e
    };
    if hnorm(&r) == 0.0 {
        return [unit(0), unit(1)];
    }
    let mut cands: Vec<[C; 3]> = (0..3).map(|k| cross(&r, &unit(k))).collect();
    cands.sort_by(|x, y| hnorm(y).total_cmp(&hnorm(x)));
    let u = normalize_phase(cands[0]).0;
    let mut w = cands[1];
    let proj = hdot(&u, &w);
    for i in 0..3 {
        w[i] -= u[i] * proj;
    }
    if hnorm(&w) < 1e-8 {
        w = cross(&r, &u).map(|z| z.conj());
    }
    [u, normalize_phase(w).0]
}

pub fn eigensystem(m: &DressedMatrix) -> EigenSystem {
    let mat = &m.0;
    let coeffs = char_poly(mat);
    let symmetric_real = m.is_real() && (0..3).all(|i| (0..3).all(|j| mat[i][j] == mat[j][i]));
    let mut values: [C; 3] = if symmetric_real {
        let re = mat.map(|row| row.map(|z| z.re));
        symmetric_roots(&re).map(|x| C::new(x, 0.0))
    } else {
        durand_kerner(&coeffs)
    };
    let sep = |v: &[C; 3]| {
        [(0, 1), (0, 2), (1, 2)]
            .iter()
            .map(|&(i, j)| (v[i] - v[j]).norm())
            .fold(f64::INFINITY, f64::min)
    };
    if sep(&values) > DEGENERACY_TOLERANCE {
        let polished = values.map(|x| polish(&coeffs, x));
        if sep(&polished) > DEGENERACY_TOLERANCE {
            values = if symmetric_real { polished.map(|z| C::new(z.re, 0.0)) } else { polished };
        }
    }
    values.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));

    let mut vectors = [[ZERO; 3]; 3];
    let mut norms = [0.0; 3];
    let mut degenerate = false;
    let mut i = 0;
    while i < 3 {
        if i + 1 < 3 && (values[i + 1] - values[i]).norm() <= DEGENERACY_TOLERANCE {
            degenerate = true;
            let pair = degenerate_pair(mat, values[i]);
            vectors[i] = pair[0];
            vectors[i + 1] = pair[1];
            norms[i] = 1.0;
            norms[i + 1] = 1.0;
            i += 2;
            continue;
        }
        let (v, n) = normalize_phase(null_vector(mat, values[i]));
        vectors[i] = v;
        norms[i] = n;
        i += 1;
    }
    EigenSystem {
        values,
        vectors,
        norms,
        degenerate,
    }
}

/// (κΩ_q, EΩ_q, E(E−δ_q)−κ²), normalized, with the largest component made
/// real positive. `None` when the vector vanishes (Ω_q = 0 and E a root of
/// the mode block).
pub fn closed_form_vector(params: &SystemParams, energy: C) -> Option<([C; 3], f64)> {
    let k = params.kappa;
    let w = params.omega_q;
    let v = [
        C::new(k * w, 0.0),
        energy * w,
        energy * (energy - params.cavity_detuning) - k * k,
    ];
    if hnorm(&v) == 0.0 {
        None
    } else {
        Some(normalize_phase(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DressedBranch {
    /// |−⟩_q, the lower switch dressed state.
    Lower,
    /// |+⟩_q
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatingPoints {
    /// Δ_q where mode s is resonant with a switch dressed state (switch open).
    pub on: f64,
    /// Δ_q = −δ_q, two-photon resonance (switch closed, dark state).
    pub off: f64,
    /// Which dressed branch sits at zero energy at `on`.
    pub resonant_branch: DressedBranch,
    /// Energy of that branch at `on`; zero up to rounding.
    pub resonance_residual: f64,
}

/// Eigenvalues of the lossless 2×2 switch block (|1⟩_q, |e⟩_q), lower first.
pub fn switch_dressed_energies(params: &SystemParams, delta_q: f64) -> [f64; 2] {
    let d = params.cavity_detuning;
    let mean = d + delta_q / 2.0;
    let half = (delta_q * delta_q / 4.0 + params.omega_q * params.omega_q).sqrt();
    [mean - half, mean + half]
}

pub fn operating_points(params: &SystemParams) -> Result<OperatingPoints, SpectralError> {
    let d = params.cavity_detuning;
    if d == 0.0 || !d.is_finite() {
        return Err(SpectralError::SingularOperatingPoint);
    }
    let w = params.omega_q;
    let on = (w * w - d * d) / d;
    let [lo, hi] = switch_dressed_energies(params, on);
    let (resonant_branch, resonance_residual) = if lo.abs() <= hi.abs() {
        (DressedBranch::Lower, lo)
    } else {
        (DressedBranch::Upper, hi)
    };
    Ok(OperatingPoints {
        on,
        off: -d,
        resonant_branch,
        resonance_residual,
    })
}

/// πΔ_s/Ω_s².
pub fn t_pi(params: &SystemParams) -> Result<f64, SpectralError> {
    if params.omega_s == 0.0 {
        return Err(SpectralError::NoStorageCoupling);
    }
    Ok(PI * params.storage_detuning / (params.omega_s * params.omega_s))
}

/// Dispersive phase rate from the storage two-level diagonalization:
/// (√(Δ_s²+4Ω_s²) − Δ_s)/2.
pub fn exact_phase_rate(omega_s: f64, storage_detuning: f64) -> f64 {
    let d = storage_detuning;
    // Written as 2Ω²/(√(Δ²+4Ω²)+Δ) to avoid cancellation at large Δ_s.
    2.0 * omega_s * omega_s / ((d * d + 4.0 * omega_s * omega_s).sqrt() + d)
}

/// Phase rate of the held photon in the dark state: the storage shift scaled
/// by the dark state's |1⟩_s weight Ω_q²/(κ²+Ω_q²).
pub fn held_phase_rate(params: &SystemParams, storage_detuning: f64) -> f64 {
    let w2 = params.omega_q * params.omega_q;
    exact_phase_rate(params.omega_s, storage_detuning) * w2 / (params.kappa * params.kappa + w2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AbsorptionEstimate {
    /// (Ω_s/Δ_s)²
    pub eta: f64,
    /// Set when the estimate leaves the dispersive regime.
    pub outside_dispersive: bool,
}

pub fn absorption_estimate(params: &SystemParams) -> AbsorptionEstimate {
    let eta = if params.storage_detuning == 0.0 {
        f64::INFINITY
    } else {
        (params.omega_s / params.storage_detuning).powi(2)
    };
    AbsorptionEstimate {
        eta,
        outside_dispersive: eta >= DISPERSIVE_LIMIT * DISPERSIVE_LIMIT,
    }
}

/// Eigen-decomposition of a real symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues ascending and eigenvectors as rows.
pub fn jacobi_eigen<const N: usize>(mut a: [[f64; N]; N]) -> ([f64; N], [[f64; N]; N]) {
    let mut v = [[0.0; N]; N];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..N)
            .flat_map(|i| (0..N).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = (0..N).map(|i| a[i][i] * a[i][i]).sum::<f64>() + off;
        if off <= 1e-30 * scale.max(1e-300) {
            break;
        }
        for p in 0..N {
            for q in p + 1..N {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..N {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..N {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut idx: [usize; N] = std::array::from_fn(|i| i);
    idx.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]));
    let values = idx.map(|i| a[i][i]);
    let vectors = idx.map(|i| std::array::from_fn(|k| v[k][i]));
    (values, vectors)
}

/// Lossless real Hamiltonian at time `t` together with its time derivative.
/// Three states (|1⟩_s, |1⟩_q, |e⟩_q) when Δ_s is static; four, with D_s
/// first, when the schedule drives Δ_s.
#[derive(Debug, Clone, PartialEq)]
enum Snapshot {
    Three { h: [[f64; 3]; 3], dh: [[f64; 3]; 3] },
    Four { h: [[f64; 4]; 4], dh: [[f64; 4]; 4] },
}

fn snapshot(params: &SystemParams, schedule: &ControlSchedule, t: f64) -> Snapshot {
    let k = params.kappa;
    let w = params.omega_q;
    let d = params.cavity_detuning;
    let dq = schedule.delta_q_at(t);
    let rq = schedule.delta_q.rate(t);
    match &schedule.delta_s {
        None => Snapshot::Three {
            h: [[0.0, k, 0.0], [k, d, w], [0.0, w, d + dq]],
            dh: [[0.0; 3], [0.0; 3], [0.0, 0.0, rq]],
        },
        Some(track) => {
            let ds = track.value(t);
            let rs = track.rate(t);
            let ws = params.omega_s;
            let mut dh = [[0.0; 4]; 4];
            dh[0][0] = rs;
            dh[3][3] = rq;
            Snapshot::Four {
                h: [
                    [ds, ws, 0.0, 0.0],
                    [ws, 0.0, k, 0.0],
                    [0.0, k, d, w],
                    [0.0, 0.0, w, d + dq],
                ],
                dh,
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn quad_form(m: &[Vec<f64>], a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        for j in 0..b.len() {
            s += a[i] * m[i][j] * b[j];
        }
    }
    s
}

/// Eigenvalues (ascending), eigenvectors and Ḣ of the lossless snapshot.
fn decompose(params: &SystemParams, schedule: &ControlSchedule, t: f64) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    match snapshot(params, schedule, t) {
        Snapshot::Three { h, dh } => {
            let es = eigensystem(&DressedMatrix(h.map(|r| r.map(|x| C::new(x, 0.0)))));
            let vals = es.values.iter().map(|z| z.re).collect();
            let vecs = es
                .vectors
                .iter()
                .map(|v| v.iter().map(|z| z.re).collect())
                .collect();
            (vals, vecs, dh.iter().map(|r| r.to_vec()).collect())
        }
        Snapshot::Four { h, dh } => {
            let (vals, vecs) = jacobi_eigen(h);
            (
                vals.to_vec(),
                vecs.iter().map(|v| v.to_vec()).collect(),
                dh.iter().map(|r| r.to_vec()).collect(),
            )
        }
    }
}

/// Basis dimension used for `schedule`: 3, or 4 when Δ_s is scheduled.
pub fn basis_dim(schedule: &ControlSchedule) -> usize {
    if schedule.delta_s.is_some() {
        4
    } else {
        3
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdiabaticPoint {
    pub t: f64,
    /// Eigenvalues of the switch subsystem (3×3 block), ascending.
    pub energies: [f64; 3],
    /// Tracked eigenvector in the analysis basis.
    pub tracked: Vec<f64>,
    /// Weights of the tracked state on |1⟩_s, |1⟩_q, |e⟩_q.
    pub overlaps: [f64; 3],
    /// 𝒜(t); `None` at a gap collapse.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdiabaticityReport {
    pub points: Vec<AdiabaticPoint>,
    pub max: f64,
    pub t_max: f64,
    pub mean: f64,
    /// Times where the gap fell below the collapse threshold.
    pub gap_collapses: Vec<f64>,
}

/// 𝒜 at time `t` for the eigenstate closest (by overlap) to `tracked`.
/// Returns the value together with the eigenvector actually followed.
pub fn adiabaticity(
    params: &SystemParams,
    schedule: &ControlSchedule,
    t: f64,
    tracked: &[f64],
) -> Result<(f64, Vec<f64>), SpectralError> {
    let (vals, vecs, dh) = decompose(params, schedule, t);
    let i = (0..vals.len())
        .max_by(|&a, &b| dot(&vecs[a], tracked).abs().total_cmp(&dot(&vecs[b], tracked).abs()))
        .unwrap();
    let mut phi = vecs[i].clone();
    if dot(&phi, tracked) < 0.0 {
        phi.iter_mut().for_each(|x| *x = -*x);
    }
    // Nearest level in energy; ties broken toward the larger coupling.
    let mut best: Option<(f64, f64)> = None;
    for j in (0..vals.len()).filter(|&j| j != i) {
        let gap = (vals[j] - vals[i]).abs();
        let coupling = quad_form(&dh, &vecs[j], &phi).abs();
        best = match best {
            None => Some((gap, coupling)),
            Some((g, _)) if gap < g - 1e-9 => Some((gap, coupling)),
            Some((g, c)) if (gap - g).abs() <= 1e-9 && coupling > c => Some((gap, coupling)),
            keep => keep,
        };
    }
    let (gap, coupling) = best.expect("at least two levels");
    if gap < GAP_COLLAPSE {
        return Err(SpectralError::GapCollapse { t, gap });
    }
    Ok((coupling / (gap * gap), phi))
}

/// Samples 𝒜 over the schedule at spacing ≤ `max_step`, following the state
/// that is dark at Δ_q^off by maximum-overlap continuation.
pub fn adiabaticity_report(
    params: &SystemParams,
    schedule: &ControlSchedule,
    max_step: f64,
) -> Result<AdiabaticityReport, SpectralError> {
    let ops = operating_points(params)?;
    let (t0, t1) = (schedule.start(), schedule.end());
    let n = (((t1 - t0) / max_step).ceil() as usize).max(1);
    let times: Vec<f64> = (0..=n).map(|k| t0 + (t1 - t0) * k as f64 / n as f64).collect();

    // Anchor: the sample whose Δ_q is closest to the closed point; there the
    // followed state is the eigenvector nearest zero energy.
    let anchor = (0..times.len())
        .min_by(|&a, &b| {
            let da = (schedule.delta_q_at(times[a]) - ops.off).abs();
            let db = (schedule.delta_q_at(times[b]) - ops.off).abs();
            da.total_cmp(&db)
        })
        .unwrap();
    let (vals, vecs, _) = decompose(params, schedule, times[anchor]);
    let start = (0..vals.len())
        .min_by(|&a, &b| vals[a].abs().total_cmp(&vals[b].abs()))
        .unwrap();
    let seed = vecs[start].clone();

    let mut slots: Vec<Option<AdiabaticPoint>> = vec![None; times.len()];
    let mut collapses = Vec::new();
    let mut follow = |order: &mut dyn Iterator<Item = usize>| {
        let mut prev = seed.clone();
        for k in order {
            let t = times[k];
            let point = match adiabaticity(params, schedule, t, &prev) {
                Ok((value, phi)) => {
                    prev = phi;
                    Some(value)
                }
                Err(SpectralError::GapCollapse { .. }) => {
                    collapses.push(t);
                    None
                }
                Err(e) => return Err(e),
            };
            let energies = {
                let es = eigensystem(&dressed_matrix(params, schedule.delta_q_at(t), false));
                es.values.map(|z| z.re)
            };
            let off = prev.len() - 3;
            slots[k] = Some(AdiabaticPoint {
                t,
                energies,
                tracked: prev.clone(),
                overlaps: [prev[off].powi(2), prev[off + 1].powi(2), prev[off + 2].powi(2)],
                value: point,
            });
        }
        Ok(())
    };
    follow(&mut (anchor..times.len()))?;
    follow(&mut (0..=anchor).rev())?;

    let points: Vec<AdiabaticPoint> = slots.into_iter().map(|p| p.expect("filled")).collect();
    let mut max = 0.0;
    let mut t_max = t0;
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in &points {
        if let Some(v) = p.value {
            sum += v;
            count += 1;
            if v > max {
                max = v;
                t_max = p.t;
            }
        }
    }
    collapses.sort_by(f64::total_cmp);
    collapses.dedup();
    Ok(AdiabaticityReport {
        points,
        max,
        t_max,
        mean: if count > 0 { sum / count as f64 } else { 0.0 },
        gap_collapses: collapses,
    })
}
