//! Piecewise time profiles for the switch-atom detuning Δ_q(t) and,
//! optionally, the storage-atom detuning Δ_s(t).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for joint contiguity and value continuity.
pub const JOINT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("schedule track is empty")]
    Empty,
    #[error("segment {index} has t_end {t_end} before t_start {t_start}")]
    Reversed { index: usize, t_start: f64, t_end: f64 },
    #[error("segments {index} and {next} are not contiguous ({t_end} vs {t_start})")]
    NotContiguous {
        index: usize,
        next: usize,
        t_end: f64,
        t_start: f64,
    },
    #[error("value jump of {jump} at joint t = {t}")]
    Discontinuous { t: f64, jump: f64 },
    #[error("non-finite value in segment {0}")]
    NonFinite(usize),
    #[error("schedule gap: t = {t} outside [{start}, {end}]")]
    Gap { t: f64, start: f64, end: f64 },
    #[error("Δ_s track span [{s0}, {s1}] differs from Δ_q span [{q0}, {q1}]")]
    SpanMismatch { q0: f64, q1: f64, s0: f64, s1: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Constant,
    Linear,
    /// v_start + (v_end − v_start)·(1 − cos πu)/2; zero slope at both ends.
    RaisedCosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub profile: Profile,
    pub v_start: f64,
    pub v_end: f64,
}

impl Segment {
    pub fn constant(t_start: f64, t_end: f64, v: f64) -> Self {
        Self {
            t_start,
            t_end,
            profile: Profile::Constant,
            v_start: v,
            v_end: v,
        }
    }

    pub fn ramp(t_start: f64, t_end: f64, profile: Profile, v_start: f64, v_end: f64) -> Self {
        Self {
            t_start,
            t_end,
            profile,
            v_start,
            v_end,
        }
    }

    fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    fn fraction(&self, t: f64) -> f64 {
        let d = self.duration();
        if d <= 0.0 {
            1.0
        } else {
            ((t - self.t_start) / d).clamp(0.0, 1.0)
        }
    }

    fn end_value(&self) -> f64 {
        match self.profile {
            Profile::Constant => self.v_start,
            _ => self.v_end,
        }
    }

    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        match self.profile {
            Profile::Constant => self.v_start,
            Profile::Linear => self.v_start + (self.v_end - self.v_start) * self.fraction(t),
            Profile::RaisedCosine => {
                let u = self.fraction(t);
                self.v_start + (self.v_end - self.v_start) * 0.5 * (1.0 - (PI * u).cos())
            }
        }
    }

    #[inline]
    pub fn rate(&self, t: f64) -> f64 {
        let d = self.duration();
        if d <= 0.0 {
            return 0.0;
        }
        match self.profile {
            Profile::Constant => 0.0,
            Profile::Linear => (self.v_end - self.v_start) / d,
            Profile::RaisedCosine => {
                let u = self.fraction(t);
                (self.v_end - self.v_start) * 0.5 * PI * (PI * u).sin() / d
            }
        }
    }
}

/// Contiguous, value-continuous sequence of segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    segments: Vec<Segment>,
}

impl Track {
    pub fn new(segments: Vec<Segment>) -> Result<Self, ScheduleError> {
        if segments.is_empty() {
            return Err(ScheduleError::Empty);
        }
        for (i, s) in segments.iter().enumerate() {
            if ![s.t_start, s.t_end, s.v_start, s.v_end]
                .iter()
                .all(|x| x.is_finite())
            {
                return Err(ScheduleError::NonFinite(i));
            }
            if s.t_end < s.t_start {
                return Err(ScheduleError::Reversed {
                    index: i,
                    t_start: s.t_start,
                    t_end: s.t_end,
                });
            }
        }
        for (i, pair) in segments.windows(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            if (a.t_end - b.t_start).abs() > JOINT_TOLERANCE {
                return Err(ScheduleError::NotContiguous {
                    index: i,
                    next: i + 1,
                    t_end: a.t_end,
                    t_start: b.t_start,
                });
            }
            let jump = (a.end_value() - b.v_start).abs();
            if jump > JOINT_TOLERANCE {
                return Err(ScheduleError::Discontinuous { t: a.t_end, jump });
            }
        }
        Ok(Self { segments })
    }

    pub fn constant(t_start: f64, t_end: f64, v: f64) -> Self {
        Self {
            segments: vec![Segment::constant(t_start, t_end, v)],
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn start(&self) -> f64 {
        self.segments[0].t_start
    }

    pub fn end(&self) -> f64 {
        self.segments[self.segments.len() - 1].t_end
    }

    /// Segment active at `t`; the later segment at a joint. Clamps outside the span.
    #[inline]
    fn segment_at(&self, t: f64) -> &Segment {
        let idx = self
            .segments
            .iter()
            .position(|s| t < s.t_end)
            .unwrap_or(self.segments.len() - 1);
        &self.segments[idx]
    }

    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        self.segment_at(t).value(t)
    }

    /// Right-sided time derivative.
    #[inline]
    pub fn rate(&self, t: f64) -> f64 {
        self.segment_at(t).rate(t)
    }

    pub fn max_abs(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| s.v_start.abs().max(s.v_end.abs()))
            .fold(0.0, f64::max)
    }

    pub fn joints(&self) -> Vec<f64> {
        self.segments.iter().skip(1).map(|s| s.t_start).collect()
    }
}

/// Δ_q(t) plus an optional Δ_s(t); when Δ_s is absent the baseline from
/// the system parameters applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    pub delta_q: Track,
    pub delta_s: Option<Track>,
}

impl ControlSchedule {
    pub fn new(delta_q: Track, delta_s: Option<Track>) -> Result<Self, ScheduleError> {
        if let Some(s) = &delta_s {
            if (s.start() - delta_q.start()).abs() > JOINT_TOLERANCE
                || (s.end() - delta_q.end()).abs() > JOINT_TOLERANCE
            {
                return Err(ScheduleError::SpanMismatch {
                    q0: delta_q.start(),
                    q1: delta_q.end(),
                    s0: s.start(),
                    s1: s.end(),
                });
            }
        }
        Ok(Self { delta_q, delta_s })
    }

    /// Δ_q pinned at `value` over `[t_start, t_end]`.
    pub fn pinned(t_start: f64, t_end: f64, value: f64) -> Self {
        Self {
            delta_q: Track::constant(t_start, t_end, value),
            delta_s: None,
        }
    }

    pub fn start(&self) -> f64 {
        self.delta_q.start()
    }

    pub fn end(&self) -> f64 {
        self.delta_q.end()
    }

    pub fn check_covers(&self, t: f64) -> Result<(), ScheduleError> {
        let (start, end) = (self.start(), self.end());
        if t < start - JOINT_TOLERANCE || t > end + JOINT_TOLERANCE {
            Err(ScheduleError::Gap { t, start, end })
        } else {
            Ok(())
        }
    }

    #[inline]
    pub fn delta_q_at(&self, t: f64) -> f64 {
        self.delta_q.value(t)
    }

    #[inline]
    pub fn delta_s_at(&self, t: f64, baseline: f64) -> f64 {
        match &self.delta_s {
            Some(track) => track.value(t),
            None => baseline,
        }
    }

    pub fn delta_s_rate(&self, t: f64) -> f64 {
        self.delta_s.as_ref().map_or(0.0, |s| s.rate(t))
    }

    /// Time-mirrored schedule: value at `start + end − t`.
    pub fn mirrored(&self) -> Self {
        let (a, b) = (self.start(), self.end());
        let mirror = |track: &Track| {
            let segments = track
                .segments
                .iter()
                .rev()
                .map(|s| Segment {
                    t_start: a + b - s.t_end,
                    t_end: a + b - s.t_start,
                    profile: s.profile,
                    v_start: s.end_value(),
                    v_end: s.v_start,
                })
                .collect();
            Track { segments }
        };
        Self {
            delta_q: mirror(&self.delta_q),
            delta_s: self.delta_s.as_ref().map(mirror),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sweep() -> Track {
        Track::new(vec![
            Segment::constant(0.0, 5.0, 30.0),
            Segment::ramp(5.0, 15.0, Profile::Linear, 30.0, -10.0),
            Segment::constant(15.0, 20.0, -10.0),
        ])
        .unwrap()
    }

    #[test]
    fn evaluates_segments() {
        let t = sweep();
        assert_eq!(t.value(0.0), 30.0);
        assert_eq!(t.value(10.0), 10.0);
        assert_eq!(t.value(20.0), -10.0);
        assert_eq!(t.rate(10.0), -4.0);
        assert_eq!(t.rate(2.0), 0.0);
        // Outside the span the track clamps.
        assert_eq!(t.value(25.0), -10.0);
    }

    #[test]
    fn raised_cosine_has_flat_joints() {
        let s = Segment::ramp(0.0, 2.0, Profile::RaisedCosine, 1.0, 3.0);
        assert!(s.rate(0.0).abs() < 1e-15);
        assert!(s.rate(2.0).abs() < 1e-12);
        assert!((s.value(1.0) - 2.0).abs() < 1e-15);
        assert!((s.rate(1.0) - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_gaps_and_jumps() {
        let gap = Track::new(vec![
            Segment::constant(0.0, 1.0, 0.0),
            Segment::constant(1.5, 2.0, 0.0),
        ]);
        assert!(matches!(gap, Err(ScheduleError::NotContiguous { .. })));
        let jump = Track::new(vec![
            Segment::constant(0.0, 1.0, 0.0),
            Segment::constant(1.0, 2.0, 1.0),
        ]);
        assert!(matches!(jump, Err(ScheduleError::Discontinuous { .. })));
        assert!(matches!(Track::new(vec![]), Err(ScheduleError::Empty)));
    }

    #[test]
    fn coverage_check() {
        let s = ControlSchedule::new(sweep(), None).unwrap();
        assert!(s.check_covers(0.0).is_ok());
        assert!(s.check_covers(20.0).is_ok());
        assert!(matches!(s.check_covers(20.5), Err(ScheduleError::Gap { .. })));
    }

    #[test]
    fn mirror_reverses_time() {
        let s = ControlSchedule::new(sweep(), None).unwrap();
        let m = s.mirrored();
        for &t in &[0.0, 3.0, 7.5, 12.0, 19.0] {
            assert!((m.delta_q_at(t) - s.delta_q_at(20.0 - t)).abs() < 1e-12);
        }
        assert_eq!(m.mirrored(), s);
    }
}
