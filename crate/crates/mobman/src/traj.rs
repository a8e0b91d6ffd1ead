//! Quintic polynomial joint-space trajectories. A fifth-order polynomial is
//! the lowest order that can meet position, velocity and acceleration
//! constraints at both endpoints, which keeps acceleration continuous and
//! jerk finite along the whole motion.

use nalgebra::{DMatrix, DVector};

use crate::kinematics::{JointVector, KinematicChain};
use crate::{Error, Result};

/// Endpoint constraints for one joint: position, velocity and acceleration
/// at both ends of the time window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryCondition {
    pub q0: f64,
    pub v0: f64,
    pub a0: f64,
    pub qf: f64,
    pub vf: f64,
    pub af: f64,
    pub t0: f64,
    pub tf: f64,
}

impl BoundaryCondition {
    /// Zero velocity and acceleration at both ends.
    pub fn rest_to_rest(q0: f64, qf: f64, t0: f64, tf: f64) -> Self {
        Self { q0, v0: 0.0, a0: 0.0, qf, vf: 0.0, af: 0.0, t0, tf }
    }

    fn validate(&self) -> Result<()> {
        let vals = [self.q0, self.v0, self.a0, self.qf, self.vf, self.af, self.t0, self.tf];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite boundary condition".into()));
        }
        if self.tf <= self.t0 {
            return Err(Error::InvalidArgument(format!(
                "tf {} must exceed t0 {}",
                self.tf, self.t0
            )));
        }
        if self.tf - self.t0 < 1e-6 {
            return Err(Error::DegenerateDuration(self.tf - self.t0));
        }
        Ok(())
    }
}

/// A fitted quintic `q(t) = a0 + a1 T + ... + a5 T^5` over `[t0, tf]`, with
/// `T = t - t0` the local segment time. The local form keeps both the
/// boundary solve and evaluation well conditioned no matter where the
/// window sits on the absolute time axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuinticSegment {
    pub coeffs: [f64; 6],
    pub t0: f64,
    pub tf: f64,
}

/// Position, velocity and acceleration of a segment at one instant.
/// `clamped` flags that the query time fell outside the segment window and
/// was evaluated at the nearer endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajSample {
    pub q: f64,
    pub v: f64,
    pub a: f64,
    pub clamped: bool,
}

/// Solves the 6x6 boundary-condition system for the quintic coefficients
/// with a partially pivoted LU factorization.
pub fn quintic_coefficients(bc: &BoundaryCondition) -> Result<QuinticSegment> {
    bc.validate()?;
    let row_pos = |t: f64| [1.0, t, t * t, t.powi(3), t.powi(4), t.powi(5)];
    let row_vel = |t: f64| [0.0, 1.0, 2.0 * t, 3.0 * t * t, 4.0 * t.powi(3), 5.0 * t.powi(4)];
    let row_acc = |t: f64| [0.0, 0.0, 2.0, 6.0 * t, 12.0 * t * t, 20.0 * t.powi(3)];
    let local_end = bc.tf - bc.t0;
    let rows = [
        row_pos(0.0),
        row_vel(0.0),
        row_acc(0.0),
        row_pos(local_end),
        row_vel(local_end),
        row_acc(local_end),
    ];
    let system = DMatrix::from_fn(6, 6, |r, c| rows[r][c]);
    let rhs = DVector::from_vec(vec![bc.q0, bc.v0, bc.a0, bc.qf, bc.vf, bc.af]);
    let lu = system.clone().lu();
    let mut solution =
        lu.solve(&rhs).ok_or_else(|| Error::DegenerateDuration(bc.tf - bc.t0))?;
    // Iterative refinement: long windows still raise the Vandermonde
    // condition number, and two correction passes pull the boundary
    // residuals back to machine precision.
    for _ in 0..2 {
        let residual = &rhs - &system * &solution;
        if let Some(correction) = lu.solve(&residual) {
            solution += correction;
        }
    }
    let mut coeffs = [0.0; 6];
    coeffs.copy_from_slice(solution.as_slice());
    Ok(QuinticSegment { coeffs, t0: bc.t0, tf: bc.tf })
}

/// Evaluates a segment; times outside `[t0, tf]` are clamped and flagged.
pub fn evaluate(seg: &QuinticSegment, t: f64) -> TrajSample {
    let clamped = t < seg.t0 || t > seg.tf;
    let t = t.clamp(seg.t0, seg.tf) - seg.t0;
    let c = &seg.coeffs;
    // Horner evaluation of q, v, a.
    let q = ((((c[5] * t + c[4]) * t + c[3]) * t + c[2]) * t + c[1]) * t + c[0];
    let v = (((5.0 * c[5] * t + 4.0 * c[4]) * t + 3.0 * c[3]) * t + 2.0 * c[2]) * t + c[1];
    let a = ((20.0 * c[5] * t + 12.0 * c[4]) * t + 6.0 * c[3]) * t + 2.0 * c[2];
    TrajSample { q, v, a, clamped }
}

/// Largest absolute velocity and acceleration over a segment, found by dense
/// sampling refined with ternary search around the best bracket.
pub fn peak_speed_accel(seg: &QuinticSegment) -> (f64, f64) {
    (peak_of(seg, |s| s.v.abs()), peak_of(seg, |s| s.a.abs()))
}

fn peak_of(seg: &QuinticSegment, f: impl Fn(&TrajSample) -> f64) -> f64 {
    const SAMPLES: usize = 1000;
    let span = seg.tf - seg.t0;
    let at = |t: f64| f(&evaluate(seg, t));
    let mut best_t = seg.t0;
    let mut best = at(seg.t0);
    for i in 1..=SAMPLES {
        let t = seg.t0 + span * (i as f64) / (SAMPLES as f64);
        let v = at(t);
        if v > best {
            best = v;
            best_t = t;
        }
    }
    // Refine inside the bracketing interval; |v| and |a| are piecewise
    // unimodal at this resolution.
    let mut lo = (best_t - span / SAMPLES as f64).max(seg.t0);
    let mut hi = (best_t + span / SAMPLES as f64).min(seg.tf);
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if at(m1) < at(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    best.max(at(0.5 * (lo + hi)))
}

/// Synchronized rest-to-rest quintics for every joint over one shared
/// duration.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTrajectory {
    segments: Vec<QuinticSegment>,
    t0: f64,
    tf: f64,
}

impl JointTrajectory {
    pub fn new(segments: Vec<QuinticSegment>) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| Error::InvalidArgument("trajectory needs at least one joint".into()))?;
        let (t0, tf) = (first.t0, first.tf);
        if segments.iter().any(|s| s.t0 != t0 || s.tf != tf) {
            return Err(Error::InvalidArgument(
                "all joint segments must share the same time window".into(),
            ));
        }
        Ok(Self { segments, t0, tf })
    }

    pub fn segments(&self) -> &[QuinticSegment] {
        &self.segments
    }

    pub fn dof(&self) -> usize {
        self.segments.len()
    }

    pub fn start_time(&self) -> f64 {
        self.t0
    }

    pub fn end_time(&self) -> f64 {
        self.tf
    }

    pub fn duration(&self) -> f64 {
        self.tf - self.t0
    }

    /// Position, velocity and acceleration of every joint at `t` (clamped to
    /// the window outside it).
    pub fn sample(&self, t: f64) -> (JointVector, JointVector, JointVector) {
        let n = self.dof();
        let mut q = DVector::zeros(n);
        let mut v = DVector::zeros(n);
        let mut a = DVector::zeros(n);
        for (i, seg) in self.segments.iter().enumerate() {
            let s = evaluate(seg, t);
            q[i] = s.q;
            v[i] = s.v;
            a[i] = s.a;
        }
        (q, v, a)
    }

    /// CSV export: header `t` then `q{i},v{i},a{i}` per joint, one row per
    /// sample step.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W, dt: f64) -> std::io::Result<()> {
        write!(out, "t")?;
        for i in 0..self.dof() {
            write!(out, ",q{i},v{i},a{i}")?;
        }
        writeln!(out)?;
        let steps = (self.duration() / dt).ceil() as usize;
        for k in 0..=steps {
            let t = (self.t0 + k as f64 * dt).min(self.tf);
            let (q, v, a) = self.sample(t);
            write!(out, "{t}")?;
            for i in 0..self.dof() {
                write!(out, ",{},{},{}", q[i], v[i], a[i])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Plans a synchronized rest-to-rest motion from `q_start` to `q_goal` over
/// `duration` seconds. If any joint's peak speed or acceleration exceeds its
/// limit the shared duration is uniformly dilated until every limit holds.
pub fn plan_joint_trajectory(
    chain: &KinematicChain,
    q_start: &JointVector,
    q_goal: &JointVector,
    duration: f64,
    vel_limits: &[f64],
    acc_limits: &[f64],
) -> Result<JointTrajectory> {
    let n = chain.dof();
    if q_start.len() != n || q_goal.len() != n {
        return Err(Error::InvalidArgument("start/goal dimension mismatch".into()));
    }
    if vel_limits.len() != n || acc_limits.len() != n {
        return Err(Error::InvalidArgument("limit vector dimension mismatch".into()));
    }
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::InvalidArgument(format!("duration {duration} must be > 0")));
    }
    if !chain.within_limits(q_start) {
        return Err(Error::JointLimit("start configuration outside joint limits".into()));
    }
    if !chain.within_limits(q_goal) {
        return Err(Error::JointLimit("goal configuration outside joint limits".into()));
    }

    let fit = |duration: f64| -> Result<Vec<QuinticSegment>> {
        (0..n)
            .map(|i| {
                quintic_coefficients(&BoundaryCondition::rest_to_rest(
                    q_start[i], q_goal[i], 0.0, duration,
                ))
            })
            .collect()
    };

    let segments = fit(duration)?;
    // Peak speed of a rest-to-rest quintic scales with 1/T and peak
    // acceleration with 1/T^2, so a single uniform dilation factor fixes
    // every violation at once.
    let mut scale: f64 = 1.0;
    for (i, seg) in segments.iter().enumerate() {
        let (peak_v, peak_a) = peak_speed_accel(seg);
        if vel_limits[i] > 0.0 {
            scale = scale.max(peak_v / vel_limits[i]);
        }
        if acc_limits[i] > 0.0 {
            scale = scale.max((peak_a / acc_limits[i]).sqrt());
        }
    }
    let segments = if scale > 1.0 + 1e-12 { fit(duration * scale)? } else { segments };
    JointTrajectory::new(segments)
}

/// Fallback duration when the caller does not specify one: the slowest
/// joint moving at half its velocity limit.
pub fn default_duration(q_start: &JointVector, q_goal: &JointVector, vel_limits: &[f64]) -> f64 {
    let mut duration: f64 = 0.5;
    for i in 0..q_start.len().min(vel_limits.len()) {
        if vel_limits[i] > 0.0 {
            duration = duration.max((q_goal[i] - q_start[i]).abs() / (0.5 * vel_limits[i]));
        }
    }
    duration
}
