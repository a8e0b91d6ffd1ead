//! Joint-space PID torque control closed over the dynamics integrator. One
//! independent PID loop per joint tracks the quintic reference; an optional
//! gravity feedforward cancels the static load so the PID only has to fight
//! the inertial terms.

use nalgebra::DVector;

use crate::dynamics::{gravity_vector, integrate_step, ArmState, DynamicModel, JointTorque};
use crate::kinematics::JointVector;
use crate::traj::JointTrajectory;
use crate::{Error, Result};

/// Per-joint PID gains and integral clamp.
#[derive(Debug, Clone, PartialEq)]
pub struct PidGains {
    pub kp: DVector<f64>,
    pub kv: DVector<f64>,
    pub ki: DVector<f64>,
    pub integral_limit: DVector<f64>,
}

impl PidGains {
    pub fn new(kp: Vec<f64>, kv: Vec<f64>, ki: Vec<f64>, integral_limit: Vec<f64>) -> Result<Self> {
        let n = kp.len();
        if kv.len() != n || ki.len() != n || integral_limit.len() != n {
            return Err(Error::InvalidArgument("gain vectors must share one length".into()));
        }
        let all = kp.iter().chain(&kv).chain(&ki);
        if all.clone().any(|g| !g.is_finite() || *g < 0.0) {
            return Err(Error::InvalidArgument("gains must be finite and non-negative".into()));
        }
        if integral_limit.iter().any(|l| !l.is_finite() || *l <= 0.0) {
            return Err(Error::InvalidArgument("integral limits must be positive".into()));
        }
        Ok(Self {
            kp: DVector::from_vec(kp),
            kv: DVector::from_vec(kv),
            ki: DVector::from_vec(ki),
            integral_limit: DVector::from_vec(integral_limit),
        })
    }

    pub fn dof(&self) -> usize {
        self.kp.len()
    }
}

/// One logged control step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingSample {
    pub t: f64,
    pub q_ref: JointVector,
    pub q_act: JointVector,
    pub v_ref: JointVector,
    pub v_act: JointVector,
    pub error: JointVector,
    pub torque: JointTorque,
}

/// Fixed-rate log of a tracking run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackingLog {
    pub dt: f64,
    pub samples: Vec<TrackingSample>,
    /// Count of control steps on which at least one joint torque hit its
    /// saturation bound.
    pub saturation_events: usize,
}

impl TrackingLog {
    /// Largest absolute position error over the whole run, per joint.
    pub fn max_abs_error(&self) -> JointVector {
        let n = self.samples.first().map_or(0, |s| s.error.len());
        let mut max: JointVector = DVector::zeros(n);
        for s in &self.samples {
            for i in 0..n {
                max[i] = max[i].max(s.error[i].abs());
            }
        }
        max
    }

    /// CSV header for an n-joint log:
    /// `t` then `q_ref{i},q_act{i},v_ref{i},v_act{i},tau{i}` per joint.
    pub fn csv_header(dof: usize) -> String {
        let mut h = String::from("t");
        for i in 0..dof {
            h.push_str(&format!(",q_ref{i},q_act{i},v_ref{i},v_act{i},tau{i}"));
        }
        h
    }

    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        let n = self.samples.first().map_or(0, |s| s.q_ref.len());
        writeln!(out, "{}", Self::csv_header(n))?;
        for s in &self.samples {
            write!(out, "{}", s.t)?;
            for i in 0..n {
                write!(
                    out,
                    ",{},{},{},{},{}",
                    s.q_ref[i], s.q_act[i], s.v_ref[i], s.v_act[i], s.torque[i]
                )?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// The PID law: `tau_i = kp_i e_i + kv_i edot_i + ki_i clamp(integral_i)`.
pub fn pid_torque(
    gains: &PidGains,
    q_err: &JointVector,
    v_err: &JointVector,
    integral: &JointVector,
) -> Result<JointTorque> {
    let n = gains.dof();
    if q_err.len() != n || v_err.len() != n || integral.len() != n {
        return Err(Error::InvalidArgument("PID input dimension mismatch".into()));
    }
    let mut tau = DVector::zeros(n);
    for i in 0..n {
        let clamped = integral[i].clamp(-gains.integral_limit[i], gains.integral_limit[i]);
        tau[i] = gains.kp[i] * q_err[i] + gains.kv[i] * v_err[i] + gains.ki[i] * clamped;
    }
    Ok(tau)
}

/// Closed-loop tracking options beyond the gains.
#[derive(Debug, Clone)]
pub struct TrackOptions {
    /// Feed the configuration-dependent gravity torque forward.
    pub gravity_comp: bool,
    /// Per-joint torque magnitude bound; `None` leaves torques unbounded.
    pub effort_limits: Option<Vec<f64>>,
}

impl Default for TrackOptions {
    fn default() -> Self {
        Self { gravity_comp: true, effort_limits: None }
    }
}

/// Runs the PID loop over the trajectory at fixed step `dt`, starting from
/// the trajectory start at rest, advancing the plant with the RK4
/// integrator. Control and integration share the same rate.
pub fn track(
    model: &DynamicModel,
    traj: &JointTrajectory,
    gains: &PidGains,
    dt: f64,
    opts: &TrackOptions,
) -> Result<TrackingLog> {
    let n = model.dof();
    if traj.dof() != n || gains.dof() != n {
        return Err(Error::InvalidArgument("trajectory/gains dimension mismatch".into()));
    }
    if !(dt > 0.0 && dt <= 0.01) {
        return Err(Error::InvalidArgument(format!("control dt {dt} outside (0, 0.01]")));
    }
    if let Some(lim) = &opts.effort_limits {
        if lim.len() != n {
            return Err(Error::InvalidArgument("effort limit dimension mismatch".into()));
        }
    }

    let (q0, _, _) = traj.sample(traj.start_time());
    let mut state = ArmState::at_rest(q0);
    let mut integral: JointVector = DVector::zeros(n);
    let mut log = TrackingLog { dt, samples: Vec::new(), saturation_events: 0 };

    let steps = (traj.duration() / dt).round() as usize;
    for k in 0..=steps {
        let t = traj.start_time() + k as f64 * dt;
        let (q_ref, v_ref, _) = traj.sample(t);
        let q_err = &q_ref - &state.q;
        let v_err = &v_ref - &state.qdot;
        for i in 0..n {
            integral[i] = (integral[i] + q_err[i] * dt)
                .clamp(-gains.integral_limit[i], gains.integral_limit[i]);
        }
        let mut tau = pid_torque(gains, &q_err, &v_err, &integral)?;
        if opts.gravity_comp {
            tau += gravity_vector(model, &state.q)?;
        }
        if let Some(lim) = &opts.effort_limits {
            let mut saturated = false;
            for i in 0..n {
                if tau[i].abs() > lim[i] {
                    tau[i] = tau[i].clamp(-lim[i], lim[i]);
                    saturated = true;
                }
            }
            if saturated {
                log.saturation_events += 1;
            }
        }

        log.samples.push(TrackingSample {
            t,
            q_ref,
            q_act: state.q.clone(),
            v_ref,
            v_act: state.qdot.clone(),
            error: q_err,
            torque: tau.clone(),
        });

        if !tau.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { t, log: Box::new(log) });
        }
        if k < steps {
            // Dimensions were validated up front, so any failure inside the
            // loop is a numeric blow-up of the closed loop.
            state = match integrate_step(model, &state, &tau, dt) {
                Ok(s) => s,
                Err(_) => return Err(Error::Diverged { t: t + dt, log: Box::new(log) }),
            };
            if !state.is_finite() {
                return Err(Error::Diverged { t: t + dt, log: Box::new(log) });
            }
        }
    }
    Ok(log)
}
