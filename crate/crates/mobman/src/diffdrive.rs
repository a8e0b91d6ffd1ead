//! Differential-drive base: unicycle kinematics with exact-arc integration
//! (so the nonholonomic constraint holds to machine precision per step),
//! wheel-speed mapping, constraint auditing, and a PID follower that tracks
//! a time-parameterized path.

use serde::{Deserialize, Serialize};

use crate::grid::{TimedPath, TimedWaypoint};
use crate::{Error, Result};

/// Physical and actuation limits of the platform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseParams {
    /// Wheel radius, meters.
    pub wheel_radius: f64,
    /// Wheel separation, meters.
    pub track_width: f64,
    /// Forward speed bound, m/s.
    pub v_max: f64,
    /// Yaw rate bound, rad/s.
    pub w_max: f64,
    /// Linear acceleration bound, m/s^2.
    pub a_max: f64,
}

impl Default for BaseParams {
    fn default() -> Self {
        Self { wheel_radius: 0.098, track_width: 0.375, v_max: 1.0, w_max: 2.0, a_max: 1.0 }
    }
}

impl BaseParams {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.wheel_radius, self.track_width, self.v_max, self.w_max, self.a_max];
        if vals.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument("base parameters must all be > 0".into()));
        }
        Ok(())
    }
}

/// Planar pose and body rates of the platform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseState {
    pub x: f64,
    pub y: f64,
    /// Heading, normalized to (-pi, pi].
    pub theta: f64,
    pub v: f64,
    pub w: f64,
}

impl BaseState {
    pub fn at_pose(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: normalize_angle(theta), v: 0.0, w: 0.0 }
    }
}

/// PID gains of the distance and heading loops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaseGains {
    pub kp_dist: f64,
    pub ki_dist: f64,
    pub kd_dist: f64,
    pub kp_head: f64,
    pub ki_head: f64,
    pub kd_head: f64,
}

impl Default for BaseGains {
    fn default() -> Self {
        Self { kp_dist: 1.5, ki_dist: 0.0, kd_dist: 0.0, kp_head: 4.0, ki_head: 0.0, kd_head: 0.5 }
    }
}

impl BaseGains {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.kp_dist, self.ki_dist, self.kd_dist, self.kp_head, self.ki_head, self.kd_head];
        if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("base gains must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r - two_pi
    } else {
        r
    }
}

/// Constant-twist pose update over `dt`: a circular arc for `|w| > 0`, a
/// straight segment otherwise. Exact for piecewise-constant commands.
fn advance_arc(state: &BaseState, v: f64, w: f64, dt: f64) -> BaseState {
    let theta = state.theta;
    let (x, y) = if w.abs() > 1e-9 {
        (
            state.x + (v / w) * ((theta + w * dt).sin() - theta.sin()),
            state.y - (v / w) * ((theta + w * dt).cos() - theta.cos()),
        )
    } else {
        (state.x + v * dt * theta.cos(), state.y + v * dt * theta.sin())
    };
    BaseState { x, y, theta: normalize_angle(theta + w * dt), v, w }
}

/// Advances the base one step: commands are saturated to `v_max`/`w_max`,
/// the speed change is rate-limited by `a_max`, and the pose follows the
/// exact constant-twist arc.
pub fn step(
    state: &BaseState,
    v_cmd: f64,
    w_cmd: f64,
    dt: f64,
    params: &BaseParams,
) -> Result<BaseState> {
    params.validate()?;
    if !(dt > 0.0 && dt <= 0.05) {
        return Err(Error::InvalidArgument(format!("dt {dt} outside (0, 0.05]")));
    }
    if !(v_cmd.is_finite() && w_cmd.is_finite()) {
        return Err(Error::InvalidArgument("non-finite command".into()));
    }
    let v_sat = v_cmd.clamp(-params.v_max, params.v_max);
    let v = v_sat.clamp(state.v - params.a_max * dt, state.v + params.a_max * dt);
    let w = w_cmd.clamp(-params.w_max, params.w_max);
    Ok(advance_arc(state, v, w, dt))
}

/// Wheel angular rates `(left, right)` in rad/s realizing body rates
/// `(v, w)`.
pub fn wheel_speeds(v: f64, w: f64, params: &BaseParams) -> (f64, f64) {
    let half_track = 0.5 * params.track_width;
    (
        (v - w * half_track) / params.wheel_radius,
        (v + w * half_track) / params.wheel_radius,
    )
}

/// Inverse of [`wheel_speeds`]: body rates from wheel rates.
pub fn body_rates(omega_left: f64, omega_right: f64, params: &BaseParams) -> (f64, f64) {
    let v = 0.5 * params.wheel_radius * (omega_right + omega_left);
    let w = params.wheel_radius * (omega_right - omega_left) / params.track_width;
    (v, w)
}

/// Lateral-slip distance of one pose update: `|dx sin(theta_mid) - dy
/// cos(theta_mid)|` with `theta_mid` the arc mid-heading. Exactly zero for
/// arc motion, positive for any sideways displacement.
pub fn constraint_residual(prev: &BaseState, next: &BaseState) -> f64 {
    let dx = next.x - prev.x;
    let dy = next.y - prev.y;
    let theta_mid = prev.theta + 0.5 * normalize_angle(next.theta - prev.theta);
    (dx * theta_mid.sin() - dy * theta_mid.cos()).abs()
}

/// Distance error below which the follower steers toward the reference
/// heading instead of the bearing to the reference point.
const HEADING_BLEND_DIST: f64 = 0.05;
/// Position error below which the follower declares the goal reached once
/// the path time is exhausted.
const STOP_DIST: f64 = 0.01;
/// Heading error below which the final alignment is accepted.
const STOP_HEADING: f64 = 0.05;
/// Anti-windup bound on both PID integrators.
const INTEGRAL_CLAMP: f64 = 1.0;

/// Follower command plus the diagnostics that go into the base log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowCommand {
    pub v: f64,
    pub w: f64,
    /// True once the path time is exhausted and the base sits aligned on the
    /// final waypoint; commands are zero from then on.
    pub at_goal: bool,
    pub reference: TimedWaypoint,
    pub dist_error: f64,
    pub heading_error: f64,
}

/// Stateful PID path follower. Distance PID drives forward speed (projected
/// on the heading error so the base does not lunge sideways), heading PID
/// drives yaw toward the bearing of the reference point, blending to the
/// reference heading on final approach. Reversing is disallowed.
#[derive(Debug, Clone)]
pub struct PathFollower {
    gains: BaseGains,
    integral_dist: f64,
    integral_head: f64,
    prev_dist: Option<f64>,
    prev_head: Option<f64>,
}

impl PathFollower {
    pub fn new(gains: BaseGains) -> Result<Self> {
        gains.validate()?;
        Ok(Self { gains, integral_dist: 0.0, integral_head: 0.0, prev_dist: None, prev_head: None })
    }

    /// One control evaluation at time `t_now`; `dt` feeds the integral and
    /// derivative terms.
    pub fn command(
        &mut self,
        state: &BaseState,
        path: &TimedPath,
        t_now: f64,
        dt: f64,
    ) -> Result<FollowCommand> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt {dt} must be > 0")));
        }
        // Past the path end the reference freezes on the final waypoint and
        // the controller settles onto it before reporting the goal.
        let reference = path.interpolate(t_now);
        let dx = reference.x - state.x;
        let dy = reference.y - state.y;
        let dist_error = dx.hypot(dy);
        let heading_error = if dist_error > HEADING_BLEND_DIST {
            normalize_angle(dy.atan2(dx) - state.theta)
        } else {
            normalize_angle(reference.heading - state.theta)
        };

        if t_now >= path.end_time() && dist_error < STOP_DIST && heading_error.abs() < STOP_HEADING
        {
            return Ok(FollowCommand {
                v: 0.0,
                w: 0.0,
                at_goal: true,
                reference,
                dist_error,
                heading_error,
            });
        }

        self.integral_dist = (self.integral_dist + dist_error * dt)
            .clamp(-INTEGRAL_CLAMP, INTEGRAL_CLAMP);
        self.integral_head = (self.integral_head + heading_error * dt)
            .clamp(-INTEGRAL_CLAMP, INTEGRAL_CLAMP);
        let d_dist = self.prev_dist.map_or(0.0, |p| (dist_error - p) / dt);
        let d_head = self.prev_head.map_or(0.0, |p| (heading_error - p) / dt);
        self.prev_dist = Some(dist_error);
        self.prev_head = Some(heading_error);

        let g = &self.gains;
        let dist_pid =
            g.kp_dist * dist_error + g.ki_dist * self.integral_dist + g.kd_dist * d_dist;
        let head_pid =
            g.kp_head * heading_error + g.ki_head * self.integral_head + g.kd_head * d_head;
        // Project the forward command on the heading error and forbid
        // reversing; a reference behind the base turns it around first.
        let v = (dist_pid * heading_error.cos()).max(0.0);
        Ok(FollowCommand { v, w: head_pid, at_goal: false, reference, dist_error, heading_error })
    }
}

/// One row of the base log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseLogRow {
    pub t: f64,
    pub state: BaseState,
    pub ref_x: f64,
    pub ref_y: f64,
    pub dist_error: f64,
    pub heading_error: f64,
}

/// Fixed-step record of a follow run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BaseLog {
    pub rows: Vec<BaseLogRow>,
    /// Whether the follower reported the goal before the time horizon ran
    /// out.
    pub reached_goal: bool,
}

impl BaseLog {
    pub const CSV_HEADER: &'static str = "t,x,y,theta,v,w,ref_x,ref_y,e_d,e_theta";

    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.t,
                r.state.x,
                r.state.y,
                r.state.theta,
                r.state.v,
                r.state.w,
                r.ref_x,
                r.ref_y,
                r.dist_error,
                r.heading_error
            )?;
        }
        Ok(())
    }

    /// Largest nonholonomic residual between consecutive logged states.
    pub fn max_constraint_residual(&self) -> f64 {
        self.rows
            .windows(2)
            .map(|p| constraint_residual(&p[0].state, &p[1].state))
            .fold(0.0, f64::max)
    }

    /// Root-mean-square distance from the logged positions to the nearest
    /// point of the path polyline (cross-track error).
    pub fn rms_cross_track(&self, path: &TimedPath) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        let sum: f64 = self
            .rows
            .iter()
            .map(|r| {
                let d = cross_track_distance(r.state.x, r.state.y, path);
                d * d
            })
            .sum();
        (sum / self.rows.len() as f64).sqrt()
    }

    /// Distance from the final logged position to the path endpoint.
    pub fn final_position_error(&self, path: &TimedPath) -> f64 {
        match self.rows.last() {
            None => f64::INFINITY,
            Some(r) => {
                let end = path.end();
                (r.state.x - end.x).hypot(r.state.y - end.y)
            }
        }
    }
}

/// Shortest distance from a point to the path polyline.
pub fn cross_track_distance(x: f64, y: f64, path: &TimedPath) -> f64 {
    let pts = path.waypoints();
    if pts.len() == 1 {
        return (x - pts[0].x).hypot(y - pts[0].y);
    }
    let mut best = f64::INFINITY;
    for pair in pts.windows(2) {
        let (ax, ay) = (pair[0].x, pair[0].y);
        let (bx, by) = (pair[1].x, pair[1].y);
        let (ux, uy) = (bx - ax, by - ay);
        let len2 = ux * ux + uy * uy;
        let s = if len2 > 0.0 { ((x - ax) * ux + (y - ay) * uy) / len2 } else { 0.0 };
        let s = s.clamp(0.0, 1.0);
        let (px, py) = (ax + s * ux, ay + s * uy);
        best = best.min((x - px).hypot(y - py));
    }
    best
}

/// Closed-loop simulation of the follower over a timed path. Runs until the
/// goal is reported or `t_max` elapses, logging every step.
pub fn simulate_follow(
    params: &BaseParams,
    gains: BaseGains,
    path: &TimedPath,
    start: BaseState,
    dt: f64,
    t_max: f64,
) -> Result<BaseLog> {
    params.validate()?;
    if !(t_max > 0.0) {
        return Err(Error::InvalidArgument(format!("t_max {t_max} must be > 0")));
    }
    let mut follower = PathFollower::new(gains)?;
    let mut state = start;
    let mut log = BaseLog::default();
    let steps = (t_max / dt).ceil() as usize;
    for k in 0..=steps {
        let t = path.start_time() + k as f64 * dt;
        let cmd = follower.command(&state, path, t, dt)?;
        log.rows.push(BaseLogRow {
            t,
            state,
            ref_x: cmd.reference.x,
            ref_y: cmd.reference.y,
            dist_error: cmd.dist_error,
            heading_error: cmd.heading_error,
        });
        if cmd.at_goal {
            log.reached_goal = true;
            break;
        }
        state = step(&state, cmd.v, cmd.w, dt, params)?;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn params() -> BaseParams {
        BaseParams { wheel_radius: 0.1, track_width: 0.4, v_max: 2.0, w_max: 4.0, a_max: 100.0 }
    }

    /// Composes `n` equal steps; exact-arc updates under constant commands
    /// form a semigroup, so this equals a single arc of length `n * dt`.
    fn run_steps(start: BaseState, v: f64, w: f64, dt: f64, n: usize) -> BaseState {
        let p = params();
        let mut s = start;
        for _ in 0..n {
            s = step(&s, v, w, dt, &p).unwrap();
        }
        s
    }

    #[test]
    fn straight_motion_one_second() {
        let s = run_steps(BaseState::at_pose(0.0, 0.0, 0.0), 1.0, 0.0, 0.05, 20);
        assert!((s.x - 1.0).abs() < 1e-12);
        assert!(s.y.abs() < 1e-12);
        assert!(s.theta.abs() < 1e-12);
    }

    #[test]
    fn turn_in_place_quarter() {
        let s = run_steps(BaseState::at_pose(0.0, 0.0, 0.0), 0.0, FRAC_PI_2, 0.05, 20);
        assert!(s.x.abs() < 1e-12);
        assert!(s.y.abs() < 1e-12);
        assert!((s.theta - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn unit_twist_arc_matches_closed_form() {
        let s = run_steps(BaseState::at_pose(0.0, 0.0, 0.0), 1.0, 1.0, 0.05, 20);
        assert!((s.x - 1.0f64.sin()).abs() < 1e-9, "x {}", s.x);
        assert!((s.y - (1.0 - 1.0f64.cos())).abs() < 1e-9, "y {}", s.y);
        assert!((s.theta - 1.0).abs() < 1e-12);
    }

    #[test]
    fn step_rejects_bad_dt() {
        let p = params();
        let s = BaseState::at_pose(0.0, 0.0, 0.0);
        assert!(step(&s, 1.0, 0.0, 0.0, &p).is_err());
        assert!(step(&s, 1.0, 0.0, 0.06, &p).is_err());
        assert!(step(&s, f64::NAN, 0.0, 0.01, &p).is_err());
    }

    #[test]
    fn saturation_and_rate_limit() {
        let p = BaseParams { wheel_radius: 0.1, track_width: 0.4, v_max: 1.0, w_max: 0.5, a_max: 2.0 };
        let mut s = BaseState::at_pose(0.0, 0.0, 0.0);
        let dt = 0.05;
        for _ in 0..100 {
            let next = step(&s, 100.0, -100.0, dt, &p).unwrap();
            assert!(next.v.abs() <= p.v_max + 1e-12);
            assert!(next.w.abs() <= p.w_max + 1e-12);
            assert!((next.v - s.v).abs() <= p.a_max * dt + 1e-12);
            s = next;
        }
        assert!((s.v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn theta_stays_normalized() {
        let p = params();
        let mut s = BaseState::at_pose(0.0, 0.0, 3.0);
        for _ in 0..500 {
            s = step(&s, 0.3, 3.9, 0.05, &p).unwrap();
            assert!(s.theta > -PI && s.theta <= PI, "theta {}", s.theta);
        }
    }

    #[test]
    fn wheel_speed_examples() {
        let p = params();
        let (l, r) = wheel_speeds(1.0, 0.0, &p);
        assert!((l - 10.0).abs() < 1e-12 && (r - 10.0).abs() < 1e-12);
        let (l, r) = wheel_speeds(0.0, 1.0, &p);
        assert!((l + 2.0).abs() < 1e-12, "left {l}");
        assert!((r - 2.0).abs() < 1e-12, "right {r}");
    }

    #[test]
    fn wheel_speed_roundtrip_exact() {
        let p = params();
        for (v, w) in [(0.0, 0.0), (1.5, -0.7), (-0.4, 2.2), (0.33, 0.77)] {
            let (l, r) = wheel_speeds(v, w, &p);
            let (v2, w2) = body_rates(l, r, &p);
            assert_eq!(v, v2);
            assert!((w - w2).abs() < 1e-15);
        }
    }

    #[test]
    fn residual_zero_for_integrator_steps() {
        let p = params();
        let mut s = BaseState::at_pose(0.2, -0.4, 0.9);
        for k in 0..200 {
            let v = 0.5 + 0.3 * (k as f64 * 0.1).sin();
            let w = 1.2 * (k as f64 * 0.07).cos();
            let next = step(&s, v, w, 0.02, &p).unwrap();
            assert!(constraint_residual(&s, &next) < 1e-9);
            s = next;
        }
    }

    #[test]
    fn residual_detects_lateral_teleport() {
        let a = BaseState::at_pose(0.0, 0.0, 0.0);
        let b = BaseState::at_pose(0.0, 1.0, 0.0);
        assert!((constraint_residual(&a, &b) - 1.0).abs() < 1e-15);
        let c = BaseState::at_pose(1.0, 0.0, 0.0);
        assert!(constraint_residual(&a, &c) < 1e-15);
    }

    fn one_waypoint_path(x: f64, y: f64, heading: f64) -> TimedPath {
        TimedPath::new(vec![
            TimedWaypoint { t: 0.0, x, y, heading },
            TimedWaypoint { t: 1e-6, x, y, heading },
        ])
        .unwrap()
    }

    #[test]
    fn follower_quiet_on_reference() {
        let path = one_waypoint_path(0.0, 0.0, 0.0);
        let mut f = PathFollower::new(BaseGains::default()).unwrap();
        let cmd = f.command(&BaseState::at_pose(0.0, 0.0, 0.0), &path, 0.0, 0.01).unwrap();
        assert!(cmd.v.abs() < 1e-9);
        assert!(cmd.w.abs() < 1e-9);
    }

    #[test]
    fn follower_proportional_straight_ahead() {
        let path = one_waypoint_path(1.0, 0.0, 0.0);
        let gains = BaseGains { kp_dist: 1.0, ki_dist: 0.0, kd_dist: 0.0, kp_head: 0.0, ki_head: 0.0, kd_head: 0.0 };
        let mut f = PathFollower::new(gains).unwrap();
        let cmd = f.command(&BaseState::at_pose(0.0, 0.0, 0.0), &path, 0.0, 0.01).unwrap();
        assert!((cmd.v - 1.0).abs() < 1e-12);
        assert!(cmd.w.abs() < 1e-12);
    }

    #[test]
    fn follower_turns_toward_lateral_reference() {
        let path = one_waypoint_path(0.0, 1.0, 0.0);
        let mut f = PathFollower::new(BaseGains::default()).unwrap();
        let cmd = f.command(&BaseState::at_pose(0.0, 0.0, 0.0), &path, 0.0, 0.01).unwrap();
        assert!(cmd.w > 0.1, "should turn left, w = {}", cmd.w);
        assert!(cmd.v.abs() < 1e-9, "cos(pi/2) kills forward speed, v = {}", cmd.v);
    }

    fn l_shaped_path(leg: f64, speed: f64) -> TimedPath {
        TimedPath::new(vec![
            TimedWaypoint { t: 0.0, x: 0.0, y: 0.0, heading: 0.0 },
            TimedWaypoint { t: leg / speed, x: leg, y: 0.0, heading: FRAC_PI_2 },
            TimedWaypoint { t: 2.0 * leg / speed, x: leg, y: leg, heading: FRAC_PI_2 },
        ])
        .unwrap()
    }

    #[test]
    fn l_shaped_tracking_meets_tolerances() {
        let path = l_shaped_path(3.0, 0.5);
        let p = BaseParams::default();
        let log = simulate_follow(
            &p,
            BaseGains::default(),
            &path,
            BaseState::at_pose(0.0, 0.0, 0.0),
            0.01,
            path.end_time() + 10.0,
        )
        .unwrap();
        assert!(log.reached_goal, "goal not reached");
        let rms = log.rms_cross_track(&path);
        assert!(rms < 0.05, "rms cross-track {rms}");
        let final_err = log.final_position_error(&path);
        assert!(final_err < 0.02, "final error {final_err}");
        assert!(log.max_constraint_residual() < 1e-9);
    }

    #[test]
    fn at_goal_command_is_zero() {
        let path = one_waypoint_path(0.0, 0.0, 0.0);
        let mut f = PathFollower::new(BaseGains::default()).unwrap();
        let cmd = f.command(&BaseState::at_pose(0.001, 0.0, 0.0), &path, 1.0, 0.01).unwrap();
        assert!(cmd.at_goal);
        assert_eq!(cmd.v, 0.0);
        assert_eq!(cmd.w, 0.0);
    }

    #[test]
    fn base_log_csv_header() {
        let path = l_shaped_path(0.5, 0.5);
        let p = BaseParams::default();
        let log = simulate_follow(
            &p,
            BaseGains::default(),
            &path,
            BaseState::at_pose(0.0, 0.0, 0.0),
            0.01,
            5.0,
        )
        .unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x,y,theta,v,w,ref_x,ref_y,e_d,e_theta\n"));
    }

    #[test]
    fn normalize_angle_range() {
        for k in -20..20 {
            let a = k as f64 * 0.7;
            let n = normalize_angle(a);
            assert!(n > -PI && n <= PI);
            assert!(((a - n) / (2.0 * PI)).round() * 2.0 * PI + n - a < 1e-12);
        }
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-15);
    }
}
