//! Pick-and-place orchestration: a finite state machine that sequences base
//! planning, base driving, inverse kinematics, arm trajectory tracking and
//! gripper actuation over a 2D warehouse world. Transitions fire only on
//! events; failure events from any state land in `Failed` with a
//! machine-readable reason.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DVector, Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::config::{self, ConfigError, FrameConfig, Robot, CONFIG_SCHEMA_VERSION};
use crate::control::{track, PidGains, TrackOptions, TrackingLog};
use crate::diffdrive::{simulate_follow, BaseGains, BaseLog, BaseParams, BaseState, normalize_angle};
use crate::grid::{astar, time_parameterize, Cell, Connectivity, GridMap, Heuristic, TimedPath};
use crate::ik::{solve_race, ExecMode, IkRequest, IkStatus};
use crate::kinematics::{forward_kinematics, transform_from_rpy_xyz, JointVector, RigidTransform};
use crate::traj::{default_duration, plan_joint_trajectory, JointTrajectory};

/// Machine-readable failure cause carried by [`TaskState::Failed`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    PathFailed,
    BaseTimeout,
    IkFailed,
    ArmDiverged,
    GraspSlipped,
}

/// States of the pick-and-place machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    CheckStatus,
    PlanBasePath,
    MoveBaseToPick,
    PlanArmToGrasp,
    ExecuteArmTrajectory,
    CloseGripper,
    TuckArm,
    MoveBaseToPlace,
    ExtendArm,
    OpenGripper,
    Done,
    Failed(FailReason),
}

impl TaskState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, TaskState::Done | TaskState::Failed(_))
    }
}

/// Events that drive transitions; nothing else does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskEvent {
    StatusOk,
    PathFound,
    PathFailed,
    BaseArrived,
    BaseTimeout,
    IkSolved,
    IkFailed,
    ArmDone,
    ArmDiverged,
    GraspSecured,
    GraspSlipped,
    ReleaseDone,
}

impl TaskEvent {
    /// Failure events abort the task from any non-terminal state.
    pub fn failure_reason(&self) -> Option<FailReason> {
        match self {
            TaskEvent::PathFailed => Some(FailReason::PathFailed),
            TaskEvent::BaseTimeout => Some(FailReason::BaseTimeout),
            TaskEvent::IkFailed => Some(FailReason::IkFailed),
            TaskEvent::ArmDiverged => Some(FailReason::ArmDiverged),
            TaskEvent::GraspSlipped => Some(FailReason::GraspSlipped),
            _ => None,
        }
    }
}

/// The pure transition table. Terminal states absorb every event; failure
/// events fail from anywhere; any other pairing not in the table leaves the
/// state unchanged and logs a warning.
pub fn transition(state: TaskState, event: TaskEvent) -> TaskState {
    use TaskEvent as E;
    use TaskState as S;
    if state.is_terminal() {
        return state;
    }
    if let Some(reason) = event.failure_reason() {
        return S::Failed(reason);
    }
    match (state, event) {
        (S::CheckStatus, E::StatusOk) => S::PlanBasePath,
        (S::PlanBasePath, E::PathFound) => S::MoveBaseToPick,
        (S::MoveBaseToPick, E::BaseArrived) => S::PlanArmToGrasp,
        (S::PlanArmToGrasp, E::IkSolved) => S::ExecuteArmTrajectory,
        (S::ExecuteArmTrajectory, E::ArmDone) => S::CloseGripper,
        (S::CloseGripper, E::GraspSecured) => S::TuckArm,
        (S::TuckArm, E::ArmDone) => S::MoveBaseToPlace,
        (S::MoveBaseToPlace, E::BaseArrived) => S::ExtendArm,
        (S::ExtendArm, E::ArmDone) => S::OpenGripper,
        (S::OpenGripper, E::ReleaseDone) => S::Done,
        (state, event) => {
            log::warn!("ignoring event {event:?} in state {state:?}");
            state
        }
    }
}

/// Object between the gripper fingers.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ObjectParams {
    /// Object width, meters.
    pub width: f64,
    /// Squeeze force needed to hold it, newtons.
    pub required_effort: f64,
}

/// Gripper actuator parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GripperParams {
    pub max_opening: f64,
    /// Effort bound sent with close commands, newtons.
    pub command_effort: f64,
}

/// Gripper finger state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GripperState {
    pub opening: f64,
    pub applied_effort: f64,
    pub holding: bool,
}

impl GripperState {
    pub fn open(params: &GripperParams) -> Self {
        Self { opening: params.max_opening, applied_effort: 0.0, holding: false }
    }
}

/// Position-and-effort gripper command. Closing onto an object stops the
/// fingers at the object width with the commanded effort applied; the grasp
/// holds exactly when that effort meets the object's requirement. Opening
/// past the object releases it.
pub fn gripper_command(
    state: &GripperState,
    target_opening: f64,
    max_effort: f64,
    object: Option<&ObjectParams>,
    params: &GripperParams,
) -> GripperState {
    let _ = state;
    let target = target_opening.clamp(0.0, params.max_opening);
    let effort = max_effort.max(0.0);
    match object {
        Some(obj) if target < obj.width => GripperState {
            opening: obj.width,
            applied_effort: effort,
            holding: effort >= obj.required_effort,
        },
        _ => GripperState { opening: target, applied_effort: 0.0, holding: false },
    }
}

/// A fully resolved scenario: all referenced files loaded and validated.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub robot: Robot,
    pub map: GridMap,
    pub base_start: [f64; 3],
    pub base_goal_pick: [f64; 3],
    pub base_goal_place: [f64; 3],
    pub pick_pose: RigidTransform,
    pub place_pose: RigidTransform,
    pub tuck: JointVector,
    pub object: ObjectParams,
    pub gripper: GripperParams,
    pub base_params: BaseParams,
    pub base_speed: f64,
    pub base_gains: BaseGains,
    pub arm_gains: PidGains,
    pub ik_budget: f64,
    pub seed: u64,
}

/// Serde mirror of the scenario file; `robot` and `map` are paths relative
/// to the scenario file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub robot: String,
    pub map: String,
    pub base_start: [f64; 3],
    pub base_goal_pick: [f64; 3],
    pub base_goal_place: [f64; 3],
    pub pick_pose: FrameConfig,
    pub place_pose: FrameConfig,
    pub tuck: Vec<f64>,
    pub object: ObjectParams,
    pub gripper: GripperParams,
    #[serde(default)]
    pub base_params: BaseParams,
    #[serde(default = "default_speed")]
    pub base_speed: f64,
    #[serde(default)]
    pub base_gains: BaseGains,
    pub arm_gains: ArmGainsConfig,
    #[serde(default = "default_ik_budget")]
    pub ik_budget: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmGainsConfig {
    pub kp: Vec<f64>,
    pub kv: Vec<f64>,
    pub ki: Vec<f64>,
    pub integral_limit: Vec<f64>,
}

fn default_schema() -> u32 {
    CONFIG_SCHEMA_VERSION
}

fn default_speed() -> f64 {
    0.5
}

fn default_ik_budget() -> f64 {
    0.05
}

impl Scenario {
    /// Loads a scenario file, resolving and loading the robot and map files
    /// relative to it, then validates the whole bundle.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let config: ScenarioConfig = serde_json::from_str(&text)
            .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), detail: e.to_string() })?;
        if config.schema != CONFIG_SCHEMA_VERSION {
            return Err(ConfigError::Schema {
                path: path.to_path_buf(),
                found: config.schema,
                expected: CONFIG_SCHEMA_VERSION,
            });
        }
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let robot = config::load_robot(dir.join(&config.robot))?;
        let map = config::load_map(dir.join(&config.map))?;
        let invalid = |detail: String| ConfigError::Invalid { path: path.to_path_buf(), detail };

        let arm_gains = PidGains::new(
            config.arm_gains.kp.clone(),
            config.arm_gains.kv.clone(),
            config.arm_gains.ki.clone(),
            config.arm_gains.integral_limit.clone(),
        )
        .map_err(|e| invalid(e.to_string()))?;
        let scenario = Scenario {
            robot,
            map,
            base_start: config.base_start,
            base_goal_pick: config.base_goal_pick,
            base_goal_place: config.base_goal_place,
            pick_pose: transform_from_rpy_xyz(config.pick_pose.rpy, config.pick_pose.xyz),
            place_pose: transform_from_rpy_xyz(config.place_pose.rpy, config.place_pose.xyz),
            tuck: DVector::from_vec(config.tuck.clone()),
            object: config.object,
            gripper: config.gripper,
            base_params: config.base_params,
            base_speed: config.base_speed,
            base_gains: config.base_gains,
            arm_gains,
            ik_budget: config.ik_budget,
            seed: config.seed,
        };
        scenario.validate().map_err(invalid)?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), String> {
        let n = self.robot.dof();
        if self.tuck.len() != n {
            return Err(format!("tuck pose has {} joints, robot has {n}", self.tuck.len()));
        }
        if !self.robot.chain().within_limits(&self.tuck) {
            return Err("tuck pose violates joint limits".into());
        }
        if self.arm_gains.dof() != n {
            return Err("arm gain vectors must match the robot's joint count".into());
        }
        self.base_params.validate().map_err(|e| e.to_string())?;
        self.base_gains.validate().map_err(|e| e.to_string())?;
        if !(self.base_speed > 0.0) {
            return Err("base speed must be > 0".into());
        }
        if !(self.ik_budget > 0.0) {
            return Err("ik budget must be > 0".into());
        }
        if self.object.width >= self.gripper.max_opening {
            return Err("object width must be smaller than the gripper opening".into());
        }
        if !(self.object.width > 0.0 && self.object.required_effort >= 0.0) {
            return Err("object parameters must be positive".into());
        }
        let in_bounds = |x: f64, y: f64| self.map.world_to_cell(x, y).is_some();
        for (name, p) in [
            ("base_start", &self.base_start),
            ("base_goal_pick", &self.base_goal_pick),
            ("base_goal_place", &self.base_goal_place),
        ] {
            if !in_bounds(p[0], p[1]) {
                return Err(format!("{name} ({}, {}) outside the map", p[0], p[1]));
            }
        }
        for (name, pose) in [("pick_pose", &self.pick_pose), ("place_pose", &self.place_pose)] {
            let t = pose.translation.vector;
            if !in_bounds(t.x, t.y) {
                return Err(format!("{name} ({}, {}) outside the map", t.x, t.y));
            }
        }
        Ok(())
    }
}

/// One transition in the report's event trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub from: TaskState,
    pub event: TaskEvent,
    pub to: TaskState,
}

/// Per-phase summary: simulated duration plus scalar metrics.
#[derive(Debug, Clone, Serialize)]
pub struct PhaseSummary {
    pub name: String,
    pub sim_time: f64,
    pub metrics: BTreeMap<String, f64>,
}

/// Bulky per-phase logs; written to CSV files by the CLI, not serialized
/// into the report JSON.
#[derive(Debug, Clone, Default)]
pub struct TaskArtifacts {
    pub pick_path: Option<TimedPath>,
    pub place_path: Option<TimedPath>,
    pub pick_drive: Option<BaseLog>,
    pub place_drive: Option<BaseLog>,
    pub grasp_tracking: Option<TrackingLog>,
    pub tuck_tracking: Option<TrackingLog>,
    pub extend_tracking: Option<TrackingLog>,
}

/// Complete record of a scenario run. Serializes to the deterministic
/// report JSON; the artifacts ride along in memory only.
#[derive(Debug, Clone, Serialize)]
pub struct TaskReport {
    pub final_state: TaskState,
    pub seed: u64,
    /// Total simulated (not wall-clock) seconds.
    pub sim_time: f64,
    pub event_trace: Vec<TraceEntry>,
    pub phases: Vec<PhaseSummary>,
    #[serde(skip)]
    pub artifacts: TaskArtifacts,
}

/// The happy-path event sequence of a successful run.
pub const HAPPY_PATH: [TaskEvent; 10] = [
    TaskEvent::StatusOk,
    TaskEvent::PathFound,
    TaskEvent::BaseArrived,
    TaskEvent::IkSolved,
    TaskEvent::ArmDone,
    TaskEvent::GraspSecured,
    TaskEvent::ArmDone,
    TaskEvent::BaseArrived,
    TaskEvent::ArmDone,
    TaskEvent::ReleaseDone,
];

const BASE_DT: f64 = 0.01;
const ARM_DT: f64 = 1e-3;
const BASE_TIMEOUT: f64 = 120.0;
const ARRIVE_POS: f64 = 0.05;
const ARRIVE_HEADING: f64 = 0.1;
/// Simulated seconds charged per gripper actuation.
const GRIPPER_TIME: f64 = 0.5;

fn planar_pose(x: f64, y: f64, theta: f64) -> RigidTransform {
    Isometry3::from_parts(
        Translation3::new(x, y, 0.0),
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), theta),
    )
}

struct Runner<'a> {
    scenario: &'a Scenario,
    state: TaskState,
    trace: Vec<TraceEntry>,
    phases: Vec<PhaseSummary>,
    sim_time: f64,
    base: BaseState,
    arm_q: JointVector,
    gripper: GripperState,
    artifacts: TaskArtifacts,
    /// Pending trajectory handed from a planning state to an execution
    /// state.
    pending_traj: Option<JointTrajectory>,
    pending_path: Option<TimedPath>,
}

impl<'a> Runner<'a> {
    fn fire(&mut self, event: TaskEvent) {
        let from = self.state;
        let to = transition(from, event);
        self.trace.push(TraceEntry { from, event, to });
        self.state = to;
    }

    fn phase(&mut self, name: &str, sim_time: f64, metrics: BTreeMap<String, f64>) {
        self.sim_time += sim_time;
        self.phases.push(PhaseSummary { name: name.to_string(), sim_time, metrics });
    }

    /// World transform of the arm root with the base at its current pose.
    fn arm_base(&self) -> RigidTransform {
        planar_pose(self.base.x, self.base.y, self.base.theta)
            * self.scenario.robot.chain().base_frame()
    }

    fn plan_base_path(&mut self, goal: [f64; 3]) -> Result<TimedPath, ()> {
        let map = &self.scenario.map;
        let start = map.world_to_cell(self.base.x, self.base.y).filter(|c| map.is_free(*c));
        let goal_cell = map.world_to_cell(goal[0], goal[1]).filter(|c| map.is_free(*c));
        let (start, goal_cell) = match (start, goal_cell) {
            (Some(s), Some(g)) => (s, g),
            _ => return Err(()),
        };
        let plan = match astar(map, start, goal_cell, Connectivity::Eight, Heuristic::Euclidean) {
            Ok(p) if p.found => p,
            _ => return Err(()),
        };
        let mut metrics = BTreeMap::new();
        metrics.insert("cost_cells".into(), plan.cost);
        metrics.insert("nodes_expanded".into(), plan.nodes_expanded as f64);
        metrics.insert("path_cells".into(), plan.path.len() as f64);
        self.phases.push(PhaseSummary {
            name: "plan_base".into(),
            sim_time: 0.0,
            metrics,
        });
        let timed = time_parameterize(&plan, map, self.scenario.base_speed).map_err(|_| ())?;
        // The planned polyline ends on the goal cell center; extend it to
        // the exact goal pose so the arrival thresholds are reachable.
        let mut points = timed.waypoints().to_vec();
        let last = *points.last().expect("timed path is non-empty");
        let gap = (goal[0] - last.x).hypot(goal[1] - last.y);
        if gap > 1e-9 {
            let approach = (goal[1] - last.y).atan2(goal[0] - last.x);
            points.last_mut().expect("non-empty").heading = approach;
            points.push(crate::grid::TimedWaypoint {
                t: last.t + gap / self.scenario.base_speed,
                x: goal[0],
                y: goal[1],
                heading: goal[2],
            });
        } else {
            points.last_mut().expect("non-empty").heading = goal[2];
        }
        TimedPath::new(points).map_err(|_| ())
    }

    /// Drives the base along a timed path; returns true on arrival at the
    /// goal pose within the task thresholds.
    fn drive_base(&mut self, name: &str, path: &TimedPath, goal: [f64; 3]) -> bool {
        let log = match simulate_follow(
            &self.scenario.base_params,
            self.scenario.base_gains,
            path,
            self.base,
            BASE_DT,
            path.end_time() + BASE_TIMEOUT,
        ) {
            Ok(log) => log,
            Err(_) => return false,
        };
        let duration = log.rows.last().map_or(0.0, |r| r.t);
        if let Some(last) = log.rows.last() {
            self.base = last.state;
        }
        let pos_err = (self.base.x - goal[0]).hypot(self.base.y - goal[1]);
        let heading_err = normalize_angle(self.base.theta - goal[2]).abs();
        let arrived = log.reached_goal && pos_err <= ARRIVE_POS && heading_err <= ARRIVE_HEADING;
        let mut metrics = BTreeMap::new();
        metrics.insert("rms_cross_track".into(), log.rms_cross_track(path));
        metrics.insert("final_pos_error".into(), pos_err);
        metrics.insert("final_heading_error".into(), heading_err);
        metrics.insert("max_nonholonomic_residual".into(), log.max_constraint_residual());
        self.phase(name, duration, metrics);
        if name == "drive_to_pick" {
            self.artifacts.pick_drive = Some(log);
        } else {
            self.artifacts.place_drive = Some(log);
        }
        arrived
    }

    /// IK to `target` from the current arm configuration, then a quintic
    /// plan to the solution. Returns the trajectory and solve metrics.
    fn plan_arm(&mut self, name: &str, target: &RigidTransform) -> Option<JointTrajectory> {
        let robot = &self.scenario.robot;
        let chain = robot.chain().with_base_frame(self.arm_base());
        let req = IkRequest::new(*target, self.arm_q.clone(), self.scenario.ik_budget);
        let result = match solve_race(&chain, &req, self.scenario.seed, ExecMode::Sequential) {
            Ok(r) => r,
            Err(_) => return None,
        };
        let mut metrics = BTreeMap::new();
        metrics.insert("ik_iterations".into(), result.iterations as f64);
        metrics.insert("ik_restarts".into(), result.restarts as f64);
        metrics.insert(
            "ik_converged".into(),
            if result.status == IkStatus::Converged { 1.0 } else { 0.0 },
        );
        let goal = match (result.status, result.solution) {
            (IkStatus::Converged, Some(q)) => q,
            _ => {
                self.phases.push(PhaseSummary { name: name.into(), sim_time: 0.0, metrics });
                return None;
            }
        };
        let duration = default_duration(&self.arm_q, &goal, &robot.velocity_limits);
        let traj = plan_joint_trajectory(
            &chain,
            &self.arm_q,
            &goal,
            duration,
            &robot.velocity_limits,
            &robot.acceleration_limits,
        );
        match traj {
            Ok(t) => {
                metrics.insert("traj_duration".into(), t.duration());
                self.phases.push(PhaseSummary { name: name.into(), sim_time: 0.0, metrics });
                Some(t)
            }
            Err(_) => {
                self.phases.push(PhaseSummary { name: name.into(), sim_time: 0.0, metrics });
                None
            }
        }
    }

    /// Tracks a trajectory with the dynamics rebased at the current base
    /// pose. Returns the log on completion.
    fn run_arm(&mut self, name: &str, traj: &JointTrajectory) -> Option<TrackingLog> {
        let robot = &self.scenario.robot;
        let model = robot.model.with_base_frame(self.arm_base());
        let opts = TrackOptions {
            gravity_comp: true,
            effort_limits: Some(robot.effort_limits.clone()),
        };
        match track(&model, traj, &self.scenario.arm_gains, ARM_DT, &opts) {
            Ok(log) => {
                if let Some(last) = log.samples.last() {
                    self.arm_q = last.q_act.clone();
                }
                let mut metrics = BTreeMap::new();
                let max_err = log.max_abs_error();
                metrics.insert("max_joint_error".into(), max_err.max());
                metrics.insert("saturation_events".into(), log.saturation_events as f64);
                self.phase(name, traj.duration(), metrics);
                Some(log)
            }
            Err(_) => None,
        }
    }
}

/// Executes the scenario end to end. All failures surface as a `Failed`
/// final state in the report; the function itself does not error.
pub fn run_scenario(scenario: &Scenario) -> TaskReport {
    let mut runner = Runner {
        scenario,
        state: TaskState::CheckStatus,
        trace: Vec::new(),
        phases: Vec::new(),
        sim_time: 0.0,
        base: BaseState::at_pose(
            scenario.base_start[0],
            scenario.base_start[1],
            scenario.base_start[2],
        ),
        arm_q: scenario.tuck.clone(),
        gripper: GripperState::open(&scenario.gripper),
        artifacts: TaskArtifacts::default(),
        pending_traj: None,
        pending_path: None,
    };

    while !runner.state.is_terminal() {
        match runner.state {
            TaskState::CheckStatus => {
                // The scenario was validated at load time and the robot
                // state is initialized; report readiness.
                runner.fire(TaskEvent::StatusOk);
            }
            TaskState::PlanBasePath => match runner.plan_base_path(scenario.base_goal_pick) {
                Ok(path) => {
                    runner.artifacts.pick_path = Some(path.clone());
                    runner.pending_path = Some(path);
                    runner.fire(TaskEvent::PathFound);
                }
                Err(()) => runner.fire(TaskEvent::PathFailed),
            },
            TaskState::MoveBaseToPick => {
                let path = runner.pending_path.take().expect("path planned before driving");
                if runner.drive_base("drive_to_pick", &path, scenario.base_goal_pick) {
                    runner.fire(TaskEvent::BaseArrived);
                } else {
                    runner.fire(TaskEvent::BaseTimeout);
                }
            }
            TaskState::PlanArmToGrasp => match runner.plan_arm("plan_grasp", &scenario.pick_pose)
            {
                Some(traj) => {
                    runner.pending_traj = Some(traj);
                    runner.fire(TaskEvent::IkSolved);
                }
                None => runner.fire(TaskEvent::IkFailed),
            },
            TaskState::ExecuteArmTrajectory => {
                let traj = runner.pending_traj.take().expect("trajectory planned");
                match runner.run_arm("reach_grasp", &traj) {
                    Some(log) => {
                        runner.artifacts.grasp_tracking = Some(log);
                        runner.fire(TaskEvent::ArmDone);
                    }
                    None => runner.fire(TaskEvent::ArmDiverged),
                }
            }
            TaskState::CloseGripper => {
                runner.gripper = gripper_command(
                    &runner.gripper,
                    0.0,
                    scenario.gripper.command_effort,
                    Some(&scenario.object),
                    &scenario.gripper,
                );
                let mut metrics = BTreeMap::new();
                metrics.insert("opening".into(), runner.gripper.opening);
                metrics.insert("applied_effort".into(), runner.gripper.applied_effort);
                runner.phase("close_gripper", GRIPPER_TIME, metrics);
                if runner.gripper.holding {
                    runner.fire(TaskEvent::GraspSecured);
                } else {
                    runner.fire(TaskEvent::GraspSlipped);
                }
            }
            TaskState::TuckArm => {
                let robot = &scenario.robot;
                let chain = robot.chain().with_base_frame(runner.arm_base());
                let duration =
                    default_duration(&runner.arm_q, &scenario.tuck, &robot.velocity_limits);
                let traj = plan_joint_trajectory(
                    &chain,
                    &runner.arm_q,
                    &scenario.tuck,
                    duration,
                    &robot.velocity_limits,
                    &robot.acceleration_limits,
                );
                match traj {
                    Ok(traj) => match runner.run_arm("tuck_arm", &traj) {
                        Some(log) => {
                            runner.artifacts.tuck_tracking = Some(log);
                            runner.fire(TaskEvent::ArmDone);
                        }
                        None => runner.fire(TaskEvent::ArmDiverged),
                    },
                    Err(_) => runner.fire(TaskEvent::ArmDiverged),
                }
            }
            TaskState::MoveBaseToPlace => {
                match runner.plan_base_path(scenario.base_goal_place) {
                    Ok(path) => {
                        runner.artifacts.place_path = Some(path.clone());
                        if runner.drive_base("drive_to_place", &path, scenario.base_goal_place) {
                            runner.fire(TaskEvent::BaseArrived);
                        } else {
                            runner.fire(TaskEvent::BaseTimeout);
                        }
                    }
                    Err(()) => runner.fire(TaskEvent::PathFailed),
                }
            }
            TaskState::ExtendArm => match runner.plan_arm("plan_place", &scenario.place_pose) {
                Some(traj) => match runner.run_arm("extend_arm", &traj) {
                    Some(log) => {
                        runner.artifacts.extend_tracking = Some(log);
                        runner.fire(TaskEvent::ArmDone);
                    }
                    None => runner.fire(TaskEvent::ArmDiverged),
                },
                None => runner.fire(TaskEvent::IkFailed),
            },
            TaskState::OpenGripper => {
                runner.gripper = gripper_command(
                    &runner.gripper,
                    scenario.gripper.max_opening,
                    0.0,
                    Some(&scenario.object),
                    &scenario.gripper,
                );
                let mut metrics = BTreeMap::new();
                metrics.insert("opening".into(), runner.gripper.opening);
                runner.phase("open_gripper", GRIPPER_TIME, metrics);
                runner.fire(TaskEvent::ReleaseDone);
            }
            TaskState::Done | TaskState::Failed(_) => unreachable!("loop exits on terminal"),
        }
    }

    TaskReport {
        final_state: runner.state,
        seed: scenario.seed,
        sim_time: runner.sim_time,
        event_trace: runner.trace,
        phases: runner.phases,
        artifacts: runner.artifacts,
    }
}
