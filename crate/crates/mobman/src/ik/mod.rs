//! Inverse kinematics through two racing strategies: damped-pseudoinverse
//! iteration with random restarts, and a joint-movement-minimizing
//! Gauss-Newton solver constrained by a sum-of-squares Cartesian error
//! metric. A race runs both under one budget and returns the first
//! converged solution.
//!
//! Determinism: every random restart draws from a ChaCha stream derived
//! from the caller's seed (stream 0 for the pseudoinverse solver, stream 1
//! for the SQP-SS solver, both in races and standalone), and
//! [`ExecMode::Sequential`] replaces the wall clock with an iteration
//! budget, so identical inputs reproduce identical results bit for bit.

mod pinv;
mod sqp;

use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use serde::Serialize;

use crate::kinematics::{
    damped_pseudoinverse, forward_kinematics, JointVector, KinematicChain, RigidTransform,
};
use crate::{Error, Result};

pub(crate) use pinv::PinvSolver;
pub(crate) use sqp::SqpSolver;

/// Iteration budget per second of time budget in [`ExecMode::Sequential`]:
/// the logical clock assumes a nominal 50 us per solver iteration.
pub const SEQUENTIAL_ITERS_PER_SECOND: f64 = 20_000.0;

/// Damping applied to the pseudoinverse near singularities.
pub(crate) const SINGULARITY_DAMPING: f64 = 1e-3;
/// Manipulability below which the damped pseudoinverse kicks in.
pub(crate) const MANIPULABILITY_FLOOR: f64 = 1e-6;
/// Progress smaller than this over a ten-iteration window counts as a local
/// minimum and triggers a random restart.
pub(crate) const STALL_PROGRESS: f64 = 1e-12;
pub(crate) const STALL_WINDOW: u64 = 10;
/// Backtracking line search: halve up to twenty times.
pub(crate) const BACKTRACK_FACTOR: f64 = 0.5;
pub(crate) const BACKTRACK_LIMIT: u32 = 20;

/// One inverse-kinematics query.
#[derive(Debug, Clone)]
pub struct IkRequest {
    pub target: RigidTransform,
    pub seed: JointVector,
    /// Time budget, seconds.
    pub time_budget: f64,
    /// Position tolerance, meters.
    pub pos_tol: f64,
    /// Orientation tolerance, radians.
    pub rot_tol: f64,
}

impl IkRequest {
    pub fn new(target: RigidTransform, seed: JointVector, time_budget: f64) -> Self {
        Self { target, seed, time_budget, pos_tol: 1e-4, rot_tol: 1e-3 }
    }

    fn validate(&self, chain: &KinematicChain) -> Result<()> {
        if self.seed.len() != chain.dof() {
            return Err(Error::InvalidArgument(format!(
                "seed has {} entries, chain has {} joints",
                self.seed.len(),
                chain.dof()
            )));
        }
        if !(self.time_budget > 0.0 && self.time_budget.is_finite()) {
            return Err(Error::InvalidArgument("time budget must be > 0".into()));
        }
        if !(self.pos_tol > 0.0 && self.rot_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be > 0".into()));
        }
        Ok(())
    }
}

/// Outcome classification of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IkStatus {
    Converged,
    TimedOut,
    Unreachable,
}

/// Which strategy produced the result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Pseudoinverse,
    SqpSs,
}

/// Result of an inverse-kinematics solve. `solution` is present exactly
/// when `status` is [`IkStatus::Converged`] and then always lies within the
/// joint limits.
#[derive(Debug, Clone, PartialEq)]
pub struct IkResult {
    pub solution: Option<JointVector>,
    pub status: IkStatus,
    pub solver: SolverKind,
    pub iterations: u64,
    pub restarts: u64,
    /// Seconds: wall clock in threaded mode, the iteration-derived logical
    /// clock in sequential mode.
    pub elapsed: f64,
}

impl Serialize for IkResult {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("IkResult", 6)?;
        st.serialize_field("status", &self.status)?;
        st.serialize_field("solver", &self.solver)?;
        st.serialize_field(
            "solution",
            &self.solution.as_ref().map(|q| q.iter().copied().collect::<Vec<f64>>()),
        )?;
        st.serialize_field("iterations", &self.iterations)?;
        st.serialize_field("restarts", &self.restarts)?;
        st.serialize_field("elapsed", &self.elapsed)?;
        st.end()
    }
}

/// How solvers consume their budget and how the race schedules them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    /// Deterministic: iteration budget only, interleaved single-thread race.
    Sequential,
    /// Wall-clock budget; the race runs two OS threads with a shared
    /// cancellation flag.
    Threaded,
}

/// Six-vector pose error: translation difference stacked over the
/// axis-angle of the relative rotation `R_cur^T R_tgt` (body frame). Zero
/// exactly when the poses coincide.
pub fn pose_error(current: &RigidTransform, target: &RigidTransform) -> Vector6<f64> {
    let dp = target.translation.vector - current.translation.vector;
    let ang = (current.rotation.inverse() * target.rotation).scaled_axis();
    Vector6::new(dp.x, dp.y, dp.z, ang.x, ang.y, ang.z)
}

/// Sum-of-squares error metric over a pose-error vector.
pub fn ss_metric(p_err: &Vector6<f64>) -> f64 {
    p_err.norm_squared()
}

/// Splits a pose error into its position and rotation magnitudes.
pub(crate) fn error_magnitudes(e: &Vector6<f64>) -> (f64, f64) {
    (e.fixed_rows::<3>(0).norm(), e.fixed_rows::<3>(3).norm())
}

pub(crate) fn within_tolerance(e: &Vector6<f64>, req: &IkRequest) -> bool {
    let (pos, rot) = error_magnitudes(e);
    pos <= req.pos_tol && rot <= req.rot_tol
}

/// Pose error with the angular block rotated into the world frame, matching
/// the geometric Jacobian's angular rows for Newton updates.
pub(crate) fn world_frame_error(current: &RigidTransform, e: &Vector6<f64>) -> Vector6<f64> {
    let ang_world = current.rotation * Vector3::new(e[3], e[4], e[5]);
    Vector6::new(e[0], e[1], e[2], ang_world.x, ang_world.y, ang_world.z)
}

pub(crate) fn end_effector(chain: &KinematicChain, q: &JointVector) -> RigidTransform {
    *forward_kinematics(chain, q).expect("dimensions validated").last().expect("non-empty chain")
}

/// Yoshikawa manipulability `sqrt(det(J J^T))`; zero at singularities and
/// for chains with fewer than six joints.
pub(crate) fn manipulability(j: &DMatrix<f64>) -> f64 {
    (j * j.transpose()).determinant().max(0.0).sqrt()
}

/// Damped pseudoinverse with automatic damping selection near
/// singularities.
pub(crate) fn adaptive_pinv(j: &DMatrix<f64>) -> DMatrix<f64> {
    let lambda =
        if manipulability(j) < MANIPULABILITY_FLOOR { SINGULARITY_DAMPING } else { 0.0 };
    match damped_pseudoinverse(j, lambda) {
        Ok(p) => p,
        // Borderline conditioning: retry damped, which cannot fail.
        Err(_) => damped_pseudoinverse(j, SINGULARITY_DAMPING).expect("damped gram is SPD"),
    }
}

/// Reachability prefilter: targets farther from the arm base than the total
/// chain reach cannot be solved and are rejected before any iteration.
pub(crate) fn reachable(chain: &KinematicChain, target: &RigidTransform) -> bool {
    let base = chain.base_frame().translation.vector;
    (target.translation.vector - base).norm() <= chain.max_reach()
}

/// Marks joints pinned at a limit whose step component pushes further out;
/// their Jacobian columns are zeroed so the recomputed step stays feasible
/// instead of being destroyed by the clamp. Returns true if anything was
/// masked.
pub(crate) fn mask_blocked_joints(
    chain: &KinematicChain,
    q: &JointVector,
    step: &DVector<f64>,
    j: &mut DMatrix<f64>,
    blocked: &mut [bool],
) -> bool {
    let mut changed = false;
    for (i, lim) in chain.limits().iter().enumerate() {
        if blocked[i] {
            continue;
        }
        let span = lim.max - lim.min;
        let eps = 1e-9 * span.max(1.0);
        let pushing_out = (q[i] <= lim.min + eps && step[i] < 0.0)
            || (q[i] >= lim.max - eps && step[i] > 0.0);
        if pushing_out {
            blocked[i] = true;
            j.column_mut(i).fill(0.0);
            changed = true;
        }
    }
    changed
}

fn unreachable_result(solver: SolverKind) -> IkResult {
    IkResult {
        solution: None,
        status: IkStatus::Unreachable,
        solver,
        iterations: 0,
        restarts: 0,
        elapsed: 0.0,
    }
}

/// Budget enforcement shared by the drivers.
struct Budget {
    deadline: Option<std::time::Instant>,
    iteration_cap: u64,
    started: std::time::Instant,
}

impl Budget {
    fn new(time_budget: f64, mode: ExecMode) -> Self {
        let started = std::time::Instant::now();
        let iteration_cap = (time_budget * SEQUENTIAL_ITERS_PER_SECOND) as u64;
        match mode {
            ExecMode::Sequential => Self { deadline: None, iteration_cap, started },
            ExecMode::Threaded => Self {
                deadline: Some(started + std::time::Duration::from_secs_f64(time_budget)),
                // Generous safety net so a stuck wall clock cannot spin
                // forever in tests.
                iteration_cap: iteration_cap.saturating_mul(1000).max(1_000_000),
                started,
            },
        }
    }

    fn exhausted(&self, iterations: u64) -> bool {
        if iterations >= self.iteration_cap {
            return true;
        }
        match self.deadline {
            Some(d) => std::time::Instant::now() >= d,
            None => false,
        }
    }

    /// Elapsed seconds to report: logical in sequential mode, wall clock in
    /// threaded mode.
    fn elapsed(&self, iterations: u64) -> f64 {
        match self.deadline {
            None => iterations as f64 / SEQUENTIAL_ITERS_PER_SECOND,
            Some(_) => self.started.elapsed().as_secs_f64(),
        }
    }
}

/// Iterative damped-pseudoinverse IK with random-seed restarts on local
/// minima. Returns at the first iterate meeting both tolerances.
pub fn solve_pinv(
    chain: &KinematicChain,
    req: &IkRequest,
    rng_seed: u64,
    mode: ExecMode,
) -> Result<IkResult> {
    req.validate(chain)?;
    if !reachable(chain, &req.target) {
        return Ok(unreachable_result(SolverKind::Pseudoinverse));
    }
    let budget = Budget::new(req.time_budget, mode);
    let mut solver = PinvSolver::new(chain, req, rng_seed);
    loop {
        if solver.try_converge() {
            break;
        }
        if budget.exhausted(solver.iterations()) {
            break;
        }
        solver.iterate();
    }
    let elapsed = budget.elapsed(solver.iterations());
    Ok(solver.into_result(elapsed))
}

/// SQP-style solve: minimizes the joint displacement from the seed subject
/// to joint limits and the sum-of-squares pose error constraint. Among the
/// converged candidates found within the budget the one closest to the seed
/// is returned.
pub fn solve_sqp_ss(
    chain: &KinematicChain,
    req: &IkRequest,
    rng_seed: u64,
    mode: ExecMode,
) -> Result<IkResult> {
    req.validate(chain)?;
    if !reachable(chain, &req.target) {
        return Ok(unreachable_result(SolverKind::SqpSs));
    }
    let budget = Budget::new(req.time_budget, mode);
    let mut solver = SqpSolver::new(chain, req, rng_seed);
    loop {
        solver.try_converge();
        if solver.finished() || budget.exhausted(solver.iterations()) {
            break;
        }
        solver.iterate();
    }
    let elapsed = budget.elapsed(solver.iterations());
    Ok(solver.into_result(elapsed))
}

/// Number of iterations one racer runs before yielding to the other in
/// sequential mode.
const RACE_SLICE: u64 = 8;

/// Races both strategies under one budget and returns the first converged
/// result; the losing worker is signaled to stop. If neither converges the
/// result with the smaller final sum-of-squares metric is returned, tagged
/// timed out. Sequential mode gives each logically-concurrent worker its
/// own full iteration budget and interleaves them deterministically.
pub fn solve_race(
    chain: &KinematicChain,
    req: &IkRequest,
    rng_seed: u64,
    mode: ExecMode,
) -> Result<IkResult> {
    req.validate(chain)?;
    if !reachable(chain, &req.target) {
        return Ok(unreachable_result(SolverKind::Pseudoinverse));
    }
    match mode {
        ExecMode::Sequential => race_sequential(chain, req, rng_seed),
        ExecMode::Threaded => race_threaded(chain, req, rng_seed),
    }
}

enum RaceOutcome {
    PinvWon,
    SqpWon,
    Exhausted,
}

fn race_sequential(chain: &KinematicChain, req: &IkRequest, rng_seed: u64) -> Result<IkResult> {
    let budget = Budget::new(req.time_budget, ExecMode::Sequential);
    let mut pinv = PinvSolver::new(chain, req, rng_seed);
    let mut sqp = SqpSolver::new(chain, req, rng_seed);
    let mut pinv_alive = true;
    let mut sqp_alive = true;
    let outcome = 'race: loop {
        if !pinv_alive && !sqp_alive {
            break RaceOutcome::Exhausted;
        }
        if pinv_alive {
            for _ in 0..RACE_SLICE {
                if pinv.try_converge() {
                    break 'race RaceOutcome::PinvWon;
                }
                if budget.exhausted(pinv.iterations()) {
                    pinv_alive = false;
                    break;
                }
                pinv.iterate();
            }
        }
        if sqp_alive {
            for _ in 0..RACE_SLICE {
                // The first converged candidate wins the race.
                if sqp.try_converge() {
                    break 'race RaceOutcome::SqpWon;
                }
                if sqp.finished() || budget.exhausted(sqp.iterations()) {
                    sqp_alive = false;
                    break;
                }
                sqp.iterate();
            }
        }
    };
    Ok(match outcome {
        RaceOutcome::PinvWon => {
            let elapsed = budget.elapsed(pinv.iterations());
            pinv.into_result(elapsed)
        }
        RaceOutcome::SqpWon => {
            let elapsed = budget.elapsed(sqp.iterations());
            sqp.into_result(elapsed)
        }
        // Neither converged: report the worker that got closer.
        RaceOutcome::Exhausted => timed_out_choice(
            pinv.best_metric(),
            sqp.best_metric(),
            pinv.into_result(req.time_budget),
            sqp.into_result(req.time_budget),
        ),
    })
}

fn race_threaded(chain: &KinematicChain, req: &IkRequest, rng_seed: u64) -> Result<IkResult> {
    use std::sync::atomic::{AtomicBool, Ordering};
    use std::sync::Mutex;

    let cancel = AtomicBool::new(false);
    let winner: Mutex<Option<IkResult>> = Mutex::new(None);
    let started = std::time::Instant::now();

    enum WorkerEnd {
        Converged,
        GaveUp,
    }

    let (pinv_loss, sqp_loss) = std::thread::scope(|scope| {
        let pinv_handle = scope.spawn(|| {
            let budget = Budget::new(req.time_budget, ExecMode::Threaded);
            let mut solver = PinvSolver::new(chain, req, rng_seed);
            let end = loop {
                if cancel.load(Ordering::Relaxed) {
                    break WorkerEnd::GaveUp;
                }
                if solver.try_converge() {
                    break WorkerEnd::Converged;
                }
                if budget.exhausted(solver.iterations()) {
                    break WorkerEnd::GaveUp;
                }
                solver.iterate();
            };
            let metric = solver.best_metric();
            let result = solver.into_result(started.elapsed().as_secs_f64());
            if let WorkerEnd::Converged = end {
                let mut slot = winner.lock().expect("winner lock");
                if slot.is_none() {
                    *slot = Some(result);
                    cancel.store(true, Ordering::Relaxed);
                }
                return None;
            }
            Some((metric, result))
        });
        let sqp_handle = scope.spawn(|| {
            let budget = Budget::new(req.time_budget, ExecMode::Threaded);
            let mut solver = SqpSolver::new(chain, req, rng_seed);
            let end = loop {
                if cancel.load(Ordering::Relaxed) {
                    break WorkerEnd::GaveUp;
                }
                // The race takes the first converged candidate.
                if solver.try_converge() {
                    break WorkerEnd::Converged;
                }
                if solver.finished() || budget.exhausted(solver.iterations()) {
                    break WorkerEnd::GaveUp;
                }
                solver.iterate();
            };
            let metric = solver.best_metric();
            let result = solver.into_result(started.elapsed().as_secs_f64());
            if let WorkerEnd::Converged = end {
                let mut slot = winner.lock().expect("winner lock");
                if slot.is_none() {
                    *slot = Some(result);
                    cancel.store(true, Ordering::Relaxed);
                }
                return None;
            }
            Some((metric, result))
        });
        (pinv_handle.join().expect("pinv racer"), sqp_handle.join().expect("sqp racer"))
    });

    if let Some(result) = winner.into_inner().expect("winner lock") {
        return Ok(result);
    }
    match (pinv_loss, sqp_loss) {
        (Some((pm, pr)), Some((sm, sr))) => Ok(timed_out_choice(pm, sm, pr, sr)),
        // `None` is only returned after the winner slot was filled, and a
        // filled slot returns above.
        (Some((_, r)), None) | (None, Some((_, r))) => Ok(r),
        (None, None) => unreachable!("cancel flag set without a stored winner"),
    }
}

fn timed_out_choice(
    pinv_metric: f64,
    sqp_metric: f64,
    pinv_result: IkResult,
    sqp_result: IkResult,
) -> IkResult {
    if pinv_metric <= sqp_metric {
        pinv_result
    } else {
        sqp_result
    }
}

#[cfg(test)]
mod tests;
