//! Damped-pseudoinverse IK iteration with uniform random restarts whenever
//! progress stalls in a local minimum.

use nalgebra::Vector6;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    adaptive_pinv, end_effector, pose_error, ss_metric, within_tolerance, world_frame_error,
    IkRequest, IkResult, IkStatus, SolverKind, BACKTRACK_FACTOR, BACKTRACK_LIMIT, STALL_PROGRESS,
    STALL_WINDOW,
};
use crate::kinematics::{jacobian, JointVector, KinematicChain, RigidTransform};

pub(crate) struct PinvSolver<'a> {
    chain: &'a KinematicChain,
    req: &'a IkRequest,
    rng: ChaCha8Rng,
    q: JointVector,
    ee: RigidTransform,
    err: Vector6<f64>,
    err_norm: f64,
    best_metric: f64,
    window_start_norm: f64,
    window_len: u64,
    iterations: u64,
    restarts: u64,
    solution: Option<JointVector>,
}

impl<'a> PinvSolver<'a> {
    pub(crate) fn new(chain: &'a KinematicChain, req: &'a IkRequest, rng_seed: u64) -> Self {
        let mut q = req.seed.clone();
        chain.clamp_to_limits(&mut q);
        let ee = end_effector(chain, &q);
        let err = pose_error(&ee, &req.target);
        let err_norm = err.norm();
        Self {
            chain,
            req,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            q,
            ee,
            err,
            err_norm,
            best_metric: ss_metric(&err),
            window_start_norm: err_norm,
            window_len: 0,
            iterations: 0,
            restarts: 0,
            solution: None,
        }
    }

    /// True once the current iterate satisfies both tolerances; records the
    /// solution on the first hit.
    pub(crate) fn try_converge(&mut self) -> bool {
        if self.solution.is_some() {
            return true;
        }
        if within_tolerance(&self.err, self.req) {
            self.solution = Some(self.q.clone());
            return true;
        }
        false
    }

    /// One damped Gauss-Newton iteration with a backtracking line search,
    /// followed by local-minimum detection.
    pub(crate) fn iterate(&mut self) {
        self.iterations += 1;
        let mut j = jacobian(self.chain, &self.q).expect("dimensions validated");
        let e_world = world_frame_error(&self.ee, &self.err);
        let mut blocked = vec![false; self.chain.dof()];
        let step = loop {
            let pinv = adaptive_pinv(&j);
            let step = &pinv * e_world;
            if !super::mask_blocked_joints(self.chain, &self.q, &step, &mut j, &mut blocked) {
                break step;
            }
        };

        let mut alpha = 1.0;
        for _ in 0..=BACKTRACK_LIMIT {
            let mut q_try = &self.q + &step * alpha;
            self.chain.clamp_to_limits(&mut q_try);
            let ee_try = end_effector(self.chain, &q_try);
            let err_try = pose_error(&ee_try, &self.req.target);
            let norm_try = err_try.norm();
            if norm_try < self.err_norm {
                self.q = q_try;
                self.ee = ee_try;
                self.err = err_try;
                self.err_norm = norm_try;
                self.best_metric = self.best_metric.min(ss_metric(&self.err));
                break;
            }
            alpha *= BACKTRACK_FACTOR;
        }

        self.window_len += 1;
        if self.window_len >= STALL_WINDOW {
            if self.window_start_norm - self.err_norm < STALL_PROGRESS {
                self.restart();
            } else {
                self.window_start_norm = self.err_norm;
                self.window_len = 0;
            }
        }
    }

    fn restart(&mut self) {
        let limits = self.chain.limits();
        for (i, lim) in limits.iter().enumerate() {
            self.q[i] = self.rng.random_range(lim.min..lim.max);
        }
        self.ee = end_effector(self.chain, &self.q);
        self.err = pose_error(&self.ee, &self.req.target);
        self.err_norm = self.err.norm();
        self.best_metric = self.best_metric.min(ss_metric(&self.err));
        self.window_start_norm = self.err_norm;
        self.window_len = 0;
        self.restarts += 1;
    }

    pub(crate) fn iterations(&self) -> u64 {
        self.iterations
    }

    pub(crate) fn best_metric(&self) -> f64 {
        self.best_metric
    }

    pub(crate) fn into_result(self, elapsed: f64) -> IkResult {
        let status =
            if self.solution.is_some() { IkStatus::Converged } else { IkStatus::TimedOut };
        IkResult {
            solution: self.solution,
            status,
            solver: SolverKind::Pseudoinverse,
            iterations: self.iterations,
            restarts: self.restarts,
            elapsed,
        }
    }
}
