//! Joint-movement-minimizing IK: sequential quadratic steps on the
//! objective `|q_seed - q|^2` with the sum-of-squares pose error as the
//! active constraint. Realized as box-projected Gauss-Newton on a penalty
//! merit function; converged candidates are collected across restarts and
//! the one closest to the seed wins.

use nalgebra::{DMatrix, DVector, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    end_effector, manipulability, pose_error, ss_metric, within_tolerance, world_frame_error,
    IkRequest, IkResult, IkStatus, SolverKind, BACKTRACK_FACTOR, BACKTRACK_LIMIT,
    MANIPULABILITY_FLOOR, SINGULARITY_DAMPING, STALL_PROGRESS, STALL_WINDOW,
};
use crate::kinematics::{jacobian, JointVector, KinematicChain, RigidTransform};

/// Weight of the seed-distance term in the merit function. Small enough
/// that the pose error floor it induces sits far below the tolerances,
/// large enough to pull the redundant degrees of freedom toward the seed.
const SEED_WEIGHT: f64 = 1e-6;
/// Random restarts allowed to look for a closer candidate after the first
/// convergence.
const POLISH_RESTARTS: u8 = 3;
/// Iterations granted to a single basin before the attempt is abandoned.
const ATTEMPT_ITERATION_CAP: u64 = 200;

/// Mixed seed offset so the two racing solvers draw independent streams
/// from one user seed.
pub(crate) const SQP_STREAM_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

pub(crate) struct SqpSolver<'a> {
    chain: &'a KinematicChain,
    req: &'a IkRequest,
    rng: ChaCha8Rng,
    q: JointVector,
    ee: RigidTransform,
    err: Vector6<f64>,
    err_norm: f64,
    merit: f64,
    best_metric: f64,
    candidates: Vec<(JointVector, f64)>,
    polish_budget: u8,
    finished: bool,
    window_start_norm: f64,
    window_len: u64,
    attempt_iterations: u64,
    iterations: u64,
    restarts: u64,
}

/// Picks the candidate with the smallest squared seed distance.
pub(crate) fn min_distance_candidate(
    candidates: &[(JointVector, f64)],
) -> Option<&(JointVector, f64)> {
    candidates.iter().min_by(|a, b| a.1.total_cmp(&b.1))
}

impl<'a> SqpSolver<'a> {
    pub(crate) fn new(chain: &'a KinematicChain, req: &'a IkRequest, rng_seed: u64) -> Self {
        let mut q = req.seed.clone();
        chain.clamp_to_limits(&mut q);
        let ee = end_effector(chain, &q);
        let err = pose_error(&ee, &req.target);
        let err_norm = err.norm();
        let merit = merit_value(&err, &q, &req.seed);
        Self {
            chain,
            req,
            rng: ChaCha8Rng::seed_from_u64(rng_seed.wrapping_add(SQP_STREAM_OFFSET)),
            q,
            ee,
            err,
            err_norm,
            merit,
            best_metric: ss_metric(&err),
            candidates: Vec::new(),
            polish_budget: POLISH_RESTARTS,
            finished: false,
            window_start_norm: err_norm,
            window_len: 0,
            attempt_iterations: 0,
            iterations: 0,
            restarts: 0,
        }
    }

    /// Checks the current iterate; a hit records a candidate and triggers a
    /// polish restart. Returns true exactly when a new candidate was
    /// recorded, which is the race's "first converged" signal.
    pub(crate) fn try_converge(&mut self) -> bool {
        if self.finished {
            return false;
        }
        if within_tolerance(&self.err, self.req) {
            let dist = (&self.q - &self.req.seed).norm_squared();
            self.candidates.push((self.q.clone(), dist));
            self.restart();
            return true;
        }
        false
    }

    pub(crate) fn finished(&self) -> bool {
        self.finished
    }

    /// One Gauss-Newton step on the merit function with box projection and
    /// a backtracking line search.
    pub(crate) fn iterate(&mut self) {
        if self.finished {
            return;
        }
        self.iterations += 1;
        self.attempt_iterations += 1;

        let n = self.chain.dof();
        let mut j = jacobian(self.chain, &self.q).expect("dimensions validated");
        let e_world = world_frame_error(&self.ee, &self.err);
        // Normal equations of the linearized merit:
        // (J^T J + w I) dq = J^T e + w (seed - q), damped further near
        // singularities. Joints pinned at a limit pushing outward are
        // masked out of the subproblem and recomputed.
        let mut blocked = vec![false; n];
        let step = loop {
            let mut damping = SEED_WEIGHT;
            if manipulability(&j) < MANIPULABILITY_FLOOR {
                damping += SINGULARITY_DAMPING * SINGULARITY_DAMPING;
            }
            let mut normal: DMatrix<f64> = j.transpose() * &j;
            for i in 0..n {
                normal[(i, i)] += damping;
            }
            let mut rhs: DVector<f64> =
                j.transpose() * &e_world + (&self.req.seed - &self.q) * SEED_WEIGHT;
            for i in 0..n {
                if blocked[i] {
                    rhs[i] = 0.0;
                }
            }
            let step = match normal.cholesky() {
                Some(chol) => chol.solve(&rhs),
                None => return self.restart(),
            };
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
            let merit_try = merit_value(&err_try, &q_try, &self.req.seed);
            if merit_try < self.merit {
                self.q = q_try;
                self.ee = ee_try;
                self.err = err_try;
                self.err_norm = self.err.norm();
                self.merit = merit_try;
                self.best_metric = self.best_metric.min(ss_metric(&self.err));
                break;
            }
            alpha *= BACKTRACK_FACTOR;
        }

        self.window_len += 1;
        if self.attempt_iterations >= ATTEMPT_ITERATION_CAP {
            return self.restart();
        }
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
        if !self.candidates.is_empty() {
            if self.polish_budget == 0 {
                self.finished = true;
                return;
            }
            self.polish_budget -= 1;
        }
        for (i, lim) in self.chain.limits().iter().enumerate() {
            self.q[i] = self.rng.random_range(lim.min..lim.max);
        }
        self.ee = end_effector(self.chain, &self.q);
        self.err = pose_error(&self.ee, &self.req.target);
        self.err_norm = self.err.norm();
        self.merit = merit_value(&self.err, &self.q, &self.req.seed);
        self.best_metric = self.best_metric.min(ss_metric(&self.err));
        self.window_start_norm = self.err_norm;
        self.window_len = 0;
        self.attempt_iterations = 0;
        self.restarts += 1;
    }

    pub(crate) fn iterations(&self) -> u64 {
        self.iterations
    }

    pub(crate) fn best_metric(&self) -> f64 {
        self.best_metric
    }

    pub(crate) fn into_result(self, elapsed: f64) -> IkResult {
        match min_distance_candidate(&self.candidates) {
            Some((q, _)) => IkResult {
                solution: Some(q.clone()),
                status: IkStatus::Converged,
                solver: SolverKind::SqpSs,
                iterations: self.iterations,
                restarts: self.restarts,
                elapsed,
            },
            None => IkResult {
                solution: None,
                status: IkStatus::TimedOut,
                solver: SolverKind::SqpSs,
                iterations: self.iterations,
                restarts: self.restarts,
                elapsed,
            },
        }
    }
}

fn merit_value(err: &Vector6<f64>, q: &JointVector, seed: &JointVector) -> f64 {
    ss_metric(err) + SEED_WEIGHT * (q - seed).norm_squared()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidate_selection_prefers_smaller_seed_distance() {
        let far = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let near = DVector::from_vec(vec![0.1, 0.1, 0.1]);
        let candidates = vec![(far.clone(), 3.0), (near.clone(), 0.03)];
        let best = min_distance_candidate(&candidates).unwrap();
        assert_eq!(best.0, near);
        let candidates = vec![(near.clone(), 0.03), (far, 3.0)];
        assert_eq!(min_distance_candidate(&candidates).unwrap().0, near);
        assert!(min_distance_candidate(&[]).is_none());
    }
}
