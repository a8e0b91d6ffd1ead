use super::*;
use crate::kinematics::{forward_kinematics, transform_from_rpy_xyz, DhRow, JointLimit};
use nalgebra::{DVector, Isometry3, Translation3, UnitQuaternion, Vector3};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::f64::consts::{FRAC_PI_2, PI};

/// Roll-pitch alternating 7-DOF arm, scaled like a warehouse manipulator.
fn seven_dof() -> KinematicChain {
    let rows = vec![
        DhRow::revolute(0.177, 0.0, 0.0, -FRAC_PI_2),
        DhRow::revolute(0.0, 0.0, 0.0, FRAC_PI_2),
        DhRow::revolute(0.352, 0.0, 0.0, FRAC_PI_2),
        DhRow::revolute(0.0, 0.0, 0.0, -FRAC_PI_2),
        DhRow::revolute(0.3215, 0.0, 0.0, -FRAC_PI_2),
        DhRow::revolute(0.0, 0.0, 0.0, FRAC_PI_2),
        DhRow::revolute(0.30495, 0.0, 0.0, 0.0),
    ];
    let limits = vec![
        JointLimit::new(-1.6057, 1.6057).unwrap(),
        JointLimit::new(-1.221, 1.518).unwrap(),
        JointLimit::new(-PI, PI).unwrap(),
        JointLimit::new(-2.251, 2.251).unwrap(),
        JointLimit::new(-PI, PI).unwrap(),
        JointLimit::new(-2.16, 2.16).unwrap(),
        JointLimit::new(-PI, PI).unwrap(),
    ];
    KinematicChain::new(rows, limits, Isometry3::identity()).unwrap()
}

fn random_in_limits(rng: &mut StdRng, chain: &KinematicChain) -> JointVector {
    DVector::from_iterator(
        chain.dof(),
        chain.limits().iter().map(|l| rng.random_range(l.min..l.max)),
    )
}

fn fk_pose(chain: &KinematicChain, q: &JointVector) -> RigidTransform {
    *forward_kinematics(chain, q).unwrap().last().unwrap()
}

fn recheck(chain: &KinematicChain, req: &IkRequest, result: &IkResult) {
    assert_eq!(result.status, IkStatus::Converged);
    let q = result.solution.as_ref().expect("converged result carries a solution");
    assert!(chain.within_limits(q), "solution violates joint limits: {q:?}");
    let e = pose_error(&fk_pose(chain, q), &req.target);
    let (pos, rot) = error_magnitudes(&e);
    assert!(pos <= req.pos_tol, "position recheck {pos} > {}", req.pos_tol);
    assert!(rot <= req.rot_tol, "rotation recheck {rot} > {}", req.rot_tol);
}

#[test]
fn pose_error_identical_poses() {
    let t = transform_from_rpy_xyz([0.3, -0.4, 0.9], [1.0, 2.0, 3.0]);
    assert_eq!(pose_error(&t, &t).norm(), 0.0);
}

#[test]
fn pose_error_pure_translation() {
    let a = Isometry3::identity();
    let b = Isometry3::from_parts(Translation3::new(0.1, 0.0, 0.0), UnitQuaternion::identity());
    let e = pose_error(&a, &b);
    assert!((e[0] - 0.1).abs() < 1e-15);
    assert!(e.fixed_rows::<5>(1).norm() < 1e-15);
}

#[test]
fn pose_error_pure_rotation_axis_angle_oracle() {
    let a = Isometry3::identity();
    let b = Isometry3::from_parts(
        Translation3::new(0.0, 0.0, 0.0),
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2),
    );
    let e = pose_error(&a, &b);
    // Independent oracle: angle from the rotation matrix trace, axis from
    // the skew part.
    let r = b.rotation.to_rotation_matrix();
    let angle = ((r.matrix().trace() - 1.0) / 2.0).acos();
    let axis = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    ) / (2.0 * angle.sin());
    let expect = axis * angle;
    assert!((Vector3::new(e[3], e[4], e[5]) - expect).norm() < 1e-12);
    assert!((e[5] - FRAC_PI_2).abs() < 1e-12);
    assert!(e.fixed_rows::<3>(0).norm() < 1e-15);
}

#[test]
fn ss_metric_values() {
    assert_eq!(ss_metric(&Vector6::zeros()), 0.0);
    assert_eq!(ss_metric(&Vector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0)), 1.0);
    let e = Vector6::new(0.3, 0.4, 0.0, 0.0, 0.0, 0.0);
    assert!((ss_metric(&e) - 0.25).abs() < 1e-15);
}

#[test]
fn pinv_converges_at_seed_without_iterating() {
    let chain = seven_dof();
    let seed = chain.midpoint_configuration();
    let req = IkRequest::new(fk_pose(&chain, &seed), seed.clone(), 0.05);
    let result = solve_pinv(&chain, &req, 0, ExecMode::Sequential).unwrap();
    assert_eq!(result.status, IkStatus::Converged);
    assert_eq!(result.iterations, 0);
    assert_eq!(result.restarts, 0);
    assert_eq!(result.solution.as_ref().unwrap(), &seed);
}

#[test]
fn unreachable_target_is_prefiltered() {
    let chain = seven_dof();
    let target = Isometry3::from_parts(
        Translation3::new(100.0, 0.0, 0.0),
        UnitQuaternion::identity(),
    );
    let req = IkRequest::new(target, chain.midpoint_configuration(), 0.05);
    for result in [
        solve_pinv(&chain, &req, 0, ExecMode::Sequential).unwrap(),
        solve_sqp_ss(&chain, &req, 0, ExecMode::Sequential).unwrap(),
        solve_race(&chain, &req, 0, ExecMode::Sequential).unwrap(),
    ] {
        assert_eq!(result.status, IkStatus::Unreachable);
        assert_eq!(result.iterations, 0);
        assert!(result.solution.is_none());
    }
}

#[test]
fn invalid_requests_rejected() {
    let chain = seven_dof();
    let seed = chain.midpoint_configuration();
    let target = fk_pose(&chain, &seed);
    let mut req = IkRequest::new(target, DVector::zeros(3), 0.05);
    assert!(solve_pinv(&chain, &req, 0, ExecMode::Sequential).is_err());
    req.seed = seed;
    req.time_budget = 0.0;
    assert!(solve_pinv(&chain, &req, 0, ExecMode::Sequential).is_err());
    req.time_budget = 0.05;
    req.pos_tol = 0.0;
    assert!(solve_race(&chain, &req, 0, ExecMode::Sequential).is_err());
}

fn harness(
    solve: impl Fn(&KinematicChain, &IkRequest) -> IkResult,
    poses: usize,
) -> (usize, usize) {
    let chain = seven_dof();
    let seed = chain.midpoint_configuration();
    let mut rng = StdRng::seed_from_u64(2024);
    let mut converged = 0;
    for _ in 0..poses {
        let q_goal = random_in_limits(&mut rng, &chain);
        let req = IkRequest::new(fk_pose(&chain, &q_goal), seed.clone(), 0.05);
        let result = solve(&chain, &req);
        if result.status == IkStatus::Converged {
            recheck(&chain, &req, &result);
            converged += 1;
        }
    }
    (converged, poses)
}

#[test]
fn pinv_success_rate_on_reachable_poses() {
    let (converged, total) =
        harness(|c, r| solve_pinv(c, r, 7, ExecMode::Sequential).unwrap(), 500);
    let rate = converged as f64 / total as f64;
    println!("pseudoinverse success rate {rate}");
    assert!(rate >= 0.95, "pseudoinverse success rate {rate}");
}

#[test]
fn sqp_success_rate_on_reachable_poses() {
    let (converged, total) =
        harness(|c, r| solve_sqp_ss(c, r, 7, ExecMode::Sequential).unwrap(), 500);
    let rate = converged as f64 / total as f64;
    println!("sqp-ss success rate {rate}");
    assert!(rate >= 0.95, "sqp-ss success rate {rate}");
}

#[test]
fn sqp_converges_at_seed_with_zero_distance() {
    let chain = seven_dof();
    let seed = chain.midpoint_configuration();
    let req = IkRequest::new(fk_pose(&chain, &seed), seed.clone(), 0.05);
    let result = solve_sqp_ss(&chain, &req, 0, ExecMode::Sequential).unwrap();
    assert_eq!(result.status, IkStatus::Converged);
    let q = result.solution.unwrap();
    assert!((q - seed).norm() < 1e-12);
}

#[test]
fn race_trivial_target_converges() {
    let chain = seven_dof();
    let seed = chain.midpoint_configuration();
    let req = IkRequest::new(fk_pose(&chain, &seed), seed.clone(), 0.05);
    let result = solve_race(&chain, &req, 0, ExecMode::Sequential).unwrap();
    assert_eq!(result.status, IkStatus::Converged);
    recheck(&chain, &req, &result);
}

#[test]
fn race_tiny_budget_times_out() {
    let chain = seven_dof();
    let seed = chain.midpoint_configuration();
    let mut goal = seed.clone();
    goal[1] += 0.9;
    goal[3] += 1.2;
    let mut req = IkRequest::new(fk_pose(&chain, &goal), seed, 1e-9);
    req.pos_tol = 1e-6;
    let result = solve_race(&chain, &req, 0, ExecMode::Sequential).unwrap();
    assert_eq!(result.status, IkStatus::TimedOut);
    assert!(result.solution.is_none());
}

#[test]
fn race_dominates_individual_solvers() {
    let chain = seven_dof();
    let seed = chain.midpoint_configuration();
    let mut rng = StdRng::seed_from_u64(5150);
    let mut pinv_wins = 0usize;
    let mut sqp_wins = 0usize;
    let mut race_wins = 0usize;
    for _ in 0..200 {
        let q_goal = random_in_limits(&mut rng, &chain);
        let req = IkRequest::new(fk_pose(&chain, &q_goal), seed.clone(), 0.02);
        let p = solve_pinv(&chain, &req, 42, ExecMode::Sequential).unwrap();
        let s = solve_sqp_ss(&chain, &req, 42, ExecMode::Sequential).unwrap();
        let r = solve_race(&chain, &req, 42, ExecMode::Sequential).unwrap();
        pinv_wins += (p.status == IkStatus::Converged) as usize;
        sqp_wins += (s.status == IkStatus::Converged) as usize;
        race_wins += (r.status == IkStatus::Converged) as usize;
        if r.status == IkStatus::Converged {
            recheck(&chain, &req, &r);
        }
    }
    assert!(
        race_wins >= pinv_wins.max(sqp_wins),
        "race {race_wins} vs pinv {pinv_wins} / sqp {sqp_wins}"
    );
}

#[test]
fn sequential_race_is_deterministic() {
    let chain = seven_dof();
    let seed = chain.midpoint_configuration();
    let mut goal = seed.clone();
    goal[0] -= 0.8;
    goal[1] += 0.5;
    goal[3] -= 1.0;
    goal[5] += 0.7;
    let req = IkRequest::new(fk_pose(&chain, &goal), seed, 0.05);
    let a = solve_race(&chain, &req, 99, ExecMode::Sequential).unwrap();
    let b = solve_race(&chain, &req, 99, ExecMode::Sequential).unwrap();
    // Sequential elapsed is the logical clock, so whole results compare
    // equal, solution bits included.
    assert_eq!(a, b);
}

#[test]
fn threaded_race_converges_and_rechecks() {
    let chain = seven_dof();
    let seed = chain.midpoint_configuration();
    let mut rng = StdRng::seed_from_u64(31337);
    for _ in 0..10 {
        let q_goal = random_in_limits(&mut rng, &chain);
        let req = IkRequest::new(fk_pose(&chain, &q_goal), seed.clone(), 1.0);
        let result = solve_race(&chain, &req, 7, ExecMode::Threaded).unwrap();
        assert_eq!(result.status, IkStatus::Converged, "budget of 1 s should suffice");
        recheck(&chain, &req, &result);
        assert!(result.elapsed < 1.5);
    }
}

#[test]
fn ik_result_serializes_with_documented_fields() {
    let result = IkResult {
        solution: Some(DVector::from_vec(vec![0.5, -0.25])),
        status: IkStatus::Converged,
        solver: SolverKind::SqpSs,
        iterations: 12,
        restarts: 1,
        elapsed: 0.0006,
    };
    let json = serde_json::to_value(&result).unwrap();
    assert_eq!(json["status"], "converged");
    assert_eq!(json["solver"], "sqp_ss");
    assert_eq!(json["solution"][0], 0.5);
    assert_eq!(json["iterations"], 12);
}
