//! Serial-chain kinematics under the standard (distal) Denavit-Hartenberg
//! convention: per-row homogeneous transforms, forward kinematics, the
//! geometric Jacobian and damped pseudoinverse utilities.

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, Translation3, UnitQuaternion, Vector3};

use crate::{Error, Result};

/// World-frame rigid transform: unit-quaternion rotation plus translation.
pub type RigidTransform = Isometry3<f64>;

/// One joint value per chain row, radians (revolute) or meters (prismatic).
pub type JointVector = DVector<f64>;

/// What the joint variable of a DH row modulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    /// Variable adds to the rotation angle about the previous z axis.
    Revolute,
    /// Variable adds to the offset along the previous z axis.
    Prismatic,
}

/// A single Denavit-Hartenberg row: offset `d` along the previous z, constant
/// joint angle offset, common-normal length `a` and twist `alpha` about it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DhRow {
    pub d: f64,
    pub theta_offset: f64,
    pub a: f64,
    pub alpha: f64,
    pub kind: JointKind,
}

impl DhRow {
    pub fn revolute(d: f64, theta_offset: f64, a: f64, alpha: f64) -> Self {
        Self { d, theta_offset, a, alpha, kind: JointKind::Revolute }
    }

    pub fn prismatic(d: f64, theta_offset: f64, a: f64, alpha: f64) -> Self {
        Self { d, theta_offset, a, alpha, kind: JointKind::Prismatic }
    }

    fn validate(&self) -> Result<()> {
        let vals = [self.d, self.theta_offset, self.a, self.alpha];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite DH parameter".into()));
        }
        Ok(())
    }
}

/// Lower/upper bound of one joint variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimit {
    pub min: f64,
    pub max: f64,
}

impl JointLimit {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::InvalidArgument(format!(
                "joint limit [{min}, {max}] must be finite with min < max"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.min && value <= self.max
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.min, self.max)
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min + self.max)
    }
}

/// An ordered DH chain with per-joint limits and a world-to-first-frame
/// mount transform. Immutable after construction; the single source of truth
/// for every kinematic and dynamic computation in this crate.
#[derive(Debug, Clone)]
pub struct KinematicChain {
    rows: Vec<DhRow>,
    limits: Vec<JointLimit>,
    base_frame: RigidTransform,
}

impl KinematicChain {
    pub fn new(
        rows: Vec<DhRow>,
        limits: Vec<JointLimit>,
        base_frame: RigidTransform,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("chain needs at least one row".into()));
        }
        if rows.len() != limits.len() {
            return Err(Error::InvalidArgument(format!(
                "{} DH rows but {} joint limits",
                rows.len(),
                limits.len()
            )));
        }
        for row in &rows {
            row.validate()?;
        }
        let ortho = rotation_orthonormality_error(&base_frame.rotation.to_rotation_matrix().into());
        if ortho > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "base frame rotation is not orthonormal (error {ortho:.2e})"
            )));
        }
        Ok(Self { rows, limits, base_frame })
    }

    pub fn dof(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[DhRow] {
        &self.rows
    }

    pub fn limits(&self) -> &[JointLimit] {
        &self.limits
    }

    pub fn base_frame(&self) -> &RigidTransform {
        &self.base_frame
    }

    /// Same chain re-mounted at a different world transform. Used when the
    /// mobile base moves and the arm root moves with it.
    pub fn with_base_frame(&self, base_frame: RigidTransform) -> Self {
        Self { rows: self.rows.clone(), limits: self.limits.clone(), base_frame }
    }

    pub fn within_limits(&self, q: &JointVector) -> bool {
        q.len() == self.dof() && q.iter().zip(&self.limits).all(|(v, l)| l.contains(*v))
    }

    pub fn clamp_to_limits(&self, q: &mut JointVector) {
        for (v, l) in q.iter_mut().zip(&self.limits) {
            *v = l.clamp(*v);
        }
    }

    /// Joint configuration at the middle of every limit range.
    pub fn midpoint_configuration(&self) -> JointVector {
        DVector::from_iterator(self.dof(), self.limits.iter().map(|l| l.midpoint()))
    }

    /// Upper bound on the end-effector distance from the base frame origin:
    /// every link can contribute at most |a| + |d|, with prismatic rows
    /// extended to their largest in-limit offset.
    pub fn max_reach(&self) -> f64 {
        self.rows
            .iter()
            .zip(&self.limits)
            .map(|(row, lim)| {
                let d = match row.kind {
                    JointKind::Revolute => row.d.abs(),
                    JointKind::Prismatic => {
                        (row.d + lim.min).abs().max((row.d + lim.max).abs())
                    }
                };
                row.a.abs() + d
            })
            .sum()
    }

    fn check_q(&self, q: &JointVector) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::InvalidArgument(format!(
                "joint vector has {} entries, chain has {} joints",
                q.len(),
                self.dof()
            )));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite joint value".into()));
        }
        Ok(())
    }
}

/// End-effector linear and angular velocity, world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialVelocity {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

/// Homogeneous transform of one DH row:
/// `RotZ(theta) * TransZ(d) * TransX(a) * RotX(alpha)`, with the joint value
/// added to `theta` (revolute) or `d` (prismatic).
pub fn dh_transform(row: &DhRow, joint_value: f64) -> Result<RigidTransform> {
    row.validate()?;
    if !joint_value.is_finite() {
        return Err(Error::InvalidArgument("non-finite joint value".into()));
    }
    let (theta, d) = match row.kind {
        JointKind::Revolute => (joint_value + row.theta_offset, row.d),
        JointKind::Prismatic => (row.theta_offset, joint_value + row.d),
    };
    let rot_z = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), theta);
    let rot_x = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), row.alpha);
    let trans = Isometry3::from_parts(Translation3::new(0.0, 0.0, d), rot_z)
        * Isometry3::from_parts(Translation3::new(row.a, 0.0, 0.0), rot_x);
    // RotZ and TransZ commute, so composing (RotZ ∘ TransZ) ∘ (TransX ∘ RotX)
    // reproduces the canonical four-factor product.
    Ok(trans)
}

/// World transform of every link frame; the last entry is the end-effector.
pub fn forward_kinematics(chain: &KinematicChain, q: &JointVector) -> Result<Vec<RigidTransform>> {
    chain.check_q(q)?;
    let mut frames = Vec::with_capacity(chain.dof());
    let mut current = *chain.base_frame();
    for (row, value) in chain.rows().iter().zip(q.iter()) {
        current *= dh_transform(row, *value)?;
        frames.push(current);
    }
    Ok(frames)
}

/// Geometric Jacobian (6 x n): linear velocity rows stacked over angular
/// velocity rows, so that `J * qdot` is the end-effector spatial velocity.
pub fn jacobian(chain: &KinematicChain, q: &JointVector) -> Result<DMatrix<f64>> {
    let frames = forward_kinematics(chain, q)?;
    let p_ee = frames.last().expect("chain is non-empty").translation.vector;
    Ok(jacobian_for_point(chain, &frames, chain.dof(), &p_ee))
}

/// Jacobian of an arbitrary point rigidly attached to link `link` (1-based
/// count: columns `>= link` are zero). Shared by the end-effector Jacobian
/// and the per-link center-of-mass Jacobians used by the dynamics.
pub(crate) fn jacobian_for_point(
    chain: &KinematicChain,
    frames: &[RigidTransform],
    link: usize,
    point: &Vector3<f64>,
) -> DMatrix<f64> {
    let n = chain.dof();
    let mut j = DMatrix::zeros(6, n);
    for col in 0..link {
        // Joint `col` moves about/along the z axis of the frame before it.
        let prev = if col == 0 { chain.base_frame() } else { &frames[col - 1] };
        let z = prev.rotation * Vector3::z();
        match chain.rows()[col].kind {
            JointKind::Revolute => {
                let origin = prev.translation.vector;
                let lin = z.cross(&(point - origin));
                j.fixed_view_mut::<3, 1>(0, col).copy_from(&lin);
                j.fixed_view_mut::<3, 1>(3, col).copy_from(&z);
            }
            JointKind::Prismatic => {
                j.fixed_view_mut::<3, 1>(0, col).copy_from(&z);
            }
        }
    }
    j
}

/// End-effector spatial velocity for a joint-rate vector: `J(q) * qdot`.
pub fn spatial_velocity(
    chain: &KinematicChain,
    q: &JointVector,
    qdot: &JointVector,
) -> Result<SpatialVelocity> {
    chain.check_q(qdot)?;
    let twist = jacobian(chain, q)? * qdot;
    Ok(SpatialVelocity {
        linear: Vector3::new(twist[0], twist[1], twist[2]),
        angular: Vector3::new(twist[3], twist[4], twist[5]),
    })
}

/// Damped right pseudoinverse `J^T (J J^T + lambda^2 I)^-1`.
///
/// With `lambda = 0` the product `J J^T` must be positive definite (full row
/// rank); otherwise a [`Error::SingularJacobian`] is returned and the caller
/// must supply a positive damping factor.
pub fn damped_pseudoinverse(j: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!("damping factor {lambda} must be >= 0")));
    }
    let m = j.nrows();
    let mut gram = j * j.transpose();
    for i in 0..m {
        gram[(i, i)] += lambda * lambda;
    }
    let chol = gram.cholesky().ok_or(Error::SingularJacobian)?;
    let mut inv = DMatrix::identity(m, m);
    chol.solve_mut(&mut inv);
    Ok(j.transpose() * inv)
}

/// Max-norm of `R^T R - I`; zero for a perfectly orthonormal rotation block.
pub fn rotation_orthonormality_error(rotation: &Matrix3<f64>) -> f64 {
    let gram = rotation.transpose() * rotation - Matrix3::identity();
    gram.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Isometry from roll-pitch-yaw angles (x-y-z extrinsic) and a translation.
pub fn transform_from_rpy_xyz(rpy: [f64; 3], xyz: [f64; 3]) -> RigidTransform {
    Isometry3::from_parts(
        Translation3::new(xyz[0], xyz[1], xyz[2]),
        UnitQuaternion::from_euler_angles(rpy[0], rpy[1], rpy[2]),
    )
}
