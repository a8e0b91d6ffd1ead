//! Lagrangian rigid-body dynamics of the serial chain: link energies, the
//! mass / Coriolis / gravity decomposition `M(q) qdd + C(q, qd) qd + g(q) =
//! tau`, inverse and forward dynamics, and a fixed-step RK4 integrator.
//!
//! The mass matrix is assembled numerically from per-link center-of-mass
//! Jacobians and the Coriolis matrix from finite-difference Christoffel
//! symbols, which keeps the formulation free of symbolic algebra while
//! preserving the structural properties (symmetry, positive definiteness,
//! skew-symmetry of `Mdot - 2C`) that the tests pin down.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::kinematics::{
    forward_kinematics, jacobian_for_point, JointVector, KinematicChain, RigidTransform,
};
use crate::{Error, Result};

/// Finite-difference step for the mass-matrix partial derivatives feeding
/// the Christoffel symbols; central differences at this step balance
/// truncation against roundoff in double precision.
const FD_STEP: f64 = 1e-6;

/// Condition-number ceiling beyond which the mass matrix is treated as
/// numerically singular.
const MAX_CONDITION: f64 = 1e12;

/// Torques (revolute, N m) or forces (prismatic, N), one per joint.
pub type JointTorque = DVector<f64>;

/// Mass properties of one link, expressed in that link's DH frame.
#[derive(Debug, Clone)]
pub struct LinkInertia {
    pub mass: f64,
    pub com: Vector3<f64>,
    pub inertia: Matrix3<f64>,
}

impl LinkInertia {
    pub fn new(mass: f64, com: Vector3<f64>, inertia: Matrix3<f64>) -> Result<Self> {
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::InvalidArgument(format!("link mass {mass} must be > 0")));
        }
        if com.iter().any(|v| !v.is_finite()) || inertia.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite inertial parameter".into()));
        }
        let asym = (inertia - inertia.transpose()).abs().max();
        if asym > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "inertia tensor asymmetric by {asym:.2e}"
            )));
        }
        let mut eigs: Vec<f64> = inertia.symmetric_eigen().eigenvalues.iter().copied().collect();
        eigs.sort_by(f64::total_cmp);
        let scale = eigs[2].abs().max(1.0);
        if eigs[0] < -1e-12 * scale {
            return Err(Error::InvalidArgument(
                "inertia tensor is not positive semidefinite".into(),
            ));
        }
        if eigs[0] + eigs[1] < eigs[2] - 1e-9 * scale {
            return Err(Error::InvalidArgument(
                "principal moments violate the triangle inequality".into(),
            ));
        }
        Ok(Self { mass, com, inertia })
    }

    /// Point mass with no rotational inertia of its own.
    pub fn point_mass(mass: f64, com: Vector3<f64>) -> Result<Self> {
        Self::new(mass, com, Matrix3::zeros())
    }
}

/// A kinematic chain plus the inertial data and gravity field needed for
/// dynamics. Immutable; all operations are pure functions over it.
#[derive(Debug, Clone)]
pub struct DynamicModel {
    chain: KinematicChain,
    inertias: Vec<LinkInertia>,
    gravity: Vector3<f64>,
}

/// Standard gravity vector pointing down the world z axis.
pub const GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

impl DynamicModel {
    pub fn new(
        chain: KinematicChain,
        inertias: Vec<LinkInertia>,
        gravity: Vector3<f64>,
    ) -> Result<Self> {
        if inertias.len() != chain.dof() {
            return Err(Error::InvalidArgument(format!(
                "{} links but {} inertia entries",
                chain.dof(),
                inertias.len()
            )));
        }
        if gravity.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite gravity".into()));
        }
        Ok(Self { chain, inertias, gravity })
    }

    pub fn chain(&self) -> &KinematicChain {
        &self.chain
    }

    pub fn inertias(&self) -> &[LinkInertia] {
        &self.inertias
    }

    pub fn gravity(&self) -> Vector3<f64> {
        self.gravity
    }

    pub fn dof(&self) -> usize {
        self.chain.dof()
    }

    /// Same model re-mounted at a new arm base transform.
    pub fn with_base_frame(&self, base: RigidTransform) -> Self {
        Self {
            chain: self.chain.with_base_frame(base),
            inertias: self.inertias.clone(),
            gravity: self.gravity,
        }
    }

    fn check_dims(&self, v: &DVector<f64>, what: &str) -> Result<()> {
        if v.len() != self.dof() {
            return Err(Error::InvalidArgument(format!(
                "{what} has {} entries, model has {} joints",
                v.len(),
                self.dof()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value in {what}")));
        }
        Ok(())
    }

    /// World-frame center-of-mass positions and their linear/angular
    /// Jacobians for every link.
    fn link_frames_and_com_jacobians(
        &self,
        q: &JointVector,
    ) -> Result<Vec<(RigidTransform, Vector3<f64>, DMatrix<f64>)>> {
        let frames = forward_kinematics(&self.chain, q)?;
        let mut out = Vec::with_capacity(frames.len());
        for (i, frame) in frames.iter().enumerate() {
            let com_world = frame * nalgebra::Point3::from(self.inertias[i].com);
            let j = jacobian_for_point(&self.chain, &frames, i + 1, &com_world.coords);
            out.push((*frame, com_world.coords, j));
        }
        Ok(out)
    }
}

/// Instantaneous arm state for simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmState {
    pub q: JointVector,
    pub qdot: JointVector,
}

impl ArmState {
    pub fn new(q: JointVector, qdot: JointVector) -> Self {
        Self { q, qdot }
    }

    pub fn at_rest(q: JointVector) -> Self {
        let n = q.len();
        Self { q, qdot: DVector::zeros(n) }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|v| v.is_finite())
    }
}

/// Total kinetic energy, summed link by link:
/// `K = sum_i 1/2 m_i |v_com_i|^2 + 1/2 w_i^T I_i^world w_i`.
pub fn kinetic_energy(model: &DynamicModel, q: &JointVector, qdot: &JointVector) -> Result<f64> {
    model.check_dims(qdot, "joint velocity")?;
    let links = model.link_frames_and_com_jacobians(q)?;
    let mut energy = 0.0;
    for (i, (frame, _, j)) in links.iter().enumerate() {
        let v = j.rows(0, 3) * qdot;
        let w = j.rows(3, 3) * qdot;
        let r: Matrix3<f64> = frame.rotation.to_rotation_matrix().into();
        let inertia_world = r * model.inertias[i].inertia * r.transpose();
        energy += 0.5 * model.inertias[i].mass * v.norm_squared();
        energy += 0.5 * (w.transpose() * inertia_world * &w)[(0, 0)];
    }
    Ok(energy)
}

/// Gravitational potential energy `P = -sum_i m_i g . p_com_i`.
pub fn potential_energy(model: &DynamicModel, q: &JointVector) -> Result<f64> {
    let links = model.link_frames_and_com_jacobians(q)?;
    let mut energy = 0.0;
    for (i, (_, com, _)) in links.iter().enumerate() {
        energy -= model.inertias[i].mass * model.gravity.dot(com);
    }
    Ok(energy)
}

/// Joint-space mass matrix assembled from per-link com Jacobians:
/// `M = sum_i Jv_i^T m_i Jv_i + Jw_i^T I_i^world Jw_i`.
pub fn mass_matrix(model: &DynamicModel, q: &JointVector) -> Result<DMatrix<f64>> {
    let n = model.dof();
    let links = model.link_frames_and_com_jacobians(q)?;
    let mut m = DMatrix::zeros(n, n);
    for (i, (frame, _, j)) in links.iter().enumerate() {
        let jv = j.rows(0, 3);
        let jw = j.rows(3, 3);
        let r: Matrix3<f64> = frame.rotation.to_rotation_matrix().into();
        let inertia_world = r * model.inertias[i].inertia * r.transpose();
        m += jv.transpose() * jv * model.inertias[i].mass;
        m += jw.transpose() * inertia_world * jw;
    }
    // Symmetrize away the last-ulp asymmetry of the accumulation order.
    let m = (&m + m.transpose()) * 0.5;
    Ok(m)
}

/// Partial derivatives of the mass matrix, `dM/dq_k` for every k, by central
/// finite differences.
fn mass_matrix_partials(model: &DynamicModel, q: &JointVector) -> Result<Vec<DMatrix<f64>>> {
    let n = model.dof();
    let mut partials = Vec::with_capacity(n);
    for k in 0..n {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[k] += FD_STEP;
        qm[k] -= FD_STEP;
        let mp = mass_matrix(model, &qp)?;
        let mm = mass_matrix(model, &qm)?;
        partials.push((mp - mm) / (2.0 * FD_STEP));
    }
    Ok(partials)
}

/// Coriolis/centrifugal matrix from Christoffel symbols of the first kind,
/// `c_ijk = 1/2 (dM_ij/dq_k + dM_ik/dq_j - dM_jk/dq_i)`, so that
/// `Mdot - 2C` is skew-symmetric by construction.
pub fn coriolis_matrix(
    model: &DynamicModel,
    q: &JointVector,
    qdot: &JointVector,
) -> Result<DMatrix<f64>> {
    model.check_dims(qdot, "joint velocity")?;
    let n = model.dof();
    let dm = mass_matrix_partials(model, q)?;
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut cij = 0.0;
            for k in 0..n {
                cij += 0.5 * (dm[k][(i, j)] + dm[j][(i, k)] - dm[i][(j, k)]) * qdot[k];
            }
            c[(i, j)] = cij;
        }
    }
    Ok(c)
}

/// Gravity torque vector `g(q) = dP/dq`, computed analytically through the
/// com Jacobians. Equals the torque that holds the arm static.
pub fn gravity_vector(model: &DynamicModel, q: &JointVector) -> Result<JointTorque> {
    let links = model.link_frames_and_com_jacobians(q)?;
    let mut g = DVector::zeros(model.dof());
    for (i, (_, _, j)) in links.iter().enumerate() {
        let jv = j.rows(0, 3);
        g -= jv.transpose() * (model.inertias[i].mass * model.gravity);
    }
    Ok(g)
}

/// Inverse dynamics: `tau = M(q) qdd + C(q, qd) qd + g(q)`.
pub fn inverse_dynamics(
    model: &DynamicModel,
    q: &JointVector,
    qdot: &JointVector,
    qddot: &JointVector,
) -> Result<JointTorque> {
    model.check_dims(qddot, "joint acceleration")?;
    let m = mass_matrix(model, q)?;
    let c = coriolis_matrix(model, q, qdot)?;
    let g = gravity_vector(model, q)?;
    Ok(m * qddot + c * qdot + g)
}

/// Forward dynamics: solves `M(q) qdd = tau - C qd - g` as a symmetric
/// positive-definite system.
pub fn forward_dynamics(
    model: &DynamicModel,
    q: &JointVector,
    qdot: &JointVector,
    tau: &JointTorque,
) -> Result<JointVector> {
    model.check_dims(tau, "joint torque")?;
    let m = mass_matrix(model, q)?;
    let eigs = m.clone().symmetric_eigen().eigenvalues;
    let max = eigs.iter().fold(f64::MIN, |a, b| a.max(*b));
    let min = eigs.iter().fold(f64::MAX, |a, b| a.min(*b));
    if min <= 0.0 || max / min > MAX_CONDITION {
        return Err(Error::DegenerateModel(format!(
            "mass matrix condition {:.3e} exceeds {MAX_CONDITION:.0e}",
            max / min.max(f64::MIN_POSITIVE)
        )));
    }
    let c = coriolis_matrix(model, q, qdot)?;
    let g = gravity_vector(model, q)?;
    let rhs = tau - c * qdot - g;
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::DegenerateModel("mass matrix is not positive definite".into()))?;
    Ok(chol.solve(&rhs))
}

/// One classical fourth-order Runge-Kutta step of the forward-dynamics ODE
/// with the torque held constant over the step.
pub fn integrate_step(
    model: &DynamicModel,
    state: &ArmState,
    tau: &JointTorque,
    dt: f64,
) -> Result<ArmState> {
    if !(dt > 0.0 && dt <= 0.05) {
        return Err(Error::InvalidArgument(format!("dt {dt} outside (0, 0.05]")));
    }
    let deriv = |q: &JointVector, qd: &JointVector| -> Result<(JointVector, JointVector)> {
        Ok((qd.clone(), forward_dynamics(model, q, qd, tau)?))
    };
    let (k1q, k1v) = deriv(&state.q, &state.qdot)?;
    let (k2q, k2v) = deriv(&(&state.q + &k1q * (dt / 2.0)), &(&state.qdot + &k1v * (dt / 2.0)))?;
    let (k3q, k3v) = deriv(&(&state.q + &k2q * (dt / 2.0)), &(&state.qdot + &k2v * (dt / 2.0)))?;
    let (k4q, k4v) = deriv(&(&state.q + &k3q * dt), &(&state.qdot + &k3v * dt))?;
    Ok(ArmState {
        q: &state.q + (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (dt / 6.0),
        qdot: &state.qdot + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0),
    })
}
