//! Elementary 3D types: rotations, 9-DoF poses, and the projection of an
//! unconstrained 3×3 matrix onto SO(3) together with its exact differential.

use nalgebra::{Matrix3, Matrix4, Unit, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Two smallest singular values below this make the nearest rotation ambiguous.
pub const DEGENERATE_SINGULAR_VALUE: f64 = 1e-12;

/// An unconstrained 3×3 matrix, e.g. nine regressed numbers before projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawMatrix(pub Mat3);

impl RawMatrix {
    pub fn from_row_slice(values: &[f64; 9]) -> Self {
        RawMatrix(Mat3::from_row_slice(values))
    }
}

impl From<Rotation> for RawMatrix {
    fn from(r: Rotation) -> Self {
        RawMatrix(r.0)
    }
}

/// A proper rotation: `mᵀm = I`, `det m = +1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Validates orthonormality and orientation within `tol` (Frobenius).
    pub fn try_from_matrix(m: Mat3, tol: f64) -> Result<Self> {
        if is_rotation(&m, tol) {
            Ok(Rotation(m))
        } else {
            Err(Error::InvalidArgument(format!(
                "matrix is not a rotation within {tol:e}"
            )))
        }
    }

    /// Caller guarantees `m` is a rotation.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    /// Right-handed rotation by `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let axis = Unit::new_normalize(*axis);
        Rotation(*nalgebra::Rotation3::from_axis_angle(&axis, angle).matrix())
    }

    /// Rotation about the world up axis (+z).
    pub fn from_yaw(yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        Rotation(Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    /// `self · other`.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    /// Row-major entries.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }
}

pub fn is_rotation(m: &Mat3, tol: f64) -> bool {
    m.iter().all(|v| v.is_finite())
        && (m.transpose() * m - Mat3::identity()).norm() <= tol
        && (m.determinant() - 1.0).abs() <= tol
}

/// Rotation, translation and per-axis scale placing a canonical shape in the world.
///
/// A canonical point `x` maps to `R·(s ⊙ x) + t`: scale first, then rotate,
/// then translate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose9DoF {
    pub r: Rotation,
    pub t: Vec3,
    pub s: Vec3,
}

impl Pose9DoF {
    pub fn new(r: Rotation, t: Vec3, s: Vec3) -> Result<Self> {
        if s.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "scale must be positive, got {:?}",
                s.as_slice()
            )));
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("translation is not finite".into()));
        }
        Ok(Pose9DoF { r, t, s })
    }

    pub fn identity() -> Self {
        Pose9DoF {
            r: Rotation::identity(),
            t: Vec3::zeros(),
            s: Vec3::repeat(1.0),
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Pose9DoF {
            t,
            ..Pose9DoF::identity()
        }
    }

    /// `R·(s ⊙ x) + t`.
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.r.0 * self.s.component_mul(x) + self.t
    }

    /// Linear part `R·diag(s)`.
    pub fn linear(&self) -> Mat3 {
        self.r.0 * Mat3::from_diagonal(&self.s)
    }

    /// Maps a world point back to canonical coordinates.
    pub fn inverse_apply(&self, w: &Vec3) -> Vec3 {
        (self.r.0.transpose() * (w - self.t)).component_div(&self.s)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut h = Matrix4::identity();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.linear());
        h.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.t);
        h
    }
}

/// Apply a pose: `R·(s ⊙ x) + t`.
pub fn apply_pose(p: &Pose9DoF, x: &Vec3) -> Vec3 {
    p.apply(x)
}

/// Angle of `aᵀb` in `[0, π]`.
pub fn geodesic_distance(a: &Rotation, b: &Rotation) -> f64 {
    let rel = a.0.transpose() * b.0;
    let cos = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    // atan2 on the skew part keeps precision near 0 and π where arccos does not.
    let skew = Vec3::new(
        rel[(2, 1)] - rel[(1, 2)],
        rel[(0, 2)] - rel[(2, 0)],
        rel[(1, 0)] - rel[(0, 1)],
    );
    let sin = 0.5 * skew.norm();
    sin.atan2(cos).clamp(0.0, std::f64::consts::PI)
}

/// Sorted SVD of a 3×3 matrix, `m = U·diag(σ)·Vᵀ` with `σ₁ ≥ σ₂ ≥ σ₃ ≥ 0`.
#[derive(Debug, Clone, Copy)]
pub struct Svd3 {
    pub u: Mat3,
    pub sigma: Vec3,
    pub v: Mat3,
}

pub fn svd3(m: &Mat3) -> Svd3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested Vᵀ").transpose();
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let mut out = Svd3 {
        u: Mat3::zeros(),
        sigma: Vec3::zeros(),
        v: Mat3::zeros(),
    };
    for (dst, &src) in order.iter().enumerate() {
        out.u.set_column(dst, &u.column(src));
        out.v.set_column(dst, &v.column(src));
        out.sigma[dst] = s[src];
    }
    out
}

/// Cached factors of one projection, used to pull gradients back from `R` to `M`.
#[derive(Debug, Clone, Copy)]
pub struct So3Projection {
    svd: Svd3,
    det_sign: f64,
    rotation: Rotation,
}

const EXACT_ROTATION_TOLERANCE: f64 = 8.0 * f64::EPSILON;

impl So3Projection {
    pub fn new(m: &RawMatrix) -> Result<Self> {
        if m.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
        }
        let svd = svd3(&m.0);
        if svd.sigma[1] < DEGENERATE_SINGULAR_VALUE && svd.sigma[2] < DEGENERATE_SINGULAR_VALUE {
            return Err(Error::DegenerateMatrix(svd.sigma.into()));
        }
        let det_sign = if (svd.u * svd.v.transpose()).determinant() < 0.0 {
            -1.0
        } else {
            1.0
        };
        // Rotations map to themselves bit for bit.
        let r = if is_rotation(&m.0, EXACT_ROTATION_TOLERANCE) {
            m.0
        } else {
            svd.u * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, det_sign)) * svd.v.transpose()
        };
        Ok(So3Projection {
            svd,
            det_sign,
            rotation: Rotation(r),
        })
    }

    pub fn rotation(&self) -> Rotation {
        self.rotation
    }

    pub fn singular_values(&self) -> Vec3 {
        self.svd.sigma
    }

    /// Given `∂L/∂R`, returns `∂L/∂M`.
    ///
    /// With `P = Uᵀ dM V` and `Σ' = diag(1, 1, d)`, the differential is
    /// `dR = U X Vᵀ`, where `X` is antisymmetric with
    /// `X_ij = (P_ij − P_ji)/(σ_i + σ_j)` on pairs sharing the same `Σ'`
    /// entry, and symmetric with `X_ij = (P_ij + P_ji)/(σ_i − σ_j)` on the
    /// pairs touching a flipped third axis (`d = −1`).
    pub fn backprop(&self, grad_r: &Mat3) -> Mat3 {
        let Svd3 { u, sigma, v } = self.svd;
        let h = u.transpose() * grad_r * v;
        let diag = [1.0, 1.0, self.det_sign];
        let mut y = Mat3::zeros();
        for i in 0..3 {
            for j in (i + 1)..3 {
                if diag[i] == diag[j] {
                    let val = (h[(i, j)] - h[(j, i)]) / (sigma[i] + sigma[j]);
                    y[(i, j)] = val;
                    y[(j, i)] = -val;
                } else {
                    let val = (h[(i, j)] + h[(j, i)]) / (sigma[i] - sigma[j]);
                    y[(i, j)] = val;
                    y[(j, i)] = val;
                }
            }
        }
        u * y * v.transpose()
    }
}

/// Unconstrained pose parameters: a raw 3×3 matrix projected onto SO(3)
/// when used, a translation and a per-axis scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseParams {
    pub m: RawMatrix,
    pub t: Vec3,
    pub s: Vec3,
}

impl PoseParams {
    pub fn from_pose(p: &Pose9DoF) -> Self {
        PoseParams {
            m: RawMatrix(p.r.0),
            t: p.t,
            s: p.s,
        }
    }

    pub fn projection(&self) -> Result<So3Projection> {
        So3Projection::new(&self.m)
    }

    /// Pose with the projected rotation. The scale is taken as is, even if a
    /// step has pushed a component to zero or below.
    pub fn pose_with(&self, proj: &So3Projection) -> Pose9DoF {
        Pose9DoF {
            r: proj.rotation,
            t: self.t,
            s: self.s,
        }
    }

    pub fn to_pose(&self) -> Result<Pose9DoF> {
        let proj = self.projection()?;
        Pose9DoF::new(proj.rotation, self.t, self.s)
    }
}

/// Gradient with respect to one pose: matrix part, translation, scale.
///
/// Depending on the producer, `m` holds `∂L/∂R` or `∂L/∂M`; see
/// [`PoseGrad::through_projection`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseGrad {
    pub m: Mat3,
    pub t: Vec3,
    pub s: Vec3,
}

impl Default for PoseGrad {
    fn default() -> Self {
        PoseGrad {
            m: Mat3::zeros(),
            t: Vec3::zeros(),
            s: Vec3::zeros(),
        }
    }
}

impl PoseGrad {
    /// Converts a gradient in `R` into one in the raw matrix `M`.
    pub fn through_projection(self, proj: &So3Projection) -> PoseGrad {
        PoseGrad {
            m: proj.backprop(&self.m),
            ..self
        }
    }

    pub fn scaled(self, k: f64) -> PoseGrad {
        PoseGrad {
            m: self.m * k,
            t: self.t * k,
            s: self.s * k,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.m.iter().chain(self.t.iter()).chain(self.s.iter()).all(|&v| v == 0.0)
    }
}

impl std::ops::AddAssign for PoseGrad {
    fn add_assign(&mut self, o: PoseGrad) {
        self.m += o.m;
        self.t += o.t;
        self.s += o.s;
    }
}

/// Nearest rotation to `m` in Frobenius norm: `U·diag(1, 1, det(UVᵀ))·Vᵀ`.
pub fn project_to_so3(m: &RawMatrix) -> Result<Rotation> {
    So3Projection::new(m).map(|p| p.rotation)
}
