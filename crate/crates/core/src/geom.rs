//! Rigid-body algebra on SE(3) and its tangent space se(3).
//!
//! Twists are ordered rotation first: `(w1, w2, w3, v1, v2, v3)`.

use nalgebra::{Matrix3, Matrix3x6, Matrix4, Rotation3, Unit, Vector3};
use rand::Rng;

/// A point in R^3.
pub type Point = [f64; 3];

/// Below this rotation magnitude the Rodrigues coefficients use their Taylor expansions.
const SMALL_ANGLE: f64 = 1e-8;

/// Orthonormality defect above which a rotation block is re-projected onto SO(3).
const ORTHO_DEFECT: f64 = 1e-9;

/// Coordinates of an element of se(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist(pub [f64; 6]);

impl Twist {
    pub const ZERO: Twist = Twist([0.0; 6]);

    pub fn new(omega: Vector3<f64>, v: Vector3<f64>) -> Self {
        Twist([omega.x, omega.y, omega.z, v.x, v.y, v.z])
    }

    /// Unit twist along generator `k`, scaled by `s`.
    pub fn basis(k: usize, s: f64) -> Self {
        let mut xi = [0.0; 6];
        xi[k] = s;
        Twist(xi)
    }

    pub fn omega(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn v(&self) -> Vector3<f64> {
        Vector3::new(self.0[3], self.0[4], self.0[5])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl std::ops::Neg for Twist {
    type Output = Twist;
    fn neg(self) -> Twist {
        Twist(self.0.map(|x| -x))
    }
}

/// An element of SE(3): `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    /// Rotation by `angle` radians about `axis`, followed by translation `t`.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, t: Vector3<f64>) -> Self {
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        RigidTransform::from_parts(*rot.matrix(), t)
    }

    pub fn apply(&self, p: &Point) -> Point {
        let q = self.rotation * Vector3::new(p[0], p[1], p[2]) + self.translation;
        [q.x, q.y, q.z]
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let mut out = RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        };
        out.reorthonormalize();
        out
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Max-abs entry of `RᵀR - I`.
    pub fn orthonormality_defect(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }

    /// Polar projection of the rotation block onto SO(3) when it has drifted.
    pub fn reorthonormalize(&mut self) {
        if self.orthonormality_defect() <= ORTHO_DEFECT {
            return;
        }
        let svd = self.rotation.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * vt;
        }
        self.rotation = r;
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Rotation angle (radians) and translation distance between two transforms.
    pub fn error_to(&self, other: &RigidTransform) -> (f64, f64) {
        let rel = RigidTransform::from_parts(
            self.rotation.transpose() * other.rotation,
            Vector3::zeros(),
        );
        (
            rel.rotation_angle(),
            (self.translation - other.translation).norm(),
        )
    }

    /// Random transform with rotation angle uniform in `[0, max_angle]` about a uniform axis
    /// and translation of magnitude uniform in `[0, max_trans]` in a uniform direction.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_angle: f64, max_trans: f64) -> Self {
        let axis = random_unit_vector(rng);
        let dir = random_unit_vector(rng);
        let angle = rng.random::<f64>() * max_angle;
        let trans = rng.random::<f64>() * max_trans;
        RigidTransform::from_axis_angle(axis, angle, dir * trans)
    }
}

fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Uniformly distributed rotation (Haar measure on SO(3)).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    // Shoemake's subgroup algorithm.
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let tau = std::f64::consts::TAU;
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let q = nalgebra::Quaternion::new(
        b * (tau * u3).cos(),
        a * (tau * u2).sin(),
        a * (tau * u2).cos(),
        b * (tau * u3).sin(),
    );
    *nalgebra::UnitQuaternion::from_quaternion(q)
        .to_rotation_matrix()
        .matrix()
}

/// Cross-product matrix: `skew(a) * b == a × b`.
pub fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Exponential map se(3) -> SE(3) in closed form.
pub fn se3_exp(xi: &Twist) -> RigidTransform {
    let omega = xi.omega();
    let v = xi.v();
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let (a, b, c) = if theta < SMALL_ANGLE {
        (
            1.0 - theta2 / 6.0,
            0.5 - theta2 / 24.0,
            1.0 / 6.0 - theta2 / 120.0,
        )
    } else {
        let (s, co) = theta.sin_cos();
        (s / theta, (1.0 - co) / theta2, (theta - s) / (theta2 * theta))
    };
    let w = skew(&omega);
    let w2 = w * w;
    let id = Matrix3::identity();
    RigidTransform {
        rotation: id + w * a + w2 * b,
        translation: (id + w * b + w2 * c) * v,
    }
}

pub fn transform_points(g: &RigidTransform, pts: &[Point]) -> Vec<Point> {
    pts.iter().map(|p| g.apply(p)).collect()
}

/// Derivative of `se3_exp(ξ)·p` with respect to `ξ` at `ξ = 0`: `[-[p]×, I]`.
pub fn point_pose_jacobian(p: &Point) -> Matrix3x6<f64> {
    let s = -skew(&Vector3::new(p[0], p[1], p[2]));
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&s);
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
    j
}
