//! SO(2) / SE(2) value types.
//!
//! Rotations are stored as a single wrapped angle; matrices are only
//! materialized on demand. The wrap convention is `(-π, π]`.

use std::f64::consts::{PI, TAU};
use std::fmt;

use nalgebra::{Matrix2, Vector2};

use crate::error::Se2Error;

/// Wraps an angle into `(-π, π]`, rejecting non-finite input.
pub fn wrap_angle(a: f64) -> Result<f64, Se2Error> {
    if !a.is_finite() {
        return Err(Se2Error::NonFinite(a));
    }
    Ok(wrap(a))
}

/// Unchecked wrap used on hot paths. NaN propagates.
#[inline]
pub(crate) fn wrap(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Element of SO(2).
#[derive(Clone, Copy, PartialEq, Default)]
pub struct Rotation2 {
    theta: f64,
}

impl Rotation2 {
    pub fn new(theta: f64) -> Self {
        Self { theta: wrap(theta) }
    }

    pub fn identity() -> Self {
        Self { theta: 0.0 }
    }

    #[inline]
    pub fn angle(&self) -> f64 {
        self.theta
    }

    pub fn as_matrix(&self) -> Matrix2<f64> {
        let (s, c) = self.theta.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    pub fn inverse(&self) -> Self {
        Self::new(-self.theta)
    }

    pub fn compose(&self, other: &Rotation2) -> Self {
        Self::new(self.theta + other.theta)
    }

    pub fn rotate(&self, v: &Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.theta.sin_cos();
        Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
    }

    /// `Rᵀ v`.
    pub fn unrotate(&self, v: &Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.theta.sin_cos();
        Vector2::new(c * v.x + s * v.y, -s * v.x + c * v.y)
    }
}

impl fmt::Debug for Rotation2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Rotation2({})", self.theta)
    }
}

/// Tangent increment of SO(2). The Lie algebra is one-dimensional so this
/// is a plain angle, unbounded.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct TangentScalar(pub f64);

pub fn so2_exp(xi: f64) -> Rotation2 {
    Rotation2::new(xi)
}

pub fn so2_log(r: &Rotation2) -> f64 {
    r.theta
}

/// `R ⊕ ξ = R · exp(ξ^)`.
pub fn retract(r: &Rotation2, xi: TangentScalar) -> Rotation2 {
    Rotation2::new(r.theta + xi.0)
}

/// `Log(R̃ᵢⱼᵀ Rᵢᵀ Rⱼ)`, i.e. `wrap(θⱼ − θᵢ − θ̃ᵢⱼ)`.
pub fn edge_angular_residual(ri: &Rotation2, rj: &Rotation2, measured: &Rotation2) -> f64 {
    angular_residual(ri.theta, rj.theta, measured.theta)
}

#[inline]
pub(crate) fn angular_residual(theta_i: f64, theta_j: f64, measured: f64) -> f64 {
    wrap(theta_j - theta_i - measured)
}

/// Frobenius distance between two rotation matrices, `2√2·|sin(Δθ/2)|`.
pub fn chordal_distance(a: &Rotation2, b: &Rotation2) -> f64 {
    chordal_from_angle(a.theta - b.theta)
}

#[inline]
pub fn chordal_from_angle(delta: f64) -> f64 {
    2.0 * std::f64::consts::SQRT_2 * (0.5 * delta).sin().abs()
}

/// Rigid transform in the plane.
#[derive(Clone, Copy, PartialEq, Default)]
pub struct Pose2 {
    pub t: Vector2<f64>,
    pub r: Rotation2,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            t: Vector2::new(x, y),
            r: Rotation2::new(theta),
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn theta(&self) -> f64 {
        self.r.theta
    }

    pub fn compose(&self, other: &Pose2) -> Pose2 {
        Pose2 {
            t: self.t + self.r.rotate(&other.t),
            r: self.r.compose(&other.r),
        }
    }

    pub fn inverse(&self) -> Pose2 {
        let r = self.r.inverse();
        Pose2 {
            t: -r.rotate(&self.t),
            r,
        }
    }

    /// Relative pose `self⁻¹ · other`, expressed the same way the edge
    /// residual is evaluated so that noiseless measurements give exact zeros.
    pub fn between(&self, other: &Pose2) -> Pose2 {
        Pose2 {
            t: self.r.unrotate(&(other.t - self.t)),
            r: Rotation2::new(other.r.theta - self.r.theta),
        }
    }

    pub fn transform_point(&self, p: &Vector2<f64>) -> Vector2<f64> {
        self.t + self.r.rotate(p)
    }
}

impl fmt::Debug for Pose2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pose2({}, {}, {})", self.t.x, self.t.y, self.r.theta)
    }
}
