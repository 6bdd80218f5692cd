//! Planes and lines, point distances to them, and the distance Jacobian rows
//! used as vector-field inequalities.
//!
//! Every row is returned in the canonical form `coeffs · q̇ ≤ bound`.

use nalgebra::{Matrix3xX, Vector3};

use crate::controller::{ConstraintRow, RowKind};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Distances below this make the point-to-line gradient undefined.
pub const SINGULAR_DISTANCE: f64 = 1e-9;

/// Plane `{ p : n·p = d }` with unit normal `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane<T: Real = f64> {
    pub normal: Vector3<T>,
    pub offset: T,
}

impl<T: Real> Plane<T> {
    /// Builds a plane, normalizing `normal` and scaling `offset` to match.
    pub fn new(normal: Vector3<T>, offset: T) -> Self {
        let norm = normal.norm();
        Self {
            normal: normal / norm,
            offset: offset / norm,
        }
    }

    /// Plane with the given unit normal passing through `point`.
    pub fn through(normal: Vector3<T>, point: &Vector3<T>) -> Self {
        let normal = normal.normalize();
        Self {
            offset: normal.dot(point),
            normal,
        }
    }

    /// Parameter vector `[n; d]`.
    pub fn params(&self) -> nalgebra::Vector4<T> {
        nalgebra::Vector4::new(self.normal.x, self.normal.y, self.normal.z, self.offset)
    }
}

/// Infinite line, optionally thickened into a cylinder of `radius`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line<T: Real = f64> {
    pub point: Vector3<T>,
    pub direction: Vector3<T>,
    pub radius: T,
}

impl<T: Real> Line<T> {
    pub fn new(point: Vector3<T>, direction: Vector3<T>, radius: T) -> Self {
        Self {
            point,
            direction: direction.normalize(),
            radius,
        }
    }

    /// Component of `t - point` orthogonal to the line direction.
    pub fn radial(&self, t: &Vector3<T>) -> Vector3<T> {
        let rel = t - self.point;
        rel - self.direction * self.direction.dot(&rel)
    }
}

/// Signed distance, positive on the side the normal points to.
pub fn point_plane_distance<T: Real>(t: &Vector3<T>, plane: &Plane<T>) -> T {
    plane.normal.dot(t) - plane.offset
}

/// Deterministic point-to-plane VFI: `-nᵀJ_t q̇ ≤ η (d - d_safe)`.
pub fn point_plane_vfi_row<T: Real>(
    t: &Vector3<T>,
    jac_t: &Matrix3xX<T>,
    plane: &Plane<T>,
    d_safe: T,
    eta: T,
) -> ConstraintRow<T> {
    let distance = point_plane_distance(t, plane);
    let coeffs = -(jac_t.transpose() * plane.normal);
    ConstraintRow::new(coeffs, eta * (distance - d_safe), RowKind::Hard).with_distance(distance)
}

/// Euclidean distance from `t` to the (infinite) line axis.
pub fn point_line_distance<T: Real>(t: &Vector3<T>, line: &Line<T>) -> T {
    (t - line.point).cross(&line.direction).norm()
}

/// Point-to-line VFI `-J_d q̇ ≤ η (d - d_safe)`, flagged slack-eligible.
///
/// `d_safe` is the full clearance measured from the axis; callers add the
/// cylinder radius themselves.
pub fn point_line_vfi_row<T: Real>(
    t: &Vector3<T>,
    jac_t: &Matrix3xX<T>,
    line: &Line<T>,
    d_safe: T,
    eta: T,
) -> Result<ConstraintRow<T>> {
    let radial = line.radial(t);
    let distance = radial.norm();
    if distance.as_f64() < SINGULAR_DISTANCE {
        return Err(Error::SingularDistance(distance.as_f64()));
    }
    let jac_d = jac_t.transpose() * (radial / distance);
    Ok(
        ConstraintRow::new(-jac_d, eta * (distance - d_safe), RowKind::Slack)
            .with_distance(distance),
    )
}
