//! Planar mirror geometry for multipath propagation.
//!
//! A flat reflective surface is an infinite line `{p : <p, normal> = offset}`.
//! A virtual anchor (VA) is the mirror image of a physical anchor (PA) across
//! such a line, so the single-bounce path agent -> surface -> PA has the same
//! length as the direct path agent -> VA. The master virtual anchor (MVA) of a
//! surface is the mirror image of the global origin; it represents the surface
//! independently of any particular PA, which is what lets range measurements
//! from different PAs be fused into a single map feature.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// MVAs closer to the origin than this are rejected: the VA transform divides
/// by the squared MVA norm, and a surface through the origin has no MVA.
pub const MVA_EPS: f64 = 1e-6;

/// A point (or free vector) in the plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    #[inline]
    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    #[inline]
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Point2 {
    #[inline]
    fn add_assign(&mut self, rhs: Point2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Point2 {
    type Output = Point2;
    #[inline]
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    #[inline]
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    #[inline]
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2::new(v[0], v[1])
    }
}

/// A reflective surface modelled as an infinite line with unit `normal` and
/// signed `offset` from the origin along that normal.
///
/// By convention the normal points away from the origin, so `offset > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub normal: Point2,
    pub offset: f64,
}

impl Surface {
    /// Builds a surface from an arbitrary (nonzero) normal direction,
    /// normalizing it and flipping orientation if needed so the offset is
    /// positive.
    pub fn new(normal: Point2, offset: f64) -> Result<Self> {
        let len = normal.norm();
        if !(len > 0.0) || !len.is_finite() || !offset.is_finite() {
            return Err(Error::config(format!(
                "surface normal {normal:?} / offset {offset} is not usable"
            )));
        }
        let (normal, offset) = (normal * (1.0 / len), offset / len);
        if offset.abs() <= MVA_EPS / 2.0 {
            return Err(Error::DegenerateMva {
                norm: 2.0 * offset.abs(),
                eps: MVA_EPS,
            });
        }
        Ok(if offset < 0.0 {
            Surface {
                normal: -normal,
                offset: -offset,
            }
        } else {
            Surface { normal, offset }
        })
    }

    /// Signed distance of `p` from the line, positive on the far side from
    /// the origin.
    #[inline]
    pub fn signed_distance(&self, p: Point2) -> f64 {
        p.dot(self.normal) - self.offset
    }

    pub fn validate(&self) -> Result<()> {
        if (self.normal.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!(
                "surface normal {:?} is not unit length",
                self.normal
            )));
        }
        if !(self.offset > 0.0) || !self.offset.is_finite() {
            return Err(Error::config(format!(
                "surface offset {} must be positive",
                self.offset
            )));
        }
        Ok(())
    }
}

/// Mirror image of `p` across the line of `s`.
#[inline]
pub fn reflect_point(s: &Surface, p: Point2) -> Point2 {
    p + s.normal * (2.0 * (s.offset - p.dot(s.normal)))
}

/// The MVA of a surface: the mirror image of the origin, `2 * offset * normal`.
#[inline]
pub fn mva_from_surface(s: &Surface) -> Point2 {
    s.normal * (2.0 * s.offset)
}

/// Inverse of [`mva_from_surface`].
pub fn surface_from_mva(mva: Point2) -> Result<Surface> {
    let norm = mva.norm();
    if !(norm > MVA_EPS) {
        return Err(Error::DegenerateMva { norm, eps: MVA_EPS });
    }
    Ok(Surface {
        normal: mva * (1.0 / norm),
        offset: norm / 2.0,
    })
}

/// VA position of anchor `pa` for the surface represented by `mva`.
pub fn va_from_mva(mva: Point2, pa: Point2) -> Result<Point2> {
    let norm_sq = mva.norm_squared();
    if !(norm_sq.sqrt() > MVA_EPS) {
        return Err(Error::DegenerateMva {
            norm: norm_sq.sqrt(),
            eps: MVA_EPS,
        });
    }
    Ok(va_from_mva_unchecked(mva, pa))
}

/// Hot-path version of [`va_from_mva`] for particle loops.
///
/// Degenerate MVAs yield non-finite coordinates instead of an error; callers
/// treat the resulting likelihood as zero.
#[inline]
pub fn va_from_mva_unchecked(mva: Point2, pa: Point2) -> Point2 {
    let factor = 2.0 * mva.dot(pa) / mva.norm_squared() - 1.0;
    pa - mva * factor
}

/// Noise-free range between the agent and a (virtual) anchor.
#[inline]
pub fn expected_range(agent: Point2, va: Point2) -> f64 {
    agent.distance(va)
}
