//! Oriented 3D boxes, anchor-relative target encoding and rotated-box IoU.
//!
//! Boxes live in a right-handed BEV frame: x/y span the ground plane, z points
//! up, yaw is the rotation of the box length axis about z. Footprint corners
//! are generated counterclockwise starting from (+l/2, +w/2) in the box frame
//! so golden tests stay bit-stable.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Points within this distance of a clip edge are treated as on the edge,
/// which keeps near-tangent boxes from producing degenerate slivers.
const CLIP_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("non-finite value for {0}")]
    NonFinite(&'static str),
    #[error("box dimension {0} must be positive, got {1}")]
    NonPositiveDim(&'static str, f64),
    #[error("as-printed width ratio must be positive, got {0}")]
    NonPositiveWidthRatio(f64),
}

/// Wraps an angle to the half-open interval `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> Result<f64, GeometryError> {
    if !a.is_finite() {
        return Err(GeometryError::NonFinite("angle"));
    }
    let mut r = (a + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to 2*pi for inputs just below a period boundary.
    if r >= PI {
        r = -PI;
    }
    Ok(r)
}

/// Oriented 3D box: center, dimensions and heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3d {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    /// Heading in radians, stored wrapped to `[-pi, pi)`.
    pub yaw: f64,
}

impl Box3d {
    pub fn new(x: f64, y: f64, z: f64, l: f64, w: f64, h: f64, yaw: f64) -> Result<Self, GeometryError> {
        for (v, name) in [(x, "x"), (y, "y"), (z, "z")] {
            if !v.is_finite() {
                return Err(GeometryError::NonFinite(name));
            }
        }
        for (v, name) in [(l, "l"), (w, "w"), (h, "h")] {
            if !v.is_finite() {
                return Err(GeometryError::NonFinite(name));
            }
            if v <= 0.0 {
                return Err(GeometryError::NonPositiveDim(name, v));
            }
        }
        Ok(Self { x, y, z, l, w, h, yaw: wrap_angle(yaw)? })
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    pub fn footprint_area(&self) -> f64 {
        self.l * self.w
    }

    /// BEV footprint corners, counterclockwise from (+l/2, +w/2) in the box frame.
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = 0.5 * self.l;
        let hw = 0.5 * self.w;
        [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]]
            .map(|[px, py]| [self.x + c * px - s * py, self.y + s * px + c * py])
    }

    /// Vertical extent `[z - h/2, z + h/2]`.
    pub fn z_interval(&self) -> (f64, f64) {
        (self.z - 0.5 * self.h, self.z + 0.5 * self.h)
    }
}

/// The seven anchor-relative regression targets / offsets.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxDelta {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub dw: f64,
    pub dl: f64,
    pub dh: f64,
    pub dtheta: f64,
}

impl BoxDelta {
    pub fn as_array(&self) -> [f64; 7] {
        [self.dx, self.dy, self.dz, self.dw, self.dl, self.dh, self.dtheta]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Self { dx: a[0], dy: a[1], dz: a[2], dw: a[3], dl: a[4], dh: a[5], dtheta: a[6] }
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

/// Selects how the width channel is encoded.
///
/// `StandardLog` uses `log(W_gt / W)` like the other size channels, keeping the
/// all-zero target at identity. `AsPrinted` uses the raw ratio `W_gt / W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncodingMode {
    StandardLog,
    AsPrinted,
}

/// Encodes a ground-truth box against an anchor into regression targets.
///
/// Translation channels are normalized by the anchor footprint diagonal, the
/// height offset by the anchor height, sizes go through the selected ratio
/// form and the heading channel is `sin(yaw_gt - yaw_anchor)`.
pub fn encode_box(gt: &Box3d, anchor: &Box3d, mode: EncodingMode) -> BoxDelta {
    let diag = (anchor.w * anchor.w + anchor.l * anchor.l).sqrt();
    BoxDelta {
        dx: (gt.x - anchor.x) / diag,
        dy: (gt.y - anchor.y) / diag,
        dz: (gt.z - anchor.z) / anchor.h,
        dw: match mode {
            EncodingMode::StandardLog => (gt.w / anchor.w).ln(),
            EncodingMode::AsPrinted => gt.w / anchor.w,
        },
        dl: (gt.l / anchor.l).ln(),
        dh: (gt.h / anchor.h).ln(),
        dtheta: (gt.yaw - anchor.yaw).sin(),
    }
}

/// Inverts [`encode_box`]. The heading is recovered on the principal arcsin
/// branch with `dtheta` clamped to `[-1, 1]`; resolving the remaining pi
/// ambiguity is the caller's job (the direction classifier).
pub fn decode_box(delta: &BoxDelta, anchor: &Box3d, mode: EncodingMode) -> Result<Box3d, GeometryError> {
    let diag = (anchor.w * anchor.w + anchor.l * anchor.l).sqrt();
    let w = match mode {
        EncodingMode::StandardLog => anchor.w * delta.dw.exp(),
        EncodingMode::AsPrinted => {
            if delta.dw <= 0.0 {
                return Err(GeometryError::NonPositiveWidthRatio(delta.dw));
            }
            anchor.w * delta.dw
        }
    };
    Box3d::new(
        anchor.x + delta.dx * diag,
        anchor.y + delta.dy * diag,
        anchor.z + delta.dz * anchor.h,
        anchor.l * delta.dl.exp(),
        w,
        anchor.h * delta.dh.exp(),
        anchor.yaw + delta.dtheta.clamp(-1.0, 1.0).asin(),
    )
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn shoelace(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * acc.abs()
}

/// Sutherland-Hodgman clip of a convex polygon against one convex CCW clip
/// quad. Signed distances within `CLIP_EPS` of an edge count as inside.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]; 4]) -> Vec<[f64; 2]> {
    let mut current: Vec<[f64; 2]> = subject.to_vec();
    let mut next: Vec<[f64; 2]> = Vec::with_capacity(8);
    for i in 0..4 {
        if current.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % 4];
        // Scale the tolerance by edge length so it stays a distance, not a
        // cross-product magnitude.
        let edge_len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let tol = CLIP_EPS * edge_len.max(1.0);
        next.clear();
        for j in 0..current.len() {
            let p = current[j];
            let q = current[(j + 1) % current.len()];
            let dp = cross(a, b, p);
            let dq = cross(a, b, q);
            let p_in = dp >= -tol;
            let q_in = dq >= -tol;
            if p_in {
                next.push(p);
            }
            if p_in != q_in {
                let t = dp / (dp - dq);
                next.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
        std::mem::swap(&mut current, &mut next);
    }
    current
}

/// Intersection area of two convex quadrilaterals given as corner lists in
/// consistent winding order. Degenerate quads yield zero.
pub fn quad_intersection_area(a: &[[f64; 2]; 4], b: &[[f64; 2]; 4]) -> f64 {
    let area_a = shoelace(a);
    let area_b = shoelace(b);
    if area_a == 0.0 || area_b == 0.0 {
        return 0.0;
    }
    // Clipping wants a CCW clip region; flip if the caller's winding is CW.
    let (a, b) = (ensure_ccw(a), ensure_ccw(b));
    let inter = clip_convex(&a, &b);
    shoelace(&inter).min(area_a).min(area_b)
}

fn ensure_ccw(quad: &[[f64; 2]; 4]) -> [[f64; 2]; 4] {
    let mut signed = 0.0;
    for i in 0..4 {
        let p = quad[i];
        let q = quad[(i + 1) % 4];
        signed += p[0] * q[1] - q[0] * p[1];
    }
    if signed < 0.0 {
        [quad[3], quad[2], quad[1], quad[0]]
    } else {
        *quad
    }
}

/// Bird's-eye-view IoU of two boxes' rotated footprints.
///
/// Numerator and denominator both come from shoelace areas of the same
/// corner lists, so identical footprints give exactly 1.
pub fn bev_iou(a: &Box3d, b: &Box3d) -> f64 {
    let fa = a.footprint();
    let fb = b.footprint();
    let inter = quad_intersection_area(&fa, &fb);
    let union = shoelace(&fa) + shoelace(&fb) - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Full 3D IoU: footprint intersection times the vertical interval overlap.
pub fn iou_3d(a: &Box3d, b: &Box3d) -> f64 {
    let fa = a.footprint();
    let fb = b.footprint();
    let inter_bev = quad_intersection_area(&fa, &fb);
    let (alo, ahi) = a.z_interval();
    let (blo, bhi) = b.z_interval();
    let overlap_z = (ahi.min(bhi) - alo.max(blo)).max(0.0);
    let inter = inter_bev * overlap_z;
    let union = shoelace(&fa) * (ahi - alo) + shoelace(&fb) * (bhi - blo) - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}
