//! Pinhole camera model in the KITTI rectified camera frame
//! (x right, y down, z forward) plus oriented 3D boxes.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point at depth {0} is not in front of the camera")]
    NonPositiveDepth(f64),
    #[error("box corner at depth {0} lies behind the camera")]
    BehindCamera(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
}

/// A point in the camera frame, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

/// Pinhole intrinsics.
///
/// The optional `translation` holds the fourth column of a KITTI projection
/// matrix `P = [[fx, 0, cu, tx], [0, fy, cv, ty], [0, 0, 1, tz]]`. With a
/// zero translation the model reduces to `u = cu + fx * x / z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cu: f64,
    pub cv: f64,
    pub width: u32,
    pub height: u32,
    pub translation: [f64; 3],
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cu: f64, cv: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cu,
            cv,
            width,
            height,
            translation: [0.0; 3],
        };
        k.validate()?;
        Ok(k)
    }

    pub fn with_translation(mut self, translation: [f64; 3]) -> Self {
        self.translation = translation;
        self
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics("image size must be positive"));
        }
        if !(self.cu.is_finite() && self.cv.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics("principal point must be finite"));
        }
        Ok(())
    }

    /// Effective depth seen by the projection (`z + tz`).
    #[inline]
    pub fn projective_depth(&self, z: f64) -> f64 {
        z + self.translation[2]
    }

    /// Projects a camera-frame point to pixel coordinates.
    pub fn project(&self, p: Point3) -> Result<(f64, f64), GeometryError> {
        let w = self.projective_depth(p.z);
        if !(p.z > 0.0 && w > 0.0) {
            return Err(GeometryError::NonPositiveDepth(p.z));
        }
        let [tx, ty, _] = self.translation;
        let u = (self.fx * p.x + self.cu * p.z + tx) / w;
        let v = (self.fy * p.y + self.cv * p.z + ty) / w;
        Ok((u, v))
    }

    /// Inverse of [`project`](Self::project) for a known depth `z`.
    pub fn backproject(&self, u: f64, v: f64, z: f64) -> Result<Point3, GeometryError> {
        let w = self.projective_depth(z);
        if !(z > 0.0 && w > 0.0) {
            return Err(GeometryError::NonPositiveDepth(z));
        }
        let [tx, ty, _] = self.translation;
        let x = (u * w - self.cu * z - tx) / self.fx;
        let y = (v * w - self.cv * z - ty) / self.fy;
        Ok(Point3::new(x, y, z))
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let r = a.rem_euclid(two_pi);
    if r > PI {
        r - two_pi
    } else {
        r
    }
}

/// Viewing-ray angle of a point on the XZ plane, measured from the optical axis.
#[inline]
pub fn ray_angle(center: Point3) -> f64 {
    center.x.atan2(center.z)
}

/// Converts egocentric yaw to the allocentric angle `alpha = yaw - atan2(x, z)`.
pub fn egocentric_to_allocentric(yaw: f64, center: Point3) -> f64 {
    wrap_angle(yaw - ray_angle(center))
}

pub fn allocentric_to_egocentric(alpha: f64, center: Point3) -> f64 {
    wrap_angle(alpha + ray_angle(center))
}

/// Physical extents of a cuboid: width, height and length in meters.
///
/// At zero yaw the length runs along the camera x axis, the width along z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Size3 {
    pub w: f64,
    pub h: f64,
    pub l: f64,
}

impl Size3 {
    pub const fn new(w: f64, h: f64, l: f64) -> Self {
        Self { w, h, l }
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.l > 0.0
    }

    pub fn volume(&self) -> f64 {
        self.w * self.h * self.l
    }
}

/// Annotation-only attributes carried by ground-truth boxes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObjectMeta {
    /// Fraction of the object leaving the image, in `[0, 1]`.
    pub truncation: f64,
    /// 0 visible, 1 partly occluded, 2 largely occluded, 3 unknown, -1 unset.
    pub occlusion: i8,
    /// Annotated allocentric angle, kept so label files round-trip.
    pub alpha: Option<f64>,
    /// Annotated 2D box, kept so label files round-trip.
    pub bbox: Option<Box2D>,
    /// Original class string when it is not one of the detected classes.
    pub label: Option<String>,
}

/// Oriented cuboid. `center` is the geometric center, not KITTI's bottom center.
#[derive(Debug, Clone, PartialEq)]
pub struct Box3D {
    pub center: Point3,
    pub size: Size3,
    /// Egocentric rotation about the camera y axis, in `(-pi, pi]`.
    pub yaw: f64,
    pub class_id: usize,
    pub score: Option<f64>,
    pub meta: Option<ObjectMeta>,
}

impl Box3D {
    pub fn new(center: Point3, size: Size3, yaw: f64, class_id: usize) -> Self {
        Self {
            center,
            size,
            yaw: wrap_angle(yaw),
            class_id,
            score: None,
            meta: None,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    pub fn with_meta(mut self, meta: ObjectMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn is_valid(&self) -> bool {
        self.size.is_valid()
            && self.yaw > -PI
            && self.yaw <= PI
            && self.score.map_or(true, |s| (0.0..=1.0).contains(&s))
    }

    pub fn truncation(&self) -> f64 {
        self.meta.as_ref().map_or(0.0, |m| m.truncation)
    }

    pub fn occlusion(&self) -> i8 {
        self.meta.as_ref().map_or(0, |m| m.occlusion)
    }

    /// Bottom (largest y) and top (smallest y) of the box.
    pub fn y_bottom(&self) -> f64 {
        self.center.y + 0.5 * self.size.h
    }

    pub fn y_top(&self) -> f64 {
        self.center.y - 0.5 * self.size.h
    }

    /// Depth of the nearest corner.
    pub fn nearest_depth(&self) -> f64 {
        box3d_corners(self)
            .iter()
            .map(|c| c.z)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn allocentric(&self) -> f64 {
        egocentric_to_allocentric(self.yaw, self.center)
    }
}

/// Corner signs `(along length, along height, along width)` in output order.
///
/// Bottom face (`+y`, larger y is lower in the scene) first, then the top face
/// in the same order. Each face is counterclockwise when viewed from `+y`.
pub const CORNER_SIGNS: [[f64; 3]; 8] = [
    [1.0, 1.0, 1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, 1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, -1.0, -1.0],
    [-1.0, -1.0, -1.0],
    [-1.0, -1.0, 1.0],
];

/// Rotates a box-local offset by `yaw` about the y axis.
#[inline]
pub fn rotate_y(yaw: f64, local: [f64; 3]) -> [f64; 3] {
    let (s, c) = yaw.sin_cos();
    [c * local[0] + s * local[2], local[1], -s * local[0] + c * local[2]]
}

pub fn corners_of(center: Point3, size: Size3, yaw: f64) -> [Point3; 8] {
    let half = [0.5 * size.l, 0.5 * size.h, 0.5 * size.w];
    let mut out = [Point3::default(); 8];
    for (slot, sign) in out.iter_mut().zip(CORNER_SIGNS.iter()) {
        let local = [sign[0] * half[0], sign[1] * half[1], sign[2] * half[2]];
        let r = rotate_y(yaw, local);
        *slot = Point3::new(center.x + r[0], center.y + r[1], center.z + r[2]);
    }
    out
}

/// The eight corners of a box, ordered as [`CORNER_SIGNS`].
pub fn box3d_corners(b: &Box3D) -> [Point3; 8] {
    corners_of(b.center, b.size, b.yaw)
}

/// Axis-aligned image rectangle, corner form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2D {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl Box2D {
    pub const fn new(u_min: f64, v_min: f64, u_max: f64, v_max: f64) -> Self {
        Self {
            u_min,
            v_min,
            u_max,
            v_max,
        }
    }

    pub fn from_center_size(cu: f64, cv: f64, w: f64, h: f64) -> Self {
        Self::new(cu - 0.5 * w, cv - 0.5 * h, cu + 0.5 * w, cv + 0.5 * h)
    }

    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.u_min + self.u_max), 0.5 * (self.v_min + self.v_max))
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.u_min && u <= self.u_max && v >= self.v_min && v <= self.v_max
    }

    pub fn clamp_to(&self, width: f64, height: f64) -> Box2D {
        Box2D::new(
            self.u_min.clamp(0.0, width),
            self.v_min.clamp(0.0, height),
            self.u_max.clamp(0.0, width),
            self.v_max.clamp(0.0, height),
        )
    }

    pub fn intersection(&self, o: &Box2D) -> f64 {
        let w = self.u_max.min(o.u_max) - self.u_min.max(o.u_min);
        let h = self.v_max.min(o.v_max) - self.v_min.max(o.v_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

/// Tight 2D bounds of a box's projected corners.
///
/// With `clamp` set the result is clipped to the image rectangle.
pub fn project_box_to_2d(k: &CameraIntrinsics, b: &Box3D, clamp: bool) -> Result<Box2D, GeometryError> {
    let mut out = Box2D::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for c in box3d_corners(b) {
        if !(c.z > 0.0) {
            return Err(GeometryError::BehindCamera(c.z));
        }
        let (u, v) = k.project(c)?;
        out.u_min = out.u_min.min(u);
        out.v_min = out.v_min.min(v);
        out.u_max = out.u_max.max(u);
        out.v_max = out.v_max.max(v);
    }
    if clamp {
        out = out.clamp_to(k.width as f64, k.height as f64);
    }
    Ok(out)
}
