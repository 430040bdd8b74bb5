//! Detection-head coding: anchors, the per-anchor output vector, its decoding
//! into 2D and 3D boxes, the exact inverse encoding, anchor assignment and
//! the training losses.
//!
//! Decoding follows the head layout:
//!
//! * 2D: `(u_b, v_b) = (u_g + du * w_a, v_g + dv * h_a)`,
//!   `(w_b, h_b) = (w_a e^dw, h_a e^dh)`.
//! * 3D: projected center `(u_b + Du, v_b + Dv)`, relative depth
//!   `mu_z + sigma_z dz`, size `(W0 e^dW, H0 e^dH, L0 e^dD)` and allocentric
//!   angle `atan2(r_x, r_z)`.

mod anchors;
mod assign;
mod loss;
mod wire;

pub use anchors::{
    anchor_at, anchor_shapes, anchors_for_view, generate_anchors, grid_size, Anchor, ANCHORS_PER_CELL,
    ASPECT_RATIOS, LEVEL_STRIDES, SCALES_PER_LEVEL,
};
pub use assign::{assign_ground_truth, AnchorState, AssignConfig};
pub use loss::{
    confidence_target_loss, confidence_target_loss_grad, focal_loss, focal_loss_grad, huber, huber_grad,
    lifting_disentangled_grad, lifting_disentangled_loss, smooth_l1, total_loss, GroupLosses, LiftContext,
    LossBreakdown, LossConfig, LossWeights, ParamGroup, ViewLossInput,
};
pub use wire::{read_records, write_records, WireRecord, WIRE_MAGIC, WIRE_VERSION};

use thiserror::Error;

use crate::camera::{wrap_angle, Box2D, Size3};
use crate::classes::ClassPrior;
use crate::viewport::ViewBox;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("rotation vector (r_x, r_z) is zero")]
    ZeroRotation,
    #[error("box sizes must be positive")]
    NonPositiveSize,
    #[error("stride {0} is not a feature level (expected 16 or 32)")]
    InvalidStride(u32),
    #[error("anchor (stride {stride}, col {col}, row {row}, index {index}) is outside the view grid")]
    AnchorOutOfGrid { stride: u32, col: u32, row: u32, index: u32 },
    #[error("class {0} has no head output")]
    ClassOutOfRange(usize),
    #[error("cannot express ground truth in the view: {0}")]
    Lift(String),
    #[error("malformed detection stream: {0}")]
    Wire(String),
}

/// 2D regression outputs `(du, dv, dw, dh)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Theta2d {
    pub du: f64,
    pub dv: f64,
    pub dw: f64,
    pub dh: f64,
}

impl Theta2d {
    pub fn to_array(self) -> [f64; 4] {
        [self.du, self.dv, self.dw, self.dh]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            du: a[0],
            dv: a[1],
            dw: a[2],
            dh: a[3],
        }
    }
}

/// 3D regression outputs, in head order
/// `(Du, Dv, dz, dW, dH, dD, r_x, r_z)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Theta3d {
    pub du: f64,
    pub dv: f64,
    pub dz: f64,
    pub dw: f64,
    pub dh: f64,
    pub dd: f64,
    pub rx: f64,
    pub rz: f64,
}

impl Theta3d {
    pub fn to_array(self) -> [f64; 8] {
        [self.du, self.dv, self.dz, self.dw, self.dh, self.dd, self.rx, self.rz]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        Self {
            du: a[0],
            dv: a[1],
            dz: a[2],
            dw: a[3],
            dh: a[4],
            dd: a[5],
            rx: a[6],
            rz: a[7],
        }
    }
}

/// Per-class 3D output: regression vector and 3D confidence logit.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassHead {
    pub theta: Theta3d,
    pub zeta: f64,
}

/// Everything the head emits for one anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDetection {
    /// Per-class 2D logits.
    pub zeta_2d: Vec<f64>,
    pub theta_2d: Theta2d,
    pub heads: Vec<ClassHead>,
}

impl RawDetection {
    pub fn zeros(n_classes: usize) -> Self {
        Self {
            zeta_2d: vec![0.0; n_classes],
            theta_2d: Theta2d::default(),
            heads: vec![ClassHead::default(); n_classes],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.zeta_2d.len()
    }

    pub fn is_finite(&self) -> bool {
        self.zeta_2d.iter().all(|v| v.is_finite())
            && self.theta_2d.to_array().iter().all(|v| v.is_finite())
            && self
                .heads
                .iter()
                .all(|h| h.zeta.is_finite() && h.theta.to_array().iter().all(|v| v.is_finite()))
    }
}

/// Regression targets for one positive anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Targets {
    pub class_id: usize,
    pub theta_2d: Theta2d,
    pub theta_3d: Theta3d,
}

pub fn decode_2d(anchor: &Anchor, t: &Theta2d) -> Box2D {
    let (ug, vg) = anchor.cell_center();
    let ub = ug + t.du * anchor.w;
    let vb = vg + t.dv * anchor.h;
    Box2D::from_center_size(ub, vb, anchor.w * t.dw.exp(), anchor.h * t.dh.exp())
}

pub fn encode_2d(anchor: &Anchor, b: &Box2D) -> Result<Theta2d, CodecError> {
    if !(b.width() > 0.0 && b.height() > 0.0) {
        return Err(CodecError::NonPositiveSize);
    }
    let (ug, vg) = anchor.cell_center();
    let (ub, vb) = b.center();
    Ok(Theta2d {
        du: (ub - ug) / anchor.w,
        dv: (vb - vg) / anchor.h,
        dw: (b.width() / anchor.w).ln(),
        dh: (b.height() / anchor.h).ln(),
    })
}

/// Decodes one class's 3D output relative to the decoded 2D box center.
pub fn decode_3d(
    t: &Theta3d,
    prior: &ClassPrior,
    box2d_center: (f64, f64),
    class_id: usize,
) -> Result<ViewBox, CodecError> {
    if t.rx == 0.0 && t.rz == 0.0 {
        return Err(CodecError::ZeroRotation);
    }
    Ok(ViewBox {
        center_u: box2d_center.0 + t.du,
        center_v: box2d_center.1 + t.dv,
        depth: prior.mu_z + prior.sigma_z * t.dz,
        size: Size3::new(
            prior.size.w * t.dw.exp(),
            prior.size.h * t.dh.exp(),
            prior.size.l * t.dd.exp(),
        ),
        alpha: wrap_angle(t.rx.atan2(t.rz)),
        class_id,
        score: None,
    })
}

/// Inverse of [`decode_3d`]; the rotation is encoded as the unit vector
/// `(sin alpha, cos alpha)`.
pub fn encode_3d(b: &ViewBox, prior: &ClassPrior, box2d_center: (f64, f64)) -> Result<Theta3d, CodecError> {
    if !b.size.is_valid() || !prior.is_valid() {
        return Err(CodecError::NonPositiveSize);
    }
    let (s, c) = b.alpha.sin_cos();
    Ok(Theta3d {
        du: b.center_u - box2d_center.0,
        dv: b.center_v - box2d_center.1,
        dz: (b.depth - prior.mu_z) / prior.sigma_z,
        dw: (b.size.w / prior.size.w).ln(),
        dh: (b.size.h / prior.size.h).ln(),
        dd: (b.size.l / prior.size.l).ln(),
        rx: s,
        rz: c,
    })
}

/// Encodes a ground-truth object (its 2D box and view-frame 3D box) against
/// an anchor.
pub fn encode(gt_2d: &Box2D, gt: &ViewBox, anchor: &Anchor, prior: &ClassPrior) -> Result<Targets, CodecError> {
    let theta_2d = encode_2d(anchor, gt_2d)?;
    let center = decode_2d(anchor, &theta_2d).center();
    Ok(Targets {
        class_id: gt.class_id,
        theta_2d,
        theta_3d: encode_3d(gt, prior, center)?,
    })
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Confidences {
    pub p_2d: f64,
    pub p_3d_given_2d: f64,
    pub p_3d: f64,
}

pub fn confidences(raw: &RawDetection, class_id: usize) -> Result<Confidences, CodecError> {
    let z2 = *raw.zeta_2d.get(class_id).ok_or(CodecError::ClassOutOfRange(class_id))?;
    let head = raw.heads.get(class_id).ok_or(CodecError::ClassOutOfRange(class_id))?;
    let p_2d = sigmoid(z2);
    let p_3d_given_2d = sigmoid(head.zeta);
    Ok(Confidences {
        p_2d,
        p_3d_given_2d,
        p_3d: p_2d * p_3d_given_2d,
    })
}
