//! Training losses as plain scalar maps with analytic gradients.

use crate::camera::{corners_of, Box2D, Box3D, CameraIntrinsics, Point3, Size3};
use crate::classes::ClassPrior;
use crate::viewport::{view_box_from_box, VirtualViewSpec};

use super::{
    decode_2d, encode_2d, encode_3d, sigmoid, softplus, Anchor, AnchorState, CodecError, RawDetection, Theta3d,
};

/// Focal loss on a probability. `alpha` weights the positive class.
pub fn focal_loss(p: f64, y: bool, gamma: f64, alpha: f64) -> f64 {
    let (pt, at) = if y { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
    if pt >= 1.0 {
        return 0.0;
    }
    -at * (1.0 - pt).powf(gamma) * pt.ln()
}

/// `d focal_loss / d p`.
pub fn focal_loss_grad(p: f64, y: bool, gamma: f64, alpha: f64) -> f64 {
    let (pt, at, sign) = if y { (p, alpha, 1.0) } else { (1.0 - p, 1.0 - alpha, -1.0) };
    let q = 1.0 - pt;
    // d/dpt of -(1-pt)^g ln pt
    let mut d = -q.powf(gamma) / pt;
    if gamma != 0.0 {
        d += gamma * q.powf(gamma - 1.0) * pt.ln();
    }
    sign * at * d
}

pub fn huber(x: f64, delta: f64) -> f64 {
    let a = x.abs();
    if a <= delta {
        0.5 * x * x
    } else {
        delta * (a - 0.5 * delta)
    }
}

pub fn huber_grad(x: f64, delta: f64) -> f64 {
    x.clamp(-delta, delta)
}

pub fn smooth_l1(x: f64, beta: f64) -> f64 {
    let a = x.abs();
    if a < beta {
        0.5 * x * x / beta
    } else {
        a - 0.5 * beta
    }
}

/// Cross-entropy between `sigmoid(zeta)` and the target `exp(-loss / T)`.
pub fn confidence_target_loss(zeta: f64, detached_loss: f64, temperature: f64) -> f64 {
    let t = target_confidence(detached_loss, temperature);
    softplus(zeta) - t * zeta
}

pub fn confidence_target_loss_grad(zeta: f64, detached_loss: f64, temperature: f64) -> f64 {
    sigmoid(zeta) - target_confidence(detached_loss, temperature)
}

fn target_confidence(loss: f64, temperature: f64) -> f64 {
    (-loss / temperature).exp().clamp(0.0, 1.0)
}

/// Parameter groups of the 3D regression vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Center,
    Depth,
    Size,
    Rotation,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [ParamGroup::Center, ParamGroup::Depth, ParamGroup::Size, ParamGroup::Rotation];

    /// Positions in [`Theta3d::to_array`] order.
    pub fn indices(self) -> &'static [usize] {
        match self {
            ParamGroup::Center => &[0, 1],
            ParamGroup::Depth => &[2],
            ParamGroup::Size => &[3, 4, 5],
            ParamGroup::Rotation => &[6, 7],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GroupLosses {
    pub center: f64,
    pub depth: f64,
    pub size: f64,
    pub rotation: f64,
}

impl GroupLosses {
    pub fn get(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Center => self.center,
            ParamGroup::Depth => self.depth,
            ParamGroup::Size => self.size,
            ParamGroup::Rotation => self.rotation,
        }
    }

    fn set(&mut self, g: ParamGroup, v: f64) {
        match g {
            ParamGroup::Center => self.center = v,
            ParamGroup::Depth => self.depth = v,
            ParamGroup::Size => self.size = v,
            ParamGroup::Rotation => self.rotation = v,
        }
    }

    pub fn total(&self) -> f64 {
        self.center + self.depth + self.size + self.rotation
    }
}

/// What is needed to turn a 3D regression vector into camera-frame corners.
#[derive(Debug, Clone, Copy)]
pub struct LiftContext<'a> {
    pub k: &'a CameraIntrinsics,
    pub spec: &'a VirtualViewSpec,
    pub prior: &'a ClassPrior,
    /// Decoded 2D box center, virtual pixels.
    pub box2d_center: (f64, f64),
}

/// Corners and their Jacobian (24 x 8, row `3 * corner + axis`).
struct Lifted {
    corners: [[f64; 3]; 8],
    jac: [[f64; 8]; 24],
}

impl LiftContext<'_> {
    /// Regression vector that lifts exactly onto `gt`.
    pub fn gt_theta(&self, gt: &Box3D) -> Result<Theta3d, CodecError> {
        let vb = view_box_from_box(gt, self.spec, self.k).map_err(|e| CodecError::Lift(e.to_string()))?;
        encode_3d(&vb, self.prior, self.box2d_center)
    }

    fn lift(&self, t: &Theta3d, with_jac: bool) -> Lifted {
        let k = self.k;
        let (su, sv) = self.spec.source_step();
        let us = self.spec.crop.u_min + (self.box2d_center.0 + t.du) * su;
        let vs = self.spec.crop.v_min + (self.box2d_center.1 + t.dv) * sv;
        let z = self.spec.viewport.z + self.prior.mu_z + self.prior.sigma_z * t.dz;
        let w = k.projective_depth(z);
        let [tx, ty, _] = k.translation;
        let x = (us * w - k.cu * z - tx) / k.fx;
        let y = (vs * w - k.cv * z - ty) / k.fy;
        let size = Size3::new(
            self.prior.size.w * t.dw.exp(),
            self.prior.size.h * t.dh.exp(),
            self.prior.size.l * t.dd.exp(),
        );
        let alpha = t.rx.atan2(t.rz);
        let yaw = alpha + x.atan2(z);
        let pts = corners_of(Point3::new(x, y, z), size, yaw);
        let mut corners = [[0.0; 3]; 8];
        for (c, p) in corners.iter_mut().zip(pts.iter()) {
            *c = [p.x, p.y, p.z];
        }
        let mut jac = [[0.0; 8]; 24];
        if !with_jac {
            return Lifted { corners, jac };
        }

        // center and yaw w.r.t. each parameter
        let r2 = x * x + z * z;
        let (dyaw_dx, dyaw_dz) = (z / r2, -x / r2);
        let rr = t.rx * t.rx + t.rz * t.rz;
        let mut dc = [[0.0; 3]; 8];
        let mut dyaw = [0.0; 8];
        dc[0][0] = su * w / k.fx;
        dc[1][1] = sv * w / k.fy;
        dc[2] = [
            self.prior.sigma_z * (us - k.cu) / k.fx,
            self.prior.sigma_z * (vs - k.cv) / k.fy,
            self.prior.sigma_z,
        ];
        for p in 0..3 {
            dyaw[p] = dyaw_dx * dc[p][0] + dyaw_dz * dc[p][2];
        }
        dyaw[6] = t.rz / rr;
        dyaw[7] = -t.rx / rr;

        let (s, c) = yaw.sin_cos();
        let half = [0.5 * size.l, 0.5 * size.h, 0.5 * size.w];
        for (i, sign) in crate::camera::CORNER_SIGNS.iter().enumerate() {
            let (lx, ly, lz) = (sign[0] * half[0], sign[1] * half[1], sign[2] * half[2]);
            let drot_dyaw = [-s * lx + c * lz, 0.0, -c * lx - s * lz];
            for p in 0..8 {
                for a in 0..3 {
                    jac[3 * i + a][p] = dc[p][a] + drot_dyaw[a] * dyaw[p];
                }
            }
            // log-size parameters scale the local offsets
            jac[3 * i][3] = s * lz;
            jac[3 * i + 2][3] = c * lz;
            jac[3 * i + 1][4] = ly;
            jac[3 * i][5] = c * lx;
            jac[3 * i + 2][5] = -s * lx;
        }
        Lifted { corners, jac }
    }
}

fn mix(gt: &Theta3d, pred: &Theta3d, g: ParamGroup) -> Theta3d {
    let mut a = gt.to_array();
    let p = pred.to_array();
    for &i in g.indices() {
        a[i] = p[i];
    }
    Theta3d::from_array(a)
}

fn group_eval(
    pred: &Theta3d,
    gt: &Box3D,
    ctx: &LiftContext,
    delta: f64,
    with_grad: bool,
) -> Result<(GroupLosses, [f64; 8]), CodecError> {
    let gt_theta = ctx.gt_theta(gt)?;
    let target = ctx.lift(&gt_theta, false).corners;
    let mut losses = GroupLosses::default();
    let mut grad = [0.0; 8];
    for g in ParamGroup::ALL {
        let lifted = ctx.lift(&mix(&gt_theta, pred, g), with_grad);
        let mut l = 0.0;
        for i in 0..8 {
            for a in 0..3 {
                let d = lifted.corners[i][a] - target[i][a];
                l += huber(d, delta);
                if with_grad {
                    let hg = huber_grad(d, delta);
                    for &p in g.indices() {
                        grad[p] += hg * lifted.jac[3 * i + a][p];
                    }
                }
            }
        }
        losses.set(g, l);
    }
    Ok((losses, grad))
}

/// Disentangled corner loss: each group is scored with every other group
/// held at its ground-truth value.
pub fn lifting_disentangled_loss(
    pred: &Theta3d,
    gt: &Box3D,
    ctx: &LiftContext,
    huber_delta: f64,
) -> Result<GroupLosses, CodecError> {
    group_eval(pred, gt, ctx, huber_delta, false).map(|r| r.0)
}

/// Loss and gradient of the summed group losses w.r.t. `pred`, in
/// [`Theta3d::to_array`] order. Each entry only receives signal from its own group.
pub fn lifting_disentangled_grad(
    pred: &Theta3d,
    gt: &Box3D,
    ctx: &LiftContext,
    huber_delta: f64,
) -> Result<(GroupLosses, [f64; 8]), CodecError> {
    group_eval(pred, gt, ctx, huber_delta, true)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub conf_2d: f64,
    pub reg_2d: f64,
    pub reg_3d: f64,
    pub conf_3d: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            conf_2d: 1.0,
            reg_2d: 0.5,
            reg_3d: 1.0,
            conf_3d: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub huber_delta: f64,
    pub temperature: f64,
    pub smooth_l1_beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            huber_delta: 3.0,
            temperature: 1.0,
            smooth_l1_beta: 1.0 / 9.0,
        }
    }
}

/// One view's head outputs with their assignment and ground truth.
#[derive(Debug, Clone, Copy)]
pub struct ViewLossInput<'a> {
    pub anchors: &'a [Anchor],
    pub outputs: &'a [RawDetection],
    pub assignment: &'a [AnchorState],
    /// Ground-truth boxes in virtual pixels.
    pub gt_2d: &'a [Box2D],
    /// Ground truth in the camera frame, same order as `gt_2d`.
    pub gt_3d: &'a [Box3D],
    pub k: &'a CameraIntrinsics,
    pub spec: &'a VirtualViewSpec,
    pub priors: &'a [ClassPrior],
}

/// Weighted contributions, each normalized by the positive count.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub conf_2d: f64,
    pub reg_2d: f64,
    pub reg_3d: f64,
    pub conf_3d: f64,
    pub total: f64,
    pub n_positive: usize,
}

pub fn total_loss(views: &[ViewLossInput], cfg: &LossConfig) -> Result<LossBreakdown, CodecError> {
    let mut raw = [0.0f64; 4];
    let mut n_pos = 0usize;
    for v in views {
        for ((anchor, out), state) in v.anchors.iter().zip(v.outputs).zip(v.assignment) {
            let pos = match *state {
                AnchorState::Ignore => continue,
                AnchorState::Negative => None,
                AnchorState::Positive(i) => {
                    let class = v.gt_3d[i].class_id;
                    if class >= out.n_classes() || class >= v.priors.len() {
                        continue;
                    }
                    Some((i, class))
                }
            };
            for (c, &z) in out.zeta_2d.iter().enumerate() {
                let y = pos.is_some_and(|(_, pc)| pc == c);
                raw[0] += focal_loss(sigmoid(z), y, cfg.focal_gamma, cfg.focal_alpha);
            }
            let Some((i, class)) = pos else { continue };
            n_pos += 1;
            let t2 = encode_2d(anchor, &v.gt_2d[i])?;
            raw[1] += out
                .theta_2d
                .to_array()
                .iter()
                .zip(t2.to_array())
                .map(|(p, t)| smooth_l1(p - t, cfg.smooth_l1_beta))
                .sum::<f64>();
            let ctx = LiftContext {
                k: v.k,
                spec: v.spec,
                prior: &v.priors[class],
                box2d_center: decode_2d(anchor, &out.theta_2d).center(),
            };
            let head = &out.heads[class];
            let l3 = lifting_disentangled_loss(&head.theta, &v.gt_3d[i], &ctx, cfg.huber_delta)?.total();
            raw[2] += l3;
            raw[3] += confidence_target_loss(head.zeta, l3, cfg.temperature);
        }
    }
    let norm = n_pos.max(1) as f64;
    let w = cfg.weights;
    let mut b = LossBreakdown {
        conf_2d: w.conf_2d * raw[0] / norm,
        reg_2d: w.reg_2d * raw[1] / norm,
        reg_3d: w.reg_3d * raw[2] / norm,
        conf_3d: w.conf_3d * raw[3] / norm,
        total: 0.0,
        n_positive: n_pos,
    };
    b.total = b.conf_2d + b.reg_2d + b.reg_3d + b.conf_3d;
    Ok(b)
}
