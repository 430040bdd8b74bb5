//! 3D viewports and the virtual views they induce.
//!
//! A viewport is a rectangle parallel to the image plane at depth `z`. Its
//! projection is a crop of the source image which, rescaled to a fixed pixel
//! height, shows every object lying in the viewport plane at the same scale
//! regardless of depth.
//!
//! Vertical convention: the camera frame is y-down and the viewport spans
//! `[y_top, y_top + height]`. Anchoring at `y_top = 0` therefore covers the
//! band from the camera's height downwards, where road objects live.

use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use crate::camera::{
    allocentric_to_egocentric, egocentric_to_allocentric, project_box_to_2d, Box2D, Box3D, CameraIntrinsics,
    GeometryError, Point3, Size3,
};
use crate::classes::NUM_CLASSES;
use crate::par::Execution;
use crate::raster::{resample_region, Raster};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ViewError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("crop has zero area")]
    ZeroAreaCrop,
    #[error("crop aspect {crop} does not match output aspect {out}")]
    AspectMismatch { crop: f64, out: f64 },
    #[error("invalid view configuration: {0}")]
    InvalidConfig(String),
    #[error("lifted depth {0} is not in front of the camera")]
    NonPositiveDepth(f64),
}

/// Virtual-view parameters. Defaults reproduce the reference setup.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewConfig {
    /// Output height `h_v` of every virtual view, px.
    pub out_height: u32,
    /// Output width `w_v` of training views, px.
    pub out_width: u32,
    /// Physical viewport height `H_v`, m. Not given by the method description;
    /// 2.28 m lets a 1.53 m car fill about two thirds of the view.
    pub viewport_height: f64,
    /// Depth window `Z_res` each view is responsible for, m.
    pub z_res: f64,
    /// Inference sweep bounds, m.
    pub z_min: f64,
    pub z_max: f64,
    /// Views sampled per training image.
    pub n_views: usize,
    /// Probability that a training view is placed around a ground-truth object.
    pub p_guided: f64,
    /// Half-width of the vertical anchor perturbation for training views, m.
    pub y_perturb: f64,
    /// Vertical anchor of inference views, m. Zero means camera height.
    pub y_offset: f64,
    /// Inference view widths are rounded up to this multiple, px.
    pub width_multiple: u32,
    /// Training viewports never move closer than this depth, m.
    pub min_viewport_depth: f64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self {
            out_height: 100,
            out_width: 331,
            viewport_height: 2.28,
            z_res: 5.0,
            z_min: 4.5,
            z_max: 45.0,
            n_views: 8,
            p_guided: 0.7,
            y_perturb: 0.3,
            y_offset: 0.0,
            width_multiple: 32,
            min_viewport_depth: 1.0,
        }
    }
}

impl ViewConfig {
    pub fn validate(&self) -> Result<(), ViewError> {
        let bad = |m: &str| Err(ViewError::InvalidConfig(m.to_string()));
        if self.out_height == 0 || self.out_width == 0 {
            return bad("view sizes must be positive");
        }
        if !(self.viewport_height > 0.0) {
            return bad("viewport height must be positive");
        }
        if !(self.z_res > 0.0) {
            return bad("z_res must be positive");
        }
        if !(self.z_min < self.z_max) || !(self.z_min > 0.0) {
            return bad("need 0 < z_min < z_max");
        }
        if !(0.0..=1.0).contains(&self.p_guided) {
            return bad("p_guided must lie in [0, 1]");
        }
        if self.width_multiple == 0 {
            return bad("width multiple must be positive");
        }
        if !(self.y_perturb >= 0.0) || !(self.min_viewport_depth > 0.0) {
            return bad("perturbation range and minimum depth must be non-negative");
        }
        Ok(())
    }
}

/// A rectangle in camera space, parallel to the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Viewport3D {
    /// Left edge `X_v`, m.
    pub x_left: f64,
    /// Top edge (smallest y) `Y_v`, m.
    pub y_top: f64,
    /// Depth `Z_v`, m.
    pub z: f64,
    /// `H_v`, m.
    pub height: f64,
    /// `W_v`, m.
    pub width: f64,
}

impl Viewport3D {
    pub fn top_left(&self) -> Point3 {
        Point3::new(self.x_left, self.y_top, self.z)
    }

    pub fn bottom_right(&self) -> Point3 {
        Point3::new(self.x_left + self.width, self.y_top + self.height, self.z)
    }
}

/// Physical viewport width that keeps pixels square in a view of
/// `out_width x out_height`: `W_v = w_v * (H_v / h_v) * (f_y / f_x)`.
pub fn viewport_width(out_height: u32, viewport_height: f64, k: &CameraIntrinsics, out_width: u32) -> f64 {
    out_width as f64 * (viewport_height / out_height as f64) * (k.fy / k.fx)
}

/// A viewport, its crop in source pixels and the output size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualViewSpec {
    pub viewport: Viewport3D,
    pub crop: Box2D,
    pub out_width: u32,
    pub out_height: u32,
}

impl VirtualViewSpec {
    /// Source pixels per virtual pixel along u and v.
    pub fn source_step(&self) -> (f64, f64) {
        (
            self.crop.width() / self.out_width as f64,
            self.crop.height() / self.out_height as f64,
        )
    }

    /// Virtual pixels per source pixel.
    pub fn scale(&self) -> (f64, f64) {
        let (su, sv) = self.source_step();
        (1.0 / su, 1.0 / sv)
    }

    pub fn virtual_to_source(&self, u: f64, v: f64) -> (f64, f64) {
        let (su, sv) = self.source_step();
        (self.crop.u_min + u * su, self.crop.v_min + v * sv)
    }

    pub fn source_to_virtual(&self, u: f64, v: f64) -> (f64, f64) {
        let (su, sv) = self.source_step();
        ((u - self.crop.u_min) / su, (v - self.crop.v_min) / sv)
    }

    pub fn box_to_virtual(&self, b: &Box2D) -> Box2D {
        let (u0, v0) = self.source_to_virtual(b.u_min, b.v_min);
        let (u1, v1) = self.source_to_virtual(b.u_max, b.v_max);
        Box2D::new(u0, v0, u1, v1)
    }

    pub fn box_to_source(&self, b: &Box2D) -> Box2D {
        let (u0, v0) = self.virtual_to_source(b.u_min, b.v_min);
        let (u1, v1) = self.virtual_to_source(b.u_max, b.v_max);
        Box2D::new(u0, v0, u1, v1)
    }

    /// Depth of an object relative to the viewport plane.
    pub fn relative_depth(&self, z: f64) -> f64 {
        z - self.viewport.z
    }

    pub fn out_bounds(&self) -> Box2D {
        Box2D::new(0.0, 0.0, self.out_width as f64, self.out_height as f64)
    }
}

/// Projects the viewport's top-left and bottom-right corners to build its crop.
pub fn viewport_to_spec(
    k: &CameraIntrinsics,
    vp: Viewport3D,
    out_width: u32,
    out_height: u32,
) -> Result<VirtualViewSpec, ViewError> {
    let (u0, v0) = k.project(vp.top_left())?;
    let (u1, v1) = k.project(vp.bottom_right())?;
    let crop = Box2D::new(u0, v0, u1, v1);
    if !(crop.width() > 0.0 && crop.height() > 0.0) || out_width == 0 || out_height == 0 {
        return Err(ViewError::ZeroAreaCrop);
    }
    let crop_aspect = crop.width() / crop.height();
    let out_aspect = out_width as f64 / out_height as f64;
    if (crop_aspect - out_aspect).abs() > 1e-9 * out_aspect.max(1.0) {
        return Err(ViewError::AspectMismatch {
            crop: crop_aspect,
            out: out_aspect,
        });
    }
    Ok(VirtualViewSpec {
        viewport: vp,
        crop,
        out_width,
        out_height,
    })
}

/// Crops and rescales `image` into the virtual view described by `spec`.
pub fn resample(image: &Raster, spec: &VirtualViewSpec) -> Result<Raster, ViewError> {
    if !(spec.crop.area() > 0.0) || spec.out_width == 0 || spec.out_height == 0 {
        return Err(ViewError::ZeroAreaCrop);
    }
    Ok(resample_region(
        image,
        &spec.crop,
        spec.out_width as usize,
        spec.out_height as usize,
    ))
}

/// Resamples several views of one image, one task per view.
pub fn resample_all(image: &Raster, specs: &[VirtualViewSpec], exec: Execution) -> Result<Vec<Raster>, ViewError> {
    exec.map(specs, |s| resample(image, s)).into_iter().collect()
}

/// A box expressed in a virtual view: projected center in virtual pixels,
/// depth relative to the viewport plane and allocentric orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewBox {
    pub center_u: f64,
    pub center_v: f64,
    pub depth: f64,
    pub size: Size3,
    pub alpha: f64,
    pub class_id: usize,
    pub score: Option<f64>,
}

/// Expresses a camera-frame box in the frame of a virtual view.
pub fn view_box_from_box(b: &Box3D, spec: &VirtualViewSpec, k: &CameraIntrinsics) -> Result<ViewBox, ViewError> {
    let (u, v) = k.project(b.center)?;
    let (cu, cv) = spec.source_to_virtual(u, v);
    Ok(ViewBox {
        center_u: cu,
        center_v: cv,
        depth: spec.relative_depth(b.center.z),
        size: b.size,
        alpha: egocentric_to_allocentric(b.yaw, b.center),
        class_id: b.class_id,
        score: b.score,
    })
}

/// Lifts a virtual-frame detection back to a camera-frame box.
pub fn lift_detection(det: &ViewBox, spec: &VirtualViewSpec, k: &CameraIntrinsics) -> Result<Box3D, ViewError> {
    let z = det.depth + spec.viewport.z;
    if !(z > 0.0 && k.projective_depth(z) > 0.0) {
        return Err(ViewError::NonPositiveDepth(z));
    }
    let (u, v) = spec.virtual_to_source(det.center_u, det.center_v);
    let center = k.backproject(u, v, z)?;
    let mut b = Box3D::new(center, det.size, allocentric_to_egocentric(det.alpha, center), det.class_id);
    b.score = det.score;
    Ok(b)
}

/// Ground truth as seen by one training view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewTarget {
    pub gt_index: usize,
    /// Nearest-face depth outside `[0, z_res]` relative to the viewport.
    pub ignore: bool,
    /// Copy of the box with its depth made relative to the viewport.
    pub relative: Box3D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingView {
    pub spec: VirtualViewSpec,
    /// Index of the ground-truth object the view was placed around, if any.
    pub target: Option<usize>,
    pub targets: Vec<ViewTarget>,
}

impl TrainingView {
    pub fn is_guided(&self) -> bool {
        self.target.is_some()
    }
}

/// Class-uniform draw without replacement, refilling exhausted classes.
struct TargetPicker {
    all: Vec<Vec<usize>>,
    pools: Vec<Vec<usize>>,
}

impl TargetPicker {
    fn new(eligible: &[(usize, usize)]) -> Self {
        let mut all = vec![Vec::new(); NUM_CLASSES];
        for &(idx, class) in eligible {
            all[class].push(idx);
        }
        all.retain(|v| !v.is_empty());
        let pools = all.clone();
        Self { all, pools }
    }

    fn is_empty(&self) -> bool {
        self.all.is_empty()
    }

    fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        let c = rng.gen_range(0..self.all.len());
        if self.pools[c].is_empty() {
            self.pools[c] = self.all[c].clone();
        }
        let i = rng.gen_range(0..self.pools[c].len());
        self.pools[c].swap_remove(i)
    }
}

fn uniform_in<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

fn guided_viewport<R: Rng + ?Sized>(
    b: &Box3D,
    k: &CameraIntrinsics,
    cfg: &ViewConfig,
    width: f64,
    rng: &mut R,
) -> Result<Viewport3D, ViewError> {
    let z_hat = b.nearest_depth();
    let y_hat = b.y_top();
    let z = (z_hat - uniform_in(rng, 0.0, 0.5 * cfg.z_res)).max(cfg.min_viewport_depth);
    let bb = project_box_to_2d(k, b, false)?;
    let lo = k.backproject(bb.u_min, bb.v_min, z)?;
    let hi = k.backproject(bb.u_max, bb.v_max, z)?;

    // X: every placement that keeps the projected box inside the crop.
    let (x_lo, x_hi) = (hi.x - width, lo.x);
    let x_left = if x_lo <= x_hi {
        uniform_in(rng, x_lo, x_hi)
    } else {
        0.5 * (lo.x + hi.x) - 0.5 * width
    };

    // Y: perturbation window around the box top, intersected with visibility.
    let h = cfg.viewport_height;
    let (vis_lo, vis_hi) = (hi.y - h, lo.y);
    let y_top = if vis_lo <= vis_hi {
        let lo_y = vis_lo.max(y_hat - cfg.y_perturb);
        let hi_y = vis_hi.min(y_hat + cfg.y_perturb);
        if lo_y <= hi_y {
            uniform_in(rng, lo_y, hi_y)
        } else {
            y_hat.clamp(vis_lo, vis_hi)
        }
    } else {
        0.5 * (lo.y + hi.y) - 0.5 * h
    };
    Ok(Viewport3D {
        x_left,
        y_top,
        z,
        height: h,
        width,
    })
}

fn random_viewport<R: Rng + ?Sized>(
    k: &CameraIntrinsics,
    cfg: &ViewConfig,
    width: f64,
    rng: &mut R,
) -> Result<Viewport3D, ViewError> {
    let (img_w, img_h) = (k.width as f64, k.height as f64);
    // smallest depth at which the whole crop fits inside the image
    let fit = (k.fy * cfg.viewport_height / img_h).max(k.fx * width / img_w) - k.translation[2];
    let z_lo = fit.max(cfg.z_min);
    let z = if z_lo < cfg.z_max {
        uniform_in(rng, z_lo, cfg.z_max)
    } else {
        z_lo
    };
    let w = k.projective_depth(z);
    let crop_w = k.fx * width / w;
    let crop_h = k.fy * cfg.viewport_height / w;
    let u0 = uniform_in(rng, 0.0, (img_w - crop_w).max(0.0));
    let v0 = uniform_in(rng, 0.0, (img_h - crop_h).max(0.0));
    let corner = k.backproject(u0, v0, z)?;
    Ok(Viewport3D {
        x_left: corner.x,
        y_top: corner.y,
        z,
        height: cfg.viewport_height,
        width,
    })
}

/// Samples `cfg.n_views` training views for one image.
///
/// Each view is, with probability `p_guided`, placed around a ground-truth
/// object drawn class-uniformly without replacement; otherwise it is a random
/// viewport whose crop lies inside the image. Boxes whose nearest face falls
/// outside `[0, z_res]` of a view are flagged ignore for that view.
pub fn sample_training_viewports<R: Rng + ?Sized>(
    gt: &[Box3D],
    k: &CameraIntrinsics,
    cfg: &ViewConfig,
    rng: &mut R,
) -> Result<Vec<TrainingView>, ViewError> {
    cfg.validate()?;
    let width = viewport_width(cfg.out_height, cfg.viewport_height, k, cfg.out_width);
    let nearest: Vec<f64> = gt.iter().map(Box3D::nearest_depth).collect();
    let eligible: Vec<(usize, usize)> = gt
        .iter()
        .enumerate()
        .filter(|(i, b)| b.class_id < NUM_CLASSES && nearest[*i] >= cfg.min_viewport_depth)
        .map(|(i, b)| (i, b.class_id))
        .collect();
    let mut picker = TargetPicker::new(&eligible);

    let mut views = Vec::with_capacity(cfg.n_views);
    for _ in 0..cfg.n_views {
        let guided = !picker.is_empty() && rng.gen_bool(cfg.p_guided);
        let (vp, target) = if guided {
            let t = picker.draw(rng);
            (guided_viewport(&gt[t], k, cfg, width, rng)?, Some(t))
        } else {
            (random_viewport(k, cfg, width, rng)?, None)
        };
        let spec = viewport_to_spec(k, vp, cfg.out_width, cfg.out_height)?;
        let targets = gt
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let rel = nearest[i] - vp.z;
                let mut relative = b.clone();
                relative.center.z -= vp.z;
                ViewTarget {
                    gt_index: i,
                    ignore: !(0.0..=cfg.z_res).contains(&rel) || b.class_id >= NUM_CLASSES,
                    relative,
                }
            })
            .collect();
        views.push(TrainingView { spec, target, targets });
    }
    Ok(views)
}

/// Depths of the inference sweep: `z_min, z_min + z_res/2, ...` up to `z_max`.
pub fn sweep_depths(cfg: &ViewConfig) -> Vec<f64> {
    let step = 0.5 * cfg.z_res;
    let n = ((cfg.z_max - cfg.z_min) / step + 1e-9).floor() as usize + 1;
    (0..n).map(|i| cfg.z_min + i as f64 * step).collect()
}

/// Rounds `x` up to a positive multiple of `m`.
pub fn round_up_to_multiple(x: f64, m: u32) -> u32 {
    let m = m.max(1) as f64;
    (((x - 1e-9) / m).ceil().max(1.0) * m) as u32
}

/// Views covering the full image width at every sweep depth.
pub fn inference_viewports(
    k: &CameraIntrinsics,
    cfg: &ViewConfig,
    image_width: u32,
) -> Result<Vec<VirtualViewSpec>, ViewError> {
    cfg.validate()?;
    sweep_depths(cfg)
        .into_iter()
        .map(|z| {
            let w = k.projective_depth(z);
            let exact =
                cfg.out_height as f64 / cfg.viewport_height * (w / k.fy) * image_width as f64;
            let out_w = round_up_to_multiple(exact, cfg.width_multiple);
            let left = k.backproject(0.0, k.cv, z)?;
            let vp = Viewport3D {
                x_left: left.x,
                y_top: cfg.y_offset,
                z,
                height: cfg.viewport_height,
                width: viewport_width(cfg.out_height, cfg.viewport_height, k, out_w),
            };
            viewport_to_spec(k, vp, out_w, cfg.out_height)
        })
        .collect()
}

/// One line of the view sidecar record:
/// `index X_v Y_v Z_v H_v W_v u_min v_min u_max v_max out_w out_h`.
pub fn format_view_record(index: usize, spec: &VirtualViewSpec) -> String {
    let vp = &spec.viewport;
    let c = &spec.crop;
    let mut s = String::new();
    let _ = write!(
        s,
        "{} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {} {}",
        index, vp.x_left, vp.y_top, vp.z, vp.height, vp.width, c.u_min, c.v_min, c.u_max, c.v_max, spec.out_width,
        spec.out_height
    );
    s
}

/// Parses a line written by [`format_view_record`].
pub fn parse_view_record(line: &str) -> Option<(usize, VirtualViewSpec)> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 12 {
        return None;
    }
    let idx = f[0].parse().ok()?;
    let n: Vec<f64> = f[1..10].iter().map(|t| t.parse().ok()).collect::<Option<_>>()?;
    Some((
        idx,
        VirtualViewSpec {
            viewport: Viewport3D {
                x_left: n[0],
                y_top: n[1],
                z: n[2],
                height: n[3],
                width: n[4],
            },
            crop: Box2D::new(n[5], n[6], n[7], n[8]),
            out_width: f[10].parse().ok()?,
            out_height: f[11].parse().ok()?,
        },
    ))
}
