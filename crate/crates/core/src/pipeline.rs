//! End-to-end use of the virtual views: a detector interface, a ground-truth
//! oracle standing in for the network, multi-view inference and training
//! batch assembly.

use std::fmt::Write as _;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use thiserror::Error;

use crate::camera::{project_box_to_2d, Box2D, Box3D, CameraIntrinsics, ObjectMeta};
use crate::classes::{default_priors, ClassPrior, NUM_CLASSES};
use crate::codec::{
    anchors_for_view, assign_ground_truth, confidences, decode_2d, decode_3d, encode, grid_size, logit, Anchor,
    AnchorState, AssignConfig, ClassHead, CodecError, RawDetection, Targets, Theta2d, Theta3d, ViewLossInput,
    ANCHORS_PER_CELL, LEVEL_STRIDES,
};
use crate::kitti::DONT_CARE;
use crate::overlap::{bev_iou_boxes, iou_2d, iou_3d, nms, OverlapMetric};
use crate::par::{derive_seed, Execution};
use crate::raster::Raster;
use crate::viewport::{
    inference_viewports, lift_detection, resample, sample_training_viewports, sweep_depths, view_box_from_box,
    ViewBox, ViewConfig, ViewError, VirtualViewSpec,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    View(#[from] ViewError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("detector failed: {0}")]
    Detector(String),
}

/// Head output of one anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorOutput {
    pub anchor: Anchor,
    pub raw: RawDetection,
}

/// Anything that maps a virtual view to per-anchor head outputs. `image` is
/// `None` in geometry-only runs.
pub trait Detector: Sync {
    fn detect(&self, view: usize, spec: &VirtualViewSpec, image: Option<&Raster>) -> Result<Vec<AnchorOutput>, String>;
}

/// Noise standard deviations of the oracle, per parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OracleNoise {
    /// Projected 3D center, virtual px.
    pub center: f64,
    /// Depth, m.
    pub depth: f64,
    /// Log size.
    pub size: f64,
    /// Allocentric angle, rad.
    pub rotation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub noise: OracleNoise,
    /// Probability that a visible object is not reported in a view.
    pub drop_prob: f64,
    /// Mean number of false detections per view.
    pub clutter_rate: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            noise: OracleNoise::default(),
            drop_prob: 0.0,
            clutter_rate: 0.0,
            seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), String> {
        let n = self.noise;
        if [n.center, n.depth, n.size, n.rotation].iter().any(|s| !(*s >= 0.0)) {
            return Err("oracle noise must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.drop_prob) || !(self.clutter_rate >= 0.0) {
            return Err("drop probability must lie in [0, 1] and clutter rate be non-negative".into());
        }
        Ok(())
    }
}

/// Logit that makes a class score near certain.
const SURE: f64 = 6.0;

/// Emits encodings of the ground truth that each view is responsible for.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    pub gt: Vec<Box3D>,
    pub k: CameraIntrinsics,
    pub priors: [ClassPrior; NUM_CLASSES],
    pub z_res: f64,
    pub cfg: OracleConfig,
}

fn detectable(b: &Box3D) -> bool {
    b.class_id < NUM_CLASSES && b.meta.as_ref().and_then(|m| m.label.as_deref()) != Some(DONT_CARE)
}

/// Anchor of best IoU among those whose cell holds the box center.
fn best_anchor(b: &Box2D, out_w: u32, out_h: u32) -> Anchor {
    let (u, v) = b.center();
    let mut best: Option<(Anchor, f64)> = None;
    for &s in &LEVEL_STRIDES {
        let (cols, rows) = grid_size(s, out_w, out_h);
        let col = ((u / s as f64).floor().max(0.0) as u32).min(cols - 1);
        let row = ((v / s as f64).floor().max(0.0) as u32).min(rows - 1);
        for index in 0..ANCHORS_PER_CELL as u32 {
            let a = crate::codec::anchor_at(s, col, row, index, out_w, out_h).expect("cell inside grid");
            let iou = iou_2d(&a.box2d(), b);
            if best.map_or(true, |(_, bi)| iou > bi) {
                best = Some((a, iou));
            }
        }
    }
    best.expect("at least one anchor").0
}

impl OracleDetector {
    /// Uses the priors and depth window of `infer`, so its encodings decode
    /// exactly under the same configuration.
    pub fn new(gt: Vec<Box3D>, k: CameraIntrinsics, infer: &InferenceConfig, cfg: OracleConfig) -> Self {
        Self {
            gt,
            k,
            priors: infer.priors,
            z_res: infer.view.z_res,
            cfg,
        }
    }

    fn encode_one(&self, b: &Box3D, spec: &VirtualViewSpec, rng: &mut ChaCha8Rng) -> Result<Option<AnchorOutput>, String> {
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        let eps: [f64; 4] = std::array::from_fn(|_| std.sample(rng));
        let e_size: [f64; 3] = std::array::from_fn(|_| std.sample(rng));
        let dropped = rng.gen::<f64>() < self.cfg.drop_prob;
        if dropped {
            return Ok(None);
        }
        let n = self.cfg.noise;
        let gt_2d = spec.box_to_virtual(&project_box_to_2d(&self.k, b, false).map_err(|e| e.to_string())?);
        let mut vb = view_box_from_box(b, spec, &self.k).map_err(|e| e.to_string())?;
        let (du, dv) = (n.center * eps[0], n.center * eps[1]);
        let dz = n.depth * eps[2];
        let da = n.rotation * eps[3];
        let ds = e_size.map(|e| n.size * e);
        vb.center_u += du;
        vb.center_v += dv;
        vb.depth += dz;
        vb.alpha += da;
        vb.size.w *= ds[0].exp();
        vb.size.h *= ds[1].exp();
        vb.size.l *= ds[2].exp();
        let magnitude = du.hypot(dv) / 10.0 + dz.abs() + da.abs() + ds.iter().map(|d| d.abs()).sum::<f64>();

        let anchor = best_anchor(&gt_2d, spec.out_width, spec.out_height);
        let Targets { theta_2d, theta_3d, .. } =
            encode(&gt_2d, &vb, &anchor, &self.priors[b.class_id]).map_err(|e| e.to_string())?;
        let mut raw = RawDetection::zeros(NUM_CLASSES);
        raw.zeta_2d = vec![-SURE; NUM_CLASSES];
        raw.zeta_2d[b.class_id] = SURE;
        raw.theta_2d = theta_2d;
        raw.heads[b.class_id] = ClassHead {
            theta: theta_3d,
            zeta: logit(0.99 * (-magnitude).exp()),
        };
        Ok(Some(AnchorOutput { anchor, raw }))
    }

    fn clutter(&self, spec: &VirtualViewSpec, rng: &mut ChaCha8Rng) -> Vec<AnchorOutput> {
        if self.cfg.clutter_rate <= 0.0 {
            return Vec::new();
        }
        let count = Poisson::new(self.cfg.clutter_rate).expect("positive rate").sample(rng) as usize;
        (0..count)
            .map(|_| {
                let s = LEVEL_STRIDES[rng.gen_range(0..LEVEL_STRIDES.len())];
                let (cols, rows) = grid_size(s, spec.out_width, spec.out_height);
                let anchor = crate::codec::anchor_at(
                    s,
                    rng.gen_range(0..cols),
                    rng.gen_range(0..rows),
                    rng.gen_range(0..ANCHORS_PER_CELL as u32),
                    spec.out_width,
                    spec.out_height,
                )
                .expect("sampled inside grid");
                let class = rng.gen_range(0..NUM_CLASSES);
                let mut raw = RawDetection::zeros(NUM_CLASSES);
                raw.zeta_2d = vec![-SURE; NUM_CLASSES];
                raw.zeta_2d[class] = logit(rng.gen_range(0.3..0.9));
                raw.theta_2d = Theta2d::from_array(std::array::from_fn(|_| rng.gen_range(-0.3..0.3)));
                let a = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                let mut t: [f64; 8] = std::array::from_fn(|_| rng.gen_range(-0.3..0.3));
                t[2] = rng.gen_range(-1.5..1.5);
                t[6] = a.sin();
                t[7] = a.cos();
                raw.heads[class] = ClassHead {
                    theta: Theta3d::from_array(t),
                    zeta: logit(rng.gen_range(0.2..0.8)),
                };
                AnchorOutput { anchor, raw }
            })
            .collect()
    }
}

impl Detector for OracleDetector {
    fn detect(&self, view: usize, spec: &VirtualViewSpec, _image: Option<&Raster>) -> Result<Vec<AnchorOutput>, String> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, view as u64));
        let mut out = Vec::new();
        for b in self.gt.iter().filter(|b| detectable(b)) {
            let rel = b.nearest_depth() - spec.viewport.z;
            if !(0.0..=self.z_res).contains(&rel) {
                continue;
            }
            if let Some(o) = self.encode_one(b, spec, &mut rng)? {
                out.push(o);
            }
        }
        out.extend(self.clutter(spec, &mut rng));
        Ok(out)
    }
}

/// Suppression of duplicates found in neighboring, overlapping depth windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalNms {
    pub metric: OverlapMetric,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceConfig {
    pub view: ViewConfig,
    pub priors: [ClassPrior; NUM_CLASSES],
    /// Minimum combined 3D score kept after decoding.
    pub score_threshold: f64,
    /// Per-view, per-class 2D NMS threshold.
    pub nms_iou: f64,
    pub global_nms: Option<GlobalNms>,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            view: ViewConfig::default(),
            priors: default_priors(),
            score_threshold: 0.05,
            nms_iou: 0.5,
            global_nms: Some(GlobalNms {
                metric: OverlapMetric::Bev,
                threshold: 0.5,
            }),
        }
    }
}

/// Counters describing one inference run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub views: usize,
    /// `(view, reason)` for views whose detector call failed.
    pub skipped_views: Vec<(usize, String)>,
    pub candidates: usize,
    pub after_view_nms: usize,
    pub non_positive_depth: usize,
    pub global_nms_removed: usize,
    /// Ground-truth objects considered for coverage, and those whose nearest
    /// depth no view window contains.
    pub coverage_checked: usize,
    pub coverage_misses: usize,
}

impl Diagnostics {
    /// Plain `key=value` lines.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "views={}", self.views);
        let _ = writeln!(s, "skipped_views={}", self.skipped_views.len());
        for (v, why) in &self.skipped_views {
            let _ = writeln!(s, "skipped_view.{v}={why}");
        }
        let _ = writeln!(s, "candidates={}", self.candidates);
        let _ = writeln!(s, "after_view_nms={}", self.after_view_nms);
        let _ = writeln!(s, "non_positive_depth={}", self.non_positive_depth);
        let _ = writeln!(s, "global_nms_removed={}", self.global_nms_removed);
        let _ = writeln!(s, "coverage_checked={}", self.coverage_checked);
        let _ = writeln!(s, "coverage_misses={}", self.coverage_misses);
        s
    }

    pub fn merge(&mut self, o: &Diagnostics) {
        self.views += o.views;
        self.skipped_views.extend(o.skipped_views.iter().cloned());
        self.candidates += o.candidates;
        self.after_view_nms += o.after_view_nms;
        self.non_positive_depth += o.non_positive_depth;
        self.global_nms_removed += o.global_nms_removed;
        self.coverage_checked += o.coverage_checked;
        self.coverage_misses += o.coverage_misses;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceOutput {
    pub detections: Vec<Box3D>,
    pub specs: Vec<VirtualViewSpec>,
    pub diagnostics: Diagnostics,
}

struct Candidate {
    box2d: Box2D,
    det: ViewBox,
}

struct ViewResult {
    boxes: Vec<Box3D>,
    candidates: usize,
    kept: usize,
    non_positive: usize,
    error: Option<String>,
}

fn decode_view(outputs: &[AnchorOutput], spec: &VirtualViewSpec, k: &CameraIntrinsics, cfg: &InferenceConfig) -> ViewResult {
    let mut cands = Vec::new();
    for o in outputs {
        if !o.raw.is_finite() {
            continue;
        }
        let box2d = decode_2d(&o.anchor, &o.raw.theta_2d);
        let n = o.raw.n_classes().min(o.raw.heads.len()).min(NUM_CLASSES);
        for c in 0..n {
            let Ok(conf) = confidences(&o.raw, c) else { continue };
            if conf.p_3d < cfg.score_threshold {
                continue;
            }
            let Ok(mut det) = decode_3d(&o.raw.heads[c].theta, &cfg.priors[c], box2d.center(), c) else {
                continue;
            };
            det.score = Some(conf.p_3d);
            cands.push(Candidate { box2d, det });
        }
    }
    let keep = nms(
        &cands,
        |c| c.det.score.unwrap_or(0.0),
        |a, b| {
            if a.det.class_id == b.det.class_id {
                iou_2d(&a.box2d, &b.box2d)
            } else {
                0.0
            }
        },
        cfg.nms_iou,
    );
    let mut boxes = Vec::with_capacity(keep.len());
    let mut non_positive = 0;
    for &i in &keep {
        let c = &cands[i];
        match lift_detection(&c.det, spec, k) {
            Ok(mut b) => {
                let src = spec.box_to_source(&c.box2d).clamp_to(k.width as f64, k.height as f64);
                b.meta = Some(ObjectMeta {
                    alpha: Some(c.det.alpha),
                    bbox: Some(src),
                    ..Default::default()
                });
                boxes.push(b);
            }
            Err(_) => non_positive += 1,
        }
    }
    ViewResult {
        boxes,
        candidates: cands.len(),
        kept: keep.len(),
        non_positive,
        error: None,
    }
}

/// Counts objects whose nearest depth no inference window `[Z_v, Z_v + Z_res]` contains.
pub fn coverage_misses(gt: &[Box3D], cfg: &ViewConfig) -> (usize, usize) {
    let depths = sweep_depths(cfg);
    let mut checked = 0;
    let mut misses = 0;
    for b in gt.iter().filter(|b| detectable(b)) {
        checked += 1;
        let z = b.nearest_depth();
        if !depths.iter().any(|&v| (0.0..=cfg.z_res).contains(&(z - v))) {
            misses += 1;
        }
    }
    (checked, misses)
}

/// Runs the detector over the depth sweep of one image and returns
/// camera-frame detections ordered by view, then by score.
///
/// Without `image` the views are not resampled. Passing `gt` fills the
/// coverage counters.
pub fn run_inference(
    k: &CameraIntrinsics,
    image: Option<&Raster>,
    detector: &dyn Detector,
    cfg: &InferenceConfig,
    exec: Execution,
    gt: Option<&[Box3D]>,
) -> Result<InferenceOutput, PipelineError> {
    let specs = inference_viewports(k, &cfg.view, k.width)?;
    let results: Vec<ViewResult> = exec.map_indexed(&specs, |i, spec| {
        let raster = match image.map(|img| resample(img, spec)).transpose() {
            Ok(r) => r,
            Err(e) => return failed(e.to_string()),
        };
        match detector.detect(i, spec, raster.as_ref()) {
            Ok(outputs) => decode_view(&outputs, spec, k, cfg),
            Err(e) => failed(e),
        }
    });

    let mut diag = Diagnostics {
        views: specs.len(),
        ..Default::default()
    };
    let mut detections = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        if let Some(e) = r.error {
            diag.skipped_views.push((i, e));
            continue;
        }
        diag.candidates += r.candidates;
        diag.after_view_nms += r.kept;
        diag.non_positive_depth += r.non_positive;
        detections.extend(r.boxes);
    }
    if let Some(g) = cfg.global_nms {
        let overlap = |a: &Box3D, b: &Box3D| {
            if a.class_id != b.class_id {
                return 0.0;
            }
            match g.metric {
                OverlapMetric::Bev => bev_iou_boxes(a, b),
                OverlapMetric::Box3d => iou_3d(a, b),
                OverlapMetric::Image2d => match (a.meta.as_ref().and_then(|m| m.bbox), b.meta.as_ref().and_then(|m| m.bbox)) {
                    (Some(x), Some(y)) => iou_2d(&x, &y),
                    _ => 0.0,
                },
            }
        };
        let mut keep = nms(&detections, |b| b.score.unwrap_or(0.0), overlap, g.threshold);
        keep.sort_unstable();
        diag.global_nms_removed = detections.len() - keep.len();
        detections = keep.into_iter().map(|i| detections[i].clone()).collect();
    }
    if let Some(gt) = gt {
        let (checked, misses) = coverage_misses(gt, &cfg.view);
        diag.coverage_checked = checked;
        diag.coverage_misses = misses;
    }
    Ok(InferenceOutput {
        detections,
        specs,
        diagnostics: diag,
    })
}

fn failed(e: String) -> ViewResult {
    ViewResult {
        boxes: Vec::new(),
        candidates: 0,
        kept: 0,
        non_positive: 0,
        error: Some(e),
    }
}

/// One training view with everything a loss needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub spec: VirtualViewSpec,
    pub image: Option<Raster>,
    /// Ground-truth index the view was placed around.
    pub target: Option<usize>,
    pub anchors: Vec<Anchor>,
    pub assignment: Vec<AnchorState>,
    /// Regression targets of positive anchors.
    pub targets: Vec<Option<Targets>>,
    /// Ground-truth boxes in virtual pixels, scene order.
    pub gt_2d: Vec<Box2D>,
    pub ignore: Vec<bool>,
}

impl TrainingSample {
    pub fn loss_input<'a>(
        &'a self,
        outputs: &'a [RawDetection],
        gt: &'a [Box3D],
        k: &'a CameraIntrinsics,
        priors: &'a [ClassPrior],
    ) -> ViewLossInput<'a> {
        ViewLossInput {
            anchors: &self.anchors,
            outputs,
            assignment: &self.assignment,
            gt_2d: &self.gt_2d,
            gt_3d: gt,
            k,
            spec: &self.spec,
            priors,
        }
    }

    /// Head outputs that reproduce the targets exactly: positives carry their
    /// encoding, everything else is confidently background.
    pub fn perfect_outputs(&self) -> Vec<RawDetection> {
        self.targets
            .iter()
            .map(|t| {
                let mut r = RawDetection::zeros(NUM_CLASSES);
                r.zeta_2d = vec![-SURE; NUM_CLASSES];
                if let Some(t) = t {
                    r.zeta_2d[t.class_id] = SURE;
                    r.theta_2d = t.theta_2d;
                    r.heads[t.class_id] = ClassHead {
                        theta: t.theta_3d,
                        zeta: SURE,
                    };
                }
                r
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub view: ViewConfig,
    pub priors: [ClassPrior; NUM_CLASSES],
    pub assign: AssignConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            view: ViewConfig::default(),
            priors: default_priors(),
            assign: AssignConfig::default(),
        }
    }
}

/// Samples `n_views` training views of one image and prepares their anchor
/// assignments and regression targets.
pub fn build_training_batch<R: Rng + ?Sized>(
    gt: &[Box3D],
    k: &CameraIntrinsics,
    image: Option<&Raster>,
    cfg: &TrainingConfig,
    rng: &mut R,
) -> Result<Vec<TrainingSample>, PipelineError> {
    let priors = cfg.priors;
    let views = sample_training_viewports(gt, k, &cfg.view, rng)?;
    let mut out = Vec::with_capacity(views.len());
    for v in views {
        let spec = v.spec;
        let anchors = anchors_for_view(spec.out_width, spec.out_height);
        let mut ignore: Vec<bool> = v.targets.iter().map(|t| t.ignore).collect();
        let gt_2d: Vec<Box2D> = gt
            .iter()
            .enumerate()
            .map(|(i, b)| match project_box_to_2d(k, b, false) {
                Ok(r) => spec.box_to_virtual(&r),
                Err(_) => {
                    ignore[i] = true;
                    Box2D::new(-1.0, -1.0, -1.0, -1.0)
                }
            })
            .collect();
        let assignment = assign_ground_truth(&anchors, &gt_2d, &ignore, &cfg.assign);
        let targets = anchors
            .iter()
            .zip(&assignment)
            .map(|(a, s)| match *s {
                AnchorState::Positive(i) => {
                    let vb = view_box_from_box(&gt[i], &spec, k)?;
                    Ok(Some(encode(&gt_2d[i], &vb, a, &priors[gt[i].class_id])?))
                }
                _ => Ok(None),
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        let image = image.map(|img| resample(img, &spec)).transpose()?;
        out.push(TrainingSample {
            spec,
            image,
            target: v.target,
            anchors,
            assignment,
            targets,
            gt_2d,
            ignore,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{wrap_angle, Point3, Size3};
    use crate::classes::{CAR, PEDESTRIAN};
    use crate::codec::total_loss;
    use crate::codec::LossConfig;

    fn kitti() -> CameraIntrinsics {
        CameraIntrinsics::new(721.5377, 721.5377, 609.5593, 172.854, 1242, 375)
            .unwrap()
            .with_translation([44.857, 0.2163, 0.002746])
    }

    fn car_at(x: f64, z: f64, yaw: f64) -> Box3D {
        Box3D::new(Point3::new(x, 1.65 - 0.765, z), Size3::new(1.63, 1.53, 3.84), yaw, CAR)
    }

    fn five_cars() -> Vec<Box3D> {
        vec![
            car_at(-4.0, 8.0, 0.3),
            car_at(3.5, 14.0, -1.2),
            car_at(-6.0, 21.0, 2.0),
            car_at(5.0, 29.0, 0.0),
            car_at(0.5, 38.0, -2.8),
        ]
    }

    fn global() -> InferenceConfig {
        InferenceConfig {
            global_nms: Some(GlobalNms {
                metric: OverlapMetric::Bev,
                threshold: 0.5,
            }),
            ..Default::default()
        }
    }

    #[test]
    fn perfect_oracle_recovers_scene() {
        let k = kitti();
        let gt = five_cars();
        let cfg = global();
        let det = OracleDetector::new(gt.clone(), k, &cfg, OracleConfig::default());
        let out = run_inference(&k, None, &det, &cfg, Execution::default(), Some(&gt)).unwrap();
        assert_eq!(out.detections.len(), 5, "{}", out.diagnostics.report());
        assert_eq!(out.diagnostics.coverage_misses, 0);
        for g in &gt {
            let d = out
                .detections
                .iter()
                .max_by(|a, b| iou_3d(a, g).total_cmp(&iou_3d(b, g)))
                .unwrap();
            assert!(iou_3d(d, g) >= 0.99);
            assert!((d.center.x - g.center.x).abs() < 1e-5 && (d.center.z - g.center.z).abs() < 1e-5);
            assert!((d.center.y - g.center.y).abs() < 1e-5);
            assert!(wrap_angle(d.yaw - g.yaw).abs() < 1e-5);
            assert!((d.size.l - g.size.l).abs() < 1e-5);
        }
    }

    #[test]
    fn per_view_nms_keeps_duplicates_across_views() {
        let k = kitti();
        let gt = five_cars();
        let cfg = InferenceConfig {
            global_nms: None,
            ..Default::default()
        };
        let det = OracleDetector::new(gt.clone(), k, &cfg, OracleConfig::default());
        let out = run_inference(&k, None, &det, &cfg, Execution::default(), None).unwrap();
        // nearest depths fall into two overlapping windows most of the time
        assert!(out.detections.len() >= 5);
        assert_eq!(out.diagnostics.global_nms_removed, 0);
    }

    #[test]
    fn empty_and_out_of_range() {
        let k = kitti();
        let cfg = global();
        let det = OracleDetector::new(vec![], k, &cfg, OracleConfig::default());
        let out = run_inference(&k, None, &det, &cfg, Execution::default(), Some(&[])).unwrap();
        assert!(out.detections.is_empty());
        assert_eq!(out.specs.len(), 17);
        let far = vec![car_at(0.0, 60.0, 0.0)];
        let det = OracleDetector::new(far.clone(), k, &cfg, OracleConfig::default());
        let out = run_inference(&k, None, &det, &cfg, Execution::default(), Some(&far)).unwrap();
        assert!(out.detections.is_empty());
        assert_eq!(out.diagnostics.coverage_misses, 1);
    }

    #[test]
    fn drop_all_and_determinism() {
        let k = kitti();
        let cfg = global();
        let oc = OracleConfig {
            drop_prob: 1.0,
            ..Default::default()
        };
        let det = OracleDetector::new(five_cars(), k, &cfg, oc);
        assert!(run_inference(&k, None, &det, &cfg, Execution::default(), None).unwrap().detections.is_empty());
        let oc = OracleConfig {
            noise: OracleNoise {
                center: 2.0,
                depth: 0.5,
                size: 0.05,
                rotation: 0.1,
            },
            drop_prob: 0.2,
            clutter_rate: 1.5,
            seed: 99,
        };
        let det = OracleDetector::new(five_cars(), k, &cfg, oc);
        let a = run_inference(&k, None, &det, &cfg, Execution::Sequential, None).unwrap();
        let b = run_inference(&k, None, &det, &cfg, Execution::Parallel, None).unwrap();
        assert_eq!(a, b);
    }

    struct Failing;
    impl Detector for Failing {
        fn detect(&self, view: usize, _: &VirtualViewSpec, _: Option<&Raster>) -> Result<Vec<AnchorOutput>, String> {
            if view == 3 {
                Err("boom".into())
            } else {
                Ok(vec![])
            }
        }
    }

    #[test]
    fn failing_view_is_skipped() {
        let k = kitti();
        let out = run_inference(&k, None, &Failing, &InferenceConfig::default(), Execution::default(), None).unwrap();
        assert_eq!(out.diagnostics.skipped_views, vec![(3, "boom".to_string())]);
        assert!(out.diagnostics.report().contains("skipped_views=1\n"));
    }

    #[test]
    fn raster_path_matches_geometry_only() {
        let k = kitti();
        let img = Raster::filled(1242, 375, &[0.5, 0.5, 0.5]);
        let cfg = global();
        let det = OracleDetector::new(five_cars(), k, &cfg, OracleConfig::default());
        let a = run_inference(&k, Some(&img), &det, &cfg, Execution::default(), None).unwrap();
        let b = run_inference(&k, None, &det, &cfg, Execution::default(), None).unwrap();
        assert_eq!(a.detections, b.detections);
    }

    #[test]
    fn training_batch_and_perfect_loss() {
        let k = kitti();
        let gt = vec![car_at(-2.0, 12.0, 0.4), {
            let mut p = car_at(3.0, 18.0, 1.0);
            p.class_id = PEDESTRIAN;
            p.size = Size3::new(0.63, 1.77, 0.83);
            p.center.y = 1.65 - 0.885;
            p
        }];
        let cfg = TrainingConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = Raster::filled(1242, 375, &[0.2, 0.3, 0.4]);
        let batch = build_training_batch(&gt, &k, Some(&img), &cfg, &mut rng).unwrap();
        assert_eq!(batch.len(), 8);
        let priors = cfg.priors;
        let mut positives = 0;
        for s in &batch {
            assert_eq!(s.image.as_ref().unwrap().width(), 331);
            for (a, st) in s.anchors.iter().zip(&s.assignment) {
                if let AnchorState::Positive(i) = st {
                    assert!(!s.ignore[*i]);
                    assert!(iou_2d(&a.box2d(), &s.gt_2d[*i]) > 0.5);
                    positives += 1;
                }
            }
            let outs = s.perfect_outputs();
            let l = total_loss(&[s.loss_input(&outs, &gt, &k, &priors)], &LossConfig::default()).unwrap();
            assert!(l.reg_2d < 1e-18 && l.reg_3d < 1e-9, "{l:?}");
        }
        assert!(positives > 0);
    }

    #[test]
    fn single_target_positives_are_exactly_high_iou_anchors() {
        let k = kitti();
        let gt = vec![car_at(1.0, 15.0, 0.2)];
        let cfg = TrainingConfig {
            view: ViewConfig {
                p_guided: 1.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let batch = build_training_batch(&gt, &k, None, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for s in &batch {
            assert_eq!(s.target, Some(0));
            for (a, st) in s.anchors.iter().zip(&s.assignment) {
                assert_eq!(st.is_positive(), iou_2d(&a.box2d(), &s.gt_2d[0]) > 0.5);
            }
        }
    }
}
