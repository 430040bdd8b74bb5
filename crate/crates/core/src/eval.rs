//! KITTI-style detection evaluation: greedy matching per frame, interpolated
//! average precision over a fixed set of recall samples, and reports.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::camera::Box3D;
use crate::classes::{class_name, neighbor_class, CLASS_NAMES, NUM_CLASSES};
use crate::kitti::{kitti_to_box3d, write_atomic, Difficulty, KittiError, KittiLabel, DONT_CARE};
use crate::overlap::{bev_iou_boxes, iou_3d, OverlapMetric};
use crate::par::Execution;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("detections and ground truth cover different frames; only in detections: [{}], only in ground truth: [{}]", .only_dets.join(", "), .only_gt.join(", "))]
    FrameMismatch { only_dets: Vec<String>, only_gt: Vec<String> },
    #[error("IoU threshold {0} is outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("metric {0} is not evaluated (use bev or 3d)")]
    UnsupportedMetric(OverlapMetric),
    #[error(transparent)]
    Io(#[from] KittiError),
}

/// Recall levels at which interpolated precision is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecallSamples {
    /// `{1/40, ..., 40/40}`.
    R40,
    /// `{0, 0.1, ..., 1}`.
    R11,
}

impl RecallSamples {
    /// Samples as exact fractions `(numerator, denominator)`.
    pub fn fractions(self) -> Vec<(u64, u64)> {
        match self {
            RecallSamples::R40 => (1..=40).map(|i| (i, 40)).collect(),
            RecallSamples::R11 => (0..=10).map(|i| (i, 10)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Minimum overlap for a true positive, per class.
    pub iou_thresholds: [f64; NUM_CLASSES],
    pub recall: RecallSamples,
    pub metrics: Vec<OverlapMetric>,
    /// A false positive covering more than this fraction of its own area with
    /// a DontCare region is not counted.
    pub dont_care_overlap: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: [0.7, 0.5, 0.5],
            recall: RecallSamples::R40,
            metrics: vec![OverlapMetric::Box3d, OverlapMetric::Bev],
            dont_care_overlap: 0.5,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if let Some(&t) = self.iou_thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return Err(EvalError::InvalidThreshold(t));
        }
        if let Some(&m) = self.metrics.iter().find(|m| **m == OverlapMetric::Image2d) {
            return Err(EvalError::UnsupportedMetric(m));
        }
        Ok(())
    }
}

pub fn metric_label(m: OverlapMetric) -> &'static str {
    match m {
        OverlapMetric::Image2d => "2D",
        OverlapMetric::Bev => "BEV",
        OverlapMetric::Box3d => "3D",
    }
}

fn overlap(m: OverlapMetric, a: &Box3D, b: &Box3D) -> f64 {
    match m {
        OverlapMetric::Bev => bev_iou_boxes(a, b),
        OverlapMetric::Box3d => iou_3d(a, b),
        OverlapMetric::Image2d => {
            let (Some(x), Some(y)) = (box_2d(a), box_2d(b)) else { return 0.0 };
            crate::overlap::iou_2d(&x, &y)
        }
    }
}

fn box_2d(b: &Box3D) -> Option<crate::camera::Box2D> {
    b.meta.as_ref().and_then(|m| m.bbox)
}

fn label_of(b: &Box3D) -> &str {
    b.meta
        .as_ref()
        .and_then(|m| m.label.as_deref())
        .unwrap_or_else(|| class_name(b.class_id))
}

fn height_px(b: &Box3D) -> f64 {
    box_2d(b).map_or(f64::INFINITY, |r| r.height())
}

/// Role of a ground-truth box for one (class, difficulty) evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtRole {
    /// Must be found; counts toward recall.
    Cared,
    /// May absorb a detection without reward or penalty.
    Ignored,
    DontCare,
    Unrelated,
}

pub fn gt_role(gt: &Box3D, class: usize, diff: Difficulty) -> GtRole {
    let label = label_of(gt);
    if label == DONT_CARE {
        return GtRole::DontCare;
    }
    if label == CLASS_NAMES[class] {
        let admitted = diff.admits(height_px(gt), gt.meta.as_ref().map_or(0, |m| m.occlusion), gt.truncation());
        return if admitted { GtRole::Cared } else { GtRole::Ignored };
    }
    if neighbor_class(class) == Some(label) {
        GtRole::Ignored
    } else {
        GtRole::Unrelated
    }
}

/// Outcome for one detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetOutcome {
    TruePositive(usize),
    FalsePositive,
    Ignored,
}

/// Matching result of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatch {
    /// `(score, outcome)` in evaluation order.
    pub outcomes: Vec<(f64, DetOutcome)>,
    pub n_cared: usize,
    pub n_matched: usize,
}

/// Greedy matching of one frame's detections for `class` at `diff`.
///
/// Detections are visited by descending score (ties by index). Each takes the
/// unmatched cared box of highest overlap at or above `threshold`; failing
/// that, an unmatched ignored box, which silences it. Unmatched detections
/// mostly inside a DontCare region, and detections shorter than the tier's
/// minimum height, are ignored.
pub fn match_frame(
    dets: &[Box3D],
    gts: &[Box3D],
    class: usize,
    diff: Difficulty,
    metric: OverlapMetric,
    threshold: f64,
    dont_care_overlap: f64,
) -> FrameMatch {
    let roles: Vec<GtRole> = gts.iter().map(|g| gt_role(g, class, diff)).collect();
    let mut taken = vec![false; gts.len()];
    let mut cand: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].class_id == class).collect();
    let score = |i: usize| dets[i].score.unwrap_or(0.0);
    cand.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
    let mut outcomes = Vec::with_capacity(cand.len());
    let mut n_matched = 0;
    for d in cand {
        let det = &dets[d];
        if height_px(det) < diff.min_height() {
            outcomes.push((score(d), DetOutcome::Ignored));
            continue;
        }
        let best = |want: GtRole| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] || roles[g] != want {
                    continue;
                }
                let o = overlap(metric, det, gt);
                if o >= threshold && best.map_or(true, |(_, b)| o > b) {
                    best = Some((g, o));
                }
            }
            best
        };
        let outcome = if let Some((g, _)) = best(GtRole::Cared) {
            taken[g] = true;
            n_matched += 1;
            DetOutcome::TruePositive(g)
        } else if let Some((g, _)) = best(GtRole::Ignored) {
            taken[g] = true;
            DetOutcome::Ignored
        } else if in_dont_care(det, gts, &roles, dont_care_overlap) {
            DetOutcome::Ignored
        } else {
            DetOutcome::FalsePositive
        };
        outcomes.push((score(d), outcome));
    }
    FrameMatch {
        outcomes,
        n_cared: roles.iter().filter(|r| **r == GtRole::Cared).count(),
        n_matched,
    }
}

fn in_dont_care(det: &Box3D, gts: &[Box3D], roles: &[GtRole], thr: f64) -> bool {
    let Some(d) = box_2d(det) else { return false };
    let area = d.area();
    area > 0.0
        && gts
            .iter()
            .zip(roles)
            .filter(|(_, r)| **r == GtRole::DontCare)
            .filter_map(|(g, _)| box_2d(g))
            .any(|r| d.intersection(&r) / area > thr)
}

/// One precision/recall point per counted detection, by descending score.
pub fn pr_curve(scored: &[(f64, bool)], n_gt: usize) -> Vec<(f64, f64)> {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0).then(a.cmp(&b)));
    let mut tp = 0usize;
    order
        .iter()
        .enumerate()
        .map(|(rank, &i)| {
            tp += scored[i].1 as usize;
            let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
            (recall, tp as f64 / (rank + 1) as f64)
        })
        .collect()
}

/// Interpolated precision at each recall sample: the best precision among
/// points whose recall is at least the sample.
pub fn interpolated_precision(scored: &[(f64, bool)], n_gt: usize, samples: RecallSamples) -> Vec<(f64, f64)> {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0).then(a.cmp(&b)));
    // (tp, rank) per point, kept as integers so recall comparisons are exact
    let mut pts = Vec::with_capacity(order.len());
    let mut tp = 0u64;
    for (rank, &i) in order.iter().enumerate() {
        tp += scored[i].1 as u64;
        pts.push((tp, rank as u64 + 1));
    }
    samples
        .fractions()
        .into_iter()
        .map(|(num, den)| {
            let best = pts
                .iter()
                .filter(|(tp, _)| tp * den >= num * n_gt as u64)
                .map(|&(tp, n)| tp as f64 / n as f64)
                .fold(0.0, f64::max);
            (num as f64 / den as f64, best)
        })
        .collect()
}

/// Average precision in percent; `None` without ground truth.
pub fn average_precision(scored: &[(f64, bool)], n_gt: usize, samples: RecallSamples) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let p = interpolated_precision(scored, n_gt, samples);
    Some(100.0 * p.iter().map(|(_, p)| p).sum::<f64>() / p.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalEntry {
    pub class: usize,
    pub difficulty: Difficulty,
    pub metric: OverlapMetric,
    pub ap: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Interpolated `(recall, precision)` samples.
    pub pr: Vec<(f64, f64)>,
}

impl EvalEntry {
    pub fn key(&self) -> String {
        format!("{}/{}/{}", class_name(self.class), self.difficulty, metric_label(self.metric))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub entries: Vec<EvalEntry>,
}

impl EvalReport {
    pub fn get(&self, class: usize, difficulty: Difficulty, metric: OverlapMetric) -> Option<&EvalEntry> {
        self.entries
            .iter()
            .find(|e| e.class == class && e.difficulty == difficulty && e.metric == metric)
    }

    pub fn ap(&self, class: usize, difficulty: Difficulty, metric: OverlapMetric) -> Option<f64> {
        self.get(class, difficulty, metric).and_then(|e| e.ap)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,difficulty,metric,ap,tp,fp,fn\n");
        for e in &self.entries {
            let ap = e.ap.map_or(String::new(), |a| format!("{a:.4}"));
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                class_name(e.class),
                e.difficulty,
                metric_label(e.metric),
                ap,
                e.tp,
                e.fp,
                e.fn_
            );
        }
        s
    }

    /// `Class/Difficulty/Metric AP=xx.xx` per populated cell.
    pub fn summary_lines(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter_map(|e| e.ap.map(|ap| format!("{} AP={ap:.2}", e.key())))
            .collect()
    }

    /// One `recall precision` file per populated cell.
    pub fn write_pr_files(&self, dir: &Path) -> Result<(), EvalError> {
        for e in self.entries.iter().filter(|e| e.ap.is_some()) {
            let mut s = String::new();
            for (r, p) in &e.pr {
                let _ = writeln!(s, "{r:.6} {p:.6}");
            }
            let name = format!(
                "{}_{}_{}.txt",
                class_name(e.class),
                e.difficulty,
                metric_label(e.metric)
            );
            write_atomic(&dir.join(name), s.as_bytes())?;
        }
        Ok(())
    }
}

pub type Frames = [(String, Vec<Box3D>)];

/// Evaluates every (class, difficulty, metric) cell. Both inputs must cover
/// the same frame ids.
pub fn evaluate(dets: &Frames, gts: &Frames, cfg: &EvalConfig, exec: Execution) -> Result<EvalReport, EvalError> {
    cfg.validate()?;
    let d_ids: BTreeSet<&String> = dets.iter().map(|(id, _)| id).collect();
    let g_ids: BTreeSet<&String> = gts.iter().map(|(id, _)| id).collect();
    if d_ids != g_ids || d_ids.len() != dets.len() || g_ids.len() != gts.len() {
        return Err(EvalError::FrameMismatch {
            only_dets: d_ids.difference(&g_ids).map(|s| s.to_string()).collect(),
            only_gt: g_ids.difference(&d_ids).map(|s| s.to_string()).collect(),
        });
    }
    let mut gts_sorted: Vec<&(String, Vec<Box3D>)> = gts.iter().collect();
    gts_sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut dets_sorted: Vec<&(String, Vec<Box3D>)> = dets.iter().collect();
    dets_sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let pairs: Vec<(&Vec<Box3D>, &Vec<Box3D>)> = dets_sorted.iter().map(|d| &d.1).zip(gts_sorted.iter().map(|g| &g.1)).collect();

    let mut entries = Vec::new();
    for class in 0..NUM_CLASSES {
        for difficulty in Difficulty::ALL {
            for &metric in &cfg.metrics {
                let thr = cfg.iou_thresholds[class];
                let per_frame = exec.map(&pairs, |(d, g)| {
                    match_frame(d, g, class, difficulty, metric, thr, cfg.dont_care_overlap)
                });
                let mut scored = Vec::new();
                let (mut n_gt, mut tp) = (0, 0);
                for m in &per_frame {
                    n_gt += m.n_cared;
                    tp += m.n_matched;
                    scored.extend(m.outcomes.iter().filter_map(|&(s, o)| match o {
                        DetOutcome::TruePositive(_) => Some((s, true)),
                        DetOutcome::FalsePositive => Some((s, false)),
                        DetOutcome::Ignored => None,
                    }));
                }
                let fp = scored.len() - tp;
                let ap = average_precision(&scored, n_gt, cfg.recall);
                let pr = if n_gt > 0 {
                    interpolated_precision(&scored, n_gt, cfg.recall)
                } else {
                    Vec::new()
                };
                entries.push(EvalEntry {
                    class,
                    difficulty,
                    metric,
                    ap,
                    tp,
                    fp,
                    fn_: n_gt - tp,
                    pr,
                });
            }
        }
    }
    Ok(EvalReport { entries })
}

/// Converts parsed label or result files to boxes for [`evaluate`].
pub fn frames_from_labels(frames: &[(String, Vec<KittiLabel>)]) -> Vec<(String, Vec<Box3D>)> {
    frames
        .iter()
        .map(|(id, recs)| (id.clone(), recs.iter().map(kitti_to_box3d).collect()))
        .collect()
}
