//! Overlap measures: axis-aligned 2D IoU, rotated bird's-eye-view IoU by
//! convex polygon clipping, 3D IoU, and greedy non-maximum suppression.

use std::cmp::Ordering;

use crate::camera::{rotate_y, Box2D, Box3D};

/// Tolerance for classifying a point as lying on a clipping edge, m.
pub const CLIP_EPS: f64 = 1e-9;
/// Polygons smaller than this are treated as empty, m^2.
pub const MIN_AREA: f64 = 1e-12;

pub fn iou_2d(a: &Box2D, b: &Box2D) -> f64 {
    let inter = a.intersection(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Footprint of a box on the ground (x, z) plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotatedRect {
    pub cx: f64,
    pub cz: f64,
    /// Extent along the local x axis (box length).
    pub length: f64,
    /// Extent along the local z axis (box width).
    pub width: f64,
    pub yaw: f64,
}

impl RotatedRect {
    pub fn from_box(b: &Box3D) -> Self {
        Self {
            cx: b.center.x,
            cz: b.center.z,
            length: b.size.l,
            width: b.size.w,
            yaw: b.yaw,
        }
    }

    pub fn area(&self) -> f64 {
        self.length * self.width
    }

    /// Corners as `(x, z)` pairs, counterclockwise in the (x, z) plane.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (hl, hw) = (0.5 * self.length, 0.5 * self.width);
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[lx, lz]| {
            let r = rotate_y(self.yaw, [lx, 0.0, lz]);
            [self.cx + r[0], self.cz + r[2]]
        })
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area; positive for counterclockwise polygons.
pub fn signed_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let (p, q) = (poly[i], poly[(i + 1) % n]);
        s += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * s
}

fn ccw(mut poly: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    if signed_area(&poly) < 0.0 {
        poly.reverse();
    }
    poly
}

fn edge_hit(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    // intersection of segment pq with the infinite line ab
    let d1 = cross(a, b, p);
    let d2 = cross(a, b, q);
    let t = d1 / (d1 - d2);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Sutherland-Hodgman: clips `subject` by the convex polygon `clip`.
/// Both polygons must be counterclockwise.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let p = input[j];
            let q = input[(j + 1) % input.len()];
            let p_in = cross(a, b, p) >= -CLIP_EPS;
            let q_in = cross(a, b, q) >= -CLIP_EPS;
            match (p_in, q_in) {
                (true, true) => out.push(q),
                (true, false) => out.push(edge_hit(p, q, a, b)),
                (false, true) => {
                    out.push(edge_hit(p, q, a, b));
                    out.push(q);
                }
                (false, false) => {}
            }
        }
    }
    out
}

/// Result of a rotated overlap computation with its degeneracy flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevOverlap {
    pub intersection: f64,
    pub iou: f64,
    /// Set when either footprint had (near) zero area and the IoU was forced to 0.
    pub degenerate: bool,
}

pub fn bev_overlap(a: &RotatedRect, b: &RotatedRect) -> BevOverlap {
    let (area_a, area_b) = (a.area(), b.area());
    if !(area_a > MIN_AREA && area_b > MIN_AREA) {
        return BevOverlap {
            intersection: 0.0,
            iou: 0.0,
            degenerate: true,
        };
    }
    // cheap reject on bounding circles
    let (dx, dz) = (a.cx - b.cx, a.cz - b.cz);
    let ra = 0.5 * a.length.hypot(a.width);
    let rb = 0.5 * b.length.hypot(b.width);
    if dx * dx + dz * dz > (ra + rb) * (ra + rb) {
        return BevOverlap {
            intersection: 0.0,
            iou: 0.0,
            degenerate: false,
        };
    }
    let pa = ccw(a.corners().to_vec());
    let pb = ccw(b.corners().to_vec());
    let inter = signed_area(&clip_convex(&pa, &pb)).abs().min(area_a.min(area_b));
    let union = area_a + area_b - inter;
    BevOverlap {
        intersection: inter,
        iou: (inter / union).clamp(0.0, 1.0),
        degenerate: false,
    }
}

pub fn bev_iou(a: &RotatedRect, b: &RotatedRect) -> f64 {
    bev_overlap(a, b).iou
}

pub fn bev_iou_boxes(a: &Box3D, b: &Box3D) -> f64 {
    bev_iou(&RotatedRect::from_box(a), &RotatedRect::from_box(b))
}

/// 3D IoU of two boxes that rotate only about the vertical axis.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let y_overlap = a.y_bottom().min(b.y_bottom()) - a.y_top().max(b.y_top());
    if y_overlap <= 0.0 {
        return 0.0;
    }
    let bev = bev_overlap(&RotatedRect::from_box(a), &RotatedRect::from_box(b));
    if bev.intersection <= 0.0 {
        return 0.0;
    }
    let inter = bev.intersection * y_overlap;
    let union = a.size.volume() + b.size.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Overlap measure used for suppression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverlapMetric {
    /// Axis-aligned IoU of 2D boxes.
    Image2d,
    /// Rotated IoU of ground footprints.
    Bev,
    Box3d,
}

impl std::str::FromStr for OverlapMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "2d" => Ok(Self::Image2d),
            "bev" => Ok(Self::Bev),
            "3d" => Ok(Self::Box3d),
            other => Err(format!("unknown overlap metric `{other}` (expected 2d, bev or 3d)")),
        }
    }
}

impl std::fmt::Display for OverlapMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Image2d => "2d",
            Self::Bev => "bev",
            Self::Box3d => "3d",
        })
    }
}

/// Order used wherever detections are ranked: score descending, then index.
pub fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| {
        scores[j]
            .partial_cmp(&scores[i])
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    idx
}

/// Greedy non-maximum suppression. Returns kept indices in rank order.
///
/// A detection is dropped when its overlap with an already kept detection
/// exceeds `threshold`.
pub fn nms<T, S, O>(items: &[T], score: S, overlap: O, threshold: f64) -> Vec<usize>
where
    S: Fn(&T) -> f64,
    O: Fn(&T, &T) -> f64,
{
    let scores: Vec<f64> = items.iter().map(score).collect();
    let mut kept: Vec<usize> = Vec::new();
    for i in score_order(&scores) {
        if kept.iter().all(|&k| overlap(&items[k], &items[i]) <= threshold) {
            kept.push(i);
        }
    }
    kept
}
