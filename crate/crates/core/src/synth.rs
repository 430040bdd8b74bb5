//! Synthetic street scenes: cuboids standing on a flat ground plane, an
//! optional flat-shaded rendering, and depth-range splits of annotated sets.

use std::f64::consts::PI;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::camera::{
    box3d_corners, egocentric_to_allocentric, project_box_to_2d, Box2D, Box3D, CameraIntrinsics, ObjectMeta, Point3,
    Size3,
};
use crate::classes::{default_priors, NUM_CLASSES};
use crate::overlap::{bev_overlap, iou_2d, RotatedRect};
use crate::par::{derive_seed, Execution};
use crate::raster::Raster;

/// Generator settings. Depths refer to box centers.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub min_objects: usize,
    pub max_objects: usize,
    /// Relative frequency of each detected class.
    pub class_weights: [f64; NUM_CLASSES],
    pub z_lo: f64,
    pub z_hi: f64,
    /// Relative size jitter around the class reference size.
    pub size_jitter: f64,
    /// Camera height above the ground plane, m.
    pub camera_height: f64,
    /// Allow objects to leave the image; otherwise they are kept fully inside.
    pub truncation: bool,
    /// Derive occlusion levels from nearer objects; otherwise all are visible.
    pub occlusion: bool,
    /// Reject placements whose 2D box overlaps an existing one above this IoU.
    pub max_2d_iou: Option<f64>,
    /// Minimum depth of the nearest corner, m.
    pub min_nearest_depth: f64,
    pub render: bool,
    /// Placement attempts per object before it is skipped.
    pub max_attempts: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            min_objects: 1,
            max_objects: 10,
            class_weights: [0.6, 0.2, 0.2],
            z_lo: 5.0,
            z_hi: 40.0,
            size_jitter: 0.1,
            camera_height: 1.65,
            truncation: true,
            occlusion: true,
            max_2d_iou: None,
            min_nearest_depth: 0.5,
            render: false,
            max_attempts: 100,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.z_lo > 0.0 && self.z_hi >= self.z_lo) {
            return Err(format!("depth range [{}, {}] must be positive and ordered", self.z_lo, self.z_hi));
        }
        if self.min_objects > self.max_objects {
            return Err("min_objects exceeds max_objects".into());
        }
        if self.class_weights.iter().any(|w| !(*w >= 0.0)) || self.class_weights.iter().sum::<f64>() <= 0.0 {
            return Err("class weights must be non-negative with a positive sum".into());
        }
        if !(0.0..1.0).contains(&self.size_jitter) {
            return Err("size_jitter must be in [0, 1)".into());
        }
        if !(self.min_nearest_depth > 0.0) {
            return Err("min_nearest_depth must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub k: CameraIntrinsics,
    pub objects: Vec<Box3D>,
    pub image: Option<Raster>,
}

fn clamped_box(k: &CameraIntrinsics, b: &Box3D) -> Option<(Box2D, Box2D)> {
    let full = project_box_to_2d(k, b, false).ok()?;
    let clamped = full.clamp_to(k.width as f64, k.height as f64);
    (clamped.area() > 0.0).then_some((full, clamped))
}

fn sample_object(p: &SceneParams, k: &CameraIntrinsics, classes: &WeightedIndex<f64>, rng: &mut ChaCha8Rng) -> Box3D {
    let class = classes.sample(rng);
    let prior = default_priors()[class].size;
    let mut jitter = || 1.0 + p.size_jitter * rng.gen_range(-1.0..=1.0);
    let size = Size3::new(prior.w * jitter(), prior.h * jitter(), prior.l * jitter());
    let z = if p.z_hi > p.z_lo { rng.gen_range(p.z_lo..p.z_hi) } else { p.z_lo };
    let u = rng.gen_range(0.0..k.width as f64);
    let x = (u * k.projective_depth(z) - k.cu * z - k.translation[0]) / k.fx;
    let y = p.camera_height - 0.5 * size.h;
    let yaw = rng.gen_range(-PI..PI);
    Box3D::new(Point3::new(x, y, z), size, yaw, class)
}

/// Fraction of `target` covered by any of `occluders`, on a sample grid.
fn covered_fraction(target: &Box2D, occluders: &[Box2D]) -> f64 {
    const N: usize = 16;
    if occluders.is_empty() {
        return 0.0;
    }
    let mut hit = 0;
    for i in 0..N {
        for j in 0..N {
            let u = target.u_min + (i as f64 + 0.5) / N as f64 * target.width();
            let v = target.v_min + (j as f64 + 0.5) / N as f64 * target.height();
            if occluders.iter().any(|o| o.contains(u, v)) {
                hit += 1;
            }
        }
    }
    hit as f64 / (N * N) as f64
}

fn occlusion_level(frac: f64) -> i8 {
    if frac < 0.1 {
        0
    } else if frac < 0.5 {
        1
    } else {
        2
    }
}

pub fn generate_scene<R: Rng + ?Sized>(p: &SceneParams, k: &CameraIntrinsics, rng: &mut R) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(rng.gen());
    let classes = WeightedIndex::new(p.class_weights).expect("validated class weights");
    let n = rng.gen_range(p.min_objects..=p.max_objects);
    let mut objects: Vec<Box3D> = Vec::with_capacity(n);
    let mut boxes: Vec<(Box2D, Box2D)> = Vec::with_capacity(n);
    for _ in 0..n {
        for _ in 0..p.max_attempts {
            let b = sample_object(p, k, &classes, &mut rng);
            if b.nearest_depth() < p.min_nearest_depth {
                continue;
            }
            let Some((full, clamped)) = clamped_box(k, &b) else { continue };
            if !p.truncation && clamped != full {
                continue;
            }
            let fp = RotatedRect::from_box(&b);
            if objects
                .iter()
                .any(|o| bev_overlap(&fp, &RotatedRect::from_box(o)).intersection > 0.0)
            {
                continue;
            }
            if let Some(cap) = p.max_2d_iou {
                if boxes.iter().any(|(_, c)| iou_2d(c, &clamped) > cap) {
                    continue;
                }
            }
            objects.push(b);
            boxes.push((full, clamped));
            break;
        }
    }

    for i in 0..objects.len() {
        let (full, clamped) = boxes[i];
        let truncation = (1.0 - clamped.area() / full.area()).clamp(0.0, 1.0);
        let occlusion = if p.occlusion {
            let dist = |b: &Box3D| b.center.x.hypot(b.center.z);
            let d = dist(&objects[i]);
            let nearer: Vec<Box2D> = (0..objects.len())
                .filter(|&j| j != i && dist(&objects[j]) < d)
                .map(|j| boxes[j].1)
                .collect();
            occlusion_level(covered_fraction(&clamped, &nearer))
        } else {
            0
        };
        let b = &mut objects[i];
        b.meta = Some(ObjectMeta {
            truncation,
            occlusion,
            alpha: Some(egocentric_to_allocentric(b.yaw, b.center)),
            bbox: Some(clamped),
            label: None,
        });
    }

    let image = p.render.then(|| render_scene(k, &objects, p.camera_height));
    Scene {
        k: *k,
        objects,
        image,
    }
}

/// Scene `i` is drawn from its own stream of `seed`, so the result does not
/// depend on the execution mode.
pub fn generate_scenes(p: &SceneParams, k: &CameraIntrinsics, n: usize, seed: u64, exec: Execution) -> Vec<Scene> {
    exec.map_range(n, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        generate_scene(p, k, &mut rng)
    })
}

/// Cuboid faces as corner indices.
const FACES: [[usize; 4]; 6] = [
    [0, 1, 2, 3],
    [4, 5, 6, 7],
    [0, 1, 5, 4],
    [1, 2, 6, 5],
    [2, 3, 7, 6],
    [3, 0, 4, 7],
];
const FACE_SHADE: [f32; 6] = [0.5, 1.0, 0.85, 0.7, 0.8, 0.65];

fn object_color(i: usize) -> [f32; 3] {
    let h = derive_seed(0x5eed, i as u64);
    let c = |s: u32| 0.25 + 0.7 * ((h >> s) & 0xff) as f32 / 255.0;
    [c(0), c(8), c(16)]
}

fn fill_convex(img: &mut Raster, poly: &[(f64, f64)], color: [f32; 3]) {
    let (w, h) = (img.width(), img.height());
    let umin = poly.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
    let umax = poly.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).ceil().min(w as f64) as usize;
    let vmin = poly.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
    let vmax = poly.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil().min(h as f64) as usize;
    let n = poly.len();
    for y in vmin..vmax {
        for x in umin..umax {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut pos = false;
            let mut neg = false;
            for i in 0..n {
                let (ax, ay) = poly[i];
                let (bx, by) = poly[(i + 1) % n];
                let cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
                pos |= cross > 0.0;
                neg |= cross < 0.0;
            }
            if !(pos && neg) {
                img.pixel_mut(x, y).copy_from_slice(&color);
            }
        }
    }
}

/// Flat-shaded rendering over a sky/ground gradient, far objects first.
pub fn render_scene(k: &CameraIntrinsics, objects: &[Box3D], camera_height: f64) -> Raster {
    let (w, h) = (k.width as usize, k.height as usize);
    let mut img = Raster::new(w, h, 3);
    let horizon = k.cv;
    for y in 0..h {
        let v = y as f64 + 0.5;
        let color = if v < horizon {
            let t = (v / horizon.max(1.0)) as f32;
            [0.55 + 0.2 * t, 0.65 + 0.15 * t, 0.85]
        } else {
            // ground brightens toward the camera
            let t = ((v - horizon) / (h as f64 - horizon).max(1.0)) as f32;
            let g = 0.25 + 0.3 * t + 0.02 * camera_height as f32;
            [g, g, g * 0.95]
        };
        for x in 0..w {
            img.pixel_mut(x, y).copy_from_slice(&color);
        }
    }
    let mut order: Vec<usize> = (0..objects.len()).collect();
    let dist = |b: &Box3D| b.center.x.hypot(b.center.z);
    order.sort_by(|&a, &b| dist(&objects[b]).total_cmp(&dist(&objects[a])).then(a.cmp(&b)));
    for i in order {
        let corners = box3d_corners(&objects[i]);
        let Ok(proj) = corners
            .iter()
            .map(|c| k.project(*c))
            .collect::<Result<Vec<_>, _>>()
        else {
            continue;
        };
        let mut faces: Vec<usize> = (0..FACES.len()).collect();
        let face_depth = |f: usize| FACES[f].iter().map(|&c| corners[c].z).sum::<f64>();
        faces.sort_by(|&a, &b| face_depth(b).total_cmp(&face_depth(a)));
        let base = object_color(i);
        for f in faces {
            let poly: Vec<(f64, f64)> = FACES[f].iter().map(|&c| proj[c]).collect();
            let color = base.map(|c| c * FACE_SHADE[f]);
            fill_convex(&mut img, &poly, color);
        }
    }
    img
}

/// Union of half-open depth intervals `[lo, hi)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DepthRange {
    pub intervals: Vec<(f64, f64)>,
}

impl DepthRange {
    pub fn new(intervals: &[(f64, f64)]) -> Self {
        Self {
            intervals: intervals.to_vec(),
        }
    }

    pub fn contains(&self, z: f64) -> bool {
        self.intervals.iter().any(|&(lo, hi)| z >= lo && z < hi)
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.iter().all(|&(lo, hi)| !(hi > lo))
    }
}

impl std::fmt::Display for DepthRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.intervals.iter().map(|(a, b)| format!("{a}-{b}")).collect();
        f.write_str(&parts.join(","))
    }
}

impl std::str::FromStr for DepthRange {
    type Err = String;

    /// `"0-10,20-40"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut intervals = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (a, b) = part
                .split_once('-')
                .ok_or_else(|| format!("range {part:?} is not `lo-hi`"))?;
            let lo: f64 = a.trim().parse().map_err(|_| format!("bad bound in {part:?}"))?;
            let hi: f64 = b.trim().parse().map_err(|_| format!("bad bound in {part:?}"))?;
            if hi < lo {
                return Err(format!("range {part:?} is reversed"));
            }
            intervals.push((lo, hi));
        }
        Ok(Self { intervals })
    }
}

/// Named train/val depth partitions used for cross-range generalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeSplitKind {
    /// Train on near objects, validate on far ones.
    FarNear,
    /// Train on far objects, validate on near ones.
    NearFar,
    /// Train on near and far objects, validate on the middle band.
    NearFarMiddle,
}

impl RangeSplitKind {
    pub const ALL: [RangeSplitKind; 3] = [RangeSplitKind::FarNear, RangeSplitKind::NearFar, RangeSplitKind::NearFarMiddle];

    pub fn ranges(self) -> (DepthRange, DepthRange) {
        match self {
            RangeSplitKind::FarNear => (DepthRange::new(&[(0.0, 20.0)]), DepthRange::new(&[(20.0, 50.0)])),
            RangeSplitKind::NearFar => (DepthRange::new(&[(20.0, 50.0)]), DepthRange::new(&[(0.0, 20.0)])),
            RangeSplitKind::NearFarMiddle => (
                DepthRange::new(&[(0.0, 10.0), (20.0, 40.0)]),
                DepthRange::new(&[(10.0, 20.0)]),
            ),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RangeSplitKind::FarNear => "far-near",
            RangeSplitKind::NearFar => "near-far",
            RangeSplitKind::NearFarMiddle => "nearfar-middle",
        }
    }
}

impl std::str::FromStr for RangeSplitKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RangeSplitKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown split {s:?} (far-near, near-far, nearfar-middle)"))
    }
}

/// Keeps, per frame, the annotations whose depth lies in `range`. Frames
/// left without annotations are dropped; the index of each kept frame in the
/// input is returned with it.
pub fn filter_by_range<T: Clone>(frames: &[Vec<T>], range: &DepthRange, depth: impl Fn(&T) -> f64) -> Vec<(usize, Vec<T>)> {
    frames
        .iter()
        .enumerate()
        .filter_map(|(i, objs)| {
            let kept: Vec<T> = objs.iter().filter(|o| range.contains(depth(o))).cloned().collect();
            (!kept.is_empty()).then_some((i, kept))
        })
        .collect()
}

pub type SplitSet = Vec<(usize, Vec<Box3D>)>;

/// Train and validation sets of a depth-range split, by box-center depth.
pub fn make_range_split(frames: &[Vec<Box3D>], train: &DepthRange, val: &DepthRange) -> (SplitSet, SplitSet) {
    let z = |b: &Box3D| b.center.z;
    (filter_by_range(frames, train, z), filter_by_range(frames, val, z))
}
