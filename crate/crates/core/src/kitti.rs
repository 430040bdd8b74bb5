//! KITTI object-benchmark files: labels, results, calibration and split lists,
//! plus the bridge between label records and [`Box3D`].

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::camera::{
    egocentric_to_allocentric, project_box_to_2d, Box2D, Box3D, CameraIntrinsics, GeometryError, ObjectMeta,
    Point3, Size3,
};
use crate::classes::{class_id, class_name, CLASS_NAMES};

pub const DONT_CARE: &str = "DontCare";
/// Sizes of the standard train/val partition of the KITTI training set.
pub const TRAIN_SPLIT_SIZE: usize = 3712;
pub const VAL_SPLIT_SIZE: usize = 3769;

#[derive(Debug, Error)]
pub enum KittiError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("calibration has no P2 entry")]
    MissingP2,
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    InFile { path: PathBuf, source: Box<KittiError> },
    #[error("invalid split: {0}")]
    Split(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl KittiError {
    fn in_file(self, path: &Path) -> Self {
        match self {
            e @ (KittiError::Io { .. } | KittiError::InFile { .. }) => e,
            e => KittiError::InFile {
                path: path.to_path_buf(),
                source: Box::new(e),
            },
        }
    }
}

fn read_text(path: &Path) -> Result<String, KittiError> {
    fs::read_to_string(path).map_err(|source| KittiError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), KittiError> {
    let io_err = |source| KittiError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

/// One line of a label or result file.
#[derive(Debug, Clone, PartialEq)]
pub struct KittiLabel {
    pub kind: String,
    pub truncated: f64,
    pub occluded: i8,
    pub alpha: f64,
    pub bbox: Box2D,
    /// `(h, w, l)` in meters.
    pub dimensions: [f64; 3],
    /// Bottom-face center in camera coordinates.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl KittiLabel {
    pub fn is_dont_care(&self) -> bool {
        self.kind == DONT_CARE
    }

    pub fn height_px(&self) -> f64 {
        self.bbox.height()
    }
}

pub fn parse_label_line(line: &str, line_no: usize) -> Result<KittiLabel, KittiError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 15 && fields.len() != 16 {
        return Err(KittiError::Parse {
            line: line_no,
            msg: format!("expected 15 or 16 fields, found {}", fields.len()),
        });
    }
    let num = |i: usize| -> Result<f64, KittiError> {
        fields[i].parse::<f64>().map_err(|_| KittiError::Parse {
            line: line_no,
            msg: format!("field {} is not a number: {:?}", i + 1, fields[i]),
        })
    };
    let occluded = fields[2].parse::<i8>().map_err(|_| KittiError::Parse {
        line: line_no,
        msg: format!("occlusion is not an integer: {:?}", fields[2]),
    })?;
    Ok(KittiLabel {
        kind: fields[0].to_string(),
        truncated: num(1)?,
        occluded,
        alpha: num(3)?,
        bbox: Box2D::new(num(4)?, num(5)?, num(6)?, num(7)?),
        dimensions: [num(8)?, num(9)?, num(10)?],
        location: [num(11)?, num(12)?, num(13)?],
        rotation_y: num(14)?,
        score: if fields.len() == 16 { Some(num(15)?) } else { None },
    })
}

pub fn parse_label_file(text: &str) -> Result<Vec<KittiLabel>, KittiError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_label_line(l, i + 1))
        .collect()
}

/// Two decimals for geometry, four for the score.
pub fn format_label(r: &KittiLabel) -> String {
    let mut s = format!(
        "{} {:.2} {} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2}",
        r.kind,
        r.truncated,
        r.occluded,
        r.alpha,
        r.bbox.u_min,
        r.bbox.v_min,
        r.bbox.u_max,
        r.bbox.v_max,
        r.dimensions[0],
        r.dimensions[1],
        r.dimensions[2],
        r.location[0],
        r.location[1],
        r.location[2],
        r.rotation_y,
    );
    if let Some(score) = r.score {
        let _ = write!(s, " {score:.4}");
    }
    s
}

pub fn format_label_file(records: &[KittiLabel]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&format_label(r));
        s.push('\n');
    }
    s
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Converts a record to a geometric-center box. Annotation fields not
/// represented by the box are kept in its meta so the inverse is exact.
pub fn kitti_to_box3d(r: &KittiLabel) -> Box3D {
    let [h, w, l] = r.dimensions;
    let [x, y, z] = r.location;
    let id = class_id(&r.kind);
    Box3D {
        center: Point3::new(x, y - 0.5 * h, z),
        size: Size3::new(w, h, l),
        // not wrapped: DontCare rows carry sentinel angles
        yaw: r.rotation_y,
        class_id: id,
        score: r.score,
        meta: Some(ObjectMeta {
            truncation: r.truncated,
            occlusion: r.occluded,
            alpha: Some(r.alpha),
            bbox: Some(r.bbox),
            label: (id >= CLASS_NAMES.len() || class_name(id) != r.kind).then(|| r.kind.clone()),
        }),
    }
}

/// Inverse of [`kitti_to_box3d`]. Values are snapped to the decimal grid of
/// the file format (two places, four for scores). A missing 2D box is computed by projecting with `k`
/// and clipping to the image; without `k` it is left empty.
pub fn box3d_to_kitti(b: &Box3D, k: Option<&CameraIntrinsics>) -> KittiLabel {
    let meta = b.meta.as_ref();
    let h = round2(b.size.h);
    let kind = meta
        .and_then(|m| m.label.clone())
        .unwrap_or_else(|| class_name(b.class_id).to_string());
    let bbox = meta
        .and_then(|m| m.bbox)
        .or_else(|| k.and_then(|k| project_box_to_2d(k, b, true).ok()))
        .unwrap_or(Box2D::new(0.0, 0.0, 0.0, 0.0));
    KittiLabel {
        kind,
        truncated: round2(meta.map_or(0.0, |m| m.truncation)),
        occluded: meta.map_or(0, |m| m.occlusion),
        alpha: round2(
            meta.and_then(|m| m.alpha)
                .unwrap_or_else(|| egocentric_to_allocentric(b.yaw, b.center)),
        ),
        bbox: Box2D::new(round2(bbox.u_min), round2(bbox.v_min), round2(bbox.u_max), round2(bbox.v_max)),
        dimensions: [h, round2(b.size.w), round2(b.size.l)],
        location: [
            round2(b.center.x),
            round2(b.center.y + 0.5 * b.size.h),
            round2(b.center.z),
        ],
        rotation_y: round2(b.yaw),
        score: b.score.map(|v| (v * 1e4).round() / 1e4),
    }
}

/// Benchmark difficulty tiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "Easy",
            Difficulty::Moderate => "Moderate",
            Difficulty::Hard => "Hard",
        }
    }

    /// Minimum 2D box height in pixels.
    pub fn min_height(self) -> f64 {
        match self {
            Difficulty::Easy => 40.0,
            _ => 25.0,
        }
    }

    pub fn max_occlusion(self) -> i8 {
        match self {
            Difficulty::Easy => 0,
            Difficulty::Moderate => 1,
            Difficulty::Hard => 2,
        }
    }

    pub fn max_truncation(self) -> f64 {
        match self {
            Difficulty::Easy => 0.15,
            Difficulty::Moderate => 0.3,
            Difficulty::Hard => 0.5,
        }
    }

    pub fn admits(self, height_px: f64, occlusion: i8, truncation: f64) -> bool {
        height_px >= self.min_height()
            && (0..=self.max_occlusion()).contains(&occlusion)
            && truncation <= self.max_truncation()
    }
}

impl std::fmt::Display for Difficulty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Difficulty::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown difficulty {s:?}"))
    }
}

/// Easiest tier whose limits all hold.
pub fn difficulty(height_px: f64, occlusion: i8, truncation: f64) -> Option<Difficulty> {
    Difficulty::ALL
        .into_iter()
        .find(|d| d.admits(height_px, occlusion, truncation))
}

/// Calibration file entries in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Calib {
    pub entries: Vec<(String, Vec<f64>)>,
}

impl Calib {
    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_slice())
    }

    pub fn p2(&self) -> Result<[f64; 12], KittiError> {
        let p = self.get("P2").ok_or(KittiError::MissingP2)?;
        p.try_into().map_err(|_| KittiError::Parse {
            line: 0,
            msg: format!("P2 has {} values, expected 12", p.len()),
        })
    }

    /// Camera model of the left color camera for an image of the given size.
    pub fn intrinsics(&self, width: u32, height: u32) -> Result<CameraIntrinsics, KittiError> {
        let p = self.p2()?;
        Ok(CameraIntrinsics::new(p[0], p[5], p[2], p[6], width, height)?.with_translation([p[3], p[7], p[11]]))
    }

    /// A complete calibration file whose color cameras share `k`.
    pub fn from_intrinsics(k: &CameraIntrinsics) -> Self {
        let [tx, ty, tz] = k.translation;
        let p2 = vec![k.fx, 0.0, k.cu, tx, 0.0, k.fy, k.cv, ty, 0.0, 0.0, 1.0, tz];
        let mut p0 = p2.clone();
        p0[3] = 0.0;
        p0[7] = 0.0;
        p0[11] = 0.0;
        let eye3 = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let eye34 = vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        Self {
            entries: vec![
                ("P0".into(), p0.clone()),
                ("P1".into(), p0),
                ("P2".into(), p2.clone()),
                ("P3".into(), p2),
                ("R0_rect".into(), eye3),
                ("Tr_velo_to_cam".into(), eye34.clone()),
                ("Tr_imu_to_velo".into(), eye34),
            ],
        }
    }
}

pub fn parse_calib(text: &str) -> Result<Calib, KittiError> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, rest) = line.split_once(':').ok_or_else(|| KittiError::Parse {
            line: i + 1,
            msg: "expected `key: values`".into(),
        })?;
        let values = rest
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| KittiError::Parse {
                line: i + 1,
                msg: format!("{key}: {e}"),
            })?;
        entries.push((key.trim().to_string(), values));
    }
    let calib = Calib { entries };
    calib.p2()?;
    Ok(calib)
}

/// Shortest round-trip mantissa with a C-style signed two-digit exponent.
fn format_sci(x: f64) -> String {
    let s = format!("{x:e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

pub fn format_calib(c: &Calib) -> String {
    let mut s = String::new();
    for (key, values) in &c.entries {
        s.push_str(key);
        s.push(':');
        for v in values {
            s.push(' ');
            s.push_str(&format_sci(*v));
        }
        s.push('\n');
    }
    s
}

/// Parses a list of frame ids, one zero-padded six-digit id per line.
pub fn parse_split(text: &str) -> Result<Vec<String>, KittiError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let id = l.trim();
            if id.len() == 6 && id.bytes().all(|b| b.is_ascii_digit()) {
                Ok(id.to_string())
            } else {
                Err(KittiError::Parse {
                    line: i + 1,
                    msg: format!("not a six-digit frame id: {id:?}"),
                })
            }
        })
        .collect()
}

pub fn load_split(path: &Path) -> Result<Vec<String>, KittiError> {
    parse_split(&read_text(path)?).map_err(|e| e.in_file(path))
}

pub fn format_split(ids: &[String]) -> String {
    ids.iter().map(|id| format!("{id}\n")).collect()
}

pub fn frame_id(index: usize) -> String {
    format!("{index:06}")
}

/// Checks a train/val pair against the standard partition sizes and for overlap.
pub fn validate_standard_split(train: &[String], val: &[String]) -> Result<(), KittiError> {
    if train.len() != TRAIN_SPLIT_SIZE || val.len() != VAL_SPLIT_SIZE {
        return Err(KittiError::Split(format!(
            "expected {TRAIN_SPLIT_SIZE}/{VAL_SPLIT_SIZE} frames, found {}/{}",
            train.len(),
            val.len()
        )));
    }
    let seen: std::collections::HashSet<&String> = train.iter().collect();
    if let Some(dup) = val.iter().find(|id| seen.contains(id)) {
        return Err(KittiError::Split(format!("frame {dup} is in both splits")));
    }
    Ok(())
}

/// Writes one result file per frame under `dir`, creating empty files for
/// frames without detections.
pub fn write_results(dir: &Path, frames: &[(String, Vec<KittiLabel>)]) -> Result<(), KittiError> {
    for (frame, dets) in frames {
        write_atomic(&dir.join(format!("{frame}.txt")), format_label_file(dets).as_bytes())?;
    }
    Ok(())
}

pub fn read_label_file(path: &Path) -> Result<Vec<KittiLabel>, KittiError> {
    parse_label_file(&read_text(path)?).map_err(|e| e.in_file(path))
}

pub fn read_calib_file(path: &Path) -> Result<Calib, KittiError> {
    parse_calib(&read_text(path)?).map_err(|e| e.in_file(path))
}

/// Reads every `*.txt` file in a result or label directory, sorted by frame.
pub fn read_label_dir(dir: &Path) -> Result<Vec<(String, Vec<KittiLabel>)>, KittiError> {
    let mut out = Vec::new();
    for frame in list_frames(dir)? {
        let recs = read_label_file(&dir.join(format!("{frame}.txt")))?;
        out.push((frame, recs));
    }
    Ok(out)
}

/// Frame ids of the `*.txt` files in `dir`, sorted.
pub fn list_frames(dir: &Path) -> Result<Vec<String>, KittiError> {
    let io_err = |source| KittiError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let p = entry.map_err(io_err)?.path();
        if p.extension().is_some_and(|e| e == "txt") {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// The object-benchmark directory layout rooted at `root`.
#[derive(Debug, Clone)]
pub struct KittiDataset {
    pub root: PathBuf,
}

impl KittiDataset {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn image_dir(&self) -> PathBuf {
        self.root.join("image_2")
    }

    pub fn label_dir(&self) -> PathBuf {
        self.root.join("label_2")
    }

    pub fn calib_dir(&self) -> PathBuf {
        self.root.join("calib")
    }

    pub fn image_path(&self, frame: &str) -> PathBuf {
        self.image_dir().join(format!("{frame}.png"))
    }

    pub fn label_path(&self, frame: &str) -> PathBuf {
        self.label_dir().join(format!("{frame}.txt"))
    }

    pub fn calib_path(&self, frame: &str) -> PathBuf {
        self.calib_dir().join(format!("{frame}.txt"))
    }

    /// Frames listed in the calibration directory.
    pub fn frames(&self) -> Result<Vec<String>, KittiError> {
        list_frames(&self.calib_dir())
    }

    pub fn labels(&self, frame: &str) -> Result<Vec<KittiLabel>, KittiError> {
        read_label_file(&self.label_path(frame))
    }

    pub fn calib(&self, frame: &str) -> Result<Calib, KittiError> {
        read_calib_file(&self.calib_path(frame))
    }
}
