use crate::camera::Box2D;

use super::CodecError;

/// Height/width ratios of the per-cell anchor templates.
pub const ASPECT_RATIOS: [f64; 6] = [1.0 / 3.0, 0.5, 0.75, 1.0, 2.0, 3.0];
pub const SCALES_PER_LEVEL: usize = 3;
pub const ANCHORS_PER_CELL: usize = ASPECT_RATIOS.len() * SCALES_PER_LEVEL;
/// Downsampling factors of the two feature levels.
pub const LEVEL_STRIDES: [u32; 2] = [16, 32];

/// One anchor: a reference 2D box attached to a feature-map cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub w: f64,
    pub h: f64,
    pub stride: u32,
    pub col: u32,
    pub row: u32,
    /// Template index in `0..ANCHORS_PER_CELL`, ratio-major.
    pub index: u32,
}

impl Anchor {
    /// Image coordinates of the owning cell's center.
    pub fn cell_center(&self) -> (f64, f64) {
        let s = self.stride as f64;
        ((self.col as f64 + 0.5) * s, (self.row as f64 + 0.5) * s)
    }

    pub fn box2d(&self) -> Box2D {
        let (u, v) = self.cell_center();
        Box2D::from_center_size(u, v, self.w, self.h)
    }
}

fn check_stride(stride: u32) -> Result<(), CodecError> {
    if LEVEL_STRIDES.contains(&stride) {
        Ok(())
    } else {
        Err(CodecError::InvalidStride(stride))
    }
}

/// The 18 `(w, h)` templates of a level: scales `2 s 2^(j/3)` and ratio
/// `h / w = rho` with the area `scale^2` preserved.
pub fn anchor_shapes(stride: u32) -> Result<[(f64, f64); ANCHORS_PER_CELL], CodecError> {
    check_stride(stride)?;
    let mut out = [(0.0, 0.0); ANCHORS_PER_CELL];
    for (ri, rho) in ASPECT_RATIOS.iter().enumerate() {
        for j in 0..SCALES_PER_LEVEL {
            let scale = 2.0 * stride as f64 * 2f64.powf(j as f64 / 3.0);
            let r = rho.sqrt();
            out[ri * SCALES_PER_LEVEL + j] = (scale / r, scale * r);
        }
    }
    Ok(out)
}

/// Feature grid covering an `out_w x out_h` view at `stride`.
pub fn grid_size(stride: u32, out_w: u32, out_h: u32) -> (u32, u32) {
    (out_w.div_ceil(stride), out_h.div_ceil(stride))
}

/// All anchors of one level, cell-major (row, col, template).
pub fn generate_anchors(stride: u32, cols: u32, rows: u32) -> Result<Vec<Anchor>, CodecError> {
    let shapes = anchor_shapes(stride)?;
    let mut out = Vec::with_capacity((cols * rows) as usize * ANCHORS_PER_CELL);
    for row in 0..rows {
        for col in 0..cols {
            for (index, &(w, h)) in shapes.iter().enumerate() {
                out.push(Anchor {
                    w,
                    h,
                    stride,
                    col,
                    row,
                    index: index as u32,
                });
            }
        }
    }
    Ok(out)
}

/// Anchors of both levels for a view of the given size.
pub fn anchors_for_view(out_w: u32, out_h: u32) -> Vec<Anchor> {
    LEVEL_STRIDES
        .iter()
        .flat_map(|&s| {
            let (c, r) = grid_size(s, out_w, out_h);
            generate_anchors(s, c, r).expect("level strides are valid")
        })
        .collect()
}

/// Rebuilds an anchor from its identifying fields, checking it lies on the
/// grid of an `out_w x out_h` view.
pub fn anchor_at(stride: u32, col: u32, row: u32, index: u32, out_w: u32, out_h: u32) -> Result<Anchor, CodecError> {
    let shapes = anchor_shapes(stride)?;
    let (cols, rows) = grid_size(stride, out_w, out_h);
    if col >= cols || row >= rows || index as usize >= ANCHORS_PER_CELL {
        return Err(CodecError::AnchorOutOfGrid {
            stride,
            col,
            row,
            index,
        });
    }
    let (w, h) = shapes[index as usize];
    Ok(Anchor {
        w,
        h,
        stride,
        col,
        row,
        index,
    })
}
