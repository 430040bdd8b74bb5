//! Minimal interleaved `f32` image buffer and the bilinear crop/rescale used
//! to build virtual views.

use crate::camera::Box2D;

/// Row-major interleaved raster. Sample values are nominally in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, value: &[f32]) -> Self {
        let channels = value.len();
        let mut data = Vec::with_capacity(width * height * channels);
        for _ in 0..width * height {
            data.extend_from_slice(value);
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    /// Wraps an existing buffer; `None` when the length does not match.
    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Option<Self> {
        (data.len() == width * height * channels).then_some(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Quantizes to 8-bit with rounding and saturation.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
    }
}

/// Two-tap bilinear weights along one axis.
#[derive(Debug, Clone, Copy)]
struct Taps {
    idx: [usize; 2],
    w: [f32; 2],
}

/// Builds taps mapping `n_out` output samples onto the source interval
/// `[start, start + n_out * step)`. Taps falling outside `0..n_src` get zero weight.
fn axis_taps(n_out: usize, n_src: usize, start: f64, step: f64) -> Vec<Taps> {
    (0..n_out)
        .map(|i| {
            // pixel centers sit at +0.5 in continuous coordinates
            let s = start + (i as f64 + 0.5) * step - 0.5;
            let f = s.floor();
            let frac = s - f;
            let i0 = f as i64;
            let mut t = Taps {
                idx: [0, 0],
                w: [0.0, 0.0],
            };
            for (k, (pos, wt)) in [(i0, 1.0 - frac), (i0 + 1, frac)].into_iter().enumerate() {
                if pos >= 0 && (pos as usize) < n_src {
                    t.idx[k] = pos as usize;
                    t.w[k] = wt as f32;
                }
            }
            t
        })
        .collect()
}

/// Resamples the continuous source region `crop` onto an `out_w x out_h` grid
/// with bilinear interpolation. Source samples outside the image read as zero.
pub(crate) fn resample_region(src: &Raster, crop: &Box2D, out_w: usize, out_h: usize) -> Raster {
    let step_u = crop.width() / out_w as f64;
    let step_v = crop.height() / out_h as f64;
    let xs = axis_taps(out_w, src.width, crop.u_min, step_u);
    let ys = axis_taps(out_h, src.height, crop.v_min, step_v);
    let mut out = Raster::new(out_w, out_h, src.channels);
    if out.data.is_empty() {
        return out;
    }
    match src.channels {
        1 => blend_rows::<1>(src, &mut out, &xs, &ys),
        3 => blend_rows::<3>(src, &mut out, &xs, &ys),
        4 => blend_rows::<4>(src, &mut out, &xs, &ys),
        _ => blend_rows_dyn(src, &mut out, &xs, &ys),
    }
    out
}

/// Bilinear blend with the channel count known at compile time.
fn blend_rows<const C: usize>(src: &Raster, out: &mut Raster, xs: &[Taps], ys: &[Taps]) {
    let stride = src.width * C;
    for (row, ty) in out.data.chunks_exact_mut(xs.len() * C).zip(ys) {
        if ty.w == [0.0, 0.0] {
            continue;
        }
        let r0 = &src.data[ty.idx[0] * stride..][..stride];
        let r1 = &src.data[ty.idx[1] * stride..][..stride];
        for (px, tx) in row.chunks_exact_mut(C).zip(xs) {
            let w = [ty.w[0] * tx.w[0], ty.w[0] * tx.w[1], ty.w[1] * tx.w[0], ty.w[1] * tx.w[1]];
            let (a, b) = (tx.idx[0] * C, tx.idx[1] * C);
            let (p00, p01, p10, p11): (&[f32; C], &[f32; C], &[f32; C], &[f32; C]) = (
                r0[a..a + C].try_into().unwrap(),
                r0[b..b + C].try_into().unwrap(),
                r1[a..a + C].try_into().unwrap(),
                r1[b..b + C].try_into().unwrap(),
            );
            for c in 0..C {
                px[c] = w[0] * p00[c] + w[1] * p01[c] + w[2] * p10[c] + w[3] * p11[c];
            }
        }
    }
}

fn blend_rows_dyn(src: &Raster, out: &mut Raster, xs: &[Taps], ys: &[Taps]) {
    let ch = src.channels;
    let stride = src.width * ch;
    for (row, ty) in out.data.chunks_exact_mut(xs.len() * ch).zip(ys) {
        if ty.w == [0.0, 0.0] {
            continue;
        }
        let r0 = &src.data[ty.idx[0] * stride..][..stride];
        let r1 = &src.data[ty.idx[1] * stride..][..stride];
        for (px, tx) in row.chunks_exact_mut(ch).zip(xs) {
            let w = [ty.w[0] * tx.w[0], ty.w[0] * tx.w[1], ty.w[1] * tx.w[0], ty.w[1] * tx.w[1]];
            let (a, b) = (tx.idx[0] * ch, tx.idx[1] * ch);
            for c in 0..ch {
                px[c] = w[0] * r0[a + c] + w[1] * r0[b + c] + w[2] * r1[a + c] + w[3] * r1[b + c];
            }
        }
    }
}
