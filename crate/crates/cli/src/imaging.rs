//! PNG conversion for [`Raster`] images, which hold RGB values in `[0, 1]`.

use std::io::Cursor;
use std::path::Path;

use image::{ImageOutputFormat, RgbImage};
use virtview::kitti::write_atomic;
use virtview::raster::Raster;

use crate::error::CliError;

pub fn load_png(path: &Path) -> Result<Raster, CliError> {
    let img = image::open(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .into_rgb8();
    let (w, h) = img.dimensions();
    let data = img
        .into_raw()
        .into_iter()
        .map(|v| v as f32 / 255.0)
        .collect();
    Raster::from_vec(w as usize, h as usize, 3, data)
        .ok_or_else(|| CliError::Internal("image buffer size mismatch".into()))
}

/// Image size without decoding pixels.
pub fn png_size(path: &Path) -> Result<(u32, u32), CliError> {
    image::image_dimensions(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn encode_png(r: &Raster) -> Result<Vec<u8>, CliError> {
    if r.channels() != 3 {
        return Err(CliError::Internal(format!(
            "cannot write a {}-channel image",
            r.channels()
        )));
    }
    let bytes: Vec<u8> = r
        .data()
        .iter()
        .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let img = RgbImage::from_raw(r.width() as u32, r.height() as u32, bytes)
        .ok_or_else(|| CliError::Internal("image buffer size mismatch".into()))?;
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageOutputFormat::Png)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn save_png(path: &Path, r: &Raster) -> Result<(), CliError> {
    write_atomic(path, &encode_png(r)?).map_err(CliError::from)
}
