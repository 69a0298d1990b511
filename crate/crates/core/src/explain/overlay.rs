use image::{imageops::FilterType, Rgb, RgbImage};

use super::{CamHeatmap, ExplainError};
use crate::blob::BlobStore;
use crate::domain::BlobId;
use crate::fixtures::encode_png;
use crate::scalar::Scalar;

pub const COLORMAP_STOPS: [(f64, [u8; 3]); 5] = [
    (0.0, [0, 0, 255]),
    (0.25, [0, 255, 255]),
    (0.5, [0, 255, 0]),
    (0.75, [255, 255, 0]),
    (1.0, [255, 0, 0]),
];

/// Blue to red gradient, linear between stops; returns unrounded channels.
pub fn colormap(h: f64) -> [f64; 3] {
    let h = if h.is_nan() { 0.0 } else { h.clamp(0.0, 1.0) };
    let i = COLORMAP_STOPS
        .windows(2)
        .position(|w| h <= w[1].0)
        .unwrap_or(COLORMAP_STOPS.len() - 2);
    let (h0, c0) = COLORMAP_STOPS[i];
    let (h1, c1) = COLORMAP_STOPS[i + 1];
    let t = (h - h0) / (h1 - h0);
    std::array::from_fn(|k| c0[k] as f64 + (c1[k] as f64 - c0[k] as f64) * t)
}

fn to_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Alpha-blends the colormapped heatmap onto `base`. The heatmap's
/// upsampled plane must match the base image size.
pub fn overlay<T: Scalar>(base: &RgbImage, heat: &CamHeatmap<T>, alpha: f64) -> Result<RgbImage, ExplainError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ExplainError::InvalidAlpha(alpha));
    }
    if base.width() != heat.image_width || base.height() != heat.image_height {
        return Err(ExplainError::SizeMismatch);
    }
    Ok(RgbImage::from_fn(base.width(), base.height(), |x, y| {
        let h = heat.pixel(x, y).to_f64_lossy();
        let a = alpha * h;
        let cm = colormap(h);
        let b = base.get_pixel(x, y).0;
        Rgb(std::array::from_fn(|k| to_u8((1.0 - a) * b[k] as f64 + a * cm[k])))
    }))
}

/// Loads `image_ref`, renders the overlay and stores it as PNG.
pub fn overlay_blob<T: Scalar>(
    blobs: &dyn BlobStore,
    image_ref: &BlobId,
    heat: &CamHeatmap<T>,
    alpha: f64,
) -> Result<BlobId, ExplainError> {
    let bytes = blobs
        .get(image_ref)?
        .ok_or_else(|| ExplainError::MissingBlob(image_ref.clone()))?;
    let mut base = image::load_from_memory(&bytes)
        .map_err(|e| ExplainError::Image(e.to_string()))?
        .to_rgb8();
    if base.width() != heat.image_width || base.height() != heat.image_height {
        base = image::imageops::resize(&base, heat.image_width, heat.image_height, FilterType::Triangle);
    }
    let out = overlay(&base, heat, alpha)?;
    Ok(blobs.put(&encode_png(&out))?)
}
