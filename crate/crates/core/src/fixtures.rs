//! Deterministic image fixtures shared by tests, the simulator and the CLI.

use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use image::{ImageFormat, RgbImage};

pub fn encode_jpeg(img: &RgbImage, quality: u8) -> Vec<u8> {
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode_image(img)
        .expect("JPEG encoding into memory");
    buf
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .expect("PNG encoding into memory");
    buf.into_inner()
}

/// Smooth diagonal colour ramp with a bright disc, `w` x `h` pixels.
pub fn gradient_image(w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        let (fx, fy) = (x as f64 / w as f64, y as f64 / h as f64);
        let d = ((fx - 0.6).powi(2) + (fy - 0.4).powi(2)).sqrt();
        let disc = if d < 0.2 { 80.0 } else { 0.0 };
        image::Rgb([
            (40.0 + 150.0 * fx + disc).min(255.0) as u8,
            (30.0 + 120.0 * fy + disc).min(255.0) as u8,
            (200.0 - 120.0 * fx).max(0.0) as u8,
        ])
    })
}

pub fn gradient_jpeg(w: u32, h: u32, quality: u8) -> Vec<u8> {
    encode_jpeg(&gradient_image(w, h), quality)
}

pub fn gradient_png(w: u32, h: u32) -> Vec<u8> {
    encode_png(&gradient_image(w, h))
}
