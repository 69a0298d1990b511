use image::imageops::FilterType;

use super::IngestError;

/// 64-bit difference hash over a 9x8 grayscale downsample.
///
/// Bit `8*row + col` (MSB first) is set when pixel `(col, row)` is brighter
/// than its right neighbour.
pub fn dedup_key(bytes: &[u8]) -> Result<u64, IngestError> {
    let img = image::load_from_memory(bytes)
        .map_err(|_| IngestError::Malformed("image does not decode"))?;
    Ok(dhash_luma(&img.to_luma8()))
}

pub fn dhash_luma(gray: &image::GrayImage) -> u64 {
    let small = image::imageops::resize(gray, 9, 8, FilterType::Triangle);
    let mut hash = 0u64;
    for y in 0..8 {
        for x in 0..8 {
            hash <<= 1;
            if small.get_pixel(x, y)[0] > small.get_pixel(x + 1, y)[0] {
                hash |= 1;
            }
        }
    }
    hash
}

pub fn hamming(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}
