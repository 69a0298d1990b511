//! Minimal JPEG segment / PNG chunk walking, enough to strip metadata
//! without touching entropy-coded or IDAT data.

use super::exif as exif_io;
use super::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Jpeg,
    Png,
}

const PNG_SIG: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A];

pub fn sniff(bytes: &[u8]) -> Option<ImageFormat> {
    if bytes.len() >= 3 && bytes[..3] == [0xFF, 0xD8, 0xFF] {
        Some(ImageFormat::Jpeg)
    } else if bytes.len() >= 8 && bytes[..8] == PNG_SIG {
        Some(ImageFormat::Png)
    } else {
        None
    }
}

/// A marker segment preceding the scan data. `data` excludes marker and length.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Segment<'a> {
    pub marker: u8,
    pub data: &'a [u8],
    pub raw: &'a [u8],
}

/// Splits a JPEG into its header segments and the remainder starting at SOS.
pub(crate) fn jpeg_segments(bytes: &[u8]) -> Result<(Vec<Segment<'_>>, &[u8]), IngestError> {
    if bytes.len() < 4 || bytes[..2] != [0xFF, 0xD8] {
        return Err(IngestError::Malformed("missing JPEG SOI"));
    }
    let mut pos = 2;
    let mut segments = Vec::new();
    loop {
        // fill bytes
        while pos < bytes.len() && bytes[pos] == 0xFF && bytes.get(pos + 1) == Some(&0xFF) {
            pos += 1;
        }
        if pos + 4 > bytes.len() {
            return Err(IngestError::Malformed("truncated JPEG header"));
        }
        if bytes[pos] != 0xFF {
            return Err(IngestError::Malformed("expected JPEG marker"));
        }
        let marker = bytes[pos + 1];
        if marker == 0xDA || marker == 0xD9 {
            return Ok((segments, &bytes[pos..]));
        }
        let len = u16::from_be_bytes([bytes[pos + 2], bytes[pos + 3]]) as usize;
        if len < 2 || pos + 2 + len > bytes.len() {
            return Err(IngestError::Malformed("JPEG segment overruns buffer"));
        }
        segments.push(Segment {
            marker,
            data: &bytes[pos + 4..pos + 2 + len],
            raw: &bytes[pos..pos + 2 + len],
        });
        pos += 2 + len;
    }
}

pub(crate) const EXIF_HEADER: &[u8] = b"Exif\0\0";

pub(crate) fn is_exif_segment(seg: &Segment<'_>) -> bool {
    seg.marker == 0xE1 && seg.data.starts_with(EXIF_HEADER)
}

/// Chunk of a PNG stream: (type, whole chunk bytes including length and CRC).
pub(crate) fn png_chunks(bytes: &[u8]) -> Result<Vec<([u8; 4], &[u8])>, IngestError> {
    if bytes.len() < 8 || bytes[..8] != PNG_SIG {
        return Err(IngestError::Malformed("missing PNG signature"));
    }
    let mut pos = 8;
    let mut chunks = Vec::new();
    while pos < bytes.len() {
        if pos + 12 > bytes.len() {
            return Err(IngestError::Malformed("truncated PNG chunk"));
        }
        let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let end = pos
            .checked_add(12 + len)
            .filter(|&e| e <= bytes.len())
            .ok_or(IngestError::Malformed("PNG chunk overruns buffer"))?;
        let kind: [u8; 4] = bytes[pos + 4..pos + 8].try_into().unwrap();
        chunks.push((kind, &bytes[pos..end]));
        pos = end;
        if &kind == b"IEND" {
            break;
        }
    }
    Ok(chunks)
}

// Metadata-bearing chunks dropped by `anonymize`.
const PNG_DROP: [&[u8; 4]; 4] = [b"tEXt", b"zTXt", b"iTXt", b"eXIf"];

/// Strips identifying metadata, keeping only the EXIF orientation tag.
pub fn anonymize(bytes: &[u8]) -> Result<Vec<u8>, IngestError> {
    match sniff(bytes) {
        Some(ImageFormat::Jpeg) => anonymize_jpeg(bytes),
        Some(ImageFormat::Png) => anonymize_png(bytes),
        None => Err(IngestError::Malformed("unsupported image format")),
    }
}

fn anonymize_jpeg(bytes: &[u8]) -> Result<Vec<u8>, IngestError> {
    let (segments, scan) = jpeg_segments(bytes)?;
    let mut out = Vec::with_capacity(bytes.len());
    out.extend_from_slice(&[0xFF, 0xD8]);
    for seg in &segments {
        match seg.marker {
            // APP0 (JFIF), APP2 (ICC), APP14 (Adobe colour transform) and all
            // non-APP segments are needed to decode identically.
            0xE0 | 0xE2 | 0xEE => out.extend_from_slice(seg.raw),
            0xE1 if is_exif_segment(seg) => {
                let tiff = &seg.data[EXIF_HEADER.len()..];
                match exif_io::orientation_only(tiff) {
                    exif_io::OrientationScan::OnlyOrientation => out.extend_from_slice(seg.raw),
                    exif_io::OrientationScan::Strip(Some(o)) => {
                        out.extend_from_slice(&exif_segment(&exif_io::orientation_tiff(o)))
                    }
                    exif_io::OrientationScan::Strip(None) => {}
                }
            }
            0xE1 | 0xE3..=0xED | 0xEF | 0xFE => {}
            _ => out.extend_from_slice(seg.raw),
        }
    }
    out.extend_from_slice(scan);
    Ok(out)
}

/// Wraps a TIFF payload into a complete APP1 Exif segment.
pub(crate) fn exif_segment(tiff: &[u8]) -> Vec<u8> {
    let len = (2 + EXIF_HEADER.len() + tiff.len()) as u16;
    let mut seg = vec![0xFF, 0xE1];
    seg.extend_from_slice(&len.to_be_bytes());
    seg.extend_from_slice(EXIF_HEADER);
    seg.extend_from_slice(tiff);
    seg
}

/// Inserts an APP1 Exif segment right after SOI/APP0.
pub fn insert_exif(jpeg: &[u8], tiff: &[u8]) -> Result<Vec<u8>, IngestError> {
    let (segments, scan) = jpeg_segments(jpeg)?;
    let mut out = vec![0xFF, 0xD8];
    let mut inserted = false;
    for seg in &segments {
        if !inserted && seg.marker != 0xE0 {
            out.extend_from_slice(&exif_segment(tiff));
            inserted = true;
        }
        if !is_exif_segment(seg) {
            out.extend_from_slice(seg.raw);
        }
    }
    if !inserted {
        out.extend_from_slice(&exif_segment(tiff));
    }
    out.extend_from_slice(scan);
    Ok(out)
}

fn anonymize_png(bytes: &[u8]) -> Result<Vec<u8>, IngestError> {
    let chunks = png_chunks(bytes)?;
    let mut out = Vec::with_capacity(bytes.len());
    out.extend_from_slice(&PNG_SIG);
    for (kind, raw) in chunks {
        if !PNG_DROP.contains(&&kind) {
            out.extend_from_slice(raw);
        }
    }
    Ok(out)
}

/// Inserts a chunk before IEND (test and fixture helper).
pub fn png_insert_chunk(bytes: &[u8], kind: [u8; 4], data: &[u8]) -> Result<Vec<u8>, IngestError> {
    let chunks = png_chunks(bytes)?;
    let mut out = PNG_SIG.to_vec();
    for (k, raw) in chunks {
        if &k == b"IEND" {
            out.extend_from_slice(&(data.len() as u32).to_be_bytes());
            let mut crc_input = kind.to_vec();
            crc_input.extend_from_slice(data);
            out.extend_from_slice(&crc_input);
            out.extend_from_slice(&crc32(&crc_input).to_be_bytes());
        }
        out.extend_from_slice(raw);
    }
    Ok(out)
}

fn crc32(data: &[u8]) -> u32 {
    crc32fast::hash(data)
}
