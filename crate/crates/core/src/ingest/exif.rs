//! EXIF GPS extraction and the small amount of EXIF writing the pipeline needs.

use std::io::Cursor;

use exif::experimental::Writer;
use exif::{Field, In, Rational, Tag, Value};

use super::container::{self, ImageFormat};
use super::IngestError;
use crate::domain::GeoPoint;

/// Reads the GPS IFD of a JPEG and converts DMS rationals to decimal degrees.
///
/// PNG input always yields `None`.
pub fn extract_geotag(bytes: &[u8]) -> Result<Option<GeoPoint>, IngestError> {
    match container::sniff(bytes) {
        Some(ImageFormat::Png) => {
            container::png_chunks(bytes)?;
            Ok(None)
        }
        Some(ImageFormat::Jpeg) => {
            let (segments, _) = container::jpeg_segments(bytes)?;
            let Some(seg) = segments.iter().find(|s| container::is_exif_segment(s)) else {
                return Ok(None);
            };
            let tiff = seg.data[container::EXIF_HEADER.len()..].to_vec();
            let exif = exif::Reader::new()
                .read_raw(tiff)
                .map_err(|_| IngestError::Malformed("corrupt EXIF block"))?;
            Ok(gps_from_exif(&exif))
        }
        None => Err(IngestError::Malformed("unsupported image format")),
    }
}

fn gps_from_exif(exif: &exif::Exif) -> Option<GeoPoint> {
    let lat = dms(exif.get_field(Tag::GPSLatitude, In::PRIMARY)?)?;
    let lon = dms(exif.get_field(Tag::GPSLongitude, In::PRIMARY)?)?;
    let lat_sign = hemisphere(exif.get_field(Tag::GPSLatitudeRef, In::PRIMARY), b'S');
    let lon_sign = hemisphere(exif.get_field(Tag::GPSLongitudeRef, In::PRIMARY), b'W');
    GeoPoint::new(lat * lat_sign, lon * lon_sign).ok()
}

fn dms(field: &Field) -> Option<f64> {
    match &field.value {
        Value::Rational(v) if v.len() == 3 && v.iter().all(|r| r.denom != 0) => {
            Some(v[0].to_f64() + v[1].to_f64() / 60.0 + v[2].to_f64() / 3600.0)
        }
        _ => None,
    }
}

fn hemisphere(field: Option<&Field>, negative: u8) -> f64 {
    match field.map(|f| &f.value) {
        Some(Value::Ascii(v)) if v.first().and_then(|s| s.first()) == Some(&negative) => -1.0,
        _ => 1.0,
    }
}

pub(crate) enum OrientationScan {
    /// The block holds nothing but an IFD0 orientation tag; keep as is.
    OnlyOrientation,
    /// Rewrite with the given orientation, or drop entirely.
    Strip(Option<u16>),
}

pub(crate) fn orientation_only(tiff: &[u8]) -> OrientationScan {
    let Ok(exif) = exif::Reader::new().read_raw(tiff.to_vec()) else {
        return OrientationScan::Strip(None);
    };
    let orientation = exif
        .get_field(Tag::Orientation, In::PRIMARY)
        .and_then(|f| f.value.get_uint(0))
        .map(|v| v as u16);
    // kamadak-exif does not report IFD pointer tags as fields, so a lone
    // orientation field means there are no sub-IFDs either.
    if orientation.is_some() && exif.fields().len() == 1 {
        OrientationScan::OnlyOrientation
    } else {
        OrientationScan::Strip(orientation)
    }
}

pub(crate) fn orientation_tiff(orientation: u16) -> Vec<u8> {
    ExifBuilder::new().orientation(orientation).to_tiff()
}

/// Builds EXIF TIFF payloads. Used for orientation rewriting and for
/// producing geotagged fixtures.
#[derive(Debug, Default, Clone)]
pub struct ExifBuilder {
    orientation: Option<u16>,
    gps: Option<(f64, f64)>,
    make: Option<String>,
    maker_note: Option<Vec<u8>>,
}

impl ExifBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn orientation(mut self, o: u16) -> Self {
        self.orientation = Some(o);
        self
    }

    pub fn gps(mut self, lat: f64, lon: f64) -> Self {
        self.gps = Some((lat, lon));
        self
    }

    pub fn make(mut self, make: &str) -> Self {
        self.make = Some(make.to_owned());
        self
    }

    pub fn maker_note(mut self, note: &[u8]) -> Self {
        self.maker_note = Some(note.to_vec());
        self
    }

    pub fn to_tiff(&self) -> Vec<u8> {
        let mut fields = Vec::new();
        if let Some(o) = self.orientation {
            fields.push(field(Tag::Orientation, Value::Short(vec![o])));
        }
        if let Some(make) = &self.make {
            fields.push(field(Tag::Make, Value::Ascii(vec![make.as_bytes().to_vec()])));
        }
        if let Some(note) = &self.maker_note {
            fields.push(field(Tag::MakerNote, Value::Undefined(note.clone(), 0)));
        }
        if let Some((lat, lon)) = self.gps {
            let r = if lat < 0.0 { "S" } else { "N" };
            fields.push(field(Tag::GPSLatitudeRef, Value::Ascii(vec![r.into()])));
            fields.push(field(Tag::GPSLatitude, Value::Rational(to_dms(lat.abs()))));
            let r = if lon < 0.0 { "W" } else { "E" };
            fields.push(field(Tag::GPSLongitudeRef, Value::Ascii(vec![r.into()])));
            fields.push(field(Tag::GPSLongitude, Value::Rational(to_dms(lon.abs()))));
        }
        let mut writer = Writer::new();
        for f in &fields {
            writer.push_field(f);
        }
        let mut buf = Cursor::new(Vec::new());
        writer
            .write(&mut buf, true)
            .expect("in-memory EXIF write cannot fail for well-formed fields");
        buf.into_inner()
    }
}

fn field(tag: Tag, value: Value) -> Field {
    Field {
        tag,
        ifd_num: In::PRIMARY,
        value,
    }
}

/// Degrees, minutes and seconds (seconds in 1/10000 units).
fn to_dms(deg: f64) -> Vec<Rational> {
    let d = deg.trunc();
    let m_full = (deg - d) * 60.0;
    let m = m_full.trunc();
    let s = ((m_full - m) * 60.0 * 10_000.0).round();
    vec![
        Rational::from((d as u32, 1)),
        Rational::from((m as u32, 1)),
        Rational::from((s as u32, 10_000)),
    ]
}

/// Adds GPS (and optionally other) EXIF tags to a JPEG.
pub fn with_exif(jpeg: &[u8], exif: &ExifBuilder) -> Result<Vec<u8>, IngestError> {
    container::insert_exif(jpeg, &exif.to_tiff())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rational_dms(d: u32, m: u32, s: u32) -> Value {
        Value::Rational(vec![(d, 1).into(), (m, 1).into(), (s, 1).into()])
    }

    #[test]
    fn dms_hand_conversion() {
        // 39°34'12" = 39 + 34/60 + 12/3600 = 39.57
        let f = field(Tag::GPSLatitude, rational_dms(39, 34, 12));
        assert!((dms(&f).unwrap() - 39.57).abs() < 1e-12);
        let f = field(Tag::GPSLongitude, rational_dms(2, 39, 0));
        assert!((dms(&f).unwrap() - 2.65).abs() < 1e-12);
    }

    #[test]
    fn to_dms_round_trips() {
        let v = to_dms(39.57);
        let back = v[0].to_f64() + v[1].to_f64() / 60.0 + v[2].to_f64() / 3600.0;
        assert!((back - 39.57).abs() < 1e-7);
    }
}
