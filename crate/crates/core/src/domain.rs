//! Shared domain vocabulary: identifiers, geometry, hazard classes, detections,
//! reports and the pipeline stage graph.

use std::fmt;

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("{0} coordinate out of range")]
    OutOfRange(Axis),
    #[error("coordinate is not finite")]
    NotFinite,
    #[error("invalid bounding box: {0}")]
    InvalidBox(&'static str),
    #[error("unknown hazard class `{0}`")]
    UnknownClass(String),
    #[error("invalid timestamp `{0}`")]
    InvalidTimestamp(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Lat,
    Lon,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Lat => "lat",
            Axis::Lon => "lon",
        })
    }
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

string_id!(ReportId);
string_id!(DetectionId);
string_id!(ValidatorId);
string_id!(JobId);
string_id!(DraftId);
string_id!(
    /// Content address of a blob (lowercase hex SHA-256).
    BlobId
);
string_id!(
    /// Salted hash of a submitter token; the raw token is never stored.
    SubmitterId
);

/// UTC instant with millisecond precision. Serialized as RFC 3339.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(i64);

impl Timestamp {
    pub const EPOCH: Timestamp = Timestamp(0);

    pub fn from_millis(ms: i64) -> Self {
        Timestamp(ms)
    }

    pub fn now() -> Self {
        Timestamp(Utc::now().timestamp_millis())
    }

    pub fn millis(self) -> i64 {
        self.0
    }

    pub fn plus_millis(self, ms: i64) -> Self {
        Timestamp(self.0 + ms)
    }

    pub fn plus_secs_f64(self, secs: f64) -> Self {
        Timestamp(self.0 + (secs * 1000.0).round() as i64)
    }

    /// Seconds elapsed from `earlier` to `self`.
    pub fn secs_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 / 1000.0
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        Utc.timestamp_millis_opt(self.0)
            .single()
            .unwrap_or_default()
    }

    pub fn parse(s: &str) -> Result<Self, DomainError> {
        DateTime::parse_from_rfc3339(s)
            .map(|dt| Timestamp(dt.with_timezone(&Utc).timestamp_millis()))
            .map_err(|_| DomainError::InvalidTimestamp(s.to_owned()))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_datetime().to_rfc3339_opts(SecondsFormat::Millis, true))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Timestamp::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// WGS84 position in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGeoPoint<T>", bound = "T: Scalar")]
pub struct GeoPoint<T = f64> {
    lat: T,
    lon: T,
}

#[derive(Deserialize)]
#[serde(bound = "T: Scalar")]
struct RawGeoPoint<T> {
    lat: T,
    lon: T,
}

impl<T: Scalar> TryFrom<RawGeoPoint<T>> for GeoPoint<T> {
    type Error = DomainError;

    fn try_from(raw: RawGeoPoint<T>) -> Result<Self, Self::Error> {
        GeoPoint::new(raw.lat, raw.lon)
    }
}

impl<T: Scalar> GeoPoint<T> {
    pub fn new(lat: T, lon: T) -> Result<Self, DomainError> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(DomainError::NotFinite);
        }
        if lat.abs() > T::lit(90.0) {
            return Err(DomainError::OutOfRange(Axis::Lat));
        }
        if lon.abs() > T::lit(180.0) {
            return Err(DomainError::OutOfRange(Axis::Lon));
        }
        Ok(GeoPoint { lat, lon })
    }

    pub fn lat(&self) -> T {
        self.lat
    }

    pub fn lon(&self) -> T {
        self.lon
    }
}

pub fn make_geopoint(lat: f64, lon: f64) -> Result<GeoPoint, DomainError> {
    GeoPoint::new(lat, lon)
}

/// Axis-aligned box in image pixel coordinates (origin top-left).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox<T>", bound = "T: Scalar")]
pub struct BoundingBox<T = f64> {
    x_min: T,
    y_min: T,
    x_max: T,
    y_max: T,
}

#[derive(Deserialize)]
#[serde(bound = "T: Scalar")]
struct RawBox<T> {
    x_min: T,
    y_min: T,
    x_max: T,
    y_max: T,
}

impl<T: Scalar> TryFrom<RawBox<T>> for BoundingBox<T> {
    type Error = DomainError;

    fn try_from(r: RawBox<T>) -> Result<Self, Self::Error> {
        BoundingBox::new(r.x_min, r.y_min, r.x_max, r.y_max)
    }
}

impl<T: Scalar> BoundingBox<T> {
    pub fn new(x_min: T, y_min: T, x_max: T, y_max: T) -> Result<Self, DomainError> {
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(DomainError::NotFinite);
        }
        if x_min < T::zero() || y_min < T::zero() {
            return Err(DomainError::InvalidBox("negative coordinate"));
        }
        if x_min >= x_max {
            return Err(DomainError::InvalidBox("x_min must be below x_max"));
        }
        if y_min >= y_max {
            return Err(DomainError::InvalidBox("y_min must be below y_max"));
        }
        Ok(BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn from_array(a: [T; 4]) -> Result<Self, DomainError> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn x_min(&self) -> T {
        self.x_min
    }
    pub fn y_min(&self) -> T {
        self.y_min
    }
    pub fn x_max(&self) -> T {
        self.x_max
    }
    pub fn y_max(&self) -> T {
        self.y_max
    }

    pub fn width(&self) -> T {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> T {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn intersection_area(&self, other: &Self) -> T {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= T::zero() || h <= T::zero() {
            T::zero()
        } else {
            w * h
        }
    }

    /// Whether the box lies inside a `width` x `height` image.
    pub fn within(&self, width: T, height: T) -> bool {
        self.x_max <= width && self.y_max <= height
    }

    pub fn cast<U: Scalar>(&self) -> BoundingBox<U> {
        let c = |v: T| U::lit(v.to_f64_lossy());
        BoundingBox {
            x_min: c(self.x_min),
            y_min: c(self.y_min),
            x_max: c(self.x_max),
            y_max: c(self.y_max),
        }
    }
}

/// Closed registry of hazard classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardClass {
    PlasticFoil,
    RubberWaste,
    MetalCan,
    MixedWaste,
    Other,
}

impl HazardClass {
    pub const ALL: [HazardClass; 5] = [
        HazardClass::PlasticFoil,
        HazardClass::RubberWaste,
        HazardClass::MetalCan,
        HazardClass::MixedWaste,
        HazardClass::Other,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            HazardClass::PlasticFoil => "plastic_foil",
            HazardClass::RubberWaste => "rubber_waste",
            HazardClass::MetalCan => "metal_can",
            HazardClass::MixedWaste => "mixed_waste",
            HazardClass::Other => "other",
        }
    }

    /// Human-readable name ("plastic foil").
    pub fn display_name(self) -> String {
        self.label().replace('_', " ")
    }

    pub fn from_label(s: &str) -> Result<Self, DomainError> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.label() == s)
            .ok_or_else(|| DomainError::UnknownClass(s.to_owned()))
    }
}

impl fmt::Display for HazardClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Detection<T = f64> {
    pub id: DetectionId,
    #[serde(rename = "box")]
    pub bbox: BoundingBox<T>,
    pub class: HazardClass,
    pub confidence: T,
    pub uncertainty: T,
    pub cam_ref: Option<BlobId>,
    pub lime_ref: Option<BlobId>,
}

/// Workflow stages a report moves through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStage {
    Submitted,
    Detected,
    InValidation,
    Escalated,
    Validated,
    Rejected,
    Reported,
    Published,
}

impl PipelineStage {
    pub const ALL: [PipelineStage; 8] = [
        PipelineStage::Submitted,
        PipelineStage::Detected,
        PipelineStage::InValidation,
        PipelineStage::Escalated,
        PipelineStage::Validated,
        PipelineStage::Rejected,
        PipelineStage::Reported,
        PipelineStage::Published,
    ];

    /// Edges of the fixed transition graph.
    pub fn can_transition_to(self, to: PipelineStage) -> bool {
        use PipelineStage::*;
        matches!(
            (self, to),
            (Submitted, Detected)
                | (Detected, InValidation)
                | (InValidation, Validated)
                | (InValidation, Rejected)
                | (InValidation, Escalated)
                | (Escalated, Validated)
                | (Escalated, Rejected)
                | (Validated, Reported)
                | (Reported, Published)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, PipelineStage::Rejected | PipelineStage::Published)
    }
}

impl fmt::Display for PipelineStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEntry {
    pub stage: PipelineStage,
    pub at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QualityFlag {
    /// EXIF and declared positions disagree by more than the tolerance.
    GeoDisagreement { declared: GeoPoint, distance_m: f64 },
}

/// One citizen submission. Stage changes go through the orchestrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub id: ReportId,
    pub submitter: SubmitterId,
    pub geo: GeoPoint,
    pub captured_at: Timestamp,
    pub image_ref: BlobId,
    pub detections: Vec<Detection>,
    pub stage: PipelineStage,
    pub stage_history: Vec<StageEntry>,
    #[serde(default)]
    pub quality_flags: Vec<QualityFlag>,
}

impl Report {
    pub fn new(
        id: ReportId,
        submitter: SubmitterId,
        geo: GeoPoint,
        captured_at: Timestamp,
        image_ref: BlobId,
        submitted_at: Timestamp,
    ) -> Self {
        Report {
            id,
            submitter,
            geo,
            captured_at,
            image_ref,
            detections: Vec::new(),
            stage: PipelineStage::Submitted,
            stage_history: vec![StageEntry {
                stage: PipelineStage::Submitted,
                at: submitted_at,
            }],
            quality_flags: Vec::new(),
        }
    }

    pub fn submitted_at(&self) -> Timestamp {
        self.stage_history[0].at
    }

    pub fn entered(&self, stage: PipelineStage) -> Option<Timestamp> {
        self.stage_history
            .iter()
            .find(|e| e.stage == stage)
            .map(|e| e.at)
    }

    pub fn detection(&self, id: &DetectionId) -> Option<&Detection> {
        self.detections.iter().find(|d| &d.id == id)
    }

    /// Stage equals the last history entry and history is strictly increasing.
    pub fn history_consistent(&self) -> bool {
        self.stage_history.last().map(|e| e.stage) == Some(self.stage)
            && self.stage_history.windows(2).all(|w| w[0].at < w[1].at)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geopoint_examples() {
        let p = make_geopoint(0.0, 0.0).unwrap();
        assert_eq!((p.lat(), p.lon()), (0.0, 0.0));
        let m = make_geopoint(39.57, 2.65).unwrap();
        assert_eq!(m.lat(), 39.57);
        assert_eq!(
            make_geopoint(91.0, 0.0),
            Err(DomainError::OutOfRange(Axis::Lat))
        );
        assert_eq!(
            make_geopoint(0.0, -180.5),
            Err(DomainError::OutOfRange(Axis::Lon))
        );
        assert_eq!(make_geopoint(f64::NAN, 0.0), Err(DomainError::NotFinite));
        assert_eq!(make_geopoint(0.0, f64::INFINITY), Err(DomainError::NotFinite));
    }

    #[test]
    fn geopoint_deserialize_validates() {
        let bad: Result<GeoPoint, _> = serde_json::from_str(r#"{"lat":95.0,"lon":0.0}"#);
        assert!(bad.is_err());
        let ok: GeoPoint = serde_json::from_str(r#"{"lat":39.57,"lon":2.65}"#).unwrap();
        assert_eq!(ok.lon(), 2.65);
    }

    #[test]
    fn box_invariants() {
        assert!(BoundingBox::new(0.0, 0.0, 10.0, 10.0).is_ok());
        assert!(BoundingBox::new(5.0, 0.0, 5.0, 10.0).is_err());
        assert!(BoundingBox::new(0.0, 3.0, 1.0, 2.0).is_err());
        assert!(BoundingBox::new(-1.0, 0.0, 1.0, 2.0).is_err());
        assert!(BoundingBox::<f32>::new(0.0, 0.0, f32::NAN, 2.0).is_err());
        let b = BoundingBox::new(1.0, 2.0, 4.0, 6.0).unwrap();
        assert_eq!(b.area(), 12.0);
        let json = serde_json::to_string(&b).unwrap();
        assert_eq!(json, r#"{"x_min":1.0,"y_min":2.0,"x_max":4.0,"y_max":6.0}"#);
    }

    #[test]
    fn hazard_registry_labels_unique() {
        let mut labels: Vec<_> = HazardClass::ALL.iter().map(|c| c.label()).collect();
        labels.sort();
        labels.dedup();
        assert_eq!(labels.len(), HazardClass::ALL.len());
        for c in HazardClass::ALL {
            assert_eq!(HazardClass::from_id(c.id()), Some(c));
            assert_eq!(HazardClass::from_label(c.label()).unwrap(), c);
            assert_eq!(serde_json::to_value(c).unwrap(), c.label());
        }
        assert!(HazardClass::from_label("oil_spill").is_err());
    }

    #[test]
    fn stage_graph() {
        use PipelineStage::*;
        assert!(Submitted.can_transition_to(Detected));
        assert!(!Detected.can_transition_to(Detected));
        assert!(!Escalated.can_transition_to(InValidation));
        assert!(Escalated.can_transition_to(Validated));
        assert!(!Rejected.can_transition_to(Reported));
        assert_eq!(InValidation.to_string(), "in_validation");
        // acyclic: a topological rank strictly increases along every edge
        let rank = |s: PipelineStage| match s {
            Submitted => 0,
            Detected => 1,
            InValidation => 2,
            Escalated => 3,
            Validated | Rejected => 4,
            Reported => 5,
            Published => 6,
        };
        for a in PipelineStage::ALL {
            for b in PipelineStage::ALL {
                if a.can_transition_to(b) {
                    assert!(rank(a) < rank(b), "{a} -> {b}");
                }
            }
        }
    }

    #[test]
    fn timestamp_rfc3339_millis() {
        let t = Timestamp::from_millis(1_718_000_000_123);
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, "\"2024-06-10T06:13:20.123Z\"");
        let back: Timestamp = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }
}
