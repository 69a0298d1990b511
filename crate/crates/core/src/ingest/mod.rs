//! Citizen submission intake: format checks, geotag resolution, metadata
//! stripping and perceptual dedup keys.

mod container;
mod dhash;
mod exif;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::IngestConfig;
use crate::domain::{GeoPoint, QualityFlag, ReportId, SubmitterId, Timestamp};
use crate::geo::haversine;

pub use container::{anonymize, insert_exif, png_insert_chunk, sniff, ImageFormat};
pub use dhash::{dedup_key, dhash_luma, hamming};
pub use exif::{extract_geotag, with_exif, ExifBuilder};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IngestError {
    #[error("malformed image: {0}")]
    Malformed(&'static str),
}

#[derive(Debug, Clone)]
pub struct RawSubmission {
    pub image_bytes: Vec<u8>,
    pub declared_geo: Option<GeoPoint>,
    pub device_time: Option<Timestamp>,
    pub submitter_token: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NoGeotag,
    TooLarge,
    Malformed,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum IngestOutcome {
    Accepted { report_id: ReportId },
    Duplicate { existing: ReportId },
    Rejected { reason: RejectReason },
}

impl IngestOutcome {
    pub fn report_id(&self) -> Option<&ReportId> {
        match self {
            IngestOutcome::Accepted { report_id } => Some(report_id),
            _ => None,
        }
    }
}

/// A submission that passed every content check and is ready to persist.
#[derive(Debug, Clone)]
pub struct PreparedSubmission {
    pub anonymized: Vec<u8>,
    pub dedup_key: u64,
    pub geo: GeoPoint,
    pub quality_flags: Vec<QualityFlag>,
    pub captured_at: Option<Timestamp>,
    pub submitter: SubmitterId,
    pub width: u32,
    pub height: u32,
}

/// Runs the stateless part of ingestion. Dedup against existing reports
/// and persistence are left to the caller.
pub fn prepare(
    raw: &RawSubmission,
    cfg: &IngestConfig,
    salt: &str,
) -> Result<PreparedSubmission, RejectReason> {
    if raw.image_bytes.is_empty() {
        return Err(RejectReason::Empty);
    }
    if raw.image_bytes.len() > cfg.max_payload_bytes {
        return Err(RejectReason::TooLarge);
    }
    if sniff(&raw.image_bytes).is_none() {
        return Err(RejectReason::Malformed);
    }
    let exif_geo = extract_geotag(&raw.image_bytes).map_err(|_| RejectReason::Malformed)?;
    let mut quality_flags = Vec::new();
    let geo = match (exif_geo, raw.declared_geo) {
        (Some(e), Some(d)) => {
            let distance_m = haversine(&e, &d);
            if distance_m > cfg.geo_disagreement_m {
                quality_flags.push(QualityFlag::GeoDisagreement {
                    declared: d,
                    distance_m,
                });
            }
            e
        }
        (Some(e), None) => e,
        (None, Some(d)) => d,
        (None, None) => return Err(RejectReason::NoGeotag),
    };
    let anonymized = anonymize(&raw.image_bytes).map_err(|_| RejectReason::Malformed)?;
    let img = image::load_from_memory(&anonymized).map_err(|_| RejectReason::Malformed)?;
    let dedup_key = dhash_luma(&img.to_luma8());
    Ok(PreparedSubmission {
        anonymized,
        dedup_key,
        geo,
        quality_flags,
        captured_at: raw.device_time,
        submitter: hash_submitter(&raw.submitter_token, salt),
        width: img.width(),
        height: img.height(),
    })
}

/// Salted SHA-256 of the submitter token, hex encoded (first 128 bits).
pub fn hash_submitter(token: &str, salt: &str) -> SubmitterId {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update([0u8]);
    h.update(token.as_bytes());
    SubmitterId(hex::encode(&h.finalize()[..16]))
}
