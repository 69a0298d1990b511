//! Citizen hazard report pipeline.
//!
//! Geotagged photos are anonymized and deduplicated, run through a
//! pluggable detector with CAM overlays and on-demand LIME audits, voted on
//! by a credibility-weighted crowd with expert escalation, aggregated into
//! hotspot sites and turned into reviewed reports. [`sim`] drives the whole
//! thing over synthetic scenarios.
//!
//! Numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision.

pub mod blob;
pub mod calibration;
pub mod clock;
pub mod config;
pub mod consensus;
pub mod detector;
pub mod domain;
pub mod explain;
pub mod fixtures;
pub mod geo;
pub mod ingest;
pub mod metrics;
pub mod orchestrator;
pub mod report;
pub mod scalar;
pub mod sim;
pub mod store;

pub use config::Config;
pub use domain::{
    BlobId, BoundingBox, Detection, DetectionId, DraftId, GeoPoint, HazardClass, JobId, PipelineStage, Report,
    ReportId, Timestamp, ValidatorId,
};
pub use orchestrator::{Pipeline, PipelineError, PipelineParts};
pub use scalar::Scalar;

pub type BoundingBox32 = domain::BoundingBox<f32>;
pub type BoundingBox64 = domain::BoundingBox<f64>;
pub type GeoPoint32 = domain::GeoPoint<f32>;
pub type GeoPoint64 = domain::GeoPoint<f64>;
pub type Prediction32 = metrics::Prediction<f32>;
pub type Prediction64 = metrics::Prediction<f64>;
pub type Truth32 = metrics::Truth<f32>;
pub type Truth64 = metrics::Truth<f64>;
pub type MetricsReport32 = metrics::MetricsReport<f32>;
pub type MetricsReport64 = metrics::MetricsReport<f64>;
pub type FeatureStack32 = detector::FeatureStack<f32>;
pub type FeatureStack64 = detector::FeatureStack<f64>;
pub type CamHeatmap32 = explain::CamHeatmap<f32>;
pub type CamHeatmap64 = explain::CamHeatmap<f64>;
pub type LimeExplanation32 = explain::LimeExplanation<f32>;
pub type LimeExplanation64 = explain::LimeExplanation<f64>;
pub type ConsensusState32 = consensus::ConsensusState<f32>;
pub type ConsensusState64 = consensus::ConsensusState<f64>;
pub type ValidatorProfile32 = consensus::ValidatorProfile<f32>;
pub type ValidatorProfile64 = consensus::ValidatorProfile<f64>;
pub type CalibrationTable32 = calibration::CalibrationTable<f32>;
pub type CalibrationTable64 = calibration::CalibrationTable<f64>;
pub type BinnedGrid32 = geo::BinnedGrid<f32>;
pub type BinnedGrid64 = geo::BinnedGrid<f64>;
pub type HotspotSite32 = geo::HotspotSite<f32>;
pub type HotspotSite64 = geo::HotspotSite<f64>;
