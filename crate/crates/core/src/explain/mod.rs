//! CAM heatmaps and overlays on the fast path, LIME audits on demand.

mod cam;
mod jobs;
mod lime;
mod overlay;

pub use cam::{bilinear, cam, CamHeatmap};
pub use jobs::{ExplainJob, JobListener, JobQueue, JobState, LimeRunner};
pub use lime::{
    apply_mask, explain_masks, fit_weighted_ridge, kernel_weight, lime_explain, mean_color,
    rank_segments, sample_masks, LimeConfig, LimeExplanation, Segmentation, MAX_EXHAUSTIVE_SEGMENTS,
};
pub use overlay::{colormap, overlay, overlay_blob, COLORMAP_STOPS};

use thiserror::Error;

use crate::domain::{BlobId, DetectionId, HazardClass};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("no class weights for {0:?}")]
    UnknownClass(HazardClass),
    #[error("blob {0} not found")]
    MissingBlob(BlobId),
    #[error("alpha {0} outside [0,1]")]
    InvalidAlpha(f64),
    #[error("heatmap size does not match image")]
    SizeMismatch,
    #[error("image decode: {0}")]
    Image(String),
    #[error("blob store: {0}")]
    Io(#[from] std::io::Error),
    #[error("box lies outside the image")]
    BoxOutsideImage,
    #[error("need at least {segments} samples, got {n_samples}")]
    TooFewSamples { n_samples: usize, segments: usize },
    #[error("predictor failed after {completed} samples: {reason}")]
    PredictorFailure { completed: usize, reason: String },
    #[error("surrogate system is singular")]
    Singular,
    #[error("unknown detection {0}")]
    UnknownDetection(DetectionId),
    #[error("worker pool shut down")]
    PoolClosed,
}
