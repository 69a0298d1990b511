//! HTTP routes over a shared [`Pipeline`].

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hazardpipe_core::consensus::{ConsensusState, ConsensusStatus, Verdict};
use hazardpipe_core::detector::DetectorError;
use hazardpipe_core::domain::{
    BlobId, Detection, DetectionId, DraftId, GeoPoint, JobId, Report, ReportId, Timestamp, ValidatorId,
};
use hazardpipe_core::explain::ExplainError;
use hazardpipe_core::geo::Region;
use hazardpipe_core::ingest::{sniff, IngestOutcome, ImageFormat, RawSubmission};
use hazardpipe_core::orchestrator::{DetectionRecord, PipelineError};
use hazardpipe_core::report::ReportError;
use hazardpipe_core::Pipeline;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Clone)]
pub struct AppState {
    pub pipeline: Arc<Pipeline>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, error: &str, detail: impl ToString) -> Self {
        ApiError {
            status,
            body: json!({ "error": error, "detail": detail.to_string() }),
        }
    }

    fn bad_request(detail: impl ToString) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", detail)
    }

    fn not_found(detail: impl ToString) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", detail)
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        use PipelineError as P;
        let (status, code) = match &e {
            P::UnknownReport(_) | P::UnknownDetection(_) | P::UnknownDraft(_) | P::UnknownJob(_) => {
                (StatusCode::NOT_FOUND, "not_found")
            }
            P::Explain(ExplainError::UnknownDetection(_) | ExplainError::MissingBlob(_)) => {
                (StatusCode::NOT_FOUND, "not_found")
            }
            P::SelfValidation => (StatusCode::CONFLICT, "self_validation"),
            P::AlreadyResolved(_) => (StatusCode::CONFLICT, "already_resolved"),
            P::WrongStage { .. } | P::Transition(_) | P::NoConfirmedDetection(_) => {
                (StatusCode::CONFLICT, "illegal_transition")
            }
            P::Report(ReportError::IllegalReview { .. }) => (StatusCode::CONFLICT, "illegal_review"),
            P::Report(_) => (StatusCode::UNPROCESSABLE_ENTITY, "report"),
            P::NotExpert(_) => (StatusCode::FORBIDDEN, "not_expert"),
            P::Detector(DetectorError::Unsupported(_)) => (StatusCode::UNPROCESSABLE_ENTITY, "detector"),
            P::NoDetector | P::Detector(_) => (StatusCode::SERVICE_UNAVAILABLE, "detector"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError::new(status, code, e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> ApiResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e))?
}

/// Bearer token of the caller, if any. Tokens are validator ids.
fn bearer(headers: &HeaderMap) -> Option<String> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(|t| t.trim().to_owned())
}

fn check_identity(headers: &HeaderMap, validator: &str) -> ApiResult<()> {
    match bearer(headers) {
        Some(t) if t != validator => Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "identity_mismatch",
            "bearer token does not match validator_id",
        )),
        _ => Ok(()),
    }
}

pub fn router(state: AppState) -> Router {
    let limit = state.pipeline.config().ingest.max_payload_bytes + 64 * 1024;
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/reports", post(post_report).get(list_reports))
        .route("/reports/{id}", get(get_report))
        .route("/queue", get(get_queue))
        .route("/votes", post(post_vote))
        .route("/detections/{id}", get(get_detection))
        .route("/detections/{id}/lime", post(post_lime))
        .route("/jobs/{id}", get(get_job))
        .route("/heatmap", get(get_heatmap))
        .route("/sites", get(get_sites))
        .route("/sites/{id}/report", post(post_site_report))
        .route("/drafts", get(list_drafts))
        .route("/drafts/{id}", get(get_draft))
        .route("/drafts/{id}/approve", post(approve_draft))
        .route("/drafts/{id}/publish", post(publish_draft))
        .route("/blobs/{id}", get(get_blob))
        .route("/metrics", get(get_metrics))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

async fn post_report(
    State(st): State<AppState>,
    headers: HeaderMap,
    mut form: Multipart,
) -> ApiResult<(StatusCode, Json<Report>)> {
    let mut image = None;
    let mut fields: HashMap<String, String> = HashMap::new();
    while let Some(field) = form.next_field().await.map_err(ApiError::bad_request)? {
        let name = field.name().unwrap_or_default().to_owned();
        if name == "image" {
            image = Some(field.bytes().await.map_err(ApiError::bad_request)?.to_vec());
        } else {
            fields.insert(name, field.text().await.map_err(ApiError::bad_request)?);
        }
    }
    let image = image.ok_or_else(|| ApiError::bad_request("missing `image` part"))?;
    let num = |k: &str| -> ApiResult<Option<f64>> {
        fields
            .get(k)
            .map(|v| v.trim().parse::<f64>().map_err(|_| ApiError::bad_request(format!("`{k}` is not a number"))))
            .transpose()
    };
    let declared_geo = match (num("lat")?, num("lon")?) {
        (Some(lat), Some(lon)) => Some(GeoPoint::new(lat, lon).map_err(ApiError::bad_request)?),
        (None, None) => None,
        _ => return Err(ApiError::bad_request("`lat` and `lon` go together")),
    };
    let device_time = fields
        .get("captured_at")
        .map(|t| Timestamp::parse(t).map_err(ApiError::bad_request))
        .transpose()?;
    let submitter_token = fields
        .get("submitter")
        .cloned()
        .or_else(|| bearer(&headers))
        .unwrap_or_else(|| "anonymous".into());
    let raw = RawSubmission {
        image_bytes: image,
        declared_geo,
        device_time,
        submitter_token,
    };
    let p = Arc::clone(&st.pipeline);
    let outcome = blocking(move || Ok(p.submit(&raw)?)).await?;
    match outcome {
        IngestOutcome::Accepted { report_id } => {
            let report = st
                .pipeline
                .report(&report_id)
                .ok_or_else(|| ApiError::not_found(&report_id))?;
            let p = Arc::clone(&st.pipeline);
            tokio::task::spawn_blocking(move || {
                if let Err(e) = p.detect(&report_id) {
                    eprintln!("detection failed for {report_id}: {e}");
                }
            });
            Ok((StatusCode::CREATED, Json(report)))
        }
        IngestOutcome::Duplicate { existing } => Err(ApiError {
            status: StatusCode::CONFLICT,
            body: json!({ "error": "duplicate", "existing": existing }),
        }),
        IngestOutcome::Rejected { reason } => Err(ApiError {
            status: StatusCode::BAD_REQUEST,
            body: json!({ "error": "rejected", "reason": reason }),
        }),
    }
}

#[derive(Serialize)]
struct ReportSummary {
    id: ReportId,
    stage: hazardpipe_core::PipelineStage,
    detections: usize,
}

async fn list_reports(State(st): State<AppState>) -> Json<Vec<ReportSummary>> {
    Json(
        st.pipeline
            .reports()
            .into_iter()
            .map(|r| ReportSummary {
                detections: r.detections.len(),
                id: r.id,
                stage: r.stage,
            })
            .collect(),
    )
}

async fn get_report(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Report>> {
    st.pipeline
        .report(&ReportId::new(id.clone()))
        .map(Json)
        .ok_or_else(|| ApiError::not_found(id))
}

#[derive(Deserialize)]
struct QueueParams {
    validator_id: String,
    limit: Option<usize>,
}

/// Assignment plus what a reviewer needs to render it.
#[derive(Serialize)]
struct QueueItem {
    detection_id: DetectionId,
    priority: f64,
    offered_to: Vec<ValidatorId>,
    report_id: ReportId,
    image_url: String,
    cam_url: Option<String>,
    detection: Detection,
    escalated: bool,
}

fn blob_url(id: &BlobId) -> String {
    format!("/blobs/{id}")
}

async fn get_queue(
    State(st): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<QueueParams>,
) -> ApiResult<Json<Vec<QueueItem>>> {
    check_identity(&headers, &q.validator_id)?;
    let v = ValidatorId::new(q.validator_id);
    let p = &st.pipeline;
    let items = p
        .queue(&v, q.limit.unwrap_or(20))
        .into_iter()
        .filter_map(|a| {
            let rec = p.detection_record(&a.detection_id)?;
            let report = p.report(&rec.report_id)?;
            let det = report.detection(&a.detection_id)?.clone();
            Some(QueueItem {
                detection_id: a.detection_id,
                priority: a.priority,
                offered_to: a.offered_to,
                image_url: blob_url(&report.image_ref),
                cam_url: det.cam_ref.as_ref().map(blob_url),
                escalated: rec.consensus.status == ConsensusStatus::Escalated,
                report_id: report.id,
                detection: det,
            })
        })
        .collect();
    Ok(Json(items))
}

#[derive(Deserialize)]
struct VoteBody {
    validator_id: String,
    detection_id: String,
    verdict: Verdict,
}

async fn post_vote(
    State(st): State<AppState>,
    headers: HeaderMap,
    Json(body): Json<VoteBody>,
) -> ApiResult<Json<ConsensusState>> {
    check_identity(&headers, &body.validator_id)?;
    let p = Arc::clone(&st.pipeline);
    blocking(move || {
        let v = ValidatorId::new(body.validator_id);
        let d = DetectionId::new(body.detection_id);
        let expert = p.profile(&v).is_some_and(|pr| pr.expert);
        let escalated = p
            .detection_record(&d)
            .ok_or_else(|| PipelineError::UnknownDetection(d.clone()))?
            .consensus
            .status
            == ConsensusStatus::Escalated;
        let state = if expert && escalated {
            p.expert_decide(&v, &d, body.verdict)?
        } else {
            p.vote(&v, &d, body.verdict)?
        };
        Ok(Json(state))
    })
    .await
}

#[derive(Serialize)]
struct DetectionView {
    report_id: ReportId,
    detection: Detection,
    record: DetectionRecord,
    image_url: String,
    cam_url: Option<String>,
    lime_url: Option<String>,
}

async fn get_detection(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<DetectionView>> {
    let d = DetectionId::new(id.clone());
    let rec = st
        .pipeline
        .detection_record(&d)
        .ok_or_else(|| ApiError::not_found(&id))?;
    let report = st
        .pipeline
        .report(&rec.report_id)
        .ok_or_else(|| ApiError::not_found(&id))?;
    let det = report.detection(&d).ok_or_else(|| ApiError::not_found(&id))?.clone();
    Ok(Json(DetectionView {
        report_id: report.id,
        image_url: blob_url(&report.image_ref),
        cam_url: det.cam_ref.as_ref().map(blob_url),
        lime_url: det.lime_ref.as_ref().map(blob_url),
        detection: det,
        record: rec,
    }))
}

async fn post_lime(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<(StatusCode, Json<Value>)> {
    let job = st.pipeline.submit_lime(&DetectionId::new(id))?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job }))))
}

async fn get_job(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let job = st
        .pipeline
        .job(&JobId::new(id.clone()))
        .ok_or_else(|| ApiError::not_found(id))?;
    Ok(Json(serde_json::to_value(job).expect("job serializes")))
}

#[derive(Deserialize)]
struct HeatmapParams {
    bbox: Option<String>,
    resolution: Option<f64>,
}

/// `min_lon,min_lat,max_lon,max_lat`.
pub fn parse_bbox(s: &str) -> Result<Region, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad bbox component `{p}`")))
        .collect::<Result<_, _>>()?;
    let [lon_min, lat_min, lon_max, lat_max] = v[..] else {
        return Err("bbox needs 4 numbers: min_lon,min_lat,max_lon,max_lat".into());
    };
    let r = Region {
        lat_min,
        lat_max,
        lon_min,
        lon_max,
    };
    r.validate().map_err(|e| e.to_string())?;
    Ok(r)
}

async fn get_heatmap(State(st): State<AppState>, Query(q): Query<HeatmapParams>) -> ApiResult<Json<Value>> {
    let region = q
        .bbox
        .as_deref()
        .map(parse_bbox)
        .transpose()
        .map_err(ApiError::bad_request)?;
    if let Some(r) = q.resolution {
        if !(r.is_finite() && r > 0.0) {
            return Err(ApiError::bad_request("resolution must be positive"));
        }
    }
    let p = Arc::clone(&st.pipeline);
    blocking(move || match p.heatmap(region, q.resolution) {
        Ok(v) => Ok(Json(v)),
        Err(PipelineError::Geo(e)) => Err(ApiError::bad_request(e)),
        Err(e) => Err(e.into()),
    })
    .await
}

async fn get_sites(State(st): State<AppState>) -> ApiResult<Json<Value>> {
    Ok(Json(serde_json::to_value(st.pipeline.sites()?).expect("sites serialize")))
}

async fn post_site_report(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let p = Arc::clone(&st.pipeline);
    blocking(move || {
        let d = p.generate_site_report(&id).map_err(|e| match e {
            PipelineError::Report(ReportError::NoConfirmedEvidence) => ApiError::not_found(&id),
            e => e.into(),
        })?;
        Ok(Json(serde_json::to_value(d).expect("draft serializes")))
    })
    .await
}

async fn list_drafts(State(st): State<AppState>) -> Json<Value> {
    Json(serde_json::to_value(st.pipeline.drafts()).expect("drafts serialize"))
}

async fn get_draft(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let d = st
        .pipeline
        .draft(&DraftId::new(id.clone()))
        .ok_or_else(|| ApiError::not_found(id))?;
    Ok(Json(serde_json::to_value(d).expect("draft serializes")))
}

async fn approve_draft(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let p = Arc::clone(&st.pipeline);
    blocking(move || {
        let d = p.approve_draft(&DraftId::new(id))?;
        Ok(Json(serde_json::to_value(d).expect("draft serializes")))
    })
    .await
}

async fn publish_draft(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let p = Arc::clone(&st.pipeline);
    blocking(move || {
        let d = p.publish_draft(&DraftId::new(id))?;
        Ok(Json(serde_json::to_value(d).expect("draft serializes")))
    })
    .await
}

async fn get_blob(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    if id.len() != 64 || !id.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(ApiError::not_found(id));
    }
    let bytes = st
        .pipeline
        .blobs()
        .get(&BlobId::new(id.clone()))
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e))?
        .ok_or_else(|| ApiError::not_found(&id))?;
    let ctype = match sniff(&bytes) {
        Some(ImageFormat::Jpeg) => "image/jpeg",
        Some(ImageFormat::Png) => "image/png",
        None if bytes.first() == Some(&b'{') => "application/json",
        None => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, ctype)], bytes).into_response())
}

async fn get_metrics(State(st): State<AppState>) -> ApiResult<Json<Value>> {
    let p = Arc::clone(&st.pipeline);
    blocking(move || Ok(Json(serde_json::to_value(p.metrics()).expect("metrics serialize")))).await
}
