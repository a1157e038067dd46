//! Route handlers and the axum router.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};

use ganlab_core::checkpoint::Checkpoint;
use ganlab_core::eval::{mode_drop_metric, overfitting_metric, DistanceSpace, FeatureEmbedder};
use ganlab_core::experiment::{self, RunRecord, SpaceKind};
use ganlab_core::network::GeneratorSpec;
use ganlab_core::tensor::Precision;

use crate::api::*;
use crate::jobs::Registry;

#[derive(Clone, Default)]
pub struct AppState {
    registry: Registry,
}

pub fn router() -> Router {
    Router::new()
        .route("/api/v1/healthz", get(healthz))
        .route("/api/v1/experiments", post(submit_experiment))
        .route("/api/v1/jobs", get(list_jobs))
        .route("/api/v1/jobs/:id", get(job_status))
        .route("/api/v1/jobs/:id/table", get(job_table))
        .route("/api/v1/eval", post(eval_checkpoint))
        .route("/api/v1/report", post(merge_reports))
        .with_state(AppState::default())
}

struct AppError(StatusCode, String);

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

fn bad_request(msg: impl std::fmt::Display) -> AppError {
    AppError(StatusCode::BAD_REQUEST, msg.to_string())
}

fn not_found(msg: impl std::fmt::Display) -> AppError {
    AppError(StatusCode::NOT_FOUND, msg.to_string())
}

fn parse_precision(s: &str) -> Result<Precision, AppError> {
    Precision::from_str(s).map_err(bad_request)
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn submit_experiment(
    State(state): State<AppState>,
    Json(req): Json<SubmitExperimentRequest>,
) -> Result<Json<SubmitExperimentResponse>, AppError> {
    let precision = parse_precision(&req.precision)?;
    let mut config = experiment::parse_config(&req.config_text).map_err(bad_request)?;
    if let Some(seed) = req.seed_override {
        config.train.seed_train = seed;
    }
    config.validate().map_err(bad_request)?;
    let job_id = state
        .registry
        .submit(config, PathBuf::from(&req.out_dir), precision);
    Ok(Json(SubmitExperimentResponse { job_id }))
}

async fn list_jobs(State(state): State<AppState>) -> Json<JobList> {
    Json(JobList {
        jobs: state.registry.list(),
    })
}

async fn job_status(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<u64>,
) -> Result<Json<JobStatus>, AppError> {
    state
        .registry
        .status(id)
        .map(Json)
        .ok_or_else(|| not_found(format!("no job {id}")))
}

async fn job_table(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<u64>,
) -> Result<String, AppError> {
    let dir = state
        .registry
        .out_dir(id)
        .ok_or_else(|| not_found(format!("no job {id}")))?;
    std::fs::read_to_string(dir.join("table.csv"))
        .map_err(|e| not_found(format!("table.csv for job {id}: {e}")))
}

async fn eval_checkpoint(
    Json(req): Json<EvalRequest>,
) -> Result<Json<EvalResponse>, AppError> {
    let precision = parse_precision(&req.precision)?;
    let config = experiment::parse_config(&req.config_text).map_err(bad_request)?;
    let reports = tokio::task::spawn_blocking(move || run_eval(&req.checkpoint_path, &config, precision))
        .await
        .map_err(|e| AppError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(bad_request)?;
    Ok(Json(EvalResponse { reports }))
}

fn run_eval(
    checkpoint_path: &str,
    config: &experiment::ExperimentConfig,
    precision: Precision,
) -> ganlab_core::Result<Vec<serde_json::Value>> {
    let ck = Checkpoint::load(Path::new(checkpoint_path))?;
    // prefer the EMA section; a bare generator checkpoint still evaluates
    let mut params = ck.extract_store("ema");
    if params.trainable_names().is_empty() {
        params = ck.extract_store("g");
    }
    if params.trainable_names().is_empty() {
        return Err(ganlab_core::Error::Checkpoint(
            "checkpoint holds neither `ema` nor `g` parameters".to_string(),
        ));
    }
    let data = config.dataset.build(config.train.seed_data)?;
    let latents = ganlab_core::data::make_fixed_latents(
        config.train.k,
        config.train.latent_dim,
        config.train.seed_latent,
    )?;
    let image_mode = matches!(data.domain(), ganlab_core::data::DomainTag::Image { .. });
    let gspec = GeneratorSpec::mlp(config.train.latent_dim, data.data_dim(), image_mode);
    let embedder = FeatureEmbedder::new(data.data_dim(), config.eval.feature_seed);
    let query_count = config.eval.query_count.min(latents.len()).min(data.len());

    let mut out = Vec::new();
    for kind in &config.eval.spaces {
        let space = match kind {
            SpaceKind::Pixel => DistanceSpace::PixelL1,
            SpaceKind::Feature => DistanceSpace::FeatureL2(&embedder),
        };
        for report in [
            overfitting_metric(
                &gspec,
                &params,
                &latents,
                &data,
                space,
                query_count,
                config.eval.seed_eval,
                precision,
            )?,
            mode_drop_metric(
                &gspec,
                &params,
                &latents,
                &data,
                space,
                query_count,
                config.eval.seed_eval,
                precision,
            )?,
        ] {
            out.push(serde_json::to_value(&report).expect("report serializes"));
        }
    }
    Ok(out)
}

async fn merge_reports(Json(req): Json<ReportRequest>) -> Result<Json<ReportResponse>, AppError> {
    let records: Vec<RunRecord> = req
        .record_paths
        .iter()
        .map(|p| RunRecord::load(Path::new(p)))
        .collect::<ganlab_core::Result<_>>()
        .map_err(bad_request)?;
    let refs: Vec<&RunRecord> = records.iter().collect();
    let out_path = PathBuf::from(&req.out_path);
    experiment::emit_table(&refs, &out_path).map_err(bad_request)?;
    let csv = std::fs::read_to_string(&out_path)
        .map_err(|e| AppError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let rows = csv.lines().count().saturating_sub(1);
    Ok(Json(ReportResponse { csv, rows }))
}
