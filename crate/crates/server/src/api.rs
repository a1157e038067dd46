//! Wire types shared with the client.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubmitExperimentRequest {
    /// Flat `section.key = value` config text.
    pub config_text: String,
    /// Directory (on the server host) that receives all run outputs.
    pub out_dir: String,
    /// "f32" or "f64".
    pub precision: String,
    /// Replaces train.seed_train when set.
    pub seed_override: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubmitExperimentResponse {
    pub job_id: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Complete,
    Failed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: u64,
    pub state: JobState,
    pub out_dir: String,
    pub error: Option<String>,
    /// run_record.json contents once the job finished.
    pub record: Option<serde_json::Value>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JobList {
    pub jobs: Vec<JobStatus>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalRequest {
    /// Checkpoint file holding at least an `ema` or `g` parameter section.
    pub checkpoint_path: String,
    /// Config describing the dataset, latents and eval settings.
    pub config_text: String,
    pub precision: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalResponse {
    pub reports: Vec<serde_json::Value>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportRequest {
    /// run_record.json paths to merge into one table.
    pub record_paths: Vec<String>,
    /// Destination CSV path on the server host.
    pub out_path: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportResponse {
    pub csv: String,
    pub rows: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
