//! In-memory job registry. Experiments run on blocking threads; the registry
//! only ever holds small status snapshots.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use ganlab_core::experiment::ExperimentConfig;
use ganlab_core::tensor::Precision;

use crate::api::{JobState, JobStatus};

#[derive(Clone)]
struct JobEntry {
    state: JobState,
    out_dir: PathBuf,
    error: Option<String>,
}

#[derive(Clone, Default)]
pub struct Registry {
    inner: Arc<Mutex<BTreeMap<u64, JobEntry>>>,
    next_id: Arc<AtomicU64>,
}

impl Registry {
    pub fn new() -> Self {
        Registry::default()
    }

    pub fn submit(&self, config: ExperimentConfig, out_dir: PathBuf, precision: Precision) -> u64 {
        let id = self.next_id.fetch_add(1, Ordering::SeqCst) + 1;
        self.inner.lock().unwrap().insert(
            id,
            JobEntry {
                state: JobState::Running,
                out_dir: out_dir.clone(),
                error: None,
            },
        );
        let registry = self.clone();
        tokio::task::spawn_blocking(move || {
            let result = ganlab_core::experiment::run_experiment(&config, &out_dir, precision);
            let mut jobs = registry.inner.lock().unwrap();
            let entry = jobs.get_mut(&id).expect("job entry exists");
            match result {
                Ok(_) => entry.state = JobState::Complete,
                Err(e) => {
                    entry.state = JobState::Failed;
                    entry.error = Some(e.to_string());
                }
            }
        });
        id
    }

    pub fn status(&self, id: u64) -> Option<JobStatus> {
        let jobs = self.inner.lock().unwrap();
        jobs.get(&id).map(|entry| snapshot(id, entry))
    }

    pub fn list(&self) -> Vec<JobStatus> {
        let jobs = self.inner.lock().unwrap();
        jobs.iter().map(|(id, entry)| snapshot(*id, entry)).collect()
    }

    pub fn out_dir(&self, id: u64) -> Option<PathBuf> {
        self.inner.lock().unwrap().get(&id).map(|e| e.out_dir.clone())
    }
}

fn snapshot(id: u64, entry: &JobEntry) -> JobStatus {
    let record = if entry.state == JobState::Running {
        None
    } else {
        std::fs::read_to_string(entry.out_dir.join("run_record.json"))
            .ok()
            .and_then(|text| serde_json::from_str(&text).ok())
    };
    JobStatus {
        id,
        state: entry.state,
        out_dir: entry.out_dir.display().to_string(),
        error: entry.error.clone(),
        record,
    }
}
