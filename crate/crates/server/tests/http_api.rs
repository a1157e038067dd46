//! End-to-end exercise of the HTTP surface against a server spawned on an
//! ephemeral port.

use std::time::{Duration, Instant};

use ganlab_server::api::*;

const SMALL_CONFIG: &str = "\
format_version = 1
dataset.kind = ring
dataset.modes = 4
dataset.radius = 2.0
dataset.std = 0.05
dataset.n = 16
train.latent_dim = 4
train.k = 16
train.m = 16
train.max_iters = 4
train.convergence_window = 0
sweep.entries = 16:0
eval.query_count = 8
output.grids = false
";

fn spawn_server() -> (String, tokio::runtime::Runtime) {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .unwrap();
    let listener = rt.block_on(async {
        tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap()
    });
    let addr = listener.local_addr().unwrap();
    rt.spawn(async move {
        axum::serve(listener, ganlab_server::router()).await.unwrap();
    });
    (format!("http://{addr}"), rt)
}

fn wait_for_job(base: &str, http: &reqwest::blocking::Client, id: u64) -> JobStatus {
    let deadline = Instant::now() + Duration::from_secs(120);
    loop {
        let status: JobStatus = http
            .get(format!("{base}/api/v1/jobs/{id}"))
            .send()
            .unwrap()
            .json()
            .unwrap();
        if status.state != JobState::Running {
            return status;
        }
        assert!(Instant::now() < deadline, "job {id} did not finish");
        std::thread::sleep(Duration::from_millis(100));
    }
}

#[test]
fn full_http_roundtrip() {
    let (base, _rt) = spawn_server();
    let http = reqwest::blocking::Client::new();

    // health
    let health: serde_json::Value = http
        .get(format!("{base}/api/v1/healthz"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(health["status"], "ok");

    // submit an experiment and wait for completion
    let out_dir = tempfile::tempdir().unwrap();
    let resp: SubmitExperimentResponse = http
        .post(format!("{base}/api/v1/experiments"))
        .json(&SubmitExperimentRequest {
            config_text: SMALL_CONFIG.to_string(),
            out_dir: out_dir.path().display().to_string(),
            precision: "f64".to_string(),
            seed_override: None,
        })
        .send()
        .unwrap()
        .json()
        .unwrap();
    let status = wait_for_job(&base, &http, resp.job_id);
    assert_eq!(status.state, JobState::Complete, "error: {:?}", status.error);
    assert!(status.record.is_some());

    // job list contains it
    let list: JobList = http
        .get(format!("{base}/api/v1/jobs"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert!(list.jobs.iter().any(|j| j.id == resp.job_id));

    // table endpoint serves the CSV
    let table = http
        .get(format!("{base}/api/v1/jobs/{}/table", resp.job_id))
        .send()
        .unwrap()
        .text()
        .unwrap();
    assert!(table.starts_with("dataset,m,noise,direction,space,avg"));
    assert_eq!(table.lines().count(), 5);

    // evaluate the final checkpoint the run produced
    let ck = out_dir.path().join("m16_noise0/final_checkpoint.txt");
    assert!(ck.exists());
    let eval: EvalResponse = http
        .post(format!("{base}/api/v1/eval"))
        .json(&EvalRequest {
            checkpoint_path: ck.display().to_string(),
            config_text: SMALL_CONFIG.to_string(),
            precision: "f64".to_string(),
        })
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(eval.reports.len(), 4);

    // merge the run record into a fresh table
    let merged = out_dir.path().join("merged.csv");
    let report: ReportResponse = http
        .post(format!("{base}/api/v1/report"))
        .json(&ReportRequest {
            record_paths: vec![out_dir
                .path()
                .join("run_record.json")
                .display()
                .to_string()],
            out_path: merged.display().to_string(),
        })
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(report.rows, 4);
    assert!(merged.exists());
}

#[test]
fn rejects_bad_inputs() {
    let (base, _rt) = spawn_server();
    let http = reqwest::blocking::Client::new();

    // unknown config key
    let resp = http
        .post(format!("{base}/api/v1/experiments"))
        .json(&SubmitExperimentRequest {
            config_text: "bogus.key = 1\n".to_string(),
            out_dir: "/tmp/unused".to_string(),
            precision: "f64".to_string(),
            seed_override: None,
        })
        .send()
        .unwrap();
    assert_eq!(resp.status(), 400);

    // bad precision string
    let resp = http
        .post(format!("{base}/api/v1/experiments"))
        .json(&SubmitExperimentRequest {
            config_text: SMALL_CONFIG.to_string(),
            out_dir: "/tmp/unused".to_string(),
            precision: "f16".to_string(),
            seed_override: None,
        })
        .send()
        .unwrap();
    assert_eq!(resp.status(), 400);

    // unknown job
    let resp = http.get(format!("{base}/api/v1/jobs/999")).send().unwrap();
    assert_eq!(resp.status(), 404);
}

#[test]
fn seed_override_changes_results() {
    let (base, _rt) = spawn_server();
    let http = reqwest::blocking::Client::new();
    let mut tables = Vec::new();
    for seed in [None, Some(123u64)] {
        let out_dir = tempfile::tempdir().unwrap();
        let resp: SubmitExperimentResponse = http
            .post(format!("{base}/api/v1/experiments"))
            .json(&SubmitExperimentRequest {
                config_text: SMALL_CONFIG.to_string(),
                out_dir: out_dir.path().display().to_string(),
                precision: "f64".to_string(),
                seed_override: seed,
            })
            .send()
            .unwrap()
            .json()
            .unwrap();
        let status = wait_for_job(&base, &http, resp.job_id);
        assert_eq!(status.state, JobState::Complete);
        tables.push(
            http.get(format!("{base}/api/v1/jobs/{}/table", resp.job_id))
                .send()
                .unwrap()
                .text()
                .unwrap(),
        );
    }
    assert_ne!(tables[0], tables[1]);
}
