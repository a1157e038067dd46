//! Drives the `ganlab` binary against an in-process server.

use std::process::Command;

const CONFIG: &str = "\
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

fn ganlab(server: &str, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ganlab"))
        .arg("--server")
        .arg(server)
        .args(args)
        .output()
        .expect("spawn ganlab")
}

#[test]
fn train_eval_report_via_cli() {
    let (server, _rt) = spawn_server();
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("exp.conf");
    std::fs::write(&config_path, CONFIG).unwrap();
    let out_dir = dir.path().join("run");

    // train and capture the table from stdout
    let out = ganlab(
        &server,
        &[
            "train",
            "--config",
            config_path.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--precision",
            "f64",
            "--poll-secs",
            "0.2",
        ],
    );
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.starts_with("dataset,m,noise,direction,space,avg"));
    assert_eq!(table.lines().count(), 5);

    // evaluate the produced checkpoint
    let ck = out_dir.join("m16_noise0/final_checkpoint.txt");
    let out = ganlab(
        &server,
        &[
            "eval",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--config",
            config_path.to_str().unwrap(),
        ],
    );
    assert!(out.status.success());
    let reports: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 4);

    // merge the run record into a combined CSV
    let merged = dir.path().join("merged.csv");
    let out = ganlab(
        &server,
        &[
            "report",
            "--records",
            out_dir.join("run_record.json").to_str().unwrap(),
            "--out",
            merged.to_str().unwrap(),
        ],
    );
    assert!(out.status.success());
    assert!(merged.exists());
    let csv = std::fs::read_to_string(&merged).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn failed_job_surfaces_error() {
    let (server, _rt) = spawn_server();
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("bad.conf");
    // image dataset with a nonexistent path fails at run time
    std::fs::write(
        &config_path,
        "dataset.kind = image\ndataset.path = /nonexistent/data.glim\ndataset.n = 4\n\
         train.latent_dim = 4\ntrain.k = 4\ntrain.m = 4\ntrain.max_iters = 1\n\
         train.convergence_window = 0\n",
    )
    .unwrap();
    let out = ganlab(
        &server,
        &[
            "train",
            "--config",
            config_path.to_str().unwrap(),
            "--out",
            dir.path().join("run").to_str().unwrap(),
            "--poll-secs",
            "0.2",
        ],
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("failed"), "stderr: {stderr}");
}
