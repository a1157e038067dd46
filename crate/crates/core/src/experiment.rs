//! Experiment orchestration: the flat key-value config format, regime
//! sweeps, persistence of reports/checkpoints/grids, and the combined
//! Table-1-style CSV.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{self, Checkpoint};
use crate::data::{
    self, load_image_dataset, make_fixed_latents, make_gaussian_ring, DomainTag, LatentSet,
    MixtureSpec, SampleSet,
};
use crate::error::{Error, Result};
use crate::eval::{
    mode_drop_metric, overfitting_metric, DistanceSpace, FeatureEmbedder, MetricsReport,
};
use crate::network;
use crate::tensor::Precision;
use crate::training::{self, StepLog, TrainConfig, TrainObserver, TrainState};

pub const CONFIG_FORMAT_VERSION: u32 = 1;
pub const RECORD_FORMAT_VERSION: u32 = 1;
pub const CSV_HEADER: &str =
    "dataset,m,noise,direction,space,avg,top10,top5,query_count,seed_eval";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DatasetSpec {
    Ring { name: String, spec: MixtureSpec, n: usize },
    Image { name: String, path: PathBuf, n: usize },
}

impl DatasetSpec {
    pub fn name(&self) -> &str {
        match self {
            DatasetSpec::Ring { name, .. } => name,
            DatasetSpec::Image { name, .. } => name,
        }
    }

    pub fn build(&self, seed_data: u64) -> Result<SampleSet> {
        match self {
            DatasetSpec::Ring { spec, n, .. } => make_gaussian_ring(spec, *n, seed_data),
            DatasetSpec::Image { path, n, .. } => load_image_dataset(path, *n),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            DatasetSpec::Ring { n, .. } | DatasetSpec::Image { n, .. } => *n,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    Pixel,
    Feature,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub spaces: Vec<SpaceKind>,
    pub query_count: usize,
    pub seed_eval: u64,
    pub feature_seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            spaces: vec![SpaceKind::Pixel, SpaceKind::Feature],
            query_count: 200,
            seed_eval: 7,
            feature_seed: 99,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub m: usize,
    pub noise_variance: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    pub sweep: Vec<SweepEntry>,
    pub eval: EvalSettings,
    pub emit_grids: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sweep.is_empty() {
            return Err(Error::Config("sweep has no entries".into()));
        }
        for entry in &self.sweep {
            self.entry_train_config(entry).validate()?;
        }
        Ok(())
    }

    /// TrainConfig for one sweep entry (m and noise substituted in).
    pub fn entry_train_config(&self, entry: &SweepEntry) -> TrainConfig {
        TrainConfig {
            m: entry.m,
            noise_variance: entry.noise_variance,
            n: self.dataset.n(),
            ..self.train.clone()
        }
    }

    /// Hash of the canonical serialized config; changes iff a semantically
    /// meaningful field changes.
    pub fn content_hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(canon.as_bytes());
        hex_string(&h.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

// ---------------------------------------------------------------------------
// config text format: flat `section.key = value` lines, '#' comments
// ---------------------------------------------------------------------------

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut pairs = std::collections::BTreeMap::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`", ln + 1))
        })?;
        pairs.insert(key.trim().to_string(), value.trim().to_string());
    }
    let mut cfg = ExperimentConfig {
        dataset: DatasetSpec::Ring {
            name: "ring8".into(),
            spec: MixtureSpec {
                modes: 8,
                radius: 2.0,
                std: 0.05,
            },
            n: 512,
        },
        train: TrainConfig::default(),
        sweep: Vec::new(),
        eval: EvalSettings::default(),
        emit_grids: true,
    };
    let mut image_path: Option<PathBuf> = None;
    let mut ds_name: Option<String> = None;
    let mut ds_kind = "ring".to_string();
    let mut ring = MixtureSpec {
        modes: 8,
        radius: 2.0,
        std: 0.05,
    };
    let mut ds_n = 512usize;

    for (key, value) in &pairs {
        match key.as_str() {
            "format_version" => {
                let v: u32 = parse_val(value, key)?;
                if v != CONFIG_FORMAT_VERSION {
                    return Err(Error::Config(format!("unsupported format_version {v}")));
                }
            }
            "dataset.kind" => ds_kind = value.clone(),
            "dataset.name" => ds_name = Some(value.clone()),
            "dataset.modes" => ring.modes = parse_val(value, key)?,
            "dataset.radius" => ring.radius = parse_val(value, key)?,
            "dataset.std" => ring.std = parse_val(value, key)?,
            "dataset.n" => ds_n = parse_val(value, key)?,
            "dataset.path" => image_path = Some(PathBuf::from(value)),
            "train.latent_dim" => cfg.train.latent_dim = parse_val(value, key)?,
            "train.k" => cfg.train.k = parse_val(value, key)?,
            "train.m" => cfg.train.m = parse_val(value, key)?,
            "train.noise_variance" => cfg.train.noise_variance = parse_val(value, key)?,
            "train.alpha" => cfg.train.alpha = parse_val(value, key)?,
            "train.beta1" => cfg.train.beta1 = parse_val(value, key)?,
            "train.beta2" => cfg.train.beta2 = parse_val(value, key)?,
            "train.adam_eps" => cfg.train.adam_eps = parse_val(value, key)?,
            "train.ema_decay" => cfg.train.ema_decay = parse_val(value, key)?,
            "train.max_iters" => cfg.train.max_iters = parse_val(value, key)?,
            "train.convergence_window" => cfg.train.convergence_window = parse_val(value, key)?,
            "train.convergence_tol" => cfg.train.convergence_tol = parse_val(value, key)?,
            "train.seed_data" => cfg.train.seed_data = parse_val(value, key)?,
            "train.seed_latent" => cfg.train.seed_latent = parse_val(value, key)?,
            "train.seed_train" => cfg.train.seed_train = parse_val(value, key)?,
            "train.checkpoint_every" => cfg.train.checkpoint_every = parse_val(value, key)?,
            "train.force_combined_stochasticity" => {
                cfg.train.force_combined_stochasticity = parse_val(value, key)?
            }
            "sweep.entries" => {
                cfg.sweep = value
                    .split(',')
                    .map(|item| {
                        let item = item.trim();
                        let (m, noise) = item.split_once(':').ok_or_else(|| {
                            Error::Config(format!("sweep entry {item:?}, expected m:noise"))
                        })?;
                        Ok(SweepEntry {
                            m: parse_val(m.trim(), "sweep m")?,
                            noise_variance: parse_val(noise.trim(), "sweep noise")?,
                        })
                    })
                    .collect::<Result<_>>()?;
            }
            "eval.spaces" => {
                cfg.eval.spaces = value
                    .split(',')
                    .map(|s| match s.trim() {
                        "pixel" => Ok(SpaceKind::Pixel),
                        "feature" => Ok(SpaceKind::Feature),
                        other => Err(Error::Config(format!("unknown space {other:?}"))),
                    })
                    .collect::<Result<_>>()?;
            }
            "eval.query_count" => cfg.eval.query_count = parse_val(value, key)?,
            "eval.seed" => cfg.eval.seed_eval = parse_val(value, key)?,
            "eval.feature_seed" => cfg.eval.feature_seed = parse_val(value, key)?,
            "output.grids" => cfg.emit_grids = parse_val(value, key)?,
            other => {
                return Err(Error::Config(format!("unknown config key {other:?}")));
            }
        }
    }
    cfg.dataset = match ds_kind.as_str() {
        "ring" => DatasetSpec::Ring {
            name: ds_name.unwrap_or_else(|| format!("ring{}", ring.modes)),
            spec: ring,
            n: ds_n,
        },
        "image" => DatasetSpec::Image {
            name: ds_name.unwrap_or_else(|| "image".to_string()),
            path: image_path
                .ok_or_else(|| Error::Config("dataset.kind = image needs dataset.path".into()))?,
            n: ds_n,
        },
        other => return Err(Error::Config(format!("unknown dataset.kind {other:?}"))),
    };
    if cfg.sweep.is_empty() {
        cfg.sweep = vec![SweepEntry {
            m: cfg.train.m,
            noise_variance: cfg.train.noise_variance,
        }];
    }
    Ok(cfg)
}

fn parse_val<T: std::str::FromStr>(value: &str, key: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} value {value:?}")))
}

// ---------------------------------------------------------------------------
// run records
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Incomplete,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntryRecord {
    pub dataset: String,
    pub m: usize,
    pub noise_variance: f64,
    pub iterations: u64,
    pub converged: bool,
    pub reports: Vec<MetricsReport>,
    pub loss_history_path: String,
    pub checkpoint_path: String,
    pub grid_path: Option<String>,
    pub duration_secs: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub format_version: u32,
    pub config_hash: String,
    pub status: RunStatus,
    pub entries: Vec<EntryRecord>,
    pub duration_secs: f64,
}

impl RunRecord {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("record serialization: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunRecord> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("record parse: {e}")))
    }
}

// ---------------------------------------------------------------------------
// output emission
// ---------------------------------------------------------------------------

/// 17 significant digits; parses back to the identical f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_row(dataset: &str, m: usize, noise: f64, r: &MetricsReport) -> String {
    format!(
        "{dataset},{m},{noise},{direction},{space},{avg},{top10},{top5},{qc},{seed}\n",
        direction = r.direction,
        space = r.space,
        avg = fmt_f64(r.avg),
        top10 = fmt_f64(r.top10),
        top5 = fmt_f64(r.top5),
        qc = r.query_count,
        seed = r.seed_eval,
    )
}

/// One CSV row per (dataset, m, noise, direction, space), in record order.
/// Errors (and creates no file) when the records carry no metric rows.
pub fn emit_table(records: &[&RunRecord], path: &Path) -> Result<()> {
    let mut body = String::from(CSV_HEADER);
    body.push('\n');
    let mut rows = 0;
    for record in records {
        for entry in &record.entries {
            for report in &entry.reports {
                body.push_str(&csv_row(
                    &entry.dataset,
                    entry.m,
                    entry.noise_variance,
                    report,
                ));
                rows += 1;
            }
        }
    }
    if rows == 0 {
        return Err(Error::InvalidArgument(
            "no metric rows to tabulate".to_string(),
        ));
    }
    std::fs::write(path, body)?;
    Ok(())
}

/// Tiled pixel-map grid (image mode) or SVG scatter (planar mode). The
/// optional overlay adds a second point series to the scatter; image grids
/// take no overlay.
pub fn emit_grid(set: &SampleSet, overlay: Option<&SampleSet>, path: &Path) -> Result<()> {
    match set.domain() {
        DomainTag::Image { h, w, c } => {
            if overlay.is_some() {
                return Err(Error::InvalidArgument(
                    "image grids take no overlay".to_string(),
                ));
            }
            emit_image_grid(set, h, w, c, path)
        }
        DomainTag::Planar2d => emit_scatter(set, overlay, path),
    }
}

fn emit_image_grid(set: &SampleSet, h: usize, w: usize, c: usize, path: &Path) -> Result<()> {
    if c != 1 && c != 3 {
        return Err(Error::InvalidArgument(format!(
            "pixel maps support 1 or 3 channels, got {c}"
        )));
    }
    let count = set.len();
    let cols = (count as f64).sqrt().ceil() as usize;
    let rows = count.div_ceil(cols);
    let (gw, gh) = (cols * w, rows * h);
    let mut pixels = vec![0u8; gw * gh * c];
    for i in 0..count {
        let (tr, tc) = (i / cols, i % cols);
        let sample = &set.samples().data()[i * h * w * c..(i + 1) * h * w * c];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let v = sample[(y * w + x) * c + ch];
                    let dst = ((tr * h + y) * gw + tc * w + x) * c + ch;
                    pixels[dst] = data::value_to_byte(v);
                }
            }
        }
    }
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "{magic}\n# format-version 1\n{gw} {gh}\n255\n")?;
    f.write_all(&pixels)?;
    Ok(())
}

fn emit_scatter(set: &SampleSet, overlay: Option<&SampleSet>, path: &Path) -> Result<()> {
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    let mut scan = |s: &SampleSet| {
        for i in 0..s.len() {
            for c in 0..2 {
                let v = s.samples().data()[2 * i + c];
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
    };
    scan(set);
    if let Some(o) = overlay {
        scan(o);
    }
    let pad = 0.5;
    let (x0, y0) = (min[0] - pad, min[1] - pad);
    let (x1, y1) = (max[0] + pad, max[1] + pad);
    let size = 640.0;
    let sx = size / (x1 - x0);
    let sy = size / (y1 - y0);
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"640\" \
         viewBox=\"0 0 640 640\" data-format-version=\"1\">\n"
    );
    let mut series = |s: &SampleSet, color: &str, r: f64| {
        for i in 0..s.len() {
            let x = (s.samples().data()[2 * i] - x0) * sx;
            let y = size - (s.samples().data()[2 * i + 1] - y0) * sy;
            let _ = write!(
                svg,
                "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{r}\" fill=\"{color}\" fill-opacity=\"0.6\"/>\n"
            );
        }
    };
    series(set, "#1f77b4", 3.0);
    if let Some(o) = overlay {
        series(o, "#d62728", 2.0);
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// the runner
// ---------------------------------------------------------------------------

struct EntrySink {
    loss_csv: std::io::BufWriter<std::fs::File>,
    checkpoint_dir: PathBuf,
}

impl TrainObserver for EntrySink {
    fn on_step(&mut self, log: &StepLog) -> Result<()> {
        let mut row = format!(
            "{},{},{}",
            log.iteration,
            fmt_f64(log.d_loss),
            fmt_f64(log.g_loss)
        );
        for s in &log.sigmas {
            row.push(',');
            row.push_str(&fmt_f64(*s));
        }
        row.push('\n');
        self.loss_csv.write_all(row.as_bytes())?;
        Ok(())
    }

    fn on_checkpoint(&mut self, state: &TrainState) -> Result<()> {
        let path = self
            .checkpoint_dir
            .join(format!("checkpoint_{:07}.txt", state.iteration));
        checkpoint::from_train_state(state).save(&path)
    }
}

fn entry_dir_name(entry: &SweepEntry) -> String {
    format!("m{}_noise{}", entry.m, entry.noise_variance)
}

fn run_entry(
    config: &ExperimentConfig,
    entry: &SweepEntry,
    data: &SampleSet,
    latents: &LatentSet,
    out_dir: &Path,
    precision: Precision,
) -> Result<EntryRecord> {
    let start = Instant::now();
    let dir = out_dir.join(entry_dir_name(entry));
    std::fs::create_dir_all(&dir)?;
    let loss_path = dir.join("loss_history.csv");
    let mut sink = EntrySink {
        loss_csv: std::io::BufWriter::new(std::fs::File::create(&loss_path)?),
        checkpoint_dir: dir.clone(),
    };
    sink.loss_csv
        .write_all(b"iteration,d_loss,g_loss,sigma_hat_0,sigma_hat_1,sigma_hat_2\n")?;

    let train_cfg = config.entry_train_config(entry);
    let outcome = training::train(&train_cfg, data, latents, precision, Some(&mut sink))?;
    sink.loss_csv.flush()?;
    drop(sink);

    let ck_path = dir.join("final_checkpoint.txt");
    let mut ck = Checkpoint::default();
    ck.insert_store("g", &outcome.g_params);
    ck.insert_store("d", &outcome.d_params);
    ck.insert_store("ema", &outcome.ema_params);
    ck.meta
        .insert("iteration".into(), outcome.iterations.to_string());
    ck.save(&ck_path)?;

    let embedder = FeatureEmbedder::new(data.data_dim(), config.eval.feature_seed);
    let query_count = config
        .eval
        .query_count
        .min(latents.len())
        .min(data.len());
    let mut reports = Vec::new();
    for space_kind in &config.eval.spaces {
        let space = match space_kind {
            SpaceKind::Pixel => DistanceSpace::PixelL1,
            SpaceKind::Feature => DistanceSpace::FeatureL2(&embedder),
        };
        reports.push(overfitting_metric(
            &outcome.g_spec,
            &outcome.ema_params,
            latents,
            data,
            space,
            query_count,
            config.eval.seed_eval,
            precision,
        )?);
        reports.push(mode_drop_metric(
            &outcome.g_spec,
            &outcome.ema_params,
            latents,
            data,
            space,
            query_count,
            config.eval.seed_eval,
            precision,
        )?);
    }

    let grid_path = if config.emit_grids {
        let generated = network::generator_forward(
            &outcome.g_spec,
            &outcome.ema_params,
            latents.latents(),
            precision,
        )?;
        match data.domain() {
            DomainTag::Planar2d => {
                let gen_set = SampleSet::new(generated, DomainTag::Planar2d)?;
                let p = dir.join("scatter.svg");
                emit_grid(data, Some(&gen_set), &p)?;
                Some(p)
            }
            DomainTag::Image { .. } => {
                // tanh head keeps values in [-1, 1]
                let gen_set = SampleSet::new(generated, data.domain())?;
                let p = dir.join("grid.ppm");
                emit_grid(&gen_set, None, &p)?;
                Some(p)
            }
        }
    } else {
        None
    };

    Ok(EntryRecord {
        dataset: config.dataset.name().to_string(),
        m: entry.m,
        noise_variance: entry.noise_variance,
        iterations: outcome.iterations,
        converged: outcome.converged,
        reports,
        loss_history_path: loss_path.display().to_string(),
        checkpoint_path: ck_path.display().to_string(),
        grid_path: grid_path.map(|p| p.display().to_string()),
        duration_secs: start.elapsed().as_secs_f64(),
        error: None,
    })
}

/// Build X and Z once, run every sweep entry (in parallel threads), persist
/// reports, checkpoints and grids, and emit the combined CSV plus a run
/// record. A failed entry still leaves the record (marked incomplete) on
/// disk before the error propagates.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
    precision: Precision,
) -> Result<RunRecord> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let start = Instant::now();
    let data = config.dataset.build(config.train.seed_data)?;
    let latents = make_fixed_latents(config.train.k, config.train.latent_dim, config.train.seed_latent)?;

    let results: Vec<Result<EntryRecord>> = std::thread::scope(|scope| {
        let handles: Vec<_> = config
            .sweep
            .iter()
            .map(|entry| {
                let data = &data;
                let latents = &latents;
                scope.spawn(move || run_entry(config, entry, data, latents, out_dir, precision))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("entry thread")).collect()
    });

    let mut entries = Vec::new();
    let mut first_error = None;
    for (entry, result) in config.sweep.iter().zip(results) {
        match result {
            Ok(record) => entries.push(record),
            Err(e) => {
                entries.push(EntryRecord {
                    dataset: config.dataset.name().to_string(),
                    m: entry.m,
                    noise_variance: entry.noise_variance,
                    iterations: 0,
                    converged: false,
                    reports: Vec::new(),
                    loss_history_path: String::new(),
                    checkpoint_path: String::new(),
                    grid_path: None,
                    duration_secs: 0.0,
                    error: Some(e.to_string()),
                });
                if first_error.is_none() {
                    first_error = Some(e);
                }
            }
        }
    }

    let record = RunRecord {
        format_version: RECORD_FORMAT_VERSION,
        config_hash: config.content_hash(),
        status: if first_error.is_none() {
            RunStatus::Complete
        } else {
            RunStatus::Incomplete
        },
        entries,
        duration_secs: start.elapsed().as_secs_f64(),
    };
    record.save(&out_dir.join("run_record.json"))?;
    if record.status == RunStatus::Complete {
        emit_table(&[&record], &out_dir.join("table.csv"))?;
    }
    match first_error {
        None => Ok(record),
        Some(e) => Err(e),
    }
}
