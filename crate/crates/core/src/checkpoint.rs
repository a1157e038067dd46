//! Versioned textual checkpoint container: named tensors (shape + row-major
//! values) plus scalar metadata. Values use shortest round-trip decimal
//! formatting, which parses back bit-exactly in 64-bit mode.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::ParamStore;
use crate::tensor::Tensor;

pub const FORMAT_HEADER: &str = "ganlab-checkpoint 1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Tensor>,
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn insert_store(&mut self, prefix: &str, store: &ParamStore) {
        for (name, t) in store.iter() {
            self.tensors.insert(format!("{prefix}/{name}"), t.clone());
        }
    }

    pub fn extract_store(&self, prefix: &str) -> ParamStore {
        let mut store = ParamStore::new();
        let lead = format!("{prefix}/");
        for (key, t) in &self.tensors {
            if let Some(name) = key.strip_prefix(&lead) {
                if !name.contains('/') {
                    store.insert(name, t.clone());
                }
            }
        }
        store
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{FORMAT_HEADER}")?;
        for (k, v) in &self.meta {
            writeln!(f, "meta {k} {v}")?;
        }
        for (key, t) in &self.tensors {
            write!(f, "tensor {key} {}", t.shape().len())?;
            for d in t.shape() {
                write!(f, " {d}")?;
            }
            write!(f, " :")?;
            for v in t.data() {
                write!(f, " {v}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut lines = f.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Checkpoint("empty file".into()))??;
        if header != FORMAT_HEADER {
            return Err(Error::Checkpoint(format!("bad header {header:?}")));
        }
        let mut ck = Checkpoint::default();
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("meta") => {
                    let k = parts
                        .next()
                        .ok_or_else(|| Error::Checkpoint("meta without key".into()))?;
                    let v: Vec<&str> = parts.collect();
                    ck.meta.insert(k.to_string(), v.join(" "));
                }
                Some("tensor") => {
                    let key = parts
                        .next()
                        .ok_or_else(|| Error::Checkpoint("tensor without key".into()))?
                        .to_string();
                    let rank: usize = parse(parts.next(), "rank")?;
                    let mut shape = Vec::with_capacity(rank);
                    for _ in 0..rank {
                        shape.push(parse(parts.next(), "dim")?);
                    }
                    if parts.next() != Some(":") {
                        return Err(Error::Checkpoint(format!("missing separator in {key}")));
                    }
                    let data: Vec<f64> = parts
                        .map(|s| {
                            s.parse::<f64>()
                                .map_err(|e| Error::Checkpoint(format!("bad value {s}: {e}")))
                        })
                        .collect::<Result<_>>()?;
                    ck.tensors.insert(key, Tensor::new(shape, data)?);
                }
                Some(other) => {
                    return Err(Error::Checkpoint(format!("unknown record {other:?}")));
                }
                None => {}
            }
        }
        Ok(ck)
    }
}

/// Snapshot of a full training state: parameters, ADAM moments, EMA shadow.
pub fn from_train_state(state: &crate::training::TrainState) -> Checkpoint {
    let mut ck = Checkpoint::default();
    ck.insert_store("g", &state.g_params);
    ck.insert_store("d", &state.d_params);
    ck.insert_store("ema", state.ema.shadow());
    for (label, adam) in [("g", &state.g_adam), ("d", &state.d_adam)] {
        let (m, v) = adam.moments();
        for (name, t) in m {
            ck.tensors.insert(format!("adam_{label}/m/{name}"), t.clone());
        }
        for (name, t) in v {
            ck.tensors.insert(format!("adam_{label}/v/{name}"), t.clone());
        }
        ck.meta
            .insert(format!("adam_{label}.t"), adam.step_count().to_string());
    }
    ck.meta
        .insert("iteration".into(), state.iteration.to_string());
    ck.meta
        .insert("ema.decay".into(), format!("{}", state.ema.decay));
    ck
}

fn parse<T: std::str::FromStr>(field: Option<&str>, what: &str) -> Result<T> {
    field
        .ok_or_else(|| Error::Checkpoint(format!("missing {what}")))?
        .parse()
        .map_err(|_| Error::Checkpoint(format!("unparsable {what}")))
}
