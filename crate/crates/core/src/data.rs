//! Fixed real-sample and latent sets, the Gaussian-ring synthetic generator,
//! and raw-image ingestion via a small library-free binary container.
//!
//! Container layout (all integers little-endian):
//!   magic "GLIM", version u8, count u32, h u32, w u32, c u32,
//!   then count*h*w*c unsigned bytes, row-major per image.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: &[u8; 4] = b"GLIM";
pub const IMAGE_FORMAT_VERSION: u8 = 1;

/// Domain of a sample set: unbounded 2-D points or images pre-scaled to
/// [-1, 1].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainTag {
    Planar2d,
    Image { h: usize, w: usize, c: usize },
}

impl DomainTag {
    pub fn data_dim(&self) -> usize {
        match self {
            DomainTag::Planar2d => 2,
            DomainTag::Image { h, w, c } => h * w * c,
        }
    }
}

/// The fixed real-data set X of n samples. Immutable after construction.
#[derive(Clone, Debug)]
pub struct SampleSet {
    samples: Tensor,
    domain: DomainTag,
}

impl SampleSet {
    pub fn new(samples: Tensor, domain: DomainTag) -> Result<Self> {
        let (_, dim) = samples.as_matrix()?;
        if dim != domain.data_dim() {
            return Err(Error::Dataset(format!(
                "sample dim {dim} does not match domain dim {}",
                domain.data_dim()
            )));
        }
        if let DomainTag::Image { .. } = domain {
            if samples.data().iter().any(|&v| !(-1.0..=1.0).contains(&v)) {
                return Err(Error::Dataset(
                    "image-mode samples must lie in [-1, 1]".to_string(),
                ));
            }
        }
        Ok(SampleSet { samples, domain })
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn domain(&self) -> DomainTag {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data_dim(&self) -> usize {
        self.samples.shape()[1]
    }
}

/// The fixed prior sample set Z of k latent vectors. Immutable after
/// construction.
#[derive(Clone, Debug)]
pub struct LatentSet {
    latents: Tensor,
}

impl LatentSet {
    pub fn latents(&self) -> &Tensor {
        &self.latents
    }

    pub fn len(&self) -> usize {
        self.latents.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn latent_dim(&self) -> usize {
        self.latents.shape()[1]
    }
}

/// k i.i.d. standard-normal latent vectors, fully determined by `seed`.
pub fn make_fixed_latents(k: usize, latent_dim: usize, seed: u64) -> Result<LatentSet> {
    if k == 0 || latent_dim == 0 {
        return Err(Error::InvalidArgument(
            "latent set needs k >= 1 and latent_dim >= 1".to_string(),
        ));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..k * latent_dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(LatentSet {
        latents: Tensor::new(vec![k, latent_dim], data)?,
    })
}

/// Uniform mixture of K isotropic Gaussians on a ring (or any centers the
/// caller derives). Weights are uniform by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub modes: usize,
    pub radius: f64,
    pub std: f64,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.modes == 0 {
            return Err(Error::Config("mixture needs at least one mode".into()));
        }
        if self.std <= 0.0 {
            return Err(Error::Config("mixture std must be positive".into()));
        }
        Ok(())
    }

    pub fn center(&self, i: usize) -> (f64, f64) {
        let angle = 2.0 * PI * i as f64 / self.modes as f64;
        (self.radius * angle.cos(), self.radius * angle.sin())
    }
}

/// n samples, exactly n/K per mode (n must divide evenly), mode i centered at
/// radius * (cos 2*pi*i/K, sin 2*pi*i/K).
pub fn make_gaussian_ring(spec: &MixtureSpec, n: usize, seed: u64) -> Result<SampleSet> {
    spec.validate()?;
    if n == 0 || n % spec.modes != 0 {
        return Err(Error::Dataset(format!(
            "n = {n} must be a positive multiple of mode count {}",
            spec.modes
        )));
    }
    let per_mode = n / spec.modes;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * 2);
    for mode in 0..spec.modes {
        let (cx, cy) = spec.center(mode);
        for _ in 0..per_mode {
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            data.push(cx + spec.std * dx);
            data.push(cy + spec.std * dy);
        }
    }
    SampleSet::new(Tensor::new(vec![n, 2], data)?, DomainTag::Planar2d)
}

/// Write a sample batch in image mode to the binary container, mapping
/// [-1, 1] back to bytes.
pub fn save_image_dataset(set: &SampleSet, path: &Path) -> Result<()> {
    let DomainTag::Image { h, w, c } = set.domain() else {
        return Err(Error::Dataset("save_image_dataset needs image mode".into()));
    };
    let mut out = Vec::with_capacity(17 + set.samples().numel());
    out.extend_from_slice(IMAGE_MAGIC);
    out.push(IMAGE_FORMAT_VERSION);
    out.extend_from_slice(&(set.len() as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(c as u32).to_le_bytes());
    for &v in set.samples().data() {
        out.push(value_to_byte(v));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

pub fn value_to_byte(v: f64) -> u8 {
    // [-1,1] -> [0,255], round half away from zero, saturate
    (((v + 1.0) * 127.5).round()).clamp(0.0, 255.0) as u8
}

/// Load the first `n` images of the container at `path`, channel values
/// linearly mapped to [-1, 1]. Also accepts a binary PPM/PGM pixmap, which is
/// treated as a single image.
pub fn load_image_dataset(path: &Path, n: usize) -> Result<SampleSet> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        return load_pixmap(&bytes, n);
    }
    if bytes.len() < 21 || &bytes[0..4] != IMAGE_MAGIC {
        return Err(Error::Dataset("not an image container".into()));
    }
    if bytes[4] != IMAGE_FORMAT_VERSION {
        return Err(Error::Dataset(format!(
            "unsupported container version {}",
            bytes[4]
        )));
    }
    let count = u32::from_le_bytes(bytes[5..9].try_into().expect("sized")) as usize;
    let h = u32::from_le_bytes(bytes[9..13].try_into().expect("sized")) as usize;
    let w = u32::from_le_bytes(bytes[13..17].try_into().expect("sized")) as usize;
    let c = u32::from_le_bytes(bytes[17..21].try_into().expect("sized")) as usize;
    if count < n {
        return Err(Error::Dataset(format!(
            "container holds {count} images, {n} requested"
        )));
    }
    let dim = h * w * c;
    let need = 21 + n * dim;
    if bytes.len() < need {
        return Err(Error::Dataset("truncated image container".into()));
    }
    let data: Vec<f64> = bytes[21..need]
        .iter()
        .map(|&b| b as f64 / 127.5 - 1.0)
        .collect();
    SampleSet::new(Tensor::new(vec![n, dim], data)?, DomainTag::Image { h, w, c })
}

fn load_pixmap(bytes: &[u8], n: usize) -> Result<SampleSet> {
    if n != 1 {
        return Err(Error::Dataset(
            "a pixmap file holds a single image".to_string(),
        ));
    }
    let c = if bytes.starts_with(b"P6") { 3 } else { 1 };
    // header: magic, whitespace/comments, width, height, maxval, single ws
    let mut fields = Vec::new();
    let mut i = 2;
    while fields.len() < 3 && i < bytes.len() {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            i += 1;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if start == i {
            return Err(Error::Dataset("malformed pixmap header".into()));
        }
        let text = std::str::from_utf8(&bytes[start..i]).expect("digits");
        fields.push(text.parse::<usize>().expect("digits"));
    }
    if fields.len() != 3 || fields[2] != 255 {
        return Err(Error::Dataset("malformed pixmap header".into()));
    }
    let (w, h) = (fields[0], fields[1]);
    i += 1; // single whitespace after maxval
    let dim = h * w * c;
    if bytes.len() < i + dim {
        return Err(Error::Dataset("truncated pixmap".into()));
    }
    let data: Vec<f64> = bytes[i..i + dim]
        .iter()
        .map(|&b| b as f64 / 127.5 - 1.0)
        .collect();
    SampleSet::new(Tensor::new(vec![1, dim], data)?, DomainTag::Image { h, w, c })
}
