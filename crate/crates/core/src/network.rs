//! Generator and discriminator definitions: layer specs, seeded
//! initialization, spectral normalization of discriminator weights, and
//! forward passes both on and off the autodiff tape.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::tensor::{self, Precision, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;
/// Probability clamp applied to discriminator outputs so log losses are total.
pub const PROB_EPS: f64 = 1e-7;
const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Dense {
        in_dim: usize,
        out_dim: usize,
        spectral_norm: bool,
    },
    LeakyRelu {
        slope: f64,
    },
    Tanh,
    Sigmoid,
}

#[derive(Clone, Debug)]
pub struct GeneratorSpec {
    pub latent_dim: usize,
    pub data_dim: usize,
    pub layers: Vec<LayerSpec>,
    /// Image mode ends in tanh so outputs live in [-1, 1]; planar mode has an
    /// identity head.
    pub image_mode: bool,
}

#[derive(Clone, Debug)]
pub struct DiscriminatorSpec {
    pub data_dim: usize,
    pub layers: Vec<LayerSpec>,
}

impl GeneratorSpec {
    /// Canonical desk-scale generator: latent -> 128 -> 256 -> data_dim with
    /// leaky-relu hidden layers and a tanh (image) or identity (planar) head.
    pub fn mlp(latent_dim: usize, data_dim: usize, image_mode: bool) -> Self {
        let mut layers = vec![
            LayerSpec::Dense {
                in_dim: latent_dim,
                out_dim: 128,
                spectral_norm: false,
            },
            LayerSpec::LeakyRelu { slope: LEAKY_SLOPE },
            LayerSpec::Dense {
                in_dim: 128,
                out_dim: 256,
                spectral_norm: false,
            },
            LayerSpec::LeakyRelu { slope: LEAKY_SLOPE },
            LayerSpec::Dense {
                in_dim: 256,
                out_dim: data_dim,
                spectral_norm: false,
            },
        ];
        if image_mode {
            layers.push(LayerSpec::Tanh);
        }
        GeneratorSpec {
            latent_dim,
            data_dim,
            layers,
            image_mode,
        }
    }
}

impl DiscriminatorSpec {
    /// Canonical desk-scale discriminator: data_dim -> 256 -> 128 -> 1, all
    /// dense layers spectrally normalized, sigmoid head.
    pub fn mlp(data_dim: usize) -> Self {
        DiscriminatorSpec {
            data_dim,
            layers: vec![
                LayerSpec::Dense {
                    in_dim: data_dim,
                    out_dim: 256,
                    spectral_norm: true,
                },
                LayerSpec::LeakyRelu { slope: LEAKY_SLOPE },
                LayerSpec::Dense {
                    in_dim: 256,
                    out_dim: 128,
                    spectral_norm: true,
                },
                LayerSpec::LeakyRelu { slope: LEAKY_SLOPE },
                LayerSpec::Dense {
                    in_dim: 128,
                    out_dim: 1,
                    spectral_norm: true,
                },
                LayerSpec::Sigmoid,
            ],
        }
    }
}

/// Named parameter container. Dense layer `i` owns `dense{i}.w` (in,out),
/// `dense{i}.b` (out) and, when spectrally normalized, `dense{i}.u` — the
/// persistent power-iteration left vector (unit norm).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    /// Trainable parameter names (weights and biases; excludes power-iteration
    /// state).
    pub fn trainable_names(&self) -> Vec<String> {
        self.tensors
            .keys()
            .filter(|k| !k.ends_with(".u"))
            .cloned()
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Seeded initialization: weights from a scaled normal (std sqrt(2/in) before
/// leaky-relu, sqrt(1/in) otherwise), zero biases, random unit u vectors.
pub fn init_params(layers: &[LayerSpec], seed: u64) -> ParamStore {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut dense_idx = 0;
    for (li, layer) in layers.iter().enumerate() {
        if let LayerSpec::Dense {
            in_dim,
            out_dim,
            spectral_norm,
        } = layer
        {
            let followed_by_lrelu = matches!(layers.get(li + 1), Some(LayerSpec::LeakyRelu { .. }));
            let std = if followed_by_lrelu {
                (2.0 / *in_dim as f64).sqrt()
            } else {
                (1.0 / *in_dim as f64).sqrt()
            };
            let w: Vec<f64> = (0..in_dim * out_dim)
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            store.insert(
                format!("dense{dense_idx}.w"),
                Tensor::new(vec![*in_dim, *out_dim], w).expect("init shape"),
            );
            store.insert(
                format!("dense{dense_idx}.b"),
                Tensor::zeros(vec![*out_dim]),
            );
            if *spectral_norm {
                let mut u: Vec<f64> = (0..*in_dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let norm = tensor::l2_norm(&u).max(NORM_EPS);
                for v in &mut u {
                    *v /= norm;
                }
                store.insert(
                    format!("dense{dense_idx}.u"),
                    Tensor::new(vec![*in_dim], u).expect("init shape"),
                );
            }
            dense_idx += 1;
        }
    }
    store
}

/// Power-iteration estimate of the largest singular value of `w` (rows,cols),
/// starting from the persistent left vector `u`. Returns the normalized
/// matrix, the advanced unit left vector, and sigma_hat.
pub fn spectral_normalize(
    w: &Tensor,
    u: &Tensor,
    n_iters: usize,
) -> Result<(Tensor, Tensor, f64)> {
    let (rows, cols) = w.as_matrix()?;
    if u.shape() != [rows] {
        return Err(Error::ShapeMismatch {
            op: "spectral_normalize",
            detail: format!("u shape {:?} for {rows}x{cols} matrix", u.shape()),
        });
    }
    let wd = w.data();
    let mut uv = u.data().to_vec();
    let mut vv = vec![0.0; cols];
    for _ in 0..n_iters {
        // v = normalize(W^T u)
        for x in &mut vv {
            *x = 0.0;
        }
        for r in 0..rows {
            let ur = uv[r];
            let row = &wd[r * cols..(r + 1) * cols];
            for c in 0..cols {
                vv[c] += ur * row[c];
            }
        }
        let vn = tensor::l2_norm(&vv);
        if vn < NORM_EPS {
            return Err(Error::DegenerateWeight { eps: NORM_EPS });
        }
        for x in &mut vv {
            *x /= vn;
        }
        // u = normalize(W v)
        for r in 0..rows {
            let row = &wd[r * cols..(r + 1) * cols];
            let mut acc = 0.0;
            for c in 0..cols {
                acc += row[c] * vv[c];
            }
            uv[r] = acc;
        }
        let un = tensor::l2_norm(&uv);
        if un < NORM_EPS {
            return Err(Error::DegenerateWeight { eps: NORM_EPS });
        }
        for x in &mut uv {
            *x /= un;
        }
    }
    // sigma = u^T W v
    let mut sigma = 0.0;
    for r in 0..rows {
        let row = &wd[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for c in 0..cols {
            acc += row[c] * vv[c];
        }
        sigma += uv[r] * acc;
    }
    if sigma.abs() < NORM_EPS {
        return Err(Error::DegenerateWeight { eps: NORM_EPS });
    }
    let w_norm = tensor::map_unary(w, Precision::F64, |x| x / sigma);
    Ok((w_norm, Tensor::new(vec![rows], uv)?, sigma))
}

/// Tape handles for one network's parameters: `leaf` ids receive gradients,
/// `forward` ids are what the layer stack consumes (they differ for
/// spectrally normalized weights, where the forward id is the 1/sigma-scaled
/// node).
pub struct BoundParams {
    pub leaves: BTreeMap<String, NodeId>,
    forward: BTreeMap<String, NodeId>,
    pub sigmas: Vec<f64>,
}

/// Bind a generator's parameters onto the tape (no normalization involved).
pub fn bind_generator(tape: &mut Tape, params: &ParamStore) -> BoundParams {
    let mut leaves = BTreeMap::new();
    let mut forward = BTreeMap::new();
    for (name, t) in params.iter() {
        let id = tape.leaf(t.clone());
        leaves.insert(name.clone(), id);
        forward.insert(name.clone(), id);
    }
    BoundParams {
        leaves,
        forward,
        sigmas: Vec::new(),
    }
}

/// Bind a discriminator's parameters onto the tape. In train mode each
/// spectrally normalized weight gets one power iteration and the advanced u
/// vector is persisted back into `params`; otherwise the stored u is used
/// without being advanced. sigma_hat is treated as a constant on the tape, so
/// gradients reach the raw weight scaled by 1/sigma.
pub fn bind_discriminator(
    tape: &mut Tape,
    params: &mut ParamStore,
    train_mode: bool,
) -> Result<BoundParams> {
    let mut leaves = BTreeMap::new();
    let mut forward = BTreeMap::new();
    let mut sigmas = Vec::new();
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    for name in names {
        if name.ends_with(".u") {
            continue;
        }
        let t = params.get(&name).expect("name from iteration").clone();
        let id = tape.leaf(t);
        leaves.insert(name.clone(), id);
        let u_name = format!("{}.u", name.trim_end_matches(".w"));
        if name.ends_with(".w") && params.get(&u_name).is_some() {
            let w = params.get(&name).expect("weight present");
            let u = params.get(&u_name).expect("u present");
            let (_, u_next, sigma) = spectral_normalize(w, u, 1)?;
            if train_mode {
                *params.get_mut(&u_name).expect("u present") = u_next;
            }
            sigmas.push(sigma);
            let scaled = tape.affine(id, 1.0 / sigma, 0.0);
            forward.insert(name, scaled);
        } else {
            forward.insert(name, id);
        }
    }
    Ok(BoundParams {
        leaves,
        forward,
        sigmas,
    })
}

/// Run a layer stack on the tape from an already-bound input node.
pub fn forward_layers(
    tape: &mut Tape,
    layers: &[LayerSpec],
    bound: &BoundParams,
    input: NodeId,
) -> Result<NodeId> {
    let mut x = input;
    let mut dense_idx = 0;
    for layer in layers {
        x = match layer {
            LayerSpec::Dense { .. } => {
                let w = bound.forward[&format!("dense{dense_idx}.w")];
                let b = bound.forward[&format!("dense{dense_idx}.b")];
                dense_idx += 1;
                let h = tape.matmul(x, w)?;
                tape.add_bias(h, b)?
            }
            LayerSpec::LeakyRelu { slope } => tape.leaky_relu(x, *slope),
            LayerSpec::Tanh => tape.tanh(x),
            LayerSpec::Sigmoid => tape.sigmoid(x),
        };
    }
    Ok(x)
}

/// Generator forward pass off the tape.
pub fn generator_forward(
    spec: &GeneratorSpec,
    params: &ParamStore,
    z_batch: &Tensor,
    precision: Precision,
) -> Result<Tensor> {
    let (_, cols) = z_batch.as_matrix()?;
    if cols != spec.latent_dim {
        return Err(Error::ShapeMismatch {
            op: "generator_forward",
            detail: format!("latent dim {} vs input cols {cols}", spec.latent_dim),
        });
    }
    let mut tape = Tape::new(precision);
    let bound = bind_generator(&mut tape, params);
    let z = tape.leaf(z_batch.clone());
    let out = forward_layers(&mut tape, &spec.layers, &bound, z)?;
    Ok(tape.value(out).clone())
}

/// Discriminator forward pass off the tape, returning clamped probabilities
/// in (PROB_EPS, 1 - PROB_EPS). In train mode the power-iteration state is
/// advanced and persisted.
pub fn discriminator_forward(
    spec: &DiscriminatorSpec,
    params: &mut ParamStore,
    x_batch: &Tensor,
    train_mode: bool,
    precision: Precision,
) -> Result<Tensor> {
    let (_, cols) = x_batch.as_matrix()?;
    if cols != spec.data_dim {
        return Err(Error::ShapeMismatch {
            op: "discriminator_forward",
            detail: format!("data dim {} vs input cols {cols}", spec.data_dim),
        });
    }
    let mut tape = Tape::new(precision);
    let bound = bind_discriminator(&mut tape, params, train_mode)?;
    let x = tape.leaf(x_batch.clone());
    let p = forward_layers(&mut tape, &spec.layers, &bound, x)?;
    let clamped = tape.clamp(p, PROB_EPS, 1.0 - PROB_EPS);
    Ok(tape.value(clamped).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seed_deterministic() {
        let spec = DiscriminatorSpec::mlp(2);
        let a = init_params(&spec.layers, 7);
        let b = init_params(&spec.layers, 7);
        assert_eq!(a, b);
        let c = init_params(&spec.layers, 8);
        assert_ne!(a.get("dense0.w"), c.get("dense0.w"));
    }

    #[test]
    fn biases_start_zero() {
        let layers = vec![LayerSpec::Dense {
            in_dim: 4,
            out_dim: 4,
            spectral_norm: false,
        }];
        let p = init_params(&layers, 1);
        assert_eq!(p.get("dense0.b").unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn init_std_matches_scaled_normal() {
        let layers = vec![
            LayerSpec::Dense {
                in_dim: 512,
                out_dim: 512,
                spectral_norm: false,
            },
            LayerSpec::LeakyRelu { slope: LEAKY_SLOPE },
        ];
        let p = init_params(&layers, 3);
        let w = p.get("dense0.w").unwrap();
        let n = w.numel() as f64;
        let mean: f64 = w.data().iter().sum::<f64>() / n;
        let var: f64 = w.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let expect = (2.0 / 512.0_f64).sqrt();
        assert!(
            (var.sqrt() - expect).abs() / expect < 0.05,
            "std {} vs {}",
            var.sqrt(),
            expect
        );
    }

    #[test]
    fn spectral_norm_diagonal() {
        let w = Tensor::new(vec![2, 2], vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let u = Tensor::new(vec![2], vec![0.8, 0.6]).unwrap();
        let (wn, _, sigma) = spectral_normalize(&w, &u, 200).unwrap();
        assert!((sigma - 3.0).abs() < 1e-9);
        // top singular value of the normalized matrix is 1
        let (_, _, s2) = spectral_normalize(&wn, &u, 200).unwrap();
        assert!((s2 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn spectral_norm_fixed_point() {
        // already-normalized matrix passes through unchanged
        let w = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 0.25]).unwrap();
        let u = Tensor::new(vec![2], vec![1.0, 0.0]).unwrap();
        let (wn, _, sigma) = spectral_normalize(&w, &u, 100).unwrap();
        assert!((sigma - 1.0).abs() < 1e-9);
        for (a, b) in wn.data().iter().zip(w.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn spectral_norm_rejects_zero_matrix() {
        let w = Tensor::zeros(vec![3, 3]);
        let u = Tensor::new(vec![3], vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            spectral_normalize(&w, &u, 5),
            Err(Error::DegenerateWeight { .. })
        ));
    }

    #[test]
    fn zero_discriminator_outputs_half() {
        // zero weights are degenerate for spectral norm; disable it here
        let spec = DiscriminatorSpec {
            data_dim: 2,
            layers: DiscriminatorSpec::mlp(2)
                .layers
                .iter()
                .map(|l| match l {
                    LayerSpec::Dense {
                        in_dim, out_dim, ..
                    } => LayerSpec::Dense {
                        in_dim: *in_dim,
                        out_dim: *out_dim,
                        spectral_norm: false,
                    },
                    other => other.clone(),
                })
                .collect(),
        };
        let mut params = init_params(&spec.layers, 1);
        let names = params.trainable_names();
        for name in names {
            let t = params.get_mut(&name).unwrap();
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        let x = Tensor::new(vec![2, 2], vec![0.3, -0.7, 1.0, 2.0]).unwrap();
        let p = discriminator_forward(&spec, &mut params, &x, false, Precision::F64).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
    }

    #[test]
    fn clamp_bounds_probability() {
        // single dense 1->1 with huge weight saturates the sigmoid
        let spec = DiscriminatorSpec {
            data_dim: 1,
            layers: vec![
                LayerSpec::Dense {
                    in_dim: 1,
                    out_dim: 1,
                    spectral_norm: false,
                },
                LayerSpec::Sigmoid,
            ],
        };
        let mut params = ParamStore::new();
        params.insert("dense0.w", Tensor::new(vec![1, 1], vec![1000.0]).unwrap());
        params.insert("dense0.b", Tensor::zeros(vec![1]));
        let x = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        let p = discriminator_forward(&spec, &mut params, &x, false, Precision::F64).unwrap();
        assert_eq!(p.data()[0], 1.0 - PROB_EPS);
    }

    #[test]
    fn zero_generator_outputs_zero() {
        let spec = GeneratorSpec::mlp(4, 3, true);
        let mut params = init_params(&spec.layers, 1);
        let names = params.trainable_names();
        for name in names {
            let t = params.get_mut(&name).unwrap();
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        let z = Tensor::new(vec![2, 4], vec![1.0; 8]).unwrap();
        let out = generator_forward(&spec, &params, &z, Precision::F64).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_rows_are_independent() {
        let spec = GeneratorSpec::mlp(4, 3, true);
        let params = init_params(&spec.layers, 11);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let z8: Vec<f64> = (0..32).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let z_batch = Tensor::new(vec![8, 4], z8.clone()).unwrap();
        let out8 = generator_forward(&spec, &params, &z_batch, Precision::F64).unwrap();
        let z1 = Tensor::new(vec![1, 4], z8[12..16].to_vec()).unwrap();
        let out1 = generator_forward(&spec, &params, &z1, Precision::F64).unwrap();
        assert_eq!(out1.data(), &out8.data()[9..12]);
    }

    #[test]
    fn train_mode_sigma_converges_upward() {
        // repeated train-mode passes refine u; sigma_hat approaches the true
        // top singular value from below (up to tiny numerical slack)
        let spec = DiscriminatorSpec {
            data_dim: 3,
            layers: vec![
                LayerSpec::Dense {
                    in_dim: 3,
                    out_dim: 4,
                    spectral_norm: true,
                },
                LayerSpec::Sigmoid,
            ],
        };
        let mut params = init_params(&spec.layers, 42);
        let x = Tensor::new(vec![1, 3], vec![0.1, 0.2, 0.3]).unwrap();
        let mut sigmas = Vec::new();
        for _ in 0..30 {
            let mut tape = Tape::new(Precision::F64);
            let bound = bind_discriminator(&mut tape, &mut params, true).unwrap();
            let xin = tape.leaf(x.clone());
            forward_layers(&mut tape, &spec.layers, &bound, xin).unwrap();
            sigmas.push(bound.sigmas[0]);
        }
        for w in sigmas.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "sigma not monotone: {:?}", sigmas);
        }
        let w = params.get("dense0.w").unwrap();
        let u = params.get("dense0.u").unwrap();
        let (_, _, sigma_true) = spectral_normalize(w, u, 500).unwrap();
        assert!((sigmas.last().unwrap() - sigma_true).abs() < 1e-6);
    }
}
