//! Gradient and forward-pass oracles: an independently coded straight-line
//! network evaluator and a central finite-difference check.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use ganlab_core::autodiff::Tape;
use ganlab_core::network::{
    bind_generator, forward_layers, init_params, LayerSpec, ParamStore,
};
use ganlab_core::tensor::{Precision, Tensor};

/// Straight-line evaluator: plain nested loops, no shared code with the
/// tensor kernels or the tape.
fn straight_line_forward(
    layers: &[LayerSpec],
    params: &ParamStore,
    input: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let mut act: Vec<Vec<f64>> = input.to_vec();
    let mut dense_idx = 0;
    for layer in layers {
        match layer {
            LayerSpec::Dense {
                in_dim, out_dim, ..
            } => {
                let w = params.get(&format!("dense{dense_idx}.w")).unwrap();
                let b = params.get(&format!("dense{dense_idx}.b")).unwrap();
                dense_idx += 1;
                let mut next = Vec::with_capacity(act.len());
                for row in &act {
                    let mut out = vec![0.0; *out_dim];
                    for (j, o) in out.iter_mut().enumerate() {
                        let mut acc = b.data()[j];
                        for i in 0..*in_dim {
                            acc += row[i] * w.data()[i * out_dim + j];
                        }
                        *o = acc;
                    }
                    next.push(out);
                }
                act = next;
            }
            LayerSpec::LeakyRelu { slope } => {
                for row in &mut act {
                    for v in row.iter_mut() {
                        if *v <= 0.0 {
                            *v *= slope;
                        }
                    }
                }
            }
            LayerSpec::Tanh => {
                for row in &mut act {
                    for v in row.iter_mut() {
                        *v = v.tanh();
                    }
                }
            }
            LayerSpec::Sigmoid => {
                for row in &mut act {
                    for v in row.iter_mut() {
                        *v = 1.0 / (1.0 + (-*v).exp());
                    }
                }
            }
        }
    }
    act
}

fn random_mlp(rng: &mut ChaCha12Rng, depth: usize, max_units: usize) -> (Vec<LayerSpec>, usize) {
    let mut layers = Vec::new();
    let mut dim = rng.gen_range(1..=max_units);
    let in_dim = dim;
    for d in 0..depth {
        let out = rng.gen_range(1..=max_units);
        layers.push(LayerSpec::Dense {
            in_dim: dim,
            out_dim: out,
            spectral_norm: false,
        });
        dim = out;
        if d + 1 < depth {
            match rng.gen_range(0..3) {
                0 => layers.push(LayerSpec::LeakyRelu { slope: 0.2 }),
                1 => layers.push(LayerSpec::Tanh),
                _ => layers.push(LayerSpec::Sigmoid),
            }
        } else {
            layers.push(LayerSpec::Tanh);
        }
    }
    (layers, in_dim)
}

fn tape_loss(layers: &[LayerSpec], params: &ParamStore, input: &Tensor) -> f64 {
    let mut tape = Tape::new(Precision::F64);
    let bound = bind_generator(&mut tape, params);
    let x = tape.leaf(input.clone());
    let out = forward_layers(&mut tape, layers, &bound, x).unwrap();
    let loss = tape.mean_all(out);
    tape.value(loss).scalar_value()
}

fn tape_grads(
    layers: &[LayerSpec],
    params: &ParamStore,
    input: &Tensor,
) -> Vec<(String, Tensor)> {
    let mut tape = Tape::new(Precision::F64);
    let bound = bind_generator(&mut tape, params);
    let x = tape.leaf(input.clone());
    let out = forward_layers(&mut tape, layers, &bound, x).unwrap();
    let loss = tape.mean_all(out);
    tape.backward(loss).unwrap();
    bound
        .leaves
        .iter()
        .map(|(name, &id)| (name.clone(), tape.grad(id).clone()))
        .collect()
}

/// Relative error of the autodiff gradient against central finite
/// differences (h = 1e-5) at 64-bit precision, norm-wise per parameter.
fn fd_relative_error(layers: &[LayerSpec], params: &ParamStore, input: &Tensor) -> f64 {
    let h = 1e-5;
    let grads = tape_grads(layers, params, input);
    let mut worst: f64 = 0.0;
    for (name, g) in grads {
        let mut fd = vec![0.0; g.numel()];
        for (idx, slot) in fd.iter_mut().enumerate() {
            let mut plus = params.clone();
            plus.get_mut(&name).unwrap().data_mut()[idx] += h;
            let mut minus = params.clone();
            minus.get_mut(&name).unwrap().data_mut()[idx] -= h;
            *slot = (tape_loss(layers, &plus, input) - tape_loss(layers, &minus, input))
                / (2.0 * h);
        }
        let diff: f64 = g
            .data()
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(diff / scale.max(1e-8));
    }
    worst
}

fn random_input(rng: &mut ChaCha12Rng, batch: usize, dim: usize) -> Tensor {
    Tensor::new(
        vec![batch, dim],
        (0..batch * dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
    )
    .unwrap()
}

#[test]
fn forward_matches_straight_line_oracle() {
    let mut rng = ChaCha12Rng::seed_from_u64(100);
    for _ in 0..20 {
        let (layers, in_dim) = random_mlp(&mut rng, 2, 16);
        let params = init_params(&layers, rng.gen());
        let batch = rng.gen_range(1..5);
        let input = random_input(&mut rng, batch, in_dim);
        let rows: Vec<Vec<f64>> = (0..batch)
            .map(|i| input.data()[i * in_dim..(i + 1) * in_dim].to_vec())
            .collect();
        let oracle = straight_line_forward(&layers, &params, &rows);

        let mut tape = Tape::new(Precision::F64);
        let bound = bind_generator(&mut tape, &params);
        let x = tape.leaf(input.clone());
        let out = forward_layers(&mut tape, &layers, &bound, x).unwrap();
        let got = tape.value(out);
        for (i, row) in oracle.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let g = got.data()[i * row.len() + j];
                assert!((g - v).abs() < 1e-10, "mismatch at ({i},{j}): {g} vs {v}");
            }
        }
    }
}

#[test]
fn three_layer_network_matches_finite_differences() {
    let mut rng = ChaCha12Rng::seed_from_u64(200);
    let (layers, in_dim) = random_mlp(&mut rng, 3, 16);
    let params = init_params(&layers, 7);
    let input = random_input(&mut rng, 3, in_dim);
    let err = fd_relative_error(&layers, &params, &input);
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn many_random_small_networks_pass_gradient_check() {
    let mut rng = ChaCha12Rng::seed_from_u64(300);
    for case in 0..30 {
        let depth = rng.gen_range(1..=3);
        let (layers, in_dim) = random_mlp(&mut rng, depth, 12);
        let params = init_params(&layers, rng.gen());
        let input = random_input(&mut rng, 2, in_dim);
        let err = fd_relative_error(&layers, &params, &input);
        assert!(err < 1e-4, "case {case}: relative error {err}");
    }
}

#[test]
fn backward_is_linear_in_the_loss() {
    // grad of (a*f + b*g) equals a*grad(f) + b*grad(g)
    let mut rng = ChaCha12Rng::seed_from_u64(400);
    let (layers, in_dim) = random_mlp(&mut rng, 2, 8);
    let params = init_params(&layers, 9);
    let input = random_input(&mut rng, 2, in_dim);
    let (a, b) = (2.5, -0.75);

    let grads_of = |wa: f64, wb: f64| -> Vec<(String, Tensor)> {
        let mut tape = Tape::new(Precision::F64);
        let bound = bind_generator(&mut tape, &params);
        let x = tape.leaf(input.clone());
        let out = forward_layers(&mut tape, &layers, &bound, x).unwrap();
        // f = mean(out), g = mean(tanh(out))
        let f = tape.mean_all(out);
        let t = tape.tanh(out);
        let g = tape.mean_all(t);
        let fa = tape.affine(f, wa, 0.0);
        let gb = tape.affine(g, wb, 0.0);
        let root = tape.add(fa, gb).unwrap();
        tape.backward(root).unwrap();
        bound
            .leaves
            .iter()
            .map(|(name, &id)| (name.clone(), tape.grad(id).clone()))
            .collect()
    };

    let combined = grads_of(a, b);
    let only_f = grads_of(1.0, 0.0);
    let only_g = grads_of(0.0, 1.0);
    for ((name, c), ((_, f), (_, g))) in combined.iter().zip(only_f.iter().zip(&only_g)) {
        for ((cv, fv), gv) in c.data().iter().zip(f.data()).zip(g.data()) {
            let expect = a * fv + b * gv;
            assert!(
                (cv - expect).abs() < 1e-12 * expect.abs().max(1.0),
                "{name}: {cv} vs {expect}"
            );
        }
    }
}

#[test]
fn forward_backward_bit_deterministic() {
    let mut rng = ChaCha12Rng::seed_from_u64(500);
    let (layers, in_dim) = random_mlp(&mut rng, 3, 16);
    let params = init_params(&layers, 11);
    let input = random_input(&mut rng, 4, in_dim);
    let a = tape_grads(&layers, &params, &input);
    let b = tape_grads(&layers, &params, &input);
    for ((_, x), (_, y)) in a.iter().zip(&b) {
        for (u, v) in x.data().iter().zip(y.data()) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }
}
