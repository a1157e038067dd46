//! The training loop: non-saturating GAN objective, alternating 1:1 updates,
//! and the three stochasticity regimes (deterministic full-batch, mini-batch,
//! latent-noise injection).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{DomainTag, LatentSet, SampleSet};
use crate::error::{Error, Result};
use crate::eval;
use crate::network::{
    self, bind_discriminator, bind_generator, forward_layers, DiscriminatorSpec, GeneratorSpec,
    ParamStore, PROB_EPS,
};
use crate::optimizer::{adam_step, ema_update, AdamConfig, AdamState, EmaState};
use crate::tensor::{Precision, Tensor};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Data-set size n.
    pub n: usize,
    /// Latent-set size k.
    pub k: usize,
    /// Mini-batch size m; m == n == k is the deterministic regime.
    pub m: usize,
    pub latent_dim: usize,
    /// sigma^2 of the latent perturbation; 0 disables it.
    pub noise_variance: f64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub ema_decay: f64,
    pub max_iters: u64,
    /// Stop-rule window in iterations; 0 disables the rule.
    pub convergence_window: u64,
    /// Relative-change threshold of the stop rule.
    pub convergence_tol: f64,
    pub seed_data: u64,
    pub seed_latent: u64,
    pub seed_train: u64,
    /// Checkpoint cadence in iterations; 0 disables checkpoints.
    pub checkpoint_every: u64,
    /// Both stochasticity sources at once is refused unless forced; the
    /// regimes are studied in isolation.
    pub force_combined_stochasticity: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            n: 512,
            k: 512,
            m: 512,
            latent_dim: 16,
            noise_variance: 0.0,
            alpha: adam.alpha,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            ema_decay: 0.999,
            max_iters: 20_000,
            convergence_window: 500,
            convergence_tol: 0.02,
            seed_data: 1,
            seed_latent: 2,
            seed_train: 3,
            checkpoint_every: 0,
            force_combined_stochasticity: false,
        }
    }
}

/// Which stochasticity sources a config enables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StochasticityRegime {
    pub minibatch_enabled: bool,
    pub latent_noise_enabled: bool,
}

impl TrainConfig {
    pub fn regime(&self) -> StochasticityRegime {
        StochasticityRegime {
            minibatch_enabled: self.m < self.n,
            latent_noise_enabled: self.noise_variance > 0.0,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            alpha: self.alpha,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m > self.n {
            return Err(Error::Config(format!(
                "need 1 <= m <= n, got m={} n={}",
                self.m, self.n
            )));
        }
        if self.m > self.k {
            return Err(Error::Config(format!(
                "need m <= k, got m={} k={}",
                self.m, self.k
            )));
        }
        if self.k % self.m != 0 {
            return Err(Error::Config(format!(
                "m={} must divide k={} for the without-replacement latent schedule",
                self.m, self.k
            )));
        }
        if self.m == self.n && self.noise_variance == 0.0 && self.k != self.n {
            return Err(Error::Config(format!(
                "deterministic regime requires k == n, got k={} n={}",
                self.k, self.n
            )));
        }
        if self.noise_variance < 0.0 {
            return Err(Error::Config("noise variance must be >= 0".into()));
        }
        let regime = self.regime();
        if regime.minibatch_enabled
            && regime.latent_noise_enabled
            && !self.force_combined_stochasticity
        {
            return Err(Error::Config(
                "mini-batch and latent-noise stochasticity are studied in isolation; \
                 set force_combined_stochasticity to combine them"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Epoch-wise without-replacement cursor over the latent set.
#[derive(Clone, Debug)]
pub struct LatentCursor {
    perm: Vec<usize>,
    pos: usize,
}

impl LatentCursor {
    pub fn new(k: usize) -> Self {
        LatentCursor {
            perm: (0..k).collect(),
            pos: k, // force a shuffle on first stochastic draw
        }
    }

    fn next_batch(&mut self, m: usize, rng: &mut ChaCha12Rng) -> Vec<usize> {
        let k = self.perm.len();
        if self.pos + m > k {
            self.perm.shuffle(rng);
            self.pos = 0;
        }
        let out = self.perm[self.pos..self.pos + m].to_vec();
        self.pos += m;
        out
    }
}

/// Draw one mini-batch of data and latent indices. In the deterministic
/// regime (m == n == k) both are the full sets in fixed index order and no
/// RNG is consumed; otherwise data indices are i.i.d. uniform with
/// replacement and latent indices come from the epoch permutation.
pub fn sample_minibatch(
    n: usize,
    k: usize,
    m: usize,
    rng: &mut ChaCha12Rng,
    cursor: &mut LatentCursor,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if m > n || m > k {
        return Err(Error::InvalidArgument(format!(
            "batch size {m} exceeds n={n} or k={k}"
        )));
    }
    if m == n && m == k {
        return Ok(((0..n).collect(), (0..k).collect()));
    }
    let data_idx: Vec<usize> = (0..m).map(|_| rng.gen_range(0..n)).collect();
    let latent_idx = cursor.next_batch(m, rng);
    Ok((data_idx, latent_idx))
}

fn sample_latent_batch(
    k: usize,
    m: usize,
    rng: &mut ChaCha12Rng,
    cursor: &mut LatentCursor,
) -> Vec<usize> {
    if m == k {
        (0..k).collect()
    } else {
        cursor.next_batch(m, rng)
    }
}

/// z_hat = z + eps with eps ~ Normal(0, sigma^2 I). sigma^2 = 0 is the
/// identity and consumes no RNG.
pub fn perturb_latent(z_batch: &Tensor, sigma2: f64, rng: &mut ChaCha12Rng) -> Tensor {
    if sigma2 == 0.0 {
        return z_batch.clone();
    }
    let sigma = sigma2.sqrt();
    let mut out = z_batch.clone();
    for v in out.data_mut() {
        let eps: f64 = rng.sample(StandardNormal);
        *v += sigma * eps;
    }
    out
}

/// -(mean log p_real + mean log(1 - p_fake)). Inputs must lie in (0, 1).
pub fn d_loss(p_real: &[f64], p_fake: &[f64]) -> Result<f64> {
    check_probs("d_loss", p_real)?;
    check_probs("d_loss", p_fake)?;
    let mr = p_real.iter().map(|p| p.ln()).sum::<f64>() / p_real.len() as f64;
    let mf = p_fake.iter().map(|p| (1.0 - p).ln()).sum::<f64>() / p_fake.len() as f64;
    Ok(-(mr + mf))
}

/// Non-saturating generator loss: -mean log p_fake.
pub fn g_loss(p_fake: &[f64]) -> Result<f64> {
    check_probs("g_loss", p_fake)?;
    Ok(-(p_fake.iter().map(|p| p.ln()).sum::<f64>() / p_fake.len() as f64))
}

fn check_probs(op: &'static str, p: &[f64]) -> Result<()> {
    if let Some(&bad) = p.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::InvalidArgument(format!(
            "{op}: probability {bad} outside (0, 1); upstream clamp violated"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepLog {
    pub iteration: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    /// sigma_hat per spectrally normalized discriminator layer, in layer
    /// order, as seen by the D update of this iteration.
    pub sigmas: Vec<f64>,
}

pub struct TrainState {
    pub iteration: u64,
    pub g_spec: GeneratorSpec,
    pub d_spec: DiscriminatorSpec,
    pub g_params: ParamStore,
    pub d_params: ParamStore,
    pub g_adam: AdamState,
    pub d_adam: AdamState,
    pub ema: EmaState,
    pub cursor: LatentCursor,
    pub rng: ChaCha12Rng,
    pub precision: Precision,
}

const G_INIT_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;
const D_INIT_STREAM: u64 = 0x3C6E_F372_FE94_F82A;

impl TrainState {
    pub fn new(cfg: &TrainConfig, domain: DomainTag, precision: Precision) -> Self {
        let image_mode = matches!(domain, DomainTag::Image { .. });
        let g_spec = GeneratorSpec::mlp(cfg.latent_dim, domain.data_dim(), image_mode);
        let d_spec = DiscriminatorSpec::mlp(domain.data_dim());
        let g_params = network::init_params(&g_spec.layers, cfg.seed_train ^ G_INIT_STREAM);
        let d_params = network::init_params(&d_spec.layers, cfg.seed_train ^ D_INIT_STREAM);
        let g_adam = AdamState::new(cfg.adam_config(), &g_params);
        let d_adam = AdamState::new(cfg.adam_config(), &d_params);
        let ema = EmaState::new(cfg.ema_decay, &g_params);
        TrainState {
            iteration: 0,
            g_spec,
            d_spec,
            g_params,
            d_params,
            g_adam,
            d_adam,
            ema,
            cursor: LatentCursor::new(cfg.k),
            rng: ChaCha12Rng::seed_from_u64(cfg.seed_train),
            precision,
        }
    }
}

fn collect_grads(
    tape: &Tape,
    leaves: &BTreeMap<String, crate::autodiff::NodeId>,
) -> BTreeMap<String, Tensor> {
    leaves
        .iter()
        .map(|(name, &id)| (name.clone(), tape.grad(id).clone()))
        .collect()
}

/// One alternating update: D first (ascent via descent on the negated loss),
/// then G against the updated D, then the EMA shadow.
pub fn train_step(
    state: &mut TrainState,
    cfg: &TrainConfig,
    data: &SampleSet,
    latents: &LatentSet,
) -> Result<StepLog> {
    let p = state.precision;
    let iteration = state.iteration + 1;

    // ---- discriminator update ----
    let (x_idx, z_idx) = sample_minibatch(cfg.n, cfg.k, cfg.m, &mut state.rng, &mut state.cursor)?;
    let x_batch = data.samples().gather_rows(&x_idx)?;
    let z_raw = latents.latents().gather_rows(&z_idx)?;
    let z_batch = perturb_latent(&z_raw, cfg.noise_variance, &mut state.rng);
    // the fake batch enters the D step as a constant; no G gradients needed
    let fake = network::generator_forward(&state.g_spec, &state.g_params, &z_batch, p)?;

    let mut tape = Tape::new(p);
    let d_bound = bind_discriminator(&mut tape, &mut state.d_params, true)?;
    let xr = tape.leaf(x_batch);
    let xf = tape.leaf(fake);
    let pr_raw = forward_layers(&mut tape, &state.d_spec.layers, &d_bound, xr)?;
    let pf_raw = forward_layers(&mut tape, &state.d_spec.layers, &d_bound, xf)?;
    let pr = tape.clamp(pr_raw, PROB_EPS, 1.0 - PROB_EPS);
    let pf = tape.clamp(pf_raw, PROB_EPS, 1.0 - PROB_EPS);
    let log_pr = tape.log(pr)?;
    let mean_r = tape.mean_all(log_pr);
    let one_minus_pf = tape.affine(pf, -1.0, 1.0);
    let log_1mpf = tape.log(one_minus_pf)?;
    let mean_f = tape.mean_all(log_1mpf);
    let obj = tape.add(mean_r, mean_f)?;
    let d_loss_node = tape.affine(obj, -1.0, 0.0);
    let d_loss_val = tape.value(d_loss_node).scalar_value();
    if !d_loss_val.is_finite() {
        return Err(Error::TrainingAborted {
            iteration,
            detail: format!("non-finite discriminator loss {d_loss_val}"),
        });
    }
    tape.backward(d_loss_node)?;
    let d_grads = collect_grads(&tape, &d_bound.leaves);
    let sigmas = d_bound.sigmas.clone();
    drop(tape);
    adam_step(&mut state.d_adam, &mut state.d_params, &d_grads, p)?;

    // ---- generator update, against the updated discriminator ----
    let z_idx_g = sample_latent_batch(cfg.k, cfg.m, &mut state.rng, &mut state.cursor);
    let zg_raw = latents.latents().gather_rows(&z_idx_g)?;
    let zg = perturb_latent(&zg_raw, cfg.noise_variance, &mut state.rng);

    let mut tape = Tape::new(p);
    let g_bound = bind_generator(&mut tape, &state.g_params);
    let d_bound = bind_discriminator(&mut tape, &mut state.d_params, true)?;
    let zin = tape.leaf(zg);
    let x_hat = forward_layers(&mut tape, &state.g_spec.layers, &g_bound, zin)?;
    let p_raw = forward_layers(&mut tape, &state.d_spec.layers, &d_bound, x_hat)?;
    let p_fake = tape.clamp(p_raw, PROB_EPS, 1.0 - PROB_EPS);
    let log_pf = tape.log(p_fake)?;
    let mean_pf = tape.mean_all(log_pf);
    let g_loss_node = tape.affine(mean_pf, -1.0, 0.0);
    let g_loss_val = tape.value(g_loss_node).scalar_value();
    if !g_loss_val.is_finite() {
        return Err(Error::TrainingAborted {
            iteration,
            detail: format!("non-finite generator loss {g_loss_val}"),
        });
    }
    tape.backward(g_loss_node)?;
    let g_grads = collect_grads(&tape, &g_bound.leaves);
    drop(tape);
    adam_step(&mut state.g_adam, &mut state.g_params, &g_grads, p)?;

    ema_update(&mut state.ema, &state.g_params, p);
    state.iteration = iteration;
    Ok(StepLog {
        iteration,
        d_loss: d_loss_val,
        g_loss: g_loss_val,
        sigmas,
    })
}

/// Callbacks the experiment runner hooks into; all methods default to no-ops.
pub trait TrainObserver {
    fn on_step(&mut self, _log: &StepLog) -> Result<()> {
        Ok(())
    }
    fn on_checkpoint(&mut self, _state: &TrainState) -> Result<()> {
        Ok(())
    }
}

pub struct TrainOutcome {
    pub ema_params: ParamStore,
    pub g_params: ParamStore,
    pub d_params: ParamStore,
    pub g_spec: GeneratorSpec,
    pub history: Vec<StepLog>,
    pub iterations: u64,
    pub converged: bool,
}

/// Run train_step until max_iters or until the windowed stop rule fires:
/// the full-population mode-drop pixel average, sampled every
/// convergence_window iterations from the EMA generator, changes by less
/// than convergence_tol relative for two consecutive windows.
pub fn train(
    cfg: &TrainConfig,
    data: &SampleSet,
    latents: &LatentSet,
    precision: Precision,
    mut observer: Option<&mut dyn TrainObserver>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.len() != cfg.n {
        return Err(Error::Config(format!(
            "dataset has {} samples, config says n={}",
            data.len(),
            cfg.n
        )));
    }
    if latents.len() != cfg.k || latents.latent_dim() != cfg.latent_dim {
        return Err(Error::Config(format!(
            "latent set is {}x{}, config says k={} latent_dim={}",
            latents.len(),
            latents.latent_dim(),
            cfg.k,
            cfg.latent_dim
        )));
    }
    let mut state = TrainState::new(cfg, data.domain(), precision);
    let mut history = Vec::new();
    let mut last_metric: Option<f64> = None;
    let mut calm_windows = 0u32;
    let mut converged = false;

    while state.iteration < cfg.max_iters {
        let log = train_step(&mut state, cfg, data, latents)?;
        if let Some(obs) = observer.as_deref_mut() {
            obs.on_step(&log)?;
            if cfg.checkpoint_every > 0 && log.iteration % cfg.checkpoint_every == 0 {
                obs.on_checkpoint(&state)?;
            }
        }
        history.push(log);

        if cfg.convergence_window > 0 && state.iteration % cfg.convergence_window == 0 {
            let metric = eval::mode_drop_avg_full(
                &state.g_spec,
                state.ema.shadow(),
                latents,
                data,
                precision,
            )?;
            if let Some(prev) = last_metric {
                let rel = (metric - prev).abs() / prev.abs().max(1e-12);
                if rel < cfg.convergence_tol {
                    calm_windows += 1;
                } else {
                    calm_windows = 0;
                }
                if calm_windows >= 2 {
                    converged = true;
                }
            }
            last_metric = Some(metric);
            if converged {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        ema_params: state.ema.shadow().clone(),
        g_params: state.g_params,
        d_params: state.d_params,
        g_spec: state.g_spec,
        iterations: state.iteration,
        history,
        converged,
    })
}
