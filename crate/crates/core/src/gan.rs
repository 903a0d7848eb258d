//! Adversarial generators: the original GAN, WGAN with weight clipping and
//! WGAN with a gradient penalty.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::nn::{Adam, Bound, Mlp, ParamStore, Tape, Var};
use crate::rng::{derive_seed, seeded, standard_normal};
use crate::train::{
    batch_size, make_batches, run_phase, EpochOutcome, TrainedGenerator, TrainingPolicy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanVariant {
    Gan,
    Wgan,
    Wgangp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    pub variant: GanVariant,
    pub noise_dim: usize,
    pub generator_widths: Vec<usize>,
    pub critic_widths: Vec<usize>,
    /// Critic updates per generator update.
    pub n_critic: usize,
    /// Weight-clipping bound (WGAN).
    pub clip: f64,
    /// Gradient-penalty weight (WGAN-GP).
    pub lambda_gp: f64,
}

impl GanConfig {
    pub fn new(variant: GanVariant) -> Self {
        Self {
            variant,
            noise_dim: 32,
            generator_widths: vec![128, 256],
            critic_widths: vec![256, 128],
            n_critic: if variant == GanVariant::Gan { 1 } else { 5 },
            clip: 0.01,
            lambda_gp: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_critic == 0 || self.noise_dim == 0 {
            return Err(validation("n_critic and noise_dim must be ≥ 1"));
        }
        if !(self.clip > 0.0) || !(self.lambda_gp >= 0.0) {
            return Err(validation("clip must be > 0 and the penalty weight ≥ 0"));
        }
        if self.generator_widths.iter().chain(&self.critic_widths).any(|&w| w == 0) {
            return Err(validation("layer widths must be positive"));
        }
        Ok(())
    }
}

/// Discriminator and generator losses from discriminator outputs.
///
/// For [`GanVariant::Gan`] the outputs are probabilities and the generator
/// uses the non-saturating loss `−mean(ln d_fake)`. For the Wasserstein
/// variants they are unconstrained critic scores.
pub fn gan_losses(d_real: &[f64], d_fake: &[f64], variant: GanVariant) -> Result<(f64, f64)> {
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&x| f(x)).sum::<f64>() / v.len() as f64;
    match variant {
        GanVariant::Gan => {
            if d_real.iter().chain(d_fake).any(|&p| !(p > 0.0 && p < 1.0)) {
                return Err(validation("discriminator outputs must lie in (0, 1)"));
            }
            let loss_d = -mean(d_real, &|p| p.ln()) - mean(d_fake, &|p| (1.0 - p).ln());
            let loss_g = -mean(d_fake, &|p| p.ln());
            Ok((loss_d, loss_g))
        }
        GanVariant::Wgan | GanVariant::Wgangp => {
            let fake = mean(d_fake, &|x| x);
            Ok((fake - mean(d_real, &|x| x), -fake))
        }
    }
}

#[derive(Debug, Clone)]
pub struct GanNet {
    pub generator: Mlp,
    pub critic: Mlp,
}

impl GanNet {
    pub fn new(cfg: &GanConfig, features: usize) -> Self {
        let mut g = vec![cfg.noise_dim];
        g.extend(&cfg.generator_widths);
        g.push(features);
        let mut c = vec![features];
        c.extend(&cfg.critic_widths);
        c.push(1);
        Self {
            generator: Mlp::new("generator", &g),
            critic: Mlp::new("critic", &c),
        }
    }
}

fn penalty_on_tape(
    critic: &Mlp,
    tape: &mut Tape,
    p: &Bound,
    x_real: &Array2<f64>,
    x_fake: &Array2<f64>,
    eps: &[f64],
    lambda: f64,
) -> Var {
    let mut mixed = x_fake.clone();
    for (i, mut row) in mixed.axis_iter_mut(Axis(0)).enumerate() {
        let e = eps[i];
        row.zip_mut_with(&x_real.row(i), |f, r| *f = e * r + (1.0 - e) * *f);
    }
    let xv = tape.leaf(mixed);
    let g = critic.input_gradient(tape, p, xv);
    let sq = tape.square(g);
    let s = tape.sum_cols(sq);
    // keeps the square root differentiable at a zero gradient
    let s = tape.add_scalar(s, 1e-12);
    let norm = tape.sqrt(s);
    let dev = tape.add_scalar(norm, -1.0);
    let dev2 = tape.square(dev);
    let m = tape.mean(dev2);
    tape.scale(m, lambda)
}

/// Gradient penalty `λ · mean((‖∇D(x̂)‖₂ − 1)²)` at `x̂ = ε·x_real + (1−ε)·x_fake`
/// with one `ε ~ Uniform(0, 1)` per sample.
pub fn gradient_penalty(
    critic: &Mlp,
    store: &ParamStore,
    x_real: &Array2<f64>,
    x_fake: &Array2<f64>,
    lambda: f64,
    seed: u64,
) -> f64 {
    let mut rng = seeded(seed);
    let eps: Vec<f64> = (0..x_real.nrows()).map(|_| rng.random::<f64>()).collect();
    gradient_penalty_at(critic, store, x_real, x_fake, &eps, lambda).0
}

/// Penalty for given mixing weights, with its gradient for each critic
/// parameter.
pub fn gradient_penalty_at(
    critic: &Mlp,
    store: &ParamStore,
    x_real: &Array2<f64>,
    x_fake: &Array2<f64>,
    eps: &[f64],
    lambda: f64,
) -> (f64, BTreeMap<String, Array2<f64>>) {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let gp = penalty_on_tape(critic, &mut tape, &p, x_real, x_fake, eps, lambda);
    let grads = tape.backward(gp);
    let out = critic
        .param_names()
        .into_iter()
        .filter_map(|n| grads.get(p.var(&n)).map(|g| (n, g.clone())))
        .collect();
    (tape.scalar(gp), out)
}

pub(crate) fn init(cfg: &GanConfig, feature_means: &[f64], rng: &mut impl Rng) -> ParamStore {
    let net = GanNet::new(cfg, feature_means.len());
    let mut store = ParamStore::new();
    net.generator.init(&mut store, rng, 1.0);
    net.generator.set_output_bias(&mut store, feature_means);
    net.critic.init(&mut store, rng, 1.0);
    if cfg.variant == GanVariant::Wgan {
        clip_critic(&mut store, cfg.clip);
    }
    store
}

fn clip_critic(store: &mut ParamStore, c: f64) -> f64 {
    let mut max_abs: f64 = 0.0;
    for (name, value) in store.params_mut() {
        if name.starts_with("critic.") {
            value.mapv_inplace(|v| v.clamp(-c, c));
            max_abs = value.iter().fold(max_abs, |m, v| m.max(v.abs()));
        }
    }
    max_abs
}

/// Critic loss terms on the tape: (loss without penalty, loss used for the update).
#[allow(clippy::too_many_arguments)]
fn critic_loss(
    cfg: &GanConfig,
    net: &GanNet,
    tape: &mut Tape,
    p: &Bound,
    xr: &Array2<f64>,
    fake: &Array2<f64>,
    rng: &mut impl Rng,
) -> (Var, Var) {
    let real_v = tape.leaf(xr.clone());
    let fake_v = tape.leaf(fake.clone());
    let d_real = net.critic.forward(tape, p, real_v);
    let d_fake = net.critic.forward(tape, p, fake_v);
    let base = match cfg.variant {
        GanVariant::Gan => {
            let nr = tape.neg(d_real);
            let a = tape.softplus(nr);
            let a = tape.mean(a);
            let b = tape.softplus(d_fake);
            let b = tape.mean(b);
            tape.add(a, b)
        }
        GanVariant::Wgan | GanVariant::Wgangp => {
            let a = tape.mean(d_fake);
            let b = tape.mean(d_real);
            tape.sub(a, b)
        }
    };
    if cfg.variant == GanVariant::Wgangp {
        let eps: Vec<f64> = (0..xr.nrows()).map(|_| rng.random::<f64>()).collect();
        let gp = penalty_on_tape(&net.critic, tape, p, xr, fake, &eps, cfg.lambda_gp);
        let total = tape.add(base, gp);
        (base, total)
    } else {
        (base, base)
    }
}

pub(crate) fn fit(
    cfg: &GanConfig,
    g: &mut TrainedGenerator,
    x: &Array2<f64>,
    policy: &TrainingPolicy,
    phase: &str,
) -> Result<()> {
    let net = GanNet::new(cfg, x.ncols());
    let mut rng = seeded(derive_seed(policy.seed, &[2, g.training_log.phases.len() as u64]));
    let mut opt_critic = Adam::new(policy.adam);
    let mut opt_gen = Adam::new(policy.adam);
    let n = x.nrows();
    let gen_batch = batch_size(n, policy.batch_fraction);
    run_phase(policy, phase, &mut g.params, &mut g.training_log, |store| {
        let batches = make_batches(n, policy.batch_fraction, &mut rng);
        let iterations = (batches.len() / cfg.n_critic).max(1);
        let mut cursor = 0;
        let (mut critic_steps, mut gen_steps) = (0usize, 0usize);
        let (mut sum_d, mut sum_base, mut sum_g) = (0.0, 0.0, 0.0);
        let mut max_abs: f64 = 0.0;
        for _ in 0..iterations {
            for _ in 0..cfg.n_critic {
                let batch = &batches[cursor % batches.len()];
                cursor += 1;
                let xr = x.select(Axis(0), batch);
                let z = standard_normal(&mut rng, batch.len(), cfg.noise_dim);
                let fake = net.generator.eval(store, &z);
                let mut tape = Tape::new();
                let p = store.bind(&mut tape);
                let (base, total) = critic_loss(cfg, &net, &mut tape, &p, &xr, &fake, &mut rng);
                let grads = tape.backward(total);
                opt_critic.step(store, &p, &grads, |name| name.starts_with("critic."));
                if cfg.variant == GanVariant::Wgan {
                    max_abs = max_abs.max(clip_critic(store, cfg.clip));
                }
                critic_steps += 1;
                sum_d += tape.scalar(total);
                sum_base += tape.scalar(base);
            }
            let z = standard_normal(&mut rng, gen_batch, cfg.noise_dim);
            let mut tape = Tape::new();
            let p = store.bind(&mut tape);
            let zv = tape.leaf(z);
            let fake = net.generator.forward(&mut tape, &p, zv);
            let d_fake = net.critic.forward(&mut tape, &p, fake);
            let loss_g = match cfg.variant {
                GanVariant::Gan => {
                    let nf = tape.neg(d_fake);
                    let s = tape.softplus(nf);
                    tape.mean(s)
                }
                _ => {
                    let m = tape.mean(d_fake);
                    tape.neg(m)
                }
            };
            let grads = tape.backward(loss_g);
            opt_gen.step(store, &p, &grads, |name| name.starts_with("generator."));
            gen_steps += 1;
            sum_g += tape.scalar(loss_g);
        }
        let loss_d = sum_d / critic_steps as f64;
        let loss_g = sum_g / gen_steps as f64;
        let wasserstein = -sum_base / critic_steps as f64;
        let mut losses = BTreeMap::from([
            ("loss_d".to_owned(), loss_d),
            ("loss_g".to_owned(), loss_g),
            ("critic_steps".to_owned(), critic_steps as f64),
            ("generator_steps".to_owned(), gen_steps as f64),
        ]);
        if cfg.variant == GanVariant::Wgan {
            losses.insert("max_abs_critic_param".to_owned(), max_abs);
        }
        let monitored = match cfg.variant {
            GanVariant::Gan => loss_g,
            _ => wasserstein,
        };
        Ok(EpochOutcome { monitored, losses })
    })
}

pub(crate) fn sample(cfg: &GanConfig, g: &TrainedGenerator, n: usize, seed: u64) -> Array2<f64> {
    if n == 0 {
        return Array2::zeros((0, g.feature_count()));
    }
    let net = GanNet::new(cfg, g.feature_count());
    let mut rng = seeded(seed);
    let z = standard_normal(&mut rng, n, cfg.noise_dim);
    net.generator.eval(&g.params, &z)
}
