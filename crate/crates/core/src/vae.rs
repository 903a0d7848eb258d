//! Variational autoencoder and its label-conditioned variant.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::nn::{Adam, Mlp, ParamStore, Tape, Var};
use crate::rng::{derive_seed, seeded, standard_normal};
use crate::train::{make_batches, run_phase, EpochOutcome, TrainedGenerator, TrainingPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    /// Hidden widths of the encoder; the decoder mirrors them.
    pub encoder_widths: Vec<usize>,
    pub latent_dim: usize,
    pub recon_weight: f64,
    pub kl_weight: f64,
    pub conditional: bool,
    /// Latent draws per sample when estimating the reconstruction term.
    pub mc_samples: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            encoder_widths: vec![256, 128, 64],
            latent_dim: 32,
            recon_weight: 1.0,
            kl_weight: 1.0,
            conditional: false,
            mc_samples: 1,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.mc_samples == 0 {
            return Err(validation("latent dimension and Monte Carlo samples must be ≥ 1"));
        }
        if self.encoder_widths.iter().any(|&w| w == 0) {
            return Err(validation("layer widths must be positive"));
        }
        let ok = |w: f64| w > 0.0 && w.is_finite();
        if !ok(self.recon_weight) || !ok(self.kl_weight) {
            return Err(validation("loss weights must be positive"));
        }
        Ok(())
    }
}

/// KL divergence from `N(mu, diag(exp(log_var)))` to the standard normal.
pub fn kl_gaussian(mu: &[f64], log_var: &[f64]) -> f64 {
    assert_eq!(mu.len(), log_var.len());
    0.5 * mu
        .iter()
        .zip(log_var)
        .map(|(m, lv)| lv.exp() - 1.0 - lv + m * m)
        .sum::<f64>()
}

/// `mu + exp(log_var / 2) * eps`.
pub fn reparameterize(mu: &[f64], log_var: &[f64], eps: &[f64]) -> Vec<f64> {
    assert!(mu.len() == log_var.len() && mu.len() == eps.len());
    mu.iter()
        .zip(log_var)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect()
}

/// Loss components for one batch. `recon` is the per-sample sum of squared
/// errors averaged over the batch; `kl` likewise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaeLossParts {
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
}

impl VaeLossParts {
    pub fn new(recon: f64, kl: f64, cfg: &VaeConfig) -> Self {
        Self {
            recon,
            kl,
            total: cfg.recon_weight * recon + cfg.kl_weight * kl,
        }
    }
}

/// Encoder and decoder networks for a given feature and label width.
#[derive(Debug, Clone)]
pub struct VaeNet {
    pub encoder: Mlp,
    pub decoder: Mlp,
    latent_dim: usize,
    n_cond: usize,
}

struct LossVars {
    total: Var,
    recon: Var,
    kl: Var,
}

impl VaeNet {
    pub fn new(cfg: &VaeConfig, features: usize, n_cond: usize) -> Self {
        let dz = cfg.latent_dim;
        let mut enc = vec![features + n_cond];
        enc.extend(&cfg.encoder_widths);
        enc.push(2 * dz);
        let mut dec = vec![dz + n_cond];
        dec.extend(cfg.encoder_widths.iter().rev());
        dec.push(features);
        Self {
            encoder: Mlp::new("encoder", &enc),
            decoder: Mlp::new("decoder", &dec),
            latent_dim: dz,
            n_cond,
        }
    }

    pub fn init(&self, rng: &mut impl Rng) -> ParamStore {
        let mut store = ParamStore::new();
        self.encoder.init(&mut store, rng, 0.1);
        self.decoder.init(&mut store, rng, 1.0);
        store
    }

    fn with_cond(&self, tape: &mut Tape, x: Var, cond: Option<&Array2<f64>>) -> Var {
        match cond {
            Some(c) if self.n_cond > 0 => {
                let c = tape.leaf(c.clone());
                tape.concat_cols(x, c)
            }
            _ => x,
        }
    }

    fn loss_vars(
        &self,
        cfg: &VaeConfig,
        tape: &mut Tape,
        store: &ParamStore,
        x: &Array2<f64>,
        cond: Option<&Array2<f64>>,
        eps: &[Array2<f64>],
    ) -> (LossVars, crate::nn::Bound) {
        let p = store.bind(tape);
        let n = x.nrows() as f64;
        let dz = self.latent_dim;
        let xv = tape.leaf(x.clone());
        let inp = self.with_cond(tape, xv, cond);
        let h = self.encoder.forward(tape, &p, inp);
        let mu = tape.slice_cols(h, 0, dz);
        let lv = tape.slice_cols(h, dz, 2 * dz);

        let e = tape.exp(lv);
        let t = tape.sub(e, lv);
        let t = tape.add_scalar(t, -1.0);
        let mu2 = tape.square(mu);
        let t = tape.add(t, mu2);
        let s = tape.sum(t);
        let kl = tape.scale(s, 0.5 / n);

        let half = tape.scale(lv, 0.5);
        let std = tape.exp(half);
        let mut recon: Option<Var> = None;
        for draw in eps {
            let ev = tape.leaf(draw.clone());
            let noise = tape.mul(std, ev);
            let z = tape.add(mu, noise);
            let zin = self.with_cond(tape, z, cond);
            let xhat = self.decoder.forward(tape, &p, zin);
            let diff = tape.sub(xhat, xv);
            let sq = tape.square(diff);
            let s = tape.sum(sq);
            let r = tape.scale(s, 1.0 / (n * eps.len() as f64));
            recon = Some(match recon {
                Some(acc) => tape.add(acc, r),
                None => r,
            });
        }
        let recon = recon.expect("at least one latent draw");
        let a = tape.scale(recon, cfg.recon_weight);
        let b = tape.scale(kl, cfg.kl_weight);
        let total = tape.add(a, b);
        (LossVars { total, recon, kl }, p)
    }

    /// Batch loss for fixed latent noise draws (`eps[m]` is `n × latent_dim`).
    pub fn loss(
        &self,
        cfg: &VaeConfig,
        store: &ParamStore,
        x: &Array2<f64>,
        cond: Option<&Array2<f64>>,
        eps: &[Array2<f64>],
    ) -> VaeLossParts {
        let mut tape = Tape::new();
        let (v, _) = self.loss_vars(cfg, &mut tape, store, x, cond, eps);
        VaeLossParts {
            recon: tape.scalar(v.recon),
            kl: tape.scalar(v.kl),
            total: tape.scalar(v.total),
        }
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_gradients(
        &self,
        cfg: &VaeConfig,
        store: &ParamStore,
        x: &Array2<f64>,
        cond: Option<&Array2<f64>>,
        eps: &[Array2<f64>],
    ) -> (VaeLossParts, BTreeMap<String, Array2<f64>>) {
        let mut tape = Tape::new();
        let (v, p) = self.loss_vars(cfg, &mut tape, store, x, cond, eps);
        let grads = tape.backward(v.total);
        let mut out = BTreeMap::new();
        for (name, _) in store.params() {
            if let Some(g) = grads.get(p.var(name)) {
                out.insert(name.clone(), g.clone());
            }
        }
        let parts = VaeLossParts {
            recon: tape.scalar(v.recon),
            kl: tape.scalar(v.kl),
            total: tape.scalar(v.total),
        };
        (parts, out)
    }

    /// Decodes latent codes into feature space (unclamped).
    pub fn decode(&self, store: &ParamStore, z: &Array2<f64>, cond: Option<&Array2<f64>>) -> Array2<f64> {
        let inp = match cond {
            Some(c) if self.n_cond > 0 => ndarray::concatenate![Axis(1), z.view(), c.view()],
            _ => z.clone(),
        };
        self.decoder.eval(store, &inp)
    }
}

/// Initial weights, with the decoder's output bias at the training feature
/// means so the decoder starts at the data's center.
pub(crate) fn init(cfg: &VaeConfig, feature_means: &[f64], n_cond: usize, rng: &mut impl Rng) -> ParamStore {
    let net = VaeNet::new(cfg, feature_means.len(), n_cond);
    let mut store = net.init(rng);
    net.decoder.set_output_bias(&mut store, feature_means);
    store
}

fn n_cond_of(g: &TrainedGenerator) -> usize {
    g.group_levels.as_ref().map_or(0, |l| l.len().saturating_sub(1))
}

pub(crate) fn fit(
    cfg: &VaeConfig,
    g: &mut TrainedGenerator,
    x: &Array2<f64>,
    cond: Option<&Array2<f64>>,
    policy: &TrainingPolicy,
    phase: &str,
) -> Result<()> {
    let net = VaeNet::new(cfg, x.ncols(), n_cond_of(g));
    let mut rng = seeded(derive_seed(policy.seed, &[1, g.training_log.phases.len() as u64]));
    let mut opt = Adam::new(policy.adam);
    let n = x.nrows();
    run_phase(policy, phase, &mut g.params, &mut g.training_log, |store| {
        let mut sums = [0.0; 3];
        for batch in make_batches(n, policy.batch_fraction, &mut rng) {
            let xb = x.select(Axis(0), &batch);
            let cb = cond.map(|c| c.select(Axis(0), &batch));
            let eps: Vec<Array2<f64>> = (0..cfg.mc_samples)
                .map(|_| standard_normal(&mut rng, batch.len(), cfg.latent_dim))
                .collect();
            let mut tape = Tape::new();
            let (v, p) = net.loss_vars(cfg, &mut tape, store, &xb, cb.as_ref(), &eps);
            let grads = tape.backward(v.total);
            opt.step(store, &p, &grads, |_| true);
            let w = batch.len() as f64;
            sums[0] += w * tape.scalar(v.total);
            sums[1] += w * tape.scalar(v.recon);
            sums[2] += w * tape.scalar(v.kl);
        }
        let [total, recon, kl] = sums.map(|s| s / n as f64);
        Ok(EpochOutcome {
            monitored: total,
            losses: BTreeMap::from([
                ("total".to_owned(), total),
                ("recon".to_owned(), recon),
                ("kl".to_owned(), kl),
            ]),
        })
    })
}

pub(crate) fn sample(
    cfg: &VaeConfig,
    g: &TrainedGenerator,
    n: usize,
    cond: Option<&Array2<f64>>,
    seed: u64,
) -> Array2<f64> {
    let net = VaeNet::new(cfg, g.feature_count(), n_cond_of(g));
    let mut rng = seeded(seed);
    let z = standard_normal(&mut rng, n, cfg.latent_dim);
    if n == 0 {
        return Array2::zeros((0, g.feature_count()));
    }
    net.decode(&g.params, &z, cond)
}
