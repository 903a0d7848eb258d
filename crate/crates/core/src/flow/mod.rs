//! Normalizing flows with exact likelihoods: affine coupling (RealNVP),
//! actnorm + invertible mixing + coupling (GLOW), and masked autoregressive
//! flows (MAF).
//!
//! Layers are stored in the density direction: data `x` is mapped to a
//! standard-normal code `z`, accumulating `log |det ∂z/∂x|`. Sampling runs
//! the layers backwards.

mod made;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::nn::{from_nalgebra, to_nalgebra, Adam, Bound, Mlp, ParamStore, Tape, Var};
use crate::rng::{derive_seed, seeded, standard_normal};
use crate::train::{batch_size, make_batches, run_phase, EpochOutcome, TrainedGenerator, TrainingPolicy};

const LOG_SCALE_BOUND: f64 = 5.0;
const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;
const OUTPUT_GAIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowVariant {
    Realnvp,
    Glow,
    Maf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub variant: FlowVariant,
    pub n_blocks: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Minimum fraction of masked connections in MAF conditioners.
    pub mask_fraction: f64,
    pub validation_ratio: f64,
    pub batch_norm: bool,
}

impl FlowConfig {
    pub fn new(variant: FlowVariant) -> Self {
        Self {
            variant,
            n_blocks: 5,
            hidden_width: 256,
            hidden_layers: 2,
            mask_fraction: 0.30,
            validation_ratio: 0.15,
            batch_norm: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 || self.hidden_width == 0 || self.hidden_layers == 0 {
            return Err(validation("flow blocks, hidden width and hidden layers must be ≥ 1"));
        }
        if !(self.validation_ratio > 0.0 && self.validation_ratio < 1.0) {
            return Err(validation("validation ratio must be in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.mask_fraction) {
            return Err(validation("mask fraction must be in [0, 1)"));
        }
        Ok(())
    }

    /// Training/validation sizes for `n` samples.
    pub fn split_sizes(&self, n: usize) -> (usize, usize) {
        let val = (self.validation_ratio * n as f64).round() as usize;
        (n - val.min(n), val.min(n))
    }
}

/// Whether batch normalization uses batch statistics or running averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowMode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
enum Layer {
    ActNorm(String),
    InvLinear(String),
    Coupling {
        net: Mlp,
        transformed: Vec<usize>,
        conditioned: Vec<usize>,
        order: Vec<usize>,
    },
    Made {
        net: Mlp,
    },
    BatchNorm(String),
    Reverse,
}

impl Layer {
    fn kind(&self) -> &'static str {
        match self {
            Layer::ActNorm(_) => "actnorm",
            Layer::InvLinear(_) => "invertible_linear",
            Layer::Coupling { .. } => "coupling",
            Layer::Made { .. } => "made",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::Reverse => "reverse",
        }
    }
}

struct BatchStats {
    prefix: String,
    mean: Array2<f64>,
    var: Array2<f64>,
}

/// A stack of invertible layers for `dim` features, optionally conditioned
/// on `n_cond` label columns.
#[derive(Debug, Clone)]
pub struct Flow {
    layers: Vec<Layer>,
    dim: usize,
    n_cond: usize,
    cfg: FlowConfig,
}

fn bounded_log_scale(tape: &mut Tape, raw: Var) -> Var {
    let r = tape.scale(raw, 1.0 / LOG_SCALE_BOUND);
    let t = tape.tanh(r);
    tape.scale(t, LOG_SCALE_BOUND)
}

fn bounded(raw: f64) -> f64 {
    LOG_SCALE_BOUND * (raw / LOG_SCALE_BOUND).tanh()
}

fn with_labels(x: &Array2<f64>, cond: Option<&Array2<f64>>) -> Array2<f64> {
    match cond {
        Some(c) if c.ncols() > 0 => concatenate![Axis(1), x.view(), c.view()],
        _ => x.clone(),
    }
}

impl Flow {
    pub fn new(cfg: &FlowConfig, dim: usize, n_cond: usize) -> Self {
        let hidden = vec![cfg.hidden_width; cfg.hidden_layers];
        let mut layers = Vec::new();
        for k in 0..cfg.n_blocks {
            if cfg.variant == FlowVariant::Glow {
                layers.push(Layer::ActNorm(format!("block{k}.actnorm")));
                layers.push(Layer::InvLinear(format!("block{k}.mix")));
            }
            match cfg.variant {
                FlowVariant::Realnvp | FlowVariant::Glow => {
                    let (transformed, conditioned): (Vec<usize>, Vec<usize>) =
                        (0..dim).partition(|i| i % 2 == k % 2);
                    if !transformed.is_empty() {
                        let mut sizes = vec![conditioned.len() + n_cond];
                        sizes.extend(&hidden);
                        sizes.push(2 * transformed.len());
                        let cat: Vec<usize> = transformed.iter().chain(&conditioned).copied().collect();
                        let mut order = vec![0; dim];
                        for (pos, &j) in cat.iter().enumerate() {
                            order[j] = pos;
                        }
                        layers.push(Layer::Coupling {
                            net: Mlp::new(&format!("block{k}.coupling"), &sizes),
                            transformed,
                            conditioned,
                            order,
                        });
                    }
                }
                FlowVariant::Maf => {
                    let mut sizes = vec![dim + n_cond];
                    sizes.extend(&hidden);
                    sizes.push(2 * dim);
                    layers.push(Layer::Made {
                        net: Mlp::masked(&format!("block{k}.made"), &sizes),
                    });
                }
            }
            if k + 1 < cfg.n_blocks {
                if cfg.batch_norm {
                    layers.push(Layer::BatchNorm(format!("block{k}.bn")));
                }
                if cfg.variant == FlowVariant::Maf {
                    layers.push(Layer::Reverse);
                }
            }
        }
        Self {
            layers,
            dim,
            n_cond,
            cfg: cfg.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Layer kinds in density order.
    pub fn layer_kinds(&self) -> Vec<&'static str> {
        self.layers.iter().map(Layer::kind).collect()
    }

    /// Fresh parameters: near-identity conditioners, random-rotation mixing
    /// matrices and autoregressive masks.
    pub fn init(&self, rng: &mut impl Rng) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        let d = self.dim;
        for layer in &self.layers {
            match layer {
                Layer::ActNorm(p) => {
                    store.insert(format!("{p}.bias"), Array2::zeros((1, d)));
                    store.insert(format!("{p}.log_scale"), Array2::zeros((1, d)));
                    store.insert_buffer(format!("{p}.initialized"), Array2::zeros((1, 1)));
                }
                Layer::InvLinear(p) => {
                    store.insert(format!("{p}.w"), random_rotation(d, rng)?);
                }
                Layer::Coupling { net, .. } => net.init(&mut store, rng, OUTPUT_GAIN),
                Layer::Made { net, .. } => {
                    net.init(&mut store, rng, OUTPUT_GAIN);
                    let widths: Vec<usize> = net.layers[..net.layers.len() - 1]
                        .iter()
                        .map(|l| l.fan_out)
                        .collect();
                    let mut masks = made::made_masks(d, self.n_cond, &widths);
                    made::thin_to_fraction(&mut masks, self.cfg.mask_fraction, rng);
                    for (l, m) in net.layers.iter().zip(masks) {
                        store.insert_buffer(l.mask.clone().expect("masked layer"), m);
                    }
                }
                Layer::BatchNorm(p) => {
                    store.insert(format!("{p}.log_gamma"), Array2::zeros((1, d)));
                    store.insert(format!("{p}.beta"), Array2::zeros((1, d)));
                    store.insert_buffer(format!("{p}.running_mean"), Array2::zeros((1, d)));
                    store.insert_buffer(format!("{p}.running_var"), Array2::ones((1, d)));
                }
                Layer::Reverse => {}
            }
        }
        Ok(store)
    }

    fn cond_input(&self, tape: &mut Tape, x: Var, cond: Option<Var>) -> Var {
        match cond {
            Some(c) if self.n_cond > 0 => tape.concat_cols(x, c),
            _ => x,
        }
    }

    /// One layer in the density direction; returns the output and the
    /// per-sample log-determinant (`n × 1`), or `None` for volume-preserving
    /// permutations.
    fn layer_forward(
        &self,
        layer: &Layer,
        tape: &mut Tape,
        p: &Bound,
        x: Var,
        cond: Option<Var>,
        mode: FlowMode,
        stats: &mut Vec<BatchStats>,
    ) -> (Var, Option<Var>) {
        let n = tape.shape(x).0;
        match layer {
            Layer::ActNorm(pre) => {
                let shifted = tape.add_row(x, p.var(&format!("{pre}.bias")));
                let ls = p.var(&format!("{pre}.log_scale"));
                let scale = tape.exp(ls);
                let y = tape.mul_row(shifted, scale);
                let ld = tape.sum(ls);
                (y, Some(tape.broadcast_rows(ld, n)))
            }
            Layer::InvLinear(pre) => {
                let w = p.var(&format!("{pre}.w"));
                let y = tape.matmul(x, w);
                let ld = tape.log_abs_det(w);
                (y, Some(tape.broadcast_rows(ld, n)))
            }
            Layer::Coupling {
                net,
                transformed,
                conditioned,
                order,
            } => {
                let xb = tape.permute_cols(x, conditioned);
                let inp = self.cond_input(tape, xb, cond);
                let h = net.forward(tape, p, inp);
                let a = transformed.len();
                let raw = tape.slice_cols(h, 0, a);
                let shift = tape.slice_cols(h, a, 2 * a);
                let ls = bounded_log_scale(tape, raw);
                let xa = tape.permute_cols(x, transformed);
                let centred = tape.sub(xa, shift);
                let neg = tape.neg(ls);
                let inv_scale = tape.exp(neg);
                let za = tape.mul(centred, inv_scale);
                let full = tape.concat_cols(za, xb);
                let y = tape.permute_cols(full, order);
                let sum = tape.sum_cols(ls);
                (y, Some(tape.neg(sum)))
            }
            Layer::Made { net, .. } => {
                let d = self.dim;
                let inp = self.cond_input(tape, x, cond);
                let h = net.forward(tape, p, inp);
                let raw = tape.slice_cols(h, 0, d);
                let shift = tape.slice_cols(h, d, 2 * d);
                let ls = bounded_log_scale(tape, raw);
                let centred = tape.sub(x, shift);
                let neg = tape.neg(ls);
                let inv_scale = tape.exp(neg);
                let y = tape.mul(centred, inv_scale);
                let sum = tape.sum_cols(ls);
                (y, Some(tape.neg(sum)))
            }
            Layer::BatchNorm(pre) => {
                let (mean, var) = match mode {
                    FlowMode::Train => {
                        let mean = tape.mean_rows(x);
                        let mb = tape.broadcast_rows(mean, n);
                        let c = tape.sub(x, mb);
                        let sq = tape.square(c);
                        let var = tape.mean_rows(sq);
                        stats.push(BatchStats {
                            prefix: pre.clone(),
                            mean: tape.value(mean).clone(),
                            var: tape.value(var).clone(),
                        });
                        (mean, var)
                    }
                    FlowMode::Eval => (
                        p.var(&format!("{pre}.running_mean")),
                        p.var(&format!("{pre}.running_var")),
                    ),
                };
                let mb = tape.broadcast_rows(mean, n);
                let centred = tape.sub(x, mb);
                let ve = tape.add_scalar(var, BN_EPS);
                let inv_std = tape.powf(ve, -0.5);
                let normed = tape.mul_row(centred, inv_std);
                let lg = p.var(&format!("{pre}.log_gamma"));
                let gamma = tape.exp(lg);
                let scaled = tape.mul_row(normed, gamma);
                let y = tape.add_row(scaled, p.var(&format!("{pre}.beta")));
                let logv = tape.ln(ve);
                let half = tape.scale(logv, -0.5);
                let per_dim = tape.add(lg, half);
                let ld = tape.sum(per_dim);
                (y, Some(tape.broadcast_rows(ld, n)))
            }
            Layer::Reverse => {
                let rev: Vec<usize> = (0..self.dim).rev().collect();
                (tape.permute_cols(x, &rev), None)
            }
        }
    }

    fn forward_tape(
        &self,
        tape: &mut Tape,
        p: &Bound,
        x: Var,
        cond: Option<Var>,
        mode: FlowMode,
        stats: &mut Vec<BatchStats>,
    ) -> (Var, Var) {
        let n = tape.shape(x).0;
        let mut h = x;
        let mut logdet = tape.leaf(Array2::zeros((n, 1)));
        for layer in &self.layers {
            let (y, ld) = self.layer_forward(layer, tape, p, h, cond, mode, stats);
            h = y;
            if let Some(ld) = ld {
                logdet = tape.add(logdet, ld);
            }
        }
        (h, logdet)
    }

    /// Per-sample log-density on the tape.
    fn log_prob_tape(
        &self,
        tape: &mut Tape,
        p: &Bound,
        x: &Array2<f64>,
        cond: Option<&Array2<f64>>,
        mode: FlowMode,
        stats: &mut Vec<BatchStats>,
    ) -> Var {
        let xv = tape.leaf(x.clone());
        let cv = cond.map(|c| tape.leaf(c.clone()));
        let (z, logdet) = self.forward_tape(tape, p, xv, cv, mode, stats);
        let sq = tape.square(z);
        let ss = tape.sum_cols(sq);
        let base = tape.scale(ss, -0.5);
        let base = tape.add_scalar(base, -0.5 * self.dim as f64 * (2.0 * PI).ln());
        tape.add(base, logdet)
    }

    /// Maps data to codes with running batch-norm statistics. Returns the
    /// codes and `log |det ∂z/∂x|` per sample.
    pub fn normalize(
        &self,
        store: &ParamStore,
        x: &Array2<f64>,
        cond: Option<&Array2<f64>>,
    ) -> (Array2<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let xv = tape.leaf(x.clone());
        let cv = cond.map(|c| tape.leaf(c.clone()));
        let (z, ld) = self.forward_tape(&mut tape, &p, xv, cv, FlowMode::Eval, &mut Vec::new());
        (tape.value(z).clone(), tape.value(ld).column(0).to_vec())
    }

    /// Exact log-density of each row of `x`.
    pub fn log_prob(&self, store: &ParamStore, x: &Array2<f64>, cond: Option<&Array2<f64>>) -> Vec<f64> {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let lp = self.log_prob_tape(&mut tape, &p, x, cond, FlowMode::Eval, &mut Vec::new());
        tape.value(lp).column(0).to_vec()
    }

    /// Mean negative log-likelihood and its gradient for every parameter.
    pub fn nll_gradients(
        &self,
        store: &ParamStore,
        x: &Array2<f64>,
        cond: Option<&Array2<f64>>,
        mode: FlowMode,
    ) -> (f64, BTreeMap<String, Array2<f64>>) {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let lp = self.log_prob_tape(&mut tape, &p, x, cond, mode, &mut Vec::new());
        let m = tape.mean(lp);
        let nll = tape.neg(m);
        let grads = tape.backward(nll);
        let out = store
            .params()
            .filter_map(|(k, _)| grads.get(p.var(k)).map(|g| (k.clone(), g.clone())))
            .collect();
        (tape.scalar(nll), out)
    }

    /// Log-scale and shift produced by the conditioner of layer `index`
    /// (a coupling or autoregressive layer) for layer input `x`.
    pub fn conditioner(
        &self,
        store: &ParamStore,
        index: usize,
        x: &Array2<f64>,
        cond: Option<&Array2<f64>>,
    ) -> Option<(Array2<f64>, Array2<f64>)> {
        let (net, inp, width) = match &self.layers[index] {
            Layer::Coupling { net, conditioned, transformed, .. } => (
                net,
                with_labels(&x.select(Axis(1), conditioned), cond),
                transformed.len(),
            ),
            Layer::Made { net, .. } => (net, with_labels(x, cond), self.dim),
            _ => return None,
        };
        let h = net.eval(store, &inp);
        let ls = h.slice(s![.., ..width]).mapv(bounded);
        let t = h.slice(s![.., width..]).to_owned();
        Some((ls, t))
    }

    /// Inverse of the density direction: codes to data.
    pub fn generate_from(
        &self,
        store: &ParamStore,
        z: &Array2<f64>,
        cond: Option<&Array2<f64>>,
    ) -> Result<Array2<f64>> {
        let get = |k: String| -> &Array2<f64> {
            store
                .get(&k)
                .unwrap_or_else(|| panic!("flow parameter {k:?} missing"))
        };
        let mut y = z.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            y = match layer {
                Layer::Reverse => {
                    let rev: Vec<usize> = (0..self.dim).rev().collect();
                    y.select(Axis(1), &rev)
                }
                Layer::BatchNorm(pre) => {
                    let std = get(format!("{pre}.running_var")).mapv(|v| (v + BN_EPS).sqrt());
                    let gamma = get(format!("{pre}.log_gamma")).mapv(f64::exp);
                    ((&y - get(format!("{pre}.beta"))) / &gamma) * &std
                        + get(format!("{pre}.running_mean"))
                }
                Layer::ActNorm(pre) => {
                    let scale = get(format!("{pre}.log_scale")).mapv(f64::exp);
                    &y / &scale - get(format!("{pre}.bias"))
                }
                Layer::InvLinear(pre) => {
                    let w = to_nalgebra(get(format!("{pre}.w")));
                    let inv = w
                        .try_inverse()
                        .ok_or_else(|| Error::Numeric("mixing matrix is singular".into()))?;
                    y.dot(&from_nalgebra(&inv))
                }
                Layer::Coupling { transformed, .. } => {
                    let (ls, t) = self.conditioner(store, idx, &y, cond).expect("coupling layer");
                    let mut x = y.clone();
                    for (col, &j) in transformed.iter().enumerate() {
                        let v = &y.column(j) * &ls.column(col).mapv(f64::exp) + t.column(col);
                        x.column_mut(j).assign(&v);
                    }
                    x
                }
                Layer::Made { .. } => {
                    let mut x = Array2::zeros(y.dim());
                    for i in 0..self.dim {
                        let (ls, t) = self.conditioner(store, idx, &x, cond).expect("made layer");
                        let v = &y.column(i) * &ls.column(i).mapv(f64::exp) + t.column(i);
                        x.column_mut(i).assign(&v);
                    }
                    x
                }
            };
        }
        Ok(y)
    }

    /// Data-dependent actnorm initialization: each actnorm layer that has
    /// not been initialized is set so that its output on `x` has zero mean
    /// and unit standard deviation per feature.
    pub fn initialize_actnorm(&self, store: &mut ParamStore, x: &Array2<f64>, cond: Option<&Array2<f64>>) {
        let mut h = x.clone();
        for layer in &self.layers {
            if let Layer::ActNorm(pre) = layer {
                let flag = format!("{pre}.initialized");
                if store.get(&flag).is_some_and(|f| f[[0, 0]] == 0.0) {
                    let mean = h.mean_axis(Axis(0)).expect("non-empty batch");
                    let sd: Array1<f64> = h.std_axis(Axis(0), 0.0).mapv(|s| s.max(1e-6));
                    let bias = store.param_mut(&format!("{pre}.bias")).expect("actnorm bias");
                    bias.row_mut(0).assign(&mean.mapv(|m| -m));
                    let ls = store.param_mut(&format!("{pre}.log_scale")).expect("actnorm scale");
                    ls.row_mut(0).assign(&sd.mapv(|s| -s.ln()));
                    store.buffer_mut(&flag).expect("flag")[[0, 0]] = 1.0;
                }
            }
            let mut tape = Tape::new();
            let p = store.bind(&mut tape);
            let xv = tape.leaf(h.clone());
            let cv = cond.map(|c| tape.leaf(c.clone()));
            let (y, _) = self.layer_forward(layer, &mut tape, &p, xv, cv, FlowMode::Train, &mut Vec::new());
            h = tape.value(y).clone();
        }
    }
}

/// Orthogonal matrix from the QR decomposition of a Gaussian matrix, with
/// column signs fixed so the draw is uniform over rotations/reflections.
pub(crate) fn random_rotation(d: usize, rng: &mut impl Rng) -> Result<Array2<f64>> {
    let g = to_nalgebra(&standard_normal(rng, d, d));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if q.determinant().abs() < 1e-12 {
        return Err(Error::Numeric("random mixing matrix is singular; reinitialize".into()));
    }
    Ok(from_nalgebra(&q))
}

pub(crate) fn init(cfg: &FlowConfig, dim: usize, n_cond: usize, rng: &mut impl Rng) -> Result<ParamStore> {
    Flow::new(cfg, dim, n_cond).init(rng)
}

fn n_cond_of(g: &TrainedGenerator) -> usize {
    g.group_levels.as_ref().map_or(0, |l| l.len().saturating_sub(1))
}

/// Batches of at least two samples, since batch statistics need two rows.
fn batches_for(n: usize, fraction: f64, batch_norm: bool, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut batches = make_batches(n, fraction, rng);
    if batch_norm && n >= 2 {
        if batch_size(n, fraction) == 1 {
            let flat = batches.concat();
            batches = flat.chunks(2).map(<[usize]>::to_vec).collect();
        }
        if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
            let last = batches.pop().expect("non-empty");
            batches.last_mut().expect("non-empty").extend(last);
        }
    }
    batches
}

pub(crate) fn fit(
    cfg: &FlowConfig,
    g: &mut TrainedGenerator,
    x: &Array2<f64>,
    cond: Option<&Array2<f64>>,
    policy: &TrainingPolicy,
    phase: &str,
) -> Result<()> {
    let n = x.nrows();
    let (n_train, n_val) = cfg.split_sizes(n);
    if n_val < 2 || n_train < 2 {
        return Err(validation(format!(
            "{n} samples are too few for a {} validation split (need ≥ 2 on each side)",
            cfg.validation_ratio
        )));
    }
    let flow = Flow::new(cfg, x.ncols(), n_cond_of(g));
    let mut rng = seeded(derive_seed(policy.seed, &[3, g.training_log.phases.len() as u64]));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (train_idx, val_idx) = order.split_at(n_train);
    let xt = x.select(Axis(0), train_idx);
    let xv = x.select(Axis(0), val_idx);
    let ct = cond.map(|c| c.select(Axis(0), train_idx));
    let cv = cond.map(|c| c.select(Axis(0), val_idx));

    let first: Vec<usize> = batches_for(n_train, policy.batch_fraction, cfg.batch_norm, &mut rng)
        .swap_remove(0);
    flow.initialize_actnorm(
        &mut g.params,
        &xt.select(Axis(0), &first),
        ct.as_ref().map(|c| c.select(Axis(0), &first)).as_ref(),
    );

    let mut opt = Adam::new(policy.adam);
    run_phase(policy, phase, &mut g.params, &mut g.training_log, |store| {
        let mut sum = 0.0;
        for batch in batches_for(n_train, policy.batch_fraction, cfg.batch_norm, &mut rng) {
            let xb = xt.select(Axis(0), &batch);
            let cb = ct.as_ref().map(|c| c.select(Axis(0), &batch));
            let mut tape = Tape::new();
            let p = store.bind(&mut tape);
            let mut stats = Vec::new();
            let lp = flow.log_prob_tape(&mut tape, &p, &xb, cb.as_ref(), FlowMode::Train, &mut stats);
            let m = tape.mean(lp);
            let nll = tape.neg(m);
            let grads = tape.backward(nll);
            opt.step(store, &p, &grads, |_| true);
            for st in stats {
                for (name, batch_value) in [("running_mean", st.mean), ("running_var", st.var)] {
                    let buf = store
                        .buffer_mut(&format!("{}.{name}", st.prefix))
                        .expect("batch-norm buffer");
                    buf.zip_mut_with(&batch_value, |r, b| {
                        *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b
                    });
                }
            }
            sum += batch.len() as f64 * tape.scalar(nll);
        }
        let train_nll = sum / n_train as f64;
        let lp = flow.log_prob(store, &xv, cv.as_ref());
        let val_nll = -lp.iter().sum::<f64>() / lp.len() as f64;
        Ok(EpochOutcome {
            monitored: val_nll,
            losses: BTreeMap::from([
                ("train_nll".to_owned(), train_nll),
                ("val_nll".to_owned(), val_nll),
            ]),
        })
    })
}

pub(crate) fn sample(
    cfg: &FlowConfig,
    g: &TrainedGenerator,
    n: usize,
    cond: Option<&Array2<f64>>,
    seed: u64,
) -> Result<Array2<f64>> {
    let flow = Flow::new(cfg, g.feature_count(), n_cond_of(g));
    let mut rng = seeded(seed);
    let z = standard_normal(&mut rng, n, g.feature_count());
    if n == 0 {
        return Ok(z);
    }
    flow.generate_from(&g.params, &z, cond)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CountMatrix, Scale};
    use crate::train::{train, EpochStrategy, ModelSpec};
    use rand_distr::{Distribution, Normal};

    fn small(variant: FlowVariant, blocks: usize, bn: bool) -> FlowConfig {
        FlowConfig {
            n_blocks: blocks,
            hidden_width: 12,
            batch_norm: bn,
            ..FlowConfig::new(variant)
        }
    }

    /// Moves every parameter and running statistic away from its
    /// near-identity initial value.
    fn scramble(store: &mut ParamStore, seed: u64) {
        let mut rng = seeded(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let weight_noise = Normal::new(0.0, 0.05).unwrap();
        for (name, v) in store.params_mut() {
            if name.contains(".made.") || name.contains(".coupling.") {
                let d = if name.ends_with(".w") { weight_noise } else { noise };
                v.mapv_inplace(|x| x + d.sample(&mut rng));
            } else if !name.ends_with(".w") {
                v.mapv_inplace(|x| x + noise.sample(&mut rng));
            }
        }
        let names: Vec<String> = store.buffers().map(|(k, _)| k.clone()).collect();
        for name in names {
            let b = store.buffer_mut(&name).unwrap();
            if name.ends_with("running_var") {
                b.mapv_inplace(|_| rng.random_range(0.5..2.0));
            } else if name.ends_with("running_mean") {
                b.mapv_inplace(|_| noise.sample(&mut rng));
            }
        }
    }

    fn model(cfg: &FlowConfig, dim: usize, n_cond: usize, seed: u64) -> (Flow, ParamStore) {
        let flow = Flow::new(cfg, dim, n_cond);
        let mut store = flow.init(&mut seeded(seed)).unwrap();
        scramble(&mut store, seed + 100);
        (flow, store)
    }

    fn numeric_log_det(flow: &Flow, store: &ParamStore, x: &Array2<f64>, row: usize) -> f64 {
        let d = x.ncols();
        let h = 1e-5;
        let mut jac = nalgebra::DMatrix::zeros(d, d);
        for j in 0..d {
            let mut plus = x.row(row).to_owned().insert_axis(Axis(0));
            let mut minus = plus.clone();
            plus[[0, j]] += h;
            minus[[0, j]] -= h;
            let (zp, _) = flow.normalize(store, &plus, None);
            let (zm, _) = flow.normalize(store, &minus, None);
            for i in 0..d {
                jac[(i, j)] = (zp[[0, i]] - zm[[0, i]]) / (2.0 * h);
            }
        }
        jac.determinant().abs().ln()
    }

    const VARIANTS: [FlowVariant; 3] = [FlowVariant::Realnvp, FlowVariant::Glow, FlowVariant::Maf];

    #[test]
    fn split_rule() {
        assert_eq!(FlowConfig::new(FlowVariant::Maf).split_sizes(100), (85, 15));
    }

    #[test]
    fn block_layout() {
        let f = Flow::new(&small(FlowVariant::Maf, 2, true), 3, 0);
        assert_eq!(f.layer_kinds(), ["made", "batch_norm", "reverse", "made"]);
        let f = Flow::new(&small(FlowVariant::Glow, 2, true), 3, 0);
        assert_eq!(
            f.layer_kinds(),
            ["actnorm", "invertible_linear", "coupling", "batch_norm", "actnorm", "invertible_linear", "coupling"]
        );
    }

    #[test]
    fn invertible_for_every_variant() {
        for variant in VARIANTS {
            for dim in [1, 2, 8, 16] {
                let (flow, store) = model(&small(variant, 5, true), dim, 0, dim as u64);
                let x = standard_normal(&mut seeded(9), 6, dim);
                let (z, _) = flow.normalize(&store, &x, None);
                let back = flow.generate_from(&store, &z, None).unwrap();
                let err = (&back - &x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(err < 1e-5, "{variant:?} dim {dim}: {err}");
            }
        }
    }

    #[test]
    fn log_det_matches_numerical_jacobian() {
        for variant in VARIANTS {
            for dim in 2..=4 {
                let (flow, store) = model(&small(variant, 3, true), dim, 0, 40 + dim as u64);
                let x = standard_normal(&mut seeded(3), 3, dim);
                let (_, ld) = flow.normalize(&store, &x, None);
                for (row, &analytic) in ld.iter().enumerate() {
                    let numeric = numeric_log_det(&flow, &store, &x, row);
                    assert!((analytic - numeric).abs() < 1e-4, "{variant:?} dim {dim}: {analytic} vs {numeric}");
                }
            }
        }
    }

    fn zero_conditioner_outputs(flow: &Flow, store: &mut ParamStore) {
        for layer in &flow.layers {
            if let Layer::Coupling { net, .. } | Layer::Made { net } = layer {
                let last = net.layers.last().unwrap();
                store.param_mut(&last.weight).unwrap().fill(0.0);
                store.param_mut(&last.bias).unwrap().fill(0.0);
            }
        }
    }

    #[test]
    fn zero_conditioners_give_identity() {
        for variant in [FlowVariant::Realnvp, FlowVariant::Maf] {
            let flow = Flow::new(&small(variant, 3, false), 4, 0);
            let mut store = flow.init(&mut seeded(1)).unwrap();
            zero_conditioner_outputs(&flow, &mut store);
            let x = standard_normal(&mut seeded(2), 5, 4);
            let (z, ld) = flow.normalize(&store, &x, None);
            // for MAF the two reversals between three blocks cancel
            assert_eq!(z, x);
            assert!(ld.iter().all(|&v| v == 0.0));
            let lp = flow.log_prob(&store, &x, None);
            for (row, &l) in lp.iter().enumerate() {
                let exact: f64 = x
                    .row(row)
                    .iter()
                    .map(|v| -0.5 * v * v - 0.5 * (2.0 * PI).ln())
                    .sum();
                assert!((l - exact).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_log_scale_sums_over_transformed_half() {
        let flow = Flow::new(&small(FlowVariant::Realnvp, 1, false), 4, 0);
        let mut store = flow.init(&mut seeded(1)).unwrap();
        zero_conditioner_outputs(&flow, &mut store);
        let raw = LOG_SCALE_BOUND * (2f64.ln() / LOG_SCALE_BOUND).atanh();
        let last = match &flow.layers[0] {
            Layer::Coupling { net, .. } => net.layers.last().unwrap().clone(),
            _ => unreachable!(),
        };
        let b = store.param_mut(&last.bias).unwrap();
        b[[0, 0]] = raw;
        b[[0, 1]] = raw;
        let x = standard_normal(&mut seeded(2), 3, 4);
        let (_, ld) = flow.normalize(&store, &x, None);
        // sampling direction gains 2 ln 2, density direction loses it
        for v in ld {
            assert!((v + 2.0 * 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn shift_flow_density() {
        let flow = Flow::new(&small(FlowVariant::Maf, 1, false), 1, 0);
        let mut store = flow.init(&mut seeded(1)).unwrap();
        zero_conditioner_outputs(&flow, &mut store);
        let last = match &flow.layers[0] {
            Layer::Made { net } => net.layers.last().unwrap().clone(),
            _ => unreachable!(),
        };
        store.param_mut(&last.bias).unwrap()[[0, 1]] = 2.5;
        let x = Array2::from_shape_vec((3, 1), vec![-1.0, 2.5, 4.0]).unwrap();
        let lp = flow.log_prob(&store, &x, None);
        for (l, v) in lp.iter().zip(x.iter()) {
            let d = v - 2.5;
            assert!((l - (-0.5 * d * d - 0.5 * (2.0 * PI).ln())).abs() < 1e-12);
        }
    }

    #[test]
    fn autoregressive_mask_property() {
        let (flow, store) = model(&small(FlowVariant::Maf, 2, false), 6, 1, 5);
        let mut rng = seeded(8);
        let x = standard_normal(&mut rng, 4, 6);
        let cond = Array2::from_shape_fn((4, 1), |(i, _)| (i % 2) as f64);
        for (idx, layer) in flow.layers.iter().enumerate() {
            if !matches!(layer, Layer::Made { .. }) {
                continue;
            }
            let (ls, t) = flow.conditioner(&store, idx, &x, Some(&cond)).unwrap();
            for i in 0..6 {
                for j in i..6 {
                    let mut xp = x.clone();
                    xp.column_mut(j).mapv_inplace(|v| v + rng.random_range(-3.0..3.0));
                    let (ls2, t2) = flow.conditioner(&store, idx, &xp, Some(&cond)).unwrap();
                    assert_eq!(ls.column(i), ls2.column(i));
                    assert_eq!(t.column(i), t2.column(i));
                }
            }
        }
    }

    #[test]
    fn actnorm_standardizes_first_batch() {
        let flow = Flow::new(&small(FlowVariant::Glow, 1, false), 3, 0);
        let mut store = flow.init(&mut seeded(2)).unwrap();
        let x = standard_normal(&mut seeded(3), 20, 3).mapv(|v| 4.0 + 3.0 * v);
        flow.initialize_actnorm(&mut store, &x, None);
        let bias = store.get("block0.actnorm.bias").unwrap();
        let scale = store.get("block0.actnorm.log_scale").unwrap().mapv(f64::exp);
        let y = (&x + bias) * &scale;
        for col in y.columns() {
            let mean = col.mean().unwrap();
            let sd = col.std(0.0);
            assert!(mean.abs() < 1e-6 && (sd - 1.0).abs() < 1e-6);
        }
        // a second call leaves the parameters alone
        let before = store.clone();
        flow.initialize_actnorm(&mut store, &x.mapv(|v| v * 2.0), None);
        assert_eq!(before, store);
    }

    fn cofactor_det(m: &Array2<f64>) -> f64 {
        let n = m.nrows();
        if n == 1 {
            return m[[0, 0]];
        }
        (0..n)
            .map(|j| {
                let rows: Vec<usize> = (1..n).collect();
                let cols: Vec<usize> = (0..n).filter(|&c| c != j).collect();
                let minor = m.select(Axis(0), &rows).select(Axis(1), &cols);
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * m[[0, j]] * cofactor_det(&minor)
            })
            .sum()
    }

    #[test]
    fn mixing_log_det() {
        let flow = Flow::new(&small(FlowVariant::Glow, 1, false), 4, 0);
        let mut store = flow.init(&mut seeded(2)).unwrap();
        let x = standard_normal(&mut seeded(3), 2, 4);
        let w = store.get("block0.mix.w").unwrap().clone();
        assert!((cofactor_det(&w).abs() - 1.0).abs() < 1e-10, "rotation has |det| 1");
        let w = standard_normal(&mut seeded(4), 4, 4);
        *store.param_mut("block0.mix.w").unwrap() = w.clone();
        let mut tape = Tape::new();
        let wv = tape.leaf(w.clone());
        let ld = tape.log_abs_det(wv);
        assert!((tape.scalar(ld) - cofactor_det(&w).abs().ln()).abs() < 1e-8);
        *store.param_mut("block0.mix.w").unwrap() = Array2::eye(4);
        zero_conditioner_outputs(&flow, &mut store);
        let (_, ld) = flow.normalize(&store, &x, None);
        assert!(ld.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let (flow, store) = model(&small(FlowVariant::Maf, 2, true), 3, 0, 21);
        let x = standard_normal(&mut seeded(4), 6, 3);
        let (_, grads) = flow.nll_gradients(&store, &x, None, FlowMode::Train);
        let h = 1e-6;
        for (name, g) in &grads {
            let idx = (0, 0);
            let mut plus = store.clone();
            plus.param_mut(name).unwrap()[idx] += h;
            let mut minus = store.clone();
            minus.param_mut(name).unwrap()[idx] -= h;
            let numeric = (flow.nll_gradients(&plus, &x, None, FlowMode::Train).0
                - flow.nll_gradients(&minus, &x, None, FlowMode::Train).0)
                / (2.0 * h);
            assert!(
                (g[idx] - numeric).abs() <= 1e-4 * numeric.abs().max(1e-2),
                "{name}: {} vs {numeric}",
                g[idx]
            );
        }
    }

    fn gaussian_matrix(seed: u64, n: usize, dim: usize, mean: f64) -> CountMatrix {
        let mut rng = seeded(seed);
        let x = standard_normal(&mut rng, n, dim).mapv(|v| mean + v);
        CountMatrix::from_samples(
            (0..dim).map(|j| format!("m{j}")).collect(),
            (0..n).map(|i| format!("s{i}")).collect(),
            &x,
            Scale::Log2p1,
            None,
        )
        .unwrap()
    }

    fn fit_small(data: &CountMatrix, variant: FlowVariant, epochs: usize, seed: u64) -> TrainedGenerator {
        let policy = TrainingPolicy::default()
            .with_epochs(EpochStrategy::Fixed { epochs })
            .with_seed(seed);
        train(data, &ModelSpec::Flow(small(variant, 3, true)), &policy).unwrap()
    }

    #[test]
    fn validation_loss_improves() {
        for seed in 0..5 {
            let data = gaussian_matrix(seed, 100, 2, 4.0);
            let g = fit_small(&data, VARIANTS[seed as usize % 3], 30, seed);
            let val: Vec<f64> = g.training_log.epochs.iter().map(|r| r.losses["val_nll"]).collect();
            let best = val.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(best <= val[0]);
        }
    }

    #[test]
    fn one_dimensional_flow_is_a_density_and_fits_the_mean() {
        let data = gaussian_matrix(7, 200, 1, 3.0);
        let g = fit_small(&data, FlowVariant::Maf, 60, 1);
        let ModelSpec::Flow(cfg) = &g.spec else { unreachable!() };
        let flow = Flow::new(cfg, 1, 0);
        let step = 0.001;
        let grid = Array2::from_shape_fn((20_001, 1), |(i, _)| -7.0 + step * i as f64);
        let mass: f64 = flow.log_prob(&g.params, &grid, None).iter().map(|l| l.exp() * step).sum();
        assert!((0.99..=1.01).contains(&mass), "mass {mass}");

        let out = g.generate(2000, None, 3).unwrap();
        let v: Vec<f64> = out.counts().iter().cloned().collect();
        let mean = crate::stats::mean(&v);
        // the fitted mean can only be as precise as the 200 training samples
        let se = crate::stats::sample_sd(&v) / (data.n_samples() as f64).sqrt();
        assert!((mean - 3.0).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn too_few_samples_for_split() {
        let data = gaussian_matrix(1, 6, 2, 3.0);
        let policy = TrainingPolicy::default().with_epochs(EpochStrategy::Fixed { epochs: 1 });
        assert!(train(&data, &ModelSpec::Flow(small(FlowVariant::Maf, 1, true)), &policy).is_err());
    }
}
