use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::params::{Bound, ParamStore};
use super::tape::{Tape, Var};

/// He (Kaiming) normal initialization: `N(0, gain² · 2 / fan_in)`.
pub fn he_normal(rng: &mut impl Rng, fan_in: usize, fan_out: usize, gain: f64) -> Array2<f64> {
    let std = gain * (2.0 / fan_in.max(1) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || {
        std * rng.sample::<f64, _>(StandardNormal)
    })
}

/// Affine layer `y = x·W + b`, with an optional constant connectivity mask
/// multiplied into `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: String,
    pub bias: String,
    pub mask: Option<String>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(prefix: &str, fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: format!("{prefix}.w"),
            bias: format!("{prefix}.b"),
            mask: None,
            fan_in,
            fan_out,
        }
    }

    pub fn masked(prefix: &str, fan_in: usize, fan_out: usize) -> Self {
        Self {
            mask: Some(format!("{prefix}.mask")),
            ..Self::new(prefix, fan_in, fan_out)
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng, gain: f64) {
        store.insert(&self.weight, he_normal(rng, self.fan_in, self.fan_out, gain));
        store.insert(&self.bias, Array2::zeros((1, self.fan_out)));
    }

    /// Weight with the mask applied.
    pub fn effective_weight(&self, tape: &mut Tape, p: &Bound) -> Var {
        let w = p.var(&self.weight);
        match &self.mask {
            Some(m) => tape.mul(w, p.var(m)),
            None => w,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        let w = self.effective_weight(tape, p);
        let xw = tape.matmul(x, w);
        tape.add_row(xw, p.var(&self.bias))
    }
}

/// Multilayer perceptron with ReLU hidden activations and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `sizes` lists the input width, every hidden width and the output width.
    pub fn new(prefix: &str, sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{prefix}.{i}"), w[0], w[1]))
            .collect();
        Self { layers }
    }

    pub fn masked(prefix: &str, sizes: &[usize]) -> Self {
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::masked(&format!("{prefix}.{i}"), w[0], w[1]))
            .collect();
        Self { layers }
    }

    /// Overwrites the output layer's bias, e.g. to start at the data's mean.
    pub fn set_output_bias(&self, store: &mut ParamStore, values: &[f64]) {
        let last = self.layers.last().expect("network has layers");
        let bias = store.param_mut(&last.bias).expect("output bias registered");
        assert_eq!(bias.len(), values.len(), "one bias value per output");
        bias.iter_mut().zip(values).for_each(|(b, &v)| *b = v);
    }

    /// He initialization for hidden layers; the output layer gets `out_gain`.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng, out_gain: f64) {
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            l.init(store, rng, if i == last { out_gain } else { 1.0 });
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(tape, p, h);
            if i < last {
                h = tape.relu(h);
            }
        }
        h
    }

    /// Per-row gradient of a single-output network with respect to its
    /// input, recorded on the tape so it can itself be differentiated with
    /// respect to the weights. ReLU gates are held constant, which is exact
    /// almost everywhere since their second derivative vanishes.
    pub fn input_gradient(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        let last = self.layers.len() - 1;
        assert_eq!(self.layers[last].fan_out, 1, "input_gradient needs one output");
        let mut gates = Vec::with_capacity(last);
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            let w = l.effective_weight(tape, p);
            weights.push(w);
            if i < last {
                let xw = tape.matmul(h, w);
                let pre = tape.add_row(xw, p.var(&l.bias));
                let gate = tape.value(pre).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                gates.push(tape.leaf(gate));
                h = tape.relu(pre);
            }
        }
        let n = tape.shape(x).0;
        let ones = tape.leaf(Array2::ones((n, 1)));
        let wt = tape.transpose(weights[last]);
        let mut g = tape.matmul(ones, wt);
        for i in (0..last).rev() {
            g = tape.mul(g, gates[i]);
            let wt = tape.transpose(weights[i]);
            g = tape.matmul(g, wt);
        }
        g
    }

    /// Forward pass on plain arrays.
    pub fn eval(&self, store: &ParamStore, x: &Array2<f64>) -> Array2<f64> {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let xv = tape.leaf(x.clone());
        let y = self.forward(&mut tape, &p, xv);
        tape.value(y).clone()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.clone(), l.bias.clone()])
            .collect()
    }
}
