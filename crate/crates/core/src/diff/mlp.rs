use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{gelu, Tape, Var};
use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Gelu,
}

impl Activation {
    /// Fan-in uniform init bound is `gain / sqrt(fan_in)`. Tanh gets the
    /// unit-variance gain, GELU the rectifier gain.
    pub fn init_gain(self) -> f64 {
        match self {
            Activation::Tanh => 3f64.sqrt(),
            Activation::Gelu => 6f64.sqrt(),
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Gelu => gelu(x),
        }
    }
}

/// Fully connected network. Hidden layers use `activation`; the output layer
/// is linear.
#[derive(Debug, Clone)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    layers: Vec<(ParamId, ParamId)>,
}

/// Forward result keeping the last hidden layer around.
pub struct MlpOutput {
    pub output: Var,
    pub hidden: Option<Var>,
}

impl Mlp {
    /// Registers weights (fan-in uniform) and zero biases in `store`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        sizes: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        ensure!(sizes.len() >= 2, "{name}: an MLP needs at least two sizes");
        ensure!(
            sizes.iter().all(|&s| s > 0),
            "{name}: layer sizes must be positive, got {sizes:?}"
        );
        let gain = activation.init_gain();
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = gain / (fan_in as f64).sqrt();
                let weight =
                    Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-bound..=bound));
                let wid = store.add(format!("{name}.{l}.weight"), weight);
                let bid = store.add(format!("{name}.{l}.bias"), Array2::zeros((1, fan_out)));
                (wid, bid)
            })
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            activation,
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: Var) -> Result<Var> {
        Ok(self.forward_full(tape, store, input)?.output)
    }

    pub fn forward_full(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: Var,
    ) -> Result<MlpOutput> {
        let (_, d) = tape.shape(input);
        ensure!(
            d == self.input_dim(),
            "mlp input has {d} features, expected {}",
            self.input_dim()
        );
        let mut h = input;
        let mut hidden = None;
        let last = self.layers.len() - 1;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(store, w);
            let bv = tape.param(store, b);
            let pre = tape.matmul(h, wv);
            h = tape.add_row(pre, bv);
            if l < last {
                h = match self.activation {
                    Activation::Tanh => tape.tanh(h),
                    Activation::Gelu => tape.gelu(h),
                };
                hidden = Some(h);
            }
        }
        Ok(MlpOutput { output: h, hidden })
    }

    /// Tape-free forward pass for rollouts; returns (output, last hidden).
    pub fn infer(
        &self,
        store: &ParamStore,
        input: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        ensure!(
            input.ncols() == self.input_dim(),
            "mlp input has {} features, expected {}",
            input.ncols(),
            self.input_dim()
        );
        let mut h = input.clone();
        let mut hidden = input.clone();
        let last = self.layers.len() - 1;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let mut next = h.dot(store.value(w));
            next += &store.value(b).index_axis(Axis(0), 0);
            if l < last {
                let act = self.activation;
                next.mapv_inplace(|x| act.apply(x));
                hidden = next.clone();
            }
            h = next;
        }
        Ok((h, hidden))
    }
}
