//! Fully connected network with SiLU hidden activations and hand-written
//! reverse-mode gradients.
//!
//! Parameters live in one flat vector: for each layer the `fan_in x fan_out`
//! weight matrix (row-major) followed by its bias.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    params: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward_tape`] for a later backward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    /// Input to every layer (post-activation of the previous one).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of every hidden layer.
    pre: Vec<Array2<f64>>,
}

impl Tape {
    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

impl Mlp {
    fn count(widths: &[usize]) -> usize {
        widths.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    fn check_widths(widths: &[usize]) -> Result<()> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::Shape(format!("invalid layer widths {widths:?}")));
        }
        Ok(())
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        Self::check_widths(widths)?;
        Ok(Self {
            widths: widths.to_vec(),
            params: vec![0.0; Self::count(widths)],
        })
    }

    /// Gaussian weights with standard deviation `1 / sqrt(fan_in)`, zero biases.
    pub fn gaussian(widths: &[usize], rng: &mut SimRng) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        let mut off = 0;
        for p in widths.windows(2) {
            let scale = 1.0 / (p[0] as f64).sqrt();
            for v in &mut net.params[off..off + p[0] * p[1]] {
                let z: f64 = StandardNormal.sample(rng);
                *v = scale * z;
            }
            off += p[0] * p[1] + p[1];
        }
        Ok(net)
    }

    pub fn from_params(widths: &[usize], params: Vec<f64>) -> Result<Self> {
        Self::check_widths(widths)?;
        if params.len() != Self::count(widths) {
            return Err(Error::Shape(format!(
                "{} parameters for widths {widths:?} (need {})",
                params.len(),
                Self::count(widths)
            )));
        }
        Ok(Self {
            widths: widths.to_vec(),
            params,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let off: usize = self.widths[..l + 1]
            .windows(2)
            .map(|p| p[0] * p[1] + p[1])
            .sum();
        let (fi, fo) = (self.widths[l], self.widths[l + 1]);
        let w = ArrayView2::from_shape((fi, fo), &self.params[off..off + fi * fo]).unwrap();
        let b = ArrayView1::from(&self.params[off + fi * fo..off + fi * fo + fo]);
        (w, b)
    }

    fn check_input(&self, input: &ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.ncols()
            )));
        }
        Ok(())
    }

    /// Batched forward pass; rows are samples.
    pub fn forward(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&input)?;
        let n_layers = self.widths.len() - 1;
        let mut h = input.to_owned();
        for l in 0..n_layers {
            let (w, b) = self.layer(l);
            let mut z = h.dot(&w);
            z += &b;
            if l + 1 < n_layers {
                z.mapv_inplace(silu);
            }
            h = z;
        }
        Ok(h)
    }

    /// Forward pass that records what [`Mlp::backward`] needs.
    pub fn forward_tape(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, Tape)> {
        self.check_input(&input)?;
        let n_layers = self.widths.len() - 1;
        let mut tape = Tape::default();
        let mut h = input.to_owned();
        for l in 0..n_layers {
            let (w, b) = self.layer(l);
            let mut z = h.dot(&w);
            z += &b;
            tape.inputs.push(h);
            if l + 1 < n_layers {
                let a = z.mapv(silu);
                tape.pre.push(z);
                h = a;
            } else {
                h = z;
            }
        }
        Ok((h, tape))
    }

    /// Gradient of `sum(upstream * output)` with respect to every parameter,
    /// in the same flat layout as [`Mlp::params`].
    pub fn backward(&self, tape: &Tape, upstream: ArrayView2<f64>) -> Result<Vec<f64>> {
        let n_layers = self.widths.len() - 1;
        if tape.is_empty() {
            return Err(Error::State("backward called before a forward pass".into()));
        }
        if tape.inputs.len() != n_layers || tape.inputs[0].ncols() != self.input_dim() {
            return Err(Error::State("tape was recorded by a different network".into()));
        }
        let batch = tape.inputs[0].nrows();
        if upstream.dim() != (batch, self.output_dim()) {
            return Err(Error::Shape(format!(
                "upstream gradient {:?}, expected {:?}",
                upstream.dim(),
                (batch, self.output_dim())
            )));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for p in self.widths.windows(2) {
            offsets.push(off);
            off += p[0] * p[1] + p[1];
        }
        let mut delta = upstream.to_owned();
        for l in (0..n_layers).rev() {
            let (fi, fo) = (self.widths[l], self.widths[l + 1]);
            let gw = tape.inputs[l].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            let o = offsets[l];
            for (g, v) in grads[o..o + fi * fo].iter_mut().zip(gw.iter()) {
                *g = *v;
            }
            for (g, v) in grads[o + fi * fo..o + fi * fo + fo].iter_mut().zip(gb.iter()) {
                *g = *v;
            }
            if l > 0 {
                let (w, _) = self.layer(l);
                let mut back = delta.dot(&w.t());
                back.zip_mut_with(&tape.pre[l - 1], |g, &z| *g *= silu_grad(z));
                delta = back;
            }
        }
        Ok(grads)
    }

    /// Single-sample convenience wrapper.
    pub fn forward_one(&self, input: ArrayView1<f64>) -> Result<Array1<f64>> {
        let out = self.forward(input.insert_axis(Axis(0)))?;
        Ok(out.index_axis_move(Axis(0), 0))
    }
}
