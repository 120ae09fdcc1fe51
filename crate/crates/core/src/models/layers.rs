use rand_chacha::ChaCha8Rng;

use crate::autodiff::{xavier_uniform, Bindings, Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;
use crate::scalar::Scalar;

/// Weight and bias of one fully connected layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add(format!("{name}.w"), xavier_uniform(&[fan_in, fan_out], fan_in, fan_out, rng))?,
            b: store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]))?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var, p: &Bindings) -> Result<Var> {
        g.linear(x, p.get(self.w), Some(p.get(self.b)))
    }
}

/// Kernel and bias of a 2-D (or 1-D) convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv {
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl Conv {
    /// `c_out × c_in × kh × kw` kernel.
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        shape: [usize; 4],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let [c_out, c_in, kh, kw] = shape;
        Ok(Self {
            kernel: store.add(
                format!("{name}.kernel"),
                xavier_uniform(&shape, c_in * kh * kw, c_out * kh * kw, rng),
            )?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]))?,
        })
    }

    pub fn init_1d<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_out: usize,
        c_in: usize,
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            kernel: store.add(
                format!("{name}.kernel"),
                xavier_uniform(&[c_out, c_in, k], c_in * k, c_out * k, rng),
            )?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]))?,
        })
    }

    /// Stride 1, "same" padding for a 3×3 kernel.
    pub fn same<T: Scalar>(&self, g: &mut Graph<T>, x: Var, p: &Bindings) -> Result<Var> {
        g.conv2d(x, p.get(self.kernel), Some(p.get(self.bias)), 1, 1)
    }
}

/// Fully connected stack with relu between layers and a linear output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input: usize,
        widths: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = input;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Dense::init(store, &format!("{prefix}.fc{i}"), fan_in, w, rng)?);
            fan_in = w;
        }
        Ok(Self { layers })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var, p: &Bindings) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h, p)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        Ok(h)
    }
}
