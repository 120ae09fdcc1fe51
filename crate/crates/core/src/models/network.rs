//! Layer recipes for the residual Transformer family and the baselines.

use rand_chacha::ChaCha8Rng;

use crate::attention::{modified_transformer_layer, standard_encoder_layer, ModifiedLayerParams, StandardLayerParams};
use crate::autodiff::{xavier_uniform, Bindings, Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;
use crate::models::config::{BaselineKind, ModelConfig, Variant};
use crate::models::layers::{Conv, Dense, Mlp};
use crate::scalar::Scalar;

pub const VARIANT_E_LAYERS: usize = 8;

pub const BPNN_WIDTHS: [usize; 3] = [128, 32, 3];
pub const CNN1D_FILTERS: usize = 16;
pub const CNN1D_WIDTHS: [usize; 2] = [64, 3];
pub const CNN2D_FILTERS: usize = 8;
pub const CNN2D_WIDTHS: [usize; 3] = [64, 32, 3];
pub const LSTM_LAYERS: usize = 3;
pub const LSTM_HIDDEN: usize = 32;
pub const CONVLSTM_LAYERS: usize = 3;
pub const CONVLSTM_FILTERS: usize = 64;
pub const CONVLSTM_WIDTHS: [usize; 3] = [64, 32, 3];
pub const STRESNET_FILTERS: usize = 8;
pub const TRANSFORMER_LAYERS: usize = 6;
pub const TRANSFORMER_HEADS: usize = 8;
pub const TRANSFORMER_D: usize = 32;
pub const DEEP_HEAD_WIDTHS: [usize; 4] = [128, 64, 32, 3];

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Encoder {
    Modified(Vec<ModifiedLayerParams>),
    Standard(Vec<StandardLayerParams>),
}

impl Encoder {
    fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var, p: &Bindings, scores: &mut Vec<Vec<Var>>) -> Result<Var> {
        let mut h = x;
        match self {
            Encoder::Modified(layers) => {
                for layer in layers {
                    let (out, s) = modified_transformer_layer(g, h, layer, p)?;
                    h = out;
                    scores.push(s);
                }
            }
            Encoder::Standard(layers) => {
                for layer in layers {
                    let (out, s) = standard_encoder_layer(g, h, layer, p)?;
                    h = out;
                    scores.push(s);
                }
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ResNet {
    encoder: Encoder,
    pre_fc: [Dense; 2],
    post_conv: Option<[Conv; 2]>,
    shortcut: bool,
    head: Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LstmLayer {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
    hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Network {
    Res(ResNet),
    Bpnn(Mlp),
    Cnn1d { conv: Conv, head: Mlp },
    Cnn2d { conv: Conv, head: Mlp },
    Lstm { layers: Vec<LstmLayer>, head: Mlp },
    ConvLstm { layers: Vec<(Conv, usize)>, head: Mlp },
    StResNet { entry: Conv, unit: [Conv; 2], head: Mlp },
    Transformer { layers: Vec<StandardLayerParams>, head: Mlp },
}

/// Output of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `[B, 3]` predictions.
    pub output: Var,
    /// Score nodes `[B, 3, 3]` indexed by layer then head; empty for models
    /// without attention.
    pub scores: Vec<Vec<Var>>,
    /// `[B, 3, L]` tensor entering the flatten-and-FC head of the residual
    /// Transformer family.
    pub head_input: Option<Var>,
}

pub(crate) fn build_res<T: Scalar>(
    cfg: &ModelConfig,
    variant: Variant,
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
) -> Result<Network> {
    let l = cfg.window;
    let encoder = if variant == Variant::E {
        Encoder::Standard(
            (0..VARIANT_E_LAYERS)
                .map(|i| StandardLayerParams::init(store, &format!("encoder{i}"), l, cfg.d_model, cfg.heads, rng))
                .collect::<Result<_>>()?,
        )
    } else {
        let conv_query = variant != Variant::A;
        Encoder::Modified(
            (0..cfg.layers)
                .map(|i| {
                    ModifiedLayerParams::init(
                        store,
                        &format!("encoder{i}"),
                        l,
                        cfg.d_model,
                        cfg.heads,
                        cfg.conv_filters,
                        conv_query,
                        rng,
                    )
                })
                .collect::<Result<_>>()?,
        )
    };
    let pre_fc = [
        Dense::init(store, "pre_fc0", l, cfg.pre_fc_width, rng)?,
        Dense::init(store, "pre_fc1", cfg.pre_fc_width, l, rng)?,
    ];
    let (convs, shortcut) = match variant {
        Variant::B => (false, false),
        Variant::C => (false, true),
        Variant::D => (true, false),
        Variant::Full | Variant::A | Variant::E => (true, true),
    };
    let f = cfg.conv_filters;
    let post_conv = if convs {
        Some([
            Conv::init(store, "post_conv0", [f, 1, 3, 3], rng)?,
            Conv::init(store, "post_conv1", [1, f, 3, 3], rng)?,
        ])
    } else {
        None
    };
    let head = Mlp::init(store, "head", 3 * l, &cfg.head_widths, rng)?;
    Ok(Network::Res(ResNet {
        encoder,
        pre_fc,
        post_conv,
        shortcut,
        head,
    }))
}

pub(crate) fn build_baseline_network<T: Scalar>(
    kind: BaselineKind,
    l: usize,
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
) -> Result<Network> {
    Ok(match kind {
        BaselineKind::Bpnn => Network::Bpnn(Mlp::init(store, "head", 3 * l, &BPNN_WIDTHS, rng)?),
        BaselineKind::Cnn1d => Network::Cnn1d {
            conv: Conv::init_1d(store, "conv", CNN1D_FILTERS, 3, 3, rng)?,
            head: Mlp::init(store, "head", CNN1D_FILTERS * l, &CNN1D_WIDTHS, rng)?,
        },
        BaselineKind::Cnn2d => Network::Cnn2d {
            conv: Conv::init(store, "conv", [CNN2D_FILTERS, 1, 3, 3], rng)?,
            head: Mlp::init(store, "head", CNN2D_FILTERS * 3 * l, &CNN2D_WIDTHS, rng)?,
        },
        BaselineKind::Lstm => {
            let mut layers = Vec::with_capacity(LSTM_LAYERS);
            let mut input = 3;
            for i in 0..LSTM_LAYERS {
                let h = LSTM_HIDDEN;
                layers.push(LstmLayer {
                    wx: store.add(format!("lstm{i}.wx"), xavier_uniform(&[input, 4 * h], input, 4 * h, rng))?,
                    wh: store.add(format!("lstm{i}.wh"), xavier_uniform(&[h, 4 * h], h, 4 * h, rng))?,
                    b: store.add(format!("lstm{i}.b"), Tensor::zeros(&[4 * h]))?,
                    hidden: h,
                });
                input = h;
            }
            Network::Lstm {
                layers,
                head: Mlp::init(store, "head", LSTM_HIDDEN, &DEEP_HEAD_WIDTHS, rng)?,
            }
        }
        BaselineKind::ConvLstm => {
            let f = CONVLSTM_FILTERS;
            let mut layers = Vec::with_capacity(CONVLSTM_LAYERS);
            let mut c_in = 1;
            for i in 0..CONVLSTM_LAYERS {
                // input, cell and output gates
                layers.push((Conv::init(store, &format!("convlstm{i}"), [3 * f, c_in, 3, 3], rng)?, f));
                c_in = f;
            }
            Network::ConvLstm {
                layers,
                head: Mlp::init(store, "head", f * 3 * l, &CONVLSTM_WIDTHS, rng)?,
            }
        }
        BaselineKind::StResNet => {
            let f = STRESNET_FILTERS;
            Network::StResNet {
                entry: Conv::init(store, "entry", [f, 1, 3, 3], rng)?,
                unit: [
                    Conv::init(store, "unit.conv0", [f, f, 3, 3], rng)?,
                    Conv::init(store, "unit.conv1", [f, f, 3, 3], rng)?,
                ],
                head: Mlp::init(store, "head", f * 3 * l, &DEEP_HEAD_WIDTHS, rng)?,
            }
        }
        BaselineKind::Transformer => Network::Transformer {
            layers: (0..TRANSFORMER_LAYERS)
                .map(|i| {
                    StandardLayerParams::init(store, &format!("encoder{i}"), l, TRANSFORMER_D, TRANSFORMER_HEADS, rng)
                })
                .collect::<Result<_>>()?,
            head: Mlp::init(store, "head", 3 * l, &DEEP_HEAD_WIDTHS, rng)?,
        },
    })
}

fn as_image<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    g.reshape(x, &[s[0], 1, s[1], s[2]])
}

fn from_image<T: Scalar>(g: &mut Graph<T>, x: Var, shape: &[usize]) -> Result<Var> {
    g.reshape(x, shape)
}

impl Network {
    pub(crate) fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var, p: &Bindings) -> Result<ForwardTrace> {
        let shape = g.shape(x).to_vec();
        let mut scores = Vec::new();
        let mut head_input = None;
        let output = match self {
            Network::Res(net) => {
                let h = net.encoder.forward(g, x, p, &mut scores)?;
                let h = net.pre_fc[0].forward(g, h, p)?;
                let h = g.relu(h);
                let mut z = net.pre_fc[1].forward(g, h, p)?;
                if let Some([c0, c1]) = &net.post_conv {
                    let img = as_image(g, z)?;
                    let img = c0.same(g, img, p)?;
                    let img = g.relu(img);
                    let img = c1.same(g, img, p)?;
                    z = from_image(g, img, &shape)?;
                }
                if net.shortcut {
                    z = g.add(z, x)?;
                }
                head_input = Some(z);
                let flat = g.flatten(z)?;
                net.head.forward(g, flat, p)?
            }
            Network::Bpnn(head) => {
                let flat = g.flatten(x)?;
                head.forward(g, flat, p)?
            }
            Network::Cnn1d { conv, head } => {
                let h = g.conv1d(x, p.get(conv.kernel), Some(p.get(conv.bias)), 1, 1)?;
                let h = g.relu(h);
                let flat = g.flatten(h)?;
                head.forward(g, flat, p)?
            }
            Network::Cnn2d { conv, head } => {
                let img = as_image(g, x)?;
                let h = conv.same(g, img, p)?;
                let h = g.relu(h);
                let flat = g.flatten(h)?;
                head.forward(g, flat, p)?
            }
            Network::Lstm { layers, head } => {
                let (b, l) = (shape[0], shape[2]);
                let mut seq = Vec::with_capacity(l);
                for t in 0..l {
                    let col = g.narrow(x, 2, t, 1)?;
                    seq.push(g.reshape(col, &[b, 3])?);
                }
                for layer in layers {
                    seq = lstm_layer(g, layer, &seq, p)?;
                }
                let last = *seq.last().expect("window is at least one slot");
                head.forward(g, last, p)?
            }
            Network::ConvLstm { layers, head } => {
                // one frame with zero initial state: c = i ⊙ g, h = o ⊙ tanh(c)
                let mut frame = as_image(g, x)?;
                for (conv, f) in layers {
                    let gates = conv.same(g, frame, p)?;
                    let i = g.narrow(gates, 1, 0, *f)?;
                    let i = g.sigmoid(i);
                    let cand = g.narrow(gates, 1, *f, *f)?;
                    let cand = g.tanh(cand);
                    let o = g.narrow(gates, 1, 2 * f, *f)?;
                    let o = g.sigmoid(o);
                    let c = g.mul(i, cand)?;
                    let c = g.tanh(c);
                    frame = g.mul(o, c)?;
                }
                let flat = g.flatten(frame)?;
                head.forward(g, flat, p)?
            }
            Network::StResNet { entry, unit, head } => {
                let img = as_image(g, x)?;
                let e = entry.same(g, img, p)?;
                let h = g.relu(e);
                let h = unit[0].same(g, h, p)?;
                let h = g.relu(h);
                let h = unit[1].same(g, h, p)?;
                let h = g.add(h, e)?;
                let flat = g.flatten(h)?;
                head.forward(g, flat, p)?
            }
            Network::Transformer { layers, head } => {
                let mut h = x;
                for layer in layers {
                    let (out, s) = standard_encoder_layer(g, h, layer, p)?;
                    h = out;
                    scores.push(s);
                }
                let flat = g.flatten(h)?;
                head.forward(g, flat, p)?
            }
        };
        Ok(ForwardTrace {
            output,
            scores,
            head_input,
        })
    }

    /// `(layers, heads)` of the recorded score matrices, if any.
    pub(crate) fn attention_shape(&self) -> Option<(usize, usize)> {
        match self {
            Network::Res(ResNet { encoder, .. }) => Some(match encoder {
                Encoder::Modified(ls) => (ls.len(), ls[0].heads()),
                Encoder::Standard(ls) => (ls.len(), ls[0].heads.len()),
            }),
            Network::Transformer { layers, .. } => Some((layers.len(), layers[0].heads.len())),
            _ => None,
        }
    }
}

fn lstm_layer<T: Scalar>(g: &mut Graph<T>, layer: &LstmLayer, seq: &[Var], p: &Bindings) -> Result<Vec<Var>> {
    let h_dim = layer.hidden;
    let mut h: Option<Var> = None;
    let mut c: Option<Var> = None;
    let mut out = Vec::with_capacity(seq.len());
    for &x_t in seq {
        let mut gates = g.linear(x_t, p.get(layer.wx), Some(p.get(layer.b)))?;
        if let Some(h_prev) = h {
            let rec = g.matmul(h_prev, p.get(layer.wh))?;
            gates = g.add(gates, rec)?;
        }
        let i = g.narrow(gates, 1, 0, h_dim)?;
        let i = g.sigmoid(i);
        let f = g.narrow(gates, 1, h_dim, h_dim)?;
        let f = g.sigmoid(f);
        let cand = g.narrow(gates, 1, 2 * h_dim, h_dim)?;
        let cand = g.tanh(cand);
        let o = g.narrow(gates, 1, 3 * h_dim, h_dim)?;
        let o = g.sigmoid(o);
        let mut c_new = g.mul(i, cand)?;
        if let Some(c_prev) = c {
            let keep = g.mul(f, c_prev)?;
            c_new = g.add(c_new, keep)?;
        }
        let squashed = g.tanh(c_new);
        let h_new = g.mul(o, squashed)?;
        h = Some(h_new);
        c = Some(c_new);
        out.push(h_new);
    }
    Ok(out)
}
