//! Attention across the three traffic modes.
//!
//! Inputs are `[B, 3, L]`: each mode's last `L` slots form its feature
//! vector, so every score matrix is `3 × 3` and row `i` says how much each
//! mode's history contributes to mode `i`'s output.

use std::fmt::Write as _;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{xavier_uniform, Bindings, Graph, ParamId, ParamStore, Tensor, Var};
use crate::dataflow::Mode;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Linear query/key/value projections of one head: each `L × d`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionHeadParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
}

impl AttentionHeadParams {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        window: usize,
        d: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(Self {
            w_q: store.add(format!("{prefix}.w_q"), xavier_uniform(&[window, d], window, d, rng))?,
            w_k: store.add(format!("{prefix}.w_k"), xavier_uniform(&[window, d], window, d, rng))?,
            w_v: store.add(format!("{prefix}.w_v"), xavier_uniform(&[window, d], window, d, rng))?,
        })
    }
}

/// Convolutional query branch: `conv(1→F, 3×3) → relu → conv(F→1, 3×3)`
/// over the `3 × L` map, then a per-head row-wise `L → d` projection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvQParams {
    pub conv1_kernel: ParamId,
    pub conv1_bias: ParamId,
    pub conv2_kernel: ParamId,
    pub conv2_bias: ParamId,
    /// One `L × d` projection per head.
    pub proj: Vec<ParamId>,
}

impl ConvQParams {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        window: usize,
        d: usize,
        heads: usize,
        filters: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let conv1_kernel = store.add(
            format!("{prefix}.conv1.kernel"),
            xavier_uniform(&[filters, 1, 3, 3], 9, filters * 9, rng),
        )?;
        let conv1_bias = store.add(format!("{prefix}.conv1.bias"), Tensor::zeros(&[filters]))?;
        let conv2_kernel = store.add(
            format!("{prefix}.conv2.kernel"),
            xavier_uniform(&[1, filters, 3, 3], filters * 9, 9, rng),
        )?;
        let conv2_bias = store.add(format!("{prefix}.conv2.bias"), Tensor::zeros(&[1]))?;
        let proj = (0..heads)
            .map(|h| store.add(format!("{prefix}.proj{h}"), xavier_uniform(&[window, d], window, d, rng)))
            .collect::<Result<_>>()?;
        Ok(Self {
            conv1_kernel,
            conv1_bias,
            conv2_kernel,
            conv2_bias,
            proj,
        })
    }
}

/// How a modified layer produces its queries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryBranch {
    Conv(ConvQParams),
    /// One `L × d` matrix per head (the fully connected ablation).
    Linear(Vec<ParamId>),
}

/// Encoder layer with convolutional (or linear) queries, linear keys and
/// values, multi-head attention and an output projection back to `3 × L`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModifiedLayerParams {
    pub query: QueryBranch,
    pub w_k: Vec<ParamId>,
    pub w_v: Vec<ParamId>,
    /// `(heads · d) × L`
    pub out_w: ParamId,
    pub out_b: ParamId,
}

impl ModifiedLayerParams {
    #[allow(clippy::too_many_arguments)]
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        window: usize,
        d: usize,
        heads: usize,
        filters: usize,
        conv_query: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || d == 0 {
            return Err(Error::Config("attention needs at least one head of width ≥ 1".into()));
        }
        let query = if conv_query {
            QueryBranch::Conv(ConvQParams::init(store, &format!("{prefix}.conv_q"), window, d, heads, filters, rng)?)
        } else {
            QueryBranch::Linear(
                (0..heads)
                    .map(|h| store.add(format!("{prefix}.w_q{h}"), xavier_uniform(&[window, d], window, d, rng)))
                    .collect::<Result<_>>()?,
            )
        };
        let mut w_k = Vec::with_capacity(heads);
        let mut w_v = Vec::with_capacity(heads);
        for h in 0..heads {
            w_k.push(store.add(format!("{prefix}.w_k{h}"), xavier_uniform(&[window, d], window, d, rng))?);
            w_v.push(store.add(format!("{prefix}.w_v{h}"), xavier_uniform(&[window, d], window, d, rng))?);
        }
        let out_w = store.add(
            format!("{prefix}.out.w"),
            xavier_uniform(&[heads * d, window], heads * d, window, rng),
        )?;
        let out_b = store.add(format!("{prefix}.out.b"), Tensor::zeros(&[window]))?;
        Ok(Self {
            query,
            w_k,
            w_v,
            out_w,
            out_b,
        })
    }

    pub fn heads(&self) -> usize {
        self.w_k.len()
    }
}

/// Post-norm encoder layer of the original Transformer:
/// `h = LN(x + MHA(x))`, `out = LN(h + FFN(h))`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StandardLayerParams {
    pub heads: Vec<AttentionHeadParams>,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub ln1: (ParamId, ParamId),
    pub ffn1: (ParamId, ParamId),
    pub ffn2: (ParamId, ParamId),
    pub ln2: (ParamId, ParamId),
}

pub const FFN_WIDTH: usize = 128;
const LAYER_NORM_EPS: f64 = 1e-5;

impl StandardLayerParams {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        window: usize,
        d: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || d == 0 {
            return Err(Error::Config("attention needs at least one head of width ≥ 1".into()));
        }
        let head_params = (0..heads)
            .map(|h| AttentionHeadParams::init(store, &format!("{prefix}.head{h}"), window, d, rng))
            .collect::<Result<_>>()?;
        let out_w = store.add(
            format!("{prefix}.out.w"),
            xavier_uniform(&[heads * d, window], heads * d, window, rng),
        )?;
        let out_b = store.add(format!("{prefix}.out.b"), Tensor::zeros(&[window]))?;
        let norm = |name: &str, store: &mut ParamStore<T>| -> Result<(ParamId, ParamId)> {
            Ok((
                store.add(format!("{prefix}.{name}.gamma"), Tensor::full(&[window], T::one()))?,
                store.add(format!("{prefix}.{name}.beta"), Tensor::zeros(&[window]))?,
            ))
        };
        let ln1 = norm("ln1", store)?;
        let ln2 = norm("ln2", store)?;
        let ffn1 = (
            store.add(
                format!("{prefix}.ffn1.w"),
                xavier_uniform(&[window, FFN_WIDTH], window, FFN_WIDTH, rng),
            )?,
            store.add(format!("{prefix}.ffn1.b"), Tensor::zeros(&[FFN_WIDTH]))?,
        );
        let ffn2 = (
            store.add(
                format!("{prefix}.ffn2.w"),
                xavier_uniform(&[FFN_WIDTH, window], FFN_WIDTH, window, rng),
            )?,
            store.add(format!("{prefix}.ffn2.b"), Tensor::zeros(&[window]))?,
        );
        Ok(Self {
            heads: head_params,
            out_w,
            out_b,
            ln1,
            ffn1,
            ffn2,
            ln2,
        })
    }
}

fn check_modes<T: Scalar>(g: &Graph<T>, x: Var, op: &'static str) -> Result<(usize, usize)> {
    let s = g.shape(x);
    if s.len() != 3 || s[1] != 3 {
        return Err(Error::dim(op, format!("expected [B, 3, L], got {s:?}")));
    }
    Ok((s[0], s[2]))
}

/// `Q = X·W_Q`, `K = X·W_K`, `V = X·W_V` for `X: [B, 3, L]`.
pub fn project_qkv<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    head: &AttentionHeadParams,
    params: &Bindings,
) -> Result<(Var, Var, Var)> {
    check_modes(g, x, "project_qkv")?;
    let q = g.matmul(x, params.get(head.w_q))?;
    let k = g.matmul(x, params.get(head.w_k))?;
    let v = g.matmul(x, params.get(head.w_v))?;
    Ok((q, k, v))
}

/// `softmax(Q Kᵀ / √d_k) V`. Returns `(output [B,3,d_v], scores [B,3,3])`.
pub fn scaled_dot_attention<T: Scalar>(g: &mut Graph<T>, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let (sq, sk) = (g.shape(q).to_vec(), g.shape(k).to_vec());
    if sq.len() != 3 || sk.len() != 3 {
        return Err(Error::dim("attention", format!("Q {sq:?}, K {sk:?}")));
    }
    if sq[2] != sk[2] {
        return Err(Error::Config(format!(
            "query width {} differs from key width {}",
            sq[2], sk[2]
        )));
    }
    let kt = g.transpose_last2(k)?;
    let logits = g.batch_matmul(q, kt)?;
    let scaled = g.mul_scalar(logits, T::one() / T::of(sk[2] as f64).sqrt());
    let scores = g.softmax(scaled, 2)?;
    let out = g.batch_matmul(scores, v)?;
    Ok((out, scores))
}

/// Concatenates per-head outputs along the feature axis and projects back.
fn merge_heads<T: Scalar>(
    g: &mut Graph<T>,
    outputs: &[Var],
    out_w: ParamId,
    out_b: ParamId,
    params: &Bindings,
) -> Result<Var> {
    let widths: Vec<usize> = outputs.iter().map(|&o| g.shape(o)[2]).collect();
    if widths.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::dim("multi_head", format!("inconsistent head widths {widths:?}")));
    }
    let cat = g.concat(outputs, 2)?;
    g.linear(cat, params.get(out_w), Some(params.get(out_b)))
}

/// Multi-head attention with linear projections.
/// Returns `([B, 3, L], per-head scores)`.
pub fn multi_head<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    heads: &[AttentionHeadParams],
    out_w: ParamId,
    out_b: ParamId,
    params: &Bindings,
) -> Result<(Var, Vec<Var>)> {
    if heads.is_empty() {
        return Err(Error::Config("multi-head attention needs at least one head".into()));
    }
    let mut outputs = Vec::with_capacity(heads.len());
    let mut scores = Vec::with_capacity(heads.len());
    for head in heads {
        let (q, k, v) = project_qkv(g, x, head, params)?;
        let (o, s) = scaled_dot_attention(g, q, k, v)?;
        outputs.push(o);
        scores.push(s);
    }
    Ok((merge_heads(g, &outputs, out_w, out_b, params)?, scores))
}

/// The shared convolution stack of the query branch: `[B,3,L] → [B,3,L]`.
pub fn conv_q_map<T: Scalar>(g: &mut Graph<T>, x: Var, p: &ConvQParams, params: &Bindings) -> Result<Var> {
    let (b, l) = check_modes(g, x, "conv_q")?;
    let img = g.reshape(x, &[b, 1, 3, l])?;
    let h = g.conv2d(img, params.get(p.conv1_kernel), Some(params.get(p.conv1_bias)), 1, 1)?;
    let h = g.relu(h);
    let h = g.conv2d(h, params.get(p.conv2_kernel), Some(params.get(p.conv2_bias)), 1, 1)?;
    g.reshape(h, &[b, 3, l])
}

/// Queries of head `head_index` from the convolutional branch.
pub fn conv_q<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    p: &ConvQParams,
    head_index: usize,
    params: &Bindings,
) -> Result<Var> {
    let proj = *p
        .proj
        .get(head_index)
        .ok_or_else(|| Error::Usage(format!("head {head_index} out of range")))?;
    let map = conv_q_map(g, x, p, params)?;
    g.matmul(map, params.get(proj))
}

/// One modified Transformer layer: `[B,3,L] → [B,3,L]` plus per-head scores.
pub fn modified_transformer_layer<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    p: &ModifiedLayerParams,
    params: &Bindings,
) -> Result<(Var, Vec<Var>)> {
    check_modes(g, x, "modified_transformer_layer")?;
    let heads = p.heads();
    let queries: Vec<Var> = match &p.query {
        QueryBranch::Conv(cq) => {
            if cq.proj.len() != heads {
                return Err(Error::Config("query projections do not match head count".into()));
            }
            let map = conv_q_map(g, x, cq, params)?;
            cq.proj
                .iter()
                .map(|&w| g.matmul(map, params.get(w)))
                .collect::<Result<_>>()?
        }
        QueryBranch::Linear(ws) => ws
            .iter()
            .map(|&w| g.matmul(x, params.get(w)))
            .collect::<Result<_>>()?,
    };
    if queries.len() != heads || p.w_v.len() != heads {
        return Err(Error::Config("per-head parameter counts disagree".into()));
    }
    let mut outputs = Vec::with_capacity(heads);
    let mut scores = Vec::with_capacity(heads);
    for h in 0..heads {
        let k = g.matmul(x, params.get(p.w_k[h]))?;
        let v = g.matmul(x, params.get(p.w_v[h]))?;
        let (o, s) = scaled_dot_attention(g, queries[h], k, v)?;
        outputs.push(o);
        scores.push(s);
    }
    Ok((merge_heads(g, &outputs, p.out_w, p.out_b, params)?, scores))
}

/// One post-norm encoder layer of the original Transformer.
pub fn standard_encoder_layer<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    p: &StandardLayerParams,
    params: &Bindings,
) -> Result<(Var, Vec<Var>)> {
    let (attn, scores) = multi_head(g, x, &p.heads, p.out_w, p.out_b, params)?;
    let eps = T::of(LAYER_NORM_EPS);
    let h = g.add(x, attn)?;
    let h = g.layer_norm(h, params.get(p.ln1.0), params.get(p.ln1.1), eps)?;
    let f = g.linear(h, params.get(p.ffn1.0), Some(params.get(p.ffn1.1)))?;
    let f = g.relu(f);
    let f = g.linear(f, params.get(p.ffn2.0), Some(params.get(p.ffn2.1)))?;
    let out = g.add(h, f)?;
    let out = g.layer_norm(out, params.get(p.ln2.0), params.get(p.ln2.1), eps)?;
    Ok((out, scores))
}

/// A `3 × 3` row-stochastic attention map for one (layer, head).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub layer: usize,
    pub head: usize,
    pub modes: [Mode; 3],
    pub values: [[f64; 3]; 3],
}

impl ScoreMatrix {
    /// Reads sample `sample` out of a `[B, 3, 3]` score node.
    pub fn from_graph<T: Scalar>(g: &Graph<T>, scores: Var, sample: usize, layer: usize, head: usize) -> Result<Self> {
        let s = g.shape(scores);
        if s.len() != 3 || s[1] != 3 || s[2] != 3 || sample >= s[0] {
            return Err(Error::dim("score_matrix", format!("sample {sample} of {s:?}")));
        }
        let v = &g.value(scores)[sample * 9..(sample + 1) * 9];
        let mut values = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                values[r][c] = v[r * 3 + c].as_f64();
            }
        }
        Ok(Self {
            layer,
            head,
            modes: Mode::ALL,
            values,
        })
    }

    /// Largest deviation of a row sum from 1.
    pub fn row_sum_error(&self) -> f64 {
        self.values
            .iter()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// CSV with one labelled block per matrix, blocks separated by blank lines:
///
/// ```text
/// layer 0 head 0,subway,taxi,bus
/// subway,0.7,0.2,0.1
/// taxi,...
/// bus,...
/// ```
pub fn scores_to_csv(matrices: &[ScoreMatrix]) -> String {
    let mut out = String::new();
    for (i, m) in matrices.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let labels: Vec<&str> = m.modes.iter().map(|x| x.label()).collect();
        let _ = writeln!(out, "layer {} head {},{}", m.layer, m.head, labels.join(","));
        for (r, row) in m.values.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{},{}", labels[r], cells.join(","));
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct ScoreDocument {
    matrices: Vec<ScoreMatrix>,
}

/// `{"matrices": [{"layer", "head", "modes", "values"}, ...]}`.
pub fn scores_to_json(matrices: &[ScoreMatrix]) -> String {
    serde_json::to_string_pretty(&ScoreDocument {
        matrices: matrices.to_vec(),
    })
    .expect("score matrices serialize")
}

pub fn scores_from_json(text: &str) -> Result<Vec<ScoreMatrix>> {
    serde_json::from_str::<ScoreDocument>(text)
        .map(|d| d.matrices)
        .map_err(|e| Error::Data(format!("score json: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn uniform_scores_when_queries_vanish() {
        let mut g = Graph::<f64>::new();
        let q = g.constant(Tensor::zeros(&[1, 3, 4]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let k = g.constant(crate::autodiff::uniform(&[1, 3, 4], -1.0, 1.0, &mut rng));
        let vt = crate::autodiff::uniform::<f64>(&[1, 3, 2], -1.0, 1.0, &mut rng);
        let v = g.constant(vt.clone());
        let (out, s) = scaled_dot_attention(&mut g, q, k, v).unwrap();
        assert!(g.value(s).iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        for r in 0..3 {
            for c in 0..2 {
                let col_mean = (0..3).map(|i| vt.at(&[0, i, c])).sum::<f64>() / 3.0;
                assert!((g.value(out)[r * 2 + c] - col_mean).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn width_mismatch_is_config_error() {
        let mut g = Graph::<f64>::new();
        let q = g.constant(Tensor::zeros(&[1, 3, 4]));
        let k = g.constant(Tensor::zeros(&[1, 3, 5]));
        let v = g.constant(Tensor::zeros(&[1, 3, 5]));
        assert!(matches!(scaled_dot_attention(&mut g, q, k, v), Err(Error::Config(_))));
    }

    #[test]
    fn csv_blocks_are_labelled() {
        let m = ScoreMatrix {
            layer: 1,
            head: 2,
            modes: Mode::ALL,
            values: [[0.7, 0.2, 0.1], [0.25, 0.5, 0.25], [0.0, 0.0, 1.0]],
        };
        let csv = scores_to_csv(&[m.clone(), m.clone()]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "layer 1 head 2,subway,taxi,bus");
        assert_eq!(lines[1], "subway,0.7,0.2,0.1");
        assert_eq!(lines[4], "");
        assert_eq!(scores_from_json(&scores_to_json(&[m.clone()])).unwrap(), vec![m]);
    }
}
