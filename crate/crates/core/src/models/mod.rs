//! The residual Transformer, its ablations and the baseline zoo behind one
//! predictor interface: `[B, 3, L]` normalized windows in, `[B, 3]` out.

mod checkpoint;
mod config;
mod layers;
mod network;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::ScoreMatrix;
use crate::autodiff::{Bindings, Graph, ParamStore, Tensor, Var};
use crate::dataflow::NormalizationParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_atomic, write_checkpoint, CHECKPOINT_VERSION,
};
pub use config::{Architecture, BaselineKind, ModelConfig, Variant};
pub use layers::{Conv, Dense, Mlp};
pub use network::ForwardTrace;
pub use network::{
    BPNN_WIDTHS, CNN1D_FILTERS, CNN1D_WIDTHS, CNN2D_FILTERS, CNN2D_WIDTHS, CONVLSTM_FILTERS, CONVLSTM_LAYERS,
    CONVLSTM_WIDTHS, DEEP_HEAD_WIDTHS, LSTM_HIDDEN, LSTM_LAYERS, STRESNET_FILTERS, TRANSFORMER_D, TRANSFORMER_HEADS,
    TRANSFORMER_LAYERS, VARIANT_E_LAYERS,
};

use network::Network;

/// A built network with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    net: Network,
    /// Bounds the model was trained under; saved with checkpoints so
    /// predictions can be mapped back to counts.
    pub normalization: Option<NormalizationParams>,
}

impl<T: Scalar> Model<T> {
    /// Builds and initializes any architecture from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let net = match config.architecture {
            Architecture::ResTransformer(v) => network::build_res(&config, v, &mut params, &mut rng)?,
            Architecture::Baseline(k) => network::build_baseline_network(k, config.window, &mut params, &mut rng)?,
        };
        Ok(Self {
            config,
            params,
            net,
            normalization: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn window(&self) -> usize {
        self.config.window
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.numel()
    }

    /// `(layers, heads)` for models that record score matrices.
    pub fn attention_shape(&self) -> Option<(usize, usize)> {
        self.net.attention_shape()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 3 || shape[1] != 3 || shape[2] != self.config.window {
            return Err(Error::dim(
                "forward",
                format!("expected [B, 3, {}], got {shape:?}", self.config.window),
            ));
        }
        Ok(())
    }

    /// Builds the forward pass on `graph` using parameters bound by
    /// [`ParamStore::bind`] (training) or [`ParamStore::bind_frozen`].
    pub fn forward(&self, graph: &mut Graph<T>, params: &Bindings, x: Var) -> Result<ForwardTrace> {
        self.check_input(graph.shape(x))?;
        if params.vars().len() != self.params.len() {
            return Err(Error::Usage("bindings do not belong to this model".into()));
        }
        self.net.forward(graph, x, params)
    }

    /// Inference on a `[B, 3, L]` batch.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x.shape())?;
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let trace = self.net.forward(&mut g, xv, &p)?;
        Ok(g.tensor(trace.output))
    }

    /// Runs `x` through the model and returns the score matrices of every
    /// sample, indexed `[sample][layer · heads + head]`.
    pub fn attention_scores(&self, x: &Tensor<T>) -> Result<Vec<Vec<ScoreMatrix>>> {
        self.check_input(x.shape())?;
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let trace = self.net.forward(&mut g, xv, &p)?;
        let mut probe = AttentionProbe::new();
        probe.observe(&g, &trace)?;
        (0..x.shape()[0]).map(|s| probe.scores(s)).collect()
    }
}

/// Builds the full residual Transformer.
pub fn build_res_transformer<T: Scalar>(config: &ModelConfig) -> Result<Model<T>> {
    if config.architecture != Architecture::ResTransformer(Variant::Full) {
        return Err(Error::Config(format!(
            "build_res_transformer needs the full variant, got `{}`",
            config.architecture
        )));
    }
    Model::new(config.clone())
}

/// Builds the full model or one of its ablations.
pub fn build_variant<T: Scalar>(config: &ModelConfig, variant: Variant) -> Result<Model<T>> {
    Model::new(ModelConfig {
        architecture: Architecture::ResTransformer(variant),
        ..config.clone()
    })
}

/// Builds a baseline for window length `window`.
pub fn build_baseline<T: Scalar>(kind: BaselineKind, window: usize, seed: u64) -> Result<Model<T>> {
    Model::new(ModelConfig {
        architecture: Architecture::Baseline(kind),
        window,
        seed,
        ..ModelConfig::default()
    })
}

/// Captures score matrices from a forward pass for later export.
#[derive(Debug, Clone, Default)]
pub struct AttentionProbe {
    /// `[sample][layer · heads + head]`
    recorded: Option<Vec<Vec<ScoreMatrix>>>,
}

impl AttentionProbe {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe<T: Scalar>(&mut self, graph: &Graph<T>, trace: &ForwardTrace) -> Result<()> {
        if trace.scores.is_empty() {
            return Err(Error::Usage("model has no attention layers".into()));
        }
        let batch = graph.shape(trace.scores[0][0])[0];
        let mut per_sample = vec![Vec::new(); batch];
        for (sample, out) in per_sample.iter_mut().enumerate() {
            for (layer, heads) in trace.scores.iter().enumerate() {
                for (head, &s) in heads.iter().enumerate() {
                    out.push(ScoreMatrix::from_graph(graph, s, sample, layer, head)?);
                }
            }
        }
        self.recorded = Some(per_sample);
        Ok(())
    }

    /// All `layers · heads` matrices of one sample.
    pub fn scores(&self, sample: usize) -> Result<Vec<ScoreMatrix>> {
        let recorded = self
            .recorded
            .as_ref()
            .ok_or_else(|| Error::Usage("no forward pass observed yet".into()))?;
        recorded
            .get(sample)
            .cloned()
            .ok_or_else(|| Error::Usage(format!("sample {sample} not in observed batch of {}", recorded.len())))
    }
}

/// Score matrices of the first sample of the most recent observed pass.
pub fn extract_scores(probe: &AttentionProbe) -> Result<Vec<ScoreMatrix>> {
    probe.scores(0)
}
