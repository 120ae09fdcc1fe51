use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The full model and its five ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    /// Linear query projection instead of the convolutional branch.
    A,
    /// No shortcut and no post-attention convolutions.
    B,
    /// No post-attention convolutions; shortcut kept.
    C,
    /// Post-attention convolutions kept; no shortcut.
    D,
    /// Eight standard encoder layers instead of the modified ones.
    E,
}

impl Variant {
    pub const ABLATIONS: [Variant; 5] = [Variant::A, Variant::B, Variant::C, Variant::D, Variant::E];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    Bpnn,
    Cnn1d,
    Cnn2d,
    Lstm,
    ConvLstm,
    StResNet,
    Transformer,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 7] = [
        BaselineKind::Bpnn,
        BaselineKind::Cnn1d,
        BaselineKind::Lstm,
        BaselineKind::ConvLstm,
        BaselineKind::Cnn2d,
        BaselineKind::StResNet,
        BaselineKind::Transformer,
    ];
}

/// Every buildable network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Architecture {
    ResTransformer(Variant),
    Baseline(BaselineKind),
}

impl Architecture {
    /// All 13 architectures: the full model, its ablations, then the baselines.
    pub fn all() -> Vec<Architecture> {
        let mut out = vec![Architecture::ResTransformer(Variant::Full)];
        out.extend(Variant::ABLATIONS.map(Architecture::ResTransformer));
        out.extend(BaselineKind::ALL.map(Architecture::Baseline));
        out
    }

    /// Command-line identifier.
    pub fn key(self) -> &'static str {
        match self {
            Architecture::ResTransformer(v) => match v {
                Variant::Full => "res-transformer",
                Variant::A => "a",
                Variant::B => "b",
                Variant::C => "c",
                Variant::D => "d",
                Variant::E => "e",
            },
            Architecture::Baseline(k) => match k {
                BaselineKind::Bpnn => "bpnn",
                BaselineKind::Cnn1d => "cnn1d",
                BaselineKind::Cnn2d => "cnn2d",
                BaselineKind::Lstm => "lstm",
                BaselineKind::ConvLstm => "convlstm",
                BaselineKind::StResNet => "stresnet",
                BaselineKind::Transformer => "transformer",
            },
        }
    }

    /// Row label used in result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Architecture::ResTransformer(v) => match v {
                Variant::Full => "Res-Transformer",
                Variant::A => "Res-Trans(A)",
                Variant::B => "Res-Trans(B)",
                Variant::C => "Res-Trans(C)",
                Variant::D => "Res-Trans(D)",
                Variant::E => "Res-Trans(E)",
            },
            Architecture::Baseline(k) => match k {
                BaselineKind::Bpnn => "BPNN",
                BaselineKind::Cnn1d => "CNN-1D",
                BaselineKind::Cnn2d => "CNN-2D",
                BaselineKind::Lstm => "LSTM",
                BaselineKind::ConvLstm => "ConvLSTM",
                BaselineKind::StResNet => "ST-ResNet",
                BaselineKind::Transformer => "Transformer",
            },
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        Architecture::all()
            .into_iter()
            .find(|a| a.key() == key || (key == "full" && *a == Architecture::ResTransformer(Variant::Full)))
            .ok_or_else(|| Error::Config(format!("unknown model `{s}`")))
    }
}

impl TryFrom<String> for Architecture {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Architecture> for String {
    fn from(a: Architecture) -> Self {
        a.key().to_string()
    }
}

fn default_architecture() -> Architecture {
    Architecture::ResTransformer(Variant::Full)
}
fn default_window() -> usize {
    12
}
fn default_d_model() -> usize {
    12
}
fn default_heads() -> usize {
    4
}
fn default_layers() -> usize {
    4
}
fn default_filters() -> usize {
    8
}
fn default_pre_fc() -> usize {
    128
}
fn default_head_widths() -> Vec<usize> {
    vec![128, 64, 32, 3]
}

/// Architecture hyperparameters. Defaults are the tuned configuration:
/// window 12, width 12, 4 heads, 4 layers.
///
/// `d_model`, `heads`, `layers`, `pre_fc_width` and `head_widths` shape the
/// residual Transformer family; baselines use fixed recipes and read only
/// `window` and `seed`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_architecture")]
    pub architecture: Architecture,
    #[serde(default = "default_window")]
    pub window: usize,
    /// Shared query/key/value width per head.
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    /// Number of modified encoder layers.
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_filters")]
    pub conv_filters: usize,
    /// Hidden width of the row-wise `L → w → L` block after the encoder.
    #[serde(default = "default_pre_fc")]
    pub pre_fc_width: usize,
    /// Output stack after flattening; must end in 3.
    #[serde(default = "default_head_widths")]
    pub head_widths: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: default_architecture(),
            window: default_window(),
            d_model: default_d_model(),
            heads: default_heads(),
            layers: default_layers(),
            conv_filters: default_filters(),
            pre_fc_width: default_pre_fc(),
            head_widths: default_head_widths(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn for_architecture(architecture: Architecture) -> Self {
        Self {
            architecture,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("window", self.window),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("layers", self.layers),
            ("conv_filters", self.conv_filters),
            ("pre_fc_width", self.pre_fc_width),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.head_widths.last() != Some(&3) || self.head_widths.contains(&0) {
            return Err(Error::Config(format!(
                "head widths must be positive and end in 3, got {:?}",
                self.head_widths
            )));
        }
        Ok(())
    }
}
