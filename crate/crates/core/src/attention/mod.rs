//! Attention modules applied to the pre-RNN latent state at each observation.
//!
//! Every sequence-consuming module works on the causal prefix of latent states,
//! so the step-`i` output never depends on later observations. The `step`
//! methods compute that prefix result incrementally.

mod channel;
mod pyramid;
mod resample;
mod tvf;

pub use channel::StaticChannelAttention;
pub use pyramid::{default_levels, PyramidState, PyramidalAttention};
pub use resample::{downsample, downsample_indices, interpolation_matrix, upsample_linear};
pub use tvf::{TvfAttention, TvfEncoder, TvfState};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{Bound, ParameterStore};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttentionKind {
    None,
    StaticChannel,
    TvfLstm,
    TvfTransformer,
    Pyramidal,
}

impl AttentionKind {
    pub const ALL: [AttentionKind; 5] = [
        AttentionKind::None,
        AttentionKind::StaticChannel,
        AttentionKind::TvfLstm,
        AttentionKind::TvfTransformer,
        AttentionKind::Pyramidal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionKind::None => "none",
            AttentionKind::StaticChannel => "static-channel",
            AttentionKind::TvfLstm => "tvf-lstm",
            AttentionKind::TvfTransformer => "tvf-transformer",
            AttentionKind::Pyramidal => "pyramidal",
        }
    }
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown attention kind {s:?}")))
    }
}

/// Hyperparameters of the attention module.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionConfig {
    pub kind: AttentionKind,
    /// Heads for every self-attention block.
    pub heads: usize,
    /// Static channel reduction ratio.
    pub reduction: usize,
    /// TVF-LSTM encoder width; latent width when `None`.
    pub tvf_hidden: Option<usize>,
    /// Number of TVF-transformer blocks.
    pub tvf_depth: usize,
    /// Pyramid levels; derived from sequence length when `None`.
    pub pyramid_levels: Option<usize>,
    pub stride_base: usize,
    /// Initial bias of the sigmoid gate head (static channel and TVF), so
    /// gates start near `sigmoid(gate_bias)` instead of one half.
    pub gate_bias: f64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            kind: AttentionKind::None,
            heads: 1,
            reduction: 2,
            tvf_hidden: None,
            tvf_depth: 1,
            pyramid_levels: None,
            stride_base: 2,
            gate_bias: 3.0,
        }
    }
}

#[derive(Debug, Clone)]
pub enum LatentAttention {
    None,
    StaticChannel(StaticChannelAttention),
    Tvf(TvfAttention),
    Pyramidal(PyramidalAttention),
}

/// Per-forward state of a [`LatentAttention`].
#[derive(Debug, Clone)]
pub enum AttentionState<'t, T: Scalar = f64> {
    Stateless,
    Tvf(TvfState<'t, T>),
    Pyramid(PyramidState<'t, T>),
}

impl LatentAttention {
    /// `max_len` bounds the sequence length (position table and default pyramid depth).
    pub fn new<T: Scalar>(
        store: &mut ParameterStore<T>,
        name: &str,
        cfg: &AttentionConfig,
        width: usize,
        max_len: usize,
    ) -> Result<Self> {
        let module = match cfg.kind {
            AttentionKind::None => LatentAttention::None,
            AttentionKind::StaticChannel => {
                LatentAttention::StaticChannel(StaticChannelAttention::new(store, name, width, cfg.reduction)?)
            }
            AttentionKind::TvfLstm => {
                LatentAttention::Tvf(TvfAttention::lstm(store, name, width, cfg.tvf_hidden.unwrap_or(width))?)
            }
            AttentionKind::TvfTransformer => LatentAttention::Tvf(TvfAttention::transformer(
                store,
                name,
                width,
                cfg.heads,
                cfg.tvf_depth,
                max_len,
            )?),
            AttentionKind::Pyramidal => LatentAttention::Pyramidal(PyramidalAttention::new(
                store,
                name,
                width,
                cfg.heads,
                cfg.pyramid_levels.unwrap_or_else(|| default_levels(max_len)),
                cfg.stride_base,
            )?),
        };
        let head = match cfg.kind {
            AttentionKind::StaticChannel => Some("excite"),
            AttentionKind::TvfLstm | AttentionKind::TvfTransformer => Some("head"),
            _ => None,
        };
        if let Some(head) = head {
            let bias = format!("{name}.{head}.bias");
            store.set(&bias, Tensor::full([width], T::lit(cfg.gate_bias)))?;
        }
        Ok(module)
    }

    pub fn kind(&self) -> Option<&'static str> {
        match self {
            LatentAttention::None => None,
            LatentAttention::StaticChannel(_) => Some("static-channel"),
            LatentAttention::Tvf(t) => Some(match t.encoder {
                TvfEncoder::Lstm(_) => "tvf-lstm",
                TvfEncoder::Transformer { .. } => "tvf-transformer",
            }),
            LatentAttention::Pyramidal(_) => Some("pyramidal"),
        }
    }

    pub fn start<'t, T: Scalar>(&self, tape: &'t Tape<T>, batch: usize) -> AttentionState<'t, T> {
        match self {
            LatentAttention::Tvf(t) => AttentionState::Tvf(t.start(tape, batch)),
            LatentAttention::Pyramidal(p) => AttentionState::Pyramid(p.start()),
            _ => AttentionState::Stateless,
        }
    }

    /// Attended state for the newest pre-RNN state `h: [B, H]`.
    ///
    /// `gate_override` replaces the learned gate of gating modules by a
    /// constant; it has no effect on the pyramidal transform.
    pub fn step<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        state: &mut AttentionState<'t, T>,
        h: Var<'t, T>,
        gate_override: Option<T>,
    ) -> Result<Var<'t, T>> {
        let fixed = |h: Var<'t, T>, g: T| {
            let width = h.shape()[1];
            h.mul(h.tape().constant(Tensor::full([width], g)))
        };
        match (self, state) {
            (LatentAttention::None, _) => Ok(h),
            (LatentAttention::StaticChannel(a), _) => match gate_override {
                Some(g) => a.gate_fixed(h, g),
                None => Ok(a.gate(p, h)?.0),
            },
            (LatentAttention::Tvf(a), AttentionState::Tvf(s)) => {
                let gate = a.step(p, s, h)?;
                match gate_override {
                    Some(g) => fixed(h, g),
                    None => h.mul(gate),
                }
            }
            (LatentAttention::Pyramidal(a), AttentionState::Pyramid(s)) => a.step(p, s, h),
            _ => Err(Error::invalid("attention state does not match its module")),
        }
    }
}
