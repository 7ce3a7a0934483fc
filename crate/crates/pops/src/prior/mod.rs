//! The diffusion-prior denoiser: token layout construction, timestep
//! encoding, a transformer over the 79-token sequence, and output
//! extraction at the noised-token position.

mod net;

pub use net::{ParamGroup, ParamInfo, PriorNet};

use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::{Error, Result};

/// Condition positions inherited from the text-prior input layout.
pub const CONDITION_SLOTS: usize = 77;
/// 77 condition slots + timestep token + noised-target token.
pub const SEQ_LEN: usize = 79;
pub const TIME_INDEX: usize = 77;
/// The prediction is read from the output at the noised-token position.
pub const OUTPUT_INDEX: usize = 78;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    Causal,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeEmbeddingKind {
    Sinusoidal,
    Learned,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    pub attention_kind: AttentionKind,
    pub time_embedding_kind: TimeEmbeddingKind,
}

impl PriorConfig {
    /// Desk-scale configuration sized so acceptance tests run on CPU in
    /// minutes.
    pub fn toy(d: usize) -> Self {
        PriorConfig {
            d,
            layers: 4,
            heads: 4,
            width: 64,
            attention_kind: AttentionKind::Causal,
            time_embedding_kind: TimeEmbeddingKind::Sinusoidal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 {
            return Err(Error::Config("layers must be >= 1".into()));
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "width {} not divisible by heads {}",
                self.width, self.heads
            )));
        }
        if self.d == 0 || self.width == 0 {
            return Err(Error::Config("d and width must be positive".into()));
        }
        Ok(())
    }
}

/// The prior's input: 77 condition slots, a timestep, and the embedding
/// being denoised. Unassigned slots are exactly the zero vector.
#[derive(Debug, Clone)]
pub struct TokenSequence {
    slots: Vec<Embedding>,
    t: usize,
    noised: Embedding,
}

impl TokenSequence {
    pub fn slots(&self) -> &[Embedding] {
        &self.slots
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn noised(&self) -> &Embedding {
        &self.noised
    }

    pub fn len(&self) -> usize {
        SEQ_LEN
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.noised.dim()
    }
}

/// Populates condition slots at the given indices, zeros elsewhere; time
/// and noised tokens are appended in that order.
pub fn build_sequence(
    conditions: &[(usize, Embedding)],
    t: usize,
    noised: &Embedding,
) -> Result<TokenSequence> {
    let d = noised.dim();
    let mut slots = vec![Embedding::zeros(d, crate::SpaceTag::Image); CONDITION_SLOTS];
    let mut seen = vec![false; CONDITION_SLOTS];
    for (idx, emb) in conditions {
        if *idx >= CONDITION_SLOTS {
            return Err(Error::SlotOutOfRange(*idx));
        }
        if seen[*idx] {
            return Err(Error::DuplicateSlot(*idx));
        }
        if emb.dim() != d {
            return Err(Error::DimMismatch { expected: d, got: emb.dim() });
        }
        seen[*idx] = true;
        slots[*idx] = emb.clone();
    }
    Ok(TokenSequence { slots, t, noised: noised.clone() })
}

/// Which parameter groups receive gradients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FreezePolicy {
    All,
    /// Only the listed transformer layers train; embeddings and
    /// projections stay frozen.
    Subset(Vec<usize>),
}

/// Per-tensor trainability mask, aligned with the net's parameter layout.
#[derive(Debug, Clone)]
pub struct FreezeMask {
    trainable: Vec<bool>,
}

impl FreezeMask {
    pub fn tensor_trainable(&self, tensor_index: usize) -> bool {
        self.trainable[tensor_index]
    }

    pub fn any_trainable(&self) -> bool {
        self.trainable.iter().any(|&b| b)
    }

    pub fn trainable_slice(&self) -> &[bool] {
        &self.trainable
    }
}

/// Builds the trainable mask for a freeze policy.
pub fn freeze_policy(net: &PriorNet, policy: &FreezePolicy) -> Result<FreezeMask> {
    let layers = net.config().layers;
    if let FreezePolicy::Subset(indices) = policy {
        for &i in indices {
            if i >= layers {
                return Err(Error::BadLayerIndex { index: i, layers });
            }
        }
    }
    let trainable = net
        .layout()
        .iter()
        .map(|info| match policy {
            FreezePolicy::All => true,
            FreezePolicy::Subset(indices) => match info.group {
                ParamGroup::Layer(i) => indices.contains(&i),
                _ => false,
            },
        })
        .collect();
    Ok(FreezeMask { trainable })
}
