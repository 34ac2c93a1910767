//! Joint-attention flow-matching backbone.
//!
//! [`ModelAdapter`] is the surface the pipeline needs from any backbone:
//! token partition sizes, a per-step additive mask, capture of designated
//! heads, and a latent that the caller may replace between steps. [`ToyModel`]
//! is a small randomly initialised instantiation used for tests and demos.

mod attention;
mod sampler;
mod toy;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::region_binding::AttentionMask;

pub use attention::{masked_attention, HeadCapture};
pub use sampler::{sample, CaptureSpec, MaskSchedule, MaskedUntil, SampleState, Schedule, Trajectory, Unmasked};
pub use toy::{tokenize_words, ToyModel};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("query row {row} has every key masked")]
    FullyMaskedRow { row: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("prompt has no tokens")]
    EmptyPrompt,
    #[error("block {block} head {head} does not exist")]
    HeadOutOfRange { block: usize, head: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("non-finite value produced at step {step}")]
    NonFinite { step: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// (height_tokens, width_tokens)
    pub latent_grid: (usize, usize),
    pub latent_channels: usize,
    pub embed_dim: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub text_len_max: usize,
    pub vocab_size: usize,
    pub mlp_ratio: usize,
    pub steps_default: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_grid: (8, 8),
            latent_channels: 4,
            embed_dim: 32,
            num_blocks: 4,
            num_heads: 4,
            text_len_max: 16,
            vocab_size: 1024,
            mlp_ratio: 2,
            steps_default: 50,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return bad("embed_dim must be a positive multiple of num_heads");
        }
        if !self.embed_dim.is_multiple_of(4) {
            return bad("embed_dim must be divisible by 4 for positional encoding");
        }
        if self.latent_grid.0 < 2 || self.latent_grid.1 < 2 {
            return bad("latent grid sides must be at least 2");
        }
        if self.latent_channels == 0 || self.text_len_max == 0 || self.num_blocks == 0 || self.mlp_ratio == 0 {
            return bad("channels, text length, blocks and mlp ratio must be positive");
        }
        if self.vocab_size < 2 {
            return bad("vocabulary needs a padding id and at least one word id");
        }
        Ok(())
    }

    pub fn n_visual(&self) -> usize {
        self.latent_grid.0 * self.latent_grid.1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedPrompt {
    pub token_ids: Vec<u32>,
    /// `true` marks padding.
    pub pad_flags: Vec<bool>,
}

impl TokenizedPrompt {
    pub fn new(token_ids: Vec<u32>, pad_flags: Vec<bool>) -> Result<Self, ModelError> {
        if token_ids.len() != pad_flags.len() {
            return Err(ModelError::ShapeMismatch("token ids and pad flags differ in length".into()));
        }
        if pad_flags.iter().all(|&p| p) {
            return Err(ModelError::EmptyPrompt);
        }
        Ok(Self { token_ids, pad_flags })
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Hidden representation flowing through the blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub visual_tokens: Array2<f64>,
    pub text_tokens: Array2<f64>,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HeadSelector {
    pub block: usize,
    pub head: usize,
}

/// Softmax weights of one head for the text queries, over every key.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub block_index: usize,
    pub head_index: usize,
    pub step_index: usize,
    pub n_visual: usize,
    /// `n_text x (n_visual + n_text)`, row-stochastic.
    pub weights: Array2<f64>,
}

impl AttentionRecord {
    pub fn selector(&self) -> HeadSelector {
        HeadSelector { block: self.block_index, head: self.head_index }
    }

    /// Text-query rows restricted to visual keys.
    pub fn text_to_visual(&self) -> ArrayView2<'_, f64> {
        self.weights.slice(s![.., ..self.n_visual])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub grid: (usize, usize),
    pub n_text: usize,
    pub latent_channels: usize,
}

impl TokenLayout {
    pub fn n_visual(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn n_total(&self) -> usize {
        self.n_visual() + self.n_text
    }
}

pub trait ModelAdapter: Send + Sync {
    fn token_layout(&self) -> TokenLayout;

    fn num_blocks(&self) -> usize;

    fn num_heads(&self) -> usize;

    /// Tokenizes to exactly `token_layout().n_text` positions.
    fn tokenize(&self, prompt: &str) -> Result<TokenizedPrompt, ModelError>;

    /// Velocity over visual latent tokens at time `tau`, plus one record per
    /// requested head, in request order.
    fn predict_velocity(
        &self,
        latent: &Array2<f64>,
        tau: f64,
        prompt: &TokenizedPrompt,
        mask: Option<&AttentionMask>,
        capture: &[HeadSelector],
    ) -> Result<(Array2<f64>, Vec<AttentionRecord>), ModelError>;

    fn schedule(&self, steps: usize) -> Result<Schedule, ModelError> {
        Schedule::uniform(steps)
    }

    fn describe(&self) -> String;

    fn check_head(&self, head: HeadSelector) -> Result<(), ModelError> {
        if head.block >= self.num_blocks() || head.head >= self.num_heads() {
            return Err(ModelError::HeadOutOfRange { block: head.block, head: head.head });
        }
        Ok(())
    }
}
