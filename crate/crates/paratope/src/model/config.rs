//! Architecture hyperparameters.

use crate::geom::RbfSpec;
use crate::graph::GraphConfig;

/// Encoder dimensions. Input features are lifted 108 → 32 → 256 and refined
/// by `n_layers` relation-aware equivariant layers.
#[derive(Debug, Clone)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub message_dim: usize,
    pub msg_hidden: usize,
    pub node_hidden: usize,
    pub coord_hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden_dim: 256,
            n_layers: 4,
            message_dim: 64,
            msg_hidden: 64,
            node_hidden: 256,
            coord_hidden: 32,
        }
    }
}

/// Distance-biased cross-attention geometry.
#[derive(Debug, Clone)]
pub struct AttentionConfig {
    pub heads: usize,
    pub head_dim: usize,
    /// Gaussian bias bandwidth σ in Å.
    pub bandwidth: f64,
    /// Internal test hook: flips the sign inside the distance bias.
    pub bias_sign: f64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            heads: 2,
            head_dim: 128,
            bandwidth: 4.0,
            bias_sign: 1.0,
        }
    }
}

/// Three-stage decoder dimensions.
#[derive(Debug, Clone)]
pub struct DecoderConfig {
    pub fingerprint_dim: usize,
    /// K for antigen-neighbor aggregation (contact context, injection,
    /// environment descriptors).
    pub knn_k: usize,
    pub contact_hidden: [usize; 2],
    /// Cosine-similarity threshold defining fingerprint-loss positives.
    pub fp_similarity_threshold: f64,
    /// Fixed inverse-temperature gain on the sequence logits.
    pub logit_gain: f64,
    /// Basis for distance features in the contact stage.
    pub contact_rbf: RbfSpec<f64>,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            fingerprint_dim: 32,
            knn_k: 8,
            contact_hidden: [128, 128],
            fp_similarity_threshold: 0.9,
            logit_gain: 8.0,
            contact_rbf: RbfSpec::uniform(0.0, 16.0, 16).unwrap(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ModelConfig {
    pub graph: GraphConfig,
    pub encoder: EncoderConfig,
    pub attention: AttentionConfig,
    pub decoder: DecoderConfig,
    /// Dropout rate on MLP hidden activations (train mode only).
    pub dropout: f64,
}

impl ModelConfig {
    pub fn standard() -> Self {
        Self {
            dropout: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.attention.heads * self.attention.head_dim != self.encoder.hidden_dim {
            return Err(format!(
                "attention heads ({}) x head_dim ({}) must equal hidden_dim ({})",
                self.attention.heads, self.attention.head_dim, self.encoder.hidden_dim
            ));
        }
        if self.attention.bandwidth <= 0.0 {
            return Err("attention bandwidth must be positive".into());
        }
        if self.decoder.knn_k == 0 {
            return Err("decoder knn_k must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err("dropout must be in [0, 1)".into());
        }
        self.graph.validate().map_err(|e| e.to_string())?;
        Ok(())
    }
}
