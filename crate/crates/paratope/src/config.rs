//! On-disk configuration: a TOML file mirroring the runtime config structs.
//! Unknown keys are rejected by name, every field has a default, and the
//! resolved configuration can be dumped back out.

use serde::{Deserialize, Serialize};

use crate::losses::LossWeights;
use crate::model::config::{AttentionConfig, DecoderConfig, EncoderConfig, ModelConfig};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

macro_rules! section {
    ($name:ident { $($field:ident : $ty:ty = $default:expr),+ $(,)? }) => {
        #[derive(Debug, Clone, Serialize, Deserialize)]
        #[serde(deny_unknown_fields, default)]
        pub struct $name {
            $(pub $field: $ty,)+
        }
        impl Default for $name {
            fn default() -> Self {
                Self { $($field: $default,)+ }
            }
        }
    };
}

section!(GraphSection {
    radial_cutoff: f64 = 10.0,
    knn_k: usize = 8,
    inter_radial_cutoff: f64 = 12.0,
    inter_knn_k: usize = 8,
    n_virtual: usize = 3,
});

section!(EncoderSection {
    embed_dim: usize = 32,
    hidden_dim: usize = 256,
    n_layers: usize = 4,
    message_dim: usize = 64,
    msg_hidden: usize = 64,
    node_hidden: usize = 256,
    coord_hidden: usize = 32,
});

section!(AttentionSection {
    heads: usize = 2,
    head_dim: usize = 128,
    bandwidth: f64 = 4.0,
});

section!(DecoderSection {
    fingerprint_dim: usize = 32,
    knn_k: usize = 8,
    contact_hidden: [usize; 2] = [128, 128],
    logit_gain: f64 = 8.0,
});

section!(LossSection {
    lambda_coord: f64 = 0.598,
    lambda_contact: f64 = 1.763,
    lambda_fp: f64 = 0.020,
    lambda_pair: f64 = 0.103,
    lambda_dock: f64 = 0.233,
    lambda_aux: f64 = 0.200,
    focal_gamma: f64 = 2.0,
    contact_alpha: f64 = 4.47,
    tau_fp: f64 = 0.1,
    tau_pair: f64 = 0.1,
    dock_cutoff: f64 = 8.0,
    fp_threshold: f64 = 0.9,
    huber_delta: f64 = 1.0,
    detach_contact_weights: bool = true,
});

section!(TrainSection {
    lr: f64 = 6.31e-4,
    lr_decay: f64 = 0.944,
    clip: f64 = 0.5,
    batch_size: usize = 8,
    dropout: f64 = 0.1,
    patience: usize = 10,
    max_epochs: usize = 200,
    seed: u64 = 0,
    precision: Precision = Precision::F32,
});

/// The full configuration file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub graph: GraphSection,
    pub encoder: EncoderSection,
    pub attention: AttentionSection,
    pub decoder: DecoderSection,
    pub loss: LossSection,
    pub train: TrainSection,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization")
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            graph: crate::graph::GraphConfig {
                radial_cutoff: self.graph.radial_cutoff,
                knn_k: self.graph.knn_k,
                inter_radial_cutoff: self.graph.inter_radial_cutoff,
                inter_knn_k: self.graph.inter_knn_k,
                n_virtual: self.graph.n_virtual,
                ..crate::graph::GraphConfig::default()
            },
            encoder: EncoderConfig {
                embed_dim: self.encoder.embed_dim,
                hidden_dim: self.encoder.hidden_dim,
                n_layers: self.encoder.n_layers,
                message_dim: self.encoder.message_dim,
                msg_hidden: self.encoder.msg_hidden,
                node_hidden: self.encoder.node_hidden,
                coord_hidden: self.encoder.coord_hidden,
            },
            attention: AttentionConfig {
                heads: self.attention.heads,
                head_dim: self.attention.head_dim,
                bandwidth: self.attention.bandwidth,
                bias_sign: 1.0,
            },
            decoder: DecoderConfig {
                fingerprint_dim: self.decoder.fingerprint_dim,
                knn_k: self.decoder.knn_k,
                contact_hidden: self.decoder.contact_hidden,
                fp_similarity_threshold: self.loss.fp_threshold,
                logit_gain: self.decoder.logit_gain,
                ..DecoderConfig::default()
            },
            dropout: self.train.dropout,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_coord: self.loss.lambda_coord,
            lambda_contact: self.loss.lambda_contact,
            lambda_fp: self.loss.lambda_fp,
            lambda_pair: self.loss.lambda_pair,
            lambda_dock: self.loss.lambda_dock,
            lambda_aux: self.loss.lambda_aux,
            focal_gamma: self.loss.focal_gamma,
            contact_alpha: self.loss.contact_alpha,
            tau_fp: self.loss.tau_fp,
            tau_pair: self.loss.tau_pair,
            dock_cutoff: self.loss.dock_cutoff,
            fp_threshold: self.loss.fp_threshold,
            huber_delta: self.loss.huber_delta,
            detach_contact_weights: self.loss.detach_contact_weights,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            lr_decay: self.train.lr_decay,
            clip: self.train.clip,
            batch_size: self.train.batch_size,
            patience: self.train.patience,
            max_epochs: self.train.max_epochs,
            seed: self.train.seed,
        }
    }
}
