//! Transformer CVAE with a hand-written forward and backward pass.

mod checkpoint;
mod config;
mod cvae;
mod decode;
mod dump;
pub mod layers;
mod params;
mod tensor;
mod train;


pub use checkpoint::{Checkpoint, RngState, CKPT_MAGIC, CKPT_VERSION};
pub use config::{Activation, ModelConfig};
pub use cvae::{
    contrastive_loss, kl_loss, recon_loss, reparameterize, reparameterize_with, sequence_repr, ContrastiveSample,
    Cvae, ForwardCache, LossBreakdown, TrainBatch,
};
pub use decode::{draw_latent, sample_logits, IncrementalDecoder};
pub use dump::{attention_csvs, latent_csv};
pub use params::{Init, Layout, TensorSpec};
pub use tensor::{gemm, Real, View};
pub use train::{
    metrics_line, mine_contrastive, sample_mask_flags, Adam, EpochStats, Mined, StepReport, TrainConfig, Trainer,
    METRICS_HEADER,
};
