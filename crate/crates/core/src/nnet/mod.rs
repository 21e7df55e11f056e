//! Differentiable building blocks on top of candle: layers, attention,
//! conformer and transformer blocks, CTC, Adam, and a finite-difference checker.

mod attention;
mod batch;
mod blocks;
pub mod ctc;
mod gradcheck;
mod layers;
mod optim;
mod params;

pub use attention::MultiHeadAttention;
pub use batch::{pad_frames, pad_ids};
pub use blocks::{BlockConfig, ConformerBlock, Padding, TransformerDecoderBlock, TransformerEncoderBlock};
pub use ctc::{ctc_loss, ctc_loss_value, BLANK};
pub use gradcheck::{grad_check, GradCheckReport, GRAD_FLOOR};
pub use layers::{
    causal_bias, glu, key_padding_bias, length_mask, log_softmax, relu, sigmoid, silu, sinusoidal_positions, softmax,
    Conv1d, DepthwiseConv1d, Embedding, LayerNorm, Linear,
};
pub use optim::{Adam, AdamConfig};
pub use params::{Ctx, Init, ParamStore};
