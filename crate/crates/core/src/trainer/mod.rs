//! The staged training protocol: pretrain-A, pretrain-B, joint fine-tune and
//! S2UT training, with checkpoints, logs and seeded data order.

mod checkpoint;
mod config;
pub mod data;
mod ge2e;
mod stages;

pub use checkpoint::Checkpoint;
pub use config::{Stage, StageConfig};
pub use ge2e::{ge2e_embed_all, train_ge2e, Ge2eTrainConfig};
pub use stages::{
    checkpoint_path, finetune, init_finetune, load_s2ut, load_u2m, log_path, pretrain_a, pretrain_b, run_stage, s2ut_dev_items,
    s2ut_eval_loss, s2ut_unit_accuracy, train_s2ut, u2m_batch_loss, u2m_eval_loss, TrainOutcome, FROM_PRETRAIN_A, FROM_PRETRAIN_B,
};
