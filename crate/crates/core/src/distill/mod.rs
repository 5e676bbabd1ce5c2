//! Toy-scale decoder-only distillation: a frozen synthetic teacher, a
//! student decoder, feature-alignment loss with projection heads, the
//! composite training loss, and a deterministic Adam trainer.

pub mod adam;
pub mod data;
pub mod heads;
pub mod loss;
pub mod teacher;
pub mod trainer;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use data::SyntheticDataConfig;
pub use heads::ProjectionHead;
pub use loss::{distill_loss, kl_gaussian, l1_loss, LossBreakdown, LossWeights, PerceptualHook};
pub use teacher::{EncoderStats, ToyTeacher};
pub use trainer::{
    paired_convergence, train_toy, write_log_csv, ConvergencePair, DistillConfig, LogRow,
    TrainOutcome,
};
