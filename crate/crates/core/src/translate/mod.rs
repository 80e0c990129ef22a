//! The shared workspace space: per-module translators trained mainly by
//! cycle-consistency, with demi-cycle, moment-matching and optional
//! supervised terms, plus the closed-form orthogonal baseline and retrieval
//! scoring.

pub mod align;
pub mod init;
pub mod procrustes;
pub mod retrieval;
pub mod train;
pub mod translator;

pub use align::{align_latents, AlignConfig, Alignment};
pub use procrustes::{procrustes_oracle, ProcrustesFit};
pub use retrieval::{retrieval_accuracy, retrieval_at_1, Metric};
pub use train::{objective, train_glw, EpochLosses, GlwSchedule, InitStrategy, TrainingReport};
pub use translator::{
    check_bottleneck, BoundTranslator, GlwTranslator, LossWeights, ModuleMaps, PairSet,
    TranslatorMode,
};
