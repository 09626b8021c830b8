//! Composite loss, metrics, the training loop and evaluation.

mod eval;
mod losses;
mod optim;
mod train;

pub use eval::{evaluate_model, evaluate_seeds, MetricsReport, SamplePrediction, SeedMetrics, SeedReport};
pub use losses::{mape, msle, physical_loss, prediction_loss, total_loss, LossBreakdown, LossParts, LossWeights};
pub use optim::{Adam, EarlyStopping, Verdict};
pub use train::{
    assignments, loss_and_gradient, term_gradient, train_model, train_model_with, Ablation, EpochRecord, TrainConfig,
    TermWeights, TrainOutcome,
};
