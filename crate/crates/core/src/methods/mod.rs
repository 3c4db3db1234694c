//! Unlearning procedures and the training loops they share.

mod original;
mod train;
mod unlearn;

pub use original::{
    curve_csv, fit_metrics, fit_original, train_original, CurvePoint, FitMetrics, FitTargets,
    OriginalFit,
};
pub use train::{
    answer_loss, dataset_loss, finetune, head_targets, train_on_items, EpochRecord, Trainable,
    TrainConfig,
};
pub use unlearn::{
    ablate_neurons, delta_for, ga_difference_unlearn, idk_tuning_unlearn, kl_minimization_unlearn,
    manu_importance, manu_prune_count, manu_select, manu_unlearn, mfa_training_set,
    retain_kl_divergence, smfa_unlearn, train_adapters, trunk_activations, AdapterPair, Importance,
    ManuConfig, ManuOutcome, Neuron, SmfaOutcome,
};
