//! End-to-end runs: the three-stage medical pipeline with evaluation, and
//! the MNIST separate/merged/monolithic experiments.

mod medical;
mod mnist;

pub use medical::{
    class_patches, cls_training_sets, evaluate, merge_and_train, seg_training_set, train_class_network, EvalReport,
    ImageRecord, PipelineConfig, SegRow,
};
pub use mnist::{
    digit_accuracy, merged_digit_predictions, mnist_merge, mnist_monolithic, mnist_separate, one_vs_rest, MnistConfig, MnistMode,
};
