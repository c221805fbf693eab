//! Separate per-class networks, primary merging by weight averaging, and the
//! two-branch merged model with its segmentation and classification heads.

mod arch;
mod format;
mod merge;
mod model;
mod network;
mod train;

pub use arch::{ArchitectureSpec, Preset};
pub use format::{decode_model, encode_model, load_merged, load_model, load_network, save_model, ModelFile, FORMAT_VERSION};
pub use merge::{merge_primary, merge_residual_check};
pub use model::{BranchOutput, MergedModel};
pub use network::{train_separate, Network};
pub use train::{argmax, EpochLog, TrainConfig};
