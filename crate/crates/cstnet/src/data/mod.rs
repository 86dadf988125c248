//! Dataset ingestion and preprocessing: bit-exact CIFAR-10 binary loading,
//! normalization, deterministic splits, channel statistics, fixed
//! KL/whitening transforms, and PPM image export.

mod cifar;
mod kl;
mod ppm;
mod split;
mod stats;

pub use cifar::{load_cifar10_batch, normalize, subtract_channel_mean, Dataset, CIFAR_RECORD_BYTES};
pub use kl::{fit_kl_transform, load_color_matrix, save_color_matrix, sym_eigen3, KlMode};
pub use ppm::export_ppm;
pub use split::{epoch_order, make_split};
pub use stats::{channel_stats, channel_stats_tensor, ChannelStats};
