//! Dataset loading, synthetic fixtures, rotation, non-IID partitioning and
//! pseudo-data construction.

mod dataset;
mod idx;
mod partition;
mod pseudo;
mod rotate;
mod synthetic;

pub use dataset::LabeledDataset;
pub use idx::{load_idx, write_idx, IMAGES_MAGIC, LABELS_MAGIC};
pub use partition::{largest_remainder, lda_partition, sample_dirichlet, PartitionSpec};
pub use pseudo::{build_pseudo_data, sample_pseudo_batch, PseudoCount, PseudoDataset};
pub use rotate::rotate_images;
pub use synthetic::synthetic_blobs;
