//! Toy data and a small deterministic trainer standing in for full-scale models.

pub mod config;
pub mod dataset;
pub mod random;
pub mod train;

pub use config::{DatasetConfig, RunSpec};
pub use dataset::{gen_dataset, load_dataset, save_dataset, Split, ToyDataset, IMAGE_SHAPE};
pub use random::{random_region, random_tiny_network};
pub use train::{accuracy, train, ArchSpec, PgdConfig, TrainConfig};
