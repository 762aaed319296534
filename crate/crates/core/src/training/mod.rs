//! Datasets, augmentation, the momentum-SGD loop, metrics and checkpoints.

pub mod augment;
pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod io;
pub mod metrics;
pub mod sgd;
pub mod trainer;

pub use augment::{augment, AugmentConfig};
pub use checkpoint::Checkpoint;
pub use config::{RunConfig, TrainConfig};
pub use dataset::{make_synthetic_dataset, nearest_centroid_accuracy, Dataset, Sample, Shape, SyntheticSpec};
pub use metrics::{classification_scores, mean_iou, shape_iou, ClassificationScores, ConfusionMatrix};
pub use sgd::{sgd_step, Sgd};
pub use trainer::{metrics_csv, write_metrics_csv, EpochRecord, Evaluation, Prediction, Trainer};
