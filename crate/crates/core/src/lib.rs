//! Active few-shot classification.
//!
//! Given a small unlabelled episode and a tight labelling budget, the pipeline
//! smooths the episode features over a k-nearest-neighbour graph, infers
//! class structure with soft k-means, and decides which samples to label in
//! rounds: first the most confident sample of each cluster, then the least
//! confident samples overall. Selection criteria are pluggable
//! [`SelectionStrategy`] implementations looked up by name in a
//! [`StrategyRegistry`].
//!
//! The [`bench`] module runs strategies over Dirichlet-imbalanced episodes and
//! reports mean weighted accuracy with 95% intervals.

pub mod active;
pub mod bank;
pub mod bench;
pub mod criteria;
pub mod inference;
pub mod preprocess;
pub mod seed;
pub mod tasks;

pub use active::{
    run_episode, EpisodeError, EpisodeResult, PipelineConfig, RoundTrace, TaskInstance,
};
pub use bank::{generate_synthetic_bank, BankError, BankFormat, FeatureBank, SyntheticSpec};
pub use bench::{run_benchmark, BenchmarkError, BenchmarkReport};
pub use criteria::{SelectionStrategy, StrategyRegistry};
pub use inference::{ClusterModel, EmConfig};
pub use preprocess::SmoothingConfig;
pub use tasks::{sample_task, weighted_accuracy, BenchmarkConfig};
