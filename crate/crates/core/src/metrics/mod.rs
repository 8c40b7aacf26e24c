//! Toy quality metrics and compute accounting.

mod bench;
mod features;

pub use bench::{count_model_passes, run_benchmark, BenchEntry, BenchReport, PassCounts};
pub use features::{
    consistency_sim, consistency_sim_with, cosine, frechet_feature_distance, frechet_from_features,
    thumbnails, FeatureExtractor, FEATURE_DIM, FEATURE_GRID,
};
