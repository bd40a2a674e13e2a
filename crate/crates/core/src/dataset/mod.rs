//! Multi-identity dataset assembly: reference pairing, the leakage-free
//! benchmark split, corpus statistics, training-batch mixing and extended
//! contrastive negatives.

mod negatives;
mod pairs;
mod sampler;
mod split;
mod stats;

pub use negatives::{build_negative_pool, NegativePool};
pub use pairs::{build_pairs, build_pairs_filtered, PairedIdentity, PairedSample, Pairing, QualityFilter, UnpairedImage};
pub use sampler::{sample_training_batch, BatchDescriptor, BatchItem, BatchSampler, ItemKind, DEFAULT_PAIRED_FRACTION};
pub use split::{
    appearance_counts, split_bench, BenchParams, BenchReference, BenchSample, BenchSplit, DEFAULT_BENCH_SAMPLES,
    MAX_BENCH_IDENTITIES,
};
pub use stats::{corpus_stats, CorpusStats};
