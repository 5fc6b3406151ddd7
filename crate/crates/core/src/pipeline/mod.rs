//! End-to-end driver: rewrite, scheme search, precision learning.

mod bench;
mod config;
mod data;
mod model;
mod report;
mod run;

pub use bench::{bench_distributions, BenchRow, BenchTable, BENCH_HEADER};
pub use config::{DataSource, ModelSpec, RunConfig, CONFIG_HEADER, KEYS};
pub use data::{generate_dataset, Dataset, DatasetSpec, DATA_HEADER};
pub use model::{
    accuracy, expensive_set, load_model_graph, mlp_graph, Forward, Identity, Model, Site,
    SiteQuantizer,
};
pub use report::{Checkpoint, EpochLog, RunReport, Selection, Stage, REPORT_HEADER};
pub use run::{prepare, run_pipeline, run_search, run_train, train_fp, Prepared};

/// Independent RNG streams of one run.
pub(crate) mod stream {
    pub const INIT: u64 = 1;
    pub const DATA: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const SELECT: u64 = 6;
    pub const BASELINE: u64 = 7;
    pub const BENCH: u64 = 8;
}

/// SplitMix64 finalizer over `(seed, stream, index)`, so every stage can be
/// re-seeded without carrying RNG state between stages.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
