//! Time-series batches, synthetic generators, missingness, and file loaders.

mod batch;
mod cache;
mod loader;
mod masking;
mod synthetic;

pub use batch::{chunk, BatchMeta, BatchSampler, Dataset, NormStats, Split, TimeSeriesBatch};
pub use cache::{decode_dataset, encode_dataset, load_cached, save_dataset};
pub use loader::{
    load_dataset, parse_csv, parse_ts, read_series, regular_grid, to_batch, write_csv, Format, SeriesSet,
};
pub use masking::{apply_mcar, apply_mcar_keep_first, hold_out_observation, holdout_indices, kept_points};
pub use synthetic::{
    generate_frequency, generate_periodic, ou_noise, periodic_signal, FrequencySpec, OuParams, PeriodicSpec,
};
