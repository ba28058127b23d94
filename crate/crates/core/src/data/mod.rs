//! Dataset ingestion and the synthetic spurious-correlation benchmark.

pub mod archive;
mod dataset;
pub mod folder;
pub mod spurious;

pub use archive::{load_split, read_benchmark, write_benchmark, ARCHIVE_FORMAT_VERSION};
pub use dataset::{augment_batch, Dataset, TransformSpec};
pub use folder::load_image_folder;
pub use spurious::{
    generate_spurious_benchmark, BenchmarkManifest, SampleRecord, Split, SplitCounts, SpuriousSpec,
};
