//! Tile extraction, tissue filtering, resizing, split manifests and input
//! loading.

mod image;
mod loader;
mod manifest;
mod preprocess;
mod roi;
mod synth;

pub use image::{read_png, resize_bilinear, resize_image, resize_tile, tile_image, write_png, Image, Tile};
pub use loader::{check_files, load_batch, load_input, samples, InputSpec, Sample};
pub use manifest::{
    read_manifest, sort_records, split_dataset, write_manifest, Grouping, Normalization, Split, SplitManifest,
    TileRecord, DEFAULT_RATIOS, MANIFEST_HEADER,
};
pub use preprocess::{preprocess, PreprocessConfig, PreprocessSummary};
pub use roi::{roi_filter, RoiDecision, RoiThresholds};
pub use synth::{make_synthetic_dataset, synthetic_tiles, SynthConfig, SynthTile, MANIFEST_FILE, NORMALIZATION_FILE, TILE_DIR};
