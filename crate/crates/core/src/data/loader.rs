use std::path::{Path, PathBuf};

use super::image::{read_png, resize_image};
use super::manifest::{Normalization, Split, TileRecord};
use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::Tensor;

/// One labelled model input on disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub path: PathBuf,
    pub label: u8,
}

/// How files become model inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputSpec {
    pub norm: Normalization,
    /// `[height, width]`; tiles of another size are resized on load.
    pub size: [usize; 2],
}

/// Samples of one split, paths resolved against the manifest's directory.
pub fn samples(root: &Path, records: &[TileRecord], split: Split) -> Vec<Sample> {
    records
        .iter()
        .filter(|r| r.split == split && r.kept)
        .map(|r| Sample { path: root.join(&r.path), label: r.label })
        .collect()
}

/// Fails with the complete list of missing files, if any.
pub fn check_files(samples: &[Sample]) -> Result<()> {
    let missing: Vec<PathBuf> = samples.iter().filter(|s| !s.path.is_file()).map(|s| s.path.clone()).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingFiles(missing))
    }
}

/// Reads one tile as a normalized `[3, H, W]` buffer.
pub fn load_input(path: &Path, spec: &InputSpec) -> Result<Vec<f64>> {
    let mut img = read_png(path)?;
    let [h, w] = spec.size;
    if img.width() != w || img.height() != h {
        img = resize_image(&img, w, h)?;
    }
    let mut out = vec![0.0; 3 * h * w];
    for (i, p) in img.pixels().enumerate() {
        for c in 0..3 {
            out[c * h * w + i] = (p[c] as f64 / 255.0 - spec.norm.mean[c]) / spec.norm.std[c];
        }
    }
    Ok(out)
}

/// Loads a batch as `[N, 3, H, W]` plus its labels.
pub fn load_batch(samples: &[Sample], spec: &InputSpec) -> Result<(Tensor, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let parts = parallel::map_range(samples.len(), |i| load_input(&samples[i].path, spec));
    let [h, w] = spec.size;
    let mut data = Vec::with_capacity(samples.len() * 3 * h * w);
    for p in parts {
        data.extend(p?);
    }
    let labels = samples.iter().map(|s| s.label as f64).collect();
    Ok((Tensor::new(vec![samples.len(), 3, h, w], data)?, labels))
}
