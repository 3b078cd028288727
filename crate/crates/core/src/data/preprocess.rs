use std::path::{Path, PathBuf};

use super::image::{read_png, resize_tile, tile_image, write_png};
use super::manifest::{split_dataset, write_manifest, Grouping, Normalization, Split, SplitManifest, TileRecord, DEFAULT_RATIOS};
use super::roi::{roi_filter, RoiThresholds};
use super::synth::{MANIFEST_FILE, NORMALIZATION_FILE, TILE_DIR};
use crate::error::{Error, Result};
use crate::parallel;

/// Subdirectories of the input holding each class.
pub const CLASS_DIRS: [(&str, u8); 2] = [("control", 0), ("case", 1)];

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessConfig {
    pub tile: usize,
    pub resize: usize,
    pub roi: RoiThresholds,
    pub ratios: [f64; 3],
    pub seed: u64,
    pub grouping: Grouping,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            tile: 1024,
            resize: 224,
            roi: RoiThresholds::default(),
            ratios: DEFAULT_RATIOS,
            seed: 0,
            grouping: Grouping::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessSummary {
    pub sources: usize,
    pub kept: usize,
    pub discarded: usize,
    pub manifest: SplitManifest,
}

fn list_sources(input: &Path) -> Result<Vec<(String, u8, PathBuf)>> {
    let mut out = Vec::new();
    for (dir, label) in CLASS_DIRS {
        let d = input.join(dir);
        if !d.is_dir() {
            continue;
        }
        let mut files: Vec<PathBuf> = std::fs::read_dir(&d)
            .map_err(|e| Error::io(&d, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        for f in files {
            let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            out.push((stem, label, f));
        }
    }
    if out.is_empty() {
        return Err(Error::Data(format!(
            "no PNG images under {0}/case or {0}/control",
            input.display()
        )));
    }
    let mut ids: Vec<&str> = out.iter().map(|s| s.0.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Data(format!("source name {} appears more than once", w[0])));
    }
    Ok(out)
}

/// Tiles every `case/*.png` (label 1) and `control/*.png` (label 0) image under
/// `input`, filters and resizes the tiles into `out/tiles`, and writes the
/// split manifest and normalization sidecar.
pub fn preprocess(input: &Path, out: &Path, cfg: &PreprocessConfig) -> Result<PreprocessSummary> {
    cfg.roi.validate()?;
    if cfg.tile == 0 || cfg.resize == 0 {
        return Err(Error::InvalidArgument("tile and resize sizes must be positive".into()));
    }
    let sources = list_sources(input)?;
    let tile_dir = out.join(TILE_DIR);
    std::fs::create_dir_all(&tile_dir).map_err(|e| Error::io(&tile_dir, e))?;

    let per_source = parallel::map_range(sources.len(), |i| -> Result<Vec<TileRecord>> {
        let (id, label, path) = &sources[i];
        let image = read_png(path)?;
        let mut records = Vec::new();
        for t in tile_image(&image, cfg.tile)? {
            let roi = roi_filter(&t.image, &cfg.roi);
            let mut rel = String::new();
            if roi.keep {
                rel = format!("{TILE_DIR}/{id}_{}_{}.png", t.grid_y, t.grid_x);
                write_png(&out.join(&rel), &resize_tile(&t.image, cfg.resize)?)?;
            }
            records.push(TileRecord {
                source_id: id.clone(),
                grid_x: t.grid_x,
                grid_y: t.grid_y,
                label: *label,
                path: rel,
                tissue_fraction: roi.tissue_fraction,
                kept: roi.keep,
                split: Split::Unassigned,
            });
        }
        Ok(records)
    });
    let mut records = Vec::new();
    for r in per_source {
        records.extend(r?);
    }
    let kept = records.iter().filter(|r| r.kept).count();
    let discarded = records.len() - kept;
    if kept == 0 {
        return Err(Error::Data(format!(
            "{} tiles from {} images, none passed the tissue filter",
            records.len(),
            sources.len()
        )));
    }
    let manifest = split_dataset(records, cfg.ratios, cfg.seed, cfg.grouping)?;
    write_manifest(&out.join(MANIFEST_FILE), &manifest.records)?;

    let train: Vec<_> = manifest
        .split(Split::Train)
        .map(|r| read_png(&out.join(&r.path)))
        .collect::<Result<_>>()?;
    let norm = if train.is_empty() { Normalization::default() } else { Normalization::from_pixels(&train)? };
    norm.save(&out.join(NORMALIZATION_FILE))?;
    Ok(PreprocessSummary { sources: sources.len(), kept, discarded, manifest })
}
