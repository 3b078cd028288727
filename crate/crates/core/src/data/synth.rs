use std::f64::consts::TAU;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::{write_png, Image};
use super::manifest::{split_dataset, write_manifest, Grouping, Normalization, Split, SplitManifest, TileRecord, DEFAULT_RATIOS};
use super::roi::{roi_filter, RoiThresholds};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const NORMALIZATION_FILE: &str = "normalization.txt";
pub const TILE_DIR: &str = "tiles";

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub seed: u64,
    pub size: usize,
    pub ratios: [f64; 3],
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { n_per_class: 32, seed: 0, size: 64, ratios: DEFAULT_RATIOS }
    }
}

/// A generated tile.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthTile {
    pub label: u8,
    pub index: usize,
    pub image: Image,
}

/// Smooth field: a few broad Gaussian blobs plus a long-wavelength wave.
fn blob_field(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let s = size as f64;
    let blobs: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| (rng.random_range(0.0..s), rng.random_range(0.0..s), rng.random_range(s / 6.0..s / 3.0), rng.random_range(0.5..1.0)))
        .collect();
    let (kx, ky, phase) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..TAU));
    let mut f = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (xf, yf) = (x as f64, y as f64);
            let mut v = 0.3 * (TAU * (kx * xf + ky * yf) / s + phase).cos();
            for &(cx, cy, sigma, w) in &blobs {
                let d2 = (xf - cx).powi(2) + (yf - cy).powi(2);
                v += w * (-d2 / (2.0 * sigma * sigma)).exp();
            }
            f.push(v);
        }
    }
    f
}

/// Oscillating field: concentric rings around a few gland centers.
fn ring_field(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let s = size as f64;
    let centers: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| (rng.random_range(0.0..s), rng.random_range(0.0..s), rng.random_range(s / 10.0..s / 6.0)))
        .collect();
    let mut f = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let mut v = 0.0;
            for &(cx, cy, wavelength) in &centers {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                v += (TAU * d / wavelength).cos() * (-d / s).exp();
            }
            f.push(v);
        }
    }
    f
}

/// Marks the `count` highest-valued pixels (ties broken by position).
fn top_mask(field: &[f64], count: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..field.len()).collect();
    order.sort_by(|&a, &b| field[b].total_cmp(&field[a]).then(a.cmp(&b)));
    let mut mask = vec![false; field.len()];
    for &i in &order[..count] {
        mask[i] = true;
    }
    mask
}

fn paint(size: usize, mask: &[bool], tissue: &[[u8; 3]], background: &[[u8; 3]], rng: &mut ChaCha8Rng) -> Result<Image> {
    let (mut t, mut b) = (tissue.to_vec(), background.to_vec());
    t.shuffle(rng);
    b.shuffle(rng);
    let (mut ti, mut bi) = (t.into_iter(), b.into_iter());
    let mut data = Vec::with_capacity(size * size * 3);
    for &m in mask {
        let px = if m { ti.next() } else { bi.next() }.expect("palette sized to mask");
        data.extend_from_slice(&px);
    }
    Image::new(size, size, data)
}

/// Generates `n_per_class` tiles of each class.
///
/// Class 0 holds smooth blobs, class 1 fine rings, both pink on white. Tiles
/// are generated in pairs (one per class) sharing a tissue fraction and the
/// exact multiset of pixel colors, so per-tile color statistics carry no
/// label information; only the spatial arrangement does.
pub fn synthetic_tiles(n_per_class: usize, seed: u64, size: usize) -> Result<Vec<SynthTile>> {
    if n_per_class == 0 || size < 8 {
        return Err(Error::InvalidArgument(format!(
            "need at least one tile per class and size >= 8, got {n_per_class} and {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_px = size * size;
    let mut out = Vec::with_capacity(2 * n_per_class);
    for index in 0..n_per_class {
        let alpha: f64 = rng.random_range(0.35..0.65);
        let count = (alpha * n_px as f64).round() as usize;
        let tissue: Vec<[u8; 3]> = (0..count)
            .map(|_| {
                let shade: i32 = rng.random_range(-40..=20);
                let jitter = |base: i32, r: &mut ChaCha8Rng| (base + shade + r.random_range(-12..=12)).clamp(0, 255) as u8;
                [jitter(205, &mut rng), jitter(105, &mut rng), jitter(170, &mut rng)]
            })
            .collect();
        let background: Vec<[u8; 3]> = (0..n_px - count)
            .map(|_| [rng.random_range(238..=255), rng.random_range(234..=252), rng.random_range(238..=255)])
            .collect();
        let smooth = top_mask(&blob_field(size, &mut rng), count);
        let rings = top_mask(&ring_field(size, &mut rng), count);
        out.push(SynthTile { label: 0, index, image: paint(size, &smooth, &tissue, &background, &mut rng)? });
        out.push(SynthTile { label: 1, index, image: paint(size, &rings, &tissue, &background, &mut rng)? });
    }
    out.sort_by_key(|t| (t.label, t.index));
    Ok(out)
}

/// Writes the synthetic set as PNG tiles with a split manifest and the
/// training-split normalization sidecar under `out_dir`.
pub fn make_synthetic_dataset(out_dir: &Path, cfg: &SynthConfig) -> Result<SplitManifest> {
    let tiles = synthetic_tiles(cfg.n_per_class, cfg.seed, cfg.size)?;
    let tile_dir = out_dir.join(TILE_DIR);
    std::fs::create_dir_all(&tile_dir).map_err(|e| Error::io(&tile_dir, e))?;
    let roi = RoiThresholds::default();
    let mut records = Vec::with_capacity(tiles.len());
    for t in &tiles {
        let source_id = format!("synth-{}-{:04}", t.label, t.index);
        let rel = format!("{TILE_DIR}/{source_id}.png");
        write_png(&out_dir.join(&rel), &t.image)?;
        let roi = roi_filter(&t.image, &roi);
        records.push(TileRecord {
            source_id,
            grid_x: 0,
            grid_y: 0,
            label: t.label,
            path: rel,
            tissue_fraction: roi.tissue_fraction,
            kept: roi.keep,
            split: Split::Unassigned,
        });
    }
    let manifest = split_dataset(records, cfg.ratios, cfg.seed, Grouping::Tile)?;
    write_manifest(&out_dir.join(MANIFEST_FILE), &manifest.records)?;
    let train: Vec<&Image> = tiles
        .iter()
        .zip(&manifest.records)
        .filter(|(_, r)| r.split == Split::Train)
        .map(|(t, _)| &t.image)
        .collect();
    let norm = if train.is_empty() { Normalization::default() } else { Normalization::from_pixels(train)? };
    norm.save(&out_dir.join(NORMALIZATION_FILE))?;
    Ok(manifest)
}
