use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exact manifest header.
pub const MANIFEST_HEADER: &str = "source_id,grid_x,grid_y,label,path,tissue_fraction,kept,split";
pub const DEFAULT_RATIOS: [f64; 3] = [0.70, 0.15, 0.15];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl Split {
    pub const ASSIGNED: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            _ => Err(Error::InvalidArgument(format!("unknown split {s:?} (train, val, test, unassigned)"))),
        }
    }
}

/// Whether tiles are split independently or whole sources at a time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Grouping {
    Tile,
    #[default]
    Source,
}

impl FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tile" => Ok(Grouping::Tile),
            "source" => Ok(Grouping::Source),
            _ => Err(Error::InvalidArgument(format!("unknown grouping {s:?} (tile, source)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileRecord {
    pub source_id: String,
    pub grid_x: usize,
    pub grid_y: usize,
    /// 1 for case, 0 for control.
    pub label: u8,
    /// Tile file relative to the manifest's directory; empty for discarded tiles.
    pub path: String,
    pub tissue_fraction: f64,
    pub kept: bool,
    pub split: Split,
}

impl TileRecord {
    fn key(&self) -> (&str, usize, usize) {
        (&self.source_id, self.grid_y, self.grid_x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitManifest {
    pub records: Vec<TileRecord>,
    pub seed: u64,
    pub ratios: [f64; 3],
    pub grouping: Grouping,
}

impl SplitManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &TileRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }
}

/// Sorts records into manifest order and rejects duplicate grid cells.
pub fn sort_records(records: &mut [TileRecord]) -> Result<()> {
    records.sort_by(|a, b| a.key().cmp(&b.key()));
    if let Some(w) = records.windows(2).find(|w| w[0].key() == w[1].key()) {
        let (s, y, x) = w[0].key();
        return Err(Error::Data(format!("duplicate tile {s} at grid ({x}, {y})")));
    }
    Ok(())
}

fn check_ratios(ratios: &[f64; 3]) -> Result<()> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    Ok(())
}

/// Assigns every kept record to train/val/test, stratified by label.
///
/// With [`Grouping::Tile`] each class is shuffled and cut at
/// `round(r_train·n)` and `round(r_val·n)`. With [`Grouping::Source`] the
/// sources of each class are shuffled and each goes, whole, to the split with
/// the largest remaining deficit. Discarded records become `unassigned`.
pub fn split_dataset(mut records: Vec<TileRecord>, ratios: [f64; 3], seed: u64, grouping: Grouping) -> Result<SplitManifest> {
    check_ratios(&ratios)?;
    sort_records(&mut records)?;
    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter_mut().enumerate() {
        r.split = Split::Unassigned;
        if r.label > 1 {
            return Err(Error::Data(format!("label {} of {} is not 0 or 1", r.label, r.source_id)));
        }
        if r.kept {
            by_class.entry(r.label).or_default().push(i);
        }
    }
    if by_class.is_empty() {
        return Err(Error::Data("no kept tiles to split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for members in by_class.values() {
        match grouping {
            Grouping::Tile => {
                let mut order = members.clone();
                order.shuffle(&mut rng);
                let n = order.len();
                let n_train = (ratios[0] * n as f64).round() as usize;
                let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
                for (k, &i) in order.iter().enumerate() {
                    records[i].split = if k < n_train {
                        Split::Train
                    } else if k < n_train + n_val {
                        Split::Val
                    } else {
                        Split::Test
                    };
                }
            }
            Grouping::Source => {
                let mut sources: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
                for &i in members {
                    sources.entry(records[i].source_id.as_str()).or_default().push(i);
                }
                let mut groups: Vec<Vec<usize>> = sources.into_values().collect();
                groups.shuffle(&mut rng);
                let n = members.len() as f64;
                let targets = ratios.map(|r| r * n);
                let mut counts = [0usize; 3];
                for g in groups {
                    let k = (0..3)
                        .filter(|&k| ratios[k] > 0.0)
                        .max_by(|&a, &b| {
                            let da = targets[a] - counts[a] as f64;
                            let db = targets[b] - counts[b] as f64;
                            da.total_cmp(&db).then(b.cmp(&a))
                        })
                        .expect("some ratio is positive");
                    counts[k] += g.len();
                    for i in g {
                        records[i].split = Split::ASSIGNED[k];
                    }
                }
            }
        }
    }
    let mut labels: BTreeMap<&str, u8> = BTreeMap::new();
    for r in &records {
        if *labels.entry(&r.source_id).or_insert(r.label) != r.label {
            return Err(Error::Data(format!("source {} has tiles with both labels", r.source_id)));
        }
    }
    Ok(SplitManifest { records, seed, ratios, grouping })
}

pub fn write_manifest(path: &Path, records: &[TileRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record(MANIFEST_HEADER.split(','))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<TileRecord>> {
    if !path.is_file() {
        return Err(Error::MissingFiles(vec![path.to_path_buf()]));
    }
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != MANIFEST_HEADER {
        return Err(Error::Data(format!("{}: header {header:?}, expected {MANIFEST_HEADER:?}", path.display())));
    }
    let records = r.deserialize().collect::<std::result::Result<Vec<TileRecord>, _>>()?;
    Ok(records)
}

/// Per-channel input statistics on the `[0, 1]` pixel scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization { mean: [0.0; 3], std: [1.0; 3] }
    }
}

impl Normalization {
    /// Statistics over every pixel of `images`. A flat channel gets std 1.
    pub fn from_pixels<'a>(images: impl IntoIterator<Item = &'a super::Image>) -> Result<Self> {
        let (mut sum, mut sq, mut n) = ([0.0f64; 3], [0.0f64; 3], 0usize);
        for img in images {
            for p in img.pixels() {
                for c in 0..3 {
                    let v = p[c] as f64 / 255.0;
                    sum[c] += v;
                    sq[c] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Data("no training pixels to normalize with".into()));
        }
        let mean = sum.map(|s| s / n as f64);
        let mut std = [1.0; 3];
        for c in 0..3 {
            let var = (sq[c] / n as f64 - mean[c] * mean[c]).max(0.0);
            if var > 1e-12 {
                std[c] = var.sqrt();
            }
        }
        Ok(Normalization { mean, std })
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64; 3]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        format!(
            "# per-channel statistics of the training split, pixels scaled to [0, 1]\nmean={}\nstd={}\n",
            join(&self.mean),
            join(&self.std)
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (mut mean, mut std) = (None, None);
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Data(format!("normalization line {line:?} is not key=value")))?;
            let vals: Vec<f64> = v
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Data(format!("normalization {k}: {e}")))?;
            let arr: [f64; 3] = vals
                .try_into()
                .map_err(|_| Error::Data(format!("normalization {k} needs 3 values")))?;
            match k.trim() {
                "mean" => mean = Some(arr),
                "std" => std = Some(arr),
                other => return Err(Error::Data(format!("unknown normalization key {other:?}"))),
            }
        }
        match (mean, std) {
            (Some(mean), Some(std)) if std.iter().all(|&s| s > 0.0) => Ok(Normalization { mean, std }),
            _ => Err(Error::Data("normalization needs mean and positive std".into())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Normalization::parse(&text)
    }
}
