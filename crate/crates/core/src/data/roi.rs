use super::image::Image;
use crate::error::{Error, Result};

/// Thresholds of the tissue detector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoiThresholds {
    /// A pixel whose darkest channel exceeds this is background.
    pub white: u8,
    /// A pixel with HSV saturation below this is background.
    pub saturation: f64,
    /// Minimum tissue fraction for a tile to be kept.
    pub min_tissue: f64,
}

impl Default for RoiThresholds {
    fn default() -> Self {
        RoiThresholds { white: 220, saturation: 0.04, min_tissue: 0.25 }
    }
}

impl RoiThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.saturation) || !(0.0..=1.0).contains(&self.min_tissue) {
            return Err(Error::InvalidArgument(format!("ROI thresholds out of range: {self:?}")));
        }
        Ok(())
    }

    pub fn is_background(&self, [r, g, b]: [u8; 3]) -> bool {
        let (lo, hi) = (r.min(g).min(b), r.max(g).max(b));
        if lo > self.white {
            return true;
        }
        let saturation = if hi == 0 { 0.0 } else { (hi - lo) as f64 / hi as f64 };
        saturation < self.saturation
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoiDecision {
    pub keep: bool,
    pub tissue_fraction: f64,
}

/// Fraction of non-background pixels and the keep decision.
pub fn roi_filter(tile: &Image, t: &RoiThresholds) -> RoiDecision {
    let total = tile.width() * tile.height();
    let tissue = tile.pixels().filter(|&p| !t.is_background(p)).count();
    let tissue_fraction = tissue as f64 / total as f64;
    RoiDecision { keep: tissue_fraction >= t.min_tissue, tissue_fraction }
}
