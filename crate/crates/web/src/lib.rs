//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each export is a thin wrapper over a plain function so the numerics can be
//! tested natively.

use ulmv_core::data::{roi_filter, synthetic_tiles, RoiThresholds};
use ulmv_core::ssm::{selective_scan_parallel, selective_scan_sequential, ScanInputs};
use ulmv_core::train::{onecycle_lr, OneCycleConfig};
use ulmv_core::{Error, Result, Tensor};
use wasm_bindgen::prelude::*;

/// Step size used at the forgetting position.
pub const FORGET_BOOST: f64 = 50.0;

/// Response of a one-channel, one-state selective scan to a unit impulse at
/// t = 0. At `forget_at` (if `< len`) the step size jumps by [`FORGET_BOOST`],
/// which collapses the decay factor and wipes the state.
pub fn impulse_response(len: usize, decay: f64, step: f64, forget_at: usize, parallel: bool) -> Result<Vec<f64>> {
    if len == 0 || !(decay >= 0.0) || !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("need len > 0, decay >= 0, step > 0; got {len}, {decay}, {step}")));
    }
    let mut x = vec![0.0; len];
    x[0] = 1.0;
    let delta = (0..len).map(|t| if t == forget_at { step * FORGET_BOOST } else { step }).collect();
    let inputs = ScanInputs {
        x: Tensor::new(vec![1, len, 1], x)?,
        delta: Tensor::new(vec![1, len, 1], delta)?,
        b: Tensor::ones(vec![1, len, 1]),
        c: Tensor::ones(vec![1, len, 1]),
    };
    let a = Tensor::full(vec![1, 1], -decay);
    let skip = Tensor::zeros(vec![1]);
    let y = if parallel {
        selective_scan_parallel(&inputs, &a, &skip)?
    } else {
        selective_scan_sequential(&inputs, &a, &skip)?
    };
    Ok(y.into_data())
}

/// Learning rate at every step of a OneCycle run.
pub fn onecycle_schedule(total_steps: usize, max_lr: f64, pct_start: f64, div_factor: f64, final_div_factor: f64) -> Result<Vec<f64>> {
    let cfg = OneCycleConfig { max_lr, total_steps, pct_start, div_factor, final_div_factor };
    (0..total_steps).map(|s| onecycle_lr(s, &cfg)).collect()
}

/// A synthetic tile with its tissue-filter verdict.
#[wasm_bindgen]
#[derive(Clone, Debug)]
pub struct DemoTile {
    size: usize,
    rgba: Vec<u8>,
    mask: Vec<u8>,
    tissue_fraction: f64,
    keep: bool,
}

#[wasm_bindgen]
impl DemoTile {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }

    /// Tile pixels as RGBA.
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    /// Tissue pixels kept, background drawn in slate.
    pub fn mask(&self) -> Vec<u8> {
        self.mask.clone()
    }

    #[wasm_bindgen(getter, js_name = tissueFraction)]
    pub fn tissue_fraction(&self) -> f64 {
        self.tissue_fraction
    }

    #[wasm_bindgen(getter)]
    pub fn keep(&self) -> bool {
        self.keep
    }
}

pub fn make_tile(label: u8, seed: u64, size: usize, thresholds: RoiThresholds) -> Result<DemoTile> {
    if label > 1 {
        return Err(Error::InvalidArgument(format!("label {label} is not 0 or 1")));
    }
    thresholds.validate()?;
    let tile = synthetic_tiles(1, seed, size)?.into_iter().find(|t| t.label == label).expect("one tile per class");
    let decision = roi_filter(&tile.image, &thresholds);
    let mut rgba = Vec::with_capacity(size * size * 4);
    let mut mask = Vec::with_capacity(size * size * 4);
    for p in tile.image.pixels() {
        rgba.extend_from_slice(&[p[0], p[1], p[2], 255]);
        if thresholds.is_background(p) {
            mask.extend_from_slice(&[71, 85, 105, 255]);
        } else {
            mask.extend_from_slice(&[p[0], p[1], p[2], 255]);
        }
    }
    Ok(DemoTile { size, rgba, mask, tissue_fraction: decision.tissue_fraction, keep: decision.keep })
}

#[wasm_bindgen(js_name = scanImpulse)]
pub fn scan_impulse(len: usize, decay: f64, step: f64, forget_at: usize, parallel: bool) -> Result<Vec<f64>, JsError> {
    Ok(impulse_response(len, decay, step, forget_at, parallel)?)
}

#[wasm_bindgen(js_name = oneCycle)]
pub fn one_cycle(total_steps: usize, max_lr: f64, pct_start: f64, div_factor: f64, final_div_factor: f64) -> Result<Vec<f64>, JsError> {
    Ok(onecycle_schedule(total_steps, max_lr, pct_start, div_factor, final_div_factor)?)
}

#[wasm_bindgen(js_name = syntheticTile)]
pub fn synthetic_tile(label: u8, seed: u32, size: usize, white: u8, saturation: f64, min_tissue: f64) -> Result<DemoTile, JsError> {
    Ok(make_tile(label, seed.into(), size, RoiThresholds { white, saturation, min_tissue })?)
}
