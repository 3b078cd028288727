//! Selective state-space model: discretization, sequential and Blelloch
//! scans, and the gated Mamba block.

mod block;
mod scan;

pub use block::{mamba_block, SsmConfig, SsmParams, DT_INIT_RANGE};
pub use scan::{discretize, selective_scan_parallel, selective_scan_sequential, ScanInputs, ScanMode, SCAN_CHUNK};
