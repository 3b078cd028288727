//! Search over the unpublished hyper-parameters for the configuration whose
//! parameter count is closest to the published one.

use super::config::{ChannelShare, ModelConfig, PUBLISHED_PARAM_COUNT};
use super::model::Model;
use crate::error::Result;

pub const D_STATE: [usize; 3] = [4, 8, 16];
pub const EXPAND: [usize; 2] = [1, 2];
pub const CONV_K: [usize; 2] = [3, 4];
pub const DT_RANK: [Option<usize>; 2] = [None, Some(1)];
pub const HEAD_HIDDEN: [usize; 3] = [0, 8, 16];

/// One evaluated grid point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Candidate {
    pub config: ModelConfig,
    pub params: usize,
}

impl Candidate {
    pub fn delta(&self) -> i64 {
        self.params as i64 - PUBLISHED_PARAM_COUNT as i64
    }
}

/// Every grid point, counted by instantiating the model.
pub fn grid(base: &ModelConfig) -> Result<Vec<Candidate>> {
    let mut out = Vec::new();
    for scab_shared in [ChannelShare::Conv1d, ChannelShare::Linear] {
        for bidirectional in [false, true] {
            for d_state in D_STATE {
                for expand in EXPAND {
                    for conv_k in CONV_K {
                        for dt_rank in DT_RANK {
                            for head_hidden in HEAD_HIDDEN {
                                let config = ModelConfig {
                                    d_state,
                                    expand,
                                    conv_k,
                                    dt_rank,
                                    head_hidden,
                                    bidirectional,
                                    scab_shared,
                                    ..base.clone()
                                };
                                let params = Model::new(config.clone(), 0)?.count_parameters().total;
                                out.push(Candidate { config, params });
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Grid point with the smallest absolute deviation; ties keep grid order.
pub fn closest(base: &ModelConfig) -> Result<Candidate> {
    let all = grid(base)?;
    Ok(all
        .into_iter()
        .min_by_key(|c| c.delta().unsigned_abs())
        .expect("grid is non-empty"))
}
