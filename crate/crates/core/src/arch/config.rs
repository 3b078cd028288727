use crate::error::{Error, Result};
use crate::ssm::SsmConfig;

/// Parameter count of the published model.
pub const PUBLISHED_PARAM_COUNT: usize = 49_641;

/// Stage widths of the classifier.
pub const DEFAULT_CHANNELS: [usize; 6] = [8, 16, 24, 32, 48, 64];

/// Shared stage of the channel-attention bridge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChannelShare {
    /// One 3-tap 1-D convolution (no bias) over the concatenated descriptor.
    Conv1d,
    /// A square fully connected layer with bias, followed by ReLU.
    Linear,
}

/// Architectural hyper-parameters.
///
/// The defaults are the calibrated configuration (see
/// [`calibrate`](super::calibrate)).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub channels: [usize; 6],
    pub input_channels: usize,
    pub input_size: [usize; 2],
    pub branches_per_pvm: usize,
    pub conv_stages: usize,
    pub pvm_stages: usize,
    pub d_state: usize,
    pub expand: usize,
    pub conv_k: usize,
    /// `None` selects `ceil(d_model / 16)` per stage.
    pub dt_rank: Option<usize>,
    /// Hidden width of the dense head; 0 means a single linear layer.
    pub head_hidden: usize,
    pub num_outputs: usize,
    /// Adds a second Mamba pass over the reversed sequence in every branch.
    pub bidirectional: bool,
    pub scab_shared: ChannelShare,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: DEFAULT_CHANNELS,
            input_channels: 3,
            input_size: [224, 224],
            branches_per_pvm: 4,
            conv_stages: 3,
            pvm_stages: 3,
            d_state: 16,
            expand: 1,
            conv_k: 4,
            dt_rank: None,
            head_hidden: 0,
            num_outputs: 1,
            bidirectional: false,
            scab_shared: ChannelShare::Conv1d,
        }
    }
}

/// Number of 2× downsamplings between the input and the last stage.
pub const STAGES: usize = 6;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.conv_stages != 3 || self.pvm_stages != 3 {
            return bad(format!(
                "the architecture has 3 convolutional and 3 PVM stages, got {} and {}",
                self.conv_stages, self.pvm_stages
            ));
        }
        if self.channels.windows(2).any(|w| w[0] >= w[1]) || self.channels[0] == 0 {
            return bad(format!("channels must be strictly increasing and positive: {:?}", self.channels));
        }
        if self.branches_per_pvm == 0 {
            return bad("branches_per_pvm must be positive".into());
        }
        for &c in &self.channels[3..] {
            if c % self.branches_per_pvm != 0 {
                return bad(format!("PVM width {c} is not divisible by {} branches", self.branches_per_pvm));
            }
        }
        if self.num_outputs != 1 {
            return bad(format!("only a single sigmoid output is supported, got {}", self.num_outputs));
        }
        if self.input_channels == 0 {
            return bad("input_channels must be positive".into());
        }
        let min = 1 << STAGES;
        if self.input_size.iter().any(|&s| s < min) {
            return bad(format!("input extents {:?} must be at least {min}", self.input_size));
        }
        for stage in 4..=6 {
            self.ssm_config(stage)?;
        }
        Ok(())
    }

    /// Configuration of the Mamba blocks in PVM stage `stage` (4, 5 or 6).
    pub fn ssm_config(&self, stage: usize) -> Result<SsmConfig> {
        let d_model = self.channels[stage - 1] / self.branches_per_pvm;
        SsmConfig::new(d_model, self.d_state, self.expand, self.conv_k, self.dt_rank)
    }

    /// Channel counts of the maps entering the attention bridge.
    pub fn scab_channels(&self) -> Vec<usize> {
        self.channels[..5].to_vec()
    }

    /// Width of the pooled feature vector fed to the head.
    pub fn feature_width(&self) -> usize {
        self.channels.iter().sum()
    }

    /// Spatial extents after each stage.
    pub fn stage_extents(&self) -> Vec<[usize; 2]> {
        let mut e = self.input_size;
        (0..STAGES)
            .map(|_| {
                e = [e[0] / 2, e[1] / 2];
                e
            })
            .collect()
    }
}
