use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Position of batch norm relative to ReLU inside a conv block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BlockOrder {
    /// conv → ReLU → batch norm
    #[default]
    ConvReluBn,
    /// conv → batch norm → ReLU
    ConvBnRelu,
}

/// Which hidden fully connected activations are followed by dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DropoutPlacement {
    #[default]
    Both,
    First,
    Second,
    None,
}

impl DropoutPlacement {
    pub fn after(self, hidden: usize) -> bool {
        matches!(
            (self, hidden),
            (DropoutPlacement::Both, _)
                | (DropoutPlacement::First, 0)
                | (DropoutPlacement::Second, 1)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VggConfig {
    pub stage_widths: [usize; 4],
    pub fc_widths: [usize; 2],
    pub n_classes: usize,
    pub dropout_p: f64,
    pub dropout_placement: DropoutPlacement,
    /// Square input side; images are single-channel.
    pub input_size: usize,
    pub kernel: usize,
    pub block_order: BlockOrder,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Default for VggConfig {
    fn default() -> Self {
        VggConfig {
            stage_widths: [64, 128, 256, 512],
            fc_widths: [4096, 1024],
            n_classes: 7,
            dropout_p: 0.5,
            dropout_placement: DropoutPlacement::Both,
            input_size: 40,
            kernel: 3,
            block_order: BlockOrder::ConvReluBn,
            bn_momentum: crate::nn::DEFAULT_MOMENTUM,
            bn_epsilon: crate::nn::DEFAULT_EPSILON,
        }
    }
}

impl VggConfig {
    /// Desk-scale variant used by smoke runs and convergence tests.
    pub fn small() -> Self {
        VggConfig {
            stage_widths: [8, 16, 32, 64],
            fc_widths: [64, 32],
            ..Default::default()
        }
    }

    /// Spatial side after the four 2x2 pools.
    pub fn final_side(&self) -> usize {
        (0..4).fold(self.input_size, |s, _| s / 2)
    }

    pub fn flatten_extent(&self) -> usize {
        self.stage_widths[3] * self.final_side() * self.final_side()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_widths.contains(&0) || self.fc_widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p {} is outside [0, 1)",
                self.dropout_p
            )));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel {} must be odd", self.kernel)));
        }
        if self.final_side() == 0 {
            return Err(Error::Config(format!(
                "input side {} vanishes after four 2x2 pools",
                self.input_size
            )));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) || self.bn_epsilon <= 0.0 {
            return Err(Error::Config(
                "bn_momentum must be in (0, 1] and bn_epsilon positive".into(),
            ));
        }
        Ok(())
    }
}
