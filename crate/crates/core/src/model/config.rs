use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Full V-cycle: down-phase smoothing/restriction, then prolongation and
    /// post-smoothing back to the finest grid.
    FvMgnet,
    /// Down-phase only; the head reads the coarsest-grid feature.
    BackslashMgnet,
    /// Single grid, plain residual-correction smoothing.
    Residual,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::FvMgnet => "fv-mgnet",
            Variant::BackslashMgnet => "backslash-mgnet",
            Variant::Residual => "residual",
        }
    }
}

/// Operator family used for the smoothing-role operators `A` and `B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpChoice {
    #[default]
    Fc,
    Conv,
}

impl OpChoice {
    pub fn name(self) -> &'static str {
        match self {
            OpChoice::Fc => "fc",
            OpChoice::Conv => "conv",
        }
    }
}

fn default_conv_kernel() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub input_len: usize,
    pub output_len: usize,
    pub grids: usize,
    pub smoothing_iters: Vec<usize>,
    #[serde(default)]
    pub op_a: OpChoice,
    #[serde(default)]
    pub op_b: OpChoice,
    /// Apply the activation to the residual as well: `u + σ(B σ(f − A u))`.
    #[serde(default)]
    pub double_activation: bool,
    /// Kernel size of conv smoothing operators (stride 1, "same" padding).
    #[serde(default = "default_conv_kernel")]
    pub conv_kernel: usize,
}

impl ModelConfig {
    pub fn fv_mgnet(input_len: usize, output_len: usize, smoothing_iters: Vec<usize>) -> Self {
        ModelConfig {
            variant: Variant::FvMgnet,
            input_len,
            output_len,
            grids: smoothing_iters.len(),
            smoothing_iters,
            op_a: OpChoice::Fc,
            op_b: OpChoice::Fc,
            double_activation: false,
            conv_kernel: default_conv_kernel(),
        }
    }

    pub fn backslash_mgnet(
        input_len: usize,
        output_len: usize,
        smoothing_iters: Vec<usize>,
    ) -> Self {
        ModelConfig {
            variant: Variant::BackslashMgnet,
            ..Self::fv_mgnet(input_len, output_len, smoothing_iters)
        }
    }

    pub fn residual(input_len: usize, output_len: usize, iters: usize) -> Self {
        ModelConfig {
            variant: Variant::Residual,
            ..Self::fv_mgnet(input_len, output_len, vec![iters])
        }
    }

    pub fn with_ops(mut self, op_a: OpChoice, op_b: OpChoice) -> Self {
        self.op_a = op_a;
        self.op_b = op_b;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_len == 0 || self.output_len == 0 {
            return Err(Error::Config(format!(
                "input_len ({}) and output_len ({}) must be positive",
                self.input_len, self.output_len
            )));
        }
        if self.grids == 0 {
            return Err(Error::Config("grids must be at least 1".into()));
        }
        if self.smoothing_iters.len() != self.grids {
            return Err(Error::Config(format!(
                "smoothing_iters has {} entries but grids = {}",
                self.smoothing_iters.len(),
                self.grids
            )));
        }
        if let Some(pos) = self.smoothing_iters.iter().position(|&n| n == 0) {
            return Err(Error::Config(format!(
                "smoothing_iters[{pos}] must be at least 1"
            )));
        }
        if self.variant == Variant::Residual && self.grids != 1 {
            return Err(Error::Config(format!(
                "residual variant requires grids = 1, got {}",
                self.grids
            )));
        }
        if self.grids > usize::BITS as usize {
            return Err(Error::Config(format!(
                "grids = {} is too large",
                self.grids
            )));
        }
        let factor = 1usize << (self.grids - 1);
        if !self.input_len.is_multiple_of(factor) {
            return Err(Error::Config(format!(
                "input_len {} is not divisible by 2^(grids-1) = {factor}",
                self.input_len
            )));
        }
        let uses_conv = self.op_a == OpChoice::Conv || self.op_b == OpChoice::Conv;
        if uses_conv && self.conv_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "conv_kernel must be odd to preserve length, got {}",
                self.conv_kernel
            )));
        }
        Ok(())
    }

    /// Grid sizes `I_ℓ = I / 2^(ℓ-1)` for `ℓ = 1..=J`.
    pub fn level_sizes(&self) -> Vec<usize> {
        (0..self.grids).map(|l| self.input_len >> l).collect()
    }

    /// Length of the feature the head consumes.
    pub fn feature_len(&self) -> usize {
        match self.variant {
            Variant::BackslashMgnet => self.input_len >> (self.grids - 1),
            _ => self.input_len,
        }
    }

    pub fn has_up_phase(&self) -> bool {
        self.variant == Variant::FvMgnet
    }

    /// Number of smoothing steps one forward pass executes (down plus up).
    pub fn smoothing_work(&self) -> usize {
        let down: usize = self.smoothing_iters.iter().sum();
        let up: usize = if self.has_up_phase() {
            self.smoothing_iters[..self.grids - 1].iter().sum()
        } else {
            0
        };
        down + up
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divisibility_violation_is_config_error() {
        let cfg = ModelConfig::fv_mgnet(100, 24, vec![1, 1, 1, 1]);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(ModelConfig::fv_mgnet(96, 24, vec![1, 1, 1])
            .validate()
            .is_ok());
        // 100 / 2^2 = 25 is integral, so three grids are fine.
        assert!(ModelConfig::fv_mgnet(100, 24, vec![1, 1, 1])
            .validate()
            .is_ok());
    }

    #[test]
    fn residual_requires_single_grid() {
        let mut cfg = ModelConfig::residual(16, 8, 2);
        assert!(cfg.validate().is_ok());
        cfg.grids = 2;
        cfg.smoothing_iters = vec![1, 1];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_iterations_rejected() {
        assert!(ModelConfig::fv_mgnet(16, 8, vec![1, 0]).validate().is_err());
    }

    #[test]
    fn level_sizes_halve() {
        let cfg = ModelConfig::fv_mgnet(96, 24, vec![1, 1, 1, 1]);
        let sizes = cfg.level_sizes();
        assert_eq!(sizes, vec![96, 48, 24, 12]);
        for w in sizes.windows(2) {
            assert!(w[0] > w[1]);
            assert_eq!(w[0], 2 * w[1]);
        }
    }
}
