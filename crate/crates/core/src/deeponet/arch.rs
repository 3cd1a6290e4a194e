use serde::{Deserialize, Serialize};

use super::{DeepOnetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchKind {
    Cnn,
    Fnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Activation {
    LeakyRelu { slope: f64 },
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyRelu { slope: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Network shapes. Layer widths list outputs only; input widths follow from
/// `branch_input` and `coord_dim`. Hidden layers use `activation`, the last
/// layer of each net is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub branch_kind: BranchKind,
    /// Shape of one branch sample: `[H, W]` for a CNN, `[sensors]` for an FNN.
    pub branch_input: Vec<usize>,
    #[serde(default)]
    pub branch_conv: Vec<ConvSpec>,
    pub branch_fc: Vec<usize>,
    pub coord_dim: usize,
    pub trunk_fc: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub p: usize,
}

/// One trainable layer: `(name, weight shape, bias length)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerShape {
    pub name: String,
    pub weight: Vec<usize>,
    pub bias: usize,
    pub kind: LayerKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv { stride: usize },
    Dense,
}

impl LayerShape {
    pub fn fans(&self) -> (usize, usize) {
        match self.kind {
            LayerKind::Conv { .. } => {
                let area = self.weight[2] * self.weight[3];
                (self.weight[1] * area, self.weight[0] * area)
            }
            LayerKind::Dense => (self.weight[0], self.weight[1]),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.iter().product::<usize>() + self.bias
    }
}

impl ArchConfig {
    /// Default image branch: two 3x3 stride-2 convolutions (8, 16 channels)
    /// and dense layers `[128, 64, p]`; trunk `[64, 64, 64, p]`; `p = 32`.
    pub fn default_cnn(height: usize, width: usize, coord_dim: usize) -> Self {
        let p = 32;
        Self {
            branch_kind: BranchKind::Cnn,
            branch_input: vec![height, width],
            branch_conv: vec![
                ConvSpec { channels: 8, kernel: 3, stride: 2 },
                ConvSpec { channels: 16, kernel: 3, stride: 2 },
            ],
            branch_fc: vec![128, 64, p],
            coord_dim,
            trunk_fc: vec![64, 64, 64, p],
            activation: Activation::default(),
            p,
        }
    }

    /// Default vector branch `[128, 128, p]` with the same trunk.
    pub fn default_fnn(sensors: usize, coord_dim: usize) -> Self {
        let p = 32;
        Self {
            branch_kind: BranchKind::Fnn,
            branch_input: vec![sensors],
            branch_conv: Vec::new(),
            branch_fc: vec![128, 128, p],
            coord_dim,
            trunk_fc: vec![64, 64, 64, p],
            activation: Activation::default(),
            p,
        }
    }

    pub fn slope(&self) -> f64 {
        match self.activation {
            Activation::LeakyRelu { slope } => slope,
        }
    }

    fn invalid(msg: impl Into<String>) -> DeepOnetError {
        DeepOnetError::InvalidArch(msg.into())
    }

    /// Spatial size after the convolution stack.
    pub fn conv_output(&self) -> Result<(usize, usize, usize)> {
        let (mut c, mut h, mut w) = (1, self.branch_input[0], self.branch_input[1]);
        for (i, spec) in self.branch_conv.iter().enumerate() {
            if spec.kernel == 0 || spec.stride == 0 || spec.channels == 0 {
                return Err(Self::invalid(format!("conv layer {i} has a zero size")));
            }
            if spec.kernel > h || spec.kernel > w {
                return Err(Self::invalid(format!("conv layer {i}: kernel {} exceeds input {h}x{w}", spec.kernel)));
            }
            h = (h - spec.kernel) / spec.stride + 1;
            w = (w - spec.kernel) / spec.stride + 1;
            c = spec.channels;
        }
        Ok((c, h, w))
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Self::invalid("p must be at least 1"));
        }
        if self.branch_fc.last() != Some(&self.p) || self.trunk_fc.last() != Some(&self.p) {
            return Err(Self::invalid(format!(
                "branch {:?} and trunk {:?} must both end in p = {}",
                self.branch_fc, self.trunk_fc, self.p
            )));
        }
        if self.branch_fc.contains(&0) || self.trunk_fc.contains(&0) || self.coord_dim == 0 {
            return Err(Self::invalid("layer widths must be positive"));
        }
        if !self.slope().is_finite() {
            return Err(Self::invalid("activation slope must be finite"));
        }
        match self.branch_kind {
            BranchKind::Cnn => {
                if self.branch_input.len() != 2 || self.branch_input.contains(&0) {
                    return Err(Self::invalid(format!("CNN branch needs [H, W], got {:?}", self.branch_input)));
                }
                self.conv_output()?;
            }
            BranchKind::Fnn => {
                if self.branch_input.len() != 1 || self.branch_input[0] == 0 {
                    return Err(Self::invalid(format!("FNN branch needs [sensors], got {:?}", self.branch_input)));
                }
                if !self.branch_conv.is_empty() {
                    return Err(Self::invalid("FNN branch cannot have conv layers"));
                }
            }
        }
        Ok(())
    }

    /// Branch layers in evaluation order.
    pub fn branch_layers(&self) -> Result<Vec<LayerShape>> {
        self.validate()?;
        let mut layers = Vec::new();
        let mut in_ch = 1;
        for (i, spec) in self.branch_conv.iter().enumerate() {
            layers.push(LayerShape {
                name: format!("branch.conv{i}"),
                weight: vec![spec.channels, in_ch, spec.kernel, spec.kernel],
                bias: spec.channels,
                kind: LayerKind::Conv { stride: spec.stride },
            });
            in_ch = spec.channels;
        }
        let mut width = match self.branch_kind {
            BranchKind::Cnn => {
                let (c, h, w) = self.conv_output()?;
                c * h * w
            }
            BranchKind::Fnn => self.branch_input[0],
        };
        for (i, &out) in self.branch_fc.iter().enumerate() {
            layers.push(LayerShape { name: format!("branch.fc{i}"), weight: vec![width, out], bias: out, kind: LayerKind::Dense });
            width = out;
        }
        Ok(layers)
    }

    pub fn trunk_layers(&self) -> Result<Vec<LayerShape>> {
        self.validate()?;
        let mut width = self.coord_dim;
        Ok(self
            .trunk_fc
            .iter()
            .enumerate()
            .map(|(i, &out)| {
                let l = LayerShape { name: format!("trunk.fc{i}"), weight: vec![width, out], bias: out, kind: LayerKind::Dense };
                width = out;
                l
            })
            .collect())
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.branch_layers()?.iter().chain(&self.trunk_layers()?).map(LayerShape::param_count).sum())
    }
}
