//! Architecture descriptions and freeze-group mapping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Classifier head variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    /// One logit through a sigmoid; binary cross-entropy target.
    #[serde(rename = "sigmoid-binary")]
    SigmoidBinary,
    /// Three logits through a softmax; categorical cross-entropy target.
    #[serde(rename = "softmax-3way")]
    Softmax3Way,
}

impl Head {
    pub fn out_units(self) -> usize {
        match self {
            Head::SigmoidBinary => 1,
            Head::Softmax3Way => 3,
        }
    }
}

/// One VGG block: `convs` 3x3 conv+ReLU layers at `width` channels,
/// followed by a 2x2 max-pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPlan {
    pub convs: usize,
    pub width: usize,
}

/// Full architecture description. The conv stack is `blocks` in order, each
/// ending in a pool; the classifier is flatten+FC+ReLU+head, or GAP+head
/// when `cam_head` is set (class activation maps need the pooled form).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_h: usize,
    pub input_w: usize,
    pub input_channels: usize,
    pub blocks: Vec<BlockPlan>,
    pub fc_width: usize,
    pub head: Head,
    pub cam_head: bool,
}

fn blocks(plan: &[(usize, usize)]) -> Vec<BlockPlan> {
    plan.iter().map(|&(convs, width)| BlockPlan { convs, width }).collect()
}

impl ModelSpec {
    /// Full-size topology: 16 conv layers in 5 blocks, 128x128 input.
    pub fn paper() -> Self {
        ModelSpec {
            input_h: 128,
            input_w: 128,
            input_channels: 1,
            blocks: blocks(&[(2, 64), (2, 128), (4, 256), (4, 512), (4, 512)]),
            fc_width: 256,
            head: Head::SigmoidBinary,
            cam_head: false,
        }
    }

    /// Same layer counts and freeze boundaries at desk scale: narrower
    /// widths, 64x64 input.
    pub fn desk() -> Self {
        ModelSpec {
            input_h: 64,
            input_w: 64,
            input_channels: 1,
            blocks: blocks(&[(2, 8), (2, 16), (4, 32), (4, 64), (4, 64)]),
            fc_width: 64,
            head: Head::SigmoidBinary,
            cam_head: false,
        }
    }

    /// Desk variant with the GAP classifier, for class activation maps.
    pub fn desk_cam() -> Self {
        ModelSpec { cam_head: true, ..ModelSpec::desk() }
    }

    /// Desk variant headed for the 3-class source task used to produce
    /// transferable conv weights.
    pub fn desk_source() -> Self {
        ModelSpec { head: Head::Softmax3Way, ..ModelSpec::desk() }
    }

    /// Two tiny blocks for fast unit tests.
    pub fn tiny() -> Self {
        ModelSpec {
            input_h: 16,
            input_w: 16,
            input_channels: 1,
            blocks: blocks(&[(1, 4), (1, 8)]),
            fc_width: 8,
            head: Head::SigmoidBinary,
            cam_head: false,
        }
    }

    pub fn total_convs(&self) -> usize {
        self.blocks.iter().map(|b| b.convs).sum()
    }

    /// (in_channels, out_channels) per conv layer, stack order.
    pub fn conv_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.total_convs());
        let mut cin = self.input_channels;
        for b in &self.blocks {
            for _ in 0..b.convs {
                shapes.push((cin, b.width));
                cin = b.width;
            }
        }
        shapes
    }

    /// (h, w, channels) of the feature map after the last pool.
    pub fn final_map(&self) -> (usize, usize, usize) {
        let down = 1usize << self.blocks.len();
        let c = self.blocks.last().map_or(self.input_channels, |b| b.width);
        (self.input_h / down, self.input_w / down, c)
    }

    pub fn flatten_len(&self) -> usize {
        let (h, w, c) = self.final_map();
        h * w * c
    }

    /// Width of the vector entering the head layer.
    pub fn head_in_dim(&self) -> usize {
        if self.cam_head {
            self.final_map().2
        } else {
            self.fc_width
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Config("model needs at least one block".into()));
        }
        if self.blocks.iter().any(|b| b.convs == 0 || b.width == 0) {
            return Err(Error::Config("block conv count and width must be positive".into()));
        }
        if self.input_channels == 0 {
            return Err(Error::Config("input_channels must be positive".into()));
        }
        if !self.cam_head && self.fc_width == 0 {
            return Err(Error::Config("fc_width must be positive".into()));
        }
        let down = 1usize << self.blocks.len();
        if self.input_h % down != 0 || self.input_w % down != 0 || self.input_h < down || self.input_w < down
        {
            return Err(Error::Shape(format!(
                "input {}x{} not divisible by 2^{} pools",
                self.input_h,
                self.input_w,
                self.blocks.len()
            )));
        }
        Ok(())
    }
}

/// Transfer-learning arm: which conv prefix stays at its pretrained values.
/// `All` trains everything; G1 through G4 freeze two, three, four, then all
/// five blocks of the standard plan. The classifier is always trainable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreezeGroup {
    All,
    G1,
    G2,
    G3,
    G4,
}

impl FreezeGroup {
    pub const ALL: [FreezeGroup; 5] =
        [FreezeGroup::All, FreezeGroup::G1, FreezeGroup::G2, FreezeGroup::G3, FreezeGroup::G4];

    fn frozen_blocks(self) -> usize {
        match self {
            FreezeGroup::All => 0,
            FreezeGroup::G1 => 2,
            FreezeGroup::G2 => 3,
            FreezeGroup::G3 => 4,
            FreezeGroup::G4 => 5,
        }
    }

    /// Number of leading conv layers held fixed under this group.
    pub fn frozen_conv_prefix(self, spec: &ModelSpec) -> usize {
        let nb = self.frozen_blocks().min(spec.blocks.len());
        spec.blocks[..nb].iter().map(|b| b.convs).sum()
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "all" => Ok(FreezeGroup::All),
            "g1" => Ok(FreezeGroup::G1),
            "g2" => Ok(FreezeGroup::G2),
            "g3" => Ok(FreezeGroup::G3),
            "g4" => Ok(FreezeGroup::G4),
            other => Err(Error::Config(format!("unknown freeze group {other:?}"))),
        }
    }
}

impl std::fmt::Display for FreezeGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FreezeGroup::All => "all",
            FreezeGroup::G1 => "g1",
            FreezeGroup::G2 => "g2",
            FreezeGroup::G3 => "g3",
            FreezeGroup::G4 => "g4",
        };
        f.write_str(s)
    }
}
