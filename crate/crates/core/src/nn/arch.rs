use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::layer::LayerSpec;
use crate::data::Layout;

/// Width of the embedding produced by every encoder.
pub const EMBEDDING_DIM: usize = 128;
pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

/// The three encoder families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arch {
    /// dense(1024)-dense(128)
    #[serde(rename = "lae2", alias = "LAE-2", alias = "lae-2")]
    Lae2,
    /// dense(1024)-dense(512)-dense(256)-dense(128)
    #[serde(rename = "lae4", alias = "LAE-4", alias = "lae-4")]
    Lae4,
    /// conv(32×5×5)-conv(64×5×5)-dense(1024)-dense(128)
    #[serde(rename = "cae4", alias = "CAE-4", alias = "cae-4")]
    Cae4,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Lae2, Arch::Lae4, Arch::Cae4];

    pub fn layout(self) -> Layout {
        match self {
            Arch::Lae2 | Arch::Lae4 => Layout::Flat,
            Arch::Cae4 => Layout::Chw,
        }
    }

    pub fn input_shape(self) -> Vec<usize> {
        match self.layout() {
            Layout::Flat => vec![IMAGE_PIXELS],
            Layout::Chw => vec![1, IMAGE_SIDE, IMAGE_SIDE],
        }
    }

    /// Encoder layers. Every hidden layer, including the 128-wide embedding
    /// layer, is followed by ReLU; convolutions are same-padded and each is
    /// followed by 2×2 max pooling.
    pub fn encoder_specs(self) -> Vec<LayerSpec> {
        let dense_stack = |dims: &[usize]| {
            dims.windows(2)
                .flat_map(|w| [LayerSpec::Dense { inputs: w[0], outputs: w[1] }, LayerSpec::Relu])
                .collect::<Vec<_>>()
        };
        match self {
            Arch::Lae2 => dense_stack(&[IMAGE_PIXELS, 1024, EMBEDDING_DIM]),
            Arch::Lae4 => dense_stack(&[IMAGE_PIXELS, 1024, 512, 256, EMBEDDING_DIM]),
            Arch::Cae4 => {
                let mut specs = vec![
                    LayerSpec::Conv2d { in_channels: 1, out_channels: 32, kernel: 5 },
                    LayerSpec::Relu,
                    LayerSpec::MaxPool2x2,
                    LayerSpec::Conv2d { in_channels: 32, out_channels: 64, kernel: 5 },
                    LayerSpec::Relu,
                    LayerSpec::MaxPool2x2,
                    LayerSpec::Flatten,
                ];
                specs.extend(dense_stack(&[64 * 7 * 7, 1024, EMBEDDING_DIM]));
                specs
            }
        }
    }

    /// Default number of training epochs for the encoder.
    pub fn default_epochs(self) -> usize {
        match self {
            Arch::Lae2 | Arch::Lae4 => 20,
            Arch::Cae4 => 10,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Arch::Lae2 => 0,
            Arch::Lae4 => 1,
            Arch::Cae4 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Arch> {
        Arch::ALL.into_iter().find(|a| a.tag() == tag)
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Lae2 => "LAE-2",
            Arch::Lae4 => "LAE-4",
            Arch::Cae4 => "CAE-4",
        })
    }
}

impl FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "lae2" => Ok(Arch::Lae2),
            "lae4" => Ok(Arch::Lae4),
            "cae4" => Ok(Arch::Cae4),
            _ => Err(format!("unknown architecture `{s}` (expected lae2, lae4 or cae4)")),
        }
    }
}
