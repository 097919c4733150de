use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::{LayerSpec, Shape};
use super::network::{mlp_layers, Network};
use crate::error::{Error, Result};

/// Layer recipe shared by every head of a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    /// Dense/ReLU stack over the flattened input.
    Mlp { hidden: Vec<usize> },
    /// Two same-padded convolutions, one fully-connected hidden layer, then
    /// the output layer. Needs a planar input.
    Conv {
        channels: [usize; 2],
        kernel: usize,
        hidden: usize,
    },
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::Mlp {
            hidden: vec![64, 64],
        }
    }
}

impl Architecture {
    pub fn layers(&self, input: Shape, outputs: usize) -> Result<Vec<LayerSpec>> {
        match self {
            Architecture::Mlp { hidden } => Ok(mlp_layers(input, hidden, outputs)),
            Architecture::Conv {
                channels,
                kernel,
                hidden,
            } => {
                let Shape::Planes {
                    channels: c_in,
                    height,
                    width,
                } = input
                else {
                    return Err(Error::Config(
                        "convolutional architecture needs a planar input".into(),
                    ));
                };
                let conv = |i, o| LayerSpec::Conv2d {
                    in_channels: i,
                    out_channels: o,
                    height,
                    width,
                    kernel: *kernel,
                };
                let planes = |c| LayerSpec::Relu {
                    shape: Shape::planes(c, height, width),
                };
                Ok(vec![
                    conv(c_in, channels[0]),
                    planes(channels[0]),
                    conv(channels[0], channels[1]),
                    planes(channels[1]),
                    LayerSpec::Dense {
                        input: Shape::planes(channels[1], height, width),
                        outputs: *hidden,
                    },
                    LayerSpec::relu(*hidden),
                    LayerSpec::dense(*hidden, outputs),
                ])
            }
        }
    }

    pub fn build<R: Rng + ?Sized>(&self, input: Shape, outputs: usize, rng: &mut R) -> Result<Network> {
        Network::init(self.layers(input, outputs)?, rng)
    }
}
