use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the tensor flowing between two layers, one example at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Flat { len: usize },
    Planes {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl Shape {
    pub fn flat(len: usize) -> Self {
        Shape::Flat { len }
    }

    pub fn planes(channels: usize, height: usize, width: usize) -> Self {
        Shape::Planes {
            channels,
            height,
            width,
        }
    }

    /// Number of scalars in one example.
    pub fn len(&self) -> usize {
        match *self {
            Shape::Flat { len } => len,
            Shape::Planes {
                channels,
                height,
                width,
            } => channels * height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One stage of a feed-forward network.
///
/// Dense layers flatten whatever arrives; convolutions are stride 1 with
/// zero "same" padding, so spatial size is preserved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { input: Shape, outputs: usize },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
    },
    Relu { shape: Shape },
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize) -> Self {
        LayerSpec::Dense {
            input: Shape::flat(inputs),
            outputs,
        }
    }

    pub fn relu(len: usize) -> Self {
        LayerSpec::Relu {
            shape: Shape::flat(len),
        }
    }

    pub fn input_shape(&self) -> Shape {
        match *self {
            LayerSpec::Dense { input, .. } => input,
            LayerSpec::Conv2d {
                in_channels,
                height,
                width,
                ..
            } => Shape::planes(in_channels, height, width),
            LayerSpec::Relu { shape } => shape,
        }
    }

    pub fn output_shape(&self) -> Shape {
        match *self {
            LayerSpec::Dense { outputs, .. } => Shape::flat(outputs),
            LayerSpec::Conv2d {
                out_channels,
                height,
                width,
                ..
            } => Shape::planes(out_channels, height, width),
            LayerSpec::Relu { shape } => shape,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { input, outputs } => input.len() * outputs + outputs,
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => out_channels * in_channels * kernel * kernel + out_channels,
            LayerSpec::Relu { .. } => 0,
        }
    }

    /// `(fan_in, fan_out)` used by the uniform initializer.
    pub(crate) fn fans(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Dense { input, outputs } => (input.len(), outputs),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (
                in_channels * kernel * kernel,
                out_channels * kernel * kernel,
            ),
            LayerSpec::Relu { .. } => (0, 0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Dense { input, outputs } => {
                if input.is_empty() || outputs == 0 {
                    return Err(Error::Config("dense layer with zero width".into()));
                }
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                height,
                width,
                kernel,
            } => {
                if in_channels == 0 || out_channels == 0 {
                    return Err(Error::Config("conv2d channel counts must be >= 1".into()));
                }
                if kernel == 0 || kernel % 2 == 0 {
                    return Err(Error::Config(format!(
                        "conv2d kernel must be odd and >= 1 for same padding, got {kernel}"
                    )));
                }
                if height == 0 || width == 0 {
                    return Err(Error::Config("conv2d with empty spatial extent".into()));
                }
            }
            LayerSpec::Relu { shape } => {
                if shape.is_empty() {
                    return Err(Error::Config("relu over empty shape".into()));
                }
            }
        }
        Ok(())
    }
}

/// Checks that every layer is well formed and that shapes chain.
pub fn validate_chain(layers: &[LayerSpec]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::Config("network needs at least one layer".into()));
    }
    for layer in layers {
        layer.validate()?;
    }
    for (k, pair) in layers.windows(2).enumerate() {
        let out = pair[0].output_shape();
        let next = pair[1].input_shape();
        // dense layers flatten their input, so only the element count must agree
        let ok = match pair[1] {
            LayerSpec::Dense { .. } => out.len() == next.len(),
            _ => out == next,
        };
        if !ok {
            return Err(Error::Config(format!(
                "layer {} output {:?} does not feed layer {} input {:?}",
                k,
                out,
                k + 1,
                next
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_counts() {
        assert_eq!(LayerSpec::dense(3, 4).param_count(), 16);
        assert_eq!(LayerSpec::relu(4).param_count(), 0);
        let conv = LayerSpec::Conv2d {
            in_channels: 2,
            out_channels: 3,
            height: 5,
            width: 5,
            kernel: 3,
        };
        assert_eq!(conv.param_count(), 3 * 2 * 9 + 3);
        assert_eq!(conv.output_shape(), Shape::planes(3, 5, 5));
    }

    #[test]
    fn chain_rejects_mismatch() {
        let layers = [LayerSpec::dense(3, 4), LayerSpec::relu(5)];
        assert!(matches!(validate_chain(&layers), Err(Error::Config(_))));
        let layers = [LayerSpec::dense(3, 4), LayerSpec::relu(4), LayerSpec::dense(4, 1)];
        assert!(validate_chain(&layers).is_ok());
    }

    #[test]
    fn conv_kernel_rules() {
        let mut conv = LayerSpec::Conv2d {
            in_channels: 1,
            out_channels: 1,
            height: 3,
            width: 3,
            kernel: 2,
        };
        assert!(conv.validate().is_err());
        if let LayerSpec::Conv2d { kernel, .. } = &mut conv {
            *kernel = 0;
        }
        assert!(conv.validate().is_err());
    }

    #[test]
    fn conv_feeds_dense_by_element_count() {
        let layers = [
            LayerSpec::Conv2d {
                in_channels: 1,
                out_channels: 2,
                height: 3,
                width: 3,
                kernel: 3,
            },
            LayerSpec::Relu {
                shape: Shape::planes(2, 3, 3),
            },
            LayerSpec::Dense {
                input: Shape::planes(2, 3, 3),
                outputs: 4,
            },
        ];
        assert!(validate_chain(&layers).is_ok());
    }
}
