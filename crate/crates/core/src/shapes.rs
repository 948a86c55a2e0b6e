//! Vertex-shape inference over the layer grammar.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::search_space::{ArchSpec, ChannelRule, LayerType};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("node {node} ({layer}): spatial dimension would fall below 1")]
    Underflow { node: usize, layer: LayerType },
    #[error("shape {shape} at node {node} exceeds normalizer maxima {maxima}")]
    InvalidNormalizer {
        node: usize,
        shape: TensorShape,
        maxima: TensorShape,
    },
}

pub type Result<T> = std::result::Result<T, ShapeError>;

/// `(channels, height, width)` of a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[usize; 3]", into = "[usize; 3]")]
pub struct TensorShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl TensorShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(ShapeError::InvalidShape(format!(
                "{channels}x{height}x{width} has a zero component"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
        })
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    /// Componentwise maximum.
    pub fn max(self, other: Self) -> Self {
        Self {
            channels: self.channels.max(other.channels),
            height: self.height.max(other.height),
            width: self.width.max(other.width),
        }
    }
}

impl TryFrom<[usize; 3]> for TensorShape {
    type Error = ShapeError;

    fn try_from([c, h, w]: [usize; 3]) -> Result<Self> {
        Self::new(c, h, w)
    }
}

impl From<TensorShape> for [usize; 3] {
    fn from(s: TensorShape) -> Self {
        s.as_array()
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

impl FromStr for TensorShape {
    type Err = ShapeError;

    /// Parses `CxHxW`, e.g. `3x32x32`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(['x', 'X']).collect();
        let bad = || ShapeError::InvalidShape(format!("expected CxHxW, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let mut dims = [0usize; 3];
        for (d, p) in dims.iter_mut().zip(&parts) {
            *d = p.trim().parse().map_err(|_| bad())?;
        }
        Self::try_from(dims)
    }
}

/// Per-node shapes of one architecture under one input shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VertexShapes {
    pub input_shape: TensorShape,
    pub shapes: Vec<TensorShape>,
}

impl VertexShapes {
    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    /// Componentwise maximum over all nodes.
    pub fn maxima(&self) -> TensorShape {
        self.shapes
            .iter()
            .copied()
            .fold(self.input_shape, TensorShape::max)
    }
}

/// Dataset-wide maxima used to scale shapes into `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeNormalizer {
    pub max_channels: usize,
    pub max_height: usize,
    pub max_width: usize,
}

impl Default for ShapeNormalizer {
    fn default() -> Self {
        Self {
            max_channels: 4096,
            max_height: 64,
            max_width: 64,
        }
    }
}

impl ShapeNormalizer {
    pub fn from_shape(max: TensorShape) -> Self {
        Self {
            max_channels: max.channels,
            max_height: max.height,
            max_width: max.width,
        }
    }

    pub fn maxima(&self) -> TensorShape {
        TensorShape {
            channels: self.max_channels,
            height: self.max_height,
            width: self.max_width,
        }
    }

    /// Raises each maximum until it covers every shape in `all`.
    pub fn covering<'a>(self, all: impl IntoIterator<Item = &'a VertexShapes>) -> Self {
        let m = all
            .into_iter()
            .map(VertexShapes::maxima)
            .fold(self.maxima(), TensorShape::max);
        Self::from_shape(m)
    }
}

/// Propagates `input` through `spec` in topological order.
///
/// Multiple parents are merged into a reference shape with the largest
/// parent channel count and the smallest parent height and width. The
/// output node pools globally to `(C, 1, 1)`.
pub fn infer_shapes(spec: &ArchSpec, input: TensorShape) -> Result<VertexShapes> {
    let input = TensorShape::new(input.channels, input.height, input.width)?;
    let adj = spec.adjacency();
    let n = spec.len();
    let mut shapes: Vec<TensorShape> = Vec::with_capacity(n);
    shapes.push(input);
    for v in 1..n {
        let layer = spec.layer_types()[v];
        let reference = adj
            .predecessors(v)
            .map(|u| shapes[u])
            .reduce(|a, b| TensorShape {
                channels: a.channels.max(b.channels),
                height: a.height.min(b.height),
                width: a.width.min(b.width),
            })
            .ok_or_else(|| ShapeError::InvalidShape(format!("node {v} has no parent")))?;
        let out = match layer.channel_rule() {
            None => TensorShape {
                channels: reference.channels,
                height: 1,
                width: 1,
            },
            Some(rule) => {
                let channels = match rule {
                    ChannelRule::Fixed(c) => c,
                    ChannelRule::Same => reference.channels,
                    ChannelRule::Double => 2 * reference.channels,
                    ChannelRule::Halve => (reference.channels / 2).max(1),
                };
                let (height, width) = match layer.stride() {
                    1 => (reference.height, reference.width),
                    s => (
                        strided_extent(reference.height, s),
                        strided_extent(reference.width, s),
                    ),
                };
                if height == 0 || width == 0 {
                    return Err(ShapeError::Underflow { node: v, layer });
                }
                TensorShape {
                    channels,
                    height,
                    width,
                }
            }
        };
        shapes.push(out);
    }
    Ok(VertexShapes {
        input_shape: input,
        shapes,
    })
}

/// Output extent of a 3x3, padding 1 convolution with the given stride.
fn strided_extent(extent: usize, stride: usize) -> usize {
    extent.div_ceil(stride)
}

/// Scales every component by its maximum.
pub fn normalize_shapes(vs: &VertexShapes, norm: &ShapeNormalizer) -> Result<Vec<[f64; 3]>> {
    let maxima = norm.maxima();
    vs.shapes
        .iter()
        .enumerate()
        .map(|(node, s)| {
            if s.channels > maxima.channels || s.height > maxima.height || s.width > maxima.width {
                return Err(ShapeError::InvalidNormalizer {
                    node,
                    shape: *s,
                    maxima,
                });
            }
            Ok([
                s.channels as f64 / maxima.channels as f64,
                s.height as f64 / maxima.height as f64,
                s.width as f64 / maxima.width as f64,
            ])
        })
        .collect()
}
