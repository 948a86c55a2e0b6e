use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{PredictorError, Result};
use crate::search_space::{Adjacency, ArchSpec, LayerType, MAX_NODES};
use crate::shapes::{infer_shapes, normalize_shapes, ShapeNormalizer, TensorShape};

/// One-hot layer type columns followed by three normalized shape columns.
pub const FEATURES: usize = LayerType::COUNT + 3;

/// How the adjacency is turned into a propagation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum AdjacencyNorm {
    /// `D^-1/2 (A + A^T + I) D^-1/2`.
    #[default]
    Symmetric,
    /// Nodes aggregate from their predecessors only: `D^-1/2 (A^T + I) D^-1/2`
    /// with `D` the row sums.
    Directed,
}

/// Settings that turn an architecture into predictor input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub normalizer: ShapeNormalizer,
    /// When false the three shape columns are left at zero.
    pub vertex_shapes: bool,
    pub adjacency: AdjacencyNorm,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            normalizer: ShapeNormalizer::default(),
            vertex_shapes: true,
            adjacency: AdjacencyNorm::Symmetric,
        }
    }
}

impl EncoderConfig {
    /// Infers and normalizes shapes for `input`, then encodes.
    pub fn encode_spec(&self, spec: &ArchSpec, input: TensorShape) -> Result<EncodedGraph> {
        let vs = infer_shapes(spec, input)?;
        let shapes = if self.vertex_shapes {
            normalize_shapes(&vs, &self.normalizer)?
        } else {
            vec![[0.0; 3]; spec.len()]
        };
        encode_with(spec, &shapes, self.adjacency)
    }
}

/// Fixed-size predictor input. Real nodes occupy the leading rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedGraph {
    pub a_norm: Array2<f64>,
    pub x: Array2<f64>,
    pub mask: [bool; MAX_NODES],
}

impl EncodedGraph {
    /// Number of real nodes.
    pub fn nodes(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn a_real(&self) -> ArrayView2<'_, f64> {
        let n = self.nodes();
        self.a_norm.slice(s![..n, ..n])
    }

    pub fn x_real(&self) -> ArrayView2<'_, f64> {
        let n = self.nodes();
        self.x.slice(s![..n, ..])
    }
}

/// Encodes with the default symmetric normalization.
pub fn encode(spec: &ArchSpec, norm_shapes: &[[f64; 3]]) -> Result<EncodedGraph> {
    encode_with(spec, norm_shapes, AdjacencyNorm::Symmetric)
}

pub fn encode_with(
    spec: &ArchSpec,
    norm_shapes: &[[f64; 3]],
    norm: AdjacencyNorm,
) -> Result<EncodedGraph> {
    encode_parts(spec.adjacency(), spec.layer_types(), norm_shapes, norm)
}

/// Encodes raw parts without requiring a valid architecture.
pub fn encode_parts(
    adj: &Adjacency,
    layer_types: &[LayerType],
    norm_shapes: &[[f64; 3]],
    norm: AdjacencyNorm,
) -> Result<EncodedGraph> {
    let n = adj.len();
    if n > MAX_NODES {
        return Err(PredictorError::Capacity { nodes: n });
    }
    if norm_shapes.len() != n {
        return Err(PredictorError::InvalidArgument(format!(
            "{} shape triples for {n} nodes",
            norm_shapes.len()
        )));
    }
    if layer_types.len() != n {
        return Err(PredictorError::InvalidArgument(format!(
            "{} layer types for {n} nodes",
            layer_types.len()
        )));
    }
    let mut tilde = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        tilde[[i, i]] = 1.0;
        for j in 0..n {
            let linked = match norm {
                AdjacencyNorm::Symmetric => adj.get(i, j) || adj.get(j, i),
                AdjacencyNorm::Directed => adj.get(j, i),
            };
            if linked {
                tilde[[i, j]] = 1.0;
            }
        }
    }
    let inv_sqrt_deg: Vec<f64> = tilde
        .rows()
        .into_iter()
        .map(|r| 1.0 / r.sum().sqrt())
        .collect();

    let mut a_norm = Array2::<f64>::zeros((MAX_NODES, MAX_NODES));
    for i in 0..n {
        for j in 0..n {
            if tilde[[i, j]] != 0.0 {
                a_norm[[i, j]] = inv_sqrt_deg[i] * tilde[[i, j]] * inv_sqrt_deg[j];
            }
        }
    }

    let mut x = Array2::<f64>::zeros((MAX_NODES, FEATURES));
    for (v, (t, shape)) in layer_types.iter().zip(norm_shapes).enumerate() {
        x[[v, t.index()]] = 1.0;
        for (k, &value) in shape.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(PredictorError::InvalidArgument(format!(
                    "normalized shape component {value} at node {v} is outside [0, 1]"
                )));
            }
            x[[v, LayerType::COUNT + k]] = value;
        }
    }

    let mut mask = [false; MAX_NODES];
    mask[..n].iter_mut().for_each(|m| *m = true);
    Ok(EncodedGraph { a_norm, x, mask })
}
