//! Block geometry and the reweighted group-Lasso penalty.
//!
//! A [`BlockPartition`] cuts every row (row axis) or every column (column
//! axis) of a weight matrix into `num_blocks` equal segments. Each segment
//! is one group of the penalty
//!
//! ```text
//! lambda * sum_{group, block} gamma[group, block] * ||segment||_2
//! ```
//!
//! with `gamma = 1 / (||segment||_2 + eps)` refreshed only at milestone steps.
//! Column-axis partitions are handled as row-axis partitions of the transpose,
//! so there is exactly one numeric code path.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::model::{Gradients, ModelParams};
use crate::numerics::{Axis, Matrix, Shape};

/// Default `eps` in the reweighting rule `gamma = 1 / (norm + eps)`.
pub const DEFAULT_REWEIGHT_EPSILON: f64 = 1e-6;
/// Default smoothing constant in the penalty subgradient. Only prevents 0/0.
pub const DEFAULT_GRAD_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    pub axis: Axis,
    pub rows: usize,
    pub cols: usize,
    /// Rows for the row axis, columns for the column axis.
    pub groups: usize,
    pub blocks_per_group: usize,
    pub block_width: usize,
    pub layer_name: String,
}

/// Splits each row (or column) of a `rows x cols` matrix into `num_blocks`
/// equal segments.
pub fn make_partition(rows: usize, cols: usize, axis: Axis, num_blocks: usize) -> Result<BlockPartition> {
    let (groups, extent) = match axis {
        Axis::Row => (rows, cols),
        Axis::Column => (cols, rows),
    };
    if num_blocks == 0 || extent == 0 || extent % num_blocks != 0 {
        return Err(Error::IndivisiblePartition { extent, num_blocks });
    }
    Ok(BlockPartition {
        axis,
        rows,
        cols,
        groups,
        blocks_per_group: num_blocks,
        block_width: extent / num_blocks,
        layer_name: String::new(),
    })
}

impl BlockPartition {
    pub fn named(mut self, layer_name: impl Into<String>) -> Self {
        self.layer_name = layer_name.into();
        self
    }

    pub fn shape(&self) -> Shape {
        Shape {
            rows: self.rows,
            cols: self.cols,
        }
    }

    pub fn num_segments(&self) -> usize {
        self.groups * self.blocks_per_group
    }

    /// Matrix coordinates covered by segment `(group, block)`.
    pub fn segment_entries(&self, group: usize, block: usize) -> impl Iterator<Item = (usize, usize)> {
        let lo = block * self.block_width;
        let axis = self.axis;
        (lo..lo + self.block_width).map(move |t| match axis {
            Axis::Row => (group, t),
            Axis::Column => (t, group),
        })
    }

    /// `(group, block)` owning entry `(i, j)`.
    pub fn segment_of(&self, i: usize, j: usize) -> (usize, usize) {
        match self.axis {
            Axis::Row => (i, j / self.block_width),
            Axis::Column => (j, i / self.block_width),
        }
    }

    pub(crate) fn check(&self, w: &Matrix, op: &'static str) -> Result<()> {
        if w.shape() != self.shape() {
            return Err(Error::ShapeMismatch {
                op,
                left: w.shape(),
                right: self.shape(),
            });
        }
        Ok(())
    }

    /// The matrix laid out so that groups are rows.
    pub(crate) fn row_view<'a>(&self, w: &'a Matrix) -> Cow<'a, Matrix> {
        match self.axis {
            Axis::Row => Cow::Borrowed(w),
            Axis::Column => Cow::Owned(w.transpose()),
        }
    }
}

/// Per-segment l2 norms as a `groups x blocks_per_group` matrix.
pub fn group_norms(w: &Matrix, part: &BlockPartition) -> Result<Matrix> {
    part.check(w, "group_norms")?;
    let view = part.row_view(w);
    let width = part.block_width;
    Ok(Matrix::from_fn(part.groups, part.blocks_per_group, |g, b| {
        view.row(g)[b * width..(b + 1) * width]
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }))
}

/// Reweighting coefficients, one per segment.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaWeights {
    /// `groups x blocks_per_group`, all strictly positive.
    pub values: Matrix,
    pub epsilon: f64,
    pub update_count: usize,
}

/// `gamma = 1 / (norm + epsilon)` for every segment of `w`.
pub fn gamma_update(w: &Matrix, part: &BlockPartition, epsilon: f64) -> Result<GammaWeights> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let norms = group_norms(w, part)?;
    Ok(GammaWeights {
        values: norms.map(|n| 1.0 / (n + epsilon)),
        epsilon,
        update_count: 1,
    })
}

impl GammaWeights {
    /// All-ones weights, i.e. the plain (unweighted) group Lasso.
    pub fn uniform(part: &BlockPartition) -> Self {
        GammaWeights {
            values: Matrix::filled(part.groups, part.blocks_per_group, 1.0),
            epsilon: DEFAULT_REWEIGHT_EPSILON,
            update_count: 0,
        }
    }

    /// Recomputes from the current weights, keeping `epsilon` and bumping the count.
    pub fn refreshed(&self, w: &Matrix, part: &BlockPartition) -> Result<GammaWeights> {
        let mut next = gamma_update(w, part, self.epsilon)?;
        next.update_count = self.update_count + 1;
        Ok(next)
    }

    fn check(&self, part: &BlockPartition) -> Result<()> {
        if self.values.rows() != part.groups || self.values.cols() != part.blocks_per_group {
            return Err(Error::ShapeMismatch {
                op: "gamma",
                left: self.values.shape(),
                right: Shape {
                    rows: part.groups,
                    cols: part.blocks_per_group,
                },
            });
        }
        Ok(())
    }
}

/// `lambda * sum(gamma * norm)` over all segments.
pub fn penalty(w: &Matrix, part: &BlockPartition, gamma: &GammaWeights, lambda: f64) -> Result<f64> {
    gamma.check(part)?;
    let norms = group_norms(w, part)?;
    let weighted: f64 = norms
        .as_slice()
        .iter()
        .zip(gamma.values.as_slice())
        .map(|(n, g)| n * g)
        .sum();
    Ok(lambda * weighted)
}

/// Subgradient of [`penalty`] with `gamma` held constant:
/// `lambda * gamma * w / (norm + grad_epsilon)` entrywise.
pub fn penalty_grad(w: &Matrix, part: &BlockPartition, gamma: &GammaWeights, lambda: f64) -> Result<Matrix> {
    penalty_grad_with(w, part, gamma, lambda, DEFAULT_GRAD_EPSILON)
}

pub fn penalty_grad_with(
    w: &Matrix,
    part: &BlockPartition,
    gamma: &GammaWeights,
    lambda: f64,
    grad_epsilon: f64,
) -> Result<Matrix> {
    gamma.check(part)?;
    let norms = group_norms(w, part)?;
    let view = part.row_view(w);
    let width = part.block_width;
    let mut grad = Matrix::zeros(view.rows(), view.cols());
    for g in 0..part.groups {
        let src = view.row(g);
        let dst = grad.row_mut(g);
        for b in 0..part.blocks_per_group {
            let coeff = lambda * gamma.values[(g, b)] / (norms[(g, b)] + grad_epsilon);
            for t in b * width..(b + 1) * width {
                dst[t] = coeff * src[t];
            }
        }
    }
    Ok(match part.axis {
        Axis::Row => grad,
        Axis::Column => grad.transpose(),
    })
}

/// One regularized tensor inside a [`ModelRegularizer`].
#[derive(Debug, Clone)]
pub struct LayerPenalty {
    pub tensor: usize,
    pub partition: BlockPartition,
    pub gamma: GammaWeights,
}

/// Sum of per-layer reweighted penalties over the model. Tensors without an
/// entry carry no penalty.
#[derive(Debug, Clone)]
pub struct ModelRegularizer {
    pub layers: Vec<LayerPenalty>,
    pub epsilon: f64,
}

impl ModelRegularizer {
    /// One entry per `(layer name, axis, num_blocks)`; gammas start at the
    /// current weights (the initial "calculate gamma" step).
    pub fn new(params: &ModelParams, entries: &[(String, Axis, usize)], epsilon: f64) -> Result<Self> {
        let mut layers = Vec::with_capacity(entries.len());
        for (name, axis, k) in entries {
            let tensor = params.index_of(name)?;
            let w = &params.tensors[tensor].matrix;
            let partition = make_partition(w.rows(), w.cols(), *axis, *k)?.named(name.clone());
            let gamma = gamma_update(w, &partition, epsilon)?;
            layers.push(LayerPenalty {
                tensor,
                partition,
                gamma,
            });
        }
        Ok(ModelRegularizer { layers, epsilon })
    }

    pub fn refresh_gammas(&mut self, params: &ModelParams) -> Result<()> {
        for layer in &mut self.layers {
            let w = &params.tensors[layer.tensor].matrix;
            layer.gamma = layer.gamma.refreshed(w, &layer.partition)?;
        }
        Ok(())
    }

    pub fn penalty(&self, params: &ModelParams, lambda: f64) -> Result<f64> {
        let mut total = 0.0;
        for layer in &self.layers {
            total += penalty(&params.tensors[layer.tensor].matrix, &layer.partition, &layer.gamma, lambda)?;
        }
        Ok(total)
    }

    /// Adds the penalty subgradient to the weight gradients. Biases are untouched.
    pub fn accumulate_grad(&self, params: &ModelParams, grads: &mut Gradients, lambda: f64) -> Result<()> {
        for layer in &self.layers {
            let g = penalty_grad(&params.tensors[layer.tensor].matrix, &layer.partition, &layer.gamma, lambda)?;
            grads.tensors[layer.tensor].weight.add_assign(&g)?;
        }
        Ok(())
    }
}
