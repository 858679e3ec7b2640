//! Dense 64-bit tensor core with tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive application in topological order;
//! [`Tape::backward`] runs a single reverse sweep and accumulates gradients
//! on every node that requires them. The primitive set is exactly what the
//! classifier needs: matmul (optionally batched), broadcast add, relu,
//! sigmoid, reshape, causal dilated 1-D convolution, batch/layer
//! normalization, the class-weighted cross entropy and squared-norm
//! regularizer terms.

use ndarray::{Array1, Array2, Array3, ArrayD, Axis, Ix2, Ix3, IxDyn};
use ndarray::parallel::prelude::*;
use thiserror::Error;

const NORM_EPS: f64 = 1e-5;
const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: lhs {lhs:?}, rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {detail}")]
    Contract { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
}

fn contract(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Contract {
        op,
        detail: detail.into(),
    }
}

enum Op {
    Leaf,
    Add {
        lhs: TensorId,
        rhs: TensorId,
    },
    Matmul {
        lhs: TensorId,
        rhs: TensorId,
    },
    Relu {
        input: TensorId,
    },
    Sigmoid {
        input: TensorId,
    },
    Reshape {
        input: TensorId,
    },
    SwapLast2 {
        input: TensorId,
    },
    SelectLast {
        input: TensorId,
    },
    CausalConv {
        input: TensorId,
        filters: TensorId,
        dilation: usize,
    },
    BatchNormTrain {
        input: TensorId,
        scale: TensorId,
        shift: TensorId,
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
    },
    BatchNormInfer {
        input: TensorId,
        scale: TensorId,
        shift: TensorId,
        inv_std: Array1<f64>,
    },
    LayerNorm {
        input: TensorId,
        scale: TensorId,
        shift: TensorId,
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
    },
    WeightedBce {
        probs: TensorId,
        labels: Vec<f64>,
        alpha0: f64,
        alpha1: f64,
        clamped: Vec<f64>,
    },
    SquaredNorm {
        input: TensorId,
    },
    ScaledSum {
        terms: Vec<(TensorId, f64)>,
    },
}

/// One recorded tensor: value, op provenance and (after `backward`) the
/// accumulated gradient.
pub struct Tensor {
    value: ArrayD<f64>,
    grad: Option<ArrayD<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Computation tape; nodes are stored in topological (insertion) order so a
/// single reverse sweep visits each node once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Tensor>,
}

/// Sum `grad` down to `shape`, undoing numpy-style trailing broadcast.
fn reduce_to_shape(grad: &ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    let mut g = grad.clone();
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for (axis, &dim) in shape.iter().enumerate() {
        if g.shape()[axis] != dim {
            debug_assert_eq!(dim, 1);
            let collapsed = g.sum_axis(Axis(axis));
            g = collapsed.insert_axis(Axis(axis));
        }
    }
    g
}

fn as2(a: &ArrayD<f64>) -> ndarray::ArrayView2<'_, f64> {
    a.view().into_dimensionality::<Ix2>().unwrap()
}

fn as3(a: &ArrayD<f64>) -> ndarray::ArrayView3<'_, f64> {
    a.view().into_dimensionality::<Ix3>().unwrap()
}

/// Copy a view into a freshly allocated row-major array (views of transposed
/// data keep their strides under `to_owned`, which breaks later reshapes).
fn owned_std(view: ndarray::ArrayViewD<'_, f64>) -> ArrayD<f64> {
    let shape = view.raw_dim();
    let mut out = ArrayD::zeros(shape);
    out.assign(&view);
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: TensorId) -> &ArrayD<f64> {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated by the last `backward` call, if any.
    pub fn grad(&self, id: TensorId) -> Option<&ArrayD<f64>> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn scalar(&self, id: TensorId) -> f64 {
        let v = &self.nodes[id.0].value;
        debug_assert_eq!(v.len(), 1);
        v.iter().next().copied().unwrap()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: ArrayD<f64>, requires_grad: bool, op: Op) -> TensorId {
        self.nodes.push(Tensor {
            value,
            grad: None,
            requires_grad,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn requires(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn leaf(&mut self, value: ArrayD<f64>, requires_grad: bool) -> TensorId {
        let value = if value.is_standard_layout() {
            value
        } else {
            owned_std(value.view())
        };
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: ArrayD<f64>) -> TensorId {
        self.leaf(value, false)
    }

    /// Elementwise add; `rhs` may broadcast against `lhs` trailing axes.
    pub fn add(&mut self, lhs: TensorId, rhs: TensorId) -> Result<TensorId, TensorError> {
        let a = &self.nodes[lhs.0].value;
        let b = &self.nodes[rhs.0].value;
        let out = {
            let bb = b.broadcast(a.raw_dim()).ok_or_else(|| TensorError::ShapeMismatch {
                op: "add",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            })?;
            a + &bb
        };
        let rg = self.requires(lhs) || self.requires(rhs);
        Ok(self.push(out, rg, Op::Add { lhs, rhs }))
    }

    /// Matrix product. Supported shapes: `[m,k]x[k,n]`, `[b,m,k]x[k,n]`,
    /// `[m,k]x[b,k,n]` and `[b,m,k]x[b,k,n]`.
    pub fn matmul(&mut self, lhs: TensorId, rhs: TensorId) -> Result<TensorId, TensorError> {
        let a = &self.nodes[lhs.0].value;
        let b = &self.nodes[rhs.0].value;
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: self.nodes[lhs.0].value.shape().to_vec(),
            rhs: self.nodes[rhs.0].value.shape().to_vec(),
        };
        let out: ArrayD<f64> = match (a.ndim(), b.ndim()) {
            (2, 2) => {
                let (a2, b2) = (as2(a), as2(b));
                if a2.ncols() != b2.nrows() {
                    return Err(mismatch());
                }
                a2.dot(&b2).into_dyn()
            }
            (3, 2) => {
                let (a3, b2) = (as3(a), as2(b));
                if a3.shape()[2] != b2.nrows() {
                    return Err(mismatch());
                }
                let mut out = Array3::<f64>::zeros((a3.shape()[0], a3.shape()[1], b2.ncols()));
                out.outer_iter_mut()
                    .into_par_iter()
                    .enumerate()
                    .for_each(|(i, mut o)| {
                        o.assign(&a3.index_axis(Axis(0), i).dot(&b2));
                    });
                out.into_dyn()
            }
            (2, 3) => {
                let (a2, b3) = (as2(a), as3(b));
                if a2.ncols() != b3.shape()[1] {
                    return Err(mismatch());
                }
                let mut out = Array3::<f64>::zeros((b3.shape()[0], a2.nrows(), b3.shape()[2]));
                out.outer_iter_mut()
                    .into_par_iter()
                    .enumerate()
                    .for_each(|(i, mut o)| {
                        o.assign(&a2.dot(&b3.index_axis(Axis(0), i)));
                    });
                out.into_dyn()
            }
            (3, 3) => {
                let (a3, b3) = (as3(a), as3(b));
                if a3.shape()[0] != b3.shape()[0] || a3.shape()[2] != b3.shape()[1] {
                    return Err(mismatch());
                }
                let mut out = Array3::<f64>::zeros((a3.shape()[0], a3.shape()[1], b3.shape()[2]));
                out.outer_iter_mut()
                    .into_par_iter()
                    .enumerate()
                    .for_each(|(i, mut o)| {
                        o.assign(&a3.index_axis(Axis(0), i).dot(&b3.index_axis(Axis(0), i)));
                    });
                out.into_dyn()
            }
            _ => return Err(mismatch()),
        };
        let rg = self.requires(lhs) || self.requires(rhs);
        Ok(self.push(out, rg, Op::Matmul { lhs, rhs }))
    }

    pub fn relu(&mut self, input: TensorId) -> TensorId {
        let out = self.nodes[input.0].value.mapv(|v| v.max(0.0));
        let rg = self.requires(input);
        self.push(out, rg, Op::Relu { input })
    }

    pub fn sigmoid(&mut self, input: TensorId) -> TensorId {
        let out = self.nodes[input.0].value.mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let rg = self.requires(input);
        self.push(out, rg, Op::Sigmoid { input })
    }

    pub fn reshape(&mut self, input: TensorId, shape: &[usize]) -> Result<TensorId, TensorError> {
        let v = &self.nodes[input.0].value;
        if v.len() != shape.iter().product::<usize>() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: v.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = v
            .to_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("length checked");
        let rg = self.requires(input);
        Ok(self.push(out, rg, Op::Reshape { input }))
    }

    /// Flatten all trailing axes, keeping the leading (batch) axis.
    pub fn flatten(&mut self, input: TensorId) -> Result<TensorId, TensorError> {
        let shape = self.shape(input).to_vec();
        if shape.is_empty() {
            return Err(contract("flatten", "scalar input"));
        }
        let rest: usize = shape[1..].iter().product();
        self.reshape(input, &[shape[0], rest])
    }

    /// Swap the last two axes (used to move channels to the normalized axis).
    pub fn swap_last2(&mut self, input: TensorId) -> Result<TensorId, TensorError> {
        let v = &self.nodes[input.0].value;
        let nd = v.ndim();
        if nd < 2 {
            return Err(contract("swap_last2", "needs at least 2 axes"));
        }
        let mut view = v.view();
        view.swap_axes(nd - 2, nd - 1);
        let out = owned_std(view);
        let rg = self.requires(input);
        Ok(self.push(out, rg, Op::SwapLast2 { input }))
    }

    /// Select the final index along the last axis, dropping that axis.
    pub fn select_last(&mut self, input: TensorId) -> Result<TensorId, TensorError> {
        let v = &self.nodes[input.0].value;
        let nd = v.ndim();
        if nd == 0 || v.shape()[nd - 1] == 0 {
            return Err(contract("select_last", "empty last axis"));
        }
        let idx = v.shape()[nd - 1] - 1;
        let out = owned_std(v.index_axis(Axis(nd - 1), idx));
        let rg = self.requires(input);
        Ok(self.push(out, rg, Op::SelectLast { input }))
    }

    /// Dense layer `x W + b` for `x: [b, in]`, `W: [in, out]`, `b: [out]`.
    pub fn dense(
        &mut self,
        input: TensorId,
        weight: TensorId,
        bias: TensorId,
    ) -> Result<TensorId, TensorError> {
        let prod = self.matmul(input, weight)?;
        self.add(prod, bias)
    }

    /// Causal dilated 1-D convolution with left zero padding.
    ///
    /// `input: [b, c_in, L]`, `filters: [c_out, c_in, k]` -> `[b, c_out, L]`;
    /// output position `j` depends only on input positions `<= j`.
    pub fn causal_conv1d(
        &mut self,
        input: TensorId,
        filters: TensorId,
        dilation: usize,
    ) -> Result<TensorId, TensorError> {
        if dilation == 0 {
            return Err(contract("causal_conv1d", "dilation must be >= 1"));
        }
        let x = &self.nodes[input.0].value;
        let f = &self.nodes[filters.0].value;
        if x.ndim() != 3 || f.ndim() != 3 || x.shape()[1] != f.shape()[1] {
            return Err(TensorError::ShapeMismatch {
                op: "causal_conv1d",
                lhs: x.shape().to_vec(),
                rhs: f.shape().to_vec(),
            });
        }
        let x3 = as3(x);
        let f3 = as3(f);
        let (batch, c_in, len) = (x3.shape()[0], x3.shape()[1], x3.shape()[2]);
        let (c_out, _, k) = (f3.shape()[0], f3.shape()[1], f3.shape()[2]);
        let mut out = Array3::<f64>::zeros((batch, c_out, len));
        out.outer_iter_mut()
            .into_par_iter()
            .enumerate()
            .for_each(|(bi, mut out_b)| {
                let x_b = x3.index_axis(Axis(0), bi);
                for o in 0..c_out {
                    let mut row = out_b.index_axis_mut(Axis(0), o);
                    let row = row.as_slice_mut().expect("standard layout");
                    for c in 0..c_in {
                        let xin = x_b.index_axis(Axis(0), c);
                        let xin = xin.as_slice().expect("standard layout");
                        for i in 0..k {
                            let w = f3[(o, c, i)];
                            let shift = dilation * i;
                            if w == 0.0 || shift >= len {
                                continue;
                            }
                            for j in 0..len - shift {
                                row[shift + j] += w * xin[j];
                            }
                        }
                    }
                }
            });
        let rg = self.requires(input) || self.requires(filters);
        Ok(self.push(
            out.into_dyn(),
            rg,
            Op::CausalConv {
                input,
                filters,
                dilation,
            },
        ))
    }

    /// Batch normalization over the feature (last) axis, training mode.
    ///
    /// Statistics are taken across all other axes. Returns the output node
    /// plus the biased batch mean/variance for running-stat updates.
    pub fn batch_norm_train(
        &mut self,
        input: TensorId,
        scale: TensorId,
        shift: TensorId,
    ) -> Result<(TensorId, Array1<f64>, Array1<f64>), TensorError> {
        let v = &self.nodes[input.0].value;
        let features = *v.shape().last().ok_or_else(|| contract("batch_norm", "scalar input"))?;
        let rows = v.len() / features;
        if rows < 2 {
            return Err(contract(
                "batch_norm",
                format!("training mode needs at least 2 rows, got {rows}"),
            ));
        }
        let x = v
            .view()
            .into_shape_with_order((rows, features))
            .expect("row-major reshape");
        let mean = x.mean_axis(Axis(0)).unwrap();
        let var = x.map_axis(Axis(0), |col| {
            let m = col.mean().unwrap();
            col.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64
        });
        let inv_std = var.mapv(|v| 1.0 / (v + NORM_EPS).sqrt());
        let mut xhat = Array2::<f64>::zeros((rows, features));
        for r in 0..rows {
            for c in 0..features {
                xhat[(r, c)] = (x[(r, c)] - mean[c]) * inv_std[c];
            }
        }
        let s = &self.nodes[scale.0].value;
        let b = &self.nodes[shift.0].value;
        if s.len() != features || b.len() != features {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm",
                lhs: vec![features],
                rhs: s.shape().to_vec(),
            });
        }
        let s1 = s.view().into_shape_with_order(features).unwrap();
        let b1 = b.view().into_shape_with_order(features).unwrap();
        let mut out = Array2::<f64>::zeros((rows, features));
        for r in 0..rows {
            for c in 0..features {
                out[(r, c)] = xhat[(r, c)] * s1[c] + b1[c];
            }
        }
        let out = out
            .into_shape_with_order(v.raw_dim())
            .expect("same length")
            .into_dyn();
        let rg = self.requires(input) || self.requires(scale) || self.requires(shift);
        let id = self.push(
            out,
            rg,
            Op::BatchNormTrain {
                input,
                scale,
                shift,
                xhat,
                inv_std: inv_std.clone(),
            },
        );
        Ok((id, mean, var))
    }

    /// Batch normalization using fixed running statistics (inference).
    pub fn batch_norm_infer(
        &mut self,
        input: TensorId,
        scale: TensorId,
        shift: TensorId,
        running_mean: &Array1<f64>,
        running_var: &Array1<f64>,
    ) -> Result<TensorId, TensorError> {
        let v = &self.nodes[input.0].value;
        let features = *v.shape().last().ok_or_else(|| contract("batch_norm", "scalar input"))?;
        if running_mean.len() != features || running_var.len() != features {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm",
                lhs: vec![features],
                rhs: vec![running_mean.len()],
            });
        }
        let inv_std = running_var.mapv(|v| 1.0 / (v + NORM_EPS).sqrt());
        let rows = v.len() / features;
        let x = v.view().into_shape_with_order((rows, features)).unwrap();
        let s = &self.nodes[scale.0].value;
        let b = &self.nodes[shift.0].value;
        let s1 = s.view().into_shape_with_order(features).unwrap();
        let b1 = b.view().into_shape_with_order(features).unwrap();
        let mut out = Array2::<f64>::zeros((rows, features));
        for r in 0..rows {
            for c in 0..features {
                out[(r, c)] = (x[(r, c)] - running_mean[c]) * inv_std[c] * s1[c] + b1[c];
            }
        }
        let out = out.into_shape_with_order(v.raw_dim()).unwrap().into_dyn();
        let rg = self.requires(input) || self.requires(scale) || self.requires(shift);
        Ok(self.push(
            out,
            rg,
            Op::BatchNormInfer {
                input,
                scale,
                shift,
                inv_std,
            },
        ))
    }

    /// Layer normalization over the last axis with learnable scale/shift.
    pub fn layer_norm(
        &mut self,
        input: TensorId,
        scale: TensorId,
        shift: TensorId,
    ) -> Result<TensorId, TensorError> {
        let v = &self.nodes[input.0].value;
        let features = *v.shape().last().ok_or_else(|| contract("layer_norm", "scalar input"))?;
        let rows = v.len() / features;
        let x = v.view().into_shape_with_order((rows, features)).unwrap();
        let s = &self.nodes[scale.0].value;
        let b = &self.nodes[shift.0].value;
        if s.len() != features || b.len() != features {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: vec![features],
                rhs: s.shape().to_vec(),
            });
        }
        let s1 = s.view().into_shape_with_order(features).unwrap();
        let b1 = b.view().into_shape_with_order(features).unwrap();
        let mut xhat = Array2::<f64>::zeros((rows, features));
        let mut inv_std = Array1::<f64>::zeros(rows);
        let mut out = Array2::<f64>::zeros((rows, features));
        for r in 0..rows {
            let row = x.index_axis(Axis(0), r);
            let m = row.mean().unwrap();
            let var = row.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / features as f64;
            let is = 1.0 / (var + NORM_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..features {
                xhat[(r, c)] = (row[c] - m) * is;
                out[(r, c)] = xhat[(r, c)] * s1[c] + b1[c];
            }
        }
        let out = out.into_shape_with_order(v.raw_dim()).unwrap().into_dyn();
        let rg = self.requires(input) || self.requires(scale) || self.requires(shift);
        Ok(self.push(
            out,
            rg,
            Op::LayerNorm {
                input,
                scale,
                shift,
                xhat,
                inv_std,
            },
        ))
    }

    /// Class-weighted binary cross entropy (summed, not averaged):
    /// `-sum_i (a1 y_i ln p_i + a0 (1-y_i) ln(1-p_i))` with probabilities
    /// clamped to `[1e-7, 1-1e-7]`.
    pub fn weighted_bce(
        &mut self,
        probs: TensorId,
        labels: &[f64],
        alpha0: f64,
        alpha1: f64,
    ) -> Result<TensorId, TensorError> {
        let p = &self.nodes[probs.0].value;
        if p.len() != labels.len() {
            return Err(TensorError::ShapeMismatch {
                op: "weighted_bce",
                lhs: p.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let clamped: Vec<f64> = p
            .iter()
            .map(|&v| v.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
            .collect();
        let mut loss = 0.0;
        for (pc, &y) in clamped.iter().zip(labels) {
            loss -= alpha1 * y * pc.ln() + alpha0 * (1.0 - y) * (1.0 - pc).ln();
        }
        if !loss.is_finite() {
            return Err(TensorError::NonFinite { op: "weighted_bce" });
        }
        let rg = self.requires(probs);
        Ok(self.push(
            ArrayD::from_elem(IxDyn(&[]), loss),
            rg,
            Op::WeightedBce {
                probs,
                labels: labels.to_vec(),
                alpha0,
                alpha1,
                clamped,
            },
        ))
    }

    /// `sum(x^2)` as a scalar node (the L2 term scales it by `beta/2`).
    pub fn squared_norm(&mut self, input: TensorId) -> TensorId {
        let s: f64 = self.nodes[input.0].value.iter().map(|v| v * v).sum();
        let rg = self.requires(input);
        self.push(ArrayD::from_elem(IxDyn(&[]), s), rg, Op::SquaredNorm { input })
    }

    /// Weighted sum of scalar nodes.
    pub fn scaled_sum(&mut self, terms: &[(TensorId, f64)]) -> Result<TensorId, TensorError> {
        let mut acc = 0.0;
        for &(id, c) in terms {
            let v = &self.nodes[id.0].value;
            if v.len() != 1 {
                return Err(contract("scaled_sum", "all terms must be scalars"));
            }
            acc += c * v.iter().next().unwrap();
        }
        let rg = terms.iter().any(|&(id, _)| self.requires(id));
        Ok(self.push(
            ArrayD::from_elem(IxDyn(&[]), acc),
            rg,
            Op::ScaledSum {
                terms: terms.to_vec(),
            },
        ))
    }

    /// Reverse sweep from a scalar root; gradients accumulate on every node
    /// with `requires_grad` reachable from the root.
    pub fn backward(&mut self, root: TensorId) {
        let n = self.nodes.len();
        let mut grads: Vec<Option<ArrayD<f64>>> = (0..n).map(|_| None).collect();
        let seed = ArrayD::ones(self.nodes[root.0].value.raw_dim());
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            self.nodes[i].grad = if self.nodes[i].requires_grad {
                Some(g)
            } else {
                None
            };
        }
    }

    fn accumulate(&self, grads: &mut [Option<ArrayD<f64>>], id: TensorId, delta: ArrayD<f64>) {
        // Constants do not need gradients, but interior nodes on the path to
        // parameters do even when requires_grad is false for user reads; we
        // only skip nodes that cannot reach a gradient-requiring leaf.
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, i: usize, g: &ArrayD<f64>, grads: &mut [Option<ArrayD<f64>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add { lhs, rhs } => {
                self.accumulate(grads, *lhs, g.clone());
                let target = self.nodes[rhs.0].value.shape().to_vec();
                self.accumulate(grads, *rhs, reduce_to_shape(g, &target));
            }
            Op::Matmul { lhs, rhs } => {
                let a = &self.nodes[lhs.0].value;
                let b = &self.nodes[rhs.0].value;
                match (a.ndim(), b.ndim()) {
                    (2, 2) => {
                        let g2 = as2(g);
                        if self.requires(*lhs) {
                            self.accumulate(grads, *lhs, g2.dot(&as2(b).t()).into_dyn());
                        }
                        if self.requires(*rhs) {
                            self.accumulate(grads, *rhs, as2(a).t().dot(&g2).into_dyn());
                        }
                    }
                    (3, 2) => {
                        let (a3, b2, g3) = (as3(a), as2(b), as3(g));
                        if self.requires(*lhs) {
                            let mut da = Array3::<f64>::zeros(a3.raw_dim());
                            da.outer_iter_mut().into_par_iter().enumerate().for_each(
                                |(bi, mut o)| {
                                    o.assign(&g3.index_axis(Axis(0), bi).dot(&b2.t()));
                                },
                            );
                            self.accumulate(grads, *lhs, da.into_dyn());
                        }
                        if self.requires(*rhs) {
                            let mut db = Array2::<f64>::zeros(b2.raw_dim());
                            for bi in 0..a3.shape()[0] {
                                db += &a3.index_axis(Axis(0), bi).t().dot(&g3.index_axis(Axis(0), bi));
                            }
                            self.accumulate(grads, *rhs, db.into_dyn());
                        }
                    }
                    (2, 3) => {
                        let (a2, b3, g3) = (as2(a), as3(b), as3(g));
                        if self.requires(*lhs) {
                            let mut da = Array2::<f64>::zeros(a2.raw_dim());
                            for bi in 0..b3.shape()[0] {
                                da += &g3
                                    .index_axis(Axis(0), bi)
                                    .dot(&b3.index_axis(Axis(0), bi).t());
                            }
                            self.accumulate(grads, *lhs, da.into_dyn());
                        }
                        if self.requires(*rhs) {
                            let mut db = Array3::<f64>::zeros(b3.raw_dim());
                            db.outer_iter_mut().into_par_iter().enumerate().for_each(
                                |(bi, mut o)| {
                                    o.assign(&a2.t().dot(&g3.index_axis(Axis(0), bi)));
                                },
                            );
                            self.accumulate(grads, *rhs, db.into_dyn());
                        }
                    }
                    (3, 3) => {
                        let (a3, b3, g3) = (as3(a), as3(b), as3(g));
                        if self.requires(*lhs) {
                            let mut da = Array3::<f64>::zeros(a3.raw_dim());
                            da.outer_iter_mut().into_par_iter().enumerate().for_each(
                                |(bi, mut o)| {
                                    o.assign(
                                        &g3.index_axis(Axis(0), bi)
                                            .dot(&b3.index_axis(Axis(0), bi).t()),
                                    );
                                },
                            );
                            self.accumulate(grads, *lhs, da.into_dyn());
                        }
                        if self.requires(*rhs) {
                            let mut db = Array3::<f64>::zeros(b3.raw_dim());
                            db.outer_iter_mut().into_par_iter().enumerate().for_each(
                                |(bi, mut o)| {
                                    o.assign(
                                        &a3.index_axis(Axis(0), bi)
                                            .t()
                                            .dot(&g3.index_axis(Axis(0), bi)),
                                    );
                                },
                            );
                            self.accumulate(grads, *rhs, db.into_dyn());
                        }
                    }
                    _ => unreachable!("validated in forward"),
                }
            }
            Op::Relu { input } => {
                let mask = &self.nodes[input.0].value;
                let mut dx = g.clone();
                dx.zip_mut_with(mask, |d, &m| {
                    // Subgradient 0 at the kink.
                    if m <= 0.0 {
                        *d = 0.0;
                    }
                });
                self.accumulate(grads, *input, dx);
            }
            Op::Sigmoid { input } => {
                let y = &self.nodes[i].value;
                let mut dx = g.clone();
                dx.zip_mut_with(y, |d, &yv| *d *= yv * (1.0 - yv));
                self.accumulate(grads, *input, dx);
            }
            Op::Reshape { input } => {
                let target = self.nodes[input.0].value.raw_dim();
                let dx = g.to_owned().into_shape_with_order(target).expect("same length");
                self.accumulate(grads, *input, dx);
            }
            Op::SwapLast2 { input } => {
                let nd = g.ndim();
                let mut view = g.view();
                view.swap_axes(nd - 2, nd - 1);
                self.accumulate(grads, *input, owned_std(view));
            }
            Op::SelectLast { input } => {
                let src = &self.nodes[input.0].value;
                let nd = src.ndim();
                let idx = src.shape()[nd - 1] - 1;
                let mut dx = ArrayD::<f64>::zeros(src.raw_dim());
                dx.index_axis_mut(Axis(nd - 1), idx).assign(g);
                self.accumulate(grads, *input, dx);
            }
            Op::CausalConv {
                input,
                filters,
                dilation,
            } => {
                let x3 = as3(&self.nodes[input.0].value);
                let f3 = as3(&self.nodes[filters.0].value);
                let g3 = as3(g);
                let (batch, c_in, len) = (x3.shape()[0], x3.shape()[1], x3.shape()[2]);
                let (c_out, _, k) = (f3.shape()[0], f3.shape()[1], f3.shape()[2]);
                let d = *dilation;
                if self.requires(*input) {
                    let mut dx = Array3::<f64>::zeros((batch, c_in, len));
                    dx.outer_iter_mut().into_par_iter().enumerate().for_each(
                        |(bi, mut dx_b)| {
                            let g_b = g3.index_axis(Axis(0), bi);
                            for c in 0..c_in {
                                let mut row = dx_b.index_axis_mut(Axis(0), c);
                                let row = row.as_slice_mut().expect("standard layout");
                                for o in 0..c_out {
                                    let gout = g_b.index_axis(Axis(0), o);
                                    let gout = gout.as_slice().expect("standard layout");
                                    for i in 0..k {
                                        let w = f3[(o, c, i)];
                                        let shift = d * i;
                                        if w == 0.0 || shift >= len {
                                            continue;
                                        }
                                        for j in 0..len - shift {
                                            row[j] += w * gout[shift + j];
                                        }
                                    }
                                }
                            }
                        },
                    );
                    self.accumulate(grads, *input, dx.into_dyn());
                }
                if self.requires(*filters) {
                    // Per-sample partials summed in index order keeps the
                    // reduction deterministic.
                    let partials: Vec<Array3<f64>> = (0..batch)
                        .into_par_iter()
                        .map(|bi| {
                            let x_b = x3.index_axis(Axis(0), bi);
                            let g_b = g3.index_axis(Axis(0), bi);
                            let mut df = Array3::<f64>::zeros((c_out, c_in, k));
                            for o in 0..c_out {
                                let gout = g_b.index_axis(Axis(0), o);
                                let gout = gout.as_slice().expect("standard layout");
                                for c in 0..c_in {
                                    let xin = x_b.index_axis(Axis(0), c);
                                    let xin = xin.as_slice().expect("standard layout");
                                    for i in 0..k {
                                        let shift = d * i;
                                        if shift >= len {
                                            continue;
                                        }
                                        let mut acc = 0.0;
                                        for j in 0..len - shift {
                                            acc += gout[shift + j] * xin[j];
                                        }
                                        df[(o, c, i)] += acc;
                                    }
                                }
                            }
                            df
                        })
                        .collect();
                    let mut df = Array3::<f64>::zeros((c_out, c_in, k));
                    for p in partials {
                        df += &p;
                    }
                    self.accumulate(grads, *filters, df.into_dyn());
                }
            }
            Op::BatchNormTrain {
                input,
                scale,
                shift,
                xhat,
                inv_std,
            } => {
                let features = xhat.ncols();
                let rows = xhat.nrows();
                let g2 = g.view().into_shape_with_order((rows, features)).unwrap();
                let s1 = self.nodes[scale.0]
                    .value
                    .view()
                    .into_shape_with_order(features)
                    .unwrap()
                    .to_owned();
                if self.requires(*shift) {
                    let db = g2.sum_axis(Axis(0));
                    let shape = self.nodes[shift.0].value.raw_dim();
                    self.accumulate(grads, *shift, db.into_shape_with_order(shape).unwrap().into_dyn());
                }
                if self.requires(*scale) {
                    let ds = (&g2 * xhat).sum_axis(Axis(0));
                    let shape = self.nodes[scale.0].value.raw_dim();
                    self.accumulate(grads, *scale, ds.into_shape_with_order(shape).unwrap().into_dyn());
                }
                if self.requires(*input) {
                    let m = rows as f64;
                    let sum_g = g2.sum_axis(Axis(0));
                    let sum_gx = (&g2 * xhat).sum_axis(Axis(0));
                    let mut dx = Array2::<f64>::zeros((rows, features));
                    for r in 0..rows {
                        for c in 0..features {
                            dx[(r, c)] = s1[c] * inv_std[c] / m
                                * (m * g2[(r, c)] - sum_g[c] - xhat[(r, c)] * sum_gx[c]);
                        }
                    }
                    let shape = self.nodes[input.0].value.raw_dim();
                    self.accumulate(grads, *input, dx.into_shape_with_order(shape).unwrap().into_dyn());
                }
            }
            Op::BatchNormInfer {
                input,
                scale,
                shift,
                inv_std,
            } => {
                let features = inv_std.len();
                let rows = g.len() / features;
                let g2 = g.view().into_shape_with_order((rows, features)).unwrap();
                let x = self.nodes[input.0]
                    .value
                    .view()
                    .into_shape_with_order((rows, features))
                    .unwrap();
                let y = self.nodes[i]
                    .value
                    .view()
                    .into_shape_with_order((rows, features))
                    .unwrap();
                let s1 = self.nodes[scale.0]
                    .value
                    .view()
                    .into_shape_with_order(features)
                    .unwrap()
                    .to_owned();
                let b1 = self.nodes[shift.0]
                    .value
                    .view()
                    .into_shape_with_order(features)
                    .unwrap()
                    .to_owned();
                let _ = x;
                if self.requires(*shift) {
                    let db = g2.sum_axis(Axis(0));
                    let shape = self.nodes[shift.0].value.raw_dim();
                    self.accumulate(grads, *shift, db.into_shape_with_order(shape).unwrap().into_dyn());
                }
                if self.requires(*scale) {
                    // xhat = (y - shift) / scale when scale != 0; recompute
                    // from x instead to avoid the division.
                    let mut ds = Array1::<f64>::zeros(features);
                    for r in 0..rows {
                        for c in 0..features {
                            let xhat = if s1[c] != 0.0 {
                                (y[(r, c)] - b1[c]) / s1[c]
                            } else {
                                0.0
                            };
                            ds[c] += g2[(r, c)] * xhat;
                        }
                    }
                    let shape = self.nodes[scale.0].value.raw_dim();
                    self.accumulate(grads, *scale, ds.into_shape_with_order(shape).unwrap().into_dyn());
                }
                if self.requires(*input) {
                    let mut dx = Array2::<f64>::zeros((rows, features));
                    for r in 0..rows {
                        for c in 0..features {
                            dx[(r, c)] = g2[(r, c)] * s1[c] * inv_std[c];
                        }
                    }
                    let shape = self.nodes[input.0].value.raw_dim();
                    self.accumulate(grads, *input, dx.into_shape_with_order(shape).unwrap().into_dyn());
                }
            }
            Op::LayerNorm {
                input,
                scale,
                shift,
                xhat,
                inv_std,
            } => {
                let rows = xhat.nrows();
                let features = xhat.ncols();
                let g2 = g.view().into_shape_with_order((rows, features)).unwrap();
                let s1 = self.nodes[scale.0]
                    .value
                    .view()
                    .into_shape_with_order(features)
                    .unwrap()
                    .to_owned();
                if self.requires(*shift) {
                    let db = g2.sum_axis(Axis(0));
                    let shape = self.nodes[shift.0].value.raw_dim();
                    self.accumulate(grads, *shift, db.into_shape_with_order(shape).unwrap().into_dyn());
                }
                if self.requires(*scale) {
                    let ds = (&g2 * xhat).sum_axis(Axis(0));
                    let shape = self.nodes[scale.0].value.raw_dim();
                    self.accumulate(grads, *scale, ds.into_shape_with_order(shape).unwrap().into_dyn());
                }
                if self.requires(*input) {
                    let f = features as f64;
                    let mut dx = Array2::<f64>::zeros((rows, features));
                    for r in 0..rows {
                        let mut mean_gs = 0.0;
                        let mut mean_gsx = 0.0;
                        for c in 0..features {
                            let gs = g2[(r, c)] * s1[c];
                            mean_gs += gs;
                            mean_gsx += gs * xhat[(r, c)];
                        }
                        mean_gs /= f;
                        mean_gsx /= f;
                        for c in 0..features {
                            let gs = g2[(r, c)] * s1[c];
                            dx[(r, c)] = inv_std[r] * (gs - mean_gs - xhat[(r, c)] * mean_gsx);
                        }
                    }
                    let shape = self.nodes[input.0].value.raw_dim();
                    self.accumulate(grads, *input, dx.into_shape_with_order(shape).unwrap().into_dyn());
                }
            }
            Op::WeightedBce {
                probs,
                labels,
                alpha0,
                alpha1,
                clamped,
            } => {
                if self.requires(*probs) {
                    let gscale = g.iter().next().copied().unwrap();
                    let p = &self.nodes[probs.0].value;
                    let mut dx = ArrayD::<f64>::zeros(p.raw_dim());
                    for ((d, &pc), (&y, &praw)) in dx
                        .iter_mut()
                        .zip(clamped.iter())
                        .zip(labels.iter().zip(p.iter()))
                    {
                        // Clamped probabilities are saturated; no gradient.
                        if praw <= PROB_CLAMP || praw >= 1.0 - PROB_CLAMP {
                            continue;
                        }
                        *d = gscale * (-(alpha1 * y / pc) + alpha0 * (1.0 - y) / (1.0 - pc));
                    }
                    self.accumulate(grads, *probs, dx);
                }
            }
            Op::SquaredNorm { input } => {
                let gscale = g.iter().next().copied().unwrap();
                let dx = self.nodes[input.0].value.mapv(|v| 2.0 * v * gscale);
                self.accumulate(grads, *input, dx);
            }
            Op::ScaledSum { terms } => {
                let gscale = g.iter().next().copied().unwrap();
                for &(id, c) in terms {
                    if self.requires(id) {
                        let shape = self.nodes[id.0].value.raw_dim();
                        self.accumulate(grads, id, ArrayD::from_elem(shape, c * gscale));
                    }
                }
            }
        }
    }
}

/// Compare reverse-mode gradients against central finite differences.
///
/// `f` must build a scalar from the given leaves; it is re-run for every
/// perturbed coordinate. Returns the max relative error
/// `|a - n| / max(1e-8, |a| + |n|)` over all coordinates.
pub fn grad_check<F>(f: F, inputs: &[ArrayD<f64>], eps: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &[TensorId]) -> Result<TensorId, TensorError>,
{
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = inputs
        .iter()
        .map(|v| tape.leaf(v.clone(), true))
        .collect();
    let root = f(&mut tape, &ids)?;
    if tape.value(root).len() != 1 {
        return Err(contract("grad_check", "objective must be scalar"));
    }
    tape.backward(root);
    let analytic: Vec<ArrayD<f64>> = ids
        .iter()
        .map(|&id| {
            tape.grad(id)
                .cloned()
                .unwrap_or_else(|| ArrayD::zeros(tape.value(id).raw_dim()))
        })
        .collect();

    let eval = |perturbed: &[ArrayD<f64>]| -> Result<f64, TensorError> {
        let mut t = Tape::new();
        let ids: Vec<TensorId> = perturbed.iter().map(|v| t.leaf(v.clone(), true)).collect();
        let root = f(&mut t, &ids)?;
        Ok(t.scalar(root))
    };

    let mut max_rel = 0.0f64;
    for (ti, input) in inputs.iter().enumerate() {
        for flat in 0..input.len() {
            let mut plus: Vec<ArrayD<f64>> = inputs.to_vec();
            let mut minus: Vec<ArrayD<f64>> = inputs.to_vec();
            plus[ti].as_slice_mut().unwrap()[flat] += eps;
            minus[ti].as_slice_mut().unwrap()[flat] -= eps;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
            let a = analytic[ti].as_slice().unwrap()[flat];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2, arr3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let eye = t.constant(arr2(&[[1.0, 0.0], [0.0, 1.0]]).into_dyn());
        let x = t.constant(arr2(&[[3.0, -1.0], [2.5, 0.5]]).into_dyn());
        let y = t.matmul(eye, x).unwrap();
        assert_eq!(t.value(y), t.value(x));
    }

    #[test]
    fn matmul_shape_mismatch_names_shapes() {
        let mut t = Tape::new();
        let a = t.constant(ArrayD::zeros(IxDyn(&[2, 3])));
        let b = t.constant(ArrayD::zeros(IxDyn(&[2, 3])));
        let err = t.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn relu_values_and_mask() {
        let mut t = Tape::new();
        let x = t.leaf(arr1(&[-1.0, 0.0, 2.0]).into_dyn(), true);
        let y = t.relu(x);
        assert_eq!(t.value(y).as_slice().unwrap(), &[0.0, 0.0, 2.0]);
        let s = t.squared_norm(y);
        let half = t.scaled_sum(&[(s, 0.5)]).unwrap();
        t.backward(half);
        // d(0.5*sum(relu(x)^2))/dx = relu(x) * mask
        assert_eq!(t.grad(x).unwrap().as_slice().unwrap(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(arr1(&[0.0]).into_dyn(), true);
        let y = t.sigmoid(x);
        assert_eq!(t.scalar(y), 0.5);
        let root = t.scaled_sum(&[(y, 1.0)]).unwrap();
        t.backward(root);
        assert!((t.grad(x).unwrap()[[0]] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn conv_literal_examples() {
        let mut t = Tape::new();
        let x = t.constant(arr3(&[[[1.0, 2.0, 3.0]]]).into_dyn());
        let f = t.constant(arr3(&[[[1.0, 1.0]]]).into_dyn());
        let y = t.causal_conv1d(x, f, 1).unwrap();
        assert_eq!(t.value(y).as_slice().unwrap(), &[1.0, 3.0, 5.0]);

        let x = t.constant(arr3(&[[[1.0, 2.0, 3.0, 4.0]]]).into_dyn());
        let y = t.causal_conv1d(x, f, 2).unwrap();
        assert_eq!(t.value(y).as_slice().unwrap(), &[1.0, 2.0, 4.0, 6.0]);

        let ident = t.constant(arr3(&[[[1.0]]]).into_dyn());
        let y = t.causal_conv1d(x, ident, 1).unwrap();
        assert_eq!(t.value(y), t.value(x));
    }

    #[test]
    fn conv_is_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x0 = randn(&mut rng, &[1, 2, 12]);
        let f = randn(&mut rng, &[3, 2, 2]);
        let run = |x: &ArrayD<f64>| {
            let mut t = Tape::new();
            let xi = t.constant(x.clone());
            let fi = t.constant(f.clone());
            let y = t.causal_conv1d(xi, fi, 2).unwrap();
            t.value(y).clone()
        };
        let base = run(&x0);
        let mut bumped = x0.clone();
        let j = 7;
        bumped[[0, 1, j]] += 1.0;
        let out = run(&bumped);
        // With kernel 2 and dilation 2, input j feeds outputs j and j + 2
        // only; nothing earlier than j may move.
        for pos in 0..12 {
            for ch in 0..3 {
                let changed = (out[[0, ch, pos]] - base[[0, ch, pos]]).abs() > 1e-12;
                let reachable = pos == j || pos == j + 2;
                assert_eq!(changed, reachable, "position {pos} channel {ch}");
            }
        }
    }

    #[test]
    fn conv_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = randn(&mut rng, &[2, 3, 9]);
        let y = randn(&mut rng, &[2, 3, 9]);
        let f = randn(&mut rng, &[4, 3, 2]);
        let run = |input: &ArrayD<f64>| {
            let mut t = Tape::new();
            let xi = t.constant(input.clone());
            let fi = t.constant(f.clone());
            let out = t.causal_conv1d(xi, fi, 2).unwrap();
            t.value(out).clone()
        };
        let (a, b) = (0.7, -1.3);
        let combo = run(&(&x * a + &y * b));
        let separate = run(&x) * a + run(&y) * b;
        for (u, v) in combo.iter().zip(separate.iter()) {
            assert!((u - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn batch_norm_train_basics() {
        let mut t = Tape::new();
        // One constant column, one varying column.
        let x = t.constant(arr2(&[[5.0, 1.0], [5.0, 3.0], [5.0, 5.0]]).into_dyn());
        let scale = t.constant(arr1(&[1.0, 1.0]).into_dyn());
        let shift = t.constant(arr1(&[0.0, 0.0]).into_dyn());
        let (y, mean, var) = t.batch_norm_train(x, scale, shift).unwrap();
        let out = t.value(y);
        assert!(out[[0, 0]].abs() < 1e-9, "constant column normalizes to zero");
        assert!((mean[1] - 3.0).abs() < 1e-12);
        assert!((var[1] - 8.0 / 3.0).abs() < 1e-12);
        // Normalized column has mean ~0, var ~1.
        let col: Vec<f64> = (0..3).map(|r| out[[r, 1]]).collect();
        let m: f64 = col.iter().sum::<f64>() / 3.0;
        let v: f64 = col.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / 3.0;
        assert!(m.abs() < 1e-9);
        assert!((v - 1.0).abs() < 1e-4); // eps shifts it slightly below 1
    }

    #[test]
    fn batch_norm_train_needs_two_rows() {
        let mut t = Tape::new();
        let x = t.constant(ArrayD::zeros(IxDyn(&[1, 4])));
        let s = t.constant(ArrayD::ones(IxDyn(&[4])));
        let b = t.constant(ArrayD::zeros(IxDyn(&[4])));
        assert!(t.batch_norm_train(x, s, b).is_err());
    }

    #[test]
    fn batch_norm_infer_formula() {
        let mut t = Tape::new();
        let x = t.constant(arr2(&[[2.0], [4.0]]).into_dyn());
        let s = t.constant(arr1(&[1.0]).into_dyn());
        let b = t.constant(arr1(&[0.0]).into_dyn());
        let mean = arr1(&[1.0]);
        let var = arr1(&[4.0]);
        let y = t.batch_norm_infer(x, s, b, &mean, &var).unwrap();
        let expect = (2.0 - 1.0) / (4.0f64 + NORM_EPS).sqrt();
        assert!((t.value(y)[[0, 0]] - expect).abs() < 1e-12);
    }

    #[test]
    fn grad_check_quadratic() {
        let inputs = vec![arr1(&[1.0, 2.0]).into_dyn()];
        let err = grad_check(
            |t, ids| {
                let s = t.squared_norm(ids[0]);
                t.scaled_sum(&[(s, 1.0)])
            },
            &inputs,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-9, "rel err {err}");
    }

    #[test]
    fn grad_check_dense_sigmoid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs = vec![
            randn(&mut rng, &[3, 4]),
            randn(&mut rng, &[4, 2]),
            randn(&mut rng, &[2]),
        ];
        let err = grad_check(
            |t, ids| {
                let h = t.dense(ids[0], ids[1], ids[2])?;
                let p = t.sigmoid(h);
                let s = t.squared_norm(p);
                t.scaled_sum(&[(s, 1.0)])
            },
            &inputs,
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-6, "rel err {err}");
    }

    #[test]
    fn grad_check_every_primitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // matmul batched [b,m,k] x [k,n] plus broadcast add
        let err = grad_check(
            |t, ids| {
                let y = t.matmul(ids[0], ids[1])?;
                let y = t.add(y, ids[2])?;
                let s = t.squared_norm(y);
                t.scaled_sum(&[(s, 0.5)])
            },
            &[
                randn(&mut rng, &[2, 3, 4]),
                randn(&mut rng, &[4, 5]),
                randn(&mut rng, &[3, 5]),
            ],
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-6, "batched matmul rel err {err}");

        // conv
        let err = grad_check(
            |t, ids| {
                let y = t.causal_conv1d(ids[0], ids[1], 2)?;
                let s = t.squared_norm(y);
                t.scaled_sum(&[(s, 0.5)])
            },
            &[randn(&mut rng, &[2, 3, 8]), randn(&mut rng, &[4, 3, 2])],
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-6, "conv rel err {err}");

        // batch norm (train); the constant offset projection keeps every
        // gradient coordinate O(1) so the relative-error metric is fair.
        let proj = randn(&mut rng, &[3, 3]) + 1.0;
        let p = proj.clone();
        let err = grad_check(
            move |t, ids| {
                let (y, _, _) = t.batch_norm_train(ids[0], ids[1], ids[2])?;
                let a = t.constant(p.clone());
                let z = t.matmul(y, a)?;
                let s = t.squared_norm(z);
                t.scaled_sum(&[(s, 0.5)])
            },
            &[
                randn(&mut rng, &[6, 3]),
                randn(&mut rng, &[3]),
                randn(&mut rng, &[3]),
            ],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "batch norm rel err {err}");

        // layer norm
        let proj = randn(&mut rng, &[5, 5]) + 1.0;
        let p = proj.clone();
        let err = grad_check(
            move |t, ids| {
                let y = t.layer_norm(ids[0], ids[1], ids[2])?;
                let a = t.constant(p.clone());
                let z = t.matmul(y, a)?;
                let s = t.squared_norm(z);
                t.scaled_sum(&[(s, 0.5)])
            },
            &[
                randn(&mut rng, &[4, 5]),
                randn(&mut rng, &[5]),
                randn(&mut rng, &[5]),
            ],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "layer norm rel err {err}");

        // weighted bce through a sigmoid
        let labels = vec![1.0, 0.0, 1.0, 0.0];
        let err = grad_check(
            |t, ids| {
                let p = t.sigmoid(ids[0]);
                t.weighted_bce(p, &labels, 1.0, 2.0)
            },
            &[randn(&mut rng, &[4])],
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-6, "bce rel err {err}");

        // select_last + swap + reshape chain
        let err = grad_check(
            |t, ids| {
                let y = t.swap_last2(ids[0])?;
                let y = t.select_last(y)?;
                let y = t.reshape(y, &[10])?;
                let s = t.squared_norm(y);
                t.scaled_sum(&[(s, 1.0)])
            },
            &[randn(&mut rng, &[2, 3, 5])],
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-6, "reshape chain rel err {err}");
    }

    #[test]
    fn receptive_field_of_block_stack() {
        // Two convolutions per block, k = 2, d = 2^{r-1}: with R blocks the
        // last position depends on 1 + 2(2^R - 1) inputs.
        let r_blocks = 5;
        let len = 64;
        let run = |x: &ArrayD<f64>| {
            let mut t = Tape::new();
            let mut cur = t.constant(x.clone());
            for r in 0..r_blocks {
                let d = 1usize << r;
                let f = t.constant(ArrayD::ones(IxDyn(&[1, 1, 2])));
                cur = t.causal_conv1d(cur, f, d).unwrap();
                let f = t.constant(ArrayD::ones(IxDyn(&[1, 1, 2])));
                cur = t.causal_conv1d(cur, f, d).unwrap();
            }
            t.value(cur).clone()
        };
        let base = run(&ArrayD::zeros(IxDyn(&[1, 1, len])));
        let mut influential = 0;
        for j in 0..len {
            let mut x = ArrayD::zeros(IxDyn(&[1, 1, len]));
            x[[0, 0, j]] = 1.0;
            let out = run(&x);
            if (out[[0, 0, len - 1]] - base[[0, 0, len - 1]]).abs() > 0.0 {
                influential += 1;
            }
        }
        assert_eq!(influential, 63);
    }

    #[test]
    fn weighted_bce_values() {
        let mut t = Tape::new();
        let p = t.constant(arr1(&[0.5]).into_dyn());
        let loss = t.weighted_bce(p, &[1.0], 1.0, 1.0).unwrap();
        assert!((t.scalar(loss) - std::f64::consts::LN_2).abs() < 1e-12);

        // p == y exactly: clamping keeps the loss tiny but finite.
        let mut t = Tape::new();
        let p = t.constant(arr1(&[1.0, 0.0]).into_dyn());
        let loss = t.weighted_bce(p, &[1.0, 0.0], 1.0, 1.0).unwrap();
        assert!(t.scalar(loss).abs() < 1e-4);
    }
}
