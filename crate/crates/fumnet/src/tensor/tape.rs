//! Define-by-run tape. Operations append nodes during the forward pass;
//! [`backward`] replays them in reverse recording order (which is a
//! topological order by construction) and accumulates gradients additively.

use std::cell::RefCell;

use super::kernels;
use super::{Element, Tensor, TensorError};

/// One recorded value: forward data plus the rule that produced it.
struct Node<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
    op: Op<T>,
}

enum Op<T> {
    Leaf,
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Div { a: usize, b: usize },
    Scale { x: usize, factor: T },
    AddScalar { x: usize },
    Sigmoid { x: usize },
    Tanh { x: usize },
    Relu { x: usize },
    Sqrt { x: usize },
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    /// `a[m,k] · b[n,k]ᵀ`, the natural orientation for `x · Wᵀ` layers.
    MatMulT { a: usize, b: usize, m: usize, k: usize, n: usize },
    AddRowBias { x: usize, bias: usize },
    /// Concatenation along the last (feature) axis.
    ConcatLast { parts: Vec<usize> },
    /// Stack along a new leading axis.
    StackFirst { parts: Vec<usize> },
    Narrow { x: usize, axis: usize, start: usize, len: usize },
    Reshape { x: usize },
    SumAll { x: usize },
    RowSum { x: usize },
    MulRows { x: usize, v: usize },
    Conv2d3x3 { x: usize, w: usize, b: usize },
    MaxPool2x2 { x: usize, argmax: Vec<u32> },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<T>,
        invstd: Vec<T>,
        train: bool,
    },
    CausalConv1d {
        x: usize,
        w: usize,
        b: usize,
        dilation: usize,
        pad_left: usize,
    },
    CrossEntropyRows {
        logits: usize,
        labels: Vec<usize>,
        softmax: Vec<T>,
    },
}

/// Recording context for one forward/backward pass. Confined to a single
/// thread; run independent tapes for parallel evaluation.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    nonfinite: std::cell::Cell<bool>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            nonfinite: std::cell::Cell::new(false),
        }
    }

    /// True if any forward op on this tape produced a NaN or infinity.
    /// Scanned per op in debug builds; finite inputs must keep this false.
    pub fn nonfinite_detected(&self) -> bool {
        self.nonfinite.get()
    }

    /// Records a leaf value. Only leaves created with `requires_grad` end
    /// up with gradients of their own; everything downstream propagates
    /// the flag.
    pub fn input(&self, tensor: &Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push(
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            requires_grad,
            Op::Leaf,
        )
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.borrow().len()
    }

    fn push(&self, shape: Vec<usize>, data: Vec<T>, requires_grad: bool, op: Op<T>) -> Var<'_, T> {
        #[cfg(debug_assertions)]
        if data.iter().any(|v| !v.is_finite()) {
            self.nonfinite.set(true);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            data,
            requires_grad,
            grad: None,
            op,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }
}

/// Handle to a value on a [`Tape`]. Cheap to copy; all arithmetic methods
/// record a new node and return its handle.
pub struct Var<'t, T: Element> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Element> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<T: Element> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}
impl<T: Element> Copy for Var<'_, T> {}

/// Elementwise binary op selector, see [`elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElemOp {
    Add,
    Mul,
    Sub,
}

/// Activation selector, see [`Var::activation`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

/// Spec-level elementwise entry point; `a` and `b` must share a shape.
pub fn elementwise<'t, T: Element>(
    op: ElemOp,
    a: Var<'t, T>,
    b: Var<'t, T>,
) -> Result<Var<'t, T>, TensorError> {
    match op {
        ElemOp::Add => a.add(b),
        ElemOp::Mul => a.mul(b),
        ElemOp::Sub => a.sub(b),
    }
}

impl<'t, T: Element> Var<'t, T> {
    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Copies the forward value off the tape.
    pub fn value(&self) -> Tensor<T> {
        let nodes = self.tape.nodes.borrow();
        let node = &nodes[self.id];
        Tensor::new(node.shape.clone(), node.data.clone()).expect("node data is shape-consistent")
    }

    /// Gradient populated by [`backward`], if any reached this node.
    pub fn grad(&self) -> Option<Tensor<T>> {
        let nodes = self.tape.nodes.borrow();
        let node = &nodes[self.id];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.shape.clone(), g.clone()).expect("grad is shape-congruent"))
    }

    fn same_tape(&self, other: &Var<'t, T>) {
        debug_assert!(
            std::ptr::eq(self.tape, other.tape),
            "variables belong to different tapes"
        );
    }

    fn binary_same_shape(
        self,
        rhs: Var<'t, T>,
        op_name: &'static str,
        f: impl Fn(T, T) -> T,
        op: impl FnOnce(usize, usize) -> Op<T>,
    ) -> Result<Var<'t, T>, TensorError> {
        self.same_tape(&rhs);
        let (shape, data, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[rhs.id]);
            if a.shape != b.shape {
                return Err(TensorError::ShapeMismatch {
                    op: op_name,
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                });
            }
            let data = a
                .data
                .iter()
                .zip(&b.data)
                .map(|(&x, &y)| f(x, y))
                .collect();
            (a.shape.clone(), data, a.requires_grad || b.requires_grad)
        };
        Ok(self.tape.push(shape, data, rg, op(self.id, rhs.id)))
    }

    pub fn add(self, rhs: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.binary_same_shape(rhs, "add", |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(self, rhs: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.binary_same_shape(rhs, "sub", |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    pub fn mul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.binary_same_shape(rhs, "mul", |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    pub fn div(self, rhs: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.binary_same_shape(rhs, "div", |x, y| x / y, |a, b| Op::Div { a, b })
    }

    fn unary(self, f: impl Fn(T) -> T, op: impl FnOnce(usize) -> Op<T>) -> Var<'t, T> {
        let (shape, data, rg) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            (
                a.shape.clone(),
                a.data.iter().map(|&x| f(x)).collect(),
                a.requires_grad,
            )
        };
        self.tape.push(shape, data, rg, op(self.id))
    }

    pub fn scale(self, factor: T) -> Var<'t, T> {
        self.unary(|x| x * factor, |x| Op::Scale { x, factor })
    }

    pub fn add_scalar(self, c: T) -> Var<'t, T> {
        self.unary(|x| x + c, |x| Op::AddScalar { x })
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.unary(
            |x| T::one() / (T::one() + (-x).exp()),
            |x| Op::Sigmoid { x },
        )
    }

    pub fn tanh(self) -> Var<'t, T> {
        self.unary(|x| x.tanh(), |x| Op::Tanh { x })
    }

    pub fn relu(self) -> Var<'t, T> {
        self.unary(|x| x.max(T::zero()), |x| Op::Relu { x })
    }

    pub fn sqrt(self) -> Var<'t, T> {
        self.unary(|x| x.sqrt(), |x| Op::Sqrt { x })
    }

    /// Spec-level activation entry point.
    pub fn activation(self, kind: Activation) -> Var<'t, T> {
        match kind {
            Activation::Sigmoid => self.sigmoid(),
            Activation::Tanh => self.tanh(),
            Activation::Relu => self.relu(),
        }
    }

    /// `[m,k] · [k,n] -> [m,n]`.
    pub fn matmul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.same_tape(&rhs);
        let (out, m, n, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[rhs.id]);
            if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
                return Err(TensorError::ShapeMismatch {
                    op: "matmul",
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                });
            }
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            (
                kernels::matmul_nn(&a.data, &b.data, m, k, n),
                m,
                n,
                a.requires_grad || b.requires_grad,
            )
        };
        let k = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].shape[1]
        };
        Ok(self.tape.push(
            vec![m, n],
            out,
            rg,
            Op::MatMul {
                a: self.id,
                b: rhs.id,
                m,
                k,
                n,
            },
        ))
    }

    /// `[m,k] · ([n,k])ᵀ -> [m,n]`.
    pub fn matmul_t(self, rhs: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.same_tape(&rhs);
        let (out, m, k, n, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[rhs.id]);
            if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[1] {
                return Err(TensorError::ShapeMismatch {
                    op: "matmul_t",
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                });
            }
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[0]);
            (
                kernels::matmul_nt(&a.data, &b.data, m, k, n),
                m,
                k,
                n,
                a.requires_grad || b.requires_grad,
            )
        };
        Ok(self.tape.push(
            vec![m, n],
            out,
            rg,
            Op::MatMulT {
                a: self.id,
                b: rhs.id,
                m,
                k,
                n,
            },
        ))
    }

    /// Adds a `[n]` bias row to every row of a `[r,n]` matrix.
    pub fn add_row_bias(self, bias: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.same_tape(&bias);
        let (shape, data, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (x, b) = (&nodes[self.id], &nodes[bias.id]);
            if x.shape.len() != 2 || b.shape.len() != 1 || x.shape[1] != b.shape[0] {
                return Err(TensorError::ShapeMismatch {
                    op: "add_row_bias",
                    lhs: x.shape.clone(),
                    rhs: b.shape.clone(),
                });
            }
            let n = b.shape[0];
            let mut data = x.data.clone();
            for row in data.chunks_mut(n) {
                kernels::add_assign(row, &b.data);
            }
            (x.shape.clone(), data, x.requires_grad || b.requires_grad)
        };
        Ok(self.tape.push(
            shape,
            data,
            rg,
            Op::AddRowBias {
                x: self.id,
                bias: bias.id,
            },
        ))
    }

    /// Contiguous sub-range along one axis.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>, TensorError> {
        let (shape, data, rg) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id];
            if axis >= x.shape.len() || start + len > x.shape[axis] {
                return Err(TensorError::InvalidShape {
                    op: "narrow",
                    shape: x.shape.clone(),
                    reason: format!("axis {axis}, range {start}..{}", start + len),
                });
            }
            let outer: usize = x.shape[..axis].iter().product();
            let dim = x.shape[axis];
            let inner: usize = x.shape[axis + 1..].iter().product();
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * dim + start) * inner;
                data.extend_from_slice(&x.data[base..base + len * inner]);
            }
            let mut shape = x.shape.clone();
            shape[axis] = len;
            (shape, data, x.requires_grad)
        };
        Ok(self.tape.push(
            shape,
            data,
            rg,
            Op::Narrow {
                x: self.id,
                axis,
                start,
                len,
            },
        ))
    }

    pub fn reshape(self, new_shape: &[usize]) -> Result<Var<'t, T>, TensorError> {
        let (data, rg) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id];
            let numel: usize = new_shape.iter().product();
            if numel != x.data.len() {
                return Err(TensorError::InvalidShape {
                    op: "reshape",
                    shape: new_shape.to_vec(),
                    reason: format!("element count {} != {}", numel, x.data.len()),
                });
            }
            (x.data.clone(), x.requires_grad)
        };
        Ok(self
            .tape
            .push(new_shape.to_vec(), data, rg, Op::Reshape { x: self.id }))
    }

    /// Sum of all elements, as a `[1]` scalar.
    pub fn sum_all(self) -> Var<'t, T> {
        let (total, rg) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id];
            (x.data.iter().copied().sum::<T>(), x.requires_grad)
        };
        self.tape
            .push(vec![1], vec![total], rg, Op::SumAll { x: self.id })
    }

    /// Row sums of a `[m,n]` matrix, as `[m]`.
    pub fn row_sum(self) -> Result<Var<'t, T>, TensorError> {
        let (m, data, rg) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id];
            if x.shape.len() != 2 {
                return Err(TensorError::InvalidShape {
                    op: "row_sum",
                    shape: x.shape.clone(),
                    reason: "expected rank 2".into(),
                });
            }
            let (m, n) = (x.shape[0], x.shape[1]);
            let data = (0..m)
                .map(|i| x.data[i * n..(i + 1) * n].iter().copied().sum())
                .collect();
            (m, data, x.requires_grad)
        };
        Ok(self
            .tape
            .push(vec![m], data, rg, Op::RowSum { x: self.id }))
    }

    /// Scales row `i` of a `[m,n]` matrix by `v[i]`.
    pub fn mul_rows(self, v: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.same_tape(&v);
        let (shape, data, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (x, s) = (&nodes[self.id], &nodes[v.id]);
            if x.shape.len() != 2 || s.shape.len() != 1 || s.shape[0] != x.shape[0] {
                return Err(TensorError::ShapeMismatch {
                    op: "mul_rows",
                    lhs: x.shape.clone(),
                    rhs: s.shape.clone(),
                });
            }
            let n = x.shape[1];
            let mut data = x.data.clone();
            for (i, row) in data.chunks_mut(n).enumerate() {
                let alpha = s.data[i];
                for val in row {
                    *val = *val * alpha;
                }
            }
            (x.shape.clone(), data, x.requires_grad || s.requires_grad)
        };
        Ok(self.tape.push(
            shape,
            data,
            rg,
            Op::MulRows {
                x: self.id,
                v: v.id,
            },
        ))
    }

    /// 3×3 cross-correlation, stride 1, zero padding 1:
    /// `[B,Ci,H,W] ⋆ [Co,Ci,3,3] + [Co] -> [B,Co,H,W]`.
    pub fn conv2d3x3(
        self,
        weight: Var<'t, T>,
        bias: Var<'t, T>,
    ) -> Result<Var<'t, T>, TensorError> {
        self.same_tape(&weight);
        self.same_tape(&bias);
        let (out, out_shape, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (x, w, b) = (&nodes[self.id], &nodes[weight.id], &nodes[bias.id]);
            if x.shape.len() != 4
                || w.shape.len() != 4
                || w.shape[2] != 3
                || w.shape[3] != 3
                || x.shape[1] != w.shape[1]
                || b.shape != [w.shape[0]]
            {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d3x3",
                    lhs: x.shape.clone(),
                    rhs: w.shape.clone(),
                });
            }
            let (batch, ci, h, wd) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
            let co = w.shape[0];
            let out = conv2d_forward(&x.data, &w.data, &b.data, batch, ci, co, h, wd);
            (
                out,
                vec![batch, co, h, wd],
                x.requires_grad || w.requires_grad || b.requires_grad,
            )
        };
        Ok(self.tape.push(
            out_shape,
            out,
            rg,
            Op::Conv2d3x3 {
                x: self.id,
                w: weight.id,
                b: bias.id,
            },
        ))
    }

    /// Non-overlapping 2×2 max pool over the trailing two axes. Gradient
    /// routes to the first maximal element in scan order.
    pub fn maxpool2x2(self) -> Result<Var<'t, T>, TensorError> {
        let (out, argmax, shape, rg) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id];
            let rank = x.shape.len();
            if rank < 2 {
                return Err(TensorError::InvalidShape {
                    op: "maxpool2x2",
                    shape: x.shape.clone(),
                    reason: "expected rank >= 2".into(),
                });
            }
            let (h, w) = (x.shape[rank - 2], x.shape[rank - 1]);
            if h % 2 != 0 || w % 2 != 0 {
                return Err(TensorError::InvalidShape {
                    op: "maxpool2x2",
                    shape: x.shape.clone(),
                    reason: "spatial dims must be even".into(),
                });
            }
            let planes: usize = x.shape[..rank - 2].iter().product();
            let (oh, ow) = (h / 2, w / 2);
            let mut out = Vec::with_capacity(planes * oh * ow);
            let mut argmax = Vec::with_capacity(planes * oh * ow);
            for p in 0..planes {
                let img = &x.data[p * h * w..(p + 1) * h * w];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best_idx = (2 * oy) * w + 2 * ox;
                        let mut best = img[best_idx];
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let idx = (2 * oy + dy) * w + 2 * ox + dx;
                            if img[idx] > best {
                                best = img[idx];
                                best_idx = idx;
                            }
                        }
                        out.push(best);
                        argmax.push((p * h * w + best_idx) as u32);
                    }
                }
            }
            let mut shape = x.shape.clone();
            shape[rank - 2] = oh;
            shape[rank - 1] = ow;
            (out, argmax, shape, x.requires_grad)
        };
        Ok(self.tape.push(
            shape,
            out,
            rg,
            Op::MaxPool2x2 {
                x: self.id,
                argmax,
            },
        ))
    }

    /// Batch-normalizes `[B,C,H,W]` per channel with batch statistics and
    /// returns the per-channel batch mean and biased variance alongside.
    pub fn batchnorm_train(
        self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        eps: T,
    ) -> Result<(Var<'t, T>, Vec<T>, Vec<T>), TensorError> {
        self.same_tape(&gamma);
        self.same_tape(&beta);
        let (out, shape, mean, var, invstd, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (x, g, b) = (&nodes[self.id], &nodes[gamma.id], &nodes[beta.id]);
            let channels = check_batchnorm_shapes(&x.shape, &g.shape, &b.shape)?;
            if x.shape[0] == 0 {
                return Err(TensorError::InvalidShape {
                    op: "batchnorm",
                    shape: x.shape.clone(),
                    reason: "batch of size 0".into(),
                });
            }
            let (batch, plane) = (x.shape[0], x.shape[2] * x.shape[3]);
            let count = T::from_f64((batch * plane) as f64);
            let mut mean = vec![T::zero(); channels];
            let mut var = vec![T::zero(); channels];
            for bi in 0..batch {
                for c in 0..channels {
                    let base = (bi * channels + c) * plane;
                    mean[c] = mean[c] + x.data[base..base + plane].iter().copied().sum::<T>();
                }
            }
            for m in &mut mean {
                *m = *m / count;
            }
            for bi in 0..batch {
                for c in 0..channels {
                    let base = (bi * channels + c) * plane;
                    var[c] = var[c]
                        + x.data[base..base + plane]
                            .iter()
                            .map(|&v| (v - mean[c]) * (v - mean[c]))
                            .sum::<T>();
                }
            }
            for v in &mut var {
                *v = *v / count;
            }
            let invstd: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            let mut out = vec![T::zero(); x.data.len()];
            for bi in 0..batch {
                for c in 0..channels {
                    let base = (bi * channels + c) * plane;
                    for i in 0..plane {
                        out[base + i] =
                            (x.data[base + i] - mean[c]) * invstd[c] * g.data[c] + b.data[c];
                    }
                }
            }
            (
                out,
                x.shape.clone(),
                mean,
                var,
                invstd,
                x.requires_grad || g.requires_grad || b.requires_grad,
            )
        };
        let out_var = self.tape.push(
            shape,
            out,
            rg,
            Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                mean: mean.clone(),
                invstd,
                train: true,
            },
        );
        Ok((out_var, mean, var))
    }

    /// Batch-normalizes with fixed (running) statistics.
    pub fn batchnorm_eval(
        self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<Var<'t, T>, TensorError> {
        self.same_tape(&gamma);
        self.same_tape(&beta);
        let (out, shape, mean, invstd, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (x, g, b) = (&nodes[self.id], &nodes[gamma.id], &nodes[beta.id]);
            let channels = check_batchnorm_shapes(&x.shape, &g.shape, &b.shape)?;
            if running_mean.len() != channels || running_var.len() != channels {
                return Err(TensorError::ShapeMismatch {
                    op: "batchnorm_eval",
                    lhs: x.shape.clone(),
                    rhs: vec![running_mean.len()],
                });
            }
            let (batch, plane) = (x.shape[0], x.shape[2] * x.shape[3]);
            let invstd: Vec<T> = running_var
                .iter()
                .map(|&v| T::one() / (v + eps).sqrt())
                .collect();
            let mut out = vec![T::zero(); x.data.len()];
            for bi in 0..batch {
                for c in 0..channels {
                    let base = (bi * channels + c) * plane;
                    for i in 0..plane {
                        out[base + i] = (x.data[base + i] - running_mean[c]) * invstd[c]
                            * g.data[c]
                            + b.data[c];
                    }
                }
            }
            (
                out,
                x.shape.clone(),
                running_mean.to_vec(),
                invstd,
                x.requires_grad || g.requires_grad || b.requires_grad,
            )
        };
        Ok(self.tape.push(
            shape,
            out,
            rg,
            Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                mean,
                invstd,
                train: false,
            },
        ))
    }

    /// Dilated 1-D convolution over `[S,I]` or `[B,S,I]` with total padding
    /// `(k-1)*dilation` split as `pad_left` front zeros (the causal default
    /// puts all of it on the left). Output length equals input length.
    pub fn causal_conv1d(
        self,
        weight: Var<'t, T>,
        bias: Var<'t, T>,
        dilation: usize,
        pad_left: usize,
    ) -> Result<Var<'t, T>, TensorError> {
        self.same_tape(&weight);
        self.same_tape(&bias);
        let (out, out_shape, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (x, w, b) = (&nodes[self.id], &nodes[weight.id], &nodes[bias.id]);
            if w.shape.len() != 3 {
                return Err(TensorError::InvalidShape {
                    op: "causal_conv1d",
                    shape: w.shape.clone(),
                    reason: "weight must be [out, in, k]".into(),
                });
            }
            let (co, ci, k) = (w.shape[0], w.shape[1], w.shape[2]);
            let (batch, steps, feat) = match x.shape.len() {
                2 => (1, x.shape[0], x.shape[1]),
                3 => (x.shape[0], x.shape[1], x.shape[2]),
                _ => {
                    return Err(TensorError::InvalidShape {
                        op: "causal_conv1d",
                        shape: x.shape.clone(),
                        reason: "input must be [steps, feat] or [batch, steps, feat]".into(),
                    })
                }
            };
            if feat != ci || b.shape != [co] {
                return Err(TensorError::ShapeMismatch {
                    op: "causal_conv1d",
                    lhs: x.shape.clone(),
                    rhs: w.shape.clone(),
                });
            }
            debug_assert!(pad_left <= (k - 1) * dilation);
            let taps = kernels::causal_taps(&x.data, batch, steps, feat, k, dilation, pad_left);
            // weight [co, ci, k] reordered to [co, k*ci] tap-major
            let wf = flatten_tap_major(&w.data, co, ci, k);
            let mut out = kernels::matmul_nt(&taps, &wf, batch * steps, k * ci, co);
            for row in out.chunks_mut(co) {
                kernels::add_assign(row, &b.data);
            }
            let out_shape = if x.shape.len() == 2 {
                vec![steps, co]
            } else {
                vec![batch, steps, co]
            };
            (
                out,
                out_shape,
                x.requires_grad || w.requires_grad || b.requires_grad,
            )
        };
        Ok(self.tape.push(
            out_shape,
            out,
            rg,
            Op::CausalConv1d {
                x: self.id,
                w: weight.id,
                b: bias.id,
                dilation,
                pad_left,
            },
        ))
    }

    /// Per-row softmax cross-entropy of `[B,N]` logits against integer
    /// labels, as a `[B]` loss vector. Max-subtraction keeps it stable.
    pub fn cross_entropy_rows(self, labels: &[usize]) -> Result<Var<'t, T>, TensorError> {
        let (losses, softmax, rg) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id];
            if x.shape.len() != 2 || x.shape[0] != labels.len() {
                return Err(TensorError::InvalidShape {
                    op: "cross_entropy_rows",
                    shape: x.shape.clone(),
                    reason: format!("expected [{}, n] logits", labels.len()),
                });
            }
            let n = x.shape[1];
            for &label in labels {
                if label >= n {
                    return Err(TensorError::LabelOutOfRange { label, classes: n });
                }
            }
            let mut losses = Vec::with_capacity(labels.len());
            let mut softmax = vec![T::zero(); x.data.len()];
            for (r, &label) in labels.iter().enumerate() {
                let row = &x.data[r * n..(r + 1) * n];
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut denom = T::zero();
                for (j, &v) in row.iter().enumerate() {
                    let e = (v - max).exp();
                    softmax[r * n + j] = e;
                    denom += e;
                }
                for j in 0..n {
                    softmax[r * n + j] = softmax[r * n + j] / denom;
                }
                losses.push(denom.ln() - (row[label] - max));
            }
            (losses, softmax, x.requires_grad)
        };
        Ok(self.tape.push(
            vec![labels.len()],
            losses,
            rg,
            Op::CrossEntropyRows {
                logits: self.id,
                labels: labels.to_vec(),
                softmax,
            },
        ))
    }

    /// See [`backward`].
    pub fn backward(self) -> Result<(), TensorError> {
        backward(self)
    }
}

fn check_batchnorm_shapes(
    x: &[usize],
    gamma: &[usize],
    beta: &[usize],
) -> Result<usize, TensorError> {
    if x.len() != 4 {
        return Err(TensorError::InvalidShape {
            op: "batchnorm",
            shape: x.to_vec(),
            reason: "expected [batch, channels, h, w]".into(),
        });
    }
    let channels = x[1];
    if gamma != [channels] || beta != [channels] {
        return Err(TensorError::ShapeMismatch {
            op: "batchnorm",
            lhs: x.to_vec(),
            rhs: gamma.to_vec(),
        });
    }
    Ok(channels)
}

/// `[co, ci, k]` weights rearranged to `[co, k*ci]` rows matching the tap
/// layout from [`kernels::causal_taps`].
fn flatten_tap_major<T: Element>(w: &[T], co: usize, ci: usize, k: usize) -> Vec<T> {
    let mut wf = vec![T::zero(); co * k * ci];
    for o in 0..co {
        for i in 0..ci {
            for j in 0..k {
                wf[o * k * ci + j * ci + i] = w[(o * ci + i) * k + j];
            }
        }
    }
    wf
}

fn conv2d_forward<T: Element>(
    x: &[T],
    w: &[T],
    b: &[T],
    batch: usize,
    ci: usize,
    co: usize,
    h: usize,
    wd: usize,
) -> Vec<T> {
    use rayon::prelude::*;
    let plane = h * wd;
    let mut out = vec![T::zero(); batch * co * plane];
    let run_image = |img_idx: usize, out_img: &mut [T]| {
        let mut col = vec![T::zero(); ci * 9 * plane];
        kernels::im2col3x3(&x[img_idx * ci * plane..][..ci * plane], ci, h, wd, &mut col);
        let prod = kernels::matmul_nn(w, &col, co, ci * 9, plane);
        out_img.copy_from_slice(&prod);
        for c in 0..co {
            let bias = b[c];
            for v in &mut out_img[c * plane..(c + 1) * plane] {
                *v += bias;
            }
        }
    };
    if batch > 1 {
        out.par_chunks_mut(co * plane)
            .enumerate()
            .for_each(|(i, chunk)| run_image(i, chunk));
    } else if batch == 1 {
        run_image(0, &mut out);
    }
    out
}

/// Concatenates along the last (feature) axis; every part must agree on the
/// leading dimensions. This is the channel-wise splice used to build and
/// grow channel vector sequences.
pub fn concat_features<'t, T: Element>(parts: &[Var<'t, T>]) -> Result<Var<'t, T>, TensorError> {
    let first = *parts.first().ok_or(TensorError::EmptyInput {
        op: "concat_features",
    })?;
    let tape = first.tape;
    let (shape, data, rg) = {
        let nodes = tape.nodes.borrow();
        let lead = {
            let s = &nodes[first.id].shape;
            s[..s.len() - 1].to_vec()
        };
        let rank = lead.len() + 1;
        let mut total_last = 0;
        let mut rg = false;
        for part in parts {
            let s = &nodes[part.id].shape;
            if s.len() != rank || s[..rank - 1] != lead[..] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_features",
                    lhs: nodes[first.id].shape.clone(),
                    rhs: s.clone(),
                });
            }
            total_last += s[rank - 1];
            rg |= nodes[part.id].requires_grad;
        }
        let outer: usize = lead.iter().product();
        let mut data = Vec::with_capacity(outer * total_last);
        for o in 0..outer {
            for part in parts {
                let last = nodes[part.id].shape[rank - 1];
                data.extend_from_slice(&nodes[part.id].data[o * last..(o + 1) * last]);
            }
        }
        let mut shape = lead;
        shape.push(total_last);
        (shape, data, rg)
    };
    Ok(tape.push(
        shape,
        data,
        rg,
        Op::ConcatLast {
            parts: parts.iter().map(|p| p.id).collect(),
        },
    ))
}

/// Two-input feature concatenation: `[c,d1] ++ [c,d2] -> [c,d1+d2]`.
pub fn concat_feature<'t, T: Element>(
    a: Var<'t, T>,
    b: Var<'t, T>,
) -> Result<Var<'t, T>, TensorError> {
    concat_features(&[a, b])
}

/// Stacks equal-shaped parts along a new leading axis.
pub fn stack_rows<'t, T: Element>(parts: &[Var<'t, T>]) -> Result<Var<'t, T>, TensorError> {
    let first = *parts.first().ok_or(TensorError::EmptyInput { op: "stack_rows" })?;
    let tape = first.tape;
    let (shape, data, rg) = {
        let nodes = tape.nodes.borrow();
        let base = nodes[first.id].shape.clone();
        let mut data = Vec::with_capacity(parts.len() * nodes[first.id].data.len());
        let mut rg = false;
        for part in parts {
            if nodes[part.id].shape != base {
                return Err(TensorError::ShapeMismatch {
                    op: "stack_rows",
                    lhs: base,
                    rhs: nodes[part.id].shape.clone(),
                });
            }
            data.extend_from_slice(&nodes[part.id].data);
            rg |= nodes[part.id].requires_grad;
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&base);
        (shape, data, rg)
    };
    Ok(tape.push(
        shape,
        data,
        rg,
        Op::StackFirst {
            parts: parts.iter().map(|p| p.id).collect(),
        },
    ))
}

/// Reverse pass from a scalar loss. Populates `grad` on every
/// `requires_grad` node reachable from the loss; gradients from multiple
/// uses of a value accumulate additively.
pub fn backward<T: Element>(loss: Var<'_, T>) -> Result<(), TensorError> {
    let mut nodes = loss.tape.nodes.borrow_mut();
    if nodes[loss.id].data.len() != 1 {
        return Err(TensorError::NonScalarLoss {
            shape: nodes[loss.id].shape.clone(),
        });
    }
    let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
    grads[loss.id] = Some(vec![T::one()]);
    for id in (0..=loss.id).rev() {
        if grads[id].is_none() || !nodes[id].requires_grad {
            continue;
        }
        let g = grads[id].take().expect("checked above");
        backward_op(&nodes, id, &g, &mut grads);
        nodes[id].grad = Some(g);
    }
    Ok(())
}

fn accum<T: Element>(grads: &mut [Option<Vec<T>>], nodes: &[Node<T>], id: usize, contrib: Vec<T>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => kernels::add_assign(existing, &contrib),
        slot @ None => *slot = Some(contrib),
    }
}

fn backward_op<T: Element>(
    nodes: &[Node<T>],
    id: usize,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add { a, b } => {
            accum(grads, nodes, *a, g.to_vec());
            accum(grads, nodes, *b, g.to_vec());
        }
        Op::Sub { a, b } => {
            accum(grads, nodes, *a, g.to_vec());
            accum(grads, nodes, *b, g.iter().map(|&v| -v).collect());
        }
        Op::Mul { a, b } => {
            if nodes[*a].requires_grad {
                let contrib = g.iter().zip(&nodes[*b].data).map(|(&gv, &bv)| gv * bv).collect();
                accum(grads, nodes, *a, contrib);
            }
            if nodes[*b].requires_grad {
                let contrib = g.iter().zip(&nodes[*a].data).map(|(&gv, &av)| gv * av).collect();
                accum(grads, nodes, *b, contrib);
            }
        }
        Op::Div { a, b } => {
            if nodes[*a].requires_grad {
                let contrib = g.iter().zip(&nodes[*b].data).map(|(&gv, &bv)| gv / bv).collect();
                accum(grads, nodes, *a, contrib);
            }
            if nodes[*b].requires_grad {
                let contrib = g
                    .iter()
                    .zip(nodes[*a].data.iter().zip(&nodes[*b].data))
                    .map(|(&gv, (&av, &bv))| -gv * av / (bv * bv))
                    .collect();
                accum(grads, nodes, *b, contrib);
            }
        }
        Op::Scale { x, factor } => {
            accum(grads, nodes, *x, g.iter().map(|&v| v * *factor).collect());
        }
        Op::AddScalar { x } => {
            accum(grads, nodes, *x, g.to_vec());
        }
        Op::Sigmoid { x } => {
            let y = &nodes[id].data;
            let contrib = g
                .iter()
                .zip(y)
                .map(|(&gv, &yv)| gv * yv * (T::one() - yv))
                .collect();
            accum(grads, nodes, *x, contrib);
        }
        Op::Tanh { x } => {
            let y = &nodes[id].data;
            let contrib = g
                .iter()
                .zip(y)
                .map(|(&gv, &yv)| gv * (T::one() - yv * yv))
                .collect();
            accum(grads, nodes, *x, contrib);
        }
        Op::Relu { x } => {
            // Subgradient 0 at exactly 0.
            let xin = &nodes[*x].data;
            let contrib = g
                .iter()
                .zip(xin)
                .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                .collect();
            accum(grads, nodes, *x, contrib);
        }
        Op::Sqrt { x } => {
            let y = &nodes[id].data;
            let half = T::from_f64(0.5);
            let contrib = g.iter().zip(y).map(|(&gv, &yv)| gv * half / yv).collect();
            accum(grads, nodes, *x, contrib);
        }
        Op::MatMul { a, b, m, k, n } => {
            if nodes[*a].requires_grad {
                // dA = g · Bᵀ
                accum(
                    grads,
                    nodes,
                    *a,
                    kernels::matmul_nt(g, &nodes[*b].data, *m, *n, *k),
                );
            }
            if nodes[*b].requires_grad {
                // dB = Aᵀ · g
                accum(
                    grads,
                    nodes,
                    *b,
                    kernels::matmul_tn(&nodes[*a].data, g, *k, *m, *n),
                );
            }
        }
        Op::MatMulT { a, b, m, k, n } => {
            if nodes[*a].requires_grad {
                // out = a·bᵀ, so dA = g·b
                accum(
                    grads,
                    nodes,
                    *a,
                    kernels::matmul_nn(g, &nodes[*b].data, *m, *n, *k),
                );
            }
            if nodes[*b].requires_grad {
                // dB = gᵀ·a
                accum(
                    grads,
                    nodes,
                    *b,
                    kernels::matmul_tn(g, &nodes[*a].data, *n, *m, *k),
                );
            }
        }
        Op::AddRowBias { x, bias } => {
            accum(grads, nodes, *x, g.to_vec());
            if nodes[*bias].requires_grad {
                let n = nodes[*bias].data.len();
                let mut db = vec![T::zero(); n];
                for row in g.chunks(n) {
                    kernels::add_assign(&mut db, row);
                }
                accum(grads, nodes, *bias, db);
            }
        }
        Op::ConcatLast { parts } => {
            let rank = nodes[id].shape.len();
            let total_last = nodes[id].shape[rank - 1];
            let outer: usize = nodes[id].shape[..rank - 1].iter().product();
            let mut offset = 0;
            for part in parts {
                let last = nodes[*part].shape[rank - 1];
                if nodes[*part].requires_grad {
                    let mut contrib = Vec::with_capacity(outer * last);
                    for o in 0..outer {
                        let base = o * total_last + offset;
                        contrib.extend_from_slice(&g[base..base + last]);
                    }
                    accum(grads, nodes, *part, contrib);
                }
                offset += last;
            }
        }
        Op::StackFirst { parts } => {
            let each = if parts.is_empty() { 0 } else { nodes[parts[0]].data.len() };
            for (i, part) in parts.iter().enumerate() {
                if nodes[*part].requires_grad {
                    accum(grads, nodes, *part, g[i * each..(i + 1) * each].to_vec());
                }
            }
        }
        Op::Narrow { x, axis, start, len } => {
            let xs = &nodes[*x].shape;
            let outer: usize = xs[..*axis].iter().product();
            let dim = xs[*axis];
            let inner: usize = xs[*axis + 1..].iter().product();
            let mut contrib = vec![T::zero(); nodes[*x].data.len()];
            for o in 0..outer {
                let dst = (o * dim + start) * inner;
                let src = o * len * inner;
                kernels::add_assign(&mut contrib[dst..dst + len * inner], &g[src..src + len * inner]);
            }
            accum(grads, nodes, *x, contrib);
        }
        Op::Reshape { x } => {
            accum(grads, nodes, *x, g.to_vec());
        }
        Op::SumAll { x } => {
            accum(grads, nodes, *x, vec![g[0]; nodes[*x].data.len()]);
        }
        Op::RowSum { x } => {
            let n = nodes[*x].shape[1];
            let mut contrib = Vec::with_capacity(nodes[*x].data.len());
            for &gv in g {
                contrib.extend(std::iter::repeat(gv).take(n));
            }
            accum(grads, nodes, *x, contrib);
        }
        Op::MulRows { x, v } => {
            let n = nodes[*x].shape[1];
            if nodes[*x].requires_grad {
                let mut contrib = g.to_vec();
                for (i, row) in contrib.chunks_mut(n).enumerate() {
                    let alpha = nodes[*v].data[i];
                    for val in row {
                        *val = *val * alpha;
                    }
                }
                accum(grads, nodes, *x, contrib);
            }
            if nodes[*v].requires_grad {
                let contrib = g
                    .chunks(n)
                    .zip(nodes[*x].data.chunks(n))
                    .map(|(grow, xrow)| kernels::dot(grow, xrow))
                    .collect();
                accum(grads, nodes, *v, contrib);
            }
        }
        Op::Conv2d3x3 { x, w, b } => {
            conv2d_backward(nodes, id, *x, *w, *b, g, grads);
        }
        Op::MaxPool2x2 { x, argmax } => {
            let mut contrib = vec![T::zero(); nodes[*x].data.len()];
            for (gi, &src) in argmax.iter().enumerate() {
                contrib[src as usize] += g[gi];
            }
            accum(grads, nodes, *x, contrib);
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            mean,
            invstd,
            train,
        } => {
            batchnorm_backward(nodes, id, *x, *gamma, *beta, mean, invstd, *train, g, grads);
        }
        Op::CausalConv1d {
            x,
            w,
            b,
            dilation,
            pad_left,
        } => {
            causal_conv_backward(nodes, *x, *w, *b, *dilation, *pad_left, g, grads);
        }
        Op::CrossEntropyRows {
            logits,
            labels,
            softmax,
        } => {
            if nodes[*logits].requires_grad {
                let n = nodes[*logits].shape[1];
                let mut contrib = softmax.clone();
                for (r, &label) in labels.iter().enumerate() {
                    let row = &mut contrib[r * n..(r + 1) * n];
                    row[label] = row[label] - T::one();
                    for v in row {
                        *v = *v * g[r];
                    }
                }
                accum(grads, nodes, *logits, contrib);
            }
        }
    }
}

fn conv2d_backward<T: Element>(
    nodes: &[Node<T>],
    out_id: usize,
    x: usize,
    w: usize,
    b: usize,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let xs = &nodes[x].shape;
    let (batch, ci, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let co = nodes[out_id].shape[1];
    let plane = h * wd;
    let xdata = &nodes[x].data;
    let wdata = &nodes[w].data;

    if nodes[b].requires_grad {
        let mut db = vec![T::zero(); co];
        for bi in 0..batch {
            for c in 0..co {
                let base = (bi * co + c) * plane;
                db[c] += g[base..base + plane].iter().copied().sum::<T>();
            }
        }
        accum(grads, nodes, b, db);
    }
    if nodes[w].requires_grad {
        // dW = Σ_images dOut_img · colᵀ
        let mut dw = vec![T::zero(); co * ci * 9];
        let mut col = vec![T::zero(); ci * 9 * plane];
        for bi in 0..batch {
            kernels::im2col3x3(&xdata[bi * ci * plane..][..ci * plane], ci, h, wd, &mut col);
            let contrib =
                kernels::matmul_nt(&g[bi * co * plane..][..co * plane], &col, co, plane, ci * 9);
            kernels::add_assign(&mut dw, &contrib);
        }
        accum(grads, nodes, w, dw);
    }
    if nodes[x].requires_grad {
        use rayon::prelude::*;
        let mut dx = vec![T::zero(); xdata.len()];
        let run = |bi: usize, dx_img: &mut [T]| {
            // dcol = Wᵀ · dOut_img, then fold the columns back.
            let dcol = kernels::matmul_tn(
                wdata,
                &g[bi * co * plane..][..co * plane],
                ci * 9,
                co,
                plane,
            );
            kernels::col2im3x3_add(&dcol, ci, h, wd, dx_img);
        };
        if batch > 1 {
            dx.par_chunks_mut(ci * plane)
                .enumerate()
                .for_each(|(bi, chunk)| run(bi, chunk));
        } else {
            run(0, &mut dx);
        }
        accum(grads, nodes, x, dx);
    }
}

#[allow(clippy::too_many_arguments)]
fn batchnorm_backward<T: Element>(
    nodes: &[Node<T>],
    _out_id: usize,
    x: usize,
    gamma: usize,
    beta: usize,
    mean: &[T],
    invstd: &[T],
    train: bool,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let xs = &nodes[x].shape;
    let (batch, channels, plane) = (xs[0], xs[1], xs[2] * xs[3]);
    let xdata = &nodes[x].data;
    let gdata = &nodes[gamma].data;
    let count = T::from_f64((batch * plane) as f64);

    // Per-channel reductions Σg and Σ(g·x̂), both needed for every target.
    let mut sum_g = vec![T::zero(); channels];
    let mut sum_gx = vec![T::zero(); channels];
    for bi in 0..batch {
        for c in 0..channels {
            let base = (bi * channels + c) * plane;
            for i in 0..plane {
                let xhat = (xdata[base + i] - mean[c]) * invstd[c];
                sum_g[c] += g[base + i];
                sum_gx[c] += g[base + i] * xhat;
            }
        }
    }
    if nodes[beta].requires_grad {
        accum(grads, nodes, beta, sum_g.clone());
    }
    if nodes[gamma].requires_grad {
        accum(grads, nodes, gamma, sum_gx.clone());
    }
    if nodes[x].requires_grad {
        let mut dx = vec![T::zero(); xdata.len()];
        for bi in 0..batch {
            for c in 0..channels {
                let base = (bi * channels + c) * plane;
                let scale = gdata[c] * invstd[c];
                for i in 0..plane {
                    dx[base + i] = if train {
                        let xhat = (xdata[base + i] - mean[c]) * invstd[c];
                        scale * (g[base + i] - sum_g[c] / count - xhat * sum_gx[c] / count)
                    } else {
                        scale * g[base + i]
                    };
                }
            }
        }
        accum(grads, nodes, x, dx);
    }
}

fn causal_conv_backward<T: Element>(
    nodes: &[Node<T>],
    x: usize,
    w: usize,
    b: usize,
    dilation: usize,
    pad_left: usize,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let xs = &nodes[x].shape;
    let ws = &nodes[w].shape;
    let (co, ci, k) = (ws[0], ws[1], ws[2]);
    let (batch, steps) = if xs.len() == 2 {
        (1, xs[0])
    } else {
        (xs[0], xs[1])
    };
    let rows = batch * steps;
    let xdata = &nodes[x].data;
    let wdata = &nodes[w].data;

    if nodes[b].requires_grad {
        let mut db = vec![T::zero(); co];
        for row in g.chunks(co) {
            kernels::add_assign(&mut db, row);
        }
        accum(grads, nodes, b, db);
    }
    if nodes[w].requires_grad || nodes[x].requires_grad {
        let taps = kernels::causal_taps(xdata, batch, steps, ci, k, dilation, pad_left);
        if nodes[w].requires_grad {
            // dWf = gᵀ · taps, then undo the tap-major flattening.
            let dwf = kernels::matmul_tn(g, &taps, co, rows, k * ci);
            let mut dw = vec![T::zero(); co * ci * k];
            for o in 0..co {
                for i in 0..ci {
                    for j in 0..k {
                        dw[(o * ci + i) * k + j] = dwf[o * k * ci + j * ci + i];
                    }
                }
            }
            accum(grads, nodes, w, dw);
        }
        if nodes[x].requires_grad {
            let wf = flatten_tap_major(wdata, co, ci, k);
            let dtaps = kernels::matmul_nn(g, &wf, rows, co, k * ci);
            let mut dx = vec![T::zero(); xdata.len()];
            kernels::causal_taps_scatter_add(&dtaps, batch, steps, ci, k, dilation, pad_left, &mut dx);
            accum(grads, nodes, x, dx);
        }
    }
}
