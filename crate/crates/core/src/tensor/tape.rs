use std::borrow::Cow;

use super::ops::{mm_nt, mm_tn};
use super::{ParamId, ParamStore, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(super) usize);

pub(super) enum Op {
    Leaf,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        x: Var,
        rows: usize,
        cols: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    AddRow {
        x: Var,
        bias: Var,
        cols: usize,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Softmax {
        x: Var,
        outer: usize,
        axis_len: usize,
        inner: usize,
    },
    MaskedSoftmax {
        x: Var,
        cols: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        cols: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
        cols: usize,
    },
    ConcatCols {
        parts: Vec<(Var, usize)>,
        rows: usize,
    },
    ConcatRows {
        parts: Vec<Var>,
    },
    NarrowCols {
        x: Var,
        cols: usize,
        start: usize,
        len: usize,
    },
    Reshape {
        x: Var,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    CrossEntropy {
        logits: Var,
        gold: Vec<usize>,
        probs: Vec<f64>,
        classes: usize,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
    /// Scalar-valued function whose gradient w.r.t. each input was computed
    /// during the forward pass.
    Scalar {
        inputs: Vec<Var>,
        local_grads: Vec<Vec<f64>>,
    },
}

pub(super) struct Node<'a> {
    pub(super) shape: Vec<usize>,
    pub(super) value: Cow<'a, [f64]>,
    pub(super) op: Op,
    pub(super) requires_grad: bool,
}

/// Records operations in execution order; backward replays them in exact
/// reverse order.
///
/// Parameter leaves borrow from the [`ParamStore`] for the lifetime `'a`.
#[derive(Default)]
pub struct Tape<'a> {
    pub(super) nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(super) fn push(
        &mut self,
        op_name: &'static str,
        shape: Vec<usize>,
        value: Vec<f64>,
        op: Op,
        requires_grad: bool,
    ) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if cfg!(debug_assertions) && value.iter().any(|x| !x.is_finite()) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        let shape = t.shape().to_vec();
        self.push("constant", shape, t.into_data(), Op::Leaf, false)
    }

    /// Records an input leaf; with `requires_grad` its gradient is reported
    /// by [`Gradients::get`].
    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Result<Var> {
        let shape = t.shape().to_vec();
        self.push("leaf", shape, t.into_data(), Op::Leaf, requires_grad)
    }

    /// Enters a parameter by reference.
    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Var {
        let t = store.value(id);
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: Cow::Borrowed(t.data()),
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor {
            shape: n.shape.clone(),
            data: n.value.to_vec(),
        }
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub(super) fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(TensorError::NonScalarLoss(root.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                grads[idx] = Some(g);
            }
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul { a, b, m, k, n } => {
                if self.requires_grad(*a) {
                    let da = mm_nt(g, self.value(*b), *m, *n, *k);
                    acc(self, grads, *a, |d| add_into(d, &da));
                }
                if self.requires_grad(*b) {
                    let db = mm_tn(self.value(*a), g, *k, *m, *n);
                    acc(self, grads, *b, |d| add_into(d, &db));
                }
            }
            Op::Transpose { x, rows, cols } => acc(self, grads, *x, |d| {
                for i in 0..*rows {
                    for j in 0..*cols {
                        d[i * cols + j] += g[j * rows + i];
                    }
                }
            }),
            Op::Add { a, b } => {
                acc(self, grads, *a, |d| add_into(d, g));
                acc(self, grads, *b, |d| add_into(d, g));
            }
            Op::AddRow { x, bias, cols } => {
                acc(self, grads, *x, |d| add_into(d, g));
                acc(self, grads, *bias, |d| {
                    for row in g.chunks(*cols) {
                        add_into(d, row);
                    }
                });
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(self, grads, *a, |d| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(vb) {
                        *d += g * y;
                    }
                });
                acc(self, grads, *b, |d| {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(va) {
                        *d += g * x;
                    }
                });
            }
            Op::Scale { x, factor } => acc(self, grads, *x, |d| {
                for (d, g) in d.iter_mut().zip(g) {
                    *d += factor * g;
                }
            }),
            Op::Softmax {
                x,
                outer,
                axis_len,
                inner,
            } => acc(self, grads, *x, |d| {
                for o in 0..*outer {
                    for i in 0..*inner {
                        let at = |a: usize| (o * axis_len + a) * inner + i;
                        let dot: f64 = (0..*axis_len).map(|a| out[at(a)] * g[at(a)]).sum();
                        for a in 0..*axis_len {
                            d[at(a)] += out[at(a)] * (g[at(a)] - dot);
                        }
                    }
                }
            }),
            Op::MaskedSoftmax { x, cols } => acc(self, grads, *x, |d| {
                for ((y, gr), dr) in out.chunks(*cols).zip(g.chunks(*cols)).zip(d.chunks_mut(*cols)) {
                    let dot: f64 = y.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for ((d, y), g) in dr.iter_mut().zip(y).zip(gr) {
                        *d += y * (g - dot);
                    }
                }
            }),
            Op::LayerNorm {
                x,
                gain,
                bias,
                cols,
                xhat,
                inv_std,
            } => {
                let gamma = self.value(*gain);
                acc(self, grads, *x, |d| {
                    let n = *cols as f64;
                    for (r, inv) in inv_std.iter().enumerate() {
                        let span = r * cols..(r + 1) * cols;
                        let (gr, xh) = (&g[span.clone()], &xhat[span.clone()]);
                        let dxhat: Vec<f64> = gr.iter().zip(gamma).map(|(g, w)| g * w).collect();
                        let sum: f64 = dxhat.iter().sum();
                        let dot: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
                        for ((d, dh), xh) in d[span].iter_mut().zip(&dxhat).zip(xh) {
                            *d += inv / n * (n * dh - sum - xh * dot);
                        }
                    }
                });
                acc(self, grads, *gain, |d| {
                    for (gr, xh) in g.chunks(*cols).zip(xhat.chunks(*cols)) {
                        for ((d, g), x) in d.iter_mut().zip(gr).zip(xh) {
                            *d += g * x;
                        }
                    }
                });
                acc(self, grads, *bias, |d| {
                    for gr in g.chunks(*cols) {
                        add_into(d, gr);
                    }
                });
            }
            Op::Gelu { x } => {
                let xs = self.value(*x);
                acc(self, grads, *x, |d| {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(xs) {
                        *d += g * super::ops::gelu_grad(*x);
                    }
                });
            }
            Op::Sigmoid { x } => acc(self, grads, *x, |d| {
                for ((d, g), y) in d.iter_mut().zip(g).zip(out.iter()) {
                    *d += g * y * (1.0 - y);
                }
            }),
            Op::Dropout { x, mask } => acc(self, grads, *x, |d| {
                for ((d, g), m) in d.iter_mut().zip(g).zip(mask) {
                    *d += g * m;
                }
            }),
            Op::GatherRows { table, ids, cols } => acc(self, grads, *table, |d| {
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut d[id * cols..(id + 1) * cols], &g[r * cols..(r + 1) * cols]);
                }
            }),
            Op::ConcatCols { parts, rows } => {
                let total: usize = parts.iter().map(|(_, c)| c).sum();
                let mut offset = 0;
                for &(p, c) in parts {
                    acc(self, grads, p, |d| {
                        for r in 0..*rows {
                            add_into(
                                &mut d[r * c..(r + 1) * c],
                                &g[r * total + offset..r * total + offset + c],
                            );
                        }
                    });
                    offset += c;
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    acc(self, grads, p, |d| add_into(d, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::NarrowCols {
                x,
                cols,
                start,
                len,
            } => acc(self, grads, *x, |d| {
                for (r, gr) in g.chunks(*len).enumerate() {
                    add_into(&mut d[r * cols + start..r * cols + start + len], gr);
                }
            }),
            Op::Reshape { x } => acc(self, grads, *x, |d| add_into(d, g)),
            Op::Sum { x } => acc(self, grads, *x, |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean { x } => {
                let n = self.value(*x).len() as f64;
                acc(self, grads, *x, |d| d.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::CrossEntropy {
                logits,
                gold,
                probs,
                classes,
            } => {
                let scale = g[0] / gold.len() as f64;
                acc(self, grads, *logits, |d| {
                    for (r, &y) in gold.iter().enumerate() {
                        let row = &mut d[r * classes..(r + 1) * classes];
                        let p = &probs[r * classes..(r + 1) * classes];
                        for (j, (d, p)) in row.iter_mut().zip(p).enumerate() {
                            let onehot = if j == y { 1.0 } else { 0.0 };
                            *d += scale * (p - onehot);
                        }
                    }
                });
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred);
                let scale = 2.0 * g[0] / target.len() as f64;
                acc(self, grads, *pred, |d| {
                    for ((d, p), t) in d.iter_mut().zip(p).zip(target) {
                        *d += scale * (p - t);
                    }
                });
            }
            Op::Scalar {
                inputs,
                local_grads,
            } => {
                for (&v, lg) in inputs.iter().zip(local_grads) {
                    acc(self, grads, v, |d| {
                        for (d, l) in d.iter_mut().zip(lg) {
                            *d += g[0] * l;
                        }
                    });
                }
            }
        }
    }
}

fn acc(tape: &Tape<'_>, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
    if !tape.requires_grad(v) {
        return;
    }
    let len = tape.nodes[v.0].value.len();
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Gradients of one backward pass, kept for leaves and parameters only.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of a leaf or parameter node; `None` if it was not reached.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// `(parameter, gradient)` pairs in recording order. A parameter entered
    /// twice on one tape appears twice.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> + '_ {
        self.params
            .iter()
            .filter_map(|&(id, i)| self.grads[i].as_deref().map(|g| (id, g)))
    }
}
