use rand::Rng;

use super::tape::{Op, Tape, Var};
use super::{Result, TensorError};

/// `a[m×k] · b[k×n]`
pub(super) fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for (a_row, out_row) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (&x, b_row) in a_row.iter().zip(b.chunks_exact(n)) {
            for (o, y) in out_row.iter_mut().zip(b_row) {
                *o += x * y;
            }
        }
    }
    out
}

/// `a[m×k] · b[n×k]ᵀ`
pub(super) fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(m * n);
    for a_row in a.chunks_exact(k).take(m) {
        for b_row in b.chunks_exact(k).take(n) {
            out.push(a_row.iter().zip(b_row).map(|(x, y)| x * y).sum());
        }
    }
    out
}

/// `a[k×m]ᵀ · b[k×n]`
pub(super) fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for (a_row, b_row) in a.chunks_exact(m).zip(b.chunks_exact(n)).take(k) {
        for (&x, out_row) in a_row.iter().zip(out.chunks_exact_mut(n)) {
            for (o, y) in out_row.iter_mut().zip(b_row) {
                *o += x * y;
            }
        }
    }
    out
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// Tanh approximation of `x·Φ(x)`.
pub(super) fn gelu(x: f64) -> f64 {
    let inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + inner.tanh())
}

pub(super) fn gelu_grad(x: f64) -> f64 {
    let inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = inner.tanh();
    let dinner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of one contiguous slice, in place.
fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl<'a> Tape<'a> {
    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => Err(TensorError::Invalid {
                op,
                msg: format!("expected a matrix, got shape {s:?}"),
            }),
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.requires_grad(v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let out = mm(self.value(a), self.value(b), m, k, n);
        let rg = self.rg(&[a, b]);
        self.push("matmul", vec![m, n], out, Op::MatMul { a, b, m, k, n }, rg)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(x, "transpose")?;
        let v = self.value(x);
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = v[i * cols + j];
            }
        }
        let rg = self.rg(&[x]);
        self.push("transpose", vec![cols, rows], out, Op::Transpose { x, rows, cols }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.rg(&[a, b]);
        let shape = self.shape(a).to_vec();
        self.push("add", shape, out, Op::Add { a, b }, rg)
    }

    /// Adds a length-`c` vector to every row of `x[.., c]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let cols = *self.shape(x).last().unwrap_or(&1);
        if self.shape(bias) != [cols] {
            return Err(shape_err("add_row", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias);
        let out = self
            .value(x)
            .chunks(cols)
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        let rg = self.rg(&[x, bias]);
        let shape = self.shape(x).to_vec();
        self.push("add_row", shape, out, Op::AddRow { x, bias, cols }, rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let rg = self.rg(&[a, b]);
        let shape = self.shape(a).to_vec();
        self.push("mul", shape, out, Op::Mul { a, b }, rg)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out = self.value(x).iter().map(|v| v * factor).collect();
        let rg = self.rg(&[x]);
        let shape = self.shape(x).to_vec();
        self.push("scale", shape, out, Op::Scale { x, factor }, rg)
    }

    /// Softmax along `axis`, stabilized by subtracting the slice maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Invalid {
                op: "softmax",
                msg: format!("axis {axis} out of range for shape {shape:?}"),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = self.value(x).to_vec();
        let mut buf = vec![0.0; axis_len];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * axis_len + a) * inner + i;
                for (a, b) in buf.iter_mut().enumerate() {
                    *b = out[at(a)];
                }
                softmax_in_place(&mut buf);
                for (a, b) in buf.iter().enumerate() {
                    out[at(a)] = *b;
                }
            }
        }
        let rg = self.rg(&[x]);
        let op = Op::Softmax {
            x,
            outer,
            axis_len,
            inner,
        };
        self.push("softmax", shape, out, op, rg)
    }

    /// Row softmax of `x[r×c]` restricted to columns where `keep[j]` holds.
    /// Dropped columns get exactly zero weight.
    pub fn masked_softmax(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(x, "masked_softmax")?;
        if keep.len() != cols {
            return Err(shape_err("masked_softmax", self.shape(x), &[keep.len()]));
        }
        if !keep.iter().any(|&k| k) {
            return Err(TensorError::Invalid {
                op: "masked_softmax",
                msg: "every column is masked".into(),
            });
        }
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(cols) {
            let max = row
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (v, &k) in row.iter_mut().zip(keep) {
                *v = if k { (*v - max).exp() } else { 0.0 };
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        let rg = self.rg(&[x]);
        self.push("masked_softmax", vec![rows, cols], out, Op::MaskedSoftmax { x, cols }, rg)
    }

    /// Normalizes each row over the last dimension, then applies `gain`
    /// and `bias`. `eps` is added to the variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let cols = *self.shape(x).last().unwrap_or(&1);
        if self.shape(gain) != [cols] || self.shape(bias) != [cols] {
            return Err(shape_err("layer_norm", self.shape(x), self.shape(gain)));
        }
        let (gamma, beta) = (self.value(gain), self.value(bias));
        let xs = self.value(x);
        let rows = xs.len() / cols.max(1);
        let mut xhat = Vec::with_capacity(xs.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xs.len());
        for row in xs.chunks(cols) {
            let n = cols as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for ((v, g), b) in row.iter().zip(gamma).zip(beta) {
                let h = (v - mean) * inv;
                xhat.push(h);
                out.push(h * g + b);
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        let shape = self.shape(x).to_vec();
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            cols,
            xhat,
            inv_std,
        };
        self.push("layer_norm", shape, out, op, rg)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| gelu(v)).collect();
        let rg = self.rg(&[x]);
        let shape = self.shape(x).to_vec();
        self.push("gelu", shape, out, Op::Gelu { x }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let rg = self.rg(&[x]);
        let shape = self.shape(x).to_vec();
        self.push("sigmoid", shape, out, Op::Sigmoid { x }, rg)
    }

    /// Inverted dropout. Outside training, or at rate 0, returns `x` itself.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::DropoutRate(rate));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep_scale })
            .collect();
        let out = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let rg = self.rg(&[x]);
        let shape = self.shape(x).to_vec();
        self.push("dropout", shape, out, Op::Dropout { x, mask }, rg)
    }

    /// Selects rows of `table[V×C]`, giving `[ids.len()×C]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(table, "gather_rows")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(TensorError::Invalid {
                op: "gather_rows",
                msg: format!("row {bad} out of range for {rows} rows"),
            });
        }
        let t = self.value(table);
        let out = ids.iter().flat_map(|&i| t[i * cols..(i + 1) * cols].iter().copied()).collect();
        let rg = self.rg(&[table]);
        let op = Op::GatherRows {
            table,
            ids: ids.to_vec(),
            cols,
        };
        self.push("gather_rows", vec![ids.len(), cols], out, op, rg)
    }

    /// Side-by-side concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::Invalid {
                op: "concat_cols",
                msg: "no inputs".into(),
            });
        };
        let (rows, _) = self.matrix_dims(first, "concat_cols")?;
        let mut dims = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.matrix_dims(p, "concat_cols")?;
            if r != rows {
                return Err(shape_err("concat_cols", self.shape(first), self.shape(p)));
            }
            dims.push((p, c));
        }
        let total: usize = dims.iter().map(|(_, c)| c).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &(p, c) in &dims {
                out.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        let rg = self.rg(parts);
        let op = Op::ConcatCols { parts: dims, rows };
        self.push("concat_cols", vec![rows, total], out, op, rg)
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::Invalid {
                op: "concat_rows",
                msg: "no inputs".into(),
            });
        };
        let (_, cols) = self.matrix_dims(first, "concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.matrix_dims(p, "concat_rows")?;
            if c != cols {
                return Err(shape_err("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        let rg = self.rg(parts);
        let op = Op::ConcatRows {
            parts: parts.to_vec(),
        };
        self.push("concat_rows", vec![rows, cols], out, op, rg)
    }

    /// Columns `start..start+len` of a matrix.
    pub fn narrow_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(x, "narrow_cols")?;
        if start + len > cols {
            return Err(TensorError::Invalid {
                op: "narrow_cols",
                msg: format!("columns {start}..{} exceed {cols}", start + len),
            });
        }
        let out = self
            .value(x)
            .chunks(cols)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let rg = self.rg(&[x]);
        let op = Op::NarrowCols {
            x,
            cols,
            start,
            len,
        };
        self.push("narrow_cols", vec![rows, len], out, op, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(shape_err("reshape", self.shape(x), shape));
        }
        let out = self.value(x).to_vec();
        let rg = self.rg(&[x]);
        self.push("reshape", shape.to_vec(), out, Op::Reshape { x }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().sum();
        let rg = self.rg(&[x]);
        self.push("sum", Vec::new(), vec![s], Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.is_empty() {
            return Err(TensorError::Invalid {
                op: "mean",
                msg: "empty input".into(),
            });
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[x]);
        self.push("mean", Vec::new(), vec![m], Op::Mean { x }, rg)
    }

    /// Mean over rows of `-log softmax(logits[i])[gold[i]]`.
    pub fn cross_entropy(&mut self, logits: Var, gold: &[usize]) -> Result<Var> {
        let (rows, classes) = self.matrix_dims(logits, "cross_entropy")?;
        if rows != gold.len() || rows == 0 {
            return Err(shape_err("cross_entropy", self.shape(logits), &[gold.len()]));
        }
        if let Some(&label) = gold.iter().find(|&&g| g >= classes) {
            return Err(TensorError::Label { label, classes });
        }
        let mut probs = self.value(logits).to_vec();
        let mut loss = 0.0;
        for (row, &y) in probs.chunks_mut(classes).zip(gold) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
            softmax_in_place(row);
        }
        loss /= rows as f64;
        let rg = self.rg(&[logits]);
        let op = Op::CrossEntropy {
            logits,
            gold: gold.to_vec(),
            probs,
            classes,
        };
        self.push("cross_entropy", Vec::new(), vec![loss], op, rg)
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != target.len() || p.is_empty() {
            return Err(shape_err("mse", self.shape(pred), &[target.len()]));
        }
        let loss = p.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
        let rg = self.rg(&[pred]);
        let op = Op::Mse {
            pred,
            target: target.to_vec(),
        };
        self.push("mse", Vec::new(), vec![loss], op, rg)
    }

    /// Records a scalar function evaluated outside the tape together with its
    /// gradient w.r.t. each input (one buffer per input, same length).
    pub fn scalar_fn(&mut self, inputs: &[Var], value: f64, local_grads: Vec<Vec<f64>>) -> Result<Var> {
        if inputs.len() != local_grads.len() {
            return Err(TensorError::Invalid {
                op: "scalar_fn",
                msg: format!("{} inputs but {} gradients", inputs.len(), local_grads.len()),
            });
        }
        for (&v, g) in inputs.iter().zip(&local_grads) {
            if self.value(v).len() != g.len() {
                return Err(shape_err("scalar_fn", self.shape(v), &[g.len()]));
            }
        }
        let rg = self.rg(inputs);
        let op = Op::Scalar {
            inputs: inputs.to_vec(),
            local_grads,
        };
        self.push("scalar_fn", Vec::new(), vec![value], op, rg)
    }
}
