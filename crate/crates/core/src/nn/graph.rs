//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records every operation of one forward pass as a node on a
//! tape. [`Graph::backward`] walks the tape in reverse and accumulates the
//! gradient of a scalar output with respect to every node, returning the
//! gradients of the parameter leaves as a [`Grads`] set.
//!
//! Everything is a 2-D matrix; vectors are `1 × n` or `n × 1`.

use std::collections::HashMap;

use ndarray::{s, Array2, Axis};

use super::params::{ParamId, Params};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRowBias(Var, Var),
    Mul(Var, Var),
    MulColBroadcast(Var, Var),
    MulConst(Var, Array2<f64>),
    Scale(Var, f64),
    ScaleVar(Var, Var),
    RSub(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    BroadcastRows(Var),
    MaskRows(Var, Vec<bool>),
    MaskedSoftmaxRows(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LayerNormRows(Var, Array2<f64>),
    LogClamp(Var, f64),
    SumAll(Var),
    SelectSum(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Gradients of a scalar with respect to parameters, indexed by [`ParamId`].
#[derive(Debug, Clone, Default)]
pub struct Grads {
    grads: Vec<Option<Array2<f64>>>,
}

impl Grads {
    pub fn zeros_like(params: &Params) -> Self {
        Grads {
            grads: params.iter().map(|(_, _, v)| Some(Array2::zeros(v.raw_dim()))).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.grads.get(id.index()).and_then(|g| g.as_ref())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// In-place `self += other`. Missing entries count as zero.
    pub fn accumulate(&mut self, other: &Grads) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => *m += t,
                    None => *mine = Some(t.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.mapv_inplace(|x| x * factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Array2<f64>)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId::from_index(i), g)))
    }
}

/// Tape of a single forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, params: &Params, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(params.get(id).clone(), Op::Param(id));
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push(value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    /// `a[i, j] + bias[0, j]`.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Var {
        assert_eq!(self.shape(bias), (1, self.shape(a).1), "bias shape");
        let value = self.value(a) + self.value(bias);
        self.push(value, Op::AddRowBias(a, bias))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    /// `a[i, j] * col[i, 0]`.
    pub fn mul_col_broadcast(&mut self, a: Var, col: Var) -> Var {
        assert_eq!(self.shape(col), (self.shape(a).0, 1), "column shape");
        let value = self.value(a) * self.value(col);
        self.push(value, Op::MulColBroadcast(a, col))
    }

    /// Element-wise product with a constant matrix (dropout masks, labels).
    pub fn mul_const(&mut self, a: Var, c: Array2<f64>) -> Var {
        assert_eq!(self.shape(a), c.dim(), "mul_const: shape mismatch");
        let value = self.value(a) * &c;
        self.push(value, Op::MulConst(a, c))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        self.push(value, Op::Scale(a, factor))
    }

    /// Multiply every element of `a` by the `1 × 1` node `s`.
    pub fn scale_var(&mut self, a: Var, s: Var) -> Var {
        let factor = self.scalar(s);
        let value = self.value(a) * factor;
        self.push(value, Op::ScaleVar(a, s))
    }

    /// `shift - a`, element-wise.
    pub fn rsub_scalar(&mut self, shift: f64, a: Var) -> Var {
        let value = self.value(a).mapv(|x| shift - x);
        self.push(value, Op::RSub(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(value, Op::SliceCols(a, start, len))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(value, Op::SliceRows(a, start, len))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Var {
        self.slice_rows(a, i, 1)
    }

    /// Repeat a `1 × n` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        assert_eq!(self.shape(a).0, 1, "broadcast_rows expects a single row");
        let value = self.value(a).broadcast((rows, self.shape(a).1)).unwrap().to_owned();
        self.push(value, Op::BroadcastRows(a))
    }

    /// Zero every row whose mask entry is false.
    pub fn mask_rows(&mut self, a: Var, mask: &[bool]) -> Var {
        assert_eq!(mask.len(), self.shape(a).0, "mask_rows: length mismatch");
        let mut value = self.value(a).clone();
        for (mut row, &keep) in value.rows_mut().into_iter().zip(mask) {
            if !keep {
                row.fill(0.0);
            }
        }
        self.push(value, Op::MaskRows(a, mask.to_vec()))
    }

    /// Row-wise softmax restricted to columns where `col_mask` is true.
    ///
    /// Excluded columns get probability exactly zero. A row with no allowed
    /// column is all zeros.
    pub fn masked_softmax_rows(&mut self, a: Var, col_mask: &[bool]) -> Var {
        let value = masked_softmax(self.value(a), col_mask);
        self.push(value, Op::MaskedSoftmaxRows(a))
    }

    /// Column-wise softmax restricted to rows where `row_mask` is true.
    pub fn masked_softmax_cols(&mut self, a: Var, row_mask: &[bool]) -> Var {
        let t = self.transpose(a);
        let sm = self.masked_softmax_rows(t, row_mask);
        self.transpose(sm)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    /// Per-row standardisation `(x - mean) / sqrt(var + eps)` with no affine part.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let n = x.ncols() as f64;
        let mut value = x.clone();
        let mut inv_std = Array2::zeros((x.nrows(), 1));
        for (i, mut row) in value.rows_mut().into_iter().enumerate() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv_std[[i, 0]] = inv;
        }
        self.push(value, Op::LayerNormRows(a, inv_std))
    }

    /// `ln(max(x, eps))`; the gradient is zero where the clamp is active.
    pub fn log_clamp(&mut self, a: Var, eps: f64) -> Var {
        let value = self.value(a).mapv(|x| x.max(eps).ln());
        self.push(value, Op::LogClamp(a, eps))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::SumAll(a))
    }

    /// Sum of the elements at the given row-major flat positions.
    pub fn select_sum(&mut self, a: Var, positions: &[usize]) -> Var {
        let x = self.value(a);
        let ncols = x.ncols();
        let total: f64 = positions.iter().map(|&p| x[[p / ncols, p % ncols]]).sum();
        self.push(Array2::from_elem((1, 1), total), Op::SelectSum(a, positions.to_vec()))
    }

    /// Gradients of the `1 × 1` node `output` with respect to all parameter leaves.
    pub fn backward(&self, output: Var, n_params: usize) -> Grads {
        assert_eq!(self.shape(output), (1, 1), "backward expects a scalar output");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Array2::ones((1, 1)));
        let mut out = Grads { grads: vec![None; n_params] };

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut send = |v: Var, delta: Array2<f64>| {
                match &mut grads[v.0] {
                    Some(acc) => *acc += &delta,
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    out.grads[id.index()] = Some(g);
                }
                Op::MatMul(a, b) => {
                    send(*a, g.dot(&self.value(*b).t()));
                    send(*b, self.value(*a).t().dot(&g));
                }
                Op::Transpose(a) => send(*a, g.t().to_owned()),
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*b, -&g);
                    send(*a, g);
                }
                Op::AddRowBias(a, b) => {
                    send(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    send(*a, &g * self.value(*b));
                    send(*b, &g * self.value(*a));
                }
                Op::MulColBroadcast(a, c) => {
                    let dc = (&g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    send(*c, dc);
                    send(*a, &g * self.value(*c));
                }
                Op::MulConst(a, c) => send(*a, &g * c),
                Op::Scale(a, f) => send(*a, g * *f),
                Op::ScaleVar(a, s) => {
                    let ds = (&g * self.value(*a)).sum();
                    send(*s, Array2::from_elem((1, 1), ds));
                    send(*a, g * self.scalar(*s));
                }
                Op::RSub(a) => send(*a, -g),
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        send(p, g.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let h = self.shape(p).0;
                        send(p, g.slice(s![offset..offset + h, ..]).to_owned());
                        offset += h;
                    }
                }
                Op::SliceCols(a, start, len) => {
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    d.slice_mut(s![.., *start..*start + *len]).assign(&g);
                    send(*a, d);
                }
                Op::SliceRows(a, start, len) => {
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    d.slice_mut(s![*start..*start + *len, ..]).assign(&g);
                    send(*a, d);
                }
                Op::BroadcastRows(a) => send(*a, g.sum_axis(Axis(0)).insert_axis(Axis(0))),
                Op::MaskRows(a, mask) => {
                    let mut d = g;
                    for (mut row, &keep) in d.rows_mut().into_iter().zip(mask) {
                        if !keep {
                            row.fill(0.0);
                        }
                    }
                    send(*a, d);
                }
                Op::MaskedSoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = &g * y;
                    for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                        let dot: f64 = drow.sum();
                        drow.zip_mut_with(&yrow, |dv, &yv| *dv -= yv * dot);
                    }
                    send(*a, d);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    send(*a, &g * &y.mapv(|v| v * (1.0 - v)));
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    send(*a, &g * &y.mapv(|v| 1.0 - v * v));
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut d = g;
                    d.zip_mut_with(x, |dv, &xv| {
                        if xv <= 0.0 {
                            *dv = 0.0;
                        }
                    });
                    send(*a, d);
                }
                Op::LayerNormRows(a, inv_std) => {
                    let y = &node.value;
                    let n = y.ncols() as f64;
                    let mut d = g.clone();
                    for (i, mut drow) in d.rows_mut().into_iter().enumerate() {
                        let grow = g.row(i);
                        let yrow = y.row(i);
                        let mean_g = grow.sum() / n;
                        let mean_gy = grow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                        let inv = inv_std[[i, 0]];
                        for j in 0..drow.len() {
                            drow[j] = inv * (grow[j] - mean_g - yrow[j] * mean_gy);
                        }
                    }
                    send(*a, d);
                }
                Op::LogClamp(a, eps) => {
                    let x = self.value(*a);
                    let mut d = g;
                    d.zip_mut_with(x, |dv, &xv| {
                        *dv = if xv > *eps { *dv / xv } else { 0.0 };
                    });
                    send(*a, d);
                }
                Op::SumAll(a) => {
                    let gv = g[[0, 0]];
                    send(*a, Array2::from_elem(self.value(*a).raw_dim(), gv));
                }
                Op::SelectSum(a, positions) => {
                    let gv = g[[0, 0]];
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    let ncols = d.ncols();
                    for &p in positions {
                        d[[p / ncols, p % ncols]] += gv;
                    }
                    send(*a, d);
                }
            }
        }
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax of each row over the columns allowed by `col_mask`.
pub fn masked_softmax(x: &Array2<f64>, col_mask: &[bool]) -> Array2<f64> {
    assert_eq!(col_mask.len(), x.ncols(), "softmax mask length");
    let mut out = Array2::zeros(x.raw_dim());
    for (xrow, mut orow) in x.rows().into_iter().zip(out.rows_mut()) {
        let max = xrow
            .iter()
            .zip(col_mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            continue;
        }
        let mut total = 0.0;
        for ((o, &v), &m) in orow.iter_mut().zip(xrow.iter()).zip(col_mask) {
            if m {
                *o = (v - max).exp();
                total += *o;
            }
        }
        orow.mapv_inplace(|v| v / total);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numeric_check(build: impl Fn(&mut Graph, Var) -> Var, x0: Array2<f64>) {
        let mut params = Params::new();
        let id = params.insert("x", x0.clone());
        let mut g = Graph::new();
        let x = g.param(&params, id);
        let out = build(&mut g, x);
        let grads = g.backward(out, params.len());
        let analytic = grads.get(id).unwrap().clone();
        let h = 1e-6;
        for i in 0..x0.nrows() {
            for j in 0..x0.ncols() {
                let eval = |delta: f64| {
                    let mut p = params.clone();
                    p.get_mut(id)[[i, j]] += delta;
                    let mut g = Graph::new();
                    let x = g.param(&p, id);
                    let out = build(&mut g, x);
                    g.scalar(out)
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic[[i, j]];
                assert!(
                    (a - numeric).abs() <= 1e-6 * (1.0 + a.abs().max(numeric.abs())),
                    "grad mismatch at ({i},{j}): analytic {a}, numeric {numeric}"
                );
            }
        }
    }

    fn sample() -> Array2<f64> {
        array![[0.3, -1.2, 0.7], [1.1, 0.4, -0.5]]
    }

    #[test]
    fn softmax_rows_sum_to_one_and_respect_mask() {
        let x = array![[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]];
        let y = masked_softmax(&x, &[true, false, true]);
        for row in y.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert_eq!(row[1], 0.0);
        }
        let none = masked_softmax(&x, &[false, false, false]);
        assert!(none.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_of_elementwise_ops() {
        numeric_check(
            |g, x| {
                let s = g.sigmoid(x);
                let t = g.tanh(s);
                let m = g.mul(t, x);
                g.sum_all(m)
            },
            sample(),
        );
        numeric_check(
            |g, x| {
                let l = g.log_clamp(x, 1e-12);
                let r = g.rsub_scalar(1.0, x);
                let p = g.mul(l, r);
                g.sum_all(p)
            },
            sample().mapv(|v| v.abs() + 0.1),
        );
    }

    #[test]
    fn gradients_of_matrix_ops() {
        numeric_check(
            |g, x| {
                let t = g.transpose(x);
                let p = g.matmul(x, t);
                let sm = g.masked_softmax_rows(p, &[true, true]);
                let c = g.concat_cols(&[sm, x]);
                let r = g.slice_cols(c, 1, 3);
                let w = g.constant(array![[0.5, -1.0, 2.0], [1.5, 0.25, -0.75]]);
                let m = g.mul(r, w);
                g.sum_all(m)
            },
            sample(),
        );
        numeric_check(
            |g, x| {
                let ln = g.layer_norm_rows(x, 1e-5);
                let w = g.constant(array![[0.5, -1.0, 2.0], [1.5, 0.25, -0.75]]);
                let m = g.mul(ln, w);
                let r0 = g.row(m, 0);
                let b = g.broadcast_rows(r0, 3);
                let cs = g.masked_softmax_cols(b, &[true, false, true]);
                let sel = g.select_sum(cs, &[0, 4, 8]);
                let total = g.sum_all(m);
                let sq = g.mul(total, total);
                g.add(sel, sq)
            },
            sample(),
        );
    }

    #[test]
    fn gradients_of_broadcasting_ops() {
        numeric_check(
            |g, x| {
                let bias = g.slice_rows(x, 0, 1);
                let a = g.add_row_bias(x, bias);
                let col = g.slice_cols(x, 0, 1);
                let b = g.mul_col_broadcast(a, col);
                let s = g.slice_cols(x, 2, 1);
                let s = g.slice_rows(s, 1, 1);
                let c = g.scale_var(b, s);
                let masked = g.mask_rows(c, &[true, false]);
                let d = g.concat_rows(&[masked, x]);
                let r = g.relu(d);
                g.sum_all(r)
            },
            sample(),
        );
    }

    #[test]
    fn param_leaf_is_shared() {
        let mut params = Params::new();
        let id = params.insert("w", array![[2.0]]);
        let mut g = Graph::new();
        let a = g.param(&params, id);
        let b = g.param(&params, id);
        assert_eq!(a, b);
        let p = g.mul(a, b);
        let grads = g.backward(p, params.len());
        assert_eq!(grads.get(id).unwrap()[[0, 0]], 4.0);
    }
}
