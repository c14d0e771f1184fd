//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients
//! into every node that transitively depends on a trainable leaf.
//!
//! Broadcasting is limited to the right operand of `add`/`sub`/`mul`, whose
//! shape must be a suffix of the left operand's shape.
//!
//! Segment operations take per-row segment ids which must be sorted
//! ascending; they realize neighborhood-restricted attention over sorted
//! edge lists.

use std::rc::Rc;

use crate::error::{contract, shape_err, Result};
use crate::tensor::{matmul_into, transpose, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    ConcatRows(Vec<Var>),
    Slice { x: Var, start: usize, end: usize },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Huber { x: Var, delta: f64 },
    SegmentSoftmax { x: Var, ids: Rc<[usize]> },
    SegmentSum { x: Var, ids: Rc<[usize]> },
    GatherRows { x: Var, idx: Rc<[usize]> },
    SumAll(Var),
    MeanAll(Var),
    Reshape(Var),
    LayerNorm { x: Var, eps: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation tape. Single-threaded; build one per forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient buffer for `v`, or `None` if `v` does not influence the root
    /// or does not require gradients.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, with zeros when it was never reached.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

fn is_suffix(full: &[usize], suffix: &[usize]) -> bool {
    suffix.len() <= full.len() && full[full.len() - suffix.len()..] == *suffix
}

fn check_segments(op: &'static str, ids: &[usize], rows: usize) -> Result<()> {
    if ids.len() != rows {
        return shape_err(op, &[rows], &[ids.len()]);
    }
    if ids.windows(2).any(|w| w[0] > w[1]) {
        return contract(op, "segment ids must be sorted ascending");
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf that receives gradients.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that is treated as a constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err("matmul", sa, sb);
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(ta.data(), tb.data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !is_suffix(ta.shape(), tb.shape()) {
            return shape_err(name, ta.shape(), tb.shape());
        }
        let bn = tb.numel();
        let bd = tb.data();
        let data = if bn == 0 {
            Vec::new()
        } else {
            ta.data()
                .chunks(bn)
                .flat_map(|chunk| chunk.iter().zip(bd).map(|(&x, &y)| f(x, y)))
                .collect()
        };
        let shape = ta.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, data)?, op, rg))
    }

    /// Elementwise `a + b`, broadcasting `b` over leading dims of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(shape, data).expect("same shape"), op, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    /// Elementwise smooth-L1 of a residual: `0.5 r²` inside `|r| < δ`,
    /// `δ(|r| − δ/2)` outside.
    pub fn huber(&mut self, x: Var, delta: f64) -> Var {
        self.unary(x, |r| huber(r, delta), Op::Huber { x, delta })
    }

    /// Concatenates along the last dimension.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return contract("concat", "no inputs");
        };
        let lead = self.shape(first)[..self.shape(first).len().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return shape_err("concat", self.shape(first), s);
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(x).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(xs.to_vec()), rg))
    }

    /// Concatenates along the leading dimension.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return contract("concat_rows", "no inputs");
        };
        let tail = self.shape(first).get(1..).unwrap_or(&[]).to_vec();
        if self.shape(first).is_empty() {
            return contract("concat_rows", "scalar input");
        }
        let mut rows = 0;
        let mut data = Vec::new();
        for &x in xs {
            let s = self.shape(x);
            if s.is_empty() || s[1..] != tail[..] {
                return shape_err("concat_rows", self.shape(first), s);
            }
            rows += s[0];
            data.extend_from_slice(self.value(x).data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(Tensor::new(shape, data)?, Op::ConcatRows(xs.to_vec()), rg))
    }

    /// Columns `start..end` of the last dimension.
    pub fn slice(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let w = *s.last().unwrap_or(&0);
        if s.is_empty() || start > end || end > w {
            return shape_err("slice", &s, &[start, end]);
        }
        let rows = self.value(x).numel() / w.max(1);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&src[r * w + start..r * w + end]);
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = end - start;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::Slice { x, start, end }, rg))
    }

    /// Softmax over rows sharing a segment id, independently per column.
    pub fn segment_softmax(&mut self, x: Var, ids: Rc<[usize]>) -> Result<Var> {
        let t = self.value(x);
        if t.rank() == 0 {
            return contract("segment_softmax", "scalar input");
        }
        check_segments("segment_softmax", &ids, t.rows())?;
        let w = t.row_len();
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        for (lo, hi) in segment_ranges(&ids) {
            for c in 0..w {
                let mut mx = f64::NEG_INFINITY;
                for r in lo..hi {
                    mx = mx.max(src[r * w + c]);
                }
                let mut sum = 0.0;
                for r in lo..hi {
                    let e = (src[r * w + c] - mx).exp();
                    out[r * w + c] = e;
                    sum += e;
                }
                for r in lo..hi {
                    out[r * w + c] /= sum;
                }
            }
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::SegmentSoftmax { x, ids }, rg))
    }

    /// Sums rows into `num_segments` buckets by segment id.
    pub fn segment_sum(&mut self, x: Var, ids: Rc<[usize]>, num_segments: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() == 0 {
            return contract("segment_sum", "scalar input");
        }
        check_segments("segment_sum", &ids, t.rows())?;
        if ids.last().is_some_and(|&l| l >= num_segments) {
            return contract("segment_sum", "segment id out of range");
        }
        let w = t.row_len();
        let src = t.data();
        let mut out = vec![0.0; num_segments * w];
        for (r, &s) in ids.iter().enumerate() {
            for (o, v) in out[s * w..(s + 1) * w].iter_mut().zip(&src[r * w..(r + 1) * w]) {
                *o += v;
            }
        }
        let mut shape = t.shape().to_vec();
        shape[0] = num_segments;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::SegmentSum { x, ids }, rg))
    }

    /// Selects rows of `x` by index (repetition allowed).
    pub fn gather_rows(&mut self, x: Var, idx: Rc<[usize]>) -> Result<Var> {
        let t = self.value(x);
        if t.rank() == 0 {
            return contract("gather_rows", "scalar input");
        }
        let n = t.rows();
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return contract("gather_rows", format!("row {bad} out of range for {n} rows"));
        }
        let w = t.row_len();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx.iter() {
            data.extend_from_slice(t.row(i));
        }
        let mut shape = t.shape().to_vec();
        shape[0] = idx.len();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::GatherRows { x, idx }, rg))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::MeanAll(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Normalizes the last dimension to zero mean and unit variance.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let t = self.value(x);
        if t.rank() == 0 {
            return contract("layer_norm", "scalar input");
        }
        let w = t.last_dim();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(w) {
            let (mean, inv) = moments(row, eps);
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::LayerNorm { x, eps }, rg))
    }

    /// Reverse pass from a one-element root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let n = self.nodes.len();
        if self.value(root).numel() != 1 {
            return contract(
                "backward",
                format!("root must be scalar, got shape {:?}", self.shape(root)),
            );
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if !self.rg(root) {
            return Ok(Gradients { grads });
        }
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(v) {
            return;
        }
        let len = self.value(v).numel();
        let buf = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(buf);
    }

    fn accum_broadcast(&self, grads: &mut [Option<Vec<f64>>], b: Var, g: &[f64], w: impl Fn(usize) -> f64) {
        self.accum(grads, b, |buf| {
            let bn = buf.len();
            if bn == 0 {
                return;
            }
            for (c, chunk) in g.chunks(bn).enumerate() {
                for (j, (o, gv)) in buf.iter_mut().zip(chunk).enumerate() {
                    *o += gv * w(c * bn + j);
                }
            }
        });
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let nn = tb.shape()[1];
                // dA = dC · Bᵀ
                self.accum(grads, a, |buf| {
                    let bt = transpose(tb.data(), k, nn);
                    matmul_into(g, &bt, buf, m, nn, k);
                });
                // dB = Aᵀ · dC
                self.accum(grads, b, |buf| {
                    let at = transpose(ta.data(), m, k);
                    matmul_into(&at, g, buf, k, m, nn);
                });
            }
            Op::Add(a, b) => {
                self.accum(grads, a, |buf| add_into(buf, g));
                self.accum_broadcast(grads, b, g, |_| 1.0);
            }
            Op::Sub(a, b) => {
                self.accum(grads, a, |buf| add_into(buf, g));
                self.accum_broadcast(grads, b, g, |_| -1.0);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let bn = tb.numel();
                self.accum(grads, a, |buf| {
                    for (i, (o, gv)) in buf.iter_mut().zip(g).enumerate() {
                        *o += gv * tb.data()[i % bn];
                    }
                });
                self.accum_broadcast(grads, b, g, |i| ta.data()[i]);
            }
            Op::Scale(x, c) => self.accum(grads, x, |buf| {
                for (o, gv) in buf.iter_mut().zip(g) {
                    *o += gv * c;
                }
            }),
            Op::Concat(ref xs) => {
                let total = out.last_dim();
                let rows = out.numel() / total.max(1);
                let mut off = 0;
                for &x in xs {
                    let w = self.value(x).last_dim();
                    self.accum(grads, x, |buf| {
                        for r in 0..rows {
                            add_into(
                                &mut buf[r * w..(r + 1) * w],
                                &g[r * total + off..r * total + off + w],
                            );
                        }
                    });
                    off += w;
                }
            }
            Op::ConcatRows(ref xs) => {
                let mut off = 0;
                for &x in xs {
                    let len = self.value(x).numel();
                    self.accum(grads, x, |buf| add_into(buf, &g[off..off + len]));
                    off += len;
                }
            }
            Op::Slice { x, start, end } => {
                let w = self.value(x).last_dim();
                let sw = end - start;
                if sw == 0 {
                    return;
                }
                self.accum(grads, x, |buf| {
                    for (r, grow) in g.chunks(sw).enumerate() {
                        add_into(&mut buf[r * w + start..r * w + end], grow);
                    }
                });
            }
            Op::Sigmoid(x) => self.elementwise_from_out(grads, x, out, g, |y| y * (1.0 - y)),
            Op::Tanh(x) => self.elementwise_from_out(grads, x, out, g, |y| 1.0 - y * y),
            Op::Exp(x) => self.elementwise_from_out(grads, x, out, g, |y| y),
            Op::Relu(x) => self.elementwise_from_in(grads, x, g, |v| if v > 0.0 { 1.0 } else { 0.0 }),
            Op::Log(x) => self.elementwise_from_in(grads, x, g, |v| 1.0 / v),
            Op::Huber { x, delta } => self.elementwise_from_in(grads, x, g, |r| {
                if r.abs() < delta {
                    r
                } else {
                    delta * r.signum()
                }
            }),
            Op::SegmentSoftmax { x, ref ids } => {
                let w = out.row_len();
                let y = out.data();
                self.accum(grads, x, |buf| {
                    for (lo, hi) in segment_ranges(ids) {
                        for c in 0..w {
                            let dot: f64 = (lo..hi).map(|r| g[r * w + c] * y[r * w + c]).sum();
                            for r in lo..hi {
                                let k = r * w + c;
                                buf[k] += y[k] * (g[k] - dot);
                            }
                        }
                    }
                });
            }
            Op::SegmentSum { x, ref ids } => {
                let w = out.row_len();
                self.accum(grads, x, |buf| {
                    for (r, &s) in ids.iter().enumerate() {
                        add_into(&mut buf[r * w..(r + 1) * w], &g[s * w..(s + 1) * w]);
                    }
                });
            }
            Op::GatherRows { x, ref idx } => {
                let w = out.row_len();
                self.accum(grads, x, |buf| {
                    for (r, &i) in idx.iter().enumerate() {
                        add_into(&mut buf[i * w..(i + 1) * w], &g[r * w..(r + 1) * w]);
                    }
                });
            }
            Op::SumAll(x) => self.accum(grads, x, |buf| {
                for o in buf.iter_mut() {
                    *o += g[0];
                }
            }),
            Op::MeanAll(x) => self.accum(grads, x, |buf| {
                let s = g[0] / buf.len() as f64;
                for o in buf.iter_mut() {
                    *o += s;
                }
            }),
            Op::Reshape(x) => self.accum(grads, x, |buf| add_into(buf, g)),
            Op::LayerNorm { x, eps } => {
                let xin = self.value(x);
                let w = xin.last_dim();
                self.accum(grads, x, |buf| {
                    for ((xr, gr), (yr, br)) in xin
                        .data()
                        .chunks(w)
                        .zip(g.chunks(w))
                        .zip(out.data().chunks(w).zip(buf.chunks_mut(w)))
                    {
                        let (_, inv) = moments(xr, eps);
                        let nf = w as f64;
                        let gm = gr.iter().sum::<f64>() / nf;
                        let gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / nf;
                        for ((o, gv), yv) in br.iter_mut().zip(gr).zip(yr) {
                            *o += inv * (gv - gm - yv * gy);
                        }
                    }
                });
            }
        }
    }

    fn elementwise_from_out(
        &self,
        grads: &mut [Option<Vec<f64>>],
        x: Var,
        out: &Tensor,
        g: &[f64],
        d: impl Fn(f64) -> f64,
    ) {
        self.accum(grads, x, |buf| {
            for ((o, gv), &y) in buf.iter_mut().zip(g).zip(out.data()) {
                *o += gv * d(y);
            }
        });
    }

    fn elementwise_from_in(
        &self,
        grads: &mut [Option<Vec<f64>>],
        x: Var,
        g: &[f64],
        d: impl Fn(f64) -> f64,
    ) {
        let xin = self.value(x);
        self.accum(grads, x, |buf| {
            for ((o, gv), &v) in buf.iter_mut().zip(g).zip(xin.data()) {
                *o += gv * d(v);
            }
        });
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

/// Contiguous `[lo, hi)` row ranges of equal ids.
fn segment_ranges(ids: &[usize]) -> impl Iterator<Item = (usize, usize)> + '_ {
    let mut lo = 0;
    std::iter::from_fn(move || {
        if lo >= ids.len() {
            return None;
        }
        let mut hi = lo + 1;
        while hi < ids.len() && ids[hi] == ids[lo] {
            hi += 1;
        }
        let r = (lo, hi);
        lo = hi;
        Some(r)
    })
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a < delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}
