//! The tape's operator set: shape rules, forward kernels, and VJPs.
//!
//! Each op is written directly over row-major `f64` slices. Backward rules
//! receive the recorded input/output values plus whatever the forward pass
//! saved in [`Aux`], and return one gradient tensor per input.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Operation kinds recordable on a tape.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// `[m,k] @ [k,n] -> [m,n]`
    Matmul,
    /// Valid 3x3 convolution, stride 1: `[ci,h,w], [co,ci,3,3] -> [co,h-2,w-2]`
    Conv3x3,
    /// 2x2 max pooling, stride 2 (floor): `[c,h,w] -> [c,h/2,w/2]`
    MaxPool2x2,
    Relu,
    /// Element-wise sum of two same-shape tensors.
    Add,
    /// Element-wise product of two same-shape tensors.
    Mul,
    /// Concatenate any number of tensors along `axis`.
    Concat { axis: usize },
    Reshape { shape: Vec<usize> },
    /// Sum of all elements -> scalar.
    SumReduce,
    /// Mean of all elements -> scalar.
    MeanReduce,
    /// Softmax over the last axis.
    Softmax,
    /// `[k] -> scalar`, numerically stable `logsumexp(z) - z[label]`.
    CrossEntropyLogits { label: usize },
    /// Cosine similarity of each row of `[n,d]` against a query `[d]` -> `[n]`.
    CosineSimRows,
    /// Fused LSTM cell over a batch of coordinate rows.
    ///
    /// `x [c,i], h [c,hd], cell [c,hd], wx [i,4hd], wh [hd,4hd], b [4hd]`
    /// -> `(h' [c,hd], cell' [c,hd])`; gate order `i|f|g|o`.
    LstmCell,
    /// Euclidean distance of two same-shape tensors -> scalar.
    L2Distance,
    /// `y = mul*x + add`, element-wise with scalar constants.
    AffineConst { mul: f64, add: f64 },
    /// Contiguous range of the flattened input -> 1-D `[len]`.
    SliceFlat { offset: usize, len: usize },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Matmul => "matmul",
            Op::Conv3x3 => "conv3x3-valid",
            Op::MaxPool2x2 => "maxpool2x2",
            Op::Relu => "relu",
            Op::Add => "add",
            Op::Mul => "elementwise-mul",
            Op::Concat { .. } => "concat",
            Op::Reshape { .. } => "reshape",
            Op::SumReduce => "sum-reduce",
            Op::MeanReduce => "mean-reduce",
            Op::Softmax => "softmax",
            Op::CrossEntropyLogits { .. } => "cross-entropy-with-logits",
            Op::CosineSimRows => "cosine-similarity",
            Op::LstmCell => "lstm-cell",
            Op::L2Distance => "l2-distance",
            Op::AffineConst { .. } => "affine-const",
            Op::SliceFlat { .. } => "slice",
        }
    }

    pub fn n_outputs(&self) -> usize {
        match self {
            Op::LstmCell => 2,
            _ => 1,
        }
    }
}

/// Values saved by a forward pass for its backward rule.
#[derive(Debug, Clone)]
pub enum Aux {
    None,
    /// Flat input index of each pooled maximum.
    PoolArgmax(Vec<usize>),
    /// Activated gates `[c,4hd]` (order i|f|g|o) and `tanh(cell')` `[c,hd]`.
    Lstm { gates: Vec<f64>, tanh_c: Vec<f64> },
}

fn shape_err(op: &Op, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::ShapeMismatch {
        op: op.name(),
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn arity_err(op: &Op, got: usize) -> Error {
    Error::Config(alloc::format!(
        "{}: wrong number of inputs ({got})",
        op.name()
    ))
}

fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn softmax_rows(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for c in 0..cols {
            let e = math::exp(row[c] - max);
            out[r * cols + c] = e;
            sum += e;
        }
        for c in 0..cols {
            out[r * cols + c] /= sum;
        }
    }
    out
}

/// Decompose a shape around `axis` into (outer, axis_len, inner).
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Op {
    /// Validate input shapes, run the forward kernel, return outputs + saved state.
    pub fn forward(&self, inputs: &[&Tensor]) -> Result<(Vec<Tensor>, Aux)> {
        match self {
            Op::Matmul => {
                let [a, b] = two(self, inputs)?;
                let (sa, sb) = (a.shape(), b.shape());
                if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                    return Err(shape_err(self, sa, sb));
                }
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let out = matmul_kernel(a.data(), b.data(), m, k, n);
                Ok((vec![Tensor::new(vec![m, n], out)?], Aux::None))
            }
            Op::Conv3x3 => {
                let [x, ker] = two(self, inputs)?;
                let (sx, sk) = (x.shape(), ker.shape());
                let ok = sx.len() == 3
                    && sk.len() == 4
                    && sk[1] == sx[0]
                    && sk[2] == 3
                    && sk[3] == 3
                    && sx[1] >= 3
                    && sx[2] >= 3;
                if !ok {
                    return Err(shape_err(self, sx, sk));
                }
                let (ci, h, w) = (sx[0], sx[1], sx[2]);
                let co = sk[0];
                let (oh, ow) = (h - 2, w - 2);
                let xd = x.data();
                let kd = ker.data();
                let mut out = vec![0.0; co * oh * ow];
                for f in 0..co {
                    for c in 0..ci {
                        let kbase = (f * ci + c) * 9;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut acc = 0.0;
                                for dy in 0..3 {
                                    let xrow = (c * h + oy + dy) * w + ox;
                                    for dx in 0..3 {
                                        acc += xd[xrow + dx] * kd[kbase + dy * 3 + dx];
                                    }
                                }
                                out[(f * oh + oy) * ow + ox] += acc;
                            }
                        }
                    }
                }
                Ok((vec![Tensor::new(vec![co, oh, ow], out)?], Aux::None))
            }
            Op::MaxPool2x2 => {
                let [x] = one(self, inputs)?;
                let s = x.shape();
                if s.len() != 3 || s[1] < 2 || s[2] < 2 {
                    return Err(shape_err(self, s, &[]));
                }
                let (c, h, w) = (s[0], s[1], s[2]);
                let (oh, ow) = (h / 2, w / 2);
                let xd = x.data();
                let mut out = vec![0.0; c * oh * ow];
                let mut argmax = vec![0usize; c * oh * ow];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = f64::NEG_INFINITY;
                            let mut best_idx = 0;
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    let idx = (ch * h + 2 * oy + dy) * w + 2 * ox + dx;
                                    if xd[idx] > best {
                                        best = xd[idx];
                                        best_idx = idx;
                                    }
                                }
                            }
                            let o = (ch * oh + oy) * ow + ox;
                            out[o] = best;
                            argmax[o] = best_idx;
                        }
                    }
                }
                Ok((
                    vec![Tensor::new(vec![c, oh, ow], out)?],
                    Aux::PoolArgmax(argmax),
                ))
            }
            Op::Relu => {
                let [x] = one(self, inputs)?;
                let out = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
                Ok((vec![Tensor::new(x.shape().to_vec(), out)?], Aux::None))
            }
            Op::Add | Op::Mul => {
                let [a, b] = two(self, inputs)?;
                if a.shape() != b.shape() {
                    return Err(shape_err(self, a.shape(), b.shape()));
                }
                let out = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(&x, &y)| if matches!(self, Op::Add) { x + y } else { x * y })
                    .collect();
                Ok((vec![Tensor::new(a.shape().to_vec(), out)?], Aux::None))
            }
            Op::Concat { axis } => {
                if inputs.is_empty() {
                    return Err(arity_err(self, 0));
                }
                let rank = inputs[0].shape().len();
                if *axis >= rank {
                    return Err(shape_err(self, inputs[0].shape(), &[*axis]));
                }
                let mut axis_total = 0;
                for t in inputs {
                    let s = t.shape();
                    let conforms = s.len() == rank
                        && s.iter()
                            .zip(inputs[0].shape())
                            .enumerate()
                            .all(|(i, (a, b))| i == *axis || a == b);
                    if !conforms {
                        return Err(shape_err(self, inputs[0].shape(), s));
                    }
                    axis_total += s[*axis];
                }
                let mut out_shape = inputs[0].shape().to_vec();
                out_shape[*axis] = axis_total;
                let (outer, _, inner) = axis_split(&out_shape, *axis);
                let mut out = vec![0.0; outer * axis_total * inner];
                for o in 0..outer {
                    let mut dst = o * axis_total * inner;
                    for t in inputs {
                        let alen = t.shape()[*axis];
                        let block = alen * inner;
                        let src = o * block;
                        out[dst..dst + block].copy_from_slice(&t.data()[src..src + block]);
                        dst += block;
                    }
                }
                Ok((vec![Tensor::new(out_shape, out)?], Aux::None))
            }
            Op::Reshape { shape } => {
                let [x] = one(self, inputs)?;
                let expected: usize = shape.iter().product();
                if expected != x.len() {
                    return Err(shape_err(self, x.shape(), shape));
                }
                Ok((
                    vec![Tensor::new(shape.clone(), x.data().to_vec())?],
                    Aux::None,
                ))
            }
            Op::SumReduce => {
                let [x] = one(self, inputs)?;
                Ok((vec![Tensor::scalar(x.data().iter().sum())], Aux::None))
            }
            Op::MeanReduce => {
                let [x] = one(self, inputs)?;
                if x.is_empty() {
                    return Err(shape_err(self, x.shape(), &[]));
                }
                let s: f64 = x.data().iter().sum();
                Ok((vec![Tensor::scalar(s / x.len() as f64)], Aux::None))
            }
            Op::Softmax => {
                let [x] = one(self, inputs)?;
                let s = x.shape();
                if s.is_empty() {
                    return Err(shape_err(self, s, &[]));
                }
                let cols = s[s.len() - 1];
                let rows = x.len() / cols;
                let out = softmax_rows(x.data(), rows, cols);
                Ok((vec![Tensor::new(s.to_vec(), out)?], Aux::None))
            }
            Op::CrossEntropyLogits { label } => {
                let [z] = one(self, inputs)?;
                if z.shape().len() != 1 || *label >= z.len() {
                    return Err(shape_err(self, z.shape(), &[*label]));
                }
                let zd = z.data();
                let max = zd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + math::ln(zd.iter().map(|&v| math::exp(v - max)).sum());
                Ok((vec![Tensor::scalar(lse - zd[*label])], Aux::None))
            }
            Op::CosineSimRows => {
                let [r, q] = two(self, inputs)?;
                let (sr, sq) = (r.shape(), q.shape());
                if sr.len() != 2 || sq.len() != 1 || sr[1] != sq[0] {
                    return Err(shape_err(self, sr, sq));
                }
                let (n, d) = (sr[0], sr[1]);
                let qd = q.data();
                let qn = math::sqrt(qd.iter().map(|v| v * v).sum());
                if qn == 0.0 {
                    return Err(Error::ZeroNorm { which: "query" });
                }
                let mut out = vec![0.0; n];
                for j in 0..n {
                    let row = &r.data()[j * d..(j + 1) * d];
                    let rn = math::sqrt(row.iter().map(|v| v * v).sum());
                    if rn == 0.0 {
                        return Err(Error::ZeroNorm { which: "index row" });
                    }
                    let dot: f64 = row.iter().zip(qd).map(|(a, b)| a * b).sum();
                    out[j] = dot / (rn * qn);
                }
                Ok((vec![Tensor::from_vec(out)], Aux::None))
            }
            Op::LstmCell => {
                let [x, h, cell, wx, wh, b] = six(self, inputs)?;
                let (sx, sh) = (x.shape(), h.shape());
                if sx.len() != 2 || sh.len() != 2 || sh != cell.shape() || sx[0] != sh[0] {
                    return Err(shape_err(self, sx, sh));
                }
                let (c, i, hd) = (sx[0], sx[1], sh[1]);
                if wx.shape() != [i, 4 * hd] {
                    return Err(shape_err(self, wx.shape(), &[i, 4 * hd]));
                }
                if wh.shape() != [hd, 4 * hd] {
                    return Err(shape_err(self, wh.shape(), &[hd, 4 * hd]));
                }
                if b.shape() != [4 * hd] {
                    return Err(shape_err(self, b.shape(), &[4 * hd]));
                }
                let mut pre = matmul_kernel(x.data(), wx.data(), c, i, 4 * hd);
                let hh = matmul_kernel(h.data(), wh.data(), c, hd, 4 * hd);
                for row in 0..c {
                    for col in 0..4 * hd {
                        pre[row * 4 * hd + col] += hh[row * 4 * hd + col] + b.data()[col];
                    }
                }
                let mut gates = vec![0.0; c * 4 * hd];
                let mut c_out = vec![0.0; c * hd];
                let mut tanh_c = vec![0.0; c * hd];
                let mut h_out = vec![0.0; c * hd];
                for row in 0..c {
                    let base = row * 4 * hd;
                    for u in 0..hd {
                        let gi = math::sigmoid(pre[base + u]);
                        let gf = math::sigmoid(pre[base + hd + u]);
                        let gg = math::tanh(pre[base + 2 * hd + u]);
                        let go = math::sigmoid(pre[base + 3 * hd + u]);
                        gates[base + u] = gi;
                        gates[base + hd + u] = gf;
                        gates[base + 2 * hd + u] = gg;
                        gates[base + 3 * hd + u] = go;
                        let cv = gf * cell.data()[row * hd + u] + gi * gg;
                        let tc = math::tanh(cv);
                        c_out[row * hd + u] = cv;
                        tanh_c[row * hd + u] = tc;
                        h_out[row * hd + u] = go * tc;
                    }
                }
                Ok((
                    vec![
                        Tensor::new(vec![c, hd], h_out)?,
                        Tensor::new(vec![c, hd], c_out)?,
                    ],
                    Aux::Lstm { gates, tanh_c },
                ))
            }
            Op::L2Distance => {
                let [a, b] = two(self, inputs)?;
                if a.shape() != b.shape() {
                    return Err(shape_err(self, a.shape(), b.shape()));
                }
                let d2: f64 = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(&x, &y)| (x - y) * (x - y))
                    .sum();
                Ok((vec![Tensor::scalar(math::sqrt(d2))], Aux::None))
            }
            Op::AffineConst { mul, add } => {
                let [x] = one(self, inputs)?;
                let out = x.data().iter().map(|&v| mul * v + add).collect();
                Ok((vec![Tensor::new(x.shape().to_vec(), out)?], Aux::None))
            }
            Op::SliceFlat { offset, len } => {
                let [x] = one(self, inputs)?;
                if offset + len > x.len() {
                    return Err(shape_err(self, x.shape(), &[*offset, *len]));
                }
                let out = x.data()[*offset..offset + len].to_vec();
                Ok((vec![Tensor::from_vec(out)], Aux::None))
            }
        }
    }

    /// Vector-Jacobian product: gradient w.r.t. each input.
    ///
    /// `douts` holds the upstream gradient per output (`None` when no
    /// gradient flowed to that output).
    pub fn backward(
        &self,
        inputs: &[&Tensor],
        outputs: &[&Tensor],
        aux: &Aux,
        douts: &[Option<&Tensor>],
    ) -> Vec<Tensor> {
        match self {
            Op::Matmul => {
                let dout = douts[0].expect("matmul output grad");
                let (a, b) = (inputs[0], inputs[1]);
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = b.shape()[1];
                let dd = dout.data();
                // da = dout @ b^T
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let dv = dd[i * n + j];
                        if dv == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            da[i * k + p] += dv * b.data()[p * n + j];
                        }
                    }
                }
                // db = a^T @ dout
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let av = a.data()[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        let drow = &dd[i * n..(i + 1) * n];
                        let brow = &mut db[p * n..(p + 1) * n];
                        for j in 0..n {
                            brow[j] += av * drow[j];
                        }
                    }
                }
                vec![
                    Tensor::new(vec![m, k], da).unwrap(),
                    Tensor::new(vec![k, n], db).unwrap(),
                ]
            }
            Op::Conv3x3 => {
                let dout = douts[0].expect("conv output grad");
                let (x, ker) = (inputs[0], inputs[1]);
                let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let co = ker.shape()[0];
                let (oh, ow) = (h - 2, w - 2);
                let dd = dout.data();
                let mut dx = vec![0.0; ci * h * w];
                let mut dk = vec![0.0; co * ci * 9];
                for f in 0..co {
                    for c in 0..ci {
                        let kbase = (f * ci + c) * 9;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let dv = dd[(f * oh + oy) * ow + ox];
                                if dv == 0.0 {
                                    continue;
                                }
                                for dy in 0..3 {
                                    let xrow = (c * h + oy + dy) * w + ox;
                                    for dxx in 0..3 {
                                        dx[xrow + dxx] += dv * ker.data()[kbase + dy * 3 + dxx];
                                        dk[kbase + dy * 3 + dxx] += dv * x.data()[xrow + dxx];
                                    }
                                }
                            }
                        }
                    }
                }
                vec![
                    Tensor::new(x.shape().to_vec(), dx).unwrap(),
                    Tensor::new(ker.shape().to_vec(), dk).unwrap(),
                ]
            }
            Op::MaxPool2x2 => {
                let dout = douts[0].expect("pool output grad");
                let Aux::PoolArgmax(argmax) = aux else {
                    unreachable!("pool aux")
                };
                let mut dx = vec![0.0; inputs[0].len()];
                for (o, &src) in argmax.iter().enumerate() {
                    dx[src] += dout.data()[o];
                }
                vec![Tensor::new(inputs[0].shape().to_vec(), dx).unwrap()]
            }
            Op::Relu => {
                let dout = douts[0].expect("relu output grad");
                let dx = inputs[0]
                    .data()
                    .iter()
                    .zip(dout.data())
                    .map(|(&x, &d)| if x > 0.0 { d } else { 0.0 })
                    .collect();
                vec![Tensor::new(inputs[0].shape().to_vec(), dx).unwrap()]
            }
            Op::Add => {
                let dout = douts[0].expect("add output grad");
                vec![dout.clone(), dout.clone()]
            }
            Op::Mul => {
                let dout = douts[0].expect("mul output grad");
                let da = dout
                    .data()
                    .iter()
                    .zip(inputs[1].data())
                    .map(|(&d, &b)| d * b)
                    .collect();
                let db = dout
                    .data()
                    .iter()
                    .zip(inputs[0].data())
                    .map(|(&d, &a)| d * a)
                    .collect();
                vec![
                    Tensor::new(inputs[0].shape().to_vec(), da).unwrap(),
                    Tensor::new(inputs[1].shape().to_vec(), db).unwrap(),
                ]
            }
            Op::Concat { axis } => {
                let dout = douts[0].expect("concat output grad");
                let out_shape = outputs[0].shape();
                let (outer, axis_total, inner) = axis_split(out_shape, *axis);
                let mut grads: Vec<Tensor> = inputs
                    .iter()
                    .map(|t| Tensor::zeros(t.shape()))
                    .collect();
                for o in 0..outer {
                    let mut src = o * axis_total * inner;
                    for (gi, t) in inputs.iter().enumerate() {
                        let block = t.shape()[*axis] * inner;
                        let dst = o * block;
                        grads[gi].data_mut()[dst..dst + block]
                            .copy_from_slice(&dout.data()[src..src + block]);
                        src += block;
                    }
                }
                grads
            }
            Op::Reshape { .. } => {
                let dout = douts[0].expect("reshape output grad");
                vec![Tensor::new(inputs[0].shape().to_vec(), dout.data().to_vec()).unwrap()]
            }
            Op::SumReduce => {
                let d = douts[0].expect("sum output grad").scalar_value();
                vec![Tensor::new(
                    inputs[0].shape().to_vec(),
                    vec![d; inputs[0].len()],
                )
                .unwrap()]
            }
            Op::MeanReduce => {
                let d = douts[0].expect("mean output grad").scalar_value();
                let n = inputs[0].len() as f64;
                vec![Tensor::new(
                    inputs[0].shape().to_vec(),
                    vec![d / n; inputs[0].len()],
                )
                .unwrap()]
            }
            Op::Softmax => {
                let dout = douts[0].expect("softmax output grad");
                let y = outputs[0].data();
                let s = inputs[0].shape();
                let cols = s[s.len() - 1];
                let rows = y.len() / cols;
                let mut dx = vec![0.0; y.len()];
                for r in 0..rows {
                    let base = r * cols;
                    let dot: f64 = (0..cols)
                        .map(|c| dout.data()[base + c] * y[base + c])
                        .sum();
                    for c in 0..cols {
                        dx[base + c] = y[base + c] * (dout.data()[base + c] - dot);
                    }
                }
                vec![Tensor::new(s.to_vec(), dx).unwrap()]
            }
            Op::CrossEntropyLogits { label } => {
                let d = douts[0].expect("ce output grad").scalar_value();
                let z = inputs[0].data();
                let mut dx = softmax_rows(z, 1, z.len());
                dx[*label] -= 1.0;
                for v in dx.iter_mut() {
                    *v *= d;
                }
                vec![Tensor::from_vec(dx)]
            }
            Op::CosineSimRows => {
                let dout = douts[0].expect("cosine output grad");
                let (r, q) = (inputs[0], inputs[1]);
                let (n, d) = (r.shape()[0], r.shape()[1]);
                let qd = q.data();
                let qn = math::sqrt(qd.iter().map(|v| v * v).sum());
                let a = outputs[0].data();
                let mut dr = vec![0.0; n * d];
                let mut dq = vec![0.0; d];
                for j in 0..n {
                    let dv = dout.data()[j];
                    if dv == 0.0 {
                        continue;
                    }
                    let row = &r.data()[j * d..(j + 1) * d];
                    let rn = math::sqrt(row.iter().map(|v| v * v).sum());
                    for u in 0..d {
                        dr[j * d + u] += dv * (qd[u] / (rn * qn) - a[j] * row[u] / (rn * rn));
                        dq[u] += dv * (row[u] / (rn * qn) - a[j] * qd[u] / (qn * qn));
                    }
                }
                vec![
                    Tensor::new(vec![n, d], dr).unwrap(),
                    Tensor::from_vec(dq),
                ]
            }
            Op::LstmCell => {
                let (x, h_prev, c_prev, wx, wh, _b) = (
                    inputs[0], inputs[1], inputs[2], inputs[3], inputs[4], inputs[5],
                );
                let Aux::Lstm { gates, tanh_c } = aux else {
                    unreachable!("lstm aux")
                };
                let (c, i) = (x.shape()[0], x.shape()[1]);
                let hd = h_prev.shape()[1];
                let zero_h;
                let dh = match douts[0] {
                    Some(t) => t.data(),
                    None => {
                        zero_h = vec![0.0; c * hd];
                        &zero_h
                    }
                };
                let zero_c;
                let dc_out = match douts[1] {
                    Some(t) => t.data(),
                    None => {
                        zero_c = vec![0.0; c * hd];
                        &zero_c
                    }
                };
                let mut dpre = vec![0.0; c * 4 * hd];
                let mut dc_prev = vec![0.0; c * hd];
                for row in 0..c {
                    let gbase = row * 4 * hd;
                    for u in 0..hd
                    {
                        let gi = gates[gbase + u];
                        let gf = gates[gbase + hd + u];
                        let gg = gates[gbase + 2 * hd + u];
                        let go = gates[gbase + 3 * hd + u];
                        let tc = tanh_c[row * hd + u];
                        let dh_v = dh[row * hd + u];
                        let dct = dc_out[row * hd + u] + dh_v * go * (1.0 - tc * tc);
                        let d_o = dh_v * tc;
                        let d_i = dct * gg;
                        let d_f = dct * c_prev.data()[row * hd + u];
                        let d_g = dct * gi;
                        dc_prev[row * hd + u] = dct * gf;
                        dpre[gbase + u] = d_i * gi * (1.0 - gi);
                        dpre[gbase + hd + u] = d_f * gf * (1.0 - gf);
                        dpre[gbase + 2 * hd + u] = d_g * (1.0 - gg * gg);
                        dpre[gbase + 3 * hd + u] = d_o * go * (1.0 - go);
                    }
                }
                // dx = dpre @ wx^T; dwx = x^T @ dpre (likewise for the recurrent pair)
                let mut dx = vec![0.0; c * i];
                let mut dwx = vec![0.0; i * 4 * hd];
                for row in 0..c {
                    for col in 0..4 * hd {
                        let dv = dpre[row * 4 * hd + col];
                        if dv == 0.0 {
                            continue;
                        }
                        for p in 0..i {
                            dx[row * i + p] += dv * wx.data()[p * 4 * hd + col];
                            dwx[p * 4 * hd + col] += dv * x.data()[row * i + p];
                        }
                    }
                }
                let mut dh_prev = vec![0.0; c * hd];
                let mut dwh = vec![0.0; hd * 4 * hd];
                for row in 0..c {
                    for col in 0..4 * hd {
                        let dv = dpre[row * 4 * hd + col];
                        if dv == 0.0 {
                            continue;
                        }
                        for p in 0..hd {
                            dh_prev[row * hd + p] += dv * wh.data()[p * 4 * hd + col];
                            dwh[p * 4 * hd + col] += dv * h_prev.data()[row * hd + p];
                        }
                    }
                }
                let mut db = vec![0.0; 4 * hd];
                for row in 0..c {
                    for col in 0..4 * hd {
                        db[col] += dpre[row * 4 * hd + col];
                    }
                }
                vec![
                    Tensor::new(vec![c, i], dx).unwrap(),
                    Tensor::new(vec![c, hd], dh_prev).unwrap(),
                    Tensor::new(vec![c, hd], dc_prev).unwrap(),
                    Tensor::new(vec![i, 4 * hd], dwx).unwrap(),
                    Tensor::new(vec![hd, 4 * hd], dwh).unwrap(),
                    Tensor::from_vec(db),
                ]
            }
            Op::L2Distance => {
                let d = douts[0].expect("l2 output grad").scalar_value();
                let dist = outputs[0].scalar_value();
                let (a, b) = (inputs[0], inputs[1]);
                // Non-differentiable at coincident points; zero is the conventional choice.
                let scale = if dist == 0.0 { 0.0 } else { d / dist };
                let da: Vec<f64> = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(&x, &y)| scale * (x - y))
                    .collect();
                let db = da.iter().map(|&v| -v).collect();
                vec![
                    Tensor::new(a.shape().to_vec(), da).unwrap(),
                    Tensor::new(b.shape().to_vec(), db).unwrap(),
                ]
            }
            Op::AffineConst { mul, .. } => {
                let dout = douts[0].expect("affine output grad");
                let dx = dout.data().iter().map(|&d| mul * d).collect();
                vec![Tensor::new(inputs[0].shape().to_vec(), dx).unwrap()]
            }
            Op::SliceFlat { offset, len } => {
                let dout = douts[0].expect("slice output grad");
                let mut dx = vec![0.0; inputs[0].len()];
                dx[*offset..offset + len].copy_from_slice(dout.data());
                vec![Tensor::new(inputs[0].shape().to_vec(), dx).unwrap()]
            }
        }
    }
}

fn one<'a>(op: &Op, inputs: &[&'a Tensor]) -> Result<[&'a Tensor; 1]> {
    match inputs {
        [a] => Ok([a]),
        _ => Err(arity_err(op, inputs.len())),
    }
}

fn two<'a>(op: &Op, inputs: &[&'a Tensor]) -> Result<[&'a Tensor; 2]> {
    match inputs {
        [a, b] => Ok([a, b]),
        _ => Err(arity_err(op, inputs.len())),
    }
}

fn six<'a>(op: &Op, inputs: &[&'a Tensor]) -> Result<[&'a Tensor; 6]> {
    match inputs {
        [a, b, c, d, e, f] => Ok([a, b, c, d, e, f]),
        _ => Err(arity_err(op, inputs.len())),
    }
}
