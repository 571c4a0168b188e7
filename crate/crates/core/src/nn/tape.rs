//! Reverse-mode differentiation over a linear tape of matrix operations.

use super::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Mat};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Geometry of a 2-D convolution over a `height × width` grid stored as
/// `(height·width) × channels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
        if len + 2 * pad < kernel {
            0
        } else {
            (len + 2 * pad - kernel) / stride + 1
        }
    }

    pub fn out_height(&self) -> usize {
        Self::out_len(self.height, self.kernel, self.stride, self.pad)
    }

    pub fn out_width(&self) -> usize {
        Self::out_len(self.width, self.kernel, self.stride, self.pad)
    }

    /// Input row feeding output position `(oh, ow)` at kernel tap `(ki, kj)`.
    fn source(&self, oh: usize, ow: usize, ki: usize, kj: usize) -> Option<usize> {
        let h = (oh * self.stride + ki).checked_sub(self.pad)?;
        let w = (ow * self.stride + kj).checked_sub(self.pad)?;
        (h < self.height && w < self.width).then_some(h * self.width + w)
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Mul(Var, Var),
    Sigmoid(Var),
    Swish(Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        rstd: Vec<f64>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    Transpose(Var),
    ColSlice(Var, usize),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    Im2Col(Var, ConvGeom),
    DepthwiseConv {
        x: Var,
        w: Var,
        b: Var,
    },
    Dropout(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn map(m: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    Mat::from_vec(m.rows, m.cols, m.data.iter().map(|&v| f(v)).collect())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape_check(&self, ok: bool, module: &str, msg: impl FnOnce() -> String) -> Result<(), NnError> {
        if ok {
            Ok(())
        } else {
            Err(NnError::Shape {
                module: module.to_string(),
                msg: msg(),
            })
        }
    }

    pub fn input(&mut self, m: Mat) -> Var {
        self.push(m, Op::Input)
    }

    /// Leaf whose gradient is routed to parameter slot `id`.
    pub fn param(&mut self, id: usize, value: Mat) -> Var {
        self.push(value, Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var, module: &str) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        self.shape_check(av.cols == bv.rows, module, || {
            format!("matmul {}x{} by {}x{}", av.rows, av.cols, bv.rows, bv.cols)
        })?;
        let mut out = Mat::zeros(av.rows, bv.cols);
        matmul_acc(av, bv, &mut out);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var, module: &str) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        self.shape_check(av.shape() == bv.shape(), module, || {
            format!("add {:?} and {:?}", av.shape(), bv.shape())
        })?;
        let mut out = av.clone();
        out.add_assign(bv);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a `1 × cols` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var, module: &str) -> Result<Var, NnError> {
        let (xv, bv) = (self.value(x), self.value(bias));
        self.shape_check(bv.rows == 1 && bv.cols == xv.cols, module, || {
            format!("bias {:?} for input {:?}", bv.shape(), xv.shape())
        })?;
        let mut out = xv.clone();
        for r in 0..out.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&bv.data) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(x, bias)))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = map(self.value(x), |v| v * k);
        self.push(out, Op::Scale(x, k))
    }

    pub fn mul(&mut self, a: Var, b: Var, module: &str) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        self.shape_check(av.shape() == bv.shape(), module, || {
            format!("mul {:?} and {:?}", av.shape(), bv.shape())
        })?;
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect();
        let out = Mat::from_vec(av.rows, av.cols, data);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = map(self.value(x), sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn swish(&mut self, x: Var) -> Var {
        let out = map(self.value(x), |v| v * sigmoid(v));
        self.push(out, Op::Swish(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = map(self.value(x), |v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    /// Row-wise normalization to zero mean and unit variance, then `γ ⊙ x̂ + β`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64, module: &str) -> Result<Var, NnError> {
        let xv = self.value(x);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let d = xv.cols;
        self.shape_check(gv.shape() == (1, d) && bv.shape() == (1, d), module, || {
            format!("layer norm affine {:?}/{:?} for width {d}", gv.shape(), bv.shape())
        })?;
        let mut xhat = Mat::zeros(xv.rows, d);
        let mut rstd = Vec::with_capacity(xv.rows);
        let mut out = Mat::zeros(xv.rows, d);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + eps).sqrt();
            rstd.push(s);
            for c in 0..d {
                let h = (row[c] - mean) * s;
                xhat.data[r * d + c] = h;
                out.data[r * d + c] = h * gv.data[c] + bv.data[c];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        self.push(out, Op::Softmax(x))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.push(out, Op::LogSoftmax(x))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        self.push(out, Op::Transpose(x))
    }

    pub fn col_slice(&mut self, x: Var, start: usize, width: usize, module: &str) -> Result<Var, NnError> {
        let xv = self.value(x);
        self.shape_check(start + width <= xv.cols, module, || {
            format!("columns {start}..{} of width {}", start + width, xv.cols)
        })?;
        let mut out = Mat::zeros(xv.rows, width);
        for r in 0..xv.rows {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..start + width]);
        }
        Ok(self.push(out, Op::ColSlice(x, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var], module: &str) -> Result<Var, NnError> {
        let rows = self.value(parts[0]).rows;
        self.shape_check(parts.iter().all(|&p| self.value(p).rows == rows), module, || {
            "concatenating blocks with different row counts".into()
        })?;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for &p in parts {
                let pv = self.value(p);
                out.row_mut(r)[c0..c0 + pv.cols].copy_from_slice(pv.row(r));
                c0 += pv.cols;
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize, module: &str) -> Result<Var, NnError> {
        let xv = self.value(x);
        self.shape_check(xv.len() == rows * cols, module, || {
            format!("reshape {:?} to {rows}x{cols}", xv.shape())
        })?;
        let out = Mat::from_vec(rows, cols, xv.data.clone());
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Unfolds convolution patches: output row `oh·W′ + ow` holds the
    /// `kernel² · channels` inputs it sees, tap-major, zero where padded.
    pub fn im2col(&mut self, x: Var, geom: ConvGeom, module: &str) -> Result<Var, NnError> {
        let xv = self.value(x);
        self.shape_check(
            xv.rows == geom.height * geom.width && xv.cols == geom.channels,
            module,
            || format!("input {:?} for {}x{} grid with {} channels", xv.shape(), geom.height, geom.width, geom.channels),
        )?;
        let (oh_n, ow_n) = (geom.out_height(), geom.out_width());
        self.shape_check(oh_n > 0 && ow_n > 0, module, || {
            format!("{}x{} grid too small for kernel {}", geom.height, geom.width, geom.kernel)
        })?;
        let c = geom.channels;
        let k = geom.kernel;
        let mut out = Mat::zeros(oh_n * ow_n, k * k * c);
        for oh in 0..oh_n {
            for ow in 0..ow_n {
                let orow = out.row_mut(oh * ow_n + ow);
                for ki in 0..k {
                    for kj in 0..k {
                        if let Some(src) = geom.source(oh, ow, ki, kj) {
                            let dst = (ki * k + kj) * c;
                            orow[dst..dst + c].copy_from_slice(xv.row(src));
                        }
                    }
                }
            }
        }
        Ok(self.push(out, Op::Im2Col(x, geom)))
    }

    /// Per-channel convolution along rows (time) with `K × C` taps and
    /// `⌊(K−1)/2⌋` leading zeros, so the output keeps the input length.
    pub fn depthwise_conv(&mut self, x: Var, w: Var, b: Var, module: &str) -> Result<Var, NnError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let c = xv.cols;
        self.shape_check(wv.cols == c && bv.shape() == (1, c), module, || {
            format!("depthwise kernel {:?}, bias {:?} for {c} channels", wv.shape(), bv.shape())
        })?;
        let (t_len, k) = (xv.rows, wv.rows);
        let left = (k - 1) / 2;
        let mut out = Mat::zeros(t_len, c);
        for t in 0..t_len {
            let orow = &mut out.data[t * c..(t + 1) * c];
            orow.copy_from_slice(&bv.data);
            for tap in 0..k {
                let Some(src) = (t + tap).checked_sub(left).filter(|&s| s < t_len) else {
                    continue;
                };
                let (xrow, wrow) = (xv.row(src), wv.row(tap));
                for ch in 0..c {
                    orow[ch] += wrow[ch] * xrow[ch];
                }
            }
        }
        Ok(self.push(out, Op::DepthwiseConv { x, w, b }))
    }

    /// Multiplies by a fixed mask (already scaled by the keep probability).
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let xv = self.value(x);
        let data = xv.data.iter().zip(&mask).map(|(a, m)| a * m).collect();
        let out = Mat::from_vec(xv.rows, xv.cols, data);
        self.push(out, Op::Dropout(x, mask))
    }

    /// Propagates `seed = ∂L/∂output` back through the tape and adds
    /// parameter gradients into `param_grads[id]`.
    pub fn backward(&self, output: Var, seed: &Mat, param_grads: &mut [Mat]) -> Result<(), NnError> {
        if output.0 >= self.nodes.len() {
            return Err(NnError::State("backward called before forward".into()));
        }
        if self.value(output).shape() != seed.shape() {
            return Err(NnError::Shape {
                module: "backward".into(),
                msg: format!("seed {:?} for output {:?}", seed.shape(), self.value(output).shape()),
            });
        }
        let mut grads: Vec<Option<Mat>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(seed.clone());
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    let slot = param_grads.get_mut(*id).ok_or_else(|| {
                        NnError::State(format!("no gradient slot for parameter {id}"))
                    })?;
                    slot.add_assign(&g);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    matmul_nt_acc(&g, bv, acc(&mut grads, *a, av));
                    matmul_tn_acc(av, &g, acc(&mut grads, *b, bv));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, &g).add_assign(&g);
                    acc(&mut grads, *b, &g).add_assign(&g);
                }
                Op::AddRow(x, bias) => {
                    acc(&mut grads, *x, &g).add_assign(&g);
                    let gb = acc(&mut grads, *bias, self.value(*bias));
                    for r in 0..g.rows {
                        for (o, v) in gb.data.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                Op::Scale(x, k) => {
                    let gx = acc(&mut grads, *x, &g);
                    for (o, v) in gx.data.iter_mut().zip(&g.data) {
                        *o += k * v;
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = acc(&mut grads, *a, av);
                    for ((o, gv), y) in ga.data.iter_mut().zip(&g.data).zip(&bv.data) {
                        *o += gv * y;
                    }
                    let gb = acc(&mut grads, *b, bv);
                    for ((o, gv), y) in gb.data.iter_mut().zip(&g.data).zip(&av.data) {
                        *o += gv * y;
                    }
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let gx = acc(&mut grads, *x, y);
                    for ((o, gv), s) in gx.data.iter_mut().zip(&g.data).zip(&y.data) {
                        *o += gv * s * (1.0 - s);
                    }
                }
                Op::Swish(x) => {
                    let xv = self.value(*x);
                    let gx = acc(&mut grads, *x, xv);
                    for ((o, gv), &v) in gx.data.iter_mut().zip(&g.data).zip(&xv.data) {
                        let s = sigmoid(v);
                        *o += gv * (s + v * s * (1.0 - s));
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let gx = acc(&mut grads, *x, xv);
                    for ((o, gv), &v) in gx.data.iter_mut().zip(&g.data).zip(&xv.data) {
                        if v > 0.0 {
                            *o += gv;
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let d = xhat.cols;
                    let gv = self.value(*gamma).data.clone();
                    {
                        let gg = acc(&mut grads, *gamma, self.value(*gamma));
                        for r in 0..g.rows {
                            for c in 0..d {
                                gg.data[c] += g.get(r, c) * xhat.get(r, c);
                            }
                        }
                    }
                    {
                        let gb = acc(&mut grads, *beta, self.value(*beta));
                        for r in 0..g.rows {
                            for (o, v) in gb.data.iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                    }
                    let gx = acc(&mut grads, *x, xhat);
                    let mut gh = vec![0.0; d];
                    for r in 0..g.rows {
                        let hrow = xhat.row(r);
                        for c in 0..d {
                            gh[c] = g.get(r, c) * gv[c];
                        }
                        let mean_g = gh.iter().sum::<f64>() / d as f64;
                        let mean_gh = gh.iter().zip(hrow).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        let orow = gx.row_mut(r);
                        for c in 0..d {
                            orow[c] += rstd[r] * (gh[c] - mean_g - hrow[c] * mean_gh);
                        }
                    }
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let gx = acc(&mut grads, *x, y);
                    for r in 0..y.rows {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        let (grow, yrow) = (g.row(r), y.row(r));
                        for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                            *o += yrow[c] * (grow[c] - dot);
                        }
                    }
                }
                Op::LogSoftmax(x) => {
                    let y = &node.value;
                    let gx = acc(&mut grads, *x, y);
                    for r in 0..y.rows {
                        let total: f64 = g.row(r).iter().sum();
                        let (grow, yrow) = (g.row(r), y.row(r));
                        for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                            *o += grow[c] - yrow[c].exp() * total;
                        }
                    }
                }
                Op::Transpose(x) => {
                    let gt = g.transpose();
                    acc(&mut grads, *x, &gt).add_assign(&gt);
                }
                Op::ColSlice(x, start) => {
                    let gx = acc(&mut grads, *x, self.value(*x));
                    for r in 0..g.rows {
                        for (o, v) in gx.row_mut(r)[*start..*start + g.cols].iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let gp = acc(&mut grads, p, self.value(p));
                        for r in 0..g.rows {
                            for (o, v) in gp.row_mut(r).iter_mut().zip(&g.row(r)[c0..c0 + w]) {
                                *o += v;
                            }
                        }
                        c0 += w;
                    }
                }
                Op::Reshape(x) => {
                    let gx = acc(&mut grads, *x, self.value(*x));
                    for (o, v) in gx.data.iter_mut().zip(&g.data) {
                        *o += v;
                    }
                }
                Op::Im2Col(x, geom) => {
                    let gx = acc(&mut grads, *x, self.value(*x));
                    let (c, k, ow_n) = (geom.channels, geom.kernel, geom.out_width());
                    for oh in 0..geom.out_height() {
                        for ow in 0..ow_n {
                            let grow = g.row(oh * ow_n + ow);
                            for ki in 0..k {
                                for kj in 0..k {
                                    if let Some(src) = geom.source(oh, ow, ki, kj) {
                                        let s = (ki * k + kj) * c;
                                        for (o, v) in gx.row_mut(src).iter_mut().zip(&grow[s..s + c]) {
                                            *o += v;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::DepthwiseConv { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (t_len, c, k) = (xv.rows, xv.cols, wv.rows);
                    let left = (k - 1) / 2;
                    {
                        let gb = acc(&mut grads, *b, self.value(*b));
                        for t in 0..t_len {
                            for (o, v) in gb.data.iter_mut().zip(g.row(t)) {
                                *o += v;
                            }
                        }
                    }
                    let mut gw = Mat::zeros(k, c);
                    let mut gx = Mat::zeros(t_len, c);
                    for t in 0..t_len {
                        let grow = g.row(t);
                        for tap in 0..k {
                            let Some(src) = (t + tap).checked_sub(left).filter(|&s| s < t_len) else {
                                continue;
                            };
                            for ch in 0..c {
                                gw.data[tap * c + ch] += grow[ch] * xv.data[src * c + ch];
                                gx.data[src * c + ch] += grow[ch] * wv.data[tap * c + ch];
                            }
                        }
                    }
                    acc(&mut grads, *w, wv).add_assign(&gw);
                    acc(&mut grads, *x, xv).add_assign(&gx);
                }
                Op::Dropout(x, mask) => {
                    let gx = acc(&mut grads, *x, self.value(*x));
                    for ((o, v), m) in gx.data.iter_mut().zip(&g.data).zip(mask) {
                        *o += v * m;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Gradient buffer for `v`, created with the shape of `like` on first use.
fn acc<'a>(grads: &'a mut [Option<Mat>], v: Var, like: &Mat) -> &'a mut Mat {
    grads[v.0].get_or_insert_with(|| Mat::zeros(like.rows, like.cols))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let mut tape = Tape::new();
        let x = tape.input(Mat::from_vec(1, 3, vec![1.0, -2.0, 0.5]));
        let w = tape.param(0, Mat::from_vec(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]));
        let b = tape.param(1, Mat::zeros(1, 2));
        let y = tape.matmul(x, w, "t").unwrap();
        let y = tape.add_row(y, b, "t").unwrap();
        let seed = Mat::from_vec(1, 2, vec![2.0, -1.0]);
        let mut grads = vec![Mat::zeros(3, 2), Mat::zeros(1, 2)];
        tape.backward(y, &seed, &mut grads).unwrap();
        assert_eq!(grads[0].data, vec![2.0, -1.0, -4.0, 2.0, 1.0, -0.5]);
        assert_eq!(grads[1].data, vec![2.0, -1.0]);
    }

    #[test]
    fn zero_seed_gives_zero_gradients() {
        let mut tape = Tape::new();
        let x = tape.input(Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let w = tape.param(0, Mat::from_vec(2, 2, vec![1.0, -1.0, 0.5, 2.0]));
        let y = tape.matmul(x, w, "t").unwrap();
        let y = tape.swish(y);
        let y = tape.log_softmax(y);
        let mut grads = vec![Mat::zeros(2, 2)];
        tape.backward(y, &Mat::zeros(2, 2), &mut grads).unwrap();
        assert!(grads[0].data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn errors() {
        let tape = Tape::new();
        let mut grads = vec![];
        assert!(matches!(
            tape.backward(Var(0), &Mat::zeros(1, 1), &mut grads),
            Err(NnError::State(_))
        ));
        let mut tape = Tape::new();
        let a = tape.input(Mat::zeros(2, 3));
        let b = tape.input(Mat::zeros(2, 3));
        match tape.matmul(a, b, "block0.ffn1") {
            Err(NnError::Shape { module, .. }) => assert_eq!(module, "block0.ffn1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn conv_output_lengths() {
        assert_eq!(ConvGeom::out_len(100, 3, 2, 1), 50);
        assert_eq!(ConvGeom::out_len(50, 3, 2, 1), 25);
        assert_eq!(ConvGeom::out_len(1, 3, 2, 1), 1);
    }
}
