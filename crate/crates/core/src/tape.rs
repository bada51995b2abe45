//! Reverse-mode automatic differentiation over `ndarray` values.
//!
//! A [`Tape`] records a forward computation as a flat list of nodes; calling
//! [`Tape::backward`] walks the list in reverse and accumulates gradients
//! into every node that transitively depends on a [`Tape::leaf`]. Constants
//! never receive gradients, which is how frozen model weights are kept out
//! of the update path.
//!
//! Everything is `f64`; gradient correctness is pinned by central
//! finite-difference tests (see `tests/grad_check.rs`).

use ndarray::{Array1, Array2, ArrayD, Axis, Ix1, Ix2, Ix3, Ix4};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    /// matrix + row vector broadcast over rows
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    PowConst(Var, f64),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    Transpose(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var, f64),
    Gelu(Var),
    Silu(Var),
    Tanh(Var),
    Ln(Var),
    MeanAll(Var),
    SumAll(Var),
    /// T x d -> 1 x d column means
    MeanRows(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
    },
    /// x * (1 + scale[c]) + shift[c] per channel of a (C,H,W) tensor
    Film {
        x: Var,
        scale: Var,
        shift: Var,
    },
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation graph.
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    /// Gradient of the objective w.r.t. `v`, zero-shaped if `v` was unused.
    pub fn get(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.grads[v.0].as_ref()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Leaf => true,
            Op::Constant => false,
            other => self.parents_of(other).iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn parents_of(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf | Op::Constant => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::AddRow(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::PowConst(a, _)
            | Op::SliceRows(a, _, _)
            | Op::SliceCols(a, _, _)
            | Op::Transpose(a)
            | Op::SoftmaxRows(a)
            | Op::LayerNormRows(a, _)
            | Op::Gelu(a)
            | Op::Silu(a)
            | Op::Tanh(a)
            | Op::Ln(a)
            | Op::MeanAll(a)
            | Op::SumAll(a)
            | Op::MeanRows(a) => vec![*a],
            Op::ConcatRows(vs) => vs.clone(),
            Op::Conv2d { input, kernel, bias } => vec![*input, *kernel, *bias],
            Op::Film { x, scale, shift } => vec![*x, *scale, *shift],
        }
    }

    /// Trainable input; receives a gradient.
    pub fn leaf(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Frozen input; never receives a gradient.
    pub fn constant(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn constant2(&mut self, value: Array2<f64>) -> Var {
        self.constant(value.into_dyn())
    }

    pub fn leaf2(&mut self, value: Array2<f64>) -> Var {
        self.leaf(value.into_dyn())
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    pub fn value2(&self, v: Var) -> Array2<f64> {
        self.nodes[v.0]
            .value
            .clone()
            .into_dimensionality::<Ix2>()
            .expect("expected a 2-d value")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = &self.nodes[v.0].value;
        assert_eq!(val.len(), 1, "expected a scalar node");
        *val.iter().next().unwrap()
    }

    fn v2(&self, v: Var) -> ndarray::ArrayView2<'_, f64> {
        self.nodes[v.0]
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("expected a 2-d value")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.v2(a).dot(&self.v2(b));
        self.push(out.into_dyn(), Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(out, Op::Add(a, b))
    }

    /// `a` is (T, d), `row` is (1, d); the row is added to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let m = self.v2(a);
        let r = self.v2(row);
        assert_eq!(r.nrows(), 1, "bias must be a single row");
        let out = &m + &r.row(0);
        self.push(out.into_dyn(), Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = &self.nodes[a.0].value * c;
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = &self.nodes[a.0].value + c;
        self.push(out, Op::AddScalar(a))
    }

    pub fn pow_const(&mut self, a: Var, p: f64) -> Var {
        let out = self.nodes[a.0].value.mapv(|x| x.powf(p));
        self.push(out, Op::PowConst(a, p))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|v| self.v2(*v)).collect();
        let out = ndarray::concatenate(
            Axis(0),
            &views.iter().map(|v| v.view()).collect::<Vec<_>>(),
        )
        .expect("row concat shape mismatch");
        self.push(out.into_dyn(), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.v2(a).slice(ndarray::s![start..end, ..]).to_owned();
        self.push(out.into_dyn(), Op::SliceRows(a, start, end))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.v2(a).slice(ndarray::s![.., start..end]).to_owned();
        self.push(out.into_dyn(), Op::SliceCols(a, start, end))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.v2(a).t().to_owned();
        self.push(out.into_dyn(), Op::Transpose(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let m = self.v2(a);
        let mut out = m.to_owned();
        for mut row in out.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(out.into_dyn(), Op::SoftmaxRows(a))
    }

    /// Per-row layer normalization without affine parameters.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let m = self.v2(a);
        let mut out = m.to_owned();
        for mut row in out.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|x| (x - mean) * inv);
        }
        self.push(out.into_dyn(), Op::LayerNormRows(a, eps))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.mapv(gelu);
        self.push(out, Op::Gelu(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.mapv(|x| x * sigmoid(x));
        self.push(out, Op::Silu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    /// Natural log, elementwise; inputs must be positive.
    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.mapv(f64::ln);
        self.push(out, Op::Ln(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let mean = v.sum() / v.len() as f64;
        self.push(ArrayD::from_elem(vec![1], mean), Op::MeanAll(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let sum = self.nodes[a.0].value.sum();
        self.push(ArrayD::from_elem(vec![1], sum), Op::SumAll(a))
    }

    /// Column means of a (T, d) matrix, returned as (1, d).
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let m = self.v2(a);
        let t = m.nrows() as f64;
        let mean = m.sum_axis(Axis(0)) / t;
        let out = mean.insert_axis(Axis(0));
        self.push(out.into_dyn(), Op::MeanRows(a))
    }

    /// Same-padded stride-1 convolution of a (Cin,H,W) input with a
    /// (Cout,Cin,kh,kw) kernel (kh, kw odd) and a (Cout,) bias.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Var {
        let x = self.nodes[input.0]
            .value
            .view()
            .into_dimensionality::<Ix3>()
            .expect("conv input must be (C,H,W)");
        let k = self.nodes[kernel.0]
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv kernel must be (Cout,Cin,kh,kw)");
        let b = self.nodes[bias.0]
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .expect("conv bias must be (Cout,)");
        let out = conv2d_forward(&x.to_owned(), &k.to_owned(), &b.to_owned());
        self.push(out.into_dyn(), Op::Conv2d { input, kernel, bias })
    }

    /// Feature-wise affine modulation: `x[c] * (1 + scale[c]) + shift[c]`.
    /// `x` is (C,H,W); `scale` and `shift` are (1,C).
    pub fn film(&mut self, x: Var, scale: Var, shift: Var) -> Var {
        let xv = self.nodes[x.0]
            .value
            .view()
            .into_dimensionality::<Ix3>()
            .expect("film input must be (C,H,W)");
        let s = self.v2(scale);
        let h = self.v2(shift);
        let c = xv.shape()[0];
        assert_eq!(s.ncols(), c);
        assert_eq!(h.ncols(), c);
        let mut out = xv.to_owned();
        for ch in 0..c {
            let gain = 1.0 + s[[0, ch]];
            let off = h[[0, ch]];
            out.index_axis_mut(Axis(0), ch).mapv_inplace(|v| v * gain + off);
        }
        self.push(out.into_dyn(), Op::Film { x, scale, shift })
    }

    /// MSE between a node and a constant target of the same shape.
    pub fn mse_against(&mut self, pred: Var, target: &ArrayD<f64>) -> Var {
        let t = self.constant(target.clone());
        let d = self.sub(pred, t);
        let sq = self.mul(d, d);
        self.mean_all(sq)
    }

    /// Backpropagate from a scalar node, seeding its gradient with one.
    pub fn backward(&mut self, root: Var) -> Gradients {
        let seed = ArrayD::from_elem(self.nodes[root.0].value.raw_dim(), 1.0);
        self.backward_with_seed(root, seed)
    }

    /// Backpropagate with an explicit output cotangent (VJP).
    pub fn backward_with_seed(&mut self, root: Var, seed: ArrayD<f64>) -> Gradients {
        assert_eq!(
            seed.shape(),
            self.nodes[root.0].value.shape(),
            "seed shape must match the root value"
        );
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(seed);

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, idx: usize, g: &ArrayD<f64>, grads: &mut [Option<ArrayD<f64>>]) {
        let op = self.nodes[idx].op.clone();
        let add_to = |grads: &mut [Option<ArrayD<f64>>], v: Var, delta: ArrayD<f64>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => *acc += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let av = self.v2(a);
                let bv = self.v2(b);
                add_to(grads, a, g2.dot(&bv.t()).into_dyn());
                add_to(grads, b, av.t().dot(&g2).into_dyn());
            }
            Op::Add(a, b) => {
                add_to(grads, a, g.clone());
                add_to(grads, b, g.clone());
            }
            Op::AddRow(a, row) => {
                add_to(grads, a, g.clone());
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let summed = g2.sum_axis(Axis(0)).insert_axis(Axis(0));
                add_to(grads, row, summed.into_dyn());
            }
            Op::Sub(a, b) => {
                add_to(grads, a, g.clone());
                add_to(grads, b, -g.clone());
            }
            Op::Mul(a, b) => {
                add_to(grads, a, g * &self.nodes[b.0].value);
                add_to(grads, b, g * &self.nodes[a.0].value);
            }
            Op::Scale(a, c) => add_to(grads, a, g * c),
            Op::AddScalar(a) => add_to(grads, a, g.clone()),
            Op::PowConst(a, p) => {
                let da = self.nodes[a.0].value.mapv(|x| p * x.powf(p - 1.0));
                add_to(grads, a, g * &da);
            }
            Op::ConcatRows(parts) => {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let mut start = 0;
                for part in parts {
                    let rows = self.v2(part).nrows();
                    let block = g2.slice(ndarray::s![start..start + rows, ..]).to_owned();
                    add_to(grads, part, block.into_dyn());
                    start += rows;
                }
            }
            Op::SliceRows(a, s, e) => {
                let mut da = Array2::<f64>::zeros((self.v2(a).nrows(), self.v2(a).ncols()));
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                da.slice_mut(ndarray::s![s..e, ..]).assign(&g2);
                add_to(grads, a, da.into_dyn());
            }
            Op::SliceCols(a, s, e) => {
                let mut da = Array2::<f64>::zeros((self.v2(a).nrows(), self.v2(a).ncols()));
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                da.slice_mut(ndarray::s![.., s..e]).assign(&g2);
                add_to(grads, a, da.into_dyn());
            }
            Op::Transpose(a) => {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                add_to(grads, a, g2.t().to_owned().into_dyn());
            }
            Op::SoftmaxRows(a) => {
                let y = self.v2(Var(idx));
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let mut da = Array2::<f64>::zeros((y.nrows(), y.ncols()));
                for r in 0..y.nrows() {
                    let yr = y.row(r);
                    let gr = g2.row(r);
                    let dot: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                    for c in 0..y.ncols() {
                        da[[r, c]] = yr[c] * (gr[c] - dot);
                    }
                }
                add_to(grads, a, da.into_dyn());
            }
            Op::LayerNormRows(a, eps) => {
                let x = self.v2(a);
                let y = self.v2(Var(idx));
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let n = x.ncols() as f64;
                let mut da = Array2::<f64>::zeros((x.nrows(), x.ncols()));
                for r in 0..x.nrows() {
                    let xr = x.row(r);
                    let mean = xr.sum() / n;
                    let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    let inv = 1.0 / (var + eps).sqrt();
                    let gr = g2.row(r);
                    let yr = y.row(r);
                    let g_mean = gr.sum() / n;
                    let gy_mean = gr.iter().zip(yr.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                    for c in 0..x.ncols() {
                        da[[r, c]] = inv * (gr[c] - g_mean - yr[c] * gy_mean);
                    }
                }
                add_to(grads, a, da.into_dyn());
            }
            Op::Gelu(a) => {
                let da = self.nodes[a.0].value.mapv(gelu_prime);
                add_to(grads, a, g * &da);
            }
            Op::Silu(a) => {
                let da = self.nodes[a.0].value.mapv(|x| {
                    let s = sigmoid(x);
                    s * (1.0 + x * (1.0 - s))
                });
                add_to(grads, a, g * &da);
            }
            Op::Tanh(a) => {
                let y = &self.nodes[idx].value;
                let da = y.mapv(|t| 1.0 - t * t);
                add_to(grads, a, g * &da);
            }
            Op::Ln(a) => {
                let da = self.nodes[a.0].value.mapv(|x| 1.0 / x);
                add_to(grads, a, g * &da);
            }
            Op::MeanAll(a) => {
                let n = self.nodes[a.0].value.len() as f64;
                let gs = g.iter().next().copied().unwrap_or(0.0);
                let da = ArrayD::from_elem(self.nodes[a.0].value.raw_dim(), gs / n);
                add_to(grads, a, da);
            }
            Op::SumAll(a) => {
                let gs = g.iter().next().copied().unwrap_or(0.0);
                let da = ArrayD::from_elem(self.nodes[a.0].value.raw_dim(), gs);
                add_to(grads, a, da);
            }
            Op::MeanRows(a) => {
                let t = self.v2(a).nrows();
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let row = g2.row(0).to_owned() / t as f64;
                let mut da = Array2::<f64>::zeros((t, row.len()));
                for mut r in da.rows_mut() {
                    r.assign(&row);
                }
                add_to(grads, a, da.into_dyn());
            }
            Op::Conv2d { input, kernel, bias } => {
                let x = self.nodes[input.0]
                    .value
                    .view()
                    .into_dimensionality::<Ix3>()
                    .unwrap()
                    .to_owned();
                let k = self.nodes[kernel.0]
                    .value
                    .view()
                    .into_dimensionality::<Ix4>()
                    .unwrap()
                    .to_owned();
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap().to_owned();
                let (dx, dk, db) = conv2d_backward(&x, &k, &g3);
                add_to(grads, input, dx.into_dyn());
                add_to(grads, kernel, dk.into_dyn());
                add_to(grads, bias, db.into_dyn());
            }
            Op::Film { x, scale, shift } => {
                let xv = self.nodes[x.0]
                    .value
                    .view()
                    .into_dimensionality::<Ix3>()
                    .unwrap();
                let s = self.v2(scale);
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let c = xv.shape()[0];
                let mut dx = xv.to_owned();
                let mut ds = Array2::<f64>::zeros((1, c));
                let mut dh = Array2::<f64>::zeros((1, c));
                for ch in 0..c {
                    let gain = 1.0 + s[[0, ch]];
                    let gch = g3.index_axis(Axis(0), ch);
                    let xch = xv.index_axis(Axis(0), ch);
                    dx.index_axis_mut(Axis(0), ch).assign(&(&gch * gain));
                    ds[[0, ch]] = (&gch * &xch).sum();
                    dh[[0, ch]] = gch.sum();
                }
                add_to(grads, x, dx.into_dyn());
                add_to(grads, scale, ds.into_dyn());
                add_to(grads, shift, dh.into_dyn());
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub(crate) fn conv2d_forward(
    x: &ndarray::Array3<f64>,
    k: &ndarray::Array4<f64>,
    b: &Array1<f64>,
) -> ndarray::Array3<f64> {
    let (cin, h, w) = x.dim();
    let (cout, kcin, kh, kw) = k.dim();
    assert_eq!(cin, kcin, "conv channel mismatch");
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = ndarray::Array3::<f64>::zeros((cout, h, w));
    for o in 0..cout {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = b[o];
                for c in 0..cin {
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let iy = y as isize + dy as isize - ph as isize;
                            let ix = xx as isize + dx as isize - pw as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                acc += x[[c, iy as usize, ix as usize]] * k[[o, c, dy, dx]];
                            }
                        }
                    }
                }
                out[[o, y, xx]] = acc;
            }
        }
    }
    out
}

#[allow(clippy::type_complexity)]
fn conv2d_backward(
    x: &ndarray::Array3<f64>,
    k: &ndarray::Array4<f64>,
    g: &ndarray::Array3<f64>,
) -> (ndarray::Array3<f64>, ndarray::Array4<f64>, Array1<f64>) {
    let (cin, h, w) = x.dim();
    let (cout, _, kh, kw) = k.dim();
    let (ph, pw) = (kh / 2, kw / 2);
    let mut dx = ndarray::Array3::<f64>::zeros((cin, h, w));
    let mut dk = ndarray::Array4::<f64>::zeros(k.dim());
    let mut db = Array1::<f64>::zeros(cout);
    for o in 0..cout {
        for y in 0..h {
            for xx in 0..w {
                let go = g[[o, y, xx]];
                db[o] += go;
                for c in 0..cin {
                    for dy in 0..kh {
                        for dxk in 0..kw {
                            let iy = y as isize + dy as isize - ph as isize;
                            let ix = xx as isize + dxk as isize - pw as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                dx[[c, iy as usize, ix as usize]] += go * k[[o, c, dy, dxk]];
                                dk[[o, c, dy, dxk]] += go * x[[c, iy as usize, ix as usize]];
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dk, db)
}
