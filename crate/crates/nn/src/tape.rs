//! Reverse-mode tape. A [`Tape`] borrows the parameter store read-only, so
//! independent forward passes can run concurrently against one model; the
//! gradients of each pass come back as an owned [`Gradients`] value.

use crate::conv::{conv_out_len, conv_transpose_out_len, gemm, Sweep};
use crate::error::{NnError, Result};
use crate::param::{Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        sweep: Sweep,
        out_ch: usize,
    },
    ConvTranspose {
        x: Var,
        w: Var,
        b: Option<Var>,
        sweep: Sweep,
        in_ch: usize,
    },
    Concat(Vec<Var>),
    Slice {
        x: Var,
        offset: usize,
    },
    Reshape(Var),
    Broadcast {
        x: Var,
        plane: usize,
    },
    Mse {
        x: Var,
        target: Tensor,
    },
    Sum(Var),
}

struct Node {
    value: Option<Tensor>,
    op: Op,
}

pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => &self.store.get(*id).value,
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    /// Records a parameter; repeated calls return the same handle so gradients
    /// from every use accumulate on one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    fn same_dims(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (da, db) = (self.value(a).dims(), self.value(b).dims());
        if da != db {
            return Err(NnError::shape(op, format!("{da:?} vs {db:?}")));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let tb = self.value(b);
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(ta.dims().to_vec(), data).expect("dims preserved");
        self.push(t, op)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| f(*x)).collect();
        let t = Tensor::new(ta.dims().to_vec(), data).expect("dims preserved");
        self.push(t, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dims("add", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dims("sub", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dims("mul", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.map(a, |x| x * factor, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// `x` for positive inputs, `slope · x` otherwise.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.map(a, |x| if x > 0.0 { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    /// `w · x + b` with `w: [m, n]`, `x` holding `n` values, `b: [m]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let tw = self.value(w);
        let tx = self.value(x);
        if tw.dims().len() != 2 || tw.dims()[1] != tx.len() {
            return Err(NnError::shape(
                "linear",
                format!("weight {:?} cannot multiply input of {} values", tw.dims(), tx.len()),
            ));
        }
        let (m, n) = (tw.dims()[0], tw.dims()[1]);
        let mut out = match b {
            Some(b) => {
                let tb = self.value(b);
                if tb.dims() != [m] {
                    return Err(NnError::shape(
                        "linear",
                        format!("bias {:?} does not match {m} outputs", tb.dims()),
                    ));
                }
                tb.data().to_vec()
            }
            None => vec![0.0; m],
        };
        let xs = tx.data();
        for (o, row) in out.iter_mut().zip(tw.data().chunks_exact(n)) {
            *o += row.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(self.push(Tensor::vector(out), Op::Linear { x, w, b }))
    }

    fn conv_bias(&self, op: &str, b: Option<Var>, channels: usize) -> Result<()> {
        if let Some(b) = b {
            let d = self.value(b).dims();
            if d != [channels] {
                return Err(NnError::shape(
                    op,
                    format!("bias {d:?} does not match {channels} channels"),
                ));
            }
        }
        Ok(())
    }

    fn add_channel_bias(&self, out: &mut [f64], b: Option<Var>, plane: usize) {
        if let Some(b) = b {
            for (chunk, bias) in out.chunks_exact_mut(plane).zip(self.value(b).data()) {
                chunk.iter_mut().for_each(|v| *v += bias);
            }
        }
    }

    /// 2-D convolution of `x: [C, H, W]` with `w: [O, C, k, k]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (xd, wd) = (tx.dims(), tw.dims());
        if xd.len() != 3 || wd.len() != 4 || wd[2] != wd[3] || wd[1] != xd[0] || stride == 0 {
            return Err(NnError::shape(
                "conv2d",
                format!("input {xd:?} incompatible with weight {wd:?} at stride {stride}"),
            ));
        }
        let (c, h, wid) = (xd[0], xd[1], xd[2]);
        let (o, k) = (wd[0], wd[2]);
        let (oh, ow) = match (
            conv_out_len(h, k, stride, padding),
            conv_out_len(wid, k, stride, padding),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(NnError::shape(
                    "conv2d",
                    format!("kernel {k} larger than padded input {h}x{wid}"),
                ))
            }
        };
        self.conv_bias("conv2d", b, o)?;
        let sweep = Sweep {
            channels: c,
            height: h,
            width: wid,
            kernel: k,
            stride,
            padding,
            out_h: oh,
            out_w: ow,
        };
        let cols = sweep.im2col(tx.data());
        let p = sweep.positions();
        let mut out = vec![0.0; o * p];
        gemm(o, sweep.rows(), p, tw.data(), false, &cols, false, 0.0, &mut out);
        self.add_channel_bias(&mut out, b, p);
        let t = Tensor::new(vec![o, oh, ow], out).expect("conv output dims");
        Ok(self.push(
            t,
            Op::Conv {
                x,
                w,
                b,
                sweep,
                out_ch: o,
            },
        ))
    }

    /// Transposed 2-D convolution of `x: [C, H, W]` with `w: [C, O, k, k]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        output_padding: (usize, usize),
    ) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (xd, wd) = (tx.dims(), tw.dims());
        if xd.len() != 3 || wd.len() != 4 || wd[2] != wd[3] || wd[0] != xd[0] || stride == 0 {
            return Err(NnError::shape(
                "conv_transpose2d",
                format!("input {xd:?} incompatible with weight {wd:?} at stride {stride}"),
            ));
        }
        if output_padding.0 >= stride || output_padding.1 >= stride {
            return Err(NnError::shape(
                "conv_transpose2d",
                format!("output padding {output_padding:?} must be below stride {stride}"),
            ));
        }
        let (c, h, wid) = (xd[0], xd[1], xd[2]);
        let (o, k) = (wd[1], wd[2]);
        let (oh, ow) = match (
            conv_transpose_out_len(h, k, stride, padding, output_padding.0),
            conv_transpose_out_len(wid, k, stride, padding, output_padding.1),
        ) {
            (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
            _ => {
                return Err(NnError::shape(
                    "conv_transpose2d",
                    format!("padding {padding} too large for input {h}x{wid}"),
                ))
            }
        };
        self.conv_bias("conv_transpose2d", b, o)?;
        let sweep = Sweep {
            channels: o,
            height: oh,
            width: ow,
            kernel: k,
            stride,
            padding,
            out_h: h,
            out_w: wid,
        };
        debug_assert_eq!(conv_out_len(oh, k, stride, padding), Some(h));
        let p = sweep.positions();
        let mut cols = vec![0.0; sweep.rows() * p];
        gemm(sweep.rows(), c, p, tw.data(), true, tx.data(), false, 0.0, &mut cols);
        let mut out = vec![0.0; o * oh * ow];
        sweep.col2im(&cols, &mut out);
        self.add_channel_bias(&mut out, b, oh * ow);
        let t = Tensor::new(vec![o, oh, ow], out).expect("transposed conv output dims");
        Ok(self.push(
            t,
            Op::ConvTranspose {
                x,
                w,
                b,
                sweep,
                in_ch: c,
            },
        ))
    }

    /// Concatenates along the leading dimension; trailing dims must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| NnError::InvalidInput("concat of zero tensors".into()))?;
        let tail: Vec<usize> = self.value(*first).dims()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.dims()[1..] != tail[..] {
                return Err(NnError::shape(
                    "concat",
                    format!("trailing dims {:?} vs {:?}", &t.dims()[1..], tail),
                ));
            }
            lead += t.dims()[0];
            data.extend_from_slice(t.data());
        }
        let mut dims = vec![lead];
        dims.extend(tail);
        let t = Tensor::new(dims, data).expect("concat dims");
        Ok(self.push(t, Op::Concat(parts.to_vec())))
    }

    /// Takes `len` entries of the leading dimension starting at `start`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let lead = t.dims()[0];
        if start + len > lead || len == 0 {
            return Err(NnError::shape(
                "slice",
                format!("range {start}..{} outside leading dim {lead}", start + len),
            ));
        }
        let inner: usize = t.dims()[1..].iter().product();
        let data = t.data()[start * inner..(start + len) * inner].to_vec();
        let mut dims = t.dims().to_vec();
        dims[0] = len;
        let t = Tensor::new(dims, data).expect("slice dims");
        Ok(self.push(
            t,
            Op::Slice {
                x,
                offset: start * inner,
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(dims)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Repeats a `[C]` vector over an `h x w` grid, giving `[C, h, w]`.
    pub fn broadcast_spatial(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let t = self.value(x);
        if t.dims().len() != 1 {
            return Err(NnError::shape("broadcast", format!("expected a vector, got {:?}", t.dims())));
        }
        let c = t.len();
        let plane = h * w;
        let mut data = Vec::with_capacity(c * plane);
        for v in t.data() {
            data.extend(std::iter::repeat_n(*v, plane));
        }
        let t = Tensor::new(vec![c, h, w], data).expect("broadcast dims");
        Ok(self.push(t, Op::Broadcast { x, plane }))
    }

    /// Mean squared error against a constant target, as a scalar.
    pub fn mse(&mut self, x: Var, target: Tensor) -> Result<Var> {
        let t = self.value(x);
        if t.len() != target.len() || t.is_empty() {
            return Err(NnError::shape(
                "mse",
                format!("prediction {:?} vs target {:?}", t.dims(), target.dims()),
            ));
        }
        let n = t.len() as f64;
        let loss = t
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        Ok(self.push(Tensor::scalar(loss), Op::Mse { x, target }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Back-propagates from a scalar `loss`, returning the gradient of every
    /// parameter recorded on this tape. Parameters never reached stay `None`.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(NnError::State(
                "backward called before a forward pass recorded the loss".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(NnError::InvalidInput(format!(
                "loss must be a scalar, got dims {:?}",
                self.value(loss).dims()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients {
            per_param: vec![None; self.store.len()],
        };

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(id) => out.per_param[id.index()] = Some(g),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    let neg = map_tensor(&g, |v| -v);
                    accumulate(&mut grads, *b, neg);
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = zip_tensor(&g, self.value(*b), |x, y| x * y);
                    let gb = zip_tensor(&g, self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, f) => {
                    let f = *f;
                    accumulate(&mut grads, *a, map_tensor(&g, |v| v * f));
                }
                Op::Relu(a) => {
                    let gx = zip_tensor(&g, self.value(*a), |d, x| if x > 0.0 { d } else { 0.0 });
                    accumulate(&mut grads, *a, gx);
                }
                Op::LeakyRelu(a, slope) => {
                    let slope = *slope;
                    let gx = zip_tensor(&g, self.value(*a), |d, x| if x > 0.0 { d } else { slope * d });
                    accumulate(&mut grads, *a, gx);
                }
                Op::Sigmoid(a) => {
                    let y = self.nodes[i].value.as_ref().expect("sigmoid value");
                    let gx = zip_tensor(&g, y, |d, s| d * s * (1.0 - s));
                    accumulate(&mut grads, *a, gx);
                }
                Op::Tanh(a) => {
                    let y = self.nodes[i].value.as_ref().expect("tanh value");
                    let gx = zip_tensor(&g, y, |d, t| d * (1.0 - t * t));
                    accumulate(&mut grads, *a, gx);
                }
                Op::Linear { x, w, b } => {
                    let tw = self.value(*w);
                    let tx = self.value(*x);
                    let n = tw.dims()[1];
                    let gy = g.data();
                    let mut gx = vec![0.0; n];
                    for (row, d) in tw.data().chunks_exact(n).zip(gy) {
                        if *d != 0.0 {
                            gx.iter_mut().zip(row).for_each(|(a, w)| *a += d * w);
                        }
                    }
                    let gw = grads[w.0].get_or_insert_with(|| Tensor::zeros(tw.dims()));
                    for (row, d) in gw.data_mut().chunks_exact_mut(n).zip(gy) {
                        if *d != 0.0 {
                            row.iter_mut().zip(tx.data()).for_each(|(a, x)| *a += d * x);
                        }
                    }
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    let gx = Tensor::new(tx.dims().to_vec(), gx).expect("linear input dims");
                    accumulate(&mut grads, *x, gx);
                }
                Op::Conv {
                    x,
                    w,
                    b,
                    sweep,
                    out_ch,
                } => {
                    let tx = self.value(*x);
                    let tw = self.value(*w);
                    let p = sweep.positions();
                    let rows = sweep.rows();
                    let cols = sweep.im2col(tx.data());
                    let gw = grads[w.0].get_or_insert_with(|| Tensor::zeros(tw.dims()));
                    gemm(*out_ch, p, rows, g.data(), false, &cols, true, 1.0, gw.data_mut());
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, channel_sums(&g, *out_ch));
                    }
                    let mut dcols = cols;
                    gemm(rows, *out_ch, p, tw.data(), true, g.data(), false, 0.0, &mut dcols);
                    let mut gx = vec![0.0; tx.len()];
                    sweep.col2im(&dcols, &mut gx);
                    let gx = Tensor::new(tx.dims().to_vec(), gx).expect("conv input dims");
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConvTranspose {
                    x,
                    w,
                    b,
                    sweep,
                    in_ch,
                } => {
                    let tx = self.value(*x);
                    let tw = self.value(*w);
                    let p = sweep.positions();
                    let rows = sweep.rows();
                    let dcols = sweep.im2col(g.data());
                    let gw = grads[w.0].get_or_insert_with(|| Tensor::zeros(tw.dims()));
                    gemm(*in_ch, p, rows, tx.data(), false, &dcols, true, 1.0, gw.data_mut());
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, channel_sums(&g, sweep.channels));
                    }
                    let mut gx = vec![0.0; tx.len()];
                    gemm(*in_ch, rows, p, tw.data(), false, &dcols, false, 0.0, &mut gx);
                    let gx = Tensor::new(tx.dims().to_vec(), gx).expect("conv input dims");
                    accumulate(&mut grads, *x, gx);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let t = self.value(*p);
                        let chunk = g.data()[offset..offset + t.len()].to_vec();
                        offset += t.len();
                        let gp = Tensor::new(t.dims().to_vec(), chunk).expect("concat part dims");
                        accumulate(&mut grads, *p, gp);
                    }
                }
                Op::Slice { x, offset } => {
                    let tx = self.value(*x);
                    let gx = grads[x.0].get_or_insert_with(|| Tensor::zeros(tx.dims()));
                    gx.data_mut()[*offset..*offset + g.len()]
                        .iter_mut()
                        .zip(g.data())
                        .for_each(|(a, b)| *a += b);
                }
                Op::Reshape(x) => {
                    let dims = self.value(*x).dims().to_vec();
                    accumulate(&mut grads, *x, g.reshape(&dims)?);
                }
                Op::Broadcast { x, plane } => {
                    let sums: Vec<f64> = g.data().chunks_exact(*plane).map(|c| c.iter().sum()).collect();
                    accumulate(&mut grads, *x, Tensor::vector(sums));
                }
                Op::Mse { x, target } => {
                    let tx = self.value(*x);
                    let scale = 2.0 * g.data()[0] / tx.len() as f64;
                    let gx = zip_tensor(tx, target, |a, b| scale * (a - b));
                    let gx = Tensor::new(tx.dims().to_vec(), gx.into_data()).expect("mse dims");
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sum(x) => {
                    let dims = self.value(*x).dims().to_vec();
                    accumulate(&mut grads, *x, Tensor::full(&dims, g.data()[0]));
                }
            }
        }
        Ok(out)
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

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn map_tensor(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = t.data().iter().map(|v| f(*v)).collect();
    Tensor::new(t.dims().to_vec(), data).expect("dims preserved")
}

fn zip_tensor(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::new(a.dims().to_vec(), data).expect("dims preserved")
}

fn channel_sums(g: &Tensor, channels: usize) -> Tensor {
    let plane = g.len() / channels;
    Tensor::vector(g.data().chunks_exact(plane).map(|c| c.iter().sum()).collect())
}
