use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvDims, ConvGeom};
use crate::tensor::Tensor;

/// Index map for [`Var::gather`]: output element `i` reads source element
/// `index[i]`, or the fill value when the entry is `None`.
#[derive(Clone, Debug)]
pub struct GatherMap {
    pub src_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub index: Vec<Option<u32>>,
}

impl GatherMap {
    pub fn new(src_shape: Vec<usize>, out_shape: Vec<usize>, index: Vec<Option<u32>>) -> Result<Self> {
        let src_len: usize = src_shape.iter().product();
        let out_len: usize = out_shape.iter().product();
        if index.len() != out_len {
            return Err(TensorError::shape(
                "GatherMap",
                format!("{} indices for output shape {out_shape:?}", index.len()),
            ));
        }
        if let Some(bad) = index.iter().flatten().find(|&&i| i as usize >= src_len) {
            return Err(TensorError::shape(
                "GatherMap",
                format!("index {bad} out of range for source length {src_len}"),
            ));
        }
        Ok(GatherMap {
            src_shape,
            out_shape,
            index,
        })
    }
}

#[derive(Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f32),
    AddScalar(usize),
    MulConst(usize, Rc<Tensor>),
    LeakyRelu(usize, f32),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    Log(usize),
    Recip(usize),
    Abs(usize),
    Clamp(usize, f32, f32),
    Sum(usize),
    BroadcastTo(usize),
    SumTo(usize),
    Reshape(usize),
    Gather(usize, Rc<GatherMap>),
    Scatter(usize, Rc<GatherMap>),
    Conv(usize, usize, ConvGeom),
    ConvT(usize, usize, ConvGeom),
    ConvKernelGrad(usize, usize, ConvGeom),
    Blur(usize),
    BlurT(usize),
    StraightThrough(usize),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match *self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) => vec![a, b],
            Conv(a, b, _) | ConvT(a, b, _) | ConvKernelGrad(a, b, _) => vec![a, b],
            Scale(a, _) | AddScalar(a) | MulConst(a, _) | LeakyRelu(a, _) | Tanh(a) | Sigmoid(a)
            | Softplus(a) | Log(a) | Recip(a) | Abs(a) | Clamp(a, _, _) | Sum(a) | BroadcastTo(a)
            | SumTo(a) | Reshape(a) | Gather(a, _) | Scatter(a, _) | Blur(a) | BlurT(a)
            | StraightThrough(a) => vec![a],
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// A tape of operations recorded during one forward pass.
///
/// Values are immutable once recorded. Gradients returned by [`Graph::grad`]
/// are themselves nodes of the same tape and can be differentiated again.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn var(&self, id: usize) -> Var<'_> {
        Var { graph: self, id }
    }

    fn record(&self, op: &'static str, value: Tensor, kind: Op) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op });
        }
        let rg = kind.inputs().iter().any(|&i| self.requires_grad(i));
        Ok(self.push(value, kind, rg))
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// Inputs that `output` does not depend on get a zero gradient.
    pub fn grad<'g>(&'g self, output: Var<'g>, wrt: &[Var<'g>]) -> Result<Vec<Var<'g>>> {
        if output.numel() != 1 {
            return Err(TensorError::Usage(format!(
                "grad of non-scalar output with shape {:?}",
                output.shape()
            )));
        }
        let top = output.id;
        // Nodes on some path from a `wrt` leaf to the output.
        let mut relevant = vec![false; top + 1];
        for w in wrt {
            if w.id <= top {
                relevant[w.id] = true;
            }
        }
        {
            let nodes = self.nodes.borrow();
            for id in 0..=top {
                if !relevant[id] && nodes[id].op.inputs().iter().any(|&i| relevant[i]) {
                    relevant[id] = true;
                }
            }
        }
        let mut grads: Vec<Option<Var<'g>>> = vec![None; top + 1];
        grads[top] = Some(self.constant(Tensor::ones(output.shape())));
        for id in (0..=top).rev() {
            if !relevant[id] {
                continue;
            }
            let Some(g) = grads[id] else { continue };
            let op = self.nodes.borrow()[id].op.clone();
            for (input, contrib) in self.vjp(id, &op, g, &relevant)? {
                grads[input] = Some(match grads[input] {
                    Some(prev) => prev.add(contrib)?,
                    None => contrib,
                });
            }
        }
        wrt.iter()
            .map(|w| match grads.get(w.id).copied().flatten() {
                Some(g) => Ok(g),
                None => Ok(self.constant(Tensor::zeros(w.shape()))),
            })
            .collect()
    }

    /// Vector-Jacobian products of node `id` for each relevant input.
    fn vjp<'g>(
        &'g self,
        id: usize,
        op: &Op,
        g: Var<'g>,
        relevant: &[bool],
    ) -> Result<Vec<(usize, Var<'g>)>> {
        let me = self.var(id);
        let want = |i: usize| relevant[i];
        let mut out = Vec::new();
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if want(a) {
                    out.push((a, g));
                }
                if want(b) {
                    out.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if want(a) {
                    out.push((a, g));
                }
                if want(b) {
                    out.push((b, g.scale(-1.0)?));
                }
            }
            Op::Mul(a, b) => {
                if want(a) {
                    out.push((a, g.mul(self.var(b))?));
                }
                if want(b) {
                    out.push((b, g.mul(self.var(a))?));
                }
            }
            Op::Scale(a, s) => out.push((a, g.scale(s)?)),
            Op::AddScalar(a) => out.push((a, g)),
            Op::MulConst(a, ref c) => out.push((a, g.mul_const_rc(c.clone())?)),
            Op::LeakyRelu(a, slope) => {
                let mask = self.value(a).map(|v| if v > 0.0 { 1.0 } else { slope });
                out.push((a, g.mul_const(mask)?));
            }
            Op::Tanh(a) => {
                let d = me.mul(me)?.scale(-1.0)?.add_scalar(1.0)?;
                out.push((a, g.mul(d)?));
            }
            Op::Sigmoid(a) => {
                let d = me.mul(me.scale(-1.0)?.add_scalar(1.0)?)?;
                out.push((a, g.mul(d)?));
            }
            Op::Softplus(a) => out.push((a, g.mul(self.var(a).sigmoid()?)?)),
            Op::Log(a) => out.push((a, g.mul(self.var(a).recip()?)?)),
            Op::Recip(a) => out.push((a, g.mul(me.mul(me)?)?.scale(-1.0)?)),
            Op::Abs(a) => {
                let sign = self.value(a).map(|v| {
                    if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                out.push((a, g.mul_const(sign)?));
            }
            Op::Clamp(a, lo, hi) => {
                let mask = self.value(a).map(|v| if (lo..=hi).contains(&v) { 1.0 } else { 0.0 });
                out.push((a, g.mul_const(mask)?));
            }
            Op::Sum(a) => {
                let shape = self.value(a).shape().to_vec();
                let ones = vec![1; shape.len()];
                out.push((a, g.reshape(ones)?.broadcast_to(&shape)?));
            }
            Op::BroadcastTo(a) => {
                let shape = self.value(a).shape().to_vec();
                out.push((a, g.sum_to(&shape)?));
            }
            Op::SumTo(a) => {
                let shape = self.value(a).shape().to_vec();
                out.push((a, g.broadcast_to(&shape)?));
            }
            Op::Reshape(a) => {
                let shape = self.value(a).shape().to_vec();
                out.push((a, g.reshape(shape)?));
            }
            Op::Gather(a, ref map) => out.push((a, g.scatter(map.clone())?)),
            Op::Scatter(a, ref map) => out.push((a, g.gather_rc(map.clone(), 0.0)?)),
            Op::Conv(x, k, geom) => {
                let (xv, kv) = (self.var(x), self.var(k));
                if want(x) {
                    let s = xv.shape();
                    out.push((x, g.conv2d_transpose_to(kv, geom, (s[2], s[3]))?));
                }
                if want(k) {
                    let s = kv.shape();
                    out.push((k, xv.conv2d_kernel_grad(g, geom, (s[2], s[3]))?));
                }
            }
            Op::ConvT(y, k, geom) => {
                let (yv, kv) = (self.var(y), self.var(k));
                if want(y) {
                    out.push((y, g.conv2d(kv, geom)?));
                }
                if want(k) {
                    let s = kv.shape();
                    out.push((k, g.conv2d_kernel_grad(yv, geom, (s[2], s[3]))?));
                }
            }
            Op::ConvKernelGrad(x, gy, geom) => {
                let (xv, gyv) = (self.var(x), self.var(gy));
                if want(x) {
                    let s = xv.shape();
                    out.push((x, gyv.conv2d_transpose_to(g, geom, (s[2], s[3]))?));
                }
                if want(gy) {
                    out.push((gy, xv.conv2d(g, geom)?));
                }
            }
            Op::Blur(a) => out.push((a, g.blur_transpose()?)),
            Op::BlurT(a) => out.push((a, g.blur()?)),
            Op::StraightThrough(soft) => out.push((soft, g)),
        }
        Ok(out.into_iter().filter(|(i, _)| want(*i)).collect())
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes checked by caller")
}

fn nchw(op: &'static str, t: &Tensor) -> Result<[usize; 4]> {
    match *t.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        ref s => Err(TensorError::shape(op, format!("expected rank-4 tensor, got {s:?}"))),
    }
}

/// Strides for broadcasting `small` (same rank, dims 1 or equal) into `big`.
fn broadcast_strides(op: &'static str, small: &[usize], big: &[usize]) -> Result<Vec<usize>> {
    if small.len() != big.len() {
        return Err(TensorError::shape(op, format!("rank mismatch {small:?} vs {big:?}")));
    }
    let mut strides = vec![0; small.len()];
    let mut acc = 1;
    for d in (0..small.len()).rev() {
        if small[d] == big[d] {
            strides[d] = acc;
        } else if small[d] != 1 {
            return Err(TensorError::shape(op, format!("cannot broadcast {small:?} to {big:?}")));
        }
        acc *= small[d];
    }
    Ok(strides)
}

/// Source offset for each element of `big` under `strides`.
fn broadcast_offsets(big: &[usize], strides: &[usize]) -> Vec<usize> {
    let numel: usize = big.iter().product();
    let mut out = Vec::with_capacity(numel);
    let mut idx = vec![0usize; big.len()];
    for _ in 0..numel {
        out.push(idx.iter().zip(strides).map(|(i, s)| i * s).sum());
        for d in (0..big.len()).rev() {
            idx[d] += 1;
            if idx[d] < big[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.graph.nodes.borrow()[self.id].value.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(self.id)
    }

    /// Scalar value of a one-element node.
    pub fn item(&self) -> Result<f32> {
        self.value().item()
    }

    fn unary(self, op: &'static str, kind: Op, f: impl Fn(f32) -> f32) -> Result<Var<'g>> {
        let v = self.value().map(f);
        self.graph.record(op, v, kind)
    }

    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        let (a, b) = (self.value(), other.value());
        same_shape("add", &a, &b)?;
        self.graph.record("add", zip_map(&a, &b, |x, y| x + y), Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        let (a, b) = (self.value(), other.value());
        same_shape("sub", &a, &b)?;
        self.graph.record("sub", zip_map(&a, &b, |x, y| x - y), Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        let (a, b) = (self.value(), other.value());
        same_shape("mul", &a, &b)?;
        self.graph.record("mul", zip_map(&a, &b, |x, y| x * y), Op::Mul(self.id, other.id))
    }

    pub fn scale(self, s: f32) -> Result<Var<'g>> {
        self.unary("scale", Op::Scale(self.id, s), |v| v * s)
    }

    pub fn add_scalar(self, c: f32) -> Result<Var<'g>> {
        self.unary("add_scalar", Op::AddScalar(self.id), |v| v + c)
    }

    /// Elementwise product with a tensor that is not differentiated.
    pub fn mul_const(self, c: Tensor) -> Result<Var<'g>> {
        self.mul_const_rc(Rc::new(c))
    }

    fn mul_const_rc(self, c: Rc<Tensor>) -> Result<Var<'g>> {
        let a = self.value();
        same_shape("mul_const", &a, &c)?;
        let v = zip_map(&a, &c, |x, y| x * y);
        self.graph.record("mul_const", v, Op::MulConst(self.id, c))
    }

    pub fn leaky_relu(self, slope: f32) -> Result<Var<'g>> {
        self.unary("leaky_relu", Op::LeakyRelu(self.id, slope), |v| {
            if v > 0.0 {
                v
            } else {
                slope * v
            }
        })
    }

    /// Hyperbolic tangent, kept strictly inside `(-1, 1)` even where `f32`
    /// rounding would saturate.
    pub fn tanh(self) -> Result<Var<'g>> {
        const EDGE: f32 = 1.0 - f32::EPSILON / 2.0;
        self.unary("tanh", Op::Tanh(self.id), |v| v.tanh().clamp(-EDGE, EDGE))
    }

    pub fn sigmoid(self) -> Result<Var<'g>> {
        self.unary("sigmoid", Op::Sigmoid(self.id), sigmoid)
    }

    /// `ln(1 + e^x)` evaluated without overflow.
    pub fn softplus(self) -> Result<Var<'g>> {
        self.unary("softplus", Op::Softplus(self.id), softplus)
    }

    pub fn log(self) -> Result<Var<'g>> {
        if let Some(bad) = self.value().data().iter().find(|&&v| v <= 0.0) {
            return Err(TensorError::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        self.unary("log", Op::Log(self.id), f32::ln)
    }

    pub fn recip(self) -> Result<Var<'g>> {
        self.unary("recip", Op::Recip(self.id), f32::recip)
    }

    pub fn abs(self) -> Result<Var<'g>> {
        self.unary("abs", Op::Abs(self.id), f32::abs)
    }

    pub fn square(self) -> Result<Var<'g>> {
        self.mul(self)
    }

    pub fn clamp(self, lo: f32, hi: f32) -> Result<Var<'g>> {
        self.unary("clamp", Op::Clamp(self.id, lo, hi), |v| v.clamp(lo, hi))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(self) -> Result<Var<'g>> {
        let s: f32 = self.value().data().iter().sum();
        self.graph.record("sum", Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(self) -> Result<Var<'g>> {
        let n = self.numel() as f32;
        self.sum()?.scale(1.0 / n)
    }

    /// Broadcast along axes of extent 1 (same rank required).
    pub fn broadcast_to(self, shape: &[usize]) -> Result<Var<'g>> {
        let a = self.value();
        let strides = broadcast_strides("broadcast_to", a.shape(), shape)?;
        let src = a.data();
        let data = broadcast_offsets(shape, &strides).into_iter().map(|o| src[o]).collect();
        self.graph.record(
            "broadcast_to",
            Tensor::new(shape.to_vec(), data)?,
            Op::BroadcastTo(self.id),
        )
    }

    /// Sum over the axes where `shape` has extent 1; inverse of `broadcast_to`.
    pub fn sum_to(self, shape: &[usize]) -> Result<Var<'g>> {
        let a = self.value();
        let strides = broadcast_strides("sum_to", shape, a.shape())?;
        let mut data = vec![0.0f32; shape.iter().product()];
        for (o, &v) in broadcast_offsets(a.shape(), &strides).into_iter().zip(a.data()) {
            data[o] += v;
        }
        self.graph.record("sum_to", Tensor::new(shape.to_vec(), data)?, Op::SumTo(self.id))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'g>> {
        let v = (*self.value()).clone().reshape(shape)?;
        self.graph.record("reshape", v, Op::Reshape(self.id))
    }

    /// Index-driven copy; unmapped outputs take `fill`.
    pub fn gather(self, map: GatherMap, fill: f32) -> Result<Var<'g>> {
        self.gather_rc(Rc::new(map), fill)
    }

    fn gather_rc(self, map: Rc<GatherMap>, fill: f32) -> Result<Var<'g>> {
        let a = self.value();
        if a.shape() != map.src_shape.as_slice() {
            return Err(TensorError::shape(
                "gather",
                format!("map expects {:?}, got {:?}", map.src_shape, a.shape()),
            ));
        }
        let src = a.data();
        let data = map
            .index
            .iter()
            .map(|i| i.map_or(fill, |i| src[i as usize]))
            .collect();
        let v = Tensor::new(map.out_shape.clone(), data)?;
        self.graph.record("gather", v, Op::Gather(self.id, map))
    }

    /// Adjoint of `gather`: accumulates into the source shape.
    fn scatter(self, map: Rc<GatherMap>) -> Result<Var<'g>> {
        let a = self.value();
        let mut data = vec![0.0f32; map.src_shape.iter().product()];
        for (i, &v) in map.index.iter().zip(a.data()) {
            if let Some(i) = i {
                data[*i as usize] += v;
            }
        }
        let v = Tensor::new(map.src_shape.clone(), data)?;
        self.graph.record("scatter", v, Op::Scatter(self.id, map))
    }

    /// Circular convolution: `self: [N,C,H,W]`, `kernel: [K,C,kh,kw]`.
    pub fn conv2d(self, kernel: Var<'g>, geom: ConvGeom) -> Result<Var<'g>> {
        let (x, k) = (self.value(), kernel.value());
        let [n, c, h, w] = nchw("conv2d", &x)?;
        let [ko, kc, kh, kw] = nchw("conv2d", &k)?;
        if kc != c {
            return Err(TensorError::shape(
                "conv2d",
                format!("kernel expects {kc} input channels, input has {c}"),
            ));
        }
        let (ho, wo) = geom.conv_out((h, w), (kh, kw))?;
        let d = ConvDims { n, c, k: ko, h, w, kh, kw, ho, wo };
        let data = kernels::conv2d(x.data(), k.data(), &d, &geom);
        let v = Tensor::new(vec![n, ko, ho, wo], data)?;
        self.graph.record("conv2d", v, Op::Conv(self.id, kernel.id, geom))
    }

    /// Transposed circular convolution with the natural output size:
    /// `self: [N,K,h,w]`, `kernel: [K,C,kh,kw]` → `[N,C,H,W]`.
    pub fn conv2d_transpose(self, kernel: Var<'g>, geom: ConvGeom) -> Result<Var<'g>> {
        let s = self.shape();
        let k = kernel.shape();
        if s.len() != 4 || k.len() != 4 {
            return Err(TensorError::shape("conv2d_transpose", "expected rank-4 operands"));
        }
        let out = geom.transpose_out((s[2], s[3]), (k[2], k[3]))?;
        self.conv2d_transpose_to(kernel, geom, out)
    }

    /// Transposed convolution with an explicit output size, the exact adjoint
    /// of `conv2d` on inputs of that size.
    pub fn conv2d_transpose_to(
        self,
        kernel: Var<'g>,
        geom: ConvGeom,
        out: (usize, usize),
    ) -> Result<Var<'g>> {
        let (y, k) = (self.value(), kernel.value());
        let [n, yk, ho, wo] = nchw("conv2d_transpose", &y)?;
        let [kk, c, kh, kw] = nchw("conv2d_transpose", &k)?;
        if yk != kk {
            return Err(TensorError::shape(
                "conv2d_transpose",
                format!("kernel has {kk} output channels, input has {yk}"),
            ));
        }
        let (h, w) = out;
        if geom.conv_out((h, w), (kh, kw))? != (ho, wo) {
            return Err(TensorError::shape(
                "conv2d_transpose",
                format!("output {h}x{w} inconsistent with input {ho}x{wo}"),
            ));
        }
        let d = ConvDims { n, c, k: kk, h, w, kh, kw, ho, wo };
        let data = kernels::conv2d_transpose(y.data(), k.data(), &d, &geom);
        let v = Tensor::new(vec![n, c, h, w], data)?;
        self.graph.record("conv2d_transpose", v, Op::ConvT(self.id, kernel.id, geom))
    }

    /// Kernel-shaped correlation of `self: [N,C,H,W]` with `dy: [N,K,ho,wo]`.
    pub fn conv2d_kernel_grad(
        self,
        dy: Var<'g>,
        geom: ConvGeom,
        ksize: (usize, usize),
    ) -> Result<Var<'g>> {
        let (x, g) = (self.value(), dy.value());
        let [n, c, h, w] = nchw("conv2d_kernel_grad", &x)?;
        let [gn, k, ho, wo] = nchw("conv2d_kernel_grad", &g)?;
        let (kh, kw) = ksize;
        if gn != n || geom.conv_out((h, w), ksize)? != (ho, wo) {
            return Err(TensorError::shape(
                "conv2d_kernel_grad",
                format!("{:?} inconsistent with {:?}", x.shape(), g.shape()),
            ));
        }
        let d = ConvDims { n, c, k, h, w, kh, kw, ho, wo };
        let data = kernels::conv2d_kernel_grad(x.data(), g.data(), &d, &geom);
        let v = Tensor::new(vec![k, c, kh, kw], data)?;
        self.graph
            .record("conv2d_kernel_grad", v, Op::ConvKernelGrad(self.id, dy.id, geom))
    }

    /// Fixed vertical/horizontal 3-tap blur: `[N,1,H,W]` → `[N,2,H,W]`.
    pub fn blur(self) -> Result<Var<'g>> {
        let x = self.value();
        let [n, c, h, w] = nchw("blur", &x)?;
        if c != 1 {
            return Err(TensorError::shape("blur", format!("expected 1 channel, got {c}")));
        }
        let v = Tensor::new(vec![n, 2, h, w], kernels::blur(x.data(), n, h, w))?;
        self.graph.record("blur", v, Op::Blur(self.id))
    }

    fn blur_transpose(self) -> Result<Var<'g>> {
        let x = self.value();
        let [n, _, h, w] = nchw("blur_transpose", &x)?;
        let v = Tensor::new(vec![n, 1, h, w], kernels::blur_transpose(x.data(), n, h, w))?;
        self.graph.record("blur_transpose", v, Op::BlurT(self.id))
    }

    /// Straight-through estimator: the forward value is `hard`, the backward
    /// pass treats the node as the identity on `self`.
    pub fn straight_through(self, hard: Tensor) -> Result<Var<'g>> {
        same_shape("straight_through", &self.value(), &hard)?;
        self.graph
            .record("straight_through", hard, Op::StraightThrough(self.id))
    }

    /// Channel slice `[start, start+len)` of an `[N,C,H,W]` node.
    pub fn channels(self, start: usize, len: usize) -> Result<Var<'g>> {
        let [n, c, h, w] = nchw("channels", &self.value())?;
        if start + len > c {
            return Err(TensorError::shape(
                "channels",
                format!("{start}+{len} exceeds {c} channels"),
            ));
        }
        let plane = h * w;
        let mut index = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            for ch in start..start + len {
                let base = (b * c + ch) * plane;
                index.extend((base..base + plane).map(|i| Some(i as u32)));
            }
        }
        let map = GatherMap::new(vec![n, c, h, w], vec![n, len, h, w], index)?;
        self.gather(map, 0.0)
    }
}

pub(crate) fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(v: f32) -> f32 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_values() {
        let g = Graph::new();
        let x = g.constant(Tensor::new([3], vec![-1.0, 0.0, 2.0]).unwrap());
        assert_eq!(x.leaky_relu(0.2).unwrap().value().data(), &[-0.2, 0.0, 2.0]);
        assert_eq!(x.tanh().unwrap().value().data()[1], 0.0);
        assert_eq!(x.sigmoid().unwrap().value().data()[1], 0.5);
    }

    #[test]
    fn log_of_non_positive_is_a_domain_error() {
        let g = Graph::new();
        let x = g.constant(Tensor::new([2], vec![1.0, 0.0]).unwrap());
        assert!(matches!(x.log(), Err(TensorError::Domain { .. })));
    }

    #[test]
    fn sigmoid_gradient_at_zero_is_a_quarter() {
        let g = Graph::new();
        let x = g.param(Tensor::scalar(0.0));
        let y = x.sigmoid().unwrap();
        let dx = g.grad(y, &[x]).unwrap()[0].item().unwrap();
        assert_eq!(dx, 0.25);
    }

    #[test]
    fn tanh_never_reaches_the_open_interval_edges() {
        let g = Graph::new();
        let x = g.constant(Tensor::new([2], vec![-50.0, 50.0]).unwrap());
        let y = x.tanh().unwrap().value();
        assert!(y.data()[0] > -1.0 && y.data()[1] < 1.0);
    }

    #[test]
    fn nan_inputs_are_rejected() {
        let g = Graph::new();
        let x = g.constant(Tensor::new([1], vec![f32::NAN]).unwrap());
        assert!(matches!(x.scale(2.0), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn grad_of_non_scalar_is_a_usage_error() {
        let g = Graph::new();
        let x = g.param(Tensor::zeros([2]));
        let y = x.scale(2.0).unwrap();
        assert!(matches!(g.grad(y, &[x]), Err(TensorError::Usage(_))));
    }

    #[test]
    fn second_derivative_of_cube() {
        // d²/dx² x³ = 6x
        let g = Graph::new();
        let x = g.param(Tensor::scalar(1.5));
        let y = x.mul(x).unwrap().mul(x).unwrap();
        let dy = g.grad(y, &[x]).unwrap()[0];
        let d2y = g.grad(dy, &[x]).unwrap()[0];
        assert!((dy.item().unwrap() - 6.75).abs() < 1e-6);
        assert!((d2y.item().unwrap() - 9.0).abs() < 1e-5);
    }

    #[test]
    fn broadcast_and_sum_to_round_trip_shapes() {
        let g = Graph::new();
        let b = g.param(Tensor::new([1, 2, 1, 1], vec![1.0, 2.0]).unwrap());
        let big = b.broadcast_to(&[3, 2, 2, 2]).unwrap();
        assert_eq!(big.value().data()[..8], [1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
        let s = big.sum().unwrap();
        let db = g.grad(s, &[b]).unwrap()[0];
        assert_eq!(db.value().data(), &[12.0, 12.0]);
    }

    #[test]
    fn straight_through_forwards_hard_and_backwards_identity() {
        let g = Graph::new();
        let soft = g.param(Tensor::new([2], vec![0.3, 0.8]).unwrap());
        let st = soft
            .straight_through(Tensor::new([2], vec![0.0, 1.0]).unwrap())
            .unwrap();
        assert_eq!(st.value().data(), &[0.0, 1.0]);
        let l = st.scale(3.0).unwrap().sum().unwrap();
        assert_eq!(g.grad(l, &[soft]).unwrap()[0].value().data(), &[3.0, 3.0]);
    }

    #[test]
    fn unrelated_inputs_get_zero_gradient() {
        let g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let y = g.param(Tensor::scalar(5.0));
        let l = x.scale(3.0).unwrap();
        let gr = g.grad(l, &[x, y]).unwrap();
        assert_eq!(gr[0].item().unwrap(), 3.0);
        assert_eq!(gr[1].item().unwrap(), 0.0);
    }
}
