use super::ops::{
    axis_split, conv1d_raw, conv_dims, gelu_derivative, gelu_scalar, kernel_by_tap, ordered_sum,
    sequence_dims, sigmoid_scalar, softmax_forward,
};
use super::{dim_err, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d {
        input: Var,
        kernel: Var,
        bias: Var,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Vec<f64>),
    Gelu(Var),
    Sigmoid(Var),
    Abs(Var),
    Relu(Var),
    L2Norm(Var),
    Softmax {
        input: Var,
        axis: usize,
    },
    ClipGram {
        query: Var,
        key: Var,
    },
    ClipMix {
        weights: Var,
        value: Var,
    },
    Sac {
        input: Var,
        half: usize,
        scale: f64,
    },
    MeanAxis {
        input: Var,
        axis: usize,
    },
    Reshape(Var),
    Gather {
        input: Var,
        indices: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    Bce {
        input: Var,
        targets: Vec<f64>,
        eps: f64,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv1d { .. } => "conv1d",
            Op::Linear { .. } => "linear",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MulConst(..) => "mul_const",
            Op::Gelu(..) => "gelu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Abs(..) => "abs",
            Op::Relu(..) => "relu",
            Op::L2Norm(..) => "l2_norm",
            Op::Softmax { .. } => "softmax",
            Op::ClipGram { .. } => "clip_gram",
            Op::ClipMix { .. } => "clip_mix",
            Op::Sac { .. } => "sac",
            Op::MeanAxis { .. } => "mean_axis",
            Op::Reshape(..) => "reshape",
            Op::Gather { .. } => "gather",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Bce { .. } => "bce",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv1d {
                input,
                kernel,
                bias,
            } => vec![input, kernel, bias],
            Op::Linear {
                input,
                weight,
                bias,
            } => vec![input, weight, bias],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::ClipGram { query, key } => vec![query, key],
            Op::ClipMix { weights, value } => vec![weights, value],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::MulConst(a, _)
            | Op::Gelu(a)
            | Op::Sigmoid(a)
            | Op::Abs(a)
            | Op::Relu(a)
            | Op::L2Norm(a)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![a],
            Op::Softmax { input, .. }
            | Op::Sac { input, .. }
            | Op::MeanAxis { input, .. }
            | Op::Gather { input, .. }
            | Op::Bce { input, .. } => vec![input],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations in execution order and replays them backwards.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    non_finite: Option<(usize, &'static str)>,
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

    /// Records a leaf. Its gradient is tracked when the tensor requires it.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.is_requires_grad();
        self.push_node(tensor, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.requires_grad(true))
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.requires_grad(false))
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// Gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, var: Var) -> Option<&[f64]> {
        self.nodes[var.0].value.grad()
    }

    /// First op (index, name) that produced a non-finite value. Only
    /// populated in debug builds.
    pub fn non_finite_op(&self) -> Option<(usize, &'static str)> {
        self.non_finite
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        if cfg!(debug_assertions) && self.non_finite.is_none() && !value.all_finite() {
            self.non_finite = Some((self.nodes.len(), op.name()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(value, op, requires_grad)
    }

    fn data(&self, var: Var) -> &[f64] {
        self.nodes[var.0].value.data()
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a);
        let out = Tensor::from_parts(
            value.shape().to_vec(),
            value.data().iter().map(|&x| f(x)).collect(),
        );
        self.push(out, op)
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let name = op.name();
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(dim_err(
                name,
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        Ok(self.push(out, op))
    }

    /// Same-length 1D convolution along the clip axis of `[L, C]` or
    /// `[B, L, P, C]` inputs with a `[Cout, Cin, K]` kernel.
    pub fn conv1d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(kernel), self.value(bias));
        let dims = conv_dims(x, w, b)?;
        let out = conv1d_raw(x, w, b, &dims);
        Ok(self.push(
            out,
            Op::Conv1d {
                input,
                kernel,
                bias,
            },
        ))
    }

    /// Dense layer over the last axis: `y = x W^T + b`, `W: [Dout, Din]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let din = *x
            .shape()
            .last()
            .ok_or_else(|| dim_err("linear", "scalar input"))?;
        let &[dout, wdin] = w.shape() else {
            return Err(dim_err("linear", format!("weight {:?}", w.shape())));
        };
        if wdin != din || b.shape() != [dout] {
            return Err(dim_err(
                "linear",
                format!(
                    "input {:?}, weight {:?}, bias {:?}",
                    x.shape(),
                    w.shape(),
                    b.shape()
                ),
            ));
        }
        let rows = x.numel() / din;
        let (xd, wd, bd) = (x.data(), w.data(), b.data());
        let mut out = vec![0.0; rows * dout];
        for r in 0..rows {
            let xr = &xd[r * din..(r + 1) * din];
            for o in 0..dout {
                let wr = &wd[o * din..(o + 1) * din];
                out[r * dout + o] = bd[o] + xr.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.map(a, Op::Scale(a, factor), |x| x * factor)
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Var {
        self.map(a, Op::AddScalar(a), |x| x + offset)
    }

    /// Elementwise product with a constant (e.g. a dropout mask).
    pub fn mul_const(&mut self, a: Var, factors: Vec<f64>) -> Result<Var> {
        let value = self.value(a);
        if factors.len() != value.numel() {
            return Err(dim_err(
                "mul_const",
                format!("{} factors for {:?}", factors.len(), value.shape()),
            ));
        }
        let data = value
            .data()
            .iter()
            .zip(&factors)
            .map(|(x, f)| x * f)
            .collect();
        let out = Tensor::from_parts(value.shape().to_vec(), data);
        Ok(self.push(out, Op::MulConst(a, factors)))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, Op::Gelu(a), gelu_scalar)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid_scalar)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map(a, Op::Abs(a), f64::abs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    /// Euclidean norm over the last (channel) axis, keeping it as extent 1.
    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a);
        let c = *value
            .shape()
            .last()
            .ok_or_else(|| dim_err("l2_norm", "scalar input"))?;
        if c == 0 {
            return Err(dim_err("l2_norm", "empty channel axis"));
        }
        let data = value
            .data()
            .chunks_exact(c)
            .map(|row| row.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let mut shape = value.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        Ok(self.push(Tensor::from_parts(shape, data), Op::L2Norm(a)))
    }

    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        let out = softmax_forward(self.value(input), axis)?;
        Ok(self.push(out, Op::Softmax { input, axis }))
    }

    /// Per-crop clip affinity: `A[b,t1,t2,p] = sum_c q[b,t1,p,c] k[b,t2,p,c]`.
    pub fn clip_gram(&mut self, query: Var, key: Var) -> Result<Var> {
        let (q, k) = (self.value(query), self.value(key));
        if q.shape() != k.shape() || q.rank() != 4 {
            return Err(dim_err(
                "clip_gram",
                format!("{:?} vs {:?}", q.shape(), k.shape()),
            ));
        }
        let [b, t, p, d] = [q.shape()[0], q.shape()[1], q.shape()[2], q.shape()[3]];
        let (qd, kd) = (q.data(), k.data());
        let mut out = vec![0.0; b * t * t * p];
        for bi in 0..b {
            for t1 in 0..t {
                for t2 in 0..t {
                    for pi in 0..p {
                        let qo = ((bi * t + t1) * p + pi) * d;
                        let ko = ((bi * t + t2) * p + pi) * d;
                        out[((bi * t + t1) * t + t2) * p + pi] =
                            (0..d).map(|c| qd[qo + c] * kd[ko + c]).sum();
                    }
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![b, t, t, p], out),
            Op::ClipGram { query, key },
        ))
    }

    /// Attention-weighted clip mixing:
    /// `out[b,t1,p,c] = sum_t2 a[b,t1,t2,p] v[b,t2,p,c]`.
    pub fn clip_mix(&mut self, weights: Var, value: Var) -> Result<Var> {
        let (a, v) = (self.value(weights), self.value(value));
        if v.rank() != 4 {
            return Err(dim_err("clip_mix", format!("value {:?}", v.shape())));
        }
        let [b, t, p, d] = [v.shape()[0], v.shape()[1], v.shape()[2], v.shape()[3]];
        if a.shape() != [b, t, t, p] {
            return Err(dim_err(
                "clip_mix",
                format!("weights {:?} for value {:?}", a.shape(), v.shape()),
            ));
        }
        let (ad, vd) = (a.data(), v.data());
        let mut out = vec![0.0; v.numel()];
        // Summed in value order so permuting clips permutes the output exactly.
        let mut terms = vec![0.0; t];
        for bi in 0..b {
            for t1 in 0..t {
                for pi in 0..p {
                    let oo = ((bi * t + t1) * p + pi) * d;
                    for c in 0..d {
                        for (t2, term) in terms.iter_mut().enumerate() {
                            let w = ad[((bi * t + t1) * t + t2) * p + pi];
                            *term = w * vd[((bi * t + t2) * p + pi) * d + c];
                        }
                        out[oo + c] = ordered_sum(&mut terms);
                    }
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(v.shape().to_vec(), out),
            Op::ClipMix { weights, value },
        ))
    }

    /// Self-product over a channel window: `out[k] = scale * x[k] * sum_{|j-k|<=half} x[j]`,
    /// zero padded at the channel boundaries.
    pub fn sac(&mut self, input: Var, half: usize, scale: f64) -> Result<Var> {
        let x = self.value(input);
        let d = *x
            .shape()
            .last()
            .ok_or_else(|| dim_err("sac", "scalar input"))?;
        let mut out = vec![0.0; x.numel()];
        for (row, orow) in x.data().chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            let window = window_sums(row, half);
            for k in 0..d {
                orow[k] = scale * row[k] * window[k];
            }
        }
        Ok(self.push(
            Tensor::from_parts(x.shape().to_vec(), out),
            Op::Sac { input, half, scale },
        ))
    }

    /// Mean over `axis`, removing it from the shape.
    pub fn mean_axis(&mut self, input: Var, axis: usize) -> Result<Var> {
        let x = self.value(input);
        if axis >= x.rank() {
            return Err(dim_err(
                "mean_axis",
                format!("axis {axis} for {:?}", x.shape()),
            ));
        }
        let (outer, len, inner) = axis_split(x.shape(), axis);
        let xd = x.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += xd[(o * len + j) * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MeanAxis { input, axis }))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(input).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(input)))
    }

    /// Picks flat elements into a rank-1 result.
    pub fn gather(&mut self, input: Var, indices: Vec<usize>) -> Result<Var> {
        let x = self.data(input);
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.len()) {
            return Err(TensorError::Argument {
                op: "gather",
                detail: format!("index {bad} out of {}", x.len()),
            });
        }
        let data = indices.iter().map(|&i| x[i]).collect();
        let out = Tensor::from_parts(vec![indices.len()], data);
        Ok(self.push(out, Op::Gather { input, indices }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.data(a);
        let m = x.iter().sum::<f64>() / x.len() as f64;
        self.push(Tensor::scalar(m), Op::Mean(a))
    }

    /// Mean binary cross-entropy of probabilities clamped to `[eps, 1 - eps]`.
    pub fn bce(&mut self, input: Var, targets: Vec<f64>, eps: f64) -> Result<Var> {
        let s = self.data(input);
        if s.len() != targets.len() || s.is_empty() {
            return Err(dim_err(
                "bce",
                format!("{} scores, {} targets", s.len(), targets.len()),
            ));
        }
        let n = s.len() as f64;
        let loss = s
            .iter()
            .zip(&targets)
            .map(|(&p, &y)| {
                let p = p.clamp(eps, 1.0 - eps);
                -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
            })
            .sum::<f64>()
            / n;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                input,
                targets,
                eps,
            },
        ))
    }

    /// Populates the gradient of every `requires_grad` leaf with d(loss)/d(leaf).
    /// Earlier gradients are overwritten, not accumulated.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Argument {
                op: "backward",
                detail: format!("loss must be scalar, got {:?}", self.shape(loss)),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backward_node(i, &g, &mut grads);
        }
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let n = node.value.numel();
                let g = grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; n]);
                node.value.set_grad(g);
            }
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let out = nodes[i].value.data();

        match &nodes[i].op {
            Op::Leaf => {}
            &Op::Conv1d {
                input,
                kernel,
                bias,
            } => {
                let x = &nodes[input.0].value;
                let w = &nodes[kernel.0].value;
                let [batch, len, crops, cin] =
                    sequence_dims("conv1d", x.shape()).expect("checked in forward");
                let (cout, ksize) = (w.shape()[0], w.shape()[2]);
                let pad = ksize / 2;
                let (xd, wd) = (x.data(), w.data());
                let (row, orow) = (crops * cin, crops * cout);
                let wt = kernel_by_tap(wd, cout, cin, ksize);
                let mut gx = vec![0.0; xd.len()];
                let mut gwt = vec![0.0; wd.len()];
                let mut gb = vec![0.0; cout];
                for bi in 0..batch {
                    for l in 0..len {
                        for p in 0..crops {
                            let obase = bi * len * orow + l * orow + p * cout;
                            let go = &g[obase..obase + cout];
                            for (b, v) in gb.iter_mut().zip(go) {
                                *b += v;
                            }
                            for kk in 0..ksize {
                                let Some(src) = (l + kk).checked_sub(pad).filter(|&s| s < len)
                                else {
                                    continue;
                                };
                                let xbase = bi * len * row + src * row + p * cin;
                                let xs = &xd[xbase..xbase + cin];
                                let gxs = &mut gx[xbase..xbase + cin];
                                let tap = kk * cout * cin;
                                for (o, &gov) in go.iter().enumerate() {
                                    if gov == 0.0 {
                                        continue;
                                    }
                                    let wrow = &wt[tap + o * cin..tap + (o + 1) * cin];
                                    let gwrow = &mut gwt[tap + o * cin..tap + (o + 1) * cin];
                                    for c in 0..cin {
                                        gxs[c] += wrow[c] * gov;
                                        gwrow[c] += xs[c] * gov;
                                    }
                                }
                            }
                        }
                    }
                }
                let mut gw = vec![0.0; wd.len()];
                for kk in 0..ksize {
                    for o in 0..cout {
                        for c in 0..cin {
                            gw[(o * cin + c) * ksize + kk] = gwt[(kk * cout + o) * cin + c];
                        }
                    }
                }
                accumulate(slot(nodes, grads, input), &gx);
                accumulate(slot(nodes, grads, kernel), &gw);
                accumulate(slot(nodes, grads, bias), &gb);
            }
            &Op::Linear {
                input,
                weight,
                bias,
            } => {
                let (xd, wd) = (val(input), val(weight));
                let dout = nodes[bias.0].value.numel();
                let din = wd.len() / dout;
                let rows = xd.len() / din;
                let mut gx = vec![0.0; xd.len()];
                let mut gw = vec![0.0; wd.len()];
                let mut gb = vec![0.0; dout];
                for r in 0..rows {
                    let xr = &xd[r * din..(r + 1) * din];
                    let gxr = &mut gx[r * din..(r + 1) * din];
                    for o in 0..dout {
                        let go = g[r * dout + o];
                        if go == 0.0 {
                            continue;
                        }
                        gb[o] += go;
                        let wr = &wd[o * din..(o + 1) * din];
                        let gwr = &mut gw[o * din..(o + 1) * din];
                        for c in 0..din {
                            gxr[c] += wr[c] * go;
                            gwr[c] += xr[c] * go;
                        }
                    }
                }
                accumulate(slot(nodes, grads, input), &gx);
                accumulate(slot(nodes, grads, weight), &gw);
                accumulate(slot(nodes, grads, bias), &gb);
            }
            &Op::Add(a, b) => {
                accumulate(slot(nodes, grads, a), g);
                accumulate(slot(nodes, grads, b), g);
            }
            &Op::Sub(a, b) => {
                accumulate(slot(nodes, grads, a), g);
                if let Some(gb) = slot(nodes, grads, b) {
                    gb.iter_mut().zip(g).for_each(|(s, v)| *s -= v);
                }
            }
            &Op::Mul(a, b) => {
                let (ad, bd) = (val(a), val(b));
                let ga: Vec<f64> = g.iter().zip(bd).map(|(x, y)| x * y).collect();
                let gb: Vec<f64> = g.iter().zip(ad).map(|(x, y)| x * y).collect();
                accumulate(slot(nodes, grads, a), &ga);
                accumulate(slot(nodes, grads, b), &gb);
            }
            &Op::Scale(a, f) => {
                let ga: Vec<f64> = g.iter().map(|v| v * f).collect();
                accumulate(slot(nodes, grads, a), &ga);
            }
            &Op::AddScalar(a) | &Op::Reshape(a) => accumulate(slot(nodes, grads, a), g),
            Op::MulConst(a, factors) => {
                let ga: Vec<f64> = g.iter().zip(factors).map(|(x, f)| x * f).collect();
                accumulate(slot(nodes, grads, *a), &ga);
            }
            &Op::Gelu(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(val(a))
                    .map(|(g, &x)| g * gelu_derivative(x))
                    .collect();
                accumulate(slot(nodes, grads, a), &ga);
            }
            &Op::Sigmoid(a) => {
                let ga: Vec<f64> = g.iter().zip(out).map(|(g, &s)| g * s * (1.0 - s)).collect();
                accumulate(slot(nodes, grads, a), &ga);
            }
            &Op::Abs(a) => {
                let ga: Vec<f64> = g.iter().zip(val(a)).map(|(g, &x)| g * sign(x)).collect();
                accumulate(slot(nodes, grads, a), &ga);
            }
            &Op::Relu(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(val(a))
                    .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                accumulate(slot(nodes, grads, a), &ga);
            }
            &Op::L2Norm(a) => {
                let xd = val(a);
                let c = xd.len() / out.len();
                let mut ga = vec![0.0; xd.len()];
                for (r, (&norm, &go)) in out.iter().zip(g).enumerate() {
                    // Zero-vector subgradient is 0.
                    if norm > 0.0 {
                        for j in r * c..(r + 1) * c {
                            ga[j] = go * xd[j] / norm;
                        }
                    }
                }
                accumulate(slot(nodes, grads, a), &ga);
            }
            &Op::Softmax { input, axis } => {
                let (outer, len, inner) = axis_split(nodes[input.0].value.shape(), axis);
                let mut ga = vec![0.0; out.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..len).map(|j| g[at(j)] * out[at(j)]).sum();
                        for j in 0..len {
                            ga[at(j)] = out[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                accumulate(slot(nodes, grads, input), &ga);
            }
            &Op::ClipGram { query, key } => {
                let shape = nodes[query.0].value.shape();
                let [b, t, p, d] = [shape[0], shape[1], shape[2], shape[3]];
                let (qd, kd) = (val(query), val(key));
                let mut gq = vec![0.0; qd.len()];
                let mut gk = vec![0.0; kd.len()];
                for bi in 0..b {
                    for t1 in 0..t {
                        for t2 in 0..t {
                            for pi in 0..p {
                                let go = g[((bi * t + t1) * t + t2) * p + pi];
                                let qo = ((bi * t + t1) * p + pi) * d;
                                let ko = ((bi * t + t2) * p + pi) * d;
                                for c in 0..d {
                                    gq[qo + c] += go * kd[ko + c];
                                    gk[ko + c] += go * qd[qo + c];
                                }
                            }
                        }
                    }
                }
                accumulate(slot(nodes, grads, query), &gq);
                accumulate(slot(nodes, grads, key), &gk);
            }
            &Op::ClipMix { weights, value } => {
                let shape = nodes[value.0].value.shape();
                let [b, t, p, d] = [shape[0], shape[1], shape[2], shape[3]];
                let (ad, vd) = (val(weights), val(value));
                let mut ga = vec![0.0; ad.len()];
                let mut gv = vec![0.0; vd.len()];
                for bi in 0..b {
                    for t1 in 0..t {
                        for pi in 0..p {
                            let oo = ((bi * t + t1) * p + pi) * d;
                            for t2 in 0..t {
                                let ai = ((bi * t + t1) * t + t2) * p + pi;
                                let vo = ((bi * t + t2) * p + pi) * d;
                                let mut acc = 0.0;
                                for c in 0..d {
                                    acc += g[oo + c] * vd[vo + c];
                                    gv[vo + c] += ad[ai] * g[oo + c];
                                }
                                ga[ai] = acc;
                            }
                        }
                    }
                }
                accumulate(slot(nodes, grads, weights), &ga);
                accumulate(slot(nodes, grads, value), &gv);
            }
            &Op::Sac { input, half, scale } => {
                let xd = val(input);
                let d = *nodes[input.0].value.shape().last().unwrap();
                let mut ga = vec![0.0; xd.len()];
                for ((row, grow), garow) in xd
                    .chunks_exact(d)
                    .zip(g.chunks_exact(d))
                    .zip(ga.chunks_exact_mut(d))
                {
                    let window = window_sums(row, half);
                    let weighted: Vec<f64> = grow.iter().zip(row).map(|(g, x)| g * x).collect();
                    let spread = window_sums(&weighted, half);
                    for j in 0..d {
                        garow[j] = scale * (grow[j] * window[j] + spread[j]);
                    }
                }
                accumulate(slot(nodes, grads, input), &ga);
            }
            &Op::MeanAxis { input, axis } => {
                let (outer, len, inner) = axis_split(nodes[input.0].value.shape(), axis);
                let mut ga = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for j in 0..len {
                        for i in 0..inner {
                            ga[(o * len + j) * inner + i] = g[o * inner + i] / len as f64;
                        }
                    }
                }
                accumulate(slot(nodes, grads, input), &ga);
            }
            Op::Gather { input, indices } => {
                if let Some(ga) = slot(nodes, grads, *input) {
                    for (&idx, &go) in indices.iter().zip(g) {
                        ga[idx] += go;
                    }
                }
            }
            &Op::Sum(a) => {
                if let Some(ga) = slot(nodes, grads, a) {
                    ga.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            &Op::Mean(a) => {
                if let Some(ga) = slot(nodes, grads, a) {
                    let n = ga.len() as f64;
                    ga.iter_mut().for_each(|v| *v += g[0] / n);
                }
            }
            Op::Bce {
                input,
                targets,
                eps,
            } => {
                let s = val(*input);
                let n = s.len() as f64;
                let ga: Vec<f64> = s
                    .iter()
                    .zip(targets)
                    .map(|(&p, &y)| {
                        if p < *eps || p > 1.0 - eps {
                            0.0
                        } else {
                            g[0] * (-y / p + (1.0 - y) / (1.0 - p)) / n
                        }
                    })
                    .collect();
                accumulate(slot(nodes, grads, *input), &ga);
            }
        }
    }
}

fn slot<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.numel()]))
}

fn accumulate(slot: Option<&mut Vec<f64>>, g: &[f64]) {
    if let Some(dst) = slot {
        dst.iter_mut().zip(g).for_each(|(d, v)| *d += v);
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `out[k] = sum_{|j-k|<=half, 0<=j<len} x[j]`, via prefix sums.
fn window_sums(x: &[f64], half: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = vec![0.0; n + 1];
    for (i, v) in x.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    (0..n)
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half + 1).min(n);
            prefix[hi] - prefix[lo]
        })
        .collect()
}
