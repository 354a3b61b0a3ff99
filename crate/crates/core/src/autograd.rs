//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s in evaluation
//! order; [`Graph::backward`] walks the tape in reverse and accumulates
//! gradients for every node that transitively depends on a leaf created with
//! `needs_grad = true`. Binary elementwise operations broadcast over
//! same-rank shapes (each axis equal, or 1 on one side).

use crate::tensor::{broadcast_map, broadcast_shape, gemm, strides, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Relu,
    Sqrt,
    Square,
    Scale(f64),
    AddScalar(f64),
    Clamp(f64, f64),
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    SumAxis(Var),
    SumAll(Var),
    LogSumExp(Var),
    MatMul(Var, Var),
    Conv1d { x: Var, w: Var, dilation: usize },
    Concat(Vec<Var>, usize),
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    BroadcastTo(Var),
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Binary(_, a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Conv1d { x, w, .. } => vec![*x, *w],
            Op::Unary(_, a)
            | Op::SumAxis(a)
            | Op::SumAll(a)
            | Op::LogSumExp(a)
            | Op::Reshape(a)
            | Op::Permute(a, _)
            | Op::BroadcastTo(a) => vec![*a],
            Op::Slice { x, .. } => vec![*x],
            Op::Concat(parts, _) => parts.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = op.parents().iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    // ---- elementwise binary -------------------------------------------------

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb)
            .unwrap_or_else(|| panic!("cannot broadcast {sa:?} with {sb:?} in {kind:?}"));
        let f: fn(f64, f64) -> f64 = match kind {
            Binary::Add => |x: f64, y: f64| x + y,
            Binary::Sub => |x: f64, y: f64| x - y,
            Binary::Mul => |x: f64, y: f64| x * y,
            Binary::Div => |x: f64, y: f64| x / y,
        };
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let data: Vec<f64> = if sa == sb {
            va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ma = broadcast_map(&out_shape, &sa);
            let mb = broadcast_map(&out_shape, &sb);
            ma.iter().zip(&mb).map(|(&i, &j)| f(va[i], vb[j])).collect()
        };
        self.push(Tensor::new(out_shape, data), Op::Binary(kind, a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Div, a, b)
    }

    // ---- elementwise unary --------------------------------------------------

    fn unary(&mut self, kind: Unary, a: Var) -> Var {
        let f: Box<dyn Fn(f64) -> f64> = match kind {
            Unary::Exp => Box::new(f64::exp),
            Unary::Log => Box::new(f64::ln),
            Unary::Tanh => Box::new(f64::tanh),
            Unary::Sigmoid => Box::new(sigmoid),
            Unary::Relu => Box::new(|x| if x > 0.0 { x } else { 0.0 }),
            Unary::Sqrt => Box::new(f64::sqrt),
            Unary::Square => Box::new(|x| x * x),
            Unary::Scale(c) => Box::new(move |x| c * x),
            Unary::AddScalar(c) => Box::new(move |x| x + c),
            Unary::Clamp(lo, hi) => Box::new(move |x| x.clamp(lo, hi)),
        };
        let out = self.value(a).map(f);
        self.push(out, Op::Unary(kind, a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(Unary::Log, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(Unary::Sqrt, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Unary::Square, a)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(Unary::Scale(c), a)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(Unary::AddScalar(c), a)
    }

    /// Clamp into `[lo, hi]`; the gradient passes through on the closed interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(Unary::Clamp(lo, hi), a)
    }

    // ---- reductions ---------------------------------------------------------

    /// Sum over `axis`, keeping it with extent 1.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Var {
        let shape = self.shape(a).to_vec();
        let mut out_shape = shape.clone();
        out_shape[axis] = 1;
        let map = broadcast_map(&shape, &out_shape);
        let mut out = vec![0.0; out_shape.iter().product()];
        for (v, &j) in self.value(a).data().iter().zip(&map) {
            out[j] += v;
        }
        self.push(Tensor::new(out_shape, out), Op::SumAxis(a))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Var {
        let n = self.shape(a)[axis] as f64;
        let s = self.sum_axis(a, axis);
        self.scale(s, 1.0 / n)
    }

    /// Sum of every element, as a shape-`[1]` tensor.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// `log Σ exp` over `axis`, keeping it with extent 1. Entries equal to
    /// `-inf` contribute nothing; at least one entry per slice must be finite.
    pub fn logsumexp(&mut self, a: Var, axis: usize) -> Var {
        let shape = self.shape(a).to_vec();
        let mut out_shape = shape.clone();
        out_shape[axis] = 1;
        let map = broadcast_map(&shape, &out_shape);
        let n_out: usize = out_shape.iter().product();
        let data = self.value(a).data();
        let mut maxes = vec![f64::NEG_INFINITY; n_out];
        for (v, &j) in data.iter().zip(&map) {
            if *v > maxes[j] {
                maxes[j] = *v;
            }
        }
        let mut sums = vec![0.0; n_out];
        for (v, &j) in data.iter().zip(&map) {
            sums[j] += (v - maxes[j]).exp();
        }
        let out: Vec<f64> = sums
            .iter()
            .zip(&maxes)
            .map(|(s, m)| m + s.ln())
            .collect();
        self.push(Tensor::new(out_shape, out), Op::LogSumExp(a))
    }

    // ---- linear algebra -----------------------------------------------------

    /// `(m, k) · (k, n) → (m, n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0], "matmul {sa:?} x {sb:?}");
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (n, 1),
            &mut out,
            false,
        );
        self.push(Tensor::new(vec![m, n], out), Op::MatMul(a, b))
    }

    /// 1-D convolution, stride 1, zero "same" padding.
    /// `x: (B, Cin, T)`, `w: (Cout, Cin, K)` with odd `K` → `(B, Cout, T)`.
    pub fn conv1d(&mut self, x: Var, w: Var, dilation: usize) -> Var {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        assert!(sx.len() == 3 && sw.len() == 3 && sx[1] == sw[1], "conv1d {sx:?} * {sw:?}");
        assert!(sw[2] % 2 == 1, "conv1d kernel must be odd");
        let (b, cin, t) = (sx[0], sx[1], sx[2]);
        let (cout, k) = (sw[0], sw[2]);
        let mut out = vec![0.0; b * cout * t];
        let mut cols = vec![0.0; cin * k * t];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        for bi in 0..b {
            im2col(&xv[bi * cin * t..(bi + 1) * cin * t], cin, t, k, dilation, &mut cols);
            gemm(
                cout,
                cin * k,
                t,
                wv,
                (cin * k, 1),
                &cols,
                (t, 1),
                &mut out[bi * cout * t..(bi + 1) * cout * t],
                false,
            );
        }
        self.push(
            Tensor::new(vec![b, cout, t], out),
            Op::Conv1d { x, w, dilation },
        )
    }

    // ---- shape manipulation -------------------------------------------------

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty());
        let first = self.shape(parts[0]).to_vec();
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for &p in parts {
            let s = self.shape(p);
            assert_eq!(s.len(), first.len());
            for ax in 0..s.len() {
                assert!(ax == axis || s[ax] == first[ax], "concat {first:?} with {s:?}");
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        self.push(Tensor::new(out_shape, out), Op::Concat(parts.to_vec(), axis))
    }

    /// `x[.., start..start+len, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let shape = self.shape(x).to_vec();
        assert!(start + len <= shape[axis], "slice {start}+{len} out of {shape:?}");
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * shape[axis] * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        self.push(Tensor::new(out_shape, out), Op::Slice { x, axis, start })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let t = self.value(x).clone().reshape(shape);
        self.push(t, Op::Reshape(x))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Var {
        let t = permute_tensor(self.value(x), perm);
        self.push(t, Op::Permute(x, perm.to_vec()))
    }

    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(broadcast_shape(&s, shape).as_deref(), Some(shape), "broadcast {s:?} to {shape:?}");
        let map = broadcast_map(shape, &s);
        let src = self.value(x).data();
        let data = map.iter().map(|&i| src[i]).collect();
        self.push(Tensor::new(shape.to_vec(), data), Op::BroadcastTo(x))
    }

    // ---- reverse pass -------------------------------------------------------

    /// Gradients of the scalar `root` with respect to every leaf that needs one.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward root must be a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.shape(root), 1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                op => self.backprop_node(op, &node.value, &g, &mut grads),
            }
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        debug_assert_eq!(g.shape(), self.shape(v));
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match op {
            Op::Leaf => unreachable!(),
            Op::Binary(kind, a, b) => self.backprop_binary(*kind, *a, *b, out, g, grads),
            Op::Unary(kind, a) => {
                let x = self.value(*a).data();
                let y = out.data();
                let gd = g.data();
                let data: Vec<f64> = match *kind {
                    Unary::Exp => gd.iter().zip(y).map(|(g, y)| g * y).collect(),
                    Unary::Log => gd.iter().zip(x).map(|(g, x)| g / x).collect(),
                    Unary::Tanh => gd.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
                    Unary::Sigmoid => gd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
                    Unary::Relu => gd
                        .iter()
                        .zip(x)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect(),
                    Unary::Sqrt => gd.iter().zip(y).map(|(g, y)| g / (2.0 * y)).collect(),
                    Unary::Square => gd.iter().zip(x).map(|(g, x)| 2.0 * g * x).collect(),
                    Unary::Scale(c) => gd.iter().map(|g| c * g).collect(),
                    Unary::AddScalar(_) => gd.to_vec(),
                    Unary::Clamp(lo, hi) => gd
                        .iter()
                        .zip(x)
                        .map(|(g, x)| if *x >= lo && *x <= hi { *g } else { 0.0 })
                        .collect(),
                };
                self.accumulate(grads, *a, Tensor::new(out.shape().to_vec(), data));
            }
            Op::SumAxis(a) => {
                let shape = self.shape(*a);
                let map = broadcast_map(shape, g.shape());
                let data = map.iter().map(|&j| g.data()[j]).collect();
                self.accumulate(grads, *a, Tensor::new(shape.to_vec(), data));
            }
            Op::SumAll(a) => {
                let gv = g.item();
                self.accumulate(grads, *a, Tensor::full(self.shape(*a), gv));
            }
            Op::LogSumExp(a) => {
                let x = self.value(*a);
                let map = broadcast_map(x.shape(), out.shape());
                let data = x
                    .data()
                    .iter()
                    .zip(&map)
                    .map(|(xv, &j)| g.data()[j] * (xv - out.data()[j]).exp())
                    .collect();
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), data));
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.needs_grad(*a) {
                    let mut ga = vec![0.0; m * k];
                    // g (m,n) · bᵀ (n,k)
                    gemm(m, n, k, g.data(), (n, 1), bv.data(), (1, n), &mut ga, false);
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], ga));
                }
                if self.needs_grad(*b) {
                    let mut gb = vec![0.0; k * n];
                    // aᵀ (k,m) · g (m,n)
                    gemm(k, m, n, av.data(), (1, k), g.data(), (n, 1), &mut gb, false);
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], gb));
                }
            }
            Op::Conv1d { x, w, dilation } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (bsz, cin, t) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let (cout, k) = (wv.shape()[0], wv.shape()[2]);
                let ck = cin * k;
                let mut cols = vec![0.0; ck * t];
                let mut gw = vec![0.0; cout * ck];
                let mut gx = vec![0.0; bsz * cin * t];
                let need_w = self.needs_grad(*w);
                let need_x = self.needs_grad(*x);
                for bi in 0..bsz {
                    let gy = &g.data()[bi * cout * t..(bi + 1) * cout * t];
                    if need_w {
                        im2col(&xv.data()[bi * cin * t..(bi + 1) * cin * t], cin, t, k, *dilation, &mut cols);
                        // gy (cout,t) · colsᵀ (t,ck)
                        gemm(cout, t, ck, gy, (t, 1), &cols, (1, t), &mut gw, true);
                    }
                    if need_x {
                        // wᵀ (ck,cout) · gy (cout,t)
                        gemm(ck, cout, t, wv.data(), (1, ck), gy, (t, 1), &mut cols, false);
                        col2im_add(&cols, cin, t, k, *dilation, &mut gx[bi * cin * t..(bi + 1) * cin * t]);
                    }
                }
                if need_w {
                    self.accumulate(grads, *w, Tensor::new(wv.shape().to_vec(), gw));
                }
                if need_x {
                    self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), gx));
                }
            }
            Op::Concat(parts, axis) => {
                let shape = out.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let ps = self.shape(p).to_vec();
                    let len = ps[*axis] * inner;
                    if self.needs_grad(p) {
                        let mut data = Vec::with_capacity(outer * len);
                        for o in 0..outer {
                            let base = o * total + offset;
                            data.extend_from_slice(&g.data()[base..base + len]);
                        }
                        self.accumulate(grads, p, Tensor::new(ps, data));
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                if !self.needs_grad(*x) {
                    return;
                }
                let shape = self.shape(*x).to_vec();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let len = out.shape()[*axis];
                // Add straight into the slot so per-step slices stay O(slice).
                let acc = grads[x.0].get_or_insert_with(|| Tensor::zeros(&shape)).data_mut();
                for o in 0..outer {
                    let dst = o * shape[*axis] * inner + start * inner;
                    let src = o * len * inner;
                    for (d, v) in acc[dst..dst + len * inner].iter_mut().zip(&g.data()[src..src + len * inner]) {
                        *d += v;
                    }
                }
            }
            Op::Reshape(x) => {
                let gx = g.clone().reshape(self.shape(*x));
                self.accumulate(grads, *x, gx);
            }
            Op::Permute(x, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                self.accumulate(grads, *x, permute_tensor(g, &inv));
            }
            Op::BroadcastTo(x) => {
                let gx = reduce_to(g, self.shape(*x));
                self.accumulate(grads, *x, gx);
            }
        }
    }

    fn backprop_binary(
        &self,
        kind: Binary,
        a: Var,
        b: Var,
        out: &Tensor,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let (av, bv) = (self.value(a), self.value(b));
        let out_shape = out.shape();
        let same = av.shape() == bv.shape();
        let (ma, mb) = if same {
            (None, None)
        } else {
            (
                Some(broadcast_map(out_shape, av.shape())),
                Some(broadcast_map(out_shape, bv.shape())),
            )
        };
        let ia = |i: usize| ma.as_ref().map_or(i, |m| m[i]);
        let ib = |i: usize| mb.as_ref().map_or(i, |m| m[i]);
        let gd = g.data();
        let (xa, xb) = (av.data(), bv.data());
        if self.needs_grad(a) {
            let mut ga = vec![0.0; av.len()];
            for (i, gv) in gd.iter().enumerate() {
                ga[ia(i)] += match kind {
                    Binary::Add | Binary::Sub => *gv,
                    Binary::Mul => gv * xb[ib(i)],
                    Binary::Div => gv / xb[ib(i)],
                };
            }
            self.accumulate(grads, a, Tensor::new(av.shape().to_vec(), ga));
        }
        if self.needs_grad(b) {
            let mut gb = vec![0.0; bv.len()];
            for (i, gv) in gd.iter().enumerate() {
                gb[ib(i)] += match kind {
                    Binary::Add => *gv,
                    Binary::Sub => -gv,
                    Binary::Mul => gv * xa[ia(i)],
                    Binary::Div => -gv * out.data()[i] / xb[ib(i)],
                };
            }
            self.accumulate(grads, b, Tensor::new(bv.shape().to_vec(), gb));
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sum `g` down to `shape` over broadcast axes.
fn reduce_to(g: &Tensor, shape: &[usize]) -> Tensor {
    let map = broadcast_map(g.shape(), shape);
    let mut out = vec![0.0; shape.iter().product()];
    for (v, &j) in g.data().iter().zip(&map) {
        out[j] += v;
    }
    Tensor::new(shape.to_vec(), out)
}

pub(crate) fn permute_tensor(x: &Tensor, perm: &[usize]) -> Tensor {
    let shape = x.shape();
    assert_eq!(perm.len(), shape.len());
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    // Strides of the input, seen in output-axis order.
    let eff: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    let mut counter = vec![0usize; shape.len()];
    let mut offset = 0usize;
    let src = x.data();
    for _ in 0..n {
        out.push(src[offset]);
        for ax in (0..out_shape.len()).rev() {
            counter[ax] += 1;
            offset += eff[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            offset -= eff[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    Tensor::new(out_shape, out)
}

fn im2col(x: &[f64], cin: usize, t: usize, k: usize, dilation: usize, cols: &mut [f64]) {
    let pad = dilation * (k - 1) / 2;
    for c in 0..cin {
        let row_in = &x[c * t..(c + 1) * t];
        for kk in 0..k {
            let row = &mut cols[(c * k + kk) * t..(c * k + kk + 1) * t];
            let shift = kk * dilation;
            for (ti, v) in row.iter_mut().enumerate() {
                let src = ti + shift;
                *v = if src >= pad && src - pad < t { row_in[src - pad] } else { 0.0 };
            }
        }
    }
}

fn col2im_add(cols: &[f64], cin: usize, t: usize, k: usize, dilation: usize, gx: &mut [f64]) {
    let pad = dilation * (k - 1) / 2;
    for c in 0..cin {
        for kk in 0..k {
            let row = &cols[(c * k + kk) * t..(c * k + kk + 1) * t];
            let shift = kk * dilation;
            for (ti, v) in row.iter().enumerate() {
                let src = ti + shift;
                if src >= pad && src - pad < t {
                    gx[c * t + src - pad] += v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences of `f` at `x`, compared with the analytic
    /// gradient from the tape.
    fn check_grad(shapes: &[&[usize]], f: impl Fn(&mut Graph, &[Var]) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let inputs: Vec<Tensor> = shapes.iter().map(|s| Tensor::randn(s, &mut rng)).collect();
        let eval = |vals: &[Tensor]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone(), true)).collect();
            let out = f(&mut g, &vars);
            g.value(out).item()
        };
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let out = f(&mut g, &vars);
        let grads = g.backward(out);
        let h = 1e-6;
        for (vi, input) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[vi]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
            for e in 0..input.len() {
                let mut plus = inputs.clone();
                plus[vi].data_mut()[e] += h;
                let mut minus = inputs.clone();
                minus[vi].data_mut()[e] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic.data()[e];
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    (a - numeric).abs() / denom < 1e-5,
                    "input {vi} elem {e}: analytic {a} numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn grad_broadcast_binary_ops() {
        check_grad(&[&[2, 3, 4], &[1, 3, 1]], |g, v| {
            let a = g.add(v[0], v[1]);
            let m = g.mul(a, v[1]);
            let s = g.sub(m, v[0]);
            let d = g.exp(v[1]);
            let q = g.div(s, d);
            g.sum_all(q)
        });
    }

    #[test]
    fn grad_unary_chain() {
        check_grad(&[&[3, 5]], |g, v| {
            let t = g.tanh(v[0]);
            let s = g.sigmoid(t);
            let sq = g.square(s);
            let r = g.sqrt(sq);
            let l = g.log(r);
            let c = g.clamp(l, -0.6, 0.0);
            let e = g.add_scalar(c, 2.0);
            let sc = g.scale(e, 3.0);
            g.sum_all(sc)
        });
    }

    #[test]
    fn grad_reductions_and_lse() {
        check_grad(&[&[2, 3, 4]], |g, v| {
            let l = g.logsumexp(v[0], 2);
            let s = g.sum_axis(v[0], 1);
            let m = g.mean_axis(s, 2);
            let a = g.sum_all(l);
            let b = g.sum_all(m);
            let c = g.mul(a, b);
            g.mean_all(c)
        });
    }

    #[test]
    fn grad_matmul() {
        check_grad(&[&[3, 4], &[4, 2]], |g, v| {
            let p = g.matmul(v[0], v[1]);
            let p2 = g.square(p);
            g.sum_all(p2)
        });
    }

    #[test]
    fn grad_conv1d_dilated() {
        check_grad(&[&[2, 3, 9], &[4, 3, 3]], |g, v| {
            let y = g.conv1d(v[0], v[1], 2);
            let y2 = g.tanh(y);
            g.sum_all(y2)
        });
        check_grad(&[&[1, 2, 6], &[3, 2, 5]], |g, v| {
            let y = g.conv1d(v[0], v[1], 1);
            let y2 = g.square(y);
            g.sum_all(y2)
        });
    }

    #[test]
    fn grad_shape_ops() {
        check_grad(&[&[2, 3, 4], &[2, 2, 4]], |g, v| {
            let c = g.concat(&[v[0], v[1]], 1);
            let s = g.slice(c, 1, 1, 3);
            let p = g.permute(s, &[2, 0, 1]);
            let r = g.reshape(p, &[4, 6]);
            let sq = g.square(r);
            let cols = g.slice(sq, 1, 2, 3);
            g.sum_all(cols)
        });
        check_grad(&[&[2, 1, 3]], |g, v| {
            let b = g.broadcast_to(v[0], &[2, 4, 3]);
            let t = g.tanh(b);
            g.sum_all(t)
        });
    }

    #[test]
    fn conv1d_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::randn(&[2, 3, 7], &mut rng);
        let w = Tensor::randn(&[2, 3, 3], &mut rng);
        let mut g = Graph::new();
        let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
        let y = g.conv1d(xv, wv, 2);
        let y = g.value(y);
        for b in 0..2 {
            for o in 0..2 {
                for t in 0..7i64 {
                    let mut want = 0.0;
                    for c in 0..3 {
                        for k in 0..3i64 {
                            let src = t + (k - 1) * 2;
                            if (0..7).contains(&src) {
                                want += w.at(&[o, c, k as usize]) * x.at(&[b, c, src as usize]);
                            }
                        }
                    }
                    assert!((y.at(&[b, o, t as usize]) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn logsumexp_ignores_negative_infinity() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![1, 3], vec![0.0, f64::NEG_INFINITY, 0.0]), true);
        let l = g.logsumexp(x, 1);
        assert!((g.value(l).item() - 2f64.ln()).abs() < 1e-15);
        let grads = g.backward(l);
        assert_eq!(grads.get(x).unwrap().data(), &[0.5, 0.0, 0.5]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::full(&[2], 3.0));
        let p = g.leaf(Tensor::full(&[2], 2.0), true);
        let m = g.mul(c, p);
        let s = g.sum_all(m);
        let grads = g.backward(s);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap().data(), &[3.0, 3.0]);
    }
}
