//! Named parameter storage and the layers the model is built from.

use std::collections::HashMap;

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered, name-addressable tensors. Used both for trainable parameters and
/// for non-trainable buffers (batch-norm running statistics).
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Register every tensor as a graph leaf.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        Bound(self.tensors.iter().map(|t| g.leaf(t.clone(), trainable)).collect())
    }
}

/// Graph handles of a bound [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

/// A pending batch-norm running-statistics update.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub batch_mean: Vec<f64>,
    pub batch_var_unbiased: Vec<f64>,
    pub momentum: f64,
}

impl BnUpdate {
    pub fn apply(&self, buffers: &mut ParamStore) {
        let m = self.momentum;
        for (r, b) in buffers
            .get_mut(self.running_mean)
            .data_mut()
            .iter_mut()
            .zip(&self.batch_mean)
        {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in buffers
            .get_mut(self.running_var)
            .data_mut()
            .iter_mut()
            .zip(&self.batch_var_unbiased)
        {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}

/// Forward-pass state: the tape, bound parameters, buffers and mode.
pub struct Ctx<'a> {
    pub g: Graph,
    pub params: Bound,
    pub buffers: &'a ParamStore,
    pub train: bool,
    pub bn_updates: Vec<BnUpdate>,
}

impl<'a> Ctx<'a> {
    pub fn new(params: &ParamStore, buffers: &'a ParamStore, train: bool, trainable: bool) -> Self {
        let mut g = Graph::new();
        let bound = params.bind(&mut g, trainable);
        Ctx {
            g,
            params: bound,
            buffers,
            train,
            bn_updates: Vec::new(),
        }
    }

    pub fn p(&self, id: ParamId) -> Var {
        self.params.var(id)
    }
}

fn uniform_init<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    Tensor::uniform(shape, 1.0 / (fan_in as f64).sqrt(), rng)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(ps: &mut ParamStore, rng: &mut R, name: &str, d_in: usize, d_out: usize) -> Self {
        let w = ps.add(format!("{name}.weight"), uniform_init(rng, &[d_in, d_out], d_in));
        let b = ps.add(format!("{name}.bias"), uniform_init(rng, &[1, d_out], d_in));
        Linear { w, b }
    }

    /// `(B, d_in) → (B, d_out)`.
    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Var {
        let (w, b) = (cx.p(self.w), cx.p(self.b));
        let y = cx.g.matmul(x, w);
        cx.g.add(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub dilation: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        ps: &mut ParamStore,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
    ) -> Self {
        let fan_in = c_in * kernel;
        let w = ps.add(format!("{name}.weight"), uniform_init(rng, &[c_out, c_in, kernel], fan_in));
        let b = ps.add(format!("{name}.bias"), uniform_init(rng, &[1, c_out, 1], fan_in));
        Conv1d { w, b, dilation }
    }

    /// `(B, c_in, T) → (B, c_out, T)`.
    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Var {
        let (w, b) = (cx.p(self.w), cx.p(self.b));
        let y = cx.g.conv1d(x, w, self.dilation);
        cx.g.add(y, b)
    }
}

/// Batch normalization over every axis except the channel axis 1 of a
/// `(B, C, T)` input.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(ps: &mut ParamStore, buffers: &mut ParamStore, name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: ps.add(format!("{name}.gamma"), Tensor::full(&[1, channels, 1], 1.0)),
            beta: ps.add(format!("{name}.beta"), Tensor::zeros(&[1, channels, 1])),
            running_mean: buffers.add(format!("{name}.running_mean"), Tensor::zeros(&[1, channels, 1])),
            running_var: buffers.add(format!("{name}.running_var"), Tensor::full(&[1, channels, 1], 1.0)),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Var {
        let shape = cx.g.shape(x).to_vec();
        let n = (shape[0] * shape[2]) as f64;
        let (mean, var) = if cx.train {
            let s = cx.g.sum_axis(x, 0);
            let s = cx.g.sum_axis(s, 2);
            let mean = cx.g.scale(s, 1.0 / n);
            let xc = cx.g.sub(x, mean);
            let sq = cx.g.square(xc);
            let v = cx.g.sum_axis(sq, 0);
            let v = cx.g.sum_axis(v, 2);
            let var = cx.g.scale(v, 1.0 / n);
            let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            cx.bn_updates.push(BnUpdate {
                running_mean: self.running_mean,
                running_var: self.running_var,
                batch_mean: cx.g.value(mean).data().to_vec(),
                batch_var_unbiased: cx.g.value(var).data().iter().map(|v| v * unbias).collect(),
                momentum: self.momentum,
            });
            (mean, var)
        } else {
            let mean = cx.g.constant(cx.buffers.get(self.running_mean).clone());
            let var = cx.g.constant(cx.buffers.get(self.running_var).clone());
            (mean, var)
        };
        let xc = cx.g.sub(x, mean);
        let ve = cx.g.add_scalar(var, self.eps);
        let sd = cx.g.sqrt(ve);
        let xn = cx.g.div(xc, sd);
        let (gamma, beta) = (cx.p(self.gamma), cx.p(self.beta));
        let y = cx.g.mul(xn, gamma);
        cx.g.add(y, beta)
    }
}

/// Conv → ReLU → BatchNorm.
#[derive(Clone, Debug)]
pub struct TdnnBlock {
    pub conv: Conv1d,
    pub bn: BatchNorm,
}

impl TdnnBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        ps: &mut ParamStore,
        buffers: &mut ParamStore,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
    ) -> Self {
        TdnnBlock {
            conv: Conv1d::new(ps, rng, &format!("{name}.conv"), c_in, c_out, kernel, dilation),
            bn: BatchNorm::new(ps, buffers, &format!("{name}.bn"), c_out),
        }
    }

    pub fn forward(&self, cx: &mut Ctx, x: Var) -> Var {
        let y = self.conv.forward(cx, x);
        let y = cx.g.relu(y);
        self.bn.forward(cx, y)
    }
}

#[derive(Clone, Debug)]
pub struct LstmCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<R: Rng>(ps: &mut ParamStore, rng: &mut R, name: &str, d_in: usize, hidden: usize) -> Self {
        let wx = ps.add(format!("{name}.w_input"), uniform_init(rng, &[d_in, 4 * hidden], hidden));
        let wh = ps.add(format!("{name}.w_hidden"), uniform_init(rng, &[hidden, 4 * hidden], hidden));
        let b = ps.add(format!("{name}.bias"), uniform_init(rng, &[1, 4 * hidden], hidden));
        LstmCell { wx, wh, b, hidden }
    }

    /// One step; gate order is input, forget, cell, output.
    pub fn step(&self, cx: &mut Ctx, x: Var, h: Var, c: Var) -> (Var, Var) {
        let hd = self.hidden;
        let (wx, wh, b) = (cx.p(self.wx), cx.p(self.wh), cx.p(self.b));
        let zx = cx.g.matmul(x, wx);
        let zh = cx.g.matmul(h, wh);
        let z = cx.g.add(zx, zh);
        let z = cx.g.add(z, b);
        let i = cx.g.slice(z, 1, 0, hd);
        let f = cx.g.slice(z, 1, hd, hd);
        let gg = cx.g.slice(z, 1, 2 * hd, hd);
        let o = cx.g.slice(z, 1, 3 * hd, hd);
        let i = cx.g.sigmoid(i);
        let f = cx.g.sigmoid(f);
        let gg = cx.g.tanh(gg);
        let o = cx.g.sigmoid(o);
        let fc = cx.g.mul(f, c);
        let ig = cx.g.mul(i, gg);
        let c_new = cx.g.add(fc, ig);
        let tc = cx.g.tanh(c_new);
        let h_new = cx.g.mul(o, tc);
        (h_new, c_new)
    }
}

/// Elman recurrence `h' = tanh(x·Wx + h·Wh + b)`.
#[derive(Clone, Debug)]
pub struct RnnCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl RnnCell {
    pub fn new<R: Rng>(ps: &mut ParamStore, rng: &mut R, name: &str, d_in: usize, hidden: usize) -> Self {
        let wx = ps.add(format!("{name}.w_input"), uniform_init(rng, &[d_in, hidden], hidden));
        let wh = ps.add(format!("{name}.w_hidden"), uniform_init(rng, &[hidden, hidden], hidden));
        let b = ps.add(format!("{name}.bias"), uniform_init(rng, &[1, hidden], hidden));
        RnnCell { wx, wh, b, hidden }
    }

    pub fn step(&self, cx: &mut Ctx, x: Var, h: Var) -> Var {
        let (wx, wh, b) = (cx.p(self.wx), cx.p(self.wh), cx.p(self.b));
        let zx = cx.g.matmul(x, wx);
        let zh = cx.g.matmul(h, wh);
        let z = cx.g.add(zx, zh);
        let z = cx.g.add(z, b);
        cx.g.tanh(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn batchnorm_train_normalizes_per_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut ps, mut bufs) = (ParamStore::new(), ParamStore::new());
        let bn = BatchNorm::new(&mut ps, &mut bufs, "bn", 3);
        let mut cx = Ctx::new(&ps, &bufs, true, false);
        let x = cx.g.constant(Tensor::randn(&[4, 3, 5], &mut rng).map(|v| 3.0 * v + 2.0));
        let y = bn.forward(&mut cx, x);
        let y = cx.g.value(y).clone();
        for c in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|b| (0..5).map(move |t| (b, t)))
                .map(|(b, t)| y.at(&[b, c, t]))
                .collect();
            let mean = vals.iter().sum::<f64>() / 20.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 20.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
        assert_eq!(cx.bn_updates.len(), 1);
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let (mut ps, mut bufs) = (ParamStore::new(), ParamStore::new());
        let bn = BatchNorm::new(&mut ps, &mut bufs, "bn", 1);
        bufs.get_mut(bn.running_mean).data_mut()[0] = 2.0;
        bufs.get_mut(bn.running_var).data_mut()[0] = 4.0 - 1e-5;
        let mut cx = Ctx::new(&ps, &bufs, false, false);
        let x = cx.g.constant(Tensor::new(vec![1, 1, 2], vec![2.0, 6.0]));
        let y = bn.forward(&mut cx, x);
        let y = cx.g.value(y);
        assert!((y.data()[0]).abs() < 1e-12);
        assert!((y.data()[1] - 2.0).abs() < 1e-9);
        assert!(cx.bn_updates.is_empty());
    }

    #[test]
    fn store_lookup_by_name() {
        let mut ps = ParamStore::new();
        let id = ps.add("a.weight", Tensor::zeros(&[2, 2]));
        assert_eq!(ps.id("a.weight"), Some(id));
        assert_eq!(ps.name(id), "a.weight");
        assert_eq!(ps.num_scalars(), 4);
    }
}
