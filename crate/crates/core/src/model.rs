//! The DSVAE network: a shared ECAPA-style trunk, speaker branch with
//! attentive statistics pooling and Gaussian heads, autoregressive content
//! posterior, learned content prior and a convolutional decoder.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv1d, Ctx, Linear, LstmCell, ParamId, ParamStore, RnnCell, TdnnBlock};
use crate::rng::{rng_for, tag};
use crate::tensor::Tensor;

pub const LOG_SIGMA_MIN: f64 = -7.0;
pub const LOG_SIGMA_MAX: f64 = 2.0;

/// Number of ECAPA frame-level layers (stem plus three SE-Res2Blocks).
pub const ECAPA_LAYERS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub feat_dim: usize,
    pub channels: usize,
    pub res2_scale: usize,
    pub se_bottleneck: usize,
    pub mfa_channels: usize,
    pub attn_channels: usize,
    /// How many of the ECAPA frame-level layers feed both branches.
    pub n_shared_layers: usize,
    pub d_s: usize,
    pub d_c: usize,
    /// Hidden size per direction of the content BiLSTM.
    pub bilstm_hidden: usize,
    pub content_rnn_hidden: usize,
    pub prior_hidden: usize,
    pub decoder_channels: usize,
    pub decoder_kernel: usize,
    pub decoder_dilations: [usize; 2],
    pub seed: u64,
}

impl ModelConfig {
    pub fn paper() -> Self {
        ModelConfig {
            feat_dim: 80,
            channels: 512,
            res2_scale: 8,
            se_bottleneck: 128,
            mfa_channels: 1536,
            attn_channels: 128,
            n_shared_layers: 4,
            d_s: 192,
            d_c: 32,
            bilstm_hidden: 512,
            content_rnn_hidden: 512,
            prior_hidden: 512,
            decoder_channels: 512,
            decoder_kernel: 3,
            decoder_dilations: [2, 1],
            seed: 0,
        }
    }

    pub fn tiny() -> Self {
        ModelConfig {
            feat_dim: 24,
            channels: 64,
            res2_scale: 4,
            se_bottleneck: 16,
            mfa_channels: 192,
            attn_channels: 16,
            n_shared_layers: 4,
            d_s: 32,
            d_c: 8,
            bilstm_hidden: 32,
            content_rnn_hidden: 32,
            prior_hidden: 32,
            decoder_channels: 64,
            decoder_kernel: 3,
            decoder_dilations: [2, 1],
            seed: 0,
        }
    }

    pub fn test() -> Self {
        ModelConfig {
            feat_dim: 6,
            channels: 8,
            res2_scale: 2,
            se_bottleneck: 4,
            mfa_channels: 12,
            attn_channels: 4,
            n_shared_layers: 4,
            d_s: 4,
            d_c: 3,
            bilstm_hidden: 4,
            content_rnn_hidden: 5,
            prior_hidden: 4,
            decoder_channels: 6,
            decoder_kernel: 3,
            decoder_dilations: [2, 1],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("feat_dim", self.feat_dim),
            ("channels", self.channels),
            ("res2_scale", self.res2_scale),
            ("se_bottleneck", self.se_bottleneck),
            ("mfa_channels", self.mfa_channels),
            ("attn_channels", self.attn_channels),
            ("d_s", self.d_s),
            ("d_c", self.d_c),
            ("bilstm_hidden", self.bilstm_hidden),
            ("content_rnn_hidden", self.content_rnn_hidden),
            ("prior_hidden", self.prior_hidden),
            ("decoder_channels", self.decoder_channels),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::validation(format!("model.{name} must be >= 1")));
        }
        if self.res2_scale < 2 || !self.channels.is_multiple_of(self.res2_scale) {
            return Err(Error::validation("model.channels must be a multiple of res2_scale >= 2"));
        }
        if self.n_shared_layers == 0 || self.n_shared_layers > ECAPA_LAYERS {
            return Err(Error::validation(format!("model.n_shared_layers must be in 1..={ECAPA_LAYERS}")));
        }
        if self.decoder_kernel.is_multiple_of(2) || self.decoder_dilations.contains(&0) {
            return Err(Error::validation("decoder kernel must be odd and dilations >= 1"));
        }
        Ok(())
    }
}

/// Top-level parameter groups; every parameter belongs to exactly one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Trunk,
    Speaker,
    Content,
    Prior,
    Decoder,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Trunk,
        ParamGroup::Speaker,
        ParamGroup::Content,
        ParamGroup::Prior,
        ParamGroup::Decoder,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            ParamGroup::Trunk => "trunk.",
            ParamGroup::Speaker => "speaker.",
            ParamGroup::Content => "content.",
            ParamGroup::Prior => "prior.",
            ParamGroup::Decoder => "decoder.",
        }
    }

    pub fn of(name: &str) -> Option<ParamGroup> {
        ParamGroup::ALL.into_iter().find(|g| name.starts_with(g.prefix()))
    }
}

// ---- building blocks -------------------------------------------------------

#[derive(Clone, Debug)]
struct SeRes2Block {
    tdnn1: TdnnBlock,
    res: Vec<TdnnBlock>,
    tdnn2: TdnnBlock,
    se1: Conv1d,
    se2: Conv1d,
    width: usize,
}

impl SeRes2Block {
    #[allow(clippy::too_many_arguments)]
    fn new<R: Rng>(
        ps: &mut ParamStore,
        bufs: &mut ParamStore,
        rng: &mut R,
        name: &str,
        c: usize,
        scale: usize,
        bottleneck: usize,
        dilation: usize,
    ) -> Self {
        let width = c / scale;
        SeRes2Block {
            tdnn1: TdnnBlock::new(ps, bufs, rng, &format!("{name}.tdnn1"), c, c, 1, 1),
            res: (1..scale)
                .map(|i| TdnnBlock::new(ps, bufs, rng, &format!("{name}.res2.{i}"), width, width, 3, dilation))
                .collect(),
            tdnn2: TdnnBlock::new(ps, bufs, rng, &format!("{name}.tdnn2"), c, c, 1, 1),
            se1: Conv1d::new(ps, rng, &format!("{name}.se.fc1"), c, bottleneck, 1, 1),
            se2: Conv1d::new(ps, rng, &format!("{name}.se.fc2"), bottleneck, c, 1, 1),
            width,
        }
    }

    fn forward(&self, cx: &mut Ctx, x: Var) -> Var {
        let y = self.tdnn1.forward(cx, x);
        let mut outs = vec![cx.g.slice(y, 1, 0, self.width)];
        let mut prev: Option<Var> = None;
        for (i, block) in self.res.iter().enumerate() {
            let chunk = cx.g.slice(y, 1, (i + 1) * self.width, self.width);
            let inp = match prev {
                Some(p) => cx.g.add(chunk, p),
                None => chunk,
            };
            let o = block.forward(cx, inp);
            outs.push(o);
            prev = Some(o);
        }
        let y = cx.g.concat(&outs, 1);
        let y = self.tdnn2.forward(cx, y);
        let s = cx.g.mean_axis(y, 2);
        let s = self.se1.forward(cx, s);
        let s = cx.g.relu(s);
        let s = self.se2.forward(cx, s);
        let s = cx.g.sigmoid(s);
        let y = cx.g.mul(y, s);
        cx.g.add(y, x)
    }
}

#[derive(Clone, Debug)]
enum EcapaLayer {
    Stem(TdnnBlock),
    Block(SeRes2Block),
}

impl EcapaLayer {
    fn forward(&self, cx: &mut Ctx, x: Var) -> Var {
        match self {
            EcapaLayer::Stem(t) => t.forward(cx, x),
            EcapaLayer::Block(b) => b.forward(cx, x),
        }
    }
}

/// Attentive statistics pooling with global context: `(B, M, T) → (B, 2M)`.
#[derive(Clone, Debug)]
pub struct AttentiveStatsPool {
    attn: TdnnBlock,
    proj: Conv1d,
}

const POOL_EPS: f64 = 1e-6;

impl AttentiveStatsPool {
    fn new<R: Rng>(ps: &mut ParamStore, bufs: &mut ParamStore, rng: &mut R, name: &str, m: usize, a: usize) -> Self {
        AttentiveStatsPool {
            attn: TdnnBlock::new(ps, bufs, rng, &format!("{name}.attn"), 3 * m, a, 1, 1),
            proj: Conv1d::new(ps, rng, &format!("{name}.proj"), a, m, 1, 1),
        }
    }

    pub fn forward(&self, cx: &mut Ctx, h: Var) -> Var {
        let shape = cx.g.shape(h).to_vec();
        let (b, m) = (shape[0], shape[1]);
        let (mean, std) = weighted_stats(cx, h, None);
        let mean_b = cx.g.broadcast_to(mean, &shape);
        let std_b = cx.g.broadcast_to(std, &shape);
        let ctx = cx.g.concat(&[h, mean_b, std_b], 1);
        let a = self.attn.forward(cx, ctx);
        let a = cx.g.tanh(a);
        let logits = self.proj.forward(cx, a);
        let lse = cx.g.logsumexp(logits, 2);
        let logw = cx.g.sub(logits, lse);
        let w = cx.g.exp(logw);
        let (mu, sd) = weighted_stats(cx, h, Some(w));
        let pooled = cx.g.concat(&[mu, sd], 1);
        cx.g.reshape(pooled, &[b, 2 * m])
    }
}

/// Per-channel mean and standard deviation over time, optionally weighted by
/// `w` (same shape as `h`, summing to one over time). Shapes `(B, C, 1)`.
fn weighted_stats(cx: &mut Ctx, h: Var, w: Option<Var>) -> (Var, Var) {
    let mean = match w {
        Some(w) => {
            let wh = cx.g.mul(w, h);
            cx.g.sum_axis(wh, 2)
        }
        None => cx.g.mean_axis(h, 2),
    };
    let c = cx.g.sub(h, mean);
    let sq = cx.g.square(c);
    let var = match w {
        Some(w) => {
            let wsq = cx.g.mul(w, sq);
            cx.g.sum_axis(wsq, 2)
        }
        None => cx.g.mean_axis(sq, 2),
    };
    let var = cx.g.add_scalar(var, POOL_EPS);
    (mean, cx.g.sqrt(var))
}

/// A diagonal Gaussian `(μ, log σ, σ)` as graph nodes. `log_sigma` is the
/// clamped head output, so `sigma = exp(log_sigma)` exactly.
#[derive(Clone, Copy, Debug)]
pub struct Gaussian {
    pub mu: Var,
    pub log_sigma: Var,
    pub sigma: Var,
}

fn gaussian(cx: &mut Ctx, mu: Var, raw_log_sigma: Var) -> Gaussian {
    let log_sigma = cx.g.clamp(raw_log_sigma, LOG_SIGMA_MIN, LOG_SIGMA_MAX);
    let sigma = cx.g.exp(log_sigma);
    Gaussian { mu, log_sigma, sigma }
}

/// `mu + sigma ⊙ eps` on the tape.
fn sample(cx: &mut Ctx, g: Gaussian, eps: Var) -> Var {
    let s = cx.g.mul(g.sigma, eps);
    cx.g.add(g.mu, s)
}

/// Standard-normal noise of `shape` from a seeded stream.
pub fn standard_normal(shape: &[usize], rng_seed: u64, stream: u64) -> Tensor {
    let mut rng = rng_for(rng_seed, &[tag::NOISE, stream]);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect())
}

/// `mu + sigma ⊙ ε` with `ε ~ N(0, I)` drawn from `rng_seed`.
pub fn reparameterize(mu: &Tensor, sigma: &Tensor, rng_seed: u64) -> Result<Tensor> {
    if mu.shape() != sigma.shape() {
        return Err(Error::Shape {
            context: "reparameterize".into(),
            expected: mu.shape().to_vec(),
            got: sigma.shape().to_vec(),
        });
    }
    if sigma.data().iter().any(|&s| !(s > 0.0)) {
        return Err(Error::validation("reparameterize needs sigma > 0"));
    }
    let eps = standard_normal(mu.shape(), rng_seed, 0);
    let data = mu
        .data()
        .iter()
        .zip(sigma.data())
        .zip(eps.data())
        .map(|((m, s), e)| m + s * e)
        .collect();
    Ok(Tensor::new(mu.shape().to_vec(), data))
}

/// How posterior samples are drawn during a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Noise {
    /// Reparameterized samples with noise from this seed.
    Seeded(u64),
    /// Use the posterior means (deterministic inference).
    Mean,
}

#[derive(Clone, Debug)]
pub struct ForwardOpts {
    pub noise: Noise,
    /// Compute the DSVAE branches (content, prior, decoder).
    pub dsvae: bool,
    /// Batch rows that go through the DSVAE branches.
    pub dsvae_rows: Option<Range<usize>>,
}

/// Content-side forward results; sequences are laid out `(B, D_c, T)`.
#[derive(Clone, Copy, Debug)]
pub struct ContentOut {
    pub posterior: Gaussian,
    pub sample: Var,
    pub prior: Gaussian,
    /// Speaker posterior restricted to the DSVAE rows.
    pub speaker: Gaussian,
    pub speaker_sample: Var,
    /// `(B, F, T)` reconstruction.
    pub x_hat: Var,
    /// `(B, F, T)` reconstruction target.
    pub target: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOut {
    /// Speaker posterior of every input row, `(B, D_s)`.
    pub speaker: Gaussian,
    pub content: Option<ContentOut>,
}

// ---- the model -------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct Dsvae {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub buffers: ParamStore,
    layers: Vec<EcapaLayer>,
    mfa: TdnnBlock,
    pool: AttentiveStatsPool,
    pool_bn: BatchNorm,
    mu_s: Linear,
    logsig_s: Linear,
    lstm_fwd: LstmCell,
    lstm_bwd: LstmCell,
    post_rnn: RnnCell,
    mu_c: Linear,
    logsig_c: Linear,
    prior_cell: LstmCell,
    mu_p: Linear,
    logsig_p: Linear,
    dec1: Conv1d,
    dec2: Conv1d,
}

fn check(cx: &Ctx, v: Var, layer: &str) -> Result<Var> {
    if cx.g.value(v).is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical { layer: layer.to_string() })
    }
}

impl Dsvae {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_for(cfg.seed, &[tag::INIT]);
        let (mut ps, mut bufs) = (ParamStore::new(), ParamStore::new());
        let c = cfg.channels;
        let mut layers = Vec::with_capacity(ECAPA_LAYERS);
        for i in 0..ECAPA_LAYERS {
            let group = if i < cfg.n_shared_layers { "trunk" } else { "speaker" };
            let name = format!("{group}.layer{}", i + 1);
            layers.push(if i == 0 {
                EcapaLayer::Stem(TdnnBlock::new(&mut ps, &mut bufs, &mut rng, &name, cfg.feat_dim, c, 5, 1))
            } else {
                EcapaLayer::Block(SeRes2Block::new(
                    &mut ps,
                    &mut bufs,
                    &mut rng,
                    &name,
                    c,
                    cfg.res2_scale,
                    cfg.se_bottleneck,
                    i + 1,
                ))
            });
        }
        let m = cfg.mfa_channels;
        let mfa = TdnnBlock::new(&mut ps, &mut bufs, &mut rng, "speaker.mfa", 3 * c, m, 1, 1);
        let pool = AttentiveStatsPool::new(&mut ps, &mut bufs, &mut rng, "speaker.pool", m, cfg.attn_channels);
        let pool_bn = BatchNorm::new(&mut ps, &mut bufs, "speaker.pool_bn", 2 * m);
        let mu_s = Linear::new(&mut ps, &mut rng, "speaker.mu", 2 * m, cfg.d_s);
        let logsig_s = Linear::new(&mut ps, &mut rng, "speaker.log_sigma", 2 * m, cfg.d_s);

        let h = cfg.bilstm_hidden;
        let lstm_fwd = LstmCell::new(&mut ps, &mut rng, "content.bilstm.fwd", c, h);
        let lstm_bwd = LstmCell::new(&mut ps, &mut rng, "content.bilstm.bwd", c, h);
        let post_rnn = RnnCell::new(&mut ps, &mut rng, "content.rnn", 2 * h + cfg.d_c, cfg.content_rnn_hidden);
        let mu_c = Linear::new(&mut ps, &mut rng, "content.mu", cfg.content_rnn_hidden, cfg.d_c);
        let logsig_c = Linear::new(&mut ps, &mut rng, "content.log_sigma", cfg.content_rnn_hidden, cfg.d_c);

        let prior_cell = LstmCell::new(&mut ps, &mut rng, "prior.lstm", cfg.d_c, cfg.prior_hidden);
        let mu_p = Linear::new(&mut ps, &mut rng, "prior.mu", cfg.prior_hidden, cfg.d_c);
        let logsig_p = Linear::new(&mut ps, &mut rng, "prior.log_sigma", cfg.prior_hidden, cfg.d_c);

        let k = cfg.decoder_kernel;
        let [d1, d2] = cfg.decoder_dilations;
        let dec1 = Conv1d::new(&mut ps, &mut rng, "decoder.conv1", cfg.d_s + cfg.d_c, cfg.decoder_channels, k, d1);
        let dec2 = Conv1d::new(&mut ps, &mut rng, "decoder.conv2", cfg.decoder_channels, cfg.feat_dim, k, d2);

        Ok(Dsvae {
            cfg: cfg.clone(),
            params: ps,
            buffers: bufs,
            layers,
            mfa,
            pool,
            pool_bn,
            mu_s,
            logsig_s,
            lstm_fwd,
            lstm_bwd,
            post_rnn,
            mu_c,
            logsig_c,
            prior_cell,
            mu_p,
            logsig_p,
            dec1,
            dec2,
        })
    }

    /// Parameter ids per group; the groups are disjoint and cover everything.
    pub fn partition(&self) -> BTreeMap<ParamGroup, Vec<ParamId>> {
        let mut out: BTreeMap<ParamGroup, Vec<ParamId>> = BTreeMap::new();
        for id in self.params.ids() {
            let g = ParamGroup::of(self.params.name(id)).expect("every parameter name has a group prefix");
            out.entry(g).or_default().push(id);
        }
        out
    }

    pub fn context(&self, train: bool, trainable: bool) -> Ctx<'_> {
        Ctx::new(&self.params, &self.buffers, train, trainable)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        if s.len() != 3 || s[1] != self.cfg.feat_dim || s[0] == 0 || s[2] == 0 {
            return Err(Error::Shape {
                context: "model input (B, F, T)".into(),
                expected: vec![s.first().copied().unwrap_or(1), self.cfg.feat_dim, s.get(2).copied().unwrap_or(1)],
                got: s.to_vec(),
            });
        }
        Ok(())
    }

    /// Runs the shared layers and returns their output `(B, C, T)` plus the
    /// outputs of every ECAPA layer.
    fn ecapa(&self, cx: &mut Ctx, x: Var) -> Result<(Var, Vec<Var>)> {
        let mut h = x;
        let mut outs = Vec::with_capacity(ECAPA_LAYERS);
        let mut shared = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(cx, h);
            check(cx, h, &format!("layer{}", i + 1))?;
            outs.push(h);
            if i + 1 == self.cfg.n_shared_layers {
                shared = h;
            }
        }
        Ok((shared, outs))
    }

    fn speaker_head(&self, cx: &mut Ctx, outs: &[Var]) -> Result<Gaussian> {
        let cat = cx.g.concat(&outs[1..], 1);
        let h = self.mfa.forward(cx, cat);
        check(cx, h, "speaker.mfa")?;
        let pooled = self.pool.forward(cx, h);
        check(cx, pooled, "speaker.pool")?;
        let b = cx.g.shape(pooled)[0];
        let d = cx.g.shape(pooled)[1];
        let p3 = cx.g.reshape(pooled, &[b, d, 1]);
        let p3 = self.pool_bn.forward(cx, p3);
        let pooled = cx.g.reshape(p3, &[b, d]);
        let mu = self.mu_s.forward(cx, pooled);
        let ls = self.logsig_s.forward(cx, pooled);
        check(cx, mu, "speaker.mu")?;
        check(cx, ls, "speaker.log_sigma")?;
        Ok(gaussian(cx, mu, ls))
    }

    /// BiLSTM over the shared trunk output, one `(B, 2H)` node per frame.
    pub fn bilstm(&self, cx: &mut Ctx, shared: Var) -> Vec<Var> {
        let s = cx.g.shape(shared).to_vec();
        let (b, c, t) = (s[0], s[1], s[2]);
        let tbc = cx.g.permute(shared, &[2, 0, 1]);
        let xs: Vec<Var> = (0..t)
            .map(|i| {
                let x = cx.g.slice(tbc, 0, i, 1);
                cx.g.reshape(x, &[b, c])
            })
            .collect();
        let h = self.cfg.bilstm_hidden;
        let run = |cx: &mut Ctx, cell: &LstmCell, order: &mut dyn Iterator<Item = usize>| {
            let mut hs = vec![None; t];
            let mut hh = cx.g.constant(Tensor::zeros(&[b, h]));
            let mut cc = cx.g.constant(Tensor::zeros(&[b, h]));
            for i in order {
                let (h2, c2) = cell.step(cx, xs[i], hh, cc);
                hh = h2;
                cc = c2;
                hs[i] = Some(h2);
            }
            hs.into_iter().map(Option::unwrap).collect::<Vec<Var>>()
        };
        let fwd = run(cx, &self.lstm_fwd, &mut (0..t));
        let bwd = run(cx, &self.lstm_bwd, &mut (0..t).rev());
        fwd.into_iter()
            .zip(bwd)
            .map(|(f, r)| cx.g.concat(&[f, r], 1))
            .collect()
    }

    /// The autoregressive posterior recurrence over per-frame inputs
    /// `feats[t]` of shape `(B, 2H)`. `eps[t]` is the `(B, D_c)` noise for
    /// step `t`, or `None` to feed back posterior means.
    pub fn content_recurrence(&self, cx: &mut Ctx, feats: &[Var], eps: Option<&[Var]>) -> (Gaussian, Var) {
        let b = cx.g.shape(feats[0])[0];
        let dc = self.cfg.d_c;
        let mut prev_e = cx.g.constant(Tensor::zeros(&[b, dc]));
        let mut h = cx.g.constant(Tensor::zeros(&[b, self.cfg.content_rnn_hidden]));
        let (mut mus, mut lss, mut es) = (Vec::new(), Vec::new(), Vec::new());
        for (t, &f) in feats.iter().enumerate() {
            let inp = cx.g.concat(&[f, prev_e], 1);
            h = self.post_rnn.step(cx, inp, h);
            let mu = self.mu_c.forward(cx, h);
            let ls = self.logsig_c.forward(cx, h);
            let gs = gaussian(cx, mu, ls);
            let e = match eps {
                Some(eps) => sample(cx, gs, eps[t]),
                None => mu,
            };
            mus.push(mu);
            lss.push(ls);
            es.push(e);
            prev_e = e;
        }
        let mu = stack_time(cx, &mus);
        let ls = stack_time(cx, &lss);
        let e = stack_time(cx, &es);
        (gaussian(cx, mu, ls), e)
    }

    /// Teacher-forced prior over a `(B, D_c, T)` sample sequence: step `t` is
    /// conditioned on samples before `t`, step 1 on the zero vector.
    pub fn prior_rollout(&self, cx: &mut Ctx, samples: Var) -> Gaussian {
        let s = cx.g.shape(samples).to_vec();
        let (b, dc, t) = (s[0], s[1], s[2]);
        let hp = self.cfg.prior_hidden;
        let mut h = cx.g.constant(Tensor::zeros(&[b, hp]));
        let mut c = cx.g.constant(Tensor::zeros(&[b, hp]));
        let mut prev = cx.g.constant(Tensor::zeros(&[b, dc]));
        let (mut mus, mut lss) = (Vec::new(), Vec::new());
        for i in 0..t {
            let (h2, c2) = self.prior_cell.step(cx, prev, h, c);
            h = h2;
            c = c2;
            mus.push(self.mu_p.forward(cx, h));
            lss.push(self.logsig_p.forward(cx, h));
            let e = cx.g.slice(samples, 2, i, 1);
            prev = cx.g.reshape(e, &[b, dc]);
        }
        let mu = stack_time(cx, &mus);
        let ls = stack_time(cx, &lss);
        gaussian(cx, mu, ls)
    }

    /// Reconstruct `(B, F, T)` from a speaker sample `(B, D_s)` and a content
    /// sequence `(B, D_c, T)`.
    pub fn decode(&self, cx: &mut Ctx, e_s: Var, e_c: Var) -> Result<Var> {
        let ss = cx.g.shape(e_s).to_vec();
        let sc = cx.g.shape(e_c).to_vec();
        if ss.len() != 2 || sc.len() != 3 || ss[0] != sc[0] || ss[1] != self.cfg.d_s || sc[1] != self.cfg.d_c {
            return Err(Error::validation(format!(
                "decode: speaker {ss:?} and content {sc:?} do not match (B, {}) and (B, {}, T)",
                self.cfg.d_s, self.cfg.d_c
            )));
        }
        let s3 = cx.g.reshape(e_s, &[ss[0], ss[1], 1]);
        let sb = cx.g.broadcast_to(s3, &[ss[0], ss[1], sc[2]]);
        let z = cx.g.concat(&[sb, e_c], 1);
        let y = self.dec1.forward(cx, z);
        let y = cx.g.relu(y);
        let y = self.dec2.forward(cx, y);
        check(cx, y, "decoder")
    }

    /// Full forward pass over a `(B, F, T)` batch.
    pub fn forward(&self, cx: &mut Ctx, x: &Tensor, opts: &ForwardOpts) -> Result<ForwardOut> {
        self.check_input(x)?;
        let xv = cx.g.constant(x.clone());
        let (shared, outs) = self.ecapa(cx, xv)?;
        let speaker = self.speaker_head(cx, &outs)?;
        if !opts.dsvae {
            return Ok(ForwardOut { speaker, content: None });
        }
        let b_all = x.shape()[0];
        let rows = opts.dsvae_rows.clone().unwrap_or(0..b_all);
        if rows.is_empty() || rows.end > b_all {
            return Err(Error::validation(format!("dsvae rows {rows:?} out of range for batch {b_all}")));
        }
        let (b, t) = (rows.len(), x.shape()[2]);
        let sub = |cx: &mut Ctx, v: Var| {
            if rows.len() == b_all {
                v
            } else {
                cx.g.slice(v, 0, rows.start, rows.len())
            }
        };
        let shared = sub(cx, shared);
        let target = sub(cx, xv);
        let spk = Gaussian {
            mu: sub(cx, speaker.mu),
            log_sigma: sub(cx, speaker.log_sigma),
            sigma: sub(cx, speaker.sigma),
        };

        let feats = self.bilstm(cx, shared);
        check(cx, *feats.last().unwrap(), "content.bilstm")?;
        let (eps_s, eps_c) = match opts.noise {
            Noise::Seeded(seed) => {
                let es = cx.g.constant(standard_normal(&[b, self.cfg.d_s], seed, 0));
                let ec = standard_normal(&[t, b, self.cfg.d_c], seed, 1);
                let ec: Vec<Var> = (0..t)
                    .map(|i| {
                        let d = ec.data()[i * b * self.cfg.d_c..(i + 1) * b * self.cfg.d_c].to_vec();
                        cx.g.constant(Tensor::new(vec![b, self.cfg.d_c], d))
                    })
                    .collect();
                (Some(es), Some(ec))
            }
            Noise::Mean => (None, None),
        };
        let (posterior, e_c) = self.content_recurrence(cx, &feats, eps_c.as_deref());
        check(cx, posterior.mu, "content.posterior")?;
        let speaker_sample = match eps_s {
            Some(e) => sample(cx, spk, e),
            None => spk.mu,
        };
        let prior = self.prior_rollout(cx, e_c);
        check(cx, prior.mu, "prior")?;
        check(cx, prior.log_sigma, "prior")?;
        let x_hat = self.decode(cx, speaker_sample, e_c)?;
        Ok(ForwardOut {
            speaker,
            content: Some(ContentOut {
                posterior,
                sample: e_c,
                prior,
                speaker: spk,
                speaker_sample,
                x_hat,
                target,
            }),
        })
    }

    /// Eval-mode speaker posterior `(μ, σ)`, each `(B, D_s)`.
    pub fn encode_speaker(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut cx = self.context(false, false);
        let out = self.forward(
            &mut cx,
            x,
            &ForwardOpts {
                noise: Noise::Mean,
                dsvae: false,
                dsvae_rows: None,
            },
        )?;
        Ok((cx.g.value(out.speaker.mu).clone(), cx.g.value(out.speaker.sigma).clone()))
    }

    /// Eval-mode content posterior: `(μ, σ, sample)`, each `(B, D_c, T)`.
    pub fn encode_content(&self, x: &Tensor, noise: Noise) -> Result<(Tensor, Tensor, Tensor)> {
        let mut cx = self.context(false, false);
        let out = self.forward(
            &mut cx,
            x,
            &ForwardOpts {
                noise,
                dsvae: true,
                dsvae_rows: None,
            },
        )?;
        let c = out.content.expect("dsvae forward");
        Ok((
            cx.g.value(c.posterior.mu).clone(),
            cx.g.value(c.posterior.sigma).clone(),
            cx.g.value(c.sample).clone(),
        ))
    }

    /// Pooling stage alone, exposed for invariance checks.
    pub fn pool_stage(&self, cx: &mut Ctx, h: Var) -> Var {
        self.pool.forward(cx, h)
    }
}

/// Stack `T` nodes of shape `(B, D)` into `(B, D, T)`.
fn stack_time(cx: &mut Ctx, steps: &[Var]) -> Var {
    let s = cx.g.shape(steps[0]).to_vec();
    let cols: Vec<Var> = steps.iter().map(|&v| cx.g.reshape(v, &[s[0], s[1], 1])).collect();
    cx.g.concat(&cols, 2)
}
