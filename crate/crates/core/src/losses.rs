//! Training objectives: NT-Xent on speaker posterior means, the DSVAE
//! negative ELBO with mutual-information terms, and their weighted sum.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::{ForwardOut, Gaussian};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorRule {
    /// Every other segment in the batch, positive included (`2N − 1` terms).
    #[default]
    ExcludeAnchorOnly,
    /// Only the opposite view of the other pairs (`N − 1` terms).
    StrictIndicator,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub tau: f64,
    pub denominator_rule: DenominatorRule,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            tau: 0.05,
            denominator_rule: DenominatorRule::ExcludeAnchorOnly,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::validation("tau must be > 0"));
        }
        Ok(())
    }
}

/// Per-term weights of the mutual-information terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiWeights {
    pub s_x: f64,
    pub c_x: f64,
    pub s_c: f64,
}

impl Default for MiWeights {
    fn default() -> Self {
        MiWeights {
            s_x: 1.0,
            c_x: 1.0,
            s_c: 1.0,
        }
    }
}

/// One step's objective values. The `mi_*` fields hold the weighted terms,
/// so `dsvae_total = recon + kl_speaker + kl_content − (mi_s_x + mi_c_x) + mi_s_c`
/// and `total = nt_xent + lambda · dsvae_total`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct LossBreakdown {
    pub nt_xent: f64,
    pub recon: f64,
    pub kl_speaker: f64,
    pub kl_content: f64,
    pub mi_s_x: f64,
    pub mi_c_x: f64,
    pub mi_s_c: f64,
    pub dsvae_total: f64,
    pub total: f64,
    pub lambda: f64,
    pub tau: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.nt_xent,
            self.recon,
            self.kl_speaker,
            self.kl_content,
            self.mi_s_x,
            self.mi_c_x,
            self.mi_s_c,
            self.dsvae_total,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    /// Largest violation of the two defining identities.
    pub fn identity_error(&self) -> f64 {
        let d = self.recon + self.kl_speaker + self.kl_content - (self.mi_s_x + self.mi_c_x) + self.mi_s_c;
        let t = self.nt_xent + self.lambda * self.dsvae_total;
        (d - self.dsvae_total).abs().max((t - self.total).abs())
    }
}

// ---- contrastive -----------------------------------------------------------

/// Mask entries: 0 where the similarity enters the denominator of anchor
/// `r`, −∞ elsewhere. Rows are laid out view-major (`r = i·N + n`).
fn denominator_mask(n: usize, rule: DenominatorRule) -> Tensor {
    let m = 2 * n;
    let mut data = vec![f64::NEG_INFINITY; m * m];
    for r in 0..m {
        for c in 0..m {
            let keep = match rule {
                DenominatorRule::ExcludeAnchorOnly => r != c,
                DenominatorRule::StrictIndicator => r % n != c % n && r / n != c / n,
            };
            if keep {
                data[r * m + c] = 0.0;
            }
        }
    }
    Tensor::new(vec![m, m], data)
}

fn positive_selector(n: usize) -> Tensor {
    let m = 2 * n;
    let mut data = vec![0.0; m * m];
    for r in 0..m {
        data[r * m + (r + n) % m] = 1.0;
    }
    Tensor::new(vec![m, m], data)
}

/// NT-Xent over `2N` speaker means laid out view-major: row `i·N + n` is view
/// `i` of pair `n`. Returns the mean loss and the `(2N, 1)` per-anchor terms.
pub fn nt_xent(g: &mut Graph, mu: Var, cfg: &ContrastiveConfig) -> Result<(Var, Var)> {
    cfg.validate()?;
    let shape = g.shape(mu).to_vec();
    if shape.len() != 2 || !shape[0].is_multiple_of(2) {
        return Err(Error::validation(format!("nt_xent needs (2N, D) embeddings, got {shape:?}")));
    }
    let n = shape[0] / 2;
    if n < 2 {
        return Err(Error::validation("nt_xent needs N >= 2 pairs for negatives"));
    }
    let sq = g.square(mu);
    let ss = g.sum_axis(sq, 1);
    if g.value(ss).data().contains(&0.0) {
        return Err(Error::validation("nt_xent: zero-norm embedding"));
    }
    let norm = g.sqrt(ss);
    let z = g.div(mu, norm);
    let zt = g.permute(z, &[1, 0]);
    let sim = g.matmul(z, zt);
    let logits = g.scale(sim, 1.0 / cfg.tau);
    let mask = g.constant(denominator_mask(n, cfg.denominator_rule));
    let masked = g.add(logits, mask);
    let denom = g.logsumexp(masked, 1);
    let sel = g.constant(positive_selector(n));
    let pos = g.mul(logits, sel);
    let pos = g.sum_axis(pos, 1);
    let per_anchor = g.sub(denom, pos);
    Ok((g.mean_all(per_anchor), per_anchor))
}

/// NT-Xent value and per-anchor terms of a plain `(2N, D)` tensor.
pub fn nt_xent_value(mu: &Tensor, cfg: &ContrastiveConfig) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::new();
    let v = g.constant(mu.clone());
    let (loss, per) = nt_xent(&mut g, v, cfg)?;
    Ok((g.value(loss).item(), g.value(per).data().to_vec()))
}

// ---- DSVAE terms -----------------------------------------------------------

fn same_shape(g: &Graph, a: Var, b: Var, what: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::validation(format!(
            "{what}: shape {:?} vs {:?}",
            g.shape(a),
            g.shape(b)
        )));
    }
    Ok(())
}

fn batch(g: &Graph, v: Var) -> f64 {
    g.shape(v)[0] as f64
}

/// `½ Σ (x − x̂)²` per item, averaged over the batch.
pub fn reconstruction_loss(g: &mut Graph, x: Var, x_hat: Var) -> Result<Var> {
    same_shape(g, x, x_hat, "reconstruction_loss")?;
    let d = g.sub(x, x_hat);
    let sq = g.square(d);
    let s = g.sum_all(sq);
    Ok(g.scale(s, 0.5 / batch(g, x)))
}

/// `KL(N(μ, σ²) ‖ N(0, I))` summed over dimensions, averaged over the batch.
pub fn kl_speaker(g: &mut Graph, post: &Gaussian) -> Var {
    let mu2 = g.square(post.mu);
    let s2 = g.square(post.sigma);
    let a = g.add(mu2, s2);
    let two_ls = g.scale(post.log_sigma, 2.0);
    let b = g.sub(a, two_ls);
    let b = g.add_scalar(b, -1.0);
    let s = g.sum_all(b);
    g.scale(s, 0.5 / batch(g, post.mu))
}

/// Per-step Gaussian KL between posterior and teacher-forced prior, summed
/// over steps and dimensions, averaged over the batch.
pub fn kl_content(g: &mut Graph, post: &Gaussian, prior: &Gaussian) -> Result<Var> {
    same_shape(g, post.mu, prior.mu, "kl_content")?;
    same_shape(g, post.sigma, prior.sigma, "kl_content")?;
    let d = g.sub(post.mu, prior.mu);
    let d2 = g.square(d);
    let sq2 = g.square(post.sigma);
    let num = g.add(d2, sq2);
    let sp2 = g.square(prior.sigma);
    let ratio = g.div(num, sp2);
    let half = g.scale(ratio, 0.5);
    let lr = g.sub(prior.log_sigma, post.log_sigma);
    let k = g.add(lr, half);
    let k = g.add_scalar(k, -0.5);
    let s = g.sum_all(k);
    Ok(g.scale(s, 1.0 / batch(g, post.mu)))
}

/// `L[b, b'] = log q(a_b | x_b')` for factorized Gaussians over the flattened
/// non-batch axes.
fn pairwise_log_density(g: &mut Graph, post: &Gaussian, sample: Var) -> Var {
    let shape = g.shape(post.mu).to_vec();
    let b = shape[0];
    let k: usize = shape[1..].iter().product();
    let a = g.reshape(sample, &[b, 1, k]);
    let mu = g.reshape(post.mu, &[1, b, k]);
    let sd = g.reshape(post.sigma, &[1, b, k]);
    let ls = g.reshape(post.log_sigma, &[1, b, k]);
    let diff = g.sub(a, mu);
    let z = g.div(diff, sd);
    let z2 = g.square(z);
    let z2 = g.scale(z2, -0.5);
    let lp = g.sub(z2, ls);
    let lp = g.add_scalar(lp, -0.5 * (2.0 * PI).ln());
    let s = g.sum_axis(lp, 2);
    g.reshape(s, &[b, b])
}

fn diagonal(g: &mut Graph, m: Var) -> Var {
    let b = g.shape(m)[0];
    let mut eye = Tensor::zeros(&[b, b]);
    for i in 0..b {
        eye.data_mut()[i * b + i] = 1.0;
    }
    let e = g.constant(eye);
    let d = g.mul(m, e);
    g.sum_axis(d, 1)
}

fn log_aggregate(g: &mut Graph, l: Var) -> Var {
    let b = batch(g, l);
    let lse = g.logsumexp(l, 1);
    g.add_scalar(lse, -b.ln())
}

/// Unweighted minibatch-weighted-sampling estimates
/// `(I(eˢ; x), I(eᶜ; x), I(eˢ; eᶜ))`.
pub fn mi_terms(
    g: &mut Graph,
    speaker: &Gaussian,
    speaker_sample: Var,
    content: &Gaussian,
    content_sample: Var,
) -> Result<(Var, Var, Var)> {
    let b = g.shape(speaker.mu)[0];
    if b < 2 || g.shape(content.mu)[0] != b {
        return Err(Error::validation("mi_terms needs a common batch of at least 2"));
    }
    same_shape(g, speaker.mu, speaker_sample, "mi_terms")?;
    same_shape(g, content.mu, content_sample, "mi_terms")?;
    let ls = pairwise_log_density(g, speaker, speaker_sample);
    let lc = pairwise_log_density(g, content, content_sample);
    let qs = log_aggregate(g, ls);
    let qc = log_aggregate(g, lc);
    let ds = diagonal(g, ls);
    let dc = diagonal(g, lc);
    let mi_s = g.sub(ds, qs);
    let mi_s = g.mean_all(mi_s);
    let mi_c = g.sub(dc, qc);
    let mi_c = g.mean_all(mi_c);
    let joint = g.add(ls, lc);
    let qj = log_aggregate(g, joint);
    let m = g.sub(qj, qs);
    let m = g.sub(m, qc);
    let mi_sc = g.mean_all(m);
    Ok((mi_s, mi_c, mi_sc))
}

/// Graph nodes of every loss term of one step.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub nt_xent: Var,
    pub per_anchor: Var,
    pub recon: Option<Var>,
    pub kl_speaker: Option<Var>,
    pub kl_content: Option<Var>,
    pub mi_s_x: Option<Var>,
    pub mi_c_x: Option<Var>,
    pub mi_s_c: Option<Var>,
    pub dsvae_total: Option<Var>,
    /// The optimized objective.
    pub total: Var,
}

/// Assemble `nt_xent + λ · L_DSVAE` from a forward pass. NT-Xent uses the
/// speaker means of every row; DSVAE terms use the rows the forward pass ran
/// them on. With `λ = 0` the objective is NT-Xent alone; DSVAE terms are
/// still reported if they were computed.
pub fn total_loss(
    g: &mut Graph,
    fwd: &ForwardOut,
    lambda: f64,
    cfg: &ContrastiveConfig,
    weights: &MiWeights,
) -> Result<(LossVars, LossBreakdown)> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::validation("lambda must be finite and >= 0"));
    }
    let (nt, per_anchor) = nt_xent(g, fwd.speaker.mu, cfg)?;
    let mut vars = LossVars {
        nt_xent: nt,
        per_anchor,
        recon: None,
        kl_speaker: None,
        kl_content: None,
        mi_s_x: None,
        mi_c_x: None,
        mi_s_c: None,
        dsvae_total: None,
        total: nt,
    };
    let mut bd = LossBreakdown {
        nt_xent: g.value(nt).item(),
        lambda,
        tau: cfg.tau,
        ..LossBreakdown::default()
    };
    if let Some(c) = &fwd.content {
        let recon = reconstruction_loss(g, c.target, c.x_hat)?;
        let kls = kl_speaker(g, &c.speaker);
        let klc = kl_content(g, &c.posterior, &c.prior)?;
        let (ms, mc, msc) = mi_terms(g, &c.speaker, c.speaker_sample, &c.posterior, c.sample)?;
        let ms = g.scale(ms, weights.s_x);
        let mc = g.scale(mc, weights.c_x);
        let msc = g.scale(msc, weights.s_c);
        let a = g.add(recon, kls);
        let a = g.add(a, klc);
        let a = g.sub(a, ms);
        let a = g.sub(a, mc);
        let dsvae = g.add(a, msc);
        vars.recon = Some(recon);
        vars.kl_speaker = Some(kls);
        vars.kl_content = Some(klc);
        vars.mi_s_x = Some(ms);
        vars.mi_c_x = Some(mc);
        vars.mi_s_c = Some(msc);
        vars.dsvae_total = Some(dsvae);
        bd.recon = g.value(recon).item();
        bd.kl_speaker = g.value(kls).item();
        bd.kl_content = g.value(klc).item();
        bd.mi_s_x = g.value(ms).item();
        bd.mi_c_x = g.value(mc).item();
        bd.mi_s_c = g.value(msc).item();
        bd.dsvae_total = g.value(dsvae).item();
        if lambda > 0.0 {
            let w = g.scale(dsvae, lambda);
            vars.total = g.add(nt, w);
        }
    }
    bd.total = g.value(vars.total).item();
    Ok((vars, bd))
}
