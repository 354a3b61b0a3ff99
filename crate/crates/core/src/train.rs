//! Optimization: warmup + cosine schedule, Adam, the training loop with
//! per-epoch checkpoints, resumption and JSONL step logs.

use std::f64::consts::PI;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{AdamMoments, Checkpoint};
use crate::dataset::{eligible_indices, pair_batch_from, AugPolicy, Corpus, Frontend, SegmentSpec, ViewPolicy};
use crate::error::{Error, Result};
use crate::losses::{total_loss, ContrastiveConfig, DenominatorRule, LossBreakdown, MiWeights};
use crate::model::{Dsvae, ForwardOpts, ModelConfig, Noise};
use crate::nn::ParamStore;
use crate::rng::{derive_seed, rng_for, tag};
use crate::tensor::Tensor;

/// Which segments feed the DSVAE terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DsvaeViews {
    Both,
    First,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_pairs: usize,
    pub warmup_epochs: usize,
    pub lr_start: f64,
    pub lr_peak: f64,
    pub lr_final: f64,
    pub lambda: f64,
    pub tau: f64,
    pub denominator_rule: DenominatorRule,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_grad_norm: f64,
    pub seg_seconds: f64,
    /// Run the DSVAE branches; off gives the SimCLR-only baseline.
    pub dsvae: bool,
    pub dsvae_views: DsvaeViews,
    pub mi_weight_s_x: f64,
    pub mi_weight_c_x: f64,
    pub mi_weight_s_c: f64,
    /// Permute the frames of the second view of every pair.
    pub frame_shuffle: bool,
    pub aug_p_noise: f64,
    pub aug_p_reverb: f64,
    pub aug_snr_min: f64,
    pub aug_snr_max: f64,
}

impl TrainConfig {
    pub fn paper() -> Self {
        TrainConfig {
            epochs: 50,
            batch_pairs: 256,
            warmup_epochs: 10,
            lr_start: 1e-4,
            lr_peak: 1e-3,
            lr_final: 1e-5,
            lambda: 0.01,
            tau: 0.05,
            denominator_rule: DenominatorRule::ExcludeAnchorOnly,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clip_grad_norm: 0.0,
            seg_seconds: 3.5,
            dsvae: true,
            dsvae_views: DsvaeViews::Both,
            mi_weight_s_x: 1.0,
            mi_weight_c_x: 1.0,
            mi_weight_s_c: 1.0,
            frame_shuffle: false,
            aug_p_noise: 0.4,
            aug_p_reverb: 0.2,
            aug_snr_min: 5.0,
            aug_snr_max: 20.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::validation("train.epochs must be >= 1"));
        }
        if self.batch_pairs < 2 {
            return Err(Error::validation("train.batch_pairs must be >= 2"));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::validation("train.warmup_epochs exceeds train.epochs"));
        }
        for (name, v) in [("lr_start", self.lr_start), ("lr_peak", self.lr_peak), ("lr_final", self.lr_final)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::validation(format!("train.{name} must be > 0")));
            }
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::validation("train.lambda must be >= 0"));
        }
        self.contrastive().validate()?;
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::validation("adam betas must lie in [0, 1) and eps > 0"));
        }
        if !(self.clip_grad_norm >= 0.0) {
            return Err(Error::validation("train.clip_grad_norm must be >= 0"));
        }
        if !(self.seg_seconds > 0.0) {
            return Err(Error::validation("train.seg_seconds must be > 0"));
        }
        let p = self.aug_p_noise + self.aug_p_reverb;
        if self.aug_p_noise < 0.0 || self.aug_p_reverb < 0.0 || p > 1.0 {
            return Err(Error::validation("augmentation probabilities must be >= 0 and sum to <= 1"));
        }
        if self.aug_snr_max < self.aug_snr_min {
            return Err(Error::validation("train.aug_snr_max < train.aug_snr_min"));
        }
        Ok(())
    }

    pub fn contrastive(&self) -> ContrastiveConfig {
        ContrastiveConfig {
            tau: self.tau,
            denominator_rule: self.denominator_rule,
        }
    }

    pub fn mi_weights(&self) -> MiWeights {
        MiWeights {
            s_x: self.mi_weight_s_x,
            c_x: self.mi_weight_c_x,
            s_c: self.mi_weight_s_c,
        }
    }

    pub fn aug_policy(&self) -> AugPolicy {
        let view = ViewPolicy {
            p_noise: self.aug_p_noise,
            p_reverb: self.aug_p_reverb,
            snr_db_min: self.aug_snr_min,
            snr_db_max: self.aug_snr_max,
            frame_shuffle: false,
        };
        AugPolicy {
            views: [
                view.clone(),
                ViewPolicy {
                    frame_shuffle: self.frame_shuffle,
                    ..view
                },
            ],
            ..AugPolicy::default()
        }
    }
}

/// Learning rate at `step`: linear warmup from `lr_start` to `lr_peak`, then
/// cosine decay to `lr_final` at the last step of the last epoch.
pub fn lr_at(step: u64, steps_per_epoch: u64, cfg: &TrainConfig) -> f64 {
    let warm = cfg.warmup_epochs as u64 * steps_per_epoch;
    let total = cfg.epochs as u64 * steps_per_epoch;
    if step < warm {
        let f = step as f64 / warm as f64;
        return cfg.lr_start * (1.0 - f) + cfg.lr_peak * f;
    }
    let span = total.saturating_sub(1).saturating_sub(warm).max(1);
    let progress = ((step - warm) as f64 / span as f64).min(1.0);
    let c = 0.5 * (1.0 + (PI * progress).cos());
    cfg.lr_peak * c + cfg.lr_final * (1.0 - c)
}

// ---- Adam ------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: AdamMoments,
}

impl Adam {
    pub fn new(params: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Adam {
            beta1,
            beta2,
            eps,
            state: AdamMoments {
                t: 0,
                m: zeros(),
                v: zeros(),
            },
        }
    }

    /// One update. Missing gradients count as zero.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>], lr: f64) {
        let s = &mut self.state;
        s.t += 1;
        let bc1 = 1.0 - self.beta1.powi(s.t as i32);
        let bc2 = 1.0 - self.beta2.powi(s.t as i32);
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let (m, v) = (&mut s.m[k], &mut s.v[k]);
            let p = params.get_mut(id).data_mut();
            match &grads[k] {
                Some(g) => {
                    for ((pi, gi), (mi, vi)) in p.iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut())) {
                        *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                        *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                        *pi -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
                    }
                }
                None => {
                    for (pi, (mi, vi)) in p.iter_mut().zip(m.data_mut().iter_mut().zip(v.data_mut())) {
                        *mi *= self.beta1;
                        *vi *= self.beta2;
                        *pi -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
                    }
                }
            }
        }
    }
}

fn clip_gradients(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

// ---- trainer ---------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub grad_norm: f64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: u64,
    pub seconds: f64,
    /// Mean over the epoch's steps.
    pub mean: LossBreakdown,
}

pub struct Trainer<'a> {
    pub model: Dsvae,
    pub opt: Adam,
    pub cfg: TrainConfig,
    corpus: &'a Corpus,
    frontend: Frontend,
    pool: Vec<usize>,
    policy: AugPolicy,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(corpus: &'a Corpus, frontend: &Frontend, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<Self> {
        let model = Dsvae::new(model_cfg)?;
        Self::with_model(corpus, frontend, model, cfg)
    }

    pub fn with_model(corpus: &'a Corpus, frontend: &Frontend, model: Dsvae, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if corpus.is_empty() {
            return Err(Error::validation("training corpus is empty"));
        }
        if let Some(f) = corpus.feat_dim(frontend) {
            if f != model.cfg.feat_dim {
                return Err(Error::validation(format!(
                    "corpus feature dim {f} does not match model.feat_dim {}",
                    model.cfg.feat_dim
                )));
            }
        }
        let pool = eligible_indices(corpus, SegmentSpec { seconds: cfg.seg_seconds }, frontend);
        if pool.len() < cfg.batch_pairs {
            return Err(Error::Resource(format!(
                "corpus exhausted: {} usable utterances for batches of {} pairs",
                pool.len(),
                cfg.batch_pairs
            )));
        }
        let opt = Adam::new(&model.params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        Ok(Trainer {
            model,
            opt,
            cfg: cfg.clone(),
            corpus,
            frontend: frontend.clone(),
            pool,
            policy: cfg.aug_policy(),
            epoch: 0,
            step: 0,
        })
    }

    /// Continue from a checkpoint written by a run with the same settings.
    pub fn resume(corpus: &'a Corpus, frontend: &Frontend, ck: &Checkpoint) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_value(ck.train.clone())
            .map_err(|e| Error::validation(format!("checkpoint training config: {e}")))?;
        let model = ck.restore_model()?;
        let adam = ck.adam_for(&model)?;
        let mut t = Self::with_model(corpus, frontend, model, &cfg)?;
        if let Some(a) = adam {
            t.opt.state = a;
        }
        t.epoch = ck.epoch;
        t.step = ck.step;
        Ok(t)
    }

    pub fn steps_per_epoch(&self) -> u64 {
        (self.pool.len() / self.cfg.batch_pairs) as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_epoch() * self.cfg.epochs as u64
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(
            &self.model,
            serde_json::to_value(&self.cfg).expect("config serializes"),
            self.epoch,
            self.step,
            self.cfg.seed,
            Some(self.opt.state.clone()),
        )
    }

    /// Utterance order of epoch `e` (0-based), chunked into batches.
    pub fn epoch_batches(&self, e: usize) -> Vec<Vec<usize>> {
        let mut order = self.pool.clone();
        order.shuffle(&mut rng_for(self.cfg.seed, &[tag::EPOCH_ORDER, e as u64]));
        order
            .chunks_exact(self.cfg.batch_pairs)
            .map(<[usize]>::to_vec)
            .collect()
    }

    /// Forward and backward on one batch, then one optimizer update.
    pub fn train_step(&mut self, indices: &[usize]) -> Result<StepRecord> {
        let step = self.step;
        let batch = pair_batch_from(
            self.corpus,
            indices,
            SegmentSpec {
                seconds: self.cfg.seg_seconds,
            },
            &self.frontend,
            &self.policy,
            derive_seed(self.cfg.seed, &[tag::BATCH, step]),
        )?;
        let x = batch.to_tensor();
        let n = batch.n_pairs();
        let opts = ForwardOpts {
            noise: Noise::Seeded(derive_seed(self.cfg.seed, &[tag::NOISE, step])),
            dsvae: self.cfg.dsvae,
            dsvae_rows: match self.cfg.dsvae_views {
                DsvaeViews::Both => None,
                DsvaeViews::First => Some(0..n),
            },
        };
        let (mut grads, loss, updates) = {
            let mut cx = self.model.context(true, true);
            let out = self.model.forward(&mut cx, &x, &opts)?;
            let (vars, loss) = total_loss(
                &mut cx.g,
                &out,
                self.cfg.lambda,
                &self.cfg.contrastive(),
                &self.cfg.mi_weights(),
            )?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: step as usize,
                    breakdown: serde_json::to_string(&loss).unwrap_or_default(),
                });
            }
            let mut g = cx.g.backward(vars.total);
            let grads: Vec<Option<Tensor>> = cx.params.vars().iter().map(|&v| g.take(v)).collect();
            (grads, loss, std::mem::take(&mut cx.bn_updates))
        };
        let grad_norm = clip_gradients(&mut grads, self.cfg.clip_grad_norm);
        let lr = lr_at(step, self.steps_per_epoch(), &self.cfg);
        self.opt.step(&mut self.model.params, &grads, lr);
        for u in &updates {
            u.apply(&mut self.model.buffers);
        }
        self.step += 1;
        Ok(StepRecord {
            epoch: self.epoch + 1,
            step,
            lr,
            grad_norm,
            loss,
        })
    }

    /// Run the next epoch, writing one JSON line per step to `log`.
    pub fn run_epoch(&mut self, mut log: Option<&mut dyn Write>) -> Result<EpochSummary> {
        let t0 = Instant::now();
        let batches = self.epoch_batches(self.epoch);
        let mut sum = [0.0f64; 9];
        for b in &batches {
            let rec = self.train_step(b)?;
            if let Some(w) = log.as_deref_mut() {
                let line = serde_json::to_string(&rec).expect("record serializes");
                writeln!(w, "{line}").map_err(|e| Error::io("step log", e))?;
            }
            let l = &rec.loss;
            for (s, v) in sum.iter_mut().zip([
                l.nt_xent,
                l.recon,
                l.kl_speaker,
                l.kl_content,
                l.mi_s_x,
                l.mi_c_x,
                l.mi_s_c,
                l.dsvae_total,
                l.total,
            ]) {
                *s += v;
            }
        }
        let k = batches.len() as f64;
        let mean = LossBreakdown {
            nt_xent: sum[0] / k,
            recon: sum[1] / k,
            kl_speaker: sum[2] / k,
            kl_content: sum[3] / k,
            mi_s_x: sum[4] / k,
            mi_c_x: sum[5] / k,
            mi_s_c: sum[6] / k,
            dsvae_total: sum[7] / k,
            total: sum[8] / k,
            lambda: self.cfg.lambda,
            tau: self.cfg.tau,
        };
        self.epoch += 1;
        Ok(EpochSummary {
            epoch: self.epoch,
            steps: batches.len() as u64,
            seconds: t0.elapsed().as_secs_f64(),
            mean,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochSummary>,
    pub steps_per_epoch: u64,
    pub final_checkpoint: Option<PathBuf>,
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("epoch_{epoch:03}.ckpt"))
}

/// Train to completion. With `out_dir`, step logs go to `steps.jsonl`,
/// epoch summaries to `epochs.jsonl` and a checkpoint is written after every
/// epoch. `resume` continues from a checkpoint of the same run.
pub fn train(
    corpus: &Corpus,
    frontend: &Frontend,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    resume: Option<&Checkpoint>,
) -> Result<(Dsvae, TrainReport)> {
    let mut t = match resume {
        Some(ck) => {
            let t = Trainer::resume(corpus, frontend, ck)?;
            if &t.cfg != cfg || &t.model.cfg != model_cfg {
                return Err(Error::validation("resume checkpoint was written with different settings"));
            }
            t
        }
        None => Trainer::new(corpus, frontend, model_cfg, cfg)?,
    };
    let open = |p: PathBuf, append: bool| -> Result<BufWriter<File>> {
        let f = if append {
            OpenOptions::new().create(true).append(true).open(&p)
        } else {
            File::create(&p)
        };
        f.map(BufWriter::new).map_err(|e| Error::io(&p, e))
    };
    let mut logs = match out_dir {
        Some(d) => {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            let append = resume.is_some();
            Some((open(d.join("steps.jsonl"), append)?, open(d.join("epochs.jsonl"), append)?))
        }
        None => None,
    };
    let mut report = TrainReport {
        epochs: Vec::new(),
        steps_per_epoch: t.steps_per_epoch(),
        final_checkpoint: None,
    };
    while t.epoch < t.cfg.epochs {
        let summary = match logs.as_mut() {
            Some((steps, _)) => t.run_epoch(Some(steps as &mut dyn Write))?,
            None => t.run_epoch(None)?,
        };
        log::info!(
            "epoch {} total {:.4} nt_xent {:.4} dsvae {:.4} ({:.1}s)",
            summary.epoch,
            summary.mean.total,
            summary.mean.nt_xent,
            summary.mean.dsvae_total,
            summary.seconds
        );
        if let (Some(d), Some((steps, epochs))) = (out_dir, logs.as_mut()) {
            let line = serde_json::to_string(&summary).expect("summary serializes");
            writeln!(epochs, "{line}").map_err(|e| Error::io(d.join("epochs.jsonl"), e))?;
            steps.flush().map_err(|e| Error::io(d.join("steps.jsonl"), e))?;
            epochs.flush().map_err(|e| Error::io(d.join("epochs.jsonl"), e))?;
            let p = checkpoint_path(d, t.epoch);
            t.checkpoint().save(&p)?;
            report.final_checkpoint = Some(p);
        }
        report.epochs.push(summary);
    }
    Ok((t.model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};
    use crate::model::ParamGroup;

    fn anchors() -> TrainConfig {
        TrainConfig::paper()
    }

    #[test]
    fn schedule_anchor_values_are_exact() {
        let cfg = anchors();
        let spe = 100;
        assert_eq!(lr_at(0, spe, &cfg), 1e-4);
        assert_eq!(lr_at(10 * spe, spe, &cfg), 1e-3);
        assert_eq!(lr_at(50 * spe - 1, spe, &cfg), 1e-5);
        let before = lr_at(10 * spe - 1, spe, &cfg);
        assert!((before - 1e-3).abs() < 1e-3 / (10.0 * spe as f64) + 1e-15);
        let mut prev = f64::INFINITY;
        for s in 10 * spe..50 * spe {
            let lr = lr_at(s, spe, &cfg);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    fn tiny_setup() -> (Corpus, ModelConfig, TrainConfig) {
        let spec = SyntheticSpec {
            num_speakers: 4,
            utts_per_speaker: 2,
            feat_dim: ModelConfig::test().feat_dim,
            min_frames: 14,
            max_frames: 18,
            ..SyntheticSpec::default()
        };
        let corpus = generate_synthetic(&spec).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_pairs: 4,
            warmup_epochs: 1,
            lr_peak: 5e-3,
            seg_seconds: 0.135,
            tau: 0.2,
            ..TrainConfig::paper()
        };
        (corpus, ModelConfig::test(), cfg)
    }

    #[test]
    fn checkpoint_round_trip_then_step_is_bitwise_equal() {
        let (corpus, mcfg, cfg) = tiny_setup();
        let fe = Frontend::default();
        let mut a = Trainer::new(&corpus, &fe, &mcfg, &cfg).unwrap();
        a.run_epoch(None).unwrap();
        let bytes = a.checkpoint().to_bytes();
        let ck = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        let mut b = Trainer::resume(&corpus, &fe, &ck).unwrap();
        let batch = a.epoch_batches(1)[0].clone();
        let ra = a.train_step(&batch).unwrap();
        let rb = b.train_step(&batch).unwrap();
        assert_eq!(ra.loss, rb.loss);
        for ((_, x), (_, y)) in a.model.params.iter().zip(b.model.params.iter()) {
            assert_eq!(x, y);
        }
        for ((_, x), (_, y)) in a.model.buffers.iter().zip(b.model.buffers.iter()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        let (corpus, mcfg, cfg) = tiny_setup();
        let fe = Frontend::default();
        let dir = tempfile::tempdir().unwrap();
        let (full, rep) = train(&corpus, &fe, &mcfg, &cfg, Some(dir.path()), None).unwrap();
        let ck = Checkpoint::load(&checkpoint_path(dir.path(), 1)).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let (resumed, rep2) = train(&corpus, &fe, &mcfg, &cfg, Some(dir2.path()), Some(&ck)).unwrap();
        assert_eq!(rep2.epochs.len(), 2);
        assert_eq!(rep.epochs[1].mean, rep2.epochs[0].mean);
        assert_eq!(rep.epochs[2].mean, rep2.epochs[1].mean);
        for ((_, x), (_, y)) in full.params.iter().zip(resumed.params.iter()) {
            assert_eq!(x, y);
        }
        let lines = fs::read_to_string(dir.path().join("steps.jsonl")).unwrap();
        assert_eq!(lines.lines().count() as u64, 3 * rep.steps_per_epoch);
        let rec: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
        for key in ["step", "lr", "nt_xent", "recon", "kl_speaker", "kl_content", "mi_s_x", "mi_c_x", "mi_s_c", "dsvae_total", "total", "lambda", "tau"] {
            assert!(rec.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn lambda_zero_equals_simclr_only_step_for_step() {
        let (corpus, mcfg, cfg) = tiny_setup();
        let fe = Frontend::default();
        let zero = TrainConfig { lambda: 0.0, ..cfg.clone() };
        let simclr = TrainConfig { dsvae: false, ..zero.clone() };
        let mut a = Trainer::new(&corpus, &fe, &mcfg, &zero).unwrap();
        let mut b = Trainer::new(&corpus, &fe, &mcfg, &simclr).unwrap();
        for _ in 0..2 {
            let sa = a.run_epoch(None).unwrap();
            let sb = b.run_epoch(None).unwrap();
            assert_eq!(sa.mean.nt_xent, sb.mean.nt_xent);
            assert_eq!(sa.mean.total, sa.mean.nt_xent);
            assert!(sa.mean.dsvae_total != 0.0);
        }
        for ((_, x), (_, y)) in a.model.params.iter().zip(b.model.params.iter()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn gradient_masks_follow_the_partition() {
        let (corpus, mcfg, cfg) = tiny_setup();
        let fe = Frontend::default();
        let t = Trainer::new(&corpus, &fe, &mcfg, &cfg).unwrap();
        let batch = pair_batch_from(
            &corpus,
            &t.epoch_batches(0)[0],
            SegmentSpec { seconds: cfg.seg_seconds },
            &fe,
            &cfg.aug_policy(),
            1,
        )
        .unwrap();
        let x = batch.to_tensor();
        let opts = ForwardOpts {
            noise: Noise::Seeded(1),
            dsvae: true,
            dsvae_rows: None,
        };
        let mut cx = t.model.context(true, true);
        let out = t.model.forward(&mut cx, &x, &opts).unwrap();
        let (vars, _) = total_loss(&mut cx.g, &out, 0.01, &cfg.contrastive(), &cfg.mi_weights()).unwrap();
        let part = t.model.partition();
        let zero_for = |cx: &crate::nn::Ctx, root, groups: &[ParamGroup]| {
            let g = cx.g.backward(root);
            groups.iter().all(|grp| {
                part[grp].iter().all(|&id| {
                    g.get(cx.p(id)).is_none_or(|t| t.data().iter().all(|&v| v == 0.0))
                })
            })
        };
        assert!(zero_for(&cx, vars.nt_xent, &[ParamGroup::Content, ParamGroup::Prior, ParamGroup::Decoder]));
        assert!(zero_for(&cx, vars.kl_speaker.unwrap(), &[ParamGroup::Content, ParamGroup::Prior, ParamGroup::Decoder]));
        assert!(zero_for(&cx, vars.kl_content.unwrap(), &[ParamGroup::Speaker, ParamGroup::Decoder]));
        assert!(zero_for(&cx, vars.mi_s_x.unwrap(), &[ParamGroup::Content, ParamGroup::Prior, ParamGroup::Decoder]));
        assert!(zero_for(&cx, vars.recon.unwrap(), &[ParamGroup::Prior]));
        assert!(!zero_for(&cx, vars.recon.unwrap(), &[ParamGroup::Decoder]));
    }

    #[test]
    fn tiny_run_reduces_loss() {
        let spec = SyntheticSpec {
            num_speakers: 2,
            utts_per_speaker: 8,
            feat_dim: ModelConfig::test().feat_dim,
            min_frames: 14,
            max_frames: 18,
            ..SyntheticSpec::default()
        };
        let corpus = generate_synthetic(&spec).unwrap();
        let (_, mcfg, cfg) = tiny_setup();
        let cfg = TrainConfig { epochs: 5, ..cfg };
        let (_, rep) = train(&corpus, &Frontend::default(), &mcfg, &cfg, None, None).unwrap();
        // Frozen from the reference run (ratio 0.46).
        assert!(rep.epochs[4].mean.total < 0.75 * rep.epochs[0].mean.total);
    }

    #[test]
    fn undersized_corpus_is_a_resource_error() {
        let (corpus, mcfg, cfg) = tiny_setup();
        let cfg = TrainConfig { batch_pairs: 9, ..cfg };
        assert!(matches!(
            Trainer::new(&corpus, &Frontend::default(), &mcfg, &cfg),
            Err(Error::Resource(_))
        ));
    }
}
