//! One train-then-evaluate run on synthetic data, and the arms compared in
//! reports: SimCLR alone, SimCLR with frame-shuffled second views, and
//! SimCLR with the DSVAE branch.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::Config;
use crate::dataset::{generate_synthetic, make_trials, Corpus};
use crate::error::{Error, Result};
use crate::eval::{evaluate, extract_embeddings, probe_speaker_leakage, score_trials, EmbeddingSource, EvalReport, ProbeReport};
use crate::model::Dsvae;
use crate::train::{train, EpochSummary};

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Simclr,
    FrameShuffle,
    SimclrDsvae,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Simclr, Arm::FrameShuffle, Arm::SimclrDsvae];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Simclr => "simclr",
            Arm::FrameShuffle => "frame_shuffle",
            Arm::SimclrDsvae => "simclr_dsvae",
        }
    }

    /// `base` with the arm's switches applied; λ is kept for the DSVAE arm.
    pub fn apply(self, base: &Config) -> Config {
        let mut c = base.clone();
        match self {
            Arm::Simclr => {
                c.train.dsvae = false;
                c.train.frame_shuffle = false;
            }
            Arm::FrameShuffle => {
                c.train.dsvae = false;
                c.train.frame_shuffle = true;
            }
            Arm::SimclrDsvae => {
                c.train.dsvae = true;
                c.train.frame_shuffle = false;
            }
        }
        c
    }

    /// Classify a config by its switches.
    pub fn of(c: &Config) -> Arm {
        match (c.train.dsvae, c.train.frame_shuffle) {
            (true, _) => Arm::SimclrDsvae,
            (false, true) => Arm::FrameShuffle,
            (false, false) => Arm::Simclr,
        }
    }
}

/// `base` with model initialization and training randomness both set to `seed`.
pub fn with_seed(base: &Config, seed: u64) -> Config {
    let mut c = base.clone();
    c.model.seed = seed;
    c.train.seed = seed;
    c
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub arm: Arm,
    pub seed: u64,
    pub lambda: f64,
    pub checkpoint_id: String,
    pub epochs: Vec<EpochSummary>,
    /// Speaker verification on held-out synthetic speakers with `spk_emb`.
    pub eval: EvalReport,
    pub spk_probe: ProbeReport,
    pub content_probe: ProbeReport,
    /// The same content probe on the untrained model.
    pub content_probe_init: ProbeReport,
    pub config: Config,
}

impl RunSummary {
    pub fn first_total(&self) -> f64 {
        self.epochs.first().map_or(f64::NAN, |e| e.mean.total)
    }

    pub fn final_total(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.mean.total)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let p = dir.join(SUMMARY_FILE);
        fs::write(&p, serde_json::to_string_pretty(self).expect("summary serializes")).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(SUMMARY_FILE);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))
    }
}

/// Verification and probe results of `model` on the held-out speakers.
pub fn evaluate_model(model: &Dsvae, init: &Dsvae, cfg: &Config, eval_corpus: &Corpus, checkpoint_id: &str) -> Result<(EvalReport, ProbeReport, ProbeReport, ProbeReport)> {
    let labels = eval_corpus.labels();
    let e = &cfg.eval;
    let trials = make_trials(&labels, e.n_target, e.n_nontarget, e.trial_seed)?;
    let spk = extract_embeddings(model, eval_corpus, &cfg.frontend, EmbeddingSource::SpkEmb, None, checkpoint_id)?;
    let report = evaluate(&score_trials(&spk, &trials)?, e.p_target, e.c_miss, e.c_fa)?;
    let spk_probe = probe_speaker_leakage(&spk, &labels, e.probe_ridge)?;
    let con = extract_embeddings(model, eval_corpus, &cfg.frontend, EmbeddingSource::AvgConEmb, None, checkpoint_id)?;
    let content_probe = probe_speaker_leakage(&con, &labels, e.probe_ridge)?;
    let con0 = extract_embeddings(init, eval_corpus, &cfg.frontend, EmbeddingSource::AvgConEmb, None, "init")?;
    let content_probe_init = probe_speaker_leakage(&con0, &labels, e.probe_ridge)?;
    Ok((report, spk_probe, content_probe, content_probe_init))
}

/// Train on the synthetic training corpus, then evaluate on held-out
/// speakers. With `out_dir`, logs, checkpoints and `summary.json` land there.
pub fn run(cfg: &Config, out_dir: Option<&Path>) -> Result<RunSummary> {
    cfg.validate()?;
    let corpus = generate_synthetic(&cfg.synthetic)?;
    let eval_corpus = generate_synthetic(&cfg.eval_synthetic())?;
    let (model, report) = train(&corpus, &cfg.frontend, &cfg.model, &cfg.train, out_dir, None)?;
    let init = Dsvae::new(&cfg.model)?;
    let ck = Checkpoint::from_model(&model, serde_json::Value::Null, cfg.train.epochs, 0, cfg.train.seed, None);
    let id = ck.id();
    let (eval, spk_probe, content_probe, content_probe_init) = evaluate_model(&model, &init, cfg, &eval_corpus, &id)?;
    let summary = RunSummary {
        arm: Arm::of(cfg),
        seed: cfg.train.seed,
        lambda: cfg.train.lambda,
        checkpoint_id: id,
        epochs: report.epochs,
        eval,
        spk_probe,
        content_probe,
        content_probe_init,
        config: cfg.clone(),
    };
    if let Some(d) = out_dir {
        summary.save(d)?;
    }
    Ok(summary)
}

/// Seed-averaged results of runs that share an arm and λ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub arm: Arm,
    pub lambda: f64,
    pub seeds: Vec<u64>,
    pub eer: f64,
    pub min_dcf: f64,
    pub spk_probe_eer: f64,
    pub content_probe_eer: f64,
    pub content_probe_init_eer: f64,
    pub content_probe_accuracy: f64,
    pub content_probe_init_accuracy: f64,
}

/// Group by arm (and λ for the DSVAE arm) in `Arm::ALL` order, then by λ.
pub fn group_runs(runs: &[RunSummary]) -> Vec<GroupRow> {
    let key = |r: &RunSummary| match r.arm {
        Arm::SimclrDsvae => r.lambda,
        _ => 0.0,
    };
    let mut rows: Vec<GroupRow> = Vec::new();
    for arm in Arm::ALL {
        let mut lambdas: Vec<f64> = runs.iter().filter(|r| r.arm == arm).map(key).collect();
        lambdas.sort_by(f64::total_cmp);
        lambdas.dedup();
        for l in lambdas {
            let g: Vec<&RunSummary> = runs.iter().filter(|r| r.arm == arm && key(r) == l).collect();
            let mean = |f: &dyn Fn(&RunSummary) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / g.len() as f64;
            rows.push(GroupRow {
                arm,
                lambda: l,
                seeds: g.iter().map(|r| r.seed).collect(),
                eer: mean(&|r| r.eval.eer),
                min_dcf: mean(&|r| r.eval.min_dcf),
                spk_probe_eer: mean(&|r| r.spk_probe.eer),
                content_probe_eer: mean(&|r| r.content_probe.eer),
                content_probe_init_eer: mean(&|r| r.content_probe_init.eer),
                content_probe_accuracy: mean(&|r| r.content_probe.accuracy),
                content_probe_init_accuracy: mean(&|r| r.content_probe_init.accuracy),
            });
        }
    }
    rows
}
