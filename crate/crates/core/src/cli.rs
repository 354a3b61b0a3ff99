//! Command-line front end. Every config field is also a flag: fields of the
//! `train` section go bare (`--lambda`), others carry their section
//! (`--model-channels`, `--eval-p-target`).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Arg, ArgAction, ArgMatches, Command};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{fnv1a, Checkpoint};
use crate::config::{Config, Profile};
use crate::dataset::{all_pair_trials, generate_synthetic, make_trials, Corpus, TrialList};
use crate::error::{Error, Result};
use crate::eval::{evaluate, extract_embeddings, score_trials, EmbeddingArchive, EmbeddingSource, TrialScoreSet};
use crate::experiment::{self, group_runs, with_seed, Arm, GroupRow, RunSummary};
use crate::train::train;

pub const DEFAULT_GRID: [f64; 5] = [0.0, 0.001, 0.01, 0.05, 0.1];
pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Flag name for a dotted config key.
pub fn flag_for(key: &str) -> String {
    let name = key.strip_prefix("train.").unwrap_or(key);
    name.replace(['.', '_'], "-")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub config: Config,
    pub seed: u64,
    /// Path → content id.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// Content id of a file, or of a directory tree (relative paths and file ids).
pub fn artifact_id(path: &Path) -> Result<String> {
    fn walk(root: &Path, dir: &Path, acc: &mut Vec<u8>) -> Result<()> {
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
            .collect::<Result<_>>()?;
        entries.sort();
        for p in entries {
            if p.file_name().is_some_and(|n| n == MANIFEST_FILE) {
                continue;
            }
            if p.is_dir() {
                walk(root, &p, acc)?;
            } else {
                acc.extend_from_slice(p.strip_prefix(root).unwrap_or(&p).to_string_lossy().as_bytes());
                acc.extend_from_slice(artifact_id(&p)?.as_bytes());
            }
        }
        Ok(())
    }
    if path.is_dir() {
        let mut acc = Vec::new();
        walk(path, path, &mut acc)?;
        Ok(fnv1a(&acc))
    } else {
        Ok(fnv1a(&fs::read(path).map_err(|e| Error::io(path, e))?))
    }
}

pub fn command() -> Command {
    let defaults = Config::profile(Profile::Desk);
    let mut cmd = Command::new("dscl")
        .about("Contrastive speaker embeddings with a disentangling sequential VAE: train, extract, score, evaluate")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("profile")
                .long("profile")
                .global(true)
                .value_parser(["paper", "desk", "test"])
                .help("built-in settings to start from [default: desk]"),
        )
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("TOML file overlaid on the profile"),
        );
    for key in Config::keys() {
        let default = defaults.get(&key).map(|v| v.to_string()).unwrap_or_default();
        cmd = cmd.arg(
            Arg::new(key.clone())
                .long(flag_for(&key))
                .global(true)
                .value_name("VALUE")
                .help_heading("Config fields")
                .help(format!("{key} (desk: {default})")),
        );
    }
    let out = |help: &'static str| {
        Arg::new("out")
            .long("out")
            .required(true)
            .value_parser(clap::value_parser!(PathBuf))
            .help(help)
    };
    let path = |name: &'static str, help: &'static str| {
        Arg::new(name)
            .long(name)
            .required(true)
            .value_parser(clap::value_parser!(PathBuf))
            .help(help)
    };
    let corpus = || path("corpus", "corpus directory or manifest file");
    cmd.subcommand(
        Command::new("synth")
            .about("Generate a synthetic feature corpus")
            .arg(out("output directory"))
            .arg(
                Arg::new("split")
                    .long("split")
                    .value_parser(["train", "eval"])
                    .default_value("train")
                    .help("training speakers or the held-out evaluation speakers"),
            )
            .arg(Arg::new("force").long("force").action(ArgAction::SetTrue).help("overwrite a non-empty output directory")),
    )
    .subcommand(
        Command::new("trials")
            .about("Sample a verification trial list")
            .arg(corpus())
            .arg(out("trial list file"))
            .arg(Arg::new("all-pairs").long("all-pairs").action(ArgAction::SetTrue).help("every utterance pair instead of sampling")),
    )
    .subcommand(
        Command::new("train")
            .about("Train a model")
            .arg(corpus().required(false).help("training corpus [default: synthetic from config]"))
            .arg(out("run directory"))
            .arg(
                Arg::new("resume")
                    .long("resume")
                    .value_parser(clap::value_parser!(PathBuf))
                    .help("checkpoint to continue from"),
            ),
    )
    .subcommand(
        Command::new("extract")
            .about("Embed a corpus with a trained checkpoint")
            .arg(path("checkpoint", "checkpoint file"))
            .arg(corpus())
            .arg(
                Arg::new("source")
                    .long("source")
                    .value_parser(["spk_emb", "avg_con_emb"])
                    .default_value("spk_emb")
                    .help("speaker posterior mean, or time-averaged content posterior mean"),
            )
            .arg(out("embedding archive file")),
    )
    .subcommand(
        Command::new("score")
            .about("Cosine-score a trial list")
            .arg(path("embeddings", "embedding archive"))
            .arg(path("trials", "trial list"))
            .arg(out("score file")),
    )
    .subcommand(
        Command::new("eval")
            .about("EER and minDCF of a score file")
            .arg(path("scores", "score file"))
            .arg(
                Arg::new("out")
                    .long("out")
                    .value_parser(clap::value_parser!(PathBuf))
                    .help("write the report as JSON"),
            ),
    )
    .subcommand(
        Command::new("run")
            .about("Train on synthetic speakers and evaluate on held-out ones")
            .arg(out("run directory")),
    )
    .subcommand(
        Command::new("sweep")
            .about("Train and evaluate over a grid of λ")
            .arg(out("sweep directory"))
            .arg(
                Arg::new("grid")
                    .long("grid")
                    .value_delimiter(',')
                    .value_parser(clap::value_parser!(f64))
                    .help("λ values [default: 0,0.001,0.01,0.05,0.1]"),
            )
            .arg(
                Arg::new("seeds")
                    .long("seeds")
                    .value_delimiter(',')
                    .value_parser(clap::value_parser!(u64))
                    .help("seeds per λ [default: the configured seed]"),
            ),
    )
    .subcommand(
        Command::new("report")
            .about("Compare completed runs")
            .arg(
                Arg::new("runs")
                    .num_args(1..)
                    .required(true)
                    .value_parser(clap::value_parser!(PathBuf))
                    .help("run directories (each holding summary.json)"),
            )
            .arg(
                Arg::new("out")
                    .long("out")
                    .value_parser(clap::value_parser!(PathBuf))
                    .help("write the grouped rows as JSON"),
            ),
    )
}

/// Resolve profile, config file and per-field flags.
pub fn resolve_config(m: &ArgMatches) -> Result<Config> {
    let profile: Profile = m.get_one::<String>("profile").map_or(Ok(Profile::Desk), |s| s.parse())?;
    let mut cfg = match m.get_one::<PathBuf>("config") {
        Some(p) => Config::load(p, profile)?,
        None => Config::profile(profile),
    };
    for key in Config::keys() {
        if let Some(v) = m.get_one::<String>(&key) {
            cfg.set(&key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_corpus(path: &Path, cfg: &Config) -> Result<Corpus> {
    let manifest = if path.is_dir() { path.join("manifest.txt") } else { path.to_path_buf() };
    Corpus::load_manifest(&manifest, &cfg.frontend)
}

struct Ctx<'a> {
    name: &'a str,
    argv: Vec<String>,
    config_path: Option<PathBuf>,
    cfg: Config,
    started: f64,
}

impl Ctx<'_> {
    fn manifest(&self, dir: &Path, inputs: &[&Path], outputs: &[&Path]) -> Result<()> {
        let ids = |ps: &[&Path]| -> Result<BTreeMap<String, String>> {
            ps.iter().map(|p| Ok((p.display().to_string(), artifact_id(p)?))).collect()
        };
        let m = RunManifest {
            command: self.name.to_string(),
            argv: self.argv.clone(),
            config_path: self.config_path.clone(),
            config: self.cfg.clone(),
            seed: self.cfg.train.seed,
            inputs: ids(inputs)?,
            outputs: ids(outputs)?,
            started_unix: self.started,
            finished_unix: now(),
        };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join(MANIFEST_FILE);
        fs::write(&p, serde_json::to_string_pretty(&m).expect("manifest serializes")).map_err(|e| Error::io(&p, e))?;
        let c = dir.join("config.toml");
        fs::write(&c, self.cfg.to_toml()).map_err(|e| Error::io(&c, e))
    }
}

fn parent_dir(p: &Path) -> PathBuf {
    p.parent().filter(|d| !d.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn cmd_synth(ctx: &Ctx, m: &ArgMatches) -> Result<i32> {
    let out = m.get_one::<PathBuf>("out").unwrap();
    let non_empty = out.is_dir() && fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_some();
    if non_empty {
        if !m.get_flag("force") {
            return Err(Error::validation(format!("{} is not empty (use --force to overwrite)", out.display())));
        }
        let feats = out.join("feats");
        if feats.is_dir() {
            fs::remove_dir_all(&feats).map_err(|e| Error::io(&feats, e))?;
        }
    }
    let spec = match m.get_one::<String>("split").map(String::as_str) {
        Some("eval") => ctx.cfg.eval_synthetic(),
        _ => ctx.cfg.synthetic.clone(),
    };
    let corpus = generate_synthetic(&spec)?;
    let mp = corpus.write_features(out)?;
    ctx.manifest(out, &[], &[&mp, &out.join("feats")])?;
    println!("{} utterances from {} speakers -> {}", corpus.len(), spec.num_speakers, mp.display());
    Ok(0)
}

fn cmd_trials(ctx: &Ctx, m: &ArgMatches) -> Result<i32> {
    let corpus_path = m.get_one::<PathBuf>("corpus").unwrap();
    let out = m.get_one::<PathBuf>("out").unwrap();
    let corpus = load_corpus(corpus_path, &ctx.cfg)?;
    let labels = corpus.labels();
    let trials = if m.get_flag("all-pairs") {
        all_pair_trials(&labels)
    } else {
        let e = &ctx.cfg.eval;
        make_trials(&labels, e.n_target, e.n_nontarget, e.trial_seed)?
    };
    trials.write(out)?;
    println!("{} trials -> {}", trials.len(), out.display());
    Ok(0)
}

fn cmd_train(ctx: &Ctx, m: &ArgMatches) -> Result<i32> {
    let out = m.get_one::<PathBuf>("out").unwrap();
    let corpus_path = m.get_one::<PathBuf>("corpus");
    let corpus = match corpus_path {
        Some(p) => load_corpus(p, &ctx.cfg)?,
        None => generate_synthetic(&ctx.cfg.synthetic)?,
    };
    let resume_path = m.get_one::<PathBuf>("resume");
    let resume = resume_path.map(|p| Checkpoint::load(p)).transpose()?;
    let (_, report) = train(&corpus, &ctx.cfg.frontend, &ctx.cfg.model, &ctx.cfg.train, Some(out), resume.as_ref())?;
    let mut inputs: Vec<&Path> = corpus_path.iter().map(|p| p.as_path()).collect();
    inputs.extend(resume_path.map(|p| p.as_path()));
    let outputs: Vec<&Path> = report.final_checkpoint.iter().map(|p| p.as_path()).collect();
    ctx.manifest(out, &inputs, &outputs)?;
    if let Some(last) = report.epochs.last() {
        println!(
            "epoch {} total {:.4} nt_xent {:.4} dsvae {:.4}",
            last.epoch, last.mean.total, last.mean.nt_xent, last.mean.dsvae_total
        );
    }
    if let Some(p) = &report.final_checkpoint {
        println!("checkpoint {}", p.display());
    }
    Ok(0)
}

fn cmd_extract(ctx: &Ctx, m: &ArgMatches) -> Result<i32> {
    let ck_path = m.get_one::<PathBuf>("checkpoint").unwrap();
    let corpus_path = m.get_one::<PathBuf>("corpus").unwrap();
    let out = m.get_one::<PathBuf>("out").unwrap();
    let source: EmbeddingSource = m.get_one::<String>("source").unwrap().parse()?;
    let ck = Checkpoint::load(ck_path)?;
    let model = ck.restore_model()?;
    let corpus = load_corpus(corpus_path, &ctx.cfg)?;
    let archive = extract_embeddings(&model, &corpus, &ctx.cfg.frontend, source, None, &ck.id())?;
    archive.save(out)?;
    ctx.manifest(&parent_dir(out), &[ck_path, corpus_path], &[out])?;
    println!("{} embeddings of dim {} -> {}", archive.vectors.len(), archive.dim, out.display());
    Ok(0)
}

fn cmd_score(ctx: &Ctx, m: &ArgMatches) -> Result<i32> {
    let emb = m.get_one::<PathBuf>("embeddings").unwrap();
    let trials_path = m.get_one::<PathBuf>("trials").unwrap();
    let out = m.get_one::<PathBuf>("out").unwrap();
    let scores = score_trials(&EmbeddingArchive::load(emb)?, &TrialList::read(trials_path)?)?;
    scores.write(out)?;
    ctx.manifest(&parent_dir(out), &[emb, trials_path], &[out])?;
    println!("{} scores -> {}", scores.scores.len(), out.display());
    Ok(0)
}

#[derive(Serialize)]
struct EvalDoc<'a> {
    #[serde(flatten)]
    report: &'a crate::eval::EvalReport,
    scores: &'a Path,
    config: &'a crate::config::EvalConfig,
}

fn cmd_eval(ctx: &Ctx, m: &ArgMatches) -> Result<i32> {
    let path = m.get_one::<PathBuf>("scores").unwrap();
    let e = &ctx.cfg.eval;
    let r = evaluate(&TrialScoreSet::read(path)?, e.p_target, e.c_miss, e.c_fa)?;
    println!("EER {:.4}", r.eer);
    println!("minDCF {:.4} (p_target {})", r.min_dcf, r.p_target);
    println!("trials {} target / {} nontarget", r.n_target, r.n_nontarget);
    if let Some(out) = m.get_one::<PathBuf>("out") {
        let doc = EvalDoc {
            report: &r,
            scores: path,
            config: e,
        };
        fs::write(out, serde_json::to_string_pretty(&doc).expect("report serializes")).map_err(|e| Error::io(out, e))?;
    }
    Ok(0)
}

fn print_run(label: &str, s: &RunSummary) {
    println!(
        "{label}: EER {:.4} minDCF {:.4} | spk_emb probe EER {:.4} | avg_con_emb probe EER {:.4} (init {:.4})",
        s.eval.eer, s.eval.min_dcf, s.spk_probe.eer, s.content_probe.eer, s.content_probe_init.eer
    );
}

fn cmd_run(ctx: &Ctx, m: &ArgMatches) -> Result<i32> {
    let out = m.get_one::<PathBuf>("out").unwrap();
    let s = experiment::run(&ctx.cfg, Some(out))?;
    ctx.manifest(out, &[], &[&out.join(experiment::SUMMARY_FILE)])?;
    print_run(Arm::of(&ctx.cfg).name(), &s);
    Ok(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub runs: usize,
    pub failed: usize,
    pub eer: f64,
    pub min_dcf: f64,
}

/// Both panels (EER and minDCF against λ) as one SVG. λ sits on an evenly
/// spaced categorical axis since the grid includes 0.
pub fn sweep_svg(rows: &[SweepRow]) -> String {
    let (w, h, pad) = (320.0, 240.0, 40.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"10\">\n",
        2.0 * w
    );
    for (panel, (title, get)) in [("EER", (|r: &SweepRow| r.eer) as fn(&SweepRow) -> f64), ("minDCF", |r: &SweepRow| r.min_dcf)]
        .into_iter()
        .enumerate()
    {
        let x0 = panel as f64 * w;
        let vals: Vec<f64> = rows.iter().map(get).filter(|v| v.is_finite()).collect();
        let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let (lo, hi) = if vals.is_empty() { (0.0, 1.0) } else if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        let n = rows.len().max(2) as f64 - 1.0;
        let px = |i: usize| x0 + pad + (w - 2.0 * pad) * i as f64 / n;
        let py = |v: f64| h - pad - (h - 2.0 * pad) * (v - lo) / (hi - lo);
        svg += &format!("<text x=\"{}\" y=\"16\" text-anchor=\"middle\">{title} vs λ</text>\n", x0 + w / 2.0);
        svg += &format!(
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/><line x1=\"{0}\" y1=\"{3}\" x2=\"{0}\" y2=\"{1}\" stroke=\"black\"/>\n",
            x0 + pad,
            h - pad,
            x0 + w - pad,
            pad
        );
        svg += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{hi:.3}</text>\n", x0 + pad - 4.0, pad + 4.0);
        svg += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{lo:.3}</text>\n", x0 + pad - 4.0, h - pad);
        let mut pts = Vec::new();
        for (i, r) in rows.iter().enumerate() {
            svg += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", px(i), h - pad + 14.0, r.lambda);
            let v = get(r);
            if v.is_finite() {
                pts.push(format!("{:.2},{:.2}", px(i), py(v)));
                svg += &format!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\"/>\n", px(i), py(v));
            }
        }
        svg += &format!("<polyline fill=\"none\" stroke=\"steelblue\" points=\"{}\"/>\n", pts.join(" "));
    }
    svg + "</svg>\n"
}

fn cmd_sweep(ctx: &Ctx, m: &ArgMatches) -> Result<i32> {
    let out = m.get_one::<PathBuf>("out").unwrap();
    let grid: Vec<f64> = m.get_many::<f64>("grid").map_or_else(|| DEFAULT_GRID.to_vec(), |v| v.copied().collect());
    let seeds: Vec<u64> = m.get_many::<u64>("seeds").map_or_else(|| vec![ctx.cfg.train.seed], |v| v.copied().collect());
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::validation("sweep needs a non-empty grid and seed list"));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rows = Vec::new();
    let mut first_failure: Option<Error> = None;
    for &lambda in &grid {
        let mut ok = Vec::new();
        for &seed in &seeds {
            let mut cfg = with_seed(&Arm::SimclrDsvae.apply(&ctx.cfg), seed);
            cfg.train.lambda = lambda;
            let dir = out.join(format!("lambda_{lambda}")).join(format!("seed_{seed}"));
            // A finished run with the same config is reused.
            let done = RunSummary::load(&dir).ok().filter(|s| s.config == cfg);
            let res = match done {
                Some(s) => {
                    log::info!("reusing {}", dir.display());
                    Ok(s)
                }
                None => experiment::run(&cfg, Some(&dir)),
            };
            match res {
                Ok(s) => {
                    print_run(&format!("λ={lambda} seed {seed}"), &s);
                    ok.push(s);
                }
                Err(e) => {
                    log::error!("λ={lambda} seed {seed} failed: {e}");
                    first_failure.get_or_insert(e);
                }
            }
        }
        let mean = |f: fn(&RunSummary) -> f64| {
            if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().map(f).sum::<f64>() / ok.len() as f64
            }
        };
        rows.push(SweepRow {
            lambda,
            runs: ok.len(),
            failed: seeds.len() - ok.len(),
            eer: mean(|s| s.eval.eer),
            min_dcf: mean(|s| s.eval.min_dcf),
        });
    }
    let csv_path = out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::validation(format!("{}: {e}", csv_path.display())))?;
    for r in &rows {
        w.serialize(r).map_err(|e| Error::validation(format!("{}: {e}", csv_path.display())))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let svg_path = out.join("sweep.svg");
    fs::write(&svg_path, sweep_svg(&rows)).map_err(|e| Error::io(&svg_path, e))?;
    println!("{:>8}  {:>4}  {:>8}  {:>8}", "lambda", "runs", "EER", "minDCF");
    for r in &rows {
        println!("{:>8}  {:>4}  {:>8.4}  {:>8.4}", r.lambda, r.runs, r.eer, r.min_dcf);
    }
    ctx.manifest(out, &[], &[&csv_path])?;
    match first_failure {
        Some(e) => Err(e),
        None => Ok(0),
    }
}

fn arm_label(r: &GroupRow) -> String {
    match r.arm {
        Arm::Simclr => "SimCLR".into(),
        Arm::FrameShuffle => "SimCLR + frame shuffle".into(),
        Arm::SimclrDsvae => format!("SimCLR + DSVAE (λ={})", r.lambda),
    }
}

/// Table-1-style and Table-2-style text for grouped runs, followed by the
/// published reference values.
pub fn render_report(rows: &[GroupRow]) -> String {
    let mut s = String::new();
    s += "Speaker verification, held-out synthetic speakers (seed means)\n";
    s += &format!("{:<30} {:>5} {:>8} {:>8}\n", "system", "seeds", "EER(%)", "minDCF");
    for r in rows {
        s += &format!("{:<30} {:>5} {:>8.2} {:>8.3}\n", arm_label(r), r.seeds.len(), 100.0 * r.eer, r.min_dcf);
    }
    s += "  reference values on VoxCeleb1-O (paper, not reproduced):\n";
    s += &format!("  {:<28} {:>5} {:>8.2} {:>8.3}\n", "SimCLR", "-", 7.13, 0.571);
    s += &format!("  {:<28} {:>5} {:>8.2} {:>8.3}\n", "SimCLR + frame shuffle", "-", 7.90, 0.570);
    s += &format!("  {:<28} {:>5} {:>8.2} {:>8.3}\n", "SimCLR + DSVAE", "-", 6.37, 0.533);
    s += "\nRepresentation probes, all-pairs cosine EER (seed means)\n";
    s += &format!("{:<30} {:<22} {:>8} {:>9}\n", "system", "representation", "EER(%)", "probe acc");
    for r in rows {
        let l = arm_label(r);
        s += &format!("{:<30} {:<22} {:>8.2} {:>9}\n", l, "spk_emb", 100.0 * r.spk_probe_eer, "-");
        s += &format!(
            "{:<30} {:<22} {:>8.2} {:>9.3}\n",
            l,
            "avg_con_emb",
            100.0 * r.content_probe_eer,
            r.content_probe_accuracy
        );
        s += &format!(
            "{:<30} {:<22} {:>8.2} {:>9.3}\n",
            l,
            "avg_con_emb (init)",
            100.0 * r.content_probe_init_eer,
            r.content_probe_init_accuracy
        );
    }
    s += "  reference values on VoxCeleb1-O (paper, not reproduced):\n";
    s += &format!("  {:<28} {:<22} {:>8.2}\n", "DSVAE", "spk_emb", 22.87);
    s += &format!("  {:<28} {:<22} {:>8.2}\n", "SimCLR + DSVAE", "avg_con_emb", 47.51);
    s += &format!("  {:<28} {:<22} {:>8.2}\n", "SimCLR + DSVAE (init)", "avg_con_emb", 41.32);
    s
}

fn cmd_report(m: &ArgMatches) -> Result<i32> {
    let dirs: Vec<&PathBuf> = m.get_many::<PathBuf>("runs").map(|v| v.collect()).unwrap_or_default();
    if dirs.is_empty() {
        return Err(Error::validation("report needs at least one run directory"));
    }
    let missing: Vec<String> = dirs
        .iter()
        .map(|d| d.join(experiment::SUMMARY_FILE))
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Resource(format!("missing run artifacts: {}", missing.join(", "))));
    }
    let runs: Vec<RunSummary> = dirs.iter().map(|d| RunSummary::load(d)).collect::<Result<_>>()?;
    let rows = group_runs(&runs);
    print!("{}", render_report(&rows));
    if let Some(out) = m.get_one::<PathBuf>("out") {
        fs::write(out, serde_json::to_string_pretty(&rows).expect("rows serialize")).map_err(|e| Error::io(out, e))?;
    }
    Ok(0)
}

/// Parse and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let m = match command().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (name, sub) = m.subcommand().expect("subcommand is required");
    let result = (|| {
        if name == "report" {
            return cmd_report(sub);
        }
        let ctx = Ctx {
            name,
            argv: argv.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
            config_path: sub.get_one::<PathBuf>("config").cloned(),
            cfg: resolve_config(sub)?,
            started: now(),
        };
        match name {
            "synth" => cmd_synth(&ctx, sub),
            "trials" => cmd_trials(&ctx, sub),
            "train" => cmd_train(&ctx, sub),
            "extract" => cmd_extract(&ctx, sub),
            "score" => cmd_score(&ctx, sub),
            "eval" => cmd_eval(&ctx, sub),
            "run" => cmd_run(&ctx, sub),
            "sweep" => cmd_sweep(&ctx, sub),
            _ => unreachable!("clap rejects unknown subcommands"),
        }
    })();
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
