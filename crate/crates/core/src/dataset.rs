//! Corpora, positive-pair mini-batches, synthetic data and trial lists.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featio::{
    self, apply_cmn, augment, augment_features, extract_fbank, AugmentKind, AugmentationSpec, FeatureSequence,
    SignalSource, Waveform,
};
use crate::rng::{derive_seed, rng_for, tag};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum UttContent {
    Audio(Waveform),
    Features(FeatureSequence),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub utt_id: String,
    pub speaker_id: String,
    pub content: UttContent,
}

/// Filter-bank front end used for audio corpora.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frontend {
    pub sample_rate: u32,
    pub n_mels: usize,
    pub window_ms: f64,
    pub shift_ms: f64,
}

impl Default for Frontend {
    fn default() -> Self {
        Frontend {
            sample_rate: 16000,
            n_mels: 80,
            window_ms: 25.0,
            shift_ms: 10.0,
        }
    }
}

impl Frontend {
    /// Frames covering `seconds` of audio.
    pub fn frames_for(&self, seconds: f64) -> usize {
        let samples = (seconds * self.sample_rate as f64).round() as usize;
        let win = (self.window_ms * self.sample_rate as f64 / 1000.0).round() as usize;
        let shift = (self.shift_ms * self.sample_rate as f64 / 1000.0).round() as usize;
        featio::frame_count(samples, win, shift.max(1))
    }

    pub fn featurize(&self, w: &Waveform) -> Result<FeatureSequence> {
        extract_fbank(w, self.n_mels, self.window_ms, self.shift_ms)
    }
}

/// An in-memory utterance source with speaker labels.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub utts: Vec<Utterance>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.utts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utts.is_empty()
    }

    pub fn labels(&self) -> Vec<(String, String)> {
        self.utts
            .iter()
            .map(|u| (u.utt_id.clone(), u.speaker_id.clone()))
            .collect()
    }

    pub fn find(&self, utt_id: &str) -> Option<&Utterance> {
        self.utts.iter().find(|u| u.utt_id == utt_id)
    }

    /// Feature dimension of the corpus as seen by the model.
    pub fn feat_dim(&self, frontend: &Frontend) -> Option<usize> {
        self.utts.first().map(|u| match &u.content {
            UttContent::Audio(_) => frontend.n_mels,
            UttContent::Features(f) => f.dim(),
        })
    }

    /// Full-utterance CMN-normalized features (no augmentation).
    pub fn features(&self, index: usize, frontend: &Frontend) -> Result<FeatureSequence> {
        let u = &self.utts[index];
        let f = match &u.content {
            UttContent::Audio(w) => frontend.featurize(w)?,
            UttContent::Features(f) => f.clone(),
        };
        Ok(apply_cmn(&f))
    }

    /// Load a manifest of `<utt_id> <speaker_id> <path>` lines. Paths ending
    /// in `.feat` are feature files; anything else is read as 16-bit PCM
    /// audio at `frontend.sample_rate`. Relative paths resolve against the
    /// manifest's directory.
    pub fn load_manifest(path: &Path, frontend: &Frontend) -> Result<Corpus> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut utts = Vec::new();
        let mut seen = HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::format(path, format!("line {}: expected 3 fields", lineno + 1)));
            }
            let (utt, spk, rel) = (fields[0], fields[1], fields[2]);
            if !seen.insert(utt.to_string()) {
                return Err(Error::format(path, format!("duplicate utterance id {utt}")));
            }
            let file = if Path::new(rel).is_absolute() {
                PathBuf::from(rel)
            } else {
                base.join(rel)
            };
            let content = if file.extension().is_some_and(|e| e == "feat") {
                UttContent::Features(featio::read_features(&file, utt)?)
            } else {
                let mut w = featio::read_wav(&file, frontend.sample_rate)?;
                w.utt_id = utt.to_string();
                UttContent::Audio(w)
            };
            utts.push(Utterance {
                utt_id: utt.to_string(),
                speaker_id: spk.to_string(),
                content,
            });
        }
        Ok(Corpus { utts })
    }

    /// Write a feature corpus as `dir/manifest.txt` plus `dir/feats/*.feat`.
    pub fn write_features(&self, dir: &Path) -> Result<PathBuf> {
        let feats = dir.join("feats");
        fs::create_dir_all(&feats).map_err(|e| Error::io(&feats, e))?;
        let mut manifest = String::new();
        for u in &self.utts {
            let UttContent::Features(f) = &u.content else {
                return Err(Error::validation("write_features needs a feature corpus"));
            };
            let rel = format!("feats/{}.feat", u.utt_id);
            featio::write_features(&dir.join(&rel), f)?;
            manifest.push_str(&format!("{} {} {}\n", u.utt_id, u.speaker_id, rel));
        }
        let mp = dir.join("manifest.txt");
        fs::write(&mp, manifest).map_err(|e| Error::io(&mp, e))?;
        Ok(mp)
    }
}

// ---- augmentation policy ---------------------------------------------------

/// Augmentation distribution for one view of a positive pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewPolicy {
    pub p_noise: f64,
    pub p_reverb: f64,
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    /// Permute the frames of this view after feature extraction.
    pub frame_shuffle: bool,
}

impl Default for ViewPolicy {
    fn default() -> Self {
        ViewPolicy {
            p_noise: 0.4,
            p_reverb: 0.2,
            snr_db_min: 5.0,
            snr_db_max: 20.0,
            frame_shuffle: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct AugPolicy {
    pub views: [ViewPolicy; 2],
    /// Noise clips drawn uniformly (audio corpora); synthetic noise otherwise.
    pub noise_files: Vec<PathBuf>,
    pub rir_files: Vec<PathBuf>,
}

impl AugPolicy {
    fn draw(&self, view: usize, seed: u64) -> AugmentationSpec {
        let p = &self.views[view];
        let mut rng = rng_for(seed, &[tag::AUGMENT, view as u64]);
        let u: f64 = rng.gen();
        let src_seed = rng.gen::<u64>();
        if u < p.p_noise {
            let snr = if p.snr_db_max > p.snr_db_min {
                rng.gen_range(p.snr_db_min..p.snr_db_max)
            } else {
                p.snr_db_min
            };
            let src = match self.noise_files.as_slice() {
                [] => SignalSource::Generator(src_seed),
                files => SignalSource::File(files[rng.gen_range(0..files.len())].clone()),
            };
            AugmentationSpec::additive(snr, src)
        } else if u < p.p_noise + p.p_reverb {
            let src = match self.rir_files.as_slice() {
                [] => SignalSource::Generator(src_seed),
                files => SignalSource::File(files[rng.gen_range(0..files.len())].clone()),
            };
            AugmentationSpec::reverb(src)
        } else {
            AugmentationSpec::none()
        }
    }
}

// ---- pair batches ----------------------------------------------------------

/// `N` positive pairs; both views of pair `n` come from `utt_ids[n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub views: Vec<[FeatureSequence; 2]>,
    pub utt_ids: Vec<String>,
    pub seg_frames: usize,
}

impl PairBatch {
    pub fn n_pairs(&self) -> usize {
        self.views.len()
    }

    pub fn feat_dim(&self) -> usize {
        self.views[0][0].dim()
    }

    /// All `2N` segments as a `(2N, F, T)` tensor, view-major: row `i·N + n`
    /// holds view `i` of pair `n`.
    pub fn to_tensor(&self) -> Tensor {
        let (n, f, t) = (self.n_pairs(), self.feat_dim(), self.seg_frames);
        let mut data = vec![0.0; 2 * n * f * t];
        for view in 0..2 {
            for (pi, pair) in self.views.iter().enumerate() {
                let seq = &pair[view];
                let base = (view * n + pi) * f * t;
                for ti in 0..t {
                    for (fi, v) in seq.row(ti).iter().enumerate() {
                        data[base + fi * t + ti] = *v;
                    }
                }
            }
        }
        Tensor::new(vec![2 * n, f, t], data)
    }
}

/// How long a training segment is.
#[derive(Clone, Copy, Debug)]
pub struct SegmentSpec {
    pub seconds: f64,
}

fn eligible(u: &Utterance, seg: SegmentSpec, frontend: &Frontend) -> bool {
    match &u.content {
        UttContent::Audio(w) => w.samples.len() >= (seg.seconds * w.sample_rate as f64).round() as usize,
        UttContent::Features(f) => f.num_frames() >= frontend.frames_for(seg.seconds),
    }
}

/// Indices of utterances long enough for `seg`, warning about the rest.
pub fn eligible_indices(corpus: &Corpus, seg: SegmentSpec, frontend: &Frontend) -> Vec<usize> {
    let mut out = Vec::with_capacity(corpus.len());
    for (i, u) in corpus.utts.iter().enumerate() {
        if eligible(u, seg, frontend) {
            out.push(i);
        } else {
            log::warn!("skipping {}: shorter than {} s segment", u.utt_id, seg.seconds);
        }
    }
    out
}

fn make_view(
    u: &Utterance,
    seg: SegmentSpec,
    frontend: &Frontend,
    policy: &AugPolicy,
    view: usize,
    seed: u64,
) -> Result<FeatureSequence> {
    let mut rng = rng_for(seed, &[tag::BATCH, view as u64]);
    let spec = policy.draw(view, seed);
    let feats = match &u.content {
        UttContent::Audio(w) => {
            let len = (seg.seconds * w.sample_rate as f64).round() as usize;
            let start = rng.gen_range(0..=w.samples.len() - len);
            let crop = Waveform::new(w.samples[start..start + len].to_vec(), w.sample_rate, u.utt_id.clone())?;
            let aug = augment(&crop, &spec, derive_seed(seed, &[view as u64]))?;
            frontend.featurize(&aug)?
        }
        UttContent::Features(f) => {
            let len = frontend.frames_for(seg.seconds);
            let start = rng.gen_range(0..=f.num_frames() - len);
            augment_features(&f.crop(start, len)?, &spec, derive_seed(seed, &[view as u64]))?
        }
    };
    let feats = apply_cmn(&feats);
    if policy.views[view].frame_shuffle {
        let shuffle = AugmentationSpec {
            kind: AugmentKind::FrameShuffle,
            ..AugmentationSpec::none()
        };
        return augment_features(&feats, &shuffle, derive_seed(seed, &[view as u64, 99]));
    }
    Ok(feats)
}

/// Build a batch from explicit utterance indices (one pair per index).
pub fn pair_batch_from(
    corpus: &Corpus,
    indices: &[usize],
    seg: SegmentSpec,
    frontend: &Frontend,
    policy: &AugPolicy,
    rng_seed: u64,
) -> Result<PairBatch> {
    if indices.len() < 2 {
        return Err(Error::validation("a pair batch needs at least 2 pairs"));
    }
    let mut views = Vec::with_capacity(indices.len());
    let mut utt_ids = Vec::with_capacity(indices.len());
    for (n, &i) in indices.iter().enumerate() {
        let u = &corpus.utts[i];
        let pair_seed = derive_seed(rng_seed, &[n as u64]);
        let v0 = make_view(u, seg, frontend, policy, 0, pair_seed)?;
        let v1 = make_view(u, seg, frontend, policy, 1, pair_seed)?;
        views.push([v0, v1]);
        utt_ids.push(u.utt_id.clone());
    }
    let seg_frames = views[0][0].num_frames();
    let dim = views[0][0].dim();
    if views
        .iter()
        .flatten()
        .any(|v| v.num_frames() != seg_frames || v.dim() != dim)
    {
        return Err(Error::validation("pair batch segments differ in shape"));
    }
    Ok(PairBatch {
        views,
        utt_ids,
        seg_frames,
    })
}

/// Draw `n_pairs` distinct utterances and build two independently cropped,
/// augmented, featurized and CMN-normalized views of each.
pub fn sample_pair_batch(
    corpus: &Corpus,
    n_pairs: usize,
    seg: SegmentSpec,
    frontend: &Frontend,
    policy: &AugPolicy,
    rng_seed: u64,
) -> Result<PairBatch> {
    if n_pairs < 2 {
        return Err(Error::validation("n_pairs must be >= 2"));
    }
    let pool = eligible_indices(corpus, seg, frontend);
    if pool.len() < n_pairs {
        return Err(Error::Resource(format!(
            "corpus exhausted: {} usable utterances for {n_pairs} pairs",
            pool.len()
        )));
    }
    let mut rng = rng_for(rng_seed, &[tag::BATCH]);
    let chosen: Vec<usize> = pool.choose_multiple(&mut rng, n_pairs).copied().collect();
    pair_batch_from(corpus, &chosen, seg, frontend, policy, rng_seed)
}

// ---- synthetic corpus ------------------------------------------------------

/// Generator for a corpus with known static (speaker) and dynamic (content)
/// factors. Each sequence is
///
/// `x_t = v_s + g_s ⊙ (c · M w_t) + ε_t`
///
/// where `v_s` is the speaker's static vector, `g_s` a speaker-specific
/// per-dimension gain on the dynamics, `M` a corpus-wide content mixing
/// matrix, and `w_t` a smoothed Gaussian walk whose smoothness `α_s` is also
/// a speaker trait (`w_t = α_s w_{t-1} + √(1-α_s²) ξ_t`). Identity therefore
/// survives per-utterance mean normalization through `g_s` and `α_s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_speakers: usize,
    pub utts_per_speaker: usize,
    pub feat_dim: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub content_dims: usize,
    pub speaker_scale: f64,
    pub gain_scale: f64,
    pub content_scale: f64,
    pub smooth_min: f64,
    pub smooth_max: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_speakers: 20,
            utts_per_speaker: 20,
            feat_dim: 24,
            min_frames: 56,
            max_frames: 88,
            content_dims: 4,
            speaker_scale: 1.0,
            gain_scale: 0.4,
            content_scale: 1.0,
            smooth_min: 0.3,
            smooth_max: 0.95,
            noise_scale: 0.1,
            seed: 0,
        }
    }
}

/// Ground-truth factors of a synthetic corpus.
#[derive(Clone, Debug)]
pub struct SyntheticTruth {
    pub speaker_vectors: Vec<Vec<f64>>,
    pub speaker_gains: Vec<Vec<f64>>,
    pub smoothness: Vec<f64>,
    /// Per utterance, the dynamic component `g_s ⊙ (c · M w_t)` (T × F).
    pub dynamics: Vec<Vec<f64>>,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_speakers == 0 {
            return Err(Error::validation("synthetic corpus needs at least one speaker"));
        }
        if self.utts_per_speaker == 0 || self.feat_dim == 0 || self.content_dims == 0 {
            return Err(Error::validation("utts_per_speaker, feat_dim and content_dims must be >= 1"));
        }
        if self.min_frames == 0 || self.max_frames < self.min_frames {
            return Err(Error::validation("need 1 <= min_frames <= max_frames"));
        }
        if !(0.0..1.0).contains(&self.smooth_min) || !(self.smooth_min..1.0).contains(&self.smooth_max) {
            return Err(Error::validation("need 0 <= smooth_min <= smooth_max < 1"));
        }
        Ok(())
    }
}

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus> {
    generate_synthetic_with_truth(spec).map(|(c, _)| c)
}

pub fn generate_synthetic_with_truth(spec: &SyntheticSpec) -> Result<(Corpus, SyntheticTruth)> {
    spec.validate()?;
    let (f, k) = (spec.feat_dim, spec.content_dims);
    let mut mix_rng = rng_for(spec.seed, &[tag::SYNTH, 0]);
    let mixing: Vec<f64> = (0..f * k).map(|_| gauss(&mut mix_rng) / (k as f64).sqrt()).collect();

    let mut speaker_vectors = Vec::with_capacity(spec.num_speakers);
    let mut speaker_gains = Vec::with_capacity(spec.num_speakers);
    let mut smoothness = Vec::with_capacity(spec.num_speakers);
    for s in 0..spec.num_speakers {
        let mut rng = rng_for(spec.seed, &[tag::SYNTH, 1, s as u64]);
        speaker_vectors.push((0..f).map(|_| spec.speaker_scale * gauss(&mut rng)).collect::<Vec<_>>());
        speaker_gains.push((0..f).map(|_| (spec.gain_scale * gauss(&mut rng)).exp()).collect::<Vec<_>>());
        smoothness.push(if spec.smooth_max > spec.smooth_min {
            rng.gen_range(spec.smooth_min..spec.smooth_max)
        } else {
            spec.smooth_min
        });
    }
    for a in 0..spec.num_speakers {
        for b in a + 1..spec.num_speakers {
            if speaker_vectors[a] == speaker_vectors[b] {
                return Err(Error::validation("degenerate synthetic spec: identical speaker vectors"));
            }
        }
    }

    let mut utts = Vec::with_capacity(spec.num_speakers * spec.utts_per_speaker);
    let mut dynamics = Vec::with_capacity(utts.capacity());
    for s in 0..spec.num_speakers {
        let alpha = smoothness[s];
        let innov = (1.0 - alpha * alpha).sqrt();
        for u in 0..spec.utts_per_speaker {
            let mut rng = rng_for(spec.seed, &[tag::SYNTH, 2, s as u64, u as u64]);
            let t_len = rng.gen_range(spec.min_frames..=spec.max_frames);
            let mut w: Vec<f64> = (0..k).map(|_| gauss(&mut rng)).collect();
            let mut frames = Vec::with_capacity(t_len * f);
            let mut dyn_part = Vec::with_capacity(t_len * f);
            for t in 0..t_len {
                if t > 0 {
                    for wi in w.iter_mut() {
                        *wi = alpha * *wi + innov * gauss(&mut rng);
                    }
                }
                for d in 0..f {
                    let mixed: f64 = (0..k).map(|j| mixing[d * k + j] * w[j]).sum();
                    let dy = speaker_gains[s][d] * spec.content_scale * mixed;
                    dyn_part.push(dy);
                    frames.push(speaker_vectors[s][d] + dy + spec.noise_scale * gauss(&mut rng));
                }
            }
            let utt_id = format!("spk{s:03}_utt{u:03}");
            let fs = FeatureSequence::new(frames, t_len, f, 10.0, 25.0, utt_id.clone())?;
            utts.push(Utterance {
                utt_id,
                speaker_id: format!("spk{s:03}"),
                content: UttContent::Features(fs),
            });
            dynamics.push(dyn_part);
        }
    }
    Ok((
        Corpus { utts },
        SyntheticTruth {
            speaker_vectors,
            speaker_gains,
            smoothness,
            dynamics,
        },
    ))
}

// ---- trials ----------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trial {
    pub target: bool,
    pub enroll: String,
    pub test: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct TrialList {
    pub trials: Vec<Trial>,
}

impl TrialList {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// One `<0|1> <enroll> <test>` line per trial.
    pub fn write(&self, path: &Path) -> Result<()> {
        let text: String = self
            .trials
            .iter()
            .map(|t| format!("{} {} {}\n", u8::from(t.target), t.enroll, t.test))
            .collect();
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<TrialList> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut trials = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let target = match f.as_slice() {
                ["1", _, _] => true,
                ["0", _, _] => false,
                _ => return Err(Error::format(path, format!("line {}: expected `<0|1> <enroll> <test>`", i + 1))),
            };
            trials.push(Trial {
                target,
                enroll: f[1].to_string(),
                test: f[2].to_string(),
            });
        }
        Ok(TrialList { trials })
    }
}

/// Every unordered pair of distinct utterances, labeled by speaker identity.
pub fn all_pair_trials(labels: &[(String, String)]) -> TrialList {
    let mut trials = Vec::new();
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            trials.push(Trial {
                target: labels[i].1 == labels[j].1,
                enroll: labels[i].0.clone(),
                test: labels[j].0.clone(),
            });
        }
    }
    TrialList { trials }
}

/// Sample `n_target` same-speaker and `n_nontarget` cross-speaker trials,
/// without repeats and never pairing an utterance with itself.
pub fn make_trials(
    labels: &[(String, String)],
    n_target: usize,
    n_nontarget: usize,
    rng_seed: u64,
) -> Result<TrialList> {
    let mut by_spk: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (_, s)) in labels.iter().enumerate() {
        by_spk.entry(s.as_str()).or_default().push(i);
    }
    let n = labels.len();
    let avail_target: usize = by_spk.values().map(|v| v.len() * v.len().saturating_sub(1) / 2).sum();
    let avail_non = n * n.saturating_sub(1) / 2 - avail_target;
    if n_target > avail_target {
        return Err(Error::validation(format!(
            "requested {n_target} target trials but only {avail_target} same-speaker pairs exist (short by {})",
            n_target - avail_target
        )));
    }
    if n_nontarget > avail_non {
        return Err(Error::validation(format!(
            "requested {n_nontarget} nontarget trials but only {avail_non} cross-speaker pairs exist (short by {})",
            n_nontarget - avail_non
        )));
    }
    let mut rng = rng_for(rng_seed, &[tag::TRIALS]);
    let pick = |want: usize, avail: usize, same: bool, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<(usize, usize)> {
        if want * 2 >= avail {
            let mut all: Vec<(usize, usize)> = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .filter(|&(i, j)| (labels[i].1 == labels[j].1) == same)
                .collect();
            all.shuffle(rng);
            all.truncate(want);
            all
        } else {
            let mut seen = HashSet::new();
            let mut out = Vec::with_capacity(want);
            let spk_lists: Vec<&Vec<usize>> = by_spk.values().filter(|v| v.len() >= 2).collect();
            while out.len() < want {
                let (i, j) = if same {
                    let v = spk_lists[rng.gen_range(0..spk_lists.len())];
                    (v[rng.gen_range(0..v.len())], v[rng.gen_range(0..v.len())])
                } else {
                    (rng.gen_range(0..n), rng.gen_range(0..n))
                };
                if i == j || (labels[i].1 == labels[j].1) != same {
                    continue;
                }
                let key = (i.min(j), i.max(j));
                if seen.insert(key) {
                    out.push(key);
                }
            }
            out
        }
    };
    let mut pairs: Vec<(bool, usize, usize)> = pick(n_target, avail_target, true, &mut rng)
        .into_iter()
        .map(|(i, j)| (true, i, j))
        .chain(pick(n_nontarget, avail_non, false, &mut rng).into_iter().map(|(i, j)| (false, i, j)))
        .collect();
    pairs.shuffle(&mut rng);
    Ok(TrialList {
        trials: pairs
            .into_iter()
            .map(|(target, i, j)| Trial {
                target,
                enroll: labels[i].0.clone(),
                test: labels[j].0.clone(),
            })
            .collect(),
    })
}
