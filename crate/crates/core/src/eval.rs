//! Embedding extraction, cosine trial scoring, EER / minDCF and the
//! speaker-leakage probe on content embeddings.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{all_pair_trials, Corpus, Frontend, Trial, TrialList};
use crate::error::{Error, Result};
use crate::featio::FeatureSequence;
use crate::model::{Dsvae, Noise};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    /// Speaker posterior mean μˢ.
    SpkEmb,
    /// Time-averaged content posterior means.
    AvgConEmb,
}

impl std::str::FromStr for EmbeddingSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spk_emb" => Ok(EmbeddingSource::SpkEmb),
            "avg_con_emb" => Ok(EmbeddingSource::AvgConEmb),
            _ => Err(Error::validation(format!("unknown embedding source `{s}` (spk_emb, avg_con_emb)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingArchive {
    pub source: EmbeddingSource,
    pub dim: usize,
    pub checkpoint_id: String,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingArchive {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("archive serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let a: EmbeddingArchive = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if a.vectors.values().any(|v| v.len() != a.dim) {
            return Err(Error::format(path, "vectors do not all have the declared dim"));
        }
        Ok(a)
    }

    /// Labeled rows `(vector, speaker)` for the archive entries named in
    /// `labels`, in label order.
    fn labeled<'a>(&'a self, labels: &'a [(String, String)]) -> Result<Vec<(&'a [f64], &'a str)>> {
        let missing: Vec<&str> = labels
            .iter()
            .filter(|(u, _)| !self.vectors.contains_key(u))
            .map(|(u, _)| u.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::validation(format!("archive lacks utterances: {}", missing.join(", "))));
        }
        Ok(labels
            .iter()
            .map(|(u, s)| (self.vectors[u].as_slice(), s.as_str()))
            .collect())
    }
}

/// Embed every utterance of `corpus` (or only `ids`) from its full,
/// unaugmented, mean-normalized features with the model in inference mode.
pub fn extract_embeddings(
    model: &Dsvae,
    corpus: &Corpus,
    frontend: &Frontend,
    source: EmbeddingSource,
    ids: Option<&[String]>,
    checkpoint_id: &str,
) -> Result<EmbeddingArchive> {
    if corpus.is_empty() {
        return Err(Error::validation("extraction corpus is empty"));
    }
    let indices: Vec<usize> = match ids {
        None => (0..corpus.len()).collect(),
        Some(ids) => {
            let mut idx = Vec::with_capacity(ids.len());
            let mut missing = Vec::new();
            for id in ids {
                match corpus.utts.iter().position(|u| &u.utt_id == id) {
                    Some(i) => idx.push(i),
                    None => missing.push(id.as_str()),
                }
            }
            if !missing.is_empty() {
                return Err(Error::validation(format!("utterances not in corpus: {}", missing.join(", "))));
            }
            idx
        }
    };
    let mut vectors = BTreeMap::new();
    for i in indices {
        let v = embed_features(model, &corpus.features(i, frontend)?, source)?;
        vectors.insert(corpus.utts[i].utt_id.clone(), v);
    }
    let dim = match source {
        EmbeddingSource::SpkEmb => model.cfg.d_s,
        EmbeddingSource::AvgConEmb => model.cfg.d_c,
    };
    Ok(EmbeddingArchive {
        source,
        dim,
        checkpoint_id: checkpoint_id.to_string(),
        vectors,
    })
}

/// Embed one (already normalized) feature sequence in inference mode.
pub fn embed_features(model: &Dsvae, f: &FeatureSequence, source: EmbeddingSource) -> Result<Vec<f64>> {
    let (t, d) = (f.num_frames(), f.dim());
    let mut data = vec![0.0; d * t];
    for (ti, row) in f.rows().enumerate() {
        for (di, v) in row.iter().enumerate() {
            data[di * t + ti] = *v;
        }
    }
    let x = Tensor::new(vec![1, d, t], data);
    Ok(match source {
        EmbeddingSource::SpkEmb => model.encode_speaker(&x)?.0.into_data(),
        EmbeddingSource::AvgConEmb => {
            let (mu, _, _) = model.encode_content(&x, Noise::Mean)?;
            let dc = mu.shape()[1];
            (0..dc)
                .map(|c| mu.data()[c * t..(c + 1) * t].iter().sum::<f64>() / t as f64)
                .collect()
        }
    })
}

// ---- scoring ---------------------------------------------------------------

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::validation("cosine of a zero-norm vector"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialScoreSet {
    pub trials: Vec<Trial>,
    pub scores: Vec<f64>,
}

impl TrialScoreSet {
    /// A score set from bare `(is_target, score)` pairs.
    pub fn from_labeled(items: &[(bool, f64)]) -> Self {
        TrialScoreSet {
            trials: items
                .iter()
                .enumerate()
                .map(|(i, &(target, _))| Trial {
                    target,
                    enroll: format!("e{i}"),
                    test: format!("t{i}"),
                })
                .collect(),
            scores: items.iter().map(|&(_, s)| s).collect(),
        }
    }

    fn split(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.trials.len() != self.scores.len() {
            return Err(Error::validation("score count differs from trial count"));
        }
        if self.scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::validation("non-finite score"));
        }
        let mut tar = Vec::new();
        let mut non = Vec::new();
        for (t, &s) in self.trials.iter().zip(&self.scores) {
            if t.target {
                tar.push(s);
            } else {
                non.push(s);
            }
        }
        if tar.is_empty() || non.is_empty() {
            return Err(Error::validation("score set needs at least one target and one nontarget trial"));
        }
        Ok((tar, non))
    }

    /// `<label> <enroll> <test> <score>` per line, scores with 6 decimals.
    pub fn write(&self, path: &Path) -> Result<()> {
        let text: String = self
            .trials
            .iter()
            .zip(&self.scores)
            .map(|(t, s)| format!("{} {} {} {:.6}\n", u8::from(t.target), t.enroll, t.test, s))
            .collect();
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut trials = Vec::new();
        let mut scores = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() {
                continue;
            }
            let bad = || Error::format(path, format!("line {}: expected `<0|1> <enroll> <test> <score>`", i + 1));
            if f.len() != 4 {
                return Err(bad());
            }
            let target = match f[0] {
                "1" => true,
                "0" => false,
                _ => return Err(bad()),
            };
            trials.push(Trial {
                target,
                enroll: f[1].to_string(),
                test: f[2].to_string(),
            });
            scores.push(f[3].parse::<f64>().map_err(|_| bad())?);
        }
        Ok(TrialScoreSet { trials, scores })
    }
}

pub fn score_trials(archive: &EmbeddingArchive, trials: &TrialList) -> Result<TrialScoreSet> {
    let mut missing = BTreeSet::new();
    for t in &trials.trials {
        for id in [&t.enroll, &t.test] {
            if !archive.vectors.contains_key(id) {
                missing.insert(id.as_str());
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::validation(format!(
            "trial utterances missing from archive: {}",
            missing.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let scores = trials
        .trials
        .iter()
        .map(|t| cosine(&archive.vectors[&t.enroll], &archive.vectors[&t.test]))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialScoreSet {
        trials: trials.trials.clone(),
        scores,
    })
}

// ---- metrics ---------------------------------------------------------------

/// Operating points as integer counts `(false accepts, misses)`, from
/// reject-all through every distinct score (accept when `score ≥ θ`) to
/// accept-all. Ties share one threshold.
fn operating_counts(tar: &[f64], non: &[f64]) -> Vec<(u64, u64)> {
    let mut all: Vec<(f64, bool)> = tar.iter().map(|&s| (s, true)).chain(non.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    let (mut fa, mut miss) = (0u64, tar.len() as u64);
    let mut pts = vec![(fa, miss)];
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                miss -= 1;
            } else {
                fa += 1;
            }
            i += 1;
        }
        pts.push((fa, miss));
    }
    pts
}

fn gcd(mut a: i128, mut b: i128) -> i128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.abs()
}

/// Equal error rate on the convex hull of the ROC (ROCCH): the point where
/// the hull crosses `P_miss = P_fa`. Computed exactly in rationals.
pub fn compute_eer(s: &TrialScoreSet) -> Result<f64> {
    let (tar, non) = s.split()?;
    let (nt, nn) = (tar.len() as i128, non.len() as i128);
    // Scale both rates by nt·nn: X = fa·nt, Y = miss·nn.
    let pts: Vec<(i128, i128)> = operating_counts(&tar, &non)
        .into_iter()
        .map(|(fa, miss)| (fa as i128 * nt, miss as i128 * nn))
        .collect();
    // Lower-left hull, points already sorted by X ascending and Y descending.
    let mut hull: Vec<(i128, i128)> = Vec::with_capacity(pts.len());
    for p in pts {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross <= 0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    let scale = nt * nn;
    for w in hull.windows(2) {
        let ((x1, y1), (x2, y2)) = (w[0], w[1]);
        let (d1, d2) = (y1 - x1, y2 - x2);
        if d1 >= 0 && d2 <= 0 {
            let (num, den) = if d1 == d2 { (x1, scale) } else { (x1 * -d2 + x2 * d1, (d1 - d2) * scale) };
            let g = gcd(num, den).max(1);
            return Ok((num / g) as f64 / (den / g) as f64);
        }
    }
    unreachable!("the hull runs from (0, 1) to (1, 0) and must cross the diagonal")
}

/// Normalized minimum detection cost over all operating points.
pub fn compute_min_dcf(s: &TrialScoreSet, p_target: f64, c_miss: f64, c_fa: f64) -> Result<f64> {
    if !(p_target > 0.0 && p_target < 1.0) || !(c_miss > 0.0) || !(c_fa > 0.0) {
        return Err(Error::validation("minDCF needs 0 < p_target < 1 and positive costs"));
    }
    let (tar, non) = s.split()?;
    let (nt, nn) = (tar.len() as f64, non.len() as f64);
    Ok(operating_counts(&tar, &non)
        .into_iter()
        .map(|(fa, miss)| dcf(miss as f64 / nt, fa as f64 / nn, p_target, c_miss, c_fa))
        .fold(f64::INFINITY, f64::min))
}

/// `(c_miss·p·P_miss + c_fa·(1−p)·P_fa) / min(c_miss·p, c_fa·(1−p))`.
pub fn dcf(p_miss: f64, p_fa: f64, p_target: f64, c_miss: f64, c_fa: f64) -> f64 {
    let a = c_miss * p_target;
    let b = c_fa * (1.0 - p_target);
    (a * p_miss + b * p_fa) / a.min(b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub eer: f64,
    pub min_dcf: f64,
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
}

pub fn evaluate(s: &TrialScoreSet, p_target: f64, c_miss: f64, c_fa: f64) -> Result<EvalReport> {
    let n_target = s.trials.iter().filter(|t| t.target).count();
    Ok(EvalReport {
        eer: compute_eer(s)?,
        min_dcf: compute_min_dcf(s, p_target, c_miss, c_fa)?,
        p_target,
        c_miss,
        c_fa,
        n_target,
        n_nontarget: s.trials.len() - n_target,
    })
}

// ---- probe -----------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Verification EER over all utterance pairs, scoring by cosine.
    pub eer: f64,
    /// Test accuracy of a ridge-regression speaker classifier.
    pub accuracy: f64,
    pub n_speakers: usize,
    pub n_train: usize,
    pub n_test: usize,
}

/// How much speaker identity an archive carries: (a) all-pairs cosine EER;
/// (b) a closed-form ridge classifier on one-hot targets with a bias column,
/// trained on the even-indexed utterances of each speaker and tested on the
/// odd-indexed ones.
pub fn probe_speaker_leakage(archive: &EmbeddingArchive, labels: &[(String, String)], ridge: f64) -> Result<ProbeReport> {
    let rows = archive.labeled(labels)?;
    let speakers: Vec<&str> = rows.iter().map(|r| r.1).collect::<BTreeSet<_>>().into_iter().collect();
    if speakers.len() < 2 {
        return Err(Error::validation("probe needs at least 2 speakers"));
    }
    let scores = score_trials(archive, &all_pair_trials(labels))?;
    let eer = compute_eer(&scores)?;

    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (v, s) in &rows {
        let k = seen.entry(s).or_default();
        let class = speakers.binary_search(s).unwrap();
        if (*k).is_multiple_of(2) {
            train.push((*v, class));
        } else {
            test.push((*v, class));
        }
        *k += 1;
    }
    if test.is_empty() {
        return Err(Error::validation("probe needs at least 2 utterances for some speaker"));
    }
    let d = archive.dim + 1;
    let design = |set: &[(&[f64], usize)]| {
        DMatrix::from_fn(set.len(), d, |r, c| if c == archive.dim { 1.0 } else { set[r].0[c] })
    };
    let x = design(&train);
    let y = DMatrix::from_fn(train.len(), speakers.len(), |r, c| f64::from(u8::from(train[r].1 == c)));
    let gram = x.transpose() * &x + DMatrix::identity(d, d) * ridge;
    let rhs = x.transpose() * y;
    let w = gram
        .cholesky()
        .ok_or_else(|| Error::Numerical { layer: "probe ridge solve".into() })?
        .solve(&rhs);
    let pred = design(&test) * w;
    let correct = (0..test.len())
        .filter(|&r| {
            let row: DVector<f64> = pred.row(r).transpose();
            row.argmax().0 == test[r].1
        })
        .count();
    Ok(ProbeReport {
        eer,
        accuracy: correct as f64 / test.len() as f64,
        n_speakers: speakers.len(),
        n_train: train.len(),
        n_test: test.len(),
    })
}
