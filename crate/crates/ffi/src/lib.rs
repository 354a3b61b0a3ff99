//! C ABI over `dscl`.
//!
//! Every function returns a `DsclStatus`. On failure the message is kept
//! per thread and read with `dscl_last_error`. Models are opaque handles
//! released with `dscl_model_free`. Arrays are caller-owned `double`
//! buffers; feature matrices are row-major `num_frames × feat_dim`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use dscl::checkpoint::Checkpoint;
use dscl::eval::{compute_eer, compute_min_dcf, embed_features, EmbeddingSource, TrialScoreSet};
use dscl::featio::{apply_cmn, extract_fbank, FeatureSequence, Waveform};
use dscl::losses::{nt_xent_value, ContrastiveConfig, DenominatorRule};
use dscl::model::{Dsvae, ModelConfig};
use dscl::tensor::Tensor;
use dscl::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DsclStatus {
    Ok = 0,
    Validation = 1,
    Numerical = 2,
    Io = 3,
    NullPointer = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DsclSource {
    SpkEmb = 0,
    AvgConEmb = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DsclDenominator {
    ExcludeAnchorOnly = 0,
    StrictIndicator = 1,
}

/// Opaque model handle.
pub struct DsclModel {
    model: Dsvae,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Fail {
    Core(Error),
    Null(&'static str),
    Small { need: usize, have: usize },
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DsclStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DsclStatus::Ok
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(&e.to_string());
            match e.exit_code() {
                1 => DsclStatus::Validation,
                2 => DsclStatus::Numerical,
                _ => DsclStatus::Io,
            }
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            DsclStatus::NullPointer
        }
        Ok(Err(Fail::Small { need, have })) => {
            set_error(&format!("output buffer holds {have} values, need {need}"));
            DsclStatus::BufferTooSmall
        }
        Err(_) => {
            set_error("internal panic");
            DsclStatus::Panic
        }
    }
}

fn nonnull<T>(p: *const T, what: &'static str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail::Null(what))
    } else {
        Ok(())
    }
}

unsafe fn input<'a>(p: *const f64, n: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    nonnull(p, what)?;
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn output<'a>(p: *mut f64, cap: usize, need: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    nonnull(p, what)?;
    if cap < need {
        return Err(Fail::Small { need, have: cap });
    }
    Ok(slice::from_raw_parts_mut(p, need))
}

unsafe fn score_set(scores: *const f64, labels: *const u8, n: usize) -> Result<TrialScoreSet, Fail> {
    let s = input(scores, n, "scores")?;
    if n > 0 {
        nonnull(labels, "labels")?;
    }
    let l = if n == 0 { &[][..] } else { slice::from_raw_parts(labels, n) };
    let items: Vec<(bool, f64)> = l.iter().zip(s).map(|(&t, &v)| (t != 0, v)).collect();
    Ok(TrialScoreSet::from_labeled(&items))
}

/// Message of the last failed call on this thread ("" after a success).
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn dscl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load a checkpoint into a new model handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dscl_model_load(path: *const c_char, out: *mut *mut DsclModel) -> DsclStatus {
    guard(|| {
        nonnull(path, "path")?;
        nonnull(out, "out")?;
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::validation("path is not UTF-8"))?;
        let model = Checkpoint::load(Path::new(p))?.restore_model()?;
        *out = Box::into_raw(Box::new(DsclModel { model }));
        Ok(())
    })
}

/// A freshly initialized model from a named preset (`paper`, `tiny`, `test`).
///
/// # Safety
/// `preset` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dscl_model_new(preset: *const c_char, seed: u64, out: *mut *mut DsclModel) -> DsclStatus {
    guard(|| {
        nonnull(preset, "preset")?;
        nonnull(out, "out")?;
        let mut cfg = match CStr::from_ptr(preset).to_bytes() {
            b"paper" => ModelConfig::paper(),
            b"tiny" => ModelConfig::tiny(),
            b"test" => ModelConfig::test(),
            _ => return Err(Error::validation("unknown preset (paper, tiny, test)").into()),
        };
        cfg.seed = seed;
        *out = Box::into_raw(Box::new(DsclModel { model: Dsvae::new(&cfg)? }));
        Ok(())
    })
}

/// Release a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dscl_model_free(model: *mut DsclModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input feature dimension and embedding size for `source`.
///
/// # Safety
/// `model` must be a live handle; `feat_dim` and `emb_dim` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dscl_model_dims(
    model: *const DsclModel,
    source: DsclSource,
    feat_dim: *mut usize,
    emb_dim: *mut usize,
) -> DsclStatus {
    guard(|| {
        nonnull(model, "model")?;
        nonnull(feat_dim, "feat_dim")?;
        nonnull(emb_dim, "emb_dim")?;
        let cfg = &(*model).model.cfg;
        *feat_dim = cfg.feat_dim;
        *emb_dim = match source {
            DsclSource::SpkEmb => cfg.d_s,
            DsclSource::AvgConEmb => cfg.d_c,
        };
        Ok(())
    })
}

/// Embed one utterance. Mean normalization is applied here.
///
/// # Safety
/// `feats` must hold `num_frames * feat_dim` values; `out` must hold `out_cap`.
#[no_mangle]
pub unsafe extern "C" fn dscl_model_embed(
    model: *const DsclModel,
    feats: *const f64,
    num_frames: usize,
    feat_dim: usize,
    source: DsclSource,
    out: *mut f64,
    out_cap: usize,
) -> DsclStatus {
    guard(|| {
        nonnull(model, "model")?;
        let m = &(*model).model;
        let x = input(feats, num_frames * feat_dim, "feats")?;
        if feat_dim != m.cfg.feat_dim {
            return Err(Error::validation(format!("model expects feat_dim {}, got {feat_dim}", m.cfg.feat_dim)).into());
        }
        let f = FeatureSequence::new(x.to_vec(), num_frames, feat_dim, 10.0, 25.0, "ffi")?;
        let src = match source {
            DsclSource::SpkEmb => EmbeddingSource::SpkEmb,
            DsclSource::AvgConEmb => EmbeddingSource::AvgConEmb,
        };
        let v = embed_features(m, &apply_cmn(&f), src)?;
        output(out, out_cap, v.len(), "out")?.copy_from_slice(&v);
        Ok(())
    })
}

/// Log mel filter-bank features (25 ms window, 10 ms shift), no
/// normalization. `out` receives `*num_frames * n_mels` values.
///
/// # Safety
/// `samples` must hold `n` values; `out` must hold `out_cap`; `num_frames`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn dscl_fbank(
    samples: *const f64,
    n: usize,
    sample_rate: u32,
    n_mels: usize,
    out: *mut f64,
    out_cap: usize,
    num_frames: *mut usize,
) -> DsclStatus {
    guard(|| {
        nonnull(num_frames, "num_frames")?;
        let s = input(samples, n, "samples")?;
        let w = Waveform::new(s.to_vec(), sample_rate, "ffi")?;
        let f = extract_fbank(&w, n_mels, 25.0, 10.0)?;
        *num_frames = f.num_frames();
        output(out, out_cap, f.frames().len(), "out")?.copy_from_slice(f.frames());
        Ok(())
    })
}

/// Equal error rate of labeled scores (`labels[i] != 0` marks a target).
///
/// # Safety
/// `scores` and `labels` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dscl_eer(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> DsclStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = compute_eer(&score_set(scores, labels, n)?)?;
        Ok(())
    })
}

/// Normalized minimum detection cost of labeled scores.
///
/// # Safety
/// `scores` and `labels` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dscl_min_dcf(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    p_target: f64,
    c_miss: f64,
    c_fa: f64,
    out: *mut f64,
) -> DsclStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = compute_min_dcf(&score_set(scores, labels, n)?, p_target, c_miss, c_fa)?;
        Ok(())
    })
}

/// Contrastive loss of `two_n` embeddings laid out view-major: rows
/// `0..N` are first views, row `i + N` is the positive of row `i`.
///
/// # Safety
/// `embeddings` must hold `two_n * dim` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dscl_nt_xent(
    embeddings: *const f64,
    two_n: usize,
    dim: usize,
    tau: f64,
    rule: DsclDenominator,
    out: *mut f64,
) -> DsclStatus {
    guard(|| {
        nonnull(out, "out")?;
        let e = input(embeddings, two_n * dim, "embeddings")?;
        let cfg = ContrastiveConfig {
            tau,
            denominator_rule: match rule {
                DsclDenominator::ExcludeAnchorOnly => DenominatorRule::ExcludeAnchorOnly,
                DsclDenominator::StrictIndicator => DenominatorRule::StrictIndicator,
            },
        };
        *out = nt_xent_value(&Tensor::new(vec![two_n, dim], e.to_vec()), &cfg)?.0;
        Ok(())
    })
}

/// Null-safe convenience for callers that want to clear a handle slot.
///
/// # Safety
/// `slot` must be writable; its handle must come from this library.
#[no_mangle]
pub unsafe extern "C" fn dscl_model_release(slot: *mut *mut DsclModel) {
    if !slot.is_null() {
        dscl_model_free(*slot);
        *slot = ptr::null_mut();
    }
}
