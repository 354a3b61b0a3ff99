use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use dscl_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(dscl_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn eer_and_min_dcf_on_the_hand_set() {
    let scores = [0.9, 0.4, 0.6, 0.1];
    let labels = [1u8, 1, 0, 0];
    let mut eer = -1.0;
    let st = unsafe { dscl_eer(scores.as_ptr(), labels.as_ptr(), 4, &mut eer) };
    assert_eq!(st, DsclStatus::Ok);
    assert_eq!(eer, 0.25);
    let mut dcf = -1.0;
    let st = unsafe { dscl_min_dcf(scores.as_ptr(), labels.as_ptr(), 4, 0.01, 1.0, 1.0, &mut dcf) };
    assert_eq!(st, DsclStatus::Ok);
    assert_eq!(dcf, 0.5);
}

#[test]
fn errors_carry_codes_and_messages() {
    let scores = [0.9, 0.4];
    let labels = [1u8, 1];
    let mut eer = 0.0;
    let st = unsafe { dscl_eer(scores.as_ptr(), labels.as_ptr(), 2, &mut eer) };
    assert_eq!(st, DsclStatus::Validation);
    assert!(last_error().contains("nontarget"), "{}", last_error());
    let st = unsafe { dscl_eer(ptr::null(), labels.as_ptr(), 2, &mut eer) };
    assert_eq!(st, DsclStatus::NullPointer);
    let path = CString::new("/nonexistent/model.ckpt").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { dscl_model_load(path.as_ptr(), &mut m) }, DsclStatus::Io);
    assert!(m.is_null());
}

#[test]
fn model_handle_embeds_and_checks_buffers() {
    let preset = CString::new("test").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { dscl_model_new(preset.as_ptr(), 3, &mut m) }, DsclStatus::Ok);
    let (mut fd, mut ed) = (0usize, 0usize);
    assert_eq!(unsafe { dscl_model_dims(m, DsclSource::SpkEmb, &mut fd, &mut ed) }, DsclStatus::Ok);
    let t = 12;
    let feats: Vec<f64> = (0..t * fd).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect();
    let mut out = vec![0.0; ed];
    let st = unsafe { dscl_model_embed(m, feats.as_ptr(), t, fd, DsclSource::SpkEmb, out.as_mut_ptr(), ed) };
    assert_eq!(st, DsclStatus::Ok, "{}", last_error());
    assert!(out.iter().all(|v| v.is_finite()) && out.iter().any(|v| *v != 0.0));
    let mut again = vec![0.0; ed];
    unsafe { dscl_model_embed(m, feats.as_ptr(), t, fd, DsclSource::SpkEmb, again.as_mut_ptr(), ed) };
    assert_eq!(out, again);
    let st = unsafe { dscl_model_embed(m, feats.as_ptr(), t, fd, DsclSource::SpkEmb, out.as_mut_ptr(), ed - 1) };
    assert_eq!(st, DsclStatus::BufferTooSmall);
    let st = unsafe { dscl_model_embed(m, feats.as_ptr(), t, fd + 1, DsclSource::SpkEmb, out.as_mut_ptr(), ed) };
    assert_eq!(st, DsclStatus::Validation);
    let mut slot = m;
    unsafe { dscl_model_release(&mut slot) };
    assert!(slot.is_null());
}

#[test]
fn fbank_frame_count_and_nt_xent() {
    let samples: Vec<f64> = (0..16000).map(|i| (i as f64 * 0.05).sin() * 0.3).collect();
    let mut frames = 0usize;
    let mut out = vec![0.0; 98 * 40];
    let st = unsafe { dscl_fbank(samples.as_ptr(), samples.len(), 16000, 40, out.as_mut_ptr(), out.len(), &mut frames) };
    assert_eq!(st, DsclStatus::Ok, "{}", last_error());
    assert_eq!(frames, 98);

    // Two pairs of orthogonal unit vectors with views identical: each anchor
    // sees its positive at similarity 1 and the others at 0.
    let e = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
    let mut loss = 0.0;
    let st = unsafe { dscl_nt_xent(e.as_ptr(), 4, 2, 1.0, DsclDenominator::ExcludeAnchorOnly, &mut loss) };
    assert_eq!(st, DsclStatus::Ok);
    let expect = -(1f64.exp() / (1f64.exp() + 2.0)).ln();
    assert!((loss - expect).abs() < 1e-12);
}

#[test]
fn header_is_generated_and_compiles_as_c() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = dir.join("include/dscl.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["dscl_last_error", "dscl_model_load", "dscl_model_embed", "dscl_fbank", "dscl_eer", "dscl_min_dcf", "dscl_nt_xent"] {
        assert!(text.contains(f), "{f}");
    }
    let src = std::env::temp_dir().join(format!("dscl_header_check_{}.c", std::process::id()));
    std::fs::write(&src, "#include \"dscl.h\"\nint main(void) { DsclModel *m = 0; dscl_model_free(m); return (int)DsclStatus_Ok; }\n").unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    match Command::new(&cc).arg("-fsyntax-only").arg("-Wall").arg("-Werror").arg("-I").arg(dir.join("include")).arg(&src).output() {
        Ok(o) => assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr)),
        Err(e) => eprintln!("skipping C compile check, no compiler `{cc}`: {e}"),
    }
    let _ = std::fs::remove_file(src);
}
