use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use lbccn::dsp::BinauralWaveform;
use lbccn::model::{LbccnConfig, LbccnModel as CoreModel, StreamState};
use lbccn_ffi::*;
use rand::{Rng, SeedableRng};

fn noise(len: usize, seed: u64) -> (Vec<f32>, Vec<f32>) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut v = || (0..len).map(|_| rng.gen_range(-0.5f32..0.5)).collect::<Vec<_>>();
    (v(), v())
}

fn new_model(variant: u32, seed: u64) -> *mut LbccnModel {
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { lbccn_model_new_default(variant, 0, seed, &mut m) },
        LbccnStatus::Ok
    );
    assert!(!m.is_null());
    m
}

fn last_error() -> String {
    let p = lbccn_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(lbccn_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn model_properties() {
    let m = new_model(LbccnVariant::Ratfs as u32, 0);
    let (mut n, mut rate) = (0usize, 0u32);
    unsafe {
        assert_eq!(lbccn_model_param_count(m, &mut n), LbccnStatus::Ok);
        assert_eq!(lbccn_model_sample_rate(m, &mut rate), LbccnStatus::Ok);
        lbccn_model_free(m);
    }
    assert_eq!(
        n,
        CoreModel::build(LbccnConfig::default(), 0).unwrap().real_param_count()
    );
    assert_eq!(rate, 16_000);
}

#[test]
fn invalid_arguments_are_reported() {
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { lbccn_model_new_default(7, 0, 0, &mut m) },
        LbccnStatus::InvalidArgument
    );
    assert!(m.is_null());
    assert!(last_error().contains("variant"), "{}", last_error());

    assert_eq!(
        unsafe { lbccn_model_new_default(0, 0, 0, ptr::null_mut()) },
        LbccnStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { lbccn_model_new_default(0, 500, 0, &mut m) },
        LbccnStatus::InvalidArgument
    );

    let mut n = 0usize;
    assert_eq!(
        unsafe { lbccn_model_param_count(ptr::null(), &mut n) },
        LbccnStatus::InvalidArgument
    );
    assert!(last_error().contains("model is null"));

    unsafe {
        lbccn_model_free(ptr::null_mut());
        lbccn_stream_free(ptr::null_mut());
    }
}

#[test]
fn enhance_matches_core_and_allows_aliasing() {
    let m = new_model(LbccnVariant::Masks as u32, 3);
    let core = CoreModel::build(
        LbccnConfig::default().with_variant(lbccn::model::PredictorVariant::Masks),
        3,
    )
    .unwrap();
    let (l, r) = noise(5000, 1);
    let expect = core
        .enhance(&BinauralWaveform::new(l.clone(), r.clone(), 16_000).unwrap())
        .unwrap();

    let (mut ol, mut or) = (vec![0.0f32; l.len()], vec![0.0f32; l.len()]);
    let st = unsafe {
        lbccn_enhance(
            m,
            l.as_ptr(),
            r.as_ptr(),
            l.len(),
            16_000,
            ol.as_mut_ptr(),
            or.as_mut_ptr(),
        )
    };
    assert_eq!(st, LbccnStatus::Ok);
    assert_eq!(
        (ol.as_slice(), or.as_slice()),
        (expect.left.as_slice(), expect.right.as_slice())
    );

    let (mut il, mut ir) = (l.clone(), r.clone());
    let st = unsafe {
        lbccn_enhance(
            m,
            il.as_ptr(),
            ir.as_ptr(),
            il.len(),
            16_000,
            il.as_mut_ptr(),
            ir.as_mut_ptr(),
        )
    };
    assert_eq!(st, LbccnStatus::Ok);
    assert_eq!(il, expect.left);
    assert_eq!(ir, expect.right);

    let st = unsafe {
        lbccn_enhance(
            m,
            l.as_ptr(),
            r.as_ptr(),
            l.len(),
            44_100,
            ol.as_mut_ptr(),
            or.as_mut_ptr(),
        )
    };
    assert_eq!(st, LbccnStatus::InvalidArgument);
    unsafe { lbccn_model_free(m) };
}

#[test]
fn streaming_matches_core_state() {
    let m = new_model(LbccnVariant::Ratfs as u32, 5);
    let core = CoreModel::build(LbccnConfig::default(), 5).unwrap();
    let mut reference = StreamState::new(&core).unwrap();

    let mut s = ptr::null_mut();
    let (mut hop, mut lat) = (0usize, 0usize);
    unsafe {
        assert_eq!(lbccn_stream_new(m, &mut s), LbccnStatus::Ok);
        // the stream owns its weights
        lbccn_model_free(m);
        assert_eq!(lbccn_stream_hop_size(s, &mut hop), LbccnStatus::Ok);
        assert_eq!(lbccn_stream_latency(s, &mut lat), LbccnStatus::Ok);
    }
    assert_eq!((hop, lat), (128, 128));

    let (l, r) = noise(hop * 20, 9);
    let (mut ol, mut or) = (vec![0.0f32; hop], vec![0.0f32; hop]);
    let (mut el, mut er) = (vec![0.0f32; hop], vec![0.0f32; hop]);
    for (cl, cr) in l.chunks(hop).zip(r.chunks(hop)) {
        let st = unsafe { lbccn_stream_process(s, cl.as_ptr(), cr.as_ptr(), hop, ol.as_mut_ptr(), or.as_mut_ptr()) };
        assert_eq!(st, LbccnStatus::Ok);
        reference.process(cl, cr, &mut el, &mut er).unwrap();
        assert_eq!((&ol, &or), (&el, &er));
    }
    let st = unsafe { lbccn_stream_process(s, l.as_ptr(), r.as_ptr(), hop - 1, ol.as_mut_ptr(), or.as_mut_ptr()) };
    assert_eq!(st, LbccnStatus::InvalidArgument);
    assert!(last_error().contains("hop"));
    unsafe { lbccn_stream_free(s) };
}

#[test]
fn checkpoint_round_trip_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    let m = new_model(LbccnVariant::MaskRatf as u32, 2);
    let mut back = ptr::null_mut();
    let (l, r) = noise(3000, 4);
    let (mut a, mut b) = (
        (vec![0.0f32; 3000], vec![0.0f32; 3000]),
        (vec![0.0f32; 3000], vec![0.0f32; 3000]),
    );
    unsafe {
        assert_eq!(lbccn_model_save(m, path.as_ptr()), LbccnStatus::Ok);
        assert_eq!(lbccn_model_load(path.as_ptr(), &mut back), LbccnStatus::Ok);
        lbccn_enhance(
            m,
            l.as_ptr(),
            r.as_ptr(),
            3000,
            16_000,
            a.0.as_mut_ptr(),
            a.1.as_mut_ptr(),
        );
        lbccn_enhance(
            back,
            l.as_ptr(),
            r.as_ptr(),
            3000,
            16_000,
            b.0.as_mut_ptr(),
            b.1.as_mut_ptr(),
        );
        lbccn_model_free(m);
        lbccn_model_free(back);
    }
    assert_eq!(a, b);

    let missing = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { lbccn_model_load(missing.as_ptr(), &mut back) },
        LbccnStatus::Io
    );
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"garbage").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { lbccn_model_load(junk.as_ptr(), &mut back) },
        LbccnStatus::Format
    );
    assert_eq!(
        unsafe { lbccn_model_load(ptr::null(), &mut back) },
        LbccnStatus::InvalidArgument
    );
}

#[test]
fn errors_are_per_thread() {
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { lbccn_model_new_default(9, 0, 0, &mut m) },
        LbccnStatus::InvalidArgument
    );
    let other = std::thread::spawn(|| lbccn_last_error().is_null()).join().unwrap();
    assert!(other);
    assert!(!lbccn_last_error().is_null());
}

fn header() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/lbccn.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    for f in [
        "lbccn_version",
        "lbccn_last_error",
        "lbccn_model_new_default",
        "lbccn_model_load",
        "lbccn_model_save",
        "lbccn_model_free",
        "lbccn_model_param_count",
        "lbccn_model_sample_rate",
        "lbccn_enhance",
        "lbccn_stream_new",
        "lbccn_stream_hop_size",
        "lbccn_stream_latency",
        "lbccn_stream_process",
        "lbccn_stream_free",
        "LBCCN_STATUS_OK = 0",
        "LBCCN_STATUS_PANIC = 6",
        "LBCCN_VARIANT_MASK_RATF = 2",
        "typedef struct LbccnModel LbccnModel",
    ] {
        assert!(h.contains(f), "header lacks {f}");
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(out) = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(header())
            .output()
        else {
            eprintln!("{compiler} not available; skipping");
            continue;
        };
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn c_program_links_against_static_library() {
    let deps = std::env::current_exe().unwrap();
    let lib_dir = deps.parent().and_then(Path::parent).unwrap();
    let lib = lib_dir.join("liblbccn_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/c/smoke.c");
    let Ok(out) = Command::new("cc")
        .args(["-std=c11", "-Wall", "-Werror", "-I"])
        .arg(header().parent().unwrap())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
    else {
        eprintln!("cc not available; skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "{stdout}{}", String::from_utf8_lossy(&run.stderr));
    assert!(stdout.contains("hop=128 latency=128"), "{stdout}");
}
