use std::ffi::{CStr, CString};
use std::fs;
use std::path::Path;
use std::ptr;

use steer_core::cli::RunConfig;
use steer_core::model::{checkpoint, Model, ModelInput};
use steer_core::tensor::Tensor;
use steer_ffi::*;

const MINI: &str = "model = dual_transformer\nseq_len = 2\nfeature_dim = 8\nheads = 2\nencoder_layers = 1\n\
fused_dim = 4\nff_dim = 16\nbackbone_channels = 2,3\nstem_kernel = 3\nstem_stride = 1\ninput_h = 8\ninput_w = 8\n\
epochs = 1\ndecay_epochs = none\n";

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = steer_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn ramp(n: usize, k: f64) -> Vec<f64> {
    (0..n).map(|i| ((i as f64 * k).sin() + 1.0) / 2.0).collect()
}

#[test]
fn load_predict_free_matches_core() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.cfg");
    fs::write(&cfg_path, MINI).unwrap();
    let cfg = RunConfig::load(&cfg_path).unwrap();
    let model = Model::new(cfg.model.clone(), 11).unwrap();
    let ck = dir.path().join("m.ckpt");
    checkpoint::save(&model, &ck).unwrap();

    let mut handle = ptr::null_mut();
    let st = unsafe { steer_model_load(cstr(&cfg_path).as_ptr(), cstr(&ck).as_ptr(), &mut handle) };
    assert_eq!(st, SteerStatus::Ok);
    let mut info = SteerModelInfo::default();
    assert_eq!(
        unsafe { steer_model_info(handle, &mut info) },
        SteerStatus::Ok
    );
    assert_eq!((info.seq_len, info.input_h, info.output_steps), (2, 8, 2));
    assert!(info.uses_flow && info.predicts_speed);

    let shape = [3, 2, 3, 8, 8];
    let n: usize = shape.iter().product();
    let rgb = ramp(n, 0.37);
    let flow = ramp(n, 0.11);
    let mut angle = vec![0.0; 6];
    let mut speed = vec![0.0; 6];
    let st = unsafe {
        steer_model_predict(
            handle,
            rgb.as_ptr(),
            flow.as_ptr(),
            3,
            angle.as_mut_ptr(),
            speed.as_mut_ptr(),
        )
    };
    assert_eq!(st, SteerStatus::Ok);
    let want = model
        .predict(&ModelInput {
            rgb: Tensor::new(&shape, rgb.clone()).unwrap(),
            flow: Some(Tensor::new(&shape, flow).unwrap()),
        })
        .unwrap();
    assert_eq!(angle, want.angle.data());
    assert_eq!(speed, want.speed.unwrap().data());

    let st = unsafe {
        steer_model_predict(
            handle,
            rgb.as_ptr(),
            ptr::null(),
            3,
            angle.as_mut_ptr(),
            speed.as_mut_ptr(),
        )
    };
    assert_eq!(st, SteerStatus::NullPointer);
    assert!(last_error().contains("flow"));
    unsafe { steer_model_free(handle) };
    unsafe { steer_model_free(ptr::null_mut()) };
}

#[test]
fn mismatched_checkpoint_and_bad_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.cfg");
    fs::write(&cfg_path, MINI).unwrap();
    let other = RunConfig::parse(&MINI.replace("ff_dim = 16", "ff_dim = 12"), None).unwrap();
    let ck = dir.path().join("m.ckpt");
    checkpoint::save(&Model::new(other.model, 0).unwrap(), &ck).unwrap();

    let mut handle = ptr::null_mut();
    let st = unsafe { steer_model_load(cstr(&cfg_path).as_ptr(), cstr(&ck).as_ptr(), &mut handle) };
    assert_eq!(st, SteerStatus::CheckpointMismatch);
    assert!(handle.is_null());
    assert!(last_error().contains("hash"));

    let missing = dir.path().join("none.ckpt");
    let st = unsafe {
        steer_model_load(
            cstr(&cfg_path).as_ptr(),
            cstr(&missing).as_ptr(),
            &mut handle,
        )
    };
    assert_eq!(st, SteerStatus::Io);

    fs::write(&cfg_path, "model = dual_transformer\nbogus = 1\n").unwrap();
    let st = unsafe { steer_model_new(cstr(&cfg_path).as_ptr(), 0, &mut handle) };
    assert_eq!(st, SteerStatus::InvalidArgument);
    assert!(last_error().contains("bogus"));
    assert_eq!(
        unsafe { steer_model_new(ptr::null(), 0, &mut handle) },
        SteerStatus::NullPointer
    );
}

#[test]
fn flow_of_identical_frames_is_zero_and_encodes_black() {
    let (w, h) = (12, 10);
    let frame = ramp(w * h * 3, 0.05);
    let mut u = vec![1.0; w * h];
    let mut v = vec![1.0; w * h];
    let st = unsafe {
        steer_flow_compute(
            frame.as_ptr(),
            frame.as_ptr(),
            w,
            h,
            u.as_mut_ptr(),
            v.as_mut_ptr(),
        )
    };
    assert_eq!(st, SteerStatus::Ok);
    assert!(u.iter().chain(&v).all(|&x| x == 0.0));
    let mut rgb = vec![7u8; w * h * 3];
    let st = unsafe { steer_flow_encode_hsv(u.as_ptr(), v.as_ptr(), w, h, 10.0, rgb.as_mut_ptr()) };
    assert_eq!(st, SteerStatus::Ok);
    assert!(rgb.iter().all(|&b| b == 0));
    let st = unsafe { steer_flow_encode_hsv(u.as_ptr(), v.as_ptr(), w, h, 0.0, rgb.as_mut_ptr()) };
    assert_eq!(st, SteerStatus::InvalidArgument);
    let st = unsafe {
        steer_flow_compute(
            frame.as_ptr(),
            frame.as_ptr(),
            0,
            h,
            u.as_mut_ptr(),
            v.as_mut_ptr(),
        )
    };
    assert_eq!(st, SteerStatus::InvalidArgument);
}

#[test]
fn smoothing_and_rmse() {
    let y = [0.0, 1.0];
    let mut out = [9.0; 2];
    assert_eq!(
        unsafe { steer_exp_smooth(y.as_ptr(), 2, 0.35, out.as_mut_ptr()) },
        SteerStatus::Ok
    );
    assert_eq!(out, [0.0, 0.35]);
    assert_eq!(
        unsafe { steer_exp_smooth(y.as_ptr(), 2, 0.0, out.as_mut_ptr()) },
        SteerStatus::InvalidArgument
    );
    let mut r = 0.0;
    let (p, t) = ([1.0, 3.0], [0.0, 1.0]);
    assert_eq!(
        unsafe { steer_rmse(p.as_ptr(), t.as_ptr(), 2, &mut r) },
        SteerStatus::Ok
    );
    assert!((r - 2.5f64.sqrt()).abs() < 1e-12);
    assert_eq!(
        unsafe { steer_rmse(p.as_ptr(), t.as_ptr(), 2, ptr::null_mut()) },
        SteerStatus::NullPointer
    );
    assert!(!unsafe { CStr::from_ptr(steer_version()) }
        .to_bytes()
        .is_empty());
}

#[test]
fn generated_header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/steer.h");
    let text = fs::read_to_string(&header).unwrap();
    for sym in [
        "steer_model_load",
        "steer_model_predict",
        "steer_model_free",
        "STEER_STATUS_CHECKPOINT_MISMATCH",
        "SteerModelInfo",
    ] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    fs::write(
        &src,
        format!(
            "#include \"{}\"\n\
             static SteerStatus use(const char *cfg, const char *ck) {{\n\
               SteerModel *m = NULL; SteerModelInfo info;\n\
               SteerStatus s = steer_model_load(cfg, ck, &m);\n\
               if (s != STEER_STATUS_OK) return s;\n\
               s = steer_model_info(m, &info);\n\
               steer_model_free(m);\n\
               return s == STEER_STATUS_CHECKPOINT_MISMATCH ? STEER_STATUS_PANIC : s;\n\
             }}\n\
             int main(void) {{ return (int)use(\"a\", \"b\"); }}\n",
            header.display()
        ),
    )
    .unwrap();
    match std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"])
        .arg(&src)
        .output()
    {
        Ok(o) => assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr)),
        Err(e) => eprintln!("no C compiler available, header syntax not checked: {e}"),
    }
}
