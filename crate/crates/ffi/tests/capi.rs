use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use sysarg::dataset::Dataset;
use sysarg::model::{Checkpoint, Model, ModelConfig, Objective};
use sysarg::repr::Ablation;
use sysarg::synth::WorkloadConfig;
use sysarg_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as std::ffi::c_char; 256];
    let n = unsafe { sysarg_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

unsafe fn take_string(p: *mut std::ffi::c_char) -> String {
    let s = CStr::from_ptr(p).to_str().unwrap().to_owned();
    sysarg_string_free(p);
    s
}

#[test]
fn encode_matches_core() {
    let mut out = [0.0; 6];
    assert_eq!(unsafe { sysarg_encode(80.0, 6, out.as_mut_ptr()) }, SysargStatus::Ok);
    let want = sysarg::repr::SinusoidalEncoder::new(6).unwrap().encode(80.0);
    assert_eq!(out.to_vec(), want);
    assert_eq!(unsafe { sysarg_encode(1.0, 0, out.as_mut_ptr()) }, SysargStatus::Config);
    assert_eq!(unsafe { sysarg_encode(1.0, 2, ptr::null_mut()) }, SysargStatus::NullPointer);
    assert!(last_error().contains("null"));
}

#[test]
fn parse_line_round_trips_through_json() {
    let line = CString::new(
        "[10:00:00.000000100] (+0.000000000) web1 syscall_exit_read: { cpu_id = 2 }, { procname = \"nginx\", pid = 7, tid = 8 }, { ret = -11 }",
    )
    .unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { sysarg_parse_line(line.as_ptr(), 0, &mut out) }, SysargStatus::Ok);
    let json = unsafe { take_string(out) };
    let event = sysarg::jsonl::parse_jsonl_line(&json, 1).unwrap();
    assert_eq!(event.sysname, "read");
    assert_eq!(event.ret, Some(-11));
    assert_eq!(event.timestamp_ns, 0);

    let bad = CString::new("not a trace line").unwrap();
    assert_eq!(unsafe { sysarg_parse_line(bad.as_ptr(), 0, &mut out) }, SysargStatus::Parse);
}

#[test]
fn vocab_handle() {
    let tokens = CString::new("read\nwrite\nread\n").unwrap();
    let mut v = ptr::null_mut();
    unsafe {
        assert_eq!(sysarg_vocab_build(tokens.as_ptr(), 2, &mut v), SysargStatus::Ok);
        assert_eq!(sysarg_vocab_len(v), 4);
        let mut id = 0;
        let read = CString::new("read").unwrap();
        let write = CString::new("write").unwrap();
        assert_eq!(sysarg_vocab_lookup(v, read.as_ptr(), &mut id), SysargStatus::Ok);
        assert_eq!(id, 3);
        assert_eq!(sysarg_vocab_lookup(v, write.as_ptr(), &mut id), SysargStatus::Ok);
        assert_eq!(id, 1);
        let mut h = ptr::null_mut();
        assert_eq!(sysarg_vocab_hash(v, &mut h), SysargStatus::Ok);
        assert_eq!(take_string(h).len(), 64);
        sysarg_vocab_free(v);
        assert_eq!(sysarg_vocab_len(ptr::null()), 0);
    }
}

#[test]
fn generate_is_deterministic() {
    let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(sysarg_generate(4, 50, &mut a), SysargStatus::Ok);
        assert_eq!(sysarg_generate(4, 50, &mut b), SysargStatus::Ok);
        let (a, b) = (take_string(a), take_string(b));
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 50);
    }
}

fn write_checkpoint(dir: &std::path::Path) -> (PathBuf, String) {
    let wl = WorkloadConfig {
        n_events: 200,
        seed: 5,
        ..WorkloadConfig::default()
    };
    let ds = Dataset::synthesize(&wl, 1, 16).unwrap();
    let cfg = ModelConfig {
        tf_layers: 1,
        window_len: 16,
        ..ModelConfig::transformer()
    };
    let model = Model::new(Ablation::All.config(), cfg, Objective::Lm, ds.sys_vocab.len(), ds.proc_vocab.len(), 1).unwrap();
    let path = dir.join("m.json");
    Checkpoint::new(model, ds.sys_vocab, ds.proc_vocab, None).unwrap().save(&path).unwrap();
    let mut jsonl = Vec::new();
    sysarg::jsonl::write_jsonl(&mut jsonl, &sysarg::synth::generate(wl).unwrap()).unwrap();
    (path, String::from_utf8(jsonl).unwrap())
}

#[test]
fn model_scoring_matches_core() {
    let dir = tempfile::tempdir().unwrap();
    let (path, jsonl) = write_checkpoint(dir.path());
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let text = CString::new(jsonl.clone()).unwrap();
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(sysarg_model_load(cpath.as_ptr(), &mut m), SysargStatus::Ok);
        assert_eq!(sysarg_model_window_len(m), 16);
        let mut n = 0;
        assert_eq!(
            sysarg_model_score_jsonl(m, text.as_ptr(), ptr::null_mut(), 0, &mut n),
            SysargStatus::BufferTooSmall
        );
        assert_eq!(n, 200 / 16);
        let mut scores = vec![0.0; n];
        assert_eq!(
            sysarg_model_score_jsonl(m, text.as_ptr(), scores.as_mut_ptr(), n, &mut n),
            SysargStatus::Ok
        );
        let ck = Checkpoint::load(&path).unwrap();
        let events = sysarg::jsonl::read_jsonl(jsonl.as_bytes()).unwrap();
        let records = events.iter().map(|e| sysarg::encode_event(e, &ck.sys_vocab, &ck.proc_vocab));
        let seqs = sysarg::ingest::window(records, 16).unwrap();
        assert_eq!(scores, sysarg::experiment::score_sequences(&ck.model, &seqs).unwrap());
        assert!(scores.iter().all(|s| *s < 0.0));

        let empty = CString::new("").unwrap();
        assert_eq!(sysarg_model_score_jsonl(m, empty.as_ptr(), ptr::null_mut(), 0, &mut n), SysargStatus::Ok);
        assert_eq!(n, 0);
        sysarg_model_free(m);
    }
    let missing = CString::new(dir.path().join("nope").to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { sysarg_model_load(missing.as_ptr(), &mut m) }, SysargStatus::Io);
    assert!(m.is_null());
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/sysarg.h")).unwrap();
    for name in [
        "SYSARG_STATUS_OK",
        "typedef struct SysargModel SysargModel",
        "sysarg_last_error",
        "sysarg_encode",
        "sysarg_parse_line",
        "sysarg_generate",
        "sysarg_vocab_build",
        "sysarg_model_load",
        "sysarg_model_score_jsonl",
        "sysarg_string_free",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

/// Compiles and runs a C program against the header and static library.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    // The library built alongside this test binary sits next to it.
    let exe = std::env::current_exe().unwrap();
    let lib = exe.parent().unwrap().join("libsysarg_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "sysarg.h"
int main(void) {
    double v[4];
    if (sysarg_encode(0.0, 4, v) != SYSARG_STATUS_OK) return 1;
    if (v[0] != 0.0 || v[1] != 1.0 || v[2] != 0.0 || v[3] != 1.0) return 2;
    char *trace = NULL;
    if (sysarg_generate(1, 3, &trace) != SYSARG_STATUS_OK) return 3;
    sysarg_string_free(trace);
    if (sysarg_encode(0.0, 0, v) != SYSARG_STATUS_CONFIG) return 4;
    char msg[128];
    if (sysarg_last_error(msg, sizeof msg) == 0) return 5;
    printf("ok %s\n", sysarg_version());
    return 0;
}
"#,
    )
    .unwrap();
    let out = dir.path().join("main");
    let status = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let run = Command::new(&out).output().unwrap();
    assert!(run.status.success(), "C program exited with {:?}", run.status);
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Ok(cc.to_string());
        }
    }
    Err(())
}
