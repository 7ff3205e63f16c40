use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use polycube_ffi::*;

fn last_error() -> String {
    let p = pc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn context(labels: [u8; 12]) -> *mut PcContext {
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { pc_context_from_labels(labels.as_ptr(), &mut c) }, PcStatus::Ok);
    c
}

#[test]
fn null_handles_and_bad_input_report_errors() {
    let mut g = 0i64;
    assert_eq!(unsafe { pc_mesh_genus(ptr::null(), &mut g) }, PcStatus::NullPointer);
    assert!(last_error().contains("mesh"));
    let mut c = ptr::null_mut();
    let bad = [11u8; 12];
    assert_eq!(unsafe { pc_context_from_labels(bad.as_ptr(), &mut c) }, PcStatus::MalformedContext);
    assert!(c.is_null());
    let bits = CString::new("0101").unwrap();
    assert_eq!(unsafe { pc_context_from_bitstring(bits.as_ptr(), &mut c) }, PcStatus::MalformedContext);
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { pc_mesh_primitive(11, 1.0, &mut m) }, PcStatus::Parameter);
    assert_eq!(unsafe { pc_mesh_primitive(1, -1.0, &mut m) }, PcStatus::Parameter);
    unsafe { pc_mesh_free(ptr::null_mut()) };
    assert!(!unsafe { CStr::from_ptr(pc_version()) }.to_bytes().is_empty());
}

#[test]
fn mesh_genus_and_open_mesh() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { pc_mesh_primitive(2, 1.0, &mut m) }, PcStatus::Ok);
    let mut g = -1i64;
    assert_eq!(unsafe { pc_mesh_genus(m, &mut g) }, PcStatus::Ok);
    assert_eq!(g, 1);
    unsafe { pc_mesh_free(m) };

    let v = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    let f = [0u32, 1, 2];
    let mut open = ptr::null_mut();
    assert_eq!(unsafe { pc_mesh_from_arrays(v.as_ptr(), 3, f.as_ptr(), 1, &mut open) }, PcStatus::Ok);
    let (mut nv, mut nf) = (0, 0);
    assert_eq!(unsafe { pc_mesh_counts(open, &mut nv, &mut nf) }, PcStatus::Ok);
    assert_eq!((nv, nf), (3, 1));
    assert_eq!(unsafe { pc_mesh_genus(open, &mut g) }, PcStatus::Topology);
    unsafe { pc_mesh_free(open) };
    let bad = [0u32, 1, 9];
    assert_eq!(unsafe { pc_mesh_from_arrays(v.as_ptr(), 3, bad.as_ptr(), 1, &mut open) }, PcStatus::Parameter);
}

#[test]
fn context_tensor_verify_round_trip() {
    let c = context([2, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0]);
    let mut labels = [0u8; 12];
    assert_eq!(unsafe { pc_context_labels(c, labels.as_mut_ptr()) }, PcStatus::Ok);
    assert_eq!(labels[0], 2);
    let mut g = 0;
    assert_eq!(unsafe { pc_context_genus(c, &mut g) }, PcStatus::Ok);
    assert_eq!(g, 1);

    let mut t = ptr::null_mut();
    assert_eq!(unsafe { pc_tensor_ideal(c, 42, &mut t) }, PcStatus::Ok);
    let mut buf = vec![0.0; pc_tensor_len()];
    assert_eq!(unsafe { pc_tensor_copy(t, buf.as_mut_ptr(), buf.len()) }, PcStatus::Ok);
    assert!(buf.iter().any(|&v| v != 0.0));
    assert_eq!(unsafe { pc_tensor_copy(t, buf.as_mut_ptr(), 10) }, PcStatus::Layout);

    let (mut pass, mut d) = (0, 0.0);
    assert_eq!(unsafe { pc_verify(t, c, 42, 0.0, 0.0, 0.0, &mut pass, &mut d) }, PcStatus::Ok);
    assert_eq!(pass, 1);
    let wrong = context([1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0]);
    assert_eq!(unsafe { pc_verify(t, wrong, 42, 0.0, 0.0, 0.0, &mut pass, ptr::null_mut()) }, PcStatus::Ok);
    assert_eq!(pass, 0);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("t.tnsr").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { pc_tensor_write(t, path.as_ptr()) }, PcStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { pc_tensor_read(path.as_ptr(), &mut back) }, PcStatus::Ok);
    let missing = CString::new(dir.path().join("none.tnsr").to_str().unwrap()).unwrap();
    let mut none = ptr::null_mut();
    assert_eq!(unsafe { pc_tensor_read(missing.as_ptr(), &mut none) }, PcStatus::Io);
    unsafe {
        pc_tensor_free(back);
        pc_tensor_free(t);
        pc_context_free(c);
        pc_context_free(wrong);
    }
}

#[test]
fn hex_meshing_and_counts() {
    let cube = context([1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { pc_hex_from_context(cube, 2, &mut h) }, PcStatus::Ok);
    let (mut v, mut e, mut sj) = (0, 0, 0.0);
    assert_eq!(unsafe { pc_hex_summary(h, &mut v, &mut e, &mut sj) }, PcStatus::Ok);
    assert_eq!((v, e, sj), (27, 8, 1.0));
    unsafe { pc_hex_free(h) };
    let thc = context([2, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
    assert_eq!(unsafe { pc_hex_from_context(thc, 2, &mut h) }, PcStatus::Unsupported);
    let mut n = 0u64;
    assert_eq!(unsafe { pc_count_occupancy_patterns(2, &mut n) }, PcStatus::Ok);
    assert_eq!(n, 4083);
    unsafe {
        pc_context_free(cube);
        pc_context_free(thc);
    }
}

#[test]
fn automated_search_on_cube() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { pc_mesh_primitive(1, 1.0, &mut m) }, PcStatus::Ok);
    let mut report = ptr::null_mut();
    assert_eq!(unsafe { pc_search_auto(m, 16, 42, &mut report) }, PcStatus::Ok);
    let text = unsafe { CStr::from_ptr(report) }.to_string_lossy().into_owned();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["funnel"]["afterGenus"], 7);
    assert_eq!(v["verified_contexts"][0]["labels"][0], 1);
    unsafe {
        pc_string_free(report);
        pc_mesh_free(m);
    }
}

#[test]
fn header_compiles_as_c() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = dir.join("include/polycube.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["pc_verify", "pc_search_auto", "PC_STATUS_NO_CANDIDATE", "typedef struct PcMesh PcMesh"] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"polycube.h\"\nint main(void) {\n  PcContext *c = 0;\n  uint8_t l[12] = {1};\n  \
         if (pc_context_from_labels(l, &c) != PC_STATUS_OK) return 1;\n  pc_context_free(c);\n  return 0;\n}\n",
    )
    .unwrap();
    let Ok(status) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-c", "-o"])
        .arg(tmp.path().join("use.o"))
        .arg("-I")
        .arg(dir.join("include"))
        .arg(&src)
        .status()
    else {
        eprintln!("no C compiler found; header syntax not checked");
        return;
    };
    assert!(status.success());
}
