use std::path::Path;
use std::process::{Command, Output};

use polycube_core::fixtures::fixture_mesh;
use polycube_core::grid::{CellLabel, Labels, CELL_COUNT};
use polycube_core::primitives::{write_obj, PrimitiveCategory};

fn polycube(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polycube"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("run polycube")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn single(cat: PrimitiveCategory) -> Labels {
    let mut l = [CellLabel::NULL; CELL_COUNT];
    l[0] = cat.into();
    l
}

fn context_file(dir: &Path, name: &str, cells: &[u8]) -> String {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::json!({ "cells": cells }).to_string()).unwrap();
    p.to_string_lossy().into_owned()
}

fn cube_obj(dir: &Path) -> String {
    let p = dir.join("cube.obj");
    write_obj(&fixture_mesh(&single(PrimitiveCategory::Cube)).unwrap(), &p).unwrap();
    p.to_string_lossy().into_owned()
}

fn cube_cells() -> Vec<u8> {
    let mut c = vec![0; CELL_COUNT];
    c[0] = 1;
    c
}

#[test]
fn infer_auto_on_cube() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = cube_obj(dir.path());
    let out = dir.path().join("run");
    let o = polycube(&out, &["infer", "--mesh", &mesh, "--auto"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["manifest.json", "config.json", "funnel.json", "search.json", "verified_00.tnsr"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["exit_code"], 0);

    let ctx = out.join("verified_contexts.json");
    let v = polycube(
        &dir.path().join("verify"),
        &["verify", "--tensor", out.join("verified_00.tnsr").to_str().unwrap(), "--context", &context_file(dir.path(), "c.json", &cube_cells())],
    );
    assert!(ctx.exists());
    assert_eq!(code(&v), 0, "{}", String::from_utf8_lossy(&v.stderr));
}

#[test]
fn genus_mismatched_context_exits_no_candidate() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = cube_obj(dir.path());
    let mut cells = vec![0; CELL_COUNT];
    cells[0] = 2;
    let ctx = context_file(dir.path(), "thc.json", &cells);
    let o = polycube(&dir.path().join("run"), &["infer", "--mesh", &mesh, "--contexts", &ctx]);
    assert_eq!(code(&o), 3);
}

#[test]
fn open_mesh_exits_topology() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = fixture_mesh(&single(PrimitiveCategory::Cube)).unwrap();
    m.faces.pop();
    let p = dir.path().join("open.obj");
    write_obj(&m, &p).unwrap();
    let o = polycube(&dir.path().join("run"), &["genus", "--mesh", p.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn genus_reports_fixture_values() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("thc.obj");
    write_obj(&fixture_mesh(&single(PrimitiveCategory::ThcZ)).unwrap(), &p).unwrap();
    let out = dir.path().join("run");
    let o = polycube(&out, &["genus", "--mesh", p.to_str().unwrap(), "--split", "z=0.5,0.5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let g: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("genus.json")).unwrap()).unwrap();
    assert_eq!(g["genus"], 1);
}

#[test]
fn mesh_command() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = polycube(&out, &["mesh", "--context", &context_file(dir.path(), "c.json", &cube_cells())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("hex.vtk").exists());
    let mut cells = vec![0; CELL_COUNT];
    cells[0] = 2;
    let o = polycube(&out, &["mesh", "--context", &context_file(dir.path(), "t.json", &cells)]);
    assert_eq!(code(&o), 4);
}

#[test]
fn gen_dataset_fixed_components() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = polycube(&out, &["gen-dataset", "--random-count", "0"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("130 total"), "{stdout}");
}

#[test]
fn bad_arguments_exit_generic() {
    let dir = tempfile::tempdir().unwrap();
    let o = polycube(dir.path(), &["genus", "--mesh", "/nonexistent/x.obj"]);
    assert_eq!(code(&o), 1);
}
