//! C ABI over `polycube-core`.
//!
//! Objects cross the boundary as opaque handles created by `pc_*_new`/`pc_*_from_*`
//! and released by the matching `pc_*_free`. Every fallible call returns a
//! `PcStatus`; on failure `pc_last_error_message` describes the error for the
//! calling thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use polycube_core::diffusion::{ScheduleConfig, TemplateProjectionDenoiser};
use polycube_core::grid::{context_genus, decode_context, encode_context, labels_from_values, ContextVector, CELL_COUNT};
use polycube_core::primitives::{make_primitive_mesh, read_obj, PrimitiveCategory, PrimitiveParams, TemplateLibrary, TriMesh};
use polycube_core::search::{auto_generate_context, mesh_genus, InferenceEngine, SearchConfig};
use polycube_core::tensor::{ideal_tensor, GeometryTensor, FRAME_CELL_EDGE, TENSOR_LEN};
use polycube_core::verification::{verify, VerificationParams};
use polycube_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcStatus {
    Ok = 0,
    NullPointer = 1,
    Parameter = 2,
    Topology = 3,
    DegenerateGeometry = 4,
    MalformedContext = 5,
    Layout = 6,
    Unsupported = 7,
    Io = 8,
    NoCandidate = 9,
    Panic = 10,
    Other = 11,
}

pub struct PcMesh(TriMesh);
pub struct PcContext(ContextVector);
pub struct PcTensor(GeometryTensor);
pub struct PcHexMesh {
    vertices: usize,
    elements: usize,
    min_sj: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> PcStatus {
    match err {
        Error::Parameter(_) | Error::Json(_) | Error::Format { .. } => PcStatus::Parameter,
        Error::Topology(_) | Error::Disconnected { .. } | Error::RepartitionRequired { .. } => PcStatus::Topology,
        Error::DegenerateGeometry(_) => PcStatus::DegenerateGeometry,
        Error::MalformedContext(_) => PcStatus::MalformedContext,
        Error::Layout(_) => PcStatus::Layout,
        Error::UnsupportedCell(_) | Error::EmptyAssembly => PcStatus::Unsupported,
        Error::Io { .. } => PcStatus::Io,
        Error::ContractViolation(_) => PcStatus::Other,
    }
}

struct Failure(PcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PcStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PcStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    unsafe { out.write(value) };
    Ok(())
}

unsafe fn boxed<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    unsafe { put(out, Box::into_raw(Box::new(value)), "output handle") }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure(PcStatus::Parameter, "path is not UTF-8".into()))?;
    Ok(Path::new(s))
}

/// Message of the last failed call on this thread, or NULL. Valid until the next call.
#[no_mangle]
pub extern "C" fn pc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn pc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Builds a mesh from `n_vertices` xyz triples and `n_faces` index triples.
#[no_mangle]
pub unsafe extern "C" fn pc_mesh_from_arrays(
    vertices: *const f64,
    n_vertices: usize,
    faces: *const u32,
    n_faces: usize,
    out: *mut *mut PcMesh,
) -> PcStatus {
    guard(|| {
        if (vertices.is_null() && n_vertices > 0) || (faces.is_null() && n_faces > 0) {
            return Err(null("vertex or face array"));
        }
        let v = if n_vertices == 0 { &[][..] } else { unsafe { std::slice::from_raw_parts(vertices, 3 * n_vertices) } };
        let f = if n_faces == 0 { &[][..] } else { unsafe { std::slice::from_raw_parts(faces, 3 * n_faces) } };
        let mesh = TriMesh {
            vertices: v.chunks_exact(3).map(|c| [c[0], c[1], c[2]].into()).collect(),
            faces: f.chunks_exact(3).map(|c| [c[0] as usize, c[1] as usize, c[2] as usize]).collect(),
        };
        if !mesh.indices_in_range() {
            return Err(Failure(PcStatus::Parameter, "face index out of range".into()));
        }
        unsafe { boxed(out, PcMesh(mesh)) }
    })
}

/// Primitive mesh of category `category` (1..10) with the default hole proportions.
#[no_mangle]
pub unsafe extern "C" fn pc_mesh_primitive(category: u8, edge: f64, out: *mut *mut PcMesh) -> PcStatus {
    guard(|| {
        let cat = PrimitiveCategory::from_index(category)
            .ok_or_else(|| Failure(PcStatus::Parameter, format!("category {category} is not in 1..10")))?;
        let mesh = make_primitive_mesh(cat, &PrimitiveParams::with_edge(edge))?;
        unsafe { boxed(out, PcMesh(mesh)) }
    })
}

#[no_mangle]
pub unsafe extern "C" fn pc_mesh_read_obj(path: *const c_char, out: *mut *mut PcMesh) -> PcStatus {
    guard(|| {
        let mesh = read_obj(unsafe { path_arg(path)? })?;
        unsafe { boxed(out, PcMesh(mesh)) }
    })
}

#[no_mangle]
pub unsafe extern "C" fn pc_mesh_counts(mesh: *const PcMesh, vertices: *mut usize, faces: *mut usize) -> PcStatus {
    guard(|| {
        let m = unsafe { as_ref(mesh, "mesh")? };
        unsafe {
            put(vertices, m.0.vertices.len(), "vertex count")?;
            put(faces, m.0.faces.len(), "face count")
        }
    })
}

/// Genus summed over components; fails with `Topology` for open or non-orientable meshes.
#[no_mangle]
pub unsafe extern "C" fn pc_mesh_genus(mesh: *const PcMesh, genus: *mut i64) -> PcStatus {
    guard(|| {
        let m = unsafe { as_ref(mesh, "mesh")? };
        let g = mesh_genus(&m.0)?;
        unsafe { put(genus, g, "genus") }
    })
}

#[no_mangle]
pub unsafe extern "C" fn pc_mesh_free(mesh: *mut PcMesh) {
    if !mesh.is_null() {
        drop(unsafe { Box::from_raw(mesh) });
    }
}

/// Context from 12 cell labels, each in 0..10 (0 is null).
#[no_mangle]
pub unsafe extern "C" fn pc_context_from_labels(labels: *const u8, out: *mut *mut PcContext) -> PcStatus {
    guard(|| {
        if labels.is_null() {
            return Err(null("labels"));
        }
        let values = unsafe { std::slice::from_raw_parts(labels, CELL_COUNT) };
        let l = labels_from_values(values)?;
        unsafe { boxed(out, PcContext(encode_context(&l))) }
    })
}

/// Context from its 132-character bitstring.
#[no_mangle]
pub unsafe extern "C" fn pc_context_from_bitstring(bits: *const c_char, out: *mut *mut PcContext) -> PcStatus {
    guard(|| {
        if bits.is_null() {
            return Err(null("bitstring"));
        }
        let s = unsafe { CStr::from_ptr(bits) }
            .to_str()
            .map_err(|_| Failure(PcStatus::MalformedContext, "bitstring is not UTF-8".into()))?;
        unsafe { boxed(out, PcContext(ContextVector::from_bitstring(s)?)) }
    })
}

/// Writes the 12 cell labels into `labels`.
#[no_mangle]
pub unsafe extern "C" fn pc_context_labels(ctx: *const PcContext, labels: *mut u8) -> PcStatus {
    guard(|| {
        let c = unsafe { as_ref(ctx, "context")? };
        if labels.is_null() {
            return Err(null("labels"));
        }
        let decoded = decode_context(&c.0)?;
        let out = unsafe { std::slice::from_raw_parts_mut(labels, CELL_COUNT) };
        for (o, l) in out.iter_mut().zip(decoded) {
            *o = l.value();
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pc_context_genus(ctx: *const PcContext, genus: *mut i64) -> PcStatus {
    guard(|| {
        let c = unsafe { as_ref(ctx, "context")? };
        let g = context_genus(&c.0)?;
        unsafe { put(genus, g, "genus") }
    })
}

#[no_mangle]
pub unsafe extern "C" fn pc_context_free(ctx: *mut PcContext) {
    if !ctx.is_null() {
        drop(unsafe { Box::from_raw(ctx) });
    }
}

/// Ideal tensor of a context: each occupied cell holds its category template.
#[no_mangle]
pub unsafe extern "C" fn pc_tensor_ideal(ctx: *const PcContext, library_seed: u64, out: *mut *mut PcTensor) -> PcStatus {
    guard(|| {
        let c = unsafe { as_ref(ctx, "context")? };
        let lib = TemplateLibrary::with_edge(library_seed, FRAME_CELL_EDGE);
        let t = ideal_tensor(&decode_context(&c.0)?, &lib)?;
        unsafe { boxed(out, PcTensor(t)) }
    })
}

#[no_mangle]
pub unsafe extern "C" fn pc_tensor_read(path: *const c_char, out: *mut *mut PcTensor) -> PcStatus {
    guard(|| {
        let t = GeometryTensor::read(unsafe { path_arg(path)? })?;
        unsafe { boxed(out, PcTensor(t)) }
    })
}

#[no_mangle]
pub unsafe extern "C" fn pc_tensor_write(t: *const PcTensor, path: *const c_char) -> PcStatus {
    guard(|| {
        let t = unsafe { as_ref(t, "tensor")? };
        t.0.write(unsafe { path_arg(path)? })?;
        Ok(())
    })
}

/// Number of scalars in a tensor (64 * 96 * 3).
#[no_mangle]
pub extern "C" fn pc_tensor_len() -> usize {
    TENSOR_LEN
}

/// Copies the row-major (row, col, channel) values into `buf`, which holds `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pc_tensor_copy(t: *const PcTensor, buf: *mut f64, len: usize) -> PcStatus {
    guard(|| {
        let t = unsafe { as_ref(t, "tensor")? };
        if buf.is_null() {
            return Err(null("buffer"));
        }
        if len < TENSOR_LEN {
            return Err(Failure(PcStatus::Layout, format!("buffer holds {len} values, need {TENSOR_LEN}")));
        }
        unsafe { std::slice::from_raw_parts_mut(buf, TENSOR_LEN) }.copy_from_slice(t.0.as_slice());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pc_tensor_free(t: *mut PcTensor) {
    if !t.is_null() {
        drop(unsafe { Box::from_raw(t) });
    }
}

/// GOCC + TCV. Non-positive thresholds select the defaults.
#[no_mangle]
pub unsafe extern "C" fn pc_verify(
    t: *const PcTensor,
    ctx: *const PcContext,
    library_seed: u64,
    tau_active: f64,
    tau_cd: f64,
    p: f64,
    passed: *mut i32,
    total_d_target: *mut f64,
) -> PcStatus {
    guard(|| {
        let (t, c) = unsafe { (as_ref(t, "tensor")?, as_ref(ctx, "context")?) };
        let d = VerificationParams::default();
        let pick = |v: f64, dv: f64| if v > 0.0 { v } else { dv };
        let params = VerificationParams {
            tau_active: pick(tau_active, d.tau_active),
            tau_cd: pick(tau_cd, d.tau_cd),
            p: pick(p, d.p),
        };
        let lib = TemplateLibrary::with_edge(library_seed, FRAME_CELL_EDGE);
        let r = verify(&t.0, &c.0, &lib, &params)?;
        unsafe {
            put(passed, r.overall_pass as i32, "pass flag")?;
            if !total_d_target.is_null() {
                total_d_target.write(r.total_d_target());
            }
        }
        Ok(())
    })
}

/// Automated context search with the template-projection denoiser. On success
/// `*report_json` receives the full search report (free with `pc_string_free`);
/// `NoCandidate` is returned, with the report still set, when nothing verified.
#[no_mangle]
pub unsafe extern "C" fn pc_search_auto(
    mesh: *const PcMesh,
    resolution: usize,
    seed: u64,
    report_json: *mut *mut c_char,
) -> PcStatus {
    let mut verified = true;
    let status = guard(|| {
        let m = unsafe { as_ref(mesh, "mesh")? };
        if report_json.is_null() {
            return Err(null("report pointer"));
        }
        let schedule = ScheduleConfig::default().build()?;
        let denoiser = TemplateProjectionDenoiser::new(&schedule)?;
        let library = TemplateLibrary::with_edge(42, FRAME_CELL_EDGE);
        let engine = InferenceEngine {
            schedule: &schedule,
            denoiser: &denoiser,
            library: &library,
            params: VerificationParams::default(),
            seed,
            deterministic: true,
        };
        let cfg = SearchConfig { resolution, ..SearchConfig::default() };
        let result = auto_generate_context(&m.0, &cfg, &engine)?;
        verified = !result.verified_contexts.is_empty();
        let text = CString::new(result.to_json()?).map_err(|e| Failure(PcStatus::Other, e.to_string()))?;
        unsafe { report_json.write(text.into_raw()) };
        Ok(())
    });
    if status == PcStatus::Ok && !verified {
        set_error("no context passed verification");
        return PcStatus::NoCandidate;
    }
    status
}

/// Structured hex mesh of a cube-only context with `n` elements per cell edge.
#[no_mangle]
pub unsafe extern "C" fn pc_hex_from_context(ctx: *const PcContext, n: usize, out: *mut *mut PcHexMesh) -> PcStatus {
    guard(|| {
        let c = unsafe { as_ref(ctx, "context")? };
        let hex = polycube_core::meshing::polycube_to_hex(&decode_context(&c.0)?, n)?;
        let q = polycube_core::meshing::quality(&hex)?;
        unsafe {
            boxed(out, PcHexMesh { vertices: hex.vertices.len(), elements: hex.elements.len(), min_sj: q.global_min })
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn pc_hex_summary(
    hex: *const PcHexMesh,
    vertices: *mut usize,
    elements: *mut usize,
    min_scaled_jacobian: *mut f64,
) -> PcStatus {
    guard(|| {
        let h = unsafe { as_ref(hex, "hex mesh")? };
        unsafe {
            put(vertices, h.vertices, "vertex count")?;
            put(elements, h.elements, "element count")?;
            put(min_scaled_jacobian, h.min_sj, "scaled Jacobian")
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn pc_hex_free(hex: *mut PcHexMesh) {
    if !hex.is_null() {
        drop(unsafe { Box::from_raw(hex) });
    }
}

/// Number of occupancy patterns of the 12-cell grid with at least `min_occupied` cells.
#[no_mangle]
pub unsafe extern "C" fn pc_count_occupancy_patterns(min_occupied: usize, count: *mut u64) -> PcStatus {
    guard(|| {
        let n = polycube_core::grid::count_occupancy_patterns(min_occupied)?;
        unsafe { put(count, n, "count") }
    })
}
