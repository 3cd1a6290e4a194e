//! C interface to the tlon library: load a trained operator network, run
//! predictions, and evaluate the kernel discrepancies.
//!
//! Every function returns a [`TlonStatus`]; on failure a description is
//! available from [`tlon_last_error_message`] on the same thread. Models
//! are opaque handles released with [`tlon_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use tlon::autodiff::Tensor;
use tlon::deeponet::{load_checkpoint, ArchConfig, DeepONet};
use tlon::linalg::DenseMatrix;
use tlon::rkhs::{ceod, median_bandwidth, mmd2, ConditionalDataset, GaussianKernel};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlonStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Model = 4,
    Numeric = 5,
    Panic = 6,
}

/// A loaded operator network.
pub struct TlonModel {
    model: DeepONet,
    branch_len: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(TlonStatus, String);

impl Failure {
    fn new(status: TlonStatus, msg: impl std::fmt::Display) -> Self {
        Failure(status, msg.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> TlonStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TlonStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            TlonStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> FfiResult<()> {
    if p.is_null() {
        Err(Failure::new(TlonStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn c_str<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    non_null(p, name)?;
    CStr::from_ptr(p).to_str().map_err(|_| Failure::new(TlonStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

/// # Safety
/// `p` must point to `len` readable doubles when `len > 0`.
unsafe fn slice<'a>(p: *const f64, len: usize, name: &str) -> FfiResult<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

fn matrix(data: &[f64], rows: usize, cols: usize, name: &str) -> FfiResult<DenseMatrix> {
    DenseMatrix::from_vec(rows, cols, data.to_vec()).map_err(|e| Failure::new(TlonStatus::InvalidArgument, format!("{name}: {e}")))
}

fn numeric(e: impl std::fmt::Display) -> Failure {
    Failure::new(TlonStatus::Numeric, e)
}

fn kernel(bandwidth: f64, data: &DenseMatrix) -> FfiResult<GaussianKernel> {
    let bw = if bandwidth > 0.0 { bandwidth } else { median_bandwidth(data) };
    GaussianKernel::new(bw).map_err(|e| Failure::new(TlonStatus::InvalidArgument, e))
}

fn stack(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(a.rows() + b.rows(), a.cols(), |i, j| if i < a.rows() { a[(i, j)] } else { b[(i - a.rows(), j)] })
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tlon_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tlon_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint. `arch_json` is the architecture as JSON; when null
/// the `arch.json` next to the checkpoint is used.
///
/// # Safety
/// `checkpoint_path` and a non-null `arch_json` must be NUL-terminated
/// strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tlon_model_load(
    checkpoint_path: *const c_char,
    arch_json: *const c_char,
    out: *mut *mut TlonModel,
) -> TlonStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = PathBuf::from(c_str(checkpoint_path, "checkpoint_path")?);
        let json = if arch_json.is_null() {
            let arch_path = path.parent().unwrap_or(Path::new(".")).join("arch.json");
            std::fs::read_to_string(&arch_path).map_err(|e| Failure::new(TlonStatus::Io, format!("{}: {e}", arch_path.display())))?
        } else {
            c_str(arch_json, "arch_json")?.to_string()
        };
        let arch: ArchConfig =
            serde_json::from_str(&json).map_err(|e| Failure::new(TlonStatus::InvalidArgument, format!("architecture: {e}")))?;
        if !path.exists() {
            return Err(Failure::new(TlonStatus::Io, format!("{} not found", path.display())));
        }
        let model = load_checkpoint(&path, &arch).map_err(|e| Failure::new(TlonStatus::Model, e))?;
        let branch_len = arch.branch_input.iter().product();
        *out = Box::into_raw(Box::new(TlonModel { model, branch_len }));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must be null or a handle from [`tlon_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tlon_model_free(model: *mut TlonModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Length of one flattened branch input and the coordinate dimension.
///
/// # Safety
/// `model` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn tlon_model_dims(model: *const TlonModel, branch_len: *mut usize, coord_dim: *mut usize) -> TlonStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(branch_len, "branch_len")?;
        non_null(coord_dim, "coord_dim")?;
        *branch_len = (*model).branch_len;
        *coord_dim = (*model).model.arch().coord_dim;
        Ok(())
    })
}

/// Predicts `n_samples × n_points` outputs (row-major) for `n_samples`
/// flattened branch inputs and `n_points` coordinates.
///
/// # Safety
/// `inputs` holds `n_samples × branch_len` doubles, `coords` holds
/// `n_points × coord_dim` doubles and `out` has room for
/// `n_samples × n_points` doubles.
#[no_mangle]
pub unsafe extern "C" fn tlon_model_predict(
    model: *const TlonModel,
    inputs: *const f64,
    n_samples: usize,
    coords: *const f64,
    n_points: usize,
    out: *mut f64,
) -> TlonStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        let m = &*model;
        if n_samples == 0 || n_points == 0 {
            return Err(Failure::new(TlonStatus::InvalidArgument, "n_samples and n_points must be positive"));
        }
        let coord_dim = m.model.arch().coord_dim;
        let x = slice(inputs, n_samples * m.branch_len, "inputs")?;
        let c = slice(coords, n_points * coord_dim, "coords")?;
        let mut shape = vec![n_samples];
        shape.extend(&m.model.arch().branch_input);
        let bad = |e: tlon::autodiff::AdError| Failure::new(TlonStatus::InvalidArgument, e);
        let x = Tensor::new(shape, x.to_vec()).map_err(bad)?;
        let c = Tensor::new(vec![n_points, coord_dim], c.to_vec()).map_err(bad)?;
        let pred = m.model.predict(&x, &c).map_err(|e| Failure::new(TlonStatus::Model, e))?;
        std::slice::from_raw_parts_mut(out, n_samples * n_points).copy_from_slice(pred.data());
        Ok(())
    })
}

/// Discrepancy between the conditional distributions of `(p_x, p_y)`
/// (`n_p` rows) and `(q_x, q_y)` (`n_q` rows) under Gaussian kernels.
/// A non-positive bandwidth selects the median heuristic over both sets.
///
/// # Safety
/// Each array holds `rows × dim` doubles as named; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn tlon_ceod(
    p_x: *const f64,
    p_y: *const f64,
    n_p: usize,
    q_x: *const f64,
    q_y: *const f64,
    n_q: usize,
    dim_x: usize,
    dim_y: usize,
    lambda: f64,
    bandwidth_x: f64,
    bandwidth_y: f64,
    out: *mut f64,
) -> TlonStatus {
    guard(|| {
        non_null(out, "out")?;
        let px = matrix(slice(p_x, n_p * dim_x, "p_x")?, n_p, dim_x, "p_x")?;
        let py = matrix(slice(p_y, n_p * dim_y, "p_y")?, n_p, dim_y, "p_y")?;
        let qx = matrix(slice(q_x, n_q * dim_x, "q_x")?, n_q, dim_x, "q_x")?;
        let qy = matrix(slice(q_y, n_q * dim_y, "q_y")?, n_q, dim_y, "q_y")?;
        let kx = kernel(bandwidth_x, &stack(&px, &qx))?;
        let ky = kernel(bandwidth_y, &stack(&py, &qy))?;
        let invalid = |e: tlon::rkhs::RkhsError| Failure::new(TlonStatus::InvalidArgument, e);
        let p = ConditionalDataset::new(px, py).map_err(invalid)?;
        let q = ConditionalDataset::new(qx, qy).map_err(invalid)?;
        let (value, _) = ceod(&p, &q, lambda, &kx, &ky).map_err(numeric)?;
        *out = value;
        Ok(())
    })
}

/// Squared maximum mean discrepancy between two samples under a Gaussian
/// kernel; a non-positive bandwidth selects the median heuristic.
///
/// # Safety
/// `a` holds `n_a × dim` and `b` holds `n_b × dim` doubles; `out` is
/// writable.
#[no_mangle]
pub unsafe extern "C" fn tlon_mmd2(
    a: *const f64,
    n_a: usize,
    b: *const f64,
    n_b: usize,
    dim: usize,
    bandwidth: f64,
    out: *mut f64,
) -> TlonStatus {
    guard(|| {
        non_null(out, "out")?;
        let a = matrix(slice(a, n_a * dim, "a")?, n_a, dim, "a")?;
        let b = matrix(slice(b, n_b * dim, "b")?, n_b, dim, "b")?;
        let k = kernel(bandwidth, &stack(&a, &b))?;
        *out = mmd2(&a, &b, &k).map_err(|e| Failure::new(TlonStatus::InvalidArgument, e))?;
        Ok(())
    })
}
