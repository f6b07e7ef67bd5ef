//! C ABI over the symtaylor toolkit.
//!
//! Models and systems are opaque handles created and destroyed through this
//! interface. Every fallible function returns an [`StStatus`]; on failure
//! [`st_last_error_message`] describes the most recent error on the calling
//! thread. State vectors are passed as separate `q` and `p` arrays of
//! length `dim`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use symtaylor::cli::RunConfig;
use symtaylor::training::{make_datasets, train, Checkpoint, ModelPair};
use symtaylor::{builtin_system, symplectic_step, Error, GradientField, HamiltonianSystem, PhaseState, SystemName};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NumericFailure = 4,
    Config = 5,
    Io = 6,
    Parse = 7,
    Panic = 8,
}

/// A trained or initialized pair of gradient networks.
pub struct StModel {
    inner: ModelPair,
}

/// A built-in analytic Hamiltonian.
pub struct StSystem {
    inner: HamiltonianSystem,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

fn status_of(err: &Error) -> StStatus {
    match err.kind() {
        "dimension_mismatch" => StStatus::DimensionMismatch,
        "numeric_failure" | "singular_potential" => StStatus::NumericFailure,
        "io" => StStatus::Io,
        "json" | "csv" => StStatus::Parse,
        "invalid_state" | "taylor_term" | "empty_batch" => StStatus::InvalidArgument,
        _ => StStatus::Config,
    }
}

fn fail(status: StStatus, message: &str) -> StStatus {
    set_error(message);
    status
}

fn guard(body: impl FnOnce() -> Result<(), StStatus>) -> StStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            StStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(_) => fail(StStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: symtaylor::Result<T>) -> Result<T, StStatus> {
    r.map_err(|e| fail(status_of(&e), &e.to_string()))
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), StStatus> {
    if p.is_null() {
        Err(fail(StStatus::NullPointer, &format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, StStatus> {
    non_null(s, what)?;
    CStr::from_ptr(s).to_str().map_err(|_| fail(StStatus::InvalidArgument, &format!("{what} is not UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], StStatus> {
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], StStatus> {
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn model_ref<'a>(m: *const StModel) -> Result<&'a ModelPair, StStatus> {
    non_null(m, "model")?;
    Ok(&(*m).inner)
}

fn check_dim(expected: usize, got: usize) -> Result<(), StStatus> {
    if expected == got {
        Ok(())
    } else {
        Err(fail(StStatus::DimensionMismatch, &format!("expected dimension {expected}, got {got}")))
    }
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), StStatus> {
    non_null(out, "out")?;
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn st_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn st_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a freshly initialized model with Taylor-term activations.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn st_model_init(
    dim: usize,
    hidden: usize,
    terms: usize,
    seed: u64,
    out: *mut *mut StModel,
) -> StStatus {
    guard(|| {
        if dim == 0 || hidden == 0 || terms == 0 {
            return Err(fail(StStatus::InvalidArgument, "dim, hidden and terms must be positive"));
        }
        let inner = lift(ModelPair::init(dim, hidden, terms, symtaylor::Activation::TaylorTerm, seed))?;
        emit(out, StModel { inner })
    })
}

/// Loads a model from a checkpoint file written by `symtaylor train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn st_model_load(path: *const c_char, out: *mut *mut StModel) -> StStatus {
    guard(|| {
        let path = read_str(path, "path")?;
        let inner = lift(Checkpoint::load(Path::new(path)).and_then(|c| c.model()))?;
        emit(out, StModel { inner })
    })
}

/// Parses a model from checkpoint JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn st_model_from_json(json: *const c_char, out: *mut *mut StModel) -> StStatus {
    guard(|| {
        let text = read_str(json, "json")?;
        let inner = lift(Checkpoint::from_json(text).and_then(|c| c.model()))?;
        emit(out, StModel { inner })
    })
}

/// Trains a model from a run configuration (JSON text, `NULL` for the
/// defaults) and returns it with its final training loss.
///
/// # Safety
/// `config_json` must be `NULL` or a NUL-terminated string; `out` must be a
/// valid handle slot and `final_loss` `NULL` or writable.
#[no_mangle]
pub unsafe extern "C" fn st_train(config_json: *const c_char, out: *mut *mut StModel, final_loss: *mut f64) -> StStatus {
    guard(|| {
        non_null(out, "out")?;
        let doc = if config_json.is_null() { None } else { Some(read_str(config_json, "config_json")?) };
        let cfg = lift(RunConfig::resolve(doc, None, None, None))?;
        let system = builtin_system(cfg.system);
        let noise = (cfg.data.noise_std_q, cfg.data.noise_std_p);
        let (train_set, validation_set) = lift(make_datasets(&system, &cfg.train, noise))?;
        let model = lift(ModelPair::from_config(system.dim(), &cfg.train))?;
        let (inner, history) = lift(train(&system, model, &train_set, &validation_set, &cfg.train))?;
        if !final_loss.is_null() {
            *final_loss = history.last().map_or(f64::NAN, |r| r.train_loss);
        }
        emit(out, StModel { inner })
    })
}

/// Releases a model. `NULL` is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn st_model_free(model: *mut StModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Phase-space half dimension `N` of the model, or 0 for `NULL`.
///
/// # Safety
/// `model` must be `NULL` or a live handle.
#[no_mangle]
pub unsafe extern "C" fn st_model_dim(model: *const StModel) -> usize {
    if model.is_null() {
        0
    } else {
        (*model).inner.dim()
    }
}

fn eval_field(field: &dyn GradientField, x: &[f64], out: &mut [f64]) -> Result<(), StStatus> {
    lift(field.eval_into(x, out))
}

/// Evaluates the kinetic gradient network `T_p` at `p`.
///
/// # Safety
/// `p` and `out` must each hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn st_model_grad_t(model: *const StModel, p: *const f64, dim: usize, out: *mut f64) -> StStatus {
    guard(|| {
        let m = model_ref(model)?;
        check_dim(m.dim(), dim)?;
        eval_field(&m.tp, slice(p, dim, "p")?, slice_mut(out, dim, "out")?)
    })
}

/// Evaluates the potential gradient network `V_q` at `q`.
///
/// # Safety
/// `q` and `out` must each hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn st_model_grad_v(model: *const StModel, q: *const f64, dim: usize, out: *mut f64) -> StStatus {
    guard(|| {
        let m = model_ref(model)?;
        check_dim(m.dim(), dim)?;
        eval_field(&m.vq, slice(q, dim, "q")?, slice_mut(out, dim, "out")?)
    })
}

/// Advances `(q, p)` in place by `steps` symplectic steps of size `dt`.
///
/// # Safety
/// `q` and `p` must each hold `dim` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn st_model_step(
    model: *const StModel,
    q: *mut f64,
    p: *mut f64,
    dim: usize,
    dt: f64,
    steps: usize,
) -> StStatus {
    guard(|| {
        let m = model_ref(model)?;
        check_dim(m.dim(), dim)?;
        if !dt.is_finite() {
            return Err(fail(StStatus::InvalidArgument, "dt must be finite"));
        }
        let (q, p) = (slice_mut(q, dim, "q")?, slice_mut(p, dim, "p")?);
        let mut s = lift(PhaseState::new(q.to_vec(), p.to_vec()))?;
        for _ in 0..steps {
            s = lift(symplectic_step(&m.tp, &m.vq, &s, dt))?;
        }
        q.copy_from_slice(s.q());
        p.copy_from_slice(s.p());
        Ok(())
    })
}

/// Looks up a built-in system by name: `pendulum`, `lotka_volterra`,
/// `kepler` or `henon_heiles`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn st_system_new(name: *const c_char, out: *mut *mut StSystem) -> StStatus {
    guard(|| {
        let name = read_str(name, "name")?;
        let which = SystemName::ALL
            .into_iter()
            .find(|s| s.as_str() == name)
            .ok_or_else(|| fail(StStatus::InvalidArgument, &format!("unknown system {name:?}")))?;
        emit(out, StSystem { inner: builtin_system(which) })
    })
}

/// Releases a system. `NULL` is ignored.
///
/// # Safety
/// `system` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn st_system_free(system: *mut StSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// Half dimension `N` of the system, or 0 for `NULL`.
///
/// # Safety
/// `system` must be `NULL` or a live handle.
#[no_mangle]
pub unsafe extern "C" fn st_system_dim(system: *const StSystem) -> usize {
    if system.is_null() {
        0
    } else {
        (*system).inner.dim()
    }
}

/// Total energy `H(q, p)`.
///
/// # Safety
/// `q` and `p` must each hold `dim` doubles and `energy` must be writable.
#[no_mangle]
pub unsafe extern "C" fn st_system_energy(
    system: *const StSystem,
    q: *const f64,
    p: *const f64,
    dim: usize,
    energy: *mut f64,
) -> StStatus {
    guard(|| {
        non_null(system, "system")?;
        non_null(energy, "energy")?;
        let sys = &(*system).inner;
        check_dim(sys.dim(), dim)?;
        let s = lift(PhaseState::new(slice(q, dim, "q")?.to_vec(), slice(p, dim, "p")?.to_vec()))?;
        *energy = lift(sys.energy(&s))?;
        Ok(())
    })
}

/// Advances `(q, p)` in place along the analytic flow by `steps` steps.
///
/// # Safety
/// `q` and `p` must each hold `dim` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn st_system_step(
    system: *const StSystem,
    q: *mut f64,
    p: *mut f64,
    dim: usize,
    dt: f64,
    steps: usize,
) -> StStatus {
    guard(|| {
        non_null(system, "system")?;
        let sys = &(*system).inner;
        check_dim(sys.dim(), dim)?;
        let (q, p) = (slice_mut(q, dim, "q")?, slice_mut(p, dim, "p")?);
        let mut s = lift(PhaseState::new(q.to_vec(), p.to_vec()))?;
        let (gt, gv) = (sys.kinetic_field(), sys.potential_field());
        for _ in 0..steps {
            s = lift(symplectic_step(&gt, &gv, &s, dt))?;
        }
        q.copy_from_slice(s.q());
        p.copy_from_slice(s.p());
        Ok(())
    })
}
