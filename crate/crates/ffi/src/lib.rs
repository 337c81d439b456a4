//! C interface to diffail.
//!
//! Every fallible function returns a [`DiffailStatus`]; on failure the
//! message is kept per thread and read back with [`diffail_last_error`].
//! Handles are opaque and owned by the caller until passed to the matching
//! `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use diffail::ail::TrainedModel;
use diffail::diffusion::{DiffusionSchedule, PairBatch};
use diffail::envs::EnvId;
use diffail::evalx::{mean_discrimination, pearson};
use diffail::expert::{generate_expert, ExpertDataset, ExpertMethod, SacExpertConfig};
use diffail::numerics::Tensor;
use diffail::Error;

/// Status codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiffailStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    NonFinite = 5,
    Failed = 6,
    Panic = 7,
}

/// Diffusion noise schedule.
pub struct DiffailSchedule(DiffusionSchedule);

/// Expert demonstrations.
pub struct DiffailDataset(ExpertDataset);

/// A trained policy and discriminator loaded from a checkpoint.
pub struct DiffailModel(TrainedModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> DiffailStatus {
    match e {
        Error::Io { .. } => DiffailStatus::Io,
        Error::Format(_) => DiffailStatus::Format,
        Error::NonFinite { .. } => DiffailStatus::NonFinite,
        Error::Config(_) | Error::Usage(_) | Error::UndefinedCorrelation(_) => DiffailStatus::InvalidArgument,
        _ => DiffailStatus::Failed,
    }
}

struct Fail(DiffailStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(DiffailStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(DiffailStatus::InvalidArgument, msg.into())
}

/// Runs `f`, records its error and converts panics.
fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> DiffailStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DiffailStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            DiffailStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn diffail_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn diffail_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Linear β schedule with `steps` diffusion steps.
///
/// # Safety
/// `out` must be a valid pointer to write a handle to.
#[no_mangle]
pub unsafe extern "C" fn diffail_schedule_new(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    out: *mut *mut DiffailSchedule,
) -> DiffailStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let s = DiffusionSchedule::linear(steps, beta_start, beta_end)?;
        *out = boxed(DiffailSchedule(s));
        Ok(())
    })
}

/// # Safety
/// `sched` must come from [`diffail_schedule_new`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn diffail_schedule_free(sched: *mut DiffailSchedule) {
    if !sched.is_null() {
        drop(Box::from_raw(sched));
    }
}

/// # Safety
/// `sched` must be a live schedule handle.
#[no_mangle]
pub unsafe extern "C" fn diffail_schedule_steps(sched: *const DiffailSchedule) -> usize {
    sched.as_ref().map_or(0, |s| s.0.steps())
}

/// `ᾱ_t` for `t` in `1..=T`.
///
/// # Safety
/// `sched` must be a live schedule handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn diffail_schedule_alpha_bar(
    sched: *const DiffailSchedule,
    t: usize,
    out: *mut f64,
) -> DiffailStatus {
    guard(|| {
        let s = &sched.as_ref().ok_or_else(|| null("sched"))?.0;
        let out = out_arg(out, "out")?;
        if t == 0 || t > s.steps() {
            return Err(invalid(format!("t = {t} outside 1..={}", s.steps())));
        }
        *out = s.alpha_bar(t);
        Ok(())
    })
}

/// Generates an expert dataset. `method` is "lqr" or "sac"; the SAC path
/// uses the default training budget and may take a long time.
///
/// # Safety
/// `env` and `method` must be NUL-terminated strings; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn diffail_dataset_generate(
    env: *const c_char,
    method: *const c_char,
    n_traj: usize,
    seed: u64,
    out: *mut *mut DiffailDataset,
) -> DiffailStatus {
    guard(|| {
        let env: EnvId = str_arg(env, "env")?.parse()?;
        let method: ExpertMethod = str_arg(method, "method")?.parse()?;
        let out = out_arg(out, "out")?;
        let (data, _) = generate_expert(env, method, n_traj, seed, &SacExpertConfig::default())?;
        *out = boxed(DiffailDataset(data));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn diffail_dataset_load(path: *const c_char, out: *mut *mut DiffailDataset) -> DiffailStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let out = out_arg(out, "out")?;
        *out = boxed(DiffailDataset(ExpertDataset::load(&path)?));
        Ok(())
    })
}

/// # Safety
/// `data` must be a live dataset handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn diffail_dataset_save(data: *const DiffailDataset, path: *const c_char) -> DiffailStatus {
    guard(|| {
        let d = &data.as_ref().ok_or_else(|| null("data"))?.0;
        d.save(PathBuf::from(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `data` must come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn diffail_dataset_free(data: *mut DiffailDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Number of trajectories; 0 for NULL.
///
/// # Safety
/// `data` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn diffail_dataset_len(data: *const DiffailDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.len())
}

/// Writes observation and action dimensions and the horizon.
///
/// # Safety
/// `data` must be a live dataset handle; the outputs writable.
#[no_mangle]
pub unsafe extern "C" fn diffail_dataset_dims(
    data: *const DiffailDataset,
    obs_dim: *mut usize,
    act_dim: *mut usize,
    horizon: *mut usize,
) -> DiffailStatus {
    guard(|| {
        let d = &data.as_ref().ok_or_else(|| null("data"))?.0;
        *out_arg(obs_dim, "obs_dim")? = d.obs_dim;
        *out_arg(act_dim, "act_dim")? = d.act_dim;
        *out_arg(horizon, "horizon")? = d.horizon;
        Ok(())
    })
}

/// Mean true return over all trajectories.
///
/// # Safety
/// `data` must be a live dataset handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn diffail_dataset_mean_return(data: *const DiffailDataset, out: *mut f64) -> DiffailStatus {
    guard(|| {
        let d = &data.as_ref().ok_or_else(|| null("data"))?.0;
        *out_arg(out, "out")? = d.mean_return();
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn diffail_model_load(path: *const c_char, out: *mut *mut DiffailModel) -> DiffailStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let out = out_arg(out, "out")?;
        *out = boxed(DiffailModel(TrainedModel::load(&path)?));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn diffail_model_free(model: *mut DiffailModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Width of a discriminator input row; 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn diffail_model_pair_dim(model: *const DiffailModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.disc.pair_dim())
}

/// Deterministic actions for `rows` observations stored row-major in `obs`
/// (`rows × obs_dim`), written to `actions` (`rows × act_dim`).
///
/// # Safety
/// The buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn diffail_model_act(
    model: *const DiffailModel,
    obs: *const f64,
    rows: usize,
    obs_dim: usize,
    actions: *mut f64,
    act_dim: usize,
) -> DiffailStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let agent = &m.agent;
        if obs_dim != agent.obs_dim || act_dim != agent.act_dim {
            return Err(invalid(format!(
                "model expects obs_dim {} and act_dim {}, got {obs_dim} and {act_dim}",
                agent.obs_dim,
                agent.act_dim
            )));
        }
        if rows == 0 {
            return Ok(());
        }
        let x = slice_arg(obs, rows * obs_dim, "obs")?;
        let out = slice_out(actions, rows * act_dim, "actions")?;
        let a = agent.act_deterministic(&Tensor::from_vec(rows, obs_dim, x.to_vec()))?;
        out.copy_from_slice(a.data());
        Ok(())
    })
}

/// Mean discriminator output `D` per pair, averaged over `draws` noise
/// samples seeded from `seed` and the pair contents.
///
/// # Safety
/// `pairs` must hold `rows × dim` doubles and `out` `rows` doubles.
#[no_mangle]
pub unsafe extern "C" fn diffail_model_discriminate(
    model: *const DiffailModel,
    pairs: *const f64,
    rows: usize,
    dim: usize,
    draws: usize,
    seed: u64,
    out: *mut f64,
) -> DiffailStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        if dim != m.disc.pair_dim() {
            return Err(invalid(format!("pair width {dim}, model expects {}", m.disc.pair_dim())));
        }
        if rows == 0 {
            return Ok(());
        }
        let x = slice_arg(pairs, rows * dim, "pairs")?;
        let out = slice_out(out, rows, "out")?;
        let batch = PairBatch {
            x0: Tensor::from_vec(rows, dim, x.to_vec()),
            mode: m.mode,
        };
        let d = mean_discrimination(&m.disc, &batch, draws, seed)?;
        out.copy_from_slice(&d);
        Ok(())
    })
}

/// Pearson correlation of two length-`n` series.
///
/// # Safety
/// `x` and `y` must hold `n` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn diffail_pearson(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> DiffailStatus {
    guard(|| {
        let x = slice_arg(x, n, "x")?;
        let y = slice_arg(y, n, "y")?;
        *out_arg(out, "out")? = pearson(x, y)?;
        Ok(())
    })
}

/// Runs the command-line interface with `argc` arguments (including the
/// program name). Returns its exit code, or -1 for bad arguments.
///
/// # Safety
/// `argv` must point to `argc` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn diffail_run(argc: c_int, argv: *const *const c_char) -> c_int {
    clear_error();
    if argc < 0 || (argc > 0 && argv.is_null()) {
        set_error("argv is null".into());
        return -1;
    }
    let mut args = Vec::with_capacity(argc as usize);
    for i in 0..argc as usize {
        match str_arg(*argv.add(i), "argument") {
            Ok(s) => args.push(s.to_string()),
            Err(Fail(_, m)) => {
                set_error(m);
                return -1;
            }
        }
    }
    catch_unwind(|| diffail::cli::run(args)).unwrap_or_else(|_| {
        set_error("panic in command".into());
        -1
    })
}
