//! C ABI for the `mfa` crate.
//!
//! Models and bins are opaque handles created by `*_load`, `*_fit` or
//! `mfa_train` and released with the matching `*_free`. Every fallible call
//! returns an [`MfaStatus`]; on failure `mfa_last_error` describes the cause
//! for the calling thread. Matrices are dense row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use mfa::infer::{self, ObservationMask};
use mfa::ndb::{self, BinOptions, BinningModel};
use mfa::sharpness::{set_sharpness, SharpnessConfig};
use mfa::train::{self, InitMethod, TrainConfig};
use mfa::{Error, ErrorKind, MfaModel as Model};
use ndarray::{ArrayView1, ArrayView2};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfaStatus {
    Ok = 0,
    /// Invalid argument or shape.
    Usage = 1,
    /// Unreadable or malformed data or files.
    Data = 2,
    /// Non-positive-definite matrices or diverged training.
    Numerical = 3,
    /// A required pointer was null or a string was not UTF-8.
    NullPointer = 4,
    /// A bug inside the library; the handle may be unusable.
    Panic = 5,
}

/// Initializer for [`mfa_train`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfaInit {
    KMeans = 0,
    Random = 1,
    KSubspaces = 2,
}

/// Opaque mixture of factor analyzers.
pub struct MfaModel(Model);

/// Opaque NDB binning.
pub struct MfaBins(BinningModel);

/// Settings for [`mfa_train`]; start from [`mfa_train_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MfaTrainOptions {
    pub k_components: usize,
    pub latent_dim: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_steps: usize,
    pub init: MfaInit,
    pub noise_floor: f64,
    pub seed: u64,
}

/// NDB summary written by [`mfa_bins_evaluate`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MfaNdbResult {
    pub ndb: usize,
    pub n_bins: usize,
    pub ndb_over_k: f64,
    pub js_divergence: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Fail {
    Lib(Error),
    Null(&'static str),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

type FfiResult<T> = std::result::Result<T, Fail>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> MfaStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MfaStatus::Ok,
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            match e.kind() {
                ErrorKind::Usage => MfaStatus::Usage,
                ErrorKind::Data => MfaStatus::Data,
                ErrorKind::Numerical => MfaStatus::Numerical,
            }
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("{what} is null or not valid UTF-8"));
            MfaStatus::NullPointer
        }
        Err(_) => {
            set_error("internal panic".into());
            MfaStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> FfiResult<PathBuf> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail::Null(what))
}

unsafe fn matrix<'a>(data: *const f64, rows: usize, cols: usize, what: &'static str) -> FfiResult<ArrayView2<'a, f64>> {
    if data.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(ArrayView2::from_shape_ptr((rows, cols), data))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, what: &'static str) -> FfiResult<&'a mut [T]> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn model_ref<'a>(m: *const MfaModel) -> FfiResult<&'a Model> {
    m.as_ref().map(|m| &m.0).ok_or(Fail::Null("model"))
}

unsafe fn bins_ref<'a>(b: *const MfaBins) -> FfiResult<&'a BinningModel> {
    b.as_ref().map(|b| &b.0).ok_or(Fail::Null("bins"))
}

unsafe fn write_out<T>(p: *mut T, v: T, what: &'static str) -> FfiResult<()> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    p.write(v);
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn mfa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// `K (d (l + 2) + 1)`.
#[no_mangle]
pub extern "C" fn mfa_free_param_count(k: usize, d: usize, l: usize) -> u64 {
    mfa::model::free_param_count(k, d, l)
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn mfa_model_load(path: *const c_char, out: *mut *mut MfaModel) -> MfaStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let model = mfa::io::load_model(&path)?;
        write_out(out, Box::into_raw(Box::new(MfaModel(model))), "out")
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mfa_model_save(model: *const MfaModel, path: *const c_char) -> MfaStatus {
    guard(|| {
        let model = model_ref(model)?;
        let path = path_arg(path, "path")?;
        Ok(mfa::io::save_model(model, &path)?)
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mfa_model_free(model: *mut MfaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the number of components, data dimension and latent dimension.
///
/// # Safety
/// `model` must come from this library; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mfa_model_dims(
    model: *const MfaModel,
    k: *mut usize,
    d: *mut usize,
    l: *mut usize,
) -> MfaStatus {
    guard(|| {
        let m = model_ref(model)?;
        write_out(k, m.n_components(), "k")?;
        write_out(d, m.dim(), "d")?;
        write_out(l, m.latent_dim(), "l")
    })
}

#[no_mangle]
pub extern "C" fn mfa_train_options_default(k_components: usize, latent_dim: usize) -> MfaTrainOptions {
    let cfg = TrainConfig::new(k_components, latent_dim);
    MfaTrainOptions {
        k_components,
        latent_dim,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        max_steps: cfg.max_steps,
        init: MfaInit::KMeans,
        noise_floor: cfg.noise_floor,
        seed: cfg.rng_seed,
    }
}

/// Initializes and trains a model on `n x d` rows.
///
/// # Safety
/// `data` must hold `n * d` doubles; `options` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mfa_train(
    data: *const f64,
    n: usize,
    d: usize,
    options: *const MfaTrainOptions,
    out: *mut *mut MfaModel,
) -> MfaStatus {
    guard(|| {
        let x = matrix(data, n, d, "data")?;
        let o = options.as_ref().ok_or(Fail::Null("options"))?;
        let cfg = TrainConfig {
            k_components: o.k_components,
            latent_dim: o.latent_dim,
            batch_size: o.batch_size,
            learning_rate: o.learning_rate,
            max_steps: o.max_steps,
            init_method: match o.init {
                MfaInit::KMeans => InitMethod::KMeansFa,
                MfaInit::Random => InitMethod::RandomSubspace,
                MfaInit::KSubspaces => InitMethod::KSubspaces,
            },
            noise_floor: o.noise_floor,
            rng_seed: o.seed,
            eval_interval: 0,
        };
        cfg.validate(n, d)?;
        let start = train::initialize(x, &cfg)?;
        let (model, _) = train::sgd_train(x, None, &start, &cfg)?;
        write_out(out, Box::into_raw(Box::new(MfaModel(model))), "out")
    })
}

/// Total log-likelihood of `n` rows; `per_sample` (length `n`) may be null.
///
/// # Safety
/// `data` must hold `n * d` doubles where `d` is the model dimension.
#[no_mangle]
pub unsafe extern "C" fn mfa_model_log_likelihood(
    model: *const MfaModel,
    data: *const f64,
    n: usize,
    total: *mut f64,
    per_sample: *mut f64,
) -> MfaStatus {
    guard(|| {
        let m = model_ref(model)?;
        let x = matrix(data, n, m.dim(), "data")?;
        let (sum, each) = m.log_likelihood(x)?;
        if !per_sample.is_null() {
            out_slice(per_sample, n, "per_sample")?.copy_from_slice(each.as_slice().expect("owned"));
        }
        write_out(total, sum, "total")
    })
}

/// Draws `n` samples into `out` (`n * d` doubles).
///
/// # Safety
/// `out` must have room for `n * d` doubles.
#[no_mangle]
pub unsafe extern "C" fn mfa_model_sample(model: *const MfaModel, n: usize, seed: u64, out: *mut f64) -> MfaStatus {
    guard(|| {
        let m = model_ref(model)?;
        let samples = m.sample(n, seed)?;
        out_slice(out, n * m.dim(), "out")?.copy_from_slice(samples.as_slice().expect("owned"));
        Ok(())
    })
}

/// Fills the coordinates with `mask[j] == 0` from the most responsible
/// component; observed coordinates are copied. `x` and `out` hold `d`
/// doubles (hidden entries of `x` are ignored); `component` may be null.
///
/// # Safety
/// `x`, `mask` and `out` must hold `d` elements each.
#[no_mangle]
pub unsafe extern "C" fn mfa_model_inpaint(
    model: *const MfaModel,
    x: *const f64,
    mask: *const u8,
    out: *mut f64,
    component: *mut usize,
) -> MfaStatus {
    guard(|| {
        let m = model_ref(model)?;
        let d = m.dim();
        let full = matrix(x, 1, d, "x")?;
        if mask.is_null() {
            return Err(Fail::Null("mask"));
        }
        let mask = ObservationMask::from_bytes(std::slice::from_raw_parts(mask, d));
        let observed = mask.gather(full.row(0));
        let r = infer::inpaint(observed.view(), &mask, m)?;
        out_slice(out, d, "out")?.copy_from_slice(r.x_full.as_slice().expect("owned"));
        if !component.is_null() {
            component.write(r.component);
        }
        Ok(())
    })
}

/// Fits `k_bins` Voronoi bins to `n x d` reference rows.
///
/// # Safety
/// `data` must hold `n * d` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn mfa_bins_fit(
    data: *const f64,
    n: usize,
    d: usize,
    k_bins: usize,
    whiten: bool,
    seed: u64,
    out: *mut *mut MfaBins,
) -> MfaStatus {
    guard(|| {
        let x = matrix(data, n, d, "data")?;
        let opts = BinOptions {
            whiten,
            seed,
            ..BinOptions::default()
        };
        let bins = ndb::fit_bins(x, k_bins, &opts)?;
        write_out(out, Box::into_raw(Box::new(MfaBins(bins))), "out")
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mfa_bins_load(path: *const c_char, out: *mut *mut MfaBins) -> MfaStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let bins = mfa::io::load_bins(&path)?;
        write_out(out, Box::into_raw(Box::new(MfaBins(bins))), "out")
    })
}

/// # Safety
/// `bins` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mfa_bins_save(bins: *const MfaBins, path: *const c_char) -> MfaStatus {
    guard(|| {
        let bins = bins_ref(bins)?;
        let path = path_arg(path, "path")?;
        Ok(mfa::io::save_bins(bins, &path)?)
    })
}

/// # Safety
/// `bins` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mfa_bins_free(bins: *mut MfaBins) {
    if !bins.is_null() {
        drop(Box::from_raw(bins));
    }
}

/// Compares `n` test rows (of the bins' dimension) with the reference.
///
/// # Safety
/// `data` must hold `n * d` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn mfa_bins_evaluate(
    bins: *const MfaBins,
    data: *const f64,
    n: usize,
    out: *mut MfaNdbResult,
) -> MfaStatus {
    guard(|| {
        let bins = bins_ref(bins)?;
        let x = matrix(data, n, bins.dim(), "data")?;
        let report = ndb::evaluate(x, bins)?;
        write_out(
            out,
            MfaNdbResult {
                ndb: report.ndb,
                n_bins: report.k(),
                ndb_over_k: report.ndb_over_k,
                js_divergence: report.js_divergence,
            },
            "out",
        )
    })
}

/// Mean sharpness of the first `count` of `n` images of shape `h x w x c`.
///
/// # Safety
/// `data` must hold `n * h * w * c` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn mfa_sharpness(
    data: *const f64,
    n: usize,
    height: usize,
    width: usize,
    channels: usize,
    sigma: f64,
    count: usize,
    out: *mut f64,
) -> MfaStatus {
    guard(|| {
        let x = matrix(data, n, height * width * channels, "data")?;
        let cfg = SharpnessConfig {
            kernel_sigma: sigma,
            sample_count: count,
            ..SharpnessConfig::new((height, width, channels))
        };
        write_out(out, set_sharpness(x, &cfg)?, "out")
    })
}

/// Log-density of one `d`-vector under a single component; for tests and
/// bindings that need per-component scores.
///
/// # Safety
/// `x` must hold `d` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn mfa_model_component_log_prob(
    model: *const MfaModel,
    component: usize,
    x: *const f64,
    out: *mut f64,
) -> MfaStatus {
    guard(|| {
        let m = model_ref(model)?;
        if component >= m.n_components() {
            return Err(Error::InvalidArgument(format!(
                "component {component} out of range for {} components",
                m.n_components()
            ))
            .into());
        }
        if x.is_null() {
            return Err(Fail::Null("x"));
        }
        let v = ArrayView1::from_shape_ptr(m.dim(), x);
        write_out(out, m.component(component).log_prob(v)?, "out")
    })
}
