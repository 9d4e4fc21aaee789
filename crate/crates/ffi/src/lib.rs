//! C ABI over the `advsel` engine.
//!
//! Models and datasets cross the boundary as opaque handles created by
//! `advsel_*_new` / `advsel_*_load` and released with the matching
//! `advsel_*_free`. Every fallible call returns an [`AdvselStatus`]; on
//! failure, [`advsel_last_error`] describes the most recent error on the
//! calling thread. Matrices are row-major `double` buffers and labels are
//! `size_t` class ids. Output buffers are allocated by the caller and their
//! length is always passed so it can be checked.
//!
//! Panics never cross the boundary; they are reported as
//! [`AdvselStatus::Panic`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use advsel::attacks::{self, AttackConfig};
use advsel::data::{self, cache, Dataset};
use advsel::numerics::{checkpoint, Matrix, Model};
use advsel::selection::{self, PupSchedule, SelectionKind, SelectionPolicy};
use advsel::training::{self, EpochMetrics, Mode, TrainConfig, Trainer};
use advsel::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvselStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    LabelOutOfRange = 4,
    NonFinite = 5,
    Io = 6,
    Format = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

impl From<&Error> for AdvselStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Dimension { .. } => AdvselStatus::Dimension,
            Error::LabelOutOfRange { .. } => AdvselStatus::LabelOutOfRange,
            Error::NonFinite(_) => AdvselStatus::NonFinite,
            Error::EmptySelection | Error::InvalidArgument(_) => AdvselStatus::InvalidArgument,
            Error::WrongMagic { .. } | Error::Truncated { .. } | Error::CountMismatch { .. } | Error::Format { .. } => {
                AdvselStatus::Format
            }
            Error::Io { .. } => AdvselStatus::Io,
        }
    }
}

struct Failure {
    status: AdvselStatus,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            status: AdvselStatus::from(&e),
            message: e.to_string(),
        }
    }
}

fn fail(status: AdvselStatus, message: impl Into<String>) -> Failure {
    Failure {
        status,
        message: message.into(),
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> AdvselStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AdvselStatus::Ok,
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_last_error(&format!("panic: {msg}"));
            AdvselStatus::Panic
        }
    }
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn advsel_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn advsel_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn advsel_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Opaque classifier handle.
pub struct AdvselModel {
    inner: Model,
}

/// Opaque dataset handle.
pub struct AdvselDataset {
    inner: Dataset,
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(fail(AdvselStatus::NullPointer, format!("{what} is NULL")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(fail(AdvselStatus::NullPointer, format!("{what} is NULL")));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn reference<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref()
        .ok_or_else(|| fail(AdvselStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn out_ptr<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut()
        .ok_or_else(|| fail(AdvselStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn c_path(ptr: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if ptr.is_null() {
        return Err(fail(AdvselStatus::NullPointer, format!("{what} is NULL")));
    }
    let s = CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(AdvselStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn matrix(x: *const f64, rows: usize, cols: usize) -> Result<Matrix, Failure> {
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| fail(AdvselStatus::InvalidArgument, "rows * cols overflows"))?;
    Ok(Matrix::from_vec(rows, cols, slice(x, len, "x")?.to_vec())?)
}

fn copy_out(src: &[f64], dst: &mut [f64], what: &str) -> Result<(), Failure> {
    if dst.len() < src.len() {
        return Err(fail(
            AdvselStatus::BufferTooSmall,
            format!("{what} holds {} values, {} needed", dst.len(), src.len()),
        ));
    }
    dst[..src.len()].copy_from_slice(src);
    Ok(())
}

// ---- models ----

/// Glorot-initialized ReLU classifier with `n_dims` layer widths (input first).
#[no_mangle]
pub unsafe extern "C" fn advsel_model_new(
    dims: *const usize,
    n_dims: usize,
    seed: u64,
    out: *mut *mut AdvselModel,
) -> AdvselStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let dims = slice(dims, n_dims, "dims")?;
        let inner = Model::new_seeded(dims, seed)?;
        *out = Box::into_raw(Box::new(AdvselModel { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn advsel_model_free(model: *mut AdvselModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub unsafe extern "C" fn advsel_model_clone(model: *const AdvselModel, out: *mut *mut AdvselModel) -> AdvselStatus {
    guard(|| {
        let m = reference(model, "model")?;
        let out = out_ptr(out, "out")?;
        *out = Box::into_raw(Box::new(AdvselModel { inner: m.inner.clone() }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn advsel_model_load(path: *const c_char, out: *mut *mut AdvselModel) -> AdvselStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let inner = checkpoint::load(c_path(path, "path")?)?;
        *out = Box::into_raw(Box::new(AdvselModel { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn advsel_model_save(model: *const AdvselModel, path: *const c_char) -> AdvselStatus {
    guard(|| {
        let m = reference(model, "model")?;
        checkpoint::save(&m.inner, c_path(path, "path")?)?;
        Ok(())
    })
}

/// Input width, or 0 for a NULL handle.
#[no_mangle]
pub unsafe extern "C" fn advsel_model_input_dim(model: *const AdvselModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.input_dim())
}

/// Number of output classes, or 0 for a NULL handle.
#[no_mangle]
pub unsafe extern "C" fn advsel_model_class_count(model: *const AdvselModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.class_count())
}

/// Logits for `rows` inputs into `out` (`rows * classes` values).
#[no_mangle]
pub unsafe extern "C" fn advsel_model_forward(
    model: *const AdvselModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
    out_len: usize,
) -> AdvselStatus {
    guard(|| {
        let m = reference(model, "model")?;
        let logits = m.inner.forward(&matrix(x, rows, cols)?)?;
        copy_out(logits.as_slice(), slice_mut(out, out_len, "out")?, "out")
    })
}

/// Predicted class per row into `out` (`rows` values).
#[no_mangle]
pub unsafe extern "C" fn advsel_model_predict(
    model: *const AdvselModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut usize,
    out_len: usize,
) -> AdvselStatus {
    guard(|| {
        let m = reference(model, "model")?;
        let pred = m.inner.predict(&matrix(x, rows, cols)?)?;
        let dst = slice_mut(out, out_len, "out")?;
        if dst.len() < pred.len() {
            return Err(fail(AdvselStatus::BufferTooSmall, "out is shorter than rows"));
        }
        dst[..pred.len()].copy_from_slice(&pred);
        Ok(())
    })
}

/// Per-sample cross-entropy into `losses` (`rows` values) and each
/// sample's input gradient into `grad` (`rows * cols` values).
#[no_mangle]
pub unsafe extern "C" fn advsel_loss_and_input_grad(
    model: *const AdvselModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    y: *const usize,
    losses: *mut f64,
    grad: *mut f64,
) -> AdvselStatus {
    guard(|| {
        let m = reference(model, "model")?;
        let y = slice(y, rows, "y")?;
        let (l, g) = m.inner.loss_and_input_grad(&matrix(x, rows, cols)?, y)?;
        copy_out(&l, slice_mut(losses, rows, "losses")?, "losses")?;
        copy_out(g.as_slice(), slice_mut(grad, rows * cols, "grad")?, "grad")
    })
}

/// One SGD step on the mean loss of the rows listed in `selected`.
#[no_mangle]
pub unsafe extern "C" fn advsel_model_sgd_step(
    model: *mut AdvselModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    y: *const usize,
    selected: *const usize,
    n_selected: usize,
    lr: f64,
) -> AdvselStatus {
    guard(|| {
        let m = model
            .as_mut()
            .ok_or_else(|| fail(AdvselStatus::NullPointer, "model is NULL"))?;
        let y = slice(y, rows, "y")?;
        let sel = slice(selected, n_selected, "selected")?;
        let g = m.inner.param_grad_selected(&matrix(x, rows, cols)?, y, sel)?;
        m.inner.apply_sgd(&g, lr)?;
        Ok(())
    })
}

// ---- attacks ----

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvselAttackConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub steps: usize,
    pub random_start: bool,
    pub clip_min: f64,
    pub clip_max: f64,
}

impl From<AdvselAttackConfig> for AttackConfig {
    fn from(c: AdvselAttackConfig) -> Self {
        AttackConfig {
            epsilon: c.epsilon,
            alpha: c.alpha,
            steps: c.steps,
            random_start: c.random_start,
            clip_min: c.clip_min,
            clip_max: c.clip_max,
        }
    }
}

impl From<AttackConfig> for AdvselAttackConfig {
    fn from(c: AttackConfig) -> Self {
        AdvselAttackConfig {
            epsilon: c.epsilon,
            alpha: c.alpha,
            steps: c.steps,
            random_start: c.random_start,
            clip_min: c.clip_min,
            clip_max: c.clip_max,
        }
    }
}

/// epsilon 8/255, alpha 0.01, 20 steps, no random start, range [0, 1].
#[no_mangle]
pub extern "C" fn advsel_attack_config_default() -> AdvselAttackConfig {
    AttackConfig::default().into()
}

unsafe fn attack_config(cfg: *const AdvselAttackConfig) -> Result<AttackConfig, Failure> {
    let c: AttackConfig = (*reference(cfg, "config")?).into();
    c.validate()?;
    Ok(c)
}

/// Single signed-gradient step of size `epsilon`, clamped to [0, 1].
#[no_mangle]
pub unsafe extern "C" fn advsel_fgsm(
    model: *const AdvselModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    y: *const usize,
    epsilon: f64,
    out: *mut f64,
) -> AdvselStatus {
    guard(|| {
        let m = reference(model, "model")?;
        let y = slice(y, rows, "y")?;
        let adv = attacks::fgsm(&m.inner, &matrix(x, rows, cols)?, y, epsilon)?;
        copy_out(adv.as_slice(), slice_mut(out, rows * cols, "out")?, "out")
    })
}

/// Projected gradient ascent inside the l-infinity ball; `seed` drives the random start.
#[no_mangle]
pub unsafe extern "C" fn advsel_pgd(
    model: *const AdvselModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    y: *const usize,
    config: *const AdvselAttackConfig,
    seed: u64,
    out: *mut f64,
) -> AdvselStatus {
    guard(|| {
        let m = reference(model, "model")?;
        let cfg = attack_config(config)?;
        let y = slice(y, rows, "y")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let adv = attacks::pgd(&m.inner, &matrix(x, rows, cols)?, y, &cfg, &mut rng)?;
        copy_out(adv.as_slice(), slice_mut(out, rows * cols, "out")?, "out")
    })
}

// ---- selection ----

/// Per-row softmax cross-entropy of `logits` (`rows * classes`) into `out`.
#[no_mangle]
pub unsafe extern "C" fn advsel_error_signal(
    logits: *const f64,
    rows: usize,
    classes: usize,
    y: *const usize,
    out: *mut f64,
) -> AdvselStatus {
    guard(|| {
        let z = matrix(logits, rows, classes)?;
        let l = selection::error_signal(&z, slice(y, rows, "y")?)?;
        copy_out(&l, slice_mut(out, rows, "out")?, "out")
    })
}

/// `max(1, ceil(pup * batch))`.
#[no_mangle]
pub extern "C" fn advsel_selection_count(batch: usize, pup: f64) -> usize {
    selection::selection_count(batch, pup)
}

/// Indices of the `advsel_selection_count(n, pup)` largest losses, sorted
/// ascending. Equal losses favour the lower index.
#[no_mangle]
pub unsafe extern "C" fn advsel_select_top(
    losses: *const f64,
    n: usize,
    pup: f64,
    out: *mut usize,
    out_len: usize,
    out_count: *mut usize,
) -> AdvselStatus {
    guard(|| {
        let count = out_ptr(out_count, "out_count")?;
        let r = selection::select_top(slice(losses, n, "losses")?, pup)?;
        let dst = slice_mut(out, out_len, "out")?;
        if dst.len() < r.selected.len() {
            return Err(fail(
                AdvselStatus::BufferTooSmall,
                format!("out holds {} indices, {} needed", dst.len(), r.selected.len()),
            ));
        }
        dst[..r.selected.len()].copy_from_slice(&r.selected);
        *count = r.selected.len();
        Ok(())
    })
}

/// Adaptive P_up step: `min(p_prev, max(floor, (1 - acc_prev) * p_prev))`.
#[no_mangle]
pub extern "C" fn advsel_update_pup(p_prev: f64, acc_prev: f64, floor: f64) -> f64 {
    selection::update_pup(p_prev, acc_prev, floor)
}

// ---- datasets ----

fn boxed(inner: Dataset) -> *mut AdvselDataset {
    Box::into_raw(Box::new(AdvselDataset { inner }))
}

#[no_mangle]
pub unsafe extern "C" fn advsel_dataset_load_idx(
    images: *const c_char,
    labels: *const c_char,
    out: *mut *mut AdvselDataset,
) -> AdvselStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = boxed(data::load_idx(c_path(images, "images")?, c_path(labels, "labels")?)?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn advsel_dataset_load_csv(
    path: *const c_char,
    label_column: *const c_char,
    out: *mut *mut AdvselDataset,
) -> AdvselStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let col = c_path(label_column, "label_column")?;
        *out = boxed(data::load_csv(c_path(path, "path")?, &col.to_string_lossy())?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn advsel_dataset_load_cache(path: *const c_char, out: *mut *mut AdvselDataset) -> AdvselStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = boxed(cache::load(c_path(path, "path")?)?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn advsel_dataset_save_cache(dataset: *const AdvselDataset, path: *const c_char) -> AdvselStatus {
    guard(|| {
        let d = reference(dataset, "dataset")?;
        cache::save(&d.inner, c_path(path, "path")?)?;
        Ok(())
    })
}

/// Two-class Gaussian blobs: coordinate 0 shifted by `strong`, the rest by `weak`.
#[no_mangle]
pub unsafe extern "C" fn advsel_dataset_synth(
    seed: u64,
    samples_per_class: usize,
    dims: usize,
    strong: f64,
    weak: f64,
    sigma: f64,
    out: *mut *mut AdvselDataset,
) -> AdvselStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let means = data::tradeoff_means(dims, strong, weak);
        *out = boxed(data::synth_gaussians(seed, samples_per_class, dims, &means, sigma)?);
        Ok(())
    })
}

/// Dataset from caller-owned features (`rows * cols`, in [0, 1]) and labels.
#[no_mangle]
pub unsafe extern "C" fn advsel_dataset_from_arrays(
    features: *const f64,
    rows: usize,
    cols: usize,
    labels: *const usize,
    class_count: usize,
    out: *mut *mut AdvselDataset,
) -> AdvselStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let x = matrix(features, rows, cols)?;
        if x.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(fail(AdvselStatus::InvalidArgument, "features must lie in [0, 1]"));
        }
        let y = slice(labels, rows, "labels")?.to_vec();
        *out = boxed(Dataset::new(x, y, class_count)?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn advsel_dataset_free(dataset: *mut AdvselDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

#[no_mangle]
pub unsafe extern "C" fn advsel_dataset_len(dataset: *const AdvselDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.len())
}

#[no_mangle]
pub unsafe extern "C" fn advsel_dataset_dims(dataset: *const AdvselDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.dims())
}

#[no_mangle]
pub unsafe extern "C" fn advsel_dataset_class_count(dataset: *const AdvselDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.class_count())
}

/// Borrowed row-major features (`len * dims`), valid while the handle lives.
#[no_mangle]
pub unsafe extern "C" fn advsel_dataset_features(dataset: *const AdvselDataset) -> *const f64 {
    dataset
        .as_ref()
        .map_or(std::ptr::null(), |d| d.inner.features().as_slice().as_ptr())
}

/// Borrowed labels (`len` values), valid while the handle lives.
#[no_mangle]
pub unsafe extern "C" fn advsel_dataset_labels(dataset: *const AdvselDataset) -> *const usize {
    dataset.as_ref().map_or(std::ptr::null(), |d| d.inner.labels().as_ptr())
}

// ---- training ----

/// Accuracy on `dataset`; robust accuracy under `attack` when it is not NULL.
#[no_mangle]
pub unsafe extern "C" fn advsel_evaluate(
    model: *const AdvselModel,
    dataset: *const AdvselDataset,
    attack: *const AdvselAttackConfig,
    out_accuracy: *mut f64,
) -> AdvselStatus {
    guard(|| {
        let m = reference(model, "model")?;
        let d = reference(dataset, "dataset")?;
        let out = out_ptr(out_accuracy, "out_accuracy")?;
        let cfg = if attack.is_null() { None } else { Some(attack_config(attack)?) };
        *out = training::evaluate(&m.inner, &d.inner, cfg.as_ref())?;
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvselMode {
    Standard = 0,
    Robust = 1,
    DsRobust = 2,
    RandomRobust = 3,
}

impl From<AdvselMode> for Mode {
    fn from(m: AdvselMode) -> Self {
        match m {
            AdvselMode::Standard => Mode::Standard,
            AdvselMode::Robust => Mode::Robust,
            AdvselMode::DsRobust => Mode::DsRobust,
            AdvselMode::RandomRobust => Mode::RandomRobust,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvselSelection {
    All = 0,
    TopLoss = 1,
    Random = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvselTrainConfig {
    pub mode: AdvselMode,
    /// Clean samples per mini-batch (b').
    pub batch_clean_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub attack: AdvselAttackConfig,
    pub eval_attack: AdvselAttackConfig,
    pub selection: AdvselSelection,
    /// Fixed P_up, or the first epoch's P_up when `adaptive` is set.
    pub pup: f64,
    pub adaptive: bool,
    pub pup_floor: f64,
    pub seed: u64,
    /// Early-stopping patience in epochs; 0 disables it.
    pub early_stop: usize,
}

/// ds_robust, b' 128, 10 epochs, lr 0.1, top-loss selection at P_up 0.5.
#[no_mangle]
pub extern "C" fn advsel_train_config_default() -> AdvselTrainConfig {
    let attack: AdvselAttackConfig = AttackConfig::default().into();
    AdvselTrainConfig {
        mode: AdvselMode::DsRobust,
        batch_clean_size: 128,
        epochs: 10,
        lr: 0.1,
        attack,
        eval_attack: attack,
        selection: AdvselSelection::TopLoss,
        pup: 0.5,
        adaptive: false,
        pup_floor: 0.1,
        seed: 0,
        early_stop: 0,
    }
}

impl From<&AdvselTrainConfig> for TrainConfig {
    fn from(c: &AdvselTrainConfig) -> Self {
        let schedule = if c.adaptive {
            PupSchedule::Adaptive {
                initial: c.pup,
                floor: c.pup_floor,
            }
        } else {
            PupSchedule::Fixed { pup: c.pup }
        };
        let kind = match c.selection {
            AdvselSelection::All => SelectionKind::All,
            AdvselSelection::TopLoss => SelectionKind::TopLoss,
            AdvselSelection::Random => SelectionKind::Random,
        };
        TrainConfig {
            mode: c.mode.into(),
            batch_clean_size: c.batch_clean_size,
            epochs: c.epochs,
            lr: c.lr,
            attack: c.attack.into(),
            policy: SelectionPolicy {
                kind,
                schedule,
                seed: c.seed,
            },
            eval_attack: c.eval_attack.into(),
            seed: c.seed,
            early_stop: (c.early_stop > 0).then_some(c.early_stop),
            ..TrainConfig::default()
        }
    }
}

/// Per-epoch record passed to the training callback. Selection counts are
/// sums over the epoch's batches.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvselEpochMetrics {
    pub epoch: usize,
    pub standard_accuracy: f64,
    pub robust_accuracy: f64,
    pub train_loss: f64,
    pub mean_batch_loss: f64,
    pub effective_pup: f64,
    pub batches: usize,
    pub rows_seen: usize,
    pub selected_clean: usize,
    pub selected_adversarial: usize,
    pub backward_passes: usize,
}

impl From<&EpochMetrics> for AdvselEpochMetrics {
    fn from(m: &EpochMetrics) -> Self {
        AdvselEpochMetrics {
            epoch: m.epoch,
            standard_accuracy: m.standard_accuracy,
            robust_accuracy: m.robust_accuracy,
            train_loss: m.train_loss,
            mean_batch_loss: m.mean_batch_loss,
            effective_pup: m.effective_pup,
            batches: m.batches,
            rows_seen: m.rows_seen,
            selected_clean: m.selected_clean,
            selected_adversarial: m.selected_adversarial,
            backward_passes: m.backward_passes,
        }
    }
}

/// Called after every epoch; return `false` to stop training early.
pub type AdvselEpochCallback = Option<unsafe extern "C" fn(metrics: *const AdvselEpochMetrics, user_data: *mut c_void) -> bool>;

/// Trains `model` in place on `train`, measuring accuracies on `eval`.
/// `callback` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn advsel_train(
    model: *mut AdvselModel,
    train: *const AdvselDataset,
    eval: *const AdvselDataset,
    config: *const AdvselTrainConfig,
    callback: AdvselEpochCallback,
    user_data: *mut c_void,
) -> AdvselStatus {
    guard(|| {
        let m = model
            .as_mut()
            .ok_or_else(|| fail(AdvselStatus::NullPointer, "model is NULL"))?;
        let train = reference(train, "train")?;
        let eval = reference(eval, "eval")?;
        let cfg = TrainConfig::from(reference(config, "config")?);
        let mut trainer = Trainer::new(cfg, m.inner.clone(), &train.inner, &eval.inner)?;
        trainer.run_while(|metrics, _| {
            Ok(match callback {
                Some(cb) => cb(&AdvselEpochMetrics::from(metrics), user_data),
                None => true,
            })
        })?;
        m.inner = trainer.into_model();
        Ok(())
    })
}
