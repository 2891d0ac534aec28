//! C ABI for the `clab` library.
//!
//! Every fallible function returns a [`ClabStatus`]; on failure the message is
//! kept per thread and can be read with [`clab_last_error_message`]. Matrices
//! are row-major `double` arrays. Handles are created by `*_new`/`*_read`
//! functions and released with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use clab::analysis::{self, PairBudget, ToleranceForm};
use clab::io::{self, EmbeddingDump};
use clab::losses::{self, LossConfig, Variant};
use clab::{Error, Matrix, SimilarityMatrix};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    NotUnitNorm = 4,
    InvalidTemperature = 5,
    InvalidAlpha = 6,
    InvalidLambda = 7,
    DegenerateBatch = 8,
    NoPositivePairs = 9,
    KTooLarge = 10,
    MissingLabels = 11,
    CorruptHeader = 12,
    TruncatedPayload = 13,
    UnsupportedVersion = 14,
    Io = 15,
    Panic = 16,
    Other = 17,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClabVariant {
    Contrastive = 0,
    Simple = 1,
    Hard = 2,
    HardSimple = 3,
    TripletLimit = 4,
    TaylorLimit = 5,
}

impl From<ClabVariant> for Variant {
    fn from(v: ClabVariant) -> Self {
        match v {
            ClabVariant::Contrastive => Variant::Contrastive,
            ClabVariant::Simple => Variant::Simple,
            ClabVariant::Hard => Variant::Hard,
            ClabVariant::HardSimple => Variant::HardSimple,
            ClabVariant::TripletLimit => Variant::TripletLimit,
            ClabVariant::TaylorLimit => Variant::TaylorLimit,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClabToleranceForm {
    SameClassMean = 0,
    MaskedMeanAllPairs = 1,
}

/// Loss selection. A negative `lambda` picks the balanced default.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ClabLossConfig {
    pub variant: ClabVariant,
    pub tau: f64,
    pub alpha: f64,
    pub lambda: f64,
}

impl From<&ClabLossConfig> for LossConfig {
    fn from(c: &ClabLossConfig) -> Self {
        LossConfig {
            variant: c.variant.into(),
            tau: c.tau,
            alpha: c.alpha,
            lambda: (c.lambda >= 0.0 || c.lambda.is_nan()).then_some(c.lambda),
        }
    }
}

/// Opaque square similarity matrix.
pub struct ClabSimilarity(SimilarityMatrix);

/// Opaque embedding dump.
pub struct ClabDump(EmbeddingDump);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ClabStatus {
    match e {
        Error::ZeroRow(_)
        | Error::InvalidConfig(_)
        | Error::EmptyNegatives
        | Error::NotAscending => ClabStatus::InvalidArgument,
        Error::InvalidDirection(_) | Error::InvalidConcentration(_) => ClabStatus::InvalidArgument,
        Error::NotUnitNorm { .. } => ClabStatus::NotUnitNorm,
        Error::ShapeMismatch(_) | Error::TooFewRows(_) | Error::SimilarityOutOfRange { .. } => {
            ClabStatus::ShapeMismatch
        }
        Error::InvalidTemperature(_) => ClabStatus::InvalidTemperature,
        Error::InvalidAlpha(_) => ClabStatus::InvalidAlpha,
        Error::InvalidLambda(_) => ClabStatus::InvalidLambda,
        Error::DegenerateBatch(_) => ClabStatus::DegenerateBatch,
        Error::NoPositivePairs => ClabStatus::NoPositivePairs,
        Error::KTooLarge { .. } => ClabStatus::KTooLarge,
        Error::MissingLabels(_) => ClabStatus::MissingLabels,
        Error::CorruptHeader(_) => ClabStatus::CorruptHeader,
        Error::TruncatedPayload { .. } => ClabStatus::TruncatedPayload,
        Error::UnsupportedVersion(_) => ClabStatus::UnsupportedVersion,
        Error::Io { .. } => ClabStatus::Io,
        _ => ClabStatus::Other,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> ClabStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => ClabStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_last_error(format!("{what} is a null pointer"));
            ClabStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_last_error("internal panic".into());
            ClabStatus::Panic
        }
    }
}

unsafe fn slice_in<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn write_out<T>(p: *mut T, v: T, what: &'static str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    p.write(v);
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

fn checked_len(n: usize, d: usize) -> Result<usize, Fail> {
    n.checked_mul(d)
        .ok_or_else(|| Fail::Lib(Error::ShapeMismatch(format!("{n}×{d} overflows"))))
}

unsafe fn matrix_in(p: *const f64, n: usize, d: usize, what: &'static str) -> Result<Matrix, Fail> {
    let len = checked_len(n, d)?;
    Ok(Matrix::new(n, d, slice_in(p, len, what)?.to_vec())?)
}

/// Same as [`matrix_in`] but rejects rows that are not unit norm.
unsafe fn unit_matrix_in(
    p: *const f64,
    n: usize,
    d: usize,
    what: &'static str,
) -> Result<Matrix, Fail> {
    let m = matrix_in(p, n, d, what)?;
    Ok(clab::FeatureBatch::self_paired(m, None)?.anchors().clone())
}

unsafe fn path_in(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Lib(Error::InvalidConfig("path is not valid UTF-8".into())))?;
    Ok(PathBuf::from(s))
}

/// Message of the last failure on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn clab_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn clab_clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn clab_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Wraps an `n × n` row-major array whose entries lie in [-1, 1].
///
/// # Safety
/// `values` must point to `n * n` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn clab_similarity_new(
    values: *const f64,
    n: usize,
    out: *mut *mut ClabSimilarity,
) -> ClabStatus {
    guard(|| {
        let m = matrix_in(values, n, n, "values")?;
        let s = SimilarityMatrix::new(m)?;
        write_out(out, Box::into_raw(Box::new(ClabSimilarity(s))), "out")
    })
}

/// Similarities `anchors · keysᵀ` of two `n × d` batches of unit rows.
///
/// # Safety
/// `anchors` and `keys` must point to `n * d` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn clab_similarity_from_features(
    anchors: *const f64,
    keys: *const f64,
    n: usize,
    d: usize,
    out: *mut *mut ClabSimilarity,
) -> ClabStatus {
    guard(|| {
        let a = matrix_in(anchors, n, d, "anchors")?;
        let k = matrix_in(keys, n, d, "keys")?;
        let batch = clab::FeatureBatch::new(a, k, None)?;
        let s = clab::sphere::similarity_matrix(&batch)?;
        write_out(out, Box::into_raw(Box::new(ClabSimilarity(s))), "out")
    })
}

/// # Safety
/// `s` must be null or a handle from this library that was not freed yet.
#[no_mangle]
pub unsafe extern "C" fn clab_similarity_free(s: *mut ClabSimilarity) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Side length of a similarity handle, 0 for null.
///
/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn clab_similarity_size(s: *const ClabSimilarity) -> usize {
    s.as_ref().map_or(0, |s| s.0.n())
}

/// Per-anchor losses (optional, `n` entries) and their mean.
///
/// # Safety
/// `s` and `config` must be valid; `per_anchor` is null or holds `n` doubles;
/// `mean` is null or writable.
#[no_mangle]
pub unsafe extern "C" fn clab_loss(
    s: *const ClabSimilarity,
    config: *const ClabLossConfig,
    per_anchor: *mut f64,
    mean: *mut f64,
) -> ClabStatus {
    guard(|| {
        let s = &handle(s, "similarity")?.0;
        let cfg = LossConfig::from(handle(config, "config")?);
        let r = losses::evaluate(s, &cfg)?;
        if !per_anchor.is_null() {
            slice_out(per_anchor, s.n(), "per_anchor")?.copy_from_slice(&r.per_anchor);
        }
        if !mean.is_null() {
            mean.write(r.mean);
        }
        Ok(())
    })
}

/// `∂L_i/∂s_ij` as an `n × n` row-major array.
///
/// # Safety
/// `s` and `config` must be valid and `out` must hold `n * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn clab_loss_gradients(
    s: *const ClabSimilarity,
    config: *const ClabLossConfig,
    out: *mut f64,
) -> ClabStatus {
    guard(|| {
        let s = &handle(s, "similarity")?.0;
        let cfg = LossConfig::from(handle(config, "config")?);
        let g = losses::loss_gradients(s, &cfg)?;
        slice_out(out, s.n() * s.n(), "out")?.copy_from_slice(g.dl_ds.as_slice());
        Ok(())
    })
}

/// Share of the negative gradient per negative (optional, `m` entries) and its entropy.
///
/// # Safety
/// `negatives` must hold `m` doubles; `r` is null or holds `m` doubles;
/// `entropy` is null or writable.
#[no_mangle]
pub unsafe extern "C" fn clab_penalty_distribution(
    negatives: *const f64,
    m: usize,
    tau: f64,
    r: *mut f64,
    entropy: *mut f64,
) -> ClabStatus {
    guard(|| {
        let neg = slice_in(negatives, m, "negatives")?;
        let p = analysis::penalty_distribution(neg, tau)?;
        if !r.is_null() {
            slice_out(r, m, "r")?.copy_from_slice(&p.r);
        }
        if !entropy.is_null() {
            entropy.write(p.entropy);
        }
        Ok(())
    })
}

/// Uniformity over all pairs of an `n × d` batch.
///
/// # Safety
/// `features` must hold `n * d` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn clab_uniformity(
    features: *const f64,
    n: usize,
    d: usize,
    t: f64,
    out: *mut f64,
) -> ClabStatus {
    guard(|| {
        let x = unit_matrix_in(features, n, d, "features")?;
        if !(t > 0.0 && t.is_finite()) {
            return Err(Fail::Lib(Error::InvalidConfig(format!(
                "t must be positive, got {t}"
            ))));
        }
        write_out(out, analysis::uniformity(&x, t, PairBudget::All)?, "out")
    })
}

/// # Safety
/// `features` must hold `n * d` doubles, `labels` `n` entries; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn clab_tolerance(
    features: *const f64,
    labels: *const u32,
    n: usize,
    d: usize,
    form: ClabToleranceForm,
    out: *mut f64,
) -> ClabStatus {
    guard(|| {
        let x = unit_matrix_in(features, n, d, "features")?;
        let l = slice_in(labels, n, "labels")?;
        let form = match form {
            ClabToleranceForm::SameClassMean => ToleranceForm::SameClassMean,
            ClabToleranceForm::MaskedMeanAllPairs => ToleranceForm::MaskedMeanAllPairs,
        };
        write_out(out, analysis::tolerance_with(&x, l, form)?, "out")
    })
}

/// # Safety
/// `features` must hold `n * d` doubles, `labels` `n` entries; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn clab_knn_purity(
    features: *const f64,
    labels: *const u32,
    n: usize,
    d: usize,
    k: usize,
    out: *mut f64,
) -> ClabStatus {
    guard(|| {
        let x = unit_matrix_in(features, n, d, "features")?;
        let l = slice_in(labels, n, "labels")?;
        write_out(out, analysis::knn_purity(&x, l, k)?, "out")
    })
}

/// Writes an `n × d` dump; `labels` may be null.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string, `features` must hold `n * d`
/// doubles and `labels` is null or holds `n` entries.
#[no_mangle]
pub unsafe extern "C" fn clab_dump_write(
    path: *const c_char,
    features: *const f64,
    labels: *const u32,
    n: usize,
    d: usize,
) -> ClabStatus {
    guard(|| {
        let path = path_in(path)?;
        let x = matrix_in(features, n, d, "features")?;
        let labels = if labels.is_null() {
            None
        } else {
            Some(slice_in(labels, n, "labels")?.to_vec())
        };
        io::write_dump(path, &EmbeddingDump::new(x, labels)?)?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn clab_dump_read(
    path: *const c_char,
    out: *mut *mut ClabDump,
) -> ClabStatus {
    guard(|| {
        let dump = io::read_dump(path_in(path)?)?;
        write_out(out, Box::into_raw(Box::new(ClabDump(dump))), "out")
    })
}

/// # Safety
/// `dump` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn clab_dump_rows(dump: *const ClabDump) -> usize {
    dump.as_ref().map_or(0, |d| d.0.embeddings.rows())
}

/// # Safety
/// `dump` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn clab_dump_cols(dump: *const ClabDump) -> usize {
    dump.as_ref().map_or(0, |d| d.0.embeddings.cols())
}

/// Row-major embeddings owned by the handle, or null.
///
/// # Safety
/// `dump` must be null or a live handle; the pointer dies with it.
#[no_mangle]
pub unsafe extern "C" fn clab_dump_embeddings(dump: *const ClabDump) -> *const f64 {
    dump.as_ref()
        .map_or(ptr::null(), |d| d.0.embeddings.as_slice().as_ptr())
}

/// Labels owned by the handle, or null when the dump has none.
///
/// # Safety
/// `dump` must be null or a live handle; the pointer dies with it.
#[no_mangle]
pub unsafe extern "C" fn clab_dump_labels(dump: *const ClabDump) -> *const u32 {
    dump.as_ref()
        .and_then(|d| d.0.labels.as_ref())
        .map_or(ptr::null(), |l| l.as_ptr())
}

/// # Safety
/// `dump` must be null or a handle from this library that was not freed yet.
#[no_mangle]
pub unsafe extern "C" fn clab_dump_free(dump: *mut ClabDump) {
    if !dump.is_null() {
        drop(Box::from_raw(dump));
    }
}
