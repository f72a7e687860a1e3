//! C interface to the mixcast estimator.
//!
//! Handles are opaque and owned by the caller, who frees them with the
//! matching `*_free` function. Every fallible call returns a
//! [`MixcastStatus`]; on failure a message is kept per thread and can be
//! copied out with [`mixcast_last_error_message`]. Matrices are dense and
//! row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mixcast::equilibrium::EquilibriumObservation;
use mixcast::estimator::{self, EstimationMode, EstimationProblem};
use mixcast::gmm::{
    mixture_moments, MixtureDocument, MixtureModel, MixtureWeights, PriorDocument, PriorSpec,
};
use mixcast::io::ObservationDocument;
use mixcast::Error;
use nalgebra::DMatrix;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixcastStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    DimensionMismatch = 3,
    NotPositiveDefinite = 4,
    Singular = 5,
    Parse = 6,
    /// A Rust panic was caught at the boundary.
    Internal = 7,
}

/// Estimation mode, passed as a `uint32_t`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixcastMode {
    Backward = 0,
    Forward = 1,
    Combined = 2,
}

/// A Gaussian mixture together with the weights it was loaded with.
pub struct MixcastModel {
    model: MixtureModel,
    weights: MixtureWeights,
}

/// Everything needed to solve for the mixture weights.
pub struct MixcastEstimator {
    model: MixtureModel,
    prior: PriorSpec,
    observation: EquilibriumObservation,
    covariance: Option<DMatrix<f64>>,
}

struct Failure {
    status: MixcastStatus,
    message: String,
}

impl Failure {
    fn new(status: MixcastStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn null(what: &str) -> Self {
        Self::new(MixcastStatus::NullPointer, format!("{what} is null"))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::DimensionMismatch { .. } => MixcastStatus::DimensionMismatch,
            Error::NotPositiveDefinite { .. } => MixcastStatus::NotPositiveDefinite,
            Error::Singular(_) => MixcastStatus::Singular,
            Error::Parse { .. } => MixcastStatus::Parse,
            _ => MixcastStatus::InvalidInput,
        };
        Self::new(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MixcastStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MixcastStatus::Ok,
        Ok(Err(fail)) => {
            set_last_error(&fail.message);
            fail.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("internal error: {msg}"));
            MixcastStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(MixcastStatus::Parse, format!("{what} is not UTF-8")))
}

fn parse_failure(what: &str, e: serde_json::Error) -> Failure {
    Failure::new(MixcastStatus::Parse, format!("{what}: {e}"))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn expect_len(what: &'static str, expected: usize, actual: usize) -> Result<(), Failure> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context: what,
            expected,
            actual,
        }
        .into());
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mixcast_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf`, truncating and
/// always NUL-terminating when `len > 0`. Returns the buffer size needed for
/// the whole message including the terminator, or 0 when no call on this
/// thread has failed yet.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn mixcast_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes_with_nul();
            if !buf.is_null() && len > 0 {
                let k = bytes.len().min(len) - 1;
                ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, k);
                *buf.add(k) = 0;
            }
            bytes.len()
        }
    })
}

/// Parses a mixture from JSON with fields `components` (each with `mu` and
/// `sigma`) and `weights`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mixcast_model_from_json(
    json: *const c_char,
    out: *mut *mut MixcastModel,
) -> MixcastStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let doc: MixtureDocument = serde_json::from_str(str_arg(json, "model json")?)
            .map_err(|e| parse_failure("model json", e))?;
        let (model, weights) = doc.into_model()?;
        *out = Box::into_raw(Box::new(MixcastModel { model, weights }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`mixcast_model_from_json`] that
/// has not been freed.
#[no_mangle]
pub unsafe extern "C" fn mixcast_model_free(model: *mut MixcastModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of components and number of assets.
///
/// # Safety
/// `model` must be a live handle; the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mixcast_model_dims(
    model: *const MixcastModel,
    n_components: *mut usize,
    n_assets: *mut usize,
) -> MixcastStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| Failure::null("model"))?;
        if n_components.is_null() || n_assets.is_null() {
            return Err(Failure::null("dimension output"));
        }
        *n_components = m.model.n_components();
        *n_assets = m.model.n_assets();
        Ok(())
    })
}

/// Mixture mean (`n_assets` values) and covariance (`n_assets^2`,
/// row-major). `weights` may be null to use the weights stored with the
/// model; otherwise it holds `n_weights` entries.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn mixcast_model_moments(
    model: *const MixcastModel,
    weights: *const f64,
    n_weights: usize,
    mean_out: *mut f64,
    n_assets: usize,
    cov_out: *mut f64,
) -> MixcastStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| Failure::null("model"))?;
        let w = if weights.is_null() {
            m.weights.clone()
        } else {
            expect_len("weights", m.model.n_components(), n_weights)?;
            MixtureWeights::from_slice(slice_arg(weights, n_weights, "weights")?)?
        };
        expect_len("assets", m.model.n_assets(), n_assets)?;
        let mean = out_slice(mean_out, n_assets, "mean_out")?;
        let cov = out_slice(cov_out, n_assets * n_assets, "cov_out")?;
        let (mu, sigma) = mixture_moments(&m.model, &w)?;
        mean.copy_from_slice(mu.as_slice());
        for i in 0..n_assets {
            for j in 0..n_assets {
                cov[i * n_assets + j] = sigma[(i, j)];
            }
        }
        Ok(())
    })
}

/// Builds an estimator from the model, a prior JSON (`lambda_hat_minus`,
/// `phi`) and an observation JSON (`x_m`, `x_u_star`, `params`).
/// `covariance` is null for the mixture covariance, or an
/// `n_assets^2` row-major matrix shared by both rational investors.
///
/// # Safety
/// Strings must be NUL-terminated; `covariance` must be null or valid for
/// `n_assets^2` values.
#[no_mangle]
pub unsafe extern "C" fn mixcast_estimator_new(
    model: *const MixcastModel,
    prior_json: *const c_char,
    observation_json: *const c_char,
    covariance: *const f64,
    out: *mut *mut MixcastEstimator,
) -> MixcastStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| Failure::null("model"))?;
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let prior: PriorDocument = serde_json::from_str(str_arg(prior_json, "prior json")?)
            .map_err(|e| parse_failure("prior json", e))?;
        let observation: ObservationDocument =
            serde_json::from_str(str_arg(observation_json, "observation json")?)
                .map_err(|e| parse_failure("observation json", e))?;
        let prior = prior.into_prior()?;
        let observation = observation.into_observation()?;
        let n = m.model.n_assets();
        let covariance = if covariance.is_null() {
            None
        } else {
            Some(DMatrix::from_row_slice(
                n,
                n,
                slice_arg(covariance, n * n, "covariance")?,
            ))
        };
        let est = MixcastEstimator {
            model: m.model.clone(),
            prior,
            observation,
            covariance,
        };
        // reject inconsistent inputs here rather than at solve time
        problem(&est, EstimationMode::Combined)?;
        *out = Box::into_raw(Box::new(est));
        Ok(())
    })
}

/// # Safety
/// `est` must be null or a live handle from [`mixcast_estimator_new`].
#[no_mangle]
pub unsafe extern "C" fn mixcast_estimator_free(est: *mut MixcastEstimator) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

fn problem(est: &MixcastEstimator, mode: EstimationMode) -> Result<EstimationProblem<'_>, Failure> {
    let p = EstimationProblem::new(&est.model, &est.prior, &est.observation, mode)?;
    Ok(match &est.covariance {
        Some(s) => p.with_fixed_covariance(s)?,
        None => p,
    })
}

/// Solves for the mixture weights. `mode` is a [`MixcastMode`] value.
/// Writes `n_components` weights to `lambda_out`; `objective_out` and
/// `converged_out` may be null.
///
/// # Safety
/// `est` must be a live handle and `lambda_out` valid for `n_components`
/// values.
#[no_mangle]
pub unsafe extern "C" fn mixcast_estimate(
    est: *const MixcastEstimator,
    mode: u32,
    lambda_out: *mut f64,
    n_components: usize,
    objective_out: *mut f64,
    converged_out: *mut bool,
) -> MixcastStatus {
    guard(|| {
        let e = est.as_ref().ok_or_else(|| Failure::null("estimator"))?;
        let mode = match mode {
            0 => EstimationMode::Backward,
            1 => EstimationMode::Forward,
            2 => EstimationMode::Combined,
            other => {
                return Err(Failure::new(
                    MixcastStatus::InvalidInput,
                    format!("unknown mode {other}"),
                ))
            }
        };
        expect_len("components", e.model.n_components(), n_components)?;
        let lambda = out_slice(lambda_out, n_components, "lambda_out")?;
        let r = estimator::solve(&problem(e, mode)?)?;
        lambda.copy_from_slice(r.lambda.as_slice());
        if !objective_out.is_null() {
            *objective_out = r.objective_value;
        }
        if !converged_out.is_null() {
            *converged_out = r.converged;
        }
        Ok(())
    })
}
