//! C ABI over the `rdense` crate.
//!
//! Every fallible function returns an [`RdenseStatus`]. On failure the message
//! is kept per thread and can be read with [`rdense_last_error`]. Strings
//! handed out by the library are owned by the caller and released with
//! [`rdense_string_free`]; networks are released with [`rdense_network_free`].
//!
//! Architecture arguments are either a preset name (`"rdense-12-100"`) or a
//! JSON object with the fields of the spec (`{"name": ..., "growth_rate": ...}`).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use rdense::analyzer;
use rdense::checkpoint;
use rdense::{ArchSpec, Error, Network, Tensor};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RdenseStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Dimension = 3,
    Config = 4,
    Usage = 5,
    Input = 6,
    Format = 7,
    MissingFiles = 8,
    Checkpoint = 9,
    NonFinite = 10,
    Io = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

/// A built network in double precision.
pub struct RdenseNetwork {
    net: Network<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(RdenseStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Dimension { .. } => RdenseStatus::Dimension,
            Error::Config(_) => RdenseStatus::Config,
            Error::Usage(_) => RdenseStatus::Usage,
            Error::Input(_) => RdenseStatus::Input,
            Error::Format { .. } => RdenseStatus::Format,
            Error::MissingFiles { .. } => RdenseStatus::MissingFiles,
            Error::Checkpoint(_) => RdenseStatus::Checkpoint,
            Error::NonFinite { .. } => RdenseStatus::NonFinite,
            Error::Io { .. } => RdenseStatus::Io,
        };
        Fail(code, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(RdenseStatus::NullArgument, format!("{what} is null"))
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RdenseStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RdenseStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            RdenseStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(RdenseStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn parse_spec(text: &str) -> Result<ArchSpec, Fail> {
    let t = text.trim();
    let spec = if t.starts_with('{') {
        serde_json::from_str::<ArchSpec>(t)
            .map_err(|e| Fail(RdenseStatus::Input, format!("invalid spec JSON: {e}")))?
    } else {
        ArchSpec::preset(t)?
    };
    spec.validate()?;
    Ok(spec)
}

unsafe fn spec_arg(p: *const c_char) -> Result<ArchSpec, Fail> {
    parse_spec(read_str(p, "spec")?)
}

fn give_string(s: String, out: *mut *mut c_char) -> Result<(), Fail> {
    let c = CString::new(s).map_err(|_| Fail(RdenseStatus::Panic, "string holds a nul byte".into()))?;
    unsafe { *out = c.into_raw() };
    Ok(())
}

unsafe fn net_ref<'a>(net: *const RdenseNetwork) -> Result<&'a RdenseNetwork, Fail> {
    net.as_ref().ok_or_else(|| null("network"))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn rdense_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn rdense_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn rdense_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Exact parameter and FLOP (multiply-accumulate) totals for `spec`.
///
/// # Safety
/// `spec` must be a nul-terminated string; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn rdense_analyze(
    spec: *const c_char,
    params_out: *mut u64,
    flops_out: *mut u64,
) -> RdenseStatus {
    guard(|| {
        if params_out.is_null() || flops_out.is_null() {
            return Err(null("output pointer"));
        }
        let spec = spec_arg(spec)?;
        *params_out = analyzer::count_params(&spec)?;
        *flops_out = analyzer::count_flops(&spec)?;
        Ok(())
    })
}

/// Per-layer cost report as JSON with keys `spec`, `rows`, `total_params`,
/// `total_flops`. Free the result with [`rdense_string_free`].
///
/// # Safety
/// `spec` must be a nul-terminated string; `json_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rdense_report_json(spec: *const c_char, json_out: *mut *mut c_char) -> RdenseStatus {
    guard(|| {
        if json_out.is_null() {
            return Err(null("json_out"));
        }
        let spec = spec_arg(spec)?;
        give_string(analyzer::report(&spec)?.to_json(), json_out)
    })
}

/// Build and initialise a network from `spec` with weights drawn from `seed`.
///
/// # Safety
/// `spec` must be a nul-terminated string; `net_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rdense_network_new(
    spec: *const c_char,
    seed: u64,
    net_out: *mut *mut RdenseNetwork,
) -> RdenseStatus {
    guard(|| {
        if net_out.is_null() {
            return Err(null("net_out"));
        }
        let spec = spec_arg(spec)?;
        let net = Network::build(&spec, seed)?;
        *net_out = Box::into_raw(Box::new(RdenseNetwork { net }));
        Ok(())
    })
}

/// Release a network. Null is ignored.
///
/// # Safety
/// `net` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn rdense_network_free(net: *mut RdenseNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of scalar parameters in the network.
///
/// # Safety
/// `net` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rdense_network_num_params(net: *const RdenseNetwork, out: *mut u64) -> RdenseStatus {
    guard(|| {
        let n = net_ref(net)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = n.net.num_params() as u64;
        Ok(())
    })
}

/// Expected input geometry `[channels, height, width]` and class count.
///
/// # Safety
/// `net` must be a live handle; `chw_out` must hold 3 values; `classes_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rdense_network_geometry(
    net: *const RdenseNetwork,
    chw_out: *mut usize,
    classes_out: *mut usize,
) -> RdenseStatus {
    guard(|| {
        let n = net_ref(net)?;
        if chw_out.is_null() || classes_out.is_null() {
            return Err(null("output pointer"));
        }
        let s = n.net.spec();
        let chw = std::slice::from_raw_parts_mut(chw_out, 3);
        chw.copy_from_slice(&[s.input_channels, s.input_height, s.input_width]);
        *classes_out = s.num_classes;
        Ok(())
    })
}

/// The network's architecture as JSON. Free with [`rdense_string_free`].
///
/// # Safety
/// `net` must be a live handle; `json_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rdense_network_spec_json(
    net: *const RdenseNetwork,
    json_out: *mut *mut c_char,
) -> RdenseStatus {
    guard(|| {
        let n = net_ref(net)?;
        if json_out.is_null() {
            return Err(null("json_out"));
        }
        let json = serde_json::to_string(n.net.spec()).expect("spec serializes");
        give_string(json, json_out)
    })
}

/// Eval-mode logits for `batch` images laid out as NCHW doubles.
///
/// `input_len` must equal `batch * C * H * W` and `logits_len` must be at
/// least `batch * classes`.
///
/// # Safety
/// `net` must be a live handle; `input` and `logits_out` must point to at
/// least `input_len` and `logits_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rdense_network_predict(
    net: *const RdenseNetwork,
    input: *const f64,
    batch: usize,
    input_len: usize,
    logits_out: *mut f64,
    logits_len: usize,
) -> RdenseStatus {
    guard(|| {
        let n = net_ref(net)?;
        if input.is_null() || logits_out.is_null() {
            return Err(null("buffer"));
        }
        let s = n.net.spec();
        let per = s.input_channels * s.input_height * s.input_width;
        if batch == 0 || input_len != batch * per {
            return Err(Fail(
                RdenseStatus::Dimension,
                format!("input holds {input_len} values, expected {batch} x {per}"),
            ));
        }
        let need = batch * s.num_classes;
        if logits_len < need {
            return Err(Fail(
                RdenseStatus::BufferTooSmall,
                format!("logits buffer holds {logits_len} values, need {need}"),
            ));
        }
        let x = std::slice::from_raw_parts(input, input_len).to_vec();
        let x = Tensor::new(&[batch, s.input_channels, s.input_height, s.input_width], x)?;
        let logits = n.net.predict(&x)?;
        std::slice::from_raw_parts_mut(logits_out, need).copy_from_slice(logits.data());
        Ok(())
    })
}

/// Write the network (weights, running statistics, velocities) to `path`.
///
/// # Safety
/// `net` must be a live handle; `path` must be a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rdense_network_save(net: *const RdenseNetwork, path: *const c_char) -> RdenseStatus {
    guard(|| {
        let n = net_ref(net)?;
        let path = PathBuf::from(read_str(path, "path")?);
        checkpoint::save_checkpoint(&n.net, &path)?;
        Ok(())
    })
}

/// Load a double-precision checkpoint. When `spec` is non-null the embedded
/// architecture must equal it.
///
/// # Safety
/// `path` must be a nul-terminated string; `spec` null or nul-terminated;
/// `net_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rdense_network_load(
    path: *const c_char,
    spec: *const c_char,
    net_out: *mut *mut RdenseNetwork,
) -> RdenseStatus {
    guard(|| {
        if net_out.is_null() {
            return Err(null("net_out"));
        }
        let path = PathBuf::from(read_str(path, "path")?);
        let expected = if spec.is_null() { None } else { Some(spec_arg(spec)?) };
        let ck = checkpoint::load::<f64>(&path, expected.as_ref())?;
        *net_out = Box::into_raw(Box::new(RdenseNetwork { net: ck.network }));
        Ok(())
    })
}
