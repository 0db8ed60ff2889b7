//! C interface to `spinproj`.
//!
//! Every call returns an [`SpStatus`]. On failure the message is available
//! from [`sp_last_error_message`] on the same thread until the next failing
//! call. Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use spinproj::driver::{self, ScanConfig};
use spinproj::fci::{solve_fci_with, FciOptions};
use spinproj::integrals::parse_fcidump;
use spinproj::recoupling::{closed_form_blocks, verify_block_diagonal, OverlapInputs4e};
use spinproj::{cuhf_solve, read_fcidump, Error, IntegralSet, SpinScan, SystemSpec};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidInput = 4,
    NotConverged = 5,
    Infeasible = 6,
    Numerical = 7,
    SizeCap = 8,
    Io = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

impl From<&Error> for SpStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Header { .. } | Error::Parse { .. } | Error::DataConsistency(_) => SpStatus::Parse,
            Error::InvalidInput(_) | Error::Unsupported(_) | Error::Domain(_) => SpStatus::InvalidInput,
            Error::NotConverged { .. } | Error::Davidson { .. } => SpStatus::NotConverged,
            Error::ConstraintInfeasible { .. } | Error::BranchDiscontinuity { .. } | Error::EmptyScan => {
                SpStatus::Infeasible
            }
            Error::SizeCap { .. } => SpStatus::SizeCap,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => SpStatus::Io,
            _ => SpStatus::Numerical,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

/// Message of the last failing call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn sp_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

struct Fail(SpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(SpStatus::from(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpStatus::Ok,
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
            set_error(format!("internal panic: {msg}"));
            SpStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(SpStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SpStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Parsed integrals and electron counts.
pub struct SpSystem {
    spec: SystemSpec,
    ints: IntegralSet,
}

/// Scan settings, defaults until changed with [`sp_config_set`].
pub struct SpConfig {
    inner: ScanConfig,
}

/// Completed scan.
pub struct SpScan {
    inner: SpinScan,
    json: Option<CString>,
}

fn boxed<T>(value: T, out: *mut *mut T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    unsafe { out.write(Box::into_raw(Box::new(value))) };
    Ok(())
}

/// Loads an FCIDUMP file.
///
/// # Safety
/// `path` must be a NUL-terminated string, `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn sp_system_from_file(path: *const c_char, out: *mut *mut SpSystem) -> SpStatus {
    guard(|| {
        let (spec, ints) = read_fcidump(as_str(path, "path")?)?;
        boxed(SpSystem { spec, ints }, out)
    })
}

/// Parses FCIDUMP text held in memory.
///
/// # Safety
/// `text` must be a NUL-terminated string, `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn sp_system_from_text(text: *const c_char, out: *mut *mut SpSystem) -> SpStatus {
    guard(|| {
        let (spec, ints) = parse_fcidump(as_str(text, "text")?)?;
        boxed(SpSystem { spec, ints }, out)
    })
}

/// # Safety
/// `sys` must come from `sp_system_from_*` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sp_system_free(sys: *mut SpSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Orbital and electron counts.
///
/// # Safety
/// `sys` must be a live handle; outputs may be NULL to skip them.
#[no_mangle]
pub unsafe extern "C" fn sp_system_dims(
    sys: *const SpSystem,
    n_orbitals: *mut usize,
    n_alpha: *mut usize,
    n_beta: *mut usize,
) -> SpStatus {
    guard(|| {
        let s = &as_ref(sys, "system")?.spec;
        for (p, v) in [(n_orbitals, s.n_orbitals), (n_alpha, s.n_alpha), (n_beta, s.n_beta)] {
            if !p.is_null() {
                p.write(v);
            }
        }
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sp_config_new(out: *mut *mut SpConfig) -> SpStatus {
    guard(|| boxed(SpConfig { inner: ScanConfig::default() }, out))
}

/// Sets one option using the key names of the configuration file format,
/// for example `grid` = `0.1:1.0:0.1` or `mode` = `restricted`.
///
/// # Safety
/// `cfg` must be live, `key` and `value` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sp_config_set(cfg: *mut SpConfig, key: *const c_char, value: *const c_char) -> SpStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("config"))?;
        let (k, v) = (as_str(key, "key")?, as_str(value, "value")?);
        // stage the change so a rejected value leaves the config untouched
        let mut next = cfg.inner.clone();
        next.set(k, v)?;
        cfg.inner = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from [`sp_config_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sp_config_free(cfg: *mut SpConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SpCuhfResult {
    pub lambda: f64,
    /// `<H>` without the constraint term.
    pub energy: f64,
    pub s2_achieved: f64,
    pub iterations: usize,
}

/// Constrained UHF at a fixed `<S^2>` target.
///
/// # Safety
/// `sys` must be live, `cfg` live or NULL for defaults, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sp_cuhf(
    sys: *const SpSystem,
    cfg: *const SpConfig,
    s2_target: f64,
    out: *mut SpCuhfResult,
) -> SpStatus {
    guard(|| {
        let sys = as_ref(sys, "system")?;
        let opts = cfg.as_ref().map(|c| c.inner.scf).unwrap_or_default();
        let sol = cuhf_solve(&sys.ints, &sys.spec, s2_target, None, &opts)?;
        write(
            out,
            SpCuhfResult {
                lambda: sol.lambda,
                energy: sol.energy,
                s2_achieved: sol.s2_achieved,
                iterations: sol.iterations,
            },
            "out",
        )
    })
}

/// Runs a scan over the imposed `<S^2>`.
///
/// # Safety
/// `sys` must be live, `cfg` live or NULL for defaults, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sp_scan_run(sys: *const SpSystem, cfg: *const SpConfig, out: *mut *mut SpScan) -> SpStatus {
    guard(|| {
        let sys = as_ref(sys, "system")?;
        let default = ScanConfig::default();
        let cfg = cfg.as_ref().map_or(&default, |c| &c.inner);
        let scan = driver::run(cfg, &sys.spec, &sys.ints)?;
        boxed(SpScan { inner: scan, json: None }, out)
    })
}

/// # Safety
/// `scan` must come from [`sp_scan_run`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sp_scan_free(scan: *mut SpScan) {
    if !scan.is_null() {
        drop(Box::from_raw(scan));
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SpScanSummary {
    pub n_points: usize,
    pub n_failed: usize,
    pub min_s2_target: f64,
    pub min_energy: f64,
    pub min_two_s: u32,
    pub min_k_eff: usize,
    pub e_rhf: f64,
    pub e_uhf: f64,
    pub s2_uhf: f64,
    /// NaN when no FCI energy was available.
    pub e_fci: f64,
    /// Percent of correlation recovered; NaN when undefined.
    pub capture_rhf: f64,
    pub capture_uhf: f64,
}

/// # Safety
/// `scan` must be live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sp_scan_summary(scan: *const SpScan, out: *mut SpScanSummary) -> SpStatus {
    guard(|| {
        let s = &as_ref(scan, "scan")?.inner;
        let b = &s.baselines;
        write(
            out,
            SpScanSummary {
                n_points: s.points.len(),
                n_failed: s.n_failed(),
                min_s2_target: s.minimum.s2_target,
                min_energy: s.minimum.energy,
                min_two_s: s.minimum.two_s,
                min_k_eff: s.minimum.k_eff,
                e_rhf: b.e_rhf,
                e_uhf: b.e_uhf,
                s2_uhf: b.s2_uhf,
                e_fci: b.e_fci.unwrap_or(f64::NAN),
                capture_rhf: s.capture.rhf_baseline.unwrap_or(f64::NAN),
                capture_uhf: s.capture.uhf_baseline.unwrap_or(f64::NAN),
            },
            "out",
        )
    })
}

/// Lowest NOCI energy at each grid point, NaN where the point failed.
/// Writes `min(len, n_points)` pairs and stores the point count in
/// `n_written` when given.
///
/// # Safety
/// `targets` and `energies` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sp_scan_curve(
    scan: *const SpScan,
    targets: *mut f64,
    energies: *mut f64,
    len: usize,
    n_written: *mut usize,
) -> SpStatus {
    guard(|| {
        let s = &as_ref(scan, "scan")?.inner;
        if targets.is_null() || energies.is_null() {
            return Err(null("output buffer"));
        }
        let n = s.points.len().min(len);
        for (i, p) in s.points.iter().take(n).enumerate() {
            targets.add(i).write(p.s2_target);
            energies.add(i).write(p.result.as_ref().map_or(f64::NAN, |r| r.e_noci()));
        }
        if !n_written.is_null() {
            n_written.write(n);
        }
        Ok(())
    })
}

/// Full report as JSON. The string is owned by the scan handle.
///
/// # Safety
/// `scan` must be live, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sp_scan_json(scan: *mut SpScan, out: *mut *const c_char) -> SpStatus {
    guard(|| {
        let s = scan.as_mut().ok_or_else(|| null("scan"))?;
        if s.json.is_none() {
            let text = driver::to_json(&s.inner)?;
            s.json = Some(CString::new(text).map_err(|e| Fail(SpStatus::Io, e.to_string()))?);
        }
        write(out, s.json.as_ref().map_or(ptr::null(), |c| c.as_ptr()), "out")
    })
}

/// Lowest `n_states` FCI energies and `<S^2>` values. `s2_values` may be NULL.
///
/// # Safety
/// `energies` (and `s2_values` when given) must hold `n_states` doubles.
#[no_mangle]
pub unsafe extern "C" fn sp_fci(
    sys: *const SpSystem,
    n_states: usize,
    energies: *mut f64,
    s2_values: *mut f64,
) -> SpStatus {
    guard(|| {
        let sys = as_ref(sys, "system")?;
        if energies.is_null() {
            return Err(null("energies"));
        }
        let r = solve_fci_with(&sys.spec, &sys.ints, n_states, &FciOptions::default())?;
        if r.energies.len() < n_states {
            return Err(Fail(
                SpStatus::BufferTooSmall,
                format!("only {} states available", r.energies.len()),
            ));
        }
        for i in 0..n_states {
            energies.add(i).write(r.energies[i]);
            if !s2_values.is_null() {
                s2_values.add(i).write(r.s2_values[i]);
            }
        }
        Ok(())
    })
}

/// Block-diagonality check of the four-electron reassignment overlap.
/// Reports the off-block norm after recoupling and the largest deviation
/// from the closed-form blocks.
///
/// # Safety
/// Outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn sp_recouple_check(
    g01: f64,
    g23: f64,
    g03: f64,
    g21: f64,
    offblock_norm: *mut f64,
    closed_form_diff: *mut f64,
) -> SpStatus {
    guard(|| {
        let g = OverlapInputs4e::new(g01, g23, g03, g21)?;
        let b = verify_block_diagonal(&g);
        write(offblock_norm, b.offblock_norm, "offblock_norm")?;
        write(closed_form_diff, b.max_abs_diff(&closed_form_blocks(&g)), "closed_form_diff")
    })
}
