//! C ABI over the potential-theory core: circular domains, harmonic
//! measures, critical points and the Neumann function.
//!
//! Conventions:
//! * every fallible call returns an [`McflowStatus`]; `MCFLOW_STATUS_OK` is 0;
//! * results go through out-pointers, which are left untouched on failure;
//! * objects are opaque handles released with the matching `*_free`;
//! * after a failure, [`mcflow_last_error`] describes it (per thread);
//! * panics never cross the boundary and surface as `MCFLOW_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use mcflow::geometry::{Circle, CircularDomain, Domain};
use mcflow::greens::NeumannGreen;
use mcflow::laplace::{find_critical_points, DirichletSolver};
use mcflow::series::SeriesHarmonic;
use mcflow::{Error, C64};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum McflowStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidDomain = 3,
    OutsideDomain = 4,
    IllConditioned = 5,
    IndexMismatch = 6,
    BufferTooSmall = 7,
    Unsupported = 8,
    Panic = 9,
}

/// Circular domain: unit disc minus disjoint closed discs.
pub struct McflowDomain(CircularDomain);

/// Harmonic function in log-source plus Laurent form.
pub struct McflowHarmonic(SeriesHarmonic);

/// Neumann function evaluator bound to a domain.
pub struct McflowGreen(NeumannGreen);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> McflowStatus {
    match e {
        Error::InvalidDomain(_) | Error::ResolutionTooCoarse { .. } => McflowStatus::InvalidDomain,
        Error::OutsideDomain(_) | Error::SourceOnBoundary(_) => McflowStatus::OutsideDomain,
        Error::IllConditioned(_) => McflowStatus::IllConditioned,
        Error::IndexSumMismatch { .. } => McflowStatus::IndexMismatch,
        Error::Unsupported(_) => McflowStatus::Unsupported,
        _ => McflowStatus::InvalidArgument,
    }
}

struct Fail(McflowStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), format!("[{}] {e}", e.code()))
    }
}

fn null(what: &str) -> Fail {
    Fail(McflowStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records failures and contains panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> McflowStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            McflowStatus::Ok
        }
        Ok(Err(Fail(s, m))) => {
            set_error(m);
            s
        }
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {m}"));
            McflowStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

/// Message of the last failure on this thread; empty after a success. The
/// pointer stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn mcflow_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mcflow_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a domain from `n_holes` hole centres (`centers_xy`, interleaved
/// x, y) and radii. `n_holes = 0` gives the unit disc.
///
/// # Safety
/// `centers_xy` must hold `2 n_holes` doubles and `radii` `n_holes` doubles
/// (either may be null when `n_holes = 0`); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcflow_domain_new(
    centers_xy: *const f64,
    radii: *const f64,
    n_holes: usize,
    out: *mut *mut McflowDomain,
) -> McflowStatus {
    guard(|| {
        let holes = if n_holes == 0 {
            Vec::new()
        } else {
            if centers_xy.is_null() || radii.is_null() {
                return Err(null("hole arrays"));
            }
            let c = std::slice::from_raw_parts(centers_xy, 2 * n_holes);
            let r = std::slice::from_raw_parts(radii, n_holes);
            (0..n_holes).map(|i| Circle::new(c[2 * i], c[2 * i + 1], r[i])).collect()
        };
        let d = CircularDomain::new(holes)?;
        put(out, Box::into_raw(Box::new(McflowDomain(d))), "out")
    })
}

/// Concentric annulus `r < |z| < 1`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcflow_domain_annulus(r: f64, out: *mut *mut McflowDomain) -> McflowStatus {
    guard(|| {
        let d = CircularDomain::annulus(r)?;
        put(out, Box::into_raw(Box::new(McflowDomain(d))), "out")
    })
}

/// Parses a TOML domain description; only all-circle domains are accepted.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcflow_domain_parse(text: *const c_char, out: *mut *mut McflowDomain) -> McflowStatus {
    guard(|| {
        if text.is_null() {
            return Err(null("text"));
        }
        let s = CStr::from_ptr(text)
            .to_str()
            .map_err(|e| Fail(McflowStatus::InvalidArgument, format!("text is not UTF-8: {e}")))?;
        match Domain::parse(s)? {
            Domain::Circular(d) => put(out, Box::into_raw(Box::new(McflowDomain(d))), "out"),
            Domain::Smooth(_) => Err(Fail(McflowStatus::Unsupported, "non-circular domain".into())),
        }
    })
}

/// Number of boundary components `k` (0 for a null handle).
///
/// # Safety
/// `d` must be null or a live domain handle.
#[no_mangle]
pub unsafe extern "C" fn mcflow_domain_components(d: *const McflowDomain) -> usize {
    d.as_ref().map_or(0, |d| d.0.k())
}

/// Whether `(x, y)` lies in the open fluid region.
///
/// # Safety
/// `d` must be a live domain handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcflow_domain_contains(
    d: *const McflowDomain,
    x: f64,
    y: f64,
    out: *mut bool,
) -> McflowStatus {
    guard(|| {
        let d = deref(d, "domain")?;
        put(out, d.0.contains(C64::new(x, y)), "out")
    })
}

/// # Safety
/// `d` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mcflow_domain_free(d: *mut McflowDomain) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Harmonic measure of component `j` (0 = outer circle) with `modes`
/// Laurent modes per circle.
///
/// # Safety
/// `d` must be a live domain handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcflow_harmonic_measure(
    d: *const McflowDomain,
    j: usize,
    modes: usize,
    out: *mut *mut McflowHarmonic,
) -> McflowStatus {
    guard(|| {
        let d = deref(d, "domain")?;
        if j >= d.0.k() || modes == 0 {
            return Err(Fail(McflowStatus::InvalidArgument, format!("component {j} or modes {modes} out of range")));
        }
        let h = DirichletSolver::new(&d.0, modes)?.harmonic_measure(j)?;
        put(out, Box::into_raw(Box::new(McflowHarmonic(h))), "out")
    })
}

/// Value and gradient at `(x, y)`; `grad` may be null, otherwise it receives
/// two doubles.
///
/// # Safety
/// `h` must be a live handle; `value` writable; `grad` null or writable for 2.
#[no_mangle]
pub unsafe extern "C" fn mcflow_harmonic_eval(
    h: *const McflowHarmonic,
    x: f64,
    y: f64,
    value: *mut f64,
    grad: *mut f64,
) -> McflowStatus {
    guard(|| {
        let h = deref(h, "harmonic")?;
        let z = C64::new(x, y);
        put(value, h.0.value(z), "value")?;
        if !grad.is_null() {
            let g = h.0.gradient(z);
            grad.write(g[0]);
            grad.add(1).write(g[1]);
        }
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mcflow_harmonic_free(h: *mut McflowHarmonic) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Critical points of `h` in `d`. Writes up to `capacity` points as
/// interleaved `xy` pairs and their multiplicities; `count` always receives
/// the total found. Returns `MCFLOW_STATUS_BUFFER_TOO_SMALL` when
/// `capacity < count` and `MCFLOW_STATUS_INDEX_MISMATCH` when the weighted
/// count differs from `k - 2` (the points are still written).
///
/// # Safety
/// `xy` must hold `2 capacity` doubles and `multiplicity` `capacity` ints
/// (null allowed when `capacity = 0`); `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcflow_critical_points(
    d: *const McflowDomain,
    h: *const McflowHarmonic,
    xy: *mut f64,
    multiplicity: *mut i32,
    capacity: usize,
    count: *mut usize,
) -> McflowStatus {
    guard(|| {
        let (d, h) = (deref(d, "domain")?, deref(h, "harmonic")?);
        if count.is_null() {
            return Err(null("count"));
        }
        let (points, mismatch) = match find_critical_points(&d.0, &h.0) {
            Ok(p) => (p, None),
            Err(Error::IndexSumMismatch { expected, found, points }) => (points, Some((expected, found))),
            Err(e) => return Err(e.into()),
        };
        count.write(points.len());
        if capacity > 0 && (xy.is_null() || multiplicity.is_null()) {
            return Err(null("output arrays"));
        }
        for (i, p) in points.iter().take(capacity).enumerate() {
            xy.add(2 * i).write(p.location[0]);
            xy.add(2 * i + 1).write(p.location[1]);
            multiplicity.add(i).write(p.multiplicity);
        }
        if let Some((e, f)) = mismatch {
            return Err(Fail(McflowStatus::IndexMismatch, format!("weighted count {f} differs from k - 2 = {e}")));
        }
        if capacity < points.len() {
            return Err(Fail(McflowStatus::BufferTooSmall, format!("{} points, capacity {capacity}", points.len())));
        }
        Ok(())
    })
}

/// Neumann function evaluator with `modes` Laurent modes per circle.
///
/// # Safety
/// `d` must be a live domain handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcflow_green_new(
    d: *const McflowDomain,
    modes: usize,
    out: *mut *mut McflowGreen,
) -> McflowStatus {
    guard(|| {
        let d = deref(d, "domain")?;
        if modes == 0 {
            return Err(Fail(McflowStatus::InvalidArgument, "modes must be positive".into()));
        }
        let g = NeumannGreen::new(&d.0, modes)?;
        put(out, Box::into_raw(Box::new(McflowGreen(g))), "out")
    })
}

/// `N(z, w)` and, when `grad` is non-null, its gradient in `z`.
///
/// # Safety
/// `g` must be a live handle; `value` writable; `grad` null or writable for 2.
#[no_mangle]
pub unsafe extern "C" fn mcflow_green_eval(
    g: *const McflowGreen,
    zx: f64,
    zy: f64,
    wx: f64,
    wy: f64,
    value: *mut f64,
    grad: *mut f64,
) -> McflowStatus {
    guard(|| {
        let g = deref(g, "green")?;
        let (z, w) = (C64::new(zx, zy), C64::new(wx, wy));
        let v = g.0.eval_n(z, w)?;
        let gr = if grad.is_null() { None } else { Some(g.0.eval_grad_n(z, w)?) };
        put(value, v, "value")?;
        if let Some(gr) = gr {
            grad.write(gr[0]);
            grad.add(1).write(gr[1]);
        }
        Ok(())
    })
}

/// # Safety
/// `g` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mcflow_green_free(g: *mut McflowGreen) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}
