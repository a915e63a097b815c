//! C ABI over the choicelab workbench.
//!
//! Every function returns a [`ClStatus`]; results go through out-pointers.
//! On failure a message is kept per thread and can be read with
//! [`cl_last_error_message`]. Datasets are opaque handles owned by the
//! caller and released with [`cl_dataset_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use choicelab::da_model::{optimal_demand, DaParams};
use choicelab::data::{
    read_datasets, Allocation, ChoiceRound, Demand, PricePair, Provenance, ReturnPair,
    SubjectDataset,
};
use choicelab::estimation::{recover_params, EstimationConfig};
use choicelab::eu_deviation::deut_index;
use choicelab::rationality::{ccei, fosd_violations};
use choicelab::simulation::{generate_budgets, simulate_subject};
use choicelab::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClStatus {
    Ok = 0,
    NullPointer = 1,
    /// A number outside its domain or a malformed string.
    InvalidArgument = 2,
    /// Data that breaks an invariant (bad file row, budget outside the slack band, ...).
    Validation = 3,
    Io = 4,
    /// Data on which the requested quantity is undefined.
    Degenerate = 5,
    /// A bug: a panic was caught at the boundary.
    Internal = 6,
}

/// Opaque choice dataset for one subject.
pub struct ClDataset(SubjectDataset);

/// Opaque list of datasets read from a file.
pub struct ClDatasetList(Vec<SubjectDataset>);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ClDeut {
    pub deut: f64,
    /// Minimum cycle mean of the constraint graph, NaN when it is acyclic.
    pub min_cycle_mean: f64,
    /// The index is positive only because of a zero-weight strict cycle.
    pub strict_tie: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ClFit {
    pub beta: f64,
    pub rho: f64,
    pub loss: f64,
    pub converged: bool,
    /// False when the data cannot pin down both parameters.
    pub identified: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(ClStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Domain(_) => ClStatus::InvalidArgument,
            Error::Io { .. } => ClStatus::Io,
            Error::Degenerate(_) | Error::Singular(_) => ClStatus::Degenerate,
            Error::Backend(_) => ClStatus::Internal,
            _ => ClStatus::Validation,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ClStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ClStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            ClStatus::Internal
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(ClStatus::NullPointer, format!("`{name}` is NULL"))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(ClStatus::InvalidArgument, format!("`{name}` is not UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, n: usize, name: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn put<T>(out: *mut T, v: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(name));
    }
    out.write(v);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Builds a dataset from per-point returns and points invested. Round `k`
/// (zero-based) is `(r_a[k], r_b[k], t_a[k], t_b[k])`; token sums may
/// deviate from 100 by at most `slack`.
///
/// # Safety
/// `subject_id` must be a NUL-terminated string; the four arrays must hold
/// `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_dataset_from_tokens(
    subject_id: *const c_char,
    r_a: *const f64,
    r_b: *const f64,
    t_a: *const f64,
    t_b: *const f64,
    n: usize,
    slack: f64,
    out: *mut *mut ClDataset,
) -> ClStatus {
    guard(|| {
        let id = text(subject_id, "subject_id")?;
        let (ra, rb) = (slice(r_a, n, "r_a")?, slice(r_b, n, "r_b")?);
        let (ta, tb) = (slice(t_a, n, "t_a")?, slice(t_b, n, "t_b")?);
        let rounds = (0..n)
            .map(|k| {
                let r = ReturnPair::new(ra[k], rb[k])?;
                let t = Allocation::new(ta[k], tb[k])?;
                ChoiceRound::from_tokens(k as u32 + 1, r, t, slack)
            })
            .collect::<choicelab::Result<Vec<_>>>()?;
        let ds = SubjectDataset::new(id, Provenance::Human, rounds)?;
        put(out, Box::into_raw(Box::new(ClDataset(ds))), "out")
    })
}

/// Builds a dataset from unit prices and demands. Expenditure `p·x` must lie
/// within `slack` percent of one.
///
/// # Safety
/// As for [`cl_dataset_from_tokens`].
#[no_mangle]
pub unsafe extern "C" fn cl_dataset_from_prices(
    subject_id: *const c_char,
    p_a: *const f64,
    p_b: *const f64,
    x_a: *const f64,
    x_b: *const f64,
    n: usize,
    slack: f64,
    out: *mut *mut ClDataset,
) -> ClStatus {
    guard(|| {
        let id = text(subject_id, "subject_id")?;
        let (pa, pb) = (slice(p_a, n, "p_a")?, slice(p_b, n, "p_b")?);
        let (xa, xb) = (slice(x_a, n, "x_a")?, slice(x_b, n, "x_b")?);
        let rounds = (0..n)
            .map(|k| {
                let p = PricePair::new(pa[k], pb[k])?;
                let x = Demand::new(xa[k], xb[k])?;
                ChoiceRound::from_prices(k as u32 + 1, p, x, slack)
            })
            .collect::<choicelab::Result<Vec<_>>>()?;
        let ds = SubjectDataset::new(id, Provenance::Human, rounds)?;
        put(out, Box::into_raw(Box::new(ClDataset(ds))), "out")
    })
}

/// Reads every subject of a choice CSV file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cl_dataset_read_csv(
    path: *const c_char,
    slack: f64,
    out: *mut *mut ClDatasetList,
) -> ClStatus {
    guard(|| {
        let path = text(path, "path")?;
        let list = read_datasets(Path::new(path), Provenance::Human, slack)?;
        put(out, Box::into_raw(Box::new(ClDatasetList(list))), "out")
    })
}

/// # Safety
/// `list` must come from [`cl_dataset_read_csv`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_dataset_list_len(list: *const ClDatasetList, out: *mut usize) -> ClStatus {
    guard(|| put(out, handle(list, "list")?.0.len(), "out"))
}

/// Copies subject `index` of the list into a new dataset handle.
///
/// # Safety
/// `list` must come from [`cl_dataset_read_csv`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_dataset_list_get(
    list: *const ClDatasetList,
    index: usize,
    out: *mut *mut ClDataset,
) -> ClStatus {
    guard(|| {
        let list = &handle(list, "list")?.0;
        let ds = list.get(index).ok_or_else(|| {
            Failure(ClStatus::InvalidArgument, format!("index {index} out of range 0..{}", list.len()))
        })?;
        put(out, Box::into_raw(Box::new(ClDataset(ds.clone()))), "out")
    })
}

/// # Safety
/// `list` must be NULL or come from [`cl_dataset_read_csv`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cl_dataset_list_free(list: *mut ClDatasetList) {
    if !list.is_null() {
        drop(Box::from_raw(list));
    }
}

/// # Safety
/// `ds` must be NULL or a live handle, not freed twice.
#[no_mangle]
pub unsafe extern "C" fn cl_dataset_free(ds: *mut ClDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_dataset_len(ds: *const ClDataset, out: *mut usize) -> ClStatus {
    guard(|| put(out, handle(ds, "ds")?.0.len(), "out"))
}

/// Number of rounds rescaled onto the budget line when read.
///
/// # Safety
/// `ds` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_dataset_rescaled_count(ds: *const ClDataset, out: *mut usize) -> ClStatus {
    guard(|| put(out, handle(ds, "ds")?.0.rescaled_count(), "out"))
}

/// Critical cost efficiency index in `[0, 1]`.
///
/// # Safety
/// `ds` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_ccei(ds: *const ClDataset, out: *mut f64) -> ClStatus {
    guard(|| put(out, ccei(&handle(ds, "ds")?.0).ccei, "out"))
}

/// Deviation from expected utility; zero when the data are EU-rationalizable.
///
/// # Safety
/// `ds` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_deut(ds: *const ClDataset, out: *mut ClDeut) -> ClStatus {
    guard(|| {
        let r = deut_index(&handle(ds, "ds")?.0)?;
        let v = ClDeut {
            deut: r.deut,
            min_cycle_mean: r.min_cycle_mean.unwrap_or(f64::NAN),
            strict_tie: r.strict_tie,
        };
        put(out, v, "out")
    })
}

/// Rounds holding strictly more of the strictly more expensive security.
///
/// # Safety
/// `ds` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_fosd_count(ds: *const ClDataset, out: *mut usize) -> ClStatus {
    guard(|| put(out, fosd_violations(&handle(ds, "ds")?.0).count, "out"))
}

/// Least-squares disappointment-aversion fit with the default grid and
/// refinement settings.
///
/// # Safety
/// `ds` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_recover_params(ds: *const ClDataset, out: *mut ClFit) -> ClStatus {
    guard(|| {
        let f = recover_params(&handle(ds, "ds")?.0, &EstimationConfig::default())?;
        let v = ClFit {
            beta: f.params.beta(),
            rho: f.params.rho(),
            loss: f.loss,
            converged: f.converged,
            identified: f.identified,
        };
        put(out, v, "out")
    })
}

/// Optimal demand on the unit budget at prices `(p_a, p_b)`.
///
/// # Safety
/// `x_a` and `x_b` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_optimal_demand(
    p_a: f64,
    p_b: f64,
    beta: f64,
    rho: f64,
    x_a: *mut f64,
    x_b: *mut f64,
) -> ClStatus {
    guard(|| {
        if x_a.is_null() || x_b.is_null() {
            return Err(null("x_a/x_b"));
        }
        let d = optimal_demand(PricePair::new(p_a, p_b)?, DaParams::new(beta, rho)?).demand;
        put(x_a, d.a(), "x_a")?;
        put(x_b, d.b(), "x_b")
    })
}

/// Fills `r_a` and `r_b` with `n` random budgets drawn from `seed`.
///
/// # Safety
/// `r_a` and `r_b` must have room for `n` values.
#[no_mangle]
pub unsafe extern "C" fn cl_generate_budgets(seed: u64, n: usize, r_a: *mut f64, r_b: *mut f64) -> ClStatus {
    guard(|| {
        if r_a.is_null() || r_b.is_null() {
            return Err(null("r_a/r_b"));
        }
        let s = generate_budgets(seed, n)?;
        for (k, r) in s.rounds.iter().enumerate() {
            r_a.add(k).write(r.a());
            r_b.add(k).write(r.b());
        }
        Ok(())
    })
}

/// Optimal choices of `(beta, rho)` on the budgets `(r_a[k], r_b[k])`.
///
/// # Safety
/// `subject_id` must be a NUL-terminated string; the arrays must hold `n`
/// values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cl_simulate(
    subject_id: *const c_char,
    beta: f64,
    rho: f64,
    r_a: *const f64,
    r_b: *const f64,
    n: usize,
    out: *mut *mut ClDataset,
) -> ClStatus {
    guard(|| {
        let id = text(subject_id, "subject_id")?;
        let (ra, rb) = (slice(r_a, n, "r_a")?, slice(r_b, n, "r_b")?);
        let schedule = ra
            .iter()
            .zip(rb)
            .map(|(&a, &b)| ReturnPair::new(a, b))
            .collect::<choicelab::Result<Vec<_>>>()?;
        let s = simulate_subject(id, DaParams::new(beta, rho)?, &schedule)?;
        put(out, Box::into_raw(Box::new(ClDataset(s.dataset))), "out")
    })
}
