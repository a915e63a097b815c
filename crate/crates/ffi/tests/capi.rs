use std::ffi::{CStr, CString};
use std::ptr;

use choicelab_ffi::*;

fn last_error() -> String {
    let p = cl_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn crossing() -> *mut ClDataset {
    let id = CString::new("h1").unwrap();
    let (pa, pb) = ([0.25, 0.5], [0.5, 0.25]);
    let (xa, xb) = ([0.0, 2.0], [2.0, 0.0]);
    let mut ds = ptr::null_mut();
    let s = unsafe {
        cl_dataset_from_prices(id.as_ptr(), pa.as_ptr(), pb.as_ptr(), xa.as_ptr(), xb.as_ptr(), 2, 5.0, &mut ds)
    };
    assert_eq!(s, ClStatus::Ok);
    ds
}

#[test]
fn crossing_choices_have_half_efficiency() {
    let ds = crossing();
    unsafe {
        let mut n = 0;
        assert_eq!(cl_dataset_len(ds, &mut n), ClStatus::Ok);
        assert_eq!(n, 2);
        let mut e = 0.0;
        assert_eq!(cl_ccei(ds, &mut e), ClStatus::Ok);
        assert!((e - 0.5).abs() < 1e-12, "{e}");
        let mut d = ClDeut::default();
        assert_eq!(cl_deut(ds, &mut d), ClStatus::Ok);
        // Both positive holdings are 2 units at price 0.5: a zero-weight cycle.
        assert_eq!(d.min_cycle_mean, 0.0);
        assert_eq!(d.deut, 0.0);
        cl_dataset_free(ds);
    }
}

#[test]
fn simulated_eu_subject_is_consistent() {
    let (mut ra, mut rb) = ([0.0; 25], [0.0; 25]);
    unsafe {
        assert_eq!(cl_generate_budgets(7, 25, ra.as_mut_ptr(), rb.as_mut_ptr()), ClStatus::Ok);
        let id = CString::new("s").unwrap();
        let mut ds = ptr::null_mut();
        assert_eq!(cl_simulate(id.as_ptr(), 0.0, 0.6, ra.as_ptr(), rb.as_ptr(), 25, &mut ds), ClStatus::Ok);
        let (mut e, mut d, mut f) = (0.0, ClDeut::default(), usize::MAX);
        assert_eq!(cl_ccei(ds, &mut e), ClStatus::Ok);
        assert_eq!(cl_deut(ds, &mut d), ClStatus::Ok);
        assert_eq!(cl_fosd_count(ds, &mut f), ClStatus::Ok);
        assert_eq!((e, f), (1.0, 0));
        assert!(d.deut.abs() <= 1e-9);
        let mut fit = ClFit::default();
        assert_eq!(cl_recover_params(ds, &mut fit), ClStatus::Ok);
        assert!(fit.identified);
        assert!(fit.beta.abs() < 0.05 && (fit.rho - 0.6).abs() < 0.05, "{fit:?}");
        cl_dataset_free(ds);
    }
}

#[test]
fn demand_spends_the_budget() {
    let (mut a, mut b) = (0.0, 0.0);
    unsafe {
        assert_eq!(cl_optimal_demand(0.01, 0.02, 0.3, 0.5, &mut a, &mut b), ClStatus::Ok);
    }
    assert!((0.01 * a + 0.02 * b - 1.0).abs() < 1e-9);
    assert!(a > b);
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        assert_eq!(cl_ccei(ptr::null(), &mut 0.0), ClStatus::NullPointer);
        assert!(last_error().contains("ds"));

        let (mut a, mut b) = (0.0, 0.0);
        assert_eq!(cl_optimal_demand(0.01, 0.02, 0.3, -1.0, &mut a, &mut b), ClStatus::InvalidArgument);
        assert!(last_error().contains("rho"), "{}", last_error());

        // 70 tokens in total is outside the 5-point slack band.
        let id = CString::new("t").unwrap();
        let (r, t) = ([1.0], [40.0]);
        let tb = [30.0];
        let mut ds = ptr::null_mut();
        let s = cl_dataset_from_tokens(id.as_ptr(), r.as_ptr(), r.as_ptr(), t.as_ptr(), tb.as_ptr(), 1, 5.0, &mut ds);
        assert_eq!(s, ClStatus::Validation);
        assert!(ds.is_null());

        let path = CString::new("/nonexistent/choices.csv").unwrap();
        let mut list = ptr::null_mut();
        assert_ne!(cl_dataset_read_csv(path.as_ptr(), 5.0, &mut list), ClStatus::Ok);
        assert!(list.is_null());

        cl_dataset_free(ptr::null_mut());
        cl_dataset_list_free(ptr::null_mut());
    }
}

#[test]
fn reads_files_through_list_handles() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("c.csv");
    std::fs::write(&file, "subject_id,round,r_a,r_b,t_a,t_b\na,1,1.2,0.8,50,50\nb,1,1,1,60,40\nb,2,2,1,70,30\n").unwrap();
    let path = CString::new(file.to_str().unwrap()).unwrap();
    unsafe {
        let mut list = ptr::null_mut();
        assert_eq!(cl_dataset_read_csv(path.as_ptr(), 5.0, &mut list), ClStatus::Ok);
        let mut n = 0;
        assert_eq!(cl_dataset_list_len(list, &mut n), ClStatus::Ok);
        assert_eq!(n, 2);
        let mut ds = ptr::null_mut();
        assert_eq!(cl_dataset_list_get(list, 1, &mut ds), ClStatus::Ok);
        cl_dataset_list_free(list);
        let mut rounds = 0;
        assert_eq!(cl_dataset_len(ds, &mut rounds), ClStatus::Ok);
        assert_eq!(rounds, 2);
        cl_dataset_free(ds);
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(cl_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_symbol() {
    let h = include_str!("../include/choicelab.h");
    for sym in [
        "cl_version", "cl_last_error_message", "cl_dataset_from_tokens", "cl_dataset_from_prices",
        "cl_dataset_read_csv", "cl_dataset_list_len", "cl_dataset_list_get", "cl_dataset_list_free",
        "cl_dataset_free", "cl_dataset_len", "cl_dataset_rescaled_count", "cl_ccei", "cl_deut",
        "cl_fosd_count", "cl_recover_params", "cl_optimal_demand", "cl_generate_budgets", "cl_simulate",
        "typedef struct ClDataset ClDataset", "CL_STATUS_OK = 0",
    ] {
        assert!(h.contains(sym), "missing {sym}");
    }
}
