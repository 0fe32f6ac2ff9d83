use std::ffi::{CStr, CString};
use std::ptr;

use qpma_ffi::*;

/// Small deterministic data set: y = 2 x1 + sin(6 x2) + d plus a wobble.
fn toy(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut y = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(3 * n);
    for i in 0..n {
        let a = ((i * 37) % n) as f64 / n as f64;
        let b = ((i * 11 + 5) % n) as f64 / n as f64;
        let d = (i % 3) as f64;
        y.push(2.0 * a + (6.0 * b).sin() + d + 0.3 * ((i * 7919) as f64).sin());
        x.extend_from_slice(&[a, b, d]);
    }
    (y, x)
}

fn last_error() -> Option<String> {
    let p = qpma_last_error();
    if p.is_null() {
        return None;
    }
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { qpma_string_free(p) };
    Some(s)
}

#[test]
fn fit_predict_and_round_trip() {
    let (y, x) = toy(40);
    let mut model = ptr::null_mut();
    let status = unsafe { qpma_fit(y.as_ptr(), x.as_ptr(), 40, 2, 1, &mut model) };
    assert_eq!(status, QpmaStatus::Ok, "{:?}", last_error());
    assert!(last_error().is_none());
    unsafe {
        assert_eq!(qpma_model_num_candidates(model), 2);
        assert_eq!(qpma_model_num_covariates(model), 3);

        let mut w = [0.0; 2];
        assert_eq!(qpma_model_weights(model, w.as_mut_ptr(), 2), QpmaStatus::Ok);
        assert!((w[0] + w[1] - 1.0).abs() < 1e-10 && w.iter().all(|&v| v >= 0.0));

        let taus = [0.25, 0.5, 0.75];
        let mut pred = [0.0; 6];
        let status = qpma_model_predict(model, x.as_ptr(), 2, 3, taus.as_ptr(), 3, pred.as_mut_ptr());
        assert_eq!(status, QpmaStatus::Ok);
        assert!(pred.iter().all(|v| v.is_finite()));

        let json = qpma_model_to_json(model);
        assert!(!json.is_null());
        let mut copy = ptr::null_mut();
        assert_eq!(qpma_model_from_json(json, &mut copy), QpmaStatus::Ok);
        qpma_string_free(json);
        let mut again = [0.0; 6];
        qpma_model_predict(copy, x.as_ptr(), 2, 3, taus.as_ptr(), 3, again.as_mut_ptr());
        assert_eq!(pred, again);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let text = qpma_model_to_json(copy);
        std::fs::write(&path, CStr::from_ptr(text).to_bytes()).unwrap();
        qpma_string_free(text);
        let cpath = CString::new(path.to_str().unwrap()).unwrap();
        let mut loaded = ptr::null_mut();
        assert_eq!(qpma_model_load(cpath.as_ptr(), &mut loaded), QpmaStatus::Ok);
        let mut third = [0.0; 6];
        qpma_model_predict(loaded, x.as_ptr(), 2, 3, taus.as_ptr(), 3, third.as_mut_ptr());
        assert_eq!(pred, third);

        qpma_model_free(model);
        qpma_model_free(copy);
        qpma_model_free(loaded);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(qpma_model_load(ptr::null(), &mut model), QpmaStatus::NullPointer);
        assert!(last_error().unwrap().contains("path"));

        let missing = CString::new("/nonexistent/model.json").unwrap();
        assert_eq!(qpma_model_load(missing.as_ptr(), &mut model), QpmaStatus::ModelFileError);
        assert!(model.is_null());

        let junk = CString::new("{\"format\": 1}").unwrap();
        assert_eq!(qpma_model_from_json(junk.as_ptr(), &mut model), QpmaStatus::ModelFileError);

        // constant continuous column
        let y = [1.0, 2.0, 3.0, 4.0];
        let x = [0.5; 4];
        assert_eq!(qpma_fit(y.as_ptr(), x.as_ptr(), 4, 1, 0, &mut model), QpmaStatus::DataError);
        assert!(last_error().is_some());

        let (y, x) = toy(30);
        assert_eq!(qpma_fit(y.as_ptr(), x.as_ptr(), 30, 2, 1, &mut model), QpmaStatus::Ok);
        let mut out = [0.0; 2];
        let bad_tau = [1.5];
        assert_eq!(
            qpma_model_predict(model, x.as_ptr(), 1, 3, bad_tau.as_ptr(), 1, out.as_mut_ptr()),
            QpmaStatus::InvalidArgument
        );
        let tau = [0.5];
        assert_eq!(
            qpma_model_predict(model, x.as_ptr(), 1, 2, tau.as_ptr(), 1, out.as_mut_ptr()),
            QpmaStatus::InvalidArgument
        );
        assert_eq!(qpma_model_weights(model, out.as_mut_ptr(), 1), QpmaStatus::InvalidArgument);
        assert_eq!(qpma_model_num_candidates(ptr::null()), 0);
        qpma_model_free(model);
        qpma_model_free(ptr::null_mut());
        qpma_string_free(ptr::null_mut());
        assert_eq!(CStr::from_ptr(qpma_version()).to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
