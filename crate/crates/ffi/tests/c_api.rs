use std::ffi::{CStr, CString};
use std::ptr;

use kmn_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(kmn_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn gaussian(centers: &[f64], sigmas: &[f64], weights: &[f64]) -> (KmnStatus, *mut KmnMixture) {
    let mut m = ptr::null_mut();
    let status = unsafe {
        kmn_mixture_new_gaussian(
            centers.as_ptr(),
            centers.len(),
            sigmas.as_ptr(),
            sigmas.len(),
            weights.as_ptr(),
            weights.len(),
            &mut m,
        )
    };
    (status, m)
}

#[test]
fn gaussian_mixture_density() {
    let (status, m) = gaussian(&[0.0, 1.0], &[1.0], &[1.0, 3.0]);
    assert_eq!(status, KmnStatus::Ok);
    let mut d = 0.0;
    assert_eq!(unsafe { kmn_mixture_density(m, 0.5, &mut d) }, KmnStatus::Ok);
    let phi = (-0.125f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
    assert!((d - phi).abs() < 1e-14);
    let mut ld = 0.0;
    assert_eq!(unsafe { kmn_mixture_log_density(m, 0.5, &mut ld) }, KmnStatus::Ok);
    assert!((ld - phi.ln()).abs() < 1e-12);
    unsafe { kmn_mixture_free(m) };
}

#[test]
fn sampling_is_seeded() {
    let (_, m) = gaussian(&[-1.0, 2.0], &[0.5, 1.0], &[1.0, 1.0, 1.0, 1.0]);
    let mut a = vec![0.0; 64];
    let mut b = vec![0.0; 64];
    unsafe {
        assert_eq!(kmn_mixture_sample(m, 3, 64, a.as_mut_ptr()), KmnStatus::Ok);
        assert_eq!(kmn_mixture_sample(m, 3, 64, b.as_mut_ptr()), KmnStatus::Ok);
        assert_eq!(kmn_mixture_sample(m, 3, 0, ptr::null_mut()), KmnStatus::Ok);
        kmn_mixture_free(m);
    }
    assert_eq!(a, b);
}

#[test]
fn von_mises_lives_on_the_circle() {
    let mut m = ptr::null_mut();
    let centers = [0.0];
    let kappas = [2.0];
    let weights = [1.0];
    let status = unsafe {
        kmn_mixture_new_von_mises(
            centers.as_ptr(),
            1,
            kappas.as_ptr(),
            1,
            weights.as_ptr(),
            1,
            &mut m,
        )
    };
    assert_eq!(status, KmnStatus::Ok);
    let (mut a, mut b) = (0.0, 0.0);
    unsafe {
        kmn_mixture_density(m, 0.3, &mut a);
        kmn_mixture_density(m, 0.3 + 2.0 * std::f64::consts::PI, &mut b);
        kmn_mixture_free(m);
    }
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn errors_set_status_and_message() {
    let (status, m) = gaussian(&[0.0], &[-1.0], &[1.0]);
    assert_eq!(status, KmnStatus::InvalidArgument);
    assert!(m.is_null());
    assert!(last_error().contains("positive and finite"), "{}", last_error());

    let (status, _) = gaussian(&[0.0, 1.0], &[1.0], &[1.0]);
    assert_eq!(status, KmnStatus::InvalidArgument);

    let (_, ok) = gaussian(&[0.0], &[1.0], &[1.0]);
    assert!(last_error().is_empty());
    assert_eq!(
        unsafe { kmn_mixture_density(ok, 0.0, ptr::null_mut()) },
        KmnStatus::NullPointer
    );
    unsafe { kmn_mixture_free(ok) };

    let mut model = ptr::null_mut();
    let path = CString::new("/nonexistent/checkpoint.json").unwrap();
    assert_eq!(unsafe { kmn_model_load(path.as_ptr(), &mut model) }, KmnStatus::Io);
    assert!(last_error().contains("/nonexistent/checkpoint.json"));
    assert_eq!(
        unsafe { kmn_model_load(ptr::null(), &mut model) },
        KmnStatus::NullPointer
    );
}

#[test]
fn free_accepts_null() {
    unsafe {
        kmn_model_free(ptr::null_mut());
        kmn_mixture_free(ptr::null_mut());
    }
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(kmn_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/kmn.h");
    for name in [
        "kmn_last_error_message",
        "kmn_version",
        "kmn_model_load",
        "kmn_model_free",
        "kmn_model_window",
        "kmn_model_condition",
        "kmn_mixture_new_gaussian",
        "kmn_mixture_new_von_mises",
        "kmn_mixture_free",
        "kmn_mixture_density",
        "kmn_mixture_log_density",
        "kmn_mixture_sample",
        "KMN_STATUS_OK = 0",
        "typedef struct KmnModel KmnModel",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}

#[test]
fn checkpoint_round_trip_through_the_c_api() {
    use kmn::filtering::{generate_dataset, train_filter, ExperimentParams, HeadKind, OscillatorParams, TrainConfig};

    let params = ExperimentParams::Oscillator(OscillatorParams {
        duration: 0.5,
        ..Default::default()
    });
    let ds = generate_dataset(&params, 8, 2, 11).unwrap();
    let config = TrainConfig {
        window: 16,
        hidden: vec![8],
        epochs: 1,
        eval_every: 10,
        ..TrainConfig::oscillator(HeadKind::Kmn)
    };
    let outcome = train_filter(&config, &ds.train, &ds.valid).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.json");
    kmn::checkpoint::save_model(&path, &outcome.model).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { kmn_model_load(cpath.as_ptr(), &mut model) }, KmnStatus::Ok);
    let mut window = 0usize;
    assert_eq!(unsafe { kmn_model_window(model, &mut window) }, KmnStatus::Ok);
    assert_eq!(window, 16);

    let obs = &ds.valid[0].observations[..16];
    let mut mix = ptr::null_mut();
    assert_eq!(
        unsafe { kmn_model_condition(model, obs.as_ptr(), obs.len(), &mut mix) },
        KmnStatus::Ok
    );
    let expected = outcome.model.conditional_density(obs).unwrap().density(0.1);
    let mut d = 0.0;
    unsafe { kmn_mixture_density(mix, 0.1, &mut d) };
    assert_eq!(d, expected);

    let mut short = ptr::null_mut();
    assert_eq!(
        unsafe { kmn_model_condition(model, obs.as_ptr(), 3, &mut short) },
        KmnStatus::InvalidArgument
    );
    unsafe {
        kmn_mixture_free(mix);
        kmn_model_free(model);
    }
}
