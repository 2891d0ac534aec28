use std::ffi::{CStr, CString};
use std::ptr;

use clab::losses::{self, LossConfig, Variant};
use clab::SimilarityMatrix;
use clab_ffi::*;

fn last_error() -> String {
    let p = clab_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn sample() -> Vec<f64> {
    vec![
        0.9, 0.2, -0.4, 0.1, //
        0.3, 0.8, 0.5, -0.7, //
        -0.2, 0.6, 0.95, 0.0, //
        0.4, -0.1, 0.25, 0.7,
    ]
}

fn config(variant: ClabVariant) -> ClabLossConfig {
    ClabLossConfig {
        variant,
        tau: 0.2,
        alpha: 0.5,
        lambda: -1.0,
    }
}

unsafe fn similarity(values: &[f64], n: usize) -> *mut ClabSimilarity {
    let mut s = ptr::null_mut();
    assert_eq!(
        clab_similarity_new(values.as_ptr(), n, &mut s),
        ClabStatus::Ok
    );
    s
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(clab_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn loss_matches_library_for_every_variant() {
    let values = sample();
    let lib_s = SimilarityMatrix::new(clab::Matrix::new(4, 4, values.clone()).unwrap()).unwrap();
    unsafe {
        let s = similarity(&values, 4);
        assert_eq!(clab_similarity_size(s), 4);
        for (cv, v) in [
            (ClabVariant::Contrastive, Variant::Contrastive),
            (ClabVariant::Simple, Variant::Simple),
            (ClabVariant::Hard, Variant::Hard),
            (ClabVariant::HardSimple, Variant::HardSimple),
            (ClabVariant::TripletLimit, Variant::TripletLimit),
            (ClabVariant::TaylorLimit, Variant::TaylorLimit),
        ] {
            let cfg = config(cv);
            let mut per = [0.0; 4];
            let mut mean = f64::NAN;
            assert_eq!(
                clab_loss(s, &cfg, per.as_mut_ptr(), &mut mean),
                ClabStatus::Ok
            );
            let expect =
                losses::evaluate(&lib_s, &LossConfig::new(v, 0.2).with_alpha(0.5)).unwrap();
            assert_eq!(per.to_vec(), expect.per_anchor, "{v:?}");
            assert_eq!(mean, expect.mean);

            let mut g = [0.0; 16];
            assert_eq!(clab_loss_gradients(s, &cfg, g.as_mut_ptr()), ClabStatus::Ok);
            let eg =
                losses::loss_gradients(&lib_s, &LossConfig::new(v, 0.2).with_alpha(0.5)).unwrap();
            assert_eq!(&g[..], eg.dl_ds.as_slice());
        }
        clab_similarity_free(s);
    }
}

#[test]
fn contrastive_mean_from_first_principles() {
    let values = sample();
    let tau = 0.2;
    let mut want = 0.0;
    for i in 0..4 {
        let row = &values[i * 4..i * 4 + 4];
        let z: f64 = row.iter().map(|s| (s / tau).exp()).sum();
        want += z.ln() - row[i] / tau;
    }
    want /= 4.0;
    unsafe {
        let s = similarity(&values, 4);
        let mut mean = 0.0;
        let cfg = config(ClabVariant::Contrastive);
        assert_eq!(
            clab_loss(s, &cfg, ptr::null_mut(), &mut mean),
            ClabStatus::Ok
        );
        assert!((mean - want).abs() < 1e-12);
        clab_similarity_free(s);
    }
}

#[test]
fn explicit_lambda_is_forwarded() {
    let values = sample();
    unsafe {
        let s = similarity(&values, 4);
        let mut cfg = config(ClabVariant::Simple);
        cfg.lambda = 2.0;
        let mut per = [0.0; 4];
        assert_eq!(
            clab_loss(s, &cfg, per.as_mut_ptr(), ptr::null_mut()),
            ClabStatus::Ok
        );
        let row0: f64 = -0.9 + 2.0 * (0.2 - 0.4 + 0.1);
        assert!((per[0] - row0).abs() < 1e-15);
        clab_similarity_free(s);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let values = sample();
    unsafe {
        let s = similarity(&values, 4);
        let mut cfg = config(ClabVariant::Contrastive);
        cfg.tau = 0.0;
        let mut mean = 0.0;
        assert_eq!(
            clab_loss(s, &cfg, ptr::null_mut(), &mut mean),
            ClabStatus::InvalidTemperature
        );
        assert!(last_error().contains("temperature"));

        cfg = config(ClabVariant::Hard);
        cfg.alpha = 1.5;
        assert_eq!(
            clab_loss(s, &cfg, ptr::null_mut(), &mut mean),
            ClabStatus::InvalidAlpha
        );

        assert_eq!(
            clab_loss(ptr::null(), &cfg, ptr::null_mut(), &mut mean),
            ClabStatus::NullPointer
        );
        assert!(last_error().contains("similarity"));
        clab_similarity_free(s);

        let bad = [1.0, 2.0, 0.0, 1.0];
        let mut h = ptr::null_mut();
        assert_eq!(
            clab_similarity_new(bad.as_ptr(), 2, &mut h),
            ClabStatus::ShapeMismatch
        );
        assert!(h.is_null());

        let mut out = 0.0;
        let x = [1.0, 0.0, 0.0, 2.0];
        assert_eq!(
            clab_uniformity(x.as_ptr(), 2, 2, 2.0, &mut out),
            ClabStatus::NotUnitNorm
        );
        clab_clear_last_error();
        assert!(clab_last_error_message().is_null());
    }
}

#[test]
fn penalty_distribution_of_equal_negatives_is_uniform() {
    let neg = [0.3; 8];
    let mut r = [0.0; 8];
    let mut h = 0.0;
    unsafe {
        assert_eq!(
            clab_penalty_distribution(neg.as_ptr(), 8, 0.1, r.as_mut_ptr(), &mut h),
            ClabStatus::Ok
        );
    }
    assert!(r.iter().all(|&v| (v - 0.125).abs() < 1e-15));
    assert!((h - 8f64.ln()).abs() < 1e-12);
}

#[test]
fn metrics_on_a_tiny_batch() {
    // Four points on the unit circle, two per class.
    let x = [1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0];
    let labels = [0u32, 0, 1, 1];
    let mut u = 0.0;
    let mut t = 0.0;
    let mut t_all = 0.0;
    let mut p = 0.0;
    unsafe {
        assert_eq!(
            clab_uniformity(x.as_ptr(), 4, 2, 2.0, &mut u),
            ClabStatus::Ok
        );
        assert_eq!(
            clab_tolerance(
                x.as_ptr(),
                labels.as_ptr(),
                4,
                2,
                ClabToleranceForm::SameClassMean,
                &mut t
            ),
            ClabStatus::Ok
        );
        assert_eq!(
            clab_tolerance(
                x.as_ptr(),
                labels.as_ptr(),
                4,
                2,
                ClabToleranceForm::MaskedMeanAllPairs,
                &mut t_all
            ),
            ClabStatus::Ok
        );
        assert_eq!(
            clab_knn_purity(x.as_ptr(), labels.as_ptr(), 4, 2, 1, &mut p),
            ClabStatus::Ok
        );
    }
    // Pairs: four at squared distance 2, two at 4.
    let want = ((4.0 * (-4.0f64).exp() + 2.0 * (-8.0f64).exp()) / 6.0).ln();
    assert!((u - want).abs() < 1e-12);
    assert_eq!(t, 0.0);
    assert_eq!(t_all, 0.0);
    assert!((0.0..=1.0).contains(&p));
}

#[test]
fn dump_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("e.clab").to_str().unwrap()).unwrap();
    let s = 0.5f64.sqrt();
    let x = [1.0, 0.0, s, s, 0.0, -1.0];
    let labels = [3u32, 1, 4];
    unsafe {
        assert_eq!(
            clab_dump_write(path.as_ptr(), x.as_ptr(), labels.as_ptr(), 3, 2),
            ClabStatus::Ok
        );
        let mut d = ptr::null_mut();
        assert_eq!(clab_dump_read(path.as_ptr(), &mut d), ClabStatus::Ok);
        assert_eq!((clab_dump_rows(d), clab_dump_cols(d)), (3, 2));
        assert_eq!(std::slice::from_raw_parts(clab_dump_embeddings(d), 6), &x);
        assert_eq!(std::slice::from_raw_parts(clab_dump_labels(d), 3), &labels);
        clab_dump_free(d);

        assert_eq!(
            clab_dump_write(path.as_ptr(), x.as_ptr(), ptr::null(), 3, 2),
            ClabStatus::Ok
        );
        let mut d = ptr::null_mut();
        assert_eq!(clab_dump_read(path.as_ptr(), &mut d), ClabStatus::Ok);
        assert!(clab_dump_labels(d).is_null());
        clab_dump_free(d);

        let missing = CString::new(dir.path().join("nope.clab").to_str().unwrap()).unwrap();
        let mut d = ptr::null_mut();
        assert_eq!(clab_dump_read(missing.as_ptr(), &mut d), ClabStatus::Io);
        assert!(d.is_null());

        let junk = dir.path().join("junk.clab");
        std::fs::write(&junk, b"NOPE1").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(
            clab_dump_read(junk.as_ptr(), &mut d),
            ClabStatus::CorruptHeader
        );
    }
}

#[test]
fn null_handles_are_tolerated() {
    unsafe {
        clab_similarity_free(ptr::null_mut());
        clab_dump_free(ptr::null_mut());
        assert_eq!(clab_similarity_size(ptr::null()), 0);
        assert_eq!(clab_dump_rows(ptr::null()), 0);
        assert!(clab_dump_embeddings(ptr::null()).is_null());
    }
}
