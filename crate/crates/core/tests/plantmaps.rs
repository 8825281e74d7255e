mod common;

use common::{banded_plant, random_fir, rng};
use rand::Rng;
use rfd_core::firlin::{FirMatrix, TapConvention};
use rfd_core::linalg::{spectral_radius, Mat, Vector};
use rfd_core::plantmaps::*;
use rfd_core::systems::{build_chain10, build_network11};

#[test]
fn chain_constants() {
    let p = build_chain10();
    assert!((p.spectral_radius() - 0.5).abs() < 1e-12);
    assert!((p.b1[(0, 0)] - 1.2).abs() < 1e-15);
    assert!((p.b1[(4, 4)] - 1.2).abs() < 1e-15);
    assert!((p.b1[(8, 8)] - 0.8).abs() < 1e-15);
    assert_eq!(p.b1[(1, 1)], 0.1);
    assert_eq!(p.a[(1, 0)], 0.5);
    assert_eq!(p.rho_u, 0.1);
    assert!(p.check_orthogonality().is_ok());
}

#[test]
fn network_constants_and_determinism() {
    let a = build_network11(5).unwrap();
    let b = build_network11(5).unwrap();
    let c = build_network11(6).unwrap();
    assert!((spectral_radius(&a.plant.a) - 0.999).abs() < 1e-12);
    assert_eq!(a.design_space_count(), 536_870_911);
    assert_eq!(a.plant, b.plant);
    assert_ne!(a.plant, c.plant);
    for i in 0..11 {
        for j in 0..11 {
            if !a.adjacency[(i, j)] {
                assert_eq!(a.plant.a[(i, j)], 0.0);
            }
        }
    }
}

#[test]
fn reference_horizon_rule() {
    assert_eq!(reference_horizon(0.5), 40);
    assert!(0.5f64.powi(40) < 1e-12 && 0.5f64.powi(39) >= 1e-12);
    assert_eq!(reference_horizon(0.0), 1);
    assert_eq!(reference_horizon(0.9999), 500);
    let b = ProblemBuilder::new(
        build_chain10(),
        Setting::StateFeedback,
        TapConvention::ZeroBased,
    );
    assert_eq!(b.reference_dims(), (80, 40));
}

#[test]
fn orthogonality_violations_are_rejected() {
    let p = build_chain10();
    let mut d12 = p.d12.clone();
    d12[(0, 0)] = 1.0;
    let r = GeneralizedPlant::new(
        p.a.clone(),
        p.b1.clone(),
        p.b2.clone(),
        p.c1.clone(),
        p.c2.clone(),
        d12,
        p.d21.clone(),
        p.rho_u,
        p.rho_w,
    );
    assert!(r.is_err());
    let r = GeneralizedPlant::new(
        p.a.clone(),
        p.b1.clone(),
        p.b2.clone(),
        p.c1.clone(),
        p.c2.clone(),
        p.d12.clone(),
        p.d21.clone(),
        0.2,
        p.rho_w,
    );
    assert!(r.is_err());
}

#[test]
fn unstable_plant_is_rejected() {
    let mut p = build_chain10();
    p.a *= 2.5;
    let b = ProblemBuilder::new(p, Setting::StateFeedback, TapConvention::ZeroBased);
    assert!(b.assemble(3, 1).is_err());
}

/// Closed loop under `u = −Ũ ∗ w` simulated step by step equals `Y − 𝔏(Ũ)`, and the
/// regulated-output energy equals the smooth cost.
#[test]
fn state_feedback_matches_simulation() {
    let mut r = rng(4);
    for _ in 0..5 {
        let plant = banded_plant(&mut r, 5);
        let (t, v) = (6, 3);
        let ap = build_state_feedback(&plant, t, v, TapConvention::ZeroBased).unwrap();
        let u = random_fir(&mut r, 5, 5, v);
        let cl = ap.y.axpy(-1.0, &ap.l.apply_fir(&u).unwrap()).unwrap();
        let n = 5;
        let mut energy = 0.0;
        for d in 0..n {
            let mut x = Vector::zeros(n);
            for k in 0..t {
                let w = if k == 0 {
                    Vector::from_fn(n, |i, _| (i == d) as u8 as f64)
                } else {
                    Vector::zeros(n)
                };
                let uk = if k < v {
                    -(u.tap(k).column(d).into_owned())
                } else {
                    Vector::zeros(n)
                };
                let col = cl.tap(k).column(d).into_owned();
                assert!((&x - col).amax() < 1e-12, "tap {k}");
                energy += x.norm_squared() + plant.rho_u * uk.norm_squared();
                x = &plant.a * &x + &plant.b1 * &w + &plant.b2 * &uk;
            }
        }
        let cost = ap.smooth_cost(&u, ap.rho).unwrap();
        assert!((cost - energy).abs() < 1e-10 * (1.0 + energy));
    }
}

#[test]
fn basic_lqr_matches_simulation() {
    let mut r = rng(8);
    let plant = banded_plant(&mut r, 4);
    let xi = Vector::from_fn(4, |_, _| r.gen_range(-1.0..1.0));
    let (t, v) = (5, 5);
    let ap = build_basic_lqr(
        &plant.a,
        &plant.b2,
        &Mat::identity(4, 4),
        &xi,
        0.3,
        t,
        v,
        TapConvention::ZeroBased,
    )
    .unwrap();
    let u = random_fir(&mut r, 4, 1, v);
    let cl = ap.y.axpy(-1.0, &ap.l.apply_fir(&u).unwrap()).unwrap();
    let mut x = xi.clone();
    for k in 0..t {
        assert!((&x - cl.tap(k).column(0)).amax() < 1e-12, "tap {k}");
        x = &plant.a * &x + &plant.b2 * u.tap(k).column(0);
    }
}

#[test]
fn output_feedback_assembly() {
    let net = build_network11(2).unwrap();
    let ap = build_output_feedback(&net.plant, 3, 2, TapConvention::ZeroBased).unwrap();
    let lay = ap.input_layout();
    assert_eq!((lay.rows, lay.cols, lay.taps.count), (11, 11, 2));
    assert!(ap.f.is_some());
    let zero = FirMatrix::zeros(11, 11, 2);
    let c0 = ap.smooth_cost(&zero, ap.rho).unwrap();
    assert!((c0 - ap.y.truncate(3).h2_norm().powi(2)).abs() < 1e-9 * c0);
}

#[test]
fn markov_and_inverse() {
    let mut r = rng(1);
    let a = Mat::from_fn(3, 3, |_, _| r.gen_range(-0.4..0.4));
    let b = Mat::from_fn(3, 2, |_, _| r.gen_range(-1.0..1.0));
    let c = Mat::from_fn(2, 3, |_, _| r.gen_range(-1.0..1.0));
    let h = markov_fir(&a, &b, &c, 4);
    assert_eq!(h.tap(0).amax(), 0.0);
    assert!((h.tap(3) - &c * &a * &a * &b).amax() < 1e-14);
    let mut g = random_fir(&mut r, 3, 3, 3);
    g = g
        .axpy(1.0, &FirMatrix::constant(Mat::identity(3, 3) * 3.0))
        .unwrap();
    let inv = fir_inverse(&g, 6).unwrap();
    let prod = rfd_core::firlin::fir_convolve(&g, &inv)
        .unwrap()
        .truncate(6);
    let id = FirMatrix::identity(3).truncate(6);
    let err = prod.axpy(-1.0, &id.window(0, 1).truncate(6)).unwrap();
    assert!(err.max_abs() < 1e-10);
    assert!(fir_inverse(&FirMatrix::zeros(2, 2, 1), 3).is_err());
}

#[test]
fn controller_round_trip() {
    let mut r = rng(6);
    let plant = banded_plant(&mut r, 4);
    for form in [YoulaForm::Output, YoulaForm::StateFeedback] {
        let u = random_fir(&mut r, 4, 4, 3).scale(0.3);
        let h = 8;
        let k = recover_controller(&u, &plant, h, form).unwrap();
        let back = youla_from_controller(&k, &plant, h, form).unwrap();
        let err = back.axpy(-1.0, &u.truncate(h)).unwrap();
        assert!(err.max_abs() < 1e-9, "{form:?}: {}", err.max_abs());
    }
}

#[test]
fn truncation_tail() {
    let b = ProblemBuilder::new(
        build_chain10(),
        Setting::StateFeedback,
        TapConvention::ZeroBased,
    );
    let mut r = rng(2);
    let u = random_fir(&mut r, 10, 10, 6);
    let (t, v) = (4, 2);
    let l_full = b.assemble(t, t).unwrap().l;
    let (uv, tail) = truncate_and_tail(&u, &l_full, t, v, TapConvention::ZeroBased).unwrap();
    assert_eq!(uv.len(), 2);
    let lv = b.assemble(t, v).unwrap().l;
    let whole = l_full.apply_fir(&u.truncate(t)).unwrap();
    let parts = lv.apply_fir(&uv).unwrap().axpy(1.0, &tail).unwrap();
    assert!(whole.axpy(-1.0, &parts).unwrap().max_abs() < 1e-12);
    assert!(truncate_and_tail(&u, &lv, t, v, TapConvention::ZeroBased).is_err());
}
