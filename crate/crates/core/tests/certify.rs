mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use rfd_core::certify::*;
use rfd_core::firlin::{ClosedLoopMap, FirLayout, TapConvention, TapRange};
use rfd_core::penalties::{GroupStructure, PenaltySpec};
use rfd_core::plantmaps::{ProblemBuilder, Setting};

fn random_map(seed: u64, orthogonal: bool) -> (ClosedLoopMap, Vec<Vec<usize>>) {
    let mut r = rng(seed);
    let input = FirLayout::new(5, 2, TapRange::new(0, 1));
    let output = FirLayout::new(20, 1, TapRange::new(0, 1));
    let mut m = random_mat(&mut r, 20, 10);
    if orthogonal {
        m = m.qr().q();
        for j in 0..10 {
            let s = 0.5 + (j / 2) as f64;
            m.column_mut(j).scale_mut(s);
        }
    }
    let groups = GroupStructure::actuator(&input).atoms;
    (
        ClosedLoopMap::from_matrix(m, input, output).unwrap(),
        groups,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gamma_never_exceeds_exact_alpha(seed in any::<u64>(), mask in 1u32..32) {
        let (l, groups) = random_map(seed, false);
        let m: Vec<usize> = (0..5).filter(|&i| mask >> i & 1 == 1).collect();
        let gamma = gamma_lower(&l, &groups, &m, 15).unwrap();
        let alpha = alpha_exact_small_t(&l, &groups, &m, 0.0).unwrap();
        prop_assert!(gamma <= alpha + 1e-12);
    }

    #[test]
    fn gamma_equals_alpha_for_orthogonal_groups(seed in any::<u64>(), mask in 1u32..32) {
        let (l, groups) = random_map(seed, true);
        let m: Vec<usize> = (0..5).filter(|&i| mask >> i & 1 == 1).collect();
        let gamma = gamma_lower(&l, &groups, &m, 15).unwrap();
        let alpha = alpha_exact_small_t(&l, &groups, &m, 0.0).unwrap();
        prop_assert!((gamma - alpha).abs() < 1e-10);
        let beta = beta_upper(&l, &groups, &m).unwrap();
        prop_assert!(beta < 1e-10);
    }
}

#[test]
fn gamma_from_correlated_scalar_groups() {
    let smin = [1.0; 3];
    let smax = vec![
        vec![0.0, 0.3, 0.3],
        vec![0.3, 0.0, 0.3],
        vec![0.3, 0.3, 0.0],
    ];
    assert!((gamma_from_parts(&smin, &smax) - 0.4).abs() < 1e-15);
    assert_eq!(
        gamma_from_parts(&[2.0, 3.0], &[vec![0.0; 2], vec![0.0; 2]]),
        2.0
    );
}

#[test]
fn chain_mixing_time_is_five() {
    let b = chain_builder();
    for m in [vec![0, 4], vec![0, 4, 8]] {
        let tau = mixing_time(
            |t| Ok(b.assemble(t, t)?.l),
            |lay| Ok(GroupStructure::actuator(lay).atoms),
            &m,
            1e-9,
            50,
        )
        .unwrap();
        assert_eq!(tau.tau, 5);
        assert!(!tau.saturated);
    }
}

#[test]
fn nu_identity_and_monotone_constants_on_chain() {
    let b = chain_builder();
    let (m, u) = oracle_target(&b, 2);
    assert_eq!(m, vec![0, 4]);
    let mut prev: Option<RecoveryCertificate> = None;
    for t in 1..=5 {
        let c = certificate(&b, &u, &m, t, 1, TailSign::Subtract);
        let alpha = c.alpha_exact.expect("exact alpha below the mixing time");
        if alpha > 0.0 {
            assert_eq!(c.nu, c.beta_upper / alpha);
        } else {
            assert_eq!((c.beta_upper, c.nu), (0.0, 0.0));
        }
        assert!(c.nu_upper >= c.nu);
        assert!(c.gamma <= alpha + 1e-12);
        if let Some(p) = &prev {
            assert!(alpha >= p.alpha_exact.unwrap() - 1e-12, "alpha at t={t}");
            assert!(c.beta_upper >= p.beta_upper - 1e-12, "beta at t={t}");
        }
        prev = Some(c);
    }
}

#[test]
fn degenerate_horizon_still_certifies() {
    let b = chain_builder();
    let (m, u) = oracle_target(&b, 2);
    let c = certificate(&b, &u, &m, 1, 1, TailSign::Subtract);
    assert!(c.snr_threshold.is_infinite());
    assert!(!c.verdicts.theorem3);
    assert_eq!(c.m_star, m);
    assert!(serde_json::to_string(&c).is_ok());
}

#[test]
fn explicit_architecture_differs_from_oracle() {
    let b = chain_builder();
    let (_, u) = oracle_target(&b, 2);
    let c = certificate(&b, &u, &[1, 0], 4, 1, TailSign::Subtract);
    assert_eq!(c.m_star, vec![0, 1]);
    assert_eq!(c.group_norms.len(), 2);
    let opts = CertifyOptions::default();
    let bad = build_certificate(&b, &PenaltySpec::Actuator, &u, &[10], 4, 1, 0.0, &opts);
    assert!(bad.is_err());
    let empty = build_certificate(&b, &PenaltySpec::Actuator, &u, &[], 4, 1, 0.0, &opts);
    assert!(empty.is_err());
}

#[test]
fn lambda_thresholds_formulae() {
    let th = lambda_thresholds(2.0, 0.5, 0.1, 0.2, 0.0, 1.0, &[1.0, 3.0], None);
    assert!((th.lambda_sufficient - (0.1 + 0.4)).abs() < 1e-15);
    assert_eq!(th.per_group_upper, vec![1.9, 5.9]);
    assert_eq!(th.interval, Some((th.lambda_sufficient, 1.9)));
    assert!((th.error_bound - 0.3).abs() < 1e-15);
    let none = lambda_thresholds(2.0, 1.0, 0.1, 0.2, 0.0, 1.0, &[1.0], Some(1.0));
    assert!(none.lambda_sufficient.is_infinite() && none.interval.is_none());
    assert!(theorem3_check(&[3.0, 4.0], 1.0, 0.5, 0.0));
    assert!(!theorem3_check(&[3.0, 4.0], 1.0, 0.5, 0.1));
    assert!(!theorem3_check(&[1.5], 1.0, 0.5, 0.0));
    assert_eq!(snr(&[0.0, 2.0], 0.0), vec![0.0, f64::INFINITY]);
}

#[test]
fn certificate_implies_recovery_on_banded_systems() {
    let mut r = rng(11);
    let mut certified = 0;
    for _ in 0..25 {
        let n = r.gen_range(5..=7);
        let b = ProblemBuilder::new(
            banded_plant(&mut r, n),
            Setting::StateFeedback,
            TapConvention::ZeroBased,
        );
        let (m, u) = oracle_target(&b, 2);
        for t in [2, 3, 4] {
            let c = certificate(&b, &u, &m, t, 1, TailSign::Add);
            if !c.verdicts.theorem2_support {
                continue;
            }
            certified += 1;
            let (sup, kkt) = rfd_support(&b, t, 1, c.lambda_eval);
            assert!(kkt < 1e-8);
            assert!(sup.iter().all(|g| m.contains(g)), "{sup:?} outside {m:?}");
            if c.verdicts.theorem2_per_group {
                assert_eq!(sup, m);
            }
            let err = c.observed_error.unwrap();
            assert!(
                err <= c.error_bound * (1.0 + 1e-6),
                "{err} > {}",
                c.error_bound
            );
        }
    }
    assert!(certified >= 20, "only {certified} certified cases");
}
