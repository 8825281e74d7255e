mod common;

use common::{random_fir, random_mat, rng};
use proptest::prelude::*;
use rand::Rng;
use rfd_core::firlin::*;
use rfd_core::linalg::{Mat, Vector};

fn conventions() -> impl Strategy<Value = TapConvention> {
    prop_oneof![
        Just(TapConvention::ZeroBased),
        Just(TapConvention::OneBased),
        Just(TapConvention::Inclusive),
    ]
}

fn random_vec(r: &mut impl Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| r.gen_range(-1.0..1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjoint_identity(seed in any::<u64>(), conv in conventions(), t in 1usize..5, dv in 0usize..3,
                        two_sided in any::<bool>()) {
        let v = (t - dv.min(t - 1)).max(1);
        let mut r = rng(seed);
        let left = random_fir(&mut r, 3, 2, 4);
        let right = if two_sided { random_fir(&mut r, 2, 3, 3) } else { FirMatrix::identity(2) };
        let map = materialize_map(&left, &right, t, v, conv).unwrap();
        let x = random_vec(&mut r, map.ncols());
        let y = random_vec(&mut r, map.nrows());
        let lhs = map.apply(&x).dot(&y);
        let rhs = x.dot(&map.adjoint(&y));
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn apply_matches_truncated_convolution(seed in any::<u64>(), t in 1usize..5, v in 1usize..5) {
        prop_assume!(v <= t);
        let mut r = rng(seed);
        let left = random_fir(&mut r, 2, 3, 3);
        let right = random_fir(&mut r, 2, 2, 2);
        let map = materialize_map(&left, &right, t, v, TapConvention::ZeroBased).unwrap();
        let u = random_fir(&mut r, 3, 2, v);
        let direct = fir_convolve(&fir_convolve(&left, &u).unwrap(), &right).unwrap().truncate(t);
        let via_map = map.apply_fir(&u).unwrap();
        prop_assert!(direct.axpy(-1.0, &via_map).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn vectorize_round_trip(seed in any::<u64>(), rows in 1usize..4, cols in 1usize..4, n in 1usize..4) {
        let mut r = rng(seed);
        let layout = FirLayout::new(rows, cols, TapRange::new(0, n));
        let g = random_fir(&mut r, rows, cols, n);
        let x = layout.vectorize(&g).unwrap();
        prop_assert_eq!(layout.devectorize(&x).unwrap(), g);
        for c in 0..layout.dim() {
            let (k, i, j) = layout.position(c);
            prop_assert_eq!(layout.index(k, i, j), c);
        }
    }

    #[test]
    fn restriction_matches_zero_padding(seed in any::<u64>(), mask_bits in any::<u32>()) {
        let mut r = rng(seed);
        let left = random_fir(&mut r, 3, 2, 3);
        let map = materialize_map(&left, &FirMatrix::identity(2), 3, 2, TapConvention::ZeroBased).unwrap();
        let n = map.ncols();
        let coords: Vec<usize> = (0..n).filter(|c| mask_bits >> (c % 32) & 1 == 1).collect();
        let sub = map.restrict(&coords).unwrap();
        let z = random_vec(&mut r, coords.len());
        let mut x = Vector::zeros(n);
        for (p, &c) in coords.iter().enumerate() {
            x[c] = z[p];
        }
        prop_assert!((sub.apply(&z) - map.apply(&x)).amax() < 1e-12);
        let g = map.gram();
        let m = map.matrix();
        prop_assert!((g - m.transpose() * m).amax() < 1e-10);
    }
}

#[test]
fn kron_and_dense_forms_agree() {
    let mut r = rng(3);
    let left = random_fir(&mut r, 3, 2, 4);
    let kron = materialize_map(
        &left,
        &FirMatrix::identity(2),
        4,
        2,
        TapConvention::ZeroBased,
    )
    .unwrap();
    assert!(kron.kron_factor().is_some());
    let dense = ClosedLoopMap::from_matrix(
        kron.matrix().clone(),
        *kron.input_layout(),
        *kron.output_layout(),
    )
    .unwrap();
    let a: Vec<usize> = (0..4).collect();
    let b: Vec<usize> = (2..8).collect();
    assert!((kron.cross_gram(&a, &b) - dense.cross_gram(&a, &b)).amax() < 1e-12);
    let x = random_vec(&mut r, kron.ncols());
    assert!((kron.apply(&x) - dense.apply(&x)).amax() < 1e-12);
}

#[test]
fn order_beyond_horizon_is_rejected() {
    let left = FirMatrix::identity(2);
    assert!(materialize_map(&left, &left, 2, 3, TapConvention::ZeroBased).is_err());
    assert!(materialize_map(&left, &left, 0, 0, TapConvention::ZeroBased).is_err());
}

#[test]
fn tap_conventions() {
    assert_eq!(TapConvention::ZeroBased.input_taps(3), TapRange::new(0, 3));
    assert_eq!(TapConvention::OneBased.input_taps(3), TapRange::new(1, 3));
    assert_eq!(TapConvention::Inclusive.input_taps(3), TapRange::new(0, 4));
    assert_eq!(TapConvention::ZeroBased.output_taps(4).end(), 4);
}

#[test]
fn fir_basics() {
    let g = FirMatrix::scalar(&[3.0, 4.0]);
    assert_eq!(g.h2_norm(), 5.0);
    assert_eq!(g.window(1, 1).tap(0)[(0, 0)], 0.0);
    assert_eq!(g.window(1, 1).tap(1)[(0, 0)], 4.0);
    let nested = g.to_nested();
    assert_eq!(FirMatrix::from_nested(&nested).unwrap(), g);
    assert!(FirMatrix::new(vec![Mat::zeros(1, 1), Mat::zeros(2, 1)]).is_err());
}

fn random_bool(r: &mut impl Rng, n: usize, m: usize, p: f64) -> BoolMat {
    BoolMat::from_fn(n, m, |_, _| r.gen_bool(p))
}

#[test]
fn qi_holds_for_row_and_column_sparse_masks() {
    let mut r = rng(99);
    for k in 0..100 {
        let (na, ns) = (r.gen_range(2..6), r.gen_range(2..6));
        let keep = random_bool(&mut r, 1, if k % 2 == 0 { na } else { ns }, 0.5);
        let pattern = if k % 2 == 0 {
            BoolMat::from_fn(na, ns, |i, _| keep[(0, i)])
        } else {
            BoolMat::from_fn(na, ns, |_, j| keep[(0, j)])
        };
        let s = SparsityMask::constant(pattern);
        let depth = r.gen_range(1..5);
        let p22 = SparsityMask::new(
            (0..=depth)
                .map(|_| random_bool(&mut r, ns, na, 0.6))
                .collect(),
            random_bool(&mut r, ns, na, 0.6),
        )
        .unwrap();
        assert!(qi_check(&s, &p22, depth).unwrap(), "mask {k}");
    }
}

#[test]
fn qi_fails_for_decentralized_mask_on_coupled_plant() {
    let s = SparsityMask::constant(BoolMat::from_fn(2, 2, |i, j| i == j));
    let p22 = SparsityMask::constant(BoolMat::from_element(2, 2, true));
    assert!(!qi_check(&s, &p22, 2).unwrap());
    let diag = SparsityMask::constant(BoolMat::from_fn(2, 2, |i, j| i == j));
    assert!(qi_check(&s, &diag, 2).unwrap());
}

#[test]
fn mask_coordinates_and_union() {
    let layout = FirLayout::new(2, 2, TapRange::new(0, 2));
    let a = SparsityMask::new(
        vec![BoolMat::from_fn(2, 2, |i, j| i == j)],
        BoolMat::from_element(2, 2, false),
    )
    .unwrap();
    assert_eq!(
        a.coordinates(&layout).unwrap(),
        vec![layout.index(0, 0, 0), layout.index(0, 1, 1)]
    );
    let u = a.union(&SparsityMask::full(2, 2)).unwrap();
    assert_eq!(u.coordinates(&layout).unwrap().len(), 8);
    let g = random_fir(&mut rng(1), 2, 2, 2);
    let masked = apply_mask(&g, &a).unwrap();
    assert_eq!(masked.tap(0)[(0, 1)], 0.0);
    assert_eq!(masked.tap(1).amax(), 0.0);
    assert_eq!(
        bool_mul(
            &BoolMat::from_element(1, 2, true),
            &BoolMat::from_fn(2, 1, |i, _| i == 1)
        )[(0, 0)],
        true
    );
    let _ = random_mat(&mut rng(0), 1, 1);
}
