mod common;

use common::rng;
use proptest::prelude::*;
use rand::Rng;
use rfd_core::firlin::{BoolMat, FirLayout, TapRange};
use rfd_core::linalg::Vector;
use rfd_core::penalties::*;
use rfd_core::RfdError;

fn layout() -> FirLayout {
    FirLayout::new(3, 4, TapRange::new(0, 3))
}

fn small_layout() -> FirLayout {
    FirLayout::new(2, 2, TapRange::new(0, 2))
}

fn chain_adjacency(n: usize) -> Vec<Vec<bool>> {
    (0..n)
        .map(|i| (0..n).map(|j| i.abs_diff(j) <= 1).collect())
        .collect()
}

fn comm_structure() -> GroupStructure {
    PenaltySpec::Comm {
        adjacency: chain_adjacency(4),
        links: vec![[0, 3], [0, 2]],
        bidirectional: true,
    }
    .instantiate(&FirLayout::new(4, 4, TapRange::new(0, 3)))
    .unwrap()
}

fn random_in_domain(seed: u64, g: &GroupStructure) -> Vector {
    let mut r = rng(seed);
    let dom = g.domain();
    Vector::from_iterator(
        dom.len(),
        dom.iter()
            .map(|&d| if d { r.gen_range(-1.0..1.0) } else { 0.0 }),
    )
}

fn structures() -> Vec<GroupStructure> {
    vec![
        GroupStructure::actuator(&layout()),
        GroupStructure::sensor(&layout()),
        build_actuator_sensor_atoms(&small_layout(), 2, 2).unwrap(),
        comm_structure(),
    ]
}

/// Dual of a latent norm: `max_A k_A ||y_A||` over atoms, `+∞` off the free set.
fn latent_dual(y: &Vector, g: &GroupStructure) -> f64 {
    if g.free.iter().any(|&c| y[c].abs() > 1e-14) {
        return f64::INFINITY;
    }
    g.atoms
        .iter()
        .zip(&g.weights)
        .map(|(a, &k)| k * a.iter().map(|&c| y[c] * y[c]).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

fn golden(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    while (b - a).abs() > 1e-13 * (1.0 + a.abs() + b.abs()) {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - r * (b - a);
        d = a + r * (b - a);
    }
    0.5 * (a + b)
}

/// Root of a nondecreasing function on `[a, b]` by bisection.
fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    if f(a) >= 0.0 {
        return a;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if f(m) < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gauge_axioms(seed in any::<u64>(), c in 0.01f64..10.0, which in 0usize..4) {
        let g = &structures()[which];
        let x = random_in_domain(seed, g);
        let y = random_in_domain(seed.wrapping_add(1), g);
        let nx = eval_norm_vec(&x, g);
        let ny = eval_norm_vec(&y, g);
        let tol = 1e-6 * (1.0 + nx + ny);
        prop_assert!(nx >= 0.0);
        prop_assert_eq!(eval_norm_vec(&Vector::zeros(x.len()), g), 0.0);
        prop_assert!((eval_norm_vec(&(&x * c), g) - c * nx).abs() <= tol * c.max(1.0));
        prop_assert!((eval_norm_vec(&(-&x), g) - nx).abs() <= tol);
        prop_assert!(eval_norm_vec(&(&x + &y), g) <= nx + ny + tol);
    }

    #[test]
    fn duality_inequality(seed in any::<u64>(), which in 0usize..3) {
        let g = &structures()[which];
        for k in 0..25u64 {
            let x = random_in_domain(seed.wrapping_add(2 * k), g);
            let y = random_in_domain(seed.wrapping_add(2 * k + 1), g);
            let bound = eval_norm_vec(&x, g) * latent_dual(&y, g);
            prop_assert!(x.dot(&y).abs() <= bound * (1.0 + 1e-6) + 1e-12);
        }
    }

    #[test]
    fn prox_matches_scalar_search(seed in any::<u64>(), tau in 0.01f64..3.0, sensor in any::<bool>()) {
        let lay = layout();
        let g = if sensor { GroupStructure::sensor(&lay) } else { GroupStructure::actuator(&lay) };
        let x = random_in_domain(seed, &g);
        let p = lay.vectorize(&prox(&lay.devectorize(&x).unwrap(), &g, tau).unwrap()).unwrap();
        for (a, &k) in g.atoms.iter().zip(&g.weights) {
            let n = a.iter().map(|&c| x[c] * x[c]).sum::<f64>().sqrt();
            let r = bisect(|r| r - n + tau / k, 0.0, n);
            for &c in a {
                let expect = if n > 0.0 { x[c] * r / n } else { 0.0 };
                prop_assert!((p[c] - expect).abs() < 1e-8, "coord {}: {} vs {}", c, p[c], expect);
            }
        }
    }

    #[test]
    fn prox_is_minimizer(seed in any::<u64>(), tau in 0.01f64..3.0) {
        let lay = layout();
        let g = GroupStructure::actuator(&lay);
        let x = random_in_domain(seed, &g);
        let p = lay.vectorize(&prox(&lay.devectorize(&x).unwrap(), &g, tau).unwrap()).unwrap();
        let obj = |z: &Vector| 0.5 * (z - &x).norm_squared() + tau * eval_norm_vec(z, &g);
        let base = obj(&p);
        let mut r = rng(seed ^ 0x5a5a);
        for _ in 0..50 {
            let d = Vector::from_fn(x.len(), |_, _| r.gen_range(-1.0..1.0));
            let step = r.gen_range(1e-4..0.5);
            prop_assert!(obj(&(&p + &d * step)) >= base - 1e-12);
        }
    }

    #[test]
    fn latent_decomposition_matches_scalar_search(
        x0 in -2.0f64..2.0, x1 in -2.0f64..2.0, x2 in -2.0f64..2.0,
        k0 in 0.3f64..2.0, k1 in 0.3f64..2.0,
    ) {
        let lay = FirLayout::new(1, 3, TapRange::new(0, 1));
        let g = GroupStructure {
            kind: PenaltyKind::Comm,
            layout: lay,
            atoms: vec![vec![0, 1], vec![1, 2]],
            weights: vec![k0, k1],
            labels: vec![AtomLabel::Link(0), AtomLabel::Link(1)],
            free: vec![],
            theta: 0.0,
            components: vec![],
        };
        let x = Vector::from_vec(vec![x0, x1, x2]);
        let f = |s: f64| (x0 * x0 + s * s).sqrt() / k0 + ((x1 - s).powi(2) + x2 * x2).sqrt() / k1;
        let s = golden(f, -4.0, 4.0);
        let d = latent_decomposition(&x, &g);
        prop_assert!((d.value - f(s)).abs() < 1e-6 * (1.0 + f(s)), "{} vs {}", d.value, f(s));
        prop_assert!(d.lower_bound <= d.value + 1e-12);
        let rec = d.lifting.recombine(&d.lifted);
        prop_assert!((rec - &x).norm() < 1e-8);
        prop_assert!((d.lifting.penalty(&d.lifted) - d.value).abs() < 1e-12);
    }
}

#[test]
fn partition_norms_are_weighted_group_sums() {
    let lay = layout();
    let x = random_in_domain(3, &GroupStructure::actuator(&lay));
    let u = lay.devectorize(&x).unwrap();
    let rows: f64 = (0..lay.rows).map(|i| u.row_norm(i)).sum();
    let cols: f64 = (0..lay.cols).map(|j| u.col_norm(j)).sum();
    let act = GroupStructure::actuator(&lay);
    let sns = GroupStructure::sensor(&lay);
    assert!((eval_norm(&u, &act).unwrap() - rows).abs() < 1e-12);
    assert!((eval_norm(&u, &sns).unwrap() - cols).abs() < 1e-12);
    let dual = eval_dual_norm(&u, &act).unwrap();
    let expect = (0..lay.rows).map(|i| u.row_norm(i)).fold(0.0, f64::max);
    assert!((dual - expect).abs() < 1e-12);
    assert_eq!(decompose(&u, &act).unwrap().len(), lay.rows);
}

#[test]
fn dual_norm_outside_partitions_is_unsupported() {
    let g = build_actuator_sensor_atoms(&small_layout(), 1, 1).unwrap();
    let u = small_layout().devectorize(&Vector::zeros(8)).unwrap();
    assert!(matches!(
        eval_dual_norm(&u, &g),
        Err(RfdError::Unsupported(_))
    ));
}

#[test]
fn joint_penalties_combine_components() {
    let lay = layout();
    let act = GroupStructure::actuator(&lay);
    let sns = GroupStructure::sensor(&lay);
    let x = random_in_domain(11, &act);
    let (a, s) = (eval_norm_vec(&x, &act), eval_norm_vec(&x, &sns));
    let sum = GroupStructure::joint_sum(0.25, act.clone(), sns.clone()).unwrap();
    let max = GroupStructure::joint_max(0.25, act.clone(), sns.clone()).unwrap();
    assert!((eval_norm_vec(&x, &sum) - (0.75 * a + 0.25 * s)).abs() < 1e-12);
    assert!((eval_norm_vec(&x, &max) - (0.75 * a).max(0.25 * s)).abs() < 1e-12);
    assert_eq!(sum.group_count(), lay.rows + lay.cols);
    let flat = sum.flat_groups();
    assert!((flat[0].scale - 0.75).abs() < 1e-15);
    assert!((flat[lay.rows].scale - 0.25).abs() < 1e-15);
    assert!(GroupStructure::joint_sum(1.5, act.clone(), sns.clone()).is_err());
    assert!(matches!(lift(&sum), Err(RfdError::Unsupported(_))));
    let u = lay.devectorize(&x).unwrap();
    assert!(prox(&u, &sum, 1.0).is_err());
}

#[test]
fn lifting_recombine_and_spread_are_adjoint() {
    let g = build_actuator_sensor_atoms(&small_layout(), 2, 2).unwrap();
    let l = lift(&g).unwrap();
    let mut r = rng(5);
    let z = Vector::from_fn(l.dim(), |_, _| r.gen_range(-1.0..1.0));
    let x = Vector::from_fn(l.base_dim, |_, _| r.gen_range(-1.0..1.0));
    assert!((l.recombine(&z).dot(&x) - z.dot(&l.spread(&x))).abs() < 1e-12);
    let total: usize = l.groups.iter().map(|g| g.len()).sum();
    assert_eq!(total + l.free.len(), l.dim());
}

#[test]
fn latent_norm_is_at_most_any_partition_bound() {
    let lay = small_layout();
    let g = build_actuator_sensor_atoms(&lay, 2, 2).unwrap();
    let x = random_in_domain(8, &g);
    let full = x.norm() / g.weights.last().unwrap();
    let d = latent_decomposition(&x, &g);
    assert!(d.value <= full + 1e-9);
    assert!(d.value - d.lower_bound <= 1e-8 * d.value.max(1.0));
}

#[test]
fn actuator_sensor_atom_catalog() {
    assert_eq!(subsets_upto(4, 2).len(), 10);
    assert_eq!(subsets_upto(5, 5).len(), 31);
    assert_eq!(subsets_upto(3, 1), vec![vec![0], vec![1], vec![2]]);
    let g = build_actuator_sensor_atoms(&layout(), 2, 1).unwrap();
    assert_eq!(g.atoms.len(), 6 * 4);
    assert!((g.weights[0] - 1.1f64.powf(-0.5)).abs() < 1e-15);
    assert!(build_actuator_sensor_atoms(&layout(), 0, 1).is_err());
    assert!(matches!(
        build_actuator_sensor_atoms_capped(&layout(), 3, 4, 10),
        Err(RfdError::Cap {
            count: 105,
            cap: 10
        })
    ));
}

#[test]
fn comm_atoms_follow_graph_powers() {
    let gamma = BoolMat::from_fn(3, 3, |i, j| i.abs_diff(j) <= 1);
    let d = derive_comm_atoms(&gamma, &[(0, 2)], 3).unwrap();
    let m = &d.link_masks[0];
    assert!(!m.tap(0)[(2, 0)]);
    assert!(!m.tap(1)[(2, 0)]);
    assert!(m.tap(2)[(2, 0)]);
    assert!(!m.tap(3)[(2, 0)]);
    assert!(!m.tail()[(2, 0)]);
    assert!(d.base_mask.tap(3)[(2, 0)]);
    assert!(derive_comm_atoms(&gamma, &[(0, 1)], 3).is_err());
    assert!(derive_comm_atoms(&gamma, &[(0, 5)], 3).is_err());
    assert!(derive_comm_atoms(&BoolMat::from_element(3, 3, false), &[], 3).is_err());
    assert!(derive_comm_atoms(&gamma, &[], 0).is_err());
}

#[test]
fn comm_structure_frees_base_subspace() {
    let g = comm_structure();
    assert_eq!(g.atoms.len(), 2);
    let mut x = Vector::zeros(g.layout.dim());
    for &c in &g.free {
        x[c] = 1.0;
    }
    assert_eq!(eval_norm_vec(&x, &g), 0.0);
    let dom = g.domain();
    if let Some(c) = dom.iter().position(|&d| !d) {
        x[c] = 1.0;
        assert!(eval_norm_vec(&x, &g).is_infinite());
    }
}
