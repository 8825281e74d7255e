#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfd_core::certify::{build_certificate, CertifyOptions, RecoveryCertificate, TailSign};
use rfd_core::firlin::{FirMatrix, TapConvention};
use rfd_core::linalg::Mat;
use rfd_core::penalties::{GroupStructure, PenaltySpec};
use rfd_core::plantmaps::{GeneralizedPlant, ProblemBuilder, Setting};
use rfd_core::solver::{
    brute_force_oracle, restricted_least_squares_groups, solve_rfd, RfdProblem, SolveOptions,
    ORACLE_CAP,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mat(rng: &mut impl Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn random_fir(rng: &mut impl Rng, r: usize, c: usize, n: usize) -> FirMatrix {
    FirMatrix::new((0..n).map(|_| random_mat(rng, r, c)).collect()).unwrap()
}

/// State-feedback chain `A = aI + bZ` with a few strongly driven nodes.
pub fn banded_plant(rng: &mut impl Rng, n: usize) -> GeneralizedPlant {
    let a0 = rng.gen_range(0.3..0.6);
    let b0 = rng.gen_range(0.2..0.6);
    let mut a = Mat::identity(n, n) * a0;
    for i in 1..n {
        a[(i, i - 1)] = b0;
    }
    let mut b1 = Mat::identity(n, n) * 0.1;
    let first = rng.gen_range(0..n / 2);
    let second = rng.gen_range(n / 2 + 1..n);
    b1[(first, first)] += rng.gen_range(0.8..1.5);
    b1[(second, second)] += rng.gen_range(0.8..1.5);
    let rho_u: f64 = 0.1;
    let mut c1 = Mat::zeros(2 * n, n);
    c1.view_mut((0, 0), (n, n)).copy_from(&Mat::identity(n, n));
    let mut d12 = Mat::zeros(2 * n, n);
    d12.view_mut((n, 0), (n, n))
        .copy_from(&(Mat::identity(n, n) * rho_u.sqrt()));
    GeneralizedPlant::new(
        a,
        b1,
        Mat::identity(n, n),
        c1,
        Mat::identity(n, n),
        d12,
        Mat::zeros(n, n),
        rho_u,
        0.0,
    )
    .unwrap()
}

pub fn chain_builder() -> ProblemBuilder {
    ProblemBuilder::new(
        rfd_core::systems::build_chain10(),
        Setting::StateFeedback,
        TapConvention::ZeroBased,
    )
}

/// Oracle architecture of size `s` and its reference-horizon parameter.
pub fn oracle_target(b: &ProblemBuilder, s: usize) -> (Vec<usize>, FirMatrix) {
    let (tr, vr) = b.reference_dims();
    let ap = b.assemble(tr, vr).unwrap();
    let g = GroupStructure::actuator(ap.l.input_layout());
    let o = brute_force_oracle(&ap.y, &ap.l, ap.f.as_ref(), ap.rho, s, &g, ORACLE_CAP).unwrap();
    let u = restricted_least_squares_groups(&ap.y, &ap.l, ap.f.as_ref(), ap.rho, &g, &o.best, None)
        .unwrap()
        .u;
    (o.best, u)
}

pub fn certificate(
    b: &ProblemBuilder,
    u: &FirMatrix,
    m_star: &[usize],
    t: usize,
    v: usize,
    sign: TailSign,
) -> RecoveryCertificate {
    let opts = CertifyOptions {
        tail_sign: sign,
        ..Default::default()
    };
    build_certificate(b, &PenaltySpec::Actuator, u, m_star, t, v, 0.0, &opts).unwrap()
}

/// Support of the unconstrained regularized solve at `(t, v)`, ρ = 0.
pub fn rfd_support(b: &ProblemBuilder, t: usize, v: usize, lambda: f64) -> (Vec<usize>, f64) {
    let ap = b.assemble(t, v).unwrap();
    let g = GroupStructure::actuator(ap.l.input_layout());
    let mut p = RfdProblem::new(&ap, g, lambda).unwrap();
    p.rho = 0.0;
    let s = solve_rfd(&p, &SolveOptions::default()).unwrap();
    assert!(s.converged);
    (s.support, s.kkt_residual)
}
