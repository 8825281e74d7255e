//! Recovery certificates: mixing time, restricted gains and their bounds, RFD noise,
//! SNRs, λ thresholds, error bounds and the support-recovery verdicts.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, RfdError};
use crate::firlin::{ClosedLoopMap, FirLayout, FirMatrix};
use crate::linalg::{spectral_norm, sym_eig_extremes, Mat, Vector};
use crate::penalties::{GroupStructure, PenaltySpec};
use crate::plantmaps::{truncate_and_tail, ProblemBuilder};
use crate::serde_ext::{float, float_opt, float_vec};
use crate::solver::{kkt_certificate, solve_architect, KktCertificate, RfdProblem, SolveOptions};

/// Sign of the truncation tail in the back-projected residual `W ± T`.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema,
)]
#[serde(rename_all = "snake_case")]
pub enum TailSign {
    /// `W − T`.
    #[default]
    Subtract,
    /// `W + T = Y − 𝔏(U*^{≤v})`.
    Add,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    /// Absolute tolerance on cross-Gram entries for the mixing time.
    pub tau_tol: f64,
    pub tau_cap: usize,
    /// Largest `|𝓜_*|` for the exact subset enumeration of γ.
    pub gamma_cap: usize,
    pub tail_sign: TailSign,
    /// λ at which the error bound and observed error are evaluated (default: the sufficient λ).
    pub lambda: Option<f64>,
    /// Solve the architect problem to report the observed error.
    pub observe: bool,
    pub solve: SolveOptions,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            tau_tol: 1e-9,
            tau_cap: 200,
            gamma_cap: 15,
            tail_sign: TailSign::Subtract,
            lambda: None,
            observe: true,
            solve: SolveOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixingTime {
    pub tau: usize,
    /// True when the cap was reached without a failure.
    pub saturated: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdicts {
    /// `ν < 1`.
    pub assumption1: bool,
    /// Support of the regularized solution lies inside `𝓜_*`.
    pub theorem2_support: bool,
    /// Every group of `𝓜_*` is also recovered.
    pub theorem2_per_group: bool,
    /// The λ interval `Λ` is nonempty.
    pub corollary1: bool,
    /// `ρ = 0`, `γ > β` and every SNR exceeds `1/(γ − β)`.
    pub theorem3: bool,
}

/// Every recovery quantity for one `(t, v)` and candidate architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryCertificate {
    pub t: usize,
    pub v: usize,
    pub rho: f64,
    pub m_star: Vec<usize>,
    pub mixing_time: MixingTime,
    #[serde(with = "float_opt")]
    pub alpha_exact: Option<f64>,
    #[serde(with = "float")]
    pub gamma: f64,
    #[serde(with = "float")]
    pub beta_upper: f64,
    /// `β/α` with the exact α when available, otherwise the bound.
    #[serde(with = "float")]
    pub nu: f64,
    #[serde(with = "float")]
    pub nu_upper: f64,
    /// `1/(γ − β)`.
    #[serde(with = "float")]
    pub snr_threshold: f64,
    /// `||𝔏†_{𝒜_*}(W ± T)||*`.
    #[serde(with = "float")]
    pub noise_on: f64,
    /// `||𝔏†_{𝒜_*^⊥}(W ± T)||*`.
    #[serde(with = "float")]
    pub noise_off: f64,
    #[serde(with = "float")]
    pub eta: f64,
    /// Group norms of `U*^{≤v}` on `𝓜_*`.
    pub group_norms: Vec<f64>,
    #[serde(with = "float")]
    pub mu: f64,
    #[serde(with = "float_vec")]
    pub snr: Vec<f64>,
    #[serde(with = "float")]
    pub lambda_sufficient: f64,
    /// Per-group upper limits `α||U*_𝒜|| − a − ρ||U*||*`.
    #[serde(with = "float_vec")]
    pub per_group_upper: Vec<f64>,
    pub lambda_interval: Option<(f64, f64)>,
    #[serde(with = "float")]
    pub lambda_eval: f64,
    #[serde(with = "float")]
    pub error_bound: f64,
    #[serde(with = "float_opt")]
    pub observed_error: Option<f64>,
    pub dual_certificate: Option<KktCertificate>,
    pub verdicts: Verdicts,
    pub tail_sign: TailSign,
    /// `W^{≤t}` as `[tap][row][col]`.
    pub w: Vec<Vec<Vec<f64>>>,
    /// `T^{≤t,v}` as `[tap][row][col]`.
    pub tail: Vec<Vec<Vec<f64>>>,
}

/// Column blocks of a map for each group.
pub struct GroupColumns {
    blocks: Vec<Mat>,
}

impl GroupColumns {
    pub fn new(l: &ClosedLoopMap, groups: &[Vec<usize>]) -> Result<Self> {
        let blocks = groups
            .iter()
            .map(|g| {
                let mut c = g.clone();
                c.sort_unstable();
                Ok(l.restrict(&c)?.matrix().clone())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { blocks })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// `𝔏_Aᵀ 𝔏_B`.
    pub fn gram(&self, a: usize, b: usize) -> Mat {
        self.blocks[a].tr_mul(&self.blocks[b])
    }

    pub fn sigma_min(&self, a: usize) -> f64 {
        sym_eig_extremes(&self.gram(a, a)).0.max(0.0)
    }

    pub fn sigma_max(&self, a: usize, b: usize) -> f64 {
        spectral_norm(&self.gram(a, b))
    }
}

fn select(groups: &[Vec<usize>], ids: &[usize]) -> Vec<Vec<usize>> {
    ids.iter().map(|&i| groups[i].clone()).collect()
}

fn partition_groups(spec: &PenaltySpec, layout: &FirLayout) -> Result<GroupStructure> {
    let g = spec.instantiate(layout)?;
    if !g.is_partition() {
        return Err(RfdError::Unsupported(format!(
            "certificates cover actuator and sensor norms, not {:?}",
            g.kind
        )));
    }
    Ok(g)
}

/// Largest `t ≤ cap` such that every horizon `1..=t` keeps distinct groups' cross-Grams below `tol`.
///
/// `family(t)` returns the map at horizon `t`; groups are taken from `groups(layout)`.
pub fn mixing_time<F, G>(
    family: F,
    groups: G,
    m_star: &[usize],
    tol: f64,
    cap: usize,
) -> Result<MixingTime>
where
    F: Fn(usize) -> Result<ClosedLoopMap>,
    G: Fn(&FirLayout) -> Result<Vec<Vec<usize>>>,
{
    if m_star.is_empty() {
        return invalid("mixing time needs a nonempty architecture");
    }
    if !(tol > 0.0) {
        return invalid("tolerance must be positive");
    }
    for t in 1..=cap {
        let l = family(t)?;
        let all = groups(l.input_layout())?;
        let cols = GroupColumns::new(&l, &select(&all, m_star))?;
        for a in 0..cols.len() {
            for b in a + 1..cols.len() {
                if cols.gram(a, b).amax() > tol {
                    return Ok(MixingTime {
                        tau: t - 1,
                        saturated: false,
                    });
                }
            }
        }
    }
    Ok(MixingTime {
        tau: cap,
        saturated: true,
    })
}

/// `ρ + min_{𝒜 ∈ 𝓜_*} σ_min(𝔏_𝒜ᵀ𝔏_𝒜)`, exact below the mixing time.
pub fn alpha_exact_small_t(
    l: &ClosedLoopMap,
    groups: &[Vec<usize>],
    m_star: &[usize],
    rho: f64,
) -> Result<f64> {
    if m_star.is_empty() {
        return invalid("α needs a nonempty architecture");
    }
    let cols = GroupColumns::new(l, &select(groups, m_star))?;
    Ok(rho
        + (0..cols.len())
            .map(|a| cols.sigma_min(a))
            .fold(f64::INFINITY, f64::min))
}

/// Lower bound γ on the restricted gain by exact subset enumeration.
pub fn gamma_lower(
    l: &ClosedLoopMap,
    groups: &[Vec<usize>],
    m_star: &[usize],
    cap: usize,
) -> Result<f64> {
    let n = m_star.len();
    if n == 0 {
        return invalid("γ needs a nonempty architecture");
    }
    if n > cap {
        return Err(RfdError::Cap {
            count: n as u128,
            cap: cap as u128,
        });
    }
    let cols = GroupColumns::new(l, &select(groups, m_star))?;
    let smin: Vec<f64> = (0..n).map(|a| cols.sigma_min(a)).collect();
    let mut smax = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in a + 1..n {
            let s = cols.sigma_max(a, b);
            smax[a][b] = s;
            smax[b][a] = s;
        }
    }
    Ok(gamma_from_parts(&smin, &smax))
}

/// `min_{𝓑 ≠ ∅} max_{𝒜 ∈ 𝓑} [σ_min(G_𝒜𝒜) − Σ_{𝓑' ∈ 𝓑∖𝒜} σ_max(G_𝒜𝓑')]`.
pub fn gamma_from_parts(smin: &[f64], smax: &[Vec<f64>]) -> f64 {
    let n = smin.len();
    let mut best = f64::INFINITY;
    for mask in 1u64..(1u64 << n) {
        let members: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        let val = members
            .iter()
            .map(|&a| {
                smin[a]
                    - members
                        .iter()
                        .filter(|&&b| b != a)
                        .map(|&b| smax[a][b])
                        .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        best = best.min(val);
    }
    best
}

/// `max_{𝒜 ∉ 𝓜_*} Σ_{𝓑 ∈ 𝓜_*} σ_max(𝔏_𝒜ᵀ𝔏_𝓑)`; 0 when every group is in `𝓜_*`.
pub fn beta_upper(l: &ClosedLoopMap, groups: &[Vec<usize>], m_star: &[usize]) -> Result<f64> {
    let outside: Vec<usize> = (0..groups.len()).filter(|g| !m_star.contains(g)).collect();
    if outside.is_empty() || m_star.is_empty() {
        return Ok(0.0);
    }
    let ins = GroupColumns::new(l, &select(groups, m_star))?;
    let outs = GroupColumns::new(l, &select(groups, &outside))?;
    let mut beta: f64 = 0.0;
    for a in 0..outs.len() {
        let s: f64 = (0..ins.len())
            .map(|b| spectral_norm(&outs.blocks[a].tr_mul(&ins.blocks[b])))
            .sum();
        beta = beta.max(s);
    }
    Ok(beta)
}

/// Dual norms of `𝔏ᵀ(W ± T)` on and off `𝓜_*`.
pub fn rfd_noise_parts(
    l: &ClosedLoopMap,
    g: &GroupStructure,
    m_star: &[usize],
    w: &FirMatrix,
    tail: &FirMatrix,
    sign: TailSign,
) -> Result<(f64, f64)> {
    let r = match sign {
        TailSign::Subtract => w.axpy(-1.0, tail)?,
        TailSign::Add => w.axpy(1.0, tail)?,
    };
    let back = l.adjoint_fir(&r)?;
    let x = g.layout.vectorize(&back)?;
    let mut on: f64 = 0.0;
    let mut off: f64 = 0.0;
    for (i, (a, &k)) in g.atoms.iter().zip(&g.weights).enumerate() {
        let n = k * a.iter().map(|&c| x[c] * x[c]).sum::<f64>().sqrt();
        if m_star.contains(&i) {
            on = on.max(n);
        } else {
            off = off.max(n);
        }
    }
    Ok((on, off))
}

/// RFD noise level `η`.
pub fn rfd_noise(
    l: &ClosedLoopMap,
    g: &GroupStructure,
    m_star: &[usize],
    w: &FirMatrix,
    tail: &FirMatrix,
    sign: TailSign,
) -> Result<f64> {
    let (a, p) = rfd_noise_parts(l, g, m_star, w, tail, sign)?;
    Ok(a + p)
}

/// Group norms of `U*^{≤v}` divided by `η` (`+∞` for nonzero groups when `η = 0`).
pub fn snr(group_norms: &[f64], eta: f64) -> Vec<f64> {
    group_norms
        .iter()
        .map(|&n| {
            if n == 0.0 {
                0.0
            } else if eta == 0.0 {
                f64::INFINITY
            } else {
                n / eta
            }
        })
        .collect()
}

/// λ thresholds and error bound.
#[derive(Clone, Debug, PartialEq)]
pub struct Thresholds {
    pub lambda_sufficient: f64,
    pub per_group_upper: Vec<f64>,
    pub interval: Option<(f64, f64)>,
    pub error_bound: f64,
    pub lambda_eval: f64,
}

/// Sufficient λ, per-group upper limits, interval `Λ` and error bound at `lambda` (or the sufficient λ).
///
/// `a`, `p` are the on/off back-projected noise terms and `u_dual` the dual norm of `U*^{≤v}`.
#[allow(clippy::too_many_arguments)]
pub fn lambda_thresholds(
    alpha: f64,
    nu: f64,
    a: f64,
    p: f64,
    rho: f64,
    u_dual: f64,
    group_norms: &[f64],
    lambda: Option<f64>,
) -> Thresholds {
    let shift = a + rho * u_dual;
    let lambda_sufficient = if nu < 1.0 {
        nu / (1.0 - nu) * shift + p / (1.0 - nu)
    } else {
        f64::INFINITY
    };
    let per_group_upper: Vec<f64> = group_norms.iter().map(|&n| alpha * n - shift).collect();
    let mu = group_norms.iter().cloned().fold(f64::INFINITY, f64::min);
    let high = alpha * mu - shift;
    let interval = (lambda_sufficient.is_finite() && high > lambda_sufficient)
        .then_some((lambda_sufficient, high));
    let lambda_eval = lambda.unwrap_or(lambda_sufficient);
    let error_bound = if alpha > 0.0 {
        (lambda_eval + shift) / alpha
    } else {
        f64::INFINITY
    };
    Thresholds {
        lambda_sufficient,
        per_group_upper,
        interval,
        error_bound,
        lambda_eval,
    }
}

/// `SNR_𝒜 > 1/(γ − β)` for every group, with `ρ = 0` and `γ > β`.
pub fn theorem3_check(snr: &[f64], gamma: f64, beta: f64, rho: f64) -> bool {
    if rho != 0.0 || gamma <= beta || snr.is_empty() {
        return false;
    }
    let thr = 1.0 / (gamma - beta);
    snr.iter().all(|&s| s > thr)
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Full certificate for `U*` (a reference-horizon parameter) on architecture `𝓜_*` at `(t, v)`.
#[allow(clippy::too_many_arguments)]
pub fn build_certificate(
    builder: &ProblemBuilder,
    penalty: &PenaltySpec,
    u_star: &FirMatrix,
    m_star: &[usize],
    t: usize,
    v: usize,
    rho: f64,
    opts: &CertifyOptions,
) -> Result<RecoveryCertificate> {
    if m_star.is_empty() {
        return invalid("certificates need a nonempty architecture");
    }
    if !(rho >= 0.0) {
        return invalid("ρ must be nonnegative");
    }
    let mut m_star = m_star.to_vec();
    m_star.sort_unstable();
    m_star.dedup();
    let conv = builder.convention;
    let ap = builder.assemble(t, v)?;
    let g = partition_groups(penalty, ap.l.input_layout())?;
    if let Some(&bad) = m_star.iter().find(|&&i| i >= g.atoms.len()) {
        return invalid(format!("group {bad} outside 0..{}", g.atoms.len()));
    }
    let mixing = mixing_time(
        |tt| Ok(builder.assemble(tt, tt)?.l),
        |lay| Ok(partition_groups(penalty, lay)?.atoms),
        &m_star,
        opts.tau_tol,
        opts.tau_cap,
    )?;
    let alpha_exact = if t <= mixing.tau {
        Some(alpha_exact_small_t(&ap.l, &g.atoms, &m_star, rho)?)
    } else {
        None
    };
    let gamma = gamma_lower(&ap.l, &g.atoms, &m_star, opts.gamma_cap)?;
    let beta = beta_upper(&ap.l, &g.atoms, &m_star)?;
    let alpha = alpha_exact.unwrap_or(rho + gamma);
    let nu = ratio(beta, alpha);
    let nu_upper = ratio(beta, rho + gamma);
    let l_full = builder.assemble(t, t)?.l;
    let (u_v, tail) = truncate_and_tail(u_star, &l_full, t, v, conv)?;
    let horizon = l_full.output_layout().taps.end();
    let full_in = l_full.input_layout();
    let u_t = u_star
        .window(full_in.taps.first, full_in.taps.count)
        .truncate(full_in.taps.end());
    let w =
        ap.y.truncate(horizon)
            .axpy(-1.0, &l_full.apply_fir(&u_t)?)?;
    let (a, p) = rfd_noise_parts(&ap.l, &g, &m_star, &w, &tail, opts.tail_sign)?;
    let eta = a + p;
    let xv = g.layout.vectorize(&u_v)?;
    let norm_of = |i: usize| {
        g.weights[i].recip()
            * g.atoms[i]
                .iter()
                .map(|&c| xv[c] * xv[c])
                .sum::<f64>()
                .sqrt()
    };
    let group_norms: Vec<f64> = m_star.iter().map(|&i| norm_of(i)).collect();
    let u_dual = partition_dual_norm(&xv, &g);
    let mu = group_norms.iter().cloned().fold(f64::INFINITY, f64::min);
    let snrs = snr(&group_norms, eta);
    let th = lambda_thresholds(alpha, nu, a, p, rho, u_dual, &group_norms, opts.lambda);
    let assumption1 = nu < 1.0;
    let theorem2_support = assumption1 && th.lambda_eval >= th.lambda_sufficient;
    let theorem2_per_group =
        theorem2_support && th.per_group_upper.iter().all(|&u| th.lambda_eval < u);
    let verdicts = Verdicts {
        assumption1,
        theorem2_support,
        theorem2_per_group,
        corollary1: assumption1 && th.interval.is_some(),
        theorem3: theorem3_check(&snrs, gamma, beta, rho),
    };
    let (observed_error, dual_certificate) =
        if opts.observe && th.lambda_eval.is_finite() && th.lambda_eval > 0.0 {
            let mut prob = RfdProblem::new(&ap, g.clone(), th.lambda_eval)?;
            prob.rho = rho;
            prob.support_constraint = Some(m_star.clone());
            let sol = solve_architect(&prob, &opts.solve)?;
            let d = &sol.x - &xv;
            let err = partition_dual_norm(&d, &g);
            prob.support_constraint = None;
            (Some(err), Some(kkt_certificate(&sol, &prob, &m_star)?))
        } else {
            (None, None)
        };
    Ok(RecoveryCertificate {
        t,
        v,
        rho,
        m_star,
        mixing_time: mixing,
        alpha_exact,
        gamma,
        beta_upper: beta,
        nu,
        nu_upper,
        snr_threshold: if gamma > beta {
            1.0 / (gamma - beta)
        } else {
            f64::INFINITY
        },
        noise_on: a,
        noise_off: p,
        eta,
        group_norms,
        mu,
        snr: snrs,
        lambda_sufficient: th.lambda_sufficient,
        per_group_upper: th.per_group_upper,
        lambda_interval: th.interval,
        lambda_eval: th.lambda_eval,
        error_bound: th.error_bound,
        observed_error,
        dual_certificate,
        verdicts,
        tail_sign: opts.tail_sign,
        w: w.to_nested(),
        tail: tail.to_nested(),
    })
}

/// Vectorized dual norm of a partition structure.
pub fn partition_dual_norm(x: &Vector, g: &GroupStructure) -> f64 {
    (0..g.atoms.len())
        .map(|i| g.weights[i] * g.atoms[i].iter().map(|&c| x[c] * x[c]).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}
