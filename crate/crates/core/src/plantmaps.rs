//! Model-matching data `(Y, 𝔏, 𝔉)` from state-space plants, truncation tails and
//! controller recovery from Youla parameters.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Result, RfdError};
use crate::firlin::{
    materialize_map, ClosedLoopMap, FirLayout, FirMatrix, TapConvention, TapRange,
};
use crate::linalg::{condition_number, spectral_radius, Mat, Vector};

const ORTHO_TOL: f64 = 1e-9;
const COND_LIMIT: f64 = 1e12;

/// Generalized plant `P_ij = C_i (zI − A)^{-1} B_j + D_ij` with `D11 = D22 = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizedPlant {
    pub a: Mat,
    pub b1: Mat,
    pub b2: Mat,
    pub c1: Mat,
    pub c2: Mat,
    pub d12: Mat,
    pub d21: Mat,
    pub rho_u: f64,
    pub rho_w: f64,
}

impl GeneralizedPlant {
    /// Validates dimensions and the orthogonality conditions
    /// `D12ᵀ[C1 D12] = [0 ρ_u I]` and `D21[B1ᵀ D21ᵀ] = [0 ρ_w I]`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: Mat,
        b1: Mat,
        b2: Mat,
        c1: Mat,
        c2: Mat,
        d12: Mat,
        d21: Mat,
        rho_u: f64,
        rho_w: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return dim_err("A must be square");
        }
        let checks = [
            ("B1 rows", b1.nrows(), n),
            ("B2 rows", b2.nrows(), n),
            ("C1 cols", c1.ncols(), n),
            ("C2 cols", c2.ncols(), n),
            ("D12 rows", d12.nrows(), c1.nrows()),
            ("D12 cols", d12.ncols(), b2.ncols()),
            ("D21 rows", d21.nrows(), c2.nrows()),
            ("D21 cols", d21.ncols(), b1.ncols()),
        ];
        for (what, got, want) in checks {
            if got != want {
                return dim_err(format!("{what}: {got}, expected {want}"));
            }
        }
        if !(rho_u >= 0.0 && rho_w >= 0.0) {
            return invalid("rho_u and rho_w must be nonnegative");
        }
        let p = Self {
            a,
            b1,
            b2,
            c1,
            c2,
            d12,
            d21,
            rho_u,
            rho_w,
        };
        p.check_orthogonality()?;
        Ok(p)
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_actuators(&self) -> usize {
        self.b2.ncols()
    }

    pub fn n_sensors(&self) -> usize {
        self.c2.nrows()
    }

    pub fn n_disturbances(&self) -> usize {
        self.b1.ncols()
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a)
    }

    pub fn check_orthogonality(&self) -> Result<()> {
        let na = self.n_actuators();
        let nm = self.n_sensors();
        let cross_u = self.d12.tr_mul(&self.c1).amax();
        let gram_u = (self.d12.tr_mul(&self.d12) - Mat::identity(na, na) * self.rho_u).amax();
        let cross_w = (&self.d21 * self.b1.transpose()).amax();
        let gram_w = (&self.d21 * self.d21.transpose() - Mat::identity(nm, nm) * self.rho_w).amax();
        if cross_u > ORTHO_TOL || gram_u > ORTHO_TOL {
            return Err(RfdError::Pattern(format!(
                "D12ᵀ[C1 D12] deviates from [0 ρ_u I] by {:.3e}",
                cross_u.max(gram_u)
            )));
        }
        if cross_w > ORTHO_TOL || gram_w > ORTHO_TOL {
            return Err(RfdError::Pattern(format!(
                "D21[B1ᵀ D21ᵀ] deviates from [0 ρ_w I] by {:.3e}",
                cross_w.max(gram_w)
            )));
        }
        Ok(())
    }

    fn require_stable(&self) -> Result<()> {
        let r = self.spectral_radius();
        if r < 1.0 {
            Ok(())
        } else {
            Err(RfdError::Unstable(r))
        }
    }

    /// Boolean support of `P22 = C2 (zI − A)^{-1} B2` for taps `0..=depth`.
    pub fn p22_support(&self, depth: usize) -> crate::firlin::SparsityMask {
        use crate::firlin::{bool_mul, BoolMat, SparsityMask};
        let nz = |m: &Mat| m.map(|x| x != 0.0);
        let a = nz(&self.a);
        let c2 = nz(&self.c2);
        let b2 = nz(&self.b2);
        let (nm, na) = (self.c2.nrows(), self.b2.ncols());
        let mut taps = vec![BoolMat::from_element(nm, na, false)];
        let mut power = BoolMat::from_fn(self.n_states(), self.n_states(), |i, j| i == j);
        for _ in 1..=depth {
            taps.push(bool_mul(&bool_mul(&c2, &power), &b2));
            power = bool_mul(&power, &a);
        }
        let tail = taps
            .last()
            .cloned()
            .unwrap_or_else(|| BoolMat::from_element(nm, na, false));
        SparsityMask::new(taps, tail).expect("taps share a shape")
    }
}

/// Which model-matching problem a plant feeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    BasicLqr,
    StateFeedback,
    OutputFeedback,
}

/// Finite-horizon model-matching data; the closed loop is `Y − 𝔏(U)`.
#[derive(Clone, Debug)]
pub struct AssembledProblem {
    pub y: FirMatrix,
    pub l: ClosedLoopMap,
    pub f: Option<ClosedLoopMap>,
    pub setting: Setting,
    /// Weight of `||U||²` implied by the plant (`ρ_u`, or 0 when 𝔉 carries control costs).
    pub rho: f64,
    pub t: usize,
    pub v: usize,
    pub convention: TapConvention,
}

impl AssembledProblem {
    pub fn input_layout(&self) -> &FirLayout {
        self.l.input_layout()
    }

    /// Objective `||Y − 𝔏(U)||² + ||𝔉(U)||² + ρ||U||²` for the given ρ.
    pub fn smooth_cost(&self, u: &FirMatrix, rho: f64) -> Result<f64> {
        let lu = self.l.apply_fir(u)?;
        let y = self.y.truncate(self.l.output_layout().taps.end());
        let mut c = y.axpy(-1.0, &lu)?.h2_norm().powi(2);
        if let Some(f) = &self.f {
            let x = f.input_layout().vectorize(u)?;
            c += f.apply(&x).norm_squared();
        }
        let x = self.input_layout().vectorize(u)?;
        Ok(c + rho * x.norm_squared())
    }
}

/// Taps `c·A^{k−1}·b` for `k = 1..n`, tap 0 zero: the FIR truncation of `c (zI − A)^{-1} b`.
pub fn markov_fir(a: &Mat, b: &Mat, c: &Mat, ntaps: usize) -> FirMatrix {
    let mut taps = vec![Mat::zeros(c.nrows(), b.ncols())];
    let mut ab = b.clone();
    for _ in 1..ntaps.max(1) {
        taps.push(c * &ab);
        ab = a * ab;
    }
    FirMatrix::new(taps).expect("markov taps share a shape")
}

/// Rows spanning the range of `c` (dropping rows used only by `d`), as a row selector or basis.
fn state_rows(c: &Mat, d: &Mat) -> Mat {
    let used = |m: &Mat, i: usize| m.row(i).iter().any(|&x| x != 0.0);
    let disjoint = (0..c.nrows()).all(|i| !(used(c, i) && used(d, i)));
    if disjoint {
        let keep: Vec<usize> = (0..c.nrows()).filter(|&i| used(c, i)).collect();
        let mut q = Mat::zeros(keep.len(), c.nrows());
        for (r, &i) in keep.iter().enumerate() {
            q[(r, i)] = 1.0;
        }
        return q;
    }
    let svd = c.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cols: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > 1e-12 * smax.max(1e-300))
        .collect();
    u.select_columns(cols.iter()).transpose()
}

/// Columns spanning the row space of `b` (dropping columns used only by `d`).
fn state_cols(b: &Mat, d: &Mat) -> Mat {
    state_rows(&b.transpose(), &d.transpose()).transpose()
}

/// Basic LQR: `Y^(k) = C A^k ξ`, `𝔏(U) = −H∗U` with `H^(k) = C A^{k−1} B`.
#[allow(clippy::too_many_arguments)]
pub fn build_basic_lqr(
    a: &Mat,
    b: &Mat,
    c: &Mat,
    xi: &Vector,
    rho_u: f64,
    t: usize,
    v: usize,
    convention: TapConvention,
) -> Result<AssembledProblem> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || c.ncols() != n || xi.len() != n {
        return dim_err("basic LQR needs A n×n, B n×m, C p×n and ξ of length n");
    }
    let out = convention.output_taps(t);
    let mut taps = Vec::with_capacity(out.end());
    let mut x = xi.clone();
    for _ in 0..out.end() {
        taps.push(Mat::from_column_slice(c.nrows(), 1, (c * &x).as_slice()));
        x = a * x;
    }
    let y = FirMatrix::new(taps)?;
    let h = markov_fir(a, b, c, out.end());
    let l = materialize_map(&h.scale(-1.0), &FirMatrix::identity(1), t, v, convention)?;
    Ok(AssembledProblem {
        y,
        l,
        f: None,
        setting: Setting::BasicLqr,
        rho: rho_u,
        t,
        v,
        convention,
    })
}

fn is_identity(m: &Mat) -> bool {
    m.nrows() == m.ncols() && (m - Mat::identity(m.nrows(), m.ncols())).amax() <= 1e-12
}

/// H2 state feedback: `Y^(k) = C1 A^{k−1} B1`, `𝔏(Ũ) = P12 ∗ Ũ` on the state rows of `C1`.
///
/// The Youla parameter `Ũ = U·P̃21` with `P̃21 = A P21 + B1` responds to a disturbance in the
/// step it enters, so `Ũ` tap 0 reaches output tap 1 through `C1 B2`.
pub fn build_state_feedback(
    plant: &GeneralizedPlant,
    t: usize,
    v: usize,
    convention: TapConvention,
) -> Result<AssembledProblem> {
    if !is_identity(&plant.c2) {
        return Err(RfdError::Pattern("state feedback requires C2 = I".into()));
    }
    if plant.d21.amax() != 0.0 {
        return Err(RfdError::Pattern("state feedback requires D21 = 0".into()));
    }
    if plant.b1.nrows() != plant.b1.ncols() {
        return Err(RfdError::Pattern(
            "state feedback requires a square B1".into(),
        ));
    }
    let cond = condition_number(&plant.b1);
    if cond > COND_LIMIT {
        return Err(RfdError::SingularTap(cond));
    }
    plant.require_stable()?;
    let q = state_rows(&plant.c1, &plant.d12);
    let c1s = &q * &plant.c1;
    let out = convention.output_taps(t);
    let y = markov_fir(&plant.a, &plant.b1, &c1s, out.end());
    let p12 = markov_fir(&plant.a, &plant.b2, &c1s, out.end());
    let l = materialize_map(
        &p12,
        &FirMatrix::identity(plant.n_disturbances()),
        t,
        v,
        convention,
    )?;
    Ok(AssembledProblem {
        y,
        l,
        f: None,
        setting: Setting::StateFeedback,
        rho: plant.rho_u,
        t,
        v,
        convention,
    })
}

/// H2 output feedback: `Y = P11`, `𝔏(U) = P12 U P21`, `𝔉(U) = [P12 U D21, D12 U P21, D12 U D21]`.
///
/// Rows and columns are compressed onto the ranges of `C1`/`D12` and `B1ᵀ`/`D21ᵀ`; the
/// output coordinates of 𝔉 are the concatenation of its three blocks.
pub fn build_output_feedback(
    plant: &GeneralizedPlant,
    t: usize,
    v: usize,
    convention: TapConvention,
) -> Result<AssembledProblem> {
    plant.require_stable()?;
    let q1 = state_rows(&plant.c1, &plant.d12);
    let q2 = state_rows(&plant.d12, &plant.c1);
    let p1 = state_cols(&plant.b1, &plant.d21);
    let p2 = state_cols(&plant.d21, &plant.b1);
    let out = convention.output_taps(t);
    let n = out.end();
    let c1s = &q1 * &plant.c1;
    let b1s = &plant.b1 * &p1;
    let y = markov_fir(&plant.a, &b1s, &c1s, n);
    let p12 = markov_fir(&plant.a, &plant.b2, &c1s, n);
    let p21 = markov_fir(&plant.a, &b1s, &plant.c2, n);
    let l = materialize_map(&p12, &p21, t, v, convention)?;
    let d12 = FirMatrix::constant(&q2 * &plant.d12);
    let d21 = FirMatrix::constant(&plant.d21 * &p2);
    let blocks = [(&p12, &d21), (&d12, &p21), (&d12, &d21)];
    let input = *l.input_layout();
    let mut mats = Vec::new();
    for (left, right) in blocks {
        if left.rows() == 0 || right.cols() == 0 {
            continue;
        }
        mats.push(
            materialize_map(left, right, t, v, convention)?
                .matrix()
                .clone(),
        );
    }
    let rows: usize = mats.iter().map(|m| m.nrows()).sum();
    let mut fm = Mat::zeros(rows, input.dim());
    let mut r0 = 0;
    for m in &mats {
        fm.view_mut((r0, 0), m.shape()).copy_from(m);
        r0 += m.nrows();
    }
    let f_out = FirLayout::new(rows, 1, TapRange::new(0, 1));
    let f = ClosedLoopMap::from_matrix(fm, input, f_out)?;
    Ok(AssembledProblem {
        y,
        l,
        f: Some(f),
        setting: Setting::OutputFeedback,
        rho: 0.0,
        t,
        v,
        convention,
    })
}

/// Plant plus setting: assembles problems at any `(t, v)`.
#[derive(Clone, Debug)]
pub struct ProblemBuilder {
    pub plant: GeneralizedPlant,
    pub setting: Setting,
    pub convention: TapConvention,
    /// Initial state for the basic LQR setting.
    pub xi: Option<Vector>,
}

impl ProblemBuilder {
    pub fn new(plant: GeneralizedPlant, setting: Setting, convention: TapConvention) -> Self {
        Self {
            plant,
            setting,
            convention,
            xi: None,
        }
    }

    pub fn assemble(&self, t: usize, v: usize) -> Result<AssembledProblem> {
        match self.setting {
            Setting::BasicLqr => {
                let xi = self
                    .xi
                    .clone()
                    .ok_or_else(|| RfdError::Invalid("basic LQR needs an initial state".into()))?;
                build_basic_lqr(
                    &self.plant.a,
                    &self.plant.b2,
                    &self.plant.c1,
                    &xi,
                    self.plant.rho_u,
                    t,
                    v,
                    self.convention,
                )
            }
            Setting::StateFeedback => build_state_feedback(&self.plant, t, v, self.convention),
            Setting::OutputFeedback => build_output_feedback(&self.plant, t, v, self.convention),
        }
    }

    /// Horizon and order for reference objects: `(2·T_ref, T_ref)`.
    pub fn reference_dims(&self) -> (usize, usize) {
        let tr = reference_horizon(self.plant.spectral_radius());
        (2 * tr, tr)
    }
}

/// Smallest `T` with `r^T < 1e-12`, capped at 500 taps.
pub fn reference_horizon(r: f64) -> usize {
    const CAP: usize = 500;
    if r <= 0.0 {
        return 1;
    }
    if r >= 1.0 {
        return CAP;
    }
    let t = ((1e-12f64).ln() / r.ln()).floor() as usize + 1;
    t.clamp(1, CAP)
}

/// Order-`v` truncation `U*^{≤v}` and tail `T^{≤t,v} = 𝔏^{≤t,t}(U*^{≤t} − U*^{≤v})`.
///
/// `l_full` must be built at order `t`; taps of `u_star` beyond its length are zero.
pub fn truncate_and_tail(
    u_star: &FirMatrix,
    l_full: &ClosedLoopMap,
    t: usize,
    v: usize,
    convention: TapConvention,
) -> Result<(FirMatrix, FirMatrix)> {
    let full_in = convention.input_taps(t);
    if l_full.input_layout().taps != full_in {
        return invalid(format!(
            "tail map has input taps {:?}, expected {:?}",
            l_full.input_layout().taps,
            full_in
        ));
    }
    if v > t {
        return invalid("order exceeds horizon");
    }
    let in_v = convention.input_taps(v);
    let u_v = u_star.window(in_v.first, in_v.count).truncate(in_v.end());
    let u_t = u_star
        .window(full_in.first, full_in.count)
        .truncate(full_in.end());
    let diff = u_t.axpy(-1.0, &u_v)?;
    let tail = l_full.apply_fir(&diff)?;
    Ok((u_v, tail))
}

/// Which Youla parameterization a parameter comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum YoulaForm {
    /// `U = K(I − P22 K)^{-1}` with `P22 = C2 (zI − A)^{-1} B2`.
    Output,
    /// `Ũ = U·P̃21` with the controller acting on the advanced state, `P22 → z·P22`.
    StateFeedback,
}

/// Power-series inverse of an FIR with nonsingular tap 0, to `horizon` taps.
pub fn fir_inverse(g: &FirMatrix, horizon: usize) -> Result<FirMatrix> {
    if g.rows() != g.cols() {
        return dim_err("only square FIRs are invertible");
    }
    let g0 = g.tap(0);
    let cond = condition_number(g0);
    if cond > COND_LIMIT {
        return Err(RfdError::SingularTap(cond));
    }
    let g0inv = g0
        .clone()
        .try_inverse()
        .ok_or(RfdError::SingularTap(f64::INFINITY))?;
    let mut x = vec![g0inv.clone()];
    for k in 1..horizon.max(1) {
        let mut acc = Mat::zeros(g.rows(), g.cols());
        for i in 1..=k.min(g.len() - 1) {
            acc += g.tap(i) * &x[k - i];
        }
        x.push(-(&g0inv * acc));
    }
    FirMatrix::new(x)
}

fn plant_p22(plant: &GeneralizedPlant, form: YoulaForm, horizon: usize) -> FirMatrix {
    let p22 = markov_fir(&plant.a, &plant.b2, &plant.c2, horizon + 1);
    match form {
        YoulaForm::Output => p22.truncate(horizon),
        YoulaForm::StateFeedback => FirMatrix::new(p22.taps()[1..].to_vec())
            .expect("advanced P22 has taps")
            .truncate(horizon),
    }
}

/// `P̃21 = A P21 + B1`, taps `A^k B1`.
fn p21_tilde(plant: &GeneralizedPlant, horizon: usize) -> FirMatrix {
    let mut taps = Vec::with_capacity(horizon);
    let mut m = plant.b1.clone();
    for _ in 0..horizon.max(1) {
        taps.push(m.clone());
        m = &plant.a * m;
    }
    FirMatrix::new(taps).expect("taps share a shape")
}

/// Controller impulse response `K = (I + U P22)^{-1} U` to `horizon` taps.
///
/// For the state-feedback form `U = Ũ P̃21^{-1}` and `P22` is advanced one step.
pub fn recover_controller(
    u: &FirMatrix,
    plant: &GeneralizedPlant,
    horizon: usize,
    form: YoulaForm,
) -> Result<FirMatrix> {
    if horizon < u.len() {
        return invalid("horizon must cover the Youla parameter");
    }
    let q = match form {
        YoulaForm::Output => u.truncate(horizon),
        YoulaForm::StateFeedback => {
            let inv = fir_inverse(&p21_tilde(plant, horizon), horizon)?;
            fir_convolve_trunc(u, &inv, horizon)?
        }
    };
    let p22 = plant_p22(plant, form, horizon);
    let na = q.rows();
    let loop_ = FirMatrix::identity(na).axpy(1.0, &fir_convolve_trunc(&q, &p22, horizon)?)?;
    let inv = fir_inverse(&loop_, horizon)?;
    fir_convolve_trunc(&inv, &q, horizon)
}

/// Youla parameter of a controller: `U = K(I − P22 K)^{-1}`, times `P̃21` in the state-feedback form.
pub fn youla_from_controller(
    k: &FirMatrix,
    plant: &GeneralizedPlant,
    horizon: usize,
    form: YoulaForm,
) -> Result<FirMatrix> {
    let p22 = plant_p22(plant, form, horizon);
    let pk = fir_convolve_trunc(&p22, k, horizon)?;
    let loop_ = FirMatrix::identity(pk.rows()).axpy(-1.0, &pk)?;
    let u = fir_convolve_trunc(k, &fir_inverse(&loop_, horizon)?, horizon)?;
    match form {
        YoulaForm::Output => Ok(u),
        YoulaForm::StateFeedback => fir_convolve_trunc(&u, &p21_tilde(plant, horizon), horizon),
    }
}

fn fir_convolve_trunc(a: &FirMatrix, b: &FirMatrix, horizon: usize) -> Result<FirMatrix> {
    Ok(crate::firlin::fir_convolve(a, b)?.truncate(horizon))
}
