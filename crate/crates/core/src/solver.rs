//! Regularized model matching by accelerated proximal gradient, support-constrained
//! (architect) solves, restricted least squares, the enumeration oracle and λ sweeps.
//!
//! The solver works with the ½-scaled objective
//! `½||Y − 𝔏U||² + ½||𝔉U||² + ½ρ||U||² + λΩ(U)`, whose minimizers coincide with those of
//! `||Y − 𝔏U||² + ||𝔉U||² + ρ||U||² + 2λΩ(U)`; reported objectives use the latter form.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Result, RfdError};
use crate::firlin::{ClosedLoopMap, FirLayout, FirMatrix, SparsityMask};
use crate::linalg::{power_lmax, solve_psd, Mat, Vector};
use crate::penalties::{atom_norms, eval_norm_vec, AtomLabel, GroupStructure, PenaltyKind};
use crate::plantmaps::AssembledProblem;

/// Default enumeration cap for the oracle.
pub const ORACLE_CAP: u128 = 1_000_000;

/// Regularized (or support-constrained) model-matching problem.
#[derive(Clone, Debug)]
pub struct RfdProblem {
    pub y: FirMatrix,
    pub l: ClosedLoopMap,
    pub f: Option<ClosedLoopMap>,
    pub rho: f64,
    pub lambda: f64,
    pub mask: Option<SparsityMask>,
    pub penalty: GroupStructure,
    /// Architect mode: indices into the penalty's flat groups.
    pub support_constraint: Option<Vec<usize>>,
}

impl RfdProblem {
    /// Problem on assembled data with the plant-implied ρ.
    pub fn new(ap: &AssembledProblem, penalty: GroupStructure, lambda: f64) -> Result<Self> {
        let p = Self {
            y: ap.y.clone(),
            l: ap.l.clone(),
            f: ap.f.clone(),
            rho: ap.rho,
            lambda,
            mask: None,
            penalty,
            support_constraint: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn layout(&self) -> &FirLayout {
        self.l.input_layout()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0 && self.lambda >= 0.0) {
            return invalid("rho and lambda must be nonnegative");
        }
        if self.penalty.layout != *self.l.input_layout() {
            return dim_err("penalty layout differs from the map's input layout");
        }
        if let Some(f) = &self.f {
            if f.input_layout() != self.l.input_layout() {
                return dim_err("𝔉 and 𝔏 act on different layouts");
            }
        }
        if self.y.shape() != (self.l.output_layout().rows, self.l.output_layout().cols) {
            return dim_err("Y does not match the map's output layout");
        }
        if let Some(s) = &self.support_constraint {
            let n = self.penalty.group_count();
            if let Some(&g) = s.iter().find(|&&g| g >= n) {
                return invalid(format!("support group {g} outside 0..{n}"));
            }
        }
        Ok(())
    }

    fn quad(&self) -> Result<QuadModel> {
        QuadModel::new(&self.y, &self.l, self.f.as_ref())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// KKT tolerance, relative to `max(1, ||𝔏ᵀY||_∞)`.
    pub tol: f64,
    pub max_iter: usize,
    pub check_every: usize,
    /// Support threshold: group norm > max(abs, rel × largest group norm).
    pub support_abs: f64,
    pub support_rel: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200_000,
            check_every: 10,
            support_abs: 1e-8,
            support_rel: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RfdSolution {
    pub u: FirMatrix,
    /// Vectorized `U` in the problem's input layout.
    pub x: Vector,
    /// Active flat-group indices, ascending.
    pub support: Vec<usize>,
    pub group_norms: Vec<f64>,
    /// `||Y − 𝔏U||² + ||𝔉U||² + ρ||U||² + 2λΩ(U)`.
    pub objective: f64,
    /// `||Y − 𝔏U||² + ||𝔉U||²`.
    pub smooth_cost: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Quadratic data `(𝔏ᵀ𝔏 + 𝔉ᵀ𝔉, 𝔏ᵀY, ||Y||²)` over input coordinates.
#[derive(Clone, Debug)]
pub struct QuadModel {
    repr: QuadRepr,
    yy: f64,
    dim: usize,
}

#[derive(Clone, Debug)]
enum QuadRepr {
    Kron {
        gram0: Mat,
        rty: Mat,
        width: usize,
    },
    Dense {
        gram: Mat,
        b: Vector,
        pos: Vec<Option<usize>>,
    },
}

impl QuadModel {
    pub fn new(y: &FirMatrix, l: &ClosedLoopMap, f: Option<&ClosedLoopMap>) -> Result<Self> {
        let out = l.output_layout();
        let yv = out.vectorize(y)?;
        let dim = l.input_layout().dim();
        let full_cols =
            l.columns().len() == dim && l.columns().iter().enumerate().all(|(p, &c)| p == c);
        if let (Some((reduced, w)), None, true) = (l.kron_factor(), f, full_cols) {
            let ym = Mat::from_fn(reduced.nrows(), w, |r, j| yv[r * w + j]);
            return Ok(Self {
                repr: QuadRepr::Kron {
                    gram0: reduced.tr_mul(reduced),
                    rty: reduced.tr_mul(&ym),
                    width: w,
                },
                yy: yv.norm_squared(),
                dim,
            });
        }
        let mut gram = l.gram();
        if let Some(f) = f {
            if f.columns() != l.columns() {
                return dim_err("𝔉 and 𝔏 carry different coordinates");
            }
            let fm = f.matrix();
            gram += fm.tr_mul(fm);
        }
        let b = l.adjoint(&yv);
        let mut pos = vec![None; dim];
        for (p, &c) in l.columns().iter().enumerate() {
            pos[c] = Some(p);
        }
        Ok(Self {
            repr: QuadRepr::Dense { gram, b, pos },
            yy: yv.norm_squared(),
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn yy(&self) -> f64 {
        self.yy
    }

    fn dense_pos(pos: &[Option<usize>], coords: &[usize]) -> Vec<usize> {
        coords
            .iter()
            .map(|&c| pos[c].expect("coordinate carried by the map"))
            .collect()
    }

    /// Gram block on the given coordinates (without ρ).
    pub fn gram(&self, a: &[usize], b: &[usize]) -> Mat {
        match &self.repr {
            QuadRepr::Kron { gram0, width, .. } => {
                let w = *width;
                Mat::from_fn(a.len(), b.len(), |r, s| {
                    let (ca, cb) = (a[r], b[s]);
                    if ca % w == cb % w {
                        gram0[(ca / w, cb / w)]
                    } else {
                        0.0
                    }
                })
            }
            QuadRepr::Dense { gram, pos, .. } => {
                let pa = Self::dense_pos(pos, a);
                let pb = Self::dense_pos(pos, b);
                Mat::from_fn(pa.len(), pb.len(), |r, s| gram[(pa[r], pb[s])])
            }
        }
    }

    /// `(𝔏ᵀY)` on the given coordinates.
    pub fn rhs(&self, coords: &[usize]) -> Vector {
        match &self.repr {
            QuadRepr::Kron { rty, width, .. } => Vector::from_iterator(
                coords.len(),
                coords.iter().map(|&c| rty[(c / width, c % width)]),
            ),
            QuadRepr::Dense { b, pos, .. } => Vector::from_iterator(
                coords.len(),
                coords.iter().map(|&c| b[pos[c].expect("carried")]),
            ),
        }
    }

    /// Exact restricted least squares; returns `(x, data cost, degenerate)`.
    pub fn restricted(&self, coords: &[usize], rho: f64) -> (Vector, f64, bool) {
        if coords.is_empty() {
            return (Vector::zeros(0), self.yy, false);
        }
        match &self.repr {
            QuadRepr::Kron { gram0, rty, width } => {
                let w = *width;
                let mut by_col: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
                let mut per_j: Vec<Vec<(usize, usize)>> = vec![Vec::new(); w];
                for (p, &c) in coords.iter().enumerate() {
                    per_j[c % w].push((c / w, p));
                }
                for (j, list) in per_j.iter().enumerate() {
                    if !list.is_empty() {
                        let cols: Vec<usize> = list.iter().map(|&(rc, _)| rc).collect();
                        by_col.entry(cols).or_default().push(j);
                    }
                }
                let mut x = Vector::zeros(coords.len());
                let mut degenerate = false;
                let mut bx = 0.0;
                let mut xgx = 0.0;
                for (cols, js) in &by_col {
                    let n = cols.len();
                    let mut g = Mat::from_fn(n, n, |r, s| gram0[(cols[r], cols[s])]);
                    for i in 0..n {
                        g[(i, i)] += rho;
                    }
                    let rhs = Mat::from_fn(n, js.len(), |r, q| rty[(cols[r], js[q])]);
                    let (sol, deg) = solve_psd(&g, &rhs);
                    degenerate |= deg;
                    for (q, &j) in js.iter().enumerate() {
                        let sj = sol.column(q);
                        bx += sj.dot(&rhs.column(q));
                        xgx += sj.dot(&(&g * sj));
                        for (r, &(_, p)) in per_j[j].iter().enumerate() {
                            x[p] = sj[r];
                        }
                    }
                }
                let cost = self.yy - 2.0 * bx + xgx - rho * x.norm_squared();
                (x, cost.max(0.0), degenerate)
            }
            QuadRepr::Dense { .. } => {
                let mut g = self.gram(coords, coords);
                for i in 0..coords.len() {
                    g[(i, i)] += rho;
                }
                let b = self.rhs(coords);
                let (sol, deg) = solve_psd(&g, &Mat::from_column_slice(b.len(), 1, b.as_slice()));
                let x = sol.column(0).into_owned();
                let cost = self.yy - 2.0 * b.dot(&x) + x.dot(&(&g * &x)) - rho * x.norm_squared();
                (x, cost.max(0.0), deg)
            }
        }
    }
}

/// Result of an exact restricted least-squares solve.
#[derive(Clone, Debug)]
pub struct LeastSquares {
    pub u: FirMatrix,
    pub x: Vector,
    pub coords: Vec<usize>,
    /// `||Y − 𝔏U||² + ||𝔉U||²`.
    pub cost: f64,
    /// `cost + ρ||U||²`.
    pub objective: f64,
    pub degenerate: bool,
}

/// Minimizer of `||Y − 𝔏U||² + ||𝔉U||² + ρ||U||²` over `U` supported on `coords`.
pub fn restricted_least_squares(
    y: &FirMatrix,
    l: &ClosedLoopMap,
    f: Option<&ClosedLoopMap>,
    rho: f64,
    coords: &[usize],
) -> Result<LeastSquares> {
    let q = QuadModel::new(y, l, f)?;
    restricted_with(&q, l.input_layout(), rho, coords)
}

/// Restricted least squares over the architecture spanned by `support` groups (masked).
pub fn restricted_least_squares_groups(
    y: &FirMatrix,
    l: &ClosedLoopMap,
    f: Option<&ClosedLoopMap>,
    rho: f64,
    penalty: &GroupStructure,
    support: &[usize],
    mask: Option<&SparsityMask>,
) -> Result<LeastSquares> {
    let coords = architecture_coords(penalty, support, mask)?;
    restricted_least_squares(y, l, f, rho, &coords)
}

fn restricted_with(
    q: &QuadModel,
    layout: &FirLayout,
    rho: f64,
    coords: &[usize],
) -> Result<LeastSquares> {
    let mut c = coords.to_vec();
    c.sort_unstable();
    c.dedup();
    if c.last().is_some_and(|&m| m >= layout.dim()) {
        return invalid("coordinate outside the input layout");
    }
    let (xs, cost, degenerate) = q.restricted(&c, rho);
    let mut x = Vector::zeros(layout.dim());
    for (p, &ci) in c.iter().enumerate() {
        x[ci] = xs[p];
    }
    Ok(LeastSquares {
        u: layout.devectorize(&x)?,
        objective: cost + rho * x.norm_squared(),
        x,
        coords: c,
        cost,
        degenerate,
    })
}

fn mask_flags(mask: Option<&SparsityMask>, layout: &FirLayout) -> Result<Vec<bool>> {
    let mut f = vec![mask.is_none(); layout.dim()];
    if let Some(m) = mask {
        for c in m.coordinates(layout)? {
            f[c] = true;
        }
    }
    Ok(f)
}

/// Coordinates of the architecture subspace `D` spanned by `support` (domain and mask applied).
pub fn architecture_coords(
    penalty: &GroupStructure,
    support: &[usize],
    mask: Option<&SparsityMask>,
) -> Result<Vec<usize>> {
    let allowed = penalty.allowed_coords(support);
    let dom = penalty.domain();
    let m = mask_flags(mask, &penalty.layout)?;
    Ok((0..allowed.len())
        .filter(|&c| allowed[c] && dom[c] && m[c])
        .collect())
}

/// Coordinates of the span of the selected atoms plus free coordinates (per constituent).
fn span_flags(g: &GroupStructure, selected: &[bool]) -> Vec<bool> {
    if g.is_joint() {
        let n0 = g.components[0].group_count();
        let a = span_flags(&g.components[0], &selected[..n0]);
        let b = span_flags(&g.components[1], &selected[n0..]);
        return a.iter().zip(&b).map(|(&x, &y)| x && y).collect();
    }
    let mut f = vec![false; g.layout.dim()];
    for &c in &g.free {
        f[c] = true;
    }
    for (a, &on) in g.atoms.iter().zip(selected) {
        if on {
            for &c in a {
                f[c] = true;
            }
        }
    }
    f
}

/// How the penalty acts on the optimization variable.
enum Mode {
    /// Variable = `x_S`; groups partition the penalized positions.
    Separable {
        groups: Vec<(Vec<usize>, f64)>,
        free: Vec<usize>,
    },
    /// Variable = lifted copies; `x_S = R z`.
    Lifted {
        origin: Vec<usize>,
        groups: Vec<(Vec<usize>, f64)>,
        free: Vec<usize>,
        /// Flat-group index of each lifted group.
        group_ids: Vec<usize>,
    },
    /// Joint sum: prox through projection onto the sum of scaled dual balls.
    Dual {
        balls: [DualBall; 2],
        factors: [f64; 2],
        closed_form: bool,
    },
}

/// `{z : ||z_A|| ≤ s_A, z_free = 0}` on the variable positions.
#[derive(Clone, Debug)]
struct DualBall {
    groups: Vec<(Vec<usize>, f64)>,
    zero: Vec<usize>,
    disjoint: bool,
}

impl DualBall {
    fn project(&self, v: &Vector, scale: f64) -> Vector {
        let mut z = v.clone();
        if scale == 0.0 {
            z.fill(0.0);
            return z;
        }
        for &c in &self.zero {
            z[c] = 0.0;
        }
        let cylinder = |z: &mut Vector, grp: &[usize], r: f64| {
            let n = grp.iter().map(|&c| z[c] * z[c]).sum::<f64>().sqrt();
            if n > r {
                let f = r / n;
                grp.iter().for_each(|&c| z[c] *= f);
            }
        };
        if self.disjoint {
            for (grp, s) in &self.groups {
                cylinder(&mut z, grp, s * scale);
            }
            return z;
        }
        // Dykstra over the intersection of group cylinders.
        let m = self.groups.len();
        let mut incr: Vec<Vector> = vec![Vector::zeros(0); m];
        for _ in 0..10_000 {
            let prev = z.clone();
            for (gi, (grp, s)) in self.groups.iter().enumerate() {
                let before: Vec<f64> = grp
                    .iter()
                    .enumerate()
                    .map(|(q, &c)| z[c] + incr[gi].get(q).copied().unwrap_or(0.0))
                    .collect();
                let mut tmp = z.clone();
                for (q, &c) in grp.iter().enumerate() {
                    tmp[c] = before[q];
                }
                cylinder(&mut tmp, grp, s * scale);
                incr[gi] = Vector::from_iterator(
                    grp.len(),
                    grp.iter().enumerate().map(|(q, &c)| before[q] - tmp[c]),
                );
                for &c in grp {
                    z[c] = tmp[c];
                }
            }
            if (&z - &prev).norm() <= 1e-14 * (1.0 + v.norm()) {
                break;
            }
        }
        z
    }
}

/// Solver state over the active coordinates.
struct Composite {
    s: Vec<usize>,
    g: Mat,
    b: Vector,
    mode: Mode,
    lambda: f64,
    lip: f64,
    /// Running Minkowski split for the dual projection.
    split: std::cell::RefCell<Option<(Vector, Vector)>>,
}

fn group_norm(x: &Vector, idx: &[usize]) -> f64 {
    idx.iter().map(|&c| x[c] * x[c]).sum::<f64>().sqrt()
}

impl Composite {
    fn var_dim(&self) -> usize {
        match &self.mode {
            Mode::Lifted { origin, .. } => origin.len(),
            _ => self.s.len(),
        }
    }

    fn to_x(&self, w: &Vector) -> Vector {
        match &self.mode {
            Mode::Lifted { origin, .. } => {
                let mut x = Vector::zeros(self.s.len());
                for (l, &p) in origin.iter().enumerate() {
                    x[p] += w[l];
                }
                x
            }
            _ => w.clone(),
        }
    }

    fn from_x(&self, x: &Vector) -> Vector {
        match &self.mode {
            Mode::Lifted { origin, .. } => {
                let mut mult = vec![0.0; self.s.len()];
                origin.iter().for_each(|&p| mult[p] += 1.0);
                Vector::from_iterator(origin.len(), origin.iter().map(|&p| x[p] / mult[p]))
            }
            _ => x.clone(),
        }
    }

    /// Gradient in variable space and the smooth value `½xᵀGx − bᵀx`.
    fn grad(&self, w: &Vector) -> (Vector, f64) {
        let x = self.to_x(w);
        let gx = &self.g * &x;
        let val = 0.5 * x.dot(&gx) - self.b.dot(&x);
        let gr = gx - &self.b;
        let g = match &self.mode {
            Mode::Lifted { origin, .. } => {
                Vector::from_iterator(origin.len(), origin.iter().map(|&p| gr[p]))
            }
            _ => gr,
        };
        (g, val)
    }

    fn omega(&self, w: &Vector) -> Option<f64> {
        match &self.mode {
            Mode::Separable { groups, .. } | Mode::Lifted { groups, .. } => {
                Some(groups.iter().map(|(grp, s)| s * group_norm(w, grp)).sum())
            }
            Mode::Dual {
                balls,
                factors,
                closed_form,
            } => closed_form.then(|| {
                balls
                    .iter()
                    .zip(factors)
                    .map(|(bl, f)| {
                        f * bl
                            .groups
                            .iter()
                            .map(|(grp, s)| s * group_norm(w, grp))
                            .sum::<f64>()
                    })
                    .sum()
            }),
        }
    }

    fn prox(&self, v: &Vector, tau: f64) -> Vector {
        match &self.mode {
            Mode::Separable { groups, free } | Mode::Lifted { groups, free, .. } => {
                let mut out = Vector::zeros(v.len());
                for &c in free {
                    out[c] = v[c];
                }
                for (grp, s) in groups {
                    let n = group_norm(v, grp);
                    let t = tau * s;
                    if n > t {
                        let f = 1.0 - t / n;
                        grp.iter().for_each(|&c| out[c] = v[c] * f);
                    }
                }
                out
            }
            Mode::Dual { balls, factors, .. } => {
                let mut split = self.split.borrow_mut();
                let (mut a, mut b) = split
                    .take()
                    .unwrap_or_else(|| (Vector::zeros(v.len()), Vector::zeros(v.len())));
                let scale = 1.0 + v.norm();
                for _ in 0..20_000 {
                    let a_new = balls[0].project(&(v - &b), tau * factors[0]);
                    let b_new = balls[1].project(&(v - &a_new), tau * factors[1]);
                    let change = (&a_new - &a).norm() + (&b_new - &b).norm();
                    a = a_new;
                    b = b_new;
                    if change <= 1e-15 * scale {
                        break;
                    }
                }
                let out = v - &a - &b;
                *split = Some((a, b));
                out
            }
        }
    }

    /// Scaled KKT residual at `w` with gradient `g`.
    fn kkt(&self, w: &Vector, g: &Vector) -> f64 {
        match &self.mode {
            Mode::Separable { groups, free } | Mode::Lifted { groups, free, .. } => {
                let mut r: f64 = free.iter().map(|&c| g[c].abs()).fold(0.0, f64::max);
                for (grp, s) in groups {
                    let t = self.lambda * s;
                    let n = group_norm(w, grp);
                    let res = if n > 0.0 {
                        grp.iter()
                            .map(|&c| {
                                let e = g[c] + t * w[c] / n;
                                e * e
                            })
                            .sum::<f64>()
                            .sqrt()
                    } else {
                        (group_norm(g, grp) - t).max(0.0)
                    };
                    r = r.max(res);
                }
                r
            }
            Mode::Dual { .. } => {
                let step = 1.0 / self.lip;
                let p = self.prox(&(w - g * step), self.lambda * step);
                (w - p).norm() / step
            }
        }
    }
}

fn build_composite(p: &RfdProblem, q: &QuadModel) -> Result<(Composite, Vec<bool>)> {
    let g = &p.penalty;
    if g.kind == PenaltyKind::JointMax {
        return Err(RfdError::Unsupported("joint_max is evaluation-only".into()));
    }
    let layout = g.layout;
    let n_groups = g.group_count();
    let selected: Vec<bool> = match &p.support_constraint {
        None => vec![true; n_groups],
        Some(s) => {
            let mut f = vec![false; n_groups];
            s.iter().for_each(|&i| f[i] = true);
            f
        }
    };
    let span = span_flags(g, &selected);
    let dom = g.domain();
    let mask = mask_flags(p.mask.as_ref(), &layout)?;
    let s: Vec<usize> = (0..layout.dim())
        .filter(|&c| span[c] && dom[c] && mask[c])
        .collect();
    let mut pos = vec![None; layout.dim()];
    for (i, &c) in s.iter().enumerate() {
        pos[c] = Some(i);
    }
    let mut gram = q.gram(&s, &s);
    for i in 0..s.len() {
        gram[(i, i)] += p.rho;
    }
    let b = q.rhs(&s);
    let restrict = |coords: &[usize], free: &[bool]| -> Vec<usize> {
        coords
            .iter()
            .filter(|&&c| !free[c])
            .filter_map(|&c| pos[c])
            .collect()
    };
    let free_of = |c: &GroupStructure| {
        let mut f = vec![false; layout.dim()];
        c.free.iter().for_each(|&i| f[i] = true);
        f
    };
    let lmax = power_lmax(&gram, 1e-10, 10_000);
    let mode = if g.is_joint() {
        let mut balls = Vec::with_capacity(2);
        let mut closed_form = true;
        for c in &g.components {
            let fr = free_of(c);
            let groups: Vec<(Vec<usize>, f64)> = c
                .atoms
                .iter()
                .zip(&c.weights)
                .map(|(a, &k)| (restrict(a, &fr), 1.0 / k))
                .collect();
            let zero: Vec<usize> = c.free.iter().filter_map(|&i| pos[i]).collect();
            let disjoint = c.atoms_disjoint();
            closed_form &= disjoint;
            balls.push(DualBall {
                groups,
                zero,
                disjoint,
            });
        }
        let balls: [DualBall; 2] = [balls.remove(0), balls.remove(0)];
        Mode::Dual {
            balls,
            factors: [1.0 - g.theta, g.theta],
            closed_form,
        }
    } else if g.atoms_disjoint() {
        let fr = free_of(g);
        let groups = g
            .atoms
            .iter()
            .zip(&g.weights)
            .map(|(a, &k)| (restrict(a, &fr), 1.0 / k))
            .collect();
        let free = (0..s.len()).filter(|&i| fr[s[i]]).collect();
        Mode::Separable { groups, free }
    } else {
        let fr = free_of(g);
        let mut origin = Vec::new();
        let mut groups = Vec::new();
        let mut group_ids = Vec::new();
        for (gi, (a, &k)) in g.atoms.iter().zip(&g.weights).enumerate() {
            if !selected[gi] {
                continue;
            }
            let mut grp = Vec::new();
            for p in restrict(a, &fr) {
                grp.push(origin.len());
                origin.push(p);
            }
            groups.push((grp, 1.0 / k));
            group_ids.push(gi);
        }
        let mut free = Vec::new();
        for (i, &c) in s.iter().enumerate() {
            if fr[c] {
                free.push(origin.len());
                origin.push(i);
            }
        }
        Mode::Lifted {
            origin,
            groups,
            free,
            group_ids,
        }
    };
    let mult = match &mode {
        Mode::Lifted { origin, .. } => {
            let mut m = vec![0usize; s.len()];
            origin.iter().for_each(|&i| m[i] += 1);
            m.into_iter().max().unwrap_or(1).max(1) as f64
        }
        _ => 1.0,
    };
    let lip = (lmax * mult * (1.0 + 1e-6)).max(1e-300);
    Ok((
        Composite {
            s,
            g: gram,
            b,
            mode,
            lambda: p.lambda,
            lip,
            split: std::cell::RefCell::new(None),
        },
        selected,
    ))
}

/// Solves the regularized problem (or the architect problem when a support constraint is set).
pub fn solve_rfd(p: &RfdProblem, opts: &SolveOptions) -> Result<RfdSolution> {
    solve_rfd_warm(p, opts, None)
}

/// [`solve_rfd`] started from a vectorized warm start in the problem layout.
pub fn solve_rfd_warm(
    p: &RfdProblem,
    opts: &SolveOptions,
    warm: Option<&Vector>,
) -> Result<RfdSolution> {
    p.validate()?;
    let q = p.quad()?;
    solve_with(p, &q, opts, warm)
}

fn solve_with(
    p: &RfdProblem,
    q: &QuadModel,
    opts: &SolveOptions,
    warm: Option<&Vector>,
) -> Result<RfdSolution> {
    let layout = *p.layout();
    let (comp, _) = build_composite(p, q)?;
    let scale = comp.b.amax().max(1.0);
    let n = comp.var_dim();
    let step = 1.0 / comp.lip;
    let tau = p.lambda * step;
    let x0 = match warm {
        Some(wv) if wv.len() == layout.dim() => {
            Vector::from_iterator(comp.s.len(), comp.s.iter().map(|&c| wv[c]))
        }
        Some(_) => return dim_err("warm start does not match the layout"),
        None => Vector::zeros(comp.s.len()),
    };
    let mut x = comp.from_x(&x0);
    let fn_restart = comp.omega(&x).is_some();
    let total = |w: &Vector, smooth: f64| smooth + p.lambda * comp.omega(w).unwrap_or(0.0);
    let (mut gx, mut sx) = comp.grad(&x);
    let mut fx = total(&x, sx);
    let mut yk = x.clone();
    let mut t = 1.0f64;
    let mut iterations = 0;
    let mut converged = n == 0;
    let mut kkt = if n == 0 {
        0.0
    } else {
        comp.kkt(&x, &gx) / scale
    };
    if kkt <= opts.tol {
        converged = true;
    }
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let (gy, _) = comp.grad(&yk);
        let xn = comp.prox(&(&yk - &gy * step), tau);
        let (gxn, sxn) = comp.grad(&xn);
        if fn_restart {
            let fxn = total(&xn, sxn);
            if fxn > fx && yk != x {
                yk = x.clone();
                t = 1.0;
                continue;
            }
            fx = fxn.min(fx);
        } else if (&yk - &xn).dot(&(&xn - &x)) > 0.0 {
            t = 1.0;
        }
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        yk = &xn + (&xn - &x) * ((t - 1.0) / tn);
        x = xn;
        gx = gxn;
        sx = sxn;
        t = tn;
        if iterations % opts.check_every.max(1) == 0 {
            kkt = comp.kkt(&x, &gx) / scale;
            if kkt <= opts.tol {
                converged = true;
            }
        }
    }
    if !converged {
        kkt = comp.kkt(&x, &gx) / scale;
        converged = kkt <= opts.tol;
    }
    if !converged {
        log::warn!("solver stopped after {iterations} iterations with KKT residual {kkt:.3e}");
    }
    let _ = sx;
    finish(p, q, &comp, &x, kkt, iterations, converged, opts)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    p: &RfdProblem,
    q: &QuadModel,
    comp: &Composite,
    w: &Vector,
    kkt: f64,
    iterations: usize,
    converged: bool,
    opts: &SolveOptions,
) -> Result<RfdSolution> {
    let layout = *p.layout();
    let xs = comp.to_x(w);
    let mut x = Vector::zeros(layout.dim());
    for (i, &c) in comp.s.iter().enumerate() {
        x[c] = xs[i];
    }
    let group_norms = match &comp.mode {
        Mode::Lifted {
            groups, group_ids, ..
        } => {
            let mut gn = vec![0.0; p.penalty.group_count()];
            for ((grp, _), &id) in groups.iter().zip(group_ids) {
                gn[id] = group_norm(w, grp);
            }
            gn
        }
        _ => atom_norms(&x, &p.penalty),
    };
    let support = extract_support(&group_norms, opts);
    let g_plain = {
        let mut g = comp.g.clone();
        for i in 0..comp.s.len() {
            g[(i, i)] -= p.rho;
        }
        g
    };
    let smooth = (q.yy() - 2.0 * comp.b.dot(&xs) + xs.dot(&(&g_plain * &xs))).max(0.0);
    let omega = match comp.omega(w) {
        Some(o) => o,
        None => eval_norm_vec(&x, &p.penalty),
    };
    Ok(RfdSolution {
        u: layout.devectorize(&x)?,
        objective: smooth + p.rho * xs.norm_squared() + 2.0 * p.lambda * omega,
        smooth_cost: smooth,
        x,
        support,
        group_norms,
        kkt_residual: kkt,
        iterations,
        converged,
    })
}

/// Active groups: norm above `max(abs, rel × largest)`.
pub fn extract_support(group_norms: &[f64], opts: &SolveOptions) -> Vec<usize> {
    let top = group_norms.iter().cloned().fold(0.0, f64::max);
    let thr = opts.support_abs.max(opts.support_rel * top);
    (0..group_norms.len())
        .filter(|&i| group_norms[i] > thr)
        .collect()
}

/// Support-constrained solve `U ∈ 𝒜_*`.
pub fn solve_architect(p: &RfdProblem, opts: &SolveOptions) -> Result<RfdSolution> {
    if p.support_constraint.is_none() {
        return invalid("architect solve needs a support constraint");
    }
    solve_rfd(p, opts)
}

/// Ranked enumeration of supports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub best: Vec<usize>,
    pub best_cost: f64,
    /// `(support, objective)` by increasing objective.
    pub ranking: Vec<(Vec<usize>, f64)>,
}

/// Number of supports with at most `s` of `n` groups, the empty one included.
pub fn support_count(n: usize, s: usize) -> u128 {
    let mut total: u128 = 1;
    let mut c: u128 = 1;
    for k in 1..=s.min(n) {
        c = c * (n - k + 1) as u128 / k as u128;
        total += c;
    }
    total
}

/// Exhaustive search over supports with at most `s` groups, minimizing
/// `||Y − 𝔏U||² + ||𝔉U||² + ρ||U||²`; ties within 1e-12 go to the lexicographically smallest support.
pub fn brute_force_oracle(
    y: &FirMatrix,
    l: &ClosedLoopMap,
    f: Option<&ClosedLoopMap>,
    rho: f64,
    s: usize,
    penalty: &GroupStructure,
    cap: u128,
) -> Result<OracleResult> {
    let n = penalty.group_count();
    let count = support_count(n, s);
    if count > cap {
        return Err(RfdError::Cap { count, cap });
    }
    let q = QuadModel::new(y, l, f)?;
    let mut supports = vec![Vec::new()];
    supports.extend(crate::penalties::subsets_upto(n, s));
    let layout = *l.input_layout();
    let dom = penalty.domain();
    let costs: Vec<f64> = supports
        .par_iter()
        .map(|sup| {
            let mut sel = vec![false; n];
            sup.iter().for_each(|&i| sel[i] = true);
            let span = span_flags(penalty, &sel);
            let coords: Vec<usize> = (0..layout.dim()).filter(|&c| span[c] && dom[c]).collect();
            let (xs, cost, _) = q.restricted(&coords, rho);
            cost + rho * xs.norm_squared()
        })
        .collect();
    let mut ranking: Vec<(Vec<usize>, f64)> = supports.into_iter().zip(costs).collect();
    ranking.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let min = ranking[0].1;
    let tie = min.abs() * 1e-12 + 1e-300;
    let best_idx = (0..ranking.len())
        .filter(|&i| ranking[i].1 <= min + tie)
        .min_by(|&i, &j| ranking[i].0.cmp(&ranking[j].0))
        .expect("nonempty ranking");
    let best = ranking.remove(best_idx);
    ranking.insert(0, best.clone());
    Ok(OracleResult {
        best: best.0,
        best_cost: best.1,
        ranking,
    })
}

/// Architecture and debiased controller.
#[derive(Clone, Debug)]
pub struct TwoStep {
    pub step1: RfdSolution,
    pub support: Vec<usize>,
    pub step2: LeastSquares,
    /// H2 norm of the debiased closed loop, `sqrt(||Y − 𝔏U||² + ||𝔉U||²)`.
    pub closed_loop_h2: f64,
    /// Smooth cost of step 1 restricted to the same horizon as step 1.
    pub step1_smooth: f64,
}

/// Long-horizon data for the debiasing step, with the penalty instantiated on its layout.
#[derive(Clone, Debug)]
pub struct EvalProblem {
    pub y: FirMatrix,
    pub l: ClosedLoopMap,
    pub f: Option<ClosedLoopMap>,
    pub rho: f64,
    pub penalty: GroupStructure,
    pub mask: Option<SparsityMask>,
}

impl EvalProblem {
    pub fn new(
        ap: &AssembledProblem,
        penalty: GroupStructure,
        mask: Option<SparsityMask>,
    ) -> Result<Self> {
        if penalty.layout != *ap.l.input_layout() {
            return dim_err("penalty layout differs from the evaluation layout");
        }
        Ok(Self {
            y: ap.y.clone(),
            l: ap.l.clone(),
            f: ap.f.clone(),
            rho: ap.rho,
            penalty,
            mask,
        })
    }

    fn quad(&self) -> Result<QuadModel> {
        QuadModel::new(&self.y, &self.l, self.f.as_ref())
    }
}

/// Regularized solve, then unregularized restricted solve on the selected architecture.
pub fn two_step(p: &RfdProblem, eval: &EvalProblem, opts: &SolveOptions) -> Result<TwoStep> {
    let step1 = solve_rfd(p, opts)?;
    let q = eval.quad()?;
    debias(step1, eval, &q)
}

fn debias(step1: RfdSolution, eval: &EvalProblem, q: &QuadModel) -> Result<TwoStep> {
    let coords = architecture_coords(&eval.penalty, &step1.support, eval.mask.as_ref())?;
    let step2 = restricted_with(q, eval.l.input_layout(), eval.rho, &coords)?;
    Ok(TwoStep {
        support: step1.support.clone(),
        closed_loop_h2: step2.cost.sqrt(),
        step1_smooth: step1.smooth_cost,
        step1,
        step2,
    })
}

/// Architecture counts of a support.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureCounts {
    pub actuators: usize,
    pub sensors: usize,
    pub links: usize,
}

/// Actuators (rows) and sensors (columns) touched by the architecture subspace, plus active links.
pub fn architecture_counts(penalty: &GroupStructure, support: &[usize]) -> ArchitectureCounts {
    let lay = penalty.layout;
    let allowed = penalty.allowed_coords(support);
    let dom = penalty.domain();
    let mut rows = vec![false; lay.rows];
    let mut cols = vec![false; lay.cols];
    for c in 0..allowed.len() {
        if allowed[c] && dom[c] {
            let (_, i, j) = lay.position(c);
            rows[i] = true;
            cols[j] = true;
        }
    }
    let flat = penalty.flat_groups();
    let links = support
        .iter()
        .filter(|&&g| matches!(flat[g].label, AtomLabel::Link(_)))
        .count();
    ArchitectureCounts {
        actuators: rows.iter().filter(|&&b| b).count(),
        sensors: cols.iter().filter(|&&b| b).count(),
        links,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub support: Vec<usize>,
    pub counts: ArchitectureCounts,
    pub closed_loop_h2: f64,
    pub relative_degradation_pct: f64,
    pub objective: f64,
    pub kkt_residual: f64,
    pub converged: bool,
}

/// Warm-started sweep over a descending λ grid with debiased closed-loop norms.
pub fn lambda_sweep(
    template: &RfdProblem,
    grid: &[f64],
    eval: &EvalProblem,
    opts: &SolveOptions,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return invalid("λ grid is empty");
    }
    if grid.windows(2).any(|w| w[1] > w[0]) {
        return invalid("λ grid must be descending");
    }
    template.validate()?;
    let q = template.quad()?;
    let mut warm: Option<Vector> = None;
    let mut steps = Vec::with_capacity(grid.len());
    for &lam in grid {
        let mut p = template.clone();
        p.lambda = lam;
        let sol = solve_with(&p, &q, opts, warm.as_ref())?;
        warm = Some(sol.x.clone());
        steps.push(sol);
    }
    let qe = eval.quad()?;
    let all: Vec<usize> = (0..eval.penalty.group_count()).collect();
    let full_coords = architecture_coords(&eval.penalty, &all, eval.mask.as_ref())?;
    let full = restricted_with(&qe, eval.l.input_layout(), eval.rho, &full_coords)?;
    let debiased: Vec<Result<TwoStep>> = steps
        .into_par_iter()
        .map(|s| debias(s, eval, &qe))
        .collect();
    let mut rows = Vec::with_capacity(grid.len());
    for (lam, ts) in grid.iter().zip(debiased) {
        let ts = ts?;
        let deg = if full.cost > 0.0 {
            100.0 * (ts.step2.cost - full.cost) / full.cost
        } else {
            0.0
        };
        rows.push(SweepRow {
            lambda: *lam,
            counts: architecture_counts(&eval.penalty, &ts.support),
            support: ts.support,
            closed_loop_h2: ts.closed_loop_h2,
            relative_degradation_pct: deg,
            objective: ts.step1.objective,
            kkt_residual: ts.step1.kkt_residual,
            converged: ts.step1.converged,
        });
    }
    Ok(rows)
}

/// Dual certificate from a solution: `Z = −∇(½-scaled smooth)/λ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktCertificate {
    /// Largest dual group norm over `𝒜_*`.
    pub z_on: f64,
    /// Largest dual group norm outside `𝒜_*`.
    pub z_off: f64,
    pub strictly_feasible: bool,
}

pub fn kkt_certificate(
    sol: &RfdSolution,
    p: &RfdProblem,
    a_star: &[usize],
) -> Result<KktCertificate> {
    if !(p.lambda > 0.0) {
        return invalid("λ must be positive");
    }
    if !p.penalty.is_partition() {
        return Err(RfdError::Unsupported(
            "KKT certificates need a partition penalty".into(),
        ));
    }
    let layout = p.layout();
    let yv = p.l.output_layout().vectorize(&p.y)?;
    let pos: Vec<Option<usize>> = {
        let mut v = vec![None; layout.dim()];
        p.l.columns()
            .iter()
            .enumerate()
            .for_each(|(i, &c)| v[c] = Some(i));
        v
    };
    let xl = Vector::from_iterator(p.l.ncols(), p.l.columns().iter().map(|&c| sol.x[c]));
    let resid = &yv - p.l.apply(&xl);
    let back = p.l.adjoint(&resid);
    let mut z = Vector::zeros(layout.dim());
    for c in 0..layout.dim() {
        if let Some(i) = pos[c] {
            z[c] = back[i];
        }
    }
    if let Some(f) = &p.f {
        let xf = Vector::from_iterator(f.ncols(), f.columns().iter().map(|&c| sol.x[c]));
        let ff = f.adjoint(&f.apply(&xf));
        for (i, &c) in f.columns().iter().enumerate() {
            z[c] -= ff[i];
        }
    }
    z -= &sol.x * p.rho;
    z /= p.lambda;
    let mut on: f64 = 0.0;
    let mut off: f64 = 0.0;
    let mut in_star = vec![false; p.penalty.group_count()];
    a_star.iter().for_each(|&g| in_star[g] = true);
    for (gi, (a, &k)) in p.penalty.atoms.iter().zip(&p.penalty.weights).enumerate() {
        let n = k * group_norm(&z, a);
        if in_star[gi] {
            on = on.max(n);
        } else {
            off = off.max(n);
        }
    }
    Ok(KktCertificate {
        z_on: on,
        z_off: off,
        strictly_feasible: off < 1.0 - 1e-9,
    })
}
