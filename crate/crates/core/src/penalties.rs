//! Atomic-norm penalties on the Youla coordinate space: group catalogs, norm and
//! dual-norm evaluation, proximal maps, lifting of overlapping atoms and
//! communication-link atoms derived from graph powers.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Result, RfdError};
use crate::firlin::{bool_mul, BoolMat, FirLayout, FirMatrix, SparsityMask};
use crate::linalg::Vector;

/// Default cap on enumerated actuator+sensor atoms.
pub const ATOM_CAP: u128 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    Actuator,
    Sensor,
    ActuatorSensor,
    Comm,
    JointSum,
    JointMax,
}

/// What an atom stands for in the architecture.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtomLabel {
    Row(usize),
    Col(usize),
    Block { rows: Vec<usize>, cols: Vec<usize> },
    Link(usize),
}

/// Atomic decomposition of a Youla layout.
///
/// Atom `A` contributes `||U_A|| / k_A`; `free` coordinates are unpenalized and
/// coordinates outside `free ∪ atoms` are not representable (norm `+∞`).
#[derive(Clone, Debug, PartialEq)]
pub struct GroupStructure {
    pub kind: PenaltyKind,
    pub layout: FirLayout,
    pub atoms: Vec<Vec<usize>>,
    /// Normalization constants `k_A`.
    pub weights: Vec<f64>,
    pub labels: Vec<AtomLabel>,
    pub free: Vec<usize>,
    pub theta: f64,
    /// For joint kinds: `[comm-like, actuator-like]`, weighted `1 − θ` and `θ`.
    pub components: Vec<GroupStructure>,
}

impl GroupStructure {
    fn simple(
        kind: PenaltyKind,
        layout: FirLayout,
        atoms: Vec<Vec<usize>>,
        weights: Vec<f64>,
        labels: Vec<AtomLabel>,
    ) -> Self {
        Self {
            kind,
            layout,
            atoms,
            weights,
            labels,
            free: Vec::new(),
            theta: 0.0,
            components: Vec::new(),
        }
    }

    /// One atom per row of `U` (actuator norm).
    pub fn actuator(layout: &FirLayout) -> Self {
        let atoms = (0..layout.rows).map(|i| layout.row_coords(i)).collect();
        let labels = (0..layout.rows).map(AtomLabel::Row).collect();
        Self::simple(
            PenaltyKind::Actuator,
            *layout,
            atoms,
            vec![1.0; layout.rows],
            labels,
        )
    }

    /// One atom per column of `U` (sensor norm).
    pub fn sensor(layout: &FirLayout) -> Self {
        let atoms = (0..layout.cols).map(|j| layout.col_coords(j)).collect();
        let labels = (0..layout.cols).map(AtomLabel::Col).collect();
        Self::simple(
            PenaltyKind::Sensor,
            *layout,
            atoms,
            vec![1.0; layout.cols],
            labels,
        )
    }

    /// Link atoms with unit weights; the base subspace is free.
    pub fn comm(layout: &FirLayout, derivation: &CommAtomDerivation) -> Result<Self> {
        let atoms = derivation
            .link_masks
            .iter()
            .map(|m| m.coordinates(layout))
            .collect::<Result<Vec<_>>>()?;
        let free = derivation.base_mask.coordinates(layout)?;
        let n = atoms.len();
        let mut g = Self::simple(
            PenaltyKind::Comm,
            *layout,
            atoms,
            vec![1.0; n],
            (0..n).map(AtomLabel::Link).collect(),
        );
        g.free = free;
        Ok(g)
    }

    /// `(1 − θ)·first + θ·second`.
    pub fn joint_sum(theta: f64, first: GroupStructure, second: GroupStructure) -> Result<Self> {
        Self::joint(PenaltyKind::JointSum, theta, first, second)
    }

    /// `max{(1 − θ)·first, θ·second}` (evaluation only).
    pub fn joint_max(theta: f64, first: GroupStructure, second: GroupStructure) -> Result<Self> {
        Self::joint(PenaltyKind::JointMax, theta, first, second)
    }

    fn joint(
        kind: PenaltyKind,
        theta: f64,
        first: GroupStructure,
        second: GroupStructure,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return invalid("theta must lie in [0, 1]");
        }
        if first.layout != second.layout {
            return dim_err("joint penalty constituents use different layouts");
        }
        Ok(Self {
            kind,
            layout: first.layout,
            atoms: Vec::new(),
            weights: Vec::new(),
            labels: Vec::new(),
            free: Vec::new(),
            theta,
            components: vec![first, second],
        })
    }

    pub fn is_joint(&self) -> bool {
        matches!(self.kind, PenaltyKind::JointSum | PenaltyKind::JointMax)
    }

    pub fn is_partition(&self) -> bool {
        matches!(self.kind, PenaltyKind::Actuator | PenaltyKind::Sensor)
    }

    /// True when no coordinate belongs to two atoms.
    pub fn atoms_disjoint(&self) -> bool {
        let mut seen = vec![false; self.layout.dim()];
        for a in &self.atoms {
            for &c in a {
                if seen[c] {
                    return false;
                }
                seen[c] = true;
            }
        }
        true
    }

    /// Atoms, weights `1/k_A`-scaled by the joint factor, and the owning component for every group.
    pub fn flat_groups(&self) -> Vec<FlatGroup> {
        if self.is_joint() {
            let f = [1.0 - self.theta, self.theta];
            self.components
                .iter()
                .enumerate()
                .flat_map(|(ci, c)| {
                    c.flat_groups().into_iter().map(move |mut g| {
                        g.scale *= f[ci];
                        g.component = ci;
                        g
                    })
                })
                .collect()
        } else {
            self.atoms
                .iter()
                .zip(&self.weights)
                .zip(&self.labels)
                .map(|((a, &k), l)| FlatGroup {
                    coords: a.clone(),
                    scale: 1.0 / k,
                    label: l.clone(),
                    component: 0,
                })
                .collect()
        }
    }

    /// Number of selectable groups (atoms, concatenated over joint constituents).
    pub fn group_count(&self) -> usize {
        if self.is_joint() {
            self.components.iter().map(|c| c.group_count()).sum()
        } else {
            self.atoms.len()
        }
    }

    /// Coordinates representable with finite norm.
    pub fn domain(&self) -> Vec<bool> {
        if self.is_joint() {
            let a = self.components[0].domain();
            let b = self.components[1].domain();
            return a.iter().zip(&b).map(|(&x, &y)| x && y).collect();
        }
        let mut d = vec![false; self.layout.dim()];
        for &c in self.atoms.iter().flatten().chain(self.free.iter()) {
            d[c] = true;
        }
        d
    }

    /// Architecture subspace spanned by the active groups (indices into [`GroupStructure::flat_groups`]).
    pub fn allowed_coords(&self, active: &[usize]) -> Vec<bool> {
        if self.is_joint() {
            let n0 = self.components[0].group_count();
            let a0: Vec<usize> = active.iter().filter(|&&g| g < n0).copied().collect();
            let a1: Vec<usize> = active
                .iter()
                .filter(|&&g| g >= n0)
                .map(|&g| g - n0)
                .collect();
            let x = self.components[0].allowed_coords(&a0);
            let y = self.components[1].allowed_coords(&a1);
            return x.iter().zip(&y).map(|(&p, &q)| p && q).collect();
        }
        let lay = self.layout;
        let mut rows = vec![false; lay.rows];
        let mut cols = vec![false; lay.cols];
        let mut out = vec![false; lay.dim()];
        let mut any_block = false;
        for &g in active {
            match &self.labels[g] {
                AtomLabel::Row(i) => rows[*i] = true,
                AtomLabel::Col(j) => cols[*j] = true,
                AtomLabel::Block { rows: r, cols: c } => {
                    any_block = true;
                    r.iter().for_each(|&i| rows[i] = true);
                    c.iter().for_each(|&j| cols[j] = true);
                }
                AtomLabel::Link(_) => {
                    for &c in &self.atoms[g] {
                        out[c] = true;
                    }
                }
            }
        }
        match self.kind {
            PenaltyKind::Actuator => cols.iter_mut().for_each(|c| *c = true),
            PenaltyKind::Sensor => rows.iter_mut().for_each(|r| *r = true),
            _ => {}
        }
        let rowcol = matches!(self.kind, PenaltyKind::Actuator | PenaltyKind::Sensor) || any_block;
        for c in 0..lay.dim() {
            let (_, i, j) = lay.position(c);
            if rowcol && rows[i] && cols[j] {
                out[c] = true;
            }
        }
        for &c in &self.free {
            out[c] = true;
        }
        out
    }
}

/// A group with its penalty scale (`(joint factor)/k_A`).
#[derive(Clone, Debug, PartialEq)]
pub struct FlatGroup {
    pub coords: Vec<usize>,
    pub scale: f64,
    pub label: AtomLabel,
    pub component: usize,
}

fn subset_count(n: usize, k: usize) -> u128 {
    let mut total: u128 = 0;
    let mut c: u128 = 1;
    for a in 1..=k.min(n) {
        c = c * (n - a + 1) as u128 / a as u128;
        total += c;
    }
    total
}

/// All row-subset × column-subset atoms with at most `k_a` rows and `k_s` columns,
/// weights `k_A = (rows·cols + 0.1)^{-1/2}`.
pub fn build_actuator_sensor_atoms(
    layout: &FirLayout,
    k_a: usize,
    k_s: usize,
) -> Result<GroupStructure> {
    build_actuator_sensor_atoms_capped(layout, k_a, k_s, ATOM_CAP)
}

pub fn build_actuator_sensor_atoms_capped(
    layout: &FirLayout,
    k_a: usize,
    k_s: usize,
    cap: u128,
) -> Result<GroupStructure> {
    let (na, ns) = (layout.rows, layout.cols);
    if k_a < 1 || k_a > na || k_s < 1 || k_s > ns {
        return invalid(format!("need 1 ≤ k_a ≤ {na} and 1 ≤ k_s ≤ {ns}"));
    }
    let count = subset_count(na, k_a) * subset_count(ns, k_s);
    if count > cap {
        return Err(RfdError::Cap { count, cap });
    }
    let row_sets = subsets_upto(na, k_a);
    let col_sets = subsets_upto(ns, k_s);
    let mut atoms = Vec::with_capacity(count as usize);
    let mut weights = Vec::with_capacity(count as usize);
    let mut labels = Vec::with_capacity(count as usize);
    for r in &row_sets {
        for c in &col_sets {
            let mut coords = Vec::with_capacity(layout.taps.count * r.len() * c.len());
            for k in 0..layout.taps.count {
                for &i in r {
                    for &j in c {
                        coords.push(layout.index(k, i, j));
                    }
                }
            }
            atoms.push(coords);
            weights.push(((r.len() * c.len()) as f64 + 0.1).powf(-0.5));
            labels.push(AtomLabel::Block {
                rows: r.clone(),
                cols: c.clone(),
            });
        }
    }
    Ok(GroupStructure::simple(
        PenaltyKind::ActuatorSensor,
        *layout,
        atoms,
        weights,
        labels,
    ))
}

/// Nonempty subsets of `0..n` with at most `k` elements, by size then lexicographically.
pub fn subsets_upto(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for size in 1..=k.min(n) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(idx.clone());
            let mut p = size;
            while p > 0 && idx[p - 1] == n - size + p - 1 {
                p -= 1;
            }
            if p == 0 {
                break;
            }
            idx[p - 1] += 1;
            for q in p..size {
                idx[q] = idx[q - 1] + 1;
            }
        }
    }
    out
}

/// Base communication subspace and per-link atom masks.
#[derive(Clone, Debug, PartialEq)]
pub struct CommAtomDerivation {
    pub base_adjacency: BoolMat,
    /// Each link is a set of directed edges `(from sensor j, to actuator i)`.
    pub added_links: Vec<Vec<(usize, usize)>>,
    pub base_mask: SparsityMask,
    pub link_masks: Vec<SparsityMask>,
}

fn identity_bool(n: usize) -> BoolMat {
    BoolMat::from_fn(n, n, |i, j| i == j)
}

/// `supp(Γ^{k−1})` for `k = 1..=depth` (tap 0 empty) plus the saturated tail.
fn power_masks(gamma: &BoolMat, depth: usize) -> (Vec<BoolMat>, BoolMat) {
    let n = gamma.nrows();
    let mut taps = vec![BoolMat::from_element(n, n, false)];
    let mut p = identity_bool(n);
    for _ in 1..=depth {
        taps.push(p.clone());
        p = bool_mul(&p, gamma);
    }
    let mut tail = p;
    for _ in 0..n {
        tail = bool_mul(&tail, gamma);
    }
    (taps, tail)
}

/// Per-link masks `supp((Γ+ℓ)^{k−1}) \ supp(Γ^{k−1})`, each derived against the base graph.
pub fn derive_comm_atoms(
    gamma: &BoolMat,
    links: &[(usize, usize)],
    depth: usize,
) -> Result<CommAtomDerivation> {
    let grouped: Vec<Vec<(usize, usize)>> = links.iter().map(|&l| vec![l]).collect();
    derive_comm_link_sets(gamma, &grouped, depth)
}

/// As [`derive_comm_atoms`], with every link a set of directed edges (e.g. both directions).
pub fn derive_comm_link_sets(
    gamma: &BoolMat,
    links: &[Vec<(usize, usize)>],
    depth: usize,
) -> Result<CommAtomDerivation> {
    let n = gamma.nrows();
    if gamma.ncols() != n {
        return dim_err("adjacency must be square");
    }
    if (0..n).any(|i| !gamma[(i, i)]) {
        return invalid("adjacency needs a true diagonal");
    }
    if depth < 1 {
        return invalid("depth must be at least 1");
    }
    let (base_taps, base_tail) = power_masks(gamma, depth);
    let mut link_masks = Vec::with_capacity(links.len());
    for (l, edges) in links.iter().enumerate() {
        let mut g = gamma.clone();
        for &(from, to) in edges {
            if from >= n || to >= n {
                return dim_err(format!("link {l} references node outside 0..{n}"));
            }
            if gamma[(to, from)] {
                return invalid(format!(
                    "link {l} ({from} -> {to}) is already in the base graph"
                ));
            }
            g[(to, from)] = true;
        }
        let (taps, tail) = power_masks(&g, depth);
        let diff = |a: &BoolMat, b: &BoolMat| a.zip_map(b, |x, y| x && !y);
        let per_tap = taps
            .iter()
            .zip(&base_taps)
            .map(|(a, b)| diff(a, b))
            .collect();
        link_masks.push(SparsityMask::new(per_tap, diff(&tail, &base_tail))?);
    }
    Ok(CommAtomDerivation {
        base_adjacency: gamma.clone(),
        added_links: links.to_vec(),
        base_mask: SparsityMask::new(base_taps, base_tail)?,
        link_masks,
    })
}

fn group_norm(x: &Vector, coords: &[usize]) -> f64 {
    coords.iter().map(|&c| x[c] * x[c]).sum::<f64>().sqrt()
}

/// Atomic norm of `U`.
pub fn eval_norm(u: &FirMatrix, g: &GroupStructure) -> Result<f64> {
    let x = g.layout.vectorize(u)?;
    Ok(eval_norm_vec(&x, g))
}

/// Atomic norm of a vectorized `U` in `g.layout`.
pub fn eval_norm_vec(x: &Vector, g: &GroupStructure) -> f64 {
    match g.kind {
        PenaltyKind::JointSum => {
            (1.0 - g.theta) * eval_norm_vec(x, &g.components[0])
                + g.theta * eval_norm_vec(x, &g.components[1])
        }
        PenaltyKind::JointMax => ((1.0 - g.theta) * eval_norm_vec(x, &g.components[0]))
            .max(g.theta * eval_norm_vec(x, &g.components[1])),
        _ => {
            let dom = g.domain();
            if x.iter().zip(&dom).any(|(&v, &d)| !d && v != 0.0) {
                return f64::INFINITY;
            }
            if g.atoms_disjoint() {
                let free = free_flags(g);
                g.atoms
                    .iter()
                    .zip(&g.weights)
                    .map(|(a, &k)| {
                        let pen: Vec<usize> = a.iter().copied().filter(|&c| !free[c]).collect();
                        group_norm(x, &pen) / k
                    })
                    .sum()
            } else {
                latent_decomposition(x, g).value
            }
        }
    }
}

fn free_flags(g: &GroupStructure) -> Vec<bool> {
    let mut f = vec![false; g.layout.dim()];
    for &c in &g.free {
        f[c] = true;
    }
    f
}

/// Dual of a partition norm: `max_A k_A ||V_A||`.
pub fn eval_dual_norm(v: &FirMatrix, g: &GroupStructure) -> Result<f64> {
    if !g.is_partition() {
        return Err(RfdError::Unsupported(format!(
            "dual norm of {:?} penalties is outside certification scope",
            g.kind
        )));
    }
    let x = g.layout.vectorize(v)?;
    Ok(dual_norm_vec(&x, g))
}

pub(crate) fn dual_norm_vec(x: &Vector, g: &GroupStructure) -> f64 {
    g.atoms
        .iter()
        .zip(&g.weights)
        .map(|(a, &k)| k * group_norm(x, a))
        .fold(0.0, f64::max)
}

/// Proximal map of `threshold·Ω` for partition norms (or latent norms with disjoint atoms).
pub fn prox(u: &FirMatrix, g: &GroupStructure, threshold: f64) -> Result<FirMatrix> {
    if !(threshold > 0.0) {
        return invalid("threshold must be positive");
    }
    if g.is_joint() || !g.atoms_disjoint() {
        return Err(RfdError::Unsupported(format!(
            "prox of {:?} with overlapping atoms needs lifting",
            g.kind
        )));
    }
    let x = g.layout.vectorize(u)?;
    let free = free_flags(g);
    let dom = g.domain();
    let mut out = Vector::zeros(x.len());
    for c in 0..x.len() {
        if free[c] {
            out[c] = x[c];
        }
    }
    for (a, &k) in g.atoms.iter().zip(&g.weights) {
        let pen: Vec<usize> = a.iter().copied().filter(|&c| !free[c]).collect();
        let n = group_norm(&x, &pen);
        let s = if n > 0.0 {
            (1.0 - threshold / (k * n)).max(0.0)
        } else {
            0.0
        };
        for &c in &pen {
            out[c] = x[c] * s;
        }
    }
    for c in 0..x.len() {
        if !dom[c] {
            out[c] = 0.0;
        }
    }
    g.layout.devectorize(&out)
}

/// Duplicated-coordinate reformulation of a latent norm.
#[derive(Clone, Debug, PartialEq)]
pub struct Lifting {
    /// Original coordinate of every lifted coordinate.
    pub origin: Vec<usize>,
    /// Lifted coordinates of each atom (partition of the penalized copies).
    pub groups: Vec<Vec<usize>>,
    /// Penalty scale `1/k_A` per lifted group.
    pub scales: Vec<f64>,
    /// Lifted coordinates standing for free original coordinates.
    pub free: Vec<usize>,
    /// Dimension of the original layout.
    pub base_dim: usize,
}

impl Lifting {
    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    /// Recombination `U = Σ_A V_A`.
    pub fn recombine(&self, z: &Vector) -> Vector {
        let mut x = Vector::zeros(self.base_dim);
        for (l, &c) in self.origin.iter().enumerate() {
            x[c] += z[l];
        }
        x
    }

    /// Adjoint of the recombination (copies each coordinate to its lifted slots).
    pub fn spread(&self, x: &Vector) -> Vector {
        Vector::from_iterator(self.dim(), self.origin.iter().map(|&c| x[c]))
    }

    /// Partition penalty `Σ_A ||V_A||/k_A` on the lifted variable.
    pub fn penalty(&self, z: &Vector) -> f64 {
        self.groups
            .iter()
            .zip(&self.scales)
            .map(|(grp, &s)| s * group_norm(z, grp))
            .sum()
    }
}

/// Lifts a latent structure: one copy of a coordinate per atom containing it.
pub fn lift(g: &GroupStructure) -> Result<Lifting> {
    lift_restricted(g, None)
}

/// Lifting restricted to the coordinates flagged in `keep`.
pub fn lift_restricted(g: &GroupStructure, keep: Option<&[bool]>) -> Result<Lifting> {
    if g.is_joint() {
        return Err(RfdError::Unsupported(
            "joint penalties are solved through their dual projection, not lifted".into(),
        ));
    }
    let free = free_flags(g);
    let kept = |c: usize| keep.map_or(true, |k| k[c]);
    let mut origin = Vec::new();
    let mut groups = Vec::with_capacity(g.atoms.len());
    let mut scales = Vec::with_capacity(g.atoms.len());
    for (a, &k) in g.atoms.iter().zip(&g.weights) {
        let mut grp = Vec::new();
        for &c in a {
            if !free[c] && kept(c) {
                grp.push(origin.len());
                origin.push(c);
            }
        }
        groups.push(grp);
        scales.push(1.0 / k);
    }
    let mut free_l = Vec::new();
    for &c in &g.free {
        if kept(c) {
            free_l.push(origin.len());
            origin.push(c);
        }
    }
    Ok(Lifting {
        origin,
        groups,
        scales,
        free: free_l,
        base_dim: g.layout.dim(),
    })
}

/// Optimal latent decomposition with primal/dual certificates.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub value: f64,
    pub lower_bound: f64,
    /// Lifted variable (see [`lift`]) attaining `value`.
    pub lifted: Vector,
    pub lifting: Lifting,
}

/// Solves `min Σ ||V_A||/k_A  s.t. Σ V_A + V_free = U` to a duality gap of 1e-8 (relative).
pub fn latent_decomposition(x: &Vector, g: &GroupStructure) -> Decomposition {
    let lifting = lift(g).expect("simple kinds lift");
    let n = lifting.dim();
    let base = lifting.base_dim;
    let mut mult = vec![0.0; base];
    for &c in &lifting.origin {
        mult[c] += 1.0;
    }
    let is_free_l: Vec<bool> = {
        let mut f = vec![false; n];
        lifting.free.iter().for_each(|&l| f[l] = true);
        f
    };
    let project = |zv: &Vector| -> Vector {
        let r = lifting.recombine(zv) - x;
        let mut w = zv.clone();
        for (l, &c) in lifting.origin.iter().enumerate() {
            if mult[c] > 0.0 {
                w[l] -= r[c] / mult[c];
            }
        }
        w
    };
    let xnorm = x.norm();
    if xnorm == 0.0 {
        return Decomposition {
            value: 0.0,
            lower_bound: 0.0,
            lifted: Vector::zeros(n),
            lifting,
        };
    }
    let mut rho = 1.0 / xnorm.max(1e-300);
    let mut w = project(&Vector::zeros(n));
    let mut yv = Vector::zeros(n);
    let mut best_ub = lifting.penalty(&w);
    let mut best_w = w.clone();
    let mut best_lb: f64 = 0.0;
    for it in 0..200_000 {
        let target = &w - &yv;
        let mut v = target.clone();
        for (grp, &s) in lifting.groups.iter().zip(&lifting.scales) {
            let nrm = group_norm(&target, grp);
            let f = if nrm > 0.0 {
                (1.0 - s / (rho * nrm)).max(0.0)
            } else {
                0.0
            };
            for &l in grp {
                v[l] = target[l] * f;
            }
        }
        for l in 0..n {
            if is_free_l[l] {
                v[l] = target[l];
            }
        }
        let w_old = w.clone();
        w = project(&(&v + &yv));
        yv += &v - &w;
        let ub = lifting.penalty(&w);
        if ub < best_ub {
            best_ub = ub;
            best_w = w.clone();
        }
        if it % 10 == 0 {
            let lb = dual_bound(x, &lifting, &mult, &(&yv * rho), &is_free_l);
            best_lb = best_lb.max(lb);
            if best_ub - best_lb <= 1e-8 * best_ub.max(1.0) {
                break;
            }
            let pr = (&v - &w).norm();
            let dr = rho * (&w - &w_old).norm();
            if pr > 10.0 * dr {
                rho *= 2.0;
                yv /= 2.0;
            } else if dr > 10.0 * pr {
                rho /= 2.0;
                yv *= 2.0;
            }
        }
    }
    Decomposition {
        value: best_ub,
        lower_bound: best_lb,
        lifted: best_w,
        lifting,
    }
}

/// Lower bound `⟨z, x⟩` from a dual candidate rescaled into the dual ball.
fn dual_bound(x: &Vector, lifting: &Lifting, mult: &[f64], u: &Vector, is_free_l: &[bool]) -> f64 {
    let mut z = Vector::zeros(lifting.base_dim);
    for (l, &c) in lifting.origin.iter().enumerate() {
        if !is_free_l[l] {
            z[c] += u[l] / mult[c];
        }
    }
    // Free coordinates must carry zero dual weight.
    for &l in &lifting.free {
        z[lifting.origin[l]] = 0.0;
    }
    let spread = lifting.spread(&z);
    let mut s: f64 = 0.0;
    for (grp, &sc) in lifting.groups.iter().zip(&lifting.scales) {
        s = s.max(group_norm(&spread, grp) / sc);
    }
    if s == 0.0 {
        return 0.0;
    }
    (z.dot(x) / s).abs()
}

/// Groups of a latent structure with their lifted optimal components and norms.
pub fn decompose(u: &FirMatrix, g: &GroupStructure) -> Result<Vec<f64>> {
    let x = g.layout.vectorize(u)?;
    Ok(atom_norms(&x, g))
}

/// Norm of each atom's share in an optimal decomposition (group slice norms for partitions).
pub fn atom_norms(x: &Vector, g: &GroupStructure) -> Vec<f64> {
    if g.is_joint() {
        return g.components.iter().flat_map(|c| atom_norms(x, c)).collect();
    }
    let free = free_flags(g);
    if g.atoms_disjoint() {
        return g
            .atoms
            .iter()
            .map(|a| {
                let pen: Vec<usize> = a.iter().copied().filter(|&c| !free[c]).collect();
                group_norm(x, &pen)
            })
            .collect();
    }
    let d = latent_decomposition(x, g);
    d.lifting
        .groups
        .iter()
        .map(|grp| group_norm(&d.lifted, grp))
        .collect()
}

/// Serializable penalty description, instantiated per layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PenaltySpec {
    Actuator,
    Sensor,
    ActuatorSensor {
        k_a: usize,
        k_s: usize,
    },
    Comm {
        adjacency: Vec<Vec<bool>>,
        links: Vec<[usize; 2]>,
        #[serde(default)]
        bidirectional: bool,
    },
    JointSum {
        theta: f64,
        first: Box<PenaltySpec>,
        second: Box<PenaltySpec>,
    },
    JointMax {
        theta: f64,
        first: Box<PenaltySpec>,
        second: Box<PenaltySpec>,
    },
}

impl PenaltySpec {
    pub fn instantiate(&self, layout: &FirLayout) -> Result<GroupStructure> {
        match self {
            PenaltySpec::Actuator => Ok(GroupStructure::actuator(layout)),
            PenaltySpec::Sensor => Ok(GroupStructure::sensor(layout)),
            PenaltySpec::ActuatorSensor { k_a, k_s } => {
                build_actuator_sensor_atoms(layout, *k_a, *k_s)
            }
            PenaltySpec::Comm {
                adjacency,
                links,
                bidirectional,
            } => {
                let d =
                    self.comm_derivation(adjacency, links, *bidirectional, layout.taps.end())?;
                if d.base_adjacency.shape() != (layout.rows, layout.cols) {
                    return dim_err("communication graph must match the Youla parameter shape");
                }
                GroupStructure::comm(layout, &d)
            }
            PenaltySpec::JointSum {
                theta,
                first,
                second,
            } => GroupStructure::joint_sum(
                *theta,
                first.instantiate(layout)?,
                second.instantiate(layout)?,
            ),
            PenaltySpec::JointMax {
                theta,
                first,
                second,
            } => GroupStructure::joint_max(
                *theta,
                first.instantiate(layout)?,
                second.instantiate(layout)?,
            ),
        }
    }

    fn comm_derivation(
        &self,
        adjacency: &[Vec<bool>],
        links: &[[usize; 2]],
        bidirectional: bool,
        depth: usize,
    ) -> Result<CommAtomDerivation> {
        let n = adjacency.len();
        if adjacency.iter().any(|r| r.len() != n) {
            return dim_err("adjacency must be square");
        }
        let gamma = BoolMat::from_fn(n, n, |i, j| adjacency[i][j]);
        let sets: Vec<Vec<(usize, usize)>> = links
            .iter()
            .map(|&[from, to]| {
                if bidirectional {
                    vec![(from, to), (to, from)]
                } else {
                    vec![(from, to)]
                }
            })
            .collect();
        derive_comm_link_sets(&gamma, &sets, depth.max(1))
    }

    /// Sparsity mask `𝒮` implied by communication constituents (base graph plus all links).
    pub fn subspace_mask(&self, layout: &FirLayout) -> Result<Option<SparsityMask>> {
        match self {
            PenaltySpec::Comm {
                adjacency,
                links,
                bidirectional,
            } => {
                let d =
                    self.comm_derivation(adjacency, links, *bidirectional, layout.taps.end())?;
                let mut m = d.base_mask.clone();
                for l in &d.link_masks {
                    m = m.union(l)?;
                }
                Ok(Some(m))
            }
            PenaltySpec::JointSum { first, second, .. }
            | PenaltySpec::JointMax { first, second, .. } => {
                match (first.subspace_mask(layout)?, second.subspace_mask(layout)?) {
                    (Some(a), Some(b)) => {
                        let n = a.per_tap().len().max(b.per_tap().len());
                        let per = (0..n)
                            .map(|k| a.tap(k).zip_map(b.tap(k), |x, y| x && y))
                            .collect();
                        Ok(Some(SparsityMask::new(
                            per,
                            a.tail().zip_map(b.tail(), |x, y| x && y),
                        )?))
                    }
                    (a, b) => Ok(a.or(b)),
                }
            }
            _ => Ok(None),
        }
    }
}
