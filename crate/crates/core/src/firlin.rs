//! FIR transfer-matrix algebra, block-Toeplitz map realization, masks and
//! quadratic-invariance checks on supports.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Result};
use crate::linalg::{Mat, Vector};

/// Boolean support matrix.
pub type BoolMat = DMatrix<bool>;

/// Finite impulse response transfer matrix `G = Σ_k G^(k) z^{-k}`.
#[derive(Clone, Debug, PartialEq)]
pub struct FirMatrix {
    taps: Vec<Mat>,
    rows: usize,
    cols: usize,
}

impl FirMatrix {
    /// Builds an FIR from its taps; all taps must share one shape and be finite.
    pub fn new(taps: Vec<Mat>) -> Result<Self> {
        let Some(first) = taps.first() else {
            return invalid("an FIR needs at least one tap");
        };
        let (rows, cols) = first.shape();
        for (k, t) in taps.iter().enumerate() {
            if t.shape() != (rows, cols) {
                return dim_err(format!(
                    "tap {k} is {:?}, expected {:?}",
                    t.shape(),
                    (rows, cols)
                ));
            }
            if t.iter().any(|x| !x.is_finite()) {
                return invalid(format!("tap {k} has non-finite entries"));
            }
        }
        Ok(Self { taps, rows, cols })
    }

    /// All-zero FIR with `ntaps` taps (at least one).
    pub fn zeros(rows: usize, cols: usize, ntaps: usize) -> Self {
        Self {
            taps: vec![Mat::zeros(rows, cols); ntaps.max(1)],
            rows,
            cols,
        }
    }

    /// Static gain as a single-tap FIR.
    pub fn constant(m: Mat) -> Self {
        let (rows, cols) = m.shape();
        Self {
            taps: vec![m],
            rows,
            cols,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(Mat::identity(n, n))
    }

    /// 1×1 FIR from scalar taps.
    pub fn scalar(taps: &[f64]) -> Self {
        Self::new(taps.iter().map(|&x| Mat::from_element(1, 1, x)).collect())
            .expect("scalar taps are well formed")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of stored taps (degree + 1).
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn degree(&self) -> usize {
        self.taps.len() - 1
    }

    pub fn taps(&self) -> &[Mat] {
        &self.taps
    }

    pub fn tap(&self, k: usize) -> &Mat {
        &self.taps[k]
    }

    /// Tap `k`, or zero beyond the stored degree.
    pub fn tap_or_zero(&self, k: usize) -> Mat {
        self.taps
            .get(k)
            .cloned()
            .unwrap_or_else(|| Mat::zeros(self.rows, self.cols))
    }

    pub fn h2_norm(&self) -> f64 {
        fir_h2_norm(self)
    }

    /// Trace inner product summed over taps.
    pub fn inner(&self, other: &FirMatrix) -> f64 {
        self.taps
            .iter()
            .zip(other.taps.iter())
            .map(|(a, b)| a.dot(b))
            .sum()
    }

    /// First `n` taps, zero-padded when `n` exceeds the stored length.
    pub fn truncate(&self, n: usize) -> FirMatrix {
        let n = n.max(1);
        Self {
            taps: (0..n).map(|k| self.tap_or_zero(k)).collect(),
            rows: self.rows,
            cols: self.cols,
        }
    }

    /// Copy with taps outside `first..first+count` set to zero.
    pub fn window(&self, first: usize, count: usize) -> FirMatrix {
        let n = self.len().max(first + count);
        Self {
            taps: (0..n)
                .map(|k| {
                    if k >= first && k < first + count {
                        self.tap_or_zero(k)
                    } else {
                        Mat::zeros(self.rows, self.cols)
                    }
                })
                .collect(),
            rows: self.rows,
            cols: self.cols,
        }
    }

    pub fn scale(&self, c: f64) -> FirMatrix {
        Self {
            taps: self.taps.iter().map(|t| t * c).collect(),
            rows: self.rows,
            cols: self.cols,
        }
    }

    /// `self + c·other`, padding the shorter operand with zero taps.
    pub fn axpy(&self, c: f64, other: &FirMatrix) -> Result<FirMatrix> {
        if self.shape() != other.shape() {
            return dim_err(format!("{:?} vs {:?}", self.shape(), other.shape()));
        }
        let n = self.len().max(other.len());
        Ok(Self {
            taps: (0..n)
                .map(|k| self.tap_or_zero(k) + other.tap_or_zero(k) * c)
                .collect(),
            rows: self.rows,
            cols: self.cols,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// H2 norm of row `i` across all taps.
    pub fn row_norm(&self, i: usize) -> f64 {
        self.taps
            .iter()
            .map(|t| t.row(i).norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// H2 norm of column `j` across all taps.
    pub fn col_norm(&self, j: usize) -> f64 {
        self.taps
            .iter()
            .map(|t| t.column(j).norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// Taps as nested `[tap][row][col]` arrays.
    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        self.taps
            .iter()
            .map(|t| {
                (0..self.rows)
                    .map(|i| t.row(i).iter().copied().collect())
                    .collect()
            })
            .collect()
    }

    /// Inverse of [`FirMatrix::to_nested`].
    pub fn from_nested(taps: &[Vec<Vec<f64>>]) -> Result<Self> {
        let mats = taps
            .iter()
            .map(|t| {
                let rows = t.len();
                let cols = t.first().map_or(0, |r| r.len());
                if t.iter().any(|r| r.len() != cols) {
                    return dim_err("ragged tap rows");
                }
                Ok(Mat::from_fn(rows, cols, |i, j| t[i][j]))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(mats)
    }

    pub fn max_abs(&self) -> f64 {
        self.taps
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// `sqrt(Σ_k ||G^(k)||_F²)`.
pub fn fir_h2_norm(g: &FirMatrix) -> f64 {
    g.taps.iter().map(|t| t.norm_squared()).sum::<f64>().sqrt()
}

/// Cauchy product `(G∗H)^(k) = Σ_{i+j=k} G^(i) H^(j)`.
pub fn fir_convolve(g: &FirMatrix, h: &FirMatrix) -> Result<FirMatrix> {
    if g.cols != h.rows {
        return dim_err(format!(
            "convolution of {}x{} with {}x{}",
            g.rows, g.cols, h.rows, h.cols
        ));
    }
    let n = g.len() + h.len() - 1;
    let mut taps = vec![Mat::zeros(g.rows, h.cols); n];
    for (i, gi) in g.taps.iter().enumerate() {
        for (j, hj) in h.taps.iter().enumerate() {
            taps[i + j].gemm(1.0, gi, hj, 1.0);
        }
    }
    FirMatrix::new(taps)
}

/// Which tap indices an order-`v` Youla parameter and a horizon-`t` output carry.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema,
)]
#[serde(rename_all = "snake_case")]
pub enum TapConvention {
    /// Inputs carry taps `0..v-1`, outputs taps `0..t-1`.
    #[default]
    ZeroBased,
    /// Inputs carry taps `1..v`, outputs taps `0..t`.
    OneBased,
    /// Inputs carry taps `0..v`, outputs taps `0..t`.
    Inclusive,
}

impl TapConvention {
    pub fn input_taps(self, v: usize) -> TapRange {
        match self {
            TapConvention::ZeroBased => TapRange::new(0, v),
            TapConvention::OneBased => TapRange::new(1, v),
            TapConvention::Inclusive => TapRange::new(0, v + 1),
        }
    }

    pub fn output_taps(self, t: usize) -> TapRange {
        match self {
            TapConvention::ZeroBased => TapRange::new(0, t),
            TapConvention::OneBased | TapConvention::Inclusive => TapRange::new(0, t + 1),
        }
    }
}

/// Contiguous tap indices `first..first+count`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapRange {
    pub first: usize,
    pub count: usize,
}

impl TapRange {
    pub fn new(first: usize, count: usize) -> Self {
        Self { first, count }
    }

    pub fn end(&self) -> usize {
        self.first + self.count
    }

    pub fn contains(&self, k: usize) -> bool {
        k >= self.first && k < self.end()
    }
}

/// Coordinate layout of vectorized FIR taps, ordered (tap, row, col).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FirLayout {
    pub rows: usize,
    pub cols: usize,
    pub taps: TapRange,
}

impl FirLayout {
    pub fn new(rows: usize, cols: usize, taps: TapRange) -> Self {
        Self { rows, cols, taps }
    }

    pub fn dim(&self) -> usize {
        self.rows * self.cols * self.taps.count
    }

    /// Coordinate of entry `(i, j)` at tap offset `k` (tap index `taps.first + k`).
    pub fn index(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.rows + i) * self.cols + j
    }

    /// Inverse of [`FirLayout::index`].
    pub fn position(&self, c: usize) -> (usize, usize, usize) {
        let j = c % self.cols;
        let r = c / self.cols;
        (r / self.rows, r % self.rows, j)
    }

    /// All coordinates of row `i`.
    pub fn row_coords(&self, i: usize) -> Vec<usize> {
        (0..self.taps.count)
            .flat_map(|k| (0..self.cols).map(move |j| (k, j)))
            .map(|(k, j)| self.index(k, i, j))
            .collect()
    }

    /// All coordinates of column `j`.
    pub fn col_coords(&self, j: usize) -> Vec<usize> {
        (0..self.taps.count)
            .flat_map(|k| (0..self.rows).map(move |i| (k, i)))
            .map(|(k, i)| self.index(k, i, j))
            .collect()
    }

    pub fn vectorize(&self, g: &FirMatrix) -> Result<Vector> {
        if g.shape() != (self.rows, self.cols) {
            return dim_err(format!(
                "FIR is {:?}, layout expects {:?}",
                g.shape(),
                (self.rows, self.cols)
            ));
        }
        let mut v = Vector::zeros(self.dim());
        for k in 0..self.taps.count {
            if let Some(t) = g.taps.get(self.taps.first + k) {
                for i in 0..self.rows {
                    for j in 0..self.cols {
                        v[self.index(k, i, j)] = t[(i, j)];
                    }
                }
            }
        }
        Ok(v)
    }

    /// FIR with taps `0..taps.end()`; taps before `taps.first` are zero.
    pub fn devectorize(&self, v: &Vector) -> Result<FirMatrix> {
        if v.len() != self.dim() {
            return dim_err(format!(
                "vector of length {} for layout {}",
                v.len(),
                self.dim()
            ));
        }
        let mut taps = vec![Mat::zeros(self.rows, self.cols); self.taps.end().max(1)];
        for k in 0..self.taps.count {
            let t = &mut taps[self.taps.first + k];
            for i in 0..self.rows {
                for j in 0..self.cols {
                    t[(i, j)] = v[self.index(k, i, j)];
                }
            }
        }
        FirMatrix::new(taps)
    }
}

#[derive(Clone, Debug)]
enum Repr {
    /// Columns of the explicit matrix, one per carried coordinate.
    Dense(Mat),
    /// One-sided map `U ↦ left ∗ U`: the full matrix is `reduced ⊗ I_width`.
    Kron {
        reduced: Mat,
        width: usize,
        reduced_gram: OnceLock<Mat>,
        dense: OnceLock<Mat>,
    },
}

/// Explicit block-Toeplitz linear map from vectorized Youla taps to vectorized
/// closed-loop taps, possibly restricted to a subset of input coordinates.
#[derive(Clone, Debug)]
pub struct ClosedLoopMap {
    input: FirLayout,
    output: FirLayout,
    columns: Vec<usize>,
    groups: Vec<Vec<usize>>,
    repr: Repr,
}

impl ClosedLoopMap {
    /// Wraps an explicit matrix acting on every coordinate of `input`.
    pub fn from_matrix(matrix: Mat, input: FirLayout, output: FirLayout) -> Result<Self> {
        if matrix.shape() != (output.dim(), input.dim()) {
            return dim_err(format!(
                "matrix {:?} for layouts {} -> {}",
                matrix.shape(),
                input.dim(),
                output.dim()
            ));
        }
        Ok(Self {
            columns: (0..input.dim()).collect(),
            input,
            output,
            groups: Vec::new(),
            repr: Repr::Dense(matrix),
        })
    }

    pub fn input_layout(&self) -> &FirLayout {
        &self.input
    }

    pub fn output_layout(&self) -> &FirLayout {
        &self.output
    }

    /// Input coordinates carried by the columns of this map.
    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn nrows(&self) -> usize {
        self.output.dim()
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    /// Column positions of each registered group.
    pub fn group_index(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Registers groups given as input coordinates; coordinates not carried are dropped.
    pub fn with_groups(mut self, groups: &[Vec<usize>]) -> Result<Self> {
        let pos = self.position_table()?;
        self.groups = groups
            .iter()
            .map(|g| {
                g.iter()
                    .filter_map(|&c| pos.get(c).copied().flatten())
                    .collect()
            })
            .collect();
        Ok(self)
    }

    fn position_table(&self) -> Result<Vec<Option<usize>>> {
        let mut pos = vec![None; self.input.dim()];
        for (p, &c) in self.columns.iter().enumerate() {
            pos[c] = Some(p);
        }
        Ok(pos)
    }

    /// `reduced` and `width` when the map is one-sided (`reduced ⊗ I_width`).
    pub fn kron_factor(&self) -> Option<(&Mat, usize)> {
        match &self.repr {
            Repr::Kron { reduced, width, .. } => Some((reduced, *width)),
            Repr::Dense(_) => None,
        }
    }

    /// Dense matrix over the carried columns (materialized on first use).
    pub fn matrix(&self) -> &Mat {
        match &self.repr {
            Repr::Dense(m) => m,
            Repr::Kron {
                reduced,
                width,
                dense,
                ..
            } => dense.get_or_init(|| kron_columns(reduced, *width, &self.columns)),
        }
    }

    pub fn apply(&self, x: &Vector) -> Vector {
        assert_eq!(x.len(), self.ncols());
        match &self.repr {
            Repr::Dense(m) => m * x,
            Repr::Kron { reduced, width, .. } => {
                let w = *width;
                let mut xm = Mat::zeros(reduced.ncols(), w);
                for (p, &c) in self.columns.iter().enumerate() {
                    xm[(c / w, c % w)] += x[p];
                }
                let ym = reduced * xm;
                Vector::from_fn(self.nrows(), |r, _| ym[(r / w, r % w)])
            }
        }
    }

    /// Adjoint (transpose) applied to an output vector.
    pub fn adjoint(&self, y: &Vector) -> Vector {
        assert_eq!(y.len(), self.nrows());
        match &self.repr {
            Repr::Dense(m) => m.tr_mul(y),
            Repr::Kron { reduced, width, .. } => {
                let w = *width;
                let ym = Mat::from_fn(reduced.nrows(), w, |r, j| y[r * w + j]);
                let zm = reduced.tr_mul(&ym);
                Vector::from_iterator(
                    self.ncols(),
                    self.columns.iter().map(|&c| zm[(c / w, c % w)]),
                )
            }
        }
    }

    /// Gram block `M_aᵀ M_b` between column position sets.
    pub fn cross_gram(&self, a: &[usize], b: &[usize]) -> Mat {
        match &self.repr {
            Repr::Dense(m) => {
                let ma = m.select_columns(a.iter());
                let mb = m.select_columns(b.iter());
                ma.tr_mul(&mb)
            }
            Repr::Kron {
                reduced,
                width,
                reduced_gram,
                ..
            } => {
                let w = *width;
                let g0 = reduced_gram.get_or_init(|| reduced.tr_mul(reduced));
                Mat::from_fn(a.len(), b.len(), |r, s| {
                    let ca = self.columns[a[r]];
                    let cb = self.columns[b[s]];
                    if ca % w == cb % w {
                        g0[(ca / w, cb / w)]
                    } else {
                        0.0
                    }
                })
            }
        }
    }

    /// Full Gram matrix `Mᵀ M`.
    pub fn gram(&self) -> Mat {
        let all: Vec<usize> = (0..self.ncols()).collect();
        match &self.repr {
            Repr::Dense(m) => m.tr_mul(m),
            Repr::Kron { .. } => self.cross_gram(&all, &all),
        }
    }

    /// Column-selected submap on the given input coordinates (in the given order).
    pub fn restrict(&self, coords: &[usize]) -> Result<ClosedLoopMap> {
        let pos = self.position_table()?;
        let mut positions = Vec::with_capacity(coords.len());
        for &c in coords {
            match pos.get(c).copied().flatten() {
                Some(p) => positions.push(p),
                None => {
                    return invalid(format!("coordinate {c} is not carried by the map"));
                }
            }
        }
        let repr = match &self.repr {
            Repr::Dense(m) => Repr::Dense(m.select_columns(positions.iter())),
            Repr::Kron {
                reduced,
                width,
                reduced_gram,
                ..
            } => Repr::Kron {
                reduced: reduced.clone(),
                width: *width,
                reduced_gram: reduced_gram.clone(),
                dense: OnceLock::new(),
            },
        };
        let mut out = ClosedLoopMap {
            input: self.input,
            output: self.output,
            columns: coords.to_vec(),
            groups: Vec::new(),
            repr,
        };
        let groups: Vec<Vec<usize>> = self
            .groups
            .iter()
            .map(|g| g.iter().map(|&p| self.columns[p]).collect())
            .collect();
        out = out.with_groups(&groups)?;
        Ok(out)
    }

    /// Applies the map to an FIR in the input layout (carried coordinates only).
    pub fn apply_fir(&self, u: &FirMatrix) -> Result<FirMatrix> {
        let full = self.input.vectorize(u)?;
        let x = Vector::from_iterator(self.ncols(), self.columns.iter().map(|&c| full[c]));
        self.output.devectorize(&self.apply(&x))
    }

    /// Adjoint applied to an FIR in the output layout, returned in the input layout.
    pub fn adjoint_fir(&self, y: &FirMatrix) -> Result<FirMatrix> {
        let yv = self.output.vectorize(y)?;
        let z = self.adjoint(&yv);
        let mut full = Vector::zeros(self.input.dim());
        for (p, &c) in self.columns.iter().enumerate() {
            full[c] = z[p];
        }
        self.input.devectorize(&full)
    }
}

fn kron_columns(reduced: &Mat, w: usize, columns: &[usize]) -> Mat {
    let mut m = Mat::zeros(reduced.nrows() * w, columns.len());
    for (p, &c) in columns.iter().enumerate() {
        let (rc, j) = (c / w, c % w);
        for r in 0..reduced.nrows() {
            m[(r * w + j, p)] = reduced[(r, rc)];
        }
    }
    m
}

fn is_identity_tap(g: &FirMatrix) -> bool {
    g.len() == 1 && g.rows() == g.cols() && g.tap(0) == &Mat::identity(g.rows(), g.cols())
}

/// Explicit matrix of `U ↦ truncate_t(left ∗ U ∗ right)` on order-`v` Youla parameters.
///
/// An identity single-tap `right` yields the one-sided form stored as a Kronecker factor.
pub fn materialize_map(
    left: &FirMatrix,
    right: &FirMatrix,
    t: usize,
    v: usize,
    convention: TapConvention,
) -> Result<ClosedLoopMap> {
    let in_taps = convention.input_taps(v);
    let out_taps = convention.output_taps(t);
    if v == 0 || t == 0 {
        return invalid("horizon and order must be at least 1");
    }
    if in_taps.count > out_taps.count {
        return invalid(format!(
            "order {v} exceeds horizon {t} under {convention:?}"
        ));
    }
    let input = FirLayout::new(left.cols(), right.rows(), in_taps);
    let output = FirLayout::new(left.rows(), right.cols(), out_taps);
    if is_identity_tap(right) {
        let (mo, mi) = (left.rows(), left.cols());
        let mut reduced = Mat::zeros(out_taps.count * mo, in_taps.count * mi);
        for ko in 0..out_taps.count {
            let k = out_taps.first + ko;
            for bi in 0..in_taps.count {
                let b = in_taps.first + bi;
                if k >= b && k - b < left.len() {
                    reduced
                        .view_mut((ko * mo, bi * mi), (mo, mi))
                        .copy_from(left.tap(k - b));
                }
            }
        }
        return Ok(ClosedLoopMap {
            columns: (0..input.dim()).collect(),
            input,
            output,
            groups: Vec::new(),
            repr: Repr::Kron {
                reduced,
                width: right.rows(),
                reduced_gram: OnceLock::new(),
                dense: OnceLock::new(),
            },
        });
    }
    let bo = output.rows * output.cols;
    let bi = input.rows * input.cols;
    let mut m = Mat::zeros(output.dim(), input.dim());
    let rights_t: Vec<Mat> = right.taps().iter().map(|r| r.transpose()).collect();
    for ko in 0..out_taps.count {
        let k = out_taps.first + ko;
        for ii in 0..in_taps.count {
            let b = in_taps.first + ii;
            if k < b {
                continue;
            }
            let d = k - b;
            let mut block = Mat::zeros(bo, bi);
            for a in 0..=d.min(left.len() - 1) {
                let c = d - a;
                if c >= rights_t.len() {
                    continue;
                }
                block += left.tap(a).kronecker(&rights_t[c]);
            }
            m.view_mut((ko * bo, ii * bi), (bo, bi)).copy_from(&block);
        }
    }
    ClosedLoopMap::from_matrix(m, input, output)
}

/// Column-selected submap `𝔏_𝒜` on the union of the given coordinate sets.
pub fn restrict_map(map: &ClosedLoopMap, groups: &[Vec<usize>]) -> Result<ClosedLoopMap> {
    let mut coords: Vec<usize> = groups.iter().flatten().copied().collect();
    coords.sort_unstable();
    coords.dedup();
    if let Some(&c) = coords.iter().find(|&&c| c >= map.input_layout().dim()) {
        return invalid(format!("coordinate {c} outside the input layout"));
    }
    map.restrict(&coords)?.with_groups(groups)
}

/// Per-tap support pattern with a tail pattern for all later taps.
#[derive(Clone, Debug, PartialEq)]
pub struct SparsityMask {
    per_tap: Vec<BoolMat>,
    tail: BoolMat,
}

impl SparsityMask {
    pub fn new(per_tap: Vec<BoolMat>, tail: BoolMat) -> Result<Self> {
        let shape = tail.shape();
        if let Some(k) = per_tap.iter().position(|m| m.shape() != shape) {
            return dim_err(format!(
                "mask tap {k} does not match the tail shape {shape:?}"
            ));
        }
        Ok(Self { per_tap, tail })
    }

    /// Pattern allowing every entry at every tap.
    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            per_tap: Vec::new(),
            tail: BoolMat::from_element(rows, cols, true),
        }
    }

    /// Pattern allowing nothing.
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            per_tap: Vec::new(),
            tail: BoolMat::from_element(rows, cols, false),
        }
    }

    /// Same pattern at every tap.
    pub fn constant(pattern: BoolMat) -> Self {
        Self {
            per_tap: Vec::new(),
            tail: pattern,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tail.shape()
    }

    pub fn per_tap(&self) -> &[BoolMat] {
        &self.per_tap
    }

    pub fn tail(&self) -> &BoolMat {
        &self.tail
    }

    pub fn tap(&self, k: usize) -> &BoolMat {
        self.per_tap.get(k).unwrap_or(&self.tail)
    }

    /// Coordinates of `layout` the mask allows.
    pub fn coordinates(&self, layout: &FirLayout) -> Result<Vec<usize>> {
        if self.shape() != (layout.rows, layout.cols) {
            return dim_err(format!(
                "mask {:?} for layout {:?}",
                self.shape(),
                (layout.rows, layout.cols)
            ));
        }
        let mut out = Vec::new();
        for k in 0..layout.taps.count {
            let m = self.tap(layout.taps.first + k);
            for i in 0..layout.rows {
                for j in 0..layout.cols {
                    if m[(i, j)] {
                        out.push(layout.index(k, i, j));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Entrywise union with another mask of the same shape.
    pub fn union(&self, other: &SparsityMask) -> Result<SparsityMask> {
        if self.shape() != other.shape() {
            return dim_err("mask shapes differ");
        }
        let n = self.per_tap.len().max(other.per_tap.len());
        let per_tap = (0..n)
            .map(|k| self.tap(k).zip_map(other.tap(k), |a, b| a || b))
            .collect();
        SparsityMask::new(per_tap, self.tail.zip_map(&other.tail, |a, b| a || b))
    }
}

/// Zeroes every entry outside the mask.
pub fn apply_mask(g: &FirMatrix, s: &SparsityMask) -> Result<FirMatrix> {
    if g.shape() != s.shape() {
        return dim_err(format!("FIR {:?} vs mask {:?}", g.shape(), s.shape()));
    }
    let taps = g
        .taps()
        .iter()
        .enumerate()
        .map(|(k, t)| t.zip_map(s.tap(k), |x, keep| if keep { x } else { 0.0 }))
        .collect();
    FirMatrix::new(taps)
}

/// Boolean matrix product.
pub fn bool_mul(a: &BoolMat, b: &BoolMat) -> BoolMat {
    BoolMat::from_fn(a.nrows(), b.ncols(), |i, j| {
        (0..a.ncols()).any(|k| a[(i, k)] && b[(k, j)])
    })
}

fn bool_or_assign(a: &mut BoolMat, b: &BoolMat) {
    a.zip_apply(b, |x, y| *x = *x || y);
}

/// Support-level quadratic invariance: `supp(K)·supp(P22)·supp(K) ⊆ supp(S)` at taps `0..=depth`.
pub fn qi_check(s: &SparsityMask, p22: &SparsityMask, depth: usize) -> Result<bool> {
    let (ra, ca) = s.shape();
    if p22.shape() != (ca, ra) {
        return dim_err(format!(
            "subspace {:?} needs P22 support of shape {:?}, got {:?}",
            s.shape(),
            (ca, ra),
            p22.shape()
        ));
    }
    if depth == 0 {
        return invalid("depth must be at least 1");
    }
    // sp[k] = ∪_{a+b=k} S_a · P_b
    let sp: Vec<BoolMat> = (0..=depth)
        .map(|k| {
            let mut acc = BoolMat::from_element(ra, ra, false);
            for a in 0..=k {
                bool_or_assign(&mut acc, &bool_mul(s.tap(a), p22.tap(k - a)));
            }
            acc
        })
        .collect();
    for k in 0..=depth {
        let mut triple = BoolMat::from_element(ra, ca, false);
        for ab in 0..=k {
            bool_or_assign(&mut triple, &bool_mul(&sp[ab], s.tap(k - ab)));
        }
        let target = s.tap(k);
        if triple.iter().zip(target.iter()).any(|(&x, &y)| x && !y) {
            return Ok(false);
        }
    }
    Ok(true)
}
