//! Dense non-negative matrices, the per-step update matrix pair `(P_k, B_k)`,
//! row classification and the assumption checks applied to every update.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default classification tolerance for row sums.
pub const DEFAULT_TOL: f64 = 1e-12;

/// Diagonal shift used by [`spectral_radius`] to break periodic (cyclic) cases.
pub const SPECTRAL_SHIFT: f64 = 1e-9;

/// Iteration budget for [`spectral_radius`].
pub const SPECTRAL_MAX_ITER: usize = 100_000;

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn is_identity(&self) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| {
                self.row(i)
                    .iter()
                    .enumerate()
                    .all(|(j, &v)| v == if i == j { 1.0 } else { 0.0 })
            })
    }

    /// Largest absolute entrywise difference; `None` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> Option<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        )
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix times vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn scaled(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

/// Exact (floating) matrix product `a * b`.
pub fn multiply(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a[(i, k)];
            if aik == 0.0 {
                continue;
            }
            for j in 0..b.cols {
                out.data[i * b.cols + j] += aik * b.data[k * b.cols + j];
            }
        }
    }
    Ok(out)
}

/// Maximum absolute row sum.
pub fn inf_norm(a: &Matrix) -> f64 {
    (0..a.rows)
        .map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Perron root of a non-negative square matrix by power iteration on
/// `a / ||a|| + eps I`.
///
/// The estimate is `max_i (A v)_i` with `max_i v_i = 1`, so the result never
/// exceeds `inf_norm(a)`. Iteration stops when the Collatz-Wielandt bracket
/// closes to `iter_tol` or the estimate stalls; the tolerance is relative to
/// `inf_norm(a)`.
pub fn spectral_radius(a: &Matrix, iter_tol: f64) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "spectral radius of a {}x{} matrix",
            a.rows, a.cols
        )));
    }
    let n = a.rows;
    let norm = inf_norm(a);
    if n == 0 || norm == 0.0 {
        return Ok(0.0);
    }
    let mut shifted = a.scaled(1.0 / norm);
    for i in 0..n {
        shifted[(i, i)] += SPECTRAL_SHIFT;
    }

    let mut v = vec![1.0; n];
    let mut prev = f64::INFINITY;
    let mut lambda = 0.0;
    for _ in 0..SPECTRAL_MAX_ITER {
        let w = shifted.mul_vec(&v)?;
        lambda = w.iter().copied().fold(0.0, f64::max);
        if lambda == 0.0 {
            return Ok(0.0);
        }
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for (wi, vi) in w.iter().zip(&v) {
            if *vi > f64::MIN_POSITIVE {
                let r = wi / vi;
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        let converged = hi - lo <= iter_tol || (lambda - prev).abs() <= iter_tol * 1e-2;
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / lambda;
        }
        if converged {
            return Ok(((lambda - SPECTRAL_SHIFT) * norm).clamp(0.0, norm));
        }
        prev = lambda;
    }
    Err(Error::NonConvergence {
        iterations: SPECTRAL_MAX_ITER,
        estimate: ((lambda - SPECTRAL_SHIFT) * norm).clamp(0.0, norm),
    })
}

/// Weight bounds shared by every analysis: `beta1` floors each nonzero weight
/// of an anchor-free update, `beta2` caps the sensor mass of an anchor update,
/// `alpha` floors each used anchor weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub beta1: f64,
    pub beta2: f64,
    pub alpha: f64,
    pub tol: f64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            beta1: 0.05,
            beta2: 0.7,
            alpha: 0.1,
            tol: DEFAULT_TOL,
        }
    }
}

impl Params {
    pub fn new(beta1: f64, beta2: f64, alpha: f64) -> Result<Self> {
        let p = Self {
            beta1,
            beta2,
            alpha,
            tol: DEFAULT_TOL,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_tol(mut self, tol: f64) -> Result<Self> {
        self.tol = tol;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) {
            return bad(format!("beta1={} must lie in (0,1)", self.beta1));
        }
        if !(self.beta2 >= 0.0 && self.beta2 < 1.0) {
            return bad(format!("beta2={} must lie in [0,1)", self.beta2));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha={} must lie in (0,1]", self.alpha));
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return bad(format!("tol={} must be finite and non-negative", self.tol));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowKind {
    Stochastic,
    SubStochastic,
    IdentityRow,
}

/// Classifies one row of the augmented update `[p | b]`; `index` is the
/// row's own position, used for the identity-row test.
pub fn row_kind(row: &[f64], index: usize, params: &Params) -> Result<RowKind> {
    let tol = params.tol;
    if let Some((col, &value)) = row.iter().enumerate().find(|(_, v)| **v < -tol) {
        return Err(Error::NegativeEntry { col, value });
    }
    let sum: f64 = row.iter().sum();
    if sum > 1.0 + tol {
        return Err(Error::RowSumExceedsOne { sum });
    }
    let is_basis = row
        .iter()
        .enumerate()
        .all(|(j, &v)| (v - if j == index { 1.0 } else { 0.0 }).abs() <= tol);
    if is_basis {
        Ok(RowKind::IdentityRow)
    } else if sum < 1.0 - tol {
        Ok(RowKind::SubStochastic)
    } else {
        Ok(RowKind::Stochastic)
    }
}

/// One time step of the system: sensor weights `p` (n x n), anchor weights
/// `b` (n x s), and the rows that differ from the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemMatrix {
    p: Matrix,
    b: Matrix,
    updated: Vec<usize>,
}

impl SystemMatrix {
    pub fn identity(n: usize, s: usize) -> Self {
        Self {
            p: Matrix::identity(n),
            b: Matrix::zeros(n, s),
            updated: Vec::new(),
        }
    }

    /// Identity everywhere except row `row`, which becomes `[p_row | b_row]`.
    pub fn row_update(
        n: usize,
        s: usize,
        row: usize,
        p_row: &[f64],
        b_row: &[f64],
    ) -> Result<Self> {
        if row >= n {
            return Err(Error::InvalidIndex(format!(
                "row {row} out of range for n={n}"
            )));
        }
        if p_row.len() != n || b_row.len() != s {
            return Err(Error::DimensionMismatch(format!(
                "row of widths ({}, {}) for n={n}, s={s}",
                p_row.len(),
                b_row.len()
            )));
        }
        let mut p = Matrix::identity(n);
        p.row_mut(row).copy_from_slice(p_row);
        let mut b = Matrix::zeros(n, s);
        b.row_mut(row).copy_from_slice(b_row);
        Self::from_blocks(p, b)
    }

    /// General constructor; any number of rows may differ from the identity.
    pub fn from_blocks(p: Matrix, b: Matrix) -> Result<Self> {
        if !p.is_square() || b.rows() != p.rows() {
            return Err(Error::DimensionMismatch(format!(
                "p is {}x{}, b is {}x{}",
                p.rows(),
                p.cols(),
                b.rows(),
                b.cols()
            )));
        }
        for (col, &value) in p.as_slice().iter().chain(b.as_slice()).enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::NegativeEntry { col, value });
            }
        }
        let n = p.rows();
        let updated = (0..n)
            .filter(|&i| {
                let p_id = p
                    .row(i)
                    .iter()
                    .enumerate()
                    .all(|(j, &v)| v == if i == j { 1.0 } else { 0.0 });
                !(p_id && b.row(i).iter().all(|&v| v == 0.0))
            })
            .collect();
        Ok(Self { p, b, updated })
    }

    pub fn p(&self) -> &Matrix {
        &self.p
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.p.rows()
    }

    pub fn s(&self) -> usize {
        self.b.cols()
    }

    pub fn is_identity(&self) -> bool {
        self.updated.is_empty()
    }

    /// The single updating row, when exactly one row differs from the identity.
    pub fn updated_row(&self) -> Option<usize> {
        match self.updated.as_slice() {
            [i] => Some(*i),
            _ => None,
        }
    }

    pub fn updated_rows(&self) -> &[usize] {
        &self.updated
    }

    /// Row `i` of `[p | b]`.
    pub fn augmented_row(&self, i: usize) -> Vec<f64> {
        let mut r = self.p.row(i).to_vec();
        r.extend_from_slice(self.b.row(i));
        r
    }

    pub fn uses_anchor(&self, i: usize, params: &Params) -> bool {
        self.b.row(i).iter().any(|&v| v > params.tol)
    }

    /// Classification of the sensor part `p` of row `i`.
    pub fn p_row_kind(&self, i: usize, params: &Params) -> Result<RowKind> {
        row_kind(self.p.row(i), i, params)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Assumption {
    A0,
    A1,
    A2,
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Assumption::A0 => "A0",
            Assumption::A1 => "A1",
            Assumption::A2 => "A2",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub assumption: Assumption,
    pub row: usize,
    pub col: Option<usize>,
    pub value: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub a0: CheckStatus,
    pub a1: CheckStatus,
    pub a2: CheckStatus,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn status(&self, a: Assumption) -> CheckStatus {
        match a {
            Assumption::A0 => self.a0,
            Assumption::A1 => self.a1,
            Assumption::A2 => self.a2,
        }
    }

    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn summary(&self) -> String {
        if self.holds() {
            return "no assumption".into();
        }
        self.violations
            .iter()
            .map(|v| match v.col {
                Some(c) => format!(
                    "{} at ({}, {}) = {}: {}",
                    v.assumption, v.row, c, v.value, v.detail
                ),
                None => format!(
                    "{} at row {} = {}: {}",
                    v.assumption, v.row, v.value, v.detail
                ),
            })
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Checks every updated row of `m` against the weight assumptions.
///
/// An anchor-free row must be convex (A0) with every nonzero weight,
/// the self-weight included, in `[beta1, 1)` (A1). A row that uses an anchor
/// must keep its sensor mass at most `beta2` and give each used anchor at
/// least `alpha` (A2). Rows equal to a basis vector are identity rows and
/// are not checked.
pub fn validate_update(m: &SystemMatrix, params: &Params) -> ValidationReport {
    let tol = params.tol;
    let mut applied = [false; 3];
    let mut violations = Vec::new();
    let mut push =
        |assumption: Assumption, row: usize, col: Option<usize>, value: f64, detail: &str| {
            violations.push(Violation {
                assumption,
                row,
                col,
                value,
                detail: detail.to_string(),
            });
        };

    for &i in m.updated_rows() {
        let p_row = m.p().row(i);
        let p_sum: f64 = p_row.iter().sum();
        let total: f64 = p_sum + m.b().row(i).iter().sum::<f64>();
        if m.uses_anchor(i, params) {
            applied[2] = true;
            if total > 1.0 + tol {
                push(
                    Assumption::A2,
                    i,
                    None,
                    total,
                    "row sum over [p|b] exceeds 1",
                );
            }
            if p_sum > params.beta2 + tol {
                push(Assumption::A2, i, None, p_sum, "sensor mass exceeds beta2");
            }
            for (j, &w) in m.b().row(i).iter().enumerate() {
                if w > tol && w < params.alpha - tol {
                    push(Assumption::A2, i, Some(j), w, "anchor weight below alpha");
                }
            }
            continue;
        }
        if matches!(row_kind(p_row, i, params), Ok(RowKind::IdentityRow)) {
            continue;
        }
        applied[0] = true;
        applied[1] = true;
        if (p_sum - 1.0).abs() > tol {
            push(
                Assumption::A0,
                i,
                None,
                p_sum,
                "anchor-free row is not convex",
            );
        }
        if p_row[i] <= tol {
            push(Assumption::A1, i, Some(i), p_row[i], "self-weight is zero");
        }
        for (j, &w) in p_row.iter().enumerate() {
            if w > tol && w < params.beta1 - tol {
                push(Assumption::A1, i, Some(j), w, "weight below beta1");
            } else if w >= 1.0 - tol {
                push(Assumption::A1, i, Some(j), w, "weight not below 1");
            }
        }
    }

    let status = |idx: usize, a: Assumption| {
        if !applied[idx] {
            CheckStatus::NotApplicable
        } else if violations.iter().any(|v| v.assumption == a) {
            CheckStatus::Fail
        } else {
            CheckStatus::Pass
        }
    };
    let (a0, a1, a2) = (
        status(0, Assumption::A0),
        status(1, Assumption::A1),
        status(2, Assumption::A2),
    );
    ValidationReport {
        a0,
        a1,
        a2,
        violations,
    }
}
