//! Closed-form row and slice infinity-norm bounds.
//!
//! All powers of `beta1` go through `exp(e * ln beta1)`; the `log_*` variants
//! keep the slice gap in log-space for lengths where `beta1^len` underflows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Matrix, Params};
use crate::slice::informed_rows;

/// Per-row inputs to the row-sum bounds of a finished slice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowBoundInput {
    pub slice_len: usize,
    /// 1-based index of the first success at this row.
    pub h: usize,
    /// 1-based index of the last sub-stochastic update at this row.
    pub g: Option<usize>,
    /// Largest sub-stochastic row sum of the running product just before `h`.
    pub beta4_at_h: f64,
}

fn pow_beta1(exponent: usize, params: &Params) -> f64 {
    (exponent as f64 * params.beta1.ln()).exp()
}

/// Largest row sum among the sub-stochastic rows of `j_prev`.
pub fn beta4(j_prev: &Matrix, params: &Params) -> Result<f64> {
    let sums = j_prev.row_sums();
    informed_rows(j_prev, params)
        .into_iter()
        .map(|i| sums[i])
        .reduce(f64::max)
        .ok_or(Error::NoSubStochasticRow)
}

/// Row-sum bound for a row that only ever sees stochastic updates within the
/// slice: `1 + beta1^(len - h + 1) (beta4(h) - 1)`.
pub fn row_bound_no_substochastic(input: &RowBoundInput, params: &Params) -> Result<f64> {
    if input.h < 2 || input.h > input.slice_len {
        return Err(Error::InvalidIndex(format!(
            "first success h={} must lie in [2, {}]",
            input.h, input.slice_len
        )));
    }
    let e = input.slice_len - input.h + 1;
    Ok(1.0 + pow_beta1(e, params) * (input.beta4_at_h - 1.0))
}

/// Row-sum bound for a row whose last sub-stochastic update is at `g`:
/// `1 + beta1^(len - g) (beta2 - 1)`.
pub fn row_bound_with_substochastic(input: &RowBoundInput, params: &Params) -> Result<f64> {
    let g = input
        .g
        .ok_or_else(|| Error::InvalidIndex("no sub-stochastic update index".into()))?;
    if g < 1 || g > input.slice_len {
        return Err(Error::InvalidIndex(format!(
            "last sub-stochastic update g={g} must lie in [1, {}]",
            input.slice_len
        )));
    }
    Ok(1.0 + pow_beta1(input.slice_len - g, params) * (params.beta2 - 1.0))
}

/// Dispatches to the stochastic-only or the with-anchor row bound.
pub fn combined_row_bound(input: &RowBoundInput, params: &Params) -> Result<f64> {
    match input.g {
        Some(_) => row_bound_with_substochastic(input, params),
        None => row_bound_no_substochastic(input, params),
    }
}

/// Worst-case slice norm `1 - alpha_j` with `alpha_j = beta1^(len-1) (1 - beta2)`.
pub fn slice_norm_bound(length: usize, params: &Params) -> Result<f64> {
    Ok(1.0 - slice_gap(length, params)?)
}

/// The gap `alpha_j = beta1^(len-1) (1 - beta2)`.
pub fn slice_gap(length: usize, params: &Params) -> Result<f64> {
    Ok(log_slice_gap(length, params)?.exp())
}

/// `ln alpha_j`, finite for every length.
pub fn log_slice_gap(length: usize, params: &Params) -> Result<f64> {
    if length < 1 {
        return Err(Error::InvalidLength(length));
    }
    Ok((length - 1) as f64 * params.beta1.ln() + (-params.beta2).ln_1p())
}

/// `-ln(1 - alpha_j)`, the per-slice contribution to the divergence sum.
pub fn neg_log_one_minus_gap(length: usize, params: &Params) -> Result<f64> {
    let gap = slice_gap(length, params)?;
    Ok(-(-gap).ln_1p())
}
