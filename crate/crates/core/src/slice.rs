//! Online slice partitioner.
//!
//! A slice is opened by the first update that makes some row of the running
//! product sub-stochastic and closed right after every row is sub-stochastic.
//! Stochastic updates that arrive while no slice is open are kept in the
//! running product, so they are prepended to the next slice and the slices
//! cover the whole non-identity sequence. Identity updates are skipped.
//!
//! Row sums are tracked through their deficits `d_i = 1 - sum_j J_ij`. For a
//! row update `p` the new deficit is `(1 - sum p) + sum_m p_m d_m`, a sum of
//! non-negative terms, so "sub-stochastic" means `d_i > 0` exactly and never
//! depends on cancellation in `1 - (sum of entries)`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::bounds::{self, RowBoundInput};
use crate::error::{Error, Result};
use crate::matrix::{inf_norm, validate_update, Matrix, Params, RowKind, SystemMatrix};

/// Whether assumption violations abort a run or are only observed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Strict,
    Permissive,
}

/// Rows of `j` whose sum is below `1 - tol`.
pub fn informed_rows(j: &Matrix, params: &Params) -> BTreeSet<usize> {
    j.row_sums()
        .into_iter()
        .enumerate()
        .filter(|(_, s)| *s < 1.0 - params.tol)
        .map(|(i, _)| i)
        .collect()
}

/// A finished slice.
#[derive(Clone, Debug, PartialEq)]
pub struct Slice {
    pub index: usize,
    pub product: Matrix,
    pub length: usize,
    pub norm: f64,
    pub bound: f64,
    /// Position of the first and last member among non-identity updates.
    pub start_k: usize,
    pub end_k: usize,
    /// Raw positions in the input sequence (identity steps counted).
    pub first_step: usize,
    pub last_step: usize,
    pub row_deficits: Vec<f64>,
    pub h: Vec<Option<usize>>,
    pub g: Vec<Option<usize>>,
    pub beta4_at_h: Vec<Option<f64>>,
}

impl Slice {
    pub fn row_bound_inputs(&self) -> Vec<RowBoundInput> {
        (0..self.h.len())
            .map(|i| RowBoundInput {
                slice_len: self.length,
                h: self.h[i].unwrap_or(1),
                g: self.g[i],
                // only read when g is absent, in which case a success via an
                // informed row recorded it
                beta4_at_h: self.beta4_at_h[i].unwrap_or(0.0),
            })
            .collect()
    }

    /// Maximum over rows of the per-row bound.
    pub fn combined_bound(&self, params: &Params) -> Result<f64> {
        self.row_bound_inputs()
            .iter()
            .map(|inp| bounds::combined_row_bound(inp, params))
            .try_fold(0.0f64, |acc, b| Ok(acc.max(b?)))
    }

    /// `1 - min_i d_i`.
    pub fn norm_from_deficits(&self) -> f64 {
        1.0 - self
            .row_deficits
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SliceEvent {
    Skipped,
    Started,
    Success {
        row: usize,
        row_sum: f64,
    },
    /// A sub-stochastic row turned stochastic again (only without A1).
    Lost {
        row: usize,
        row_sum: f64,
    },
    Absorbed,
    Completed(Box<Slice>),
}

impl SliceEvent {
    pub fn name(&self) -> &'static str {
        match self {
            SliceEvent::Skipped => "skipped",
            SliceEvent::Started => "started",
            SliceEvent::Success { .. } => "success",
            SliceEvent::Lost { .. } => "lost",
            SliceEvent::Absorbed => "absorbed",
            SliceEvent::Completed(_) => "completed",
        }
    }
}

/// Accumulator for the slice currently being built.
#[derive(Clone, Debug)]
pub struct SliceState {
    n: usize,
    j: Matrix,
    deficit: Vec<f64>,
    k_local: usize,
    h: Vec<Option<usize>>,
    g: Vec<Option<usize>>,
    beta4_at_h: Vec<Option<f64>>,
    started: bool,
    start_k: usize,
    first_step: usize,
    next_k: usize,
    next_step: usize,
    slices_done: usize,
}

impl SliceState {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            j: Matrix::identity(n),
            deficit: vec![0.0; n],
            k_local: 0,
            h: vec![None; n],
            g: vec![None; n],
            beta4_at_h: vec![None; n],
            started: false,
            start_k: 0,
            first_step: 0,
            next_k: 0,
            next_step: 0,
            slices_done: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Running product of the open slice.
    pub fn j(&self) -> &Matrix {
        &self.j
    }

    pub fn deficits(&self) -> &[f64] {
        &self.deficit
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        1.0 - self.deficit[i]
    }

    pub fn is_informed(&self, i: usize) -> bool {
        self.deficit[i] > 0.0
    }

    pub fn informed(&self) -> BTreeSet<usize> {
        (0..self.n).filter(|&i| self.is_informed(i)).collect()
    }

    pub fn uninformed(&self) -> BTreeSet<usize> {
        (0..self.n).filter(|&i| !self.is_informed(i)).collect()
    }

    pub fn k_local(&self) -> usize {
        self.k_local
    }

    pub fn h(&self) -> &[Option<usize>] {
        &self.h
    }

    pub fn g(&self) -> &[Option<usize>] {
        &self.g
    }

    pub fn started(&self) -> bool {
        self.started
    }

    pub fn slices_completed(&self) -> usize {
        self.slices_done
    }

    /// Non-identity updates consumed so far.
    pub fn non_identity_count(&self) -> usize {
        self.next_k
    }

    /// Largest sub-stochastic row sum of the running product.
    pub fn beta4(&self) -> Option<f64> {
        self.deficit
            .iter()
            .filter(|d| **d > 0.0)
            .map(|d| 1.0 - d)
            .reduce(f64::max)
    }

    /// Deficit of `p`'s row `i` on its own: zero for a row classified
    /// stochastic, `1 - sum` otherwise.
    fn own_deficit(m: &SystemMatrix, i: usize, params: &Params) -> f64 {
        let p_row = m.p().row(i);
        match m.p_row_kind(i, params) {
            Ok(RowKind::Stochastic) | Ok(RowKind::IdentityRow) => 0.0,
            _ => 1.0 - p_row.iter().sum::<f64>(),
        }
    }

    fn predicted_deficit(&self, m: &SystemMatrix, i: usize, params: &Params) -> f64 {
        let carried: f64 = m
            .p()
            .row(i)
            .iter()
            .zip(&self.deficit)
            .map(|(p, d)| p * d)
            .sum();
        Self::own_deficit(m, i, params) + carried
    }

    /// Row that `m` turns sub-stochastic, if any: an uninformed row receiving
    /// a sub-stochastic update, or a stochastic update with nonzero weight on
    /// an informed row.
    pub fn is_success(&self, m: &SystemMatrix, params: &Params) -> Option<usize> {
        m.updated_rows().iter().copied().find(|&i| {
            if self.is_informed(i) {
                return false;
            }
            let direct = Self::own_deficit(m, i, params) > 0.0;
            let via_informed = m
                .p()
                .row(i)
                .iter()
                .enumerate()
                .any(|(j, &w)| w != 0.0 && self.is_informed(j));
            direct || via_informed
        })
    }

    /// Consumes one update and reports what happened.
    pub fn push(
        &mut self,
        m: &SystemMatrix,
        params: &Params,
        mode: Mode,
    ) -> Result<Vec<SliceEvent>> {
        if m.n() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "update of size {} pushed into a slice of size {}",
                m.n(),
                self.n
            )));
        }
        let step = self.next_step;
        if m.is_identity() {
            self.next_step += 1;
            return Ok(vec![SliceEvent::Skipped]);
        }
        if mode == Mode::Strict {
            let report = validate_update(m, params);
            if !report.holds() {
                return Err(Error::AssumptionViolated {
                    step,
                    summary: report.summary(),
                });
            }
        }
        self.next_step += 1;

        if self.k_local == 0 {
            self.start_k = self.next_k;
            self.first_step = step;
        }
        self.k_local += 1;
        self.next_k += 1;

        let before = self.informed();
        let beta4_prev = self.beta4();

        let updated = m.updated_rows();
        let mut new_rows = Vec::with_capacity(updated.len());
        for &i in updated {
            let p_row = m.p().row(i);
            let mut row = vec![0.0; self.n];
            for (mcol, &w) in p_row.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (r, jv) in row.iter_mut().zip(self.j.row(mcol)) {
                    *r += w * jv;
                }
            }
            new_rows.push((i, row, self.predicted_deficit(m, i, params)));
        }
        for (i, row, d) in new_rows {
            self.j.row_mut(i).copy_from_slice(&row);
            self.deficit[i] = d;
            if Self::own_deficit(m, i, params) > 0.0 {
                self.g[i] = Some(self.k_local);
            }
        }

        let mut events = Vec::new();
        if !self.started && (0..self.n).any(|i| self.is_informed(i)) {
            self.started = true;
            events.push(SliceEvent::Started);
        }
        for &i in updated {
            let now = self.is_informed(i);
            let was = before.contains(&i);
            if now && !was {
                if self.h[i].is_none() {
                    self.h[i] = Some(self.k_local);
                    self.beta4_at_h[i] = beta4_prev;
                }
                events.push(SliceEvent::Success {
                    row: i,
                    row_sum: self.row_sum(i),
                });
            } else if was && !now {
                events.push(SliceEvent::Lost {
                    row: i,
                    row_sum: self.row_sum(i),
                });
            }
        }
        if events.is_empty() {
            events.push(SliceEvent::Absorbed);
        }
        if (0..self.n).all(|i| self.is_informed(i)) {
            let slice = self.finish(params, step)?;
            events.push(SliceEvent::Completed(Box::new(slice)));
        }
        Ok(events)
    }

    fn finish(&mut self, params: &Params, last_step: usize) -> Result<Slice> {
        let product = std::mem::replace(&mut self.j, Matrix::identity(self.n));
        let length = self.k_local;
        let slice = Slice {
            index: self.slices_done,
            norm: inf_norm(&product),
            bound: bounds::slice_norm_bound(length, params)?,
            product,
            length,
            start_k: self.start_k,
            end_k: self.start_k + length - 1,
            first_step: self.first_step,
            last_step,
            row_deficits: std::mem::replace(&mut self.deficit, vec![0.0; self.n]),
            h: std::mem::replace(&mut self.h, vec![None; self.n]),
            g: std::mem::replace(&mut self.g, vec![None; self.n]),
            beta4_at_h: std::mem::replace(&mut self.beta4_at_h, vec![None; self.n]),
        };
        self.k_local = 0;
        self.started = false;
        self.slices_done += 1;
        Ok(slice)
    }
}

/// One line of the event log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub k: usize,
    pub event: String,
    pub row: Option<usize>,
    pub row_sum_after: Option<f64>,
}

impl EventRecord {
    pub fn from_event(k: usize, event: &SliceEvent) -> Self {
        let (row, row_sum_after) = match event {
            SliceEvent::Success { row, row_sum } | SliceEvent::Lost { row, row_sum } => {
                (Some(*row), Some(*row_sum))
            }
            SliceEvent::Completed(s) => (None, Some(s.norm)),
            _ => (None, None),
        };
        Self {
            k,
            event: event.name().to_string(),
            row,
            row_sum_after,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SequenceRun {
    pub slices: Vec<Slice>,
    pub events: Vec<EventRecord>,
    pub residual: SliceState,
}

/// Feeds a whole sequence through a fresh [`SliceState`].
pub fn run_sequence(matrices: &[SystemMatrix], params: &Params, mode: Mode) -> Result<SequenceRun> {
    let n = matrices.first().map_or(0, SystemMatrix::n);
    let mut state = SliceState::new(n);
    let mut slices = Vec::new();
    let mut events = Vec::new();
    for (k, m) in matrices.iter().enumerate() {
        for ev in state.push(m, params, mode)? {
            events.push(EventRecord::from_event(k, &ev));
            if let SliceEvent::Completed(s) = ev {
                slices.push(*s);
            }
        }
    }
    Ok(SequenceRun {
        slices,
        events,
        residual: state,
    })
}
