//! Random products of single-row (sub-)stochastic updates and the explicit
//! worst-case slice construction.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{inf_norm, multiply, spectral_radius, Matrix, Params, SystemMatrix};
use crate::slice::{EventRecord, Mode, Slice, SliceEvent, SliceState};

/// Shape of the random update stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProductSettings {
    pub n: usize,
    /// Relative odds of (stochastic row, sub-stochastic row, identity).
    pub form_weights: [f64; 3],
    /// Chance that each other row joins the support of a generated row.
    pub neighbor_prob: f64,
    pub spectral_tol: f64,
}

impl Default for ProductSettings {
    fn default() -> Self {
        Self {
            n: 4,
            form_weights: [1.0, 1.0, 1.0],
            neighbor_prob: 0.5,
            spectral_tol: 1e-10,
        }
    }
}

impl ProductSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("products.n must be at least 1".into()));
        }
        if self.form_weights.iter().any(|w| w.is_nan() || *w < 0.0)
            || self.form_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Config(
                "products.form_weights must be non-negative and not all zero".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.neighbor_prob) {
            return Err(Error::Config(
                "products.neighbor_prob must lie in [0,1]".into(),
            ));
        }
        Ok(())
    }
}

/// Draws update matrices with one anchor column (`s = 1`).
///
/// Stochastic rows put `beta1 + (1 - d beta1) w_l` on a random support of
/// size `d >= 2` that always includes the row itself, with `w` uniform on
/// the simplex, so every nonzero weight is at least `beta1`. Sub-stochastic
/// rows spread a sensor mass drawn from `(0, beta2]` over a random support
/// and give the rest to the anchor.
#[derive(Clone, Debug)]
pub struct ProductGenerator {
    settings: ProductSettings,
    params: Params,
    forms: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl ProductGenerator {
    pub fn new(settings: ProductSettings, params: Params, seed: u64) -> Result<Self> {
        settings.validate()?;
        params.validate()?;
        let forms = WeightedIndex::new(settings.form_weights)
            .map_err(|e| Error::Config(format!("products.form_weights: {e}")))?;
        Ok(Self {
            settings,
            params,
            forms,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn simplex(&mut self, d: usize) -> Vec<f64> {
        // exponential spacings, normalized
        let e: Vec<f64> = (0..d)
            .map(|_| -(1.0 - self.rng.gen::<f64>()).ln())
            .collect();
        let total: f64 = e.iter().sum();
        e.into_iter().map(|v| v / total).collect()
    }

    fn support(&mut self, row: usize, at_least_one_other: bool) -> Vec<usize> {
        let n = self.settings.n;
        let mut others: Vec<usize> = (0..n)
            .filter(|&j| j != row && self.rng.gen::<f64>() < self.settings.neighbor_prob)
            .collect();
        if at_least_one_other && others.is_empty() && n > 1 {
            let pick = self.rng.gen_range(0..n - 1);
            others.push(if pick >= row { pick + 1 } else { pick });
        }
        others.shuffle(&mut self.rng);
        others.insert(0, row);
        others
    }

    fn stochastic(&mut self, row: usize) -> Result<SystemMatrix> {
        let n = self.settings.n;
        let max_support = ((1.0 / self.params.beta1) + 1e-9).floor() as usize;
        if n < 2 || max_support < 2 {
            return Ok(SystemMatrix::identity(n, 1));
        }
        let mut support = self.support(row, true);
        support.truncate(max_support);
        let d = support.len();
        let spread = self.simplex(d);
        let free = 1.0 - d as f64 * self.params.beta1;
        let mut p_row = vec![0.0; n];
        for (&j, w) in support.iter().zip(spread) {
            p_row[j] = self.params.beta1 + free * w;
        }
        SystemMatrix::row_update(n, 1, row, &p_row, &[0.0])
    }

    fn substochastic(&mut self, row: usize) -> Result<SystemMatrix> {
        let n = self.settings.n;
        let mass = self.params.beta2 * (1.0 - self.rng.gen::<f64>());
        let support = self.support(row, false);
        let spread = self.simplex(support.len());
        let mut p_row = vec![0.0; n];
        for (&j, w) in support.iter().zip(spread) {
            p_row[j] = mass * w;
        }
        let used: f64 = p_row.iter().sum();
        SystemMatrix::row_update(n, 1, row, &p_row, &[1.0 - used])
    }

    pub fn next_matrix(&mut self) -> Result<SystemMatrix> {
        let form = self.forms.sample(&mut self.rng);
        let row = self.rng.gen_range(0..self.settings.n);
        match form {
            0 => self.stochastic(row),
            1 => self.substochastic(row),
            _ => Ok(SystemMatrix::identity(self.settings.n, 1)),
        }
    }

    pub fn take(&mut self, len: usize) -> Result<Vec<SystemMatrix>> {
        (0..len).map(|_| self.next_matrix()).collect()
    }
}

pub fn generate_sequence(
    settings: &ProductSettings,
    params: &Params,
    seed: u64,
    len: usize,
) -> Result<Vec<SystemMatrix>> {
    ProductGenerator::new(settings.clone(), *params, seed)?.take(len)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductPoint {
    pub k: usize,
    pub inf_norm: f64,
    pub spectral_radius: Option<f64>,
    pub spectral_converged: bool,
}

/// Norm of the product of all slices completed so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceProductPoint {
    pub slice_index: usize,
    pub k: usize,
    pub norm: f64,
}

#[derive(Clone, Debug)]
pub struct ProductsRun {
    pub matrices: Vec<SystemMatrix>,
    pub points: Vec<ProductPoint>,
    pub slices: Vec<Slice>,
    pub slice_products: Vec<SliceProductPoint>,
    pub events: Vec<EventRecord>,
    pub residual: SliceState,
}

impl ProductsRun {
    pub fn slice_lengths(&self) -> Vec<usize> {
        self.slices.iter().map(|s| s.length).collect()
    }
}

/// Generates `horizon` updates, partitions them into slices and records the
/// per-step product norm (and spectral radius when requested).
pub fn run_products(
    settings: &ProductSettings,
    params: &Params,
    mode: Mode,
    seed: u64,
    horizon: usize,
    with_spectral: bool,
) -> Result<ProductsRun> {
    let matrices = generate_sequence(settings, params, seed, horizon)?;
    let n = settings.n;
    let mut state = SliceState::new(n);
    let mut full = Matrix::identity(n);
    let mut slice_prod = Matrix::identity(n);
    let mut points = Vec::with_capacity(horizon);
    let mut slices = Vec::new();
    let mut slice_products = Vec::new();
    let mut events = Vec::new();

    for (k, m) in matrices.iter().enumerate() {
        if !m.is_identity() {
            full = multiply(m.p(), &full)?;
        }
        let (rho, converged) = if with_spectral {
            match spectral_radius(&full, settings.spectral_tol) {
                Ok(r) => (Some(r), true),
                Err(Error::NonConvergence { estimate, .. }) => (Some(estimate), false),
                Err(e) => return Err(e),
            }
        } else {
            (None, true)
        };
        points.push(ProductPoint {
            k,
            inf_norm: inf_norm(&full),
            spectral_radius: rho,
            spectral_converged: converged,
        });
        for ev in state.push(m, params, mode)? {
            events.push(EventRecord::from_event(k, &ev));
            if let SliceEvent::Completed(s) = ev {
                slice_prod = multiply(&s.product, &slice_prod)?;
                slice_products.push(SliceProductPoint {
                    slice_index: s.index,
                    k,
                    norm: inf_norm(&slice_prod),
                });
                slices.push(*s);
            }
        }
    }
    Ok(ProductsRun {
        matrices,
        points,
        slices,
        slice_products,
        events,
        residual: state,
    })
}

/// The worst-case slice: a sub-stochastic update with sensor mass exactly
/// `beta2` opens it, `length - n` updates of row 0 with weight `beta1` on
/// itself and `1 - beta1` on a still-stochastic row push its sum up, and rows
/// `1..n` then become sub-stochastic one by one with weight `beta1` on the
/// previous (largest-sum) row. The final largest row sum is
/// `1 - beta1^(length-1) (1 - beta2)`.
pub fn adversarial_slice(n: usize, length: usize, params: &Params) -> Result<Vec<SystemMatrix>> {
    if n == 0 || length < n || (n == 1 && length != 1) {
        return Err(Error::InvalidLength(length));
    }
    if params.beta1 > 0.5 {
        return Err(Error::InvalidParams(
            "worst-case construction needs beta1 <= 0.5".into(),
        ));
    }
    let b1 = params.beta1;
    let mut seq = Vec::with_capacity(length);
    let mut first = vec![0.0; n];
    first[0] = params.beta2;
    seq.push(SystemMatrix::row_update(
        n,
        1,
        0,
        &first,
        &[1.0 - params.beta2],
    )?);
    for _ in 0..length - n {
        let mut row = vec![0.0; n];
        row[0] = b1;
        row[1] = 1.0 - b1;
        seq.push(SystemMatrix::row_update(n, 1, 0, &row, &[0.0])?);
    }
    for k in 1..n {
        let mut row = vec![0.0; n];
        row[k - 1] = b1;
        row[k] = 1.0 - b1;
        seq.push(SystemMatrix::row_update(n, 1, k, &row, &[0.0])?);
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::validate_update;
    use crate::slice::run_sequence;

    #[test]
    fn generated_updates_satisfy_assumptions() {
        let params = Params::default();
        let settings = ProductSettings::default();
        let seq = generate_sequence(&settings, &params, 11, 2000).unwrap();
        let mut kinds = [0usize; 3];
        for m in &seq {
            assert!(validate_update(m, &params).holds(), "{m:?}");
            if m.is_identity() {
                kinds[2] += 1;
            } else if m.uses_anchor(m.updated_row().unwrap(), &params) {
                kinds[1] += 1;
            } else {
                kinds[0] += 1;
            }
        }
        assert!(kinds.iter().all(|&c| c > 500), "{kinds:?}");
    }

    #[test]
    fn same_seed_same_sequence() {
        let params = Params::default();
        let s = ProductSettings::default();
        assert_eq!(
            generate_sequence(&s, &params, 5, 300).unwrap(),
            generate_sequence(&s, &params, 5, 300).unwrap()
        );
        assert_ne!(
            generate_sequence(&s, &params, 5, 300).unwrap(),
            generate_sequence(&s, &params, 6, 300).unwrap()
        );
    }

    #[test]
    fn zero_horizon_is_empty() {
        let run = run_products(
            &ProductSettings::default(),
            &Params::default(),
            Mode::Strict,
            1,
            0,
            true,
        )
        .unwrap();
        assert!(run.points.is_empty() && run.slices.is_empty() && run.events.is_empty());
    }

    #[test]
    fn adversarial_slice_is_tight() {
        let params = Params::new(0.2, 0.6, 0.1).unwrap();
        let seq = adversarial_slice(3, 5, &params).unwrap();
        let run = run_sequence(&seq, &params, Mode::Strict).unwrap();
        assert_eq!(run.slices.len(), 1);
        let s = &run.slices[0];
        assert_eq!(s.length, 5);
        let want = 1.0 - 0.2f64.powi(4) * 0.4;
        assert!((s.norm - want).abs() < 1e-14, "{} vs {want}", s.norm);
        assert!(adversarial_slice(4, 3, &params).is_err());
    }
}
