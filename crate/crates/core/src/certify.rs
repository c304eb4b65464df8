//! Sufficient conditions for absolute asymptotic stability of the
//! slice-indexed dynamics, checked on a finite sample of slice lengths.
//!
//! Every verdict is scoped to the supplied horizon: a `Certified` result says
//! the observed prefix satisfies the condition, which carries over to the
//! infinite sequence only if the generating process is stationary.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::bounds;
use crate::error::{Error, Result};
use crate::matrix::Params;
use crate::parallel::{par_map, Execution};

/// Integer lengths are compared against real-valued caps with this slack,
/// which absorbs the rounding of the `ln`/`exp` chain in the cap formula.
pub const CAP_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Certified,
    NotCertified,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Case {
    /// Every slice length bounded by `N`.
    CaseI,
    /// An infinite family of slices bounded by `N1`, the rest finite.
    CaseII,
    /// For every `i` some distinct slice fits under the growing cap.
    CaseIII,
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::CaseI => "I",
            Case::CaseII => "II",
            Case::CaseIII => "III",
        })
    }
}

/// Cumulative products `prod (1 - alpha_j)` and the matching partial sums of
/// `-ln(1 - alpha_j)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundTrace {
    pub products: Vec<f64>,
    pub neg_log_sums: Vec<f64>,
}

impl BoundTrace {
    /// First 0-based position where the product drops below `level`.
    pub fn first_below(&self, level: f64) -> Option<usize> {
        self.products.iter().position(|&p| p < level)
    }
}

/// One matched pair of the case-iii assignment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// 1-based cap index.
    pub i: usize,
    /// 0-based slice index.
    pub slice: usize,
    pub length: usize,
    pub cap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub verdict: Verdict,
    pub case_used: Option<Case>,
    pub horizon: usize,
    /// Named witness values (N, delta, N1, delta1, gamma1, gamma2, ...).
    pub witnesses: BTreeMap<String, f64>,
    pub assignment: Vec<Assignment>,
    pub trace: BoundTrace,
    pub notes: Vec<String>,
}

impl Certificate {
    fn new(horizon: usize) -> Self {
        Self {
            verdict: Verdict::NotCertified,
            case_used: None,
            horizon,
            witnesses: BTreeMap::new(),
            assignment: Vec::new(),
            trace: BoundTrace::default(),
            notes: Vec::new(),
        }
    }

    pub fn is_certified(&self) -> bool {
        self.verdict == Verdict::Certified
    }

    /// Plain-text certificate document. `trace_ref` names the CSV holding
    /// the bound trace.
    pub fn to_document(&self, trace_ref: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# slice-length stability certificate");
        let _ = writeln!(out, "verdict: {:?}", self.verdict);
        let _ = writeln!(
            out,
            "case: {}",
            self.case_used.map_or("none".to_string(), |c| c.to_string())
        );
        let _ = writeln!(out, "horizon: {}", self.horizon);
        let _ = writeln!(
            out,
            "scope: certified over horizon T={} under stationarity of the generating process",
            self.horizon
        );
        for (k, v) in &self.witnesses {
            let _ = writeln!(out, "witness.{k}: {}", compact(*v));
        }
        for note in &self.notes {
            let _ = writeln!(out, "note: {note}");
        }
        if let (Some(p), Some(s)) = (self.trace.products.last(), self.trace.neg_log_sums.last()) {
            let _ = writeln!(out, "trace.final_product: {}", compact(*p));
            let _ = writeln!(out, "trace.final_neg_log_sum: {}", compact(*s));
        }
        let _ = writeln!(out, "trace: {trace_ref}");
        if !self.assignment.is_empty() {
            let _ = writeln!(out, "assignment:");
            let _ = writeln!(out, "i,slice,length,cap");
            for a in &self.assignment {
                let _ = writeln!(out, "{},{},{},{}", a.i, a.slice, a.length, a.cap);
            }
        }
        out
    }
}

/// Cumulative bound trace for slices of the given lengths, in log-space.
pub fn bound_trace(lengths: &[usize], params: &Params) -> Result<BoundTrace> {
    let mut trace = BoundTrace {
        products: Vec::with_capacity(lengths.len()),
        neg_log_sums: Vec::with_capacity(lengths.len()),
    };
    let mut acc = 0.0;
    for &len in lengths {
        acc += bounds::neg_log_one_minus_gap(len, params)?;
        trace.neg_log_sums.push(acc);
        trace.products.push((-acc).exp());
    }
    Ok(trace)
}

fn check_lengths(lengths: &[usize]) -> Result<()> {
    match lengths.iter().position(|&l| l < 1) {
        Some(pos) => Err(Error::InvalidLength(lengths[pos])),
        None => Ok(()),
    }
}

/// Plain decimals for moderate magnitudes, exponent form otherwise.
fn compact(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-4 || v.abs() >= 1e9) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn delta(cap: usize, params: &Params) -> f64 {
    1.0 + (((cap.max(1) - 1) as f64) * params.beta1.ln()).exp() * (params.beta2 - 1.0)
}

/// Every slice no longer than `n_cap`.
pub fn certify_case1(lengths: &[usize], n_cap: usize, params: &Params) -> Result<Certificate> {
    check_lengths(lengths)?;
    let mut cert = Certificate::new(lengths.len());
    cert.witnesses.insert("N".into(), n_cap as f64);
    cert.witnesses.insert("delta".into(), delta(n_cap, params));
    cert.witnesses.insert(
        "ln_one_minus_delta".into(),
        bounds::log_slice_gap(n_cap.max(1), params)?,
    );
    cert.trace = bound_trace(lengths, params)?;
    if !lengths.is_empty() && lengths.iter().all(|&l| l <= n_cap) {
        cert.verdict = Verdict::Certified;
        cert.case_used = Some(Case::CaseI);
    } else if let Some(pos) = lengths.iter().position(|&l| l > n_cap) {
        cert.notes.push(format!(
            "slice {pos} has length {} > N={n_cap}",
            lengths[pos]
        ));
    }
    Ok(cert)
}

/// Caller-declared family of slices for the bounded-subsequence condition.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SubsetDeclaration {
    pub indices: Vec<usize>,
    /// Asserted by the caller from generator metadata: the family keeps
    /// recurring forever. No finite sample can establish it.
    pub declared_infinite: bool,
}

/// A declared infinite family bounded by `n1_cap`; all other slices finite.
pub fn certify_case2(
    lengths: &[usize],
    n1_cap: usize,
    subset: &SubsetDeclaration,
    params: &Params,
) -> Result<Certificate> {
    check_lengths(lengths)?;
    let mut seen = vec![false; lengths.len()];
    for &j in &subset.indices {
        if j >= lengths.len() {
            return Err(Error::InvalidSubset(format!(
                "index {j} out of range for {} slices",
                lengths.len()
            )));
        }
        if std::mem::replace(&mut seen[j], true) {
            return Err(Error::InvalidSubset(format!("duplicate index {j}")));
        }
    }
    let mut cert = Certificate::new(lengths.len());
    cert.witnesses.insert("N1".into(), n1_cap as f64);
    cert.witnesses
        .insert("delta1".into(), delta(n1_cap, params));
    cert.witnesses.insert(
        "ln_one_minus_delta1".into(),
        bounds::log_slice_gap(n1_cap.max(1), params)?,
    );
    cert.witnesses
        .insert("subset_size".into(), subset.indices.len() as f64);
    let sub_lengths: Vec<usize> = subset.indices.iter().map(|&j| lengths[j]).collect();
    cert.trace = bound_trace(&sub_lengths, params)?;

    if subset.indices.is_empty() {
        cert.notes
            .push("empty subset: no bounded infinite family".into());
        return Ok(cert);
    }
    if !subset.declared_infinite {
        cert.notes
            .push("subset not declared infinite by the generator".into());
        return Ok(cert);
    }
    if let Some(&j) = subset.indices.iter().find(|&&j| lengths[j] > n1_cap) {
        cert.notes.push(format!(
            "slice {j} in the subset has length {} > N1={n1_cap}",
            lengths[j]
        ));
        return Ok(cert);
    }
    cert.verdict = Verdict::Certified;
    cert.case_used = Some(Case::CaseII);
    cert.notes
        .push("infinitude of the subset is asserted by the caller, not observed".into());
    Ok(cert)
}

/// Real-valued length cap for the `i`-th member of the growing family:
/// `ln((1 - exp(-gamma2 i^-gamma1)) / (1 - beta2)) / ln(beta1) + 1`.
pub fn case3_length_cap(i: usize, gamma1: f64, gamma2: f64, params: &Params) -> Result<f64> {
    if i < 1 {
        return Err(Error::InvalidIndex("case-iii index starts at 1".into()));
    }
    if !(0.0..=1.0).contains(&gamma1) || gamma2.is_nan() || gamma2 <= 0.0 {
        return Err(Error::InvalidParams(format!(
            "gamma1={gamma1} must lie in [0,1] and gamma2={gamma2} must be positive"
        )));
    }
    let rate = gamma2 * (i as f64).powf(-gamma1);
    let threshold = (-rate).exp();
    if params.beta2 >= threshold {
        return Err(Error::MeaninglessBound {
            i,
            beta2: params.beta2,
            threshold,
        });
    }
    // 1 - exp(-rate), accurate for small rates
    let one_minus = -(-rate).exp_m1();
    Ok((one_minus.ln() - (-params.beta2).ln_1p()) / params.beta1.ln() + 1.0)
}

/// Greedy matching of the `horizon` shortest slices to the caps
/// `cap(1..=horizon)`, both sorted ascending. Returns the assignment when
/// every pair fits, `None` otherwise.
pub fn greedy_case3_assignment(lengths: &[usize], caps: &[f64]) -> Option<Vec<Assignment>> {
    if caps.len() > lengths.len() {
        return None;
    }
    let mut by_len: Vec<usize> = (0..lengths.len()).collect();
    by_len.sort_by_key(|&j| (lengths[j], j));
    let mut by_cap: Vec<usize> = (0..caps.len()).collect();
    by_cap.sort_by(|&a, &b| caps[a].total_cmp(&caps[b]).then(a.cmp(&b)));
    let mut out = Vec::with_capacity(caps.len());
    for (&ci, &j) in by_cap.iter().zip(&by_len) {
        if lengths[j] as f64 > caps[ci] + CAP_SLACK {
            return None;
        }
        out.push(Assignment {
            i: ci + 1,
            slice: j,
            length: lengths[j],
            cap: caps[ci],
        });
    }
    out.sort_by_key(|a| a.i);
    Some(out)
}

/// Growing-cap condition over the full sample (`horizon = lengths.len()`).
pub fn certify_case3(
    lengths: &[usize],
    gamma1: f64,
    gamma2: f64,
    params: &Params,
) -> Result<Certificate> {
    certify_case3_with_horizon(lengths, gamma1, gamma2, lengths.len(), params)
}

/// Growing-cap condition for `i = 1..=horizon`; slices beyond the matched
/// ones only need to be finite.
pub fn certify_case3_with_horizon(
    lengths: &[usize],
    gamma1: f64,
    gamma2: f64,
    horizon: usize,
    params: &Params,
) -> Result<Certificate> {
    check_lengths(lengths)?;
    let caps = (1..=horizon)
        .map(|i| case3_length_cap(i, gamma1, gamma2, params))
        .collect::<Result<Vec<_>>>()?;
    let mut cert = Certificate::new(horizon);
    cert.witnesses.insert("gamma1".into(), gamma1);
    cert.witnesses.insert("gamma2".into(), gamma2);
    if horizon == 0 {
        cert.notes.push("empty horizon".into());
        return Ok(cert);
    }
    match greedy_case3_assignment(lengths, &caps) {
        Some(assignment) => {
            let matched: Vec<usize> = assignment.iter().map(|a| a.length).collect();
            cert.trace = bound_trace(&matched, params)?;
            cert.assignment = assignment;
            cert.verdict = Verdict::Certified;
            cert.case_used = Some(Case::CaseIII);
        }
        None => {
            cert.trace = bound_trace(lengths, params)?;
            cert.notes.push(format!(
                "no injective assignment of slices to caps i=1..{horizon}"
            ));
        }
    }
    Ok(cert)
}

/// `(gamma1, gamma2)` candidates tried in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaGrid {
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
}

impl Default for GammaGrid {
    /// gamma1 in {0, 0.25, 0.5, 0.75, 1}; gamma2 over 21 log-spaced points
    /// from 1e-3 to 1e2.
    fn default() -> Self {
        Self {
            gamma1: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            gamma2: logspace(-3.0, 2.0, 21),
        }
    }
}

impl GammaGrid {
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.gamma1
            .iter()
            .flat_map(|&g1| self.gamma2.iter().map(move |&g2| (g1, g2)))
            .collect()
    }
}

pub fn logspace(start_exp: f64, end_exp: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![10f64.powf(start_exp)],
        _ => (0..count)
            .map(|k| {
                let t = k as f64 / (count - 1) as f64;
                10f64.powf(start_exp + t * (end_exp - start_exp))
            })
            .collect(),
    }
}

/// First grid point (in grid order) that certifies case iii. Points whose
/// cap is meaningless for some `i` are skipped.
pub fn search_case3_grid(
    lengths: &[usize],
    grid: &GammaGrid,
    params: &Params,
    exec: Execution,
) -> Result<Certificate> {
    check_lengths(lengths)?;
    let points = grid.points();
    let results = par_map(exec, &points, |&(g1, g2)| {
        certify_case3(lengths, g1, g2, params)
    });
    let mut skipped = 0usize;
    let mut last = None;
    for r in results {
        match r {
            Ok(c) if c.is_certified() => return Ok(c),
            Ok(c) => last = Some(c),
            Err(Error::MeaninglessBound { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    let mut cert = last.unwrap_or_else(|| {
        let mut c = Certificate::new(lengths.len());
        c.trace = bound_trace(lengths, params).unwrap_or_default();
        c
    });
    cert.witnesses.clear();
    cert.assignment.clear();
    cert.notes = vec![format!(
        "no grid point certified ({} tried, {skipped} meaningless)",
        points.len()
    )];
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> Params {
        Params::new(0.05, 0.7, 0.1).unwrap()
    }

    #[test]
    fn case1_examples() {
        let c = certify_case1(&[5; 10], 5, &p()).unwrap();
        assert!(c.is_certified());
        assert_eq!(c.case_used, Some(Case::CaseI));
        let want = 1.0 - 0.05f64.powi(4) * 0.3;
        assert!((c.witnesses["delta"] - want).abs() < 1e-15);

        let c = certify_case1(&[5, 5, 6], 5, &p()).unwrap();
        assert!(!c.is_certified());

        let lens = [3, 9, 4, 7];
        let c = certify_case1(&lens, *lens.iter().max().unwrap(), &p()).unwrap();
        assert!(c.is_certified());
        assert!(certify_case1(&[0], 3, &p()).is_err());
    }

    #[test]
    fn case2_examples() {
        let lengths: Vec<usize> = (0..20)
            .map(|j| if j % 2 == 0 { 7 + j % 4 } else { 50 + j })
            .collect();
        let even = SubsetDeclaration {
            indices: (0..20).step_by(2).collect(),
            declared_infinite: true,
        };
        let c = certify_case2(&lengths, 10, &even, &p()).unwrap();
        assert!(c.is_certified());
        assert_eq!(c.witnesses["N1"], 10.0);

        let empty = SubsetDeclaration {
            indices: vec![],
            declared_infinite: true,
        };
        assert!(!certify_case2(&lengths, 10, &empty, &p())
            .unwrap()
            .is_certified());

        let mut huge = lengths.clone();
        huge[1] = 1_000_000;
        assert!(certify_case2(&huge, 10, &even, &p())
            .unwrap()
            .is_certified());

        let undeclared = SubsetDeclaration {
            declared_infinite: false,
            ..even.clone()
        };
        assert!(!certify_case2(&lengths, 10, &undeclared, &p())
            .unwrap()
            .is_certified());

        let bad = SubsetDeclaration {
            indices: vec![0, 0],
            declared_infinite: true,
        };
        assert!(matches!(
            certify_case2(&lengths, 10, &bad, &p()),
            Err(Error::InvalidSubset(_))
        ));
        let bad = SubsetDeclaration {
            indices: vec![99],
            declared_infinite: true,
        };
        assert!(matches!(
            certify_case2(&lengths, 10, &bad, &p()),
            Err(Error::InvalidSubset(_))
        ));
    }

    #[test]
    fn case3_cap_examples() {
        let params = Params::new(0.05, 0.3, 0.1).unwrap();
        // independent arithmetic: (1/ln 0.05) ln((1 - e^-1)/0.7) + 1
        let e = std::f64::consts::E;
        let want = ((1.0 - 1.0 / e) / 0.7).ln() / 0.05f64.ln() + 1.0;
        let got = case3_length_cap(1, 1.0, 1.0, &params).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 1.034).abs() < 1e-3);

        let c1 = case3_length_cap(1, 0.0, 0.5, &params).unwrap();
        let c9 = case3_length_cap(9, 0.0, 0.5, &params).unwrap();
        assert_eq!(c1, c9);

        let mut prev = 0.0;
        for i in 1..1000 {
            let c = case3_length_cap(i, 0.5, 1.0, &params).unwrap();
            assert!(c >= prev);
            prev = c;
        }
        assert!(case3_length_cap(1_000_000_000, 1.0, 1.0, &params).unwrap() > 7.0);

        // beta2 = 0.7 is not below exp(-2)
        assert!(matches!(
            case3_length_cap(1, 1.0, 2.0, &p()),
            Err(Error::MeaninglessBound { .. })
        ));
    }

    #[test]
    fn case3_examples() {
        let params = Params::new(0.05, 0.3, 0.1).unwrap();
        let c = certify_case3(&[1; 30], 1.0, 1.0, &params).unwrap();
        assert!(c.is_certified());
        assert_eq!(c.assignment.len(), 30);

        let over: Vec<usize> = (1..=30)
            .map(|i| case3_length_cap(i, 1.0, 1.0, &params).unwrap().floor() as usize + 1)
            .collect();
        assert!(!certify_case3(&over, 1.0, 1.0, &params)
            .unwrap()
            .is_certified());
    }

    #[test]
    fn trace_examples() {
        let t = bound_trace(&[1], &p()).unwrap();
        assert!((t.products[0] - 0.7).abs() < 1e-15);

        let t = bound_trace(&[4; 6], &p()).unwrap();
        let delta = 1.0 - 0.05f64.powi(3) * 0.3;
        for (k, v) in t.products.iter().enumerate() {
            assert!((v - delta.powi(k as i32 + 1)).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_defaults() {
        let g = GammaGrid::default();
        assert_eq!(g.points().len(), 105);
        assert!((g.gamma2[0] - 1e-3).abs() < 1e-18);
        assert!((g.gamma2[20] - 100.0).abs() < 1e-10);
        assert!((g.gamma2[4] - 1e-2).abs() < 1e-15);
    }

    #[test]
    fn document_mentions_scope() {
        let c = certify_case1(&[2, 3], 3, &p()).unwrap();
        let doc = c.to_document("trace.csv");
        assert!(doc.contains("verdict: Certified"));
        assert!(doc.contains("case: I"));
        assert!(doc.contains("under stationarity"));
        assert!(doc.contains("trace: trace.csv"));
    }
}
