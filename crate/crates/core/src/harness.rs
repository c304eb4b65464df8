//! Experiment configs and the three command drivers behind the CLI.
//!
//! Every command writes deterministic CSVs, a `summary.txt` and gnuplot
//! scripts into the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::certify::{
    certify_case1, certify_case2, certify_case3_with_horizon, search_case3_grid, Certificate,
    GammaGrid, SubsetDeclaration,
};
use crate::error::{Error, Result};
use crate::io;
use crate::matrix::Params;
use crate::parallel::Execution;
use crate::products::{run_products, ProductSettings, ProductsRun};
use crate::sim::{run_leader_follower, LfRun, WorldConfig};
use crate::slice::Mode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub horizon: usize,
    pub output_dir: Option<PathBuf>,
    pub mode: Mode,
    pub execution: Execution,
    /// Also dump every generated matrix (products only).
    pub dump_sequence: bool,
    pub params: Params,
    pub products: ProductSettings,
    pub world: WorldConfig,
    pub certify: Option<CertifyConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            horizon: 200,
            output_dir: None,
            mode: Mode::Strict,
            execution: Execution::Parallel,
            dump_sequence: false,
            params: Params::default(),
            products: ProductSettings::default(),
            world: WorldConfig::default(),
            certify: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.params
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Loads a TOML config; a relative `certify.slice_log` is resolved
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(c) = cfg.certify.as_mut() {
            if let Some(log) = c.slice_log.as_mut() {
                if log.is_relative() {
                    *log = base.join(&*log);
                }
            }
        }
        Ok(cfg)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyConfig {
    pub slice_log: Option<PathBuf>,
    /// Length bound to try for the bounded-length condition.
    pub case1_cap: Option<usize>,
    pub case2: Option<Case2Config>,
    pub grid: GammaGrid,
    /// Number of caps to match; all slices by default.
    pub case3_horizon: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Case2Config {
    pub cap: usize,
    pub subset: SubsetSpec,
    #[serde(default)]
    pub declared_infinite: bool,
}

/// `"even"`, `"odd"`, `"all"` or an explicit index list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SubsetSpec {
    Named(String),
    Indices(Vec<usize>),
}

impl SubsetSpec {
    pub fn resolve(&self, count: usize) -> Result<Vec<usize>> {
        match self {
            SubsetSpec::Indices(v) => Ok(v.clone()),
            SubsetSpec::Named(name) => match name.as_str() {
                "all" => Ok((0..count).collect()),
                "even" => Ok((0..count).step_by(2).collect()),
                "odd" => Ok((1..count).step_by(2).collect()),
                other => Err(Error::Config(format!("unknown subset {other:?}"))),
            },
        }
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn write_summary(path: &Path, lines: &[(String, String)]) -> Result<()> {
    let mut text = String::new();
    for (k, v) in lines {
        let _ = writeln!(text, "{k}: {v}");
    }
    io::write_text(path, &text)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProductsChecks {
    pub slices: usize,
    pub min_length: Option<usize>,
    pub lengths_at_least_n: bool,
    pub slice_products_strictly_decreasing: bool,
    pub norm_nonincreasing: bool,
    pub spectral_below_norm: bool,
}

impl ProductsChecks {
    pub fn of(run: &ProductsRun, n: usize) -> Self {
        let lengths = run.slice_lengths();
        Self {
            slices: lengths.len(),
            min_length: lengths.iter().copied().min(),
            lengths_at_least_n: lengths.iter().all(|&l| l >= n),
            slice_products_strictly_decreasing: run
                .slice_products
                .windows(2)
                .all(|w| w[1].norm < w[0].norm)
                && run.slice_products.first().is_none_or(|p| p.norm < 1.0),
            norm_nonincreasing: run
                .points
                .windows(2)
                .all(|w| w[1].inf_norm <= w[0].inf_norm * (1.0 + n as f64 * f64::EPSILON)),
            spectral_below_norm: run
                .points
                .iter()
                .all(|p| p.spectral_radius.is_none_or(|r| r <= p.inf_norm + 1e-12)),
        }
    }

    pub fn all_pass(&self) -> bool {
        self.lengths_at_least_n
            && self.slice_products_strictly_decreasing
            && self.norm_nonincreasing
            && self.spectral_below_norm
    }
}

pub struct ProductsReport {
    pub run: ProductsRun,
    pub checks: ProductsChecks,
}

const PRODUCTS_PLOT: &str = "\
set datafile separator ','
set terminal pngcairo size 1000,800
set output 'products.png'
set multiplot layout 2,1
set logscale y
set xlabel 'k'
set ylabel 'norm'
plot 'products.csv' every ::1 using 1:2 with lines title 'product inf-norm', \\
     'products.csv' every ::1 using 1:3 with lines title 'spectral radius', \\
     'slice_products.csv' every ::1 using 2:3 with linespoints title 'slice product inf-norm'
unset logscale y
set xlabel 'slice'
set ylabel 'length'
plot 'slices.csv' every ::1 using 1:4 with impulses lw 3 title 'slice length'
unset multiplot
";

pub fn cmd_products(cfg: &ExperimentConfig, out: &Path) -> Result<ProductsReport> {
    let n = cfg.products.n;
    let run = run_products(
        &cfg.products,
        &cfg.params,
        cfg.mode,
        cfg.seed,
        cfg.horizon,
        true,
    )?;
    io::write_table(
        &out.join("products.csv"),
        &["k", "inf_norm", "spectral_radius", "spectral_converged"],
        run.points.iter().map(|p| {
            vec![
                p.k.to_string(),
                num(p.inf_norm),
                p.spectral_radius.map_or(String::new(), num),
                p.spectral_converged.to_string(),
            ]
        }),
    )?;
    io::write_table(
        &out.join("slice_products.csv"),
        &["slice_index", "k", "norm"],
        run.slice_products
            .iter()
            .map(|p| vec![p.slice_index.to_string(), p.k.to_string(), num(p.norm)]),
    )?;
    io::write_slice_log(&out.join("slices.csv"), &run.slices)?;
    io::write_event_log(&out.join("events.csv"), &run.events)?;
    io::write_text(&out.join("products.gp"), PRODUCTS_PLOT)?;
    if cfg.dump_sequence {
        io::write_sequence(&out.join("sequence"), &run.matrices)?;
    }
    let checks = ProductsChecks::of(&run, n);
    write_summary(
        &out.join("summary.txt"),
        &[
            ("seed".into(), cfg.seed.to_string()),
            ("horizon".into(), cfg.horizon.to_string()),
            ("n".into(), n.to_string()),
            ("slices".into(), checks.slices.to_string()),
            (
                "min_slice_length".into(),
                checks.min_length.map_or("none".into(), |l| l.to_string()),
            ),
            (
                "lengths_at_least_n".into(),
                checks.lengths_at_least_n.to_string(),
            ),
            (
                "slice_products_strictly_decreasing".into(),
                checks.slice_products_strictly_decreasing.to_string(),
            ),
            (
                "norm_nonincreasing".into(),
                checks.norm_nonincreasing.to_string(),
            ),
            (
                "spectral_below_norm".into(),
                checks.spectral_below_norm.to_string(),
            ),
            (
                "final_norm".into(),
                run.points.last().map_or("none".into(), |p| num(p.inf_norm)),
            ),
        ],
    )?;
    Ok(ProductsReport { run, checks })
}

pub struct LfReport {
    pub run: LfRun,
    pub max_residual: f64,
    pub steady_state_ok: bool,
    pub boundary_errors_nonincreasing: bool,
    pub final_error: f64,
}

/// Steady-state tolerance applied to every finished slice.
pub const STEADY_STATE_TOL: f64 = 1e-10;

fn positions_plot(cfg: &WorldConfig) -> String {
    let mut s = String::from(
        "set datafile separator ','\nset terminal pngcairo size 800,800\nset output 'positions.png'\nset size ratio -1\nset xlabel 'x'\nset ylabel 'y'\n",
    );
    for (idx, d) in cfg
        .sensors
        .iter()
        .chain(std::iter::once(&cfg.anchor))
        .enumerate()
    {
        let _ = writeln!(
            s,
            "set object {} circle at {},{} size {} fs empty border lc rgb 'gray'",
            idx + 1,
            d.center[0],
            d.center[1],
            d.radius
        );
    }
    let last = cfg.sensors.len();
    let _ = writeln!(
        s,
        "plot for [i=0:{last}] 'positions.csv' every ::1 using ($2==i?$3:1/0):($2==i?$4:1/0) with lines title (i=={last} ? 'anchor' : sprintf('sensor %d', i+1))"
    );
    s
}

fn states_plot(cfg: &WorldConfig) -> String {
    format!(
        "set datafile separator ','\nset terminal pngcairo size 1000,600\nset output 'states.png'\nset xlabel 'k'\nset ylabel 'state'\n\
plot for [i=0:{}] 'trajectory.csv' every ::1 using ($2==i?$1:1/0):($2==i?$3:1/0) with lines title sprintf('sensor %d', i+1), \\\n     {} with lines dt 2 title 'anchor'\n",
        cfg.sensors.len() - 1,
        cfg.u
    )
}

pub fn cmd_leader_follower(cfg: &ExperimentConfig, out: &Path) -> Result<LfReport> {
    let run = run_leader_follower(&cfg.world, &cfg.params, cfg.seed, cfg.horizon, cfg.mode)?;
    let n = run.initial_states.len();

    let initial = run
        .initial_states
        .iter()
        .enumerate()
        .map(|(i, x)| vec!["0".into(), i.to_string(), num(*x)]);
    let steps = run.trajectory.iter().flat_map(|r| {
        r.states_after
            .iter()
            .enumerate()
            .map(move |(i, x)| vec![(r.k + 1).to_string(), i.to_string(), num(*x)])
    });
    io::write_table(
        &out.join("trajectory.csv"),
        &["k", "sensor", "state"],
        initial.chain(steps),
    )?;

    let initial_pos = run
        .initial_positions
        .iter()
        .enumerate()
        .map(|(i, p)| vec!["0".into(), i.to_string(), num(p[0]), num(p[1])]);
    let step_pos = run.trajectory.iter().flat_map(|r| {
        r.positions
            .iter()
            .enumerate()
            .map(move |(i, p)| vec![(r.k + 1).to_string(), i.to_string(), num(p[0]), num(p[1])])
    });
    io::write_table(
        &out.join("positions.csv"),
        &["k", "node", "x", "y"],
        initial_pos.chain(step_pos),
    )?;

    io::write_table(
        &out.join("updates.csv"),
        &["k", "sensor", "kind"],
        run.trajectory.iter().map(|r| {
            vec![
                r.k.to_string(),
                r.updating_sensor.map_or(String::new(), |i| i.to_string()),
                r.update_kind.name().to_string(),
            ]
        }),
    )?;

    let slices: Vec<_> = run.slices.iter().map(|s| s.slice.clone()).collect();
    io::write_slice_log(&out.join("slices.csv"), &slices)?;
    io::write_table(
        &out.join("steady_state.csv"),
        &["slice_index", "k", "residual", "pass", "error_after"],
        run.slices.iter().map(|s| {
            vec![
                s.slice.index.to_string(),
                s.k.to_string(),
                num(s.steady_residual),
                (s.steady_residual <= STEADY_STATE_TOL).to_string(),
                num(s.error_after),
            ]
        }),
    )?;
    io::write_text(&out.join("positions.gp"), &positions_plot(&cfg.world))?;
    io::write_text(&out.join("states.gp"), &states_plot(&cfg.world))?;

    let max_residual = run
        .slices
        .iter()
        .map(|s| s.steady_residual)
        .fold(0.0, f64::max);
    let errs = run.boundary_errors();
    let boundary_errors_nonincreasing = errs.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let final_error = crate::sim::max_error(
        run.trajectory
            .last()
            .map_or(&run.initial_states, |r| &r.states_after),
        run.u,
    );
    let report = LfReport {
        steady_state_ok: max_residual <= STEADY_STATE_TOL,
        max_residual,
        boundary_errors_nonincreasing,
        final_error,
        run,
    };
    write_summary(
        &out.join("summary.txt"),
        &[
            ("seed".into(), cfg.seed.to_string()),
            ("horizon".into(), cfg.horizon.to_string()),
            ("n".into(), n.to_string()),
            ("u".into(), num(cfg.world.u)),
            ("slices".into(), report.run.slices.len().to_string()),
            ("max_steady_state_residual".into(), num(max_residual)),
            ("steady_state_ok".into(), report.steady_state_ok.to_string()),
            (
                "boundary_errors_nonincreasing".into(),
                boundary_errors_nonincreasing.to_string(),
            ),
            ("final_error".into(), num(final_error)),
        ],
    )?;
    Ok(report)
}

pub struct CertifyReport {
    pub lengths: Vec<usize>,
    pub certificate: Certificate,
}

/// Tries the bounded-length condition, then the declared subsequence, then
/// the growing-cap grid; the first certificate wins.
pub fn cmd_certify(cfg: &ExperimentConfig, out: &Path) -> Result<CertifyReport> {
    let c = cfg
        .certify
        .as_ref()
        .ok_or_else(|| Error::Config("missing [certify] section".into()))?;
    let log = c
        .slice_log
        .as_ref()
        .ok_or_else(|| Error::Config("certify.slice_log is required".into()))?;
    let rows = io::read_slice_log(log)?;
    let lengths: Vec<usize> = rows.iter().map(|r| r.length).collect();
    let params = &cfg.params;

    let mut attempts = Vec::new();
    let mut chosen = None;
    if let Some(cap) = c.case1_cap {
        let cert = certify_case1(&lengths, cap, params)?;
        if cert.is_certified() {
            chosen = Some(cert);
        } else {
            attempts.push(format!("case I: {}", cert.notes.join("; ")));
        }
    }
    if chosen.is_none() {
        if let Some(c2) = &c.case2 {
            let subset = SubsetDeclaration {
                indices: c2.subset.resolve(lengths.len())?,
                declared_infinite: c2.declared_infinite,
            };
            let cert = certify_case2(&lengths, c2.cap, &subset, params)?;
            if cert.is_certified() {
                chosen = Some(cert);
            } else {
                attempts.push(format!("case II: {}", cert.notes.join("; ")));
            }
        }
    }
    let mut cert = match chosen {
        Some(cert) => cert,
        None => {
            let cert = match c.case3_horizon {
                None => search_case3_grid(&lengths, &c.grid, params, cfg.execution)?,
                Some(h) => first_certified_with_horizon(&lengths, &c.grid, h, params)?,
            };
            if !cert.is_certified() {
                attempts.push(format!("case III: {}", cert.notes.join("; ")));
            }
            cert
        }
    };
    if !cert.is_certified() {
        cert.notes = attempts;
    }

    io::write_text(&out.join("certificate.txt"), &cert.to_document("trace.csv"))?;
    io::write_table(
        &out.join("trace.csv"),
        &["index", "product", "neg_log_sum"],
        cert.trace
            .products
            .iter()
            .zip(&cert.trace.neg_log_sums)
            .enumerate()
            .map(|(i, (p, s))| vec![(i + 1).to_string(), num(*p), num(*s)]),
    )?;
    Ok(CertifyReport {
        lengths,
        certificate: cert,
    })
}

fn first_certified_with_horizon(
    lengths: &[usize],
    grid: &GammaGrid,
    horizon: usize,
    params: &Params,
) -> Result<Certificate> {
    let mut last = None;
    for (g1, g2) in grid.points() {
        match certify_case3_with_horizon(lengths, g1, g2, horizon, params) {
            Ok(c) if c.is_certified() => return Ok(c),
            Ok(c) => last = Some(c),
            Err(Error::MeaninglessBound { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let mut cert = last.unwrap_or_else(|| {
        certify_case3_with_horizon(lengths, 1.0, 1.0, 0, params)
            .expect("empty horizon always succeeds")
    });
    cert.witnesses.clear();
    cert.notes = vec![format!("no grid point certified horizon {horizon}")];
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            seed = 7
            horizon = 50
            [params]
            beta1 = 0.1
            beta2 = 0.5
            alpha = 0.2
            [world]
            comm_radius = "2x"
            [certify]
            slice_log = "slices.csv"
            case1_cap = 6
            [certify.case2]
            cap = 5
            subset = "even"
            declared_infinite = true
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.params.beta1, 0.1);
        assert_eq!(cfg.world.sensors.len(), 4);
        let c = cfg.certify.unwrap();
        assert_eq!(c.case2.unwrap().subset.resolve(5).unwrap(), vec![0, 2, 4]);
        assert_eq!(c.grid, GammaGrid::default());

        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("[params]\nbeta1 = 2.0").is_err());
    }

    #[test]
    fn subset_names() {
        assert_eq!(
            SubsetSpec::Named("odd".into()).resolve(5).unwrap(),
            vec![1, 3]
        );
        assert_eq!(SubsetSpec::Indices(vec![4]).resolve(1).unwrap(), vec![4]);
        assert!(SubsetSpec::Named("prime".into()).resolve(5).is_err());
    }

    #[test]
    fn products_command_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            seed: 3,
            ..ExperimentConfig::default()
        };
        let rep = cmd_products(&cfg, dir.path()).unwrap();
        assert!(rep.checks.slices >= 1);
        assert!(rep.checks.all_pass(), "{:?}", rep.checks);
        for f in [
            "products.csv",
            "slice_products.csv",
            "slices.csv",
            "events.csv",
            "products.gp",
            "summary.txt",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }

    #[test]
    fn lf_fixed_point() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig {
            horizon: 500,
            ..ExperimentConfig::default()
        };
        cfg.world.initial_states = Some(vec![3.0; 4]);
        let rep = cmd_leader_follower(&cfg, dir.path()).unwrap();
        assert!(rep
            .run
            .trajectory
            .iter()
            .all(|r| r.states_after.iter().all(|&x| (x - 3.0).abs() < 1e-12)));
        assert!(rep.steady_state_ok);
    }
}
