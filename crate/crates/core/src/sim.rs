//! Mobile sensor network with one anchor: geometry-driven update matrices and
//! the leader-follower recursion `x(k+1) = P_k x(k) + B_k u`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Params, SystemMatrix};
use crate::slice::{Mode, Slice, SliceEvent, SliceState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disk {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Disk {
    pub fn new(x: f64, y: f64, radius: f64) -> Self {
        Self {
            center: [x, y],
            radius,
        }
    }

    pub fn contains(&self, p: [f64; 2], slack: f64) -> bool {
        dist(p, self.center) <= self.radius + slack
    }

    /// Nearest point of the disk.
    pub fn project(&self, p: [f64; 2]) -> [f64; 2] {
        let d = dist(p, self.center);
        if d <= self.radius {
            return p;
        }
        let s = self.radius / d;
        [
            self.center[0] + (p[0] - self.center[0]) * s,
            self.center[1] + (p[1] - self.center[1]) * s,
        ]
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        let [dx, dy] = disk_offset(self.radius, rng);
        [self.center[0] + dx, self.center[1] + dy]
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn disk_offset(radius: f64, rng: &mut ChaCha8Rng) -> [f64; 2] {
    let r = radius * rng.gen::<f64>().sqrt();
    let theta = 2.0 * PI * rng.gen::<f64>();
    [r * theta.cos(), r * theta.sin()]
}

/// Absolute radius in meters, or a multiple of the innermost region radius
/// written as `"1.5x"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CommRadius {
    Absolute(f64),
    Relative(String),
}

impl CommRadius {
    pub fn resolve(&self, innermost: f64) -> Result<f64> {
        let r = match self {
            CommRadius::Absolute(r) => *r,
            CommRadius::Relative(s) => {
                let t = s.trim();
                let factor = t
                    .strip_suffix('x')
                    .or_else(|| t.strip_suffix('×'))
                    .and_then(|f| f.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("comm_radius: cannot parse {s:?}")))?;
                factor * innermost
            }
        };
        if !r.is_finite() || r < 0.0 {
            return Err(Error::Config(format!(
                "comm_radius must be finite and >= 0, got {r}"
            )));
        }
        Ok(r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub sensors: Vec<Disk>,
    pub anchor: Disk,
    pub comm_radius: CommRadius,
    /// Maximum step length as a fraction of the region radius.
    pub sigma: f64,
    pub u: f64,
    /// Explicit initial sensor states; drawn from `initial_range` otherwise.
    pub initial_states: Option<Vec<f64>>,
    pub initial_range: [f64; 2],
    /// Chance that some sensor updates at a step.
    pub update_prob: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            sensors: vec![
                Disk::new(2.5, 0.0, 1.0),
                Disk::new(0.0, 2.5, 1.0),
                Disk::new(4.0, 2.0, 1.0),
                Disk::new(2.0, 4.0, 1.0),
            ],
            anchor: Disk::new(0.0, 0.0, 1.0),
            comm_radius: CommRadius::Relative("1.5x".into()),
            sigma: 0.2,
            u: 3.0,
            initial_states: None,
            initial_range: [0.0, 10.0],
            update_prob: 1.0,
        }
    }
}

impl WorldConfig {
    pub fn innermost_radius(&self) -> f64 {
        self.sensors
            .iter()
            .chain(std::iter::once(&self.anchor))
            .map(|d| d.radius)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sensors.is_empty() {
            return Err(Error::Config("world needs at least one sensor".into()));
        }
        for d in self.sensors.iter().chain(std::iter::once(&self.anchor)) {
            if !d.radius.is_finite() || d.radius < 0.0 || !d.center.iter().all(|c| c.is_finite()) {
                return Err(Error::Config(format!("invalid region {d:?}")));
            }
        }
        self.comm_radius.resolve(self.innermost_radius())?;
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(Error::Config("world.sigma must be >= 0".into()));
        }
        if !self.u.is_finite() {
            return Err(Error::Config("world.u must be finite".into()));
        }
        if let Some(x0) = &self.initial_states {
            if x0.len() != self.sensors.len() || x0.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!(
                    "world.initial_states needs {} finite values",
                    self.sensors.len()
                )));
            }
        }
        let [lo, hi] = self.initial_range;
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(Error::Config(
                "world.initial_range must be [lo, hi] with lo <= hi".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.update_prob) {
            return Err(Error::Config("world.update_prob must lie in [0,1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub position: [f64; 2],
    pub region: Disk,
}

/// Node indices run over sensors first, then anchors.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub sensors: Vec<Agent>,
    pub states: Vec<f64>,
    pub anchors: Vec<Agent>,
    pub u: f64,
    pub comm_radius: f64,
    pub sigma: f64,
    pub update_prob: f64,
    pub seed: u64,
    pub k: usize,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl World {
    pub fn from_config(cfg: &WorldConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream_rng(seed, 0);
        let mut place = |d: &Disk| Agent {
            position: d.sample(&mut rng),
            region: *d,
        };
        let sensors: Vec<Agent> = cfg.sensors.iter().map(&mut place).collect();
        let anchors = vec![place(&cfg.anchor)];
        let states = match &cfg.initial_states {
            Some(x0) => x0.clone(),
            None => {
                let [lo, hi] = cfg.initial_range;
                (0..sensors.len())
                    .map(|_| lo + (hi - lo) * rng.gen::<f64>())
                    .collect()
            }
        };
        Ok(Self {
            sensors,
            states,
            anchors,
            u: cfg.u,
            comm_radius: cfg.comm_radius.resolve(cfg.innermost_radius())?,
            sigma: cfg.sigma,
            update_prob: cfg.update_prob,
            seed,
            k: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.sensors.len()
    }

    pub fn s(&self) -> usize {
        self.anchors.len()
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.sensors
            .iter()
            .chain(&self.anchors)
            .map(|a| a.position)
            .collect()
    }

    /// Every agent takes a uniform step of length at most `sigma * radius`
    /// and is projected back into its region.
    pub fn step_motion(&mut self) {
        let mut rng = stream_rng(self.seed, 2 * self.k as u64 + 1);
        let sigma = self.sigma;
        for a in self.sensors.iter_mut().chain(self.anchors.iter_mut()) {
            let [dx, dy] = disk_offset(sigma * a.region.radius, &mut rng);
            a.position = a.region.project([a.position[0] + dx, a.position[1] + dy]);
        }
    }

    /// Symmetric adjacency over all nodes; no self-edges.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let pos = self.positions();
        (0..pos.len())
            .map(|i| {
                (0..pos.len())
                    .filter(|&j| j != i && dist(pos[i], pos[j]) <= self.comm_radius)
                    .collect()
            })
            .collect()
    }

    /// Picks this step's updating sensor (if any) and builds its matrix.
    pub fn build_update(&self, params: &Params) -> Result<Update> {
        let n = self.n();
        let s = self.s();
        let mut rng = stream_rng(self.seed, 2 * self.k as u64 + 2);
        if rng.gen::<f64>() >= self.update_prob {
            return Ok(Update {
                sensor: None,
                kind: UpdateKind::Idle,
                matrix: SystemMatrix::identity(n, s),
            });
        }
        let i = rng.gen_range(0..n);
        let nbrs = &self.neighbors()[i];
        if nbrs.is_empty() {
            return Ok(Update {
                sensor: Some(i),
                kind: UpdateKind::NoNeighbors,
                matrix: SystemMatrix::identity(n, s),
            });
        }
        let mut group: Vec<usize> = nbrs.iter().copied().filter(|&j| j < n).collect();
        group.push(i);
        group.sort_unstable();
        let anchors: Vec<usize> = nbrs.iter().filter(|&&j| j >= n).map(|&j| j - n).collect();

        let mut p_row = vec![0.0; n];
        let mut b_row = vec![0.0; s];
        let kind = if anchors.is_empty() {
            let cap = ((1.0 / params.beta1) + 1e-9).floor() as usize;
            if group.len() > cap {
                return Err(Error::InfeasibleWeights(format!(
                    "sensor {i} has {} nodes in its update set but beta1={} allows at most {cap}",
                    group.len(),
                    params.beta1
                )));
            }
            let w = 1.0 / group.len() as f64;
            for &j in &group {
                p_row[j] = w;
            }
            UpdateKind::StochasticUpdate
        } else {
            let w_a = (params.alpha * anchors.len() as f64).max(1.0 - params.beta2);
            if w_a > 1.0 {
                return Err(Error::InfeasibleWeights(format!(
                    "anchor weight {w_a} exceeds 1 for sensor {i}"
                )));
            }
            for &a in &anchors {
                b_row[a] = w_a / anchors.len() as f64;
            }
            let rest = (1.0 - w_a) / group.len() as f64;
            for &j in &group {
                p_row[j] = rest;
            }
            UpdateKind::SubStochasticUpdate
        };
        Ok(Update {
            sensor: Some(i),
            kind,
            matrix: SystemMatrix::row_update(n, s, i, &p_row, &b_row)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateKind {
    NoNeighbors,
    StochasticUpdate,
    SubStochasticUpdate,
    /// No sensor was scheduled this step.
    Idle,
}

impl UpdateKind {
    pub fn name(self) -> &'static str {
        match self {
            UpdateKind::NoNeighbors => "no_neighbors",
            UpdateKind::StochasticUpdate => "stochastic",
            UpdateKind::SubStochasticUpdate => "substochastic",
            UpdateKind::Idle => "idle",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Update {
    pub sensor: Option<usize>,
    pub kind: UpdateKind,
    pub matrix: SystemMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub updating_sensor: Option<usize>,
    pub update_kind: UpdateKind,
    pub matrix: SystemMatrix,
    pub states_after: Vec<f64>,
    /// Node positions used to build this step's matrix.
    pub positions: Vec<[f64; 2]>,
}

/// `P x + B (u 1)`.
pub fn lf_step(x: &[f64], m: &SystemMatrix, u: f64) -> Result<Vec<f64>> {
    if x.len() != m.n() {
        return Err(Error::DimensionMismatch(format!(
            "state has {} entries, matrix has {} rows",
            x.len(),
            m.n()
        )));
    }
    let mut out = m.p().mul_vec(x)?;
    for (i, o) in out.iter_mut().enumerate() {
        *o += m.b().row(i).iter().sum::<f64>() * u;
    }
    Ok(out)
}

/// `|| M 1 + N - 1 ||_inf`.
pub fn steady_state_residual(m_t: &crate::matrix::Matrix, n_t: &[f64]) -> f64 {
    m_t.row_sums()
        .iter()
        .zip(n_t)
        .map(|(r, v)| (r + v - 1.0).abs())
        .fold(0.0, f64::max)
}

pub fn steady_state_check(m_t: &crate::matrix::Matrix, n_t: &[f64], tol: f64) -> bool {
    m_t.rows() == n_t.len() && steady_state_residual(m_t, n_t) <= tol
}

pub fn max_error(x: &[f64], u: f64) -> f64 {
    x.iter().map(|v| (v - u).abs()).fold(0.0, f64::max)
}

/// A finished slice of the leader-follower run.
#[derive(Clone, Debug)]
pub struct LfSlice {
    pub slice: Slice,
    pub n_t: Vec<f64>,
    pub steady_residual: f64,
    /// `max_i |x_i - u|` right after the slice closed.
    pub error_after: f64,
    pub k: usize,
}

/// Step-by-step leader-follower runner; keeps only the current state.
#[derive(Clone, Debug)]
pub struct LeaderFollower {
    world: World,
    params: Params,
    mode: Mode,
    engine: SliceState,
    n_acc: Vec<f64>,
}

impl LeaderFollower {
    pub fn new(world: World, params: Params, mode: Mode) -> Result<Self> {
        params.validate()?;
        if world.s() != 1 {
            return Err(Error::Config(
                "leader-follower runs need exactly one anchor".into(),
            ));
        }
        let n = world.n();
        Ok(Self {
            world,
            params,
            mode,
            engine: SliceState::new(n),
            n_acc: vec![0.0; n],
        })
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn error(&self) -> f64 {
        max_error(&self.world.states, self.world.u)
    }

    /// Motion, update construction, state step, slice bookkeeping.
    pub fn step(&mut self) -> Result<(StepRecord, Option<LfSlice>)> {
        let k = self.world.k;
        self.world.step_motion();
        let positions = self.world.positions();
        let update = self.world.build_update(&self.params)?;
        let m = &update.matrix;
        let events = self
            .engine
            .push(m, &self.params, self.mode)
            .map_err(|e| match e {
                Error::AssumptionViolated { summary, .. } => {
                    Error::AssumptionViolated { step: k, summary }
                }
                other => other,
            })?;
        self.world.states = lf_step(&self.world.states, m, self.world.u)?;
        if !m.is_identity() {
            let mut next = m.p().mul_vec(&self.n_acc)?;
            for (i, v) in next.iter_mut().enumerate() {
                *v += m.b().row(i).iter().sum::<f64>();
            }
            self.n_acc = next;
        }
        let mut done = None;
        for ev in events {
            if let SliceEvent::Completed(s) = ev {
                let n_t = std::mem::replace(&mut self.n_acc, vec![0.0; self.world.n()]);
                done = Some(LfSlice {
                    steady_residual: steady_state_residual(&s.product, &n_t),
                    n_t,
                    error_after: self.error(),
                    k,
                    slice: *s,
                });
            }
        }
        self.world.k += 1;
        Ok((
            StepRecord {
                k,
                updating_sensor: update.sensor,
                update_kind: update.kind,
                matrix: update.matrix,
                states_after: self.world.states.clone(),
                positions,
            },
            done,
        ))
    }
}

#[derive(Clone, Debug)]
pub struct LfRun {
    pub initial_states: Vec<f64>,
    pub initial_positions: Vec<[f64; 2]>,
    pub trajectory: Vec<StepRecord>,
    pub slices: Vec<LfSlice>,
    pub u: f64,
}

impl LfRun {
    /// Errors at the start and after every completed slice.
    pub fn boundary_errors(&self) -> Vec<f64> {
        std::iter::once(max_error(&self.initial_states, self.u))
            .chain(self.slices.iter().map(|s| s.error_after))
            .collect()
    }

    pub fn slice_inputs(&self) -> Vec<Vec<f64>> {
        self.slices.iter().map(|s| s.n_t.clone()).collect()
    }
}

pub fn run_leader_follower(
    cfg: &WorldConfig,
    params: &Params,
    seed: u64,
    horizon: usize,
    mode: Mode,
) -> Result<LfRun> {
    let world = World::from_config(cfg, seed)?;
    let initial_states = world.states.clone();
    let initial_positions = world.positions();
    let u = world.u;
    let mut runner = LeaderFollower::new(world, *params, mode)?;
    let mut trajectory = Vec::with_capacity(horizon);
    let mut slices = Vec::new();
    for _ in 0..horizon {
        let (rec, done) = runner.step()?;
        trajectory.push(rec);
        slices.extend(done);
    }
    Ok(LfRun {
        initial_states,
        initial_positions,
        trajectory,
        slices,
        u,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{validate_update, Matrix};

    fn params() -> Params {
        Params::new(0.05, 0.7, 0.1).unwrap()
    }

    fn world_at(sensors: &[[f64; 2]], anchor: [f64; 2], comm: f64) -> World {
        let cfg = WorldConfig {
            sensors: sensors.iter().map(|c| Disk::new(c[0], c[1], 0.0)).collect(),
            anchor: Disk::new(anchor[0], anchor[1], 0.0),
            comm_radius: CommRadius::Absolute(comm),
            ..WorldConfig::default()
        };
        World::from_config(&cfg, 1).unwrap()
    }

    #[test]
    fn projection_and_zero_sigma() {
        let d = Disk::new(0.0, 0.0, 1.0);
        let q = d.project([3.0, 4.0]);
        assert!((q[0] - 0.6).abs() < 1e-15 && (q[1] - 0.8).abs() < 1e-15);
        assert_eq!(d.project([0.1, 0.2]), [0.1, 0.2]);

        let cfg = WorldConfig {
            sigma: 0.0,
            ..WorldConfig::default()
        };
        let mut w = World::from_config(&cfg, 3).unwrap();
        let before = w.positions();
        w.step_motion();
        assert_eq!(before, w.positions());
    }

    #[test]
    fn motion_stays_in_regions_and_is_seeded() {
        let cfg = WorldConfig {
            sigma: 0.9,
            ..WorldConfig::default()
        };
        let mut a = World::from_config(&cfg, 9).unwrap();
        let mut b = World::from_config(&cfg, 9).unwrap();
        for _ in 0..500 {
            a.step_motion();
            b.step_motion();
            a.k += 1;
            b.k += 1;
            for ag in a.sensors.iter().chain(&a.anchors) {
                assert!(ag.region.contains(ag.position, 1e-12));
            }
        }
        assert_eq!(a, b);
    }

    #[test]
    fn adjacency() {
        let w = world_at(&[[0.0, 0.0], [0.0, 0.0], [5.0, 0.0]], [0.5, 0.0], 0.0);
        let nb = w.neighbors();
        assert_eq!(nb[0], vec![1]);
        assert_eq!(nb[1], vec![0]);
        assert!(nb[2].is_empty());

        let w = world_at(&[[0.0, 0.0], [1.0, 0.0]], [9.0, 9.0], 1.0);
        assert_eq!(w.neighbors(), vec![vec![1], vec![0], vec![]]);
    }

    #[test]
    fn default_layout_only_two_sensors_reach_anchor() {
        let cfg = WorldConfig::default();
        let r = cfg.comm_radius.resolve(cfg.innermost_radius()).unwrap();
        assert_eq!(r, 1.5);
        for (i, d) in cfg.sensors.iter().enumerate() {
            let closest = dist(d.center, cfg.anchor.center) - d.radius - cfg.anchor.radius;
            assert_eq!(closest <= r, i < 2, "sensor {i}");
        }
    }

    #[test]
    fn update_rules() {
        let p = params();
        // isolated
        let w = world_at(&[[0.0, 0.0]], [9.0, 9.0], 1.0);
        let up = w.build_update(&p).unwrap();
        assert_eq!(up.kind, UpdateKind::NoNeighbors);
        assert!(up.matrix.is_identity());

        // one sensor neighbor
        let w = world_at(&[[0.0, 0.0], [0.5, 0.0]], [9.0, 9.0], 1.0);
        let up = w.build_update(&p).unwrap();
        assert_eq!(up.kind, UpdateKind::StochasticUpdate);
        let i = up.sensor.unwrap();
        assert_eq!(up.matrix.p().row(i), &[0.5, 0.5]);
        assert!(validate_update(&up.matrix, &p).holds());

        // anchor only
        let w = world_at(&[[0.0, 0.0]], [0.5, 0.0], 1.0);
        let up = w.build_update(&p).unwrap();
        assert_eq!(up.kind, UpdateKind::SubStochasticUpdate);
        assert!((up.matrix.p()[(0, 0)] - 0.7).abs() < 1e-15);
        assert!((up.matrix.b()[(0, 0)] - 0.3).abs() < 1e-15);
        assert!((up.matrix.augmented_row(0).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(validate_update(&up.matrix, &p).holds());
    }

    #[test]
    fn infeasible_degree() {
        let p = Params::new(0.4, 0.7, 0.1).unwrap();
        let w = world_at(&[[0.0, 0.0], [0.1, 0.0], [0.2, 0.0]], [9.0, 9.0], 1.0);
        assert!(matches!(
            w.build_update(&p),
            Err(Error::InfeasibleWeights(_))
        ));
    }

    #[test]
    fn lf_step_examples() {
        let m = SystemMatrix::row_update(1, 1, 0, &[0.7], &[0.3]).unwrap();
        assert!((lf_step(&[0.0], &m, 3.0).unwrap()[0] - 0.9).abs() < 1e-15);
        let id = SystemMatrix::identity(2, 1);
        assert_eq!(lf_step(&[1.0, 2.0], &id, 3.0).unwrap(), vec![1.0, 2.0]);
        assert!(matches!(
            lf_step(&[1.0], &id, 3.0),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn steady_state_examples() {
        let m = Matrix::from_rows(&[vec![0.7]]).unwrap();
        assert!(steady_state_check(&m, &[0.3], 1e-12));
        assert!(!steady_state_check(&m, &[0.25], 1e-12));
    }

    #[test]
    fn zero_steps_and_isolated_world() {
        let run =
            run_leader_follower(&WorldConfig::default(), &params(), 1, 0, Mode::Strict).unwrap();
        assert!(run.trajectory.is_empty() && run.slices.is_empty());

        let cfg = WorldConfig {
            comm_radius: CommRadius::Absolute(0.0),
            ..WorldConfig::default()
        };
        let run = run_leader_follower(&cfg, &params(), 1, 300, Mode::Strict).unwrap();
        assert!(run.slices.is_empty());
        assert_eq!(
            run.trajectory.last().unwrap().states_after,
            run.initial_states
        );
    }

    #[test]
    fn converges_with_steady_state_identity() {
        let run = run_leader_follower(&WorldConfig::default(), &params(), 4, 20_000, Mode::Strict)
            .unwrap();
        assert!(!run.slices.is_empty());
        for s in &run.slices {
            assert!(s.steady_residual <= 1e-10);
        }
        let errs = run.boundary_errors();
        for w in errs.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(*errs.last().unwrap() < errs[0]);
    }

    #[test]
    fn relative_comm_radius_parsing() {
        assert_eq!(CommRadius::Relative("2x".into()).resolve(0.5).unwrap(), 1.0);
        assert_eq!(
            CommRadius::Relative("1.5×".into()).resolve(2.0).unwrap(),
            3.0
        );
        assert!(CommRadius::Relative("wide".into()).resolve(1.0).is_err());
        assert!(CommRadius::Absolute(-1.0).resolve(1.0).is_err());
    }
}
