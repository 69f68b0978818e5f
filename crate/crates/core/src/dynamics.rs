//! Time stepping of the S–I system with moving fronts `g(t) < h(t)`.
//!
//! `S` lives on the whole line, represented on a window `(-X, X)`; outside
//! the window it is replaced by the spatially homogeneous far-field solution
//! of `S' = σ - μ1·S` (the infection never reaches there). `I` is supported
//! on the nodes whose centers lie in `(g, h)` and is exactly zero elsewhere.
//! Both equations and the front laws are advanced with forward Euler under
//! the positivity bound on `dt`.

use serde::{Deserialize, Serialize};

use crate::coeffs::{CoefficientModel, NodeFields, SpatialFunction};
use crate::eigen::{self, EigenOptions, EigenProblem, ThresholdOptions};
use crate::error::{Error, Result};
use crate::kernel::{KernelSpec, KernelTable, QuadratureGrid};
use crate::par::{self, Exec};

/// Slack on the a-priori bound `A`.
pub const BOUND_SLACK: f64 = 1e-9;
/// Largest tolerated rate of susceptible exchange through the window edges,
/// relative to the susceptible mass in the window.
pub const LEAK_LIMIT: f64 = 1e-6;
/// Safety factor on the explicit step bound.
pub const DT_SAFETY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// `max I` below this counts as extinct.
    #[serde(rename = "vanish_max_I")]
    pub vanish_max_i: f64,
    /// Interval growth rate below this counts as frozen fronts.
    pub vanish_front_speed: f64,
    /// `max I` must stay above this for persistence.
    #[serde(rename = "persist_max_I")]
    pub persist_max_i: f64,
    /// `h - g` needed to call spreading; `None` resolves to
    /// `max(4·L*, 2·(2h0))` when the critical length exists, otherwise
    /// `10·(2h0)`.
    pub spread_length: Option<f64>,
    /// Length of the trailing time window the criteria are averaged over.
    pub trailing_window: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            vanish_max_i: 1e-6,
            vanish_front_speed: 1e-8,
            persist_max_i: 1e-4,
            spread_length: None,
            trailing_window: 20.0,
        }
    }
}

impl Thresholds {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("vanish_max_I", self.vanish_max_i),
            ("vanish_front_speed", self.vanish_front_speed),
            ("persist_max_I", self.persist_max_i),
            ("trailing_window", self.trailing_window),
        ] {
            if !(v.is_finite() && v > 0.0) {
                out.push(format!("classify.{name} must be positive, got {v}"));
            }
        }
        if self.vanish_max_i >= self.persist_max_i {
            out.push(format!(
                "classify.vanish_max_I ({}) must be below classify.persist_max_I ({}) to keep classes exclusive",
                self.vanish_max_i, self.persist_max_i
            ));
        }
        if let Some(l) = self.spread_length {
            if !(l.is_finite() && l > 0.0) {
                out.push(format!("classify.spread_length must be positive, got {l}"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeStep {
    /// Use the positivity bound itself.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub kernel: KernelSpec,
    pub model: CoefficientModel,
    pub d: f64,
    pub k: f64,
    pub h0: f64,
    /// Window halfwidth `X`.
    pub window: f64,
    pub n_nodes: usize,
    pub dt: TimeStep,
    pub t_end: f64,
    pub s0: SpatialFunction,
    pub i0: SpatialFunction,
    /// Positions where `S` is sampled.
    pub probes: Vec<f64>,
    /// Sampling cadence of the trajectory.
    pub record_every: f64,
    pub snapshot_times: Vec<f64>,
    pub thresholds: Thresholds,
    pub eigen: EigenOptions,
    /// Stop as soon as the classification is definitive.
    pub early_exit: bool,
    pub exec: Exec,
}

impl SimConfig {
    /// Every violated precondition, as human-readable messages.
    pub fn violations(&self) -> Vec<String> {
        let mut out = self.model.violations();
        for (name, v) in [("d", self.d), ("k", self.k), ("h0", self.h0), ("X", self.window), ("t_end", self.t_end)] {
            if !(v.is_finite() && v > 0.0) {
                out.push(format!("sim.{name} must be positive, got {v}"));
            }
        }
        if self.n_nodes == 0 {
            out.push("sim.n_nodes must be positive".into());
        }
        if !(self.record_every.is_finite() && self.record_every > 0.0) {
            out.push(format!("sim.record_every must be positive, got {}", self.record_every));
        }
        if let TimeStep::Fixed(dt) = self.dt {
            if !(dt.is_finite() && dt > 0.0) {
                out.push(format!("sim.dt must be positive, got {dt}"));
            }
        }
        out.extend(self.thresholds.violations());
        if self.h0 > 0.0 && self.window > 0.0 && self.h0 + self.kernel.radius() >= self.window {
            out.push(format!(
                "sim.X = {} must exceed h0 + kernel radius = {} (fronts must stay a kernel radius inside the window)",
                self.window,
                self.h0 + self.kernel.radius()
            ));
        }
        if self.n_nodes > 0 && self.window > 0.0 {
            let dx = 2.0 * self.window / self.n_nodes as f64;
            if dx > 0.5 * self.kernel.width() {
                out.push(format!(
                    "grid spacing {dx} exceeds half the kernel width {}; raise sim.n_nodes",
                    self.kernel.width()
                ));
            }
        }
        for (name, f) in [("S0", &self.s0), ("I0", &self.i0)] {
            if let Err(e) = f.validate() {
                out.push(format!("sim.{name}: {e}"));
            }
        }
        if self.s0.validate().is_ok() && self.s0.infimum() <= 0.0 {
            out.push(format!("sim.S0 must be positive everywhere, infimum is {}", self.s0.infimum()));
        }
        if self.i0.validate().is_ok() && self.h0 > 0.0 {
            for x in [-self.h0, self.h0] {
                if self.i0.eval(x).abs() > 1e-12 {
                    out.push(format!("sim.I0 must vanish at x = {x}, got {}", self.i0.eval(x)));
                }
            }
            if let Ok(grid) = self.grid() {
                let inside = grid.nodes().into_iter().filter(|x| x.abs() < self.h0);
                if let Some(x) = inside.into_iter().find(|&x| !(self.i0.eval(x) > 0.0)) {
                    out.push(format!("sim.I0 must be positive inside (-h0, h0), got {} at x = {x}", self.i0.eval(x)));
                }
            }
        }
        if !(self.eigen.tol > 0.0) {
            out.push(format!("eigen.tol must be positive, got {}", self.eigen.tol));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(v.join("; ")))
        }
    }

    pub fn grid(&self) -> Result<QuadratureGrid> {
        QuadratureGrid::symmetric(self.window, self.n_nodes)
    }

    /// `A = max{σ/μ1, ‖S0‖∞ + ‖I0‖∞}`.
    pub fn bound(&self) -> f64 {
        let s_sup = self.s0.supremum();
        let i_sup = self.i0.supremum().max(0.0);
        self.model.disease_free_level().max(s_sup + i_sup)
    }

    /// `0.5 / (d + max(μ1, μ2) + sup γ + sup β·A)`.
    pub fn stable_dt(&self) -> f64 {
        let rate =
            self.d + self.model.mu1.max(self.model.mu2) + self.model.gamma_sup() + self.model.beta_sup() * self.bound();
        DT_SAFETY / rate
    }

    pub fn resolve_dt(&self) -> Result<f64> {
        let limit = self.stable_dt();
        match self.dt {
            TimeStep::Auto => Ok(limit),
            TimeStep::Fixed(dt) if dt <= limit => Ok(dt),
            TimeStep::Fixed(dt) => Err(Error::StepTooLarge { dt, limit }),
        }
    }

    /// Spreading threshold on `h - g`. The `4·L*` default is raised to at
    /// least twice the initial length so that a run whose fronts have not
    /// moved is never called spreading.
    pub fn resolve_spread_length(&self) -> f64 {
        if let Some(l) = self.thresholds.spread_length {
            return l;
        }
        let opts = ThresholdOptions { tol: 1e-3, search_max: self.window, ..ThresholdOptions::default() };
        match eigen::critical_length(&self.model, &self.kernel, self.d, &opts) {
            Ok(c) => (4.0 * c.l_star).max(4.0 * self.h0),
            Err(_) => 10.0 * (2.0 * self.h0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    /// Susceptible density at the window nodes.
    pub s: Vec<f64>,
    /// Infected density at the window nodes, zero outside `(g, h)`.
    pub i: Vec<f64>,
    pub g: f64,
    pub h: f64,
    /// Far-field susceptible level left and right of the window.
    pub s_far: (f64, f64),
}

impl SimState {
    /// Node range whose centers lie strictly inside `(g, h)`.
    pub fn support(&self, grid: &QuadratureGrid) -> std::ops::Range<usize> {
        support_range(grid, self.g, self.h)
    }

    pub fn max_i(&self) -> f64 {
        self.i.iter().copied().fold(0.0, f64::max)
    }
}

fn support_range(grid: &QuadratureGrid, g: f64, h: f64) -> std::ops::Range<usize> {
    let nodes_before = |x: f64| -> usize {
        // number of nodes with center < x
        let raw = ((x - grid.left()) / grid.dx() - 0.5).ceil();
        raw.clamp(0.0, grid.len() as f64) as usize
    };
    let mut lo = nodes_before(g);
    while lo < grid.len() && grid.node(lo) <= g {
        lo += 1;
    }
    let hi = nodes_before(h).max(lo);
    lo..hi
}

/// Front velocities `(g', h')` from the flux laws.
///
/// `h' = k·Σ I_i·∫_{h-x_i}^∞ J·Δx` over nodes in `(g, h)`, and symmetrically
/// `g' = -k·Σ I_i·∫_{-∞}^{g-x_i} J·Δx`. The inner integrals are exact kernel
/// masses; only the outer one is a quadrature.
pub fn boundary_flux(state: &SimState, grid: &QuadratureGrid, kernel: &KernelSpec, k: f64) -> (f64, f64) {
    let mut g_dot = 0.0;
    let mut h_dot = 0.0;
    for i in state.support(grid) {
        let infected = state.i[i];
        if infected == 0.0 {
            continue;
        }
        let x = grid.node(i);
        h_dot += infected * kernel.upper_tail(state.h - x);
        g_dot += infected * kernel.lower_tail(state.g - x);
    }
    (-k * g_dot * grid.dx(), k * h_dot * grid.dx())
}

/// Extreme values seen over a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Extremes {
    pub min_s: f64,
    pub max_s: f64,
    pub min_i: f64,
    pub max_i: f64,
    pub max_leak: f64,
}

impl Default for Extremes {
    fn default() -> Self {
        Extremes {
            min_s: f64::INFINITY,
            max_s: f64::NEG_INFINITY,
            min_i: f64::INFINITY,
            max_i: f64::NEG_INFINITY,
            max_leak: 0.0,
        }
    }
}

/// Precomputed operators for one configuration.
pub struct Simulator<'a> {
    config: &'a SimConfig,
    grid: QuadratureGrid,
    table: KernelTable,
    fields: NodeFields,
    ext_left: Vec<f64>,
    ext_right: Vec<f64>,
    bound: f64,
    dt_limit: f64,
}

impl<'a> Simulator<'a> {
    pub fn new(config: &'a SimConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        let table = KernelTable::new(&config.kernel, &grid)?;
        let n = grid.len();
        let nodes = grid.nodes();
        let (ext_left, ext_right): (Vec<f64>, Vec<f64>) = (0..n).map(|i| table.exterior_mass(n, i)).unzip();
        Ok(Simulator {
            config,
            fields: config.model.node_fields(&nodes),
            grid,
            table,
            ext_left,
            ext_right,
            bound: config.bound(),
            dt_limit: config.stable_dt(),
        })
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn initial_state(&self) -> SimState {
        let cfg = self.config;
        let nodes = self.grid.nodes();
        let s = nodes.iter().map(|&x| cfg.s0.eval(x)).collect();
        let i = nodes.iter().map(|&x| if x > -cfg.h0 && x < cfg.h0 { cfg.i0.eval(x) } else { 0.0 }).collect();
        SimState { t: 0.0, s, i, g: -cfg.h0, h: cfg.h0, s_far: cfg.s0.far_field() }
    }

    pub fn flux(&self, state: &SimState) -> (f64, f64) {
        boundary_flux(state, &self.grid, &self.config.kernel, self.config.k)
    }

    /// Net susceptible exchange with the far field per unit time, relative to
    /// the susceptible mass inside the window.
    pub fn leak_rate(&self, state: &SimState) -> f64 {
        let (far_l, far_r) = state.s_far;
        let exchange: f64 = (0..self.grid.len())
            .map(|i| self.ext_left[i] * (far_l - state.s[i]) + self.ext_right[i] * (far_r - state.s[i]))
            .sum();
        let mass: f64 = state.s.iter().sum();
        (self.config.d * exchange / mass).abs()
    }

    /// One forward-Euler step.
    pub fn step(&self, state: &SimState, dt: f64) -> Result<SimState> {
        if !(dt > 0.0) || dt > self.dt_limit * (1.0 + 1e-12) {
            return Err(Error::StepTooLarge { dt, limit: self.dt_limit });
        }
        let cfg = self.config;
        let model = &cfg.model;
        let d = cfg.d;
        let n = self.grid.len();
        let support = state.support(&self.grid);
        let (g_dot, h_dot) = self.flux(state);

        let mut conv_s = vec![0.0; n];
        self.table.apply(&state.s, &mut conv_s, cfg.exec);
        let mut conv_i = vec![0.0; n];
        self.table.apply_rows(&state.i, &mut conv_i, support.clone(), cfg.exec);

        let (far_l, far_r) = state.s_far;
        let mut s_new = vec![0.0; n];
        par::fill(cfg.exec, &mut s_new, |j| {
            let s = state.s[j];
            let inf = state.i[j];
            let dispersal = conv_s[j] + self.ext_left[j] * far_l + self.ext_right[j] * far_r - s;
            let infection = self.fields.beta(j, inf) * s * inf;
            let recovery = self.fields.gamma(j, inf) * inf;
            s + dt * (d * dispersal + model.sigma - model.mu1 * s - infection + recovery)
        });
        let mut i_new = vec![0.0; n];
        let lo = support.start;
        par::fill(cfg.exec, &mut i_new[support.clone()], |k| {
            let j = lo + k;
            let s = state.s[j];
            let inf = state.i[j];
            let infection = self.fields.beta(j, inf) * s * inf;
            let recovery = self.fields.gamma(j, inf) * inf;
            inf + dt * (d * (conv_i[j] - inf) - model.mu2 * inf + infection - recovery)
        });

        let next = SimState {
            t: state.t + dt,
            s: s_new,
            i: i_new,
            g: state.g + dt * g_dot,
            h: state.h + dt * h_dot,
            s_far: (far_l + dt * (model.sigma - model.mu1 * far_l), far_r + dt * (model.sigma - model.mu1 * far_r)),
        };
        self.check(state, &next)?;
        Ok(next)
    }

    fn check(&self, prev: &SimState, next: &SimState) -> Result<()> {
        let cfg = self.config;
        let t = next.t;
        let radius = cfg.kernel.radius();
        if next.h + radius >= cfg.window || next.g - radius <= -cfg.window {
            let front = if next.h + radius >= cfg.window { next.h } else { next.g };
            return Err(Error::WindowExhausted { t, front, window: cfg.window });
        }
        let limit = self.bound + BOUND_SLACK;
        let fail = |what: String| Err(Error::Invariant { t, what });
        if let Some(j) = next.s.iter().position(|v| !(*v >= 0.0 && *v <= limit)) {
            return fail(format!("S = {} at node {j} outside [0, A = {}]", next.s[j], self.bound));
        }
        if let Some(j) = next.i.iter().position(|v| !(*v >= 0.0 && *v <= limit)) {
            return fail(format!("I = {} at node {j} outside [0, A = {}]", next.i[j], self.bound));
        }
        if next.g > prev.g || next.h < prev.h || next.g > -cfg.h0 || next.h < cfg.h0 {
            return fail(format!("fronts moved inward: ({}, {}) -> ({}, {})", prev.g, prev.h, next.g, next.h));
        }
        let support = next.support(&self.grid);
        if let Some(j) = next.i.iter().enumerate().position(|(j, v)| *v != 0.0 && !support.contains(&j)) {
            return fail(format!("I nonzero at node {j} outside the infected interval"));
        }
        let leak = self.leak_rate(next);
        if leak > LEAK_LIMIT {
            return Err(Error::WindowLeak { t, rate: leak });
        }
        Ok(())
    }
}

/// Single step with a freshly assembled [`Simulator`].
pub fn step(state: &SimState, config: &SimConfig, dt: f64) -> Result<SimState> {
    Simulator::new(config)?.step(state, dt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub g: f64,
    pub h: f64,
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub i: Vec<f64>,
}

/// Sampled time series of a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
    pub max_i: Vec<f64>,
    /// `∫ I dx`.
    pub total_i: Vec<f64>,
    pub probe_positions: Vec<f64>,
    /// `S` at the probe nodes, one row per sample.
    pub s_probe: Vec<Vec<f64>>,
    pub snapshots: Vec<Snapshot>,
    pub extremes: Extremes,
    pub bound: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn record(&mut self, state: &SimState, grid: &QuadratureGrid) {
        self.t.push(state.t);
        self.g.push(state.g);
        self.h.push(state.h);
        self.max_i.push(state.max_i());
        self.total_i.push(state.i.iter().sum::<f64>() * grid.dx());
        self.s_probe.push(self.probe_positions.iter().map(|&x| state.s[grid.nearest(x)]).collect());
    }

    fn track(&mut self, state: &SimState, leak: f64) {
        let e = &mut self.extremes;
        for &v in &state.s {
            e.min_s = e.min_s.min(v);
            e.max_s = e.max_s.max(v);
        }
        for &v in &state.i {
            e.min_i = e.min_i.min(v);
            e.max_i = e.max_i.max(v);
        }
        e.max_leak = e.max_leak.max(leak);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeClass {
    Spreading,
    Vanishing,
    Undecided,
}

impl std::fmt::Display for OutcomeClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OutcomeClass::Spreading => "Spreading",
            OutcomeClass::Vanishing => "Vanishing",
            OutcomeClass::Undecided => "Undecided",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub class: OutcomeClass,
    pub final_g: f64,
    pub final_h: f64,
    pub final_interval_length: f64,
    pub final_max_i: f64,
    /// Growth rate of `h - g` averaged over the trailing window.
    pub front_speed: f64,
    pub spread_length: f64,
    /// λ_p on `(g, h)` at the end of the run.
    pub lambda_p_at_final_interval: Option<f64>,
    pub horizon: f64,
}

/// Three-way classification from the trailing window of a trajectory.
///
/// Vanishing: `max I < vanish_max_i` at the end and the interval grows slower
/// than `vanish_front_speed` on average over the window. Spreading:
/// `h - g ≥ spread_length` and `max I ≥ persist_max_i` at every sample of the
/// window. Anything else, including runs shorter than the window, is
/// undecided.
pub fn classify(trajectory: &Trajectory, thresholds: &Thresholds, spread_length: f64) -> Outcome {
    let last = trajectory.len() - 1;
    let t_last = trajectory.t[last];
    let length = |k: usize| trajectory.h[k] - trajectory.g[k];
    let start = trajectory.t.partition_point(|&t| t < t_last - thresholds.trailing_window);
    let span = t_last - trajectory.t[start];
    let front_speed = if span > 0.0 { (length(last) - length(start)) / span } else { f64::INFINITY };

    let enough_history = t_last >= thresholds.trailing_window && span > 0.0;
    let final_max_i = trajectory.max_i[last];
    let class = if !enough_history {
        OutcomeClass::Undecided
    } else if final_max_i < thresholds.vanish_max_i && front_speed < thresholds.vanish_front_speed {
        OutcomeClass::Vanishing
    } else if length(last) >= spread_length && trajectory.max_i[start..].iter().all(|&m| m >= thresholds.persist_max_i)
    {
        OutcomeClass::Spreading
    } else {
        OutcomeClass::Undecided
    };
    Outcome {
        class,
        final_g: trajectory.g[last],
        final_h: trajectory.h[last],
        final_interval_length: length(last),
        final_max_i,
        front_speed,
        spread_length,
        lambda_p_at_final_interval: None,
        horizon: t_last,
    }
}

/// λ_p of the linearized operator on `(g, h)` at roughly the simulation grid
/// spacing.
pub fn interval_eigenvalue(config: &SimConfig, g: f64, h: f64) -> Result<f64> {
    let dx = 2.0 * config.window / config.n_nodes as f64;
    let n = (((h - g) / dx).round() as usize).max(16);
    let problem = EigenProblem::from_model(&config.kernel, &config.model, config.d, g, h, n)?;
    Ok(eigen::principal_eigenvalue(&problem, &config.eigen)?.lambda_p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub trajectory: Trajectory,
    pub outcome: Outcome,
}

/// Integrates to `t_end` (or until the classification is definitive when
/// `early_exit` is set). Deterministic: identical configurations give
/// identical trajectories.
pub fn simulate(config: &SimConfig) -> Result<Run> {
    let sim = Simulator::new(config)?;
    let grid = sim.grid().clone();
    let dt = config.resolve_dt()?;
    let spread_length = config.resolve_spread_length();
    let steps = ((config.t_end / dt) - 1e-9).ceil().max(1.0) as usize;
    let stride = ((config.record_every / dt).round() as usize).max(1);

    let mut snapshots_due: Vec<f64> = config.snapshot_times.iter().copied().filter(|t| *t <= config.t_end).collect();
    snapshots_due.sort_by(|a, b| a.total_cmp(b));
    let mut due = snapshots_due.into_iter().peekable();

    let mut traj = Trajectory { probe_positions: config.probes.clone(), bound: sim.bound(), ..Default::default() };
    let mut state = sim.initial_state();
    traj.track(&state, sim.leak_rate(&state));
    traj.record(&state, &grid);
    let mut take_snapshots = |state: &SimState, traj: &mut Trajectory| {
        while due.peek().is_some_and(|&ts| ts <= state.t + 1e-9 * dt) {
            due.next();
            traj.snapshots.push(Snapshot {
                t: state.t,
                g: state.g,
                h: state.h,
                x: grid.nodes(),
                s: state.s.clone(),
                i: state.i.clone(),
            });
        }
    };
    take_snapshots(&state, &mut traj);

    for j in 1..=steps {
        let t_next = (j as f64 * dt).min(config.t_end);
        let mut next = sim.step(&state, t_next - state.t).map_err(|e| {
            log::warn!("step {j} failed at t = {}: {e}", state.t);
            e
        })?;
        next.t = t_next;
        state = next;
        traj.track(&state, sim.leak_rate(&state));
        take_snapshots(&state, &mut traj);
        if j % stride == 0 || j == steps {
            traj.record(&state, &grid);
            if config.early_exit {
                let o = classify(&traj, &config.thresholds, spread_length);
                if o.class != OutcomeClass::Undecided {
                    log::info!("{} at t = {}", o.class, state.t);
                    break;
                }
            }
        }
    }
    if traj.t.last() != Some(&state.t) {
        traj.record(&state, &grid);
    }

    let mut outcome = classify(&traj, &config.thresholds, spread_length);
    outcome.lambda_p_at_final_interval = match interval_eigenvalue(config, state.g, state.h) {
        Ok(l) => Some(l),
        Err(e) => {
            log::warn!("eigenvalue on the final interval failed: {e}");
            None
        }
    };
    Ok(Run { trajectory: traj, outcome })
}

/// Necessary-condition check of a vanishing outcome: λ_p on the final
/// interval must not be positive (up to `10·tol`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralAudit {
    pub applicable: bool,
    pub lambda_p: Option<f64>,
    pub threshold: f64,
    pub violation: bool,
    pub note: Option<String>,
}

pub fn verify_vanishing_spectral(outcome: &Outcome, config: &SimConfig) -> SpectralAudit {
    let threshold = 10.0 * config.eigen.tol;
    let applicable = outcome.class == OutcomeClass::Vanishing;
    match interval_eigenvalue(config, outcome.final_g, outcome.final_h) {
        Ok(l) => SpectralAudit {
            applicable,
            lambda_p: Some(l),
            threshold,
            violation: applicable && l > threshold,
            note: None,
        },
        Err(e) => {
            SpectralAudit { applicable, lambda_p: None, threshold, violation: applicable, note: Some(e.to_string()) }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn vanishing_config() -> SimConfig {
        SimConfig {
            kernel: KernelSpec::truncated_gaussian(0.5, 3.0).unwrap(),
            // a = σβ0/μ1 - μ2 - γ = 0.8 - 0.6 - 0.4 = -0.2
            model: CoefficientModel::constant(1.0, 1.0, 0.6, 0.8, 0.4),
            d: 1.0,
            k: 0.5,
            h0: 1.0,
            window: 8.0,
            n_nodes: 400,
            dt: TimeStep::Auto,
            t_end: 20.0,
            s0: SpatialFunction::constant(1.0),
            i0: SpatialFunction::tent(1.0, 1e-3),
            probes: vec![0.0, 3.0],
            record_every: 1.0,
            snapshot_times: vec![0.0, 10.0],
            thresholds: Thresholds::default(),
            eigen: EigenOptions::default(),
            early_exit: false,
            exec: Exec::Sequential,
        }
    }

    #[test]
    fn no_infection_no_flux() {
        let cfg = SimConfig { i0: SpatialFunction::tent(1.0, 1e-3), ..vanishing_config() };
        let sim = Simulator::new(&cfg).unwrap();
        let mut st = sim.initial_state();
        st.i.iter_mut().for_each(|v| *v = 0.0);
        assert_eq!(sim.flux(&st), (0.0, 0.0));
    }

    #[test]
    fn symmetric_flux_for_even_data() {
        let cfg = vanishing_config();
        let sim = Simulator::new(&cfg).unwrap();
        let st = sim.initial_state();
        let (gd, hd) = sim.flux(&st);
        assert!(hd > 0.0);
        // summation order differs between the two fronts
        assert!((gd + hd).abs() < 1e-13 * hd, "{gd} vs {hd}");
    }

    #[test]
    fn flux_matches_double_integral() {
        // uniform-like check with I ≡ 1 on (-1, 1): compare against a fine
        // midpoint rule for ∫_{-1}^{1} ∫_{1}^{∞} J(x - y) dy dx
        let kernel = KernelSpec::bump(1.0).unwrap();
        let exact = {
            let n = 200_000;
            let dx = 2.0 / n as f64;
            (0..n).map(|i| kernel.upper_tail(1.0 - (-1.0 + (i as f64 + 0.5) * dx)) * dx).sum::<f64>()
        };
        let mut errs = Vec::new();
        for n in [200usize, 400] {
            let grid = QuadratureGrid::symmetric(4.0, n).unwrap();
            let st = SimState {
                t: 0.0,
                s: vec![1.0; n],
                i: grid.nodes().iter().map(|x| if x.abs() < 1.0 { 1.0 } else { 0.0 }).collect(),
                g: -1.0,
                h: 1.0,
                s_far: (1.0, 1.0),
            };
            let (_, hd) = boundary_flux(&st, &grid, &kernel, 1.0);
            errs.push((hd - exact).abs());
        }
        assert!(errs[0] < 1e-4 && errs[1] < errs[0] / 3.0, "{errs:?}");
    }

    #[test]
    fn disease_free_equilibrium_is_fixed() {
        let cfg = vanishing_config();
        let sim = Simulator::new(&cfg).unwrap();
        let mut st = sim.initial_state();
        st.i.iter_mut().for_each(|v| *v = 0.0);
        let next = sim.step(&st, 0.1).unwrap();
        assert_eq!(next.g, st.g);
        assert_eq!(next.h, st.h);
        for v in &next.s {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn uniform_susceptibles_relax_exponentially() {
        let cfg = SimConfig { s0: SpatialFunction::constant(0.3), ..vanishing_config() };
        let sim = Simulator::new(&cfg).unwrap();
        let mut st = sim.initial_state();
        st.i.iter_mut().for_each(|v| *v = 0.0);
        let dt = 0.05;
        for _ in 0..100 {
            st = sim.step(&st, dt).unwrap();
        }
        let exact = 1.0 + (0.3 - 1.0) * (-st.t).exp();
        for v in &st.s {
            // Euler global error is O(dt)
            assert!((v - exact).abs() < dt * 0.7 * 0.5, "{v} vs {exact}");
        }
    }

    #[test]
    fn front_update_is_euler() {
        let cfg = vanishing_config();
        let sim = Simulator::new(&cfg).unwrap();
        let st = sim.initial_state();
        let (gd, hd) = sim.flux(&st);
        let next = sim.step(&st, 0.1).unwrap();
        assert_eq!(next.h, st.h + 0.1 * hd);
        assert_eq!(next.g, st.g + 0.1 * gd);
    }

    #[test]
    fn oversized_step_rejected() {
        let cfg = vanishing_config();
        let sim = Simulator::new(&cfg).unwrap();
        let st = sim.initial_state();
        assert!(matches!(sim.step(&st, 10.0), Err(Error::StepTooLarge { .. })));
        let fixed = SimConfig { dt: TimeStep::Fixed(10.0), ..vanishing_config() };
        assert!(matches!(fixed.resolve_dt(), Err(Error::StepTooLarge { .. })));
    }

    #[test]
    fn support_excludes_endpoints() {
        let grid = QuadratureGrid::new(0.0, 10.0, 10).unwrap();
        // nodes at 0.5, 1.5, ..., 9.5
        assert_eq!(support_range(&grid, 1.5, 4.5), 2..4);
        assert_eq!(support_range(&grid, 1.4, 4.6), 1..5);
        assert_eq!(support_range(&grid, -3.0, 30.0), 0..10);
    }

    #[test]
    fn invalid_initial_data_reported() {
        let bad = SimConfig { i0: SpatialFunction::constant(1e-3), h0: 1.0, ..vanishing_config() };
        assert!(bad.violations().iter().any(|v| v.contains("must vanish")));
        let narrow = SimConfig { window: 3.5, ..vanishing_config() };
        assert!(narrow.violations().iter().any(|v| v.contains("kernel radius")));
    }

    fn synthetic(lengths: &[f64], max_i: &[f64]) -> Trajectory {
        let n = lengths.len();
        Trajectory {
            t: (0..n).map(|k| k as f64).collect(),
            g: lengths.iter().map(|l| -0.5 * l).collect(),
            h: lengths.iter().map(|l| 0.5 * l).collect(),
            max_i: max_i.to_vec(),
            total_i: max_i.to_vec(),
            s_probe: vec![vec![]; n],
            ..Default::default()
        }
    }

    #[test]
    fn classify_cases() {
        let th = Thresholds { trailing_window: 5.0, ..Thresholds::default() };
        let frozen = synthetic(&[2.0; 12], &(0..12).map(|k| 1e-3 * 0.1f64.powi(k)).collect::<Vec<_>>());
        assert_eq!(classify(&frozen, &th, 20.0).class, OutcomeClass::Vanishing);

        let growing = synthetic(&(0..12).map(|k| 2.0 + 3.0 * k as f64).collect::<Vec<_>>(), &[0.4; 12]);
        assert_eq!(classify(&growing, &th, 20.0).class, OutcomeClass::Spreading);

        let short = synthetic(&[2.0, 2.1, 2.3], &[0.1, 0.05, 0.02]);
        assert_eq!(classify(&short, &th, 20.0).class, OutcomeClass::Undecided);

        // long enough, but neither extinct nor wide
        let mixed = synthetic(&(0..12).map(|k| 2.0 + 0.1 * k as f64).collect::<Vec<_>>(), &[1e-3; 12]);
        assert_eq!(classify(&mixed, &th, 20.0).class, OutcomeClass::Undecided);
    }

    #[test]
    fn short_vanishing_run_respects_invariants() {
        let cfg = vanishing_config();
        let run = simulate(&cfg).unwrap();
        let tr = &run.trajectory;
        assert!(tr.extremes.min_s >= 0.0 && tr.extremes.max_s <= tr.bound + BOUND_SLACK);
        assert!(tr.extremes.min_i >= 0.0);
        assert!(tr.g.windows(2).all(|w| w[1] <= w[0]));
        assert!(tr.h.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(tr.snapshots.len(), 2);
        assert!(tr.max_i.last().unwrap() < &tr.max_i[0]);
    }

    #[test]
    fn audit_flags_positive_eigenvalue() {
        // a ≡ 0.5 on a wide final interval: λ_p > 0 contradicts vanishing
        let cfg = SimConfig { model: CoefficientModel::constant(1.0, 1.0, 0.1, 1.0, 0.4), ..vanishing_config() };
        let fake = Outcome {
            class: OutcomeClass::Vanishing,
            final_g: -3.0,
            final_h: 3.0,
            final_interval_length: 6.0,
            final_max_i: 0.0,
            front_speed: 0.0,
            spread_length: 20.0,
            lambda_p_at_final_interval: None,
            horizon: 100.0,
        };
        let audit = verify_vanishing_spectral(&fake, &cfg);
        assert!(audit.violation, "{audit:?}");

        let ok = verify_vanishing_spectral(&fake, &vanishing_config());
        assert!(!ok.violation && ok.lambda_p.unwrap() < 0.0);
    }

    #[test]
    fn execution_modes_agree_bitwise() {
        let seq = vanishing_config();
        let par = SimConfig { exec: Exec::Parallel, n_nodes: 800, ..vanishing_config() };
        let seq = SimConfig { n_nodes: 800, ..seq };
        assert_eq!(simulate(&seq).unwrap(), simulate(&par).unwrap());
    }
}
