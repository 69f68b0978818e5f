//! TOML run configuration.
//!
//! Every section is optional; omitted keys take the defaults below. Parsing
//! collects every problem (syntax, unknown keys, type mismatches, physical
//! constraints) before reporting, so one run shows all of them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coeffs::{CoefficientModel, SpatialFunction};
use crate::dynamics::{SimConfig, Thresholds, TimeStep};
use crate::eigen::{EigenOptions, EigenProblem, ThresholdOptions};
use crate::error::{Error, Result};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::par::Exec;
use crate::sweep::{AxisValues, SweepPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub family: KernelFamily,
    pub width: f64,
    pub truncation_radius: Option<f64>,
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection { family: KernelFamily::TruncatedGaussian, width: 0.5, truncation_radius: None }
    }
}

/// `dt = "auto"` or a number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DtSetting {
    Fixed(f64),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub d: f64,
    pub k: f64,
    pub h0: f64,
    #[serde(rename = "X")]
    pub window: f64,
    pub n_nodes: usize,
    pub dt: DtSetting,
    pub t_end: f64,
    /// Defaults to the disease-free level `σ/μ1`.
    #[serde(rename = "S0")]
    pub s0: Option<SpatialFunction>,
    /// Defaults to a tent of height `1e-3` on `(-h0, h0)`.
    #[serde(rename = "I0")]
    pub i0: Option<SpatialFunction>,
    pub probes: Vec<f64>,
    pub record_every: f64,
    pub snapshots: Vec<f64>,
    pub early_exit: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            d: 1.0,
            k: 0.5,
            h0: 1.0,
            window: 20.0,
            n_nodes: 2000,
            dt: DtSetting::Named("auto".into()),
            t_end: 200.0,
            s0: None,
            i0: None,
            probes: vec![0.0],
            record_every: 1.0,
            snapshots: Vec::new(),
            early_exit: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EigenSection {
    pub tol: f64,
    pub max_iters: usize,
    /// Problem for the `eigen` subcommand; defaults to `(-h0, h0)` at `sim.d`.
    pub d: Option<f64>,
    #[serde(rename = "L1")]
    pub l1: Option<f64>,
    #[serde(rename = "L2")]
    pub l2: Option<f64>,
    pub n_nodes: Option<usize>,
    pub nodes_per_width: usize,
}

impl Default for EigenSection {
    fn default() -> Self {
        EigenSection { tol: 1e-10, max_iters: 100_000, d: None, l1: None, l2: None, n_nodes: None, nodes_per_width: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdSection {
    /// Bracket width for L* and d*.
    pub tol: f64,
    pub search_min: f64,
    /// Largest halfwidth searched for L*; defaults to 100.
    pub search_max: f64,
    pub k_lo: f64,
    pub k_hi: f64,
    pub refinements: usize,
}

impl Default for ThresholdSection {
    fn default() -> Self {
        ThresholdSection { tol: 1e-4, search_min: 1e-3, search_max: 100.0, k_lo: 1e-3, k_hi: 10.0, refinements: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub jobs: Option<usize>,
    pub axes: Vec<AxisValues>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Directory for `simulate` outputs.
    pub dir: Option<PathBuf>,
    /// File for single-file outputs (sweep CSV, threshold JSON).
    pub file: Option<PathBuf>,
}

fn default_model() -> CoefficientModel {
    // a ≡ 0.8 - 0.6 - 0.4 = -0.2
    CoefficientModel::constant(1.0, 1.0, 0.6, 0.8, 0.4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub kernel: KernelSection,
    pub coeffs: CoefficientModel,
    pub sim: SimSection,
    pub classify: Thresholds,
    pub eigen: EigenSection,
    pub threshold: ThresholdSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            kernel: KernelSection::default(),
            coeffs: default_model(),
            sim: SimSection::default(),
            classify: Thresholds::default(),
            eigen: EigenSection::default(),
            threshold: ThresholdSection::default(),
            sweep: SweepSection::default(),
            output: OutputSection::default(),
        }
    }
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("kernel", &["family", "width", "truncation_radius"]),
    ("coeffs", &["sigma", "mu1", "mu2", "beta0", "media", "beds", "gamma0", "gamma1", "beta_I_gain"]),
    (
        "sim",
        &[
            "d",
            "k",
            "h0",
            "X",
            "n_nodes",
            "dt",
            "t_end",
            "S0",
            "I0",
            "probes",
            "record_every",
            "snapshots",
            "early_exit",
        ],
    ),
    ("classify", &["vanish_max_I", "vanish_front_speed", "persist_max_I", "spread_length", "trailing_window"]),
    ("eigen", &["tol", "max_iters", "d", "L1", "L2", "n_nodes", "nodes_per_width"]),
    ("threshold", &["tol", "search_min", "search_max", "k_lo", "k_hi", "refinements"]),
    ("sweep", &["jobs", "axes"]),
    ("output", &["dir", "file"]),
];

fn section<T: serde::de::DeserializeOwned + Default>(
    doc: &toml::Table,
    name: &str,
    errors: &mut Vec<String>,
) -> Option<T> {
    match doc.get(name) {
        None => Some(T::default()),
        Some(v) => match v.clone().try_into::<T>() {
            Ok(t) => Some(t),
            Err(e) => {
                errors.push(format!("[{name}] {}", e.message().trim()));
                None
            }
        },
    }
}

/// Parses and validates a TOML document. On failure the error lists every
/// problem found.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1);
        let msg = match line {
            Some(l) => format!("syntax error at line {l}: {}", e.message()),
            None => format!("syntax error: {}", e.message()),
        };
        Error::Config(vec![msg])
    })?;

    let mut errors = Vec::new();
    for key in doc.keys() {
        if !SECTIONS.iter().any(|(s, _)| s == key) {
            errors.push(format!("unknown section `{key}`"));
        }
    }
    for (name, known) in SECTIONS {
        match doc.get_mut(*name) {
            Some(toml::Value::Table(t)) => {
                let unknown: Vec<String> = t.keys().filter(|k| !known.contains(&k.as_str())).cloned().collect();
                for k in unknown {
                    errors.push(format!("unknown key `{name}.{k}`"));
                    t.remove(&k);
                }
            }
            Some(_) => errors.push(format!("`{name}` must be a table")),
            None => {}
        }
    }
    doc.retain(|k, v| SECTIONS.iter().any(|(s, _)| *s == k) && v.is_table());

    let kernel = section(&doc, "kernel", &mut errors);
    // omitted coefficients keep their default values
    let coeffs = match doc.get("coeffs") {
        None => Some(default_model()),
        Some(toml::Value::Table(given)) => {
            let mut merged = toml::Table::try_from(default_model()).expect("model serializes");
            merged.extend(given.clone());
            toml::Value::Table(merged)
                .try_into::<CoefficientModel>()
                .map_err(|e| errors.push(format!("[coeffs] {}", e.message().trim())))
                .ok()
        }
        Some(_) => None,
    };
    let sim = section(&doc, "sim", &mut errors);
    let classify = section(&doc, "classify", &mut errors);
    let eigen = section(&doc, "eigen", &mut errors);
    let threshold = section(&doc, "threshold", &mut errors);
    let sweep = section(&doc, "sweep", &mut errors);
    let output = section(&doc, "output", &mut errors);
    let cfg = match (kernel, coeffs, sim, classify, eigen, threshold, sweep, output) {
        (
            Some(kernel),
            Some(coeffs),
            Some(sim),
            Some(classify),
            Some(eigen),
            Some(threshold),
            Some(sweep),
            Some(output),
        ) => Some(RunConfig { kernel, coeffs, sim, classify, eigen, threshold, sweep, output }),
        _ => None,
    };

    if let Some(cfg) = &cfg {
        errors.extend(cfg.violations());
    }
    match cfg {
        Some(cfg) if errors.is_empty() => Ok(cfg),
        _ => Err(Error::Config(errors)),
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
    parse_config(&text)
}

impl RunConfig {
    /// Physical and structural constraint violations.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let kernel = match self.kernel_spec() {
            Ok(k) => Some(k),
            Err(e) => {
                out.push(format!("kernel: {e}"));
                None
            }
        };
        if let Err(e) = self.time_step() {
            out.push(e);
        }
        if let Some(kernel) = kernel {
            let sim = self.build_sim(kernel, TimeStep::Auto, Exec::Sequential);
            for v in sim.violations() {
                let v = if v.starts_with("sim.")
                    || v.starts_with("classify.")
                    || v.starts_with("eigen.")
                    || v.starts_with("grid")
                {
                    v
                } else {
                    format!("coeffs.{v}")
                };
                out.push(v);
            }
        }
        let e = &self.eigen;
        if !(e.tol > 0.0) {
            out.push(format!("eigen.tol must be positive, got {}", e.tol));
        }
        if e.max_iters == 0 {
            out.push("eigen.max_iters must be positive".into());
        }
        if let Some(d) = e.d {
            if !(d >= 0.0) {
                out.push(format!("eigen.d must be nonnegative, got {d}"));
            }
        }
        let (l1, l2) = self.eigen_interval();
        if !(l1 < l2) {
            out.push(format!("eigen.L1 = {l1} must be below eigen.L2 = {l2}"));
        }
        if e.n_nodes == Some(0) || e.nodes_per_width == 0 {
            out.push("eigen node counts must be positive".into());
        }
        let t = &self.threshold;
        for (name, v) in [
            ("tol", t.tol),
            ("search_min", t.search_min),
            ("search_max", t.search_max),
            ("k_lo", t.k_lo),
            ("k_hi", t.k_hi),
        ] {
            if !(v.is_finite() && v > 0.0) {
                out.push(format!("threshold.{name} must be positive, got {v}"));
            }
        }
        if !(t.search_min < t.search_max) {
            out.push("threshold.search_min must be below threshold.search_max".into());
        }
        if !(t.k_lo < t.k_hi) {
            out.push("threshold.k_lo must be below threshold.k_hi".into());
        }
        if self.sweep.jobs == Some(0) {
            out.push("sweep.jobs must be positive".into());
        }
        out
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        KernelSpec::new(self.kernel.family, self.kernel.width, self.kernel.truncation_radius)
    }

    fn time_step(&self) -> std::result::Result<TimeStep, String> {
        match &self.sim.dt {
            DtSetting::Fixed(dt) => Ok(TimeStep::Fixed(*dt)),
            DtSetting::Named(s) if s == "auto" => Ok(TimeStep::Auto),
            DtSetting::Named(s) => Err(format!("sim.dt must be \"auto\" or a number, got \"{s}\"")),
        }
    }

    fn build_sim(&self, kernel: KernelSpec, dt: TimeStep, exec: Exec) -> SimConfig {
        let s = &self.sim;
        SimConfig {
            kernel,
            model: self.coeffs.clone(),
            d: s.d,
            k: s.k,
            h0: s.h0,
            window: s.window,
            n_nodes: s.n_nodes,
            dt,
            t_end: s.t_end,
            s0: s.s0.clone().unwrap_or(SpatialFunction::constant(self.coeffs.disease_free_level())),
            i0: s.i0.clone().unwrap_or(SpatialFunction::tent(s.h0, 1e-3)),
            probes: s.probes.clone(),
            record_every: s.record_every,
            snapshot_times: s.snapshots.clone(),
            thresholds: self.classify,
            eigen: self.eigen_options(exec),
            early_exit: s.early_exit,
            exec,
        }
    }

    pub fn sim_config(&self, exec: Exec) -> Result<SimConfig> {
        let dt = self.time_step().map_err(|e| Error::Config(vec![e]))?;
        Ok(self.build_sim(self.kernel_spec()?, dt, exec))
    }

    pub fn eigen_options(&self, exec: Exec) -> EigenOptions {
        EigenOptions { tol: self.eigen.tol, max_iters: self.eigen.max_iters, exec }
    }

    pub fn eigen_interval(&self) -> (f64, f64) {
        (self.eigen.l1.unwrap_or(-self.sim.h0), self.eigen.l2.unwrap_or(self.sim.h0))
    }

    /// Problem for the `eigen` subcommand.
    pub fn eigen_problem(&self) -> Result<EigenProblem> {
        let kernel = self.kernel_spec()?;
        let (l1, l2) = self.eigen_interval();
        let n = self.eigen.n_nodes.unwrap_or_else(|| {
            let dx = kernel.width() / self.eigen.nodes_per_width as f64;
            (((l2 - l1) / dx).ceil() as usize).max(32)
        });
        EigenProblem::from_model(&kernel, &self.coeffs, self.eigen.d.unwrap_or(self.sim.d), l1, l2, n)
    }

    pub fn threshold_options(&self, exec: Exec) -> ThresholdOptions {
        ThresholdOptions {
            tol: self.threshold.tol,
            eigen: self.eigen_options(exec),
            nodes_per_width: self.eigen.nodes_per_width,
            search_min: self.threshold.search_min,
            search_max: self.threshold.search_max,
            ..ThresholdOptions::default()
        }
    }

    /// `jobs` overrides `sweep.jobs`; the default is the available parallelism.
    pub fn sweep_plan(&self, jobs: Option<usize>, exec: Exec) -> Result<SweepPlan> {
        if self.sweep.axes.is_empty() {
            return Err(Error::Config(vec!["sweep.axes is empty; a sweep plan needs at least one axis".into()]));
        }
        let jobs =
            jobs.or(self.sweep.jobs).unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let plan =
            SweepPlan { base: self.sim_config(exec)?, axes: self.sweep.axes.clone(), jobs, config_hash: self.hash() };
        let v = plan.violations();
        if v.is_empty() {
            Ok(plan)
        } else {
            Err(Error::Config(v))
        }
    }

    /// SHA-256 of the canonical JSON rendering of the resolved config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn messages(text: &str) -> Vec<String> {
        match parse_config(text) {
            Err(Error::Config(m)) => m,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_document_gives_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c.kernel.family, KernelFamily::TruncatedGaussian);
        assert_eq!(c.classify, Thresholds::default());
        let sim = c.sim_config(Exec::Sequential).unwrap();
        assert!(sim.violations().is_empty());
        assert_eq!(sim.dt, TimeStep::Auto);
    }

    #[test]
    fn partial_coeffs_keep_defaults() {
        let c = parse_config("[coeffs]\nmu2 = 0.5\n").unwrap();
        assert_eq!(c.coeffs.mu2, 0.5);
        assert_eq!(c.coeffs.mu1, RunConfig::default().coeffs.mu1);
        assert_eq!(c.coeffs.beta0, RunConfig::default().coeffs.beta0);
    }

    #[test]
    fn zero_mortality_rejected() {
        let text = r#"
[coeffs]
sigma = 1.0
mu1 = 0.0
mu2 = 0.6
beta0 = { kind = "constant", level = 0.8 }
gamma0 = { kind = "constant", level = 0.4 }
gamma1 = { kind = "constant", level = 0.4 }
"#;
        let m = messages(text);
        assert!(m.iter().any(|s| s.contains("mu1 must be positive") && s.contains("S-I system")), "{m:?}");
    }

    #[test]
    fn initial_halfwidth_beyond_window() {
        let m = messages("[sim]\nh0 = 25.0\nX = 20.0\n");
        assert!(m.iter().any(|s| s.contains("sim.X") && s.contains("window")), "{m:?}");
    }

    #[test]
    fn every_problem_reported() {
        let text = "[sim]\nd = -1.0\nbogus = 3\n[kernel]\nwidht = 2\n[extra]\n";
        let m = messages(text);
        assert!(m.iter().any(|s| s.contains("sim.bogus")), "{m:?}");
        assert!(m.iter().any(|s| s.contains("kernel.widht")), "{m:?}");
        assert!(m.iter().any(|s| s.contains("`extra`")), "{m:?}");
        assert!(m.iter().any(|s| s.contains("sim.d must be positive")), "{m:?}");
    }

    #[test]
    fn syntax_error_has_line() {
        let m = messages("[sim]\nd = 1.0\nk = = 2\n");
        assert_eq!(m.len(), 1);
        assert!(m[0].contains("line 3"), "{m:?}");
    }

    #[test]
    fn type_errors_collected_across_sections() {
        let m = messages("[sim]\nd = \"fast\"\n[eigen]\ntol = \"tiny\"\n");
        assert!(m.iter().any(|s| s.starts_with("[sim]")), "{m:?}");
        assert!(m.iter().any(|s| s.starts_with("[eigen]")), "{m:?}");
    }

    #[test]
    fn bad_dt_name() {
        let m = messages("[sim]\ndt = \"soon\"\n");
        assert!(m.iter().any(|s| s.contains("sim.dt")), "{m:?}");
    }

    #[test]
    fn hash_tracks_content() {
        let a = parse_config("").unwrap();
        let b = parse_config("[sim]\nk = 0.6\n").unwrap();
        assert_eq!(a.hash(), parse_config("").unwrap().hash());
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn sweep_axes_parse() {
        let c = parse_config("[sweep]\njobs = 2\naxes = [{ name = \"media-scale\", values = [0.0, 1.0] }]\n").unwrap();
        let plan = c.sweep_plan(None, Exec::Sequential).unwrap();
        assert_eq!(plan.jobs, 2);
        assert_eq!(plan.points().len(), 2);
    }
}
