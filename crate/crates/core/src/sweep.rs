//! Parameter grids over simulations and bisection on the expansion
//! capability `k`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dynamics::{self, OutcomeClass, SimConfig};
use crate::eigen::{self, EigenProblem};
use crate::error::{Error, Result};
use crate::par::{self, Exec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    D,
    K,
    H0,
    MediaScale,
    BedScale,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::D => "d",
            Axis::K => "k",
            Axis::H0 => "h0",
            Axis::MediaScale => "media-scale",
            Axis::BedScale => "bed-scale",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Axis::D, Axis::K, Axis::H0, Axis::MediaScale, Axis::BedScale].into_iter().find(|a| a.name() == s)
    }

    /// `base` with this parameter set to `value`. Changing `h0` stretches
    /// the initial infection so it still vanishes at `±h0`.
    pub fn apply(self, base: &SimConfig, value: f64) -> SimConfig {
        let mut c = base.clone();
        match self {
            Axis::D => c.d = value,
            Axis::K => c.k = value,
            Axis::H0 => {
                c.i0 = base.i0.stretched(value / base.h0);
                c.h0 = value;
            }
            Axis::MediaScale => c.model = base.model.with_media_scale(value),
            Axis::BedScale => c.model = base.model.with_bed_scale(value),
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisValues {
    pub name: Axis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub base: SimConfig,
    pub axes: Vec<AxisValues>,
    /// Worker count; `1` runs everything on the calling thread.
    pub jobs: usize,
    /// Written into the table metadata.
    pub config_hash: String,
}

impl SweepPlan {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.axes.is_empty() || self.axes.len() > 2 {
            out.push(format!("a sweep needs one or two axes, got {}", self.axes.len()));
        }
        if self.axes.len() == 2 && self.axes[0].name == self.axes[1].name {
            out.push(format!("axis {} listed twice", self.axes[0].name.name()));
        }
        for ax in &self.axes {
            let name = ax.name.name();
            if ax.values.is_empty() {
                out.push(format!("axis {name} has no values"));
            }
            if ax.values.iter().any(|v| !v.is_finite()) {
                out.push(format!("axis {name} has non-finite values"));
            }
            if ax.values.windows(2).any(|w| !(w[0] < w[1])) {
                out.push(format!("axis {name} values must be sorted ascending and distinct"));
            }
            let positive = !matches!(ax.name, Axis::MediaScale | Axis::BedScale);
            if positive && ax.values.iter().any(|v| *v <= 0.0) {
                out.push(format!("axis {name} values must be positive"));
            }
            if !positive && ax.values.iter().any(|v| *v < 0.0) {
                out.push(format!("axis {name} values must be nonnegative"));
            }
        }
        if self.jobs == 0 {
            out.push("sweep.jobs must be positive".into());
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

    /// Grid points in lexicographic order of axis indices.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let mut pts: Vec<Vec<f64>> = vec![Vec::new()];
        for ax in &self.axes {
            pts = pts.iter().flat_map(|p| ax.values.iter().map(move |v| [p.as_slice(), &[*v]].concat())).collect();
        }
        pts
    }

    pub fn config_at(&self, point: &[f64]) -> SimConfig {
        self.axes.iter().zip(point).fold(self.base.clone(), |c, (ax, v)| ax.name.apply(&c, *v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseRow {
    pub values: Vec<f64>,
    pub class: Option<OutcomeClass>,
    pub final_len: Option<f64>,
    pub final_max_i: Option<f64>,
    pub lambda_p_final: Option<f64>,
    /// λ_p on `(-h0, h0)`.
    pub lambda_p_initial: Option<f64>,
    /// Spectral audit of a vanishing row failed.
    pub audit_violation: bool,
    pub runtime_s: f64,
    /// `ok` or the failure reason.
    pub status: String,
}

impl PhaseRow {
    /// Row content that must be reproducible (everything but timing).
    pub fn reproducible(&self) -> PhaseRow {
        PhaseRow { runtime_s: 0.0, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseTable {
    pub axes: Vec<Axis>,
    pub rows: Vec<PhaseRow>,
    pub config_hash: String,
    pub n_nodes: usize,
    pub dx: f64,
    pub dt: Option<f64>,
}

impl PhaseTable {
    /// Along each line of the first axis `d`, a vanishing row at smaller `d`
    /// than a spreading row.
    pub fn phase_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.axes.first() != Some(&Axis::D) {
            return out;
        }
        let n_first = self.rows.iter().map(|r| r.values[0]).fold(Vec::<f64>::new(), |mut acc, v| {
            if !acc.contains(&v) {
                acc.push(v);
            }
            acc
        });
        let stride = self.rows.len() / n_first.len().max(1);
        for j in 0..stride {
            let line: Vec<&PhaseRow> = self.rows.iter().skip(j).step_by(stride).collect();
            let first_vanish = line.iter().position(|r| r.class == Some(OutcomeClass::Vanishing));
            let last_spread = line.iter().rposition(|r| r.class == Some(OutcomeClass::Spreading));
            if let (Some(v), Some(s)) = (first_vanish, last_spread) {
                if v < s {
                    out.push(format!(
                        "vanishing at d = {} below spreading at d = {} (line {j})",
                        line[v].values[0], line[s].values[0]
                    ));
                }
            }
        }
        out
    }
}

fn run_point(plan: &SweepPlan, point: &[f64], exec: Exec) -> PhaseRow {
    let started = Instant::now();
    let mut config = plan.config_at(point);
    config.exec = exec;
    let lambda_p_initial = EigenProblem::from_model(
        &config.kernel,
        &config.model,
        config.d,
        -config.h0,
        config.h0,
        ((2.0 * config.h0 / (2.0 * config.window / config.n_nodes as f64)).round() as usize).max(16),
    )
    .and_then(|p| eigen::principal_eigenvalue(&p, &config.eigen))
    .map(|r| r.lambda_p)
    .ok();
    let mut row = PhaseRow {
        values: point.to_vec(),
        class: None,
        final_len: None,
        final_max_i: None,
        lambda_p_final: None,
        lambda_p_initial,
        audit_violation: false,
        runtime_s: 0.0,
        status: "ok".into(),
    };
    match dynamics::simulate(&config) {
        Ok(run) => {
            let o = &run.outcome;
            row.class = Some(o.class);
            row.final_len = Some(o.final_interval_length);
            row.final_max_i = Some(o.final_max_i);
            row.lambda_p_final = o.lambda_p_at_final_interval;
            if o.class == OutcomeClass::Vanishing {
                let audit = dynamics::verify_vanishing_spectral(o, &config);
                row.audit_violation = audit.violation;
                if audit.violation {
                    log::warn!("spectral audit failed at {point:?}: λ_p = {:?}", audit.lambda_p);
                }
            }
        }
        Err(e) => row.status = e.to_string(),
    }
    row.runtime_s = started.elapsed().as_secs_f64();
    log::info!(
        "sweep point {point:?}: {} ({:.2} s)",
        row.class.map_or("failed".to_string(), |c| c.to_string()),
        row.runtime_s
    );
    row
}

/// Runs every grid point, up to `plan.jobs` at a time. Rows come back in
/// lexicographic axis order whatever the execution order; a failing run is
/// recorded in its row and the sweep continues.
pub fn run_sweep(plan: &SweepPlan) -> Result<PhaseTable> {
    plan.validate()?;
    let points = plan.points();
    let rows = if plan.jobs == 1 {
        points.iter().map(|p| run_point(plan, p, plan.base.exec)).collect()
    } else {
        par::with_jobs(plan.jobs, || par::map(Exec::Parallel, &points, |_, p| run_point(plan, p, Exec::Sequential)))
    };
    let table = PhaseTable {
        axes: plan.axes.iter().map(|a| a.name).collect(),
        rows,
        config_hash: plan.config_hash.clone(),
        n_nodes: plan.base.n_nodes,
        dx: 2.0 * plan.base.window / plan.base.n_nodes as f64,
        dt: plan.base.resolve_dt().ok(),
    };
    for w in table.phase_warnings() {
        log::warn!("{w}");
    }
    Ok(table)
}

/// CSV rendering with the columns
/// `axis1_name, axis1_value, [axis2_name, axis2_value,] class, final_len,
/// final_max_I, lambda_p_final, runtime_s, status`.
pub fn table_csv(table: &PhaseTable) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = Vec::new();
    for k in 1..=table.axes.len() {
        header.push(format!("axis{k}_name"));
        header.push(format!("axis{k}_value"));
    }
    header.extend(
        ["class", "final_len", "final_max_I", "lambda_p_final", "runtime_s", "status"].iter().map(|s| s.to_string()),
    );
    w.write_record(&header).map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for row in &table.rows {
        let mut rec: Vec<String> = Vec::new();
        for (ax, v) in table.axes.iter().zip(&row.values) {
            rec.push(ax.name().to_string());
            rec.push(v.to_string());
        }
        rec.push(row.class.map_or(String::new(), |c| c.to_string()));
        rec.push(opt(row.final_len));
        rec.push(opt(row.final_max_i));
        rec.push(opt(row.lambda_p_final));
        rec.push(format!("{:.3}", row.runtime_s));
        rec.push(row.status.clone());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Probe {
    pub k: f64,
    pub class: OutcomeClass,
    pub final_len: f64,
    pub final_max_i: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KBracket {
    pub k_lower_bound: f64,
    pub k_upper_bound: f64,
    /// Every probe in evaluation order, endpoints first.
    pub probes: Vec<Probe>,
}

/// Bisection on a classification that is Vanishing at `lo` and Spreading at
/// `hi`.
///
/// Undecided probes form a band that is never forced into either class;
/// later probes bisect the wider of the two gaps around it, so the reported
/// bracket stays an honest enclosure.
pub fn bracket_threshold(
    lo: f64,
    hi: f64,
    refinements: usize,
    mut probe: impl FnMut(f64) -> Result<Probe>,
) -> Result<KBracket> {
    if !(lo < hi) {
        return Err(Error::BracketInvalid(format!("need k_lo < k_hi, got [{lo}, {hi}]")));
    }
    let mut probes = Vec::new();
    let at_lo = probe(lo)?;
    let at_hi = probe(hi)?;
    let (c_lo, c_hi) = (at_lo.class, at_hi.class);
    probes.push(at_lo);
    probes.push(at_hi);
    if c_lo != OutcomeClass::Vanishing || c_hi != OutcomeClass::Spreading {
        return Err(Error::BracketInvalid(format!(
            "{c_lo} at k_lo = {lo} and {c_hi} at k_hi = {hi}; need Vanishing below and Spreading above"
        )));
    }
    let (mut lo, mut hi) = (lo, hi);
    let mut band: Option<(f64, f64)> = None;
    let mut decided = 0usize;
    for _ in 0..refinements {
        let mid = match band {
            None => 0.5 * (lo + hi),
            Some((u_lo, u_hi)) if u_lo - lo >= hi - u_hi => 0.5 * (lo + u_lo),
            Some((_, u_hi)) => 0.5 * (u_hi + hi),
        };
        let p = probe(mid)?;
        match p.class {
            OutcomeClass::Vanishing => {
                decided += 1;
                lo = mid;
                band = band.filter(|&(u_lo, _)| u_lo > mid);
            }
            OutcomeClass::Spreading => {
                decided += 1;
                hi = mid;
                band = band.filter(|&(_, u_hi)| u_hi < mid);
            }
            OutcomeClass::Undecided => {
                band = Some(band.map_or((mid, mid), |(a, b)| (a.min(mid), b.max(mid))));
            }
        }
        log::info!("k = {mid}: {} -> bracket [{lo}, {hi}]", p.class);
        probes.push(p);
    }
    if refinements > 0 && decided == 0 {
        return Err(Error::BracketExhausted);
    }
    Ok(KBracket { k_lower_bound: lo, k_upper_bound: hi, probes })
}

/// [`bracket_threshold`] with one full simulation per probe.
pub fn bracket_k_threshold(base: &SimConfig, k_lo: f64, k_hi: f64, refinements: usize) -> Result<KBracket> {
    base.validate()?;
    bracket_threshold(k_lo, k_hi, refinements, |k| {
        let run = dynamics::simulate(&Axis::K.apply(base, k)).map_err(|e| Error::AtValue {
            axis: "k".into(),
            value: k,
            source: Box::new(e),
        })?;
        Ok(Probe {
            k,
            class: run.outcome.class,
            final_len: run.outcome.final_interval_length,
            final_max_i: run.outcome.final_max_i,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{CoefficientModel, SpatialFunction};
    use crate::dynamics::{Thresholds, TimeStep};
    use crate::eigen::EigenOptions;
    use crate::kernel::KernelSpec;

    fn synthetic(threshold: f64) -> impl FnMut(f64) -> Result<Probe> {
        move |k| {
            let class = if k < threshold { OutcomeClass::Vanishing } else { OutcomeClass::Spreading };
            Ok(Probe { k, class, final_len: 0.0, final_max_i: 0.0 })
        }
    }

    #[test]
    fn bisection_halves_width() {
        let b = bracket_threshold(0.0, 8.0, 6, synthetic(std::f64::consts::E)).unwrap();
        assert_eq!(b.k_upper_bound - b.k_lower_bound, 8.0 / 64.0);
        assert!(b.k_lower_bound < std::f64::consts::E && std::f64::consts::E <= b.k_upper_bound);
        assert_eq!(b.probes.len(), 8);
    }

    #[test]
    fn misordered_endpoints_rejected() {
        let err = bracket_threshold(5.0, 8.0, 3, synthetic(1.0)).unwrap_err();
        assert!(matches!(err, Error::BracketInvalid(_)));
    }

    #[test]
    fn undecided_band_widens_bracket() {
        // undecided on [3, 5): the bracket must stay around the band
        let oracle = |k: f64| {
            let class = if k < 3.0 {
                OutcomeClass::Vanishing
            } else if k < 5.0 {
                OutcomeClass::Undecided
            } else {
                OutcomeClass::Spreading
            };
            Ok(Probe { k, class, final_len: 0.0, final_max_i: 0.0 })
        };
        let b = bracket_threshold(0.0, 8.0, 12, oracle).unwrap();
        assert!(b.k_lower_bound < 3.0 && b.k_upper_bound >= 5.0);
        assert!(3.0 - b.k_lower_bound < 0.1 && b.k_upper_bound - 5.0 < 0.1, "{b:?}");
    }

    #[test]
    fn all_undecided_exhausts() {
        let oracle = |k: f64| {
            let class = match k {
                k if k == 0.0 => OutcomeClass::Vanishing,
                k if k == 8.0 => OutcomeClass::Spreading,
                _ => OutcomeClass::Undecided,
            };
            Ok(Probe { k, class, final_len: 0.0, final_max_i: 0.0 })
        };
        assert!(matches!(bracket_threshold(0.0, 8.0, 4, oracle), Err(Error::BracketExhausted)));
    }

    fn small_base() -> SimConfig {
        SimConfig {
            kernel: KernelSpec::truncated_gaussian(0.5, 3.0).unwrap(),
            model: CoefficientModel::constant(1.0, 1.0, 0.6, 0.8, 0.4),
            d: 1.0,
            k: 0.5,
            h0: 1.0,
            window: 8.0,
            n_nodes: 200,
            dt: TimeStep::Auto,
            t_end: 10.0,
            s0: SpatialFunction::constant(1.0),
            i0: SpatialFunction::tent(1.0, 1e-3),
            probes: vec![0.0],
            record_every: 1.0,
            snapshot_times: vec![],
            thresholds: Thresholds::default(),
            eigen: EigenOptions::default(),
            early_exit: false,
            exec: Exec::Sequential,
        }
    }

    #[test]
    fn points_are_lexicographic() {
        let plan = SweepPlan {
            base: small_base(),
            axes: vec![
                AxisValues { name: Axis::D, values: vec![0.5, 1.0] },
                AxisValues { name: Axis::K, values: vec![0.1, 0.2, 0.3] },
            ],
            jobs: 1,
            config_hash: String::new(),
        };
        let pts = plan.points();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0], vec![0.5, 0.1]);
        assert_eq!(pts[2], vec![0.5, 0.3]);
        assert_eq!(pts[3], vec![1.0, 0.1]);
        let c = plan.config_at(&pts[4]);
        assert_eq!((c.d, c.k), (1.0, 0.2));
    }

    #[test]
    fn h0_axis_keeps_initial_data_admissible() {
        let c = Axis::H0.apply(&small_base(), 2.0);
        assert!(c.violations().is_empty(), "{:?}", c.violations());
        assert_eq!(c.i0.eval(2.0), 0.0);
    }

    #[test]
    fn unsorted_axis_rejected() {
        let plan = SweepPlan {
            base: small_base(),
            axes: vec![AxisValues { name: Axis::K, values: vec![0.3, 0.1] }],
            jobs: 1,
            config_hash: String::new(),
        };
        assert!(plan.violations().iter().any(|v| v.contains("sorted")));
    }

    #[test]
    fn failures_are_recorded_per_row() {
        // the wide kernel leaves no room in this window at h0 = 5
        let plan = SweepPlan {
            base: small_base(),
            axes: vec![AxisValues { name: Axis::H0, values: vec![1.0, 5.0] }],
            jobs: 2,
            config_hash: "x".into(),
        };
        let t = run_sweep(&plan).unwrap();
        assert_eq!(t.rows[0].status, "ok");
        assert!(t.rows[1].class.is_none() && t.rows[1].status.contains("kernel radius"));
        let csv = String::from_utf8(table_csv(&t).unwrap()).unwrap();
        assert!(csv.starts_with("axis1_name,axis1_value,class,final_len,final_max_I,lambda_p_final,runtime_s,status"));
        assert_eq!(csv.lines().count(), 3);
    }
}
