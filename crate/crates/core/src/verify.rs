//! Built-in property suite behind `frontier-sis verify`.
//!
//! Pseudo-random inputs come from additive (Weyl) sequences, so the suite
//! uses no RNG and every run checks the same cases.

use std::cell::RefCell;
use std::time::Instant;

use serde::Serialize;

use crate::coeffs::{CoefficientModel, SpatialFunction};
use crate::dynamics::{self, OutcomeClass, SimConfig, Thresholds, TimeStep};
use crate::eigen::{self, EigenOptions, EigenProblem};
use crate::error::Result;
use crate::kernel::{self, KernelSpec, KernelTable, QuadratureGrid};
use crate::oracle;
use crate::par::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
pub enum Level {
    Fast,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub level: Level,
    /// Multiplies every kernel's normalization constant; anything but 1
    /// must make the normalization property fail.
    pub kernel_scale: f64,
    pub exec: Exec,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { level: Level::Fast, kernel_scale: 1.0, exec: Exec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Distance to the tolerance; negative on failure.
    pub margin: f64,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub checks: Vec<Check>,
    /// Preformatted tables (full level).
    pub tables: Vec<String>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{} {:<34} margin {:>11.3e}  {:>7.2}s  {}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.margin,
                c.seconds,
                c.detail
            ));
        }
        for t in &self.tables {
            out.push('\n');
            out.push_str(t);
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        out.push_str(&format!("\n{} checks, {} failed\n", self.checks.len(), failed));
        out
    }
}

/// `k`-th element of the Weyl sequence with golden-ratio increment, in [0, 1).
fn weyl(k: usize, salt: f64) -> f64 {
    ((k as f64 + 1.0) * 0.618_033_988_749_894_9 + salt).fract()
}

struct Suite {
    checks: Vec<Check>,
}

impl Suite {
    /// `f` returns `(margin, detail)`; the check passes iff `margin ≥ 0`.
    fn run(&mut self, name: &str, f: impl FnOnce() -> Result<(f64, String)>) {
        let started = Instant::now();
        let (passed, margin, detail) = match f() {
            Ok((m, d)) => (m >= 0.0, m, d),
            Err(e) => (false, f64::NEG_INFINITY, format!("error: {e}")),
        };
        log::info!("{name}: {}", if passed { "pass" } else { "FAIL" });
        self.checks.push(Check { name: name.into(), passed, margin, detail, seconds: started.elapsed().as_secs_f64() });
    }
}

fn kernels(scale: f64) -> Result<Vec<KernelSpec>> {
    Ok(vec![
        KernelSpec::truncated_gaussian(0.5, 3.0)?.with_scaled_normalization(scale),
        KernelSpec::bump(1.0)?.with_scaled_normalization(scale),
        KernelSpec::laplace(0.5)?.with_scaled_normalization(scale),
    ])
}

fn eigen_problem(kernel: &KernelSpec, d: f64, half: f64, n: usize, a: impl Fn(f64) -> f64) -> Result<EigenProblem> {
    let grid = QuadratureGrid::symmetric(half, n)?;
    let prof = grid.nodes().into_iter().map(a).collect();
    EigenProblem::new(kernel.clone(), d, grid, prof)
}

fn lambda(p: &EigenProblem, opts: &EigenOptions) -> Result<f64> {
    Ok(eigen::principal_eigenvalue(p, opts)?.lambda_p)
}

fn small_vanishing(exec: Exec) -> SimConfig {
    SimConfig {
        kernel: KernelSpec::truncated_gaussian(0.5, 3.0).expect("valid kernel"),
        model: CoefficientModel::constant(1.0, 1.0, 0.6, 0.8, 0.4),
        d: 1.0,
        k: 0.5,
        h0: 1.0,
        window: 8.0,
        n_nodes: 400,
        dt: TimeStep::Auto,
        t_end: 120.0,
        s0: SpatialFunction::constant(1.0),
        i0: SpatialFunction::tent(1.0, 1e-3),
        probes: vec![0.0, 4.0],
        record_every: 1.0,
        snapshot_times: vec![],
        thresholds: Thresholds::default(),
        eigen: EigenOptions { exec, ..EigenOptions::default() },
        early_exit: true,
        exec,
    }
}

pub fn run(opts: &VerifyOptions) -> Report {
    let full = opts.level == Level::Full;
    let exec = opts.exec;
    let eig = EigenOptions { exec, ..EigenOptions::default() };
    let mut s = Suite { checks: Vec::new() };
    let tables = RefCell::new(Vec::<String>::new());
    let push_table = |rows: &[String]| tables.borrow_mut().push(rows.join("\n") + "\n");

    s.run("kernel.normalization", || {
        let mut worst: f64 = 0.0;
        for k in kernels(opts.kernel_scale)? {
            worst = worst.max((k.mass(f64::NEG_INFINITY, f64::INFINITY)? - 1.0).abs());
        }
        Ok((1e-8 - worst, format!("max |mass - 1| = {worst:.2e}")))
    });

    s.run("kernel.symmetry", || {
        let mut worst: f64 = 0.0;
        for k in kernels(1.0)? {
            for j in 0..500 {
                let x = (weyl(j, 0.1) - 0.5) * 2.5 * k.radius();
                worst = worst.max((k.eval(x) - k.eval(-x)).abs());
            }
        }
        Ok((if worst == 0.0 { 0.0 } else { -worst }, format!("max |J(x) - J(-x)| = {worst:e}")))
    });

    s.run("kernel.row_sums_bounded", || {
        let mut worst = f64::NEG_INFINITY;
        for k in kernels(1.0)? {
            let grid = QuadratureGrid::symmetric(2.0 * k.radius(), 400)?;
            let sums = KernelTable::new(&k, &grid)?.row_sums(grid.len());
            worst = worst.max(sums.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        Ok((1.0 + 1e-8 - worst, format!("max row sum = {worst:.12}")))
    });

    s.run("kernel.row_sum_second_order", || {
        let mut worst_ratio = f64::INFINITY;
        let ns: &[usize] = if full { &[100, 200, 400, 800] } else { &[100, 200, 400] };
        for k in kernels(1.0)? {
            // rows whose kernel support is cut by the right end of [-R, R/2]
            let (left, right) = (-k.radius(), 0.5 * k.radius());
            let errs: Vec<f64> = ns
                .iter()
                .map(|&n| {
                    let grid = QuadratureGrid::new(left, right, n)?;
                    let sums = KernelTable::new(&k, &grid)?.row_sums(n);
                    let i = grid.nearest(0.0);
                    let x = grid.node(i);
                    Ok((sums[i] - k.mass(left - x, right - x)?).abs())
                })
                .collect::<Result<_>>()?;
            for w in errs.windows(2) {
                if w[1] > 1e-13 {
                    worst_ratio = worst_ratio.min(w[0] / w[1]);
                }
            }
        }
        Ok((worst_ratio - 3.0, format!("min error reduction per doubling = {worst_ratio:.2}")))
    });

    s.run("coeffs.monotonicity", || {
        let mut m = CoefficientModel::constant(1.0, 1.0, 0.5, 2.0, 0.0);
        m.gamma0 = SpatialFunction::constant(0.2);
        m.gamma1 = SpatialFunction::constant(1.0);
        m.media = SpatialFunction::GaussianBump { base: 0.1, amplitude: 0.5, center: 0.0, width: 1.0 };
        m.beds = SpatialFunction::GaussianBump { base: 0.5, amplitude: 1.0, center: 0.3, width: 2.0 };
        m.beta_i_gain = 0.7;
        let mut worst = f64::NEG_INFINITY;
        for j in 0..300 {
            let x = 6.0 * (weyl(j, 0.2) - 0.5);
            let i = 50.0 * weyl(j, 0.7);
            let (s1, s2) = (2.0 * weyl(j, 0.3), 2.0 * weyl(j, 0.3) + 0.5);
            worst = worst.max(m.with_media_scale(s2).beta(x, i)? - m.with_media_scale(s1).beta(x, i)?);
            worst = worst.max(m.with_bed_scale(s1).gamma(x, i)? - m.with_bed_scale(s2).gamma(x, i)?);
            worst = worst.max(m.beta(x, i)? - m.beta(x, i + 0.5)?);
            worst = worst.max(m.gamma(x, i + 0.5)? - m.gamma(x, i)?);
            worst = worst.max(m.beta(x, i)? - m.beta_sup());
        }
        Ok((-worst, format!("largest monotonicity excess = {worst:.2e}")))
    });

    s.run("eigen.oracle_small_problems", || {
        let mut worst: f64 = 0.0;
        let mut cases = 0;
        let ks = kernels(1.0)?;
        let opts = EigenOptions { tol: 1e-12, ..eig };
        for (j, k) in (0..60).map(|j| (j, &ks[j % 3])) {
            let n = 1 + j % 8;
            let half = (n as f64) * k.width() / 4.0 * (0.2 + 0.79 * weyl(j, 0.4));
            let d = 2.0 * weyl(j, 0.5);
            let (c0, c1) = (weyl(j, 0.6) - 0.5, weyl(j, 0.9));
            let p = eigen_problem(k, d, half, n, |x| c0 - c1 * x * x)?;
            let dense = oracle::symmetric_eigenvalues(&eigen::assemble(&p)?);
            worst = worst.max((lambda(&p, &opts)? - dense[n - 1]).abs());
            cases += 1;
        }
        Ok((1e-10 - worst, format!("{cases} cases, max |power - dense| = {worst:.2e}")))
    });

    let base_kernel = KernelSpec::truncated_gaussian(0.5, 3.0).expect("valid kernel");
    s.run("eigen.lipschitz_and_shift", || {
        let grid = QuadratureGrid::symmetric(2.0, 64)?;
        let nodes = grid.nodes();
        let base: Vec<f64> = nodes.iter().map(|x| 0.3 - 0.2 * x * x).collect();
        let p = EigenProblem::new(base_kernel.clone(), 1.0, grid, base.clone())?;
        let l0 = lambda(&p, &eig)?;
        let pairs = if full { 100 } else { 25 };
        let mut worst = f64::INFINITY;
        for j in 0..pairs {
            let amp = 0.5 * weyl(j, 0.11);
            let (f, ph) = (1.0 + 4.0 * weyl(j, 0.37), 6.0 * weyl(j, 0.73));
            let delta: Vec<f64> = nodes.iter().map(|x| amp * (f * x + ph).sin()).collect();
            let sup = delta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let moved: Vec<f64> = base.iter().zip(&delta).map(|(a, b)| a + b).collect();
            let l1 = lambda(&p.with_profile(moved)?, &eig)?;
            worst = worst.min(sup + 2.0 * eig.tol - (l1 - l0).abs());
        }
        let shifted = lambda(&p.with_profile(base.iter().map(|a| a + 0.37).collect())?, &eig)?;
        let shift_err = (shifted - l0 - 0.37).abs();
        Ok((worst.min(2.0 * eig.tol - shift_err), format!("{pairs} pairs, shift error {shift_err:.1e}")))
    });

    s.run("eigen.diffusion_monotone", || {
        let p = eigen_problem(&base_kernel, 0.0, 1.0, 64, |x| 0.3 - x * x)?;
        let ds = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0];
        let ls: Vec<f64> = ds.iter().map(|&d| lambda(&p.with_diffusion(d)?, &eig)).collect::<Result<_>>()?;
        let gap = ls.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min);
        let at_zero = (ls[0] - p.max_profile()).abs();
        Ok((gap.min(1e-10 - at_zero), format!("min decrease {gap:.3e}, |λ(0) - max a| = {at_zero:.1e}")))
    });

    s.run("eigen.small_interval_limit", || {
        let d = 1.0;
        let sup = base_kernel.sup_norm();
        let mut margin = f64::INFINITY;
        let mut rows = vec!["halfwidth   lambda_p              |lambda_p - (a(0) - d)|   bound".to_string()];
        let mut prev_err = f64::INFINITY;
        for h in [1e-2, 1e-3, 1e-4] {
            let l = lambda(&eigen_problem(&base_kernel, d, h, 16, |x| 0.3 - x * x)?, &eig)?;
            let err = (l - (0.3 - d)).abs();
            let bound = 2.0 * d * sup * h + 1e-6;
            // within the bound, and closer at every smaller halfwidth
            margin = margin.min(bound - err).min(prev_err - err);
            prev_err = err;
            rows.push(format!("{h:<10.0e}  {l:<20.15}  {err:<24.3e}  {bound:.3e}"));
        }
        if full {
            push_table(&rows);
        }
        Ok((margin, "a(x) = 0.3 - x^2, d = 1".into()))
    });

    s.run("dynamics.disease_free_fixed_point", || {
        let cfg = small_vanishing(exec);
        let sim = dynamics::Simulator::new(&cfg)?;
        let mut st = sim.initial_state();
        st.i.iter_mut().for_each(|v| *v = 0.0);
        let next = sim.step(&st, cfg.stable_dt())?;
        let drift = next.s.iter().fold(0.0f64, |m, v| m.max((v - 1.0).abs()));
        let moved = (next.h - st.h).abs() + (next.g - st.g).abs();
        Ok((1e-14 - drift.max(moved), format!("max |S - σ/μ1| = {drift:.1e}")))
    });

    let run_pair = || -> Result<(dynamics::Run, dynamics::Run)> {
        let cfg = small_vanishing(exec);
        Ok((dynamics::simulate(&cfg)?, dynamics::simulate(&cfg)?))
    };
    match run_pair() {
        Ok((a, b)) => {
            let cfg = small_vanishing(exec);
            s.run("dynamics.invariants", || {
                let tr = &a.trajectory;
                let e = tr.extremes;
                let bound = tr.bound + dynamics::BOUND_SLACK;
                let m = e.min_s.min(e.min_i).min(bound - e.max_s).min(bound - e.max_i);
                let mono = tr.h.windows(2).all(|w| w[1] >= w[0]) && tr.g.windows(2).all(|w| w[1] <= w[0]);
                Ok((if mono { m } else { -1.0 }, format!("S in [{:.6}, {:.6}], A = {}", e.min_s, e.max_s, tr.bound)))
            });
            s.run("dynamics.determinism", || {
                Ok((if a == b { 0.0 } else { -1.0 }, format!("{} samples compared", a.trajectory.len())))
            });
            s.run("dynamics.vanishing_audit", || {
                let audit = dynamics::verify_vanishing_spectral(&a.outcome, &cfg);
                let vanished = a.outcome.class == OutcomeClass::Vanishing;
                let l = audit.lambda_p.unwrap_or(f64::INFINITY);
                let margin = if vanished && !audit.violation { audit.threshold - l } else { -1.0 };
                Ok((margin, format!("{} at t = {:.1}, λ_p(final) = {l:.4}", a.outcome.class, a.outcome.horizon)))
            });
        }
        Err(e) => {
            s.run("dynamics.invariants", || Err(e));
        }
    }

    if full {
        s.run("eigen.refinement", || {
            let m = CoefficientModel::constant(1.0, 1.0, 0.5, 1.3, 0.5);
            let rows = eigen::refinement_study(&base_kernel, &m, 1.0, -1.0, 1.0, 32, &eig)?;
            let e1 = (rows[0].1 - rows[1].1).abs();
            let e2 = (rows[1].1 - rows[2].1).abs();
            let ratio = e1 / e2;
            let mut table = vec!["n      lambda_p".to_string()];
            table.extend(rows.iter().map(|(n, l)| format!("{n:<6} {l:.15}")));
            push_table(&table);
            Ok((ratio - 3.0, format!("successive-difference ratio {ratio:.2}")))
        });

        s.run("dynamics.temporal_order", || {
            let finals: Vec<(f64, f64)> = [0.05, 0.025, 0.0125]
                .iter()
                .map(|&dt| {
                    let cfg =
                        SimConfig { dt: TimeStep::Fixed(dt), t_end: 50.0, early_exit: false, ..small_vanishing(exec) };
                    let o = dynamics::simulate(&cfg)?.outcome;
                    Ok((o.final_h, o.final_max_i))
                })
                .collect::<Result<_>>()?;
            let ratio = |f: fn(&(f64, f64)) -> f64| {
                (f(&finals[0]) - f(&finals[1])).abs() / (f(&finals[1]) - f(&finals[2])).abs()
            };
            let (rh, ri) = (ratio(|p| p.0), ratio(|p| p.1));
            let margin = [rh, ri].iter().map(|r| (r - 1.7).min(2.3 - r)).fold(f64::INFINITY, f64::min);
            Ok((margin, format!("ratios h: {rh:.3}, max I: {ri:.3}")))
        });

        s.run("kernel.dense_matches_table", || {
            let mut worst: f64 = 0.0;
            for k in kernels(1.0)? {
                let grid = QuadratureGrid::symmetric(k.radius(), 60)?;
                let dense = kernel::kernel_matrix(&k, &grid)?;
                let table = KernelTable::new(&k, &grid)?;
                for i in 0..60 {
                    for j in 0..60 {
                        worst = worst.max((dense.get(i, j) - table.entry(i, j)).abs());
                    }
                }
            }
            Ok((1e-15 - worst, format!("max entry difference {worst:.1e}")))
        });
    }

    Report { checks: s.checks, tables: tables.into_inner() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_suite_passes() {
        let r = run(&VerifyOptions { exec: Exec::Sequential, ..VerifyOptions::default() });
        assert!(r.passed(), "{}", r.render());
    }

    #[test]
    fn unnormalized_kernel_detected() {
        let r = run(&VerifyOptions { kernel_scale: 1.01, exec: Exec::Sequential, ..VerifyOptions::default() });
        assert!(!r.passed());
        let failed: Vec<&str> = r.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        assert_eq!(failed, vec!["kernel.normalization"]);
    }
}
