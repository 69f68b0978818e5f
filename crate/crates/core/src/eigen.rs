//! Principal eigenvalue of `d∫_{L1}^{L2} J(x-y)φ(y)dy - dφ(x) + a(x)φ(x)`.
//!
//! The operator is discretized on a cell-centered grid, giving the symmetric
//! matrix `A = d·W - d·I + diag(a)`. Its off-diagonal part is nonnegative and
//! banded with a positive first off-diagonal, so `A + sI` is a primitive
//! nonnegative matrix for a large enough shift `s`: the dominant eigenvalue is
//! simple with a positive eigenvector, and plain power iteration finds it.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::coeffs::CoefficientModel;
use crate::error::{Error, Result, SignRegime};
use crate::kernel::{DenseMatrix, KernelSpec, KernelTable, QuadratureGrid};
use crate::par::{self, Exec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EigenOptions {
    pub tol: f64,
    pub max_iters: usize,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions { tol: 1e-10, max_iters: 100_000, exec: Exec::default() }
    }
}

impl EigenOptions {
    pub fn with_tol(tol: f64) -> Self {
        EigenOptions { tol, ..Self::default() }
    }
}

/// Discretized eigenvalue problem on `(L1, L2)`.
#[derive(Debug, Clone)]
pub struct EigenProblem {
    kernel: KernelSpec,
    d: f64,
    grid: QuadratureGrid,
    a: Vec<f64>,
}

impl EigenProblem {
    pub fn new(kernel: KernelSpec, d: f64, grid: QuadratureGrid, a: Vec<f64>) -> Result<Self> {
        if !(d.is_finite() && d >= 0.0) {
            return Err(Error::InvalidArgument(format!("diffusion rate must be nonnegative, got {d}")));
        }
        if a.len() != grid.len() {
            return Err(Error::InvalidArgument(format!("profile has {} values for {} nodes", a.len(), grid.len())));
        }
        if let Some(i) = a.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("a is not finite at node {i}")));
        }
        Ok(EigenProblem { kernel, d, grid, a })
    }

    /// Problem on `(l1, l2)` with `a(x)` taken from a coefficient model.
    pub fn from_model(
        kernel: &KernelSpec,
        model: &CoefficientModel,
        d: f64,
        l1: f64,
        l2: f64,
        n_nodes: usize,
    ) -> Result<Self> {
        let grid = QuadratureGrid::new(l1, l2, n_nodes)?;
        let a = model.a_profile(&grid.nodes());
        Self::new(kernel.clone(), d, grid, a)
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn diffusion(&self) -> f64 {
        self.d
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn profile(&self) -> &[f64] {
        &self.a
    }

    pub fn with_profile(&self, a: Vec<f64>) -> Result<Self> {
        Self::new(self.kernel.clone(), self.d, self.grid.clone(), a)
    }

    pub fn with_diffusion(&self, d: f64) -> Result<Self> {
        Self::new(self.kernel.clone(), d, self.grid.clone(), self.a.clone())
    }

    pub fn max_profile(&self) -> f64 {
        self.a.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Shift `d + max|a| + 1`; `A + shift·I` is entrywise nonnegative with a
    /// positive diagonal.
    pub fn perron_shift(&self) -> f64 {
        self.d + self.a.iter().fold(0.0f64, |m, v| m.max(v.abs())) + 1.0
    }

    fn table(&self) -> Result<KernelTable> {
        let table = KernelTable::new(&self.kernel, &self.grid)?;
        if self.grid.len() >= 2 && self.d > 0.0 && table.weight(1) <= 0.0 {
            return Err(Error::UnderResolved { dx: self.grid.dx(), width: self.kernel.width() });
        }
        Ok(table)
    }
}

/// Dense `A = d·W - d·I + diag(a)`.
pub fn assemble(problem: &EigenProblem) -> Result<DenseMatrix> {
    let n = problem.grid.len();
    let d = problem.d;
    if d == 0.0 {
        return Ok(DenseMatrix::from_fn(n, |i, j| if i == j { problem.a[i] } else { 0.0 }));
    }
    let table = problem.table()?;
    Ok(DenseMatrix::from_fn(n, |i, j| {
        let w = d * table.entry(i, j);
        if i == j {
            w - d + problem.a[i]
        } else {
            w
        }
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    pub lambda_p: f64,
    /// Eigenvector at the nodes, sup-norm one.
    pub phi: Vec<f64>,
    /// `‖Aφ - λφ‖∞`.
    pub residual: f64,
    pub iterations: usize,
    /// `a` is constant on the grid, so its maximum is not isolated.
    pub flat_profile: bool,
}

/// Dominant eigenpair by shifted power iteration.
///
/// The iteration runs on `A + sI` with `s = max_i(d - a_i)`, the smallest
/// shift that keeps every diagonal entry at least `d·W_ii > 0`; the shifted
/// matrix is then nonnegative and primitive. Starts from the all-ones vector
/// and stops once the sup-norm residual of the Rayleigh quotient pair drops
/// below `tol`.
///
/// For `d = 0` the operator is `diag(a)`: the result is `max a` exactly, with
/// the indicator of the maximizing nodes as eigenvector.
pub fn principal_eigenvalue(problem: &EigenProblem, opts: &EigenOptions) -> Result<EigenResult> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let n = problem.grid.len();
    let a = &problem.a;
    let max_a = problem.max_profile();
    let flat_profile = a.iter().all(|v| *v == a[0]);
    if flat_profile && n > 1 {
        log::debug!("profile is constant on the grid: its maximum is attained everywhere");
    }

    if problem.d == 0.0 {
        let phi = a.iter().map(|v| if *v == max_a { 1.0 } else { 0.0 }).collect();
        return Ok(EigenResult { lambda_p: max_a, phi, residual: 0.0, iterations: 0, flat_profile });
    }

    let d = problem.d;
    let table = problem.table()?;
    let shift = a.iter().map(|v| d - v).fold(f64::NEG_INFINITY, f64::max);

    let mut x = vec![1.0; n];
    let mut y = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for iteration in 1..=opts.max_iters {
        table.apply(&x, &mut y, opts.exec);
        for i in 0..n {
            y[i] = d * y[i] - d * x[i] + a[i] * x[i];
        }
        let (num, den) = x.iter().zip(&y).fold((0.0, 0.0), |(nm, dn), (xi, yi)| (nm + xi * yi, dn + xi * xi));
        let lambda = num / den;
        residual = x.iter().zip(&y).fold(0.0f64, |m, (xi, yi)| m.max((yi - lambda * xi).abs()));
        if residual <= opts.tol {
            if let Some(node) = x.iter().position(|v| !(*v > 0.0)) {
                return Err(Error::NotPositive { node });
            }
            return Ok(EigenResult { lambda_p: lambda, phi: x, residual, iterations: iteration, flat_profile });
        }
        let mut norm = 0.0f64;
        for i in 0..n {
            x[i] = y[i] + shift * x[i];
            norm = norm.max(x[i].abs());
        }
        for v in x.iter_mut() {
            *v /= norm;
        }
    }
    Err(Error::NotConverged { iterations: opts.max_iters, residual })
}

/// λ_p at `n`, `2n` and `4n` nodes on the same interval.
pub fn refinement_study(
    kernel: &KernelSpec,
    model: &CoefficientModel,
    d: f64,
    l1: f64,
    l2: f64,
    n: usize,
    opts: &EigenOptions,
) -> Result<Vec<(usize, f64)>> {
    [n, 2 * n, 4 * n]
        .into_iter()
        .map(|m| {
            let p = EigenProblem::from_model(kernel, model, d, l1, l2, m)?;
            Ok((m, principal_eigenvalue(&p, opts)?.lambda_p))
        })
        .collect()
}

/// Ingredients from which an [`EigenProblem`] is rebuilt along a sweep axis.
#[derive(Debug, Clone)]
pub struct EigenSetup {
    pub kernel: KernelSpec,
    pub model: CoefficientModel,
    pub d: f64,
    pub l1: f64,
    pub l2: f64,
    pub n_nodes: usize,
}

impl EigenSetup {
    pub fn problem(&self) -> Result<EigenProblem> {
        EigenProblem::from_model(&self.kernel, &self.model, self.d, self.l1, self.l2, self.n_nodes)
    }

    /// Setup with one axis moved to `value`. Interval sweeps keep the grid
    /// spacing of the base setup.
    pub fn along(&self, axis: SweepAxis, value: f64) -> EigenSetup {
        let mut s = self.clone();
        match axis {
            SweepAxis::Diffusion => s.d = value,
            SweepAxis::IntervalHalfwidth => {
                let dx = (self.l2 - self.l1) / self.n_nodes as f64;
                s.l1 = -value;
                s.l2 = value;
                s.n_nodes = ((2.0 * value / dx).round() as usize).max(1);
            }
            SweepAxis::MediaScale => s.model = self.model.with_media_scale(value),
            SweepAxis::BedScale => s.model = self.model.with_bed_scale(value),
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    #[serde(rename = "d")]
    Diffusion,
    IntervalHalfwidth,
    MediaScale,
    BedScale,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Diffusion => "d",
            SweepAxis::IntervalHalfwidth => "interval-halfwidth",
            SweepAxis::MediaScale => "media-scale",
            SweepAxis::BedScale => "bed-scale",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "d" => Some(SweepAxis::Diffusion),
            "interval-halfwidth" => Some(SweepAxis::IntervalHalfwidth),
            "media-scale" => Some(SweepAxis::MediaScale),
            "bed-scale" => Some(SweepAxis::BedScale),
            _ => None,
        }
    }

    /// Direction λ_p must move as the axis value increases.
    pub fn expected_trend(self) -> Trend {
        match self {
            SweepAxis::Diffusion => Trend::Decreasing,
            SweepAxis::IntervalHalfwidth => Trend::Nondecreasing,
            SweepAxis::MediaScale | SweepAxis::BedScale => Trend::Nonincreasing,
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trend {
    Decreasing,
    Nonincreasing,
    Nondecreasing,
}

#[derive(Debug, Clone)]
pub struct EigenSweep {
    pub axis: SweepAxis,
    pub rows: Vec<(f64, EigenResult)>,
    /// Largest step against the expected trend (0 when it holds).
    pub max_violation: f64,
    pub tol: f64,
}

impl EigenSweep {
    /// Trend holds up to `2·tol`.
    pub fn trend_holds(&self) -> bool {
        self.max_violation <= 2.0 * self.tol
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.rows.iter().map(|(_, r)| r.lambda_p).collect()
    }
}

pub fn eigen_sweep(base: &EigenSetup, axis: SweepAxis, values: &[f64], opts: &EigenOptions) -> Result<EigenSweep> {
    if values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(format!("{axis} sweep values must be strictly ascending")));
    }
    let results = par::map(opts.exec, values, |_, &v| {
        base.along(axis, v).problem().and_then(|p| principal_eigenvalue(&p, opts)).map_err(|e| Error::AtValue {
            axis: axis.name().into(),
            value: v,
            source: Box::new(e),
        })
    });
    let mut rows = Vec::with_capacity(values.len());
    for (v, r) in values.iter().zip(results) {
        rows.push((*v, r?));
    }
    let max_violation = rows
        .windows(2)
        .map(|w| {
            let step = w[1].1.lambda_p - w[0].1.lambda_p;
            match axis.expected_trend() {
                Trend::Decreasing | Trend::Nonincreasing => step.max(0.0),
                Trend::Nondecreasing => (-step).max(0.0),
            }
        })
        .fold(0.0, f64::max);
    Ok(EigenSweep { axis, rows, max_violation, tol: opts.tol })
}

/// Controls for the bisection root finders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdOptions {
    /// Final bracket width in the parameter.
    pub tol: f64,
    pub eigen: EigenOptions,
    /// Grid spacing is at most `kernel width / nodes_per_width`.
    pub nodes_per_width: usize,
    pub min_nodes: usize,
    /// Smallest and largest halfwidth searched for L*.
    pub search_min: f64,
    pub search_max: f64,
}

impl Default for ThresholdOptions {
    fn default() -> Self {
        ThresholdOptions {
            tol: 1e-4,
            eigen: EigenOptions::with_tol(1e-10),
            nodes_per_width: 16,
            min_nodes: 32,
            search_min: 1e-3,
            search_max: 100.0,
        }
    }
}

impl ThresholdOptions {
    fn nodes_for(&self, kernel: &KernelSpec, length: f64) -> usize {
        let dx_max = kernel.width() / self.nodes_per_width as f64;
        ((length / dx_max).ceil() as usize).max(self.min_nodes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalLength {
    pub l_star: f64,
    pub lower: f64,
    pub upper: f64,
    pub n_nodes: usize,
    pub evaluations: usize,
}

/// Halfwidth `L*` where `λ_p((-L, L))` changes sign, by bisection.
///
/// A doubling scan from `search_min` first brackets the sign change; the
/// bisection then runs on one fixed node count so that λ_p is continuous in
/// `L` over the bracket. Returns the midpoint of the final bracket.
pub fn critical_length(
    model: &CoefficientModel,
    kernel: &KernelSpec,
    d: f64,
    opts: &ThresholdOptions,
) -> Result<CriticalLength> {
    let mut evaluations = 0usize;
    let mut lambda = |l: f64, n: usize| -> Result<f64> {
        evaluations += 1;
        let p = EigenProblem::from_model(kernel, model, d, -l, l, n)?;
        if d > 0.0 && p.max_profile() <= 0.0 {
            // λ_p < max a ≤ 0, no solve needed
            return Ok(f64::NEG_INFINITY);
        }
        Ok(principal_eigenvalue(&p, &opts.eigen)?.lambda_p)
    };

    let mut lo = opts.search_min;
    if lambda(lo, opts.nodes_for(kernel, 2.0 * lo))? >= 0.0 {
        return Err(Error::NoSignChange(SignRegime::AlwaysPositive));
    }
    let mut hi = lo;
    loop {
        if hi >= opts.search_max {
            return Err(Error::NoSignChange(SignRegime::AlwaysNegative));
        }
        let next = (2.0 * hi).min(opts.search_max);
        if lambda(next, opts.nodes_for(kernel, 2.0 * next))? > 0.0 {
            lo = hi;
            hi = next;
            break;
        }
        hi = next;
    }

    let n = opts.nodes_for(kernel, 2.0 * hi);
    while lo > opts.search_min && lambda(lo, n)? >= 0.0 {
        lo = (0.5 * lo).max(opts.search_min);
    }
    while hi - lo > opts.tol {
        let mid = 0.5 * (lo + hi);
        if lambda(mid, n)? > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(CriticalLength { l_star: 0.5 * (lo + hi), lower: lo, upper: hi, n_nodes: n, evaluations })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalDiffusion {
    pub d_star: f64,
    pub lower: f64,
    pub upper: f64,
    pub max_a: f64,
    pub tail_mass: f64,
    pub n_nodes: usize,
}

/// Diffusion rate `d*` where `λ_p((-h0, h0), d)` changes sign.
///
/// Returns `d* = 0` when `max a ≤ 0` on the interval. Otherwise requires
/// positive kernel mass below `-2h0`, which forces λ_p to `-∞` as `d` grows.
pub fn critical_diffusion(
    model: &CoefficientModel,
    kernel: &KernelSpec,
    h0: f64,
    opts: &ThresholdOptions,
) -> Result<CriticalDiffusion> {
    if !(h0 > 0.0) {
        return Err(Error::InvalidArgument(format!("h0 must be positive, got {h0}")));
    }
    let n = opts.nodes_for(kernel, 2.0 * h0);
    let base = EigenProblem::from_model(kernel, model, 0.0, -h0, h0, n)?;
    let max_a = base.max_profile();
    let tail_mass = kernel.lower_tail(-2.0 * h0);
    if max_a <= 0.0 {
        return Ok(CriticalDiffusion { d_star: 0.0, lower: 0.0, upper: 0.0, max_a, tail_mass, n_nodes: n });
    }
    if !(tail_mass > 0.0) {
        return Err(Error::TailCondition(tail_mass));
    }
    let lambda = |d: f64| -> Result<f64> { Ok(principal_eigenvalue(&base.with_diffusion(d)?, &opts.eigen)?.lambda_p) };

    let mut lo = 0.0;
    let mut hi = max_a.max(opts.tol);
    let mut doublings = 0;
    while lambda(hi)? >= 0.0 {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 200 {
            return Err(Error::NoSignChange(SignRegime::AlwaysPositive));
        }
    }
    while hi - lo > opts.tol {
        let mid = 0.5 * (lo + hi);
        if lambda(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CriticalDiffusion { d_star: 0.5 * (lo + hi), lower: lo, upper: hi, max_a, tail_mass, n_nodes: n })
}
