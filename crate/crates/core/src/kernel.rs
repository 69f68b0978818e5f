//! Dispersal kernels and the quadrature used for every kernel integral.
//!
//! A kernel is a symmetric probability density `J` with `J(0) > 0`. Three
//! families are shipped, all with bounded support `[-R, R]`:
//!
//! * `truncated-gaussian`: `exp(-x²/2w²) - exp(-R²/2w²)` on `|x| ≤ R`, so the
//!   kernel stays continuous at the cut.
//! * `bump-mollifier`: `exp(-1/(1 - (x/w)²))` on `|x| < w`, with `R = w`.
//! * `exponential-laplace`: `exp(-|x|/w)`, cut where the neglected tail mass
//!   drops below `1e-12` and renormalized.
//!
//! Masses `∫_a^b J` come from a cumulative table built once per kernel with
//! composite 8-point Gauss-Legendre panels, refined on the partial panel at
//! query time.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Exec};

/// Tail mass a truncated exponential kernel is allowed to drop.
pub const LAPLACE_TAIL_MASS: f64 = 1e-12;

const TABLE_PANELS: usize = 4096;

const GL_NODES: [f64; 4] =
    [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
const GL_WEIGHTS: [f64; 4] =
    [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    TruncatedGaussian,
    BumpMollifier,
    ExponentialLaplace,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::TruncatedGaussian => "truncated-gaussian",
            KernelFamily::BumpMollifier => "bump-mollifier",
            KernelFamily::ExponentialLaplace => "exponential-laplace",
        }
    }

    /// Support radius used when none is configured.
    pub fn default_radius(self, width: f64) -> f64 {
        match self {
            KernelFamily::TruncatedGaussian => 6.0 * width,
            KernelFamily::BumpMollifier => width,
            KernelFamily::ExponentialLaplace => 28.0 * width,
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A normalized, symmetric, compactly supported dispersal kernel.
#[derive(Clone)]
pub struct KernelSpec {
    family: KernelFamily,
    width: f64,
    radius: f64,
    normalization: f64,
    /// `cumulative[p] = ∫_0^{p·R/TABLE_PANELS} J`, already normalized.
    cumulative: Arc<[f64]>,
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelSpec")
            .field("family", &self.family)
            .field("width", &self.width)
            .field("radius", &self.radius)
            .field("normalization", &self.normalization)
            .finish()
    }
}

impl PartialEq for KernelSpec {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family
            && self.width == other.width
            && self.radius == other.radius
            && self.normalization == other.normalization
    }
}

impl KernelSpec {
    /// Builds a kernel. `radius = None` picks the family default.
    pub fn new(family: KernelFamily, width: f64, radius: Option<f64>) -> Result<Self> {
        if !(width.is_finite() && width > 0.0) {
            return Err(Error::InvalidKernel(format!("width must be positive, got {width}")));
        }
        let radius = radius.unwrap_or_else(|| family.default_radius(width));
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidKernel(format!("truncation radius must be positive, got {radius}")));
        }
        match family {
            KernelFamily::TruncatedGaussian if radius < width => {
                return Err(Error::InvalidKernel(format!(
                    "truncated-gaussian radius {radius} is smaller than its width {width}"
                )));
            }
            KernelFamily::BumpMollifier if (radius - width).abs() > 1e-12 * width => {
                return Err(Error::InvalidKernel(format!(
                    "bump-mollifier support radius is its width ({width}), got {radius}"
                )));
            }
            KernelFamily::ExponentialLaplace if (-radius / width).exp() >= LAPLACE_TAIL_MASS => {
                return Err(Error::InvalidKernel(format!(
                    "exponential-laplace radius {radius} leaves tail mass {:.3e} >= {LAPLACE_TAIL_MASS:e}",
                    (-radius / width).exp()
                )));
            }
            _ => {}
        }
        let radius = if family == KernelFamily::BumpMollifier { width } else { radius };

        let mut spec = KernelSpec { family, width, radius, normalization: 1.0, cumulative: Arc::from(Vec::new()) };
        let raw = spec.build_cumulative();
        // raw.last() is the mass of the half line; the kernel is even.
        let half = *raw.last().expect("table is non-empty");
        spec.normalization = 0.5 / half;
        spec.cumulative = raw.iter().map(|v| v * spec.normalization).collect::<Vec<_>>().into();
        Ok(spec)
    }

    pub fn truncated_gaussian(width: f64, radius: f64) -> Result<Self> {
        Self::new(KernelFamily::TruncatedGaussian, width, Some(radius))
    }

    pub fn bump(width: f64) -> Result<Self> {
        Self::new(KernelFamily::BumpMollifier, width, None)
    }

    pub fn laplace(width: f64) -> Result<Self> {
        Self::new(KernelFamily::ExponentialLaplace, width, None)
    }

    /// Overrides the normalization constant without rebuilding the mass
    /// table, producing a kernel whose mass is no longer one. Only meant for
    /// negative controls in the verification suite.
    #[doc(hidden)]
    pub fn with_scaled_normalization(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.normalization *= factor;
        out.cumulative = self.cumulative.iter().map(|v| v * factor).collect::<Vec<_>>().into();
        out
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn normalization_constant(&self) -> f64 {
        self.normalization
    }

    /// `‖J‖∞`, attained at the origin for every family.
    pub fn sup_norm(&self) -> f64 {
        self.eval(0.0)
    }

    fn raw(&self, u: f64) -> f64 {
        let u = u.abs();
        if u > self.radius {
            return 0.0;
        }
        let w = self.width;
        match self.family {
            KernelFamily::TruncatedGaussian => {
                let cut = (-(self.radius * self.radius) / (2.0 * w * w)).exp();
                ((-(u * u) / (2.0 * w * w)).exp() - cut).max(0.0)
            }
            KernelFamily::BumpMollifier => {
                let r = u / w;
                if r >= 1.0 {
                    0.0
                } else {
                    (-1.0 / (1.0 - r * r)).exp()
                }
            }
            KernelFamily::ExponentialLaplace => (-u / w).exp(),
        }
    }

    /// `J(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        self.normalization * self.raw(x)
    }

    fn panel_width(&self) -> f64 {
        self.radius / TABLE_PANELS as f64
    }

    fn gauss_legendre(&self, lo: f64, hi: f64) -> f64 {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        let mut acc = 0.0;
        for (node, weight) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
            acc += weight * (self.raw(mid - half * node) + self.raw(mid + half * node));
        }
        acc * half
    }

    fn build_cumulative(&self) -> Vec<f64> {
        let hp = self.panel_width();
        let mut table = Vec::with_capacity(TABLE_PANELS + 1);
        table.push(0.0);
        let mut acc = 0.0;
        for p in 0..TABLE_PANELS {
            acc += self.gauss_legendre(p as f64 * hp, (p + 1) as f64 * hp);
            table.push(acc);
        }
        table
    }

    /// `∫_0^u J` for `u ≥ 0`.
    fn half_mass(&self, u: f64) -> f64 {
        if u >= self.radius {
            return *self.cumulative.last().expect("table is non-empty");
        }
        let hp = self.panel_width();
        let p = ((u / hp) as usize).min(TABLE_PANELS - 1);
        let base = p as f64 * hp;
        self.cumulative[p] + self.normalization * self.gauss_legendre(base, u)
    }

    /// Cumulative distribution `∫_{-∞}^x J`.
    pub fn cdf(&self, x: f64) -> f64 {
        let total = 2.0 * *self.cumulative.last().expect("table is non-empty");
        if x >= 0.0 {
            0.5 * total + self.half_mass(x)
        } else {
            0.5 * total - self.half_mass(-x)
        }
    }

    /// `∫_z^∞ J`.
    pub fn upper_tail(&self, z: f64) -> f64 {
        if z >= self.radius {
            return 0.0;
        }
        self.cdf(-z)
    }

    /// `∫_{-∞}^z J`.
    pub fn lower_tail(&self, z: f64) -> f64 {
        if z <= -self.radius {
            return 0.0;
        }
        self.cdf(z)
    }

    /// `∫_a^b J`; infinite endpoints are allowed.
    pub fn mass(&self, a: f64, b: f64) -> Result<f64> {
        if a.is_nan() || b.is_nan() || a > b {
            return Err(Error::InvalidArgument(format!("kernel_mass needs a <= b, got ({a}, {b})")));
        }
        let a = a.clamp(-self.radius, self.radius);
        let b = b.clamp(-self.radius, self.radius);
        Ok((self.cdf(b) - self.cdf(a)).max(0.0))
    }
}

/// Uniform cell-centered grid over `(left, right)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    left: f64,
    right: f64,
    n: usize,
    dx: f64,
}

impl QuadratureGrid {
    pub fn new(left: f64, right: f64, n: usize) -> Result<Self> {
        if !(left.is_finite() && right.is_finite()) || right <= left {
            return Err(Error::InvalidGrid(format!("need left < right, got ({left}, {right})")));
        }
        if n == 0 {
            return Err(Error::InvalidGrid("grid needs at least one node".into()));
        }
        let dx = (right - left) / n as f64;
        Ok(QuadratureGrid { left, right, n, dx })
    }

    /// Symmetric grid over `(-halfwidth, halfwidth)`.
    pub fn symmetric(halfwidth: f64, n: usize) -> Result<Self> {
        Self::new(-halfwidth, halfwidth, n)
    }

    pub fn left(&self) -> f64 {
        self.left
    }

    pub fn right(&self) -> f64 {
        self.right
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn node(&self, i: usize) -> f64 {
        self.left + (i as f64 + 0.5) * self.dx
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Index of the node closest to `x`, clamped to the grid.
    pub fn nearest(&self, x: f64) -> usize {
        let raw = ((x - self.left) / self.dx - 0.5).round();
        raw.clamp(0.0, (self.n - 1) as f64) as usize
    }
}

/// Quadrature weights `J(kΔx)·Δx` for offsets `k = 0..=K`, the Toeplitz
/// generator of the discretized convolution.
///
/// The diagonal weight is set to `1 - 2·Σ_{k≥1} J(kΔx)Δx`, so the discrete
/// kernel on the full line carries exactly unit mass. For smooth families the
/// adjustment is at rounding level; for the exponential family it absorbs the
/// O(Δx²) excess the kink at the origin would otherwise add.
#[derive(Debug, Clone)]
pub struct KernelTable {
    dx: f64,
    weights: Vec<f64>,
    /// Weights past `weights.len()` on the full line, needed for the exterior
    /// mass of rows near the grid edges.
    far_weights: Vec<f64>,
}

impl KernelTable {
    pub fn new(kernel: &KernelSpec, grid: &QuadratureGrid) -> Result<Self> {
        let dx = grid.dx();
        if dx > 0.5 * kernel.width() {
            return Err(Error::UnderResolved { dx, width: kernel.width() });
        }
        let reach = (kernel.radius() / dx).floor() as usize;
        let mut full: Vec<f64> = (0..=reach).map(|k| kernel.eval(k as f64 * dx) * dx).collect();
        // compensated sum of the off-diagonal half line
        let mut sum = 0.0;
        let mut comp = 0.0;
        for w in full.iter().skip(1) {
            let t = sum + w;
            if sum.abs() >= w.abs() {
                comp += (sum - t) + w;
            } else {
                comp += (w - t) + sum;
            }
            sum = t;
        }
        let diagonal = 1.0 - 2.0 * (sum + comp);
        if diagonal <= 0.0 {
            return Err(Error::UnderResolved { dx, width: kernel.width() });
        }
        full[0] = diagonal;
        let keep = (grid.len().max(1) - 1).min(reach) + 1;
        let far_weights = full.split_off(keep);
        Ok(KernelTable { dx, weights: full, far_weights })
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Largest offset with a nonzero weight inside the grid.
    pub fn bandwidth(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn weight(&self, offset: usize) -> f64 {
        self.weights.get(offset).copied().unwrap_or(0.0)
    }

    /// `W[i][j]`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.weight(i.abs_diff(j))
    }

    fn row(&self, x: &[f64], i: usize) -> f64 {
        let n = x.len();
        let bw = self.bandwidth();
        let lo = i.saturating_sub(bw);
        let hi = (i + bw).min(n - 1);
        let mut acc = 0.0;
        for (j, xj) in x.iter().enumerate().take(hi + 1).skip(lo) {
            acc += self.weights[i.abs_diff(j)] * xj;
        }
        acc
    }

    /// `out = W·x` without materializing `W`.
    pub fn apply(&self, x: &[f64], out: &mut [f64], exec: Exec) {
        assert_eq!(x.len(), out.len(), "operand length mismatch");
        par::fill(exec, out, |i| self.row(x, i));
    }

    /// `W·x` restricted to rows `range` (other rows of `out` untouched).
    pub fn apply_rows(&self, x: &[f64], out: &mut [f64], range: std::ops::Range<usize>, exec: Exec) {
        let start = range.start;
        par::fill(exec, &mut out[range], |k| self.row(x, start + k));
    }

    /// Row sums of the `n × n` matrix.
    pub fn row_sums(&self, n: usize) -> Vec<f64> {
        let ones = vec![1.0; n];
        (0..n).map(|i| self.row(&ones, i)).collect()
    }

    /// Discrete mass of row `i` that falls left and right of an `n`-node grid.
    pub fn exterior_mass(&self, n: usize, i: usize) -> (f64, f64) {
        let total = self.weights.len() + self.far_weights.len();
        let weight = |k: usize| {
            if k < self.weights.len() {
                self.weights[k]
            } else {
                self.far_weights[k - self.weights.len()]
            }
        };
        // offsets reaching j < 0 are k > i; reaching j >= n are k > n-1-i
        let left: f64 = (i + 1..total).map(weight).sum();
        let right: f64 = (n - i..total).map(weight).sum();
        (left, right)
    }
}

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        DenseMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] = f(i, j);
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }
}

/// Materializes `W[i][j] = J(x_i - x_j)·Δx` (with the mass-consistent
/// diagonal of [`KernelTable`]).
pub fn kernel_matrix(kernel: &KernelSpec, grid: &QuadratureGrid) -> Result<DenseMatrix> {
    let table = KernelTable::new(kernel, grid)?;
    Ok(DenseMatrix::from_fn(grid.len(), |i, j| table.entry(i, j)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn families() -> Vec<KernelSpec> {
        vec![
            KernelSpec::truncated_gaussian(0.5, 3.0).unwrap(),
            KernelSpec::truncated_gaussian(1.0, 4.0).unwrap(),
            KernelSpec::bump(1.0).unwrap(),
            KernelSpec::bump(0.3).unwrap(),
            KernelSpec::laplace(0.5).unwrap(),
        ]
    }

    #[test]
    fn bump_vanishes_outside_support() {
        let k = KernelSpec::bump(1.0).unwrap();
        assert_eq!(k.eval(1.5), 0.0);
        assert_eq!(k.eval(-1.0), 0.0);
        assert_eq!(k.mass(1.0, f64::INFINITY).unwrap(), 0.0);
    }

    #[test]
    fn bump_peak_matches_trapezoid_normalization() {
        // independent oracle: fine trapezoid rule for ∫ exp(-1/(1-x²))
        let n = 2_000_000;
        let h = 2.0 / n as f64;
        let mut integral = 0.0;
        for i in 1..n {
            let x = -1.0 + i as f64 * h;
            integral += (-1.0 / (1.0 - x * x)).exp();
        }
        integral *= h;
        let k1 = 1.0 / integral;
        let k = KernelSpec::bump(1.0).unwrap();
        assert!((k.normalization_constant() - k1).abs() < 1e-10 * k1);
        assert!((k.eval(0.0) - k1 * (-1.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn symmetric_and_normalized() {
        for k in families() {
            for x in [0.0, 0.1, 0.37, 1.0, 2.5, 10.0] {
                assert_eq!(k.eval(x), k.eval(-x), "{:?}", k.family());
            }
            let total = k.mass(f64::NEG_INFINITY, f64::INFINITY).unwrap();
            assert!((total - 1.0).abs() <= 1e-10, "{} mass {total}", k.family());
            assert!(k.eval(0.0) > 0.0);
        }
    }

    #[test]
    fn gaussian_half_mass() {
        let k = KernelSpec::truncated_gaussian(0.5, 3.0).unwrap();
        let half = k.mass(f64::NEG_INFINITY, 0.0).unwrap();
        assert!((half - 0.5).abs() <= 1e-10);
    }

    #[test]
    fn mass_rejects_reversed_limits() {
        let k = KernelSpec::laplace(1.0).unwrap();
        assert!(k.mass(1.0, 0.0).is_err());
    }

    #[test]
    fn laplace_radius_respects_tail_bound() {
        let k = KernelSpec::laplace(0.7).unwrap();
        assert!((-k.radius() / k.width()).exp() < LAPLACE_TAIL_MASS);
        assert!(KernelSpec::new(KernelFamily::ExponentialLaplace, 1.0, Some(10.0)).is_err());
    }

    #[test]
    fn mass_matches_direct_quadrature() {
        // Simpson on J itself, independent of the cumulative table
        for k in families() {
            let (a, b) = (-0.3 * k.width(), 0.8 * k.width());
            let n = 20_000;
            let h = (b - a) / n as f64;
            let mut s = k.eval(a) + k.eval(b);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * k.eval(a + i as f64 * h);
            }
            s *= h / 3.0;
            let m = k.mass(a, b).unwrap();
            // laplace has a kink at 0 inside (a, b), Simpson is only O(h²) there
            assert!((m - s).abs() < 1e-9, "{}: {m} vs {s}", k.family());
        }
    }

    #[test]
    fn single_node_matrix() {
        let k = KernelSpec::truncated_gaussian(0.5, 3.0).unwrap();
        let grid = QuadratureGrid::symmetric(1e-3, 1).unwrap();
        let w = kernel_matrix(&k, &grid).unwrap();
        let expected = k.eval(0.0) * grid.dx();
        assert_eq!(w.dim(), 1);
        assert!((w.get(0, 0) - expected).abs() <= 1e-9 * expected);
    }

    #[test]
    fn under_resolved_grid_rejected() {
        let k = KernelSpec::truncated_gaussian(0.5, 3.0).unwrap();
        let grid = QuadratureGrid::symmetric(10.0, 10).unwrap();
        assert!(matches!(kernel_matrix(&k, &grid), Err(Error::UnderResolved { .. })));
    }

    #[test]
    fn matrix_symmetric_with_bounded_rows() {
        for k in families() {
            let grid = QuadratureGrid::new(-2.0, 3.0, 101).unwrap();
            let Ok(w) = kernel_matrix(&k, &grid) else { continue };
            assert!(w.is_symmetric(0.0));
            for i in 0..w.dim() {
                let s: f64 = w.row(i).iter().sum();
                assert!(s <= 1.0 + 1e-8, "{} row {i} sum {s}", k.family());
                assert!(w.get(i, i) > 0.0);
            }
        }
    }

    #[test]
    fn row_sums_converge_to_mass_second_order() {
        // oracle: kernel mass over the grid seen from the row node
        let k = KernelSpec::laplace(0.5).unwrap();
        let mut errors = Vec::new();
        for n in [200usize, 400, 800] {
            let grid = QuadratureGrid::new(-1.0, 1.0, n).unwrap();
            let table = KernelTable::new(&k, &grid).unwrap();
            let sums = table.row_sums(n);
            let i = n / 4;
            let x = grid.node(i);
            let exact = k.mass(grid.left() - x, grid.right() - x).unwrap();
            errors.push((sums[i] - exact).abs());
        }
        assert!(errors[0] / errors[1] >= 3.0, "{errors:?}");
        assert!(errors[1] / errors[2] >= 3.0, "{errors:?}");
    }

    #[test]
    fn exterior_mass_completes_rows() {
        let k = KernelSpec::truncated_gaussian(0.5, 3.0).unwrap();
        let grid = QuadratureGrid::new(0.0, 4.0, 80).unwrap();
        let table = KernelTable::new(&k, &grid).unwrap();
        let sums = table.row_sums(grid.len());
        for (i, s) in sums.iter().enumerate() {
            let (l, r) = table.exterior_mass(grid.len(), i);
            assert!((s + l + r - 1.0).abs() < 1e-13, "row {i}");
        }
    }

    #[test]
    fn table_apply_matches_dense() {
        let k = KernelSpec::bump(0.4).unwrap();
        let grid = QuadratureGrid::new(-1.0, 1.0, 64).unwrap();
        let table = KernelTable::new(&k, &grid).unwrap();
        let dense = kernel_matrix(&k, &grid).unwrap();
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin() + 1.5).collect();
        let mut y = vec![0.0; 64];
        table.apply(&x, &mut y, Exec::Sequential);
        let yd = dense.mul_vec(&x);
        for (a, b) in y.iter().zip(&yd) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
