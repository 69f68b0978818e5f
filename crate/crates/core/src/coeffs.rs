//! Epidemiological coefficients and the threshold profile `a(x)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed-form spatial field. All kinds are Lipschitz and bounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SpatialFunction {
    Constant {
        level: f64,
    },
    /// `base + amplitude·exp(-((x - center)/width)²)`.
    GaussianBump {
        #[serde(default)]
        base: f64,
        amplitude: f64,
        center: f64,
        width: f64,
    },
    /// Linear interpolation between `(x, y)` knots, constant beyond the ends.
    PiecewiseLinear {
        knots: Vec<(f64, f64)>,
    },
}

impl SpatialFunction {
    pub fn constant(level: f64) -> Self {
        SpatialFunction::Constant { level }
    }

    /// Tent of height `peak` vanishing at `±halfwidth`.
    pub fn tent(halfwidth: f64, peak: f64) -> Self {
        SpatialFunction::PiecewiseLinear { knots: vec![(-halfwidth, 0.0), (0.0, peak), (halfwidth, 0.0)] }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModel(msg));
        match self {
            SpatialFunction::Constant { level } if !level.is_finite() => bad(format!("non-finite level {level}")),
            SpatialFunction::GaussianBump { base, amplitude, center, width } => {
                if ![base, amplitude, center, width].iter().all(|v| v.is_finite()) {
                    bad("gaussian-bump parameters must be finite".into())
                } else if *width <= 0.0 {
                    bad(format!("gaussian-bump width must be positive, got {width}"))
                } else {
                    Ok(())
                }
            }
            SpatialFunction::PiecewiseLinear { knots } => {
                if knots.is_empty() {
                    return bad("piecewise-linear needs at least one knot".into());
                }
                if knots.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
                    return bad("piecewise-linear knots must be finite".into());
                }
                if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return bad("piecewise-linear knots must be strictly increasing in x".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            SpatialFunction::Constant { level } => *level,
            SpatialFunction::GaussianBump { base, amplitude, center, width } => {
                let z = (x - center) / width;
                base + amplitude * (-z * z).exp()
            }
            SpatialFunction::PiecewiseLinear { knots } => {
                let first = knots[0];
                let last = knots[knots.len() - 1];
                if x <= first.0 {
                    return first.1;
                }
                if x >= last.0 {
                    return last.1;
                }
                let k = knots.partition_point(|(kx, _)| *kx <= x);
                let (x0, y0) = knots[k - 1];
                let (x1, y1) = knots[k];
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
        }
    }

    /// Pointwise multiple `factor·f`.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            SpatialFunction::Constant { level } => SpatialFunction::Constant { level: level * factor },
            SpatialFunction::GaussianBump { base, amplitude, center, width } => SpatialFunction::GaussianBump {
                base: base * factor,
                amplitude: amplitude * factor,
                center: *center,
                width: *width,
            },
            SpatialFunction::PiecewiseLinear { knots } => {
                SpatialFunction::PiecewiseLinear { knots: knots.iter().map(|(x, y)| (*x, y * factor)).collect() }
            }
        }
    }

    /// `x ↦ f(x / factor)`, stretching the abscissa about the origin.
    pub fn stretched(&self, factor: f64) -> Self {
        match self {
            SpatialFunction::Constant { .. } => self.clone(),
            SpatialFunction::GaussianBump { base, amplitude, center, width } => SpatialFunction::GaussianBump {
                base: *base,
                amplitude: *amplitude,
                center: center * factor,
                width: width * factor,
            },
            SpatialFunction::PiecewiseLinear { knots } => {
                SpatialFunction::PiecewiseLinear { knots: knots.iter().map(|(x, y)| (x * factor, *y)).collect() }
            }
        }
    }

    /// Exact infimum over the real line.
    pub fn infimum(&self) -> f64 {
        match self {
            SpatialFunction::Constant { level } => *level,
            SpatialFunction::GaussianBump { base, amplitude, .. } => base.min(base + amplitude),
            SpatialFunction::PiecewiseLinear { knots } => knots.iter().map(|k| k.1).fold(f64::INFINITY, f64::min),
        }
    }

    /// Exact supremum over the real line.
    pub fn supremum(&self) -> f64 {
        match self {
            SpatialFunction::Constant { level } => *level,
            SpatialFunction::GaussianBump { base, amplitude, .. } => base.max(base + amplitude),
            SpatialFunction::PiecewiseLinear { knots } => knots.iter().map(|k| k.1).fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Values at the two ends of the real line.
    pub fn far_field(&self) -> (f64, f64) {
        match self {
            SpatialFunction::Constant { level } => (*level, *level),
            SpatialFunction::GaussianBump { base, .. } => (*base, *base),
            SpatialFunction::PiecewiseLinear { knots } => (knots[0].1, knots[knots.len() - 1].1),
        }
    }

    /// Abscissae where the field changes character (knots, bump center).
    fn landmarks(&self) -> Vec<f64> {
        match self {
            SpatialFunction::Constant { .. } => Vec::new(),
            SpatialFunction::GaussianBump { center, width, .. } => {
                (-40..=40).map(|k| center + 0.125 * k as f64 * width).collect()
            }
            SpatialFunction::PiecewiseLinear { knots } => knots.iter().map(|k| k.0).collect(),
        }
    }
}

/// Coefficients of the S–I system.
///
/// Contact rate `β(x, I) = β0(x)·e^{-m(x)}·(1 + c·I/(1 + I))`, recovery rate
/// `γ(x, I) = γ0(x) + (γ1(x) - γ0(x))·b(x)/(b(x) + I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientModel {
    pub sigma: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub beta0: SpatialFunction,
    #[serde(default = "zero_field")]
    pub media: SpatialFunction,
    #[serde(default = "unit_field")]
    pub beds: SpatialFunction,
    pub gamma0: SpatialFunction,
    pub gamma1: SpatialFunction,
    #[serde(rename = "beta_I_gain", default)]
    pub beta_i_gain: f64,
}

fn zero_field() -> SpatialFunction {
    SpatialFunction::constant(0.0)
}

fn unit_field() -> SpatialFunction {
    SpatialFunction::constant(1.0)
}

impl CoefficientModel {
    /// Spatially homogeneous model with no media attenuation, no
    /// I-dependence in the contact rate, and `γ ≡ gamma`.
    pub fn constant(sigma: f64, mu1: f64, mu2: f64, beta0: f64, gamma: f64) -> Self {
        CoefficientModel {
            sigma,
            mu1,
            mu2,
            beta0: SpatialFunction::constant(beta0),
            media: SpatialFunction::constant(0.0),
            beds: SpatialFunction::constant(1.0),
            gamma0: SpatialFunction::constant(gamma),
            gamma1: SpatialFunction::constant(gamma),
            beta_i_gain: 0.0,
        }
    }

    /// Checks positivity and ordering constraints. Every violation is
    /// reported, not only the first.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [("sigma", self.sigma), ("mu1", self.mu1), ("mu2", self.mu2)] {
            if !(v.is_finite() && v > 0.0) {
                out.push(format!("{name} must be positive (coefficient of the S-I system), got {v}"));
            }
        }
        if !(self.beta_i_gain.is_finite() && self.beta_i_gain >= 0.0) {
            out.push(format!("beta_I_gain must be nonnegative, got {}", self.beta_i_gain));
        }
        let fields = [
            ("beta0", &self.beta0),
            ("media", &self.media),
            ("beds", &self.beds),
            ("gamma0", &self.gamma0),
            ("gamma1", &self.gamma1),
        ];
        for (name, f) in fields {
            if let Err(e) = f.validate() {
                out.push(format!("{name}: {e}"));
                continue;
            }
            if f.infimum() < 0.0 {
                out.push(format!("{name} must be nonnegative everywhere, infimum is {}", f.infimum()));
            }
        }
        if self.gamma0.validate().is_ok() && self.gamma1.validate().is_ok() {
            let mut xs = self.gamma0.landmarks();
            xs.extend(self.gamma1.landmarks());
            xs.extend([-1e6, 1e6]);
            if let Some(x) = xs.iter().find(|&&x| self.gamma0.eval(x) > self.gamma1.eval(x) + 1e-12) {
                out.push(format!("gamma0 must not exceed gamma1 (violated at x = {x})"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidModel(v.join("; ")))
        }
    }

    /// Disease-free susceptible level `σ/μ1`.
    pub fn disease_free_level(&self) -> f64 {
        self.sigma / self.mu1
    }

    /// Same model with the media field multiplied by `factor`.
    pub fn with_media_scale(&self, factor: f64) -> Self {
        CoefficientModel { media: self.media.scaled(factor), ..self.clone() }
    }

    /// Same model with the bed field multiplied by `factor`.
    pub fn with_bed_scale(&self, factor: f64) -> Self {
        CoefficientModel { beds: self.beds.scaled(factor), ..self.clone() }
    }

    /// Upper bound of `β` over all `x` and `I`.
    pub fn beta_sup(&self) -> f64 {
        self.beta0.supremum().max(0.0) * (1.0 + self.beta_i_gain)
    }

    /// Upper bound of `γ` over all `x` and `I`.
    pub fn gamma_sup(&self) -> f64 {
        self.gamma1.supremum().max(self.gamma0.supremum()).max(0.0)
    }

    pub fn beta(&self, x: f64, infected: f64) -> Result<f64> {
        check_density(infected)?;
        Ok(beta_from(self.beta0.eval(x) * (-self.media.eval(x)).exp(), self.beta_i_gain, infected))
    }

    pub fn gamma(&self, x: f64, infected: f64) -> Result<f64> {
        check_density(infected)?;
        Ok(gamma_from(self.gamma0.eval(x), self.gamma1.eval(x), self.beds.eval(x), infected))
    }

    /// `a(x) = σ·β(x, 0)/μ1 - μ2 - γ(x, 0)` at each node.
    pub fn a_profile(&self, nodes: &[f64]) -> Vec<f64> {
        nodes
            .iter()
            .map(|&x| {
                let beta = beta_from(self.beta0.eval(x) * (-self.media.eval(x)).exp(), self.beta_i_gain, 0.0);
                let gamma = gamma_from(self.gamma0.eval(x), self.gamma1.eval(x), self.beds.eval(x), 0.0);
                self.sigma * beta / self.mu1 - self.mu2 - gamma
            })
            .collect()
    }

    /// Per-node constants the time stepper needs repeatedly.
    pub(crate) fn node_fields(&self, nodes: &[f64]) -> NodeFields {
        NodeFields {
            attenuated_beta: nodes.iter().map(|&x| self.beta0.eval(x) * (-self.media.eval(x)).exp()).collect(),
            gamma0: nodes.iter().map(|&x| self.gamma0.eval(x)).collect(),
            gamma1: nodes.iter().map(|&x| self.gamma1.eval(x)).collect(),
            beds: nodes.iter().map(|&x| self.beds.eval(x)).collect(),
            gain: self.beta_i_gain,
        }
    }
}

fn check_density(infected: f64) -> Result<()> {
    if infected.is_nan() || infected < 0.0 {
        Err(Error::InvalidArgument(format!("infected density must be nonnegative, got {infected}")))
    } else {
        Ok(())
    }
}

#[inline]
pub(crate) fn beta_from(attenuated: f64, gain: f64, infected: f64) -> f64 {
    attenuated * (1.0 + gain * infected / (1.0 + infected))
}

#[inline]
pub(crate) fn gamma_from(gamma0: f64, gamma1: f64, beds: f64, infected: f64) -> f64 {
    // b = 0: γ0 when I > 0, γ1 at I = 0 (limits along each axis)
    let share = if beds > 0.0 {
        beds / (beds + infected)
    } else if infected > 0.0 {
        0.0
    } else {
        1.0
    };
    gamma0 + (gamma1 - gamma0) * share
}

#[derive(Debug, Clone)]
pub(crate) struct NodeFields {
    pub attenuated_beta: Vec<f64>,
    pub gamma0: Vec<f64>,
    pub gamma1: Vec<f64>,
    pub beds: Vec<f64>,
    pub gain: f64,
}

impl NodeFields {
    #[inline]
    pub fn beta(&self, i: usize, infected: f64) -> f64 {
        beta_from(self.attenuated_beta[i], self.gain, infected)
    }

    #[inline]
    pub fn gamma(&self, i: usize, infected: f64) -> f64 {
        gamma_from(self.gamma0[i], self.gamma1[i], self.beds[i], infected)
    }
}
