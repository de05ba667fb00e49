//! Identified intervals for quantiles of individual treatment effects.
//!
//! Marginals enter as two [`QuantileCurve`]s on a common grid. The joint law
//! of the ranks is left free up to an [`AssumptionSet`], and the bounds are
//! the extreme values of the effect distribution over all admissible
//! couplings.

mod bernstein;
mod coupling;
mod functional;
mod makarov;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marginals::QuantileCurve;

pub use bernstein::{bernstein_extreme, bernstein_lp_bounds, BernsteinCoefs, BernsteinConfig};
pub use coupling::{coupling_lp_bounds, coupling_program, qote_lp_bounds, Coupling, CouplingSolver};
pub use functional::{functional_bounds, Functional};
pub use makarov::makarov_bounds;

/// Default grid size of the discretized coupling.
pub const DEFAULT_K: usize = 50;
/// Default number of points in the `t` grid.
pub const DEFAULT_TGRID: usize = 201;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssumptionSet {
    None,
    /// Stochastically increasing in both coordinates.
    Si,
    /// Positive quadrant dependence, `C(u, v) >= uv`.
    Pqd,
    /// Rank invariance (comonotone potential outcomes).
    Ri,
    /// Symmetric effect distribution, identifies the median only.
    Sy,
}

impl AssumptionSet {
    pub fn as_str(self) -> &'static str {
        match self {
            AssumptionSet::None => "none",
            AssumptionSet::Si => "si",
            AssumptionSet::Pqd => "pqd",
            AssumptionSet::Ri => "ri",
            AssumptionSet::Sy => "sy",
        }
    }

    /// Whether the tag is expressed as linear constraints on a coupling.
    pub fn is_linear(self) -> bool {
        matches!(self, AssumptionSet::None | AssumptionSet::Si | AssumptionSet::Pqd)
    }
}

impl fmt::Display for AssumptionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AssumptionSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(AssumptionSet::None),
            "si" => Ok(AssumptionSet::Si),
            "pqd" => Ok(AssumptionSet::Pqd),
            "ri" => Ok(AssumptionSet::Ri),
            "sy" => Ok(AssumptionSet::Sy),
            "sd" | "sd1" | "sd2" | "dc" | "ry" | "ry2" => Err(Error::Unsupported(s.to_string())),
            other => Err(Error::InvalidArgument(format!("unknown assumption `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QoteBounds {
    pub lower: f64,
    pub upper: f64,
}

impl QoteBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite()) {
            return Err(Error::InvalidArgument("bounds must be finite".into()));
        }
        if lower > upper {
            return Err(Error::Inconsistent(format!("lower bound {lower} exceeds upper bound {upper}")));
        }
        Ok(Self { lower, upper })
    }

    pub fn point(v: f64) -> Self {
        Self { lower: v, upper: v }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lower - tol && v <= self.upper + tol
    }

    /// `self` lies inside `other` up to `tol`.
    pub fn within(&self, other: &QoteBounds, tol: f64) -> bool {
        self.lower >= other.lower - tol && self.upper <= other.upper + tol
    }
}

/// Pointwise envelopes of the effect CDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaCdfBounds {
    pub t_grid: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DeltaCdfBounds {
    /// Builds envelopes from raw per-`t` optima, making both monotone in `t`
    /// and clipping them to `[0, 1]`.
    pub fn from_raw(t_grid: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if t_grid.len() != lower.len() || t_grid.len() != upper.len() || t_grid.is_empty() {
            return Err(Error::InvalidArgument("envelope lengths differ".into()));
        }
        let mut lower: Vec<f64> = lower.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let mut upper: Vec<f64> = upper.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        for i in (0..lower.len().saturating_sub(1)).rev() {
            lower[i] = lower[i].min(lower[i + 1]);
        }
        for i in 1..upper.len() {
            upper[i] = upper[i].max(upper[i - 1]);
        }
        for (l, u) in lower.iter_mut().zip(&upper) {
            *l = l.min(*u);
        }
        Ok(Self { t_grid, lower, upper })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Input(e.to_string());
        w.write_record(["t", "lower", "upper"]).map_err(io)?;
        for i in 0..self.t_grid.len() {
            w.write_record([self.t_grid[i].to_string(), self.lower[i].to_string(), self.upper[i].to_string()])
                .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Input(e.to_string()))
    }
}

/// Result of inverting CDF envelopes at one `τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inversion {
    pub bounds: QoteBounds,
    /// Set when an envelope never reaches `τ` on the grid, so an endpoint was
    /// replaced by the last grid value.
    pub truncated: bool,
}

fn generalized_inverse(t_grid: &[f64], cdf: &[f64], tau: f64) -> (f64, bool) {
    match cdf.iter().position(|&f| f >= tau - 1e-9) {
        Some(i) => (t_grid[i], false),
        None => (*t_grid.last().expect("nonempty grid"), true),
    }
}

/// Quantile bounds from CDF envelopes: the upper CDF yields the lower
/// quantile and vice versa.
pub fn invert_bounds(b: &DeltaCdfBounds, tau: f64) -> Result<Inversion> {
    check_tau(tau)?;
    if b.t_grid.is_empty() {
        return Err(Error::InvalidArgument("empty t grid".into()));
    }
    let (lower, t1) = generalized_inverse(&b.t_grid, &b.upper, tau);
    let (upper, t2) = generalized_inverse(&b.t_grid, &b.lower, tau);
    Ok(Inversion {
        bounds: QoteBounds { lower, upper: upper.max(lower) },
        truncated: t1 || t2,
    })
}

/// `n` evenly spaced points spanning every difference of grid values.
pub fn default_t_grid(q1: &QuantileCurve, q0: &QuantileCurve, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidArgument("t grid needs at least two points".into()));
    }
    let lo = q1.values[0] - q0.values[q0.len() - 1];
    let hi = q1.values[q1.len() - 1] - q0.values[0];
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}

/// Effect quantile under comonotone potential outcomes.
pub fn rank_invariance_qote(q1: &QuantileCurve, q0: &QuantileCurve, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    check_pair(q1, q0)?;
    let diffs: Vec<f64> = q1.values.iter().zip(&q0.values).map(|(a, b)| a - b).collect();
    crate::marginals::empirical_quantile(&diffs, tau)
}

/// The median effect under a symmetric effect distribution equals the
/// average effect.
pub fn symmetry_median_qote(ate: f64) -> f64 {
    ate
}

/// Bounds at one `τ` under any assumption tag.
///
/// Linear tags are solved exactly on a `k x k` coupling grid, with the
/// unconstrained case in closed form; rank invariance gives a point; symmetry
/// identifies only the median and needs `ate`.
pub fn qote_bounds(
    q1: &QuantileCurve,
    q0: &QuantileCurve,
    assumption: AssumptionSet,
    tau: f64,
    k: usize,
    ate: Option<f64>,
) -> Result<QoteBounds> {
    match assumption {
        AssumptionSet::None => {
            check_tau(tau)?;
            check_pair(q1, q0)?;
            let (a, b) = (q1.resample(k)?, q0.resample(k)?);
            let (lower, upper) = makarov::makarov_discrete(&a.values, &b.values, tau);
            QoteBounds::new(lower, upper)
        }
        AssumptionSet::Si | AssumptionSet::Pqd => qote_lp_bounds(q1, q0, assumption, tau, k),
        AssumptionSet::Ri => Ok(QoteBounds::point(rank_invariance_qote(q1, q0, tau)?)),
        AssumptionSet::Sy => {
            if (tau - 0.5).abs() > 1e-12 {
                return Err(Error::InvalidArgument("symmetry identifies only the median (tau = 0.5)".into()));
            }
            let ate = ate.ok_or_else(|| Error::InvalidArgument("symmetry needs the average effect".into()))?;
            Ok(QoteBounds::point(symmetry_median_qote(ate)))
        }
    }
}

/// JSON record for one covariate cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellBounds {
    pub x: Vec<f64>,
    pub tau: f64,
    pub assumption: AssumptionSet,
    pub lower: f64,
    pub upper: f64,
}

impl CellBounds {
    pub fn bounds(&self) -> QoteBounds {
        QoteBounds { lower: self.lower, upper: self.upper }
    }
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("tau {tau} is outside (0, 1)")))
    }
}

pub(crate) fn check_pair(q1: &QuantileCurve, q0: &QuantileCurve) -> Result<()> {
    if q1.u_grid.len() != q0.u_grid.len() || q1.u_grid.iter().zip(&q0.u_grid).any(|(a, b)| (a - b).abs() > 1e-12) {
        return Err(Error::InvalidArgument("quantile curves must share one grid".into()));
    }
    Ok(())
}
