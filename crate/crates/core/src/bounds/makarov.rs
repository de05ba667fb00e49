use super::{check_pair, check_tau, QoteBounds};
use crate::error::{Error, Result};
use crate::marginals::QuantileCurve;

const EDGE_EPS: f64 = 1e-12;

/// Sharp bounds on the effect quantile from the marginals alone.
///
/// Each grid value carries the probability cell around its grid point. The
/// lower bound is the largest `Q1(u) - Q0(1 + u - τ)` and the upper bound the
/// smallest `Q1(u) - Q0(u - τ)`, with `u` running over cell edges and `Q0`
/// read right-continuously. On a `k`-point midpoint grid with
/// `m = ceil(τk)` this is
///
/// ```text
/// lower = max_{i <= m} a_i - b_{k-m+i}
/// upper = min_{i >= m} a_i - b_{i-m+1}
/// ```
///
/// which is attained by a coupling of the two discrete marginals.
pub fn makarov_bounds(q1: &QuantileCurve, q0: &QuantileCurve, tau: f64) -> Result<QoteBounds> {
    check_tau(tau)?;
    check_pair(q1, q0)?;
    let u = &q1.u_grid;
    if u[0] > tau || u[u.len() - 1] < tau {
        return Err(Error::GridTooCoarse(tau));
    }

    if q1.is_midpoint_grid() {
        let (lower, upper) = makarov_discrete(&q1.values, &q0.values, tau);
        return QoteBounds::new(lower, upper);
    }
    makarov_cells(q1, q0, tau)
}

/// Makarov bounds for two sorted samples of equal size `k`, each value
/// carrying mass `1/k`.
pub(crate) fn makarov_discrete(a: &[f64], b: &[f64], tau: f64) -> (f64, f64) {
    let k = a.len();
    let m = ((tau * k as f64 - 1e-9).ceil() as usize).clamp(1, k);
    let lower = (0..m).map(|i| a[i] - b[k - m + i]).fold(f64::NEG_INFINITY, f64::max);
    let upper = (m - 1..k).map(|i| a[i] - b[i + 1 - m]).fold(f64::INFINITY, f64::min);
    (lower, upper)
}

fn makarov_cells(q1: &QuantileCurve, q0: &QuantileCurve, tau: f64) -> Result<QoteBounds> {
    let k = q1.len();
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    for i in 0..k {
        let start = q1.cell_start(i);
        let end = if i + 1 < k { q1.cell_start(i + 1) } else { 1.0 };
        if start < tau - EDGE_EPS {
            lower = lower.max(q1.values[i] - q0.quantile_right(1.0 + start - tau));
        }
        if end >= tau - EDGE_EPS {
            upper = upper.min(q1.values[i] - q0.quantile_right(end - tau));
        }
    }
    QoteBounds::new(lower, upper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn normal_curve(k: usize, mu: f64, var: f64) -> QuantileCurve {
        let n = Normal::new(mu, var.sqrt()).unwrap();
        QuantileCurve::from_fn(k, |u| n.inverse_cdf(u)).unwrap()
    }

    #[test]
    fn point_masses_collapse() {
        let q1 = QuantileCurve::from_fn(20, |_| 4.0).unwrap();
        let q0 = QuantileCurve::from_fn(20, |_| 1.5).unwrap();
        for tau in [0.05, 0.25, 0.5, 0.95] {
            assert_eq!(makarov_bounds(&q1, &q0, tau).unwrap(), QoteBounds::point(2.5));
        }
    }

    #[test]
    fn coarse_grid_errors() {
        let q = QuantileCurve::from_fn(1, |u| u).unwrap();
        assert_eq!(makarov_bounds(&q, &q, 0.25), Err(Error::GridTooCoarse(0.25)));
    }

    #[test]
    fn cell_reading_matches_midpoint_formula() {
        let q1 = normal_curve(40, 4.0, 1.0);
        let q0 = normal_curve(40, 3.0, 25.0);
        for tau in [0.1, 0.25, 0.33, 0.5, 0.8] {
            assert_eq!(makarov_bounds(&q1, &q0, tau).unwrap(), makarov_cells(&q1, &q0, tau).unwrap(), "tau {tau}");
        }
    }

    #[test]
    fn irregular_grid() {
        // cells (0, 0.3], (0.3, 0.7], (0.7, 1)
        let q1 = QuantileCurve::new(vec![0.2, 0.4, 1.0 - 0.2], vec![0.0, 1.0, 2.0]).unwrap();
        let q0 = QuantileCurve::new(vec![0.2, 0.4, 1.0 - 0.2], vec![0.0, 0.0, 5.0]).unwrap();
        let b = makarov_bounds(&q1, &q0, 0.5).unwrap();
        assert_eq!(b, QoteBounds { lower: 0.0, upper: 1.0 });
    }

    #[test]
    fn shift_equivariance() {
        let q1 = normal_curve(30, 2.0, 4.0);
        let q0 = normal_curve(30, 0.0, 1.0);
        let b = makarov_bounds(&q1, &q0, 0.3).unwrap();
        let s = makarov_bounds(&q1.shifted(1.25), &q0, 0.3).unwrap();
        assert!((s.lower - b.lower - 1.25).abs() < 1e-12);
        assert!((s.upper - b.upper - 1.25).abs() < 1e-12);
    }
}
