use serde::{Deserialize, Serialize};

use super::{check_pair, coupling_program, AssumptionSet, QoteBounds};
use crate::error::{Error, Result};
use crate::lp::{solve_lp_with, LinearProgram, PivotRule, Sense};
use crate::marginals::QuantileCurve;

/// Conditional means of the effect that are ratios of linear functionals of
/// the coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Functional {
    /// `E[Δ | Δ < threshold]`.
    Cvar { threshold: f64 },
    /// `E[Y1 - Y0 | Y0 < threshold]`.
    DisadvantagedGain { threshold: f64 },
}

impl Functional {
    fn in_event(&self, a: f64, b: f64) -> bool {
        match *self {
            Functional::Cvar { threshold } => a - b < threshold,
            Functional::DisadvantagedGain { threshold } => b < threshold,
        }
    }
}

/// Range of a conditional-mean functional over admissible couplings on a
/// `k`-point grid.
///
/// Each endpoint maximizes or minimizes `Σ_E (a_i - b_j) c_ij / Σ_E c_ij`.
/// With `y = s c` and the denominator scaled to one, this becomes a linear
/// program in `(y, s)`. The event must keep positive mass under every
/// admissible coupling, which is checked first.
pub fn functional_bounds(
    q1: &QuantileCurve,
    q0: &QuantileCurve,
    assumption: AssumptionSet,
    functional: Functional,
    k: usize,
) -> Result<QoteBounds> {
    check_pair(q1, q0)?;
    let (q1, q0) = (q1.resample(k)?, q0.resample(k)?);
    let base = coupling_program(k, assumption)?;
    let n = k * k;
    let mut event = vec![0.0; n];
    let mut gain = vec![0.0; n];
    for i in 0..k {
        for j in 0..k {
            let (a, b) = (q1.values[i], q0.values[j]);
            if functional.in_event(a, b) {
                event[i * k + j] = 1.0;
                gain[i * k + j] = a - b;
            }
        }
    }

    let mass = solve_lp_with(&base.clone().with_objective(event.clone()), PivotRule::Dantzig)?;
    if !mass.is_optimal() {
        return Err(Error::LpFailure(format!("event mass program ended {:?}", mass.status)));
    }
    if mass.objective <= 1e-9 {
        return Err(Error::EventNotPositive);
    }

    // Variables: y (n entries) then the scale s.
    let mut lp = LinearProgram::new(n + 1, Sense::Minimize);
    let lift = |row: &[f64], rhs: f64| {
        let mut r = row.to_vec();
        r.push(-rhs);
        r
    };
    for (row, &b) in base.eq_rows.iter().zip(&base.eq_rhs) {
        lp.add_eq(lift(row, b), 0.0);
    }
    for (row, &b) in base.le_rows.iter().zip(&base.le_rhs) {
        lp.add_le(lift(row, b), 0.0);
    }
    let mut norm = event;
    norm.push(0.0);
    lp.add_eq(norm, 1.0);
    let mut objective = gain;
    objective.push(0.0);
    lp.objective = objective;

    let mut ends = [0.0; 2];
    for (slot, sense) in ends.iter_mut().zip([Sense::Minimize, Sense::Maximize]) {
        lp.sense = sense;
        let sol = solve_lp_with(&lp, PivotRule::Dantzig)?;
        if !sol.is_optimal() {
            return Err(Error::LpFailure(format!("fractional program ended {:?}", sol.status)));
        }
        *slot = sol.objective;
    }
    QoteBounds::new(ends[0], ends[1].max(ends[0]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(values: &[f64]) -> QuantileCurve {
        QuantileCurve::new(crate::marginals::midpoint_grid(values.len()), values.to_vec()).unwrap()
    }

    #[test]
    fn degenerate_marginals_collapse() {
        let q1 = curve(&[2.0; 4]);
        let q0 = curve(&[0.5; 4]);
        let b = functional_bounds(&q1, &q0, AssumptionSet::None, Functional::Cvar { threshold: 3.0 }, 4).unwrap();
        assert!((b.lower - 1.5).abs() < 1e-9 && (b.upper - 1.5).abs() < 1e-9);
    }

    #[test]
    fn empty_event_is_rejected() {
        let q1 = curve(&[0.0, 1.0, 2.0, 3.0]);
        let q0 = curve(&[0.0, 1.0, 2.0, 3.0]);
        let f = Functional::Cvar { threshold: -3.0 };
        assert_eq!(functional_bounds(&q1, &q0, AssumptionSet::None, f, 4), Err(Error::EventNotPositive));
        // Δ < 0 has zero mass under the comonotone coupling
        let f = Functional::Cvar { threshold: 0.0 };
        assert_eq!(functional_bounds(&q1, &q0, AssumptionSet::None, f, 4), Err(Error::EventNotPositive));
    }

    #[test]
    fn disadvantaged_gain_is_linear() {
        // conditioning on the lowest untreated rank fixes the denominator at 1/k
        let q1 = curve(&[0.0, 1.0, 2.0, 3.0]);
        let q0 = curve(&[0.0, 0.5, 1.0, 1.5]);
        let f = Functional::DisadvantagedGain { threshold: 0.25 };
        let b = functional_bounds(&q1, &q0, AssumptionSet::None, f, 4).unwrap();
        assert!((b.lower - 0.0).abs() < 1e-9 && (b.upper - 3.0).abs() < 1e-9, "{b:?}");
    }
}
