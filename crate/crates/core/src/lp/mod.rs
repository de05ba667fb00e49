//! Dense linear programming.
//!
//! Programs are stated in the natural form
//!
//! ```text
//!   min / max  c'x
//!   s.t.       A_eq x  = b_eq
//!              A_le x <= b_le
//!              lower <= x <= upper
//! ```
//!
//! and solved by a two-phase tableau simplex. The default pivot rule is
//! Bland's rule; [`PivotRule::Dantzig`] picks the most negative reduced cost
//! and falls back to Bland after a run of degenerate pivots.

mod listing;
mod simplex;

pub use listing::write_listing;
pub use simplex::Workspace;

use crate::error::{Error, Result};

/// Feasibility tolerance used by the solver.
pub const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PivotRule {
    #[default]
    Bland,
    Dantzig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub sense: Sense,
    pub eq_rows: Vec<Vec<f64>>,
    pub eq_rhs: Vec<f64>,
    pub le_rows: Vec<Vec<f64>>,
    pub le_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Multipliers of the equality rows (empty unless optimal).
    pub eq_duals: Vec<f64>,
    /// Multipliers of the `<=` rows (empty unless optimal).
    pub le_duals: Vec<f64>,
    pub iterations: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

impl LinearProgram {
    /// An empty program over `n` variables with default bounds `[0, +inf)`.
    pub fn new(n: usize, sense: Sense) -> Self {
        Self {
            objective: vec![0.0; n],
            sense,
            eq_rows: Vec::new(),
            eq_rhs: Vec::new(),
            le_rows: Vec::new(),
            le_rhs: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn with_objective(mut self, c: Vec<f64>) -> Self {
        self.objective = c;
        self
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) {
        self.le_rows.push(row);
        self.le_rhs.push(rhs);
    }

    pub fn add_ge(&mut self, row: Vec<f64>, rhs: f64) {
        self.add_le(row.into_iter().map(|v| -v).collect(), -rhs);
    }

    pub fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        self.lower[j] = lower;
        self.upper[j] = upper;
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let bad = |msg: String| Err(Error::MalformedProgram(msg));
        if self.lower.len() != n || self.upper.len() != n {
            return bad("bound vectors do not match the number of variables".into());
        }
        if self.eq_rows.len() != self.eq_rhs.len() || self.le_rows.len() != self.le_rhs.len() {
            return bad("row count does not match right-hand side length".into());
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return bad("non-finite objective coefficient".into());
        }
        for (kind, rows, rhs) in [
            ("equality", &self.eq_rows, &self.eq_rhs),
            ("inequality", &self.le_rows, &self.le_rhs),
        ] {
            for (i, row) in rows.iter().enumerate() {
                if row.len() != n {
                    return bad(format!("{kind} row {i} has {} entries, expected {n}", row.len()));
                }
                if row.iter().any(|v| !v.is_finite()) || !rhs[i].is_finite() {
                    return bad(format!("{kind} row {i} has a non-finite coefficient"));
                }
            }
        }
        for j in 0..n {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return bad(format!("variable {j} has invalid bounds [{lo}, {hi}]"));
            }
            if lo > hi {
                return bad(format!("variable {j} has empty bounds [{lo}, {hi}]"));
            }
        }
        Ok(())
    }

    /// Largest violation of any constraint or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let dot = |row: &[f64]| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        let mut worst: f64 = 0.0;
        for (row, &b) in self.eq_rows.iter().zip(&self.eq_rhs) {
            worst = worst.max((dot(row) - b).abs());
        }
        for (row, &b) in self.le_rows.iter().zip(&self.le_rhs) {
            worst = worst.max(dot(row) - b);
        }
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        worst
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Lagrangian bound certified by the multipliers in `sol`.
    ///
    /// For a minimization this is a lower bound on the optimal value, for a
    /// maximization an upper bound. Multipliers of `<=` rows with the wrong
    /// sign are clipped to zero so the bound is valid for any input.
    pub fn dual_bound(&self, eq_duals: &[f64], le_duals: &[f64]) -> f64 {
        let flip = match self.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let n = self.num_vars();
        let le: Vec<f64> = le_duals.iter().map(|&y| (flip * y).min(0.0)).collect();
        let eq: Vec<f64> = eq_duals.iter().map(|&y| flip * y).collect();
        let mut reduced: Vec<f64> = self.objective.iter().map(|c| flip * c).collect();
        let mut bound = 0.0;
        for (i, row) in self.eq_rows.iter().enumerate() {
            bound += eq[i] * self.eq_rhs[i];
            for j in 0..n {
                reduced[j] -= eq[i] * row[j];
            }
        }
        for (i, row) in self.le_rows.iter().enumerate() {
            bound += le[i] * self.le_rhs[i];
            for j in 0..n {
                reduced[j] -= le[i] * row[j];
            }
        }
        for j in 0..n {
            let r = reduced[j];
            if r.abs() <= 1e-9 {
                continue;
            }
            let at = if r > 0.0 { self.lower[j] } else { self.upper[j] };
            if !at.is_finite() {
                return flip * f64::NEG_INFINITY;
            }
            bound += r * at;
        }
        flip * bound
    }
}

/// Solve `lp` from scratch with Bland's rule.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    solve_lp_with(lp, PivotRule::Bland)
}

pub fn solve_lp_with(lp: &LinearProgram, rule: PivotRule) -> Result<LpSolution> {
    let mut ws = match Workspace::new(lp, rule)? {
        Some(ws) => ws,
        None => {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: Vec::new(),
                objective: f64::NAN,
                eq_duals: Vec::new(),
                le_duals: Vec::new(),
                iterations: 0,
            })
        }
    };
    ws.optimize(&lp.objective, lp.sense)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_lower_bound() {
        let mut lp = LinearProgram::new(1, Sense::Minimize).with_objective(vec![1.0]);
        lp.add_ge(vec![1.0], 3.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 3.0).abs() < 1e-12);
        assert!((sol.objective - 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_transport() {
        // x = (c00, c01, c10, c11)
        let mut lp = LinearProgram::new(4, Sense::Minimize).with_objective(vec![0.0, 1.0, 1.0, 0.0]);
        lp.add_eq(vec![1.0, 1.0, 0.0, 0.0], 0.5);
        lp.add_eq(vec![0.0, 0.0, 1.0, 1.0], 0.5);
        lp.add_eq(vec![1.0, 0.0, 1.0, 0.0], 0.5);
        lp.add_eq(vec![0.0, 1.0, 0.0, 1.0], 0.5);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!(sol.objective.abs() < 1e-12);
        assert!((sol.x[0] - 0.5).abs() < 1e-12 && (sol.x[3] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(1, Sense::Minimize).with_objective(vec![1.0]);
        lp.add_le(vec![1.0], -1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);

        let lp = LinearProgram::new(1, Sense::Maximize).with_objective(vec![1.0]);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn free_and_boxed_variables() {
        // max x - y, x in [-2, 5], y free, x + y >= 1, y <= 4
        let mut lp = LinearProgram::new(2, Sense::Maximize).with_objective(vec![1.0, -1.0]);
        lp.set_bounds(0, -2.0, 5.0);
        lp.set_bounds(1, f64::NEG_INFINITY, 4.0);
        lp.add_ge(vec![1.0, 1.0], 1.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 5.0).abs() < 1e-9);
        assert!((sol.x[1] + 4.0).abs() < 1e-9);
        assert!((sol.objective - 9.0).abs() < 1e-9);
        let bound = lp.dual_bound(&sol.eq_duals, &sol.le_duals);
        assert!((bound - 9.0).abs() < 1e-6, "dual bound {bound}");
    }

    #[test]
    fn malformed_program_is_rejected() {
        let mut lp = LinearProgram::new(2, Sense::Minimize);
        lp.add_eq(vec![1.0], 1.0);
        assert!(matches!(solve_lp(&lp), Err(Error::MalformedProgram(_))));
        let mut lp = LinearProgram::new(1, Sense::Minimize);
        lp.objective[0] = f64::NAN;
        assert!(matches!(solve_lp(&lp), Err(Error::MalformedProgram(_))));
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        let mut lp = LinearProgram::new(2, Sense::Maximize).with_objective(vec![1.0, 2.0]);
        lp.add_eq(vec![1.0, 1.0], 1.0);
        lp.add_eq(vec![2.0, 2.0], 2.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_variable_program() {
        let lp = LinearProgram::new(0, Sense::Minimize);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_eq!(sol.objective, 0.0);
    }
}
