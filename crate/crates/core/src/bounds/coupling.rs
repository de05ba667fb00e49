use serde::{Deserialize, Serialize};

use super::makarov::makarov_discrete;
use super::{check_pair, check_tau, AssumptionSet, DeltaCdfBounds, QoteBounds};
use crate::error::{Error, Result};
use crate::lp::{LinearProgram, PivotRule, Sense, Workspace};
use crate::marginals::QuantileCurve;

/// Probability mass on a `k x k` grid of rank cells, row `i` indexing the
/// treated outcome and column `j` the untreated one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub k: usize,
    /// Row-major masses, `mass[i * k + j]`.
    pub mass: Vec<f64>,
}

impl Coupling {
    pub fn new(k: usize, mass: Vec<f64>) -> Result<Self> {
        if k == 0 || mass.len() != k * k {
            return Err(Error::InvalidArgument(format!("coupling needs {} masses", k * k)));
        }
        Ok(Self { k, mass })
    }

    pub fn independence(k: usize) -> Self {
        let w = 1.0 / (k * k) as f64;
        Self { k, mass: vec![w; k * k] }
    }

    pub fn comonotone(k: usize) -> Self {
        let mut mass = vec![0.0; k * k];
        for i in 0..k {
            mass[i * k + i] = 1.0 / k as f64;
        }
        Self { k, mass }
    }

    pub fn countermonotone(k: usize) -> Self {
        let mut mass = vec![0.0; k * k];
        for i in 0..k {
            mass[i * k + (k - 1 - i)] = 1.0 / k as f64;
        }
        Self { k, mass }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mass[i * self.k + j]
    }

    /// Nonnegative with uniform row and column sums, within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let k = self.k;
        let target = 1.0 / k as f64;
        if self.mass.iter().any(|&c| c < -tol) {
            return false;
        }
        (0..k).all(|i| ((0..k).map(|j| self.get(i, j)).sum::<f64>() - target).abs() <= tol)
            && (0..k).all(|j| ((0..k).map(|i| self.get(i, j)).sum::<f64>() - target).abs() <= tol)
    }

    /// Checks the constraints that `assumption` adds to a coupling.
    pub fn satisfies(&self, assumption: AssumptionSet, tol: f64) -> Result<bool> {
        if !self.is_valid(tol) {
            return Ok(false);
        }
        let lp = coupling_program(self.k, assumption)?;
        Ok(lp.max_violation(&self.mass) <= tol)
    }

    /// Distribution function of `a_i - b_j` at `t`.
    pub fn delta_cdf(&self, a: &[f64], b: &[f64], t: f64) -> f64 {
        let k = self.k;
        let mut s = 0.0;
        for i in 0..k {
            for j in 0..k {
                if a[i] - b[j] <= t {
                    s += self.mass[i * k + j];
                }
            }
        }
        s
    }
}

/// Constraint set over couplings of two `k`-point uniform marginals.
///
/// Variable `i * k + j` is the mass of cell `(i, j)`. The objective is left
/// at zero.
pub fn coupling_program(k: usize, assumption: AssumptionSet) -> Result<LinearProgram> {
    if k < 2 {
        return Err(Error::InvalidArgument("coupling grid needs k >= 2".into()));
    }
    let n = k * k;
    let idx = |i: usize, j: usize| i * k + j;
    let target = 1.0 / k as f64;
    let mut lp = LinearProgram::new(n, Sense::Minimize);
    for i in 0..k {
        let mut row = vec![0.0; n];
        for j in 0..k {
            row[idx(i, j)] = 1.0;
        }
        lp.add_eq(row, target);
    }
    // the last column sum is implied by the others
    for j in 0..k - 1 {
        let mut row = vec![0.0; n];
        for i in 0..k {
            row[idx(i, j)] = 1.0;
        }
        lp.add_eq(row, target);
    }
    match assumption {
        AssumptionSet::None => {}
        AssumptionSet::Si => {
            // Upper tails of each column grow from column j to j + 1, and
            // likewise for rows.
            for j in 0..k - 1 {
                for i in 1..k {
                    let mut row = vec![0.0; n];
                    for r in i..k {
                        row[idx(r, j)] = 1.0;
                        row[idx(r, j + 1)] = -1.0;
                    }
                    lp.add_le(row, 0.0);
                }
            }
            for i in 0..k - 1 {
                for j in 1..k {
                    let mut row = vec![0.0; n];
                    for c in j..k {
                        row[idx(i, c)] = 1.0;
                        row[idx(i + 1, c)] = -1.0;
                    }
                    lp.add_le(row, 0.0);
                }
            }
        }
        AssumptionSet::Pqd => {
            for i in 0..k - 1 {
                for j in 0..k - 1 {
                    let mut row = vec![0.0; n];
                    for r in 0..=i {
                        for c in 0..=j {
                            row[idx(r, c)] = 1.0;
                        }
                    }
                    lp.add_ge(row, ((i + 1) * (j + 1)) as f64 / (k * k) as f64);
                }
            }
        }
        other => return Err(Error::Unsupported(other.to_string())),
    }
    Ok(lp)
}

fn indicator(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    let mut c = Vec::with_capacity(a.len() * b.len());
    for &ai in a {
        for &bj in b {
            c.push(if ai - bj <= t { 1.0 } else { 0.0 });
        }
    }
    c
}

/// Extreme values of the effect CDF over one constraint set.
///
/// Holds a feasible tableau per direction and warm-starts every new
/// objective from the previous optimum.
#[derive(Debug, Clone)]
pub struct CouplingSolver {
    a: Vec<f64>,
    b: Vec<f64>,
    min_ws: Workspace,
    max_ws: Workspace,
}

impl CouplingSolver {
    /// Both curves are read at the `k`-point midpoint grid, whose values are
    /// taken as equally likely.
    pub fn new(q1: &QuantileCurve, q0: &QuantileCurve, assumption: AssumptionSet, k: usize) -> Result<Self> {
        check_pair(q1, q0)?;
        let (q1, q0) = (q1.resample(k)?, q0.resample(k)?);
        let lp = coupling_program(k, assumption)?;
        let ws = Workspace::new(&lp, PivotRule::Dantzig)?.ok_or_else(|| {
            Error::LpFailure(format!(
                "coupling constraints reported infeasible (k = {k}, assumption {assumption}); the independence coupling violates them by {:.3e}",
                lp.max_violation(&Coupling::independence(k).mass)
            ))
        })?;
        Ok(Self {
            a: q1.values.clone(),
            b: q0.values.clone(),
            min_ws: ws.clone(),
            max_ws: ws,
        })
    }

    fn solve(&mut self, t: f64, sense: Sense) -> Result<f64> {
        let c = indicator(&self.a, &self.b, t);
        let ws = match sense {
            Sense::Minimize => &mut self.min_ws,
            Sense::Maximize => &mut self.max_ws,
        };
        let sol = ws.optimize(&c, sense)?;
        if !sol.is_optimal() {
            return Err(Error::LpFailure(format!("coupling program at t = {t} ended {:?}", sol.status)));
        }
        Ok(sol.objective)
    }

    /// Smallest attainable `P[Δ <= t]`.
    pub fn cdf_min(&mut self, t: f64) -> Result<f64> {
        self.solve(t, Sense::Minimize)
    }

    /// Largest attainable `P[Δ <= t]`.
    pub fn cdf_max(&mut self, t: f64) -> Result<f64> {
        self.solve(t, Sense::Maximize)
    }

    /// Sorted distinct values of `a_i - b_j`, where the effect CDF can jump.
    pub fn candidates(&self) -> Vec<f64> {
        let mut d: Vec<f64> = self.a.iter().flat_map(|ai| self.b.iter().map(move |bj| ai - bj)).collect();
        d.sort_by(f64::total_cmp);
        d.dedup();
        d
    }

    /// Exact quantile bounds at `τ`, by bisection over the jump points.
    ///
    /// The search is bracketed by the Makarov bounds outside and the
    /// comonotone quantile inside, which every constraint set admits.
    pub fn qote(&mut self, tau: f64) -> Result<QoteBounds> {
        check_tau(tau)?;
        let d = self.candidates();
        let (mk_lo, mk_hi) = makarov_discrete(&self.a, &self.b, tau);
        let diag: Vec<f64> = self.a.iter().zip(&self.b).map(|(a, b)| a - b).collect();
        let ri = crate::marginals::empirical_quantile(&diag, tau)?;
        let range = |lo: f64, hi: f64| {
            let s = d.partition_point(|&v| v < lo);
            let e = d.partition_point(|&v| v <= hi);
            &d[s..e.max(s + 1).min(d.len())]
        };
        let lower = first_reaching(range(mk_lo, ri), tau, |t| self.cdf_max(t))?;
        let upper = first_reaching(range(ri, mk_hi), tau, |t| self.cdf_min(t))?;
        QoteBounds::new(lower, upper.max(lower))
    }
}

/// Smallest `d[s]` with `f(d[s]) >= τ` for a nondecreasing step function `f`
/// known to reach `τ` at the last point.
fn first_reaching(d: &[f64], tau: f64, mut f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let reaches = |v: f64| v >= tau - 1e-9;
    let (mut lo, mut hi) = (0usize, d.len() - 1);
    if lo == hi || reaches(f(d[lo])?) {
        return Ok(d[lo]);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if reaches(f(d[mid])?) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(d[hi])
}

/// Envelopes of the effect CDF on `t_grid` over `k x k` couplings of the two
/// curves that satisfy `assumption`.
pub fn coupling_lp_bounds(
    q1: &QuantileCurve,
    q0: &QuantileCurve,
    assumption: AssumptionSet,
    t_grid: &[f64],
    k: usize,
) -> Result<DeltaCdfBounds> {
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("t grid must be strictly increasing and nonempty".into()));
    }
    let solver = CouplingSolver::new(q1, q0, assumption, k)?;
    let (mut lo_solver, mut hi_solver) = (solver.clone(), solver);
    let (lower, upper) = rayon::join(
        || t_grid.iter().map(|&t| lo_solver.cdf_min(t)).collect::<Result<Vec<_>>>(),
        || t_grid.iter().map(|&t| hi_solver.cdf_max(t)).collect::<Result<Vec<_>>>(),
    );
    DeltaCdfBounds::from_raw(t_grid.to_vec(), lower?, upper?)
}

/// Exact quantile bounds at `τ` from the `k x k` coupling program.
pub fn qote_lp_bounds(
    q1: &QuantileCurve,
    q0: &QuantileCurve,
    assumption: AssumptionSet,
    tau: f64,
    k: usize,
) -> Result<QoteBounds> {
    CouplingSolver::new(q1, q0, assumption, k)?.qote(tau)
}
