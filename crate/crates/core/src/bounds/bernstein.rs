use serde::{Deserialize, Serialize};

use super::{check_pair, AssumptionSet, DeltaCdfBounds};
use crate::error::{Error, Result};
use crate::lp::{LinearProgram, PivotRule, Sense, Workspace};
use crate::marginals::QuantileCurve;

/// Coefficients of a Bernstein copula on the grid `(v1/m1, v2/m2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernsteinCoefs {
    pub m1: usize,
    pub m2: usize,
    /// Row-major `(m1 + 1) x (m2 + 1)` values.
    pub beta: Vec<f64>,
}

impl BernsteinCoefs {
    /// Coefficients of the independence copula, `β(v1, v2) = v1 v2 / (m1 m2)`.
    pub fn independence(m1: usize, m2: usize) -> Self {
        let beta = (0..=m1)
            .flat_map(|i| (0..=m2).map(move |j| (i * j) as f64 / (m1 * m2) as f64))
            .collect();
        Self { m1, m2, beta }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.beta[i * (self.m2 + 1) + j]
    }

    /// Boundary conditions and nonnegative rectangle masses, within `tol`.
    pub fn is_copula(&self, tol: f64) -> bool {
        let (m1, m2) = (self.m1, self.m2);
        let edge = (0..=m2).all(|j| {
            self.get(0, j).abs() <= tol && (self.get(m1, j) - j as f64 / m2 as f64).abs() <= tol
        }) && (0..=m1).all(|i| {
            self.get(i, 0).abs() <= tol && (self.get(i, m2) - i as f64 / m1 as f64).abs() <= tol
        });
        edge && (0..m1).all(|i| {
            (0..m2).all(|j| self.get(i + 1, j + 1) - self.get(i + 1, j) - self.get(i, j + 1) + self.get(i, j) >= -tol)
        })
    }

    /// Copula value at `(u1, u2)`.
    pub fn eval(&self, u1: f64, u2: f64) -> f64 {
        let p1 = basis(self.m1, u1);
        let p2 = basis(self.m2, u2);
        let mut s = 0.0;
        for i in 0..=self.m1 {
            for j in 0..=self.m2 {
                s += self.get(i, j) * p1[i] * p2[j];
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BernsteinConfig {
    pub m1: usize,
    pub m2: usize,
    /// Cells per axis of the quadrature rule.
    pub quad_points: usize,
}

impl Default for BernsteinConfig {
    fn default() -> Self {
        Self { m1: 15, m2: 15, quad_points: 400 }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Bernstein basis `P_v^m(u)` for `v = 0..=m`.
fn basis(m: usize, u: f64) -> Vec<f64> {
    (0..=m)
        .map(|v| binomial(m, v) * u.powi(v as i32) * (1.0 - u).powi((m - v) as i32))
        .collect()
}

/// Derivatives of the degree-`m` basis at `u`.
#[cfg(test)]
fn basis_derivative(m: usize, u: f64) -> Vec<f64> {
    let lower = basis(m - 1, u);
    (0..=m)
        .map(|v| {
            let left = if v >= 1 { lower[v - 1] } else { 0.0 };
            let right = if v < m { lower[v] } else { 0.0 };
            m as f64 * (left - right)
        })
        .collect()
}

/// Program over the interior coefficients, variable `(i - 1) * (m2 - 1) + (j - 1)`.
struct Layout {
    m1: usize,
    m2: usize,
}

enum Coef {
    Var(usize),
    Fixed(f64),
}

impl Layout {
    fn n(&self) -> usize {
        (self.m1 - 1) * (self.m2 - 1)
    }

    fn at(&self, i: usize, j: usize) -> Coef {
        let (m1, m2) = (self.m1, self.m2);
        if i == 0 || j == 0 {
            Coef::Fixed(0.0)
        } else if i == m1 {
            Coef::Fixed(j as f64 / m2 as f64)
        } else if j == m2 {
            Coef::Fixed(i as f64 / m1 as f64)
        } else {
            Coef::Var((i - 1) * (m2 - 1) + (j - 1))
        }
    }

    /// Adds `Σ w β(i, j) <= rhs`, folding fixed coefficients into the bound.
    /// Rows without free coefficients are dropped when they hold.
    fn add_le(&self, lp: &mut LinearProgram, terms: &[(usize, usize, f64)], rhs: f64) -> Result<()> {
        let mut row = vec![0.0; self.n()];
        let mut b = rhs;
        let mut free = false;
        for &(i, j, w) in terms {
            match self.at(i, j) {
                Coef::Var(v) => {
                    row[v] += w;
                    free = true;
                }
                Coef::Fixed(val) => b -= w * val,
            }
        }
        if free {
            lp.add_le(row, b);
        } else if b < -1e-12 {
            return Err(Error::LpFailure("Bernstein boundary violates a fixed constraint".into()));
        }
        Ok(())
    }
}

fn bernstein_program(m1: usize, m2: usize, assumption: AssumptionSet) -> Result<LinearProgram> {
    let layout = Layout { m1, m2 };
    let mut lp = LinearProgram::new(layout.n(), Sense::Minimize);
    for i in 0..m1 {
        for j in 0..m2 {
            layout.add_le(
                &mut lp,
                &[(i + 1, j + 1, -1.0), (i + 1, j, 1.0), (i, j + 1, 1.0), (i, j, -1.0)],
                0.0,
            )?;
        }
    }
    match assumption {
        AssumptionSet::None => {}
        AssumptionSet::Si => {
            for i in 0..=m1 {
                for j in 0..m2.saturating_sub(1) {
                    layout.add_le(&mut lp, &[(i, j, 1.0), (i, j + 1, -2.0), (i, j + 2, 1.0)], 0.0)?;
                }
            }
            for j in 0..=m2 {
                for i in 0..m1.saturating_sub(1) {
                    layout.add_le(&mut lp, &[(i, j, 1.0), (i + 1, j, -2.0), (i + 2, j, 1.0)], 0.0)?;
                }
            }
        }
        AssumptionSet::Pqd => {
            for i in 1..m1 {
                for j in 1..m2 {
                    layout.add_le(&mut lp, &[(i, j, -1.0)], -((i * j) as f64) / (m1 * m2) as f64)?;
                }
            }
        }
        other => return Err(Error::Unsupported(other.to_string())),
    }
    Ok(lp)
}

/// Weights `W(v1, v2) = ∫∫ 1{q1(u1) - q0(u2) <= t} dP_{v1}(u1) dP_{v2}(u2)`,
/// row-major over `(m1 + 1) x (m2 + 1)`.
///
/// The unit square is cut into `q x q` cells. The indicator is read at each
/// cell center and the basis increments over the cell are exact, so the rule
/// is exact whenever the quantile steps fall on cell edges.
struct Weights {
    m1: usize,
    m2: usize,
    q: usize,
    y1: Vec<f64>,
    y0: Vec<f64>,
    d1: Vec<Vec<f64>>,
    /// Suffix sums of the increments along the second axis.
    d0_tail: Vec<Vec<f64>>,
}

impl Weights {
    fn new(q1: &QuantileCurve, q0: &QuantileCurve, m1: usize, m2: usize, q: usize) -> Self {
        let nodes: Vec<f64> = (0..q).map(|a| (a as f64 + 0.5) / q as f64).collect();
        let y1 = nodes.iter().map(|&u| q1.quantile_at(u)).collect();
        let y0 = nodes.iter().map(|&u| q0.quantile_at(u)).collect();
        let increments = |m: usize| -> Vec<Vec<f64>> {
            let edges: Vec<Vec<f64>> = (0..=q).map(|a| basis(m, a as f64 / q as f64)).collect();
            edges.windows(2).map(|e| e[1].iter().zip(&e[0]).map(|(hi, lo)| hi - lo).collect()).collect()
        };
        let d1 = increments(m1);
        let d0 = increments(m2);
        let mut d0_tail = vec![vec![0.0; m2 + 1]; q + 1];
        for b in (0..q).rev() {
            for v in 0..=m2 {
                d0_tail[b][v] = d0_tail[b + 1][v] + d0[b][v];
            }
        }
        Self { m1, m2, q, y1, y0, d1, d0_tail }
    }

    fn at(&self, t: f64) -> Vec<f64> {
        let (m1, m2) = (self.m1, self.m2);
        let mut w = vec![0.0; (m1 + 1) * (m2 + 1)];
        for a in 0..self.q {
            // q0 is nondecreasing, so the admissible u2 nodes form a suffix
            let first = self.y0.partition_point(|&y| y < self.y1[a] - t);
            let tail = &self.d0_tail[first];
            for v1 in 0..=m1 {
                let f = self.d1[a][v1];
                if f == 0.0 {
                    continue;
                }
                for v2 in 0..=m2 {
                    w[v1 * (m2 + 1) + v2] += f * tail[v2];
                }
            }
        }
        w
    }
}

/// Envelopes of the effect CDF over Bernstein copulas of degree
/// `(m1, m2)` that satisfy `assumption`.
///
/// Stochastic increasingness is imposed as concavity of the coefficients
/// along each axis, which makes the copula concave in each argument.
/// Positive quadrant dependence is imposed as `β >= v1 v2 / (m1 m2)`.
pub fn bernstein_lp_bounds(
    q1: &QuantileCurve,
    q0: &QuantileCurve,
    assumption: AssumptionSet,
    t_grid: &[f64],
    cfg: BernsteinConfig,
) -> Result<DeltaCdfBounds> {
    check_pair(q1, q0)?;
    let BernsteinConfig { m1, m2, quad_points } = cfg;
    if m1 == 0 || m2 == 0 || quad_points == 0 {
        return Err(Error::InvalidArgument("Bernstein degrees and quadrature size must be positive".into()));
    }
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("t grid must be strictly increasing and nonempty".into()));
    }
    let layout = Layout { m1, m2 };
    let lp = bernstein_program(m1, m2, assumption)?;
    let weights = Weights::new(q1, q0, m1, m2, quad_points);
    let ws = Workspace::new(&lp, PivotRule::Dantzig)?
        .ok_or_else(|| Error::LpFailure(format!("Bernstein program infeasible (m1 = {m1}, m2 = {m2})")))?;
    let (mut min_ws, mut max_ws) = (ws.clone(), ws);

    let mut lower = Vec::with_capacity(t_grid.len());
    let mut upper = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let w = weights.at(t);
        let mut c = vec![0.0; layout.n()];
        let mut fixed = 0.0;
        for i in 0..=m1 {
            for j in 0..=m2 {
                match layout.at(i, j) {
                    Coef::Var(v) => c[v] = w[i * (m2 + 1) + j],
                    Coef::Fixed(val) => fixed += val * w[i * (m2 + 1) + j],
                }
            }
        }
        for (ws, sense, out) in [
            (&mut min_ws, Sense::Minimize, &mut lower),
            (&mut max_ws, Sense::Maximize, &mut upper),
        ] {
            let sol = ws.optimize(&c, sense)?;
            if !sol.is_optimal() {
                return Err(Error::LpFailure(format!("Bernstein program at t = {t} ended {:?}", sol.status)));
            }
            out.push(fixed + sol.objective);
        }
    }
    DeltaCdfBounds::from_raw(t_grid.to_vec(), lower, upper)
}

/// Optimal coefficients for one `t`, for inspection.
pub fn bernstein_extreme(
    q1: &QuantileCurve,
    q0: &QuantileCurve,
    assumption: AssumptionSet,
    t: f64,
    cfg: BernsteinConfig,
    sense: Sense,
) -> Result<BernsteinCoefs> {
    let BernsteinConfig { m1, m2, quad_points } = cfg;
    let layout = Layout { m1, m2 };
    let mut lp = bernstein_program(m1, m2, assumption)?;
    let w = Weights::new(q1, q0, m1, m2, quad_points).at(t);
    for i in 1..m1 {
        for j in 1..m2 {
            if let Coef::Var(v) = layout.at(i, j) {
                lp.objective[v] = w[i * (m2 + 1) + j];
            }
        }
    }
    lp.sense = sense;
    let sol = crate::lp::solve_lp_with(&lp, PivotRule::Dantzig)?;
    if !sol.is_optimal() {
        return Err(Error::LpFailure(format!("Bernstein program ended {:?}", sol.status)));
    }
    let beta = (0..=m1)
        .flat_map(|i| (0..=m2).map(move |j| (i, j)))
        .map(|(i, j)| match layout.at(i, j) {
            Coef::Var(v) => sol.x[v],
            Coef::Fixed(val) => val,
        })
        .collect();
    Ok(BernsteinCoefs { m1, m2, beta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn curve(k: usize, f: impl Fn(f64) -> f64) -> QuantileCurve {
        QuantileCurve::from_fn(k, f).unwrap()
    }

    #[test]
    fn basis_sums_to_one_and_derivative_integrates() {
        for m in 1..6 {
            let p = basis(m, 0.37);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            let d = basis_derivative(m, 0.37);
            assert!(d.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn independence_coefficients_reproduce_product() {
        let b = BernsteinCoefs::independence(4, 3);
        assert!(b.is_copula(1e-12));
        assert!((b.eval(0.3, 0.8) - 0.24).abs() < 1e-12);
    }

    #[test]
    fn si_envelopes_track_coupling_program() {
        use statrs::distribution::{ContinuousCDF, Normal};
        let (n1, n0) = (Normal::new(4.0, 1.0).unwrap(), Normal::new(3.0, 5.0).unwrap());
        let q1 = curve(15, |u| n1.inverse_cdf(u));
        let q0 = curve(15, |u| n0.inverse_cdf(u));
        let t = crate::bounds::default_t_grid(&q1, &q0, 41).unwrap();
        let c = crate::bounds::coupling_lp_bounds(&q1, &q0, AssumptionSet::Si, &t, 15).unwrap();
        let b = bernstein_lp_bounds(&q1, &q0, AssumptionSet::Si, &t, BernsteinConfig::default()).unwrap();
        let sup = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(sup(&c.lower, &b.lower) < 0.05 && sup(&c.upper, &b.upper) < 0.05);
    }

    #[test]
    fn degenerate_marginals_collapse() {
        let q1 = curve(10, |_| 3.0);
        let q0 = curve(10, |_| 1.0);
        let t = [1.0, 1.999, 2.0, 3.5];
        let cfg = BernsteinConfig { m1: 4, m2: 4, quad_points: 50 };
        let b = bernstein_lp_bounds(&q1, &q0, AssumptionSet::None, &t, cfg).unwrap();
        for (i, expect) in [0.0, 0.0, 1.0, 1.0].iter().enumerate() {
            assert!((b.lower[i] - expect).abs() < 1e-9 && (b.upper[i] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn degree_one_is_independence() {
        let q1 = curve(30, |u| 2.0 * u - 0.5);
        let q0 = curve(30, |u| u * u);
        let t: Vec<f64> = (0..9).map(|i| -1.0 + 0.3 * i as f64).collect();
        let cfg = BernsteinConfig { m1: 1, m2: 1, quad_points: 600 };
        let b = bernstein_lp_bounds(&q1, &q0, AssumptionSet::None, &t, cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<(f64, f64)> = (0..200_000).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
        for (s, &ti) in t.iter().enumerate() {
            let mc = draws
                .iter()
                .filter(|(u1, u2)| q1.quantile_at(*u1) - q0.quantile_at(*u2) <= ti)
                .count() as f64
                / draws.len() as f64;
            assert!((b.lower[s] - b.upper[s]).abs() < 1e-12);
            assert!((b.lower[s] - mc).abs() < 0.01, "t={ti}: {} vs {mc}", b.lower[s]);
        }
    }

    #[test]
    fn extreme_coefficients_form_copulas() {
        let q1 = curve(20, |u| u);
        let q0 = curve(20, |u| 2.0 * u);
        for a in [AssumptionSet::None, AssumptionSet::Si, AssumptionSet::Pqd] {
            let cfg = BernsteinConfig { m1: 5, m2: 5, quad_points: 100 };
            let b = bernstein_extreme(&q1, &q0, a, 0.0, cfg, Sense::Maximize).unwrap();
            assert!(b.is_copula(1e-9), "{a}");
        }
    }

    #[test]
    fn assumptions_narrow_envelopes() {
        let q1 = curve(20, |u| 4.0 + (u - 0.5) * 2.0);
        let q0 = curve(20, |u| 3.0 + (u - 0.5) * 8.0);
        let t: Vec<f64> = (0..21).map(|i| -5.0 + 0.5 * i as f64).collect();
        let cfg = BernsteinConfig { m1: 6, m2: 6, quad_points: 120 };
        let none = bernstein_lp_bounds(&q1, &q0, AssumptionSet::None, &t, cfg).unwrap();
        let pqd = bernstein_lp_bounds(&q1, &q0, AssumptionSet::Pqd, &t, cfg).unwrap();
        let si = bernstein_lp_bounds(&q1, &q0, AssumptionSet::Si, &t, cfg).unwrap();
        for s in 0..t.len() {
            assert!(si.lower[s] >= pqd.lower[s] - 1e-9 && pqd.lower[s] >= none.lower[s] - 1e-9);
            assert!(si.upper[s] <= pqd.upper[s] + 1e-9 && pqd.upper[s] <= none.upper[s] + 1e-9);
        }
    }
}
