//! Outcome-weighted learning of a treatment rule.
//!
//! Each cell carries the weight `|Q̄(x)|` and the label `sign Q̄(x)`. The
//! learner minimizes the weighted hinge loss plus `λ‖f‖²` over a Gaussian
//! kernel space, and treats where `f(x) >= 0`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::QoteBounds;
use crate::error::{Error, Result};
use crate::policy::{qbar, BoundField, PolicyCell, PolicyField, PolicyKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    /// Inverse kernel width: `k(x, z) = exp(-σ² ‖x - z‖²)`.
    pub sigma: f64,
    pub max_epochs: usize,
    /// Stop once the best objective improved by less than this (relative)
    /// over the last `PATIENCE` epochs.
    pub tolerance: f64,
    /// Recorded with the model; the full-batch optimizer draws no random
    /// numbers.
    pub seed: u64,
}

const PATIENCE: usize = 20;

impl TrainConfig {
    /// `λ = n^{-1/2}` and `σ = 1 / median pairwise distance`, computed over
    /// the cells with positive weight.
    pub fn for_cells(cells: &[OwlCell]) -> Result<Self> {
        let xs: Vec<&[f64]> = cells.iter().filter(|c| c.weight > 0.0).map(|c| c.x.as_slice()).collect();
        if xs.is_empty() {
            return Err(Error::NothingToLearn);
        }
        let mut d = Vec::with_capacity(xs.len() * (xs.len() - 1) / 2);
        for i in 0..xs.len() {
            for j in 0..i {
                d.push(sq_dist(xs[i], xs[j]).sqrt());
            }
        }
        let sigma = if d.is_empty() {
            1.0
        } else {
            let mid = d.len() / 2;
            let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
            if *m > 0.0 {
                1.0 / *m
            } else {
                1.0
            }
        };
        Ok(Self {
            lambda: (xs.len() as f64).powf(-0.5),
            sigma,
            max_epochs: 2000,
            tolerance: 1e-6,
            seed: 0,
        })
    }

    fn validate(&self) -> Result<()> {
        let ok = self.lambda > 0.0 && self.lambda.is_finite() && self.sigma > 0.0 && self.sigma.is_finite();
        if !ok || self.max_epochs == 0 || !(self.tolerance >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

/// One training cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OwlCell {
    pub x: Vec<f64>,
    pub weight: f64,
    /// `+1` to treat, `-1` not to.
    pub label: f64,
}

impl OwlCell {
    pub fn from_bounds(x: Vec<f64>, b: &QoteBounds) -> Self {
        let q = qbar(b);
        Self { x, weight: q.abs(), label: label(q) }
    }
}

/// Training cells from estimated bounds, one per field cell. Weights are
/// `|Q̄|` scaled by the cell mass relative to a uniform field.
pub fn cells_from_field(field: &BoundField) -> Vec<OwlCell> {
    let n = field.len() as f64;
    field
        .cells
        .iter()
        .map(|c| {
            let mut cell = OwlCell::from_bounds(c.x.clone(), &c.bounds);
            cell.weight *= c.weight * n;
            cell
        })
        .collect()
}

fn label(q: f64) -> f64 {
    if q >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn hinge(t: f64) -> f64 {
    (1.0 - t).max(0.0)
}

/// `f(x) = Σ α_i exp(-σ² ‖x_i - x‖²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionFunction {
    pub support_points: Vec<Vec<f64>>,
    pub coefficients: Vec<f64>,
    pub sigma: f64,
}

impl DecisionFunction {
    pub fn zero(sigma: f64) -> Self {
        Self { support_points: Vec::new(), coefficients: Vec::new(), sigma }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let s2 = self.sigma * self.sigma;
        self.support_points
            .iter()
            .zip(&self.coefficients)
            .map(|(p, a)| a * (-s2 * sq_dist(p, x)).exp())
            .sum()
    }

    /// `‖f‖²` in the kernel space.
    pub fn norm_sq(&self) -> f64 {
        let s2 = self.sigma * self.sigma;
        let mut total = 0.0;
        for (p, a) in self.support_points.iter().zip(&self.coefficients) {
            for (q, b) in self.support_points.iter().zip(&self.coefficients) {
                total += a * b * (-s2 * sq_dist(p, q)).exp();
            }
        }
        total
    }
}

/// A trained rule with the best objective after each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OwlFit {
    pub function: DecisionFunction,
    pub objectives: Vec<f64>,
}

/// `(1/n) Σ w_i φ(y_i f(x_i)) + λ ‖f‖²` over cells with positive weight.
pub fn owl_objective(f: &DecisionFunction, cells: &[OwlCell], lambda: f64) -> f64 {
    let n = cells.iter().filter(|c| c.weight > 0.0).count().max(1) as f64;
    let loss: f64 = cells.iter().map(|c| c.weight * hinge(c.label * f.eval(&c.x))).sum();
    loss / n + lambda * f.norm_sq()
}

fn kernel_matrix(xs: &[&[f64]], sigma: f64) -> Vec<f64> {
    let n = xs.len();
    let s2 = sigma * sigma;
    let mut k = vec![0.0; n * n];
    k.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (-s2 * sq_dist(xs[i], xs[j])).exp();
        }
    });
    k
}

fn mat_vec(k: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|i| k[i * n..(i + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// Full-batch subgradient descent with step `1/(2λt)`.
///
/// The loss is averaged over the cells with positive weight, so cells of
/// zero weight leave the fit unchanged. The returned function is the best of
/// the current and the running-average iterates seen so far.
pub fn train_owl(cells: &[OwlCell], cfg: &TrainConfig) -> Result<OwlFit> {
    cfg.validate()?;
    for (i, c) in cells.iter().enumerate() {
        if !(c.weight >= 0.0 && c.weight.is_finite()) || (c.label != 1.0 && c.label != -1.0) {
            return Err(Error::InvalidArgument(format!("cell {i}: weight {} label {}", c.weight, c.label)));
        }
    }
    let n_pos = cells.iter().filter(|c| c.weight > 0.0).count();
    if n_pos == 0 {
        return Err(Error::NothingToLearn);
    }
    let n = cells.len();
    let xs: Vec<&[f64]> = cells.iter().map(|c| c.x.as_slice()).collect();
    let k = kernel_matrix(&xs, cfg.sigma);
    let c: Vec<f64> = cells.iter().map(|c| c.weight / n_pos as f64).collect();
    let y: Vec<f64> = cells.iter().map(|c| c.label).collect();
    let lambda = cfg.lambda;

    let objective = |alpha: &[f64], f: &[f64]| -> f64 {
        let loss: f64 = (0..n).map(|i| c[i] * hinge(y[i] * f[i])).sum();
        let norm: f64 = alpha.iter().zip(f).map(|(a, b)| a * b).sum();
        loss + lambda * norm
    };

    let mut alpha = vec![0.0; n];
    let mut avg = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut best = objective(&alpha, &f);
    let mut best_alpha = alpha.clone();
    let mut objectives = Vec::with_capacity(cfg.max_epochs);
    for t in 1..=cfg.max_epochs {
        let eta = 1.0 / (2.0 * lambda * t as f64);
        let shrink = 1.0 - 2.0 * lambda * eta;
        for i in 0..n {
            let g = if y[i] * f[i] < 1.0 { -c[i] * y[i] } else { 0.0 };
            alpha[i] = shrink * alpha[i] - eta * g;
            avg[i] += (alpha[i] - avg[i]) / t as f64;
        }
        f = mat_vec(&k, &alpha);
        let j = objective(&alpha, &f);
        if j < best {
            best = j;
            best_alpha.copy_from_slice(&alpha);
        }
        let fa = mat_vec(&k, &avg);
        let ja = objective(&avg, &fa);
        if ja < best {
            best = ja;
            best_alpha.copy_from_slice(&avg);
        }
        objectives.push(best);
        if t > PATIENCE {
            let before = objectives[t - 1 - PATIENCE];
            if before - best <= cfg.tolerance * best.abs().max(1.0) {
                break;
            }
        }
    }
    Ok(OwlFit {
        function: DecisionFunction {
            support_points: cells.iter().map(|c| c.x.clone()).collect(),
            coefficients: best_alpha,
            sigma: cfg.sigma,
        },
        objectives,
    })
}

/// `δ(x) = 1{f(x) >= 0}`.
pub fn predict_policy(f: &DecisionFunction, xs: &[Vec<f64>]) -> PolicyField {
    let cells = xs
        .par_iter()
        .map(|x| PolicyCell { x: x.clone(), delta: if f.eval(x) >= 0.0 { 1.0 } else { 0.0 } })
        .collect();
    PolicyField { kind: PolicyKind::Deterministic, cells }
}

fn straddle_term(b: &QoteBounds) -> f64 {
    if b.lower < 0.0 && 0.0 < b.upper {
        b.upper.min(-b.lower)
    } else {
        0.0
    }
}

/// `E[|Q̄| φ(sign(Q̄) f)] + E[min(U, -L) 1{L < 0 < U}]`.
pub fn surrogate_regret(f: &DecisionFunction, field: &BoundField) -> f64 {
    field
        .cells
        .par_iter()
        .map(|c| {
            let q = qbar(&c.bounds);
            c.weight * (q.abs() * hinge(label(q) * f.eval(&c.x)) + straddle_term(&c.bounds))
        })
        .sum()
}

/// Maximum regret of `1{f >= 0}`, in the same two-term form.
pub fn rule_regret(f: &DecisionFunction, field: &BoundField) -> f64 {
    field
        .cells
        .par_iter()
        .map(|c| {
            let q = qbar(&c.bounds);
            let treat = f.eval(&c.x) >= 0.0;
            let miss = if treat != (q >= 0.0) { 1.0 } else { 0.0 };
            c.weight * (q.abs() * miss + straddle_term(&c.bounds))
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clusters() -> Vec<OwlCell> {
        let mut cells = Vec::new();
        for i in 0..10 {
            let e = (i as f64 - 4.5) * 0.02;
            cells.push(OwlCell { x: vec![-1.0 + e], weight: 1.0, label: -1.0 });
            cells.push(OwlCell { x: vec![1.0 + e], weight: 1.0, label: 1.0 });
        }
        cells
    }

    #[test]
    fn separable_clusters_are_fit() {
        let cells = clusters();
        let mut cfg = TrainConfig::for_cells(&cells).unwrap();
        cfg.lambda = 1e-3;
        let fit = train_owl(&cells, &cfg).unwrap();
        for c in &cells {
            assert_eq!(fit.function.eval(&c.x) >= 0.0, c.label > 0.0, "{:?}", c.x);
        }
        assert!(fit.objectives.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        let direct = owl_objective(&fit.function, &cells, cfg.lambda);
        assert!((direct - fit.objectives.last().unwrap()).abs() < 1e-9);
    }

    #[test]
    fn zero_weight_cells_do_not_matter() {
        let cells = clusters();
        let mut padded = cells.clone();
        padded.insert(3, OwlCell { x: vec![0.2], weight: 0.0, label: -1.0 });
        padded.push(OwlCell { x: vec![-0.7], weight: 0.0, label: 1.0 });
        let cfg = TrainConfig::for_cells(&cells).unwrap();
        assert_eq!(cfg, TrainConfig::for_cells(&padded).unwrap());
        let a = train_owl(&cells, &cfg).unwrap().function;
        let b = train_owl(&padded, &cfg).unwrap().function;
        for i in 0..=40 {
            let x = [-2.0 + 0.1 * i as f64];
            assert!((a.eval(&x) - b.eval(&x)).abs() < 1e-8);
        }
    }

    #[test]
    fn heavy_regularization_flattens() {
        let cells = clusters();
        let mut cfg = TrainConfig::for_cells(&cells).unwrap();
        cfg.lambda = 1e6;
        let f = train_owl(&cells, &cfg).unwrap().function;
        assert!((0..=20).all(|i| f.eval(&[-1.0 + 0.1 * i as f64]).abs() < 1e-5));
    }

    #[test]
    fn nothing_to_learn() {
        let cells = vec![OwlCell { x: vec![0.0], weight: 0.0, label: 1.0 }];
        assert_eq!(TrainConfig::for_cells(&cells), Err(Error::NothingToLearn));
        let cfg = TrainConfig { lambda: 1.0, sigma: 1.0, max_epochs: 10, tolerance: 0.0, seed: 0 };
        assert_eq!(train_owl(&cells, &cfg), Err(Error::NothingToLearn));
    }

    #[test]
    fn zero_function_treats_everyone() {
        let p = predict_policy(&DecisionFunction::zero(1.0), &[vec![0.0], vec![5.0]]);
        assert_eq!(p.deltas(), vec![1.0, 1.0]);
    }

    #[test]
    fn surrogate_at_zero_function() {
        let field = BoundField::uniform(
            vec![vec![0.0], vec![1.0]],
            vec![QoteBounds { lower: -1.0, upper: 3.0 }, QoteBounds { lower: 1.0, upper: 2.0 }],
        )
        .unwrap();
        // |Q̄| = 2 and 2, straddle term min(3, 1) = 1 on the first cell
        let s = surrogate_regret(&DecisionFunction::zero(1.0), &field);
        assert!((s - (0.5 * 3.0 + 0.5 * 2.0)).abs() < 1e-12);
        assert!(rule_regret(&DecisionFunction::zero(1.0), &field) <= s);
    }

    #[test]
    fn json_round_trip() {
        let cells = clusters();
        let cfg = TrainConfig::for_cells(&cells).unwrap();
        let f = train_owl(&cells, &cfg).unwrap().function;
        let s = serde_json::to_string(&f).unwrap();
        assert!(s.contains("support_points") && s.contains("coefficients") && s.contains("sigma"));
        assert_eq!(serde_json::from_str::<DecisionFunction>(&s).unwrap(), f);
    }
}
