//! Treatment rules built from per-cell effect-quantile bounds, and their
//! regret.
//!
//! A rule assigns each covariate cell a treatment probability `δ`. The action
//! actually taken is `A ~ Bernoulli(δ)`, so a deterministic rule is the case
//! `δ ∈ {0, 1}`. Regret compares the rule against treating exactly the cells
//! whose effect quantile is nonnegative.

use serde::{Deserialize, Serialize};

use crate::bounds::QoteBounds;
use crate::error::{Error, Result};

/// Tolerance for the agreement of the three regret expressions.
pub const IDENTITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCell {
    pub x: Vec<f64>,
    pub weight: f64,
    pub bounds: QoteBounds,
}

/// Bounds over a finite set of covariate cells with their probability mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundField {
    pub cells: Vec<BoundCell>,
}

impl BoundField {
    pub fn new(cells: Vec<BoundCell>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::InvalidArgument("bound field has no cells".into()));
        }
        let mut total = 0.0;
        for (i, c) in cells.iter().enumerate() {
            if !(c.weight >= 0.0 && c.weight.is_finite()) {
                return Err(Error::InvalidArgument(format!("cell {i} has weight {}", c.weight)));
            }
            if !(c.bounds.lower.is_finite() && c.bounds.upper.is_finite()) || c.bounds.lower > c.bounds.upper {
                return Err(Error::InvalidArgument(format!("cell {i} has invalid bounds {:?}", c.bounds)));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("cell weights sum to {total}, not 1")));
        }
        Ok(Self { cells })
    }

    /// Equal weight on every cell.
    pub fn uniform(xs: Vec<Vec<f64>>, bounds: Vec<QoteBounds>) -> Result<Self> {
        if xs.len() != bounds.len() {
            return Err(Error::Inconsistent(format!("{} cells but {} bounds", xs.len(), bounds.len())));
        }
        let w = 1.0 / xs.len().max(1) as f64;
        Self::new(xs.into_iter().zip(bounds).map(|(x, bounds)| BoundCell { x, weight: w, bounds }).collect())
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.weight).collect()
    }

    /// Applies a per-cell rule.
    pub fn policy(&self, kind: PolicyKind, rule: impl Fn(&QoteBounds) -> f64) -> PolicyField {
        PolicyField {
            kind,
            cells: self.cells.iter().map(|c| PolicyCell { x: c.x.clone(), delta: rule(&c.bounds) }).collect(),
        }
    }

    pub fn mmr_stochastic(&self) -> PolicyField {
        self.policy(PolicyKind::Stochastic, mmr_stochastic)
    }

    pub fn mmr_deterministic(&self) -> PolicyField {
        self.policy(PolicyKind::Deterministic, mmr_deterministic)
    }

    pub fn maximin(&self) -> PolicyField {
        self.policy(PolicyKind::Deterministic, maximin_rule)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Stochastic,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCell {
    pub x: Vec<f64>,
    pub delta: f64,
}

/// Treatment probability per covariate cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyField {
    pub kind: PolicyKind,
    pub cells: Vec<PolicyCell>,
}

impl PolicyField {
    pub fn new(kind: PolicyKind, cells: Vec<PolicyCell>) -> Result<Self> {
        for (i, c) in cells.iter().enumerate() {
            let ok = match kind {
                PolicyKind::Stochastic => (0.0..=1.0).contains(&c.delta),
                PolicyKind::Deterministic => c.delta == 0.0 || c.delta == 1.0,
            };
            if !ok {
                return Err(Error::InvalidArgument(format!("cell {i}: delta {} invalid for {kind:?} rule", c.delta)));
            }
        }
        Ok(Self { kind, cells })
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.delta).collect()
    }

    /// Export as a list of `{"x": [...], "delta": v}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.cells).expect("policy cells serialize")
    }
}

/// `1{q >= 0}`, with zero counted as a gain.
pub fn sign(q: f64) -> f64 {
    if q >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// The oracle rule that treats exactly where the effect quantile is
/// nonnegative.
pub fn first_best(xs: Vec<Vec<f64>>, q: &[f64]) -> Result<PolicyField> {
    if xs.len() != q.len() {
        return Err(Error::Inconsistent(format!("{} cells but {} truths", xs.len(), q.len())));
    }
    let cells = xs.into_iter().zip(q).map(|(x, &v)| PolicyCell { x, delta: sign(v) }).collect();
    Ok(PolicyField { kind: PolicyKind::Deterministic, cells })
}

fn straddles(b: &QoteBounds) -> bool {
    b.lower < 0.0 && 0.0 < b.upper
}

/// Upper bound when the sign is known positive, lower bound when known
/// negative, and their sum otherwise.
pub fn qbar(b: &QoteBounds) -> f64 {
    let (l, u) = (b.lower, b.upper);
    let mut q = 0.0;
    if l >= 0.0 {
        q += u;
    }
    if u <= 0.0 {
        q += l;
    }
    if straddles(b) {
        q += u + l;
    }
    q
}

pub fn mmr_stochastic(b: &QoteBounds) -> f64 {
    if b.lower >= 0.0 {
        1.0
    } else if b.upper <= 0.0 {
        0.0
    } else {
        b.upper / (b.upper - b.lower)
    }
}

/// Ties `|L| = |U|` are treated.
pub fn mmr_deterministic(b: &QoteBounds) -> f64 {
    if b.lower >= 0.0 {
        1.0
    } else if b.upper <= 0.0 {
        0.0
    } else {
        sign(b.upper + b.lower)
    }
}

pub fn maximin_rule(b: &QoteBounds) -> f64 {
    sign(b.lower)
}

/// Largest regret of treating with probability `delta` over effect values
/// in the bounds: `max{(1 - δ) U⁺, δ (-L)⁺}`.
pub fn cell_max_regret(b: &QoteBounds, delta: f64) -> f64 {
    f64::max((1.0 - delta) * b.upper.max(0.0), delta * (-b.lower).max(0.0))
}

/// Cellwise worst-case regret with the worst effect chosen separately for
/// each realized action:
/// `U (1-δ) 1{L>=0} - L δ 1{U<=0} + (U (1-δ) - L δ) 1{L<0<U}`.
pub fn cell_regret_by_action(b: &QoteBounds, delta: f64) -> f64 {
    let (l, u) = (b.lower, b.upper);
    let mut r = 0.0;
    if l >= 0.0 {
        r += u * (1.0 - delta);
    }
    if u <= 0.0 {
        r -= l * delta;
    }
    if straddles(b) {
        r += u * (1.0 - delta) - l * delta;
    }
    r
}

/// `-δ Q̄ + U 1{U >= 0}`.
pub fn cell_regret_qbar(b: &QoteBounds, delta: f64) -> f64 {
    let pos = if b.upper >= 0.0 { b.upper } else { 0.0 };
    -delta * qbar(b) + pos
}

/// `|Q̄| P(A != sign Q̄) + min(U, -L) 1{L<0<U}`.
pub fn cell_regret_classification(b: &QoteBounds, delta: f64) -> f64 {
    let q = qbar(b);
    let miss = if sign(q) == 1.0 { 1.0 - delta } else { delta };
    let straddle = if straddles(b) { b.upper.min(-b.lower) } else { 0.0 };
    q.abs() * miss + straddle
}

/// `L U / (L - U)` on straddling cells, zero elsewhere.
pub fn leading_term_stochastic(b: &QoteBounds) -> f64 {
    if straddles(b) {
        b.lower * b.upper / (b.lower - b.upper)
    } else {
        0.0
    }
}

/// `min(U⁺, (-L)⁺)`.
pub fn leading_term_deterministic(b: &QoteBounds) -> f64 {
    b.upper.max(0.0).min((-b.lower).max(0.0))
}

/// Regret of a rule against known effect quantiles, averaging over the
/// Bernoulli action in closed form.
pub fn true_regret(policy: &PolicyField, truth: &[f64], weights: &[f64]) -> Result<f64> {
    if policy.cells.len() != truth.len() || truth.len() != weights.len() {
        return Err(Error::Inconsistent(format!(
            "policy has {} cells, truth {}, weights {}",
            policy.cells.len(),
            truth.len(),
            weights.len()
        )));
    }
    Ok(policy
        .cells
        .iter()
        .zip(truth)
        .zip(weights)
        .map(|((c, &q), &w)| {
            let miss = if sign(q) == 1.0 { 1.0 - c.delta } else { c.delta };
            w * q.abs() * miss
        })
        .sum())
}

/// Maximum regret of a rule over a bound field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    /// Common value of the three expressions.
    pub max_regret: f64,
    /// Worst case chosen per realized action, via `Q̄`, and via the
    /// classification form, in that order.
    pub expressions: [f64; 3],
    /// `E[max{(1-δ)U⁺, δ(-L)⁺}]`; equals `max_regret` for deterministic
    /// rules and is the quantity the stochastic rule minimizes.
    pub worst_case: f64,
    pub leading_term_stochastic: f64,
    pub leading_term_deterministic: f64,
    pub true_regret: Option<f64>,
}

fn check_cells(policy: &PolicyField, field: &BoundField) -> Result<()> {
    if policy.cells.len() != field.cells.len() {
        return Err(Error::Inconsistent(format!(
            "policy has {} cells, bounds have {}",
            policy.cells.len(),
            field.cells.len()
        )));
    }
    for (i, (p, b)) in policy.cells.iter().zip(&field.cells).enumerate() {
        if p.x != b.x {
            return Err(Error::Inconsistent(format!("cell {i}: policy x {:?} differs from bounds x {:?}", p.x, b.x)));
        }
    }
    Ok(())
}

pub fn max_regret(policy: &PolicyField, field: &BoundField) -> Result<RegretReport> {
    check_cells(policy, field)?;
    let mut e = [0.0; 3];
    let (mut worst, mut ls, mut ld) = (0.0, 0.0, 0.0);
    for (p, c) in policy.cells.iter().zip(&field.cells) {
        let (b, d, w) = (&c.bounds, p.delta, c.weight);
        e[0] += w * cell_regret_by_action(b, d);
        e[1] += w * cell_regret_qbar(b, d);
        e[2] += w * cell_regret_classification(b, d);
        worst += w * cell_max_regret(b, d);
        ls += w * leading_term_stochastic(b);
        ld += w * leading_term_deterministic(b);
    }
    let scale = 1.0 + e[0].abs();
    if (e[0] - e[1]).abs() > IDENTITY_TOL * scale || (e[0] - e[2]).abs() > IDENTITY_TOL * scale {
        return Err(Error::Inconsistent(format!("max regret expressions disagree: {e:?}")));
    }
    Ok(RegretReport {
        max_regret: e[0],
        expressions: e,
        worst_case: worst,
        leading_term_stochastic: ls,
        leading_term_deterministic: ld,
        true_regret: None,
    })
}

/// Comparison of the population minimax rules against the regret bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretBoundCheck {
    pub leading_term_stochastic: f64,
    pub leading_term_deterministic: f64,
    pub regret_stochastic: f64,
    pub regret_deterministic: f64,
    pub holds: bool,
}

pub fn regret_bound_check(field: &BoundField, truth: &[f64]) -> Result<RegretBoundCheck> {
    if truth.len() != field.len() {
        return Err(Error::Inconsistent(format!("{} cells but {} truths", field.len(), truth.len())));
    }
    for (i, (c, &q)) in field.cells.iter().zip(truth).enumerate() {
        if !c.bounds.contains(q, 1e-12) {
            return Err(Error::Inconsistent(format!("cell {i}: truth {q} outside {:?}", c.bounds)));
        }
    }
    let w = field.weights();
    let lts: f64 = field.cells.iter().map(|c| c.weight * leading_term_stochastic(&c.bounds)).sum();
    let ltd: f64 = field.cells.iter().map(|c| c.weight * leading_term_deterministic(&c.bounds)).sum();
    let rs = true_regret(&field.mmr_stochastic(), truth, &w)?;
    let rd = true_regret(&field.mmr_deterministic(), truth, &w)?;
    Ok(RegretBoundCheck {
        leading_term_stochastic: lts,
        leading_term_deterministic: ltd,
        regret_stochastic: rs,
        regret_deterministic: rd,
        holds: rs <= lts + 1e-9 && rd <= ltd + 1e-9,
    })
}

/// Minimizer of `cell_max_regret` over an evenly spaced grid of `steps + 1`
/// probabilities.
pub fn brute_force_delta(b: &QoteBounds, steps: usize) -> (f64, f64) {
    (0..=steps)
        .map(|i| {
            let d = i as f64 / steps as f64;
            (d, cell_max_regret(b, d))
        })
        .fold((0.0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}
