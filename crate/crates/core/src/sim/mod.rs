//! Bivariate (log-)normal potential outcomes with known effect quantiles,
//! Monte Carlo oracles, and the replication experiments.

mod experiment;

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::marginals::Sample;
use crate::policy::PolicyField;

pub use experiment::{
    classification_experiment, interval_table, regret_experiment, run_experiment, write_intervals_csv, Criterion,
    Estimator, ExperimentConfig, IntervalRow, RateRow, RateTable,
};

/// `(Y1, Y0)` or `(log Y1, log Y0)` bivariate normal, treatment independent
/// with probability `p_treat`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub mu1: f64,
    pub mu0: f64,
    pub var1: f64,
    pub var0: f64,
    pub rho: f64,
    #[serde(default)]
    pub lognormal: bool,
    #[serde(default = "half")]
    pub p_treat: f64,
}

fn half() -> f64 {
    0.5
}

impl DgpSpec {
    pub fn normal(mu: (f64, f64), var: (f64, f64), rho: f64) -> Self {
        Self { mu1: mu.0, mu0: mu.1, var1: var.0, var0: var.1, rho, lognormal: false, p_treat: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.mu1, self.mu0, self.var1, self.var0, self.rho, self.p_treat].iter().all(|v| v.is_finite());
        if !finite || self.var1 <= 0.0 || self.var0 <= 0.0 {
            return Err(Error::InvalidArgument(format!("variances must be positive and finite: {self:?}")));
        }
        if self.rho.abs() > 1.0 {
            return Err(Error::InvalidArgument(format!("correlation {} outside [-1, 1]", self.rho)));
        }
        if !(0.0..=1.0).contains(&self.p_treat) {
            return Err(Error::InvalidArgument(format!("treatment probability {} outside [0, 1]", self.p_treat)));
        }
        Ok(())
    }

    fn sd(&self) -> (f64, f64) {
        (self.var1.sqrt(), self.var0.sqrt())
    }

    /// One joint draw `(Y1, Y0)`.
    pub fn draw_pair<R: Rng>(&self, rng: &mut R) -> (f64, f64) {
        let (s1, s0) = self.sd();
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let a = self.mu1 + s1 * z1;
        let b = self.mu0 + s0 * (self.rho * z1 + (1.0 - self.rho * self.rho).max(0.0).sqrt() * z2);
        if self.lognormal {
            (a.exp(), b.exp())
        } else {
            (a, b)
        }
    }

    /// Marginal quantile of `Y_d`.
    pub fn marginal_quantile(&self, treated: bool, u: f64) -> f64 {
        let (s1, s0) = self.sd();
        let z = std_normal().inverse_cdf(u);
        let v = if treated { self.mu1 + s1 * z } else { self.mu0 + s0 * z };
        if self.lognormal {
            v.exp()
        } else {
            v
        }
    }

    pub fn mean(&self, treated: bool) -> f64 {
        let (mu, var) = if treated { (self.mu1, self.var1) } else { (self.mu0, self.var0) };
        if self.lognormal {
            (mu + var / 2.0).exp()
        } else {
            mu
        }
    }

    fn key(&self) -> [u64; 7] {
        [
            self.mu1.to_bits(),
            self.mu0.to_bits(),
            self.var1.to_bits(),
            self.var0.to_bits(),
            self.rho.to_bits(),
            self.lognormal as u64,
            self.p_treat.to_bits(),
        ]
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// The eight subgroups of the population table, numbered from 1.
pub fn subgroup(i: usize) -> Result<DgpSpec> {
    let spec = match i {
        1 => DgpSpec::normal((2.0, 3.0), (1.0, 9.0), 0.5),
        2 => DgpSpec::normal((4.0, 3.0), (1.0, 25.0), 0.5),
        3 => DgpSpec::normal((7.0, 3.0), (9.0, 25.0), 0.5),
        4 => DgpSpec::normal((3.0, 1.0), (5.0, 5.0), 0.1),
        5 => DgpSpec::normal((3.0, 2.0), (9.0, 1.0), -0.5),
        6 => DgpSpec::normal((3.0, 0.0), (25.0, 4.0), -0.5),
        7 => DgpSpec::normal((2.0, 0.0), (8.0, 4.0), 0.5),
        8 => DgpSpec { lognormal: true, ..DgpSpec::normal((3.0, 0.0), (2.0, 8.0), 0.8) },
        _ => return Err(Error::InvalidArgument(format!("no subgroup {i}; presets are 1 to 8"))),
    };
    Ok(spec)
}

/// Effect quantile, quantile difference and mean effect at one `τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthSet {
    pub qote: f64,
    pub qte: f64,
    pub ate: f64,
    /// Stochastic increasingness holds (`ρ >= 0`).
    pub si_holds: bool,
}

/// Closed forms for a normal specification.
pub fn closed_form_truths(dgp: &DgpSpec, tau: f64) -> Result<TruthSet> {
    dgp.validate()?;
    check_tau(tau)?;
    if dgp.lognormal {
        return Err(Error::InvalidArgument("the effect quantile has no closed form under log-normality".into()));
    }
    let (s1, s0) = dgp.sd();
    let z = std_normal().inverse_cdf(tau);
    let sd_delta = (dgp.var1 + dgp.var0 - 2.0 * dgp.rho * s1 * s0).max(0.0).sqrt();
    Ok(TruthSet {
        qote: dgp.mu1 - dgp.mu0 + z * sd_delta,
        qte: dgp.mu1 - dgp.mu0 + z * (s1 - s0),
        ate: dgp.mu1 - dgp.mu0,
        si_holds: dgp.rho >= 0.0,
    })
}

/// Draws used by [`truths`] for the log-normal effect quantile.
pub const ORACLE_DRAWS: usize = 2_000_000;
const ORACLE_SEED: u64 = 0x5eed_0001;

/// Truths for any specification; the log-normal effect quantile comes from
/// the cached Monte Carlo oracle.
pub fn truths(dgp: &DgpSpec, tau: f64) -> Result<TruthSet> {
    if !dgp.lognormal {
        return closed_form_truths(dgp, tau);
    }
    dgp.validate()?;
    check_tau(tau)?;
    Ok(TruthSet {
        qote: mc_oracle_qote(dgp, tau, ORACLE_DRAWS, ORACLE_SEED)?,
        qte: dgp.marginal_quantile(true, tau) - dgp.marginal_quantile(false, tau),
        ate: dgp.mean(true) - dgp.mean(false),
        si_holds: dgp.rho >= 0.0,
    })
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("tau {tau} is outside (0, 1)")))
    }
}

/// Random stream `stream` of `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `n` observations `(Y, D)` revealing only the realized outcome.
pub fn draw_sample(dgp: &DgpSpec, n: usize, seed: u64) -> Result<Vec<Sample>> {
    draw_sample_stream(dgp, n, seed, 0)
}

pub fn draw_sample_stream(dgp: &DgpSpec, n: usize, seed: u64, stream: u64) -> Result<Vec<Sample>> {
    dgp.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be positive".into()));
    }
    let mut rng = rng_stream(seed, stream);
    Ok((0..n)
        .map(|_| {
            let (y1, y0) = dgp.draw_pair(&mut rng);
            let d = rng.random::<f64>() < dgp.p_treat;
            Sample::new(if d { y1 } else { y0 }, d as u8, Vec::new())
        })
        .collect())
}

const CHUNK: usize = 1 << 16;

/// Joint effect draws `Y1 - Y0`, generated in fixed chunks with one stream
/// each so the result does not depend on the thread count.
pub fn draw_effects(dgp: &DgpSpec, ndraws: usize, seed: u64) -> Result<Vec<f64>> {
    dgp.validate()?;
    let chunks = ndraws.div_ceil(CHUNK);
    Ok((0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = rng_stream(seed, c as u64);
            let len = CHUNK.min(ndraws - c * CHUNK);
            (0..len)
                .map(move |_| {
                    let (a, b) = dgp.draw_pair(&mut rng);
                    a - b
                })
                .collect::<Vec<_>>()
        })
        .collect())
}

/// `τ`-quantiles of one effect sample, one per entry of `taus`.
pub fn effect_quantiles(mut draws: Vec<f64>, taus: &[f64]) -> Result<Vec<f64>> {
    if draws.is_empty() {
        return Err(Error::NoObservations);
    }
    let n = draws.len();
    taus.iter()
        .map(|&tau| {
            check_tau(tau)?;
            let idx = ((tau * n as f64 - 1e-9).ceil() as usize).clamp(1, n) - 1;
            let (_, v, _) = draws.select_nth_unstable_by(idx, f64::total_cmp);
            Ok(*v)
        })
        .collect()
}

type OracleKey = ([u64; 7], u64, usize, u64);

fn oracle_cache() -> &'static Mutex<HashMap<OracleKey, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<OracleKey, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Empirical `τ`-quantile of `Y1 - Y0` from `ndraws` joint draws.
pub fn mc_oracle_qote(dgp: &DgpSpec, tau: f64, ndraws: usize, seed: u64) -> Result<f64> {
    check_tau(tau)?;
    if ndraws < 1000 {
        return Err(Error::InvalidArgument(format!("oracle needs at least 1000 draws, got {ndraws}")));
    }
    let key = (dgp.key(), tau.to_bits(), ndraws, seed);
    if let Some(v) = oracle_cache().lock().expect("oracle cache").get(&key) {
        return Ok(*v);
    }
    let v = effect_quantiles(draw_effects(dgp, ndraws, seed)?, &[tau])?[0];
    oracle_cache().lock().expect("oracle cache").insert(key, v);
    Ok(v)
}

/// Covariate cells, each with its own outcome model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDgp {
    pub cells: Vec<(Vec<f64>, f64, DgpSpec)>,
}

impl CellDgp {
    pub fn single(spec: DgpSpec) -> Self {
        Self { cells: vec![(Vec::new(), 1.0, spec)] }
    }

    /// Monte Carlo `P(Y1 > Y0)` per cell from `ndraws` joint draws each.
    pub fn benefit_probabilities(&self, ndraws: usize, seed: u64) -> Result<Vec<f64>> {
        self.cells
            .iter()
            .enumerate()
            .map(|(i, (_, _, spec))| {
                spec.validate()?;
                let mut rng = rng_stream(seed, i as u64);
                let hits = (0..ndraws)
                    .filter(|_| {
                        let (a, b) = spec.draw_pair(&mut rng);
                        a > b
                    })
                    .count();
                Ok(hits as f64 / ndraws.max(1) as f64)
            })
            .collect()
    }
}

/// Share of the population that the rule's action makes better off than the
/// other action: `Σ w [δ P(Y1 > Y0) + (1 - δ) P(Y0 > Y1)]`.
pub fn vote_share(dgp: &CellDgp, policy: &PolicyField, benefit: &[f64]) -> Result<f64> {
    if policy.cells.len() != dgp.cells.len() || benefit.len() != dgp.cells.len() {
        return Err(Error::Inconsistent(format!(
            "policy has {} cells, model {}, probabilities {}",
            policy.cells.len(),
            dgp.cells.len(),
            benefit.len()
        )));
    }
    Ok(dgp
        .cells
        .iter()
        .zip(&policy.cells)
        .zip(benefit)
        .map(|(((_, w, _), p), &b)| w * (p.delta * b + (1.0 - p.delta) * (1.0 - b)))
        .sum())
}

/// Monte Carlo share of the population made better off under the policy.
pub fn vote_share_check(dgp: &CellDgp, policy: &PolicyField, ndraws: usize, seed: u64) -> Result<f64> {
    let benefit = dgp.benefit_probabilities(ndraws, seed)?;
    vote_share(dgp, policy, &benefit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{PolicyCell, PolicyKind};

    #[test]
    fn closed_forms_match_the_population_table() {
        let t = closed_form_truths(&subgroup(2).unwrap(), 0.25).unwrap();
        assert!((t.qote + 2.09).abs() < 0.01 && (t.qte - 3.70).abs() < 0.01 && t.ate == 1.0);
        let t = closed_form_truths(&subgroup(5).unwrap(), 0.25).unwrap();
        assert!((t.qote + 1.43).abs() < 0.01 && !t.si_holds);
        let t = closed_form_truths(&DgpSpec::normal((1.0, 0.5), (4.0, 4.0), 1.0), 0.1).unwrap();
        assert!((t.qote - t.ate).abs() < 1e-12);
        assert!(closed_form_truths(&subgroup(8).unwrap(), 0.25).is_err());
    }

    #[test]
    fn samples_are_reproducible_and_plausible() {
        let dgp = subgroup(1).unwrap();
        let a = draw_sample(&dgp, 10_000, 3).unwrap();
        assert_eq!(a, draw_sample(&dgp, 10_000, 3).unwrap());
        let treated: Vec<f64> = a.iter().filter(|s| s.d == 1).map(|s| s.y).collect();
        let share = treated.len() as f64 / a.len() as f64;
        assert!((share - 0.5).abs() < 0.02);
        let mean = treated.iter().sum::<f64>() / treated.len() as f64;
        assert!((mean - 2.0).abs() < 3.0 * 1.0 / (10_000.0f64 * 0.5).sqrt());
    }

    #[test]
    fn effect_draws_do_not_depend_on_thread_count() {
        let dgp = subgroup(3).unwrap();
        let a = draw_effects(&dgp, 200_000, 9).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| draw_effects(&dgp, 200_000, 9).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn oracle_median_matches_mean_for_symmetric_effects() {
        let dgp = subgroup(2).unwrap();
        let m = mc_oracle_qote(&dgp, 0.5, 400_000, 1).unwrap();
        assert!((m - 1.0).abs() < 0.03);
        assert!(mc_oracle_qote(&dgp, 0.5, 10, 1).is_err());
    }

    #[test]
    fn lognormal_truths() {
        let t = truths(&subgroup(8).unwrap(), 0.25).unwrap();
        assert!(t.qote > 0.0 && t.si_holds);
        assert!(t.ate.abs() < 1e-9);
    }

    #[test]
    fn shares_of_opposite_rules_sum_to_one() {
        let dgp = CellDgp::single(subgroup(1).unwrap());
        let rule = |d: f64| PolicyField { kind: PolicyKind::Deterministic, cells: vec![PolicyCell { x: vec![], delta: d }] };
        let a = vote_share_check(&dgp, &rule(1.0), 50_000, 4).unwrap();
        let b = vote_share_check(&dgp, &rule(0.0), 50_000, 4).unwrap();
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn median_sign_decides_majority() {
        let mut rng = rng_stream(77, 0);
        for _ in 0..20 {
            let spec = DgpSpec::normal(
                (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
                (rng.random_range(0.5..9.0), rng.random_range(0.5..9.0)),
                rng.random_range(-0.9..0.9),
            );
            let median = closed_form_truths(&spec, 0.5).unwrap().qote;
            let p = CellDgp::single(spec).benefit_probabilities(200_000, 5).unwrap()[0];
            // skip specs whose benefit share is within Monte Carlo error of one half
            if (p - 0.5).abs() > 0.005 {
                assert_eq!(median >= 0.0, p >= 0.5, "{spec:?}");
            }
        }
    }
}
