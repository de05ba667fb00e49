use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{draw_sample_stream, truths, DgpSpec, TruthSet};
use crate::bounds::{qote_bounds, AssumptionSet, QoteBounds};
use crate::error::{Error, Result};
use crate::marginals::{empirical_quantile, QuantileCurve};
use crate::policy::{mmr_deterministic, mmr_stochastic, sign};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "mmr_stoch_SI")]
    MmrStochSi,
    #[serde(rename = "mmr_stoch_none")]
    MmrStochNone,
    #[serde(rename = "mmr_determ_SI")]
    MmrDetermSi,
    #[serde(rename = "mmr_determ_none")]
    MmrDetermNone,
    #[serde(rename = "qte")]
    Qte,
    #[serde(rename = "ate")]
    Ate,
}

impl Estimator {
    pub const ALL: [Estimator; 6] = [
        Estimator::MmrStochSi,
        Estimator::MmrStochNone,
        Estimator::MmrDetermSi,
        Estimator::MmrDetermNone,
        Estimator::Qte,
        Estimator::Ate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::MmrStochSi => "mmr_stoch_SI",
            Estimator::MmrStochNone => "mmr_stoch_none",
            Estimator::MmrDetermSi => "mmr_determ_SI",
            Estimator::MmrDetermNone => "mmr_determ_none",
            Estimator::Qte => "qte",
            Estimator::Ate => "ate",
        }
    }

    fn needs_si(self) -> bool {
        matches!(self, Estimator::MmrStochSi | Estimator::MmrDetermSi)
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown estimator '{s}'")))
    }
}

/// The target rule an estimate is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// Sign of the effect quantile.
    Qote,
    Qte,
    Ate,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::Qote, Criterion::Qte, Criterion::Ate];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Qote => "qote",
            Criterion::Qte => "qte",
            Criterion::Ate => "ate",
        }
    }

    fn value(self, t: &TruthSet) -> f64 {
        match self {
            Criterion::Qote => t.qote,
            Criterion::Qte => t.qte,
            Criterion::Ate => t.ate,
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub tau: f64,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    /// Grid size for SI coupling programs.
    pub k_si: usize,
    /// Grid size for no-assumption bounds.
    pub k_none: usize,
    pub estimators: Vec<Estimator>,
}

impl ExperimentConfig {
    pub fn new(tau: f64, n: usize, reps: usize, seed: u64) -> Self {
        Self { tau, n, reps, seed, k_si: 16, k_none: 50, estimators: Estimator::ALL.to_vec() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidArgument(format!("tau {} is outside (0, 1)", self.tau)));
        }
        if self.reps == 0 || self.n < 2 {
            return Err(Error::InvalidArgument("need reps >= 1 and n >= 2".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidArgument("no estimators selected".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub estimator: Estimator,
    pub criterion: Criterion,
    pub rate: f64,
}

/// One value per estimator and criterion, in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub truths: TruthSet,
    pub rows: Vec<RateRow>,
}

impl RateTable {
    pub fn get(&self, estimator: Estimator, criterion: Criterion) -> Option<f64> {
        self.rows.iter().find(|r| r.estimator == estimator && r.criterion == criterion).map(|r| r.rate)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Input(e.to_string());
        w.write_record(["estimator", "criterion", "rate"]).map_err(io)?;
        for r in &self.rows {
            w.write_record([r.estimator.as_str(), r.criterion.as_str(), &format!("{:.6}", r.rate)]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Input(e.to_string()))
    }
}

/// Estimated rule values, one row per replication, columns in estimator order.
fn replicate(dgp: &DgpSpec, cfg: &ExperimentConfig) -> Result<(TruthSet, Vec<Vec<f64>>)> {
    cfg.validate()?;
    let truth = truths(dgp, cfg.tau)?;
    let si = cfg.estimators.iter().any(|e| e.needs_si());
    let deltas = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let data = draw_sample_stream(dgp, cfg.n, cfg.seed, rep as u64)?;
            let (y1, y0): (Vec<_>, Vec<_>) = data.iter().partition(|s| s.d == 1);
            let y1: Vec<f64> = y1.iter().map(|s| s.y).collect();
            let y0: Vec<f64> = y0.iter().map(|s| s.y).collect();
            if y1.is_empty() || y0.is_empty() {
                return Err(Error::NoObservations);
            }
            let arm_bounds = |a: AssumptionSet, k: usize| -> Result<QoteBounds> {
                let q1 = QuantileCurve::empirical(&y1, k)?;
                let q0 = QuantileCurve::empirical(&y0, k)?;
                qote_bounds(&q1, &q0, a, cfg.tau, k, None)
            };
            let none = arm_bounds(AssumptionSet::None, cfg.k_none)?;
            let si = if si { Some(arm_bounds(AssumptionSet::Si, cfg.k_si)?) } else { None };
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let qte = empirical_quantile(&y1, cfg.tau)? - empirical_quantile(&y0, cfg.tau)?;
            let ate = mean(&y1) - mean(&y0);
            Ok(cfg
                .estimators
                .iter()
                .map(|e| match e {
                    Estimator::MmrStochSi => mmr_stochastic(si.as_ref().expect("SI bounds")),
                    Estimator::MmrStochNone => mmr_stochastic(&none),
                    Estimator::MmrDetermSi => mmr_deterministic(si.as_ref().expect("SI bounds")),
                    Estimator::MmrDetermNone => mmr_deterministic(&none),
                    Estimator::Qte => sign(qte),
                    Estimator::Ate => sign(ate),
                })
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok((truth, deltas))
}

fn tabulate(
    cfg: &ExperimentConfig,
    truth: TruthSet,
    deltas: &[Vec<f64>],
    score: impl Fn(bool, f64) -> f64,
) -> RateTable {
    let mut rows = Vec::new();
    for (j, &estimator) in cfg.estimators.iter().enumerate() {
        for criterion in Criterion::ALL {
            let t = criterion.value(&truth);
            let target = t >= 0.0;
            let total: f64 = deltas.iter().map(|d| score((d[j] >= 0.5) == target, t)).sum();
            rows.push(RateRow { estimator, criterion, rate: total / deltas.len() as f64 });
        }
    }
    RateTable { truths: truth, rows }
}

/// Classification and regret tables from one set of replications.
pub fn run_experiment(dgp: &DgpSpec, cfg: &ExperimentConfig) -> Result<(RateTable, RateTable)> {
    let (truth, deltas) = replicate(dgp, cfg)?;
    let rates = tabulate(cfg, truth, &deltas, |hit, _| hit as u8 as f64);
    let regrets = tabulate(cfg, truth, &deltas, |hit, t| if hit { 0.0 } else { t.abs() });
    Ok((rates, regrets))
}

/// Share of replications in which each estimated rule agrees with each
/// target rule. A stochastic estimate counts as treating when `δ >= 0.5`.
pub fn classification_experiment(dgp: &DgpSpec, cfg: &ExperimentConfig) -> Result<RateTable> {
    run_experiment(dgp, cfg).map(|r| r.0)
}

/// Mean of `|T| 1{δ̂ != δ*}` over replications.
pub fn regret_experiment(dgp: &DgpSpec, cfg: &ExperimentConfig) -> Result<RateTable> {
    run_experiment(dgp, cfg).map(|r| r.1)
}

/// Population bounds for one specification, for interval plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub label: String,
    pub tau: f64,
    pub assumption: AssumptionSet,
    pub lower: f64,
    pub upper: f64,
    pub qote: f64,
    pub qte: f64,
    pub ate: f64,
}

/// No-assumption (grid `k_none`) and SI (grid `k_si`) population intervals.
pub fn interval_table(specs: &[(String, DgpSpec)], taus: &[f64], k_none: usize, k_si: usize) -> Result<Vec<IntervalRow>> {
    let jobs: Vec<_> = specs
        .iter()
        .flat_map(|s| taus.iter().flat_map(move |&t| [(s, t, AssumptionSet::None, k_none), (s, t, AssumptionSet::Si, k_si)]))
        .collect();
    jobs.into_par_iter()
        .map(|((label, dgp), tau, assumption, k)| {
            let truth = truths(dgp, tau)?;
            let q1 = QuantileCurve::from_fn(k, |u| dgp.marginal_quantile(true, u))?;
            let q0 = QuantileCurve::from_fn(k, |u| dgp.marginal_quantile(false, u))?;
            let b = qote_bounds(&q1, &q0, assumption, tau, k, None)?;
            Ok(IntervalRow {
                label: label.clone(),
                tau,
                assumption,
                lower: b.lower,
                upper: b.upper,
                qote: truth.qote,
                qte: truth.qte,
                ate: truth.ate,
            })
        })
        .collect()
}

pub fn write_intervals_csv<W: Write>(rows: &[IntervalRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Input(e.to_string());
    w.write_record(["label", "tau", "assumption", "lower", "upper", "qote", "qte", "ate"]).map_err(io)?;
    for r in rows {
        let f = |v: f64| format!("{v:.6}");
        w.write_record([
            r.label.clone(),
            f(r.tau),
            r.assumption.as_str().to_string(),
            f(r.lower),
            f(r.upper),
            f(r.qote),
            f(r.qte),
            f(r.ate),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Input(e.to_string()))
}
