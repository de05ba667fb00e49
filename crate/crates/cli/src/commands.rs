use std::path::Path;

use qote_core::bounds::{coupling_lp_bounds, default_t_grid, qote_bounds, AssumptionSet};
use qote_core::marginals::{
    curve_from_cdf, kernel_conditional_cdf, make_y_grid, midpoint_grid, read_samples_csv, scott_bandwidth,
    validate_samples, QuantileCurve, Sample,
};
use qote_core::owl::{cells_from_field, predict_policy, rule_regret, surrogate_regret, train_owl, TrainConfig};
use qote_core::policy::{first_best, max_regret, true_regret, BoundField, PolicyCell, PolicyField, PolicyKind, RegretReport};
use qote_core::sim::{
    interval_table, run_experiment, subgroup, truths, write_intervals_csv, DgpSpec, Estimator, ExperimentConfig,
    RateTable, TruthSet,
};
use qote_core::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::io::{self, BoundRecord};
use crate::{BoundsArgs, OwlArgs, PolicyArgs, SimulateArgs, Source, TablesArgs};

/// Outcome resolution of kernel-estimated conditional CDFs.
const Y_GRID: usize = 400;

struct Cell {
    x: Vec<f64>,
    weight: f64,
    q1: QuantileCurve,
    q0: QuantileCurve,
    ate: f64,
}

fn default_k(a: AssumptionSet) -> usize {
    if a == AssumptionSet::Si {
        24
    } else {
        50
    }
}

fn population_cell(dgp: &DgpSpec, k: usize) -> Result<Cell> {
    Ok(Cell {
        x: Vec::new(),
        weight: 1.0,
        q1: QuantileCurve::from_fn(k, |u| dgp.marginal_quantile(true, u))?,
        q0: QuantileCurve::from_fn(k, |u| dgp.marginal_quantile(false, u))?,
        ate: dgp.mean(true) - dgp.mean(false),
    })
}

fn arm(data: &[Sample], d: u8) -> Result<Vec<Sample>> {
    let v: Vec<Sample> = data.iter().filter(|s| s.d == d).cloned().collect();
    if v.is_empty() {
        return Err(Error::Input(format!("no observations with d = {d}")));
    }
    Ok(v)
}

fn kernel_mean(data: &[Sample], x0: &[f64], h: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for s in data {
        let z2: f64 = s.x.iter().zip(x0).zip(h).map(|((a, b), h)| ((a - b) / h).powi(2)).sum();
        let w = (-0.5 * z2).exp();
        num += w * s.y;
        den += w;
    }
    num / den
}

/// One cell per distinct covariate row, with mass equal to its share of the
/// sample. Without covariates this is the pair of empirical arm curves.
fn data_cells(data: &[Sample], k: usize) -> Result<Vec<Cell>> {
    let p = validate_samples(data)?;
    let (treated, control) = (arm(data, 1)?, arm(data, 0)?);
    let ys = |v: &[Sample]| v.iter().map(|s| s.y).collect::<Vec<_>>();
    if p == 0 {
        let (y1, y0) = (ys(&treated), ys(&control));
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        return Ok(vec![Cell {
            x: Vec::new(),
            weight: 1.0,
            q1: QuantileCurve::empirical(&y1, k)?,
            q0: QuantileCurve::empirical(&y0, k)?,
            ate: mean(&y1) - mean(&y0),
        }]);
    }
    let h = scott_bandwidth(&data.iter().map(|s| s.x.clone()).collect::<Vec<_>>())?;
    let mut xs: Vec<Vec<f64>> = data.iter().map(|s| s.x.clone()).collect();
    xs.sort_by(|a, b| a.iter().zip(b).map(|(u, v)| u.total_cmp(v)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    let mut counts: Vec<(Vec<f64>, usize)> = Vec::new();
    for x in xs {
        match counts.last_mut() {
            Some((last, c)) if *last == x => *c += 1,
            _ => counts.push((x, 1)),
        }
    }
    let (g1, g0) = (make_y_grid(&ys(&treated), Y_GRID)?, make_y_grid(&ys(&control), Y_GRID)?);
    let u = midpoint_grid(k);
    let n = data.len() as f64;
    counts
        .into_par_iter()
        .map(|(x, c)| {
            let q1 = curve_from_cdf(&kernel_conditional_cdf(&treated, &x, &g1, &h)?, &u)?;
            let q0 = curve_from_cdf(&kernel_conditional_cdf(&control, &x, &g0, &h)?, &u)?;
            let ate = kernel_mean(&treated, &x, &h) - kernel_mean(&control, &x, &h);
            Ok(Cell { x, weight: c as f64 / n, q1, q0, ate })
        })
        .collect()
}

fn source_cells(source: &Source, k: usize) -> Result<Vec<Cell>> {
    match (&source.input, &source.dgp) {
        (Some(path), _) => data_cells(&read_samples_csv(io::open(path)?)?, k),
        (None, Some(d)) => Ok(vec![population_cell(&io::load_dgp(d)?, k)?]),
        (None, None) => Err(Error::Input("give --input or --dgp".into())),
    }
}

fn compute_bounds(cells: &[Cell], taus: &[f64], assumption: AssumptionSet, k: usize) -> Result<Vec<BoundRecord>> {
    let jobs: Vec<(&Cell, f64)> = cells.iter().flat_map(|c| taus.iter().map(move |&t| (c, t))).collect();
    jobs.into_par_iter()
        .map(|(c, tau)| {
            let b = qote_bounds(&c.q1, &c.q0, assumption, tau, k, Some(c.ate))?;
            Ok(BoundRecord {
                x: c.x.clone(),
                tau: Some(tau),
                assumption: Some(assumption),
                lower: b.lower,
                upper: b.upper,
                weight: Some(c.weight),
            })
        })
        .collect()
}

pub fn bounds(a: BoundsArgs) -> Result<()> {
    let assumption: AssumptionSet = a.assumption.parse()?;
    let k = a.k.unwrap_or(default_k(assumption));
    let cells = source_cells(&a.source, k)?;
    let rows = compute_bounds(&cells, &a.tau, assumption, k)?;
    io::write_json(&a.out, "bounds.json", &rows)?;
    if let Some(n) = a.tgrid {
        if !assumption.is_linear() {
            return Err(Error::InvalidArgument(format!("effect-CDF envelopes need a linear assumption, not {assumption}")));
        }
        for (i, c) in cells.iter().enumerate() {
            let (q1, q0) = (c.q1.resample(k)?, c.q0.resample(k)?);
            let env = coupling_lp_bounds(&q1, &q0, assumption, &default_t_grid(&q1, &q0, n)?, k)?;
            let name = if cells.len() == 1 { "cdf_bounds.csv".to_string() } else { format!("cdf_bounds_{i}.csv") };
            env.write_csv(io::create(&a.out, &name)?)?;
        }
    }
    println!("{}", a.out.join("bounds.json").display());
    Ok(())
}

#[derive(Serialize)]
struct RuleOutput {
    kind: PolicyKind,
    cells: Vec<PolicyCell>,
    report: RegretReport,
}

#[derive(Serialize)]
struct PolicyOutput {
    stochastic: RuleOutput,
    deterministic: RuleOutput,
    maximin: RuleOutput,
    #[serde(skip_serializing_if = "Option::is_none")]
    first_best: Option<PolicyField>,
    #[serde(skip_serializing_if = "Option::is_none")]
    truth: Option<TruthSet>,
}

fn rule_output(p: PolicyField, field: &BoundField, truth: Option<&[f64]>) -> Result<RuleOutput> {
    let mut report = max_regret(&p, field)?;
    if let Some(t) = truth {
        report.true_regret = Some(true_regret(&p, t, &field.weights())?);
    }
    Ok(RuleOutput { kind: p.kind, cells: p.cells, report })
}

pub fn policy(a: PolicyArgs) -> Result<()> {
    let (rows, truth) = match (&a.input, &a.dgp) {
        (Some(path), _) => (io::read_bounds(path, a.tau)?, None),
        (None, Some(d)) => {
            let dgp = io::load_dgp(d)?;
            let assumption: AssumptionSet = a.assumption.parse()?;
            let k = a.k.unwrap_or(default_k(assumption));
            let tau = a.tau.unwrap_or(0.25);
            let rows = compute_bounds(&[population_cell(&dgp, k)?], &[tau], assumption, k)?;
            (rows, Some(truths(&dgp, tau)?))
        }
        (None, None) => return Err(Error::Input("give --input or --dgp".into())),
    };
    let field = io::bound_field(&rows, a.weights.as_deref())?;
    let q = truth.map(|t| vec![t.qote]);
    let xs: Vec<Vec<f64>> = field.cells.iter().map(|c| c.x.clone()).collect();
    let out = PolicyOutput {
        stochastic: rule_output(field.mmr_stochastic(), &field, q.as_deref())?,
        deterministic: rule_output(field.mmr_deterministic(), &field, q.as_deref())?,
        maximin: rule_output(field.maximin(), &field, q.as_deref())?,
        first_best: q.as_deref().map(|q| first_best(xs, q)).transpose()?,
        truth,
    };
    io::write_json(&a.out, "policy.json", &out)?;
    println!("{}", a.out.join("policy.json").display());
    Ok(())
}

#[derive(Serialize)]
struct SimulationOutput<'a> {
    dgp: &'a DgpSpec,
    config: &'a ExperimentConfig,
    truths: TruthSet,
    rates: &'a RateTable,
    regret: &'a RateTable,
}

fn simulate_one(dgp: &DgpSpec, cfg: &ExperimentConfig, out: &Path, prefix: &str) -> Result<()> {
    let (rates, regret) = run_experiment(dgp, cfg)?;
    rates.write_csv(io::create(out, &format!("{prefix}rates.csv"))?)?;
    regret.write_csv(io::create(out, &format!("{prefix}regret.csv"))?)?;
    let summary = SimulationOutput { dgp, config: cfg, truths: rates.truths, rates: &rates, regret: &regret };
    io::write_json(out, &format!("{prefix}tables.json"), &summary)
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let dgp = io::load_dgp(&a.dgp)?;
    let mut cfg = ExperimentConfig::new(a.tau, a.n, a.reps, a.seed);
    cfg.k_none = a.k;
    cfg.k_si = a.k_si;
    if !a.estimators.is_empty() {
        cfg.estimators = a.estimators.iter().map(|s| s.parse()).collect::<Result<Vec<Estimator>>>()?;
    }
    simulate_one(&dgp, &cfg, &a.out, "")?;
    println!("{}", a.out.join("rates.csv").display());
    Ok(())
}

#[derive(Serialize)]
struct OwlReport {
    lambda: f64,
    sigma: f64,
    seed: u64,
    epochs: usize,
    objective: f64,
    training_misclassified: usize,
    surrogate_regret: f64,
    rule_regret: f64,
    objectives: Vec<f64>,
}

pub fn owl(a: OwlArgs) -> Result<()> {
    let field = io::bound_field(&io::read_bounds(&a.input, a.tau)?, None)?;
    let cells = cells_from_field(&field);
    let mut cfg = TrainConfig::for_cells(&cells)?;
    cfg.lambda = a.lambda.unwrap_or(cfg.lambda);
    cfg.sigma = a.sigma.unwrap_or(cfg.sigma);
    cfg.max_epochs = a.max_epochs.unwrap_or(cfg.max_epochs);
    cfg.seed = a.seed;
    let fit = train_owl(&cells, &cfg)?;
    let f = &fit.function;
    let xs: Vec<Vec<f64>> = field.cells.iter().map(|c| c.x.clone()).collect();
    let misclassified =
        cells.iter().filter(|c| c.weight > 0.0 && (f.eval(&c.x) >= 0.0) != (c.label > 0.0)).count();
    let report = OwlReport {
        lambda: cfg.lambda,
        sigma: cfg.sigma,
        seed: cfg.seed,
        epochs: fit.objectives.len(),
        objective: fit.objectives.last().copied().unwrap_or(f64::NAN),
        training_misclassified: misclassified,
        surrogate_regret: surrogate_regret(f, &field),
        rule_regret: rule_regret(f, &field),
        objectives: fit.objectives.clone(),
    };
    io::write_json(&a.out, "model.json", f)?;
    io::write_json(&a.out, "policy.json", &predict_policy(f, &xs))?;
    io::write_json(&a.out, "owl_report.json", &report)?;
    println!("{}", a.out.join("model.json").display());
    Ok(())
}

pub fn tables(a: TablesArgs) -> Result<()> {
    const TAU: f64 = 0.25;
    for g in [1, 8] {
        let mut cfg = ExperimentConfig::new(TAU, a.n, a.reps, a.seed);
        cfg.k_none = a.k;
        cfg.k_si = a.k_si;
        simulate_one(&subgroup(g)?, &cfg, &a.out, &format!("table1_subgroup{g}_"))?;
    }
    let specs = (1..=8).map(|g| Ok((format!("subgroup{g}"), subgroup(g)?))).collect::<Result<Vec<_>>>()?;
    let rows = interval_table(&specs, &[TAU], a.k, a.k_interval)?;
    write_intervals_csv(&rows, io::create(&a.out, "intervals.csv")?)?;
    println!("{}", a.out.display());
    Ok(())
}
