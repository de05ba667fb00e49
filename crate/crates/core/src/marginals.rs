//! Marginal outcome distributions: empirical quantiles, kernel-weighted
//! conditional CDFs and their quantile curves.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack used when snapping probabilities onto grid boundaries.
const GRID_EPS: f64 = 1e-12;

/// One observation `(y, d, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub y: f64,
    pub d: u8,
    pub x: Vec<f64>,
}

impl Sample {
    pub fn new(y: f64, d: u8, x: Vec<f64>) -> Self {
        Self { y, d, x }
    }
}

/// Checks the sample invariants and returns the covariate dimension.
pub fn validate_samples(data: &[Sample]) -> Result<usize> {
    let first = data.first().ok_or(Error::NoObservations)?;
    let p = first.x.len();
    for (i, s) in data.iter().enumerate() {
        if s.d > 1 {
            return Err(Error::Input(format!("row {}: treatment must be 0 or 1, got {}", i + 1, s.d)));
        }
        if !s.y.is_finite() {
            return Err(Error::Input(format!("row {}: outcome is not finite", i + 1)));
        }
        if s.x.len() != p {
            return Err(Error::Input(format!(
                "row {}: expected {p} covariates, found {}",
                i + 1,
                s.x.len()
            )));
        }
    }
    Ok(p)
}

/// Reads `y,d,x1,...,xp` CSV. Row numbers in errors count data rows from 1.
pub fn read_samples_csv<R: Read>(reader: R) -> Result<Vec<Sample>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Input(format!("unreadable header: {e}")))?
        .clone();
    if headers.len() < 2 || &headers[0] != "y" || &headers[1] != "d" {
        return Err(Error::Input("header must start with `y,d`".into()));
    }
    for (c, name) in headers.iter().enumerate().skip(2) {
        if name != format!("x{}", c - 1) {
            return Err(Error::Input(format!("column {}: expected header x{}, found `{name}`", c + 1, c - 1)));
        }
    }
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| Error::Input(format!("row {row}: {e}")))?;
        if rec.len() != headers.len() {
            return Err(Error::Input(format!(
                "row {row}: expected {} columns, found {}",
                headers.len(),
                rec.len()
            )));
        }
        let num = |c: usize| -> Result<f64> {
            let v: f64 = rec[c]
                .parse()
                .map_err(|_| Error::Input(format!("row {row}, column {}: `{}` is not a number", c + 1, &rec[c])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Input(format!("row {row}, column {}: value is not finite", c + 1)))
            }
        };
        let y = num(0)?;
        let d = match &rec[1] {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::Input(format!("row {row}, column 2: treatment must be 0 or 1, got `{other}`"))),
        };
        let x = (2..rec.len()).map(num).collect::<Result<Vec<_>>>()?;
        out.push(Sample { y, d, x });
    }
    if out.is_empty() {
        return Err(Error::NoObservations);
    }
    Ok(out)
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("probability {tau} is outside (0, 1)")))
    }
}

/// Index of the inf-type quantile in a sorted sample of size `n`.
fn quantile_index(n: usize, tau: f64) -> usize {
    let pos = (tau * n as f64 - 1e-9).ceil();
    (pos.max(1.0) as usize).min(n) - 1
}

/// `inf{y : F(y) >= tau}` for an already sorted sample.
pub fn quantile_sorted(sorted: &[f64], tau: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::NoObservations);
    }
    check_tau(tau)?;
    Ok(sorted[quantile_index(sorted.len(), tau)])
}

/// `inf{y : F_n(y) >= tau}` of the empirical distribution of `values`.
pub fn empirical_quantile(values: &[f64], tau: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::NoObservations);
    }
    check_tau(tau)?;
    let mut v = values.to_vec();
    let idx = quantile_index(v.len(), tau);
    let (_, q, _) = v.select_nth_unstable_by(idx, f64::total_cmp);
    Ok(*q)
}

/// Probabilities `(2i - 1) / (2k)`, `i = 1..=k`.
pub fn midpoint_grid(k: usize) -> Vec<f64> {
    (1..=k).map(|i| (2 * i - 1) as f64 / (2 * k) as f64).collect()
}

/// Empirical quantiles of `values` at the midpoint probabilities.
pub fn make_y_grid(values: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidArgument("grid size k must be positive".into()));
    }
    if values.is_empty() {
        return Err(Error::NoObservations);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    midpoint_grid(k).into_iter().map(|u| quantile_sorted(&sorted, u)).collect()
}

/// Scott's rule `h_j = sd_j * n^(-1/(p+4))`, one bandwidth per covariate.
pub fn scott_bandwidth(x: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidArgument("bandwidth needs at least two observations".into()));
    }
    let p = x[0].len();
    if x.iter().any(|r| r.len() != p) {
        return Err(Error::InvalidArgument("ragged covariate matrix".into()));
    }
    let factor = (n as f64).powf(-1.0 / (p as f64 + 4.0));
    (0..p)
        .map(|j| {
            let mean = x.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            let var = x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let sd = var.sqrt();
            if sd > 0.0 && sd.is_finite() {
                Ok(sd * factor)
            } else {
                Err(Error::ZeroVariance(j))
            }
        })
        .collect()
}

/// Pool-adjacent-violators projection onto nondecreasing sequences.
pub fn isotonic(values: &[f64]) -> Vec<f64> {
    // (sum, count) blocks
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s2, c2) = blocks[blocks.len() - 1];
            let (s1, c1) = blocks[blocks.len() - 2];
            if s1 / c1 as f64 > s2 / c2 as f64 {
                blocks.pop();
                let last = blocks.len() - 1;
                blocks[last] = (s1 + s2, c1 + c2);
            } else {
                break;
            }
        }
    }
    blocks.into_iter().flat_map(|(s, c)| std::iter::repeat_n(s / c as f64, c)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalCdf {
    pub y_grid: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ConditionalCdf {
    pub fn new(y_grid: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if y_grid.len() != probs.len() || y_grid.is_empty() {
            return Err(Error::InvalidArgument("CDF grid and probabilities differ in length".into()));
        }
        if y_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("CDF grid must be strictly increasing".into()));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || probs.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument("CDF values must be nondecreasing in [0, 1]".into()));
        }
        Ok(Self { y_grid, probs })
    }

    /// Step evaluation `F(y) = probs_j` for the largest `y_j <= y`.
    pub fn eval(&self, y: f64) -> f64 {
        let idx = self.y_grid.partition_point(|&g| g <= y);
        if idx == 0 {
            0.0
        } else {
            self.probs[idx - 1]
        }
    }
}

/// Kernel-weighted estimate of `P[Y < y_j | X = x0]` with a product Gaussian
/// kernel, rearranged to be monotone and clipped to `[0, 1]`.
///
/// `y_grid` is deduplicated (it typically comes from [`make_y_grid`], which
/// repeats values on discrete outcomes).
pub fn kernel_conditional_cdf(data: &[Sample], x0: &[f64], y_grid: &[f64], h: &[f64]) -> Result<ConditionalCdf> {
    if data.is_empty() {
        return Err(Error::NoObservations);
    }
    let p = x0.len();
    if h.len() != p || data.iter().any(|s| s.x.len() != p) {
        return Err(Error::InvalidArgument("covariate dimension mismatch".into()));
    }
    if h.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument("bandwidths must be positive".into()));
    }
    let mut grid = y_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty outcome grid".into()));
    }

    let mut weighted: Vec<(f64, f64)> = data
        .iter()
        .map(|s| {
            let z2: f64 = s.x.iter().zip(x0).zip(h).map(|((xi, x0j), hj)| ((xi - x0j) / hj).powi(2)).sum();
            (s.y, (-0.5 * z2).exp())
        })
        .collect();
    let total: f64 = weighted.iter().map(|w| w.1).sum();
    if !(total > 0.0) {
        return Err(Error::OutsideSupport);
    }
    weighted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut probs = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    let mut next = 0;
    for &yj in &grid {
        while next < weighted.len() && weighted[next].0 < yj {
            acc += weighted[next].1;
            next += 1;
        }
        probs.push(acc / total);
    }
    let probs = isotonic(&probs).into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Ok(ConditionalCdf { y_grid: grid, probs })
}

/// Generalized inverse of `cdf` on `u_grid`.
///
/// Returns `min{y_j : F(y_j) >= u}`, or the largest grid value when the CDF
/// never reaches `u` on the grid.
pub fn curve_from_cdf(cdf: &ConditionalCdf, u_grid: &[f64]) -> Result<QuantileCurve> {
    let last = *cdf.y_grid.last().ok_or(Error::NoObservations)?;
    let values = u_grid
        .iter()
        .map(|&u| {
            let idx = cdf.probs.partition_point(|&p| p < u);
            cdf.y_grid.get(idx).copied().unwrap_or(last)
        })
        .collect();
    QuantileCurve::new(u_grid.to_vec(), values)
}

/// A quantile function tabulated on a probability grid in `(0, 1)`.
///
/// Off the grid the curve is read as a discrete distribution: value `i`
/// carries the probability between the midpoints that surround `u_i`
/// (mass `1/k` each on the midpoint grid).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileCurve {
    pub u_grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl QuantileCurve {
    pub fn new(u_grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if u_grid.is_empty() || u_grid.len() != values.len() {
            return Err(Error::InvalidArgument("quantile grid and values differ in length".into()));
        }
        if u_grid.iter().any(|&u| !(u > 0.0 && u < 1.0)) || u_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("quantile grid must be strictly increasing inside (0, 1)".into()));
        }
        if values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument("quantile values must be finite and nondecreasing".into()));
        }
        Ok(Self { u_grid, values })
    }

    /// Curve on the `k`-point midpoint grid with `values[i] = f(u_i)`.
    pub fn from_fn(k: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let grid = midpoint_grid(k);
        let values = grid.iter().map(|&u| f(u)).collect();
        Self::new(grid, values)
    }

    /// Empirical quantiles of `values` on the `k`-point midpoint grid.
    pub fn empirical(values: &[f64], k: usize) -> Result<Self> {
        Self::new(midpoint_grid(k), make_y_grid(values, k)?)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_midpoint_grid(&self) -> bool {
        let k = self.len() as f64;
        self.u_grid
            .iter()
            .enumerate()
            .all(|(i, &u)| (u - (2 * i + 1) as f64 / (2.0 * k)).abs() < GRID_EPS)
    }

    /// Interior cell boundaries `b_1 < ... < b_{k-1}`.
    fn boundaries(&self) -> Vec<f64> {
        let k = self.len();
        if self.is_midpoint_grid() {
            (1..k).map(|i| i as f64 / k as f64).collect()
        } else {
            self.u_grid.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
        }
    }

    /// Lower edge of the probability cell of value `i`.
    pub fn cell_start(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            self.boundaries()[i - 1]
        }
    }

    /// Left-continuous quantile `Q(p)`; `p <= 0` maps to the first value.
    pub fn quantile_at(&self, p: f64) -> f64 {
        let b = self.boundaries();
        self.values[b.partition_point(|&x| x < p - GRID_EPS)]
    }

    /// Right-continuous quantile `Q(p+)`; `p >= 1` maps to the last value.
    pub fn quantile_right(&self, p: f64) -> f64 {
        let b = self.boundaries();
        self.values[b.partition_point(|&x| x <= p + GRID_EPS)]
    }

    /// Values of the curve read at the `k`-point midpoint grid.
    pub fn resample(&self, k: usize) -> Result<Self> {
        if k == self.len() && self.is_midpoint_grid() {
            return Ok(self.clone());
        }
        let b = self.boundaries();
        let grid = midpoint_grid(k);
        let values = grid.iter().map(|&u| self.values[b.partition_point(|&x| x < u - GRID_EPS)]).collect();
        Self::new(grid, values)
    }

    pub fn shifted(&self, a: f64) -> Self {
        Self {
            u_grid: self.u_grid.clone(),
            values: self.values.iter().map(|v| v + a).collect(),
        }
    }

    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        Self::new(self.u_grid.clone(), self.values.iter().map(|v| v * lambda).collect())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Input(e.to_string());
        w.write_record(["u", "value"]).map_err(io)?;
        for (u, v) in self.u_grid.iter().zip(&self.values) {
            w.write_record([u.to_string(), v.to_string()]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Input(e.to_string()))
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut u = Vec::new();
        let mut v = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Input(format!("row {}: {e}", r + 1)))?;
            let parse = |c: usize| -> Result<f64> {
                rec.get(c)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::Input(format!("row {}, column {}: not a number", r + 1, c + 1)))
            };
            u.push(parse(0)?);
            v.push(parse(1)?);
        }
        Self::new(u, v)
    }
}
