use super::{LinearProgram, LpSolution, LpStatus, PivotRule, Sense, FEAS_TOL};
use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-7;
const HARRIS_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-10;
const DROP_TOL: f64 = 1e-14;
const DEGENERATE_RUN: usize = 50;
/// Relative size of the right-hand side perturbation used against stalling.
const PERTURB: f64 = 1e-7;

/// How an original variable is expressed through internal columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// x = offset + col
    Shift { col: usize, offset: f64 },
    /// x = offset - col
    Mirror { col: usize, offset: f64 },
    /// x = pos - neg
    Split { pos: usize, neg: usize },
}

impl VarMap {
    fn terms(self) -> ([(usize, f64); 2], usize, f64) {
        match self {
            VarMap::Shift { col, offset } => ([(col, 1.0), (0, 0.0)], 1, offset),
            VarMap::Mirror { col, offset } => ([(col, -1.0), (0, 0.0)], 1, offset),
            VarMap::Split { pos, neg } => ([(pos, 1.0), (neg, -1.0)], 2, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Eq(usize),
    Le(usize),
    Bound,
}

/// A feasible simplex tableau for a fixed constraint set.
///
/// Construction runs phase one. [`Workspace::optimize`] then runs phase two
/// for any objective, starting from the basis left by the previous call, so
/// a sequence of objectives over the same polytope shares the phase-one work.
#[derive(Debug, Clone)]
pub struct Workspace {
    rule: PivotRule,
    vars: Vec<VarMap>,
    rows: Vec<RowKind>,
    row_sign: Vec<f64>,
    /// Column that formed the identity in each row at start.
    unit_col: Vec<usize>,
    active: Vec<bool>,
    n_eq: usize,
    n_le: usize,
    /// Columns at or beyond this index are artificial and never enter.
    art_start: usize,
    width: usize,
    tab: Vec<f64>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    /// Signed right-hand sides as first placed in the tableau.
    rhs0: Vec<f64>,
    /// Cost of every column under the current objective.
    cost: Vec<f64>,
    /// The tableau as first built, for refactorization.
    initial: Vec<f64>,
    /// Feasible tableau, basis and row flags left by phase one.
    home: Option<(Vec<f64>, Vec<usize>, Vec<bool>)>,
    iterations: usize,
}

enum Outcome {
    Optimal,
    Unbounded,
}

impl Workspace {
    /// Builds the tableau and finds a feasible basis. Returns `Ok(None)` when
    /// the constraints are infeasible.
    pub fn new(lp: &LinearProgram, rule: PivotRule) -> Result<Option<Self>> {
        lp.validate()?;
        let n = lp.num_vars();

        let mut vars = Vec::with_capacity(n);
        let mut n_cols = 0usize;
        let mut box_rows: Vec<(usize, f64)> = Vec::new();
        for j in 0..n {
            let (lo, hi) = (lp.lower[j], lp.upper[j]);
            if lo.is_finite() {
                vars.push(VarMap::Shift { col: n_cols, offset: lo });
                if hi.is_finite() {
                    box_rows.push((n_cols, hi - lo));
                }
                n_cols += 1;
            } else if hi.is_finite() {
                vars.push(VarMap::Mirror { col: n_cols, offset: hi });
                n_cols += 1;
            } else {
                vars.push(VarMap::Split { pos: n_cols, neg: n_cols + 1 });
                n_cols += 2;
            }
        }
        let n_struct = n_cols;

        // Assemble rows as (coefficients over structural columns, rhs, kind).
        let mut raw: Vec<(Vec<f64>, f64, RowKind)> = Vec::new();
        let translate = |row: &[f64], rhs: f64| {
            let mut out = vec![0.0; n_struct];
            let mut b = rhs;
            for (j, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let (terms, len, offset) = vars[j].terms();
                for &(col, s) in &terms[..len] {
                    out[col] += a * s;
                }
                b -= a * offset;
            }
            (out, b)
        };
        for (i, row) in lp.eq_rows.iter().enumerate() {
            let (r, b) = translate(row, lp.eq_rhs[i]);
            raw.push((r, b, RowKind::Eq(i)));
        }
        for (i, row) in lp.le_rows.iter().enumerate() {
            let (r, b) = translate(row, lp.le_rhs[i]);
            raw.push((r, b, RowKind::Le(i)));
        }
        for &(col, cap) in &box_rows {
            let mut r = vec![0.0; n_struct];
            r[col] = 1.0;
            raw.push((r, cap, RowKind::Bound));
        }

        let m = raw.len();
        let n_slack = raw.iter().filter(|r| !matches!(r.2, RowKind::Eq(_))).count();
        let mut row_sign = vec![1.0; m];
        let mut needs_art = vec![false; m];
        for (i, (_, b, kind)) in raw.iter().enumerate() {
            if *b < 0.0 {
                row_sign[i] = -1.0;
            }
            needs_art[i] = matches!(kind, RowKind::Eq(_)) || row_sign[i] < 0.0;
        }
        let n_art = needs_art.iter().filter(|&&a| a).count();
        let art_start = n_struct + n_slack;
        let ncols = art_start + n_art;
        let width = ncols + 1;

        let mut tab = vec![0.0; m * width];
        let mut basis = vec![0; m];
        let mut unit_col = vec![0; m];
        let mut slack = n_struct;
        let mut art = art_start;
        for (i, (coefs, b, kind)) in raw.iter().enumerate() {
            let s = row_sign[i];
            let row = &mut tab[i * width..(i + 1) * width];
            for (dst, &a) in row.iter_mut().zip(coefs) {
                *dst = s * a;
            }
            row[ncols] = s * b;
            if !matches!(kind, RowKind::Eq(_)) {
                row[slack] = s;
                if !needs_art[i] {
                    basis[i] = slack;
                    unit_col[i] = slack;
                }
                slack += 1;
            }
            if needs_art[i] {
                row[art] = 1.0;
                basis[i] = art;
                unit_col[i] = art;
                art += 1;
            }
        }

        let rhs0 = raw.iter().zip(&row_sign).map(|(r, s)| s * r.1).collect();
        let mut ws = Workspace {
            rule,
            vars,
            rows: raw.iter().map(|r| r.2).collect(),
            row_sign,
            unit_col,
            active: vec![true; m],
            n_eq: lp.eq_rows.len(),
            n_le: lp.le_rows.len(),
            art_start,
            width,
            tab: tab.clone(),
            obj: vec![0.0; width],
            basis,
            rhs0,
            cost: vec![0.0; ncols],
            initial: tab,
            home: None,
            iterations: 0,
        };

        if n_art > 0 {
            // Phase one: minimize the sum of artificials.
            for c in &mut ws.cost[art_start..] {
                *c = 1.0;
            }
            for i in 0..m {
                if ws.basis[i] >= art_start {
                    for j in 0..width {
                        if j < art_start || j == ncols {
                            ws.obj[j] -= ws.tab[i * width + j];
                        }
                    }
                }
            }
            match ws.solve()? {
                Outcome::Optimal => {}
                Outcome::Unbounded => {
                    return Err(Error::LpFailure("phase one reported unbounded".into()))
                }
            }
            let scale = 1.0 + raw.iter().map(|r| r.1.abs()).fold(0.0, f64::max);
            let residual: f64 = (0..m)
                .filter(|&i| ws.basis[i] >= art_start)
                .map(|i| ws.tab[i * width + ncols].max(0.0))
                .sum();
            if residual > FEAS_TOL * scale {
                return Ok(None);
            }
            for c in &mut ws.cost {
                *c = 0.0;
            }
            ws.expel_artificials();
        }
        ws.home = Some((ws.tab.clone(), ws.basis.clone(), ws.active.clone()));
        Ok(Some(ws))
    }

    fn m(&self) -> usize {
        self.basis.len()
    }

    fn ncols(&self) -> usize {
        self.width - 1
    }

    fn expel_artificials(&mut self) {
        let w = self.width;
        for i in 0..self.m() {
            if self.basis[i] < self.art_start {
                continue;
            }
            let row = &self.tab[i * w..i * w + self.art_start];
            let best = row
                .iter()
                .enumerate()
                .filter(|(_, v)| v.abs() > PIVOT_TOL)
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(j, _)| j);
            match best {
                Some(q) => self.pivot(i, q),
                None => self.active[i] = false,
            }
        }
    }

    fn select_entering(&self, bland: bool) -> Option<usize> {
        let d = &self.obj[..self.art_start];
        if bland {
            d.iter().position(|&v| v < -COST_TOL)
        } else {
            let mut best = None;
            let mut most = -COST_TOL;
            for (j, &v) in d.iter().enumerate() {
                if v < most {
                    most = v;
                    best = Some(j);
                }
            }
            best
        }
    }

    fn select_leaving(&self, q: usize, bland: bool) -> Option<(usize, f64)> {
        let w = self.width;
        let rhs = self.ncols();
        // Harris' two-pass test: relax every ratio by a small tolerance, then
        // take the largest pivot among rows within the relaxed minimum.
        let relax = if bland { 0.0 } else { HARRIS_TOL };
        let mut bound = f64::INFINITY;
        for i in 0..self.m() {
            let a = self.tab[i * w + q];
            if self.active[i] && a > PIVOT_TOL {
                let r = (self.tab[i * w + rhs].max(0.0) + relax) / a;
                bound = bound.min(r);
            }
        }
        if !bound.is_finite() {
            return None;
        }
        let bound = bound + 1e-12 * (1.0 + bound);
        let mut chosen: Option<usize> = None;
        for i in 0..self.m() {
            let a = self.tab[i * w + q];
            if !(self.active[i] && a > PIVOT_TOL) {
                continue;
            }
            let r = self.tab[i * w + rhs].max(0.0) / a;
            if r > bound {
                continue;
            }
            chosen = match chosen {
                None => Some(i),
                Some(c) if bland && self.basis[i] < self.basis[c] => Some(i),
                Some(c) if !bland && a > self.tab[c * w + q] => Some(i),
                keep => keep,
            };
        }
        chosen.map(|i| (i, self.tab[i * w + rhs].max(0.0) / self.tab[i * w + q]))
    }

    /// Primal simplex on a perturbed right-hand side, then exact restoration
    /// with dual simplex steps and a final primal pass.
    fn solve(&mut self) -> Result<Outcome> {
        self.perturb();
        if let Outcome::Unbounded = self.run(false)? {
            self.restore();
            return Ok(Outcome::Unbounded);
        }
        self.restore();
        if self.drifted() {
            self.refactor();
            self.restore();
        }
        if self.dual_cleanup().is_err() {
            self.refactor();
            self.restore();
            self.dual_cleanup()?;
        }
        self.run(true)
    }

    /// Basic values far below zero after restoring the exact right-hand side
    /// point to rounding error in the tableau rather than the perturbation.
    fn drifted(&self) -> bool {
        let w = self.width;
        let rhs = self.ncols();
        let scale = self.rhs0.iter().fold(1.0f64, |a, b| a.max(b.abs()));
        let floor = -1e3 * PERTURB * scale;
        (0..self.m()).any(|i| self.active[i] && self.tab[i * w + rhs] < floor)
    }

    /// Rebuilds the tableau for the current basis from the initial one,
    /// discarding accumulated rounding error.
    fn refactor(&mut self) {
        let w = self.width;
        let m = self.m();
        let was_active: Vec<(usize, bool)> = self.basis.iter().copied().zip(self.active.iter().copied()).collect();
        let mut tab = self.initial.clone();
        let mut assigned = vec![false; m];
        let mut basis = vec![usize::MAX; m];
        for &(q, _) in &was_active {
            let mut best = None;
            let mut size = PIVOT_TOL;
            for i in 0..m {
                let a = tab[i * w + q].abs();
                if !assigned[i] && a > size {
                    size = a;
                    best = Some(i);
                }
            }
            let Some(p) = best else {
                // singular: keep the drifted tableau
                return;
            };
            assigned[p] = true;
            basis[p] = q;
            let piv = tab[p * w + q];
            for v in &mut tab[p * w..(p + 1) * w] {
                *v /= piv;
            }
            let prow: Vec<f64> = tab[p * w..(p + 1) * w].to_vec();
            let nz: Vec<usize> = (0..w).filter(|&j| prow[j] != 0.0).collect();
            for i in 0..m {
                if i == p {
                    continue;
                }
                let f = tab[i * w + q];
                if f != 0.0 {
                    for &j in &nz {
                        let v = tab[i * w + j] - f * prow[j];
                        tab[i * w + j] = if v.abs() < DROP_TOL { 0.0 } else { v };
                    }
                    tab[i * w + q] = 0.0;
                }
            }
        }
        for i in 0..m {
            self.active[i] = was_active.iter().find(|(q, _)| *q == basis[i]).map(|x| x.1).unwrap_or(true);
        }
        self.tab = tab;
        self.basis = basis;
        let ncols = self.ncols();
        for j in 0..w {
            let c = if j < ncols { self.cost[j] } else { 0.0 };
            let cb: f64 = (0..m).map(|i| self.cost[self.basis[i]] * self.tab[i * w + j]).sum();
            self.obj[j] = c - cb;
        }
    }

    fn perturb(&mut self) {
        let w = self.width;
        let rhs = self.ncols();
        let scale = self.rhs0.iter().fold(1.0f64, |a, b| a.max(b.abs()));
        let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
        for i in 0..self.m() {
            // splitmix64 step for a fixed, platform-independent sequence
            h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = h;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^= z >> 31;
            let u = (z >> 11) as f64 / (1u64 << 53) as f64;
            if self.active[i] {
                self.tab[i * w + rhs] += PERTURB * scale * (0.5 + 0.5 * u);
            }
        }
    }

    /// Recomputes basic values from the original right-hand side.
    fn restore(&mut self) {
        let w = self.width;
        let rhs = self.ncols();
        let m = self.m();
        for i in 0..m {
            let row = &self.tab[i * w..(i + 1) * w];
            let v: f64 = (0..m).map(|r| row[self.unit_col[r]] * self.rhs0[r]).sum();
            self.tab[i * w + rhs] = if v.abs() < DROP_TOL { 0.0 } else { v };
        }
        let z: f64 = (0..m).map(|i| self.cost[self.basis[i]] * self.tab[i * w + rhs]).sum();
        self.obj[rhs] = -z;
    }

    /// Dual simplex steps until every basic value is nonnegative.
    fn dual_cleanup(&mut self) -> Result<()> {
        let w = self.width;
        let rhs = self.ncols();
        let limit = 10 * self.m() + 1000;
        for _ in 0..limit {
            let mut leave = None;
            let mut worst = -FEAS_TOL * 1e-3;
            for i in 0..self.m() {
                let v = self.tab[i * w + rhs];
                if self.active[i] && v < worst {
                    worst = v;
                    leave = Some(i);
                }
            }
            let Some(p) = leave else {
                for i in 0..self.m() {
                    let v = &mut self.tab[i * w + rhs];
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                return Ok(());
            };
            let row = &self.tab[p * w..p * w + self.art_start];
            let mut bound = f64::INFINITY;
            for (j, &a) in row.iter().enumerate() {
                if a < -PIVOT_TOL {
                    bound = bound.min((self.obj[j].max(0.0) + HARRIS_TOL) / -a);
                }
            }
            let mut enter: Option<(usize, f64)> = None;
            for (j, &a) in row.iter().enumerate() {
                if a < -PIVOT_TOL && self.obj[j].max(0.0) / -a <= bound && enter.is_none_or(|(_, b)| -a > b) {
                    enter = Some((j, -a));
                }
            }
            match enter {
                Some((q, _)) => {
                    self.pivot(p, q);
                    self.iterations += 1;
                }
                None if worst > -FEAS_TOL => self.tab[p * w + rhs] = 0.0,
                None => {
                    return Err(Error::LpFailure(format!(
                        "lost feasibility after perturbation (basic value {worst:.3e})"
                    )))
                }
            }
        }
        Err(Error::LpFailure("dual cleanup did not converge".into()))
    }

    fn run(&mut self, force_bland: bool) -> Result<Outcome> {
        let limit = 50 * (self.m() + self.ncols()) + 10_000;
        let mut degenerate = 0usize;
        let mut steps = 0usize;
        loop {
            let bland = force_bland
                || match self.rule {
                    PivotRule::Bland => true,
                    PivotRule::Dantzig => degenerate > DEGENERATE_RUN,
                };
            let Some(q) = self.select_entering(bland) else {
                return Ok(Outcome::Optimal);
            };
            let Some((p, ratio)) = self.select_leaving(q, bland) else {
                return Ok(Outcome::Unbounded);
            };
            if ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(p, q);
            self.iterations += 1;
            steps += 1;
            if steps > limit {
                return Err(Error::LpFailure(format!(
                    "iteration limit {limit} reached"
                )));
            }
        }
    }

    fn pivot(&mut self, p: usize, q: usize) {
        let w = self.width;
        let piv = self.tab[p * w + q];
        {
            let row = &mut self.tab[p * w..(p + 1) * w];
            for v in row.iter_mut() {
                *v /= piv;
            }
            row[q] = 1.0;
        }
        let nz: Vec<usize> = (0..w).filter(|&j| self.tab[p * w + j] != 0.0).collect();
        let (before, rest) = self.tab.split_at_mut(p * w);
        let (prow, after) = rest.split_at_mut(w);
        let update = |row: &mut [f64]| {
            let f = row[q];
            if f == 0.0 {
                return;
            }
            for &j in &nz {
                let v = row[j] - f * prow[j];
                row[j] = if v.abs() < DROP_TOL { 0.0 } else { v };
            }
            row[q] = 0.0;
        };
        for row in before.chunks_exact_mut(w) {
            update(row);
        }
        for row in after.chunks_exact_mut(w) {
            update(row);
        }
        update(&mut self.obj);
        self.basis[p] = q;
    }

    /// Reduced costs of the current basis under `self.cost`.
    fn price(&mut self) {
        let w = self.width;
        let ncols = self.ncols();
        self.obj[..ncols].copy_from_slice(&self.cost);
        self.obj[ncols] = 0.0;
        for i in 0..self.m() {
            let cb = self.cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.tab[i * w..(i + 1) * w];
                for (o, &t) in self.obj.iter_mut().zip(row) {
                    *o -= cb * t;
                }
            }
        }
    }

    /// Runs phase two for objective `c` (over the original variables).
    pub fn optimize(&mut self, c: &[f64], sense: Sense) -> Result<LpSolution> {
        let n = self.vars.len();
        if c.len() != n {
            return Err(Error::MalformedProgram(format!(
                "objective has {} entries, expected {n}",
                c.len()
            )));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::MalformedProgram("non-finite objective coefficient".into()));
        }
        let flip = match sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let w = self.width;
        let ncols = self.ncols();
        let mut cost = vec![0.0; ncols];
        for (j, map) in self.vars.iter().enumerate() {
            let (terms, len, _) = map.terms();
            for &(col, s) in &terms[..len] {
                cost[col] += flip * c[j] * s;
            }
        }
        self.cost.copy_from_slice(&cost);
        self.price();
        let start = self.iterations;
        let outcome = match self.solve() {
            Ok(o) => o,
            Err(e) => {
                // a warm start can inherit an ill-conditioned basis; retry
                // from the phase-one basis
                let Some((tab, basis, active)) = self.home.clone() else {
                    return Err(e);
                };
                self.tab = tab;
                self.basis = basis;
                self.active = active;
                self.price();
                self.solve()?
            }
        };
        let iterations = self.iterations - start;
        if let Outcome::Unbounded = outcome {
            return Ok(LpSolution {
                status: LpStatus::Unbounded,
                x: Vec::new(),
                objective: flip * f64::NEG_INFINITY,
                eq_duals: Vec::new(),
                le_duals: Vec::new(),
                iterations,
            });
        }

        let mut col_val = vec![0.0; ncols];
        for i in 0..self.m() {
            col_val[self.basis[i]] = self.tab[i * w + ncols].max(0.0);
        }
        let x: Vec<f64> = self
            .vars
            .iter()
            .map(|map| match *map {
                VarMap::Shift { col, offset } => offset + col_val[col],
                VarMap::Mirror { col, offset } => offset - col_val[col],
                VarMap::Split { pos, neg } => col_val[pos] - col_val[neg],
            })
            .collect();
        let objective = c.iter().zip(&x).map(|(a, b)| a * b).sum();

        let mut eq_duals = vec![0.0; self.n_eq];
        let mut le_duals = vec![0.0; self.n_le];
        for i in 0..self.m() {
            let y = -self.obj[self.unit_col[i]] * self.row_sign[i] * flip;
            match self.rows[i] {
                RowKind::Eq(r) => eq_duals[r] = if self.active[i] { y } else { 0.0 },
                RowKind::Le(r) => le_duals[r] = y,
                RowKind::Bound => {}
            }
        }
        Ok(LpSolution {
            status: LpStatus::Optimal,
            x,
            objective,
            eq_duals,
            le_duals,
            iterations,
        })
    }
}
