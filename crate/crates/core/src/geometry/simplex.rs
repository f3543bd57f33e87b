//! Dense two-phase tableau simplex for the small linear programs used by the
//! geometry and weight-solver code.
//!
//! Problems are `maximize c.x` subject to row constraints and `x >= 0`. Sizes
//! are a handful of rows and at most a few dozen columns, so the tableau is
//! kept dense and rebuilt per call.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
struct Row {
    coeffs: Vec<f64>,
    rel: Relation,
    rhs: f64,
}

/// `maximize objective . x` over `x >= 0` and the added rows.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    num_vars: usize,
    objective: Vec<f64>,
    rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    /// Phase one could not push the artificial variables below tolerance;
    /// `residual` is the smallest total constraint violation it found.
    Infeasible { residual: f64 },
    Unbounded,
}

const PIVOT_EPS: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;
// Dantzig pricing until this many pivots, Bland's rule afterwards.
const BLAND_AFTER: usize = 200;
const MAX_PIVOTS: usize = 10_000;

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: vec![0.0; num_vars],
            rows: Vec::new(),
        }
    }

    pub fn set_objective(&mut self, c: Vec<f64>) -> &mut Self {
        assert_eq!(c.len(), self.num_vars);
        self.objective = c;
        self
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, rel: Relation, rhs: f64) -> &mut Self {
        assert_eq!(coeffs.len(), self.num_vars);
        self.rows.push(Row { coeffs, rel, rhs });
        self
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn solve(&self) -> LpOutcome {
        Tableau::build(self).run(&self.objective)
    }
}

struct Tableau {
    m: usize,
    // structural + slack/surplus + artificial
    width: usize,
    num_vars: usize,
    first_artificial: usize,
    // m rows of (width + 1), last entry is the rhs
    cells: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let m = lp.rows.len();
        let num_vars = lp.num_vars;
        let num_slack = lp
            .rows
            .iter()
            .filter(|r| r.rel != Relation::Eq)
            .count();
        let num_art = lp.rows.iter().filter(|r| r.rel != Relation::Le || r.rhs < 0.0).count();
        let first_slack = num_vars;
        let first_artificial = num_vars + num_slack;
        let width = first_artificial + num_art;
        let stride = width + 1;
        let mut cells = vec![0.0; m * stride];
        let mut basis = vec![0; m];
        let (mut next_slack, mut next_art) = (first_slack, first_artificial);
        for (r, row) in lp.rows.iter().enumerate() {
            // flip rows so every rhs is non-negative
            let sign = if row.rhs < 0.0 { -1.0 } else { 1.0 };
            let rel = match (row.rel, sign < 0.0) {
                (Relation::Le, true) => Relation::Ge,
                (Relation::Ge, true) => Relation::Le,
                (rel, _) => rel,
            };
            let line = &mut cells[r * stride..(r + 1) * stride];
            for (dst, &c) in line.iter_mut().zip(&row.coeffs) {
                *dst = sign * c;
            }
            line[width] = sign * row.rhs;
            match rel {
                Relation::Le => {
                    line[next_slack] = 1.0;
                    if row.rel == Relation::Le && row.rhs >= 0.0 {
                        basis[r] = next_slack;
                    } else {
                        // flipped Ge with rhs 0 never lands here; keep an artificial anyway
                        line[next_art] = 1.0;
                        basis[r] = next_art;
                        next_art += 1;
                    }
                    next_slack += 1;
                }
                Relation::Ge => {
                    line[next_slack] = -1.0;
                    next_slack += 1;
                    line[next_art] = 1.0;
                    basis[r] = next_art;
                    next_art += 1;
                }
                Relation::Eq => {
                    line[next_art] = 1.0;
                    basis[r] = next_art;
                    next_art += 1;
                }
            }
        }
        // unused artificial slots (from the Le/negative-rhs accounting) stay as zero columns
        Self {
            m,
            width,
            num_vars,
            first_artificial,
            cells,
            basis,
        }
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.cells[r * (self.width + 1) + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.width)
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let stride = self.width + 1;
        let inv = 1.0 / self.at(pr, pc);
        for c in 0..stride {
            self.cells[pr * stride + c] *= inv;
        }
        self.cells[pr * stride + pc] = 1.0;
        for r in 0..self.m {
            if r == pr {
                continue;
            }
            let f = self.cells[r * stride + pc];
            if f == 0.0 {
                continue;
            }
            for c in 0..stride {
                let v = self.cells[pr * stride + c];
                if v != 0.0 {
                    self.cells[r * stride + c] -= f * v;
                }
            }
            self.cells[r * stride + pc] = 0.0;
        }
        self.basis[pr] = pc;
    }

    /// Maximizes `cost . x` over the current tableau, entering only columns
    /// with `allowed(col)`. Returns `false` when unbounded.
    fn optimize(&mut self, cost: &[f64], allowed: impl Fn(usize) -> bool) -> bool {
        let scale = cost.iter().fold(1.0f64, |s, c| s.max(c.abs()));
        let opt_tol = 1e-11 * scale;
        let mut reduced = vec![0.0; self.width];
        for pivots in 0..MAX_PIVOTS {
            // reduced cost d_j = c_j - c_B . column_j
            for (j, d) in reduced.iter_mut().enumerate() {
                *d = cost[j];
            }
            for r in 0..self.m {
                let cb = cost[self.basis[r]];
                if cb != 0.0 {
                    for (j, d) in reduced.iter_mut().enumerate() {
                        *d -= cb * self.at(r, j);
                    }
                }
            }
            let bland = pivots >= BLAND_AFTER;
            let mut entering = None;
            let mut best = opt_tol;
            for (j, &d) in reduced.iter().enumerate() {
                if d > best && allowed(j) && !self.basis.contains(&j) {
                    entering = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(pc) = entering else {
                return true;
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let a = self.at(r, pc);
                if a > PIVOT_EPS {
                    let ratio = self.rhs(r) / a;
                    let better = match leave {
                        None => true,
                        Some((lr, lratio)) => {
                            ratio < lratio - 1e-14
                                || (ratio <= lratio + 1e-14 && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((pr, _)) = leave else {
                return false;
            };
            self.pivot(pr, pc);
        }
        true
    }

    fn objective_value(&self, cost: &[f64]) -> f64 {
        (0..self.m).map(|r| cost[self.basis[r]] * self.rhs(r)).sum()
    }

    fn run(mut self, objective: &[f64]) -> LpOutcome {
        let art = self.first_artificial;
        if self.width > art {
            let mut phase1 = vec![0.0; self.width];
            for c in phase1.iter_mut().skip(art) {
                *c = -1.0;
            }
            self.optimize(&phase1, |_| true);
            let residual = -self.objective_value(&phase1);
            if residual > FEAS_TOL {
                return LpOutcome::Infeasible { residual };
            }
            // drive zero-level artificials out of the basis where possible;
            // rows where that fails are redundant and stay inert
            for r in 0..self.m {
                if self.basis[r] >= art {
                    let col = (0..art)
                        .filter(|c| !self.basis.contains(c))
                        .max_by(|&x, &y| self.at(r, x).abs().total_cmp(&self.at(r, y).abs()));
                    if let Some(c) = col {
                        if self.at(r, c).abs() > 1e-9 {
                            self.pivot(r, c);
                        }
                    }
                }
            }
        }
        let mut cost = vec![0.0; self.width];
        cost[..self.num_vars].copy_from_slice(objective);
        if !self.optimize(&cost, |j| j < art) {
            return LpOutcome::Unbounded;
        }
        let mut x = vec![0.0; self.num_vars];
        for r in 0..self.m {
            let b = self.basis[r];
            if b < self.num_vars {
                x[b] = self.rhs(r).max(0.0);
            }
        }
        let value = objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        LpOutcome::Optimal { x, value }
    }
}
