//! Dense two-phase primal simplex for linear programs of the form
//!
//! `min c'x  subject to  A x <= b,  x >= 0`.
//!
//! Rows with negative right-hand sides receive artificial variables and a
//! phase-1 feasibility solve. Pivoting uses the most-negative reduced cost
//! with lowest-index tie-breaking, and switches permanently to Bland's rule
//! when the objective stalls, so the solver terminates deterministically on
//! degenerate programs. All arithmetic is plain `f64` with fixed tolerances;
//! identical inputs produce identical pivot sequences and output bits.

use nalgebra::DMatrix;

/// Reduced costs below `-COST_TOL` are considered improving.
const COST_TOL: f64 = 1e-9;
/// Entries below `PIVOT_TOL` in absolute value are not eligible pivots.
const PIVOT_TOL: f64 = 1e-11;
/// Phase-1 objective above this value certifies infeasibility.
const FEAS_TOL: f64 = 1e-8;
/// Consecutive non-improving pivots before switching to Bland's rule.
const STALL_LIMIT: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    /// Optimal values of the structural variables.
    pub x: Vec<f64>,
    /// Objective value `c'x` at the optimum.
    pub objective: f64,
    /// Total simplex pivots across both phases.
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpError {
    /// No feasible point; carries the residual infeasibility from phase 1.
    Infeasible { residual: f64 },
    /// The objective is unbounded below on the feasible set.
    Unbounded,
    /// Pivot limit exhausted (should not happen with Bland's rule; kept as a
    /// hard safety net).
    IterationLimit,
}

impl std::fmt::Display for LpError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LpError::Infeasible { residual } => {
                write!(f, "linear program is infeasible (phase-1 residual {residual:.3e})")
            }
            LpError::Unbounded => write!(f, "linear program is unbounded"),
            LpError::IterationLimit => write!(f, "simplex iteration limit exceeded"),
        }
    }
}

impl std::error::Error for LpError {}

struct Tableau {
    /// `m` constraint rows, each of length `width + 1` (last entry = rhs).
    rows: Vec<Vec<f64>>,
    /// Objective (reduced-cost) row of length `width + 1`; the last entry
    /// holds the negated objective value.
    obj: Vec<f64>,
    basis: Vec<usize>,
    width: usize,
    /// Columns the entering rule must skip (artificials in phase 2).
    banned: Vec<bool>,
    bland: bool,
    stall: usize,
    iterations: usize,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let inv = 1.0 / self.rows[row][col];
        for v in self.rows[row].iter_mut() {
            *v *= inv;
        }
        // Re-normalize the pivot entry exactly.
        self.rows[row][col] = 1.0;
        for r in 0..self.rows.len() {
            if r != row {
                let factor = self.rows[r][col];
                if factor != 0.0 {
                    let (pivot_row, target_row) = if r < row {
                        let (a, b) = self.rows.split_at_mut(row);
                        (&b[0], &mut a[r])
                    } else {
                        let (a, b) = self.rows.split_at_mut(r);
                        (&a[row], &mut b[0])
                    };
                    for (t, p) in target_row.iter_mut().zip(pivot_row.iter()) {
                        *t -= factor * p;
                    }
                    self.rows[r][col] = 0.0;
                }
            }
        }
        let factor = self.obj[col];
        if factor != 0.0 {
            let pivot_row = &self.rows[row];
            for (t, p) in self.obj.iter_mut().zip(pivot_row.iter()) {
                *t -= factor * p;
            }
            self.obj[col] = 0.0;
        }
        self.basis[row] = col;
        self.iterations += 1;
    }

    /// Entering column or `None` when optimal.
    fn entering(&self) -> Option<usize> {
        if self.bland {
            (0..self.width).find(|&j| !self.banned[j] && self.obj[j] < -COST_TOL)
        } else {
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.width {
                if !self.banned[j] && self.obj[j] < -COST_TOL {
                    match best {
                        Some((_, v)) if self.obj[j] >= v => {}
                        _ => best = Some((j, self.obj[j])),
                    }
                }
            }
            best.map(|(j, _)| j)
        }
    }

    /// Leaving row by the minimum-ratio test; ties break on the smallest
    /// basis column index (anti-cycling together with Bland's entering rule).
    fn leaving(&self, col: usize) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.rows.len() {
            let a = self.rows[i][col];
            if a > PIVOT_TOL {
                let ratio = self.rows[i][self.width].max(0.0) / a;
                match best {
                    None => best = Some((i, ratio)),
                    Some((bi, bv)) => {
                        if ratio < bv - 1e-12
                            || ((ratio - bv).abs() <= 1e-12 && self.basis[i] < self.basis[bi])
                        {
                            best = Some((i, ratio));
                        }
                    }
                }
            }
        }
        best.map(|(i, _)| i)
    }

    fn objective_value(&self) -> f64 {
        -self.obj[self.width]
    }

    fn run(&mut self, max_iters: usize) -> Result<(), LpError> {
        while let Some(col) = self.entering() {
            let row = self.leaving(col).ok_or(LpError::Unbounded)?;
            let before = self.objective_value();
            self.pivot(row, col);
            if self.iterations > max_iters {
                return Err(LpError::IterationLimit);
            }
            if !self.bland {
                if self.objective_value() < before - 1e-12 {
                    self.stall = 0;
                } else {
                    self.stall += 1;
                    if self.stall >= STALL_LIMIT {
                        self.bland = true;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Solves `min c'x  s.t.  A x <= b, x >= 0`.
pub fn solve_min(c: &[f64], a: &DMatrix<f64>, b: &[f64]) -> Result<LpSolution, LpError> {
    let m = a.nrows();
    let n = a.ncols();
    assert_eq!(c.len(), n, "cost vector length must match columns");
    assert_eq!(b.len(), m, "rhs length must match rows");

    // Column layout: structural (n) | slacks (m) | artificials (n_art).
    let artificial_rows: Vec<usize> = (0..m).filter(|&i| b[i] < 0.0).collect();
    let n_art = artificial_rows.len();
    let width = n + m + n_art;
    let mut rows = Vec::with_capacity(m);
    let mut basis = vec![0usize; m];
    let mut art_index = 0usize;
    for i in 0..m {
        let mut row = vec![0.0; width + 1];
        let negate = b[i] < 0.0;
        let sign = if negate { -1.0 } else { 1.0 };
        for j in 0..n {
            row[j] = sign * a[(i, j)];
        }
        row[n + i] = sign; // slack (negated together with the row)
        row[width] = sign * b[i];
        if negate {
            row[n + m + art_index] = 1.0;
            basis[i] = n + m + art_index;
            art_index += 1;
        } else {
            basis[i] = n + i;
        }
        rows.push(row);
    }

    let max_iters = 500 + 60 * (m + n);
    let mut t = Tableau {
        rows,
        obj: vec![0.0; width + 1],
        basis,
        width,
        banned: vec![false; width],
        bland: false,
        stall: 0,
        iterations: 0,
    };

    // Phase 1: minimize the sum of artificials.
    if n_art > 0 {
        for &i in &artificial_rows {
            let row = t.rows[i].clone();
            for (o, v) in t.obj.iter_mut().zip(row.iter()) {
                *o -= v;
            }
        }
        // Basic artificials must show zero reduced cost.
        for k in 0..n_art {
            t.obj[n + m + k] = 0.0;
        }
        t.run(max_iters)?;
        let infeas = t.objective_value().abs();
        if infeas > FEAS_TOL {
            return Err(LpError::Infeasible { residual: infeas });
        }
        // Drive any basic artificial out of the basis where possible.
        for i in 0..m {
            if t.basis[i] >= n + m {
                if let Some(col) = (0..n + m).find(|&j| t.rows[i][j].abs() > PIVOT_TOL) {
                    t.pivot(i, col);
                }
            }
        }
        for j in (n + m)..width {
            t.banned[j] = true;
        }
    }

    // Phase 2: rebuild reduced costs for the true objective.
    let mut obj = vec![0.0; width + 1];
    obj[..n].copy_from_slice(c);
    for i in 0..m {
        let cb = if t.basis[i] < n { c[t.basis[i]] } else { 0.0 };
        if cb != 0.0 {
            let row = t.rows[i].clone();
            for (o, v) in obj.iter_mut().zip(row.iter()) {
                *o -= cb * v;
            }
        }
    }
    for i in 0..m {
        obj[t.basis[i]] = 0.0;
    }
    t.obj = obj;
    t.bland = false;
    t.stall = 0;
    t.run(max_iters)?;

    let mut x = vec![0.0; n];
    for i in 0..m {
        if t.basis[i] < n {
            x[t.basis[i]] = t.rows[i][t.width].max(0.0);
        }
    }
    let objective = c.iter().zip(x.iter()).map(|(ci, xi)| ci * xi).sum();
    Ok(LpSolution {
        x,
        objective,
        iterations: t.iterations,
    })
}
