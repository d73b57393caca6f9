//! Dense two-phase primal simplex.
//!
//! Problems are stated as `maximize cᵀx` subject to equality rows, `≥` rows
//! and per-variable sign restrictions. Free variables are split into a
//! difference of two non-negative columns. Entering columns follow Dantzig's
//! rule; after a run of degenerate pivots the solver switches to Bland's rule
//! until the objective moves again, so every solve is deterministic and
//! cannot cycle.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Default primal feasibility tolerance.
pub const DEFAULT_FEAS_TOL: f64 = 1e-9;

const PIVOT_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const DEGENERATE_RUN: usize = 32;
/// Basis refactorization for solution polishing is skipped above this size.
const MAX_REFINE_ROWS: usize = 1500;
/// Returned solutions may violate constraints by up to this multiple of the
/// feasibility tolerance (ill-conditioned bases near duplicate rays).
const POSTCHECK_FACTOR: f64 = 1e3;
/// Tableaus above this many entries update their rows in parallel.
const PAR_THRESHOLD: usize = 1 << 18;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    Free,
    NonNegative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal {
        solution: Vec<f64>,
        objective_value: f64,
    },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn status(&self) -> LpStatus {
        match self {
            LpOutcome::Optimal { .. } => LpStatus::Optimal,
            LpOutcome::Infeasible => LpStatus::Infeasible,
            LpOutcome::Unbounded => LpStatus::Unbounded,
        }
    }

    pub fn solution(&self) -> Option<&[f64]> {
        match self {
            LpOutcome::Optimal { solution, .. } => Some(solution),
            _ => None,
        }
    }

    pub fn objective_value(&self) -> Option<f64> {
        match self {
            LpOutcome::Optimal {
                objective_value, ..
            } => Some(*objective_value),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
struct Row {
    coeffs: Vec<(usize, f64)>,
    rhs: f64,
}

impl Row {
    fn dot(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }
}

/// `maximize cᵀx` s.t. `A_eq x = b_eq`, `A_ge x ≥ b_ge`, sign restrictions on `x`.
///
/// Variables are free unless marked otherwise.
#[derive(Clone, Debug)]
pub struct LinearProgram {
    objective: Vec<f64>,
    kinds: Vec<VarKind>,
    eq: Vec<Row>,
    ge: Vec<Row>,
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        Self {
            objective: vec![0.0; num_vars],
            kinds: vec![VarKind::Free; num_vars],
            eq: Vec::new(),
            ge: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.eq.len() + self.ge.len()
    }

    pub fn set_objective(&mut self, coeffs: &[f64]) -> &mut Self {
        assert_eq!(coeffs.len(), self.num_vars(), "objective length");
        self.objective.copy_from_slice(coeffs);
        self
    }

    pub fn set_objective_coeff(&mut self, var: usize, value: f64) -> &mut Self {
        self.objective[var] = value;
        self
    }

    pub fn set_kind(&mut self, var: usize, kind: VarKind) -> &mut Self {
        self.kinds[var] = kind;
        self
    }

    pub fn set_nonnegative(&mut self, vars: std::ops::Range<usize>) -> &mut Self {
        for j in vars {
            self.kinds[j] = VarKind::NonNegative;
        }
        self
    }

    pub fn add_eq(&mut self, row: &[f64], rhs: f64) -> &mut Self {
        let coeffs = self.densify(row);
        self.eq.push(Row { coeffs, rhs });
        self
    }

    pub fn add_ge(&mut self, row: &[f64], rhs: f64) -> &mut Self {
        let coeffs = self.densify(row);
        self.ge.push(Row { coeffs, rhs });
        self
    }

    pub fn add_le(&mut self, row: &[f64], rhs: f64) -> &mut Self {
        let neg: Vec<f64> = row.iter().map(|a| -a).collect();
        self.add_ge(&neg, -rhs)
    }

    /// Sparse equality row; repeated indices are summed.
    pub fn add_eq_sparse(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) -> &mut Self {
        self.eq.push(Row { coeffs, rhs });
        self
    }

    pub fn add_ge_sparse(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) -> &mut Self {
        self.ge.push(Row { coeffs, rhs });
        self
    }

    pub fn add_le_sparse(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) -> &mut Self {
        let neg = coeffs.into_iter().map(|(j, a)| (j, -a)).collect();
        self.add_ge_sparse(neg, -rhs)
    }

    fn densify(&self, row: &[f64]) -> Vec<(usize, f64)> {
        assert_eq!(row.len(), self.num_vars(), "constraint row length");
        row.iter()
            .enumerate()
            .filter(|(_, a)| **a != 0.0)
            .map(|(j, a)| (j, *a))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput(
                "non-finite objective coefficient".into(),
            ));
        }
        for row in self.eq.iter().chain(&self.ge) {
            if !row.rhs.is_finite() {
                return Err(Error::InvalidInput("non-finite right-hand side".into()));
            }
            for &(j, a) in &row.coeffs {
                if j >= n {
                    return Err(Error::InvalidInput(format!(
                        "variable index {j} out of range ({n} variables)"
                    )));
                }
                if !a.is_finite() {
                    return Err(Error::InvalidInput(
                        "non-finite constraint coefficient".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Largest constraint violation of `x`, each row measured relative to `1 + |rhs|`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for row in &self.eq {
            worst = worst.max((row.dot(x) - row.rhs).abs() / (1.0 + row.rhs.abs()));
        }
        for row in &self.ge {
            worst = worst.max((row.rhs - row.dot(x)).max(0.0) / (1.0 + row.rhs.abs()));
        }
        for (j, kind) in self.kinds.iter().enumerate() {
            if *kind == VarKind::NonNegative {
                worst = worst.max(-x[j]);
            }
        }
        worst
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    pub fn solve(&self, feas_tol: f64) -> Result<LpOutcome> {
        self.validate()?;
        let sf = StandardForm::build(self);
        let mut tab = Tableau::new(&sf);
        let cap = 50 * (sf.rows.len() + sf.width) + 1000;

        if sf.width > sf.n_struct {
            let phase1: Vec<f64> = (0..sf.width)
                .map(|j| if j >= sf.n_struct { -1.0 } else { 0.0 })
                .collect();
            tab.load_costs(&phase1);
            if let Pass::Unbounded = tab.run(sf.width, cap)? {
                return Err(Error::NumericalFailure(
                    "phase one reported unbounded".into(),
                ));
            }
            if tab.artificial_level(sf.n_struct) > feas_tol {
                return Ok(LpOutcome::Infeasible);
            }
            tab.drive_out_artificials(sf.n_struct);
        }

        tab.load_costs(&sf.cost);
        if let Pass::Unbounded = tab.run(sf.n_struct, cap)? {
            return Ok(LpOutcome::Unbounded);
        }

        let from_tableau = sf.recover(&tab.primal(sf.width));
        let mut best = from_tableau;
        let mut best_violation = self.max_violation(&best);
        if let Some(refined) = tab.refined_primal(&sf) {
            let candidate = sf.recover(&refined);
            let v = self.max_violation(&candidate);
            if v < best_violation {
                best = candidate;
                best_violation = v;
            }
        }
        if !(best_violation <= POSTCHECK_FACTOR * feas_tol) {
            return Err(Error::NumericalFailure(format!(
                "optimal basis violates constraints by {best_violation:.3e}"
            )));
        }
        let objective_value = self.objective_at(&best);
        Ok(LpOutcome::Optimal {
            solution: best,
            objective_value,
        })
    }
}

/// Equality-form problem over non-negative columns with `rhs ≥ 0`.
struct StandardForm {
    rows: Vec<Row>,
    /// Column holding a `+1` slack usable as the starting basic variable.
    starting_basic: Vec<usize>,
    cost: Vec<f64>,
    pos_col: Vec<usize>,
    neg_col: Vec<Option<usize>>,
    /// Columns before this index are structural or slack; the rest are artificial.
    n_struct: usize,
    width: usize,
}

impl StandardForm {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.num_vars();
        let mut pos_col = Vec::with_capacity(n);
        let mut neg_col = Vec::with_capacity(n);
        let mut ncols = 0;
        for kind in &lp.kinds {
            pos_col.push(ncols);
            ncols += 1;
            if *kind == VarKind::Free {
                neg_col.push(Some(ncols));
                ncols += 1;
            } else {
                neg_col.push(None);
            }
        }
        let expand = |row: &Row| -> Vec<(usize, f64)> {
            let mut out = Vec::with_capacity(row.coeffs.len() * 2 + 1);
            for &(j, a) in &row.coeffs {
                out.push((pos_col[j], a));
                if let Some(nc) = neg_col[j] {
                    out.push((nc, -a));
                }
            }
            out
        };

        let mut rows = Vec::with_capacity(lp.num_constraints());
        let mut slack_of_row: Vec<Option<usize>> = Vec::new();
        for row in &lp.eq {
            let mut coeffs = expand(row);
            let mut rhs = row.rhs;
            if rhs < 0.0 {
                coeffs.iter_mut().for_each(|c| c.1 = -c.1);
                rhs = -rhs;
            }
            rows.push(Row { coeffs, rhs });
            slack_of_row.push(None);
        }
        for row in &lp.ge {
            let mut coeffs = expand(row);
            let slack = ncols;
            ncols += 1;
            coeffs.push((slack, -1.0));
            let mut rhs = row.rhs;
            if rhs <= 0.0 {
                coeffs.iter_mut().for_each(|c| c.1 = -c.1);
                rhs = -rhs;
                rows.push(Row { coeffs, rhs });
                slack_of_row.push(Some(slack));
            } else {
                rows.push(Row { coeffs, rhs });
                slack_of_row.push(None);
            }
        }
        let n_struct = ncols;
        let mut starting_basic = Vec::with_capacity(rows.len());
        for (i, slack) in slack_of_row.iter().enumerate() {
            match slack {
                Some(s) => starting_basic.push(*s),
                None => {
                    rows[i].coeffs.push((ncols, 1.0));
                    starting_basic.push(ncols);
                    ncols += 1;
                }
            }
        }

        let mut cost = vec![0.0; ncols];
        for (j, c) in lp.objective.iter().enumerate() {
            cost[pos_col[j]] = *c;
            if let Some(nc) = neg_col[j] {
                cost[nc] = -c;
            }
        }
        Self {
            rows,
            starting_basic,
            cost,
            pos_col,
            neg_col,
            n_struct,
            width: ncols,
        }
    }

    fn recover(&self, xs: &[f64]) -> Vec<f64> {
        self.pos_col
            .iter()
            .zip(&self.neg_col)
            .map(|(&p, n)| xs[p] - n.map_or(0.0, |nc| xs[nc]))
            .collect()
    }
}

enum Pass {
    Optimal,
    Unbounded,
}

struct Tableau {
    stride: usize,
    a: Vec<f64>,
    /// Reduced costs; the last entry holds minus the objective value.
    d: Vec<f64>,
    basis: Vec<usize>,
    /// Standard-form row behind each tableau row (rows may be dropped).
    origin: Vec<usize>,
    scratch: Vec<f64>,
}

impl Tableau {
    fn new(sf: &StandardForm) -> Self {
        let stride = sf.width + 1;
        let m = sf.rows.len();
        let mut a = vec![0.0; m * stride];
        for (i, row) in sf.rows.iter().enumerate() {
            let r = &mut a[i * stride..(i + 1) * stride];
            for &(j, v) in &row.coeffs {
                r[j] += v;
            }
            r[sf.width] = row.rhs;
        }
        Self {
            stride,
            a,
            d: vec![0.0; stride],
            basis: sf.starting_basic.clone(),
            origin: (0..m).collect(),
            scratch: vec![0.0; stride],
        }
    }

    fn rows(&self) -> usize {
        self.basis.len()
    }

    fn rhs(&self, i: usize) -> f64 {
        self.a[i * self.stride + self.stride - 1]
    }

    fn load_costs(&mut self, cost: &[f64]) {
        let s = self.stride;
        self.d[..s - 1].copy_from_slice(&cost[..s - 1]);
        self.d[s - 1] = 0.0;
        for i in 0..self.rows() {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.a[i * s..(i + 1) * s];
                for (dj, aij) in self.d.iter_mut().zip(row) {
                    *dj -= cb * aij;
                }
            }
        }
        for &b in &self.basis {
            self.d[b] = 0.0;
        }
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let s = self.stride;
        let piv = self.a[r * s + c];
        {
            let row = &mut self.a[r * s..(r + 1) * s];
            row.iter_mut().for_each(|v| *v /= piv);
            row[c] = 1.0;
            self.scratch.copy_from_slice(row);
        }
        let pr = &self.scratch;
        let update = |i: usize, row: &mut [f64]| {
            if i == r {
                return;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(pr) {
                    *v -= f * p;
                }
                row[c] = 0.0;
            }
        };
        if self.a.len() >= PAR_THRESHOLD {
            self.a
                .par_chunks_mut(s)
                .enumerate()
                .for_each(|(i, row)| update(i, row));
        } else {
            self.a
                .chunks_mut(s)
                .enumerate()
                .for_each(|(i, row)| update(i, row));
        }
        let f = self.d[c];
        if f != 0.0 {
            for (v, p) in self.d.iter_mut().zip(pr) {
                *v -= f * p;
            }
            self.d[c] = 0.0;
        }
        self.basis[r] = c;
    }

    fn run(&mut self, limit: usize, cap: usize) -> Result<Pass> {
        let s = self.stride;
        let mut degenerate = 0usize;
        for _ in 0..cap {
            let bland = degenerate >= DEGENERATE_RUN;
            let entering = if bland {
                (0..limit).find(|&j| self.d[j] > OPT_TOL)
            } else {
                let mut best = None;
                let mut best_val = OPT_TOL;
                for j in 0..limit {
                    if self.d[j] > best_val {
                        best_val = self.d[j];
                        best = Some(j);
                    }
                }
                best
            };
            let Some(c) = entering else {
                return Ok(Pass::Optimal);
            };

            let mut leave: Option<(usize, f64, f64)> = None;
            for i in 0..self.rows() {
                let aic = self.a[i * s + c];
                if aic <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(i).max(0.0) / aic;
                match leave {
                    None => leave = Some((i, ratio, aic)),
                    Some((bi, br, ba)) => {
                        let tie = (ratio - br).abs() <= 1e-12 * br.max(1.0);
                        let better = if tie {
                            if bland {
                                self.basis[i] < self.basis[bi]
                            } else {
                                aic > ba
                            }
                        } else {
                            ratio < br
                        };
                        if better {
                            leave = Some((i, ratio, aic));
                        }
                    }
                }
            }
            let Some((r, ratio, _)) = leave else {
                return Ok(Pass::Unbounded);
            };
            if ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(r, c);
        }
        Err(Error::NumericalFailure(format!(
            "simplex exceeded {cap} pivots"
        )))
    }

    fn artificial_level(&self, n_struct: usize) -> f64 {
        (0..self.rows())
            .filter(|&i| self.basis[i] >= n_struct)
            .map(|i| self.rhs(i).abs())
            .sum()
    }

    /// Pivots zero-level artificials out of the basis; rows where that is
    /// impossible are linearly dependent and get dropped.
    fn drive_out_artificials(&mut self, n_struct: usize) {
        let s = self.stride;
        let mut drop = Vec::new();
        for i in 0..self.rows() {
            if self.basis[i] < n_struct {
                continue;
            }
            let row = &self.a[i * s..i * s + n_struct];
            let (mut best, mut best_abs) = (None, PIVOT_TOL);
            for (j, v) in row.iter().enumerate() {
                if v.abs() > best_abs {
                    best_abs = v.abs();
                    best = Some(j);
                }
            }
            match best {
                Some(j) => self.pivot(i, j),
                None => drop.push(i),
            }
        }
        if drop.is_empty() {
            return;
        }
        let keep: Vec<usize> = (0..self.rows()).filter(|i| !drop.contains(i)).collect();
        let mut a = Vec::with_capacity(keep.len() * s);
        for &i in &keep {
            a.extend_from_slice(&self.a[i * s..(i + 1) * s]);
        }
        self.a = a;
        self.basis = keep.iter().map(|&i| self.basis[i]).collect();
        self.origin = keep.iter().map(|&i| self.origin[i]).collect();
    }

    fn primal(&self, width: usize) -> Vec<f64> {
        let mut x = vec![0.0; width];
        for i in 0..self.rows() {
            x[self.basis[i]] = self.rhs(i);
        }
        x
    }

    /// Re-solves `B x_B = b` from the original standard-form rows to strip
    /// accumulated pivoting error.
    fn refined_primal(&self, sf: &StandardForm) -> Option<Vec<f64>> {
        let m = self.rows();
        if m == 0 || m > MAX_REFINE_ROWS {
            return None;
        }
        let mut col_pos = vec![usize::MAX; sf.width];
        for (k, &b) in self.basis.iter().enumerate() {
            col_pos[b] = k;
        }
        let mut bmat = DMatrix::<f64>::zeros(m, m);
        let mut rhs = DVector::<f64>::zeros(m);
        for (i, &o) in self.origin.iter().enumerate() {
            let row = &sf.rows[o];
            for &(j, v) in &row.coeffs {
                let k = col_pos[j];
                if k != usize::MAX {
                    bmat[(i, k)] += v;
                }
            }
            rhs[i] = row.rhs;
        }
        let xb = bmat.lu().solve(&rhs)?;
        if xb.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut x = vec![0.0; sf.width];
        for (k, &b) in self.basis.iter().enumerate() {
            x[b] = xb[k];
        }
        Some(x)
    }
}
