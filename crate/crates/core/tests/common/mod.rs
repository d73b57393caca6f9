//! Independent oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use conecert::lp::{LinearProgram, LpOutcome};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `max cᵀx` s.t. `A x ≤ b`, `x ≥ 0`, `x ≤ ub`, by enumerating every basic
/// solution. `None` when infeasible.
pub fn vertex_enumeration(
    c: &[f64],
    a: &DMatrix<f64>,
    b: &[f64],
    ub: f64,
) -> Option<(f64, Vec<f64>)> {
    let n = c.len();
    let mut rows: Vec<(Vec<f64>, f64)> = (0..a.nrows())
        .map(|i| (a.row(i).iter().copied().collect(), b[i]))
        .collect();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = -1.0;
        rows.push((e.clone(), 0.0));
        e[j] = 1.0;
        rows.push((e, ub));
    }
    let feasible = |x: &[f64]| {
        rows.iter()
            .all(|(r, rhs)| r.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() <= rhs + 1e-9)
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut pick = vec![0usize; n];
    fn choose(
        start: usize,
        depth: usize,
        pick: &mut Vec<usize>,
        total: usize,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        if depth == pick.len() {
            visit(pick);
            return;
        }
        for i in start..total {
            pick[depth] = i;
            choose(i + 1, depth + 1, pick, total, visit);
        }
    }
    let total = rows.len();
    choose(0, 0, &mut pick, total, &mut |idx: &[usize]| {
        let m = DMatrix::from_fn(n, n, |i, j| rows[idx[i]].0[j]);
        let rhs = DVector::from_fn(n, |i, _| rows[idx[i]].1);
        if let Some(x) = m.lu().solve(&rhs) {
            let x: Vec<f64> = x.iter().copied().collect();
            if x.iter().all(|v| v.is_finite()) && feasible(&x) {
                let val: f64 = c.iter().zip(&x).map(|(p, q)| p * q).sum();
                if best.as_ref().is_none_or(|(bv, _)| val > *bv) {
                    best = Some((val, x));
                }
            }
        }
    });
    best
}

/// Same problem through the library solver.
pub fn simplex(c: &[f64], a: &DMatrix<f64>, b: &[f64], ub: f64) -> LpOutcome {
    let n = c.len();
    let mut lp = LinearProgram::new(n);
    lp.set_objective(c).set_nonnegative(0..n);
    for (row, &rhs) in a.row_iter().zip(b) {
        let row: Vec<f64> = row.iter().copied().collect();
        lp.add_le(&row, rhs);
    }
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        lp.add_le(&e, ub);
    }
    lp.solve(1e-9).expect("solver error")
}

/// Margin of a simplicial cone: smallest off-diagonal entry of `R⁻¹ A R`.
pub fn simplicial_margin(a: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
    let m = r.clone().try_inverse().expect("singular ray matrix") * a * r;
    let mut best = f64::INFINITY;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j {
                best = best.min(m[(i, j)]);
            }
        }
    }
    best
}

/// `max t` over `(αI + A) R = R P`, `P ≥ t` as one joint LP in `(α, t, P)`.
pub fn joint_margin(a: &DMatrix<f64>, r: &DMatrix<f64>) -> Option<f64> {
    let (n, m) = r.shape();
    let ar = a * r;
    let nv = 2 + m * m;
    let p = |j: usize, k: usize| 2 + j + m * k;
    let mut lp = LinearProgram::new(nv);
    lp.set_objective_coeff(1, 1.0);
    for i in 0..n {
        for k in 0..m {
            let mut row = vec![(0, r[(i, k)])];
            for j in 0..m {
                row.push((p(j, k), -r[(i, j)]));
            }
            lp.add_eq_sparse(row, -ar[(i, k)]);
        }
    }
    for j in 0..m {
        for k in 0..m {
            lp.add_ge_sparse(vec![(p(j, k), 1.0), (1, -1.0)], 0.0);
        }
    }
    lp.solve(1e-9).ok()?.objective_value()
}

/// Supremum of `τ` with `max_j |1 + τ(μ_j − λ)| < 1` over the non-dominant
/// eigenvalues, by doubling and bisection on the eigenvalues from nalgebra.
pub fn bisection_timestep(a: &DMatrix<f64>) -> f64 {
    let eigs: Vec<Complex<f64>> = a.clone().complex_eigenvalues().iter().copied().collect();
    let top = eigs
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.re.total_cmp(&y.1.re))
        .map(|(i, _)| i)
        .unwrap();
    let lambda = eigs[top].re;
    let ok = |tau: f64| {
        eigs.iter()
            .enumerate()
            .filter(|(i, _)| *i != top)
            .all(|(_, mu)| (Complex::new(1.0, 0.0) + (mu - lambda) * tau).norm() < 1.0)
    };
    let mut lo = 0.0;
    let mut hi = 1e-3;
    while ok(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > 1e9 {
            return f64::INFINITY;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Random Metzler matrix with off-diagonals in `[lo, hi]` and diagonal in `[-3, 0]`.
pub fn metzler(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            rng.random_range(-3.0..0.0)
        } else {
            rng.random_range(lo..hi)
        }
    })
}

/// Angle of `v` measured from `start`, in `[0, 2π)`.
pub fn angle_from(v: &DVector<f64>, start: f64) -> f64 {
    (v[1].atan2(v[0]) - start).rem_euclid(std::f64::consts::TAU)
}
