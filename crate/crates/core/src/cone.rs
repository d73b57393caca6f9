//! Polyhedral cones in generator (R) and half-space (H) representation.
//!
//! Generator rays are stored as unit-norm columns. All geometric predicates
//! reduce to small LPs over the ray coefficients; no conversion between the
//! two representations is ever performed.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpOutcome, DEFAULT_FEAS_TOL};

/// Rays closer than this in cosine are treated as the same direction.
pub const DEDUP_COSINE: f64 = 1.0 - 1e-9;
const ZERO_RAY_NORM: f64 = 1e-12;
const RANK_RTOL: f64 = 1e-10;

/// Numerical rank via singular values above `1e-10 · σ_max`.
pub fn rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_RTOL * smax).count()
}

/// Cone generated by the columns of an `n × m` ray matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyhedralCone {
    rays: DMatrix<f64>,
}

impl PolyhedralCone {
    /// Normalizes the columns and drops repeated directions, keeping the
    /// first occurrence and the original order.
    pub fn from_rays(raw: &DMatrix<f64>) -> Result<Self> {
        let n = raw.nrows();
        let mut kept: Vec<DVector<f64>> = Vec::with_capacity(raw.ncols());
        for (j, col) in raw.column_iter().enumerate() {
            let norm = col.norm();
            if !(norm >= ZERO_RAY_NORM) {
                return Err(Error::ZeroRay { index: j });
            }
            // Already-unit columns pass through untouched so that reloading a
            // saved cone reproduces it bit for bit.
            let unit: DVector<f64> = if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
                col.into_owned()
            } else {
                col / norm
            };
            if kept.iter().all(|k| k.dot(&unit) <= DEDUP_COSINE) {
                kept.push(unit);
            }
        }
        let rays = if kept.is_empty() {
            DMatrix::zeros(n, 0)
        } else {
            DMatrix::from_columns(&kept)
        };
        Ok(Self { rays })
    }

    pub fn from_columns(cols: &[DVector<f64>]) -> Result<Self> {
        if cols.is_empty() {
            return Err(Error::InvalidInput("cone needs at least one ray".into()));
        }
        Self::from_rays(&DMatrix::from_columns(cols))
    }

    /// Non-negative orthant `ℝⁿ₊`.
    pub fn orthant(n: usize) -> Self {
        Self {
            rays: DMatrix::identity(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.rays.nrows()
    }

    pub fn num_rays(&self) -> usize {
        self.rays.ncols()
    }

    pub fn rays(&self) -> &DMatrix<f64> {
        &self.rays
    }

    pub fn ray(&self, j: usize) -> DVector<f64> {
        self.rays.column(j).into_owned()
    }

    pub fn rank(&self) -> usize {
        rank(&self.rays)
    }

    /// SHA-256 over the dimension, ray count and little-endian ray entries.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.dim() as u64).to_le_bytes());
        hasher.update((self.num_rays() as u64).to_le_bytes());
        for v in self.rays.iter() {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    fn check_dim(&self, r: &DVector<f64>) -> Result<()> {
        if r.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: r.len(),
            });
        }
        Ok(())
    }

    /// `r = R p` for some `p ≥ 0`, up to an L1 residual of `tol`.
    pub fn member(&self, r: &DVector<f64>, tol: f64) -> Result<bool> {
        self.check_dim(r)?;
        Ok(l1_residual(&self.rays, r)? <= tol)
    }

    /// Largest `t` with `r = R p`, `p ≥ t·𝟙`. `None` when the LP is
    /// infeasible, `∞` when unbounded.
    pub fn interior_margin(&self, r: &DVector<f64>) -> Result<Option<f64>> {
        self.check_dim(r)?;
        let rank = self.rank();
        if rank < self.dim() {
            return Err(Error::NotProper {
                rank,
                dim: self.dim(),
            });
        }
        let (n, m) = self.rays.shape();
        let s = self.rays.column_sum();
        // p = q + t𝟙: vars q (m, ≥ 0), t (free).
        let mut lp = LinearProgram::new(m + 1);
        lp.set_nonnegative(0..m).set_objective_coeff(m, 1.0);
        for i in 0..n {
            let mut row: Vec<(usize, f64)> = (0..m).map(|j| (j, self.rays[(i, j)])).collect();
            row.push((m, s[i]));
            lp.add_eq_sparse(row, r[i]);
        }
        Ok(match lp.solve(DEFAULT_FEAS_TOL)? {
            LpOutcome::Optimal {
                objective_value, ..
            } => Some(objective_value),
            LpOutcome::Unbounded => Some(f64::INFINITY),
            LpOutcome::Infeasible => None,
        })
    }

    /// Sufficient interiority test: `r` is a combination of all rays with
    /// coefficients at least `t > t_tol`. Exact when the rays span the space.
    pub fn interior_member(&self, r: &DVector<f64>, t_tol: f64) -> Result<bool> {
        Ok(matches!(self.interior_margin(r)?, Some(t) if t > t_tol))
    }

    /// Solid (rank `n`) and pointed (no non-trivial non-negative kernel vector).
    pub fn is_proper(&self, tol: f64) -> Result<bool> {
        if self.num_rays() == 0 || self.rank() < self.dim() {
            return Ok(false);
        }
        let (n, m) = self.rays.shape();
        let mut lp = LinearProgram::new(m);
        lp.set_nonnegative(0..m);
        lp.add_eq(&vec![1.0; m], 1.0);
        for i in 0..n {
            let row: Vec<f64> = self.rays.row(i).iter().copied().collect();
            lp.add_eq(&row, 0.0);
        }
        Ok(lp.solve(tol)? == LpOutcome::Infeasible)
    }

    /// Drops rays that are non-negative combinations of the remaining ones,
    /// scanning columns in order against the current survivors.
    pub fn remove_redundant_rays(&self, tol: f64) -> Result<PolyhedralCone> {
        let m = self.num_rays();
        let mut alive = vec![true; m];
        for j in 0..m {
            let others: Vec<DVector<f64>> = (0..m)
                .filter(|&k| k != j && alive[k])
                .map(|k| self.ray(k))
                .collect();
            if others.is_empty() {
                continue;
            }
            let sub = DMatrix::from_columns(&others);
            if l1_residual(&sub, &self.ray(j))? <= tol {
                alive[j] = false;
            }
        }
        let cols: Vec<DVector<f64>> = (0..m).filter(|&j| alive[j]).map(|j| self.ray(j)).collect();
        Ok(Self {
            rays: DMatrix::from_columns(&cols),
        })
    }

    /// Concatenates the rays of `self` and the columns of `extra`, then normalizes and deduplicates.
    pub fn extended(&self, extra: &DMatrix<f64>) -> Result<PolyhedralCone> {
        let (n, m) = self.rays.shape();
        let mut all = DMatrix::zeros(n, m + extra.ncols());
        all.columns_mut(0, m).copy_from(&self.rays);
        all.columns_mut(m, extra.ncols()).copy_from(extra);
        Self::from_rays(&all)
    }

    /// Same ray set up to `tol` in every entry.
    pub fn same_rays(&self, other: &PolyhedralCone, tol: f64) -> bool {
        self.rays.shape() == other.rays.shape()
            && self
                .rays
                .iter()
                .zip(other.rays.iter())
                .all(|(a, b)| (a - b).abs() <= tol)
    }
}

/// Minimum `‖R p − r‖₁` over `p ≥ 0`.
fn l1_residual(rays: &DMatrix<f64>, r: &DVector<f64>) -> Result<f64> {
    let (n, m) = rays.shape();
    // vars: p (m), e+ (n), e- (n), all non-negative.
    let nv = m + 2 * n;
    let mut lp = LinearProgram::new(nv);
    lp.set_nonnegative(0..nv);
    for k in m..nv {
        lp.set_objective_coeff(k, -1.0);
    }
    for i in 0..n {
        let mut row: Vec<(usize, f64)> = (0..m)
            .filter(|&j| rays[(i, j)] != 0.0)
            .map(|j| (j, rays[(i, j)]))
            .collect();
        row.push((m + i, 1.0));
        row.push((m + n + i, -1.0));
        lp.add_eq_sparse(row, r[i]);
    }
    match lp.solve(DEFAULT_FEAS_TOL)? {
        LpOutcome::Optimal {
            objective_value, ..
        } => Ok(-objective_value),
        other => Err(Error::NumericalFailure(format!(
            "residual LP returned {:?}",
            other.status()
        ))),
    }
}

/// Cone `{x : H x ≥ 0}` with unit-norm rows.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfspaceCone {
    normals: DMatrix<f64>,
}

impl HalfspaceCone {
    pub fn from_normals(raw: &DMatrix<f64>) -> Result<Self> {
        let mut normals = raw.clone();
        for (i, mut row) in normals.row_iter_mut().enumerate() {
            let norm = row.norm();
            if !(norm >= ZERO_RAY_NORM) {
                return Err(Error::ZeroRay { index: i });
            }
            row /= norm;
        }
        Ok(Self { normals })
    }

    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }

    pub fn normals(&self) -> &DMatrix<f64> {
        &self.normals
    }

    pub fn rank(&self) -> usize {
        rank(&self.normals)
    }

    /// Every entry of `H r` exceeds `tol`.
    pub fn strictly_contains(&self, r: &DVector<f64>, tol: f64) -> bool {
        (&self.normals * r).iter().all(|&v| v > tol)
    }
}

/// `K_R \ {0} ⊂ int K_H`: every entry of `H R` exceeds `tol`.
pub fn strict_inclusion_in_halfspaces(
    inner: &PolyhedralCone,
    outer: &HalfspaceCone,
    tol: f64,
) -> Result<bool> {
    if inner.dim() != outer.dim() {
        return Err(Error::DimensionMismatch {
            expected: outer.dim(),
            found: inner.dim(),
        });
    }
    Ok((outer.normals() * inner.rays()).iter().all(|&v| v > tol))
}

/// Every generator of `inner` is an interior member of `outer`.
pub fn strict_inclusion_rays(
    inner: &PolyhedralCone,
    outer: &PolyhedralCone,
    t_tol: f64,
) -> Result<bool> {
    if inner.dim() != outer.dim() {
        return Err(Error::DimensionMismatch {
            expected: outer.dim(),
            found: inner.dim(),
        });
    }
    for j in 0..inner.num_rays() {
        if !outer.interior_member(&inner.ray(j), t_tol)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// On-disk cone: `{ "dim": n, "rays": [[...], ...] }`, one inner list per ray.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeFile {
    pub dim: usize,
    pub rays: Vec<Vec<f64>>,
}

impl From<&PolyhedralCone> for ConeFile {
    fn from(k: &PolyhedralCone) -> Self {
        Self {
            dim: k.dim(),
            rays: k
                .rays()
                .column_iter()
                .map(|c| c.iter().copied().collect())
                .collect(),
        }
    }
}

impl TryFrom<ConeFile> for PolyhedralCone {
    type Error = Error;

    fn try_from(f: ConeFile) -> Result<Self> {
        let cols = f
            .rays
            .iter()
            .map(|r| {
                if r.len() != f.dim {
                    Err(Error::DimensionMismatch {
                        expected: f.dim,
                        found: r.len(),
                    })
                } else {
                    Ok(DVector::from_column_slice(r))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        PolyhedralCone::from_columns(&cols)
    }
}
