//! Strict K-cooperativity certificates for matrix families.
//!
//! For a cone `K = cone(R)` and a vertex `A`, a certificate is `(α, P)` with
//! `(αI + A) R = R P` and every entry of `P` positive. The LP maximizes the
//! smallest entry `t` of `P`, so a certificate also carries a margin.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cone::PolyhedralCone;
use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpOutcome, DEFAULT_FEAS_TOL};

/// Default certification margin threshold.
pub const DEFAULT_T_TOL: f64 = 1e-7;

/// Certificates with more entries than this are refused.
const MAX_CERTIFICATE_ENTRIES: usize = 100_000_000;
/// Per-ray margins are capped at this multiple of `1 + ‖A‖_max`.
const MARGIN_CAP: f64 = 1e6;

/// Affine matrix family `A(θ) = A₀ + Σ_j θ_j D_j` over a list of parameter vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct Parametrization {
    pub base: DMatrix<f64>,
    pub directions: Vec<DMatrix<f64>>,
    pub param_vertices: Vec<Vec<f64>>,
}

impl Parametrization {
    pub fn dim(&self) -> usize {
        self.base.nrows()
    }

    pub fn evaluate(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        if theta.len() != self.directions.len() {
            return Err(Error::DimensionMismatch {
                expected: self.directions.len(),
                found: theta.len(),
            });
        }
        let mut a = self.base.clone();
        for (d, th) in self.directions.iter().zip(theta) {
            a += d * *th;
        }
        Ok(a)
    }

    fn validate(&self) -> Result<()> {
        let n = self.base.nrows();
        if !self.base.is_square() {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.base.ncols(),
            });
        }
        for d in &self.directions {
            if d.shape() != (n, n) {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: d.nrows().max(d.ncols()),
                });
            }
        }
        Ok(())
    }
}

/// Finite vertex set of a conical relaxation, optionally tied to the
/// parametrization that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixFamily {
    vertices: Vec<DMatrix<f64>>,
    parametrization: Option<Parametrization>,
}

impl MatrixFamily {
    pub fn new(vertices: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = vertices.first().ok_or(Error::EmptyFamily)?;
        let n = first.nrows();
        for v in &vertices {
            if v.shape() != (n, n) {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: if v.nrows() != n { v.nrows() } else { v.ncols() },
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput("vertex has non-finite entries".into()));
            }
        }
        Ok(Self {
            vertices,
            parametrization: None,
        })
    }

    /// Evaluates every parameter vertex; identical matrices are kept once.
    pub fn from_parametrization(p: Parametrization) -> Result<Self> {
        p.validate()?;
        let mut vertices: Vec<DMatrix<f64>> = Vec::new();
        for theta in &p.param_vertices {
            let a = p.evaluate(theta)?;
            if !vertices.contains(&a) {
                vertices.push(a);
            }
        }
        let mut fam = Self::new(vertices)?;
        fam.parametrization = Some(p);
        Ok(fam)
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].nrows()
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> &[DMatrix<f64>] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> &DMatrix<f64> {
        &self.vertices[i]
    }

    pub fn parametrization(&self) -> Option<&Parametrization> {
        self.parametrization.as_ref()
    }
}

/// Witness `(α, P)` for one vertex; `margin` is the smallest entry of `P`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexCertificate {
    pub vertex: usize,
    pub alpha: f64,
    #[serde(rename = "P", with = "matrix_rows")]
    pub p: DMatrix<f64>,
    pub margin: f64,
}

impl VertexCertificate {
    /// `‖(αI + A) R − R P‖_∞` (entrywise max).
    pub fn residual(&self, a: &DMatrix<f64>, cone: &PolyhedralCone) -> f64 {
        let r = cone.rays();
        let n = a.nrows();
        let lhs = (DMatrix::<f64>::identity(n, n) * self.alpha + a) * r;
        (lhs - r * &self.p).amax()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub cone_hash: String,
    pub vertices: Vec<VertexCertificate>,
}

impl Certificate {
    pub fn margin(&self) -> f64 {
        self.vertices
            .iter()
            .map(|v| v.margin)
            .fold(f64::INFINITY, f64::min)
    }

    /// Replays the certificate by direct matrix arithmetic: matching cone
    /// hash, every residual within `tol · (1 + ‖A‖_max)` and every `P` entry
    /// positive.
    pub fn verify(&self, family: &MatrixFamily, cone: &PolyhedralCone, tol: f64) -> Result<()> {
        if self.cone_hash != cone.content_hash() {
            return Err(Error::Precondition(
                "certificate was issued for a different cone".into(),
            ));
        }
        if self.vertices.len() != family.len() {
            return Err(Error::DimensionMismatch {
                expected: family.len(),
                found: self.vertices.len(),
            });
        }
        let m = cone.num_rays();
        for rec in &self.vertices {
            let a = family.vertices().get(rec.vertex).ok_or_else(|| {
                Error::InvalidInput(format!("certificate names unknown vertex {}", rec.vertex))
            })?;
            if rec.p.shape() != (m, m) {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    found: rec.p.nrows(),
                });
            }
            let res = rec.residual(a, cone);
            if !(res <= tol * (1.0 + a.amax())) {
                return Err(Error::Precondition(format!(
                    "vertex {} residual {res:.3e} exceeds tolerance",
                    rec.vertex
                )));
            }
            if !(rec.p.min() > 0.0) {
                return Err(Error::Precondition(format!(
                    "vertex {} has a non-positive entry in P",
                    rec.vertex
                )));
            }
        }
        Ok(())
    }
}

mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_row_iterator(
            rows.len(),
            ncols,
            rows.into_iter().flatten(),
        ))
    }
}

/// Solves the margin LP `max t` s.t. `(αI + A) R = R P`, `P ≥ t`, returning
/// the optimum whatever its sign.
///
/// Raising `α` by `δ` and `P` by `δI` keeps feasibility, so the optimum is
/// the limit `α → ∞`, where the diagonal of `P` is unconstrained. The
/// problem then splits into one `n`-row LP per ray: `max t_k` s.t.
/// `R p = A r_k`, `p_j ≥ t_k` for `j ≠ k`. The margin is `min_k t_k` and
/// `α = max_k (t − p_kk)` lifts every diagonal entry to the margin.
pub fn max_margin(a: &DMatrix<f64>, cone: &PolyhedralCone) -> Result<VertexCertificate> {
    let n = cone.dim();
    if a.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: a.nrows(),
        });
    }
    let rank = cone.rank();
    if rank < n {
        return Err(Error::NotProper { rank, dim: n });
    }
    let r = cone.rays();
    let m = r.ncols();
    if m.saturating_mul(m) > MAX_CERTIFICATE_ENTRIES {
        return Err(Error::NumericalFailure(format!(
            "certificate for {m} rays exceeds the storage budget"
        )));
    }
    let ar = a * r;
    let s = r.column_sum();
    let cap = MARGIN_CAP * (1.0 + a.amax());
    let columns: Vec<(f64, Vec<f64>, bool)> = (0..m)
        .into_par_iter()
        .map(|k| column_margin(r, &s, &ar, k, cap))
        .collect::<Result<_>>()?;
    if columns.iter().all(|c| c.2) {
        return Err(Error::NotPointed);
    }
    let margin = columns.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let alpha = columns
        .iter()
        .enumerate()
        .map(|(k, c)| margin - c.1[k])
        .fold(f64::NEG_INFINITY, f64::max);
    let p = DMatrix::from_fn(m, m, |j, k| {
        if j == k {
            columns[k].1[k] + alpha
        } else {
            columns[k].1[j]
        }
    });
    let margin = p.min();
    Ok(VertexCertificate {
        vertex: 0,
        alpha,
        p,
        margin,
    })
}

/// Column `k` of the split margin LP. Returns `(t_k, p, capped)`.
fn column_margin(
    r: &DMatrix<f64>,
    s: &DVector<f64>,
    ar: &DMatrix<f64>,
    k: usize,
    cap: f64,
) -> Result<(f64, Vec<f64>, bool)> {
    let (n, m) = r.shape();
    // vars: t (0, free), p_k (1, free), q_j (2 + j, ≥ 0, j ≠ k; slot k unused).
    // p_j = q_j + t for j ≠ k.
    let nv = 2 + m;
    let mut lp = LinearProgram::new(nv);
    lp.set_nonnegative(2..nv).set_objective_coeff(0, 1.0);
    for i in 0..n {
        let mut row = Vec::with_capacity(m + 1);
        row.push((0, s[i] - r[(i, k)]));
        row.push((1, r[(i, k)]));
        for j in (0..m).filter(|&j| j != k) {
            let v = r[(i, j)];
            if v != 0.0 {
                row.push((2 + j, v));
            }
        }
        lp.add_eq_sparse(row, ar[(i, k)]);
    }
    lp.add_le_sparse(vec![(0, 1.0)], cap);
    match lp.solve(DEFAULT_FEAS_TOL)? {
        LpOutcome::Optimal { solution, .. } => {
            let t = solution[0];
            let p = (0..m)
                .map(|j| {
                    if j == k {
                        solution[1]
                    } else {
                        solution[2 + j] + t
                    }
                })
                .collect();
            Ok((t, p, t >= cap * (1.0 - 1e-9)))
        }
        LpOutcome::Unbounded => Err(Error::NotPointed),
        LpOutcome::Infeasible => Err(Error::NumericalFailure(
            "certification LP reported infeasible".into(),
        )),
    }
}

/// Certificate for a single vertex if the optimal margin exceeds `t_tol`.
pub fn certify_vertex(
    a: &DMatrix<f64>,
    cone: &PolyhedralCone,
    t_tol: f64,
) -> Result<Option<VertexCertificate>> {
    let w = max_margin(a, cone)?;
    Ok((w.margin > t_tol).then_some(w))
}

#[derive(Clone, Debug, PartialEq)]
pub enum FamilyVerdict {
    Certified(Certificate),
    /// First failing vertex and its best margin.
    Rejected {
        vertex: usize,
        margin: f64,
    },
}

impl FamilyVerdict {
    pub fn certificate(&self) -> Option<&Certificate> {
        match self {
            FamilyVerdict::Certified(c) => Some(c),
            FamilyVerdict::Rejected { .. } => None,
        }
    }
}

/// Solves every vertex LP (in parallel) and merges results in vertex order.
pub fn certify_family(
    family: &MatrixFamily,
    cone: &PolyhedralCone,
    t_tol: f64,
) -> Result<FamilyVerdict> {
    if family.is_empty() {
        return Err(Error::EmptyFamily);
    }
    if family.dim() != cone.dim() {
        return Err(Error::DimensionMismatch {
            expected: cone.dim(),
            found: family.dim(),
        });
    }
    let results: Vec<Result<VertexCertificate>> = family
        .vertices()
        .par_iter()
        .map(|a| max_margin(a, cone))
        .collect();
    let mut records = Vec::with_capacity(family.len());
    for (i, res) in results.into_iter().enumerate() {
        let mut rec = res?;
        if !(rec.margin > t_tol) {
            return Ok(FamilyVerdict::Rejected {
                vertex: i,
                margin: rec.margin,
            });
        }
        rec.vertex = i;
        records.push(rec);
    }
    Ok(FamilyVerdict::Certified(Certificate {
        cone_hash: cone.content_hash(),
        vertices: records,
    }))
}

/// `J = Σ p_i A_i` for some `p ≥ 0` with `Σ p ≥ tol`, up to an L1 residual
/// of `tol · (1 + ‖J‖_max)`.
pub fn check_relaxation_membership(
    j: &DMatrix<f64>,
    family: &MatrixFamily,
    tol: f64,
) -> Result<bool> {
    let n = family.dim();
    if j.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: j.nrows(),
        });
    }
    let k = family.len();
    let nn = n * n;
    // vars: p (k), e+ (nn), e- (nn); all ≥ 0.
    let nv = k + 2 * nn;
    let mut lp = LinearProgram::new(nv);
    lp.set_nonnegative(0..nv);
    for v in k..nv {
        lp.set_objective_coeff(v, -1.0);
    }
    for e in 0..nn {
        let (r, c) = (e % n, e / n);
        let mut row: Vec<(usize, f64)> = family
            .vertices()
            .iter()
            .enumerate()
            .filter(|(_, a)| a[(r, c)] != 0.0)
            .map(|(i, a)| (i, a[(r, c)]))
            .collect();
        row.push((k + e, 1.0));
        row.push((k + nn + e, -1.0));
        lp.add_eq_sparse(row, j[(r, c)]);
    }
    lp.add_ge_sparse((0..k).map(|i| (i, 1.0)).collect(), tol);
    match lp.solve(DEFAULT_FEAS_TOL)? {
        LpOutcome::Optimal {
            objective_value, ..
        } => Ok(-objective_value <= tol * (1.0 + j.amax())),
        LpOutcome::Infeasible => Ok(false),
        LpOutcome::Unbounded => Err(Error::NumericalFailure(
            "membership LP reported unbounded".into(),
        )),
    }
}

/// Settings for [`robustness_range`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobustnessConfig {
    pub t_tol: f64,
    /// Endpoint resolution of the returned interval.
    pub resolution: f64,
    /// Search never leaves `[lower_cap, upper_cap]`; hitting a cap returns it.
    pub lower_cap: f64,
    pub upper_cap: f64,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            t_tol: DEFAULT_T_TOL,
            resolution: 1e-3,
            lower_cap: -1e3,
            upper_cap: 1e3,
        }
    }
}

/// Widest interval of the free parameter (around `seed`) over which the
/// family stays certified against `cone`, all other parameters ranging over
/// the projections of the parameter vertices.
///
/// The certified set is convex in the free parameter, so each side is
/// located by outward doubling followed by bisection, probing only the
/// endpoint matrices.
pub fn robustness_range(
    param: &Parametrization,
    free: usize,
    seed: f64,
    cone: &PolyhedralCone,
    cfg: &RobustnessConfig,
) -> Result<(f64, f64)> {
    param.validate()?;
    if free >= param.directions.len() {
        return Err(Error::InvalidInput(format!(
            "free parameter {free} out of range ({} parameters)",
            param.directions.len()
        )));
    }
    if !(cfg.lower_cap <= seed && seed <= cfg.upper_cap) {
        return Err(Error::InvalidInput(
            "seed lies outside the search caps".into(),
        ));
    }
    let mut fixed: Vec<Vec<f64>> = Vec::new();
    for theta in &param.param_vertices {
        let mut t = theta.clone();
        t[free] = 0.0;
        if !fixed.contains(&t) {
            fixed.push(t);
        }
    }
    if fixed.is_empty() {
        fixed.push(vec![0.0; param.directions.len()]);
    }
    let certified = |value: f64| -> Result<bool> {
        let mats: Vec<DMatrix<f64>> = fixed
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t[free] = value;
                param.evaluate(&t)
            })
            .collect::<Result<_>>()?;
        let verdicts: Vec<Result<Option<VertexCertificate>>> = mats
            .par_iter()
            .map(|a| certify_vertex(a, cone, cfg.t_tol))
            .collect();
        for v in verdicts {
            if v?.is_none() {
                return Ok(false);
            }
        }
        Ok(true)
    };
    if !certified(seed)? {
        return Err(Error::SeedInfeasible { seed });
    }
    let edge = |direction: f64, cap: f64| -> Result<f64> {
        let mut good = seed;
        let mut step = cfg.resolution.max(0.25);
        let bad = loop {
            let probe = seed + direction * step;
            if (probe - cap) * direction >= 0.0 {
                if certified(cap)? {
                    return Ok(cap);
                }
                break cap;
            }
            if !certified(probe)? {
                break probe;
            }
            good = probe;
            step *= 2.0;
        };
        let (mut good, mut bad) = (good, bad);
        while (bad - good).abs() > cfg.resolution {
            let mid = 0.5 * (good + bad);
            if certified(mid)? {
                good = mid;
            } else {
                bad = mid;
            }
        }
        Ok(good)
    };
    let lo = edge(-1.0, cfg.lower_cap)?;
    let hi = edge(1.0, cfg.upper_cap)?;
    Ok((lo, hi))
}
