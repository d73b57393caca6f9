//! Necessary-condition prescreens and the iterative cone search.
//!
//! The search grows a generator matrix by repeatedly applying one widened
//! discrete-time operator per vertex, `R ← [R, W₁R, …, W_lR]`, pruning
//! redundant rays and periodically asking [`certify_family`] whether the
//! current cone already works.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::{certify_family, Certificate, FamilyVerdict, MatrixFamily, DEFAULT_T_TOL};
use crate::cone::{
    strict_inclusion_in_halfspaces, strict_inclusion_rays, HalfspaceCone, PolyhedralCone,
};
use crate::error::{Error, Result};
use crate::spectral::{
    max_timestep, max_widening, strictly_dominant, widening_operator, SpectralData, DEFAULT_GAP_TOL,
};

/// Entries of `H̃ R` must exceed this to count as strictly positive.
pub const GEOMETRIC_TOL: f64 = 1e-12;
const ORIENTATION_TOL: f64 = 1e-12;
const INIT_MAX_RESTARTS: usize = 20;
const INIT_APPENDS_PER_DIM: usize = 50;

/// Output of the spectral and geometric prescreens.
#[derive(Clone, Debug)]
pub struct Prescreen {
    /// Oriented spectral data per vertex, with `⟨left, right⟩ = 1`.
    pub spectral: Vec<SpectralData>,
    /// Cone generated by the oriented right eigenvectors.
    pub inner: PolyhedralCone,
    /// `{x : H̃ x ≥ 0}` with the oriented left eigenvectors as rows.
    pub outer: HalfspaceCone,
    pub geometric_ok: bool,
}

impl Prescreen {
    /// Smallest entry of `H̃ R̃` (normalized rows and columns).
    pub fn geometric_margin(&self) -> f64 {
        (self.outer.normals() * self.inner.rays()).min()
    }
}

/// Spectral check on every vertex followed by the inner/outer cone test.
///
/// Orientation: `h̃₁ = ĥ₁`; every `r̃_k` is flipped to have `⟨h̃₁, r̃_k⟩ ≥ 0`,
/// and `h̃_k` is flipped along with it.
pub fn prescreen(family: &MatrixFamily, gap_tol: f64) -> Result<Prescreen> {
    if family.is_empty() {
        return Err(Error::EmptyFamily);
    }
    let raw: Vec<Option<SpectralData>> = family
        .vertices()
        .par_iter()
        .map(|a| strictly_dominant(a, gap_tol))
        .collect::<Result<_>>()?;
    let failed: Vec<usize> = raw
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_none())
        .map(|(i, _)| i)
        .collect();
    if !failed.is_empty() {
        return Err(Error::SpectralFail { vertices: failed });
    }
    let raw: Vec<SpectralData> = raw.into_iter().flatten().collect();
    let h1 = raw[0].left.clone();
    let mut spectral = Vec::with_capacity(raw.len());
    for (k, s) in raw.into_iter().enumerate() {
        let ip = h1.dot(&s.right) / (h1.norm() * s.right.norm());
        if ip.abs() <= ORIENTATION_TOL {
            return Err(Error::OrientationDegenerate { vertex: k });
        }
        spectral.push(if ip < 0.0 { s.flipped() } else { s });
    }
    let rights: Vec<DVector<f64>> = spectral.iter().map(|s| s.right.clone()).collect();
    let inner = PolyhedralCone::from_columns(&rights)?;
    let n = family.dim();
    let h = DMatrix::from_fn(spectral.len(), n, |i, j| spectral[i].left[j]);
    let outer = HalfspaceCone::from_normals(&h)?;
    let geometric_ok = strict_inclusion_in_halfspaces(&inner, &outer, GEOMETRIC_TOL)?;
    Ok(Prescreen {
        spectral,
        inner,
        outer,
        geometric_ok,
    })
}

/// Initial cone: the inner rays plus small random perturbations of them,
/// until every inner ray is interior.
pub fn initialize_cone(
    pre: &Prescreen,
    rng_seed: u64,
    epsilon: f64,
    t_tol: f64,
) -> Result<PolyhedralCone> {
    if !pre.geometric_ok {
        return Err(Error::Precondition(
            "inner cone is not strictly inside the outer cone".into(),
        ));
    }
    let n = pre.inner.dim();
    let base: Vec<DVector<f64>> = (0..pre.inner.num_rays())
        .map(|j| pre.inner.ray(j))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut eps = epsilon;
    for _ in 0..=INIT_MAX_RESTARTS {
        let mut cols = base.clone();
        let mut appended = 0;
        let restart = loop {
            if appended >= INIT_APPENDS_PER_DIM * n {
                break true;
            }
            let src = &base[appended % base.len()];
            let g = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let v = src + g * eps;
            appended += 1;
            if !pre
                .outer
                .strictly_contains(&(&v / v.norm().max(f64::MIN_POSITIVE)), GEOMETRIC_TOL)
            {
                break true;
            }
            cols.push(v);
            let cand = PolyhedralCone::from_columns(&cols)?;
            if cand.rank() == n && strict_inclusion_rays(&pre.inner, &cand, t_tol)? {
                return Ok(cand);
            }
        };
        debug_assert!(restart);
        eps *= 0.5;
    }
    Err(Error::InitFail {
        restarts: INIT_MAX_RESTARTS,
    })
}

/// Search settings. Per-vertex overrides replace the scaled defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// `τ_i = tau_scale · T_i`, with `T_i` the maximal time-step.
    pub tau_scale: f64,
    /// `w_i = widen_scale · w_max,i`.
    pub widen_scale: f64,
    pub tau: Option<Vec<f64>>,
    pub widen: Option<Vec<f64>>,
    pub max_iter: usize,
    /// Certification is attempted every `test_interval` iterations.
    pub test_interval: usize,
    pub t_tol: f64,
    /// Tolerance for redundancy and membership residuals.
    pub feas_tol: f64,
    pub rng_seed: u64,
    /// Initial perturbation size of the random rays around the inner cone.
    pub init_epsilon: f64,
    pub max_rays: usize,
    pub gap_tol: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            tau_scale: 0.5,
            widen_scale: 0.5,
            tau: None,
            widen: None,
            max_iter: 50,
            test_interval: 1,
            t_tol: DEFAULT_T_TOL,
            feas_tol: 1e-9,
            rng_seed: 0,
            init_epsilon: 0.1,
            max_rays: 20_000,
            gap_tol: DEFAULT_GAP_TOL,
        }
    }
}

/// Why the search stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination {
    Certified,
    /// Inner cone not strictly inside the outer cone.
    Prescreen,
    /// Some ray left the interior of the outer cone at iteration `k`.
    LeftOuterCone {
        k: usize,
    },
    MaxIter,
    RayCap {
        rays: usize,
    },
    /// No new rays were produced and the cone is still not certified.
    FixedPointUncertified {
        k: usize,
    },
    /// The widened operator of some vertex admits no positive widening.
    DegenerateWidening {
        vertex: usize,
    },
    NumericalFailure {
        message: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub rays: usize,
    pub certified: bool,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub termination: Termination,
    pub taus: Vec<f64>,
    pub widenings: Vec<f64>,
    pub initial_rays: usize,
    pub final_rays: usize,
    pub margin: Option<f64>,
    pub iterations: Vec<IterationRecord>,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub found: Option<(PolyhedralCone, Certificate)>,
    pub report: SearchReport,
}

impl SearchOutcome {
    pub fn succeeded(&self) -> bool {
        self.found.is_some()
    }
}

/// Per-vertex `(τ_i, w_i)` under `cfg`.
pub fn step_parameters(
    pre: &Prescreen,
    family: &MatrixFamily,
    cfg: &SearchConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let l = pre.spectral.len();
    for (name, v) in [("tau", &cfg.tau), ("widen", &cfg.widen)] {
        if let Some(v) = v {
            if v.len() != l {
                return Err(Error::InvalidInput(format!(
                    "{name} override has {} entries for {l} vertices",
                    v.len()
                )));
            }
        }
    }
    let taus: Vec<f64> = match &cfg.tau {
        Some(t) => t.clone(),
        None => pre
            .spectral
            .iter()
            .map(|s| {
                let t = max_timestep(s);
                if t.is_finite() {
                    cfg.tau_scale * t
                } else {
                    1.0
                }
            })
            .collect(),
    };
    let widenings: Vec<f64> = match &cfg.widen {
        Some(w) => w.clone(),
        None => pre
            .spectral
            .par_iter()
            .zip(family.vertices().par_iter())
            .zip(taus.par_iter())
            .map(|((s, a), &tau)| {
                max_widening(a, s.lambda, tau, &s.right, &s.left, cfg.gap_tol)
                    .map(|w| cfg.widen_scale * w)
            })
            .collect::<Result<_>>()?,
    };
    Ok((taus, widenings))
}

/// One search step: applies every operator to every ray, keeps the images
/// that are not already in the cone, and prunes redundant rays.
pub fn widen_step(
    cone: &PolyhedralCone,
    operators: &[DMatrix<f64>],
    tol: f64,
) -> Result<PolyhedralCone> {
    let images: Vec<DVector<f64>> = operators
        .iter()
        .flat_map(|w| {
            let img = w * cone.rays();
            (0..img.ncols()).map(move |j| img.column(j).into_owned())
        })
        .collect();
    let outside: Vec<Option<DVector<f64>>> = images
        .into_par_iter()
        .map(|v| {
            let norm = v.norm();
            if norm < 1e-300 {
                return Ok(None);
            }
            let v = v / norm;
            Ok(if cone.member(&v, tol)? { None } else { Some(v) })
        })
        .collect::<Result<_>>()?;
    let fresh: Vec<DVector<f64>> = outside.into_iter().flatten().collect();
    if fresh.is_empty() {
        return Ok(cone.clone());
    }
    cone.extended(&DMatrix::from_columns(&fresh))?
        .remove_redundant_rays(tol)
}

/// Searches for a cone certifying strict K-cooperativity of every vertex.
pub fn find_cone(family: &MatrixFamily, cfg: &SearchConfig) -> Result<SearchOutcome> {
    let start = Instant::now();
    if cfg.test_interval == 0 {
        return Err(Error::InvalidInput("test_interval must be positive".into()));
    }
    let pre = prescreen(family, cfg.gap_tol)?;
    let mut report = SearchReport {
        termination: Termination::Prescreen,
        taus: Vec::new(),
        widenings: Vec::new(),
        initial_rays: 0,
        final_rays: 0,
        margin: None,
        iterations: Vec::new(),
        elapsed_s: 0.0,
    };
    let finish = |mut report: SearchReport, found: Option<(PolyhedralCone, Certificate)>| {
        report.elapsed_s = start.elapsed().as_secs_f64();
        SearchOutcome { found, report }
    };
    if !pre.geometric_ok {
        return Ok(finish(report, None));
    }
    let (taus, widenings) = step_parameters(&pre, family, cfg)?;
    report.taus = taus.clone();
    report.widenings = widenings.clone();
    if let Some(vertex) = widenings.iter().position(|&w| !(w > 0.0)) {
        report.termination = Termination::DegenerateWidening { vertex };
        return Ok(finish(report, None));
    }
    let operators: Vec<DMatrix<f64>> = family
        .vertices()
        .iter()
        .zip(&pre.spectral)
        .zip(taus.iter().zip(&widenings))
        .map(|((a, s), (&tau, &w))| widening_operator(a, s.lambda, tau, w, &s.right, &s.left))
        .collect();

    let mut cone = initialize_cone(&pre, cfg.rng_seed, cfg.init_epsilon, cfg.t_tol)?
        .remove_redundant_rays(cfg.feas_tol)?;
    report.initial_rays = cone.num_rays();
    report.final_rays = cone.num_rays();

    for k in 1..=cfg.max_iter {
        let next = match widen_step(&cone, &operators, cfg.feas_tol) {
            Ok(c) => c,
            Err(e) => {
                report.termination = Termination::NumericalFailure {
                    message: e.to_string(),
                };
                return Ok(finish(report, None));
            }
        };
        let fixed_point = next.same_rays(&cone, 1e-12);
        cone = next;
        report.final_rays = cone.num_rays();
        if !strict_inclusion_in_halfspaces(&cone, &pre.outer, GEOMETRIC_TOL)? {
            report.iterations.push(IterationRecord {
                k,
                rays: cone.num_rays(),
                certified: false,
                elapsed_s: start.elapsed().as_secs_f64(),
            });
            report.termination = Termination::LeftOuterCone { k };
            return Ok(finish(report, None));
        }
        if cone.num_rays() > cfg.max_rays {
            report.iterations.push(IterationRecord {
                k,
                rays: cone.num_rays(),
                certified: false,
                elapsed_s: start.elapsed().as_secs_f64(),
            });
            report.termination = Termination::RayCap {
                rays: cone.num_rays(),
            };
            return Ok(finish(report, None));
        }
        let mut certified = None;
        if fixed_point || k % cfg.test_interval == 0 {
            match certify_family(family, &cone, cfg.t_tol) {
                Ok(FamilyVerdict::Certified(c)) => certified = Some(c),
                Ok(FamilyVerdict::Rejected { .. }) => {}
                Err(Error::NotPointed) | Err(Error::NotProper { .. }) => {}
                Err(e) => {
                    report.termination = Termination::NumericalFailure {
                        message: e.to_string(),
                    };
                    return Ok(finish(report, None));
                }
            }
        }
        report.iterations.push(IterationRecord {
            k,
            rays: cone.num_rays(),
            certified: certified.is_some(),
            elapsed_s: start.elapsed().as_secs_f64(),
        });
        if let Some(cert) = certified {
            report.termination = Termination::Certified;
            report.margin = Some(cert.margin());
            return Ok(finish(report, Some((cone, cert))));
        }
        if fixed_point {
            report.termination = Termination::FixedPointUncertified { k };
            return Ok(finish(report, None));
        }
    }
    report.termination = Termination::MaxIter;
    Ok(finish(report, None))
}
