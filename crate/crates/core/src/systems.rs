//! Example dynamics, their Jacobian families and system-file ingestion.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::certify::{MatrixFamily, Parametrization};
use crate::error::{Error, Result};

/// Scalar coupling or spring characteristic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Nonlinearity {
    /// `slope · x`
    Linear { slope: f64 },
    /// `amplitude · sin x`
    Sine { amplitude: f64 },
    /// `linear · x + tanh · tanh x`
    LinearTanh { linear: f64, tanh: f64 },
}

impl Nonlinearity {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Nonlinearity::Linear { slope } => slope * x,
            Nonlinearity::Sine { amplitude } => amplitude * x.sin(),
            Nonlinearity::LinearTanh { linear, tanh } => linear * x + tanh * x.tanh(),
        }
    }

    pub fn slope(&self, x: f64) -> f64 {
        match *self {
            Nonlinearity::Linear { slope } => slope,
            Nonlinearity::Sine { amplitude } => amplitude * x.cos(),
            Nonlinearity::LinearTanh { linear, tanh } => {
                let s = 1.0 / x.cosh();
                linear + tanh * s * s
            }
        }
    }

    /// Checks `slope(x) ∈ [lo, hi]` on a uniform grid over `[-10, 10]`.
    pub fn check_slope(&self, name: &str, lo: f64, hi: f64) -> Result<()> {
        const SPAN: f64 = 10.0;
        const POINTS: usize = 4001;
        let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
        for k in 0..POINTS {
            let x = -SPAN + 2.0 * SPAN * k as f64 / (POINTS - 1) as f64;
            let s = self.slope(x);
            if !(s >= lo - tol && s <= hi + tol) {
                return Err(Error::SlopeViolation {
                    name: name.to_string(),
                    point: x,
                    slope: s,
                    lo,
                    hi,
                });
            }
        }
        Ok(())
    }
}

/// Smooth vector field with an analytic Jacobian.
pub trait DynamicalSystem: Send + Sync {
    fn dim(&self) -> usize;
    fn describe(&self) -> String;
    fn vector_field(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// Coordinates that must agree at consensus, if the notion applies.
    fn positions(&self) -> Option<Range<usize>> {
        None
    }
}

/// `ẋ = A x`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
}

impl DynamicalSystem for LinearSystem {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn describe(&self) -> String {
        format!("linear system of dimension {}", self.a.nrows())
    }

    fn vector_field(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x
    }

    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertainEdge {
    pub name: String,
    /// 1-based receiving agent.
    pub receiver: usize,
    /// 1-based sending agent.
    pub sender: usize,
    pub slope_lo: f64,
    pub slope_hi: f64,
    /// Coupling used when the spec is instantiated for simulation.
    pub coupling: Nonlinearity,
}

/// Consensus network `ẋ_i = Σ_j f_ij(x_j − x_i)`, or its second-order
/// variant `ẋ = v`, `τ v̇ = −v + Σ_j f_ij(x_j − x_i)` when `tau` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusSpec {
    pub agents: usize,
    /// `(receiver, sender)`, 1-based, unit linear weight.
    pub fixed_edges: Vec<(usize, usize)>,
    pub uncertain_edges: Vec<UncertainEdge>,
    /// Slope tuples (one entry per uncertain edge) spanning the relaxation.
    pub param_vertices: Vec<Vec<f64>>,
    #[serde(default)]
    pub tau: Option<f64>,
}

impl ConsensusSpec {
    /// Five-agent network with uncertain couplings `f15` and `f42`.
    pub fn paper() -> Self {
        Self {
            agents: 5,
            fixed_edges: vec![(1, 2), (2, 4), (2, 3), (3, 1), (4, 5), (5, 1)],
            uncertain_edges: vec![
                UncertainEdge {
                    name: "f15".into(),
                    receiver: 1,
                    sender: 5,
                    slope_lo: -1.0,
                    slope_hi: 1.0,
                    coupling: Nonlinearity::Sine { amplitude: 0.9 },
                },
                UncertainEdge {
                    name: "f42".into(),
                    receiver: 4,
                    sender: 2,
                    slope_lo: -1.0,
                    slope_hi: 1.0,
                    coupling: Nonlinearity::Sine { amplitude: -0.9 },
                },
            ],
            param_vertices: vec![
                vec![1.0, 1.0],
                vec![-1.0, 1.0],
                vec![1.0, -1.0],
                vec![-0.9, -0.9],
            ],
            tau: None,
        }
    }

    pub fn paper_second_order(tau: f64) -> Self {
        Self {
            tau: Some(tau),
            ..Self::paper()
        }
    }

    pub fn dim(&self) -> usize {
        if self.tau.is_some() {
            2 * self.agents
        } else {
            self.agents
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        self.uncertain_edges
            .iter()
            .map(|e| e.name.clone())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents == 0 {
            return Err(Error::InvalidInput(
                "consensus network has no agents".into(),
            ));
        }
        let edges = self
            .fixed_edges
            .iter()
            .copied()
            .chain(self.uncertain_edges.iter().map(|e| (e.receiver, e.sender)));
        for (i, j) in edges {
            if i == j {
                return Err(Error::InvalidInput(format!("self-loop at agent {i}")));
            }
            if !(1..=self.agents).contains(&i) || !(1..=self.agents).contains(&j) {
                return Err(Error::InvalidInput(format!(
                    "edge ({i}, {j}) outside agents 1..={}",
                    self.agents
                )));
            }
        }
        for e in &self.uncertain_edges {
            if !(e.slope_lo <= e.slope_hi) {
                return Err(Error::InvalidInput(format!(
                    "empty slope interval for {}",
                    e.name
                )));
            }
        }
        if let Some(tau) = self.tau {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "time constant must be positive, got {tau}"
                )));
            }
        }
        let m = self.uncertain_edges.len();
        if let Some(v) = self.param_vertices.iter().find(|v| v.len() != m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: v.len(),
            });
        }
        Ok(())
    }

    /// First-order Jacobian for coupling slopes `slopes` on the uncertain
    /// edges and `fixed_slopes` on the fixed ones.
    fn first_order(&self, fixed_slopes: &[f64], slopes: &[f64]) -> DMatrix<f64> {
        let n = self.agents;
        let mut l = DMatrix::zeros(n, n);
        let edges = self
            .fixed_edges
            .iter()
            .zip(fixed_slopes)
            .map(|(&(i, j), &s)| (i, j, s))
            .chain(
                self.uncertain_edges
                    .iter()
                    .zip(slopes)
                    .map(|(e, &s)| (e.receiver, e.sender, s)),
            );
        for (i, j, s) in edges {
            l[(i - 1, j - 1)] += s;
            l[(i - 1, i - 1)] -= s;
        }
        l
    }

    fn lift(&self, l: DMatrix<f64>, with_identity: bool) -> DMatrix<f64> {
        match self.tau {
            None => l,
            Some(tau) => {
                let n = self.agents;
                let mut j = DMatrix::zeros(2 * n, 2 * n);
                j.view_mut((n, 0), (n, n)).copy_from(&(l / tau));
                if with_identity {
                    j.view_mut((0, n), (n, n)).fill_with_identity();
                    j.view_mut((n, n), (n, n)).fill_with_identity();
                    j.view_mut((n, n), (n, n)).scale_mut(-1.0 / tau);
                }
                j
            }
        }
    }

    /// Jacobian at the given uncertain-edge slopes.
    pub fn jacobian_at(&self, slopes: &[f64]) -> Result<DMatrix<f64>> {
        self.validate()?;
        if slopes.len() != self.uncertain_edges.len() {
            return Err(Error::DimensionMismatch {
                expected: self.uncertain_edges.len(),
                found: slopes.len(),
            });
        }
        let ones = vec![1.0; self.fixed_edges.len()];
        Ok(self.lift(self.first_order(&ones, slopes), true))
    }

    pub fn parametrization(&self) -> Result<Parametrization> {
        self.validate()?;
        let m = self.uncertain_edges.len();
        let base = self.jacobian_at(&vec![0.0; m])?;
        let zeros = vec![0.0; self.fixed_edges.len()];
        let directions = (0..m)
            .map(|k| {
                let mut e = vec![0.0; m];
                e[k] = 1.0;
                self.lift(self.first_order(&zeros, &e), false)
            })
            .collect();
        Ok(Parametrization {
            base,
            directions,
            param_vertices: self.param_vertices.clone(),
        })
    }

    /// Vertex matrices at the listed slope tuples.
    pub fn family(&self) -> Result<MatrixFamily> {
        MatrixFamily::from_parametrization(self.parametrization()?)
    }

    /// All `2^m` corners of the slope box.
    pub fn box_vertices(&self) -> Vec<Vec<f64>> {
        let ranges: Vec<(f64, f64)> = self
            .uncertain_edges
            .iter()
            .map(|e| (e.slope_lo, e.slope_hi))
            .collect();
        box_corners(&ranges)
    }

    /// Concrete dynamics using each edge's `coupling`.
    pub fn instantiate(&self) -> Result<ConsensusSystem> {
        self.validate()?;
        for e in &self.uncertain_edges {
            e.coupling.check_slope(&e.name, e.slope_lo, e.slope_hi)?;
        }
        Ok(ConsensusSystem { spec: self.clone() })
    }
}

/// Corners of a box, first coordinate varying slowest; repeated corners
/// (degenerate intervals) are dropped.
pub fn box_corners(ranges: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let m = ranges.len();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(1 << m);
    for mask in 0..(1usize << m) {
        let v: Vec<f64> = (0..m)
            .map(|k| {
                let (lo, hi) = ranges[k];
                if mask >> (m - 1 - k) & 1 == 1 {
                    hi
                } else {
                    lo
                }
            })
            .collect();
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusSystem {
    spec: ConsensusSpec,
}

impl ConsensusSystem {
    fn couplings(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.spec.agents;
        let mut drive = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, n);
        let linear = Nonlinearity::Linear { slope: 1.0 };
        let edges = self
            .spec
            .fixed_edges
            .iter()
            .map(|&(i, j)| (i, j, &linear))
            .chain(
                self.spec
                    .uncertain_edges
                    .iter()
                    .map(|e| (e.receiver, e.sender, &e.coupling)),
            );
        for (i, j, f) in edges {
            let (i, j) = (i - 1, j - 1);
            let d = x[j] - x[i];
            drive[i] += f.value(d);
            let s = f.slope(d);
            jac[(i, j)] += s;
            jac[(i, i)] -= s;
        }
        (drive, jac)
    }
}

impl DynamicalSystem for ConsensusSystem {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn describe(&self) -> String {
        match self.spec.tau {
            None => format!("first-order consensus, {} agents", self.spec.agents),
            Some(tau) => format!(
                "second-order consensus, {} agents, tau = {tau}",
                self.spec.agents
            ),
        }
    }

    fn vector_field(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.spec.agents;
        match self.spec.tau {
            None => self.couplings(x).0,
            Some(tau) => {
                let pos = x.rows(0, n).into_owned();
                let vel = x.rows(n, n);
                let (drive, _) = self.couplings(&pos);
                let mut out = DVector::zeros(2 * n);
                out.rows_mut(0, n).copy_from(&vel);
                out.rows_mut(n, n).copy_from(&((drive - vel) / tau));
                out
            }
        }
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.spec.agents;
        match self.spec.tau {
            None => self.couplings(x).1,
            Some(_) => {
                let pos = x.rows(0, n).into_owned();
                self.spec.lift(self.couplings(&pos).1, true)
            }
        }
    }

    fn positions(&self) -> Option<Range<usize>> {
        Some(0..self.spec.agents)
    }
}

/// Controlled Duffing oscillator with state `(x_p, x_v, x_i)`:
/// `ẋ_p = x_v`, `ẋ_v = −α(x_p) − c x_v + k_f x_i`,
/// `L ẋ_i = k_p(x_ref − x_p) − k_e x_v − R x_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DuffingSpec {
    pub c: f64,
    pub k_f: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub k_e: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub kp_lo: f64,
    pub kp_hi: f64,
    pub x_ref: f64,
    pub spring: Nonlinearity,
    pub gain: Nonlinearity,
}

impl Default for DuffingSpec {
    fn default() -> Self {
        Self::paper()
    }
}

impl DuffingSpec {
    pub fn paper() -> Self {
        Self {
            c: 5.0,
            k_f: 1.0,
            l: 0.1,
            k_e: 1.0,
            r: 1.0,
            alpha_lo: -2.0,
            alpha_hi: 5.0,
            kp_lo: 0.0,
            kp_hi: 3.0,
            x_ref: 0.1,
            spring: Nonlinearity::LinearTanh {
                linear: 5.0,
                tanh: -7.0,
            },
            gain: Nonlinearity::Linear { slope: 1.0 },
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        vec!["alpha".into(), "kp".into()]
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.c,
            self.k_f,
            self.l,
            self.k_e,
            self.r,
            self.alpha_lo,
            self.alpha_hi,
            self.kp_lo,
            self.kp_hi,
            self.x_ref,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "Duffing parameters must be finite".into(),
            ));
        }
        if !(self.l > 0.0) {
            return Err(Error::InvalidInput(format!(
                "inductance must be positive, got {}",
                self.l
            )));
        }
        if !(self.alpha_lo <= self.alpha_hi && self.kp_lo <= self.kp_hi) {
            return Err(Error::InvalidInput("empty slope interval".into()));
        }
        Ok(())
    }

    /// Jacobian at spring slope `alpha` and gain slope `kp`.
    pub fn jacobian_at(&self, alpha: f64, kp: f64) -> DMatrix<f64> {
        let l = self.l;
        DMatrix::from_row_slice(
            3,
            3,
            &[
                0.0,
                1.0,
                0.0,
                -alpha,
                -self.c,
                self.k_f,
                -kp / l,
                -self.k_e / l,
                -self.r / l,
            ],
        )
    }

    /// `A(α', k_p') = A₀ + α' D_α + k_p' D_kp` over the corners of the slope box.
    pub fn parametrization(&self) -> Result<Parametrization> {
        self.validate()?;
        let mut d_alpha = DMatrix::zeros(3, 3);
        d_alpha[(1, 0)] = -1.0;
        let mut d_kp = DMatrix::zeros(3, 3);
        d_kp[(2, 0)] = -1.0 / self.l;
        Ok(Parametrization {
            base: self.jacobian_at(0.0, 0.0),
            directions: vec![d_alpha, d_kp],
            param_vertices: box_corners(&[
                (self.alpha_lo, self.alpha_hi),
                (self.kp_lo, self.kp_hi),
            ]),
        })
    }

    pub fn family(&self) -> Result<MatrixFamily> {
        MatrixFamily::from_parametrization(self.parametrization()?)
    }

    pub fn instantiate(&self) -> Result<DuffingSystem> {
        self.validate()?;
        self.spring
            .check_slope("spring", self.alpha_lo, self.alpha_hi)?;
        self.gain.check_slope("gain", self.kp_lo, self.kp_hi)?;
        Ok(DuffingSystem { spec: self.clone() })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DuffingSystem {
    spec: DuffingSpec,
}

impl DynamicalSystem for DuffingSystem {
    fn dim(&self) -> usize {
        3
    }

    fn describe(&self) -> String {
        format!("controlled Duffing oscillator, c = {}", self.spec.c)
    }

    fn vector_field(&self, x: &DVector<f64>) -> DVector<f64> {
        let s = &self.spec;
        let (p, v, i) = (x[0], x[1], x[2]);
        DVector::from_vec(vec![
            v,
            -s.spring.value(p) - s.c * v + s.k_f * i,
            (s.gain.value(s.x_ref - p) - s.k_e * v - s.r * i) / s.l,
        ])
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let s = &self.spec;
        s.jacobian_at(s.spring.slope(x[0]), s.gain.slope(s.x_ref - x[0]))
    }
}

/// Jacobians at `count` states drawn uniformly from the box `[lo, hi]`.
pub fn sample_jacobians(
    sys: &dyn DynamicalSystem,
    lo: &[f64],
    hi: &[f64],
    count: usize,
    rng_seed: u64,
) -> Result<Vec<DMatrix<f64>>> {
    let n = sys.dim();
    if count == 0 {
        return Err(Error::InvalidInput(
            "sample count must be at least 1".into(),
        ));
    }
    for b in [lo, hi] {
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: b.len(),
            });
        }
    }
    if lo.iter().zip(hi).any(|(a, b)| !(a <= b)) {
        return Err(Error::InvalidInput("sampling box has lo > hi".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok((0..count)
        .map(|_| {
            let x = DVector::from_fn(n, |i, _| {
                if lo[i] == hi[i] {
                    lo[i]
                } else {
                    rng.random_range(lo[i]..hi[i])
                }
            });
            sys.jacobian(&x)
        })
        .collect())
}

/// Row-major nested list to matrix.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != nc) {
        return Err(Error::DimensionMismatch {
            expected: nc,
            found: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Built-in example systems.
#[derive(Clone, Debug, PartialEq)]
pub enum Builtin {
    Consensus(ConsensusSpec),
    Duffing(DuffingSpec),
}

pub const BUILTIN_NAMES: [&str; 3] = [
    "paper-consensus-5",
    "paper-consensus-5-second-order",
    "paper-duffing",
];

/// Default time constant of the second-order built-in.
pub const DEFAULT_SECOND_ORDER_TAU: f64 = 0.3;

fn with_overrides<T: Serialize + for<'de> Deserialize<'de>>(
    spec: T,
    overrides: &Map<String, Value>,
) -> Result<T> {
    let mut value = serde_json::to_value(&spec).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::InvalidInput("spec is not an object".into()))?;
    for (k, v) in overrides {
        if !obj.contains_key(k) {
            return Err(Error::InvalidInput(format!("unknown override key `{k}`")));
        }
        obj.insert(k.clone(), v.clone());
    }
    serde_json::from_value(value).map_err(|e| Error::InvalidInput(format!("bad override: {e}")))
}

impl Builtin {
    pub fn named(name: &str, overrides: &Map<String, Value>) -> Result<Self> {
        let b = match name {
            "paper-consensus-5" => {
                Builtin::Consensus(with_overrides(ConsensusSpec::paper(), overrides)?)
            }
            "paper-consensus-5-second-order" => Builtin::Consensus(with_overrides(
                ConsensusSpec::paper_second_order(DEFAULT_SECOND_ORDER_TAU),
                overrides,
            )?),
            "paper-duffing" => Builtin::Duffing(with_overrides(DuffingSpec::paper(), overrides)?),
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown built-in `{other}` (expected one of {})",
                    BUILTIN_NAMES.join(", ")
                )))
            }
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Builtin::Consensus(s) => s.validate(),
            Builtin::Duffing(s) => s.validate(),
        }
    }

    pub fn parametrization(&self) -> Result<Parametrization> {
        match self {
            Builtin::Consensus(s) => s.parametrization(),
            Builtin::Duffing(s) => s.parametrization(),
        }
    }

    pub fn family(&self) -> Result<MatrixFamily> {
        MatrixFamily::from_parametrization(self.parametrization()?)
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            Builtin::Consensus(s) => s.param_names(),
            Builtin::Duffing(s) => s.param_names(),
        }
    }

    pub fn instantiate(&self) -> Result<Box<dyn DynamicalSystem>> {
        Ok(match self {
            Builtin::Consensus(s) => Box::new(s.instantiate()?),
            Builtin::Duffing(s) => Box::new(s.instantiate()?),
        })
    }
}

/// On-disk system description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SystemFile {
    Family {
        dim: usize,
        vertices: Vec<Vec<Vec<f64>>>,
    },
    Parametrized {
        base: Vec<Vec<f64>>,
        directions: Vec<Vec<Vec<f64>>>,
        param_vertices: Vec<Vec<f64>>,
    },
    Builtin {
        name: String,
        #[serde(default)]
        overrides: Map<String, Value>,
    },
}

/// A system file resolved to its family and, when available, its dynamics.
pub struct ResolvedSystem {
    pub family: MatrixFamily,
    pub builtin: Option<Builtin>,
}

impl ResolvedSystem {
    pub fn parametrization(&self) -> Option<&Parametrization> {
        self.family.parametrization()
    }
}

impl SystemFile {
    pub fn resolve(&self) -> Result<ResolvedSystem> {
        match self {
            SystemFile::Family { dim, vertices } => {
                let mats: Vec<DMatrix<f64>> = vertices
                    .iter()
                    .map(|v| matrix_from_rows(v))
                    .collect::<Result<_>>()?;
                if let Some(m) = mats.iter().find(|m| m.shape() != (*dim, *dim)) {
                    return Err(Error::DimensionMismatch {
                        expected: *dim,
                        found: if m.nrows() != *dim {
                            m.nrows()
                        } else {
                            m.ncols()
                        },
                    });
                }
                Ok(ResolvedSystem {
                    family: MatrixFamily::new(mats)?,
                    builtin: None,
                })
            }
            SystemFile::Parametrized {
                base,
                directions,
                param_vertices,
            } => {
                let p = Parametrization {
                    base: matrix_from_rows(base)?,
                    directions: directions
                        .iter()
                        .map(|d| matrix_from_rows(d))
                        .collect::<Result<_>>()?,
                    param_vertices: param_vertices.clone(),
                };
                Ok(ResolvedSystem {
                    family: MatrixFamily::from_parametrization(p)?,
                    builtin: None,
                })
            }
            SystemFile::Builtin { name, overrides } => {
                let b = Builtin::named(name, overrides)?;
                Ok(ResolvedSystem {
                    family: b.family()?,
                    builtin: Some(b),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn paper_consensus_vertex() {
        let spec = ConsensusSpec::paper();
        let a = spec.jacobian_at(&[1.0, 1.0]).unwrap();
        assert_eq!(a[(0, 4)], 1.0);
        assert_eq!(a[(3, 1)], 1.0);
        assert_eq!(a[(0, 1)], 1.0);
        assert_eq!(a[(0, 0)], -2.0);
        assert_eq!(a[(2, 2)], -1.0);
        let fam = spec.family().unwrap();
        assert_eq!(fam.len(), 4);
        let ones = DVector::from_element(5, 1.0);
        for v in fam.vertices() {
            assert!((v * &ones).amax() < 1e-12);
        }
    }

    #[test]
    fn second_order_blocks() {
        let spec = ConsensusSpec::paper_second_order(0.3);
        let a = spec.jacobian_at(&[1.0, 1.0]).unwrap();
        let l = ConsensusSpec::paper().jacobian_at(&[1.0, 1.0]).unwrap();
        assert_eq!(a.view((0, 5), (5, 5)), DMatrix::<f64>::identity(5, 5));
        assert!((a.view((5, 5), (5, 5)) + DMatrix::<f64>::identity(5, 5) / 0.3).amax() < 1e-12);
        assert!((a.view((5, 0), (5, 5)) - l / 0.3).amax() < 1e-12);
        assert_eq!(a.view((0, 0), (5, 5)), DMatrix::<f64>::zeros(5, 5));
        let mut kernel = DVector::zeros(10);
        kernel.rows_mut(0, 5).fill(1.0);
        for v in spec.family().unwrap().vertices() {
            assert!((v * &kernel).amax() < 1e-12);
        }
    }

    #[test]
    fn duffing_corners() {
        let fam = DuffingSpec::paper().family().unwrap();
        assert_eq!(fam.len(), 4);
        assert!(fam
            .vertices()
            .contains(&dmatrix![0.0, 1.0, 0.0; 2.0, -5.0, 1.0; 0.0, -10.0, -10.0]));
        assert!(fam.vertices().iter().any(|v| (v
            - dmatrix![0.0, 1.0, 0.0; -5.0, -5.0, 1.0; -30.0, -10.0, -10.0])
        .amax()
            < 1e-12));
        let collapsed = DuffingSpec {
            alpha_hi: -2.0,
            ..DuffingSpec::paper()
        };
        assert_eq!(collapsed.family().unwrap().len(), 2);
    }

    #[test]
    fn slope_checks() {
        assert!(ConsensusSpec::paper().instantiate().is_ok());
        assert!(DuffingSpec::paper().instantiate().is_ok());
        let mut bad = ConsensusSpec::paper();
        bad.uncertain_edges[0].coupling = Nonlinearity::Sine { amplitude: 2.0 };
        assert!(matches!(
            bad.instantiate(),
            Err(Error::SlopeViolation { .. })
        ));
    }

    #[test]
    fn self_loop_rejected() {
        let mut s = ConsensusSpec::paper();
        s.fixed_edges.push((3, 3));
        assert!(matches!(s.validate(), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn sampling() {
        let lin = LinearSystem {
            a: dmatrix![-1.0, 2.0; 0.0, -3.0],
        };
        let s = sample_jacobians(&lin, &[-1.0, -1.0], &[1.0, 1.0], 5, 0).unwrap();
        assert!(s.iter().all(|m| *m == lin.a));
        assert!(sample_jacobians(&lin, &[-1.0, -1.0], &[1.0, 1.0], 0, 0).is_err());
        let duff = DuffingSpec::paper().instantiate().unwrap();
        let js = sample_jacobians(&duff, &[-5.0, 0.0, 0.0], &[5.0, 0.0, 0.0], 500, 1).unwrap();
        let alphas: Vec<f64> = js.iter().map(|j| -j[(1, 0)]).collect();
        let lo = alphas.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = alphas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo > -2.0 && lo < -1.5, "{lo}");
        assert!(hi < 5.0 && hi > 4.9, "{hi}");
    }

    #[test]
    fn overrides_apply_and_reject_unknown() {
        let mut o = Map::new();
        o.insert("c".into(), Value::from(8.0));
        match Builtin::named("paper-duffing", &o).unwrap() {
            Builtin::Duffing(s) => assert_eq!(s.c, 8.0),
            _ => unreachable!(),
        }
        o.insert("bogus".into(), Value::from(1.0));
        assert!(Builtin::named("paper-duffing", &o).is_err());
        let mut t = Map::new();
        t.insert("tau".into(), Value::from(1.0));
        match Builtin::named("paper-consensus-5-second-order", &t).unwrap() {
            Builtin::Consensus(s) => assert_eq!(s.tau, Some(1.0)),
            _ => unreachable!(),
        }
    }

    #[test]
    fn system_file_round_trip() {
        let text = r#"{"type":"family","dim":2,"vertices":[[[-1,1],[1,-1]]]}"#;
        let f: SystemFile = serde_json::from_str(text).unwrap();
        let r = f.resolve().unwrap();
        assert_eq!(r.family.vertex(0), &dmatrix![-1.0, 1.0; 1.0, -1.0]);
        let text = r#"{"type":"builtin","name":"paper-duffing","overrides":{"c":8}}"#;
        let f: SystemFile = serde_json::from_str(text).unwrap();
        assert!(f.resolve().unwrap().builtin.is_some());
    }
}
