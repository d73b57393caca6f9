//! Fixed-step trajectory integration and limit classification.

use std::io::Write;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::systems::DynamicalSystem;

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_WINDOW_FRAC: f64 = 0.1;
pub const DEFAULT_LIMIT_TOL: f64 = 1e-4;
const BLOWUP_NORM: f64 = 1e9;

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// One row per time sample.
    pub states: DMatrix<f64>,
    pub description: String,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> DVector<f64> {
        self.states.row(self.states.nrows() - 1).transpose()
    }

    /// Every `stride`-th sample, always keeping the last one.
    pub fn thinned(&self, stride: usize) -> Trajectory {
        let stride = stride.max(1);
        let rows = self.states.nrows();
        let mut keep: Vec<usize> = (0..rows).step_by(stride).collect();
        if keep.last() != Some(&(rows - 1)) {
            keep.push(rows - 1);
        }
        Trajectory {
            times: keep.iter().map(|&k| self.times[k]).collect(),
            states: self.states.select_rows(keep.iter()),
            description: self.description.clone(),
        }
    }

    /// CSV with header `t,x1,...,xn`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = self.states.ncols();
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=n).map(|i| format!("x{i}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (k, t) in self.times.iter().enumerate() {
            write!(out, "{t}")?;
            for v in self.states.row(k).iter() {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Classic RK4 with step `dt` from `t = 0` to `t_final`. The last step is
/// shortened to land on `t_final` exactly.
pub fn integrate(
    sys: &dyn DynamicalSystem,
    x0: &DVector<f64>,
    dt: f64,
    t_final: f64,
) -> Result<Trajectory> {
    if x0.len() != sys.dim() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim(),
            found: x0.len(),
        });
    }
    if !(dt > 0.0 && dt.is_finite()) || !(t_final >= dt && t_final.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "need 0 < dt <= t_final, got dt = {dt}, t_final = {t_final}"
        )));
    }
    let steps = (t_final / dt - 1e-9).ceil() as usize;
    let n = x0.len();
    let mut times = Vec::with_capacity(steps + 1);
    let mut data = Vec::with_capacity((steps + 1) * n);
    let mut x = x0.clone();
    let mut t = 0.0;
    times.push(t);
    data.extend(x.iter());
    for k in 1..=steps {
        let t_next = if k == steps { t_final } else { k as f64 * dt };
        let h = t_next - t;
        let k1 = sys.vector_field(&x);
        let k2 = sys.vector_field(&(&x + &k1 * (h / 2.0)));
        let k3 = sys.vector_field(&(&x + &k2 * (h / 2.0)));
        let k4 = sys.vector_field(&(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        t = t_next;
        if !(x.norm() <= BLOWUP_NORM) {
            return Err(Error::Blowup { time: t });
        }
        times.push(t);
        data.extend(x.iter());
    }
    Ok(Trajectory {
        states: DMatrix::from_row_slice(times.len(), n, &data),
        times,
        description: sys.describe(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LimitClass {
    FixedPoint {
        state: Vec<f64>,
    },
    /// Fixed point whose position coordinates agree; carries their mean.
    Consensus {
        value: f64,
    },
    Undecided,
}

/// Classifies the trailing `window_frac` of the trajectory.
pub fn classify_limit(
    traj: &Trajectory,
    window_frac: f64,
    tol: f64,
    positions: Option<Range<usize>>,
) -> Result<LimitClass> {
    let rows = traj.states.nrows();
    let window = ((rows as f64) * window_frac).ceil() as usize;
    if !(window_frac > 0.0 && window_frac <= 1.0) || window < 2 || window > rows {
        return Err(Error::InvalidInput(format!(
            "trajectory of {rows} samples too short for window fraction {window_frac}"
        )));
    }
    let tail = traj.states.rows(rows - window, window);
    let variation = tail
        .column_iter()
        .map(|c| c.max() - c.min())
        .fold(0.0, f64::max);
    if !(variation < tol) {
        return Ok(LimitClass::Undecided);
    }
    let last = traj.final_state();
    if let Some(pos) = positions {
        let p = last.rows(pos.start, pos.len());
        if p.max() - p.min() < tol {
            return Ok(LimitClass::Consensus { value: p.mean() });
        }
    }
    Ok(LimitClass::FixedPoint {
        state: last.iter().copied().collect(),
    })
}

/// Groups fixed points whose states lie within `tol` (max norm) of a
/// cluster's first member; returns cluster representatives.
pub fn cluster_fixed_points(points: &[Vec<f64>], tol: f64) -> Vec<Vec<f64>> {
    let mut reps: Vec<Vec<f64>> = Vec::new();
    for p in points {
        let near = reps
            .iter()
            .any(|r| r.iter().zip(p).all(|(a, b)| (a - b).abs() <= tol));
        if !near {
            reps.push(p.clone());
        }
    }
    reps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::LinearSystem;
    use nalgebra::dmatrix;

    fn decay() -> LinearSystem {
        LinearSystem { a: dmatrix![-1.0] }
    }

    #[test]
    fn scalar_decay() {
        let tr = integrate(&decay(), &DVector::from_element(1, 1.0), 0.01, 10.0).unwrap();
        assert!((tr.final_state()[0] - (-10f64).exp()).abs() < 1e-6);
        assert!((tr.times.last().unwrap() - 10.0).abs() < 1e-12);
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn fourth_order_convergence() {
        let err = |dt: f64| {
            let tr = integrate(&decay(), &DVector::from_element(1, 1.0), dt, 1.0).unwrap();
            (tr.final_state()[0] - (-1f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((12.0..=20.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn blowup_reported() {
        let grow = LinearSystem { a: dmatrix![10.0] };
        assert!(matches!(
            integrate(&grow, &DVector::from_element(1, 1.0), 0.01, 10.0),
            Err(Error::Blowup { .. })
        ));
    }

    #[test]
    fn classification() {
        let still = LinearSystem {
            a: dmatrix![0.0, 0.0; 0.0, 0.0],
        };
        let tr = integrate(&still, &DVector::from_vec(vec![1.0, 2.0]), 0.1, 5.0).unwrap();
        assert!(matches!(
            classify_limit(&tr, 0.1, 1e-4, None).unwrap(),
            LimitClass::FixedPoint { .. }
        ));
        let tr = integrate(&still, &DVector::from_vec(vec![1.5, 1.5]), 0.1, 5.0).unwrap();
        assert_eq!(
            classify_limit(&tr, 0.1, 1e-4, Some(0..2)).unwrap(),
            LimitClass::Consensus { value: 1.5 }
        );
        let rot = LinearSystem {
            a: dmatrix![0.0, 1.0; -1.0, 0.0],
        };
        let tr = integrate(&rot, &DVector::from_vec(vec![1.0, 0.0]), 0.01, 20.0).unwrap();
        assert_eq!(
            classify_limit(&tr, 0.1, 1e-4, None).unwrap(),
            LimitClass::Undecided
        );
    }

    #[test]
    fn csv_layout() {
        let tr = integrate(&decay(), &DVector::from_element(1, 1.0), 0.5, 1.0).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x1");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,1"));
        let thin = integrate(&decay(), &DVector::from_element(1, 1.0), 0.1, 1.0)
            .unwrap()
            .thinned(3);
        assert_eq!(thin.times.len(), 5);
        assert!((thin.times[4] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clusters() {
        let pts = vec![vec![0.0, 1.0], vec![0.0, 1.00001], vec![-1.0, 0.0]];
        assert_eq!(cluster_fixed_points(&pts, 1e-3).len(), 2);
    }
}
