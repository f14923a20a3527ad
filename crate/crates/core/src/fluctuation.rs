//! Conditional fluctuation tensors and their alignment.
//!
//! For an event (a set of trajectory indices) at a step, the order-1 tensor is
//! the event mean minus the chosen center and the order-2 tensor is the
//! centered second moment. Two events are compared through the Hilbert inner
//! product of their tensors (`G`) and its cosine-normalized magnitude (`M`),
//! which for order 2 under conditional centering is linear CKA.
//!
//! All accumulations run over fixed row chunks combined by pairwise
//! reduction, so results do not depend on the worker count.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::TrajectorySweep;
use crate::par;
use crate::schedule::{AttenuationMode, NoiseSchedule};

/// Dense eigen-solver below this dimension, matrix-free power iteration above.
pub const DENSE_EIGEN_MAX_DIM: usize = 256;
pub const POWER_MAX_ITER: usize = 10_000;
pub const POWER_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    #[default]
    ConditionalMean,
    GlobalMean,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FluctuationTensor {
    Vector(Array1<f64>),
    Matrix(Array2<f64>),
}

impl FluctuationTensor {
    pub fn order(&self) -> u8 {
        match self {
            FluctuationTensor::Vector(_) => 1,
            FluctuationTensor::Matrix(_) => 2,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FluctuationTensor::Vector(v) => v.len(),
            FluctuationTensor::Matrix(m) => m.nrows(),
        }
    }

    fn as_flat(&self) -> &[f64] {
        match self {
            FluctuationTensor::Vector(v) => v.as_slice().expect("owned vector is contiguous"),
            FluctuationTensor::Matrix(m) => m.as_slice().expect("owned matrix is contiguous"),
        }
    }

    pub fn inner(&self, other: &FluctuationTensor) -> Result<f64> {
        if self.order() != other.order() {
            return Err(Error::domain(format!(
                "cannot pair order-{} with order-{} tensors",
                self.order(),
                other.order()
            )));
        }
        if self.dim() != other.dim() {
            return Err(Error::domain(format!("dimension mismatch: {} vs {}", self.dim(), other.dim())));
        }
        let prods: Vec<f64> = self.as_flat().iter().zip(other.as_flat()).map(|(a, b)| a * b).collect();
        Ok(par::pairwise_sum(&prods))
    }

    pub fn norm_sq(&self) -> f64 {
        let sq: Vec<f64> = self.as_flat().iter().map(|a| a * a).collect();
        par::pairwise_sum(&sq)
    }
}

/// Conditional moments of one event at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalMoments {
    pub event: Option<usize>,
    pub step: usize,
    pub count: usize,
    pub centering: Centering,
    pub mean: Array1<f64>,
    pub tensor: FluctuationTensor,
    /// Largest eigenvalue of the order-2 tensor; `|v|^2` for an order-1 tensor `v`.
    pub top_eigenvalue: f64,
    pub frobenius_sq: f64,
}

impl ConditionalMoments {
    /// Wraps a bare tensor, e.g. a known covariance.
    pub fn from_tensor(tensor: FluctuationTensor) -> Result<Self> {
        let d = tensor.dim();
        let frobenius_sq = tensor.norm_sq();
        let top_eigenvalue = match &tensor {
            FluctuationTensor::Vector(_) => frobenius_sq,
            FluctuationTensor::Matrix(m) => top_eigenvalue(SymmetricOperand::Dense(m.view()), POWER_TOL)?,
        };
        Ok(ConditionalMoments {
            event: None,
            step: 0,
            count: 0,
            centering: Centering::ConditionalMean,
            mean: Array1::zeros(d),
            tensor,
            top_eigenvalue,
            frobenius_sq,
        })
    }

    pub fn order(&self) -> u8 {
        self.tensor.order()
    }

    /// Trace of the order-2 tensor, `|v|^2` for order 1.
    pub fn trace(&self) -> f64 {
        match &self.tensor {
            FluctuationTensor::Vector(_) => self.frobenius_sq,
            FluctuationTensor::Matrix(m) => m.diag().sum(),
        }
    }

    pub fn tagged(mut self, event: usize) -> Self {
        self.event = Some(event);
        self
    }
}

/// Column means, accumulated per row chunk and combined pairwise.
pub fn column_mean(x: ArrayView2<f64>) -> Array1<f64> {
    let (n, d) = x.dim();
    let chunks = n.div_ceil(par::ROW_CHUNK);
    let parts = par::map_range(chunks, |c| {
        let mut acc = vec![0.0; d];
        let lo = c * par::ROW_CHUNK;
        let hi = (lo + par::ROW_CHUNK).min(n);
        for i in lo..hi {
            for (a, v) in acc.iter_mut().zip(x.row(i)) {
                *a += v;
            }
        }
        acc
    });
    Array1::from(par::pairwise_reduce(parts)) / n as f64
}

/// `(1/n) sum_i (x_i - c)(x_i - c)^T`.
pub fn centered_second_moment(x: ArrayView2<f64>, center: ArrayView1<f64>) -> Array2<f64> {
    let (n, d) = x.dim();
    let chunks = n.div_ceil(par::ROW_CHUNK);
    let parts = par::map_range(chunks, |c| {
        let mut acc = vec![0.0; d * d];
        let mut y = vec![0.0; d];
        let lo = c * par::ROW_CHUNK;
        let hi = (lo + par::ROW_CHUNK).min(n);
        for i in lo..hi {
            for (j, (yj, xj)) in y.iter_mut().zip(x.row(i)).enumerate() {
                *yj = xj - center[j];
            }
            for a in 0..d {
                let ya = y[a];
                let row = &mut acc[a * d..(a + 1) * d];
                for b in a..d {
                    row[b] += ya * y[b];
                }
            }
        }
        acc
    });
    let flat = par::pairwise_reduce(parts);
    let mut m = Array2::<f64>::zeros((d, d));
    let inv = 1.0 / n as f64;
    for a in 0..d {
        for b in a..d {
            let v = flat[a * d + b] * inv;
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    m
}

/// Moments of the rows of `x`. `global_center` is required for global-mean centering.
pub fn event_moments(
    x: ArrayView2<f64>,
    order: u8,
    centering: Centering,
    global_center: Option<ArrayView1<f64>>,
) -> Result<ConditionalMoments> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::domain("event is empty"));
    }
    if order == 2 && n < 2 {
        return Err(Error::degenerate("order-2 moments need at least two rows in the event"));
    }
    let mean = column_mean(x);
    let center = match centering {
        Centering::ConditionalMean => mean.clone(),
        Centering::GlobalMean => global_center
            .ok_or_else(|| Error::domain("global-mean centering needs the global mean"))?
            .to_owned(),
    };
    let tensor = match order {
        1 => FluctuationTensor::Vector(match centering {
            Centering::ConditionalMean => Array1::zeros(mean.len()),
            Centering::GlobalMean => &mean - &center,
        }),
        2 => FluctuationTensor::Matrix(centered_second_moment(x, center.view())),
        _ => return Err(Error::domain(format!("tensor order must be 1 or 2, got {order}"))),
    };
    let frobenius_sq = tensor.norm_sq();
    let top = match &tensor {
        FluctuationTensor::Vector(_) => frobenius_sq,
        FluctuationTensor::Matrix(m) if m.nrows() <= DENSE_EIGEN_MAX_DIM => {
            top_eigenvalue(SymmetricOperand::Dense(m.view()), POWER_TOL)?
        }
        FluctuationTensor::Matrix(_) => top_eigenvalue(SymmetricOperand::CenteredData { x, center: center.view() }, POWER_TOL)?,
    };
    Ok(ConditionalMoments {
        event: None,
        step: 0,
        count: n,
        centering,
        mean,
        tensor,
        top_eigenvalue: top,
        frobenius_sq,
    })
}

/// Moments of `event` (row indices of the sweep dataset) at sweep step `t`.
pub fn conditional_fluctuation(
    sweep: &TrajectorySweep<'_>,
    event: &[usize],
    t: usize,
    order: u8,
    centering: Centering,
) -> Result<ConditionalMoments> {
    if event.is_empty() {
        return Err(Error::domain("event is empty"));
    }
    let mut m = match centering {
        Centering::ConditionalMean => {
            let x = sweep.snapshot_rows(t, event)?;
            event_moments(x.view(), order, centering, None)?
        }
        Centering::GlobalMean => {
            let full = sweep.snapshot(t)?;
            let g = column_mean(full.view());
            let x = full.select(ndarray::Axis(0), event);
            event_moments(x.view(), order, centering, Some(g.view()))?
        }
    };
    m.step = t;
    Ok(m)
}

pub fn cross_fluctuation_g(a: &ConditionalMoments, b: &ConditionalMoments) -> Result<f64> {
    a.tensor.inner(&b.tensor)
}

/// `|G(a, b)| / sqrt(F(a) F(b))`, clamped to `[0, 1]`.
pub fn normalized_m(a: &ConditionalMoments, b: &ConditionalMoments) -> Result<f64> {
    let g = cross_fluctuation_g(a, b)?;
    normalized_from_parts(g, a.frobenius_sq, b.frobenius_sq)
}

pub(crate) fn normalized_from_parts(g: f64, fa: f64, fb: f64) -> Result<f64> {
    if !(fa > 0.0) || !(fb > 0.0) {
        return Err(Error::degenerate("fluctuation tensor has zero norm"));
    }
    let denom = (fa * fb).sqrt();
    let denom = if denom.is_finite() && denom > 0.0 { denom } else { fa.sqrt() * fb.sqrt() };
    Ok((g.abs() / denom).min(1.0))
}

/// Operand for [`top_eigenvalue`].
#[derive(Clone, Copy, Debug)]
pub enum SymmetricOperand<'a> {
    Dense(ArrayView2<'a, f64>),
    /// `(1/n) (X - 1 c^T)^T (X - 1 c^T)`, applied without forming the `d x d` matrix.
    CenteredData { x: ArrayView2<'a, f64>, center: ArrayView1<'a, f64> },
}

impl SymmetricOperand<'_> {
    fn dim(&self) -> usize {
        match self {
            SymmetricOperand::Dense(m) => m.nrows(),
            SymmetricOperand::CenteredData { x, .. } => x.ncols(),
        }
    }

    fn apply(&self, v: &Array1<f64>) -> Array1<f64> {
        match self {
            SymmetricOperand::Dense(m) => m.dot(v),
            SymmetricOperand::CenteredData { x, center } => {
                let (n, d) = x.dim();
                let shift = center.dot(v);
                let chunks = n.div_ceil(par::ROW_CHUNK);
                let parts = par::map_range(chunks, |c| {
                    let mut acc = vec![0.0; d];
                    let lo = c * par::ROW_CHUNK;
                    let hi = (lo + par::ROW_CHUNK).min(n);
                    for i in lo..hi {
                        let row = x.row(i);
                        let s = row.dot(v) - shift;
                        for (a, (xa, ca)) in acc.iter_mut().zip(row.iter().zip(center.iter())) {
                            *a += s * (xa - ca);
                        }
                    }
                    acc
                });
                Array1::from(par::pairwise_reduce(parts)) / n as f64
            }
        }
    }
}

/// Largest eigenvalue of a symmetric PSD operand.
///
/// Dense operands up to [`DENSE_EIGEN_MAX_DIM`] use cyclic Jacobi; everything
/// else uses power iteration until the residual `|Av - theta v|` drops below
/// `tol * theta`.
pub fn top_eigenvalue(op: SymmetricOperand<'_>, tol: f64) -> Result<f64> {
    let d = op.dim();
    if d == 0 {
        return Err(Error::domain("empty operand"));
    }
    match op {
        SymmetricOperand::Dense(m) => {
            if m.ncols() != d {
                return Err(Error::domain("matrix must be square"));
            }
            if d <= DENSE_EIGEN_MAX_DIM {
                let eig = jacobi_eigenvalues(m);
                return Ok(eig.into_iter().fold(f64::NEG_INFINITY, f64::max));
            }
            power_iteration(&op, tol)
        }
        SymmetricOperand::CenteredData { x, center } => {
            if x.nrows() < 2 {
                return Err(Error::degenerate("data view needs at least two rows"));
            }
            if center.len() != d {
                return Err(Error::domain("center length must match the data dimension"));
            }
            power_iteration(&op, tol)
        }
    }
}

fn power_iteration(op: &SymmetricOperand<'_>, tol: f64) -> Result<f64> {
    let d = op.dim();
    // Deterministic start with components along every axis.
    let mut v = Array1::from_shape_fn(d, |i| 1.0 + (i as f64 + 1.0).sqrt().fract());
    v /= v.dot(&v).sqrt();
    let mut theta = 0.0;
    let mut resid = f64::INFINITY;
    for _ in 0..POWER_MAX_ITER {
        let w = op.apply(&v);
        theta = v.dot(&w);
        let norm_w = w.dot(&w).sqrt();
        if norm_w == 0.0 {
            return Ok(0.0);
        }
        let r = &w - &(theta * &v);
        resid = r.dot(&r).sqrt();
        if resid <= tol * theta.abs() {
            return Ok(theta);
        }
        v = w / norm_w;
    }
    Err(Error::Numeric {
        message: format!("power iteration did not converge in {POWER_MAX_ITER} iterations"),
        lower: theta,
        upper: theta + resid,
    })
}

/// All eigenvalues of a small symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(m: ArrayView2<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut a = m.to_owned();
    for _sweep in 0..100 {
        let mut off = 0.0;
        let mut diag = 0.0;
        for p in 0..d {
            diag += a[(p, p)] * a[(p, p)];
            for q in p + 1..d {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off <= 1e-30 * diag || off == 0.0 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..d).map(|i| a[(i, i)]).collect()
}

/// `E[Z^n]` for a standard normal `Z`: 0 for odd `n`, `(n - 1)!!` for even `n`.
pub fn gaussian_central_moment(n: u32) -> f64 {
    if n % 2 == 1 {
        return 0.0;
    }
    (1..n).step_by(2).map(|k| k as f64).product()
}

/// Centered moment of order `n` of a unit-variance component after noising to step `t`:
/// `J^n mu0 + (1 - J^n) E[Z^n]`.
pub fn scalar_moment_trajectory(mu0: f64, n: u32, schedule: &NoiseSchedule, t: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::domain("moment order must be at least 2"));
    }
    let j = schedule.attenuation(t, AttenuationMode::default())?.j_value;
    Ok(scalar_moment_from_attenuation(mu0, n, j))
}

pub fn scalar_moment_from_attenuation(mu0: f64, n: u32, j: f64) -> f64 {
    let jn = j.powi(n as i32);
    jn * mu0 + (1.0 - jn) * gaussian_central_moment(n)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalarMomentTrack {
    pub order: u32,
    pub initial: f64,
    pub steps: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn scalar_moment_track(mu0: f64, n: u32, schedule: &NoiseSchedule, steps: &[usize]) -> Result<ScalarMomentTrack> {
    let values = steps
        .iter()
        .map(|&t| scalar_moment_trajectory(mu0, n, schedule, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScalarMomentTrack { order: n, initial: mu0, steps: steps.to_vec(), values })
}

/// Empirical centered moment `(1/N) sum (x - mean)^n`.
pub fn empirical_central_moment(x: &[f64], n: u32) -> f64 {
    let len = x.len() as f64;
    let mean = par::pairwise_sum(x) / len;
    let terms: Vec<f64> = x.iter().map(|v| (v - mean).powi(n as i32)).collect();
    par::pairwise_sum(&terms) / len
}
