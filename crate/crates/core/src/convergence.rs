//! Convergence to the Gaussian limit and distribution distances.
//!
//! Normality is judged per 1-D view (coordinates or seeded random
//! projections) with the D'Agostino-Pearson omnibus test; a step counts as
//! converged once the fraction of rejecting views is within a 1.5x allowance
//! of the nominal level.

use ndarray::{Array1, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::forward::TrajectorySweep;
use crate::par;
use crate::rng::{self, domain};

/// A step passes when its rejection fraction is at most `alpha` times this.
pub const FALSE_POSITIVE_SLACK: f64 = 1.5;
pub const MIN_NORMALITY_SAMPLE: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NormalityTest {
    pub k2: f64,
    pub p: f64,
}

fn central_moments(x: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mean = par::pairwise_sum(x) / n;
    let dev: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let pow = |k: i32| par::pairwise_sum(&dev.iter().map(|d| d.powi(k)).collect::<Vec<_>>()) / n;
    (pow(2), pow(3), pow(4))
}

fn skew_z(b2: f64, n: f64) -> f64 {
    let y = b2 * ((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0))).sqrt();
    let beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0)
        / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    let w2 = -1.0 + (2.0 * (beta2 - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    let y = if y == 0.0 { 1.0 } else { y };
    delta * (y / alpha + ((y / alpha).powi(2) + 1.0).sqrt()).ln()
}

fn kurtosis_z(b2: f64, n: f64) -> f64 {
    let e = 3.0 * (n - 1.0) / (n + 1.0);
    let varb2 = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0).powi(2) * (n + 3.0) * (n + 5.0));
    let x = (b2 - e) / varb2.sqrt();
    let sqrtbeta1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
        * (6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))).sqrt();
    let a = 6.0 + 8.0 / sqrtbeta1 * (2.0 / sqrtbeta1 + (1.0 + 4.0 / (sqrtbeta1 * sqrtbeta1)).sqrt());
    let term1 = 1.0 - 2.0 / (9.0 * a);
    let denom = 1.0 + x * (2.0 / (a - 4.0)).sqrt();
    if denom == 0.0 {
        return f64::NAN;
    }
    let term2 = denom.signum() * ((1.0 - 2.0 / a) / denom.abs()).cbrt();
    (term1 - term2) / (2.0 / (9.0 * a)).sqrt()
}

/// Omnibus statistic `K^2 = Z_skew^2 + Z_kurt^2` and its chi-square(2) upper tail.
pub fn dagostino_pearson(sample: &[f64]) -> Result<NormalityTest> {
    if sample.len() < MIN_NORMALITY_SAMPLE {
        return Err(Error::domain(format!(
            "normality test needs at least {MIN_NORMALITY_SAMPLE} values, got {}",
            sample.len()
        )));
    }
    let (m2, m3, m4) = central_moments(sample);
    if !(m2 > 0.0) {
        return Err(Error::degenerate("sample has zero variance"));
    }
    let n = sample.len() as f64;
    let zs = skew_z(m3 / m2.powf(1.5), n);
    let zk = kurtosis_z(m4 / (m2 * m2), n);
    let k2 = zs * zs + zk * zk;
    if !k2.is_finite() {
        return Err(Error::degenerate("normality statistic is not finite"));
    }
    Ok(NormalityTest { k2, p: (-0.5 * k2).exp() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViewSpec {
    Coordinates,
    RandomProjections { count: usize, seed: u64 },
}

impl ViewSpec {
    pub fn count(&self, dim: usize) -> usize {
        match self {
            ViewSpec::Coordinates => dim,
            ViewSpec::RandomProjections { count, .. } => *count,
        }
    }
}

/// Seeded unit directions, one stream per direction.
pub fn projection_directions(count: usize, dim: usize, seed: u64) -> Vec<Array1<f64>> {
    (0..count)
        .map(|v| {
            let mut g = rng::stream(seed, domain::PROJECTION, v as u64, dim as u64);
            let u: Array1<f64> = (0..dim).map(|_| StandardNormal.sample(&mut g)).collect();
            let norm = u.dot(&u).sqrt();
            u / norm
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormalityStep {
    pub t: usize,
    pub reject_frac: f64,
    pub converged: bool,
    /// Views whose test could not be evaluated; counted as rejections.
    #[serde(skip_serializing_if = "is_zero")]
    pub degenerate_views: usize,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormalityReport {
    pub alpha: f64,
    /// First converged step; the horizon when none converged.
    pub detected_step: usize,
    pub detected: bool,
    pub views: usize,
    pub steps: Vec<NormalityStep>,
}

/// Fraction of rejecting views for the rows of `x`.
pub fn rejection_fraction(x: ArrayView2<f64>, alpha: f64, views: &ViewSpec) -> (f64, usize) {
    let d = x.ncols();
    let dirs = match views {
        ViewSpec::Coordinates => Vec::new(),
        ViewSpec::RandomProjections { count, seed } => projection_directions(*count, d, *seed),
    };
    let count = views.count(d);
    let outcomes = par::map_range(count, |v| {
        let values: Vec<f64> = match views {
            ViewSpec::Coordinates => x.column(v).to_vec(),
            ViewSpec::RandomProjections { .. } => x.dot(&dirs[v]).to_vec(),
        };
        match dagostino_pearson(&values) {
            Ok(r) => (r.p < alpha, false),
            Err(_) => (true, true),
        }
    });
    let rejected = outcomes.iter().filter(|o| o.0).count();
    let degenerate = outcomes.iter().filter(|o| o.1).count();
    (rejected as f64 / count as f64, degenerate)
}

/// Scans sweep steps from the first upward and reports the first one at
/// which the data pass the per-view normality rule.
pub fn convergence_step(sweep: &TrajectorySweep<'_>, alpha: f64, views: ViewSpec) -> Result<NormalityReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let d = sweep.dataset().dim();
    let count = views.count(d);
    if count == 0 {
        return Err(Error::domain("at least one view is required"));
    }
    if sweep.dataset().count() < MIN_NORMALITY_SAMPLE {
        return Err(Error::domain(format!("normality test needs at least {MIN_NORMALITY_SAMPLE} samples")));
    }
    let mut steps = Vec::with_capacity(sweep.steps().len());
    let mut detected = None;
    for &t in sweep.steps() {
        let x = sweep.snapshot(t)?;
        let (frac, degenerate) = rejection_fraction(x.view(), alpha, &views);
        let converged = frac <= FALSE_POSITIVE_SLACK * alpha;
        if converged && detected.is_none() {
            detected = Some(t);
        }
        steps.push(NormalityStep { t, reject_frac: frac, converged, degenerate_views: degenerate });
    }
    Ok(NormalityReport {
        alpha,
        detected_step: detected.unwrap_or(sweep.horizon()),
        detected: detected.is_some(),
        views: count,
        steps,
    })
}

/// Uniform grid of `n` points over `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(hi > lo) || n < 2 {
            return Err(Error::domain("grid needs hi > lo and at least two points"));
        }
        Ok(Grid { lo, hi, n })
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn points(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.n).map(|i| self.lo + i as f64 * h).collect()
    }

    pub fn tabulate(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.points().into_iter().map(f).collect()
    }
}

pub const NORMALIZATION_TOL: f64 = 1e-6;

fn check_density(name: &str, p: &[f64], grid: &Grid) -> Result<()> {
    if p.len() != grid.n {
        return Err(Error::domain(format!("density {name} has {} values for a {}-point grid", p.len(), grid.n)));
    }
    if p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::domain(format!("density {name} must be finite and non-negative")));
    }
    let mass = par::pairwise_sum(p) * grid.step();
    if (mass - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::domain(format!("density {name} integrates to {mass}, not 1")));
    }
    Ok(())
}

/// `1/2 sum |p - q| dx`.
pub fn tv_distance_1d(p: &[f64], q: &[f64], grid: &Grid) -> Result<f64> {
    check_density("p", p, grid)?;
    check_density("q", q, grid)?;
    let diff: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a - b).abs()).collect();
    Ok((0.5 * par::pairwise_sum(&diff) * grid.step()).min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TVBoundReport {
    pub d_tv: f64,
    pub moment_bound: f64,
    pub second_moment_bound: f64,
    pub constant: f64,
    pub bound_value: f64,
    pub holds: bool,
    pub order: u32,
    pub c0: f64,
}

/// `C_n = c0 (1 + n!) (2^n + 48)`.
pub fn moment_tv_constant(n: u32, c0: f64) -> f64 {
    let fact: f64 = (1..=n).map(f64::from).product();
    c0 * (1.0 + fact) * (2f64.powi(n as i32) + 48.0)
}

/// Mean followed by centered moments of orders `2..=n`.
pub fn grid_moments(p: &[f64], grid: &Grid, n: u32) -> Vec<f64> {
    let h = grid.step();
    let xs = grid.points();
    let mean = par::pairwise_sum(&xs.iter().zip(p).map(|(x, w)| x * w).collect::<Vec<_>>()) * h;
    let mut out = vec![mean];
    for k in 2..=n {
        let terms: Vec<f64> = xs.iter().zip(p).map(|(x, w)| (x - mean).powi(k as i32) * w).collect();
        out.push(par::pairwise_sum(&terms) * h);
    }
    out
}

/// Compares `d_TV(p, q)` with `C_n (M^2 + B)`, where `M` is the largest
/// moment difference up to order `n` and `B` bounds the first two moments.
pub fn moment_tv_check(p: &[f64], q: &[f64], grid: &Grid, n: u32, c0: f64) -> Result<TVBoundReport> {
    if n < 2 {
        return Err(Error::domain("moment order must be at least 2"));
    }
    if !(c0 > 0.0) {
        return Err(Error::domain("c0 must be positive"));
    }
    let d_tv = tv_distance_1d(p, q, grid)?;
    let mp = grid_moments(p, grid, n);
    let mq = grid_moments(q, grid, n);
    let moment_bound = mp.iter().zip(&mq).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let second_moment_bound = [mp[0].abs(), mq[0].abs(), mp[1], mq[1]].into_iter().fold(0.0, f64::max);
    let constant = moment_tv_constant(n, c0);
    let bound_value = constant * (moment_bound * moment_bound + second_moment_bound);
    Ok(TVBoundReport {
        d_tv,
        moment_bound,
        second_moment_bound,
        constant,
        bound_value,
        holds: d_tv <= bound_value,
        order: n,
        c0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CfDistance {
    pub delta: f64,
    pub freq_count: usize,
    pub freq_scale: f64,
    pub seed: u64,
}

fn empirical_cf(x: ArrayView2<f64>, xi: &Array1<f64>) -> (f64, f64) {
    let n = x.nrows();
    let phases = x.dot(xi);
    let cos: Vec<f64> = phases.iter().map(|p| p.cos()).collect();
    let sin: Vec<f64> = phases.iter().map(|p| p.sin()).collect();
    (par::pairwise_sum(&cos) / n as f64, par::pairwise_sum(&sin) / n as f64)
}

/// Root-mean-square gap between the empirical characteristic functions of
/// two samples over seeded Gaussian frequencies `xi ~ N(0, scale^2 I)`.
/// `freq_scale = None` uses `1 / sqrt(d)`.
pub fn cf_distance_arrays(a: ArrayView2<f64>, b: ArrayView2<f64>, freq_count: usize, freq_scale: Option<f64>, seed: u64) -> Result<CfDistance> {
    let d = a.ncols();
    if b.ncols() != d {
        return Err(Error::domain(format!("dimension mismatch: {d} vs {}", b.ncols())));
    }
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::domain("both samples must be non-empty"));
    }
    if freq_count == 0 {
        return Err(Error::domain("at least one frequency is required"));
    }
    let scale = freq_scale.unwrap_or(1.0 / (d as f64).sqrt());
    if !(scale > 0.0) {
        return Err(Error::domain("frequency scale must be positive"));
    }
    let gaps = par::map_range(freq_count, |j| {
        let mut g = rng::stream(seed, domain::CF_FREQUENCY, j as u64, d as u64);
        let xi: Array1<f64> = (0..d).map(|_| { let z: f64 = StandardNormal.sample(&mut g); scale * z }).collect();
        let (ra, ia) = empirical_cf(a, &xi);
        let (rb, ib) = empirical_cf(b, &xi);
        (ra - rb).powi(2) + (ia - ib).powi(2)
    });
    Ok(CfDistance {
        delta: (par::pairwise_sum(&gaps) / freq_count as f64).sqrt(),
        freq_count,
        freq_scale: scale,
        seed,
    })
}

pub fn empirical_cf_distance(a: &LabeledDataset, b: &LabeledDataset, freq_count: usize, freq_scale: Option<f64>, seed: u64) -> Result<CfDistance> {
    cf_distance_arrays(a.features().view(), b.features().view(), freq_count, freq_scale, seed)
}
