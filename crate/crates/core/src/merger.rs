//! Merger detection between class events.
//!
//! A pair of events is compared at every sweep step. While the chosen
//! distance between their fluctuation tensors (trace or top-eigenvalue
//! difference) exceeds `epsilon` the series value is the normalized alignment
//! `M`; once it drops to `epsilon` or below the pair has merged and the series
//! is pinned to 1 for the rest of the sweep. The first merged step is `i*`.
//! A pair that never merges gets `i* = horizon`.
//!
//! Per-step statistics for all events are computed once in an
//! [`EventProfile`] and reused for every pair and every threshold.

use serde::{Deserialize, Serialize};

use crate::data::EventPartition;
use crate::error::{Error, Result};
use crate::fluctuation::{self, Centering, ConditionalMoments};
use crate::forward::TrajectorySweep;
use crate::schedule::NoiseSchedule;

/// Denominator of the default threshold rule `max_k lambda_k(0) / 400`.
pub const DEFAULT_EPSILON_DIVISOR: f64 = 400.0;

/// Suggested band for the interpolation scale.
pub const ETA_SCALE_BAND: (f64, f64) = (1e-4, 1e-2);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergerMetric {
    TraceL1,
    #[default]
    TopEigenAbs,
}

/// Per-step summaries of every event: trace, top eigenvalue and the Gram
/// matrix of tensor inner products.
#[derive(Clone, Debug)]
pub struct EventProfile {
    k: usize,
    order: u8,
    horizon: usize,
    sweep_steps: Vec<usize>,
    steps: Vec<usize>,
    trace: Vec<Vec<f64>>,
    top: Vec<Vec<f64>>,
    gram: Vec<Vec<f64>>,
}

impl EventProfile {
    /// Profiles every sweep step.
    pub fn build(sweep: &TrajectorySweep<'_>, events: &[Vec<usize>], order: u8, centering: Centering) -> Result<Self> {
        Self::build_until(sweep, events, order, centering, None)
    }

    /// Profiles sweep steps in order and stops once every pair has merged
    /// under `stop = (metric, epsilon)`. The result then answers queries for
    /// any threshold at or above `epsilon`.
    pub fn build_until(
        sweep: &TrajectorySweep<'_>,
        events: &[Vec<usize>],
        order: u8,
        centering: Centering,
        stop: Option<(MergerMetric, f64)>,
    ) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::domain("no events to profile"));
        }
        if let Some(i) = events.iter().position(|e| e.is_empty()) {
            return Err(Error::domain(format!("event {i} is empty")));
        }
        let k = events.len();
        let mut profile = EventProfile {
            k,
            order,
            horizon: sweep.horizon(),
            sweep_steps: sweep.steps().to_vec(),
            steps: Vec::new(),
            trace: Vec::new(),
            top: Vec::new(),
            gram: Vec::new(),
        };
        let mut merged = vec![false; k * k];
        for &t in sweep.steps() {
            let moments = step_moments(sweep, events, t, order, centering)?;
            let mut gram = vec![0.0; k * k];
            for a in 0..k {
                for b in a..k {
                    let g = fluctuation::cross_fluctuation_g(&moments[a], &moments[b])?;
                    gram[a * k + b] = g;
                    gram[b * k + a] = g;
                }
            }
            profile.steps.push(t);
            profile.trace.push(moments.iter().map(ConditionalMoments::trace).collect());
            profile.top.push(moments.iter().map(|m| m.top_eigenvalue).collect());
            profile.gram.push(gram);
            if let Some((metric, eps)) = stop {
                let last = profile.steps.len() - 1;
                let mut all = true;
                for a in 0..k {
                    for b in a + 1..k {
                        if !merged[a * k + b] && profile.distance(last, a, b, metric) <= eps {
                            merged[a * k + b] = true;
                        }
                        all &= merged[a * k + b];
                    }
                }
                if all {
                    break;
                }
            }
        }
        Ok(profile)
    }

    pub fn num_events(&self) -> usize {
        self.k
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Steps actually profiled (a prefix of the sweep steps).
    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn is_complete(&self) -> bool {
        self.steps.len() == self.sweep_steps.len()
    }

    pub fn top_eigenvalues(&self, step_index: usize) -> &[f64] {
        &self.top[step_index]
    }

    pub fn traces(&self, step_index: usize) -> &[f64] {
        &self.trace[step_index]
    }

    pub fn distance(&self, step_index: usize, a: usize, b: usize, metric: MergerMetric) -> f64 {
        let v = match metric {
            MergerMetric::TraceL1 => &self.trace[step_index],
            MergerMetric::TopEigenAbs => &self.top[step_index],
        };
        (v[a] - v[b]).abs()
    }

    pub fn normalized(&self, step_index: usize, a: usize, b: usize) -> Result<f64> {
        let g = &self.gram[step_index];
        fluctuation::normalized_from_parts(g[a * self.k + b], g[a * self.k + a], g[b * self.k + b])
            .map_err(|e| Error::degenerate(format!("step {}: events {a} and {b}: {e}", self.steps[step_index])))
    }

    /// Merger series of the pair `(a, b)` at threshold `epsilon`.
    pub fn series(&self, a: usize, b: usize, epsilon: f64, metric: MergerMetric) -> Result<MergerSeries> {
        if a >= self.k || b >= self.k {
            return Err(Error::domain(format!("event index out of range (K = {})", self.k)));
        }
        if !(epsilon > 0.0) {
            return Err(Error::domain(format!("epsilon must be positive, got {epsilon}")));
        }
        let mut values = Vec::with_capacity(self.sweep_steps.len());
        let mut distances = Vec::with_capacity(self.sweep_steps.len());
        let mut istar = None;
        for (i, &t) in self.steps.iter().enumerate() {
            let dist = self.distance(i, a, b, metric);
            distances.push(dist);
            if istar.is_none() && dist <= epsilon {
                istar = Some(t);
            }
            values.push(if istar.is_some() { 1.0 } else { self.normalized(i, a, b)? });
        }
        if istar.is_none() && !self.is_complete() {
            return Err(Error::domain(format!(
                "profile was truncated above epsilon {epsilon}; rebuild it with a smaller stop threshold"
            )));
        }
        let merged = istar.is_some();
        let istar = istar.unwrap_or(self.horizon);
        // Remaining sweep steps lie past the merge.
        for _ in self.steps.len()..self.sweep_steps.len() {
            values.push(1.0);
            distances.push(f64::NAN);
        }
        for (v, &t) in values.iter_mut().zip(&self.sweep_steps) {
            if t >= istar {
                *v = 1.0;
            }
        }
        Ok(MergerSeries {
            a,
            b,
            epsilon,
            metric,
            steps: self.sweep_steps.clone(),
            values,
            distances,
            istar,
            merged,
        })
    }

    pub fn merge_matrix(&self, epsilon: f64, metric: MergerMetric) -> Result<MergeMatrix> {
        let k = self.k;
        let mut times = vec![0usize; k * k];
        for a in 0..k {
            for b in a + 1..k {
                let s = self.series(a, b, epsilon, metric)?;
                times[a * k + b] = s.istar;
                times[b * k + a] = s.istar;
            }
        }
        Ok(MergeMatrix { k, horizon: self.horizon, times })
    }

    /// First profiled step where every pair of distinct events has
    /// `M >= 1 - epsilon`.
    pub fn generalized_coupling_time(&self, epsilon: f64) -> Result<Option<usize>> {
        for i in 0..self.steps.len() {
            let mut worst = f64::INFINITY;
            for a in 0..self.k {
                for b in a + 1..self.k {
                    worst = worst.min(self.normalized(i, a, b)?);
                }
            }
            if worst >= 1.0 - epsilon {
                return Ok(Some(self.steps[i]));
            }
        }
        Ok(None)
    }
}

fn step_moments(
    sweep: &TrajectorySweep<'_>,
    events: &[Vec<usize>],
    t: usize,
    order: u8,
    centering: Centering,
) -> Result<Vec<ConditionalMoments>> {
    let wrap = |k: usize, r: Result<ConditionalMoments>| {
        r.map(|m| m.tagged(k)).map_err(|e| match e {
            Error::Degenerate(msg) => Error::degenerate(format!("step {t}, event {k}: {msg}")),
            other => other,
        })
    };
    match centering {
        Centering::ConditionalMean => events
            .iter()
            .enumerate()
            .map(|(k, ev)| {
                let x = sweep.snapshot_rows(t, ev)?;
                wrap(k, fluctuation::event_moments(x.view(), order, centering, None))
            })
            .collect(),
        Centering::GlobalMean => {
            let full = sweep.snapshot(t)?;
            let g = fluctuation::column_mean(full.view());
            events
                .iter()
                .enumerate()
                .map(|(k, ev)| {
                    let x = full.select(ndarray::Axis(0), ev);
                    wrap(k, fluctuation::event_moments(x.view(), order, centering, Some(g.view())))
                })
                .collect()
        }
    }
}

/// Thresholded alignment series of one pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MergerSeries {
    pub a: usize,
    pub b: usize,
    pub epsilon: f64,
    pub metric: MergerMetric,
    pub steps: Vec<usize>,
    pub values: Vec<f64>,
    /// Metric distance per step; NaN where it was not computed.
    pub distances: Vec<f64>,
    pub istar: usize,
    pub merged: bool,
}

/// `max_k lambda_k / 400` over step-0 top eigenvalues.
pub fn default_epsilon(top_eigenvalues: &[f64]) -> Result<f64> {
    let max = top_eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::degenerate("all class covariances are zero; cannot derive a default epsilon"));
    }
    Ok(max / DEFAULT_EPSILON_DIVISOR)
}

/// Default threshold from the step-0 class covariances of a dataset.
pub fn default_epsilon_for(sweep: &TrajectorySweep<'_>, partition: &EventPartition) -> Result<f64> {
    let x0 = sweep.dataset().features();
    let tops = partition
        .events()
        .iter()
        .filter(|e| e.len() >= 2)
        .map(|e| {
            let x = x0.select(ndarray::Axis(0), e);
            fluctuation::event_moments(x.view(), 2, Centering::ConditionalMean, None).map(|m| m.top_eigenvalue)
        })
        .collect::<Result<Vec<_>>>()?;
    default_epsilon(&tops)
}

/// Merger series for a single pair of events. Stops profiling at the merge.
pub fn detect_series(
    sweep: &TrajectorySweep<'_>,
    a: &[usize],
    b: &[usize],
    order: u8,
    epsilon: f64,
    metric: MergerMetric,
) -> Result<MergerSeries> {
    if !(epsilon > 0.0) {
        return Err(Error::domain(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut seen = std::collections::HashSet::with_capacity(a.len());
    seen.extend(a.iter().copied());
    if b.iter().any(|i| seen.contains(i)) {
        return Err(Error::domain("events must be disjoint"));
    }
    let events = vec![a.to_vec(), b.to_vec()];
    let profile = EventProfile::build_until(sweep, &events, order, Centering::ConditionalMean, Some((metric, epsilon)))?;
    profile.series(0, 1, epsilon, metric)
}

/// Symmetric `K x K` matrix of pairwise first-merge steps, zero diagonal.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MergeMatrix {
    pub k: usize,
    pub horizon: usize,
    pub times: Vec<usize>,
}

impl MergeMatrix {
    pub fn from_rows(rows: &[Vec<usize>], horizon: usize) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::domain("merge matrix must be square"));
        }
        for a in 0..k {
            for b in 0..k {
                if rows[a][b] != rows[b][a] {
                    return Err(Error::domain("merge matrix must be symmetric"));
                }
            }
        }
        Ok(MergeMatrix { k, horizon, times: rows.concat() })
    }

    pub fn get(&self, a: usize, b: usize) -> usize {
        self.times[a * self.k + b]
    }

    /// Earliest merge of class `k` with any other class; `horizon` when `K = 1`.
    pub fn first_merge(&self, k: usize) -> usize {
        (0..self.k).filter(|&l| l != k).map(|l| self.get(k, l)).min().unwrap_or(self.horizon)
    }

    pub fn rows(&self) -> Vec<Vec<usize>> {
        self.times.chunks(self.k).map(<[usize]>::to_vec).collect()
    }
}

pub fn pairwise_merge_times(
    sweep: &TrajectorySweep<'_>,
    partition: &EventPartition,
    order: u8,
    epsilon: f64,
    metric: MergerMetric,
) -> Result<MergeMatrix> {
    if partition.len() < 2 {
        return Err(Error::domain("pairwise merge times need at least two events"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::domain(format!("epsilon must be positive, got {epsilon}")));
    }
    let profile = EventProfile::build_until(sweep, partition.events(), order, Centering::ConditionalMean, Some((metric, epsilon)))?;
    profile.merge_matrix(epsilon, metric)
}

/// Node of a merger cascade. Serializes as `{"class": k}` or
/// `{"step": s, "children": [...]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CascadeNode {
    Leaf { class: usize },
    Merge { step: usize, children: Vec<CascadeNode> },
}

impl CascadeNode {
    pub fn height(&self) -> usize {
        match self {
            CascadeNode::Leaf { .. } => 0,
            CascadeNode::Merge { step, .. } => *step,
        }
    }

    /// Merge steps of all internal nodes, children before parents.
    pub fn internal_steps(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_steps(&mut out);
        out
    }

    fn collect_steps(&self, out: &mut Vec<usize>) {
        if let CascadeNode::Merge { step, children } = self {
            for c in children {
                c.collect_steps(out);
            }
            out.push(*step);
        }
    }

    pub fn classes(&self) -> Vec<usize> {
        match self {
            CascadeNode::Leaf { class } => vec![*class],
            CascadeNode::Merge { children, .. } => children.iter().flat_map(CascadeNode::classes).collect(),
        }
    }

    /// Every internal node sits at or above its children.
    pub fn is_ultrametric(&self) -> bool {
        match self {
            CascadeNode::Leaf { .. } => true,
            CascadeNode::Merge { step, children } => {
                children.iter().all(|c| c.height() <= *step && c.is_ultrametric())
            }
        }
    }
}

/// Single-linkage agglomeration on merge times. Ties resolve to the
/// lowest-indexed pair of clusters.
pub fn build_cascade(merge: &MergeMatrix) -> Result<CascadeNode> {
    if merge.k == 0 {
        return Err(Error::domain("cannot build a cascade with no classes"));
    }
    let mut clusters: Vec<(Vec<usize>, CascadeNode)> =
        (0..merge.k).map(|c| (vec![c], CascadeNode::Leaf { class: c })).collect();
    while clusters.len() > 1 {
        let mut best = (usize::MAX, 0, 0);
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let link = clusters[i]
                    .0
                    .iter()
                    .flat_map(|&a| clusters[j].0.iter().map(move |&b| (a, b)))
                    .map(|(a, b)| merge.get(a, b))
                    .min()
                    .unwrap();
                if link < best.0 {
                    best = (link, i, j);
                }
            }
        }
        let (step, i, j) = best;
        let (mj, nj) = clusters.remove(j);
        let (mi, ni) = clusters.remove(i);
        let members = [mi, mj].concat();
        clusters.insert(i, (members, CascadeNode::Merge { step, children: vec![ni, nj] }));
    }
    Ok(clusters.pop().unwrap().1)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidanceWindow {
    pub class: usize,
    /// Lower edge: the class's first merge, clamped to `t_start`.
    pub t_end: usize,
    /// Upper edge: the convergence step.
    pub t_start: usize,
    pub never_merged: bool,
    /// Same edges under their alternative names.
    pub t_merge: usize,
    pub t_conv: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowsReport {
    pub istar: usize,
    pub classes: Vec<GuidanceWindow>,
}

/// Per-class guidance windows `(t_end, t_start)` with `t_start = istar` and
/// `t_end` the first merge of the class. A class whose first merge comes
/// after `istar` gets an empty window and the `never_merged` flag.
pub fn guidance_windows(merge: &MergeMatrix, istar: usize) -> Result<WindowsReport> {
    if istar > merge.horizon {
        return Err(Error::domain(format!("istar {istar} exceeds horizon {}", merge.horizon)));
    }
    let classes = (0..merge.k)
        .map(|k| {
            let first = merge.first_merge(k);
            let never = first > istar;
            let t_end = first.min(istar);
            GuidanceWindow { class: k, t_end, t_start: istar, never_merged: never, t_merge: t_end, t_conv: istar }
        })
        .collect();
    Ok(WindowsReport { istar, classes })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EtaSchedule {
    pub scale: f64,
    /// `eta[t - 1]` is the value at step `t`, for `t = 1..=T`.
    pub eta: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// `eta_t = s * beta_t / max_u beta_u`.
pub fn interpolation_schedule(schedule: &NoiseSchedule, s: f64) -> Result<EtaSchedule> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::domain(format!("scale must lie in (0, 1], got {s}")));
    }
    let max = schedule.max_beta();
    let eta = (1..=schedule.horizon())
        .map(|t| schedule.beta_at(t).map(|b| s * (b / max)))
        .collect::<Result<Vec<_>>>()?;
    let warning = (s < ETA_SCALE_BAND.0 || s > ETA_SCALE_BAND.1)
        .then(|| format!("scale {s} lies outside the usual search band [{}, {}]", ETA_SCALE_BAND.0, ETA_SCALE_BAND.1));
    Ok(EtaSchedule { scale: s, eta, warning })
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Indices `t0` where the backward and forward `order`-th differences with
/// spacing `tau` differ by at least `eps_disc`. Only the landing side of a
/// jump is reported (the side where the backward difference dominates), so
/// a single step discontinuity yields a single index.
pub fn lattice_jump(series: &[f64], tau: usize, order: u32, eps_disc: f64) -> Result<Vec<usize>> {
    if tau == 0 || order == 0 {
        return Err(Error::domain("tau and order must be at least 1"));
    }
    if !(eps_disc > 0.0) {
        return Err(Error::domain("eps_disc must be positive"));
    }
    let reach = order as usize * tau;
    if series.len() < 2 * reach + 1 {
        return Err(Error::domain(format!(
            "series of length {} is too short for order {order} and tau {tau} (need {})",
            series.len(),
            2 * reach + 1
        )));
    }
    let coef: Vec<f64> = (0..=order)
        .map(|k| if k % 2 == 0 { binomial(order, k) } else { -binomial(order, k) })
        .collect();
    let mut out = Vec::new();
    for t0 in reach..series.len() - reach {
        let left: f64 = coef.iter().enumerate().map(|(k, c)| c * series[t0 - k * tau]).sum();
        let right: f64 = coef.iter().enumerate().map(|(k, c)| c * series[t0 + reach - k * tau]).sum();
        if (left - right).abs() >= eps_disc && left.abs() >= right.abs() {
            out.push(t0);
        }
    }
    Ok(out)
}

/// Lattice transitions of a merger series, reported as sweep steps.
pub fn series_transitions(series: &MergerSeries, tau: usize, order: u32, eps_disc: f64) -> Result<Vec<usize>> {
    Ok(lattice_jump(&series.values, tau, order, eps_disc)?
        .into_iter()
        .map(|i| series.steps[i])
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhasePoint {
    pub epsilon: f64,
    pub positive_mergers: usize,
}

/// Number of cascade merges at a positive step for each threshold in `grid`.
pub fn phase_spectrum(
    sweep: &TrajectorySweep<'_>,
    partition: &EventPartition,
    order: u8,
    metric: MergerMetric,
    grid: &[f64],
) -> Result<Vec<PhasePoint>> {
    if grid.is_empty() {
        return Err(Error::domain("epsilon grid is empty"));
    }
    if grid.iter().any(|&e| !(e > 0.0)) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("epsilon grid must be positive and strictly increasing"));
    }
    let profile = EventProfile::build_until(sweep, partition.events(), order, Centering::ConditionalMean, Some((metric, grid[0])))?;
    phase_spectrum_from_profile(&profile, metric, grid)
}

pub fn phase_spectrum_from_profile(profile: &EventProfile, metric: MergerMetric, grid: &[f64]) -> Result<Vec<PhasePoint>> {
    grid.iter()
        .map(|&eps| {
            let m = profile.merge_matrix(eps, metric)?;
            let cascade = build_cascade(&m)?;
            let positive = cascade.internal_steps().into_iter().filter(|&s| s > 0).count();
            Ok(PhasePoint { epsilon: eps, positive_mergers: positive })
        })
        .collect()
}
