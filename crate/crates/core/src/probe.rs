//! Linear probes along the forward chain and time-weighted score aggregation.

use std::collections::BTreeMap;
use std::io::BufRead;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::TrajectorySweep;
use crate::par;
use crate::rng::{self, domain};
use crate::schedule::{AttenuationMode, NoiseSchedule};

pub const PROBE_ITERATIONS: usize = 500;
pub const PROBE_LEARNING_RATE: f64 = 0.1;
pub const MIN_PROBE_CLASS: usize = 10;
/// First step with non-zero weight under the truncated inverse-SNR law.
pub const TRUNCATION_FLOOR: usize = 20;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Held-out accuracy of a logistic classifier with bias, trained by
/// full-batch gradient descent on standardized inputs.
pub fn train_linear_probe(feats_a: ArrayView2<f64>, feats_b: ArrayView2<f64>, split: f64, seed: u64) -> Result<f64> {
    if feats_a.nrows() < MIN_PROBE_CLASS || feats_b.nrows() < MIN_PROBE_CLASS {
        return Err(Error::domain(format!("each class needs at least {MIN_PROBE_CLASS} samples")));
    }
    if feats_a.ncols() != feats_b.ncols() {
        return Err(Error::domain("both classes must share the feature dimension"));
    }
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::domain(format!("split must lie in (0, 1), got {split}")));
    }
    let na = feats_a.nrows();
    let n = na + feats_b.nrows();
    let d = feats_a.ncols();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, domain::PROBE_SPLIT, n as u64, 0));
    let n_train = ((split * n as f64).floor() as usize).clamp(1, n - 1);
    let (train_idx, test_idx) = order.split_at(n_train);

    let gather = |idx: &[usize]| -> (Array2<f64>, Vec<f64>) {
        let mut x = Array2::zeros((idx.len(), d));
        let mut y = Vec::with_capacity(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            if i < na {
                x.row_mut(r).assign(&feats_a.row(i));
                y.push(0.0);
            } else {
                x.row_mut(r).assign(&feats_b.row(i - na));
                y.push(1.0);
            }
        }
        (x, y)
    };
    let (mut xtr, ytr) = gather(train_idx);
    let (mut xte, yte) = gather(test_idx);

    let mean = xtr.mean_axis(Axis(0)).expect("non-empty training set");
    let sd = xtr.std_axis(Axis(0), 0.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
    for x in [&mut xtr, &mut xte] {
        for mut row in x.rows_mut() {
            row -= &mean;
            row /= &sd;
        }
    }

    let m = xtr.nrows();
    let mut w = Array1::<f64>::zeros(d);
    let mut bias = 0.0;
    let chunks = m.div_ceil(par::ROW_CHUNK);
    for _ in 0..PROBE_ITERATIONS {
        let parts = par::map_range(chunks, |c| {
            let mut g = vec![0.0; d + 1];
            let lo = c * par::ROW_CHUNK;
            let hi = (lo + par::ROW_CHUNK).min(m);
            for i in lo..hi {
                let row = xtr.row(i);
                let r = sigmoid(row.dot(&w) + bias) - ytr[i];
                for (gj, xj) in g.iter_mut().zip(row) {
                    *gj += r * xj;
                }
                g[d] += r;
            }
            g
        });
        let g = par::pairwise_reduce(parts);
        for j in 0..d {
            w[j] -= PROBE_LEARNING_RATE * g[j] / m as f64;
        }
        bias -= PROBE_LEARNING_RATE * g[d] / m as f64;
    }

    let correct = xte
        .rows()
        .into_iter()
        .zip(&yte)
        .filter(|(row, &y)| ((row.dot(&w) + bias > 0.0) as u8 as f64) == y)
        .count();
    Ok(correct as f64 / xte.nrows() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbePoint {
    pub step: usize,
    pub accuracy: Option<f64>,
    pub defined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeResult {
    pub split: f64,
    pub seed: u64,
    pub merge_step: usize,
    pub points: Vec<ProbePoint>,
}

/// Probe accuracy at every sweep step before `merge_step`; later steps are
/// reported as undefined.
pub fn probe_through_time(
    sweep: &TrajectorySweep<'_>,
    a: &[usize],
    b: &[usize],
    merge_step: usize,
    split: f64,
    seed: u64,
) -> Result<ProbeResult> {
    if merge_step > sweep.horizon() {
        return Err(Error::domain(format!("merge step {merge_step} exceeds horizon {}", sweep.horizon())));
    }
    let points = sweep
        .steps()
        .iter()
        .map(|&t| {
            if t >= merge_step {
                return Ok(ProbePoint { step: t, accuracy: None, defined: false });
            }
            let xa = sweep.snapshot_rows(t, a)?;
            let xb = sweep.snapshot_rows(t, b)?;
            let acc = train_linear_probe(xa.view(), xb.view(), split, seed)?;
            Ok(ProbePoint { step: t, accuracy: Some(acc), defined: true })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeResult { split, seed, merge_step, points })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Uniform,
    InverseSnr,
    TruncatedInverseSnr,
}

/// Normalized per-step weights over a window `[t_start, t_stop]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightLaw {
    pub kind: WeightKind,
    pub t_start: usize,
    pub t_stop: usize,
    pub floor: usize,
    pub steps: Vec<usize>,
    pub weights: Vec<f64>,
}

impl WeightLaw {
    /// Weights from explicit per-step SNR values. Infinite SNR gets weight 0.
    pub fn from_snr_values(kind: WeightKind, steps: &[usize], snr: &[f64]) -> Result<Self> {
        if steps.is_empty() || steps.len() != snr.len() {
            return Err(Error::domain("steps and SNR values must be non-empty and of equal length"));
        }
        if steps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("steps must be strictly increasing"));
        }
        let floor = if kind == WeightKind::TruncatedInverseSnr { TRUNCATION_FLOOR } else { 0 };
        let raw: Vec<f64> = steps
            .iter()
            .zip(snr)
            .map(|(&t, &s)| match kind {
                WeightKind::Uniform => 1.0,
                _ if t < floor => 0.0,
                _ if s.is_infinite() => 0.0,
                _ => 1.0 / s,
            })
            .collect();
        let total = par::pairwise_sum(&raw);
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::domain("weight window carries no mass"));
        }
        Ok(WeightLaw {
            kind,
            t_start: steps[0],
            t_stop: *steps.last().unwrap(),
            floor,
            steps: steps.to_vec(),
            weights: raw.iter().map(|w| w / total).collect(),
        })
    }

    pub fn weight_at(&self, t: usize) -> f64 {
        self.steps.binary_search(&t).map_or(0.0, |i| self.weights[i])
    }
}

/// Weight law on `[t_start, t_stop]` with SNR taken from the schedule.
pub fn weight_law(kind: WeightKind, schedule: &NoiseSchedule, t_start: usize, t_stop: usize) -> Result<WeightLaw> {
    if t_start > t_stop {
        return Err(Error::domain(format!("empty window [{t_start}, {t_stop}]")));
    }
    if t_stop > schedule.horizon() {
        return Err(Error::domain(format!("window end {t_stop} exceeds horizon {}", schedule.horizon())));
    }
    let table = schedule.attenuation_table(AttenuationMode::default());
    let steps: Vec<usize> = (t_start..=t_stop).collect();
    let snr: Vec<f64> = steps.iter().map(|&t| crate::schedule::snr_from_attenuation(table[t])).collect();
    WeightLaw::from_snr_values(kind, &steps, &snr)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// `p_k = sum_t w(t) softmax(s_t)_k` over steps with positive weight.
pub fn weighted_score_aggregate(scores: &BTreeMap<usize, Vec<f64>>, law: &WeightLaw) -> Result<Vec<f64>> {
    let mut k = None;
    let mut acc: Vec<f64> = Vec::new();
    for (&t, &w) in law.steps.iter().zip(&law.weights) {
        if w == 0.0 {
            continue;
        }
        let logits = scores.get(&t).ok_or_else(|| Error::domain(format!("no scores for step {t}")))?;
        match k {
            None => {
                if logits.is_empty() {
                    return Err(Error::domain("score vectors must be non-empty"));
                }
                k = Some(logits.len());
                acc = vec![0.0; logits.len()];
            }
            Some(k) if k != logits.len() => {
                return Err(Error::domain(format!("step {t} has {} scores, expected {k}", logits.len())));
            }
            _ => {}
        }
        for (a, p) in acc.iter_mut().zip(softmax(logits)) {
            *a += w * p;
        }
    }
    let total: f64 = acc.iter().sum();
    if !(total > 0.0) {
        return Err(Error::domain("no weighted steps to aggregate"));
    }
    Ok(acc.into_iter().map(|v| v / total).collect())
}

/// Reads `step,class,logit` rows. `#` lines and a `step,class,logit`
/// header are skipped. Every step must list classes `0..K` exactly once.
pub fn read_logits_csv<R: BufRead>(reader: R) -> Result<BTreeMap<usize, Vec<f64>>> {
    let mut raw: BTreeMap<usize, BTreeMap<usize, f64>> = BTreeMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let row = lineno + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields == ["step", "class", "logit"] {
            continue;
        }
        if fields.len() != 3 {
            return Err(Error::Parse { row, message: format!("expected 3 fields, found {}", fields.len()) });
        }
        let parse_err = |what: &str| Error::Parse { row, message: format!("invalid {what}") };
        let step: usize = fields[0].parse().map_err(|_| parse_err("step"))?;
        let class: usize = fields[1].parse().map_err(|_| parse_err("class"))?;
        let logit: f64 = fields[2].parse().map_err(|_| parse_err("logit"))?;
        if !logit.is_finite() {
            return Err(Error::data(format!("non-finite logit at row {row}")));
        }
        if raw.entry(step).or_default().insert(class, logit).is_some() {
            return Err(Error::data(format!("duplicate entry for step {step}, class {class}")));
        }
    }
    raw.into_iter()
        .map(|(t, classes)| {
            if classes.keys().copied().ne(0..classes.len()) {
                return Err(Error::data(format!("step {t}: classes must be 0..K without gaps")));
            }
            Ok((t, classes.into_values().collect()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{partition_by_label, synth_gaussian_mixture, ClassSpec, SyntheticSpec};
    use crate::forward::{sweep, SeedPolicy};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal as RNormal};
    use statrs::distribution::{ContinuousCDF, Normal};

    fn gaussian_1d(n: usize, mean: f64, seed: u64) -> Array2<f64> {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = RNormal::new(mean, 1.0).unwrap();
        Array2::from_shape_fn((n, 1), |_| g.sample(&mut r))
    }

    #[test]
    fn separable_clusters() {
        let a = Array2::from_shape_fn((50, 1), |(i, _)| -10.0 + 0.01 * i as f64);
        let b = Array2::from_shape_fn((50, 1), |(i, _)| 10.0 - 0.01 * i as f64);
        assert_eq!(train_linear_probe(a.view(), b.view(), 0.8, 1).unwrap(), 1.0);
    }

    #[test]
    fn chance_level_on_identical_laws() {
        let a = gaussian_1d(5000, 0.0, 1);
        let b = gaussian_1d(5000, 0.0, 2);
        let acc = train_linear_probe(a.view(), b.view(), 0.8, 3).unwrap();
        assert!((acc - 0.5).abs() < 0.03, "{acc}");
    }

    #[test]
    fn bayes_rate_for_shifted_gaussians() {
        let a = gaussian_1d(20_000, -1.0, 4);
        let b = gaussian_1d(20_000, 1.0, 5);
        let bayes = Normal::new(0.0, 1.0).unwrap().cdf(1.0);
        let acc = train_linear_probe(a.view(), b.view(), 0.8, 6).unwrap();
        assert!((acc - bayes).abs() < 0.03, "{acc} vs {bayes}");
    }

    #[test]
    fn probe_contract() {
        let a = gaussian_1d(5, 0.0, 1);
        let b = gaussian_1d(50, 0.0, 1);
        assert!(train_linear_probe(a.view(), b.view(), 0.8, 0).is_err());
        assert!(train_linear_probe(b.view(), b.view(), 1.0, 0).is_err());
    }

    fn two_class(n: usize, sep: f64) -> crate::data::LabeledDataset {
        let spec = SyntheticSpec {
            classes: vec![
                ClassSpec { mean: vec![-sep, 0.0], spectrum: vec![1.0, 1.0], rotation_seed: 0, samples: n },
                ClassSpec { mean: vec![sep, 0.0], spectrum: vec![1.0, 1.0], rotation_seed: 1, samples: n },
            ],
        };
        synth_gaussian_mixture(&spec, 9).unwrap()
    }

    #[test]
    fn probe_through_time_contract() {
        let ds = two_class(3000, 1.0);
        let p = partition_by_label(&ds);
        let s = NoiseSchedule::ddpm();
        let only = sweep(&ds, &s, &[0], SeedPolicy::new(1)).unwrap();
        let r = probe_through_time(&only, p.event(0), p.event(1), 1000, 0.8, 2).unwrap();
        let direct = train_linear_probe(ds.select_rows(p.event(0)).view(), ds.select_rows(p.event(1)).view(), 0.8, 2).unwrap();
        assert_eq!(r.points[0].accuracy, Some(direct));
        let bayes = Normal::new(0.0, 1.0).unwrap().cdf(1.0);
        assert!((direct - bayes).abs() < 0.02);

        let sw = sweep(&ds, &s, &[0, 200, 400, 600], SeedPolicy::new(1)).unwrap();
        let none = probe_through_time(&sw, p.event(0), p.event(1), 0, 0.8, 2).unwrap();
        assert!(none.points.iter().all(|q| !q.defined && q.accuracy.is_none()));
        let part = probe_through_time(&sw, p.event(0), p.event(1), 400, 0.8, 2).unwrap();
        assert_eq!(part.points.iter().map(|q| q.defined).collect::<Vec<_>>(), vec![true, true, false, false]);
        assert!(part.points.iter().filter_map(|q| q.accuracy).all(|a| a >= 0.45));
        assert_eq!(part, probe_through_time(&sw, p.event(0), p.event(1), 400, 0.8, 2).unwrap());
        assert!(probe_through_time(&sw, p.event(0), p.event(1), 1001, 0.8, 2).is_err());
    }

    #[test]
    fn weight_law_examples() {
        let s = NoiseSchedule::ddpm();
        let u = weight_law(WeightKind::Uniform, &s, 2, 4).unwrap();
        assert!(u.weights.iter().all(|&w| (w - 1.0 / 3.0).abs() < 1e-15));
        let inv = WeightLaw::from_snr_values(WeightKind::InverseSnr, &[5, 6], &[3.0, 1.0]).unwrap();
        assert!((inv.weights[0] - 0.25).abs() < 1e-15 && (inv.weights[1] - 0.75).abs() < 1e-15);
        let tr = weight_law(WeightKind::TruncatedInverseSnr, &s, 0, 100).unwrap();
        assert!((0..20).all(|t| tr.weight_at(t) == 0.0));
        assert!(tr.weight_at(20) > 0.0);
        assert!((tr.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let inv0 = weight_law(WeightKind::InverseSnr, &s, 0, 10).unwrap();
        assert_eq!(inv0.weight_at(0), 0.0);
        assert!(weight_law(WeightKind::Uniform, &s, 5, 4).is_err());
        assert!(weight_law(WeightKind::TruncatedInverseSnr, &s, 0, 10).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let s = NoiseSchedule::ddpm();
        let one = weight_law(WeightKind::Uniform, &s, 7, 7).unwrap();
        let scores = BTreeMap::from([(7usize, vec![0.0, 0.0])]);
        assert_eq!(weighted_score_aggregate(&scores, &one).unwrap(), vec![0.5, 0.5]);
        let scores = BTreeMap::from([(7usize, vec![1.0, 0.0])]);
        let p = weighted_score_aggregate(&scores, &one).unwrap();
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-12 && (p[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
        let two = weight_law(WeightKind::InverseSnr, &s, 7, 8).unwrap();
        let same = BTreeMap::from([(7usize, vec![1.0, 0.0]), (8, vec![1.0, 0.0])]);
        let q = weighted_score_aggregate(&same, &two).unwrap();
        assert!(q.iter().zip(&p).all(|(a, b)| (a - b).abs() < 1e-12));
        let missing = BTreeMap::from([(7usize, vec![1.0, 0.0])]);
        assert!(weighted_score_aggregate(&missing, &two).is_err());
    }

    #[test]
    fn logits_csv() {
        let m = read_logits_csv("# step,class,logit\n3,1,0.5\n3,0,-1\n4,0,2\n4,1,0\n".as_bytes()).unwrap();
        assert_eq!(m[&3], vec![-1.0, 0.5]);
        assert_eq!(m[&4], vec![2.0, 0.0]);
        assert_eq!(read_logits_csv("step,class,logit\n3,0,1\n".as_bytes()).unwrap()[&3], vec![1.0]);
        assert!(matches!(read_logits_csv("1,0\n".as_bytes()), Err(Error::Parse { row: 1, .. })));
        assert!(read_logits_csv("1,1,0.5\n".as_bytes()).is_err());
        assert!(read_logits_csv("1,0,0.5\n1,0,0.2\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn weights_normalized_and_supported(kind in 0u8..3, a in 0usize..900, len in 0usize..100) {
            let kind = [WeightKind::Uniform, WeightKind::InverseSnr, WeightKind::TruncatedInverseSnr][kind as usize];
            let b = (a + len).min(1000);
            let s = NoiseSchedule::ddpm();
            let law = match weight_law(kind, &s, a, b) {
                Ok(l) => l,
                Err(_) => { prop_assert!(kind == WeightKind::TruncatedInverseSnr || (kind == WeightKind::InverseSnr && a == 0 && b == 0)); return Ok(()); }
            };
            prop_assert!((law.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(law.weights.iter().all(|&w| w >= 0.0));
            prop_assert_eq!(law.weight_at(b + 1), 0.0);
            if a > 0 { prop_assert_eq!(law.weight_at(a - 1), 0.0); }
        }

        #[test]
        fn aggregate_is_convex(l in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 4)) {
            let s = NoiseSchedule::ddpm();
            let law = weight_law(WeightKind::InverseSnr, &s, 10, 13).unwrap();
            let scores: BTreeMap<usize, Vec<f64>> = l.iter().enumerate().map(|(i, v)| (10 + i, v.clone())).collect();
            let p = weighted_score_aggregate(&scores, &law).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for k in 0..3 {
                let per: Vec<f64> = l.iter().map(|v| softmax(v)[k]).collect();
                let lo = per.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = per.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(p[k] >= lo - 1e-12 && p[k] <= hi + 1e-12);
            }
        }
    }
}
