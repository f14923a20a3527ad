//! Empirical forward process.
//!
//! The default path noises each snapshot directly from the closed-form
//! marginal `x_t = J(t) x_0 + sqrt(1 - J(t)^2) eps`. Single DDPM steps are
//! available for validation. Noise for row `i` at step `t` comes from its own
//! counter-based stream, so a sweep can be regenerated bit-exactly from
//! `(dataset, schedule, steps, seed)` on any number of threads.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{self, EventPartition, LabeledDataset, FVEC1_MAGIC};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{self, domain};
use crate::schedule::{AttenuationMode, NoiseSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPolicy {
    pub base_seed: u64,
    /// Reuse one noise vector per sample at every step (path-coupled sweep).
    #[serde(default)]
    pub shared_path: bool,
}

impl SeedPolicy {
    pub fn new(base_seed: u64) -> Self {
        SeedPolicy { base_seed, shared_path: false }
    }

    pub fn shared(base_seed: u64) -> Self {
        SeedPolicy { base_seed, shared_path: true }
    }

    fn marginal_stream(&self, sample: usize, t: usize) -> rand_chacha::ChaCha8Rng {
        let step = if self.shared_path { 0 } else { t as u64 };
        rng::stream(self.base_seed, domain::MARGINAL_NOISE, sample as u64, step)
    }
}

/// Writes `scale_x * x + scale_eps * eps_i` row by row into a fresh matrix,
/// with `eps_i` drawn from `stream(i)`.
fn affine_noise<F>(x: ArrayView2<f64>, scale_x: f64, scale_eps: f64, stream: F) -> Array2<f64>
where
    F: Fn(usize) -> rand_chacha::ChaCha8Rng + Sync + Send,
{
    let (n, d) = x.dim();
    let mut out = Array2::<f64>::zeros((n, d));
    let slice = out.as_slice_mut().expect("fresh array is contiguous");
    par::for_each_chunk_mut(slice, d * par::ROW_CHUNK, |chunk_idx, chunk| {
        for (r, row) in chunk.chunks_mut(d).enumerate() {
            let i = chunk_idx * par::ROW_CHUNK + r;
            let mut g = stream(i);
            for (j, out) in row.iter_mut().enumerate() {
                let e: f64 = StandardNormal.sample(&mut g);
                *out = scale_x * x[(i, j)] + scale_eps * e;
            }
        }
    });
    out
}

/// Closed-form marginal sample of the whole dataset at step `t`.
pub fn noised_at(ds: &LabeledDataset, schedule: &NoiseSchedule, t: usize, seeds: &SeedPolicy) -> Result<Array2<f64>> {
    let j = schedule.attenuation(t, AttenuationMode::default())?.j_value;
    Ok(noise_with_attenuation(ds.features().view(), j, t, seeds))
}

fn noise_with_attenuation(x: ArrayView2<f64>, j: f64, t: usize, seeds: &SeedPolicy) -> Array2<f64> {
    if j == 1.0 {
        return x.to_owned();
    }
    let (mean_scale, noise_var) = crate::schedule::marginal_from_attenuation(j);
    affine_noise(x, mean_scale, noise_var.sqrt(), |i| seeds.marginal_stream(i, t))
}

/// One DDPM update `x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) eps_t`.
pub fn step_ddpm(x_prev: ArrayView2<f64>, schedule: &NoiseSchedule, t: usize, seeds: &SeedPolicy) -> Result<Array2<f64>> {
    let beta = schedule.beta_at(t)?;
    step_ddpm_with_beta(x_prev, beta, t, seeds)
}

/// As [`step_ddpm`] with an explicit rate; `beta` may be 0 or 1.
pub fn step_ddpm_with_beta(x_prev: ArrayView2<f64>, beta: f64, t: usize, seeds: &SeedPolicy) -> Result<Array2<f64>> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::domain(format!("beta must lie in [0, 1], got {beta}")));
    }
    if beta == 0.0 {
        return Ok(x_prev.to_owned());
    }
    let seed = seeds.base_seed;
    Ok(affine_noise(x_prev, (1.0 - beta).sqrt(), beta.sqrt(), |i| {
        rng::stream(seed, domain::DDPM_NOISE, i as u64, t as u64)
    }))
}

/// `count` evenly spaced steps over `[0, horizon]`, both endpoints included.
pub fn even_steps(horizon: usize, count: usize) -> Result<Vec<usize>> {
    if count == 0 {
        return Err(Error::domain("step count must be positive"));
    }
    if count == 1 {
        return Ok(vec![0]);
    }
    let mut steps: Vec<usize> = (0..count)
        .map(|i| ((i as f64) * horizon as f64 / (count - 1) as f64).round() as usize)
        .collect();
    steps.dedup();
    Ok(steps)
}

/// A one-sweep view of the forward process at a fixed list of steps.
///
/// Snapshots are regenerated on demand from the source rows, which keeps
/// memory at `O(N d)` regardless of the number of steps. Event membership is
/// always taken from the step-0 labels, so every snapshot indexes the same
/// trajectories.
#[derive(Clone, Debug)]
pub struct TrajectorySweep<'a> {
    dataset: &'a LabeledDataset,
    schedule: NoiseSchedule,
    steps: Vec<usize>,
    seeds: SeedPolicy,
    mode: AttenuationMode,
    attenuation: Vec<f64>,
}

pub fn sweep<'a>(ds: &'a LabeledDataset, schedule: &NoiseSchedule, steps: &[usize], seeds: SeedPolicy) -> Result<TrajectorySweep<'a>> {
    TrajectorySweep::new(ds, schedule, steps, seeds, AttenuationMode::default())
}

impl<'a> TrajectorySweep<'a> {
    pub fn new(
        ds: &'a LabeledDataset,
        schedule: &NoiseSchedule,
        steps: &[usize],
        seeds: SeedPolicy,
        mode: AttenuationMode,
    ) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::domain("sweep needs at least one step"));
        }
        if steps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("sweep steps must be strictly increasing"));
        }
        if let Some(&last) = steps.last() {
            if last > schedule.horizon() {
                return Err(Error::domain(format!("step {last} exceeds horizon {}", schedule.horizon())));
            }
        }
        Ok(TrajectorySweep {
            dataset: ds,
            schedule: *schedule,
            steps: steps.to_vec(),
            seeds,
            mode,
            attenuation: schedule.attenuation_table(mode),
        })
    }

    pub fn dataset(&self) -> &'a LabeledDataset {
        self.dataset
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn seeds(&self) -> &SeedPolicy {
        &self.seeds
    }

    pub fn mode(&self) -> AttenuationMode {
        self.mode
    }

    pub fn horizon(&self) -> usize {
        self.schedule.horizon()
    }

    pub fn attenuation_at(&self, t: usize) -> f64 {
        self.attenuation[t]
    }

    pub fn partition(&self) -> EventPartition {
        data::partition_by_label(self.dataset)
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if self.steps.binary_search(&t).is_err() {
            return Err(Error::domain(format!("step {t} is not part of the sweep")));
        }
        Ok(())
    }

    /// All rows at step `t`.
    pub fn snapshot(&self, t: usize) -> Result<Array2<f64>> {
        self.check_step(t)?;
        Ok(noise_with_attenuation(self.dataset.features().view(), self.attenuation[t], t, &self.seeds))
    }

    /// Selected rows at step `t`. Equal to the same rows of [`snapshot`](Self::snapshot).
    pub fn snapshot_rows(&self, t: usize, rows: &[usize]) -> Result<Array2<f64>> {
        self.check_step(t)?;
        let j = self.attenuation[t];
        let x0 = self.dataset.select_rows(rows);
        if j == 1.0 {
            return Ok(x0);
        }
        let (a, v) = crate::schedule::marginal_from_attenuation(j);
        let seeds = self.seeds;
        Ok(affine_noise(x0.view(), a, v.sqrt(), |r| seeds.marginal_stream(rows[r], t)))
    }

    /// Lazily yields `(t, snapshot)` in step order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, Array2<f64>)> + '_ {
        self.steps.iter().map(move |&t| (t, self.snapshot(t).expect("own step")))
    }

    /// Every snapshot held in memory, or a data error when the total size
    /// exceeds `budget_bytes`.
    pub fn materialize(&self, budget_bytes: usize) -> Result<Vec<Array2<f64>>> {
        let need = self.steps.len() * self.dataset.count() * self.dataset.dim() * std::mem::size_of::<f64>();
        if need > budget_bytes {
            return Err(Error::data(format!(
                "sweep needs {need} bytes, budget is {budget_bytes}; use iter() or write_spill()"
            )));
        }
        Ok(self.iter().map(|(_, x)| x).collect())
    }

    /// Writes every snapshot to a spill file: the `fvec1` header once, then
    /// for each step a `u32` step index followed by `N` `fvec1` records.
    /// Features are narrowed to `f32`.
    pub fn write_spill(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(FVEC1_MAGIC)?;
        w.write_all(&(self.dataset.count() as u64).to_le_bytes())?;
        w.write_all(&(self.dataset.dim() as u64).to_le_bytes())?;
        let raw: Vec<u32> = self.dataset.labels().iter().map(|&l| self.dataset.original_label(l as usize)).collect();
        for (t, x) in self.iter() {
            w.write_all(&(t as u32).to_le_bytes())?;
            data::write_fvec1_records(&mut w, x.view(), raw.iter().copied())?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `(step, labels, features)` read back from a spill file.
pub type SpillBlock = (usize, Vec<u32>, Array2<f64>);

/// Streaming reader for files produced by [`TrajectorySweep::write_spill`].
pub struct SpillReader {
    reader: BufReader<File>,
    n: usize,
    d: usize,
}

impl SpillReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 5];
        reader.read_exact(&mut magic).map_err(|_| Error::data("spill: truncated header"))?;
        if &magic != FVEC1_MAGIC {
            return Err(Error::data("spill: bad magic bytes"));
        }
        let (n, d) = data::read_fvec1_dims(&mut reader)?;
        Ok(SpillReader { reader, n, d })
    }

    /// Next `(step, labels, features)` block, or `None` at end of file.
    pub fn next_step(&mut self) -> Result<Option<SpillBlock>> {
        let mut step = [0u8; 4];
        match self.reader.read(&mut step[..1])? {
            0 => return Ok(None),
            _ => self.reader.read_exact(&mut step[1..]).map_err(|_| Error::data("spill: truncated step index"))?,
        }
        let (labels, values) = data::read_fvec1_records(&mut self.reader, self.n, self.d)?;
        let x = Array2::from_shape_vec((self.n, self.d), values).expect("sized by header");
        Ok(Some((u32::from_le_bytes(step) as usize, labels, x)))
    }
}
