//! Noise schedules for the variance-preserving forward process.
//!
//! A schedule is a per-step rate `beta_t` on `1..=T`. From it we derive the
//! signal attenuation `J(t)` (the factor multiplying `x_0` in the closed-form
//! marginal), the marginal noise variance `1 - J(t)^2`, the signal-to-noise
//! ratio and an analytic estimate of the step at which the process has mixed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Linear,
}

/// Linear beta schedule. Serialized as `{"beta0": .., "betaT": .., "T": ..}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    #[serde(skip, default)]
    kind: ScheduleKind,
    beta0: f64,
    #[serde(rename = "betaT")]
    beta_t: f64,
    #[serde(rename = "T")]
    horizon: usize,
}

/// How `J(t)` is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttenuationMode {
    /// `prod_{i<=t} sqrt(1 - beta_i)`, the forward product of the DDPM update.
    DiscreteProduct,
    /// `exp(-1/2 * integral_0^t beta)` for the continuous linear rate.
    #[default]
    ContinuousIntegral,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Attenuation {
    pub j_value: f64,
    pub step: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MixingPrediction {
    pub t_mix_steps: f64,
    pub t_mix_fraction: f64,
    pub dim: usize,
}

impl NoiseSchedule {
    pub fn linear(beta0: f64, beta_t: f64, horizon: usize) -> Result<Self> {
        if !(beta0.is_finite() && beta_t.is_finite()) || beta0 <= 0.0 || beta0 > beta_t || beta_t >= 1.0 {
            return Err(Error::domain(format!(
                "linear schedule needs 0 < beta0 <= betaT < 1, got beta0={beta0}, betaT={beta_t}"
            )));
        }
        if horizon == 0 {
            return Err(Error::domain("schedule horizon must be at least 1"));
        }
        Ok(NoiseSchedule {
            kind: ScheduleKind::Linear,
            beta0,
            beta_t,
            horizon,
        })
    }

    /// The DDPM default `(1e-4, 0.02, 1000)`.
    pub fn ddpm() -> Self {
        NoiseSchedule::linear(1e-4, 0.02, 1000).expect("ddpm defaults are valid")
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    pub fn beta_final(&self) -> f64 {
        self.beta_t
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t > self.horizon {
            return Err(Error::domain(format!("step {t} outside [0, {}]", self.horizon)));
        }
        Ok(())
    }

    /// Rate at step `t` in `1..=T`.
    pub fn beta_at(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.horizon {
            return Err(Error::domain(format!("beta_at: step {t} outside [1, {}]", self.horizon)));
        }
        if self.horizon == 1 {
            return Ok(self.beta0);
        }
        let frac = (t - 1) as f64 / (self.horizon - 1) as f64;
        Ok(self.beta0 + (self.beta_t - self.beta0) * frac)
    }

    /// Largest rate over `1..=T`; the final one for the linear kind.
    pub fn max_beta(&self) -> f64 {
        self.beta_t
    }

    /// `-ln J(t)` under the continuous linear rate `beta(s) = beta0 + (betaT - beta0) s / T`.
    fn continuous_exponent(&self, t: f64) -> f64 {
        let span = self.beta_t - self.beta0;
        0.5 * self.beta0 * t + 0.25 * span * t * t / self.horizon as f64
    }

    pub fn attenuation(&self, t: usize, mode: AttenuationMode) -> Result<Attenuation> {
        self.check_step(t)?;
        let j_value = match mode {
            AttenuationMode::ContinuousIntegral => (-self.continuous_exponent(t as f64)).exp(),
            AttenuationMode::DiscreteProduct => {
                let mut log_j = 0.0;
                for i in 1..=t {
                    log_j += 0.5 * (-self.beta_at(i)?).ln_1p();
                }
                log_j.exp()
            }
        };
        Ok(Attenuation { j_value, step: t })
    }

    /// `J(t)` for every `t` in `0..=T`.
    pub fn attenuation_table(&self, mode: AttenuationMode) -> Vec<f64> {
        match mode {
            AttenuationMode::ContinuousIntegral => (0..=self.horizon)
                .map(|t| (-self.continuous_exponent(t as f64)).exp())
                .collect(),
            AttenuationMode::DiscreteProduct => {
                let mut out = Vec::with_capacity(self.horizon + 1);
                let mut log_j = 0.0f64;
                out.push(1.0);
                for t in 1..=self.horizon {
                    log_j += 0.5 * (-self.beta_at(t).unwrap()).ln_1p();
                    out.push(log_j.exp());
                }
                out
            }
        }
    }

    /// `(J(t), 1 - J(t)^2)` under the default (continuous) attenuation.
    pub fn marginal_params(&self, t: usize) -> Result<(f64, f64)> {
        let j = self.attenuation(t, AttenuationMode::ContinuousIntegral)?.j_value;
        Ok(marginal_from_attenuation(j))
    }

    /// `J^2 / (1 - J^2)`; `f64::INFINITY` at `t = 0`.
    pub fn snr(&self, t: usize) -> Result<f64> {
        let j = self.attenuation(t, AttenuationMode::ContinuousIntegral)?.j_value;
        Ok(snr_from_attenuation(j))
    }

    /// Positive root of `1/2 beta0 t + 1/4 (betaT - beta0) t^2 / T = 1/4 ln(d/2)`.
    ///
    /// For the DDPM defaults this is `t + 0.0995 t^2 = 5000 ln(d/2)`.
    pub fn predict_mixing_step(&self, dim: usize) -> Result<MixingPrediction> {
        if dim < 3 {
            return Err(Error::domain(format!("mixing prediction needs dim >= 3, got {dim}")));
        }
        let (a, b, c) = self.mixing_quadratic(dim);
        // Citardauq form: no cancellation since b > 0 and c < 0.
        let t = if a == 0.0 {
            -c / b
        } else {
            2.0 * (-c) / (b + (b * b - 4.0 * a * c).sqrt())
        };
        Ok(MixingPrediction {
            t_mix_steps: t,
            t_mix_fraction: t / self.horizon as f64,
            dim,
        })
    }

    /// Coefficients `(a, b, c)` of `a t^2 + b t + c = 0` solved by [`Self::predict_mixing_step`].
    pub fn mixing_quadratic(&self, dim: usize) -> (f64, f64, f64) {
        let a = 0.25 * (self.beta_t - self.beta0) / self.horizon as f64;
        let b = 0.5 * self.beta0;
        let c = -0.25 * (dim as f64 / 2.0).ln();
        (a, b, c)
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::ddpm()
    }
}

pub fn marginal_from_attenuation(j: f64) -> (f64, f64) {
    (j, 1.0 - j * j)
}

pub fn snr_from_attenuation(j: f64) -> f64 {
    let signal = j * j;
    let noise = 1.0 - signal;
    if noise <= 0.0 {
        f64::INFINITY
    } else {
        signal / noise
    }
}
