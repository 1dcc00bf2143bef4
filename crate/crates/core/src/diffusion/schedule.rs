use serde::{Deserialize, Serialize};

use super::DiffusionError;

/// Linear-β schedule parameters as they appear in configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            steps: 50,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<VarianceSchedule, DiffusionError> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

/// Discrete variance-preserving schedule over steps `t = 1..=T`.
///
/// `alpha_bars()[t - 1]` is `ᾱ_t = Π_{s <= t} (1 - β_s)`; the boundary value
/// `ᾱ_0` is taken to be 1.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl VarianceSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self, DiffusionError> {
        if betas.is_empty() {
            return Err(DiffusionError::Schedule("schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(DiffusionError::Schedule(format!("beta {b} outside (0, 1)")));
        }
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    /// Schedule with the given `ᾱ_1 > ᾱ_2 > ... > 0`, all below 1.
    pub fn from_alpha_bars(alpha_bars: &[f64]) -> Result<Self, DiffusionError> {
        let mut prev = 1.0;
        let mut betas = Vec::with_capacity(alpha_bars.len());
        for &a in alpha_bars {
            if !(a > 0.0 && a < prev) {
                return Err(DiffusionError::Schedule(format!(
                    "alpha_bar sequence not strictly decreasing in (0, 1) at {a}"
                )));
            }
            betas.push(1.0 - a / prev);
            prev = a;
        }
        let mut s = Self::from_betas(betas)?;
        s.alpha_bars = alpha_bars.to_vec();
        Ok(s)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `β_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> Result<f64, DiffusionError> {
        self.check_step(t)?;
        Ok(self.betas[t - 1])
    }

    /// `ᾱ_t` for `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64, DiffusionError> {
        match t {
            0 => Ok(1.0),
            _ => {
                self.check_step(t)?;
                Ok(self.alpha_bars[t - 1])
            }
        }
    }

    /// Posterior standard deviation `σ_t` with `σ_t² = β_t (1 - ᾱ_{t-1}) / (1 - ᾱ_t)`.
    pub fn posterior_std(&self, t: usize) -> Result<f64, DiffusionError> {
        let beta = self.beta(t)?;
        let a_t = self.alpha_bar(t)?;
        let a_prev = self.alpha_bar(t - 1)?;
        Ok((beta * (1.0 - a_prev) / (1.0 - a_t)).sqrt())
    }

    /// `T'`-step schedule on the same noise levels: `ᾱ'_j = ᾱ_{round(j T / T')}`.
    pub fn respaced(&self, t_prime: usize) -> Result<Self, DiffusionError> {
        let t = self.steps();
        if t_prime == 0 || t_prime > t {
            return Err(DiffusionError::Schedule(format!(
                "cannot respace {t} steps to {t_prime}"
            )));
        }
        let levels: Vec<f64> = (1..=t_prime)
            .map(|j| self.alpha_bars[(2 * j * t + t_prime) / (2 * t_prime) - 1])
            .collect();
        Self::from_alpha_bars(&levels)
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.steps() {
            return Err(DiffusionError::StepRange {
                t,
                steps: self.steps(),
            });
        }
        Ok(())
    }
}

/// Linearly spaced β from `beta_start` to `beta_end` over `steps` steps.
pub fn make_schedule(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<VarianceSchedule, DiffusionError> {
    if steps == 0 {
        return Err(DiffusionError::Schedule("schedule needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(DiffusionError::Schedule(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
        )));
    }
    let betas = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    VarianceSchedule::from_betas(betas)
}
