//! Deterministic DDIM sampling schedule (eta = 0, epsilon prediction).

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdimConfig {
    pub beta_start: f64,
    pub beta_end: f64,
    pub train_timesteps: usize,
    pub steps_offset: usize,
}

impl Default for DdimConfig {
    fn default() -> Self {
        Self {
            beta_start: 0.00085,
            beta_end: 0.012,
            train_timesteps: 1000,
            steps_offset: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DdimScheduler {
    timesteps: Vec<usize>,
    alphas_cumprod: Vec<f64>,
    step_ratio: usize,
}

impl DdimScheduler {
    /// Scaled-linear beta schedule, `inference_steps` evenly spaced timesteps.
    pub fn new(inference_steps: usize, config: DdimConfig) -> Result<Self> {
        if inference_steps == 0 || inference_steps > config.train_timesteps {
            return Err(Error::InvalidConfig(format!(
                "steps must be in 1..={}, got {inference_steps}",
                config.train_timesteps
            )));
        }
        let n = config.train_timesteps;
        let (lo, hi) = (config.beta_start.sqrt(), config.beta_end.sqrt());
        let mut alphas_cumprod = Vec::with_capacity(n);
        let mut acc = 1.0;
        for i in 0..n {
            let root = if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
            acc *= 1.0 - root * root;
            alphas_cumprod.push(acc);
        }
        Self::from_alphas_cumprod(alphas_cumprod, inference_steps, config.steps_offset)
    }

    /// Builds a schedule over explicit cumulative alphas.
    pub fn from_alphas_cumprod(alphas_cumprod: Vec<f64>, inference_steps: usize, steps_offset: usize) -> Result<Self> {
        let n = alphas_cumprod.len();
        if inference_steps == 0 || inference_steps > n {
            return Err(Error::InvalidConfig(format!("steps must be in 1..={n}, got {inference_steps}")));
        }
        let step_ratio = n / inference_steps;
        // The offset is dropped when it would push the first timestep past the table.
        let offset = if (inference_steps - 1) * step_ratio + steps_offset < n {
            steps_offset
        } else {
            0
        };
        let timesteps: Vec<usize> = (0..inference_steps)
            .map(|s| s * step_ratio + offset)
            .rev()
            .collect();
        Ok(Self {
            timesteps,
            alphas_cumprod,
            step_ratio,
        })
    }

    /// Strictly decreasing.
    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    pub fn alpha_cumprod(&self, timestep: usize) -> f64 {
        self.alphas_cumprod[timestep]
    }

    /// The cumulative alpha the step from `timestep` lands on.
    pub fn alpha_cumprod_prev(&self, timestep: usize) -> f64 {
        match timestep.checked_sub(self.step_ratio) {
            Some(prev) => self.alphas_cumprod[prev],
            None => self.alphas_cumprod[0],
        }
    }

    fn check(&self, timestep: usize) -> Result<()> {
        if self.timesteps.contains(&timestep) {
            Ok(())
        } else {
            Err(Error::ScheduleExhausted { timestep })
        }
    }

    /// Scalar DDIM update for one element.
    #[inline]
    pub fn step_value(alpha_t: f64, alpha_prev: f64, eps: f64, sample: f64) -> f64 {
        let x0 = (sample - (1.0 - alpha_t).sqrt() * eps) / alpha_t.sqrt();
        alpha_prev.sqrt() * x0 + (1.0 - alpha_prev).sqrt() * eps
    }

    /// `x_{t−1}` from `x_t` and the predicted noise, applied elementwise.
    pub fn step(&self, eps: &[f64], timestep: usize, sample: &[f64]) -> Result<Vec<f64>> {
        self.check(timestep)?;
        if eps.len() != sample.len() {
            return Err(Error::DimensionMismatch(format!(
                "noise has {} values, sample has {}",
                eps.len(),
                sample.len()
            )));
        }
        let a_t = self.alpha_cumprod(timestep);
        let a_prev = self.alpha_cumprod_prev(timestep);
        Ok(eps
            .iter()
            .zip(sample)
            .map(|(&e, &x)| Self::step_value(a_t, a_prev, e, x))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timesteps_strictly_decrease() {
        for steps in [1, 5, 20, 50, 1000] {
            let s = DdimScheduler::new(steps, DdimConfig::default()).unwrap();
            assert_eq!(s.timesteps().len(), steps);
            assert!(s.timesteps().windows(2).all(|w| w[0] > w[1]));
        }
        let s = DdimScheduler::new(5, DdimConfig::default()).unwrap();
        assert_eq!(s.timesteps(), &[801, 601, 401, 201, 1]);
    }

    #[test]
    fn scalar_step_matches_hand_computation() {
        // alpha_t = 0.5, alpha_prev = 0.8, x = 1, eps = 0.2:
        // x0 = (1 - sqrt(0.5)·0.2)/sqrt(0.5) = 1.2142135623730951
        // x_prev = sqrt(0.8)·x0 + sqrt(0.2)·0.2 = 1.17546834496736
        let s = DdimScheduler::from_alphas_cumprod(vec![0.8, 0.5], 1, 1).unwrap();
        assert_eq!(s.timesteps(), &[1]);
        let out = s.step(&[0.2], 1, &[1.0]).unwrap();
        assert!((out[0] - 1.175_468_344_967_36).abs() < 1e-9, "{}", out[0]);
    }

    #[test]
    fn unknown_timestep_is_exhausted() {
        let s = DdimScheduler::new(5, DdimConfig::default()).unwrap();
        assert!(matches!(s.step(&[0.0], 0, &[0.0]), Err(Error::ScheduleExhausted { timestep: 0 })));
    }

    #[test]
    fn config_cumprod_is_decreasing() {
        let s = DdimScheduler::new(10, DdimConfig::default()).unwrap();
        assert!(s.alpha_cumprod(0) > s.alpha_cumprod(999));
        assert!((s.alpha_cumprod(0) - (1.0 - 0.00085)).abs() < 1e-15);
    }
}
