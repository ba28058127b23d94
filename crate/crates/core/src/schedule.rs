//! Perturbation-strength schedule for outlier synthesis. Supports a constant
//! value and a linear ramp (e.g. 300 down to 30 over the course of training).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interpolation mode of an [`AlphaSchedule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    Constant,
    Linear,
}

/// Schedule of the synthesis strength `alpha` over `total_steps` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaSchedule {
    pub start: f64,
    pub end: f64,
    pub total_steps: usize,
    pub mode: ScheduleMode,
}

impl AlphaSchedule {
    pub fn constant(value: f64, total_steps: usize) -> Result<Self> {
        Self::new(value, value, total_steps, ScheduleMode::Constant)
    }

    pub fn linear(start: f64, end: f64, total_steps: usize) -> Result<Self> {
        Self::new(start, end, total_steps, ScheduleMode::Linear)
    }

    pub fn new(start: f64, end: f64, total_steps: usize, mode: ScheduleMode) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::ConfigParse(
                "schedule needs at least one step".into(),
            ));
        }
        if !start.is_finite() || !end.is_finite() {
            return Err(Error::ConfigParse(format!(
                "schedule endpoints must be finite, got {start}..{end}"
            )));
        }
        Ok(Self {
            start,
            end,
            total_steps,
            mode,
        })
    }

    /// Value at `step ∈ [0, total_steps)`.
    ///
    /// Constant mode returns `start` everywhere. Linear mode interpolates so
    /// that `value(0) = start` and `value(total_steps − 1) = end`.
    pub fn value_at(&self, step: usize) -> Result<f64> {
        if step >= self.total_steps {
            return Err(Error::StepOutOfRange {
                step,
                total_steps: self.total_steps,
            });
        }
        Ok(match self.mode {
            ScheduleMode::Constant => self.start,
            ScheduleMode::Linear => {
                if self.total_steps == 1 {
                    self.start
                } else {
                    let t = step as f64 / (self.total_steps - 1) as f64;
                    self.start + (self.end - self.start) * t
                }
            }
        })
    }
}

/// Free-function form of [`AlphaSchedule::value_at`].
pub fn alpha_at(schedule: &AlphaSchedule, step: usize) -> Result<f64> {
    schedule.value_at(step)
}
