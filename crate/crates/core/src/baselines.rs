//! Reference controllers: uniform random, fixed-time, and max-pressure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::argmax;
use crate::episode::{Controller, ControllerError, Observation};
use crate::sim::phase_pressure;

pub struct RandomController {
    rng: ChaCha8Rng,
}

impl RandomController {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn draw(&mut self, phase_count: usize) -> usize {
        if phase_count <= 1 {
            0
        } else {
            self.rng.random_range(0..phase_count)
        }
    }
}

impl Controller for RandomController {
    fn name(&self) -> String {
        "Random".into()
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<Vec<usize>, ControllerError> {
        Ok(obs
            .network
            .intersections
            .iter()
            .map(|i| self.draw(i.phase_count()))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("fixed-time plan is empty")]
    Empty,
    #[error("phase {phase} green of {duration} s is below the {min_green} s minimum")]
    TooShort { phase: usize, duration: u32, min_green: u32 },
    #[error("phase {0} is not in the plan")]
    Uncovered(usize),
    #[error("phase {phase} out of range (0..{count})")]
    OutOfRange { phase: usize, count: usize },
}

/// Ordered (phase, green seconds) entries cycled forever.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedTimePlan(pub Vec<(usize, u32)>);

impl FixedTimePlan {
    /// Every phase for one decision interval, in order.
    pub fn round_robin(phase_count: usize, interval: u32) -> Self {
        Self((0..phase_count).map(|p| (p, interval)).collect())
    }

    pub fn validate(&self, phase_count: usize, min_green: u32) -> Result<(), PlanError> {
        if self.0.is_empty() {
            return Err(PlanError::Empty);
        }
        for &(phase, duration) in &self.0 {
            if phase >= phase_count {
                return Err(PlanError::OutOfRange {
                    phase,
                    count: phase_count,
                });
            }
            if duration < min_green {
                return Err(PlanError::TooShort {
                    phase,
                    duration,
                    min_green,
                });
            }
        }
        match (0..phase_count).find(|p| !self.0.iter().any(|e| e.0 == *p)) {
            Some(p) => Err(PlanError::Uncovered(p)),
            None => Ok(()),
        }
    }

    pub fn cycle_length(&self) -> u64 {
        self.0.iter().map(|e| e.1 as u64).sum()
    }

    /// Phase in force at `time` seconds into the episode.
    pub fn phase_at(&self, time: u64) -> usize {
        let mut pos = time % self.cycle_length().max(1);
        for &(phase, duration) in &self.0 {
            if pos < duration as u64 {
                return phase;
            }
            pos -= duration as u64;
        }
        self.0[0].0
    }
}

/// State-independent cycling. Without an explicit plan each intersection
/// cycles its own phases one decision interval each.
pub struct FixedTimeController {
    plan: Option<FixedTimePlan>,
}

impl FixedTimeController {
    pub fn round_robin() -> Self {
        Self { plan: None }
    }

    /// Validated against the phase count and minimum green it will run under.
    pub fn with_plan(plan: FixedTimePlan, phase_count: usize, min_green: u32) -> Result<Self, PlanError> {
        plan.validate(phase_count, min_green)?;
        Ok(Self { plan: Some(plan) })
    }
}

impl Controller for FixedTimeController {
    fn name(&self) -> String {
        "FixedTime".into()
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<Vec<usize>, ControllerError> {
        let time = obs.decision as u64 * obs.interval as u64;
        obs.network
            .intersections
            .iter()
            .map(|inter| {
                let phase = match &self.plan {
                    Some(plan) => plan.phase_at(time),
                    None => FixedTimePlan::round_robin(inter.phase_count(), obs.interval).phase_at(time),
                };
                if phase < inter.phase_count() {
                    Ok(phase)
                } else {
                    Err(ControllerError(format!("plan phase {phase} not defined at {}", inter.id)))
                }
            })
            .collect()
    }
}

/// Greedy on signed phase pressure, lowest index on ties.
pub struct MaxPressureController;

impl MaxPressureController {
    pub fn choose(pressures: &[f64]) -> usize {
        argmax(pressures)
    }
}

impl Controller for MaxPressureController {
    fn name(&self) -> String {
        "MaxPressure".into()
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<Vec<usize>, ControllerError> {
        obs.network
            .intersections
            .iter()
            .enumerate()
            .map(|(i, inter)| {
                let pressures = (0..inter.phase_count())
                    .map(|p| phase_pressure(obs.state, obs.network, i, p))
                    .collect::<Result<Vec<f64>, _>>()
                    .map_err(|e| ControllerError(e.to_string()))?;
                Ok(Self::choose(&pressures))
            })
            .collect()
    }
}
