//! Closed-loop episodes: abstraction, controller decision, simulation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caf::DecisionRecord;
use crate::dsl::{evaluate, DslLimits, PolicyProgram, Signature};
use crate::events::SimEvent;
use crate::metrics::MetricsReport;
use crate::network::{FlowSpec, RoadNetwork};
use crate::sim::{SimConfig, SimError, SimState, Simulator};
use crate::ssa::{abstract_state, SsaConfig, StructuredFacts, TemporalRegisters};

/// What a controller sees at a decision.
pub struct Observation<'a> {
    pub network: &'a RoadNetwork,
    pub state: &'a SimState,
    /// Abstracted facts, one per intersection.
    pub facts: &'a [StructuredFacts],
    /// Decision index from 0.
    pub decision: usize,
    pub interval: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct ControllerError(pub String);

pub trait Controller: Send {
    fn name(&self) -> String;

    /// One phase per intersection.
    fn decide(&mut self, obs: &Observation<'_>) -> Result<Vec<usize>, ControllerError>;
}

impl<C: Controller + ?Sized> Controller for Box<C> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<Vec<usize>, ControllerError> {
        (**self).decide(obs)
    }
}

/// Runs a policy program independently at every intersection.
#[derive(Debug, Clone)]
pub struct PolicyController {
    pub program: PolicyProgram,
    pub label: String,
}

impl PolicyController {
    pub fn new(program: PolicyProgram, label: impl Into<String>) -> Self {
        Self {
            program,
            label: label.into(),
        }
    }
}

impl Controller for PolicyController {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn decide(&mut self, obs: &Observation<'_>) -> Result<Vec<usize>, ControllerError> {
        Ok(obs.facts.iter().map(|f| evaluate(&self.program, f)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSettings {
    pub sim: SimConfig,
    pub ssa: SsaConfig,
    /// Episode length (s); a multiple of the decision interval.
    pub horizon: u64,
}

impl Default for EpisodeSettings {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            ssa: SsaConfig::default(),
            horizon: 3600,
        }
    }
}

impl EpisodeSettings {
    pub fn validate(&self) -> Result<(), EpisodeError> {
        self.sim.validate()?;
        self.ssa.validate().map_err(|e| EpisodeError::Config(e.to_string()))?;
        let interval = self.sim.interval as u64;
        if self.horizon == 0 || self.horizon % interval != 0 {
            return Err(EpisodeError::Config(format!(
                "horizon {} s must be a positive multiple of the {} s decision interval",
                self.horizon, interval
            )));
        }
        Ok(())
    }

    pub fn decisions(&self) -> usize {
        (self.horizon / self.sim.interval as u64) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub decisions: Vec<DecisionRecord>,
    pub events: Vec<SimEvent>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid episode config: {0}")]
    Config(String),
    #[error("controller failed at decision {decision}: {error}")]
    Controller {
        decision: usize,
        error: ControllerError,
        /// Everything logged before the failure.
        partial: Box<EpisodeResult>,
    },
}

/// Policy signature for a network: uniform phase count required.
pub fn signature_for(net: &RoadNetwork, ssa: &SsaConfig, limits: &DslLimits) -> Result<Signature, String> {
    let n = net
        .uniform_phase_count()
        .ok_or("policies need every intersection to have the same number of phases")?;
    let mut sig = Signature::new(n).with_limits(limits.clone());
    sig.categorical = !ssa.passthrough;
    Ok(sig)
}

pub fn run_episode(
    net: &RoadNetwork,
    flows: &FlowSpec,
    controller: &mut dyn Controller,
    settings: &EpisodeSettings,
    seed: u64,
) -> Result<EpisodeResult, EpisodeError> {
    run_episode_observed(net, flows, controller, settings, seed, &mut |_| {})
}

/// As [`run_episode`], calling `observer` after every micro-tick.
pub fn run_episode_observed(
    net: &RoadNetwork,
    flows: &FlowSpec,
    controller: &mut dyn Controller,
    settings: &EpisodeSettings,
    seed: u64,
    observer: &mut dyn FnMut(&SimState),
) -> Result<EpisodeResult, EpisodeError> {
    settings.validate()?;
    let mut sim = Simulator::new(net, flows, settings.sim.clone(), seed)?;
    let mut registers: Vec<TemporalRegisters> = net
        .intersections
        .iter()
        .map(|i| TemporalRegisters::new(i.phase_count()))
        .collect();
    let mut decisions = Vec::new();
    let mut events = Vec::new();

    for d in 0..settings.decisions() {
        let state = sim.state();
        let mut facts = Vec::with_capacity(registers.len());
        let mut active = Vec::with_capacity(registers.len());
        for (i, regs) in registers.iter_mut().enumerate() {
            let view = state.intersection_view(net, i);
            let (f, next) = abstract_state(&view, regs, &settings.ssa);
            *regs = next;
            active.push(view.active_phase);
            facts.push(f);
        }
        let obs = Observation {
            network: net,
            state,
            facts: &facts,
            decision: d,
            interval: settings.sim.interval,
        };
        let actions = match controller.decide(&obs) {
            Ok(a) => a,
            Err(error) => {
                let metrics = state.report();
                return Err(EpisodeError::Controller {
                    decision: d,
                    error,
                    partial: Box::new(EpisodeResult {
                        decisions,
                        events,
                        metrics,
                    }),
                });
            }
        };
        let time = state.clock;
        let outcome = sim.step_observed(&actions, observer)?;
        for (i, f) in facts.into_iter().enumerate() {
            registers[i].record_action(actions[i]);
            decisions.push(DecisionRecord {
                t: d,
                time,
                intersection: net.intersections[i].id.clone(),
                active: active[i],
                facts: f,
                action: actions[i],
                deferred: outcome.deferred[i],
            });
        }
        events.extend(outcome.events);
    }
    Ok(EpisodeResult {
        decisions,
        events,
        metrics: sim.state().report(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::MaxPressureController;
    use crate::dsl::parse_text;
    use crate::metrics::compute_metrics;
    use crate::scenario::{generate, DemandKind};

    fn scenario() -> (RoadNetwork, FlowSpec) {
        let (doc, entries) = generate(DemandKind::Asymmetric, 1, 1, 3).unwrap();
        let net = RoadNetwork::from_doc(doc).unwrap();
        let flows = crate::network::validate_flows(&entries, &net).unwrap();
        (net, flows)
    }

    struct FailAt(usize);

    impl Controller for FailAt {
        fn name(&self) -> String {
            "fail".into()
        }

        fn decide(&mut self, obs: &Observation<'_>) -> Result<Vec<usize>, ControllerError> {
            if obs.decision == self.0 {
                Err(ControllerError("boom".into()))
            } else {
                Ok(vec![0; obs.facts.len()])
            }
        }
    }

    #[test]
    fn log_shape_and_metrics_agree() {
        let (net, flows) = scenario();
        let settings = EpisodeSettings::default();
        let r = run_episode(&net, &flows, &mut MaxPressureController, &settings, 1).unwrap();
        assert_eq!(r.decisions.len(), 120);
        for (k, d) in r.decisions.iter().enumerate() {
            assert_eq!((d.t, d.time), (k, 30 * k as u64));
        }
        assert_eq!(compute_metrics(&r.events, settings.horizon), r.metrics);
        assert!(r.metrics.completed > 0);
    }

    #[test]
    fn horizon_must_divide() {
        let (net, flows) = scenario();
        let settings = EpisodeSettings {
            horizon: 100,
            ..EpisodeSettings::default()
        };
        let err = run_episode(&net, &flows, &mut MaxPressureController, &settings, 1).unwrap_err();
        assert!(matches!(err, EpisodeError::Config(_)));
    }

    #[test]
    fn controller_failure_keeps_partial_log() {
        let (net, flows) = scenario();
        let err = run_episode(&net, &flows, &mut FailAt(5), &EpisodeSettings::default(), 1).unwrap_err();
        let EpisodeError::Controller { decision, partial, .. } = err else { panic!() };
        assert_eq!(decision, 5);
        assert_eq!(partial.decisions.len(), 5);
    }

    #[test]
    fn policy_controller_runs_program() {
        let (net, flows) = scenario();
        let sig = signature_for(&net, &SsaConfig::default(), &DslLimits::default()).unwrap();
        let program = parse_text("ELSE 2", &sig).unwrap();
        let mut c = PolicyController::new(program, "hold-2");
        let r = run_episode(&net, &flows, &mut c, &EpisodeSettings::default(), 1).unwrap();
        assert!(r.decisions.iter().all(|d| d.action == 2));
        // Switched once at the start, then held.
        assert!(r.decisions[2..].iter().all(|d| d.active == 2));
    }
}
