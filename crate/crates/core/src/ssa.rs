//! Structured state abstraction.
//!
//! Turns one intersection's numeric snapshot plus its temporal registers into
//! a closed set of categorical facts with numeric companions. Two stages:
//! [`aggregate`] computes per-phase metrics and advances the starvation
//! timers, [`predicates`] maps those metrics onto the vocabulary.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::Axis;
use crate::sim::IntersectionView;

#[derive(Debug, Error, PartialEq)]
#[error("invalid abstraction config: {0}")]
pub struct SsaConfigError(pub String);

/// Thresholds behind every predicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsaConfig {
    /// Pressure above which a waiting phase counts as demanding (vehicles).
    pub demand_threshold: f64,
    /// Starvation timer above which a demanding phase is at risk (seconds).
    pub starvation_threshold: f64,
    /// Cut points on max phase pressure: low, moderate, high, critical.
    pub congestion_cuts: [f64; 4],
    /// Longest current wait above which urgency is critical (seconds).
    pub urgency_wait: f64,
    /// NS/EW aggregate pressure ratio beyond which one axis dominates.
    pub imbalance_ratio: f64,
    /// Lead over the runner-up required for a dominant flow (vehicles).
    pub dominance_margin: f64,
    /// Numeric features only; every categorical slot stays neutral.
    pub passthrough: bool,
}

impl Default for SsaConfig {
    fn default() -> Self {
        Self {
            demand_threshold: 5.0,
            starvation_threshold: 120.0,
            congestion_cuts: [5.0, 15.0, 25.0, 40.0],
            urgency_wait: 90.0,
            imbalance_ratio: 1.5,
            dominance_margin: 2.0,
            passthrough: false,
        }
    }
}

impl SsaConfig {
    pub fn validate(&self) -> Result<(), SsaConfigError> {
        let c = &self.congestion_cuts;
        if !c.windows(2).all(|w| w[0] < w[1]) {
            return Err(SsaConfigError("congestion cut points must be strictly increasing".into()));
        }
        let positive = [
            ("demand_threshold", self.demand_threshold),
            ("starvation_threshold", self.starvation_threshold),
            ("congestion_cuts[0]", c[0]),
            ("urgency_wait", self.urgency_wait),
            ("dominance_margin", self.dominance_margin),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SsaConfigError(format!("{name} must be a finite value > 0")));
            }
        }
        if !(self.imbalance_ratio.is_finite() && self.imbalance_ratio > 1.0) {
            return Err(SsaConfigError("imbalance_ratio must be > 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Congestion {
    Low,
    Moderate,
    High,
    Critical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Urgency {
    Normal,
    Critical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Imbalance {
    None,
    NsDominant,
    EwDominant,
}

impl Congestion {
    pub const ALL: [Congestion; 4] = [Self::Low, Self::Moderate, Self::High, Self::Critical];

    pub fn name(self) -> &'static str {
        match self {
            Self::Low => "Low",
            Self::Moderate => "Moderate",
            Self::High => "High",
            Self::Critical => "Critical",
        }
    }
}

impl Urgency {
    pub const ALL: [Urgency; 2] = [Self::Normal, Self::Critical];

    pub fn name(self) -> &'static str {
        match self {
            Self::Normal => "Normal",
            Self::Critical => "Critical",
        }
    }
}

impl Imbalance {
    pub const ALL: [Imbalance; 3] = [Self::None, Self::NsDominant, Self::EwDominant];

    /// Identifier used in the policy language.
    pub fn name(self) -> &'static str {
        match self {
            Self::None => "None",
            Self::NsDominant => "NS_Dominant",
            Self::EwDominant => "EW_Dominant",
        }
    }

    fn label(self) -> &'static str {
        match self {
            Self::None => "None",
            Self::NsDominant => "NS Dominant",
            Self::EwDominant => "EW Dominant",
        }
    }
}

/// Persistent per-intersection history.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TemporalRegisters {
    /// Seconds since each phase was last active.
    pub starvation: Vec<f64>,
    /// Clock of the last update; `None` before the first.
    pub clock: Option<u64>,
    pub previous: Option<StructuredFacts>,
    pub last_action: Option<usize>,
}

impl TemporalRegisters {
    pub fn new(phase_count: usize) -> Self {
        Self {
            starvation: vec![0.0; phase_count],
            ..Self::default()
        }
    }

    pub fn record_action(&mut self, action: usize) {
        self.last_action = Some(action);
    }
}

/// Stage-one output: instantaneous aggregates plus persistent timers.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMetrics {
    pub pressure: Vec<f64>,
    pub queue: Vec<f64>,
    pub wait: Vec<f64>,
    pub starvation: Vec<f64>,
    pub axes: Vec<Option<Axis>>,
}

impl PhaseMetrics {
    pub fn max_pressure(&self) -> f64 {
        self.pressure.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// The fact set handed to policies and recorded in decision logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredFacts {
    pub congestion: Congestion,
    pub dominant_flow: Option<usize>,
    /// Per phase: starvation risk is high.
    pub starvation_risk: Vec<bool>,
    pub urgency: Urgency,
    pub imbalance: Imbalance,
    pub pressure: Vec<f64>,
    pub queue: Vec<f64>,
    pub wait: Vec<f64>,
    pub starvation: Vec<f64>,
}

impl StructuredFacts {
    pub fn phase_count(&self) -> usize {
        self.pressure.len()
    }

    /// All-zero facts with neutral categories.
    pub fn neutral(phase_count: usize) -> Self {
        Self {
            congestion: Congestion::Low,
            dominant_flow: None,
            starvation_risk: vec![false; phase_count],
            urgency: Urgency::Normal,
            imbalance: Imbalance::None,
            pressure: vec![0.0; phase_count],
            queue: vec![0.0; phase_count],
            wait: vec![0.0; phase_count],
            starvation: vec![0.0; phase_count],
        }
    }

    /// Human-readable predicate labels, e.g. `Congestion: Critical`.
    pub fn labels(&self) -> Vec<String> {
        let mut out = vec![
            format!("Congestion: {}", self.congestion.name()),
            match self.dominant_flow {
                Some(p) => format!("Dominant Flow: Phase {p}"),
                None => "Dominant Flow: None".into(),
            },
        ];
        for (p, risk) in self.starvation_risk.iter().enumerate() {
            if *risk {
                out.push(format!("Starvation Risk: High (phase {p})"));
            }
        }
        out.push(format!("Queue Urgency: {}", self.urgency.name()));
        out.push(format!("Imbalance: {}", self.imbalance.label()));
        out
    }
}

impl fmt::Display for StructuredFacts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.labels().join(", "))
    }
}

/// Stage one: per-phase metrics from the view, timers advanced by the clock
/// delta since the last update, the acting phase's timer reset to 0.
pub fn aggregate(view: &IntersectionView, registers: &TemporalRegisters) -> (PhaseMetrics, TemporalRegisters) {
    let n = view.pressure.len();
    let elapsed = registers
        .clock
        .map_or(0.0, |c| view.clock.saturating_sub(c) as f64);
    let mut timers = registers.starvation.clone();
    timers.resize(n, 0.0);
    for (p, timer) in timers.iter_mut().enumerate() {
        if p == view.active_phase {
            *timer = 0.0;
        } else {
            *timer += elapsed;
        }
    }
    let metrics = PhaseMetrics {
        pressure: view.pressure.clone(),
        queue: view.queue.clone(),
        wait: view.max_wait.clone(),
        starvation: timers.clone(),
        axes: view.axes.clone(),
    };
    let next = TemporalRegisters {
        starvation: timers,
        clock: Some(view.clock),
        previous: registers.previous.clone(),
        last_action: registers.last_action,
    };
    (metrics, next)
}

/// Stage two: metrics to predicates.
pub fn predicates(m: &PhaseMetrics, config: &SsaConfig) -> StructuredFacts {
    let n = m.pressure.len();
    let mut facts = StructuredFacts {
        pressure: m.pressure.clone(),
        queue: m.queue.clone(),
        wait: m.wait.clone(),
        starvation: m.starvation.clone(),
        ..StructuredFacts::neutral(n)
    };
    if config.passthrough || n == 0 {
        return facts;
    }

    let [low, moderate, high, critical] = config.congestion_cuts;
    let max_p = m.max_pressure();
    facts.congestion = if max_p >= critical {
        Congestion::Critical
    } else if max_p >= high {
        Congestion::High
    } else if max_p >= moderate {
        Congestion::Moderate
    } else {
        Congestion::Low
    };

    let leader = argmax_lowest(&m.pressure);
    let runner_up = m
        .pressure
        .iter()
        .enumerate()
        .filter(|&(p, _)| p != leader)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_p >= low && max_p - runner_up >= config.dominance_margin {
        facts.dominant_flow = Some(leader);
    }

    facts.starvation_risk = (0..n)
        .map(|p| m.pressure[p] > config.demand_threshold && m.starvation[p] > config.starvation_threshold)
        .collect();

    let max_wait = m.wait.iter().copied().fold(0.0, f64::max);
    if max_wait > config.urgency_wait {
        facts.urgency = Urgency::Critical;
    }

    let axis_total = |axis| -> f64 {
        let sum: f64 = (0..n)
            .filter(|&p| m.axes[p] == Some(axis))
            .map(|p| m.pressure[p])
            .sum();
        sum.max(0.0)
    };
    let (ns, ew) = (axis_total(Axis::NS), axis_total(Axis::EW));
    facts.imbalance = if ns > config.imbalance_ratio * ew {
        Imbalance::NsDominant
    } else if ew > config.imbalance_ratio * ns {
        Imbalance::EwDominant
    } else {
        Imbalance::None
    };
    facts
}

fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Both stages; the returned registers carry the new facts as `previous`.
pub fn abstract_state(
    view: &IntersectionView,
    registers: &TemporalRegisters,
    config: &SsaConfig,
) -> (StructuredFacts, TemporalRegisters) {
    let (metrics, mut next) = aggregate(view, registers);
    let facts = predicates(&metrics, config);
    next.previous = Some(facts.clone());
    (facts, next)
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Text describing every predicate and numeric feature with the configured
/// thresholds, embedded verbatim in mutation prompts.
pub fn vocabulary_description(config: &SsaConfig) -> String {
    let [low, moderate, high, critical] = config.congestion_cuts.map(num);
    let mut s = String::new();
    s.push_str("STRUCTURED STATE VOCABULARY\n");
    s.push_str("A policy sees one fact set per intersection at every decision.\n\n");
    if config.passthrough {
        s.push_str("Categorical predicates are disabled in this configuration; only numeric features are available.\n\n");
    } else {
        s.push_str("Categorical predicates:\n");
        s.push_str(&format!(
            "- Congestion: Low | Congestion: Moderate | Congestion: High | Congestion: Critical\n  \
             by maximum phase pressure P: Critical if P >= {critical}, High if P >= {high}, \
             Moderate if P >= {moderate}, otherwise Low (vehicles).\n  \
             Policy syntax: congestion == Critical\n"
        ));
        s.push_str(&format!(
            "- Dominant Flow: Phase k\n  \
             phase k has the largest pressure, at least {low} vehicles, leading every other phase by at least {} vehicles; otherwise none.\n  \
             Policy syntax: dominant_flow == 2, dominant_flow == None\n",
            num(config.dominance_margin)
        ));
        s.push_str(&format!(
            "- Starvation Risk: High (per phase i)\n  \
             pressure[i] > {} vehicles AND starvation[i] > {} s.\n  \
             Policy syntax: starvation_risk[i]\n",
            num(config.demand_threshold),
            num(config.starvation_threshold)
        ));
        s.push_str(&format!(
            "- Queue Urgency: Normal | Queue Urgency: Critical\n  \
             Critical when the longest current wait at any phase exceeds {} s.\n  \
             Policy syntax: urgency == Critical\n",
            num(config.urgency_wait)
        ));
        s.push_str(&format!(
            "- Imbalance: None | Imbalance: NS Dominant | Imbalance: EW Dominant\n  \
             NS Dominant when total NS-phase pressure exceeds {r} x total EW-phase pressure, EW Dominant symmetrically.\n  \
             Policy syntax: imbalance == NS_Dominant, imbalance == EW_Dominant, imbalance == None\n",
            r = num(config.imbalance_ratio)
        ));
        s.push('\n');
    }
    s.push_str("Numeric features (indexed by phase i, usable as feature[i] or in max/min/sum/argmax/argmin):\n");
    s.push_str("- pressure[i]: sum over the phase's movements of upstream queue minus downstream mean per-lane queue (vehicles)\n");
    s.push_str("- queue[i]: vehicles waiting at the stop line on the phase's lanes\n");
    s.push_str("- wait[i]: longest current wait among those vehicles (s)\n");
    s.push_str("- starvation[i]: seconds since the phase was last active\n");
    s
}
