//! Post-hoc defect analysis of decision logs.
//!
//! Three patterns are matched per intersection:
//!
//! * wasted green: the selected phase has (near) zero queue. Holding the
//!   current phase while every phase is empty is exempt.
//! * phase starvation: a phase with pressure above the high-demand bound
//!   that was not selected by any decision in the trailing window. Matching
//!   decisions whose windows overlap are merged into one defect.
//! * premature switch: the phase selected at the previous decision had high
//!   pressure then, is abandoned now, and still holds a residual queue.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::MetricsReport;
use crate::ssa::StructuredFacts;

/// One controller decision at one intersection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    /// Decision index, contiguous from 0 per intersection.
    pub t: usize,
    /// Simulation clock at the decision (s).
    pub time: u64,
    pub intersection: String,
    /// Phase holding the right of way just before the decision.
    pub active: usize,
    pub facts: StructuredFacts,
    pub action: usize,
    /// The requested switch was postponed by the minimum-green rule.
    #[serde(default)]
    pub deferred: bool,
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid analysis config: {0}")]
pub struct CafConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CafConfig {
    /// Starvation window (s).
    pub starvation_window: f64,
    /// Queue below which a phase counts as empty (vehicles).
    pub demand_epsilon: f64,
    /// Pressure above which a phase counts as demanding (vehicles).
    pub high_demand: f64,
    /// Queue left behind that makes a switch premature (vehicles).
    pub residual: f64,
    /// Exemplars per pattern in rendered text.
    pub top_k: usize,
    /// When false, prompts carry only the fitness summary.
    pub enabled: bool,
}

impl Default for CafConfig {
    fn default() -> Self {
        Self {
            starvation_window: 120.0,
            demand_epsilon: 1.0,
            high_demand: 8.0,
            residual: 5.0,
            top_k: 5,
            enabled: true,
        }
    }
}

impl CafConfig {
    pub fn validate(&self) -> Result<(), CafConfigError> {
        if !(self.starvation_window.is_finite() && self.starvation_window > 0.0) {
            return Err(CafConfigError("starvation_window must be > 0".into()));
        }
        if !(self.demand_epsilon.is_finite() && self.high_demand.is_finite() && self.residual.is_finite()) {
            return Err(CafConfigError("demand bounds must be finite".into()));
        }
        if self.demand_epsilon >= self.high_demand {
            return Err(CafConfigError("demand_epsilon must be below high_demand".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    WastedGreenTime,
    PhaseStarvation,
    PrematurePhaseSwitch,
}

impl Pattern {
    pub const ALL: [Pattern; 3] = [Self::WastedGreenTime, Self::PhaseStarvation, Self::PrematurePhaseSwitch];

    pub fn name(self) -> &'static str {
        match self {
            Self::WastedGreenTime => "Wasted Green Time",
            Self::PhaseStarvation => "Phase Starvation",
            Self::PrematurePhaseSwitch => "Premature Phase Switch",
        }
    }

    fn directive(self) -> &'static str {
        match self {
            Self::WastedGreenTime => {
                "stop selecting phases whose queue is empty while others wait; guard fixed-phase rules with a queue or pressure threshold"
            }
            Self::PhaseStarvation => {
                "add a fairness override rule such as IF starvation_risk[i] THEN i ahead of pressure-greedy rules"
            }
            Self::PrematurePhaseSwitch => {
                "keep serving a phase while its queue is still large; raise the threshold that triggers a switch away"
            }
        }
    }
}

/// Values that triggered a match, anchored at one decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub time: u64,
    /// Categorical facts at the anchor decision.
    pub state: String,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Defect {
    pub pattern: Pattern,
    pub intersection: String,
    /// First and last decision index covered (equal for point defects).
    pub start: usize,
    pub end: usize,
    pub phase: usize,
    /// Seconds covered by the defect.
    pub duration: f64,
    pub evidence: Evidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DefectCounts {
    pub wasted_green: usize,
    pub starvation: usize,
    pub premature_switch: usize,
}

impl DefectCounts {
    pub fn get(&self, p: Pattern) -> usize {
        match p {
            Pattern::WastedGreenTime => self.wasted_green,
            Pattern::PhaseStarvation => self.starvation,
            Pattern::PrematurePhaseSwitch => self.premature_switch,
        }
    }

    pub fn total(&self) -> usize {
        self.wasted_green + self.starvation + self.premature_switch
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Critique {
    pub counts: DefectCounts,
    pub wasted_green: Vec<Defect>,
    pub starvation: Vec<Defect>,
    pub premature_switch: Vec<Defect>,
    pub worst_starvation: f64,
    pub wasted_green_seconds: f64,
    pub decisions: usize,
    pub top_k: usize,
}

impl Critique {
    pub fn defects(&self, p: Pattern) -> &[Defect] {
        match p {
            Pattern::WastedGreenTime => &self.wasted_green,
            Pattern::PhaseStarvation => &self.starvation,
            Pattern::PrematurePhaseSwitch => &self.premature_switch,
        }
    }

    pub fn all_defects(&self) -> impl Iterator<Item = &Defect> {
        self.wasted_green.iter().chain(&self.starvation).chain(&self.premature_switch)
    }

    /// Highest-ranked defects of one pattern, at most `top_k`.
    pub fn exemplars(&self, p: Pattern) -> Vec<&Defect> {
        let mut v: Vec<&Defect> = self.defects(p).iter().collect();
        let key = |d: &Defect| match p {
            Pattern::WastedGreenTime => d.evidence.values.get("other_queue").copied().unwrap_or(0.0),
            Pattern::PhaseStarvation => d.duration,
            Pattern::PrematurePhaseSwitch => d.evidence.values.get("residual_queue").copied().unwrap_or(0.0),
        };
        v.sort_by(|a, b| key(b).total_cmp(&key(a)));
        v.truncate(self.top_k);
        v
    }
}

/// Records of one intersection, in decision order.
fn by_intersection(log: &[DecisionRecord]) -> BTreeMap<&str, Vec<&DecisionRecord>> {
    let mut out: BTreeMap<&str, Vec<&DecisionRecord>> = BTreeMap::new();
    for r in log {
        out.entry(r.intersection.as_str()).or_default().push(r);
    }
    for records in out.values_mut() {
        records.sort_by_key(|r| r.t);
    }
    out
}

fn at(v: &[f64], i: usize) -> f64 {
    v.get(i).copied().unwrap_or(0.0)
}

/// Seconds a decision stays in force: the gap to the next decision, the
/// previous gap for the last one.
fn hold_time(records: &[&DecisionRecord], k: usize) -> f64 {
    if let Some(next) = records.get(k + 1) {
        next.time.saturating_sub(records[k].time) as f64
    } else if k > 0 {
        records[k].time.saturating_sub(records[k - 1].time) as f64
    } else {
        0.0
    }
}

fn evidence(r: &DecisionRecord, values: &[(&str, f64)]) -> Evidence {
    Evidence {
        time: r.time,
        state: r.facts.to_string(),
        values: values.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

fn wasted_green(records: &[&DecisionRecord], cfg: &CafConfig, out: &mut Vec<Defect>) {
    for (k, r) in records.iter().enumerate() {
        let i = r.action;
        let q = at(&r.facts.queue, i);
        if q >= cfg.demand_epsilon {
            continue;
        }
        let all_empty = r.facts.queue.iter().all(|&x| x < cfg.demand_epsilon);
        if all_empty && r.action == r.active {
            continue;
        }
        let other: f64 = r.facts.queue.iter().enumerate().filter(|&(p, _)| p != i).map(|(_, x)| x).sum();
        out.push(Defect {
            pattern: Pattern::WastedGreenTime,
            intersection: r.intersection.clone(),
            start: r.t,
            end: r.t,
            phase: i,
            duration: hold_time(records, k),
            evidence: evidence(
                r,
                &[("queue", q), ("pressure", at(&r.facts.pressure, i)), ("other_queue", other)],
            ),
        });
    }
}

/// First record inside the window ending at `k`, if the window lies fully in the log.
fn window_start(records: &[&DecisionRecord], k: usize, window: f64) -> Option<usize> {
    let end = records[k].time as f64;
    if (records[0].time as f64) > end - window {
        return None;
    }
    (0..=k).find(|&j| records[j].time as f64 >= end - window)
}

fn starvation(records: &[&DecisionRecord], cfg: &CafConfig, out: &mut Vec<Defect>) {
    let Some(n) = records.iter().map(|r| r.facts.phase_count()).max() else {
        return;
    };
    for i in 0..n {
        // (window start, matched decision) pairs in order.
        let mut hits: Vec<(usize, usize)> = Vec::new();
        for k in 0..records.len() {
            if at(&records[k].facts.pressure, i) <= cfg.high_demand {
                continue;
            }
            let Some(s) = window_start(records, k, cfg.starvation_window) else {
                continue;
            };
            if records[s..=k].iter().all(|r| r.action != i) {
                hits.push((s, k));
            }
        }
        let mut groups: Vec<(usize, usize, f64)> = Vec::new();
        for (s, k) in hits {
            let p = at(&records[k].facts.pressure, i);
            match groups.last_mut() {
                Some((_, end, peak)) if records[k].time as f64 - cfg.starvation_window <= records[*end].time as f64 => {
                    *end = k;
                    *peak = peak.max(p);
                }
                _ => groups.push((s, k, p)),
            }
        }
        for (s, k, peak) in groups {
            let end = records[k];
            let duration = (end.time - records[s].time) as f64;
            out.push(Defect {
                pattern: Pattern::PhaseStarvation,
                intersection: end.intersection.clone(),
                start: records[s].t,
                end: end.t,
                phase: i,
                duration,
                evidence: evidence(
                    end,
                    &[
                        ("pressure", at(&end.facts.pressure, i)),
                        ("peak_pressure", peak),
                        ("starvation_timer", at(&end.facts.starvation, i)),
                        ("unserved_seconds", duration),
                    ],
                ),
            });
        }
    }
}

fn premature(records: &[&DecisionRecord], cfg: &CafConfig, out: &mut Vec<Defect>) {
    for k in 1..records.len() {
        let (prev, cur) = (records[k - 1], records[k]);
        let i = prev.action;
        if cur.action == i {
            continue;
        }
        let p = at(&prev.facts.pressure, i);
        let q = at(&cur.facts.queue, i);
        if p > cfg.high_demand && q > cfg.residual {
            out.push(Defect {
                pattern: Pattern::PrematurePhaseSwitch,
                intersection: cur.intersection.clone(),
                start: cur.t,
                end: cur.t,
                phase: i,
                duration: hold_time(records, k),
                evidence: evidence(
                    cur,
                    &[
                        ("previous_pressure", p),
                        ("residual_queue", q),
                        ("switched_to", cur.action as f64),
                    ],
                ),
            });
        }
    }
}

/// Matches every pattern over a whole episode log.
pub fn analyze(log: &[DecisionRecord], cfg: &CafConfig) -> Critique {
    let mut c = Critique {
        decisions: log.len(),
        top_k: cfg.top_k,
        ..Critique::default()
    };
    for records in by_intersection(log).values() {
        wasted_green(records, cfg, &mut c.wasted_green);
        starvation(records, cfg, &mut c.starvation);
        premature(records, cfg, &mut c.premature_switch);
    }
    c.counts = DefectCounts {
        wasted_green: c.wasted_green.len(),
        starvation: c.starvation.len(),
        premature_switch: c.premature_switch.len(),
    };
    c.worst_starvation = c.starvation.iter().map(|d| d.duration).fold(0.0, f64::max);
    c.wasted_green_seconds = c.wasted_green.iter().map(|d| d.duration).sum();
    c
}

/// Re-checks a defect's rule directly against the log.
pub fn recheck(d: &Defect, log: &[DecisionRecord], cfg: &CafConfig) -> bool {
    let groups = by_intersection(log);
    let Some(records) = groups.get(d.intersection.as_str()) else {
        return false;
    };
    let find = |t: usize| records.iter().position(|r| r.t == t);
    let (Some(s), Some(e)) = (find(d.start), find(d.end)) else {
        return false;
    };
    let r = records[e];
    let i = d.phase;
    match d.pattern {
        Pattern::WastedGreenTime => {
            let empty = |x: f64| x < cfg.demand_epsilon;
            s == e
                && r.action == i
                && empty(at(&r.facts.queue, i))
                && !(r.action == r.active && r.facts.queue.iter().all(|&x| empty(x)))
        }
        Pattern::PhaseStarvation => {
            at(&r.facts.pressure, i) > cfg.high_demand
                && window_start(records, e, cfg.starvation_window).is_some_and(|w| w >= s)
                && records[s..=e].iter().all(|r| r.action != i)
        }
        Pattern::PrematurePhaseSwitch => {
            e >= 1 && s == e && {
                let prev = records[e - 1];
                prev.action == i
                    && r.action != i
                    && at(&prev.facts.pressure, i) > cfg.high_demand
                    && at(&r.facts.queue, i) > cfg.residual
            }
        }
    }
}

fn num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.2}")
    }
}

pub fn render_fitness(fitness: &MetricsReport) -> String {
    format!(
        "FITNESS: ATT {:.2} s | AQL {:.2} veh | AWT {:.2} s | completed {} | still in network {}\n",
        fitness.att, fitness.aql, fitness.awt, fitness.completed, fitness.remaining
    )
}

fn describe(d: &Defect) -> String {
    let v = |k: &str| d.evidence.values.get(k).copied().unwrap_or(0.0);
    match d.pattern {
        Pattern::WastedGreenTime => format!(
            "{} decision {} (t={} s): selected phase {} with queue {} while other phases held {} vehicles",
            d.intersection,
            d.start,
            d.evidence.time,
            d.phase,
            num(v("queue")),
            num(v("other_queue"))
        ),
        Pattern::PhaseStarvation => format!(
            "{} decisions {}..{} (until t={} s): phase {} unserved for {} s with pressure {} (peak {})",
            d.intersection,
            d.start,
            d.end,
            d.evidence.time,
            d.phase,
            num(d.duration),
            num(v("pressure")),
            num(v("peak_pressure"))
        ),
        Pattern::PrematurePhaseSwitch => format!(
            "{} decision {} (t={} s): left phase {} for phase {} after pressure {} with {} vehicles still queued",
            d.intersection,
            d.start,
            d.evidence.time,
            d.phase,
            num(v("switched_to")),
            num(v("previous_pressure")),
            num(v("residual_queue"))
        ),
    }
}

/// Deterministic critique text for a mutation prompt.
pub fn render_critique(c: &Critique, fitness: &MetricsReport) -> String {
    let mut s = render_fitness(fitness);
    if c.counts.total() == 0 {
        let _ = writeln!(s, "No defects matched across {} decisions.", c.decisions);
        return s;
    }
    let _ = writeln!(s, "DEFECTS ({} decisions analyzed)", c.decisions);
    for p in Pattern::ALL {
        let n = c.counts.get(p);
        let extra = match p {
            Pattern::WastedGreenTime if n > 0 => format!(" ({} s of green on empty phases)", num(c.wasted_green_seconds)),
            Pattern::PhaseStarvation if n > 0 => format!(" (worst {} s)", num(c.worst_starvation)),
            _ => String::new(),
        };
        let _ = writeln!(s, "- {}: {n}{extra}", p.name());
    }
    s.push_str("EXEMPLARS\n");
    for p in Pattern::ALL {
        for d in c.exemplars(p) {
            let _ = writeln!(s, "[{}] {}", p.name(), describe(d));
            let _ = writeln!(s, "  state: {}", d.evidence.state);
        }
    }
    s.push_str("DIRECTIVES\n");
    for p in Pattern::ALL.into_iter().filter(|p| c.counts.get(*p) > 0) {
        let _ = writeln!(s, "- {}: {}", p.name(), p.directive());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: usize, action: usize, active: usize, pressure: [f64; 4], queue: [f64; 4]) -> DecisionRecord {
        let mut facts = StructuredFacts::neutral(4);
        facts.pressure = pressure.to_vec();
        facts.queue = queue.to_vec();
        DecisionRecord {
            t,
            time: 30 * t as u64,
            intersection: "J0".into(),
            active,
            facts,
            action,
            deferred: false,
        }
    }

    #[test]
    fn wasted_green_hand_trace() {
        let busy = [4.0, 4.0, 4.0, 4.0];
        let mut log: Vec<DecisionRecord> = (0..5).map(|t| rec(t, t % 2, 0, busy, busy)).collect();
        log[3] = rec(3, 2, 1, [4.0, 4.0, 0.0, 4.0], [4.0, 4.0, 0.0, 4.0]);
        let c = analyze(&log, &CafConfig::default());
        assert_eq!(c.counts.wasted_green, 1);
        assert_eq!((c.wasted_green[0].start, c.wasted_green[0].phase), (3, 2));
        assert_eq!(c.wasted_green[0].evidence.values["other_queue"], 12.0);
        assert_eq!(c.wasted_green_seconds, 30.0);
    }

    #[test]
    fn holding_under_zero_demand_is_exempt() {
        let zero = [0.0; 4];
        let hold: Vec<DecisionRecord> = (0..4).map(|t| rec(t, 0, 0, zero, zero)).collect();
        assert_eq!(analyze(&hold, &CafConfig::default()).counts.wasted_green, 0);
        let cycle: Vec<DecisionRecord> = (0..4).map(|t| rec(t, (t + 1) % 4, t % 4, zero, zero)).collect();
        assert_eq!(analyze(&cycle, &CafConfig::default()).counts.wasted_green, 4);
    }

    #[test]
    fn starvation_hand_trace() {
        // Phase 1 never chosen over 0..150 s with pressure 20.
        let log: Vec<DecisionRecord> = (0..6)
            .map(|t| rec(t, if t % 2 == 0 { 0 } else { 2 }, 0, [5.0, 20.0, 3.0, 0.0], [5.0, 20.0, 3.0, 0.0]))
            .collect();
        let c = analyze(&log, &CafConfig::default());
        assert_eq!(c.counts.starvation, 1);
        let d = &c.starvation[0];
        assert_eq!((d.start, d.end, d.phase, d.duration), (0, 5, 1, 150.0));
        assert_eq!(c.worst_starvation, 150.0);
        assert!(recheck(d, &log, &CafConfig::default()));
        // A window that is not fully observed does not match.
        assert_eq!(analyze(&log[..4], &CafConfig::default()).counts.starvation, 0);
    }

    #[test]
    fn starvation_windows_split_by_service() {
        let p = [0.0, 20.0, 0.0, 0.0];
        let actions = [0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0];
        let log: Vec<DecisionRecord> = actions.iter().enumerate().map(|(t, &a)| rec(t, a, 0, p, p)).collect();
        let c = analyze(&log, &CafConfig::default());
        let spans: Vec<(usize, usize)> = c.starvation.iter().map(|d| (d.start, d.end)).collect();
        assert_eq!(spans, vec![(0, 4), (6, 10)]);
    }

    #[test]
    fn premature_switch_hand_trace() {
        let log = vec![
            rec(0, 0, 0, [12.0, 1.0, 0.0, 0.0], [12.0, 1.0, 0.0, 0.0]),
            rec(1, 1, 0, [9.0, 2.0, 0.0, 0.0], [7.0, 2.0, 0.0, 0.0]),
            rec(2, 0, 1, [9.0, 0.0, 0.0, 0.0], [9.0, 0.0, 0.0, 0.0]),
        ];
        let c = analyze(&log, &CafConfig::default());
        assert_eq!(c.counts.premature_switch, 1);
        let d = &c.premature_switch[0];
        assert_eq!((d.start, d.phase), (1, 0));
        assert_eq!(d.evidence.values["residual_queue"], 7.0);
        assert_eq!(d.evidence.values["switched_to"], 1.0);
    }

    #[test]
    fn empty_log_is_empty_critique() {
        let c = analyze(&[], &CafConfig::default());
        assert_eq!(c.counts, DefectCounts::default());
        let text = render_critique(&c, &MetricsReport::default());
        assert!(text.contains("No defects matched"));
    }

    #[test]
    fn rendering() {
        let p = [0.0, 20.0, 0.0, 0.0];
        let log: Vec<DecisionRecord> = (0..30).map(|t| rec(t, if t % 10 == 9 { 1 } else { 0 }, 0, p, p)).collect();
        let c = analyze(&log, &CafConfig::default());
        assert_eq!(c.counts.starvation, 3);
        let fitness = MetricsReport {
            att: 250.0,
            ..MetricsReport::default()
        };
        let text = render_critique(&c, &fitness);
        assert!(text.contains("Phase Starvation: 3 (worst 240 s)"), "{text}");
        assert!(text.contains("starvation_risk[i]"));
        assert!(text.contains("Congestion: Low"));
        assert_eq!(text, render_critique(&c, &fitness));

        let small = CafConfig {
            top_k: 1,
            ..CafConfig::default()
        };
        let c = analyze(&log, &small);
        assert_eq!(render_critique(&c, &fitness).matches("[Phase Starvation]").count(), 1);
    }

    #[test]
    fn config_validation() {
        assert!(CafConfig::default().validate().is_ok());
        let bad = CafConfig {
            demand_epsilon: 9.0,
            ..CafConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = CafConfig {
            starvation_window: 0.0,
            ..CafConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
