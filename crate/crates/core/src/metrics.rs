use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::events::{EventKind, SimEvent};

/// Episode-level evaluation metrics.
///
/// `att` is the mean entry-to-exit time of completed vehicles (0 when none
/// completed). `aql` is the time-average of stationary vehicles across all
/// lanes. `awt` averages accumulated stationary time over every vehicle that
/// entered, including those still in the network at the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub att: f64,
    pub aql: f64,
    pub awt: f64,
    pub completed: u64,
    pub remaining: u64,
}

impl MetricsReport {
    pub fn entered(&self) -> u64 {
        self.completed + self.remaining
    }
}

#[derive(Default)]
struct Trace {
    entered: Option<u64>,
    exited: Option<u64>,
    stopped_since: Option<u64>,
    stationary: u64,
}

/// Recomputes metrics from an episode's event stream.
pub fn compute_metrics(events: &[SimEvent], horizon: u64) -> MetricsReport {
    let mut vehicles: BTreeMap<&str, Trace> = BTreeMap::new();
    for e in events {
        let trace = match e.kind {
            EventKind::PhaseSwitch | EventKind::PhaseSwitchDeferred => continue,
            _ => vehicles.entry(e.id.as_str()).or_default(),
        };
        match e.kind {
            EventKind::VehicleEnter => trace.entered = Some(e.t),
            EventKind::VehicleExit => trace.exited = Some(e.t),
            EventKind::VehicleStop => trace.stopped_since = Some(e.t),
            EventKind::VehicleGo => {
                if let Some(s) = trace.stopped_since.take() {
                    trace.stationary += e.t - s;
                }
            }
            EventKind::PhaseSwitch | EventKind::PhaseSwitchDeferred => unreachable!(),
        }
    }

    let (mut entered, mut completed) = (0u64, 0u64);
    let (mut travel, mut stationary) = (0u64, 0u64);
    for trace in vehicles.values_mut() {
        let Some(enter) = trace.entered else { continue };
        entered += 1;
        if let Some(s) = trace.stopped_since.take() {
            trace.stationary += horizon.saturating_sub(s);
        }
        stationary += trace.stationary;
        if let Some(exit) = trace.exited {
            completed += 1;
            travel += exit - enter;
        }
    }
    let mean = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    MetricsReport {
        att: mean(travel, completed),
        aql: mean(stationary, horizon),
        awt: mean(stationary, entered),
        completed,
        remaining: entered - completed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(kind: EventKind, t: u64, id: &str) -> SimEvent {
        SimEvent {
            kind,
            t,
            id: id.into(),
            detail: String::new(),
        }
    }

    #[test]
    fn single_vehicle() {
        let events = vec![
            ev(EventKind::VehicleEnter, 0, "v0"),
            ev(EventKind::VehicleStop, 20, "v0"),
            ev(EventKind::VehicleGo, 50, "v0"),
            ev(EventKind::VehicleExit, 100, "v0"),
        ];
        let r = compute_metrics(&events, 100);
        assert_eq!(r.att, 100.0);
        assert_eq!(r.awt, 30.0);
        assert_eq!(r.aql, 0.3);
        assert_eq!((r.completed, r.remaining), (1, 0));
    }

    #[test]
    fn att_is_arithmetic_mean() {
        let events = vec![
            ev(EventKind::VehicleEnter, 0, "a"),
            ev(EventKind::VehicleEnter, 10, "b"),
            ev(EventKind::VehicleExit, 80, "a"),
            ev(EventKind::VehicleExit, 130, "b"),
        ];
        assert_eq!(compute_metrics(&events, 200).att, 100.0);
    }

    #[test]
    fn no_exits_is_vacuous() {
        let events = vec![ev(EventKind::VehicleEnter, 0, "a"), ev(EventKind::VehicleStop, 5, "a")];
        let r = compute_metrics(&events, 50);
        assert_eq!(r.completed, 0);
        assert_eq!(r.att, 0.0);
        // Still-queued vehicles count toward the wait average.
        assert_eq!(r.awt, 45.0);
        assert_eq!(r.remaining, 1);
        assert_eq!(compute_metrics(&[], 3600), MetricsReport::default());
    }
}
