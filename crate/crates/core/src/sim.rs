//! Discrete-time point-queue simulator.
//!
//! Vehicles cross a link in its free-flow time and then join a vertical
//! queue on the lane serving their next movement. Each call to
//! [`Simulator::step`] applies one decision per intersection and advances the
//! clock by one decision interval of 1 s micro-ticks. A micro-tick at time
//! `t` runs, in order:
//!
//! 1. signal transitions whose yellow has elapsed (`phase-switch` at `t`);
//! 2. stop-line arrivals (queue join, or `vehicle-exit` on terminal links);
//! 3. discharge of green movements, up to the saturation flow each;
//! 4. boundary insertions from the flow schedule (`vehicle-enter`);
//! 5. stationary accounting for every queued vehicle (`vehicle-stop` the
//!    first tick a vehicle stays queued).

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{EventKind, SimEvent};
use crate::metrics::MetricsReport;
use crate::network::{Arrival, Axis, FlowSpec, RoadNetwork};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Decision interval in seconds.
    pub interval: u32,
    /// Vehicles per second per green movement.
    pub saturation_flow: u32,
    /// Overrides every intersection's minimum green when set.
    pub min_green: Option<u32>,
    /// Overrides every intersection's yellow when set.
    pub yellow: Option<u32>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            interval: 30,
            saturation_flow: 1,
            min_green: None,
            yellow: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.interval == 0 {
            return Err(SimError::Config("interval must be >= 1 s".into()));
        }
        if self.saturation_flow == 0 {
            return Err(SimError::Config("saturation_flow must be >= 1".into()));
        }
        if self.min_green == Some(0) {
            return Err(SimError::Config("min_green must be >= 1 s".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("intersection {intersection}: phase {phase} out of range (0..{count})")]
    InvalidPhase {
        intersection: String,
        phase: usize,
        count: usize,
    },
    #[error("invalid simulator config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: usize,
    pub flow: usize,
    /// Index into the flow's route of the link currently occupied.
    pub route_pos: usize,
    /// Global lane index on the current link.
    pub lane: usize,
    pub entered: u64,
    /// Time the vehicle reaches the end of its current link.
    pub arrive_at: u64,
    pub queued_since: Option<u64>,
    pub stopped: bool,
    /// Accumulated stationary seconds.
    pub stationary: u64,
    pub exited: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LaneState {
    /// Vehicles travelling toward the stop line, in arrival order.
    pub moving: VecDeque<usize>,
    /// Vehicles waiting at the stop line.
    pub queue: VecDeque<usize>,
}

impl LaneState {
    pub fn occupancy(&self) -> usize {
        self.moving.len() + self.queue.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalState {
    pub active: usize,
    /// Green seconds since the active phase was switched in.
    pub elapsed: u64,
    pub yellow_remaining: u32,
    /// Target of a switch in progress.
    pub pending: Option<usize>,
}

impl SignalState {
    pub fn in_yellow(&self) -> bool {
        self.pending.is_some()
    }
}

/// Complete simulator state.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub clock: u64,
    pub lanes: Vec<LaneState>,
    /// First global lane index of each link.
    pub lane_offset: Vec<usize>,
    /// Owning link of each global lane.
    pub lane_link: Vec<usize>,
    pub vehicles: Vec<Vehicle>,
    pub signals: Vec<SignalState>,
    /// Vehicles waiting to be admitted, per entry link (flow indices).
    pub backlog: Vec<VecDeque<usize>>,
    pub entered: u64,
    pub exited: u64,
    pub stationary_vehicle_seconds: u64,
    pub ticks: u64,
}

impl SimState {
    pub fn lane_index(&self, link: usize, lane: u32) -> usize {
        self.lane_offset[link] + lane as usize
    }

    pub fn lane_queue(&self, link: usize, lane: u32) -> usize {
        self.lanes[self.lane_index(link, lane)].queue.len()
    }

    /// Queued vehicles on a link, summed over its lanes.
    pub fn link_queue(&self, net: &RoadNetwork, link: usize) -> usize {
        let start = self.lane_offset[link];
        (start..start + net.links[link].lanes as usize)
            .map(|l| self.lanes[l].queue.len())
            .sum()
    }

    /// Vehicles currently on links (travelling or queued).
    pub fn in_network(&self) -> u64 {
        self.lanes.iter().map(|l| l.occupancy() as u64).sum()
    }

    pub fn backlog_len(&self) -> usize {
        self.backlog.iter().map(VecDeque::len).sum()
    }

    /// Metrics derived from the state's own accumulators.
    pub fn report(&self) -> MetricsReport {
        let mut travel = 0u64;
        let mut stationary = 0u64;
        for v in &self.vehicles {
            stationary += v.stationary;
            if let Some(x) = v.exited {
                travel += x - v.entered;
            }
        }
        let mean = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        MetricsReport {
            att: mean(travel, self.exited),
            aql: mean(self.stationary_vehicle_seconds, self.ticks),
            awt: mean(stationary, self.entered),
            completed: self.exited,
            remaining: self.entered - self.exited,
        }
    }

    /// Per-phase aggregates for one intersection.
    pub fn intersection_view(&self, net: &RoadNetwork, intersection: usize) -> IntersectionView {
        let inter = &net.intersections[intersection];
        let sig = &self.signals[intersection];
        let mut view = IntersectionView {
            clock: self.clock,
            active_phase: sig.pending.unwrap_or(sig.active),
            pressure: Vec::with_capacity(inter.phases.len()),
            queue: Vec::with_capacity(inter.phases.len()),
            max_wait: Vec::with_capacity(inter.phases.len()),
            axes: inter.phases.iter().map(|p| p.axis).collect(),
        };
        for (p, phase) in inter.phases.iter().enumerate() {
            view.pressure
                .push(phase_pressure(self, net, intersection, p).expect("valid phase"));
            let mut lanes: Vec<usize> = phase
                .movements
                .iter()
                .map(|&m| {
                    let mv = &inter.movements[m];
                    self.lane_index(mv.from_link, mv.lane)
                })
                .collect();
            lanes.sort_unstable();
            lanes.dedup();
            let queue: usize = lanes.iter().map(|&l| self.lanes[l].queue.len()).sum();
            let wait = lanes
                .iter()
                .flat_map(|&l| self.lanes[l].queue.iter())
                .filter_map(|&v| self.vehicles[v].queued_since)
                .map(|since| self.clock - since)
                .max()
                .unwrap_or(0);
            view.queue.push(queue as f64);
            view.max_wait.push(wait as f64);
        }
        view
    }
}

/// Numeric per-phase snapshot of one intersection, the input to state abstraction.
#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionView {
    pub clock: u64,
    /// Green phase, or the target of a switch in progress.
    pub active_phase: usize,
    pub pressure: Vec<f64>,
    pub queue: Vec<f64>,
    pub max_wait: Vec<f64>,
    pub axes: Vec<Option<Axis>>,
}

/// Pressure of one movement: upstream lane queue minus the mean per-lane
/// queue of the downstream link (zero when the downstream link exits the network).
pub fn movement_pressure(state: &SimState, net: &RoadNetwork, intersection: usize, movement: usize) -> f64 {
    let mv = &net.intersections[intersection].movements[movement];
    let upstream = state.lane_queue(mv.from_link, mv.lane) as f64;
    let out = &net.links[mv.to_link];
    let downstream = if out.terminal {
        0.0
    } else {
        state.link_queue(net, mv.to_link) as f64 / out.lanes as f64
    };
    upstream - downstream
}

/// Signed pressure of a phase: the sum of its movements' pressures.
pub fn phase_pressure(
    state: &SimState,
    net: &RoadNetwork,
    intersection: usize,
    phase: usize,
) -> Result<f64, SimError> {
    let inter = &net.intersections[intersection];
    let p = inter.phases.get(phase).ok_or_else(|| SimError::InvalidPhase {
        intersection: inter.id.clone(),
        phase,
        count: inter.phases.len(),
    })?;
    Ok(p
        .movements
        .iter()
        .map(|&m| movement_pressure(state, net, intersection, m))
        .sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub events: Vec<SimEvent>,
    /// Per intersection: a requested switch was held back by min-green.
    pub deferred: Vec<bool>,
}

pub struct Simulator<'a> {
    net: &'a RoadNetwork,
    flows: &'a FlowSpec,
    config: SimConfig,
    state: SimState,
    /// (entry tick, flow) sorted by tick then flow.
    schedule: Vec<(u64, usize)>,
    next_arrival: usize,
    min_green: Vec<u32>,
    yellow: Vec<u32>,
}

impl<'a> Simulator<'a> {
    pub fn new(
        net: &'a RoadNetwork,
        flows: &'a FlowSpec,
        config: SimConfig,
        seed: u64,
    ) -> Result<Self, SimError> {
        config.validate()?;
        let mut lane_offset = Vec::with_capacity(net.links.len());
        let mut lane_link = Vec::new();
        for (i, l) in net.links.iter().enumerate() {
            lane_offset.push(lane_link.len());
            lane_link.extend(std::iter::repeat_n(i, l.lanes as usize));
        }
        let min_green: Vec<u32> = net
            .intersections
            .iter()
            .map(|i| config.min_green.unwrap_or(i.min_green))
            .collect();
        let yellow = net
            .intersections
            .iter()
            .map(|i| config.yellow.unwrap_or(i.yellow))
            .collect();
        let signals = min_green
            .iter()
            .map(|&g| SignalState {
                active: 0,
                elapsed: g as u64,
                yellow_remaining: 0,
                pending: None,
            })
            .collect();
        let state = SimState {
            clock: 0,
            lanes: vec![LaneState::default(); lane_link.len()],
            lane_offset,
            lane_link,
            vehicles: Vec::new(),
            signals,
            backlog: vec![VecDeque::new(); net.links.len()],
            entered: 0,
            exited: 0,
            stationary_vehicle_seconds: 0,
            ticks: 0,
        };
        Ok(Self {
            net,
            flows,
            config,
            state,
            schedule: arrival_schedule(flows, seed),
            next_arrival: 0,
            min_green,
            yellow,
        })
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    /// Mutable access for test fixtures that seed queues directly.
    pub fn state_mut(&mut self) -> &mut SimState {
        &mut self.state
    }

    pub fn network(&self) -> &RoadNetwork {
        self.net
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Places a vehicle of `flow` at the stop line of its first link, as if
    /// it had arrived at `since`. Fixture helper.
    pub fn inject_queued(&mut self, flow: usize, since: u64) -> Option<usize> {
        let route = &self.flows.flows[flow].route;
        let lane = self.pick_lane(route, 0)?;
        let id = self.state.vehicles.len();
        self.state.vehicles.push(Vehicle {
            id,
            flow,
            route_pos: 0,
            lane,
            entered: since,
            arrive_at: since,
            queued_since: Some(since),
            stopped: true,
            stationary: 0,
            exited: None,
        });
        self.state.lanes[lane].queue.push_back(id);
        self.state.entered += 1;
        Some(id)
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<StepOutcome, SimError> {
        self.step_observed(actions, &mut |_| {})
    }

    /// Like [`step`](Self::step), calling `observer` after every micro-tick.
    pub fn step_observed(
        &mut self,
        actions: &[usize],
        observer: &mut dyn FnMut(&SimState),
    ) -> Result<StepOutcome, SimError> {
        let net = self.net;
        if actions.len() != net.intersections.len() {
            return Err(SimError::ActionCount {
                expected: net.intersections.len(),
                got: actions.len(),
            });
        }
        for (i, &a) in actions.iter().enumerate() {
            let inter = &net.intersections[i];
            if a >= inter.phases.len() {
                return Err(SimError::InvalidPhase {
                    intersection: inter.id.clone(),
                    phase: a,
                    count: inter.phases.len(),
                });
            }
        }

        let mut events = Vec::new();
        let mut deferred = vec![false; actions.len()];
        let now = self.state.clock;
        for (i, &target) in actions.iter().enumerate() {
            let sig = &mut self.state.signals[i];
            if let Some(p) = sig.pending {
                deferred[i] = target != p;
                continue;
            }
            if target == sig.active {
                continue;
            }
            if sig.elapsed < self.min_green[i] as u64 {
                deferred[i] = true;
                events.push(SimEvent {
                    kind: EventKind::PhaseSwitchDeferred,
                    t: now,
                    id: net.intersections[i].id.clone(),
                    detail: format!(
                        "{}->{} held: green {}s < min {}s",
                        sig.active, target, sig.elapsed, self.min_green[i]
                    ),
                });
                continue;
            }
            sig.pending = Some(target);
            sig.yellow_remaining = self.yellow[i];
        }

        for _ in 0..self.config.interval {
            self.tick(&mut events);
            observer(&self.state);
        }
        Ok(StepOutcome { events, deferred })
    }

    /// Lane on `route[pos]` for a vehicle about to enter it, or `None` when
    /// every eligible lane is at capacity.
    fn pick_lane(&self, route: &[usize], pos: usize) -> Option<usize> {
        let link = route[pos];
        let l = &self.net.links[link];
        let cap = l.capacity as usize;
        let best = |lanes: &mut dyn Iterator<Item = u32>| {
            lanes
                .map(|lane| self.state.lane_index(link, lane))
                .filter(|&g| self.state.lanes[g].occupancy() < cap)
                .min_by_key(|&g| (self.state.lanes[g].occupancy(), g))
        };
        if l.terminal {
            return best(&mut (0..l.lanes));
        }
        let node = self.net.link_sink(link)?;
        let next = *route.get(pos + 1)?;
        let inter = &self.net.intersections[node];
        best(&mut self
            .net
            .movements_between(node, link, next)
            .map(|m| inter.movements[m].lane))
    }

    fn tick(&mut self, events: &mut Vec<SimEvent>) {
        let net = self.net;
        let t = self.state.clock;

        for (i, sig) in self.state.signals.iter_mut().enumerate() {
            if sig.yellow_remaining == 0 {
                if let Some(p) = sig.pending.take() {
                    events.push(SimEvent {
                        kind: EventKind::PhaseSwitch,
                        t,
                        id: net.intersections[i].id.clone(),
                        detail: format!("{}->{}", sig.active, p),
                    });
                    sig.active = p;
                    sig.elapsed = 0;
                }
            }
        }

        for lane in 0..self.state.lanes.len() {
            let link = self.state.lane_link[lane];
            let terminal = net.links[link].terminal;
            while let Some(&v) = self.state.lanes[lane].moving.front() {
                if self.state.vehicles[v].arrive_at > t {
                    break;
                }
                self.state.lanes[lane].moving.pop_front();
                let veh = &mut self.state.vehicles[v];
                if terminal {
                    veh.exited = Some(t);
                    self.state.exited += 1;
                    events.push(SimEvent {
                        kind: EventKind::VehicleExit,
                        t,
                        id: format!("v{v}"),
                        detail: net.links[link].id.clone(),
                    });
                } else {
                    veh.queued_since = Some(t);
                    veh.stopped = false;
                    self.state.lanes[lane].queue.push_back(v);
                }
            }
        }

        let sat = self.config.saturation_flow;
        for i in 0..net.intersections.len() {
            let sig = &self.state.signals[i];
            if sig.in_yellow() {
                continue;
            }
            let inter = &net.intersections[i];
            for &m in &inter.phases[sig.active].movements {
                for _ in 0..sat {
                    if !self.discharge_one(i, m, t, events) {
                        break;
                    }
                }
            }
        }

        while let Some(&(tick, flow)) = self.schedule.get(self.next_arrival) {
            if tick > t {
                break;
            }
            let first = self.flows.flows[flow].route[0];
            self.state.backlog[first].push_back(flow);
            self.next_arrival += 1;
        }
        for link in 0..self.state.backlog.len() {
            while let Some(&flow) = self.state.backlog[link].front() {
                let route = &self.flows.flows[flow].route;
                let Some(lane) = self.pick_lane(route, 0) else {
                    break;
                };
                self.state.backlog[link].pop_front();
                let id = self.state.vehicles.len();
                self.state.vehicles.push(Vehicle {
                    id,
                    flow,
                    route_pos: 0,
                    lane,
                    entered: t,
                    arrive_at: t + net.links[link].free_flow as u64,
                    queued_since: None,
                    stopped: false,
                    stationary: 0,
                    exited: None,
                });
                self.state.lanes[lane].moving.push_back(id);
                self.state.entered += 1;
                events.push(SimEvent {
                    kind: EventKind::VehicleEnter,
                    t,
                    id: format!("v{id}"),
                    detail: net.links[link].id.clone(),
                });
            }
        }

        for lane in 0..self.state.lanes.len() {
            let link = self.state.lane_link[lane];
            for &v in &self.state.lanes[lane].queue {
                let veh = &mut self.state.vehicles[v];
                if !veh.stopped {
                    veh.stopped = true;
                    events.push(SimEvent {
                        kind: EventKind::VehicleStop,
                        t,
                        id: format!("v{v}"),
                        detail: net.links[link].id.clone(),
                    });
                }
                veh.stationary += 1;
                self.state.stationary_vehicle_seconds += 1;
            }
        }

        for sig in &mut self.state.signals {
            if sig.yellow_remaining > 0 {
                sig.yellow_remaining -= 1;
            } else if sig.pending.is_none() {
                sig.elapsed += 1;
            }
        }
        self.state.ticks += 1;
        self.state.clock += 1;
    }

    /// Moves the head of movement `m`'s lane through the intersection if it
    /// is bound for the movement's outgoing link and that link has room.
    fn discharge_one(&mut self, intersection: usize, m: usize, t: u64, events: &mut Vec<SimEvent>) -> bool {
        let net = self.net;
        let mv = &net.intersections[intersection].movements[m];
        let lane = self.state.lane_index(mv.from_link, mv.lane);
        let Some(&v) = self.state.lanes[lane].queue.front() else {
            return false;
        };
        let veh = &self.state.vehicles[v];
        let route = &self.flows.flows[veh.flow].route;
        let pos = veh.route_pos;
        if route.get(pos + 1) != Some(&mv.to_link) {
            return false;
        }
        let Some(next_lane) = self.pick_lane(route, pos + 1) else {
            return false;
        };
        self.state.lanes[lane].queue.pop_front();
        let veh = &mut self.state.vehicles[v];
        veh.route_pos = pos + 1;
        veh.lane = next_lane;
        veh.arrive_at = t + net.links[mv.to_link].free_flow as u64;
        veh.queued_since = None;
        veh.stopped = false;
        self.state.lanes[next_lane].moving.push_back(v);
        events.push(SimEvent {
            kind: EventKind::VehicleGo,
            t,
            id: format!("v{v}"),
            detail: net.links[mv.from_link].id.clone(),
        });
        true
    }
}

/// Entry ticks for every flow. Each flow draws from its own ChaCha stream of
/// `seed`, so flows do not perturb each other's arrivals.
fn arrival_schedule(flows: &FlowSpec, seed: u64) -> Vec<(u64, usize)> {
    let mut out = Vec::new();
    for (f, flow) in flows.flows.iter().enumerate() {
        match &flow.arrival {
            Arrival::Schedule { times } => {
                out.extend(times.iter().map(|&t| (t.floor() as u64, f)));
            }
            Arrival::Poisson { rate } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(f as u64 + 1);
                let exp = Exp::new(*rate).expect("validated rate");
                let mut t = flow.start;
                loop {
                    t += exp.sample(&mut rng);
                    if t >= flow.end {
                        break;
                    }
                    out.push((t.floor() as u64, f));
                }
            }
        }
    }
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::compute_metrics;
    use crate::network::{validate_flows, FlowEntry};
    use crate::scenario::single_intersection_doc;

    fn net() -> RoadNetwork {
        RoadNetwork::from_doc(single_intersection_doc()).unwrap()
    }

    fn flows(net: &RoadNetwork, entries: Vec<FlowEntry>) -> FlowSpec {
        validate_flows(&entries, net).unwrap()
    }

    fn schedule(route: &[&str], times: Vec<f64>) -> FlowEntry {
        FlowEntry {
            route: route.iter().map(|s| s.to_string()).collect(),
            arrival: Arrival::Schedule { times },
            start: 0.0,
            end: 10_000.0,
        }
    }

    fn count(events: &[SimEvent], kind: EventKind) -> usize {
        events.iter().filter(|e| e.kind == kind).count()
    }

    #[test]
    fn five_queued_vehicles_discharge_in_one_interval() {
        let net = net();
        let fl = flows(&net, vec![schedule(&["N_in", "S_out"], vec![])]);
        let mut sim = Simulator::new(&net, &fl, SimConfig::default(), 0).unwrap();
        for _ in 0..5 {
            sim.inject_queued(0, 0).unwrap();
        }
        let n_in = net.link("N_in").unwrap();
        assert_eq!(sim.state().lane_queue(n_in, 1), 5);
        // Phase 0 (NS-through) is green initially.
        let out = sim.step(&[0]).unwrap();
        assert_eq!(count(&out.events, EventKind::VehicleGo), 5);
        assert_eq!(sim.state().lane_queue(n_in, 1), 0);
        assert_eq!(sim.state().clock, 30);
        // One per second: the k-th vehicle leaves at t = k.
        let go_times: Vec<u64> = out
            .events
            .iter()
            .filter(|e| e.kind == EventKind::VehicleGo)
            .map(|e| e.t)
            .collect();
        assert_eq!(go_times, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn holding_phase_on_empty_network_is_fixed_point() {
        let net = net();
        let fl = FlowSpec::empty();
        let mut sim = Simulator::new(&net, &fl, SimConfig::default(), 0).unwrap();
        let before = sim.state().lanes.clone();
        let out = sim.step(&[0]).unwrap();
        assert!(out.events.is_empty());
        assert_eq!(sim.state().lanes, before);
        assert_eq!(sim.state().clock, 30);
    }

    #[test]
    fn yellow_blocks_discharge_then_switches() {
        let net = net();
        let fl = flows(&net, vec![schedule(&["E_in", "W_out"], vec![])]);
        let mut sim = Simulator::new(&net, &fl, SimConfig::default(), 0).unwrap();
        for _ in 0..10 {
            sim.inject_queued(0, 0).unwrap();
        }
        let out = sim.step(&[1]).unwrap();
        let switch: Vec<&SimEvent> = out
            .events
            .iter()
            .filter(|e| e.kind == EventKind::PhaseSwitch)
            .collect();
        assert_eq!(switch.len(), 1);
        assert_eq!(switch[0].t, 5);
        assert_eq!(switch[0].detail, "0->1");
        let first_go = out
            .events
            .iter()
            .find(|e| e.kind == EventKind::VehicleGo)
            .unwrap();
        assert_eq!(first_go.t, 5);
        assert_eq!(count(&out.events, EventKind::VehicleGo), 10);
    }

    #[test]
    fn min_green_defers_switch() {
        let net = net();
        let fl = FlowSpec::empty();
        let cfg = SimConfig {
            min_green: Some(40),
            ..SimConfig::default()
        };
        let mut sim = Simulator::new(&net, &fl, cfg, 0).unwrap();
        let out = sim.step(&[1]).unwrap();
        assert_eq!(out.deferred, vec![false]);
        // Phase 1 green since t=5: 25 s < 40 s.
        let out = sim.step(&[2]).unwrap();
        assert_eq!(out.deferred, vec![true]);
        assert_eq!(count(&out.events, EventKind::PhaseSwitchDeferred), 1);
        assert_eq!(sim.state().signals[0].active, 1);
        let out = sim.step(&[2]).unwrap();
        assert_eq!(out.deferred, vec![false]);
        assert_eq!(sim.state().signals[0].active, 2);
    }

    #[test]
    fn invalid_phase_is_hard_error() {
        let net = net();
        let fl = FlowSpec::empty();
        let mut sim = Simulator::new(&net, &fl, SimConfig::default(), 0).unwrap();
        assert!(matches!(sim.step(&[4]), Err(SimError::InvalidPhase { phase: 4, .. })));
        assert!(matches!(sim.step(&[]), Err(SimError::ActionCount { .. })));
    }

    #[test]
    fn pressure_examples() {
        let net = net();
        let fl = flows(
            &net,
            vec![
                schedule(&["N_in", "S_out"], vec![]),
                schedule(&["S_in", "N_out"], vec![]),
            ],
        );
        let mut sim = Simulator::new(&net, &fl, SimConfig::default(), 0).unwrap();
        assert_eq!(phase_pressure(sim.state(), &net, 0, 0).unwrap(), 0.0);
        for _ in 0..5 {
            sim.inject_queued(0, 0);
        }
        for _ in 0..3 {
            sim.inject_queued(1, 0);
        }
        assert_eq!(phase_pressure(sim.state(), &net, 0, 0).unwrap(), 8.0);
        for p in 1..4 {
            assert_eq!(phase_pressure(sim.state(), &net, 0, p).unwrap(), 0.0);
        }
        assert!(phase_pressure(sim.state(), &net, 0, 9).is_err());
    }

    #[test]
    fn pressure_goes_negative_with_downstream_queue() {
        // 1x2 grid: J0_0 -> J0_1 internal link has 3 lanes.
        let (doc, _) = crate::scenario::generate(crate::scenario::DemandKind::Symmetric, 1, 2, 0).unwrap();
        let net = RoadNetwork::from_doc(doc).unwrap();
        let fl = flows(&net, vec![schedule(&["B_W0>J0_0", "J0_0>J0_1", "J0_1>B_E0"], vec![])]);
        let mut sim = Simulator::new(&net, &fl, SimConfig::default(), 0).unwrap();
        sim.inject_queued(0, 0);
        sim.inject_queued(0, 0);
        // 15 vehicles queued across the 3 lanes of the internal link: mean 5.
        let internal = net.link("J0_0>J0_1").unwrap();
        for lane in 0..3u32 {
            for _ in 0..5 {
                let id = sim.state().vehicles.len();
                let state = sim.state_mut();
                let g = state.lane_index(internal, lane);
                state.vehicles.push(Vehicle {
                    id,
                    flow: 0,
                    route_pos: 1,
                    lane: g,
                    entered: 0,
                    arrive_at: 0,
                    queued_since: Some(0),
                    stopped: true,
                    stationary: 0,
                    exited: None,
                });
                state.lanes[g].queue.push_back(id);
            }
        }
        // W_T at J0_0 feeds the internal link: upstream 2, downstream mean 5.
        let j = 0;
        let w_t = net.intersections[j]
            .movements
            .iter()
            .position(|m| m.id == "W_T")
            .unwrap();
        assert_eq!(movement_pressure(sim.state(), &net, j, w_t), -3.0);
    }

    #[test]
    fn vehicles_traverse_and_exit() {
        let net = net();
        let fl = flows(&net, vec![schedule(&["N_in", "S_out"], vec![0.0, 0.5, 3.0])]);
        let mut sim = Simulator::new(&net, &fl, SimConfig::default(), 0).unwrap();
        let mut events = Vec::new();
        for _ in 0..3 {
            events.extend(sim.step(&[0]).unwrap().events);
        }
        assert_eq!(count(&events, EventKind::VehicleEnter), 3);
        assert_eq!(count(&events, EventKind::VehicleExit), 3);
        // Free-flow 15 s in, 15 s out; the second vehicle queues behind the first for 1 s.
        let exits: Vec<u64> = events
            .iter()
            .filter(|e| e.kind == EventKind::VehicleExit)
            .map(|e| e.t)
            .collect();
        assert_eq!(exits, vec![30, 31, 33]);
        let report = compute_metrics(&events, 90);
        assert_eq!(report, sim.state().report());
        assert_eq!(report.completed, 3);
    }

    #[test]
    fn capacity_blocks_admission() {
        let mut doc = single_intersection_doc();
        for l in &mut doc.links {
            l.capacity = 2;
        }
        let net = RoadNetwork::from_doc(doc).unwrap();
        let fl = flows(&net, vec![schedule(&["E_in", "W_out"], vec![0.0; 6])]);
        let mut sim = Simulator::new(&net, &fl, SimConfig::default(), 0).unwrap();
        // EW red throughout: only two vehicles fit on the through lane.
        sim.step(&[0]).unwrap();
        assert_eq!(sim.state().entered, 2);
        assert_eq!(sim.state().backlog_len(), 4);
        let e_in = net.link("E_in").unwrap();
        assert!(sim.state().lane_queue(e_in, 1) <= 2);
    }
}
