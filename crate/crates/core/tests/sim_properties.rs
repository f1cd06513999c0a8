mod common;

use std::collections::HashMap;

use proptest::prelude::*;
use tpet_core::baselines::{FixedTimeController, MaxPressureController, RandomController};
use tpet_core::episode::{run_episode, run_episode_observed, Controller, EpisodeResult, EpisodeSettings};
use tpet_core::events::EventKind;
use tpet_core::network::{Arrival, FlowSpec, RoadNetwork};
use tpet_core::scenario::{generate, DemandKind};
use tpet_core::sim::{phase_pressure, SimState};

use common::{bundled, scenario_dir, BUNDLED};

fn controller(kind: usize, seed: u64) -> Box<dyn Controller> {
    match kind % 3 {
        0 => Box::new(RandomController::new(seed)),
        1 => Box::new(FixedTimeController::round_robin()),
        _ => Box::new(MaxPressureController),
    }
}

fn episode(net: &RoadNetwork, flows: &FlowSpec, kind: usize, seed: u64) -> EpisodeResult {
    run_episode(net, flows, controller(kind, seed).as_mut(), &EpisodeSettings::default(), seed).unwrap()
}

/// Pressure recomputed from raw lane contents.
fn brute_pressure(state: &SimState, net: &RoadNetwork, inter: usize, phase: usize) -> f64 {
    let i = &net.intersections[inter];
    i.phases[phase]
        .movements
        .iter()
        .map(|&m| {
            let mv = &i.movements[m];
            let up_lane = state.lane_offset[mv.from_link] + mv.lane as usize;
            let up = state.lanes[up_lane].queue.len() as f64;
            let down = &net.links[mv.to_link];
            let down_mean = if down.terminal {
                0.0
            } else {
                let start = state.lane_offset[mv.to_link];
                let total: usize = (start..start + down.lanes as usize).map(|l| state.lanes[l].queue.len()).sum();
                total as f64 / down.lanes as f64
            };
            up - down_mean
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn vehicles_are_conserved_every_tick(scenario in 0..BUNDLED.len(), kind in 0usize..3, seed in any::<u64>()) {
        let (net, flows) = bundled(BUNDLED[scenario]);
        let mut c = controller(kind, seed);
        let mut violations = Vec::new();
        let mut ticks = 0u64;
        run_episode_observed(&net, &flows, c.as_mut(), &EpisodeSettings::default(), seed, &mut |s| {
            ticks += 1;
            let live = s.vehicles.iter().filter(|v| v.exited.is_none()).count() as u64;
            if s.entered != s.exited + s.in_network() || live != s.in_network() {
                violations.push(s.clock);
            }
        })
        .unwrap();
        prop_assert_eq!(ticks, 3600);
        prop_assert!(violations.is_empty(), "unbalanced at {:?}", &violations[..violations.len().min(5)]);
    }

    #[test]
    fn same_seed_same_logs(scenario in 0..BUNDLED.len(), kind in 0usize..3, seed in any::<u64>()) {
        let (net, flows) = bundled(BUNDLED[scenario]);
        let a = episode(&net, &flows, kind, seed);
        let b = episode(&net, &flows, kind, seed);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn yellow_blocks_discharge_and_switches_respect_min_green(scenario in 0..BUNDLED.len(), kind in 0usize..3, seed in any::<u64>()) {
        let (net, flows) = bundled(BUNDLED[scenario]);
        let r = episode(&net, &flows, kind, seed);
        let index: HashMap<&str, usize> = net.intersections.iter().enumerate().map(|(k, i)| (i.id.as_str(), k)).collect();
        let mut switches: Vec<Vec<u64>> = vec![Vec::new(); net.intersections.len()];
        for e in r.events.iter().filter(|e| e.kind == EventKind::PhaseSwitch) {
            switches[index[e.id.as_str()]].push(e.t);
        }
        for (k, times) in switches.iter().enumerate() {
            let inter = &net.intersections[k];
            for w in times.windows(2) {
                prop_assert!(w[1] - w[0] >= (inter.min_green + inter.yellow) as u64, "{} switches at {} and {}", inter.id, w[0], w[1]);
            }
        }
        for e in r.events.iter().filter(|e| e.kind == EventKind::VehicleGo) {
            let link = net.link(&e.detail).unwrap();
            let k = net.link_sink(link).unwrap();
            let y = net.intersections[k].yellow as u64;
            let in_yellow = switches[k].iter().any(|&s| s >= y && e.t >= s - y && e.t < s);
            prop_assert!(!in_yellow, "vehicle-go at {} during yellow at {}", e.t, net.intersections[k].id);
        }
    }

    #[test]
    fn phase_pressure_is_sum_of_movements(scenario in 0..BUNDLED.len(), seed in any::<u64>()) {
        let (net, flows) = bundled(BUNDLED[scenario]);
        let mut c = RandomController::new(seed);
        let mut checked = 0;
        let mut mismatch = None;
        run_episode_observed(&net, &flows, &mut c, &EpisodeSettings::default(), seed, &mut |s| {
            if s.clock % 37 != 0 {
                return;
            }
            for i in 0..net.intersections.len() {
                for p in 0..net.intersections[i].phase_count() {
                    let got = phase_pressure(s, &net, i, p).unwrap();
                    let want = brute_pressure(s, &net, i, p);
                    checked += 1;
                    if (got - want).abs() > 1e-9 && mismatch.is_none() {
                        mismatch = Some((s.clock, i, p, got, want));
                    }
                }
            }
        })
        .unwrap();
        prop_assert!(checked > 0);
        prop_assert!(mismatch.is_none(), "{:?}", mismatch);
    }
}

fn doubled(flows: &FlowSpec) -> FlowSpec {
    let mut out = flows.clone();
    for f in &mut out.flows {
        if let Arrival::Poisson { rate } = &mut f.arrival {
            *rate *= 2.0;
        }
    }
    out
}

#[test]
fn doubling_demand_never_lowers_mean_travel_time() {
    for name in BUNDLED {
        let (net, flows) = bundled(name);
        let heavy = doubled(&flows);
        for kind in [1usize, 2] {
            let att = |f: &FlowSpec| (1..=3).map(|s| episode(&net, f, kind, s).metrics.att).sum::<f64>() / 3.0;
            let (base, load) = (att(&flows), att(&heavy));
            assert!(load >= base, "{name} controller {kind}: ATT {base:.2} -> {load:.2} under doubled demand");
        }
    }
}

#[test]
fn bundled_files_match_the_generator() {
    for (name, kind, rows) in [
        ("symmetric_1x1", DemandKind::Symmetric, 1),
        ("asymmetric_1x1", DemandKind::Asymmetric, 1),
        ("surge_1x1", DemandKind::Surge, 1),
        ("asymmetric_2x2", DemandKind::Asymmetric, 2),
    ] {
        let (doc, flows) = generate(kind, rows, rows, 0).unwrap();
        let dir = scenario_dir(name);
        let net_text = std::fs::read_to_string(dir.join("network.json")).unwrap();
        let flow_text = std::fs::read_to_string(dir.join("flows.json")).unwrap();
        assert_eq!(net_text, serde_json::to_string_pretty(&doc).unwrap() + "\n", "{name}");
        assert_eq!(flow_text, serde_json::to_string_pretty(&flows).unwrap() + "\n", "{name}");
    }
}
