#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use tpet_core::caf::{CafConfig, DecisionRecord, Pattern};
use tpet_core::network::{load_flows, load_network, Axis, FlowSpec, RoadNetwork};
use tpet_core::ssa::{Congestion, Imbalance, PhaseMetrics, SsaConfig, StructuredFacts, Urgency};

pub const BUNDLED: [&str; 4] = ["symmetric_1x1", "asymmetric_1x1", "surge_1x1", "asymmetric_2x2"];

pub fn scenario_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub fn bundled(name: &str) -> (RoadNetwork, FlowSpec) {
    let dir = scenario_dir(name);
    let net = load_network(&std::fs::read_to_string(dir.join("network.json")).unwrap()).unwrap();
    let flows = load_flows(&std::fs::read_to_string(dir.join("flows.json")).unwrap(), &net).unwrap();
    (net, flows)
}

/// Facts with small integer-valued numbers so ties and threshold equalities occur.
pub fn random_facts(rng: &mut impl Rng, n: usize) -> StructuredFacts {
    let mut vec = |lo: i32, hi: i32| (0..n).map(|_| rng.random_range(lo..=hi) as f64).collect::<Vec<_>>();
    let (pressure, queue, wait, starvation) = (vec(-10, 30), vec(0, 30), vec(0, 200), vec(0, 300));
    StructuredFacts {
        congestion: Congestion::ALL[rng.random_range(0..4)],
        dominant_flow: rng.random_bool(0.5).then(|| rng.random_range(0..n)),
        starvation_risk: (0..n).map(|_| rng.random_bool(0.3)).collect(),
        urgency: Urgency::ALL[rng.random_range(0..2)],
        imbalance: Imbalance::ALL[rng.random_range(0..3)],
        pressure,
        queue,
        wait,
        starvation,
    }
}

/// A shuffled log of up to `max_len` records over one or two intersections
/// with sticky actions, so long unserved stretches occur.
pub fn random_log(rng: &mut impl Rng, max_len: usize) -> Vec<DecisionRecord> {
    let len = rng.random_range(0..=max_len);
    let names = ["A", "B"];
    let inters = rng.random_range(1..=2);
    let phases: Vec<usize> = (0..inters).map(|_| rng.random_range(2..=4)).collect();
    let mut clock: Vec<u64> = (0..inters).map(|_| rng.random_range(0..100)).collect();
    let mut next_t = vec![0usize; inters];
    let mut last = vec![0usize; inters];
    let mut log = Vec::with_capacity(len);
    for _ in 0..len {
        let x = rng.random_range(0..inters);
        let n = phases[x];
        let mut facts = random_facts(rng, n);
        facts.pressure.iter_mut().for_each(|p| *p = p.abs().min(20.0));
        facts.queue.iter_mut().for_each(|q| *q = (*q / 2.0).floor());
        let action = if rng.random_bool(0.6) { last[x] } else { rng.random_range(0..n) };
        log.push(DecisionRecord {
            t: next_t[x],
            time: clock[x],
            intersection: names[x].to_string(),
            active: last[x],
            facts,
            action,
            deferred: false,
        });
        next_t[x] += 1;
        clock[x] += rng.random_range(1..=40);
        last[x] = action;
    }
    log.shuffle(rng);
    log
}

/// (pattern, intersection, start, end, phase, duration)
pub type DefectKey = (Pattern, String, usize, usize, usize, u64);

fn per_intersection(log: &[DecisionRecord]) -> Vec<Vec<&DecisionRecord>> {
    let names: BTreeSet<&str> = log.iter().map(|r| r.intersection.as_str()).collect();
    names
        .into_iter()
        .map(|name| {
            let mut rs: Vec<&DecisionRecord> = log.iter().filter(|r| r.intersection == name).collect();
            rs.sort_by_key(|r| r.t);
            rs
        })
        .collect()
}

fn val(v: &[f64], i: usize) -> f64 {
    v.get(i).copied().unwrap_or(0.0)
}

/// Decisions `(intersection, phase, t)` at which a demanding phase has gone
/// unserved for a whole window lying inside the log.
pub fn starvation_hits(log: &[DecisionRecord], cfg: &CafConfig) -> BTreeSet<(String, usize, usize)> {
    let mut out = BTreeSet::new();
    for rs in per_intersection(log) {
        let first = rs[0].time as f64;
        let n = rs.iter().map(|r| r.facts.pressure.len()).max().unwrap_or(0);
        for r in &rs {
            let from = r.time as f64 - cfg.starvation_window;
            for i in 0..n {
                let served = rs.iter().any(|o| o.t <= r.t && (o.time as f64) >= from && o.action == i);
                if val(&r.facts.pressure, i) > cfg.high_demand && first <= from && !served {
                    out.insert((r.intersection.clone(), i, r.t));
                }
            }
        }
    }
    out
}

/// Brute-force reference for the defect analysis. Starvation defects are the
/// connected components of the union of `[time - window, time]` over all hits.
pub fn oracle_defects(log: &[DecisionRecord], cfg: &CafConfig) -> BTreeSet<DefectKey> {
    let mut out = BTreeSet::new();
    let hits = starvation_hits(log, cfg);
    for rs in per_intersection(log) {
        let name = rs[0].intersection.clone();
        let hold = |k: usize| -> u64 {
            match (rs.get(k + 1), k.checked_sub(1)) {
                (Some(next), _) => next.time - rs[k].time,
                (None, Some(prev)) => rs[k].time - rs[prev].time,
                (None, None) => 0,
            }
        };
        for (k, r) in rs.iter().enumerate() {
            let empty = |q: f64| q < cfg.demand_epsilon;
            let idle_hold = r.action == r.active && r.facts.queue.iter().all(|&q| empty(q));
            if empty(val(&r.facts.queue, r.action)) && !idle_hold {
                out.insert((Pattern::WastedGreenTime, name.clone(), r.t, r.t, r.action, hold(k)));
            }
            if k > 0 {
                let prev = rs[k - 1];
                let i = prev.action;
                if r.action != i && val(&prev.facts.pressure, i) > cfg.high_demand && val(&r.facts.queue, i) > cfg.residual {
                    out.insert((Pattern::PrematurePhaseSwitch, name.clone(), r.t, r.t, i, hold(k)));
                }
            }
        }
        let n = rs.iter().map(|r| r.facts.pressure.len()).max().unwrap_or(0);
        for i in 0..n {
            let mut intervals: Vec<(f64, f64, usize)> = rs
                .iter()
                .filter(|r| hits.contains(&(name.clone(), i, r.t)))
                .map(|r| (r.time as f64 - cfg.starvation_window, r.time as f64, r.t))
                .collect();
            intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut merged: Vec<(f64, f64, usize)> = Vec::new();
            for iv in intervals {
                match merged.last_mut() {
                    Some(m) if iv.0 <= m.1 => {
                        m.1 = m.1.max(iv.1);
                        m.2 = m.2.max(iv.2);
                    }
                    _ => merged.push(iv),
                }
            }
            for (lo, _, end_t) in merged {
                let start = rs.iter().find(|r| r.time as f64 >= lo).unwrap();
                let end = rs.iter().find(|r| r.t == end_t).unwrap();
                out.insert((Pattern::PhaseStarvation, name.clone(), start.t, end.t, i, end.time - start.time));
            }
        }
    }
    out
}

/// Every comparison the predicates can depend on, as a sign vector.
pub fn ssa_signature(m: &PhaseMetrics, c: &SsaConfig) -> Vec<bool> {
    let n = m.pressure.len();
    let max_p = m.pressure.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s: Vec<bool> = c.congestion_cuts.iter().map(|&cut| max_p >= cut).collect();
    for a in 0..n {
        for b in 0..n {
            s.push(m.pressure[a] > m.pressure[b]);
            s.push(m.pressure[a] - m.pressure[b] >= c.dominance_margin);
        }
        s.push(m.pressure[a] > c.demand_threshold);
        s.push(m.starvation[a] > c.starvation_threshold);
        s.push(m.wait[a] > c.urgency_wait);
    }
    let total = |axis| (0..n).filter(|&p| m.axes[p] == Some(axis)).map(|p| m.pressure[p]).sum::<f64>().max(0.0);
    let (ns, ew) = (total(Axis::NS), total(Axis::EW));
    s.push(ns > c.imbalance_ratio * ew);
    s.push(ew > c.imbalance_ratio * ns);
    s
}
