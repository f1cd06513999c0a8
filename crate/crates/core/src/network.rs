//! Road network and flow files.
//!
//! A network document is JSON with four top-level keys:
//!
//! ```json
//! {
//!   "intersections": [{ "id": "J0", "min_green": 10, "yellow": 5,
//!                       "movements": [{ "id": "N_T", "from": "N_in", "lane": 1, "to": "S_out" }],
//!                       "phases": [{ "name": "NS-through", "axis": "NS", "movements": ["N_T", "S_T"] }] }],
//!   "links": [{ "id": "N_in", "from": "B_N", "to": "J0", "lanes": 3, "free_flow": 15, "capacity": 40 }],
//!   "boundary": ["B_N", "B_S"],
//!   "conflicts": { "J0": [["N_T", "E_T"]] }
//! }
//! ```
//!
//! `min_green` and `yellow` are optional (10 s and 5 s). Conflict pairs name
//! movements of the keyed intersection; a phase may not contain both members
//! of a pair.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MIN_GREEN: u32 = 10;
pub const DEFAULT_YELLOW: u32 = 5;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema violation at `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("intersection {intersection}: phase {phase} contains conflicting movements {first} and {second}")]
    Conflict {
        intersection: String,
        phase: usize,
        first: String,
        second: String,
    },
    #[error("network is disconnected: {0}")]
    Disconnected(String),
}

fn schema(field: impl Into<String>, message: impl Into<String>) -> NetworkError {
    NetworkError::Schema {
        field: field.into(),
        message: message.into(),
    }
}

/// Approach axis of a phase, used by the imbalance predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    NS,
    EW,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkDoc {
    pub id: String,
    pub from: String,
    pub to: String,
    pub lanes: u32,
    pub free_flow: u32,
    pub capacity: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovementDoc {
    pub id: String,
    pub from: String,
    pub lane: u32,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<Axis>,
    pub movements: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionDoc {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_green: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yellow: Option<u32>,
    pub movements: Vec<MovementDoc>,
    pub phases: Vec<PhaseDoc>,
}

/// Serialized form of a network file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDoc {
    pub intersections: Vec<IntersectionDoc>,
    pub links: Vec<LinkDoc>,
    pub boundary: Vec<String>,
    #[serde(default)]
    pub conflicts: BTreeMap<String, Vec<[String; 2]>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: String,
    pub from: String,
    pub to: String,
    pub lanes: u32,
    pub free_flow: u32,
    pub capacity: u32,
    /// True when the link ends at a boundary node; vehicles leave the network at its end.
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Movement {
    pub id: String,
    pub from_link: usize,
    pub lane: u32,
    pub to_link: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub name: String,
    pub axis: Option<Axis>,
    pub movements: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Intersection {
    pub id: String,
    pub movements: Vec<Movement>,
    pub phases: Vec<Phase>,
    pub min_green: u32,
    pub yellow: u32,
    pub conflicts: Vec<(usize, usize)>,
}

impl Intersection {
    pub fn phase_count(&self) -> usize {
        self.phases.len()
    }
}

/// A validated road network.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    pub intersections: Vec<Intersection>,
    pub links: Vec<Link>,
    pub boundary: Vec<String>,
    link_index: BTreeMap<String, usize>,
    /// Link index -> intersection index at its downstream end.
    link_sink: Vec<Option<usize>>,
    doc: NetworkDoc,
}

/// Parses and validates a network document.
pub fn load_network(document: &str) -> Result<RoadNetwork, NetworkError> {
    let doc: NetworkDoc = serde_json::from_str(document)?;
    RoadNetwork::from_doc(doc)
}

impl RoadNetwork {
    pub fn from_doc(doc: NetworkDoc) -> Result<Self, NetworkError> {
        let boundary: BTreeSet<&str> = doc.boundary.iter().map(String::as_str).collect();
        if boundary.len() != doc.boundary.len() {
            return Err(schema("boundary", "duplicate boundary node id"));
        }
        if boundary.is_empty() {
            return Err(schema("boundary", "at least one boundary node is required"));
        }
        let mut inter_index = BTreeMap::new();
        for (i, inter) in doc.intersections.iter().enumerate() {
            if boundary.contains(inter.id.as_str()) {
                return Err(schema(
                    format!("intersections[{i}].id"),
                    format!("`{}` is also a boundary node", inter.id),
                ));
            }
            if inter_index.insert(inter.id.clone(), i).is_some() {
                return Err(schema(
                    format!("intersections[{i}].id"),
                    format!("duplicate intersection id `{}`", inter.id),
                ));
            }
        }
        if inter_index.is_empty() {
            return Err(schema("intersections", "at least one intersection is required"));
        }

        let node_exists = |n: &str| boundary.contains(n) || inter_index.contains_key(n);
        let mut link_index = BTreeMap::new();
        let mut links = Vec::with_capacity(doc.links.len());
        for (i, l) in doc.links.iter().enumerate() {
            let field = |f: &str| format!("links[{i}].{f}");
            if link_index.insert(l.id.clone(), i).is_some() {
                return Err(schema(field("id"), format!("duplicate link id `{}`", l.id)));
            }
            if !node_exists(&l.from) {
                return Err(schema(field("from"), format!("unknown node `{}`", l.from)));
            }
            if !node_exists(&l.to) {
                return Err(schema(field("to"), format!("unknown node `{}`", l.to)));
            }
            if l.from == l.to {
                return Err(schema(field("to"), "self-loop link"));
            }
            if l.lanes < 1 {
                return Err(schema(field("lanes"), "must be >= 1"));
            }
            if l.free_flow < 1 {
                return Err(schema(field("free_flow"), "must be >= 1 s"));
            }
            if l.capacity < 1 {
                return Err(schema(field("capacity"), "must be >= 1 vehicle"));
            }
            links.push(Link {
                id: l.id.clone(),
                from: l.from.clone(),
                to: l.to.clone(),
                lanes: l.lanes,
                free_flow: l.free_flow,
                capacity: l.capacity,
                terminal: boundary.contains(l.to.as_str()),
            });
        }

        let mut intersections = Vec::with_capacity(doc.intersections.len());
        for (i, d) in doc.intersections.iter().enumerate() {
            intersections.push(build_intersection(i, d, &links, &link_index, &doc.conflicts)?);
        }
        for key in doc.conflicts.keys() {
            if !inter_index.contains_key(key) {
                return Err(schema(
                    format!("conflicts.{key}"),
                    "conflict table for unknown intersection",
                ));
            }
        }

        let link_sink = links
            .iter()
            .map(|l| inter_index.get(&l.to).copied())
            .collect();
        let net = RoadNetwork {
            intersections,
            links,
            boundary: doc.boundary.clone(),
            link_index,
            link_sink,
            doc,
        };
        net.check_connected()?;
        Ok(net)
    }

    fn check_connected(&self) -> Result<(), NetworkError> {
        let mut adjacency: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for l in &self.links {
            adjacency.entry(&l.from).or_default().push(&l.to);
        }
        let entries: Vec<&str> = self
            .boundary
            .iter()
            .map(String::as_str)
            .filter(|b| adjacency.contains_key(b))
            .collect();
        if entries.is_empty() {
            return Err(NetworkError::Disconnected(
                "no boundary node has an outgoing link".into(),
            ));
        }
        for entry in entries {
            let mut seen = BTreeSet::from([entry]);
            let mut queue = VecDeque::from([entry]);
            while let Some(node) = queue.pop_front() {
                for &next in adjacency.get(node).map(Vec::as_slice).unwrap_or(&[]) {
                    if seen.insert(next) {
                        queue.push_back(next);
                    }
                }
            }
            if self
                .boundary
                .iter()
                .any(|b| b != entry && seen.contains(b.as_str()))
            {
                return Ok(());
            }
        }
        Err(NetworkError::Disconnected(
            "no boundary exit is reachable from any boundary entry".into(),
        ))
    }

    pub fn link(&self, id: &str) -> Option<usize> {
        self.link_index.get(id).copied()
    }

    /// Intersection at the downstream end of a link, if any.
    pub fn link_sink(&self, link: usize) -> Option<usize> {
        self.link_sink[link]
    }

    pub fn doc(&self) -> &NetworkDoc {
        &self.doc
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.doc).expect("network doc serializes")
    }

    /// Phase count shared by every intersection, if uniform.
    pub fn uniform_phase_count(&self) -> Option<usize> {
        let first = self.intersections[0].phase_count();
        self.intersections
            .iter()
            .all(|i| i.phase_count() == first)
            .then_some(first)
    }

    /// Movement at `intersection` carrying traffic from `from` to `to`, picking
    /// the first declared when several lanes serve the same turn.
    pub fn movements_between(
        &self,
        intersection: usize,
        from: usize,
        to: usize,
    ) -> impl Iterator<Item = usize> + '_ {
        self.intersections[intersection]
            .movements
            .iter()
            .enumerate()
            .filter(move |(_, m)| m.from_link == from && m.to_link == to)
            .map(|(i, _)| i)
    }
}

fn build_intersection(
    index: usize,
    d: &IntersectionDoc,
    links: &[Link],
    link_index: &BTreeMap<String, usize>,
    conflicts: &BTreeMap<String, Vec<[String; 2]>>,
) -> Result<Intersection, NetworkError> {
    let field = |f: String| format!("intersections[{index}].{f}");
    let mut movement_index = BTreeMap::new();
    let mut movements = Vec::with_capacity(d.movements.len());
    for (m, md) in d.movements.iter().enumerate() {
        if movement_index.insert(md.id.clone(), m).is_some() {
            return Err(schema(
                field(format!("movements[{m}].id")),
                format!("duplicate movement id `{}`", md.id),
            ));
        }
        let from = *link_index.get(&md.from).ok_or_else(|| {
            schema(
                field(format!("movements[{m}].from")),
                format!("unknown link `{}`", md.from),
            )
        })?;
        let to = *link_index.get(&md.to).ok_or_else(|| {
            schema(
                field(format!("movements[{m}].to")),
                format!("unknown link `{}`", md.to),
            )
        })?;
        if links[from].to != d.id {
            return Err(schema(
                field(format!("movements[{m}].from")),
                format!("link `{}` does not end at `{}`", md.from, d.id),
            ));
        }
        if links[to].from != d.id {
            return Err(schema(
                field(format!("movements[{m}].to")),
                format!("link `{}` does not start at `{}`", md.to, d.id),
            ));
        }
        if md.lane >= links[from].lanes {
            return Err(schema(
                field(format!("movements[{m}].lane")),
                format!("lane {} out of range for link `{}`", md.lane, md.from),
            ));
        }
        movements.push(Movement {
            id: md.id.clone(),
            from_link: from,
            lane: md.lane,
            to_link: to,
        });
    }

    let mut conflict_pairs = Vec::new();
    for (c, [a, b]) in conflicts.get(&d.id).into_iter().flatten().enumerate() {
        let lookup = |name: &String| {
            movement_index.get(name).copied().ok_or_else(|| {
                schema(
                    format!("conflicts.{}[{c}]", d.id),
                    format!("unknown movement `{name}`"),
                )
            })
        };
        conflict_pairs.push((lookup(a)?, lookup(b)?));
    }

    if d.phases.is_empty() {
        return Err(schema(field("phases".into()), "at least one phase is required"));
    }
    let mut phases = Vec::with_capacity(d.phases.len());
    for (p, pd) in d.phases.iter().enumerate() {
        if pd.movements.is_empty() {
            return Err(schema(
                field(format!("phases[{p}].movements")),
                "phase must contain at least one movement",
            ));
        }
        let mut members = Vec::with_capacity(pd.movements.len());
        for name in &pd.movements {
            let m = *movement_index.get(name).ok_or_else(|| {
                schema(
                    field(format!("phases[{p}].movements")),
                    format!("unknown movement `{name}`"),
                )
            })?;
            if members.contains(&m) {
                return Err(schema(
                    field(format!("phases[{p}].movements")),
                    format!("movement `{name}` listed twice"),
                ));
            }
            members.push(m);
        }
        for &(a, b) in &conflict_pairs {
            if members.contains(&a) && members.contains(&b) {
                return Err(NetworkError::Conflict {
                    intersection: d.id.clone(),
                    phase: p,
                    first: movements[a].id.clone(),
                    second: movements[b].id.clone(),
                });
            }
        }
        phases.push(Phase {
            name: pd.name.clone().unwrap_or_else(|| format!("phase-{p}")),
            axis: pd.axis,
            movements: members,
        });
    }

    let min_green = d.min_green.unwrap_or(DEFAULT_MIN_GREEN);
    if min_green < 1 {
        return Err(schema(field("min_green".into()), "must be >= 1 s"));
    }
    Ok(Intersection {
        id: d.id.clone(),
        movements,
        phases,
        min_green,
        yellow: d.yellow.unwrap_or(DEFAULT_YELLOW),
        conflicts: conflict_pairs,
    })
}

/// How vehicles of one flow arrive at the network boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Arrival {
    /// Absolute entry times in seconds.
    Schedule { times: Vec<f64> },
    /// Vehicles per second.
    Poisson { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowEntry {
    pub route: Vec<String>,
    pub arrival: Arrival,
    pub start: f64,
    pub end: f64,
}

/// Validated flow with its route resolved to link indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub route: Vec<usize>,
    pub arrival: Arrival,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowSpec {
    pub flows: Vec<Flow>,
}

impl FlowSpec {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn to_entries(&self, net: &RoadNetwork) -> Vec<FlowEntry> {
        self.flows
            .iter()
            .map(|f| FlowEntry {
                route: f.route.iter().map(|&l| net.links[l].id.clone()).collect(),
                arrival: f.arrival.clone(),
                start: f.start,
                end: f.end,
            })
            .collect()
    }
}

/// Parses a flow file (JSON list) against a network.
pub fn load_flows(document: &str, net: &RoadNetwork) -> Result<FlowSpec, NetworkError> {
    let entries: Vec<FlowEntry> = serde_json::from_str(document)?;
    validate_flows(&entries, net)
}

pub fn validate_flows(entries: &[FlowEntry], net: &RoadNetwork) -> Result<FlowSpec, NetworkError> {
    let mut flows = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        let field = |f: &str| format!("flows[{i}].{f}");
        if e.route.is_empty() {
            return Err(schema(field("route"), "route is empty"));
        }
        let route = e
            .route
            .iter()
            .map(|id| {
                net.link(id)
                    .ok_or_else(|| schema(field("route"), format!("unknown link `{id}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let first = &net.links[route[0]];
        if !net.boundary.contains(&first.from) {
            return Err(schema(
                field("route"),
                format!("route must start at a boundary node, `{}` starts at `{}`", first.id, first.from),
            ));
        }
        let last = &net.links[*route.last().unwrap()];
        if !last.terminal {
            return Err(schema(
                field("route"),
                format!("route must end at a boundary node, `{}` ends at `{}`", last.id, last.to),
            ));
        }
        for pair in route.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let Some(node) = net.link_sink(a) else {
                return Err(schema(field("route"), "route continues past a boundary node"));
            };
            if net.movements_between(node, a, b).next().is_none() {
                return Err(schema(
                    field("route"),
                    format!(
                        "no movement at `{}` from `{}` to `{}`",
                        net.intersections[node].id, net.links[a].id, net.links[b].id
                    ),
                ));
            }
        }
        if !(e.start.is_finite() && e.end.is_finite()) || e.start > e.end || e.start < 0.0 {
            return Err(schema(field("start"), "need 0 <= start <= end"));
        }
        match &e.arrival {
            Arrival::Poisson { rate } if !(rate.is_finite() && *rate > 0.0) => {
                return Err(schema(field("arrival.rate"), "rate must be > 0"));
            }
            Arrival::Schedule { times } => {
                if times.iter().any(|t| !t.is_finite() || *t < e.start || *t > e.end) {
                    return Err(schema(field("arrival.times"), "entry times must lie in [start, end]"));
                }
            }
            _ => {}
        }
        flows.push(Flow {
            route,
            arrival: e.arrival.clone(),
            start: e.start,
            end: e.end,
        });
    }
    Ok(FlowSpec { flows })
}
