//! Synthetic grid scenarios.
//!
//! Every intersection is a four-way junction with three lanes per approach
//! (left, through, right), twelve movements and four phases:
//! NS-through(+right), EW-through(+right), NS-left, EW-left.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{
    Arrival, Axis, FlowEntry, IntersectionDoc, LinkDoc, MovementDoc, NetworkDoc, PhaseDoc,
};

pub const MAX_GRID: usize = 4;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unsupported grid size {0}x{1} (1x1 up to {MAX_GRID}x{MAX_GRID})")]
    GridSize(usize, usize),
    #[error("invalid scenario parameter: {0}")]
    Param(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemandKind {
    Symmetric,
    Asymmetric,
    Surge,
}

impl std::str::FromStr for DemandKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "symmetric" => Ok(Self::Symmetric),
            "asymmetric" => Ok(Self::Asymmetric),
            "surge" => Ok(Self::Surge),
            other => Err(format!("unknown scenario kind `{other}`")),
        }
    }
}

/// Demand parameters. Rates are vehicles per second per entry link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioParams {
    pub duration: f64,
    pub symmetric_rate: f64,
    pub major_rate: f64,
    pub minor_rate: f64,
    pub through_share: f64,
    pub left_share: f64,
    /// Relative per-route rate jitter, drawn from the seed.
    pub jitter: f64,
    /// Surge window `[start, end)`; the NS rate doubles inside it.
    pub surge_start: f64,
    pub surge_end: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            duration: 3600.0,
            symmetric_rate: 0.1,
            major_rate: 0.2,
            minor_rate: 0.07,
            through_share: 0.6,
            left_share: 0.2,
            jitter: 0.05,
            surge_start: 1200.0,
            surge_end: 2400.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dir {
    N,
    E,
    S,
    W,
}

const DIRS: [Dir; 4] = [Dir::N, Dir::E, Dir::S, Dir::W];

impl Dir {
    fn letter(self) -> &'static str {
        match self {
            Dir::N => "N",
            Dir::E => "E",
            Dir::S => "S",
            Dir::W => "W",
        }
    }

    fn opposite(self) -> Dir {
        match self {
            Dir::N => Dir::S,
            Dir::S => Dir::N,
            Dir::E => Dir::W,
            Dir::W => Dir::E,
        }
    }

    /// Exit side for a vehicle approaching from `self`.
    fn exit(self, turn: Turn) -> Dir {
        match (self, turn) {
            (d, Turn::Through) => d.opposite(),
            (Dir::N, Turn::Left) | (Dir::S, Turn::Right) => Dir::E,
            (Dir::S, Turn::Left) | (Dir::N, Turn::Right) => Dir::W,
            (Dir::E, Turn::Left) | (Dir::W, Turn::Right) => Dir::S,
            (Dir::W, Turn::Left) | (Dir::E, Turn::Right) => Dir::N,
        }
    }

    fn axis(self) -> Axis {
        match self {
            Dir::N | Dir::S => Axis::NS,
            Dir::E | Dir::W => Axis::EW,
        }
    }

    fn offset(self) -> (isize, isize) {
        match self {
            Dir::N => (-1, 0),
            Dir::S => (1, 0),
            Dir::E => (0, 1),
            Dir::W => (0, -1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Turn {
    Left,
    Through,
    Right,
}

const TURNS: [Turn; 3] = [Turn::Left, Turn::Through, Turn::Right];

impl Turn {
    fn lane(self) -> u32 {
        match self {
            Turn::Left => 0,
            Turn::Through => 1,
            Turn::Right => 2,
        }
    }

    fn letter(self) -> &'static str {
        match self {
            Turn::Left => "L",
            Turn::Through => "T",
            Turn::Right => "R",
        }
    }
}

struct Grid {
    rows: usize,
    cols: usize,
}

impl Grid {
    fn single(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    fn intersection(&self, r: usize, c: usize) -> String {
        if self.single() {
            "J0".into()
        } else {
            format!("J{r}_{c}")
        }
    }

    /// Node adjacent to intersection (r, c) on side `d`: another intersection or a boundary node.
    fn neighbor(&self, r: usize, c: usize, d: Dir) -> String {
        let (dr, dc) = d.offset();
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        if nr >= 0 && nc >= 0 && (nr as usize) < self.rows && (nc as usize) < self.cols {
            return self.intersection(nr as usize, nc as usize);
        }
        if self.single() {
            return format!("B_{}", d.letter());
        }
        let k = match d {
            Dir::N | Dir::S => c,
            Dir::E | Dir::W => r,
        };
        format!("B_{}{k}", d.letter())
    }

    fn link_id(&self, from: &str, to: &str, d: Dir, incoming: bool) -> String {
        if self.single() {
            format!("{}_{}", d.letter(), if incoming { "in" } else { "out" })
        } else {
            format!("{from}>{to}")
        }
    }

    /// Link entering (r, c) from side `d`.
    fn in_link(&self, r: usize, c: usize, d: Dir) -> String {
        let from = self.neighbor(r, c, d);
        self.link_id(&from, &self.intersection(r, c), d, true)
    }

    /// Link leaving (r, c) toward side `d`.
    fn out_link(&self, r: usize, c: usize, d: Dir) -> String {
        let to = self.neighbor(r, c, d);
        self.link_id(&self.intersection(r, c), &to, d, false)
    }

    fn inside(&self, r: isize, c: isize) -> bool {
        r >= 0 && c >= 0 && (r as usize) < self.rows && (c as usize) < self.cols
    }
}

fn conflicts() -> Vec<[String; 2]> {
    let pairs: [(&str, &[&str]); 6] = [
        ("N_T", &["E_T", "W_T", "E_L", "W_L", "S_L"]),
        ("S_T", &["E_T", "W_T", "E_L", "W_L", "N_L"]),
        ("E_T", &["N_L", "S_L", "W_L"]),
        ("W_T", &["N_L", "S_L", "E_L"]),
        ("N_L", &["E_L", "W_L"]),
        ("S_L", &["E_L", "W_L"]),
    ];
    pairs
        .iter()
        .flat_map(|(a, bs)| bs.iter().map(move |b| [a.to_string(), b.to_string()]))
        .collect()
}

fn phases() -> Vec<PhaseDoc> {
    let phase = |name: &str, axis, ms: &[&str]| PhaseDoc {
        name: Some(name.into()),
        axis: Some(axis),
        movements: ms.iter().map(|m| m.to_string()).collect(),
    };
    vec![
        phase("NS-through", Axis::NS, &["N_T", "S_T", "N_R", "S_R"]),
        phase("EW-through", Axis::EW, &["E_T", "W_T", "E_R", "W_R"]),
        phase("NS-left", Axis::NS, &["N_L", "S_L"]),
        phase("EW-left", Axis::EW, &["E_L", "W_L"]),
    ]
}

/// Network document for a rows x cols grid.
pub fn grid_doc(rows: usize, cols: usize) -> Result<NetworkDoc, ScenarioError> {
    if !(1..=MAX_GRID).contains(&rows) || !(1..=MAX_GRID).contains(&cols) {
        return Err(ScenarioError::GridSize(rows, cols));
    }
    let grid = Grid { rows, cols };
    let mut links: BTreeMap<String, LinkDoc> = BTreeMap::new();
    let mut boundary = Vec::new();
    let mut intersections = Vec::new();
    let mut conflict_table = BTreeMap::new();

    for r in 0..rows {
        for c in 0..cols {
            let id = grid.intersection(r, c);
            let mut movements = Vec::new();
            for d in DIRS {
                let neighbor = grid.neighbor(r, c, d);
                let is_boundary = neighbor.starts_with("B_");
                if is_boundary && !boundary.contains(&neighbor) {
                    boundary.push(neighbor.clone());
                }
                let free_flow = if is_boundary { 15 } else { 20 };
                let in_id = grid.in_link(r, c, d);
                links.entry(in_id.clone()).or_insert_with(|| LinkDoc {
                    id: in_id.clone(),
                    from: neighbor.clone(),
                    to: id.clone(),
                    lanes: 3,
                    free_flow,
                    capacity: 40,
                });
                let out_id = grid.out_link(r, c, d);
                links.entry(out_id.clone()).or_insert_with(|| LinkDoc {
                    id: out_id.clone(),
                    from: id.clone(),
                    to: neighbor.clone(),
                    lanes: 3,
                    free_flow,
                    capacity: 40,
                });
                for turn in TURNS {
                    movements.push(MovementDoc {
                        id: format!("{}_{}", d.letter(), turn.letter()),
                        from: in_id.clone(),
                        lane: turn.lane(),
                        to: grid.out_link(r, c, d.exit(turn)),
                    });
                }
            }
            conflict_table.insert(id.clone(), conflicts());
            intersections.push(IntersectionDoc {
                id,
                min_green: None,
                yellow: None,
                movements,
                phases: phases(),
            });
        }
    }
    Ok(NetworkDoc {
        intersections,
        links: links.into_values().collect(),
        boundary,
        conflicts: conflict_table,
    })
}

/// The bundled single four-way intersection.
pub fn single_intersection_doc() -> NetworkDoc {
    grid_doc(1, 1).expect("1x1 grid is supported")
}

/// Routes entering at every boundary approach: turn once at the first
/// intersection, then continue straight to the boundary.
fn routes(grid: &Grid) -> Vec<(Dir, Turn, Vec<String>)> {
    let mut out = Vec::new();
    let entries: Vec<(usize, usize, Dir)> = DIRS
        .iter()
        .flat_map(|&d| {
            let cells: Vec<(usize, usize)> = match d {
                Dir::N => (0..grid.cols).map(|c| (0, c)).collect(),
                Dir::S => (0..grid.cols).map(|c| (grid.rows - 1, c)).collect(),
                Dir::W => (0..grid.rows).map(|r| (r, 0)).collect(),
                Dir::E => (0..grid.rows).map(|r| (r, grid.cols - 1)).collect(),
            };
            cells.into_iter().map(move |(r, c)| (r, c, d))
        })
        .collect();
    for (r, c, from) in entries {
        for turn in TURNS {
            let mut route = vec![grid.in_link(r, c, from)];
            let heading = from.exit(turn);
            let (mut cr, mut cc) = (r as isize, c as isize);
            loop {
                route.push(grid.out_link(cr as usize, cc as usize, heading));
                let (dr, dc) = heading.offset();
                if !grid.inside(cr + dr, cc + dc) {
                    break;
                }
                cr += dr;
                cc += dc;
            }
            out.push((from, turn, route));
        }
    }
    out
}

/// Generates network and flow documents for a grid scenario, deterministic in `seed`.
pub fn generate(
    kind: DemandKind,
    rows: usize,
    cols: usize,
    seed: u64,
) -> Result<(NetworkDoc, Vec<FlowEntry>), ScenarioError> {
    generate_with(kind, rows, cols, &ScenarioParams::default(), seed)
}

pub fn generate_with(
    kind: DemandKind,
    rows: usize,
    cols: usize,
    params: &ScenarioParams,
    seed: u64,
) -> Result<(NetworkDoc, Vec<FlowEntry>), ScenarioError> {
    let doc = grid_doc(rows, cols)?;
    let p = params;
    if !(p.duration > 0.0) {
        return Err(ScenarioError::Param("duration must be > 0".into()));
    }
    if !(0.0..1.0).contains(&p.jitter) {
        return Err(ScenarioError::Param("jitter must be in [0, 1)".into()));
    }
    if p.through_share < 0.0 || p.left_share < 0.0 || p.through_share + p.left_share > 1.0 {
        return Err(ScenarioError::Param("turn shares must be >= 0 and sum to <= 1".into()));
    }
    if kind == DemandKind::Surge && !(0.0 <= p.surge_start && p.surge_start < p.surge_end && p.surge_end <= p.duration) {
        return Err(ScenarioError::Param("surge window must satisfy 0 <= start < end <= duration".into()));
    }
    let grid = Grid { rows, cols };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flows = Vec::new();
    for (from, turn, route) in routes(&grid) {
        let approach = match (kind, from.axis()) {
            (DemandKind::Symmetric | DemandKind::Surge, _) => p.symmetric_rate,
            (DemandKind::Asymmetric, Axis::NS) => p.major_rate,
            (DemandKind::Asymmetric, Axis::EW) => p.minor_rate,
        };
        let share = match turn {
            Turn::Through => p.through_share,
            Turn::Left => p.left_share,
            Turn::Right => 1.0 - p.through_share - p.left_share,
        };
        let jitter = if p.jitter > 0.0 {
            1.0 + rng.random_range(-p.jitter..p.jitter)
        } else {
            1.0
        };
        let rate = approach * share * jitter;
        if rate <= 0.0 {
            continue;
        }
        flows.push(FlowEntry {
            route: route.clone(),
            arrival: Arrival::Poisson { rate },
            start: 0.0,
            end: p.duration,
        });
        if kind == DemandKind::Surge && from.axis() == Axis::NS {
            flows.push(FlowEntry {
                route,
                arrival: Arrival::Poisson { rate },
                start: p.surge_start,
                end: p.surge_end,
            });
        }
    }
    Ok((doc, flows))
}

/// Total Poisson rate of flows active at time `t`.
pub fn total_rate_at(flows: &[FlowEntry], t: f64) -> f64 {
    flows
        .iter()
        .filter(|f| f.start <= t && t < f.end)
        .map(|f| match f.arrival {
            Arrival::Poisson { rate } => rate,
            Arrival::Schedule { .. } => 0.0,
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{validate_flows, RoadNetwork};

    #[test]
    fn every_grid_size_loads() {
        for rows in 1..=MAX_GRID {
            for cols in 1..=MAX_GRID {
                for kind in [DemandKind::Symmetric, DemandKind::Asymmetric, DemandKind::Surge] {
                    let (doc, flows) = generate(kind, rows, cols, 7).unwrap();
                    let net = RoadNetwork::from_doc(doc).unwrap();
                    assert_eq!(net.intersections.len(), rows * cols);
                    validate_flows(&flows, &net).unwrap();
                }
            }
        }
    }

    #[test]
    fn unsupported_grid_rejected() {
        assert!(matches!(grid_doc(5, 1), Err(ScenarioError::GridSize(5, 1))));
        assert!(matches!(grid_doc(0, 2), Err(ScenarioError::GridSize(0, 2))));
    }

    #[test]
    fn surge_doubles_rate_inside_window() {
        let params = ScenarioParams::default();
        let (_, flows) = generate(DemandKind::Surge, 1, 1, 3).unwrap();
        let ns_rate = |t| {
            let ns: Vec<FlowEntry> = flows
                .iter()
                .filter(|f| f.route[0] == "N_in" || f.route[0] == "S_in")
                .cloned()
                .collect();
            total_rate_at(&ns, t)
        };
        let before = ns_rate(params.surge_start - 1.0);
        let inside = ns_rate((params.surge_start + params.surge_end) / 2.0);
        let after = ns_rate(params.surge_end + 1.0);
        assert!((inside - 2.0 * before).abs() < 1e-12);
        assert!((after - before).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_files() {
        let a = generate(DemandKind::Asymmetric, 2, 3, 11).unwrap();
        let b = generate(DemandKind::Asymmetric, 2, 3, 11).unwrap();
        assert_eq!(serde_json::to_string(&a.1).unwrap(), serde_json::to_string(&b.1).unwrap());
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn asymmetric_loads_ns_heavier() {
        let (_, flows) = generate(DemandKind::Asymmetric, 1, 1, 0).unwrap();
        let axis_rate = |prefix: [&str; 2]| -> f64 {
            let sel: Vec<FlowEntry> = flows
                .iter()
                .filter(|f| prefix.contains(&f.route[0].as_str()))
                .cloned()
                .collect();
            total_rate_at(&sel, 10.0)
        };
        assert!(axis_rate(["N_in", "S_in"]) > 2.0 * axis_rate(["E_in", "W_in"]));
    }
}
