//! Road graph, shortest-path routing and vehicle movement.
//!
//! Vehicles drive along graph edges; radio range is measured in the plane
//! (straight-line distance), independent of the roads.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::domain::{EvMode, EvState, Joules, Meters, MetersPerSecond, Seconds};
use crate::error::{Error, Result};

/// Dense node index. Ordering follows the node labels of the source graph, so
/// comparing `NodeId`s compares labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> Meters {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub u: NodeId,
    pub v: NodeId,
    pub length: Meters,
}

impl Edge {
    pub fn other(&self, n: NodeId) -> NodeId {
        if n == self.u {
            self.v
        } else {
            self.u
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Location {
    Node(NodeId),
    /// `offset` meters from the edge's `u` end.
    OnEdge { edge: usize, offset: Meters },
}

/// Straight-line distance between two points in the plane.
pub fn distance(a: Point, b: Point) -> Meters {
    a.distance(b)
}

#[derive(Debug, Clone)]
pub struct RoadGraph {
    labels: Vec<u32>,
    points: Vec<Point>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(NodeId, usize)>>,
    cs_nodes: Vec<NodeId>,
    rsu_nodes: Vec<NodeId>,
}

impl RoadGraph {
    /// Builds and validates a graph. `edges` carry node labels and an optional
    /// explicit length (Euclidean otherwise); `cs` and `rsu` list node labels.
    pub fn new(
        nodes: &[(u32, f64, f64)],
        edges: &[(u32, u32, Option<f64>)],
        cs: &[u32],
        rsu: &[u32],
    ) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Graph("graph has no nodes".into()));
        }
        let mut sorted: Vec<(u32, f64, f64)> = nodes.to_vec();
        sorted.sort_by_key(|n| n.0);
        let mut index = BTreeMap::new();
        for (i, &(label, x, y)) in sorted.iter().enumerate() {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::Graph(format!("node {label} has non-finite coordinates")));
            }
            if index.insert(label, NodeId(i as u32)).is_some() {
                return Err(Error::Graph(format!("duplicate node {label}")));
            }
        }
        let lookup = |label: u32| {
            index
                .get(&label)
                .copied()
                .ok_or_else(|| Error::Graph(format!("unknown node {label}")))
        };
        let points: Vec<Point> = sorted.iter().map(|&(_, x, y)| Point::new(x, y)).collect();
        let mut adjacency = vec![Vec::new(); points.len()];
        let mut built = Vec::with_capacity(edges.len());
        for &(a, b, len) in edges {
            let (u, v) = (lookup(a)?, lookup(b)?);
            if u == v {
                return Err(Error::Graph(format!("self-loop at node {a}")));
            }
            let length =
                len.unwrap_or_else(|| points[u.0 as usize].distance(points[v.0 as usize]));
            if !(length > 0.0) || !length.is_finite() {
                return Err(Error::Graph(format!(
                    "edge {a}-{b} must have positive length, got {length}"
                )));
            }
            let idx = built.len();
            built.push(Edge { u, v, length });
            adjacency[u.0 as usize].push((v, idx));
            adjacency[v.0 as usize].push((u, idx));
        }
        for adj in &mut adjacency {
            adj.sort_by(|a, b| a.0.cmp(&b.0).then(built[a.1].length.total_cmp(&built[b.1].length)));
        }
        let cs_nodes = cs.iter().map(|&l| lookup(l)).collect::<Result<Vec<_>>>()?;
        let rsu_nodes = rsu.iter().map(|&l| lookup(l)).collect::<Result<Vec<_>>>()?;
        let graph = RoadGraph {
            labels: sorted.iter().map(|n| n.0).collect(),
            points,
            edges: built,
            adjacency,
            cs_nodes,
            rsu_nodes,
        };
        let reach = graph.distances_to(NodeId(0));
        if let Some(i) = reach.iter().position(|d| !d.is_finite()) {
            return Err(Error::Graph(format!(
                "graph is not connected: node {} unreachable",
                graph.labels[i]
            )));
        }
        Ok(graph)
    }

    pub fn node_count(&self) -> usize {
        self.points.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, idx: usize) -> &Edge {
        &self.edges[idx]
    }

    pub fn label(&self, n: NodeId) -> u32 {
        self.labels[n.0 as usize]
    }

    pub fn node_by_label(&self, label: u32) -> Option<NodeId> {
        self.labels.binary_search(&label).ok().map(|i| NodeId(i as u32))
    }

    pub fn point(&self, n: NodeId) -> Point {
        self.points[n.0 as usize]
    }

    pub fn neighbors(&self, n: NodeId) -> &[(NodeId, usize)] {
        &self.adjacency[n.0 as usize]
    }

    pub fn cs_nodes(&self) -> &[NodeId] {
        &self.cs_nodes
    }

    pub fn rsu_nodes(&self) -> &[NodeId] {
        &self.rsu_nodes
    }

    pub fn with_placements(mut self, cs: Vec<NodeId>, rsu: Vec<NodeId>) -> Self {
        self.cs_nodes = cs;
        self.rsu_nodes = rsu;
        self
    }

    pub fn location_point(&self, loc: &Location) -> Point {
        match *loc {
            Location::Node(n) => self.point(n),
            Location::OnEdge { edge, offset } => self.edge_point(edge, offset),
        }
    }

    fn edge_point(&self, edge: usize, offset: Meters) -> Point {
        let e = &self.edges[edge];
        let (a, b) = (self.point(e.u), self.point(e.v));
        let f = (offset / e.length).clamp(0.0, 1.0);
        Point::new(a.x + (b.x - a.x) * f, a.y + (b.y - a.y) * f)
    }

    /// Road distance from every node to `target` (Dijkstra).
    pub fn distances_to(&self, target: NodeId) -> Vec<Meters> {
        let mut dist = vec![f64::INFINITY; self.points.len()];
        let mut heap = BinaryHeap::new();
        dist[target.0 as usize] = 0.0;
        heap.push(HeapItem(0.0, target));
        while let Some(HeapItem(d, n)) = heap.pop() {
            if d > dist[n.0 as usize] {
                continue;
            }
            for &(m, e) in self.neighbors(n) {
                let nd = d + self.edges[e].length;
                if nd < dist[m.0 as usize] {
                    dist[m.0 as usize] = nd;
                    heap.push(HeapItem(nd, m));
                }
            }
        }
        dist
    }

    /// Minimum-length route from `from` to `to`. Among equally short routes
    /// the one with the lexicographically smallest node sequence wins.
    pub fn shortest_path(&self, from: &Location, to: NodeId) -> Result<Route> {
        let dist = self.distances_to(to);
        self.route_with(&dist, from, to)
    }

    /// Same as [`shortest_path`](Self::shortest_path) but reuses a distance
    /// table from [`distances_to`](Self::distances_to).
    pub fn route_with(&self, dist: &[Meters], from: &Location, to: NodeId) -> Result<Route> {
        let unreachable = || Error::Unreachable {
            from: format!("{from:?}"),
            to: self.label(to),
        };
        let mut legs = Vec::new();
        let start = match *from {
            Location::Node(n) => n,
            Location::OnEdge { edge, offset } => {
                let e = self.edges[edge];
                let via_u = offset + dist[e.u.0 as usize];
                let via_v = (e.length - offset) + dist[e.v.0 as usize];
                let pick_u = match via_u.total_cmp(&via_v) {
                    Ordering::Less => true,
                    Ordering::Greater => false,
                    Ordering::Equal => e.u < e.v,
                };
                let (node, end) = if pick_u { (e.u, 0.0) } else { (e.v, e.length) };
                if (end - offset).abs() > 0.0 {
                    legs.push(RouteLeg {
                        edge,
                        from_offset: offset,
                        to_offset: end,
                    });
                }
                node
            }
        };
        if !dist[start.0 as usize].is_finite() {
            return Err(unreachable());
        }
        let mut cur = start;
        while cur != to {
            let here = dist[cur.0 as usize];
            let tol = 1e-9 * here.max(1.0);
            let (next, edge) = self
                .neighbors(cur)
                .iter()
                .copied()
                .find(|&(m, e)| {
                    (self.edges[e].length + dist[m.0 as usize] - here).abs() <= tol
                        && dist[m.0 as usize] < here
                })
                .ok_or_else(unreachable)?;
            let e = self.edges[edge];
            let (from_offset, to_offset) = if e.u == cur {
                (0.0, e.length)
            } else {
                (e.length, 0.0)
            };
            legs.push(RouteLeg {
                edge,
                from_offset,
                to_offset,
            });
            cur = next;
        }
        let length = legs.iter().map(RouteLeg::length).sum();
        Ok(Route {
            legs,
            length,
            target: to,
        })
    }

    /// Road distance from `from` to node `to`.
    pub fn path_length(&self, dist: &[Meters], from: &Location) -> Meters {
        match *from {
            Location::Node(n) => dist[n.0 as usize],
            Location::OnEdge { edge, offset } => {
                let e = self.edges[edge];
                (offset + dist[e.u.0 as usize]).min(e.length - offset + dist[e.v.0 as usize])
            }
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        let mut cs = Vec::new();
        let mut rsu = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line: line_no, msg };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| err(format!("expected a number, got `{s}`")))
            };
            let id = |s: &str| -> Result<u32> {
                s.parse::<u32>()
                    .map_err(|_| err(format!("expected a node id, got `{s}`")))
            };
            match fields.as_slice() {
                ["node", n, x, y] => nodes.push((id(n)?, num(x)?, num(y)?)),
                ["edge", a, b] => edges.push((id(a)?, id(b)?, None)),
                ["edge", a, b, len] => edges.push((id(a)?, id(b)?, Some(num(len)?))),
                ["poi", kind, n] => match kind.to_ascii_uppercase().as_str() {
                    "CS" => cs.push(id(n)?),
                    "RSU" => rsu.push(id(n)?),
                    other => return Err(err(format!("unknown poi kind `{other}`"))),
                },
                _ => return Err(err(format!("unrecognized line `{line}`"))),
            }
        }
        RoadGraph::new(&nodes, &edges, &cs, &rsu)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# nodes: id x y (meters)");
        for (i, p) in self.points.iter().enumerate() {
            let _ = writeln!(out, "node {} {} {}", self.labels[i], p.x, p.y);
        }
        let _ = writeln!(out, "# edges: u v length");
        for e in &self.edges {
            let _ = writeln!(out, "edge {} {} {}", self.label(e.u), self.label(e.v), e.length);
        }
        for &n in &self.cs_nodes {
            let _ = writeln!(out, "poi CS {}", self.label(n));
        }
        for &n in &self.rsu_nodes {
            let _ = writeln!(out, "poi RSU {}", self.label(n));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapItem(f64, NodeId);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Synthetic rectangular grid used when no map file is supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub spacing: Meters,
    pub cs_count: usize,
    pub rsu_count: usize,
    /// RSUs closer than this are skipped so coverage disks do not overlap.
    pub min_rsu_separation: Meters,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            width: 9,
            height: 7,
            spacing: 500.0,
            cs_count: 5,
            rsu_count: 7,
            min_rsu_separation: 600.0,
            seed: 1,
        }
    }
}

/// Grid graph with seeded CS and RSU placement. CS and RSU nodes are
/// distinct; the RSU list for a smaller `rsu_count` is a prefix of the list
/// for a larger one under the same seed.
pub fn grid_graph(grid: &GridSpec) -> Result<RoadGraph> {
    let (w, h) = (grid.width, grid.height);
    if w == 0 || h == 0 || w * h < 2 {
        return Err(Error::Config(format!("grid {w}x{h} is too small")));
    }
    if !(grid.spacing > 0.0) {
        return Err(Error::Config("grid spacing must be positive".into()));
    }
    let label = |r: usize, c: usize| (r * w + c) as u32;
    let mut nodes = Vec::with_capacity(w * h);
    let mut edges = Vec::new();
    for r in 0..h {
        for c in 0..w {
            nodes.push((label(r, c), c as f64 * grid.spacing, r as f64 * grid.spacing));
            if c + 1 < w {
                edges.push((label(r, c), label(r, c + 1), None));
            }
            if r + 1 < h {
                edges.push((label(r, c), label(r + 1, c), None));
            }
        }
    }
    if grid.cs_count + grid.rsu_count > w * h {
        return Err(Error::Config(format!(
            "cannot place {} CSs and {} RSUs on {} nodes",
            grid.cs_count,
            grid.rsu_count,
            w * h
        )));
    }
    let mut cs_rng = ChaCha8Rng::seed_from_u64(grid.seed);
    cs_rng.set_stream(1);
    let mut order: Vec<u32> = (0..(w * h) as u32).collect();
    order.shuffle(&mut cs_rng);
    let cs: Vec<u32> = order[..grid.cs_count].to_vec();

    let mut rsu_rng = ChaCha8Rng::seed_from_u64(grid.seed);
    rsu_rng.set_stream(2);
    let mut rest: Vec<u32> = (0..(w * h) as u32).filter(|n| !cs.contains(n)).collect();
    rest.shuffle(&mut rsu_rng);
    let pos = |l: u32| Point::new(nodes[l as usize].1, nodes[l as usize].2);
    let mut rsu: Vec<u32> = Vec::with_capacity(grid.rsu_count);
    for &cand in &rest {
        if rsu.len() == grid.rsu_count {
            break;
        }
        if rsu
            .iter()
            .all(|&r| pos(r).distance(pos(cand)) >= grid.min_rsu_separation)
        {
            rsu.push(cand);
        }
    }
    if rsu.len() < grid.rsu_count {
        return Err(Error::Config(format!(
            "only {} RSUs fit at separation {} m",
            rsu.len(),
            grid.min_rsu_separation
        )));
    }
    RoadGraph::new(&nodes, &edges, &cs, &rsu)
}

/// A piece of one edge driven in one direction. Offsets are measured from
/// the edge's `u` end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteLeg {
    pub edge: usize,
    pub from_offset: Meters,
    pub to_offset: Meters,
}

impl RouteLeg {
    pub fn length(&self) -> Meters {
        (self.to_offset - self.from_offset).abs()
    }

    fn offset_at(&self, s: Meters) -> Meters {
        if self.to_offset >= self.from_offset {
            self.from_offset + s
        } else {
            self.from_offset - s
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub legs: Vec<RouteLeg>,
    pub length: Meters,
    pub target: NodeId,
}

impl Route {
    pub fn empty(at: NodeId) -> Self {
        Route {
            legs: Vec::new(),
            length: 0.0,
            target: at,
        }
    }

    /// Position after driving `s` meters along the route.
    pub fn location_at(&self, graph: &RoadGraph, s: Meters) -> Location {
        if s >= self.length {
            return Location::Node(self.target);
        }
        let mut left = s.max(0.0);
        for leg in &self.legs {
            let len = leg.length();
            if left < len {
                let offset = leg.offset_at(left);
                let e = graph.edge(leg.edge);
                if offset <= 0.0 {
                    return Location::Node(e.u);
                }
                if offset >= e.length {
                    return Location::Node(e.v);
                }
                return Location::OnEdge {
                    edge: leg.edge,
                    offset,
                };
            }
            left -= len;
        }
        Location::Node(self.target)
    }

    /// Node sequence visited, excluding a partial first edge's start point.
    pub fn nodes(&self, graph: &RoadGraph) -> Vec<NodeId> {
        self.legs
            .iter()
            .map(|leg| {
                let e = graph.edge(leg.edge);
                if leg.to_offset >= leg.from_offset {
                    e.v
                } else {
                    e.u
                }
            })
            .collect()
    }

    /// Stretches of the route (in meters from its start) lying within
    /// `radius` of `center`, merged where they touch across leg boundaries.
    pub fn disk_intervals(&self, graph: &RoadGraph, center: Point, radius: Meters) -> Vec<(Meters, Meters)> {
        let mut out: Vec<(Meters, Meters)> = Vec::new();
        let mut base = 0.0;
        for leg in &self.legs {
            let len = leg.length();
            let p0 = graph.edge_point(leg.edge, leg.from_offset);
            let p1 = graph.edge_point(leg.edge, leg.to_offset);
            let (dx, dy) = ((p1.x - p0.x) / len, (p1.y - p0.y) / len);
            let (ox, oy) = (p0.x - center.x, p0.y - center.y);
            let a = dx * dx + dy * dy;
            let b = 2.0 * (ox * dx + oy * dy);
            let c = ox * ox + oy * oy - radius * radius;
            let span = if a <= 0.0 {
                (c <= 0.0).then_some((0.0, len))
            } else {
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    None
                } else {
                    let sq = disc.sqrt();
                    let lo = ((-b - sq) / (2.0 * a)).max(0.0);
                    let hi = ((-b + sq) / (2.0 * a)).min(len);
                    (lo <= hi).then_some((lo, hi))
                }
            };
            if let Some((lo, hi)) = span {
                let (lo, hi) = (base + lo, base + hi);
                match out.last_mut() {
                    Some(last) if lo - last.1 <= 1e-9 => last.1 = last.1.max(hi),
                    _ => out.push((lo, hi)),
                }
            }
            base += len;
        }
        out
    }
}

pub fn travel_time(route: &Route, speed: MetersPerSecond) -> Result<Seconds> {
    if !(speed > 0.0) || !speed.is_finite() {
        return Err(Error::Config(format!("speed must be positive, got {speed} m/s")));
    }
    Ok(route.length / speed)
}

/// Distances below this count as "arrived" when integrating movement.
pub const ARRIVAL_TOLERANCE: Meters = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Advance {
    /// Still en route (or idle without a trip).
    Moved { distance: Meters, energy: Joules },
    /// Reached the end of the trip after `elapsed` seconds.
    Arrived {
        distance: Meters,
        energy: Joules,
        elapsed: Seconds,
    },
    /// Battery exhausted after `elapsed` seconds; the vehicle halts.
    Stranded {
        distance: Meters,
        energy: Joules,
        elapsed: Seconds,
    },
}

/// Drives `ev` along its current trip for `dt` seconds, drawing
/// `consumption_rate` joules per meter. A `HeadingToCs` vehicle that reaches
/// its station switches to `Waiting`. A roaming vehicle without a trip stays
/// put; picking the next waypoint is the caller's job.
pub fn advance(ev: &mut EvState, graph: &RoadGraph, dt: Seconds) -> Advance {
    debug_assert!(dt >= 0.0);
    let idle = Advance::Moved {
        distance: 0.0,
        energy: 0.0,
    };
    if !matches!(ev.mode, EvMode::Roaming | EvMode::HeadingToCs(_)) || dt <= 0.0 {
        return idle;
    }
    let Some(trip) = ev.trip.as_mut() else {
        return idle;
    };
    let remaining = trip.remaining();
    let mut d = (ev.speed * dt).min(remaining);
    let arrived = remaining - d <= ARRIVAL_TOLERANCE;
    if arrived {
        d = remaining;
    }
    let alpha = ev.consumption_rate;
    let need = alpha * d;
    if need > ev.battery_cur + 1e-9 {
        let d = if alpha > 0.0 { ev.battery_cur / alpha } else { d };
        let energy = ev.battery_cur;
        trip.travelled += d;
        ev.location = trip.route.location_at(graph, trip.travelled);
        ev.battery_cur = 0.0;
        ev.mode = EvMode::Stranded;
        ev.pending_reservation = None;
        return Advance::Stranded {
            distance: d,
            energy,
            elapsed: d / ev.speed,
        };
    }
    let energy = need.min(ev.battery_cur);
    ev.battery_cur -= energy;
    trip.travelled += d;
    if arrived {
        ev.location = Location::Node(trip.route.target);
        ev.trip = None;
        if let EvMode::HeadingToCs(cs) = ev.mode {
            ev.set_mode(EvMode::Waiting(cs));
        }
        Advance::Arrived {
            distance: d,
            energy,
            elapsed: d / ev.speed,
        }
    } else {
        ev.location = trip.route.location_at(graph, trip.travelled);
        Advance::Moved { distance: d, energy }
    }
}
