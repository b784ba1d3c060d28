//! Road network, O-D demand, enumerated route sets and flow algebra.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::cost::Polynomial;
use crate::error::{Error, Result};
use crate::paths;

pub type NodeId = usize;

/// Tolerance on route-probability row sums.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub id: usize,
    pub tail: NodeId,
    pub head: NodeId,
    /// minutes
    pub free_flow_time: f64,
    /// veh/hr
    pub capacity: f64,
    /// miles
    pub length: f64,
    /// percent
    pub grade: f64,
    /// Travel time in minutes as a polynomial of flow; overrides BPR when set.
    pub custom_time: Option<Polynomial>,
}

impl Link {
    pub fn new(id: usize, tail: NodeId, head: NodeId, free_flow_time: f64, capacity: f64, length: f64) -> Self {
        Self {
            id,
            tail,
            head,
            free_flow_time,
            capacity,
            length,
            grade: 0.0,
            custom_time: None,
        }
    }

    pub fn with_grade(mut self, grade: f64) -> Self {
        self.grade = grade;
        self
    }

    /// Replaces BPR with `time`. The free-flow time becomes `time(0)`.
    pub fn with_custom_time(mut self, time: Polynomial) -> Self {
        self.free_flow_time = time.eval(0.0);
        self.custom_time = Some(time);
        self
    }

    /// Travel time at zero flow, used to rank routes.
    pub fn free_flow_cost(&self) -> f64 {
        match &self.custom_time {
            Some(p) => p.eval(0.0),
            None => self.free_flow_time,
        }
    }

    fn validate(&self) -> Result<()> {
        let invalid = |reason: &str| Error::InvalidLink {
            id: self.id,
            reason: reason.to_string(),
        };
        if self.tail == self.head {
            return Err(invalid("self-loop"));
        }
        if !(self.length >= 0.0) || !self.length.is_finite() {
            return Err(invalid("length must be finite and nonnegative"));
        }
        if !self.grade.is_finite() {
            return Err(invalid("grade must be finite"));
        }
        match &self.custom_time {
            Some(p) if !p.is_nondecreasing_form() => {
                Err(invalid("custom time coefficients must be finite and nonnegative"))
            }
            Some(_) => Ok(()),
            None if !(self.free_flow_time > 0.0) || !self.free_flow_time.is_finite() => {
                Err(invalid("free-flow time must be positive"))
            }
            None if !(self.capacity > 0.0) || !self.capacity.is_finite() => {
                Err(invalid("capacity must be positive"))
            }
            None => Ok(()),
        }
    }
}

/// Directed graph over arbitrary node ids; links are kept in input order.
#[derive(Clone, Debug)]
pub struct Network {
    nodes: Vec<NodeId>,
    node_index: HashMap<NodeId, usize>,
    links: Vec<Link>,
    link_index: HashMap<usize, usize>,
    // per node index, outgoing link indices sorted by link id
    out_links: Vec<Vec<usize>>,
    in_links: Vec<Vec<usize>>,
}

pub fn build_network(links: Vec<Link>) -> Result<Network> {
    if links.is_empty() {
        return Err(Error::EmptyNetwork);
    }
    let mut link_index = HashMap::with_capacity(links.len());
    for (i, l) in links.iter().enumerate() {
        l.validate()?;
        if link_index.insert(l.id, i).is_some() {
            return Err(Error::DuplicateLink(l.id));
        }
    }
    let mut nodes: Vec<NodeId> = links.iter().flat_map(|l| [l.tail, l.head]).collect();
    nodes.sort_unstable();
    nodes.dedup();
    let node_index: HashMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut out_links = vec![Vec::new(); nodes.len()];
    let mut in_links = vec![Vec::new(); nodes.len()];
    for (i, l) in links.iter().enumerate() {
        out_links[node_index[&l.tail]].push(i);
        in_links[node_index[&l.head]].push(i);
    }
    for adj in out_links.iter_mut().chain(in_links.iter_mut()) {
        adj.sort_by_key(|&i| links[i].id);
    }
    Ok(Network {
        nodes,
        node_index,
        links,
        link_index,
        out_links,
        in_links,
    })
}

impl Network {
    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_index(&self, node: NodeId) -> Option<usize> {
        self.node_index.get(&node).copied()
    }

    pub fn link_index(&self, id: usize) -> Option<usize> {
        self.link_index.get(&id).copied()
    }

    pub(crate) fn out_links(&self, node_idx: usize) -> &[usize] {
        &self.out_links[node_idx]
    }

    pub(crate) fn in_links(&self, node_idx: usize) -> &[usize] {
        &self.in_links[node_idx]
    }

    pub(crate) fn tail_idx(&self, link: usize) -> usize {
        self.node_index[&self.links[link].tail]
    }

    pub(crate) fn head_idx(&self, link: usize) -> usize {
        self.node_index[&self.links[link].head]
    }

    /// Node-link incidence: +1 at the tail row, -1 at the head row.
    pub fn incidence(&self) -> Vec<Vec<i8>> {
        let mut n = vec![vec![0i8; self.links.len()]; self.nodes.len()];
        for a in 0..self.links.len() {
            n[self.tail_idx(a)][a] = 1;
            n[self.head_idx(a)][a] = -1;
        }
        n
    }

    /// Free-flow travel time of every link.
    pub fn free_flow_costs(&self) -> Vec<f64> {
        self.links.iter().map(Link::free_flow_cost).collect()
    }

    pub fn validate_od(&self, od: &ODPair) -> Result<()> {
        let invalid = |reason: &str| Error::InvalidOd {
            origin: od.origin,
            destination: od.destination,
            reason: reason.to_string(),
        };
        if od.origin == od.destination {
            return Err(invalid("origin equals destination"));
        }
        if !(od.demand >= 0.0) || !od.demand.is_finite() {
            return Err(invalid("demand must be finite and nonnegative"));
        }
        if self.node_index(od.origin).is_none() {
            return Err(Error::UnknownNode(od.origin));
        }
        if self.node_index(od.destination).is_none() {
            return Err(Error::UnknownNode(od.destination));
        }
        Ok(())
    }

    /// Link ids along a route given as link indices.
    pub fn link_ids(&self, links: &[usize]) -> Vec<usize> {
        links.iter().map(|&a| self.links[a].id).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ODPair {
    pub origin: NodeId,
    pub destination: NodeId,
    /// veh/hr
    pub demand: f64,
}

impl ODPair {
    pub fn new(origin: NodeId, destination: NodeId, demand: f64) -> Self {
        Self {
            origin,
            destination,
            demand,
        }
    }
}

pub fn total_demand(ods: &[ODPair]) -> f64 {
    ods.iter().map(|od| od.demand).sum()
}

/// A simple path for one O-D pair, stored as link indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Route {
    pub od_index: usize,
    pub links: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct RouteSet {
    routes_per_od: Vec<Vec<Route>>,
    link_count: usize,
}

impl RouteSet {
    /// Builds a route set from explicit link-index sequences, checking each is a
    /// simple chain from its O-D origin to destination.
    pub fn from_routes(net: &Network, ods: &[ODPair], routes_per_od: Vec<Vec<Vec<usize>>>) -> Result<Self> {
        if routes_per_od.len() != ods.len() {
            return Err(Error::Dimension(format!(
                "{} route lists for {} O-D pairs",
                routes_per_od.len(),
                ods.len()
            )));
        }
        let mut out = Vec::with_capacity(ods.len());
        for (i, (od, routes)) in ods.iter().zip(routes_per_od).enumerate() {
            net.validate_od(od)?;
            if od.demand > 0.0 && routes.is_empty() {
                return Err(Error::Unreachable {
                    origin: od.origin,
                    destination: od.destination,
                });
            }
            let mut list = Vec::with_capacity(routes.len());
            for links in routes {
                check_simple_chain(net, od, &links)?;
                list.push(Route { od_index: i, links });
            }
            out.push(list);
        }
        Ok(Self {
            routes_per_od: out,
            link_count: net.link_count(),
        })
    }

    pub fn routes_per_od(&self) -> &[Vec<Route>] {
        &self.routes_per_od
    }

    pub fn routes(&self, od: usize) -> &[Route] {
        &self.routes_per_od[od]
    }

    pub fn od_count(&self) -> usize {
        self.routes_per_od.len()
    }

    pub fn link_count(&self) -> usize {
        self.link_count
    }

    pub fn total_routes(&self) -> usize {
        self.routes_per_od.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Route> {
        self.routes_per_od.iter().flatten()
    }

    /// Link-route incidence, `|A| x total routes`, columns ordered by O-D then route.
    pub fn incidence(&self) -> Vec<Vec<u8>> {
        let mut a = vec![vec![0u8; self.total_routes()]; self.link_count];
        for (col, route) in self.iter().enumerate() {
            for &l in &route.links {
                a[l][col] = 1;
            }
        }
        a
    }
}

fn check_simple_chain(net: &Network, od: &ODPair, links: &[usize]) -> Result<()> {
    let bad = |reason: String| Error::InvalidArgument(format!("route for {}->{}: {reason}", od.origin, od.destination));
    if links.is_empty() {
        return Err(bad("empty route".into()));
    }
    let mut at = od.origin;
    let mut seen = HashSet::from([at]);
    for &a in links {
        let link = net.links().get(a).ok_or_else(|| bad(format!("link index {a} out of range")))?;
        if link.tail != at {
            return Err(bad(format!("link {} does not start at node {at}", link.id)));
        }
        at = link.head;
        if !seen.insert(at) {
            return Err(bad(format!("node {at} repeated")));
        }
    }
    if at != od.destination {
        return Err(bad(format!("ends at node {at}")));
    }
    Ok(())
}

/// Up to `k` shortest simple paths per O-D pair by free-flow time.
///
/// Ties in free-flow time are broken by the lexicographic link-id sequence.
pub fn enumerate_routes(net: &Network, ods: &[ODPair], k: usize) -> Result<RouteSet> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let weights = net.free_flow_costs();
    let mut routes_per_od = Vec::with_capacity(ods.len());
    for (i, od) in ods.iter().enumerate() {
        net.validate_od(od)?;
        let src = net.node_index(od.origin).expect("validated");
        let dst = net.node_index(od.destination).expect("validated");
        let paths = paths::k_shortest_paths(net, &weights, src, dst, k);
        if paths.is_empty() && od.demand > 0.0 {
            return Err(Error::Unreachable {
                origin: od.origin,
                destination: od.destination,
            });
        }
        routes_per_od.push(
            paths
                .into_iter()
                .map(|links| Route { od_index: i, links })
                .collect(),
        );
    }
    Ok(RouteSet {
        routes_per_od,
        link_count: net.link_count(),
    })
}

/// Per-O-D rows of route fractions, each on the probability simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteProbabilityMatrix {
    rows: Vec<Vec<f64>>,
}

impl RouteProbabilityMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidArgument(format!("row {i} has entries outside [0,1]")));
            }
            if row.is_empty() {
                continue;
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
                return Err(Error::InvalidArgument(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self { rows })
    }

    pub fn uniform(rs: &RouteSet) -> Self {
        Self {
            rows: rs
                .routes_per_od()
                .iter()
                .map(|r| vec![1.0 / r.len() as f64; r.len()])
                .collect(),
        }
    }

    pub(crate) fn from_rows_unchecked(rows: Vec<Vec<f64>>) -> Self {
        Self { rows }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, od: usize) -> &[f64] {
        &self.rows[od]
    }

    pub fn into_rows(self) -> Vec<Vec<f64>> {
        self.rows
    }
}

/// Per-link flows in veh/hr.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowVector(pub Vec<f64>);

impl FlowVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn add(&self, other: &FlowVector) -> FlowVector {
        FlowVector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn l1_norm(&self) -> f64 {
        self.0.iter().map(|x| x.abs()).sum()
    }

    pub fn l1_distance(&self, other: &FlowVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }
}

impl std::ops::Index<usize> for FlowVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Link flows from route fractions without simplex checks: `x = A Pᵀ g`.
pub(crate) fn link_flows_from_rows(rows: &[Vec<f64>], ods: &[ODPair], rs: &RouteSet) -> Vec<f64> {
    let mut x = vec![0.0; rs.link_count()];
    for (i, (row, od)) in rows.iter().zip(ods).enumerate() {
        for (p, route) in row.iter().zip(rs.routes(i)) {
            let f = p * od.demand;
            if f == 0.0 {
                continue;
            }
            for &a in &route.links {
                x[a] += f;
            }
        }
    }
    x
}

pub fn route_flows_to_link_flows(p: &RouteProbabilityMatrix, ods: &[ODPair], rs: &RouteSet) -> Result<FlowVector> {
    if p.rows().len() != ods.len() || rs.od_count() != ods.len() {
        return Err(Error::Dimension(format!(
            "{} probability rows, {} O-D pairs, {} route lists",
            p.rows().len(),
            ods.len(),
            rs.od_count()
        )));
    }
    for (i, row) in p.rows().iter().enumerate() {
        if row.len() != rs.routes(i).len() {
            return Err(Error::Dimension(format!(
                "O-D {i}: {} probabilities for {} routes",
                row.len(),
                rs.routes(i).len()
            )));
        }
    }
    Ok(FlowVector(link_flows_from_rows(p.rows(), ods, rs)))
}

/// Braess network, O-D list, and the custom travel-time table by link id.
pub type BraessFixture = (Network, Vec<ODPair>, Vec<(usize, Polynomial)>);

/// Five-link Braess network with 4000 veh/hr from node 1 to node 4.
///
/// | link | tail→head | time (min) | length (mi) |
/// |------|-----------|------------|-------------|
/// | 1    | 1→2       | x/100      | 30.5        |
/// | 2    | 1→3       | 45         | 30.5        |
/// | 3    | 2→4       | 45         | 30.5        |
/// | 4    | 2→3       | 0          | 0           |
/// | 5    | 3→4       | x/100      | 30.5        |
pub fn braess_fixture() -> BraessFixture {
    let rows = [
        (1, 1, 2, Polynomial::new(vec![0.0, 0.01]), 30.5),
        (2, 1, 3, Polynomial::constant(45.0), 30.5),
        (3, 2, 4, Polynomial::constant(45.0), 30.5),
        (4, 2, 3, Polynomial::constant(0.0), 0.0),
        (5, 3, 4, Polynomial::new(vec![0.0, 0.01]), 30.5),
    ];
    let table = rows.iter().map(|(id, _, _, p, _)| (*id, p.clone())).collect();
    let links = rows
        .into_iter()
        .map(|(id, tail, head, p, length)| Link::new(id, tail, head, 1.0, 1.0, length).with_custom_time(p))
        .collect();
    let net = build_network(links).expect("braess fixture is valid");
    (net, vec![ODPair::new(1, 4, 4000.0)], table)
}
