//! Shortest paths with deterministic tie-breaking, and Yen's k-shortest
//! simple paths.
//!
//! Among equal-cost paths the one with the lexicographically smallest
//! link-id sequence wins. Distances come from Dijkstra; the path is then
//! read off the subgraph of tight links in link-id order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::network::Network;

#[derive(PartialEq)]
struct Entry {
    dist: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Bans applied during Yen's spur searches.
#[derive(Default)]
pub(crate) struct Bans {
    pub links: Vec<bool>,
    pub nodes: Vec<bool>,
}

impl Bans {
    fn none(net: &Network) -> Self {
        Self {
            links: vec![false; net.link_count()],
            nodes: vec![false; net.node_count()],
        }
    }
}

fn tight(du: f64, w: f64, dv: f64) -> bool {
    du + w <= dv + 1e-12 * dv.abs().max(1.0)
}

pub(crate) fn dijkstra(net: &Network, weights: &[f64], source: usize, bans: &Bans) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; net.node_count()];
    if bans.nodes[source] {
        return dist;
    }
    dist[source] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Entry { dist: 0.0, node: source });
    while let Some(Entry { dist: d, node }) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        for &a in net.out_links(node) {
            if bans.links[a] {
                continue;
            }
            let h = net.head_idx(a);
            if bans.nodes[h] {
                continue;
            }
            let nd = d + weights[a];
            if nd < dist[h] {
                dist[h] = nd;
                heap.push(Entry { dist: nd, node: h });
            }
        }
    }
    dist
}

/// Lexicographically smallest simple path among the shortest ones, given
/// Dijkstra distances from `source`.
pub(crate) fn lex_shortest_path(
    net: &Network,
    weights: &[f64],
    dist: &[f64],
    source: usize,
    target: usize,
    bans: &Bans,
) -> Option<Vec<usize>> {
    if !dist[target].is_finite() {
        return None;
    }
    let is_tight = |a: usize| -> bool {
        if bans.links[a] {
            return false;
        }
        let (t, h) = (net.tail_idx(a), net.head_idx(a));
        !bans.nodes[h] && dist[t].is_finite() && tight(dist[t], weights[a], dist[h])
    };
    // nodes that reach target through tight links
    let mut reach = vec![false; net.node_count()];
    reach[target] = true;
    let mut stack = vec![target];
    while let Some(v) = stack.pop() {
        for &a in net.in_links(v) {
            let t = net.tail_idx(a);
            if !reach[t] && is_tight(a) {
                reach[t] = true;
                stack.push(t);
            }
        }
    }
    // depth-first in link-id order; the first complete path is the lexicographic minimum
    let mut visited = vec![false; net.node_count()];
    let mut path = Vec::new();
    fn dfs(
        net: &Network,
        at: usize,
        target: usize,
        reach: &[bool],
        visited: &mut [bool],
        path: &mut Vec<usize>,
        is_tight: &dyn Fn(usize) -> bool,
    ) -> bool {
        if at == target {
            return true;
        }
        visited[at] = true;
        for &a in net.out_links(at) {
            let h = net.head_idx(a);
            if visited[h] || !reach[h] || !is_tight(a) {
                continue;
            }
            path.push(a);
            if dfs(net, h, target, reach, visited, path, is_tight) {
                return true;
            }
            path.pop();
        }
        false
    }
    if dfs(net, source, target, &reach, &mut visited, &mut path, &is_tight) {
        Some(path)
    } else {
        None
    }
}

pub(crate) fn shortest_path(net: &Network, weights: &[f64], source: usize, target: usize) -> Option<Vec<usize>> {
    let bans = Bans::none(net);
    let dist = dijkstra(net, weights, source, &bans);
    lex_shortest_path(net, weights, &dist, source, target, &bans)
}

/// One Dijkstra from `source`, then a tie-broken path to each target.
pub(crate) fn shortest_paths_from(
    net: &Network,
    weights: &[f64],
    source: usize,
    targets: &[usize],
) -> (Vec<f64>, Vec<Option<Vec<usize>>>) {
    let bans = Bans::none(net);
    let dist = dijkstra(net, weights, source, &bans);
    let paths = targets
        .iter()
        .map(|&t| lex_shortest_path(net, weights, &dist, source, t, &bans))
        .collect();
    (dist, paths)
}

pub(crate) fn path_cost(weights: &[f64], path: &[usize]) -> f64 {
    path.iter().map(|&a| weights[a]).sum()
}

/// Orders paths by cost, treating near-equal costs as ties broken by link ids.
pub(crate) fn compare_paths(net: &Network, weights: &[f64], a: &[usize], b: &[usize]) -> Ordering {
    let (ca, cb) = (path_cost(weights, a), path_cost(weights, b));
    if (ca - cb).abs() <= 1e-9 * ca.abs().max(cb.abs()).max(1.0) {
        a.iter()
            .map(|&l| net.links()[l].id)
            .cmp(b.iter().map(|&l| net.links()[l].id))
    } else {
        ca.total_cmp(&cb)
    }
}

/// Yen's algorithm: up to `k` loopless paths in nondecreasing cost.
pub(crate) fn k_shortest_paths(net: &Network, weights: &[f64], source: usize, target: usize, k: usize) -> Vec<Vec<usize>> {
    let mut accepted: Vec<Vec<usize>> = Vec::new();
    let Some(first) = shortest_path(net, weights, source, target) else {
        return accepted;
    };
    accepted.push(first);
    let mut candidates: Vec<Vec<usize>> = Vec::new();
    while accepted.len() < k {
        let prev = accepted.last().expect("nonempty").clone();
        let mut nodes = vec![source];
        nodes.extend(prev.iter().map(|&a| net.head_idx(a)));
        for i in 0..prev.len() {
            let spur = nodes[i];
            let root = &prev[..i];
            let mut bans = Bans::none(net);
            for p in &accepted {
                if p.len() > i && &p[..i] == root {
                    bans.links[p[i]] = true;
                }
            }
            for &n in &nodes[..i] {
                bans.nodes[n] = true;
            }
            let dist = dijkstra(net, weights, spur, &bans);
            if let Some(tail) = lex_shortest_path(net, weights, &dist, spur, target, &bans) {
                let mut cand = root.to_vec();
                cand.extend(tail);
                if !accepted.contains(&cand) && !candidates.contains(&cand) {
                    candidates.push(cand);
                }
            }
        }
        if candidates.is_empty() {
            break;
        }
        let best = (0..candidates.len())
            .min_by(|&a, &b| compare_paths(net, weights, &candidates[a], &candidates[b]))
            .expect("nonempty");
        accepted.push(candidates.swap_remove(best));
    }
    accepted
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{braess_fixture, build_network, Link};

    #[test]
    fn lexicographic_tie_break() {
        // two equal-time paths 1->2->4 (links 1,3) and 1->3->4 (links 2,4)
        let net = build_network(vec![
            Link::new(2, 1, 3, 1.0, 10.0, 1.0),
            Link::new(1, 1, 2, 1.0, 10.0, 1.0),
            Link::new(4, 3, 4, 1.0, 10.0, 1.0),
            Link::new(3, 2, 4, 1.0, 10.0, 1.0),
        ])
        .unwrap();
        let w = net.free_flow_costs();
        let p = shortest_path(&net, &w, 0, 3).unwrap();
        assert_eq!(net.link_ids(&p), vec![1, 3]);
    }

    #[test]
    fn zero_weight_links() {
        let (net, _, _) = braess_fixture();
        let w = vec![0.0, 45.0, 45.0, 0.0, 0.0];
        let p = shortest_path(&net, &w, 0, 3).unwrap();
        assert_eq!(net.link_ids(&p), vec![1, 4, 5]);
        // all three routes tie at 45: lexicographic minimum is 1-3
        let w = vec![0.0, 0.0, 45.0, 45.0, 45.0];
        let p = shortest_path(&net, &w, 0, 3).unwrap();
        assert_eq!(net.link_ids(&p), vec![1, 3]);
    }

    #[test]
    fn unreachable() {
        let net = build_network(vec![Link::new(1, 1, 2, 1.0, 10.0, 1.0)]).unwrap();
        let w = net.free_flow_costs();
        assert!(shortest_path(&net, &w, 1, 0).is_none());
        assert!(k_shortest_paths(&net, &w, 1, 0, 3).is_empty());
    }
}
