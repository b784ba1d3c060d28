//! User equilibrium for selfish traffic via the Method of Successive Averages.
//!
//! CAV flow `x_c` is fixed background: it only shifts the argument of each
//! link's travel-time function, so the Beckmann integral runs from `x_c` to
//! `x_c + x_nc`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::LinkTimes;
use crate::error::{Error, Result};
use crate::network::{enumerate_routes, FlowVector, Network, ODPair, RouteSet};
use crate::paths;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepRule {
    /// Pure MSA, step `1/(n+1)` after `n` loads.
    Msa,
    /// Exact line search on the Beckmann objective (Frank-Wolfe).
    LineSearch,
    /// Line search along a conjugate combination of the current and
    /// previous target loads.
    ConjugateLineSearch,
}

/// Where all-or-nothing loading looks for shortest paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RouteUniverse {
    FullGraph,
    /// Only the `k` free-flow shortest routes of each O-D pair.
    TopK(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UeConfig {
    pub max_iterations: usize,
    pub relative_gap_tolerance: f64,
    pub step_rule: StepRule,
    pub route_universe: RouteUniverse,
}

impl Default for UeConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            relative_gap_tolerance: 1e-4,
            step_rule: StepRule::Msa,
            route_universe: RouteUniverse::FullGraph,
        }
    }
}

impl UeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        if !(self.relative_gap_tolerance > 0.0) {
            return Err(Error::InvalidArgument("relative gap tolerance must be positive".into()));
        }
        if self.route_universe == RouteUniverse::TopK(0) {
            return Err(Error::InvalidArgument("route universe needs k >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UeTraceRow {
    pub iteration: usize,
    pub gap: f64,
    pub beckmann: f64,
}

#[derive(Clone, Debug)]
pub struct UeResult {
    pub x_nc: FlowVector,
    pub iterations: usize,
    pub final_gap: f64,
    pub beckmann_value: f64,
    pub converged: bool,
    pub trace: Vec<UeTraceRow>,
    /// Per O-D, the averaged flow on every path that was ever loaded.
    pub route_flows: Vec<Vec<(Vec<usize>, f64)>>,
}

impl UeResult {
    pub fn write_trace_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.trace {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_inputs(net: &Network, ods: &[ODPair], x_c: &FlowVector) -> Result<()> {
    if x_c.len() != net.link_count() {
        return Err(Error::Dimension(format!(
            "background flow has {} entries for {} links",
            x_c.len(),
            net.link_count()
        )));
    }
    if let Some(&x) = x_c.0.iter().find(|x| !(**x >= 0.0)) {
        return Err(Error::NegativeFlow(x));
    }
    ods.iter().try_for_each(|od| net.validate_od(od))
}

/// Shortest-path loader for one solve; precomputes O-D grouping.
struct Loader<'a> {
    net: &'a Network,
    ods: &'a [ODPair],
    // origin index -> (od index, destination index)
    by_origin: BTreeMap<usize, Vec<(usize, usize)>>,
    restricted: Option<RouteSet>,
}

struct Load {
    flows: Vec<f64>,
    paths: Vec<Option<Vec<usize>>>,
    /// Σ g_i · shortest time_i
    shortest_total: f64,
}

impl<'a> Loader<'a> {
    fn new(net: &'a Network, ods: &'a [ODPair], universe: RouteUniverse) -> Result<Self> {
        let mut by_origin: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
        for (i, od) in ods.iter().enumerate() {
            if od.demand > 0.0 {
                let o = net.node_index(od.origin).expect("validated");
                let d = net.node_index(od.destination).expect("validated");
                by_origin.entry(o).or_default().push((i, d));
            }
        }
        let restricted = match universe {
            RouteUniverse::FullGraph => None,
            RouteUniverse::TopK(k) => Some(enumerate_routes(net, ods, k)?),
        };
        Ok(Self {
            net,
            ods,
            by_origin,
            restricted,
        })
    }

    fn load(&self, times: &[f64]) -> Result<Load> {
        let mut flows = vec![0.0; self.net.link_count()];
        let mut paths_out = vec![None; self.ods.len()];
        let mut shortest_total = 0.0;
        for (&o, dests) in &self.by_origin {
            let chosen: Vec<(usize, Vec<usize>, f64)> = match &self.restricted {
                None => {
                    let targets: Vec<usize> = dests.iter().map(|&(_, d)| d).collect();
                    let (dist, found) = paths::shortest_paths_from(self.net, times, o, &targets);
                    dests
                        .iter()
                        .zip(found)
                        .map(|(&(i, d), p)| {
                            let od = &self.ods[i];
                            p.map(|p| (i, p, dist[d])).ok_or(Error::Unreachable {
                                origin: od.origin,
                                destination: od.destination,
                            })
                        })
                        .collect::<Result<_>>()?
                }
                Some(rs) => dests
                    .iter()
                    .map(|&(i, _)| {
                        let best = rs
                            .routes(i)
                            .iter()
                            .min_by(|a, b| paths::compare_paths(self.net, times, &a.links, &b.links))
                            .expect("positive-demand O-D has routes");
                        (i, best.links.clone(), paths::path_cost(times, &best.links))
                    })
                    .collect(),
            };
            for (i, path, cost) in chosen {
                let g = self.ods[i].demand;
                for &a in &path {
                    flows[a] += g;
                }
                shortest_total += g * cost;
                paths_out[i] = Some(path);
            }
        }
        Ok(Load {
            flows,
            paths: paths_out,
            shortest_total,
        })
    }
}

/// Loads each O-D's full demand on its shortest path under `times`.
pub fn all_or_nothing(net: &Network, ods: &[ODPair], times: &[f64]) -> Result<FlowVector> {
    if times.len() != net.link_count() {
        return Err(Error::Dimension(format!("{} times for {} links", times.len(), net.link_count())));
    }
    if let Some(t) = times.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::InvalidArgument(format!("link time {t} is negative")));
    }
    ods.iter().try_for_each(|od| net.validate_od(od))?;
    let loader = Loader::new(net, ods, RouteUniverse::FullGraph)?;
    Ok(FlowVector(loader.load(times)?.flows))
}

/// `Σ_a ∫_{x_c}^{x_c + x_nc} t_a(s) ds`.
pub fn beckmann_objective(x_nc: &FlowVector, x_c: &FlowVector, times: &LinkTimes) -> f64 {
    (0..times.len())
        .map(|a| times.poly(a).integral(x_c[a], x_c[a] + x_nc[a]))
        .sum()
}

fn total_times(times: &LinkTimes, x_c: &FlowVector, x: &[f64]) -> Vec<f64> {
    (0..times.len()).map(|a| times.time(a, x_c[a] + x[a])).collect()
}

fn relative_gap(total_cost: f64, shortest_total: f64) -> f64 {
    if shortest_total > 0.0 {
        ((total_cost - shortest_total) / shortest_total).max(0.0)
    } else {
        (total_cost - shortest_total).max(0.0)
    }
}

/// Relative gap of `x_nc` against shortest paths under the total flow.
pub fn wardrop_gap(net: &Network, times: &LinkTimes, ods: &[ODPair], x_nc: &FlowVector, x_c: &FlowVector) -> Result<f64> {
    check_inputs(net, ods, x_c)?;
    if ods.iter().all(|od| od.demand == 0.0) {
        return Ok(0.0);
    }
    let t = total_times(times, x_c, &x_nc.0);
    let loader = Loader::new(net, ods, RouteUniverse::FullGraph)?;
    let load = loader.load(&t)?;
    let total: f64 = t.iter().zip(&x_nc.0).map(|(t, x)| t * x).sum();
    Ok(relative_gap(total, load.shortest_total))
}

fn line_search(times: &LinkTimes, x_c: &FlowVector, x: &[f64], y: &[f64]) -> f64 {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - a).collect();
    let slope = |lambda: f64| -> f64 {
        (0..times.len())
            .map(|a| times.time(a, x_c[a] + x[a] + lambda * d[a]) * d[a])
            .sum()
    };
    if slope(1.0) <= 0.0 {
        return 1.0;
    }
    if slope(0.0) >= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Weight of the previous target in the conjugate direction, keeping the new
/// direction conjugate to the last one under the diagonal Hessian `t'(x)`.
fn conjugate_weight(times: &LinkTimes, x_c: &FlowVector, x: &[f64], prev: &[f64], aon: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for a in 0..x.len() {
        let h = times.derivative(a, x_c[a] + x[a]);
        let dbar = prev[a] - x[a];
        let d = aon[a] - x[a];
        num += dbar * h * d;
        den += dbar * h * (d - dbar);
    }
    if den == 0.0 {
        return 0.0;
    }
    (num / den).clamp(0.0, 0.99)
}

/// Flow per path (link indices) of one O-D pair.
type PathFlows = BTreeMap<Vec<usize>, f64>;

/// Solves the traffic assignment problem for `ods` on top of background flow `x_c`.
///
/// A run that hits `max_iterations` still returns its last iterate, with
/// `converged == false`.
pub fn solve_ue_msa(
    net: &Network,
    times: &LinkTimes,
    ods: &[ODPair],
    x_c: &FlowVector,
    cfg: &UeConfig,
) -> Result<UeResult> {
    cfg.validate()?;
    check_inputs(net, ods, x_c)?;
    if times.len() != net.link_count() {
        return Err(Error::Dimension("link times do not match network".into()));
    }
    let n = net.link_count();
    if ods.iter().all(|od| od.demand == 0.0) {
        return Ok(UeResult {
            x_nc: FlowVector::zeros(n),
            iterations: 1,
            final_gap: 0.0,
            beckmann_value: 0.0,
            converged: true,
            trace: vec![UeTraceRow {
                iteration: 1,
                gap: 0.0,
                beckmann: 0.0,
            }],
            route_flows: vec![Vec::new(); ods.len()],
        });
    }
    let loader = Loader::new(net, ods, cfg.route_universe)?;

    let first = loader.load(&total_times(times, x_c, &vec![0.0; n]))?;
    let mut x = first.flows;
    let mut route_flows: Vec<BTreeMap<Vec<usize>, f64>> = vec![BTreeMap::new(); ods.len()];
    for (i, p) in first.paths.into_iter().enumerate() {
        if let Some(p) = p {
            route_flows[i].insert(p, ods[i].demand);
        }
    }

    let mut trace = Vec::new();
    let mut converged = false;
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    let mut target_prev: Option<(Vec<f64>, Vec<PathFlows>)> = None;
    for iter in 1..=cfg.max_iterations {
        iterations = iter;
        let t = total_times(times, x_c, &x);
        let load = loader.load(&t)?;
        let total: f64 = t.iter().zip(&x).map(|(t, x)| t * x).sum();
        gap = relative_gap(total, load.shortest_total);
        let xv = FlowVector(x.clone());
        trace.push(UeTraceRow {
            iteration: iter,
            gap,
            beckmann: beckmann_objective(&xv, x_c, times),
        });
        if gap <= cfg.relative_gap_tolerance {
            converged = true;
            break;
        }
        if iter == cfg.max_iterations {
            break;
        }
        let mut aon: BTreeMap<usize, (Vec<usize>, f64)> = BTreeMap::new();
        for (i, p) in load.paths.into_iter().enumerate() {
            if let Some(p) = p {
                aon.insert(i, (p, ods[i].demand));
            }
        }
        let (target, target_routes) = match (cfg.step_rule, target_prev.take()) {
            (StepRule::ConjugateLineSearch, Some((prev, prev_routes))) => {
                let alpha = conjugate_weight(times, x_c, &x, &prev, &load.flows);
                let flows: Vec<f64> = prev.iter().zip(&load.flows).map(|(s, y)| alpha * s + (1.0 - alpha) * y).collect();
                let mut routes: Vec<BTreeMap<Vec<usize>, f64>> = prev_routes;
                for (i, m) in routes.iter_mut().enumerate() {
                    for f in m.values_mut() {
                        *f *= alpha;
                    }
                    if let Some((p, g)) = aon.remove(&i) {
                        *m.entry(p).or_insert(0.0) += (1.0 - alpha) * g;
                    }
                    m.retain(|_, f| *f > 0.0);
                }
                (flows, routes)
            }
            _ => {
                let mut routes = vec![BTreeMap::new(); ods.len()];
                for (i, (p, g)) in aon {
                    routes[i].insert(p, g);
                }
                (load.flows, routes)
            }
        };
        let lambda = match cfg.step_rule {
            StepRule::Msa => 1.0 / (iter as f64 + 1.0),
            StepRule::LineSearch | StepRule::ConjugateLineSearch => line_search(times, x_c, &x, &target),
        };
        for (xa, ya) in x.iter_mut().zip(&target) {
            *xa += lambda * (ya - *xa);
        }
        for (current, aim) in route_flows.iter_mut().zip(&target_routes) {
            if aim.is_empty() {
                continue;
            }
            for f in current.values_mut() {
                *f *= 1.0 - lambda;
            }
            for (p, g) in aim {
                *current.entry(p.clone()).or_insert(0.0) += lambda * g;
            }
        }
        target_prev = Some((target, target_routes));
    }
    let x_nc = FlowVector(x);
    let beckmann_value = beckmann_objective(&x_nc, x_c, times);
    Ok(UeResult {
        x_nc,
        iterations,
        final_gap: gap,
        beckmann_value,
        converged,
        trace,
        route_flows: route_flows
            .into_iter()
            .map(|m| m.into_iter().collect())
            .collect(),
    })
}
