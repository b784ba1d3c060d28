//! Mixed CAV / non-CAV equilibrium at a given penetration rate.
//!
//! Starting from `x_c = 0`, the selfish user equilibrium and the fleet
//! optimum are solved alternately, each against the other's latest flow,
//! until the concatenated flow vector stops moving.

use serde::{Deserialize, Serialize};

use crate::cost::{cv_link_energy_dollars, CostParams, LinkTimes};
use crate::error::{Error, Result};
use crate::network::{total_demand, FlowVector, Network, ODPair, RouteProbabilityMatrix, RouteSet};
use crate::so::{solve_so_warm, CdFractions, SoConfig, SoObjective, SoProblem, SoResult};
use crate::ue::{solve_ue_msa, StepRule, UeConfig, UeResult};

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct PenetrationRate(f64);

impl PenetrationRate {
    pub fn new(gamma: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&gamma) {
            Ok(Self(gamma))
        } else {
            Err(Error::InvalidArgument(format!("penetration rate {gamma} outside [0,1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Uniform per-O-D split into (CAV, non-CAV) demand.
pub fn split_demand(ods: &[ODPair], gamma: PenetrationRate) -> (Vec<ODPair>, Vec<ODPair>) {
    let g = gamma.value();
    ods.iter()
        .map(|od| {
            let cav = od.demand * g;
            (
                ODPair { demand: cav, ..*od },
                ODPair {
                    demand: od.demand - cav,
                    ..*od
                },
            )
        })
        .unzip()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumConfig {
    pub max_outer_iterations: usize,
    /// Relative L1 change of `(x_c, x_nc)` between outer iterations.
    pub flow_change_tolerance: f64,
    /// Fixed damping of successive fleet solutions; `None` means undamped.
    pub damping: Option<f64>,
    /// Switch on damping 0.5 when the change metric oscillates.
    pub auto_damping: bool,
    pub ue: UeConfig,
    pub so: SoConfig,
}

impl Default for EquilibriumConfig {
    fn default() -> Self {
        Self {
            max_outer_iterations: 50,
            flow_change_tolerance: 1e-4,
            damping: None,
            auto_damping: true,
            ue: UeConfig {
                max_iterations: 20_000,
                relative_gap_tolerance: 1e-7,
                step_rule: StepRule::ConjugateLineSearch,
                ..UeConfig::default()
            },
            so: SoConfig::default(),
        }
    }
}

impl EquilibriumConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iterations == 0 || !(self.flow_change_tolerance > 0.0) {
            return Err(Error::InvalidArgument("outer iterations and tolerance must be positive".into()));
        }
        if let Some(d) = self.damping {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::InvalidArgument(format!("damping {d} outside (0,1]")));
            }
        }
        self.ue.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterTraceRow {
    pub iteration: usize,
    pub flow_change: f64,
    pub ue_gap: f64,
    pub so_residual: f64,
    pub damping: Option<f64>,
}

/// Per-vehicle averages; a class without demand has no metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub cav_avg_time_min: Option<f64>,
    pub noncav_avg_time_min: Option<f64>,
    pub cav_energy_usd: Option<f64>,
    pub noncav_energy_usd: Option<f64>,
    pub system_avg_time_min: Option<f64>,
    pub system_energy_usd: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct EquilibriumResult {
    pub demand_c: Vec<ODPair>,
    pub demand_nc: Vec<ODPair>,
    pub x_c: FlowVector,
    pub x_nc: FlowVector,
    pub p_c: RouteProbabilityMatrix,
    pub y: Option<CdFractions>,
    pub converged: bool,
    pub ue_converged: bool,
    pub so_converged: bool,
    pub outer_iterations: usize,
    pub outer_trace: Vec<OuterTraceRow>,
    pub metrics: ClassMetrics,
}

impl EquilibriumResult {
    pub fn total_flow(&self) -> FlowVector {
        self.x_c.add(&self.x_nc)
    }
}

fn relative_change(prev: (&FlowVector, &FlowVector), next: (&FlowVector, &FlowVector)) -> f64 {
    let diff = prev.0.l1_distance(next.0) + prev.1.l1_distance(next.1);
    let scale = next.0.l1_norm() + next.1.l1_norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

fn oscillating(changes: &[f64]) -> bool {
    if changes.len() < 6 {
        return false;
    }
    let tail = &changes[changes.len() - 6..];
    let signs: Vec<f64> = tail.windows(2).map(|w| w[1] - w[0]).filter(|d| *d != 0.0).collect();
    signs.windows(2).filter(|w| w[0].signum() != w[1].signum()).count() >= 2
}

struct Mixed<'a> {
    net: &'a Network,
    rs: &'a RouteSet,
    ods_c: &'a [ODPair],
    objective: &'a SoObjective,
    params: &'a CostParams,
    cfg: &'a EquilibriumConfig,
    times: LinkTimes,
}

impl Mixed<'_> {
    fn so(&self, background: &FlowVector, start: &RouteProbabilityMatrix) -> Result<SoResult> {
        let problem = SoProblem::new(self.net, self.rs, self.ods_c, background, self.params, self.objective)?;
        solve_so_warm(&problem, &self.cfg.so, start)
    }
}

pub fn solve_mixed(
    net: &Network,
    rs: &RouteSet,
    ods: &[ODPair],
    gamma: PenetrationRate,
    objective: &SoObjective,
    params: &CostParams,
    cfg: &EquilibriumConfig,
) -> Result<EquilibriumResult> {
    let (cav, noncav) = split_demand(ods, gamma);
    solve_mixed_split(net, rs, &cav, &noncav, objective, params, cfg)
}

/// [`solve_mixed`] with explicit per-class demand.
pub fn solve_mixed_split(
    net: &Network,
    rs: &RouteSet,
    ods_c: &[ODPair],
    ods_nc: &[ODPair],
    objective: &SoObjective,
    params: &CostParams,
    cfg: &EquilibriumConfig,
) -> Result<EquilibriumResult> {
    cfg.validate()?;
    params.validate()?;
    if ods_c.len() != ods_nc.len() || rs.od_count() != ods_c.len() {
        return Err(Error::Dimension("per-class demand and route set disagree".into()));
    }
    let m = Mixed {
        net,
        rs,
        ods_c,
        objective,
        params,
        cfg,
        times: LinkTimes::new(net, &params.bpr),
    };
    let n = net.link_count();
    let mut x_c = FlowVector::zeros(n);
    let mut x_nc = FlowVector::zeros(n);
    let mut p = RouteProbabilityMatrix::uniform(rs);
    let mut y = None;
    // (background it was solved against, result)
    let mut last_so: Option<(FlowVector, SoResult)> = None;
    let mut last_ue: Option<(FlowVector, UeResult)> = None;
    let mut damping = cfg.damping;
    let mut changes = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut ue_converged = false;
    let mut so_converged = false;
    let mut outer_iterations = 0;

    for k in 1..=cfg.max_outer_iterations {
        outer_iterations = k;
        let ue = match &last_ue {
            // same background: the selfish problem is unchanged
            Some((bg, prev)) if bg.0 == x_c.0 => prev.clone(),
            _ => solve_ue_msa(net, &m.times, ods_nc, &x_c, &cfg.ue)?,
        };
        let so = match &last_so {
            // same background: the fleet problem is unchanged
            Some((bg, prev)) if bg.0 == ue.x_nc.0 => prev.clone(),
            _ => m.so(&ue.x_nc, &p)?,
        };
        ue_converged = ue.converged;
        so_converged = so.converged;
        let (new_p, new_x_c) = match (damping, k) {
            (Some(d), k) if k > 1 && d < 1.0 => {
                let rows: Vec<Vec<f64>> = p
                    .rows()
                    .iter()
                    .zip(so.p_c.rows())
                    .map(|(a, b)| a.iter().zip(b).map(|(a, b)| a + d * (b - a)).collect())
                    .collect();
                let xc: Vec<f64> = x_c.0.iter().zip(&so.x_c.0).map(|(a, b)| a + d * (b - a)).collect();
                (RouteProbabilityMatrix::from_rows_unchecked(rows), FlowVector(xc))
            }
            _ => (so.p_c.clone(), so.x_c.clone()),
        };
        let change = relative_change((&x_c, &x_nc), (&new_x_c, &ue.x_nc));
        trace.push(OuterTraceRow {
            iteration: k,
            flow_change: change,
            ue_gap: ue.final_gap,
            so_residual: so.kkt_residual,
            damping,
        });
        changes.push(change);
        let background = std::mem::replace(&mut x_c, new_x_c);
        x_nc = ue.x_nc.clone();
        p = new_p;
        y = so.y.clone();
        last_so = Some((x_nc.clone(), so));
        last_ue = Some((background, ue));
        if change <= cfg.flow_change_tolerance {
            converged = true;
            break;
        }
        if damping.is_none() && cfg.auto_damping && oscillating(&changes) {
            damping = Some(0.5);
        }
    }
    let metrics = class_metrics(net, params, ods_c, ods_nc, &x_c, &x_nc)?;
    Ok(EquilibriumResult {
        demand_c: ods_c.to_vec(),
        demand_nc: ods_nc.to_vec(),
        x_c,
        x_nc,
        p_c: p,
        y,
        converged: converged && ue_converged && so_converged,
        ue_converged,
        so_converged,
        outer_iterations,
        outer_trace: trace,
        metrics,
    })
}

/// Flow change produced by one more forced outer iteration from `result`.
pub fn fixed_point_change(
    result: &EquilibriumResult,
    net: &Network,
    rs: &RouteSet,
    objective: &SoObjective,
    params: &CostParams,
    cfg: &EquilibriumConfig,
) -> Result<f64> {
    let m = Mixed {
        net,
        rs,
        ods_c: &result.demand_c,
        objective,
        params,
        cfg,
        times: LinkTimes::new(net, &params.bpr),
    };
    let ue = solve_ue_msa(net, &m.times, &result.demand_nc, &result.x_c, &cfg.ue)?;
    let so = m.so(&ue.x_nc, &result.p_c)?;
    Ok(relative_change((&result.x_c, &result.x_nc), (&so.x_c, &ue.x_nc)))
}

fn class_metrics(
    net: &Network,
    params: &CostParams,
    ods_c: &[ODPair],
    ods_nc: &[ODPair],
    x_c: &FlowVector,
    x_nc: &FlowVector,
) -> Result<ClassMetrics> {
    let times = LinkTimes::new(net, &params.bpr);
    let x = x_c.add(x_nc);
    let t = times.times(&x.0);
    let e: Vec<f64> = net
        .links()
        .iter()
        .zip(&x.0)
        .map(|(l, &xa)| cv_link_energy_dollars(xa, l, &params.bpr, &params.cv))
        .collect::<Result<_>>()?;
    let per_vehicle = |per_link: &[f64], flows: &FlowVector, demand: f64| -> Option<f64> {
        (demand > 0.0).then(|| per_link.iter().zip(&flows.0).map(|(c, f)| c * f).sum::<f64>() / demand)
    };
    let (gc, gnc) = (total_demand(ods_c), total_demand(ods_nc));
    Ok(ClassMetrics {
        cav_avg_time_min: per_vehicle(&t, x_c, gc),
        noncav_avg_time_min: per_vehicle(&t, x_nc, gnc),
        cav_energy_usd: per_vehicle(&e, x_c, gc),
        noncav_energy_usd: per_vehicle(&e, x_nc, gnc),
        system_avg_time_min: per_vehicle(&t, &x, gc + gnc),
        system_energy_usd: per_vehicle(&e, &x, gc + gnc),
    })
}

/// Per-class averages on the final flows of `result`.
pub fn per_class_metrics(result: &EquilibriumResult, net: &Network, params: &CostParams) -> Result<ClassMetrics> {
    class_metrics(net, params, &result.demand_c, &result.demand_nc, &result.x_c, &result.x_nc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{braess_fixture, build_network, enumerate_routes, Link};
    use crate::so::solve_so;

    fn braess() -> (Network, Vec<ODPair>, RouteSet) {
        let (net, ods, _) = braess_fixture();
        let rs = enumerate_routes(&net, &ods, 3).unwrap();
        (net, ods, rs)
    }

    fn gamma(g: f64) -> PenetrationRate {
        PenetrationRate::new(g).unwrap()
    }

    #[test]
    fn split_examples() {
        let (_, ods, _) = braess();
        let (c, n) = split_demand(&ods, gamma(0.5));
        assert_eq!((c[0].demand, n[0].demand), (2000.0, 2000.0));
        let (c, n) = split_demand(&ods, gamma(0.0));
        assert_eq!((c[0].demand, n[0].demand), (0.0, 4000.0));
        let (c, n) = split_demand(&ods, gamma(1.0));
        assert_eq!((c[0].demand, n[0].demand), (4000.0, 0.0));
        assert!(PenetrationRate::new(1.5).is_err());
        assert!(PenetrationRate::new(-0.1).is_err());
    }

    #[test]
    fn endpoints_match_single_class_solvers() {
        let (net, ods, rs) = braess();
        let params = CostParams::default();
        let cfg = EquilibriumConfig::default();
        let obj = SoObjective::Time;

        let r0 = solve_mixed(&net, &rs, &ods, gamma(0.0), &obj, &params, &cfg).unwrap();
        assert!(r0.converged);
        let times = LinkTimes::new(&net, &params.bpr);
        let ue = solve_ue_msa(&net, &times, &ods, &FlowVector::zeros(5), &cfg.ue).unwrap();
        assert_eq!(r0.x_nc.0, ue.x_nc.0);
        assert!((r0.metrics.noncav_avg_time_min.unwrap() - 80.0).abs() < 0.1);
        assert_eq!(r0.metrics.cav_avg_time_min, None);

        let r1 = solve_mixed(&net, &rs, &ods, gamma(1.0), &obj, &params, &cfg).unwrap();
        assert!(r1.converged);
        let bg = FlowVector::zeros(5);
        let prob = SoProblem::new(&net, &rs, &ods, &bg, &params, &obj).unwrap();
        let so = solve_so(&prob, &cfg.so).unwrap();
        assert_eq!(r1.x_c.0, so.x_c.0);
        assert!((r1.metrics.cav_avg_time_min.unwrap() - 64.6875).abs() < 0.1);
        assert_eq!(r1.metrics.noncav_avg_time_min, None);
    }

    #[test]
    fn mixed_braess_properties() {
        let (net, ods, rs) = braess();
        let params = CostParams::default();
        let cfg = EquilibriumConfig::default();
        let obj = SoObjective::Time;
        for g in [0.05, 0.3, 0.5, 0.8] {
            let r = solve_mixed(&net, &rs, &ods, gamma(g), &obj, &params, &cfg).unwrap();
            assert!(r.converged, "gamma {g}: {:?}", r.outer_trace);
            // conservation out of the origin (links 1 and 2)
            assert!((r.x_c[0] + r.x_c[1] - g * 4000.0).abs() < 1e-6);
            assert!((r.x_nc[0] + r.x_nc[1] - (1.0 - g) * 4000.0).abs() < 1e-6);
            let x = r.total_flow();
            for a in 0..5 {
                assert_eq!(x[a], r.x_c[a] + r.x_nc[a]);
            }
            let extra = fixed_point_change(&r, &net, &rs, &obj, &params, &cfg).unwrap();
            assert!(extra <= cfg.flow_change_tolerance, "gamma {g}: {extra}");
        }
        let r = solve_mixed(&net, &rs, &ods, gamma(0.05), &obj, &params, &cfg).unwrap();
        assert!((r.metrics.noncav_avg_time_min.unwrap() - 80.0).abs() / 80.0 < 0.01);
    }

    #[test]
    fn symmetric_network_equal_class_times() {
        let net = build_network(vec![
            Link::new(1, 1, 2, 5.0, 100.0, 3.0),
            Link::new(2, 2, 4, 5.0, 100.0, 3.0),
            Link::new(3, 1, 3, 5.0, 100.0, 3.0),
            Link::new(4, 3, 4, 5.0, 100.0, 3.0),
        ])
        .unwrap();
        let ods = [ODPair::new(1, 4, 300.0)];
        let rs = enumerate_routes(&net, &ods, 3).unwrap();
        let params = CostParams::default();
        let cfg = EquilibriumConfig::default();
        for g in [0.25, 0.5, 0.9] {
            let r = solve_mixed(&net, &rs, &ods, gamma(g), &SoObjective::Time, &params, &cfg).unwrap();
            let m = per_class_metrics(&r, &net, &params).unwrap();
            let (c, n) = (m.cav_avg_time_min.unwrap(), m.noncav_avg_time_min.unwrap());
            assert!((c - n).abs() / c < 1e-6, "{c} vs {n}");
        }
    }

    #[test]
    fn oscillation_detector() {
        assert!(!oscillating(&[1.0, 0.5, 0.25, 0.1, 0.05, 0.01]));
        assert!(oscillating(&[1.0, 0.5, 0.7, 0.4, 0.6, 0.3]));
        assert!(!oscillating(&[1.0, 0.5]));
    }

    #[test]
    fn rejects_bad_config() {
        let (net, ods, rs) = braess();
        let cfg = EquilibriumConfig {
            damping: Some(0.0),
            ..EquilibriumConfig::default()
        };
        let r = solve_mixed(&net, &rs, &ods, gamma(0.5), &SoObjective::Time, &CostParams::default(), &cfg);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }
}
