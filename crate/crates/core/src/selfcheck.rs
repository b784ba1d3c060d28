//! Numerical self-tests: analytic gradients against finite differences, the
//! fleet optimum against the marginal-cost oracle, and the CD/CS split
//! against a grid search.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cost::{CostParams, LinkTimes};
use crate::error::Result;
use crate::network::{braess_fixture, enumerate_routes, FlowVector, RouteProbabilityMatrix};
use crate::so::{cd_cs_route_split, gradient_fd_error, solve_so, system_optimum_oracle, RouteLinkEnergy, SoConfig, SoObjective, SoProblem};
use crate::ue::{StepRule, UeConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Uniformly random interior point of the simplex of dimension `n`.
pub fn random_interior(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| -rng.gen_range(1e-3..1.0f64).ln()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Worst finite-difference error of the time and CV-energy gradients on the
/// Braess network at `points` random interior points with random background.
pub fn gradient_checks(seed: u64, points: usize) -> Result<Vec<CheckOutcome>> {
    let (net, ods, _) = braess_fixture();
    let rs = enumerate_routes(&net, &ods, 3)?;
    let params = CostParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, obj) in [("gradient/time", SoObjective::Time), ("gradient/energy-cv", SoObjective::EnergyCv)] {
        let mut worst = 0.0f64;
        for _ in 0..points {
            // links 1 and 5 run at x/100 min: keep speeds below 80 mph
            let bg = FlowVector((0..net.link_count()).map(|_| rng.gen_range(2300.0..3500.0)).collect());
            let problem = SoProblem::new(&net, &rs, &ods, &bg, &params, &obj)?;
            let p = RouteProbabilityMatrix::new(vec![random_interior(3, &mut rng)])?;
            worst = worst.max(gradient_fd_error(&problem, &p, 1e-6)?);
        }
        out.push(outcome(name, worst < 1e-5, format!("max relative error {worst:.3e} over {points} points")));
    }
    Ok(out)
}

/// Fleet time optimum at full penetration against the marginal-cost oracle.
pub fn oracle_check() -> Result<CheckOutcome> {
    let (net, ods, _) = braess_fixture();
    let rs = enumerate_routes(&net, &ods, 3)?;
    let params = CostParams::default();
    let times = LinkTimes::new(&net, &params.bpr);
    let cfg = UeConfig {
        relative_gap_tolerance: 1e-9,
        max_iterations: 100_000,
        step_rule: StepRule::ConjugateLineSearch,
        ..UeConfig::default()
    };
    let oracle = system_optimum_oracle(&net, &times, &ods, &cfg)?;
    let bg = FlowVector::zeros(net.link_count());
    let obj = SoObjective::Time;
    let problem = SoProblem::new(&net, &rs, &ods, &bg, &params, &obj)?;
    let so = solve_so(&problem, &SoConfig::default())?;
    let total = |x: &FlowVector| times.times(&x.0).iter().zip(&x.0).map(|(t, x)| t * x).sum::<f64>();
    let (a, b) = (total(&so.x_c), total(&oracle.x_nc));
    let rel = (a - b).abs() / b;
    Ok(outcome(
        "oracle/braess-system-optimum",
        rel <= 1e-3,
        format!("projected gradient {a:.3} vs oracle {b:.3} veh-min (relative {rel:.2e})"),
    ))
}

fn route_cost(links: &[RouteLinkEnergy], y: &[f64], gas: f64, ele: f64) -> f64 {
    links.iter().zip(y).map(|(l, &y)| l.cost(y, gas, ele)).sum()
}

/// Cheapest route cost over the grid `y ∈ {0, step, ..., 1}^n` within the
/// battery budget (meet in the middle over the two halves of the route).
pub fn grid_search_cd_cs(links: &[RouteLinkEnergy], battery_kwh: f64, gas: f64, ele: f64, step: f64) -> f64 {
    let levels = (1.0 / step).round() as usize;
    let half = |ls: &[RouteLinkEnergy]| -> Vec<(f64, f64)> {
        let mut out = vec![(0.0, 0.0)];
        for l in ls {
            let mut next = Vec::with_capacity(out.len() * (levels + 1));
            for &(kwh, cost) in &out {
                for k in 0..=levels {
                    let y = k as f64 / levels as f64;
                    next.push((kwh + y * l.kwh(), cost + l.cost(y, gas, ele)));
                }
            }
            out = next;
        }
        out
    };
    let mid = links.len() / 2;
    let left = half(&links[..mid]);
    let mut right = half(&links[mid..]);
    right.sort_by(|a, b| a.0.total_cmp(&b.0));
    // prefix minimum of cost by energy
    let mut best_upto = Vec::with_capacity(right.len());
    let mut m = f64::INFINITY;
    for &(_, c) in &right {
        m = m.min(c);
        best_upto.push(m);
    }
    let eps = 1e-12 * battery_kwh.max(1.0);
    left.iter()
        .filter_map(|&(kwh, cost)| {
            let room = battery_kwh - kwh + eps;
            let n = right.partition_point(|r| r.0 <= room);
            (n > 0).then(|| cost + best_upto[n - 1])
        })
        .fold(f64::INFINITY, f64::min)
}

/// Greedy CD/CS split against the 0.01 grid on random routes of 1 to `max_links` links.
pub fn cd_cs_checks(seed: u64, routes: usize, max_links: usize) -> CheckOutcome {
    let params = CostParams::default();
    let (gas, ele) = (params.cv.gas_price, params.cdcs.electricity_price);
    let t = &params.cdcs;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_excess = f64::NEG_INFINITY;
    let mut passed = true;
    for _ in 0..routes {
        let n = rng.gen_range(1..=max_links);
        let links: Vec<RouteLinkEnergy> = (0..n)
            .map(|_| {
                let v = rng.gen_range(5.0..70.0);
                let cycle = params.bands.cycle(v);
                RouteLinkEnergy {
                    length: rng.gen_range(0.2..8.0),
                    mu_cd: t.phev_cd.get(cycle),
                    mu_cs: t.phev_cs.get(cycle),
                }
            })
            .collect();
        let demand: f64 = links.iter().map(|l| l.kwh()).sum();
        let e0 = rng.gen_range(0.0..demand * 1.2);
        let y = cd_cs_route_split(&links, e0, gas, ele);
        let greedy = route_cost(&links, &y, gas, ele);
        let grid = grid_search_cd_cs(&links, e0, gas, ele, 0.01);
        let step = links.iter().map(|l| 0.01 * l.savings(gas, ele).abs()).fold(0.0, f64::max);
        let excess = greedy - grid;
        worst_excess = worst_excess.max(excess);
        if excess > 1e-9 || grid - greedy > step + 1e-9 {
            passed = false;
        }
    }
    outcome(
        "cd-cs/grid-search",
        passed,
        format!("{routes} routes, greedy minus grid at most {worst_excess:.3e} $"),
    )
}

pub fn run_all(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = gradient_checks(seed, 50)?;
    out.push(oracle_check()?);
    out.push(cd_cs_checks(seed, 40, 4));
    Ok(out)
}
