// Full sweep on a seeded 16-node grid, compared with the price of anarchy
// from the marginal-cost oracle.
//
// cargo run --example synthetic_grid_poa

use cav_routing::cost::CostParams;
use cav_routing::experiments::{oracle_price_of_anarchy, price_of_anarchy, run_sweep, SweepSpec};
use cav_routing::network::enumerate_routes;
use cav_routing::synthetic::synthetic_grid;
use cav_routing::ue::{StepRule, UeConfig};

/// Returns (sweep PoA %, oracle PoA %, every point converged).
pub fn run_example() -> cav_routing::Result<(f64, f64, bool)> {
    let (net, ods) = synthetic_grid(0)?;
    let routes = enumerate_routes(&net, &ods, 3)?;
    let sweep = run_sweep(&SweepSpec::default(), &net, &routes, &ods)?;
    let cfg = UeConfig {
        relative_gap_tolerance: 1e-9,
        max_iterations: 100_000,
        step_rule: StepRule::ConjugateLineSearch,
        ..UeConfig::default()
    };
    let oracle = oracle_price_of_anarchy(&net, &ods, &CostParams::default(), &cfg)?;
    let poa = price_of_anarchy(&sweep)?;
    println!("{} links, {} O-D pairs", net.link_count(), ods.len());
    println!("sweep PoA {poa:.3}%, oracle PoA {oracle:.3}%, all converged: {}", sweep.all_converged());
    Ok((poa, oracle, sweep.all_converged()))
}

#[allow(dead_code)]
fn main() -> cav_routing::Result<()> {
    run_example().map(|_| ())
}
