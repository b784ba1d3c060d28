// A fully automated fleet routed for total travel time, checked against the
// marginal-cost reformulation.
//
// cargo run --example braess_system_optimum

use cav_routing::cost::{CostParams, LinkTimes};
use cav_routing::network::{braess_fixture, enumerate_routes, FlowVector};
use cav_routing::so::{solve_so, system_optimum_oracle, SoConfig, SoObjective, SoProblem};
use cav_routing::ue::{StepRule, UeConfig};

/// Returns (route flows, fleet minutes per vehicle, oracle minutes per vehicle).
pub fn run_example() -> cav_routing::Result<(Vec<f64>, f64, f64)> {
    let (net, ods, _) = braess_fixture();
    let routes = enumerate_routes(&net, &ods, 3)?;
    let params = CostParams::default();
    let none = FlowVector::zeros(net.link_count());
    let objective = SoObjective::Time;

    let problem = SoProblem::new(&net, &routes, &ods, &none, &params, &objective)?;
    let so = solve_so(&problem, &SoConfig::default())?;
    let demand = ods[0].demand;
    let flows: Vec<f64> = so.p_c.row(0).iter().map(|p| p * demand).collect();
    for (route, f) in routes.routes(0).iter().zip(&flows) {
        println!("route {:?}: {f:7.1} veh/hr", net.link_ids(&route.links));
    }
    let fleet = so.objective_value / demand;

    let times = LinkTimes::new(&net, &params.bpr);
    let cfg = UeConfig {
        relative_gap_tolerance: 1e-9,
        step_rule: StepRule::ConjugateLineSearch,
        ..UeConfig::default()
    };
    let oracle = system_optimum_oracle(&net, &times, &ods, &cfg)?;
    let t = times.times(&oracle.x_nc.0);
    let oracle_avg = t.iter().zip(&oracle.x_nc.0).map(|(t, x)| t * x).sum::<f64>() / demand;
    println!("fleet optimum {fleet:.4} min/veh, marginal-cost oracle {oracle_avg:.4} min/veh");
    Ok((flows, fleet, oracle_avg))
}

#[allow(dead_code)]
fn main() -> cav_routing::Result<()> {
    run_example().map(|_| ())
}
