// A plug-in hybrid fleet routed for energy cost on a synthetic grid, with
// the battery spent where electricity saves the most.
//
// cargo run --example phev_fleet_routing

use cav_routing::cost::CostParams;
use cav_routing::network::{enumerate_routes, FlowVector};
use cav_routing::so::{solve_so, PhevSettings, SoConfig, SoObjective, SoProblem, SoResult};
use cav_routing::synthetic::synthetic_grid;

pub fn run_example() -> cav_routing::Result<SoResult> {
    let (net, ods) = synthetic_grid(7)?;
    let routes = enumerate_routes(&net, &ods, 3)?;
    let params = CostParams::default();
    let none = FlowVector::zeros(net.link_count());
    let objective = SoObjective::EnergyPhev(PhevSettings {
        initial_energy_kwh: 1.5,
        ..PhevSettings::default()
    });
    let problem = SoProblem::new(&net, &routes, &ods, &none, &params, &objective)?;
    let r = solve_so(&problem, &SoConfig { seed: 7, ..SoConfig::default() })?;

    let y = r.y.as_ref().expect("PHEV solve reports CD fractions");
    for (i, od) in ods.iter().enumerate() {
        for (k, route) in routes.routes(i).iter().enumerate() {
            let p = r.p_c.row(i)[k];
            if p > 1e-6 {
                let cd: Vec<String> = y[i][k].iter().map(|v| format!("{v:.2}")).collect();
                println!(
                    "{} -> {}: route {:?} share {p:.3}, CD fractions [{}]",
                    od.origin,
                    od.destination,
                    net.link_ids(&route.links),
                    cd.join(" ")
                );
            }
        }
    }
    println!(
        "fleet energy ${:.2}/hr, best of start {}, local optimum: {}",
        r.objective_value, r.start_index, r.local_optimum
    );
    Ok(r)
}

#[allow(dead_code)]
fn main() -> cav_routing::Result<()> {
    run_example().map(|_| ())
}
