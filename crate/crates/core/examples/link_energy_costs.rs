// Link travel times, fuel cost of conventional vehicles, and PHEV
// efficiencies by drive cycle.
//
// cargo run --example link_energy_costs

use cav_routing::cost::{
    bpr_travel_time, cv_energy_rate, link_speed, marginal_travel_time, mu_lookup, CostParams, Mode, VehicleClass,
};
use cav_routing::network::Link;

/// Returns the fuel rate (g/mi) at 20, 40 and 60 mph.
pub fn run_example() -> cav_routing::Result<Vec<f64>> {
    let params = CostParams::default();
    let link = Link::new(1, 1, 2, 10.0, 1000.0, 8.0);
    for x in [0.0, 500.0, 1000.0, 1500.0] {
        let t = bpr_travel_time(x, &link, &params.bpr)?;
        let m = marginal_travel_time(x, &link, &params.bpr)?;
        let v = link_speed(x, &link, &params.bpr)?.mph().unwrap_or(0.0);
        println!("x={x:6.0}: t={t:6.2} min, marginal={m:6.2} min, speed={v:5.1} mph");
    }

    let rates: Vec<f64> = [20.0, 40.0, 60.0]
        .iter()
        .map(|&v| cv_energy_rate(v, 0.0, &params.cv))
        .collect();
    for (v, r) in [20, 40, 60].iter().zip(&rates) {
        println!("CV at {v} mph: {r:.1} g/mi, ${:.4}/mi", params.cv.gas_price * r / params.cv.grams_per_gallon);
    }

    for v in [15.0, 30.0, 55.0] {
        let cycle = params.bands.cycle(v);
        let cd = mu_lookup(VehicleClass::Phev, Mode::Cd, cycle, &params.cdcs)?;
        let cs = mu_lookup(VehicleClass::Phev, Mode::Cs, cycle, &params.cdcs)?;
        println!("PHEV at {v} mph ({cycle:?}): {cd} mi/kWh depleting, {cs} mi/gal sustaining");
    }
    Ok(rates)
}

#[allow(dead_code)]
fn main() -> cav_routing::Result<()> {
    run_example().map(|_| ())
}
