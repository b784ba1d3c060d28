// Selfish routing on the Braess network: every driver ends up on 1-4-5.
//
// cargo run --example braess_user_equilibrium

use cav_routing::cost::{BprParams, LinkTimes};
use cav_routing::network::{braess_fixture, FlowVector};
use cav_routing::ue::{solve_ue_msa, wardrop_gap, UeConfig};

/// Returns (link flows, average minutes per vehicle).
pub fn run_example() -> cav_routing::Result<(Vec<f64>, f64)> {
    let (net, ods, _) = braess_fixture();
    let times = LinkTimes::new(&net, &BprParams::default());
    let none = FlowVector::zeros(net.link_count());
    let r = solve_ue_msa(&net, &times, &ods, &none, &UeConfig::default())?;

    let t = times.times(&r.x_nc.0);
    let total: f64 = t.iter().zip(&r.x_nc.0).map(|(t, x)| t * x).sum();
    let avg = total / ods[0].demand;
    for (l, x) in net.links().iter().zip(&r.x_nc.0) {
        println!("link {} ({} -> {}): {:7.1} veh/hr", l.id, l.tail, l.head, x);
    }
    println!("average travel time {avg:.2} min after {} iterations", r.iterations);
    println!("relative gap {:.2e}", wardrop_gap(&net, &times, &ods, &r.x_nc, &none)?);
    Ok((r.x_nc.0, avg))
}

#[allow(dead_code)]
fn main() -> cav_routing::Result<()> {
    run_example().map(|_| ())
}
