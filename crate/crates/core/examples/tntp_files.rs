// Writing and reading TNTP network and trips files, then assigning traffic.
//
// cargo run --example tntp_files

use cav_routing::cost::{BprParams, LinkTimes};
use cav_routing::network::FlowVector;
use cav_routing::synthetic::synthetic_grid;
use cav_routing::tntp::{parse_network_files, write_network, write_trips};
use cav_routing::ue::{solve_ue_msa, UeConfig};

/// Returns the relative gap of the assignment on the re-read network.
pub fn run_example() -> cav_routing::Result<f64> {
    let (net, ods) = synthetic_grid(3)?;
    let dir = std::env::temp_dir().join("cavroute-tntp");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("grid_net.tntp"), write_network(&net))?;
    std::fs::write(dir.join("grid_trips.tntp"), write_trips(&ods))?;

    let net_text = std::fs::read_to_string(dir.join("grid_net.tntp"))?;
    let trips_text = std::fs::read_to_string(dir.join("grid_trips.tntp"))?;
    let (net, ods) = parse_network_files(&net_text, &trips_text)?;
    let times = LinkTimes::new(&net, &BprParams::default());
    let r = solve_ue_msa(&net, &times, &ods, &FlowVector::zeros(net.link_count()), &UeConfig::default())?;
    println!(
        "read {} links and {} O-D pairs from {}; gap {:.2e} after {} iterations",
        net.link_count(),
        ods.len(),
        dir.display(),
        r.final_gap,
        r.iterations
    );
    Ok(r.final_gap)
}

#[allow(dead_code)]
fn main() -> cav_routing::Result<()> {
    run_example().map(|_| ())
}
