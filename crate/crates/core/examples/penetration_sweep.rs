// Penetration-rate sweep on the Braess network with CSV and SVG output.
//
// cargo run --example penetration_sweep -- [output-dir]

use std::path::PathBuf;

use cav_routing::experiments::{price_of_anarchy, run_sweep, SweepResult, SweepSpec};
use cav_routing::network::{braess_fixture, enumerate_routes};

pub fn sweep_into(dir: PathBuf) -> cav_routing::Result<SweepResult> {
    let (net, ods, _) = braess_fixture();
    let routes = enumerate_routes(&net, &ods, 3)?;
    let spec = SweepSpec {
        output_dir: Some(dir),
        ..SweepSpec::default()
    };
    let sweep = run_sweep(&spec, &net, &routes, &ods)?;
    for row in &sweep.rows {
        println!(
            "gamma {:.2}: CAV {:>7} min, non-CAV {:>7} min",
            row.gamma,
            row.metrics.cav_avg_time_min.map_or("-".into(), |v| format!("{v:.2}")),
            row.metrics.noncav_avg_time_min.map_or("-".into(), |v| format!("{v:.2}")),
        );
    }
    println!("price of anarchy {:.2}%", price_of_anarchy(&sweep)?);
    Ok(sweep)
}

pub fn run_example() -> cav_routing::Result<SweepResult> {
    sweep_into(std::env::temp_dir().join("cavroute-penetration-sweep"))
}

#[allow(dead_code)]
fn main() -> cav_routing::Result<()> {
    match std::env::args().nth(1) {
        Some(dir) => sweep_into(dir.into()).map(|_| ()),
        None => run_example().map(|_| ()),
    }
}
