//! The `cavroute` command line.
//!
//! Exit codes: 0 success, 1 input error, 2 non-convergence (results are
//! still written).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::cost::{CostParams, LinkTimes};
use crate::error::{Error, Result};
use crate::experiments::{price_of_anarchy, run_sweep, SweepResult, SweepSpec};
use crate::network::{braess_fixture, enumerate_routes, FlowVector, Network, ODPair, RouteSet};
use crate::so::{ObjectiveKind, SoObjective};
use crate::stackelberg::{solve_mixed, EquilibriumConfig, EquilibriumResult, PenetrationRate};
use crate::ue::{solve_ue_msa, UeConfig};
use crate::{selfcheck, tntp};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "cavroute", version, about = "Mixed CAV / selfish traffic assignment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Solve the selfish user equilibrium
    Ue,
    /// Solve the mixed equilibrium at one penetration rate
    So,
    /// Sweep the penetration rate
    Sweep,
    /// Penetration sweeps on the built-in Braess network
    Braess,
    /// Run gradient, oracle and CD/CS self-tests
    Check,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// TNTP network file
    #[arg(long, global = true)]
    pub net: Option<PathBuf>,
    /// TNTP trips file
    #[arg(long, global = true)]
    pub trips: Option<PathBuf>,
    /// CAV penetration rate in [0,1]
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub objective: Option<ObjectiveArg>,
    #[arg(long, global = true, default_value_t = 3)]
    pub routes_per_od: usize,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// TOML file with model constants
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveArg {
    Time,
    EnergyCv,
    EnergyPhev,
}

impl ObjectiveArg {
    fn kind(self) -> ObjectiveKind {
        match self {
            ObjectiveArg::Time => ObjectiveKind::Time,
            ObjectiveArg::EnergyCv => ObjectiveKind::EnergyCv,
            ObjectiveArg::EnergyPhev => ObjectiveKind::EnergyPhev,
        }
    }

    fn slug(self) -> &'static str {
        match self {
            ObjectiveArg::Time => "time",
            ObjectiveArg::EnergyCv => "energy-cv",
            ObjectiveArg::EnergyPhev => "energy-phev",
        }
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_NOT_CONVERGED,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}

/// Runs one command; `Ok(false)` means something did not converge.
pub fn execute(cli: &Cli) -> Result<bool> {
    let c = &cli.common;
    let params = match &c.config {
        Some(path) => CostParams::load(path)?,
        None => CostParams::default(),
    };
    params.validate()?;
    if c.routes_per_od == 0 {
        return Err(Error::InvalidArgument("--routes-per-od must be at least 1".into()));
    }
    let gamma = c.gamma.map(PenetrationRate::new).transpose()?;
    match cli.command {
        Command::Ue => {
            let (net, ods) = load_inputs(c)?;
            std::fs::create_dir_all(&c.out)?;
            cmd_ue(&net, &ods, &params, &c.out)
        }
        Command::So => {
            let (net, ods) = load_inputs(c)?;
            let rs = enumerate_routes(&net, &ods, c.routes_per_od)?;
            std::fs::create_dir_all(&c.out)?;
            let obj = objective(c.objective.unwrap_or(ObjectiveArg::Time));
            let gamma = gamma.unwrap_or(PenetrationRate::new(1.0)?);
            cmd_so(&net, &rs, &ods, gamma, &obj, &params, c.seed, &c.out)
        }
        Command::Sweep => {
            let (net, ods) = load_inputs(c)?;
            let rs = enumerate_routes(&net, &ods, c.routes_per_od)?;
            let obj = c.objective.unwrap_or(ObjectiveArg::Time);
            let r = sweep(&net, &rs, &ods, obj, &params, c.seed, &c.out)?;
            report_sweep("sweep", &r);
            Ok(r.all_converged())
        }
        Command::Braess => {
            let (net, ods, _) = braess_fixture();
            let rs = enumerate_routes(&net, &ods, c.routes_per_od)?;
            let objectives = match c.objective {
                Some(o) => vec![o],
                None => vec![ObjectiveArg::Time, ObjectiveArg::EnergyCv],
            };
            let mut ok = true;
            for o in objectives {
                let dir = c.out.join(format!("braess-{}", o.slug()));
                let r = sweep(&net, &rs, &ods, o, &params, c.seed, &dir)?;
                report_sweep(o.slug(), &r);
                ok &= r.all_converged();
            }
            Ok(ok)
        }
        Command::Check => {
            let checks = selfcheck::run_all(c.seed)?;
            for chk in &checks {
                println!("{} {}: {}", if chk.passed { "PASS" } else { "FAIL" }, chk.name, chk.detail);
            }
            Ok(checks.iter().all(|c| c.passed))
        }
    }
}

fn objective(arg: ObjectiveArg) -> SoObjective {
    SoObjective::from_kind(arg.kind())
}

fn load_inputs(c: &CommonArgs) -> Result<(Network, Vec<ODPair>)> {
    let (Some(net), Some(trips)) = (&c.net, &c.trips) else {
        return Err(Error::InvalidArgument("--net and --trips are required".into()));
    };
    let net_text = std::fs::read_to_string(net)?;
    let trips_text = std::fs::read_to_string(trips)?;
    tntp::parse_network_files(&net_text, &trips_text)
}

fn equilibrium_config(seed: u64) -> EquilibriumConfig {
    let mut cfg = EquilibriumConfig::default();
    cfg.so.seed = seed;
    cfg
}

fn sweep(
    net: &Network,
    rs: &RouteSet,
    ods: &[ODPair],
    obj: ObjectiveArg,
    params: &CostParams,
    seed: u64,
    dir: &Path,
) -> Result<SweepResult> {
    let spec = SweepSpec {
        objective: objective(obj),
        params: params.clone(),
        config: equilibrium_config(seed),
        output_dir: Some(dir.to_path_buf()),
        ..SweepSpec::default()
    };
    run_sweep(&spec, net, rs, ods)
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.digits$}"))
}

fn report_sweep(label: &str, r: &SweepResult) {
    println!("[{label}] gamma  cav_min  noncav_min  cav_usd  noncav_usd  cav_time_sav%  cav_energy_sav%  converged");
    for row in &r.rows {
        let m = &row.metrics;
        println!(
            "[{label}] {:.2}  {}  {}  {}  {}  {}  {}  {}",
            row.gamma,
            fmt_opt(m.cav_avg_time_min, 3),
            fmt_opt(m.noncav_avg_time_min, 3),
            fmt_opt(m.cav_energy_usd, 4),
            fmt_opt(m.noncav_energy_usd, 4),
            fmt_opt(row.cav_time_savings_pct, 2),
            fmt_opt(row.cav_energy_savings_pct, 2),
            row.converged
        );
    }
    if let Ok(poa) = price_of_anarchy(r) {
        println!("[{label}] price of anarchy: {poa:.2}%");
    }
}

#[derive(Serialize)]
struct UeFlowRow {
    link_id: usize,
    tail: usize,
    head: usize,
    flow: f64,
    travel_time_min: f64,
}

fn cmd_ue(net: &Network, ods: &[ODPair], params: &CostParams, out: &Path) -> Result<bool> {
    let times = LinkTimes::new(net, &params.bpr);
    let r = solve_ue_msa(net, &times, ods, &FlowVector::zeros(net.link_count()), &UeConfig::default())?;
    let t = times.times(&r.x_nc.0);
    let mut w = csv::Writer::from_path(out.join("ue_flows.csv"))?;
    for (a, l) in net.links().iter().enumerate() {
        w.serialize(UeFlowRow {
            link_id: l.id,
            tail: l.tail,
            head: l.head,
            flow: r.x_nc[a],
            travel_time_min: t[a],
        })?;
    }
    w.flush()?;
    r.write_trace_csv(out.join("ue_trace.csv"))?;
    println!(
        "ue: {} iterations, relative gap {:.3e}, converged {}",
        r.iterations, r.final_gap, r.converged
    );
    Ok(r.converged)
}

#[derive(Serialize)]
struct MixedFlowRow {
    link_id: usize,
    x_c: f64,
    x_nc: f64,
    travel_time_min: f64,
}

#[derive(Serialize)]
struct RouteRow {
    od: usize,
    origin: usize,
    destination: usize,
    route: String,
    probability: f64,
}

#[allow(clippy::too_many_arguments)]
fn cmd_so(
    net: &Network,
    rs: &RouteSet,
    ods: &[ODPair],
    gamma: PenetrationRate,
    obj: &SoObjective,
    params: &CostParams,
    seed: u64,
    out: &Path,
) -> Result<bool> {
    let r = solve_mixed(net, rs, ods, gamma, obj, params, &equilibrium_config(seed))?;
    write_mixed(net, rs, ods, &r, params, out)?;
    let m = &r.metrics;
    println!(
        "so: gamma {:.3}, cav {} min / {} $, non-cav {} min / {} $, {} outer iterations, converged {}",
        gamma.value(),
        fmt_opt(m.cav_avg_time_min, 3),
        fmt_opt(m.cav_energy_usd, 4),
        fmt_opt(m.noncav_avg_time_min, 3),
        fmt_opt(m.noncav_energy_usd, 4),
        r.outer_iterations,
        r.converged
    );
    Ok(r.converged)
}

fn write_mixed(net: &Network, rs: &RouteSet, ods: &[ODPair], r: &EquilibriumResult, params: &CostParams, out: &Path) -> Result<()> {
    let times = LinkTimes::new(net, &params.bpr);
    let t = times.times(&r.total_flow().0);
    let mut w = csv::Writer::from_path(out.join("so_flows.csv"))?;
    for (a, l) in net.links().iter().enumerate() {
        w.serialize(MixedFlowRow {
            link_id: l.id,
            x_c: r.x_c[a],
            x_nc: r.x_nc[a],
            travel_time_min: t[a],
        })?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join("so_routes.csv"))?;
    for (i, (routes, od)) in rs.routes_per_od().iter().zip(ods).enumerate() {
        for (route, &p) in routes.iter().zip(r.p_c.row(i)) {
            let ids: Vec<String> = net.link_ids(&route.links).iter().map(|id| id.to_string()).collect();
            w.serialize(RouteRow {
                od: i,
                origin: od.origin,
                destination: od.destination,
                route: ids.join("-"),
                probability: p,
            })?;
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join("so_outer_trace.csv"))?;
    for row in &r.outer_trace {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flags() {
        let cli = Cli::try_parse_from(["cavroute", "so", "--gamma", "0.5", "--objective", "energy-cv", "--seed", "4"]).unwrap();
        assert_eq!(cli.command, Command::So);
        assert_eq!(cli.common.gamma, Some(0.5));
        assert_eq!(cli.common.objective, Some(ObjectiveArg::EnergyCv));
        assert_eq!(cli.common.routes_per_od, 3);
        assert_eq!(cli.common.seed, 4);
    }

    #[test]
    fn input_errors_exit_one() {
        assert_eq!(run(["cavroute", "ue"]), EXIT_INPUT);
        assert_eq!(run(["cavroute", "bogus"]), EXIT_INPUT);
        assert_eq!(run(["cavroute", "so", "--gamma", "1.5", "--net", "x", "--trips", "y"]), EXIT_INPUT);
        assert_eq!(run(["cavroute", "ue", "--net", "/nonexistent", "--trips", "/nonexistent"]), EXIT_INPUT);
    }
}
