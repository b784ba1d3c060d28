//! Penetration-rate sweeps, savings against the all-selfish baseline, and
//! CSV / SVG artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{CostParams, LinkTimes};
use crate::error::{Error, Result};
use crate::network::{total_demand, FlowVector, Network, ODPair, RouteSet};
use crate::so::{system_optimum_oracle, ObjectiveKind, SoObjective};
use crate::stackelberg::{solve_mixed, ClassMetrics, EquilibriumConfig, OuterTraceRow, PenetrationRate};
use crate::ue::{solve_ue_msa, UeConfig};

/// `0.0, 0.05, ..., 1.0`
pub fn default_gammas() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub gamma_values: Vec<f64>,
    pub objective: SoObjective,
    pub params: CostParams,
    pub config: EquilibriumConfig,
    pub output_dir: Option<PathBuf>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            gamma_values: default_gammas(),
            objective: SoObjective::Time,
            params: CostParams::default(),
            config: EquilibriumConfig::default(),
            output_dir: None,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        for &g in &self.gamma_values {
            PenetrationRate::new(g)?;
        }
        if self.gamma_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("gamma values must be sorted and unique".into()));
        }
        self.params.validate()?;
        self.config.validate()
    }
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub gamma: f64,
    pub metrics: ClassMetrics,
    pub cav_time_savings_pct: Option<f64>,
    pub noncav_time_savings_pct: Option<f64>,
    pub cav_energy_savings_pct: Option<f64>,
    pub noncav_energy_savings_pct: Option<f64>,
    pub converged: bool,
    pub outer_iterations: usize,
    pub outer_trace: Vec<OuterTraceRow>,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub objective: ObjectiveKind,
    /// Metrics of the all-selfish (γ = 0) solution.
    pub baseline: ClassMetrics,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn all_converged(&self) -> bool {
        self.rows.iter().all(|r| r.converged)
    }

    pub fn row(&self, gamma: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.gamma == gamma)
    }
}

/// `(baseline - value) / baseline * 100`
pub fn savings_pct(baseline: f64, value: f64) -> f64 {
    (baseline - value) / baseline * 100.0
}

fn savings(gamma: f64, baseline: Option<f64>, value: Option<f64>) -> Option<f64> {
    if gamma == 0.0 {
        return Some(0.0);
    }
    Some(savings_pct(baseline?, value?))
}

pub fn run_sweep(spec: &SweepSpec, net: &Network, rs: &RouteSet, ods: &[ODPair]) -> Result<SweepResult> {
    spec.validate()?;
    let mut gammas = spec.gamma_values.clone();
    let has_baseline = gammas.first() == Some(&0.0);
    if !has_baseline {
        gammas.insert(0, 0.0);
    }
    let solved = gammas
        .par_iter()
        .map(|&g| solve_mixed(net, rs, ods, PenetrationRate::new(g)?, &spec.objective, &spec.params, &spec.config))
        .collect::<Result<Vec<_>>>()?;
    let baseline = solved[0].metrics.clone();
    let base_time = baseline.system_avg_time_min;
    let base_energy = baseline.system_energy_usd;
    let rows = gammas
        .iter()
        .zip(solved)
        .skip(usize::from(!has_baseline))
        .map(|(&gamma, r)| {
            let m = r.metrics;
            SweepRow {
                gamma,
                cav_time_savings_pct: savings(gamma, base_time, m.cav_avg_time_min),
                noncav_time_savings_pct: savings(gamma, base_time, m.noncav_avg_time_min),
                cav_energy_savings_pct: savings(gamma, base_energy, m.cav_energy_usd),
                noncav_energy_savings_pct: savings(gamma, base_energy, m.noncav_energy_usd),
                metrics: m,
                converged: r.converged,
                outer_iterations: r.outer_iterations,
                outer_trace: r.outer_trace,
            }
        })
        .collect();
    let result = SweepResult {
        objective: spec.objective.kind(),
        baseline,
        rows,
    };
    if let Some(dir) = &spec.output_dir {
        std::fs::create_dir_all(dir)?;
        emit_csv(&result, dir.join("sweep.csv"))?;
        for kind in PlotKind::ALL {
            emit_plot(&result, kind, dir.join(format!("{}.svg", kind.name())))?;
        }
    }
    Ok(result)
}

/// Savings of the fully automated fleet (γ = 1) over the all-selfish
/// baseline, in the sweep objective's own metric.
pub fn price_of_anarchy(sweep: &SweepResult) -> Result<f64> {
    let missing = |g: f64| Error::InvalidArgument(format!("sweep lacks gamma = {g}"));
    sweep.row(0.0).ok_or_else(|| missing(0.0))?;
    let full = sweep.row(1.0).ok_or_else(|| missing(1.0))?;
    let value = match sweep.objective {
        ObjectiveKind::Time => full.cav_time_savings_pct,
        ObjectiveKind::EnergyCv | ObjectiveKind::EnergyPhev => full.cav_energy_savings_pct,
    };
    value.ok_or_else(|| Error::InvalidArgument("gamma = 1 row has no fleet metric".into()))
}

/// Travel-time price of anarchy from the UE and the marginal-cost oracle, in percent.
pub fn oracle_price_of_anarchy(net: &Network, ods: &[ODPair], params: &CostParams, cfg: &UeConfig) -> Result<f64> {
    let times = LinkTimes::new(net, &params.bpr);
    let zero = FlowVector::zeros(net.link_count());
    let ue = solve_ue_msa(net, &times, ods, &zero, cfg)?;
    let so = system_optimum_oracle(net, &times, ods, cfg)?;
    let total = |x: &FlowVector| times.times(&x.0).iter().zip(&x.0).map(|(t, x)| t * x).sum::<f64>();
    let g = total_demand(ods);
    Ok(savings_pct(total(&ue.x_nc) / g, total(&so.x_nc) / g))
}

/// One CSV line of a sweep; absent metrics are empty cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub gamma: f64,
    pub cav_avg_time_min: Option<f64>,
    pub noncav_avg_time_min: Option<f64>,
    pub cav_energy_usd: Option<f64>,
    pub noncav_energy_usd: Option<f64>,
    pub cav_time_savings_pct: Option<f64>,
    pub noncav_time_savings_pct: Option<f64>,
    pub cav_energy_savings_pct: Option<f64>,
    pub noncav_energy_savings_pct: Option<f64>,
    pub converged: bool,
    pub outer_iterations: usize,
}

pub const CSV_HEADER: &str = "gamma,cav_avg_time_min,noncav_avg_time_min,cav_energy_usd,noncav_energy_usd,\
cav_time_savings_pct,noncav_time_savings_pct,cav_energy_savings_pct,noncav_energy_savings_pct,converged,outer_iterations";

pub fn csv_rows(result: &SweepResult) -> Vec<CsvRow> {
    result
        .rows
        .iter()
        .map(|r| CsvRow {
            gamma: r.gamma,
            cav_avg_time_min: r.metrics.cav_avg_time_min,
            noncav_avg_time_min: r.metrics.noncav_avg_time_min,
            cav_energy_usd: r.metrics.cav_energy_usd,
            noncav_energy_usd: r.metrics.noncav_energy_usd,
            cav_time_savings_pct: r.cav_time_savings_pct,
            noncav_time_savings_pct: r.noncav_time_savings_pct,
            cav_energy_savings_pct: r.cav_energy_savings_pct,
            noncav_energy_savings_pct: r.noncav_energy_savings_pct,
            converged: r.converged,
            outer_iterations: r.outer_iterations,
        })
        .collect()
}

pub fn emit_csv(result: &SweepResult, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(CSV_HEADER.split(','))?;
    for row in csv_rows(result) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if headers != CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected header {headers}"),
        });
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    PerClassTimeVsGamma,
    PerClassEnergyVsGamma,
    SavingsVsGamma,
    ConvergenceTrace,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [
        PlotKind::PerClassTimeVsGamma,
        PlotKind::PerClassEnergyVsGamma,
        PlotKind::SavingsVsGamma,
        PlotKind::ConvergenceTrace,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::PerClassTimeVsGamma => "per_class_time_vs_gamma",
            PlotKind::PerClassEnergyVsGamma => "per_class_energy_vs_gamma",
            PlotKind::SavingsVsGamma => "savings_vs_gamma",
            PlotKind::ConvergenceTrace => "convergence_trace",
        }
    }
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown plot kind {s:?}")))
    }
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn gamma_series(result: &SweepResult, label: &str, f: impl Fn(&SweepRow) -> Option<f64>) -> Series {
    Series {
        label: label.to_string(),
        points: result.rows.iter().filter_map(|r| f(r).map(|v| (r.gamma, v))).collect(),
    }
}

pub fn emit_plot(result: &SweepResult, kind: PlotKind, path: impl AsRef<Path>) -> Result<()> {
    if result.rows.is_empty() {
        return Err(Error::InvalidArgument("cannot plot an empty sweep".into()));
    }
    let gamma_label = "CAV penetration rate γ";
    let (title, x_label, y_label, series) = match kind {
        PlotKind::PerClassTimeVsGamma => (
            "Average travel time per vehicle",
            gamma_label,
            "travel time (min/vehicle)",
            vec![
                gamma_series(result, "CAV", |r| r.metrics.cav_avg_time_min),
                gamma_series(result, "non-CAV", |r| r.metrics.noncav_avg_time_min),
            ],
        ),
        PlotKind::PerClassEnergyVsGamma => (
            "Average energy cost per vehicle",
            gamma_label,
            "energy cost ($/vehicle)",
            vec![
                gamma_series(result, "CAV", |r| r.metrics.cav_energy_usd),
                gamma_series(result, "non-CAV", |r| r.metrics.noncav_energy_usd),
            ],
        ),
        PlotKind::SavingsVsGamma => {
            let (label, s) = match result.objective {
                ObjectiveKind::Time => (
                    "time savings vs 0% CAV (%)",
                    vec![
                        gamma_series(result, "CAV", |r| r.cav_time_savings_pct),
                        gamma_series(result, "non-CAV", |r| r.noncav_time_savings_pct),
                    ],
                ),
                _ => (
                    "energy savings vs 0% CAV (%)",
                    vec![
                        gamma_series(result, "CAV", |r| r.cav_energy_savings_pct),
                        gamma_series(result, "non-CAV", |r| r.noncav_energy_savings_pct),
                    ],
                ),
            };
            ("Savings relative to the all-selfish baseline", gamma_label, label, s)
        }
        PlotKind::ConvergenceTrace => (
            "Outer-iteration convergence",
            "outer iteration",
            "log10 relative flow change",
            result
                .rows
                .iter()
                .map(|r| Series {
                    label: format!("γ={:.2}", r.gamma),
                    points: r
                        .outer_trace
                        .iter()
                        .map(|t| (t.iteration as f64, t.flow_change.max(1e-16).log10()))
                        .collect(),
                })
                .collect(),
        ),
    };
    let svg = render_svg(title, x_label, y_label, &series, kind != PlotKind::ConvergenceTrace);
    std::fs::write(path, svg)?;
    Ok(())
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        let pad = lo.abs().max(1.0) * 0.05;
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn render_svg(title: &str, x_label: &str, y_label: &str, series: &[Series], show_legend: bool) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 55.0);
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    let (xmin, xmax) = nice_range(xmin, xmax);
    let (ymin, ymax) = nice_range(ymin, ymax);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - xmin) / (xmax - xmin) * pw;
    let sy = |y: f64| top + ph - (y - ymin) / (ymax - ymin) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let fx = xmin + (xmax - xmin) * i as f64 / 5.0;
        let fy = ymin + (ymax - ymin) * i as f64 / 5.0;
        let (px, py) = (sx(fx), sy(fy));
        let _ = writeln!(s, r#"<line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="black"/>"#, top + ph, top + ph + 5.0);
        let _ = writeln!(s, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, top + ph + 18.0, tick(fx));
        let _ = writeln!(s, r#"<line x1="{}" y1="{py:.2}" x2="{left}" y2="{py:.2}" stroke="black"/>"#, left - 5.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, left - 8.0, py + 4.0, tick(fy));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        if ser.points.is_empty() {
            continue;
        }
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
            coords.join(" "),
            escape(&ser.label)
        );
        if show_legend {
            let ly = top + 14.0 + 16.0 * i as f64;
            let lx = left + pw - 110.0;
            let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
            let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&ser.label));
        }
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e5).contains(&a) {
        format!("{v:.1e}")
    } else if a < 10.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.1}")
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{braess_fixture, build_network, enumerate_routes, Link};

    fn small_sweep() -> SweepResult {
        let (net, ods, _) = braess_fixture();
        let rs = enumerate_routes(&net, &ods, 3).unwrap();
        let spec = SweepSpec {
            gamma_values: vec![0.0, 0.5, 1.0],
            ..SweepSpec::default()
        };
        run_sweep(&spec, &net, &rs, &ods).unwrap()
    }

    #[test]
    fn sweep_savings_and_poa() {
        let r = small_sweep();
        assert_eq!(r.rows.len(), 3);
        assert_eq!(r.rows[0].cav_time_savings_pct, Some(0.0));
        assert_eq!(r.rows[0].noncav_time_savings_pct, Some(0.0));
        assert_eq!(r.rows[2].noncav_time_savings_pct, None);
        let poa = price_of_anarchy(&r).unwrap();
        assert!((poa - savings_pct(80.0, 64.6875)).abs() < 0.05, "{poa}");
    }

    #[test]
    fn baseline_added_when_missing() {
        let (net, ods, _) = braess_fixture();
        let rs = enumerate_routes(&net, &ods, 3).unwrap();
        let spec = SweepSpec {
            gamma_values: vec![1.0],
            ..SweepSpec::default()
        };
        let r = run_sweep(&spec, &net, &rs, &ods).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert!((r.baseline.system_avg_time_min.unwrap() - 80.0).abs() < 0.1);
        assert!(price_of_anarchy(&r).is_err());
    }

    #[test]
    fn spec_validation() {
        let bad = |g: Vec<f64>| SweepSpec {
            gamma_values: g,
            ..SweepSpec::default()
        };
        assert!(bad(vec![0.5, 0.2]).validate().is_err());
        assert!(bad(vec![0.2, 0.2]).validate().is_err());
        assert!(bad(vec![1.5]).validate().is_err());
        assert_eq!(default_gammas().len(), 21);
        assert_eq!(default_gammas()[20], 1.0);
    }

    #[test]
    fn poa_zero_when_costs_constant_or_symmetric() {
        let constant = build_network(vec![
            Link::new(1, 1, 2, 5.0, 100.0, 2.0).with_custom_time(crate::cost::Polynomial::constant(5.0)),
            Link::new(2, 1, 2, 7.0, 100.0, 2.0).with_custom_time(crate::cost::Polynomial::constant(7.0)),
        ])
        .unwrap();
        let twin = build_network(vec![Link::new(1, 1, 2, 5.0, 100.0, 2.0), Link::new(2, 1, 2, 5.0, 100.0, 2.0)]).unwrap();
        let ods = [ODPair::new(1, 2, 300.0)];
        for net in [constant, twin] {
            let rs = enumerate_routes(&net, &ods, 3).unwrap();
            let spec = SweepSpec {
                gamma_values: vec![0.0, 1.0],
                ..SweepSpec::default()
            };
            let r = run_sweep(&spec, &net, &rs, &ods).unwrap();
            assert!(price_of_anarchy(&r).unwrap().abs() < 1e-6);
        }
    }

    #[test]
    fn csv_round_trip_and_plots() {
        let r = small_sweep();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        emit_csv(&r, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(text.lines().count(), 4);
        assert_eq!(read_csv(&path).unwrap(), csv_rows(&r));

        let empty = SweepResult {
            rows: Vec::new(),
            ..r.clone()
        };
        emit_csv(&empty, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), format!("{CSV_HEADER}\n"));
        let svg = dir.path().join("x.svg");
        assert!(emit_plot(&empty, PlotKind::SavingsVsGamma, &svg).is_err());
        assert!(!svg.exists());

        for kind in PlotKind::ALL {
            emit_plot(&r, kind, &svg).unwrap();
            let text = std::fs::read_to_string(&svg).unwrap();
            assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));
        }
        let text = {
            emit_plot(&r, PlotKind::ConvergenceTrace, &svg).unwrap();
            std::fs::read_to_string(&svg).unwrap()
        };
        assert_eq!(text.matches("<polyline").count(), r.rows.len());
        assert!("nope".parse::<PlotKind>().is_err());
        assert_eq!("savings_vs_gamma".parse::<PlotKind>().unwrap(), PlotKind::SavingsVsGamma);
    }
}
