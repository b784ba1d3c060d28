//! System-centric routing of the CAV fleet over per-O-D route simplexes.
//!
//! The decision variable is the route-probability matrix of the fleet; the
//! selfish flow `x_nc` is held fixed. Three fleet objectives are supported:
//! total travel time, conventional-vehicle fuel cost, and PHEV energy cost
//! with a per-route battery budget (solved jointly with the charge-depleting
//! fractions `Y`).
//!
//! Optimization is projected gradient with Barzilai-Borwein trial steps and
//! Armijo backtracking, so accepted steps never increase the objective.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{smoothed_mu, speed_from_time, CostParams, CycleValues, LinkSpeed, LinkTimes, Mode, VehicleClass};
use crate::error::{Error, Result};
use crate::network::{link_flows_from_rows, FlowVector, Network, ODPair, RouteProbabilityMatrix, RouteSet};
use crate::ue::{solve_ue_msa, UeConfig, UeResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectiveKind {
    Time,
    EnergyCv,
    EnergyPhev,
}

/// Battery and powertrain settings for the CD/CS energy objective.
#[derive(Clone, Debug, PartialEq)]
pub struct PhevSettings {
    pub class: VehicleClass,
    /// kWh available at the start of every route.
    pub initial_energy_kwh: f64,
    /// Per-O-D overrides of `initial_energy_kwh`, keyed by O-D index.
    pub per_od_energy_kwh: HashMap<usize, f64>,
}

impl Default for PhevSettings {
    fn default() -> Self {
        Self {
            class: VehicleClass::Phev,
            initial_energy_kwh: 10.0,
            per_od_energy_kwh: HashMap::new(),
        }
    }
}

impl PhevSettings {
    pub fn energy_for_od(&self, od: usize) -> f64 {
        self.per_od_energy_kwh
            .get(&od)
            .copied()
            .unwrap_or(self.initial_energy_kwh)
    }

    fn validate(&self) -> Result<()> {
        if !(self.initial_energy_kwh >= 0.0) || self.per_od_energy_kwh.values().any(|e| !(*e >= 0.0)) {
            return Err(Error::InvalidArgument("initial battery energy must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub enum SoObjective {
    #[default]
    Time,
    EnergyCv,
    EnergyPhev(PhevSettings),
}

impl SoObjective {
    pub fn kind(&self) -> ObjectiveKind {
        match self {
            SoObjective::Time => ObjectiveKind::Time,
            SoObjective::EnergyCv => ObjectiveKind::EnergyCv,
            SoObjective::EnergyPhev(_) => ObjectiveKind::EnergyPhev,
        }
    }

    pub fn from_kind(kind: ObjectiveKind) -> Self {
        match kind {
            ObjectiveKind::Time => SoObjective::Time,
            ObjectiveKind::EnergyCv => SoObjective::EnergyCv,
            ObjectiveKind::EnergyPhev => SoObjective::EnergyPhev(PhevSettings::default()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoConfig {
    pub max_iterations: usize,
    /// Bound on the normalized projected-gradient residual.
    pub gradient_tolerance: f64,
    /// When the line search can no longer make progress, the run still counts
    /// as converged if the residual is below this.
    pub stall_tolerance: f64,
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// Starts per solve; `None` picks 5 for PHEV and 1 otherwise.
    pub multi_start: Option<usize>,
    pub seed: u64,
    /// PHEV: consecutive iterations with stable `P` and `Y` before stopping.
    pub stable_iterations: usize,
    pub stability_tolerance: f64,
    /// Compare the analytic gradient to finite differences at the solution.
    pub check_gradient: bool,
}

impl Default for SoConfig {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            gradient_tolerance: 1e-7,
            stall_tolerance: 1e-5,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 60,
            multi_start: None,
            seed: 0,
            stable_iterations: 5,
            stability_tolerance: 1e-7,
            check_gradient: false,
        }
    }
}

impl SoConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || !(self.gradient_tolerance > 0.0) || !(self.stall_tolerance > 0.0) {
            return Err(Error::InvalidArgument("SO iterations and tolerances must be positive".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) || !(self.armijo > 0.0 && self.armijo < 1.0) {
            return Err(Error::InvalidArgument("line-search factors must lie in (0,1)".into()));
        }
        if self.multi_start == Some(0) {
            return Err(Error::InvalidArgument("multi_start must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoTraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub projected_gradient_norm: f64,
    pub step_size: f64,
}

/// CD fractions `y[od][route][k]` aligned with each route's links.
pub type CdFractions = Vec<Vec<Vec<f64>>>;

#[derive(Clone, Debug)]
pub struct SoResult {
    pub p_c: RouteProbabilityMatrix,
    pub x_c: FlowVector,
    pub y: Option<CdFractions>,
    pub objective_value: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Always set for the PHEV objective, which is non-convex.
    pub local_optimum: bool,
    pub trace: Vec<SoTraceRow>,
    /// Max relative analytic-vs-finite-difference gradient error, when requested.
    pub gradient_check: Option<f64>,
    pub start_index: usize,
}

impl SoResult {
    pub fn write_trace_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.trace {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Euclidean projection onto `{p >= 0, Σ p = 1}` (sort-based).
pub fn project_simplex(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("cannot project an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("non-finite entry in simplex projection".into()));
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    Ok(v.iter().map(|x| (x - theta).max(0.0)).collect())
}

/// Energy data for one link of a route, as seen by the CD/CS split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RouteLinkEnergy {
    /// miles
    pub length: f64,
    /// mi/kWh
    pub mu_cd: f64,
    /// mi/gal
    pub mu_cs: f64,
}

impl RouteLinkEnergy {
    /// kWh needed to cover the link fully in CD mode.
    pub fn kwh(&self) -> f64 {
        self.length / self.mu_cd
    }

    /// Dollars saved by covering the link fully in CD instead of CS.
    pub fn savings(&self, gas_price: f64, electricity_price: f64) -> f64 {
        gas_price * self.length / self.mu_cs - electricity_price * self.length / self.mu_cd
    }

    pub fn cost(&self, y: f64, gas_price: f64, electricity_price: f64) -> f64 {
        gas_price * self.length / self.mu_cs * (1.0 - y) + electricity_price * self.length / self.mu_cd * y
    }
}

/// Optimal CD fractions for one route under a battery budget (fractional knapsack).
pub fn cd_cs_route_split(links: &[RouteLinkEnergy], battery_kwh: f64, gas_price: f64, electricity_price: f64) -> Vec<f64> {
    let mut y = vec![0.0; links.len()];
    let mut order: Vec<(usize, f64)> = links
        .iter()
        .enumerate()
        .filter(|(_, l)| l.length > 0.0)
        .map(|(k, l)| (k, l.savings(gas_price, electricity_price) / l.kwh()))
        .filter(|(_, rate)| *rate > 0.0)
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut budget = battery_kwh.max(0.0);
    for (k, _) in order {
        if budget <= 0.0 {
            break;
        }
        let need = links[k].kwh();
        if need <= budget {
            y[k] = 1.0;
            budget -= need;
        } else {
            y[k] = budget / need;
            budget = 0.0;
        }
    }
    y
}

/// Per-route CD fractions for PHEVs at total link flow `x`.
pub fn solve_cd_cs_split(
    net: &Network,
    rs: &RouteSet,
    times: &LinkTimes,
    x: &FlowVector,
    battery_kwh: &[Vec<f64>],
    params: &CostParams,
) -> Result<CdFractions> {
    if x.len() != net.link_count() || battery_kwh.len() != rs.od_count() {
        return Err(Error::Dimension("flow or battery table does not match the route set".into()));
    }
    let speeds = link_speeds(net, times, &x.0);
    let cd = &params.cdcs.phev_cd;
    let cs = &params.cdcs.phev_cs;
    rs.routes_per_od()
        .iter()
        .zip(battery_kwh)
        .map(|(routes, e0)| {
            if e0.len() != routes.len() {
                return Err(Error::Dimension("battery table row length".into()));
            }
            Ok(routes
                .iter()
                .zip(e0)
                .map(|(route, &e)| {
                    let links: Vec<RouteLinkEnergy> = route
                        .links
                        .iter()
                        .map(|&a| route_link_energy(net, &speeds, a, cd, cs, params))
                        .collect();
                    cd_cs_route_split(&links, e, params.cv.gas_price, params.cdcs.electricity_price)
                })
                .collect())
        })
        .collect()
}

fn route_link_energy(
    net: &Network,
    speeds: &[LinkSpeed],
    a: usize,
    cd: &CycleValues,
    cs: &CycleValues,
    params: &CostParams,
) -> RouteLinkEnergy {
    let length = net.links()[a].length;
    match speeds[a] {
        LinkSpeed::ZeroLength => RouteLinkEnergy {
            length: 0.0,
            mu_cd: 1.0,
            mu_cs: 1.0,
        },
        LinkSpeed::Mph(v) => {
            let cycle = params.bands.cycle(v);
            RouteLinkEnergy {
                length,
                mu_cd: cd.get(cycle),
                mu_cs: cs.get(cycle),
            }
        }
    }
}

fn link_speeds(net: &Network, times: &LinkTimes, x: &[f64]) -> Vec<LinkSpeed> {
    net.links()
        .iter()
        .enumerate()
        .map(|(a, l)| speed_from_time(l.length, times.time(a, x[a])))
        .collect()
}

/// The fleet optimization problem at fixed background flow.
pub struct SoProblem<'a> {
    net: &'a Network,
    routes: &'a RouteSet,
    demand: &'a [ODPair],
    background: &'a FlowVector,
    params: &'a CostParams,
    objective: &'a SoObjective,
    times: LinkTimes,
}

impl<'a> SoProblem<'a> {
    pub fn new(
        net: &'a Network,
        routes: &'a RouteSet,
        demand: &'a [ODPair],
        background: &'a FlowVector,
        params: &'a CostParams,
        objective: &'a SoObjective,
    ) -> Result<Self> {
        if routes.od_count() != demand.len() {
            return Err(Error::Dimension(format!(
                "{} route lists for {} O-D pairs",
                routes.od_count(),
                demand.len()
            )));
        }
        if background.len() != net.link_count() || routes.link_count() != net.link_count() {
            return Err(Error::Dimension("background flow or route set does not match network".into()));
        }
        if let Some(&x) = background.0.iter().find(|x| !(**x >= 0.0)) {
            return Err(Error::NegativeFlow(x));
        }
        for (i, od) in demand.iter().enumerate() {
            net.validate_od(od)?;
            if od.demand > 0.0 && routes.routes(i).is_empty() {
                return Err(Error::Unreachable {
                    origin: od.origin,
                    destination: od.destination,
                });
            }
        }
        if let SoObjective::EnergyPhev(s) = objective {
            s.validate()?;
        }
        Ok(Self {
            net,
            routes,
            demand,
            background,
            params,
            objective,
            times: LinkTimes::new(net, &params.bpr),
        })
    }

    pub fn times(&self) -> &LinkTimes {
        &self.times
    }

    fn check_rows(&self, rows: &[Vec<f64>]) -> Result<()> {
        if rows.len() != self.demand.len() {
            return Err(Error::Dimension(format!("{} rows for {} O-D pairs", rows.len(), self.demand.len())));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != self.routes.routes(i).len() {
                return Err(Error::Dimension(format!("O-D {i}: row length {}", row.len())));
            }
        }
        Ok(())
    }

    fn fleet_flows(&self, rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let xc = link_flows_from_rows(rows, self.demand, self.routes);
        let x = xc.iter().zip(&self.background.0).map(|(a, b)| a + b).collect();
        (xc, x)
    }

    fn battery_table(&self, s: &PhevSettings) -> Vec<Vec<f64>> {
        (0..self.routes.od_count())
            .map(|i| vec![s.energy_for_od(i); self.routes.routes(i).len()])
            .collect()
    }

    fn class_tables(&self, class: VehicleClass) -> (Option<&CycleValues>, Option<&CycleValues>) {
        let t = &self.params.cdcs;
        (t.values(class, Mode::Cd).ok(), t.values(class, Mode::Cs).ok())
    }

    /// CD fractions for the configured vehicle class at total flow `x`.
    fn cd_fractions(&self, s: &PhevSettings, x: &[f64]) -> CdFractions {
        match s.class {
            VehicleClass::Phev => solve_cd_cs_split(
                self.net,
                self.routes,
                &self.times,
                &FlowVector(x.to_vec()),
                &self.battery_table(s),
                self.params,
            )
            .expect("dimensions checked"),
            class => {
                let fill = if class == VehicleClass::Ev { 1.0 } else { 0.0 };
                self.routes
                    .routes_per_od()
                    .iter()
                    .map(|rs| rs.iter().map(|r| vec![fill; r.links.len()]).collect())
                    .collect()
            }
        }
    }

    /// Per-mile cost multipliers `(gas $/mi, electric $/mi)` and their speed slopes.
    fn per_mile(&self, class: VehicleClass, v: f64, width: f64) -> ([f64; 2], [f64; 2]) {
        let (cd, cs) = self.class_tables(class);
        let bands = &self.params.bands;
        let mut cost = [0.0; 2];
        let mut slope = [0.0; 2];
        if let Some(cs) = cs {
            let (mu, dmu) = smoothed_mu(cs, bands, width, v);
            cost[0] = self.params.cv.gas_price / mu;
            slope[0] = -self.params.cv.gas_price * dmu / (mu * mu);
        }
        if let Some(cd) = cd {
            let (mu, dmu) = smoothed_mu(cd, bands, width, v);
            cost[1] = self.params.cdcs.electricity_price / mu;
            slope[1] = -self.params.cdcs.electricity_price * dmu / (mu * mu);
        }
        (cost, slope)
    }

    fn phev_objective(&self, s: &PhevSettings, rows: &[Vec<f64>], y: &CdFractions, width: f64) -> f64 {
        let (_, x) = self.fleet_flows(rows);
        let speeds = link_speeds(self.net, &self.times, &x);
        let mut total = 0.0;
        for (i, routes) in self.routes.routes_per_od().iter().enumerate() {
            for (r, route) in routes.iter().enumerate() {
                let f = rows[i][r] * self.demand[i].demand;
                if f == 0.0 {
                    continue;
                }
                let mut c = 0.0;
                for (k, &a) in route.links.iter().enumerate() {
                    if let LinkSpeed::Mph(v) = speeds[a] {
                        let ([gas, ele], _) = self.per_mile(s.class, v, width);
                        let yk = y[i][r][k];
                        c += self.net.links()[a].length * (gas * (1.0 - yk) + ele * yk);
                    }
                }
                total += f * c;
            }
        }
        total
    }

    /// Objective at `rows` (PHEV: with its optimal CD fractions).
    fn value(&self, rows: &[Vec<f64>]) -> (f64, Option<CdFractions>) {
        let (xc, x) = self.fleet_flows(rows);
        match self.objective {
            SoObjective::Time => {
                let v = (0..xc.len())
                    .filter(|&a| xc[a] != 0.0)
                    .map(|a| self.times.time(a, x[a]) * xc[a])
                    .sum();
                (v, None)
            }
            SoObjective::EnergyCv => {
                let cv = &self.params.cv;
                let v = self
                    .net
                    .links()
                    .iter()
                    .enumerate()
                    .filter(|&(a, l)| xc[a] != 0.0 && l.length > 0.0)
                    .map(|(a, l)| {
                        let t = self.times.time(a, x[a]);
                        let speed = 60.0 * l.length / t;
                        l.length * cv.dollars_per_mile(speed, l.grade) * xc[a]
                    })
                    .sum();
                (v, None)
            }
            SoObjective::EnergyPhev(s) => {
                let y = self.cd_fractions(s, &x);
                (self.phev_objective(s, rows, &y, 0.0), Some(y))
            }
        }
    }

    fn value_with(&self, rows: &[Vec<f64>], y: Option<&CdFractions>) -> f64 {
        match (self.objective, y) {
            (SoObjective::EnergyPhev(s), Some(y)) => self.phev_objective(s, rows, y, 0.0),
            _ => self.value(rows).0,
        }
    }

    /// Per-link marginal `∂J/∂x_c[a]` for the time and CV objectives.
    fn link_marginals(&self, xc: &[f64], x: &[f64]) -> Vec<f64> {
        match self.objective {
            SoObjective::Time => (0..xc.len())
                .map(|a| self.times.time(a, x[a]) + xc[a] * self.times.derivative(a, x[a]))
                .collect(),
            SoObjective::EnergyCv => {
                let cv = &self.params.cv;
                self.net
                    .links()
                    .iter()
                    .enumerate()
                    .map(|(a, l)| {
                        if l.length <= 0.0 {
                            return 0.0;
                        }
                        let t = self.times.time(a, x[a]);
                        let dt = self.times.derivative(a, x[a]);
                        let v = 60.0 * l.length / t;
                        let dv_dx = -60.0 * l.length * dt / (t * t);
                        let mut m = cv.dollars_per_mile(v, l.grade);
                        if xc[a] != 0.0 && dt != 0.0 {
                            m += xc[a] * cv.dollars_per_mile_slope(v, l.grade) * dv_dx;
                        }
                        l.length * m
                    })
                    .collect()
            }
            SoObjective::EnergyPhev(_) => unreachable!("PHEV gradient is route based"),
        }
    }

    fn gradient_with(&self, rows: &[Vec<f64>], y: Option<&CdFractions>) -> Vec<Vec<f64>> {
        let (xc, x) = self.fleet_flows(rows);
        let route_marginals: Vec<Vec<f64>> = match (self.objective, y) {
            (SoObjective::EnergyPhev(s), Some(y)) => self.phev_route_marginals(s, rows, y, &x),
            (SoObjective::EnergyPhev(s), None) => {
                let y = self.cd_fractions(s, &x);
                self.phev_route_marginals(s, rows, &y, &x)
            }
            _ => {
                let m = self.link_marginals(&xc, &x);
                self.routes
                    .routes_per_od()
                    .iter()
                    .map(|routes| routes.iter().map(|r| r.links.iter().map(|&a| m[a]).sum()).collect())
                    .collect()
            }
        };
        route_marginals
            .into_iter()
            .zip(self.demand)
            .map(|(row, od)| row.into_iter().map(|m| m * od.demand).collect())
            .collect()
    }

    /// `∂J/∂p_ir / g_i` for the PHEV objective with smoothed μ.
    fn phev_route_marginals(&self, s: &PhevSettings, rows: &[Vec<f64>], y: &CdFractions, x: &[f64]) -> Vec<Vec<f64>> {
        let width = self.params.mu_smoothing_width;
        let links = self.net.links();
        let speeds = link_speeds(self.net, &self.times, x);
        let per_mile: Vec<Option<([f64; 2], [f64; 2])>> = speeds
            .iter()
            .map(|sp| sp.mph().map(|v| self.per_mile(s.class, v, width)))
            .collect();
        // S_a = Σ_r f_r ∂c_{a,r}/∂v
        let mut speed_sens = vec![0.0; links.len()];
        for (i, routes) in self.routes.routes_per_od().iter().enumerate() {
            for (r, route) in routes.iter().enumerate() {
                let f = rows[i][r] * self.demand[i].demand;
                if f == 0.0 {
                    continue;
                }
                for (k, &a) in route.links.iter().enumerate() {
                    if let Some((_, [dg, de])) = per_mile[a] {
                        let yk = y[i][r][k];
                        speed_sens[a] += f * links[a].length * (dg * (1.0 - yk) + de * yk);
                    }
                }
            }
        }
        let link_term: Vec<f64> = (0..links.len())
            .map(|a| {
                if speed_sens[a] == 0.0 || links[a].length <= 0.0 {
                    return 0.0;
                }
                let t = self.times.time(a, x[a]);
                let dt = self.times.derivative(a, x[a]);
                if dt == 0.0 {
                    return 0.0;
                }
                speed_sens[a] * (-60.0 * links[a].length * dt / (t * t))
            })
            .collect();
        self.routes
            .routes_per_od()
            .iter()
            .enumerate()
            .map(|(i, routes)| {
                routes
                    .iter()
                    .enumerate()
                    .map(|(r, route)| {
                        route
                            .links
                            .iter()
                            .enumerate()
                            .map(|(k, &a)| {
                                let own = per_mile[a]
                                    .map(|([g, e], _)| {
                                        let yk = y[i][r][k];
                                        links[a].length * (g * (1.0 - yk) + e * yk)
                                    })
                                    .unwrap_or(0.0);
                                own + link_term[a]
                            })
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }

    /// Largest normalized projected-gradient step over O-D pairs with demand.
    fn kkt_residual(&self, rows: &[Vec<f64>], grad: &[Vec<f64>]) -> f64 {
        let scale = grad
            .iter()
            .zip(self.demand)
            .filter(|(_, od)| od.demand > 0.0)
            .flat_map(|(g, od)| g.iter().map(move |v| (v / od.demand).abs()))
            .fold(0.0, f64::max);
        if scale == 0.0 || !scale.is_finite() {
            return if scale == 0.0 { 0.0 } else { f64::INFINITY };
        }
        rows.iter()
            .zip(grad)
            .zip(self.demand)
            .filter(|(_, od)| od.demand > 0.0)
            .map(|((p, g), od)| {
                let trial: Vec<f64> = p.iter().zip(g).map(|(p, g)| p - g / od.demand / scale).collect();
                project_simplex(&trial)
                    .expect("finite")
                    .iter()
                    .zip(p)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    fn project_rows(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| if r.is_empty() { Vec::new() } else { project_simplex(r).expect("finite") })
            .collect()
    }

    fn start_rows(&self, index: usize, seed: u64) -> Vec<Vec<f64>> {
        if index == 0 {
            return RouteProbabilityMatrix::uniform(self.routes).into_rows();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64));
        self.routes
            .routes_per_od()
            .iter()
            .map(|routes| {
                let w: Vec<f64> = routes.iter().map(|_| -rng.gen_range(f64::EPSILON..1.0f64).ln()).collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|v| v / s).collect()
            })
            .collect()
    }

    fn solve_from(&self, start: Vec<Vec<f64>>, cfg: &SoConfig, start_index: usize) -> SoResult {
        let phev = matches!(self.objective, SoObjective::EnergyPhev(_));
        let mut p = self.project_rows(&start);
        let (mut f, mut y) = self.value(&p);
        let mut g = self.gradient_with(&p, y.as_ref());
        let mut trace = vec![SoTraceRow {
            iteration: 0,
            objective: f,
            projected_gradient_norm: self.kkt_residual(&p, &g),
            step_size: 0.0,
        }];
        let mut alpha = {
            let gmax = g.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            if gmax > 0.0 { 1.0 / gmax } else { 1.0 }
        };
        let mut converged = false;
        let mut iterations = 0;
        let mut stable = 0;
        for it in 1..=cfg.max_iterations {
            iterations = it;
            let res = self.kkt_residual(&p, &g);
            if res <= cfg.gradient_tolerance {
                converged = true;
                break;
            }
            let target: Vec<Vec<f64>> = p
                .iter()
                .zip(&g)
                .map(|(p, g)| p.iter().zip(g).map(|(p, g)| p - alpha * g).collect())
                .collect();
            let proj = self.project_rows(&target);
            let d: Vec<Vec<f64>> = proj
                .iter()
                .zip(&p)
                .map(|(a, b)| a.iter().zip(b).map(|(a, b)| a - b).collect())
                .collect();
            let slope: f64 = d.iter().flatten().zip(g.iter().flatten()).map(|(d, g)| d * g).sum();
            let mut t = 1.0;
            let mut accepted = None;
            if slope < 0.0 {
                for _ in 0..cfg.max_backtracks {
                    let trial: Vec<Vec<f64>> = p
                        .iter()
                        .zip(&d)
                        .map(|(p, d)| p.iter().zip(d).map(|(p, d)| (p + t * d).max(0.0)).collect())
                        .collect();
                    let ft = self.value_with(&trial, y.as_ref());
                    let decrease_ok = if phev { ft < f } else { ft <= f + cfg.armijo * t * slope };
                    if ft.is_finite() && decrease_ok {
                        let gt = self.gradient_with(&trial, y.as_ref());
                        if gt.iter().flatten().all(|v| v.is_finite()) {
                            accepted = Some((trial, ft));
                            break;
                        }
                    }
                    t *= cfg.backtrack;
                }
            }
            let Some((p_new, mut f_new)) = accepted else {
                converged = res <= cfg.stall_tolerance;
                break;
            };
            let y_new = if phev {
                let (fy, ynew) = self.value(&p_new);
                f_new = fy.min(f_new);
                ynew
            } else {
                None
            };
            let g_new = self.gradient_with(&p_new, y_new.as_ref());
            // Barzilai-Borwein trial step for the next iteration
            let (mut ss, mut sy) = (0.0, 0.0);
            for ((pn, po), (gn, go)) in p_new.iter().flatten().zip(p.iter().flatten()).zip(g_new.iter().flatten().zip(g.iter().flatten())) {
                let s = pn - po;
                ss += s * s;
                sy += s * (gn - go);
            }
            alpha = if sy > 0.0 { (ss / sy).clamp(1e-30, 1e30) } else { alpha * 2.0 };

            if phev {
                let dp = p_new.iter().flatten().zip(p.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                let dy = match (&y, &y_new) {
                    (Some(a), Some(b)) => a.iter().flatten().flatten().zip(b.iter().flatten().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
                    _ => 0.0,
                };
                stable = if dp <= cfg.stability_tolerance && dy <= cfg.stability_tolerance { stable + 1 } else { 0 };
            }
            p = p_new;
            f = f_new;
            g = g_new;
            y = y_new;
            trace.push(SoTraceRow {
                iteration: it,
                objective: f,
                projected_gradient_norm: self.kkt_residual(&p, &g),
                step_size: t,
            });
            if phev && stable >= cfg.stable_iterations {
                converged = true;
                break;
            }
        }
        let (xc, _) = self.fleet_flows(&p);
        let kkt_residual = self.kkt_residual(&p, &g);
        if !converged && kkt_residual <= cfg.gradient_tolerance {
            converged = true;
        }
        SoResult {
            p_c: RouteProbabilityMatrix::from_rows_unchecked(p),
            x_c: FlowVector(xc),
            y,
            objective_value: f,
            kkt_residual,
            iterations,
            converged,
            local_optimum: phev,
            trace,
            gradient_check: None,
            start_index,
        }
    }
}

pub fn so_objective(problem: &SoProblem, p: &RouteProbabilityMatrix) -> Result<f64> {
    problem.check_rows(p.rows())?;
    Ok(problem.value(p.rows()).0)
}

/// `∂J/∂p_ir = g_i Σ_a α_{a,r} · (per-link marginal)`.
pub fn so_gradient(problem: &SoProblem, p: &RouteProbabilityMatrix) -> Result<Vec<Vec<f64>>> {
    problem.check_rows(p.rows())?;
    Ok(problem.gradient_with(p.rows(), None))
}

/// Largest relative error between the analytic gradient and central finite
/// differences of the objective, coordinate by coordinate.
pub fn gradient_fd_error(problem: &SoProblem, p: &RouteProbabilityMatrix, h: f64) -> Result<f64> {
    let analytic = so_gradient(problem, p)?;
    let mut worst = 0.0f64;
    let mut rows = p.rows().to_vec();
    for i in 0..rows.len() {
        for r in 0..rows[i].len() {
            let orig = rows[i][r];
            rows[i][r] = orig + h;
            let up = problem.value(&rows).0;
            rows[i][r] = orig - h;
            let down = problem.value(&rows).0;
            rows[i][r] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = analytic[i][r];
            let denom = an.abs().max(fd.abs());
            if denom > 0.0 {
                worst = worst.max((an - fd).abs() / denom);
            }
        }
    }
    Ok(worst)
}

pub fn solve_so(problem: &SoProblem, cfg: &SoConfig) -> Result<SoResult> {
    run_starts(problem, cfg, None)
}

/// Like [`solve_so`], with `start` replacing the uniform first start.
pub fn solve_so_warm(problem: &SoProblem, cfg: &SoConfig, start: &RouteProbabilityMatrix) -> Result<SoResult> {
    problem.check_rows(start.rows())?;
    run_starts(problem, cfg, Some(start))
}

fn run_starts(problem: &SoProblem, cfg: &SoConfig, warm: Option<&RouteProbabilityMatrix>) -> Result<SoResult> {
    cfg.validate()?;
    let starts = cfg.multi_start.unwrap_or(match problem.objective {
        SoObjective::EnergyPhev(_) => 5,
        _ => 1,
    });
    let runs: Vec<SoResult> = (0..starts)
        .into_par_iter()
        .map(|k| {
            let rows = match (k, warm) {
                (0, Some(p)) => p.rows().to_vec(),
                _ => problem.start_rows(k, cfg.seed),
            };
            problem.solve_from(rows, cfg, k)
        })
        .collect();
    let mut best = runs
        .into_iter()
        .min_by(|a, b| a.objective_value.total_cmp(&b.objective_value).then(a.start_index.cmp(&b.start_index)))
        .expect("at least one start");
    if cfg.check_gradient {
        best.gradient_check = Some(gradient_fd_error(problem, &best.p_c, 1e-6)?);
    }
    Ok(best)
}

/// Social optimum via user equilibrium under marginal costs `t + x t'`.
pub fn system_optimum_oracle(net: &Network, times: &LinkTimes, ods: &[ODPair], cfg: &UeConfig) -> Result<UeResult> {
    solve_ue_msa(net, &times.marginal(), ods, &FlowVector::zeros(net.link_count()), cfg)
}
