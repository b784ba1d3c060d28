//! Link-level travel-time and energy cost functions.
//!
//! Every travel-time function is held as a polynomial in link flow, so the
//! integral (Beckmann), the derivative and the marginal cost `t + x t'` all
//! have closed forms. BPR links are converted to that form on demand; links
//! that carry a custom polynomial (the Braess fixture) bypass BPR entirely.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Link, Network};

/// Polynomial in flow with coefficients in ascending powers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![c])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, &c)| acc * x + k as f64 * c)
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(2)
            .rev()
            .fold(0.0, |acc, (k, &c)| acc * x + (k * (k - 1)) as f64 * c)
    }

    fn antiderivative(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .rev()
            .fold(0.0, |acc, (k, &c)| acc * x + c / (k + 1) as f64)
            * x
    }

    /// Closed-form `∫_lo^hi p(s) ds`.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        self.antiderivative(hi) - self.antiderivative(lo)
    }

    /// `d/dx [x p(x)]` as a polynomial: coefficient k becomes `(k+1) c_k`.
    pub fn marginal(&self) -> Polynomial {
        Polynomial::new(
            self.coeffs
                .iter()
                .enumerate()
                .map(|(k, &c)| (k + 1) as f64 * c)
                .collect(),
        )
    }

    pub fn scaled(&self, factor: f64) -> Polynomial {
        Polynomial::new(self.coeffs.iter().map(|c| c * factor).collect())
    }

    pub fn is_nondecreasing_form(&self) -> bool {
        !self.coeffs.is_empty() && self.coeffs.iter().all(|c| c.is_finite() && *c >= 0.0)
    }
}

/// Coefficients of `t(x) = t0 Σ β_i (x/m)^(i-1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BprParams {
    pub beta: Vec<f64>,
}

impl Default for BprParams {
    fn default() -> Self {
        Self {
            beta: vec![1.0, 0.0, 0.0, 0.0, 0.15],
        }
    }
}

impl BprParams {
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        let params = Self { beta };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        match self.beta.first() {
            Some(&b1) if b1 > 0.0 => {}
            _ => return Err(Error::Config("beta_1 must be positive".into())),
        }
        if self.beta.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::Config("beta entries must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// Travel-time polynomial of `link`; custom link costs take precedence.
    pub fn link_polynomial(&self, link: &Link) -> Polynomial {
        if let Some(custom) = &link.custom_time {
            return custom.clone();
        }
        let mut scale = link.free_flow_time;
        let coeffs = self
            .beta
            .iter()
            .map(|b| {
                let c = b * scale;
                scale /= link.capacity;
                c
            })
            .collect();
        Polynomial::new(coeffs)
    }
}

/// Precomputed travel-time polynomials for every link of a network.
#[derive(Clone, Debug)]
pub struct LinkTimes {
    polys: Vec<Polynomial>,
}

impl LinkTimes {
    pub fn new(net: &Network, params: &BprParams) -> Self {
        Self {
            polys: net.links().iter().map(|l| params.link_polynomial(l)).collect(),
        }
    }

    pub fn from_polynomials(polys: Vec<Polynomial>) -> Self {
        Self { polys }
    }

    /// Marginal-cost functions `t(x) + x t'(x)`.
    pub fn marginal(&self) -> Self {
        Self {
            polys: self.polys.iter().map(Polynomial::marginal).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            polys: self.polys.iter().map(|p| p.scaled(factor)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.polys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polys.is_empty()
    }

    pub fn poly(&self, link: usize) -> &Polynomial {
        &self.polys[link]
    }

    pub fn time(&self, link: usize, x: f64) -> f64 {
        self.polys[link].eval(x)
    }

    pub fn derivative(&self, link: usize, x: f64) -> f64 {
        self.polys[link].derivative(x)
    }

    pub fn times(&self, flows: &[f64]) -> Vec<f64> {
        self.polys
            .iter()
            .zip(flows)
            .map(|(p, &x)| p.eval(x))
            .collect()
    }
}

fn check_flow(x: f64) -> Result<()> {
    if x < 0.0 || x.is_nan() {
        return Err(Error::NegativeFlow(x));
    }
    Ok(())
}

/// Link travel time in minutes at flow `x` veh/hr.
pub fn bpr_travel_time(x: f64, link: &Link, params: &BprParams) -> Result<f64> {
    check_flow(x)?;
    Ok(params.link_polynomial(link).eval(x))
}

/// `d/dx [x t(x)] = t(x) + x t'(x)`, analytic.
pub fn marginal_travel_time(x: f64, link: &Link, params: &BprParams) -> Result<f64> {
    check_flow(x)?;
    let p = params.link_polynomial(link);
    Ok(p.eval(x) + x * p.derivative(x))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LinkSpeed {
    Mph(f64),
    /// Zero-length link: no speed, and no energy contribution.
    ZeroLength,
}

impl LinkSpeed {
    pub fn mph(self) -> Option<f64> {
        match self {
            LinkSpeed::Mph(v) => Some(v),
            LinkSpeed::ZeroLength => None,
        }
    }
}

/// Speed in mph from a length in miles and a travel time in minutes.
pub fn speed_from_time(length: f64, minutes: f64) -> LinkSpeed {
    if length <= 0.0 {
        LinkSpeed::ZeroLength
    } else {
        LinkSpeed::Mph(length / (minutes / 60.0))
    }
}

pub fn link_speed(x: f64, link: &Link, params: &BprParams) -> Result<LinkSpeed> {
    let t = bpr_travel_time(x, link, params)?;
    Ok(speed_from_time(link.length, t))
}

/// Average-speed fuel model for conventional vehicles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvEnergyParams {
    /// ln(g/mi) coefficients: θ0..θ4 multiply powers of speed (mph), θ5 the grade (%).
    pub theta: [f64; 6],
    /// $/gal
    pub gas_price: f64,
    pub grams_per_gallon: f64,
}

impl Default for CvEnergyParams {
    fn default() -> Self {
        Self {
            theta: [6.80, -1.4e-1, 3.92e-3, -5.20e-5, 2.57e-7, 1.37e-1],
            gas_price: 2.75,
            grams_per_gallon: 2835.0,
        }
    }
}

impl CvEnergyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.grams_per_gallon > 0.0) {
            return Err(Error::Config("grams_per_gallon must be positive".into()));
        }
        if !(self.gas_price >= 0.0) {
            return Err(Error::Config("gas_price must be nonnegative".into()));
        }
        Ok(())
    }

    fn log_rate_slope(&self, v: f64) -> f64 {
        let th = &self.theta;
        th[1] + v * (2.0 * th[2] + v * (3.0 * th[3] + v * 4.0 * th[4]))
    }

    /// Dollars per vehicle-mile at speed `v`.
    pub fn dollars_per_mile(&self, v: f64, grade: f64) -> f64 {
        self.gas_price * cv_energy_rate(v, grade, self) / self.grams_per_gallon
    }

    /// d/dv of [`Self::dollars_per_mile`].
    pub fn dollars_per_mile_slope(&self, v: f64, grade: f64) -> f64 {
        self.dollars_per_mile(v, grade) * self.log_rate_slope(v)
    }
}

/// Fuel rate in g/mi: `exp(Σ θ_i v^i + θ5 R)`.
pub fn cv_energy_rate(v: f64, grade: f64, params: &CvEnergyParams) -> f64 {
    let th = &params.theta;
    let poly = th[0] + v * (th[1] + v * (th[2] + v * (th[3] + v * th[4])));
    (poly + th[5] * grade).exp()
}

/// Per-vehicle fuel cost in dollars for traversing `link` at flow `x`.
pub fn cv_link_energy_dollars(
    x: f64,
    link: &Link,
    bpr: &BprParams,
    params: &CvEnergyParams,
) -> Result<f64> {
    match link_speed(x, link, bpr)? {
        LinkSpeed::ZeroLength => Ok(0.0),
        LinkSpeed::Mph(v) => Ok(link.length * params.dollars_per_mile(v, link.grade)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DriveCycle {
    Nyc,
    Udds,
    Hwfet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VehicleClass {
    Phev,
    Hev,
    Ev,
    Cv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Charge depleting (battery), mi/kWh.
    Cd,
    /// Charge sustaining (engine), mi/gal.
    Cs,
}

/// Speed bands: `[0, heavy)` NYC, `[heavy, medium)` UDDS, `[medium, ∞)` HWFET.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveCycleBands {
    pub heavy_traffic_upper: f64,
    pub medium_traffic_upper: f64,
}

impl Default for DriveCycleBands {
    fn default() -> Self {
        Self {
            heavy_traffic_upper: 20.0,
            medium_traffic_upper: 40.0,
        }
    }
}

impl DriveCycleBands {
    pub fn validate(&self) -> Result<()> {
        if !(self.heavy_traffic_upper > 0.0 && self.medium_traffic_upper > self.heavy_traffic_upper)
        {
            return Err(Error::Config("drive-cycle thresholds must satisfy 0 < heavy < medium".into()));
        }
        Ok(())
    }

    pub fn cycle(&self, v: f64) -> DriveCycle {
        if v < self.heavy_traffic_upper {
            DriveCycle::Nyc
        } else if v < self.medium_traffic_upper {
            DriveCycle::Udds
        } else {
            DriveCycle::Hwfet
        }
    }
}

pub fn drive_cycle_for_speed(v: f64) -> DriveCycle {
    DriveCycleBands::default().cycle(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleValues {
    pub hwfet: f64,
    pub udds: f64,
    pub nyc: f64,
}

impl CycleValues {
    pub fn get(&self, cycle: DriveCycle) -> f64 {
        match cycle {
            DriveCycle::Hwfet => self.hwfet,
            DriveCycle::Udds => self.udds,
            DriveCycle::Nyc => self.nyc,
        }
    }

    fn all_positive(&self) -> bool {
        [self.hwfet, self.udds, self.nyc].iter().all(|v| *v > 0.0)
    }
}

/// Average CD (mi/kWh) and CS (mi/gal) efficiencies per vehicle class and drive cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdCsTable {
    pub phev_cd: CycleValues,
    pub phev_cs: CycleValues,
    pub hev_cs: CycleValues,
    pub ev_cd: CycleValues,
    pub cv_cs: CycleValues,
    /// $/kWh
    pub electricity_price: f64,
}

impl Default for CdCsTable {
    fn default() -> Self {
        Self {
            phev_cd: CycleValues { hwfet: 5.7, udds: 6.2, nyc: 4.2 },
            phev_cs: CycleValues { hwfet: 58.6, udds: 69.4, nyc: 45.7 },
            hev_cs: CycleValues { hwfet: 59.7, udds: 69.5, nyc: 48.0 },
            ev_cd: CycleValues { hwfet: 5.2, udds: 4.8, nyc: 3.1 },
            cv_cs: CycleValues { hwfet: 52.8, udds: 32.1, nyc: 16.4 },
            electricity_price: 0.13,
        }
    }
}

impl CdCsTable {
    pub fn validate(&self) -> Result<()> {
        let all = [&self.phev_cd, &self.phev_cs, &self.hev_cs, &self.ev_cd, &self.cv_cs];
        if !all.iter().all(|c| c.all_positive()) {
            return Err(Error::Config("mu table entries must be positive".into()));
        }
        if !(self.electricity_price >= 0.0) {
            return Err(Error::Config("electricity_price must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn values(&self, class: VehicleClass, mode: Mode) -> Result<&CycleValues> {
        match (class, mode) {
            (VehicleClass::Phev, Mode::Cd) => Ok(&self.phev_cd),
            (VehicleClass::Phev, Mode::Cs) => Ok(&self.phev_cs),
            (VehicleClass::Hev, Mode::Cs) => Ok(&self.hev_cs),
            (VehicleClass::Ev, Mode::Cd) => Ok(&self.ev_cd),
            (VehicleClass::Cv, Mode::Cs) => Ok(&self.cv_cs),
            _ => Err(Error::UndefinedMode { class, mode }),
        }
    }
}

pub fn mu_lookup(class: VehicleClass, mode: Mode, cycle: DriveCycle, table: &CdCsTable) -> Result<f64> {
    Ok(table.values(class, mode)?.get(cycle))
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// μ(v) with logistic blends across the band boundaries; returns (μ, dμ/dv).
/// `width <= 0` gives the exact step function with zero slope.
pub fn smoothed_mu(values: &CycleValues, bands: &DriveCycleBands, width: f64, v: f64) -> (f64, f64) {
    if width <= 0.0 {
        return (values.get(bands.cycle(v)), 0.0);
    }
    let s1 = logistic((v - bands.heavy_traffic_upper) / width);
    let s2 = logistic((v - bands.medium_traffic_upper) / width);
    let d1 = values.udds - values.nyc;
    let d2 = values.hwfet - values.udds;
    let mu = values.nyc + d1 * s1 + d2 * s2;
    let slope = (d1 * s1 * (1.0 - s1) + d2 * s2 * (1.0 - s2)) / width;
    (mu, slope)
}

/// All tunable model constants, loadable from a TOML config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    pub bpr: BprParams,
    pub cv: CvEnergyParams,
    pub cdcs: CdCsTable,
    pub bands: DriveCycleBands,
    /// mph; transition width of the μ blend used inside PHEV gradients.
    pub mu_smoothing_width: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            bpr: BprParams::default(),
            cv: CvEnergyParams::default(),
            cdcs: CdCsTable::default(),
            bands: DriveCycleBands::default(),
            mu_smoothing_width: 2.0,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        self.bpr.validate()?;
        self.cv.validate()?;
        self.cdcs.validate()?;
        self.bands.validate()?;
        if !(self.mu_smoothing_width >= 0.0) {
            return Err(Error::Config("mu_smoothing_width must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let params: CostParams = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("cost params serialize")
    }
}
