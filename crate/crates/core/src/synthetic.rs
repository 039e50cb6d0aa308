//! Mortality-like tables with known truth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{MortalityRecord, ObservationCell, ObservationTable, Sex, TableMeta, ZeroPolicy};
use crate::family::Generator;

#[derive(Debug, Error)]
pub enum TruthError {
    #[error("invalid truth document: {0}")]
    Invalid(String),
}

/// Either an explicit list or `{start, step, count}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum YearGrid {
    List(Vec<i32>),
    Regular { start: i32, step: i32, count: usize },
}

impl YearGrid {
    pub fn values(&self) -> Vec<i32> {
        match self {
            YearGrid::List(v) => v.clone(),
            YearGrid::Regular { start, step, count } => {
                (0..*count as i32).map(|k| start + k * step).collect()
            }
        }
    }
}

/// Inclusive age bands, either listed or `{start, width, count}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AgeBands {
    List(Vec<[u32; 2]>),
    Regular { start: u32, width: u32, count: usize },
}

impl AgeBands {
    pub fn values(&self) -> Vec<[u32; 2]> {
        match self {
            AgeBands::List(v) => v.clone(),
            AgeBands::Regular { start, width, count } => (0..*count as u32)
                .map(|k| [start + k * width, start + (k + 1) * width - 1])
                .collect(),
        }
    }
}

/// A surface over the age × period grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Surface {
    Parametric {
        intercept: f64,
        #[serde(default)]
        age: f64,
        #[serde(default)]
        period: f64,
    },
    /// `intercept + age_effect[band] + period_effect[year]`.
    Additive {
        intercept: f64,
        age_effect: Vec<f64>,
        period_effect: Vec<f64>,
    },
}

impl Surface {
    pub fn constant(value: f64) -> Self {
        Surface::Parametric { intercept: value, age: 0.0, period: 0.0 }
    }

    /// Tabulates `f_age` at band midpoints and `f_period` at the years.
    pub fn tabulate(
        intercept: f64,
        ages: &AgeBands,
        years: &YearGrid,
        f_age: impl Fn(f64) -> f64,
        f_period: impl Fn(f64) -> f64,
    ) -> Self {
        Surface::Additive {
            intercept,
            age_effect: ages.values().iter().map(|b| f_age(band_mid(*b))).collect(),
            period_effect: years.values().iter().map(|&y| f_period(y as f64)).collect(),
        }
    }

    fn at(&self, i: usize, j: usize, age: f64, period: f64) -> f64 {
        match self {
            Surface::Parametric { intercept, age: ba, period: bp } => intercept + ba * age + bp * period,
            Surface::Additive { intercept, age_effect, period_effect } => {
                intercept + age_effect[i] + period_effect[j]
            }
        }
    }

    fn check(&self, what: &str, n_age: usize, n_year: usize) -> Result<(), TruthError> {
        if let Surface::Additive { age_effect, period_effect, .. } = self {
            if age_effect.len() != n_age || period_effect.len() != n_year {
                return Err(TruthError::Invalid(format!(
                    "{what}: effects have lengths {}/{}, grid is {n_age}×{n_year}",
                    age_effect.len(),
                    period_effect.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PopulationSurface {
    Constant { value: f64 },
    /// Rows are age bands, columns are years.
    Grid { values: Vec<Vec<f64>> },
}

impl PopulationSurface {
    fn at(&self, i: usize, j: usize) -> f64 {
        match self {
            PopulationSurface::Constant { value } => *value,
            PopulationSurface::Grid { values } => values[i][j],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NoiseModel {
    PoissonCounts,
    Logsym { generator: Generator, log_phi: Surface },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSpec {
    pub age_bands: AgeBands,
    pub years: YearGrid,
    pub log_rate: Surface,
    pub population: PopulationSurface,
    pub noise: NoiseModel,
    #[serde(default = "default_sex")]
    pub sex: Sex,
    #[serde(default = "default_site")]
    pub site: String,
    #[serde(default)]
    pub zero_policy: ZeroPolicy,
}

fn default_sex() -> Sex {
    Sex::Female
}

fn default_site() -> String {
    "synthetic".into()
}

fn band_mid(b: [u32; 2]) -> f64 {
    (b[0] + b[1]) as f64 / 2.0
}

impl TruthSpec {
    pub fn validate(&self) -> Result<(), TruthError> {
        let bands = self.age_bands.values();
        let years = self.years.values();
        if bands.is_empty() || years.is_empty() {
            return Err(TruthError::Invalid("age and year grids must be non-empty".into()));
        }
        if bands.iter().any(|b| b[0] > b[1]) {
            return Err(TruthError::Invalid("age band with lower bound above upper".into()));
        }
        let mut mids: Vec<u32> = bands.iter().map(|b| b[0] + b[1]).collect();
        mids.sort_unstable();
        let mut ys = years.clone();
        ys.sort_unstable();
        if mids.windows(2).any(|w| w[0] == w[1]) || ys.windows(2).any(|w| w[0] == w[1]) {
            return Err(TruthError::Invalid("duplicate age midpoint or year".into()));
        }
        self.log_rate.check("log_rate", bands.len(), years.len())?;
        match &self.population {
            PopulationSurface::Constant { value } if !(*value > 0.0 && value.is_finite()) => {
                return Err(TruthError::Invalid("population must be positive".into()));
            }
            PopulationSurface::Grid { values } => {
                if values.len() != bands.len() || values.iter().any(|r| r.len() != years.len()) {
                    return Err(TruthError::Invalid("population grid shape mismatch".into()));
                }
                if values.iter().flatten().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(TruthError::Invalid("population must be positive".into()));
                }
            }
            _ => {}
        }
        if let NoiseModel::Logsym { generator, log_phi } = &self.noise {
            generator.validate().map_err(|e| TruthError::Invalid(e.to_string()))?;
            log_phi.check("log_phi", bands.len(), years.len())?;
        }
        for (i, b) in bands.iter().enumerate() {
            for (j, &y) in years.iter().enumerate() {
                if !self.log_rate.at(i, j, band_mid(*b), y as f64).is_finite() {
                    return Err(TruthError::Invalid("log-rate surface is not finite".into()));
                }
            }
        }
        Ok(())
    }
}

/// Simulated table plus the truth aligned with its cells.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedTable {
    pub table: ObservationTable,
    pub records: Vec<MortalityRecord>,
    pub truth_log_rate: Vec<f64>,
    pub truth_log_phi: Option<Vec<f64>>,
}

pub fn simulate_table(truth: &TruthSpec, seed: u64) -> Result<SimulatedTable, TruthError> {
    truth.validate()?;
    let bands = truth.age_bands.values();
    let years = truth.years.values();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(bands.len() * years.len());
    let mut dropped = 0;
    for (i, band) in bands.iter().enumerate() {
        for (j, &year) in years.iter().enumerate() {
            let age = band_mid(*band);
            let period = year as f64;
            let pop = truth.population.at(i, j);
            let lr = truth.log_rate.at(i, j, age, period);
            let (deaths, t, lphi) = match &truth.noise {
                NoiseModel::PoissonCounts => {
                    let mean = pop * lr.exp();
                    let d = Poisson::new(mean)
                        .map(|p| p.sample(&mut rng) as u64)
                        .unwrap_or(0);
                    let t = match truth.zero_policy {
                        ZeroPolicy::AddOne => d as f64 + 1.0,
                        _ if d > 0 => d as f64,
                        ZeroPolicy::AddHalf => 0.5,
                        ZeroPolicy::Drop => {
                            dropped += 1;
                            continue;
                        }
                    };
                    (d, t, None)
                }
                NoiseModel::Logsym { generator, log_phi } => {
                    let lp = log_phi.at(i, j, age, period);
                    let eps = generator.draw(&mut rng);
                    let t = (pop.ln() + lr + (0.5 * lp).exp() * eps).exp();
                    (t.round() as u64, t, Some(lp))
                }
            };
            let record = MortalityRecord {
                sex: truth.sex,
                site: truth.site.clone(),
                age_lo: band[0],
                age_hi: band[1],
                year,
                deaths,
                population: pop,
            };
            rows.push((ObservationCell::new(age, period, deaths, t, pop), lr, lphi, record));
        }
    }
    rows.sort_by(|a, b| {
        (a.0.age_mid, a.0.period_mid)
            .partial_cmp(&(b.0.age_mid, b.0.period_mid))
            .expect("finite keys")
    });
    let logsym = matches!(truth.noise, NoiseModel::Logsym { .. });
    let truth_log_rate = rows.iter().map(|r| r.1).collect();
    let truth_log_phi = logsym.then(|| rows.iter().map(|r| r.2.unwrap_or(0.0)).collect());
    let records = rows.iter().map(|r| r.3.clone()).collect();
    let cells = rows.into_iter().map(|r| r.0).collect();
    let meta = TableMeta {
        sex: Some(truth.sex),
        site: Some(truth.site.clone()),
        policy: (!logsym).then_some(truth.zero_policy),
        dropped,
    };
    Ok(SimulatedTable {
        table: ObservationTable::from_cells(cells, meta),
        records,
        truth_log_rate,
        truth_log_phi,
    })
}

/// Example truths on 16 five-year age bands × 20 years (1994–2013).
pub mod scenarios {
    use super::*;

    pub fn ages() -> AgeBands {
        AgeBands::Regular { start: 0, width: 5, count: 16 }
    }

    pub fn years() -> YearGrid {
        YearGrid::Regular { start: 1994, step: 1, count: 20 }
    }

    fn base(log_rate: Surface, noise: NoiseModel) -> TruthSpec {
        TruthSpec {
            age_bands: ages(),
            years: years(),
            log_rate,
            population: PopulationSurface::Constant { value: 2e5 },
            noise,
            sex: Sex::Female,
            site: "synthetic".into(),
            zero_policy: ZeroPolicy::AddHalf,
        }
    }

    /// `−20 + 0.05 age + 0.005 year`; expected counts from about 10 to 450.
    pub fn linear_log_rate() -> Surface {
        Surface::Parametric { intercept: -20.0, age: 0.05, period: 0.005 }
    }

    /// Log-rate rising steeply with age and then flattening, with a mild
    /// period decline.
    pub fn curved_log_rate() -> Surface {
        Surface::tabulate(
            -9.0,
            &ages(),
            &years(),
            |a| 4.0 * (1.0 - (-(a - 2.0) / 25.0).exp()),
            |y| -0.01 * (y - 2003.5),
        )
    }

    /// `log φ` falling linearly with age, from about −4.5 to −1.6.
    pub fn age_varying_log_phi() -> Surface {
        Surface::tabulate(-3.0, &ages(), &years(), |a| -1.5 * (a - 40.0) / 40.0, |_| 0.0)
    }

    pub fn linear_counts() -> TruthSpec {
        base(linear_log_rate(), NoiseModel::PoissonCounts)
    }

    pub fn linear_logsym(generator: Generator, log_phi: f64) -> TruthSpec {
        base(
            linear_log_rate(),
            NoiseModel::Logsym { generator, log_phi: Surface::constant(log_phi) },
        )
    }

    /// Nonlinear age effect with age-varying dispersion.
    pub fn curved_logsym(generator: Generator) -> TruthSpec {
        base(
            curved_log_rate(),
            NoiseModel::Logsym { generator, log_phi: age_varying_log_phi() },
        )
    }
}
