//! Mortality records, aggregation into age × period cells, zero-count
//! handling, and the CSV formats for both.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use thiserror::Error;

pub const MORTALITY_COLUMNS: [&str; 7] = [
    "sex",
    "site",
    "age_lo",
    "age_hi",
    "year",
    "deaths",
    "population",
];
pub const TABLE_COLUMNS: [&str; 6] = [
    "age_mid",
    "period_mid",
    "deaths_raw",
    "t_value",
    "population",
    "log_rate",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("format error: missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("line {line}: validation failed: {message}")]
    Validation { line: u64, message: String },
    #[error("no records for sex={sex}, site={site}")]
    EmptyTable { sex: String, site: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
        }
    }
}

impl std::str::FromStr for Sex {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" | "f" => Ok(Sex::Female),
            "male" | "m" => Ok(Sex::Male),
            other => Err(format!("unknown sex `{other}`")),
        }
    }
}

impl std::fmt::Display for Sex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One row of the raw mortality file. Age bands are inclusive; an
/// open-ended top band is expected to be closed off by the data preparer.
#[derive(Debug, Clone, PartialEq)]
pub struct MortalityRecord {
    pub sex: Sex,
    pub site: String,
    pub age_lo: u32,
    pub age_hi: u32,
    pub year: i32,
    pub deaths: u64,
    pub population: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    pub min_year: i32,
    pub max_year: i32,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            min_year: 1900,
            max_year: 2100,
        }
    }
}

fn field(rec: &csv::StringRecord, idx: usize) -> &str {
    rec.get(idx).unwrap_or("").trim()
}

/// Parses the mortality CSV (`sex,site,age_lo,age_hi,year,deaths,population`).
/// Columns are matched by name; rows are returned in file order without
/// aggregation.
pub fn parse_mortality_csv<R: Read>(
    source: R,
    opts: &ParseOptions,
) -> Result<Vec<MortalityRecord>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 7];
    for (slot, name) in idx.iter_mut().zip(MORTALITY_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))?;
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let row_err = |message: String| IngestError::Row { line, message };
        let invalid = |message: String| IngestError::Validation { line, message };

        let sex: Sex = field(&row, idx[0]).parse().map_err(row_err)?;
        let site = field(&row, idx[1]).to_string();
        let int = |i: usize, name: &str| -> Result<i64, IngestError> {
            let s = field(&row, idx[i]);
            s.parse::<i64>()
                .map_err(|_| row_err(format!("non-numeric {name} `{s}`")))
        };
        let age_lo = int(2, "age_lo")?;
        let age_hi = int(3, "age_hi")?;
        let year = int(4, "year")?;
        let deaths = int(5, "deaths")?;
        let pop_s = field(&row, idx[6]);
        let population: f64 = pop_s
            .parse()
            .map_err(|_| row_err(format!("non-numeric population `{pop_s}`")))?;

        if age_lo < 0 || age_hi < age_lo || age_hi > u32::MAX as i64 {
            return Err(invalid(format!("bad age band [{age_lo}, {age_hi}]")));
        }
        if year < opts.min_year as i64 || year > opts.max_year as i64 {
            return Err(invalid(format!(
                "year {year} outside [{}, {}]",
                opts.min_year, opts.max_year
            )));
        }
        if deaths < 0 {
            return Err(invalid(format!("negative deaths {deaths}")));
        }
        if !(population > 0.0 && population.is_finite()) {
            return Err(invalid(format!("population must be positive, got {pop_s}")));
        }
        out.push(MortalityRecord {
            sex,
            site,
            age_lo: age_lo as u32,
            age_hi: age_hi as u32,
            year: year as i32,
            deaths: deaths as u64,
            population,
        });
    }
    Ok(out)
}

/// Writes records in the mortality CSV schema.
pub fn write_mortality_csv<W: Write>(
    records: &[MortalityRecord],
    sink: W,
) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(MORTALITY_COLUMNS)?;
    for r in records {
        w.write_record([
            r.sex.as_str().to_string(),
            r.site.clone(),
            r.age_lo.to_string(),
            r.age_hi.to_string(),
            r.year.to_string(),
            r.deaths.to_string(),
            fmt_num(r.population),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest representation that parses back to the identical `f64`.
pub fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}

/// Handling of zero death counts before taking `log T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroPolicy {
    Drop,
    #[default]
    AddHalf,
    AddOne,
}

impl std::str::FromStr for ZeroPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "drop" => Ok(ZeroPolicy::Drop),
            "add_half" => Ok(ZeroPolicy::AddHalf),
            "add_one" => Ok(ZeroPolicy::AddOne),
            other => Err(format!("unknown zero policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationCell {
    pub age_mid: f64,
    pub period_mid: f64,
    pub deaths_raw: u64,
    /// Response `T` after the zero policy.
    pub t_value: f64,
    /// `log(t_value)`.
    pub log_t: f64,
    /// Offset `log(population)`.
    pub log_pop: f64,
    pub population: f64,
}

impl ObservationCell {
    pub fn new(age_mid: f64, period_mid: f64, deaths_raw: u64, t_value: f64, population: f64) -> Self {
        Self {
            age_mid,
            period_mid,
            deaths_raw,
            t_value,
            log_t: t_value.ln(),
            log_pop: population.ln(),
            population,
        }
    }

    /// `log(T / population)`.
    pub fn observed_log_rate(&self) -> f64 {
        self.log_t - self.log_pop
    }
}

pub fn observed_log_rate(cell: &ObservationCell) -> f64 {
    cell.observed_log_rate()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TableMeta {
    pub sex: Option<Sex>,
    pub site: Option<String>,
    pub policy: Option<ZeroPolicy>,
    pub dropped: usize,
}

/// Cells sorted by `(age_mid, period_mid)`, one per key.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable {
    pub cells: Vec<ObservationCell>,
    pub meta: TableMeta,
}

impl ObservationTable {
    /// Builds a table from arbitrary cells, sorting them into canonical order.
    /// Panics on duplicate keys.
    pub fn from_cells(mut cells: Vec<ObservationCell>, meta: TableMeta) -> Self {
        cells.sort_by(|a, b| {
            (a.age_mid, a.period_mid)
                .partial_cmp(&(b.age_mid, b.period_mid))
                .expect("finite keys")
        });
        assert!(
            cells
                .windows(2)
                .all(|w| (w[0].age_mid, w[0].period_mid) != (w[1].age_mid, w[1].period_mid)),
            "duplicate (age_mid, period_mid) cell"
        );
        Self { cells, meta }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn ages(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.age_mid).collect()
    }

    pub fn periods(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.period_mid).collect()
    }

    pub fn log_t(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.log_t).collect()
    }

    pub fn log_pop(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.log_pop).collect()
    }

    pub fn observed_log_rates(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.observed_log_rate()).collect()
    }

    /// Copy with the log-scale response replaced (simulation refits).
    pub fn with_log_response(&self, y: &[f64]) -> Self {
        assert_eq!(y.len(), self.len());
        let mut out = self.clone();
        for (c, &v) in out.cells.iter_mut().zip(y) {
            c.log_t = v;
            c.t_value = v.exp();
        }
        out
    }

    /// Copy with the death counts replaced; `t_value` follows the counts.
    pub fn with_deaths(&self, deaths: &[u64]) -> Self {
        assert_eq!(deaths.len(), self.len());
        let mut out = self.clone();
        for (c, &d) in out.cells.iter_mut().zip(deaths) {
            c.deaths_raw = d;
            c.t_value = d as f64;
            c.log_t = c.t_value.ln();
        }
        out
    }

    /// SHA-256 over the bit patterns of the cell keys.
    pub fn key_digest(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.cells {
            h.update(c.age_mid.to_bits().to_le_bytes());
            h.update(c.period_mid.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Sums deaths and populations of the `(sex, site)` records into one cell
/// per `(age_mid, year)`.
pub fn aggregate_cells(
    records: &[MortalityRecord],
    sex: Sex,
    site: &str,
) -> Result<ObservationTable, IngestError> {
    // Key on age_lo + age_hi so midpoints compare exactly.
    let mut groups: BTreeMap<(u64, i32), (u64, Vec<f64>)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.sex == sex && r.site == site) {
        let entry = groups
            .entry((r.age_lo as u64 + r.age_hi as u64, r.year))
            .or_default();
        entry.0 += r.deaths;
        entry.1.push(r.population);
    }
    if groups.is_empty() {
        return Err(IngestError::EmptyTable {
            sex: sex.to_string(),
            site: site.to_string(),
        });
    }
    let cells = groups
        .into_iter()
        .map(|((band, year), (deaths, mut pops))| {
            // Fixed summation order keeps the result independent of input order.
            pops.sort_by(f64::total_cmp);
            let population: f64 = pops.iter().sum();
            ObservationCell::new(band as f64 / 2.0, year as f64, deaths, deaths as f64, population)
        })
        .collect();
    Ok(ObservationTable::from_cells(
        cells,
        TableMeta {
            sex: Some(sex),
            site: Some(site.to_string()),
            policy: None,
            dropped: 0,
        },
    ))
}

pub fn apply_zero_policy(table: &ObservationTable, policy: ZeroPolicy) -> ObservationTable {
    let mut meta = table.meta.clone();
    meta.policy = Some(policy);
    let mut cells = Vec::with_capacity(table.len());
    for c in &table.cells {
        let t = match policy {
            ZeroPolicy::Drop if c.deaths_raw == 0 => {
                meta.dropped += 1;
                continue;
            }
            ZeroPolicy::AddHalf if c.deaths_raw == 0 => 0.5,
            ZeroPolicy::AddOne => c.deaths_raw as f64 + 1.0,
            _ => c.t_value,
        };
        cells.push(ObservationCell::new(
            c.age_mid,
            c.period_mid,
            c.deaths_raw,
            t,
            c.population,
        ));
    }
    ObservationTable { cells, meta }
}

/// Writes `age_mid,period_mid,deaths_raw,t_value,population,log_rate`.
pub fn write_table_csv<W: Write>(table: &ObservationTable, sink: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(TABLE_COLUMNS)?;
    for c in &table.cells {
        w.write_record([
            fmt_num(c.age_mid),
            fmt_num(c.period_mid),
            c.deaths_raw.to_string(),
            fmt_num(c.t_value),
            fmt_num(c.population),
            fmt_num(c.observed_log_rate()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_table_csv`]; `log_rate` is recomputed.
pub fn read_table_csv<R: Read>(source: R) -> Result<ObservationTable, IngestError> {
    let mut rdr = csv::Reader::from_reader(source);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(&TABLE_COLUMNS[..5]) {
        *slot = headers
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))?;
    }
    let mut cells = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let num = |i: usize| -> Result<f64, IngestError> {
            field(&row, idx[i]).parse().map_err(|_| IngestError::Row {
                line,
                message: format!("non-numeric {}", TABLE_COLUMNS[i]),
            })
        };
        let deaths: u64 = field(&row, idx[2]).parse().map_err(|_| IngestError::Row {
            line,
            message: "non-numeric deaths_raw".into(),
        })?;
        cells.push(ObservationCell::new(num(0)?, num(1)?, deaths, num(3)?, num(4)?));
    }
    Ok(ObservationTable::from_cells(cells, TableMeta::default()))
}
