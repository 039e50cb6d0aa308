use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use logsym_core::data::{
    aggregate_cells, apply_zero_policy, parse_mortality_csv, ObservationTable, ParseOptions, Sex,
    ZeroPolicy,
};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::CliError;

pub fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("invalid {what} {}: {e}", path.display())))
}

/// Creates `dir` and returns the target paths, refusing to clobber
/// existing files unless `force` is set.
pub fn prepare_outputs(dir: &Path, names: &[&str], force: bool) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    let paths: Vec<PathBuf> = names.iter().map(|n| dir.join(n)).collect();
    if !force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(CliError::Input(format!(
                "{} exists; pass --force to overwrite",
                p.display()
            )));
        }
    }
    Ok(paths)
}

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| CliError::Input(format!("cannot serialize {}: {e}", path.display())))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

/// Reads the mortality CSV and aggregates the requested stratum. When
/// `sex`/`site` are omitted the file must contain a single stratum.
pub fn load_table(
    input: Option<&Path>,
    sex: Option<Sex>,
    site: Option<&str>,
    policy: ZeroPolicy,
) -> Result<ObservationTable, CliError> {
    let path = input.ok_or_else(|| CliError::Input("--input is required".into()))?;
    let file = File::open(path)
        .map_err(|e| CliError::Input(format!("cannot read input {}: {e}", path.display())))?;
    let records = parse_mortality_csv(BufReader::new(file), &ParseOptions::default())
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let strata: BTreeSet<(Sex, &str)> = records.iter().map(|r| (r.sex, r.site.as_str())).collect();
    let candidates: Vec<&(Sex, &str)> = strata
        .iter()
        .filter(|(s, t)| sex.is_none_or(|x| x == *s) && site.is_none_or(|x| x == *t))
        .collect();
    let (sex, site) = match candidates.as_slice() {
        [one] => **one,
        [] => {
            return Err(CliError::Input(format!(
                "no records for sex={} site={} in {}",
                sex.map(|s| s.to_string()).unwrap_or_else(|| "*".into()),
                site.unwrap_or("*"),
                path.display()
            )))
        }
        many => {
            let list: Vec<String> = many.iter().map(|(s, t)| format!("{s}/{t}")).collect();
            return Err(CliError::Input(format!(
                "input holds several strata ({}); choose one with --sex and --site",
                list.join(", ")
            )));
        }
    };
    let table = aggregate_cells(&records, sex, site)?;
    Ok(apply_zero_policy(&table, policy))
}
