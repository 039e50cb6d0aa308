mod args;
mod error;
mod io;
mod report;
mod specdoc;

use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use log::warn;
use logsym_core::data::{write_mortality_csv, ObservationTable, ZeroPolicy};
use logsym_core::diagnostics::{
    compare_models, export_all_curves, simulated_envelope, write_curves_csv, write_envelope_csv,
    write_scatter_csv, EnvelopeKind, FittedModel,
};
use logsym_core::par::Execution;
use logsym_core::synthetic::{simulate_table, TruthSpec};
use serde::Serialize;

use args::{Cli, Command, DataArgs, FitSource};
use error::CliError;
use specdoc::SpecDoc;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Fit { data, spec, common } => {
            let mut doc: SpecDoc = io::read_json(&spec, "spec")?;
            let policy = resolve_policy(&data, &[&doc]);
            doc.adjust(policy, data.jacobian_adjust);
            let paths = io::prepare_outputs(&common.out, &["fit.json"], common.force)?;
            let table = load(&data, policy)?;
            let model = doc.fit(&table).map_err(|e| e.context(&doc.label()))?;
            io::write_json(&paths[0], &model)?;
            print!("{}", report::fit_summary(&model));
            require_converged(&model)
        }
        Command::Compare { data, spec, spec2, common } => {
            let mut a: SpecDoc = io::read_json(&spec, "spec")?;
            let mut b: SpecDoc = io::read_json(&spec2, "spec2")?;
            let policy = resolve_policy(&data, &[&a, &b]);
            a.adjust(policy, data.jacobian_adjust);
            b.adjust(policy, data.jacobian_adjust);
            let paths =
                io::prepare_outputs(&common.out, &["comparison.json", "scatter.csv"], common.force)?;
            let table = load(&data, policy)?;
            let fa = a.fit(&table).map_err(|e| e.context(&a.label()))?;
            let fb = b.fit(&table).map_err(|e| e.context(&b.label()))?;
            let report = compare_models(&fa, &fb, &table)?;
            io::write_json(&paths[0], &report)?;
            write_scatter_csv(&[&fa, &fb], &table, io::create(&paths[1])?)?;
            print!("{}", report::comparison_summary(&report));
            require_converged(&fa)?;
            require_converged(&fb)
        }
        Command::Envelope { data, source, kind, m_sims, level, common } => {
            let paths = io::prepare_outputs(&common.out, &["envelope.csv"], common.force)?;
            let (model, table) = obtain_fit(&data, &source)?;
            let kind = kind.unwrap_or_else(|| EnvelopeKind::default_for(&model));
            let env = simulated_envelope(
                &model,
                &table,
                kind,
                m_sims,
                level,
                common.seed,
                Execution::default(),
            )?;
            write_envelope_csv(&env, io::create(&paths[0])?)?;
            print!("{}", report::envelope_summary(&env));
            Ok(())
        }
        Command::Curves { data, source, grid_size, common } => {
            let paths = io::prepare_outputs(&common.out, &["curves.csv"], common.force)?;
            let (model, _) = obtain_fit(&data, &source)?;
            let FittedModel::Logsym(fit) = &model else {
                return Err(CliError::Input("a Poisson fit has no spline components".into()));
            };
            if fit.location.terms.is_empty() && fit.dispersion.terms.is_empty() {
                return Err(CliError::Input("the fit has no spline terms".into()));
            }
            let points = export_all_curves(fit, grid_size)?;
            write_curves_csv(&points, io::create(&paths[0])?)?;
            println!("{} rows written to {}", points.len(), paths[0].display());
            Ok(())
        }
        Command::Simulate { truth, common } => {
            let spec: TruthSpec = io::read_json(&truth, "truth document")?;
            spec.validate()?;
            let paths =
                io::prepare_outputs(&common.out, &["mortality.csv", "truth.json"], common.force)?;
            let sim = simulate_table(&spec, common.seed)?;
            write_mortality_csv(&sim.records, io::create(&paths[0])?)?;
            let cells = sim
                .table
                .cells
                .iter()
                .enumerate()
                .map(|(k, c)| TruthCell {
                    age_mid: c.age_mid,
                    period_mid: c.period_mid,
                    log_rate: sim.truth_log_rate[k],
                    log_phi: sim.truth_log_phi.as_ref().map(|v| v[k]),
                })
                .collect();
            io::write_json(&paths[1], &TruthRecord { seed: common.seed, truth: spec, cells })?;
            println!("{} rows written to {}", sim.records.len(), paths[0].display());
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct TruthRecord {
    seed: u64,
    truth: TruthSpec,
    cells: Vec<TruthCell>,
}

#[derive(Serialize)]
struct TruthCell {
    age_mid: f64,
    period_mid: f64,
    log_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    log_phi: Option<f64>,
}

/// `--policy`, else the first spec that names one, else the default.
fn resolve_policy(data: &DataArgs, docs: &[&SpecDoc]) -> ZeroPolicy {
    data.policy
        .or_else(|| docs.iter().find_map(|d| d.zero_policy()))
        .unwrap_or_default()
}

fn load(data: &DataArgs, policy: ZeroPolicy) -> Result<ObservationTable, CliError> {
    io::load_table(data.input.as_deref(), data.sex, data.site.as_deref(), policy)
}

fn obtain_fit(data: &DataArgs, source: &FitSource) -> Result<(FittedModel, ObservationTable), CliError> {
    if let Some(path) = &source.fit {
        let model: FittedModel = io::read_json(path, "fit")?;
        let policy = match &model {
            FittedModel::Logsym(f) => data.policy.unwrap_or(f.spec.zero_policy),
            FittedModel::Poisson(_) => data.policy.unwrap_or_default(),
        };
        let table = load(data, policy)?;
        return Ok((model, table));
    }
    let path: &Path = source.spec.as_deref().expect("clap enforces one source");
    let mut doc: SpecDoc = io::read_json(path, "spec")?;
    let policy = resolve_policy(data, &[&doc]);
    doc.adjust(policy, data.jacobian_adjust);
    let table = load(data, policy)?;
    let model = doc.fit(&table).map_err(|e| e.context(&doc.label()))?;
    if !model.converged() {
        warn!("{} did not converge", model.label());
    }
    Ok((model, table))
}

fn require_converged(model: &FittedModel) -> Result<(), CliError> {
    if model.converged() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("{} did not converge", model.label())))
    }
}
