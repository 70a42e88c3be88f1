use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use peerfx::estim::{estimate_pipeline, first_step, EstimatorConfig};
use peerfx::ingest::{ingest_path, write_csv, HetBy, IngestOptions, IngestReport};
use peerfx::inference::{diagnostics, infer, VarianceKind};
use peerfx::model::{build_design, FixedEffect, InstrumentChoice, Sample};
use peerfx::report::{to_json, write_atomic, DiagnoseReport, EstimateReport};
use peerfx::sim::{monte_carlo, simulate_sample, DgpConfig, McOptions};
use peerfx::blockmat::AChoice;
use peerfx::{Error, ErrorKind};

const EXIT_VALIDATION: u8 = 2;
const EXIT_IDENTIFICATION: u8 = 3;
const EXIT_NONCONVERGENCE: u8 = 4;
const EXIT_IO: u8 = 1;

#[derive(Parser)]
#[command(name = "peerfx", version, about = "Peer-effect estimation from classroom test scores")]
struct Cli {
    /// Print failures as a JSON object on stderr.
    #[arg(long, global = true)]
    error_json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate (ρ, f1, δ) by efficient GMM.
    Estimate(EstimateArgs),
    /// Write a synthetic sample in the input schema.
    Simulate(SimulateArgs),
    /// Repeat simulate → estimate and summarize bias, RMSE and coverage.
    Montecarlo(MonteCarloArgs),
    /// Descriptives, rank correlations and first-step fit.
    Diagnose(DiagnoseArgs),
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum Format {
    Json,
    Tsv,
    #[default]
    Table,
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV.
    #[arg(long)]
    input: PathBuf,
    /// Field delimiter.
    #[arg(long, default_value = ",")]
    delimiter: char,
    /// Fixed effects (school, classtype or a cv_ column); repeatable.
    #[arg(long = "fe")]
    fe: Vec<String>,
    /// Excluded instrument: const or col:<name>[,<name>...].
    #[arg(long)]
    instrument: Option<String>,
    /// Variance groups: class_type, school, none or a classroom column.
    #[arg(long)]
    het_by: Option<String>,
    /// Quadratic-moment operator.
    #[arg(long)]
    a_choice: Option<String>,
}

#[derive(Args)]
struct Common {
    /// TOML file with [estimator], [dgp] and [montecarlo] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    common: Common,
    /// Sandwich middle matrix: model or clustered.
    #[arg(long)]
    variance: Option<String>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct MonteCarloArgs {
    #[command(flatten)]
    common: Common,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    variance: Option<String>,
    /// Quadratic-moment operator.
    #[arg(long)]
    a_choice: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct McFile {
    reps: Option<usize>,
    master_seed: Option<u64>,
    variance: Option<VarianceKind>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    estimator: EstimatorConfig,
    dgp: DgpConfig,
    montecarlo: McFile,
    /// Same values as `--het-by`.
    het_by: Option<String>,
}

/// Failure carrying the exit code it maps to.
struct Failure {
    code: u8,
    kind: &'static str,
    stage: Option<&'static str>,
    line: Option<usize>,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match e.kind() {
            ErrorKind::Validation => (EXIT_VALIDATION, "validation"),
            ErrorKind::Identification => (EXIT_IDENTIFICATION, "identification"),
            ErrorKind::Io => (EXIT_IO, "io"),
        };
        let stage = match &e {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        };
        let line = match e.root() {
            Error::Input { line, .. } => Some(*line),
            _ => None,
        };
        Failure {
            code,
            kind,
            stage,
            line,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

fn config_error(msg: impl Into<String>) -> Failure {
    Error::Config(msg.into()).into()
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile, Failure> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn apply_data_overrides(cfg: &mut EstimatorConfig, data: &DataArgs) -> Result<(), Failure> {
    if !data.fe.is_empty() {
        cfg.design.fixed_effects = data
            .fe
            .iter()
            .map(|f| f.parse::<FixedEffect>())
            .collect::<Result<_, _>>()?;
    }
    if let Some(i) = &data.instrument {
        cfg.design.instrument = i.parse::<InstrumentChoice>()?;
    }
    if let Some(a) = &data.a_choice {
        cfg.a_choice = a.parse::<AChoice>()?;
    }
    Ok(())
}

fn load_sample(data: &DataArgs, file: &ConfigFile) -> Result<(Sample, IngestReport), Failure> {
    if !data.delimiter.is_ascii() {
        return Err(config_error("delimiter must be a single ASCII character"));
    }
    let het_by: HetBy = match data.het_by.as_deref().or(file.het_by.as_deref()) {
        Some(h) => h.parse()?,
        None => HetBy::default(),
    };
    let opts = IngestOptions {
        delimiter: data.delimiter as u8,
        het_by,
    };
    if !data.input.exists() {
        return Err(config_error(format!("input file {} does not exist", data.input.display())));
    }
    Ok(ingest_path(&data.input, &opts)?)
}

fn emit(common: &Common, stem: &str, json: &str, tsv: &str, table: &str) -> Result<(), Failure> {
    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join(format!("{stem}.json")), json.as_bytes())?;
        write_atomic(&dir.join(format!("{stem}.tsv")), tsv.as_bytes())?;
        write_atomic(&dir.join(format!("{stem}.txt")), table.as_bytes())?;
    }
    let text = match common.format {
        Format::Json => json,
        Format::Tsv => tsv,
        Format::Table => table,
    };
    print!("{text}");
    Ok(())
}

fn parse_variance(flag: Option<&str>, file: Option<VarianceKind>) -> Result<VarianceKind, Failure> {
    match flag {
        Some(v) => Ok(v.parse::<VarianceKind>()?),
        None => Ok(file.unwrap_or_default()),
    }
}

fn run_estimate(args: &EstimateArgs) -> Result<u8, Failure> {
    let file = load_config(args.common.config.as_deref())?;
    let mut cfg = file.estimator.clone();
    apply_data_overrides(&mut cfg, &args.data)?;
    let variance = parse_variance(args.variance.as_deref(), file.montecarlo.variance)?;
    let (sample, ingest_report) = load_sample(&args.data, &file)?;
    if !ingest_report.missing_outcome.is_empty() {
        eprintln!(
            "note: {} students with a missing score are excluded from estimation rows",
            ingest_report.missing_outcome.len()
        );
    }
    let est = estimate_pipeline(&sample, &cfg)?;
    let inf = infer(&est, variance)?;
    let report = EstimateReport::new(&est, &inf, &sample.group_labels, &cfg);
    emit(&args.common, "estimate", &to_json(&report)?, &report.to_tsv(), &report.to_table())?;
    if !report.convergence.converged {
        eprintln!("estimate did not converge (scaled gradient {:e})", report.convergence.scaled_gradient);
        return Ok(EXIT_NONCONVERGENCE);
    }
    Ok(0)
}

fn run_diagnose(args: &DiagnoseArgs) -> Result<u8, Failure> {
    let file = load_config(args.common.config.as_deref())?;
    let mut cfg = file.estimator.clone();
    apply_data_overrides(&mut cfg, &args.data)?;
    cfg.validate()?;
    let (sample, _) = load_sample(&args.data, &file)?;
    let design = build_design(&sample, &cfg.design)?;
    let fs = first_step(&design, &cfg)?;
    let diag = diagnostics(&design, &fs.theta)?;
    let report = DiagnoseReport::new(&sample, &design, &fs, &diag);
    emit(&args.common, "diagnose", &to_json(&report)?, &report.to_tsv(), &report.to_table())?;
    Ok(0)
}

fn run_simulate(args: &SimulateArgs) -> Result<u8, Failure> {
    let file = load_config(args.common.config.as_deref())?;
    let mut dgp = file.dgp;
    if let Some(s) = args.seed {
        dgp.seed = s;
    }
    let (sample, truth) = simulate_sample(&dgp)?;
    let mut csv = Vec::new();
    write_csv(&sample, &mut csv)?;
    match &args.common.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            write_atomic(&dir.join("sample.csv"), &csv)?;
            let truth_json = to_json(&serde_json::json!({
                "theta0": truth.theta0,
                "gamma0": truth.gamma0,
                "group_labels": sample.group_labels,
                "dgp": dgp,
            }))?;
            write_atomic(&dir.join("truth.json"), truth_json.as_bytes())?;
            eprintln!(
                "wrote {} students in {} classrooms to {}",
                sample.n(),
                sample.classrooms.len(),
                dir.join("sample.csv").display()
            );
        }
        None => print!("{}", String::from_utf8_lossy(&csv)),
    }
    Ok(0)
}

fn run_montecarlo(args: &MonteCarloArgs) -> Result<u8, Failure> {
    let file = load_config(args.common.config.as_deref())?;
    let mut est = file.estimator.clone();
    if let Some(a) = &args.a_choice {
        est.a_choice = a.parse::<AChoice>()?;
    }
    let defaults = McOptions::default();
    let opts = McOptions {
        reps: args.reps.or(file.montecarlo.reps).unwrap_or(defaults.reps),
        master_seed: args.seed.or(file.montecarlo.master_seed).unwrap_or(defaults.master_seed),
        variance: parse_variance(args.variance.as_deref(), file.montecarlo.variance)?,
        ..defaults
    };
    let summary = monte_carlo(&file.dgp, &est, &opts)?;
    let tsv = summary.to_tsv();
    let mut table = format!(
        "replications {}  succeeded {}  failed {}  not converged {}\n",
        summary.reps, summary.succeeded, summary.failed, summary.non_converged
    );
    table.push_str(&format!(
        "{:<22} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
        "param", "truth", "mean", "bias", "rmse", "mc_sd", "mean_se", "coverage"
    ));
    for p in &summary.params {
        table.push_str(&format!(
            "{:<22} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>9.3}\n",
            p.name, p.truth, p.mean, p.bias, p.rmse, p.mc_sd, p.mean_se, p.coverage
        ));
    }
    emit(&args.common, "mc_summary", &to_json(&summary)?, &tsv, &table)?;
    Ok(0)
}

fn report_failure(f: &Failure, json: bool) {
    if json {
        let v = serde_json::json!({
            "error": {
                "kind": f.kind,
                "exit_code": f.code,
                "stage": f.stage,
                "line": f.line,
                "message": f.message,
            }
        });
        eprintln!("{v}");
    } else {
        eprintln!("error: {}", f.message);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Estimate(a) => run_estimate(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Montecarlo(a) => run_montecarlo(a),
        Command::Diagnose(a) => run_diagnose(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            report_failure(&f, cli.error_json);
            ExitCode::from(f.code)
        }
    }
}
