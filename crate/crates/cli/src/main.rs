//! `ecash-sim`: simulate, monitor and report on electronic cash scenarios.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid scenario, 3 runtime or
//! I/O error, 4 detection cannot run (empty ledger or too little history),
//! 5 replication criteria failed.
//!
//! Standard output carries a tab-separated `key value` summary; diagnostics
//! go to standard error.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use chrono::{Duration, NaiveDate};
use clap::{Parser, Subcommand, ValueEnum};

use ecash_sim::config::ScenarioSpec;
use ecash_sim::detection::{
    merchant_flags, rolling_flags, DetectionError, Domain, RollingModel, SeriesCollector, Window,
};
use ecash_sim::ledger_io::{
    build_report, load_scenario, open_ledger, parse_scenario, scenario_digest, write_plots, write_report_files,
    LedgerHeader, LedgerWriter, RunReport, ScenarioErrors, FORMAT_VERSION,
};
use ecash_sim::replication::{check_street_corner, CheckPlan};
use ecash_sim::txgen::run;

const STREET_CORNER: &str = include_str!("../../core/scenarios/paper-fig2.toml");

#[derive(Parser)]
#[command(
    name = "ecash-sim",
    version,
    about = "Electronic cash economy simulator and counterfeit monitor"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its ledger, report and plots.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Independent runs on consecutive seeds, each under `out/seed-<n>`.
        #[arg(long, default_value_t = 1)]
        replicates: u32,
    },
    /// Run one monitoring system over a ledger.
    Detect {
        ledger: PathBuf,
        #[arg(long, value_enum)]
        system: System,
        /// Defaults to monthly for currency and weekly for merchants.
        #[arg(long)]
        window: Option<Window>,
        #[arg(long, default_value_t = 3.0)]
        k: f64,
        /// Defaults to linear for currency and log for merchants.
        #[arg(long, value_enum)]
        domain: Option<DomainArg>,
        #[arg(long)]
        seasonal_adjust: bool,
        #[arg(long, default_value_t = 3.0)]
        system_k: f64,
        /// Last day of the merchant calibration span; defaults to six days
        /// before the ledger's last day.
        #[arg(long)]
        calibration_end: Option<NaiveDate>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild the daily report and plots from a ledger.
    Report {
        ledger: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Take the detection settings from this scenario instead of the
        /// defaults.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Replicate the street-corner experiment and check its criteria.
    ReplicatePaper {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use this scenario instead of the built-in one.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Attack runs on seeds 1..=N.
        #[arg(long, default_value_t = 10)]
        attack_seeds: u64,
        /// No-attack runs on seeds 1..=N.
        #[arg(long, default_value_t = 20)]
        quiet_seeds: u64,
    },
    /// Check a scenario file and print its digest.
    Validate { scenario: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum System {
    Currency,
    Merchant,
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    Linear,
    Log,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 3, error }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure {
            code: 3,
            error: e.into(),
        }
    }
}

fn fail(code: u8, error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code,
        error: error.into(),
    }
}

fn invalid(errors: ScenarioErrors) -> Failure {
    let n = errors.0.len();
    fail(2, anyhow::anyhow!("{errors}\n{n} problem(s) in scenario"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Simulate {
            scenario,
            out,
            seed,
            replicates,
        } => simulate(&scenario, &out, seed, replicates),
        Command::Detect {
            ledger,
            system,
            window,
            k,
            domain,
            seasonal_adjust,
            system_k,
            calibration_end,
            out,
        } => {
            let (default_window, default_domain) = match system {
                System::Currency => (Window::Monthly, Domain::Linear),
                System::Merchant => (Window::Weekly, Domain::Log),
            };
            let mut model = RollingModel::new(
                window.unwrap_or(default_window),
                k,
                match domain {
                    Some(DomainArg::Linear) => Domain::Linear,
                    Some(DomainArg::Log) => Domain::Log,
                    None => default_domain,
                },
            );
            model.seasonal_adjust = seasonal_adjust;
            detect(&ledger, system, &model, system_k, calibration_end, out.as_deref())
        }
        Command::Report { ledger, out, scenario } => report(&ledger, &out, scenario.as_deref()),
        Command::ReplicatePaper {
            out,
            scenario,
            attack_seeds,
            quiet_seeds,
        } => replicate_paper(out.as_deref(), scenario.as_deref(), attack_seeds, quiet_seeds),
        Command::Validate { scenario } => validate(&scenario),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn emit(out: &mut impl Write, key: &str, value: impl std::fmt::Display) -> io::Result<()> {
    writeln!(out, "{key}\t{value}")
}

fn simulate(scenario: &Path, out: &Path, seed: Option<u64>, replicates: u32) -> Result<(), Failure> {
    let spec = load_scenario(scenario).map_err(invalid)?;
    let spec = seed.map_or_else(|| spec.clone(), |s| spec.with_seed(s));
    if replicates <= 1 {
        return simulate_one(&spec, out);
    }
    for i in 0..replicates as u64 {
        let s = spec.simulator.seed.wrapping_add(i);
        simulate_one(&spec.with_seed(s), &out.join(format!("seed-{s}")))?;
    }
    Ok(())
}

fn simulate_one(spec: &ScenarioSpec, out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let header = LedgerHeader {
        format_version: FORMAT_VERSION,
        scenario_digest: scenario_digest(spec),
        seed: spec.simulator.seed,
        start_date: spec.simulator.start_date,
        duration_days: spec.simulator.duration_days,
    };
    let path = out.join("ledger.csv");
    let mut writer = LedgerWriter::create(&path, &header).with_context(|| format!("creating {}", path.display()))?;
    let output = run(spec, &mut writer).map_err(|e| fail(3, e))?;
    let digest = writer.finish().context("writing the ledger")?;
    let report = report_from(&path, &spec.detection)?;
    write_outputs(&report, out)?;

    let mut so = io::stdout().lock();
    emit(&mut so, "ledger", path.display())?;
    emit(&mut so, "ledger_digest", &digest)?;
    emit(&mut so, "seed", spec.simulator.seed)?;
    emit(&mut so, "records", output.records)?;
    summary_lines(&mut so, &report)?;
    Ok(())
}

fn report_from(ledger: &Path, det: &ecash_sim::config::DetectionSpec) -> Result<RunReport, Failure> {
    let reader = open_ledger(ledger).with_context(|| format!("reading {}", ledger.display()))?;
    let header = reader.header().clone();
    build_report(&header, reader, det)
        .with_context(|| format!("reading {}", ledger.display()))
        .map_err(Failure::from)
}

fn write_outputs(report: &RunReport, out: &Path) -> Result<(), Failure> {
    write_report_files(report, out).context("writing the report")?;
    write_plots(report, out).map_err(|e| fail(3, anyhow::anyhow!("writing plots: {e}")))?;
    Ok(())
}

fn summary_lines(so: &mut impl Write, report: &RunReport) -> io::Result<()> {
    let c = &report.conservation;
    emit(so, "conservation", if c.holds() { "holds" } else { "broken" })?;
    emit(so, "issued", c.issued)?;
    emit(so, "injected", c.injected)?;
    emit(so, "redeemed", c.redeemed)?;
    emit(so, "balances", c.balances)?;
    emit(
        so,
        "purses_ever_locked",
        report.days.last().map_or(0, |d| d.ever_locked),
    )?;
    let date = |d: Option<NaiveDate>| d.map_or("none".to_string(), |d| d.to_string());
    emit(
        so,
        "currency_first_alarm",
        date(report.currency.as_ref().and_then(|c| c.first_alarm)),
    )?;
    emit(
        so,
        "merchant_first_alarm",
        date(report.merchant.as_ref().and_then(|m| m.first_alarm)),
    )
}

fn detect(
    ledger: &Path,
    system: System,
    model: &RollingModel,
    system_k: f64,
    calibration_end: Option<NaiveDate>,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let reader = open_ledger(ledger).with_context(|| format!("reading {}", ledger.display()))?;
    let header = reader.header().clone();
    let mut series = SeriesCollector::new(header.start_date, header.duration_days);
    let mut n = 0u64;
    for r in reader {
        series.observe(&r.with_context(|| format!("reading {}", ledger.display()))?);
        n += 1;
    }
    if n == 0 {
        return Err(fail(4, anyhow::anyhow!("{} holds no records", ledger.display())));
    }
    let warmup = |e: DetectionError| fail(4, e);
    // Buffered so a failed run prints no partial summary.
    let mut so = Vec::new();
    emit(&mut so, "records", n)?;
    emit(&mut so, "window", model.window.as_str())?;
    emit(&mut so, "k", model.k)?;
    let first = |d: Option<NaiveDate>| d.map_or("none".to_string(), |d| d.to_string());
    let json = match system {
        System::Currency => {
            let r = rolling_flags(&series.currency_series().map_err(warmup)?, model).map_err(warmup)?;
            emit(&mut so, "system", "currency")?;
            emit(&mut so, "evaluated_days", r.evaluated())?;
            emit(&mut so, "flagged_days", r.flag_count())?;
            emit(&mut so, "first_alarm", first(r.first_alarm))?;
            serde_json::to_string_pretty(&r)
        }
        System::Merchant => {
            let last = header.start_date + Duration::days(header.duration_days.saturating_sub(1) as i64);
            let cal = calibration_end.unwrap_or(last - Duration::days(6));
            let r = merchant_flags(&series.merchant_series(), model, system_k, cal).map_err(warmup)?;
            emit(&mut so, "system", "merchant")?;
            emit(&mut so, "merchants", r.per_merchant.len())?;
            emit(&mut so, "calibration_end", r.calibration_end)?;
            emit(&mut so, "p_hat", format!("{:.6}", r.p_hat))?;
            emit(&mut so, "flag_rate", format!("{:.6}", r.flag_rate()))?;
            emit(&mut so, "alarm_days", r.alarm_days())?;
            emit(&mut so, "first_alarm", first(r.first_alarm))?;
            serde_json::to_string_pretty(&r)
        }
    }
    .context("encoding the alarm report")?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("alarms.json");
        fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
        emit(&mut so, "alarm_report", path.display())?;
    }
    io::stdout().write_all(&so)?;
    Ok(())
}

fn report(ledger: &Path, out: &Path, scenario: Option<&Path>) -> Result<(), Failure> {
    let det = match scenario {
        Some(p) => load_scenario(p).map_err(invalid)?.detection,
        None => Default::default(),
    };
    let report = report_from(ledger, &det)?;
    write_outputs(&report, out)?;
    let mut so = io::stdout().lock();
    emit(&mut so, "records", report.records)?;
    summary_lines(&mut so, &report)?;
    Ok(())
}

fn replicate_paper(out: Option<&Path>, scenario: Option<&Path>, attack: u64, quiet: u64) -> Result<(), Failure> {
    let spec = match scenario {
        Some(p) => load_scenario(p).map_err(invalid)?,
        None => parse_scenario(STREET_CORNER).map_err(invalid)?,
    };
    let plan = CheckPlan {
        attack_seeds: (1..=attack).collect(),
        quiet_seeds: (1..=quiet).collect(),
        ..CheckPlan::default()
    };
    let result = check_street_corner(&spec, &plan).map_err(|e| fail(3, e))?;
    let mut table = String::new();
    table.push_str("status\tid\tcriterion\texpected\tobserved\n");
    for c in &result.criteria {
        table.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            if c.pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            c.expected,
            c.observed
        ));
    }
    print!("{table}");
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("criteria.tsv"), &table).context("writing criteria.tsv")?;
    }
    let failed: Vec<_> = result.criteria.iter().filter(|c| !c.pass).collect();
    if failed.is_empty() {
        return Ok(());
    }
    let mut diff = String::new();
    for c in failed {
        diff.push_str(&format!(
            "\n[{}] {}\n- expected: {}\n+ observed: {}",
            c.id, c.name, c.expected, c.observed
        ));
    }
    Err(fail(5, anyhow::anyhow!("replication criteria failed:{diff}")))
}

fn validate(scenario: &Path) -> Result<(), Failure> {
    let spec = load_scenario(scenario).map_err(invalid)?;
    let mut so = io::stdout().lock();
    emit(&mut so, "valid", "true")?;
    emit(&mut so, "scenario_digest", scenario_digest(&spec))?;
    emit(&mut so, "segments", spec.segments.len())?;
    emit(&mut so, "attacks", spec.attacks.len())?;
    Ok(())
}
