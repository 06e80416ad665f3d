//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use super::config::{parse_override, ConfigFile};
use super::experiment::{evaluate, run_experiment, SweepKind, TrialRecord};
use super::metrics::to_db;
use super::output::{self, Format};
use super::overestimate::{run_appendix_c, OverestimateSpec};
use super::selftest::run_selftest;
use crate::dsmdt::{run_ds_mdt, Algorithm, DsMdtOptions, EstimateReport};
use crate::error::{Error, Result};
use crate::scenario::{generate, ScenarioConfig};

#[derive(Debug, Parser)]
#[command(
    name = "rischan",
    version,
    about = "RIS-aided multi-user channel estimation benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate one scenario, run the estimators on it and report.
    Simulate(SimulateArgs),
    /// Monte-Carlo sweep over one scenario parameter.
    Sweep(SweepArgs),
    /// Source-count overestimation study for ULA MUSIC.
    #[command(name = "appendix-c")]
    AppendixC(AppendixArgs),
    /// Noiseless exact-recovery checks.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Flat TOML file with scenario and experiment keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario preset (`full` or `desk`); overrides the file's `preset`.
    #[arg(long)]
    preset: Option<String>,
    /// Scenario field override, e.g. `--set snr_db=5 --set l2=[3,2,3,3]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Comma-separated algorithms: dsmdt, dsmdt_kpn, independent_fallback.
    #[arg(long, value_delimiter = ',')]
    algo: Vec<String>,
}

impl ScenarioArgs {
    fn file(&self) -> Result<ConfigFile> {
        let mut f = match &self.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        if let Some(p) = &self.preset {
            f.preset = Some(p.clone());
        }
        for s in &self.overrides {
            let (k, v) = parse_override(s)?;
            f.scenario.insert(k, v);
        }
        if !self.algo.is_empty() {
            f.algorithms = Some(
                self.algo
                    .iter()
                    .map(|s| Algorithm::parse(s))
                    .collect::<Result<_>>()?,
            );
        }
        Ok(f)
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write the full estimate reports as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the per-algorithm trial records as JSON lines.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Master seed (required so every run is reproducible).
    #[arg(long)]
    seed: u64,
    /// Sweep parameter (p, snr, q, m, pmis); overrides the file.
    #[arg(long)]
    sweep: Option<String>,
    /// Comma-separated sweep values; overrides the file.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    values: Vec<f64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Summary table; printed to standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `csv` or `json` (JSON lines); defaults to the extension of `--out`.
    #[arg(long)]
    format: Option<String>,
    /// Per-trial JSON-lines dump.
    #[arg(long)]
    dump: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Suppress progress messages on standard error.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Args)]
struct AppendixArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// Directory receiving `summary.csv` and the spectrum dumps.
    #[arg(long, default_value = "appendix_c")]
    out: PathBuf,
    /// Array sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [8usize, 16, 32, 64, 128])]
    m: Vec<usize>,
    /// Assumed source counts.
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 3, 4, 5])]
    counts: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    snapshots: usize,
}

#[derive(Debug, Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Noiseless scenarios per algorithm.
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long)]
    workers: Option<usize>,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let res = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::AppendixC(a) => appendix_c(a),
        Command::Selftest(a) => selftest(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

#[derive(Serialize)]
struct SimulateOutput<'a> {
    config: &'a ScenarioConfig,
    seed: u64,
    reports: Vec<(Algorithm, EstimateReport)>,
}

fn simulate(a: SimulateArgs) -> Result<i32> {
    let file = a.scenario.file()?;
    let cfg = file.scenario_config()?;
    let algorithms = file
        .algorithms
        .clone()
        .unwrap_or_else(|| Algorithm::ALL.to_vec());
    let ms = generate(&cfg, a.seed)?;
    let mut records: Vec<TrialRecord> = Vec::new();
    let mut reports = Vec::new();
    println!(
        "{:<22} {:>10} {:>4} {:>12} {:>6} {:>9}",
        "algorithm", "nmse_db", "l1", "l2", "valid", "fallback"
    );
    for &alg in &algorithms {
        let rec = evaluate(&ms, &cfg, alg, 0.0, a.seed);
        let nmse = rec
            .nmse
            .map(|v| format!("{:.2}", to_db(v)))
            .unwrap_or_else(|| "failed".into());
        println!(
            "{:<22} {:>10} {:>4} {:>12} {:>6} {:>9}",
            alg.name(),
            nmse,
            rec.l1_hat,
            format!("{:?}", rec.l2_hat),
            rec.valid,
            rec.fallback
        );
        if let Some(f) = &rec.failure {
            eprintln!("{}: {f}", alg.name());
        }
        if a.out.is_some() {
            let mut opts = DsMdtOptions::for_algorithm(alg, cfg.l2_overestimate, &ms.scenario);
            opts.seed = a.seed;
            reports.push((alg, run_ds_mdt(&ms, &opts)));
        }
        records.push(rec);
    }
    println!(
        "true counts: l1 = {}, l2 = {:?}",
        ms.scenario.bs.path_count(),
        records[0].l2_true
    );
    if let Some(path) = &a.out {
        let out = SimulateOutput {
            config: &cfg,
            seed: a.seed,
            reports,
        };
        write_file(path, serde_json::to_string_pretty(&out)?.as_bytes())?;
    }
    if let Some(path) = &a.dump {
        output::save_trials(path, &records)?;
    }
    Ok(0)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn sweep(a: SweepArgs) -> Result<i32> {
    let mut file = a.scenario.file()?;
    if let Some(s) = &a.sweep {
        file.sweep = Some(SweepKind::parse(s)?);
    }
    if !a.values.is_empty() {
        file.values = Some(a.values.clone());
    }
    file.seed = Some(a.seed);
    if a.trials.is_some() {
        file.trials = a.trials;
    }
    if a.workers.is_some() {
        file.workers = a.workers;
    }
    if a.dump.is_some() {
        file.dump = a.dump.clone();
    }
    if a.out.is_some() {
        file.output = a.out.clone();
    }
    let mut spec = file.experiment()?;
    spec.progress = !a.quiet;
    let out_path = spec.output_path.take();
    let format = match (&a.format, &out_path) {
        (Some(f), _) => Format::parse(f)?,
        (None, Some(p)) => Format::from_path(p),
        (None, None) => Format::Csv,
    };
    let (rows, _) = run_experiment(&spec)?;
    match out_path {
        Some(p) => {
            output::save_rows(&p, &rows, format)?;
            eprintln!("wrote {} rows to {}", rows.len(), p.display());
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            output::write_rows(&mut lock, &rows, format)?;
            lock.flush()?;
        }
    }
    Ok(0)
}

fn appendix_c(a: AppendixArgs) -> Result<i32> {
    let spec = OverestimateSpec {
        m_list: a.m,
        counts: a.counts,
        snapshots: a.snapshots,
        trials: a.trials,
        ..OverestimateSpec::new(a.seed)
    };
    let report = run_appendix_c(&spec)?;
    println!(
        "{:>5} {:>8} {:>10} {:>12}",
        "m", "assumed", "nmse_db", "mean_bias"
    );
    for r in &report.rows {
        println!(
            "{:>5} {:>8} {:>10.2} {:>12.2e}",
            r.m, r.assumed, r.nmse_db, r.mean_bias
        );
    }
    for &m in &spec.m_list {
        println!(
            "M = {m}: spread across counts {:.2} dB",
            report.spread_db(m)
        );
    }
    report.save(&a.out)?;
    eprintln!("wrote {}", a.out.display());
    Ok(0)
}

fn selftest(a: SelftestArgs) -> Result<i32> {
    let checks = run_selftest(a.trials, a.seed, a.workers);
    for c in &checks {
        println!("{c}");
    }
    Ok(if checks.iter().all(|c| c.passed) {
        0
    } else {
        1
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> i32 {
        cli_main(std::iter::once("rischan").chain(args.iter().copied()))
    }

    #[test]
    fn command_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn sweep_requires_seed() {
        assert_ne!(
            run(&["sweep", "--preset", "desk", "--sweep", "snr", "--values", "10"]),
            0
        );
    }

    #[test]
    fn missing_config_is_an_error() {
        assert_eq!(run(&["simulate", "--config", "/nonexistent/x.toml"]), 2);
    }

    #[test]
    fn unknown_override_is_an_error() {
        assert_eq!(
            run(&["simulate", "--preset", "desk", "--set", "bogus=1"]),
            2
        );
    }

    #[test]
    fn sweep_writes_requested_format() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("rows.txt");
        let dump = dir.path().join("trials.jsonl");
        let code = run(&[
            "sweep",
            "--preset",
            "desk",
            "--sweep",
            "snr",
            "--values",
            "10",
            "--trials",
            "2",
            "--seed",
            "3",
            "--algo",
            "dsmdt_kpn",
            "--format",
            "json",
            "--quiet",
            "--out",
            out.to_str().unwrap(),
            "--dump",
            dump.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let rows =
            output::read_rows(std::fs::File::open(&out).unwrap(), Format::JsonLines).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].trials, 2);
        assert_eq!(output::load_trials(&dump).unwrap().len(), 2);
    }
}
