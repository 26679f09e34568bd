use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use itr_bench::report::{fmt3, write_reports};
use itr_bench::synth::{schema_for, Scenario, OUTCOME_COLUMN, TREATMENT_COLUMN};
use itr_bench::{run, validate_config, BenchError, RunConfig};

#[derive(Parser)]
#[command(name = "itr-bench", version, about = "Compare individualized treatment rule methods on a two-arm trial")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit every configured method and write the report files.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Exit non-zero if any method fails.
        #[arg(long)]
        strict: bool,
        /// Replace the global seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a config without fitting anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a simulated trial as CSV and print a matching data block.
    Synth {
        #[arg(long, value_enum)]
        scenario: Scenario,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("ITR_BENCH_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| format!("ITR_BENCH_THREADS must be a positive integer, got `{raw}`"))?;
    if n == 0 {
        return Err("ITR_BENCH_THREADS must be at least 1".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn cmd_run(config: PathBuf, strict: bool, seed: Option<u64>) -> Result<ExitCode, BenchError> {
    let mut cfg = RunConfig::load(&config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let report = run(&cfg)?;
    let dir = cfg.output_path();
    write_reports(&report, &dir)?;

    let mut out = std::io::stdout().lock();
    let mut table = format!("{:<13} {:>6} {:>7} {:>7}  status\n", "method", "p_r", "value", "PAPE");
    for r in &report.methods {
        match &r.result {
            Ok(s) => {
                let p = &s.performance;
                let cell = |m: &itr_core::evaluation::Metric<itr_core::evaluation::Estimate>| {
                    m.as_ref().map_or("---".to_string(), |e| fmt3(e.estimate))
                };
                let mut status = String::from("ok");
                if !s.rule.flags.converged {
                    status.push_str(", not converged");
                }
                if s.rule.flags.constant_rule {
                    status.push_str(", constant rule");
                }
                table += &format!("{:<13} {:>6} {:>7} {:>7}  {status}\n", r.id(), fmt3(p.p_r), cell(&p.value), cell(&p.pape));
            }
            Err(e) => table += &format!("{:<13} {:>6} {:>7} {:>7}  ERROR: {e}\n", r.id(), "-", "-", "-"),
        }
    }
    let failures = report.failures().len();
    table += &format!("reports written to {}\n", dir.display());
    // A closed pipe on stdout is not an error worth reporting.
    let _ = out.write_all(table.as_bytes());
    if failures > 0 {
        eprintln!("{failures} method(s) failed; see run_manifest.json");
        if strict {
            return Ok(ExitCode::from(1));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(scenario: Scenario, out: PathBuf, n: usize, seed: u64) -> Result<ExitCode, BenchError> {
    let data = scenario.dataset(n, seed)?;
    data.write_csv(&out, TREATMENT_COLUMN, OUTCOME_COLUMN)?;
    let block = serde_json::json!({ "csv": { "path": out, "schema": schema_for(&data) } });
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&block)?);
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let outcome = match cli.command {
        Command::Run { config, strict, seed } => cmd_run(config, strict, seed),
        Command::Validate { config } => validate_config(&config).map(|d| {
            let _ = write!(std::io::stdout(), "{d}");
            ExitCode::SUCCESS
        }),
        Command::Synth { scenario, out, n, seed } => cmd_synth(scenario, out, n, seed),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}
