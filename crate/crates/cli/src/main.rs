use std::path::PathBuf;
use std::process::ExitCode;

use ccpftp_cli::{run, OutputFormat, ReportLevel, RunRequest};
use clap::{ArgAction, Parser, ValueEnum};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Out {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Report {
    Summary,
    #[value(name = "per_participant", alias = "per-participant")]
    PerParticipant,
    Full,
}

/// Market and credit costs of CCP default-resolution strategies.
#[derive(Debug, Parser)]
#[command(name = "ccpftp", version)]
struct Cli {
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// Comma-separated strategy names, `all8`, `auction` or `<strategy>_then_auction`.
    #[arg(long, value_delimiter = ',')]
    strategies: Vec<String>,
    /// Run the XVA study (default: whenever the scenario configures one).
    #[arg(long, action = ArgAction::SetTrue, conflicts_with = "no_xva")]
    xva: bool,
    /// Skip the XVA study.
    #[arg(long = "no-xva", action = ArgAction::SetTrue)]
    no_xva: bool,
    /// Monte Carlo seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo path count override.
    #[arg(long)]
    paths: Option<usize>,
    /// Drop initial margins and default fund from the XVA study.
    #[arg(long)]
    uncollateralized: bool,
    #[arg(long, value_enum, default_value = "table")]
    out: Out,
    #[arg(long, value_enum, default_value = "summary")]
    report: Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let req = RunRequest {
        scenario: cli.scenario,
        strategies: cli.strategies,
        xva: if cli.xva {
            Some(true)
        } else if cli.no_xva {
            Some(false)
        } else {
            None
        },
        seed: cli.seed,
        paths: cli.paths,
        uncollateralized: cli.uncollateralized,
        out: match cli.out {
            Out::Table => OutputFormat::Table,
            Out::Csv => OutputFormat::Csv,
            Out::Json => OutputFormat::Json,
        },
        report: match cli.report {
            Report::Summary => ReportLevel::Summary,
            Report::PerParticipant => ReportLevel::PerParticipant,
            Report::Full => ReportLevel::Full,
        },
    };
    ExitCode::from(run(&req) as u8)
}
