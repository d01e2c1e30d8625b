use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fiduciary::audit::{self, AuditOptions, Format, LoadedScenario, ScenarioError};
use fiduciary::context::{self, ContextError};

/// Exit code for unreadable input, schema errors and bad usage.
const EXIT_INPUT: u8 = 3;

#[derive(Parser)]
#[command(name = "fiduciary", version, about = "Audit fiduciary duties of an AI system against a scenario model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Machine,
}

#[derive(Subcommand)]
enum Command {
    /// Run the six-step audit. Exits 0 on Pass, 1 on Warn, 2 on Fail.
    Check {
        scenario: PathBuf,
        /// Write the rendered report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: FormatArg,
        #[arg(long, default_value_t = audit::DEFAULT_TOL)]
        tol: f64,
        /// Overrides metadata.seed; 0 when neither is set.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a scenario file against the schema and its context against the norm rules.
    Validate { scenario: PathBuf },
    /// List the subsidiary duties cataloged for a context.
    Catalog { label: String },
}

fn load(path: &Path) -> Result<LoadedScenario, ExitCode> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        ExitCode::from(EXIT_INPUT)
    })?;
    audit::load_scenario(&text).map_err(|e| {
        report_schema_error(path, &e);
        ExitCode::from(EXIT_INPUT)
    })
}

fn report_schema_error(path: &Path, e: &ScenarioError) {
    let errors = match e {
        ScenarioError::References(v) => v.as_slice(),
        single => std::slice::from_ref(single),
    };
    for err in errors {
        eprintln!("error: {}: {err}", path.display());
    }
}

fn check(path: &Path, report: Option<&Path>, format: FormatArg, tol: f64, seed: Option<u64>) -> ExitCode {
    if !(tol.is_finite() && tol > 0.0) {
        eprintln!("error: --tol must be a positive finite number");
        return ExitCode::from(EXIT_INPUT);
    }
    let loaded = match load(path) {
        Ok(l) => l,
        Err(code) => return code,
    };
    let result = audit::run_audit(&loaded, AuditOptions { seed, tol });
    let format = match format {
        FormatArg::Text => Format::Text,
        FormatArg::Machine => Format::Machine,
    };
    let rendered = audit::emit_report(&result, format);
    match report {
        Some(out) => {
            if let Err(e) = std::fs::write(out, rendered) {
                eprintln!("error: cannot write {}: {e}", out.display());
                return ExitCode::from(EXIT_INPUT);
            }
            println!("{}: {}", result.scenario, result.status.label());
        }
        None => print!("{rendered}"),
    }
    ExitCode::from(result.exit_code() as u8)
}

fn validate(path: &Path) -> ExitCode {
    let loaded = match load(path) {
        Ok(l) => l,
        Err(code) => return code,
    };
    let s = &loaded.scenario;
    let mut problems: Vec<String> = context::validate_context(&s.context)
        .into_iter()
        .map(|v| format!("{}: {}", v.path, v.message))
        .collect();
    if let Err(ContextError::InvalidSpec(vs)) = context::identify_principals(&s.context, &s.principals) {
        problems.extend(vs.into_iter().map(|v| format!("{}: {}", v.path, v.message)));
    }
    problems.sort();
    problems.dedup();
    if problems.is_empty() {
        println!("{}: valid ({})", s.metadata.id, loaded.digest);
        ExitCode::SUCCESS
    } else {
        for p in &problems {
            eprintln!("violation: {p}");
        }
        ExitCode::from(2)
    }
}

fn catalog(label: &str) -> ExitCode {
    match context::catalog_lookup(label) {
        Ok(entries) => {
            for e in entries {
                let scope = e.sub_context.as_deref().map(|s| format!(" [{s}]")).unwrap_or_default();
                let check = match &e.check {
                    context::CheckBinding::Automated(op) => op.as_str(),
                    context::CheckBinding::Attestation => "attestation",
                };
                println!("{:<48} {:?}{scope}: {} ({check})", e.key, e.kind, e.duty);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Check {
            scenario,
            report,
            format,
            tol,
            seed,
        } => check(&scenario, report.as_deref(), format, tol, seed),
        Command::Validate { scenario } => validate(&scenario),
        Command::Catalog { label } => catalog(&label),
    }
}
