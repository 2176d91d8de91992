mod cli;
mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use bnsp_core::{Error, Result};
use clap::error::ErrorKind;
use clap::Parser;
use serde_json::json;

use cli::{Cli, Command, ReplayArgs};
use commands::RunRecord;
use manifest::{digest_file, digests, manifest_path, RunManifest};

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) => 2,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        Error::Numeric(_) | Error::ProjectiveDegeneracy => 4,
        _ => 3,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Parse { .. } => "parse",
        Error::Validation(_) => "validation",
        Error::Shape(_) => "shape",
        Error::Numeric(_) => "numeric",
        Error::Lookup(_) => "lookup",
        Error::Contract(_) => "contract",
        Error::Usage(_) => "usage",
        Error::Incompatible { .. } => "incompatible",
        Error::ProjectiveDegeneracy => "projective_degeneracy",
        Error::Io { .. } => "io",
        Error::Json(_) => "parse",
    }
}

fn report(command: &str, kind: &str, message: &str, code: u8) -> ExitCode {
    let record = json!({
        "error": kind,
        "command": command,
        "message": message,
        "exit_code": code,
    });
    eprintln!("{record}");
    ExitCode::from(code)
}

fn dispatch(command: &Command) -> Result<RunRecord> {
    match command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate_cmd(a),
        Command::Simulate(a) => commands::simulate_cmd(a),
        Command::Explain(a) => commands::explain_cmd(a),
        Command::Replay(_) => Err(Error::Usage("replay cannot be nested".into())),
    }
}

fn cwd() -> Result<PathBuf> {
    std::env::current_dir().map_err(|e| Error::Io {
        path: PathBuf::from("."),
        source: e,
    })
}

/// Runs a parsed command and writes its manifest next to the first output.
fn run(cli: &Cli, args: Vec<String>) -> Result<RunManifest> {
    let start = Instant::now();
    let record = dispatch(&cli.command)?;
    let primary = record
        .outputs
        .first()
        .ok_or_else(|| Error::Contract("command produced no output".into()))?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: cli.command.name().to_string(),
        args,
        cwd: cwd()?.display().to_string(),
        seed: record.seed,
        config: record.config.clone(),
        inputs: digests(&record.inputs)?,
        outputs: digests(&record.outputs)?,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    manifest.save(&manifest_path(primary))?;
    log::info!(
        "{} finished in {:.2}s",
        manifest.command,
        manifest.wall_clock_secs
    );
    Ok(manifest)
}

fn replay(a: &ReplayArgs) -> Result<()> {
    let path = std::fs::canonicalize(&a.manifest).map_err(|e| Error::Io {
        path: a.manifest.clone(),
        source: e,
    })?;
    let recorded = RunManifest::load(&path)?;
    std::env::set_current_dir(&recorded.cwd).map_err(|e| Error::Io {
        path: PathBuf::from(&recorded.cwd),
        source: e,
    })?;
    for (input, digest) in &recorded.inputs {
        let now = digest_file(std::path::Path::new(input))?;
        if &now != digest {
            return Err(Error::Validation(format!(
                "input {input} changed since the recorded run"
            )));
        }
    }
    let argv = std::iter::once("bnsp".to_string()).chain(recorded.args.iter().cloned());
    let cli = Cli::try_parse_from(argv)
        .map_err(|e| Error::Usage(format!("recorded arguments no longer parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(Error::Usage("replay cannot be nested".into()));
    }
    // The re-run overwrites the manifest; keep the recorded one intact.
    let fresh = run(&cli, recorded.args.clone());
    recorded.save(&path)?;
    let fresh = fresh?;
    let mut mismatched = Vec::new();
    for (output, digest) in &recorded.outputs {
        if fresh.outputs.get(output) != Some(digest) {
            mismatched.push(output.clone());
        }
    }
    let summary = json!({
        "manifest": path.display().to_string(),
        "command": recorded.command,
        "outputs": recorded.outputs.len(),
        "mismatched": mismatched,
        "reproduced": mismatched.is_empty(),
    });
    println!("{summary}");
    if mismatched.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "outputs differ from the recorded run: {}",
            mismatched.join(", ")
        )))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                let _ = e.print();
                return ExitCode::from(2);
            }
            _ => {
                let command = args.first().map(String::as_str).unwrap_or("");
                return report(command, "usage", e.to_string().trim(), 2);
            }
        },
    };
    let name = cli.command.name();
    if let Some(n) = cli.threads {
        if n == 0 {
            return report(name, "usage", "--threads must be at least 1", 2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return report(name, "usage", &e.to_string(), 2);
        }
    }
    let result = match &cli.command {
        Command::Replay(a) => replay(a),
        _ => run(&cli, args).map(|_| ()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(name, kind(&e), &e.to_string(), exit_code(&e)),
    }
}
