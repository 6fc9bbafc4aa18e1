use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use coupledgeom::harness::config::RawConfig;
use coupledgeom::harness::{exit_code, run, Command};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sub {
    Train,
    Eval,
    Check,
    Geometry,
    Sample,
    Robustness,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Train => Command::Train,
            Sub::Eval => Command::Eval,
            Sub::Check => Command::Check,
            Sub::Geometry => Command::Geometry,
            Sub::Sample => Command::Sample,
            Sub::Robustness => Command::Robustness,
        }
    }
}

/// Coupled-geometry experiments. Any config key can be overridden with
/// `--key value` (hyphens and underscores are interchangeable).
#[derive(Debug, Parser)]
#[command(name = "coupledgeom", version)]
struct Cli {
    #[arg(value_enum)]
    command: Sub,
    /// key=value config file; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing
    #[arg(long)]
    out: PathBuf,
}

const OWN_FLAGS: &[&str] = &["--config", "--out"];

/// Separates `--key value` overrides from the arguments clap understands.
fn split_args(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), String> {
    let mut own = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    if let Some(prog) = it.next() {
        own.push(prog);
    }
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--") else {
            own.push(a);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if OWN_FLAGS.contains(&format!("--{name}").as_str()) || matches!(name.as_str(), "help" | "version" | "") {
            own.push(a);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| format!("--{name} needs a value"))?,
        };
        overrides.push((name.replace('-', "_"), value));
    }
    Ok((own, overrides))
}

fn main() -> ExitCode {
    let (own, overrides) = match split_args(std::env::args().collect()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(own);
    let raw = match RawConfig::load(cli.config.as_deref(), &overrides) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e) as u8);
        }
    };
    match run(cli.command.into(), &raw, &cli.out) {
        Ok(summary) => {
            for f in &summary.files {
                println!("{}", f.display());
            }
            if summary.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("one or more hard assertions failed");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
