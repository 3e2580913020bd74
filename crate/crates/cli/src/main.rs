//! `maskbeam`: simulate scenes, pretrain, beamform, adapt, evaluate,
//! verify gradients, and inspect matrix dumps.
//!
//! Exit codes: 0 success, 2 config/argument parse failure, 3 validation
//! failure, 4 numerical failure, 5 gradcheck tolerance breach.

use std::path::PathBuf;
use std::process::ExitCode;

mod commands;
mod config;

#[derive(Debug)]
pub enum CliError {
    Parse(String),
    Validation(String),
    Numerical(String),
    GradcheckBreach,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Parse(m) => write!(f, "parse error: {m}"),
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical error: {m}"),
            CliError::GradcheckBreach => write!(f, "gradcheck tolerance breach"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::GradcheckBreach => 5,
        }
    }
}

impl From<maskbeam::Error> for CliError {
    fn from(e: maskbeam::Error) -> Self {
        use maskbeam::Error::*;
        match e {
            SingularCovariance(_) | DegenerateMask { .. } | Degenerate(_) => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

const USAGE: &str = "usage: maskbeam <subcommand> [flags] [args]

subcommands:
  simulate                  render synthetic scenes (WAV + oracle dumps + manifest)
  pretrain                  train the mask estimator and acoustic model, write checkpoints
  beamform IN.wav OUT.wav   enhance a multichannel WAV (--dump-dir DIR for mask/weight dumps)
  adapt                     two-pass speaker adaptation of the mask estimator
  eval                      metrics of the current checkpoints on fresh scenes
  gradcheck                 finite-difference verification of every differentiable stage
  dump FILE.mat             print a binary matrix dump (--rows N to widen the preview)

flags:
  --config PATH             key = value config file ([section] headers)
  --set section.key=value   override one config entry (repeatable)
  --out DIR                 override paths.out_dir
  --seed N                  override seeds.master
  --dump-dir DIR            (beamform) write mask/weight dumps here
  --rows N                  (dump) preview row count, default 16
";

struct Cli {
    subcommand: String,
    config_path: Option<PathBuf>,
    overrides: Vec<String>,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
    dump_dir: Option<PathBuf>,
    rows: usize,
    positional: Vec<String>,
}

fn parse_args(mut args: Vec<String>) -> Result<Cli, CliError> {
    if args.is_empty() {
        return Err(CliError::Parse(format!("missing subcommand\n{USAGE}")));
    }
    let subcommand = args.remove(0);
    let mut cli = Cli {
        subcommand,
        config_path: None,
        overrides: Vec::new(),
        out_dir: None,
        seed: None,
        dump_dir: None,
        rows: 16,
        positional: Vec::new(),
    };
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let mut take = |name: &str| -> Result<String, CliError> {
            it.next()
                .ok_or_else(|| CliError::Parse(format!("{name} needs a value")))
        };
        match arg.as_str() {
            "--config" => cli.config_path = Some(PathBuf::from(take("--config")?)),
            "--set" => cli.overrides.push(take("--set")?),
            "--out" => cli.out_dir = Some(PathBuf::from(take("--out")?)),
            "--seed" => {
                let v = take("--seed")?;
                cli.seed = Some(
                    v.parse()
                        .map_err(|e| CliError::Parse(format!("--seed: {e}")))?,
                );
            }
            "--dump-dir" => cli.dump_dir = Some(PathBuf::from(take("--dump-dir")?)),
            "--rows" => {
                let v = take("--rows")?;
                cli.rows = v
                    .parse()
                    .map_err(|e| CliError::Parse(format!("--rows: {e}")))?;
            }
            "--help" | "-h" => {
                println!("{USAGE}");
                std::process::exit(0);
            }
            other if other.starts_with("--") => {
                return Err(CliError::Parse(format!("unknown flag {other}")));
            }
            other => cli.positional.push(other.to_string()),
        }
    }
    Ok(cli)
}

fn run() -> Result<(), CliError> {
    let cli = parse_args(std::env::args().skip(1).collect())?;
    let mut run_cfg = config::load(cli.config_path.as_deref(), &cli.overrides)?;
    if let Some(dir) = &cli.out_dir {
        run_cfg.out_dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        run_cfg.master_seed = seed;
    }

    match cli.subcommand.as_str() {
        "simulate" => commands::simulate(&run_cfg),
        "pretrain" => commands::pretrain(&run_cfg),
        "beamform" => {
            let input = commands::arg_path(&cli.positional, 0, "input WAV")?;
            let output = commands::arg_path(&cli.positional, 1, "output WAV")?;
            commands::beamform_wav(&run_cfg, &input, &output, cli.dump_dir.as_deref())
        }
        "adapt" => commands::adapt_cmd(&run_cfg),
        "eval" => commands::eval_cmd(&run_cfg),
        "gradcheck" => commands::gradcheck(&run_cfg),
        "dump" => {
            let file = commands::arg_path(&cli.positional, 0, "matrix file")?;
            commands::dump(&file, cli.rows)
        }
        other => Err(CliError::Parse(format!(
            "unknown subcommand {other:?}\n{USAGE}"
        ))),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
