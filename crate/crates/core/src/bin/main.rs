use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scaled_lora::harness::{
    compare, run, summarize, to_csv, width_gamma, write_outputs, ExperimentConfig, HarnessError, Kind, RunRecord,
};

#[derive(Parser)]
#[command(
    name = "scaled-lora",
    version,
    about = "Seeded low-rank optimization experiments with CSV output"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML experiment config; omitted keys take the defaults of the subcommand.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed, overriding the config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// CSV destination; a `.meta.toml` sidecar is written next to it. Without
    /// it the CSV goes to stdout.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Suppress the summary on stderr.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Factor a synthetic low-rank matrix.
    Decomp,
    /// Multi-term masked sensing from spectral initialization.
    Multiterm,
    /// Decomposition over a list of condition numbers.
    CondSweep,
    /// Per-step output increments of a LoRA-style adapter across widths.
    WidthSweep,
    /// Scalar toy model across widths.
    Toy,
    /// Count activation masks of random data.
    Arrangements,
    /// Run the config's methods (at least two) side by side from one initialization.
    Compare,
}

impl Command {
    fn kind(self) -> Option<Kind> {
        Some(match self {
            Command::Decomp => Kind::Decomp,
            Command::Multiterm => Kind::Multiterm,
            Command::CondSweep => Kind::CondSweep,
            Command::WidthSweep => Kind::WidthSweep,
            Command::Toy => Kind::Toy,
            Command::Arrangements => Kind::Arrangements,
            Command::Compare => return None,
        })
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?,
        None => String::new(),
    };
    let mut cfg = match cli.command.kind() {
        Some(kind) => ExperimentConfig::from_toml_str(&text, Some(kind))?,
        None => {
            let mut table: toml::Table = toml::from_str(&text).map_err(|e| HarnessError::Config {
                field: "config".into(),
                message: e.to_string(),
            })?;
            table
                .entry("methods")
                .or_insert_with(|| toml::Value::Array(vec!["plain_gd".into(), "scaled_gd".into()]));
            let hint = if table.contains_key("kind") {
                None
            } else {
                Some(Kind::Decomp)
            };
            ExperimentConfig::from_toml_str(&table.to_string(), hint)?
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn report(cfg: &ExperimentConfig, records: &[RunRecord]) {
    let mut err = std::io::stderr().lock();
    match cfg.kind {
        // The adapter starts at L = 0, so the first step leaves R unchanged;
        // the last recorded step is the informative one.
        Kind::WidthSweep => match width_gamma(records, cfg.iters) {
            Ok(fits) => {
                for (method, eta, fit) in fits {
                    let _ = writeln!(
                        err,
                        "{method} eta={eta:?}: exponent of the step-{} increment {:.3}",
                        cfg.iters, fit.exponents[0]
                    );
                }
            }
            Err(e) => {
                let _ = writeln!(err, "no exponent fit: {e}");
            }
        },
        Kind::Arrangements => {
            for r in records {
                let _ = writeln!(
                    err,
                    "instance {} {}: {} masks",
                    r.run_id,
                    r.method,
                    r.loss.unwrap_or(0.0)
                );
            }
        }
        _ => {
            for s in summarize(records, cfg.tol) {
                let hit = s
                    .iters_to_tol
                    .map_or_else(|| "not reached".to_string(), |t| t.to_string());
                let kappa = s.kappa.map(|k| format!(" kappa={k:?}")).unwrap_or_default();
                let eta = s.eta.map(|e| format!(" eta={e:?}")).unwrap_or_default();
                let last = s.final_value.map_or_else(|| "-".to_string(), |v| format!("{v:?}"));
                let _ = writeln!(
                    err,
                    "run {} {} n={}{kappa}{eta}: tol {} at {hit}, final {last}",
                    s.run_id, s.method, s.n, cfg.tol
                );
            }
        }
    }
}

fn execute(cli: &Cli) -> Result<(), HarnessError> {
    let cfg = load(cli)?;
    let records = match cli.command {
        Command::Compare => {
            let methods: Vec<_> = cfg.methods.iter().map(|m| m.0.clone()).collect();
            compare(&methods, &cfg)?
        }
        _ => run(&cfg)?,
    };
    match &cfg.out {
        Some(path) => write_outputs(&cfg, &records, path)?,
        None => std::io::stdout()
            .lock()
            .write_all(to_csv(&records).as_bytes())
            .map_err(|source| HarnessError::Io {
                path: PathBuf::from("<stdout>"),
                source,
            })?,
    }
    if !cli.quiet {
        report(&cfg, &records);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
