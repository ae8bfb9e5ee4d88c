use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thzmap::{
    cmd_db_import, cmd_db_query, cmd_estimate, cmd_identify, cmd_map, cmd_pipeline, cmd_simulate, exit_code,
    load_config, Method, Overrides,
};
use thzmap_core::materials::MaterialDb;
use thzmap_core::Result;

#[derive(Parser)]
#[command(name = "thzmap", version, about = "Monostatic THz sensing: simulate, estimate, map, identify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// max_search, sage or sage_plus_removal.
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    /// Output directory (overrides the config).
    #[arg(long)]
    output: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            method: self.method,
            output: self.output.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise the channel response of the configured scene.
    Simulate(RunArgs),
    /// Estimate multipath components from a stored response.
    Estimate {
        #[command(flatten)]
        run: RunArgs,
        /// Response file (default: <output>/response.bin).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Build maps from stored estimates and score them.
    Map(RunArgs),
    /// Identify the materials of tagged surfaces from stored estimates.
    Identify(RunArgs),
    /// Run every stage and write the full set of artifacts.
    Pipeline(RunArgs),
    /// Material database maintenance and queries.
    Db {
        #[command(subcommand)]
        action: DbCommand,
    },
}

#[derive(Subcommand)]
enum DbCommand {
    /// Merge a CSV (`name,category,frequency_hz,rl_db`) into a database file.
    Import {
        csv: PathBuf,
        /// Database to update; created from the seed table if missing.
        #[arg(long, default_value = "materials.csv")]
        db: PathBuf,
    },
    /// Rank materials by reflection-loss distance.
    Query {
        #[arg(long, allow_negative_numbers = true)]
        rl: f64,
        #[arg(long, default_value_t = 300e9)]
        f: f64,
        #[arg(long)]
        db: Option<PathBuf>,
    },
    /// Print the database as CSV.
    List {
        #[arg(long)]
        db: Option<PathBuf>,
    },
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: thzmap_core::Error| e.to_string())
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => {
            let cfg = load_config(&a.config, &a.overrides())?;
            let out = cmd_simulate(&cfg)?;
            println!("wrote {} ({} x {})", out.response.display(), out.n_freq, out.n_scan);
            for (kind, n) in &out.paths {
                println!("{kind}: {n}");
            }
        }
        Command::Estimate { run, input } => {
            let cfg = load_config(&run.config, &run.overrides())?;
            let out = cmd_estimate(&cfg, input.as_deref())?;
            println!("noise floor {:.1} dB per sample", out.noise_floor_db);
            for (m, n) in &out.n_estimates {
                println!("{m}: {n} estimates");
            }
        }
        Command::Map(a) => {
            let cfg = load_config(&a.config, &a.overrides())?;
            println!("{}", to_json(&cmd_map(&cfg)?)?);
        }
        Command::Identify(a) => {
            let cfg = load_config(&a.config, &a.overrides())?;
            let (reports, warnings) = cmd_identify(&cfg)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", to_json(&reports)?);
        }
        Command::Pipeline(a) => {
            let cfg = load_config(&a.config, &a.overrides())?;
            let report = cmd_pipeline(&cfg)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for (m, r) in &report.ranging {
                println!(
                    "{m:<18} MDE {:6.2} cm  RMSE {:6.2} cm  points {:4}  removed {:3}",
                    r.mde_cm, r.rmse_cm, r.n_points, r.n_removed
                );
            }
            for id in &report.identifications {
                if let Some(best) = id.report.ranked.first() {
                    println!(
                        "{}: RL {:.2} dB -> {} (|Δ| {:.2} dB)",
                        id.tag, id.report.query_rl_db, best.name, best.delta_db
                    );
                }
            }
            println!("report: {}", cfg.output_dir.join(thzmap::pipeline::REPORT_FILE).display());
        }
        Command::Db { action } => match action {
            DbCommand::Import { csv, db } => {
                let n = cmd_db_import(&csv, &db)?;
                println!("{}: {n} materials", db.display());
            }
            DbCommand::Query { rl, f, db } => {
                println!("{}", to_json(&cmd_db_query(rl, f, db.as_deref())?)?);
            }
            DbCommand::List { db } => {
                let db = match db {
                    Some(p) => MaterialDb::load(p)?,
                    None => MaterialDb::seed(),
                };
                db.write_csv(std::io::stdout().lock())
                    .map_err(|e| thzmap_core::Error::Validation(format!("csv write: {e}")))?;
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
