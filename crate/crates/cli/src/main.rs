use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use chrono::Utc;
use clap::{Args, Parser, Subcommand};

use apolo_cli::reports::{self, ExportFormat, Format};
use apolo_cli::serve;
use apolo_cli::{BindingKind, CliError, ConfigFile};
use apolo_core::metrics::export::to_json;
use apolo_core::store::TimeWindow;
use apolo_core::CommunityId;

#[derive(Parser)]
#[command(name = "apolobot", version, about = "Restorative apology mediation for chat communities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the API and the chosen platform binding.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, conflicts_with = "discord")]
        sim: bool,
        #[arg(long)]
        discord: bool,
        /// Keep the simulation endpoints open alongside Discord.
        #[arg(long)]
        allow_sim: bool,
    },
    /// Register /apolomute in every configured community.
    RegisterCommands {
        #[arg(long)]
        config: PathBuf,
    },
    /// Monte-Carlo run of simulated cases.
    Simulate {
        /// SimSetup as TOML, or JSON with a .json extension.
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List every terminal event path of the workflow.
    Enumerate {
        #[arg(long)]
        review_request: bool,
        #[arg(long)]
        max_attempts: Option<u32>,
        #[arg(long)]
        auto_unmute: bool,
        #[arg(long, default_value_t = 64)]
        max_depth: usize,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Inspect one case.
    Case {
        #[command(subcommand)]
        what: CaseCommand,
    },
    /// Funnel and recidivism report.
    Export {
        /// `all`, a trailing span like `30d`, or `<rfc3339>..<rfc3339>`.
        #[arg(long, default_value = "all")]
        window: String,
        #[arg(long, value_enum)]
        format: ExportFormat,
        #[arg(long)]
        community: Option<String>,
        /// Write files into this directory instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        source: DataSource,
    },
}

#[derive(Subcommand)]
enum CaseCommand {
    Show {
        id: String,
        #[command(flatten)]
        source: DataSource,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    Events {
        id: String,
        #[command(flatten)]
        source: DataSource,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct DataSource {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

impl DataSource {
    fn dir(&self) -> Result<PathBuf, CliError> {
        match (&self.data_dir, &self.config) {
            (Some(d), _) => Ok(d.clone()),
            (None, Some(c)) => Ok(ConfigFile::load(c)?.data_dir),
            (None, None) => Err(CliError::Config("pass --config or --data-dir".into())),
        }
    }
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { config, sim, discord, allow_sim } => {
            let config = ConfigFile::load(&config)?;
            let binding = match (sim, discord) {
                (true, _) => BindingKind::Sim,
                (_, true) => BindingKind::Discord,
                _ => config.binding,
            };
            // blocking HTTP happens here, before the async runtime exists
            let prepared = serve::prepare(&config, binding, allow_sim, None)?;
            tokio::runtime::Runtime::new()?.block_on(serve::serve(prepared, &config))
        }
        Command::RegisterCommands { config } => {
            let config = ConfigFile::load(&config)?;
            for community in serve::register_commands(&config, None)? {
                println!("registered {community}");
            }
            Ok(())
        }
        Command::Simulate { profiles, trials, seed, out } => {
            let setup = reports::load_setup(&profiles)?;
            let report = reports::run_simulation(&setup, trials, seed)?;
            emit(&to_json(&report), out.as_ref())
        }
        Command::Enumerate { review_request, max_attempts, auto_unmute, max_depth, format } => {
            let e = reports::enumerate(reports::policy(max_attempts, auto_unmute), review_request, max_depth)?;
            emit(&reports::render_enumeration(&e, format), None)
        }
        Command::Case { what } => {
            let text = match what {
                CaseCommand::Show { id, source, format } => {
                    reports::case_show(&reports::open_store(&source.dir()?)?, &id, format)?
                }
                CaseCommand::Events { id, source, format } => {
                    reports::case_events(&reports::open_store(&source.dir()?)?, &id, format)?
                }
            };
            emit(&text, None)
        }
        Command::Export { window, format, community, out, source } => {
            let window = TimeWindow::parse(&window, Utc::now()).map_err(CliError::config)?;
            let store = reports::open_store(&source.dir()?)?;
            let (report, cases) = reports::build_export(&store, window, community.map(CommunityId::new));
            match out {
                Some(dir) => {
                    for path in reports::write_export(&dir, &report, &cases, format)? {
                        println!("{}", path.display());
                    }
                    Ok(())
                }
                None => emit(&reports::render_export(&report, format)?, None),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if matches!(cli.command, Command::Run { .. }) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| level.into()))
        .with_writer(std::io::stderr)
        .init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("apolobot: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
