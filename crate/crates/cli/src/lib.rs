//! `satscope` command-line pipeline: ingest → train → evaluate → analyze,
//! plus synthetic validation and reporting.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Arg, ArgAction, ArgMatches, Command};
use satscope_core::Error;

use crate::config::{RunConfig, KEYS};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Pipeline(#[from] Error),
}

impl CliError {
    /// 0 success, 1 usage/config, 2 data, 3 numerical divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Pipeline(e) => e.exit_code(),
        }
    }
}

pub const SUBCOMMANDS: [(&str, &str); 7] = [
    (
        "ingest",
        "parse a dataset into a canonical log, catalog and stats report",
    ),
    ("train", "fit the configured model and write a checkpoint"),
    (
        "evaluate",
        "replay the test split and write the events table",
    ),
    (
        "analyze",
        "bin events into quantiles, profile users, detect saturation",
    ),
    ("synth", "generate a synthetic population with known knees"),
    (
        "validate",
        "run the detector on the synthetic population against its knees",
    ),
    (
        "report",
        "merge curves and summaries in the output directory",
    ),
];

fn key_args() -> Vec<Arg> {
    let mut args = vec![Arg::new("config")
        .long("config")
        .value_name("FILE")
        .help("key = value config file (manifests work too)")];
    for (key, default, help) in KEYS {
        let mut arg = Arg::new(*key)
            .long(*key)
            .value_name("VALUE")
            .help(format!("{help} [default: {default:?}]"));
        if key.contains('_') {
            let dashed: &'static str = Box::leak(key.replace('_', "-").into_boxed_str());
            arg = arg.alias(dashed);
        }
        args.push(arg);
    }
    args
}

pub fn command() -> Command {
    let mut cmd = Command::new("satscope")
        .version(commands::VERSION)
        .about("Exploration-saturation diagnostics for recommender logs")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("quiet")
                .long("quiet")
                .short('q')
                .global(true)
                .action(ArgAction::SetTrue)
                .help("print nothing on success"),
        );
    for (name, about) in SUBCOMMANDS {
        cmd = cmd.subcommand(Command::new(name).about(about).args(key_args()));
    }
    cmd
}

fn resolve(m: &ArgMatches) -> Result<RunConfig, CliError> {
    let file = m.get_one::<String>("config").map(PathBuf::from);
    let overrides: Vec<(String, String)> = KEYS
        .iter()
        .filter_map(|(k, _, _)| m.get_one::<String>(k).map(|v| ((*k).to_owned(), v.clone())))
        .collect();
    Ok(RunConfig::resolve(file.as_deref(), &overrides)?)
}

/// Runs one invocation and returns the lines to print.
pub fn run<I, T>(args: I) -> Result<(bool, Vec<String>), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = command()
        .try_get_matches_from(args)
        .map_err(|e| match e.kind() {
            clap::error::ErrorKind::DisplayHelp
            | clap::error::ErrorKind::DisplayVersion
            | clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Usage(e.render().to_string()),
        })?;
    let quiet = matches.get_flag("quiet");
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let cfg = resolve(sub)?;
    let lines = match name {
        "ingest" => commands::cmd_ingest(&cfg)?,
        "train" => commands::cmd_train(&cfg)?,
        "evaluate" => commands::cmd_evaluate(&cfg)?,
        "analyze" => commands::cmd_analyze(&cfg)?,
        "synth" => commands::cmd_synth(&cfg)?,
        "validate" => commands::cmd_validate(&cfg)?,
        "report" => commands::cmd_report(&cfg)?,
        other => return Err(CliError::Usage(format!("unknown command {other}"))),
    };
    Ok((quiet, lines))
}
