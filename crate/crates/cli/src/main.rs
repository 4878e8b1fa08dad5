use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reptile_cli::error::{EXIT_CHECK_FAILED, EXIT_OK};
use reptile_cli::{
    cmd_compare, cmd_cv, cmd_gradcheck, cmd_sweep, cmd_train, parse_methods, CliError, CliResult,
    ExperimentConfig, GradcheckOptions, GradcheckPath, Method,
};

#[derive(Parser)]
#[command(
    name = "reptile",
    version,
    about = "Reptile vs. baseline experiments on a synthetic speaker-variation benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); library defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for curves, parameters and reports.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// First run seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model and evaluate it on held-out speakers.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training method, overriding the config.
        #[arg(long)]
        methods: Option<String>,
    },
    /// Compare methods over the same seeds with a paired t-test.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Number of seeds, overriding the config.
        #[arg(long)]
        runs: Option<usize>,
        /// Comma-separated, e.g. `base,reptile`; later methods are tested against the first.
        #[arg(long, default_value = "base,reptile")]
        methods: String,
    },
    /// Compare methods while removing training speakers.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Number of seeds, overriding the config.
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, default_value = "base,reptile")]
        methods: String,
        /// Comma-separated descending fractions, overriding the config.
        #[arg(long)]
        fractions: Option<String>,
    },
    /// Speaker-grouped cross-validation.
    Cv {
        #[command(flatten)]
        common: Common,
        /// Methods to cross-validate, default the config's method.
        #[arg(long)]
        methods: Option<String>,
        /// Number of speaker folds, overriding the config.
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Finite-difference check of the model gradient.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Number of consecutive seeds to check.
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// Check the decoder alone on fixed embeddings.
        #[arg(long)]
        decoder_only: bool,
        #[arg(long, hide = true)]
        corrupt_adjoint: bool,
    },
}

fn load(common: &Common) -> CliResult<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn parse_fractions(list: &str) -> CliResult<Vec<f64>> {
    list.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("bad fraction `{s}`")))
        })
        .collect()
}

fn single_method(list: Option<&str>, fallback: Method) -> CliResult<Method> {
    match list {
        None => Ok(fallback),
        Some(list) => match parse_methods(list)?.as_slice() {
            [m] => Ok(*m),
            _ => Err(CliError::Config("train takes exactly one method".into())),
        },
    }
}

fn out_dir(common: &Common) -> &Path {
    &common.out
}

fn run(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::Train { common, methods } => {
            let mut config = load(&common)?;
            config.method = single_method(methods.as_deref(), config.method)?;
            let summary = cmd_train(&config, Some(out_dir(&common)))?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Compare {
            common,
            runs,
            methods,
        } => {
            let config = load(&common)?;
            let methods = parse_methods(&methods)?;
            let report = cmd_compare(
                &config,
                &methods,
                runs.unwrap_or(config.runs),
                Some(out_dir(&common)),
            )?;
            print!("{}", report.to_text());
        }
        Command::Sweep {
            common,
            runs,
            methods,
            fractions,
        } => {
            let config = load(&common)?;
            let methods = parse_methods(&methods)?;
            let fractions = match fractions {
                Some(list) => parse_fractions(&list)?,
                None => config.sweep.fractions.clone(),
            };
            let report = cmd_sweep(
                &config,
                &fractions,
                &methods,
                runs.unwrap_or(config.runs),
                Some(out_dir(&common)),
            )?;
            print!("{}", report.to_csv());
        }
        Command::Cv {
            common,
            methods,
            folds,
        } => {
            let config = load(&common)?;
            let methods = match methods {
                Some(list) => parse_methods(&list)?,
                None => vec![config.method],
            };
            for method in methods {
                let dir = out_dir(&common).join(method.name());
                let report = cmd_cv(
                    &config,
                    method,
                    folds.unwrap_or(config.cv.folds),
                    Some(&dir),
                )?;
                println!("# {method}");
                print!("{}", report.to_text());
            }
        }
        Command::Gradcheck {
            common,
            runs,
            decoder_only,
            corrupt_adjoint,
        } => {
            let config = load(&common)?;
            let options = GradcheckOptions {
                path: if decoder_only {
                    GradcheckPath::DecoderOnly
                } else {
                    GradcheckPath::Full
                },
                corrupt_adjoint,
            };
            let report = cmd_gradcheck(
                &config,
                &config.seeds(runs),
                &options,
                Some(out_dir(&common)),
            )?;
            print!("{}", report.to_text());
            if !report.passed {
                return Ok(EXIT_CHECK_FAILED);
            }
        }
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
