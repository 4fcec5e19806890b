//! `embshift` command-line tool.
//!
//! Exit codes: 0 ok/consistent, 1 I/O or data error, 2 usage or schema
//! error, 3 variance shift detected, 4 property-check failure.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use embshift::Error;

use commands::CmdOutcome;

#[derive(Parser)]
#[command(
    name = "embshift",
    version,
    about = "Detect, quantify and correct variance shift in ViT positional embeddings"
)]
struct Cli {
    /// Emit the report as machine-readable JSON instead of text
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measure the variance ratio k and mean ratio K for an upsampling method
    MeasureK {
        /// nearest | bilinear | bicubic
        #[arg(long)]
        method: String,
        /// 1d | 2d
        #[arg(long)]
        dims: String,
        /// Upsampling factor, must be > 1
        #[arg(long, default_value_t = embshift::varcal::CANONICAL_SCALE)]
        scale: f64,
        /// Per-axis input size (default: 4096 for 1d, 64 for 2d)
        #[arg(long)]
        size: Option<usize>,
        #[arg(long, default_value_t = embshift::varcal::CANONICAL_TRIALS)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Upsample a positional-embedding file and rescale it by 1/sqrt(k)
    RescalePe {
        /// Input VSPE file: [N,D] token matrix (with --grid) or [H,W,D]
        #[arg(long, short = 'i')]
        input: PathBuf,
        #[arg(long, short = 'o')]
        output: PathBuf,
        /// Target spatial grid, e.g. 27x27
        #[arg(long)]
        target: String,
        #[arg(long, default_value = "bicubic")]
        method: String,
        /// Source grid for [N,D] inputs, e.g. 14x14
        #[arg(long)]
        grid: Option<String>,
        /// Leading non-spatial token rows (0 or 1)
        #[arg(long, default_value_t = 0)]
        cls_tokens: usize,
        /// `auto` (measured for this grid geometry), `canonical` (canonical
        /// protocol), or an explicit number
        #[arg(long, default_value = "auto")]
        k: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Audit a train/test pipeline config for variance shift
    Audit {
        #[arg(long, short = 'c')]
        config: PathBuf,
        /// Cross-check the analytic model by running the ops on synthetic data
        #[arg(long)]
        empirical: bool,
        /// Monte-Carlo trials for --empirical
        #[arg(long, default_value_t = 400)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Apply one augmentation op to a tensor file
    Augment {
        #[arg(long, short = 'i')]
        input: PathBuf,
        /// Second input for mixup/cutmix (defaults to --input)
        #[arg(long)]
        input_b: Option<PathBuf>,
        /// Op spec as JSON, e.g. '{"op":"mixup","lambda":0.8}'
        #[arg(long)]
        op: String,
        #[arg(long, short = 'o')]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the ViT front-end property checks (gradients, dropout, patches)
    Simulate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Input-scale factors for the gradient-decay check
        #[arg(long, value_delimiter = ',', default_values_t = [2.0, 5.0, 10.0])]
        scale_factors: Vec<f64>,
        /// Monte-Carlo trials for the dropout comparison
        #[arg(long, default_value_t = 300)]
        trials: usize,
    },
    /// Write a synthetic tensor file
    Gen {
        /// Shape, e.g. 4096 or 64x64x3
        shape: String,
        /// normal | uniform | constant
        dist: String,
        /// Distribution parameters: normal <mean> <std>, uniform <low> <high>,
        /// constant <value>
        params: Vec<f64>,
        #[arg(long, short = 'o')]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    let outcome = run(&cli.command);
    match outcome {
        Ok(CmdOutcome { report, exit_code }) => {
            if cli.json {
                println!("{}", report.to_json());
            } else {
                print!("{report}");
            }
            ExitCode::from(exit_code as u8)
        }
        Err(err) => {
            eprintln!("error: {err}");
            if let Error::UnknownMultiplier { .. } = err {
                eprintln!("hint: re-run `audit` with --empirical to use measured fallbacks");
            }
            ExitCode::from(error_code(&err))
        }
    }
}

fn run(command: &Command) -> embshift::Result<CmdOutcome> {
    match command {
        Command::MeasureK {
            method,
            dims,
            scale,
            size,
            trials,
            seed,
        } => commands::cmd_measure_k(method, dims, *scale, *size, *trials, *seed),
        Command::RescalePe {
            input,
            output,
            target,
            method,
            grid,
            cls_tokens,
            k,
            seed,
        } => commands::cmd_rescale_pe(
            input,
            output,
            target,
            method,
            grid.as_deref(),
            *cls_tokens,
            k,
            *seed,
        ),
        Command::Audit {
            config,
            empirical,
            trials,
            seed,
        } => commands::cmd_audit(config, *empirical, *trials, *seed),
        Command::Augment {
            input,
            input_b,
            op,
            output,
            seed,
        } => commands::cmd_augment(input, input_b.as_deref(), op, output, *seed),
        Command::Simulate {
            seed,
            scale_factors,
            trials,
        } => commands::cmd_simulate(*seed, scale_factors, *trials),
        Command::Gen {
            shape,
            dist,
            params,
            out,
            seed,
        } => commands::cmd_gen(shape, dist, params, out, *seed),
    }
}

/// `EMBSHIFT_THREADS` caps internal parallelism; results never depend on it.
fn configure_threads() {
    if let Ok(value) = std::env::var("EMBSHIFT_THREADS") {
        if let Ok(n) = value.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn error_code(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) | Error::Config(_) | Error::Downsample { .. } => 2,
        _ => 1,
    }
}
