use std::path::PathBuf;

use clap::{Parser, Subcommand};

use tokendance_cli::commands::{self, Paths};
use tokendance_cli::config::Experiment;
use tokendance_cli::exit_code_for;

#[derive(Parser)]
#[command(
    name = "tokendance",
    version,
    about = "Two-stage music-to-dance pipeline: tokenize motion and audio, \
             then generate beat-aligned dance token streams"
)]
struct Cli {
    /// Experiment config (TOML); built-in defaults when omitted
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override run.seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override run.out_dir
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Skip a stage when its recorded inputs match and outputs exist
    #[arg(long, global = true)]
    skip_existing: bool,

    /// Print the fully resolved config as TOML and exit
    #[arg(long, global = true)]
    print_effective_config: bool,

    #[command(subcommand)]
    cmd: Option<Cmd>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Synthesize the beat-locked audio+motion corpus
    Synth,
    /// Train the dance and music tokenizers on the corpus
    TrainStage1,
    /// Tokenize the corpus and train the token generator
    TrainStage2,
    /// Generate dance for each corpus clip from its audio
    Generate,
    /// Score generated (or reference) motion against the corpus
    Eval,
    /// Measure inference latency across conditioning lengths
    Bench,
    /// Compare stream decomposition and backbone variants
    Ablate,
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = Cli::parse();

    let mut exp = match &cli.config {
        Some(p) => match Experiment::load(p) {
            Ok(e) => e,
            Err(e) => {
                eprintln!("{e}");
                return 2;
            }
        },
        None => Experiment::default(),
    };
    if let Some(s) = cli.seed {
        exp.run.seed = s;
    }
    if let Some(o) = &cli.out {
        exp.run.out_dir = o.display().to_string();
    }
    if let Err(e) = exp.validate() {
        eprintln!("{e}");
        return 2;
    }
    if cli.print_effective_config {
        print!("{}", exp.to_toml());
        return 0;
    }
    let Some(cmd) = cli.cmd else {
        eprintln!("error: no subcommand given; see --help");
        return 2;
    };

    let threads = match std::env::var("TOKENDANCE_THREADS") {
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n >= 1 => Some(n),
            _ => {
                eprintln!("config error: TOKENDANCE_THREADS must be a positive integer, got {v:?}");
                return 2;
            }
        },
        Err(_) => None,
    };

    let skip = cli.skip_existing;
    let go = || {
        let paths = Paths::new(&exp.out_dir());
        match cmd {
            Cmd::Synth => commands::cmd_synth(&exp, &paths, skip),
            Cmd::TrainStage1 => commands::cmd_train_stage1(&exp, &paths, skip),
            Cmd::TrainStage2 => commands::cmd_train_stage2(&exp, &paths, skip),
            Cmd::Generate => commands::cmd_generate(&exp, &paths, skip),
            Cmd::Eval => commands::cmd_eval(&exp, &paths, skip),
            Cmd::Bench => commands::cmd_bench(&exp, &paths),
            Cmd::Ablate => commands::cmd_ablate(&exp, &paths, skip),
        }
    };
    let result = match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(go),
            Err(e) => {
                eprintln!("error: building thread pool: {e}");
                return 1;
            }
        },
        None => go(),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
