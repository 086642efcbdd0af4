use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mlt_cli::commands::{self, FilterTarget};
use mlt_cli::corpus::{bench_table, CorpusSpec};
use mlt_cli::CliError;
use mlt_core::EncodingProfile;

#[derive(Parser)]
#[command(name = "mlt", version, about = "Columnar vector tile encoder, decoder and benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Simple,
    Advanced,
}

impl From<Profile> for EncodingProfile {
    fn from(p: Profile) -> Self {
        match p {
            Profile::Simple => EncodingProfile::Simple,
            Profile::Advanced => EncodingProfile::Advanced,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus as z/x/y.mvt plus z/x/y.json fixtures.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        min_zoom: u8,
        #[arg(long, default_value_t = 14, value_parser = clap::value_parser!(u8).range(0..=30))]
        max_zoom: u8,
        /// 0 = uniform vertices, 1 = tight clusters.
        #[arg(long, default_value_t = 0.8)]
        clustering: f64,
        /// Multiplier on feature counts; 0 yields empty tables.
        #[arg(long, default_value_t = 1.0)]
        density: f64,
    },
    /// Encode a tile tree (JSON fixtures, MVT or MLT) to MLT.
    Encode {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Profile::Advanced)]
        profile: Profile,
        /// Store pre-computed polygon triangles.
        #[arg(long)]
        tessellate: bool,
    },
    /// Decode an MLT or MVT tree to JSON fixtures.
    Decode {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare encoded and DEFLATE-compressed sizes of two tile trees.
    Compare { baseline: PathBuf, candidate: PathBuf },
    /// Time decoding a tile tree into memory.
    BenchDecode {
        input: PathBuf,
        #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(5..))]
        reps: u64,
    },
    /// Time the vectorized filter engine against the tuple-at-a-time engine.
    BenchFilter {
        /// MLT tree. Omit it and pass --synthetic-rows to filter a generated table instead.
        input: Option<PathBuf>,
        /// Filter suite file; defaults to the bundled 35-filter suite.
        #[arg(long)]
        suite: Option<PathBuf>,
        #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(5..))]
        reps: u64,
        /// Run every filter on one generated table with this many rows.
        #[arg(long, conflicts_with = "input")]
        synthetic_rows: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::GenCorpus { out, seed, min_zoom, max_zoom, clustering, density } => {
            if min_zoom > max_zoom {
                return Err(CliError::Usage("--min-zoom exceeds --max-zoom".into()));
            }
            let spec = CorpusSpec { seed, min_zoom, max_zoom, clustering, density, ..CorpusSpec::default() };
            Ok(commands::render_gen(&commands::gen_corpus(&spec, &out)?))
        }
        Command::Encode { input, out, profile, tessellate } => {
            Ok(commands::encode(&input, &out, profile.into(), tessellate)?.render("encode"))
        }
        Command::Decode { input, out } => Ok(commands::decode(&input, &out)?.render("decode")),
        Command::Compare { baseline, candidate } => Ok(commands::compare(&baseline, &candidate)?.render()),
        Command::BenchDecode { input, reps } => Ok(commands::bench_decode(&input, reps as usize)?.render()),
        Command::BenchFilter { input, suite, reps, synthetic_rows, seed } => {
            let suite = commands::load_suite(suite.as_deref())?;
            let report = match (input, synthetic_rows) {
                (Some(dir), None) => {
                    let targets = commands::load_filter_targets(&dir)?;
                    commands::bench_filter_targets(&targets, &suite, reps as usize, false)?
                }
                (None, Some(rows)) => {
                    let table = bench_table(rows, seed);
                    let target = FilterTarget::from_table("synthetic".into(), &table, EncodingProfile::Advanced)?;
                    commands::bench_filter_targets(&[target], &suite, reps as usize, true)?
                }
                _ => return Err(CliError::Usage("give an MLT directory or --synthetic-rows".into())),
            };
            Ok(report.render())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().ok();
    match run(cli) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
