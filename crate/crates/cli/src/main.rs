use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairsample::clustering::ClusterMode;
use fairsample::pipeline::{self, InputSource, RecordFormat, RunConfig};
use fairsample::{Error, Strategy};

#[derive(Parser)]
#[command(
    name = "fairsample",
    version,
    about = "Audit and mitigate FNR bias of at-risk student detectors"
)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect imbalanced attributes and evaluate the baseline detector.
    Audit(RunArgs),
    /// Cluster students by behavior.
    Cluster(RunArgs),
    /// Evaluate every oversampling configuration and select one.
    Mitigate(RunArgs),
    /// Render the text report of a finished run directory.
    Report {
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic cohort.
    Generate {
        #[arg(long)]
        preset: String,
        /// Number of students (preset default otherwise).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Write records as wide CSV instead of JSONL.
        #[arg(long)]
        csv: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (JSON); the flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Synthetic preset used as input.
    #[arg(long, conflicts_with_all = ["records", "schema"])]
    preset: Option<String>,
    /// Cohort size for --preset.
    #[arg(long, requires = "preset")]
    n: Option<usize>,
    /// Student records (JSONL, or CSV with --csv).
    #[arg(long, requires = "schema")]
    records: Option<PathBuf>,
    /// Attribute schema (JSON).
    #[arg(long, requires = "records")]
    schema: Option<PathBuf>,
    #[arg(long, requires = "records")]
    csv: bool,
    /// Imbalance threshold in (0, 1).
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    folds: Option<usize>,
    /// Comma-separated strategies (equal, majority, cascade, minor, within).
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
    strategies: Option<Vec<Strategy>>,
    /// Number of clusters, `auto`, or `off`.
    #[arg(long, value_parser = parse_cluster_k)]
    cluster_k: Option<ClusterMode>,
    /// Comma-separated attributes whose FNR gaps are reported.
    #[arg(long, value_delimiter = ',')]
    audited: Option<Vec<String>>,
    /// Comma-separated attributes to search combinations on.
    #[arg(long, value_delimiter = ',')]
    biased: Option<Vec<String>>,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.trim().parse::<Strategy>().map_err(|e| e.to_string())
}

fn parse_cluster_k(s: &str) -> Result<ClusterMode, String> {
    match s {
        "auto" => Ok(ClusterMode::default()),
        "off" => Ok(ClusterMode::Off),
        k => match k.parse::<usize>() {
            Ok(k) if k >= 2 => Ok(ClusterMode::Fixed(k)),
            _ => Err(format!(
                "expected an integer >= 2, `auto` or `off`, got `{k}`"
            )),
        },
    }
}

impl RunArgs {
    fn into_config(self) -> Result<(RunConfig, PathBuf), Error> {
        let mut config = match &self.config {
            Some(path) => RunConfig::from_path(path)?,
            None if self.preset.is_none() && self.records.is_none() => {
                return Err(Error::InvalidConfig(
                    "no input: pass --records/--schema, --preset or --config".into(),
                ))
            }
            None => RunConfig::default(),
        };
        if let Some(name) = self.preset {
            config.input = InputSource::Preset {
                name,
                n_students: self.n,
            };
        } else if let (Some(records), Some(schema)) = (self.records, self.schema) {
            config.input = InputSource::Files {
                records,
                schema,
                format: if self.csv {
                    RecordFormat::Csv
                } else {
                    RecordFormat::Jsonl
                },
            };
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(t) = self.threshold {
            config.threshold = t;
        }
        if let Some(f) = self.folds {
            config.folds = f;
        }
        if let Some(s) = self.strategies {
            config.strategies = s;
        }
        if let Some(mode) = self.cluster_k {
            config.cluster_mode = mode;
        }
        if let Some(a) = self.audited {
            config.audited_attributes = a;
        }
        if let Some(b) = self.biased {
            config.biased_attributes = Some(b);
        }
        Ok((config, self.out))
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Audit(args) => {
            let (config, out) = args.into_config()?;
            let audit = pipeline::cmd_audit(&config, &out)?;
            for f in &audit.imbalance.findings {
                if f.imbalanced {
                    println!("imbalanced: {}", f.spec);
                }
            }
            println!(
                "baseline AUC {:.4} ± {:.4}",
                audit.baseline.auc_mean, audit.baseline.auc_std
            );
            for a in &audit.baseline.attributes {
                match a.fnr_gap {
                    Some(g) => println!("FNR gap {}: {g:.4}", a.attribute),
                    None => println!("FNR gap {}: n/a", a.attribute),
                }
            }
            println!("wrote {}", out.join("audit.json").display());
        }
        Command::Cluster(args) => {
            let (config, out) = args.into_config()?;
            let c = pipeline::cmd_cluster(&config, &out)?;
            println!(
                "k = {}, sizes {:?}, silhouette {:.4}",
                c.result.k, c.sizes, c.result.silhouette
            );
            println!("wrote {}", out.join("clusters.json").display());
        }
        Command::Mitigate(args) => {
            let (config, out) = args.into_config()?;
            let sweep = pipeline::cmd_mitigate(&config, &out)?;
            println!(
                "{} configurations ({} evaluated, {} resumed)",
                sweep.reports.len(),
                sweep.evaluated.len(),
                sweep.reports.len() - sweep.evaluated.len()
            );
            println!(
                "chosen: {}{}",
                sweep.selection.chosen,
                if sweep.selection.degradation_accepted {
                    " (degradation-accepted)"
                } else {
                    ""
                }
            );
            println!("wrote {}", out.join("report.txt").display());
        }
        Command::Report { out } => {
            print!("{}", pipeline::cmd_report(&out)?);
        }
        Command::Generate {
            preset,
            n,
            seed,
            out,
            csv,
        } => {
            let format = if csv {
                RecordFormat::Csv
            } else {
                RecordFormat::Jsonl
            };
            let files = pipeline::cmd_generate(&preset, n, seed, format, &out)?;
            println!("wrote {}", files.records.display());
            println!("wrote {}", files.schema.display());
            println!("wrote {}", files.ground_truth.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}
