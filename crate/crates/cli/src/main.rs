use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use iec_core::experiment::{
    aggregate_dir, aggregate_path, discover_seeds, emit_plotdata, replay, run_ablation, run_bit_sweep, run_suite_with,
    ExperimentError, ExperimentSpec, PlotKind,
};
use iec_core::trajectory::write_records;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const OUTPUT_ENV: &str = "IEC_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "iec", version, about = "Train and evaluate communicating agents on cooperative gridworlds")]
struct Cli {
    /// Output directory; defaults to $IEC_OUTPUT_DIR, then ./runs
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of one configuration and aggregate
    Train(SpecArgs),
    /// Run the full, no_hidden, no_ibm and no_comm arms
    Ablate(SpecArgs),
    /// Run one suite per message width
    SweepBits {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, value_delimiter = ',', default_value = "32,64,128")]
        widths: Vec<usize>,
    },
    /// Recompute an aggregate report from per-seed CSVs
    Aggregate {
        #[arg(long)]
        label: String,
        /// Preset recorded in the report
        #[arg(long, default_value = "predator_prey/easy")]
        preset: String,
    },
    /// Play greedy episodes from a checkpoint and dump the trajectories
    Replay {
        #[command(flatten)]
        spec: SpecArgs,
        /// Checkpoint directory holding core.bin and ibm{j}.bin
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of episodes to play
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Seed of the first episode; later episodes count up from it
        #[arg(long, default_value_t = 0)]
        start_seed: u64,
        /// Trajectory file; stdout when absent
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Flags override values from `--config`.
#[derive(Args)]
struct SpecArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    difficulty: Option<String>,
    #[arg(long)]
    message_bits: Option<usize>,
    #[arg(long)]
    no_comm: bool,
    #[arg(long)]
    no_ibm: bool,
    #[arg(long)]
    no_hidden: bool,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    max_env_steps: Option<usize>,
    #[arg(long)]
    ibm_interval: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Label used in output file names
    #[arg(long)]
    label: Option<String>,
    /// Save parameters every ibm_interval episodes under <label>_seed<s>/ep<k>/
    #[arg(long)]
    checkpoints: bool,
}

impl SpecArgs {
    fn resolve(&self) -> Result<ExperimentSpec, ExperimentError> {
        let mut spec = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                toml::from_str(&text)?
            }
            None => ExperimentSpec::default(),
        };
        if let Some(v) = &self.env {
            spec.env = v.clone();
        }
        if let Some(v) = &self.difficulty {
            spec.difficulty = v.clone();
        }
        if let Some(v) = self.message_bits {
            spec.message_bits = v;
        }
        spec.no_comm |= self.no_comm;
        spec.no_ibm |= self.no_ibm;
        spec.no_hidden |= self.no_hidden;
        if let Some(v) = &self.seeds {
            spec.seeds = v.clone();
        }
        if let Some(v) = self.episodes {
            spec.episodes = v;
        }
        if self.max_env_steps.is_some() {
            spec.max_env_steps = self.max_env_steps;
        }
        if let Some(v) = self.ibm_interval {
            spec.ibm_interval = v;
        }
        if let Some(v) = self.learning_rate {
            spec.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            spec.batch_size = v;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn output_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn report_missing(reports: &[iec_core::experiment::AggregateReport]) -> Result<()> {
    let missing: Vec<String> = reports
        .iter()
        .filter(|r| !r.missing_seeds.is_empty())
        .map(|r| format!("{}: {:?}", r.label, r.missing_seeds))
        .collect();
    if !missing.is_empty() {
        bail!("seeds failed, partial results written ({})", missing.join("; "));
    }
    Ok(())
}

fn print_summary(reports: &[iec_core::experiment::AggregateReport], out: &Path) {
    for r in reports {
        println!(
            "{:<12} mean {:.4} std {:.4} over {} seeds -> {}",
            r.label,
            r.mean,
            r.std,
            r.completed_seeds.len(),
            aggregate_path(out, &r.label).display()
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    let out = output_dir(cli.out);
    match cli.command {
        Command::Train(args) => {
            let spec = args.resolve()?;
            let label = args.label.clone().unwrap_or_else(|| spec.label());
            let report = run_suite_with(&spec, &out, &label, args.checkpoints)?;
            emit_plotdata(std::slice::from_ref(&report), PlotKind::Curve, &out)?;
            print_summary(std::slice::from_ref(&report), &out);
            report_missing(std::slice::from_ref(&report))
        }
        Command::Ablate(args) => {
            let spec = args.resolve()?;
            if spec.no_comm || spec.no_ibm || spec.no_hidden {
                return Err(ExperimentError::Invalid {
                    key: "no_comm/no_ibm/no_hidden",
                    reason: "ablate runs every arm itself; drop the ablation flags".into(),
                }
                .into());
            }
            let reports = run_ablation(&spec, &out)?;
            emit_plotdata(&reports, PlotKind::Curve, &out)?;
            emit_plotdata(&reports, PlotKind::Bars, &out)?;
            print_summary(&reports, &out);
            report_missing(&reports)
        }
        Command::SweepBits { spec, widths } => {
            let spec = spec.resolve()?;
            for &w in &widths {
                ExperimentSpec {
                    message_bits: w,
                    ..spec.clone()
                }
                .validate()?;
            }
            let reports = run_bit_sweep(&spec, &widths, &out)?;
            emit_plotdata(&reports, PlotKind::Curve, &out)?;
            emit_plotdata(&reports, PlotKind::Bars, &out)?;
            print_summary(&reports, &out);
            report_missing(&reports)
        }
        Command::Aggregate { label, preset } => {
            let seeds = discover_seeds(&out, &label)?;
            if seeds.is_empty() {
                return Err(ExperimentError::NoCompletedSeeds(label).into());
            }
            let report = aggregate_dir(&out, &label, &preset, &seeds)?;
            report.write(&aggregate_path(&out, &label))?;
            emit_plotdata(std::slice::from_ref(&report), PlotKind::Curve, &out)?;
            print_summary(std::slice::from_ref(&report), &out);
            Ok(())
        }
        Command::Replay {
            spec,
            checkpoint,
            count,
            start_seed,
            output,
        } => {
            let spec = spec.resolve()?;
            let (records, returns) = replay(&spec, &checkpoint, count, start_seed)?;
            match output {
                Some(path) => {
                    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                    let mut w = BufWriter::new(file);
                    write_records(&mut w, &records)?;
                    w.flush()?;
                }
                None => write_records(std::io::stdout().lock(), &records)?,
            }
            for (i, r) in returns.iter().enumerate() {
                eprintln!("episode {i}: team return {r}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.downcast_ref::<ExperimentError>().is_some_and(ExperimentError::is_config);
            ExitCode::from(if config { EXIT_CONFIG } else { EXIT_RUNTIME })
        }
    }
}
