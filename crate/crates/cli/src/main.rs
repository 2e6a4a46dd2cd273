use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use scr_core::harness::{self, ExperimentConfig, Variant};
use scr_core::metrics;
use scr_core::model::{self, checkpoint};
use scr_core::{Result, ScrError};

#[derive(Parser)]
#[command(name = "scr", version, about = "Train, evaluate and compare realigned transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one variant and save its checkpoint and loss history.
    Train(Common),
    /// Print headline metrics of a checkpoint (or of a freshly trained model).
    Eval(EvalArgs),
    /// Run the configured experiment for every seed and both variants.
    Experiment(Common),
    /// Summarize a finished experiment directory.
    Compare(Common),
    /// Measure forward latency with realignment off and on.
    Profile(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl From<Switch> for Variant {
    fn from(s: Switch) -> Self {
        match s {
            Switch::On => Variant::Scr,
            Switch::Off => Variant::Baseline,
        }
    }
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "on")]
    scr: Switch,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        config.seeds = vec![seed];
    }
    Ok(config)
}

fn first_seed(config: &ExperimentConfig) -> u64 {
    config.seeds[0]
}

fn say(quiet: bool, text: impl AsRef<str>) {
    if !quiet {
        println!("{}", text.as_ref());
    }
}

fn train(c: &Common) -> Result<()> {
    let config = load_config(c)?;
    let out = config.resolve_output(c.out.as_deref())?;
    let variant = Variant::from(c.scr);
    for &seed in &config.seeds {
        let (path, cell) = harness::train_to_dir(&config, seed, variant, &out)?;
        let last = cell.history.last().map_or(f64::NAN, |r| r.loss.cross_entropy);
        say(
            c.quiet,
            format!("seed {seed} {}: final cross-entropy {last:.6}, saved {}", variant.as_str(), path.display()),
        );
    }
    Ok(())
}

fn params_for(
    config: &ExperimentConfig,
    checkpoint: Option<&Path>,
    seed: u64,
    variant: Variant,
) -> Result<model::ModelParams> {
    match checkpoint {
        Some(p) => {
            let params = checkpoint::load(p)?;
            if params.config != config.model {
                return Err(ScrError::Config(format!("checkpoint {} was built for a different model", p.display())));
            }
            Ok(params)
        }
        None => Ok(harness::train_variant(config, seed, variant)?.params),
    }
}

fn eval(a: &EvalArgs) -> Result<()> {
    let config = load_config(&a.common)?;
    let seed = first_seed(&config);
    let variant = Variant::from(a.common.scr);
    let params = params_for(&config, a.checkpoint.as_deref(), seed, variant)?;
    let summary = harness::evaluate_params(&config, &params, seed, variant)?;
    let json = serde_json::to_string_pretty(&summary)?;
    if let Some(dir) = &a.common.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("eval_{}_seed{seed}.json", variant.as_str())), format!("{json}\n"))?;
    }
    say(a.common.quiet, json);
    Ok(())
}

fn experiment(c: &Common) -> Result<()> {
    let config = load_config(c)?;
    let out = config.resolve_output(c.out.as_deref())?;
    let manifest = harness::run_experiment(&config, &out)?;
    say(c.quiet, format!("{}: {} files in {}", manifest.experiment.as_str(), manifest.files.len(), out.display()));
    if !c.quiet {
        print!("{}", std::fs::read_to_string(out.join(harness::SUMMARY_FILE))?);
    }
    Ok(())
}

fn compare(c: &Common) -> Result<()> {
    let config = load_config(c)?;
    let out = config.resolve_output(c.out.as_deref())?;
    let (baseline, scr) = harness::load_reports(&config, &out)?;
    let summary = harness::compare_summary(&baseline, &scr)?;
    let text = summary.to_markdown(config.experiment.as_str());
    std::fs::write(out.join(harness::SUMMARY_FILE), &text)?;
    say(c.quiet, text);
    Ok(())
}

fn profile(a: &EvalArgs) -> Result<()> {
    let config = load_config(&a.common)?;
    let seed = first_seed(&config);
    let params = match a.checkpoint.as_deref() {
        Some(_) => params_for(&config, a.checkpoint.as_deref(), seed, Variant::Scr)?,
        None => model::init_params(&config.model, config.init_sigma2, seed)?,
    };
    let points =
        metrics::profile_inference(&params, &config.realign, &config.lengths()?, config.grid.latency_repeats, seed)?;
    if let Some(dir) = &a.common.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("profile_seed{seed}.json")), serde_json::to_string_pretty(&points)? + "\n")?;
    }
    say(a.common.quiet, "seq_len off_ms on_ms overhead off_bytes on_bytes");
    for p in &points {
        say(
            a.common.quiet,
            format!(
                "{} {:.3} {:.3} {:+.1}% {} {}",
                p.seq_len,
                p.off_median_ms,
                p.on_median_ms,
                100.0 * p.overhead(),
                p.off_memory_bytes,
                p.on_memory_bytes
            ),
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train(c) => train(c),
        Command::Eval(a) => eval(a),
        Command::Experiment(c) => experiment(c),
        Command::Compare(c) => compare(c),
        Command::Profile(a) => profile(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.category());
            ExitCode::FAILURE
        }
    }
}
