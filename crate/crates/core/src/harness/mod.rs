//! Declarative baseline-vs-realignment experiments.
//!
//! An [`ExperimentConfig`] is read from TOML. [`run_experiment`] trains a
//! baseline and a realigned twin from the same initialization for every
//! seed, evaluates the selected metric over its grid, and writes one CSV and
//! one JSON report per `(seed, variant)` cell, a plot-data file, a markdown
//! comparison and a manifest.

mod compare;
mod config;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, Vocab};
use crate::error::Result;
use crate::metrics::{self, EvalModel, MetricReport, ReportMetadata};
use crate::model::{self, checkpoint, ForwardOptions, ModelParams, ScrMode, TokenId};
use crate::par;
use crate::scr::RealignConfig;
use crate::train::{self, StepRecord};

pub use compare::{compare_summary, emit_plotdata, plot_series, ComparisonRow, ComparisonSummary};
pub use config::{DataConfig, ExperimentConfig, ExperimentKind, GridConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Baseline,
    Scr,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::Baseline, Variant::Scr];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Scr => "scr",
        }
    }

    pub fn from_mode(mode: ScrMode) -> Self {
        match mode {
            ScrMode::Off => Variant::Baseline,
            ScrMode::On => Variant::Scr,
        }
    }

    pub fn mode(self) -> ScrMode {
        match self {
            Variant::Baseline => ScrMode::Off,
            Variant::Scr => ScrMode::On,
        }
    }

    /// Realignment settings this variant trains and evaluates under.
    pub fn realign(self, config: &RealignConfig) -> RealignConfig {
        match self {
            Variant::Baseline => RealignConfig::disabled(),
            Variant::Scr => config.clone(),
        }
    }
}

/// Character vocabulary shared by every corpus an experiment touches.
pub fn experiment_vocab(pattern: &str) -> Result<Vocab> {
    data::build_vocab(&format!("{}{pattern}", data::TOPIC_POOL))
}

fn training_corpus(config: &ExperimentConfig, vocab: &Vocab, seed: u64) -> Result<Vec<TokenId>> {
    let d = &config.data;
    Ok(vocab.encode(&data::synth_pattern_corpus(&d.pattern, d.corpus_length, d.noise, seed)?))
}

fn eval_sequence(config: &ExperimentConfig, vocab: &Vocab, len: usize, seed: u64) -> Result<Vec<TokenId>> {
    let d = &config.data;
    let text = data::synth_pattern_corpus(&d.pattern, len, d.noise, seed.wrapping_add(config::EVAL_SEED_OFFSET))?;
    Ok(vocab.encode(&text))
}

/// Trained parameters of one `(seed, variant)` cell.
pub struct TrainedCell {
    pub seed: u64,
    pub variant: Variant,
    pub params: ModelParams,
    pub history: Vec<StepRecord>,
}

/// Initializes from `seed` and trains one variant.
pub fn train_variant(config: &ExperimentConfig, seed: u64, variant: Variant) -> Result<TrainedCell> {
    config.validate()?;
    let vocab = experiment_vocab(&config.data.pattern)?;
    let init = model::init_params(&config.model, config.init_sigma2, seed)?;
    let corpus = training_corpus(config, &vocab, seed)?;
    let tc = train::TrainConfig { seed, ..config.train.clone() };
    let (params, history) = train::train(&init, &corpus, &tc, &variant.realign(&config.realign))?;
    Ok(TrainedCell { seed, variant, params, history })
}

fn cell_metadata(config_hash: &str, seed: u64, variant: Variant) -> ReportMetadata {
    ReportMetadata { seed, model_id: variant.as_str().to_string(), config_hash: config_hash.to_string() }
}

/// Evaluates the configured metric for one trained cell.
pub fn evaluate_cell(config: &ExperimentConfig, cell: &TrainedCell, config_hash: &str) -> Result<Vec<MetricReport>> {
    let vocab = experiment_vocab(&config.data.pattern)?;
    let realign = cell.variant.realign(&config.realign);
    let model = EvalModel::new(&cell.params, cell.variant.mode(), &realign);
    let grid = &config.grid;
    let seed = cell.seed;
    let seg = config.data.segment_len;
    let meta = cell_metadata(config_hash, seed, cell.variant);
    let kind = config.experiment;
    let report = |grid_name: &str, value_name: &str, g: Vec<f64>, v: Vec<f64>| MetricReport {
        name: kind.as_str().to_string(),
        grid_name: grid_name.to_string(),
        value_name: value_name.to_string(),
        grid: g,
        values: v,
        metadata: meta.clone(),
    };
    let lengths = config.lengths()?;
    let out = match kind {
        ExperimentKind::ConsistencyVsLength => {
            let mut values = Vec::with_capacity(lengths.len());
            for &len in &lengths {
                let seq = eval_sequence(config, &vocab, len, seed)?;
                values.push(metrics::contextual_consistency(&model, &seq, seg)?);
            }
            vec![report("seq_len", "score", to_f64(&lengths), values)]
        }
        ExperimentKind::RetentionVsShifts => {
            let mut values = Vec::with_capacity(grid.shifts.len());
            for &k in &grid.shifts {
                // Grid point k counts topics, so k = 1 has no shift.
                let corpus = data::synth_shift_corpus(k - 1, config.data.span_len, seg, seed.wrapping_add(k as u64))?;
                values.push(metrics::coherence_retention(&model, &corpus, &vocab, seg)?);
            }
            vec![report("shifts", "score", to_f64(&grid.shifts), values)]
        }
        ExperimentKind::LatencyVsLength => {
            let points = metrics::profile_inference(&cell.params, &realign, &lengths, grid.latency_repeats, seed)?;
            let pick = |p: &metrics::LatencyPoint| match cell.variant {
                Variant::Baseline => (p.off_median_ms, p.off_memory_bytes),
                Variant::Scr => (p.on_median_ms, p.on_memory_bytes),
            };
            let ms = points.iter().map(|p| pick(p).0).collect();
            let mem = points.iter().map(|p| pick(p).1 as f64).collect();
            let mut memory = report("seq_len", "bytes", to_f64(&lengths), mem);
            memory.name = format!("{}_memory", kind.as_str());
            vec![report("seq_len", "latency_ms", to_f64(&lengths), ms), memory]
        }
        ExperimentKind::DriftVsIterations => {
            let prompt = eval_sequence(config, &vocab, grid.prompt_len, seed)?;
            let drift =
                metrics::semantic_drift(&model, &prompt, grid.iterations, grid.drift_segment_len, &config.decoding)?;
            let its: Vec<usize> = (1..=grid.iterations).collect();
            vec![report("iteration", "drift", to_f64(&its), drift)]
        }
        ExperimentKind::EntropyProfile => {
            let prompt = eval_sequence(config, &vocab, grid.prompt_len, seed)?;
            let seq = model::generate(
                &prompt,
                grid.generation_len,
                model.params,
                model.mode,
                model.realign,
                &config.decoding,
            )?;
            let profile = metrics::token_entropy_profile(&model, &seq, grid.entropy_bins)?;
            let bins = (1..=grid.entropy_bins).map(|b| b as f64 / grid.entropy_bins as f64).collect();
            vec![report("position", "entropy", bins, profile)]
        }
        ExperimentKind::HeadDeviation => {
            let seq = eval_sequence(config, &vocab, grid.attention_len, seed)?;
            let trace = model::forward_with(
                &seq,
                model.params,
                model.mode,
                model.realign,
                ForwardOptions { keep_attention: true },
            )?;
            let dev = metrics::attention_head_deviation(&trace)?;
            let layers: Vec<usize> = (2..=config.model.n_layers).collect();
            vec![report("layer", "deviation_pct", to_f64(&layers), dev)]
        }
        ExperimentKind::PositionalStability => {
            let groups = config.position_groups()?;
            let std = metrics::positional_stability(&cell.params.positional_embedding, &groups)?;
            let ends: Vec<usize> = groups.iter().map(|g| g.1).collect();
            vec![report("group_end", "norm_std", to_f64(&ends), std)]
        }
        ExperimentKind::Perplexity => {
            let mut values = Vec::with_capacity(lengths.len());
            for &len in &lengths {
                let seq = eval_sequence(config, &vocab, len + 1, seed)?;
                values.push(metrics::perplexity(&model, &[seq])?);
            }
            vec![report("seq_len", "perplexity", to_f64(&lengths), values)]
        }
    };
    Ok(out)
}

fn to_f64(xs: &[usize]) -> Vec<f64> {
    xs.iter().map(|&x| x as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: ExperimentKind,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub files: Vec<String>,
    pub crate_version: String,
    pub config: ExperimentConfig,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.md";

fn relative(dir: &Path, p: &Path) -> String {
    p.strip_prefix(dir).unwrap_or(p).to_string_lossy().into_owned()
}

/// Runs every `(seed, variant)` cell and writes reports, plot data, the
/// comparison summary and the manifest into `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest> {
    config.validate()?;
    config.lengths()?;
    if config.experiment == ExperimentKind::PositionalStability {
        config.position_groups()?;
    }
    std::fs::create_dir_all(out_dir)?;
    let hash = config.hash();
    let cells: Vec<(u64, Variant)> =
        config.seeds.iter().flat_map(|&s| Variant::ALL.into_iter().map(move |v| (s, v))).collect();

    let run_cell = |&(seed, variant): &(u64, Variant)| -> Result<(Vec<MetricReport>, Vec<PathBuf>)> {
        let cell = train_variant(config, seed, variant)?;
        let loss_path = out_dir.join(format!("loss_{}_seed{seed}.csv", variant.as_str()));
        train::write_loss_history(&cell.history, &loss_path)?;
        let reports = evaluate_cell(config, &cell, &hash)?;
        let mut files = vec![loss_path];
        for r in &reports {
            let (c, j) = r.write(out_dir)?;
            files.push(c);
            files.push(j);
        }
        Ok((reports, files))
    };
    // Timing cells run one at a time so they do not compete for cores.
    let results = if config.experiment == ExperimentKind::LatencyVsLength {
        cells.iter().map(run_cell).collect::<Vec<_>>()
    } else {
        par::map_slice(&cells, run_cell)
    };

    let mut baseline = Vec::new();
    let mut scr = Vec::new();
    let mut files = Vec::new();
    for ((_, variant), r) in cells.iter().zip(results) {
        let (reports, paths) = r?;
        files.extend(paths.iter().map(|p| relative(out_dir, p)));
        let primary = reports.into_iter().next().expect("at least one report per cell");
        match variant {
            Variant::Baseline => baseline.push(primary),
            Variant::Scr => scr.push(primary),
        }
    }

    let plot_path = out_dir.join(format!("plot_{}.dat", config.experiment.as_str()));
    let series: Vec<MetricReport> = baseline.iter().chain(&scr).cloned().collect();
    emit_plotdata(&series, &plot_path)?;
    files.push(relative(out_dir, &plot_path));

    let summary = compare_summary(&baseline, &scr)?;
    let summary_path = out_dir.join(SUMMARY_FILE);
    std::fs::write(&summary_path, summary.to_markdown(config.experiment.as_str()))?;
    files.push(relative(out_dir, &summary_path));

    let manifest = RunManifest {
        experiment: config.experiment,
        config_hash: hash,
        seeds: config.seeds.clone(),
        variants: Variant::ALL.to_vec(),
        files,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
    };
    std::fs::write(out_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// Reads back the primary reports of a finished run, split by variant.
pub fn load_reports(config: &ExperimentConfig, out_dir: &Path) -> Result<(Vec<MetricReport>, Vec<MetricReport>)> {
    let mut sides = (Vec::new(), Vec::new());
    for &seed in &config.seeds {
        for v in Variant::ALL {
            let path = out_dir.join(format!("{}_{}_seed{seed}.json", config.experiment.as_str(), v.as_str()));
            let r = MetricReport::read_json(&path)?;
            match v {
                Variant::Baseline => sides.0.push(r),
                Variant::Scr => sides.1.push(r),
            }
        }
    }
    Ok(sides)
}

/// Trains one variant and stores its checkpoint and loss history in `out_dir`.
pub fn train_to_dir(
    config: &ExperimentConfig,
    seed: u64,
    variant: Variant,
    out_dir: &Path,
) -> Result<(PathBuf, TrainedCell)> {
    std::fs::create_dir_all(out_dir)?;
    let cell = train_variant(config, seed, variant)?;
    let ckpt = checkpoint_path(out_dir, seed, variant);
    checkpoint::save(&cell.params, &ckpt)?;
    train::write_loss_history(&cell.history, &out_dir.join(format!("loss_{}_seed{seed}.csv", variant.as_str())))?;
    Ok((ckpt, cell))
}

pub fn checkpoint_path(out_dir: &Path, seed: u64, variant: Variant) -> PathBuf {
    out_dir.join(format!("model_{}_seed{seed}.ckpt", variant.as_str()))
}

/// Headline numbers for one trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub variant: Variant,
    pub seed: u64,
    pub perplexity: f64,
    pub consistency: f64,
    pub divergence: f64,
}

pub fn evaluate_params(
    config: &ExperimentConfig,
    params: &ModelParams,
    seed: u64,
    variant: Variant,
) -> Result<EvalSummary> {
    let vocab = experiment_vocab(&config.data.pattern)?;
    let realign = variant.realign(&config.realign);
    let model = EvalModel::new(params, variant.mode(), &realign);
    let len = config.lengths()?.first().copied().unwrap_or(config.model.max_seq_len);
    let seq = eval_sequence(config, &vocab, len, seed)?;
    Ok(EvalSummary {
        variant,
        seed,
        perplexity: metrics::perplexity(&model, std::slice::from_ref(&seq))?,
        consistency: metrics::contextual_consistency(&model, &seq, config.data.segment_len)?,
        divergence: metrics::coherence_divergence(&model, &seq, 0.25, 0.25)?,
    })
}
