use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data;
use crate::error::{Result, ScrError};
use crate::model::{DecodingConfig, ModelConfig};
use crate::scr::RealignConfig;
use crate::train::TrainConfig;

/// Offset between the training-corpus seed and the evaluation-text seed.
pub(crate) const EVAL_SEED_OFFSET: u64 = 0x5EED_0000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ConsistencyVsLength,
    RetentionVsShifts,
    LatencyVsLength,
    DriftVsIterations,
    EntropyProfile,
    HeadDeviation,
    PositionalStability,
    Perplexity,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::ConsistencyVsLength,
        ExperimentKind::RetentionVsShifts,
        ExperimentKind::LatencyVsLength,
        ExperimentKind::DriftVsIterations,
        ExperimentKind::EntropyProfile,
        ExperimentKind::HeadDeviation,
        ExperimentKind::PositionalStability,
        ExperimentKind::Perplexity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::ConsistencyVsLength => "consistency_vs_length",
            ExperimentKind::RetentionVsShifts => "retention_vs_shifts",
            ExperimentKind::LatencyVsLength => "latency_vs_length",
            ExperimentKind::DriftVsIterations => "drift_vs_iterations",
            ExperimentKind::EntropyProfile => "entropy_profile",
            ExperimentKind::HeadDeviation => "head_deviation",
            ExperimentKind::PositionalStability => "positional_stability",
            ExperimentKind::Perplexity => "perplexity",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = ScrError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ScrError::Config(format!("unknown experiment {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Repeating unit of the training and evaluation text.
    pub pattern: String,
    /// Characters of training text per seed.
    pub corpus_length: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Tokens per pooled segment in consistency and retention.
    pub segment_len: usize,
    /// Characters per topic in shift corpora.
    pub span_len: usize,
}

fn default_noise() -> f64 {
    data::PATTERN_NOISE
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            pattern: "abcabd".into(),
            corpus_length: 20_000,
            noise: data::PATTERN_NOISE,
            segment_len: 64,
            span_len: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Sequence lengths; defaults to 512..4096 doubling, capped by `max_seq_len`.
    pub lengths: Option<Vec<usize>>,
    /// Topic counts of the shift corpora; 1 means no shift.
    pub shifts: Vec<usize>,
    pub iterations: usize,
    pub entropy_bins: usize,
    /// Half-open position ranges; defaults to doubling groups capped by `max_seq_len`.
    pub position_groups: Option<Vec<(usize, usize)>>,
    pub latency_repeats: usize,
    pub prompt_len: usize,
    /// Tokens generated per drift iteration.
    pub drift_segment_len: usize,
    /// Tokens generated for the entropy profile.
    pub generation_len: usize,
    /// Sequence length of the attention-deviation trace.
    pub attention_len: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            lengths: None,
            shifts: (1..=6).collect(),
            iterations: 6,
            entropy_bins: 10,
            position_groups: None,
            latency_repeats: 5,
            prompt_len: 32,
            drift_segment_len: 32,
            generation_len: 200,
            attention_len: 256,
        }
    }
}

pub const DEFAULT_LENGTHS: [usize; 4] = [512, 1024, 2048, 4096];
pub const DEFAULT_GROUPS: [(usize, usize); 5] = [(0, 512), (512, 1024), (1024, 2048), (2048, 4096), (4096, 8192)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_sigma2")]
    pub init_sigma2: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub realign: RealignConfig,
    #[serde(default)]
    pub decoding: DecodingConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub grid: GridConfig,
}

fn default_sigma2() -> f64 {
    0.02
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(ScrError::Config(format!("{name} must be positive")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| ScrError::Config(e.message().to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| ScrError::Format(e.to_string()))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(ScrError::Config("at least one seed is required".into()));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.realign.validate()?;
        self.decoding.validate()?;
        if !(self.init_sigma2 > 0.0 && self.init_sigma2.is_finite()) {
            return Err(ScrError::Config("init_sigma2 must be positive".into()));
        }
        let vocab = super::experiment_vocab(&self.data.pattern)?;
        if self.model.vocab_size < vocab.size() {
            return Err(ScrError::Config(format!(
                "vocab_size {} is smaller than the experiment alphabet of {}",
                self.model.vocab_size,
                vocab.size()
            )));
        }
        let d = &self.data;
        positive("data.segment_len", d.segment_len)?;
        if !(0.0..=1.0).contains(&d.noise) {
            return Err(ScrError::Config(format!("data.noise must lie in [0, 1], got {}", d.noise)));
        }
        if d.corpus_length <= self.train.seq_len {
            return Err(ScrError::Config("data.corpus_length must exceed train.seq_len".into()));
        }
        let g = &self.grid;
        for (name, v) in [
            ("grid.iterations", g.iterations),
            ("grid.entropy_bins", g.entropy_bins),
            ("grid.prompt_len", g.prompt_len),
            ("grid.drift_segment_len", g.drift_segment_len),
            ("grid.generation_len", g.generation_len),
            ("grid.attention_len", g.attention_len),
        ] {
            positive(name, v)?;
        }
        if g.latency_repeats < 3 {
            return Err(ScrError::Config("grid.latency_repeats must be at least 3".into()));
        }
        if g.shifts.is_empty() || g.shifts.iter().any(|&k| k == 0 || k > data::max_topics()) {
            return Err(ScrError::Config(format!(
                "grid.shifts must be non-empty values in 1..={}",
                data::max_topics()
            )));
        }
        let max = self.model.max_seq_len;
        let within = |name: &str, len: usize| -> Result<()> {
            if len > max {
                return Err(ScrError::Config(format!("{name} needs {len} tokens, max_seq_len is {max}")));
            }
            Ok(())
        };
        match self.experiment {
            ExperimentKind::RetentionVsShifts => {
                if d.span_len < 2 * d.segment_len {
                    return Err(ScrError::Config("data.span_len must cover two segments".into()));
                }
                let most = *g.shifts.iter().max().expect("non-empty");
                within("the largest shift corpus", most * d.span_len)?;
            }
            ExperimentKind::DriftVsIterations => {
                within("drift generation", g.prompt_len + g.iterations * g.drift_segment_len)?
            }
            ExperimentKind::EntropyProfile => within("entropy generation", g.prompt_len + g.generation_len)?,
            ExperimentKind::HeadDeviation => {
                within("grid.attention_len", g.attention_len)?;
                if self.model.n_layers < 2 {
                    return Err(ScrError::Config("head deviation needs at least two layers".into()));
                }
            }
            ExperimentKind::ConsistencyVsLength if self.lengths()?.iter().any(|&l| l < 2 * d.segment_len) => {
                return Err(ScrError::Config("every length must cover two segments".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// The sequence-length grid.
    pub fn lengths(&self) -> Result<Vec<usize>> {
        let max = self.model.max_seq_len;
        let lengths = match &self.grid.lengths {
            Some(l) => {
                if l.is_empty() || l.iter().any(|&x| x == 0 || x > max) {
                    return Err(ScrError::Config(format!("grid.lengths must be non-empty values in 1..={max}")));
                }
                l.clone()
            }
            None => DEFAULT_LENGTHS.iter().copied().filter(|&l| l <= max).collect(),
        };
        if lengths.is_empty() {
            return Err(ScrError::Config(format!("no default length fits max_seq_len {max}")));
        }
        Ok(lengths)
    }

    /// Position groups for the stability table.
    pub fn position_groups(&self) -> Result<Vec<(usize, usize)>> {
        let max = self.model.max_seq_len;
        let groups: Vec<(usize, usize)> = match &self.grid.position_groups {
            Some(g) => g.clone(),
            None => DEFAULT_GROUPS.iter().filter(|g| g.0 < max).map(|&(s, e)| (s, e.min(max))).collect(),
        };
        if groups.is_empty() || groups.iter().any(|&(s, e)| e <= s || e > max) {
            return Err(ScrError::Config(format!("position groups must be non-empty ranges within 0..{max}")));
        }
        Ok(groups)
    }

    /// `override_dir` when given, else the configured output directory.
    pub fn resolve_output(&self, override_dir: Option<&Path>) -> Result<PathBuf> {
        override_dir
            .map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .ok_or_else(|| ScrError::Config("no output directory given".into()))
    }
}
