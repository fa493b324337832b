//! Flat `key = value` configuration: a text file of assignments, `#`
//! comments, and blank lines. Every key has a desk-scale default, so an
//! empty config is a complete experiment; unknown keys are rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use mospred_core::augment::AugmentSpec;
use mospred_core::dapt::DaptConfig;
use mospred_core::simulate::SimulatorConfig;

use crate::{validation, CliResult};

pub fn parse_config_text(text: &str, origin: &str) -> CliResult<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| validation(format!("{origin} line {}: expected 'key = value'", i + 1)))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(validation(format!("{origin} line {}: empty key", i + 1)));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(validation(format!("{origin} line {}: duplicate key '{key}'", i + 1)));
        }
    }
    Ok(map)
}

/// Tracks which keys were consumed so leftovers can be reported as
/// unknown instead of silently ignored.
struct KeyReader {
    map: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

impl KeyReader {
    fn new(map: BTreeMap<String, String>) -> Self {
        KeyReader { map, used: BTreeSet::new() }
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        self.map.get(key).cloned()
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<T>()
                .map_err(|e| validation(format!("config key '{key}' = '{v}': {e}"))),
        }
    }

    fn path(&mut self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    fn finish(self) -> CliResult<()> {
        let unknown: Vec<&String> =
            self.map.keys().filter(|k| !self.used.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(validation(format!("unknown config keys: {unknown:?}")))
        }
    }
}

/// Pipeline-shape switches. Settable as `ablation.*` config keys or as
/// command-line flags; a flag can only turn one on, never off.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Ablations {
    pub no_dapt: bool,
    pub no_aug: bool,
    pub no_dist_head: bool,
    pub no_reg_head: bool,
    pub linear_heads: bool,
    pub no_refine: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferMode {
    ZeroShot,
    FewShot,
    Full,
}

impl TransferMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TransferMode::ZeroShot => "zero_shot",
            TransferMode::FewShot => "few_shot",
            TransferMode::Full => "full",
        }
    }

    pub fn parse(s: &str) -> CliResult<Self> {
        match s {
            "zero_shot" => Ok(TransferMode::ZeroShot),
            "few_shot" => Ok(TransferMode::FewShot),
            "full" => Ok(TransferMode::Full),
            other => Err(validation(format!(
                "unknown transfer mode '{other}' (zero_shot|few_shot|full)"
            ))),
        }
    }
}

/// Stage-2 schedule numbers; assembled into a core `TrainConfig` (with
/// the run seed) at the point of use.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub peak_lr: f64,
    pub batch_size: usize,
    pub validation_every: u64,
    pub loss_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferParams {
    pub few_shot_n: usize,
    pub epochs: u64,
    pub lr: f64,
    pub batch_size: usize,
}

/// Every knob of the pipeline with its effective value.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Source corpus directory; defaults to `<out_dir>/source`.
    pub corpus_dir: PathBuf,
    /// Shifted-domain corpus directory; defaults to `<out_dir>/target`.
    pub target_dir: PathBuf,
    /// Rating-free corpus directory; defaults to `<out_dir>/unlabeled`.
    pub unlabeled_dir: PathBuf,
    pub split: (f64, f64, f64),
    pub sim: SimulatorConfig,
    /// Domain profile for the shifted corpus; 0 skips writing one.
    pub shifted_profile: u32,
    /// System count for the rating-free corpus; 0 skips writing one.
    pub unlabeled_systems: usize,
    pub dapt: DaptConfig,
    pub hidden: usize,
    pub train: TrainParams,
    pub aug_specs: Vec<AugmentSpec>,
    pub transfer: TransferParams,
    pub ablations: Ablations,
}

fn parse_aug_specs(raw: &str) -> CliResult<Vec<AugmentSpec>> {
    let mut specs = Vec::new();
    for part in raw.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (kind, value) = part
            .split_once(':')
            .ok_or_else(|| validation(format!("augment spec '{part}': expected kind:value")))?;
        let spec = match kind {
            "speed" => AugmentSpec::Speed(
                value.parse().map_err(|e| validation(format!("augment spec '{part}': {e}")))?,
            ),
            "tempo" => AugmentSpec::Tempo(
                value.parse().map_err(|e| validation(format!("augment spec '{part}': {e}")))?,
            ),
            "pitch" => AugmentSpec::Pitch(
                value.parse().map_err(|e| validation(format!("augment spec '{part}': {e}")))?,
            ),
            other => {
                return Err(validation(format!(
                    "augment spec '{part}': unknown kind '{other}' (speed|tempo|pitch)"
                )))
            }
        };
        spec.validate().map_err(validation)?;
        specs.push(spec);
    }
    Ok(specs)
}

fn render_aug_specs(specs: &[AugmentSpec]) -> String {
    specs
        .iter()
        .map(|s| match *s {
            AugmentSpec::Speed(f) => format!("speed:{f}"),
            AugmentSpec::Tempo(f) => format!("tempo:{f}"),
            AugmentSpec::Pitch(k) => format!("pitch:{k}"),
        })
        .collect::<Vec<_>>()
        .join(",")
}

impl PipelineConfig {
    /// Builds the effective config from parsed keys plus the command
    /// line's `--seed` / `--out` overrides.
    pub fn from_map(
        map: BTreeMap<String, String>,
        seed_override: Option<u64>,
        out_override: Option<PathBuf>,
    ) -> CliResult<Self> {
        let mut r = KeyReader::new(map);

        let seed = match seed_override {
            Some(s) => {
                r.raw("seed");
                s
            }
            None => r.parse("seed", 0u64)?,
        };
        let out_dir = match out_override {
            Some(p) => {
                r.raw("out_dir");
                p
            }
            None => r.path("out_dir").unwrap_or_else(|| PathBuf::from("out")),
        };
        let corpus_dir = r.path("corpus.dir").unwrap_or_else(|| out_dir.join("source"));
        let target_dir = r.path("corpus.target_dir").unwrap_or_else(|| out_dir.join("target"));
        let unlabeled_dir =
            r.path("corpus.unlabeled_dir").unwrap_or_else(|| out_dir.join("unlabeled"));

        let split = (
            r.parse("split.train", 0.7f64)?,
            r.parse("split.dev", 0.15f64)?,
            r.parse("split.test", 0.15f64)?,
        );

        let sim = SimulatorConfig {
            n_systems: r.parse("sim.n_systems", 40usize)?,
            utts_per_system: r.parse("sim.utts_per_system", 25usize)?,
            n_judges: r.parse("sim.n_judges", 30u32)?,
            ratings_per_utterance: r.parse("sim.ratings_per_utterance", 8u32)?,
            feature_dim: r.parse("sim.feature_dim", 8usize)?,
            frame_range: (r.parse("sim.frame_min", 20usize)?, r.parse("sim.frame_max", 40usize)?),
            judge_bias_sd: r.parse("sim.judge_bias_sd", 0.35f64)?,
            judge_noise_range: (
                r.parse("sim.judge_noise_min", 0.3f64)?,
                r.parse("sim.judge_noise_max", 0.9f64)?,
            ),
            utterance_jitter_sd: r.parse("sim.utterance_jitter_sd", 0.25f64)?,
            domain_profile_id: r.parse("sim.domain_profile", 0u32)?,
            seed,
        };
        let shifted_profile = r.parse("sim.shifted_profile", 0u32)?;
        let unlabeled_systems = r.parse("sim.unlabeled_systems", 0usize)?;

        let dapt_default = DaptConfig::default();
        let dapt = DaptConfig {
            mask_ratio: r.parse("dapt.mask_ratio", dapt_default.mask_ratio)?,
            epochs: r.parse("dapt.epochs", dapt_default.epochs)?,
            batch_size: r.parse("dapt.batch_size", dapt_default.batch_size)?,
            lr: r.parse("dapt.lr", dapt_default.lr)?,
            seed,
        };

        let hidden = r.parse("model.hidden", 32usize)?;

        let train = TrainParams {
            total_steps: r.parse("train.total_steps", 2000u64)?,
            warmup_steps: r.parse("train.warmup_steps", 50u64)?,
            peak_lr: r.parse("train.peak_lr", 1e-3f64)?,
            batch_size: r.parse("train.batch_size", 16usize)?,
            validation_every: r.parse("train.validation_every", 100u64)?,
            loss_weight: r.parse("train.loss_weight", 0.5f64)?,
        };

        let aug_specs = match r.raw("aug.specs") {
            Some(raw) => parse_aug_specs(&raw)?,
            None => mospred_core::augment::default_specs().to_vec(),
        };

        let transfer = TransferParams {
            few_shot_n: r.parse("transfer.few_shot_n", 10usize)?,
            epochs: r.parse("transfer.epochs", 50u64)?,
            lr: r.parse("transfer.lr", 1e-3f64)?,
            batch_size: r.parse("transfer.batch_size", 8usize)?,
        };

        let ablations = Ablations {
            no_dapt: r.parse("ablation.no_dapt", false)?,
            no_aug: r.parse("ablation.no_aug", false)?,
            no_dist_head: r.parse("ablation.no_dist_head", false)?,
            no_reg_head: r.parse("ablation.no_reg_head", false)?,
            linear_heads: r.parse("ablation.linear_heads", false)?,
            no_refine: r.parse("ablation.no_refine", false)?,
        };

        r.finish()?;

        let config = PipelineConfig {
            seed,
            out_dir,
            corpus_dir,
            target_dir,
            unlabeled_dir,
            split,
            sim,
            shifted_profile,
            unlabeled_systems,
            dapt,
            hidden,
            train,
            aug_specs,
            transfer,
            ablations,
        };
        config.validate()?;
        Ok(config)
    }

    /// Turns on the ablations requested by command-line flags.
    pub fn enable_ablations(&mut self, flags: Ablations) {
        self.ablations.no_dapt |= flags.no_dapt;
        self.ablations.no_aug |= flags.no_aug;
        self.ablations.no_dist_head |= flags.no_dist_head;
        self.ablations.no_reg_head |= flags.no_reg_head;
        self.ablations.linear_heads |= flags.linear_heads;
        self.ablations.no_refine |= flags.no_refine;
    }

    pub fn load(
        path: Option<&Path>,
        seed_override: Option<u64>,
        out_override: Option<PathBuf>,
    ) -> CliResult<Self> {
        let map = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| validation(format!("opening {}: {e}", p.display())))?;
                parse_config_text(&text, &p.display().to_string())?
            }
            None => BTreeMap::new(),
        };
        PipelineConfig::from_map(map, seed_override, out_override)
    }

    pub fn validate(&self) -> CliResult<()> {
        let (a, b, c) = self.split;
        let ok = a >= 0.0 && b >= 0.0 && c >= 0.0 && (a + b + c - 1.0).abs() <= 1e-9;
        if !ok {
            return Err(validation(format!(
                "split fractions ({a}, {b}, {c}) must be non-negative and sum to 1"
            )));
        }
        self.sim.validate().map_err(validation)?;
        self.dapt.validate().map_err(validation)?;
        if self.hidden == 0 {
            return Err(validation("model.hidden must be positive"));
        }
        if self.transfer.few_shot_n == 0 {
            return Err(validation("transfer.few_shot_n must be positive"));
        }
        Ok(())
    }

    /// Renders every effective value back to `key = value` form; this is
    /// the config snapshot a manifest records.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("seed", self.seed.to_string());
        put("out_dir", self.out_dir.display().to_string());
        put("corpus.dir", self.corpus_dir.display().to_string());
        put("corpus.target_dir", self.target_dir.display().to_string());
        put("corpus.unlabeled_dir", self.unlabeled_dir.display().to_string());
        put("split.train", format!("{}", self.split.0));
        put("split.dev", format!("{}", self.split.1));
        put("split.test", format!("{}", self.split.2));
        put("sim.n_systems", self.sim.n_systems.to_string());
        put("sim.utts_per_system", self.sim.utts_per_system.to_string());
        put("sim.n_judges", self.sim.n_judges.to_string());
        put("sim.ratings_per_utterance", self.sim.ratings_per_utterance.to_string());
        put("sim.feature_dim", self.sim.feature_dim.to_string());
        put("sim.frame_min", self.sim.frame_range.0.to_string());
        put("sim.frame_max", self.sim.frame_range.1.to_string());
        put("sim.judge_bias_sd", format!("{}", self.sim.judge_bias_sd));
        put("sim.judge_noise_min", format!("{}", self.sim.judge_noise_range.0));
        put("sim.judge_noise_max", format!("{}", self.sim.judge_noise_range.1));
        put("sim.utterance_jitter_sd", format!("{}", self.sim.utterance_jitter_sd));
        put("sim.domain_profile", self.sim.domain_profile_id.to_string());
        put("sim.shifted_profile", self.shifted_profile.to_string());
        put("sim.unlabeled_systems", self.unlabeled_systems.to_string());
        put("dapt.mask_ratio", format!("{}", self.dapt.mask_ratio));
        put("dapt.epochs", self.dapt.epochs.to_string());
        put("dapt.batch_size", self.dapt.batch_size.to_string());
        put("dapt.lr", format!("{}", self.dapt.lr));
        put("model.hidden", self.hidden.to_string());
        put("train.total_steps", self.train.total_steps.to_string());
        put("train.warmup_steps", self.train.warmup_steps.to_string());
        put("train.peak_lr", format!("{}", self.train.peak_lr));
        put("train.batch_size", self.train.batch_size.to_string());
        put("train.validation_every", self.train.validation_every.to_string());
        put("train.loss_weight", format!("{}", self.train.loss_weight));
        put("aug.specs", render_aug_specs(&self.aug_specs));
        put("transfer.few_shot_n", self.transfer.few_shot_n.to_string());
        put("transfer.epochs", self.transfer.epochs.to_string());
        put("transfer.lr", format!("{}", self.transfer.lr));
        put("transfer.batch_size", self.transfer.batch_size.to_string());
        put("ablation.no_dapt", self.ablations.no_dapt.to_string());
        put("ablation.no_aug", self.ablations.no_aug.to_string());
        put("ablation.no_dist_head", self.ablations.no_dist_head.to_string());
        put("ablation.no_reg_head", self.ablations.no_reg_head.to_string());
        put("ablation.linear_heads", self.ablations.linear_heads.to_string());
        put("ablation.no_refine", self.ablations.no_refine.to_string());
        m
    }
}
