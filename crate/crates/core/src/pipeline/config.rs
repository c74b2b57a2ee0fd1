//! Experiment configuration: defaults, flat `key=value` / JSON files,
//! command-line overrides and the `VICKD_SEED` environment override.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackFamily, AttackSpec, EPSILON};
use crate::augment::{AugmentConfig, TransformKind};
use crate::data::{LabelScheme, Profile, SplitSpec, SynthConfig};
use crate::error::{config_err, Result};
use crate::losses::{Recipe, RecipeConfig};
use crate::models::StudentPreset;

pub const SEED_ENV: &str = "VICKD_SEED";

/// Epochs, batch size and the linear learning-rate decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
}

impl OptimConfig {
    pub fn validate(&self, what: &str) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config_err(format!("{what}: batch size must be positive")));
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0) {
            return Err(config_err(format!("{what}: learning rates must be positive")));
        }
        Ok(())
    }
}

/// How the (robust or standard) teacher and the baselines are trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Plain cross-entropy.
    Natural,
    /// TRADES with the inner KL attack.
    Trades,
}

impl std::str::FromStr for Objective {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "natural" | "ce" => Ok(Objective::Natural),
            "trades" | "robust" => Ok(Objective::Trades),
            _ => Err(config_err(format!("unknown objective {s:?}"))),
        }
    }
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Natural => "natural",
            Objective::Trades => "trades",
        }
    }
}

/// Where utterances come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub synth: SynthConfig,
    /// Speech Commands style directory; overrides the generator when set.
    pub wav_dir: Option<PathBuf>,
    pub scheme: LabelScheme,
    /// Pre-built dataset cache; overrides both of the above when set.
    pub cache: Option<PathBuf>,
    pub split: SplitSpec,
}

/// Evaluation ensemble budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub attacks: Vec<AttackSpec>,
    pub batch_size: usize,
    /// Robust evaluation uses at most this many test utterances.
    pub limit: Option<usize>,
}

fn enabled() -> bool {
    true
}

impl EvalConfig {
    pub fn epsilon(&self) -> f64 {
        self.attacks.first().map_or(EPSILON, |a| a.epsilon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub student: StudentPreset,
    pub teacher_objective: Objective,
    /// Fine-tune the teacher on single augmented views so that its outputs
    /// stay meaningful on the views it sees during multi-view distillation.
    #[serde(default = "enabled")]
    pub teacher_augment: bool,
    /// Objective of `train-baseline`.
    pub baseline_objective: Objective,
    pub recipe: RecipeConfig,
    pub augment: AugmentConfig,
    pub baseline: OptimConfig,
    pub teacher: OptimConfig,
    pub distill: OptimConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            data: DataConfig {
                synth: SynthConfig::new(12, 100, 0, Profile::Desk),
                wav_dir: None,
                scheme: LabelScheme::V12,
                cache: None,
                split: SplitSpec::default(),
            },
            student: StudentPreset::TcresnetMini,
            teacher_objective: Objective::Natural,
            teacher_augment: true,
            baseline_objective: Objective::Natural,
            recipe: RecipeConfig::new(Recipe::VicKd),
            augment: AugmentConfig::default(),
            baseline: OptimConfig {
                epochs: 40,
                batch_size: 32,
                lr_start: 1e-3,
                lr_end: 1e-4,
            },
            teacher: OptimConfig {
                epochs: 10,
                batch_size: 32,
                lr_start: 5e-4,
                lr_end: 5e-5,
            },
            distill: OptimConfig {
                epochs: 60,
                batch_size: 32,
                lr_start: 1e-3,
                lr_end: 1e-4,
            },
            eval: EvalConfig {
                attacks: AttackSpec::ensemble(EPSILON),
                batch_size: 64,
                limit: None,
            },
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| config_err(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(config_err(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

fn parse_opt_f64(key: &str, value: &str) -> Result<Option<f64>> {
    match value.trim() {
        "" | "default" | "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

impl ExperimentConfig {
    /// The paper-length schedule: 100 baseline epochs, 250 distillation
    /// epochs and 1 s utterances at 16 kHz.
    pub fn paper_scale(mut self) -> Self {
        self.baseline.epochs = 100;
        self.teacher.epochs = 10;
        self.distill.epochs = 250;
        self.data.synth.profile = Profile::Full;
        self
    }

    /// Applies one dotted configuration key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = key.trim();
        let r = &mut self.recipe;
        match k {
            "seed" => self.seed = parse(k, value)?,
            "out_dir" | "output" => self.out_dir = PathBuf::from(value.trim()),
            "profile" => self.data.synth.profile = parse(k, value)?,
            "classes" | "data.classes" => self.data.synth.classes = parse(k, value)?,
            "per_class" | "data.per_class" => self.data.synth.per_class = parse(k, value)?,
            "data.seed" => self.data.synth.seed = parse(k, value)?,
            "data.grid_bins" => self.data.synth.grid_bins = parse(k, value)?,
            "data.band_low" => self.data.synth.band.0 = parse(k, value)?,
            "data.band_high" => self.data.synth.band.1 = parse(k, value)?,
            "data.jitter" => self.data.synth.jitter = parse(k, value)?,
            "data.distractors" => self.data.synth.distractors = parse(k, value)?,
            "data.amplitude_min" => self.data.synth.amplitude.0 = parse(k, value)?,
            "data.amplitude_max" => self.data.synth.amplitude.1 = parse(k, value)?,
            "data.noise_floor_db" => self.data.synth.noise_floor_db = parse(k, value)?,
            "data.wav_dir" => self.data.wav_dir = Some(PathBuf::from(value.trim())),
            "data.scheme" => self.data.scheme = parse(k, value)?,
            "data.cache" => self.data.cache = Some(PathBuf::from(value.trim())),
            "split.train" => self.data.split.train = parse(k, value)?,
            "split.valid" => self.data.split.valid = parse(k, value)?,
            "split.test" => self.data.split.test = parse(k, value)?,
            "student" => self.student = parse(k, value)?,
            "teacher.objective" => self.teacher_objective = parse(k, value)?,
            "teacher.augment" => self.teacher_augment = parse_bool(k, value)?,
            "baseline.objective" => self.baseline_objective = parse(k, value)?,
            "recipe" => {
                let recipe: Recipe = parse(k, value)?;
                r.recipe = recipe;
            }
            "alpha" => r.alpha = parse(k, value)?,
            "beta" => r.beta = parse(k, value)?,
            "kd.temperature" => r.kd_temperature = parse_opt_f64(k, value)?,
            "kd.weight" => r.kd_weight = parse_opt_f64(k, value)?,
            "vicreg.var" => r.vicreg.lambda_var = parse(k, value)?,
            "vicreg.inv" => r.vicreg.lambda_inv = parse(k, value)?,
            "vicreg.cov" => r.vicreg.lambda_cov = parse(k, value)?,
            "vicreg.gamma" => r.vicreg.gamma = parse(k, value)?,
            "vicreg.eps" => r.vicreg.eps = parse(k, value)?,
            "multi_view" => r.multi_view = parse_bool(k, value)?,
            "attack.family" => r.inner.family = parse::<AttackFamily>(k, value)?,
            "attack.eps" => r.inner.epsilon = parse(k, value)?,
            "attack.step" => r.inner.step_size = parse(k, value)?,
            "attack.steps" => r.inner.steps = parse(k, value)?,
            "attack.restarts" => r.inner.restarts = parse(k, value)?,
            "augment.kinds" => {
                self.augment.enabled = value
                    .split(',')
                    .map(|s| serde_json::from_value(serde_json::Value::String(s.trim().to_string())))
                    .collect::<std::result::Result<Vec<TransformKind>, _>>()
                    .map_err(|_| config_err(format!("{k}: bad transform list {value:?}")))?;
            }
            "eval.eps" => {
                let eps: f64 = parse(k, value)?;
                self.eval.attacks.iter_mut().for_each(|a| a.epsilon = eps);
            }
            "eval.attacks" => {
                let eps = self.eval.epsilon();
                self.eval.attacks = value
                    .split(',')
                    .map(|s| {
                        parse::<AttackFamily>(k, s).map(|f| match f {
                            AttackFamily::Fgsm => AttackSpec::fgsm(eps),
                            AttackFamily::Pgd => AttackSpec::pgd_eval(eps),
                            AttackFamily::ApgdCe => AttackSpec::apgd_ce(eps),
                            AttackFamily::ApgdT => AttackSpec::apgd_t(eps),
                        })
                    })
                    .collect::<Result<_>>()?;
            }
            "eval.apgd_steps" => self.set_eval_steps(AttackFamily::ApgdCe, parse(k, value)?),
            "eval.apgd_t_steps" => self.set_eval_steps(AttackFamily::ApgdT, parse(k, value)?),
            "eval.pgd_steps" => self.set_eval_steps(AttackFamily::Pgd, parse(k, value)?),
            "eval.pgd_restarts" => {
                let n: usize = parse(k, value)?;
                self.eval
                    .attacks
                    .iter_mut()
                    .filter(|a| a.family == AttackFamily::Pgd)
                    .for_each(|a| a.restarts = n);
            }
            "eval.targets" => {
                let n: usize = parse(k, value)?;
                self.eval
                    .attacks
                    .iter_mut()
                    .filter(|a| a.family == AttackFamily::ApgdT)
                    .for_each(|a| a.targeted_classes = n);
            }
            "eval.limit" => {
                self.eval.limit = match value.trim() {
                    "" | "none" | "all" => None,
                    v => Some(parse(k, v)?),
                }
            }
            "eval.batch_size" => self.eval.batch_size = parse(k, value)?,
            _ => return self.set_optim(k, value),
        }
        Ok(())
    }

    fn set_eval_steps(&mut self, family: AttackFamily, steps: usize) {
        for a in self.eval.attacks.iter_mut().filter(|a| a.family == family) {
            a.steps = steps;
            if family == AttackFamily::Pgd {
                a.step_size = a.epsilon / 4.0;
            }
        }
    }

    fn set_optim(&mut self, k: &str, value: &str) -> Result<()> {
        let (section, field) = k
            .split_once('.')
            .ok_or_else(|| config_err(format!("unknown key {k:?}")))?;
        let o = match section {
            "baseline" | "train" => &mut self.baseline,
            "teacher" => &mut self.teacher,
            "distill" => &mut self.distill,
            _ => return Err(config_err(format!("unknown key {k:?}"))),
        };
        match field {
            "epochs" => o.epochs = parse(k, value)?,
            "batch_size" => o.batch_size = parse(k, value)?,
            "lr_start" => o.lr_start = parse(k, value)?,
            "lr_end" => o.lr_end = parse(k, value)?,
            _ => return Err(config_err(format!("unknown key {k:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected key=value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Applies a JSON object; nested objects flatten to dotted keys.
    pub fn apply_json(&mut self, text: &str) -> Result<()> {
        fn walk(cfg: &mut ExperimentConfig, prefix: &str, v: &serde_json::Value) -> Result<()> {
            match v {
                serde_json::Value::Object(map) => {
                    for (k, v) in map {
                        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                        walk(cfg, &key, v)?;
                    }
                    Ok(())
                }
                serde_json::Value::String(s) => cfg.set(prefix, s),
                serde_json::Value::Array(items) => {
                    let joined: Vec<String> = items
                        .iter()
                        .map(|i| i.as_str().map(String::from).unwrap_or_else(|| i.to_string()))
                        .collect();
                    cfg.set(prefix, &joined.join(","))
                }
                serde_json::Value::Null => cfg.set(prefix, "none"),
                other => cfg.set(prefix, &other.to_string()),
            }
        }
        let v: serde_json::Value = serde_json::from_str(text)?;
        if !v.is_object() {
            return Err(config_err("JSON config must be an object"));
        }
        walk(self, "", &v)
    }

    /// Reads a config file: JSON when it starts with `{`, otherwise
    /// `key=value` lines.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        if text.trim_start().starts_with('{') {
            self.apply_json(&text)
        } else {
            self.apply_text(&text)
        }
    }

    /// Applies `VICKD_SEED` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = parse(SEED_ENV, &v)?;
        }
        Ok(())
    }

    /// Defaults, then the file, then `--set` overrides, then the seed
    /// environment variable.
    pub fn load(file: Option<&Path>, overrides: &[String], paper_scale: bool) -> Result<Self> {
        let mut cfg = Self::default();
        if paper_scale {
            cfg = cfg.paper_scale();
        }
        if let Some(f) = file {
            cfg.apply_file(f)?;
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| config_err(format!("override {o:?} is not key=value")))?;
            cfg.set(k, v)?;
        }
        cfg.apply_env()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.recipe.validate()?;
        self.augment.validate()?;
        self.data.split.validate()?;
        if self.data.wav_dir.is_none() && self.data.cache.is_none() {
            self.data.synth.validate()?;
        }
        self.baseline.validate("baseline")?;
        self.teacher.validate("teacher")?;
        self.distill.validate("distill")?;
        let eps = self.eval.epsilon();
        for a in &self.eval.attacks {
            a.validate()?;
            if a.epsilon != eps {
                return Err(config_err("evaluation attacks must share epsilon"));
            }
        }
        Ok(())
    }
}
