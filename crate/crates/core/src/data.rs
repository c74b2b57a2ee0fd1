//! Datasets: a synthetic keyword generator, a WAV-directory loader for the
//! Speech Commands layout, hash-based splits and a binary cache.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vickd_tensor::{ParamStore, Tensor};

use crate::error::{config_err, Error, Result};
use crate::models::{decode_checkpoint, encode_checkpoint};

/// One utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub id: String,
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub label: usize,
}

/// Fixed-length labelled utterances.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub sample_rate: u32,
    pub length: usize,
    pub items: Vec<Waveform>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes()];
        for w in &self.items {
            h[w.label] += 1;
        }
        h
    }

    /// Samples flattened `[n, length]` and labels of the selected items.
    pub fn gather(&self, idx: &[usize]) -> (Vec<f32>, Vec<usize>) {
        let mut x = Vec::with_capacity(idx.len() * self.length);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            x.extend_from_slice(&self.items[i].samples);
            y.push(self.items[i].label);
        }
        (x, y)
    }

    /// Every item, flattened.
    pub fn all(&self) -> (Vec<f32>, Vec<usize>) {
        self.gather(&(0..self.len()).collect::<Vec<_>>())
    }

    fn subset(&self, keep: impl Fn(&Waveform) -> bool) -> Dataset {
        Dataset {
            class_names: self.class_names.clone(),
            sample_rate: self.sample_rate,
            length: self.length,
            items: self.items.iter().filter(|w| keep(w)).cloned().collect(),
        }
    }

    /// Checks the length, range and label invariants.
    pub fn validate(&self) -> Result<()> {
        for w in &self.items {
            if w.samples.len() != self.length {
                return Err(Error::Data(format!("{}: length {} != {}", w.id, w.samples.len(), self.length)));
            }
            if w.samples.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(Error::Data(format!("{}: samples outside [-1, 1]", w.id)));
            }
            if w.label >= self.num_classes() {
                return Err(Error::Data(format!("{}: label {} out of range", w.id, w.label)));
            }
        }
        Ok(())
    }
}

/// First 8 bytes of SHA-256 over the parts, separated by NUL.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
        h.update([0u8]);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// A seed for a named sub-stream of `base`.
pub fn derive_seed(base: u64, name: &str) -> u64 {
    stable_hash(&[&base.to_le_bytes(), name.as_bytes()])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelScheme {
    V12,
    V35,
}

pub const V12_COMMANDS: [&str; 10] = ["yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go"];
pub const UNKNOWN: &str = "unknown";
pub const SILENCE: &str = "silence";
pub const BACKGROUND_DIR: &str = "_background_noise_";

/// The 35 words of the full command set.
pub const V35_WORDS: [&str; 35] = [
    "backward", "bed", "bird", "cat", "dog", "down", "eight", "five", "follow", "forward", "four", "go", "happy",
    "house", "learn", "left", "marvin", "nine", "no", "off", "on", "one", "right", "seven", "sheila", "six", "stop",
    "three", "tree", "two", "up", "visual", "wow", "yes", "zero",
];

impl LabelScheme {
    pub fn class_names(self) -> Vec<String> {
        match self {
            LabelScheme::V12 => V12_COMMANDS
                .iter()
                .copied()
                .chain([UNKNOWN, SILENCE])
                .map(String::from)
                .collect(),
            LabelScheme::V35 => V35_WORDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl std::str::FromStr for LabelScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v12" | "12" => Ok(LabelScheme::V12),
            "v35" | "35" => Ok(LabelScheme::V35),
            _ => Err(config_err(format!("unknown label scheme {s:?}"))),
        }
    }
}

/// Train/valid/test fractions; assignment hashes the utterance id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Valid,
    Test,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|v| !(*v >= 0.0)) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(config_err("split fractions must be non-negative and sum to 1"));
        }
        Ok(())
    }

    pub fn assign(&self, id: &str) -> Part {
        let u = stable_hash(&[b"split", id.as_bytes()]) as f64 / 2f64.powi(64);
        if u < self.train {
            Part::Train
        } else if u < self.train + self.valid {
            Part::Valid
        } else {
            Part::Test
        }
    }
}

/// Partitions `data` into (train, valid, test).
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    Ok((
        data.subset(|w| spec.assign(&w.id) == Part::Train),
        data.subset(|w| spec.assign(&w.id) == Part::Valid),
        data.subset(|w| spec.assign(&w.id) == Part::Test),
    ))
}

/// Signal sizes for synthetic and loaded data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 0.5 s at 4 kHz.
    Desk,
    /// 1 s at 16 kHz.
    Full,
}

impl Profile {
    pub fn sample_rate(self) -> u32 {
        match self {
            Profile::Desk => 4000,
            Profile::Full => 16000,
        }
    }

    pub fn length(self) -> usize {
        match self {
            Profile::Desk => 2000,
            Profile::Full => 16000,
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            _ => Err(config_err(format!("unknown profile {s:?}"))),
        }
    }
}

/// Synthetic keyword generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub seed: u64,
    pub profile: Profile,
    /// Peak amplitude range of a keyword before the noise floor.
    pub amplitude: (f64, f64),
    /// Frequency band of the tone grid, Hz.
    pub band: (f64, f64),
    pub grid_bins: usize,
    /// Relative per-utterance frequency jitter.
    pub jitter: f64,
    pub noise_floor_db: f64,
    /// Extra tone classes that feed the `unknown` label.
    pub distractors: usize,
}

impl SynthConfig {
    pub fn new(classes: usize, per_class: usize, seed: u64, profile: Profile) -> Self {
        Self {
            classes,
            per_class,
            seed,
            profile,
            amplitude: (0.015, 0.15),
            band: (100.0, 1800.0),
            grid_bins: 14,
            jitter: 0.05,
            noise_floor_db: 30.0,
            distractors: 8,
        }
    }

    /// Twelve classes follow the command/unknown/silence layout; any other
    /// count makes every class a keyword.
    pub fn uses_v12_layout(&self) -> bool {
        self.classes == 12
    }

    pub fn class_names(&self) -> Vec<String> {
        if self.uses_v12_layout() {
            LabelScheme::V12.class_names()
        } else if self.classes == 35 {
            LabelScheme::V35.class_names()
        } else {
            (0..self.classes).map(|k| format!("word{k:02}")).collect()
        }
    }

    /// Log-spaced tone grid.
    pub fn grid(&self) -> Vec<f64> {
        let (lo, hi) = self.band;
        let n = self.grid_bins;
        (0..n)
            .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(config_err("synthetic data needs at least 2 classes"));
        }
        if self.uses_v12_layout() && self.distractors == 0 {
            return Err(config_err("the unknown class needs at least one distractor"));
        }
        if self.grid_bins < 3 {
            return Err(config_err("tone grid needs at least 3 bins"));
        }
        let (a, b) = self.amplitude;
        if !(0.0 < a && a <= b && b <= 1.0) {
            return Err(config_err("amplitude range must satisfy 0 < lo <= hi <= 1"));
        }
        let nyquist = self.profile.sample_rate() as f64 / 2.0;
        if !(0.0 < self.band.0 && self.band.0 < self.band.1 && self.band.1 * (1.0 + self.jitter) < nyquist) {
            return Err(config_err("tone band must lie below Nyquist"));
        }
        let needed = self.classes + self.distractors;
        let available = self.grid_bins * (self.grid_bins - 1) * (self.grid_bins - 2) / 6;
        if needed > available {
            return Err(config_err(format!("{needed} tone classes exceed {available} distinct triples")));
        }
        Ok(())
    }

    /// Distinct grid-index triples: keyword classes first, then distractors.
    /// Any two share at most one bin while such a triple can still be found
    /// by random search, then at most two. No triple is a one-bin
    /// transposition of another, so a sped-up keyword stays nearest its own
    /// class. They depend only on the seed.
    pub fn templates(&self) -> Vec<[usize; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "templates"));
        let n = self.grid_bins;
        let mut out: Vec<[usize; 3]> = Vec::new();
        let mut misses = 0usize;
        while out.len() < self.classes + self.distractors {
            let mut t = [rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n)];
            t.sort_unstable();
            if t[0] == t[1] || t[1] == t[2] {
                continue;
            }
            let limit = if misses < 20_000 { 1 } else { 2 };
            let shared = |u: &[usize; 3]| t.iter().filter(|v| u.contains(v)).count();
            // A one-bin transposition is what speed perturbation produces.
            let shifted = |u: &[usize; 3]| (0..3).all(|i| u[i] + 1 == t[i]) || (0..3).all(|i| t[i] + 1 == u[i]);
            let strict = misses < 40_000;
            if out.iter().all(|u| shared(u) <= limit && !(strict && shifted(u))) {
                out.push(t);
                misses = 0;
            } else {
                misses += 1;
            }
        }
        out
    }
}

/// Attack-decay envelope: silent until onset, linear attack, exponential
/// decay.
fn envelope(len: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dur = len as f64 / sr;
    let onset = rng.random_range(0.0..0.3) * dur;
    let attack = rng.random_range(0.02..0.1);
    let decay = rng.random_range(0.15..0.5) * dur;
    (0..len)
        .map(|i| {
            let t = i as f64 / sr - onset;
            if t < 0.0 {
                0.0
            } else if t < attack {
                t / attack
            } else {
                (-(t - attack) / decay).exp()
            }
        })
        .collect()
}

fn add_floor(x: &mut [f64], snr_db: f64, rng: &mut ChaCha8Rng) {
    let p = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let std = (p / 10f64.powf(snr_db / 10.0)).sqrt();
    for v in x.iter_mut() {
        let n: f64 = StandardNormal.sample(rng);
        *v += std * n;
    }
}

fn finish(x: Vec<f64>) -> Vec<f32> {
    x.into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect()
}

fn tone_utterance(cfg: &SynthConfig, freqs: [f64; 3], rng: &mut ChaCha8Rng) -> Vec<f32> {
    let sr = cfg.profile.sample_rate() as f64;
    let len = cfg.profile.length();
    let env = envelope(len, sr, rng);
    let amp = rng.random_range(cfg.amplitude.0..=cfg.amplitude.1);
    let partials: Vec<(f64, f64, f64)> = freqs
        .iter()
        .map(|&f| {
            let f = f * (1.0 + rng.random_range(-cfg.jitter..=cfg.jitter));
            (f, rng.random_range(0.5..1.0), rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let norm: f64 = partials.iter().map(|p| p.1).sum();
    let mut x: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 / sr;
            let s: f64 = partials
                .iter()
                .map(|&(f, a, ph)| a * (std::f64::consts::TAU * f * t + ph).sin())
                .sum();
            amp * env[i] * s / norm
        })
        .collect();
    add_floor(&mut x, cfg.noise_floor_db, rng);
    finish(x)
}

fn silence_utterance(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let sr = cfg.profile.sample_rate() as f64;
    let len = cfg.profile.length();
    let env = envelope(len, sr, rng);
    let amp = 0.3 * rng.random_range(cfg.amplitude.0..=cfg.amplitude.1);
    let x = (0..len)
        .map(|i| {
            let n: f64 = StandardNormal.sample(rng);
            amp * env[i] * n
        })
        .collect();
    finish(x)
}

/// Generates `per_class` utterances for each class. Identical configs give
/// bit-identical datasets.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let grid = cfg.grid();
    let templates = cfg.templates();
    let freqs = |t: [usize; 3]| [grid[t[0]], grid[t[1]], grid[t[2]]];
    let names = cfg.class_names();
    let v12 = cfg.uses_v12_layout();
    let mut items = Vec::with_capacity(cfg.classes * cfg.per_class);
    for (label, name) in names.iter().enumerate() {
        for i in 0..cfg.per_class {
            let id = format!("synth/{name}/{i:05}");
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &id));
            let samples = if v12 && name == SILENCE {
                silence_utterance(cfg, &mut rng)
            } else if v12 && name == UNKNOWN {
                let d = rng.random_range(0..cfg.distractors);
                tone_utterance(cfg, freqs(templates[cfg.classes + d]), &mut rng)
            } else {
                tone_utterance(cfg, freqs(templates[label]), &mut rng)
            };
            items.push(Waveform {
                id,
                samples,
                sample_rate: cfg.profile.sample_rate(),
                label,
            });
        }
    }
    Ok(Dataset {
        class_names: names,
        sample_rate: cfg.profile.sample_rate(),
        length: cfg.profile.length(),
        items,
    })
}

/// Decodes a mono 16-bit PCM RIFF file to floats in `[-1, 1)`.
pub fn decode_wav(bytes: &[u8]) -> Result<(Vec<f32>, u32)> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(|e| Error::Wav(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Wav(format!("{} channels, expected mono", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Wav(format!(
            "unsupported encoding: {} bit {:?}",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Wav(e.to_string()))?;
    Ok((samples, spec.sample_rate))
}

/// Encodes floats as mono 16-bit PCM, rounding to the nearest step and
/// saturating at the ends of the range.
pub fn encode_wav(samples: &[f32], sample_rate: u32) -> Result<Vec<u8>> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut buf = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut buf, spec).map_err(|e| Error::Wav(e.to_string()))?;
        for &s in samples {
            let v = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            w.write_sample(v).map_err(|e| Error::Wav(e.to_string()))?;
        }
        w.finalize().map_err(|e| Error::Wav(e.to_string()))?;
    }
    Ok(buf.into_inner())
}

/// Zero-pads or trims to `len`.
pub fn fit_length(mut x: Vec<f32>, len: usize) -> Vec<f32> {
    x.resize(len, 0.0);
    x
}

/// Reads one file, requiring its sample rate to match earlier files.
fn read_same_rate(path: &Path, rate: &mut Option<u32>) -> Result<Vec<f32>> {
    let (x, sr) = decode_wav(&std::fs::read(path)?).map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    match *rate {
        None => *rate = Some(sr),
        Some(r) if r != sr => {
            return Err(Error::Wav(format!("{}: sample rate {sr} differs from {r}", path.display())));
        }
        _ => {}
    }
    Ok(x)
}

fn wav_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads `<root>/<command>/<file>.wav`. Every file must share one sample
/// rate; utterances are padded or trimmed to one second.
pub fn load_wav_dir(root: impl AsRef<Path>, scheme: LabelScheme) -> Result<Dataset> {
    let root = root.as_ref();
    let mut dirs: BTreeMap<String, Vec<std::path::PathBuf>> = BTreeMap::new();
    for entry in std::fs::read_dir(root)? {
        let path = entry?.path();
        if path.is_dir() {
            let name = path.file_name().unwrap().to_string_lossy().to_string();
            dirs.insert(name, wav_files(&path)?);
        }
    }
    let mut rate: Option<u32> = None;
    let rel = |path: &Path| path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/");

    let class_names: Vec<String>;
    let mut raw: Vec<(String, Vec<f32>, usize)> = Vec::new();
    match scheme {
        LabelScheme::V35 => {
            class_names = dirs.keys().filter(|k| *k != BACKGROUND_DIR).cloned().collect();
            for (label, name) in class_names.iter().enumerate() {
                for f in &dirs[name] {
                    raw.push((rel(f), read_same_rate(f, &mut rate)?, label));
                }
            }
        }
        LabelScheme::V12 => {
            class_names = scheme.class_names();
            let mut counts = Vec::new();
            for (label, cmd) in V12_COMMANDS.iter().enumerate() {
                let files = dirs.get(*cmd).cloned().unwrap_or_default();
                counts.push(files.len());
                for f in &files {
                    raw.push((rel(f), read_same_rate(f, &mut rate)?, label));
                }
            }
            let target = counts.iter().sum::<usize>() / counts.len();
            // Uniform subsample of the other words, ordered by id hash.
            let mut pool: Vec<_> = dirs
                .iter()
                .filter(|(k, _)| !V12_COMMANDS.contains(&k.as_str()) && *k != BACKGROUND_DIR)
                .flat_map(|(_, fs)| fs.iter().cloned())
                .collect();
            pool.sort_by_key(|p| stable_hash(&[b"unknown", rel(p).as_bytes()]));
            for f in pool.into_iter().take(target) {
                raw.push((rel(&f), read_same_rate(&f, &mut rate)?, 10));
            }
            // One-second windows of background noise.
            let mut windows = 0;
            for f in dirs.get(BACKGROUND_DIR).cloned().unwrap_or_default() {
                let x = read_same_rate(&f, &mut rate)?;
                let sr = rate.unwrap_or(16000) as usize;
                for (w, chunk) in x.chunks_exact(sr).enumerate() {
                    if windows >= target {
                        break;
                    }
                    raw.push((format!("{}#{w}", rel(&f)), chunk.to_vec(), 11));
                    windows += 1;
                }
            }
        }
    }
    let sample_rate = rate.ok_or_else(|| Error::Data(format!("no wav files under {}", root.display())))?;
    let length = sample_rate as usize;
    let items: Vec<Waveform> = raw
        .into_iter()
        .map(|(id, x, label)| Waveform {
            id,
            samples: fit_length(x, length),
            sample_rate,
            label,
        })
        .collect();
    let data = Dataset {
        class_names,
        sample_rate,
        length,
        items,
    };
    if let Some(k) = data.label_histogram().iter().position(|&c| c == 0) {
        return Err(Error::Data(format!("class {:?} is empty", data.class_names[k])));
    }
    Ok(data)
}

#[derive(Serialize, Deserialize)]
struct CacheMeta {
    class_names: Vec<String>,
    ids: Vec<String>,
    sample_rate: u32,
}

/// Serialises a dataset in the checkpoint tensor format: `samples [N, L]`,
/// `labels [N]` and a `meta` tensor carrying UTF-8 JSON bytes.
pub fn encode_dataset(data: &Dataset) -> Result<Vec<u8>> {
    let n = data.len();
    if n == 0 {
        return Err(Error::Data("cannot cache an empty dataset".into()));
    }
    let meta = serde_json::to_vec(&CacheMeta {
        class_names: data.class_names.clone(),
        ids: data.items.iter().map(|w| w.id.clone()).collect(),
        sample_rate: data.sample_rate,
    })?;
    let mut store = ParamStore::<f32>::new();
    let (x, y) = data.all();
    store.add("samples", Tensor::new(&[n, data.length], x)?)?;
    store.add("labels", Tensor::new(&[n], y.into_iter().map(|v| v as f32).collect())?)?;
    store.add("meta", Tensor::new(&[meta.len()], meta.into_iter().map(f32::from).collect())?)?;
    Ok(encode_checkpoint(&store))
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let store = decode_checkpoint::<f32>(bytes)?;
    let get = |name: &str| store.get(name).ok_or_else(|| Error::Format(format!("dataset cache lacks {name:?}")));
    let (samples, labels, meta) = (get("samples")?, get("labels")?, get("meta")?);
    let meta: Vec<u8> = meta.data().iter().map(|&v| v as u8).collect();
    let meta: CacheMeta = serde_json::from_slice(&meta)?;
    let [n, length] = samples.shape() else {
        return Err(Error::Format("samples must be 2-D".into()));
    };
    if labels.numel() != *n || meta.ids.len() != *n {
        return Err(Error::Format("dataset cache counts disagree".into()));
    }
    let items = samples
        .data()
        .chunks(*length)
        .zip(labels.data())
        .zip(meta.ids)
        .map(|((x, &y), id)| Waveform {
            id,
            samples: x.to_vec(),
            sample_rate: meta.sample_rate,
            label: y as usize,
        })
        .collect();
    let data = Dataset {
        class_names: meta.class_names,
        sample_rate: meta.sample_rate,
        length: *length,
        items,
    };
    data.validate()?;
    Ok(data)
}

pub fn save_dataset(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    if let Some(dir) = path.as_ref().parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, encode_dataset(data)?)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&std::fs::read(path)?)
}
