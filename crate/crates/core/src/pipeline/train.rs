//! Training loops: baselines, the teacher and every distillation recipe.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vickd_tensor::{Adam, Graph, LinearDecay, NodeId, ParamStore};

use super::config::{DataConfig, ExperimentConfig, Objective, OptimConfig};
use crate::attacks::{self, Objective as AttackObjective};
use crate::augment::{apply, sample_view_pair};
use crate::data::{self, derive_seed, Dataset};
use crate::error::{config_err, Error, Result};
use crate::losses::{self, Recipe, RecipeConfig};
use crate::models::{Classifier, Mode, Student, StudentConfig, Teacher, TeacherConfig};

/// Train, validation and test partitions of one dataset.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn sample_rate(&self) -> u32 {
        self.train.sample_rate
    }

    pub fn length(&self) -> usize {
        self.train.length
    }

    pub fn num_classes(&self) -> usize {
        self.train.num_classes()
    }
}

/// Cache, then WAV directory, then the synthetic generator.
pub fn load_data(cfg: &DataConfig) -> Result<Dataset> {
    let data = if let Some(cache) = &cfg.cache {
        data::load_dataset(cache)?
    } else if let Some(dir) = &cfg.wav_dir {
        data::load_wav_dir(dir, cfg.scheme)?
    } else {
        data::synth_dataset(&cfg.synth)?
    };
    data.validate()?;
    Ok(data)
}

pub fn load_splits(cfg: &DataConfig) -> Result<Splits> {
    let full = load_data(cfg)?;
    let (train, valid, test) = data::split(&full, &cfg.split)?;
    if train.len() < 2 || test.is_empty() {
        return Err(Error::Data(format!(
            "split left {} training and {} test utterances",
            train.len(),
            test.len()
        )));
    }
    Ok(Splits { train, valid, test })
}

/// Per-epoch training statistics. VIC-KD epochs also carry the mean of each
/// loss term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    /// Training accuracy of the logits the loss sees first, percent.
    pub accuracy: f64,
    pub trades: Option<f64>,
    pub var: Option<f64>,
    pub inv: Option<f64>,
    pub cov: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub stage: String,
    pub epochs: Vec<EpochLog>,
    pub seconds: f64,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "lr", "loss", "accuracy", "trades", "var", "inv", "cov"])?;
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                format!("{:.6e}", e.lr),
                format!("{:.6}", e.loss),
                format!("{:.3}", e.accuracy),
                opt(e.trades),
                opt(e.var),
                opt(e.inv),
                opt(e.cov),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Default)]
struct Meter {
    batches: usize,
    seen: usize,
    correct: usize,
    loss: f64,
    terms: Option<[f64; 4]>,
}

impl Meter {
    fn finish(self, epoch: usize, lr: f64) -> EpochLog {
        let n = self.batches.max(1) as f64;
        let term = |k: usize| self.terms.map(|t| t[k] / n);
        EpochLog {
            epoch,
            lr,
            loss: self.loss / n,
            accuracy: 100.0 * self.correct as f64 / self.seen.max(1) as f64,
            trades: term(0),
            var: term(1),
            inv: term(2),
            cov: term(3),
        }
    }
}

/// Shuffled minibatches. A trailing batch of one is dropped because the
/// variance terms need two samples.
fn batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(2))
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    let bs = batch_size.max(2);
    n / bs + usize::from(n % bs >= 2)
}

fn correct(g: &Graph<f32>, logits: NodeId, labels: &[usize]) -> usize {
    let c = g.shape(logits)[1];
    g.value(logits)
        .chunks(c)
        .zip(labels)
        .filter(|(row, &y)| {
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (i, v)| if *v > row[b] { i } else { b });
            best == y
        })
        .count()
}

/// Backward pass plus one Adam update.
fn update(g: &Graph<f32>, loss: NodeId, params: &mut ParamStore<f32>, adam: &mut Adam<f32>, lr: f64) -> Result<f64> {
    let value = g.item(loss) as f64;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss became {value}")));
    }
    let grads = g.backward(loss)?;
    params.zero_grads();
    grads.accumulate(params)?;
    adam.step(params, lr)?;
    Ok(value)
}

/// Natural or TRADES loss of any classifier on one batch. Returns the loss
/// and the clean logits.
fn supervised_loss<M: Classifier<f32>>(
    model: &M,
    g: &mut Graph<f32>,
    x: &[f32],
    y: &[usize],
    len: usize,
    objective: Objective,
    recipe: &RecipeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(NodeId, NodeId)> {
    let b = y.len();
    match objective {
        Objective::Natural => {
            let xi = g.constant(&[b, len], x.to_vec())?;
            let logits = model.logits(g, xi)?;
            Ok((losses::cross_entropy(g, logits, y)?, logits))
        }
        Objective::Trades => {
            let reference = attacks::logits_of(model, x, len)?;
            let adv = attacks::pgd(model, x, len, &recipe.inner, &AttackObjective::Kl(reference), rng)?.x_adv;
            let xi = g.constant(&[b, len], x.to_vec())?;
            let xa = g.constant(&[b, len], adv)?;
            let clean = model.logits(g, xi)?;
            let adv = model.logits(g, xa)?;
            Ok((losses::trades_loss(g, clean, adv, y, recipe.beta)?, clean))
        }
    }
}

fn schedule(o: &OptimConfig, n: usize) -> LinearDecay {
    LinearDecay::new(o.lr_start, o.lr_end, (o.epochs * steps_per_epoch(n, o.batch_size)) as u64)
}

pub fn student_config(cfg: &ExperimentConfig, splits: &Splits, projection: Option<usize>) -> StudentConfig {
    let c = StudentConfig::preset(cfg.student, splits.sample_rate(), splits.length(), splits.num_classes());
    match projection {
        Some(d) => c.with_projection(d),
        None => c,
    }
}

pub fn teacher_config(splits: &Splits) -> TeacherConfig {
    TeacherConfig::for_input(splits.sample_rate(), splits.length(), splits.num_classes())
}

/// Trains a student from scratch with plain cross-entropy or TRADES.
pub fn train_baseline(cfg: &ExperimentConfig, splits: &Splits) -> Result<(Student, TrainLog)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "baseline"));
    let mut student = Student::new(student_config(cfg, splits, None), &mut rng)?;
    let stage = format!("baseline-{}", cfg.baseline_objective.name());
    let log = fit_supervised(
        &mut student,
        |m| m.params_mut(),
        cfg,
        &cfg.baseline,
        cfg.baseline_objective,
        &splits.train,
        false,
        &stage,
        &mut rng,
    )?;
    Ok((student, log))
}

/// Trains the teacher and its classification head. The teacher starts from
/// random weights; this stage stands in for fine-tuning a pretrained
/// encoder.
pub fn finetune_teacher(cfg: &ExperimentConfig, splits: &Splits) -> Result<(Teacher, TrainLog)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "teacher"));
    let mut teacher = Teacher::new(teacher_config(splits), &mut rng)?;
    let stage = format!("teacher-{}", cfg.teacher_objective.name());
    let log = fit_supervised(
        &mut teacher,
        |m| m.params_mut(),
        cfg,
        &cfg.teacher,
        cfg.teacher_objective,
        &splits.train,
        cfg.teacher_augment,
        &stage,
        &mut rng,
    )?;
    Ok((teacher, log))
}

#[allow(clippy::too_many_arguments)]
fn fit_supervised<M: Classifier<f32>>(
    model: &mut M,
    params: impl Fn(&mut M) -> &mut ParamStore<f32>,
    cfg: &ExperimentConfig,
    optim: &OptimConfig,
    objective: Objective,
    train: &Dataset,
    augment: bool,
    stage: &str,
    rng: &mut ChaCha8Rng,
) -> Result<TrainLog> {
    optim.validate(stage)?;
    let start = Instant::now();
    let len = train.length;
    let sched = schedule(optim, train.len());
    let mut adam = Adam::default();
    let mut epochs = Vec::with_capacity(optim.epochs);
    let mut step = 0u64;
    for epoch in 0..optim.epochs {
        let mut m = Meter::default();
        let lr = sched.lr(step);
        for idx in batches(train.len(), optim.batch_size, rng) {
            let (mut x, y) = train.gather(&idx);
            if augment {
                x = augmented(&x, train, cfg, rng)?;
            }
            let mut g = Graph::new();
            let (loss, logits) = supervised_loss(&*model, &mut g, &x, &y, len, objective, &cfg.recipe, rng)?;
            m.correct += correct(&g, logits, &y);
            m.seen += y.len();
            m.loss += update(&g, loss, params(model), &mut adam, sched.lr(step))?;
            m.batches += 1;
            step += 1;
        }
        let e = m.finish(epoch + 1, lr);
        log::info!("{stage} epoch {} loss {:.4} acc {:.1}", e.epoch, e.loss, e.accuracy);
        epochs.push(e);
    }
    Ok(TrainLog {
        stage: stage.to_string(),
        epochs,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Each utterance passed through one transform drawn uniformly from the
/// enabled kinds.
fn augmented(x: &[f32], train: &Dataset, cfg: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Result<Vec<f32>> {
    let kinds = &cfg.augment.enabled;
    if kinds.is_empty() {
        return Err(config_err("teacher augmentation needs at least one transform"));
    }
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(train.length) {
        let kind = kinds[rng.random_range(0..kinds.len())];
        out.extend(apply(kind, row, train.sample_rate, &cfg.augment, rng));
    }
    Ok(out)
}

/// Teacher logits and representations, flattened `[n, C]` and `[n, d_t]`.
pub fn teacher_outputs(teacher: &Teacher, x: &[f32], len: usize, chunk: usize) -> Result<(Vec<f32>, Vec<f32>)> {
    let mut logits = Vec::new();
    let mut reps = Vec::new();
    for part in x.chunks(chunk.max(1) * len) {
        let mut g = Graph::without_param_grads();
        let xi = g.constant(&[part.len() / len, len], part.to_vec())?;
        let out = teacher.forward(&mut g, xi)?;
        logits.extend_from_slice(g.value(out.logits));
        reps.extend_from_slice(g.value(out.representation));
    }
    Ok((logits, reps))
}

fn rows(flat: &[f32], width: usize, idx: &[usize]) -> Vec<f32> {
    idx.iter().flat_map(|&i| flat[i * width..(i + 1) * width].iter().copied()).collect()
}

/// Distils a fresh student under `cfg.recipe`. The student gets a
/// projection head sized to the teacher's representation for VIC-KD; the
/// teacher must predict the same classes.
pub fn distill(cfg: &ExperimentConfig, teacher: Option<&Teacher>, splits: &Splits) -> Result<(Student, TrainLog)> {
    let rc = &cfg.recipe;
    rc.validate()?;
    cfg.distill.validate("distill")?;
    let recipe = rc.recipe;
    let teacher = match (recipe.uses_teacher(), teacher) {
        (true, None) => return Err(config_err(format!("{recipe} needs a teacher checkpoint"))),
        (true, Some(t)) => Some(t),
        (false, _) => None,
    };
    if let Some(t) = teacher {
        let tc = t.config();
        if tc.num_classes != splits.num_classes() {
            return Err(Error::Model(format!(
                "teacher predicts {} classes, data has {}",
                tc.num_classes,
                splits.num_classes()
            )));
        }
        if tc.input_len != splits.length() {
            return Err(Error::Model(format!(
                "teacher expects {} samples, data has {}",
                tc.input_len,
                splits.length()
            )));
        }
    }
    let projection = match (recipe, teacher) {
        (Recipe::VicKd, Some(t)) => Some(t.config().dim),
        _ => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "distill"));
    let mut student = Student::new(student_config(cfg, splits, projection), &mut rng)?;
    let start = Instant::now();
    let train = &splits.train;
    let (len, sr, classes) = (train.length, train.sample_rate, train.num_classes());
    let multi_view = rc.multi_view;
    // Without views the teacher always sees the clean utterance.
    let cached = match teacher {
        Some(t) if !multi_view => Some(teacher_outputs(t, &train.all().0, len, 64)?),
        _ => None,
    };
    let d_t = teacher.map_or(0, |t| t.config().dim);
    let optim = &cfg.distill;
    let sched = schedule(optim, train.len());
    let mut adam = Adam::default();
    let mut epochs = Vec::with_capacity(optim.epochs);
    let mut step = 0u64;
    let stage = format!("distill-{}{}", recipe.name(), if multi_view { "-mv" } else { "" });
    for epoch in 0..optim.epochs {
        let mut m = Meter::default();
        let lr = sched.lr(step);
        for idx in batches(train.len(), optim.batch_size, &mut rng) {
            let (x, y) = train.gather(&idx);
            let b = y.len();
            let (x_t, x_s) = if multi_view {
                let mut vt = Vec::with_capacity(x.len());
                let mut vs = Vec::with_capacity(x.len());
                for row in x.chunks(len) {
                    let pair = sample_view_pair(row, sr, &cfg.augment, &mut rng)?;
                    vt.extend_from_slice(&pair.view_t);
                    vs.extend_from_slice(&pair.view_t_prime);
                }
                (vt, vs)
            } else {
                (x.clone(), x)
            };
            let (t_logits, t_rep) = match (&cached, teacher) {
                (Some((l, r)), _) => (rows(l, classes, &idx), rows(r, d_t, &idx)),
                (None, Some(t)) => teacher_outputs(t, &x_t, len, b)?,
                (None, None) => (Vec::new(), Vec::new()),
            };
            let mut g = Graph::new();
            let xs = g.constant(&[b, len], x_s.clone())?;
            let (loss, seen_logits) = match recipe {
                Recipe::Kd => {
                    let s = student.logits(&mut g, xs)?;
                    let t = g.constant(&[b, classes], t_logits)?;
                    (losses::kd_loss(&mut g, s, t, &y, rc.weight(), rc.temperature())?, s)
                }
                Recipe::Ard => {
                    let obj = AttackObjective::CrossEntropy(y.clone());
                    let adv = attacks::pgd(&student, &x_s, len, &rc.inner, &obj, &mut rng)?.x_adv;
                    let xa = g.constant(&[b, len], adv)?;
                    let s_adv = student.logits(&mut g, xa)?;
                    let t = g.constant(&[b, classes], t_logits)?;
                    (losses::ard_loss(&mut g, s_adv, t, &y, rc.weight(), rc.temperature())?, s_adv)
                }
                Recipe::Rslad => {
                    let obj = AttackObjective::Kl(t_logits.clone());
                    let adv = attacks::pgd(&student, &x_s, len, &rc.inner, &obj, &mut rng)?.x_adv;
                    let xa = g.constant(&[b, len], adv)?;
                    let s = student.logits(&mut g, xs)?;
                    let s_adv = student.logits(&mut g, xa)?;
                    let t = g.constant(&[b, classes], t_logits)?;
                    (losses::rslad_loss(&mut g, s, s_adv, t, rc.weight())?, s)
                }
                Recipe::Trades => {
                    let reference = attacks::logits_of(&student, &x_s, len)?;
                    let obj = AttackObjective::Kl(reference);
                    let adv = attacks::pgd(&student, &x_s, len, &rc.inner, &obj, &mut rng)?.x_adv;
                    let xa = g.constant(&[b, len], adv)?;
                    let s = student.logits(&mut g, xs)?;
                    let s_adv = student.logits(&mut g, xa)?;
                    (losses::trades_loss(&mut g, s, s_adv, &y, rc.beta)?, s)
                }
                Recipe::VicKd => {
                    let reference = attacks::logits_of(&student, &x_s, len)?;
                    let obj = AttackObjective::Kl(reference);
                    let adv = attacks::pgd(&student, &x_s, len, &rc.inner, &obj, &mut rng)?.x_adv;
                    let xa = g.constant(&[b, len], adv)?;
                    let s = student.logits(&mut g, xs)?;
                    let out = student.forward(&mut g, xa, Mode::Train)?;
                    let zp = out
                        .projection
                        .ok_or_else(|| Error::Model("student lacks a projection head".into()))?;
                    let z = g.constant(&[b, d_t], t_rep)?;
                    let terms =
                        losses::vic_kd_loss(&mut g, s, out.logits, z, zp, &y, rc.alpha, rc.beta, &rc.vicreg)?;
                    let t = m.terms.get_or_insert([0.0; 4]);
                    t[0] += g.item(terms.trades) as f64;
                    t[1] += g.item(terms.vicreg.var) as f64;
                    t[2] += g.item(terms.vicreg.inv) as f64;
                    t[3] += g.item(terms.vicreg.cov) as f64;
                    (terms.total, s)
                }
            };
            m.correct += correct(&g, seen_logits, &y);
            m.seen += b;
            m.loss += update(&g, loss, student.params_mut(), &mut adam, sched.lr(step))?;
            m.batches += 1;
            step += 1;
        }
        let e = m.finish(epoch + 1, lr);
        match (e.trades, e.var, e.inv, e.cov) {
            (Some(t), Some(v), Some(i), Some(c)) => log::info!(
                "{stage} epoch {} loss {:.4} acc {:.1} trades {t:.4} var {v:.4} inv {i:.4} cov {c:.4}",
                e.epoch,
                e.loss,
                e.accuracy
            ),
            _ => log::info!("{stage} epoch {} loss {:.4} acc {:.1}", e.epoch, e.loss, e.accuracy),
        }
        epochs.push(e);
    }
    Ok((
        student,
        TrainLog {
            stage,
            epochs,
            seconds: start.elapsed().as_secs_f64(),
        },
    ))
}

