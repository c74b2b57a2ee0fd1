//! Checkpoints with a JSON sidecar describing how to rebuild the model.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::eval::Evaluation;
use super::report::ReportRow;
use crate::attacks::AttackFamily;
use crate::error::{Error, Result};
use crate::models::{load_checkpoint, save_checkpoint, Student, StudentConfig, Teacher, TeacherConfig};

/// Architecture of a stored model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Student(StudentConfig),
    Teacher(TeacherConfig),
}

/// Everything a report row needs besides the evaluation itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub architecture: Architecture,
    pub recipe: String,
    pub teacher: String,
    pub student: String,
    pub multi_view: bool,
    pub epochs: usize,
    pub seed: u64,
}

pub fn meta_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("json")
}

fn write_meta(ckpt: &Path, meta: &ModelMeta) -> Result<()> {
    std::fs::write(meta_path(ckpt), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

pub fn read_meta(ckpt: &Path) -> Result<ModelMeta> {
    let p = meta_path(ckpt);
    let text = std::fs::read_to_string(&p)
        .map_err(|e| Error::Format(format!("{}: missing model description ({e})", p.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

pub fn save_student(path: &Path, student: &Student, meta: &ModelMeta) -> Result<()> {
    ensure_parent(path)?;
    save_checkpoint(student.params(), path)?;
    write_meta(path, meta)
}

pub fn save_teacher(path: &Path, teacher: &Teacher, meta: &ModelMeta) -> Result<()> {
    ensure_parent(path)?;
    save_checkpoint(teacher.params(), path)?;
    write_meta(path, meta)
}

pub fn load_student(path: &Path) -> Result<(Student, ModelMeta)> {
    let meta = read_meta(path)?;
    match &meta.architecture {
        Architecture::Student(c) => Ok((Student::from_params(c.clone(), load_checkpoint(path)?)?, meta)),
        Architecture::Teacher(_) => Err(Error::Model(format!("{} holds a teacher", path.display()))),
    }
}

pub fn load_teacher(path: &Path) -> Result<(Teacher, ModelMeta)> {
    let meta = read_meta(path)?;
    match &meta.architecture {
        Architecture::Teacher(c) => Ok((Teacher::from_params(c.clone(), load_checkpoint(path)?)?, meta)),
        Architecture::Student(_) => Err(Error::Model(format!("{} holds a student", path.display()))),
    }
}

/// Metadata for a student trained under `cfg`. `recipe` is the recipe or
/// baseline objective name.
pub fn student_meta(
    cfg: &ExperimentConfig,
    student: &Student,
    recipe: &str,
    teacher: &str,
    multi_view: bool,
    epochs: usize,
) -> ModelMeta {
    ModelMeta {
        architecture: Architecture::Student(student.config().clone()),
        recipe: recipe.to_string(),
        teacher: teacher.to_string(),
        student: cfg.student.name().to_string(),
        multi_view,
        epochs,
        seed: cfg.seed,
    }
}

pub fn teacher_meta(cfg: &ExperimentConfig, teacher: &Teacher) -> ModelMeta {
    ModelMeta {
        architecture: Architecture::Teacher(teacher.config().clone()),
        recipe: cfg.teacher_objective.name().to_string(),
        teacher: "none".into(),
        student: "teacher".into(),
        multi_view: false,
        epochs: cfg.teacher.epochs,
        seed: cfg.seed,
    }
}

/// Combines model metadata with an evaluation.
pub fn report_row(cell: &str, meta: &ModelMeta, classes: usize, params: usize, e: &Evaluation) -> ReportRow {
    ReportRow {
        cell: cell.to_string(),
        recipe: meta.recipe.clone(),
        teacher: meta.teacher.clone(),
        student: meta.student.clone(),
        multi_view: meta.multi_view,
        classes,
        clean_acc: e.clean_acc,
        robust_fgsm: e.robust(AttackFamily::Fgsm),
        robust_pgd: e.robust(AttackFamily::Pgd),
        robust_apgd_ce: e.robust(AttackFamily::ApgdCe),
        robust_apgd_t: e.robust(AttackFamily::ApgdT),
        ensemble_acc: e.ensemble_acc(),
        evaluated: e.evaluated(),
        params,
        epochs: meta.epochs,
        seed: meta.seed,
    }
}
