//! The experiment grid: seeds × class counts × teacher objectives × cells.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::artifacts::{report_row, save_student, save_teacher, student_meta, teacher_meta};
use super::config::{ExperimentConfig, Objective};
use super::eval::evaluate;
use super::report::{write_report, ReportRow};
use super::train::{distill, finetune_teacher, load_splits, train_baseline, Splits, TrainLog};
use crate::data::derive_seed;
use crate::error::{config_err, Result};
use crate::losses::Recipe;
use crate::models::{Student, Teacher};

/// One trained-and-evaluated model of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    /// Student trained alone.
    Baseline(Objective),
    /// Student trained under a recipe, with or without two views.
    Distill { recipe: Recipe, multi_view: bool },
}

impl Cell {
    /// `natural`, `trades`, or the recipe name with a `+mv` suffix when
    /// views are on.
    pub fn name(&self) -> String {
        match self {
            Cell::Baseline(o) => o.name().to_string(),
            Cell::Distill { recipe, multi_view } => {
                format!("{}{}", recipe.name(), if *multi_view { "+mv" } else { "" })
            }
        }
    }

    pub fn needs_teacher(&self) -> bool {
        matches!(self, Cell::Distill { recipe, .. } if recipe.uses_teacher())
    }
}

impl std::str::FromStr for Cell {
    type Err = crate::Error;

    /// `natural` and `trades` name the baselines; a recipe name with an
    /// optional `+mv` suffix names a distillation cell.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "natural" => return Ok(Cell::Baseline(Objective::Natural)),
            "trades" => return Ok(Cell::Baseline(Objective::Trades)),
            _ => {}
        }
        let (name, multi_view) = match s.strip_suffix("+mv") {
            Some(n) => (n, true),
            None => (s, false),
        };
        Ok(Cell::Distill {
            recipe: name.parse()?,
            multi_view,
        })
    }
}

/// Cells run at one class count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteGroup {
    pub classes: usize,
    /// Utterances per class; the base config's count when `None`.
    #[serde(default)]
    pub per_class: Option<usize>,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    /// Settings shared by every cell; class count, seeds and recipe are
    /// overwritten per cell.
    pub base: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub groups: Vec<SuiteGroup>,
    /// Teacher objectives; every teacher-dependent cell runs once per entry.
    pub teachers: Vec<Objective>,
    /// Write checkpoints and training logs under `base.out_dir`.
    pub save_artifacts: bool,
}

impl SuiteConfig {
    /// The recipe table, the view ablation and the class-count repeat.
    pub fn standard(base: ExperimentConfig, seeds: Vec<u64>) -> Self {
        let parse = |list: &str| list.split(',').map(|c| c.parse().expect("valid cell")).collect();
        Self {
            base,
            seeds,
            groups: vec![
                SuiteGroup {
                    classes: 12,
                    per_class: None,
                    cells: parse("natural,trades,kd,ard,rslad,vic-kd+mv,ard+mv,rslad+mv,vic-kd"),
                },
                SuiteGroup {
                    classes: 35,
                    per_class: None,
                    cells: parse("ard,rslad,vic-kd"),
                },
            ],
            teachers: vec![Objective::Natural],
            save_artifacts: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() || self.groups.is_empty() || self.teachers.is_empty() {
            return Err(config_err("suite needs seeds, groups and teachers"));
        }
        self.base.validate()
    }
}

/// Identifier of a cell inside the suite; also the name its seed derives
/// from.
pub fn cell_id(classes: usize, teacher: Option<Objective>, cell: &Cell) -> String {
    let t = teacher.map_or("none", Objective::name);
    format!("c{classes}/{t}/{}", cell.name())
}

/// Per-seed progress callback payload.
#[derive(Debug, Clone)]
pub struct CellDone<'a> {
    pub row: &'a ReportRow,
    pub log: &'a TrainLog,
}

/// Runs every cell and writes the consolidated reports under
/// `base.out_dir`. Cells of one seed and class count share the dataset and
/// the teacher; every model is seeded from `(seed, cell id)` alone.
pub fn run_suite(suite: &SuiteConfig, mut on_cell: impl FnMut(CellDone<'_>)) -> Result<Vec<ReportRow>> {
    suite.validate()?;
    let out = suite.base.out_dir.clone();
    let mut rows = Vec::new();
    for &seed in &suite.seeds {
        for group in &suite.groups {
            let mut cfg = suite.base.clone();
            cfg.data.synth.classes = group.classes;
            if let Some(n) = group.per_class {
                cfg.data.synth.per_class = n;
            }
            cfg.data.synth.seed = derive_seed(seed, "data");
            let splits = load_splits(&cfg.data)?;
            let needs_teacher = group.cells.iter().any(Cell::needs_teacher);
            for (ti, &objective) in suite.teachers.iter().enumerate() {
                let teacher = if needs_teacher {
                    Some(train_teacher(suite, &cfg, &splits, seed, group.classes, objective, &out)?)
                } else {
                    None
                };
                for cell in &group.cells {
                    let teacher_axis = cell.needs_teacher().then_some(objective);
                    // Teacher-free cells run once, with the first objective.
                    if teacher_axis.is_none() && ti > 0 {
                        continue;
                    }
                    let id = cell_id(group.classes, teacher_axis, cell);
                    let mut c = cfg.clone();
                    c.seed = derive_seed(seed, &id);
                    c.teacher_objective = objective;
                    let (student, log, meta) = run_cell(&c, cell, teacher.as_ref(), teacher_axis, &splits)?;
                    let e = evaluate(&student, &splits.test, &c.eval, c.seed)?;
                    let cell_name = format!("s{seed}/{id}");
                    let mut row = report_row(&cell_name, &meta, group.classes, student.inference_param_count(), &e);
                    row.seed = seed;
                    row.validate()?;
                    if suite.save_artifacts {
                        let base = artifact_base(&out, seed, &id);
                        save_student(&base.with_extension("ckpt"), &student, &meta)?;
                        log.write_csv(base.with_extension("log.csv"))?;
                    }
                    on_cell(CellDone { row: &row, log: &log });
                    rows.push(row);
                }
            }
        }
    }
    write_report(&rows, &out)?;
    Ok(rows)
}

fn artifact_base(out: &Path, seed: u64, id: &str) -> PathBuf {
    out.join(format!("seed{seed}")).join(id.replace(['/', '+'], "_"))
}

fn train_teacher(
    suite: &SuiteConfig,
    cfg: &ExperimentConfig,
    splits: &Splits,
    seed: u64,
    classes: usize,
    objective: Objective,
    out: &Path,
) -> Result<Teacher> {
    let start = Instant::now();
    let id = format!("c{classes}/teacher-{}", objective.name());
    let mut c = cfg.clone();
    c.seed = derive_seed(seed, &id);
    c.teacher_objective = objective;
    let (teacher, log) = finetune_teacher(&c, splits)?;
    log::info!("seed {seed} {id}: {:.1}s", start.elapsed().as_secs_f64());
    if suite.save_artifacts {
        let base = artifact_base(out, seed, &id);
        save_teacher(&base.with_extension("ckpt"), &teacher, &teacher_meta(&c, &teacher))?;
        log.write_csv(base.with_extension("log.csv"))?;
    }
    Ok(teacher)
}

/// Trains one cell's student.
pub fn run_cell(
    cfg: &ExperimentConfig,
    cell: &Cell,
    teacher: Option<&Teacher>,
    teacher_axis: Option<Objective>,
    splits: &Splits,
) -> Result<(Student, TrainLog, super::artifacts::ModelMeta)> {
    let mut c = cfg.clone();
    let teacher_name = teacher_axis.map_or("none", Objective::name);
    match *cell {
        Cell::Baseline(objective) => {
            c.baseline_objective = objective;
            let (s, log) = train_baseline(&c, splits)?;
            let meta = student_meta(&c, &s, objective.name(), "none", false, c.baseline.epochs);
            Ok((s, log, meta))
        }
        Cell::Distill { recipe, multi_view } => {
            c.recipe.recipe = recipe;
            c.recipe.multi_view = multi_view;
            let (s, log) = distill(&c, teacher, splits)?;
            let meta = student_meta(&c, &s, recipe.name(), teacher_name, multi_view, c.distill.epochs);
            Ok((s, log, meta))
        }
    }
}
