use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use vickd::data::{save_dataset, synth_dataset};
use vickd::pipeline::{
    distill, evaluate, finetune_teacher, load_data, load_splits, load_student, load_teacher, read_meta, read_rows,
    render, report_row, run_suite, save_student, save_teacher, student_meta, teacher_meta, train_baseline,
    write_report, Architecture, Cell, ExperimentConfig, Format, Objective, SuiteConfig, SuiteGroup, TrainLog,
};

#[derive(Parser)]
#[command(name = "vickd", version, about = "Robust distillation for keyword spotting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// key=value text file or JSON file with experiment settings.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one setting; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Use the long epoch schedules and the full-size data profile.
    #[arg(long)]
    paper_scale: bool,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::load(self.config.as_deref(), &self.set, self.paper_scale).context("loading configuration")
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and write it as a dataset cache.
    SynthData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train a student without a teacher (objective from `baseline.objective`).
    TrainBaseline {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint path; defaults to <out_dir>/baseline.ckpt.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Train the teacher with its classification head.
    FinetuneTeacher {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Train a student under the configured recipe.
    Distill {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Teacher checkpoint; required by every recipe but TRADES.
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Measure clean and adversarial accuracy of a checkpoint.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        ckpt: PathBuf,
        /// Output format for the resulting row.
        #[arg(long, default_value = "markdown")]
        format: Format,
        /// Also append the row to this CSV/JSON report.
        #[arg(long)]
        append: Option<PathBuf>,
    },
    /// Re-render report rows (CSV or JSON) in another format.
    Report {
        /// report.csv or report.json.
        input: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: Format,
        /// Write report.{csv,json,md} and figures into this directory
        /// instead of printing.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the experiment grid and write consolidated reports.
    RunSuite {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Suite seeds.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        /// `classes[xPER_CLASS]:cell,cell,...`; repeatable. Defaults to the
        /// recipe table, the view ablation and the 35-class repeat.
        #[arg(long = "group", value_name = "CLASSES:CELLS")]
        groups: Vec<String>,
        /// Teacher objectives to sweep.
        #[arg(long, value_delimiter = ',', default_value = "natural")]
        teachers: Vec<Objective>,
        /// Skip writing checkpoints and training logs.
        #[arg(long)]
        no_artifacts: bool,
    },
}

fn parse_group(text: &str) -> Result<SuiteGroup> {
    let (classes, cells) = text.split_once(':').context("group must look like classes:cell,cell")?;
    let cells = cells.split(',').map(str::parse::<Cell>).collect::<Result<Vec<_>, _>>()?;
    if cells.is_empty() {
        bail!("group {text} has no cells");
    }
    let (classes, per_class) = match classes.split_once('x') {
        Some((c, n)) => (c, Some(n.trim().parse().context("utterances per class")?)),
        None => (classes, None),
    };
    Ok(SuiteGroup {
        classes: classes.trim().parse().context("class count")?,
        per_class,
        cells,
    })
}

fn default_path(cfg: &ExperimentConfig, given: Option<PathBuf>, name: &str) -> PathBuf {
    given.unwrap_or_else(|| cfg.out_dir.join(name))
}

fn finish(log: &TrainLog, ckpt: &Path) -> Result<()> {
    log.write_csv(ckpt.with_extension("log.csv"))?;
    println!(
        "{}: {} epochs in {:.1}s, final loss {:.4}; wrote {}",
        log.stage,
        log.epochs.len(),
        log.seconds,
        log.final_loss().unwrap_or(f64::NAN),
        ckpt.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::SynthData { cfg, out } => {
            let cfg = cfg.load()?;
            let data = synth_dataset(&cfg.data.synth)?;
            save_dataset(&data, &out)?;
            println!("{} clips, {} classes -> {}", data.len(), data.num_classes(), out.display());
        }
        Command::TrainBaseline { cfg, out } => {
            let cfg = cfg.load()?;
            let splits = load_splits(&cfg.data)?;
            let (student, log) = train_baseline(&cfg, &splits)?;
            let path = default_path(&cfg, out, "baseline.ckpt");
            let objective = cfg.baseline_objective.name();
            let meta = student_meta(&cfg, &student, objective, "none", false, cfg.baseline.epochs);
            save_student(&path, &student, &meta)?;
            finish(&log, &path)?;
        }
        Command::FinetuneTeacher { cfg, out } => {
            let cfg = cfg.load()?;
            let splits = load_splits(&cfg.data)?;
            let (teacher, log) = finetune_teacher(&cfg, &splits)?;
            let path = default_path(&cfg, out, "teacher.ckpt");
            save_teacher(&path, &teacher, &teacher_meta(&cfg, &teacher))?;
            finish(&log, &path)?;
        }
        Command::Distill { cfg, teacher, out } => {
            let cfg = cfg.load()?;
            let splits = load_splits(&cfg.data)?;
            let (teacher, teacher_name) = match teacher {
                Some(p) => {
                    let (t, meta) = load_teacher(&p)?;
                    (Some(t), meta.recipe)
                }
                None => (None, "none".to_string()),
            };
            let (student, log) = distill(&cfg, teacher.as_ref(), &splits)?;
            let recipe = cfg.recipe.recipe;
            let path = default_path(&cfg, out, &format!("{}.ckpt", recipe.name()));
            let meta = student_meta(&cfg, &student, recipe.name(), &teacher_name, cfg.recipe.multi_view, cfg.distill.epochs);
            save_student(&path, &student, &meta)?;
            finish(&log, &path)?;
        }
        Command::Evaluate {
            cfg,
            ckpt,
            format,
            append,
        } => {
            let cfg = cfg.load()?;
            let test = load_splits(&cfg.data)?.test;
            let start = Instant::now();
            let cell = ckpt.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            let row = match read_meta(&ckpt)?.architecture {
                Architecture::Student(_) => {
                    let (m, meta) = load_student(&ckpt)?;
                    let e = evaluate(&m, &test, &cfg.eval, cfg.seed)?;
                    report_row(&cell, &meta, test.num_classes(), m.inference_param_count(), &e)
                }
                Architecture::Teacher(_) => {
                    let (m, meta) = load_teacher(&ckpt)?;
                    let e = evaluate(&m, &test, &cfg.eval, cfg.seed)?;
                    report_row(&cell, &meta, test.num_classes(), m.params().num_params(), &e)
                }
            };
            row.validate()?;
            log::info!("evaluated in {:.1}s", start.elapsed().as_secs_f64());
            print!("{}", render(std::slice::from_ref(&row), format)?);
            if let Some(path) = append {
                let mut rows = if path.exists() { read_rows(&path)? } else { Vec::new() };
                rows.push(row);
                let fmt = if path.extension().is_some_and(|e| e == "json") { Format::Json } else { Format::Csv };
                std::fs::write(&path, render(&rows, fmt)?)?;
            }
        }
        Command::Report { input, format, out_dir } => {
            let rows = read_rows(&input)?;
            match out_dir {
                Some(dir) => {
                    write_report(&rows, &dir)?;
                    println!("{} rows -> {}", rows.len(), dir.display());
                }
                None => print!("{}", render(&rows, format)?),
            }
        }
        Command::RunSuite {
            cfg,
            seeds,
            groups,
            teachers,
            no_artifacts,
        } => {
            let base = cfg.load()?;
            // Fail on an unreadable data source before the grid starts.
            load_data(&base.data)?;
            let mut suite = SuiteConfig::standard(base, seeds);
            if !groups.is_empty() {
                suite.groups = groups.iter().map(|g| parse_group(g)).collect::<Result<_>>()?;
            }
            suite.teachers = teachers;
            suite.save_artifacts = !no_artifacts;
            let start = Instant::now();
            let rows = run_suite(&suite, |done| {
                let r = done.row;
                log::info!(
                    "{}: clean {:.1} robust {:.1} ({:.0}s train)",
                    r.cell,
                    r.clean_acc,
                    r.ensemble_acc,
                    done.log.seconds
                );
            })?;
            println!(
                "{} cells in {:.1}s; reports in {}",
                rows.len(),
                start.elapsed().as_secs_f64(),
                suite.base.out_dir.display()
            );
        }
    }
    Ok(())
}
