//! Result rows and their CSV, JSON, markdown and SVG renderings.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// One evaluated model. Accuracies are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// Grid cell that produced the row.
    pub cell: String,
    /// `natural`, `trades`, `kd`, `ard`, `rslad` or `vic-kd`.
    pub recipe: String,
    /// Teacher training objective, or `none`.
    pub teacher: String,
    pub student: String,
    pub multi_view: bool,
    pub classes: usize,
    pub clean_acc: f64,
    pub robust_fgsm: Option<f64>,
    pub robust_pgd: Option<f64>,
    pub robust_apgd_ce: Option<f64>,
    pub robust_apgd_t: Option<f64>,
    /// Samples robust to every attack of the ensemble.
    pub ensemble_acc: f64,
    /// Test utterances the attacks ran on.
    pub evaluated: usize,
    /// Inference-time parameter count.
    pub params: usize,
    pub epochs: usize,
    pub seed: u64,
}

const COLUMNS: [&str; 16] = [
    "cell",
    "recipe",
    "teacher",
    "student",
    "multi_view",
    "classes",
    "clean_acc",
    "robust_fgsm",
    "robust_pgd",
    "robust_apgd_ce",
    "robust_apgd_t",
    "ensemble_acc",
    "evaluated",
    "params",
    "epochs",
    "seed",
];

/// Display order of recipes in tables and figures.
pub const RECIPE_ORDER: [&str; 6] = ["natural", "trades", "kd", "ard", "rslad", "vic-kd"];

fn recipe_rank(r: &str) -> usize {
    RECIPE_ORDER.iter().position(|&o| o == r).unwrap_or(RECIPE_ORDER.len())
}

impl ReportRow {
    pub fn per_attack(&self) -> impl Iterator<Item = f64> + '_ {
        [self.robust_fgsm, self.robust_pgd, self.robust_apgd_ce, self.robust_apgd_t]
            .into_iter()
            .flatten()
    }

    /// Accuracies lie in [0, 100] and the ensemble never beats a single attack.
    pub fn validate(&self) -> Result<()> {
        let in_range = |v: f64| (0.0..=100.0).contains(&v);
        if !in_range(self.clean_acc) || !in_range(self.ensemble_acc) || !self.per_attack().all(in_range) {
            return Err(Error::Data(format!("{}: accuracy outside [0, 100]", self.cell)));
        }
        if self.per_attack().any(|a| self.ensemble_acc > a) {
            return Err(Error::Data(format!("{}: ensemble accuracy above a single attack", self.cell)));
        }
        Ok(())
    }

    /// Label used to group rows in tables and charts.
    pub fn label(&self) -> String {
        if self.multi_view {
            format!("{}+mv", self.recipe)
        } else {
            self.recipe.clone()
        }
    }

    fn record(&self) -> Vec<String> {
        let f = |v: f64| format!("{v:.4}");
        let o = |v: Option<f64>| v.map(f).unwrap_or_default();
        vec![
            self.cell.clone(),
            self.recipe.clone(),
            self.teacher.clone(),
            self.student.clone(),
            self.multi_view.to_string(),
            self.classes.to_string(),
            f(self.clean_acc),
            o(self.robust_fgsm),
            o(self.robust_pgd),
            o(self.robust_apgd_ce),
            o(self.robust_apgd_t),
            f(self.ensemble_acc),
            self.evaluated.to_string(),
            self.params.to_string(),
            self.epochs.to_string(),
            self.seed.to_string(),
        ]
    }

    fn from_record(r: &csv::StringRecord) -> Result<Self> {
        if r.len() != COLUMNS.len() {
            return Err(Error::Format(format!("expected {} columns, found {}", COLUMNS.len(), r.len())));
        }
        fn num<T: std::str::FromStr>(col: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Format(format!("{col}: cannot parse {v:?}")))
        }
        let opt = |k: usize| -> Result<Option<f64>> {
            match &r[k] {
                "" => Ok(None),
                v => num(COLUMNS[k], v).map(Some),
            }
        };
        Ok(Self {
            cell: r[0].to_string(),
            recipe: r[1].to_string(),
            teacher: r[2].to_string(),
            student: r[3].to_string(),
            multi_view: num(COLUMNS[4], &r[4])?,
            classes: num(COLUMNS[5], &r[5])?,
            clean_acc: num(COLUMNS[6], &r[6])?,
            robust_fgsm: opt(7)?,
            robust_pgd: opt(8)?,
            robust_apgd_ce: opt(9)?,
            robust_apgd_t: opt(10)?,
            ensemble_acc: num(COLUMNS[11], &r[11])?,
            evaluated: num(COLUMNS[12], &r[12])?,
            params: num(COLUMNS[13], &r[13])?,
            epochs: num(COLUMNS[14], &r[14])?,
            seed: num(COLUMNS[15], &r[15])?,
        })
    }
}

/// Header plus one line per row, accuracies with four decimals.
pub fn to_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COLUMNS)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn from_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header = rd.headers()?.clone();
    if header.iter().ne(COLUMNS.iter().copied()) {
        return Err(Error::Format("unexpected report columns".into()));
    }
    rd.records().map(|r| ReportRow::from_record(&r?)).collect()
}

#[derive(Serialize, Deserialize)]
struct JsonReport {
    schema_version: u32,
    rows: Vec<ReportRow>,
}

pub fn to_json(rows: &[ReportRow]) -> Result<String> {
    Ok(serde_json::to_string_pretty(&JsonReport {
        schema_version: SCHEMA_VERSION,
        rows: rows.to_vec(),
    })?)
}

pub fn from_json(text: &str) -> Result<Vec<ReportRow>> {
    let r: JsonReport = serde_json::from_str(text)?;
    if r.schema_version != SCHEMA_VERSION {
        return Err(Error::Format(format!("unsupported report schema {}", r.schema_version)));
    }
    Ok(r.rows)
}

/// Rows sorted by class count, recipe order, teacher, student, view flag
/// and seed.
pub fn sorted(rows: &[ReportRow]) -> Vec<ReportRow> {
    let mut v = rows.to_vec();
    v.sort_by(|a, b| {
        (a.classes, recipe_rank(&a.recipe), &a.recipe, &a.teacher, &a.student, a.multi_view, a.seed).cmp(&(
            b.classes,
            recipe_rank(&b.recipe),
            &b.recipe,
            &b.teacher,
            &b.student,
            b.multi_view,
            b.seed,
        ))
    });
    v
}

/// A markdown table: header, separator, then one line per row grouped by
/// recipe.
pub fn to_markdown(rows: &[ReportRow]) -> String {
    let mut s = String::from(
        "| Recipe | Teacher | Student | MV | Classes | Clean | FGSM | PGD | APGD-CE | APGD-T | Ensemble | Params | Seed |\n",
    );
    s.push_str("|---|---|---|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n");
    let o = |v: Option<f64>| v.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
    for r in sorted(rows) {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {:.2} | {} | {} | {} | {} | {:.2} | {} | {} |",
            r.recipe,
            r.teacher,
            r.student,
            if r.multi_view { "yes" } else { "no" },
            r.classes,
            r.clean_acc,
            o(r.robust_fgsm),
            o(r.robust_pgd),
            o(r.robust_apgd_ce),
            o(r.robust_apgd_t),
            r.ensemble_acc,
            r.params,
            r.seed
        );
    }
    s
}

/// Median of a non-empty slice; the mean of the middle pair for even
/// lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

/// One bar group: a label with clean and robust accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct BarGroup {
    pub label: String,
    pub clean: f64,
    pub robust: f64,
}

/// Median clean and ensemble accuracy per label over the selected rows, in
/// recipe order.
pub fn bar_groups(rows: &[ReportRow], keep: impl Fn(&ReportRow) -> bool) -> Vec<BarGroup> {
    let mut labels: Vec<(usize, String)> = Vec::new();
    for r in rows.iter().filter(|r| keep(r)) {
        let key = (recipe_rank(&r.recipe), r.label());
        if !labels.contains(&key) {
            labels.push(key);
        }
    }
    labels.sort();
    labels
        .into_iter()
        .map(|(_, label)| {
            let sel: Vec<&ReportRow> = rows.iter().filter(|r| keep(r) && r.label() == label).collect();
            let clean: Vec<f64> = sel.iter().map(|r| r.clean_acc).collect();
            let robust: Vec<f64> = sel.iter().map(|r| r.ensemble_acc).collect();
            BarGroup {
                label,
                clean: median(&clean).unwrap_or(0.0),
                robust: median(&robust).unwrap_or(0.0),
            }
        })
        .collect()
}

/// Grouped bar chart, clean next to robust per label, on a 0-100 axis. A
/// dashed rule marks `baseline` when given.
pub fn bar_chart_svg(title: &str, groups: &[BarGroup], baseline: Option<(&str, f64)>) -> String {
    const H: f64 = 260.0;
    const TOP: f64 = 40.0;
    const LEFT: f64 = 50.0;
    const BAR: f64 = 22.0;
    const GAP: f64 = 26.0;
    let width = LEFT + groups.len() as f64 * (2.0 * BAR + GAP) + GAP + 110.0;
    let height = TOP + H + 60.0;
    let y = |acc: f64| TOP + H * (1.0 - acc.clamp(0.0, 100.0) / 100.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{LEFT}" y="20" font-size="14">{}</text>"#, escape(title));
    for tick in (0..=100).step_by(20) {
        let ty = y(tick as f64);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{ty:.1}" x2="{:.1}" y2="{ty:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{tick}</text>"##,
            width - 110.0,
            LEFT - 6.0,
            ty + 4.0
        );
    }
    for (i, g) in groups.iter().enumerate() {
        let x0 = LEFT + GAP + i as f64 * (2.0 * BAR + GAP);
        for (k, (v, color)) in [(g.clean, "#4c78a8"), (g.robust, "#e45756")].into_iter().enumerate() {
            let x = x0 + k as f64 * BAR;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="{BAR}" height="{:.1}" fill="{color}"><title>{:.2}</title></rect>"#,
                y(v),
                TOP + H - y(v),
                v
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x0 + BAR,
            TOP + H + 16.0,
            escape(&g.label)
        );
    }
    if let Some((name, v)) = baseline {
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#333" stroke-dasharray="6 4"/><text x="{:.1}" y="{:.1}">{}</text>"##,
            y(v),
            width - 110.0,
            y(v),
            width - 104.0,
            y(v) + 4.0,
            escape(name)
        );
    }
    let lx = width - 104.0;
    let _ = writeln!(
        s,
        r##"<rect x="{lx:.1}" y="{TOP}" width="10" height="10" fill="#4c78a8"/><text x="{:.1}" y="{:.1}">clean</text>"##,
        lx + 14.0,
        TOP + 9.0
    );
    let _ = writeln!(
        s,
        r##"<rect x="{lx:.1}" y="{:.1}" width="10" height="10" fill="#e45756"/><text x="{:.1}" y="{:.1}">robust</text>"##,
        TOP + 16.0,
        lx + 14.0,
        TOP + 25.0
    );
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Output format of [`write_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Markdown,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "md" | "markdown" => Ok(Format::Markdown),
            _ => Err(Error::Config(format!("unknown report format {s:?}"))),
        }
    }
}

pub fn render(rows: &[ReportRow], format: Format) -> Result<String> {
    match format {
        Format::Csv => to_csv(rows),
        Format::Json => to_json(rows),
        Format::Markdown => Ok(to_markdown(rows)),
    }
}

/// Reads rows from a CSV or JSON report, chosen by extension.
pub fn read_rows(path: &Path) -> Result<Vec<ReportRow>> {
    let text = std::fs::read_to_string(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => from_json(&text),
        _ => from_csv(&text),
    }
}

/// Writes `report.csv`, `report.json`, `report.md` and, when there are rows,
/// `figures/*.svg` under `dir`.
pub fn write_report(rows: &[ReportRow], dir: &Path) -> Result<()> {
    for r in rows {
        r.validate()?;
    }
    std::fs::create_dir_all(dir)?;
    let rows = sorted(rows);
    std::fs::write(dir.join("report.csv"), to_csv(&rows)?)?;
    std::fs::write(dir.join("report.json"), to_json(&rows)?)?;
    std::fs::write(dir.join("report.md"), to_markdown(&rows))?;
    if rows.is_empty() {
        return Ok(());
    }
    let figs = dir.join("figures");
    std::fs::create_dir_all(&figs)?;
    let mut classes: Vec<usize> = rows.iter().map(|r| r.classes).collect();
    classes.dedup();
    for &c in &classes {
        let groups = bar_groups(&rows, |r| r.classes == c);
        let base = median(
            &rows
                .iter()
                .filter(|r| r.classes == c && r.recipe == "trades")
                .map(|r| r.ensemble_acc)
                .collect::<Vec<_>>(),
        );
        let svg = bar_chart_svg(
            &format!("{c} classes: clean vs robust accuracy"),
            &groups,
            base.map(|b| ("trades", b)),
        );
        std::fs::write(figs.join(format!("recipes_{c}.svg")), svg)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_rows_give_header_only_csv() {
        let csv = to_csv(&[]).unwrap();
        assert_eq!(csv.lines().count(), 1);
        assert!(from_csv(&csv).unwrap().is_empty());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
