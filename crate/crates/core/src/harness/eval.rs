use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bootstrap::{bootstrap_ci, mean, BOOTSTRAP_METHOD};
use super::score::{OutcomeRecord, ScoreRecord, OUTCOMES_FILE, SCORES_FILE};
use super::{ensure_dir, read_jsonl, write_json, write_text, HarnessError, RunConfig, RunManifest};
use crate::model::TaskType;
use crate::trainkit::derive_seed;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    #[default]
    Task,
    Source,
}

impl std::str::FromStr for Grouping {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "task" => Ok(Grouping::Task),
            "source" => Ok(Grouping::Source),
            other => Err(HarnessError::UnknownGrouping(other.to_string())),
        }
    }
}

impl std::fmt::Display for Grouping {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Grouping::Task => "task",
            Grouping::Source => "source",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub resamples: usize,
    pub level: f64,
    pub grouping: Grouping,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            resamples: 1000,
            level: 0.95,
            grouping: Grouping::Task,
        }
    }
}

/// A mean with its bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub group: String,
    pub n_scored: usize,
    pub n_outcomes: usize,
    pub r_f: Option<Cell>,
    pub r_c: Option<Cell>,
    pub r_e: Option<Cell>,
    pub radrscore: Option<Cell>,
    pub accuracy: Option<Cell>,
}

/// Unweighted mean over group means, for each metric present in at least
/// one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroRow {
    pub groups: usize,
    pub r_f: Option<f64>,
    pub r_c: Option<f64>,
    pub r_e: Option<f64>,
    pub radrscore: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInfo {
    pub method: String,
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub grouping: Grouping,
    pub rows: Vec<EvalRow>,
    /// Mean over all samples.
    pub overall: EvalRow,
    /// Mean over groups.
    pub overall_macro: MacroRow,
    pub bootstrap: BootstrapInfo,
    pub config_hash: String,
    pub seed: u64,
}

const METRICS: usize = 5;

struct Bucket {
    metrics: [Vec<f64>; METRICS],
}

impl Bucket {
    fn new() -> Self {
        Self {
            metrics: Default::default(),
        }
    }

    fn push_score(&mut self, s: &ScoreRecord) {
        for (m, v) in self.metrics.iter_mut().zip([s.r_f, s.r_c, s.r_e, s.radrscore]) {
            m.push(v);
        }
    }

    fn row(&self, group: String, cfg: &EvalConfig, seed: u64, row: u64) -> Result<EvalRow, HarnessError> {
        let mut cells = [None; METRICS];
        for (k, values) in self.metrics.iter().enumerate() {
            if values.is_empty() {
                continue;
            }
            let (ci_low, ci_high) = bootstrap_ci(values, cfg.resamples, cfg.level, derive_seed(seed, row, k as u64))?;
            cells[k] = Some(Cell {
                mean: mean(values.iter().copied()),
                ci_low,
                ci_high,
            });
        }
        let [r_f, r_c, r_e, radrscore, accuracy] = cells;
        Ok(EvalRow {
            group,
            n_scored: self.metrics[0].len(),
            n_outcomes: self.metrics[4].len(),
            r_f,
            r_c,
            r_e,
            radrscore,
            accuracy,
        })
    }
}

fn group_key(grouping: Grouping, task: TaskType, source: &str, id: &str) -> Result<String, HarnessError> {
    match grouping {
        Grouping::Task => Ok(task.as_str().to_string()),
        Grouping::Source if source.trim().is_empty() => {
            Err(HarnessError::Config(format!("record {id} has no source to group by")))
        }
        Grouping::Source => Ok(source.to_string()),
    }
}

/// Per-group and overall means with percentile bootstrap intervals.
/// Accuracy is the mean outcome reward. Cell `k` of row `r` resamples with
/// seed `derive_seed(seed, r, k)`; the overall row uses `r = rows.len()`.
pub fn cmd_eval(
    scores: &[ScoreRecord],
    outcomes: &[OutcomeRecord],
    cfg: &EvalConfig,
    seed: u64,
    config_hash: &str,
) -> Result<EvalReport, HarnessError> {
    if scores.is_empty() && outcomes.is_empty() {
        return Err(HarnessError::Empty("evaluation input".into()));
    }
    let mut groups: BTreeMap<String, Bucket> = BTreeMap::new();
    let mut all = Bucket::new();
    for s in scores {
        let key = group_key(cfg.grouping, s.task, &s.source, &s.id)?;
        groups.entry(key).or_insert_with(Bucket::new).push_score(s);
        all.push_score(s);
    }
    for o in outcomes {
        let key = group_key(cfg.grouping, o.task, &o.source, &o.id)?;
        groups.entry(key).or_insert_with(Bucket::new).metrics[4].push(o.outcome);
        all.metrics[4].push(o.outcome);
    }
    let mut keys: Vec<String> = groups.keys().cloned().collect();
    if cfg.grouping == Grouping::Task {
        let rank = |k: &String| TaskType::ALL.iter().position(|t| t.as_str() == k);
        keys.sort_by_key(rank);
    }
    let mut rows = Vec::with_capacity(keys.len());
    for (r, key) in keys.into_iter().enumerate() {
        rows.push(groups[&key].row(key, cfg, seed, r as u64)?);
    }
    let overall = all.row("overall".into(), cfg, seed, rows.len() as u64)?;
    let macro_of = |pick: fn(&EvalRow) -> Option<Cell>| {
        let means: Vec<f64> = rows.iter().filter_map(|r| pick(r).map(|c| c.mean)).collect();
        (!means.is_empty()).then(|| mean(means))
    };
    let overall_macro = MacroRow {
        groups: rows.len(),
        r_f: macro_of(|r| r.r_f),
        r_c: macro_of(|r| r.r_c),
        r_e: macro_of(|r| r.r_e),
        radrscore: macro_of(|r| r.radrscore),
        accuracy: macro_of(|r| r.accuracy),
    };
    Ok(EvalReport {
        grouping: cfg.grouping,
        rows,
        overall,
        overall_macro,
        bootstrap: BootstrapInfo {
            method: BOOTSTRAP_METHOD.into(),
            resamples: cfg.resamples,
            level: cfg.level,
            seed,
        },
        config_hash: config_hash.to_string(),
        seed,
    })
}

fn fmt_cell(c: Option<Cell>) -> String {
    match c {
        Some(c) => format!("{:.3} ({:.3}-{:.3})", c.mean, c.ci_low, c.ci_high),
        None => "-".into(),
    }
}

fn fmt_plain(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.3}"))
}

/// Plain-text table: one row per group, the sample-weighted overall row
/// and the mean-over-groups row.
pub fn render_table(report: &EvalReport) -> String {
    let header = [
        report.grouping.to_string(),
        "n".into(),
        "r_f".into(),
        "r_c".into(),
        "r_e".into(),
        "radrscore".into(),
        "n_out".into(),
        "accuracy".into(),
    ];
    let row_cells = |r: &EvalRow| {
        vec![
            r.group.clone(),
            r.n_scored.to_string(),
            fmt_cell(r.r_f),
            fmt_cell(r.r_c),
            fmt_cell(r.r_e),
            fmt_cell(r.radrscore),
            r.n_outcomes.to_string(),
            fmt_cell(r.accuracy),
        ]
    };
    let mut lines: Vec<Vec<String>> = vec![header.to_vec()];
    lines.extend(report.rows.iter().map(row_cells));
    lines.push(row_cells(&report.overall));
    let m = &report.overall_macro;
    lines.push(vec![
        "mean of groups".into(),
        m.groups.to_string(),
        fmt_plain(m.r_f),
        fmt_plain(m.r_c),
        fmt_plain(m.r_e),
        fmt_plain(m.radrscore),
        "-".into(),
        fmt_plain(m.accuracy),
    ]);
    let widths: Vec<usize> = (0..header.len())
        .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, l) in lines.iter().enumerate() {
        let cells: Vec<String> = l.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            let _ = writeln!(out, "{}", rule.join("  "));
        }
    }
    let _ = writeln!(
        out,
        "{}% CI: {} bootstrap, {} resamples, seed {}",
        (report.bootstrap.level * 100.0).round(),
        report.bootstrap.method,
        report.bootstrap.resamples,
        report.bootstrap.seed
    );
    out
}

pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const EVAL_TABLE_FILE: &str = "eval_table.txt";

/// `eval` over the `scores.jsonl` and `outcomes.jsonl` of a score run.
/// `grouping` overrides the configured grouping.
pub fn run_eval(
    cfg: &RunConfig,
    score_dir: &Path,
    grouping: Option<Grouping>,
    out: &Path,
) -> Result<EvalReport, HarnessError> {
    let scores_path = score_dir.join(SCORES_FILE);
    let outcomes_path = score_dir.join(OUTCOMES_FILE);
    let scores: Vec<ScoreRecord> = read_jsonl(&scores_path)?;
    let outcomes: Vec<OutcomeRecord> = read_jsonl(&outcomes_path)?;
    let mut eval_cfg = cfg.eval.clone();
    if let Some(g) = grouping {
        eval_cfg.grouping = g;
    }
    let report = cmd_eval(&scores, &outcomes, &eval_cfg, cfg.seed, &cfg.hash())?;
    ensure_dir(out)?;
    write_json(&out.join(EVAL_REPORT_FILE), &report)?;
    write_text(&out.join(EVAL_TABLE_FILE), &render_table(&report))?;
    let mut manifest = RunManifest::new("eval", cfg)
        .setting("grouping", eval_cfg.grouping)
        .setting("bootstrap_method", BOOTSTRAP_METHOD)
        .setting("resamples", eval_cfg.resamples)
        .setting("level", eval_cfg.level);
    manifest.input(&scores_path)?;
    manifest.input(&outcomes_path)?;
    manifest.finish(out, &[EVAL_REPORT_FILE, EVAL_TABLE_FILE])?;
    Ok(report)
}
