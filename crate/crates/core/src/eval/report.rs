//! Plain-text tables in the Pick / Collect / Defense layout and per-trial CSV.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::metrics::{TaskMetrics, TrialMetrics};
use super::EvalError;

/// Markdown table, one row per metrics record, cells `mean ± std`.
pub fn render_table(rows: &[TaskMetrics]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "| Method | Trials | Pick | Collect | Defense | Reward | e_cossim | Waypoint dist |");
    let _ = writeln!(out, "|---|---|---|---|---|---|---|---|");
    for m in rows {
        let s = m.summary();
        let _ = writeln!(
            out,
            "| {} | {} | {:.1} | {:.1} | {:.1} | {:.1} | {:.3} | {:.3} |",
            m.label,
            m.trials.len(),
            s.picks,
            s.collects,
            s.defenses,
            s.reward,
            s.e_cossim,
            s.waypoint_distance
        );
    }
    out
}

pub const TRIAL_COLUMNS: [&str; 13] = [
    "label",
    "trial",
    "seed",
    "steps",
    "picks",
    "collects",
    "defenses",
    "breaches",
    "reward",
    "r_task",
    "r_inst",
    "mean_e_cossim",
    "mean_waypoint_distance",
];

fn trial_record(label: &str, t: &TrialMetrics) -> Vec<String> {
    vec![
        label.to_string(),
        t.trial.to_string(),
        t.seed.to_string(),
        t.steps.to_string(),
        t.picks.to_string(),
        t.collects.to_string(),
        t.defenses.to_string(),
        t.breaches.to_string(),
        t.reward.to_string(),
        t.r_task.to_string(),
        t.r_inst.to_string(),
        t.mean_e_cossim.to_string(),
        t.mean_waypoint_distance.to_string(),
    ]
}

pub fn write_trials_csv(out: impl Write, rows: &[TaskMetrics]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRIAL_COLUMNS)?;
    for m in rows {
        for t in &m.trials {
            w.write_record(trial_record(&m.label, t))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportPaths {
    pub table: PathBuf,
    pub trials_csv: PathBuf,
}

/// Writes `<name>.md` and `<name>_trials.csv` into `dir`.
pub fn export_report(dir: &Path, name: &str, rows: &[TaskMetrics]) -> Result<ReportPaths, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::Protocol("report needs at least one metrics record".into()));
    }
    fs::create_dir_all(dir)?;
    let table = dir.join(format!("{name}.md"));
    let trials_csv = dir.join(format!("{name}_trials.csv"));
    fs::write(&table, render_table(rows))?;
    write_trials_csv(fs::File::create(&trials_csv)?, rows)?;
    Ok(ReportPaths { table, trials_csv })
}
