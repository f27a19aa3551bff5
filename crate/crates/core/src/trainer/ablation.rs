use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::metrics::{aggregate, AggregateMetrics, MeanSd};
use crate::model::load_checkpoint;
use crate::phantom::Manifest;
use crate::{Error, Result};

use super::config::TrainConfig;
use super::eval::evaluate_model;
use super::{make_folds, prepare, train_prepared, RunRecord};

/// One configuration of the block switches.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub use_fem: bool,
    pub use_aem: bool,
    pub use_dcl: bool,
}

impl AblationRow {
    fn new(name: &str, use_fem: bool, use_aem: bool, use_dcl: bool) -> Self {
        AblationRow {
            name: name.into(),
            use_fem,
            use_aem,
            use_dcl,
        }
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            use_mem: self.use_fem || self.use_aem,
            use_fem: self.use_fem,
            use_aem: self.use_aem,
            use_dcl: self.use_dcl,
            ..base.clone()
        }
    }
}

/// Baseline, each exchange module alone, both, and both with dual labels.
pub fn ablation_rows() -> Vec<AblationRow> {
    vec![
        AblationRow::new("baseline", false, false, false),
        AblationRow::new("+FEM", true, false, false),
        AblationRow::new("+AEM", false, true, false),
        AblationRow::new("+MEM", true, true, false),
        AblationRow::new("+MEM+DCL", true, true, true),
    ]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RowResult {
    pub row: AblationRow,
    pub metrics: AggregateMetrics,
    pub runs: Vec<RunRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationTable {
    pub folds: Vec<usize>,
    pub rows: Vec<RowResult>,
}

/// Trains and evaluates every row on the same folds. Metrics pool the
/// held-out subjects of all requested folds.
pub fn run_ablation_matrix(manifest: &Manifest, base: &TrainConfig, folds: &[usize], out: &Path) -> Result<AblationTable> {
    base.validate()?;
    let partitions = make_folds(&manifest.ids(), base.folds, base.seed)?;
    if let Some(&bad) = folds.iter().find(|&&f| f >= partitions.len()) {
        return Err(Error::Config(format!("fold {bad} out of range 0..{}", partitions.len())));
    }
    let mut rows = Vec::new();
    for row in ablation_rows() {
        let cfg = row.apply(base);
        let mut reports = Vec::new();
        let mut runs = Vec::new();
        for &f in folds {
            let part = &partitions[f];
            let train = prepare(manifest, &part.train, &cfg, true)?;
            let val = prepare(manifest, &part.val, &cfg, false)?;
            let dir = out.join(row.name.replace('+', "plus_")).join(format!("fold{f}"));
            let rec = train_prepared(&train, &val, &cfg, f, &dir)?;
            let (net, _) = load_checkpoint::<f32>(&rec.best_checkpoint)?;
            reports.extend(evaluate_model(&net, manifest, &part.val, cfg.threshold)?.reports);
            runs.push(rec);
        }
        rows.push(RowResult {
            row,
            metrics: aggregate(&reports),
            runs,
        });
    }
    Ok(AblationTable {
        folds: folds.to_vec(),
        rows,
    })
}

fn cell(m: Option<MeanSd>) -> String {
    m.map_or_else(|| "n/a".into(), |m| format!("{:.4}±{:.4}", m.mean, m.sd))
}

/// `table3.json` with the full results and `table3.csv` with one aligned
/// line per row.
pub fn write_ablation_table(table: &AblationTable, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join("table3.json");
    fs::write(&json, serde_json::to_vec_pretty(table)?).map_err(|e| Error::io(&json, e))?;
    let header = ["row", "FEM", "AEM", "DCL", "dice", "jaccard", "precision", "ahd"];
    let mut lines: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in &table.rows {
        let mark = |b: bool| if b { "✓" } else { "" }.to_string();
        lines.push(vec![
            r.row.name.clone(),
            mark(r.row.use_fem),
            mark(r.row.use_aem),
            mark(r.row.use_dcl),
            cell(r.metrics.dice),
            cell(r.metrics.jaccard),
            cell(r.metrics.precision),
            cell(r.metrics.ahd),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut csv = String::new();
    for l in &lines {
        let cells: Vec<String> = l
            .iter()
            .zip(&widths)
            .map(|(s, &w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
            .collect();
        let _ = writeln!(csv, "{}", cells.join(", ").trim_end());
    }
    let path = dir.join("table3.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_rows_match_the_flag_matrix() {
        let rows = ablation_rows();
        let flags: Vec<_> = rows.iter().map(|r| (r.use_fem, r.use_aem, r.use_dcl)).collect();
        assert_eq!(
            flags,
            vec![
                (false, false, false),
                (true, false, false),
                (false, true, false),
                (true, true, false),
                (true, true, true)
            ]
        );
        for r in &rows {
            r.apply(&TrainConfig::desk()).validate().unwrap();
        }
        let base = rows[0].apply(&TrainConfig::desk()).model_config();
        assert!(!base.fem && !base.aem);
    }
}
