//! Markdown and CSV summaries of a results store, next to the published
//! full-scale numbers.

use std::fmt::Write as _;

use crate::ablation::{CellResult, Grid, RunSpec};
use crate::error::{Error, Result};
use crate::heads::HeadKind;
use crate::model::LossKind;

/// Word accuracy (%) published for a cell, if any.
pub fn paper_reference(grid: Grid, spec: &RunSpec) -> Option<f64> {
    use HeadKind::*;
    use LossKind::*;
    match grid {
        Grid::Heads => Some(match (spec.head, spec.loss) {
            (Shpn, Ctc) => 83.8,
            (Shpn, Ce) => 83.6,
            (Sepn, Ctc) => 83.2,
            (Sepn, Ce) => 83.2,
            (Sppn, Ctc) => 82.4,
            (Sppn, Ce) => 84.1,
        }),
        Grid::Backbone => Some(match (spec.em, spec.sadm) {
            (false, false) => 84.1,
            (true, false) => 87.2,
            _ => 87.3,
        }),
        Grid::Augment => Some(if spec.augment { 89.0 } else { 87.3 }),
        Grid::Single => Some(89.0),
    }
}

/// Mean and sample standard deviation (0 for a single seed), in percent.
#[derive(Clone, Debug, PartialEq)]
pub struct CellStats {
    pub spec: RunSpec,
    pub seeds: usize,
    pub failed: usize,
    pub mean: f64,
    pub std: f64,
}

pub fn cell_stats(results: &[CellResult], spec: &RunSpec) -> Option<CellStats> {
    let rows: Vec<&CellResult> = results.iter().filter(|r| r.spec == *spec).collect();
    if rows.is_empty() {
        return None;
    }
    let acc: Vec<f64> = rows.iter().filter(|r| r.is_ok()).map(|r| 100.0 * r.eval_word_acc).collect();
    let n = acc.len();
    let mean = if n == 0 { f64::NAN } else { acc.iter().sum::<f64>() / n as f64 };
    let std = if n < 2 {
        0.0
    } else {
        (acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Some(CellStats {
        spec: *spec,
        seeds: n,
        failed: rows.len() - n,
        mean,
        std,
    })
}

fn title(grid: Grid) -> &'static str {
    match grid {
        Grid::Heads => "Prediction networks: CTC vs CE",
        Grid::Backbone => "CPNet ablation",
        Grid::Augment => "Data augmentation",
        Grid::Single => "Full configuration",
    }
}

fn row_label(grid: Grid, s: &RunSpec) -> String {
    match grid {
        Grid::Heads => format!("{} | {}", s.head.to_string().to_uppercase(), s.loss.to_string().to_uppercase()),
        Grid::Backbone => match (s.em, s.sadm) {
            (false, false) => "Base".into(),
            (true, false) => "Base+EM".into(),
            (false, true) => "Base+SADM".into(),
            (true, true) => "Base+EM+SADM".into(),
        },
        Grid::Augment | Grid::Single => if s.augment { "Base+DA" } else { "Base" }.into(),
    }
}

/// Rendered report.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub markdown: String,
    pub csv: String,
}

/// Builds one table per grid that has at least one result.
pub fn report(results: &[CellResult]) -> Result<Report> {
    if results.is_empty() {
        return Err(Error::Config("results store is empty".into()));
    }
    let mut md = String::from("# Ablation report\n\n");
    md.push_str(
        "Reference columns are the published numbers (paper / full scale). Measured columns are \
         toy-scale runs (this run / toy scale) and are not expected to match them.\n",
    );
    let mut csv = String::from("table,row,head,loss,em,sadm,augment,paper_full_scale,toy_mean,toy_std,seeds,failed\n");
    for grid in [Grid::Heads, Grid::Backbone, Grid::Augment] {
        let stats: Vec<CellStats> = grid.cells().iter().filter_map(|s| cell_stats(results, s)).collect();
        if stats.is_empty() {
            continue;
        }
        let _ = write!(md, "\n## {}\n\n", title(grid));
        let head = if grid == Grid::Heads { "| Head | Loss |" } else { "| Model |" };
        let rule = if grid == Grid::Heads { "|---|---|" } else { "|---|" };
        let _ = writeln!(md, "{head} paper / full scale | this run / toy scale | seeds |");
        let _ = writeln!(md, "{rule}---:|---:|---:|");
        for st in &stats {
            let s = &st.spec;
            let label = row_label(grid, s);
            let paper = paper_reference(grid, s).map_or("-".into(), |p| format!("{p:.1}"));
            let toy = if st.seeds == 0 {
                "failed".to_string()
            } else {
                format!("{:.1} ± {:.1}", st.mean, st.std)
            };
            let seeds = if st.failed > 0 {
                format!("{} ({} failed)", st.seeds, st.failed)
            } else {
                st.seeds.to_string()
            };
            let _ = writeln!(md, "| {label} | {paper} | {toy} | {seeds} |");
            let _ = writeln!(
                csv,
                "{grid},{},{},{},{},{},{},{paper},{:.4},{:.4},{},{}",
                label.replace(" | ", "+"),
                s.head,
                s.loss,
                s.em,
                s.sadm,
                s.augment,
                st.mean,
                st.std,
                st.seeds,
                st.failed
            );
        }
    }
    let failed: Vec<&CellResult> = results.iter().filter(|r| !r.is_ok()).collect();
    if !failed.is_empty() {
        md.push_str("\n## Failed cells\n\n");
        for r in failed {
            if let crate::ablation::CellStatus::Failed(e) = &r.status {
                let _ = writeln!(md, "- `{}` {} seed {}: {e}", r.fingerprint, r.spec, r.seed);
            }
        }
    }
    Ok(Report { markdown: md, csv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ablation::CellStatus;

    fn result(spec: RunSpec, seed: u64, acc: f64) -> CellResult {
        CellResult {
            fingerprint: format!("{seed}{acc}"),
            spec,
            seed,
            status: CellStatus::Ok,
            steps: 10,
            eval_word_acc: acc,
            eval_edit_dist: 0.0,
            wall_seconds: 0.0,
        }
    }

    #[test]
    fn empty_store_is_an_error() {
        assert!(report(&[]).is_err());
    }

    #[test]
    fn reference_columns_are_present() {
        let mut rows = Vec::new();
        for g in [Grid::Heads, Grid::Backbone, Grid::Augment] {
            for s in g.cells() {
                rows.push(result(s, 0, 0.5));
            }
        }
        let r = report(&rows).unwrap();
        for v in ["83.8", "83.6", "83.2", "82.4", "84.1", "87.2", "87.3", "89.0"] {
            assert!(r.markdown.contains(&format!("| {v} |")), "{v} missing");
        }
        assert!(r.markdown.contains("paper / full scale"));
        assert!(r.markdown.contains("this run / toy scale"));
        assert_eq!(r.csv.lines().count(), 1 + 6 + 3 + 2);
    }

    #[test]
    fn stats_use_sample_deviation() {
        let rows = [result(RunSpec::FULL, 0, 0.8), result(RunSpec::FULL, 1, 0.9)];
        let st = cell_stats(&rows, &RunSpec::FULL).unwrap();
        assert!((st.mean - 85.0).abs() < 1e-9);
        assert!((st.std - 50f64.sqrt()).abs() < 1e-9);
        assert!(report(&rows).unwrap().markdown.contains("85.0 ± 7.1"));
    }
}
