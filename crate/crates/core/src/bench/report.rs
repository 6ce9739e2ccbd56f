use serde::{Deserialize, Serialize};

use super::suite::Subset;
use crate::config::PipelineMode;
use crate::ledger::StageLedger;
use crate::record::RunRecord;

/// Per-item result, also persisted next to the item's run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<Subset>,
    /// The final program ran and rendered a figure.
    pub executable: bool,
    /// Absent when the item has no reference image or judging failed.
    pub plot_score: Option<f64>,
    /// Approximate correctness; only judged for items with a subset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    pub ledger: StageLedger,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scorecard {
    pub strategy: PipelineMode,
    pub k: i64,
    pub model: String,
    pub items: Vec<ItemScore>,
}

/// Percentage of records whose final program rendered; 0 for no records.
pub fn executable_rate(records: &[RunRecord]) -> f64 {
    rate(records.iter().map(RunRecord::executable))
}

fn rate(flags: impl Iterator<Item = bool>) -> f64 {
    let (hits, total) = flags.fold((0usize, 0usize), |(h, t), ok| (h + ok as usize, t + 1));
    if total == 0 {
        0.0
    } else {
        100.0 * hits as f64 / total as f64
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl Scorecard {
    pub fn executable_rate(&self) -> f64 {
        rate(self.items.iter().map(|i| i.executable))
    }

    /// Mean over items with a valid score; absent scores are not imputed.
    pub fn mean_plot_score(&self) -> Option<f64> {
        mean(self.items.iter().filter_map(|i| i.plot_score))
    }

    pub fn scored_items(&self) -> usize {
        self.items.iter().filter(|i| i.plot_score.is_some()).count()
    }

    /// Items that should have had a score but do not.
    pub fn missing_scores(&self) -> Vec<&str> {
        self.items.iter().filter(|i| i.score_error.is_some()).map(|i| i.item_id.as_str()).collect()
    }

    /// Share of judged items in `subset` counted correct, in percent.
    pub fn subset_accuracy(&self, subset: Subset) -> Option<f64> {
        let judged: Vec<bool> = self.items.iter().filter(|i| i.subset == Some(subset)).filter_map(|i| i.correct).collect();
        (!judged.is_empty()).then(|| rate(judged.into_iter()))
    }

    pub fn correctness_average(&self) -> Option<f64> {
        match (self.subset_accuracy(Subset::Hard), self.subset_accuracy(Subset::Easy)) {
            (Some(h), Some(e)) => Some((h + e) / 2.0),
            (one, other) => one.or(other),
        }
    }

    pub fn ledger(&self) -> StageLedger {
        self.items.iter().map(|i| i.ledger).sum()
    }

    pub fn calls_per_row(&self) -> f64 {
        self.ledger().per_row(self.items.len())
    }

    pub fn label(&self) -> String {
        if self.strategy.is_baseline() {
            self.strategy.method_label().to_string()
        } else {
            format!("{} (K={})", self.strategy.method_label(), self.k)
        }
    }

    /// One row per item.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "item_id",
            "subset",
            "executable",
            "plot_score",
            "correct",
            "query_expansion",
            "code_generation",
            "visual_feedback",
            "editor",
            "failure",
        ])
        .expect("in-memory write");
        for i in &self.items {
            let (qe, cg, vf, ed) = i.ledger.as_tuple();
            w.write_record([
                i.item_id.clone(),
                i.subset.map(|s| s.to_string()).unwrap_or_default(),
                i.executable.to_string(),
                i.plot_score.map(|s| s.to_string()).unwrap_or_default(),
                i.correct.map(|c| c.to_string()).unwrap_or_default(),
                qe.to_string(),
                cg.to_string(),
                vf.to_string(),
                ed.to_string(),
                i.failure.clone().or_else(|| i.score_error.clone()).unwrap_or_default(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 csv")
    }
}

fn cell(value: Option<f64>) -> String {
    value.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

/// Comparison table with one row per strategy: model, method, plot score,
/// executable rate and the correctness columns.
pub fn markdown_table(cards: &[Scorecard]) -> String {
    let mut out = String::from(
        "| Model | Method | Plot Score | Executable Rate (%) | Visualization-Hard | Visualization-Easy | Avg. | Calls / Row |\n\
         |---|---|---|---|---|---|---|---|\n",
    );
    for c in cards {
        out.push_str(&format!(
            "| {} | {} | {} | {:.0} | {} | {} | {} | {:.2} |\n",
            c.model,
            c.label(),
            cell(c.mean_plot_score()),
            c.executable_rate(),
            cell(c.subset_accuracy(Subset::Hard)),
            cell(c.subset_accuracy(Subset::Easy)),
            cell(c.correctness_average()),
            c.calls_per_row(),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PipelineConfig;
    use crate::types::{ExecutionOutcome, Figure, TaskInput};

    fn item(id: &str, executable: bool, score: Option<f64>) -> ItemScore {
        ItemScore {
            item_id: id.into(),
            subset: None,
            executable,
            plot_score: score,
            correct: None,
            ledger: StageLedger::new(1, 3, 3, 1),
            failure: None,
            score_error: None,
        }
    }

    fn record(ok: bool) -> RunRecord {
        let mut r = RunRecord::new(TaskInput::new("t", "q", "d"), PipelineConfig::default());
        r.final_outcome = Some(if ok {
            ExecutionOutcome::rendered(vec![Figure::from_bytes("figures/final/fig_1.png", vec![1])], 1)
        } else {
            ExecutionOutcome::failed("boom", 1)
        });
        r
    }

    #[test]
    fn executable_rate_over_records() {
        let six_of_ten: Vec<_> = (0..10).map(|i| record(i < 6)).collect();
        assert_eq!(executable_rate(&six_of_ten), 60.0);
        assert_eq!(executable_rate(&[record(false), record(false)]), 0.0);
        assert_eq!(executable_rate(&[record(true), record(true)]), 100.0);
    }

    #[test]
    fn aborted_runs_are_not_executable() {
        let mut r = record(true);
        r.final_outcome = None;
        assert_eq!(executable_rate(&[r]), 0.0);
    }

    #[test]
    fn mean_skips_absent_scores() {
        let card = Scorecard {
            strategy: PipelineMode::Full,
            k: 3,
            model: "m".into(),
            items: vec![item("a", true, Some(80.0)), item("b", false, None), item("c", true, Some(60.0))],
        };
        assert_eq!(card.mean_plot_score(), Some(70.0));
        assert_eq!(card.scored_items(), 2);
        assert!((card.executable_rate() - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(card.ledger(), StageLedger::new(3, 9, 9, 3));
        assert_eq!(card.calls_per_row(), 8.0);
    }

    #[test]
    fn subset_accuracy_and_average() {
        let mut a = item("a", true, None);
        a.subset = Some(Subset::Hard);
        a.correct = Some(true);
        let mut b = item("b", true, None);
        b.subset = Some(Subset::Easy);
        b.correct = Some(false);
        let mut c = item("c", true, None);
        c.subset = Some(Subset::Easy);
        c.correct = Some(true);
        let card = Scorecard { strategy: PipelineMode::ZeroShot, k: 3, model: "m".into(), items: vec![a, b, c] };
        assert_eq!(card.subset_accuracy(Subset::Hard), Some(100.0));
        assert_eq!(card.subset_accuracy(Subset::Easy), Some(50.0));
        assert_eq!(card.correctness_average(), Some(75.0));
        assert_eq!(card.label(), "Zero-Shot");
    }

    #[test]
    fn csv_and_markdown_layout() {
        let card = Scorecard { strategy: PipelineMode::Full, k: 3, model: "gpt-4o-mini".into(), items: vec![item("a,1", true, Some(66.0))] };
        let csv = card.to_csv();
        assert!(csv.starts_with("item_id,subset,executable,plot_score"));
        assert!(csv.contains("\"a,1\",,true,66,,1,3,3,1,"));
        let md = markdown_table(&[card]);
        assert!(md.contains("| Model | Method | Plot Score | Executable Rate (%) | Visualization-Hard | Visualization-Easy | Avg. |"));
        assert!(md.contains("| gpt-4o-mini | Multi-path + visual feedback (K=3) | 66.00 | 100 | n/a | n/a | n/a | 8.00 |"));
    }
}
