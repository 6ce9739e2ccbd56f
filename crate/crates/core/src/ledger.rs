use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

/// Per-run count of agent calls, in the four stage categories used for
/// cost accounting. Reprompts are not counted here; they are visible in
/// the run transcript instead.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StageLedger {
    pub query_expansion: u64,
    pub code_generation: u64,
    pub visual_feedback: u64,
    pub editor: u64,
}

impl StageLedger {
    pub const fn new(query_expansion: u64, code_generation: u64, visual_feedback: u64, editor: u64) -> Self {
        Self { query_expansion, code_generation, visual_feedback, editor }
    }

    pub fn total(&self) -> u64 {
        self.query_expansion + self.code_generation + self.visual_feedback + self.editor
    }

    /// Average calls per row over `rows` runs.
    pub fn per_row(&self, rows: usize) -> f64 {
        if rows == 0 {
            0.0
        } else {
            self.total() as f64 / rows as f64
        }
    }

    pub fn as_tuple(&self) -> (u64, u64, u64, u64) {
        (self.query_expansion, self.code_generation, self.visual_feedback, self.editor)
    }
}

pub fn ledger_total(ledger: &StageLedger) -> u64 {
    ledger.total()
}

impl Add for StageLedger {
    type Output = StageLedger;

    fn add(self, rhs: StageLedger) -> StageLedger {
        StageLedger {
            query_expansion: self.query_expansion + rhs.query_expansion,
            code_generation: self.code_generation + rhs.code_generation,
            visual_feedback: self.visual_feedback + rhs.visual_feedback,
            editor: self.editor + rhs.editor,
        }
    }
}

impl AddAssign for StageLedger {
    fn add_assign(&mut self, rhs: StageLedger) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for StageLedger {
    fn sum<I: Iterator<Item = StageLedger>>(iter: I) -> StageLedger {
        iter.fold(StageLedger::default(), Add::add)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_match_reported_iteration_counts() {
        assert_eq!(ledger_total(&StageLedger::new(100, 300, 300, 100)), 800);
        assert_eq!(ledger_total(&StageLedger::new(80, 240, 240, 80)), 640);
        assert_eq!(ledger_total(&StageLedger::default()), 0);
    }

    #[test]
    fn per_row_average() {
        assert_eq!(StageLedger::new(100, 300, 300, 100).per_row(100), 8.0);
        assert_eq!(StageLedger::new(80, 240, 240, 80).per_row(80), 8.0);
        assert_eq!(StageLedger::default().per_row(0), 0.0);
    }

    #[test]
    fn sums_componentwise() {
        let rows = vec![StageLedger::new(1, 3, 3, 1); 10];
        let total: StageLedger = rows.into_iter().sum();
        assert_eq!(total.as_tuple(), (10, 30, 30, 10));
    }
}
