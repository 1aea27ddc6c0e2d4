use std::collections::HashSet;

use crate::activity::{ActivityClass, DailySequence};
use crate::rules::{check_plausibility, PlausibilityRuleSet};

/// Unique n-grams over total n-gram occurrences, pooled across all days.
/// Returns 0 when no day is long enough to hold an n-gram.
pub fn distinct_n(days: &[DailySequence], n: usize) -> f64 {
    assert!(n >= 1, "n-gram length must be positive");
    let mut unique: HashSet<&[ActivityClass]> = HashSet::new();
    let mut total = 0usize;
    for d in days {
        for w in d.tokens().windows(n) {
            unique.insert(w);
            total += 1;
        }
    }
    if total == 0 {
        return 0.0;
    }
    unique.len() as f64 / total as f64
}

/// Fraction of days passing the rules.
pub fn real_score(days: &[DailySequence], rules: &PlausibilityRuleSet) -> f64 {
    if days.is_empty() {
        return 0.0;
    }
    let passing = days
        .iter()
        .filter(|d| check_plausibility(d, rules).passed())
        .count();
    passing as f64 / days.len() as f64
}
