//! Duration and frequency plausibility criteria.
//!
//! An occurrence is one maximal run of a class inside the 288-bin window. The
//! default rule set is loaded from `rules/table1.default` at the repository
//! root and mirrored by [`PlausibilityRuleSet::table1`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::activity::{to_intervals, ActivityClass, DailySequence, BIN_MINUTES, NUM_CLASSES};
use crate::error::{Error, Result};

/// Bounds for one class. Minutes throughout; `min_occ == 0` means unrestricted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_total_min: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_total_min: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_occ_min: Option<u32>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub min_occ: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_occ: Option<u32>,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

impl ClassRule {
    pub fn is_unrestricted(&self) -> bool {
        *self == ClassRule::default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlausibilityRuleSet {
    rules: [ClassRule; NUM_CLASSES],
}

impl Default for PlausibilityRuleSet {
    fn default() -> Self {
        Self::table1()
    }
}

impl PlausibilityRuleSet {
    /// No constraints at all; every day passes.
    pub fn unrestricted() -> Self {
        PlausibilityRuleSet {
            rules: [ClassRule::default(); NUM_CLASSES],
        }
    }

    /// The filtering criteria used throughout: Sleep 5–12 h in one run;
    /// Outing/Rest/Work at most 12 h a day; per-occurrence caps for the rest,
    /// with Hygiene, Toilet, Dress, Meal and Chore required at least once.
    /// Medicine's 0.3 h cap is rounded up to 20 min (four bins).
    pub fn table1() -> Self {
        use ActivityClass::*;
        let mut set = Self::unrestricted();
        set.set(
            Sleep,
            ClassRule {
                min_total_min: Some(300),
                max_total_min: Some(720),
                exact_occ: Some(1),
                ..ClassRule::default()
            },
        );
        for c in [Outing, Rest, Work] {
            set.set(
                c,
                ClassRule {
                    max_total_min: Some(720),
                    ..ClassRule::default()
                },
            );
        }
        let per_occ = [
            (Hygiene, 90, 1),
            (Toilet, 30, 1),
            (Dress, 60, 1),
            (Cook, 120, 0),
            (Meal, 120, 1),
            (Chore, 120, 1),
            (Snack, 120, 0),
            (Medicine, 20, 0),
        ];
        for (c, cap, min_occ) in per_occ {
            set.set(
                c,
                ClassRule {
                    max_occ_min: Some(cap),
                    min_occ,
                    ..ClassRule::default()
                },
            );
        }
        set
    }

    pub fn get(&self, class: ActivityClass) -> &ClassRule {
        &self.rules[class.index()]
    }

    pub fn set(&mut self, class: ActivityClass, rule: ClassRule) {
        self.rules[class.index()] = rule;
    }

    /// Parse the rule-file format: one `[Class]` table per restricted class
    /// with optional `max_total_min`, `min_total_min`, `max_occ_min`,
    /// `min_occ`, `exact_occ` keys. Classes without a table are unrestricted.
    pub fn parse(text: &str) -> Result<Self> {
        let tables: BTreeMap<String, ClassRule> =
            toml::from_str(text).map_err(|e| Error::Config(format!("rule file: {e}")))?;
        let mut set = Self::unrestricted();
        for (name, rule) in tables {
            let class: ActivityClass = name
                .parse()
                .map_err(|_| Error::Config(format!("rule file: unknown class `{name}`")))?;
            set.set(class, rule);
        }
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::parse(&text)
    }

    /// Render in the rule-file format, classes in id order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for class in ActivityClass::ALL {
            let rule = self.get(class);
            if rule.is_unrestricted() {
                continue;
            }
            out.push_str(&format!("[{}]\n", class.name()));
            out.push_str(&toml::to_string(rule).expect("rule serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RuleKind {
    MaxDailyTotal,
    MinDailyTotal,
    MaxPerOccurrence,
    MinOccurrences,
    ExactOccurrences,
}

impl RuleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleKind::MaxDailyTotal => "max_total",
            RuleKind::MinDailyTotal => "min_total",
            RuleKind::MaxPerOccurrence => "max_per_occurrence",
            RuleKind::MinOccurrences => "min_occurrences",
            RuleKind::ExactOccurrences => "exact_occurrences",
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One failed bound. Durations are minutes, counts are occurrences.
/// For per-occurrence caps `observed` is the longest offending run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Violation {
    pub class: ActivityClass,
    pub kind: RuleKind,
    pub observed: u32,
    pub bound: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlausibilityReport {
    pub violations: Vec<Violation>,
}

impl PlausibilityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Per-class totals, run counts and longest run, in minutes.
#[derive(Debug, Clone, Copy, Default)]
struct ClassStats {
    total_min: u32,
    occurrences: u32,
    longest_min: u32,
}

fn class_stats(tokens: &[ActivityClass]) -> [ClassStats; NUM_CLASSES] {
    let mut stats = [ClassStats::default(); NUM_CLASSES];
    for iv in to_intervals(tokens) {
        let minutes = iv.len() as u32 * BIN_MINUTES;
        let s = &mut stats[iv.class.index()];
        s.total_min += minutes;
        s.occurrences += 1;
        s.longest_min = s.longest_min.max(minutes);
    }
    stats
}

/// Check every bound of every class; all violations are reported.
pub fn check_tokens(tokens: &[ActivityClass], rules: &PlausibilityRuleSet) -> PlausibilityReport {
    let stats = class_stats(tokens);
    let mut violations = Vec::new();
    for class in ActivityClass::ALL {
        let rule = rules.get(class);
        let s = stats[class.index()];
        let mut push = |kind, observed, bound| {
            violations.push(Violation {
                class,
                kind,
                observed,
                bound,
            })
        };
        if let Some(max) = rule.max_total_min {
            if s.total_min > max {
                push(RuleKind::MaxDailyTotal, s.total_min, max);
            }
        }
        if let Some(min) = rule.min_total_min {
            if s.total_min < min {
                push(RuleKind::MinDailyTotal, s.total_min, min);
            }
        }
        if let Some(cap) = rule.max_occ_min {
            if s.longest_min > cap {
                push(RuleKind::MaxPerOccurrence, s.longest_min, cap);
            }
        }
        if s.occurrences < rule.min_occ {
            push(RuleKind::MinOccurrences, s.occurrences, rule.min_occ);
        }
        if let Some(n) = rule.exact_occ {
            if s.occurrences != n {
                push(RuleKind::ExactOccurrences, s.occurrences, n);
            }
        }
    }
    PlausibilityReport { violations }
}

pub fn check_plausibility(seq: &DailySequence, rules: &PlausibilityRuleSet) -> PlausibilityReport {
    check_tokens(seq.tokens(), rules)
}
