//! From raw annotated logs to filtered, split daily sequences.

mod log;
mod synth;
mod timeline;

pub use log::{consolidate, normalize_label, parse_log, Diagnostic, Marker, ParsedLog, RawEvent};
pub use synth::{synth_generate, SynthProfile};
pub use timeline::{
    build_timeline, discretize, fill_other, SecondTimeline, SECONDS_PER_BIN, SECONDS_PER_DAY,
};

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::activity::DailySequence;
use crate::error::{Error, Result};
use crate::rules::{check_plausibility, PlausibilityReport, PlausibilityRuleSet};

/// Days extracted from one log, plus what was dropped along the way.
#[derive(Debug, Clone, Default)]
pub struct PreprocessOutcome {
    pub days: Vec<DailySequence>,
    pub diagnostics: Vec<Diagnostic>,
}

/// parse → per-day timeline → infill → discretize. Day ids are
/// `<source>_<YYYY-MM-DD>`; output is ordered by date.
pub fn preprocess_log(parsed: &ParsedLog, source: &str) -> PreprocessOutcome {
    let dates: BTreeSet<_> = parsed.events.iter().map(|e| e.timestamp.date()).collect();
    let dates: Vec<_> = dates.into_iter().collect();
    let results: Vec<_> = dates
        .par_iter()
        .map(|&date| {
            let day_id = format!("{source}_{date}");
            build_timeline(&parsed.events, date)
                .and_then(fill_other)
                .and_then(|tl| discretize(&tl, day_id.clone()))
                .map_err(|e| format!("dropped {day_id}: {e}"))
        })
        .collect();

    let mut out = PreprocessOutcome {
        days: Vec::new(),
        diagnostics: parsed.diagnostics.clone(),
    };
    for r in results {
        match r {
            Ok(day) => out.days.push(day),
            Err(message) => out.diagnostics.push(Diagnostic { line: 0, message }),
        }
    }
    out
}

pub type Rejected = Vec<(DailySequence, PlausibilityReport)>;

/// Keep days that pass the rules; keep the reports for the rest.
pub fn filter_dataset(days: Vec<DailySequence>, rules: &PlausibilityRuleSet) -> (Vec<DailySequence>, Rejected) {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for day in days {
        let report = check_plausibility(&day, rules);
        if report.passed() {
            kept.push(day);
        } else {
            rejected.push((day, report));
        }
    }
    (kept, rejected)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<DailySequence>,
    pub val: Vec<DailySequence>,
    pub test: Vec<DailySequence>,
    pub seed: u64,
}

/// Seeded shuffle, then 8:1:1 with the remainder going to train.
pub fn split_dataset(mut days: Vec<DailySequence>, seed: u64) -> Result<DatasetSplit> {
    if days.len() < 10 {
        return Err(Error::Empty(format!(
            "need at least 10 days to split 8:1:1, got {}",
            days.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    days.shuffle(&mut rng);
    let n_val = days.len() / 10;
    let n_test = days.len() / 10;
    let test = days.split_off(days.len() - n_test);
    let val = days.split_off(days.len() - n_val);
    Ok(DatasetSplit {
        train: days,
        val,
        test,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activity::{ActivityClass, SEQ_LEN};
    use std::collections::HashSet;

    fn numbered(n: usize) -> Vec<DailySequence> {
        (0..n)
            .map(|i| {
                let mut s = DailySequence::constant(format!("d{i}"), ActivityClass::Rest);
                s.set_day_id(format!("d{i}"));
                s
            })
            .collect()
    }

    #[test]
    fn split_sizes() {
        let s = split_dataset(numbered(100), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
        let s = split_dataset(numbered(10), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        let s = split_dataset(numbered(512), 7).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (410, 51, 51));
        assert!(split_dataset(numbered(9), 1).is_err());
    }

    #[test]
    fn split_is_deterministic_partition() {
        let a = split_dataset(numbered(57), 42).unwrap();
        let b = split_dataset(numbered(57), 42).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(numbered(57), 43).unwrap();
        assert_ne!(a.train, c.train);

        let ids: Vec<&str> = a
            .train
            .iter()
            .chain(&a.val)
            .chain(&a.test)
            .map(|d| d.day_id())
            .collect();
        let unique: HashSet<_> = ids.iter().collect();
        assert_eq!(ids.len(), 57);
        assert_eq!(unique.len(), 57);
    }

    #[test]
    fn filter_cases() {
        let rules = PlausibilityRuleSet::table1();
        let (kept, rejected) = filter_dataset(Vec::new(), &rules);
        assert!(kept.is_empty() && rejected.is_empty());

        let good = synth_generate(3, 5, SynthProfile::Mixed);
        let mut two_sleeps = vec![ActivityClass::Sleep; 48];
        two_sleeps.extend_from_slice(&good[0].tokens()[48..SEQ_LEN - 1]);
        two_sleeps.push(ActivityClass::Sleep);
        let bad = DailySequence::new("bad", two_sleeps).unwrap();
        let (kept, rejected) = filter_dataset(vec![good[0].clone(), bad], &rules);
        assert_eq!(kept.len(), 1);
        assert_eq!(rejected.len(), 1);
        assert!(rejected[0]
            .1
            .violations
            .iter()
            .any(|v| v.class == ActivityClass::Sleep));
        for d in &kept {
            assert!(check_plausibility(d, &rules).passed());
        }
    }

    #[test]
    fn preprocess_two_days() {
        let text = "\
2011-06-15 00:30:00.1 M1 ON Sleep begin
2011-06-15 07:10:00 M1 OFF Sleep end
2011-06-15 07:20:00 M2 ON Bed_Toilet_Transition begin
2011-06-15 07:25:00 M2 OFF Bed_Toilet_Transition end
2011-06-15 07:25:00 M2 ON T001 21.5
2011-06-15 08:00:00 M3 ON Cook_Breakfast begin
2011-06-15 08:20:00 M3 OFF Cook_Breakfast end
2011-06-15 23:00:00 M3 ON Sleep begin
2011-06-16 06:00:00 M3 OFF Sleep end
2011-06-16 06:10:00 M4 ON Personal_Hygiene begin
2011-06-16 06:30:00 M4 OFF Personal_Hygiene end
";
        let parsed = parse_log(text.as_bytes()).unwrap();
        let out = preprocess_log(&parsed, "apt");
        assert_eq!(out.days.len(), 2);
        assert_eq!(out.days[0].day_id(), "apt_2011-06-15");
        assert_eq!(out.days[1].day_id(), "apt_2011-06-16");
        for d in &out.days {
            assert_eq!(d.tokens().len(), SEQ_LEN);
        }
        let d0 = out.days[0].tokens();
        assert_eq!(d0[0], ActivityClass::Sleep);
        // 07:10-07:20 gap is split between Sleep and Toilet; bin 86 = 07:10.
        assert_eq!(d0[86], ActivityClass::Sleep);
        assert_eq!(d0[88], ActivityClass::Toilet);
        assert_eq!(d0[96], ActivityClass::Cook);
        assert_eq!(d0[SEQ_LEN - 1], ActivityClass::Sleep);
        let d1 = out.days[1].tokens();
        assert_eq!(d1[0], ActivityClass::Sleep);
        assert_eq!(d1[SEQ_LEN - 1], ActivityClass::Hygiene);
    }
}
