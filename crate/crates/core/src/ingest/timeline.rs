//! Per-second day timelines and their reduction to 288 bins.

use std::collections::HashMap;

use chrono::{NaiveDate, Timelike};

use super::log::{consolidate, normalize_label, Marker, RawEvent};
use crate::activity::{ActivityClass, DailySequence, NUM_CLASSES, SEQ_LEN};
use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: usize = 86_400;
pub const SECONDS_PER_BIN: usize = SECONDS_PER_DAY / SEQ_LEN;

/// One label per second of a day; `None` is OTHER (no annotation).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecondTimeline {
    pub day: NaiveDate,
    pub labels: Vec<Option<ActivityClass>>,
}

impl SecondTimeline {
    pub fn new(day: NaiveDate, labels: Vec<Option<ActivityClass>>) -> Result<Self> {
        if labels.len() != SECONDS_PER_DAY {
            return Err(Error::structural(format!(
                "timeline must cover {SECONDS_PER_DAY} seconds, got {}",
                labels.len()
            )));
        }
        Ok(SecondTimeline { day, labels })
    }

    pub fn other_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }
}

fn second_of_day(ev: &RawEvent) -> usize {
    ev.timestamp.time().num_seconds_from_midnight() as usize
}

/// Paint annotated activities onto a day.
///
/// Each begin/end pair covers `[begin, end)` in seconds. A begin left open at
/// day end runs through 23:59:59; an end with no begin starts at 00:00:00.
/// Where annotations overlap, the later begin wins from its start second. The
/// first activity is then stretched back to midnight and the last forward to
/// 23:59:59. Labels that consolidate to OTHER are ignored.
pub fn build_timeline(events: &[RawEvent], day: NaiveDate) -> Result<SecondTimeline> {
    // (start, end_exclusive, class); pushed in begin order.
    let mut spans: Vec<(usize, usize, ActivityClass)> = Vec::new();
    let mut open: HashMap<String, (usize, ActivityClass)> = HashMap::new();
    let mut day_events: Vec<&RawEvent> = events.iter().filter(|e| e.timestamp.date() == day).collect();
    day_events.sort_by_key(|e| e.timestamp);

    for ev in day_events {
        let Some(class) = consolidate(&ev.label) else {
            continue;
        };
        let key = normalize_label(&ev.label);
        let sec = second_of_day(ev);
        match ev.marker {
            Marker::Begin => {
                if let Some((start, c)) = open.insert(key, (sec, class)) {
                    spans.push((start, sec.max(start + 1), c));
                }
            }
            Marker::End => {
                let (start, c) = open.remove(&key).unwrap_or((0, class));
                spans.push((start, sec.max(start + 1), c));
            }
        }
    }
    let mut still_open: Vec<(usize, ActivityClass)> = open.into_values().collect();
    still_open.sort();
    for (start, c) in still_open {
        spans.push((start, SECONDS_PER_DAY, c));
    }
    if spans.is_empty() {
        return Err(Error::Empty(format!("no activities for day {day}")));
    }
    // Later begins paint over earlier ones.
    spans.sort_by_key(|s| s.0);

    let mut labels = vec![None; SECONDS_PER_DAY];
    for (start, end, c) in spans {
        for slot in &mut labels[start..end.min(SECONDS_PER_DAY)] {
            *slot = Some(c);
        }
    }
    let first = labels.iter().position(Option::is_some).expect("at least one span");
    let last = labels.iter().rposition(Option::is_some).expect("at least one span");
    let (head, tail) = (labels[first], labels[last]);
    labels[..first].fill(head);
    labels[last + 1..].fill(tail);
    SecondTimeline::new(day, labels)
}

/// Replace every OTHER run: the first `ceil(L/2)` seconds take the preceding
/// activity, the rest the following one. Leading or trailing runs take their
/// single neighbour.
pub fn fill_other(mut timeline: SecondTimeline) -> Result<SecondTimeline> {
    let labels = &mut timeline.labels;
    if labels.iter().all(Option::is_none) {
        return Err(Error::Empty(format!(
            "timeline for {} has no labelled seconds",
            timeline.day
        )));
    }
    let n = labels.len();
    let mut i = 0;
    while i < n {
        if labels[i].is_some() {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && labels[i].is_none() {
            i += 1;
        }
        let end = i;
        let before = if start > 0 { labels[start - 1] } else { None };
        let after = if end < n { labels[end] } else { None };
        let (before, after) = match (before, after) {
            (Some(b), Some(a)) => (b, a),
            (Some(b), None) => (b, b),
            (None, Some(a)) => (a, a),
            (None, None) => unreachable!("timeline has a labelled second"),
        };
        let split = start + (end - start).div_ceil(2);
        labels[start..split].fill(Some(before));
        labels[split..end].fill(Some(after));
    }
    Ok(timeline)
}

/// Label each 300-second bin with its predominant class; ties go to the class
/// that appears first within the bin.
pub fn discretize(timeline: &SecondTimeline, day_id: impl Into<String>) -> Result<DailySequence> {
    if let Some(pos) = timeline.labels.iter().position(Option::is_none) {
        return Err(Error::structural(format!(
            "timeline for {} still has OTHER at second {pos}",
            timeline.day
        )));
    }
    let tokens = timeline
        .labels
        .chunks(SECONDS_PER_BIN)
        .map(|window| {
            let mut counts = [0usize; NUM_CLASSES];
            let mut first_seen = [usize::MAX; NUM_CLASSES];
            for (offset, c) in window.iter().flatten().enumerate() {
                let k = c.index();
                counts[k] += 1;
                first_seen[k] = first_seen[k].min(offset);
            }
            let best = (0..NUM_CLASSES)
                .filter(|&k| counts[k] > 0)
                .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(first_seen[b].cmp(&first_seen[a])))
                .expect("window is non-empty");
            ActivityClass::ALL[best]
        })
        .collect();
    DailySequence::new(day_id, tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::log::parse_log;
    use ActivityClass::*;

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2011, 6, 15).unwrap()
    }

    fn events(text: &str) -> Vec<RawEvent> {
        parse_log(text.as_bytes()).unwrap().events
    }

    fn timeline_of(runs: &[(Option<ActivityClass>, usize)]) -> SecondTimeline {
        let labels = runs
            .iter()
            .flat_map(|&(c, n)| std::iter::repeat_n(c, n))
            .collect();
        SecondTimeline { day: day(), labels }
    }

    #[test]
    fn single_sleep_fills_day() {
        let ev = events(
            "2011-06-15 01:00:00 M1 ON Sleep begin\n2011-06-15 09:00:00 M1 OFF Sleep end\n",
        );
        let tl = build_timeline(&ev, day()).unwrap();
        assert!(tl.labels.iter().all(|&l| l == Some(Sleep)));
    }

    #[test]
    fn gap_stays_other() {
        let ev = events(
            "2011-06-15 01:00:00 M1 ON Sleep begin\n\
             2011-06-15 09:00:00 M1 OFF Sleep end\n\
             2011-06-15 10:00:00 M1 ON Relax begin\n\
             2011-06-15 11:00:00 M1 OFF Relax end\n",
        );
        let tl = build_timeline(&ev, day()).unwrap();
        assert_eq!(tl.labels[9 * 3600 - 1], Some(Sleep));
        assert_eq!(tl.labels[9 * 3600], None);
        assert_eq!(tl.labels[10 * 3600 - 1], None);
        assert_eq!(tl.labels[10 * 3600], Some(Rest));
        assert_eq!(tl.labels[SECONDS_PER_DAY - 1], Some(Rest));
        assert_eq!(tl.other_count(), 3600);
    }

    #[test]
    fn later_begin_wins_overlap() {
        let ev = events(
            "2011-06-15 08:00:00 M1 ON Relax begin\n\
             2011-06-15 09:00:00 M1 ON Eat_Breakfast begin\n\
             2011-06-15 09:30:00 M1 OFF Eat_Breakfast end\n\
             2011-06-15 12:00:00 M1 OFF Relax end\n",
        );
        let tl = build_timeline(&ev, day()).unwrap();
        assert_eq!(tl.labels[9 * 3600 - 1], Some(Rest));
        assert_eq!(tl.labels[9 * 3600], Some(Meal));
        assert_eq!(tl.labels[9 * 3600 + 1799], Some(Meal));
        assert_eq!(tl.labels[9 * 3600 + 1800], Some(Rest));
    }

    #[test]
    fn unclosed_and_unopened_markers() {
        // End with no begin opens at midnight; begin with no end runs to 23:59:59.
        let ev = events(
            "2011-06-15 06:00:00 M1 OFF Sleep end\n\
             2011-06-15 06:30:00 M1 ON Toilet begin\n\
             2011-06-15 06:35:00 M1 OFF Toilet end\n\
             2011-06-15 22:00:00 M1 ON Watch_TV begin\n",
        );
        let tl = build_timeline(&ev, day()).unwrap();
        assert_eq!(tl.labels[0], Some(Sleep));
        assert_eq!(tl.labels[6 * 3600 - 1], Some(Sleep));
        assert_eq!(tl.labels[6 * 3600], None);
        assert_eq!(tl.labels[SECONDS_PER_DAY - 1], Some(Rest));
    }

    #[test]
    fn empty_day_is_an_error() {
        let err = build_timeline(&[], day()).unwrap_err();
        assert!(err.to_string().contains("no activities for day"));
        let other_only = events("2011-06-15 06:00:00 M1 ON Juggling begin\n");
        assert!(build_timeline(&other_only, day()).is_err());
    }

    #[test]
    fn fill_even_gap_half_half() {
        let tl = timeline_of(&[(Some(Sleep), 10), (None, 4), (Some(Rest), 10)]);
        let filled = fill_other(tl).unwrap();
        assert_eq!(&filled.labels[10..14], &[Some(Sleep), Some(Sleep), Some(Rest), Some(Rest)]);
    }

    #[test]
    fn fill_odd_gap_favours_predecessor() {
        let tl = timeline_of(&[(Some(Sleep), 10), (None, 5), (Some(Rest), 10)]);
        let filled = fill_other(tl).unwrap();
        let sleeps = filled.labels.iter().filter(|&&l| l == Some(Sleep)).count();
        assert_eq!(sleeps, 13);
        assert_eq!(filled.labels.len() - sleeps, 12);
    }

    #[test]
    fn fill_without_other_is_identity() {
        let tl = timeline_of(&[(Some(Sleep), 10), (Some(Rest), 10)]);
        assert_eq!(fill_other(tl.clone()).unwrap(), tl);
        assert!(fill_other(timeline_of(&[(None, 5)])).is_err());
    }

    fn full_timeline(runs: &[(ActivityClass, usize)]) -> SecondTimeline {
        let mut labels: Vec<Option<ActivityClass>> = runs
            .iter()
            .flat_map(|&(c, n)| std::iter::repeat_n(Some(c), n))
            .collect();
        let last = *labels.last().unwrap();
        labels.resize(SECONDS_PER_DAY, last);
        SecondTimeline::new(day(), labels).unwrap()
    }

    #[test]
    fn discretize_cases() {
        let s = discretize(&full_timeline(&[(Sleep, SECONDS_PER_DAY)]), "d").unwrap();
        assert!(s.tokens().iter().all(|&c| c == Sleep));

        let s = discretize(&full_timeline(&[(Work, 200), (Rest, 100), (Sleep, 1)]), "d").unwrap();
        assert_eq!(s.tokens()[0], Work);

        let s = discretize(&full_timeline(&[(Cook, 150), (Meal, 150), (Sleep, 1)]), "d").unwrap();
        assert_eq!(s.tokens()[0], Cook);
        let s = discretize(&full_timeline(&[(Meal, 150), (Cook, 150), (Sleep, 1)]), "d").unwrap();
        assert_eq!(s.tokens()[0], Meal);

        let s = discretize(&full_timeline(&[(Rest, 100), (Cook, 100), (Rest, 100), (Sleep, 1)]), "d")
            .unwrap();
        assert_eq!(s.tokens()[0], Rest);
    }

    #[test]
    fn discretize_refuses_other() {
        let mut tl = full_timeline(&[(Sleep, SECONDS_PER_DAY)]);
        tl.labels[500] = None;
        assert!(discretize(&tl, "d").is_err());
    }
}
