//! Activity vocabulary and the fixed-length daily sequence representation.
//!
//! A day is 288 five-minute bins. Each bin holds one of twelve consolidated
//! activity classes. Condition sequences additionally use [`MASK_ID`] for bins
//! the generator is free to fill.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bins per day.
pub const SEQ_LEN: usize = 288;
/// Minutes covered by one bin.
pub const BIN_MINUTES: u32 = 5;
/// Number of generatable classes.
pub const NUM_CLASSES: usize = 12;
/// Token id reserved for masked bins in condition sequences.
pub const MASK_ID: u8 = 12;
/// Vocabulary size seen by the model (classes plus mask).
pub const VOCAB_SIZE: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum ActivityClass {
    Sleep = 0,
    Outing = 1,
    Rest = 2,
    Work = 3,
    Hygiene = 4,
    Toilet = 5,
    Dress = 6,
    Cook = 7,
    Meal = 8,
    Chore = 9,
    Snack = 10,
    Medicine = 11,
}

impl ActivityClass {
    pub const ALL: [ActivityClass; NUM_CLASSES] = [
        ActivityClass::Sleep,
        ActivityClass::Outing,
        ActivityClass::Rest,
        ActivityClass::Work,
        ActivityClass::Hygiene,
        ActivityClass::Toilet,
        ActivityClass::Dress,
        ActivityClass::Cook,
        ActivityClass::Meal,
        ActivityClass::Chore,
        ActivityClass::Snack,
        ActivityClass::Medicine,
    ];

    #[inline]
    pub fn id(self) -> u8 {
        self as u8
    }

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_id(id: u8) -> Option<ActivityClass> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivityClass::Sleep => "Sleep",
            ActivityClass::Outing => "Outing",
            ActivityClass::Rest => "Rest",
            ActivityClass::Work => "Work",
            ActivityClass::Hygiene => "Hygiene",
            ActivityClass::Toilet => "Toilet",
            ActivityClass::Dress => "Dress",
            ActivityClass::Cook => "Cook",
            ActivityClass::Meal => "Meal",
            ActivityClass::Chore => "Chore",
            ActivityClass::Snack => "Snack",
            ActivityClass::Medicine => "Medicine",
        }
    }
}

impl fmt::Display for ActivityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivityClass {
    type Err = Error;

    /// Case-insensitive class name.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::structural(format!("unknown activity class `{s}`")))
    }
}

/// One day of activity at five-minute resolution.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DailySequence {
    day_id: String,
    tokens: Vec<ActivityClass>,
}

impl DailySequence {
    pub fn new(day_id: impl Into<String>, tokens: Vec<ActivityClass>) -> Result<Self> {
        if tokens.len() != SEQ_LEN {
            return Err(Error::structural(format!(
                "daily sequence must have {SEQ_LEN} tokens, got {}",
                tokens.len()
            )));
        }
        Ok(DailySequence {
            day_id: day_id.into(),
            tokens,
        })
    }

    pub fn from_ids(day_id: impl Into<String>, ids: &[u8]) -> Result<Self> {
        let tokens = ids
            .iter()
            .map(|&id| {
                ActivityClass::from_id(id)
                    .ok_or_else(|| Error::structural(format!("token id {id} is not an activity class")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(day_id, tokens)
    }

    /// A day filled with a single class.
    pub fn constant(day_id: impl Into<String>, class: ActivityClass) -> Self {
        DailySequence {
            day_id: day_id.into(),
            tokens: vec![class; SEQ_LEN],
        }
    }

    pub fn day_id(&self) -> &str {
        &self.day_id
    }

    pub fn set_day_id(&mut self, id: impl Into<String>) {
        self.day_id = id.into();
    }

    pub fn tokens(&self) -> &[ActivityClass] {
        &self.tokens
    }

    pub fn ids(&self) -> Vec<u8> {
        self.tokens.iter().map(|c| c.id()).collect()
    }

    pub fn to_intervals(&self) -> Vec<Interval> {
        to_intervals(&self.tokens)
    }

    pub fn hamming(&self, other: &DailySequence) -> usize {
        self.tokens
            .iter()
            .zip(&other.tokens)
            .filter(|(a, b)| a != b)
            .count()
    }

    /// Minutes spent in each class.
    pub fn class_minutes(&self) -> [u32; NUM_CLASSES] {
        let mut totals = [0u32; NUM_CLASSES];
        for c in &self.tokens {
            totals[c.index()] += BIN_MINUTES;
        }
        totals
    }
}

/// A maximal run `[start_bin, end_bin)` of one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interval {
    pub start_bin: usize,
    pub end_bin: usize,
    pub class: ActivityClass,
}

impl Interval {
    pub fn new(start_bin: usize, end_bin: usize, class: ActivityClass) -> Self {
        Interval {
            start_bin,
            end_bin,
            class,
        }
    }

    pub fn len(&self) -> usize {
        self.end_bin - self.start_bin
    }

    pub fn is_empty(&self) -> bool {
        self.end_bin <= self.start_bin
    }
}

/// Run-length view of a token slice.
pub fn to_intervals(tokens: &[ActivityClass]) -> Vec<Interval> {
    let mut out: Vec<Interval> = Vec::new();
    for (i, &c) in tokens.iter().enumerate() {
        match out.last_mut() {
            Some(last) if last.class == c => last.end_bin = i + 1,
            _ => out.push(Interval::new(i, i + 1, c)),
        }
    }
    out
}

/// Rebuild a day from intervals that tile `[0, 288)` in order.
///
/// Adjacent intervals of the same class are accepted and simply concatenate.
pub fn from_intervals(day_id: impl Into<String>, ivals: &[Interval]) -> Result<DailySequence> {
    let mut tokens = Vec::with_capacity(SEQ_LEN);
    let mut cursor = 0usize;
    for (i, iv) in ivals.iter().enumerate() {
        if iv.end_bin > SEQ_LEN || iv.start_bin >= iv.end_bin {
            return Err(Error::structural(format!(
                "interval #{i} [{}, {}) {} is out of range",
                iv.start_bin, iv.end_bin, iv.class
            )));
        }
        if iv.start_bin < cursor {
            return Err(Error::structural(format!(
                "interval #{i} [{}, {}) {} overlaps the previous interval ending at {cursor}",
                iv.start_bin, iv.end_bin, iv.class
            )));
        }
        if iv.start_bin > cursor {
            return Err(Error::structural(format!(
                "gap before interval #{i} [{}, {}) {}: bins {cursor}..{} are uncovered",
                iv.start_bin, iv.end_bin, iv.class, iv.start_bin
            )));
        }
        tokens.extend(std::iter::repeat_n(iv.class, iv.len()));
        cursor = iv.end_bin;
    }
    if cursor != SEQ_LEN {
        return Err(Error::structural(format!(
            "intervals end at bin {cursor}, expected {SEQ_LEN}"
        )));
    }
    DailySequence::new(day_id, tokens)
}

/// Hamming distance between two equal-length token slices.
pub fn hamming<T: PartialEq>(a: &[T], b: &[T]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::structural(format!(
            "hamming distance needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count())
}

/// Which bins are pre-scheduled, and with what.
///
/// `Some(class)` marks an unmasked bin fixed to `class`; `None` is masked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionMask {
    fixed: Vec<Option<ActivityClass>>,
}

impl ConditionMask {
    pub fn fully_masked() -> Self {
        ConditionMask {
            fixed: vec![None; SEQ_LEN],
        }
    }

    pub fn from_fixed(fixed: Vec<Option<ActivityClass>>) -> Result<Self> {
        if fixed.len() != SEQ_LEN {
            return Err(Error::structural(format!(
                "condition mask must cover {SEQ_LEN} bins, got {}",
                fixed.len()
            )));
        }
        Ok(ConditionMask { fixed })
    }

    /// Unmask the bins flagged `true`, taking their activity from `seq`.
    pub fn from_sequence(seq: &DailySequence, flags: &[bool]) -> Result<Self> {
        if flags.len() != SEQ_LEN {
            return Err(Error::structural(format!(
                "mask flags must cover {SEQ_LEN} bins, got {}",
                flags.len()
            )));
        }
        let fixed = seq
            .tokens()
            .iter()
            .zip(flags)
            .map(|(&c, &keep)| keep.then_some(c))
            .collect();
        Ok(ConditionMask { fixed })
    }

    /// Fix `[start_bin, end_bin)` to `class`.
    pub fn fix_range(&mut self, start_bin: usize, end_bin: usize, class: ActivityClass) -> Result<()> {
        if start_bin >= end_bin || end_bin > SEQ_LEN {
            return Err(Error::structural(format!(
                "invalid bin range [{start_bin}, {end_bin})"
            )));
        }
        for slot in &mut self.fixed[start_bin..end_bin] {
            *slot = Some(class);
        }
        Ok(())
    }

    pub fn fixed(&self, bin: usize) -> Option<ActivityClass> {
        self.fixed[bin]
    }

    pub fn fixed_slots(&self) -> &[Option<ActivityClass>] {
        &self.fixed
    }

    pub fn flags(&self) -> Vec<bool> {
        self.fixed.iter().map(Option::is_some).collect()
    }

    pub fn unmasked_count(&self) -> usize {
        self.fixed.iter().filter(|s| s.is_some()).count()
    }

    pub fn masked_fraction(&self) -> f64 {
        1.0 - self.unmasked_count() as f64 / self.fixed.len() as f64
    }

    pub fn is_fully_masked(&self) -> bool {
        self.unmasked_count() == 0
    }

    /// Condition token ids: the fixed class id, or [`MASK_ID`].
    pub fn condition_ids(&self) -> Vec<u8> {
        self.fixed
            .iter()
            .map(|s| s.map_or(MASK_ID, ActivityClass::id))
            .collect()
    }

    /// True when `seq` agrees with every fixed bin.
    pub fn is_satisfied_by(&self, seq: &DailySequence) -> bool {
        self.fixed
            .iter()
            .zip(seq.tokens())
            .all(|(f, &t)| f.is_none_or(|c| c == t))
    }
}

/// `HH:MM` for a bin boundary; bin 288 renders as `24:00`.
pub fn format_bin_time(bin: usize) -> String {
    let minutes = bin as u32 * BIN_MINUTES;
    format!("{:02}:{:02}", minutes / 60, minutes % 60)
}

/// Parse `HH:MM` on a bin boundary into a bin index in `0..=288`.
pub fn parse_bin_time(s: &str) -> Result<usize> {
    let s = s.trim();
    let (h, m) = s
        .split_once(':')
        .ok_or_else(|| Error::structural(format!("time `{s}` is not HH:MM")))?;
    let h: u32 = h
        .parse()
        .map_err(|_| Error::structural(format!("bad hour in `{s}`")))?;
    let m: u32 = m
        .parse()
        .map_err(|_| Error::structural(format!("bad minute in `{s}`")))?;
    if m >= 60 || h > 24 || (h == 24 && m != 0) {
        return Err(Error::structural(format!("time `{s}` is outside 00:00..24:00")));
    }
    let total = h * 60 + m;
    if total % BIN_MINUTES != 0 {
        return Err(Error::structural(format!(
            "time `{s}` is not on a {BIN_MINUTES}-minute boundary"
        )));
    }
    Ok((total / BIN_MINUTES) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ActivityClass::*;

    fn seq_of(runs: &[(ActivityClass, usize)]) -> DailySequence {
        let tokens = runs
            .iter()
            .flat_map(|&(c, n)| std::iter::repeat_n(c, n))
            .collect();
        DailySequence::new("t", tokens).unwrap()
    }

    #[test]
    fn id_name_bijection() {
        for (i, c) in ActivityClass::ALL.iter().enumerate() {
            assert_eq!(c.id() as usize, i);
            assert_eq!(ActivityClass::from_id(c.id()), Some(*c));
            assert_eq!(c.name().parse::<ActivityClass>().unwrap(), *c);
            assert_eq!(c.name().to_uppercase().parse::<ActivityClass>().unwrap(), *c);
        }
        assert_eq!(ActivityClass::from_id(MASK_ID), None);
    }

    #[test]
    fn rejects_wrong_length_and_mask() {
        assert!(DailySequence::new("x", vec![Sleep; 287]).is_err());
        let mut ids = vec![0u8; SEQ_LEN];
        ids[5] = MASK_ID;
        assert!(DailySequence::from_ids("x", &ids).is_err());
    }

    #[test]
    fn constant_day_is_one_interval() {
        let s = DailySequence::constant("d", Sleep);
        assert_eq!(s.to_intervals(), vec![Interval::new(0, 288, Sleep)]);
    }

    #[test]
    fn three_runs() {
        let s = seq_of(&[(Sleep, 96), (Rest, 96), (Sleep, 96)]);
        assert_eq!(
            s.to_intervals(),
            vec![
                Interval::new(0, 96, Sleep),
                Interval::new(96, 192, Rest),
                Interval::new(192, 288, Sleep)
            ]
        );
    }

    #[test]
    fn from_intervals_cases() {
        let s = from_intervals("w", &[Interval::new(0, 288, Work)]).unwrap();
        assert!(s.tokens().iter().all(|&c| c == Work));

        let s = from_intervals("d", &[Interval::new(0, 100, Sleep), Interval::new(100, 288, Rest)])
            .unwrap();
        assert_eq!(s, seq_of(&[(Sleep, 100), (Rest, 188)]).with_id("d"));

        let err = from_intervals("d", &[Interval::new(0, 100, Sleep), Interval::new(90, 288, Rest)])
            .unwrap_err();
        assert!(err.to_string().contains("interval #1"), "{err}");
        assert!(err.to_string().contains("overlap"), "{err}");

        let err = from_intervals("d", &[Interval::new(0, 100, Sleep), Interval::new(110, 288, Rest)])
            .unwrap_err();
        assert!(err.to_string().contains("gap"), "{err}");
        assert!(from_intervals("d", &[Interval::new(0, 100, Sleep)]).is_err());
        assert!(from_intervals("d", &[Interval::new(0, 289, Sleep)]).is_err());
    }

    impl DailySequence {
        fn with_id(mut self, id: &str) -> Self {
            self.day_id = id.to_string();
            self
        }
    }

    #[test]
    fn hamming_cases() {
        let a = DailySequence::constant("a", Sleep);
        let b = DailySequence::constant("b", Rest);
        assert_eq!(a.hamming(&a), 0);
        assert_eq!(a.hamming(&b), 288);
        assert!(hamming(&[1, 2], &[1]).is_err());

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        use rand::{seq::index::sample, Rng, SeedableRng};
        let base: Vec<ActivityClass> = (0..SEQ_LEN)
            .map(|_| ActivityClass::ALL[rng.random_range(0..NUM_CLASSES)])
            .collect();
        let mut mutated = base.clone();
        for i in sample(&mut rng, SEQ_LEN, 7) {
            mutated[i] = ActivityClass::ALL[(mutated[i].index() + 1 + rng.random_range(0..11)) % 12];
        }
        assert_eq!(hamming(&base, &mutated).unwrap(), 7);
    }

    #[test]
    fn bin_times() {
        assert_eq!(format_bin_time(0), "00:00");
        assert_eq!(format_bin_time(96), "08:00");
        assert_eq!(format_bin_time(288), "24:00");
        assert_eq!(parse_bin_time("23:00").unwrap(), 276);
        assert_eq!(parse_bin_time("24:00").unwrap(), 288);
        assert!(parse_bin_time("25:00").is_err());
        assert!(parse_bin_time("10:03").is_err());
        assert!(parse_bin_time("24:05").is_err());
        assert!(parse_bin_time("1000").is_err());
    }

    #[test]
    fn condition_mask_ids() {
        let day = seq_of(&[(Sleep, 100), (Rest, 188)]);
        let mut flags = vec![false; SEQ_LEN];
        flags[3] = true;
        flags[150] = true;
        let m = ConditionMask::from_sequence(&day, &flags).unwrap();
        let ids = m.condition_ids();
        assert_eq!(ids[3], Sleep.id());
        assert_eq!(ids[150], Rest.id());
        assert_eq!(ids.iter().filter(|&&i| i == MASK_ID).count(), 286);
        assert_eq!(m.flags(), flags);
        assert!(m.is_satisfied_by(&day));
        assert!(!m.is_satisfied_by(&DailySequence::constant("x", Work)));
        assert!(ConditionMask::fully_masked().is_fully_masked());
    }

    fn arb_tokens() -> impl Strategy<Value = Vec<ActivityClass>> {
        // Runs of random lengths give realistic interval counts.
        prop::collection::vec((0u8..12, 1usize..40), 1..60).prop_map(|runs| {
            let mut v: Vec<ActivityClass> = runs
                .into_iter()
                .flat_map(|(c, n)| std::iter::repeat_n(ActivityClass::from_id(c).unwrap(), n))
                .collect();
            v.resize(SEQ_LEN, v.last().copied().unwrap_or(Sleep));
            v
        })
    }

    proptest! {
        #[test]
        fn interval_round_trip(tokens in arb_tokens()) {
            let s = DailySequence::new("p", tokens).unwrap();
            let ivals = s.to_intervals();
            prop_assert_eq!(ivals.first().unwrap().start_bin, 0);
            prop_assert_eq!(ivals.last().unwrap().end_bin, SEQ_LEN);
            for w in ivals.windows(2) {
                prop_assert_eq!(w[0].end_bin, w[1].start_bin);
                prop_assert_ne!(w[0].class, w[1].class);
            }
            prop_assert_eq!(from_intervals("p", &ivals).unwrap(), s);
        }

        #[test]
        fn hamming_metric_axioms(a in arb_tokens(), b in arb_tokens(), c in arb_tokens()) {
            let ab = hamming(&a, &b).unwrap();
            prop_assert_eq!(ab, hamming(&b, &a).unwrap());
            prop_assert_eq!(hamming(&a, &a).unwrap(), 0);
            prop_assert_eq!(ab == 0, a == b);
            prop_assert!(hamming(&a, &c).unwrap() <= ab + hamming(&b, &c).unwrap());
        }
    }
}
