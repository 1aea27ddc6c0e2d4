use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{distinct_n, knn_analysis, real_score, sam_distance, wasserstein, KnnRecord, WdMode};
use crate::activity::{DailySequence, SEQ_LEN};
use crate::error::{Error, Result};
use crate::rules::PlausibilityRuleSet;

/// Masked fraction above which a conditional pair enters the SAM-90 slice.
pub const SAM90_THRESHOLD: f64 = 0.9;

/// Day id for a conditional generation: `<reference id>#m<masked bins>`.
pub fn conditional_day_id(reference_id: &str, masked_bins: usize) -> String {
    format!("{reference_id}#m{masked_bins}")
}

/// Inverse of [`conditional_day_id`]; `None` for ids without the suffix.
pub fn parse_conditional_day_id(id: &str) -> Option<(&str, usize)> {
    let (base, tail) = id.rsplit_once("#m")?;
    let masked = tail.parse().ok()?;
    (masked <= SEQ_LEN).then_some((base, masked))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub distinct_ns: Vec<usize>,
    pub k: usize,
    pub wd_mode: WdMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            distinct_ns: vec![10, 15],
            k: 5,
            wd_mode: WdMode::ClassDuration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rounds: usize,
    pub generated: usize,
    pub wd: f64,
    /// Mean over generated days paired with a reference day; `None` if none pair.
    pub sam: Option<f64>,
    pub sam90: Option<f64>,
    pub real_score: f64,
    pub distinct: BTreeMap<usize, f64>,
    pub knn: Option<KnnRecord>,
}

struct RoundMetrics {
    wd: f64,
    sam: Option<f64>,
    sam90: Option<f64>,
    real: f64,
    distinct: Vec<f64>,
}

/// Pairs each generated day with a reference day, by conditional id or by
/// plain id equality, and reports the masked fraction of the pair.
fn pair_reference<'a>(
    day: &DailySequence,
    by_id: &HashMap<&str, &'a DailySequence>,
) -> Option<(&'a DailySequence, f64)> {
    if let Some((base, masked)) = parse_conditional_day_id(day.day_id()) {
        if let Some(r) = by_id.get(base) {
            return Some((r, masked as f64 / SEQ_LEN as f64));
        }
    }
    by_id.get(day.day_id()).map(|r| (*r, 0.0))
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn round_metrics(
    round: &[DailySequence],
    reference: &[DailySequence],
    by_id: &HashMap<&str, &DailySequence>,
    rules: &PlausibilityRuleSet,
    opts: &EvalOptions,
) -> Result<RoundMetrics> {
    let pairs: Vec<(f64, f64)> = round
        .par_iter()
        .filter_map(|g| pair_reference(g, by_id).map(|(r, frac)| (sam_distance(g, r), frac)))
        .collect();
    let sams: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let sams90: Vec<f64> = pairs
        .iter()
        .filter(|p| p.1 > SAM90_THRESHOLD)
        .map(|p| p.0)
        .collect();
    Ok(RoundMetrics {
        wd: wasserstein(round, reference, opts.wd_mode)?,
        sam: mean(&sams),
        sam90: mean(&sams90),
        real: real_score(round, rules),
        distinct: opts.distinct_ns.iter().map(|&n| distinct_n(round, n)).collect(),
    })
}

/// Metrics per generation round, averaged over rounds. kNN uses all rounds
/// pooled; it is skipped when `train` is empty.
pub fn evaluate(
    rounds: &[Vec<DailySequence>],
    reference: &[DailySequence],
    train: &[DailySequence],
    rules: &PlausibilityRuleSet,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if rounds.is_empty() || rounds.iter().any(|r| r.is_empty()) {
        return Err(Error::Empty("no generated days to evaluate".into()));
    }
    if reference.is_empty() {
        return Err(Error::Empty("no reference days to evaluate against".into()));
    }
    if let Some(&n) = opts.distinct_ns.iter().find(|&&n| n == 0 || n > SEQ_LEN) {
        return Err(Error::Config(format!("distinct n must be in 1..={SEQ_LEN}, got {n}")));
    }
    let by_id: HashMap<&str, &DailySequence> = reference.iter().map(|d| (d.day_id(), d)).collect();

    let per_round = rounds
        .iter()
        .map(|r| round_metrics(r, reference, &by_id, rules, opts))
        .collect::<Result<Vec<_>>>()?;
    let avg = |f: &dyn Fn(&RoundMetrics) -> f64| per_round.iter().map(f).sum::<f64>() / per_round.len() as f64;
    let avg_opt = |f: &dyn Fn(&RoundMetrics) -> Option<f64>| {
        let v: Vec<f64> = per_round.iter().filter_map(f).collect();
        mean(&v)
    };

    let distinct = opts
        .distinct_ns
        .iter()
        .enumerate()
        .map(|(i, &n)| (n, avg(&|m| m.distinct[i])))
        .collect();

    let knn = if train.is_empty() {
        None
    } else {
        let pooled: Vec<DailySequence> = rounds.iter().flatten().cloned().collect();
        Some(knn_analysis(&pooled, train, opts.k.min(train.len()))?)
    };

    let report = EvalReport {
        rounds: rounds.len(),
        generated: rounds.iter().map(Vec::len).sum(),
        wd: avg(&|m| m.wd),
        sam: avg_opt(&|m| m.sam),
        sam90: avg_opt(&|m| m.sam90),
        real_score: avg(&|m| m.real),
        distinct,
        knn,
    };
    report.validate()?;
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "na".to_string(), |x| x.to_string())
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        let mut values = vec![self.wd, self.real_score];
        values.extend(self.sam);
        values.extend(self.sam90);
        values.extend(self.distinct.values());
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("evaluation produced a non-finite metric"));
        }
        if !(0.0..=1.0).contains(&self.real_score)
            || self.distinct.values().any(|d| !(0.0..=1.0).contains(d))
        {
            return Err(Error::numerical("evaluation metric out of bounds"));
        }
        Ok(())
    }

    /// Ordered `(key, value)` pairs shared by the text and CSV forms.
    pub fn fields(&self) -> Vec<(String, String)> {
        let mut f = vec![
            ("rounds".to_string(), self.rounds.to_string()),
            ("generated".to_string(), self.generated.to_string()),
            ("wd".to_string(), self.wd.to_string()),
            ("sam".to_string(), fmt_opt(self.sam)),
            ("sam90".to_string(), fmt_opt(self.sam90)),
            ("real_score".to_string(), self.real_score.to_string()),
        ];
        for (n, d) in &self.distinct {
            f.push((format!("distinct_{n}"), d.to_string()));
        }
        match &self.knn {
            Some(k) => {
                f.push(("knn_k".into(), k.k.to_string()));
                f.push(("knn_exact_matches".into(), k.exact_matches.to_string()));
                f.push(("knn_top1_mean".into(), k.top1_mean.to_string()));
                f.push(("knn_top1_median".into(), k.top1_median.to_string()));
                f.push(("knn_top1_min".into(), k.top1_min.to_string()));
                f.push(("knn_topk_mean".into(), k.topk_mean.to_string()));
            }
            None => {
                for key in ["knn_k", "knn_exact_matches", "knn_top1_mean", "knn_top1_median", "knn_top1_min", "knn_topk_mean"] {
                    f.push((key.into(), "na".into()));
                }
            }
        }
        f
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.fields() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn csv_header(&self) -> String {
        let keys: Vec<String> = self.fields().into_iter().map(|f| f.0).collect();
        format!("label,{}", keys.join(","))
    }

    pub fn csv_row(&self, label: &str) -> String {
        let vals: Vec<String> = self.fields().into_iter().map(|f| f.1).collect();
        format!("{label},{}", vals.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activity::ActivityClass;
    use crate::ingest::{synth_generate, SynthProfile};

    #[test]
    fn conditional_ids() {
        let id = conditional_day_id("apt_2011-06-15", 270);
        assert_eq!(parse_conditional_day_id(&id), Some(("apt_2011-06-15", 270)));
        assert_eq!(parse_conditional_day_id("plain"), None);
        assert_eq!(parse_conditional_day_id("x#m999"), None);
    }

    #[test]
    fn identity_composition() {
        let days = synth_generate(20, 4, SynthProfile::Mixed);
        let rules = PlausibilityRuleSet::table1();
        let r = evaluate(std::slice::from_ref(&days), &days, &days, &rules, &EvalOptions::default()).unwrap();
        assert_eq!(r.wd, 0.0);
        assert_eq!(r.sam, Some(0.0));
        assert_eq!(r.sam90, None);
        assert_eq!(r.real_score, 1.0);
        assert_eq!(r.knn.as_ref().unwrap().exact_matches, 20);
    }

    #[test]
    fn sam90_slice_uses_heavily_masked_pairs() {
        let refs = synth_generate(2, 6, SynthProfile::Mixed);
        let other = DailySequence::constant("x", ActivityClass::Rest);
        let mut g1 = other.clone();
        g1.set_day_id(conditional_day_id(refs[0].day_id(), 280));
        let mut g2 = refs[1].clone();
        g2.set_day_id(conditional_day_id(refs[1].day_id(), 100));
        let r = evaluate(
            &[vec![g1.clone(), g2]],
            &refs,
            &[],
            &PlausibilityRuleSet::table1(),
            &EvalOptions::default(),
        )
        .unwrap();
        let s1 = sam_distance(&g1, &refs[0]);
        assert_eq!(r.sam90, Some(s1));
        assert_eq!(r.sam, Some(s1 / 2.0));
        assert!(r.knn.is_none());
    }

    #[test]
    fn rounds_are_averaged() {
        let refs = synth_generate(10, 1, SynthProfile::Mixed);
        let a = synth_generate(10, 2, SynthProfile::Worker);
        let b = synth_generate(10, 3, SynthProfile::Homebody);
        let rules = PlausibilityRuleSet::table1();
        let o = EvalOptions::default();
        let ra = evaluate(std::slice::from_ref(&a), &refs, &[], &rules, &o).unwrap();
        let rb = evaluate(std::slice::from_ref(&b), &refs, &[], &rules, &o).unwrap();
        let both = evaluate(&[a, b], &refs, &[], &rules, &o).unwrap();
        assert!((both.wd - (ra.wd + rb.wd) / 2.0).abs() < 1e-12);
        assert!((both.distinct[&10] - (ra.distinct[&10] + rb.distinct[&10]) / 2.0).abs() < 1e-12);
        assert_eq!(both.rounds, 2);
    }

    #[test]
    fn serialization_is_flat() {
        let days = synth_generate(12, 4, SynthProfile::Mixed);
        let r = evaluate(std::slice::from_ref(&days), &days, &days, &PlausibilityRuleSet::table1(), &EvalOptions::default()).unwrap();
        let text = r.to_text();
        assert!(text.contains("wd = 0\n"));
        assert!(text.contains("sam90 = na\n"));
        assert!(text.contains("knn_exact_matches = 12\n"));
        let header = r.csv_header();
        let row = r.csv_row("run");
        assert_eq!(header.split(',').count(), row.split(',').count());
        assert!(header.starts_with("label,rounds,generated,wd,sam,sam90,real_score,distinct_10,distinct_15"));
    }

    #[test]
    fn empty_inputs() {
        let days = synth_generate(3, 4, SynthProfile::Mixed);
        let rules = PlausibilityRuleSet::table1();
        let o = EvalOptions::default();
        assert!(evaluate(&[], &days, &[], &rules, &o).is_err());
        assert!(evaluate(std::slice::from_ref(&days), &[], &[], &rules, &o).is_err());
    }
}
