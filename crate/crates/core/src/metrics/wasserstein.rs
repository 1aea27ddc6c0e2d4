//! Distributional distance between generated and reference day sets.
//!
//! Default construction: for every class take the per-day total time spent in
//! it, compare the two empirical distributions with the 1-D Wasserstein-1
//! distance, and average over the twelve classes. Units are hours.

use serde::{Deserialize, Serialize};

use crate::activity::{DailySequence, BIN_MINUTES, NUM_CLASSES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WdMode {
    /// Mean over classes of W1 between per-day total-duration distributions.
    #[default]
    ClassDuration,
    /// W1 between the pooled token-id histograms, ids taken as points on a line.
    TokenHistogram,
}

impl std::str::FromStr for WdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class-duration" => Ok(WdMode::ClassDuration),
            "token-histogram" => Ok(WdMode::TokenHistogram),
            other => Err(Error::Config(format!("unknown wd mode `{other}`"))),
        }
    }
}

/// W1 between two empirical distributions given as (unsorted) samples.
///
/// Integrates |F - G| over the merged support, so the sample counts may differ.
pub fn wasserstein_1d(u: &[f64], v: &[f64]) -> f64 {
    assert!(!u.is_empty() && !v.is_empty(), "empirical distributions must be non-empty");
    let mut u = u.to_vec();
    let mut v = v.to_vec();
    u.sort_by(f64::total_cmp);
    v.sort_by(f64::total_cmp);
    let mut all: Vec<f64> = u.iter().chain(&v).copied().collect();
    all.sort_by(f64::total_cmp);

    let (nu, nv) = (u.len() as f64, v.len() as f64);
    let (mut iu, mut iv) = (0usize, 0usize);
    let mut total = 0.0;
    for w in all.windows(2) {
        let x = w[0];
        while iu < u.len() && u[iu] <= x {
            iu += 1;
        }
        while iv < v.len() && v[iv] <= x {
            iv += 1;
        }
        let cdf_gap = (iu as f64 / nu - iv as f64 / nv).abs();
        total += cdf_gap * (w[1] - w[0]);
    }
    total
}

fn class_hours(days: &[DailySequence], bin_minutes: f64) -> Vec<Vec<f64>> {
    let mut per_class: Vec<Vec<f64>> = (0..NUM_CLASSES).map(|_| Vec::with_capacity(days.len())).collect();
    for d in days {
        let mut bins = [0usize; NUM_CLASSES];
        for c in d.tokens() {
            bins[c.index()] += 1;
        }
        for (k, &n) in bins.iter().enumerate() {
            per_class[k].push(n as f64 * bin_minutes / 60.0);
        }
    }
    per_class
}

/// WD with an explicit bin width in minutes (five for real days).
pub fn wasserstein_with_bin_minutes(
    generated: &[DailySequence],
    reference: &[DailySequence],
    bin_minutes: f64,
    mode: WdMode,
) -> Result<f64> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::Empty("wasserstein distance needs two non-empty sets".into()));
    }
    match mode {
        WdMode::ClassDuration => {
            let g = class_hours(generated, bin_minutes);
            let r = class_hours(reference, bin_minutes);
            let sum: f64 = g.iter().zip(&r).map(|(a, b)| wasserstein_1d(a, b)).sum();
            Ok(sum / NUM_CLASSES as f64)
        }
        WdMode::TokenHistogram => {
            let ids = |days: &[DailySequence]| -> Vec<f64> {
                days.iter()
                    .flat_map(|d| d.tokens().iter().map(|c| c.index() as f64))
                    .collect()
            };
            Ok(wasserstein_1d(&ids(generated), &ids(reference)))
        }
    }
}

pub fn wasserstein(generated: &[DailySequence], reference: &[DailySequence], mode: WdMode) -> Result<f64> {
    wasserstein_with_bin_minutes(generated, reference, BIN_MINUTES as f64, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activity::ActivityClass::{self, *};
    use crate::activity::SEQ_LEN;

    fn day(runs: &[(ActivityClass, usize)]) -> DailySequence {
        let tokens: Vec<_> = runs
            .iter()
            .flat_map(|&(c, n)| std::iter::repeat_n(c, n))
            .collect();
        DailySequence::new("d", tokens).unwrap()
    }

    /// Sorted matching for equal-size samples: mean |u_(i) - v_(i)|.
    fn sorted_matching(u: &[f64], v: &[f64]) -> f64 {
        let mut u = u.to_vec();
        let mut v = v.to_vec();
        u.sort_by(f64::total_cmp);
        v.sort_by(f64::total_cmp);
        u.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum::<f64>() / u.len() as f64
    }

    #[test]
    fn one_d_matches_sorted_matching() {
        let u = [3.0, 1.0, 4.0, 1.5, 9.0];
        let v = [2.0, 7.0, 1.0, 8.0, 2.5];
        assert!((wasserstein_1d(&u, &v) - sorted_matching(&u, &v)).abs() < 1e-12);
        // Unequal counts: point mass at 0 vs uniform on {0, 1}.
        assert!((wasserstein_1d(&[0.0], &[0.0, 1.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identical_sets_are_zero() {
        let a = vec![day(&[(Sleep, 96), (Rest, 192)]), day(&[(Sleep, 100), (Work, 188)])];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(wasserstein(&a, &b, WdMode::ClassDuration).unwrap(), 0.0);
        assert_eq!(wasserstein(&a, &b, WdMode::TokenHistogram).unwrap(), 0.0);
    }

    #[test]
    fn one_hour_of_sleep_moved_to_rest() {
        let generated = vec![day(&[(Sleep, 96), (Rest, 192)])];
        let reference = vec![day(&[(Sleep, 108), (Rest, 180)])];
        // Sleep and Rest each shift by one hour; the other ten classes agree.
        let expected = 2.0 / 12.0;
        let wd = wasserstein(&generated, &reference, WdMode::ClassDuration).unwrap();
        assert!((wd - expected).abs() < 1e-12, "{wd}");
        let back = wasserstein(&reference, &generated, WdMode::ClassDuration).unwrap();
        assert_eq!(wd, back);
    }

    #[test]
    fn doubling_bin_width_doubles_distance() {
        let g = vec![day(&[(Sleep, 90), (Rest, 198)]), day(&[(Sleep, 120), (Meal, 168)])];
        let r = vec![day(&[(Sleep, 100), (Rest, 188)])];
        let w5 = wasserstein_with_bin_minutes(&g, &r, 5.0, WdMode::ClassDuration).unwrap();
        let w10 = wasserstein_with_bin_minutes(&g, &r, 10.0, WdMode::ClassDuration).unwrap();
        assert!((w10 - 2.0 * w5).abs() < 1e-12);
    }

    #[test]
    fn empty_set_is_an_error() {
        let r = vec![DailySequence::constant("r", Rest)];
        assert!(wasserstein(&[], &r, WdMode::ClassDuration).is_err());
        assert_eq!(r[0].tokens().len(), SEQ_LEN);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("token-histogram".parse::<WdMode>().unwrap(), WdMode::TokenHistogram);
        assert!("emd".parse::<WdMode>().is_err());
    }
}
