//! `--fix "HH:MM-HH:MM=Activity"` specs.

use anyhow::{anyhow, bail, Context};
use oracle_core::activity::parse_bin_time;
use oracle_core::{ActivityClass, ConditionMask};

/// Parses one spec into (start bin, end bin, class). Times must sit on
/// five-minute boundaries; nothing is rounded.
pub fn parse_fix(spec: &str) -> anyhow::Result<(usize, usize, ActivityClass)> {
    let (span, class) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("fix spec {spec:?}: expected HH:MM-HH:MM=Activity"))?;
    let (a, b) = span
        .split_once('-')
        .ok_or_else(|| anyhow!("fix spec {spec:?}: expected `-` between times"))?;
    let start = parse_bin_time(a.trim()).with_context(|| format!("fix spec {spec:?}"))?;
    let end = parse_bin_time(b.trim()).with_context(|| format!("fix spec {spec:?}"))?;
    if start >= end {
        bail!("fix spec {spec:?}: start must precede end");
    }
    let class: ActivityClass = class.trim().parse().with_context(|| format!("fix spec {spec:?}"))?;
    Ok((start, end, class))
}

/// Combines specs into one mask. Overlaps must agree on the activity.
pub fn mask_from_specs(specs: &[String]) -> anyhow::Result<ConditionMask> {
    let mut mask = ConditionMask::fully_masked();
    for spec in specs {
        let (start, end, class) = parse_fix(spec)?;
        if let Some(bin) = (start..end).find(|&i| mask.fixed(i).is_some_and(|c| c != class)) {
            bail!("fix spec {spec:?} conflicts with an earlier spec at bin {bin}");
        }
        mask.fix_range(start, end, class)?;
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn late_evening_sleep() {
        let (s, e, c) = parse_fix("23:00-24:00=Sleep").unwrap();
        assert_eq!((s, e, c), (276, 288, ActivityClass::Sleep));
        let m = mask_from_specs(&["23:00-24:00=Sleep".into(), "08:00-08:30=Meal".into()]).unwrap();
        assert_eq!(m.unmasked_count(), 18);
    }

    #[test]
    fn rejects_bad_specs() {
        for bad in [
            "25:00-26:00=Sleep",
            "08:03-09:00=Sleep",
            "09:00-08:00=Sleep",
            "08:00-08:00=Sleep",
            "08:00-09:00",
            "08:00=Sleep",
            "08:00-09:00=Nap",
        ] {
            assert!(parse_fix(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn overlaps_must_agree() {
        assert!(mask_from_specs(&["08:00-09:00=Sleep".into(), "08:30-10:00=Sleep".into()]).is_ok());
        assert!(mask_from_specs(&["08:00-09:00=Sleep".into(), "08:30-10:00=Rest".into()]).is_err());
    }
}
