//! The `oracle-dataset v1` text format and the rejection audit.
//!
//! ```text
//! oracle-dataset v1
//! day_id,<288 comma-separated class ids>
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::activity::DailySequence;
use crate::error::{Error, Result};
use crate::rules::PlausibilityReport;

pub const DATASET_HEADER: &str = "oracle-dataset v1";

pub fn write_dataset<W: Write>(mut w: W, days: &[DailySequence]) -> Result<()> {
    writeln!(w, "{DATASET_HEADER}")?;
    for day in days {
        validate_day_id(day.day_id())?;
        let mut line = String::with_capacity(day.day_id().len() + 3 * day.tokens().len());
        line.push_str(day.day_id());
        for c in day.tokens() {
            line.push(',');
            line.push_str(&c.id().to_string());
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(r: R) -> Result<Vec<DailySequence>> {
    let reader = BufReader::new(r);
    let mut lines = reader.lines();
    match lines.next() {
        Some(header) => {
            let header = header?;
            if header.trim_end() != DATASET_HEADER {
                return Err(Error::parse(
                    1,
                    format!("expected header `{DATASET_HEADER}`, found `{header}`"),
                ));
            }
        }
        None => return Err(Error::parse(1, "missing dataset header")),
    }
    let mut days = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let day_id = fields.next().unwrap_or_default();
        let ids = fields
            .map(|f| {
                f.trim()
                    .parse::<u8>()
                    .map_err(|_| Error::parse(lineno, format!("bad class id `{f}`")))
            })
            .collect::<Result<Vec<u8>>>()?;
        let day = DailySequence::from_ids(day_id, &ids)
            .map_err(|e| Error::parse(lineno, e.to_string()))?;
        days.push(day);
    }
    Ok(days)
}

pub fn save_dataset(path: impl AsRef<Path>, days: &[DailySequence]) -> Result<()> {
    let f = std::fs::File::create(path.as_ref())?;
    write_dataset(std::io::BufWriter::new(f), days)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<DailySequence>> {
    let f = std::fs::File::open(path.as_ref())?;
    read_dataset(f)
}

fn validate_day_id(id: &str) -> Result<()> {
    if id.contains([',', '\n', '\r', '\t']) {
        return Err(Error::structural(format!(
            "day id `{id}` may not contain commas, tabs or newlines"
        )));
    }
    Ok(())
}

/// One line per violation: `day_id<TAB>class<TAB>rule-kind<TAB>observed<TAB>bound`.
pub fn write_audit<W: Write>(mut w: W, rejected: &[(DailySequence, PlausibilityReport)]) -> Result<()> {
    for (day, report) in rejected {
        for v in &report.violations {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                day.day_id(),
                v.class,
                v.kind,
                v.observed,
                v.bound
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activity::{ActivityClass, SEQ_LEN};
    use crate::rules::{check_plausibility, PlausibilityRuleSet};
    use proptest::prelude::*;

    #[test]
    fn header_is_required() {
        let err = read_dataset("nope\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("oracle-dataset v1"));
        assert!(read_dataset("".as_bytes()).is_err());
    }

    #[test]
    fn rejects_short_rows_and_mask_ids() {
        let text = format!("{DATASET_HEADER}\nd1,0,1,2\n");
        assert!(read_dataset(text.as_bytes()).is_err());
        let mut row = vec!["0"; SEQ_LEN];
        row[10] = "12";
        let text = format!("{DATASET_HEADER}\nd1,{}\n", row.join(","));
        let err = read_dataset(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn day_ids_with_commas_are_refused() {
        let d = DailySequence::constant("a,b", ActivityClass::Rest);
        assert!(write_dataset(Vec::new(), &[d]).is_err());
    }

    #[test]
    fn audit_lines() {
        let d = DailySequence::constant("day-9", ActivityClass::Toilet);
        let rep = check_plausibility(&d, &PlausibilityRuleSet::table1());
        let mut out = Vec::new();
        write_audit(&mut out, &[(d, rep.clone())]).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), rep.violations.len());
        assert!(text.contains("day-9\tToilet\tmax_per_occurrence\t1440\t30"));
    }

    proptest! {
        #[test]
        fn bit_exact_round_trip(rows in prop::collection::vec(prop::collection::vec(0u8..12, SEQ_LEN), 0..6)) {
            let days: Vec<_> = rows
                .iter()
                .enumerate()
                .map(|(i, ids)| DailySequence::from_ids(format!("d{i}"), ids).unwrap())
                .collect();
            let mut buf = Vec::new();
            write_dataset(&mut buf, &days).unwrap();
            let back = read_dataset(buf.as_slice()).unwrap();
            prop_assert_eq!(&back, &days);
            let mut again = Vec::new();
            write_dataset(&mut again, &back).unwrap();
            prop_assert_eq!(buf, again);
        }
    }
}
