//! Annotated smart-home log parsing and label consolidation.

use std::io::BufRead;

use chrono::NaiveDateTime;

use crate::activity::ActivityClass;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Marker {
    Begin,
    End,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEvent {
    pub timestamp: NaiveDateTime,
    /// Original activity label as written in the log.
    pub label: String,
    pub marker: Marker,
}

/// A non-fatal problem with one input line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedLog {
    pub events: Vec<RawEvent>,
    pub diagnostics: Vec<Diagnostic>,
}

const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S%.f";

/// Parse lines of the form
/// `YYYY-MM-DD HH:MM:SS[.ffffff] <sensor> <value> [<activity label> <begin|end>]`.
///
/// Sensor readings without an annotation are skipped. Malformed lines become
/// diagnostics. Events come back sorted by timestamp (stable for ties).
pub fn parse_log<R: BufRead>(reader: R) -> Result<ParsedLog> {
    let mut out = ParsedLog::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        match parse_line(&line) {
            Ok(Some(ev)) => out.events.push(ev),
            Ok(None) => {}
            Err(message) => out.diagnostics.push(Diagnostic {
                line: lineno,
                message,
            }),
        }
    }
    out.events.sort_by_key(|e| e.timestamp);
    Ok(out)
}

fn parse_line(line: &str) -> std::result::Result<Option<RawEvent>, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.is_empty() {
        return Ok(None);
    }
    if fields.len() < 4 {
        return Err(format!("expected at least 4 fields, found {}", fields.len()));
    }
    let stamp = format!("{} {}", fields[0], fields[1]);
    let timestamp = NaiveDateTime::parse_from_str(&stamp, TIMESTAMP_FORMAT)
        .map_err(|e| format!("bad timestamp `{stamp}`: {e}"))?;
    let annotation = &fields[4..];
    let Some((last, label)) = annotation.split_last() else {
        return Ok(None);
    };
    let marker = match last.to_ascii_lowercase().as_str() {
        "begin" => Marker::Begin,
        "end" => Marker::End,
        other => return Err(format!("marker must be `begin` or `end`, found `{other}`")),
    };
    if label.is_empty() {
        return Err("annotation marker without an activity label".to_string());
    }
    Ok(Some(RawEvent {
        timestamp,
        label: label.join(" "),
        marker,
    }))
}

/// Lowercase, treat `_`/`-` as spaces, collapse whitespace.
pub fn normalize_label(label: &str) -> String {
    label
        .to_lowercase()
        .replace(['_', '-'], " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Map an original activity label onto a consolidated class; `None` is OTHER.
pub fn consolidate(label: &str) -> Option<ActivityClass> {
    use ActivityClass::*;
    let class = match normalize_label(label).as_str() {
        "sleep" | "sleep out of bed" | "go to sleep" | "nap" | "wake up" => Sleep,
        "leave home" | "enter home" | "step out" | "single leave" | "single enter"
        | "staff leave" | "staff enter" | "single step out" => Outing,
        "watch tv" | "entertain guests" | "read" | "relax" | "phone" | "exercise"
        | "pet activity" | "sew" => Rest,
        "work" | "work on computer" | "work at table" | "work at desk" => Work,
        "personal hygiene" | "groom" | "bathe" | "shower" => Hygiene,
        "toilet" | "bed toilet transition" => Toilet,
        "dress" => Dress,
        "cook" | "cook breakfast" | "cook lunch" | "cook dinner" => Cook,
        "eat breakfast" | "eat lunch" | "eat dinner" => Meal,
        "wash dishes" | "wash breakfast dishes" | "wash lunch dishes" | "wash dinner dishes"
        | "laundry" | "housekeeping" | "put groceries away" => Chore,
        "drink" | "eat" => Snack,
        "take medicine" | "morning meds" | "evening meds" => Medicine,
        _ => return None,
    };
    Some(class)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Timelike;

    #[test]
    fn parses_annotated_line() {
        let log = parse_log("2011-06-15 03:38:23.271939 M019 ON Sleep begin\n".as_bytes()).unwrap();
        assert!(log.diagnostics.is_empty());
        assert_eq!(log.events.len(), 1);
        let ev = &log.events[0];
        assert_eq!(ev.label, "Sleep");
        assert_eq!(ev.marker, Marker::Begin);
        assert_eq!(ev.timestamp.date().to_string(), "2011-06-15");
        assert_eq!(
            (ev.timestamp.hour(), ev.timestamp.minute(), ev.timestamp.second()),
            (3, 38, 23)
        );
        assert_eq!(ev.timestamp.nanosecond(), 271_939_000);
    }

    #[test]
    fn skips_plain_sensor_readings() {
        let log = parse_log("2011-06-15 03:38:23.271939 M019 ON\n\n".as_bytes()).unwrap();
        assert!(log.events.is_empty());
        assert!(log.diagnostics.is_empty());
    }

    #[test]
    fn multi_word_labels_and_whole_seconds() {
        let log = parse_log("2011-06-15 07:00:00 M001 OFF Cook Breakfast end\n".as_bytes()).unwrap();
        assert_eq!(log.events[0].label, "Cook Breakfast");
        assert_eq!(log.events[0].marker, Marker::End);
    }

    #[test]
    fn bad_lines_become_diagnostics() {
        let text = "2011-06-15 03:38:23 M019 ON Sleep start\n\
                    garbage\n\
                    2011-13-15 03:38:23 M019 ON Sleep begin\n\
                    2011-06-15 03:38:23 M019 ON begin\n\
                    2011-06-15 04:00:00 M019 ON Sleep end\n";
        let log = parse_log(text.as_bytes()).unwrap();
        assert_eq!(log.events.len(), 1);
        let lines: Vec<usize> = log.diagnostics.iter().map(|d| d.line).collect();
        assert_eq!(lines, vec![1, 2, 3, 4]);
        assert!(log.diagnostics[0].message.contains("start"));
    }

    #[test]
    fn events_are_sorted() {
        let text = "2011-06-15 09:00:00 M1 ON Sleep end\n2011-06-15 01:00:00 M1 ON Sleep begin\n";
        let log = parse_log(text.as_bytes()).unwrap();
        assert_eq!(log.events[0].marker, Marker::Begin);
    }

    #[test]
    fn consolidation_table() {
        use ActivityClass::*;
        assert_eq!(consolidate("cook breakfast"), Some(Cook));
        assert_eq!(consolidate("bed toilet transition"), Some(Toilet));
        assert_eq!(consolidate("  Bed_Toilet_Transition "), Some(Toilet));
        assert_eq!(consolidate("Watch TV"), Some(Rest));
        assert_eq!(consolidate("eat"), Some(Snack));
        assert_eq!(consolidate("eat lunch"), Some(Meal));
        assert_eq!(consolidate("Morning_Meds"), Some(Medicine));
        assert_eq!(consolidate("put groceries away"), Some(Chore));
        assert_eq!(consolidate("juggling"), None);
        assert_eq!(consolidate(""), None);
    }
}
