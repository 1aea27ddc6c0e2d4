//! Sequence alignment distance: global alignment with indel cost 1 and
//! substitution cost 2, normalised by sequence length.

use crate::activity::DailySequence;
use crate::error::{Error, Result};

pub const INDEL_COST: u32 = 1;
pub const SUBSTITUTION_COST: u32 = 2;

/// Minimal alignment cost between two token slices of any lengths.
pub fn alignment_cost<T: PartialEq>(a: &[T], b: &[T]) -> u32 {
    // Single rolling row over `b`.
    let mut row: Vec<u32> = (0..=b.len() as u32).map(|j| j * INDEL_COST).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = (i as u32 + 1) * INDEL_COST;
        for (j, y) in b.iter().enumerate() {
            let sub = diag + if x == y { 0 } else { SUBSTITUTION_COST };
            let del = row[j + 1] + INDEL_COST;
            let ins = row[j] + INDEL_COST;
            diag = row[j + 1];
            row[j + 1] = sub.min(del).min(ins);
        }
    }
    row[b.len()]
}

/// Alignment cost divided by the common length.
pub fn sam_tokens<T: PartialEq>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::structural(format!(
            "SAM distance needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(alignment_cost(a, b) as f64 / a.len() as f64)
}

pub fn sam_distance(generated: &DailySequence, reference: &DailySequence) -> f64 {
    sam_tokens(generated.tokens(), reference.tokens()).expect("daily sequences share a length")
}
