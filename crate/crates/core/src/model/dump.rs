//! CSV exports of cross-attention weights and posterior means for plotting.

use std::fmt::Write as _;

use super::cvae::Cvae;
use crate::activity::{ConditionMask, DailySequence};
use crate::error::Result;

/// One CSV per head of the last cross-attention layer. Rows are decoder
/// positions; columns are the latent row followed by the condition bins.
pub fn attention_csvs(model: &Cvae<f32>, day: &DailySequence, cond: &ConditionMask) -> Result<Vec<String>> {
    let s = model.cfg.seq_len;
    let ids = &day.ids()[..s];
    let (mu, _) = model.posterior(ids)?;
    let memory = model.build_memory(&mu, &cond.condition_ids()[..s])?;
    let probs = model.cross_attention(ids, &memory)?;
    let block = s * (s + 1);
    let mut header = String::from("bin,latent");
    for j in 0..s {
        let _ = write!(header, ",cond_{j}");
    }
    Ok(probs
        .chunks_exact(block)
        .map(|head| {
            let mut out = header.clone();
            out.push('\n');
            for (i, row) in head.chunks_exact(s + 1).enumerate() {
                let _ = write!(out, "{i}");
                for w in row {
                    let _ = write!(out, ",{w}");
                }
                out.push('\n');
            }
            out
        })
        .collect())
}

/// `day_id,mu_0,...` with one row per day.
pub fn latent_csv(model: &Cvae<f32>, days: &[DailySequence]) -> Result<String> {
    let s = model.cfg.seq_len;
    let mut out = String::from("day_id");
    for j in 0..model.cfg.latent {
        let _ = write!(out, ",mu_{j}");
    }
    out.push('\n');
    for d in days {
        let (mu, _) = model.posterior(&d.ids()[..s])?;
        out.push_str(d.day_id());
        for m in mu {
            let _ = write!(out, ",{m}");
        }
        out.push('\n');
    }
    Ok(out)
}
