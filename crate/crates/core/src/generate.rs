//! Random and mask-conditional plan generation, and the plain-text plan format.

use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activity::{
    format_bin_time, from_intervals, parse_bin_time, ConditionMask, DailySequence, Interval, SEQ_LEN,
};
use crate::error::{Error, Result};
use crate::metrics::conditional_day_id;
use crate::model::{draw_latent, Cvae};
use crate::rules::{check_plausibility, PlausibilityRuleSet};

/// Samples decoded together; also the unit of parallel work.
const CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationMode {
    #[default]
    Random,
    Conditional,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub mode: GenerationMode,
    pub mask: ConditionMask,
    /// Sampling temperature; 0 selects greedy decoding.
    pub temperature: f64,
    pub seed: u64,
    pub count: usize,
}

impl GenerationRequest {
    pub fn random(count: usize, seed: u64, temperature: f64) -> Self {
        GenerationRequest {
            mode: GenerationMode::Random,
            mask: ConditionMask::fully_masked(),
            temperature,
            seed,
            count,
        }
    }

    pub fn conditional(mask: ConditionMask, count: usize, seed: u64, temperature: f64) -> Self {
        GenerationRequest { mode: GenerationMode::Conditional, mask, temperature, seed, count }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be finite and non-negative, got {}", self.temperature)));
        }
        if self.mode == GenerationMode::Random && !self.mask.is_fully_masked() {
            return Err(Error::Config("random generation cannot fix any bins".into()));
        }
        Ok(())
    }
}

/// One sample to draw: its condition, output id and generator.
#[derive(Debug, Clone)]
pub struct GenerationItem {
    pub mask: ConditionMask,
    pub day_id: String,
    pub seed: u64,
}

fn item_rng(seed: u64, attempt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(attempt);
    rng
}

fn run_chunk(model: &Cvae<f32>, items: &[GenerationItem], temperature: f64, attempt: u64) -> Result<Vec<DailySequence>> {
    let s = model.cfg.seq_len;
    let mut rngs: Vec<ChaCha8Rng> = items.iter().map(|it| item_rng(it.seed, attempt)).collect();
    let zs: Vec<Vec<f64>> = rngs.iter_mut().map(|r| draw_latent(r, model.cfg.latent)).collect();
    let conds: Vec<Vec<u8>> = items.iter().map(|it| it.mask.condition_ids()[..s].to_vec()).collect();
    let cond_refs: Vec<&[u8]> = conds.iter().map(Vec::as_slice).collect();
    let seqs = model.sample_sequences(&zs, &cond_refs, temperature, &mut rngs)?;
    seqs.into_iter()
        .zip(items)
        .map(|(ids, it)| DailySequence::from_ids(it.day_id.clone(), &ids))
        .collect()
}

/// Draws every item; output order follows `items` regardless of scheduling.
pub fn generate_items(model: &Cvae<f32>, items: &[GenerationItem], temperature: f64) -> Result<Vec<DailySequence>> {
    let chunks: Vec<Vec<DailySequence>> = items
        .par_chunks(CHUNK)
        .map(|c| run_chunk(model, c, temperature, 0))
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// As [`generate_items`], but an implausible sample is redrawn (from a fresh
/// generator stream) up to `retries` times; the last draw is kept either way.
pub fn generate_items_with_rejection(
    model: &Cvae<f32>,
    items: &[GenerationItem],
    temperature: f64,
    rules: &PlausibilityRuleSet,
    retries: u32,
) -> Result<Vec<DailySequence>> {
    let mut out = generate_items(model, items, temperature)?;
    for attempt in 1..=retries as u64 {
        let pending: Vec<usize> = (0..out.len())
            .filter(|&i| !check_plausibility(&out[i], rules).passed())
            .collect();
        if pending.is_empty() {
            break;
        }
        let redo: Vec<GenerationItem> = pending.iter().map(|&i| items[i].clone()).collect();
        let fresh: Vec<Vec<DailySequence>> = redo
            .par_chunks(CHUNK)
            .map(|c| run_chunk(model, c, temperature, attempt))
            .collect::<Result<_>>()?;
        for (i, d) in pending.into_iter().zip(fresh.into_iter().flatten()) {
            out[i] = d;
        }
    }
    Ok(out)
}

fn request_items(req: &GenerationRequest) -> Vec<GenerationItem> {
    (0..req.count)
        .map(|i| GenerationItem {
            mask: req.mask.clone(),
            day_id: format!("gen-{}-{i:05}", req.seed),
            seed: req.seed.wrapping_add(i as u64),
        })
        .collect()
}

/// A mask keeping `round(len · (1 − masked_fraction))` bins of `day`, chosen
/// uniformly without replacement.
pub fn random_mask_of(day: &DailySequence, masked_fraction: f64, rng: &mut ChaCha8Rng) -> Result<ConditionMask> {
    if !(0.0..=1.0).contains(&masked_fraction) {
        return Err(Error::Config(format!("masked fraction must lie in [0, 1], got {masked_fraction}")));
    }
    let len = day.tokens().len();
    let keep = (len as f64 * (1.0 - masked_fraction)).round() as usize;
    let mut flags = vec![false; len];
    for i in rand::seq::index::sample(rng, len, keep) {
        flags[i] = true;
    }
    ConditionMask::from_sequence(day, &flags)
}

/// One conditional item per reference day, id'd so evaluation can pair
/// each output with its reference. Masks use stream `u64::MAX` of the
/// item's seed, so they never share draws with decoding.
pub fn conditional_items(refs: &[DailySequence], masked_fraction: f64, seed: u64) -> Result<Vec<GenerationItem>> {
    refs.iter()
        .enumerate()
        .map(|(i, day)| {
            let seed = seed.wrapping_add(i as u64);
            let mask = random_mask_of(day, masked_fraction, &mut item_rng(seed, u64::MAX))?;
            let masked = SEQ_LEN - mask.unmasked_count();
            Ok(GenerationItem { mask, day_id: conditional_day_id(day.day_id(), masked), seed })
        })
        .collect()
}

/// Sample `i` uses a generator seeded with `seed + i`. Fixed bins of the
/// mask are copied into every output.
pub fn generate(model: &Cvae<f32>, req: &GenerationRequest) -> Result<Vec<DailySequence>> {
    req.validate()?;
    generate_items(model, &request_items(req), req.temperature)
}

pub fn generate_with_rejection(
    model: &Cvae<f32>,
    req: &GenerationRequest,
    rules: &PlausibilityRuleSet,
    retries: u32,
) -> Result<Vec<DailySequence>> {
    req.validate()?;
    generate_items_with_rejection(model, &request_items(req), req.temperature, rules, retries)
}

/// One `HH:MM~HH:MM Activity` line per run; the last line ends at 24:00.
pub fn export_plan<W: Write>(seq: &DailySequence, mut w: W) -> Result<()> {
    for iv in seq.to_intervals() {
        writeln!(w, "{}~{} {}", format_bin_time(iv.start_bin), format_bin_time(iv.end_bin), iv.class)?;
    }
    Ok(())
}

pub fn plan_text(seq: &DailySequence) -> String {
    let mut buf = Vec::new();
    export_plan(seq, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii plan")
}

/// Parses plan text back into intervals. Blank lines are ignored.
pub fn parse_plan<R: BufRead>(r: R) -> Result<Vec<Interval>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let (span, class) = line
            .split_once(' ')
            .ok_or_else(|| Error::parse(lineno, "expected `HH:MM~HH:MM Activity`"))?;
        let (a, b) = span
            .split_once('~')
            .ok_or_else(|| Error::parse(lineno, "expected `~` between times"))?;
        let start = parse_bin_time(a).map_err(|e| Error::parse(lineno, e.to_string()))?;
        let end = parse_bin_time(b).map_err(|e| Error::parse(lineno, e.to_string()))?;
        let class = class.trim().parse().map_err(|e: Error| Error::parse(lineno, e.to_string()))?;
        out.push(Interval::new(start, end, class));
    }
    Ok(out)
}

pub fn parse_plan_sequence<R: BufRead>(day_id: impl Into<String>, r: R) -> Result<DailySequence> {
    from_intervals(day_id, &parse_plan(r)?)
}
