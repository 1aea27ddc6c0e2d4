//! Optimisation loop: condition sampling, contrastive mining, Adam.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::cvae::{ContrastiveSample, Cvae, LossBreakdown, TrainBatch};
use super::decode::draw_latent;
use super::layers::Dropout;
use crate::activity::{ActivityClass, DailySequence, MASK_ID};
use crate::error::{Error, Result};
use crate::rules::{check_tokens, PlausibilityRuleSet};

/// Samples per generation batch during mining.
const MINING_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of all steps spent in linear warmup.
    pub warmup_frac: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub seed: u64,
    /// Whether to mine samples for the contrastive term.
    pub contrastive: bool,
    /// Samples inspected per anchor.
    pub tries: usize,
    /// Samples drawn per step and shared by the anchors; 0 draws
    /// `batch × tries` so every anchor gets its own.
    pub mining_pool: usize,
    pub mining_temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 16,
            lr: 1e-4,
            warmup_frac: 0.05,
            grad_clip: 1.0,
            seed: 0,
            contrastive: true,
            tries: 4,
            mining_pool: 0,
            mining_temperature: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return bad("warmup_frac must be in [0, 1]");
        }
        if self.grad_clip < 0.0 {
            return bad("grad_clip must be non-negative");
        }
        if self.contrastive && self.tries == 0 {
            return bad("tries must be positive when mining");
        }
        if self.mining_temperature < 0.0 {
            return bad("mining temperature must be non-negative");
        }
        Ok(())
    }
}

/// Per-bin flags (true = fixed). Half the time everything is free; otherwise
/// a masked fraction in [0.1, 0.98] is laid out as one free block or as
/// scattered free bins.
pub fn sample_mask_flags<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<bool> {
    if rng.random_bool(0.5) {
        return vec![false; len];
    }
    let ratio = rng.random_range(0.1..=0.98);
    let masked = ((ratio * len as f64).round() as usize).clamp(1, len);
    let mut flags = vec![true; len];
    if rng.random_bool(0.5) {
        let start = rng.random_range(0..=len - masked);
        flags[start..start + masked].fill(false);
    } else {
        let mut idx: Vec<usize> = (0..len).collect();
        idx.shuffle(rng);
        for &i in &idx[..masked] {
            flags[i] = false;
        }
    }
    flags
}

fn condition_ids(target: &[u8], flags: &[bool]) -> Vec<u8> {
    target
        .iter()
        .zip(flags)
        .map(|(&t, &fixed)| if fixed { t } else { MASK_ID })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mined {
    pub samples: Vec<ContrastiveSample>,
    pub pairs: Vec<(Option<usize>, Option<usize>)>,
    pub drawn: usize,
    pub positives: usize,
}

/// Samples from the model with free latents and an all-mask condition and
/// labels each by the rules. Anchor `a` inspects pool entries
/// `a·tries .. a·tries + tries` (cyclically) and keeps its first positive and
/// first negative.
pub fn mine_contrastive(
    model: &Cvae<f32>,
    anchors: usize,
    rules: &PlausibilityRuleSet,
    rng: &mut ChaCha8Rng,
    tries: usize,
    pool: usize,
    temperature: f64,
) -> Result<Mined> {
    let pool = if pool == 0 { anchors * tries } else { pool };
    if anchors == 0 || pool == 0 {
        return Ok(Mined::default());
    }
    let s = model.cfg.seq_len;
    let all_mask = vec![MASK_ID; s];
    let seeds: Vec<u64> = (0..pool).map(|_| rng.next_u64()).collect();
    let mut drawn: Vec<(Vec<u8>, Vec<f64>)> = Vec::with_capacity(pool);
    for chunk in seeds.chunks(MINING_CHUNK) {
        let mut rngs: Vec<ChaCha8Rng> = chunk.iter().map(|&sd| ChaCha8Rng::seed_from_u64(sd)).collect();
        let zs: Vec<Vec<f64>> = rngs.iter_mut().map(|r| draw_latent(r, model.cfg.latent)).collect();
        let conds: Vec<&[u8]> = vec![all_mask.as_slice(); chunk.len()];
        let seqs = model.sample_sequences(&zs, &conds, temperature, &mut rngs)?;
        drawn.extend(seqs.into_iter().zip(zs));
    }
    let positive: Vec<bool> = drawn
        .iter()
        .map(|(t, _)| {
            let tokens: Vec<ActivityClass> = t.iter().map(|&i| ActivityClass::from_id(i).expect("class id")).collect();
            check_tokens(&tokens, rules).passed()
        })
        .collect();

    let mut used: Vec<Option<usize>> = vec![None; pool];
    let mut mined = Mined { drawn: pool, positives: positive.iter().filter(|&&p| p).count(), ..Mined::default() };
    let mut take = |j: usize, mined: &mut Mined| -> usize {
        *used[j].get_or_insert_with(|| {
            mined.samples.push(ContrastiveSample { tokens: drawn[j].0.clone(), z: drawn[j].1.clone() });
            mined.samples.len() - 1
        })
    };
    for a in 0..anchors {
        let (mut pos, mut neg) = (None, None);
        for r in 0..tries {
            let j = (a * tries + r) % pool;
            if positive[j] && pos.is_none() {
                pos = Some(take(j, &mut mined));
            } else if !positive[j] && neg.is_none() {
                neg = Some(take(j, &mut mined));
            }
            if pos.is_some() && neg.is_some() {
                break;
            }
        }
        mined.pairs.push((pos, neg));
    }
    Ok(mined)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn update(&mut self, params: &mut [f32], grads: &[f32], lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = (lr * bc2.sqrt() / bc1) as f32;
        let eps = (self.eps * bc2.sqrt()) as f32;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            params[i] -= step * self.m[i] / (self.v[i].sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: LossBreakdown,
    pub lr: f64,
    pub drawn: usize,
    pub positives: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub recon: f64,
    pub kl: f64,
    pub contrastive: f64,
    pub total: f64,
}

/// Formats one line of the metrics log.
pub fn metrics_line(step: u64, l: &LossBreakdown) -> String {
    format!("{step},{},{},{},{}", l.recon, l.kl, l.contrastive, l.total)
}

pub const METRICS_HEADER: &str = "step,recon,kl,contrastive,total";

pub struct Trainer {
    pub model: Cvae<f32>,
    pub tcfg: TrainConfig,
    pub rules: PlausibilityRuleSet,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
    pub step: u64,
    /// Planned number of steps, for the warmup schedule.
    pub total_steps: u64,
}

impl Trainer {
    pub fn new(mcfg: ModelConfig, tcfg: TrainConfig, rules: PlausibilityRuleSet) -> Result<Self> {
        tcfg.validate()?;
        let model = Cvae::new(mcfg, tcfg.seed)?;
        let adam = Adam::new(model.params.len());
        let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
        rng.set_stream(1);
        Ok(Trainer { model, tcfg, rules, adam, rng, step: 0, total_steps: 0 })
    }

    pub fn steps_per_epoch(&self, n_days: usize) -> u64 {
        n_days.div_ceil(self.tcfg.batch_size) as u64
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        let warm = (self.tcfg.warmup_frac * self.total_steps as f64).round() as u64;
        if warm == 0 || step >= warm {
            self.tcfg.lr
        } else {
            self.tcfg.lr * (step + 1) as f64 / warm as f64
        }
    }

    fn mining_enabled(&self) -> bool {
        self.tcfg.contrastive && self.model.cfg.contrastive_weight > 0.0
    }

    /// Draws masks, latent noise and contrastive samples for `days`.
    pub fn prepare_batch(&mut self, days: &[&DailySequence]) -> Result<TrainBatch> {
        let s = self.model.cfg.seq_len;
        let c0 = self.model.cfg.latent;
        let n = days.len();
        if n == 0 {
            return Err(Error::Empty("empty training batch".into()));
        }
        let mut b = TrainBatch { n, ..TrainBatch::default() };
        for d in days {
            let ids = &d.ids()[..s];
            let flags = sample_mask_flags(&mut self.rng, s);
            b.conds.extend(condition_ids(ids, &flags));
            b.targets.extend_from_slice(ids);
        }
        b.eps = (0..n * c0).map(|_| self.rng.sample(StandardNormal)).collect();
        if self.mining_enabled() {
            let mined = mine_contrastive(
                &self.model,
                n,
                &self.rules,
                &mut self.rng,
                self.tcfg.tries,
                self.tcfg.mining_pool,
                self.tcfg.mining_temperature,
            )?;
            b.samples = mined.samples;
            b.pairs = mined.pairs;
        }
        Ok(b)
    }

    /// One update from a fully specified batch. On a non-finite loss or
    /// gradient the parameters are left untouched.
    pub fn apply(&mut self, b: &TrainBatch) -> Result<LossBreakdown> {
        let p = self.model.cfg.dropout;
        let (loss, mut g) = {
            let mut drop = Dropout::new(p, &mut self.rng);
            let (loss, cache) = self.model.forward(b, &mut drop)?;
            if !loss.is_finite() {
                return Err(Error::numerical(format!("non-finite loss at step {}: {loss:?}", self.step)));
            }
            (loss, self.model.backward(b, &cache))
        };
        let norm = g.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::numerical(format!("non-finite gradient at step {}", self.step)));
        }
        if self.tcfg.grad_clip > 0.0 && norm > self.tcfg.grad_clip {
            let scale = (self.tcfg.grad_clip / norm) as f32;
            g.iter_mut().for_each(|x| *x *= scale);
        }
        let lr = self.lr_at(self.step);
        self.adam.update(&mut self.model.params, &g, lr);
        self.step += 1;
        Ok(loss)
    }

    pub fn train_step(&mut self, days: &[&DailySequence]) -> Result<StepReport> {
        let b = self.prepare_batch(days)?;
        let lr = self.lr_at(self.step);
        let step = self.step;
        let loss = self.apply(&b)?;
        let positives = b.pairs.iter().filter(|p| p.0.is_some()).count();
        Ok(StepReport { step, loss, lr, drawn: b.samples.len(), positives })
    }

    /// One pass over `data` in a freshly shuffled order.
    pub fn train_epoch(
        &mut self,
        epoch: usize,
        data: &[DailySequence],
        on_step: &mut dyn FnMut(&StepReport),
    ) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::Empty("no training days".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut st = EpochStats { epoch, ..EpochStats::default() };
        for chunk in order.chunks(self.tcfg.batch_size) {
            let days: Vec<&DailySequence> = chunk.iter().map(|&i| &data[i]).collect();
            let r = self.train_step(&days)?;
            on_step(&r);
            st.steps += 1;
            st.recon += r.loss.recon;
            st.kl += r.loss.kl;
            st.contrastive += r.loss.contrastive;
            st.total += r.loss.total;
        }
        let k = st.steps as f64;
        st.recon /= k;
        st.kl /= k;
        st.contrastive /= k;
        st.total /= k;
        Ok(st)
    }

    /// Runs the configured number of epochs.
    pub fn fit(
        &mut self,
        data: &[DailySequence],
        on_step: &mut dyn FnMut(&StepReport),
        on_epoch: &mut dyn FnMut(&EpochStats),
    ) -> Result<Vec<EpochStats>> {
        self.total_steps = self.step + self.tcfg.epochs as u64 * self.steps_per_epoch(data.len());
        let mut out = Vec::with_capacity(self.tcfg.epochs);
        for e in 1..=self.tcfg.epochs {
            let st = self.train_epoch(e, data, on_step)?;
            on_epoch(&st);
            out.push(st);
        }
        Ok(out)
    }
}
