//! Transformer CVAE: shared encoder, latent bottleneck, cross-attending decoder.
//!
//! A training batch runs as one encoder pass over the targets plus each
//! distinct condition (the all-mask condition included when there are
//! contrastive samples) and one decoder pass over `[targets; samples]`, so
//! repeated conditions share encoder work and every gradient lands in one
//! buffer.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::ModelConfig;
use super::layers::*;
use super::params::Layout;
use super::tensor::{dot, Real};
use crate::activity::{MASK_ID, NUM_CLASSES, VOCAB_SIZE};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Cvae<T: Real> {
    pub cfg: ModelConfig,
    pub layout: Layout,
    pub params: Vec<T>,
}

/// A sequence sampled from the model, used as a contrastive partner.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveSample {
    pub tokens: Vec<u8>,
    pub z: Vec<f64>,
}

/// Inputs for one optimisation step, all randomness already drawn.
#[derive(Debug, Clone, Default)]
pub struct TrainBatch {
    pub n: usize,
    /// `n × seq_len` target ids.
    pub targets: Vec<u8>,
    /// `n × seq_len` condition ids (MASK where free).
    pub conds: Vec<u8>,
    /// `n × latent` reparameterisation noise.
    pub eps: Vec<f64>,
    pub samples: Vec<ContrastiveSample>,
    /// Per anchor: indices into `samples` of its positive and negative.
    pub pairs: Vec<(Option<usize>, Option<usize>)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub recon: f64,
    pub kl: f64,
    pub contrastive: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.recon.is_finite() && self.kl.is_finite() && self.contrastive.is_finite() && self.total.is_finite()
    }
}

struct EncLayerCache<T> {
    n1: NormCache<T>,
    a1: Vec<T>,
    att: AttnCache<T>,
    m1: Option<Vec<T>>,
    n2: NormCache<T>,
    a2: Vec<T>,
    ffn: FfnCache<T>,
    m2: Option<Vec<T>>,
}

struct EncCache<T> {
    ids: Vec<u8>,
    nseq: usize,
    m0: Option<Vec<T>>,
    layers: Vec<EncLayerCache<T>>,
    nf: NormCache<T>,
}

struct DecLayerCache<T> {
    n1: NormCache<T>,
    a1: Vec<T>,
    self_att: AttnCache<T>,
    m1: Option<Vec<T>>,
    n2: NormCache<T>,
    a2: Vec<T>,
    cross_att: AttnCache<T>,
    m2: Option<Vec<T>>,
    n3: NormCache<T>,
    a3: Vec<T>,
    ffn: FfnCache<T>,
    m3: Option<Vec<T>>,
}

struct DecCache<T> {
    ids: Vec<u8>,
    nseq: usize,
    m0: Option<Vec<T>>,
    layers: Vec<DecLayerCache<T>>,
    nf: NormCache<T>,
}

pub struct ForwardCache<T> {
    enc: EncCache<T>,
    enc_out: Vec<T>,
    /// Encoder sequence feeding each memory row.
    cond_src: Vec<usize>,
    pooled: Vec<T>,
    mu: Vec<T>,
    lv: Vec<T>,
    z_all: Vec<T>,
    memory: Vec<T>,
    dec: DecCache<T>,
    dec_out: Vec<T>,
    probs: Vec<T>,
    reps: Vec<T>,
}

/// Reparameterisation: `z = mu + exp(log_var / 2) · eps`.
pub fn reparameterize_with<T: Real>(mu: &[T], log_var: &[T], eps: &[f64]) -> Vec<T> {
    mu.iter()
        .zip(log_var)
        .zip(eps)
        .map(|((&m, &lv), &e)| m + (T::c(0.5) * lv).exp() * T::c(e))
        .collect()
}

/// Reparameterisation with standard-normal noise drawn from `rng`.
pub fn reparameterize<T: Real, R: Rng + ?Sized>(mu: &[T], log_var: &[T], rng: &mut R) -> Vec<T> {
    let eps: Vec<f64> = (0..mu.len()).map(|_| rng.sample(StandardNormal)).collect();
    reparameterize_with(mu, log_var, &eps)
}

/// `(1/C0) Σ ½(mu² + σ² − log σ² − 1)`.
pub fn kl_loss<T: Real>(mu: &[T], log_var: &[T]) -> f64 {
    let s: f64 = mu
        .iter()
        .zip(log_var)
        .map(|(&m, &lv)| {
            let (m, lv) = (m.f64(), lv.f64());
            0.5 * (m * m + lv.exp() - lv - 1.0)
        })
        .sum();
    s / mu.len() as f64
}

/// Mean over positions of the negative log-likelihood of `target`.
pub fn recon_loss<T: Real>(logits: &[T], target: &[u8]) -> f64 {
    let rows = target.len();
    let mut total = 0.0;
    for (row, &t) in logits.chunks_exact(NUM_CLASSES).zip(target) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x.f64()));
        let lse = max + row.iter().map(|&x| (x.f64() - max).exp()).sum::<f64>().ln();
        total += lse - row[t as usize].f64();
    }
    total / rows as f64
}

/// Mean over rows of a `rows × width` matrix.
pub fn sequence_repr<T: Real>(hidden: &[T], width: usize) -> Vec<T> {
    let rows = hidden.len() / width;
    let mut out = vec![T::zero(); width];
    for r in hidden.chunks_exact(width) {
        for (o, &x) in out.iter_mut().zip(r) {
            *o += x;
        }
    }
    let inv = T::c(1.0 / rows as f64);
    out.iter_mut().for_each(|x| *x *= inv);
    out
}

fn cosine<T: Real>(a: &[T], b: &[T]) -> Result<f64> {
    let na = dot(a, a).f64().sqrt();
    let nb = dot(b, b).f64().sqrt();
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::numerical("cosine similarity of a zero or non-finite vector"));
    }
    Ok(dot(a, b).f64() / (na * nb))
}

/// Positive term `1 − cos` averaged over positives plus negative term `cos²`
/// averaged over negatives; an empty list contributes zero.
pub fn contrastive_loss<T: Real>(anchor: &[T], positives: &[&[T]], negatives: &[&[T]]) -> Result<f64> {
    let mut loss = 0.0;
    if !positives.is_empty() {
        let s: f64 = positives.iter().map(|p| cosine(anchor, p).map(|c| 1.0 - c)).sum::<Result<f64>>()?;
        loss += s / positives.len() as f64;
    }
    if !negatives.is_empty() {
        let s: f64 = negatives.iter().map(|n| cosine(anchor, n).map(|c| c * c)).sum::<Result<f64>>()?;
        loss += s / negatives.len() as f64;
    }
    Ok(loss)
}

/// d cos(a, b) / d a.
fn cosine_grad<T: Real>(a: &[T], b: &[T]) -> (f64, Vec<f64>) {
    let na2 = dot(a, a).f64();
    let na = na2.sqrt();
    let nb = dot(b, b).f64().sqrt();
    let cos = dot(a, b).f64() / (na * nb);
    let g = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| y.f64() / (na * nb) - cos * x.f64() / na2)
        .collect();
    (cos, g)
}

impl<T: Real> Cvae<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        let params = layout.init(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Cvae { cfg, layout, params })
    }

    pub fn from_params(cfg: ModelConfig, params: Vec<T>) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        if params.len() != layout.total {
            return Err(Error::structural(format!(
                "parameter count {} does not match config ({})",
                params.len(),
                layout.total
            )));
        }
        Ok(Cvae { cfg, layout, params })
    }

    pub fn cast<U: Real>(&self) -> Cvae<U> {
        Cvae {
            cfg: self.cfg.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|&x| U::c(x.f64())).collect(),
        }
    }

    fn s(&self) -> usize {
        self.cfg.seq_len
    }

    fn c(&self) -> usize {
        self.cfg.hidden
    }

    fn check_ids(&self, ids: &[u8], max_id: u8, what: &str) -> Result<()> {
        if ids.len() != self.s() {
            return Err(Error::structural(format!(
                "{what} has length {}, expected {}",
                ids.len(),
                self.s()
            )));
        }
        if let Some(i) = ids.iter().position(|&t| t > max_id) {
            return Err(Error::structural(format!("{what} has out-of-vocabulary id {} at {i}", ids[i])));
        }
        Ok(())
    }

    // ---- embeddings -------------------------------------------------------

    fn embed_tokens(&self, ids: &[u8]) -> Vec<T> {
        let (s, c) = (self.s(), self.c());
        let p = &self.params;
        let mut h = vec![T::zero(); ids.len() * c];
        for (i, &id) in ids.iter().enumerate() {
            let t = i % s;
            let te = &p[self.layout.tok_emb + id as usize * c..][..c];
            let pe = &p[self.layout.pos_emb + t * c..][..c];
            for j in 0..c {
                h[i * c + j] = te[j] + pe[j];
            }
        }
        h
    }

    fn embed_bwd(&self, g: &mut [T], ids: &[u8], dh: &[T]) {
        let (s, c) = (self.s(), self.c());
        for (i, &id) in ids.iter().enumerate() {
            let d = &dh[i * c..(i + 1) * c];
            let te = self.layout.tok_emb + id as usize * c;
            let pe = self.layout.pos_emb + (i % s) * c;
            for j in 0..c {
                g[te + j] += d[j];
                g[pe + j] += d[j];
            }
        }
    }

    // ---- encoder ----------------------------------------------------------

    fn encoder_fwd(&self, ids: &[u8], nseq: usize, drop: &mut Dropout) -> (Vec<T>, EncCache<T>) {
        let p = &self.params;
        let s = self.s();
        let rows = nseq * s;
        let sh = AttnShape { nseq, sq: s, skv: s, heads: self.cfg.heads, causal: false };
        let mut h = self.embed_tokens(ids);
        let m0 = drop.apply(&mut h);
        let mut layers = Vec::with_capacity(self.cfg.layers);
        for lp in &self.layout.enc {
            let (a1, n1) = norm_fwd(p, &lp.ln1, &h);
            let (mut o, att) = attn_fwd(p, &lp.attn, &a1, &a1, sh);
            let m1 = drop.apply(&mut o);
            super::tensor::add_into(&mut h, &o);
            let (a2, n2) = norm_fwd(p, &lp.ln2, &h);
            let (mut f, ffn) = ffn_fwd(p, &lp.ffn, &a2, rows);
            let m2 = drop.apply(&mut f);
            super::tensor::add_into(&mut h, &f);
            layers.push(EncLayerCache { n1, a1, att, m1, n2, a2, ffn, m2 });
        }
        let (out, nf) = norm_fwd(p, &self.layout.enc_ln, &h);
        (out, EncCache { ids: ids.to_vec(), nseq, m0, layers, nf })
    }

    fn encoder_bwd(&self, g: &mut [T], cache: &EncCache<T>, dout: &[T]) {
        let p = &self.params;
        let s = self.s();
        let rows = cache.nseq * s;
        let sh = AttnShape { nseq: cache.nseq, sq: s, skv: s, heads: self.cfg.heads, causal: false };
        let mut dh = vec![T::zero(); dout.len()];
        norm_bwd(p, g, &self.layout.enc_ln, &cache.nf, dout, &mut dh);
        for (lp, lc) in self.layout.enc.iter().zip(&cache.layers).rev() {
            let df = dropout_bwd(&lc.m2, &dh);
            let mut da2 = vec![T::zero(); dh.len()];
            ffn_bwd(p, g, &lp.ffn, &lc.ffn, &lc.a2, &df, rows, &mut da2);
            norm_bwd(p, g, &lp.ln2, &lc.n2, &da2, &mut dh);
            let d_o = dropout_bwd(&lc.m1, &dh);
            let (mut da1, dkv) = attn_bwd(p, g, &lp.attn, &lc.att, &lc.a1, &lc.a1, sh, &d_o);
            super::tensor::add_into(&mut da1, &dkv);
            norm_bwd(p, g, &lp.ln1, &lc.n1, &da1, &mut dh);
        }
        let dh = dropout_bwd(&cache.m0, &dh);
        self.embed_bwd(g, &cache.ids, &dh);
    }

    // ---- decoder ----------------------------------------------------------

    /// Decoder input: position 0 carries the latent start row, position t ≥ 1
    /// the embedding of target t−1.
    fn decoder_input(&self, targets: &[u8], sos: &[T], nseq: usize) -> Vec<T> {
        let (s, c) = (self.s(), self.c());
        let p = &self.params;
        let mut x = vec![T::zero(); nseq * s * c];
        for n in 0..nseq {
            for t in 0..s {
                let dst = &mut x[(n * s + t) * c..(n * s + t + 1) * c];
                let src: &[T] = if t == 0 {
                    &sos[n * c..(n + 1) * c]
                } else {
                    let id = targets[n * s + t - 1] as usize;
                    &p[self.layout.tok_emb + id * c..][..c]
                };
                let pe = &p[self.layout.pos_emb + t * c..][..c];
                for j in 0..c {
                    dst[j] = src[j] + pe[j];
                }
            }
        }
        x
    }

    fn decoder_fwd(
        &self,
        targets: &[u8],
        sos: &[T],
        memory: &[T],
        nseq: usize,
        drop: &mut Dropout,
    ) -> (Vec<T>, DecCache<T>) {
        let p = &self.params;
        let s = self.s();
        let rows = nseq * s;
        let heads = self.cfg.heads;
        let self_sh = AttnShape { nseq, sq: s, skv: s, heads, causal: true };
        let cross_sh = AttnShape { nseq, sq: s, skv: s + 1, heads, causal: false };
        let mut h = self.decoder_input(targets, sos, nseq);
        let m0 = drop.apply(&mut h);
        let mut layers = Vec::with_capacity(self.cfg.layers);
        for lp in &self.layout.dec {
            let (a1, n1) = norm_fwd(p, &lp.ln1, &h);
            let (mut o, self_att) = attn_fwd(p, &lp.self_attn, &a1, &a1, self_sh);
            let m1 = drop.apply(&mut o);
            super::tensor::add_into(&mut h, &o);
            let (a2, n2) = norm_fwd(p, &lp.ln2, &h);
            let (mut o, cross_att) = attn_fwd(p, &lp.cross_attn, &a2, memory, cross_sh);
            let m2 = drop.apply(&mut o);
            super::tensor::add_into(&mut h, &o);
            let (a3, n3) = norm_fwd(p, &lp.ln3, &h);
            let (mut f, ffn) = ffn_fwd(p, &lp.ffn, &a3, rows);
            let m3 = drop.apply(&mut f);
            super::tensor::add_into(&mut h, &f);
            layers.push(DecLayerCache { n1, a1, self_att, m1, n2, a2, cross_att, m2, n3, a3, ffn, m3 });
        }
        let (out, nf) = norm_fwd(p, &self.layout.dec_ln, &h);
        (out, DecCache { ids: targets.to_vec(), nseq, m0, layers, nf })
    }

    /// Returns (d sos, d memory).
    fn decoder_bwd(&self, g: &mut [T], cache: &DecCache<T>, memory: &[T], dout: &[T]) -> (Vec<T>, Vec<T>) {
        let p = &self.params;
        let (s, c) = (self.s(), self.c());
        let nseq = cache.nseq;
        let rows = nseq * s;
        let heads = self.cfg.heads;
        let self_sh = AttnShape { nseq, sq: s, skv: s, heads, causal: true };
        let cross_sh = AttnShape { nseq, sq: s, skv: s + 1, heads, causal: false };
        let mut dh = vec![T::zero(); dout.len()];
        let mut dmem = vec![T::zero(); memory.len()];
        norm_bwd(p, g, &self.layout.dec_ln, &cache.nf, dout, &mut dh);
        for (lp, lc) in self.layout.dec.iter().zip(&cache.layers).rev() {
            let df = dropout_bwd(&lc.m3, &dh);
            let mut da3 = vec![T::zero(); dh.len()];
            ffn_bwd(p, g, &lp.ffn, &lc.ffn, &lc.a3, &df, rows, &mut da3);
            norm_bwd(p, g, &lp.ln3, &lc.n3, &da3, &mut dh);

            let d_o = dropout_bwd(&lc.m2, &dh);
            let (da2, dm) = attn_bwd(p, g, &lp.cross_attn, &lc.cross_att, &lc.a2, memory, cross_sh, &d_o);
            super::tensor::add_into(&mut dmem, &dm);
            norm_bwd(p, g, &lp.ln2, &lc.n2, &da2, &mut dh);

            let d_o = dropout_bwd(&lc.m1, &dh);
            let (mut da1, dkv) = attn_bwd(p, g, &lp.self_attn, &lc.self_att, &lc.a1, &lc.a1, self_sh, &d_o);
            super::tensor::add_into(&mut da1, &dkv);
            norm_bwd(p, g, &lp.ln1, &lc.n1, &da1, &mut dh);
        }
        let dh = dropout_bwd(&cache.m0, &dh);

        let mut dsos = vec![T::zero(); nseq * c];
        for n in 0..nseq {
            for t in 0..s {
                let d = &dh[(n * s + t) * c..(n * s + t + 1) * c];
                let pe = self.layout.pos_emb + t * c;
                for j in 0..c {
                    g[pe + j] += d[j];
                }
                if t == 0 {
                    dsos[n * c..(n + 1) * c].copy_from_slice(d);
                } else {
                    let te = self.layout.tok_emb + cache.ids[n * s + t - 1] as usize * c;
                    for j in 0..c {
                        g[te + j] += d[j];
                    }
                }
            }
        }
        (dsos, dmem)
    }

    // ---- single-sequence operations (evaluation mode) ---------------------

    /// Encoder output, `seq_len × C`.
    pub fn encode(&self, ids: &[u8]) -> Result<Vec<T>> {
        self.check_ids(ids, MASK_ID, "encoder input")?;
        Ok(self.encoder_fwd(ids, 1, &mut Dropout::off()).0)
    }

    /// Mean-pool then project to (mu, log_var).
    pub fn pool_project(&self, hidden: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        if hidden.iter().any(|x| !x.is_finite()) {
            return Err(Error::numerical("non-finite encoder output"));
        }
        let pooled = sequence_repr(hidden, self.c());
        let mu = linear_fwd(&self.params, &self.layout.fc_mu, &pooled, 1);
        let lv = linear_fwd(&self.params, &self.layout.fc_sigma, &pooled, 1);
        Ok((mu, lv))
    }

    /// `FC_z(z)`, `C` values.
    pub fn latent_row(&self, z: &[T]) -> Vec<T> {
        linear_fwd(&self.params, &self.layout.fc_z, z, z.len() / self.cfg.latent)
    }

    /// `(seq_len + 1) × C`: the latent row followed by the encoded condition.
    pub fn build_memory(&self, z: &[T], cond: &[u8]) -> Result<Vec<T>> {
        if z.len() != self.cfg.latent {
            return Err(Error::structural(format!("latent has width {}, expected {}", z.len(), self.cfg.latent)));
        }
        let mut mem = self.latent_row(z);
        mem.extend(self.encode(cond)?);
        Ok(mem)
    }

    /// Teacher-forced decoder output, `seq_len × C`. Position 0 is fed the
    /// latent row of `memory`.
    pub fn decode(&self, targets: &[u8], memory: &[T]) -> Result<Vec<T>> {
        self.check_ids(targets, (NUM_CLASSES - 1) as u8, "decoder target")?;
        self.check_memory(memory, 1)?;
        let sos = &memory[..self.c()];
        Ok(self.decoder_fwd(targets, sos, memory, 1, &mut Dropout::off()).0)
    }

    fn check_memory(&self, memory: &[T], nseq: usize) -> Result<()> {
        let want = nseq * (self.s() + 1) * self.c();
        if memory.len() != want {
            return Err(Error::structural(format!("memory has {} values, expected {want}", memory.len())));
        }
        Ok(())
    }

    /// Cross-attention weights of the last decoder layer, `heads × seq_len ×
    /// (seq_len + 1)`.
    pub fn cross_attention(&self, targets: &[u8], memory: &[T]) -> Result<Vec<T>> {
        self.check_ids(targets, (NUM_CLASSES - 1) as u8, "decoder target")?;
        self.check_memory(memory, 1)?;
        let sos = &memory[..self.c()];
        let (_, cache) = self.decoder_fwd(targets, sos, memory, 1, &mut Dropout::off());
        Ok(cache.layers.last().expect("at least one layer").cross_att.probs.clone())
    }

    /// Logits over the 12 classes, `rows × 12`.
    pub fn head(&self, hidden: &[T]) -> Vec<T> {
        linear_fwd(&self.params, &self.layout.head, hidden, hidden.len() / self.c())
    }

    // ---- training pass ----------------------------------------------------

    fn check_batch(&self, b: &TrainBatch) -> Result<()> {
        let s = self.s();
        if b.n == 0 {
            return Err(Error::Empty("empty training batch".into()));
        }
        if b.targets.len() != b.n * s || b.conds.len() != b.n * s || b.eps.len() != b.n * self.cfg.latent {
            return Err(Error::structural("training batch buffers do not match n"));
        }
        if b.targets.iter().any(|&t| t as usize >= NUM_CLASSES) || b.conds.iter().any(|&t| t as usize >= VOCAB_SIZE) {
            return Err(Error::structural("training batch has out-of-vocabulary ids"));
        }
        if !b.pairs.is_empty() && b.pairs.len() != b.n {
            return Err(Error::structural("contrastive pairs must cover every anchor"));
        }
        for smp in &b.samples {
            if smp.tokens.len() != s || smp.z.len() != self.cfg.latent {
                return Err(Error::structural("contrastive sample has the wrong shape"));
            }
        }
        let k = b.samples.len();
        if b.pairs.iter().any(|&(p, n)| p.is_some_and(|i| i >= k) || n.is_some_and(|i| i >= k)) {
            return Err(Error::structural("contrastive pair index out of range"));
        }
        Ok(())
    }

    pub fn forward(&self, b: &TrainBatch, drop: &mut Dropout) -> Result<(LossBreakdown, ForwardCache<T>)> {
        self.check_batch(b)?;
        let p = &self.params;
        let (s, c, c0) = (self.s(), self.c(), self.cfg.latent);
        let n = b.n;
        let k = b.samples.len();

        // Targets first, then each distinct condition once; fully masked
        // conditions are common and the contrastive samples reuse that row.
        let mut enc_ids = b.targets.clone();
        let all_mask = vec![MASK_ID; s];
        let sample_conds = std::iter::repeat_n(all_mask.as_slice(), k);
        let mut seen: HashMap<&[u8], usize> = HashMap::new();
        let mut cond_src = Vec::with_capacity(n + k);
        for cond in b.conds.chunks_exact(s).chain(sample_conds) {
            let next = enc_ids.len() / s;
            let src = *seen.entry(cond).or_insert(next);
            if src == next {
                enc_ids.extend_from_slice(cond);
            }
            cond_src.push(src);
        }
        let n_enc = enc_ids.len() / s;
        let (enc_out, enc) = self.encoder_fwd(&enc_ids, n_enc, drop);

        let mut pooled = Vec::with_capacity(n * c);
        for i in 0..n {
            pooled.extend(sequence_repr(&enc_out[i * s * c..(i + 1) * s * c], c));
        }
        let mu = linear_fwd(p, &self.layout.fc_mu, &pooled, n);
        let lv = linear_fwd(p, &self.layout.fc_sigma, &pooled, n);
        let mut z_all = reparameterize_with(&mu, &lv, &b.eps);
        for smp in &b.samples {
            z_all.extend(smp.z.iter().map(|&x| T::c(x)));
        }
        let n_dec = n + k;
        let zc = linear_fwd(p, &self.layout.fc_z, &z_all, n_dec);

        let stride = (s + 1) * c;
        let mut memory = vec![T::zero(); n_dec * stride];
        for (i, &src_seq) in cond_src.iter().enumerate() {
            let dst = &mut memory[i * stride..(i + 1) * stride];
            dst[..c].copy_from_slice(&zc[i * c..(i + 1) * c]);
            dst[c..].copy_from_slice(&enc_out[src_seq * s * c..(src_seq + 1) * s * c]);
        }

        let mut dec_ids = b.targets.clone();
        for smp in &b.samples {
            dec_ids.extend_from_slice(&smp.tokens);
        }
        let (dec_out, dec) = self.decoder_fwd(&dec_ids, &zc, &memory, n_dec, drop);

        let mut probs = linear_fwd(p, &self.layout.head, &dec_out[..n * s * c], n * s);
        let recon = recon_loss(&probs, &b.targets);
        for row in probs.chunks_exact_mut(NUM_CLASSES) {
            super::tensor::softmax_in_place(row);
        }

        let kl = (0..n)
            .map(|i| kl_loss(&mu[i * c0..(i + 1) * c0], &lv[i * c0..(i + 1) * c0]))
            .sum::<f64>()
            / n as f64;

        let mut reps = Vec::with_capacity(n_dec * c);
        for i in 0..n_dec {
            reps.extend(sequence_repr(&dec_out[i * s * c..(i + 1) * s * c], c));
        }
        let rep = |i: usize| &reps[i * c..(i + 1) * c];
        let mut contrastive = 0.0;
        for (i, &(pos, neg)) in b.pairs.iter().enumerate() {
            let pos: Vec<&[T]> = pos.map(|j| rep(n + j)).into_iter().collect();
            let neg: Vec<&[T]> = neg.map(|j| rep(n + j)).into_iter().collect();
            contrastive += contrastive_loss(rep(i), &pos, &neg)?;
        }
        contrastive /= n as f64;

        let total = recon + self.cfg.kl_weight * kl + self.cfg.contrastive_weight * contrastive;
        let loss = LossBreakdown { recon, kl, contrastive, total };
        let cache = ForwardCache { enc, enc_out, cond_src, pooled, mu, lv, z_all, memory, dec, dec_out, probs, reps };
        Ok((loss, cache))
    }

    /// Gradient of `total` with respect to every parameter.
    pub fn backward(&self, b: &TrainBatch, fc: &ForwardCache<T>) -> Vec<T> {
        let p = &self.params;
        let (s, c, c0) = (self.s(), self.c(), self.cfg.latent);
        let n = b.n;
        let k = b.samples.len();
        let n_dec = n + k;
        let mut g = vec![T::zero(); p.len()];

        // Reconstruction.
        let mut dlogits = fc.probs.clone();
        let inv = T::c(1.0 / (n * s) as f64);
        for (row, &t) in dlogits.chunks_exact_mut(NUM_CLASSES).zip(&b.targets) {
            row[t as usize] -= T::one();
            row.iter_mut().for_each(|x| *x *= inv);
        }
        let mut ddec = vec![T::zero(); fc.dec_out.len()];
        linear_bwd(
            p,
            &mut g,
            &self.layout.head,
            &fc.dec_out[..n * s * c],
            &dlogits,
            n * s,
            Some(&mut ddec[..n * s * c]),
        );

        // Contrastive, through the mean-pooled representations.
        let cw = self.cfg.contrastive_weight / n as f64;
        if cw > 0.0 {
            let mut drep = vec![0.0f64; n_dec * c];
            let rep = |i: usize| &fc.reps[i * c..(i + 1) * c];
            for (i, &(pos, neg)) in b.pairs.iter().enumerate() {
                for (j, positive) in [(pos, true), (neg, false)] {
                    let Some(j) = j else { continue };
                    let (a, o) = (rep(i), rep(n + j));
                    let (cos, ga) = cosine_grad(a, o);
                    let (_, go) = cosine_grad(o, a);
                    let w = if positive { -cw } else { 2.0 * cos * cw };
                    for d in 0..c {
                        drep[i * c + d] += w * ga[d];
                        drep[(n + j) * c + d] += w * go[d];
                    }
                }
            }
            let inv_s = 1.0 / s as f64;
            for i in 0..n_dec {
                for t in 0..s {
                    let row = &mut ddec[(i * s + t) * c..(i * s + t + 1) * c];
                    for d in 0..c {
                        row[d] += T::c(drep[i * c + d] * inv_s);
                    }
                }
            }
        }

        let (dsos, dmem) = self.decoder_bwd(&mut g, &fc.dec, &fc.memory, &ddec);

        // Memory rows back to FC_z and the encoder outputs of the conditions.
        let stride = (s + 1) * c;
        let mut dzc = dsos;
        let mut denc = vec![T::zero(); fc.enc_out.len()];
        for (i, &src_seq) in fc.cond_src.iter().enumerate() {
            let dm = &dmem[i * stride..(i + 1) * stride];
            super::tensor::add_into(&mut dzc[i * c..(i + 1) * c], &dm[..c]);
            super::tensor::add_into(&mut denc[src_seq * s * c..(src_seq + 1) * s * c], &dm[c..]);
        }
        let mut dz = vec![T::zero(); n_dec * c0];
        linear_bwd(p, &mut g, &self.layout.fc_z, &fc.z_all, &dzc, n_dec, Some(&mut dz));

        // Reparameterisation and KL.
        let kw = T::c(self.cfg.kl_weight / (c0 * n) as f64);
        let mut dmu = vec![T::zero(); n * c0];
        let mut dlv = vec![T::zero(); n * c0];
        for i in 0..n * c0 {
            let (mu, lv) = (fc.mu[i], fc.lv[i]);
            let sd = (T::c(0.5) * lv).exp();
            dmu[i] = dz[i] + kw * mu;
            dlv[i] = dz[i] * T::c(b.eps[i]) * T::c(0.5) * sd + kw * T::c(0.5) * (lv.exp() - T::one());
        }
        let mut dpooled = vec![T::zero(); n * c];
        linear_bwd(p, &mut g, &self.layout.fc_mu, &fc.pooled, &dmu, n, Some(&mut dpooled));
        linear_bwd(p, &mut g, &self.layout.fc_sigma, &fc.pooled, &dlv, n, Some(&mut dpooled));
        let inv_s = T::c(1.0 / s as f64);
        for i in 0..n {
            for t in 0..s {
                let row = &mut denc[(i * s + t) * c..(i * s + t + 1) * c];
                for d in 0..c {
                    row[d] += dpooled[i * c + d] * inv_s;
                }
            }
        }

        self.encoder_bwd(&mut g, &fc.enc, &denc);
        g
    }

    /// Loss and gradient in one call, evaluation-mode dropout.
    pub fn loss_and_grad(&self, b: &TrainBatch) -> Result<(LossBreakdown, Vec<T>)> {
        let (loss, cache) = self.forward(b, &mut Dropout::off())?;
        let g = self.backward(b, &cache);
        Ok((loss, g))
    }

    /// Per-position negative log-likelihood of the batch targets, `n × seq_len`.
    pub fn position_nll(&self, b: &TrainBatch) -> Result<Vec<f64>> {
        let (_, cache) = self.forward(b, &mut Dropout::off())?;
        Ok(cache
            .probs
            .chunks_exact(NUM_CLASSES)
            .zip(&b.targets)
            .map(|(row, &t)| -row[t as usize].f64().ln())
            .collect())
    }

    /// Posterior mean for one day, used for latent dumps.
    pub fn posterior(&self, ids: &[u8]) -> Result<(Vec<T>, Vec<T>)> {
        self.check_ids(ids, (NUM_CLASSES - 1) as u8, "day")?;
        let h = self.encode(ids)?;
        self.pool_project(&h)
    }
}
