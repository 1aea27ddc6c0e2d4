//! Autoregressive sampling with a key/value cache.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::cvae::Cvae;
use super::layers::{ffn_fwd, linear_fwd, norm_fwd};
use super::params::AttnP;
use super::tensor::{softmax_in_place, Real};
use crate::activity::{MASK_ID, NUM_CLASSES};
use crate::error::{Error, Result};

/// Decoder state for `n` sequences advanced one position per [`step`](Self::step).
///
/// Keys are cached transposed per head (`[seq][head][dim][pos]`) so that
/// attention scores accumulate along contiguous rows; values stay row-major.
pub struct IncrementalDecoder<'m, T: Real> {
    m: &'m Cvae<T>,
    n: usize,
    t: usize,
    sos: Vec<T>,
    self_kt: Vec<Vec<T>>,
    self_v: Vec<Vec<T>>,
    mem_kt: Vec<Vec<T>>,
    mem_v: Vec<Vec<T>>,
}

/// Row-major `n × len × c` keys to `[seq][head][dim][pos]` with room for `cap` positions.
fn transpose_keys<T: Real>(k: &[T], n: usize, len: usize, cap: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * c * cap];
    for i in 0..n {
        for j in 0..len {
            let row = &k[(i * len + j) * c..][..c];
            for (e, &x) in row.iter().enumerate() {
                out[(i * c + e) * cap + j] = x;
            }
        }
    }
    out
}

/// Single-query attention for every (sequence, head) against the first
/// `len` cached positions. `cap` is the position capacity of the caches.
#[allow(clippy::too_many_arguments)]
fn attend<T: Real>(q: &[T], kt: &[T], vals: &[T], n: usize, cap: usize, len: usize, c: usize, heads: usize) -> Vec<T> {
    let dh = c / heads;
    let scale = T::c(1.0 / (dh as f64).sqrt());
    let mut ctx = vec![T::zero(); n * c];
    let mut w = vec![T::zero(); len];
    for i in 0..n {
        let vals = &vals[i * cap * c..][..len * c];
        for h in 0..heads {
            w.fill(T::zero());
            for d in 0..dh {
                let qd = q[i * c + h * dh + d] * scale;
                let row = &kt[(i * c + h * dh + d) * cap..][..len];
                for (wj, &kj) in w.iter_mut().zip(row) {
                    *wj += qd * kj;
                }
            }
            softmax_in_place(&mut w);
            let out = &mut ctx[i * c + h * dh..][..dh];
            for (vj, &wj) in vals.chunks_exact(c).zip(&w) {
                for (o, &v) in out.iter_mut().zip(&vj[h * dh..h * dh + dh]) {
                    *o += wj * v;
                }
            }
        }
    }
    ctx
}

impl<'m, T: Real> IncrementalDecoder<'m, T> {
    /// `memory` is `n × (seq_len + 1) × C` with the latent row first.
    pub fn new(m: &'m Cvae<T>, memory: &[T], n: usize) -> Self {
        let (s, c) = (m.cfg.seq_len, m.cfg.hidden);
        let stride = (s + 1) * c;
        assert_eq!(memory.len(), n * stride, "memory shape");
        let sos = (0..n).flat_map(|i| memory[i * stride..i * stride + c].iter().copied()).collect();
        let p = &m.params;
        let (mem_kt, mem_v) = m
            .layout
            .dec
            .iter()
            .map(|lp| {
                let k = linear_fwd(p, &lp.cross_attn.k, memory, n * (s + 1));
                (
                    transpose_keys(&k, n, s + 1, s + 1, c),
                    linear_fwd(p, &lp.cross_attn.v, memory, n * (s + 1)),
                )
            })
            .unzip();
        let cache = || vec![vec![T::zero(); n * s * c]; m.cfg.layers];
        IncrementalDecoder { m, n, t: 0, sos, self_kt: cache(), self_v: cache(), mem_kt, mem_v }
    }

    pub fn position(&self) -> usize {
        self.t
    }

    fn attn_out(&self, a: &AttnP, ctx: &[T]) -> Vec<T> {
        linear_fwd(&self.m.params, &a.o, ctx, self.n)
    }

    /// Feeds position `t` (the start row at t = 0, otherwise the previous
    /// tokens) and returns `n × 12` logits for position `t`.
    pub fn step(&mut self, prev: Option<&[u8]>) -> Vec<T> {
        let m = self.m;
        let p = &m.params;
        let (s, c, heads) = (m.cfg.seq_len, m.cfg.hidden, m.cfg.heads);
        let (n, t) = (self.n, self.t);
        assert!(t < s, "decoded past the end of the sequence");
        let pe = &p[m.layout.pos_emb + t * c..][..c];
        let mut x = vec![T::zero(); n * c];
        for i in 0..n {
            let src: &[T] = if t == 0 {
                &self.sos[i * c..(i + 1) * c]
            } else {
                let id = prev.expect("previous tokens after the first step")[i] as usize;
                &p[m.layout.tok_emb + id * c..][..c]
            };
            for j in 0..c {
                x[i * c + j] = src[j] + pe[j];
            }
        }
        for (l, lp) in m.layout.dec.iter().enumerate() {
            let (a, _) = norm_fwd(p, &lp.ln1, &x);
            let q = linear_fwd(p, &lp.self_attn.q, &a, n);
            let k = linear_fwd(p, &lp.self_attn.k, &a, n);
            let v = linear_fwd(p, &lp.self_attn.v, &a, n);
            for i in 0..n {
                let at = i * s * c + t * c;
                self.self_v[l][at..at + c].copy_from_slice(&v[i * c..(i + 1) * c]);
                for (e, &x) in k[i * c..(i + 1) * c].iter().enumerate() {
                    self.self_kt[l][(i * c + e) * s + t] = x;
                }
            }
            let ctx = attend(&q, &self.self_kt[l], &self.self_v[l], n, s, t + 1, c, heads);
            super::tensor::add_into(&mut x, &self.attn_out(&lp.self_attn, &ctx));

            let (a, _) = norm_fwd(p, &lp.ln2, &x);
            let q = linear_fwd(p, &lp.cross_attn.q, &a, n);
            let ctx = attend(&q, &self.mem_kt[l], &self.mem_v[l], n, s + 1, s + 1, c, heads);
            super::tensor::add_into(&mut x, &self.attn_out(&lp.cross_attn, &ctx));

            let (a, _) = norm_fwd(p, &lp.ln3, &x);
            let (f, _) = ffn_fwd(p, &lp.ffn, &a, n);
            super::tensor::add_into(&mut x, &f);
        }
        let (out, _) = norm_fwd(p, &m.layout.dec_ln, &x);
        self.t += 1;
        m.head(&out)
    }
}

/// Draws a class from logits; temperature 0 means argmax (first maximum).
pub fn sample_logits<T: Real, R: Rng + ?Sized>(logits: &[T], temperature: f64, rng: &mut R) -> usize {
    if temperature <= 0.0 {
        let mut best = 0;
        for (i, &x) in logits.iter().enumerate() {
            if x > logits[best] {
                best = i;
            }
        }
        return best;
    }
    let mut probs: Vec<f64> = logits.iter().map(|&x| x.f64() / temperature).collect();
    softmax_in_place(&mut probs);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pr) in probs.iter().enumerate() {
        acc += pr;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Standard-normal latent of width `c0`.
pub fn draw_latent<R: Rng + ?Sized>(rng: &mut R, c0: usize) -> Vec<f64> {
    (0..c0).map(|_| rng.sample(StandardNormal)).collect()
}

impl<T: Real> Cvae<T> {
    /// Encodes each distinct condition once and assembles `n` memories.
    pub fn memories(&self, zs: &[Vec<f64>], conds: &[&[u8]]) -> Result<Vec<T>> {
        let (s, c) = (self.cfg.seq_len, self.cfg.hidden);
        let mut encoded: HashMap<&[u8], Vec<T>> = HashMap::new();
        for &cond in conds {
            if !encoded.contains_key(cond) {
                encoded.insert(cond, self.encode(cond)?);
            }
        }
        let z_flat: Vec<T> = zs.iter().flatten().map(|&x| T::c(x)).collect();
        let rows = self.latent_row(&z_flat);
        let mut mem = Vec::with_capacity(zs.len() * (s + 1) * c);
        for (i, &cond) in conds.iter().enumerate() {
            mem.extend_from_slice(&rows[i * c..(i + 1) * c]);
            mem.extend_from_slice(&encoded[cond]);
        }
        Ok(mem)
    }

    /// Samples one sequence per (latent, condition, generator). Bins whose
    /// condition id is not MASK are overwritten with the fixed class before
    /// being fed back.
    pub fn sample_sequences(
        &self,
        zs: &[Vec<f64>],
        conds: &[&[u8]],
        temperature: f64,
        rngs: &mut [ChaCha8Rng],
    ) -> Result<Vec<Vec<u8>>> {
        let n = zs.len();
        assert!(conds.len() == n && rngs.len() == n, "one condition and generator per latent");
        if n == 0 {
            return Ok(Vec::new());
        }
        let s = self.cfg.seq_len;
        let memory = self.memories(zs, conds)?;
        let mut dec = IncrementalDecoder::new(self, &memory, n);
        let mut out = vec![vec![0u8; s]; n];
        let mut prev = vec![0u8; n];
        for t in 0..s {
            let logits = dec.step((t > 0).then_some(prev.as_slice()));
            for i in 0..n {
                let fixed = conds[i][t];
                let tok = if fixed != MASK_ID {
                    fixed
                } else {
                    let row = &logits[i * NUM_CLASSES..(i + 1) * NUM_CLASSES];
                    if row.iter().any(|x| !x.is_finite()) {
                        return Err(Error::numerical(format!("non-finite logits at bin {t}")));
                    }
                    sample_logits(row, temperature, &mut rngs[i]) as u8
                };
                out[i][t] = tok;
                prev[i] = tok;
            }
        }
        Ok(out)
    }

    /// Teacher-forced logits for one sequence through the batched path.
    pub fn teacher_forced_logits(&self, targets: &[u8], memory: &[T]) -> Result<Vec<T>> {
        let h = self.decode(targets, memory)?;
        Ok(self.head(&h))
    }
}
