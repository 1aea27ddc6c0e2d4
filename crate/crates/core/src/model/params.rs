//! Flat parameter layout. All tensors live in one buffer in a fixed named
//! order, which keeps the optimizer, checkpoints and gradient checks trivial.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::tensor::Real;
use crate::activity::{NUM_CLASSES, VOCAB_SIZE};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Normal(f64),
    Zeros,
    Ones,
    /// Fixed sin/cos table over the rows; trained like any other weight.
    Sinusoid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub off: usize,
    pub init: Init,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearP {
    pub w: usize,
    pub b: usize,
    pub n_in: usize,
    pub n_out: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct NormP {
    pub g: usize,
    pub b: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct AttnP {
    pub q: LinearP,
    pub k: LinearP,
    pub v: LinearP,
    pub o: LinearP,
}

#[derive(Debug, Clone, Copy)]
pub struct FfnP {
    pub up: LinearP,
    pub down: LinearP,
}

#[derive(Debug, Clone, Copy)]
pub struct EncLayerP {
    pub ln1: NormP,
    pub attn: AttnP,
    pub ln2: NormP,
    pub ffn: FfnP,
}

#[derive(Debug, Clone, Copy)]
pub struct DecLayerP {
    pub ln1: NormP,
    pub self_attn: AttnP,
    pub ln2: NormP,
    pub cross_attn: AttnP,
    pub ln3: NormP,
    pub ffn: FfnP,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub enc: Vec<EncLayerP>,
    pub enc_ln: NormP,
    pub fc_mu: LinearP,
    pub fc_sigma: LinearP,
    pub fc_z: LinearP,
    pub dec: Vec<DecLayerP>,
    pub dec_ln: NormP,
    pub head: LinearP,
    pub specs: Vec<TensorSpec>,
    pub total: usize,
}

struct Builder {
    specs: Vec<TensorSpec>,
    total: usize,
}

impl Builder {
    fn alloc(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        let off = self.total;
        let spec = TensorSpec { name, shape, off, init };
        self.total += spec.len();
        self.specs.push(spec);
        off
    }

    fn linear(&mut self, name: &str, n_in: usize, n_out: usize, std: f64) -> LinearP {
        let w = self.alloc(format!("{name}.weight"), vec![n_in, n_out], Init::Normal(std));
        let b = self.alloc(format!("{name}.bias"), vec![n_out], Init::Zeros);
        LinearP { w, b, n_in, n_out }
    }

    fn norm(&mut self, name: &str, dim: usize) -> NormP {
        let g = self.alloc(format!("{name}.gain"), vec![dim], Init::Ones);
        let b = self.alloc(format!("{name}.bias"), vec![dim], Init::Zeros);
        NormP { g, b, dim }
    }

    fn attn(&mut self, name: &str, c: usize, std: f64, out_std: f64) -> AttnP {
        AttnP {
            q: self.linear(&format!("{name}.q"), c, c, std),
            k: self.linear(&format!("{name}.k"), c, c, std),
            v: self.linear(&format!("{name}.v"), c, c, std),
            o: self.linear(&format!("{name}.o"), c, c, out_std),
        }
    }

    fn ffn(&mut self, name: &str, c: usize, f: usize, out_std: f64) -> FfnP {
        FfnP {
            up: self.linear(&format!("{name}.up"), c, f, (1.0 / c as f64).sqrt()),
            down: self.linear(&format!("{name}.down"), f, c, out_std),
        }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Layout {
        let c = cfg.hidden;
        let f = cfg.ffn_width();
        let std = (1.0 / c as f64).sqrt();
        // Residual-branch outputs shrink with depth so the stream stays O(1).
        let out_std = std / (2.0 * cfg.layers as f64).sqrt();
        let mut b = Builder { specs: Vec::new(), total: 0 };

        let tok_emb = b.alloc("tok_emb".into(), vec![VOCAB_SIZE, c], Init::Normal(1.0));
        let pos_emb = b.alloc("pos_emb".into(), vec![cfg.seq_len, c], Init::Sinusoid);
        let enc = (0..cfg.layers)
            .map(|i| EncLayerP {
                ln1: b.norm(&format!("enc.{i}.ln1"), c),
                attn: b.attn(&format!("enc.{i}.attn"), c, std, out_std),
                ln2: b.norm(&format!("enc.{i}.ln2"), c),
                ffn: b.ffn(&format!("enc.{i}.ffn"), c, f, out_std),
            })
            .collect();
        let enc_ln = b.norm("enc.ln", c);
        let fc_mu = b.linear("fc_mu", c, cfg.latent, std);
        let fc_sigma = b.linear("fc_sigma", c, cfg.latent, 0.01 * std);
        let fc_z = b.linear("fc_z", cfg.latent, c, (1.0 / cfg.latent as f64).sqrt());
        let dec = (0..cfg.layers)
            .map(|i| DecLayerP {
                ln1: b.norm(&format!("dec.{i}.ln1"), c),
                self_attn: b.attn(&format!("dec.{i}.self"), c, std, out_std),
                ln2: b.norm(&format!("dec.{i}.ln2"), c),
                cross_attn: b.attn(&format!("dec.{i}.cross"), c, std, out_std),
                ln3: b.norm(&format!("dec.{i}.ln3"), c),
                ffn: b.ffn(&format!("dec.{i}.ffn"), c, f, out_std),
            })
            .collect();
        let dec_ln = b.norm("dec.ln", c);
        let head = b.linear("head", c, NUM_CLASSES, std);

        Layout {
            tok_emb,
            pos_emb,
            enc,
            enc_ln,
            fc_mu,
            fc_sigma,
            fc_z,
            dec,
            dec_ln,
            head,
            specs: b.specs,
            total: b.total,
        }
    }

    pub fn init<T: Real, R: Rng>(&self, rng: &mut R) -> Vec<T> {
        let mut p = vec![T::zero(); self.total];
        for s in &self.specs {
            let dst = &mut p[s.off..s.off + s.len()];
            match s.init {
                Init::Zeros => {}
                Init::Ones => dst.fill(T::one()),
                Init::Sinusoid => {
                    let c = *s.shape.last().expect("2-d table");
                    for (i, x) in dst.iter_mut().enumerate() {
                        let (pos, j) = ((i / c) as f64, i % c);
                        let a = pos / 10000f64.powf((j - j % 2) as f64 / c as f64);
                        *x = T::c(if j % 2 == 0 { a.sin() } else { a.cos() });
                    }
                }
                Init::Normal(std) => {
                    let d = Normal::new(0.0, std).expect("positive std");
                    for x in dst {
                        *x = T::c(d.sample(rng));
                    }
                }
            }
        }
        p
    }

    pub fn find(&self, name: &str) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn specs_tile_the_buffer() {
        let l = Layout::new(&ModelConfig::desk());
        let mut off = 0;
        for s in &l.specs {
            assert_eq!(s.off, off, "{}", s.name);
            off += s.len();
        }
        assert_eq!(off, l.total);
        let names: std::collections::HashSet<_> = l.specs.iter().map(|s| &s.name).collect();
        assert_eq!(names.len(), l.specs.len());
        assert_eq!(l.find("head.weight").unwrap().shape, vec![64, 12]);
    }

    #[test]
    fn init_is_seeded() {
        let l = Layout::new(&ModelConfig::desk());
        let a: Vec<f32> = l.init(&mut ChaCha8Rng::seed_from_u64(1));
        let b: Vec<f32> = l.init(&mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        let g = l.find("enc.ln.gain").unwrap();
        assert!(a[g.off..g.off + g.len()].iter().all(|&x| x == 1.0));
    }
}
