//! `*.oracle-ckpt` files.
//!
//! Layout: a magic line, one JSON header line describing the config, the
//! tensors (name, shape, offset) and the generator state, then the raw
//! little-endian f32 payload: parameters, followed by the Adam moments when
//! present.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::cvae::Cvae;
use super::train::{Adam, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::rules::PlausibilityRuleSet;

pub const CKPT_MAGIC: &str = "ORACLE-CKPT";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    /// Hex-encoded 32-byte key.
    pub seed: String,
    pub stream: u64,
    /// Word position as a decimal string (it is 128-bit).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || Error::structural("malformed generator state in checkpoint");
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    model: ModelConfig,
    train: Option<TrainConfig>,
    step: u64,
    total_steps: u64,
    rng: Option<RngState>,
    adam_t: Option<u64>,
    tensors: Vec<TensorEntry>,
    param_count: usize,
}

/// Everything a checkpoint can hold.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Cvae<f32>,
    pub train: Option<TrainConfig>,
    pub step: u64,
    pub total_steps: u64,
    pub rng: Option<RngState>,
    pub adam: Option<Adam>,
}

impl Checkpoint {
    pub fn from_model(model: Cvae<f32>) -> Self {
        Checkpoint { model, train: None, step: 0, total_steps: 0, rng: None, adam: None }
    }

    pub fn from_trainer(t: &Trainer) -> Self {
        Checkpoint {
            model: t.model.clone(),
            train: Some(t.tcfg.clone()),
            step: t.step,
            total_steps: t.total_steps,
            rng: Some(RngState::capture(&t.rng)),
            adam: Some(t.adam.clone()),
        }
    }

    /// Resumes a trainer exactly where the checkpoint left off.
    pub fn into_trainer(self, rules: PlausibilityRuleSet) -> Result<Trainer> {
        let tcfg = self.train.ok_or_else(|| Error::Config("checkpoint holds no training state".into()))?;
        let rng = self
            .rng
            .as_ref()
            .ok_or_else(|| Error::Config("checkpoint holds no generator state".into()))?
            .restore()?;
        let adam = self.adam.unwrap_or_else(|| Adam::new(self.model.params.len()));
        Ok(Trainer { model: self.model, tcfg, rules, adam, rng, step: self.step, total_steps: self.total_steps })
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let layout = &self.model.layout;
        let header = Header {
            version: CKPT_VERSION,
            model: self.model.cfg.clone(),
            train: self.train.clone(),
            step: self.step,
            total_steps: self.total_steps,
            rng: self.rng.clone(),
            adam_t: self.adam.as_ref().map(|a| a.t),
            tensors: layout
                .specs
                .iter()
                .map(|s| TensorEntry { name: s.name.clone(), shape: s.shape.clone(), offset: s.off })
                .collect(),
            param_count: layout.total,
        };
        writeln!(w, "{CKPT_MAGIC} {CKPT_VERSION}")?;
        let json = serde_json::to_string(&header).map_err(|e| Error::structural(e.to_string()))?;
        writeln!(w, "{json}")?;
        let mut put = |v: &[f32]| -> Result<()> {
            let mut buf = Vec::with_capacity(v.len() * 4);
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf)?;
            Ok(())
        };
        put(&self.model.params)?;
        if let Some(a) = &self.adam {
            put(&a.m)?;
            put(&a.v)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let magic = line.trim_end();
        match magic.split_once(' ') {
            Some((CKPT_MAGIC, v)) if v == CKPT_VERSION.to_string() => {}
            Some((CKPT_MAGIC, v)) => {
                return Err(Error::structural(format!("unsupported checkpoint version {v}")));
            }
            _ => return Err(Error::structural("not an oracle checkpoint")),
        }
        line.clear();
        r.read_line(&mut line)?;
        let h: Header = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::structural(format!("bad checkpoint header: {e}")))?;

        let model_layout = super::params::Layout::new(&h.model);
        if model_layout.total != h.param_count || model_layout.specs.len() != h.tensors.len() {
            return Err(Error::structural("checkpoint tensors do not match its config"));
        }
        for (s, t) in model_layout.specs.iter().zip(&h.tensors) {
            if s.name != t.name || s.shape != t.shape || s.off != t.offset {
                return Err(Error::structural(format!("checkpoint tensor `{}` does not match", t.name)));
            }
        }
        let mut take = |n: usize| -> Result<Vec<f32>> {
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf)
                .map_err(|_| Error::structural("truncated checkpoint payload"))?;
            Ok(buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
        };
        let params = take(h.param_count)?;
        let adam = match h.adam_t {
            Some(t) => {
                let m = take(h.param_count)?;
                let v = take(h.param_count)?;
                Some(Adam { t, m, v, ..Adam::new(0) })
            }
            None => None,
        };
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::structural("trailing bytes after checkpoint payload"));
        }
        Ok(Checkpoint {
            model: Cvae::from_params(h.model, params)?,
            train: h.train,
            step: h.step,
            total_steps: h.total_steps,
            rng: h.rng,
            adam,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::read(std::fs::File::open(path)?)
    }
}
