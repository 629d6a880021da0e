//! Versioned binary checkpoints: model configuration, named weight
//! tensors, optimizer state, RNG state, and the episode counter.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MNCK" | u32 version | config | u64 episode counter
//!        | named tensor table (theta)
//!        | u64 adam step | f64 lr,b1,b2,eps | tensor table m | tensor table v
//!        | rng: 32 seed bytes | u64 stream | u128 word position
//! ```
//!
//! A tensor table is `u32 count` followed by
//! `u32 name_len | name | u32 rank | u32 extents... | f64 data...` per entry.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::adam::AdamState;
use crate::error::{Error, Result};
use crate::model::{
    BaseInput, LstmGenParams, MetaNet, MlpGenParams, ModelConfig, SlowWeights, Variant,
};
use crate::net::{Activation, LayerKind, LayerSpec, NetSpec};
use crate::preprocess::GradPreprocConfig;
use crate::rng::RngState;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MNCK";
pub const VERSION: u32 = 1;

pub struct Checkpoint {
    pub cfg: ModelConfig,
    pub weights: SlowWeights,
    pub adam: AdamState,
    pub rng: RngState,
    pub episode_counter: u64,
}

impl Checkpoint {
    pub fn model(&self) -> Result<MetaNet> {
        MetaNet::from_weights(self.cfg.clone(), self.weights.clone())
    }
}

// ── Writer ──────────────────────────────────────────────────────────────

struct W(Vec<u8>);

impl W {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, v: &[u8]) {
        self.0.extend_from_slice(v);
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.shape().len() as u32);
        for &e in t.shape() {
            self.u32(e as u32);
        }
        for &v in t.data() {
            self.f64(v);
        }
    }
    fn tensor_table(&mut self, entries: &[(String, &Tensor)]) {
        self.u32(entries.len() as u32);
        for (name, t) in entries {
            self.str(name);
            self.tensor(t);
        }
    }
}

// ── Reader ──────────────────────────────────────────────────────────────

struct R<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> R<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Decode(format!(
                "truncated checkpoint: missing {what}"
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
    fn u128(&mut self, what: &str) -> Result<u128> {
        let b = self.take(16, what)?;
        Ok(u128::from_le_bytes(b.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }
    fn str(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let b = self.take(n, what)?;
        core::str::from_utf8(b)
            .map(|s| s.into())
            .map_err(|_| Error::Decode(format!("{what}: invalid utf-8 name")))
    }
    fn tensor(&mut self, what: &str) -> Result<Tensor> {
        let rank = self.u32(what)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32(what)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(self.f64(what)?);
        }
        Tensor::new(shape, data)
    }
    fn tensor_table(&mut self, what: &str) -> Result<Vec<(String, Tensor)>> {
        let n = self.u32(what)? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let name = self.str(what)?;
            let t = self.tensor(what)?;
            out.push((name, t));
        }
        Ok(out)
    }
}

// ── Config encoding ─────────────────────────────────────────────────────

fn write_spec(w: &mut W, spec: &NetSpec) {
    w.u32(spec.input_shape.len() as u32);
    for &e in &spec.input_shape {
        w.u32(e as u32);
    }
    w.u32(spec.layers.len() as u32);
    for l in &spec.layers {
        w.u8(l.augmented as u8);
        match &l.kind {
            LayerKind::Dense { in_dim, out_dim, act } => {
                w.u8(0);
                w.u32(*in_dim as u32);
                w.u32(*out_dim as u32);
                w.u8(matches!(act, Activation::Linear) as u8);
            }
            LayerKind::Conv3x3 { in_ch, out_ch, pool } => {
                w.u8(1);
                w.u32(*in_ch as u32);
                w.u32(*out_ch as u32);
                w.u8(*pool as u8);
            }
            LayerKind::SoftmaxOut { in_dim, out_dim } => {
                w.u8(2);
                w.u32(*in_dim as u32);
                w.u32(*out_dim as u32);
            }
        }
    }
}

fn read_spec(r: &mut R<'_>) -> Result<NetSpec> {
    let rank = r.u32("spec input rank")? as usize;
    let mut input_shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        input_shape.push(r.u32("spec input shape")? as usize);
    }
    let n = r.u32("spec layer count")? as usize;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        let augmented = r.u8("layer aug flag")? != 0;
        let kind = match r.u8("layer kind")? {
            0 => LayerKind::Dense {
                in_dim: r.u32("dense in")? as usize,
                out_dim: r.u32("dense out")? as usize,
                act: if r.u8("dense act")? != 0 {
                    Activation::Linear
                } else {
                    Activation::Relu
                },
            },
            1 => LayerKind::Conv3x3 {
                in_ch: r.u32("conv in")? as usize,
                out_ch: r.u32("conv out")? as usize,
                pool: r.u8("conv pool")? != 0,
            },
            2 => LayerKind::SoftmaxOut {
                in_dim: r.u32("softmax in")? as usize,
                out_dim: r.u32("softmax out")? as usize,
            },
            k => return Err(Error::Decode(format!("unknown layer kind tag {k}"))),
        };
        layers.push(LayerSpec { kind, augmented });
    }
    Ok(NetSpec {
        input_shape,
        layers,
    })
}

fn write_config(w: &mut W, cfg: &ModelConfig) {
    w.u32(cfg.way as u32);
    w.u32(cfg.shots as u32);
    w.u32(cfg.t_count as u32);
    write_spec(w, &cfg.b_spec);
    write_spec(w, &cfg.u_spec);
    w.u8(match cfg.variant {
        Variant::Minus => 0,
        Variant::Standard => 1,
        Variant::Plus => 2,
    });
    w.u8(matches!(cfg.base_input, BaseInput::Repr) as u8);
    w.f64(cfg.preproc.p);
    w.u32(cfg.gen_hidden as u32);
    w.u32(cfg.lstm_hidden as u32);
    w.u8(cfg.stop_meta_grad as u8);
    w.f64(cfg.contrastive_margin);
    w.u8(cfg.zero_fast_mode as u8);
}

fn read_config(r: &mut R<'_>) -> Result<ModelConfig> {
    Ok(ModelConfig {
        way: r.u32("way")? as usize,
        shots: r.u32("shots")? as usize,
        t_count: r.u32("t count")? as usize,
        b_spec: read_spec(r)?,
        u_spec: read_spec(r)?,
        variant: match r.u8("variant")? {
            0 => Variant::Minus,
            1 => Variant::Standard,
            2 => Variant::Plus,
            v => return Err(Error::Decode(format!("unknown variant tag {v}"))),
        },
        base_input: if r.u8("base input")? != 0 {
            BaseInput::Repr
        } else {
            BaseInput::Raw
        },
        preproc: GradPreprocConfig::new(r.f64("preproc p")?)?,
        gen_hidden: r.u32("gen hidden")? as usize,
        lstm_hidden: r.u32("lstm hidden")? as usize,
        stop_meta_grad: r.u8("stop meta grad")? != 0,
        contrastive_margin: r.f64("contrastive margin")?,
        zero_fast_mode: r.u8("zero fast mode")? != 0,
    })
}

// ── Weights reconstruction ──────────────────────────────────────────────

fn weights_from_named(cfg: &ModelConfig, mut named: Vec<(String, Tensor)>) -> Result<SlowWeights> {
    named.reverse(); // pop from the front
    let mut take = |expected: &str| -> Result<Tensor> {
        let (name, t) = named
            .pop()
            .ok_or_else(|| Error::Decode(format!("missing tensor {expected}")))?;
        if name != expected {
            return Err(Error::Decode(format!(
                "tensor order mismatch: found {name}, expected {expected}"
            )));
        }
        Ok(t)
    };
    let mut w = Vec::new();
    for i in 0..cfg.b_spec.layers.len() {
        w.push(take(&format!("w.{i}"))?);
    }
    let mut q = Vec::new();
    for i in 0..cfg.u_spec.layers.len() {
        q.push(take(&format!("q.{i}"))?);
    }
    let z = MlpGenParams {
        l1: take("z.l1")?,
        l2: take("z.l2")?,
        l3: take("z.l3")?,
    };
    let mut lstm = |prefix: &str| -> Result<LstmGenParams> {
        Ok(LstmGenParams {
            wx: take(&format!("{prefix}.wx"))?,
            wh: take(&format!("{prefix}.wh"))?,
            b: take(&format!("{prefix}.b"))?,
            proj: take(&format!("{prefix}.proj"))?,
        })
    };
    let g_u = if cfg.variant != Variant::Minus {
        Some(lstm("g_u")?)
    } else {
        None
    };
    let g_b = if cfg.variant == Variant::Plus {
        Some(lstm("g_b")?)
    } else {
        None
    };
    Ok(SlowWeights { w, q, z, g_u, g_b })
}

// ── Top level ───────────────────────────────────────────────────────────

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut w = W(Vec::new());
    w.bytes(MAGIC);
    w.u32(VERSION);
    write_config(&mut w, &ck.cfg);
    w.u64(ck.episode_counter);
    w.tensor_table(&ck.weights.named());

    w.u64(ck.adam.step);
    w.f64(ck.adam.lr);
    w.f64(ck.adam.beta1);
    w.f64(ck.adam.beta2);
    w.f64(ck.adam.eps);
    let names: Vec<String> = ck.weights.named().iter().map(|(n, _)| n.clone()).collect();
    let m_entries: Vec<(String, &Tensor)> = names
        .iter()
        .cloned()
        .zip(ck.adam.m.iter())
        .collect();
    w.tensor_table(&m_entries);
    let v_entries: Vec<(String, &Tensor)> = names
        .iter()
        .cloned()
        .zip(ck.adam.v.iter())
        .collect();
    w.tensor_table(&v_entries);

    w.bytes(&ck.rng.seed);
    w.u64(ck.rng.stream);
    w.u128(ck.rng.word_pos);
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = R { buf: bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Decode(format!(
            "bad checkpoint magic {magic:02x?}, expected {MAGIC:02x?}"
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: VERSION,
        });
    }
    let cfg = read_config(&mut r)?;
    let episode_counter = r.u64("episode counter")?;
    let named = r.tensor_table("weights")?;
    let weights = weights_from_named(&cfg, named)?;

    let step = r.u64("adam step")?;
    let lr = r.f64("adam lr")?;
    let beta1 = r.f64("adam beta1")?;
    let beta2 = r.f64("adam beta2")?;
    let eps = r.f64("adam eps")?;
    let m_named = r.tensor_table("adam m")?;
    let v_named = r.tensor_table("adam v")?;
    let adam = AdamState {
        step,
        lr,
        beta1,
        beta2,
        eps,
        m: m_named.into_iter().map(|(_, t)| t).collect(),
        v: v_named.into_iter().map(|(_, t)| t).collect(),
    };

    let seed: [u8; 32] = r.take(32, "rng seed")?.try_into().unwrap();
    let stream = r.u64("rng stream")?;
    let word_pos = r.u128("rng word position")?;
    if r.pos != bytes.len() {
        return Err(Error::Decode(format!(
            "{} trailing bytes after checkpoint payload",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        cfg,
        weights,
        adam,
        rng: RngState {
            seed,
            stream,
            word_pos,
        },
        episode_counter,
    })
}
