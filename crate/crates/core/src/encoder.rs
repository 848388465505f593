//! The shared transformer encoder: summed token, segment and position
//! embeddings followed by a stack of post-norm transformer blocks.

use std::collections::BTreeMap;

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::corpus::{CLS, PAD};
use crate::error::{Error, Result};
use crate::params::{truncated_normal, ParameterStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub feed_forward_size: usize,
    pub max_sequence_length: usize,
    pub vocab_size: usize,
    pub num_segments: usize,
    pub dropout_rate: f64,
    pub init_std: f64,
    /// Give every item of a basket the same position id instead of its
    /// serialized offset.
    pub positions_per_basket: bool,
}

impl EncoderConfig {
    /// Desk-scale defaults: D=64, L=2, A=2, FF=256, 128 positions.
    pub fn new(vocab_size: usize) -> Self {
        EncoderConfig {
            hidden_size: 64,
            num_layers: 2,
            num_heads: 2,
            feed_forward_size: 256,
            max_sequence_length: 128,
            vocab_size,
            num_segments: 2,
            dropout_rate: 0.1,
            init_std: 0.02,
            positions_per_basket: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("encoder: {m}")));
        if self.hidden_size == 0 || self.num_heads == 0 || self.feed_forward_size == 0 || self.vocab_size == 0 {
            return bad("sizes must be positive");
        }
        if self.hidden_size % self.num_heads != 0 {
            return bad("hidden_size must be divisible by num_heads");
        }
        if self.max_sequence_length < 3 {
            return bad("max_sequence_length must be at least 3");
        }
        if self.num_segments != 2 {
            return bad("num_segments must be 2");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn head_size(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn to_header(&self) -> BTreeMap<String, String> {
        let mut h = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            h.insert(format!("encoder.{k}"), v);
        };
        put("hidden_size", self.hidden_size.to_string());
        put("num_layers", self.num_layers.to_string());
        put("num_heads", self.num_heads.to_string());
        put("feed_forward_size", self.feed_forward_size.to_string());
        put("max_sequence_length", self.max_sequence_length.to_string());
        put("vocab_size", self.vocab_size.to_string());
        put("num_segments", self.num_segments.to_string());
        put("dropout_rate", self.dropout_rate.to_string());
        put("init_std", self.init_std.to_string());
        put("positions_per_basket", self.positions_per_basket.to_string());
        h
    }

    pub fn from_header(header: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: std::str::FromStr>(h: &BTreeMap<String, String>, k: &str) -> Result<T> {
            let key = format!("encoder.{k}");
            h.get(&key)
                .ok_or_else(|| Error::Config(format!("checkpoint header lacks `{key}`")))?
                .parse()
                .map_err(|_| Error::Config(format!("checkpoint header has bad `{key}`")))
        }
        let c = EncoderConfig {
            hidden_size: get(header, "hidden_size")?,
            num_layers: get(header, "num_layers")?,
            num_heads: get(header, "num_heads")?,
            feed_forward_size: get(header, "feed_forward_size")?,
            max_sequence_length: get(header, "max_sequence_length")?,
            vocab_size: get(header, "vocab_size")?,
            num_segments: get(header, "num_segments")?,
            dropout_rate: get(header, "dropout_rate")?,
            init_std: get(header, "init_std")?,
            positions_per_basket: get(header, "positions_per_basket")?,
        };
        c.validate()?;
        Ok(c)
    }
}

/// Token, segment and position ids plus the padding mask (`false` = PAD).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputSequence {
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub position_ids: Vec<usize>,
    pub attention_mask: Vec<bool>,
}

impl InputSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn validate(&self, config: &EncoderConfig) -> Result<()> {
        let n = self.token_ids.len();
        let bad = |m: String| Err(Error::Contract(format!("input sequence: {m}")));
        if self.segment_ids.len() != n || self.position_ids.len() != n || self.attention_mask.len() != n {
            return bad("id lists differ in length".into());
        }
        if n == 0 || n > config.max_sequence_length {
            return bad(format!("length {n} outside 1..={}", config.max_sequence_length));
        }
        if self.token_ids[0] != CLS {
            return bad("first token must be CLS".into());
        }
        let mut last: Option<usize> = None;
        for i in 0..n {
            if !self.attention_mask[i] {
                if self.token_ids[i] != PAD || self.segment_ids[i] != 0 {
                    return bad(format!("masked position {i} must be PAD in segment 0"));
                }
                continue;
            }
            let p = self.position_ids[i];
            if let Some(prev) = last {
                let ordered = if config.positions_per_basket { p >= prev } else { p > prev };
                if !ordered {
                    return bad(format!("position ids not increasing at {i}"));
                }
            }
            last = Some(p);
        }
        Ok(())
    }
}

/// Incremental packing of specials and baskets into an [`InputSequence`].
#[derive(Debug)]
pub struct SequenceBuilder {
    per_basket: bool,
    next_position: usize,
    seq: InputSequence,
}

impl SequenceBuilder {
    pub fn new(per_basket_positions: bool) -> Self {
        SequenceBuilder {
            per_basket: per_basket_positions,
            next_position: 0,
            seq: InputSequence {
                token_ids: Vec::new(),
                segment_ids: Vec::new(),
                position_ids: Vec::new(),
                attention_mask: Vec::new(),
            },
        }
    }

    fn push(&mut self, token: usize, segment: usize, position: usize) {
        self.seq.token_ids.push(token);
        self.seq.segment_ids.push(segment);
        self.seq.position_ids.push(position);
        self.seq.attention_mask.push(true);
    }

    pub fn special(&mut self, token: usize, segment: usize) -> usize {
        let p = self.next_position;
        self.push(token, segment, p);
        self.next_position += 1;
        self.seq.len() - 1
    }

    /// Appends a basket and returns the sequence offsets of its items.
    pub fn basket(&mut self, items: &[usize], segment: usize) -> std::ops::Range<usize> {
        let start = self.seq.len();
        for &item in items {
            let p = self.next_position;
            self.push(item, segment, p);
            if !self.per_basket {
                self.next_position += 1;
            }
        }
        if self.per_basket && !items.is_empty() {
            self.next_position += 1;
        }
        start..self.seq.len()
    }

    pub fn finish(self) -> InputSequence {
        self.seq
    }
}

/// How far each query may look.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionScope {
    /// Every non-pad key.
    Full,
    /// Only non-pad keys in the query's own segment.
    SameSegment,
}

pub struct EncoderOutput {
    /// `(len × D)` hidden states of the last block.
    pub hidden: Var,
    /// Attention probabilities, `[layer][head]`, each `(len × len)`.
    pub attention: Vec<Vec<Var>>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
}

fn layer_name(l: usize, rest: &str) -> String {
    format!("encoder.layer{l}.{rest}")
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        Ok(Encoder { config })
    }

    /// Registers every encoder parameter with BERT-style initialisation.
    pub fn init_params<R: Rng>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        let c = &self.config;
        let (d, f, std) = (c.hidden_size, c.feed_forward_size, c.init_std);
        store.register("encoder.embeddings.token", truncated_normal(&[c.vocab_size, d], std, rng))?;
        store.register("encoder.embeddings.segment", truncated_normal(&[c.num_segments, d], std, rng))?;
        store.register("encoder.embeddings.position", truncated_normal(&[c.max_sequence_length, d], std, rng))?;
        store.register("encoder.embeddings.ln.gain", Tensor::full(&[d], 1.0))?;
        store.register("encoder.embeddings.ln.bias", Tensor::zeros(&[d]))?;
        for l in 0..c.num_layers {
            for proj in ["query", "key", "value", "output"] {
                store.register(layer_name(l, &format!("attn.{proj}.weight")), truncated_normal(&[d, d], std, rng))?;
                store.register(layer_name(l, &format!("attn.{proj}.bias")), Tensor::zeros(&[d]))?;
            }
            store.register(layer_name(l, "attn.ln.gain"), Tensor::full(&[d], 1.0))?;
            store.register(layer_name(l, "attn.ln.bias"), Tensor::zeros(&[d]))?;
            store.register(layer_name(l, "ffn.in.weight"), truncated_normal(&[d, f], std, rng))?;
            store.register(layer_name(l, "ffn.in.bias"), Tensor::zeros(&[f]))?;
            store.register(layer_name(l, "ffn.out.weight"), truncated_normal(&[f, d], std, rng))?;
            store.register(layer_name(l, "ffn.out.bias"), Tensor::zeros(&[d]))?;
            store.register(layer_name(l, "ffn.ln.gain"), Tensor::full(&[d], 1.0))?;
            store.register(layer_name(l, "ffn.ln.bias"), Tensor::zeros(&[d]))?;
        }
        Ok(())
    }

    /// `layer_norm(token[t] + segment[s] + position[p])` for every position.
    pub fn input_representation<R: Rng>(
        &self,
        tape: &mut Tape<'_>,
        seq: &InputSequence,
        dropout: Option<&mut R>,
    ) -> Result<Var> {
        let tok = tape.param_by_name("encoder.embeddings.token")?;
        let seg = tape.param_by_name("encoder.embeddings.segment")?;
        let pos = tape.param_by_name("encoder.embeddings.position")?;
        let t = tape.index_rows(tok, &seq.token_ids, "token embedding")?;
        let s = tape.index_rows(seg, &seq.segment_ids, "segment embedding")?;
        let p = tape.index_rows(pos, &seq.position_ids, "position embedding")?;
        let ts = tape.add(t, s)?;
        let sum = tape.add(ts, p)?;
        let gain = tape.param_by_name("encoder.embeddings.ln.gain")?;
        let bias = tape.param_by_name("encoder.embeddings.ln.bias")?;
        let normed = tape.layer_norm(sum, gain, bias)?;
        match dropout {
            Some(rng) => tape.dropout(normed, self.config.dropout_rate, rng),
            None => Ok(normed),
        }
    }

    fn linear(&self, tape: &mut Tape<'_>, x: Var, layer: usize, name: &str) -> Result<Var> {
        let w = tape.param_by_name(&layer_name(layer, &format!("{name}.weight")))?;
        let b = tape.param_by_name(&layer_name(layer, &format!("{name}.bias")))?;
        let xw = tape.matmul(x, w)?;
        tape.add(xw, b)
    }

    /// Key mask in row-major `(len × len)` form.
    pub fn key_mask(seq: &InputSequence, scope: AttentionScope) -> Vec<bool> {
        let n = seq.len();
        let mut keep = vec![false; n * n];
        for q in 0..n {
            for k in 0..n {
                keep[q * n + k] = seq.attention_mask[k]
                    && match scope {
                        AttentionScope::Full => true,
                        AttentionScope::SameSegment => seq.segment_ids[q] == seq.segment_ids[k],
                    };
            }
        }
        keep
    }

    /// Post-norm block: multi-head self-attention, add & norm, GELU
    /// feed-forward, add & norm. Returns the new states and per-head
    /// attention probabilities.
    pub fn transformer_block<R: Rng>(
        &self,
        tape: &mut Tape<'_>,
        h: Var,
        keep: &[bool],
        layer: usize,
        mut dropout: Option<&mut R>,
    ) -> Result<(Var, Vec<Var>)> {
        let c = &self.config;
        let dh = c.head_size();
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.linear(tape, h, layer, "attn.query")?;
        let k = self.linear(tape, h, layer, "attn.key")?;
        let v = self.linear(tape, h, layer, "attn.value")?;
        let mut heads = Vec::with_capacity(c.num_heads);
        let mut probs = Vec::with_capacity(c.num_heads);
        for head in 0..c.num_heads {
            let qh = tape.slice_cols(q, head * dh, dh)?;
            let kh = tape.slice_cols(k, head * dh, dh)?;
            let vh = tape.slice_cols(v, head * dh, dh)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let p = tape.softmax_rows(scores, Some(keep))?;
            probs.push(p);
            heads.push(tape.matmul(p, vh)?);
        }
        let context = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
        let mut attn_out = self.linear(tape, context, layer, "attn.output")?;
        if let Some(rng) = dropout.as_deref_mut() {
            attn_out = tape.dropout(attn_out, c.dropout_rate, rng)?;
        }
        let res = tape.add(h, attn_out)?;
        let g = tape.param_by_name(&layer_name(layer, "attn.ln.gain"))?;
        let b = tape.param_by_name(&layer_name(layer, "attn.ln.bias"))?;
        let h1 = tape.layer_norm(res, g, b)?;

        let inner = self.linear(tape, h1, layer, "ffn.in")?;
        let inner = tape.gelu(inner);
        let mut ffn_out = self.linear(tape, inner, layer, "ffn.out")?;
        if let Some(rng) = dropout {
            ffn_out = tape.dropout(ffn_out, c.dropout_rate, rng)?;
        }
        let res2 = tape.add(h1, ffn_out)?;
        let g = tape.param_by_name(&layer_name(layer, "ffn.ln.gain"))?;
        let b = tape.param_by_name(&layer_name(layer, "ffn.ln.bias"))?;
        Ok((tape.layer_norm(res2, g, b)?, probs))
    }

    /// Full forward pass. Pass a dropout RNG while training, `None` to run
    /// deterministically.
    pub fn encode<R: Rng>(
        &self,
        tape: &mut Tape<'_>,
        seq: &InputSequence,
        scope: AttentionScope,
        mut dropout: Option<&mut R>,
    ) -> Result<EncoderOutput> {
        seq.validate(&self.config)?;
        let mut h = self.input_representation(tape, seq, dropout.as_deref_mut())?;
        let keep = Self::key_mask(seq, scope);
        let mut attention = Vec::with_capacity(self.config.num_layers);
        for layer in 0..self.config.num_layers {
            let (next, probs) = self.transformer_block(tape, h, &keep, layer, dropout.as_deref_mut())?;
            h = next;
            attention.push(probs);
        }
        Ok(EncoderOutput { hidden: h, attention })
    }
}

/// Placeholder RNG type for deterministic (dropout-free) calls.
pub type NoDropout = rand_chacha::ChaCha8Rng;
