//! Deterministic decoder-only transformer with RoPE.
//!
//! Each block computes `h' = h + FFN(h + Attn(h))` with no normalization
//! layers; keys and queries are rotated at their absolute positions, values
//! are not. Prefill processes tokens one at a time against the cache, so
//! splitting a prompt across calls is bit-identical to one call.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::kv::KvFragment;
use crate::rope::Rope;
use crate::tokenizer::{TokenId, EOS};
use crate::weights::{init_weights, ModelWeights};
use alloc::vec;
use alloc::vec::Vec;

pub struct Model {
    pub config: ModelConfig,
    pub weights: ModelWeights,
    rope: Rope,
    attn_scale: f32,
}

/// Runtime cache of a single sequence: token ids, per-layer KV rows starting
/// at position 0, and the logits of the final position when known.
///
/// A cache built by prefill carries its last logits; a cache assembled from
/// reconstructed fragments does not, and the first decode step recomputes
/// the final position from its token id.
#[derive(Clone, Debug)]
pub struct KvCache {
    pub tokens: Vec<TokenId>,
    pub frag: KvFragment,
    pub last_logits: Option<Vec<f32>>,
}

impl KvCache {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Wrap a reconstructed full-prompt fragment. The fragment must start at
    /// position 0 and cover exactly `tokens`.
    pub fn from_reconstruction(tokens: Vec<TokenId>, frag: KvFragment) -> Result<Self> {
        if frag.start != 0 {
            return Err(Error::PositionGap { expected: 0, got: frag.start });
        }
        if frag.len != tokens.len() {
            return Err(Error::LengthMismatch { expected: tokens.len(), got: frag.len });
        }
        Ok(Self { tokens, frag, last_logits: None })
    }
}

fn matvec(w: &[f32], x: &[f32], rows: usize) -> Vec<f32> {
    let cols = x.len();
    debug_assert_eq!(w.len(), rows * cols);
    let mut out = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0f32;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        out.push(acc);
    }
    out
}

fn silu(x: f32) -> f32 {
    x / (1.0 + libm::expf(-x))
}

/// Argmax with ties broken toward the smallest id.
pub fn argmax(logits: &[f32]) -> TokenId {
    let mut best = 0usize;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best as TokenId
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let weights = init_weights(&config);
        Ok(Self::with_weights(config, weights))
    }

    pub fn with_weights(config: ModelConfig, weights: ModelWeights) -> Self {
        let rope = Rope::new(config.head_dim, config.rope_base);
        let attn_scale = 1.0 / libm::sqrtf(config.head_dim as f32);
        Self { config, weights, rope, attn_scale }
    }

    pub fn rope(&self) -> &Rope {
        &self.rope
    }

    pub fn empty_cache(&self) -> KvCache {
        KvCache {
            tokens: Vec::new(),
            frag: KvFragment::empty(self.config.num_layers, self.config.model_dim(), 0),
            last_logits: None,
        }
    }

    /// Embedding-table row for one token.
    pub fn embedding(&self, id: TokenId) -> &[f32] {
        let dim = self.config.model_dim();
        &self.weights.embed[id as usize * dim..(id as usize + 1) * dim]
    }

    /// Concatenated embedding rows, `[len * model_dim]`.
    pub fn embed_sequence(&self, ids: &[TokenId]) -> Vec<f32> {
        let dim = self.config.model_dim();
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            out.extend_from_slice(self.embedding(id));
        }
        out
    }

    /// Run one token through all layers, appending its KV rows to `frag`,
    /// and return the final hidden state.
    fn forward_token(&self, frag: &mut KvFragment, token: TokenId) -> Result<Vec<f32>> {
        if (token as usize) >= self.config.vocab_size {
            return Err(Error::InvalidToken(token));
        }
        let pos = frag.len;
        if pos >= self.config.max_context {
            return Err(Error::PositionOverflow { position: pos, max_context: self.config.max_context });
        }
        let dim = self.config.model_dim();
        let d = self.config.head_dim;
        let heads = self.config.num_heads;

        let mut h = self.embedding(token).to_vec();
        for (l, lw) in self.weights.layers.iter().enumerate() {
            let mut q = matvec(&lw.wq, &h, dim);
            let mut k = matvec(&lw.wk, &h, dim);
            let v = matvec(&lw.wv, &h, dim);
            self.rope.rotate_row(&mut q, pos as i64);
            self.rope.rotate_row(&mut k, pos as i64);
            frag.layers[l].keys.extend_from_slice(&k);
            frag.layers[l].values.extend_from_slice(&v);

            // causal attention of this token over positions 0..=pos
            let keys = &frag.layers[l].keys;
            let values = &frag.layers[l].values;
            let mut ctx = vec![0.0f32; dim];
            let mut scores = vec![0.0f32; pos + 1];
            for head in 0..heads {
                let off = head * d;
                let qh = &q[off..off + d];
                let mut max_s = f32::NEG_INFINITY;
                for (j, s) in scores.iter_mut().enumerate() {
                    let kr = &keys[j * dim + off..j * dim + off + d];
                    let mut acc = 0.0f32;
                    for (a, b) in qh.iter().zip(kr) {
                        acc += a * b;
                    }
                    *s = acc * self.attn_scale;
                    max_s = max_s.max(*s);
                }
                let mut denom = 0.0f32;
                for s in scores.iter_mut() {
                    *s = libm::expf(*s - max_s);
                    denom += *s;
                }
                let inv = 1.0 / denom;
                for (j, s) in scores.iter().enumerate() {
                    let w = s * inv;
                    let vr = &values[j * dim + off..j * dim + off + d];
                    for (c, x) in ctx[off..off + d].iter_mut().zip(vr) {
                        *c += w * x;
                    }
                }
            }
            let attn = matvec(&lw.wo, &ctx, dim);
            let inner: Vec<f32> = h.iter().zip(&attn).map(|(a, b)| a + b).collect();
            let mut up = matvec(&lw.ffn_up, &inner, self.config.ffn_dim);
            for u in &mut up {
                *u = silu(*u);
            }
            let down = matvec(&lw.ffn_down, &up, dim);
            for (hi, di) in h.iter_mut().zip(&down) {
                *hi += di;
            }
        }
        frag.len = pos + 1;
        Ok(h)
    }

    fn logits_from_hidden(&self, h: &[f32]) -> Vec<f32> {
        matvec(&self.weights.unembed, h, self.config.vocab_size)
    }

    /// Extend `cache` with `new_tokens`, recording logits at the final
    /// position. The cache length before the call is the start position.
    pub fn prefill(&self, cache: &mut KvCache, new_tokens: &[TokenId]) -> Result<()> {
        for (i, &t) in new_tokens.iter().enumerate() {
            let h = self.forward_token(&mut cache.frag, t)?;
            cache.tokens.push(t);
            if i + 1 == new_tokens.len() {
                cache.last_logits = Some(self.logits_from_hidden(&h));
            }
        }
        Ok(())
    }

    /// Prefill `tokens` with no preceding context; positions start at 0.
    pub fn prefill_standalone(&self, tokens: &[TokenId]) -> Result<KvCache> {
        let mut cache = self.empty_cache();
        self.prefill(&mut cache, tokens)?;
        Ok(cache)
    }

    /// Make sure `cache.last_logits` is present. For reconstructed caches
    /// this drops the final cached row and recomputes that token against the
    /// remaining history.
    pub fn ensure_last_logits(&self, cache: &mut KvCache) -> Result<()> {
        if cache.last_logits.is_some() {
            return Ok(());
        }
        if cache.is_empty() {
            return Err(Error::EmptyCache);
        }
        let last = cache.tokens[cache.len() - 1];
        cache.frag.truncate(cache.len() - 1);
        let h = self.forward_token(&mut cache.frag, last)?;
        cache.last_logits = Some(self.logits_from_hidden(&h));
        Ok(())
    }

    /// One greedy step: argmax of the current logits, EOS maps to `None`,
    /// otherwise the token is appended to the cache.
    pub fn decode_step(&self, cache: &mut KvCache) -> Result<Option<TokenId>> {
        self.ensure_last_logits(cache)?;
        let next = argmax(cache.last_logits.as_ref().expect("logits ensured"));
        if next == EOS {
            return Ok(None);
        }
        let h = self.forward_token(&mut cache.frag, next)?;
        cache.tokens.push(next);
        cache.last_logits = Some(self.logits_from_hidden(&h));
        Ok(Some(next))
    }

    /// Greedy decode until EOS or `max_new` tokens, extending the cache in
    /// place.
    pub fn greedy_decode(&self, cache: &mut KvCache, max_new: usize) -> Result<Vec<TokenId>> {
        let mut out = Vec::new();
        for _ in 0..max_new {
            match self.decode_step(cache)? {
                Some(t) => out.push(t),
                None => break,
            }
        }
        Ok(out)
    }
}
