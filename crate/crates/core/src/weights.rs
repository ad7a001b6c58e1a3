//! Deterministic seeded parameter initialization.

use crate::config::ModelConfig;
use crate::rng::keyed_normal;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

/// One transformer block's parameters, all row-major `[rows][cols]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    /// `[model_dim][model_dim]`
    pub wq: Vec<f32>,
    pub wk: Vec<f32>,
    pub wv: Vec<f32>,
    pub wo: Vec<f32>,
    /// `[ffn_dim][model_dim]`
    pub ffn_up: Vec<f32>,
    /// `[model_dim][ffn_dim]`
    pub ffn_down: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    /// `[vocab_size][model_dim]`
    pub embed: Vec<f32>,
    pub layers: Vec<LayerWeights>,
    /// `[vocab_size][model_dim]`: row t dotted with the hidden state gives logit t.
    pub unembed: Vec<f32>,
}

/// Names and sizes of all parameters in serialization order.
pub fn param_layout(cfg: &ModelConfig) -> Vec<(String, usize)> {
    let dim = cfg.model_dim();
    let mut out = Vec::new();
    out.push((String::from("embed"), cfg.vocab_size * dim));
    for l in 0..cfg.num_layers {
        out.push((format!("layer{l}.wq"), dim * dim));
        out.push((format!("layer{l}.wk"), dim * dim));
        out.push((format!("layer{l}.wv"), dim * dim));
        out.push((format!("layer{l}.wo"), dim * dim));
        out.push((format!("layer{l}.ffn_up"), cfg.ffn_dim * dim));
        out.push((format!("layer{l}.ffn_down"), dim * cfg.ffn_dim));
    }
    out.push((String::from("unembed"), cfg.vocab_size * dim));
    out
}

fn draw(cfg: &ModelConfig, name: &str, len: usize) -> Vec<f32> {
    let std = cfg.weight_scale as f64 / libm::sqrt(cfg.model_dim() as f64);
    (0..len)
        .map(|i| (keyed_normal(cfg.seed, name, i as u64) * std) as f32)
        .collect()
}

/// Seeded initialization: every entry comes from the SplitMix64 stream keyed
/// by (seed, parameter name, flat index), mapped through Box-Muller and
/// scaled by `weight_scale / sqrt(model_dim)`.
pub fn init_weights(cfg: &ModelConfig) -> ModelWeights {
    let dim = cfg.model_dim();
    let layers = (0..cfg.num_layers)
        .map(|l| LayerWeights {
            wq: draw(cfg, &format!("layer{l}.wq"), dim * dim),
            wk: draw(cfg, &format!("layer{l}.wk"), dim * dim),
            wv: draw(cfg, &format!("layer{l}.wv"), dim * dim),
            wo: draw(cfg, &format!("layer{l}.wo"), dim * dim),
            ffn_up: draw(cfg, &format!("layer{l}.ffn_up"), cfg.ffn_dim * dim),
            ffn_down: draw(cfg, &format!("layer{l}.ffn_down"), dim * cfg.ffn_dim),
        })
        .collect();
    ModelWeights {
        embed: draw(cfg, "embed", cfg.vocab_size * dim),
        layers,
        unembed: draw(cfg, "unembed", cfg.vocab_size * dim),
    }
}

impl ModelWeights {
    /// All parameters as (name, slice) pairs in [`param_layout`] order.
    pub fn params<'a>(&'a self, cfg: &ModelConfig) -> Vec<(String, &'a [f32])> {
        let mut out: Vec<(String, &[f32])> = Vec::new();
        out.push((String::from("embed"), &self.embed));
        for (l, lw) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.wq"), &lw.wq));
            out.push((format!("layer{l}.wk"), &lw.wk));
            out.push((format!("layer{l}.wv"), &lw.wv));
            out.push((format!("layer{l}.wo"), &lw.wo));
            out.push((format!("layer{l}.ffn_up"), &lw.ffn_up));
            out.push((format!("layer{l}.ffn_down"), &lw.ffn_down));
        }
        out.push((String::from("unembed"), &self.unembed));
        debug_assert_eq!(out.len(), param_layout(cfg).len());
        out
    }

    /// Rebuild from a flat buffer laid out per [`param_layout`].
    pub fn from_flat(cfg: &ModelConfig, flat: &[f32]) -> Option<Self> {
        let layout = param_layout(cfg);
        let total: usize = layout.iter().map(|(_, n)| n).sum();
        if flat.len() != total {
            return None;
        }
        let dim = cfg.model_dim();
        let mut pos = 0;
        let mut take = |n: usize| {
            let s = flat[pos..pos + n].to_vec();
            pos += n;
            s
        };
        let embed = take(cfg.vocab_size * dim);
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for _ in 0..cfg.num_layers {
            layers.push(LayerWeights {
                wq: take(dim * dim),
                wk: take(dim * dim),
                wv: take(dim * dim),
                wo: take(dim * dim),
                ffn_up: take(cfg.ffn_dim * dim),
                ffn_down: take(dim * cfg.ffn_dim),
            });
        }
        let unembed = take(cfg.vocab_size * dim);
        Some(ModelWeights { embed, layers, unembed })
    }
}
