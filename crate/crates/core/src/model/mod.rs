//! The extraction model: embeddings, dependency-biased encoder, decoder,
//! event-specific aggregation and span heads.

mod config;
mod decoder;
mod encoder;
mod forward;
mod vocab;

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::ModelConfig;
pub use decoder::{best_span, decode, eia_enhance, eia_weights, select_span, span_selectors, SpanChoice};
pub use encoder::{biased_attention_scores, encode, export_bias_summary, BiasParams, BiasSummaryRow, EncodeOutput};
pub use forward::{forward_document, forward_with, DocForward, SlotNode};
pub use vocab::{Vocab, UNKNOWN_TOKEN};

use crate::error::{Error, Result};
use crate::nn::{gaussian, ParamId, ParamRecord, ParamStore, Tensor};

/// Learning-rate multiplier applied to decoder cross-attention weights.
pub const CROSS_ATTENTION_LR_MULT: f64 = 1.5;

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnIds {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NormIds {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct FfnIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncoderLayerIds {
    pub norm1: NormIds,
    pub attn: AttnIds,
    pub norm2: NormIds,
    pub ffn: FfnIds,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DecoderLayerIds {
    pub norm1: NormIds,
    pub self_attn: AttnIds,
    pub norm2: NormIds,
    pub cross_attn: AttnIds,
    pub norm3: NormIds,
    pub ffn: FfnIds,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BiasIds {
    pub intra_w: ParamId,
    pub intra_b: ParamId,
    pub inter_w: ParamId,
    pub inter_b: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct ModelIds {
    pub token: ParamId,
    pub position: ParamId,
    pub encoder: Vec<EncoderLayerIds>,
    pub encoder_norm: NormIds,
    pub decoder: Vec<DecoderLayerIds>,
    pub decoder_norm: NormIds,
    /// One entry when shared, otherwise encoder layers then decoder layers.
    pub bias: Vec<BiasIds>,
    pub eia: ParamId,
    pub w_start: ParamId,
    pub w_end: ParamId,
}

impl ModelIds {
    pub fn encoder_bias(&self, layer: usize) -> BiasIds {
        self.bias[if self.bias.len() == 1 { 0 } else { layer }]
    }

    pub fn decoder_bias(&self, layer: usize) -> BiasIds {
        self.bias[if self.bias.len() == 1 { 0 } else { self.encoder.len() + layer }]
    }
}

fn bias_prefixes(config: &ModelConfig) -> Vec<String> {
    if !config.per_layer_bias {
        return vec!["bias".to_string()];
    }
    let mut v: Vec<String> = (0..config.encoder_layers).map(|l| format!("bias.encoder.{l}")).collect();
    if config.bias_in_decoder {
        v.extend((0..config.decoder_layers).map(|l| format!("bias.decoder.{l}")));
    }
    v
}

/// Every parameter name with its shape and initializer.
fn layout(config: &ModelConfig, vocab_len: usize) -> Vec<(String, usize, usize, Init)> {
    let d = config.dim;
    let dk = config.head_dim();
    let mut v = vec![
        ("embed.token".to_string(), vocab_len, d, Init::Normal),
        ("embed.position".to_string(), config.max_len + 1, d, Init::Normal),
    ];
    let norm = |v: &mut Vec<_>, p: &str| {
        v.push((format!("{p}.gain"), 1, d, Init::Ones));
        v.push((format!("{p}.bias"), 1, d, Init::Zeros));
    };
    let attn = |v: &mut Vec<_>, p: &str| {
        for w in ["q", "k", "v", "o"] {
            v.push((format!("{p}.w{w}"), d, d, Init::Normal));
            v.push((format!("{p}.b{w}"), 1, d, Init::Zeros));
        }
    };
    let ffn = |v: &mut Vec<_>, p: &str| {
        v.push((format!("{p}.w1"), d, config.ffn_dim, Init::Normal));
        v.push((format!("{p}.b1"), 1, config.ffn_dim, Init::Zeros));
        v.push((format!("{p}.w2"), config.ffn_dim, d, Init::Normal));
        v.push((format!("{p}.b2"), 1, d, Init::Zeros));
    };
    for l in 0..config.encoder_layers {
        let p = format!("encoder.{l}");
        norm(&mut v, &format!("{p}.norm1"));
        attn(&mut v, &format!("{p}.self_attn"));
        norm(&mut v, &format!("{p}.norm2"));
        ffn(&mut v, &format!("{p}.ffn"));
    }
    norm(&mut v, "encoder.norm");
    for l in 0..config.decoder_layers {
        let p = format!("decoder.{l}");
        norm(&mut v, &format!("{p}.norm1"));
        attn(&mut v, &format!("{p}.self_attn"));
        norm(&mut v, &format!("{p}.norm2"));
        attn(&mut v, &format!("{p}.cross_attn"));
        norm(&mut v, &format!("{p}.norm3"));
        ffn(&mut v, &format!("{p}.ffn"));
    }
    norm(&mut v, "decoder.norm");
    for p in bias_prefixes(config) {
        for c in ["intra", "inter"] {
            v.push((format!("{p}.{c}.w"), dk, dk, Init::Zeros));
            v.push((format!("{p}.{c}.b"), 1, 1, Init::Zeros));
        }
    }
    v.push(("eia.w1".to_string(), 2 * d, d, Init::Normal));
    v.push(("head.w_start".to_string(), 1, d, Init::Normal));
    v.push(("head.w_end".to_string(), 1, d, Init::Normal));
    v
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

pub(crate) fn lr_mult_for(name: &str) -> f64 {
    if name.contains("cross_attn") {
        CROSS_ATTENTION_LR_MULT
    } else {
        1.0
    }
}

fn resolve(params: &ParamStore, config: &ModelConfig) -> Result<ModelIds> {
    let id = |name: String| {
        params
            .id(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
    };
    let norm = |p: &str| -> Result<NormIds> {
        Ok(NormIds {
            gain: id(format!("{p}.gain"))?,
            bias: id(format!("{p}.bias"))?,
        })
    };
    let attn = |p: &str| -> Result<AttnIds> {
        Ok(AttnIds {
            wq: id(format!("{p}.wq"))?,
            bq: id(format!("{p}.bq"))?,
            wk: id(format!("{p}.wk"))?,
            bk: id(format!("{p}.bk"))?,
            wv: id(format!("{p}.wv"))?,
            bv: id(format!("{p}.bv"))?,
            wo: id(format!("{p}.wo"))?,
            bo: id(format!("{p}.bo"))?,
        })
    };
    let ffn = |p: &str| -> Result<FfnIds> {
        Ok(FfnIds {
            w1: id(format!("{p}.w1"))?,
            b1: id(format!("{p}.b1"))?,
            w2: id(format!("{p}.w2"))?,
            b2: id(format!("{p}.b2"))?,
        })
    };
    let encoder = (0..config.encoder_layers)
        .map(|l| {
            let p = format!("encoder.{l}");
            Ok(EncoderLayerIds {
                norm1: norm(&format!("{p}.norm1"))?,
                attn: attn(&format!("{p}.self_attn"))?,
                norm2: norm(&format!("{p}.norm2"))?,
                ffn: ffn(&format!("{p}.ffn"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let decoder = (0..config.decoder_layers)
        .map(|l| {
            let p = format!("decoder.{l}");
            Ok(DecoderLayerIds {
                norm1: norm(&format!("{p}.norm1"))?,
                self_attn: attn(&format!("{p}.self_attn"))?,
                norm2: norm(&format!("{p}.norm2"))?,
                cross_attn: attn(&format!("{p}.cross_attn"))?,
                norm3: norm(&format!("{p}.norm3"))?,
                ffn: ffn(&format!("{p}.ffn"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let bias = bias_prefixes(config)
        .iter()
        .map(|p| {
            Ok(BiasIds {
                intra_w: id(format!("{p}.intra.w"))?,
                intra_b: id(format!("{p}.intra.b"))?,
                inter_w: id(format!("{p}.inter.w"))?,
                inter_b: id(format!("{p}.inter.b"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelIds {
        token: id("embed.token".into())?,
        position: id("embed.position".into())?,
        encoder,
        encoder_norm: norm("encoder.norm")?,
        decoder,
        decoder_norm: norm("decoder.norm")?,
        bias,
        eia: id("eia.w1".into())?,
        w_start: id("head.w_start".into())?,
        w_end: id("head.w_end".into())?,
    })
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
    pub(crate) ids: ModelIds,
}

/// Serialized model: configuration, vocabulary and every weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: Vec<ParamRecord>,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, rows, cols, init) in layout(&config, vocab.len()) {
            let t = match init {
                Init::Normal => gaussian(rows, cols, config.init_std, &mut rng),
                Init::Zeros => Tensor::zeros(rows, cols),
                Init::Ones => Tensor::filled(rows, cols, 1.0),
            };
            let mult = lr_mult_for(&name);
            params.insert(&name, t, mult)?;
        }
        let ids = resolve(&params, &config)?;
        Ok(Model { config, vocab, params, ids })
    }

    pub fn bias_params(&self, layer: usize) -> BiasParams {
        BiasParams::from_store(&self.params, self.ids.encoder_bias(layer))
    }

    /// Names of the dependency bias parameters.
    pub fn bias_param_names(&self) -> Vec<String> {
        self.ids
            .bias
            .iter()
            .flat_map(|b| [b.intra_w, b.intra_b, b.inter_w, b.inter_b])
            .map(|id| self.params.name(id).to_string())
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: self.params.to_records(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.format_version != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                ckpt.format_version
            )));
        }
        ckpt.config.validate()?;
        let expected = layout(&ckpt.config, ckpt.vocab.len());
        let params = ParamStore::from_records(ckpt.params)?;
        if params.len() != expected.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, rows, cols, _) in &expected {
            let t = params
                .by_name(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if t.rows() != *rows || t.cols() != *cols {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {}x{}, expected {rows}x{cols}",
                    t.rows(),
                    t.cols()
                )));
            }
        }
        let ids = resolve(&params, &ckpt.config)?;
        Ok(Model {
            config: ckpt.config,
            vocab: ckpt.vocab,
            params,
            ids,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_checkpoint(ckpt)
    }
}
