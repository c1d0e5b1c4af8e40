//! Model bundle: config plus the named tensors of every module.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::BundleConfig;
use super::weights::WeightFile;
use crate::acoustic::{PosteriorEncoder, PriorWeights, NUM_NOTES};
use crate::attention::{AttentionLayerWeights, ChunkConfig, ChunkStreamDecoder, SmoothWeights};
use crate::conv::{ConvLayer, ConvSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vocoder::Generator;

/// How a tensor is drawn by [`random_weights`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in ±0.1.
    Uniform,
    /// Layer-norm gain: 1 + uniform in ±0.1.
    Gain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub init: Init,
}

fn push(out: &mut Vec<TensorSpec>, name: String, dims: &[usize], init: Init) {
    out.push(TensorSpec {
        name,
        dims: dims.to_vec(),
        init,
    });
}

fn push_conv(out: &mut Vec<TensorSpec>, prefix: &str, spec: &ConvSpec) {
    push(out, format!("{prefix}.weight"), &spec.weight_dims(), Init::Uniform);
    push(out, format!("{prefix}.bias"), &[spec.out_channels], Init::Uniform);
}

fn push_norm(out: &mut Vec<TensorSpec>, prefix: &str, d: usize) {
    push(out, format!("{prefix}.gamma"), &[d], Init::Gain);
    push(out, format!("{prefix}.beta"), &[d], Init::Uniform);
}

fn smooth_spec(cfg: &ChunkConfig) -> ConvSpec {
    ConvSpec::conv(cfg.hidden, cfg.hidden, cfg.smooth_kernel)
}

/// Every tensor a bundle with this config must contain.
pub fn tensor_specs(cfg: &BundleConfig) -> Vec<TensorSpec> {
    let mut out = Vec::new();
    let d = cfg.decoder.hidden;
    let f = cfg.decoder.ffn_hidden;
    let dz = cfg.generator.latent_dim;
    push(
        &mut out,
        "prior.phone_embedding".into(),
        &[cfg.vocab.len(), d - 1],
        Init::Uniform,
    );
    push(
        &mut out,
        "prior.note_embedding".into(),
        &[NUM_NOTES, d - 1],
        Init::Uniform,
    );
    push(&mut out, "prior.proj.weight".into(), &[d, 2 * dz], Init::Uniform);
    push(&mut out, "prior.proj.bias".into(), &[2 * dz], Init::Uniform);
    for n in 0..cfg.decoder.num_layers {
        let p = format!("decoder.layers.{n}");
        for w in ["w_q", "w_k", "w_v", "w_out"] {
            push(&mut out, format!("{p}.{w}"), &[d, d], Init::Uniform);
        }
        push_norm(&mut out, &format!("{p}.attn_norm"), d);
        push(&mut out, format!("{p}.ffn.w1"), &[d, f], Init::Uniform);
        push(&mut out, format!("{p}.ffn.b1"), &[f], Init::Uniform);
        push(&mut out, format!("{p}.ffn.w2"), &[f, d], Init::Uniform);
        push(&mut out, format!("{p}.ffn.b2"), &[d], Init::Uniform);
        push_norm(&mut out, &format!("{p}.ffn_norm"), d);
        if cfg.flags.smooth_layer {
            let s = smooth_spec(&cfg.decoder);
            push_conv(&mut out, &format!("{p}.smooth.conv1"), &s);
            push_norm(&mut out, &format!("{p}.smooth.norm1"), d);
            push_conv(&mut out, &format!("{p}.smooth.conv2"), &s);
            push_norm(&mut out, &format!("{p}.smooth.norm2"), d);
        }
    }
    for (name, spec) in cfg.generator.layer_specs(cfg.flags.natural_padding) {
        push_conv(&mut out, &format!("generator.{name}"), &spec);
    }
    let post = cfg.posterior.layer_specs(dz);
    for (i, spec) in post[..post.len() - 1].iter().enumerate() {
        push_conv(&mut out, &format!("posterior.convs.{i}"), spec);
        push_norm(&mut out, &format!("posterior.norms.{i}"), spec.out_channels);
    }
    push_conv(&mut out, "posterior.proj", post.last().unwrap());
    out
}

/// Seeded random parameters for `cfg`, drawn in [`tensor_specs`] order.
pub fn random_weights(cfg: &BundleConfig, seed: u64) -> Result<WeightFile> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = WeightFile::new();
    for spec in tensor_specs(cfg) {
        let n: usize = spec.dims.iter().product();
        let offset = match spec.init {
            Init::Uniform => 0.0,
            Init::Gain => 1.0,
        };
        let data = (0..n).map(|_| offset + rng.random_range(-0.1f32..0.1)).collect();
        w.insert(spec.name, Tensor::new(spec.dims, data)?);
    }
    Ok(w)
}

/// A validated, executable model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub config: BundleConfig,
    pub prior: PriorWeights,
    pub decoder: ChunkStreamDecoder,
    pub generator: Generator,
    pub posterior: PosteriorEncoder,
}

struct Take(BTreeMap<String, Tensor>);

impl Take {
    fn t(&mut self, name: &str) -> Tensor {
        self.0.remove(name).expect("presence checked before assembly")
    }

    fn conv(&mut self, prefix: &str, spec: ConvSpec) -> Result<ConvLayer> {
        let w = self.t(&format!("{prefix}.weight"));
        let b = self.t(&format!("{prefix}.bias"));
        ConvLayer::new(spec, w, b)
    }

    fn norm(&mut self, prefix: &str) -> (Tensor, Tensor) {
        (self.t(&format!("{prefix}.gamma")), self.t(&format!("{prefix}.beta")))
    }
}

impl ModelBundle {
    /// Checks names and shapes against the config, listing every problem,
    /// then assembles the modules.
    pub fn from_weights(config: BundleConfig, weights: &WeightFile) -> Result<Self> {
        config.validate()?;
        let specs = tensor_specs(&config);
        let mut problems = Vec::new();
        for s in &specs {
            match weights.get(&s.name) {
                None => problems.push(format!("missing tensor {}", s.name)),
                Some(t) if t.dims() != s.dims.as_slice() => problems.push(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    s.name,
                    t.dims(),
                    s.dims
                )),
                Some(t) if !t.is_finite() => problems.push(format!("tensor {} has non-finite values", s.name)),
                Some(_) => {}
            }
        }
        for name in weights.tensors.keys() {
            if !specs.iter().any(|s| &s.name == name) {
                problems.push(format!("unexpected tensor {name}"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::Bundle(problems));
        }

        let mut take = Take(weights.tensors.clone());
        let prior = PriorWeights {
            phone_embedding: take.t("prior.phone_embedding"),
            note_embedding: take.t("prior.note_embedding"),
            proj_w: take.t("prior.proj.weight"),
            proj_b: take.t("prior.proj.bias"),
        };
        let mut layers = Vec::new();
        for n in 0..config.decoder.num_layers {
            let p = format!("decoder.layers.{n}");
            let smooth = if config.flags.smooth_layer {
                let s = smooth_spec(&config.decoder);
                Some(SmoothWeights {
                    conv1: take.conv(&format!("{p}.smooth.conv1"), s.clone())?,
                    norm1: take.norm(&format!("{p}.smooth.norm1")),
                    conv2: take.conv(&format!("{p}.smooth.conv2"), s)?,
                    norm2: take.norm(&format!("{p}.smooth.norm2")),
                })
            } else {
                None
            };
            layers.push(AttentionLayerWeights {
                w_q: take.t(&format!("{p}.w_q")),
                w_k: take.t(&format!("{p}.w_k")),
                w_v: take.t(&format!("{p}.w_v")),
                w_out: take.t(&format!("{p}.w_out")),
                attn_norm: take.norm(&format!("{p}.attn_norm")),
                ffn_w1: take.t(&format!("{p}.ffn.w1")),
                ffn_b1: take.t(&format!("{p}.ffn.b1")),
                ffn_w2: take.t(&format!("{p}.ffn.w2")),
                ffn_b2: take.t(&format!("{p}.ffn.b2")),
                ffn_norm: take.norm(&format!("{p}.ffn_norm")),
                smooth,
            });
        }
        let decoder = ChunkStreamDecoder::new(config.decoder.clone(), layers)?;
        let natural = config.flags.natural_padding;
        let gen_layers = config
            .generator
            .layer_specs(natural)
            .into_iter()
            .map(|(name, spec)| take.conv(&format!("generator.{name}"), spec))
            .collect::<Result<Vec<_>>>()?;
        let generator = Generator::new(config.generator.clone(), natural, gen_layers)?;
        let post = config.posterior.layer_specs(config.generator.latent_dim);
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        for (i, spec) in post[..post.len() - 1].iter().enumerate() {
            convs.push(take.conv(&format!("posterior.convs.{i}"), spec.clone())?);
            norms.push(take.norm(&format!("posterior.norms.{i}")));
        }
        let proj = take.conv("posterior.proj", post.last().unwrap().clone())?;
        let posterior = PosteriorEncoder::new(convs, norms, proj)?;
        Ok(Self {
            config,
            prior,
            decoder,
            generator,
            posterior,
        })
    }

    pub fn load(config_path: &Path, weights_path: &Path) -> Result<Self> {
        let config = BundleConfig::load(config_path)?;
        let weights = WeightFile::load(weights_path)?;
        Self::from_weights(config, &weights)
    }

    pub fn random(config: BundleConfig, seed: u64) -> Result<Self> {
        let w = random_weights(&config, seed)?;
        Self::from_weights(config, &w)
    }

    /// Replaces the streaming window sizes; they do not affect weight shapes.
    pub fn set_stream_window(&mut self, chunk_size: usize, left_context: usize, right_context: usize) -> Result<()> {
        let mut cfg = self.decoder.cfg.clone();
        cfg.chunk_size = chunk_size;
        cfg.left_context = left_context;
        cfg.right_context = right_context;
        cfg.validate()?;
        self.config.decoder = cfg.clone();
        self.decoder.cfg = cfg;
        Ok(())
    }

    pub fn hop(&self) -> usize {
        self.generator.hop()
    }
}
