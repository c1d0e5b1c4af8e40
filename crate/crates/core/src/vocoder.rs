//! Causal HiFi-GAN-style generator.
//!
//! Graph: `conv_pre → [lrelu → tconv → MRF] × stages → lrelu → conv_post → tanh`
//! where each MRF averages parallel residual blocks and each residual block
//! chains `x + conv(lrelu(dilated_conv(lrelu(x))))` over its dilations.
//!
//! Two padding regimes are supported. With replicate padding every layer pads
//! its own input on the left. With natural padding the graph runs unpadded on
//! `[z₀ × P, z]` (`P` = [`Generator::required_history`]) and the last
//! `T × hop` samples are kept; residual and branch outputs are then aligned to
//! the end of their inputs. Streaming reproduces either regime exactly by
//! carrying per-layer conv state.

use serde::{Deserialize, Serialize};

use crate::conv::{ConvLayer, ConvSpec, ConvState, PadMode};
use crate::error::{Error, Result};
use crate::tensor::{Activation, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub latent_dim: usize,
    pub upsample_strides: Vec<usize>,
    pub upsample_kernels: Vec<usize>,
    pub resblock_kernels: Vec<usize>,
    pub resblock_dilations: Vec<Vec<usize>>,
    /// Channels after `conv_pre`; halved by every upsampling stage.
    pub base_channels: usize,
    pub pre_kernel: usize,
    pub post_kernel: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::for_strides(192, &[8, 8, 4, 2])
    }
}

impl GeneratorConfig {
    /// Default layout for the given strides, kernels twice the stride.
    pub fn for_strides(latent_dim: usize, strides: &[usize]) -> Self {
        Self {
            latent_dim,
            upsample_strides: strides.to_vec(),
            upsample_kernels: strides.iter().map(|s| 2 * s).collect(),
            resblock_kernels: vec![3, 7, 11],
            resblock_dilations: vec![vec![1, 3, 5]; 3],
            base_channels: 64,
            pre_kernel: 7,
            post_kernel: 7,
        }
    }

    pub fn hop(&self) -> usize {
        self.upsample_strides.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.upsample_strides.len();
        if n == 0 || self.upsample_kernels.len() != n {
            return Err(Error::config(
                "upsample strides and kernels must be non-empty and equal length",
            ));
        }
        for (&s, &k) in self.upsample_strides.iter().zip(&self.upsample_kernels) {
            if s == 0 || k < s {
                return Err(Error::config(format!("upsample kernel {k} is smaller than stride {s}")));
            }
        }
        if self.resblock_kernels.len() != self.resblock_dilations.len() {
            return Err(Error::config("resblock kernels and dilation lists differ in length"));
        }
        if self.resblock_kernels.is_empty() || self.resblock_dilations.iter().any(|d| d.is_empty() || d.contains(&0)) {
            return Err(Error::config(
                "resblocks need at least one kernel and positive dilations",
            ));
        }
        if self.resblock_kernels.contains(&0) || self.pre_kernel == 0 || self.post_kernel == 0 {
            return Err(Error::config("kernel sizes must be positive"));
        }
        if self.latent_dim == 0 || self.base_channels >> n == 0 {
            return Err(Error::config(format!(
                "base_channels {} cannot be halved {n} times",
                self.base_channels
            )));
        }
        Ok(())
    }

    fn channels_after(&self, stage: usize) -> usize {
        self.base_channels >> (stage + 1)
    }

    /// Every conv of the graph in evaluation order, with its parameter name.
    pub fn layer_specs(&self, natural: bool) -> Vec<(String, ConvSpec)> {
        let pad = if natural { PadMode::Natural } else { PadMode::Replicate };
        let mut out = vec![(
            "conv_pre".to_string(),
            ConvSpec::conv(self.latent_dim, self.base_channels, self.pre_kernel).with_pad(pad),
        )];
        let mut ch = self.base_channels;
        for (i, (&s, &k)) in self.upsample_strides.iter().zip(&self.upsample_kernels).enumerate() {
            let next = self.channels_after(i);
            out.push((format!("ups.{i}"), ConvSpec::transposed(ch, next, k, s).with_pad(pad)));
            for (j, (&rk, dils)) in self.resblock_kernels.iter().zip(&self.resblock_dilations).enumerate() {
                for (m, &dil) in dils.iter().enumerate() {
                    out.push((
                        format!("resblocks.{i}.{j}.convs1.{m}"),
                        ConvSpec::conv(next, next, rk).with_dilation(dil).with_pad(pad),
                    ));
                    out.push((
                        format!("resblocks.{i}.{j}.convs2.{m}"),
                        ConvSpec::conv(next, next, rk).with_pad(pad),
                    ));
                }
            }
            ch = next;
        }
        out.push((
            "conv_post".to_string(),
            ConvSpec::conv(ch, 1, self.post_kernel).with_pad(pad),
        ));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    cfg: GeneratorConfig,
    natural: bool,
    layers: Vec<ConvLayer>,
    history: usize,
}

/// Streaming state: one conv state per layer plus the chunk counter.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorState {
    convs: Vec<ConvState>,
    next_chunk: usize,
}

impl GeneratorState {
    pub fn next_chunk(&self) -> usize {
        self.next_chunk
    }
}

fn lrelu(x: &Tensor) -> Tensor {
    x.map(|v| Activation::LeakyRelu.apply_scalar(v))
}

fn keep_last(x: &Tensor, n: usize) -> Tensor {
    x.slice_cols(x.cols() - n, x.cols())
}

impl Generator {
    /// Builds the graph from layers given in [`GeneratorConfig::layer_specs`] order.
    pub fn new(cfg: GeneratorConfig, natural: bool, layers: Vec<ConvLayer>) -> Result<Self> {
        cfg.validate()?;
        let specs = cfg.layer_specs(natural);
        if specs.len() != layers.len() {
            return Err(Error::config(format!(
                "generator expects {} conv layers, got {}",
                specs.len(),
                layers.len()
            )));
        }
        for ((name, spec), layer) in specs.iter().zip(&layers) {
            if &layer.spec != spec {
                return Err(Error::config(format!("generator layer {name}: spec mismatch")));
            }
        }
        let mut g = Self {
            cfg,
            natural,
            layers,
            history: 0,
        };
        if natural {
            g.history = g.find_history();
        }
        Ok(g)
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn is_natural(&self) -> bool {
        self.natural
    }

    pub fn hop(&self) -> usize {
        self.cfg.hop()
    }

    /// Latent frames replicated in front of the sequence in natural mode.
    pub fn required_history(&self) -> usize {
        self.history
    }

    /// Output samples of the unpadded graph on `n` frames.
    pub fn valid_len(&self, n: usize) -> usize {
        let mut it = self.layers.iter().map(|l| &l.spec);
        let mut len = it.next().unwrap().valid_len(n);
        for _ in &self.cfg.upsample_strides {
            len = it.next().unwrap().valid_len(len);
            let mut branch_min = usize::MAX;
            for dils in &self.cfg.resblock_dilations {
                let mut b = len;
                for _ in dils {
                    b = it.next().unwrap().valid_len(b);
                    b = it.next().unwrap().valid_len(b);
                }
                branch_min = branch_min.min(b);
            }
            len = branch_min;
        }
        it.next().unwrap().valid_len(len)
    }

    /// Smallest `P` past which the unpadded length map is exactly
    /// `n ↦ valid_len(P) + (n − P)·hop`, so priming with `P` frames makes every
    /// later frame yield exactly `hop` samples.
    fn find_history(&self) -> usize {
        let hop = self.hop();
        (0..)
            .find(|&p| (1..=3).all(|t| self.valid_len(p + t) == self.valid_len(p) + t * hop))
            .unwrap()
    }

    fn run(&self, z: &Tensor, mut eval: impl FnMut(usize, &Tensor) -> Result<Tensor>) -> Result<Tensor> {
        let mut idx = 0;
        let mut apply = |x: &Tensor| {
            let y = eval(idx, x);
            idx += 1;
            y
        };
        let mut x = apply(z)?;
        for _ in &self.cfg.upsample_strides {
            x = apply(&lrelu(&x))?;
            let mut branches = Vec::with_capacity(self.cfg.resblock_dilations.len());
            for dils in &self.cfg.resblock_dilations {
                let mut y = x.clone();
                for _ in dils {
                    let t = apply(&lrelu(&y))?;
                    let t = apply(&lrelu(&t))?;
                    y = keep_last(&y, t.cols()).add(&t)?;
                }
                branches.push(y);
            }
            let len = branches.iter().map(Tensor::cols).min().unwrap();
            let mut acc = keep_last(&branches[0], len);
            for b in &branches[1..] {
                acc = acc.add(&keep_last(b, len))?;
            }
            let n = branches.len() as f32;
            x = acc.map(|v| v / n);
        }
        let y = apply(&lrelu(&x))?;
        let len = y.cols();
        Tensor::new(vec![len], y.into_data().into_iter().map(f32::tanh).collect())
    }

    fn check_latent(&self, z: &Tensor) -> Result<()> {
        z.expect_rank(2, "generator latent")?;
        if z.rows() != self.cfg.latent_dim {
            return Err(Error::shape(format!(
                "latent has {} channels, generator expects {}",
                z.rows(),
                self.cfg.latent_dim
            )));
        }
        Ok(())
    }

    fn primer(&self, z: &Tensor) -> Result<Tensor> {
        let first = z.slice_cols(0, 1);
        Tensor::concat_cols(&vec![&first; self.history])
    }

    /// Whole-sequence synthesis of `z[d_z × T]` into `T × hop` samples.
    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        self.check_latent(z)?;
        let t = z.cols();
        if t == 0 {
            return Ok(Tensor::zeros(&[0]));
        }
        if !self.natural {
            return self.run(z, |i, x| self.layers[i].forward(x));
        }
        let input = Tensor::concat_cols(&[&self.primer(z)?, z])?;
        let y = self.run(&input, |i, x| self.layers[i].forward_valid(x))?;
        let want = t * self.hop();
        debug_assert!(y.len() >= want);
        Ok(Tensor::from_vec(y.data()[y.len() - want..].to_vec()))
    }

    /// Synthesizes frames `start..start + len` of `z` without the rest of the
    /// sequence, as an independent chunk renderer would. Natural mode feeds
    /// the real preceding frames as history (replicating frame 0 near the
    /// start); replicate mode sees the slice alone.
    pub fn forward_slice(&self, z: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        self.check_latent(z)?;
        if len == 0 || start + len > z.cols() {
            return Err(Error::shape(format!(
                "slice {start}..{} of a {}-frame latent",
                start + len,
                z.cols()
            )));
        }
        if !self.natural {
            return self.forward(&z.slice_cols(start, start + len));
        }
        let p = self.history;
        let input = if start >= p {
            z.slice_cols(start - p, start + len)
        } else {
            let fill = self.primer(z)?.slice_cols(0, p - start);
            Tensor::concat_cols(&[&fill, &z.slice_cols(0, start + len)])?
        };
        let y = self.run(&input, |i, x| self.layers[i].forward_valid(x))?;
        let want = len * self.hop();
        Ok(Tensor::from_vec(y.data()[y.len() - want..].to_vec()))
    }

    pub fn init_state(&self) -> GeneratorState {
        GeneratorState {
            convs: vec![ConvState::new(); self.layers.len()],
            next_chunk: 0,
        }
    }

    fn step(&self, states: &mut [ConvState], x: &Tensor) -> Result<Tensor> {
        self.run(x, |i, x| self.layers[i].step(&mut states[i], x))
    }

    /// Synthesizes chunk `chunk_index` of the latent stream, `n × hop` samples.
    pub fn stream(&self, state: &mut GeneratorState, chunk_index: usize, z_chunk: &Tensor) -> Result<Tensor> {
        if chunk_index != state.next_chunk {
            return Err(Error::Sequencing {
                expected: state.next_chunk,
                got: chunk_index,
            });
        }
        self.check_latent(z_chunk)?;
        if z_chunk.cols() == 0 {
            return Err(Error::shape("empty latent chunk"));
        }
        if self.natural && state.next_chunk == 0 {
            let primed = self.step(&mut state.convs, &self.primer(z_chunk)?)?;
            debug_assert_eq!(primed.len(), self.valid_len(self.history));
        }
        let y = self.step(&mut state.convs, z_chunk)?;
        debug_assert_eq!(y.len(), z_chunk.cols() * self.hop());
        state.next_chunk += 1;
        Ok(y)
    }
}
