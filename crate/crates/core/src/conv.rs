//! Causal 1-D convolutions and causal transposed convolutions.
//!
//! Every layer is evaluated by a single "valid" kernel over an input that
//! already carries its left history: the first `history()` frames are context
//! and one output block is produced for each frame after them. The three
//! evaluation styles differ only in where that history comes from:
//!
//! * offline: explicit one-sided padding (constant or replicate);
//! * streaming: the tail of the previous chunk, carried in [`ConvState`];
//! * natural padding: real preceding frames of the input itself, with no
//!   padding anywhere in the network.
//!
//! Because each output value is accumulated in the same order in all three
//! styles, streaming and offline results are bitwise identical.
//!
//! Tensors are channel-major, `[channels × frames]`. Regular conv weights are
//! `[out × in × kernel]`; transposed conv weights are `[in × out × kernel]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PadMode {
    Constant(f32),
    /// Repeat the first frame of the sequence.
    Replicate,
    /// No manual padding; history must come from real preceding frames.
    Natural,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub dilation: usize,
    pub transposed: bool,
    pub pad_mode: PadMode,
}

impl ConvSpec {
    /// Stride-1 causal convolution with zero padding.
    pub fn conv(in_channels: usize, out_channels: usize, kernel_size: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_size,
            stride: 1,
            dilation: 1,
            transposed: false,
            pad_mode: PadMode::Constant(0.0),
        }
    }

    /// Causal transposed convolution with zero padding.
    pub fn transposed(in_channels: usize, out_channels: usize, kernel_size: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            dilation: 1,
            transposed: true,
            pad_mode: PadMode::Constant(0.0),
        }
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn with_pad(mut self, pad_mode: PadMode) -> Self {
        self.pad_mode = pad_mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("channel counts must be positive"));
        }
        if self.kernel_size == 0 || self.stride == 0 || self.dilation == 0 {
            return Err(Error::config("kernel_size, stride and dilation must be positive"));
        }
        if self.transposed {
            if self.kernel_size < self.stride {
                return Err(Error::config(format!(
                    "transposed conv needs kernel_size >= stride (k={}, s={})",
                    self.kernel_size, self.stride
                )));
            }
            if self.dilation != 1 {
                return Err(Error::config("dilated transposed convs are not supported"));
            }
        } else if self.stride != 1 {
            return Err(Error::config(
                "causal convs are stride-1; use a transposed layer to resample",
            ));
        }
        Ok(())
    }

    /// Frames of left context an output block needs in steady state.
    ///
    /// For a regular conv this is the receptive extent `dilation·(k−1)`; for a
    /// transposed conv it is the number of earlier input frames whose kernel
    /// footprint overlaps the current output block, `ceil(k/s) − 1`.
    pub fn history(&self) -> usize {
        if self.transposed {
            self.kernel_size.div_ceil(self.stride) - 1
        } else {
            self.dilation * (self.kernel_size - 1)
        }
    }

    /// Frames of explicit padding in constant/replicate mode.
    ///
    /// Transposed layers pad `k//s − 1` frames; when `k` is not a multiple of
    /// `s` the one remaining history frame is implicitly zero.
    pub fn pad_frames(&self) -> usize {
        if self.transposed {
            self.kernel_size / self.stride - 1
        } else {
            self.history()
        }
    }

    /// Output samples per input frame.
    pub fn upsample(&self) -> usize {
        if self.transposed {
            self.stride
        } else {
            1
        }
    }

    pub fn weight_dims(&self) -> [usize; 3] {
        if self.transposed {
            [self.in_channels, self.out_channels, self.kernel_size]
        } else {
            [self.out_channels, self.in_channels, self.kernel_size]
        }
    }

    /// Output length of the unpadded layer on `n` input frames.
    pub fn valid_len(&self, n: usize) -> usize {
        n.saturating_sub(self.history()) * self.upsample()
    }

    /// Smallest unpadded input length producing at least `out` samples.
    pub fn min_input_for(&self, out: usize) -> usize {
        out.div_ceil(self.upsample()) + self.history()
    }
}

/// A convolution spec together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvLayer {
    pub fn new(spec: ConvSpec, weight: Tensor, bias: Tensor) -> Result<Self> {
        spec.validate()?;
        if weight.dims() != spec.weight_dims() {
            return Err(Error::shape(format!(
                "conv weight {:?}, expected {:?}",
                weight.dims(),
                spec.weight_dims()
            )));
        }
        if bias.len() != spec.out_channels {
            return Err(Error::shape(format!(
                "conv bias of length {}, expected {}",
                bias.len(),
                spec.out_channels
            )));
        }
        Ok(Self { spec, weight, bias })
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        x.expect_rank(2, "conv input")?;
        if x.rows() != self.spec.in_channels {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.spec.in_channels,
                x.rows()
            )));
        }
        Ok(())
    }

    /// Full-sequence causal evaluation with explicit left padding.
    ///
    /// Regular layers return `L` frames; transposed layers return exactly
    /// `L·stride` samples. For `k = 2s` this is the classic causal transposed
    /// convolution: pad `k//s − 1` frames, run the standard transposed conv,
    /// trim `stride` samples from both ends.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        if self.spec.pad_mode == PadMode::Natural {
            return Err(Error::config(
                "natural-padding layers have no offline padding; use natural_pad_forward",
            ));
        }
        if x.cols() == 0 {
            return Ok(Tensor::zeros(&[self.spec.out_channels, 0]));
        }
        let pad = self.initial_history(x)?;
        let ext = Tensor::concat_cols(&[&pad, x])?;
        Ok(self.valid(&ext))
    }

    /// Unpadded evaluation: the first `history()` frames of `x` act only as
    /// context. Output is aligned to the end of the input.
    pub fn forward_valid(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        Ok(self.valid(x))
    }

    /// Consumes one chunk and returns the outputs it completes.
    ///
    /// With constant/replicate padding every chunk of `n` frames yields
    /// `n·upsample()` samples. With natural padding the layer starts without
    /// history and yields nothing until enough context has arrived.
    pub fn step(&self, state: &mut ConvState, chunk: &Tensor) -> Result<Tensor> {
        self.check_input(chunk)?;
        if chunk.cols() == 0 {
            return Ok(Tensor::zeros(&[self.spec.out_channels, 0]));
        }
        let tail = match state.tail.take() {
            Some(t) => t,
            None => self.initial_history(chunk)?,
        };
        let ext = Tensor::concat_cols(&[&tail, chunk])?;
        let out = self.valid(&ext);
        let keep = self.spec.history().min(ext.cols());
        state.tail = Some(ext.slice_cols(ext.cols() - keep, ext.cols()));
        state.frames_seen += chunk.cols();
        Ok(out)
    }

    /// History frames that stand in front of the first real frame.
    fn initial_history(&self, first: &Tensor) -> Result<Tensor> {
        let c = self.spec.in_channels;
        let h = self.spec.history();
        let p = self.spec.pad_frames();
        let mut pad = Tensor::zeros(&[c, h]);
        match self.spec.pad_mode {
            PadMode::Constant(v) => {
                for ch in 0..c {
                    pad.row_mut(ch)[h - p..].fill(v);
                }
            }
            PadMode::Replicate => {
                for ch in 0..c {
                    let v = first.row(ch)[0];
                    pad.row_mut(ch)[h - p..].fill(v);
                }
            }
            // A natural layer streamed from scratch has no history yet.
            PadMode::Natural => return Ok(Tensor::zeros(&[c, 0])),
        }
        Ok(pad)
    }

    fn valid(&self, ext: &Tensor) -> Tensor {
        if self.spec.transposed {
            self.valid_transposed(ext)
        } else {
            self.valid_regular(ext)
        }
    }

    fn valid_regular(&self, ext: &Tensor) -> Tensor {
        let s = &self.spec;
        let n = ext.cols().saturating_sub(s.history());
        let (cin, k, dil) = (s.in_channels, s.kernel_size, s.dilation);
        let mut out = Tensor::zeros(&[s.out_channels, n]);
        if n == 0 {
            return out;
        }
        let w = self.weight.data();
        for o in 0..s.out_channels {
            let row = out.row_mut(o);
            row.fill(self.bias.data()[o]);
            for i in 0..cin {
                let xin = ext.row(i);
                for j in 0..k {
                    let wv = w[(o * cin + i) * k + j];
                    let src = &xin[j * dil..j * dil + n];
                    for (y, &x) in row.iter_mut().zip(src) {
                        *y += wv * x;
                    }
                }
            }
        }
        out
    }

    fn valid_transposed(&self, ext: &Tensor) -> Tensor {
        let s = &self.spec;
        let h = s.history();
        let frames = ext.cols().saturating_sub(h);
        let (cin, cout, k, st) = (s.in_channels, s.out_channels, s.kernel_size, s.stride);
        let mut out = Tensor::zeros(&[cout, frames * st]);
        if frames == 0 {
            return out;
        }
        let w = self.weight.data();
        for o in 0..cout {
            let row = out.row_mut(o);
            row.fill(self.bias.data()[o]);
            for i in 0..cin {
                let xin = ext.row(i);
                // Block of frame u gets tap a·s + r from input frame u − a.
                for a in 0..=h {
                    let src = &xin[h - a..h - a + frames];
                    for r in 0..st {
                        let j = a * st + r;
                        if j >= k {
                            break;
                        }
                        let wv = w[(i * cout + o) * k + j];
                        for (u, &x) in src.iter().enumerate() {
                            row[u * st + r] += wv * x;
                        }
                    }
                }
            }
        }
        out
    }
}

/// Carried state of one streaming layer: the last `history()` input frames.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvState {
    tail: Option<Tensor>,
    frames_seen: usize,
}

impl ConvState {
    /// State at sequence start; padding is materialized on the first chunk.
    pub fn new() -> Self {
        Self::default()
    }

    /// State whose history is the given `[channels × frames]` block.
    pub fn with_history(history: Tensor) -> Self {
        Self {
            tail: Some(history),
            frames_seen: 0,
        }
    }

    pub fn tail(&self) -> Option<&Tensor> {
        self.tail.as_ref()
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }
}

/// Non-causal "same" convolution: symmetric zero padding, output length `L`.
pub fn conv1d_centered(layer: &ConvLayer, x: &Tensor) -> Result<Tensor> {
    layer.check_input(x)?;
    if layer.spec.transposed {
        return Err(Error::config("centered evaluation is for regular convs only"));
    }
    let e = layer.spec.history();
    let c = layer.spec.in_channels;
    let left = Tensor::zeros(&[c, e / 2]);
    let right = Tensor::zeros(&[c, e - e / 2]);
    let ext = Tensor::concat_cols(&[&left, x, &right])?;
    Ok(layer.valid(&ext))
}

/// An ordered stack of causal layers with no nonlinearity between them.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    pub layers: Vec<ConvLayer>,
}

/// Result of a natural-padding forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalOutput {
    pub output: Tensor,
    /// History frames prepended in front of the slice.
    pub history: usize,
    /// How many of those were synthesized by replicating frame 0 because the
    /// slice started too close to the beginning of the sequence.
    pub replicated: usize,
}

impl NaturalOutput {
    pub fn is_fallback(&self) -> bool {
        self.replicated > 0
    }
}

impl ConvNet {
    pub fn new(layers: Vec<ConvLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("empty conv net"));
        }
        for pair in layers.windows(2) {
            if pair[0].spec.out_channels != pair[1].spec.in_channels {
                return Err(Error::shape("conv net channel chain is broken"));
            }
        }
        Ok(Self { layers })
    }

    pub fn total_upsample(&self) -> usize {
        self.layers.iter().map(|l| l.spec.upsample()).product()
    }

    /// Offline evaluation, each layer padded per its own pad mode.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for l in &self.layers {
            h = l.forward(&h)?;
        }
        Ok(h)
    }

    /// Unpadded evaluation through every layer.
    pub fn forward_valid(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for l in &self.layers {
            h = l.forward_valid(&h)?;
        }
        Ok(h)
    }

    pub fn init_states(&self) -> Vec<ConvState> {
        vec![ConvState::new(); self.layers.len()]
    }

    pub fn step(&self, states: &mut [ConvState], chunk: &Tensor) -> Result<Tensor> {
        let mut h = chunk.clone();
        for (l, st) in self.layers.iter().zip(states.iter_mut()) {
            h = l.step(st, &h)?;
        }
        Ok(h)
    }

    /// Output length of the unpadded net on `n` input frames.
    pub fn valid_len(&self, n: usize) -> usize {
        self.layers.iter().fold(n, |len, l| l.spec.valid_len(len))
    }

    /// History frames needed in front of a slice so that the unpadded net
    /// yields at least `slice_len × total_upsample()` samples.
    ///
    /// Computed by inverting each layer's length map from the output back to
    /// the input. This is sufficient rather than a tight receptive field, and
    /// it does not depend on the slice length.
    pub fn required_history(&self) -> usize {
        let target = self.total_upsample();
        let needed = self
            .layers
            .iter()
            .rev()
            .fold(target, |out, l| l.spec.min_input_for(out));
        needed - 1
    }

    /// Runs `z[.., start .. start+len]` with real preceding frames as padding.
    ///
    /// The output is trimmed from the tail to exactly `len × total_upsample()`
    /// samples. When fewer than `required_history()` frames precede the slice,
    /// the missing ones are filled by replicating frame 0 and the result is
    /// flagged.
    pub fn natural_pad_forward(&self, z: &Tensor, start: usize, len: usize) -> Result<NaturalOutput> {
        z.expect_rank(2, "natural_pad_forward input")?;
        if start + len > z.cols() {
            return Err(Error::shape(format!(
                "slice {start}..{} exceeds sequence length {}",
                start + len,
                z.cols()
            )));
        }
        let p = self.required_history();
        let replicated = p.saturating_sub(start);
        let input = if replicated > 0 {
            let first = z.slice_cols(0, 1);
            let mut parts: Vec<&Tensor> = vec![&first; replicated];
            let real = z.slice_cols(0, start + len);
            parts.push(&real);
            Tensor::concat_cols(&parts)?
        } else {
            z.slice_cols(start - p, start + len)
        };
        let out = self.forward_valid(&input)?;
        let want = len * self.total_upsample();
        debug_assert!(out.cols() >= want);
        Ok(NaturalOutput {
            output: out.slice_cols(out.cols() - want, out.cols()),
            history: p,
            replicated,
        })
    }
}
