use std::fmt;
use std::str::FromStr;
use std::sync::mpsc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::bundle::ModelBundle;
use crate::acoustic::{length_regulate, sample_latent, ScoreSequence};
use crate::attention::full_attention_oracle;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which parts of the model run chunk by chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Whole-sequence decoder and generator.
    Parallel,
    /// Whole-sequence decoder, streaming generator.
    Semi,
    /// Streaming decoder feeding a streaming generator.
    Full,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Parallel => "parallel",
            Mode::Semi => "semi",
            Mode::Full => "full",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parallel" => Ok(Mode::Parallel),
            "semi" => Ok(Mode::Semi),
            "full" => Ok(Mode::Full),
            other => Err(Error::config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StreamMetrics {
    /// Seconds from the call until the first audio chunk exists.
    pub latency_s: f64,
    /// Seconds until the last sample exists.
    pub process_time_s: f64,
    /// Seconds of audio produced.
    pub audio_s: f64,
    pub rtf: f64,
}

impl StreamMetrics {
    pub fn new(latency_s: f64, process_time_s: f64, audio_s: f64) -> Self {
        Self {
            latency_s,
            process_time_s,
            audio_s,
            rtf: process_time_s / audio_s,
        }
    }
}

/// One emitted audio chunk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChunkTrace {
    pub index: usize,
    /// Decoder input frames that had to be available before this chunk.
    pub frames_consumed: usize,
    pub samples: usize,
    pub emitted_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub waveform: Vec<f32>,
    pub metrics: StreamMetrics,
    pub chunks: Vec<ChunkTrace>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthOptions {
    pub mode: Mode,
    pub seed: u64,
    /// Full mode only: run decoder and generator on separate threads joined
    /// by a bounded queue.
    pub pipelined: bool,
}

impl SynthOptions {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self {
            mode,
            seed,
            pipelined: false,
        }
    }
}

/// Unit-normal draws `[T × d_z]` scaled by the bundle's noise scale.
pub fn latent_noise(bundle: &ModelBundle, frames: usize, seed: u64) -> Tensor {
    let dz = bundle.config.generator.latent_dim;
    let scale = bundle.config.noise_scale;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..frames * dz)
        .map(|_| {
            let e: f32 = StandardNormal.sample(&mut rng);
            e * scale
        })
        .collect();
    Tensor::new(vec![frames, dz], data).expect("noise dims")
}

/// Frame-level decoder input `[T × d]` for a score.
pub fn decoder_input(bundle: &ModelBundle, score: &ScoreSequence) -> Result<Tensor> {
    let phones = bundle.prior.embed(score)?;
    length_regulate(&phones, &score.durations)
}

/// Latent `[d_z × n]` for decoder output rows `h[n × d]` and matching noise rows.
fn latent(bundle: &ModelBundle, h: &Tensor, eps: &Tensor) -> Result<Tensor> {
    let prior = bundle.prior.project(h)?;
    Ok(sample_latent(&prior, eps)?.transpose())
}

struct Clock {
    start: Instant,
    first: Option<f64>,
}

impl Clock {
    fn now(&mut self) -> f64 {
        let t = self.start.elapsed().as_secs_f64();
        self.first.get_or_insert(t);
        t
    }
}

pub fn synth(score: &ScoreSequence, bundle: &ModelBundle, opts: SynthOptions) -> Result<SynthOutput> {
    let mut clock = Clock {
        start: Instant::now(),
        first: None,
    };
    score.validate()?;
    let frames = decoder_input(bundle, score)?;
    let t = frames.rows();
    let eps = latent_noise(bundle, t, opts.seed);
    let gen = &bundle.generator;
    let cfg = &bundle.decoder.cfg;
    let mut waveform = Vec::with_capacity(t * gen.hop());
    let mut chunks = Vec::new();

    match opts.mode {
        Mode::Parallel => {
            let h = full_attention_oracle(&frames, &bundle.decoder.layers, cfg.num_heads)?;
            let y = gen.forward(&latent(bundle, &h, &eps)?)?;
            waveform.extend_from_slice(y.data());
            chunks.push(ChunkTrace {
                index: 0,
                frames_consumed: t,
                samples: y.len(),
                emitted_s: clock.now(),
            });
        }
        Mode::Semi => {
            let h = full_attention_oracle(&frames, &bundle.decoder.layers, cfg.num_heads)?;
            let z = latent(bundle, &h, &eps)?;
            let mut st = gen.init_state();
            for i in 0..cfg.num_chunks(t) {
                let (start, end, _) = cfg.chunk_bounds(t, i);
                let y = gen.stream(&mut st, i, &z.slice_cols(start, end))?;
                waveform.extend_from_slice(y.data());
                chunks.push(ChunkTrace {
                    index: i,
                    frames_consumed: t,
                    samples: y.len(),
                    emitted_s: clock.now(),
                });
            }
        }
        Mode::Full if !opts.pipelined => {
            let mut dec = bundle.decoder.init_state();
            let mut st = gen.init_state();
            for i in 0..cfg.num_chunks(t) {
                let (start, end, right_end) = cfg.chunk_bounds(t, i);
                let (c, r) = bundle.decoder.chunk_inputs(&frames, i);
                let h = bundle.decoder.decode_chunk(&mut dec, i, &c, &r)?;
                let z = latent(bundle, &h, &eps.slice_rows(start, end))?;
                let y = gen.stream(&mut st, i, &z)?;
                waveform.extend_from_slice(y.data());
                chunks.push(ChunkTrace {
                    index: i,
                    frames_consumed: right_end,
                    samples: y.len(),
                    emitted_s: clock.now(),
                });
            }
        }
        Mode::Full => {
            let (tx, rx) = mpsc::sync_channel::<Result<(usize, usize, Tensor)>>(2);
            std::thread::scope(|s| -> Result<()> {
                let frames = &frames;
                let eps = &eps;
                s.spawn(move || {
                    let mut dec = bundle.decoder.init_state();
                    for i in 0..cfg.num_chunks(t) {
                        let (start, end, right_end) = cfg.chunk_bounds(t, i);
                        let (c, r) = bundle.decoder.chunk_inputs(frames, i);
                        let item = bundle
                            .decoder
                            .decode_chunk(&mut dec, i, &c, &r)
                            .and_then(|h| latent(bundle, &h, &eps.slice_rows(start, end)))
                            .map(|z| (i, right_end, z));
                        let failed = item.is_err();
                        if tx.send(item).is_err() || failed {
                            break;
                        }
                    }
                });
                let mut st = gen.init_state();
                for item in rx {
                    let (i, consumed, z) = item?;
                    let y = gen.stream(&mut st, i, &z)?;
                    waveform.extend_from_slice(y.data());
                    chunks.push(ChunkTrace {
                        index: i,
                        frames_consumed: consumed,
                        samples: y.len(),
                        emitted_s: clock.now(),
                    });
                }
                Ok(())
            })?;
        }
    }

    let process = clock.start.elapsed().as_secs_f64();
    let latency = clock.first.unwrap_or(process);
    let audio = waveform.len() as f64 / bundle.config.sample_rate as f64;
    Ok(SynthOutput {
        waveform,
        metrics: StreamMetrics::new(latency, process, audio),
        chunks,
    })
}
