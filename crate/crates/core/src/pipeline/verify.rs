//! Self-checks run against a loaded bundle.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::bundle::ModelBundle;
use crate::acoustic::AcousticFrames;
use crate::attention::{full_attention_oracle, ChunkStreamDecoder};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const STREAM_TOL: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    /// Generator (and causal posterior) streaming equals offline.
    StreamingEquivalence,
    /// Decoder chunks and generator samples ignore later inputs.
    Causality,
    /// Generator emits exactly `frames × hop` samples.
    LengthLaw,
    /// Degenerate streaming decoder equals the full-attention stack.
    AttentionDegenerate,
    /// Independently rendered latent slices match the full-sequence output.
    NaturalPaddingSlice,
}

impl Check {
    pub const ALL: [Check; 5] = [
        Check::StreamingEquivalence,
        Check::Causality,
        Check::LengthLaw,
        Check::AttentionDegenerate,
        Check::NaturalPaddingSlice,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::StreamingEquivalence => "streaming_equivalence",
            Check::Causality => "causality",
            Check::LengthLaw => "length_law",
            Check::AttentionDegenerate => "attention_degenerate",
            Check::NaturalPaddingSlice => "natural_padding_slice",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Check {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Check::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::config(format!("unknown check {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub check: Check,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VerifyReport {
    pub results: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims.to_vec(), (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

pub fn verify(bundle: &ModelBundle, checks: &[Check]) -> VerifyReport {
    let results = checks
        .iter()
        .map(|&check| {
            let outcome = match check {
                Check::StreamingEquivalence => streaming_equivalence(bundle),
                Check::Causality => causality(bundle),
                Check::LengthLaw => length_law(bundle),
                Check::AttentionDegenerate => attention_degenerate(bundle),
                Check::NaturalPaddingSlice => natural_padding_slice(bundle),
            };
            let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
            CheckResult { check, passed, detail }
        })
        .collect();
    VerifyReport { results }
}

fn chunked(total: usize, size: usize) -> Vec<(usize, usize)> {
    (0..total.div_ceil(size))
        .map(|i| (i * size, ((i + 1) * size).min(total)))
        .collect()
}

fn streaming_equivalence(b: &ModelBundle) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = &b.generator;
    let t = 2 * b.decoder.cfg.chunk_size + 7;
    let z = rand_tensor(&mut rng, &[g.config().latent_dim, t]);
    let offline = g.forward(&z)?;
    let mut st = g.init_state();
    let mut streamed = Vec::new();
    for (i, (a, e)) in chunked(t, b.decoder.cfg.chunk_size).into_iter().enumerate() {
        streamed.extend_from_slice(g.stream(&mut st, i, &z.slice_cols(a, e))?.data());
    }
    let gen_diff = offline.max_abs_diff(&Tensor::from_vec(streamed));
    let mut ok = gen_diff <= STREAM_TOL;
    let mut detail = format!("generator max |stream - offline| = {gen_diff:.3e}");

    if b.config.flags.causal_posterior {
        let mcep = rand_tensor(&mut rng, &[t, b.config.posterior.mcep_dim]);
        let f0 = (0..t).map(|i| if i % 5 == 0 { 0.0 } else { 0.2 }).collect::<Vec<_>>();
        let x = AcousticFrames { mcep, f0 };
        let offline = b.posterior.encode(&x, true)?;
        let mut states = b.posterior.init_states();
        let mut diff = 0f32;
        for (a, e) in chunked(t, 9) {
            let part = AcousticFrames {
                mcep: x.mcep.slice_rows(a, e),
                f0: x.f0[a..e].to_vec(),
            };
            let g = b.posterior.encode_stream(&mut states, &part)?;
            diff = diff.max(g.mu.max_abs_diff(&offline.mu.slice_rows(a, e)));
        }
        ok &= diff <= 1e-6;
        detail += &format!("; posterior max |stream - offline| = {diff:.3e}");
    }
    Ok((ok, detail))
}

fn causality(b: &ModelBundle) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cfg = &b.decoder.cfg;
    let t = 3 * cfg.chunk_size + cfg.right_context + 3;
    let x = rand_tensor(&mut rng, &[t, cfg.hidden]);
    let base = b.decoder.decode(&x)?;
    let (_, _, boundary) = cfg.chunk_bounds(t, 0);
    let mut y = x.clone();
    let noise = rand_tensor(&mut rng, &[t - boundary, cfg.hidden]);
    y.data_mut()[boundary * cfg.hidden..].copy_from_slice(noise.data());
    let dec_ok = b.decoder.decode(&y)?[0] == base[0];

    let g = &b.generator;
    let frames = 12;
    let z = rand_tensor(&mut rng, &[g.config().latent_dim, frames]);
    let cut = frames / 2;
    let mut p = z.clone();
    for c in 0..z.rows() {
        p.data_mut()[c * frames + cut] += 1.0;
    }
    let split = cut * g.hop();
    let gen_ok = g.forward(&z)?.data()[..split] == g.forward(&p)?.data()[..split];
    Ok((
        dec_ok && gen_ok,
        format!("decoder chunk 0 unchanged: {dec_ok}; generator prefix unchanged: {gen_ok}"),
    ))
}

fn length_law(b: &ModelBundle) -> Result<(bool, String)> {
    let g = &b.generator;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for t in 1..=8 {
        let z = rand_tensor(&mut rng, &[g.config().latent_dim, t]);
        let n = g.forward(&z)?.len();
        if n != t * g.hop() {
            return Ok((false, format!("{t} frames gave {n} samples, expected {}", t * g.hop())));
        }
    }
    Ok((true, format!("frames 1..=8 give frames x {} samples", g.hop())))
}

fn attention_degenerate(b: &ModelBundle) -> Result<(bool, String)> {
    let t = 32;
    let mut cfg = b.decoder.cfg.clone();
    cfg.memory_slots = 0;
    cfg.right_context = 0;
    cfg.left_context = t;
    cfg.chunk_size = t;
    let dec = ChunkStreamDecoder::new(cfg, b.decoder.layers.clone())?;
    let x = rand_tensor(&mut ChaCha8Rng::seed_from_u64(14), &[t, dec.cfg.hidden]);
    let diff = dec
        .decode_all(&x)?
        .max_abs_diff(&full_attention_oracle(&x, &dec.layers, dec.cfg.num_heads)?);
    Ok((diff <= 1e-5, format!("max |chunked - full| = {diff:.3e}")))
}

fn natural_padding_slice(b: &ModelBundle) -> Result<(bool, String)> {
    let g = &b.generator;
    let t = 24;
    let z = rand_tensor(&mut ChaCha8Rng::seed_from_u64(15), &[g.config().latent_dim, t]);
    let full = g.forward(&z)?;
    let hop = g.hop();
    let mut worst = 0f32;
    for (start, len) in [(0, 5), (3, 4), (8, 6), (16, 8)] {
        let part = g.forward_slice(&z, start, len)?;
        let region = Tensor::from_vec(full.data()[start * hop..(start + len) * hop].to_vec());
        worst = worst.max(part.max_abs_diff(&region));
    }
    let mode = if g.is_natural() { "natural" } else { "replicate" };
    Ok((
        worst <= STREAM_TOL,
        format!("{mode} padding: max |slice - full region| = {worst:.3e}"),
    ))
}
