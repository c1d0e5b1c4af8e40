//! Conditional-VAE plumbing around the decoder: score parsing and embedding,
//! the length regulator, the posterior encoder, latent sampling and the loss
//! arithmetic.

use serde::{Deserialize, Serialize};

use crate::conv::{conv1d_centered, ConvLayer, ConvSpec, ConvState};
use crate::error::{Error, Result};
use crate::metrics::{mel_spectrogram, MelConfig};
use crate::tensor::{layer_norm, linear, Activation, Tensor, LN_EPS};

/// MIDI note numbers are 0..=127.
pub const NUM_NOTES: usize = 128;

/// Phone-level score: symbol ids, optional MIDI notes and frame durations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreSequence {
    pub phonemes: Vec<usize>,
    /// `None` entries carry no pitch (speech, rests).
    pub notes: Vec<Option<u8>>,
    pub durations: Vec<usize>,
}

impl ScoreSequence {
    pub fn validate(&self) -> Result<()> {
        let n = self.phonemes.len();
        if self.notes.len() != n || self.durations.len() != n {
            return Err(Error::Score("phoneme, note and duration counts differ".into()));
        }
        if self.total_frames() == 0 {
            return Err(Error::Score("score has no frames".into()));
        }
        Ok(())
    }

    pub fn total_frames(&self) -> usize {
        self.durations.iter().sum()
    }

    /// Parses `phoneme<TAB>note<TAB>frames` lines; `-` marks a missing note.
    /// Blank lines are skipped.
    pub fn parse(text: &str, vocab: &[String]) -> Result<Self> {
        let mut s = Self {
            phonemes: Vec::new(),
            notes: Vec::new(),
            durations: Vec::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let lineno = i + 1;
            let fields: Vec<&str> = line.split('\t').collect();
            let [ph, note, dur] = fields[..] else {
                return Err(Error::Score(format!("line {lineno}: expected 3 tab-separated fields")));
            };
            let id = vocab
                .iter()
                .position(|v| v == ph)
                .ok_or_else(|| Error::Score(format!("line {lineno}: unknown phoneme {ph:?}")))?;
            let note = match note {
                "-" => None,
                n => Some(
                    n.parse::<u8>()
                        .ok()
                        .filter(|&v| (v as usize) < NUM_NOTES)
                        .ok_or_else(|| Error::Score(format!("line {lineno}: bad note {n:?}")))?,
                ),
            };
            let dur = dur
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::Score(format!("line {lineno}: bad duration {dur:?}")))?;
            s.phonemes.push(id);
            s.notes.push(note);
            s.durations.push(dur);
        }
        s.validate()?;
        Ok(s)
    }
}

pub fn midi_to_hz(note: u8) -> f32 {
    440.0 * 2f32.powf((note as f32 - 69.0) / 12.0)
}

/// Repeats row `p` of `phones` `durations[p]` times.
pub fn length_regulate(phones: &Tensor, durations: &[usize]) -> Result<Tensor> {
    phones.expect_rank(2, "length_regulate input")?;
    if phones.rows() != durations.len() {
        return Err(Error::shape(format!(
            "{} phone vectors for {} durations",
            phones.rows(),
            durations.len()
        )));
    }
    let total: usize = durations.iter().sum();
    if total == 0 {
        return Err(Error::Score("all durations are zero".into()));
    }
    let d = phones.cols();
    let mut data = Vec::with_capacity(total * d);
    for (p, &n) in durations.iter().enumerate() {
        for _ in 0..n {
            data.extend_from_slice(phones.row(p));
        }
    }
    Tensor::new(vec![total, d], data)
}

/// Embedding tables of the prior path and its latent projection.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorWeights {
    /// `[vocab × (d−1)]`
    pub phone_embedding: Tensor,
    /// `[NUM_NOTES × (d−1)]`
    pub note_embedding: Tensor,
    /// `[d × 2·d_z]`, mean half first.
    pub proj_w: Tensor,
    pub proj_b: Tensor,
}

impl PriorWeights {
    /// Phone-level vectors `[P × d]`: phone plus note embedding, then one
    /// channel holding the note's log-F0 (0 when absent).
    pub fn embed(&self, score: &ScoreSequence) -> Result<Tensor> {
        score.validate()?;
        let e = self.phone_embedding.cols();
        let mut data = Vec::with_capacity(score.phonemes.len() * (e + 1));
        for (&ph, note) in score.phonemes.iter().zip(&score.notes) {
            if ph >= self.phone_embedding.rows() {
                return Err(Error::Score(format!("phoneme id {ph} outside the vocabulary")));
            }
            let row = self.phone_embedding.row(ph);
            match note {
                Some(n) => {
                    let ne = self.note_embedding.row(*n as usize);
                    data.extend(row.iter().zip(ne).map(|(a, b)| a + b));
                    data.push(midi_to_hz(*n).ln());
                }
                None => {
                    data.extend_from_slice(row);
                    data.push(0.0);
                }
            }
        }
        Tensor::new(vec![score.phonemes.len(), e + 1], data)
    }

    /// Frame-level prior distribution from decoder output `[T × d]`.
    pub fn project(&self, h: &Tensor) -> Result<GaussianParams> {
        let out = linear(h, &self.proj_w, Some(&self.proj_b))?;
        GaussianParams::from_raw(&out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcousticFrames {
    /// `[T × mcep_dim]`
    pub mcep: Tensor,
    /// Hz per frame, 0 for unvoiced.
    pub f0: Vec<f32>,
}

impl AcousticFrames {
    pub fn validate(&self) -> Result<()> {
        self.mcep.expect_rank(2, "mcep")?;
        if self.mcep.rows() != self.f0.len() || self.f0.is_empty() {
            return Err(Error::shape("mcep and f0 frame counts differ or are zero"));
        }
        if self.f0.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Domain("f0 must be nonnegative".into()));
        }
        Ok(())
    }

    /// Channel-major conditioning input `[(mcep_dim + 1) × T]`.
    fn channels(&self) -> Result<Tensor> {
        self.validate()?;
        let f0 = Tensor::new(vec![self.f0.len(), 1], self.f0.clone())?;
        Ok(Tensor::concat_cols(&[&self.mcep, &f0])?.transpose())
    }
}

/// Diagonal Gaussian per frame; `sigma` is strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mu: Tensor,
    pub sigma: Tensor,
}

impl GaussianParams {
    /// Splits `[T × 2d]` into mean and `exp` of the log-scale half.
    pub fn from_raw(raw: &Tensor) -> Result<Self> {
        raw.expect_rank(2, "gaussian parameters")?;
        if !raw.cols().is_multiple_of(2) {
            return Err(Error::shape("gaussian parameter width must be even"));
        }
        let d = raw.cols() / 2;
        Ok(Self {
            mu: raw.slice_cols(0, d),
            sigma: raw.slice_cols(d, 2 * d).map(f32::exp),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorConfig {
    pub mcep_dim: usize,
    pub hidden: usize,
    pub kernel_size: usize,
    pub num_layers: usize,
}

impl PosteriorConfig {
    pub fn layer_specs(&self, latent_dim: usize) -> Vec<ConvSpec> {
        let mut specs: Vec<ConvSpec> = (0..self.num_layers)
            .map(|i| {
                let cin = if i == 0 { self.mcep_dim + 1 } else { self.hidden };
                ConvSpec::conv(cin, self.hidden, self.kernel_size)
            })
            .collect();
        let last = if self.num_layers == 0 {
            self.mcep_dim + 1
        } else {
            self.hidden
        };
        specs.push(ConvSpec::conv(last, 2 * latent_dim, 1));
        specs
    }
}

/// Conv + layer-norm stack mapping `(mcep, f0)` frames to `μ`, `σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEncoder {
    pub convs: Vec<ConvLayer>,
    pub norms: Vec<(Tensor, Tensor)>,
    /// 1×1 projection to `2·d_z` channels.
    pub proj: ConvLayer,
}

impl PosteriorEncoder {
    pub fn new(convs: Vec<ConvLayer>, norms: Vec<(Tensor, Tensor)>, proj: ConvLayer) -> Result<Self> {
        if convs.len() != norms.len() {
            return Err(Error::config("posterior encoder needs one norm per conv"));
        }
        for (c, (g, b)) in convs.iter().zip(&norms) {
            let ch = c.spec.out_channels;
            if c.spec.transposed || g.dims() != [ch] || b.dims() != [ch] {
                return Err(Error::shape("posterior norm width must match its conv"));
            }
        }
        let mut ch = convs
            .first()
            .map(|c| c.spec.in_channels)
            .unwrap_or(proj.spec.in_channels);
        for c in convs.iter().chain([&proj]) {
            if c.spec.in_channels != ch {
                return Err(Error::shape("posterior encoder channel chain is broken"));
            }
            ch = c.spec.out_channels;
        }
        if proj.spec.kernel_size != 1 || !proj.spec.out_channels.is_multiple_of(2) {
            return Err(Error::shape("posterior projection must be 1×1 with even width"));
        }
        Ok(Self { convs, norms, proj })
    }

    fn block(&self, i: usize, y: Tensor) -> Result<Tensor> {
        let (g, b) = &self.norms[i];
        let h = layer_norm(&y.transpose(), g, b, LN_EPS)?;
        Ok(h.map(|v| Activation::LeakyRelu.apply_scalar(v)).transpose())
    }

    fn finish(&self, h: Tensor) -> Result<GaussianParams> {
        GaussianParams::from_raw(&self.proj.forward(&h)?.transpose())
    }

    /// Whole-utterance encoding; `causal` selects left-only receptive fields.
    pub fn encode(&self, x: &AcousticFrames, causal: bool) -> Result<GaussianParams> {
        let mut h = x.channels()?;
        for (i, conv) in self.convs.iter().enumerate() {
            let y = if causal {
                conv.forward(&h)?
            } else {
                conv1d_centered(conv, &h)?
            };
            h = self.block(i, y)?;
        }
        self.finish(h)
    }

    pub fn init_states(&self) -> Vec<ConvState> {
        vec![ConvState::new(); self.convs.len()]
    }

    /// Causal encoding of the next frames, carrying conv state.
    pub fn encode_stream(&self, states: &mut [ConvState], x: &AcousticFrames) -> Result<GaussianParams> {
        let mut h = x.channels()?;
        for (i, conv) in self.convs.iter().enumerate() {
            let y = conv.step(&mut states[i], &h)?;
            h = self.block(i, y)?;
        }
        self.finish(h)
    }
}

/// `z = μ + σ ⊙ eps`.
pub fn sample_latent(g: &GaussianParams, eps: &Tensor) -> Result<Tensor> {
    let scaled = g.sigma.zip(eps, |s, e| s * e)?;
    g.mu.add(&scaled)
}

/// KL(q ‖ p) of diagonal Gaussians, summed over dims and averaged over frames.
pub fn kl_gaussian(q: &GaussianParams, p: &GaussianParams) -> Result<f64> {
    for t in [&q.sigma, &p.mu, &p.sigma] {
        if t.dims() != q.mu.dims() {
            return Err(Error::shape("kl_gaussian parameter shapes differ"));
        }
    }
    q.mu.expect_rank(2, "kl_gaussian mean")?;
    if q.sigma.data().iter().chain(p.sigma.data()).any(|s| !(*s > 0.0)) {
        return Err(Error::Domain("sigma must be strictly positive".into()));
    }
    let frames = q.mu.rows();
    if frames == 0 {
        return Err(Error::shape("kl_gaussian of zero frames"));
    }
    let mut total = 0f64;
    for i in 0..q.mu.len() {
        let (mq, sq) = (q.mu.data()[i] as f64, q.sigma.data()[i] as f64);
        let (mp, sp) = (p.mu.data()[i] as f64, p.sigma.data()[i] as f64);
        total += (sp / sq).ln() + (sq * sq + (mq - mp).powi(2)) / (2.0 * sp * sp) - 0.5;
    }
    Ok(total / frames as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AmLosses {
    pub l_f0: f64,
    pub l_mcep: f64,
    pub l_dur: f64,
    pub l_am: f64,
}

fn mean_abs(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).abs()).sum::<f64>() / a.len() as f64
}

/// F0 and mcep as mean absolute error, duration as squared error against
/// `ln(dur + 1)`.
pub fn am_losses(
    pred_f0: &[f32],
    gt_f0: &[f32],
    pred_mcep: &Tensor,
    gt_mcep: &Tensor,
    pred_logdur: &[f32],
    gt_dur: &[usize],
) -> Result<AmLosses> {
    if pred_f0.len() != gt_f0.len() || pred_mcep.dims() != gt_mcep.dims() || pred_logdur.len() != gt_dur.len() {
        return Err(Error::shape("acoustic loss inputs differ in length"));
    }
    if pred_f0.is_empty() || pred_mcep.is_empty() || gt_dur.is_empty() {
        return Err(Error::shape("acoustic loss inputs are empty"));
    }
    let l_f0 = mean_abs(pred_f0, gt_f0);
    let l_mcep = mean_abs(pred_mcep.data(), gt_mcep.data());
    let l_dur = pred_logdur
        .iter()
        .zip(gt_dur)
        .map(|(p, d)| (*p as f64 - (*d as f64 + 1.0).ln()).powi(2))
        .sum::<f64>()
        / gt_dur.len() as f64;
    Ok(AmLosses {
        l_f0,
        l_mcep,
        l_dur,
        l_am: l_f0 + l_mcep + l_dur,
    })
}

/// Mean absolute log-mel difference, trimmed to the shorter frame count.
pub fn recon_loss(y: &[f32], y_hat: &[f32], cfg: &MelConfig) -> Result<f64> {
    let a = mel_spectrogram(y, cfg)?;
    let b = mel_spectrogram(y_hat, cfg)?;
    let n = a.rows().min(b.rows());
    let (a, b) = (a.slice_rows(0, n), b.slice_rows(0, n));
    Ok(mean_abs(a.data(), b.data()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub l_f0: f64,
    pub l_mcep: f64,
    pub l_dur: f64,
    pub l_am: f64,
    pub l_kl: f64,
    pub l_recon: f64,
    pub l_adv_g: Option<f64>,
    pub l_fm_g: Option<f64>,
    pub total: f64,
}

impl LossReport {
    pub fn new(am: AmLosses, l_kl: f64, l_recon: f64, l_adv_g: Option<f64>, l_fm_g: Option<f64>) -> Self {
        let mut r = Self {
            l_f0: am.l_f0,
            l_mcep: am.l_mcep,
            l_dur: am.l_dur,
            l_am: am.l_am,
            l_kl,
            l_recon,
            l_adv_g,
            l_fm_g,
            total: 0.0,
        };
        r.total = total_loss(&r);
        r
    }

    /// Checks the additive identities and sign constraints.
    pub fn check(&self) -> Result<()> {
        let parts = [self.l_f0, self.l_mcep, self.l_dur, self.l_am, self.l_kl, self.l_recon];
        if parts.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Domain("loss components must be nonnegative".into()));
        }
        if self.l_am != self.l_f0 + self.l_mcep + self.l_dur {
            return Err(Error::Domain("l_am is not the sum of its parts".into()));
        }
        if self.total != total_loss(self) {
            return Err(Error::Domain("total is not the sum of its parts".into()));
        }
        Ok(())
    }
}

/// `l_recon + l_am + l_kl`, plus the adversarial terms when supplied.
pub fn total_loss(r: &LossReport) -> f64 {
    r.l_recon + r.l_am + r.l_kl + r.l_adv_g.unwrap_or(0.0) + r.l_fm_g.unwrap_or(0.0)
}
