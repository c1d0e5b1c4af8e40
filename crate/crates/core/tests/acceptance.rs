//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use chunkstream::acoustic::{am_losses, kl_gaussian, GaussianParams, LossReport, ScoreSequence};
use chunkstream::attention::{full_attention_oracle, ChunkConfig, ChunkStreamDecoder};
use chunkstream::conv::{ConvLayer, ConvNet, ConvSpec, PadMode};
use chunkstream::metrics::mcd;
use chunkstream::pipeline::{read_wav, synth, write_wav, BundleConfig, Mode, ModelBundle, SynthOptions, WeightFile};
use chunkstream::vocoder::GeneratorConfig;
use chunkstream::{Error, Tensor};
use common::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn stream_net(net: &ConvNet, x: &Tensor, chunks: &[usize]) -> Tensor {
    let mut states = net.init_states();
    let mut parts = Vec::new();
    let mut at = 0;
    for &c in chunks {
        parts.push(net.step(&mut states, &x.slice_cols(at, at + c)).unwrap());
        at += c;
    }
    Tensor::concat_cols(&parts.iter().collect::<Vec<_>>()).unwrap()
}

fn random_pad(r: &mut ChaCha8Rng) -> PadMode {
    match r.random_range(0..3) {
        0 => PadMode::Constant(0.0),
        1 => PadMode::Constant(r.random_range(-1.0..1.0)),
        _ => PadMode::Replicate,
    }
}

fn conv_stack(r: &mut ChaCha8Rng, with_tconv: bool) -> ConvNet {
    let mut c = r.random_range(1..4);
    let n = r.random_range(1..5);
    let tconv_at = r.random_range(0..n);
    let mut layers = Vec::new();
    for i in 0..n {
        let out = r.random_range(1..4);
        let spec = if with_tconv && (i == tconv_at || r.random_bool(0.3)) {
            let s = r.random_range(1..5);
            ConvSpec::transposed(c, out, r.random_range(s..3 * s + 1), s)
        } else {
            ConvSpec::conv(c, out, r.random_range(1..8)).with_dilation(r.random_range(1..4))
        };
        let pad = random_pad(r);
        layers.push(rand_layer(r, spec.with_pad(pad)));
        c = out;
    }
    ConvNet::new(layers).unwrap()
}

fn streaming_equivalence() -> Outcome {
    let t0 = Instant::now();
    let mut worst = [0f32; 2];
    for (kind, tconv) in [(0, false), (1, true)] {
        let mut r = rng(1000 + kind as u64);
        for _ in 0..100 {
            let net = conv_stack(&mut r, tconv);
            let len = r.random_range(16..=128);
            let x = rand_tensor(&mut r, &[net.layers[0].spec.in_channels, len], 1.0);
            let chunks = rand_chunking(&mut r, len, 24);
            let off = net.forward(&x).unwrap();
            let st = stream_net(&net, &x, &chunks);
            assert_eq!(off.dims(), st.dims());
            worst[kind] = worst[kind].max(off.max_abs_diff(&st));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    (
        worst[0] < 1e-6 && worst[1] < 1e-5 && secs < 30.0,
        format!(
            "conv max diff {:.2e}, tconv max diff {:.2e}, {secs:.2}s",
            worst[0], worst[1]
        ),
    )
}

fn with_pad(net: &ConvNet, mode: PadMode) -> ConvNet {
    let layers = net
        .layers
        .iter()
        .map(|l| ConvLayer::new(l.spec.clone().with_pad(mode), l.weight.clone(), l.bias.clone()).unwrap())
        .collect();
    ConvNet::new(layers).unwrap()
}

fn figure_two() -> Outcome {
    let mut r = rng(2000);
    let natural = ConvNet::new(vec![
        rand_layer(&mut r, ConvSpec::conv(1, 1, 4).with_pad(PadMode::Natural)),
        rand_layer(&mut r, ConvSpec::transposed(1, 1, 4, 2).with_pad(PadMode::Natural)),
    ])
    .unwrap();
    let reference = with_pad(&natural, PadMode::Replicate);
    let len = 12;
    let z = rand_tensor(&mut r, &[1, len], 1.0);
    let full = reference.forward(&z).unwrap();
    let out = natural.natural_pad_forward(&z, len - 2, 2).unwrap();
    let tail = full.slice_cols(full.cols() - 4, full.cols());
    let diff = if out.output.dims() == tail.dims() {
        out.output.max_abs_diff(&tail)
    } else {
        f32::INFINITY
    };
    (
        out.output.cols() == 4 && !out.is_fallback() && diff <= 1e-6,
        format!(
            "valid length {}, history {}, tail diff {diff:.2e}",
            out.output.cols(),
            out.history
        ),
    )
}

fn natural_slices() -> Outcome {
    let mut r = rng(3000);
    let mut worst = 0f32;
    let mut fallbacks = 0;
    for _ in 0..50 {
        let c = r.random_range(1..4);
        let mut layers = Vec::new();
        for _ in 0..r.random_range(1..5) {
            let spec = if r.random_bool(0.4) {
                let s = r.random_range(1..4);
                ConvSpec::transposed(c, c, r.random_range(s..3 * s + 1), s)
            } else {
                ConvSpec::conv(c, c, r.random_range(1..6)).with_dilation(r.random_range(1..3))
            };
            layers.push(rand_layer(&mut r, spec.with_pad(PadMode::Natural)));
        }
        let net = ConvNet::new(layers).unwrap();
        let reference = with_pad(&net, PadMode::Replicate);
        let p = net.required_history();
        let u = net.total_upsample();
        let len = p + r.random_range(8..48);
        let z = rand_tensor(&mut r, &[c, len], 1.0);
        let full = reference.forward(&z).unwrap();
        let slice = r.random_range(1..=len - p);
        let start = r.random_range(p..=len - slice);
        let out = net.natural_pad_forward(&z, start, slice).unwrap();
        fallbacks += out.is_fallback() as usize;
        worst = worst.max(
            out.output
                .max_abs_diff(&full.slice_cols(start * u, (start + slice) * u)),
        );
    }
    (
        worst <= 1e-6 && fallbacks == 0,
        format!("50 nets, max diff {worst:.2e}, fallbacks {fallbacks}"),
    )
}

fn decoder(r: &mut ChaCha8Rng, cfg: ChunkConfig, smooth: bool) -> ChunkStreamDecoder {
    let layers = (0..cfg.num_layers)
        .map(|_| rand_attention_layer(r, cfg.hidden, cfg.ffn_hidden, smooth.then_some(cfg.smooth_kernel)))
        .collect();
    ChunkStreamDecoder::new(cfg, layers).unwrap()
}

fn degenerate_attention() -> Outcome {
    let mut worst = 0f32;
    for seed in 0..50 {
        let mut r = rng(4000 + seed);
        let t = r.random_range(1..=64);
        let cfg = ChunkConfig {
            chunk_size: t + r.random_range(0..4),
            left_context: t + r.random_range(0..4),
            right_context: 0,
            num_layers: 2,
            hidden: 32,
            ffn_hidden: 64,
            num_heads: 4,
            memory_slots: 0,
            smooth_kernel: 3,
        };
        let dec = decoder(&mut r, cfg, false);
        let x = rand_tensor(&mut r, &[t, 32], 1.0);
        let streamed = dec.decode_all(&x).unwrap();
        let full = full_attention_oracle(&x, &dec.layers, 4).unwrap();
        worst = worst.max(streamed.max_abs_diff(&full));
    }
    (worst <= 1e-5, format!("50 seeds, max diff {worst:.2e}"))
}

fn chunk_causality() -> Outcome {
    let cfg = ChunkConfig::default();
    let mut r = rng(5000);
    let dec = decoder(&mut r, cfg.clone(), true);
    let frames = 100;
    let x = rand_tensor(&mut r, &[frames, cfg.hidden], 1.0);
    let base = dec.decode(&x).unwrap();
    let mut trials = 0;
    let mut broken = Vec::new();
    // The first four chunks; each has frames past its lookahead at T = 100.
    for i in 0..4 {
        let (_, _, right_end) = cfg.chunk_bounds(frames, i);
        let mut probes: Vec<Vec<usize>> = vec![(right_end..frames).collect()];
        for _ in 0..3 {
            probes.push(vec![r.random_range(right_end..frames)]);
        }
        for rows in probes {
            let mut y = x.clone();
            for &t in &rows {
                for v in y.row_mut(t) {
                    *v += r.random_range(-2.0..2.0);
                }
            }
            let out = dec.decode(&y).unwrap();
            trials += 1;
            if out[i].data() != base[i].data() {
                broken.push(i);
            }
        }
    }
    (
        broken.is_empty(),
        format!("{trials} perturbations over the first four chunks, changed: {broken:?}"),
    )
}

fn length_law() -> Outcome {
    let mut bad = Vec::new();
    let mut checked = 0;
    for (strides, hop) in [(&[8, 8, 4, 2][..], 512), (&[8, 8, 2, 2][..], 256)] {
        let gcfg = GeneratorConfig::for_strides(32, strides);
        for natural in [true, false] {
            let mut r = rng(6000 + hop as u64 + natural as u64);
            let g = rand_generator(&mut r, &gcfg, natural);
            for t in 1..=40 {
                let z = rand_tensor(&mut r, &[32, t], 1.0);
                let n = g.forward(&z).unwrap().len();
                let chunks = rand_chunking(&mut r, t, 20);
                let streamed = stream_generator(&g, &z, &chunks).len();
                checked += 1;
                if n != t * hop || streamed != t * hop {
                    bad.push((hop, natural, t, n, streamed));
                }
            }
        }
    }
    (
        bad.is_empty(),
        format!("{checked} (hop, padding, frames) cases, mismatches: {bad:?}"),
    )
}

fn gauss(mu: &[f32], sigma: &[f32]) -> GaussianParams {
    GaussianParams {
        mu: Tensor::new(vec![1, mu.len()], mu.to_vec()).unwrap(),
        sigma: Tensor::new(vec![1, sigma.len()], sigma.to_vec()).unwrap(),
    }
}

fn closed_forms() -> Outcome {
    let std_normal = gauss(&[0.0], &[1.0]);
    let kl1 = kl_gaussian(&gauss(&[1.0], &[1.0]), &std_normal).unwrap();
    let kl2 = kl_gaussian(&gauss(&[0.0], &[2.0]), &std_normal).unwrap();
    let a = Tensor::from_rows(&[vec![0.3, 1.0, -0.5, 2.0]]).unwrap();
    let b = Tensor::from_rows(&[vec![0.3, 0.0, -0.5, 2.0]]).unwrap();
    let m = mcd(&a, &b).unwrap();
    let want_mcd = 10.0 / std::f64::consts::LN_10 * 2f64.sqrt();

    let mut r = rng(7000);
    let f0: Vec<f32> = (0..50).map(|_| r.random_range(100.0..400.0)).collect();
    let f0_hat: Vec<f32> = f0.iter().map(|v| v + r.random_range(-5.0..5.0)).collect();
    let mc = rand_tensor(&mut r, &[50, 8], 1.0);
    let mc_hat = rand_tensor(&mut r, &[50, 8], 1.0);
    let dur = [3, 7, 12, 28];
    let logdur = [1.2f32, 2.0, 2.7, 3.1];
    let am = am_losses(&f0_hat, &f0, &mc_hat, &mc, &logdur, &dur).unwrap();
    let report = LossReport::new(am, 0.37, 1.25, Some(0.8), Some(0.4));
    let additive = am.l_am == am.l_f0 + am.l_mcep + am.l_dur
        && report.total == report.l_recon + report.l_am + report.l_kl + 0.8 + 0.4
        && report.check().is_ok();

    let ok = (kl1 - 0.5).abs() <= 1e-9
        && (kl2 - (1.5 - 2f64.ln())).abs() <= 1e-9
        && (m - want_mcd).abs() <= 1e-9
        && additive;
    (
        ok,
        format!(
            "kl errors {:.1e} {:.1e}, mcd error {:.1e}, additive {additive}",
            (kl1 - 0.5).abs(),
            (kl2 - (1.5 - 2f64.ln())).abs(),
            (m - want_mcd).abs()
        ),
    )
}

const VOCAB: [&str; 5] = ["sil", "a", "e", "n", "m"];

fn vocab() -> Vec<String> {
    VOCAB.iter().map(|s| s.to_string()).collect()
}

/// Score of `frames` frames split over phones of at most 8 frames.
fn score(frames: usize) -> ScoreSequence {
    let mut text = String::new();
    let (mut left, mut i) = (frames, 0);
    while left > 0 {
        let d = left.min(8);
        let note = if i % 5 == 0 {
            "-".to_string()
        } else {
            (57 + i % 12).to_string()
        };
        text += &format!("{}\t{note}\t{d}\n", VOCAB[i % VOCAB.len()]);
        left -= d;
        i += 1;
    }
    ScoreSequence::parse(&text, &vocab()).unwrap()
}

fn mode_consistency() -> Outcome {
    let bundle = ModelBundle::random(BundleConfig::default_16k(vocab()), 8000).unwrap();
    let s = score(46);
    let run = |m| synth(&s, &bundle, SynthOptions::new(m, 3)).unwrap().waveform;
    let (p, q, f) = (run(Mode::Parallel), run(Mode::Semi), run(Mode::Full));
    let diff = if p.len() == q.len() {
        p.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0f32, f32::max)
    } else {
        f32::INFINITY
    };
    let counts = [p.len(), q.len(), f.len()];
    let want = 46 * bundle.hop();
    (
        diff <= 1e-5 && counts.iter().all(|&n| n == want),
        format!("semi vs parallel max diff {diff:.2e}, samples {counts:?} (want {want})"),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn latency_shape() -> Outcome {
    let bundle = ModelBundle::random(BundleConfig::default_44k(vocab()), 9000).unwrap();
    // Runs are interleaved so slow drift in machine speed hits every series alike.
    let cases = [
        (Mode::Full, 40),
        (Mode::Full, 80),
        (Mode::Parallel, 40),
        (Mode::Parallel, 80),
    ];
    let scores: Vec<ScoreSequence> = cases.iter().map(|&(_, n)| score(n)).collect();
    let mut samples: [Vec<f64>; 4] = Default::default();
    for rep in 0..23 {
        for (k, &(mode, _)) in cases.iter().enumerate() {
            let out = synth(&scores[k], &bundle, SynthOptions::new(mode, 0)).unwrap();
            if rep >= 3 {
                samples[k].push(out.metrics.latency_s);
            }
        }
    }
    let [full40, full80, par40, par80] = samples.map(median);
    let full_change = (full80 - full40).abs() / full40;
    let par_growth = (par80 - par40) / par40;
    (
        full_change < 0.25 && par_growth > 0.60,
        format!(
            "full TTFA {:.1}ms -> {:.1}ms ({:+.1}%), parallel {:.1}ms -> {:.1}ms ({:+.1}%)",
            full40 * 1e3,
            full80 * 1e3,
            full_change * 100.0,
            par40 * 1e3,
            par80 * 1e3,
            par_growth * 100.0
        ),
    )
}

fn file_round_trips() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = BundleConfig::default_16k(vocab());
    let w = chunkstream::pipeline::random_weights(&cfg, 10_000).unwrap();
    let path = dir.path().join("model.cssw");
    w.save(&path).unwrap();
    let back = WeightFile::load(&path).unwrap();
    let bit_exact = back.tensors.len() == w.tensors.len()
        && w.tensors.iter().all(|(name, t)| {
            back.get(name).is_some_and(|b| {
                b.dims() == t.dims() && b.data().iter().zip(t.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
        });

    let bytes = w.to_bytes().unwrap();
    let mut rejected = Vec::new();
    let mut tamper = |label: &str, buf: Vec<u8>| {
        if matches!(WeightFile::from_bytes(&buf), Err(Error::Format(_))) {
            rejected.push(label.to_string());
        }
    };
    let mut b = bytes.clone();
    b[0] ^= 0x20;
    tamper("magic", b);
    let mut b = bytes.clone();
    b[4] = 2;
    tamper("version", b);
    tamper("truncated", bytes[..bytes.len() - 3].to_vec());
    tamper("header-only", bytes[..10].to_vec());
    let mut b = bytes.clone();
    b.push(0);
    tamper("trailing", b);
    let mut missing = w.clone();
    missing.tensors.remove("prior.proj.bias");
    if matches!(ModelBundle::from_weights(cfg.clone(), &missing), Err(Error::Bundle(_))) {
        rejected.push("missing".into());
    }

    let mut r = rng(10_001);
    let mut samples: Vec<f32> = (0..4000).map(|_| r.random_range(-1.0..1.0)).collect();
    samples.extend([1.0, -1.0, 0.0, 1.5, -1.5]);
    let wav = dir.path().join("x.wav");
    write_wav(&wav, &samples, 16_000).unwrap();
    let (sr, decoded) = read_wav(&wav).unwrap();
    let lsb = 1.0 / 32767.0;
    let wav_ok = sr == 16_000
        && decoded.len() == samples.len()
        && decoded
            .iter()
            .zip(&samples)
            .all(|(d, s)| (d - s.clamp(-1.0, 1.0)).abs() <= lsb);
    let wav2 = dir.path().join("y.wav");
    write_wav(&wav2, &decoded, sr).unwrap();
    let requantize_exact = std::fs::read(&wav).unwrap() == std::fs::read(&wav2).unwrap();

    (
        bit_exact && rejected.len() == 6 && wav_ok && requantize_exact,
        format!(
            "weights bit-exact {bit_exact}, rejected {rejected:?}, wav within 1 LSB {wav_ok}, re-encode identical {requantize_exact}"
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("conv streaming equivalence", streaming_equivalence),
        ("two-layer natural padding", figure_two),
        ("natural padding slices", natural_slices),
        ("degenerate chunk attention", degenerate_attention),
        ("chunk causality", chunk_causality),
        ("generator length law", length_law),
        ("closed-form numerics", closed_forms),
        ("mode consistency", mode_consistency),
        ("latency shape", latency_shape),
        ("file round trips", file_round_trips),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = format!("AC{}", i + 1);
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let t0 = Instant::now();
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(run)) {
            Ok(o) => o,
            Err(p) => {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        failed += !ok as usize;
        println!(
            "{id} {}: {name}: {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            t0.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
