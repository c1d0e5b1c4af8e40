//! Shared helpers for the integration suites: seeded random tensors and
//! brute-force reference implementations that do not share code with the
//! library's kernels.
#![allow(dead_code)]

use chunkstream::attention::{AttentionLayerWeights, SmoothWeights};
use chunkstream::conv::{ConvLayer, ConvSpec, PadMode};
use chunkstream::vocoder::{Generator, GeneratorConfig};
use chunkstream::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, dims: &[usize], scale: f32) -> Tensor {
    let n = dims.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(dims.to_vec(), data).unwrap()
}

pub fn rand_layer(rng: &mut ChaCha8Rng, spec: ConvSpec) -> ConvLayer {
    let fan = (spec.in_channels * spec.kernel_size) as f32;
    let w = rand_tensor(rng, &spec.weight_dims(), 1.0 / fan.sqrt());
    let b = rand_tensor(rng, &[spec.out_channels], 0.1);
    ConvLayer::new(spec, w, b).unwrap()
}

/// Splits `total` into random positive chunk lengths.
pub fn rand_chunking(rng: &mut ChaCha8Rng, total: usize, max_chunk: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut left = total;
    while left > 0 {
        let c = rng.random_range(1..=max_chunk.min(left));
        out.push(c);
        left -= c;
    }
    out
}

fn pad_value(mode: PadMode, x: &Tensor, ch: usize) -> f64 {
    match mode {
        PadMode::Constant(v) => v as f64,
        PadMode::Replicate => x.row(ch)[0] as f64,
        PadMode::Natural => panic!("no padding value in natural mode"),
    }
}

/// Direct causal convolution: `y[o][t] = b[o] + Σ w[o][i][j]·x[i][t − dil·(k−1−j)]`,
/// with frames before 0 taken from the pad mode. Accumulates in f64.
pub fn naive_causal_conv(layer: &ConvLayer, x: &Tensor) -> Tensor {
    let s = &layer.spec;
    assert!(!s.transposed);
    let (cin, cout, k, dil) = (s.in_channels, s.out_channels, s.kernel_size, s.dilation);
    let l = x.cols();
    let w = layer.weight.data();
    let mut out = vec![0f32; cout * l];
    for o in 0..cout {
        for t in 0..l {
            let mut acc = layer.bias.data()[o] as f64;
            for i in 0..cin {
                for j in 0..k {
                    let tau = t as isize - (dil * (k - 1 - j)) as isize;
                    let v = if tau >= 0 {
                        x.row(i)[tau as usize] as f64
                    } else {
                        pad_value(s.pad_mode, x, i)
                    };
                    acc += w[(o * cin + i) * k + j] as f64 * v;
                }
            }
            out[o * l + t] = acc as f32;
        }
    }
    Tensor::new(vec![cout, l], out).unwrap()
}

/// Literal causal transposed convolution: prepend `k//s − 1` pad frames, run
/// the textbook scatter-add transposed convolution, drop the padded part at
/// the front and keep `L·s` samples. Returns the kept output and the raw
/// (untrimmed) result.
pub fn naive_causal_tconv(layer: &ConvLayer, x: &Tensor) -> (Tensor, Tensor) {
    let s = &layer.spec;
    assert!(s.transposed);
    let (cin, cout, k, st) = (s.in_channels, s.out_channels, s.kernel_size, s.stride);
    let p = k / st - 1;
    let l = x.cols();
    let lp = l + p;
    let raw_len = (lp - 1) * st + k;
    let w = layer.weight.data();
    let mut raw = vec![0f64; cout * raw_len];
    for o in 0..cout {
        for q in 0..raw_len {
            raw[o * raw_len + q] = layer.bias.data()[o] as f64;
        }
        for i in 0..cin {
            for u in 0..lp {
                let v = if u < p {
                    pad_value(s.pad_mode, x, i)
                } else {
                    x.row(i)[u - p] as f64
                };
                for j in 0..k {
                    raw[o * raw_len + u * st + j] += w[(i * cout + o) * k + j] as f64 * v;
                }
            }
        }
    }
    let raw_t = Tensor::new(vec![cout, raw_len], raw.iter().map(|&v| v as f32).collect()).unwrap();
    let kept = raw_t.slice_cols(p * st, p * st + l * st);
    (kept, raw_t)
}

fn rand_norm(rng: &mut ChaCha8Rng, d: usize) -> (Tensor, Tensor) {
    let g = rand_tensor(rng, &[d], 0.1).map(|v| 1.0 + v);
    (g, rand_tensor(rng, &[d], 0.1))
}

pub fn rand_attention_layer(rng: &mut ChaCha8Rng, d: usize, f: usize, smooth: Option<usize>) -> AttentionLayerWeights {
    let s = 1.0 / (d as f32).sqrt();
    AttentionLayerWeights {
        w_q: rand_tensor(rng, &[d, d], s),
        w_k: rand_tensor(rng, &[d, d], s),
        w_v: rand_tensor(rng, &[d, d], s),
        w_out: rand_tensor(rng, &[d, d], s),
        attn_norm: rand_norm(rng, d),
        ffn_w1: rand_tensor(rng, &[d, f], s),
        ffn_b1: rand_tensor(rng, &[f], 0.1),
        ffn_w2: rand_tensor(rng, &[f, d], 1.0 / (f as f32).sqrt()),
        ffn_b2: rand_tensor(rng, &[d], 0.1),
        ffn_norm: rand_norm(rng, d),
        smooth: smooth.map(|k| SmoothWeights {
            conv1: rand_layer(rng, ConvSpec::conv(d, d, k)),
            norm1: rand_norm(rng, d),
            conv2: rand_layer(rng, ConvSpec::conv(d, d, k)),
            norm2: rand_norm(rng, d),
        }),
    }
}

fn naive_ln(x: &[f64], g: &Tensor, b: &Tensor) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + 1e-5).sqrt();
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mean) * inv * g.data()[i] as f64 + b.data()[i] as f64)
        .collect()
}

/// `x[t] · W` for row vectors, W stored `[in × out]`.
fn naive_vecmat(x: &[f64], w: &Tensor) -> Vec<f64> {
    let (rows, cols) = (w.dims()[0], w.dims()[1]);
    assert_eq!(rows, x.len());
    (0..cols)
        .map(|j| (0..rows).map(|i| x[i] * w.data()[i * cols + j] as f64).sum())
        .collect()
}

/// Whole-sequence attention stack written from the block equations in f64:
/// per head softmax over all frames, output projection plus residual, FFN
/// with post-residual norm, and an optional causal smooth layer.
pub fn naive_attention_stack(x: &Tensor, layers: &[AttentionLayerWeights], heads: usize) -> Tensor {
    let t = x.rows();
    let d = x.cols();
    let dh = d / heads;
    let mut cur: Vec<Vec<f64>> = (0..t).map(|i| x.row(i).iter().map(|&v| v as f64).collect()).collect();
    for w in layers {
        let q: Vec<Vec<f64>> = cur
            .iter()
            .map(|r| naive_vecmat(&naive_ln(r, &w.attn_norm.0, &w.attn_norm.1), &w.w_q))
            .collect();
        let k: Vec<Vec<f64>> = cur.iter().map(|r| naive_vecmat(r, &w.w_k)).collect();
        let v: Vec<Vec<f64>> = cur.iter().map(|r| naive_vecmat(r, &w.w_v)).collect();
        let mut next = Vec::with_capacity(t);
        for i in 0..t {
            let mut ctx = vec![0f64; d];
            for h in 0..heads {
                let r = h * dh..(h + 1) * dh;
                let scores: Vec<f64> = (0..t)
                    .map(|j| {
                        q[i][r.clone()]
                            .iter()
                            .zip(&k[j][r.clone()])
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / (dh as f64).sqrt()
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
                for j in 0..t {
                    let p = (scores[j] - max).exp() / z;
                    for c in r.clone() {
                        ctx[c] += p * v[j][c];
                    }
                }
            }
            let h: Vec<f64> = naive_vecmat(&ctx, &w.w_out)
                .iter()
                .zip(&cur[i])
                .map(|(a, b)| a + b)
                .collect();
            let mut hid = naive_vecmat(&h, &w.ffn_w1);
            for (a, b) in hid.iter_mut().zip(w.ffn_b1.data()) {
                *a = (*a + *b as f64).max(0.0);
            }
            let y: Vec<f64> = naive_vecmat(&hid, &w.ffn_w2)
                .iter()
                .enumerate()
                .map(|(c, a)| a + w.ffn_b2.data()[c] as f64 + h[c])
                .collect();
            next.push(naive_ln(&y, &w.ffn_norm.0, &w.ffn_norm.1));
        }
        if let Some(sw) = &w.smooth {
            next = naive_smooth(&next, sw);
        }
        cur = next;
    }
    let flat = cur.into_iter().flatten().map(|v| v as f32).collect();
    Tensor::new(vec![t, d], flat).unwrap()
}

fn naive_smooth(x: &[Vec<f64>], sw: &SmoothWeights) -> Vec<Vec<f64>> {
    let conv = |x: &[Vec<f64>], layer: &ConvLayer| -> Vec<Vec<f64>> {
        let xt = Tensor::new(
            vec![x.len(), x[0].len()],
            x.iter().flatten().map(|&v| v as f32).collect(),
        )
        .unwrap()
        .transpose();
        let y = naive_causal_conv(layer, &xt).transpose();
        (0..y.rows())
            .map(|i| y.row(i).iter().map(|&v| v as f64).collect())
            .collect()
    };
    let h: Vec<Vec<f64>> = conv(x, &sw.conv1)
        .iter()
        .map(|r| naive_ln(r, &sw.norm1.0, &sw.norm1.1))
        .collect();
    conv(&h, &sw.conv2)
        .iter()
        .map(|r| naive_ln(r, &sw.norm2.0, &sw.norm2.1))
        .collect()
}

/// Generator with the given config and uniformly drawn parameters.
pub fn rand_generator(rng: &mut ChaCha8Rng, cfg: &GeneratorConfig, natural: bool) -> Generator {
    let layers = cfg
        .layer_specs(natural)
        .into_iter()
        .map(|(_, spec)| rand_layer(rng, spec))
        .collect();
    Generator::new(cfg.clone(), natural, layers).unwrap()
}

/// Small generator layout for fast randomized trials.
pub fn small_generator_cfg(latent: usize, strides: &[usize]) -> GeneratorConfig {
    GeneratorConfig {
        resblock_kernels: vec![3, 5],
        resblock_dilations: vec![vec![1, 3], vec![1, 2]],
        base_channels: 16,
        pre_kernel: 5,
        post_kernel: 5,
        ..GeneratorConfig::for_strides(latent, strides)
    }
}

pub fn stream_generator(g: &Generator, z: &Tensor, chunks: &[usize]) -> Tensor {
    let mut st = g.init_state();
    let mut out = Vec::new();
    let mut at = 0;
    for (i, &n) in chunks.iter().enumerate() {
        let y = g.stream(&mut st, i, &z.slice_cols(at, at + n)).unwrap();
        assert_eq!(y.len(), n * g.hop());
        out.extend_from_slice(y.data());
        at += n;
    }
    Tensor::from_vec(out)
}
