use serde::Serialize;

use super::bundle::ModelBundle;
use super::synth::{synth, Mode, SynthOptions};
use crate::acoustic::ScoreSequence;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MachineInfo {
    pub os: String,
    pub arch: String,
    pub logical_cpus: usize,
    pub cpu_model: Option<String>,
}

impl MachineInfo {
    pub fn detect() -> Self {
        let cpu_model = std::fs::read_to_string("/proc/cpuinfo").ok().and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        });
        Self {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            logical_cpus: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            cpu_model,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchEntry {
    pub name: String,
    pub frames: usize,
    pub samples: usize,
    pub latency_s: f64,
    pub process_time_s: f64,
    pub rtf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub mode: Mode,
    pub repeats: usize,
    pub warmup: usize,
    pub machine: MachineInfo,
    /// Medians over the timed repeats, per score.
    pub entries: Vec<BenchEntry>,
}

/// Median of a non-empty sample; mean of the middle pair for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn bench(
    scores: &[(String, ScoreSequence)],
    bundle: &ModelBundle,
    opts: SynthOptions,
    repeats: usize,
    warmup: usize,
) -> Result<BenchReport> {
    let repeats = repeats.max(1);
    let mut entries = Vec::new();
    for (name, score) in scores {
        for _ in 0..warmup {
            synth(score, bundle, opts)?;
        }
        let (mut lat, mut proc, mut rtf) = (Vec::new(), Vec::new(), Vec::new());
        let mut samples = 0;
        for _ in 0..repeats {
            let out = synth(score, bundle, opts)?;
            lat.push(out.metrics.latency_s);
            proc.push(out.metrics.process_time_s);
            rtf.push(out.metrics.rtf);
            samples = out.waveform.len();
        }
        entries.push(BenchEntry {
            name: name.clone(),
            frames: score.total_frames(),
            samples,
            latency_s: median(&lat),
            process_time_s: median(&proc),
            rtf: median(&rtf),
        });
    }
    Ok(BenchReport {
        mode: opts.mode,
        repeats,
        warmup,
        machine: MachineInfo::detect(),
        entries,
    })
}
