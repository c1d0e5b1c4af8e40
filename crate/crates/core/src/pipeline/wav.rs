//! 16-bit mono PCM WAV files.

use std::path::Path;

use crate::error::{Error, Result};

/// Scales by 32767, rounds half to even and saturates.
pub fn quantize(v: f32) -> i16 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(-1.0, 1.0) * 32767.0).round_ties_even() as i16
}

pub fn encode_wav(samples: &[f32], sample_rate: u32) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + samples.len() * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    std::fs::write(path, encode_wav(samples, sample_rate))?;
    Ok(())
}

fn bad(msg: &str) -> Error {
    Error::Format(format!("wav: {msg}"))
}

/// Decodes 16-bit mono PCM into `(sample_rate, samples / 32767)`.
pub fn decode_wav(buf: &[u8]) -> Result<(u32, Vec<f32>)> {
    if buf.len() < 12 || &buf[..4] != b"RIFF" || &buf[8..12] != b"WAVE" {
        return Err(bad("not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut rate = None;
    while pos + 8 <= buf.len() {
        let id = &buf[pos..pos + 4];
        let len = u32::from_le_bytes(buf[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body = buf.get(pos + 8..pos + 8 + len).ok_or_else(|| bad("truncated chunk"))?;
        match id {
            b"fmt " => {
                if len < 16 {
                    return Err(bad("short fmt chunk"));
                }
                let u16_at = |i: usize| u16::from_le_bytes(body[i..i + 2].try_into().unwrap());
                if u16_at(0) != 1 || u16_at(2) != 1 || u16_at(14) != 16 {
                    return Err(bad("only 16-bit mono PCM is supported"));
                }
                rate = Some(u32::from_le_bytes(body[4..8].try_into().unwrap()));
            }
            b"data" => {
                let rate = rate.ok_or_else(|| bad("data chunk before fmt chunk"))?;
                if !len.is_multiple_of(2) {
                    return Err(bad("odd data length"));
                }
                let samples = body
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32767.0)
                    .collect();
                return Ok((rate, samples));
            }
            _ => {}
        }
        pos += 8 + len + (len & 1);
    }
    Err(bad("no data chunk"))
}

pub fn read_wav(path: &Path) -> Result<(u32, Vec<f32>)> {
    decode_wav(&std::fs::read(path)?)
}
