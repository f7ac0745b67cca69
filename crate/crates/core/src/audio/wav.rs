//! RIFF/WAVE reading and writing.
//!
//! Reads PCM 16-bit, PCM 24-bit and IEEE float 32-bit (plain or
//! `WAVE_FORMAT_EXTENSIBLE`), averaging channels to mono. Unknown chunks are
//! skipped. Writes mono files in the same three encodings.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::AudioClip;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported codec: format tag {format_tag}, {bits} bits per sample")]
    UnsupportedCodec { format_tag: u16, bits: u16 },
    #[error("truncated data chunk: header declares {declared} bytes, file holds {available}")]
    TruncatedData { declared: usize, available: usize },
    #[error("missing {0} chunk")]
    MissingChunk(&'static str),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BitDepth {
    Pcm16,
    Pcm24,
    Float32,
}

impl BitDepth {
    pub fn bytes(self) -> usize {
        match self {
            BitDepth::Pcm16 => 2,
            BitDepth::Pcm24 => 3,
            BitDepth::Float32 => 4,
        }
    }

    fn format_tag(self) -> u16 {
        match self {
            BitDepth::Float32 => FORMAT_FLOAT,
            _ => FORMAT_PCM,
        }
    }
}

/// Header facts recovered while reading.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WavInfo {
    pub channels: u16,
    pub sample_rate: u32,
    pub bit_depth: BitDepth,
    /// Frames (samples per channel).
    pub frames: usize,
}

/// Outcome of [`write_wav`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WriteReport {
    pub clipped: usize,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, WavError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| WavError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_wav(&bytes).map(|(clip, _)| clip)
}

/// Reads only the header of a WAV file.
pub fn read_wav_info(path: impl AsRef<Path>) -> Result<WavInfo, WavError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| WavError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse(&bytes).map(|(info, _)| info)
}

pub fn decode_wav(bytes: &[u8]) -> Result<(AudioClip, WavInfo), WavError> {
    let (info, data) = parse(bytes)?;
    let ch = info.channels as usize;
    let width = info.bit_depth.bytes();
    let samples = data
        .chunks_exact(width * ch)
        .map(|frame| {
            let sum: f64 = frame
                .chunks_exact(width)
                .map(|s| decode_sample(s, info.bit_depth))
                .sum();
            sum / ch as f64
        })
        .collect();
    Ok((
        AudioClip {
            samples,
            sample_rate: info.sample_rate,
        },
        info,
    ))
}

fn decode_sample(s: &[u8], depth: BitDepth) -> f64 {
    match depth {
        BitDepth::Pcm16 => i16::from_le_bytes([s[0], s[1]]) as f64 / 32768.0,
        BitDepth::Pcm24 => {
            // sign-extend through the top byte of an i32
            let v = i32::from_le_bytes([0, s[0], s[1], s[2]]) >> 8;
            v as f64 / 8_388_608.0
        }
        BitDepth::Float32 => f32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64,
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse(bytes: &[u8]) -> Result<(WavInfo, &[u8]), WavError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(WavError::MalformedHeader("missing RIFF/WAVE signature".into()));
    }
    let mut fmt: Option<(u16, u16, u32, u16, u16)> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        if id == b"fmt " {
            if size < 16 || body + size > bytes.len() {
                return Err(WavError::MalformedHeader(format!("fmt chunk of {size} bytes")));
            }
            let mut tag = u16_at(bytes, body);
            let channels = u16_at(bytes, body + 2);
            let rate = u32_at(bytes, body + 4);
            let block_align = u16_at(bytes, body + 12);
            let bits = u16_at(bytes, body + 14);
            if tag == FORMAT_EXTENSIBLE {
                if size < 40 {
                    return Err(WavError::MalformedHeader(
                        "extensible fmt chunk shorter than 40 bytes".into(),
                    ));
                }
                // first two bytes of the sub-format GUID carry the real tag
                tag = u16_at(bytes, body + 24);
            }
            fmt = Some((tag, channels, rate, block_align, bits));
        } else if id == b"data" {
            let (tag, channels, rate, block_align, bits) =
                fmt.ok_or(WavError::MissingChunk("fmt"))?;
            let depth = match (tag, bits) {
                (FORMAT_PCM, 16) => BitDepth::Pcm16,
                (FORMAT_PCM, 24) => BitDepth::Pcm24,
                (FORMAT_FLOAT, 32) => BitDepth::Float32,
                _ => return Err(WavError::UnsupportedCodec { format_tag: tag, bits }),
            };
            if channels == 0 {
                return Err(WavError::MalformedHeader("zero channels".into()));
            }
            if rate == 0 {
                return Err(WavError::MalformedHeader("zero sample rate".into()));
            }
            let frame_bytes = depth.bytes() * channels as usize;
            if block_align as usize != frame_bytes {
                return Err(WavError::MalformedHeader(format!(
                    "block align {block_align} does not match {channels} channel(s) of {bits}-bit samples"
                )));
            }
            let available = bytes.len() - body;
            if size > available {
                return Err(WavError::TruncatedData {
                    declared: size,
                    available,
                });
            }
            let data = &bytes[body..body + size - size % frame_bytes];
            let info = WavInfo {
                channels,
                sample_rate: rate,
                bit_depth: depth,
                frames: data.len() / frame_bytes,
            };
            return Ok((info, data));
        }
        // chunks are word aligned
        pos = body + size + (size & 1);
    }
    Err(WavError::MissingChunk(if fmt.is_some() { "data" } else { "fmt" }))
}

/// Encodes a mono clip. Samples outside `[-1, 1]` are clamped and counted.
pub fn encode_wav(clip: &AudioClip, depth: BitDepth) -> (Vec<u8>, WriteReport) {
    let width = depth.bytes();
    let data_len = clip.samples.len() * width;
    let mut out = Vec::with_capacity(44 + data_len + 1);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len + (data_len & 1)) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&depth.format_tag().to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * width as u32).to_le_bytes());
    out.extend_from_slice(&(width as u16).to_le_bytes());
    out.extend_from_slice(&((width * 8) as u16).to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());

    let mut report = WriteReport::default();
    for &s in &clip.samples {
        let v = if s > 1.0 || s < -1.0 || s.is_nan() {
            report.clipped += 1;
            if s.is_nan() {
                0.0
            } else {
                s.clamp(-1.0, 1.0)
            }
        } else {
            s
        };
        match depth {
            BitDepth::Pcm16 => {
                let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
            BitDepth::Pcm24 => {
                let q = (v * 8_388_608.0).round().clamp(-8_388_608.0, 8_388_607.0) as i32;
                out.extend_from_slice(&q.to_le_bytes()[..3]);
            }
            BitDepth::Float32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
    if data_len & 1 == 1 {
        out.push(0);
    }
    (out, report)
}

pub fn write_wav(
    clip: &AudioClip,
    path: impl AsRef<Path>,
    depth: BitDepth,
) -> Result<WriteReport, WavError> {
    let path = path.as_ref();
    let (bytes, report) = encode_wav(clip, depth);
    fs::write(path, bytes).map_err(|source| WavError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(report)
}
