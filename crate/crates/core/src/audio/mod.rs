//! Audio clips, WAV files, dataset manifests and training segments.

mod batch;
mod manifest;
pub mod wav;

pub use batch::{batch_segments, segment_index, Batch, SegmentBatches, SegmentRef};
pub use manifest::{
    build_manifest, split_sizes, CondSource, Dataset, DatasetManifest, ManifestEntry, SamplePair,
    Split, DEFAULT_COND_DIM, MANIFEST_VERSION,
};
pub use wav::{read_wav, write_wav, BitDepth, WavError};

/// Mono audio at a fixed sample rate, nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Default segment length for a pipeline rate: a full 2 s clip at 16 kHz,
/// 2.5 s at 48 kHz.
pub fn default_segment_len(sample_rate: u32) -> usize {
    match sample_rate {
        16_000 => 32_000,
        48_000 => 120_000,
        sr => (sr as f64 * 2.5) as usize,
    }
}
