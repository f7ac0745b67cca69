//! Dataset characterisation: equivalent sound level, YIN pitch and
//! high-frequency content.

use serde::{Deserialize, Serialize};

use crate::audio::SamplePair;
use crate::dsp::{fft_in_place, stft_magnitude_values, Complex64, StftConfig};
use crate::error::{Error, Result};
use crate::par::{map_slice, Parallelism};

/// Added to the mean square before taking the logarithm.
pub const LEQ_FLOOR: f64 = 1e-12;

/// Energy-mean level `10·log10(mean(x²) + 1e-12)` in dB relative to full
/// scale.
pub fn leq(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::EmptyReduction(vec![0]));
    }
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    Ok(10.0 * (ms + LEQ_FLOOR).log10())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct YinConfig {
    pub frame: usize,
    pub hop: usize,
    pub threshold: f64,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for YinConfig {
    fn default() -> Self {
        Self {
            frame: 2048,
            hop: 512,
            threshold: 0.1,
            fmin: 40.0,
            fmax: 2000.0,
        }
    }
}

/// Frames whose normalised difference at the chosen lag reaches this value
/// are unvoiced.
pub const YIN_VOICING_LIMIT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PitchEstimate {
    /// Mean over voiced frames; `None` when no frame was voiced.
    pub mean_hz: Option<f64>,
    pub voiced_frames: usize,
    pub frames: usize,
}

/// YIN fundamental-frequency estimate averaged over voiced frames.
///
/// A clip shorter than one frame yields no frames and no pitch.
pub fn yin_pitch(x: &[f64], sample_rate: u32, cfg: &YinConfig) -> Result<PitchEstimate> {
    if !cfg.frame.is_power_of_two() || cfg.frame < 4 || cfg.hop == 0 {
        return Err(Error::invalid("YIN frame must be a power of two >= 4 and hop >= 1"));
    }
    if !(cfg.fmin > 0.0 && cfg.fmax > cfg.fmin) || !(cfg.threshold > 0.0) {
        return Err(Error::invalid("YIN needs 0 < fmin < fmax and threshold > 0"));
    }
    let fs = sample_rate as f64;
    let w = cfg.frame / 2;
    let tau_min = ((fs / cfg.fmax).floor() as usize).max(2);
    let tau_max = ((fs / cfg.fmin).ceil() as usize).min(w - 1);
    if tau_min + 1 >= tau_max {
        return Err(Error::invalid(format!(
            "YIN lag range empty at {sample_rate} Hz for {}..{} Hz",
            cfg.fmin, cfg.fmax
        )));
    }
    let mut frames = 0;
    let mut voiced = Vec::new();
    let mut start = 0;
    while start + cfg.frame <= x.len() {
        frames += 1;
        let frame = &x[start..start + cfg.frame];
        let d = difference(frame, w, tau_max)?;
        let dn = cumulative_mean_normalised(&d);
        if let Some(tau) = pick_lag(&dn, tau_min, tau_max, cfg.threshold) {
            if dn[tau] < YIN_VOICING_LIMIT {
                voiced.push(fs / parabolic(&dn, tau));
            }
        }
        start += cfg.hop;
    }
    Ok(PitchEstimate {
        mean_hz: (!voiced.is_empty()).then(|| voiced.iter().sum::<f64>() / voiced.len() as f64),
        voiced_frames: voiced.len(),
        frames,
    })
}

/// `d(τ) = Σ_{j<w} (x_j − x_{j+τ})²` for `τ ∈ 0..=tau_max`, with the cross
/// term computed by FFT correlation.
fn difference(frame: &[f64], w: usize, tau_max: usize) -> Result<Vec<f64>> {
    let n = 2 * frame.len();
    let zero = Complex64::new(0.0, 0.0);
    let mut full = vec![zero; n];
    let mut head = vec![zero; n];
    for (i, &v) in frame.iter().enumerate() {
        full[i] = Complex64::new(v, 0.0);
    }
    for (i, &v) in frame[..w].iter().enumerate() {
        head[i] = Complex64::new(v, 0.0);
    }
    fft_in_place(&mut full, false)?;
    fft_in_place(&mut head, false)?;
    let mut cross: Vec<Complex64> = full.iter().zip(&head).map(|(f, h)| f * h.conj()).collect();
    fft_in_place(&mut cross, true)?;

    let sq: Vec<f64> = frame.iter().map(|v| v * v).collect();
    let e0: f64 = sq[..w].iter().sum();
    let mut et = e0;
    let mut d = Vec::with_capacity(tau_max + 1);
    for tau in 0..=tau_max {
        if tau > 0 {
            et += sq[tau + w - 1] - sq[tau - 1];
        }
        d.push((e0 + et - 2.0 * cross[tau].re).max(0.0));
    }
    d[0] = 0.0;
    Ok(d)
}

fn cumulative_mean_normalised(d: &[f64]) -> Vec<f64> {
    let mut out = vec![1.0; d.len()];
    let mut running = 0.0;
    for tau in 1..d.len() {
        running += d[tau];
        out[tau] = if running > 0.0 {
            d[tau] * tau as f64 / running
        } else {
            1.0
        };
    }
    out
}

/// First dip below `threshold` (followed to its local minimum), else the
/// global minimum over the lag range.
fn pick_lag(dn: &[f64], lo: usize, hi: usize, threshold: f64) -> Option<usize> {
    let mut tau = lo;
    while tau <= hi {
        if dn[tau] < threshold {
            while tau < hi && dn[tau + 1] < dn[tau] {
                tau += 1;
            }
            return Some(tau);
        }
        tau += 1;
    }
    (lo..=hi).min_by(|&a, &b| dn[a].total_cmp(&dn[b]))
}

fn parabolic(y: &[f64], tau: usize) -> f64 {
    if tau == 0 || tau + 1 >= y.len() {
        return tau as f64;
    }
    let (a, b, c) = (y[tau - 1], y[tau], y[tau + 1]);
    let den = a - 2.0 * b + c;
    if den.abs() < f64::EPSILON {
        return tau as f64;
    }
    tau as f64 + 0.5 * (a - c) / den
}

/// Mean over Hann-windowed frames of `Σ_k k·|X_k|²`. Clips shorter than one
/// frame are zero-padded to a single frame.
pub fn hfc(x: &[f64], frame: usize, hop: usize) -> Result<f64> {
    let cfg = StftConfig::new(frame, hop, frame)?;
    let padded;
    let x = if x.len() < frame {
        padded = {
            let mut v = x.to_vec();
            v.resize(frame, 0.0);
            v
        };
        &padded
    } else {
        x
    };
    let mag = stft_magnitude_values(x, &cfg)?;
    let (frames, bins) = (mag.shape()[0], mag.shape()[1]);
    let total: f64 = mag
        .data()
        .chunks_exact(bins)
        .map(|row| row.iter().enumerate().map(|(k, m)| k as f64 * m * m).sum::<f64>())
        .sum();
    Ok(total / frames as f64)
}

pub const HFC_FRAME: usize = 1024;
pub const HFC_HOP: usize = 512;

/// The three descriptors of one clip.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub leq_db: f64,
    pub pitch_hz: Option<f64>,
    pub hfc: f64,
}

pub fn analyze(x: &[f64], sample_rate: u32) -> Result<FeatureRow> {
    Ok(FeatureRow {
        leq_db: leq(x)?,
        pitch_hz: yin_pitch(x, sample_rate, &YinConfig::default())?.mean_hz,
        hfc: hfc(x, HFC_FRAME, HFC_HOP)?,
    })
}

/// Mean dry and wet descriptors over a set of pairs. Pitch is averaged over
/// the clips that have one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetFeatures {
    pub items: usize,
    pub dry: FeatureRow,
    pub wet: FeatureRow,
}

pub fn analyze_pairs(pairs: &[&SamplePair], parallelism: Parallelism) -> Result<DatasetFeatures> {
    if pairs.is_empty() {
        return Err(Error::EmptySplit("no pairs to analyse".into()));
    }
    let rows = map_slice(pairs, parallelism, |p| -> Result<(FeatureRow, FeatureRow)> {
        Ok((
            analyze(&p.dry.samples, p.dry.sample_rate)?,
            analyze(&p.wet.samples, p.wet.sample_rate)?,
        ))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(DatasetFeatures {
        items: rows.len(),
        dry: mean_row(rows.iter().map(|r| &r.0)),
        wet: mean_row(rows.iter().map(|r| &r.1)),
    })
}

fn mean_row<'a>(rows: impl Iterator<Item = &'a FeatureRow>) -> FeatureRow {
    let rows: Vec<&FeatureRow> = rows.collect();
    let n = rows.len() as f64;
    let pitches: Vec<f64> = rows.iter().filter_map(|r| r.pitch_hz).collect();
    FeatureRow {
        leq_db: rows.iter().map(|r| r.leq_db).sum::<f64>() / n,
        pitch_hz: (!pitches.is_empty()).then(|| pitches.iter().sum::<f64>() / pitches.len() as f64),
        hfc: rows.iter().map(|r| r.hfc).sum::<f64>() / n,
    }
}

impl DatasetFeatures {
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<6} {:>10} {:>10} {:>12}\n", "", "LEQ (dB)", "Pitch (Hz)", "HFC");
        for (label, r) in [("dry", &self.dry), ("wet", &self.wet)] {
            let pitch = r.pitch_hz.map_or_else(|| "-".to_string(), |p| format!("{p:.1}"));
            s.push_str(&format!("{label:<6} {:>10.2} {pitch:>10} {:>12.4}\n", r.leq_db, r.hfc));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("signal,leq_db,pitch_hz,hfc\n");
        for (label, r) in [("dry", &self.dry), ("wet", &self.wet)] {
            let pitch = r.pitch_hz.map_or_else(String::new, |p| p.to_string());
            s.push_str(&format!("{label},{},{pitch},{}\n", r.leq_db, r.hfc));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn difference_matches_direct_sum() {
        let x: Vec<f64> = (0..64).map(|i| ((i * 13 % 7) as f64 - 3.0) * 0.1).collect();
        let d = difference(&x, 32, 20).unwrap();
        for tau in 1..=20 {
            let direct: f64 = (0..32).map(|j| (x[j] - x[j + tau]).powi(2)).sum();
            assert!((d[tau] - direct).abs() < 1e-10, "tau {tau}");
        }
    }

    #[test]
    fn parabola_vertex_is_exact_for_quadratics() {
        let y: Vec<f64> = (0..6).map(|i| (i as f64 - 2.3).powi(2)).collect();
        assert!((parabolic(&y, 2) - 2.3).abs() < 1e-12);
    }
}
