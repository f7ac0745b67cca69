use std::time::Duration;

use proptest::prelude::*;
use springverb::audio::{AudioClip, SamplePair, Split};
use springverb::gradcheck::random_tensor;
use springverb::losses::{mrstft_value, MrstftConfig};
use springverb::metrics::{
    dummy_prediction, dummy_regressor, esr, measure_rtf, model_rtf, mrstft_metric, naive_baseline, EvalReport,
    MetricRow,
};
use springverb::models::{Model, ModelConfig, ModelKind};
use springverb::par::Parallelism;
use springverb::Error;

const SR: u32 = 16_000;

fn pair(name: &str, dry: Vec<f64>, wet: Vec<f64>) -> SamplePair {
    SamplePair::new(name, AudioClip::new(dry, SR), AudioClip::new(wet, SR), vec![0.0, 0.0], Split::Test).unwrap()
}

fn sine(len: usize, freq: f64, amp: f64) -> Vec<f64> {
    (0..len).map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / SR as f64).sin()).collect()
}

#[test]
fn esr_examples() {
    let y = [0.3, -0.5, 0.9];
    assert_eq!(esr(&y, &y).unwrap(), 0.0);
    assert_eq!(esr(&[0.0; 3], &y).unwrap(), 1.0);
    assert!((esr(&[2.0, 1.0], &[1.0, 2.0]).unwrap() - 0.4).abs() < 1e-15);
    let err = esr(&[1.0, 2.0], &[0.0, 0.0]).unwrap_err();
    assert!(matches!(err, Error::SilentTarget));
    assert_eq!(err.to_string(), "ESR undefined for silent target");
    assert!(esr(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn mrstft_metric_shares_the_loss_implementation() {
    let p = random_tensor(&[5000], 0.5, 1).into_vec();
    let t = random_tensor(&[5000], 0.5, 2).into_vec();
    assert_eq!(mrstft_metric(&p, &p).unwrap(), 0.0);
    assert_eq!(
        mrstft_metric(&p, &t).unwrap().to_bits(),
        mrstft_value(&p, &t, &MrstftConfig::default()).unwrap().to_bits()
    );
}

#[test]
fn noise_against_silence_exceeds_one() {
    // spectral convergence alone contributes exactly 1
    let noise = dummy_prediction(SR as usize, 3, 0);
    let m = mrstft_metric(&vec![0.0; SR as usize], &noise).unwrap();
    assert!(m > 1.0, "{m}");
}

#[test]
fn naive_baseline_on_identical_pairs_is_zero() {
    let x = sine(4096, 440.0, 0.5);
    let pairs = [pair("a", x.clone(), x.clone()), pair("b", x.clone(), x)];
    let refs: Vec<&SamplePair> = pairs.iter().collect();
    let row = naive_baseline(&refs, Parallelism::Parallel).unwrap();
    assert_eq!((row.esr, row.mrstft, row.rtf), (0.0, 0.0, None));
    assert!(naive_baseline(&[], Parallelism::Sequential).is_err());
}

#[test]
fn naive_baseline_averages_per_item() {
    let dry = sine(4096, 300.0, 0.5);
    let pairs = [
        pair("a", dry.clone(), dry.iter().map(|v| 2.0 * v).collect()),
        pair("b", vec![0.0; 4096], dry.clone()),
    ];
    let refs: Vec<&SamplePair> = pairs.iter().collect();
    let row = naive_baseline(&refs, Parallelism::Sequential).unwrap();
    // item a: (y/2 − y)² / y² = 1/4; item b: 1
    assert!((row.esr - 0.625).abs() < 1e-12);
}

#[test]
fn dummy_regressor_degenerate_control() {
    let noise = dummy_prediction(4096, 11, 0);
    let pairs = [pair("a", vec![0.0; 4096], noise)];
    let refs: Vec<&SamplePair> = pairs.iter().collect();
    assert_eq!(dummy_regressor(&refs, 11, Parallelism::Sequential).unwrap().esr, 0.0);
}

#[test]
fn dummy_regressor_matches_expectation() {
    // E[ESR] = (r² + 1/3) / r² for independent uniform noise of variance 1/3
    let amp = 0.4;
    let r2 = amp * amp / 2.0;
    let pairs: Vec<SamplePair> = (0..8)
        .map(|i| pair(&format!("p{i}"), vec![0.0; 16_000], sine(16_000, 200.0 + 37.0 * i as f64, amp)))
        .collect();
    let refs: Vec<&SamplePair> = pairs.iter().collect();
    let row = dummy_regressor(&refs, 5, Parallelism::Parallel).unwrap();
    let want = 1.0 + 1.0 / (3.0 * r2);
    assert!((row.esr - want).abs() < 0.05 * want, "{} vs {want}", row.esr);
    let again = dummy_regressor(&refs, 5, Parallelism::Sequential).unwrap();
    assert_eq!(row, again);
}

#[test]
fn rtf_follows_its_definition() {
    let r = measure_rtf(0.2, 3, || {
        std::thread::sleep(Duration::from_millis(20));
        Ok(vec![1.0])
    })
    .unwrap();
    assert!(r.median >= 0.1 && r.median < 0.2, "{}", r.median);
    assert!(r.real_time_capable());
    assert_eq!(r.runs.len(), 3);
    assert!(measure_rtf(1.0, 2, || Ok(vec![])).is_err());
}

#[test]
fn passthrough_is_far_below_real_time() {
    let x = dummy_prediction(10 * SR as usize, 1, 0);
    let r = measure_rtf(10.0, 5, || Ok(x.clone())).unwrap();
    assert!(r.median < 0.01, "{}", r.median);
}

#[test]
fn rtf_rejects_unstable_outputs() {
    let mut k = 0.0;
    let r = measure_rtf(1.0, 3, || {
        k += 1.0;
        Ok(vec![k])
    });
    assert!(r.is_err());
}

#[test]
fn wider_tcn_is_not_faster() {
    let narrow = Model::build(
        ModelConfig {
            channels: 16,
            ..ModelConfig::default_for(ModelKind::Tcn)
        },
        1,
    )
    .unwrap();
    let wide = Model::build(
        ModelConfig {
            channels: 32,
            ..ModelConfig::default_for(ModelKind::Tcn)
        },
        1,
    )
    .unwrap();
    let a = model_rtf(&narrow, 0.25, 3, 0).unwrap();
    let b = model_rtf(&wide, 0.25, 3, 0).unwrap();
    assert!(b.median >= a.median, "{} < {}", b.median, a.median);
    assert_eq!(a.output_digest, model_rtf(&narrow, 0.25, 3, 0).unwrap().output_digest);
}

#[test]
fn report_formats() {
    let report = EvalReport {
        rows: vec![
            MetricRow {
                name: "NB".into(),
                esr: 1.4,
                mrstft: 2.5,
                rtf: None,
            },
            MetricRow {
                name: "GCN".into(),
                esr: 0.2,
                mrstft: 1.1,
                rtf: Some(0.05),
            },
        ],
        items: 2,
        hardware: "test".into(),
        seed: 7,
    };
    let table = report.to_table();
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].starts_with("Model"));
    assert!(lines[1].trim_end().ends_with('-'));
    assert!(lines[2].contains("0.0500"));
    let back: EvalReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert_eq!(back, report);
}

proptest! {
    #[test]
    fn esr_is_scale_invariant(seed in 0u64..1000, a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0]) {
        let y = random_tensor(&[64], 1.0, seed).into_vec();
        let e = random_tensor(&[64], 0.3, seed + 1).into_vec();
        let pred: Vec<f64> = y.iter().zip(&e).map(|(y, e)| y + e).collect();
        let base = esr(&pred, &y).unwrap();
        let sp: Vec<f64> = pred.iter().map(|v| a * v).collect();
        let sy: Vec<f64> = y.iter().map(|v| a * v).collect();
        prop_assert!((esr(&sp, &sy).unwrap() - base).abs() <= 1e-12 * base);
        prop_assert!(base >= 0.0);
    }
}
