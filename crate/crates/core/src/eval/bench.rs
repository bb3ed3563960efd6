use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::arch::{Mode, Model};
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::testutil::gaussian;
use crate::tensor::Precision;

/// Fewest timed iterations a latency report accepts.
pub const MIN_TIMED_ITERS: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub device: String,
    pub warmup_iters: usize,
    pub timed_iters: usize,
    pub samples_ms: Vec<f64>,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    /// `1000 / mean_ms`.
    pub fps: f64,
    pub batch: usize,
    pub input: (usize, usize),
}

impl LatencyReport {
    /// Summary statistics of `samples_ms`; p95 is the nearest-rank percentile.
    pub fn from_samples(device: &str, warmup_iters: usize, samples_ms: Vec<f64>, input: (usize, usize)) -> Result<Self> {
        if samples_ms.len() < MIN_TIMED_ITERS {
            return Err(Error::Invalid(format!(
                "latency needs at least {MIN_TIMED_ITERS} timed iterations, got {}",
                samples_ms.len()
            )));
        }
        let n = samples_ms.len();
        let mean_ms = samples_ms.iter().sum::<f64>() / n as f64;
        let mut sorted = samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let median_ms = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
        let p95_ms = sorted[(0.95 * n as f64).ceil() as usize - 1];
        Ok(LatencyReport {
            device: device.to_string(),
            warmup_iters,
            timed_iters: n,
            samples_ms,
            mean_ms,
            median_ms,
            p95_ms,
            fps: 1000.0 / mean_ms,
            batch: 1,
            input,
        })
    }
}

/// Label of the timing host, e.g. `cpu-x86_64-linux`.
pub fn host_device() -> String {
    format!("cpu-{}-{}", std::env::consts::ARCH, std::env::consts::OS)
}

/// Batch-1 eval-mode forward latency on the calling thread.
///
/// The input is a fixed unit-Gaussian image at the model's input size.
pub fn bench_model(model: &mut Model, warmup: usize, iters: usize) -> Result<LatencyReport> {
    if iters < MIN_TIMED_ITERS {
        return Err(Error::Invalid(format!("bench_model needs iters >= {MIN_TIMED_ITERS}, got {iters}")));
    }
    let (h, w) = model.config().input_size;
    let x = gaussian(&[1, 3, h, w], 0, model.precision());
    for _ in 0..warmup {
        black_box(model.forward(&x, Mode::Eval)?);
    }
    let mut samples = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t = Instant::now();
        black_box(model.forward(black_box(&x), Mode::Eval)?);
        samples.push(t.elapsed().as_secs_f64() * 1e3);
    }
    LatencyReport::from_samples(&host_device(), warmup, samples, (h, w))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationTiming {
    pub activation: String,
    pub iters: usize,
    pub total_ms: f64,
    pub per_iter_ms: f64,
}

/// Times each benchmarked activation over a unit-Gaussian `(rows, cols)` f32
/// tensor, `iters` applications each, and returns them fastest first.
///
/// Every activation must map zero to zero before anything is timed.
/// `exact_gelu` swaps the tanh GELU for the erf form.
pub fn bench_activations(shape: (usize, usize), iters: usize, exact_gelu: bool) -> Result<Vec<ActivationTiming>> {
    if iters == 0 {
        return Err(Error::Invalid("bench_activations needs iters >= 1".into()));
    }
    let acts: Vec<Activation> = Activation::BENCHMARKED
        .iter()
        .map(|&a| if exact_gelu && a == Activation::Gelu { Activation::GeluErf } else { a })
        .collect();
    let zeros = vec![0f32; 64];
    let mut probe = vec![1f32; 64];
    for &a in &acts {
        a.apply(&zeros, &mut probe);
        if probe.iter().any(|&v| v != 0.0) {
            return Err(Error::Invalid(format!("{a} does not map 0 to 0")));
        }
    }
    let x = gaussian(&[shape.0, shape.1], 1, Precision::F32).to_f32_vec();
    let mut out = vec![0f32; x.len()];
    let mut rows: Vec<ActivationTiming> = acts
        .iter()
        .map(|&a| {
            a.apply(&x, &mut out);
            let t = Instant::now();
            for _ in 0..iters {
                a.apply(black_box(&x), &mut out);
                black_box(&mut out);
            }
            let total_ms = t.elapsed().as_secs_f64() * 1e3;
            ActivationTiming { activation: a.name().to_string(), iters, total_ms, per_iter_ms: total_ms / iters as f64 }
        })
        .collect();
    rows.sort_by(|a, b| a.total_ms.total_cmp(&b.total_ms));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let s: Vec<f64> = (1..=40).map(f64::from).collect();
        let r = LatencyReport::from_samples("t", 2, s, (8, 8)).unwrap();
        assert_eq!(r.mean_ms, 20.5);
        assert_eq!(r.median_ms, 20.5);
        assert_eq!(r.p95_ms, 38.0);
        assert!((r.fps - 1000.0 / 20.5).abs() < 1e-9);
        assert!(LatencyReport::from_samples("t", 0, vec![1.0; 29], (8, 8)).is_err());
    }

    #[test]
    fn activation_table_is_sorted_and_complete() {
        let rows = bench_activations((100, 10), 2, false).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows.windows(2).all(|w| w[0].total_ms <= w[1].total_ms));
        let erf = bench_activations((10, 10), 1, true).unwrap();
        assert!(erf.iter().any(|r| r.activation == "GELU-erf"));
    }
}
