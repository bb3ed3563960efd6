use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bench::LatencyReport;
use super::evaluate::MetricsReport;
use crate::arch::{Analysis, ArchConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub params: usize,
    pub flops: u64,
    /// Raw parameter payload at the configured precision.
    pub size_bytes: usize,
    pub config: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSection {
    pub confusion: Vec<Vec<u64>>,
    pub f1_per_class: Vec<f64>,
    pub f1_macro: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencySection {
    pub device: String,
    pub batch: usize,
    pub input: [usize; 2],
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub fps: f64,
}

/// Consolidated document; sections that were not measured are `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub model: ModelSection,
    pub metrics: Option<MetricsSection>,
    pub latency: Option<LatencySection>,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain struct serializes");
        s.push('\n');
        s
    }
}

pub fn report(cfg: &ArchConfig, analysis: &Analysis, metrics: Option<&MetricsReport>, latency: Option<&LatencyReport>) -> Report {
    let params = analysis.total_params();
    Report {
        model: ModelSection {
            params,
            flops: analysis.total_flops(),
            size_bytes: params * cfg.precision.size_bytes(),
            config: cfg.to_pairs().into_iter().collect(),
        },
        metrics: metrics.map(|m| MetricsSection {
            confusion: m.confusion.rows(),
            f1_per_class: m.f1.per_class.clone(),
            f1_macro: m.f1.macro_f1,
        }),
        latency: latency.map(|l| LatencySection {
            device: l.device.clone(),
            batch: l.batch,
            input: [l.input.0, l.input.1],
            mean_ms: l.mean_ms,
            median_ms: l.median_ms,
            p95_ms: l.p95_ms,
            fps: l.fps,
        }),
    }
}
