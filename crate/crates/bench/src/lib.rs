//! Shared fixtures for the criterion benches.

use takunet_core::arch::{ArchConfig, Model};
use takunet_core::nn::ConvSpec;
use takunet_core::testutil::{gaussian, uniform};
use takunet_core::{Precision, Tensor};

/// A named convolution workload taken from the default network.
pub struct ConvCase {
    pub name: &'static str,
    pub spec: ConvSpec,
    pub hw: usize,
}

/// Stem, block depthwise and grouped pointwise shapes at 240x240 input.
pub fn conv_cases() -> Vec<ConvCase> {
    vec![
        ConvCase { name: "stem_3x3_s2", spec: ConvSpec::new(3, 40, 3).stride(2).padding(1), hw: 240 },
        ConvCase { name: "dw_3x3_c40", spec: ConvSpec::new(40, 40, 3).padding(1).groups(40), hw: 60 },
        ConvCase { name: "dw_3x3_s2_c160", spec: ConvSpec::new(160, 160, 3).stride(2).padding(1).groups(160), hw: 30 },
        ConvCase { name: "pw_grouped_240", spec: ConvSpec::new(480, 240, 1).groups(120), hw: 15 },
    ]
}

pub fn conv_inputs(case: &ConvCase, batch: usize, precision: Precision) -> (Tensor, Tensor) {
    let x = gaussian(&[batch, case.spec.in_channels, case.hw, case.hw], 1, precision);
    let fan_in: usize = case.spec.weight_shape()[1..].iter().product();
    let bound = 1.0 / (fan_in as f64).sqrt();
    let w = uniform(&case.spec.weight_shape(), -bound, bound, 2, precision);
    (x, w)
}

pub fn default_model(precision: Precision) -> Model {
    Model::new(&ArchConfig { precision, ..Default::default() }, 0).expect("default config builds")
}

pub fn image_batch(batch: usize, precision: Precision) -> Tensor {
    gaussian(&[batch, 3, 240, 240], 3, precision)
}
