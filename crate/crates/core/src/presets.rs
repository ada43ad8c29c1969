//! Named hardware and budget presets.

use crate::wireless::ClientProfile;

#[derive(Debug, Clone, PartialEq)]
pub struct HardwarePreset {
    pub name: &'static str,
    pub gradient_bits: f64,
    pub flops_per_sample: f64,
    pub uplink_bandwidth: f64,
    pub downlink_bandwidth: f64,
    pub noise_psd: f64,
    pub lambda_max: f64,
    pub f_max: f64,
    pub p_max: f64,
    pub flops_per_cycle: f64,
    pub pue: f64,
    /// Cycled over clients when there are more clients than entries.
    pub switch_caps: Vec<f64>,
    pub server_power: f64,
    pub path_loss: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub energy_budget: f64,
    pub delay_budget: f64,
}

const SWITCH_CAPS: [f64; 10] = [0.88, 0.84, 1.41, 1.33, 0.94, 1.37, 1.8, 1.01, 0.26, 0.96];

pub const PRESET_NAMES: [&str; 2] = ["mnist-lenet", "cifar-resnet"];

pub fn preset(name: &str) -> Option<HardwarePreset> {
    match name {
        "mnist-lenet" => Some(HardwarePreset {
            name: "mnist-lenet",
            gradient_bits: 1.42e6,
            flops_per_sample: 1.8e6,
            uplink_bandwidth: 1e5,
            downlink_bandwidth: 1e5,
            noise_psd: 3.98e-21,
            lambda_max: 0.5,
            f_max: 5e8,
            p_max: 0.5,
            flops_per_cycle: 4.0,
            pue: 1.0,
            switch_caps: SWITCH_CAPS.iter().map(|v| v * 1e-27).collect(),
            server_power: 0.5,
            path_loss: 1e-5,
            batch_size: 32,
            learning_rate: 0.01,
            energy_budget: 250.0,
            delay_budget: 150.0,
        }),
        "cifar-resnet" => Some(HardwarePreset {
            name: "cifar-resnet",
            gradient_bits: 21.07e6,
            flops_per_sample: 0.59e9,
            uplink_bandwidth: 2e6,
            downlink_bandwidth: 2e6,
            noise_psd: 3.98e-21,
            lambda_max: 0.7,
            f_max: 2e9,
            p_max: 0.5,
            flops_per_cycle: 8.0,
            pue: 1.0,
            switch_caps: SWITCH_CAPS.iter().map(|v| v * 1e-28).collect(),
            server_power: 0.5,
            path_loss: 1e-5,
            batch_size: 32,
            learning_rate: 0.01,
            energy_budget: 7100.0,
            delay_budget: 3600.0,
        }),
        _ => None,
    }
}

impl HardwarePreset {
    pub fn profiles(&self, num_clients: usize) -> Vec<ClientProfile> {
        (0..num_clients)
            .map(|id| ClientProfile {
                id,
                uplink_bandwidth: self.uplink_bandwidth,
                gradient_bits: self.gradient_bits,
                flops_per_sample: self.flops_per_sample,
                flops_per_cycle: self.flops_per_cycle,
                pue: self.pue,
                switch_cap: self.switch_caps[id % self.switch_caps.len()],
                f_max: self.f_max,
                p_max: self.p_max,
                batch_size: self.batch_size,
            })
            .collect()
    }
}
