//! Rayleigh block-fading channels and FDMA uplink / multicast downlink rates.

use rand_distr::{Distribution, Exp1};

use crate::rng::rng_from;

/// Static per-client hardware and communication parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientProfile {
    pub id: usize,
    /// Uplink bandwidth, Hz.
    pub uplink_bandwidth: f64,
    /// Size of the unpruned gradient, bits.
    pub gradient_bits: f64,
    /// FLOPs for the full gradient of one sample.
    pub flops_per_sample: f64,
    pub flops_per_cycle: f64,
    /// Power usage effectiveness multiplier.
    pub pue: f64,
    /// Effective switched capacitance, J·s².
    pub switch_cap: f64,
    pub f_max: f64,
    pub p_max: f64,
    pub batch_size: usize,
}

impl ClientProfile {
    /// CPU cycles for a full (unpruned) local gradient pass.
    pub fn full_cycles(&self) -> f64 {
        self.batch_size as f64 * self.flops_per_sample / self.flops_per_cycle
    }

    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("uplink_bandwidth", self.uplink_bandwidth),
            ("gradient_bits", self.gradient_bits),
            ("flops_per_sample", self.flops_per_sample),
            ("flops_per_cycle", self.flops_per_cycle),
            ("pue", self.pue),
            ("switch_cap", self.switch_cap),
            ("f_max", self.f_max),
            ("p_max", self.p_max),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("client {}: {name} must be positive, got {v}", self.id));
            }
        }
        if self.batch_size == 0 {
            return Err(format!("client {}: batch_size must be >= 1", self.id));
        }
        Ok(())
    }
}

/// Channel gains fixed for the whole run.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub uplink_gain: Vec<f64>,
    pub downlink_gain: Vec<f64>,
    /// Server-side AWGN PSD, W/Hz.
    pub noise_psd: f64,
    /// Client-side AWGN PSD per client, W/Hz.
    pub client_noise_psd: Vec<f64>,
    pub downlink_bandwidth: f64,
    pub server_power: f64,
}

impl ChannelState {
    pub fn num_clients(&self) -> usize {
        self.uplink_gain.len()
    }
}

/// One exponential(1) power-gain draw per client and direction, scaled by the
/// average path loss. Uplink gains are drawn first, then downlink.
pub fn sample_channels(
    num_clients: usize,
    avg_path_loss: f64,
    rng_seed: u64,
    noise_psd: f64,
    downlink_bandwidth: f64,
    server_power: f64,
) -> ChannelState {
    let mut rng = rng_from(rng_seed, &[0xC4A7]);
    let mut draw = || -> f64 {
        let e: f64 = Exp1.sample(&mut rng);
        avg_path_loss * e
    };
    let uplink_gain: Vec<f64> = (0..num_clients).map(|_| draw()).collect();
    let downlink_gain: Vec<f64> = (0..num_clients).map(|_| draw()).collect();
    ChannelState {
        uplink_gain,
        downlink_gain,
        noise_psd,
        client_noise_psd: vec![noise_psd; num_clients],
        downlink_bandwidth,
        server_power,
    }
}

/// Shannon rate `c log2(1 + p h / (c U0))`.
pub fn shannon_rate(bandwidth: f64, power: f64, gain: f64, noise_psd: f64) -> f64 {
    bandwidth * (power * gain / (bandwidth * noise_psd)).ln_1p() / std::f64::consts::LN_2
}

/// Uplink rate of `profile` at transmit power `p`, bps.
pub fn uplink_rate(p: f64, profile: &ClientProfile, channel: &ChannelState) -> f64 {
    shannon_rate(
        profile.uplink_bandwidth,
        p,
        channel.uplink_gain[profile.id],
        channel.noise_psd,
    )
}

/// Smallest power achieving uplink `rate` (inverse of [`uplink_rate`]).
pub fn power_for_rate(rate: f64, profile: &ClientProfile, channel: &ChannelState) -> f64 {
    let c = profile.uplink_bandwidth;
    let h = channel.uplink_gain[profile.id];
    (rate / c * std::f64::consts::LN_2).exp_m1() * c * channel.noise_psd / h
}

/// Multicast downlink rate to client `id`, bps.
pub fn downlink_rate(id: usize, channel: &ChannelState) -> f64 {
    shannon_rate(
        channel.downlink_bandwidth,
        channel.server_power,
        channel.downlink_gain[id],
        channel.client_noise_psd[id],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn table_point() -> (ClientProfile, ChannelState) {
        let profile = ClientProfile {
            id: 0,
            uplink_bandwidth: 1e5,
            gradient_bits: 1.42e6,
            flops_per_sample: 1.8e6,
            flops_per_cycle: 4.0,
            pue: 1.0,
            switch_cap: 1e-27,
            f_max: 5e8,
            p_max: 0.5,
            batch_size: 32,
        };
        let channel = ChannelState {
            uplink_gain: vec![1e-5],
            downlink_gain: vec![1e-5],
            noise_psd: 3.98e-21,
            client_noise_psd: vec![3.98e-21],
            downlink_bandwidth: 1e5,
            server_power: 0.5,
        };
        (profile, channel)
    }

    #[test]
    fn channels_deterministic_and_scaled() {
        let a = sample_channels(8, 1e-5, 3, 1e-21, 1e5, 0.5);
        let b = sample_channels(8, 1e-5, 3, 1e-21, 1e5, 0.5);
        assert_eq!(a, b);
        let z = sample_channels(8, 0.0, 3, 1e-21, 1e5, 0.5);
        assert!(z.uplink_gain.iter().chain(&z.downlink_gain).all(|&g| g == 0.0));
    }

    #[test]
    fn channel_mean_matches_path_loss() {
        let ch = sample_channels(10_000, 1e-5, 11, 1e-21, 1e5, 0.5);
        let mean = ch.uplink_gain.iter().sum::<f64>() / 1e4;
        assert!((mean / 1e-5 - 1.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn rate_examples() {
        let (profile, channel) = table_point();
        assert_eq!(uplink_rate(0.0, &profile, &channel), 0.0);
        // high-precision value of 1e5 log2(1 + 0.5e-5 / (1e5 * 3.98e-21))
        assert_relative_eq!(uplink_rate(0.5, &profile, &channel), 3_354_844.061_310_690, max_relative = 1e-12);
        assert_relative_eq!(downlink_rate(0, &channel), 3_354_844.061_310_690, max_relative = 1e-12);

        let mut wide = profile.clone();
        wide.uplink_bandwidth *= 2.0;
        let r1 = uplink_rate(0.5, &profile, &channel);
        let r2 = uplink_rate(0.5, &wide, &channel);
        assert!(r2 > r1 && r2 < 2.0 * r1);
    }

    #[test]
    fn downlink_dead_channel_and_ordering() {
        let (_, mut channel) = table_point();
        channel.downlink_gain = vec![2e-5, 1e-5, 0.0];
        channel.client_noise_psd = vec![channel.noise_psd; 3];
        assert_eq!(downlink_rate(2, &channel), 0.0);
        assert!(downlink_rate(0, &channel) > downlink_rate(1, &channel));
    }

    #[test]
    fn power_inverts_rate() {
        let (profile, channel) = table_point();
        let r = uplink_rate(0.3, &profile, &channel);
        assert_relative_eq!(power_for_rate(r, &profile, &channel), 0.3, max_relative = 1e-9);
    }

    proptest! {
        #[test]
        fn rate_concave_and_monotone(p1 in 0.0f64..1.0, p2 in 0.0f64..1.0, g in 1e-8f64..1e-4) {
            let (profile, mut channel) = table_point();
            channel.uplink_gain[0] = g;
            let (lo, hi) = if p1 < p2 { (p1, p2) } else { (p2, p1) };
            let r = |p: f64| uplink_rate(p, &profile, &channel);
            prop_assert!(r(lo) <= r(hi));
            prop_assert!(r((lo + hi) / 2.0) >= (r(lo) + r(hi)) / 2.0 - 1e-9 * r(hi).max(1.0));
            prop_assert!(r(hi).is_finite() && r(lo) >= 0.0);
        }
    }
}
