#![allow(dead_code)]

use rand::Rng;

use feel_core::bound::{derive_constants, BoundConstants, BoundInputs};
use feel_core::cost::{self, RoundDecision};
use feel_core::optimizer::{initialize, Instance, Pins, RoundBudget};
use feel_core::presets::preset;
use feel_core::rng::rng_from;
use feel_core::wireless::{sample_channels, ChannelState, ClientProfile};

pub struct Fixture {
    pub profiles: Vec<ClientProfile>,
    pub channel: ChannelState,
    pub phi: Vec<f64>,
    pub constants: BoundConstants,
    pub lambda_max: f64,
}

impl Fixture {
    pub fn inst(&self) -> Instance<'_> {
        Instance::new(&self.profiles, &self.channel, &self.phi, &self.constants, self.lambda_max).unwrap()
    }
}

/// mnist-lenet hardware with random channels, φ and bound constants.
pub fn random_fixture(seed: u64, n: usize) -> Fixture {
    let hw = preset("mnist-lenet").unwrap();
    let mut rng = rng_from(seed, &[0x7E57]);
    let profiles = hw.profiles(n);
    let channel = sample_channels(n, hw.path_loss, seed, hw.noise_psd, hw.downlink_bandwidth, hw.server_power);
    let phi_scale = 10f64.powf(rng.random_range(-2.0..1.0));
    let phi = (0..n).map(|_| phi_scale * rng.random_range(0.0..1.0)).collect();
    let constants = derive_constants(&BoundInputs {
        lipschitz: rng.random_range(1.0..20.0),
        grad_sq: rng.random_range(10.0..200.0),
        model_sq: rng.random_range(1.0..100.0),
        learning_rate: 0.01,
        batch_size: 32,
        last_round: rng.random_range(0..50),
        loss_gap: 2.3,
    })
    .unwrap();
    Fixture {
        profiles,
        channel,
        phi,
        constants,
        lambda_max: hw.lambda_max,
    }
}

/// Cost of every client at λ_max, p_max, f_max plus the broadcast.
pub fn full_cost(f: &Fixture) -> (f64, Vec<f64>, Vec<f64>) {
    let b = cost::broadcast_energy(&f.profiles, &f.channel).unwrap();
    let mut e = Vec::new();
    let mut t = Vec::new();
    for p in &f.profiles {
        let c = cost::client_cost(f.lambda_max, p.p_max, p.f_max, p, &f.channel).unwrap();
        e.push(c.energy());
        t.push(c.delay());
    }
    (b, e, t)
}

/// A per-round budget between tight and loose for which the initializer
/// succeeds, plus the initial decision.
pub fn random_budget(f: &Fixture, seed: u64) -> (RoundBudget, RoundDecision) {
    let mut rng = rng_from(seed, &[0xB0D6]);
    let (b, e, t) = full_cost(f);
    let e_sum: f64 = e.iter().sum();
    let t_max = t.iter().copied().fold(0.0, f64::max);
    loop {
        let rb = RoundBudget {
            energy: b + e_sum * rng.random_range(0.2..1.5),
            delay: t_max * rng.random_range(0.6..3.0),
        };
        if let Ok(d) = initialize(&f.inst(), &rb, &Pins::default()) {
            return (rb, d);
        }
    }
}
