//! Per-round delay and energy accounting.

use thiserror::Error;

use crate::wireless::{downlink_rate, uplink_rate, ChannelState, ClientProfile};

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("invalid decision for client {client}: {reason}")]
    InvalidDecision { client: usize, reason: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, CostError>;

/// One round's decision: selection, pruning ratio, transmit power (W) and CPU
/// frequency (Hz) per client.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundDecision {
    pub selected: Vec<bool>,
    pub lambda: Vec<f64>,
    pub power: Vec<f64>,
    pub freq: Vec<f64>,
}

impl RoundDecision {
    pub fn num_clients(&self) -> usize {
        self.selected.len()
    }

    pub fn num_selected(&self) -> usize {
        self.selected.iter().filter(|&&a| a).count()
    }

    pub fn selected_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.selected
            .iter()
            .enumerate()
            .filter_map(|(n, &a)| a.then_some(n))
    }

    /// Mean pruning ratio over selected clients (0 when none are selected).
    pub fn mean_lambda(&self) -> f64 {
        let k = self.num_selected();
        if k == 0 {
            return 0.0;
        }
        self.selected_ids().map(|n| self.lambda[n]).sum::<f64>() / k as f64
    }

    /// Check the box and cardinality invariants.
    pub fn validate(&self, profiles: &[ClientProfile], lambda_max: f64) -> Result<()> {
        let n = profiles.len();
        for (name, len) in [
            ("selected", self.selected.len()),
            ("lambda", self.lambda.len()),
            ("power", self.power.len()),
            ("freq", self.freq.len()),
        ] {
            if len != n {
                return Err(CostError::Dimension(format!("{name} has {len} entries for {n} clients")));
            }
        }
        if self.num_selected() == 0 {
            return Err(CostError::InvalidDecision {
                client: 0,
                reason: "no client selected".into(),
            });
        }
        let tol = 1e-12;
        for (i, p) in profiles.iter().enumerate() {
            let bad = |reason: String| CostError::InvalidDecision { client: i, reason };
            if !(self.lambda[i] >= 0.0 && self.lambda[i] <= lambda_max + tol) {
                return Err(bad(format!("lambda {} outside [0, {lambda_max}]", self.lambda[i])));
            }
            if !(self.power[i] >= 0.0 && self.power[i] <= p.p_max * (1.0 + tol)) {
                return Err(bad(format!("power {} outside [0, {}]", self.power[i], p.p_max)));
            }
            if !(self.freq[i] >= 0.0 && self.freq[i] <= p.f_max * (1.0 + tol)) {
                return Err(bad(format!("frequency {} outside [0, {}]", self.freq[i], p.f_max)));
            }
        }
        Ok(())
    }
}

/// `(1-λ) Z e / (f q)`.
pub fn comp_delay(lambda: f64, freq: f64, profile: &ClientProfile) -> Result<f64> {
    let work = (1.0 - lambda) * profile.full_cycles();
    if work == 0.0 {
        return Ok(0.0);
    }
    if !(freq > 0.0) {
        return Err(CostError::InvalidDecision {
            client: profile.id,
            reason: "zero CPU frequency for a selected client".into(),
        });
    }
    Ok(work / freq)
}

/// Uplink part `(1-λ) H / r(p)` of the communication delay.
pub fn uplink_delay(lambda: f64, power: f64, profile: &ClientProfile, channel: &ChannelState) -> Result<f64> {
    let bits = (1.0 - lambda) * profile.gradient_bits;
    if bits == 0.0 {
        return Ok(0.0);
    }
    let rate = uplink_rate(power, profile, channel);
    if !(rate > 0.0) {
        return Err(CostError::InvalidDecision {
            client: profile.id,
            reason: "zero uplink rate with a nonempty payload".into(),
        });
    }
    Ok(bits / rate)
}

/// Downlink broadcast time `H / r̂` for one client.
pub fn downlink_delay(profile: &ClientProfile, channel: &ChannelState) -> Result<f64> {
    let rate = downlink_rate(profile.id, channel);
    if !(rate > 0.0) {
        return Err(CostError::InvalidDecision {
            client: profile.id,
            reason: "zero downlink rate".into(),
        });
    }
    Ok(profile.gradient_bits / rate)
}

/// `(1-λ) H / r(p) + H / r̂`; the downlink carries the full gradient.
pub fn comm_delay(lambda: f64, power: f64, profile: &ClientProfile, channel: &ChannelState) -> Result<f64> {
    Ok(uplink_delay(lambda, power, profile, channel)? + downlink_delay(profile, channel)?)
}

/// `(1-λ) κ ϖ f² Z e / q`.
pub fn comp_energy(lambda: f64, freq: f64, profile: &ClientProfile) -> f64 {
    (1.0 - lambda) * profile.pue * profile.switch_cap * freq * freq * profile.full_cycles()
}

/// `(1-λ) p H / r(p)`.
pub fn upload_energy(lambda: f64, power: f64, profile: &ClientProfile, channel: &ChannelState) -> Result<f64> {
    Ok(power * uplink_delay(lambda, power, profile, channel)?)
}

/// Longest downlink broadcast time `max_n H_n / r̂_n` over every client.
pub fn broadcast_time(profiles: &[ClientProfile], channel: &ChannelState) -> Result<f64> {
    profiles
        .iter()
        .map(|p| downlink_delay(p, channel))
        .try_fold(0.0, |acc, d| Ok(f64::max(acc, d?)))
}

/// Server energy for one broadcast, `p̂ · max_n H_n / r̂_n`.
pub fn broadcast_energy(profiles: &[ClientProfile], channel: &ChannelState) -> Result<f64> {
    Ok(channel.server_power * broadcast_time(profiles, channel)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClientCost {
    pub comp_delay: f64,
    pub comm_delay: f64,
    pub comp_energy: f64,
    pub upload_energy: f64,
}

impl ClientCost {
    pub fn delay(&self) -> f64 {
        self.comp_delay + self.comm_delay
    }

    pub fn energy(&self) -> f64 {
        self.comp_energy + self.upload_energy
    }
}

/// Cost of one client at one decision point (selection ignored).
pub fn client_cost(
    lambda: f64,
    power: f64,
    freq: f64,
    profile: &ClientProfile,
    channel: &ChannelState,
) -> Result<ClientCost> {
    Ok(ClientCost {
        comp_delay: comp_delay(lambda, freq, profile)?,
        comm_delay: comm_delay(lambda, power, profile, channel)?,
        comp_energy: comp_energy(lambda, freq, profile),
        upload_energy: upload_energy(lambda, power, profile, channel)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    /// Zero for deselected clients.
    pub per_client: Vec<ClientCost>,
    pub round_delay: f64,
    pub round_energy: f64,
    pub cumulative_delay: f64,
    pub cumulative_energy: f64,
}

/// Delay is the slowest selected client; energy sums the selected clients plus
/// the broadcast, whose duration is the maximum over all clients.
pub fn round_costs(
    decision: &RoundDecision,
    profiles: &[ClientProfile],
    channel: &ChannelState,
) -> Result<CostReport> {
    if decision.num_clients() != profiles.len() {
        return Err(CostError::Dimension(format!(
            "decision covers {} clients, {} profiles given",
            decision.num_clients(),
            profiles.len()
        )));
    }
    let mut per_client = vec![ClientCost::default(); profiles.len()];
    let mut round_delay: f64 = 0.0;
    let mut client_energy = 0.0;
    for n in decision.selected_ids() {
        let c = client_cost(
            decision.lambda[n],
            decision.power[n],
            decision.freq[n],
            &profiles[n],
            channel,
        )?;
        round_delay = round_delay.max(c.delay());
        client_energy += c.energy();
        per_client[n] = c;
    }
    let round_energy = client_energy + broadcast_energy(profiles, channel)?;
    Ok(CostReport {
        per_client,
        round_delay,
        round_energy,
        cumulative_delay: round_delay,
        cumulative_energy: round_energy,
    })
}

/// Running totals over rounds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CostAccumulator {
    pub delay: f64,
    pub energy: f64,
}

impl CostAccumulator {
    /// Fold a round into the totals and stamp the report's cumulative fields.
    pub fn record(&mut self, report: &mut CostReport) {
        self.delay += report.round_delay;
        self.energy += report.round_energy;
        report.cumulative_delay = self.delay;
        report.cumulative_energy = self.energy;
    }
}
