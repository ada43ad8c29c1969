//! Power and frequency allocation by successive linearization of the
//! upload-energy term.

use crate::cost::{self, RoundDecision};
use crate::wireless::{power_for_rate, uplink_rate, ChannelState, ClientProfile};

use super::{golden_min, Instance, OptimizerError, Result, RoundBudget};

/// Tangent of `g(p) = p H / r(p)` at `p0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linearization {
    pub point: f64,
    pub value: f64,
    pub slope: f64,
}

impl Linearization {
    pub fn eval(&self, p: f64) -> f64 {
        self.value + self.slope * (p - self.point)
    }
}

/// Value and slope `b = H/(c ℓ) − p H h / (c ℓ² (c U₀ + p h) ln 2)` with
/// `ℓ = log₂(1 + p h / (c U₀))`.
pub fn sca_linearize(p0: f64, profile: &ClientProfile, channel: &ChannelState) -> Result<Linearization> {
    if !(p0 > 0.0 && p0.is_finite()) {
        return Err(OptimizerError::Domain(format!("expansion point p0 = {p0} must be positive")));
    }
    let c = profile.uplink_bandwidth;
    let h = channel.uplink_gain[profile.id];
    let u0 = channel.noise_psd;
    let bits = profile.gradient_bits;
    let ell = (p0 * h / (c * u0)).ln_1p() / std::f64::consts::LN_2;
    if !(ell > 0.0) {
        return Err(OptimizerError::Domain(format!("client {} has a dead uplink", profile.id)));
    }
    let value = p0 * bits / (c * ell);
    let slope = bits / (c * ell) - p0 * bits * h / (c * ell * ell * (c * u0 + p0 * h) * std::f64::consts::LN_2);
    Ok(Linearization { point: p0, value, slope })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaOptions {
    pub max_iter: usize,
    /// Stop once the weighted slack improves by less than this.
    pub tol: f64,
    pub pin_power: Option<f64>,
    pub pin_freq_max: bool,
}

impl Default for ScaOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-6,
            pin_power: None,
            pin_freq_max: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScaState {
    pub iterations: usize,
    pub power: Vec<f64>,
    pub freq: Vec<f64>,
    /// Linearization points and slopes of the last iterate (selected clients).
    pub points: Vec<f64>,
    pub slopes: Vec<f64>,
    /// Surrogate round energy of the last solved subproblem.
    pub surrogate_energy: f64,
    pub objective_trace: Vec<f64>,
    /// True (energy, delay) relative slack of each accepted iterate.
    pub slack_trace: Vec<(f64, f64)>,
}

/// Weighted relative slack `0.5 (e − E)/e + 0.5 (t − T)/t`.
fn slack_objective(energy: f64, delay: f64, rb: &RoundBudget) -> f64 {
    0.5 * (rb.energy - energy) / rb.energy + 0.5 * (rb.delay - delay) / rb.delay
}

#[derive(Debug, Clone, Copy)]
struct ClientPlan {
    power: f64,
    freq: f64,
    surrogate: f64,
    delay: f64,
}

struct ClientProblem<'a> {
    profile: &'a ClientProfile,
    channel: &'a ChannelState,
    /// Pruned cycles and bits.
    work: f64,
    bits: f64,
    keep: f64,
    down: f64,
    lin: Option<Linearization>,
    pin_power: Option<f64>,
    pin_freq: bool,
}

impl ClientProblem<'_> {
    fn comp_energy(&self, freq: f64) -> f64 {
        self.profile.pue * self.profile.switch_cap * freq * freq * self.work
    }

    fn upload_surrogate(&self, power: f64) -> f64 {
        match self.lin {
            Some(l) => self.keep * l.eval(power),
            None => self.keep * power * self.profile.gradient_bits / uplink_rate(power, self.profile, self.channel),
        }
    }

    fn uplink_time(&self, power: f64) -> f64 {
        self.bits / uplink_rate(power, self.profile, self.channel)
    }

    fn power_cap(&self) -> f64 {
        self.pin_power.unwrap_or(self.profile.p_max)
    }

    fn min_delay(&self) -> f64 {
        self.work / self.profile.f_max + self.uplink_time(self.power_cap()) + self.down
    }

    fn plan(&self, power: f64, comp_time: f64) -> ClientPlan {
        let freq = self.work / comp_time;
        ClientPlan {
            power,
            freq,
            surrogate: self.comp_energy(freq) + self.upload_surrogate(power),
            delay: comp_time + self.uplink_time(power) + self.down,
        }
    }

    /// Cheapest surrogate plan finishing by `target`; `None` when impossible.
    fn solve(&self, target: f64) -> Option<ClientPlan> {
        let avail = target - self.down;
        let x_lo = self.work / self.profile.f_max;
        let slack = 1e-12 * target;
        if let Some(p) = self.pin_power {
            let up = self.uplink_time(p);
            if self.pin_freq {
                return (x_lo + up <= avail + slack).then(|| self.plan(p, x_lo));
            }
            let x = avail - up;
            return (x >= x_lo - slack).then(|| self.plan(p, x.max(x_lo)));
        }
        let rate_for = |up: f64| power_for_rate(self.bits / up, self.profile, self.channel);
        let up_lo = self.uplink_time(self.profile.p_max);
        if self.pin_freq {
            let up = avail - x_lo;
            if up < up_lo - slack {
                return None;
            }
            let up = up.max(up_lo);
            return Some(self.plan(rate_for(up).min(self.profile.p_max), x_lo));
        }
        let x_hi = avail - up_lo;
        if x_hi < x_lo - slack {
            return None;
        }
        let x_hi = x_hi.max(x_lo);
        let cost = |x: f64| {
            let p = rate_for(avail - x).min(self.profile.p_max);
            self.comp_energy(self.work / x) + self.upload_surrogate(p)
        };
        let x = golden_min(cost, x_lo, x_hi, 1e-10);
        Some(self.plan(rate_for(avail - x).min(self.profile.p_max), x))
    }
}

/// Joint plan for all selected clients at a common target delay.
fn solve_at(problems: &[(usize, ClientProblem<'_>)], target: f64) -> Option<(Vec<(usize, ClientPlan)>, f64, f64)> {
    let mut plans = Vec::with_capacity(problems.len());
    let mut energy = 0.0;
    let mut delay: f64 = 0.0;
    for (n, prob) in problems {
        let plan = prob.solve(target)?;
        energy += plan.surrogate;
        delay = delay.max(plan.delay);
        plans.push((*n, plan));
    }
    Some((plans, energy, delay))
}

fn true_objective(inst: &Instance<'_>, d: &RoundDecision, rb: &RoundBudget) -> Option<f64> {
    let r = cost::round_costs(d, inst.profiles, inst.channel).ok()?;
    let feasible = r.round_energy <= rb.energy * (1.0 + super::ROUND_TOL) && r.round_delay <= rb.delay * (1.0 + super::ROUND_TOL);
    feasible.then(|| slack_objective(r.round_energy, r.round_delay, rb))
}

/// Maximize weighted budget slack over `(p, f)` with selection and pruning
/// fixed. The starting point must be feasible; the result always is.
pub fn sca_resources(
    inst: &Instance<'_>,
    selected: &[bool],
    lambda: &[f64],
    rb: &RoundBudget,
    p_init: &[f64],
    f_init: &[f64],
    opts: &ScaOptions,
) -> Result<ScaState> {
    let mut current = RoundDecision {
        selected: selected.to_vec(),
        lambda: lambda.to_vec(),
        power: p_init.to_vec(),
        freq: f_init.to_vec(),
    };
    let mut best = true_objective(inst, &current, rb).ok_or_else(|| {
        OptimizerError::InfeasibleSubproblem("resource allocation started from an infeasible point".into())
    })?;
    let broadcast = cost::broadcast_energy(inst.profiles, inst.channel)?;
    let mut state = ScaState {
        objective_trace: vec![best],
        ..Default::default()
    };
    let cur = cost::round_costs(&current, inst.profiles, inst.channel)?;
    state.slack_trace.push(((rb.energy - cur.round_energy) / rb.energy, (rb.delay - cur.round_delay) / rb.delay));

    for _ in 0..opts.max_iter {
        state.iterations += 1;
        let mut problems = Vec::new();
        for n in current.selected_ids() {
            let profile = &inst.profiles[n];
            let keep = 1.0 - current.lambda[n];
            let lin = match opts.pin_power {
                Some(_) => None,
                None => Some(sca_linearize(current.power[n], profile, inst.channel)?),
            };
            problems.push((
                n,
                ClientProblem {
                    profile,
                    channel: inst.channel,
                    work: keep * profile.full_cycles(),
                    bits: keep * profile.gradient_bits,
                    keep,
                    down: cost::downlink_delay(profile, inst.channel)?,
                    lin,
                    pin_power: opts.pin_power.map(|p| p.min(profile.p_max)),
                    pin_freq: opts.pin_freq_max,
                },
            ));
        }
        state.points = problems.iter().filter_map(|(_, p)| p.lin.map(|l| l.point)).collect();
        state.slopes = problems.iter().filter_map(|(_, p)| p.lin.map(|l| l.slope)).collect();

        let t_lo = problems.iter().map(|(_, p)| p.min_delay()).fold(0.0, f64::max);
        if t_lo > rb.delay * (1.0 + super::ROUND_TOL) {
            break;
        }
        let t_lo = t_lo.min(rb.delay);
        let surrogate = |target: f64| solve_at(&problems, target).map(|(_, e, d)| (e + broadcast, d));
        let neg_objective = |target: f64| match surrogate(target) {
            Some((e, d)) => -slack_objective(e, d, rb),
            None => f64::INFINITY,
        };
        let mut target = golden_min(neg_objective, t_lo, rb.delay, 1e-10);
        if surrogate(target).is_none_or(|(e, _)| e > rb.energy) {
            let (mut lo, mut hi) = (target, rb.delay);
            if surrogate(hi).is_some_and(|(e, _)| e <= rb.energy) {
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if surrogate(mid).is_some_and(|(e, _)| e <= rb.energy) {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
            }
            target = hi;
        }
        let Some((plans, e_sur, _)) = solve_at(&problems, target) else {
            break;
        };
        state.surrogate_energy = e_sur + broadcast;

        let mut cand = current.clone();
        for (n, plan) in &plans {
            cand.power[*n] = plan.power.clamp(0.0, inst.profiles[*n].p_max);
            cand.freq[*n] = plan.freq.clamp(0.0, inst.profiles[*n].f_max);
        }
        let mut accepted = None;
        for _ in 0..40 {
            if let Some(obj) = true_objective(inst, &cand, rb) {
                if obj >= best {
                    accepted = Some(obj);
                    break;
                }
            }
            for n in cand.selected_ids().collect::<Vec<_>>() {
                cand.power[n] = 0.5 * (cand.power[n] + current.power[n]);
                cand.freq[n] = 0.5 * (cand.freq[n] + current.freq[n]);
            }
        }
        let Some(obj) = accepted else { break };
        if obj - best < opts.tol {
            break;
        }
        best = obj;
        current = cand;
        let r = cost::round_costs(&current, inst.profiles, inst.channel)?;
        state.objective_trace.push(best);
        state.slack_trace.push(((rb.energy - r.round_energy) / rb.energy, (rb.delay - r.round_delay) / rb.delay));
    }
    state.power = current.power;
    state.freq = current.freq;
    Ok(state)
}
