//! Alternating optimization of selection, pruning, power and frequency under
//! energy and delay budgets.

pub mod init;
pub mod lp;
pub mod pruning;
pub mod sca;
pub mod selection;

use std::fmt;

use thiserror::Error;

use crate::bound::{self, BoundConstants, BoundError};
use crate::cost::{self, CostError, RoundDecision};
use crate::wireless::{ChannelState, ClientProfile};

pub use init::initialize;
pub use lp::{solve_lp, LpError, LpProblem, LpSolution, LpStatus};
pub use pruning::lp_pruning;
pub use sca::{sca_linearize, sca_resources, Linearization, ScaOptions, ScaState};
pub use selection::{round_objective, select_clients, SelectionMode, SelectionState};

/// Relative tolerance on per-round budget checks inside the solver.
pub const ROUND_TOL: f64 = 1e-9;
/// Relative tolerance on the certified totals of a returned plan.
pub const FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    Energy,
    Delay,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Constraint::Energy => "energy",
            Constraint::Delay => "delay",
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum OptimizerError {
    #[error("infeasible problem, binding {constraint} constraint: {detail}")]
    Infeasible { constraint: Constraint, detail: String },
    #[error("infeasible subproblem: {0}")]
    InfeasibleSubproblem(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error(transparent)]
    Lp(#[from] LpError),
}

pub type Result<T> = std::result::Result<T, OptimizerError>;

/// Energy (J) and delay (s) available to a single round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundBudget {
    pub energy: f64,
    pub delay: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum BudgetSplit {
    #[default]
    Uniform,
    Explicit(Vec<RoundBudget>),
}

/// Totals over the whole run.
#[derive(Debug, Clone, PartialEq)]
pub struct Budget {
    pub energy: f64,
    pub delay: f64,
    pub split: BudgetSplit,
}

impl Budget {
    pub fn uniform(energy: f64, delay: f64) -> Self {
        Self {
            energy,
            delay,
            split: BudgetSplit::Uniform,
        }
    }

    pub fn per_round(&self, rounds: usize) -> Result<Vec<RoundBudget>> {
        if rounds == 0 {
            return Err(OptimizerError::InvalidArgument("at least one round is required".into()));
        }
        for (name, v) in [("energy", self.energy), ("delay", self.delay)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(OptimizerError::InvalidArgument(format!("{name} budget must be finite and >= 0, got {v}")));
            }
        }
        match &self.split {
            BudgetSplit::Uniform => Ok(vec![
                RoundBudget {
                    energy: self.energy / rounds as f64,
                    delay: self.delay / rounds as f64,
                };
                rounds
            ]),
            BudgetSplit::Explicit(list) => {
                if list.len() != rounds {
                    return Err(OptimizerError::InvalidArgument(format!(
                        "explicit split has {} rounds, expected {rounds}",
                        list.len()
                    )));
                }
                let e: f64 = list.iter().map(|r| r.energy).sum();
                let t: f64 = list.iter().map(|r| r.delay).sum();
                if e > self.energy * (1.0 + ROUND_TOL) || t > self.delay * (1.0 + ROUND_TOL) {
                    return Err(OptimizerError::InvalidArgument(
                        "explicit per-round budgets exceed the totals".into(),
                    ));
                }
                Ok(list.clone())
            }
        }
    }
}

/// Variables held fixed by the baseline schemes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pins {
    pub lambda: Option<f64>,
    pub all_selected: bool,
    pub power: Option<f64>,
    pub freq_at_max: bool,
}

/// Static data shared by every subproblem.
#[derive(Debug, Clone, Copy)]
pub struct Instance<'a> {
    pub profiles: &'a [ClientProfile],
    pub channel: &'a ChannelState,
    pub phi: &'a [f64],
    pub constants: &'a BoundConstants,
    pub lambda_max: f64,
}

impl<'a> Instance<'a> {
    pub fn new(
        profiles: &'a [ClientProfile],
        channel: &'a ChannelState,
        phi: &'a [f64],
        constants: &'a BoundConstants,
        lambda_max: f64,
    ) -> Result<Self> {
        let n = profiles.len();
        if n == 0 {
            return Err(OptimizerError::InvalidArgument("no clients".into()));
        }
        if phi.len() != n || channel.num_clients() != n || channel.client_noise_psd.len() != n {
            return Err(OptimizerError::InvalidArgument(format!(
                "{n} profiles, {} phi values, {} channels",
                phi.len(),
                channel.num_clients()
            )));
        }
        if let Some(bad) = profiles.iter().enumerate().find(|(i, p)| p.id != *i) {
            return Err(OptimizerError::InvalidArgument(format!("profile {} has id {}", bad.0, bad.1.id)));
        }
        for p in profiles {
            p.validate().map_err(OptimizerError::InvalidArgument)?;
        }
        if phi.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(OptimizerError::InvalidArgument("phi must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&lambda_max) {
            return Err(OptimizerError::InvalidArgument(format!("lambda_max {lambda_max} outside [0, 1)")));
        }
        Ok(Self {
            profiles,
            channel,
            phi,
            constants,
            lambda_max,
        })
    }

    /// Relative (energy, delay) slack of one round; negative means violated.
    pub fn round_slack(&self, d: &RoundDecision, rb: &RoundBudget) -> Result<(f64, f64)> {
        let r = cost::round_costs(d, self.profiles, self.channel)?;
        Ok(((rb.energy - r.round_energy) / rb.energy, (rb.delay - r.round_delay) / rb.delay))
    }

    pub fn round_feasible(&self, d: &RoundDecision, rb: &RoundBudget) -> bool {
        d.validate(self.profiles, self.lambda_max).is_ok()
            && self
                .round_slack(d, rb)
                .is_ok_and(|(e, t)| e >= -ROUND_TOL && t >= -ROUND_TOL)
    }
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub(crate) fn golden_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, rel_tol: f64) -> f64 {
    if !(hi > lo) {
        return lo;
    }
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let tol = rel_tol * (hi - lo).max(hi.abs() * 1e-6);
    for _ in 0..200 {
        if b - a <= tol.max(4.0 * f64::EPSILON * b.abs().max(a.abs())) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    let candidates = [(lo, f(lo)), (mid, f(mid)), (hi, f(hi))];
    candidates
        .into_iter()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .map(|x| x.0)
        .unwrap_or(mid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub lambda_max: f64,
    pub selection: SelectionMode,
    pub pins: Pins,
    pub max_outer: usize,
    pub outer_tol: f64,
    pub sca_max_iter: usize,
    pub sca_tol: f64,
    pub selection_max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            lambda_max: 0.5,
            selection: SelectionMode::Auto,
            pins: Pins::default(),
            max_outer: 30,
            outer_tol: 1e-9,
            sca_max_iter: 50,
            sca_tol: 1e-6,
            selection_max_iter: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub theta: f64,
    /// Relative slack of the run totals.
    pub energy_slack: f64,
    pub delay_slack: f64,
    pub delta_sca: f64,
    pub delta_lp: f64,
    pub delta_selection: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub decisions: Vec<RoundDecision>,
    pub theta: f64,
    pub trace: Vec<TraceEntry>,
}

struct Group {
    budget: RoundBudget,
    rounds: Vec<usize>,
    decision: RoundDecision,
    objective: f64,
}

fn totals(groups: &[Group], inst: &Instance<'_>) -> Result<(f64, f64)> {
    let mut e = 0.0;
    let mut t = 0.0;
    for g in groups {
        let r = cost::round_costs(&g.decision, inst.profiles, inst.channel)?;
        e += r.round_energy * g.rounds.len() as f64;
        t += r.round_delay * g.rounds.len() as f64;
    }
    Ok((e, t))
}

fn objective_of(inst: &Instance<'_>, d: &RoundDecision) -> f64 {
    round_objective(inst, &d.selected, &d.lambda).unwrap_or(f64::INFINITY)
}

/// Run the alternating optimization and return one decision per round.
pub fn solve(
    profiles: &[ClientProfile],
    channel: &ChannelState,
    phi: &[f64],
    constants: &BoundConstants,
    budget: &Budget,
    options: &SolveOptions,
) -> Result<Solution> {
    let inst = Instance::new(profiles, channel, phi, constants, options.lambda_max)?;
    if let Some(l) = options.pins.lambda {
        if !(0.0..=options.lambda_max).contains(&l) {
            return Err(OptimizerError::InvalidArgument(format!("pinned lambda {l} outside [0, lambda_max]")));
        }
    }
    let rounds = constants.inputs.last_round + 1;
    let per_round = budget.per_round(rounds)?;

    let mut groups: Vec<Group> = Vec::new();
    for (s, rb) in per_round.iter().enumerate() {
        if let Some(g) = groups.iter_mut().find(|g| g.budget == *rb) {
            g.rounds.push(s);
            continue;
        }
        let decision = initialize(&inst, rb, &options.pins)?;
        let objective = objective_of(&inst, &decision);
        groups.push(Group {
            budget: *rb,
            rounds: vec![s],
            decision,
            objective,
        });
    }

    let theta_of = |groups: &[Group]| {
        constants.alpha + groups.iter().map(|g| g.objective * g.rounds.len() as f64).sum::<f64>()
    };
    let slack_entry = |groups: &[Group], iteration, theta, deltas: [f64; 3]| -> Result<TraceEntry> {
        let (e, t) = totals(groups, &inst)?;
        Ok(TraceEntry {
            iteration,
            theta,
            energy_slack: (budget.energy - e) / budget.energy,
            delay_slack: (budget.delay - t) / budget.delay,
            delta_sca: deltas[0],
            delta_lp: deltas[1],
            delta_selection: deltas[2],
        })
    };

    let mut theta = theta_of(&groups);
    let mut trace = vec![slack_entry(&groups, 0, theta, [0.0; 3])?];
    let sca_opts = ScaOptions {
        max_iter: options.sca_max_iter,
        tol: options.sca_tol,
        pin_power: options.pins.power,
        pin_freq_max: options.pins.freq_at_max,
    };

    for iteration in 1..=options.max_outer {
        let mut deltas = [0.0; 3];
        for g in groups.iter_mut() {
            let weight = g.rounds.len() as f64;
            let rb = g.budget;

            let d = &g.decision;
            if let Ok(state) = sca_resources(&inst, &d.selected, &d.lambda, &rb, &d.power, &d.freq, &sca_opts) {
                let cand = RoundDecision {
                    power: state.power,
                    freq: state.freq,
                    ..g.decision.clone()
                };
                if inst.round_feasible(&cand, &rb) {
                    g.decision = cand;
                }
            }

            if options.pins.lambda.is_none() {
                let d = &g.decision;
                if let Ok(lambda) = lp_pruning(&inst, &d.selected, &d.power, &d.freq, &rb) {
                    let cand = RoundDecision {
                        lambda,
                        ..g.decision.clone()
                    };
                    let obj = objective_of(&inst, &cand);
                    if obj <= g.objective && inst.round_feasible(&cand, &rb) {
                        deltas[1] += weight * (obj - g.objective);
                        g.objective = obj;
                        g.decision = cand;
                    }
                }
            }

            if !options.pins.all_selected {
                let d = &g.decision;
                if let Ok(sel) = select_clients(
                    &inst,
                    &d.lambda,
                    &d.power,
                    &d.freq,
                    &rb,
                    options.selection,
                    &d.selected,
                    options.selection_max_iter,
                ) {
                    let cand = RoundDecision {
                        selected: sel.selected,
                        ..g.decision.clone()
                    };
                    let obj = objective_of(&inst, &cand);
                    if obj <= g.objective && inst.round_feasible(&cand, &rb) {
                        deltas[2] += weight * (obj - g.objective);
                        g.objective = obj;
                        g.decision = cand;
                    }
                }
            }
        }
        let next = theta_of(&groups);
        let improvement = theta - next;
        theta = next;
        trace.push(slack_entry(&groups, iteration, theta, deltas)?);
        if improvement < options.outer_tol {
            break;
        }
    }

    let mut decisions = vec![groups[0].decision.clone(); rounds];
    for g in &groups {
        for &s in &g.rounds {
            decisions[s] = g.decision.clone();
        }
    }
    certify(&inst, &decisions, budget, &per_round)?;
    let theta = bound::theta(&decisions, phi, constants)?.theta;
    Ok(Solution { decisions, theta, trace })
}

/// Re-evaluate every round with the cost model and check the totals.
pub fn certify(inst: &Instance<'_>, decisions: &[RoundDecision], budget: &Budget, per_round: &[RoundBudget]) -> Result<()> {
    let mut e = 0.0;
    let mut t = 0.0;
    for (s, (d, rb)) in decisions.iter().zip(per_round).enumerate() {
        d.validate(inst.profiles, inst.lambda_max)?;
        let r = cost::round_costs(d, inst.profiles, inst.channel)?;
        if r.round_energy > rb.energy * (1.0 + FEASIBILITY_TOL) {
            return Err(OptimizerError::Infeasible {
                constraint: Constraint::Energy,
                detail: format!("round {s} uses {} J of {} J", r.round_energy, rb.energy),
            });
        }
        if r.round_delay > rb.delay * (1.0 + FEASIBILITY_TOL) {
            return Err(OptimizerError::Infeasible {
                constraint: Constraint::Delay,
                detail: format!("round {s} takes {} s of {} s", r.round_delay, rb.delay),
            });
        }
        e += r.round_energy;
        t += r.round_delay;
    }
    if (budget.energy - e) / budget.energy < -FEASIBILITY_TOL {
        return Err(OptimizerError::Infeasible {
            constraint: Constraint::Energy,
            detail: format!("plan uses {e} J of {} J", budget.energy),
        });
    }
    if (budget.delay - t) / budget.delay < -FEASIBILITY_TOL {
        return Err(OptimizerError::Infeasible {
            constraint: Constraint::Delay,
            detail: format!("plan takes {t} s of {} s", budget.delay),
        });
    }
    Ok(())
}
