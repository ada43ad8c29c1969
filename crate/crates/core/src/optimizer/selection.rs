//! Client selection with pruning, power and frequency fixed.

use rayon::prelude::*;

use crate::bound::round_terms;
use crate::cost;

use super::{Instance, OptimizerError, Result, RoundBudget, ROUND_TOL};

pub const EXHAUSTIVE_LIMIT: usize = 16;
const HARD_EXHAUSTIVE_LIMIT: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionMode {
    /// Exhaustive up to [`EXHAUSTIVE_LIMIT`] clients, greedy beyond.
    #[default]
    Auto,
    Exhaustive,
    Greedy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionState {
    pub selected: Vec<bool>,
    /// `γ₁(Σaφ)² + γ₂Σaλ` at the returned selection.
    pub mu: f64,
    /// Per-round objective `(β + μ) / Σa`.
    pub objective: f64,
    pub iterations: usize,
}

struct Candidates {
    energy: Vec<f64>,
    delay: Vec<f64>,
    usable: Vec<bool>,
    broadcast: f64,
}

impl Candidates {
    fn new(inst: &Instance<'_>, lambda: &[f64], power: &[f64], freq: &[f64]) -> Result<Self> {
        let n = inst.profiles.len();
        let mut c = Candidates {
            energy: vec![0.0; n],
            delay: vec![0.0; n],
            usable: vec![false; n],
            broadcast: cost::broadcast_energy(inst.profiles, inst.channel)?,
        };
        for (i, p) in inst.profiles.iter().enumerate() {
            if let Ok(cc) = cost::client_cost(lambda[i], power[i], freq[i], p, inst.channel) {
                c.energy[i] = cc.energy();
                c.delay[i] = cc.delay();
                c.usable[i] = true;
            }
        }
        Ok(c)
    }

    fn feasible(&self, ids: impl Iterator<Item = usize>, rb: &RoundBudget) -> bool {
        let mut e = self.broadcast;
        for i in ids {
            if !self.usable[i] || self.delay[i] > rb.delay * (1.0 + ROUND_TOL) {
                return false;
            }
            e += self.energy[i];
        }
        e <= rb.energy * (1.0 + ROUND_TOL)
    }
}

fn mask_ids(mask: u32, n: usize) -> impl Iterator<Item = usize> {
    (0..n).filter(move |&i| mask >> i & 1 == 1)
}

fn mu_of(inst: &Instance<'_>, selected: &[bool], lambda: &[f64]) -> f64 {
    let k = selected.iter().filter(|&&a| a).count() as f64;
    round_terms(selected, lambda, inst.phi, inst.constants)
        .map(|t| (t.generalization + t.pruning) * k)
        .unwrap_or(0.0)
}

/// Per-round objective `(β + γ₁(Σaφ)² + γ₂Σaλ) / Σa`; `None` for an empty set.
pub fn round_objective(inst: &Instance<'_>, selected: &[bool], lambda: &[f64]) -> Option<f64> {
    round_terms(selected, lambda, inst.phi, inst.constants).map(|t| t.total())
}

fn exhaustive(inst: &Instance<'_>, lambda: &[f64], cands: &Candidates, rb: &RoundBudget) -> Option<Vec<bool>> {
    let n = inst.profiles.len();
    let (c, phi) = (inst.constants, inst.phi);
    let eval = |mask: u32| -> Option<f64> {
        if !cands.feasible(mask_ids(mask, n), rb) {
            return None;
        }
        let (mut k, mut s_phi, mut s_lambda) = (0.0, 0.0, 0.0);
        for i in mask_ids(mask, n) {
            k += 1.0;
            s_phi += phi[i];
            s_lambda += lambda[i];
        }
        Some((c.beta + c.gamma1 * s_phi * s_phi + c.gamma2 * s_lambda) / k)
    };
    let all: u32 = (1u32 << n) - 1;
    let values: Vec<(u32, f64)> = (1..=all)
        .into_par_iter()
        .filter_map(|m| eval(m).map(|v| (m, v)))
        .collect();
    let best = values.iter().map(|&(_, v)| v).min_by(f64::total_cmp)?;
    let tol = 1e-12 * best.abs().max(1.0);
    let pick = values
        .iter()
        .filter(|&&(_, v)| v <= best + tol)
        .map(|&(m, _)| m)
        .min_by(|&a, &b| {
            b.count_ones()
                .cmp(&a.count_ones())
                .then_with(|| mask_ids(a, n).cmp(mask_ids(b, n)))
        })?;
    Some((0..n).map(|i| pick >> i & 1 == 1).collect())
}

/// Largest set in ascending-φ order that meets the budgets and `μ`.
fn greedy_fill(inst: &Instance<'_>, lambda: &[f64], cands: &Candidates, rb: &RoundBudget, mu: f64) -> Vec<bool> {
    let n = inst.profiles.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| inst.phi[a].total_cmp(&inst.phi[b]).then(a.cmp(&b)));
    let mut sel = vec![false; n];
    for &i in &order {
        sel[i] = true;
        let ok = cands.feasible(sel.iter().enumerate().filter_map(|(j, &a)| a.then_some(j)), rb)
            && mu_of(inst, &sel, lambda) <= mu * (1.0 + 1e-12) + 1e-300;
        if !ok {
            sel[i] = false;
        }
    }
    sel
}

/// Pick the selection for one round. `incumbent` seeds the greedy
/// alternation and is returned unchanged when nothing better is found.
pub fn select_clients(
    inst: &Instance<'_>,
    lambda: &[f64],
    power: &[f64],
    freq: &[f64],
    rb: &RoundBudget,
    mode: SelectionMode,
    incumbent: &[bool],
    max_iter: usize,
) -> Result<SelectionState> {
    let n = inst.profiles.len();
    let cands = Candidates::new(inst, lambda, power, freq)?;
    let exhaustive_mode = match mode {
        SelectionMode::Auto => n <= EXHAUSTIVE_LIMIT,
        SelectionMode::Exhaustive => {
            if n > HARD_EXHAUSTIVE_LIMIT {
                return Err(OptimizerError::InvalidArgument(format!(
                    "exhaustive selection over {n} clients exceeds the limit of {HARD_EXHAUSTIVE_LIMIT}"
                )));
            }
            true
        }
        SelectionMode::Greedy => false,
    };

    let finish = |selected: Vec<bool>, iterations| {
        let objective = round_objective(inst, &selected, lambda).unwrap_or(f64::INFINITY);
        SelectionState {
            mu: mu_of(inst, &selected, lambda),
            selected,
            objective,
            iterations,
        }
    };

    if exhaustive_mode {
        let sel = exhaustive(inst, lambda, &cands, rb)
            .ok_or_else(|| OptimizerError::InfeasibleSubproblem("no feasible client subset".into()))?;
        return Ok(finish(sel, 1));
    }

    let incumbent_ok = incumbent.iter().any(|&a| a)
        && cands.feasible(incumbent.iter().enumerate().filter_map(|(j, &a)| a.then_some(j)), rb);
    let mut a = if incumbent_ok {
        incumbent.to_vec()
    } else {
        greedy_fill(inst, lambda, &cands, rb, f64::INFINITY)
    };
    if !a.iter().any(|&x| x) {
        return Err(OptimizerError::InfeasibleSubproblem("no feasible client subset".into()));
    }
    let mut best = finish(a.clone(), 0);
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mu = mu_of(inst, &a, lambda);
        let next = greedy_fill(inst, lambda, &cands, rb, mu);
        if next == a || !next.iter().any(|&x| x) {
            break;
        }
        a = next;
        let state = finish(a.clone(), iterations);
        if state.objective < best.objective {
            best = state;
        }
    }
    best.iterations = iterations;
    Ok(best)
}
