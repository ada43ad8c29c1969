//! Pruning ratios by linear programming with selection, power and frequency
//! fixed.

use crate::cost;

use super::lp::{solve_lp, LpProblem, LpStatus};
use super::{Instance, OptimizerError, Result, RoundBudget};

/// Minimize the total pruning of the selected clients subject to the round
/// energy budget and each client's delay budget, all affine in `λ`.
/// Deselected clients get `λ = 0`.
pub fn lp_pruning(
    inst: &Instance<'_>,
    selected: &[bool],
    power: &[f64],
    freq: &[f64],
    rb: &RoundBudget,
) -> Result<Vec<f64>> {
    let ids: Vec<usize> = selected
        .iter()
        .enumerate()
        .filter_map(|(n, &a)| a.then_some(n))
        .collect();
    if ids.is_empty() {
        return Err(OptimizerError::InvalidArgument("no client selected".into()));
    }
    let k = ids.len();
    let broadcast = cost::broadcast_energy(inst.profiles, inst.channel)?;

    let mut energy_row = vec![0.0; k];
    let mut energy_rhs = rb.energy - broadcast;
    let mut a = Vec::with_capacity(k + 1);
    let mut b = Vec::with_capacity(k + 1);
    for (j, &n) in ids.iter().enumerate() {
        let p = &inst.profiles[n];
        let full = cost::client_cost(0.0, power[n], freq[n], p, inst.channel)?;
        let down = cost::downlink_delay(p, inst.channel)?;
        let scaling_delay = full.delay() - down;
        energy_row[j] = -full.energy();
        energy_rhs -= full.energy();
        let mut row = vec![0.0; k];
        row[j] = -scaling_delay;
        a.push(row);
        b.push(rb.delay - down - scaling_delay);
    }
    a.push(energy_row);
    b.push(energy_rhs);

    let problem = LpProblem {
        c: vec![1.0; k],
        a,
        b,
        lo: vec![0.0; k],
        hi: vec![inst.lambda_max; k],
    };
    let sol = solve_lp(&problem)?;
    if sol.status != LpStatus::Optimal {
        return Err(OptimizerError::InfeasibleSubproblem(format!(
            "pruning LP is {:?}",
            sol.status
        )));
    }
    let mut lambda = vec![0.0; selected.len()];
    for (j, &n) in ids.iter().enumerate() {
        lambda[n] = sol.x[j];
    }
    Ok(lambda)
}
