//! Feasible starting point for the alternating optimization.

use crate::cost::{self, RoundDecision};

use super::{Constraint, Instance, OptimizerError, Pins, Result, RoundBudget, ROUND_TOL};

/// All clients at maximal pruning and power, each at the slowest CPU clock
/// that meets the round delay; clients are dropped, most energy-hungry
/// first, until the round fits its energy budget.
pub fn initialize(inst: &Instance<'_>, rb: &RoundBudget, pins: &Pins) -> Result<RoundDecision> {
    let n = inst.profiles.len();
    if !(rb.delay > 0.0) {
        return Err(OptimizerError::Infeasible {
            constraint: Constraint::Delay,
            detail: format!("per-round delay budget is {}", rb.delay),
        });
    }
    if !(rb.energy > 0.0) {
        return Err(OptimizerError::Infeasible {
            constraint: Constraint::Energy,
            detail: format!("per-round energy budget is {}", rb.energy),
        });
    }
    let lambda = pins.lambda.unwrap_or(inst.lambda_max);
    let mut d = RoundDecision {
        selected: vec![true; n],
        lambda: vec![lambda; n],
        power: inst
            .profiles
            .iter()
            .map(|p| pins.power.map_or(p.p_max, |v| v.min(p.p_max)))
            .collect(),
        freq: inst.profiles.iter().map(|p| p.f_max).collect(),
    };

    let mut delay_ok = vec![true; n];
    for (i, p) in inst.profiles.iter().enumerate() {
        let fixed = cost::uplink_delay(lambda, d.power[i], p, inst.channel)
            .and_then(|up| Ok(up + cost::downlink_delay(p, inst.channel)?));
        let Ok(fixed) = fixed else {
            delay_ok[i] = false;
            continue;
        };
        let avail = rb.delay - fixed;
        let work = (1.0 - lambda) * p.full_cycles();
        if avail <= 0.0 {
            delay_ok[i] = false;
            continue;
        }
        let f_needed = work / avail;
        if f_needed > p.f_max * (1.0 + ROUND_TOL) {
            delay_ok[i] = false;
        } else if !pins.freq_at_max {
            d.freq[i] = f_needed.min(p.f_max);
        }
    }

    if pins.all_selected {
        if let Some(i) = delay_ok.iter().position(|&ok| !ok) {
            return Err(OptimizerError::Infeasible {
                constraint: Constraint::Delay,
                detail: format!("client {i} cannot meet the round delay with all clients pinned"),
            });
        }
    } else {
        for (i, ok) in delay_ok.iter().enumerate() {
            d.selected[i] = *ok;
        }
    }
    if !d.selected.iter().any(|&a| a) {
        return Err(OptimizerError::Infeasible {
            constraint: Constraint::Delay,
            detail: "no client meets the round delay at maximal power and frequency".into(),
        });
    }

    let broadcast = cost::broadcast_energy(inst.profiles, inst.channel)?;
    if broadcast > rb.energy * (1.0 + ROUND_TOL) {
        return Err(OptimizerError::Infeasible {
            constraint: Constraint::Energy,
            detail: format!("broadcast alone needs {broadcast} J of a {} J round budget", rb.energy),
        });
    }
    let energy: Vec<f64> = (0..n)
        .map(|i| {
            if d.selected[i] {
                cost::client_cost(d.lambda[i], d.power[i], d.freq[i], &inst.profiles[i], inst.channel)
                    .map(|c| c.energy())
            } else {
                Ok(0.0)
            }
        })
        .collect::<std::result::Result<_, _>>()?;
    let mut total = broadcast + energy.iter().sum::<f64>();
    while total > rb.energy * (1.0 + ROUND_TOL) {
        if pins.all_selected {
            return Err(OptimizerError::Infeasible {
                constraint: Constraint::Energy,
                detail: format!("all clients together need {total} J of a {} J round budget", rb.energy),
            });
        }
        let worst = (0..n)
            .filter(|&i| d.selected[i])
            .max_by(|&a, &b| energy[a].total_cmp(&energy[b]).then(a.cmp(&b)))
            .expect("selection nonempty");
        d.selected[worst] = false;
        total = broadcast + (0..n).filter(|&i| d.selected[i]).map(|i| energy[i]).sum::<f64>();
        if !d.selected.iter().any(|&a| a) {
            return Err(OptimizerError::Infeasible {
                constraint: Constraint::Energy,
                detail: "no single client fits the round energy budget".into(),
            });
        }
    }
    Ok(d)
}
