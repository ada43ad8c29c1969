//! Convergence bound θ and the per-round generalization-gap diagnostic.

use thiserror::Error;

use crate::cost::RoundDecision;

#[derive(Debug, Error, PartialEq)]
pub enum BoundError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("round {round} selects no client")]
    EmptyRound { round: usize },
    #[error("round {round}: decision covers {got} clients, phi has {expected}")]
    LengthMismatch { round: usize, got: usize, expected: usize },
}

pub type Result<T> = std::result::Result<T, BoundError>;

/// Raw inputs to the bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    /// Lipschitz constant L.
    pub lipschitz: f64,
    /// Gradient second-moment bound A².
    pub grad_sq: f64,
    /// Pruning-error second-moment bound B².
    pub model_sq: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Index of the last round; training runs rounds `0..=last_round`.
    pub last_round: usize,
    /// Initial optimality gap of the loss.
    pub loss_gap: f64,
}

impl Default for BoundInputs {
    fn default() -> Self {
        Self {
            lipschitz: 10.0,
            grad_sq: 100.0,
            model_sq: 50.0,
            learning_rate: 0.01,
            batch_size: 32,
            last_round: 99,
            loss_gap: 2.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub inputs: BoundInputs,
    pub alpha: f64,
    pub beta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

pub fn derive_constants(inputs: &BoundInputs) -> Result<BoundConstants> {
    let nonneg = [
        ("lipschitz", inputs.lipschitz),
        ("grad_sq", inputs.grad_sq),
        ("model_sq", inputs.model_sq),
        ("loss_gap", inputs.loss_gap),
    ];
    for (name, v) in nonneg {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(BoundError::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")));
        }
    }
    let eta = inputs.learning_rate;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(BoundError::InvalidArgument(format!("learning_rate must be > 0, got {eta}")));
    }
    if inputs.batch_size == 0 {
        return Err(BoundError::InvalidArgument("batch_size must be >= 1".into()));
    }
    let rounds = inputs.last_round as f64 + 1.0;
    let z = inputs.batch_size as f64;
    let l = inputs.lipschitz;
    Ok(BoundConstants {
        inputs: *inputs,
        alpha: 2.0 * inputs.loss_gap / (eta * rounds),
        beta: eta.powi(3) * inputs.grad_sq * (l + 1.0) / (z * rounds),
        gamma1: eta * inputs.grad_sq / (z * rounds),
        gamma2: l * l * inputs.model_sq / rounds,
    })
}

/// The three λ/a-dependent pieces of one round's contribution to θ.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RoundTerms {
    /// `β / Σa`
    pub participation: f64,
    /// `γ₁ (Σaφ)² / Σa`
    pub generalization: f64,
    /// `γ₂ Σaλ / Σa`
    pub pruning: f64,
}

impl RoundTerms {
    pub fn total(&self) -> f64 {
        self.participation + self.generalization + self.pruning
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundValue {
    pub theta: f64,
    pub per_round_terms: Vec<RoundTerms>,
}

/// Per-round terms from raw selection and pruning vectors.
pub fn round_terms(selected: &[bool], lambda: &[f64], phi: &[f64], c: &BoundConstants) -> Option<RoundTerms> {
    let mut k = 0usize;
    let mut phi_sum = 0.0;
    let mut lambda_sum = 0.0;
    for ((&a, &l), &p) in selected.iter().zip(lambda).zip(phi) {
        if a {
            k += 1;
            phi_sum += p;
            lambda_sum += l;
        }
    }
    if k == 0 {
        return None;
    }
    let k = k as f64;
    Some(RoundTerms {
        participation: c.beta / k,
        generalization: c.gamma1 * phi_sum * phi_sum / k,
        pruning: c.gamma2 * lambda_sum / k,
    })
}

/// θ = α + Σₛ [β + γ₁(Σaφ)² + γ₂Σaλ] / Σa.
pub fn theta(decisions: &[RoundDecision], phi: &[f64], constants: &BoundConstants) -> Result<BoundValue> {
    let mut per_round_terms = Vec::with_capacity(decisions.len());
    for (round, d) in decisions.iter().enumerate() {
        if d.selected.len() != phi.len() || d.lambda.len() != phi.len() {
            return Err(BoundError::LengthMismatch {
                round,
                got: d.selected.len(),
                expected: phi.len(),
            });
        }
        let t = round_terms(&d.selected, &d.lambda, phi, constants).ok_or(BoundError::EmptyRound { round })?;
        per_round_terms.push(t);
    }
    let theta = constants.alpha + per_round_terms.iter().map(RoundTerms::total).sum::<f64>();
    Ok(BoundValue { theta, per_round_terms })
}

/// `½ (η² + (Σaφ)²) · E‖G‖²`.
pub fn gen_gap_step_bound(selected: &[bool], phi: &[f64], eta: f64, grad_norm_sq_estimate: f64) -> f64 {
    let s: f64 = selected.iter().zip(phi).filter(|(&a, _)| a).map(|(_, &p)| p).sum();
    0.5 * (eta * eta + s * s) * grad_norm_sq_estimate
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit_constants(alpha: f64, beta: f64, gamma1: f64, gamma2: f64) -> BoundConstants {
        BoundConstants {
            inputs: BoundInputs::default(),
            alpha,
            beta,
            gamma1,
            gamma2,
        }
    }

    fn decision(selected: Vec<bool>, lambda: Vec<f64>) -> RoundDecision {
        let n = selected.len();
        RoundDecision {
            selected,
            lambda,
            power: vec![0.5; n],
            freq: vec![5e8; n],
        }
    }

    #[test]
    fn alpha_example() {
        let c = derive_constants(&BoundInputs {
            loss_gap: 2.3,
            learning_rate: 0.01,
            last_round: 99,
            ..Default::default()
        })
        .unwrap();
        assert_relative_eq!(c.alpha, 4.6, max_relative = 1e-12);
    }

    #[test]
    fn zero_grad_bound() {
        let c = derive_constants(&BoundInputs {
            grad_sq: 0.0,
            ..Default::default()
        })
        .unwrap();
        assert_eq!((c.beta, c.gamma1), (0.0, 0.0));
    }

    #[test]
    fn constants_vanish_with_rounds() {
        let at = |s| {
            derive_constants(&BoundInputs {
                last_round: s,
                ..Default::default()
            })
            .unwrap()
        };
        let (a, b) = (at(999), at(999_999));
        for (x, y) in [(a.alpha, b.alpha), (a.beta, b.beta), (a.gamma1, b.gamma1), (a.gamma2, b.gamma2)] {
            assert_relative_eq!(y / x, 1e-3, max_relative = 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        for bad in [
            BoundInputs { learning_rate: 0.0, ..Default::default() },
            BoundInputs { batch_size: 0, ..Default::default() },
            BoundInputs { lipschitz: -1.0, ..Default::default() },
            BoundInputs { loss_gap: f64::NAN, ..Default::default() },
        ] {
            assert!(derive_constants(&bad).is_err());
        }
    }

    #[test]
    fn theta_single_round_surviving_terms() {
        let c = derive_constants(&BoundInputs { last_round: 0, ..Default::default() }).unwrap();
        let d = decision(vec![true; 4], vec![0.0; 4]);
        let v = theta(&[d], &[0.0; 4], &c).unwrap();
        assert_relative_eq!(v.theta, c.alpha + c.beta / 4.0, max_relative = 1e-14);
    }

    #[test]
    fn theta_worked_example() {
        let c = unit_constants(0.0, 1.0, 1.0, 1.0);
        let d = decision(vec![true, true], vec![0.1, 0.3]);
        let v = theta(&[d], &[1.0, 2.0], &c).unwrap();
        assert_relative_eq!(v.theta, 5.2, max_relative = 1e-14);
        let sum: f64 = v.per_round_terms.iter().map(RoundTerms::total).sum();
        assert_relative_eq!(v.theta, c.alpha + sum, epsilon = 1e-12);
    }

    #[test]
    fn theta_empty_round() {
        let c = unit_constants(0.0, 1.0, 1.0, 1.0);
        let ok = decision(vec![true, false], vec![0.0; 2]);
        let empty = decision(vec![false, false], vec![0.0; 2]);
        assert_eq!(theta(&[ok, empty], &[1.0, 1.0], &c), Err(BoundError::EmptyRound { round: 1 }));
    }

    #[test]
    fn equal_phi_interior_optimum() {
        let (beta, gamma1, phi) = (50.0, 0.5, 1.0);
        let c = unit_constants(0.0, beta, gamma1, 0.0);
        let n = 20;
        let best = (1..=n)
            .min_by(|&a, &b| {
                let f = |k: usize| {
                    let sel: Vec<bool> = (0..n).map(|i| i < k).collect();
                    theta(&[decision(sel, vec![0.0; n])], &vec![phi; n], &c).unwrap().theta
                };
                f(a).total_cmp(&f(b))
            })
            .unwrap();
        assert_eq!(best, 10);
        assert_relative_eq!((beta / (gamma1 * phi * phi)).sqrt(), 10.0);
    }

    #[test]
    fn gen_gap_examples() {
        assert_relative_eq!(gen_gap_step_bound(&[true, true], &[0.0, 0.0], 0.01, 4.0), 2e-4, max_relative = 1e-12);
        assert_relative_eq!(gen_gap_step_bound(&[true, true], &[1.0, 2.0], 0.0, 1.0), 4.5);
        assert_eq!(gen_gap_step_bound(&[true], &[3.0], 0.01, 0.0), 0.0);
    }

    proptest! {
        #[test]
        fn theta_nondecreasing_in_lambda(
            lambda in prop::collection::vec(0.0f64..0.5, 5),
            phi in prop::collection::vec(0.0f64..10.0, 5),
            mask in prop::collection::vec(any::<bool>(), 5),
            which in 0usize..5,
        ) {
            prop_assume!(mask.iter().any(|&a| a));
            let c = derive_constants(&BoundInputs::default()).unwrap();
            let base = decision(mask.clone(), lambda.clone());
            let mut bumped = base.clone();
            bumped.lambda[which] += 1e-6;
            let t0 = theta(&[base], &phi, &c).unwrap().theta;
            let t1 = theta(&[bumped], &phi, &c).unwrap().theta;
            prop_assert!(t1 - t0 >= -1e-10);
        }

        #[test]
        fn uniform_phi_scaling(phi in prop::collection::vec(0.0f64..5.0, 4), scale in 0.1f64..10.0) {
            let c = unit_constants(0.0, 1.0, 1.0, 1.0);
            let d = decision(vec![true, true, false, true], vec![0.2; 4]);
            let scaled: Vec<f64> = phi.iter().map(|p| p * scale).collect();
            let a = theta(&[d.clone()], &phi, &c).unwrap().per_round_terms[0];
            let b = theta(&[d], &scaled, &c).unwrap().per_round_terms[0];
            prop_assert!((b.generalization - scale * scale * a.generalization).abs() <= 1e-9 * b.generalization.max(1.0));
        }
    }
}
