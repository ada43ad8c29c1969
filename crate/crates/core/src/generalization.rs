//! Entropy, cross-entropy and KL divergence over label distributions, and the
//! per-client generalization statement φ built from them.
//!
//! All quantities are in nats.

use thiserror::Error;

use crate::datasets::LabelDistribution;

#[derive(Debug, Error, PartialEq)]
pub enum InfoError {
    #[error("length mismatch: {0} vs {1} classes")]
    LengthMismatch(usize, usize),
    #[error("q has zero mass at class {class} where p = {p}")]
    ZeroSupport { class: usize, p: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("generalization statement has a pole: 1 - D_test * sqrt(2 KL) = 0 (KL = {kl})")]
    Pole { kl: f64 },
}

pub type Result<T> = std::result::Result<T, InfoError>;

/// Sign of `1 - D_test * sqrt(2 KL)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Denominator positive.
    Regular,
    /// Denominator non-positive; the bound falls back to the `1/p′` case.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralizationStatement {
    pub phi: f64,
    pub kl: f64,
    pub branch: Branch,
}

fn check_len(p: &LabelDistribution, q: &LabelDistribution) -> Result<()> {
    if p.num_classes() != q.num_classes() {
        return Err(InfoError::LengthMismatch(p.num_classes(), q.num_classes()));
    }
    Ok(())
}

/// Shannon entropy `-Σ p ln p` with `0 ln 0 = 0`.
pub fn entropy(dist: &LabelDistribution) -> f64 {
    -dist
        .probs()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// `-Σ p ln q`.
pub fn cross_entropy(p: &LabelDistribution, q: &LabelDistribution) -> Result<f64> {
    check_len(p, q)?;
    let mut acc = 0.0;
    for (class, (&pi, &qi)) in p.probs().iter().zip(q.probs()).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(InfoError::ZeroSupport { class, p: pi });
        }
        acc -= pi * qi.ln();
    }
    Ok(acc)
}

/// `Σ p ln(p/q)`, computed termwise so it is exactly zero when `p == q`.
pub fn kl_divergence(p: &LabelDistribution, q: &LabelDistribution) -> Result<f64> {
    check_len(p, q)?;
    let mut acc = 0.0;
    for (class, (&pi, &qi)) in p.probs().iter().zip(q.probs()).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(InfoError::ZeroSupport { class, p: pi });
        }
        acc += pi * (pi / qi).ln();
    }
    // Rounding can leave a tiny negative residue for near-identical inputs.
    Ok(acc.max(0.0))
}

/// The "mutual information" term `I` between train and test marginals,
/// defined through `H(p_test) - I = KL(p_train || p_test)`, i.e.
/// `I = H(p_train) + H(p_test) - H(p_train, p_test)`.
pub fn mutual_info_identity(p_train: &LabelDistribution, p_test: &LabelDistribution) -> Result<f64> {
    Ok(entropy(p_train) + entropy(p_test) - cross_entropy(p_train, p_test)?)
}

/// φ = ((D_train + D_test) / p′) · | r / (1 - D_test · r) |, r = sqrt(2 KL).
///
/// `p′` is the least-frequent-class probability of the training distribution.
/// An exact pole (`1 - D_test · r == 0`) is reported as [`InfoError::Pole`].
pub fn generalization_statement(
    p_train: &LabelDistribution,
    p_test: &LabelDistribution,
    d_train: usize,
    d_test: usize,
) -> Result<GeneralizationStatement> {
    if d_train == 0 || d_test == 0 {
        return Err(InfoError::InvalidArgument(format!(
            "train and test sizes must be >= 1 (got {d_train}, {d_test})"
        )));
    }
    let p_least = p_train.least_freq_prob();
    if !(p_least > 0.0 && p_least.is_finite()) {
        return Err(InfoError::InvalidArgument(
            "training distribution has no positive mass".into(),
        ));
    }
    let kl = kl_divergence(p_train, p_test)?;
    let r = (2.0 * kl).sqrt();
    let denom = 1.0 - d_test as f64 * r;
    let branch = if denom > 0.0 {
        Branch::Regular
    } else {
        Branch::Degenerate
    };
    if kl == 0.0 {
        return Ok(GeneralizationStatement {
            phi: 0.0,
            kl,
            branch,
        });
    }
    if denom == 0.0 {
        return Err(InfoError::Pole { kl });
    }
    let phi = (d_train + d_test) as f64 / p_least * (r / denom).abs();
    Ok(GeneralizationStatement { phi, kl, branch })
}

/// Divide every φ by the largest one. All-zero input stays all-zero.
pub fn normalize_phis(phis: &[f64]) -> Vec<f64> {
    let max = phis.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        phis.iter().map(|p| p / max).collect()
    } else {
        phis.to_vec()
    }
}
