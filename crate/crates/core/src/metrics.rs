//! Bias measures over a joint (target, spurious) distribution.
//!
//! The central quantity is the per-feature **bias magnitude**: the KL
//! divergence of the target marginal from the target distribution
//! conditioned on one spurious value, in nats. Features whose magnitude
//! exceeds a threshold form the biased set; the spurious-marginal mass of
//! that set is the dataset's **bias prevalence**. For binary joints the
//! magnitude simplifies to a probability gap and normalizes to the ratio
//! **phi**. Three prior measures (two conditional probabilities and a
//! conditional entropy) are computed alongside for comparison.

use std::collections::BTreeMap;

use crate::dist::{self, JointDist};
use crate::error::{Error, Result};

/// Default decision threshold on bias magnitude, in nats.
pub const DEFAULT_THETA: f64 = 0.1;

/// The prior-work correlation measures.
#[derive(Debug, Clone)]
pub struct PriorMeasures {
    /// `corr_tcp[s][t]` = P(y^s = s | y^t = t); 0.0 where row t has no mass.
    pub corr_tcp: Vec<Vec<f64>>,
    /// `corr_scp[s][t]` = P(y^t = t | y^s = s); 0.0 where column s has no mass.
    pub corr_scp: Vec<Vec<f64>>,
    /// H(y^t | y^s) in nats.
    pub corr_sce: f64,
}

/// Everything [`analyze`] knows about one joint distribution.
#[derive(Debug, Clone)]
pub struct BiasReport {
    /// Threshold the biased set was computed at.
    pub threshold: f64,
    /// Per spurious value, in nats. `f64::INFINITY` when the conditional's
    /// support is strictly inside the marginal's; 0.0 for zero-mass columns.
    pub magnitudes: Vec<f64>,
    /// Sorted indices whose magnitude strictly exceeds the threshold.
    pub biased_set: Vec<usize>,
    /// Spurious-marginal mass of the biased set.
    pub prevalence: f64,
    /// Most likely target class per positive-mass spurious value
    /// (conditional argmax, ties to the lowest index).
    pub correlated_class: BTreeMap<usize, usize>,
    /// Normalized magnitudes; present only for 2x2 joints on which every
    /// column has mass and no target class has marginal probability 1.
    pub phi: Option<Vec<f64>>,
    pub prior: PriorMeasures,
}

/// rho*_s = KL(P(y^t) || P(y^t | y^s = s)) in nats.
///
/// # Errors
///
/// `ZeroMassColumn` for an unobserved spurious value; `SupportMismatch`
/// when the conditional has zeros where the marginal is positive (the
/// divergence is infinite — see [`biased_feature_set`] for the lenient
/// reading).
pub fn bias_magnitude(joint: &JointDist, s: usize) -> Result<f64> {
    let marginal = dist::marginal_target(joint);
    let conditional = dist::conditional_target_given_spurious(joint, s)?;
    dist::kl_divergence(&marginal, &conditional)
}

fn require_binary(joint: &JointDist) -> Result<()> {
    if joint.n_target() == 2 && joint.n_spurious() == 2 {
        Ok(())
    } else {
        Err(Error::NotBinary {
            rows: joint.n_target(),
            cols: joint.n_spurious(),
        })
    }
}

/// Conditional-argmax target class of column `s`, ties to the lowest index.
fn class_of(joint: &JointDist, s: usize) -> Result<usize> {
    let conditional = dist::conditional_target_given_spurious(joint, s)?;
    let mut best = 0;
    for (t, &p) in conditional.probs().iter().enumerate() {
        if p > conditional.get(best) {
            best = t;
        }
    }
    Ok(best)
}

/// Simplified binary magnitude rho_s = tau_s - p^t: the conditional minus
/// marginal probability of the correlated class. Negative when the feature
/// is anti-correlated with its own majority class.
pub fn simplified_magnitude(joint: &JointDist, s: usize) -> Result<f64> {
    require_binary(joint)?;
    let g = class_of(joint, s)?;
    let conditional = dist::conditional_target_given_spurious(joint, s)?;
    Ok(conditional.get(g) - dist::marginal_target(joint).get(g))
}

/// phi_s = rho_s / (1 - p^t_{g(s)}): the simplified magnitude normalized by
/// its theoretical maximum for feature s.
///
/// # Errors
///
/// `NotBinary`, `ZeroMassColumn`, and `DegenerateMarginal` when the
/// correlated class already has all the marginal mass.
pub fn phi_ratio(joint: &JointDist, s: usize) -> Result<f64> {
    require_binary(joint)?;
    let g = class_of(joint, s)?;
    let headroom = 1.0 - dist::marginal_target(joint).get(g);
    if headroom <= 0.0 {
        return Err(Error::DegenerateMarginal { class: g });
    }
    Ok(simplified_magnitude(joint, s)? / headroom)
}

/// Magnitude with the two non-fatal cases folded in: `None` for a zero-mass
/// column (an unobserved feature cannot be biased), `+inf` for a support
/// mismatch (the divergence really is infinite).
fn magnitude_lenient(joint: &JointDist, s: usize) -> Option<f64> {
    match bias_magnitude(joint, s) {
        Ok(m) => Some(m),
        Err(Error::SupportMismatch { .. }) => Some(f64::INFINITY),
        Err(_) => None,
    }
}

/// B(theta) = { s : rho*_s > theta }, strictly. Zero-mass columns are
/// excluded; infinite-divergence columns are included.
pub fn biased_feature_set(joint: &JointDist, theta: f64) -> Vec<usize> {
    (0..joint.n_spurious())
        .filter(|&s| magnitude_lenient(joint, s).is_some_and(|m| m > theta))
        .collect()
}

/// Spurious-marginal mass of the biased set; in [0, 1].
pub fn bias_prevalence(joint: &JointDist, theta: f64) -> f64 {
    let spurious = dist::marginal_spurious(joint);
    biased_feature_set(joint, theta)
        .into_iter()
        .map(|s| spurious.get(s))
        .sum()
}

/// P(y^s = s | y^t = t).
pub fn corr_tcp(joint: &JointDist, s: usize, t: usize) -> Result<f64> {
    let mass = joint.row_mass(t);
    if mass <= 0.0 {
        return Err(Error::ZeroMassRow { index: t });
    }
    Ok(joint.cell(t, s) / mass)
}

/// P(y^t = t | y^s = s).
pub fn corr_scp(joint: &JointDist, s: usize, t: usize) -> Result<f64> {
    let mass = joint.column_mass(s);
    if mass <= 0.0 {
        return Err(Error::ZeroMassColumn { index: s });
    }
    Ok(joint.cell(t, s) / mass)
}

/// H(y^t | y^s) in nats.
pub fn corr_sce(joint: &JointDist) -> f64 {
    dist::conditional_entropy(joint)
}

/// g recovered from data: the conditional argmax per positive-mass column,
/// ties to the lowest target index. Zero-mass columns are absent.
pub fn correlated_class_map(joint: &JointDist) -> BTreeMap<usize, usize> {
    (0..joint.n_spurious())
        .filter_map(|s| class_of(joint, s).ok().map(|g| (s, g)))
        .collect()
}

/// Bundles every measure into one report.
///
/// # Errors
///
/// `InvalidParams` for a negative or non-finite threshold.
pub fn analyze(joint: &JointDist, theta: f64) -> Result<BiasReport> {
    if !theta.is_finite() || theta < 0.0 {
        return Err(Error::InvalidParams {
            reason: format!("threshold must be finite and nonnegative, got {theta}"),
        });
    }
    let n_s = joint.n_spurious();
    let n_t = joint.n_target();

    let magnitudes: Vec<f64> = (0..n_s)
        .map(|s| magnitude_lenient(joint, s).unwrap_or(0.0))
        .collect();
    let biased_set = biased_feature_set(joint, theta);
    let spurious = dist::marginal_spurious(joint);
    let prevalence = biased_set.iter().map(|&s| spurious.get(s)).sum();

    let phi = if n_t == 2 && n_s == 2 {
        (0..n_s)
            .map(|s| phi_ratio(joint, s))
            .collect::<Result<Vec<f64>>>()
            .ok()
    } else {
        None
    };

    let corr_tcp_table = (0..n_s)
        .map(|s| {
            (0..n_t)
                .map(|t| corr_tcp(joint, s, t).unwrap_or(0.0))
                .collect()
        })
        .collect();
    let corr_scp_table = (0..n_s)
        .map(|s| {
            (0..n_t)
                .map(|t| corr_scp(joint, s, t).unwrap_or(0.0))
                .collect()
        })
        .collect();

    Ok(BiasReport {
        threshold: theta,
        magnitudes,
        biased_set,
        prevalence,
        correlated_class: correlated_class_map(joint),
        phi,
        prior: PriorMeasures {
            corr_tcp: corr_tcp_table,
            corr_scp: corr_scp_table,
            corr_sce: corr_sce(joint),
        },
    })
}
