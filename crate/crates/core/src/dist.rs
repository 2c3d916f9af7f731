//! Exact categorical-distribution arithmetic: marginals, conditionals,
//! divergences and entropies. Everything downstream (bias measures, the
//! synthesizer, the verification oracles) is built on these few functions.
//!
//! All logarithms are natural; entropies and divergences are in nats.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Absolute tolerance for "sums to one" invariant checks. Inputs within the
/// tolerance are renormalized exactly on construction.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// A probability vector over at least two categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CategoricalDist {
    probs: Vec<f64>,
}

impl CategoricalDist {
    /// # Errors
    ///
    /// `TooFewCategories` for fewer than two entries, `NegativeEntry` for a
    /// negative or non-finite entry, `MassMismatch` when the sum strays from
    /// one by more than [`MASS_TOLERANCE`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::TooFewCategories { len: probs.len() });
        }
        for &p in &probs {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::NegativeEntry { value: p });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::MassMismatch { sum });
        }
        Ok(CategoricalDist {
            probs: probs.into_iter().map(|p| p / sum).collect(),
        })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0 / n as f64; n])
    }

    /// Wraps a vector the caller guarantees is already a valid distribution
    /// (used for marginals of an already-validated joint).
    pub(crate) fn from_normalized(probs: Vec<f64>) -> Self {
        debug_assert!(probs.len() >= 2);
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        CategoricalDist { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, i: usize) -> f64 {
        self.probs[i]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        false // by construction: at least two categories
    }
}

impl TryFrom<Vec<f64>> for CategoricalDist {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        CategoricalDist::new(v)
    }
}

impl From<CategoricalDist> for Vec<f64> {
    fn from(d: CategoricalDist) -> Vec<f64> {
        d.probs
    }
}

/// A joint probability table over (target attribute, spurious attribute).
/// Rows index target values, columns index spurious values.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDist {
    table: Vec<Vec<f64>>,
    target_labels: Vec<String>,
    spurious_labels: Vec<String>,
}

impl JointDist {
    /// Validates shape (at least 2x2, rectangular), cell nonnegativity, label
    /// counts, and total mass; the table is renormalized on construction.
    pub fn new(
        table: Vec<Vec<f64>>,
        target_labels: Vec<String>,
        spurious_labels: Vec<String>,
    ) -> Result<Self> {
        let rows = table.len();
        let cols = table.first().map_or(0, Vec::len);
        if rows < 2 || cols < 2 {
            return Err(Error::TableTooSmall { rows, cols });
        }
        for (i, row) in table.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::RaggedTable {
                    row: i,
                    expected: cols,
                    found: row.len(),
                });
            }
            for &cell in row {
                if !cell.is_finite() || cell < 0.0 {
                    return Err(Error::NegativeEntry { value: cell });
                }
            }
        }
        if target_labels.len() != rows {
            return Err(Error::LabelMismatch {
                axis: "target",
                labels: target_labels.len(),
                dim: rows,
            });
        }
        if spurious_labels.len() != cols {
            return Err(Error::LabelMismatch {
                axis: "spurious",
                labels: spurious_labels.len(),
                dim: cols,
            });
        }
        let sum: f64 = table.iter().flatten().sum();
        if (sum - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::MassMismatch { sum });
        }
        let table = table
            .into_iter()
            .map(|row| row.into_iter().map(|c| c / sum).collect())
            .collect();
        Ok(JointDist {
            table,
            target_labels,
            spurious_labels,
        })
    }

    /// As [`JointDist::new`] with labels "0", "1", ... on both axes.
    pub fn from_table(table: Vec<Vec<f64>>) -> Result<Self> {
        let rows = table.len();
        let cols = table.first().map_or(0, Vec::len);
        let index_labels = |n: usize| (0..n).map(|i| i.to_string()).collect();
        Self::new(table, index_labels(rows), index_labels(cols))
    }

    pub fn n_target(&self) -> usize {
        self.table.len()
    }

    pub fn n_spurious(&self) -> usize {
        self.table[0].len()
    }

    pub fn cell(&self, t: usize, s: usize) -> f64 {
        self.table[t][s]
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.table
    }

    pub fn target_labels(&self) -> &[String] {
        &self.target_labels
    }

    pub fn spurious_labels(&self) -> &[String] {
        &self.spurious_labels
    }

    pub fn row_mass(&self, t: usize) -> f64 {
        self.table[t].iter().sum()
    }

    pub fn column_mass(&self, s: usize) -> f64 {
        self.table.iter().map(|row| row[s]).sum()
    }
}

/// P(y^t): row sums of the joint.
pub fn marginal_target(joint: &JointDist) -> CategoricalDist {
    CategoricalDist::from_normalized((0..joint.n_target()).map(|t| joint.row_mass(t)).collect())
}

/// P(y^s): column sums of the joint.
pub fn marginal_spurious(joint: &JointDist) -> CategoricalDist {
    CategoricalDist::from_normalized(
        (0..joint.n_spurious())
            .map(|s| joint.column_mass(s))
            .collect(),
    )
}

/// P(y^t | y^s = s), the column normalized by its mass.
///
/// # Errors
///
/// `ZeroMassColumn` when column `s` has no mass — an unobserved spurious
/// value has no conditional.
pub fn conditional_target_given_spurious(joint: &JointDist, s: usize) -> Result<CategoricalDist> {
    let mass = joint.column_mass(s);
    if mass <= 0.0 {
        return Err(Error::ZeroMassColumn { index: s });
    }
    Ok(CategoricalDist::from_normalized(
        joint.table().iter().map(|row| row[s] / mass).collect(),
    ))
}

/// KL(p || q) in nats, with the convention 0 ln 0 = 0.
///
/// # Errors
///
/// `LengthMismatch` for different arities; `SupportMismatch` when p puts
/// mass where q has none — the divergence is infinite and the caller must
/// decide what that means.
pub fn kl_divergence(p: &CategoricalDist, q: &CategoricalDist) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let mut sum = 0.0;
    for (i, (&pi, &qi)) in p.probs().iter().zip(q.probs()).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::SupportMismatch { index: i });
            }
            sum += pi * (pi / qi).ln();
        }
    }
    Ok(sum.max(0.0)) // clamp float dust on the p == q diagonal
}

/// Total variation distance, (1/2) sum |p - q|, in [0, 1].
pub fn total_variation(p: &CategoricalDist, q: &CategoricalDist) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(p.probs()
        .iter()
        .zip(q.probs())
        .map(|(&pi, &qi)| (pi - qi).abs())
        .sum::<f64>()
        / 2.0)
}

/// Shannon entropy in nats, with 0 ln 0 = 0.
pub fn entropy(p: &CategoricalDist) -> f64 {
    -p.probs()
        .iter()
        .filter(|&&pi| pi > 0.0)
        .map(|&pi| pi * pi.ln())
        .sum::<f64>()
}

/// H(y^t | y^s) = sum_s P(y^s = s) H(y^t | y^s = s). Zero-mass columns
/// contribute zero.
pub fn conditional_entropy(joint: &JointDist) -> f64 {
    let mut total = 0.0;
    for s in 0..joint.n_spurious() {
        let mass = joint.column_mass(s);
        if mass <= 0.0 {
            continue;
        }
        let h: f64 = joint
            .table()
            .iter()
            .map(|row| row[s] / mass)
            .filter(|&c| c > 0.0)
            .map(|c| -c * c.ln())
            .sum();
        total += mass * h;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LN_2: f64 = std::f64::consts::LN_2;

    fn dist(v: &[f64]) -> CategoricalDist {
        CategoricalDist::new(v.to_vec()).unwrap()
    }

    #[test]
    fn test_construction_rejects_bad_input() {
        assert!(matches!(
            CategoricalDist::new(vec![1.0]),
            Err(Error::TooFewCategories { len: 1 })
        ));
        assert!(matches!(
            CategoricalDist::new(vec![0.5, -0.5, 1.0]),
            Err(Error::NegativeEntry { .. })
        ));
        assert!(matches!(
            CategoricalDist::new(vec![0.5, 0.4]),
            Err(Error::MassMismatch { .. })
        ));
        assert!(matches!(
            CategoricalDist::new(vec![0.5, f64::NAN]),
            Err(Error::NegativeEntry { .. })
        ));
    }

    #[test]
    fn test_construction_renormalizes_within_tolerance() {
        let d = CategoricalDist::new(vec![0.5, 0.5 + 5e-13]).unwrap();
        assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn test_joint_shape_validation() {
        assert!(matches!(
            JointDist::from_table(vec![vec![1.0], vec![0.0]]),
            Err(Error::TableTooSmall { .. })
        ));
        assert!(matches!(
            JointDist::from_table(vec![vec![0.5, 0.5], vec![0.0]]),
            Err(Error::RaggedTable { row: 1, .. })
        ));
        let bad_labels = JointDist::new(
            vec![vec![0.25, 0.25], vec![0.25, 0.25]],
            vec!["a".into()],
            vec!["x".into(), "y".into()],
        );
        assert!(matches!(bad_labels, Err(Error::LabelMismatch { .. })));
    }

    #[test]
    fn test_marginals() {
        let j = JointDist::from_table(vec![vec![0.4, 0.1], vec![0.2, 0.3]]).unwrap();
        assert_eq!(marginal_target(&j).probs(), &[0.5, 0.5]);
        let ms = marginal_spurious(&j);
        assert!((ms.get(0) - 0.6).abs() < 1e-15);
        assert!((ms.get(1) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn test_conditional_column() {
        let j = JointDist::from_table(vec![vec![0.4, 0.1], vec![0.2, 0.3]]).unwrap();
        let c0 = conditional_target_given_spurious(&j, 0).unwrap();
        assert!((c0.get(0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((c0.get(1) - 1.0 / 3.0).abs() < 1e-15);

        let uniform = JointDist::from_table(vec![vec![0.25, 0.25], vec![0.25, 0.25]]).unwrap();
        let c1 = conditional_target_given_spurious(&uniform, 1).unwrap();
        assert_eq!(c1.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn test_conditional_zero_mass_column() {
        let j = JointDist::from_table(vec![vec![0.5, 0.0], vec![0.5, 0.0]]).unwrap();
        assert!(matches!(
            conditional_target_given_spurious(&j, 1),
            Err(Error::ZeroMassColumn { index: 1 })
        ));
    }

    #[test]
    fn test_kl_frozen_values() {
        // Independently computed: 0.5 ln(0.5/0.9) + 0.5 ln(0.5/0.1).
        let kl = kl_divergence(&dist(&[0.5, 0.5]), &dist(&[0.9, 0.1])).unwrap();
        assert!((kl - 0.510_825_623_765_990_7).abs() < 1e-12, "kl = {kl}");

        let degenerate = kl_divergence(&dist(&[1.0, 0.0]), &dist(&[0.5, 0.5])).unwrap();
        assert!((degenerate - LN_2).abs() < 1e-12);

        let same = kl_divergence(&dist(&[0.3, 0.7]), &dist(&[0.3, 0.7])).unwrap();
        assert_eq!(same, 0.0);
    }

    #[test]
    fn test_kl_support_mismatch() {
        let err = kl_divergence(&dist(&[0.5, 0.5]), &dist(&[1.0, 0.0]));
        assert!(matches!(err, Err(Error::SupportMismatch { index: 1 })));
    }

    #[test]
    fn test_total_variation() {
        assert_eq!(
            total_variation(&dist(&[0.3, 0.7]), &dist(&[0.3, 0.7])).unwrap(),
            0.0
        );
        assert_eq!(
            total_variation(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0])).unwrap(),
            1.0
        );
        let tv = total_variation(&dist(&[0.98, 0.02]), &dist(&[0.1, 0.9])).unwrap();
        assert!((tv - 0.88).abs() < 1e-15);
        assert!(matches!(
            total_variation(&dist(&[0.5, 0.5]), &dist(&[0.2, 0.3, 0.5])),
            Err(Error::LengthMismatch { left: 2, right: 3 })
        ));
    }

    #[test]
    fn test_entropy_frozen_values() {
        assert_eq!(entropy(&dist(&[1.0, 0.0])), 0.0);
        assert!((entropy(&dist(&[0.5, 0.5])) - LN_2).abs() < 1e-15);
        let h = entropy(&dist(&[0.5, 0.25, 0.25]));
        assert!((h - 1.039_720_770_839_917_9).abs() < 1e-12, "h = {h}");
    }

    #[test]
    fn test_conditional_entropy() {
        let indep = JointDist::from_table(vec![vec![0.25, 0.25], vec![0.25, 0.25]]).unwrap();
        assert!((conditional_entropy(&indep) - LN_2).abs() < 1e-12);

        let diagonal = JointDist::from_table(vec![vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        assert_eq!(conditional_entropy(&diagonal), 0.0);

        // Column masses are 0.6 and 0.4, so the mixture weights are 0.6/0.4:
        // 0.6 H(2/3, 1/3) + 0.4 H(1/4, 3/4).
        let j = JointDist::from_table(vec![vec![0.4, 0.1], vec![0.2, 0.3]]).unwrap();
        let ce = conditional_entropy(&j);
        assert!((ce - 0.606_842_558_824_411_1).abs() < 1e-12, "ce = {ce}");
    }

    // Random distributions whose entries are bounded away from zero, so KL
    // support conditions always hold.
    fn arb_dist(n: usize) -> impl Strategy<Value = CategoricalDist> {
        prop::collection::vec(0.05..1.0f64, n).prop_map(|raw| {
            let sum: f64 = raw.iter().sum();
            CategoricalDist::new(raw.into_iter().map(|x| x / sum).collect()).unwrap()
        })
    }

    fn arb_joint(rows: usize, cols: usize) -> impl Strategy<Value = JointDist> {
        prop::collection::vec(0.01..1.0f64, rows * cols).prop_map(move |raw| {
            let sum: f64 = raw.iter().sum();
            let table = raw
                .chunks(cols)
                .map(|row| row.iter().map(|x| x / sum).collect())
                .collect();
            JointDist::from_table(table).unwrap()
        })
    }

    proptest! {
        #[test]
        fn prop_kl_nonnegative_and_zero_iff_equal(
            p in arb_dist(4),
            q in arb_dist(4),
        ) {
            let kl = kl_divergence(&p, &q).unwrap();
            prop_assert!(kl >= 0.0);
            prop_assert!(kl_divergence(&p, &p).unwrap() <= 1e-12);
            if total_variation(&p, &q).unwrap() > 1e-6 {
                prop_assert!(kl > 0.0);
            }
        }

        #[test]
        fn prop_total_variation_symmetric_triangle(
            p in arb_dist(5),
            q in arb_dist(5),
            r in arb_dist(5),
        ) {
            let pq = total_variation(&p, &q).unwrap();
            let qp = total_variation(&q, &p).unwrap();
            prop_assert!((pq - qp).abs() < 1e-15);
            let pr = total_variation(&p, &r).unwrap();
            let rq = total_variation(&r, &q).unwrap();
            prop_assert!(pq <= pr + rq + 1e-12);
            prop_assert!((0.0..=1.0).contains(&pq));
        }

        #[test]
        fn prop_conditioning_reduces_entropy(j in arb_joint(3, 4)) {
            let ce = conditional_entropy(&j);
            let h = entropy(&marginal_target(&j));
            prop_assert!(ce <= h + 1e-12, "H(t|s) = {} > H(t) = {}", ce, h);
        }

        #[test]
        fn prop_conditionals_reconstruct_joint(j in arb_joint(3, 3)) {
            let spurious = marginal_spurious(&j);
            for s in 0..j.n_spurious() {
                let cond = conditional_target_given_spurious(&j, s).unwrap();
                for t in 0..j.n_target() {
                    let rebuilt = spurious.get(s) * cond.get(t);
                    prop_assert!((rebuilt - j.cell(t, s)).abs() < 1e-12);
                }
            }
        }
    }
}
