//! Closed-form results for the binary (2x2) world, and grid verifiers that
//! check them numerically.
//!
//! Two claims are covered. First: in a binary world whose two spurious
//! values both clear a ratio threshold θ, the spurious marginal `p_s` is
//! pinned inside an interval that depends only on θ and the target marginal
//! `p_t`. Second: for matched-marginal binary joints at fixed ratio φ, the
//! divergence-based magnitude is a known function `t(p)` of the correlated
//! class's marginal — strictly decreasing, with limits `-ln(1-φ)` at 0 and
//! `0` at 1. The verifiers walk dense grids, re-derive every quantity along
//! an independent route where one exists, and report violations instead of
//! trusting the algebra.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{self, JointDist};
use crate::error::{Error, Result};

/// Margin kept between grid endpoints and the open-interval boundaries.
pub const GRID_EPSILON: f64 = 1e-3;

/// Absolute slack allowed when asserting closed-form bounds on a grid.
const BOUND_SLACK: f64 = 1e-9;

/// Tolerance for the dual-route divergence cross-check.
const CROSS_CHECK_TOL: f64 = 1e-9;

/// Tolerance for the boundary-limit checks of `t`.
const LIMIT_TOL: f64 = 1e-2;

fn require_open_unit(value: f64, name: &str) -> Result<()> {
    if !value.is_finite() || value <= 0.0 || value >= 1.0 {
        return Err(Error::InvalidParams {
            reason: format!("{name} = {value} must lie strictly inside (0, 1)"),
        });
    }
    Ok(())
}

/// A 2x2 world: binary target with P(+) = `p_t`, binary spurious feature
/// with P(+) = `p_s`, and conditional P(target + | spurious +) = `tau`.
/// Requires `tau > p_t` (the + feature leans toward the + class) and all
/// four induced cells nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryBiasWorld {
    p_t: f64,
    p_s: f64,
    tau: f64,
}

impl BinaryBiasWorld {
    pub fn new(p_t: f64, p_s: f64, tau: f64) -> Result<Self> {
        require_open_unit(p_t, "p_t")?;
        require_open_unit(p_s, "p_s")?;
        require_open_unit(tau, "tau")?;
        if tau <= p_t {
            return Err(Error::InvalidParams {
                reason: format!("tau = {tau} must exceed the target marginal p_t = {p_t}"),
            });
        }
        let world = BinaryBiasWorld { p_t, p_s, tau };
        let [[_, pm], [_, mm]] = world.cells();
        if pm < 0.0 || mm < 0.0 {
            return Err(Error::InvalidParams {
                reason: format!(
                    "(p_t, p_s, tau) = ({p_t}, {p_s}, {tau}) puts negative mass in a cell"
                ),
            });
        }
        Ok(world)
    }

    pub fn p_t(&self) -> f64 {
        self.p_t
    }
    pub fn p_s(&self) -> f64 {
        self.p_s
    }
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Joint cells as rows = target (+, -), columns = spurious (+, -).
    pub fn cells(&self) -> [[f64; 2]; 2] {
        let pp = self.p_s * self.tau;
        let mp = self.p_s * (1.0 - self.tau);
        [
            [pp, self.p_t - pp],
            [mp, 1.0 - self.p_t - mp],
        ]
    }

    pub fn joint(&self) -> Result<JointDist> {
        let cells = self.cells();
        JointDist::from_table(vec![cells[0].to_vec(), cells[1].to_vec()])
    }

    /// P(target - | spurious -), the counterpart of `tau` on the - column.
    pub fn tau_minus(&self) -> f64 {
        (1.0 - self.p_t - self.p_s * (1.0 - self.tau)) / (1.0 - self.p_s)
    }

    /// Shifted magnitude of the + feature: how far its conditional exceeds
    /// the marginal of the class it leans toward.
    pub fn rho_plus(&self) -> f64 {
        self.tau - self.p_t
    }

    /// Shifted magnitude of the - feature (leaning toward the - class).
    pub fn rho_minus(&self) -> f64 {
        self.tau_minus() - (1.0 - self.p_t)
    }

    /// `rho_plus` as a fraction of its headroom `1 - p_t`.
    pub fn phi_plus(&self) -> f64 {
        self.rho_plus() / (1.0 - self.p_t)
    }

    /// `rho_minus` as a fraction of its headroom `p_t`.
    pub fn phi_minus(&self) -> f64 {
        self.rho_minus() / self.p_t
    }
}

/// The interval that traps `p_s` whenever both features' ratios exceed
/// `theta`: `theta * p_t <= p_s <= p_t / (theta * (1 - p_t) + p_t)`.
pub fn prop1_bounds(theta: f64, p_t: f64) -> Result<(f64, f64)> {
    if !theta.is_finite() || theta <= 0.0 || theta > 1.0 {
        return Err(Error::InvalidParams {
            reason: format!("theta = {theta} must lie in (0, 1]"),
        });
    }
    require_open_unit(p_t, "p_t")?;
    let lower = theta * p_t;
    let upper = p_t / (theta * (1.0 - p_t) + p_t);
    Ok((lower, upper))
}

/// Shape of the grid a verifier walked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points_per_axis: usize,
    pub epsilon: f64,
}

/// Outcome of a grid verification run. `passed` is true exactly when no
/// grid point violated any check; `witness` holds the coordinates of the
/// first (lexicographically smallest) violation found, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropositionReport {
    pub proposition: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    pub grid: GridSpec,
    /// Grid points where the claim's premises held and were asserted.
    pub checked: u64,
    pub violations: u64,
    pub max_violation: f64,
    pub witness: Option<Vec<f64>>,
    pub passed: bool,
}

fn axis(points: usize, lo: f64, hi: f64) -> Vec<f64> {
    let step = (hi - lo) / (points - 1) as f64;
    (0..points).map(|i| lo + step * i as f64).collect()
}

fn witness_min(a: Option<Vec<f64>>, b: Option<Vec<f64>>) -> Option<Vec<f64>> {
    match (a, b) {
        (None, b) => b,
        (a, None) => a,
        (Some(a), Some(b)) => {
            let a_first = a
                .iter()
                .zip(&b)
                .find_map(|(x, y)| match x.total_cmp(y) {
                    std::cmp::Ordering::Less => Some(true),
                    std::cmp::Ordering::Greater => Some(false),
                    std::cmp::Ordering::Equal => None,
                })
                .unwrap_or(a.len() <= b.len());
            Some(if a_first { a } else { b })
        }
    }
}

#[derive(Default)]
struct Tally {
    checked: u64,
    violations: u64,
    max_violation: f64,
    witness: Option<Vec<f64>>,
}

impl Tally {
    fn record(&mut self, excess: f64, witness: Vec<f64>) {
        self.violations += 1;
        self.max_violation = self.max_violation.max(excess);
        self.witness = witness_min(self.witness.take(), Some(witness));
    }

    fn merge(mut self, other: Tally) -> Tally {
        self.checked += other.checked;
        self.violations += other.violations;
        self.max_violation = self.max_violation.max(other.max_violation);
        self.witness = witness_min(self.witness, other.witness);
        self
    }
}

/// Walks a cube of (p_t, p_s, tau) worlds and asserts that wherever both
/// features' ratios exceed `theta`, `p_s` falls inside [`prop1_bounds`].
/// Infeasible corners (negative cells, `tau <= p_t`) are skipped; points
/// where either ratio fails the premise are walked but not asserted.
///
/// # Errors
///
/// `InvalidParams` if `theta` is outside (0, 1) or the grid has fewer than
/// 100 points per axis (too coarse to probe the bounds meaningfully).
pub fn verify_prop1(theta: f64, points_per_axis: usize) -> Result<PropositionReport> {
    require_open_unit(theta, "theta")?;
    if points_per_axis < 100 {
        return Err(Error::InvalidParams {
            reason: format!("grid needs at least 100 points per axis, got {points_per_axis}"),
        });
    }
    let values = axis(points_per_axis, GRID_EPSILON, 1.0 - GRID_EPSILON);

    let total = values
        .par_iter()
        .map(|&p_t| {
            let mut tally = Tally::default();
            let (lower, upper) = prop1_bounds(theta, p_t).expect("validated inputs");
            for &p_s in &values {
                for &tau in &values {
                    if tau <= p_t {
                        continue;
                    }
                    let minus_minus = 1.0 - p_t - p_s * (1.0 - tau);
                    let plus_minus = p_t - p_s * tau;
                    if minus_minus < 0.0 || plus_minus < 0.0 {
                        continue;
                    }
                    let phi_plus = (tau - p_t) / (1.0 - p_t);
                    let tau_minus = minus_minus / (1.0 - p_s);
                    let phi_minus = (tau_minus - (1.0 - p_t)) / p_t;
                    if phi_plus <= theta || phi_minus <= theta {
                        continue;
                    }
                    tally.checked += 1;
                    let excess = (lower - p_s).max(p_s - upper);
                    if excess > BOUND_SLACK {
                        tally.record(excess, vec![p_t, p_s, tau]);
                    }
                }
            }
            tally
        })
        .reduce(Tally::default, Tally::merge);

    Ok(PropositionReport {
        proposition: 1,
        theta: Some(theta),
        phi: None,
        grid: GridSpec {
            points_per_axis,
            epsilon: GRID_EPSILON,
        },
        checked: total.checked,
        violations: total.violations,
        max_violation: total.max_violation,
        witness: total.witness,
        passed: total.violations == 0,
    })
}

/// Magnitude of either feature in a matched-marginal binary world with
/// ratio `phi`, as a function of the correlated class's marginal `p`:
/// `t(p) = p ln(p(1-φ) / (p + φ(1-p))) + ln(1/(1-φ))`.
pub fn t_of_p(p: f64, phi: f64) -> Result<f64> {
    require_open_unit(p, "p")?;
    require_open_unit(phi, "phi")?;
    Ok(p * (p * (1.0 - phi) / (p + phi * (1.0 - p))).ln() - (1.0 - phi).ln())
}

/// The matched-marginal binary joint behind [`t_of_p`]: both marginals are
/// (p, 1-p), each spurious value leans toward its own class, and both
/// features have ratio exactly `phi`. Feasible for every p in (0, 1).
pub fn matched_marginal_joint(p: f64, phi: f64) -> Result<JointDist> {
    require_open_unit(p, "p")?;
    require_open_unit(phi, "phi")?;
    let tau = p + phi * (1.0 - p);
    JointDist::from_table(vec![
        vec![p * tau, p * (1.0 - tau)],
        vec![p * (1.0 - tau), 1.0 - 2.0 * p + p * tau],
    ])
}

/// Divergence magnitude of the + feature of [`matched_marginal_joint`],
/// computed through the distribution ops rather than the closed form.
fn divergence_route(p: f64, phi: f64) -> Result<f64> {
    let joint = matched_marginal_joint(p, phi)?;
    let marginal = dist::marginal_target(&joint);
    let conditional = dist::conditional_target_given_spurious(&joint, 0)?;
    dist::kl_divergence(&marginal, &conditional)
}

/// Checks the shape of `t` at ratio `phi` on a `points`-point grid over
/// [ε, 1/2 - ε]: strictly decreasing there, strictly decreasing again on
/// the reflected grid over [1/2 + ε, 1 - ε], within 0.01 of `-ln(1-φ)` at
/// the left edge and of 0 at the right edge, and within 1e-9 of the
/// divergence computed on the induced joint at every grid point.
///
/// # Errors
///
/// `InvalidParams` if `phi` is outside (0, 1) or `points < 100`.
pub fn verify_prop2(phi: f64, points: usize) -> Result<PropositionReport> {
    require_open_unit(phi, "phi")?;
    if points < 100 {
        return Err(Error::InvalidParams {
            reason: format!("grid needs at least 100 points, got {points}"),
        });
    }
    let grid = axis(points, GRID_EPSILON, 0.5 - GRID_EPSILON);
    let mut tally = Tally::default();

    let lower: Vec<f64> = grid
        .iter()
        .map(|&p| t_of_p(p, phi).expect("grid point inside (0, 1)"))
        .collect();
    let upper: Vec<f64> = grid
        .iter()
        .map(|&p| t_of_p(1.0 - p, phi).expect("grid point inside (0, 1)"))
        .collect();

    for (window, values) in grid.windows(2).zip(lower.windows(2)) {
        tally.checked += 1;
        if values[1] >= values[0] {
            tally.record(values[1] - values[0], vec![window[0], window[1]]);
        }
    }
    for (window, values) in grid.windows(2).zip(upper.windows(2)) {
        tally.checked += 1;
        // Reflection flips the order: 1 - p shrinks as p grows, so a
        // decreasing t must grow along this scan.
        if values[1] <= values[0] {
            tally.record(values[0] - values[1], vec![1.0 - window[1], 1.0 - window[0]]);
        }
    }

    tally.checked += 1;
    let left_gap = (lower[0] - (-(1.0 - phi).ln())).abs();
    if left_gap >= LIMIT_TOL {
        tally.record(left_gap - LIMIT_TOL, vec![grid[0]]);
    }
    tally.checked += 1;
    let right_gap = upper[0].abs();
    if right_gap >= LIMIT_TOL {
        tally.record(right_gap - LIMIT_TOL, vec![1.0 - grid[0]]);
    }

    for (p, closed_form) in grid
        .iter()
        .copied()
        .zip(lower.iter().copied())
        .chain(grid.iter().map(|&p| 1.0 - p).zip(upper.iter().copied()))
    {
        tally.checked += 1;
        let gap = (closed_form - divergence_route(p, phi)?).abs();
        if gap > CROSS_CHECK_TOL {
            tally.record(gap - CROSS_CHECK_TOL, vec![p]);
        }
    }

    Ok(PropositionReport {
        proposition: 2,
        theta: None,
        phi: Some(phi),
        grid: GridSpec {
            points_per_axis: points,
            epsilon: GRID_EPSILON,
        },
        checked: tally.checked,
        violations: tally.violations,
        max_violation: tally.max_violation,
        witness: tally.witness,
        passed: tally.violations == 0,
    })
}
