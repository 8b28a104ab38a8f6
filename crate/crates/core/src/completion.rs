//! Variance completion: extending a finite martingale difference path so its
//! conditional variances sum to exactly the target total.
//!
//! Given a path with conditional variances sigma2 and target total s_n^2, the
//! construction keeps the longest prefix whose variance stays within the
//! target, then spends the remaining variance budget in fair +-epsilon steps,
//! closes the residue with a single step of matching variance, and pads with
//! zeros to a deterministic length that depends only on (n, s_n^2, epsilon).
//! The completed sequence is again a martingale difference sequence, its
//! variance total is s_n^2 by construction, and every appended step has
//! magnitude at most epsilon.

use serde::Serialize;
use thiserror::Error;

use crate::family::Path;
use crate::stream::{pairwise_sum, StreamKey};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompletionError {
    #[error("epsilon must be positive and finite, got {0}")]
    EpsilonOutOfRange(f64),
    #[error("path is empty")]
    EmptyPath,
    #[error("path variance total must be positive and finite, got {0}")]
    VarianceTotalOutOfRange(f64),
    #[error("conditional variance at step {index} must be finite and nonnegative, got {value}")]
    BadConditionalVariance { index: usize, value: f64 },
    #[error("completed length {required} exceeds the supported maximum {max}; increase epsilon")]
    ExcessiveFill { required: u64, max: u64 },
}

/// Hard cap on the completed length; guards against epsilon values that
/// would silently request gigabyte-scale allocations.
pub const MAX_COMPLETED_LEN: u64 = 1 << 24;

/// A completed path together with the ingredients of its construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletedPath {
    pub base: Path,
    /// Completed increments, length `len()`; prefix of `tau` original steps,
    /// then `fill_count` fair +-epsilon steps, one closing step, zeros after.
    pub xhat: Vec<f64>,
    /// Conditional variances of the completed increments.
    pub sigma2hat: Vec<f64>,
    /// Number of original steps kept.
    pub tau: usize,
    /// Number of +-epsilon fill steps.
    pub fill_count: usize,
    pub epsilon: f64,
    /// Variance budget left after the kept prefix, s_n^2 - sum_{i<=tau}.
    pub residual: f64,
}

/// Scalar summaries of a completed path, computed without materializing it.
/// Draws fill signs in the same order as [`complete_path`], so both agree on
/// every slot for a given key.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompletedSumStats {
    /// Completed sum over s_n.
    pub normalized_sum: f64,
    /// Third-moment total of the completed path: conditional third moments
    /// over the kept prefix plus the exact contribution of the fill steps.
    pub third_moment_total: f64,
    pub tau: usize,
    pub fill_count: usize,
}

/// Status of the tail variance bound, which only constrains completions that
/// truncated the original path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TailBoundStatus {
    Holds,
    Violated,
    NotApplicable,
}

/// Invariant checks for one completed path. `is_clean` requires every check
/// to pass; the raw errors stay available for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompletionAudit {
    /// |sum sigma2hat - s_n^2|, compared against `tol`.
    pub variance_sum_err: f64,
    pub variance_sum_ok: bool,
    /// Kept prefix is bitwise identical to the original path.
    pub prefix_ok: bool,
    /// Appended third moments stay within (1 + s_n^2 / eps^2) eps^3.
    pub third_moment_ok: bool,
    /// Tail variance identity error, compared against `tol`.
    pub tail_identity_err: f64,
    pub tail_identity_ok: bool,
    pub tail_bound: TailBoundStatus,
    /// Fill and closing slots satisfy xhat^2 = sigma2hat.
    pub fill_magnitude_ok: bool,
    /// Absolute tolerance used for the two variance-sum style checks.
    pub tol: f64,
}

impl CompletionAudit {
    pub fn is_clean(&self) -> bool {
        self.variance_sum_ok
            && self.prefix_ok
            && self.third_moment_ok
            && self.tail_identity_ok
            && self.tail_bound != TailBoundStatus::Violated
            && self.fill_magnitude_ok
    }
}

// The deterministic part of the construction: where the prefix stops and how
// the remaining variance splits into fill steps plus one closing step.
struct CompletionPlan {
    tau: usize,
    fill_count: usize,
    // Variance of the closing step, in [0, eps^2].
    closing_var: f64,
    residual: f64,
    total_len: usize,
}

fn plan_completion(path: &Path, epsilon: f64) -> Result<CompletionPlan, CompletionError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(CompletionError::EpsilonOutOfRange(epsilon));
    }
    let n = path.x.len();
    if n == 0 {
        return Err(CompletionError::EmptyPath);
    }
    let sn2 = path.sn2;
    if !(sn2 > 0.0 && sn2.is_finite()) {
        return Err(CompletionError::VarianceTotalOutOfRange(sn2));
    }
    if let Some((index, &value)) = path
        .sigma2
        .iter()
        .enumerate()
        .find(|&(_, &v)| !(v >= 0.0 && v.is_finite()))
    {
        return Err(CompletionError::BadConditionalVariance { index, value });
    }

    let eps2 = epsilon * epsilon;
    let required = n as u64 + (sn2 / eps2).floor() as u64 + 1;
    if required > MAX_COMPLETED_LEN {
        return Err(CompletionError::ExcessiveFill {
            required,
            max: MAX_COMPLETED_LEN,
        });
    }
    let total_len = required as usize;

    // Longest prefix with cumulative variance within the target. Variances
    // are nonnegative, so the cumulative sum never drops back under it.
    let mut tau = 0usize;
    let mut cum_tau = 0.0f64;
    let mut running = 0.0f64;
    for (k, &v) in path.sigma2.iter().enumerate() {
        running += v;
        if running <= sn2 {
            tau = k + 1;
            cum_tau = running;
        } else {
            break;
        }
    }

    // cum_tau <= sn2 held as floats, so the residual is nonnegative exactly.
    let residual = sn2 - cum_tau;
    let mut fill_count = (residual / eps2).floor() as usize;
    // Division can round up across an integer boundary; step back until the
    // closing variance is nonnegative.
    while fill_count > 0 && residual - fill_count as f64 * eps2 < 0.0 {
        fill_count -= 1;
    }
    let closing_var = residual - fill_count as f64 * eps2;
    debug_assert!(closing_var >= 0.0);
    assert!(
        tau + fill_count < total_len,
        "completion slots exceed the deterministic length"
    );
    Ok(CompletionPlan {
        tau,
        fill_count,
        closing_var,
        residual,
        total_len,
    })
}

fn fill_sign(rng: &mut impl rand::Rng) -> f64 {
    if rng.gen::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Completes a path to exact total variance, materializing the extended
/// increment and conditional variance vectors.
pub fn complete_path(
    path: &Path,
    epsilon: f64,
    key: &StreamKey,
) -> Result<CompletedPath, CompletionError> {
    let plan = plan_completion(path, epsilon)?;
    let mut rng = key.fill_rng();
    let eps2 = epsilon * epsilon;

    let mut xhat = Vec::with_capacity(plan.total_len);
    let mut sigma2hat = Vec::with_capacity(plan.total_len);
    xhat.extend_from_slice(&path.x[..plan.tau]);
    sigma2hat.extend_from_slice(&path.sigma2[..plan.tau]);
    for _ in 0..plan.fill_count {
        xhat.push(fill_sign(&mut rng) * epsilon);
        sigma2hat.push(eps2);
    }
    // A zero-variance closing step is emitted as exact zero with no draw, so
    // the stream position stays a pure function of the plan.
    let closing_mag = plan.closing_var.sqrt();
    if closing_mag > 0.0 {
        xhat.push(fill_sign(&mut rng) * closing_mag);
    } else {
        xhat.push(0.0);
    }
    sigma2hat.push(plan.closing_var);
    xhat.resize(plan.total_len, 0.0);
    sigma2hat.resize(plan.total_len, 0.0);

    Ok(CompletedPath {
        base: path.clone(),
        xhat,
        sigma2hat,
        tau: plan.tau,
        fill_count: plan.fill_count,
        epsilon,
        residual: plan.residual,
    })
}

/// Completed-sum summaries without materializing the extension. Consumes the
/// fill stream exactly like [`complete_path`] with the same key.
pub fn completed_sum_stats(
    path: &Path,
    epsilon: f64,
    key: &StreamKey,
) -> Result<CompletedSumStats, CompletionError> {
    let plan = plan_completion(path, epsilon)?;
    let mut rng = key.fill_rng();

    let mut sum = pairwise_sum(&path.x[..plan.tau]);
    for _ in 0..plan.fill_count {
        sum += fill_sign(&mut rng) * epsilon;
    }
    let closing_mag = plan.closing_var.sqrt();
    if closing_mag > 0.0 {
        sum += fill_sign(&mut rng) * closing_mag;
    }

    let eps3 = epsilon * epsilon * epsilon;
    let third_moment_total = pairwise_sum(&path.m3[..plan.tau])
        + plan.fill_count as f64 * eps3
        + plan.closing_var * closing_mag;

    Ok(CompletedSumStats {
        normalized_sum: sum / path.sn2.sqrt(),
        third_moment_total,
        tau: plan.tau,
        fill_count: plan.fill_count,
    })
}

impl CompletedPath {
    pub fn len(&self) -> usize {
        self.xhat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xhat.is_empty()
    }

    /// Completed sum over s_n.
    pub fn normalized_sum(&self) -> f64 {
        pairwise_sum(&self.xhat) / self.base.sn2.sqrt()
    }
}

/// Checks every structural invariant of a completed path.
pub fn audit_completion(completed: &CompletedPath) -> CompletionAudit {
    let base = &completed.base;
    let sn2 = base.sn2;
    let tau = completed.tau;
    let eps = completed.epsilon;
    let eps2 = eps * eps;
    let tol = 1e-9 * sn2;

    let variance_sum_err = (pairwise_sum(&completed.sigma2hat) - sn2).abs();
    let variance_sum_ok = variance_sum_err <= tol;

    let prefix_ok = completed.xhat[..tau] == base.x[..tau]
        && completed.sigma2hat[..tau] == base.sigma2[..tau];

    let appended_abs3: Vec<f64> = completed.xhat[tau..]
        .iter()
        .map(|v| {
            let a = v.abs();
            a * a * a
        })
        .collect();
    let third_moment_cap = (1.0 + sn2 / eps2) * (eps2 * eps);
    let third_moment_ok =
        pairwise_sum(&appended_abs3) <= third_moment_cap * (1.0 + 1e-12);

    // Tail variance identity: the variance not covered by the kept prefix,
    // counted once through the original tail and once through the appended
    // steps, must match the same quantity expressed via V_n^2.
    let prefix_var = pairwise_sum(&base.sigma2[..tau]);
    let total_var = pairwise_sum(&base.sigma2);
    let lhs = pairwise_sum(&base.sigma2[tau..]) + pairwise_sum(&completed.sigma2hat[tau..]);
    let rhs = total_var + sn2 - 2.0 * prefix_var;
    let tail_identity_err = (lhs - rhs).abs();
    let tail_identity_ok = tail_identity_err <= tol;

    // When the prefix was truncated, the same tail mass is bounded using the
    // first discarded variance; maximality of the prefix gives the margin.
    let tail_bound = if tau < base.x.len() {
        let bound = total_var - sn2 + 2.0 * base.sigma2[tau];
        if lhs <= bound + tol {
            TailBoundStatus::Holds
        } else {
            TailBoundStatus::Violated
        }
    } else {
        TailBoundStatus::NotApplicable
    };

    let closing_slot = tau + completed.fill_count;
    let fill_magnitude_ok = completed.xhat[tau..]
        .iter()
        .zip(&completed.sigma2hat[tau..])
        .enumerate()
        .all(|(offset, (&x, &s2))| {
            if tau + offset == closing_slot {
                (x * x - s2).abs() <= 1e-9 * eps2
            } else {
                x * x == s2
            }
        });

    CompletionAudit {
        variance_sum_err,
        variance_sum_ok,
        prefix_ok,
        third_moment_ok,
        tail_identity_err,
        tail_identity_ok,
        tail_bound,
        fill_magnitude_ok,
        tol,
    }
}
