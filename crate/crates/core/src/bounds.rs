//! Bound kernels: the computable bracketed quantities that convergence-rate
//! theorems multiply by an unspecified constant.
//!
//! Every kernel is reported without its constant. Callers that want an
//! empirical constant fit one by comparing kernels against measured
//! distances. Kernels are grouped by hypothesis:
//!
//! * `main_kernels` needs only the moment summaries at one order p.
//! * `roellin_kernel` and `completion_kernel` need the unit variance ratio
//!   V_n^2 = 1 a.s.; the former keeps the suffix-variance weights, the
//!   latter is its radius-optimized relaxation.
//! * The legacy kernels additionally need a uniform increment bound, a
//!   conditional moment ratio, or an order restriction, as noted per kernel.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::family::{FamilyError, FamilySpec, MomentEstimates};
use crate::stream::{pairwise_sum, StreamKey};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundsError {
    #[error("kernel requires p {requirement}, got {p}")]
    OrderOutOfRange { p: f64, requirement: &'static str },
    #[error("moment input {name} must be nonnegative and finite, got {value}")]
    BadMomentInput { name: &'static str, value: f64 },
    #[error("variance total must be positive and finite, got {0}")]
    BadVarianceTotal(f64),
    #[error("sequence length must be at least 2 for the n log n term, got {0}")]
    LengthTooSmall(usize),
    #[error("rho must be positive and finite, got {0}")]
    BadRho(f64),
    #[error("gamma must be positive and finite, got {0}")]
    BadGamma(f64),
    #[error("smoothing radius must be nonnegative and finite, got {0}")]
    BadSmoothingRadius(f64),
    #[error("smoothing radius must be positive when the third-moment total is positive")]
    ZeroSmoothingRadius,
    #[error("family {0} does not have unit variance ratio almost surely")]
    UnitRatioRequired(String),
    #[error("smoothing radius 0 requires every suffix variance to be positive")]
    ZeroRadiusNeedsPositiveSuffix,
    #[error("kernel value is not finite")]
    NonFiniteKernel,
    #[error(transparent)]
    Family(#[from] FamilyError),
}

/// Kernel identifiers; the serialized names are the stable wire vocabulary
/// used in report files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum KernelId {
    #[serde(rename = "heyde_brown_1")]
    HeydeBrown,
    #[serde(rename = "bolthausen_2")]
    Bolthausen,
    #[serde(rename = "mourrat_term")]
    MourratTerm,
    #[serde(rename = "fan_5")]
    Fan,
    #[serde(rename = "van_dung_6")]
    VanDung,
    #[serde(rename = "roellin_7")]
    Roellin,
    #[serde(rename = "theorem_8")]
    W1Main,
    #[serde(rename = "corollary_9")]
    W1MainCubeRoot,
    #[serde(rename = "lemma_10_paper_a")]
    CompletionReference,
    #[serde(rename = "lemma_10_optimal_a")]
    CompletionOptimal,
    /// Check-only variant for explicitly chosen smoothing radii; never
    /// emitted in report files.
    #[serde(rename = "lemma_10_explicit_a")]
    CompletionFixed,
}

impl KernelId {
    pub fn wire_name(self) -> &'static str {
        match self {
            KernelId::HeydeBrown => "heyde_brown_1",
            KernelId::Bolthausen => "bolthausen_2",
            KernelId::MourratTerm => "mourrat_term",
            KernelId::Fan => "fan_5",
            KernelId::VanDung => "van_dung_6",
            KernelId::Roellin => "roellin_7",
            KernelId::W1Main => "theorem_8",
            KernelId::W1MainCubeRoot => "corollary_9",
            KernelId::CompletionReference => "lemma_10_paper_a",
            KernelId::CompletionOptimal => "lemma_10_optimal_a",
            KernelId::CompletionFixed => "lemma_10_explicit_a",
        }
    }
}

/// Hypothesis parameters echoed with each kernel value. Fields are filled
/// only where the kernel consumed them.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct KernelParams {
    pub n: Option<usize>,
    pub p: Option<f64>,
    pub rho: Option<f64>,
    pub gamma: Option<f64>,
    pub a: Option<f64>,
    pub alpha_n: Option<f64>,
}

/// One evaluated kernel with the inputs that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelValue {
    pub id: KernelId,
    pub value: f64,
    pub params: KernelParams,
    pub moments: Option<MomentEstimates>,
}

/// How the smoothing radius of the completion kernel is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SmoothingChoice {
    /// a = T^{1/3}, giving 5 T^{1/3} / s_n.
    Reference,
    /// a = (3T)^{1/3}, the true minimizer, giving 3 (3T)^{1/3} / s_n.
    Optimal,
    /// Evaluate at the given radius.
    Fixed(f64),
}

fn check_moment(name: &'static str, value: f64) -> Result<f64, BoundsError> {
    if value >= 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(BoundsError::BadMomentInput { name, value })
    }
}

fn check_sn2(sn2: f64) -> Result<f64, BoundsError> {
    if sn2 > 0.0 && sn2.is_finite() {
        Ok(sn2)
    } else {
        Err(BoundsError::BadVarianceTotal(sn2))
    }
}

fn check_gamma(gamma: f64) -> Result<f64, BoundsError> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(gamma)
    } else {
        Err(BoundsError::BadGamma(gamma))
    }
}

fn finite_kernel(value: f64) -> Result<f64, BoundsError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(BoundsError::NonFiniteKernel)
    }
}

// s_n^{2p} via the variance total, avoiding a square root round trip.
fn s_pow_2p(sn2: f64, p: f64) -> f64 {
    sn2.powf(p)
}

/// Rate prefactor for the conditional-ratio kernel: s_n^{-rho} for
/// rho in (0, 1), max(log s_n, 0) / s_n for rho >= 1 (natural log, clamped
/// so small variance totals cannot make the rate negative).
pub fn alpha_rate(sn2: f64, rho: f64) -> Result<f64, BoundsError> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(BoundsError::BadRho(rho));
    }
    let sn = check_sn2(sn2)?.sqrt();
    let alpha = if rho < 1.0 {
        sn.powf(-rho)
    } else {
        sn.ln().max(0.0) / sn
    };
    Ok(alpha)
}

/// The main W1 kernels from one set of moment summaries:
/// `(sum_e_abs3)^{1/3} / s_n + (vdev_p + emax_2p / s_n^{2p})^{1/(2p)}`,
/// plus the p = 3/2 specialization dropping the max term,
/// `(sum_e_abs3)^{1/3} / s_n + vdev_p^{1/(2p)}`, when est.p is exactly 3/2.
pub fn main_kernels(
    est: &MomentEstimates,
) -> Result<(KernelValue, Option<KernelValue>), BoundsError> {
    let p = est.p;
    if !(p >= 1.0 && p.is_finite()) {
        return Err(BoundsError::OrderOutOfRange {
            p,
            requirement: ">= 1",
        });
    }
    let sn2 = check_sn2(est.sn2)?;
    let t3 = check_moment("sum_e_abs3", est.sum_e_abs3)?;
    let vdev = check_moment("vdev_p", est.vdev_p)?;
    let emax = check_moment("emax_2p", est.emax_2p)?;

    let first = t3.cbrt() / sn2.sqrt();
    let main = first + (vdev + emax / s_pow_2p(sn2, p)).powf(1.0 / (2.0 * p));
    let params = KernelParams {
        p: Some(p),
        ..KernelParams::default()
    };
    let main_value = KernelValue {
        id: KernelId::W1Main,
        value: finite_kernel(main)?,
        params,
        moments: Some(est.clone()),
    };
    let cube_root = if p == 1.5 {
        let value = finite_kernel(first + vdev.cbrt())?;
        Some(KernelValue {
            id: KernelId::W1MainCubeRoot,
            value,
            params,
            moments: Some(est.clone()),
        })
    } else {
        None
    };
    Ok((main_value, cube_root))
}

fn check_unit_ratio(spec: &FamilySpec, master_seed: u64) -> Result<(), BoundsError> {
    if spec.variance_is_deterministic() {
        return Ok(());
    }
    // Sampled fallback for families without the analytic flag; a violation
    // found in any pilot path is conclusive, a clean pilot is only evidence.
    let tol = 1e-12 * spec.n() as f64;
    let violated = (0..64u64).into_par_iter().any(|rep| {
        let stats = spec.sample_path(&StreamKey::new(master_seed, rep)).stats();
        (stats.vn2 - 1.0).abs() > tol
    });
    if violated {
        Err(BoundsError::UnitRatioRequired(spec.label()))
    } else {
        Ok(())
    }
}

/// Suffix-weighted third-moment kernel, valid under V_n^2 = 1 a.s.:
/// `(3/s_n) sum_i E[m3_i / (rho_i^2 + a^2)] + 2a/s_n` with
/// `rho_i^2 = sum_{k>=i} sigma_k^2`. The expectation is a Monte Carlo
/// average over m paths; it is exact for families with deterministic
/// conditional variances.
pub fn roellin_kernel(
    spec: &FamilySpec,
    a: f64,
    m: u64,
    master_seed: u64,
) -> Result<KernelValue, BoundsError> {
    let mut values = roellin_kernel_grid(spec, &[a], m, master_seed)?;
    Ok(values.pop().expect("one kernel per grid point"))
}

/// Evaluates the suffix-weighted kernel on a grid of radii, reusing one set
/// of sampled paths across the whole grid.
pub fn roellin_kernel_grid(
    spec: &FamilySpec,
    a_grid: &[f64],
    m: u64,
    master_seed: u64,
) -> Result<Vec<KernelValue>, BoundsError> {
    for &a in a_grid {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(BoundsError::BadSmoothingRadius(a));
        }
    }
    if m < 1 {
        return Err(FamilyError::TooFewReplications(m).into());
    }
    check_unit_ratio(spec, master_seed)?;
    let sn2 = check_sn2(
        spec.analytic_sn2()
            .expect("built-in families carry a closed-form variance total"),
    )?;
    let sn = sn2.sqrt();
    let needs_positive_suffix = a_grid.contains(&0.0);

    // Per path, the weighted third-moment sum for every radius at once.
    let rows: Vec<Result<Vec<f64>, BoundsError>> = (0..m)
        .into_par_iter()
        .map(|rep| {
            let path = spec.sample_path(&StreamKey::new(master_seed, rep));
            let n = path.x.len();
            let mut suffix = vec![0.0f64; n];
            let mut acc = 0.0;
            for i in (0..n).rev() {
                acc += path.sigma2[i];
                suffix[i] = acc;
            }
            if needs_positive_suffix && suffix.iter().any(|&r2| r2 <= 0.0) {
                return Err(BoundsError::ZeroRadiusNeedsPositiveSuffix);
            }
            Ok(a_grid
                .iter()
                .map(|&a| {
                    let a2 = a * a;
                    let terms: Vec<f64> = path
                        .m3
                        .iter()
                        .zip(&suffix)
                        .map(|(&m3, &r2)| m3 / (r2 + a2))
                        .collect();
                    pairwise_sum(&terms)
                })
                .collect())
        })
        .collect();

    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(m as usize); a_grid.len()];
    for row in rows {
        let row = row?;
        for (col, v) in columns.iter_mut().zip(row) {
            col.push(v);
        }
    }

    a_grid
        .iter()
        .zip(&columns)
        .map(|(&a, col)| {
            let mean = pairwise_sum(col) / m as f64;
            let value = finite_kernel(3.0 * mean / sn + 2.0 * a / sn)?;
            Ok(KernelValue {
                id: KernelId::Roellin,
                value,
                params: KernelParams {
                    n: Some(spec.n()),
                    a: Some(a),
                    ..KernelParams::default()
                },
                moments: None,
            })
        })
        .collect()
}

/// Radius-relaxed third-moment kernel g(a) = (3T/a^2 + 2a)/s_n at the chosen
/// radius, valid under V_n^2 = 1 a.s. with T the third-moment total.
pub fn completion_kernel(
    sum_e_abs3: f64,
    sn2: f64,
    choice: SmoothingChoice,
) -> Result<KernelValue, BoundsError> {
    let t = check_moment("sum_e_abs3", sum_e_abs3)?;
    let sn = check_sn2(sn2)?.sqrt();
    let (id, a, value) = match choice {
        SmoothingChoice::Reference => {
            let a = t.cbrt();
            (KernelId::CompletionReference, a, 5.0 * a / sn)
        }
        SmoothingChoice::Optimal => {
            let a = (3.0 * t).cbrt();
            (KernelId::CompletionOptimal, a, 3.0 * a / sn)
        }
        SmoothingChoice::Fixed(a) => {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(BoundsError::BadSmoothingRadius(a));
            }
            if a == 0.0 && t > 0.0 {
                return Err(BoundsError::ZeroSmoothingRadius);
            }
            let value = if t == 0.0 {
                2.0 * a / sn
            } else {
                (3.0 * t / (a * a) + 2.0 * a) / sn
            };
            (KernelId::CompletionFixed, a, value)
        }
    };
    Ok(KernelValue {
        id,
        value: finite_kernel(value)?,
        params: KernelParams {
            a: Some(a),
            ..KernelParams::default()
        },
        moments: None,
    })
}

/// Hypothesis inputs for the legacy kernels: the sequence length, a uniform
/// increment bound when the family has one, and the conditional-ratio
/// exponent when one was verified.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LegacyParams {
    pub n: usize,
    pub gamma: Option<f64>,
    pub rho: Option<f64>,
}

/// Kolmogorov-distance kernel `(s_n^{-4p} vdev_p + s_n^{-2p} sum_e_abs2p)^{1/(2p+1)}`,
/// for p in (1, 2]. The exponent structure on the first term is implemented
/// as printed in the source inequality.
pub fn heyde_brown_kernel(est: &MomentEstimates) -> Result<KernelValue, BoundsError> {
    let p = est.p;
    if !(p > 1.0 && p <= 2.0) {
        return Err(BoundsError::OrderOutOfRange {
            p,
            requirement: "in (1, 2]",
        });
    }
    let sn2 = check_sn2(est.sn2)?;
    let vdev = check_moment("vdev_p", est.vdev_p)?;
    let sum2p = check_moment("sum_e_abs2p", est.sum_e_abs2p)?;
    let s2p = s_pow_2p(sn2, p);
    let value = (vdev / (s2p * s2p) + sum2p / s2p).powf(1.0 / (2.0 * p + 1.0));
    Ok(KernelValue {
        id: KernelId::HeydeBrown,
        value: finite_kernel(value)?,
        params: KernelParams {
            p: Some(p),
            ..KernelParams::default()
        },
        moments: Some(est.clone()),
    })
}

/// Bounded-increment Kolmogorov kernel
/// `n log n / s_n^3 + min(vdev_inf^{1/2}, vdev_1^{1/3})`. The sampled
/// maximum vdev_inf only bounds the essential sup from below, so this kernel
/// is itself a lower bound on the printed quantity.
pub fn bolthausen_kernel(
    est: &MomentEstimates,
    n: usize,
    gamma: f64,
) -> Result<KernelValue, BoundsError> {
    if n < 2 {
        return Err(BoundsError::LengthTooSmall(n));
    }
    let gamma = check_gamma(gamma)?;
    let sn2 = check_sn2(est.sn2)?;
    let vdev_inf = check_moment("vdev_inf", est.vdev_inf)?;
    let vdev_1 = check_moment("vdev_1", est.vdev_1)?;
    let log_term = n as f64 * (n as f64).ln() / sn2.powf(1.5);
    let value = log_term + vdev_inf.sqrt().min(vdev_1.cbrt());
    Ok(KernelValue {
        id: KernelId::Bolthausen,
        value: finite_kernel(value)?,
        params: KernelParams {
            n: Some(n),
            gamma: Some(gamma),
            ..KernelParams::default()
        },
        moments: Some(est.clone()),
    })
}

/// Variance-deviation kernel `(vdev_p + s_n^{-2p})^{1/(2p+1)}`, p >= 1.
pub fn mourrat_kernel(est: &MomentEstimates) -> Result<KernelValue, BoundsError> {
    let p = est.p;
    if !(p >= 1.0 && p.is_finite()) {
        return Err(BoundsError::OrderOutOfRange {
            p,
            requirement: ">= 1",
        });
    }
    let sn2 = check_sn2(est.sn2)?;
    let vdev = check_moment("vdev_p", est.vdev_p)?;
    let value = (vdev + 1.0 / s_pow_2p(sn2, p)).powf(1.0 / (2.0 * p + 1.0));
    Ok(KernelValue {
        id: KernelId::MourratTerm,
        value: finite_kernel(value)?,
        params: KernelParams {
            p: Some(p),
            ..KernelParams::default()
        },
        moments: Some(est.clone()),
    })
}

/// Conditional-ratio Kolmogorov kernel
/// `alpha_n + (vdev_p + s_n^{-2p} emax_2p)^{1/(2p+1)}`, requiring the
/// conditional moment ratio witnesses (rho, gamma).
pub fn fan_kernel(
    est: &MomentEstimates,
    rho: f64,
    gamma: f64,
) -> Result<KernelValue, BoundsError> {
    let p = est.p;
    if !(p >= 1.0 && p.is_finite()) {
        return Err(BoundsError::OrderOutOfRange {
            p,
            requirement: ">= 1",
        });
    }
    let gamma = check_gamma(gamma)?;
    let sn2 = check_sn2(est.sn2)?;
    let vdev = check_moment("vdev_p", est.vdev_p)?;
    let emax = check_moment("emax_2p", est.emax_2p)?;
    let alpha = alpha_rate(sn2, rho)?;
    let value = alpha + (vdev + emax / s_pow_2p(sn2, p)).powf(1.0 / (2.0 * p + 1.0));
    Ok(KernelValue {
        id: KernelId::Fan,
        value: finite_kernel(value)?,
        params: KernelParams {
            p: Some(p),
            rho: Some(rho),
            gamma: Some(gamma),
            alpha_n: Some(alpha),
            ..KernelParams::default()
        },
        moments: Some(est.clone()),
    })
}

/// Bounded-increment W1 kernel `n log n / s_n^3 + (vdev_p + s_n^{-2p})^{1/(2p)}`,
/// p > 1/2.
pub fn van_dung_kernel(
    est: &MomentEstimates,
    n: usize,
    gamma: f64,
) -> Result<KernelValue, BoundsError> {
    let p = est.p;
    if !(p > 0.5 && p.is_finite()) {
        return Err(BoundsError::OrderOutOfRange {
            p,
            requirement: "> 1/2",
        });
    }
    if n < 2 {
        return Err(BoundsError::LengthTooSmall(n));
    }
    let gamma = check_gamma(gamma)?;
    let sn2 = check_sn2(est.sn2)?;
    let vdev = check_moment("vdev_p", est.vdev_p)?;
    let log_term = n as f64 * (n as f64).ln() / sn2.powf(1.5);
    let value = log_term + (vdev + 1.0 / s_pow_2p(sn2, p)).powf(1.0 / (2.0 * p));
    Ok(KernelValue {
        id: KernelId::VanDung,
        value: finite_kernel(value)?,
        params: KernelParams {
            n: Some(n),
            p: Some(p),
            gamma: Some(gamma),
            ..KernelParams::default()
        },
        moments: Some(est.clone()),
    })
}

/// Evaluates all five legacy kernels, keeping per-kernel failures so callers
/// can report a kernel as inapplicable without losing the others.
pub fn legacy_kernels(
    est: &MomentEstimates,
    params: &LegacyParams,
) -> Vec<(KernelId, Result<KernelValue, BoundsError>)> {
    let gamma = params.gamma.ok_or(BoundsError::BadGamma(f64::NAN));
    let fan = match (params.rho, params.gamma) {
        (Some(rho), Some(gamma)) => fan_kernel(est, rho, gamma),
        (None, _) => Err(BoundsError::BadRho(f64::NAN)),
        (_, None) => Err(BoundsError::BadGamma(f64::NAN)),
    };
    vec![
        (KernelId::HeydeBrown, heyde_brown_kernel(est)),
        (
            KernelId::Bolthausen,
            gamma
                .clone()
                .and_then(|g| bolthausen_kernel(est, params.n, g)),
        ),
        (KernelId::MourratTerm, mourrat_kernel(est)),
        (KernelId::Fan, fan),
        (
            KernelId::VanDung,
            gamma.and_then(|g| van_dung_kernel(est, params.n, g)),
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{enumerate_moments, estimate_moments};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn rademacher_est(n: usize, p: f64) -> MomentEstimates {
        let spec = FamilySpec::rademacher(n).unwrap();
        estimate_moments(&spec, p, 16, 7).unwrap()
    }

    #[test]
    fn main_kernel_closed_form_for_signs() {
        // n = 100, p = 3/2: first term 100^{1/3}/10, second (10^{-3})^{1/3}.
        let est = rademacher_est(100, 1.5);
        let (main, cube) = main_kernels(&est).unwrap();
        assert_relative_eq!(main.value, 0.564_158_883_361_278, epsilon = 1e-13);
        let cube = cube.unwrap();
        assert_relative_eq!(cube.value, 0.4641588833612779, epsilon = 1e-13);
        assert_eq!(main.id, KernelId::W1Main);
        assert_eq!(cube.id, KernelId::W1MainCubeRoot);
        assert_eq!(main.params.p, Some(1.5));
    }

    #[test]
    fn cube_root_variant_only_at_three_halves() {
        let est = rademacher_est(100, 1.0);
        let (_, cube) = main_kernels(&est).unwrap();
        assert!(cube.is_none());
    }

    #[test]
    fn legacy_closed_forms_for_signs() {
        // All moments of the fair-sign family are exact, so each kernel is a
        // direct substitution at s_n^2 = 100.
        let est32 = rademacher_est(100, 1.5);
        let hb = heyde_brown_kernel(&est32).unwrap();
        assert_relative_eq!(hb.value, 0.1f64.powf(0.25), epsilon = 1e-13);

        let est1 = rademacher_est(100, 1.0);
        let bolt = bolthausen_kernel(&est1, 100, 1.0).unwrap();
        assert_relative_eq!(bolt.value, 0.4605170185988091, epsilon = 1e-13);

        let mour = mourrat_kernel(&est1).unwrap();
        assert_relative_eq!(mour.value, 0.01f64.cbrt(), epsilon = 1e-13);

        let fan = fan_kernel(&est1, 1.0, 1.0).unwrap();
        assert_relative_eq!(
            fan.value,
            10f64.ln() / 10.0 + 0.01f64.cbrt(),
            epsilon = 1e-13
        );
        assert_relative_eq!(fan.params.alpha_n.unwrap(), 0.2302585092994046, epsilon = 1e-15);

        let vd = van_dung_kernel(&est1, 100, 1.0).unwrap();
        assert_relative_eq!(vd.value, 0.5605170185988091, epsilon = 1e-13);
    }

    #[test]
    fn alpha_rate_branches() {
        assert_relative_eq!(
            alpha_rate(100.0, 0.5).unwrap(),
            10f64.powf(-0.5),
            epsilon = 1e-15
        );
        assert_relative_eq!(
            alpha_rate(100.0, 1.0).unwrap(),
            10f64.ln() / 10.0,
            epsilon = 1e-15
        );
        // Small variance totals clamp the log factor at zero.
        assert_eq!(alpha_rate(0.25, 2.0).unwrap(), 0.0);
        assert!(matches!(
            alpha_rate(100.0, 0.0),
            Err(BoundsError::BadRho(_))
        ));
    }

    #[test]
    fn order_guards() {
        let est1 = rademacher_est(10, 1.0);
        assert!(matches!(
            heyde_brown_kernel(&est1),
            Err(BoundsError::OrderOutOfRange { .. })
        ));
        let est_bad = MomentEstimates { p: 2.5, ..est1.clone() };
        assert!(matches!(
            heyde_brown_kernel(&est_bad),
            Err(BoundsError::OrderOutOfRange { .. })
        ));
        assert!(matches!(
            bolthausen_kernel(&est1, 1, 1.0),
            Err(BoundsError::LengthTooSmall(1))
        ));
        assert!(matches!(
            bolthausen_kernel(&est1, 10, 0.0),
            Err(BoundsError::BadGamma(_))
        ));
    }

    #[test]
    fn roellin_harmonic_closed_form() {
        // Deterministic unit variances give suffix sums n-i+1, so the kernel
        // collapses to (3/s_n) H_n at a = 0.
        let spec = FamilySpec::rademacher(4).unwrap();
        let kernel = roellin_kernel(&spec, 0.0, 32, 5).unwrap();
        assert_relative_eq!(kernel.value, 3.125, epsilon = 1e-12);

        let uniform = FamilySpec::uniform(4).unwrap();
        let m3 = 0.75 * 3f64.sqrt();
        let h4 = 1.0 + 0.5 + 1.0 / 3.0 + 0.25;
        let kernel = roellin_kernel(&uniform, 0.0, 32, 5).unwrap();
        assert_relative_eq!(kernel.value, 1.5 * m3 * h4, epsilon = 1e-12);
    }

    #[test]
    fn roellin_grows_linearly_for_large_radius() {
        let spec = FamilySpec::rademacher(4).unwrap();
        let at10 = roellin_kernel(&spec, 10.0, 32, 5).unwrap().value;
        let at100 = roellin_kernel(&spec, 100.0, 32, 5).unwrap().value;
        assert!(at100 > at10);
        // First term is negligible at a = 100; 2a/s_n dominates.
        assert_relative_eq!(at100, 100.0, epsilon = 1e-3);
    }

    #[test]
    fn roellin_requires_unit_variance_ratio() {
        let spec = FamilySpec::sign_modulated(8, 0.5).unwrap();
        assert!(matches!(
            roellin_kernel(&spec, 1.0, 32, 5),
            Err(BoundsError::UnitRatioRequired(_))
        ));
        // delta = 0 collapses to fair signs and is admissible.
        let degenerate = FamilySpec::sign_modulated(8, 0.0).unwrap();
        assert!(roellin_kernel(&degenerate, 1.0, 32, 5).is_ok());
    }

    #[test]
    fn completion_kernel_closed_forms() {
        let reference = completion_kernel(8.0, 8.0, SmoothingChoice::Reference).unwrap();
        assert_relative_eq!(reference.value, 3.5355339059327378, epsilon = 1e-13);
        assert_eq!(reference.params.a, Some(2.0));

        let optimal = completion_kernel(8.0, 8.0, SmoothingChoice::Optimal).unwrap();
        assert_relative_eq!(
            optimal.value,
            3.0 * 24f64.cbrt() / 8f64.sqrt(),
            epsilon = 1e-13
        );
        assert!(optimal.value < reference.value);

        assert_eq!(
            completion_kernel(0.0, 4.0, SmoothingChoice::Optimal)
                .unwrap()
                .value,
            0.0
        );
        assert!(matches!(
            completion_kernel(1.0, 4.0, SmoothingChoice::Fixed(0.0)),
            Err(BoundsError::ZeroSmoothingRadius)
        ));
        assert!(matches!(
            completion_kernel(-1.0, 4.0, SmoothingChoice::Reference),
            Err(BoundsError::BadMomentInput { .. })
        ));
    }

    #[test]
    fn first_term_is_scale_invariant() {
        // Doubling every increment sends T to 8T and sn2 to 4 sn2; the
        // reference kernel 5 T^{1/3}/s_n is unchanged.
        let base = completion_kernel(8.0, 8.0, SmoothingChoice::Reference).unwrap();
        let scaled = completion_kernel(64.0, 32.0, SmoothingChoice::Reference).unwrap();
        assert_relative_eq!(base.value, scaled.value, epsilon = 1e-13);
    }

    #[test]
    fn legacy_bundle_reports_per_kernel_applicability() {
        let est = rademacher_est(16, 1.0);
        let with_all = LegacyParams {
            n: 16,
            gamma: Some(1.0),
            rho: Some(1.0),
        };
        let results = legacy_kernels(&est, &with_all);
        assert_eq!(results.len(), 5);
        // p = 1 is outside (1, 2]; the others succeed.
        assert!(results[0].1.is_err());
        assert!(results[1].1.is_ok());
        assert!(results[2].1.is_ok());
        assert!(results[3].1.is_ok());
        assert!(results[4].1.is_ok());

        let without_gamma = LegacyParams {
            n: 16,
            gamma: None,
            rho: None,
        };
        let results = legacy_kernels(&est, &without_gamma);
        assert!(results[1].1.is_err());
        assert!(results[3].1.is_err());
        assert!(results[4].1.is_err());
        assert!(results[2].1.is_ok());
    }

    #[test]
    fn exhaustive_moments_feed_kernels() {
        // Exact enumeration for a short modulated family; the kernel then
        // has zero Monte Carlo error and a hand-checkable value.
        let spec = FamilySpec::sign_modulated(2, 0.5).unwrap();
        let est = enumerate_moments(&spec, 1.0).unwrap();
        assert_relative_eq!(est.vdev_p, 4.0 / 9.0, epsilon = 1e-15);
        let (main, _) = main_kernels(&est).unwrap();
        let sn2 = 2.25f64;
        let expected_first = est.sum_e_abs3.cbrt() / sn2.sqrt();
        let expected_second = (4.0 / 9.0 + est.emax_2p / sn2.powf(1.0)).powf(0.5);
        assert_relative_eq!(main.value, expected_first + expected_second, epsilon = 1e-13);
    }

    proptest! {
        #[test]
        fn kernels_are_monotone_in_moments(
            vdev in 0.0f64..2.0,
            emax in 0.0f64..4.0,
            t3 in 0.0f64..50.0,
            sum2p in 0.0f64..50.0,
            bump in prop::sample::select(vec![0usize, 1, 2, 3]),
        ) {
            let base = MomentEstimates {
                sn2: 25.0,
                sn2_mc: 25.0,
                vdev_p: vdev,
                vdev_1: vdev,
                vdev_inf: vdev,
                emax_2p: emax,
                sum_e_abs3: t3,
                sum_e_abs2p: sum2p,
                p: 1.5,
                m: 100,
                se: crate::family::MomentStdErrs {
                    sn2_mc: 0.0, vdev_p: 0.0, vdev_1: 0.0,
                    emax_2p: 0.0, sum_e_abs3: 0.0, sum_e_abs2p: 0.0,
                },
            };
            let mut bumped = base.clone();
            match bump {
                0 => { bumped.vdev_p *= 1.1; bumped.vdev_1 *= 1.1; bumped.vdev_inf *= 1.1; }
                1 => bumped.emax_2p *= 1.1,
                2 => bumped.sum_e_abs3 *= 1.1,
                _ => bumped.sum_e_abs2p *= 1.1,
            }
            let eps = 1e-12;
            let (m0, c0) = main_kernels(&base).unwrap();
            let (m1, c1) = main_kernels(&bumped).unwrap();
            prop_assert!(m1.value >= m0.value - eps);
            prop_assert!(c1.unwrap().value >= c0.unwrap().value - eps);
            prop_assert!(heyde_brown_kernel(&bumped).unwrap().value
                >= heyde_brown_kernel(&base).unwrap().value - eps);
            prop_assert!(mourrat_kernel(&bumped).unwrap().value
                >= mourrat_kernel(&base).unwrap().value - eps);
            prop_assert!(bolthausen_kernel(&bumped, 10, 1.0).unwrap().value
                >= bolthausen_kernel(&base, 10, 1.0).unwrap().value - eps);
            prop_assert!(fan_kernel(&bumped, 1.0, 1.0).unwrap().value
                >= fan_kernel(&base, 1.0, 1.0).unwrap().value - eps);
            prop_assert!(van_dung_kernel(&bumped, 10, 1.0).unwrap().value
                >= van_dung_kernel(&base, 10, 1.0).unwrap().value - eps);
        }

        #[test]
        fn suffix_weights_only_tighten_the_radius_kernel(
            n in 1usize..20,
            a in 0.1f64..5.0,
        ) {
            // Dropping the suffix variances from the denominator can only
            // grow each term, so the radius kernel is dominated by g(a).
            let spec = FamilySpec::rademacher(n).unwrap();
            let with_suffix = roellin_kernel(&spec, a, 8, 3).unwrap().value;
            let t = n as f64;
            let dropped = completion_kernel(t, t, SmoothingChoice::Fixed(a)).unwrap().value;
            prop_assert!(with_suffix <= dropped + 1e-12);
        }

        #[test]
        fn optimal_radius_minimizes(t in 0.01f64..100.0, a in 0.05f64..20.0) {
            let sn2 = 9.0;
            let optimal = completion_kernel(t, sn2, SmoothingChoice::Optimal).unwrap().value;
            let reference = completion_kernel(t, sn2, SmoothingChoice::Reference).unwrap().value;
            let fixed = completion_kernel(t, sn2, SmoothingChoice::Fixed(a)).unwrap().value;
            prop_assert!(optimal <= reference + 1e-12);
            prop_assert!(optimal <= fixed + 1e-12);
        }
    }
}
