//! Exact Wasserstein-1 and Kolmogorov distances to the standard normal.
//!
//! Both distances are computed in closed form for an arbitrary finitely
//! supported law, so the only approximation anywhere is the Monte Carlo error
//! of the empirical law itself. W1 uses the identity
//!
//! ```text
//! W1(mu, N(0,1)) = integral of |F_mu(x) - Phi(x)| dx
//! ```
//!
//! evaluated segment by segment against the antiderivative
//! `I(x) = x Phi(x) + phi(x)`, splitting a segment at the crossing point
//! `Phi^{-1}(c)` when the flat level c of F_mu crosses Phi inside it.

use thiserror::Error;

use crate::normal::{cdf, cdf_antiderivative, quantile};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistanceError {
    #[error("empty sample")]
    EmptySample,
    #[error("sample contains a non-finite value {0}")]
    NonFiniteSample(f64),
    #[error("atom ({value}, {prob}) is invalid; values must be finite and probabilities positive")]
    InvalidAtom { value: f64, prob: f64 },
    #[error("atom probabilities sum to {total}, expected 1")]
    MassMismatch { total: f64 },
}

/// A finitely supported probability law: sorted atom values with positive
/// probabilities summing to one, equal values merged.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLaw {
    atoms: Vec<(f64, f64)>,
}

/// Distances of one empirical law to the standard normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceReport {
    pub w1: f64,
    /// Batch-means standard error of the W1 statistic, available once the
    /// sample is large enough to split into ten stable batches.
    pub w1_se: Option<f64>,
    pub kolmogorov: f64,
    pub m: usize,
}

const MASS_TOLERANCE: f64 = 1e-12;
const SE_BATCHES: usize = 10;
const SE_MIN_SAMPLES: usize = 1000;

impl DiscreteLaw {
    /// Validates, sorts, and tie-merges raw atoms.
    pub fn new(mut atoms: Vec<(f64, f64)>) -> Result<Self, DistanceError> {
        if atoms.is_empty() {
            return Err(DistanceError::EmptySample);
        }
        for &(v, p) in &atoms {
            if !v.is_finite() || !p.is_finite() || p <= 0.0 {
                return Err(DistanceError::InvalidAtom { value: v, prob: p });
            }
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (v, p) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += p,
                _ => merged.push((v, p)),
            }
        }
        let total: f64 = merged.iter().map(|&(_, p)| p).sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(DistanceError::MassMismatch { total });
        }
        Ok(DiscreteLaw { atoms: merged })
    }

    /// Empirical law of a sample, each point carrying weight 1/m.
    pub fn from_samples(samples: &[f64]) -> Result<Self, DistanceError> {
        if samples.is_empty() {
            return Err(DistanceError::EmptySample);
        }
        if let Some(&bad) = samples.iter().find(|v| !v.is_finite()) {
            return Err(DistanceError::NonFiniteSample(bad));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        let w = 1.0 / samples.len() as f64;
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        for v in sorted {
            match atoms.last_mut() {
                Some(last) if last.0 == v => last.1 += w,
                _ => atoms.push((v, w)),
            }
        }
        Ok(DiscreteLaw { atoms })
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }
}

// Integral of |c - Phi(x)| over [lo, hi) for a flat CDF level c, exact up to
// the accuracy of Phi itself. The crossing point is only solved for when it
// lies strictly inside the segment, which keeps c safely inside (0, 1) at
// the quantile call even when cumulative roundoff pushes c to 1.
fn segment_area(c: f64, lo: f64, hi: f64) -> f64 {
    let i_lo = cdf_antiderivative(lo);
    let i_hi = cdf_antiderivative(hi);
    if cdf(lo) >= c {
        // Phi is above the level on the whole segment.
        (i_hi - i_lo) - c * (hi - lo)
    } else if cdf(hi) <= c {
        // Phi stays below the level.
        c * (hi - lo) - (i_hi - i_lo)
    } else {
        let x = quantile(c).expect("crossing level is strictly inside (0, 1)");
        2.0 * (c * x - cdf_antiderivative(x)) + i_lo + i_hi - c * (lo + hi)
    }
}

/// Exact W1 distance between a finitely supported law and N(0, 1).
pub fn w1_discrete_vs_normal(law: &DiscreteLaw) -> f64 {
    let atoms = law.atoms();
    let first = atoms[0].0;
    let last = atoms[atoms.len() - 1].0;
    // Tails: integral of Phi below the support and of 1 - Phi above it.
    let mut total = cdf_antiderivative(first) + (cdf_antiderivative(last) - last);
    let mut cum = 0.0;
    for window in atoms.windows(2) {
        cum += window[0].1;
        total += segment_area(cum, window[0].0, window[1].0);
    }
    total
}

/// Exact Kolmogorov distance between a finitely supported law and N(0, 1),
/// checking both one-sided limits at every atom.
pub fn kolmogorov_discrete_vs_normal(law: &DiscreteLaw) -> f64 {
    let mut sup = 0.0f64;
    let mut cum = 0.0;
    for &(v, p) in law.atoms() {
        let phi = cdf(v);
        sup = sup.max((cum - phi).abs());
        cum += p;
        sup = sup.max((cum - phi).abs());
    }
    sup
}

/// W1 and Kolmogorov distances of a sample's empirical law to N(0, 1).
///
/// The W1 standard error comes from ten contiguous batches taken in the
/// original sample order, so reordering the input changes the SE estimate
/// but never the distances themselves.
pub fn empirical_vs_normal(samples: &[f64]) -> Result<DistanceReport, DistanceError> {
    let law = DiscreteLaw::from_samples(samples)?;
    let w1 = w1_discrete_vs_normal(&law);
    let kolmogorov = kolmogorov_discrete_vs_normal(&law);
    let m = samples.len();
    let w1_se = if m >= SE_MIN_SAMPLES {
        let bsize = m / SE_BATCHES;
        let batch_w1: Vec<f64> = (0..SE_BATCHES)
            .map(|b| {
                let chunk = &samples[b * bsize..(b + 1) * bsize];
                let blaw = DiscreteLaw::from_samples(chunk).expect("chunk is non-empty and finite");
                w1_discrete_vs_normal(&blaw)
            })
            .collect();
        let mean = batch_w1.iter().sum::<f64>() / SE_BATCHES as f64;
        let var = batch_w1.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (SE_BATCHES as f64 - 1.0);
        Some((var / SE_BATCHES as f64).sqrt())
    } else {
        None
    };
    Ok(DistanceReport {
        w1,
        w1_se,
        kolmogorov,
        m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal::pdf;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn law_validation() {
        assert!(matches!(
            DiscreteLaw::new(vec![]),
            Err(DistanceError::EmptySample)
        ));
        assert!(matches!(
            DiscreteLaw::new(vec![(f64::NAN, 1.0)]),
            Err(DistanceError::InvalidAtom { .. })
        ));
        assert!(matches!(
            DiscreteLaw::new(vec![(0.0, 0.0), (1.0, 1.0)]),
            Err(DistanceError::InvalidAtom { .. })
        ));
        assert!(matches!(
            DiscreteLaw::new(vec![(0.0, 0.7)]),
            Err(DistanceError::MassMismatch { .. })
        ));
        let law = DiscreteLaw::new(vec![(1.0, 0.25), (-1.0, 0.5), (1.0, 0.25)]).unwrap();
        assert_eq!(law.atoms(), &[(-1.0, 0.5), (1.0, 0.5)]);
    }

    #[test]
    fn from_samples_matches_manual_law() {
        let samples = [2.0, -1.0, 2.0, 0.5];
        let law = DiscreteLaw::from_samples(&samples).unwrap();
        assert_eq!(law.atoms(), &[(-1.0, 0.25), (0.5, 0.25), (2.0, 0.5)]);
        assert!(matches!(
            DiscreteLaw::from_samples(&[1.0, f64::INFINITY]),
            Err(DistanceError::NonFiniteSample(_))
        ));
    }

    #[test]
    fn w1_of_point_mass_at_zero() {
        // Closed form: 2 * phi(0) = sqrt(2 / pi).
        let law = DiscreteLaw::new(vec![(0.0, 1.0)]).unwrap();
        let expected = (2.0 / std::f64::consts::PI).sqrt();
        assert_relative_eq!(w1_discrete_vs_normal(&law), expected, epsilon = 1e-14);
    }

    #[test]
    fn w1_of_fair_signs() {
        // Closed form 4 Phi(1) + 4 phi(1) - 2 phi(0) - 3, derived from the
        // three-segment split with the crossing at 0.
        let law = DiscreteLaw::new(vec![(-1.0, 0.5), (1.0, 0.5)]).unwrap();
        let expected = 4.0 * cdf(1.0) + 4.0 * pdf(1.0) - 2.0 * pdf(0.0) - 3.0;
        assert_relative_eq!(w1_discrete_vs_normal(&law), expected, epsilon = 1e-14);
        assert_relative_eq!(w1_discrete_vs_normal(&law), 0.535377321547880, epsilon = 1e-12);
    }

    #[test]
    fn w1_of_shifted_point_mass_grows_linearly() {
        // W1(delta_t, N) >= |t| and -> |t| + E|Z| contributions; check exact
        // value t + 2 I(-t) via the tail formula for a large shift.
        for t in [0.0, 0.3, 1.0, 2.5] {
            let law = DiscreteLaw::new(vec![(t, 1.0)]).unwrap();
            let expected = t + 2.0 * cdf_antiderivative(-t);
            assert_relative_eq!(w1_discrete_vs_normal(&law), expected, epsilon = 1e-13);
        }
    }

    #[test]
    fn kolmogorov_closed_forms() {
        let dirac = DiscreteLaw::new(vec![(0.0, 1.0)]).unwrap();
        assert_eq!(kolmogorov_discrete_vs_normal(&dirac), 0.5);
        let signs = DiscreteLaw::new(vec![(-1.0, 0.5), (1.0, 0.5)]).unwrap();
        assert_relative_eq!(
            kolmogorov_discrete_vs_normal(&signs),
            cdf(1.0) - 0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn quantile_midpoint_sample_is_nearly_normal() {
        // Samples at Phi^{-1}((j - 1/2) / m) pin the empirical CDF to Phi at
        // the midpoints, so the Kolmogorov distance is exactly 1 / (2m).
        let m = 100;
        let samples: Vec<f64> = (1..=m)
            .map(|j| mclt_oracle::quantile((j as f64 - 0.5) / m as f64))
            .collect();
        let report = empirical_vs_normal(&samples).unwrap();
        assert_relative_eq!(report.kolmogorov, 1.0 / (2.0 * m as f64), epsilon = 1e-9);
        assert!(report.w1 < 0.02, "w1 = {}", report.w1);
        assert!(report.w1 > 0.0);
    }

    #[test]
    fn w1_agrees_with_numerical_integration() {
        // Independent check of the segment algebra: integrate |F - Phi|
        // numerically over a wide window with an adaptive rule.
        let law =
            DiscreteLaw::new(vec![(-2.0, 0.125), (-0.3, 0.25), (0.4, 0.5), (1.7, 0.125)]).unwrap();
        let f = |x: f64| {
            let mut cum = 0.0;
            for &(v, p) in law.atoms() {
                if v <= x {
                    cum += p;
                }
            }
            (cum - mclt_oracle::cdf(x)).abs()
        };
        let numeric = mclt_oracle::adaptive_simpson(&f, -12.0, 12.0, 1e-12);
        assert_relative_eq!(w1_discrete_vs_normal(&law), numeric, epsilon = 1e-9);
    }

    #[test]
    fn batch_se_requires_large_samples() {
        let small: Vec<f64> = (0..999).map(|i| (i as f64) / 500.0 - 1.0).collect();
        assert_eq!(empirical_vs_normal(&small).unwrap().w1_se, None);
        let large: Vec<f64> = (0..1000).map(|i| (i as f64) / 500.0 - 1.0).collect();
        let report = empirical_vs_normal(&large).unwrap();
        assert!(report.w1_se.is_some());
        assert!(report.w1_se.unwrap() >= 0.0);
    }

    #[test]
    fn empty_sample_is_rejected() {
        assert!(matches!(
            empirical_vs_normal(&[]),
            Err(DistanceError::EmptySample)
        ));
    }

    proptest! {
        #[test]
        fn w1_is_permutation_invariant(mut xs in proptest::collection::vec(-4.0f64..4.0, 1..200)) {
            let before = empirical_vs_normal(&xs).unwrap();
            xs.reverse();
            let shift = xs.len() / 3;
            xs.rotate_left(shift);
            let after = empirical_vs_normal(&xs).unwrap();
            // Distances depend on the law only; bitwise equality is expected
            // because both paths sort the same multiset.
            prop_assert_eq!(before.w1, after.w1);
            prop_assert_eq!(before.kolmogorov, after.kolmogorov);
        }

        #[test]
        fn w1_dominates_mean_gap(xs in proptest::collection::vec(-4.0f64..4.0, 1..200)) {
            let report = empirical_vs_normal(&xs).unwrap();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            // Coupling bound: moving mass costs at least the mean shift.
            prop_assert!(report.w1 >= mean.abs() - 1e-9);
            prop_assert!(report.kolmogorov >= 0.0 && report.kolmogorov <= 1.0);
        }

        #[test]
        fn w1_translation_is_lipschitz(
            xs in proptest::collection::vec(-3.0f64..3.0, 1..100),
            t in -2.0f64..2.0,
        ) {
            let base = empirical_vs_normal(&xs).unwrap().w1;
            let shifted: Vec<f64> = xs.iter().map(|v| v + t).collect();
            let moved = empirical_vs_normal(&shifted).unwrap().w1;
            prop_assert!((moved - base).abs() <= t.abs() + 1e-9);
        }

        #[test]
        fn w1_matches_quantile_coupling_on_singletons(v in -5.0f64..5.0) {
            // For a single atom the segment formula collapses to the tail
            // terms; compare with the direct expression |v| + 2 I(-|v|).
            let law = DiscreteLaw::new(vec![(v, 1.0)]).unwrap();
            let expected = v.abs() + 2.0 * cdf_antiderivative(-v.abs());
            prop_assert!((w1_discrete_vs_normal(&law) - expected).abs() <= 1e-12);
        }
    }
}
