//! Martingale difference families with tracked conditional moments.
//!
//! A family fixes the joint law of increments X_1..X_n adapted to the
//! filtration of its driving noise. Alongside each sampled path it reports
//! the one-step conditional moments
//!
//! ```text
//! sigma2[i] = E[X_i^2       | F_{i-1}]
//! m3[i]     = E[|X_i|^3     | F_{i-1}]
//! ```
//!
//! evaluated along the realized history, the variance total
//! `s_n^2 = sum E[X_i^2]`, and a uniform increment bound where one exists.
//! Estimators average the conditional moments instead of their realized
//! powers wherever the tower property permits, which removes the Monte Carlo
//! error entirely for i.i.d. families.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::stream::{mean_and_se, pairwise_sum, StreamKey};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FamilyError {
    #[error("family length n must be at least 1")]
    ZeroLength,
    #[error("delta must lie in [0, 1), got {0}")]
    DeltaOutOfRange(f64),
    #[error("two-point atoms must be positive and finite, got a = {0}, b = {1}")]
    AtomOutOfRange(f64, f64),
    #[error("moment order p must be finite and at least 1, got {0}")]
    MomentOrderOutOfRange(f64),
    #[error("at least 2 replications are required, got {0}")]
    TooFewReplications(u64),
    #[error("rho must be positive and finite, got {0}")]
    RhoOutOfRange(f64),
    #[error("exact enumeration requires a discrete driving noise")]
    NotEnumerable,
    #[error("exact enumeration is limited to n <= {max}, got {n}")]
    EnumerationTooLarge { n: usize, max: usize },
    #[error("moment estimate is not finite at p = {0}; reduce p or rescale the family")]
    NonFiniteMoment(f64),
}

/// The built-in increment laws. Two-point atoms are stored after
/// renormalization to mean zero and unit variance, so `pos * neg = 1` and the
/// only effective degree of freedom is the skew.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FamilyKind {
    /// X_i i.i.d. fair signs.
    Rademacher,
    /// X_1 = e_1, X_i = (1 + delta * e_{i-1}) * e_i for fair signs e_i.
    SignModulated { delta: f64 },
    /// X_i i.i.d. uniform on [-sqrt(3), sqrt(3)].
    Uniform,
    /// X_i i.i.d. on {pos, -neg} with P(pos) = neg / (pos + neg).
    TwoPoint { pos: f64, neg: f64 },
}

/// A fully specified difference family: increment law plus length.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilySpec {
    kind: FamilyKind,
    n: usize,
    analytic_sn2: Option<f64>,
    analytic_gamma_inf: Option<f64>,
}

/// One sampled trajectory with its conditional moments along the realized
/// history. All vectors have length n.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub x: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub m3: Vec<f64>,
    pub sn2: f64,
}

/// Scalar summaries of one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathStats {
    /// S_n / s_n.
    pub normalized_sum: f64,
    /// V_n^2 = sum sigma2[i] / s_n^2.
    pub vn2: f64,
    pub max_abs_x: f64,
    /// Realized sum of |X_i|^3.
    pub sum_abs3: f64,
}

/// Monte Carlo (or exact, for enumerated families) moment summaries.
///
/// `vdev_p` is E|V_n^2 - 1|^p, i.e. the p-th power of the L^p norm;
/// `vdev_inf` is the sampled maximum of |V_n^2 - 1| and is a lower bound for
/// the essential supremum. `sn2_mc` carries the Monte Carlo estimate of the
/// variance total even when the closed form is available, so the two can be
/// cross-checked.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentEstimates {
    pub sn2: f64,
    pub sn2_mc: f64,
    pub vdev_p: f64,
    pub vdev_1: f64,
    pub vdev_inf: f64,
    /// E max_i |X_i|^{2p}.
    pub emax_2p: f64,
    /// Sum of E|X_i|^3, estimated through the conditional moments m3.
    pub sum_e_abs3: f64,
    /// Sum of E|X_i|^{2p}, from realized increments.
    pub sum_e_abs2p: f64,
    pub p: f64,
    pub m: u64,
    pub se: MomentStdErrs,
}

/// Standard errors for the mean-based fields of [`MomentEstimates`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentStdErrs {
    pub sn2_mc: f64,
    pub vdev_p: f64,
    pub vdev_1: f64,
    pub emax_2p: f64,
    pub sum_e_abs3: f64,
    pub sum_e_abs2p: f64,
}

const ENUMERATION_MAX_N: usize = 24;

fn sign_of(b: bool) -> f64 {
    if b {
        1.0
    } else {
        -1.0
    }
}

/// |a|^q for a >= 0 with exact fast paths for the common integer orders.
fn pow_nonneg(a: f64, q: f64) -> f64 {
    if q == 1.0 {
        a
    } else if q == 2.0 {
        a * a
    } else if q == 3.0 {
        a * a * a
    } else if q == 4.0 {
        let s = a * a;
        s * s
    } else {
        a.powf(q)
    }
}

impl FamilySpec {
    pub fn rademacher(n: usize) -> Result<Self, FamilyError> {
        Self::validated(FamilyKind::Rademacher, n, n as f64, 1.0)
    }

    pub fn sign_modulated(n: usize, delta: f64) -> Result<Self, FamilyError> {
        if !(0.0..1.0).contains(&delta) {
            return Err(FamilyError::DeltaOutOfRange(delta));
        }
        let sn2 = 1.0 + (n as f64 - 1.0) * (1.0 + delta * delta);
        Self::validated(FamilyKind::SignModulated { delta }, n, sn2, 1.0 + delta)
    }

    pub fn uniform(n: usize) -> Result<Self, FamilyError> {
        Self::validated(FamilyKind::Uniform, n, n as f64, 3f64.sqrt())
    }

    /// Two-point family from raw atoms `a` (positive) and `-b` (negative).
    /// The pair is renormalized to mean zero and unit variance, so only the
    /// ratio a/b (equivalently, the skew) survives.
    pub fn two_point(n: usize, a: f64, b: f64) -> Result<Self, FamilyError> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(FamilyError::AtomOutOfRange(a, b));
        }
        let pos = (a / b).sqrt();
        let neg = (b / a).sqrt();
        Self::validated(
            FamilyKind::TwoPoint { pos, neg },
            n,
            n as f64,
            pos.max(neg),
        )
    }

    fn validated(
        kind: FamilyKind,
        n: usize,
        sn2: f64,
        gamma_inf: f64,
    ) -> Result<Self, FamilyError> {
        if n == 0 {
            return Err(FamilyError::ZeroLength);
        }
        Ok(FamilySpec {
            kind,
            n,
            analytic_sn2: Some(sn2),
            analytic_gamma_inf: Some(gamma_inf),
        })
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Closed-form variance total, when the family has one (all built-ins do).
    pub fn analytic_sn2(&self) -> Option<f64> {
        self.analytic_sn2
    }

    /// Uniform bound on |X_i|, when the family has one (all built-ins do).
    pub fn analytic_gamma_inf(&self) -> Option<f64> {
        self.analytic_gamma_inf
    }

    /// Whether V_n^2 = 1 holds almost surely by construction.
    pub fn variance_is_deterministic(&self) -> bool {
        match self.kind {
            FamilyKind::Rademacher | FamilyKind::Uniform | FamilyKind::TwoPoint { .. } => true,
            FamilyKind::SignModulated { delta } => delta == 0.0,
        }
    }

    /// Stable display label, also used as the CSV family column.
    pub fn label(&self) -> String {
        match self.kind {
            FamilyKind::Rademacher => "rademacher".to_string(),
            FamilyKind::SignModulated { delta } => format!("sign_modulated(delta={delta})"),
            FamilyKind::Uniform => "uniform".to_string(),
            FamilyKind::TwoPoint { pos, neg } => format!("two_point(pos={pos};neg={neg})"),
        }
    }

    fn variance_total(&self) -> f64 {
        self.analytic_sn2
            .expect("built-in families carry a closed-form variance total")
    }

    /// Draws one path from the replication's dedicated substream. The same
    /// key always yields the bit-identical path.
    pub fn sample_path(&self, key: &StreamKey) -> Path {
        let mut rng = key.path_rng();
        match self.kind {
            FamilyKind::Uniform => {
                let half_width = 3f64.sqrt();
                let m3 = 0.75 * 3f64.sqrt();
                let x: Vec<f64> = (0..self.n)
                    .map(|_| (2.0 * rng.gen::<f64>() - 1.0) * half_width)
                    .collect();
                Path {
                    x,
                    sigma2: vec![1.0; self.n],
                    m3: vec![m3; self.n],
                    sn2: self.variance_total(),
                }
            }
            _ => {
                // Fair-sign families keep the cheaper bool draw; the biased
                // two-point noise needs its exact up-probability.
                let p_up = self.noise_up_prob();
                let noise: Vec<f64> = if p_up == 0.5 {
                    (0..self.n).map(|_| sign_of(rng.gen::<bool>())).collect()
                } else {
                    (0..self.n)
                        .map(|_| sign_of(rng.gen::<f64>() < p_up))
                        .collect()
                };
                self.path_from_noise(&noise)
            }
        }
    }

    // Builds the path of a discrete family from its +-1 driving noise.
    fn path_from_noise(&self, noise: &[f64]) -> Path {
        debug_assert_eq!(noise.len(), self.n);
        let mut x = Vec::with_capacity(self.n);
        let mut sigma2 = Vec::with_capacity(self.n);
        let mut m3 = Vec::with_capacity(self.n);
        match self.kind {
            FamilyKind::Rademacher => {
                for &e in noise {
                    x.push(e);
                    sigma2.push(1.0);
                    m3.push(1.0);
                }
            }
            FamilyKind::SignModulated { delta } => {
                for (i, &e) in noise.iter().enumerate() {
                    let b = if i == 0 { 1.0 } else { 1.0 + delta * noise[i - 1] };
                    x.push(b * e);
                    sigma2.push(b * b);
                    m3.push(b * b * b);
                }
            }
            FamilyKind::TwoPoint { pos, neg } => {
                let m3_const = self.two_point_abs_moment(3.0);
                for &e in noise {
                    x.push(if e > 0.0 { pos } else { -neg });
                    sigma2.push(1.0);
                    m3.push(m3_const);
                }
            }
            FamilyKind::Uniform => unreachable!("uniform has no sign-driven representation"),
        }
        Path {
            x,
            sigma2,
            m3,
            sn2: self.variance_total(),
        }
    }

    // Probability that the i-th driving noise is +1.
    fn noise_up_prob(&self) -> f64 {
        match self.kind {
            FamilyKind::TwoPoint { pos, neg } => neg / (pos + neg),
            _ => 0.5,
        }
    }

    // E|X|^q for the i.i.d. two-point law.
    fn two_point_abs_moment(&self, q: f64) -> f64 {
        match self.kind {
            FamilyKind::TwoPoint { pos, neg } => {
                let p_up = neg / (pos + neg);
                pow_nonneg(pos, q) * p_up + pow_nonneg(neg, q) * (1.0 - p_up)
            }
            _ => unreachable!(),
        }
    }
}

impl Path {
    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn stats(&self) -> PathStats {
        let sn = self.sn2.sqrt();
        let normalized_sum = pairwise_sum(&self.x) / sn;
        let vn2 = pairwise_sum(&self.sigma2) / self.sn2;
        let max_abs_x = self.x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let abs3: Vec<f64> = self.x.iter().map(|v| {
            let a = v.abs();
            a * a * a
        }).collect();
        PathStats {
            normalized_sum,
            vn2,
            max_abs_x,
            sum_abs3: pairwise_sum(&abs3),
        }
    }
}

// Per-replication scalars feeding the moment reductions.
struct RepScalars {
    sum_sigma2: f64,
    max_abs: f64,
    sum_m3: f64,
    sum_abs2p: f64,
}

fn rep_scalars(path: &Path, two_p: f64) -> RepScalars {
    let sum_sigma2 = pairwise_sum(&path.sigma2);
    let sum_m3 = pairwise_sum(&path.m3);
    let max_abs = path.x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let abs2p: Vec<f64> = path.x.iter().map(|v| pow_nonneg(v.abs(), two_p)).collect();
    RepScalars {
        sum_sigma2,
        max_abs,
        sum_m3,
        sum_abs2p: pairwise_sum(&abs2p),
    }
}

fn assemble_moments(
    spec: &FamilySpec,
    p: f64,
    rows: &[RepScalars],
    weights: Option<&[f64]>,
) -> Result<MomentEstimates, FamilyError> {
    let two_p = 2.0 * p;
    let m = rows.len() as u64;

    // Weighted exact expectation or plain Monte Carlo mean with its SE.
    let reduce = |vals: &[f64]| -> (f64, f64) {
        match weights {
            Some(w) => {
                let weighted: Vec<f64> = vals.iter().zip(w).map(|(v, p)| v * p).collect();
                (pairwise_sum(&weighted), 0.0)
            }
            None => mean_and_se(vals),
        }
    };

    let sum_sigma2: Vec<f64> = rows.iter().map(|r| r.sum_sigma2).collect();
    let (sn2_mc, sn2_mc_se) = reduce(&sum_sigma2);
    let sn2 = spec.analytic_sn2().unwrap_or(sn2_mc);

    let devs: Vec<f64> = rows.iter().map(|r| (r.sum_sigma2 / sn2 - 1.0).abs()).collect();
    let devs_p: Vec<f64> = devs.iter().map(|&d| pow_nonneg(d, p)).collect();
    let emax: Vec<f64> = rows.iter().map(|r| pow_nonneg(r.max_abs, two_p)).collect();
    let sum_m3: Vec<f64> = rows.iter().map(|r| r.sum_m3).collect();
    let sum_abs2p: Vec<f64> = rows.iter().map(|r| r.sum_abs2p).collect();

    let (vdev_p, vdev_p_se) = reduce(&devs_p);
    let (vdev_1, vdev_1_se) = reduce(&devs);
    let (emax_2p, emax_se) = reduce(&emax);
    let (sum_e_abs3, sum_e_abs3_se) = reduce(&sum_m3);
    let (sum_e_abs2p, sum_e_abs2p_se) = reduce(&sum_abs2p);
    let vdev_inf = devs.iter().fold(0.0f64, |acc, &d| acc.max(d));

    let est = MomentEstimates {
        sn2,
        sn2_mc,
        vdev_p,
        vdev_1,
        vdev_inf,
        emax_2p,
        sum_e_abs3,
        sum_e_abs2p,
        p,
        m,
        se: MomentStdErrs {
            sn2_mc: sn2_mc_se,
            vdev_p: vdev_p_se,
            vdev_1: vdev_1_se,
            emax_2p: emax_se,
            sum_e_abs3: sum_e_abs3_se,
            sum_e_abs2p: sum_e_abs2p_se,
        },
    };
    let finite = est.sn2.is_finite()
        && est.sn2_mc.is_finite()
        && est.vdev_p.is_finite()
        && est.vdev_1.is_finite()
        && est.vdev_inf.is_finite()
        && est.emax_2p.is_finite()
        && est.sum_e_abs3.is_finite()
        && est.sum_e_abs2p.is_finite();
    if !finite {
        return Err(FamilyError::NonFiniteMoment(p));
    }
    Ok(est)
}

/// Monte Carlo moment estimation over `m` independent replications.
///
/// Replications run in parallel; results are bit-identical for a given
/// (spec, p, m, master_seed) regardless of worker count, because every
/// replication owns a counter-indexed substream and the reductions have a
/// fixed shape.
pub fn estimate_moments(
    spec: &FamilySpec,
    p: f64,
    m: u64,
    master_seed: u64,
) -> Result<MomentEstimates, FamilyError> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(FamilyError::MomentOrderOutOfRange(p));
    }
    if m < 2 {
        return Err(FamilyError::TooFewReplications(m));
    }
    let two_p = 2.0 * p;
    let rows: Vec<RepScalars> = (0..m)
        .into_par_iter()
        .map(|rep| {
            let path = spec.sample_path(&StreamKey::new(master_seed, rep));
            rep_scalars(&path, two_p)
        })
        .collect();
    assemble_moments(spec, p, &rows, None)
}

/// Smallest gamma with `E[|X_i|^{2+rho} | F_{i-1}] <= gamma^rho * E[X_i^2 | F_{i-1}]`
/// over every reachable history state of the family.
pub fn check_conditional_ratio(spec: &FamilySpec, rho: f64) -> Result<f64, FamilyError> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(FamilyError::RhoOutOfRange(rho));
    }
    let gamma = match spec.kind {
        FamilyKind::Rademacher => 1.0,
        // Conditional scale b takes values 1 (first step) and 1 -+ delta;
        // the ratio per state is b^rho, so the worst state is b = 1 + delta.
        FamilyKind::SignModulated { delta } => 1.0 + delta,
        // E|X|^q = c^q / (q + 1) on [-c, c] with c = sqrt(3).
        FamilyKind::Uniform => {
            let c = 3f64.sqrt();
            c * (3.0 / (3.0 + rho)).powf(1.0 / rho)
        }
        FamilyKind::TwoPoint { .. } => {
            let num = spec.two_point_abs_moment(2.0 + rho);
            let den = spec.two_point_abs_moment(2.0);
            (num / den).powf(1.0 / rho)
        }
    };
    Ok(gamma)
}

// Enumeration guard shared by the exact-law and exact-moment routines.
fn enumeration_count(spec: &FamilySpec) -> Result<u64, FamilyError> {
    if matches!(spec.kind, FamilyKind::Uniform) {
        return Err(FamilyError::NotEnumerable);
    }
    if spec.n > ENUMERATION_MAX_N {
        return Err(FamilyError::EnumerationTooLarge {
            n: spec.n,
            max: ENUMERATION_MAX_N,
        });
    }
    Ok(1u64 << spec.n)
}

fn noise_of_pattern(pattern: u64, n: usize) -> Vec<f64> {
    (0..n).map(|i| sign_of(pattern >> i & 1 == 1)).collect()
}

fn pattern_prob(spec: &FamilySpec, noise: &[f64]) -> f64 {
    let p_up = spec.noise_up_prob();
    noise
        .iter()
        .map(|&e| if e > 0.0 { p_up } else { 1.0 - p_up })
        .product()
}

/// Exact law of S_n / s_n for a discrete family, by full enumeration of the
/// driving noise. Atoms come back sorted with equal values merged.
pub fn exact_sum_law(spec: &FamilySpec) -> Result<Vec<(f64, f64)>, FamilyError> {
    let count = enumeration_count(spec)?;
    let sn = spec.variance_total().sqrt();
    let mut atoms: Vec<(f64, f64)> = (0..count)
        .map(|pattern| {
            let noise = noise_of_pattern(pattern, spec.n);
            let path = spec.path_from_noise(&noise);
            (pairwise_sum(&path.x) / sn, pattern_prob(spec, &noise))
        })
        .collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (v, p) in atoms {
        match merged.last_mut() {
            Some(last) if last.0 == v => last.1 += p,
            _ => merged.push((v, p)),
        }
    }
    Ok(merged)
}

/// Exact moment summaries for a discrete family: the same fields as
/// [`estimate_moments`], but as exact expectations over every driving-noise
/// pattern. All standard errors are zero; `m` reports the pattern count.
pub fn enumerate_moments(spec: &FamilySpec, p: f64) -> Result<MomentEstimates, FamilyError> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(FamilyError::MomentOrderOutOfRange(p));
    }
    let count = enumeration_count(spec)?;
    let two_p = 2.0 * p;
    let mut rows = Vec::with_capacity(count as usize);
    let mut weights = Vec::with_capacity(count as usize);
    for pattern in 0..count {
        let noise = noise_of_pattern(pattern, spec.n);
        let path = spec.path_from_noise(&noise);
        rows.push(rep_scalars(&path, two_p));
        weights.push(pattern_prob(spec, &noise));
    }
    assemble_moments(spec, p, &rows, Some(&weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constructor_validation() {
        assert!(matches!(
            FamilySpec::rademacher(0),
            Err(FamilyError::ZeroLength)
        ));
        assert!(matches!(
            FamilySpec::sign_modulated(4, 1.0),
            Err(FamilyError::DeltaOutOfRange(_))
        ));
        assert!(matches!(
            FamilySpec::sign_modulated(4, -0.1),
            Err(FamilyError::DeltaOutOfRange(_))
        ));
        assert!(matches!(
            FamilySpec::two_point(4, 0.0, 1.0),
            Err(FamilyError::AtomOutOfRange(..))
        ));
        assert!(matches!(
            FamilySpec::two_point(4, 2.0, -1.0),
            Err(FamilyError::AtomOutOfRange(..))
        ));
    }

    #[test]
    fn closed_form_totals() {
        let sm = FamilySpec::sign_modulated(8, 0.5).unwrap();
        assert_eq!(sm.analytic_sn2(), Some(1.0 + 7.0 * 1.25));
        assert_eq!(sm.analytic_gamma_inf(), Some(1.5));
        let tp = FamilySpec::two_point(4, 2.0, 0.5).unwrap();
        assert_eq!(tp.analytic_sn2(), Some(4.0));
        // Raw atoms (2, 0.5) are already normalized: pos = 2, neg = 0.5.
        assert_eq!(tp.analytic_gamma_inf(), Some(2.0));
        assert!(FamilySpec::uniform(3).unwrap().variance_is_deterministic());
        assert!(!sm.variance_is_deterministic());
        assert!(FamilySpec::sign_modulated(3, 0.0)
            .unwrap()
            .variance_is_deterministic());
    }

    #[test]
    fn two_point_renormalization_is_scale_free() {
        let a = FamilySpec::two_point(4, 2.0, 0.5).unwrap();
        let b = FamilySpec::two_point(4, 8.0, 2.0).unwrap();
        assert_eq!(a.kind(), b.kind());
        // Mean zero and unit variance under the stored atoms.
        if let FamilyKind::TwoPoint { pos, neg } = a.kind() {
            let p_up = neg / (pos + neg);
            let mean = pos * p_up - neg * (1.0 - p_up);
            let var = pos * pos * p_up + neg * neg * (1.0 - p_up);
            assert_relative_eq!(mean, 0.0, epsilon = 1e-15);
            assert_relative_eq!(var, 1.0, epsilon = 1e-14);
        } else {
            panic!("expected two-point kind");
        }
    }

    #[test]
    fn sample_path_is_deterministic() {
        for spec in [
            FamilySpec::rademacher(16).unwrap(),
            FamilySpec::sign_modulated(16, 0.5).unwrap(),
            FamilySpec::uniform(16).unwrap(),
            FamilySpec::two_point(16, 2.0, 0.5).unwrap(),
        ] {
            let key = StreamKey::new(99, 3);
            assert_eq!(spec.sample_path(&key), spec.sample_path(&key));
            let other = spec.sample_path(&StreamKey::new(99, 4));
            assert_ne!(spec.sample_path(&key).x, other.x);
        }
    }

    #[test]
    fn sign_modulated_conditional_moments_track_the_history() {
        let spec = FamilySpec::sign_modulated(64, 0.5).unwrap();
        let path = spec.sample_path(&StreamKey::new(7, 0));
        assert_eq!(path.sigma2[0], 1.0);
        assert_eq!(path.m3[0], 1.0);
        for i in 1..64 {
            // The conditional scale comes from the previous driving sign, so
            // sigma2 equals the realized increment squared and m3 its cube.
            let b = 1.0 + 0.5 * path.x[i - 1].signum();
            assert_eq!(path.x[i].abs(), b);
            assert_eq!(path.sigma2[i], b * b);
            assert_eq!(path.m3[i], b * b * b);
        }
    }

    #[test]
    fn deterministic_variance_families_have_unit_vn2() {
        for spec in [
            FamilySpec::rademacher(1000).unwrap(),
            FamilySpec::uniform(1000).unwrap(),
            FamilySpec::two_point(1000, 3.0, 1.0).unwrap(),
        ] {
            let stats = spec.sample_path(&StreamKey::new(5, 11)).stats();
            assert_eq!(stats.vn2, 1.0);
        }
    }

    #[test]
    fn rademacher_moments_are_exact() {
        let spec = FamilySpec::rademacher(32).unwrap();
        let est = estimate_moments(&spec, 1.5, 500, 42).unwrap();
        assert_eq!(est.vdev_p, 0.0);
        assert_eq!(est.vdev_inf, 0.0);
        assert_eq!(est.emax_2p, 1.0);
        assert_eq!(est.sum_e_abs3, 32.0);
        assert_eq!(est.sum_e_abs2p, 32.0);
        assert_eq!(est.se.sum_e_abs3, 0.0);
        assert_eq!(est.sn2, 32.0);
    }

    #[test]
    fn uniform_third_moment_uses_conditional_identity() {
        // Per-step E|X|^3 = 3*sqrt(3)/4; the conditional-moment route makes
        // the estimate exact with zero standard error.
        let spec = FamilySpec::uniform(10).unwrap();
        let est = estimate_moments(&spec, 1.0, 100, 1).unwrap();
        assert_relative_eq!(est.sum_e_abs3, 10.0 * 0.75 * 3f64.sqrt(), epsilon = 1e-12);
        assert_eq!(est.se.sum_e_abs3, 0.0);
    }

    #[test]
    fn sign_modulated_n2_deviation_matches_brute_force() {
        // For n = 2 both values of the driving sign give |V^2 - 1| = 1/2.25,
        // so the estimate is exact for any replication count.
        let spec = FamilySpec::sign_modulated(2, 0.5).unwrap();
        let est = estimate_moments(&spec, 1.0, 64, 9).unwrap();
        assert_relative_eq!(est.vdev_p, 1.0 / 2.25, epsilon = 1e-15);
        assert_relative_eq!(est.vdev_inf, 1.0 / 2.25, epsilon = 1e-15);
    }

    #[test]
    fn mc_variance_total_agrees_with_closed_form() {
        let spec = FamilySpec::sign_modulated(32, 0.7).unwrap();
        let est = estimate_moments(&spec, 1.0, 20_000, 1234).unwrap();
        let analytic = spec.analytic_sn2().unwrap();
        assert!(
            (est.sn2_mc - analytic).abs() <= 4.0 * est.se.sn2_mc.max(1e-12),
            "sn2_mc = {}, analytic = {}, se = {}",
            est.sn2_mc,
            analytic,
            est.se.sn2_mc
        );
        assert_eq!(est.sn2, analytic);
    }

    #[test]
    fn moment_estimation_rejects_bad_arguments() {
        let spec = FamilySpec::rademacher(4).unwrap();
        assert!(matches!(
            estimate_moments(&spec, 0.5, 100, 0),
            Err(FamilyError::MomentOrderOutOfRange(_))
        ));
        assert!(matches!(
            estimate_moments(&spec, 1.0, 1, 0),
            Err(FamilyError::TooFewReplications(1))
        ));
    }

    #[test]
    fn conditional_ratio_closed_forms() {
        let r = FamilySpec::rademacher(4).unwrap();
        assert_eq!(check_conditional_ratio(&r, 1.0).unwrap(), 1.0);
        let sm = FamilySpec::sign_modulated(4, 0.5).unwrap();
        assert_eq!(check_conditional_ratio(&sm, 1.0).unwrap(), 1.5);
        let u = FamilySpec::uniform(4).unwrap();
        assert_relative_eq!(
            check_conditional_ratio(&u, 1.0).unwrap(),
            0.75 * 3f64.sqrt(),
            epsilon = 1e-15
        );
        let tp = FamilySpec::two_point(4, 2.0, 0.5).unwrap();
        // E|X|^3 = 1.7 and E X^2 = 1 for atoms (2, -0.5).
        assert_relative_eq!(check_conditional_ratio(&tp, 1.0).unwrap(), 1.7, epsilon = 1e-14);
        assert!(matches!(
            check_conditional_ratio(&r, 0.0),
            Err(FamilyError::RhoOutOfRange(_))
        ));
    }

    #[test]
    fn exact_law_of_fair_signs_is_binomial() {
        let spec = FamilySpec::rademacher(4).unwrap();
        let law = exact_sum_law(&spec).unwrap();
        assert_eq!(law.len(), 5);
        let probs: Vec<f64> = law.iter().map(|&(_, p)| p).collect();
        assert_eq!(probs, vec![0.0625, 0.25, 0.375, 0.25, 0.0625]);
        assert_eq!(law[0].0, -2.0);
        assert_eq!(law[4].0, 2.0);
    }

    #[test]
    fn exact_law_guards() {
        assert!(matches!(
            exact_sum_law(&FamilySpec::uniform(3).unwrap()),
            Err(FamilyError::NotEnumerable)
        ));
        assert!(matches!(
            exact_sum_law(&FamilySpec::rademacher(25).unwrap()),
            Err(FamilyError::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn enumerated_moments_match_sampling_limits() {
        // Rademacher moments are path-independent, so enumeration and
        // sampling must agree exactly.
        let spec = FamilySpec::rademacher(6).unwrap();
        let exact = enumerate_moments(&spec, 1.5).unwrap();
        let sampled = estimate_moments(&spec, 1.5, 100, 3).unwrap();
        assert_eq!(exact.vdev_p, sampled.vdev_p);
        assert_eq!(exact.emax_2p, sampled.emax_2p);
        assert_eq!(exact.sum_e_abs3, sampled.sum_e_abs3);
        assert_eq!(exact.m, 64);
        assert_eq!(exact.se.vdev_p, 0.0);
    }

    #[test]
    fn two_point_enumeration_weights_are_probabilities() {
        let spec = FamilySpec::two_point(3, 2.0, 0.5).unwrap();
        let law = exact_sum_law(&spec).unwrap();
        let total: f64 = law.iter().map(|&(_, p)| p).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        let mean: f64 = law.iter().map(|&(v, p)| v * p).sum();
        assert_relative_eq!(mean, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn two_point_sampler_draws_the_biased_noise() {
        // pos = 2, neg = 0.5, so up must land with probability 0.2, not 0.5.
        // A fair-coin sampler would put the increment mean at 0.75 and the
        // up-fraction at 0.5, both hundreds of standard errors away.
        let spec = FamilySpec::two_point(16, 2.0, 0.5).unwrap();
        let reps = 20_000u64;
        let mut total = 0.0;
        let mut ups = 0u64;
        let mut draws = 0u64;
        for rep in 0..reps {
            let path = spec.sample_path(&StreamKey::new(97, rep));
            for &x in &path.x {
                total += x;
                ups += u64::from(x > 0.0);
                draws += 1;
            }
        }
        let mean = total / draws as f64;
        let se = 1.0 / (draws as f64).sqrt();
        assert!(mean.abs() < 5.0 * se, "increment mean {mean} (se {se})");
        let up_fraction = ups as f64 / draws as f64;
        assert_relative_eq!(up_fraction, 0.2, epsilon = 5.0 * se);

        // The only sampled moment that feels the bias directly: at p = 3/2
        // the per-step |x|^3 expectation separates the two sign laws.
        let est = estimate_moments(&spec, 1.5, 20_000, 97).unwrap();
        let exact = enumerate_moments(&spec, 1.5).unwrap();
        assert!(
            (est.sum_e_abs2p - exact.sum_e_abs2p).abs() < 4.0 * est.se.sum_e_abs2p,
            "sampled {} vs exact {} (se {})",
            est.sum_e_abs2p,
            exact.sum_e_abs2p,
            est.se.sum_e_abs2p
        );
    }
}
