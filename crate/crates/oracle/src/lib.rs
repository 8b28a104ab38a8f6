//! Slow, independent reference evaluations used only by test code.
//!
//! Nothing here shares a code path with the fast implementations under test:
//! the normal CDF comes from a Maclaurin series in the bulk and a Laplace
//! continued fraction in the tails, the quantile from plain bisection, and
//! integrals from adaptive Simpson quadrature.

// Full printed precision kept so the constant is recognizable; digits past
// f64 resolution are ignored by the parser.
#[allow(clippy::excessive_precision)]
const INV_SQRT_2PI: f64 = 0.39894228040143267794;

/// Standard normal density.
pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF, accurate to a few ulp in absolute terms on [-40, 40].
pub fn cdf(x: f64) -> f64 {
    if x < 0.0 {
        return upper_tail(-x);
    }
    1.0 - upper_tail(x)
}

/// Upper tail P(Z > x) for x >= 0.
pub fn upper_tail(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x <= 3.0 {
        0.5 - bulk_series(x)
    } else {
        tail_continued_fraction(x)
    }
}

// Maclaurin series for the centered CDF:
//   Phi(x) - 1/2 = pdf(x) * sum_{k>=0} x^(2k+1) / (1*3*5*...*(2k+1))
// All terms share the sign of x, so no cancellation occurs; on |x| <= 3 the
// series converges in under 40 terms.
fn bulk_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    let mut odd = 1.0;
    loop {
        odd += 2.0;
        term *= x * x / odd;
        let next = sum + term;
        if next == sum {
            break;
        }
        sum = next;
        if odd > 2000.0 {
            break;
        }
    }
    pdf(x) * sum
}

// Laplace continued fraction for the Mills ratio, evaluated with the
// modified Lentz algorithm:
//   P(Z > x) = pdf(x) / (x + 1/(x + 2/(x + 3/(x + ...))))
// Converges quickly for x >= 3.
fn tail_continued_fraction(x: f64) -> f64 {
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for i in 1..=500u32 {
        let a = i as f64;
        d = x + a * d;
        if d == 0.0 {
            d = tiny;
        }
        c = x + a / c;
        if c == 0.0 {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    pdf(x) / f
}

/// Standard normal quantile by bisection on `cdf`. Panics outside (0, 1).
pub fn quantile(u: f64) -> f64 {
    assert!(u > 0.0 && u < 1.0, "quantile argument must lie in (0, 1)");
    let mut lo = -45.0;
    let mut hi = 45.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Adaptive Simpson quadrature of `f` over [a, b] to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let c = 0.5 * (a + b);
    let fa = f(a);
    let fb = f(b);
    let fc = f(c);
    let whole = simpson(a, b, fa, fc, fb);
    simpson_step(f, a, b, fa, fb, fc, whole, tol, 60)
}

fn simpson(a: f64, b: f64, fa: f64, fc: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fc + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fc: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let c = 0.5 * (a + b);
    let d = 0.5 * (a + c);
    let e = 0.5 * (c + b);
    let fd = f(d);
    let fe = f(e);
    let left = simpson(a, c, fa, fd, fc);
    let right = simpson(c, b, fc, fe, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, c, fa, fc, fd, left, 0.5 * tol, depth - 1)
        + simpson_step(f, c, b, fc, fb, fe, right, 0.5 * tol, depth - 1)
}
