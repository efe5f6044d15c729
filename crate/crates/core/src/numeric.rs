//! Small scalar root-finding helpers shared by the cost models and the oracle.

/// Outcome of bracketing a monotone increasing function on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Bracket {
    /// The function changes sign; the root lies strictly inside.
    Root(f64),
    /// `g(lo) >= 0`: the function is non-negative on the whole interval.
    AtLower,
    /// `g(hi) <= 0`: the function is non-positive on the whole interval.
    AtUpper,
}

/// Bisection on a non-decreasing function `g` over `[lo, hi]`.
///
/// Stops once the bracket is narrower than `tol` or the midpoint no longer
/// moves in floating point.
pub(crate) fn bisect_increasing<F>(mut g: F, lo: f64, hi: f64, tol: f64) -> Bracket
where
    F: FnMut(f64) -> f64,
{
    let g_lo = g(lo);
    if g_lo >= 0.0 {
        return Bracket::AtLower;
    }
    let g_hi = g(hi);
    if g_hi <= 0.0 {
        return Bracket::AtUpper;
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > tol {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let g_mid = g(mid);
        if g_mid == 0.0 {
            return Bracket::Root(mid);
        }
        if g_mid < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    Bracket::Root(0.5 * (a + b))
}

/// `n` uniformly spaced samples over `[lo, hi]`, endpoints included.
pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
    (0..n).map(move |i| if i + 1 == n && n > 1 { hi } else { lo + step * i as f64 })
}
