//! Bracketed scalar root finding: secant steps guarded by bisection.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum RootError {
    #[error("no sign change on [{lo}, {hi}]: f(lo) = {f_lo}, f(hi) = {f_hi}")]
    NoBracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
    #[error("function is not finite at {0}")]
    NotFinite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    pub residual: f64,
    pub iterations: usize,
}

const MAX_ITER: usize = 500;

/// Finds `x` in `[lo, hi]` with `|f(x)| ≤ tol`, or the narrowest bracket
/// representable in `f64`. `f(lo)` and `f(hi)` must have opposite signs.
pub fn find_root<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<Root, RootError> {
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if !fa.is_finite() {
        return Err(RootError::NotFinite(a));
    }
    if !fb.is_finite() {
        return Err(RootError::NotFinite(b));
    }
    if fa == 0.0 {
        return Ok(Root {
            x: a,
            residual: 0.0,
            iterations: 0,
        });
    }
    if fb == 0.0 {
        return Ok(Root {
            x: b,
            residual: 0.0,
            iterations: 0,
        });
    }
    if fa.signum() == fb.signum() {
        return Err(RootError::NoBracket {
            lo,
            hi,
            f_lo: fa,
            f_hi: fb,
        });
    }
    let mut best = if fa.abs() < fb.abs() { (a, fa) } else { (b, fb) };
    for it in 1..=MAX_ITER {
        // secant candidate, rejected when it leaves the inner part of the bracket
        let s = b - fb * (b - a) / (fb - fa);
        let width = b - a;
        let x = if s.is_finite() && s > a + 0.01 * width && s < b - 0.01 * width && it % 4 != 0 {
            s
        } else {
            a + 0.5 * width
        };
        if x <= a || x >= b {
            return Ok(Root {
                x: best.0,
                residual: best.1,
                iterations: it,
            });
        }
        let fx = f(x);
        if !fx.is_finite() {
            return Err(RootError::NotFinite(x));
        }
        if fx.abs() < best.1.abs() {
            best = (x, fx);
        }
        if fx.abs() <= tol {
            return Ok(Root {
                x,
                residual: fx,
                iterations: it,
            });
        }
        if fx.signum() == fa.signum() {
            a = x;
            fa = fx;
        } else {
            b = x;
            fb = fx;
        }
    }
    Ok(Root {
        x: best.0,
        residual: best.1,
        iterations: MAX_ITER,
    })
}
