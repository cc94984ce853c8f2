//! Generalized Laguerre polynomials by forward three-term recurrence.

/// `L_n^alpha(x)` from
/// `(k+1) L_{k+1} = (2k + 1 + alpha - x) L_k - (k + alpha) L_{k-1}`.
pub fn laguerre(n: usize, alpha: f64, x: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 1.0 + alpha - x;
    for k in 1..n {
        let k = k as f64;
        let next = ((2.0 * k + 1.0 + alpha - x) * cur - (k + alpha) * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// d/dx L_n^alpha(x) = -L_{n-1}^{alpha+1}(x).
pub fn laguerre_deriv(n: usize, alpha: f64, x: f64) -> f64 {
    if n == 0 {
        0.0
    } else {
        -laguerre(n - 1, alpha + 1.0, x)
    }
}
