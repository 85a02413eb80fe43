//! Scalar quadrature, root finding and a small simplex minimizer.

use ndarray::Array2;

use crate::linalg::{eigh, C64};
use crate::{Error, Result};

/// Adaptive Simpson integration of `f` over `[a, b]`.
///
/// The tolerance is absolute. Smooth integrands (everything this crate
/// feeds in) converge in a handful of bisections per oscillation.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_recurse(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Root of a continuous scalar function on a bracketing interval, by
/// bisection refined with secant steps. `f(a)` and `f(b)` must differ in
/// sign.
pub fn find_root<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    let mut lo = a;
    let mut hi = b;
    let mut flo = f(lo);
    let mut fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::NoBracket(format!(
            "f({a}) = {flo:.3e} and f({b}) = {fhi:.3e} have the same sign"
        )));
    }
    for _ in 0..200 {
        // Secant proposal, falling back to the midpoint when it leaves the
        // bracket or stalls.
        let mut x = hi - fhi * (hi - lo) / (fhi - flo);
        if !x.is_finite() || x <= lo.min(hi) || x >= lo.max(hi) {
            x = 0.5 * (lo + hi);
        }
        let fx = f(x);
        if fx == 0.0 || (hi - lo).abs() < tol {
            return Ok(x);
        }
        if fx.signum() == flo.signum() {
            lo = x;
            flo = fx;
        } else {
            hi = x;
            fhi = fx;
        }
        if (hi - lo).abs() < tol {
            return Ok(0.5 * (lo + hi));
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Expands `[a, b]` geometrically around `b` until `f` changes sign, then
/// polishes with [`find_root`]. Used by calibration searches that only know
/// a plausible starting window.
pub fn find_root_expanding<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    max_expand: u32,
    tol: f64,
) -> Result<f64> {
    let mut lo = a;
    let mut hi = b;
    let mut flo = f(lo);
    let mut fhi = f(hi);
    let mut tries = 0;
    while flo.signum() == fhi.signum() {
        if tries >= max_expand {
            return Err(Error::NoBracket(format!(
                "no sign change in [{lo}, {hi}] after {max_expand} expansions"
            )));
        }
        let span = hi - lo;
        if flo.abs() < fhi.abs() {
            lo -= span;
            flo = f(lo);
        } else {
            hi += span;
            fhi = f(hi);
        }
        tries += 1;
    }
    find_root(f, lo, hi, tol)
}

/// Nelder-Mead minimization over `N` parameters: reflection, expansion,
/// contraction and shrink with the standard coefficients, stopped once the
/// simplex value spread falls below `1e-9`.
pub(crate) fn nelder_mead<const N: usize, F: Fn(&[f64; N]) -> f64>(
    f: &F,
    x0: [f64; N],
    step: [f64; N],
) -> ([f64; N], f64) {
    let mut simplex: Vec<([f64; N], f64)> = Vec::with_capacity(N + 1);
    simplex.push((x0, f(&x0)));
    for i in 0..N {
        let mut x = x0;
        x[i] += step[i];
        simplex.push((x, f(&x)));
    }
    for _ in 0..400 {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        if simplex[N].1 - simplex[0].1 < 1e-9 {
            break;
        }
        let mut c = [0.0; N];
        for v in &simplex[..N] {
            for i in 0..N {
                c[i] += v.0[i] / N as f64;
            }
        }
        let at = |t: f64| -> [f64; N] {
            let mut x = [0.0; N];
            for i in 0..N {
                x[i] = c[i] + t * (c[i] - simplex[N].0[i]);
            }
            x
        };
        let xr = at(1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = at(2.0);
            let fe = f(&xe);
            simplex[N] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[N - 1].1 {
            simplex[N] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[N].1 {
                let x = at(0.5);
                (x, f(&x))
            } else {
                let x = at(-0.5);
                (x, f(&x))
            };
            if fc < simplex[N].1.min(fr) {
                simplex[N] = (xc, fc);
            } else {
                let anchor = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    for i in 0..N {
                        v.0[i] = anchor[i] + 0.5 * (v.0[i] - anchor[i]);
                    }
                    v.1 = f(&v.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    simplex[0]
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, by Newton refinement of
/// the Legendre polynomial roots.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "quadrature order must be positive");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let pk = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = pk;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gamma function by the Lanczos approximation (g = 7, nine terms), with
/// the reflection formula below 1/2. Good to about 1e-13 relative over the
/// small positive arguments used in this crate.
fn gamma_fn(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let pi = std::f64::consts::PI;
    if x < 0.5 {
        return pi / ((pi * x).sin() * gamma_fn(1.0 - x));
    }
    let z = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + 7.5;
    (2.0 * pi).sqrt() * t.powf(z + 0.5) * (-t).exp() * acc
}

/// Gauss-Jacobi nodes and weights on `[-1, 1]` for the weight
/// `(1 - x)^a (1 + x)^b`, `a, b > -1`, by diagonalizing the three-term
/// recurrence (Golub-Welsch). The weights absorb the weight function, so
/// `sum w_i f(x_i)` approximates the weighted integral of `f` alone, even
/// when the weight is singular at the endpoints.
pub fn gauss_jacobi(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "quadrature order must be positive");
    assert!(a > -1.0 && b > -1.0, "Jacobi exponents must exceed -1");
    let mass =
        (a + b + 1.0).exp2() * gamma_fn(a + 1.0) * gamma_fn(b + 1.0) / gamma_fn(a + b + 2.0);
    let mut j = Array2::<C64>::zeros((n, n));
    j[[0, 0]] = C64::from((b - a) / (a + b + 2.0));
    for k in 1..n {
        let kf = k as f64;
        let s = 2.0 * kf + a + b;
        j[[k, k]] = C64::from((b * b - a * a) / (s * (s + 2.0)));
        // the k = 1 coefficient needs its reduced form: the general one is
        // 0/0 when a + b + 1 = 0
        let off_sq = if k == 1 {
            4.0 * (a + 1.0) * (b + 1.0) / ((a + b + 2.0).powi(2) * (a + b + 3.0))
        } else {
            4.0 * kf * (kf + a) * (kf + b) * (kf + a + b) / (s * s * (s + 1.0) * (s - 1.0))
        };
        let off = C64::from(off_sq.sqrt());
        j[[k - 1, k]] = off;
        j[[k, k - 1]] = off;
    }
    let (nodes, vecs) = eigh(&j);
    let weights = (0..n).map(|i| mass * vecs[[0, i]].norm_sqr()).collect();
    (nodes.to_vec(), weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn gamma_function_reference_values() {
        assert!((gamma_fn(1.0) - 1.0).abs() < 1e-13);
        assert!((gamma_fn(5.0) - 24.0).abs() < 1e-11);
        assert!((gamma_fn(0.5) - PI.sqrt()).abs() < 1e-13);
        // reflection consistency between the two evaluation branches
        let x = 0.0408;
        let product = gamma_fn(x) * gamma_fn(1.0 - x) * (PI * x).sin();
        assert!((product - PI).abs() < 1e-11);
    }

    #[test]
    fn gauss_jacobi_reduces_to_known_rules() {
        // a = b = 0 is the Legendre rule
        let (xj, wj) = gauss_jacobi(12, 0.0, 0.0);
        let (xl, wl) = gauss_legendre(12);
        for i in 0..12 {
            assert!((xj[i] - xl[i]).abs() < 1e-12);
            assert!((wj[i] - wl[i]).abs() < 1e-12);
        }
        // a = b = -1/2 is the Chebyshev rule: cosine nodes, equal weights
        let n = 9;
        let (xc, wc) = gauss_jacobi(n, -0.5, -0.5);
        for (i, (x, w)) in xc.iter().zip(&wc).enumerate() {
            let k = (n - i) as f64;
            let expect = (PI * (2.0 * k - 1.0) / (2.0 * n as f64)).cos();
            assert!((x - expect).abs() < 1e-12, "node {i}");
            assert!((w - PI / n as f64).abs() < 1e-12, "weight {i}");
        }
        // a = -1/2, b = 1/2: mass pi, both first moments pi/2
        let (x, w) = gauss_jacobi(8, -0.5, 0.5);
        let mass: f64 = w.iter().sum();
        let m1: f64 = x.iter().zip(&w).map(|(x, w)| x * w).sum();
        let m2: f64 = x.iter().zip(&w).map(|(x, w)| x * x * w).sum();
        assert!((mass - PI).abs() < 1e-12);
        assert!((m1 - 0.5 * PI).abs() < 1e-12);
        assert!((m2 - 0.5 * PI).abs() < 1e-12);
    }

    #[test]
    fn gauss_jacobi_handles_near_flat_exponents() {
        // the steady-state densities use (1-x)^(g-1) (1+x)^g with small g;
        // check total mass against an independent route that substitutes
        // away each endpoint singularity and integrates adaptively
        let g = 0.0408;
        let (x, w) = gauss_jacobi(48, g - 1.0, g);
        assert!(x.iter().all(|x| x.abs() < 1.0));
        let mass: f64 = w.iter().sum();
        let right = |t: f64| (2.0 - t.powf(1.0 / g)).powf(g) / g;
        let left = |s: f64| s.powf(1.0 / g) * (2.0 - s.powf(1.0 / g)).powf(g - 1.0) / g;
        let split = adaptive_simpson(&right, 0.0, 1.0, 1e-11)
            + adaptive_simpson(&left, 0.0, 1.0, 1e-11);
        assert!(
            (mass - split).abs() < 1e-9 * mass,
            "mass {mass:.12e} vs split route {split:.12e}"
        );
    }

    #[test]
    fn simpson_integrates_gaussian_moments() {
        // int exp(-x^2) over R = sqrt(pi); the tails beyond |x|=8 are < 1e-28.
        let g = |x: f64| (-x * x).exp();
        let val = adaptive_simpson(&g, -8.0, 8.0, 1e-12);
        assert!((val - PI.sqrt()).abs() < 1e-10);

        let xg = |x: f64| x * x * (-x * x).exp();
        let val = adaptive_simpson(&xg, -8.0, 8.0, 1e-12);
        assert!((val - 0.5 * PI.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn simpson_handles_oscillatory_integrand() {
        let f = |x: f64| (10.0 * x).cos();
        let val = adaptive_simpson(&f, 0.0, 2.0, 1e-12);
        assert!((val - (20.0f64).sin() / 10.0).abs() < 1e-10);
    }

    #[test]
    fn simplex_search_minimizes_a_known_bowl() {
        let f = |x: &[f64; 3]| {
            (x[0] - 0.3).powi(2)
                + 2.0 * (x[1] + 0.7).powi(2)
                + 0.5 * (x[2] - 1.2).powi(2)
                + 0.3 * (x[0] - 0.3) * (x[1] + 0.7)
        };
        let (x, val) = nelder_mead(&f, [2.0, 2.0, -1.0], [0.5, 0.5, 0.5]);
        assert!(val < 1e-7);
        assert!((x[0] - 0.3).abs() < 1e-3);
        assert!((x[1] + 0.7).abs() < 1e-3);
        assert!((x[2] - 1.2).abs() < 1e-3);

        // two-parameter instantiation with an off-center start
        let g = |x: &[f64; 2]| (x[0] + 1.1).powi(2) + 3.0 * (x[1] - 0.4).powi(2);
        let (x, val) = nelder_mead(&g, [1.0, -1.0], [0.3, 0.3]);
        assert!(val < 1e-7);
        assert!((x[0] + 1.1).abs() < 1e-3);
        assert!((x[1] - 0.4).abs() < 1e-3);
    }

    #[test]
    fn root_finder_polishes_transcendental_root() {
        let f = |x: f64| x.cos() - x;
        let r = find_root(&f, 0.0, 1.5, 1e-14).unwrap();
        assert!((r.cos() - r).abs() < 1e-12);
    }

    #[test]
    fn root_finder_reports_missing_bracket() {
        let f = |x: f64| 1.0 + x * x;
        assert!(find_root(&f, -1.0, 1.0, 1e-12).is_err());
    }

    #[test]
    fn expanding_search_finds_far_root() {
        let f = |x: f64| x - 37.5;
        let r = find_root_expanding(&f, 0.0, 1.0, 12, 1e-12).unwrap();
        assert!((r - 37.5).abs() < 1e-9);
    }

    #[test]
    fn gauss_legendre_is_exact_on_polynomials() {
        for n in [5, 20, 121] {
            let (x, w) = gauss_legendre(n);
            assert_eq!(x.len(), n);
            let total: f64 = w.iter().sum();
            assert!((total - 2.0).abs() < 1e-13);
            // exact for degree 2n-1; check x^2 and x^6 against closed forms
            let m2: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi * xi).sum();
            assert!((m2 - 2.0 / 3.0).abs() < 1e-13);
            let m6: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(6)).sum();
            assert!((m6 - 2.0 / 7.0).abs() < 1e-13);
        }
        // a sharp but analytic integrand: int exp(-25 x^2) over [-1,1],
        // which is sqrt(pi)/5 times erf(5)
        let (x, w) = gauss_legendre(80);
        let val: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * (-25.0 * xi * xi).exp()).sum();
        let exact = PI.sqrt() / 5.0 * 0.999_999_999_998_462_5;
        assert!((val - exact).abs() < 1e-10);
    }
}
