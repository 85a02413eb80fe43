//! Dense complex linear algebra for small matrices.
//!
//! All matrices in this crate are truncated-Fock-space operators of a few
//! hundred rows at most, so the solvers favor robustness and zero external
//! linking over asymptotic speed: cyclic Jacobi for Hermitian eigenproblems,
//! scaling-and-squaring Pade approximation for the matrix exponential, and
//! partial-pivot LU for the linear solves inside it.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

pub type C64 = Complex64;

/// Conjugate transpose.
pub fn dagger(a: &Array2<C64>) -> Array2<C64> {
    let (r, c) = a.dim();
    Array2::from_shape_fn((c, r), |(i, j)| a[[j, i]].conj())
}

/// Kronecker product `a (x) b`.
pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[[i, j]];
            if aij == C64::new(0.0, 0.0) {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[[i * br + k, j * bc + l]] = aij * b[[k, l]];
                }
            }
        }
    }
    out
}

/// Largest absolute value of any element.
pub fn max_abs(a: &Array2<C64>) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}

/// Largest elementwise difference `max |a_ij - b_ij|`.
pub fn max_abs_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    assert_eq!(a.dim(), b.dim(), "max_abs_diff: shape mismatch");
    a.iter()
        .zip(b.iter())
        .fold(0.0, |m, (x, y)| m.max((x - y).norm()))
}

/// `max |(U^dag U - I)_ij|`, the departure of `u` from unitarity.
pub fn unitarity_defect(u: &Array2<C64>) -> f64 {
    let n = u.nrows();
    let mut g = dagger(u).dot(u);
    for i in 0..n {
        g[[i, i]] -= C64::new(1.0, 0.0);
    }
    max_abs(&g)
}

/// Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// columns of a unitary matrix. Only the Hermitian part of the input is
/// seen; the anti-Hermitian residual must be at rounding level.
pub fn eigh(a: &Array2<C64>) -> (Array1<f64>, Array2<C64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigh: matrix must be square");
    let mut m = a.clone();
    let mut v: Array2<C64> = Array2::eye(n);
    if n <= 1 {
        let w = Array1::from_iter(m.iter().map(|z| z.re));
        return (w, v);
    }
    let scale = max_abs(&m).max(1e-300);
    let tol = 1e-15 * scale;
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[[p, q]];
                let mag = apq.norm();
                off = off.max(mag);
                if mag <= tol {
                    continue;
                }
                let app = m[[p, p]].re;
                let aqq = m[[q, q]].re;
                let phase = apq / mag;
                // tan(2t) = 2|apq| / (app - aqq), stable small-root choice.
                let tau = (app - aqq) / (2.0 * mag);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Columns: col_p' = c col_p + conj(phase) s col_q,
                //          col_q' = -phase s col_p + c col_q.
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = mkp * c + mkq * phase.conj() * s;
                    m[[k, q]] = mkq * c - mkp * phase * s;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = mpk * c + mqk * phase * s;
                    m[[q, k]] = mqk * c - mpk * phase.conj() * s;
                }
                m[[p, q]] = C64::new(0.0, 0.0);
                m[[q, p]] = C64::new(0.0, 0.0);
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = vkp * c + vkq * phase.conj() * s;
                    v[[k, q]] = vkq * c - vkp * phase * s;
                }
            }
        }
        if off <= tol {
            break;
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| m[[i, i]].re.partial_cmp(&m[[j, j]].re).unwrap());
    let w = Array1::from_iter(idx.iter().map(|&i| m[[i, i]].re));
    let mut vs = Array2::zeros((n, n));
    for (new, &old) in idx.iter().enumerate() {
        for k in 0..n {
            vs[[k, new]] = v[[k, old]];
        }
    }
    (w, vs)
}

/// `exp(-i t H)` for Hermitian `h`, through its eigendecomposition.
pub fn exp_ih(h: &Array2<C64>, t: f64) -> Array2<C64> {
    let (w, v) = eigh(h);
    let n = h.nrows();
    let mut vp = v.clone();
    for j in 0..n {
        let ph = C64::from_polar(1.0, -t * w[j]);
        for i in 0..n {
            vp[[i, j]] *= ph;
        }
    }
    vp.dot(&dagger(&v))
}

/// Solves `A X = B` by partial-pivot Gaussian elimination.
pub fn solve(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "solve: A must be square");
    assert_eq!(n, b.nrows(), "solve: shape mismatch");
    let m = b.ncols();
    let mut lu = a.clone();
    let mut x = b.clone();
    for k in 0..n {
        let mut piv = k;
        let mut best = lu[[k, k]].norm();
        for i in k + 1..n {
            let cand = lu[[i, k]].norm();
            if cand > best {
                best = cand;
                piv = i;
            }
        }
        assert!(best > 0.0, "solve: singular matrix");
        if piv != k {
            for j in 0..n {
                let tmp = lu[[k, j]];
                lu[[k, j]] = lu[[piv, j]];
                lu[[piv, j]] = tmp;
            }
            for j in 0..m {
                let tmp = x[[k, j]];
                x[[k, j]] = x[[piv, j]];
                x[[piv, j]] = tmp;
            }
        }
        let pivot = lu[[k, k]];
        for i in k + 1..n {
            let f = lu[[i, k]] / pivot;
            if f == C64::new(0.0, 0.0) {
                continue;
            }
            for j in k + 1..n {
                let lkj = lu[[k, j]];
                lu[[i, j]] -= f * lkj;
            }
            for j in 0..m {
                let xkj = x[[k, j]];
                x[[i, j]] -= f * xkj;
            }
        }
    }
    for k in (0..n).rev() {
        let pivot = lu[[k, k]];
        for j in 0..m {
            let mut acc = x[[k, j]];
            for i in k + 1..n {
                acc -= lu[[k, i]] * x[[i, j]];
            }
            x[[k, j]] = acc / pivot;
        }
    }
    x
}

/// Matrix exponential by degree-13 Pade approximation with scaling and
/// squaring. Accurate to rounding for the well-scaled operators used here.
pub fn expm(a: &Array2<C64>) -> Array2<C64> {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA13: f64 = 5.371920351148152;
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm: matrix must be square");
    // 1-norm (max column sum).
    let norm1 = (0..n)
        .map(|j| (0..n).map(|i| a[[i, j]].norm()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let s = if norm1 > THETA13 {
        (norm1 / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a.mapv(|z| z / 2f64.powi(s));
    let eye: Array2<C64> = Array2::eye(n);
    let a2 = scaled.dot(&scaled);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);
    let c = |x: f64| C64::new(x, 0.0);
    let u_inner = &a6 * c(B[13]) + &a4 * c(B[11]) + &a2 * c(B[9]);
    let u = scaled.dot(
        &(a6.dot(&u_inner) + &a6 * c(B[7]) + &a4 * c(B[5]) + &a2 * c(B[3]) + &eye * c(B[1])),
    );
    let v_inner = &a6 * c(B[12]) + &a4 * c(B[10]) + &a2 * c(B[8]);
    let v = a6.dot(&v_inner) + &a6 * c(B[6]) + &a4 * c(B[4]) + &a2 * c(B[2]) + &eye * c(B[0]);
    let mut r = solve(&(&v - &u), &(&v + &u));
    for _ in 0..s {
        r = r.dot(&r);
    }
    r
}

/// `exp(-i (c0 I + cx sx + cy sy + cz sz))` on a two-level system, in closed
/// form. Basis order is (upper, lower).
pub fn su2_exp(c0: f64, cx: f64, cy: f64, cz: f64) -> [[C64; 2]; 2] {
    let r = (cx * cx + cy * cy + cz * cz).sqrt();
    let phase = C64::from_polar(1.0, -c0);
    let (cosr, sincr) = if r > 1e-300 {
        (r.cos(), r.sin() / r)
    } else {
        (1.0, 1.0)
    };
    let i = C64::new(0.0, 1.0);
    let m00 = phase * (C64::new(cosr, 0.0) - i * (cz * sincr));
    let m01 = phase * (-i * (C64::new(cx, 0.0) - i * cy) * sincr);
    let m10 = phase * (-i * (C64::new(cx, 0.0) + i * cy) * sincr);
    let m11 = phase * (C64::new(cosr, 0.0) + i * (cz * sincr));
    [[m00, m01], [m10, m11]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, rng: &mut ChaCha8Rng) -> Array2<C64> {
        Array2::from_shape_fn((n, n), |_| {
            C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
    }

    fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> Array2<C64> {
        let m = random_matrix(n, rng);
        (&m + &dagger(&m)).mapv(|z| z * 0.5)
    }

    #[test]
    fn eigh_reconstructs_hermitian_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [2, 5, 12, 33] {
            let h = random_hermitian(n, &mut rng);
            let (w, v) = eigh(&h);
            let mut lam = Array2::zeros((n, n));
            for i in 0..n {
                lam[[i, i]] = C64::new(w[i], 0.0);
            }
            let rebuilt = v.dot(&lam).dot(&dagger(&v));
            assert!(max_abs_diff(&rebuilt, &h) < 1e-11, "n={n}");
            assert!(unitarity_defect(&v) < 1e-12, "n={n}");
            for i in 1..n {
                assert!(w[i] >= w[i - 1]);
            }
        }
    }

    #[test]
    fn eigh_matches_two_level_closed_form() {
        let h = ndarray::array![
            [C64::new(0.7, 0.0), C64::new(0.2, -0.4)],
            [C64::new(0.2, 0.4), C64::new(-0.3, 0.0)]
        ];
        let (w, _) = eigh(&h);
        let mean = 0.2;
        let r = ((0.5f64).powi(2) + 0.2f64.powi(2) + 0.4f64.powi(2)).sqrt();
        assert!((w[0] - (mean - r)).abs() < 1e-14);
        assert!((w[1] - (mean + r)).abs() < 1e-14);
    }

    #[test]
    fn expm_matches_diagonal_and_nilpotent_cases() {
        let d = ndarray::array![
            [C64::new(0.3, 1.1), C64::new(0.0, 0.0)],
            [C64::new(0.0, 0.0), C64::new(-0.8, 0.2)]
        ];
        let e = expm(&d);
        assert!((e[[0, 0]] - d[[0, 0]].exp()).norm() < 1e-14);
        assert!((e[[1, 1]] - d[[1, 1]].exp()).norm() < 1e-14);
        assert!(e[[0, 1]].norm() < 1e-15);

        let nilp = ndarray::array![
            [C64::new(0.0, 0.0), C64::new(2.5, -1.0)],
            [C64::new(0.0, 0.0), C64::new(0.0, 0.0)]
        ];
        let e = expm(&nilp);
        assert!((e[[0, 1]] - nilp[[0, 1]]).norm() < 1e-15);
        assert!((e[[0, 0]] - C64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn expm_inverse_and_unitarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = random_hermitian(9, &mut rng).mapv(|z| z * 3.0);
        let anti = h.mapv(|z| z * C64::new(0.0, -1.0));
        let u = expm(&anti);
        assert!(unitarity_defect(&u) < 1e-12);
        let back = expm(&anti.mapv(|z| -z));
        let prod = u.dot(&back);
        let eye: Array2<C64> = Array2::eye(9);
        assert!(max_abs_diff(&prod, &eye) < 1e-12);
    }

    #[test]
    fn expm_agrees_with_eigendecomposition_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let h = random_hermitian(14, &mut rng).mapv(|z| z * 2.0);
        let via_eigh = exp_ih(&h, 1.3);
        let via_pade = expm(&h.mapv(|z| z * C64::new(0.0, -1.3)));
        assert!(max_abs_diff(&via_eigh, &via_pade) < 1e-11);
    }

    #[test]
    fn su2_exp_agrees_with_expm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let (c0, cx, cy, cz) = (
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            );
            let closed = su2_exp(c0, cx, cy, cz);
            let i = C64::new(0.0, 1.0);
            let h = ndarray::array![
                [C64::new(c0 + cz, 0.0), C64::new(cx, 0.0) - i * cy],
                [C64::new(cx, 0.0) + i * cy, C64::new(c0 - cz, 0.0)]
            ];
            let reference = expm(&h.mapv(|z| -i * z));
            for r in 0..2 {
                for c in 0..2 {
                    assert!((closed[r][c] - reference[[r, c]]).norm() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn kron_places_blocks_where_expected() {
        let a = ndarray::array![
            [C64::new(1.0, 0.0), C64::new(2.0, 0.0)],
            [C64::new(0.0, 0.0), C64::new(-1.0, 0.0)]
        ];
        let b = ndarray::array![
            [C64::new(0.0, 1.0), C64::new(3.0, 0.0)],
            [C64::new(1.0, 0.0), C64::new(0.0, 0.0)]
        ];
        let k = kron(&a, &b);
        assert_eq!(k.dim(), (4, 4));
        assert_eq!(k[[0, 1]], C64::new(3.0, 0.0));
        assert_eq!(k[[0, 2]], C64::new(0.0, 2.0));
        assert_eq!(k[[3, 2]], -b[[1, 0]]);
    }

    #[test]
    fn solve_recovers_known_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(10, &mut rng) + Array2::<C64>::eye(10).mapv(|z| z * 4.0);
        let x_true = random_matrix(10, &mut rng);
        let b = a.dot(&x_true);
        let x = solve(&a, &b);
        assert!(max_abs_diff(&x, &x_true) < 1e-11);
    }
}
