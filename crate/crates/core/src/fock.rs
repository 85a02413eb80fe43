//! Truncated Fock space, field states, and elementary field operators.
//!
//! States are `Array1<C64>` in the number basis `|0..dim-1>`; operators are
//! `Array2<C64>`. Joint atom-field objects order the atom first, excited
//! level before ground, so row `n` is `|e,n>` and row `dim + n` is `|g,n>`.

use ndarray::{Array1, Array2};

use crate::linalg::{self, C64};
use crate::{Error, Result};

/// Field state in the number basis.
pub type FieldVector = Array1<C64>;
/// Field or joint density operator.
pub type DensityOp = Array2<C64>;

/// Norm a truncated expansion may lose before it is rejected.
pub const TRUNCATION_BUDGET: f64 = 1e-6;

/// A field mode truncated to the first `dim` Fock states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FockSpace {
    pub dim: usize,
}

impl FockSpace {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::NonPositiveDim);
        }
        Ok(FockSpace { dim })
    }

    /// Annihilation operator: `a |n> = sqrt(n) |n-1>`.
    pub fn annihilation(&self) -> Array2<C64> {
        let mut a = Array2::zeros((self.dim, self.dim));
        for n in 1..self.dim {
            a[[n - 1, n]] = C64::new((n as f64).sqrt(), 0.0);
        }
        a
    }

    /// Creation operator, the adjoint of [`annihilation`](Self::annihilation).
    pub fn creation(&self) -> Array2<C64> {
        linalg::dagger(&self.annihilation())
    }

    /// Photon-number operator `diag(0, 1, ..., dim-1)`.
    pub fn number(&self) -> Array2<C64> {
        Array2::from_diag(&Array1::from_iter(
            (0..self.dim).map(|n| C64::new(n as f64, 0.0)),
        ))
    }

    pub fn identity(&self) -> Array2<C64> {
        Array2::eye(self.dim)
    }

    /// Diagonal unitary `exp(-i phases[n]) |n><n|`, one phase per number state.
    pub fn number_phase(&self, phases: &[f64]) -> Array2<C64> {
        assert_eq!(phases.len(), self.dim, "one phase per retained number state");
        Array2::from_diag(&Array1::from_iter(
            phases.iter().map(|&p| C64::from_polar(1.0, -p)),
        ))
    }

    pub fn vacuum(&self) -> FieldVector {
        self.fock(0)
    }

    /// The number state `|n>`.
    ///
    /// # Panics
    /// If `n` is outside the retained space.
    pub fn fock(&self, n: usize) -> FieldVector {
        assert!(n < self.dim, "Fock index {n} outside dim {}", self.dim);
        let mut v = Array1::zeros(self.dim);
        v[n] = C64::new(1.0, 0.0);
        v
    }
}

/// Amplitudes of the truncated coherent expansion before normalization,
/// together with the retained norm squared.
pub(crate) fn coherent_amplitudes(alpha: C64, dim: usize) -> (Vec<C64>, f64) {
    let mut c = Vec::with_capacity(dim);
    let mut cur = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    let mut norm2 = 0.0;
    for n in 0..dim {
        c.push(cur);
        norm2 += cur.norm_sqr();
        cur *= alpha / C64::new(((n + 1) as f64).sqrt(), 0.0);
    }
    (c, norm2)
}

/// Normalized coherent state `|alpha>`.
///
/// Fails with [`Error::TruncationLoss`] when the retained expansion holds
/// less than `1 - 1e-6` of the norm.
pub fn coherent(alpha: C64, space: FockSpace) -> Result<FieldVector> {
    let (c, norm2) = coherent_amplitudes(alpha, space.dim);
    let lost = 1.0 - norm2;
    if lost > TRUNCATION_BUDGET {
        return Err(Error::TruncationLoss {
            lost,
            budget: TRUNCATION_BUDGET,
        });
    }
    let inv = 1.0 / norm2.sqrt();
    Ok(Array1::from_iter(c.into_iter().map(|z| z * inv)))
}

/// Displacement operator `D(alpha) = exp(alpha a^dag - conj(alpha) a)`,
/// built by exponentiating the Hermitian generator `i(alpha a^dag - ...)`
/// through its eigendecomposition, so the result is unitary to rounding on
/// the retained space.
pub fn displacement(alpha: C64, space: FockSpace) -> Result<Array2<C64>> {
    let (_, norm2) = coherent_amplitudes(alpha, space.dim);
    let lost = 1.0 - norm2;
    if lost > TRUNCATION_BUDGET {
        return Err(Error::TruncationLoss {
            lost,
            budget: TRUNCATION_BUDGET,
        });
    }
    let adag = space.creation();
    let a = space.annihilation();
    let i = C64::new(0.0, 1.0);
    // H = i (alpha a^dag - conj(alpha) a) is Hermitian; D = exp(-i H).
    let h = adag.mapv(|z| i * alpha * z) - a.mapv(|z| i * alpha.conj() * z);
    Ok(linalg::exp_ih(&h, 1.0))
}

/// Kerr propagator `exp(-i t (zeta N + gamma N^2))`, diagonal in the number
/// basis.
pub fn kerr_propagator(zeta: f64, gamma: f64, t: f64, space: FockSpace) -> Array2<C64> {
    let mut u = Array2::zeros((space.dim, space.dim));
    for n in 0..space.dim {
        let nf = n as f64;
        u[[n, n]] = C64::from_polar(1.0, -t * (zeta * nf + gamma * nf * nf));
    }
    u
}

/// Two-component superposition of coherent states
/// `(|alpha> + i e^{i beta} |-alpha>) / norm`.
pub fn cat_state(alpha: C64, beta: f64, space: FockSpace) -> Result<FieldVector> {
    let plus = coherent(alpha, space)?;
    let minus = coherent(-alpha, space)?;
    let phase = C64::new(0.0, 1.0) * C64::from_polar(1.0, beta);
    let mut v = plus + minus.mapv(|z| phase * z);
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.mapv_inplace(|z| z / norm);
    Ok(v)
}

/// Which tensor factor an operation keeps or traces out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsystem {
    Left,
    Right,
}

/// Tensor product of two kets, left factor major.
pub fn tensor_state(a: &FieldVector, b: &FieldVector) -> FieldVector {
    let mut out = Array1::zeros(a.len() * b.len());
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i * b.len() + j] = ai * bj;
        }
    }
    out
}

/// Tensor product of two operators, left factor major.
pub fn tensor_op(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    linalg::kron(a, b)
}

/// Partial trace of a density operator on `left (x) right`, keeping the
/// chosen factor.
pub fn partial_trace(
    rho: &DensityOp,
    dim_left: usize,
    dim_right: usize,
    keep: Subsystem,
) -> Result<DensityOp> {
    let total = dim_left * dim_right;
    if rho.nrows() != total || rho.ncols() != total {
        return Err(Error::DimensionMismatch {
            expected: total,
            got: rho.nrows(),
        });
    }
    match keep {
        Subsystem::Left => {
            let mut out = Array2::zeros((dim_left, dim_left));
            for i in 0..dim_left {
                for j in 0..dim_left {
                    let mut acc = C64::new(0.0, 0.0);
                    for k in 0..dim_right {
                        acc += rho[[i * dim_right + k, j * dim_right + k]];
                    }
                    out[[i, j]] = acc;
                }
            }
            Ok(out)
        }
        Subsystem::Right => {
            let mut out = Array2::zeros((dim_right, dim_right));
            for i in 0..dim_right {
                for j in 0..dim_right {
                    let mut acc = C64::new(0.0, 0.0);
                    for k in 0..dim_left {
                        acc += rho[[k * dim_right + i, k * dim_right + j]];
                    }
                    out[[i, j]] = acc;
                }
            }
            Ok(out)
        }
    }
}

/// Projector `|psi><psi|`.
pub fn projector(psi: &FieldVector) -> DensityOp {
    let n = psi.len();
    Array2::from_shape_fn((n, n), |(i, j)| psi[i] * psi[j].conj())
}

pub fn trace(rho: &DensityOp) -> C64 {
    (0..rho.nrows()).map(|i| rho[[i, i]]).sum()
}

pub fn purity(rho: &DensityOp) -> f64 {
    trace(&rho.dot(rho)).re
}

/// Mean photon number of a density operator in the number basis.
pub fn mean_photon(rho: &DensityOp) -> f64 {
    (0..rho.nrows()).map(|n| n as f64 * rho[[n, n]].re).sum()
}

/// Mean photon number of a pure state.
pub fn mean_photon_pure(psi: &FieldVector) -> f64 {
    psi.iter()
        .enumerate()
        .map(|(n, z)| n as f64 * z.norm_sqr())
        .sum()
}

/// A two-level atom state `cg |g> + ce |e>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomState {
    pub cg: C64,
    pub ce: C64,
}

impl AtomState {
    pub fn ground() -> Self {
        AtomState {
            cg: C64::new(1.0, 0.0),
            ce: C64::new(0.0, 0.0),
        }
    }

    pub fn excited() -> Self {
        AtomState {
            cg: C64::new(0.0, 0.0),
            ce: C64::new(1.0, 0.0),
        }
    }

    /// The reservoir preparation `cos(u/2)|g> + sin(u/2)|e>`.
    pub fn superposition(u: f64) -> Self {
        AtomState {
            cg: C64::new((0.5 * u).cos(), 0.0),
            ce: C64::new((0.5 * u).sin(), 0.0),
        }
    }

    /// Ket in the joint (e, g) basis order used by the propagators.
    pub fn ket(&self) -> Array1<C64> {
        ndarray::array![self.ce, self.cg]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dagger, max_abs_diff, unitarity_defect};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn zero_dim_is_rejected() {
        assert_eq!(FockSpace::new(0).unwrap_err(), Error::NonPositiveDim);
    }

    #[test]
    fn ladder_operators_act_on_number_states() {
        let sp = FockSpace::new(8).unwrap();
        let a = sp.annihilation();
        let n3 = sp.fock(3);
        let lowered = a.dot(&n3);
        let expected = sp.fock(2).mapv(|z| z * 3.0f64.sqrt());
        assert!(lowered
            .iter()
            .zip(expected.iter())
            .all(|(x, y)| (x - y).norm() < 1e-15));

        // [a, a^dag] = 1 everywhere except the truncation edge, where the
        // missing |dim> state shows up as -(dim-1) ... -dim pattern.
        let comm = a.dot(&sp.creation()) - sp.creation().dot(&a);
        for n in 0..sp.dim - 1 {
            assert!((comm[[n, n]] - c(1.0, 0.0)).norm() < 1e-14);
        }
        assert!((comm[[7, 7]] - c(1.0 - 8.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn coherent_state_statistics() {
        let sp = FockSpace::new(40).unwrap();
        let alpha = c(1.3, -0.6);
        let st = coherent(alpha, sp).unwrap();
        let n_mean = mean_photon_pure(&st);
        assert!((n_mean - alpha.norm_sqr()).abs() < 1e-9);

        // |<alpha|beta>|^2 = exp(-|alpha-beta|^2); for 1 and -1 this is
        // exp(-4) = 0.018315639...
        let p = coherent(c(1.0, 0.0), sp).unwrap();
        let m = coherent(c(-1.0, 0.0), sp).unwrap();
        let ov: C64 = p.iter().zip(m.iter()).map(|(x, y)| x.conj() * y).sum();
        assert!((ov.norm_sqr() - (-4.0f64).exp()).abs() < 1e-10);
        assert!((ov.norm_sqr() - 0.0183156).abs() < 1e-7);
    }

    #[test]
    fn coherent_truncation_is_policed() {
        let sp = FockSpace::new(6).unwrap();
        match coherent(c(3.0, 0.0), sp) {
            Err(Error::TruncationLoss { lost, .. }) => assert!(lost > 1e-6),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn displacement_generates_coherent_states() {
        let sp = FockSpace::new(45).unwrap();
        let alpha = c(0.9, 1.4);
        let d = displacement(alpha, sp).unwrap();
        assert!(unitarity_defect(&d) < 1e-12);
        let from_d = d.dot(&sp.vacuum());
        let direct = coherent(alpha, sp).unwrap();
        let diff: f64 = from_d
            .iter()
            .zip(direct.iter())
            .map(|(x, y)| (x - y).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(diff < 1e-7, "|D|0> - |alpha>| = {diff:.2e}");

        // D(alpha) D(-alpha) = 1.
        let dinv = displacement(-alpha, sp).unwrap();
        let eye = sp.identity();
        assert!(max_abs_diff(&d.dot(&dinv), &eye) < 1e-10);
    }

    #[test]
    fn kerr_propagator_turns_coherent_into_cat() {
        let sp = FockSpace::new(40).unwrap();
        let alpha = c(1.8, 0.0);
        let st = coherent(alpha, sp).unwrap();
        // gamma t = pi/2 with zeta = 0 gives the balanced two-component
        // superposition (e^{-i pi/4}|alpha> + e^{+i pi/4}|-alpha>)/sqrt(2),
        // which matches cat_state(alpha, 0) up to a global phase.
        let u = kerr_propagator(0.0, 1.0, std::f64::consts::FRAC_PI_2, sp);
        let evolved = u.dot(&st);
        let target = cat_state(alpha, 0.0, sp).unwrap();
        let ov: C64 = target
            .iter()
            .zip(evolved.iter())
            .map(|(x, y)| x.conj() * y)
            .sum();
        assert!((ov.norm_sqr() - 1.0).abs() < 1e-10);

        // Diagonal construction commutes with N exactly.
        let n_op = sp.number();
        assert!(max_abs_diff(&u.dot(&n_op), &n_op.dot(&u)) < 1e-14);
    }

    #[test]
    fn cat_norm_and_photon_number_match_closed_forms() {
        let sp = FockSpace::new(45).unwrap();
        let alpha = c(1.2, 0.0);
        for beta in [0.0, 0.7, 2.2] {
            let plus = coherent(alpha, sp).unwrap();
            let minus = coherent(-alpha, sp).unwrap();
            let phase = c(0.0, 1.0) * C64::from_polar(1.0, beta);
            let raw = &plus + &minus.mapv(|z| phase * z);
            let norm2: f64 = raw.iter().map(|z| z.norm_sqr()).sum();
            let s = beta.sin() * (-2.0 * alpha.norm_sqr()).exp();
            assert!((norm2 - (2.0 - 2.0 * s)).abs() < 1e-10);

            let cat = cat_state(alpha, beta, sp).unwrap();
            let expect_n = alpha.norm_sqr() * (1.0 + s) / (1.0 - s);
            assert!((mean_photon_pure(&cat) - expect_n).abs() < 1e-9);
        }
    }

    #[test]
    fn partial_trace_recovers_factors() {
        let sp = FockSpace::new(16).unwrap();
        let field = coherent(c(0.8, 0.3), sp).unwrap();
        let rho_f = projector(&field);
        let atom_g = ndarray::array![
            [c(0.0, 0.0), c(0.0, 0.0)],
            [c(0.0, 0.0), c(1.0, 0.0)]
        ];
        let joint = tensor_op(&atom_g, &rho_f);
        let back = partial_trace(&joint, 2, sp.dim, Subsystem::Right).unwrap();
        assert!(max_abs_diff(&back, &rho_f) < 1e-13);
        let atom_back = partial_trace(&joint, 2, sp.dim, Subsystem::Left).unwrap();
        assert!(max_abs_diff(&atom_back, &atom_g) < 1e-13);

        // Bell-like atom-field state: (|e,0> + |g,1>)/sqrt(2) reduces to a
        // maximally mixed qubit-like field block with purity 1/2.
        let mut bell: Array1<C64> = Array1::zeros(2 * sp.dim);
        bell[0] = c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        bell[sp.dim + 1] = c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let rho = projector(&bell);
        let field_red = partial_trace(&rho, 2, sp.dim, Subsystem::Right).unwrap();
        assert!((purity(&field_red) - 0.5).abs() < 1e-12);
        assert!((trace(&field_red).re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tensor_and_dagger_are_consistent() {
        let sp = FockSpace::new(4).unwrap();
        let a = sp.annihilation();
        let eye2: Array2<C64> = Array2::eye(2);
        let joint = tensor_op(&eye2, &a);
        assert_eq!(joint.dim(), (8, 8));
        assert!(max_abs_diff(
            &dagger(&joint),
            &tensor_op(&eye2, &sp.creation())
        ) < 1e-15);
    }
}
