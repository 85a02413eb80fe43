//! Two field modes sharing one atomic beam.
//!
//! In the frame rotating at the mean mode frequency, mode `a` sits at
//! `-Delta`, mode `b` at `+Delta`, and both couple to the atom with the
//! same transit envelope. A Stark-programmed atomic detuning walks each
//! sample through a dispersive approach, a window resonant with `b`, a
//! window resonant with `a`, a classical pulse swapping the atomic levels,
//! and a dispersive retreat. This module builds the joint Hamiltonian,
//! integrates transit propagators block by block over the conserved total
//! excitation number, assembles the analytic window sequence, runs the
//! damped reservoir, and evaluates displaced-parity correlations and the
//! Bell signal they form on the resulting two-mode states.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use ndarray::{Array1, Array2};

use crate::fock::{coherent, coherent_amplitudes, projector, AtomState, DensityOp, FieldVector};
use crate::linalg::{max_abs_diff, C64};
use crate::open_systems::{ThermalBath, ThermalMap};
use crate::phase_space::fidelity_mixed;
use crate::propagators::{resonant_window, CouplingProfile};
use crate::quad::{adaptive_simpson, nelder_mead};
use crate::reservoir::{apply_kraus, kraus_from_propagator, KrausPair};
use crate::{Error, Result};

/// Population a state may park in the top two levels of either mode before
/// parity-based functions reject it. Displaced-parity values are first
/// order in the missing amplitude, so this keeps them good to about 1e-2.
const EDGE_BUDGET: f64 = 1e-4;

/// Successive step-doubled window propagators must agree to this before a
/// sweep is accepted; the returned finer sweep is better still.
const WINDOW_TOL: f64 = 1e-6;

/// Truncated joint space of two field modes and the atom.
///
/// Field indices flatten as `n_a * dim_b + n_b`. Joint vectors stack the
/// atomic levels in (e, g) order: row `k` is `|e, k>` and row
/// `field_dim + k` is `|g, k>`, matching the single-mode layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TwoModeSpace {
    pub dim_a: usize,
    pub dim_b: usize,
}

impl TwoModeSpace {
    pub fn new(dim_a: usize, dim_b: usize) -> Result<Self> {
        if dim_a == 0 || dim_b == 0 {
            return Err(Error::NonPositiveDim);
        }
        Ok(TwoModeSpace { dim_a, dim_b })
    }

    /// Dimension of the flattened two-mode field space.
    pub fn field_dim(&self) -> usize {
        self.dim_a * self.dim_b
    }

    /// Dimension of the joint atom-field space, `2 * field_dim`.
    pub fn joint_dim(&self) -> usize {
        2 * self.field_dim()
    }

    /// Flattened index of the Fock pair `|n_a, n_b>`.
    pub fn index(&self, n_a: usize, n_b: usize) -> usize {
        debug_assert!(n_a < self.dim_a && n_b < self.dim_b);
        n_a * self.dim_b + n_b
    }

    /// The two-mode vacuum.
    pub fn vacuum(&self) -> FieldVector {
        let mut psi = Array1::zeros(self.field_dim());
        psi[0] = C64::new(1.0, 0.0);
        psi
    }

    /// Tensor product of two single-mode states.
    pub fn product_state(&self, psi_a: &FieldVector, psi_b: &FieldVector) -> Result<FieldVector> {
        if psi_a.len() != self.dim_a || psi_b.len() != self.dim_b {
            return Err(Error::DimensionMismatch {
                expected: self.dim_a,
                got: psi_a.len(),
            });
        }
        let mut psi = Array1::zeros(self.field_dim());
        for na in 0..self.dim_a {
            for nb in 0..self.dim_b {
                psi[self.index(na, nb)] = psi_a[na] * psi_b[nb];
            }
        }
        Ok(psi)
    }

    /// Product of coherent states `|alpha_a, alpha_b>`.
    pub fn product_coherent(&self, alpha_a: C64, alpha_b: C64) -> Result<FieldVector> {
        let a = coherent(alpha_a, crate::fock::FockSpace::new(self.dim_a)?)?;
        let b = coherent(alpha_b, crate::fock::FockSpace::new(self.dim_b)?)?;
        self.product_state(&a, &b)
    }

    /// The entangled two-component superposition
    /// `(|alpha, alpha> - i |-alpha, -alpha>) / sqrt(2)`, renormalized in
    /// the truncated space.
    pub fn entangled_cat(&self, alpha: C64) -> Result<FieldVector> {
        let plus = self.product_coherent(alpha, alpha)?;
        let minus = self.product_coherent(-alpha, -alpha)?;
        let mut psi = &plus - &minus.mapv(|z| z * C64::new(0.0, 1.0));
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::DivergentNormalization(
                "entangled superposition has vanishing norm".into(),
            ));
        }
        psi.mapv_inplace(|z| z / norm);
        Ok(psi)
    }

    /// Mean photon number of each mode.
    pub fn mode_means(&self, rho: &DensityOp) -> (f64, f64) {
        let mut a = 0.0;
        let mut b = 0.0;
        for na in 0..self.dim_a {
            for nb in 0..self.dim_b {
                let p = rho[[self.index(na, nb), self.index(na, nb)]].re;
                a += na as f64 * p;
                b += nb as f64 * p;
            }
        }
        (a, b)
    }

    /// Annihilation operator of mode `a` on the flattened field space.
    pub fn annihilation_a(&self) -> Array2<C64> {
        let fd = self.field_dim();
        let mut op = Array2::zeros((fd, fd));
        for na in 1..self.dim_a {
            for nb in 0..self.dim_b {
                op[[self.index(na - 1, nb), self.index(na, nb)]] =
                    C64::from((na as f64).sqrt());
            }
        }
        op
    }

    /// Annihilation operator of mode `b` on the flattened field space.
    pub fn annihilation_b(&self) -> Array2<C64> {
        let fd = self.field_dim();
        let mut op = Array2::zeros((fd, fd));
        for na in 0..self.dim_a {
            for nb in 1..self.dim_b {
                op[[self.index(na, nb - 1), self.index(na, nb)]] =
                    C64::from((nb as f64).sqrt());
            }
        }
        op
    }

    /// Population in the top two levels of each mode's reduced diagonal.
    fn edge_mass(&self, rho: &DensityOp) -> (f64, f64) {
        let mut a = 0.0;
        let mut b = 0.0;
        for na in 0..self.dim_a {
            for nb in 0..self.dim_b {
                let p = rho[[self.index(na, nb), self.index(na, nb)]].re;
                if na + 2 >= self.dim_a {
                    a += p;
                }
                if nb + 2 >= self.dim_b {
                    b += p;
                }
            }
        }
        (a, b)
    }
}

/// Operating point of the two-mode reservoir.
#[derive(Debug, Clone, Copy)]
pub struct TwoModeConfig {
    /// Half the mode splitting, in rad/s; mode `a` sits at `-delta` and
    /// mode `b` at `+delta` from the frame frequency.
    pub delta: f64,
    /// Atomic preparation angle.
    pub u: f64,
    /// Rabi pulse area of each resonant window.
    pub theta_r: f64,
    /// Atom velocity, m/s.
    pub v: f64,
    pub profile: CouplingProfile,
    /// Sample period, a multiple of `2 pi / delta` covering the transit.
    pub t_total: f64,
}

impl TwoModeConfig {
    /// Builds an operating point, choosing the shortest sample period that
    /// covers the transit while keeping `t_total * delta` a whole number of
    /// turns, so the free mode precession closes over each sample.
    pub fn new(
        delta: f64,
        u: f64,
        theta_r: f64,
        v: f64,
        profile: CouplingProfile,
    ) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::ConfigError(format!(
                "mode half-splitting delta = {delta} must be positive"
            )));
        }
        if !(0.0..FRAC_PI_2).contains(&u) {
            return Err(Error::ConfigError(format!(
                "preparation angle u = {u} outside [0, pi/2)"
            )));
        }
        if !(theta_r > 0.0) {
            return Err(Error::ConfigError(format!(
                "resonant pulse area theta_r = {theta_r} must be positive"
            )));
        }
        if !(v > 0.0) {
            return Err(Error::ConfigError(format!(
                "atom velocity v = {v} must be positive"
            )));
        }
        let period = TAU / delta;
        let t_total = (profile.transit_time(v) / period).ceil() * period;
        Ok(TwoModeConfig {
            delta,
            u,
            theta_r,
            v,
            profile,
            t_total,
        })
    }

    /// Same operating point with an explicit sample period, which must
    /// cover the transit and close the precession to within `1e-6` turns.
    pub fn with_period(
        delta: f64,
        u: f64,
        theta_r: f64,
        v: f64,
        profile: CouplingProfile,
        t_total: f64,
    ) -> Result<Self> {
        let mut config = Self::new(delta, u, theta_r, v, profile)?;
        let turns = t_total * delta / TAU;
        if (turns - turns.round()).abs() > 1e-6 {
            return Err(Error::TimingConstraintViolated(format!(
                "sample period spans {turns:.6} precession turns; it must be whole"
            )));
        }
        if t_total < profile.transit_time(v) * (1.0 - 1e-9) {
            return Err(Error::TimingConstraintViolated(format!(
                "sample period {t_total:.3e} s does not cover the transit ({:.3e} s)",
                profile.transit_time(v)
            )));
        }
        config.t_total = t_total;
        Ok(config)
    }

    /// Half-length of the resonant stage. The atom spends `t_r` resonant
    /// with mode `b` and then `t_r` resonant with mode `a`, each window
    /// carrying pulse area `theta_r`.
    pub fn resonant_half_window(&self) -> Result<f64> {
        Ok(0.5 * resonant_window(&self.profile, self.v, 2.0 * self.theta_r)?)
    }

    /// Phase per photon-number difference accumulated over one dispersive
    /// stage, `1/(2 delta)` times the integral of `omega(v t)^2` over the
    /// approach `[-t_total/2, -t_r]`.
    pub fn dispersive_phase(&self) -> Result<f64> {
        let t_r = self.resonant_half_window()?;
        let cut = self.profile.cutoff_factor * self.profile.w / self.v;
        let a = (-0.5 * self.t_total).max(-cut);
        let b = -t_r;
        if b <= a {
            return Ok(0.0);
        }
        let f = |t: f64| {
            let om = self.profile.omega(self.v * t);
            om * om
        };
        let tol = 1e-12 * self.profile.omega0.powi(2) * (b - a);
        Ok(adaptive_simpson(&f, a, b, tol) / (2.0 * self.delta))
    }

    fn check_alignment(&self) -> Result<()> {
        let turns = self.t_total * self.delta / TAU;
        if (turns - turns.round()).abs() > 1e-6 {
            return Err(Error::TimingConstraintViolated(format!(
                "sample period spans {turns:.6} precession turns; it must be whole"
            )));
        }
        Ok(())
    }
}

/// Joint Hamiltonian at path position `s` with atomic detuning `delta_at`:
/// mode drift `delta (N_b - N_a)`, atomic energy `delta_at / 2` split
/// between the levels, and the exchange coupling
/// `i omega(s)/2 (|g><e| (a^dag + b^dag) - h.c.)`.
pub fn two_mode_hamiltonian(
    delta_at: f64,
    s: f64,
    config: &TwoModeConfig,
    space: TwoModeSpace,
) -> Array2<C64> {
    let fd = space.field_dim();
    let om = 0.5 * config.profile.omega(s);
    let mut h = Array2::zeros((2 * fd, 2 * fd));
    for na in 0..space.dim_a {
        for nb in 0..space.dim_b {
            let k = space.index(na, nb);
            let drift = config.delta * (nb as f64 - na as f64);
            h[[k, k]] = C64::from(drift + 0.5 * delta_at);
            h[[fd + k, fd + k]] = C64::from(drift - 0.5 * delta_at);
            if na + 1 < space.dim_a {
                let g = fd + space.index(na + 1, nb);
                let z = C64::new(0.0, om * ((na + 1) as f64).sqrt());
                h[[g, k]] = z;
                h[[k, g]] = z.conj();
            }
            if nb + 1 < space.dim_b {
                let g = fd + space.index(na, nb + 1);
                let z = C64::new(0.0, om * ((nb + 1) as f64).sqrt());
                h[[g, k]] = z;
                h[[k, g]] = z.conj();
            }
        }
    }
    h
}

/// Generalized phase rotation: `|g, n_a, n_b>` acquires
/// `exp(+i f(n_a, n_b)/2)` and `|e, n_a, n_b>` acquires
/// `exp(-i f(n_a + 1, n_b + 1)/2)`, the two-mode analogue of
/// [`rot_z`](crate::propagators::rot_z).
pub fn joint_z<F: Fn(usize, usize) -> f64>(f: F, space: TwoModeSpace) -> Array2<C64> {
    let fd = space.field_dim();
    let mut u = Array2::zeros((2 * fd, 2 * fd));
    for na in 0..space.dim_a {
        for nb in 0..space.dim_b {
            let k = space.index(na, nb);
            u[[k, k]] = C64::from_polar(1.0, -0.5 * f(na + 1, nb + 1));
            u[[fd + k, fd + k]] = C64::from_polar(1.0, 0.5 * f(na, nb));
        }
    }
    u
}

/// Photon-number rotation on the (atom, mode a) spheres: couples
/// `|e, n_a, n_b>` to `|g, n_a + 1, n_b>` through the angle `f[n_a + 1]`,
/// leaving `|g, 0, n_b>` and the top `e` levels alone.
pub fn y_on_a(f: &[f64], space: TwoModeSpace) -> Array2<C64> {
    assert!(
        f.len() >= space.dim_a,
        "angle table must cover photon numbers 1..dim_a"
    );
    let fd = space.field_dim();
    let mut u = Array2::zeros((2 * fd, 2 * fd));
    for nb in 0..space.dim_b {
        let top = space.index(space.dim_a - 1, nb);
        u[[top, top]] = C64::from(1.0);
        let bottom = fd + space.index(0, nb);
        u[[bottom, bottom]] = C64::from(1.0);
    }
    for na in 0..space.dim_a.saturating_sub(1) {
        for nb in 0..space.dim_b {
            let e = space.index(na, nb);
            let g = fd + space.index(na + 1, nb);
            let (s, c) = (0.5 * f[na + 1]).sin_cos();
            u[[e, e]] = C64::from(c);
            u[[g, g]] = C64::from(c);
            u[[e, g]] = C64::from(-s);
            u[[g, e]] = C64::from(s);
        }
    }
    u
}

/// Photon-number rotation on the (atom, mode b) spheres, the mirror of
/// [`y_on_a`].
pub fn y_on_b(f: &[f64], space: TwoModeSpace) -> Array2<C64> {
    assert!(
        f.len() >= space.dim_b,
        "angle table must cover photon numbers 1..dim_b"
    );
    let fd = space.field_dim();
    let mut u = Array2::zeros((2 * fd, 2 * fd));
    for na in 0..space.dim_a {
        let top = space.index(na, space.dim_b - 1);
        u[[top, top]] = C64::from(1.0);
        let bottom = fd + space.index(na, 0);
        u[[bottom, bottom]] = C64::from(1.0);
    }
    for na in 0..space.dim_a {
        for nb in 0..space.dim_b.saturating_sub(1) {
            let e = space.index(na, nb);
            let g = fd + space.index(na, nb + 1);
            let (s, c) = (0.5 * f[nb + 1]).sin_cos();
            u[[e, e]] = C64::from(c);
            u[[g, g]] = C64::from(c);
            u[[e, g]] = C64::from(-s);
            u[[g, e]] = C64::from(s);
        }
    }
    u
}

/// Instantaneous classical pulse on the atomic transition: a rotation by
/// `pi + error` taking `|e>` to `|g>` when `error` is zero, acting as the
/// identity on both field modes.
pub fn pi_pulse(error: f64, space: TwoModeSpace) -> Array2<C64> {
    let fd = space.field_dim();
    let (s, c) = (0.5 * (PI + error)).sin_cos();
    let mut u = Array2::zeros((2 * fd, 2 * fd));
    for k in 0..fd {
        u[[k, k]] = C64::from(c);
        u[[fd + k, fd + k]] = C64::from(c);
        u[[k, fd + k]] = C64::from(-s);
        u[[fd + k, k]] = C64::from(s);
    }
    u
}

/// Diagonal field propagator `exp(+i pi/2 ((N_a + N_b)^2 + 2 N_a))` on the
/// flattened field space, the Kerr-like frame that carries the product
/// pointer onto the entangled two-component superposition.
pub fn entangling_kerr(space: TwoModeSpace) -> Array2<C64> {
    let fd = space.field_dim();
    let mut u = Array2::zeros((fd, fd));
    for na in 0..space.dim_a {
        for nb in 0..space.dim_b {
            let tot = (na + nb) as f64;
            let k = space.index(na, nb);
            u[[k, k]] = C64::from_polar(1.0, FRAC_PI_2 * (tot * tot + 2.0 * na as f64));
        }
    }
    u
}

/// Lifts a field operator to the joint space, acting as the identity on
/// the atom.
pub fn joint_from_field(op: &Array2<C64>, space: TwoModeSpace) -> Array2<C64> {
    let fd = space.field_dim();
    assert_eq!(op.nrows(), fd, "field operator dimension");
    assert_eq!(op.ncols(), fd, "field operator dimension");
    let mut u = Array2::zeros((2 * fd, 2 * fd));
    for j in 0..fd {
        for k in 0..fd {
            u[[j, k]] = op[[j, k]];
            u[[fd + j, fd + k]] = op[[j, k]];
        }
    }
    u
}

/// Free joint propagator over `dt`: mode precession at `delta (N_b - N_a)`
/// plus the atomic phase at `delta_at / 2`.
pub fn free_drift(
    config: &TwoModeConfig,
    space: TwoModeSpace,
    delta_at: f64,
    dt: f64,
) -> Array2<C64> {
    let fd = space.field_dim();
    let mut u = Array2::zeros((2 * fd, 2 * fd));
    for na in 0..space.dim_a {
        for nb in 0..space.dim_b {
            let k = space.index(na, nb);
            let w = config.delta * (nb as f64 - na as f64);
            u[[k, k]] = C64::from_polar(1.0, -(w + 0.5 * delta_at) * dt);
            u[[fd + k, fd + k]] = C64::from_polar(1.0, -(w - 0.5 * delta_at) * dt);
        }
    }
    u
}

/// One conserved-excitation sector of the joint space: the coupling moves
/// quanta between the atom and the modes but never changes their total.
struct ExcitationBlock {
    /// Joint-space row of each member.
    rows: Vec<usize>,
    /// Photon-number difference `n_b - n_a` of each member.
    diff: Vec<f64>,
    /// Weight of `delta_at` on each member, `+1/2` on `|e>`, `-1/2` on `|g>`.
    atom_half: Vec<f64>,
    /// Coupling triples `(g_member, e_member, sqrt(n))` with unit Rabi rate.
    pairs: Vec<(usize, usize, f64)>,
}

fn excitation_blocks(space: TwoModeSpace) -> Vec<ExcitationBlock> {
    let fd = space.field_dim();
    let c_max = space.dim_a + space.dim_b - 1;
    let mut blocks = Vec::with_capacity(c_max + 1);
    for c in 0..=c_max {
        let mut rows = Vec::new();
        let mut diff = Vec::new();
        let mut atom_half = Vec::new();
        let mut e_local = vec![usize::MAX; fd];
        if c >= 1 {
            for na in 0..space.dim_a.min(c) {
                let nb = c - 1 - na;
                if nb >= space.dim_b {
                    continue;
                }
                e_local[space.index(na, nb)] = rows.len();
                rows.push(space.index(na, nb));
                diff.push(nb as f64 - na as f64);
                atom_half.push(0.5);
            }
        }
        let mut pairs = Vec::new();
        for na in 0..space.dim_a.min(c + 1) {
            let nb = c - na;
            if nb >= space.dim_b {
                continue;
            }
            let local = rows.len();
            rows.push(fd + space.index(na, nb));
            diff.push(nb as f64 - na as f64);
            atom_half.push(-0.5);
            if na >= 1 {
                let e = e_local[space.index(na - 1, nb)];
                if e != usize::MAX {
                    pairs.push((local, e, (na as f64).sqrt()));
                }
            }
            if nb >= 1 {
                let e = e_local[space.index(na, nb - 1)];
                if e != usize::MAX {
                    pairs.push((local, e, (nb as f64).sqrt()));
                }
            }
        }
        if !rows.is_empty() {
            blocks.push(ExcitationBlock {
                rows,
                diff,
                atom_half,
                pairs,
            });
        }
    }
    blocks
}

/// In-place `q <- I + (m q) / k`, the Horner step of the Taylor product.
fn horner_step(m: &Array2<C64>, q: Array2<C64>, k: f64) -> Array2<C64> {
    let mut next = m.dot(&q).mapv(|z| z * C64::from(1.0 / k));
    for j in 0..next.nrows() {
        next[[j, j]] += 1.0;
    }
    next
}

/// Applies `exp(-i h h_eff)` to `u` through a sixth-order Taylor product.
/// The step angles stay around 1e-2, so both the truncation and the
/// unitarity drift sit far below the window tolerance.
fn taylor_exp_apply(h_eff: &Array2<C64>, h: f64, u: &Array2<C64>) -> Array2<C64> {
    let m = h_eff.mapv(|z| z * C64::new(0.0, -h));
    let mut q = m.mapv(|z| z * C64::from(1.0 / 6.0));
    for j in 0..q.nrows() {
        q[[j, j]] += 1.0;
    }
    for k in [5.0, 4.0, 3.0, 2.0, 1.0] {
        q = horner_step(&m, q, k);
    }
    q.dot(u)
}

/// One fixed-step sweep of the fourth-order two-node integrator over the
/// interaction picture of the block, with the drift phases removed.
fn magnus_sweep(
    block: &ExcitationBlock,
    d: &[f64],
    profile: &CouplingProfile,
    v: f64,
    t1: f64,
    t2: f64,
    n_steps: usize,
) -> Array2<C64> {
    let size = block.rows.len();
    let h = (t2 - t1) / n_steps as f64;
    let node1 = 0.5 - 3f64.sqrt() / 6.0;
    let node2 = 0.5 + 3f64.sqrt() / 6.0;
    let build = |tau: f64| -> Option<Array2<C64>> {
        let om = 0.5 * profile.omega(v * (t1 + tau));
        if om == 0.0 {
            return None;
        }
        let mut a = Array2::zeros((size, size));
        for &(p, q, root) in &block.pairs {
            let z = C64::new(0.0, om * root) * C64::from_polar(1.0, (d[p] - d[q]) * tau);
            a[[p, q]] = z;
            a[[q, p]] = z.conj();
        }
        Some(a)
    };
    let mut u = Array2::eye(size);
    for k in 0..n_steps {
        let t0 = k as f64 * h;
        let (a1, a2) = (build(t0 + node1 * h), build(t0 + node2 * h));
        let (a1, a2) = match (a1, a2) {
            (None, None) => continue,
            (x, y) => (
                x.unwrap_or_else(|| Array2::zeros((size, size))),
                y.unwrap_or_else(|| Array2::zeros((size, size))),
            ),
        };
        let comm = a1.dot(&a2) - a2.dot(&a1);
        let scale = C64::new(0.0, 3f64.sqrt() * h / 12.0);
        let h_eff = (&a1 + &a2).mapv(|z| z * C64::from(0.5)) + comm.mapv(|z| z * scale);
        u = taylor_exp_apply(&h_eff, h, &u);
    }
    u
}

/// Block propagator over `[t1, t2]` at constant detunings, step-doubled
/// until two sweeps agree, then folded out of the interaction picture.
fn integrate_block(
    block: &ExcitationBlock,
    profile: &CouplingProfile,
    v: f64,
    delta: f64,
    delta_at: f64,
    t1: f64,
    t2: f64,
) -> Result<Array2<C64>> {
    let size = block.rows.len();
    let span = t2 - t1;
    let d: Vec<f64> = block
        .diff
        .iter()
        .zip(&block.atom_half)
        .map(|(&q, &a)| delta * q + delta_at * a)
        .collect();
    let fold = |u: Array2<C64>| -> Array2<C64> {
        let mut out = u;
        for (j, &dj) in d.iter().enumerate() {
            let phase = C64::from_polar(1.0, -dj * span);
            for k in 0..size {
                out[[j, k]] *= phase;
            }
        }
        out
    };
    if block.pairs.is_empty() {
        return Ok(fold(Array2::eye(size)));
    }
    // the fastest beat note between coupled levels sets the starting grid
    let osc = block
        .pairs
        .iter()
        .map(|&(p, q, _)| (d[p] - d[q]).abs())
        .fold(0.0, f64::max);
    let mut n_steps = ((span * (osc + profile.omega0) * 40.0 / TAU).ceil() as usize).max(8);
    let mut prev: Option<Array2<C64>> = None;
    for _ in 0..=8 {
        let u = magnus_sweep(block, &d, profile, v, t1, t2, n_steps);
        if let Some(p) = &prev {
            if max_abs_diff(&u, p) < WINDOW_TOL {
                return Ok(fold(u));
            }
        }
        prev = Some(u);
        n_steps *= 2;
    }
    Err(Error::IntegrationFailure(format!(
        "window propagator still moving at {n_steps} steps over [{t1:.3e}, {t2:.3e}] s"
    )))
}

/// Numerically integrated joint propagator over `[t1, t2]` at constant
/// atomic detuning `delta_at`, in the mean-frequency rotating frame.
pub fn window_propagator(
    config: &TwoModeConfig,
    space: TwoModeSpace,
    t1: f64,
    t2: f64,
    delta_at: f64,
) -> Result<Array2<C64>> {
    if !(t2 > t1) {
        return Err(Error::ConfigError(format!(
            "window [{t1:.3e}, {t2:.3e}] s has non-positive duration"
        )));
    }
    let cut = config.profile.cutoff_factor * config.profile.w / config.v;
    let a = t1.max(-cut);
    let b = t2.min(cut);
    if a >= b {
        return Ok(free_drift(config, space, delta_at, t2 - t1));
    }
    let n = space.joint_dim();
    let mut u = Array2::zeros((n, n));
    for block in &excitation_blocks(space) {
        let ub = integrate_block(
            block,
            &config.profile,
            config.v,
            config.delta,
            delta_at,
            a,
            b,
        )?;
        for (j, &rj) in block.rows.iter().enumerate() {
            for (k, &rk) in block.rows.iter().enumerate() {
                u[[rj, rk]] = ub[[j, k]];
            }
        }
    }
    if a > t1 {
        u = u.dot(&free_drift(config, space, delta_at, a - t1));
    }
    if t2 > b {
        u = free_drift(config, space, delta_at, t2 - b).dot(&u);
    }
    Ok(u)
}

/// Joint propagator of one full sample: dispersive approach, a window
/// resonant with `b`, a window resonant with `a`, the classical pulse
/// swapping the atomic levels, and the dispersive retreat.
pub fn exact_two_mode_propagator(
    config: &TwoModeConfig,
    space: TwoModeSpace,
    pulse_error: f64,
) -> Result<Array2<C64>> {
    config.check_alignment()?;
    let t_r = config.resonant_half_window()?;
    let half = 0.5 * config.t_total;
    if t_r >= half {
        return Err(Error::ConfigError(format!(
            "resonant stage half-length {t_r:.3e} s does not fit the sample period"
        )));
    }
    let approach = window_propagator(config, space, -half, -t_r, 0.0)?;
    let with_b = window_propagator(config, space, -t_r, 0.0, config.delta)?;
    let with_a = window_propagator(config, space, 0.0, t_r, -config.delta)?;
    let retreat = window_propagator(config, space, t_r, half, 0.0)?;
    Ok(retreat
        .dot(&pi_pulse(pulse_error, space))
        .dot(&with_a)
        .dot(&with_b)
        .dot(&approach))
}

/// The four analytic factors of one sample, outermost first: the
/// dispersive phase on `N_b - N_a`, the mode-a rotation, the mode-b
/// rotation, and the mirrored dispersive phase on `N_a - N_b`. Their
/// product is the effective sample propagator seen by an atom whose
/// preparation already compensates the free precession phases.
pub fn analytic_sequence(
    config: &TwoModeConfig,
    space: TwoModeSpace,
) -> Result<(Array2<C64>, Vec<Array2<C64>>)> {
    config.check_alignment()?;
    let phi = config.dispersive_phase()?;
    let table_a: Vec<f64> = (0..=space.dim_a)
        .map(|n| config.theta_r * (n as f64).sqrt())
        .collect();
    let table_b: Vec<f64> = (0..=space.dim_b)
        .map(|n| config.theta_r * (n as f64).sqrt())
        .collect();
    let factors = vec![
        joint_z(|na, nb| phi * (nb as f64 - na as f64), space),
        y_on_a(&table_a, space),
        y_on_b(&table_b, space),
        joint_z(|na, nb| phi * (na as f64 - nb as f64), space),
    ];
    let u_eff = factors[0]
        .dot(&factors[1])
        .dot(&factors[2])
        .dot(&factors[3]);
    Ok((u_eff, factors))
}

/// Kraus pair of the analytic sample map with the atom prepared at the
/// configured angle.
pub fn analytic_kraus(config: &TwoModeConfig, space: TwoModeSpace) -> Result<KrausPair> {
    let (u_eff, _) = analytic_sequence(config, space)?;
    kraus_from_propagator(&u_eff, &AtomState::superposition(config.u))
}

/// Kraus pair of the numerically integrated sample map. The atomic
/// preparation phase is advanced by `delta (t_total/2 - t_r)`, undoing the
/// free precession gathered before the resonant stage; this is the role of
/// the preparation pulse phase in the sequence.
pub fn exact_kraus(
    config: &TwoModeConfig,
    space: TwoModeSpace,
    pulse_error: f64,
) -> Result<KrausPair> {
    let u = exact_two_mode_propagator(config, space, pulse_error)?;
    let t_r = config.resonant_half_window()?;
    let ramsey = config.delta * (0.5 * config.t_total - t_r);
    let atom = AtomState {
        cg: C64::from_polar((0.5 * config.u).cos(), 0.5 * ramsey),
        ce: C64::from_polar((0.5 * config.u).sin(), -0.5 * ramsey),
    };
    kraus_from_propagator(&u, &atom)
}

/// Applies single-mode thermal relaxation to each mode of a joint density
/// operator. The two generators act on different factors and commute, so
/// applying them in sequence is exact.
pub fn apply_mode_damping(
    rho: &DensityOp,
    map_a: &ThermalMap,
    map_b: &ThermalMap,
    space: TwoModeSpace,
) -> DensityOp {
    let (da, db) = (space.dim_a, space.dim_b);
    let mut out = rho.clone();
    let mut sub_a = Array2::zeros((da, da));
    for nb in 0..db {
        for mb in 0..db {
            for na in 0..da {
                for ma in 0..da {
                    sub_a[[na, ma]] = out[[space.index(na, nb), space.index(ma, mb)]];
                }
            }
            let relaxed = map_a.apply(&sub_a);
            for na in 0..da {
                for ma in 0..da {
                    out[[space.index(na, nb), space.index(ma, mb)]] = relaxed[[na, ma]];
                }
            }
        }
    }
    let mut sub_b = Array2::zeros((db, db));
    for na in 0..da {
        for ma in 0..da {
            for nb in 0..db {
                for mb in 0..db {
                    sub_b[[nb, mb]] = out[[space.index(na, nb), space.index(ma, mb)]];
                }
            }
            let relaxed = map_b.apply(&sub_b);
            for nb in 0..db {
                for mb in 0..db {
                    out[[space.index(na, nb), space.index(ma, mb)]] = relaxed[[nb, mb]];
                }
            }
        }
    }
    out
}

/// Trajectory of a damped two-mode reservoir run.
#[derive(Debug, Clone)]
pub struct TwoModeRun {
    /// State after the last sample period.
    pub rho: DensityOp,
    /// Fidelity to the optimized reference after each sample.
    pub fidelity: Vec<f64>,
    /// `(sample, maximized Bell signal)` at every `bell_stride`-th sample.
    pub bell: Vec<(usize, f64)>,
    /// Amplitude of the optimized entangled reference.
    pub target_alpha: C64,
    /// The optimized reference state itself.
    pub target: FieldVector,
}

/// Evolves the vacuum through `num_samples` periods of the analytic sample
/// map, each sample applying the single-atom map with weight `p_at` and
/// then one period of thermal relaxation on both modes.
///
/// The reference state is the best entangled two-component fit to the
/// state reached when the atoms stop (`atoms_off_after`, defaulting to the
/// final sample); all reported fidelities grade against it. A positive
/// `bell_stride` also maximizes the Bell signal at every stride-th sample.
#[allow(clippy::too_many_arguments)]
pub fn two_mode_reservoir_run(
    config: &TwoModeConfig,
    space: TwoModeSpace,
    bath_a: &ThermalBath,
    bath_b: &ThermalBath,
    num_samples: usize,
    p_at: f64,
    atoms_off_after: Option<usize>,
    bell_stride: usize,
) -> Result<TwoModeRun> {
    if !(0.0..=1.0).contains(&p_at) {
        return Err(Error::ConfigError(format!(
            "sample occupation p_at = {p_at} outside [0, 1]"
        )));
    }
    if num_samples == 0 {
        return Err(Error::ConfigError("run needs at least one sample".into()));
    }
    let kraus = analytic_kraus(config, space)?;
    let map_a = ThermalMap::new(bath_a, config.t_total, space.dim_a);
    let map_b = ThermalMap::new(bath_b, config.t_total, space.dim_b);
    let off_at = atoms_off_after.unwrap_or(num_samples).clamp(1, num_samples);
    let mut rho = projector(&space.vacuum());
    let mut history = Vec::with_capacity(num_samples);
    for sample in 1..=num_samples {
        if sample <= off_at {
            let kicked = apply_kraus(&rho, &kraus);
            rho = rho.mapv(|z| z * C64::from(1.0 - p_at)) + kicked.mapv(|z| z * C64::from(p_at));
        }
        rho = apply_mode_damping(&rho, &map_a, &map_b, space);
        history.push(rho.clone());
    }
    let (_, target_alpha) = optimize_entangled_target(&history[off_at - 1], space)?;
    let target = space.entangled_cat(target_alpha)?;
    let fidelity = history
        .iter()
        .map(|state| fidelity_mixed(&target, state))
        .collect::<Result<Vec<f64>>>()?;
    let mut bell = Vec::new();
    if bell_stride > 0 {
        for (i, state) in history.iter().enumerate() {
            let sample = i + 1;
            if sample % bell_stride == 0 || sample == num_samples {
                let (b, _) = maximize_bell(state, space)?;
                bell.push((sample, b));
            }
        }
    }
    Ok(TwoModeRun {
        rho: history.pop().expect("at least one sample"),
        fidelity,
        bell,
        target_alpha,
        target,
    })
}

/// Best fidelity between `rho` and the entangled two-component family,
/// maximized over the complex amplitude. Returns `(fidelity, alpha)`.
pub fn optimize_entangled_target(
    rho: &DensityOp,
    space: TwoModeSpace,
) -> Result<(f64, C64)> {
    let fd = space.field_dim();
    if rho.nrows() != fd || rho.ncols() != fd {
        return Err(Error::DimensionMismatch {
            expected: fd,
            got: rho.nrows(),
        });
    }
    // both family components give <a b> = alpha^2, so the cross moment
    // seeds the amplitude directly
    let ab = space.annihilation_a().dot(&space.annihilation_b());
    let m2 = crate::fock::trace(&rho.dot(&ab));
    let alpha0 = m2.sqrt();
    let (na_mean, nb_mean) = space.mode_means(rho);
    let r0 = (0.5 * (na_mean + nb_mean)).sqrt().max(0.05);
    let score = |x: &[f64; 2]| -> f64 {
        match space.entangled_cat(C64::new(x[0], x[1])) {
            Ok(t) => -fidelity_mixed(&t, rho).unwrap_or(0.0),
            Err(_) => 0.0,
        }
    };
    let seeds = [
        [alpha0.re, alpha0.im],
        [-alpha0.re, -alpha0.im],
        [r0, 0.0],
        [0.0, r0],
    ];
    let mut best = ([0.0, 0.0], f64::INFINITY);
    for seed in seeds {
        let trial = nelder_mead(&score, seed, [0.15, 0.15]);
        if trial.1 < best.1 {
            best = trial;
        }
    }
    Ok((-best.1, C64::new(best.0[0], best.0[1])))
}

/// Columns of `D(2 gamma) P`, the displaced parity kernel, from the
/// coherent seed column and the exact ladder recurrence.
fn displaced_parity(gamma: C64, dim: usize) -> Array2<C64> {
    let beta = gamma * 2.0;
    let (seed, _) = coherent_amplitudes(beta, dim);
    let mut d = Array2::zeros((dim, dim));
    for m in 0..dim {
        d[[m, 0]] = seed[m];
    }
    for n in 0..dim - 1 {
        let inv = 1.0 / ((n + 1) as f64).sqrt();
        for m in 0..dim {
            let up = if m > 0 {
                d[[m - 1, n]] * C64::from((m as f64).sqrt())
            } else {
                C64::new(0.0, 0.0)
            };
            d[[m, n + 1]] = (up - d[[m, n]] * beta.conj()) * C64::from(inv);
        }
    }
    for n in (1..dim).step_by(2) {
        for m in 0..dim {
            d[[m, n]] = -d[[m, n]];
        }
    }
    d
}

fn check_two_mode_state(rho: &DensityOp, space: TwoModeSpace) -> Result<()> {
    let fd = space.field_dim();
    if rho.nrows() != fd || rho.ncols() != fd {
        return Err(Error::DimensionMismatch {
            expected: fd,
            got: rho.nrows(),
        });
    }
    let (edge_a, edge_b) = space.edge_mass(rho);
    let lost = edge_a.max(edge_b);
    if lost > EDGE_BUDGET {
        return Err(Error::TruncationLoss {
            lost,
            budget: EDGE_BUDGET,
        });
    }
    Ok(())
}

/// Displaced-parity expectation `Tr(rho (D_a(2 g_a) P_a (x) D_b(2 g_b) P_b))`
/// with no preconditions checked; real for Hermitian input.
fn parity_expectation(
    rho: &DensityOp,
    space: TwoModeSpace,
    gamma_a: C64,
    gamma_b: C64,
) -> f64 {
    let ka = displaced_parity(gamma_a, space.dim_a);
    let kb = displaced_parity(gamma_b, space.dim_b);
    let mut acc = C64::new(0.0, 0.0);
    for na in 0..space.dim_a {
        for ma in 0..space.dim_a {
            let mut inner = C64::new(0.0, 0.0);
            for nb in 0..space.dim_b {
                for mb in 0..space.dim_b {
                    inner += rho[[space.index(na, nb), space.index(ma, mb)]] * kb[[mb, nb]];
                }
            }
            acc += inner * ka[[ma, na]];
        }
    }
    debug_assert!(
        acc.im.abs() < 1e-9 * (1.0 + acc.re.abs()),
        "parity expectation should be real, got imaginary part {:.3e}",
        acc.im
    );
    acc.re
}

/// Joint Wigner function
/// `W(g_a, g_b) = (4/pi^2) Tr(rho D_a(2 g_a) P_a (x) D_b(2 g_b) P_b)`,
/// through one exact displaced-parity ladder per mode. Fails with
/// `TruncationLoss` when either mode's population crowds its upper edge.
pub fn two_mode_wigner(
    rho: &DensityOp,
    space: TwoModeSpace,
    gamma_a: C64,
    gamma_b: C64,
) -> Result<f64> {
    check_two_mode_state(rho, space)?;
    Ok(4.0 / (PI * PI) * parity_expectation(rho, space, gamma_a, gamma_b))
}

/// Joint Wigner function on the imaginary plane, `values[[i, j]]` holding
/// `W(i im_a[i], i im_b[j])`, the cut where the fringes of the entangled
/// superposition live.
pub fn two_mode_wigner_cut(
    rho: &DensityOp,
    space: TwoModeSpace,
    im_a: &[f64],
    im_b: &[f64],
) -> Result<Array2<f64>> {
    check_two_mode_state(rho, space)?;
    let mut values = Array2::zeros((im_a.len(), im_b.len()));
    for (i, &ya) in im_a.iter().enumerate() {
        for (j, &yb) in im_b.iter().enumerate() {
            values[[i, j]] = 4.0 / (PI * PI)
                * parity_expectation(rho, space, C64::new(0.0, ya), C64::new(0.0, yb));
        }
    }
    Ok(values)
}

/// Bell signal from four displaced-parity correlations,
/// `B = |E(g'_a, g'_b) + E(g_a, g'_b) + E(g'_a, g_b) - E(g_a, g_b)|` with
/// `E = (pi^2/4) W`. Local realism caps it at 2.
pub fn bell_signal(
    rho: &DensityOp,
    space: TwoModeSpace,
    gamma_a: C64,
    gamma_b: C64,
    gamma_a_alt: C64,
    gamma_b_alt: C64,
) -> Result<f64> {
    check_two_mode_state(rho, space)?;
    let e11 = parity_expectation(rho, space, gamma_a, gamma_b);
    let e12 = parity_expectation(rho, space, gamma_a, gamma_b_alt);
    let e21 = parity_expectation(rho, space, gamma_a_alt, gamma_b);
    let e22 = parity_expectation(rho, space, gamma_a_alt, gamma_b_alt);
    Ok((e22 + e12 + e21 - e11).abs())
}

/// Maximum of the Bell signal over its four displacement arguments,
/// restricted to the imaginary plane where the fringes live. A coarse
/// 17 x 17 parity table feeds an exhaustive scan over argument pairs, and
/// the eight best tuples are refined by coordinate descent.
pub fn maximize_bell(rho: &DensityOp, space: TwoModeSpace) -> Result<(f64, [C64; 4])> {
    check_two_mode_state(rho, space)?;
    const GRID: usize = 17;
    let (na_mean, nb_mean) = space.mode_means(rho);
    let y_max = 1.2 + na_mean.max(nb_mean).max(0.0).sqrt();
    let spacing = 2.0 * y_max / (GRID - 1) as f64;
    let axis: Vec<f64> = (0..GRID).map(|i| -y_max + spacing * i as f64).collect();
    let mut table = Array2::zeros((GRID, GRID));
    for (i, &ya) in axis.iter().enumerate() {
        for (j, &yb) in axis.iter().enumerate() {
            table[[i, j]] = parity_expectation(rho, space, C64::new(0.0, ya), C64::new(0.0, yb));
        }
    }
    // rank all coarse tuples (g_a, g_b) x (g'_a, g'_b)
    let mut ranked: Vec<(f64, [usize; 4])> = Vec::with_capacity(GRID * GRID * GRID * GRID);
    for i in 0..GRID {
        for j in 0..GRID {
            for i2 in 0..GRID {
                for j2 in 0..GRID {
                    let b = (table[[i2, j2]] + table[[i, j2]] + table[[i2, j]]
                        - table[[i, j]])
                        .abs();
                    ranked.push((b, [i, j, i2, j2]));
                }
            }
        }
    }
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let eval = |x: &[f64; 4]| -> f64 {
        let e11 = parity_expectation(rho, space, C64::new(0.0, x[0]), C64::new(0.0, x[1]));
        let e12 = parity_expectation(rho, space, C64::new(0.0, x[0]), C64::new(0.0, x[3]));
        let e21 = parity_expectation(rho, space, C64::new(0.0, x[2]), C64::new(0.0, x[1]));
        let e22 = parity_expectation(rho, space, C64::new(0.0, x[2]), C64::new(0.0, x[3]));
        (e22 + e12 + e21 - e11).abs()
    };
    let mut best_val = f64::NEG_INFINITY;
    let mut best_x = [0.0; 4];
    for &(_, idx) in ranked.iter().take(8) {
        let mut x = [axis[idx[0]], axis[idx[1]], axis[idx[2]], axis[idx[3]]];
        let mut fx = eval(&x);
        let mut step = spacing;
        while step > 1e-4 {
            let mut improved = false;
            for coord in 0..4 {
                loop {
                    let mut plus = x;
                    plus[coord] += step;
                    let mut minus = x;
                    minus[coord] -= step;
                    let (fp, fm) = (eval(&plus), eval(&minus));
                    if fp > fx && fp >= fm {
                        x = plus;
                        fx = fp;
                        improved = true;
                    } else if fm > fx {
                        x = minus;
                        fx = fm;
                        improved = true;
                    } else {
                        break;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        if fx > best_val {
            best_val = fx;
            best_x = x;
        }
    }
    Ok((
        best_val,
        [
            C64::new(0.0, best_x[0]),
            C64::new(0.0, best_x[1]),
            C64::new(0.0, best_x[2]),
            C64::new(0.0, best_x[3]),
        ],
    ))
}
