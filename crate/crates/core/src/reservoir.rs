//! The atomic beam as an engineered reservoir.
//!
//! Each atom is prepared in a superposition `cos(u/2)|g> + sin(u/2)|e>`,
//! crosses the cavity, and is discarded. Tracing the joint propagator over
//! the final atomic state turns one transit into a Kraus map on the field,
//! and the repeated map contracts the field toward a pointer state that both
//! Kraus operators share as an eigenstate. This module builds the Kraus
//! pairs, evaluates the pointer-state recurrence, detects the trapping
//! angles where the recurrence breaks, iterates the map to its steady state
//! while tracking convergence, and sweeps the pointer landscape over the
//! control parameters.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::fock::{self, coherent, AtomState, DensityOp, FieldVector, FockSpace};
use crate::linalg::{dagger, max_abs_diff, C64};
use crate::propagators::{
    composite_analytic, composite_windows, resonant_window, rot_y, CompositeAngles,
    CouplingProfile,
};
use crate::{Error, Result};

/// The pair of field operators obtained by reading the exiting atom in the
/// energy basis: `rho -> M_g rho M_g' + M_e rho M_e'`.
#[derive(Debug, Clone)]
pub struct KrausPair {
    pub m_g: Array2<C64>,
    pub m_e: Array2<C64>,
}

impl KrausPair {
    /// Deviation of `M_g'M_g + M_e'M_e` from the identity; zero for a
    /// trace-preserving pair.
    pub fn completeness_defect(&self) -> f64 {
        let sum = dagger(&self.m_g).dot(&self.m_g) + dagger(&self.m_e).dot(&self.m_e);
        max_abs_diff(&sum, &Array2::<C64>::eye(sum.nrows()))
    }
}

/// Control parameters of one reservoir realization: atom preparation angle,
/// resonant pulse area, dispersive detuning (zero for a purely resonant
/// reservoir), atomic velocity, mode geometry, and the mean number of atoms
/// per sample window.
#[derive(Debug, Clone, Copy)]
pub struct ReservoirConfig {
    pub u: f64,
    pub theta_r: f64,
    pub delta0: f64,
    pub v: f64,
    pub profile: CouplingProfile,
    pub p_at: f64,
}

impl ReservoirConfig {
    /// Checks the parameter domain: `0 <= u < pi/2` keeps the pointer state
    /// normalizable, and the atom rate cannot be negative.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.u) {
            return Err(Error::ConfigError(format!(
                "preparation angle u = {} outside [0, pi/2)",
                self.u
            )));
        }
        if self.p_at < 0.0 {
            return Err(Error::ConfigError(format!(
                "mean atom number p_at = {} is negative",
                self.p_at
            )));
        }
        Ok(())
    }
}

/// Extracts the Kraus pair of one atom transit from the joint propagator
/// and the incoming atom state: `U |at>|psi> = |g> M_g|psi> + |e> M_e|psi>`.
pub fn kraus_from_propagator(u: &Array2<C64>, atom: &AtomState) -> Result<KrausPair> {
    let rows = u.nrows();
    if u.ncols() != rows || rows % 2 != 0 || rows == 0 {
        return Err(Error::DimensionMismatch {
            expected: rows.max(2) / 2 * 2,
            got: u.ncols(),
        });
    }
    let dim = rows / 2;
    let mut m_g = Array2::<C64>::zeros((dim, dim));
    let mut m_e = Array2::<C64>::zeros((dim, dim));
    for n in 0..dim {
        for m in 0..dim {
            m_e[[m, n]] = atom.ce * u[[m, n]] + atom.cg * u[[m, dim + n]];
            m_g[[m, n]] = atom.ce * u[[dim + m, n]] + atom.cg * u[[dim + m, dim + n]];
        }
    }
    Ok(KrausPair { m_g, m_e })
}

/// Kraus pair of a purely resonant transit with pulse area `theta_r`,
/// built from the photon-number rotation directly.
pub fn resonant_kraus(u: f64, theta_r: f64, space: FockSpace) -> KrausPair {
    let f: Vec<f64> = (0..=space.dim)
        .map(|n| theta_r * (n as f64).sqrt())
        .collect();
    kraus_from_propagator(&rot_y(&f, &space), &AtomState::superposition(u))
        .expect("rotation operator has even dimension")
}

/// Kraus pair of the full composite sequence at the configured operating
/// point, together with its angle tables.
pub fn composite_kraus(
    config: &ReservoirConfig,
    space: FockSpace,
) -> Result<(KrausPair, CompositeAngles)> {
    config.validate()?;
    let t_r = resonant_window(&config.profile, config.v, config.theta_r)?;
    let t_total = config.profile.transit_time(config.v);
    let (d1, r, d2) = composite_windows(t_total, t_r, config.v, config.delta0);
    let (u_c, angles) = composite_analytic(&d1, &r, &d2, &config.profile, &space);
    let pair = kraus_from_propagator(&u_c, &AtomState::superposition(config.u))?;
    Ok((pair, angles))
}

/// One reservoir step on the field density operator.
pub fn apply_kraus(rho: &DensityOp, k: &KrausPair) -> DensityOp {
    k.m_g.dot(rho).dot(&dagger(&k.m_g)) + k.m_e.dot(rho).dot(&dagger(&k.m_e))
}

/// Smallest photon number `m <= n_max` at which a resonant reservoir with
/// pulse area `theta_r` decouples (`sin(theta_r sqrt(m)/2) = 0`), if any.
/// The level ladder cannot be crossed there and the reservoir splits.
pub fn trapping_check(theta_r: f64, n_max: usize) -> Option<usize> {
    (1..=n_max).find(|&m| (0.5 * theta_r * (m as f64).sqrt()).sin().abs() < 1e-12)
}

/// The pointer state shared by both Kraus operators of a rotation-type
/// reservoir with angle table `theta_n`, from the amplitude recurrence
/// `psi_{n+1} = tan(u/2) / tan(theta_{n+1}/4) * psi_n`.
///
/// Fails with `TrappingState` at the first level whose rotation angle is a
/// multiple of `2 pi`, where the recurrence disconnects.
pub fn pointer_state(theta_n: &[f64], u: f64, space: FockSpace) -> Result<FieldVector> {
    assert!(
        theta_n.len() >= space.dim,
        "angle table must cover photon numbers 1..dim"
    );
    assert!(
        (0.0..std::f64::consts::FRAC_PI_2).contains(&u),
        "preparation angle u = {u} outside [0, pi/2)"
    );
    for m in 1..space.dim {
        let s = (0.5 * theta_n[m]).sin().abs();
        if s < 1e-10 {
            return Err(Error::TrappingState { level: m });
        }
        if s < 1e-4 {
            eprintln!(
                "pointer_state: rotation angle at level {m} is within {s:.1e} of a trapping \
                 value; the recurrence is poorly conditioned"
            );
        }
    }
    let tan_u = (0.5 * u).tan();
    let mut psi = Array1::<C64>::zeros(space.dim);
    let mut amp = 1.0;
    psi[0] = C64::new(amp, 0.0);
    for n in 1..space.dim {
        amp *= tan_u / (0.25 * theta_n[n]).tan();
        psi[n] = C64::new(amp, 0.0);
    }
    let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    Ok(psi.mapv(|z| z / norm))
}

/// Result of iterating a Kraus map: the final density operator, the
/// per-step fidelities to the target state (empty without a target), and
/// the fitted exponential convergence rate per step.
#[derive(Debug, Clone)]
pub struct SteadyStateRun {
    pub rho: DensityOp,
    pub fidelities: Vec<f64>,
    pub lambda_conv: Option<f64>,
}

fn target_fidelity(target: &FieldVector, rho: &DensityOp) -> f64 {
    let mut f = C64::new(0.0, 0.0);
    for (i, ti) in target.iter().enumerate() {
        for (j, tj) in target.iter().enumerate() {
            f += ti.conj() * rho[[i, j]] * tj;
        }
    }
    f.re
}

/// Least-squares fit of `log|log F_k|` against the step index over the
/// linear region, returning the decay rate per step and the fit's R².
///
/// The first five points are discarded (the curve bends there at large
/// rotation angles) and the fit stops where F comes within 1e-9 of one,
/// beyond which the indicator is numerical noise.
pub fn convergence_rate(fidelities: &[f64]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = fidelities
        .iter()
        .enumerate()
        .skip(5)
        .take(495)
        .filter(|&(_, &f)| f > 0.0 && f < 1.0 - 1e-9)
        .map(|(k, &f)| (k as f64, f.ln().abs().ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &pts {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = sxy * sxy / (sxx * syy);
    Some((-slope, r2))
}

/// Iterates the Kraus map from `rho0`, recording the fidelity to `target`
/// at every step when one is given, until the fidelity saturates or
/// `max_iters` is reached.
///
/// Without a target the iteration stops when successive density operators
/// agree within 1e-12. `NotConverged` signals stagnation away from the
/// steady state.
pub fn iterate_to_steady(
    rho0: &DensityOp,
    k: &KrausPair,
    max_iters: usize,
    target: Option<&FieldVector>,
) -> Result<SteadyStateRun> {
    let mut rho = rho0.clone();
    match target {
        Some(t) => {
            let f0 = target_fidelity(t, &rho);
            if f0 > 1.0 - 1e-9 {
                return Ok(SteadyStateRun {
                    rho,
                    fidelities: vec![f0],
                    lambda_conv: None,
                });
            }
            let mut fidelities = Vec::with_capacity(max_iters);
            for _ in 0..max_iters {
                rho = apply_kraus(&rho, k);
                let f = target_fidelity(t, &rho);
                fidelities.push(f);
                if f > 1.0 - 1e-9 {
                    break;
                }
            }
            let last = *fidelities.last().unwrap();
            if last < 1.0 - 1e-3 {
                return Err(Error::NotConverged(format!(
                    "target fidelity stalled at {last:.6} after {max_iters} reservoir steps"
                )));
            }
            let lambda_conv = convergence_rate(&fidelities).map(|(l, _)| l);
            Ok(SteadyStateRun {
                rho,
                fidelities,
                lambda_conv,
            })
        }
        None => {
            for _ in 0..max_iters {
                let next = apply_kraus(&rho, k);
                let step = max_abs_diff(&next, &rho);
                rho = next;
                if step < 1e-12 {
                    return Ok(SteadyStateRun {
                        rho,
                        fidelities: Vec::new(),
                        lambda_conv: None,
                    });
                }
            }
            Err(Error::NotConverged(format!(
                "density operator still moving after {max_iters} reservoir steps"
            )))
        }
    }
}

/// One step of the small-angle coherent-amplitude model:
/// `alpha' = (1 - theta_r^2/8) alpha + u theta_r / 4`, whose fixed point is
/// `2u/theta_r`.
pub fn simplified_amplitude_step(alpha: f64, u: f64, theta_r: f64) -> f64 {
    (1.0 - theta_r * theta_r / 8.0) * alpha + 0.25 * u * theta_r
}

/// Which angle table a pointer-map sweep evaluates: the bare resonant
/// rotation, or the composite sequence at a fixed detuning ratio.
#[derive(Debug, Clone, Copy)]
pub enum SweepAngles {
    Resonant,
    Composite {
        profile: CouplingProfile,
        delta0_over_omega_r: f64,
        v: f64,
    },
}

/// One cell of a pointer-map sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepCell {
    pub u: f64,
    pub theta_r: f64,
    pub delta0_over_omega: Option<f64>,
    pub mean_n: f64,
    pub coherent_fidelity: f64,
    pub lambda_conv: Option<f64>,
    /// Whether the pointer state reaches 99% fidelity to the best coherent
    /// state of equal mean photon number.
    pub high_fidelity: bool,
}

/// Evaluates the pointer state over a `(u, theta_r)` grid, reporting the
/// mean photon number, the fidelity to the coherent state of equal energy,
/// and optionally the fitted convergence rate from vacuum. Cells whose
/// recurrence hits a trapping level carry NaN diagnostics.
pub fn sweep_pointer_map(
    us: &[f64],
    theta_rs: &[f64],
    angles: &SweepAngles,
    space: FockSpace,
    with_lambda: bool,
) -> Vec<SweepCell> {
    let mut cells = Vec::with_capacity(us.len() * theta_rs.len());
    for &u in us {
        for &theta_r in theta_rs {
            cells.push(sweep_cell(u, theta_r, angles, space, with_lambda));
        }
    }
    cells
}

fn sweep_cell(
    u: f64,
    theta_r: f64,
    angles: &SweepAngles,
    space: FockSpace,
    with_lambda: bool,
) -> SweepCell {
    let failed = |ratio: Option<f64>| SweepCell {
        u,
        theta_r,
        delta0_over_omega: ratio,
        mean_n: f64::NAN,
        coherent_fidelity: f64::NAN,
        lambda_conv: None,
        high_fidelity: false,
    };
    let (table, pair, ratio) = match *angles {
        SweepAngles::Resonant => {
            let table: Vec<f64> = (0..=space.dim)
                .map(|n| theta_r * (n as f64).sqrt())
                .collect();
            let pair = resonant_kraus(u, theta_r, space);
            (table, pair, None)
        }
        SweepAngles::Composite {
            profile,
            delta0_over_omega_r,
            v,
        } => {
            let t_r = match resonant_window(&profile, v, theta_r) {
                Ok(t) => t,
                Err(_) => return failed(Some(delta0_over_omega_r)),
            };
            let delta0 = delta0_over_omega_r * profile.omega(v * t_r * 0.5);
            let config = ReservoirConfig {
                u,
                theta_r,
                delta0,
                v,
                profile,
                p_at: 0.0,
            };
            match composite_kraus(&config, space) {
                Ok((pair, tables)) => (tables.theta_c_n, pair, Some(delta0_over_omega_r)),
                Err(_) => return failed(Some(delta0_over_omega_r)),
            }
        }
    };
    let psi = match pointer_state(&table, u, space) {
        Ok(psi) => psi,
        Err(_) => return failed(ratio),
    };
    let mean_n = fock::mean_photon_pure(&psi);
    let fidelity = match coherent(C64::new(mean_n.sqrt(), 0.0), space) {
        Ok(alpha) => {
            let overlap: C64 = alpha
                .iter()
                .zip(psi.iter())
                .map(|(a, p)| a.conj() * p)
                .sum();
            overlap.norm_sqr()
        }
        Err(_) => f64::NAN,
    };
    let lambda_conv = if with_lambda {
        let vac = fock::projector(&space.vacuum());
        iterate_to_steady(&vac, &pair, 500, Some(&psi))
            .ok()
            .and_then(|run| run.lambda_conv)
    } else {
        None
    };
    SweepCell {
        u,
        theta_r,
        delta0_over_omega: ratio,
        mean_n,
        coherent_fidelity: fidelity,
        lambda_conv,
        high_fidelity: fidelity >= 0.99,
    }
}

/// Number of atoms in one sample window: Poisson with mean `p_at`,
/// truncated and renormalized over {0, 1, 2}.
pub fn sample_atom_count<R: Rng>(p_at: f64, rng: &mut R) -> usize {
    assert!(p_at >= 0.0, "mean atom number must be non-negative");
    let w1 = p_at;
    let w2 = 0.5 * p_at * p_at;
    let total = 1.0 + w1 + w2;
    let x: f64 = rng.gen_range(0.0..1.0) * total;
    if x < 1.0 {
        0
    } else if x < 1.0 + w1 {
        1
    } else {
        2
    }
}

/// Kraus operators of a simultaneous two-atom transit, indexed by the final
/// atom pair readout: `[M_gg, M_ge, M_eg, M_ee]`, both atoms entering in
/// the same superposition state.
pub fn kraus_from_two_atom(u: &Array2<C64>, atom: &AtomState) -> Result<[Array2<C64>; 4]> {
    let rows = u.nrows();
    if u.ncols() != rows || rows % 4 != 0 || rows == 0 {
        return Err(Error::DimensionMismatch {
            expected: rows.max(4) / 4 * 4,
            got: u.ncols(),
        });
    }
    let dim = rows / 4;
    // joint layout: block (a1*2 + a2)*dim with atom order (e, g)
    let blocks = [3, 2, 1, 0]; // gg, ge, eg, ee
    let weights = [
        atom.cg * atom.cg,
        atom.cg * atom.ce,
        atom.ce * atom.cg,
        atom.ce * atom.ce,
    ];
    let mut ops = [(); 4].map(|_| Array2::<C64>::zeros((dim, dim)));
    for (op, &out) in ops.iter_mut().zip(blocks.iter()) {
        for m in 0..dim {
            for n in 0..dim {
                let mut v = C64::new(0.0, 0.0);
                for (w, &inb) in weights.iter().zip(blocks.iter()) {
                    v += *w * u[[out * dim + m, inb * dim + n]];
                }
                op[[m, n]] = v;
            }
        }
    }
    Ok(ops)
}
