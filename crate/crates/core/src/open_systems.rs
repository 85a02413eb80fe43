//! Decoherence competing with the engineered reservoir.
//!
//! The cavity field relaxes toward thermal equilibrium between atom
//! transits. This module models that relaxation as a thermal Lindblad
//! generator, evolves the field through interleaved transit/relaxation
//! samples (both as a stochastic trajectory of density operators and as the
//! deterministic sample-averaged map), unravels the bath into quantum-jump
//! Monte-Carlo trajectories, and evaluates the analytic damped steady state:
//! the coherent-amplitude distribution mu(z) and the density operator
//! reconstructed from it.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::fock::{self, coherent, AtomState, DensityOp, FieldVector, FockSpace};
use crate::linalg::{dagger, kron, C64};
use crate::propagators::{exact_propagator, resonant_window, two_atom_propagator, DetuningProfile};
use crate::quad::{adaptive_simpson, gauss_jacobi};
use crate::reservoir::{
    apply_kraus, kraus_from_propagator, kraus_from_two_atom, sample_atom_count, KrausPair,
    ReservoirConfig,
};
use crate::{Error, Result};

/// A thermal environment for the cavity mode: energy damping time `t_c`
/// (photon lifetime, in seconds) and mean thermal photon number `n_t`.
#[derive(Debug, Clone, Copy)]
pub struct ThermalBath {
    pub t_c: f64,
    pub n_t: f64,
}

impl ThermalBath {
    /// Checks `t_c > 0` and `n_t >= 0`. An infinite `t_c` switches the bath
    /// off entirely.
    pub fn new(t_c: f64, n_t: f64) -> Result<Self> {
        if !(t_c > 0.0) {
            return Err(Error::ConfigError(format!(
                "cavity damping time t_c = {t_c} must be positive"
            )));
        }
        if !(n_t >= 0.0) {
            return Err(Error::ConfigError(format!(
                "thermal photon number n_t = {n_t} must be non-negative"
            )));
        }
        Ok(Self { t_c, n_t })
    }

    /// Cavity energy decay rate, `1 / t_c`.
    pub fn kappa_c(&self) -> f64 {
        1.0 / self.t_c
    }

    fn rates(&self) -> (f64, f64) {
        let kc = self.kappa_c();
        (kc * (1.0 + self.n_t), kc * self.n_t)
    }
}

/// Weight of the truncated upward jump out of level `n`: the creation
/// operator drops its top transition, so the channel is inert at `dim - 1`.
fn upward_weight(n: usize, dim: usize) -> f64 {
    if n + 1 < dim {
        (n + 1) as f64
    } else {
        0.0
    }
}

fn dissipator_superop(l: &Array2<C64>) -> Array2<C64> {
    let d = l.nrows();
    let id = Array2::<C64>::eye(d);
    let ldl = dagger(l).dot(l);
    let half = C64::new(-0.5, 0.0);
    let mut s = kron(l, &l.mapv(|z| z.conj()));
    s = s + kron(&ldl, &id).mapv(|z| half * z);
    s + kron(&id, &ldl.t().to_owned()).mapv(|z| half * z)
}

/// Dense generator of the thermal master equation acting on row-stacked
/// density operators: downward jumps `a` at rate `kappa_c (1 + n_t)` and
/// truncated upward jumps `a'` at rate `kappa_c n_t`.
pub fn lindblad_generator(bath: &ThermalBath, space: FockSpace) -> Array2<C64> {
    let (kd, ku) = bath.rates();
    let down = space.annihilation().mapv(|z| z * kd.sqrt());
    let up = space.creation().mapv(|z| z * ku.sqrt());
    dissipator_superop(&down) + dissipator_superop(&up)
}

/// Cached action of `exp(t L)` for the thermal generator. The generator
/// never mixes different off-diagonals of the density operator, so the
/// exponential splits into one small real-coefficient block per diagonal.
#[derive(Debug, Clone)]
pub struct ThermalMap {
    blocks: Vec<Array2<C64>>,
    dim: usize,
}

impl ThermalMap {
    pub fn new(bath: &ThermalBath, t: f64, dim: usize) -> Self {
        let (kd, ku) = bath.rates();
        let mut blocks = Vec::with_capacity(dim);
        for d in 0..dim {
            let size = dim - d;
            let mut gen = Array2::<C64>::zeros((size, size));
            for k in 0..size {
                let (m, n) = (k as f64, (k + d) as f64);
                let lam_m = upward_weight(k, dim);
                let lam_n = upward_weight(k + d, dim);
                gen[[k, k]] =
                    C64::from(-0.5 * (kd * (m + n) + ku * (lam_m + lam_n)) * t);
                if k + 1 < size {
                    gen[[k, k + 1]] = C64::from(kd * ((m + 1.0) * (n + 1.0)).sqrt() * t);
                }
                if k > 0 {
                    gen[[k, k - 1]] = C64::from(ku * (m * n).sqrt() * t);
                }
            }
            blocks.push(crate::linalg::expm(&gen));
        }
        Self { blocks, dim }
    }

    /// Applies the relaxation map to a density operator (or any matrix of
    /// matching dimension).
    pub fn apply(&self, rho: &DensityOp) -> DensityOp {
        assert_eq!(rho.nrows(), self.dim, "density operator dimension");
        assert_eq!(rho.ncols(), self.dim, "density operator dimension");
        let mut out = Array2::<C64>::zeros((self.dim, self.dim));
        for (d, block) in self.blocks.iter().enumerate() {
            let size = self.dim - d;
            for k in 0..size {
                let mut upper = C64::new(0.0, 0.0);
                let mut lower = C64::new(0.0, 0.0);
                for j in 0..size {
                    upper += block[[k, j]] * rho[[j, j + d]];
                    lower += block[[k, j]] * rho[[j + d, j]];
                }
                out[[k, k + d]] = upper;
                out[[k + d, k]] = lower;
            }
        }
        out
    }
}

/// The field maps of one sample window: the single-transit Kraus pair and
/// the four operators of a simultaneous two-atom transit.
#[derive(Debug, Clone)]
pub struct TransitMaps {
    pub single: KrausPair,
    pub double: [Array2<C64>; 4],
}

impl TransitMaps {
    fn dim(&self) -> usize {
        self.single.m_g.nrows()
    }

    fn apply_double(&self, rho: &DensityOp) -> DensityOp {
        let mut out = Array2::<C64>::zeros(rho.raw_dim());
        for op in &self.double {
            out = out + op.dot(rho).dot(&dagger(op));
        }
        out
    }
}

/// Builds the transit maps of the composite sequence by exact integration
/// of the joint dynamics for one and for two simultaneous atoms.
pub fn composite_transit_maps(config: &ReservoirConfig, space: FockSpace) -> Result<TransitMaps> {
    config.validate()?;
    let t_r = resonant_window(&config.profile, config.v, config.theta_r)?;
    let t_total = config.profile.transit_time(config.v);
    let detuning = DetuningProfile::composite(t_total, t_r, config.delta0)?;
    let atom = AtomState::superposition(config.u);
    let u1 = exact_propagator(&detuning, &config.profile, config.v, &space)?;
    let single = kraus_from_propagator(&u1, &atom)?;
    let u2 = two_atom_propagator(&detuning, &config.profile, config.v, &space)?;
    let double = kraus_from_two_atom(&u2, &atom)?;
    Ok(TransitMaps { single, double })
}

/// One line of a trajectory log.
#[derive(Debug, Clone, Copy)]
pub struct SampleRecord {
    pub sample_index: usize,
    pub atom_count: usize,
    pub jump_flag: bool,
    /// Fidelity to the supplied target state, NaN when no target was given.
    pub fidelity: f64,
    pub mean_n: f64,
}

/// Outcome of a density-operator evolution: final state plus the log.
#[derive(Debug, Clone)]
pub struct EvolutionRun {
    pub rho: DensityOp,
    pub records: Vec<SampleRecord>,
}

fn pure_fidelity(target: Option<&FieldVector>, rho: &DensityOp) -> f64 {
    match target {
        Some(t) => {
            let mut f = C64::new(0.0, 0.0);
            for (i, ti) in t.iter().enumerate() {
                for (j, tj) in t.iter().enumerate() {
                    f += ti.conj() * rho[[i, j]] * tj;
                }
            }
            f.re
        }
        None => f64::NAN,
    }
}

fn warn_if_coarse(t_sample: f64, bath: &ThermalBath) {
    if t_sample > bath.t_c / 50.0 {
        eprintln!(
            "sample window {t_sample:.3e} s is not small against the damping time \
             {:.3e} s; splitting transit and relaxation is inaccurate here",
            bath.t_c
        );
    }
}

/// Evolves a density operator through `num_samples` windows, drawing the
/// atom count of each window (0, 1, or 2) from the truncated Poisson law,
/// applying the matching transit map, then the thermal relaxation map.
#[allow(clippy::too_many_arguments)]
pub fn interleaved_evolution<R: Rng>(
    rho0: &DensityOp,
    maps: &TransitMaps,
    bath: &ThermalBath,
    t_sample: f64,
    num_samples: usize,
    p_at: f64,
    target: Option<&FieldVector>,
    rng: &mut R,
) -> EvolutionRun {
    assert_eq!(rho0.nrows(), maps.dim(), "state and map dimensions");
    warn_if_coarse(t_sample, bath);
    let relax = ThermalMap::new(bath, t_sample, maps.dim());
    let mut rho = rho0.clone();
    let mut records = Vec::with_capacity(num_samples);
    for k in 0..num_samples {
        let count = sample_atom_count(p_at, rng);
        rho = match count {
            0 => rho,
            1 => apply_kraus(&rho, &maps.single),
            _ => maps.apply_double(&rho),
        };
        rho = relax.apply(&rho);
        records.push(SampleRecord {
            sample_index: k,
            atom_count: count,
            jump_flag: false,
            fidelity: pure_fidelity(target, &rho),
            mean_n: fock::mean_photon(&rho),
        });
    }
    EvolutionRun { rho, records }
}

/// Per-sample diagnostics of the deterministic averaged evolution.
#[derive(Debug, Clone)]
pub struct AveragedRun {
    pub rho: DensityOp,
    pub fidelity: Vec<f64>,
    pub mean_n: Vec<f64>,
}

/// Deterministic counterpart of [`interleaved_evolution`]: every window
/// applies the atom maps weighted by their truncated-Poisson probabilities,
/// which is the ensemble mean over atom-count draws.
pub fn averaged_evolution(
    rho0: &DensityOp,
    maps: &TransitMaps,
    bath: &ThermalBath,
    t_sample: f64,
    num_samples: usize,
    p_at: f64,
    target: Option<&FieldVector>,
) -> AveragedRun {
    assert!(p_at >= 0.0, "mean atom number must be non-negative");
    assert_eq!(rho0.nrows(), maps.dim(), "state and map dimensions");
    warn_if_coarse(t_sample, bath);
    let relax = ThermalMap::new(bath, t_sample, maps.dim());
    let z = 1.0 + p_at + 0.5 * p_at * p_at;
    let (w0, w1, w2) = (1.0 / z, p_at / z, 0.5 * p_at * p_at / z);
    let mut rho = rho0.clone();
    let mut fidelity = Vec::with_capacity(num_samples);
    let mut mean_n = Vec::with_capacity(num_samples);
    for _ in 0..num_samples {
        let mut mixed = rho.mapv(|x| x * w0);
        if w1 > 0.0 {
            mixed = mixed + apply_kraus(&rho, &maps.single).mapv(|x| x * w1);
            mixed = mixed + maps.apply_double(&rho).mapv(|x| x * w2);
        }
        rho = relax.apply(&mixed);
        fidelity.push(pure_fidelity(target, &rho));
        mean_n.push(fock::mean_photon(&rho));
    }
    AveragedRun {
        rho,
        fidelity,
        mean_n,
    }
}

/// Outcome of one Monte-Carlo wavefunction trajectory.
#[derive(Debug, Clone)]
pub struct McwfRun {
    pub psi: FieldVector,
    pub records: Vec<SampleRecord>,
    pub total_jumps: usize,
}

/// One stochastic pure-state trajectory: each sample window draws an atom
/// count, collapses the field on the atoms' measured final states, then
/// unravels the thermal relaxation into no-jump decay segments interrupted
/// by photon jumps.
///
/// The first-order jump probability per substep is kept below 0.05 by
/// adaptive substepping. Ensemble averages of `|psi><psi|` reproduce
/// [`averaged_evolution`] up to Monte-Carlo error.
#[allow(clippy::too_many_arguments)]
pub fn mcwf_trajectory<R: Rng>(
    psi0: &FieldVector,
    maps: &TransitMaps,
    bath: &ThermalBath,
    t_sample: f64,
    num_samples: usize,
    p_at: f64,
    target: Option<&FieldVector>,
    rng: &mut R,
) -> McwfRun {
    let dim = maps.dim();
    assert_eq!(psi0.len(), dim, "state and map dimensions");
    warn_if_coarse(t_sample, bath);
    let (kd, ku) = bath.rates();
    let mut psi = psi0.clone();
    normalize(&mut psi);
    let mut records = Vec::with_capacity(num_samples);
    let mut total_jumps = 0;
    for k in 0..num_samples {
        let count = sample_atom_count(p_at, rng);
        match count {
            0 => {}
            1 => {
                let branches = [maps.single.m_g.dot(&psi), maps.single.m_e.dot(&psi)];
                psi = pick_branch(branches.to_vec(), rng);
            }
            _ => {
                let branches: Vec<FieldVector> =
                    maps.double.iter().map(|op| op.dot(&psi)).collect();
                psi = pick_branch(branches, rng);
            }
        }
        let mut jump_flag = false;
        let mut remaining = t_sample;
        while remaining > 0.0 {
            let mut rate_down = 0.0;
            let mut rate_up = 0.0;
            for (n, z) in psi.iter().enumerate() {
                let p = z.norm_sqr();
                rate_down += kd * n as f64 * p;
                rate_up += ku * upward_weight(n, dim) * p;
            }
            let total = rate_down + rate_up;
            if total <= 0.0 {
                break;
            }
            let dt = remaining.min(0.05 / total);
            if rng.gen_range(0.0..1.0) < total * dt {
                let down = rng.gen_range(0.0..1.0) < rate_down / total;
                let mut jumped = Array1::<C64>::zeros(dim);
                for n in 0..dim {
                    if down {
                        if n + 1 < dim {
                            jumped[n] = ((n + 1) as f64).sqrt() * psi[n + 1];
                        }
                    } else if n > 0 {
                        jumped[n] = (n as f64).sqrt() * psi[n - 1];
                    }
                }
                psi = jumped;
                jump_flag = true;
                total_jumps += 1;
            } else {
                for (n, z) in psi.iter_mut().enumerate() {
                    let decay = kd * n as f64 + ku * upward_weight(n, dim);
                    *z *= C64::from((-0.5 * decay * dt).exp());
                }
            }
            normalize(&mut psi);
            remaining -= dt;
        }
        let fidelity = match target {
            Some(t) => overlap(t, &psi).norm_sqr(),
            None => f64::NAN,
        };
        records.push(SampleRecord {
            sample_index: k,
            atom_count: count,
            jump_flag,
            fidelity,
            mean_n: fock::mean_photon_pure(&psi),
        });
    }
    McwfRun {
        psi,
        records,
        total_jumps,
    }
}

fn normalize(psi: &mut FieldVector) {
    let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    assert!(norm > 0.0, "state collapsed to zero norm");
    psi.mapv_inplace(|z| z / norm);
}

fn overlap(a: &FieldVector, b: &FieldVector) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

fn pick_branch<R: Rng>(branches: Vec<FieldVector>, rng: &mut R) -> FieldVector {
    let probs: Vec<f64> = branches
        .iter()
        .map(|b| b.iter().map(|z| z.norm_sqr()).sum())
        .collect();
    let total: f64 = probs.iter().sum();
    let mut x = rng.gen_range(0.0..1.0) * total;
    for (branch, p) in branches.iter().zip(&probs) {
        if x < *p && *p > 0.0 {
            let mut out = branch.clone();
            normalize(&mut out);
            return out;
        }
        x -= p;
    }
    let mut out = branches
        .into_iter()
        .zip(probs)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one branch")
        .0;
    normalize(&mut out);
    out
}

/// One iteration of the small-angle amplitude model together with the state
/// it predicts: the amplitude recursion and the Kerr-rotated coherent
/// projector for the current amplitude.
pub fn simplified_model_step(
    alpha_k: f64,
    u: f64,
    theta_r: f64,
    space: FockSpace,
) -> Result<(f64, DensityOp)> {
    let next = crate::reservoir::simplified_amplitude_step(alpha_k, u, theta_r);
    let kerr = fock::kerr_propagator(0.0, std::f64::consts::FRAC_PI_2, 1.0, space);
    let psi = kerr.dot(&coherent(C64::from(alpha_k), space)?);
    Ok((next, fock::projector(&psi)))
}

/// Parameters of the damped steady state in the frame where the reservoir
/// acts as a plain amplitude attractor.
#[derive(Debug, Clone, Copy)]
pub struct DampedSteadyParams {
    pub alpha_inf: f64,
    pub eta: f64,
    pub r_c: f64,
    pub alpha_c_inf: f64,
}

impl DampedSteadyParams {
    /// Derives the damped parameters from the scheme's controls: the
    /// reservoir pump rate is `kappa = theta_r^2 / (4 T)` per unit time and
    /// the undamped amplitude is `2u/theta_r`.
    pub fn from_scheme(u: f64, theta_r: f64, t_sample: f64, bath: &ThermalBath) -> Result<Self> {
        if t_sample <= 0.0 || theta_r <= 0.0 {
            return Err(Error::ConfigError(format!(
                "need positive sample time and pulse area, got T = {t_sample}, \
                 theta_r = {theta_r}"
            )));
        }
        let alpha_inf = 2.0 * u / theta_r;
        let kappa = theta_r * theta_r / (4.0 * t_sample);
        let kappa_c = bath.kappa_c();
        let eta = kappa_c / kappa;
        let r_c = 2.0 * kappa_c / (kappa + kappa_c);
        let params = Self {
            alpha_inf,
            eta,
            r_c,
            alpha_c_inf: alpha_inf / (1.0 + eta),
        };
        params.validate()?;
        Ok(params)
    }

    /// Endpoint exponent of the density: `mu ~ (alpha - z)^(gamma - 1)` at
    /// the attractor.
    pub fn gamma(&self) -> f64 {
        self.r_c * self.alpha_c_inf * self.alpha_c_inf
    }

    fn validate(&self) -> Result<()> {
        if !(self.r_c > 0.0 && self.r_c < 2.0) {
            return Err(Error::ConfigError(format!(
                "damping ratio r_c = {} outside (0, 2)",
                self.r_c
            )));
        }
        if !(self.alpha_c_inf > 0.0) {
            return Err(Error::ConfigError(format!(
                "damped amplitude alpha_c_inf = {} must be positive",
                self.alpha_c_inf
            )));
        }
        Ok(())
    }
}

/// The normalized amplitude density `mu(z)` on `[-alpha_c_inf, alpha_c_inf]`.
///
/// The density carries an integrable power divergence at the attractor and
/// a matching power zero at the mirror point, so every integral against it
/// uses a Gauss-Jacobi rule in `z / alpha_c_inf`, whose weight absorbs both
/// endpoint factors exactly. The normalization is cross-checked against an
/// independent substitute-and-refine route at solve time.
#[derive(Debug, Clone)]
pub struct MuSolution {
    pub params: DampedSteadyParams,
    norm: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl MuSolution {
    pub fn solve(params: &DampedSteadyParams) -> Result<Self> {
        params.validate()?;
        let gamma = params.gamma();
        let alpha = params.alpha_c_inf;
        let (nodes, weights) = gauss_jacobi(48, gamma - 1.0, gamma);
        let scale = alpha.powf(2.0 * gamma);
        let i_jacobi: f64 = scale
            * nodes
                .iter()
                .zip(&weights)
                .map(|(x, w)| w * (params.r_c * (alpha * x).powi(2)).exp())
                .sum::<f64>();
        let i_split = split_substituted_norm(params, 1e-10 * i_jacobi.abs().max(1e-300));
        if !(i_jacobi.is_finite() && i_split.is_finite())
            || i_jacobi <= 0.0
            || (i_jacobi - i_split).abs() > 1e-8 * i_jacobi
        {
            return Err(Error::DivergentNormalization(format!(
                "independent quadratures of the amplitude density disagree: \
                 {i_jacobi:.12e} vs {i_split:.12e}"
            )));
        }
        Ok(Self {
            params: *params,
            norm: 1.0 / i_jacobi,
            nodes,
            weights,
        })
    }

    /// Density value at amplitude `z`; zero outside the support, divergent
    /// (infinity) at the attractor endpoint.
    pub fn density(&self, z: f64) -> f64 {
        let alpha = self.params.alpha_c_inf;
        if z <= -alpha || z > alpha {
            return 0.0;
        }
        if z == alpha {
            return f64::INFINITY;
        }
        let gamma = self.params.gamma();
        self.norm
            * (alpha - z).powf(gamma - 1.0)
            * (alpha + z).powf(gamma)
            * (self.params.r_c * z * z).exp()
    }

    /// Moment `int z^k mu(z) dz` over the support.
    pub fn moment(&self, k: u32) -> f64 {
        let alpha = self.params.alpha_c_inf;
        let scale = self.norm * alpha.powf(2.0 * self.params.gamma());
        scale
            * self
                .nodes
                .iter()
                .zip(&self.weights)
                .map(|(x, w)| {
                    let z = alpha * x;
                    w * z.powi(k as i32) * (self.params.r_c * z * z).exp()
                })
                .sum::<f64>()
    }

    /// Residual of the drift-diffusion balance the density must satisfy,
    /// `kappa_c z^2 (mu(-z) - mu(z)) - d/dz[mu(z)(beta - (kappa+kappa_c)z/2)]`,
    /// with the derivative taken by a five-point stencil on the density.
    pub fn ode_residual(&self, kappa_c: f64, z: f64) -> f64 {
        let alpha = self.params.alpha_c_inf;
        let k2 = kappa_c / self.params.r_c;
        let beta = alpha * k2;
        let flux = |y: f64| self.density(y) * (beta - k2 * y);
        let h = 1e-3 * (alpha - z.abs()).max(1e-6 * alpha);
        let deriv =
            (-flux(z + 2.0 * h) + 8.0 * flux(z + h) - 8.0 * flux(z - h) + flux(z - 2.0 * h))
                / (12.0 * h);
        kappa_c * z * z * (self.density(-z) - self.density(z)) - deriv
    }
}

/// Norm of the unnormalized density by a route independent of the Jacobi
/// rule: split at z = 0, substitute away the endpoint power of each half
/// (`t = (alpha -+ z)^gamma`), and integrate the regular remainders
/// adaptively.
fn split_substituted_norm(params: &DampedSteadyParams, tol: f64) -> f64 {
    let gamma = params.gamma();
    let alpha = params.alpha_c_inf;
    let upper = alpha.powf(gamma);
    let right = |t: f64| {
        let dist = t.powf(1.0 / gamma);
        (2.0 * alpha - dist).powf(gamma) * (params.r_c * (alpha - dist).powi(2)).exp() / gamma
    };
    let left = |s: f64| {
        let rise = s.powf(1.0 / gamma);
        rise * (2.0 * alpha - rise).powf(gamma - 1.0)
            * (params.r_c * (rise - alpha).powi(2)).exp()
            / gamma
    };
    adaptive_simpson(&right, 0.0, upper, 0.5 * tol)
        + adaptive_simpson(&left, 0.0, upper, 0.5 * tol)
}

/// Tabulates the normalized density on the given amplitudes.
pub fn mu_distribution(params: &DampedSteadyParams, zs: &[f64]) -> Result<Vec<f64>> {
    let mu = MuSolution::solve(params)?;
    Ok(zs.iter().map(|&z| mu.density(z)).collect())
}

/// Reconstructs the damped steady-state density operator as the mu-weighted
/// mixture of coherent states along the real axis.
pub fn reconstruct_rho_h_inf(params: &DampedSteadyParams, space: FockSpace) -> Result<DensityOp> {
    let mu = MuSolution::solve(params)?;
    let gamma = params.gamma();
    let alpha = params.alpha_c_inf;
    // enough nodes to integrate every z^(m+n) matrix element exactly
    let (nodes, weights) = gauss_jacobi(48.max(space.dim + 8), gamma - 1.0, gamma);
    let scale = mu.norm * alpha.powf(2.0 * gamma);
    let mut rho = Array2::<C64>::zeros((space.dim, space.dim));
    for (x, w) in nodes.iter().zip(&weights) {
        let z = alpha * x;
        let weight = scale * w * (params.r_c * z * z).exp();
        let psi = coherent(C64::from(z), space)?;
        for i in 0..space.dim {
            for j in 0..space.dim {
                rho[[i, j]] += C64::from(weight) * psi[i] * psi[j].conj();
            }
        }
    }
    Ok(rho)
}
