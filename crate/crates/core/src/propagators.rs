//! Propagators for atoms crossing the cavity mode.
//!
//! An atom moving at velocity `v` samples the Gaussian mode geometry as a
//! time-dependent coupling `omega(v t)` while its transition frequency is
//! steered through a programmable detuning `delta(t)`. Under the
//! rotating-wave approximation the joint evolution splits into independent
//! two-level problems on the Bloch spheres `B_n` spanned by `|e,n>` and
//! `|g,n+1>`, so both the analytic rotation operators and the numerically
//! exact integration stay cheap even at large photon-number cutoffs.
//!
//! The module provides the photon-number-dependent rotations `rot_x`,
//! `rot_y`, `rot_z`, the analytic propagators for resonant and adiabatically
//! swept non-resonant crossings, the composite
//! dispersive/resonant/dispersive sequence with its angle tables, a
//! Magnus-based integrator of the exact Schroedinger equation that serves as
//! ground truth for all of the above, the frame generator that turns the
//! composite phases into an effective Kerr Hamiltonian, velocity
//! calibration, and the propagator for a pair of atoms crossing together.
//!
//! Joint-space layout everywhere: row `n` is `|e,n>`, row `dim + n` is
//! `|g,n>`, with `n` the photon number of a `FockSpace` of dimension `dim`.

use ndarray::Array2;

use crate::fock::FockSpace;
use crate::linalg::{self, C64};
use crate::quad;
use crate::{Error, Result};

/// Offset of the two Gauss-Legendre nodes from the midpoint of a step,
/// as a fraction of the step width (sqrt(3)/6).
const GAUSS_OFFSET: f64 = 0.288_675_134_594_812_9;

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Element-wise agreement required between two successive step-halving
/// levels of the exact integrators.
const REFINEMENT_TOL: f64 = 1e-9;

/// Hard ceiling on the total number of integration steps before the
/// refinement loop gives up.
const MAX_STEPS: usize = 1 << 21;

/// Gaussian envelope of the vacuum Rabi frequency along the atomic path.
///
/// The coupling is `omega0 * exp(-s^2/w^2)` for `|s| <= cutoff_factor * w`
/// and exactly zero beyond, which keeps every transit strictly finite.
#[derive(Debug, Clone, Copy)]
pub struct CouplingProfile {
    /// Peak vacuum Rabi frequency at the mode center, in rad/s.
    pub omega0: f64,
    /// Mode waist, in meters.
    pub w: f64,
    /// Coupling is treated as exactly zero beyond this many waists.
    pub cutoff_factor: f64,
}

impl Default for CouplingProfile {
    fn default() -> Self {
        CouplingProfile {
            omega0: 2.0 * std::f64::consts::PI * 50e3,
            w: 6e-3,
            cutoff_factor: 1.5,
        }
    }
}

impl CouplingProfile {
    /// Coupling strength at position `s` along the atomic path.
    pub fn omega(&self, s: f64) -> f64 {
        if s.abs() > self.cutoff_factor * self.w {
            0.0
        } else {
            self.omega0 * (-s * s / (self.w * self.w)).exp()
        }
    }

    /// Duration of a full transit at velocity `v`, edge to edge of the
    /// truncated envelope.
    pub fn transit_time(&self, v: f64) -> f64 {
        2.0 * self.cutoff_factor * self.w / v
    }

    /// Rabi pulse area `integral of omega(v t) dt` over `[t1, t2]`.
    pub fn pulse_area(&self, v: f64, t1: f64, t2: f64) -> f64 {
        let cut = self.cutoff_factor * self.w;
        let a = (v * t1).max(-cut);
        let b = (v * t2).min(cut);
        if b <= a {
            return 0.0;
        }
        let tol = 1e-13 * self.omega0 * (b - a).max(self.w);
        quad::adaptive_simpson(&|s| self.omega(s), a, b, tol) / v
    }
}

/// One interaction window: times `[t1, t2]`, velocity `v` and the constant
/// detuning `delta0` applied during the window.
#[derive(Debug, Clone, Copy)]
pub struct InteractionParams {
    pub t1: f64,
    pub t2: f64,
    pub v: f64,
    pub delta0: f64,
}

/// A detuning held constant over `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetuningSegment {
    pub start: f64,
    pub end: f64,
    pub delta: f64,
}

/// Piecewise detuning program over a transit, with an optional exponential
/// relaxation of time constant `rise_time` at each switch instead of an
/// ideal jump.
#[derive(Debug, Clone, PartialEq)]
pub struct DetuningProfile {
    pub segments: Vec<DetuningSegment>,
    pub rise_time: Option<f64>,
}

impl DetuningProfile {
    /// Builds a profile from `(start, end, delta)` triples, which must be
    /// contiguous and time-ordered.
    pub fn piecewise(segments: &[(f64, f64, f64)]) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::ConfigError(
                "detuning profile needs at least one segment".into(),
            ));
        }
        let span = segments.last().unwrap().1 - segments[0].0;
        let eps = 1e-9 * span.abs().max(1e-12);
        let mut out = Vec::with_capacity(segments.len());
        for (i, &(start, end, delta)) in segments.iter().enumerate() {
            if end <= start {
                return Err(Error::ConfigError(format!(
                    "segment {i} has non-positive duration"
                )));
            }
            if i > 0 && (start - segments[i - 1].1).abs() > eps {
                return Err(Error::ConfigError(format!(
                    "segment {i} does not start where segment {} ends",
                    i - 1
                )));
            }
            out.push(DetuningSegment { start, end, delta });
        }
        Ok(DetuningProfile {
            segments: out,
            rise_time: None,
        })
    }

    /// Constant detuning over a single window.
    pub fn constant(t1: f64, t2: f64, delta: f64) -> Result<Self> {
        Self::piecewise(&[(t1, t2, delta)])
    }

    /// The three-window sequence `+delta0 / 0 / -delta0` that sandwiches a
    /// resonant window of duration `t_r` symmetrically inside a transit of
    /// duration `t_total`.
    pub fn composite(t_total: f64, t_r: f64, delta0: f64) -> Result<Self> {
        Self::piecewise(&[
            (-0.5 * t_total, -0.5 * t_r, delta0),
            (-0.5 * t_r, 0.5 * t_r, 0.0),
            (0.5 * t_r, 0.5 * t_total, -delta0),
        ])
    }

    /// Replaces the ideal detuning jumps by exponential relaxations with
    /// time constant `tau`.
    pub fn with_rise_time(mut self, tau: f64) -> Self {
        self.rise_time = if tau > 0.0 { Some(tau) } else { None };
        self
    }

    pub fn start(&self) -> f64 {
        self.segments[0].start
    }

    pub fn end(&self) -> f64 {
        self.segments.last().unwrap().end
    }

    fn compile(&self) -> DetuningSchedule {
        let mut segs = Vec::with_capacity(self.segments.len());
        let mut init = self.segments[0].delta;
        for seg in &self.segments {
            let c = CompiledSegment {
                start: seg.start,
                end: seg.end,
                target: seg.delta,
                init,
                tau: self.rise_time,
            };
            init = c.delta(seg.end);
            segs.push(c);
        }
        // accumulate the detuning phase across segment boundaries
        let mut phases = Vec::with_capacity(segs.len());
        let mut acc = 0.0;
        for c in &segs {
            phases.push(acc);
            acc += c.local_phase(c.end);
        }
        DetuningSchedule {
            segs,
            phase_offsets: phases,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct CompiledSegment {
    start: f64,
    end: f64,
    target: f64,
    init: f64,
    tau: Option<f64>,
}

impl CompiledSegment {
    fn delta(&self, t: f64) -> f64 {
        match self.tau {
            None => self.target,
            Some(tau) => {
                self.target + (self.init - self.target) * (-(t - self.start) / tau).exp()
            }
        }
    }

    /// Integral of delta from the segment start to `t`.
    fn local_phase(&self, t: f64) -> f64 {
        let dt = t - self.start;
        match self.tau {
            None => self.target * dt,
            Some(tau) => {
                self.target * dt + (self.init - self.target) * tau * (1.0 - (-dt / tau).exp())
            }
        }
    }
}

/// Detuning evaluator with the accumulated phase integral in closed form,
/// so the interaction-picture transformation is exact at every node.
struct DetuningSchedule {
    segs: Vec<CompiledSegment>,
    phase_offsets: Vec<f64>,
}

impl DetuningSchedule {
    fn locate(&self, t: f64) -> usize {
        let mut i = 0;
        while i + 1 < self.segs.len() && t >= self.segs[i].end {
            i += 1;
        }
        i
    }

    /// Integral of delta from the profile start to `t`.
    fn phase(&self, t: f64) -> f64 {
        let i = self.locate(t);
        self.phase_offsets[i] + self.segs[i].local_phase(t)
    }

    fn max_abs_delta(&self) -> f64 {
        self.segs
            .iter()
            .map(|s| s.target.abs().max(s.init.abs()))
            .fold(0.0, f64::max)
    }
}

fn check_table(f: &[f64], space: &FockSpace) {
    assert_eq!(
        f.len(),
        space.dim + 1,
        "rotation table must cover photon numbers 0..=dim"
    );
}

/// Rotation by `f(n+1)` around the X axis of each Bloch sphere `B_n`.
///
/// `|g,0>` and `|e,dim-1>` have no partner level inside the truncated space
/// and are left untouched, which keeps the operator exactly unitary.
pub fn rot_x(f: &[f64], space: &FockSpace) -> Array2<C64> {
    check_table(f, space);
    let dim = space.dim;
    let mut u = Array2::<C64>::zeros((2 * dim, 2 * dim));
    u[[dim, dim]] = C64::new(1.0, 0.0);
    u[[dim - 1, dim - 1]] = C64::new(1.0, 0.0);
    for n in 0..dim - 1 {
        let (e, g) = (n, dim + n + 1);
        let (s, c) = (0.5 * f[n + 1]).sin_cos();
        u[[e, e]] = c.into();
        u[[g, g]] = c.into();
        u[[e, g]] = C64::new(0.0, -s);
        u[[g, e]] = C64::new(0.0, -s);
    }
    u
}

/// Rotation by `f(n+1)` around the Y axis of each Bloch sphere `B_n`.
///
/// Boundary levels are treated as in `rot_x`.
pub fn rot_y(f: &[f64], space: &FockSpace) -> Array2<C64> {
    check_table(f, space);
    let dim = space.dim;
    let mut u = Array2::<C64>::zeros((2 * dim, 2 * dim));
    u[[dim, dim]] = C64::new(1.0, 0.0);
    u[[dim - 1, dim - 1]] = C64::new(1.0, 0.0);
    for n in 0..dim - 1 {
        let (e, g) = (n, dim + n + 1);
        let (s, c) = (0.5 * f[n + 1]).sin_cos();
        u[[e, e]] = c.into();
        u[[g, g]] = c.into();
        u[[e, g]] = (-s).into();
        u[[g, e]] = s.into();
    }
    u
}

/// Rotation by `f(n+1)` around the Z axis of each Bloch sphere `B_n`:
/// `|g,n>` acquires `exp(+i f(n)/2)` and `|e,n>` acquires `exp(-i f(n+1)/2)`.
pub fn rot_z(f: &[f64], space: &FockSpace) -> Array2<C64> {
    check_table(f, space);
    let dim = space.dim;
    let mut u = Array2::<C64>::zeros((2 * dim, 2 * dim));
    for n in 0..dim {
        u[[n, n]] = C64::from_polar(1.0, -0.5 * f[n + 1]);
        u[[dim + n, dim + n]] = C64::from_polar(1.0, 0.5 * f[n]);
    }
    u
}

/// Propagator of a resonant window: `rot_y` with the table
/// `theta_r * sqrt(n)`, where `theta_r` is the Rabi pulse area over the
/// window. Returns the unitary together with `theta_r`.
pub fn resonant_propagator(
    q: &InteractionParams,
    profile: &CouplingProfile,
    space: &FockSpace,
) -> (Array2<C64>, f64) {
    assert!(
        q.delta0 == 0.0,
        "resonant window must have zero detuning, got {}",
        q.delta0
    );
    let theta_r = profile.pulse_area(q.v, q.t1, q.t2);
    let f: Vec<f64> = (0..=space.dim)
        .map(|n| theta_r * (n as f64).sqrt())
        .collect();
    (rot_y(&f, space), theta_r)
}

/// Duration of the symmetric window `[-t_r/2, t_r/2]` whose Rabi pulse area
/// equals `theta_r` at velocity `v`.
pub fn resonant_window(profile: &CouplingProfile, v: f64, theta_r: f64) -> Result<f64> {
    let t_max = profile.transit_time(v);
    let g = |t_r: f64| profile.pulse_area(v, -0.5 * t_r, 0.5 * t_r) - theta_r;
    quad::find_root(&g, 0.0, t_max, 1e-15 * t_max)
}

/// Accumulated dressed-level phase
/// `delta0 * integral of sqrt(1 + n (omega(v t)/delta0)^2) dt` over the
/// window `q`, for photon index `n`.
pub fn adiabatic_phase(q: &InteractionParams, profile: &CouplingProfile, n: usize) -> f64 {
    let d = q.delta0;
    assert!(d != 0.0, "adiabatic phase needs a nonzero detuning");
    if n == 0 {
        return d * (q.t2 - q.t1);
    }
    let cut = profile.cutoff_factor * profile.w / q.v;
    let nf = n as f64;
    let mut total = 0.0;
    let mut t = q.t1;
    // split at the envelope cutoff times, where the integrand kinks
    let mut marks: Vec<f64> = vec![-cut, cut]
        .into_iter()
        .filter(|&m| m > q.t1 && m < q.t2)
        .collect();
    marks.push(q.t2);
    for m in marks {
        if m <= t {
            continue;
        }
        let mid = 0.5 * (t + m);
        if profile.omega(q.v * mid) == 0.0 {
            total += d * (m - t);
        } else {
            let f = |tt: f64| {
                let r = profile.omega(q.v * tt) / d;
                (1.0 + nf * r * r).sqrt()
            };
            let tol = 1e-13 * (m - t) * (1.0 + nf).sqrt();
            total += d * quad::adaptive_simpson(&f, t, m, tol);
        }
        t = m;
    }
    total
}

/// Dressed-basis mixing angles at path position `s`:
/// `xi_n = atan(omega(s) sqrt(n) / delta)`. Beyond the envelope cutoff the
/// coupling vanishes and dressed and bare levels coincide exactly.
fn mixing_table(profile: &CouplingProfile, s: f64, delta: f64, dim: usize) -> Vec<f64> {
    let om = profile.omega(s);
    (0..=dim)
        .map(|n| (om * (n as f64).sqrt() / delta).atan())
        .collect()
}

/// Propagator of a non-resonant window under the adiabatic approximation:
/// a dressed-level phase rotation sandwiched between the basis changes into
/// and out of the dressed frame at the window edges.
///
/// The unpaired top level `|e,dim-1>` evolves freely at `delta0/2`, matching
/// the truncated exact dynamics.
pub fn adiabatic_propagator(
    q: &InteractionParams,
    profile: &CouplingProfile,
    space: &FockSpace,
) -> Array2<C64> {
    assert!(q.delta0 != 0.0, "adiabatic window must have nonzero detuning");
    let dim = space.dim;
    let margin = adiabaticity_margin(q, profile, dim - 1);
    if margin < 0.0 {
        eprintln!(
            "adiabatic_propagator: adiabaticity margin at the top retained level is \
             {margin:.3}; the dressed-level approximation may not hold over this window"
        );
    }
    let phi: Vec<f64> = (0..=dim).map(|n| adiabatic_phase(q, profile, n)).collect();
    let xi_in = mixing_table(profile, q.v * q.t1, q.delta0, dim);
    let xi_out: Vec<f64> = mixing_table(profile, q.v * q.t2, q.delta0, dim)
        .into_iter()
        .map(|x| -x)
        .collect();
    let mut u = rot_z(&phi, space);
    if xi_in.iter().any(|&x| x != 0.0) {
        u = u.dot(&rot_x(&xi_in, space));
    }
    if xi_out.iter().any(|&x| x != 0.0) {
        u = rot_x(&xi_out, space).dot(&u);
    }
    u[[dim - 1, dim - 1]] = C64::from_polar(1.0, -0.5 * q.delta0 * (q.t2 - q.t1));
    u
}

/// Worst-case slack in the adiabaticity condition for photon index `n` over
/// the window `q`: the minimum over the path of
/// `(delta/(omega0 sqrt(n+1)))^2 + exp(-2 s^2) - |2 v s exp(-s^2) / (w omega0 sqrt(n+1))|`
/// with `s` in waist units. Positive means the dressed levels are followed
/// adiabatically throughout.
pub fn adiabaticity_margin(q: &InteractionParams, profile: &CouplingProfile, n: usize) -> f64 {
    let root = ((n + 1) as f64).sqrt();
    let s1 = q.t1 * q.v / profile.w;
    let s2 = q.t2 * q.v / profile.w;
    let steps = 4000;
    let mut margin = f64::INFINITY;
    for k in 0..=steps {
        let s = s1 + (s2 - s1) * k as f64 / steps as f64;
        let lhs = (2.0 * q.v / (profile.w * profile.omega0 * root) * s * (-s * s).exp()).abs();
        let r = q.delta0 / (profile.omega0 * root);
        let rhs = r * r + (-2.0 * s * s).exp();
        margin = margin.min(rhs - lhs);
    }
    margin
}

/// Angle tables of the composite dispersive/resonant/dispersive sequence,
/// indexed by photon number `0..=dim`.
#[derive(Debug, Clone)]
pub struct CompositeAngles {
    /// Resonant rotation angles `theta_r sqrt(n)`.
    pub theta_r_n: Vec<f64>,
    /// Effective rotation angles, `cos(theta_c/2) = cos(theta_r/2) cos(xi)`.
    pub theta_c_n: Vec<f64>,
    /// Dressed-level phases accumulated over the first dispersive window.
    pub phi_n: Vec<f64>,
    /// Dressed-basis mixing angles at the switch instants.
    pub xi_n: Vec<f64>,
    /// Phase corrections from the interrupted dressed rotation.
    pub chi_c_n: Vec<f64>,
    /// Composite phases `phi_c = phi + chi_c`.
    pub phi_c_n: Vec<f64>,
}

fn composite_angle_tables(
    d1: &InteractionParams,
    r: &InteractionParams,
    profile: &CouplingProfile,
    n_max: usize,
) -> CompositeAngles {
    let theta_r = profile.pulse_area(r.v, r.t1, r.t2);
    let omega_r = profile.omega(r.v * r.t2);
    let delta0 = d1.delta0;
    let mut theta_r_n = Vec::with_capacity(n_max + 1);
    let mut theta_c_n = Vec::with_capacity(n_max + 1);
    let mut phi_n = Vec::with_capacity(n_max + 1);
    let mut xi_n = Vec::with_capacity(n_max + 1);
    let mut chi_c_n = Vec::with_capacity(n_max + 1);
    let mut phi_c_n = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let nf = n as f64;
        let tr = theta_r * nf.sqrt();
        let xi = (omega_r * nf.sqrt() / delta0).atan();
        let phi = adiabatic_phase(d1, profile, n);
        let tc = 2.0 * ((0.5 * tr).cos() * xi.cos()).clamp(-1.0, 1.0).acos();
        // angle of sin(theta_r/2) - i cos(theta_r/2) sin(xi); zero photons
        // leave both parts zero and the correction is zero by convention
        let chi = if n == 0 {
            0.0
        } else {
            (-(0.5 * tr).cos() * xi.sin()).atan2((0.5 * tr).sin())
        };
        theta_r_n.push(tr);
        xi_n.push(xi);
        phi_n.push(phi);
        theta_c_n.push(tc);
        chi_c_n.push(chi);
        phi_c_n.push(phi + chi);
    }
    CompositeAngles {
        theta_r_n,
        theta_c_n,
        phi_n,
        xi_n,
        chi_c_n,
        phi_c_n,
    }
}

/// Analytic propagator of the full composite sequence, assembled as
/// `rot_z(-phi_c) rot_y(theta_c) rot_z(phi_c)`, together with all angle
/// tables. The windows must form a time-symmetric sequence with opposite
/// detunings on the two dispersive wings.
pub fn composite_analytic(
    d1: &InteractionParams,
    r: &InteractionParams,
    d2: &InteractionParams,
    profile: &CouplingProfile,
    space: &FockSpace,
) -> (Array2<C64>, CompositeAngles) {
    let eps = 1e-9 * (d2.t2 - d1.t1).abs();
    assert!(
        (d1.t2 - r.t1).abs() <= eps && (r.t2 - d2.t1).abs() <= eps,
        "composite windows must be contiguous"
    );
    assert!(
        (d1.t1 + d2.t2).abs() <= eps && (r.t1 + r.t2).abs() <= eps,
        "composite sequence must be time-symmetric"
    );
    assert!(
        d1.delta0 != 0.0 && d2.delta0 == -d1.delta0,
        "dispersive wings must carry opposite detunings"
    );
    assert!(r.delta0 == 0.0, "central window must be resonant");
    let angles = composite_angle_tables(d1, r, profile, space.dim);
    let minus_phi_c: Vec<f64> = angles.phi_c_n.iter().map(|&p| -p).collect();
    let u = rot_z(&minus_phi_c, space)
        .dot(&rot_y(&angles.theta_c_n, space))
        .dot(&rot_z(&angles.phi_c_n, space));
    (u, angles)
}

/// The three windows of a time-symmetric composite sequence: dispersive at
/// `+delta0`, resonant, dispersive at `-delta0`.
pub fn composite_windows(
    t_total: f64,
    t_r: f64,
    v: f64,
    delta0: f64,
) -> (InteractionParams, InteractionParams, InteractionParams) {
    let d1 = InteractionParams {
        t1: -0.5 * t_total,
        t2: -0.5 * t_r,
        v,
        delta0,
    };
    let r = InteractionParams {
        t1: -0.5 * t_r,
        t2: 0.5 * t_r,
        v,
        delta0: 0.0,
    };
    let d2 = InteractionParams {
        t1: 0.5 * t_r,
        t2: 0.5 * t_total,
        v,
        delta0: -delta0,
    };
    (d1, r, d2)
}

/// Cumulative sums of the composite phases: `h_0 = 0`,
/// `h_{n+1} = h_n + phi_c_{n+1}`. Conjugating `rot_y(theta_c)` by the field
/// phase `exp(-i h_N)` reproduces the composite propagator, so `h_N` acts as
/// an effective Kerr-type Hamiltonian (times an interaction time).
pub fn kerr_frame_generator(phi_c: &[f64]) -> Vec<f64> {
    let mut h = vec![0.0; phi_c.len()];
    for n in 1..phi_c.len() {
        h[n] = h[n - 1] + phi_c[n];
    }
    h
}

/// Difference `phi_c(n+1) - phi_c(n)` interpolated linearly at a fractional
/// photon number: the effective phase shift per photon at that energy.
pub fn phase_slope_at(phi_c: &[f64], n: f64) -> f64 {
    assert!(n >= 0.0, "photon number must be non-negative");
    let k = (n.floor() as usize).min(phi_c.len().saturating_sub(3));
    let d0 = phi_c[k + 1] - phi_c[k];
    let d1 = phi_c[k + 2] - phi_c[k + 1];
    d0 + (n - k as f64) * (d1 - d0)
}

/// Finds the velocity at which the composite sequence's phase slope at
/// photon number `target_n` equals `target_slope` (a slope of pi yields
/// two-component superpositions of coherent states).
///
/// The sequence is built from a full transit with a central resonant window
/// of pulse area `theta_r` and dispersive detuning
/// `delta0 = delta0_over_omega_r * omega(switch)`.
pub fn calibrate_velocity(
    profile: &CouplingProfile,
    delta0_over_omega_r: f64,
    theta_r: f64,
    target_n: f64,
    target_slope: f64,
) -> Result<f64> {
    let n_hi = target_n.ceil() as usize + 1;
    let slope = |v: f64| -> Result<f64> {
        let t_total = profile.transit_time(v);
        let t_r = resonant_window(profile, v, theta_r)?;
        let omega_r = profile.omega(v * t_r * 0.5);
        let delta0 = delta0_over_omega_r * omega_r;
        let (d1, r, _) = composite_windows(t_total, t_r, v, delta0);
        let angles = composite_angle_tables(&d1, &r, profile, n_hi);
        Ok(phase_slope_at(&angles.phi_c_n, target_n))
    };
    // slower transits accumulate more dispersive phase, so the slope
    // decreases monotonically with v and bisection is safe
    let (mut lo, mut hi) = (15.0, 400.0);
    let f_lo = slope(lo)? - target_slope;
    let f_hi = slope(hi)? - target_slope;
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::NoBracket(format!(
            "phase slope stays on one side of the target over [{lo}, {hi}] m/s"
        )));
    }
    let increasing = f_hi > f_lo;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = slope(mid)? - target_slope;
        if fm.abs() < 1e-5 || hi - lo < 1e-9 * hi {
            return Ok(mid);
        }
        if (fm > 0.0) == increasing {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// One integration step shared by all Bloch spheres: step width and the
/// precomputed coupling/phase data at the two Gauss nodes.
struct StepNode {
    h: f64,
    sa: f64,
    ca: f64,
    sb: f64,
    cb: f64,
}

/// Splits `[t1, t2]` at the detuning switches and envelope cutoffs, then
/// into steps no wider than `h_max`, returning `(start, width)` pairs.
fn integration_steps(
    t1: f64,
    t2: f64,
    v: f64,
    profile: &CouplingProfile,
    detuning: &DetuningProfile,
    h_max: f64,
) -> Vec<(f64, f64)> {
    let cut = profile.cutoff_factor * profile.w / v;
    let mut marks: Vec<f64> = vec![t1, t2, -cut, cut];
    for seg in &detuning.segments {
        marks.push(seg.start);
        marks.push(seg.end);
    }
    marks.retain(|&m| m >= t1 && m <= t2);
    marks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    marks.dedup_by(|a, b| (*a - *b).abs() < 1e-15 * (t2 - t1));
    let mut steps = Vec::new();
    for pair in marks.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b - a < 1e-18 * (t2 - t1) {
            continue;
        }
        let n = ((b - a) / h_max).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        for k in 0..n {
            steps.push((a + k as f64 * h, h));
        }
    }
    steps
}

/// Per-step node data for the single-atom problem in the frame where the
/// detuning phase is removed exactly.
fn single_mode_plan(
    steps: &[(f64, f64)],
    v: f64,
    profile: &CouplingProfile,
    sched: &DetuningSchedule,
) -> Vec<StepNode> {
    steps
        .iter()
        .map(|&(t0, h)| {
            let ta = t0 + (0.5 - GAUSS_OFFSET) * h;
            let tb = t0 + (0.5 + GAUSS_OFFSET) * h;
            let oa = 0.5 * profile.omega(v * ta);
            let ob = 0.5 * profile.omega(v * tb);
            let pa = sched.phase(ta);
            let pb = sched.phase(tb);
            StepNode {
                h,
                sa: oa * pa.sin(),
                ca: oa * pa.cos(),
                sb: ob * pb.sin(),
                cb: ob * pb.cos(),
            }
        })
        .collect()
}

fn mul2(a: &[[C64; 2]; 2], b: &[[C64; 2]; 2]) -> [[C64; 2]; 2] {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

/// Evolves one Bloch sphere through the whole plan with a fourth-order
/// Magnus scheme; `root` is `sqrt(n+1)` for sphere `B_n`.
fn evolve_sphere(plan: &[StepNode], root: f64) -> [[C64; 2]; 2] {
    let one = C64::new(1.0, 0.0);
    let zero = C64::new(0.0, 0.0);
    let mut u = [[one, zero], [zero, one]];
    for st in plan {
        let cx = 0.5 * st.h * (st.sa + st.sb) * root;
        let cy = 0.5 * st.h * (st.ca + st.cb) * root;
        let cz = -(SQRT3 / 6.0) * st.h * st.h * (st.sa * st.cb - st.sb * st.ca) * root * root;
        u = mul2(&linalg::su2_exp(0.0, cx, cy, cz), &u);
    }
    u
}

fn sphere_diff(a: &[[[C64; 2]; 2]], b: &[[[C64; 2]; 2]]) -> f64 {
    let mut d: f64 = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        for i in 0..2 {
            for j in 0..2 {
                d = d.max((x[i][j] - y[i][j]).norm());
            }
        }
    }
    d
}

/// Numerically exact propagator of one atom crossing the cavity under an
/// arbitrary detuning program.
///
/// Each Bloch sphere is integrated in the interaction picture of the
/// detuning (whose phase integral is known in closed form), with a
/// fourth-order Magnus scheme whose step count is doubled until two
/// successive refinements agree element-wise below 1e-9. This is the ground
/// truth against which every analytic propagator is checked.
pub fn exact_propagator(
    detuning: &DetuningProfile,
    profile: &CouplingProfile,
    v: f64,
    space: &FockSpace,
) -> Result<Array2<C64>> {
    let dim = space.dim;
    let (t1, t2) = (detuning.start(), detuning.end());
    let sched = detuning.compile();
    let omega_scale = 0.5 * profile.omega0 * (dim as f64).sqrt();
    let rate = omega_scale + sched.max_abs_delta() + v / profile.w;
    let mut n_target = (((t2 - t1) * rate / 0.8).ceil() as usize).clamp(64, 16384);
    let mut prev: Option<Vec<[[C64; 2]; 2]>> = None;
    let spheres = loop {
        let steps = integration_steps(t1, t2, v, profile, detuning, (t2 - t1) / n_target as f64);
        let plan = single_mode_plan(&steps, v, profile, &sched);
        let spheres: Vec<[[C64; 2]; 2]> = (0..dim - 1)
            .map(|n| evolve_sphere(&plan, ((n + 1) as f64).sqrt()))
            .collect();
        if let Some(p) = &prev {
            if sphere_diff(p, &spheres) < REFINEMENT_TOL {
                break spheres;
            }
        }
        if plan.len() >= MAX_STEPS {
            return Err(Error::IntegrationFailure(format!(
                "single-atom integration did not reach {REFINEMENT_TOL:.0e} within {MAX_STEPS} steps"
            )));
        }
        prev = Some(spheres);
        n_target *= 2;
    };
    let theta2 = sched.phase(t2);
    let (fe, fg) = (
        C64::from_polar(1.0, -0.5 * theta2),
        C64::from_polar(1.0, 0.5 * theta2),
    );
    let mut u = Array2::<C64>::zeros((2 * dim, 2 * dim));
    u[[dim, dim]] = fg;
    u[[dim - 1, dim - 1]] = fe;
    for (n, s) in spheres.iter().enumerate() {
        let (e, g) = (n, dim + n + 1);
        u[[e, e]] = fe * s[0][0];
        u[[e, g]] = fe * s[0][1];
        u[[g, e]] = fg * s[1][0];
        u[[g, g]] = fg * s[1][1];
    }
    Ok(u)
}

/// Ladder of basis states of one total-excitation block of the two-atom
/// problem: `|gg,m>`, `|ge,m-1>`, `|eg,m-1>`, `|ee,m-2>`, kept when the
/// photon index fits inside the truncation.
#[derive(Debug, Clone, Copy, PartialEq)]
enum TwoAtomLevel {
    Gg,
    Ge,
    Eg,
    Ee,
}

fn two_atom_block(m: usize, dim: usize) -> Vec<(TwoAtomLevel, usize)> {
    let mut states = Vec::new();
    if m < dim {
        states.push((TwoAtomLevel::Gg, m));
    }
    if m >= 1 && m - 1 < dim {
        states.push((TwoAtomLevel::Ge, m - 1));
        states.push((TwoAtomLevel::Eg, m - 1));
    }
    if m >= 2 && m - 2 < dim {
        states.push((TwoAtomLevel::Ee, m - 2));
    }
    states
}

fn two_atom_index(level: TwoAtomLevel, n: usize, dim: usize) -> usize {
    // atom1 (x) atom2 (x) field with atom order (e, g)
    match level {
        TwoAtomLevel::Ee => n,
        TwoAtomLevel::Eg => dim + n,
        TwoAtomLevel::Ge => 2 * dim + n,
        TwoAtomLevel::Gg => 3 * dim + n,
    }
}

/// Interaction-picture Hamiltonian of one excitation block at coupling
/// `om = omega/2` and detuning phase `theta`.
fn two_atom_block_h(
    states: &[(TwoAtomLevel, usize)],
    m: usize,
    om: f64,
    theta: f64,
) -> Array2<C64> {
    let k = states.len();
    let mut h = Array2::<C64>::zeros((k, k));
    let up = C64::from_polar(1.0, theta);
    let pos = |l: TwoAtomLevel| states.iter().position(|&(s, _)| s == l);
    let pairs = [
        (TwoAtomLevel::Gg, TwoAtomLevel::Ge, (m as f64).sqrt()),
        (TwoAtomLevel::Gg, TwoAtomLevel::Eg, (m as f64).sqrt()),
        (TwoAtomLevel::Ge, TwoAtomLevel::Ee, ((m.max(1) - 1) as f64).sqrt()),
        (TwoAtomLevel::Eg, TwoAtomLevel::Ee, ((m.max(1) - 1) as f64).sqrt()),
    ];
    for (lo, hi, root) in pairs {
        if let (Some(i), Some(j)) = (pos(lo), pos(hi)) {
            let val = C64::new(0.0, -om * root) * up;
            h[[j, i]] = val;
            h[[i, j]] = val.conj();
        }
    }
    h
}

/// Numerically exact propagator of two atoms crossing the cavity together
/// with identical coupling and detuning, on atom1 (x) atom2 (x) field with
/// atom basis order (e, g).
pub fn two_atom_propagator(
    detuning: &DetuningProfile,
    profile: &CouplingProfile,
    v: f64,
    space: &FockSpace,
) -> Result<Array2<C64>> {
    let dim = space.dim;
    let (t1, t2) = (detuning.start(), detuning.end());
    let sched = detuning.compile();
    let omega_scale = profile.omega0 * (dim as f64).sqrt();
    let rate = omega_scale + sched.max_abs_delta() + v / profile.w;
    let mut n_target = (((t2 - t1) * rate / 0.8).ceil() as usize).clamp(64, 16384);
    let blocks: Vec<Vec<(TwoAtomLevel, usize)>> =
        (0..=dim + 1).map(|m| two_atom_block(m, dim)).collect();
    let mut prev: Option<Vec<Array2<C64>>> = None;
    let evolved = loop {
        let steps = integration_steps(t1, t2, v, profile, detuning, (t2 - t1) / n_target as f64);
        let nodes: Vec<(f64, f64, f64, f64, f64)> = steps
            .iter()
            .map(|&(t0, h)| {
                let ta = t0 + (0.5 - GAUSS_OFFSET) * h;
                let tb = t0 + (0.5 + GAUSS_OFFSET) * h;
                (
                    h,
                    0.5 * profile.omega(v * ta),
                    sched.phase(ta),
                    0.5 * profile.omega(v * tb),
                    sched.phase(tb),
                )
            })
            .collect();
        let mut us = Vec::with_capacity(blocks.len());
        for (m, states) in blocks.iter().enumerate() {
            let k = states.len();
            let mut u = Array2::<C64>::eye(k);
            if k > 1 {
                for &(h, oa, pa, ob, pb) in &nodes {
                    let h1 = two_atom_block_h(states, m, oa, pa);
                    let h2 = two_atom_block_h(states, m, ob, pb);
                    let comm = h1.dot(&h2) - h2.dot(&h1);
                    let mm = (&h1 + &h2).mapv(|z| z * C64::new(0.5 * h, 0.0))
                        + comm.mapv(|z| z * C64::new(0.0, SQRT3 / 12.0 * h * h));
                    u = linalg::exp_ih(&mm, 1.0).dot(&u);
                }
            }
            us.push(u);
        }
        if let Some(p) = &prev {
            let mut d: f64 = 0.0;
            for (a, b) in p.iter().zip(us.iter()) {
                d = d.max(linalg::max_abs_diff(a, b));
            }
            if d < REFINEMENT_TOL {
                break us;
            }
        }
        if steps.len() >= MAX_STEPS {
            return Err(Error::IntegrationFailure(format!(
                "two-atom integration did not reach {REFINEMENT_TOL:.0e} within {MAX_STEPS} steps"
            )));
        }
        prev = Some(us);
        n_target *= 2;
    };
    let theta2 = sched.phase(t2);
    let mut u = Array2::<C64>::zeros((4 * dim, 4 * dim));
    for (m, states) in blocks.iter().enumerate() {
        let ub = &evolved[m];
        for (i, &(li, ni)) in states.iter().enumerate() {
            let lab = match li {
                TwoAtomLevel::Gg => C64::from_polar(1.0, theta2),
                TwoAtomLevel::Ee => C64::from_polar(1.0, -theta2),
                _ => C64::new(1.0, 0.0),
            };
            for (j, &(lj, nj)) in states.iter().enumerate() {
                u[[two_atom_index(li, ni, dim), two_atom_index(lj, nj, dim)]] = lab * ub[[i, j]];
            }
        }
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{tensor_op, FockSpace};
    use crate::linalg::{max_abs_diff, unitarity_defect};
    use ndarray::Array2;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::function::erf::erf;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    /// Dense joint Hamiltonian built from ladder operators only, blind to
    /// the Bloch-sphere structure the propagators exploit.
    fn dense_h(delta: f64, omega: f64, space: &FockSpace) -> Array2<C64> {
        let a = space.annihilation();
        let ad = space.creation();
        let sz = ndarray::arr2(&[[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-1.0, 0.0)]]);
        let ge = ndarray::arr2(&[[c(0.0, 0.0), c(0.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]]);
        let eg = ndarray::arr2(&[[c(0.0, 0.0), c(1.0, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]]);
        let iu = c(0.0, 1.0);
        tensor_op(&sz, &space.identity()).mapv(|z| z * 0.5 * delta)
            + tensor_op(&ge, &ad).mapv(|z| z * iu * 0.5 * omega)
            + tensor_op(&eg, &a).mapv(|z| z * (-iu) * 0.5 * omega)
    }

    /// Classic fixed-step RK4 for dU/dt = -i H(delta(t), t) U,
    /// structure-blind. The grid is aligned with the detuning switches and
    /// delta is evaluated within the current segment, so the oracle never
    /// samples H across a discontinuity.
    fn rk4_propagator<F: Fn(f64, f64) -> Array2<C64>>(
        h_of: F,
        detuning: &DetuningProfile,
        steps: usize,
        dim: usize,
    ) -> Array2<C64> {
        let sched = detuning.compile();
        let mut u = Array2::<C64>::eye(dim);
        let span = detuning.end() - detuning.start();
        let mi = c(0.0, -1.0);
        for seg in &sched.segs {
            let n = ((seg.end - seg.start) / span * steps as f64).ceil().max(1.0) as usize;
            let h = (seg.end - seg.start) / n as f64;
            let eval = |t: f64| h_of(seg.delta(t), t);
            for k in 0..n {
                let t = seg.start + k as f64 * h;
                let k1 = eval(t).dot(&u).mapv(|z| z * mi);
                let k2 = eval(t + 0.5 * h)
                    .dot(&(&u + &k1.mapv(|z| z * 0.5 * h)))
                    .mapv(|z| z * mi);
                let k3 = eval(t + 0.5 * h)
                    .dot(&(&u + &k2.mapv(|z| z * 0.5 * h)))
                    .mapv(|z| z * mi);
                let k4 = eval(t + h)
                    .dot(&(&u + &k3.mapv(|z| z * h)))
                    .mapv(|z| z * mi);
                u = &u + &(k1 + k2.mapv(|z| z * 2.0) + k3.mapv(|z| z * 2.0) + k4)
                    .mapv(|z| z * h / 6.0);
            }
        }
        u
    }

    fn sqrt_table(angle: f64, dim: usize) -> Vec<f64> {
        (0..=dim).map(|n| angle * (n as f64).sqrt()).collect()
    }

    #[test]
    fn rot_z_inverse_combines_to_identity() {
        let space = FockSpace::new(7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f: Vec<f64> = (0..=7).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let nf: Vec<f64> = f.iter().map(|x| -x).collect();
        let prod = rot_z(&f, &space).dot(&rot_z(&nf, &space));
        assert!(max_abs_diff(&prod, &space_eye(&space)) < 1e-14);
    }

    fn space_eye(space: &FockSpace) -> Array2<C64> {
        Array2::<C64>::eye(2 * space.dim)
    }

    #[test]
    fn rot_y_half_turn_flips_first_sphere() {
        let space = FockSpace::new(5).unwrap();
        let f = sqrt_table(PI, 5);
        let u = rot_y(&f, &space);
        // |g,1> sits at index dim+1 and must map onto -|e,0>
        let dim = 5;
        for row in 0..2 * dim {
            let expect = if row == 0 { c(-1.0, 0.0) } else { c(0.0, 0.0) };
            assert!((u[[row, dim + 1]] - expect).norm() < 1e-14);
        }
    }

    #[test]
    fn rotations_are_unitary() {
        let space = FockSpace::new(9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let f: Vec<f64> = (0..=9).map(|_| rng.gen_range(-6.0..6.0)).collect();
            assert!(unitarity_defect(&rot_x(&f, &space)) < 1e-12);
            assert!(unitarity_defect(&rot_y(&f, &space)) < 1e-12);
            assert!(unitarity_defect(&rot_z(&f, &space)) < 1e-12);
        }
    }

    #[test]
    fn rot_x_matches_dressed_basis_change() {
        // the change from bare to dressed levels at mixing angles xi_n is a
        // rotation around X by -xi_n; build it explicitly for spheres B_0, B_1
        let space = FockSpace::new(3).unwrap();
        let dim = 3;
        let profile = CouplingProfile::default();
        let delta = 1.7e5;
        let om = profile.omega(0.3 * profile.w);
        let xi: Vec<f64> = (0..=dim).map(|n| (om * (n as f64).sqrt() / delta).atan()).collect();
        let mut v = Array2::<C64>::zeros((2 * dim, 2 * dim));
        v[[dim, dim]] = c(1.0, 0.0);
        v[[dim - 1, dim - 1]] = c(1.0, 0.0);
        for n in 0..dim - 1 {
            let (e, g) = (n, dim + n + 1);
            let half = 0.5 * xi[n + 1];
            // dressed minus-state over |g,n+1>, plus-state over |e,n>
            v[[g, g]] = c(half.cos(), 0.0);
            v[[e, g]] = c(0.0, half.sin());
            v[[g, e]] = c(0.0, half.sin());
            v[[e, e]] = c(half.cos(), 0.0);
        }
        let minus_xi: Vec<f64> = xi.iter().map(|x| -x).collect();
        assert!(max_abs_diff(&rot_x(&minus_xi, &space), &v) < 1e-14);
    }

    #[test]
    fn zero_length_resonant_window_is_identity() {
        let space = FockSpace::new(6).unwrap();
        let profile = CouplingProfile::default();
        let q = InteractionParams {
            t1: 0.0,
            t2: 0.0,
            v: 70.0,
            delta0: 0.0,
        };
        let (u, theta) = resonant_propagator(&q, &profile, &space);
        assert_eq!(theta, 0.0);
        assert!(max_abs_diff(&u, &space_eye(&space)) < 1e-15);
    }

    #[test]
    fn symmetric_pulse_area_matches_error_function_form() {
        let profile = CouplingProfile::default();
        let v = 70.0;
        let t_r = 1.5e-4; // stays inside the envelope cutoff
        let area = profile.pulse_area(v, -0.5 * t_r, 0.5 * t_r);
        let closed = profile.omega0 * (profile.w / v) * PI.sqrt() * erf(v * t_r / (2.0 * profile.w));
        assert!((area - closed).abs() < 1e-9 * closed);
    }

    #[test]
    fn resonant_window_inverts_pulse_area() {
        let profile = CouplingProfile::default();
        let v = 70.0;
        let t_r = resonant_window(&profile, v, PI / 2.0).unwrap();
        let area = profile.pulse_area(v, -0.5 * t_r, 0.5 * t_r);
        assert!((area - PI / 2.0).abs() < 1e-10);
    }

    #[test]
    fn exact_propagator_is_identity_outside_the_mode() {
        // a window placed entirely beyond the envelope cutoff, at zero
        // detuning, leaves every level untouched
        let space = FockSpace::new(8).unwrap();
        let profile = CouplingProfile::default();
        let start = 10.0 * profile.w / 70.0;
        let det = DetuningProfile::constant(start, start * 1.1, 0.0).unwrap();
        let u = exact_propagator(&det, &profile, 70.0, &space).unwrap();
        assert!(max_abs_diff(&u, &space_eye(&space)) < 1e-12);
    }

    #[test]
    fn exact_propagator_reproduces_constant_coupling_rabi() {
        // an effectively flat envelope turns the window into a constant-
        // coupling resonant interaction with pulse area omega0 * t
        let space = FockSpace::new(7).unwrap();
        let profile = CouplingProfile {
            omega0: 2.0 * PI * 50e3,
            w: 1e3,
            cutoff_factor: 1.5,
        };
        let t = 6e-6;
        let det = DetuningProfile::constant(-0.5 * t, 0.5 * t, 0.0).unwrap();
        let u = exact_propagator(&det, &profile, 70.0, &space).unwrap();
        let f = sqrt_table(profile.omega0 * t, 7);
        assert!(max_abs_diff(&u, &rot_y(&f, &space)) < 1e-8);
    }

    #[test]
    fn exact_propagator_matches_resonant_analytic_over_full_transit() {
        let space = FockSpace::new(12).unwrap();
        let profile = CouplingProfile::default();
        let v = 70.0;
        let t = profile.transit_time(v);
        let det = DetuningProfile::constant(-0.5 * t, 0.5 * t, 0.0).unwrap();
        let u = exact_propagator(&det, &profile, v, &space).unwrap();
        let q = InteractionParams {
            t1: -0.5 * t,
            t2: 0.5 * t,
            v,
            delta0: 0.0,
        };
        let (ur, _) = resonant_propagator(&q, &profile, &space);
        assert!(max_abs_diff(&u, &ur) < 1e-6);
        assert!(unitarity_defect(&u) < 1e-8);
    }

    #[test]
    fn exact_propagator_agrees_with_structure_blind_rk4() {
        let space = FockSpace::new(6).unwrap();
        let profile = CouplingProfile::default();
        let v = 70.0;
        let t_total = profile.transit_time(v);
        let t_r = resonant_window(&profile, v, PI / 2.0).unwrap();
        let delta0 = 2.2 * profile.omega(v * t_r * 0.5);
        let det = DetuningProfile::composite(t_total, t_r, delta0).unwrap();
        let u = exact_propagator(&det, &profile, v, &space).unwrap();
        let oracle = rk4_propagator(
            |delta, t| dense_h(delta, profile.omega(v * t), &space),
            &det,
            40_000,
            2 * 6,
        );
        assert!(max_abs_diff(&u, &oracle) < 1e-7, "diff = {:.3e}", max_abs_diff(&u, &oracle));
    }

    #[test]
    fn exact_propagator_handles_rise_time_detuning() {
        // exponential switch relaxation against the structure-blind oracle
        let space = FockSpace::new(5).unwrap();
        let profile = CouplingProfile::default();
        let v = 70.0;
        let t_total = profile.transit_time(v);
        let t_r = resonant_window(&profile, v, PI / 2.0).unwrap();
        let delta0 = 2.2 * profile.omega(v * t_r * 0.5);
        let det = DetuningProfile::composite(t_total, t_r, delta0)
            .unwrap()
            .with_rise_time(200e-9);
        let u = exact_propagator(&det, &profile, v, &space).unwrap();
        let oracle = rk4_propagator(
            |delta, t| dense_h(delta, profile.omega(v * t), &space),
            &det,
            40_000,
            2 * 5,
        );
        assert!(max_abs_diff(&u, &oracle) < 1e-7, "diff = {:.3e}", max_abs_diff(&u, &oracle));
    }

    #[test]
    fn adiabatic_propagator_in_zero_coupling_window_is_free_phase() {
        let space = FockSpace::new(6).unwrap();
        let profile = CouplingProfile::default();
        let v = 70.0;
        let start = 5.0 * profile.w / v;
        let q = InteractionParams {
            t1: start,
            t2: start + 2e-5,
            v,
            delta0: 3e5,
        };
        let u = adiabatic_propagator(&q, &profile, &space);
        let phase = q.delta0 * (q.t2 - q.t1);
        let f = vec![phase; 7];
        let expected = rot_z(&f, &space);
        assert!(max_abs_diff(&u, &expected) < 1e-12);
    }

    #[test]
    fn adiabatic_propagator_reaches_dispersive_limit() {
        // at very large detuning the window reduces to a pure Z rotation
        // with a phase linear in the photon number
        let space = FockSpace::new(10).unwrap();
        let profile = CouplingProfile::default();
        let v = 70.0;
        let t_r = resonant_window(&profile, v, PI / 2.0).unwrap();
        let t_total = profile.transit_time(v);
        let delta0 = 1e4 * profile.omega0;
        let q = InteractionParams {
            t1: -0.5 * t_total,
            t2: -0.5 * t_r,
            v,
            delta0,
        };
        let u = adiabatic_propagator(&q, &profile, &space);
        let sq = |t: f64| {
            let om = profile.omega(v * t);
            om * om
        };
        let phi_gamma =
            quad::adaptive_simpson(&sq, q.t1, q.t2, 1e-4) / (2.0 * delta0);
        let phi_zeta = delta0 * (q.t2 - q.t1);
        let f: Vec<f64> = (0..=10).map(|n| phi_gamma * n as f64 + phi_zeta).collect();
        let mut expected = rot_z(&f, &space);
        expected[[9, 9]] = C64::from_polar(1.0, -0.5 * phi_zeta);
        assert!(max_abs_diff(&u, &expected) < 1e-3);
    }

    #[test]
    fn adiabatic_propagator_tracks_exact_integration() {
        let space = FockSpace::new(12).unwrap();
        let profile = CouplingProfile::default();
        let v = 70.0;
        let t_r = resonant_window(&profile, v, PI / 2.0).unwrap();
        let t_total = profile.transit_time(v);
        let delta0 = 10.0 * profile.omega0;
        let q = InteractionParams {
            t1: -0.5 * t_total,
            t2: -0.5 * t_r,
            v,
            delta0,
        };
        let u = adiabatic_propagator(&q, &profile, &space);
        let det = DetuningProfile::constant(q.t1, q.t2, delta0).unwrap();
        let exact = exact_propagator(&det, &profile, v, &space).unwrap();
        assert!(max_abs_diff(&u, &exact) < 1e-3, "diff = {:.3e}", max_abs_diff(&u, &exact));
    }

    #[test]
    fn adiabaticity_margin_examples() {
        let profile = CouplingProfile::default();
        // creeping atoms follow the dressed levels trivially
        let slow = InteractionParams {
            t1: -1.0,
            t2: 1.0,
            v: 0.01,
            delta0: 1e5,
        };
        assert!(adiabaticity_margin(&slow, &profile, 0) > 0.0);
        // the margin shrinks with the photon number
        let v = 70.0;
        let t_r = resonant_window(&profile, v, PI / 2.0).unwrap();
        let delta0 = 2.2 * profile.omega(v * t_r * 0.5);
        let q = InteractionParams {
            t1: -0.5 * profile.transit_time(v),
            t2: -0.5 * t_r,
            v,
            delta0,
        };
        let margins: Vec<f64> = (0..=20).map(|n| adiabaticity_margin(&q, &profile, n)).collect();
        for w in margins.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        // and stays positive at the default operating point
        assert!(adiabaticity_margin(&q, &profile, 3) > 0.0);
    }

    fn operating_point(
        profile: &CouplingProfile,
        v: f64,
        ratio: f64,
    ) -> (InteractionParams, InteractionParams, InteractionParams) {
        let t_r = resonant_window(profile, v, PI / 2.0).unwrap();
        let delta0 = ratio * profile.omega(v * t_r * 0.5);
        composite_windows(profile.transit_time(v), t_r, v, delta0)
    }

    #[test]
    fn composite_angles_collapse_without_mixing() {
        // at enormous detuning the switch mixing vanishes, the effective
        // rotation reduces to the resonant one and the correction to zero
        let space = FockSpace::new(8).unwrap();
        let profile = CouplingProfile::default();
        let (d1, r, d2) = operating_point(&profile, 70.0, 1e6);
        let (_, angles) = composite_analytic(&d1, &r, &d2, &profile, &space);
        for n in 0..=8 {
            assert!((angles.theta_c_n[n] - angles.theta_r_n[n]).abs() < 1e-5);
            assert!(angles.chi_c_n[n].abs() < 1e-5);
        }
    }

    #[test]
    fn composite_angles_without_resonant_window_double_the_mixing() {
        let space = FockSpace::new(8).unwrap();
        let profile = CouplingProfile::default();
        let v = 70.0;
        let delta0 = 2.2 * profile.omega0;
        let (d1, r, d2) = composite_windows(profile.transit_time(v), 0.0, v, delta0);
        let (_, angles) = composite_analytic(&d1, &r, &d2, &profile, &space);
        for n in 0..=8 {
            assert!((angles.theta_c_n[n] - 2.0 * angles.xi_n[n]).abs() < 1e-12);
        }
    }

    #[test]
    fn composite_factorizations_agree() {
        let space = FockSpace::new(20).unwrap();
        let profile = CouplingProfile::default();
        let (d1, r, d2) = operating_point(&profile, 70.0, 2.2);
        let (u, angles) = composite_analytic(&d1, &r, &d2, &profile, &space);
        // five-factor dressed form
        let minus_phi: Vec<f64> = angles.phi_n.iter().map(|&p| -p).collect();
        let minus_xi: Vec<f64> = angles.xi_n.iter().map(|&x| -x).collect();
        let five = rot_z(&minus_phi, &space)
            .dot(&rot_x(&minus_xi, &space))
            .dot(&rot_y(&angles.theta_r_n, &space))
            .dot(&rot_x(&minus_xi, &space))
            .dot(&rot_z(&angles.phi_n, &space));
        assert!(max_abs_diff(&u, &five) < 1e-10);
        // frame-generator form
        let h = kerr_frame_generator(&angles.phi_c_n);
        let frame = tensor_op(&Array2::<C64>::eye(2), &space.number_phase(&h[..space.dim]));
        let conj = frame
            .dot(&rot_y(&angles.theta_c_n, &space))
            .dot(&crate::linalg::dagger(&frame));
        assert!(max_abs_diff(&u, &conj) < 1e-10);
    }

    #[test]
    fn kerr_frame_of_linear_phases_is_quadratic() {
        let (pg, pz) = (0.37, -1.21);
        let phi_c: Vec<f64> = (0..=12).map(|n| pg * n as f64 + pz).collect();
        let h = kerr_frame_generator(&phi_c);
        for (n, &hn) in h.iter().enumerate() {
            let nf = n as f64;
            let expected = pg * (nf * nf + nf) / 2.0 + pz * nf;
            assert!((hn - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn frame_conjugation_identity_holds_for_random_phase_tables() {
        let space = FockSpace::new(9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let phi_c: Vec<f64> = (0..=9).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let theta: Vec<f64> = (0..=9).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            let minus_phi: Vec<f64> = phi_c.iter().map(|&p| -p).collect();
            let direct = rot_z(&minus_phi, &space)
                .dot(&rot_y(&theta, &space))
                .dot(&rot_z(&phi_c, &space));
            let h = kerr_frame_generator(&phi_c);
            let frame = tensor_op(&Array2::<C64>::eye(2), &space.number_phase(&h[..space.dim]));
            let conj = frame.dot(&rot_y(&theta, &space)).dot(&crate::linalg::dagger(&frame));
            assert!(max_abs_diff(&direct, &conj) < 1e-10);
        }
    }

    #[test]
    fn effective_rotation_angles_approach_half_turn() {
        // the mixing angle envelope cos(xi_n) bounds |cos(theta_c_n/2)| and
        // shrinks monotonically, forcing theta_c toward pi and keeping the
        // sequence clear of trapping angles
        let space = FockSpace::new(40).unwrap();
        let profile = CouplingProfile::default();
        let (d1, r, d2) = operating_point(&profile, 70.0, 2.2);
        let (_, angles) = composite_analytic(&d1, &r, &d2, &profile, &space);
        for n in 1..=40 {
            let bound = angles.xi_n[n].cos();
            assert!((0.5 * angles.theta_c_n[n]).cos().abs() <= bound + 1e-12);
            if n > 1 {
                assert!(angles.xi_n[n] > angles.xi_n[n - 1]);
            }
        }
        let tail: Vec<f64> = (1..=40)
            .map(|n| (angles.theta_c_n[n] - PI).abs())
            .collect();
        let mut running = f64::NEG_INFINITY;
        for d in tail.iter().rev() {
            running = running.max(*d);
            // the worst distance to pi over the tail never grows with n
            assert!(*d <= running + 1e-12);
        }
        assert!((angles.theta_c_n[40] - PI).abs() < 0.5);
    }

    #[test]
    fn calibrated_velocity_hits_the_documented_operating_point() {
        let profile = CouplingProfile::default();
        let v = calibrate_velocity(&profile, 2.2, PI / 2.0, 2.96, PI).unwrap();
        assert!((v - 70.0).abs() < 2.0, "calibrated v = {v}");
        // the slope really is pi there
        let (d1, r, _) = operating_point(&profile, v, 2.2);
        let angles = composite_angle_tables(&d1, &r, &profile, 5);
        assert!((phase_slope_at(&angles.phi_c_n, 2.96) - PI).abs() < 1e-3);
    }

    #[test]
    fn stronger_detuning_calibrates_to_slower_atoms() {
        let profile = CouplingProfile::default();
        let v22 = calibrate_velocity(&profile, 2.2, PI / 2.0, 2.96, PI).unwrap();
        let v10 = calibrate_velocity(&profile, 10.0, PI / 2.0, 2.96, PI).unwrap();
        assert!(v10 < v22);
        // doubling the requested slope roughly halves the velocity scale
        let v2pi = calibrate_velocity(&profile, 2.2, PI / 2.0, 2.96, 2.0 * PI).unwrap();
        assert!(v2pi < 0.7 * v22);
    }

    #[test]
    fn two_atom_zero_coupling_is_pure_phase() {
        let space = FockSpace::new(4).unwrap();
        let profile = CouplingProfile::default();
        let v = 70.0;
        let start = 5.0 * profile.w / v;
        let delta = 2.7e5;
        let det = DetuningProfile::constant(start, start + 3e-5, delta).unwrap();
        let u = two_atom_propagator(&det, &profile, v, &space).unwrap();
        let theta = delta * 3e-5;
        let mut expected = Array2::<C64>::zeros((16, 16));
        for n in 0..4 {
            expected[[n, n]] = C64::from_polar(1.0, -theta); // |ee,n>
            expected[[4 + n, 4 + n]] = c(1.0, 0.0);
            expected[[8 + n, 8 + n]] = c(1.0, 0.0);
            expected[[12 + n, 12 + n]] = C64::from_polar(1.0, theta); // |gg,n>
        }
        assert!(max_abs_diff(&u, &expected) < 1e-10);
    }

    #[test]
    fn two_atoms_share_excitation_at_enhanced_rabi_frequency() {
        // in the single-excitation sector the pair couples like one atom
        // with coupling scaled by sqrt(2); check against a hand-built
        // three-level oracle
        let space = FockSpace::new(5).unwrap();
        let profile = CouplingProfile {
            omega0: 2.0 * PI * 50e3,
            w: 1e3,
            cutoff_factor: 1.5,
        };
        let t = 7.3e-6;
        let det = DetuningProfile::constant(0.0, t, 0.0).unwrap();
        let u = two_atom_propagator(&det, &profile, 70.0, &space).unwrap();
        // oracle: H restricted to {|gg,1>, |ge,0>, |eg,0>} with coupling
        // -i omega/2 from |gg,1> to each singly excited state
        let om = profile.omega0;
        let h3 = ndarray::arr2(&[
            [c(0.0, 0.0), c(0.0, 0.5 * om), c(0.0, 0.5 * om)],
            [c(0.0, -0.5 * om), c(0.0, 0.0), c(0.0, 0.0)],
            [c(0.0, -0.5 * om), c(0.0, 0.0), c(0.0, 0.0)],
        ]);
        let u3 = linalg::exp_ih(&h3, t);
        let dim = 5;
        let idx = [3 * dim + 1, 2 * dim, dim]; // |gg,1>, |ge,0>, |eg,0>
        for (i, &gi) in idx.iter().enumerate() {
            for (j, &gj) in idx.iter().enumerate() {
                assert!(
                    (u[[gi, gj]] - u3[[i, j]]).norm() < 1e-7,
                    "element ({i},{j}) differs"
                );
            }
        }
        // the population returns to |gg,1> with cos^2 at sqrt(2)-enhanced rate
        let p = u[[3 * dim + 1, 3 * dim + 1]].norm_sqr();
        let expected = (0.5 * 2f64.sqrt() * om * t).cos().powi(2);
        assert!((p - expected).abs() < 1e-7);
    }

    #[test]
    fn two_atom_propagator_is_unitary_on_composite_profile() {
        let space = FockSpace::new(6).unwrap();
        let profile = CouplingProfile::default();
        let v = 70.0;
        let t_total = profile.transit_time(v);
        let t_r = resonant_window(&profile, v, PI / 2.0).unwrap();
        let delta0 = 2.2 * profile.omega(v * t_r * 0.5);
        let det = DetuningProfile::composite(t_total, t_r, delta0).unwrap();
        let u = two_atom_propagator(&det, &profile, v, &space).unwrap();
        assert!(unitarity_defect(&u) < 1e-8);
    }

    #[test]
    fn exact_propagator_matches_time_independent_exponentials() {
        // a flat envelope makes H piecewise constant, so the propagator is
        // a product of matrix exponentials
        let space = FockSpace::new(4).unwrap();
        let profile = CouplingProfile {
            omega0: 2.0 * PI * 50e3,
            w: 1e3,
            cutoff_factor: 1.5,
        };
        let t = 4.3e-6;
        let delta = 4.0e5;
        let hp = dense_h(delta, profile.omega0, &space);
        let det = DetuningProfile::constant(0.0, t, delta).unwrap();
        let u = exact_propagator(&det, &profile, 70.0, &space).unwrap();
        assert!(max_abs_diff(&u, &linalg::exp_ih(&hp, t)) < 1e-10);
        let det2 =
            DetuningProfile::piecewise(&[(0.0, 0.5 * t, delta), (0.5 * t, t, -delta)]).unwrap();
        let u2 = exact_propagator(&det2, &profile, 70.0, &space).unwrap();
        let hm = dense_h(-delta, profile.omega0, &space);
        let direct = linalg::exp_ih(&hm, 0.5 * t).dot(&linalg::exp_ih(&hp, 0.5 * t));
        assert!(max_abs_diff(&u2, &direct) < 1e-10);
    }

    #[test]
    fn detuning_profile_rejects_gaps() {
        assert!(DetuningProfile::piecewise(&[(0.0, 1.0, 1.0), (1.5, 2.0, -1.0)]).is_err());
        assert!(DetuningProfile::piecewise(&[(0.0, 0.0, 1.0)]).is_err());
        assert!(DetuningProfile::piecewise(&[]).is_err());
    }
}
