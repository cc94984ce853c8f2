//! Coupled stochastic equations of motion for the atom and the mode amplitudes.
//!
//! ```text
//! dr/dt     = p / M
//! dp/dt     = -U0 sum_mn grad(u_m u_n^*) a_m a_n^* + i gamma sum_mn (u_m grad u_n^* - u_n^* grad u_m) a_m a_n^* + chi
//! da_m/dt   = eta_m + (i Delta - kappa) a_m - (i U0 + gamma) u_m sum_n u_n^* a_n + xi_m
//! ```
//!
//! The atom moves in the transverse plane at `z = 0`.
//!
//! Noise model (a modelling choice, configurable through [`NoiseConfig`]):
//! momentum increments per axis have variance `(hbar k)^2 gamma |E0|^2 dt`,
//! and each amplitude receives complex increments with `<|d xi|^2> = kappa dt`.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modes::{ModeSet, Point};
use crate::params::SystemParams;
use crate::steady::{empty_cavity, FieldState};

/// Largest admissible integration step, in `1/kappa`.
pub const MAX_DT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AtomState {
    /// position in waists
    pub r: [f64; 2],
    /// momentum in `M w0 kappa`
    pub p: [f64; 2],
}

impl AtomState {
    pub fn point(&self) -> Point {
        Point::xy(self.r[0], self.r[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub enabled: bool,
    pub momentum_diffusion_scale: f64,
    pub field_noise_scale: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            momentum_diffusion_scale: 1.0,
            field_noise_scale: 1.0,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn off() -> Self {
        Self {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.momentum_diffusion_scale >= 0.0 && self.field_noise_scale >= 0.0) {
            return Err(Error::invalid("noise scales must be non-negative"));
        }
        Ok(())
    }
}

/// Field at the atom and its gradient: `A = sum u_m a_m`, `G = sum grad(u_m) a_m`.
fn local_sums(set: &ModeSet, pt: Point, alpha: &[C64]) -> (C64, [C64; 2]) {
    let mut a = C64::new(0.0, 0.0);
    let mut g = [C64::new(0.0, 0.0); 2];
    for (f, al) in set.mode_vector(pt).iter().zip(alpha) {
        a += f.value * al;
        g[0] += f.grad[0] * al;
        g[1] += f.grad[1] * al;
    }
    (a, g)
}

/// Optical force in units of `hbar kappa / w0`, before the imaginary part is
/// discarded.
///
/// Both double sums factor through `A` and `G`:
/// `sum grad(u_m u_n^*) a_m a_n^* = G A^* + A G^*` and
/// `sum (u_m grad u_n^* - u_n^* grad u_m) a_m a_n^* = A G^* - A^* G`.
pub fn force_complex(set: &ModeSet, params: &SystemParams, pt: Point, field: &FieldState) -> [C64; 2] {
    let (a, g) = local_sums(set, pt, &field.alpha);
    let u0 = params.u0();
    let gamma = params.gamma_sc();
    let i = C64::new(0.0, 1.0);
    let mut out = [C64::new(0.0, 0.0); 2];
    for k in 0..2 {
        let reactive = g[k] * a.conj() + a * g[k].conj();
        let dissipative = a * g[k].conj() - a.conj() * g[k];
        out[k] = -u0 * reactive + i * gamma * dissipative;
    }
    out
}

/// Optical force on the atom in internal units (`M w0 kappa^2`).
pub fn forces(set: &ModeSet, params: &SystemParams, atom: &AtomState, field: &FieldState) -> Result<[f64; 2]> {
    let f = force_complex(set, params, atom.point(), field);
    let magnitude = f[0].norm().max(f[1].norm());
    let imag = f[0].im.abs().max(f[1].im.abs());
    if imag > 1e-12 * magnitude.max(f64::MIN_POSITIVE) && imag > 1e-300 {
        return Err(Error::NonRealForce { imag, magnitude });
    }
    Ok([params.force_scale * f[0].re, params.force_scale * f[1].re])
}

/// Deterministic part of the amplitude equation.
pub fn field_derivative(set: &ModeSet, params: &SystemParams, atom: &AtomState, field: &FieldState) -> Vec<C64> {
    let u = set.values(atom.point());
    let e0: C64 = u.iter().zip(&field.alpha).map(|(v, a)| v.conj() * a).sum();
    let lin = C64::new(-params.kappa, params.delta);
    let c = params.coupling();
    field
        .alpha
        .iter()
        .zip(&u)
        .zip(&params.eta)
        .map(|((a, v), e)| e + lin * a - c * v * e0)
        .collect()
}

/// Full simulation state.
///
/// `field` is one stochastic sample of the cavity amplitudes and drives the
/// atom. Given the atom's path the field equation is linear and its noise is
/// vacuum-level, so the cavity is in a coherent state whose amplitude,
/// `coherent`, obeys the same equation without noise. Photodetection sees
/// `coherent`; counting the fluctuating sample as well would add the vacuum
/// fluctuations a second time on top of the shot noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub atom: AtomState,
    pub field: FieldState,
    pub coherent: FieldState,
}

impl SimState {
    /// State at `t = 0` with the sample and coherent amplitudes equal.
    pub fn new(atom: AtomState, field: FieldState) -> Self {
        Self {
            t: 0.0,
            atom,
            coherent: field.clone(),
            field,
        }
    }
}

/// Holds the atom or the field fixed; used for relaxation and conservation checks.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Clamp {
    pub atom: bool,
    pub field: bool,
}

/// Split-step integrator with its own random stream.
///
/// The field is advanced by exponential Euler: the linear part
/// `e^{(i Delta - kappa) dt}` is exact and the remaining drive is held
/// constant across the step, so a stationary field stays stationary. The
/// atom then takes a symplectic Euler step (momentum first, using the
/// force from the start of the step).
pub struct Integrator<'a> {
    set: &'a ModeSet,
    params: &'a SystemParams,
    dt: f64,
    noise: NoiseConfig,
    clamp: Clamp,
    rng: ChaCha8Rng,
    decay: C64,
    phi1_dt: C64,
}

impl<'a> Integrator<'a> {
    pub fn new(set: &'a ModeSet, params: &'a SystemParams, dt: f64, noise: NoiseConfig) -> Result<Self> {
        if !(dt > 0.0 && dt <= MAX_DT) {
            return Err(Error::StepSize { dt, max: MAX_DT });
        }
        noise.validate()?;
        let lin = C64::new(-params.kappa, params.delta);
        let decay = (lin * dt).exp();
        Ok(Self {
            set,
            params,
            dt,
            noise,
            clamp: Clamp::default(),
            rng: ChaCha8Rng::seed_from_u64(noise.seed),
            decay,
            phi1_dt: (decay - 1.0) / lin,
        })
    }

    pub fn with_clamp(mut self, clamp: Clamp) -> Self {
        self.clamp = clamp;
        self
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn step(&mut self, state: &mut SimState) -> Result<()> {
        let pt = state.atom.point();
        let modes = self.set.mode_vector(pt);
        let force = if self.clamp.atom {
            [0.0; 2]
        } else {
            forces(self.set, self.params, &state.atom, &state.field)?
        };
        let field_at_atom = |alpha: &[C64]| -> C64 { modes.iter().zip(alpha).map(|(f, a)| f.value.conj() * a).sum() };
        let e0 = field_at_atom(&state.field.alpha);
        let e0_coherent = field_at_atom(&state.coherent.alpha);

        if !self.clamp.field {
            let c = self.params.coupling();
            let (decay, phi1_dt) = (self.decay, self.phi1_dt);
            let advance = |alpha: &mut [C64], e0: C64| {
                for ((a, f), eta) in alpha.iter_mut().zip(&modes).zip(&self.params.eta) {
                    let drive = eta - c * f.value * e0;
                    *a = decay * *a + phi1_dt * drive;
                }
            };
            advance(&mut state.field.alpha, e0);
            advance(&mut state.coherent.alpha, e0_coherent);
        }

        let mut kick = [0.0; 2];
        if self.noise.enabled {
            let field_sigma = (self.params.kappa * self.noise.field_noise_scale * self.dt / 2.0).sqrt();
            for k in 0..state.field.alpha.len() {
                let (re, im) = (self.normal(), self.normal());
                if !self.clamp.field {
                    state.field.alpha[k] += C64::new(re, im) * field_sigma;
                }
            }
            // spontaneous emission follows the mean excitation of the atom
            let var = self.momentum_diffusion(e0_coherent) * self.dt;
            let sigma = var.sqrt();
            kick = [sigma * self.normal(), sigma * self.normal()];
        }

        if !self.clamp.atom {
            for k in 0..2 {
                state.atom.p[k] += self.dt * force[k] + kick[k];
                state.atom.r[k] += self.dt * state.atom.p[k];
            }
        }
        state.t += self.dt;
        Ok(())
    }

    /// Momentum diffusion per axis `(hbar k)^2 gamma |E0|^2` in internal units.
    pub fn momentum_diffusion(&self, e0: C64) -> f64 {
        self.params.recoil * self.params.recoil
            * self.params.gamma_sc()
            * e0.norm_sqr()
            * self.noise.momentum_diffusion_scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    pub dt: f64,
    pub duration: f64,
    pub record_stride: usize,
    /// half-width of the square the atom must stay in, in waists
    pub bounding_box: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            dt: 0.01,
            duration: 5300.0,
            record_stride: 10,
            bounding_box: 5.0,
        }
    }
}

/// Sampled trajectory and field history.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<AtomState>,
    /// coherent cavity amplitudes, the field seen by the detector
    pub fields: Vec<FieldState>,
    pub noise: NoiseConfig,
    /// the atom left the bounding box and the run stopped early
    pub escaped: bool,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn span(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Position at time `t` by linear interpolation; `None` outside the record.
    pub fn position_at(&self, t: f64) -> Option<[f64; 2]> {
        let n = self.times.len();
        if n == 0 || t < self.times[0] || t > self.times[n - 1] {
            return None;
        }
        let i = self.times.partition_point(|&s| s <= t);
        if i == 0 {
            return Some(self.states[0].r);
        }
        if i >= n {
            return Some(self.states[n - 1].r);
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let w = (t - t0) / (t1 - t0);
        let (a, b) = (self.states[i - 1].r, self.states[i].r);
        Some([a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1])])
    }
}

/// Integrate from `initial` with the cavity in its empty steady state.
pub fn simulate(
    initial: AtomState,
    params: &SystemParams,
    set: &ModeSet,
    opts: &SimOptions,
    noise: NoiseConfig,
) -> Result<TrajectoryRecord> {
    if !(opts.duration > 0.0) {
        return Err(Error::invalid(format!("duration {} must be positive", opts.duration)));
    }
    if opts.record_stride == 0 {
        return Err(Error::invalid("record stride must be at least 1"));
    }
    if !initial.r.iter().chain(&initial.p).all(|v| v.is_finite()) {
        return Err(Error::invalid("initial atom state is not finite"));
    }
    let mut integ = Integrator::new(set, params, opts.dt, noise)?;
    let mut state = SimState::new(initial, empty_cavity(params, set));
    let n_steps = (opts.duration / opts.dt).round() as usize;
    let cap = n_steps / opts.record_stride + 1;
    let mut rec = TrajectoryRecord {
        times: Vec::with_capacity(cap),
        states: Vec::with_capacity(cap),
        fields: Vec::with_capacity(cap),
        noise,
        escaped: false,
    };
    let push = |rec: &mut TrajectoryRecord, s: &SimState| {
        rec.times.push(s.t);
        rec.states.push(s.atom);
        rec.fields.push(s.coherent.clone());
    };
    push(&mut rec, &state);
    for k in 1..=n_steps {
        integ.step(&mut state)?;
        // index-derived time avoids drift from repeated addition
        state.t = k as f64 * opts.dt;
        let outside = state.atom.r.iter().any(|c| c.abs() > opts.bounding_box);
        if k % opts.record_stride == 0 || outside {
            push(&mut rec, &state);
        }
        if outside {
            rec.escaped = true;
            break;
        }
        if !state.atom.r.iter().chain(&state.atom.p).all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("atom state diverged at t = {}", state.t)));
        }
    }
    Ok(rec)
}

/// Entry condition: the atom starts at `(x0, y0)` moving with `speed` m/s
/// in the direction `heading` (radians from +x).
pub fn entry_state(params: &SystemParams, x0: f64, y0: f64, speed: f64, heading: f64) -> AtomState {
    let v = params.velocity_from_si(speed);
    AtomState {
        r: [x0, y0],
        p: [v * heading.cos(), v * heading.sin()],
    }
}
