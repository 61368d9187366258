//! Pilot-wave trajectories of the signal particle.
//!
//! The particle rides the phase gradient of its guiding wave, `v = grad S / m`
//! in natural units (`m = 1`, `hbar = 1`). While the idler still carries
//! usable path information the guide is the single branch tied to the slit
//! of origin and the velocity field is radial, so trajectories are straight
//! lines. Once the idler has passed the erasing beamsplitter the guide
//! becomes the detector-selected two-branch combination and the familiar
//! wiggly interference trajectories appear. The switch between the two laws
//! is instantaneous, at the time the timeline declares.
//!
//! The idler is not integrated as a second particle: its branch membership
//! and its eraser outcome are kept as a discrete record that selects the
//! signal's effective guiding wave. The outcome is drawn from the Born
//! weight of the pair state at the configuration the signal occupies when
//! the idler passes the eraser; that correlation is what lets the
//! outcome-labeled subsets carry fringes while their union stays a clump.

use crate::error::{Error, Result};
use crate::geometry::{DetectorId, ExperimentGeometry, Slit, SOURCE_RADIUS_MIN};
use crate::stats::Histogram;
use crate::wave::{spherical_wave, Amplitude};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;

/// Particle mass in natural units.
pub const PARTICLE_MASS: f64 = 1.0;

/// Below this modulus a phase is considered undefined.
pub const PHASE_EPSILON: f64 = 1e-15;

/// Below this effective amplitude the guidance field is treated as a node.
pub const NODE_EPSILON: f64 = 1e-15;

/// Default central-difference step for the finite-difference velocity.
pub const FD_STEP: f64 = 1e-5;

/// Redraws allowed per ensemble slot before giving up on a configuration.
const MAX_LAUNCH_ATTEMPTS: usize = 64;

// ---------------------------------------------------------------------------
// Polar fields
// ---------------------------------------------------------------------------

/// A wavefunction value in polar form `amplitude * exp(i * phase)`.
///
/// Phases are kept continuous along evaluation paths by the callers; for
/// the point-source branches the natural phase `k*r` is already unwrapped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolarField {
    pub amplitude: f64,
    pub phase: f64,
}

impl PolarField {
    pub fn new(amplitude: f64, phase: f64) -> Self {
        PolarField { amplitude, phase }
    }

    /// Back to rectangular form.
    pub fn to_amplitude(self) -> Amplitude {
        Amplitude::from_polar(self.amplitude, self.phase)
    }
}

/// Wrap an angle difference into `(-pi, pi]`.
fn wrap_angle(x: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let w = x - tau * (x / tau).round();
    if w <= -std::f64::consts::PI {
        w + tau
    } else {
        w
    }
}

/// Continue `raw` onto the 2-pi branch nearest to `prev`.
pub fn unwrap_near(raw: f64, prev: f64) -> f64 {
    prev + wrap_angle(raw - prev)
}

/// Decompose a complex value into polar form.
///
/// With `prev_phase` the returned phase is unwrapped to the nearest 2-pi
/// branch so it varies continuously along a path. A modulus below
/// [`PHASE_EPSILON`] has no usable phase and is rejected.
pub fn polar_decompose(a: Amplitude, prev_phase: Option<f64>) -> Result<PolarField> {
    let amplitude = a.norm();
    if amplitude < PHASE_EPSILON {
        return Err(Error::PhaseUndefined { modulus: amplitude });
    }
    let raw = a.arg();
    let phase = match prev_phase {
        Some(prev) => unwrap_near(raw, prev),
        None => raw,
    };
    Ok(PolarField { amplitude, phase })
}

/// Signal and idler polar factors of one branch of the pair state.
#[derive(Clone, Copy, Debug)]
pub struct BranchPolar {
    pub signal: PolarField,
    pub idler: PolarField,
}

/// Squared modulus of a two-branch product state by the law of cosines:
/// `(R1 R1')^2 + (R2 R2')^2 + 2 R1 R1' R2 R2' cos(dphi)` with `dphi` the
/// difference of the summed branch phases.
pub fn two_particle_amplitude_sq(upper: &BranchPolar, lower: &BranchPolar) -> f64 {
    let a1 = upper.signal.amplitude * upper.idler.amplitude;
    let a2 = lower.signal.amplitude * lower.idler.amplitude;
    let dphi = (lower.signal.phase + lower.idler.phase)
        - (upper.signal.phase + upper.idler.phase);
    a1 * a1 + a2 * a2 + 2.0 * a1 * a2 * dphi.cos()
}

/// Phase of a two-branch product state (principal value in `(-pi, pi]`).
///
/// When one branch has zero weight this reduces to the other branch's
/// summed phase; when both vanish the phase is undefined.
pub fn two_particle_phase(upper: &BranchPolar, lower: &BranchPolar) -> Result<f64> {
    let a1 = upper.signal.amplitude * upper.idler.amplitude;
    let a2 = lower.signal.amplitude * lower.idler.amplitude;
    if a1 < PHASE_EPSILON && a2 < PHASE_EPSILON {
        return Err(Error::PhaseUndefined {
            modulus: a1.max(a2),
        });
    }
    let s1 = upper.signal.phase + upper.idler.phase;
    let s2 = lower.signal.phase + lower.idler.phase;
    Ok(f64::atan2(
        a1 * s1.sin() + a2 * s2.sin(),
        a1 * s1.cos() + a2 * s2.cos(),
    ))
}

// ---------------------------------------------------------------------------
// Configurations and trajectories
// ---------------------------------------------------------------------------

/// Output port of the erasing beamsplitter the idler is headed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EraserPort {
    D1,
    D2,
}

impl EraserPort {
    pub fn detector(self) -> DetectorId {
        match self {
            EraserPort::D1 => DetectorId::D1,
            EraserPort::D2 => DetectorId::D2,
        }
    }
}

/// What eventually happens to the idler.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IdlerFate {
    /// Reaches the eraser and exits toward the given detector.
    Eraser(EraserPort),
    /// Reflected by a which-path mirror into D3/D4.
    WhichPathDetector,
}

/// Progress of the idler along its arm, as far as the signal's guidance
/// is concerned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IdlerStage {
    PreEraser,
    PostEraserToD1,
    PostEraserToD2,
    AtWhichPathDetector,
}

/// Instantaneous configuration of the signal particle plus the discrete
/// idler record that selects its guiding wave.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Configuration {
    /// Signal position `(x, y)`; `x` is the propagation axis.
    pub signal_pos: [f64; 2],
    /// Slit the pair was created at; fixed along a trajectory.
    pub idler_branch: Slit,
    pub idler_stage: IdlerStage,
    pub time: f64,
}

/// The guidance law in force for a configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Regime {
    SingleBranch(Slit),
    Erased(EraserPort),
}

impl Configuration {
    fn regime(&self) -> Regime {
        match self.idler_stage {
            IdlerStage::PreEraser | IdlerStage::AtWhichPathDetector => {
                Regime::SingleBranch(self.idler_branch)
            }
            IdlerStage::PostEraserToD1 => Regime::Erased(EraserPort::D1),
            IdlerStage::PostEraserToD2 => Regime::Erased(EraserPort::D2),
        }
    }

    /// CSV token for the guidance law at this point.
    pub fn regime_label(&self) -> &'static str {
        match self.regime() {
            Regime::SingleBranch(_) => "which_path",
            Regime::Erased(EraserPort::D1) => "eraser_d1",
            Regime::Erased(EraserPort::D2) => "eraser_d2",
        }
    }
}

/// A time-ordered signal path with at most one jump of the guidance law.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub points: Vec<Configuration>,
    /// Time at which the guidance law jumped, if it did during the flight.
    pub regime_switch_time: Option<f64>,
}

impl Trajectory {
    pub fn start(&self) -> &Configuration {
        self.points.first().expect("trajectory has points")
    }

    pub fn endpoint(&self) -> &Configuration {
        self.points.last().expect("trajectory has points")
    }
}

/// When the idler reaches the deciding element, on the signal's clock.
///
/// `t_eraser` is the moment the idler passes the erasing beamsplitter (or
/// hits the which-path mirror when those are in). `t_screen` is the nominal
/// signal flight time `L * m / k`, kept for expressing switch times as
/// fractions of the flight; the actual flight ends when the trajectory
/// reaches the screen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Timeline {
    pub t_eraser: f64,
    pub t_screen: f64,
}

/// Nominal time for the signal to cross the apparatus: axial speed `k/m`
/// over the slit-screen distance.
pub fn nominal_flight_time(g: &ExperimentGeometry) -> f64 {
    g.screen_distance * PARTICLE_MASS / g.wave_number
}

impl Timeline {
    pub fn new(t_eraser: f64, g: &ExperimentGeometry) -> Self {
        Timeline {
            t_eraser,
            t_screen: nominal_flight_time(g),
        }
    }

    /// Idler passes the eraser before the signal starts moving.
    pub fn eraser_first(g: &ExperimentGeometry) -> Self {
        Self::new(0.0, g)
    }

    /// Idler reaches the eraser only after any signal arrival (the delayed
    /// configuration): the whole flight stays in the which-path regime.
    pub fn eraser_after_screen(g: &ExperimentGeometry) -> Self {
        let t = nominal_flight_time(g);
        Timeline {
            t_eraser: 10.0 * t,
            t_screen: t,
        }
    }

    /// Idler passes the eraser halfway through the nominal flight.
    pub fn mid_flight(g: &ExperimentGeometry) -> Self {
        let t = nominal_flight_time(g);
        Timeline {
            t_eraser: 0.5 * t,
            t_screen: t,
        }
    }
}

/// Default integration step: one thousandth of the nominal flight.
pub fn default_step(g: &ExperimentGeometry) -> f64 {
    1e-3 * nominal_flight_time(g)
}

// ---------------------------------------------------------------------------
// Guidance law
// ---------------------------------------------------------------------------

/// Eraser-output branch coefficients: the upper branch reaches D1 with two
/// reflections (`i`) and D2 with one reflection and a sign (`-1`), the
/// lower branch the other way around.
fn port_coefficients(port: EraserPort) -> (Amplitude, Amplitude) {
    let i = Amplitude::i();
    let minus = Amplitude::new(-1.0, 0.0);
    match port {
        EraserPort::D1 => (i, minus),
        EraserPort::D2 => (minus, i),
    }
}

fn branch_displacement(g: &ExperimentGeometry, slit: Slit, pos: [f64; 2]) -> Result<([f64; 2], f64)> {
    let d = [pos[0], pos[1] - g.slit_y(slit)];
    let r = d[0].hypot(d[1]);
    if r < SOURCE_RADIUS_MIN {
        return Err(Error::Domain(format!(
            "guidance evaluated within the source guard radius of the {slit:?} slit"
        )));
    }
    Ok((d, r))
}

fn check_past_slit_plane(pos: [f64; 2]) -> Result<()> {
    if !(pos[0] > 0.0) {
        return Err(Error::Domain(format!(
            "guidance needs x > 0 (past the slit plane), got x = {}",
            pos[0]
        )));
    }
    Ok(())
}

/// Velocity of the signal particle at a configuration: the gradient of
/// the effective guiding phase over the mass.
///
/// * Which-path regime: the guide is one point-source branch, whose phase
///   gradient `k * r_hat` points radially away from the slit of origin.
/// * Erased regime: the guide is the detector-selected combination
///   `a*psi1 + b*psi2`; the gradient is evaluated in closed form from
///   `d/dr (e^{ikr}/r) = (ik - 1/r) e^{ikr}/r`.
pub fn guidance_velocity(c: &Configuration, g: &ExperimentGeometry) -> Result<[f64; 2]> {
    check_past_slit_plane(c.signal_pos)?;
    let k = g.wave_number;
    match c.regime() {
        Regime::SingleBranch(slit) => {
            let (d, r) = branch_displacement(g, slit, c.signal_pos)?;
            if 1.0 / r < NODE_EPSILON {
                return Err(Error::Node {
                    x: c.signal_pos[0],
                    y: c.signal_pos[1],
                    time: c.time,
                });
            }
            let scale = k / (PARTICLE_MASS * r);
            Ok([scale * d[0], scale * d[1]])
        }
        Regime::Erased(port) => {
            let (coeff_u, coeff_l) = port_coefficients(port);
            let (du, ru) = branch_displacement(g, Slit::Upper, c.signal_pos)?;
            let (dl, rl) = branch_displacement(g, Slit::Lower, c.signal_pos)?;
            let psi_u = spherical_wave(k, ru)?;
            let psi_l = spherical_wave(k, rl)?;
            let field = coeff_u * psi_u + coeff_l * psi_l;
            if field.norm() < NODE_EPSILON {
                return Err(Error::Node {
                    x: c.signal_pos[0],
                    y: c.signal_pos[1],
                    time: c.time,
                });
            }
            // Radial derivative factor of each branch.
            let ik = Amplitude::new(0.0, k);
            let fu = coeff_u * psi_u * (ik - Amplitude::new(1.0 / ru, 0.0));
            let fl = coeff_l * psi_l * (ik - Amplitude::new(1.0 / rl, 0.0));
            let grad_x = fu * (du[0] / ru) + fl * (dl[0] / rl);
            let grad_y = fu * (du[1] / ru) + fl * (dl[1] / rl);
            Ok([
                (grad_x / field).im / PARTICLE_MASS,
                (grad_y / field).im / PARTICLE_MASS,
            ])
        }
    }
}

/// Effective guiding phase at an arbitrary position, assembled from the
/// branch polar fields and the discrete idler record.
///
/// The idler factors are unit-amplitude placeholders: after the eraser the
/// surviving idler factor is common to both branches and drops out of the
/// signal-side gradient; before it, the dead branch carries zero weight.
pub fn effective_phase(c: &Configuration, g: &ExperimentGeometry, pos: [f64; 2]) -> Result<f64> {
    let k = g.wave_number;
    let (_, ru) = branch_displacement(g, Slit::Upper, pos)?;
    let (_, rl) = branch_displacement(g, Slit::Lower, pos)?;
    let live = PolarField::new(1.0, 0.0);
    let dead = PolarField::new(0.0, 0.0);
    let (upper, lower) = match c.regime() {
        Regime::SingleBranch(slit) => {
            let upper = BranchPolar {
                signal: PolarField::new(1.0 / ru, k * ru),
                idler: if slit == Slit::Upper { live } else { dead },
            };
            let lower = BranchPolar {
                signal: PolarField::new(1.0 / rl, k * rl),
                idler: if slit == Slit::Lower { live } else { dead },
            };
            (upper, lower)
        }
        Regime::Erased(port) => {
            let (cu, cl) = port_coefficients(port);
            // Fold the branch coefficients into the signal phases.
            let upper = BranchPolar {
                signal: PolarField::new(1.0 / ru, k * ru + cu.arg()),
                idler: live,
            };
            let lower = BranchPolar {
                signal: PolarField::new(1.0 / rl, k * rl + cl.arg()),
                idler: live,
            };
            (upper, lower)
        }
    };
    two_particle_phase(&upper, &lower)
}

/// Velocity by central finite differences of the effective phase,
/// wrap-aware across branch cuts. Independent of the closed-form gradient;
/// used as its cross-check and as the fallback for fields with no
/// closed-form derivative.
pub fn finite_difference_velocity(
    c: &Configuration,
    g: &ExperimentGeometry,
    h: f64,
) -> Result<[f64; 2]> {
    check_past_slit_plane(c.signal_pos)?;
    let [x, y] = c.signal_pos;
    let sxp = effective_phase(c, g, [x + h, y])?;
    let sxm = effective_phase(c, g, [x - h, y])?;
    let syp = effective_phase(c, g, [x, y + h])?;
    let sym = effective_phase(c, g, [x, y - h])?;
    Ok([
        wrap_angle(sxp - sxm) / (2.0 * h * PARTICLE_MASS),
        wrap_angle(syp - sym) / (2.0 * h * PARTICLE_MASS),
    ])
}

// ---------------------------------------------------------------------------
// Integration
// ---------------------------------------------------------------------------

/// Initial condition of one trajectory: where the signal starts, which
/// branch guides it, and what will happen to its idler partner.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Launch {
    /// Start position `(x, y)`, past the slit plane.
    pub start: [f64; 2],
    pub slit: Slit,
    pub fate: IdlerFate,
}

impl Launch {
    fn validate(&self, g: &ExperimentGeometry, starts_erased: bool) -> Result<()> {
        if !(self.start[0] > 0.0) {
            return Err(Error::Config(format!(
                "launch must start past the slit plane, got x = {}",
                self.start[0]
            )));
        }
        if starts_erased {
            // An already-erased trajectory starts on a far-zone section,
            // not in a slit aperture; no proximity requirement.
            return Ok(());
        }
        let own = g.distance_from_slit(self.slit, self.start[0], self.start[1]);
        let other = match self.slit {
            Slit::Upper => g.distance_from_slit(Slit::Lower, self.start[0], self.start[1]),
            Slit::Lower => g.distance_from_slit(Slit::Upper, self.start[0], self.start[1]),
        };
        if own > other {
            return Err(Error::Config(format!(
                "launch at ({}, {}) is not within its slit of origin ({:?})",
                self.start[0], self.start[1], self.slit
            )));
        }
        Ok(())
    }
}

/// Knobs for trajectory integration.
#[derive(Clone, Copy, Debug)]
pub struct IntegrationOptions {
    pub dt: f64,
    /// Step for the segment after the guidance jump; defaults to `dt`.
    /// The erased flow has fast features near its nodal lanes, so
    /// ensembles integrate that segment with a finer step. The pre-switch
    /// segment always runs at `dt`, which keeps the recorded past
    /// independent of this choice.
    pub post_switch_dt: Option<f64>,
    /// Record every `record_stride`-th point (start, switch and endpoint
    /// are always kept). Ensembles use a large stride to save memory.
    pub record_stride: usize,
    /// How many times the post-switch step may be halved when a step
    /// would exceed the displacement limit.
    pub max_step_refinements: u8,
}

impl IntegrationOptions {
    pub fn with_defaults(g: &ExperimentGeometry) -> Self {
        IntegrationOptions {
            dt: default_step(g),
            post_switch_dt: None,
            record_stride: 1,
            max_step_refinements: 0,
        }
    }
}

/// One classical fourth-order Runge-Kutta step of the guidance flow.
fn rk4_step(c: &Configuration, g: &ExperimentGeometry, dt: f64) -> Result<[f64; 2]> {
    let eval = |pos: [f64; 2]| -> Result<[f64; 2]> {
        let probe = Configuration {
            signal_pos: pos,
            ..*c
        };
        guidance_velocity(&probe, g)
    };
    let p = c.signal_pos;
    let k1 = eval(p)?;
    let k2 = eval([p[0] + 0.5 * dt * k1[0], p[1] + 0.5 * dt * k1[1]])?;
    let k3 = eval([p[0] + 0.5 * dt * k2[0], p[1] + 0.5 * dt * k2[1]])?;
    let k4 = eval([p[0] + dt * k3[0], p[1] + dt * k3[1]])?;
    Ok([
        p[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        p[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ])
}

fn switched_stage(fate: IdlerFate) -> IdlerStage {
    match fate {
        IdlerFate::Eraser(EraserPort::D1) => IdlerStage::PostEraserToD1,
        IdlerFate::Eraser(EraserPort::D2) => IdlerStage::PostEraserToD2,
        IdlerFate::WhichPathDetector => IdlerStage::AtWhichPathDetector,
    }
}

/// How one integration phase came to an end.
enum PhaseExit {
    Screen,
    StopTime,
}

/// Integrate one phase (fixed idler stage) until the screen or `stop_time`.
///
/// Interior points land on the `dt` grid; a final partial step stops
/// exactly on `stop_time`. Recorded points exclude the start and the end
/// state, which the caller handles.
fn integrate_phase(
    start: Configuration,
    g: &ExperimentGeometry,
    dt: f64,
    stride: usize,
    stop_time: Option<f64>,
    points: &mut Vec<Configuration>,
) -> Result<(Configuration, PhaseExit)> {
    let screen_x = g.screen_distance;
    let step_limit = g.wavelength() / 4.0;
    let max_steps = (20.0 * nominal_flight_time(g) / dt).ceil() as usize + 16;
    let mut c = start;
    let mut since_record = 0usize;

    for _ in 0..max_steps {
        let remaining = stop_time.map(|t| t - c.time);
        if let Some(r) = remaining {
            if r <= 1e-9 * dt {
                return Ok((c, PhaseExit::StopTime));
            }
        }
        let dt_step = match remaining {
            Some(r) if r < dt => r,
            _ => dt,
        };
        let next_pos = rk4_step(&c, g, dt_step)?;
        let moved = (next_pos[0] - c.signal_pos[0]).hypot(next_pos[1] - c.signal_pos[1]);
        if moved > step_limit {
            return Err(Error::Step {
                displacement: moved,
                limit: step_limit,
            });
        }
        if next_pos[0] >= screen_x {
            let run = next_pos[0] - c.signal_pos[0];
            if !(run > 0.0) {
                return Err(Error::Domain(
                    "trajectory stalled at the screen plane".into(),
                ));
            }
            let frac = (screen_x - c.signal_pos[0]) / run;
            c = Configuration {
                signal_pos: [
                    screen_x,
                    c.signal_pos[1] + frac * (next_pos[1] - c.signal_pos[1]),
                ],
                time: c.time + frac * dt_step,
                ..c
            };
            return Ok((c, PhaseExit::Screen));
        }
        c = Configuration {
            signal_pos: next_pos,
            time: c.time + dt_step,
            ..c
        };
        if stop_time.map_or(false, |t| c.time >= t - 1e-9 * dt) {
            return Ok((c, PhaseExit::StopTime));
        }
        since_record += 1;
        if since_record >= stride {
            points.push(c);
            since_record = 0;
        }
    }
    Err(Error::Domain(format!(
        "trajectory did not reach the screen within {max_steps} steps"
    )))
}

/// Integrate one trajectory from its launch until it reaches the screen.
///
/// The guidance regime is which-path until `timeline.t_eraser`, then the
/// stage recorded in the launch fate takes over; a switch time past the
/// arrival leaves the whole flight in the which-path regime. The final
/// point is interpolated onto the screen plane. A step whose displacement
/// exceeds a quarter wavelength aborts with a step error.
pub fn integrate_trajectory(
    launch: &Launch,
    g: &ExperimentGeometry,
    timeline: Timeline,
    dt: f64,
) -> Result<Trajectory> {
    integrate_trajectory_with(
        launch,
        g,
        timeline,
        &IntegrationOptions {
            dt,
            post_switch_dt: None,
            record_stride: 1,
            max_step_refinements: 0,
        },
    )
}

pub fn integrate_trajectory_with(
    launch: &Launch,
    g: &ExperimentGeometry,
    timeline: Timeline,
    opts: &IntegrationOptions,
) -> Result<Trajectory> {
    g.validate()?;
    let dt = opts.dt;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    let starts_erased = timeline.t_eraser <= 0.0;
    launch.validate(g, starts_erased)?;
    let stride = opts.record_stride.max(1);

    let mut c = Configuration {
        signal_pos: launch.start,
        idler_branch: launch.slit,
        idler_stage: if starts_erased {
            switched_stage(launch.fate)
        } else {
            IdlerStage::PreEraser
        },
        time: 0.0,
    };
    let mut regime_switch_time = match (starts_erased, launch.fate) {
        (true, IdlerFate::Eraser(_)) => Some(0.0),
        _ => None,
    };
    let mut points = vec![c];

    // Which-path segment, always at the requested dt.
    if !starts_erased {
        let stop = timeline.t_eraser.is_finite().then_some(timeline.t_eraser);
        let (end, exit) = integrate_phase(c, g, dt, stride, stop, &mut points)?;
        match exit {
            PhaseExit::Screen => {
                points.push(end);
                return Ok(Trajectory {
                    points,
                    regime_switch_time,
                });
            }
            PhaseExit::StopTime => {
                c = Configuration {
                    idler_stage: switched_stage(launch.fate),
                    ..end
                };
                if matches!(launch.fate, IdlerFate::Eraser(_)) {
                    regime_switch_time = Some(c.time);
                }
                points.push(c);
            }
        }
    }

    // Post-switch segment; halve the step while it trips the displacement
    // limit and refinements remain.
    let mut dt_post = opts.post_switch_dt.unwrap_or(dt);
    let mut attempts = opts.max_step_refinements as i32 + 1;
    loop {
        let mut segment = Vec::new();
        match integrate_phase(c, g, dt_post, stride, None, &mut segment) {
            Ok((end, PhaseExit::Screen)) => {
                points.extend(segment);
                points.push(end);
                return Ok(Trajectory {
                    points,
                    regime_switch_time,
                });
            }
            Ok((_, PhaseExit::StopTime)) => {
                unreachable!("no stop time in the post-switch phase")
            }
            Err(Error::Step {
                displacement,
                limit,
            }) => {
                attempts -= 1;
                if attempts <= 0 {
                    return Err(Error::Step {
                        displacement,
                        limit,
                    });
                }
                dt_post *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

/// Launch-law and integration knobs for trajectory ensembles.
#[derive(Clone, Copy, Debug)]
pub struct EnsembleOptions {
    pub dt: f64,
    /// Step used after the guidance jump (and for trajectories that start
    /// erased); finer than `dt` to resolve the erased flow's nodal lanes.
    pub post_switch_dt: f64,
    /// Distance downstream of the slit plane where which-path trajectories
    /// start.
    pub launch_offset: f64,
    /// Section (as a fraction of the screen distance) where trajectories
    /// that are erased from the very start are seeded.
    pub erased_section_fraction: f64,
    pub record_stride: usize,
    pub max_step_refinements: u8,
}

impl EnsembleOptions {
    pub fn with_defaults(g: &ExperimentGeometry) -> Self {
        EnsembleOptions {
            dt: default_step(g),
            post_switch_dt: default_step(g) / 4.0,
            // A quarter wavelength downstream: close enough to the slit
            // that the other branch's weight there is negligible.
            launch_offset: 0.25 * g.wavelength(),
            erased_section_fraction: 0.2,
            record_stride: usize::MAX,
            max_step_refinements: 4,
        }
    }

    /// Defaults tuned per timeline so endpoint convergence holds at the
    /// 1e-4 level under step halving: a mid-flight jump drops the particle
    /// into the erased flow at an arbitrary phase of its nodal lanes and
    /// needs a finer post-jump step than a flow entered smoothly from a
    /// section of its own density.
    pub fn for_timeline(g: &ExperimentGeometry, timeline: Timeline) -> Self {
        let base = Self::with_defaults(g);
        let mid_flight_jump = timeline.t_eraser > 0.0 && timeline.t_eraser <= timeline.t_screen;
        if mid_flight_jump {
            EnsembleOptions {
                post_switch_dt: base.dt / 16.0,
                ..base
            }
        } else {
            base
        }
    }
}

/// One ensemble slot: the sampled initial data and its integrated path.
#[derive(Clone, Debug)]
pub struct EnsembleMember {
    pub launch: Launch,
    pub trajectory: Trajectory,
}

/// A batch of independently integrated trajectories.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub members: Vec<EnsembleMember>,
    /// Trajectories redrawn after hitting a wavefunction node.
    pub nodes_resampled: u64,
    pub timeline: Timeline,
    pub extent: [f64; 2],
}

/// SplitMix64; used to derive independent per-trajectory seeds.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(1)))
}

fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / 9007199254740992.0)
}

/// Angular fan of launch directions for one slit: the rays that reach the
/// observed screen extent, padded so arrivals just outside the extent are
/// represented too. Without the pad the edge bins would lose the
/// trajectories the erased flow sweeps outward while receiving none swept
/// in from beyond the extent.
fn launch_fan(g: &ExperimentGeometry, slit: Slit) -> (f64, f64) {
    let ys = g.slit_y(slit);
    let pad = 0.06 * (g.screen_extent[1] - g.screen_extent[0]) + g.wavelength();
    let lo = ((g.screen_extent[0] - pad - ys) / g.screen_distance).atan();
    let hi = ((g.screen_extent[1] + pad - ys) / g.screen_distance).atan();
    (lo, hi)
}

/// Inverse-CDF table for seeding already-erased trajectories on a far-zone
/// section from the pair state's transverse profile there.
///
/// Launching those trajectories at the slit apertures instead would place
/// them in the near zone of the point-source waves, where the 2-D flow of
/// the 3-D-normalized waves does not transport any launch density into the
/// screen statistics. On a far-zone section the nodal lanes already exist
/// and carry the fringe bunching to the screen.
struct SectionLaw {
    x: f64,
    y_lo: f64,
    pitch: f64,
    /// Cumulative masses of the port-summed profile, length grid + 1.
    cdf: Vec<f64>,
}

const SECTION_GRID: usize = 4096;

fn erased_field_sq(g: &ExperimentGeometry, port: EraserPort, pos: [f64; 2]) -> Result<f64> {
    let (coeff_u, coeff_l) = port_coefficients(port);
    let (_, ru) = branch_displacement(g, Slit::Upper, pos)?;
    let (_, rl) = branch_displacement(g, Slit::Lower, pos)?;
    let field = coeff_u * spherical_wave(g.wave_number, ru)?
        + coeff_l * spherical_wave(g.wave_number, rl)?;
    Ok(field.norm_sqr())
}

/// Born weight of the D1 outcome given the signal configuration at the
/// moment the idler passes the eraser: the relative weight of the
/// detector-selected branch combinations at that point. The port outcome
/// is correlated with the signal through the pilot wave, which is what
/// lets the port-labeled subsets carry fringes while their union stays a
/// clump.
fn port_weight_d1(g: &ExperimentGeometry, pos: [f64; 2]) -> Result<f64> {
    let d1 = erased_field_sq(g, EraserPort::D1, pos)?;
    let d2 = erased_field_sq(g, EraserPort::D2, pos)?;
    let total = d1 + d2;
    if !(total > 0.0) {
        return Err(Error::Node {
            x: pos[0],
            y: pos[1],
            time: f64::NAN,
        });
    }
    Ok(d1 / total)
}

fn build_section_law(g: &ExperimentGeometry, x: f64) -> Result<SectionLaw> {
    let mid = 0.5 * (g.slit_upper_y + g.slit_lower_y);
    let scale = x / g.screen_distance;
    let half = (g.screen_extent[1] - mid)
        .abs()
        .max((g.screen_extent[0] - mid).abs())
        * scale
        * 1.1
        + g.wavelength();
    let y_lo = mid - half;
    let pitch = 2.0 * half / SECTION_GRID as f64;
    let mut cdf = Vec::with_capacity(SECTION_GRID + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for cell in 0..SECTION_GRID {
        let y = y_lo + (cell as f64 + 0.5) * pitch;
        acc += erased_field_sq(g, EraserPort::D1, [x, y])?
            + erased_field_sq(g, EraserPort::D2, [x, y])?;
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::Config(
            "pair state vanishes on the launch section".into(),
        ));
    }
    for v in cdf.iter_mut() {
        *v /= acc;
    }
    *cdf.last_mut().unwrap() = 1.0;
    Ok(SectionLaw { x, y_lo, pitch, cdf })
}

impl SectionLaw {
    fn sample(&self, u: f64) -> f64 {
        let cell = self
            .cdf
            .partition_point(|c| *c <= u)
            .saturating_sub(1)
            .min(SECTION_GRID - 1);
        let span = self.cdf[cell + 1] - self.cdf[cell];
        let frac = if span > 0.0 {
            (u - self.cdf[cell]) / span
        } else {
            0.5
        };
        self.y_lo + (cell as f64 + frac) * self.pitch
    }
}

/// Position of a which-path (radial) trajectory at time `t`, or at its
/// screen crossing if that comes first. Radial flow moves at constant
/// speed `k/m` along the ray from the slit through the launch point, so
/// this is closed form.
fn whichpath_ray_position(
    g: &ExperimentGeometry,
    start: [f64; 2],
    slit: Slit,
    t: f64,
) -> [f64; 2] {
    let sy = g.slit_y(slit);
    let d = [start[0], start[1] - sy];
    let r0 = d[0].hypot(d[1]);
    let dir = [d[0] / r0, d[1] / r0];
    let speed = g.wave_number / PARTICLE_MASS;
    // Clamp to the screen crossing.
    let r_screen = g.screen_distance / dir[0];
    let r = (r0 + speed * t).min(r_screen);
    [r * dir[0], sy + r * dir[1]]
}

/// Draw one launch. Each slot consumes exactly three draws so the stream
/// stays aligned across redraws and across timelines sharing a seed.
///
/// Which-path launches: slit with equal weight and a start position
/// distributed as the slit wave's `|psi|^2` along a segment just
/// downstream of the slit. On that segment the density
/// `1/(x0^2 + (y-ys)^2)` is uniform in the ray angle, so the draw is
/// uniform over the slit's launch fan; under radial which-path transport
/// this reproduces the single-slit screen density exactly.
///
/// Already-erased launches draw the start from the [`SectionLaw`] instead.
///
/// The eraser port is not fixed here: its quantile is drawn and resolved
/// later against the Born weight at the configuration the signal occupies
/// when the idler passes the eraser.
fn draw_launch(
    g: &ExperimentGeometry,
    rng: &mut ChaCha8Rng,
    timeline: Timeline,
    launch_offset: f64,
    section: Option<&SectionLaw>,
) -> Result<Launch> {
    let slit = if rng.next_u64() & 1 == 0 {
        Slit::Upper
    } else {
        Slit::Lower
    };
    let port_quantile = unit_f64(rng.next_u64());
    let u = unit_f64(rng.next_u64());
    let start = match section {
        Some(law) => [law.x, law.sample(u)],
        None => {
            let (theta_lo, theta_hi) = launch_fan(g, slit);
            let theta = theta_lo + (theta_hi - theta_lo) * u;
            [launch_offset, g.slit_y(slit) + launch_offset * theta.tan()]
        }
    };
    let fate = if g.mirrors_in {
        IdlerFate::WhichPathDetector
    } else {
        // Configuration of the signal at the moment the idler passes the
        // eraser: the launch point itself if the eraser acts first,
        // otherwise a point on the which-path ray, clamped to the screen
        // crossing when the signal lands before the idler gets there.
        let pos = if section.is_some() {
            start
        } else {
            whichpath_ray_position(g, start, slit, timeline.t_eraser)
        };
        if port_quantile < port_weight_d1(g, pos)? {
            IdlerFate::Eraser(EraserPort::D1)
        } else {
            IdlerFate::Eraser(EraserPort::D2)
        }
    };
    Ok(Launch { start, slit, fate })
}

/// Integrate an ensemble of `n` trajectories with default options.
pub fn sample_ensemble(
    n: usize,
    g: &ExperimentGeometry,
    timeline: Timeline,
    seed: u64,
) -> Result<Ensemble> {
    sample_ensemble_with(n, g, timeline, seed, &EnsembleOptions::for_timeline(g, timeline))
}

/// Integrate an ensemble of `n` trajectories.
///
/// Trajectories are independent: each slot derives its own seed, so the
/// result does not depend on how the work is scheduled. A trajectory that
/// runs into a wavefunction node is redrawn from its slot's stream and the
/// redraw is counted.
pub fn sample_ensemble_with(
    n: usize,
    g: &ExperimentGeometry,
    timeline: Timeline,
    seed: u64,
    opts: &EnsembleOptions,
) -> Result<Ensemble> {
    if n < 1 {
        return Err(Error::Config("ensemble size must be at least 1".into()));
    }
    g.validate()?;
    let section = if timeline.t_eraser <= 0.0 && !g.mirrors_in {
        Some(build_section_law(
            g,
            opts.erased_section_fraction * g.screen_distance,
        )?)
    } else {
        None
    };
    let integ = IntegrationOptions {
        dt: opts.dt,
        post_switch_dt: Some(opts.post_switch_dt),
        record_stride: opts.record_stride,
        max_step_refinements: opts.max_step_refinements,
    };
    let results: Vec<Result<(EnsembleMember, u64)>> = (0..n as u64)
        .into_par_iter()
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, index));
            let mut redraws = 0u64;
            for _ in 0..MAX_LAUNCH_ATTEMPTS {
                let launch =
                    match draw_launch(g, &mut rng, timeline, opts.launch_offset, section.as_ref())
                    {
                        Ok(l) => l,
                        Err(Error::Node { .. }) => {
                            redraws += 1;
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                match integrate_trajectory_with(&launch, g, timeline, &integ) {
                    Ok(trajectory) => {
                        return Ok((EnsembleMember { launch, trajectory }, redraws));
                    }
                    Err(Error::Node { .. }) => {
                        redraws += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(Error::Domain(format!(
                "slot {index}: {MAX_LAUNCH_ATTEMPTS} launches in a row hit nodes"
            )))
        })
        .collect();

    let mut members = Vec::with_capacity(n);
    let mut nodes_resampled = 0;
    for r in results {
        let (member, redraws) = r?;
        nodes_resampled += redraws;
        members.push(member);
    }
    Ok(Ensemble {
        members,
        nodes_resampled,
        timeline,
        extent: g.screen_extent,
    })
}

impl Ensemble {
    /// Histogram of arrival coordinates, optionally restricted to the
    /// subset whose idler exited toward one eraser port. Arrivals outside
    /// the observed extent are dropped.
    pub fn endpoint_histogram(&self, bins: usize, port: Option<EraserPort>) -> Result<Histogram> {
        let mut h = Histogram::new(self.extent[0], self.extent[1], bins)?;
        for m in self.members_for(port) {
            h.record(m.trajectory.endpoint().signal_pos[1]);
        }
        Ok(h)
    }

    /// Members whose idler fate matches the optional port filter.
    pub fn members_for(&self, port: Option<EraserPort>) -> impl Iterator<Item = &EnsembleMember> {
        self.members.iter().filter(move |m| match port {
            None => true,
            Some(p) => m.launch.fate == IdlerFate::Eraser(p),
        })
    }

    /// Write all trajectories as CSV rows `traj_id,t,x,y,regime`.
    pub fn write_trajectories_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "traj_id,t,x,y,regime")?;
        for (id, m) in self.members.iter().enumerate() {
            for p in &m.trajectory.points {
                writeln!(
                    out,
                    "{id},{},{},{},{}",
                    p.time,
                    p.signal_pos[0],
                    p.signal_pos[1],
                    p.regime_label()
                )?;
            }
        }
        Ok(())
    }

    /// JSON summary: ensemble size, node redraws and the endpoint histogram.
    pub fn write_summary_json<W: Write>(&self, bins: usize, out: &mut W) -> Result<()> {
        #[derive(Serialize)]
        struct Summary<'a> {
            n: usize,
            nodes_resampled: u64,
            t_eraser: f64,
            t_screen: f64,
            endpoint_histogram: &'a Histogram,
        }
        let h = self.endpoint_histogram(bins, None)?;
        let s = Summary {
            n: self.members.len(),
            nodes_resampled: self.nodes_resampled,
            t_eraser: self.timeline.t_eraser,
            t_screen: self.timeline.t_screen,
            endpoint_histogram: &h,
        };
        serde_json::to_writer_pretty(&mut *out, &s)
            .map_err(|e| Error::Config(format!("summary serialization: {e}")))?;
        writeln!(out)?;
        Ok(())
    }
}
