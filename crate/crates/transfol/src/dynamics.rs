//! Time integration of Hamilton's equations with the joint 4×4 variational
//! flow, event detection on dense output, and monodromy/Floquet analysis of
//! periodic orbits.

use nalgebra::Matrix4;
use num_complex::Complex;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{MechanicalModel, PhaseState, Vec2};
use crate::ode::{
    integrate_dop853, integrate_gauss6, EventSpec, OdeOptions, OdeSolution, State,
};
use crate::orbits::PeriodicOrbit;

pub type Mat4 = Matrix4<f64>;

/// The standard symplectic structure matrix in `(x1, x2, y1, y2)` order,
/// chosen so that Hamilton's equations read `ż = J₀ ∇H(z)`.
pub fn standard_j0() -> Mat4 {
    Mat4::new(
        0.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 1.0, //
        -1.0, 0.0, 0.0, 0.0, //
        0.0, -1.0, 0.0, 0.0,
    )
}

/// A scalar event surface `g(t, z) = 0` watched during integration.
pub struct FlowEvent<'a> {
    pub name: String,
    pub g: Box<dyn Fn(f64, &PhaseState) -> f64 + 'a>,
    /// +1: only upward crossings, -1: only downward, 0: both.
    pub direction: i8,
    /// Stop the integration at the first crossing.
    pub terminal: bool,
}

impl<'a> FlowEvent<'a> {
    pub fn new(
        name: impl Into<String>,
        g: impl Fn(f64, &PhaseState) -> f64 + 'a,
        direction: i8,
        terminal: bool,
    ) -> Self {
        FlowEvent {
            name: name.into(),
            g: Box::new(g),
            direction,
            terminal,
        }
    }
}

/// A located event crossing.
#[derive(Debug, Clone, Serialize)]
pub struct FlowEventRecord {
    pub name: String,
    pub t: f64,
    pub state: PhaseState,
    /// Sign of the crossing (+1 upward, -1 downward).
    pub direction: i8,
    /// `|d/dt g|` at the crossing, estimated on the dense output; a
    /// transversal crossing has nonzero speed.
    pub speed: f64,
}

/// Integration output: node data, dense access, events, diagnostics.
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<PhaseState>,
    /// `H` sampled at the nodes.
    pub energies: Vec<f64>,
    /// Fundamental matrix solution at the nodes, `Φ(t₀) = I`, when the
    /// variational flow was requested.
    pub fundamental: Option<Vec<Mat4>>,
    pub events: Vec<FlowEventRecord>,
    /// Terminal event that stopped the run, if any.
    pub terminated_by: Option<String>,
    /// Failure reason when the run stopped before the requested end time
    /// (step underflow, non-finite state, step budget); the prefix is valid.
    pub truncated: Option<String>,
    pub warnings: Vec<String>,
    pub n_evals: usize,
    sol4: Option<OdeSolution<4>>,
    sol20: Option<OdeSolution<20>>,
}

impl std::fmt::Debug for Trajectory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trajectory")
            .field("t0", &self.times.first())
            .field("t_end", &self.times.last())
            .field("nodes", &self.times.len())
            .field("events", &self.events.len())
            .field("terminated_by", &self.terminated_by)
            .field("truncated", &self.truncated)
            .finish()
    }
}

impl Trajectory {
    pub fn t0(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn initial_state(&self) -> PhaseState {
        self.states[0]
    }

    pub fn final_state(&self) -> PhaseState {
        *self.states.last().unwrap()
    }

    /// Dense-output state at any time inside the integration span.
    pub fn state_at(&self, t: f64) -> Result<PhaseState> {
        if let Some(sol) = &self.sol4 {
            let y = sol.eval(t);
            return Ok(PhaseState::from_vec4(&y));
        }
        let sol = self.sol20.as_ref().ok_or_else(|| {
            Error::InvalidArgument("trajectory carries no dense data".into())
        })?;
        let y = sol.eval(t);
        Ok(PhaseState::new(y[0], y[1], y[2], y[3]))
    }

    /// Dense-output fundamental matrix at any time inside the span.
    pub fn fundamental_at(&self, t: f64) -> Result<Mat4> {
        let sol = self.sol20.as_ref().ok_or_else(|| {
            Error::InvalidArgument(
                "trajectory was integrated without the variational flow".into(),
            )
        })?;
        Ok(unpack_phi(&sol.eval(t)))
    }

    /// Fundamental matrix at the final node.
    pub fn final_fundamental(&self) -> Option<Mat4> {
        self.fundamental.as_ref().map(|v| *v.last().unwrap())
    }

    /// Largest `|H(t) − H(t₀)|` over the nodes.
    pub fn energy_drift(&self) -> f64 {
        let h0 = self.energies[0];
        self.energies
            .iter()
            .map(|h| (h - h0).abs())
            .fold(0.0, f64::max)
    }

    /// Largest `‖Φᵀ J₀ Φ − J₀‖` over the nodes, when `Φ` was computed.
    pub fn symplectic_defect(&self) -> Option<f64> {
        let j = standard_j0();
        self.fundamental.as_ref().map(|mats| {
            mats.iter()
                .map(|phi| (phi.transpose() * j * phi - j).norm())
                .fold(0.0, f64::max)
        })
    }

    /// Largest `‖Φᵀ J₀ Φ − J₀‖ / max(1, ‖Φ‖²)` over the nodes.  On chaotic
    /// stretches `Φ` grows exponentially and the absolute defect inherits a
    /// round-off floor of order `‖Φ‖² · ε_machine`; the relative defect is
    /// the scale-aware conservation measure for long runs.
    pub fn symplectic_defect_relative(&self) -> Option<f64> {
        let j = standard_j0();
        self.fundamental.as_ref().map(|mats| {
            mats.iter()
                .map(|phi| {
                    let scale = phi.norm_squared().max(1.0);
                    (phi.transpose() * j * phi - j).norm() / scale
                })
                .fold(0.0, f64::max)
        })
    }

    /// Write node data as CSV with columns `t, x1, x2, y1, y2, H`.
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let columns: Vec<Vec<f64>> = vec![
            self.times.clone(),
            self.states.iter().map(|s| s.x[0]).collect(),
            self.states.iter().map(|s| s.x[1]).collect(),
            self.states.iter().map(|s| s.y[0]).collect(),
            self.states.iter().map(|s| s.y[1]).collect(),
            self.energies.clone(),
        ];
        crate::export::write_csv(
            path.as_ref(),
            &["t", "x1", "x2", "y1", "y2", "H"],
            &columns,
        )
    }
}

fn unpack_phi(y: &State<20>) -> Mat4 {
    // Columns of Φ stored column-major after the 4 base components.
    let mut phi = Mat4::zeros();
    for col in 0..4 {
        for row in 0..4 {
            phi[(row, col)] = y[4 + 4 * col + row];
        }
    }
    phi
}

/// Signed distance to the domain walls: positive inside, zero on the
/// boundary.  Models with a periodic second coordinate only count the
/// `x1` walls.
fn domain_margin(model: &MechanicalModel, x: &Vec2) -> f64 {
    let [dx, dy] = model.domain;
    let m1 = (x[0] - dx[0]).min(dx[1] - x[0]);
    if model.x2_period.is_some() {
        m1
    } else {
        m1.min((x[1] - dy[0]).min(dy[1] - x[1]))
    }
}

/// Estimate `d/dt g` at an event time by central differencing on the dense
/// output, clamped into the integration span.
fn crossing_speed<const N: usize>(
    sol: &OdeSolution<N>,
    g: &dyn Fn(f64, &PhaseState) -> f64,
    te: f64,
    to_state: &dyn Fn(&State<N>) -> PhaseState,
) -> f64 {
    let (t0, t1) = (sol.times[0], sol.t_end());
    let span = (t1 - t0).abs().max(1e-6);
    let dt = 1e-7 * span;
    let clamp = |t: f64| t.clamp(t0.min(t1), t0.max(t1));
    let lo = clamp(te - dt);
    let hi = clamp(te + dt);
    if (hi - lo).abs() < f64::EPSILON * span {
        return 0.0;
    }
    let a = sol.eval(lo);
    let b = sol.eval(hi);
    (g(hi, &to_state(&b)) - g(lo, &to_state(&a))) / (hi - lo)
}

/// Integrate Hamilton's equations for `model` from `state` over `t_span`
/// (backward spans allowed).
///
/// `tolerance` controls both relative and absolute local error.  With
/// `with_variational` the 4×4 fundamental matrix solution is propagated
/// jointly as a 20-dimensional system.  `events` are located on the dense
/// output by bisection; a terminal event truncates the run.  A built-in
/// terminal event `domain-exit` watches the model's coordinate rectangle.
pub fn integrate_flow(
    model: &MechanicalModel,
    state: &PhaseState,
    t_span: (f64, f64),
    tolerance: f64,
    with_variational: bool,
    events: Vec<FlowEvent<'_>>,
) -> Result<Trajectory> {
    if !(tolerance > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {tolerance}"
        )));
    }
    let x0 = state.xv();
    if domain_margin(model, &x0) < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "initial position ({}, {}) lies outside the model domain",
            x0[0], x0[1]
        )));
    }
    let opts = OdeOptions::with_tol(tolerance);

    if with_variational {
        let f = |_t: f64, y: &State<20>| -> State<20> {
            let x = Vec2::new(y[0], y[1]);
            let g = model.grad_v(&x);
            let h = model.hess_v(&x);
            let mut dy = State::<20>::zeros();
            dy[0] = y[2];
            dy[1] = y[3];
            dy[2] = -g[0];
            dy[3] = -g[1];
            // u̇ = A u per column, A = [[0, I], [-Hess V, 0]].
            for col in 0..4 {
                let b = 4 + 4 * col;
                let (u1, u2, u3, u4) = (y[b], y[b + 1], y[b + 2], y[b + 3]);
                dy[b] = u3;
                dy[b + 1] = u4;
                dy[b + 2] = -(h[(0, 0)] * u1 + h[(0, 1)] * u2);
                dy[b + 3] = -(h[(1, 0)] * u1 + h[(1, 1)] * u2);
            }
            dy
        };
        let mut y0 = State::<20>::zeros();
        let w = state.to_vec4();
        for i in 0..4 {
            y0[i] = w[i];
        }
        for i in 0..4 {
            y0[4 + 4 * i + i] = 1.0;
        }
        let to_state = |y: &State<20>| PhaseState::new(y[0], y[1], y[2], y[3]);
        let mut specs: Vec<EventSpec<'_, 20>> = Vec::new();
        for ev in &events {
            let g = &ev.g;
            specs.push(EventSpec::new(
                ev.name.clone(),
                move |t: f64, y: &State<20>| g(t, &to_state(y)),
                ev.direction,
                ev.terminal,
            ));
        }
        specs.push(EventSpec::new(
            "domain-exit",
            move |_t: f64, y: &State<20>| domain_margin(model, &Vec2::new(y[0], y[1])),
            -1,
            true,
        ));
        let sol = integrate_dop853(f, t_span.0, t_span.1, y0, &opts, &specs)?;
        let states: Vec<PhaseState> = sol.states.iter().map(|y| to_state(y)).collect();
        let energies: Vec<f64> = states.iter().map(|s| model.energy(s)).collect();
        let fundamental: Vec<Mat4> = sol.states.iter().map(unpack_phi).collect();
        let mut records = Vec::new();
        for e in &sol.events {
            let ge = events
                .iter()
                .find(|ev| ev.name == e.name)
                .map(|ev| &ev.g);
            let speed = match ge {
                Some(g) => {
                    crossing_speed(&sol, g.as_ref(), e.t, &|y: &State<20>| to_state(y)).abs()
                }
                None => {
                    // Built-in domain event.
                    let g = |_t: f64, s: &PhaseState| domain_margin(model, &s.xv());
                    crossing_speed(&sol, &g, e.t, &|y: &State<20>| to_state(y)).abs()
                }
            };
            records.push(FlowEventRecord {
                name: e.name.clone(),
                t: e.t,
                state: to_state(&e.y),
                direction: e.direction,
                speed,
            });
        }
        Ok(Trajectory {
            times: sol.times.clone(),
            states,
            energies,
            fundamental: Some(fundamental),
            events: records,
            terminated_by: sol.terminated_by.clone(),
            truncated: sol.truncated.clone(),
            warnings: sol.warnings.clone(),
            n_evals: sol.n_evals,
            sol4: None,
            sol20: Some(sol),
        })
    } else {
        let f = |_t: f64, y: &State<4>| -> State<4> {
            let x = Vec2::new(y[0], y[1]);
            let g = model.grad_v(&x);
            State::<4>::new(y[2], y[3], -g[0], -g[1])
        };
        let y0 = state.to_vec4();
        let y0 = State::<4>::new(y0[0], y0[1], y0[2], y0[3]);
        let to_state = |y: &State<4>| PhaseState::from_vec4(y);
        let mut specs: Vec<EventSpec<'_, 4>> = Vec::new();
        for ev in &events {
            let g = &ev.g;
            specs.push(EventSpec::new(
                ev.name.clone(),
                move |t: f64, y: &State<4>| g(t, &to_state(y)),
                ev.direction,
                ev.terminal,
            ));
        }
        specs.push(EventSpec::new(
            "domain-exit",
            move |_t: f64, y: &State<4>| domain_margin(model, &Vec2::new(y[0], y[1])),
            -1,
            true,
        ));
        let sol = integrate_dop853(f, t_span.0, t_span.1, y0, &opts, &specs)?;
        let states: Vec<PhaseState> = sol.states.iter().map(|y| to_state(y)).collect();
        let energies: Vec<f64> = states.iter().map(|s| model.energy(s)).collect();
        let mut records = Vec::new();
        for e in &sol.events {
            let ge = events
                .iter()
                .find(|ev| ev.name == e.name)
                .map(|ev| &ev.g);
            let speed = match ge {
                Some(g) => {
                    crossing_speed(&sol, g.as_ref(), e.t, &|y: &State<4>| to_state(y)).abs()
                }
                None => {
                    let g = |_t: f64, s: &PhaseState| domain_margin(model, &s.xv());
                    crossing_speed(&sol, &g, e.t, &|y: &State<4>| to_state(y)).abs()
                }
            };
            records.push(FlowEventRecord {
                name: e.name.clone(),
                t: e.t,
                state: to_state(&e.y),
                direction: e.direction,
                speed,
            });
        }
        Ok(Trajectory {
            times: sol.times.clone(),
            states,
            energies,
            fundamental: None,
            events: records,
            terminated_by: sol.terminated_by.clone(),
            truncated: sol.truncated.clone(),
            warnings: sol.warnings.clone(),
            n_evals: sol.n_evals,
            sol4: Some(sol),
            sol20: None,
        })
    }
}

/// Fixed-step symplectic integration (implicit Gauss collocation, order 6)
/// for long-time runs.  No event detection or variational flow in this
/// mode; use [`integrate_flow`] for those.
pub fn integrate_flow_symplectic(
    model: &MechanicalModel,
    state: &PhaseState,
    t_span: (f64, f64),
    dt: f64,
) -> Result<Trajectory> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step size must be positive, got {dt}"
        )));
    }
    let f = |_t: f64, y: &State<4>| -> State<4> {
        let x = Vec2::new(y[0], y[1]);
        let g = model.grad_v(&x);
        State::<4>::new(y[2], y[3], -g[0], -g[1])
    };
    let w = state.to_vec4();
    let y0 = State::<4>::new(w[0], w[1], w[2], w[3]);
    let sol = integrate_gauss6(f, t_span.0, t_span.1, y0, dt)?;
    let states: Vec<PhaseState> = sol.states.iter().map(PhaseState::from_vec4).collect();
    let energies: Vec<f64> = states.iter().map(|s| model.energy(s)).collect();
    Ok(Trajectory {
        times: sol.times.clone(),
        states,
        energies,
        fundamental: None,
        events: vec![],
        terminated_by: None,
        truncated: sol.truncated.clone(),
        warnings: sol.warnings.clone(),
        n_evals: sol.n_evals,
        sol4: Some(sol),
        sol20: None,
    })
}

/// Floquet classification of the transverse multiplier pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FloquetClass {
    /// Real multipliers `{λ, 1/λ}` with `λ ≠ ±1`.
    Hyperbolic,
    /// Non-real multipliers on the unit circle.
    Elliptic,
    /// Degenerate: multipliers at `±1`.
    Parabolic,
}

/// Monodromy data of a periodic orbit.
#[derive(Debug, Clone, Serialize)]
pub struct MonodromyData {
    /// `Φ(T)`, row-major.
    pub matrix: [[f64; 4]; 4],
    /// All four Floquet multipliers as `(re, im)`, sorted by real part then
    /// imaginary part.
    pub multipliers: [(f64, f64); 4],
    /// The two multipliers not assigned to the trivial pair.
    pub transverse_multipliers: [(f64, f64); 2],
    /// Distance of the trivial pair from `+1` (flow and energy directions).
    pub trivial_pair_error: f64,
    pub class: FloquetClass,
    /// Closure residual `‖φ_T(z₀) − z₀‖` measured during the run.
    pub closure_error: f64,
    /// `‖Φ(T)ᵀ J₀ Φ(T) − J₀‖`.
    pub symplectic_defect: f64,
}

impl MonodromyData {
    pub fn matrix_na(&self) -> Mat4 {
        Mat4::from_fn(|i, j| self.matrix[i][j])
    }
}

/// Closure tolerance for [`monodromy`].
const CLOSURE_TOL: f64 = 1e-8;

/// Integrate the variational flow once around `orbit` and classify the
/// Floquet multipliers of `Φ(T)`.
pub fn monodromy(model: &MechanicalModel, orbit: &PeriodicOrbit) -> Result<MonodromyData> {
    if !(orbit.period > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "orbit period must be positive, got {}",
            orbit.period
        )));
    }
    let traj = integrate_flow(
        model,
        &orbit.initial_state,
        (0.0, orbit.period),
        1e-12,
        true,
        vec![],
    )?;
    if let Some(reason) = &traj.truncated {
        return Err(Error::Integration {
            t: traj.t_end(),
            reason: format!("monodromy run stopped early: {reason}"),
        });
    }
    if traj.terminated_by.is_some() {
        return Err(Error::Integration {
            t: traj.t_end(),
            reason: "monodromy run left the model domain".into(),
        });
    }
    let z0 = orbit.initial_state.to_vec4();
    let z1 = traj.final_state().to_vec4();
    let scale = z0.norm().max(1.0);
    let closure = (z1 - z0).norm();
    if closure > CLOSURE_TOL * scale {
        return Err(Error::NoConvergence(format!(
            "orbit does not close: ‖φ_T(z₀) − z₀‖ = {closure:.3e} (tolerance {:.1e})",
            CLOSURE_TOL * scale
        )));
    }
    let phi = traj.final_fundamental().unwrap();
    let j = standard_j0();
    let symplectic_defect = (phi.transpose() * j * phi - j).norm();

    let eig = phi.complex_eigenvalues();
    let mut mults: Vec<Complex<f64>> = eig.iter().copied().collect();
    mults.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap());

    // The trivial pair (flow direction and energy gradient) sits at +1; take
    // the two eigenvalues closest to it.
    let mut by_dist: Vec<usize> = (0..4).collect();
    by_dist.sort_by(|&i, &j| {
        (mults[i] - 1.0)
            .norm()
            .partial_cmp(&(mults[j] - 1.0).norm())
            .unwrap()
    });
    let trivial = [by_dist[0], by_dist[1]];
    let trans = [by_dist[2], by_dist[3]];
    let trivial_pair_error = trivial
        .iter()
        .map(|&i| (mults[i] - 1.0).norm())
        .fold(0.0, f64::max);

    let (l1, l2) = (mults[trans[0]], mults[trans[1]]);
    let class = classify_pair(l1, l2);

    Ok(MonodromyData {
        matrix: [
            [phi[(0, 0)], phi[(0, 1)], phi[(0, 2)], phi[(0, 3)]],
            [phi[(1, 0)], phi[(1, 1)], phi[(1, 2)], phi[(1, 3)]],
            [phi[(2, 0)], phi[(2, 1)], phi[(2, 2)], phi[(2, 3)]],
            [phi[(3, 0)], phi[(3, 1)], phi[(3, 2)], phi[(3, 3)]],
        ],
        multipliers: [
            (mults[0].re, mults[0].im),
            (mults[1].re, mults[1].im),
            (mults[2].re, mults[2].im),
            (mults[3].re, mults[3].im),
        ],
        transverse_multipliers: [(l1.re, l1.im), (l2.re, l2.im)],
        trivial_pair_error,
        class,
        closure_error: closure,
        symplectic_defect,
    })
}

fn classify_pair(l1: Complex<f64>, l2: Complex<f64>) -> FloquetClass {
    let tol = 1e-6;
    let big = l1.norm().max(l2.norm());
    let real = l1.im.abs() < tol * big.max(1.0) && l2.im.abs() < tol * big.max(1.0);
    if real {
        let away_from_unit = (l1.re.abs() - 1.0).abs() > tol && (l2.re.abs() - 1.0).abs() > tol;
        if away_from_unit {
            FloquetClass::Hyperbolic
        } else {
            FloquetClass::Parabolic
        }
    } else if ((l1.norm() - 1.0).abs() < tol) && ((l2.norm() - 1.0).abs() < tol) {
        FloquetClass::Elliptic
    } else {
        // Complex off-circle pairs (Krein quadruples) cannot occur for a
        // 4×4 symplectic matrix with a trivial pair at 1, but classify
        // defensively.
        FloquetClass::Hyperbolic
    }
}
