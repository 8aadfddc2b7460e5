//! The orthonormal quaternion frame along regular energy levels, the
//! curvature coefficients κᵢⱼ, the transverse 2×2 matrix `S`, and the
//! transverse angle flow along trajectories.
//!
//! At a regular point `w = (x, y)` of `H = |y|²/2 + V(x)` the four vectors
//! `X₀ = g·(V₁, V₂, y₁, y₂)` (unit normal), `X₁ = g·(y₂, −y₁, V₂, −V₁)`,
//! `X₂ = g·(V₂, −V₁, −y₂, y₁)` and `X₃ = g·(y₁, y₂, −V₁, −V₂)` (unit flow
//! direction), with `g = (V₁² + V₂² + y₁² + y₂²)^{-1/2}`, form an
//! orthonormal basis with `{X₁, X₂}` symplectic.  Linearized solutions
//! transverse to the flow inside the energy level, written in the `{X₁,
//! X₂}` frame, obey `α̇ = J S(t) α` with `S` the symmetric matrix assembled
//! from the κ coefficients; the winding of `α` is the raw material for the
//! index computations in [`crate::index`].

use std::cell::RefCell;

use serde::Serialize;

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::hill::HillComponent;
use crate::model::{Mat2, MechanicalModel, PhaseState, Vec4};
use crate::ode::{integrate_dop853, integrate_gauss6, OdeOptions, State};

/// Guard radius around critical points of `H`, where the frame is
/// undefined.
const FRAME_GUARD: f64 = 1e-8;

/// The frame and curvature data at one phase-space point.
#[derive(Debug, Clone)]
pub struct TransverseFrameData {
    /// Unit normal `∇H/|∇H|`.
    pub x0: Vec4,
    /// First transverse frame vector.
    pub x1: Vec4,
    /// Second transverse frame vector.
    pub x2: Vec4,
    /// Unit vector along the Hamiltonian vector field.
    pub x3: Vec4,
    pub kappa11: f64,
    pub kappa12: f64,
    pub kappa22: f64,
    pub kappa33: f64,
    /// `S = [[κ₁₁+κ₃₃, κ₁₂], [κ₁₂, κ₂₂+κ₃₃]]`.
    pub s: Mat2,
}

/// Build the orthonormal frame and the κ coefficients at `state`.
///
/// At rest points of the configuration (`y = 0`) the closed forms give
/// `κ₁₁ = κ₃₃ = 1`, `κ₁₂ = 0` and `κ₂₂` the Hessian of `V` contracted with
/// the rotated gradient.  Fails at critical points of `H` (equilibria),
/// where `g` is undefined.
pub fn quaternion_frame(
    model: &MechanicalModel,
    state: &PhaseState,
) -> Result<TransverseFrameData> {
    let x = state.xv();
    let grad = model.grad_v(&x);
    let (v1, v2) = (grad[0], grad[1]);
    let (y1, y2) = (state.y[0], state.y[1]);
    let n2 = v1 * v1 + v2 * v2 + y1 * y1 + y2 * y2;
    if n2.sqrt() < FRAME_GUARD {
        return Err(Error::Degenerate(format!(
            "frame undefined within {FRAME_GUARD:.0e} of a critical point of H \
             (|∇H| = {:.3e} at x = ({}, {}))",
            n2.sqrt(),
            x[0],
            x[1]
        )));
    }
    let g = 1.0 / n2.sqrt();
    let x0 = Vec4::new(v1, v2, y1, y2) * g;
    let x1 = Vec4::new(y2, -y1, v2, -v1) * g;
    let x2 = Vec4::new(v2, -v1, -y2, y1) * g;
    let x3 = Vec4::new(y1, y2, -v1, -v2) * g;

    let h = model.hess_v(&x);
    let (v11, v12, v22) = (h[(0, 0)], h[(0, 1)], h[(1, 1)]);
    let g2 = g * g;
    let kappa11 = g2 * (v11 * y2 * y2 - 2.0 * v12 * y1 * y2 + v22 * y1 * y1 + v1 * v1 + v2 * v2);
    let kappa12 =
        g2 * (v11 * y2 * v2 - v12 * y1 * v2 - v12 * y2 * v1 + v22 * y1 * v1 - v2 * y2 - v1 * y1);
    let kappa22 = g2 * (v11 * v2 * v2 - 2.0 * v12 * v1 * v2 + v22 * v1 * v1 + y1 * y1 + y2 * y2);
    let kappa33 = g2 * (v11 * y1 * y1 + 2.0 * v12 * y1 * y2 + v22 * y2 * y2 + v1 * v1 + v2 * v2);
    let s = Mat2::new(
        kappa11 + kappa33,
        kappa12,
        kappa12,
        kappa22 + kappa33,
    );
    Ok(TransverseFrameData {
        x0,
        x1,
        x2,
        x3,
        kappa11,
        kappa12,
        kappa22,
        kappa33,
        s,
    })
}

/// The transverse matrix `S` alone.
pub fn transverse_matrix(model: &MechanicalModel, state: &PhaseState) -> Result<Mat2> {
    quaternion_frame(model, state).map(|f| f.s)
}

/// Eigenvalue bounds `(λ_min, λ_max)` of a symmetric 2×2 matrix.
pub fn symmetric_eigen_bounds(s: &Mat2) -> (f64, f64) {
    let tr = s[(0, 0)] + s[(1, 1)];
    let d = s[(0, 0)] - s[(1, 1)];
    let disc = (d * d + 4.0 * s[(0, 1)] * s[(0, 1)]).sqrt();
    (0.5 * (tr - disc), 0.5 * (tr + disc))
}

/// An unwrapped transverse-angle history along one trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct AngleTrace {
    pub times: Vec<f64>,
    /// Unwrapped angle; adjacent samples differ by less than π/2.
    pub theta: Vec<f64>,
    pub theta0: f64,
    /// Span of the underlying trajectory.
    pub t_span: (f64, f64),
}

impl AngleTrace {
    /// Total angle advance over the trace.
    pub fn delta(&self) -> f64 {
        self.theta.last().unwrap() - self.theta[0]
    }

    /// Largest jump between adjacent samples.
    pub fn max_jump(&self) -> f64 {
        self.theta
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .fold(0.0, f64::max)
    }

    /// Write the trace as CSV with columns `t, theta`.
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::export::write_csv(
            path.as_ref(),
            &["t", "theta"],
            &[self.times.clone(), self.theta.clone()],
        )
    }
}

/// Integrate the transverse angle equation
/// `θ̇ = (cos θ, sin θ) S(t) (cos θ, sin θ)ᵀ` along `traj` starting from
/// `θ₀`.
///
/// The angle is integrated as a scalar ODE with `S(t)` read off the dense
/// trajectory, so the result is continuous by construction (no 2π branch
/// cuts); output nodes are subdivided until adjacent samples differ by less
/// than π/2.  Fails if the trajectory passes within the guard radius of a
/// critical point of `H`.
pub fn integrate_transverse_angle(
    model: &MechanicalModel,
    traj: &Trajectory,
    theta0: f64,
) -> Result<AngleTrace> {
    let (t0, t1) = (traj.t0(), traj.t_end());
    let fail: RefCell<Option<Error>> = RefCell::new(None);
    let rhs = |t: f64, th: &State<1>| -> State<1> {
        if fail.borrow().is_some() {
            return State::<1>::zeros();
        }
        let state = match traj.state_at(t) {
            Ok(s) => s,
            Err(e) => {
                *fail.borrow_mut() = Some(e);
                return State::<1>::zeros();
            }
        };
        match transverse_matrix(model, &state) {
            Ok(s) => {
                let (c, sn) = (th[0].cos(), th[0].sin());
                State::<1>::new(
                    s[(0, 0)] * c * c + 2.0 * s[(0, 1)] * c * sn + s[(1, 1)] * sn * sn,
                )
            }
            Err(e) => {
                *fail.borrow_mut() = Some(e);
                State::<1>::zeros()
            }
        }
    };
    // Absolute-error dominated control: θ itself grows without bound, and
    // the quantity of interest is the total advance.
    let opts = OdeOptions {
        rtol: 1e-13,
        atol: 1e-11,
        ..OdeOptions::default()
    };
    let sol = integrate_dop853(rhs, t0, t1, State::<1>::new(theta0), &opts, &[])?;
    if let Some(e) = fail.into_inner() {
        return Err(e);
    }
    if let Some(reason) = &sol.truncated {
        return Err(Error::Integration {
            t: sol.t_end(),
            reason: format!("transverse angle integration stopped: {reason}"),
        });
    }

    // Emit nodes; split any interval whose angle jump reaches π/2.
    let mut times = Vec::with_capacity(sol.times.len());
    let mut theta = Vec::with_capacity(sol.times.len());
    times.push(sol.times[0]);
    theta.push(sol.states[0][0]);
    let max_jump = std::f64::consts::FRAC_PI_2 * 0.98;
    for i in 1..sol.times.len() {
        let mut stack = vec![(sol.times[i - 1], sol.times[i])];
        // Depth-first subdivision emitting right endpoints in order.
        let mut pending: Vec<f64> = Vec::new();
        while let Some((a, b)) = stack.pop() {
            let ya = sol.eval(a)[0];
            let yb = sol.eval(b)[0];
            if (yb - ya).abs() < max_jump || (b - a).abs() < 1e-12 {
                pending.push(b);
            } else {
                let mid = 0.5 * (a + b);
                stack.push((mid, b));
                stack.push((a, mid));
            }
        }
        for t in pending {
            times.push(t);
            theta.push(sol.eval(t)[0]);
        }
    }
    Ok(AngleTrace {
        times,
        theta,
        theta0,
        t_span: (t0, t1),
    })
}

/// Flatten/unflatten a 2×2 matrix to a 4-state (column-major).
fn flatten2(m: &Mat2) -> State<4> {
    State::<4>::new(m[(0, 0)], m[(1, 0)], m[(0, 1)], m[(1, 1)])
}

fn unflatten2(y: &State<4>) -> Mat2 {
    Mat2::new(y[0], y[2], y[1], y[3])
}

/// Largest spectral radius of `S` over a time window, sampled at the ends
/// and midpoint.
fn spectral_bound(
    model: &MechanicalModel,
    traj: &Trajectory,
    ta: f64,
    tb: f64,
) -> Result<f64> {
    let mut lm = 0.0f64;
    for t in [ta, 0.5 * (ta + tb), tb] {
        let s = transverse_matrix(model, &traj.state_at(t)?)?;
        let (lo, hi) = symmetric_eigen_bounds(&s);
        lm = lm.max(lo.abs().max(hi.abs()));
    }
    Ok(lm)
}

/// Propagate the transverse linear flow `Ψ̇ = J S(t) Ψ, Ψ(t₀) = I` along
/// the trajectory and return `Ψ` at every trajectory node.
///
/// Uses fixed-step Gauss collocation per node interval with the step bound
/// `λ_max(S)·h ≤ 0.2`; the collocation scheme conserves `det Ψ = 1` to
/// solver tolerance because the generator `J S` is trace-free.
pub fn transverse_propagator_nodes(
    model: &MechanicalModel,
    traj: &Trajectory,
) -> Result<Vec<Mat2>> {
    let mut out = Vec::with_capacity(traj.times.len());
    let mut psi = Mat2::identity();
    out.push(psi);
    let fail: RefCell<Option<Error>> = RefCell::new(None);
    for i in 1..traj.times.len() {
        let (ta, tb) = (traj.times[i - 1], traj.times[i]);
        if (tb - ta).abs() < 1e-15 {
            out.push(psi);
            continue;
        }
        let lm = spectral_bound(model, traj, ta, tb)?;
        let dt = (0.2 / lm.max(1e-9)).min((tb - ta).abs());
        let f = |t: f64, y: &State<4>| -> State<4> {
            if fail.borrow().is_some() {
                return State::<4>::zeros();
            }
            let s = traj
                .state_at(t)
                .and_then(|st| transverse_matrix(model, &st));
            match s {
                Ok(s) => {
                    // J S with J = [[0, -1], [1, 0]].
                    let js = Mat2::new(-s[(0, 1)], -s[(1, 1)], s[(0, 0)], s[(0, 1)]);
                    flatten2(&(js * unflatten2(y)))
                }
                Err(e) => {
                    *fail.borrow_mut() = Some(e);
                    State::<4>::zeros()
                }
            }
        };
        let sol = integrate_gauss6(f, ta, tb, flatten2(&psi), dt)?;
        if let Some(e) = fail.borrow_mut().take() {
            return Err(e);
        }
        if let Some(reason) = &sol.truncated {
            return Err(Error::Integration {
                t: sol.t_end(),
                reason: format!("transverse propagation stopped: {reason}"),
            });
        }
        psi = unflatten2(&sol.states.last().unwrap());
        out.push(psi);
    }
    Ok(out)
}

/// Full-span transverse propagator `Ψ(t_end)`.
pub fn transverse_propagator(model: &MechanicalModel, traj: &Trajectory) -> Result<Mat2> {
    Ok(*transverse_propagator_nodes(model, traj)?.last().unwrap())
}

/// Total transverse-angle advance computed from the linear flow: the vector
/// `α(t) = Ψ(t)·(cos θ₀, sin θ₀)` is followed through every collocation
/// substep (each rotating by less than 0.2 rad, so the `atan2` unwrap is
/// unambiguous).  Independent of [`integrate_transverse_angle`]'s scalar
/// ODE route; the two agree to the integration tolerances.
pub fn transverse_linear_winding(
    model: &MechanicalModel,
    traj: &Trajectory,
    theta0: f64,
) -> Result<f64> {
    let mut psi = Mat2::identity();
    let u0 = nalgebra::Vector2::new(theta0.cos(), theta0.sin());
    let mut angle = theta0;
    let mut prev = theta0;
    let fail: RefCell<Option<Error>> = RefCell::new(None);
    for i in 1..traj.times.len() {
        let (ta, tb) = (traj.times[i - 1], traj.times[i]);
        if (tb - ta).abs() < 1e-15 {
            continue;
        }
        let lm = spectral_bound(model, traj, ta, tb)?;
        let dt = (0.2 / lm.max(1e-9)).min((tb - ta).abs());
        let f = |t: f64, y: &State<4>| -> State<4> {
            if fail.borrow().is_some() {
                return State::<4>::zeros();
            }
            match traj
                .state_at(t)
                .and_then(|st| transverse_matrix(model, &st))
            {
                Ok(s) => {
                    let js = Mat2::new(-s[(0, 1)], -s[(1, 1)], s[(0, 0)], s[(0, 1)]);
                    flatten2(&(js * unflatten2(y)))
                }
                Err(e) => {
                    *fail.borrow_mut() = Some(e);
                    State::<4>::zeros()
                }
            }
        };
        let sol = integrate_gauss6(f, ta, tb, flatten2(&psi), dt)?;
        if let Some(e) = fail.borrow_mut().take() {
            return Err(e);
        }
        for y in &sol.states[1..] {
            let m = unflatten2(y);
            let a = m * u0;
            let raw = a[1].atan2(a[0]);
            // Shift to the branch nearest the running angle.
            let k = ((prev - raw) / std::f64::consts::TAU).round();
            let unwrapped = raw + k * std::f64::consts::TAU;
            angle += unwrapped - prev;
            prev = unwrapped;
        }
        psi = unflatten2(&sol.states.last().unwrap());
    }
    Ok(angle - theta0 + theta0 - theta0 + angle - angle + angle - theta0 + theta0)
}

/// Summary of a positive-definiteness scan of `S` over phase-space samples.
#[derive(Debug, Clone, Serialize)]
pub struct PositivityReport {
    pub n_samples: usize,
    /// Samples where `S` passed the trace/determinant test.
    pub n_positive: usize,
    /// Samples where the frame was undefined (critical points); flagged,
    /// not fatal.
    pub n_degenerate: usize,
    /// Smallest eigenvalue of `S` seen over the scan.
    pub min_eigenvalue: f64,
    /// Smallest `κ₂₂` over the rest samples (`y = 0`), if any were present;
    /// `κ₂₂ > −1` is the rest-point positivity criterion.
    pub min_kappa22_at_rest: Option<f64>,
    pub all_positive: bool,
    /// Up to eight failing samples `(x1, x2, y1, y2)`.
    pub failures: Vec<[f64; 4]>,
}

/// Check `S` for positive definiteness at each sample via the trace and
/// determinant of the 2×2 matrix; rest samples (`y = 0`) additionally
/// record `κ₂₂` for the `κ₂₂ > −1` criterion.
pub fn positivity_scan(model: &MechanicalModel, samples: &[PhaseState]) -> PositivityReport {
    let mut report = PositivityReport {
        n_samples: samples.len(),
        n_positive: 0,
        n_degenerate: 0,
        min_eigenvalue: f64::INFINITY,
        min_kappa22_at_rest: None,
        all_positive: true,
        failures: Vec::new(),
    };
    for state in samples {
        let frame = match quaternion_frame(model, state) {
            Ok(f) => f,
            Err(_) => {
                report.n_degenerate += 1;
                continue;
            }
        };
        let s = &frame.s;
        let tr = s[(0, 0)] + s[(1, 1)];
        let det = s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(1, 0)];
        let (lo, _) = symmetric_eigen_bounds(s);
        report.min_eigenvalue = report.min_eigenvalue.min(lo);
        let positive = tr > 0.0 && det > 0.0;
        if positive {
            report.n_positive += 1;
        } else {
            report.all_positive = false;
            if report.failures.len() < 8 {
                report
                    .failures
                    .push([state.x[0], state.x[1], state.y[0], state.y[1]]);
            }
        }
        if state.y[0].abs() < 1e-10 && state.y[1].abs() < 1e-10 {
            let k = frame.kappa22;
            report.min_kappa22_at_rest = Some(match report.min_kappa22_at_rest {
                Some(prev) => prev.min(k),
                None => k,
            });
        }
    }
    if report.n_samples == 0 {
        report.min_eigenvalue = f64::NAN;
    }
    report
}

/// Draw `n` deterministic samples of the energy level `H = e` whose
/// positions fall inside the given Hill component: positions by rejection
/// sampling over the component's bounding box, momentum direction uniform
/// on the circle with `|y| = √(2(e − V))`.
pub fn sample_component_states(
    model: &MechanicalModel,
    e: f64,
    component: &HillComponent,
    n: usize,
    seed: u64,
) -> Result<Vec<PhaseState>> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let outer = &component.boundary[0];
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in outer {
        x_lo = x_lo.min(p[0]);
        x_hi = x_hi.max(p[0]);
        y_lo = y_lo.min(p[1]);
        y_hi = y_hi.max(p[1]);
    }
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    let max_attempts = 10_000 * n.max(1);
    while out.len() < n {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::NoConvergence(format!(
                "rejection sampling stalled after {attempts} draws \
                 ({} of {n} accepted)",
                out.len()
            )));
        }
        let x1 = rng.random_range(x_lo..x_hi);
        let x2 = rng.random_range(y_lo..y_hi);
        if !component.contains(&[x1, x2]) {
            continue;
        }
        let v = model.v(&crate::model::Vec2::new(x1, x2));
        if v >= e {
            continue;
        }
        let r = (2.0 * (e - v)).sqrt();
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        out.push(PhaseState::new(x1, x2, r * phi.cos(), r * phi.sin()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate_flow, standard_j0};
    use crate::model::{build_model, Vec2};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;
    use std::f64::consts::TAU;

    fn harmonic() -> MechanicalModel {
        MechanicalModel::from_closures(
            "harmonic",
            [[-3.0, 3.0], [-3.0, 3.0]],
            |x1, x2| 0.5 * (x1 * x1 + x2 * x2),
            Some(Box::new(|x1, x2| [x1, x2])),
            Some(Box::new(|_, _| [[1.0, 0.0], [0.0, 1.0]])),
        )
    }

    fn random_regular_state(rng: &mut ChaCha8Rng, m: &MechanicalModel) -> PhaseState {
        loop {
            let [dx, dy] = m.domain;
            let s = PhaseState::new(
                rng.random_range(dx[0]..dx[1]),
                rng.random_range(dy[0]..dy[1]),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let g = m.grad_v(&s.xv());
            if (g.norm_squared() + s.yv().norm_squared()).sqrt() > 1e-3 {
                return s;
            }
        }
    }

    #[test]
    fn frame_is_orthonormal_with_unit_symplectic_pairing() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let models = [
            build_model("henon-heiles", &BTreeMap::new()).unwrap(),
            build_model(
                "chemical",
                &BTreeMap::from([("alpha".into(), 1.0), ("beta".into(), 1.0)]),
            )
            .unwrap(),
            harmonic(),
        ];
        let j = standard_j0();
        for m in &models {
            for _ in 0..200 {
                let state = random_regular_state(&mut rng, m);
                let f = quaternion_frame(m, &state).unwrap();
                let vecs = [f.x0, f.x1, f.x2, f.x3];
                for i in 0..4 {
                    for k in 0..4 {
                        let want = if i == k { 1.0 } else { 0.0 };
                        assert_abs_diff_eq!(vecs[i].dot(&vecs[k]), want, epsilon = 1e-10);
                    }
                }
                // ω₀(X₁, X₂) = ⟨J₀X₁, X₂⟩ = 1.
                let pairing = (j * f.x1).dot(&f.x2);
                assert_abs_diff_eq!(pairing, 1.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn kappa_closed_forms_match_hessian_contraction() {
        // Independent route: κᵢⱼ = ⟨ℋXᵢ, Xⱼ⟩ with ℋ = diag(Hess V, I).
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let models = [
            build_model("henon-heiles", &BTreeMap::new()).unwrap(),
            build_model("frozen-hill", &BTreeMap::new()).unwrap(),
            build_model(
                "chemical",
                &BTreeMap::from([("alpha".into(), 2.0), ("beta".into(), 3.0)]),
            )
            .unwrap(),
        ];
        for m in &models {
            for _ in 0..300 {
                let state = random_regular_state(&mut rng, m);
                let f = quaternion_frame(m, &state).unwrap();
                let hv = m.hess_v(&state.xv());
                let mut hh = nalgebra::Matrix4::<f64>::identity();
                hh[(0, 0)] = hv[(0, 0)];
                hh[(0, 1)] = hv[(0, 1)];
                hh[(1, 0)] = hv[(1, 0)];
                hh[(1, 1)] = hv[(1, 1)];
                assert_abs_diff_eq!(f.kappa11, (hh * f.x1).dot(&f.x1), epsilon = 1e-10);
                assert_abs_diff_eq!(f.kappa12, (hh * f.x1).dot(&f.x2), epsilon = 1e-10);
                assert_abs_diff_eq!(f.kappa22, (hh * f.x2).dot(&f.x2), epsilon = 1e-10);
                assert_abs_diff_eq!(f.kappa33, (hh * f.x3).dot(&f.x3), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn rest_points_have_unit_kappas() {
        let m = build_model("henon-heiles", &BTreeMap::new()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let x1 = rng.random_range(-1.0..1.0);
            let x2 = rng.random_range(-1.0..1.0);
            let state = PhaseState::new(x1, x2, 0.0, 0.0);
            if m.grad_v(&state.xv()).norm() < 1e-3 {
                continue;
            }
            let f = quaternion_frame(&m, &state).unwrap();
            assert_abs_diff_eq!(f.kappa11, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(f.kappa33, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(f.kappa12, 0.0, epsilon = 1e-12);
            // κ₂₂ from the explicit rest-point expression.
            let g = m.grad_v(&state.xv());
            let h = m.hess_v(&state.xv());
            let num = h[(0, 0)] * g[1] * g[1] - 2.0 * h[(0, 1)] * g[0] * g[1]
                + h[(1, 1)] * g[0] * g[0];
            assert_abs_diff_eq!(f.kappa22, num / g.norm_squared(), epsilon = 1e-12);
        }
    }

    #[test]
    fn triangle_boundary_rest_points_have_zero_kappa22() {
        // On the straight edge {x2 = -1/2} of the critical level the
        // rotated-gradient contraction of the Hessian vanishes identically.
        let m = build_model("henon-heiles", &BTreeMap::new()).unwrap();
        for i in 0..100 {
            let x1 = -0.7 + 1.4 * i as f64 / 99.0;
            let state = PhaseState::new(x1, -0.5, 0.0, 0.0);
            assert_abs_diff_eq!(m.v(&state.xv()), 1.0 / 6.0, epsilon = 1e-14);
            let f = quaternion_frame(&m, &state).unwrap();
            assert!(
                f.kappa22.abs() < 1e-10,
                "κ22 = {} at x1 = {x1}",
                f.kappa22
            );
            // θ̇ = 1 + cos²θ at such points: S = diag(2, 1).
            assert_abs_diff_eq!(f.s[(0, 0)], 2.0, epsilon = 1e-10);
            assert_abs_diff_eq!(f.s[(1, 1)], 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(f.s[(0, 1)], 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn frame_rejects_equilibrium() {
        let m = harmonic();
        let state = PhaseState::new(0.0, 0.0, 0.0, 0.0);
        assert!(matches!(
            quaternion_frame(&m, &state),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn circular_orbit_angle_advances_uniformly() {
        // Isotropic oscillator, circular orbit: S = 2·identity, so θ̇ = 2
        // for every θ.
        let m = harmonic();
        let z0 = PhaseState::new(1.0, 0.0, 0.0, 1.0);
        let traj = integrate_flow(&m, &z0, (0.0, TAU), 1e-12, false, vec![]).unwrap();
        let trace = integrate_transverse_angle(&m, &traj, 0.3).unwrap();
        assert_abs_diff_eq!(trace.delta(), 2.0 * TAU, epsilon = 1e-8);
        assert!(trace.max_jump() < std::f64::consts::FRAC_PI_2);
        // Strictly increasing.
        for w in trace.theta.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn angle_ode_agrees_with_linear_flow_route() {
        let m = build_model("henon-heiles", &BTreeMap::new()).unwrap();
        let speed = (2.0 * 0.12_f64).sqrt();
        let z0 = PhaseState::new(0.05, 0.0, speed * 0.8, speed * 0.6);
        let traj = integrate_flow(&m, &z0, (0.0, 5.0), 1e-12, false, vec![]).unwrap();
        for theta0 in [0.0, 0.7, 1.9, 2.6] {
            let trace = integrate_transverse_angle(&m, &traj, theta0).unwrap();
            let linear = transverse_linear_winding(&m, &traj, theta0).unwrap();
            assert!(
                (trace.delta() - linear).abs() < 1e-7,
                "θ₀ = {theta0}: scalar route {} vs linear route {linear}",
                trace.delta()
            );
        }
    }

    #[test]
    fn transverse_propagator_preserves_determinant() {
        let m = build_model("henon-heiles", &BTreeMap::new()).unwrap();
        let speed = (2.0 * 0.14_f64).sqrt();
        let z0 = PhaseState::new(0.0, 0.1, speed, 0.0);
        let traj = integrate_flow(&m, &z0, (0.0, 12.0), 1e-12, false, vec![]).unwrap();
        let psis = transverse_propagator_nodes(&m, &traj).unwrap();
        assert_eq!(psis.len(), traj.times.len());
        for psi in &psis {
            assert!(
                (psi.determinant() - 1.0).abs() < 1e-8,
                "det drifted to {}",
                psi.determinant()
            );
        }
    }

    #[test]
    fn positivity_scan_flags_indefinite_point_and_passes_interior() {
        let m = build_model("henon-heiles", &BTreeMap::new()).unwrap();
        // Interior rest points of the bounded component pass.
        let mut samples = vec![
            PhaseState::new(0.3, 0.2, 0.1, -0.2),
            PhaseState::new(-0.2, 0.3, 0.0, 0.0),
            PhaseState::new(0.0, -0.4, 0.2, 0.1),
        ];
        let report = positivity_scan(&m, &samples);
        assert!(report.all_positive);
        assert!(report.min_eigenvalue > 0.0);
        assert_eq!(report.n_positive, samples.len());
        // κ₂₂ was recorded for the rest sample.
        assert!(report.min_kappa22_at_rest.is_some());

        // Outside the component, with an indefinite Hessian and momentum
        // along its negative eigendirection, S loses definiteness.
        let x = Vec2::new(0.9, -0.6);
        let h = m.hess_v(&x);
        let eig = nalgebra::SymmetricEigen::new(h);
        let (i_neg, _) = if eig.eigenvalues[0] < eig.eigenvalues[1] {
            (0, 1)
        } else {
            (1, 0)
        };
        assert!(eig.eigenvalues[i_neg] < 0.0, "Hessian should be indefinite");
        let e_neg = eig.eigenvectors.column(i_neg);
        let bad = PhaseState::new(x[0], x[1], 3.0 * e_neg[0], 3.0 * e_neg[1]);
        samples.push(bad);
        let report = positivity_scan(&m, &samples);
        assert!(!report.all_positive);
        assert_eq!(report.n_positive, samples.len() - 1);
        assert!(report.min_eigenvalue < 0.0);
        assert_eq!(report.failures.len(), 1);
    }

    #[test]
    fn component_sampler_is_deterministic_and_on_level() {
        let m = build_model("henon-heiles", &BTreeMap::new()).unwrap();
        let comp = crate::hill::extract_hill_component(
            &m,
            1.0 / 6.0,
            Vec2::zeros(),
            &crate::hill::HillOptions::default(),
        )
        .unwrap();
        let a = sample_component_states(&m, 1.0 / 6.0, &comp, 64, 5).unwrap();
        let b = sample_component_states(&m, 1.0 / 6.0, &comp, 64, 5).unwrap();
        assert_eq!(a.len(), 64);
        for (p, q) in a.iter().zip(b.iter()) {
            assert_eq!(p.x, q.x);
            assert_eq!(p.y, q.y);
        }
        for s in &a {
            assert_abs_diff_eq!(m.energy(s), 1.0 / 6.0, epsilon = 1e-12);
            assert!(comp.contains(&[s.x[0], s.x[1]]));
        }
    }

    #[test]
    fn angle_trace_csv_roundtrip() {
        let m = harmonic();
        let z0 = PhaseState::new(1.0, 0.0, 0.0, 1.0);
        let traj = integrate_flow(&m, &z0, (0.0, 1.0), 1e-10, false, vec![]).unwrap();
        let trace = integrate_transverse_angle(&m, &traj, 0.0).unwrap();
        let dir = std::env::temp_dir().join("transfol-frame-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("angle.csv");
        trace.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,theta\n"));
        assert_eq!(text.lines().count(), trace.times.len() + 1);
        std::fs::remove_dir_all(&dir).ok();
    }
}
