//! Critical points of the potential, zero-velocity curves, and bounded Hill
//! components.
//!
//! The Hill region at energy `E` is `{x : V(x) <= E}`; its boundary, the
//! zero-velocity curve, is where a trajectory of energy `E` must have `y =
//! 0`.  This module finds and classifies critical points of `V`, traces
//! level sets of `V` with a predictor–corrector that survives saddle
//! touches, and extracts connected sub-level components (optionally cut
//! along user-provided barrier segments such as projected Lyapunov orbits,
//! which is how the compact core `K_E` is built for energies slightly above
//! a saddle value).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Mat2, MechanicalModel, Vec2};

/// Classification of a nondegenerate critical point of `V`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CriticalKind {
    Minimum,
    Maximum,
    Saddle,
    /// Hessian has an eigenvalue at or below the degeneracy tolerance.
    Degenerate,
}

/// Saddle-center data attached to a saddle of `V`: principal Hessian values
/// `a < 0 < b`, the hyperbolic rate `alpha = sqrt(-a)`, the elliptic
/// frequency `omega = sqrt(b)`, and the corresponding unit eigendirections.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaddleCenterData {
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub omega: f64,
    pub hyperbolic_dir: [f64; 2],
    pub elliptic_dir: [f64; 2],
}

impl SaddleCenterData {
    pub fn hyperbolic_axis(&self) -> Vec2 {
        Vec2::new(self.hyperbolic_dir[0], self.hyperbolic_dir[1])
    }
    pub fn elliptic_axis(&self) -> Vec2 {
        Vec2::new(self.elliptic_dir[0], self.elliptic_dir[1])
    }
}

/// A critical point of `V` with Hessian eigendata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub location: [f64; 2],
    pub value: f64,
    pub kind: CriticalKind,
    /// Hessian eigenvalues in ascending order.
    pub eigenvalues: [f64; 2],
    /// Unit eigenvectors matching `eigenvalues`.
    pub eigenvectors: [[f64; 2]; 2],
    /// Present exactly when `kind == Saddle`.
    pub saddle_center: Option<SaddleCenterData>,
}

impl CriticalPoint {
    pub fn location_vec(&self) -> Vec2 {
        Vec2::new(self.location[0], self.location[1])
    }
}

/// Tolerance below which `|∇V|` counts as critical.
const GRAD_TOL: f64 = 1e-10;
/// Merge radius for duplicate critical points.
const MERGE_TOL: f64 = 1e-8;
/// Eigenvalue magnitude below which the Hessian counts as degenerate.
const DEGENERATE_TOL: f64 = 1e-8;
/// `‖∇V‖` threshold at which the contour tracer declares a singular touch.
const SINGULAR_TOL: f64 = 1e-7;

fn classify(model: &MechanicalModel, x: &Vec2) -> CriticalPoint {
    let value = model.v(x);
    let h = model.hess_v(x);
    let sym = nalgebra::SymmetricEigen::new(h);
    let (mut l1, mut l2) = (sym.eigenvalues[0], sym.eigenvalues[1]);
    let (mut v1, mut v2) = (
        Vec2::new(sym.eigenvectors[(0, 0)], sym.eigenvectors[(1, 0)]),
        Vec2::new(sym.eigenvectors[(0, 1)], sym.eigenvectors[(1, 1)]),
    );
    if l1 > l2 {
        std::mem::swap(&mut l1, &mut l2);
        std::mem::swap(&mut v1, &mut v2);
    }
    let kind = if l1.abs() <= DEGENERATE_TOL || l2.abs() <= DEGENERATE_TOL {
        CriticalKind::Degenerate
    } else if l1 > 0.0 {
        CriticalKind::Minimum
    } else if l2 < 0.0 {
        CriticalKind::Maximum
    } else {
        CriticalKind::Saddle
    };
    let saddle_center = (kind == CriticalKind::Saddle).then(|| SaddleCenterData {
        a: l1,
        b: l2,
        alpha: (-l1).sqrt(),
        omega: l2.sqrt(),
        hyperbolic_dir: [v1[0], v1[1]],
        elliptic_dir: [v2[0], v2[1]],
    });
    CriticalPoint {
        location: [x[0], x[1]],
        value,
        kind,
        eigenvalues: [l1, l2],
        eigenvectors: [[v1[0], v1[1]], [v2[0], v2[1]]],
        saddle_center,
    }
}

/// Damped Newton iteration on `∇V = 0` from one seed.  Returns the converged
/// point or `None` if the iteration leaves the inflated rectangle or stalls.
fn newton_critical(model: &MechanicalModel, seed: Vec2, rect: &[[f64; 2]; 2]) -> Option<Vec2> {
    let diag = Vec2::new(rect[0][1] - rect[0][0], rect[1][1] - rect[1][0]).norm();
    let mut x = seed;
    for _ in 0..80 {
        let g = model.grad_v(&x);
        if !g[0].is_finite() || !g[1].is_finite() {
            return None;
        }
        if g.norm() < GRAD_TOL {
            return Some(x);
        }
        let h = model.hess_v(&x);
        // Levenberg-style damping when the Hessian is near-singular.
        let mut lambda = 0.0;
        let step = loop {
            let hd = h + Mat2::identity() * lambda;
            match hd.try_inverse() {
                Some(inv) => {
                    let s: Vec2 = -(inv * g);
                    if s.norm().is_finite() && s.norm() < 0.5 * diag {
                        break s;
                    }
                }
                None => {}
            }
            lambda = if lambda == 0.0 { 1e-8 } else { lambda * 10.0 };
            if lambda > 1e8 {
                return None;
            }
        };
        // Backtrack until the gradient norm does not blow up.
        let mut t = 1.0;
        let g0 = g.norm();
        let mut accepted = false;
        for _ in 0..30 {
            let cand = x + step * t;
            let gn = model.grad_v(&cand).norm();
            if gn.is_finite() && gn <= g0 * (1.0 - 0.25 * t) + 1e-30 {
                x = cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // Plain full step as a last resort; Newton may be in the
            // quadratic basin even when the norm test is noisy.
            x += step;
        }
        let margin = 0.5 * diag;
        if x[0] < rect[0][0] - margin
            || x[0] > rect[0][1] + margin
            || x[1] < rect[1][0] - margin
            || x[1] > rect[1][1] + margin
        {
            return None;
        }
    }
    let g = model.grad_v(&x);
    (g.norm() < GRAD_TOL).then_some(x)
}

/// Find and classify the critical points of `V` inside a rectangle, by
/// damped Newton iteration from a uniform grid of seeds.
///
/// `rect` defaults to the model domain and must lie inside it; `resolution`
/// is the seed count per axis (default 64).
pub fn find_critical_points(
    model: &MechanicalModel,
    rect: Option<[[f64; 2]; 2]>,
    resolution: Option<usize>,
) -> Result<Vec<CriticalPoint>> {
    let rect = rect.unwrap_or(model.domain);
    let n = resolution.unwrap_or(64);
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid resolution must be at least 2, got {n}"
        )));
    }
    let dom = model.domain;
    if rect[0][0] < dom[0][0] - 1e-12
        || rect[0][1] > dom[0][1] + 1e-12
        || rect[1][0] < dom[1][0] - 1e-12
        || rect[1][1] > dom[1][1] + 1e-12
    {
        return Err(Error::InvalidArgument(
            "search rectangle must lie inside the model domain".into(),
        ));
    }

    let mut found: Vec<Vec2> = Vec::new();
    for i in 0..=n {
        for j in 0..=n {
            let seed = Vec2::new(
                rect[0][0] + (rect[0][1] - rect[0][0]) * i as f64 / n as f64,
                rect[1][0] + (rect[1][1] - rect[1][0]) * j as f64 / n as f64,
            );
            let Some(mut x) = newton_critical(model, seed, &rect) else {
                continue;
            };
            if let Some(p) = model.x2_period {
                x[1] = x[1].rem_euclid(p);
            }
            if x[0] < rect[0][0] - 1e-9
                || x[0] > rect[0][1] + 1e-9
                || x[1] < rect[1][0] - 1e-9
                || x[1] > rect[1][1] + 1e-9
            {
                continue;
            }
            let dup = found.iter().any(|q| {
                let mut d2 = (x[0] - q[0]).powi(2);
                let dy = match model.x2_period {
                    Some(p) => {
                        let raw = (x[1] - q[1]).rem_euclid(p);
                        raw.min(p - raw)
                    }
                    None => x[1] - q[1],
                };
                d2 += dy * dy;
                d2.sqrt() < MERGE_TOL
            });
            if !dup {
                found.push(x);
            }
        }
    }
    if found.is_empty() {
        return Err(Error::NoConvergence(
            "no critical points found from any grid seed".into(),
        ));
    }
    let mut points: Vec<CriticalPoint> = found.iter().map(|x| classify(model, x)).collect();
    points.sort_by(|a, b| {
        (a.value, a.location[0], a.location[1])
            .partial_cmp(&(b.value, b.location[0], b.location[1]))
            .unwrap()
    });
    Ok(points)
}

/// Closed forms for the collinear rest point and the energy thresholds of
/// the planar two-center problem with masses `mu` at `(-1, 0)` and `1 - mu`
/// at `(1, 0)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EulerCriticalData {
    pub mu: f64,
    /// Collinear rest point `(x1_bar, 0)` between the centers.
    pub x1_bar: f64,
    /// Critical energy: potential value at the rest point.
    pub c_crit: f64,
    /// Threshold below which the `u`-factor has interior critical points.
    pub c1: f64,
    /// Threshold at which the `v`-factor develops interior critical points.
    pub c2: f64,
}

/// Compute [`EulerCriticalData`] for `mu` in `(0, 1)`.
pub fn euler_critical_data(mu: f64) -> Result<EulerCriticalData> {
    if !(0.0 < mu && mu < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "mu must lie in (0,1), got {mu}"
        )));
    }
    let root = (mu - mu * mu).sqrt();
    let data = EulerCriticalData {
        mu,
        x1_bar: (2.0 * mu - 1.0) / (1.0 + 2.0 * root),
        c_crit: -0.5 - root,
        c1: -0.5,
        c2: -(mu - 0.5).abs(),
    };
    debug_assert!(data.c_crit < data.c1 && data.c1 <= data.c2 && data.c2 <= 0.0);
    Ok(data)
}

// ---------------------------------------------------------------------------
// Zero-velocity curve tracing
// ---------------------------------------------------------------------------

/// A traced polyline on `{V = E}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZvcPolyline {
    pub energy: f64,
    /// Nodes in trace order; approximately arclength-spaced.
    pub points: Vec<[f64; 2]>,
    /// Whether the trace returned to its start.
    pub closed: bool,
    /// Saddle touches encountered (refined critical locations).
    pub singular_stops: Vec<[f64; 2]>,
}

/// Project `x` onto `{V = E}` along the gradient.  Fails if the Newton
/// iteration cannot reach `|V - E| < 1e-12 * max(1, |E|)`.
fn project_to_level(model: &MechanicalModel, e: f64, mut x: Vec2) -> Option<Vec2> {
    let tol = 1e-12 * e.abs().max(1.0);
    for _ in 0..60 {
        let r = model.v(&x) - e;
        if r.abs() < tol {
            return Some(x);
        }
        let g = model.grad_v(&x);
        let g2 = g.norm_squared();
        if g2 < 1e-28 {
            return None;
        }
        x -= g * (r / g2);
    }
    ((model.v(&x) - e).abs() < 1e-10).then_some(x)
}

/// Trace the zero-velocity curve `{V = E}` through a seed point.
///
/// Uses a curvature-adaptive predictor–corrector.  At a singular touch
/// (`‖∇V‖ < 1e-7`, i.e. a saddle lying on the level) the saddle is refined,
/// recorded, and the trace continues along the transversal branch turning
/// left, which closes critical-level polygons such as triangular or
/// figure-eight level sets.
pub fn trace_zero_velocity_curve(
    model: &MechanicalModel,
    e: f64,
    seed: Vec2,
) -> Result<ZvcPolyline> {
    let diag = Vec2::new(
        model.domain[0][1] - model.domain[0][0],
        model.domain[1][1] - model.domain[1][0],
    )
    .norm();
    let ds_max = diag / 400.0;
    let ds_min = diag * 1e-9;

    let start = project_to_level(model, e, seed).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "seed ({}, {}) is not near the level set V = {e}",
            seed[0], seed[1]
        ))
    })?;
    if model.grad_v(&start).norm() < SINGULAR_TOL {
        return Err(Error::Degenerate(
            "seed projects onto a critical point of V; start from a regular point".into(),
        ));
    }

    let mut pts: Vec<[f64; 2]> = vec![[start[0], start[1]]];
    let mut singular: Vec<[f64; 2]> = Vec::new();
    let mut x = start;
    let dir0 = {
        let g = model.grad_v(&x);
        Vec2::new(-g[1], g[0]).normalize()
    };
    let mut dir = dir0;
    let mut closed = false;
    let max_nodes = 200_000;
    let mut ds = ds_max;
    let level_tol = 1e-8 * e.abs().max(1.0);

    for step_count in 0..max_nodes {
        let g = model.grad_v(&x);
        let gn = g.norm();
        let h = model.hess_v(&x);

        // A saddle on the level ahead of us?  The Newton step length
        // estimates the distance to the nearest critical point; when it is
        // within reach we refine it and, if it actually sits on the level,
        // pass through it as a vertex along the transversal branch.
        let mut vertex: Option<Vec2> = None;
        if gn < SINGULAR_TOL {
            vertex = newton_critical(model, x, &model.domain);
        } else if let Some(inv) = h.try_inverse() {
            let d_est = (inv * g).norm();
            if d_est < 1.5 * ds_max {
                if let Some(s) = newton_critical(model, x, &model.domain) {
                    let ahead = (s - x).dot(&dir) > 0.0;
                    if ahead
                        && (s - x).norm() < 3.0 * ds_max
                        && (model.v(&s) - e).abs() < level_tol
                    {
                        vertex = Some(s);
                    }
                }
            }
        }
        if let Some(saddle) = vertex {
            // Record the refined vertex and hand off to the transversal
            // branch, turning left.
            singular.push([saddle[0], saddle[1]]);
            pts.push([saddle[0], saddle[1]]);
            let hs = model.hess_v(&saddle);
            let Some(branch) = transversal_branch(&hs, &dir) else {
                break;
            };
            let hop = (ds_max * 0.5).max(1e-6 * diag);
            let mut resumed = false;
            for k in 1..=8 {
                let cand = saddle + branch * (hop * k as f64 * 0.5);
                if let Some(p) = project_to_level(model, e, cand) {
                    if model.grad_v(&p).norm() > 2.0 * SINGULAR_TOL && (p - saddle).norm() > 1e-9
                    {
                        x = p;
                        dir = branch;
                        ds = (p - saddle).norm();
                        pts.push([p[0], p[1]]);
                        resumed = true;
                        break;
                    }
                }
            }
            if !resumed {
                break;
            }
            continue;
        }

        // Tangent with orientation continuity.
        let mut tau = Vec2::new(-g[1], g[0]) / gn;
        if tau.dot(&dir) < 0.0 {
            tau = -tau;
        }
        // Curvature of the level set controls the step.
        let kappa = (tau.transpose() * h * tau)[(0, 0)].abs() / gn;
        let mut step = (0.03 / kappa.max(1e-12)).min(ds * 2.0).min(ds_max).max(ds_min);

        // Predict and correct, halving on poor corrections.
        let mut accepted = None;
        for _ in 0..40 {
            let pred = x + tau * step;
            match project_to_level(model, e, pred) {
                Some(corr) if (corr - pred).norm() <= 0.3 * step => {
                    accepted = Some(corr);
                    break;
                }
                _ => step *= 0.5,
            }
            if step < ds_min {
                break;
            }
        }
        let Some(next) = accepted else {
            return Err(Error::NoConvergence(format!(
                "contour correction failed near ({}, {})",
                x[0], x[1]
            )));
        };
        ds = step;
        dir = (next - x).normalize();
        x = next;
        pts.push([x[0], x[1]]);

        // Closure test: back near the start, heading the same way as the
        // first step.
        if step_count > 20 && (x - start).norm() < ds_max && dir.dot(&dir0) > 0.9 {
            pts.push([start[0], start[1]]);
            closed = true;
            break;
        }
        // Leaving the (padded) domain ends an open trace.
        let pad = 0.05 * diag;
        if x[0] < model.domain[0][0] - pad
            || x[0] > model.domain[0][1] + pad
            || x[1] < model.domain[1][0] - pad
            || x[1] > model.domain[1][1] + pad
        {
            break;
        }
    }

    Ok(ZvcPolyline {
        energy: e,
        points: pts,
        closed,
        singular_stops: singular,
    })
}

/// Directions along which the quadratic form of `h` vanishes, i.e. the
/// tangents of the two level-set branches at a saddle touch.  Returns the
/// branch transversal to the arrival direction, oriented as a left turn.
fn transversal_branch(h: &Mat2, arrival: &Vec2) -> Option<Vec2> {
    let sym = nalgebra::SymmetricEigen::new(*h);
    let (l1, l2) = (sym.eigenvalues[0], sym.eigenvalues[1]);
    let (e1, e2) = (
        Vec2::new(sym.eigenvectors[(0, 0)], sym.eigenvectors[(1, 0)]),
        Vec2::new(sym.eigenvectors[(0, 1)], sym.eigenvectors[(1, 1)]),
    );
    if l1 * l2 >= 0.0 {
        return None; // not a saddle: no real null directions
    }
    // Null directions w = sqrt(|l2|) e1 +- sqrt(|l1|) e2 (up to scale).
    let (lneg, lpos, en, ep) = if l1 < 0.0 {
        (l1, l2, e1, e2)
    } else {
        (l2, l1, e2, e1)
    };
    let w1 = (en * lpos.sqrt() + ep * (-lneg).sqrt()).normalize();
    let w2 = (en * lpos.sqrt() - ep * (-lneg).sqrt()).normalize();
    // The arrival branch is the null line more parallel to `arrival`.
    let transversal = if w1.dot(arrival).abs() < w2.dot(arrival).abs() {
        w1
    } else {
        w2
    };
    // Left turn: positive cross product with the arrival direction.
    let cross = arrival[0] * transversal[1] - arrival[1] * transversal[0];
    Some(if cross >= 0.0 {
        transversal
    } else {
        -transversal
    })
}

// ---------------------------------------------------------------------------
// Hill components
// ---------------------------------------------------------------------------

/// Options for [`extract_hill_component`].
#[derive(Debug, Clone)]
pub struct HillOptions {
    /// Marching-squares grid resolution per axis.
    pub resolution: usize,
    /// Barrier polylines (for example, projections of Lyapunov orbits onto
    /// the `x`-plane).  The flood fill does not cross them, so they cut the
    /// component at open saddle necks.
    pub cuts: Vec<Vec<[f64; 2]>>,
    /// Optional bounding window; defaults to the model domain.
    pub window: Option<[[f64; 2]; 2]>,
}

impl Default for HillOptions {
    fn default() -> Self {
        HillOptions {
            resolution: 512,
            cuts: vec![],
            window: None,
        }
    }
}

/// A connected component of `{V <= E}` (possibly cut along barriers).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HillComponent {
    pub energy: f64,
    /// Closed boundary loops; `boundary[0]` is the outer loop, later loops
    /// are holes.
    pub boundary: Vec<Vec<[f64; 2]>>,
    /// Critical points of `V` lying inside the component.
    pub critical_points: Vec<CriticalPoint>,
    /// Shoelace area of the outer loop minus the holes.
    pub area: f64,
    /// Saddles with `|V - E|` below tolerance sitting on the boundary.
    pub boundary_saddles: Vec<[f64; 2]>,
    /// The interior witness the component was grown from.
    pub witness: [f64; 2],
}

impl HillComponent {
    /// Even-odd membership test against all boundary loops.
    pub fn contains(&self, p: &[f64; 2]) -> bool {
        let mut inside = false;
        for ring in &self.boundary {
            if point_in_ring(p, ring) {
                inside = !inside;
            }
        }
        inside
    }
}

fn point_in_ring(p: &[f64; 2], ring: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = ring.len();
    if n < 3 {
        return false;
    }
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if ((a[1] > p[1]) != (b[1] > p[1]))
            && (p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0])
        {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn shoelace(ring: &[[f64; 2]]) -> f64 {
    let n = ring.len();
    let mut s = 0.0;
    for i in 0..n {
        let j = (i + 1) % n;
        s += ring[i][0] * ring[j][1] - ring[j][0] * ring[i][1];
    }
    0.5 * s
}

fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let cross = |o: [f64; 2], p: [f64; 2], q: [f64; 2]| {
        (p[0] - o[0]) * (q[1] - o[1]) - (p[1] - o[1]) * (q[0] - o[0])
    };
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    ((d1 > 0.0) != (d2 > 0.0)) && ((d3 > 0.0) != (d4 > 0.0))
}

/// Extract the connected component of `{V <= E}` containing `interior`.
///
/// A marching-squares pass on a uniform grid finds the sub-level set, a
/// flood fill (blocked by `opts.cuts`) selects the witness component, and
/// the boundary loops are refined onto `{V = E}` by Newton projection
/// (skipped near singular points and along cut segments).
pub fn extract_hill_component(
    model: &MechanicalModel,
    e: f64,
    interior: Vec2,
    opts: &HillOptions,
) -> Result<HillComponent> {
    if model.v(&interior) >= e {
        return Err(Error::InvalidArgument(format!(
            "interior witness has V = {} >= E = {e}",
            model.v(&interior)
        )));
    }
    let window = opts.window.unwrap_or(model.domain);
    let n = opts.resolution.max(16);
    let (x0, x1) = (window[0][0], window[0][1]);
    let (y0, y1) = (window[1][0], window[1][1]);
    let dx = (x1 - x0) / n as f64;
    let dy = (y1 - y0) / n as f64;

    // Cell membership: a cell is "inside" when its center is below level.
    let cell_center = |i: usize, j: usize| {
        Vec2::new(x0 + (i as f64 + 0.5) * dx, y0 + (j as f64 + 0.5) * dy)
    };
    let mut inside = vec![false; n * n];
    for j in 0..n {
        for i in 0..n {
            inside[j * n + i] = model.v(&cell_center(i, j)) <= e;
        }
    }

    // Precompute which cells are crossed by a cut segment.
    let mut blocked = vec![false; n * n];
    for cut in &opts.cuts {
        for w in cut.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (lo_i, hi_i) = cell_range(a[0], b[0], x0, dx, n);
            let (lo_j, hi_j) = cell_range(a[1], b[1], y0, dy, n);
            for j in lo_j..=hi_j {
                for i in lo_i..=hi_i {
                    if blocked[j * n + i] {
                        continue;
                    }
                    let c00 = [x0 + i as f64 * dx, y0 + j as f64 * dy];
                    let c11 = [c00[0] + dx, c00[1] + dy];
                    let c10 = [c11[0], c00[1]];
                    let c01 = [c00[0], c11[1]];
                    if segments_intersect(a, b, c00, c10)
                        || segments_intersect(a, b, c10, c11)
                        || segments_intersect(a, b, c11, c01)
                        || segments_intersect(a, b, c01, c00)
                        || (a[0] >= c00[0] && a[0] <= c11[0] && a[1] >= c00[1] && a[1] <= c11[1])
                    {
                        blocked[j * n + i] = true;
                    }
                }
            }
        }
    }

    // Flood fill from the witness cell.
    let wi = (((interior[0] - x0) / dx).floor() as isize).clamp(0, n as isize - 1) as usize;
    let wj = (((interior[1] - y0) / dy).floor() as isize).clamp(0, n as isize - 1) as usize;
    if !inside[wj * n + wi] {
        return Err(Error::InvalidArgument(
            "interior witness cell is not below the level at grid resolution; raise the resolution"
                .into(),
        ));
    }
    let mut comp = vec![false; n * n];
    let mut stack = vec![(wi, wj)];
    comp[wj * n + wi] = true;
    while let Some((i, j)) = stack.pop() {
        let mut push = |ii: isize, jj: isize| {
            if ii < 0 || jj < 0 || ii >= n as isize || jj >= n as isize {
                return;
            }
            let (ii, jj) = (ii as usize, jj as usize);
            let idx = jj * n + ii;
            if !comp[idx] && inside[idx] && !blocked[idx] {
                comp[idx] = true;
                stack.push((ii, jj));
            }
        };
        push(i as isize - 1, j as isize);
        push(i as isize + 1, j as isize);
        push(i as isize, j as isize - 1);
        push(i as isize, j as isize + 1);
    }

    // Boundary loops: walk the edges between component cells and the
    // outside, as a grid-edge graph; each vertex is a grid node.
    let loops = trace_component_boundary(&comp, n, x0, y0, dx, dy);
    if loops.is_empty() {
        return Err(Error::NoConvergence(
            "component boundary extraction produced no loops".into(),
        ));
    }

    // Refine loop nodes onto the level set where the step is not along a
    // cut and the gradient is healthy.
    let near_cut = |p: &[f64; 2]| -> bool {
        let tol = 1.5 * dx.max(dy);
        opts.cuts.iter().any(|cut| {
            cut.windows(2).any(|w| {
                dist_point_segment(p, &w[0], &w[1]) < tol
            })
        })
    };
    let mut refined: Vec<Vec<[f64; 2]>> = Vec::new();
    for ring in &loops {
        let mut out = Vec::with_capacity(ring.len());
        for p in ring {
            let pv = Vec2::new(p[0], p[1]);
            let vres = model.v(&pv) - e;
            let g = model.grad_v(&pv);
            if near_cut(p) || g.norm() < 100.0 * SINGULAR_TOL || vres.abs() > 0.5 {
                out.push(*p);
            } else if let Some(q) = project_to_level(model, e, pv) {
                if (q - pv).norm() < 2.0 * dx.max(dy) {
                    out.push([q[0], q[1]]);
                } else {
                    out.push(*p);
                }
            } else {
                out.push(*p);
            }
        }
        refined.push(out);
    }

    // Outer loop = largest absolute area, first; holes after.
    refined.sort_by(|a, b| {
        shoelace(b)
            .abs()
            .partial_cmp(&shoelace(a).abs())
            .unwrap()
    });
    let area = shoelace(&refined[0]).abs()
        - refined[1..].iter().map(|r| shoelace(r).abs()).sum::<f64>();

    // Critical points inside; saddles with V = E near the boundary.
    let crit = find_critical_points(model, None, None).unwrap_or_default();
    let mut contained = Vec::new();
    let mut boundary_saddles = Vec::new();
    let comp_result_stub = HillComponent {
        energy: e,
        boundary: refined.clone(),
        critical_points: vec![],
        area,
        boundary_saddles: vec![],
        witness: [interior[0], interior[1]],
    };
    for cp in crit {
        let inside_comp = comp_result_stub.contains(&cp.location) && cp.value <= e + 1e-12;
        if cp.kind == CriticalKind::Saddle && (cp.value - e).abs() < 1e-6 {
            // On-level saddle: report it as a boundary touch if it sits near
            // the traced loops.
            let d = refined
                .iter()
                .flat_map(|r| r.iter())
                .map(|p| {
                    ((p[0] - cp.location[0]).powi(2) + (p[1] - cp.location[1]).powi(2)).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            if d < 3.0 * dx.max(dy) {
                boundary_saddles.push(cp.location);
                continue;
            }
        }
        if inside_comp {
            contained.push(cp);
        }
    }

    Ok(HillComponent {
        energy: e,
        boundary: refined,
        critical_points: contained,
        area,
        boundary_saddles,
        witness: [interior[0], interior[1]],
    })
}

fn cell_range(a: f64, b: f64, origin: f64, d: f64, n: usize) -> (usize, usize) {
    let lo = ((a.min(b) - origin) / d).floor() as isize - 1;
    let hi = ((a.max(b) - origin) / d).ceil() as isize + 1;
    (
        lo.clamp(0, n as isize - 1) as usize,
        hi.clamp(0, n as isize - 1) as usize,
    )
}

fn dist_point_segment(p: &[f64; 2], a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

/// Walk the boundary edges of the cell component into closed loops of grid
/// nodes.
fn trace_component_boundary(
    comp: &[bool],
    n: usize,
    x0: f64,
    y0: f64,
    dx: f64,
    dy: f64,
) -> Vec<Vec<[f64; 2]>> {
    use std::collections::BTreeMap;
    // Directed edges: walls between an inside cell and an outside neighbor,
    // oriented so the inside is on the left.
    let is_in = |i: isize, j: isize| -> bool {
        if i < 0 || j < 0 || i >= n as isize || j >= n as isize {
            return false;
        }
        comp[j as usize * n + i as usize]
    };
    // Node id = j * (n+1) + i for grid node (i, j).
    let mut next_edge: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
    let mut add_edge = |from: (usize, usize), to: (usize, usize)| {
        next_edge.entry(from).or_default().push(to);
    };
    for j in 0..n as isize {
        for i in 0..n as isize {
            if !is_in(i, j) {
                continue;
            }
            let (iu, ju) = (i as usize, j as usize);
            // Left wall: outside neighbor (i-1, j): edge goes down (node
            // (i, j+1) -> (i, j)) so interior stays on the left.
            if !is_in(i - 1, j) {
                add_edge((iu, ju + 1), (iu, ju));
            }
            // Right wall: edge goes up.
            if !is_in(i + 1, j) {
                add_edge((iu + 1, ju), (iu + 1, ju + 1));
            }
            // Bottom wall: edge goes right.
            if !is_in(i, j - 1) {
                add_edge((iu, ju), (iu + 1, ju));
            }
            // Top wall: edge goes left.
            if !is_in(i, j + 1) {
                add_edge((iu + 1, ju + 1), (iu, ju + 1));
            }
        }
    }

    let node_pos =
        |(i, j): (usize, usize)| -> [f64; 2] { [x0 + i as f64 * dx, y0 + j as f64 * dy] };
    let mut loops = Vec::new();
    while let Some((&start, _)) = next_edge.iter().next() {
        let mut ring = vec![node_pos(start)];
        let mut cur = start;
        let mut prev: Option<(usize, usize)> = None;
        loop {
            let Some(outs) = next_edge.get_mut(&cur) else {
                break;
            };
            if outs.is_empty() {
                next_edge.remove(&cur);
                break;
            }
            // At pinch nodes prefer to keep turning left relative to the
            // incoming direction, which keeps loops simple.
            let pick = if outs.len() == 1 {
                0
            } else {
                match prev {
                    None => 0,
                    Some(p) => {
                        let din = (
                            cur.0 as isize - p.0 as isize,
                            cur.1 as isize - p.1 as isize,
                        );
                        let mut best = 0;
                        let mut best_score = i64::MIN;
                        for (k, o) in outs.iter().enumerate() {
                            let dout = (
                                o.0 as isize - cur.0 as isize,
                                o.1 as isize - cur.1 as isize,
                            );
                            // cross > 0 is a left turn.
                            let cross = (din.0 * dout.1 - din.1 * dout.0) as i64;
                            let dot = (din.0 * dout.0 + din.1 * dout.1) as i64;
                            let score = cross * 2 + dot;
                            if score > best_score {
                                best_score = score;
                                best = k;
                            }
                        }
                        best
                    }
                }
            };
            let nxt = outs.swap_remove(pick);
            if outs.is_empty() {
                next_edge.remove(&cur);
            }
            prev = Some(cur);
            if nxt == start {
                break;
            }
            ring.push(node_pos(nxt));
            cur = nxt;
        }
        if ring.len() >= 4 {
            loops.push(ring);
        }
    }
    loops
}

/// Directed Hausdorff-style distance from the boundary of `a` to the set
/// `b`: the largest distance from a boundary sample of `a` to `b` (zero for
/// samples inside `b`).
pub fn boundary_excess(a: &HillComponent, b: &HillComponent) -> f64 {
    let mut worst = 0.0f64;
    for ring in &a.boundary {
        for p in ring {
            if b.contains(p) {
                continue;
            }
            let d = b
                .boundary
                .iter()
                .flat_map(|r| {
                    r.windows(2)
                        .map(|w| dist_point_segment(p, &w[0], &w[1]))
                })
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(d);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeMap;

    fn hh() -> MechanicalModel {
        build_model("henon-heiles", &BTreeMap::new()).unwrap()
    }

    #[test]
    fn henon_heiles_critical_points() {
        let pts = find_critical_points(&hh(), None, None).unwrap();
        assert_eq!(pts.len(), 4);
        // Sorted by value: minimum first.
        assert_eq!(pts[0].kind, CriticalKind::Minimum);
        assert_abs_diff_eq!(pts[0].location[0], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(pts[0].location[1], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(pts[0].value, 0.0, epsilon = 1e-12);
        let h = 3.0_f64.sqrt() / 2.0;
        let expect = [[-h, -0.5], [0.0, 1.0], [h, -0.5]];
        for cp in &pts[1..] {
            assert_eq!(cp.kind, CriticalKind::Saddle);
            assert_abs_diff_eq!(cp.value, 1.0 / 6.0, epsilon = 1e-12);
            assert!(expect.iter().any(|t| {
                (t[0] - cp.location[0]).abs() < 1e-10 && (t[1] - cp.location[1]).abs() < 1e-10
            }));
            let sc = cp.saddle_center.as_ref().unwrap();
            assert_abs_diff_eq!(sc.a, -1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(sc.b, 3.0, epsilon = 1e-9);
            assert_abs_diff_eq!(sc.omega, 3.0_f64.sqrt(), epsilon = 1e-9);
        }
    }

    #[test]
    fn frozen_hill_critical_points() {
        let m = build_model("frozen-hill", &BTreeMap::new()).unwrap();
        let pts = find_critical_points(&m, None, None).unwrap();
        let saddles: Vec<_> = pts
            .iter()
            .filter(|p| p.kind == CriticalKind::Saddle)
            .collect();
        assert_eq!(saddles.len(), 4);
        let s = 6.0_f64.powf(-0.25);
        let expect = [[s, 0.0], [-s, 0.0], [0.0, s], [0.0, -s]];
        let target = 4.0 * 6.0_f64.sqrt() / 9.0;
        for cp in saddles {
            assert_abs_diff_eq!(cp.value, target, epsilon = 1e-12);
            assert!(expect.iter().any(|t| {
                (t[0] - cp.location[0]).abs() < 1e-9 && (t[1] - cp.location[1]).abs() < 1e-9
            }));
        }
        // Plus the central minimum and four corner maxima of the separable
        // double-hump structure inside the domain.
        assert!(pts.iter().any(|p| p.kind == CriticalKind::Minimum));
    }

    #[test]
    fn chemical_critical_values() {
        let m = build_model(
            "chemical",
            &BTreeMap::from([("alpha".into(), 1.0), ("beta".into(), 1.0)]),
        )
        .unwrap();
        let pts = find_critical_points(&m, None, None).unwrap();
        let mut values: Vec<f64> = pts.iter().map(|p| p.value).collect();
        values.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        assert_eq!(values.len(), 2);
        assert_abs_diff_eq!(values[0], -0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(values[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn stark_critical_points_half_eps() {
        let m = build_model("stark", &BTreeMap::from([("eps".into(), 0.5)])).unwrap();
        let pts = find_critical_points(&m, None, None).unwrap();
        let saddles: Vec<_> = pts
            .iter()
            .filter(|p| p.kind == CriticalKind::Saddle)
            .collect();
        assert_eq!(saddles.len(), 2);
        for cp in saddles {
            assert_abs_diff_eq!(cp.location[0].abs(), 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(cp.location[1], 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(cp.value, 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn symmetric_saddles_map_to_each_other() {
        let m = hh();
        let pts = find_critical_points(&m, None, None).unwrap();
        for q in &m.symmetries {
            for cp in pts.iter().filter(|p| p.kind == CriticalKind::Saddle) {
                let img = q * cp.location_vec();
                let best = pts
                    .iter()
                    .map(|p| (p.location_vec() - img).norm())
                    .fold(f64::INFINITY, f64::min);
                assert!(best < 1e-10, "symmetry image {img:?} not found");
            }
        }
    }

    #[test]
    fn euler_thresholds() {
        let d = euler_critical_data(0.5).unwrap();
        assert_abs_diff_eq!(d.x1_bar, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.c_crit, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.c2, 0.0, epsilon = 1e-15);

        let d = euler_critical_data(0.25).unwrap();
        assert_abs_diff_eq!(d.c_crit, -0.5 - 3.0_f64.sqrt() / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.c2, -0.25, epsilon = 1e-15);

        for k in 1..50 {
            let mu = k as f64 / 50.0;
            let d = euler_critical_data(mu).unwrap();
            assert!(d.c_crit < -0.5, "c_crit < c1 must hold for mu = {mu}");
            assert!(d.c_crit > -1.0 - 1e-12, "c_crit > -1 for mu = {mu}");
            assert!(d.c1 <= d.c2 && d.c2 <= 0.0);
        }
        assert!(euler_critical_data(0.0).is_err());
        assert!(euler_critical_data(1.0).is_err());
    }

    #[test]
    fn harmonic_zvc_is_unit_circle() {
        let m = MechanicalModel::from_closures(
            "harmonic",
            [[-2.0, 2.0], [-2.0, 2.0]],
            |x1, x2| 0.5 * (x1 * x1 + x2 * x2),
            Some(Box::new(|x1, x2| [x1, x2])),
            Some(Box::new(|_, _| [[1.0, 0.0], [0.0, 1.0]])),
        );
        let curve = trace_zero_velocity_curve(&m, 0.5, Vec2::new(1.1, 0.0)).unwrap();
        assert!(curve.closed);
        assert!(curve.singular_stops.is_empty());
        for p in &curve.points {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert_abs_diff_eq!(r, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn henon_heiles_critical_level_traces_triangle() {
        let m = hh();
        // Seed on the bottom edge x2 = -1/2 of the exact triangular level.
        let curve = trace_zero_velocity_curve(&m, 1.0 / 6.0, Vec2::new(0.1, -0.52)).unwrap();
        assert!(curve.closed, "triangle trace should close");
        assert_eq!(curve.singular_stops.len(), 3, "three vertices expected");
        let h = 3.0_f64.sqrt() / 2.0;
        let verts = [[0.0, 1.0], [-h, -0.5], [h, -0.5]];
        for v in verts {
            let best = curve
                .singular_stops
                .iter()
                .map(|s| ((s[0] - v[0]).powi(2) + (s[1] - v[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-6, "vertex {v:?} missed by {best:.2e}");
        }
        // All points on the level.
        for p in curve.points.iter().step_by(7) {
            let v = m.v(&Vec2::new(p[0], p[1]));
            assert!((v - 1.0 / 6.0).abs() < 1e-7, "off-level point {p:?}");
        }
    }

    #[test]
    fn chemical_near_minimum_small_loops() {
        let m = build_model(
            "chemical",
            &BTreeMap::from([("alpha".into(), 1.0), ("beta".into(), 1.0)]),
        )
        .unwrap();
        let e = -0.25 + 1e-6;
        let curve = trace_zero_velocity_curve(&m, e, Vec2::new(1.001, 0.0)).unwrap();
        assert!(curve.closed);
        // Tiny loop around (1, 0).
        for p in &curve.points {
            let d = ((p[0] - 1.0).powi(2) + p[1].powi(2)).sqrt();
            assert!(d < 0.01, "loop point {p:?} too far from the minimum");
        }
        // Mirror loop exists around (-1, 0).
        let curve2 = trace_zero_velocity_curve(&m, e, Vec2::new(-1.001, 0.0)).unwrap();
        assert!(curve2.closed);
    }

    #[test]
    fn harmonic_component_is_unit_disk() {
        let m = MechanicalModel::from_closures(
            "harmonic",
            [[-2.0, 2.0], [-2.0, 2.0]],
            |x1, x2| 0.5 * (x1 * x1 + x2 * x2),
            Some(Box::new(|x1, x2| [x1, x2])),
            Some(Box::new(|_, _| [[1.0, 0.0], [0.0, 1.0]])),
        );
        let comp =
            extract_hill_component(&m, 0.5, Vec2::zeros(), &HillOptions::default()).unwrap();
        assert_eq!(comp.boundary.len(), 1);
        assert_abs_diff_eq!(comp.area, std::f64::consts::PI, epsilon = 1e-4);
        assert!(comp.contains(&[0.5, 0.5]));
        assert!(!comp.contains(&[0.9, 0.9]));
    }

    #[test]
    fn henon_heiles_triangle_component() {
        let m = hh();
        let comp = extract_hill_component(
            &m,
            1.0 / 6.0,
            Vec2::zeros(),
            &HillOptions::default(),
        )
        .unwrap();
        // Equilateral triangle with side sqrt(3): area 3 sqrt(3) / 4.
        let exact = 3.0 * 3.0_f64.sqrt() / 4.0;
        assert!(
            (comp.area - exact).abs() < 0.01,
            "area {} vs exact {exact}",
            comp.area
        );
        // The three saddles must be flagged on the boundary.
        assert_eq!(comp.boundary_saddles.len(), 3);
        // Interior points classified correctly.
        assert!(comp.contains(&[0.0, 0.0]));
        assert!(comp.contains(&[0.0, 0.9]));
        assert!(!comp.contains(&[1.0, 1.0]));
        // Contains exactly the central minimum.
        assert_eq!(comp.critical_points.len(), 1);
        assert_eq!(comp.critical_points[0].kind, CriticalKind::Minimum);
    }

    #[test]
    fn hill_component_hausdorff_shrinks_to_critical_core() {
        let m = hh();
        let base = extract_hill_component(
            &m,
            1.0 / 6.0,
            Vec2::zeros(),
            &HillOptions::default(),
        )
        .unwrap();
        // Below the saddle level the components shrink monotonically toward
        // the core in boundary excess.
        let mut last = f64::INFINITY;
        for k in 1..=4 {
            let e = 1.0 / 6.0 - 10f64.powi(-k);
            let comp =
                extract_hill_component(&m, e, Vec2::zeros(), &HillOptions::default()).unwrap();
            let excess = boundary_excess(&base, &comp);
            assert!(
                excess <= last + 1e-3,
                "excess should shrink: {excess} after {last}"
            );
            last = excess;
        }
        assert!(last < 0.05, "final excess {last} too large");
    }
}
