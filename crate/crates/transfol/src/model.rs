//! Mechanical models `H = |y|^2 / 2 + V(x)`: the built-in potential family,
//! custom potentials, and the capping / saddle-rescaling transforms.
//!
//! A [`MechanicalModel`] bundles a potential with its analytic first and
//! second derivatives, a search domain, declared linear symmetries, and — for
//! separable potentials `V(x) = V1(x1) + V2(x2)` — the two one-degree-of-
//! freedom factors.  Built-in models are constructed by name through
//! [`build_model`]; arbitrary potentials enter through
//! [`MechanicalModel::from_closures`] (with finite-difference fallbacks for
//! missing derivative callbacks) or [`MechanicalModel::from_separable`].

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar position / momentum vector.
pub type Vec2 = Vector2<f64>;
/// Phase-space vector, ordered `(x1, x2, y1, y2)`.
pub type Vec4 = Vector4<f64>;
/// 2x2 real matrix.
pub type Mat2 = Matrix2<f64>;

/// A point of phase space: positions `x`, momenta `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl PhaseState {
    pub fn new(x1: f64, x2: f64, y1: f64, y2: f64) -> Self {
        PhaseState {
            x: [x1, x2],
            y: [y1, y2],
        }
    }

    /// Build from a phase-space vector ordered `(x1, x2, y1, y2)`.
    pub fn from_vec4(w: &Vec4) -> Self {
        PhaseState {
            x: [w[0], w[1]],
            y: [w[2], w[3]],
        }
    }

    /// Phase-space vector ordered `(x1, x2, y1, y2)`.
    pub fn to_vec4(&self) -> Vec4 {
        Vec4::new(self.x[0], self.x[1], self.y[0], self.y[1])
    }

    pub fn xv(&self) -> Vec2 {
        Vec2::new(self.x[0], self.x[1])
    }

    pub fn yv(&self) -> Vec2 {
        Vec2::new(self.y[0], self.y[1])
    }
}

/// A planar potential with analytic value, gradient, and Hessian.
pub trait Potential: Send + Sync {
    fn value(&self, x: &Vec2) -> f64;
    fn gradient(&self, x: &Vec2) -> Vec2;
    fn hessian(&self, x: &Vec2) -> Mat2;
}

/// A one-degree-of-freedom potential factor with two derivatives.
pub trait Potential1d: Send + Sync {
    fn value(&self, t: f64) -> f64;
    fn d1(&self, t: f64) -> f64;
    fn d2(&self, t: f64) -> f64;
}

// ---------------------------------------------------------------------------
// Built-in potentials
// ---------------------------------------------------------------------------

/// `V = (x1^2 + x2^2)/2 + x1^2 x2 - x2^3/3` — the classic galactic-motion
/// cubic perturbation of the isotropic oscillator.
struct HenonHeiles;

impl Potential for HenonHeiles {
    fn value(&self, x: &Vec2) -> f64 {
        0.5 * (x[0] * x[0] + x[1] * x[1]) + x[0] * x[0] * x[1] - x[1] * x[1] * x[1] / 3.0
    }
    fn gradient(&self, x: &Vec2) -> Vec2 {
        Vec2::new(
            x[0] + 2.0 * x[0] * x[1],
            x[1] + x[0] * x[0] - x[1] * x[1],
        )
    }
    fn hessian(&self, x: &Vec2) -> Mat2 {
        Mat2::new(1.0 + 2.0 * x[1], 2.0 * x[0], 2.0 * x[0], 1.0 - 2.0 * x[1])
    }
}

/// Even polynomial factor `c2 t^2 + c4 t^4 + c6 t^6`.
#[derive(Clone, Copy)]
struct Even1d {
    c2: f64,
    c4: f64,
    c6: f64,
}

impl Potential1d for Even1d {
    fn value(&self, t: f64) -> f64 {
        let t2 = t * t;
        t2 * (self.c2 + t2 * (self.c4 + t2 * self.c6))
    }
    fn d1(&self, t: f64) -> f64 {
        let t2 = t * t;
        t * (2.0 * self.c2 + t2 * (4.0 * self.c4 + t2 * 6.0 * self.c6))
    }
    fn d2(&self, t: f64) -> f64 {
        let t2 = t * t;
        2.0 * self.c2 + t2 * (12.0 * self.c4 + t2 * 30.0 * self.c6)
    }
}

/// Hyperbolic factor `-cosh u - c cosh^2 u` of the regularized two-center
/// problem.
#[derive(Clone, Copy)]
struct EulerUFactor {
    c: f64,
}

impl Potential1d for EulerUFactor {
    fn value(&self, u: f64) -> f64 {
        let ch = u.cosh();
        -ch - self.c * ch * ch
    }
    fn d1(&self, u: f64) -> f64 {
        let (sh, ch) = (u.sinh(), u.cosh());
        -sh - 2.0 * self.c * ch * sh
    }
    fn d2(&self, u: f64) -> f64 {
        let ch = u.cosh();
        -ch - 2.0 * self.c * (2.0 * ch * ch - 1.0)
    }
}

/// Angular factor `(2 mu - 1) cos v + c cos^2 v` of the regularized
/// two-center problem; `2 pi`-periodic.
#[derive(Clone, Copy)]
struct EulerVFactor {
    mu: f64,
    c: f64,
}

impl Potential1d for EulerVFactor {
    fn value(&self, v: f64) -> f64 {
        let cv = v.cos();
        (2.0 * self.mu - 1.0) * cv + self.c * cv * cv
    }
    fn d1(&self, v: f64) -> f64 {
        let (sv, cv) = v.sin_cos();
        -(2.0 * self.mu - 1.0) * sv - 2.0 * self.c * cv * sv
    }
    fn d2(&self, v: f64) -> f64 {
        let (sv, cv) = v.sin_cos();
        -(2.0 * self.mu - 1.0) * cv - 2.0 * self.c * (cv * cv - sv * sv)
    }
}

/// Sum of two one-degree-of-freedom factors.
struct SeparablePotential {
    f1: Arc<dyn Potential1d>,
    f2: Arc<dyn Potential1d>,
}

impl Potential for SeparablePotential {
    fn value(&self, x: &Vec2) -> f64 {
        self.f1.value(x[0]) + self.f2.value(x[1])
    }
    fn gradient(&self, x: &Vec2) -> Vec2 {
        Vec2::new(self.f1.d1(x[0]), self.f2.d1(x[1]))
    }
    fn hessian(&self, x: &Vec2) -> Mat2 {
        Mat2::new(self.f1.d2(x[0]), 0.0, 0.0, self.f2.d2(x[1]))
    }
}

/// User-supplied closures with finite-difference fallbacks.
struct ClosurePotential {
    f: Box<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    grad: Option<Box<dyn Fn(f64, f64) -> [f64; 2] + Send + Sync>>,
    hess: Option<Box<dyn Fn(f64, f64) -> [[f64; 2]; 2] + Send + Sync>>,
}

impl Potential for ClosurePotential {
    fn value(&self, x: &Vec2) -> f64 {
        (self.f)(x[0], x[1])
    }
    fn gradient(&self, x: &Vec2) -> Vec2 {
        if let Some(g) = &self.grad {
            let g = g(x[0], x[1]);
            return Vec2::new(g[0], g[1]);
        }
        let h = 1e-6 * (1.0 + x.norm());
        let f = &self.f;
        Vec2::new(
            (f(x[0] + h, x[1]) - f(x[0] - h, x[1])) / (2.0 * h),
            (f(x[0], x[1] + h) - f(x[0], x[1] - h)) / (2.0 * h),
        )
    }
    fn hessian(&self, x: &Vec2) -> Mat2 {
        if let Some(hs) = &self.hess {
            let m = hs(x[0], x[1]);
            return Mat2::new(m[0][0], m[0][1], m[1][0], m[1][1]);
        }
        let h = 1e-4 * (1.0 + x.norm());
        let f = &self.f;
        let f00 = f(x[0], x[1]);
        let dxx = (f(x[0] + h, x[1]) - 2.0 * f00 + f(x[0] - h, x[1])) / (h * h);
        let dyy = (f(x[0], x[1] + h) - 2.0 * f00 + f(x[0], x[1] - h)) / (h * h);
        let dxy = (f(x[0] + h, x[1] + h) - f(x[0] + h, x[1] - h) - f(x[0] - h, x[1] + h)
            + f(x[0] - h, x[1] - h))
            / (4.0 * h * h);
        Mat2::new(dxx, dxy, dxy, dyy)
    }
}

// ---------------------------------------------------------------------------
// Capping
// ---------------------------------------------------------------------------

/// Smooth cut function used by the capping transform: zero for `t <= 1`,
/// `exp(-1/(t-1)) / (2-t)` on `(1, 2)`, divergent as `t -> 2`.
pub fn cut_function(t: f64) -> f64 {
    if t <= 1.0 {
        0.0
    } else if t < 2.0 {
        (-1.0 / (t - 1.0)).exp() / (2.0 - t)
    } else {
        f64::INFINITY
    }
}

/// First derivative of [`cut_function`].
pub fn cut_function_d1(t: f64) -> f64 {
    if t <= 1.0 {
        0.0
    } else if t < 2.0 {
        let s = t - 1.0;
        let h = (-1.0 / s).exp();
        let w = 1.0 / (1.0 - s);
        // f = h w with h = exp(-1/s), w = (1-s)^{-1}.
        h / (s * s) * w + h * w * w
    } else {
        f64::INFINITY
    }
}

/// Second derivative of [`cut_function`].
pub fn cut_function_d2(t: f64) -> f64 {
    if t <= 1.0 {
        0.0
    } else if t < 2.0 {
        let s = t - 1.0;
        let h = (-1.0 / s).exp();
        let w = 1.0 / (1.0 - s);
        let h1 = h / (s * s);
        let h2 = h * (1.0 - 2.0 * s) / s.powi(4);
        let w1 = w * w;
        let w2 = 2.0 * w * w * w;
        h2 * w + 2.0 * h1 * w1 + h * w2
    } else {
        f64::INFINITY
    }
}

/// Third derivative of [`cut_function`]; positive on `(1, 2)`, which makes
/// the capped one-dimensional profile `a t^2 / 2 + f(t)` have a unique
/// nondegenerate interior minimum.
pub fn cut_function_d3(t: f64) -> f64 {
    if t <= 1.0 {
        0.0
    } else if t < 2.0 {
        let s = t - 1.0;
        let h = (-1.0 / s).exp();
        let w = 1.0 / (1.0 - s);
        let h1 = h / (s * s);
        let h2 = h * (1.0 - 2.0 * s) / s.powi(4);
        let h3 = h * (1.0 - 6.0 * s + 6.0 * s * s) / s.powi(6);
        let w1 = w * w;
        let w2 = 2.0 * w * w * w;
        let w3 = 6.0 * w1 * w1;
        h3 * w + 3.0 * h2 * w1 + 3.0 * h1 * w2 + h * w3
    } else {
        f64::INFINITY
    }
}

/// Parameters of the capping transform at a saddle.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CapParams {
    /// Base point of the cut (the saddle location).
    pub saddle: [f64; 2],
    /// Unit direction along which the cut grows (hyperbolic eigendirection).
    pub direction: [f64; 2],
    /// `+1.0` caps the half-plane in `+direction`, `-1.0` the other side.
    pub side: f64,
    /// Scale of the cap; the added term is `eps * f(side * <x - saddle,
    /// direction> / sqrt(eps))`.
    pub eps: f64,
}

struct CappedPotential {
    inner: Arc<dyn Potential>,
    cap: CapParams,
}

impl CappedPotential {
    fn cut_coordinate(&self, x: &Vec2) -> f64 {
        let d = Vec2::new(self.cap.direction[0], self.cap.direction[1]);
        let rel = x - Vec2::new(self.cap.saddle[0], self.cap.saddle[1]);
        self.cap.side * rel.dot(&d) / self.cap.eps.sqrt()
    }
}

impl Potential for CappedPotential {
    fn value(&self, x: &Vec2) -> f64 {
        self.inner.value(x) + self.cap.eps * cut_function(self.cut_coordinate(x))
    }
    fn gradient(&self, x: &Vec2) -> Vec2 {
        let t = self.cut_coordinate(x);
        let d = Vec2::new(self.cap.direction[0], self.cap.direction[1]);
        // d t / d x = side * direction / sqrt(eps).
        self.inner.gradient(x)
            + d * (self.cap.eps * cut_function_d1(t) * self.cap.side / self.cap.eps.sqrt())
    }
    fn hessian(&self, x: &Vec2) -> Mat2 {
        let t = self.cut_coordinate(x);
        let d = Vec2::new(self.cap.direction[0], self.cap.direction[1]);
        self.inner.hessian(x) + (d * d.transpose()) * cut_function_d2(t)
    }
}

// ---------------------------------------------------------------------------
// Rescaling
// ---------------------------------------------------------------------------

struct RescaledPotential {
    inner: Arc<dyn Potential>,
    center: Vec2,
    /// Columns: hyperbolic then elliptic principal axes at the saddle.
    axes: Mat2,
    eps: f64,
    ref_value: f64,
}

impl Potential for RescaledPotential {
    fn value(&self, xh: &Vec2) -> f64 {
        let x = self.center + self.axes * xh * self.eps.sqrt();
        (self.inner.value(&x) - self.ref_value) / self.eps
    }
    fn gradient(&self, xh: &Vec2) -> Vec2 {
        let x = self.center + self.axes * xh * self.eps.sqrt();
        self.axes.transpose() * self.inner.gradient(&x) / self.eps.sqrt()
    }
    fn hessian(&self, xh: &Vec2) -> Mat2 {
        let x = self.center + self.axes * xh * self.eps.sqrt();
        self.axes.transpose() * self.inner.hessian(&x) * self.axes
    }
}

// ---------------------------------------------------------------------------
// MechanicalModel
// ---------------------------------------------------------------------------

/// A mechanical Hamiltonian `H = |y|^2 / 2 + V(x)` together with the
/// metadata the rest of the crate needs.
#[derive(Clone)]
pub struct MechanicalModel {
    /// Human-readable name (built-in identifier or custom label).
    pub name: String,
    /// Scalar parameters the model was built with.
    pub params: BTreeMap<String, f64>,
    /// Search window `[[x1min, x1max], [x2min, x2max]]` for critical-point
    /// scans and plots.
    pub domain: [[f64; 2]; 2],
    /// Period of the second coordinate, for angular coordinates.
    pub x2_period: Option<f64>,
    /// Linear maps `Q` with `V(Q x) = V(x)`.
    pub symmetries: Vec<Mat2>,
    potential: Arc<dyn Potential>,
    split: Option<(Arc<dyn Potential1d>, Arc<dyn Potential1d>)>,
}

impl fmt::Debug for MechanicalModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MechanicalModel")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("domain", &self.domain)
            .field("x2_period", &self.x2_period)
            .field("decoupled", &self.split.is_some())
            .finish()
    }
}

impl MechanicalModel {
    /// The potential with its analytic derivatives.
    pub fn potential(&self) -> &dyn Potential {
        self.potential.as_ref()
    }

    /// Shared handle to the potential.
    pub fn potential_arc(&self) -> Arc<dyn Potential> {
        Arc::clone(&self.potential)
    }

    /// The two separable factors when `V(x) = V1(x1) + V2(x2)`.
    pub fn decoupled(&self) -> Option<(Arc<dyn Potential1d>, Arc<dyn Potential1d>)> {
        self.split
            .as_ref()
            .map(|(a, b)| (Arc::clone(a), Arc::clone(b)))
    }

    /// `V(x)`.
    pub fn v(&self, x: &Vec2) -> f64 {
        self.potential.value(x)
    }

    /// `∇V(x)`.
    pub fn grad_v(&self, x: &Vec2) -> Vec2 {
        self.potential.gradient(x)
    }

    /// `Hess V(x)`.
    pub fn hess_v(&self, x: &Vec2) -> Mat2 {
        self.potential.hessian(x)
    }

    /// Total energy `H = |y|^2/2 + V(x)`.
    pub fn energy(&self, s: &PhaseState) -> f64 {
        0.5 * (s.y[0] * s.y[0] + s.y[1] * s.y[1]) + self.v(&s.xv())
    }

    /// Gradient of `H` in phase space, ordered `(V_x1, V_x2, y1, y2)`.
    pub fn energy_gradient(&self, w: &Vec4) -> Vec4 {
        let g = self.grad_v(&Vec2::new(w[0], w[1]));
        Vec4::new(g[0], g[1], w[2], w[3])
    }

    /// Hamiltonian vector field `(y, -∇V)` at a phase point.
    pub fn vector_field(&self, w: &Vec4) -> Vec4 {
        let g = self.grad_v(&Vec2::new(w[0], w[1]));
        Vec4::new(w[2], w[3], -g[0], -g[1])
    }

    /// Whether `x` lies in the declared search domain.
    pub fn in_domain(&self, x: &Vec2) -> bool {
        let [dx, dy] = self.domain;
        x[0] >= dx[0] && x[0] <= dx[1] && x[1] >= dy[0] && x[1] <= dy[1]
    }

    /// Build a model from closures; missing derivative callbacks fall back
    /// to central finite differences.
    pub fn from_closures(
        name: impl Into<String>,
        domain: [[f64; 2]; 2],
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        grad: Option<Box<dyn Fn(f64, f64) -> [f64; 2] + Send + Sync>>,
        hess: Option<Box<dyn Fn(f64, f64) -> [[f64; 2]; 2] + Send + Sync>>,
    ) -> Self {
        MechanicalModel {
            name: name.into(),
            params: BTreeMap::new(),
            domain,
            x2_period: None,
            symmetries: vec![],
            potential: Arc::new(ClosurePotential {
                f: Box::new(f),
                grad,
                hess,
            }),
            split: None,
        }
    }

    /// Build a decoupled model `V(x) = V1(x1) + V2(x2)` from two factors.
    pub fn from_separable(
        name: impl Into<String>,
        domain: [[f64; 2]; 2],
        f1: Arc<dyn Potential1d>,
        f2: Arc<dyn Potential1d>,
    ) -> Self {
        MechanicalModel {
            name: name.into(),
            params: BTreeMap::new(),
            domain,
            x2_period: None,
            symmetries: vec![],
            potential: Arc::new(SeparablePotential {
                f1: Arc::clone(&f1),
                f2: Arc::clone(&f2),
            }),
            split: Some((f1, f2)),
        }
    }
}

/// What [`evaluate`] computed, controlled by the derivative order requested.
#[derive(Debug, Clone, Copy)]
pub struct Evaluation {
    /// Total energy `H(x, y)`.
    pub energy: f64,
    /// Potential value `V(x)`.
    pub potential: f64,
    /// `∇V(x)` when order >= 1.
    pub gradient: Option<Vec2>,
    /// `Hess V(x)` when order >= 2.
    pub hessian: Option<Mat2>,
}

/// Evaluate energy and up to two derivative orders of the potential at a
/// phase-space point.
pub fn evaluate(model: &MechanicalModel, state: &PhaseState, order: u8) -> Result<Evaluation> {
    if order > 2 {
        return Err(Error::InvalidArgument(format!(
            "derivative order must be 0, 1, or 2, got {order}"
        )));
    }
    let x = state.xv();
    Ok(Evaluation {
        energy: model.energy(state),
        potential: model.v(&x),
        gradient: (order >= 1).then(|| model.grad_v(&x)),
        hessian: (order >= 2).then(|| model.hess_v(&x)),
    })
}

// ---------------------------------------------------------------------------
// Named construction
// ---------------------------------------------------------------------------

fn normalize_key(k: &str) -> String {
    match k {
        "α" => "alpha".into(),
        "β" => "beta".into(),
        "ε" | "epsilon" => "eps".into(),
        "μ" => "mu".into(),
        other => other.into(),
    }
}

fn take_params(
    raw: &BTreeMap<String, f64>,
    required: &[&str],
    optional: &[&str],
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (k, v) in raw {
        let key = normalize_key(k);
        if !required.contains(&key.as_str()) && !optional.contains(&key.as_str()) {
            return Err(Error::InvalidModel(format!("unknown parameter '{k}'")));
        }
        if !v.is_finite() {
            return Err(Error::InvalidModel(format!("parameter '{k}' is not finite")));
        }
        out.insert(key, *v);
    }
    for r in required {
        if !out.contains_key(*r) {
            return Err(Error::InvalidModel(format!("missing parameter '{r}'")));
        }
    }
    Ok(out)
}

fn reflect_x1() -> Mat2 {
    Mat2::new(-1.0, 0.0, 0.0, 1.0)
}

fn reflect_x2() -> Mat2 {
    Mat2::new(1.0, 0.0, 0.0, -1.0)
}

fn swap_axes() -> Mat2 {
    Mat2::new(0.0, 1.0, 1.0, 0.0)
}

/// Construct a built-in model.
///
/// Known names: `henon-heiles`, `frozen-hill`, `stark` (`eps > 0`),
/// `euler-regularized` (`mu` in `(0,1)`, `c < 0`), `chemical` (`alpha`,
/// `beta > 0`), and `custom` (quadratic saddle-center normal form with
/// `a < 0 < b`).
pub fn build_model(name: &str, params: &BTreeMap<String, f64>) -> Result<MechanicalModel> {
    match name {
        "henon-heiles" => {
            let p = take_params(params, &[], &[])?;
            // Mirror symmetries about the three lines through the origin and
            // each saddle (at angles 90, 210, 330 degrees).
            let h = 3.0_f64.sqrt() / 2.0;
            Ok(MechanicalModel {
                name: name.into(),
                params: p,
                domain: [[-1.6, 1.6], [-1.6, 1.6]],
                x2_period: None,
                symmetries: vec![
                    reflect_x1(),
                    Mat2::new(0.5, h, h, -0.5),
                    Mat2::new(0.5, -h, -h, -0.5),
                ],
                potential: Arc::new(HenonHeiles),
                split: None,
            })
        }
        "frozen-hill" => {
            let p = take_params(params, &[], &[])?;
            let factor = Arc::new(Even1d {
                c2: 4.0,
                c4: 0.0,
                c6: -8.0,
            });
            let mut m = MechanicalModel::from_separable(
                name,
                [[-1.1, 1.1], [-1.1, 1.1]],
                factor.clone(),
                factor,
            );
            m.params = p;
            m.symmetries = vec![reflect_x1(), reflect_x2(), swap_axes()];
            Ok(m)
        }
        "stark" => {
            let p = take_params(params, &["eps"], &[])?;
            let eps = p["eps"];
            if eps <= 0.0 {
                return Err(Error::InvalidModel(format!(
                    "stark requires eps > 0, got {eps}"
                )));
            }
            // Saddles of the x1 factor sit at +-1/sqrt(2 eps); pad the window.
            let r = 1.35 / (2.0 * eps).sqrt();
            let f1 = Arc::new(Even1d {
                c2: 4.0,
                c4: -4.0 * eps,
                c6: 0.0,
            });
            let f2 = Arc::new(Even1d {
                c2: 4.0,
                c4: 4.0 * eps,
                c6: 0.0,
            });
            let mut m = MechanicalModel::from_separable(name, [[-r, r], [-r, r]], f1, f2);
            m.params = p;
            m.symmetries = vec![reflect_x1(), reflect_x2()];
            Ok(m)
        }
        "euler-regularized" => {
            let p = take_params(params, &["mu", "c"], &[])?;
            euler_regularized(p["mu"], p["c"])
        }
        "chemical" => {
            let p = take_params(params, &["alpha", "beta"], &[])?;
            let (alpha, beta) = (p["alpha"], p["beta"]);
            if alpha <= 0.0 || beta <= 0.0 {
                return Err(Error::InvalidModel(format!(
                    "chemical requires alpha > 0 and beta > 0, got alpha = {alpha}, beta = {beta}"
                )));
            }
            let r = 1.8 * (alpha / beta).sqrt();
            let f1 = Arc::new(Even1d {
                c2: -0.5 * alpha,
                c4: 0.25 * beta,
                c6: 0.0,
            });
            let f2 = Arc::new(Even1d {
                c2: 0.5,
                c4: 0.0,
                c6: 0.0,
            });
            let mut m = MechanicalModel::from_separable(name, [[-r, r], [-r, r]], f1, f2);
            m.params = p;
            m.symmetries = vec![reflect_x1(), reflect_x2()];
            Ok(m)
        }
        "custom" => {
            let p = take_params(params, &["a", "b"], &[])?;
            let (a, b) = (p["a"], p["b"]);
            if !(a < 0.0 && b > 0.0) {
                return Err(Error::InvalidModel(format!(
                    "custom quadratic saddle-center requires a < 0 < b, got a = {a}, b = {b}"
                )));
            }
            let f1 = Arc::new(Even1d {
                c2: 0.5 * a,
                c4: 0.0,
                c6: 0.0,
            });
            let f2 = Arc::new(Even1d {
                c2: 0.5 * b,
                c4: 0.0,
                c6: 0.0,
            });
            let mut m = MechanicalModel::from_separable(name, [[-2.0, 2.0], [-2.0, 2.0]], f1, f2);
            m.params = p;
            m.symmetries = vec![reflect_x1(), reflect_x2()];
            Ok(m)
        }
        other => Err(Error::InvalidModel(format!(
            "unknown model '{other}' (known: henon-heiles, frozen-hill, stark, euler-regularized, chemical, custom)"
        ))),
    }
}

/// The regularized planar two-center problem in elliptic coordinates
/// `(u, v)`, as a decoupled model with `V1(u) = -cosh u - c cosh^2 u` and
/// `V2(v) = (2 mu - 1) cos v + c cos^2 v`; the `v` factor is `2 pi`-periodic.
/// Physical energy-`c` dynamics corresponds to the zero level of this model.
pub fn euler_regularized(mu: f64, c: f64) -> Result<MechanicalModel> {
    if !(0.0 < mu && mu < 1.0) {
        return Err(Error::InvalidModel(format!(
            "euler-regularized requires mu in (0,1), got {mu}"
        )));
    }
    if c >= 0.0 {
        return Err(Error::InvalidModel(format!(
            "euler-regularized requires a negative energy parameter c, got {c}"
        )));
    }
    let f1 = Arc::new(EulerUFactor { c });
    let f2 = Arc::new(EulerVFactor { mu, c });
    let mut m = MechanicalModel::from_separable(
        "euler-regularized",
        [[-3.0, 3.0], [0.0, 2.0 * std::f64::consts::PI]],
        f1,
        f2,
    );
    m.params = BTreeMap::from([("mu".to_string(), mu), ("c".to_string(), c)]);
    m.x2_period = Some(2.0 * std::f64::consts::PI);
    m.symmetries = vec![reflect_x1(), reflect_x2()];
    Ok(m)
}

/// Cap the potential beyond a saddle: adds `eps * f(<x - saddle, dir> *
/// side / sqrt(eps))` with the smooth divergent cut function, leaving the
/// model untouched where the cut coordinate stays below 1.
pub fn cap_potential(model: &MechanicalModel, cap: &CapParams) -> Result<MechanicalModel> {
    if cap.eps <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "cap eps must be positive, got {}",
            cap.eps
        )));
    }
    if cap.side != 1.0 && cap.side != -1.0 {
        return Err(Error::InvalidArgument(format!(
            "cap side must be +1 or -1, got {}",
            cap.side
        )));
    }
    let norm = (cap.direction[0] * cap.direction[0] + cap.direction[1] * cap.direction[1]).sqrt();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidArgument(format!(
            "cap direction must be a unit vector, |dir| = {norm}"
        )));
    }
    let mut m = model.clone();
    m.name = format!("{}+cap", model.name);
    m.potential = Arc::new(CappedPotential {
        inner: model.potential_arc(),
        cap: *cap,
    });
    // The cap breaks separability and the declared symmetries.
    m.split = None;
    m.symmetries = vec![];
    Ok(m)
}

/// Saddle-centered rescaling: shifts a nondegenerate saddle to the origin,
/// rotates into its principal axes (hyperbolic direction first), blows up by
/// `1/sqrt(eps)`, and normalizes values by `(V - V(saddle)) / eps`.
///
/// The returned model satisfies `eps * V_hat(x_hat) = V(saddle + sqrt(eps) *
/// R * x_hat) - V(saddle)`, and converges to the quadratic normal form
/// `(a x1^2 + b x2^2)/2` as `eps -> 0`.
pub fn rescale(
    model: &MechanicalModel,
    saddle: &crate::hill::CriticalPoint,
    eps: f64,
) -> Result<MechanicalModel> {
    if eps <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "rescale eps must be positive, got {eps}"
        )));
    }
    let sc = saddle.saddle_center.as_ref().ok_or_else(|| {
        Error::Degenerate(format!(
            "rescale requires a nondegenerate saddle; got a critical point of kind {:?}",
            saddle.kind
        ))
    })?;
    let axes = Mat2::from_columns(&[sc.hyperbolic_axis(), sc.elliptic_axis()]);
    let mut m = model.clone();
    m.name = format!("{}@saddle-rescaled", model.name);
    m.params.insert("rescale_eps".into(), eps);
    m.potential = Arc::new(RescaledPotential {
        inner: model.potential_arc(),
        center: Vec2::new(saddle.location[0], saddle.location[1]),
        axes,
        eps,
        ref_value: saddle.value,
    });
    m.split = None;
    m.symmetries = vec![];
    // The hatted window covers the saddle neighborhood blown up by
    // 1/sqrt(eps), clipped to a practical size.
    let r = (2.5 / eps.sqrt()).min(50.0);
    m.domain = [[-r, r], [-r, r]];
    m.x2_period = None;
    Ok(m)
}

// ---------------------------------------------------------------------------
// Elliptic coordinates for the two-center problem
// ---------------------------------------------------------------------------

/// Map elliptic-coordinate data `(u, v, p_u, p_v)` to Cartesian phase space.
///
/// Positions: `x1 = cosh u cos v`, `x2 = sinh u sin v` (centers at
/// `(+-1, 0)`).  Momenta transform by the inverse-transpose Jacobian.  Fails
/// at the collision points `cosh^2 u = cos^2 v`.
pub fn elliptic_to_cartesian(u: f64, v: f64, pu: f64, pv: f64) -> Result<PhaseState> {
    let (sh, ch) = (u.sinh(), u.cosh());
    let (sv, cv) = v.sin_cos();
    let det = ch * ch - cv * cv;
    if det.abs() < 1e-14 {
        return Err(Error::Degenerate(format!(
            "elliptic coordinates singular at (u, v) = ({u}, {v}) (collision point)"
        )));
    }
    Ok(PhaseState::new(
        ch * cv,
        sh * sv,
        (pu * sh * cv - pv * ch * sv) / det,
        (pu * ch * sv + pv * sh * cv) / det,
    ))
}

/// The deck transformation of the 2:1 elliptic-coordinate cover:
/// `(u, v, p_u, p_v)` and its image map to the same Cartesian phase point.
pub fn elliptic_antipode(u: f64, v: f64, pu: f64, pv: f64) -> (f64, f64, f64, f64) {
    (-u, -v, -pu, -pv)
}

// ---------------------------------------------------------------------------
// Config round-trip
// ---------------------------------------------------------------------------

/// JSON-serializable model description.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<[[f64; 2]; 2]>,
}

impl ModelConfig {
    /// Snapshot of a model (named models only).
    pub fn from_model(model: &MechanicalModel) -> Self {
        ModelConfig {
            name: model.name.clone(),
            params: model.params.clone(),
            domain: Some(model.domain),
        }
    }

    /// Instantiate the described model.
    pub fn build(&self) -> Result<MechanicalModel> {
        let mut m = build_model(&self.name, &self.params)?;
        if let Some(d) = self.domain {
            if d[0][0] >= d[0][1] || d[1][0] >= d[1][1] {
                return Err(Error::InvalidModel(
                    "domain must satisfy min < max per axis".into(),
                ));
            }
            m.domain = d;
        }
        Ok(m)
    }

    /// Read a config from a JSON file.
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zoo() -> Vec<MechanicalModel> {
        vec![
            build_model("henon-heiles", &BTreeMap::new()).unwrap(),
            build_model("frozen-hill", &BTreeMap::new()).unwrap(),
            build_model("stark", &BTreeMap::from([("eps".into(), 1.0)])).unwrap(),
            build_model(
                "euler-regularized",
                &BTreeMap::from([("mu".into(), 0.25), ("c".into(), -0.6)]),
            )
            .unwrap(),
            build_model(
                "chemical",
                &BTreeMap::from([("alpha".into(), 1.0), ("beta".into(), 1.0)]),
            )
            .unwrap(),
            build_model(
                "custom",
                &BTreeMap::from([("a".into(), -1.0), ("b".into(), 1.0)]),
            )
            .unwrap(),
        ]
    }

    #[test]
    fn henon_heiles_saddle_value() {
        let m = build_model("henon-heiles", &BTreeMap::new()).unwrap();
        assert_abs_diff_eq!(m.v(&Vec2::new(0.0, 1.0)), 1.0 / 6.0, epsilon = 1e-15);
        // The other two saddles of the triangular symmetry.
        let h = 3.0_f64.sqrt() / 2.0;
        assert_abs_diff_eq!(m.v(&Vec2::new(h, -0.5)), 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.v(&Vec2::new(-h, -0.5)), 1.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn chemical_origin_is_critical_with_value_zero() {
        let m = build_model(
            "chemical",
            &BTreeMap::from([("alpha".into(), 1.0), ("beta".into(), 1.0)]),
        )
        .unwrap();
        assert_eq!(m.v(&Vec2::zeros()), 0.0);
        assert_eq!(m.grad_v(&Vec2::zeros()), Vec2::zeros());
        // Well depth at the minima (+-sqrt(alpha/beta), 0).
        assert_abs_diff_eq!(m.v(&Vec2::new(1.0, 0.0)), -0.25, epsilon = 1e-15);
    }

    #[test]
    fn frozen_hill_saddle_value() {
        let m = build_model("frozen-hill", &BTreeMap::new()).unwrap();
        let s = 6.0_f64.powf(-0.25);
        let expected = 4.0 * 6.0_f64.sqrt() / 9.0;
        assert_abs_diff_eq!(m.v(&Vec2::new(s, 0.0)), expected, epsilon = 1e-14);
        assert_abs_diff_eq!(m.grad_v(&Vec2::new(s, 0.0)).norm(), 0.0, epsilon = 1e-13);
        // Same as (4/3) sqrt(2/3).
        assert_abs_diff_eq!(
            expected,
            (4.0 / 3.0) * (2.0_f64 / 3.0).sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn stark_saddle_value_is_inverse_eps() {
        for eps in [0.5, 1.0, 2.0] {
            let m = build_model("stark", &BTreeMap::from([("eps".into(), eps)])).unwrap();
            let s = 1.0 / (2.0 * eps).sqrt();
            assert_relative_eq!(m.v(&Vec2::new(s, 0.0)), 1.0 / eps, max_relative = 1e-14);
            assert_abs_diff_eq!(m.grad_v(&Vec2::new(s, 0.0)).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn greek_parameter_aliases_accepted() {
        let m = build_model(
            "chemical",
            &BTreeMap::from([("α".into(), 1.0), ("β".into(), 2.0)]),
        )
        .unwrap();
        assert_eq!(m.params["alpha"], 1.0);
        assert_eq!(m.params["beta"], 2.0);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(build_model("stark", &BTreeMap::from([("eps".into(), -1.0)])).is_err());
        assert!(build_model("stark", &BTreeMap::new()).is_err());
        assert!(build_model(
            "euler-regularized",
            &BTreeMap::from([("mu".into(), 1.5), ("c".into(), -0.5)])
        )
        .is_err());
        assert!(build_model(
            "custom",
            &BTreeMap::from([("a".into(), 1.0), ("b".into(), 1.0)])
        )
        .is_err());
        assert!(build_model("no-such-model", &BTreeMap::new()).is_err());
        assert!(build_model(
            "henon-heiles",
            &BTreeMap::from([("bogus".into(), 1.0)])
        )
        .is_err());
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for m in zoo() {
            let [dx, dy] = m.domain;
            for _ in 0..1000 {
                let x = Vec2::new(
                    rng.random_range(dx[0]..dx[1]),
                    rng.random_range(dy[0]..dy[1]),
                );
                let h = 1e-4;
                let fd_grad = Vec2::new(
                    (m.v(&(x + Vec2::new(h, 0.0))) - m.v(&(x - Vec2::new(h, 0.0)))) / (2.0 * h),
                    (m.v(&(x + Vec2::new(0.0, h))) - m.v(&(x - Vec2::new(0.0, h)))) / (2.0 * h),
                );
                let g = m.grad_v(&x);
                let scale = g.norm().max(1.0);
                assert!(
                    (g - fd_grad).norm() / scale < 1e-6,
                    "{}: gradient mismatch at {:?}: {:?} vs {:?}",
                    m.name,
                    x,
                    g,
                    fd_grad
                );
                // Smaller step than the gradient check: the truncation term
                // carries the fourth derivative, which is large for the
                // quartic/sextic members of the zoo.
                let h2 = 1e-5;
                let gp1 = m.grad_v(&(x + Vec2::new(h2, 0.0)));
                let gm1 = m.grad_v(&(x - Vec2::new(h2, 0.0)));
                let gp2 = m.grad_v(&(x + Vec2::new(0.0, h2)));
                let gm2 = m.grad_v(&(x - Vec2::new(0.0, h2)));
                let fd_hess =
                    Mat2::from_columns(&[(gp1 - gm1) / (2.0 * h2), (gp2 - gm2) / (2.0 * h2)]);
                let hs = m.hess_v(&x);
                let hscale = hs.norm().max(1.0);
                assert!(
                    (hs - fd_hess).norm() / hscale < 1e-6,
                    "{}: hessian mismatch at {:?}",
                    m.name,
                    x
                );
            }
        }
    }

    #[test]
    fn declared_symmetries_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in zoo() {
            let [dx, dy] = m.domain;
            for q in &m.symmetries {
                for _ in 0..200 {
                    let x = Vec2::new(
                        rng.random_range(dx[0]..dx[1]),
                        rng.random_range(dy[0]..dy[1]),
                    );
                    let qx = q * x;
                    assert_abs_diff_eq!(m.v(&qx), m.v(&x), epsilon = 1e-10 * (1.0 + m.v(&x).abs()));
                }
            }
        }
    }

    #[test]
    fn decoupled_split_matches_sum() {
        for m in zoo() {
            if let Some((f1, f2)) = m.decoupled() {
                let x = Vec2::new(0.3, -0.4);
                assert_abs_diff_eq!(
                    m.v(&x),
                    f1.value(x[0]) + f2.value(x[1]),
                    epsilon = 1e-14
                );
            }
        }
        let hh = build_model("henon-heiles", &BTreeMap::new()).unwrap();
        assert!(hh.decoupled().is_none());
    }

    #[test]
    fn evaluate_orders() {
        let m = build_model("henon-heiles", &BTreeMap::new()).unwrap();
        let s = PhaseState::new(0.1, 0.2, 0.3, 0.4);
        let e0 = evaluate(&m, &s, 0).unwrap();
        assert!(e0.gradient.is_none() && e0.hessian.is_none());
        assert_abs_diff_eq!(
            e0.energy,
            0.5 * (0.09 + 0.16) + m.v(&Vec2::new(0.1, 0.2)),
            epsilon = 1e-15
        );
        let e1 = evaluate(&m, &s, 1).unwrap();
        assert!(e1.gradient.is_some() && e1.hessian.is_none());
        let e2 = evaluate(&m, &s, 2).unwrap();
        assert!(e2.hessian.is_some());
        assert!(evaluate(&m, &s, 3).is_err());
    }

    #[test]
    fn cut_function_vanishes_left_of_one_and_diverges_at_two() {
        assert_eq!(cut_function(0.5), 0.0);
        assert_eq!(cut_function(1.0), 0.0);
        assert_eq!(cut_function_d1(1.0), 0.0);
        assert!(cut_function(1.999_999) > 1e4);
        // Smooth glue at t = 1: values decay to zero from the right.
        assert!(cut_function(1.001) < 1e-300);
        assert!(cut_function(1.1) < 1e-3);
    }

    #[test]
    fn cut_function_derivatives_match_finite_differences() {
        let h = 1e-6;
        for i in 1..80 {
            let t = 1.0 + 0.0122 * i as f64; // stays inside (1, 1.98)
            let fd1 = (cut_function(t + h) - cut_function(t - h)) / (2.0 * h);
            assert_relative_eq!(cut_function_d1(t), fd1, max_relative = 1e-6, epsilon = 1e-12);
            let fd2 = (cut_function_d1(t + h) - cut_function_d1(t - h)) / (2.0 * h);
            assert_relative_eq!(cut_function_d2(t), fd2, max_relative = 1e-6, epsilon = 1e-10);
            let fd3 = (cut_function_d2(t + h) - cut_function_d2(t - h)) / (2.0 * h);
            assert_relative_eq!(cut_function_d3(t), fd3, max_relative = 1e-5, epsilon = 1e-8);
        }
    }

    #[test]
    fn cut_function_third_derivative_positive_on_interval() {
        // Together with f = f' = f'' = 0 at t = 1+, this forces f' and f''
        // to be positive on (1,2), so a t^2/2 + f(t) has exactly one
        // nondegenerate minimum there for a < 0.  The exp(-1/(t-1)) factor
        // underflows to exactly 0.0 for t - 1 below about 1.4e-3, so the
        // strict-positivity scan starts past the underflow zone and the
        // underflow zone itself is checked for nonnegativity.
        for i in 1..2000 {
            let t = 1.0 + 0.9995 * i as f64 / 2000.0;
            let d3 = cut_function_d3(t);
            assert!(d3 >= 0.0, "f''' should never be negative, got {d3} at t = {t}");
            if t > 1.005 {
                assert!(d3 > 0.0, "f''' should be positive at t = {t}, got {d3}");
            }
        }
    }

    #[test]
    fn capped_model_identical_below_cut() {
        let m = build_model(
            "custom",
            &BTreeMap::from([("a".into(), -1.0), ("b".into(), 1.0)]),
        )
        .unwrap();
        let cap = CapParams {
            saddle: [0.0, 0.0],
            direction: [1.0, 0.0],
            side: 1.0,
            eps: 1.0,
        };
        let capped = cap_potential(&m, &cap).unwrap();
        for x1 in [-1.5, -0.5, 0.0, 0.5, 1.0] {
            for x2 in [-1.0, 0.0, 0.7] {
                let x = Vec2::new(x1, x2);
                assert_eq!(capped.v(&x), m.v(&x));
                assert_eq!(capped.grad_v(&x), m.grad_v(&x));
            }
        }
        // Beyond the cut the potential gains a positive term.
        assert!(capped.v(&Vec2::new(1.5, 0.0)) > m.v(&Vec2::new(1.5, 0.0)));
    }

    #[test]
    fn capped_quadratic_has_unique_axis_minimum_between_one_and_two() {
        // g(t) = -t^2/2 + f(t) on (0, 2): g' = -t + f'(t) has exactly one
        // zero, located in (1, 2), and g'' > 0 there.
        let g1 = |t: f64| -t + cut_function_d1(t);
        // Below the cut g' = -t < 0; scan a fine grid for sign changes.
        let n = 200_000;
        let mut crossings = vec![];
        let mut prev = g1(1e-3);
        for i in 1..n {
            let t = 1e-3 + (1.995 - 1e-3) * i as f64 / n as f64;
            let cur = g1(t);
            if prev < 0.0 && cur >= 0.0 {
                crossings.push(t);
            }
            prev = cur;
        }
        assert_eq!(crossings.len(), 1, "expected a unique minimum, got {crossings:?}");
        let q = crossings[0];
        assert!(q > 1.0 && q < 2.0, "minimum at {q} should lie in (1,2)");
        assert!(
            -1.0 + cut_function_d2(q) > 0.0,
            "minimum must be nondegenerate"
        );
    }

    #[test]
    fn euler_factors_match_closed_forms() {
        let m = euler_regularized(0.25, -0.6).unwrap();
        let (f1, f2) = m.decoupled().unwrap();
        for u in [-1.0, 0.0, 0.7] {
            let ch = f64::cosh(u);
            assert_abs_diff_eq!(f1.value(u), -ch - (-0.6) * ch * ch, epsilon = 1e-14);
        }
        for v in [0.0, 1.0, std::f64::consts::PI] {
            let cv = f64::cos(v);
            assert_abs_diff_eq!(
                f2.value(v),
                (2.0 * 0.25 - 1.0) * cv + (-0.6) * cv * cv,
                epsilon = 1e-14
            );
        }
        assert_eq!(m.x2_period, Some(2.0 * std::f64::consts::PI));
    }

    #[test]
    fn elliptic_map_is_canonical() {
        // p . du = y . dx along any curve; equivalently p = J^T y with J the
        // position Jacobian.  Check on random data with finite differences.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let u = rng.random_range(0.2..2.0);
            let v = rng.random_range(0.3..2.8);
            let pu = rng.random_range(-1.0..1.0);
            let pv = rng.random_range(-1.0..1.0);
            let s = elliptic_to_cartesian(u, v, pu, pv).unwrap();
            let h = 1e-6;
            let xu = |uu: f64, vv: f64| Vec2::new(uu.cosh() * vv.cos(), uu.sinh() * vv.sin());
            let ju = (xu(u + h, v) - xu(u - h, v)) / (2.0 * h);
            let jv = (xu(u, v + h) - xu(u, v - h)) / (2.0 * h);
            let y = s.yv();
            assert_abs_diff_eq!(ju.dot(&y), pu, epsilon = 1e-8);
            assert_abs_diff_eq!(jv.dot(&y), pv, epsilon = 1e-8);
        }
    }

    #[test]
    fn elliptic_antipode_maps_to_same_cartesian_point() {
        let (u, v, pu, pv) = (0.8, 1.1, 0.3, -0.2);
        let s1 = elliptic_to_cartesian(u, v, pu, pv).unwrap();
        let (au, av, apu, apv) = elliptic_antipode(u, v, pu, pv);
        let s2 = elliptic_to_cartesian(au, av, apu, apv).unwrap();
        assert_abs_diff_eq!(s1.x[0], s2.x[0], epsilon = 1e-14);
        assert_abs_diff_eq!(s1.x[1], s2.x[1], epsilon = 1e-14);
        assert_abs_diff_eq!(s1.y[0], s2.y[0], epsilon = 1e-12);
        assert_abs_diff_eq!(s1.y[1], s2.y[1], epsilon = 1e-12);
    }

    #[test]
    fn elliptic_map_rejects_collision_points() {
        assert!(elliptic_to_cartesian(0.0, 0.0, 1.0, 1.0).is_err());
        assert!(elliptic_to_cartesian(0.0, std::f64::consts::PI, 1.0, 1.0).is_err());
    }

    #[test]
    fn config_round_trip() {
        let cfg = ModelConfig {
            name: "stark".into(),
            params: BTreeMap::from([("eps".into(), 0.5)]),
            domain: None,
        };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ModelConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        let m = back.build().unwrap();
        assert_eq!(m.name, "stark");
        let snapshot = ModelConfig::from_model(&m);
        let m2 = snapshot.build().unwrap();
        let x = Vec2::new(0.3, 0.4);
        assert_eq!(m.v(&x), m2.v(&x));
    }

    #[test]
    fn closure_model_finite_difference_fallback() {
        let m = MechanicalModel::from_closures(
            "blob",
            [[-1.0, 1.0], [-1.0, 1.0]],
            |x1, x2| x1 * x1 * x2 + x2 * x2,
            None,
            None,
        );
        let x = Vec2::new(0.4, -0.3);
        let g = m.grad_v(&x);
        assert_relative_eq!(g[0], 2.0 * 0.4 * (-0.3), max_relative = 1e-6);
        assert_relative_eq!(g[1], 0.4 * 0.4 + 2.0 * (-0.3), max_relative = 1e-6);
        let hs = m.hess_v(&x);
        assert_relative_eq!(hs[(0, 0)], 2.0 * (-0.3), max_relative = 1e-4);
        assert_relative_eq!(hs[(0, 1)], 2.0 * 0.4, max_relative = 1e-4);
        assert_relative_eq!(hs[(1, 1)], 2.0, max_relative = 1e-4);
    }
}
