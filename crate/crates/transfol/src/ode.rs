//! Time integrators with dense output and event location.
//!
//! Two engines are provided:
//!
//! * [`integrate_dop853`] — the Dormand–Prince 8(5,3) pair with 7th-order
//!   dense output.  This is the workhorse for trajectories, variational
//!   equations, and every root-finding task that needs an accurate
//!   interpolant between accepted steps.
//! * [`integrate_gauss6`] — a fixed-step 3-stage Gauss–Legendre collocation
//!   scheme (order 6, symplectic).  Used as an independent cross-check for
//!   long-time energy behaviour.
//!
//! Both return an [`OdeSolution`] holding the accepted nodes plus a dense
//! interpolant for every step, so downstream code can resample a trajectory
//! as finely as it likes without re-integrating.

use nalgebra::SVector;

use crate::error::{Error, Result};

/// State vector of a system with `N` components.
pub type State<const N: usize> = SVector<f64, N>;

/// Options shared by the integrators.
#[derive(Debug, Clone)]
pub struct OdeOptions {
    /// Relative tolerance per component.
    pub rtol: f64,
    /// Absolute tolerance per component.
    pub atol: f64,
    /// Initial step size; `None` selects one automatically.
    pub h0: Option<f64>,
    /// Upper bound on the step magnitude; `None` allows the full span.
    pub h_max: Option<f64>,
    /// Hard cap on the number of attempted steps.
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-12,
            atol: 1e-12,
            h0: None,
            h_max: None,
            max_steps: 10_000_000,
        }
    }
}

impl OdeOptions {
    /// Options with both tolerances set to `tol`.
    pub fn with_tol(tol: f64) -> Self {
        OdeOptions {
            rtol: tol,
            atol: tol,
            ..OdeOptions::default()
        }
    }
}

/// Dense interpolant over one accepted step `[t0, t0 + h]`.
///
/// The eight coefficient vectors encode a degree-7 polynomial in the scaled
/// time `s = (t - t0) / h` (for the fixed-step engine only the first four are
/// populated, giving the cubic Hermite interpolant).
#[derive(Debug, Clone)]
pub struct DenseStep<const N: usize> {
    pub t0: f64,
    pub h: f64,
    cont: [State<N>; 8],
}

impl<const N: usize> DenseStep<N> {
    /// Evaluate the interpolant at time `t` (valid for `t` within the step).
    pub fn eval(&self, t: f64) -> State<N> {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        let c = &self.cont;
        let conpar = c[4] + (c[5] + (c[6] + c[7] * s) * s1) * s;
        c[0] + (c[1] + (c[2] + (c[3] + conpar * s1) * s) * s1) * s
    }

    /// End time of the step.
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    /// True if `t` lies within the closed span of this step (either time
    /// direction).
    pub fn contains(&self, t: f64) -> bool {
        let (lo, hi) = if self.h >= 0.0 {
            (self.t0, self.t0 + self.h)
        } else {
            (self.t0 + self.h, self.t0)
        };
        (lo..=hi).contains(&t)
    }
}

/// A located zero crossing of an event function.
#[derive(Debug, Clone)]
pub struct OdeEvent<const N: usize> {
    /// Name of the event specification that fired.
    pub name: String,
    /// Event time, located on the dense output by bisection.
    pub t: f64,
    /// Interpolated state at the event time.
    pub y: State<N>,
    /// Sign of the crossing: `+1` rising, `-1` falling.
    pub direction: i8,
}

/// Specification of a scalar event function `g(t, y)` whose sign changes are
/// located on the dense output.
pub struct EventSpec<'a, const N: usize> {
    pub name: String,
    pub g: Box<dyn Fn(f64, &State<N>) -> f64 + 'a>,
    /// `+1` reports only rising crossings, `-1` only falling, `0` both.
    pub direction: i8,
    /// Terminal events truncate the integration at the crossing.
    pub terminal: bool,
}

impl<'a, const N: usize> EventSpec<'a, N> {
    pub fn new(
        name: impl Into<String>,
        g: impl Fn(f64, &State<N>) -> f64 + 'a,
        direction: i8,
        terminal: bool,
    ) -> Self {
        EventSpec {
            name: name.into(),
            g: Box::new(g),
            direction,
            terminal,
        }
    }
}

/// Result of an integration: accepted nodes, dense interpolants, events.
#[derive(Debug, Clone)]
pub struct OdeSolution<const N: usize> {
    /// Accepted node times, starting with `t0`.
    pub times: Vec<f64>,
    /// States at the node times.
    pub states: Vec<State<N>>,
    /// Right-hand side evaluated at the node times.
    pub derivs: Vec<State<N>>,
    /// Dense interpolants; `steps[i]` spans `times[i] .. times[i+1]`.
    pub steps: Vec<DenseStep<N>>,
    /// Events located during the run, in time order.
    pub events: Vec<OdeEvent<N>>,
    /// Name of the terminal event that stopped the run early, if any.
    pub terminated_by: Option<String>,
    /// Reason the run stopped before `tf` other than a terminal event
    /// (step-size underflow, step budget, non-finite state); the recorded
    /// prefix of the solution is still valid.
    pub truncated: Option<String>,
    /// Near-miss diagnostics (event functions that touched zero without a
    /// sign change, within the grazing tolerance).
    pub warnings: Vec<String>,
    /// Number of right-hand-side evaluations.
    pub n_evals: usize,
    /// Accepted / rejected step counts.
    pub n_accepted: usize,
    pub n_rejected: usize,
}

impl<const N: usize> OdeSolution<N> {
    /// Final node time.
    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("solution has at least one node")
    }

    /// Final state.
    pub fn y_end(&self) -> State<N> {
        *self.states.last().expect("solution has at least one node")
    }

    /// Index of the dense step containing `t` (clamped to the valid range).
    pub fn step_index(&self, t: f64) -> usize {
        if self.steps.is_empty() {
            return 0;
        }
        let forward = self.times[self.times.len() - 1] >= self.times[0];
        let cmp = |probe: f64| -> std::cmp::Ordering {
            if forward {
                probe.partial_cmp(&t).unwrap()
            } else {
                t.partial_cmp(&probe).unwrap()
            }
        };
        match self.times.binary_search_by(|probe| cmp(*probe)) {
            Ok(i) => i.min(self.steps.len() - 1),
            Err(i) => i.saturating_sub(1).min(self.steps.len() - 1),
        }
    }

    /// Evaluate the dense output at `t` (clamped to the integrated span).
    pub fn eval(&self, t: f64) -> State<N> {
        if self.steps.is_empty() {
            return self.states[0];
        }
        self.steps[self.step_index(t)].eval(t)
    }
}

// ---------------------------------------------------------------------------
// Dormand–Prince 8(5,3)
// ---------------------------------------------------------------------------

/// Butcher tableau and dense-output coefficients for the 8(5,3) pair.
#[allow(clippy::excessive_precision)]
mod tab {
    pub const A21: f64 = 5.26001519587677318785587544488E-2;
    pub const A31: f64 = 1.97250569845378994544595329183E-2;
    pub const A32: f64 = 5.91751709536136983633785987549E-2;
    pub const A41: f64 = 2.95875854768068491816892993775E-2;
    pub const A43: f64 = 8.87627564304205475450678981324E-2;
    pub const A51: f64 = 2.41365134159266685502369798665E-1;
    pub const A53: f64 = -8.84549479328286085344864962717E-1;
    pub const A54: f64 = 9.24834003261792003115737966543E-1;
    pub const A61: f64 = 3.7037037037037037037037037037E-2;
    pub const A64: f64 = 1.70828608729473871279604482173E-1;
    pub const A65: f64 = 1.25467687566822425016691814123E-1;
    pub const A71: f64 = 3.7109375E-2;
    pub const A74: f64 = 1.70252211019544039314978060272E-1;
    pub const A75: f64 = 6.02165389804559606850219397283E-2;
    pub const A76: f64 = -1.7578125E-2;

    pub const A81: f64 = 3.70920001185047927108779319836E-2;
    pub const A84: f64 = 1.70383925712239993810214054705E-1;
    pub const A85: f64 = 1.07262030446373284651809199168E-1;
    pub const A86: f64 = -1.53194377486244017527936158236E-2;
    pub const A87: f64 = 8.27378916381402288758473766002E-3;
    pub const A91: f64 = 6.24110958716075717114429577812E-1;
    pub const A94: f64 = -3.36089262944694129406857109825E0;
    pub const A95: f64 = -8.68219346841726006818189891453E-1;
    pub const A96: f64 = 2.75920996994467083049415600797E1;
    pub const A97: f64 = 2.01540675504778934086186788979E1;
    pub const A98: f64 = -4.34898841810699588477366255144E1;
    pub const A101: f64 = 4.77662536438264365890433908527E-1;
    pub const A104: f64 = -2.48811461997166764192642586468E0;
    pub const A105: f64 = -5.90290826836842996371446475743E-1;
    pub const A106: f64 = 2.12300514481811942347288949897E1;
    pub const A107: f64 = 1.52792336328824235832596922938E1;
    pub const A108: f64 = -3.32882109689848629194453265587E1;
    pub const A109: f64 = -2.03312017085086261358222928593E-2;

    pub const A111: f64 = -9.3714243008598732571704021658E-1;
    pub const A114: f64 = 5.18637242884406370830023853209E0;
    pub const A115: f64 = 1.09143734899672957818500254654E0;
    pub const A116: f64 = -8.14978701074692612513997267357E0;
    pub const A117: f64 = -1.85200656599969598641566180701E1;
    pub const A118: f64 = 2.27394870993505042818970056734E1;
    pub const A119: f64 = 2.49360555267965238987089396762E0;
    pub const A1110: f64 = -3.0467644718982195003823669022E0;
    pub const A121: f64 = 2.27331014751653820792359768449E0;
    pub const A124: f64 = -1.05344954667372501984066689879E1;
    pub const A125: f64 = -2.00087205822486249909675718444E0;
    pub const A126: f64 = -1.79589318631187989172765950534E1;
    pub const A127: f64 = 2.79488845294199600508499808837E1;
    pub const A128: f64 = -2.85899827713502369474065508674E0;
    pub const A129: f64 = -8.87285693353062954433549289258E0;
    pub const A1210: f64 = 1.23605671757943030647266201528E1;
    pub const A1211: f64 = 6.43392746015763530355970484046E-1;

    pub const A141: f64 = 5.61675022830479523392909219681E-2;
    pub const A147: f64 = 2.53500210216624811088794765333E-1;
    pub const A148: f64 = -2.46239037470802489917441475441E-1;
    pub const A149: f64 = -1.24191423263816360469010140626E-1;
    pub const A1410: f64 = 1.5329179827876569731206322685E-1;
    pub const A1411: f64 = 8.20105229563468988491666602057E-3;
    pub const A1412: f64 = 7.56789766054569976138603589584E-3;
    pub const A1413: f64 = -8.298E-3;

    pub const A151: f64 = 3.18346481635021405060768473261E-2;
    pub const A156: f64 = 2.83009096723667755288322961402E-2;
    pub const A157: f64 = 5.35419883074385676223797384372E-2;
    pub const A158: f64 = -5.49237485713909884646569340306E-2;
    pub const A1511: f64 = -1.08347328697249322858509316994E-4;
    pub const A1512: f64 = 3.82571090835658412954920192323E-4;
    pub const A1513: f64 = -3.40465008687404560802977114492E-4;
    pub const A1514: f64 = 1.41312443674632500278074618366E-1;
    pub const A161: f64 = -4.28896301583791923408573538692E-1;
    pub const A166: f64 = -4.69762141536116384314449447206E0;
    pub const A167: f64 = 7.68342119606259904184240953878E0;
    pub const A168: f64 = 4.06898981839711007970213554331E0;
    pub const A169: f64 = 3.56727187455281109270669543021E-1;
    pub const A1613: f64 = -1.39902416515901462129418009734E-3;
    pub const A1614: f64 = 2.9475147891527723389556272149E0;
    pub const A1615: f64 = -9.15095847217987001081870187138E0;

    pub const B1: f64 = 5.42937341165687622380535766363E-2;
    pub const B6: f64 = 4.45031289275240888144113950566E0;
    pub const B7: f64 = 1.89151789931450038304281599044E0;
    pub const B8: f64 = -5.8012039600105847814672114227E0;
    pub const B9: f64 = 3.1116436695781989440891606237E-1;
    pub const B10: f64 = -1.52160949662516078556178806805E-1;
    pub const B11: f64 = 2.01365400804030348374776537501E-1;
    pub const B12: f64 = 4.47106157277725905176885569043E-2;

    pub const BHH1: f64 = 0.244094488188976377952755905512E+00;
    pub const BHH2: f64 = 0.733846688281611857341361741547E+00;
    pub const BHH3: f64 = 0.220588235294117647058823529412E-01;

    pub const C2: f64 = 0.526001519587677318785587544488E-01;
    pub const C3: f64 = 0.789002279381515978178381316732E-01;
    pub const C4: f64 = 0.118350341907227396726757197510E+00;
    pub const C5: f64 = 0.281649658092772603273242802490E+00;
    pub const C6: f64 = 0.333333333333333333333333333333E+00;
    pub const C7: f64 = 0.25E+00;
    pub const C8: f64 = 0.307692307692307692307692307692E+00;
    pub const C9: f64 = 0.651282051282051282051282051282E+00;
    pub const C10: f64 = 0.6E+00;
    pub const C11: f64 = 0.857142857142857142857142857142E+00;
    pub const C14: f64 = 0.1E+00;
    pub const C15: f64 = 0.2E+00;
    pub const C16: f64 = 0.777777777777777777777777777778E+00;

    pub const ER1: f64 = 0.1312004499419488073250102996E-01;
    pub const ER6: f64 = -0.1225156446376204440720569753E+01;
    pub const ER7: f64 = -0.4957589496572501915214079952E+00;
    pub const ER8: f64 = 0.1664377182454986536961530415E+01;
    pub const ER9: f64 = -0.3503288487499736816886487290E+00;
    pub const ER10: f64 = 0.3341791187130174790297318841E+00;
    pub const ER11: f64 = 0.8192320648511571246570742613E-01;
    pub const ER12: f64 = -0.2235530786388629525884427845E-01;

    pub const D41: f64 = -0.84289382761090128651353491142E+01;
    pub const D46: f64 = 0.56671495351937776962531783590E+00;
    pub const D47: f64 = -0.30689499459498916912797304727E+01;
    pub const D48: f64 = 0.23846676565120698287728149680E+01;
    pub const D49: f64 = 0.21170345824450282767155149946E+01;
    pub const D410: f64 = -0.87139158377797299206789907490E+00;
    pub const D411: f64 = 0.22404374302607882758541771650E+01;
    pub const D412: f64 = 0.63157877876946881815570249290E+00;
    pub const D413: f64 = -0.88990336451333310820698117400E-01;
    pub const D414: f64 = 0.18148505520854727256656404962E+02;
    pub const D415: f64 = -0.91946323924783554000451984436E+01;
    pub const D416: f64 = -0.44360363875948939664310572000E+01;

    pub const D51: f64 = 0.10427508642579134603413151009E+02;
    pub const D56: f64 = 0.24228349177525818288430175319E+03;
    pub const D57: f64 = 0.16520045171727028198505394887E+03;
    pub const D58: f64 = -0.37454675472269020279518312152E+03;
    pub const D59: f64 = -0.22113666853125306036270938578E+02;
    pub const D510: f64 = 0.77334326684722638389603898808E+01;
    pub const D511: f64 = -0.30674084731089398182061213626E+02;
    pub const D512: f64 = -0.93321305264302278729567221706E+01;
    pub const D513: f64 = 0.15697238121770843886131091075E+02;
    pub const D514: f64 = -0.31139403219565177677282850411E+02;
    pub const D515: f64 = -0.93529243588444783865713862664E+01;
    pub const D516: f64 = 0.35816841486394083752465898540E+02;

    pub const D61: f64 = 0.19985053242002433820987653617E+02;
    pub const D66: f64 = -0.38703730874935176555105901742E+03;
    pub const D67: f64 = -0.18917813819516756882830838328E+03;
    pub const D68: f64 = 0.52780815920542364900561016686E+03;
    pub const D69: f64 = -0.11573902539959630126141871134E+02;
    pub const D610: f64 = 0.68812326946963000169666922661E+01;
    pub const D611: f64 = -0.10006050966910838403183860980E+01;
    pub const D612: f64 = 0.77771377980534432092869265740E+00;
    pub const D613: f64 = -0.27782057523535084065932004339E+01;
    pub const D614: f64 = -0.60196695231264120758267380846E+02;
    pub const D615: f64 = 0.84320405506677161018159903784E+02;
    pub const D616: f64 = 0.11992291136182789328035130030E+02;

    pub const D71: f64 = -0.25693933462703749003312586129E+02;
    pub const D76: f64 = -0.15418974869023643374053993627E+03;
    pub const D77: f64 = -0.23152937917604549567536039109E+03;
    pub const D78: f64 = 0.35763911791061412378285349910E+03;
    pub const D79: f64 = 0.93405324183624310003907691704E+02;
    pub const D710: f64 = -0.37458323136451633156875139351E+02;
    pub const D711: f64 = 0.10409964950896230045147246184E+03;
    pub const D712: f64 = 0.29840293426660503123344363579E+02;
    pub const D713: f64 = -0.43533456590011143754432175058E+02;
    pub const D714: f64 = 0.96324553959188282948394950600E+02;
    pub const D715: f64 = -0.39177261675615439165231486172E+02;
    pub const D716: f64 = -0.14972683625798562581422125276E+03;
}

/// Relative time tolerance for event bisection.
const EVENT_TIME_TOL: f64 = 1e-13;
/// Magnitude below which an event function that does not change sign is
/// reported as a grazing near-miss.
const GRAZING_TOL: f64 = 1e-9;
/// Interior sample fractions used to catch double crossings within a step.
const EVENT_SUBSAMPLES: [f64; 3] = [0.25, 0.5, 0.75];

/// Integrate `dy/dt = f(t, y)` from `t0` to `tf` (either direction) with the
/// Dormand–Prince 8(5,3) pair, recording dense output for every accepted
/// step and locating the requested events.
pub fn integrate_dop853<const N: usize, F>(
    f: F,
    t0: f64,
    tf: f64,
    y0: State<N>,
    opts: &OdeOptions,
    events: &[EventSpec<N>],
) -> Result<OdeSolution<N>>
where
    F: Fn(f64, &State<N>) -> State<N>,
{
    use tab::*;

    if !y0.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument(
            "initial state contains non-finite components".into(),
        ));
    }
    if tf == t0 {
        let d0 = f(t0, &y0);
        return Ok(OdeSolution {
            times: vec![t0],
            states: vec![y0],
            derivs: vec![d0],
            steps: vec![],
            events: vec![],
            terminated_by: None,
            truncated: None,
            warnings: vec![],
            n_evals: 1,
            n_accepted: 0,
            n_rejected: 0,
        });
    }

    let posneg = (tf - t0).signum();
    let span = (tf - t0).abs();
    let h_max = opts.h_max.map(f64::abs).unwrap_or(span).min(span);

    let mut n_evals = 0usize;
    let mut eval = |t: f64, y: &State<N>| -> State<N> {
        n_evals += 1;
        f(t, y)
    };

    let mut t = t0;
    let mut y = y0;
    let mut k1 = eval(t, &y);

    // Initial step size: standard two-derivative heuristic.
    let mut h = match opts.h0 {
        Some(h0) => h0.abs().min(h_max) * posneg,
        None => {
            let sk = |yi: f64| opts.atol + opts.rtol * yi.abs();
            let dnf: f64 = (0..N).map(|i| (k1[i] / sk(y[i])).powi(2)).sum();
            let dny: f64 = (0..N).map(|i| (y[i] / sk(y[i])).powi(2)).sum();
            let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
                1e-6
            } else {
                (dny / dnf).sqrt() * 0.01
            };
            h = h.min(h_max);
            let y1 = y + k1 * (h * posneg);
            let k2 = eval(t + h * posneg, &y1);
            let der2: f64 = (0..N)
                .map(|i| ((k2[i] - k1[i]) / sk(y[i])).powi(2))
                .sum::<f64>()
                .sqrt()
                / h;
            let der12 = der2.abs().max(dnf.sqrt());
            let h1 = if der12 <= 1e-15 {
                (h * 1e-3).max(1e-6)
            } else {
                (0.01 / der12).powf(1.0 / 8.0)
            };
            (100.0 * h).min(h1).min(h_max) * posneg
        }
    };

    // Step-size controller (plain I-controller; no Lund stabilization).
    const SAFE: f64 = 0.9;
    const FAC1: f64 = 0.333;
    const FAC2: f64 = 6.0;
    let expo1 = 1.0 / 8.0;
    let facc1 = 1.0 / FAC1;
    let facc2 = 1.0 / FAC2;
    let mut last_rejected = false;

    let mut sol = OdeSolution {
        times: vec![t0],
        states: vec![y0],
        derivs: vec![k1],
        steps: Vec::new(),
        events: Vec::new(),
        terminated_by: None,
        truncated: None,
        warnings: Vec::new(),
        n_evals: 0,
        n_accepted: 0,
        n_rejected: 0,
    };
    let mut g_prev: Vec<f64> = events.iter().map(|e| (e.g)(t0, &y0)).collect();

    let mut n_steps = 0usize;
    'outer: while (t - tf) * posneg < 0.0 {
        n_steps += 1;
        if n_steps > opts.max_steps {
            sol.truncated = Some(format!("exceeded {} steps at t = {t}", opts.max_steps));
            break 'outer;
        }
        // Do not overshoot the final time.
        if (t + 1.01 * h - tf) * posneg > 0.0 {
            h = tf - t;
        }
        if h.abs() < 10.0 * f64::EPSILON * t.abs().max(1.0) {
            sol.truncated = Some(format!("step size underflow at t = {t}"));
            break 'outer;
        }

        // The twelve stages of the 8th-order scheme.
        let k2 = eval(t + C2 * h, &(y + k1 * (A21 * h)));
        let k3 = eval(t + C3 * h, &(y + k1 * (A31 * h) + k2 * (A32 * h)));
        let k4 = eval(t + C4 * h, &(y + k1 * (A41 * h) + k3 * (A43 * h)));
        let k5 = eval(
            t + C5 * h,
            &(y + k1 * (A51 * h) + k3 * (A53 * h) + k4 * (A54 * h)),
        );
        let k6 = eval(
            t + C6 * h,
            &(y + k1 * (A61 * h) + k4 * (A64 * h) + k5 * (A65 * h)),
        );
        let k7 = eval(
            t + C7 * h,
            &(y + k1 * (A71 * h) + k4 * (A74 * h) + k5 * (A75 * h) + k6 * (A76 * h)),
        );
        let k8 = eval(
            t + C8 * h,
            &(y + k1 * (A81 * h) + k4 * (A84 * h) + k5 * (A85 * h) + k6 * (A86 * h)
                + k7 * (A87 * h)),
        );
        let k9 = eval(
            t + C9 * h,
            &(y + k1 * (A91 * h)
                + k4 * (A94 * h)
                + k5 * (A95 * h)
                + k6 * (A96 * h)
                + k7 * (A97 * h)
                + k8 * (A98 * h)),
        );
        let k10 = eval(
            t + C10 * h,
            &(y + k1 * (A101 * h)
                + k4 * (A104 * h)
                + k5 * (A105 * h)
                + k6 * (A106 * h)
                + k7 * (A107 * h)
                + k8 * (A108 * h)
                + k9 * (A109 * h)),
        );
        let k11 = eval(
            t + C11 * h,
            &(y + k1 * (A111 * h)
                + k4 * (A114 * h)
                + k5 * (A115 * h)
                + k6 * (A116 * h)
                + k7 * (A117 * h)
                + k8 * (A118 * h)
                + k9 * (A119 * h)
                + k10 * (A1110 * h)),
        );
        let t_new = t + h;
        let k12 = eval(
            t_new,
            &(y + k1 * (A121 * h)
                + k4 * (A124 * h)
                + k5 * (A125 * h)
                + k6 * (A126 * h)
                + k7 * (A127 * h)
                + k8 * (A128 * h)
                + k9 * (A129 * h)
                + k10 * (A1210 * h)
                + k11 * (A1211 * h)),
        );
        let ksum = k1 * B1
            + k6 * B6
            + k7 * B7
            + k8 * B8
            + k9 * B9
            + k10 * B10
            + k11 * B11
            + k12 * B12;
        let y_new = y + ksum * h;

        // Combined 5th/3rd-order error estimate.
        let mut err5 = 0.0;
        let mut err3 = 0.0;
        for i in 0..N {
            let sk = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            let e3 = ksum[i] - BHH1 * k1[i] - BHH2 * k9[i] - BHH3 * k12[i];
            err3 += (e3 / sk).powi(2);
            let e5 = ER1 * k1[i]
                + ER6 * k6[i]
                + ER7 * k7[i]
                + ER8 * k8[i]
                + ER9 * k9[i]
                + ER10 * k10[i]
                + ER11 * k11[i]
                + ER12 * k12[i];
            err5 += (e5 / sk).powi(2);
        }
        let mut deno = err5 + 0.01 * err3;
        if deno <= 0.0 {
            deno = 1.0;
        }
        let err = h.abs() * err5 * (1.0 / (deno * N as f64)).sqrt();

        let fac11 = err.powf(expo1);
        let fac = facc2.max(facc1.min(fac11 / SAFE));
        let mut h_new = h / fac;

        if err > 1.0 {
            // Rejected: shrink and retry.
            h_new = h / facc1.min(fac11 / SAFE);
            sol.n_rejected += 1;
            last_rejected = true;
            h = h_new;
            continue;
        }

        // Accepted step.
        if !y_new.iter().all(|v| v.is_finite()) {
            sol.truncated = Some(format!("state became non-finite at t = {t_new}"));
            break 'outer;
        }
        sol.n_accepted += 1;
        let f_new = eval(t_new, &y_new);

        // Dense-output coefficients (three extra stages).
        let ydiff = y_new - y;
        let bspl = k1 * h - ydiff;
        let mut cont4 = k1 * D41
            + k6 * D46
            + k7 * D47
            + k8 * D48
            + k9 * D49
            + k10 * D410
            + k11 * D411
            + k12 * D412;
        let mut cont5 = k1 * D51
            + k6 * D56
            + k7 * D57
            + k8 * D58
            + k9 * D59
            + k10 * D510
            + k11 * D511
            + k12 * D512;
        let mut cont6 = k1 * D61
            + k6 * D66
            + k7 * D67
            + k8 * D68
            + k9 * D69
            + k10 * D610
            + k11 * D611
            + k12 * D612;
        let mut cont7 = k1 * D71
            + k6 * D76
            + k7 * D77
            + k8 * D78
            + k9 * D79
            + k10 * D710
            + k11 * D711
            + k12 * D712;
        let k14 = eval(
            t + C14 * h,
            &(y + (k1 * A141
                + k7 * A147
                + k8 * A148
                + k9 * A149
                + k10 * A1410
                + k11 * A1411
                + k12 * A1412
                + f_new * A1413)
                * h),
        );
        let k15 = eval(
            t + C15 * h,
            &(y + (k1 * A151
                + k6 * A156
                + k7 * A157
                + k8 * A158
                + k11 * A1511
                + k12 * A1512
                + f_new * A1513
                + k14 * A1514)
                * h),
        );
        let k16 = eval(
            t + C16 * h,
            &(y + (k1 * A161
                + k6 * A166
                + k7 * A167
                + k8 * A168
                + k9 * A169
                + f_new * A1613
                + k14 * A1614
                + k15 * A1615)
                * h),
        );
        cont4 = (cont4 + f_new * D413 + k14 * D414 + k15 * D415 + k16 * D416) * h;
        cont5 = (cont5 + f_new * D513 + k14 * D514 + k15 * D515 + k16 * D516) * h;
        cont6 = (cont6 + f_new * D613 + k14 * D614 + k15 * D615 + k16 * D616) * h;
        cont7 = (cont7 + f_new * D713 + k14 * D714 + k15 * D715 + k16 * D716) * h;
        let step = DenseStep {
            t0: t,
            h,
            cont: [
                y,
                ydiff,
                bspl,
                ydiff - f_new * h - bspl,
                cont4,
                cont5,
                cont6,
                cont7,
            ],
        };

        // Event scan over this step's dense output.
        let mut terminal_hit: Option<(f64, usize)> = None;
        for (ei, spec) in events.iter().enumerate() {
            let mut ts = vec![t];
            let mut gs = vec![g_prev[ei]];
            for frac in EVENT_SUBSAMPLES {
                let tm = t + frac * h;
                let ym = step.eval(tm);
                ts.push(tm);
                gs.push((spec.g)(tm, &ym));
            }
            ts.push(t_new);
            gs.push((spec.g)(t_new, &y_new));

            let mut min_abs = f64::INFINITY;
            let mut found_crossing = false;
            for w in 0..ts.len() - 1 {
                let (ga, gb) = (gs[w], gs[w + 1]);
                min_abs = min_abs.min(ga.abs()).min(gb.abs());
                // A crossing needs a strict sign change, or a zero hit at the
                // right endpoint.  A zero at the left endpoint was already
                // reported by the previous step (or is the initial condition
                // sitting exactly on the section, which must not fire).
                let crossed = (ga != 0.0 && gb != 0.0 && (ga < 0.0) != (gb < 0.0))
                    || (gb == 0.0 && ga != 0.0);
                if !crossed {
                    continue;
                }
                let dir = if gb > ga { 1i8 } else { -1i8 };
                if spec.direction != 0 && spec.direction != dir {
                    continue;
                }
                // Bisect on the dense output.
                let (mut ta, mut tb) = (ts[w], ts[w + 1]);
                let mut ga_cur = ga;
                let tol = EVENT_TIME_TOL * t_new.abs().max(1.0);
                for _ in 0..200 {
                    if (tb - ta).abs() <= tol {
                        break;
                    }
                    let tm = 0.5 * (ta + tb);
                    let gm = (spec.g)(tm, &step.eval(tm));
                    if (gm < 0.0) == (ga_cur < 0.0) && gm != 0.0 {
                        ta = tm;
                        ga_cur = gm;
                    } else {
                        tb = tm;
                    }
                }
                let te = 0.5 * (ta + tb);
                found_crossing = true;
                sol.events.push(OdeEvent {
                    name: spec.name.clone(),
                    t: te,
                    y: step.eval(te),
                    direction: dir,
                });
                if spec.terminal {
                    let better = match terminal_hit {
                        None => true,
                        Some((tprev, _)) => (te - tprev) * posneg < 0.0,
                    };
                    if better {
                        terminal_hit = Some((te, ei));
                    }
                }
                break;
            }
            if !found_crossing && min_abs < GRAZING_TOL && g_prev[ei].abs() >= GRAZING_TOL {
                sol.warnings.push(format!(
                    "event '{}' grazed zero (|g| = {min_abs:.3e}) near t = {t_new:.6} without a sign change",
                    spec.name
                ));
            }
        }

        if let Some((te, ei)) = terminal_hit {
            let ye = step.eval(te);
            sol.times.push(te);
            sol.states.push(ye);
            sol.derivs.push(eval(te, &ye));
            sol.steps.push(step);
            sol.terminated_by = Some(events[ei].name.clone());
            sol.events.sort_by(|a, b| (a.t * posneg).partial_cmp(&(b.t * posneg)).unwrap());
            sol.events.retain(|e| (e.t - te) * posneg <= tol_keep(te));
            break 'outer;
        }

        for (ei, spec) in events.iter().enumerate() {
            g_prev[ei] = (spec.g)(t_new, &y_new);
        }

        sol.times.push(t_new);
        sol.states.push(y_new);
        sol.derivs.push(f_new);
        sol.steps.push(step);

        y = y_new;
        t = t_new;
        k1 = f_new;

        if last_rejected {
            // Do not grow the step immediately after a rejection.
            if h_new.abs() > h.abs() {
                h_new = h;
            }
            last_rejected = false;
        }
        h = h_new.abs().min(h_max) * posneg;
    }

    sol.n_evals = n_evals;
    Ok(sol)
}

fn tol_keep(te: f64) -> f64 {
    1e-12 * te.abs().max(1.0)
}

// ---------------------------------------------------------------------------
// Gauss–Legendre collocation (3 stages, order 6, symplectic)
// ---------------------------------------------------------------------------

/// Integrate with the fixed-step 3-stage Gauss–Legendre scheme.
///
/// The implicit stage equations are solved by fixed-point iteration; `dt`
/// must be small enough for that iteration to contract.  Dense output is the
/// cubic Hermite interpolant, which is sufficient for the cross-check roles
/// this engine plays.
pub fn integrate_gauss6<const N: usize, F>(
    f: F,
    t0: f64,
    tf: f64,
    y0: State<N>,
    dt: f64,
) -> Result<OdeSolution<N>>
where
    F: Fn(f64, &State<N>) -> State<N>,
{
    if dt <= 0.0 || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "gauss6 step must be positive and finite, got {dt}"
        )));
    }
    let s15 = 15.0_f64.sqrt();
    let c = [0.5 - s15 / 10.0, 0.5, 0.5 + s15 / 10.0];
    let a = [
        [5.0 / 36.0, 2.0 / 9.0 - s15 / 15.0, 5.0 / 36.0 - s15 / 30.0],
        [5.0 / 36.0 + s15 / 24.0, 2.0 / 9.0, 5.0 / 36.0 - s15 / 24.0],
        [5.0 / 36.0 + s15 / 30.0, 2.0 / 9.0 + s15 / 15.0, 5.0 / 36.0],
    ];
    let b = [5.0 / 18.0, 4.0 / 9.0, 5.0 / 18.0];

    let n_steps = ((tf - t0).abs() / dt).ceil().max(1.0) as usize;
    let h = (tf - t0) / n_steps as f64;

    let mut n_evals = 0usize;
    let mut t = t0;
    let mut y = y0;
    let mut f0 = f(t, &y);
    n_evals += 1;

    let mut sol = OdeSolution {
        times: vec![t0],
        states: vec![y0],
        derivs: vec![f0],
        steps: Vec::with_capacity(n_steps),
        events: Vec::new(),
        terminated_by: None,
        truncated: None,
        warnings: Vec::new(),
        n_evals: 0,
        n_accepted: 0,
        n_rejected: 0,
    };

    for step_idx in 0..n_steps {
        let mut k = [f0, f0, f0];
        let mut converged = false;
        for _ in 0..100 {
            let mut max_delta = 0.0f64;
            let mut k_next = k;
            for i in 0..3 {
                let yi = y + (k[0] * a[i][0] + k[1] * a[i][1] + k[2] * a[i][2]) * h;
                let ki = f(t + c[i] * h, &yi);
                n_evals += 1;
                let delta = (ki - k[i]).norm();
                max_delta = max_delta.max(delta / (1.0 + ki.norm()));
                k_next[i] = ki;
            }
            k = k_next;
            if max_delta < 1e-15 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Integration {
                t,
                reason: format!("gauss6 stage iteration stalled (dt = {h})"),
            });
        }
        let y_new = y + (k[0] * b[0] + k[1] * b[1] + k[2] * b[2]) * h;
        let t_new = if step_idx + 1 == n_steps {
            tf
        } else {
            t0 + (step_idx + 1) as f64 * h
        };
        let f_new = f(t_new, &y_new);
        n_evals += 1;

        let ydiff = y_new - y;
        let bspl = f0 * h - ydiff;
        let zero = State::<N>::zeros();
        sol.steps.push(DenseStep {
            t0: t,
            h,
            cont: [
                y,
                ydiff,
                bspl,
                ydiff - f_new * h - bspl,
                zero,
                zero,
                zero,
                zero,
            ],
        });
        sol.times.push(t_new);
        sol.states.push(y_new);
        sol.derivs.push(f_new);
        sol.n_accepted += 1;

        t = t_new;
        y = y_new;
        f0 = f_new;
    }

    sol.n_evals = n_evals;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn harmonic(_t: f64, y: &State<2>) -> State<2> {
        State::<2>::new(y[1], -y[0])
    }

    #[test]
    fn dop853_harmonic_oscillator_accuracy() {
        let y0 = State::<2>::new(1.0, 0.0);
        let sol = integrate_dop853(harmonic, 0.0, 100.0, y0, &OdeOptions::default(), &[])
            .expect("integration succeeds");
        let y_end = sol.y_end();
        assert_abs_diff_eq!(y_end[0], 100.0_f64.cos(), epsilon = 1e-9);
        assert_abs_diff_eq!(y_end[1], -(100.0_f64.sin()), epsilon = 1e-9);
    }

    #[test]
    fn dop853_dense_output_matches_analytic_solution() {
        let y0 = State::<2>::new(1.0, 0.0);
        let sol = integrate_dop853(harmonic, 0.0, 10.0, y0, &OdeOptions::default(), &[])
            .expect("integration succeeds");
        for i in 0..200 {
            let t = 10.0 * i as f64 / 199.0;
            let y = sol.eval(t);
            assert_abs_diff_eq!(y[0], t.cos(), epsilon = 1e-9);
            assert_abs_diff_eq!(y[1], -t.sin(), epsilon = 1e-9);
        }
    }

    #[test]
    fn dop853_backward_integration() {
        let y0 = State::<2>::new(1.0, 0.0);
        let sol = integrate_dop853(harmonic, 0.0, -5.0, y0, &OdeOptions::default(), &[])
            .expect("integration succeeds");
        let y_end = sol.y_end();
        assert_abs_diff_eq!(y_end[0], 5.0_f64.cos(), epsilon = 1e-10);
        assert_abs_diff_eq!(y_end[1], 5.0_f64.sin(), epsilon = 1e-10);
    }

    #[test]
    fn dop853_event_location_hits_sign_change() {
        // y0 = cos(t) crosses zero (falling) at t = pi/2.
        let y0 = State::<2>::new(1.0, 0.0);
        let events = vec![EventSpec::new("cos-zero", |_t, y: &State<2>| y[0], -1, true)];
        let sol = integrate_dop853(harmonic, 0.0, 10.0, y0, &OdeOptions::default(), &events)
            .expect("integration succeeds");
        assert_eq!(sol.terminated_by.as_deref(), Some("cos-zero"));
        assert_eq!(sol.events.len(), 1);
        assert_abs_diff_eq!(sol.events[0].t, std::f64::consts::FRAC_PI_2, epsilon = 1e-10);
        assert_abs_diff_eq!(sol.t_end(), std::f64::consts::FRAC_PI_2, epsilon = 1e-10);
    }

    #[test]
    fn dop853_nonterminal_events_collect_all_crossings() {
        let y0 = State::<2>::new(1.0, 0.0);
        let events = vec![EventSpec::new("cos-zero", |_t, y: &State<2>| y[0], 0, false)];
        let sol = integrate_dop853(harmonic, 0.0, 10.0, y0, &OdeOptions::default(), &events)
            .expect("integration succeeds");
        // cos t = 0 at pi/2, 3pi/2, 5pi/2 within [0, 10].
        assert_eq!(sol.events.len(), 3);
        for (i, ev) in sol.events.iter().enumerate() {
            let expected = (2 * i + 1) as f64 * std::f64::consts::FRAC_PI_2;
            assert_abs_diff_eq!(ev.t, expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn gauss6_conserves_harmonic_energy_long_time() {
        let y0 = State::<2>::new(1.0, 0.0);
        let sol = integrate_gauss6(harmonic, 0.0, 1000.0, y0, 0.05).expect("integration succeeds");
        for y in sol.states.iter().step_by(100) {
            let e = 0.5 * (y[0] * y[0] + y[1] * y[1]);
            assert_abs_diff_eq!(e, 0.5, epsilon = 1e-10);
        }
    }

    #[test]
    fn dop853_rhs_eval_counter_is_reported() {
        let y0 = State::<2>::new(1.0, 0.0);
        let sol = integrate_dop853(harmonic, 0.0, 1.0, y0, &OdeOptions::default(), &[])
            .expect("integration succeeds");
        assert!(sol.n_evals > 12);
        assert!(sol.n_accepted >= 1);
    }
}
