//! Closed-loop ETC system model: extended error dynamics, the triggering
//! function, a high-accuracy inter-event-time oracle, and the sample-and-hold
//! trace simulator.

use thiserror::Error;

use crate::ode::{self, EventOutcome, OdeError, OdeOptions};
use crate::poly::{Homogeneity, PolyError, PolyVectorField, Polynomial};

#[derive(Debug, Error)]
pub enum EtcError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("closed loop is not homogeneous: component {component} mixes degrees")]
    NotHomogeneous { component: usize },
    #[error("homogeneity degree {got} does not match expected {expected}")]
    DegreeMismatch { expected: i64, got: i64 },
    #[error("homogeneity degree must be >= 1, got {got}")]
    DegreeTooLow { got: i64 },
    #[error("inter-event time is undefined at the origin")]
    OriginState,
    #[error("no triggering before the cap {cap} s and no region cap applies")]
    NoCrossingBeforeCap { cap: f64 },
    #[error("sigma_sq must be positive, got {0}")]
    BadSigma(f64),
}

/// Closed-loop homogeneous ETC plant with the squared triggering coefficient.
///
/// `plant` is over R^{n+m} in (state, input); `controller` gives the m input
/// components over R^n; `closed_loop` is the substitution of the controller
/// into the plant. `sigma_sq` is the full squared factor multiplying |z|^2 in
/// the triggering function.
#[derive(Debug, Clone)]
pub struct EtcSystem {
    pub plant: PolyVectorField,
    pub controller: PolyVectorField,
    pub closed_loop: PolyVectorField,
    pub n: usize,
    pub sigma_sq: f64,
    pub alpha: i64,
    pub theta: i64,
}

impl EtcSystem {
    /// Build and validate the closed loop. `plant` has n + m variables where
    /// the last m are inputs; `controller` maps R^n to R^m.
    pub fn new(
        plant: PolyVectorField,
        controller: PolyVectorField,
        sigma_sq: f64,
        expected_alpha: Option<i64>,
    ) -> Result<Self, EtcError> {
        if sigma_sq <= 0.0 {
            return Err(EtcError::BadSigma(sigma_sq));
        }
        let n = plant.len();
        let m = controller.len();
        assert_eq!(plant.dim(), n + m, "plant must be over (state, input)");
        assert_eq!(controller.dim(), n, "controller must be over the state");
        // images: x_i -> x_i for i < n, input_j -> controller_j
        let mut images: Vec<Polynomial> = (0..n).map(|i| Polynomial::variable(n, i)).collect();
        for j in 0..m {
            images.push(controller.component(j).clone());
        }
        let closed: Vec<Polynomial> = plant
            .components()
            .iter()
            .map(|p| p.substitute(&images))
            .collect::<Result<_, _>>()?;
        let closed_loop = PolyVectorField::new(closed);
        let alpha = match closed_loop.homogeneity_degree() {
            Homogeneity::Degree(a) => a,
            Homogeneity::NotHomogeneous { component, .. } => {
                return Err(EtcError::NotHomogeneous { component })
            }
        };
        if let Some(exp) = expected_alpha {
            if exp != alpha {
                return Err(EtcError::DegreeMismatch {
                    expected: exp,
                    got: alpha,
                });
            }
        }
        if alpha < 1 {
            return Err(EtcError::DegreeTooLow { got: alpha });
        }
        Ok(Self {
            plant,
            controller,
            closed_loop,
            n,
            sigma_sq,
            alpha,
            theta: 1,
        })
    }

    /// Triggering function value |e|^2 - sigma_sq * |z|^2.
    pub fn triggering_value(&self, z: &[f64], e: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.n);
        debug_assert_eq!(e.len(), self.n);
        let esq: f64 = e.iter().map(|v| v * v).sum();
        let zsq: f64 = z.iter().map(|v| v * v).sum();
        esq - self.sigma_sq * zsq
    }

    /// The triggering function as a polynomial over the extended space
    /// (z_1..z_n, e_1..e_n).
    pub fn triggering_polynomial(&self) -> Polynomial {
        let dim = 2 * self.n;
        let mut terms = Vec::new();
        for k in 0..self.n {
            let mut ez = vec![0u32; dim];
            ez[k] = 2;
            terms.push((ez, -self.sigma_sq));
            let mut ee = vec![0u32; dim];
            ee[self.n + k] = 2;
            terms.push((ee, 1.0));
        }
        Polynomial::from_terms(dim, terms)
    }
}

/// The 2n-dimensional dynamics of (z, e) between events: the first n
/// components are f(z, u(z + e)) and the last n their exact negations.
#[derive(Debug, Clone)]
pub struct ExtendedSystem {
    pub field: PolyVectorField,
    pub n: usize,
}

/// F(xi) = (f(z, u(z+e)), -f(z, u(z+e))) over R^{2n}.
pub fn build_extended_field(sys: &EtcSystem) -> Result<ExtendedSystem, EtcError> {
    let n = sys.n;
    let m = sys.controller.len();
    let dim = 2 * n;
    // controller evaluated at z + e, embedded in R^{2n}
    let sums: Vec<Polynomial> = (0..n)
        .map(|i| Polynomial::variable(dim, i).add(&Polynomial::variable(dim, n + i)))
        .collect();
    let held_inputs: Vec<Polynomial> = (0..m)
        .map(|j| sys.controller.component(j).substitute(&sums))
        .collect::<Result<_, _>>()?;
    let mut images: Vec<Polynomial> = (0..n).map(|i| Polynomial::variable(dim, i)).collect();
    images.extend(held_inputs);
    let mut comps: Vec<Polynomial> = sys
        .plant
        .components()
        .iter()
        .map(|p| p.substitute(&images))
        .collect::<Result<_, _>>()?;
    let negs: Vec<Polynomial> = comps.iter().map(|p| p.scale(-1.0)).collect();
    comps.extend(negs);
    Ok(ExtendedSystem {
        field: PolyVectorField::new(comps),
        n,
    })
}

/// One flattened term: coefficient and (variable, exponent) factors.
type FlatTerm = (f64, Vec<(usize, u32)>);

/// Flattened polynomial evaluator for hot integration loops.
#[derive(Debug, Clone)]
pub struct FieldEval {
    comps: Vec<Vec<FlatTerm>>,
    dim: usize,
}

impl FieldEval {
    pub fn new(field: &PolyVectorField) -> Self {
        let comps = field
            .components()
            .iter()
            .map(|p| {
                p.terms()
                    .map(|(m, c)| {
                        let factors: Vec<(usize, u32)> = m
                            .0
                            .iter()
                            .enumerate()
                            .filter(|(_, &e)| e > 0)
                            .map(|(i, &e)| (i, e))
                            .collect();
                        (c, factors)
                    })
                    .collect()
            })
            .collect();
        Self {
            comps,
            dim: field.dim(),
        }
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        for (o, terms) in out.iter_mut().zip(&self.comps) {
            let mut acc = 0.0;
            for (c, factors) in terms {
                let mut t = *c;
                for &(i, e) in factors {
                    t *= x[i].powi(e as i32);
                }
                acc += t;
            }
            *o = acc;
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OracleParams {
    /// Bisection width for the crossing time.
    pub abs_tol: f64,
    /// Give up (capped) if no crossing by this horizon.
    pub t_cap: f64,
    /// Hard cap on integrator steps so crossings are not skipped.
    pub max_step: f64,
}

impl OracleParams {
    pub fn new(abs_tol: f64, t_cap: f64, max_step: f64) -> Self {
        Self {
            abs_tol,
            t_cap,
            max_step,
        }
    }
}

#[derive(Debug, Clone)]
pub enum InterEventTime {
    /// Triggering fired at `tau`; `state` is the extended state there.
    Triggered { tau: f64, state: Vec<f64> },
    /// No crossing before the cap; `state` is the extended state at the cap.
    Capped { state: Vec<f64> },
}

impl InterEventTime {
    pub fn tau(&self) -> Option<f64> {
        match self {
            InterEventTime::Triggered { tau, .. } => Some(*tau),
            InterEventTime::Capped { .. } => None,
        }
    }
}

/// Integrate the extended system from (x, 0) and locate the first
/// zero-crossing of the triggering function from below.
pub fn inter_event_time_oracle(
    sys: &EtcSystem,
    ext: &ExtendedSystem,
    x: &[f64],
    params: &OracleParams,
) -> Result<InterEventTime, EtcError> {
    if x.iter().all(|&v| v == 0.0) {
        return Err(EtcError::OriginState);
    }
    let n = sys.n;
    let eval = FieldEval::new(&ext.field);
    let f = move |y: &[f64], dy: &mut [f64]| eval.eval_into(y, dy);
    let sigma_sq = sys.sigma_sq;
    let g = move |y: &[f64]| {
        let zsq: f64 = y[..n].iter().map(|v| v * v).sum();
        let esq: f64 = y[n..].iter().map(|v| v * v).sum();
        esq - sigma_sq * zsq
    };
    let mut y0 = vec![0.0; 2 * n];
    y0[..n].copy_from_slice(x);
    let opts = OdeOptions {
        abs_tol: 1e-10,
        rel_tol: 1e-10,
        max_step: params.max_step,
        initial_step: (params.max_step / 4.0).min(1e-6),
    };
    match ode::first_crossing(&f, &g, &y0, params.t_cap, params.abs_tol, &opts)? {
        EventOutcome::Crossed { t, y } => Ok(InterEventTime::Triggered { tau: t, state: y }),
        EventOutcome::Capped { y } => Ok(InterEventTime::Capped { state: y }),
    }
}

/// One sampling event of a simulated trace.
#[derive(Debug, Clone)]
pub struct TraceEvent {
    pub sample_state: Vec<f64>,
    pub inter_event_time: f64,
    pub region: Option<(usize, usize)>,
    pub forced: bool,
}

/// Simulate the sample-and-hold loop: from each sample the extended system
/// runs from (x, 0) until triggering, the state is re-sampled and the error
/// resets to zero. When `cap_for` yields a cap for the sample's region (the
/// innermost-band rule), the inter-event time is min(natural, cap) and
/// `forced` marks a binding cap.
pub type RegionClassifier<'a> = dyn Fn(&[f64]) -> Option<(usize, usize)> + 'a;
pub type RegionCaps<'a> = dyn Fn((usize, usize)) -> Option<f64> + 'a;

pub fn simulate_etc_trace(
    sys: &EtcSystem,
    ext: &ExtendedSystem,
    classify: &RegionClassifier,
    cap_for: &RegionCaps,
    x0: &[f64],
    duration: f64,
    params: &OracleParams,
) -> Result<Vec<TraceEvent>, EtcError> {
    if x0.iter().all(|&v| v == 0.0) {
        return Err(EtcError::OriginState);
    }
    let n = sys.n;
    let mut events = Vec::new();
    let mut x = x0.to_vec();
    let mut t_cum = 0.0;
    while t_cum < duration {
        let region = classify(&x);
        let cap = region.and_then(&cap_for);
        let outcome = inter_event_time_oracle(sys, ext, &x, params)?;
        let (tau, forced, next_x) = match (&outcome, cap) {
            (InterEventTime::Triggered { tau, state }, Some(c)) if c < *tau => {
                (c, true, resample(sys, ext, &x, c, n)?)
            }
            (InterEventTime::Triggered { tau, state }, _) => {
                (*tau, false, state[..n].to_vec())
            }
            (InterEventTime::Capped { .. }, Some(c)) => (c, true, resample(sys, ext, &x, c, n)?),
            (InterEventTime::Capped { .. }, None) => {
                return Err(EtcError::NoCrossingBeforeCap { cap: params.t_cap })
            }
        };
        events.push(TraceEvent {
            sample_state: x.clone(),
            inter_event_time: tau,
            region,
            forced,
        });
        t_cum += tau;
        x = next_x;
    }
    Ok(events)
}

/// State of the base system `tau` seconds after sampling at `x`.
fn resample(
    sys: &EtcSystem,
    ext: &ExtendedSystem,
    x: &[f64],
    tau: f64,
    n: usize,
) -> Result<Vec<f64>, EtcError> {
    let _ = sys;
    let eval = FieldEval::new(&ext.field);
    let f = move |y: &[f64], dy: &mut [f64]| eval.eval_into(y, dy);
    let mut y0 = vec![0.0; 2 * n];
    y0[..n].copy_from_slice(x);
    let opts = OdeOptions::default();
    let y = ode::integrate_to(&f, &y0, 0.0, tau, &opts)?;
    Ok(y[..n].to_vec())
}

/// CSV trace export with one row per event.
pub fn write_trace_csv<W: std::io::Write>(
    w: &mut W,
    events: &[TraceEvent],
    n: usize,
) -> std::io::Result<()> {
    write!(w, "event_index,t_k")?;
    for i in 1..=n {
        write!(w, ",x{i}")?;
    }
    writeln!(w, ",inter_event_time,region_i,region_j,forced")?;
    let mut t = 0.0;
    for (k, ev) in events.iter().enumerate() {
        write!(w, "{k},{t}")?;
        for v in &ev.sample_state {
            write!(w, ",{v}")?;
        }
        let (ri, rj) = match ev.region {
            Some((i, j)) => (i.to_string(), j.to_string()),
            None => (String::new(), String::new()),
        };
        writeln!(w, ",{},{},{},{}", ev.inter_event_time, ri, rj, ev.forced)?;
        t += ev.inter_event_time;
    }
    Ok(())
}
