//! Adaptive Dormand-Prince 5(4) integration with cubic-Hermite dense output.
//!
//! This is the plain (non-validated) integrator backing the inter-event-time
//! oracle and all sampling cross-checks. It is deliberately run at tolerances
//! an order of magnitude tighter than anything asserted against it.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step: f64,
    pub initial_step: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_step: f64::INFINITY,
            initial_step: 1e-6,
        }
    }
}

/// One accepted step with endpoint derivatives, supporting cubic Hermite
/// interpolation anywhere inside the step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t0: f64,
    pub t1: f64,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub f0: Vec<f64>,
    pub f1: Vec<f64>,
}

impl StepRecord {
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let h = self.t1 - self.t0;
        let th = ((t - self.t0) / h).clamp(0.0, 1.0);
        let t2 = th * th;
        let t3 = t2 * th;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + th;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        (0..self.y0.len())
            .map(|i| {
                h00 * self.y0[i] + h10 * h * self.f0[i] + h01 * self.y1[i] + h11 * h * self.f1[i]
            })
            .collect()
    }
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrate y' = f(y) from t0 to t1, invoking `on_step` for every accepted
/// step. `on_step` may return false to stop early.
#[allow(clippy::needless_range_loop)] // stages index the tableau and k jointly
pub fn integrate<F, G>(
    f: &F,
    y0: &[f64],
    t0: f64,
    t1: f64,
    opts: &OdeOptions,
    mut on_step: G,
) -> Result<(f64, Vec<f64>), OdeError>
where
    F: Fn(&[f64], &mut [f64]),
    G: FnMut(&StepRecord) -> bool,
{
    let n = y0.len();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k = vec![vec![0.0; n]; 7];
    f(&y, &mut k[0]);
    let mut h = opts.initial_step.min(opts.max_step).min(t1 - t0);
    let mut ytmp = vec![0.0; n];
    let mut y5 = vec![0.0; n];
    let mut y4 = vec![0.0; n];

    while t < t1 {
        if h < 1e-14 * (1.0 + t.abs()) {
            return Err(OdeError::StepSizeUnderflow { t });
        }
        let h_eff = h.min(t1 - t);
        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += A[s][j] * kj[i];
                }
                ytmp[i] = y[i] + h_eff * acc;
            }
            let _ = C; // stage times unused for autonomous fields
            let (head, tail) = k.split_at_mut(s);
            let _ = head;
            f(&ytmp, &mut tail[0]);
        }
        let mut err_sq = 0.0;
        for i in 0..n {
            let mut acc5 = 0.0;
            let mut acc4 = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc5 += B5[j] * kj[i];
                acc4 += B4[j] * kj[i];
            }
            y5[i] = y[i] + h_eff * acc5;
            y4[i] = y[i] + h_eff * acc4;
            let scale = opts.abs_tol + opts.rel_tol * y[i].abs().max(y5[i].abs());
            let e = (y5[i] - y4[i]) / scale;
            err_sq += e * e;
        }
        let err = (err_sq / n as f64).sqrt();
        if !err.is_finite() || y5.iter().any(|v| !v.is_finite()) {
            return Err(OdeError::NonFinite { t });
        }
        if err <= 1.0 {
            // accept: k7 is f at the new point (FSAL)
            let rec = StepRecord {
                t0: t,
                t1: t + h_eff,
                y0: y.clone(),
                y1: y5.clone(),
                f0: k[0].clone(),
                f1: k[6].clone(),
            };
            t += h_eff;
            y.copy_from_slice(&y5);
            let (head, tail) = k.split_at_mut(1);
            head[0].copy_from_slice(&tail[5]);
            if !on_step(&rec) {
                return Ok((t, y));
            }
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h = (h_eff * factor).min(opts.max_step);
    }
    Ok((t, y))
}

/// Integrate to a fixed horizon, returning only the final state.
pub fn integrate_to<F>(
    f: &F,
    y0: &[f64],
    t0: f64,
    t1: f64,
    opts: &OdeOptions,
) -> Result<Vec<f64>, OdeError>
where
    F: Fn(&[f64], &mut [f64]),
{
    if t1 <= t0 {
        return Ok(y0.to_vec());
    }
    integrate(f, y0, t0, t1, opts, |_| true).map(|(_, y)| y)
}

#[derive(Debug, Clone)]
pub enum EventOutcome {
    /// First time g crossed from negative to >= 0, refined to `time_tol`.
    Crossed { t: f64, y: Vec<f64> },
    /// No crossing before the cap; carries the state at the cap.
    Capped { y: Vec<f64> },
}

/// Locate the first zero-crossing of `g` (from below) along the flow of `f`
/// starting at `y0`, scanning accepted steps and refining by bisection on
/// the dense interpolant. Requires g(y0) < 0.
pub fn first_crossing<F, G>(
    f: &F,
    g: &G,
    y0: &[f64],
    t_cap: f64,
    time_tol: f64,
    opts: &OdeOptions,
) -> Result<EventOutcome, OdeError>
where
    F: Fn(&[f64], &mut [f64]),
    G: Fn(&[f64]) -> f64,
{
    assert!(g(y0) < 0.0, "event function must start negative");
    let mut hit: Option<StepRecord> = None;
    let (_, y_end) = integrate(f, y0, 0.0, t_cap, opts, |rec| {
        // check interior points too, in case the step straddles a crossing
        for &th in &[0.25, 0.5, 0.75, 1.0] {
            let t = rec.t0 + th * (rec.t1 - rec.t0);
            let yv = if th == 1.0 { rec.y1.clone() } else { rec.eval(t) };
            if g(&yv) >= 0.0 {
                hit = Some(rec.clone());
                return false;
            }
        }
        true
    })?;
    let rec = match hit {
        Some(r) => r,
        None => return Ok(EventOutcome::Capped { y: y_end }),
    };
    // bisect [t0, t1] of the hit step: g(rec at lo) < 0, g at some point >= 0
    let mut lo = rec.t0;
    let mut hi = rec.t1;
    // tighten hi to the first sub-sample with g >= 0
    for &th in &[0.25, 0.5, 0.75, 1.0] {
        let t = rec.t0 + th * (rec.t1 - rec.t0);
        if g(&rec.eval(t)) >= 0.0 {
            hi = t;
            break;
        }
        lo = t;
    }
    while hi - lo > time_tol {
        let mid = 0.5 * (lo + hi);
        if g(&rec.eval(mid)) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let t_event = 0.5 * (lo + hi);
    Ok(EventOutcome::Crossed {
        t: t_event,
        y: rec.eval(t_event),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_accuracy() {
        let f = |y: &[f64], dy: &mut [f64]| dy[0] = -y[0];
        let y = integrate_to(&f, &[1.0], 0.0, 2.0, &OdeOptions::default()).unwrap();
        assert!((y[0] - (-2.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn circular_orbit_accuracy() {
        let f = |y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0];
        };
        let y = integrate_to(&f, &[1.0, 0.0], 0.0, std::f64::consts::PI, &OdeOptions::default())
            .unwrap();
        assert!((y[0] + 1.0).abs() < 1e-8, "got {y:?}");
        assert!(y[1].abs() < 1e-8);
    }

    #[test]
    fn dense_output_is_accurate_inside_steps() {
        let f = |y: &[f64], dy: &mut [f64]| dy[0] = y[0];
        let mut recs = Vec::new();
        let opts = OdeOptions {
            max_step: 0.02,
            ..OdeOptions::default()
        };
        integrate(&f, &[1.0], 0.0, 1.0, &opts, |r| {
            recs.push(r.clone());
            true
        })
        .unwrap();
        assert!(recs.len() > 3);
        for r in &recs {
            let tm = 0.5 * (r.t0 + r.t1);
            let interp = r.eval(tm)[0];
            assert!(
                (interp - tm.exp()).abs() < 1e-8,
                "interp {interp} vs {}",
                tm.exp()
            );
        }
    }

    #[test]
    fn crossing_of_known_event() {
        // y' = 1, event y - 1.5 >= 0 at t = 1.5 from y0 = 0
        let f = |_: &[f64], dy: &mut [f64]| dy[0] = 1.0;
        let g = |y: &[f64]| y[0] - 1.5;
        match first_crossing(&f, &g, &[0.0], 10.0, 1e-12, &OdeOptions::default()).unwrap() {
            EventOutcome::Crossed { t, .. } => assert!((t - 1.5).abs() < 1e-9),
            other => panic!("expected crossing, got {other:?}"),
        }
    }

    #[test]
    fn cap_when_no_crossing() {
        let f = |y: &[f64], dy: &mut [f64]| dy[0] = -y[0];
        let g = |y: &[f64]| y[0] - 10.0; // never reached from 1.0
        match first_crossing(&f, &g, &[1.0], 2.0, 1e-9, &OdeOptions::default()).unwrap() {
            EventOutcome::Capped { y } => assert!((y[0] - (-2.0f64).exp()).abs() < 1e-8),
            other => panic!("expected cap, got {other:?}"),
        }
    }

    #[test]
    fn sine_event_crossing() {
        // harmonic oscillator from (1,0): y1(t) = cos t; event y2 + 0.5 >= 0
        // with y2 = -sin t, crossing when sin t = 0.5 ... from below means
        // -sin(t) + 0.5 >= 0 always at t=0 -- pick g = -y1: crosses at pi/2.
        let f = |y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0];
        };
        let g = |y: &[f64]| -y[0];
        match first_crossing(&f, &g, &[1.0, 0.0], 10.0, 1e-11, &OdeOptions::default()).unwrap() {
            EventOutcome::Crossed { t, .. } => {
                assert!((t - std::f64::consts::FRAC_PI_2).abs() < 1e-9, "t = {t}")
            }
            other => panic!("expected crossing, got {other:?}"),
        }
    }
}
