//! Coefficients bounding the p-th Lie derivative of the triggering function
//! by lower-order ones over a ball, with a strict-positivity side condition.
//!
//! The search minimizes the constant coefficient over a seeded sample set and
//! the result is then certified by interval arithmetic over an adaptive box
//! subdivision. A certificate that fails to certify is inflated and retried;
//! the always-valid constant-only certificate is the final fallback.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use thiserror::Error;

use crate::etc::ExtendedSystem;
use crate::interval::{box_min_norm, Interval, PolyWithGrad};
use crate::poly::{PolyError, Polynomial};

#[derive(Debug, Error)]
pub enum DeltaError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("p must be >= 1")]
    BadOrder,
    #[error("domain radii must be positive and d >= sqrt(5) * z_radius (got d = {d}, z_radius = {z_radius})")]
    ProxyDoesNotFit { d: f64, z_radius: f64 },
    #[error("epsilon must be > 0")]
    BadEpsilon,
    #[error("certification budget exhausted; the fallback certificate is still valid")]
    BudgetExhausted { fallback: Box<DeltaCertificate> },
    #[error("certificate JSON malformed: {0}")]
    BadJson(String),
}

/// A solution of the coefficient feasibility problem: nonnegative deltas with
/// (a) L^p phi <= sum_{i<p} delta_i L^i phi + delta_p on the ball of radius
/// `d` in the extended space, and (b) delta_0 phi(z, 0) + delta_p >= epsilon
/// for all |z| <= z_radius.
#[derive(Debug, Clone)]
pub struct DeltaCertificate {
    pub deltas: Vec<f64>,
    pub p: usize,
    pub d: f64,
    pub z_radius: f64,
    pub epsilon: f64,
    /// L_F^0 phi .. L_F^p phi over the extended space.
    pub lie_phis: Vec<Polynomial>,
}

#[derive(Debug, Clone)]
pub struct DeltaSearchParams {
    pub lp_samples: usize,
    pub seed: u64,
    /// Inflate-and-retry rounds before falling back.
    pub max_rounds: usize,
    /// Upper bound on lower-order deltas, as a multiple of
    /// sup|L^p| / sup|L^i| on samples. Zero forces the constant-only form.
    pub coeff_cap_ratio: f64,
    pub max_boxes: usize,
}

impl Default for DeltaSearchParams {
    fn default() -> Self {
        Self {
            lp_samples: 4096,
            seed: 0,
            max_rounds: 8,
            coeff_cap_ratio: 2.0,
            max_boxes: 400_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub rounds_used: usize,
    pub used_fallback: bool,
    pub boxes_explored: usize,
}

/// Restriction of a polynomial over R^{2n} to the slice e = 0, as a
/// polynomial over R^n.
fn restrict_to_state(p: &Polynomial, n: usize) -> Polynomial {
    let images: Vec<Polynomial> = (0..p.dim())
        .map(|k| {
            if k < n {
                Polynomial::variable(n, k)
            } else {
                Polynomial::zero(n)
            }
        })
        .collect();
    p.substitute(&images).expect("restriction cannot fail")
}

/// Outcome of one interval certification sweep.
enum Sweep {
    Certified { boxes: usize },
    Refuted { value: f64 },
    Indeterminate { boxes: usize, best_ub: f64 },
}

/// Certify sup of `g` over the ball of radius `radius` <= `bound` by adaptive
/// bisection of the bounding box, discarding boxes outside the ball.
fn certify_sup_on_ball(g: &PolyWithGrad, radius: f64, bound: f64, max_boxes: usize) -> Sweep {
    let dim = g.p.dim();
    let root: Vec<Interval> = (0..dim).map(|_| Interval::new(-radius, radius)).collect();
    let mut stack = vec![root];
    let mut boxes = 0usize;
    let mut best_ub = f64::NEG_INFINITY;
    let min_width = radius / 2f64.powi(10);
    while let Some(b) = stack.pop() {
        boxes += 1;
        if boxes > max_boxes {
            return Sweep::Indeterminate { boxes, best_ub };
        }
        if box_min_norm(&b) > radius {
            continue;
        }
        let enc = g.eval_interval(&b);
        if enc.hi <= bound {
            continue;
        }
        // a strictly violating point certainly inside the ball refutes
        let center: Vec<f64> = b.iter().map(|i| i.mid()).collect();
        let center_norm: f64 = center.iter().map(|v| v * v).sum::<f64>().sqrt();
        if center_norm <= radius {
            let v = g.p.eval(&center).expect("dimension checked");
            if v > bound {
                return Sweep::Refuted { value: v };
            }
        }
        let (widest, w) = b
            .iter()
            .enumerate()
            .map(|(i, iv)| (i, iv.width()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if w < min_width {
            best_ub = best_ub.max(enc.hi);
            return Sweep::Indeterminate { boxes, best_ub };
        }
        let mid = b[widest].mid();
        let mut lo_box = b.clone();
        let mut hi_box = b;
        lo_box[widest] = Interval::new(lo_box[widest].lo, mid);
        hi_box[widest] = Interval::new(mid, hi_box[widest].hi);
        stack.push(lo_box);
        stack.push(hi_box);
    }
    Sweep::Certified { boxes }
}

/// A certified upper bound for `g` over the ball: refine the worst box under
/// a budget and return the global interval maximum, valid at any refinement.
fn certified_sup_on_ball(g: &PolyWithGrad, radius: f64, budget: usize) -> f64 {
    use std::cmp::Ordering;
    use std::collections::BinaryHeap;
    struct Leaf(f64, Vec<Interval>);
    impl PartialEq for Leaf {
        fn eq(&self, other: &Self) -> bool {
            self.0 == other.0
        }
    }
    impl Eq for Leaf {}
    impl PartialOrd for Leaf {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Leaf {
        fn cmp(&self, other: &Self) -> Ordering {
            self.0.total_cmp(&other.0)
        }
    }
    let dim = g.p.dim();
    let root: Vec<Interval> = (0..dim).map(|_| Interval::new(-radius, radius)).collect();
    let mut heap = BinaryHeap::new();
    heap.push(Leaf(g.eval_interval(&root).hi, root));
    let mut settled = f64::NEG_INFINITY;
    for _ in 0..budget {
        let Leaf(ub, b) = match heap.pop() {
            Some(x) => x,
            None => break,
        };
        let (widest, w) = b
            .iter()
            .enumerate()
            .map(|(i, iv)| (i, iv.width()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if w < radius * 1e-6 {
            settled = settled.max(ub);
            break;
        }
        let mid = b[widest].mid();
        for half in 0..2 {
            let mut nb = b.clone();
            nb[widest] = if half == 0 {
                Interval::new(nb[widest].lo, mid)
            } else {
                Interval::new(mid, nb[widest].hi)
            };
            if box_min_norm(&nb) > radius {
                continue;
            }
            heap.push(Leaf(g.eval_interval(&nb).hi, nb));
        }
    }
    heap.iter()
        .map(|Leaf(ub, _)| *ub)
        .fold(settled, f64::max)
}

fn sample_ball(rng: &mut ChaCha8Rng, dim: usize, radius: f64, on_sphere: bool) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0f64)).collect();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(1e-9..=1.0).contains(&norm) {
            continue;
        }
        let r = if on_sphere {
            radius
        } else {
            radius * rng.gen_range(0.0f64..1.0).powf(1.0 / dim as f64)
        };
        return v.iter().map(|x| x * r / norm).collect();
    }
}

/// Seeded sample set for the coefficient search: ball and sphere points plus
/// points on and near the e = 0 slice, where the triggering function is
/// negative and actually constrains delta_0.
fn search_samples(rng: &mut ChaCha8Rng, n: usize, d: f64, count: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    let quarter = count / 4;
    for _ in 0..quarter {
        out.push(sample_ball(rng, 2 * n, d, false));
    }
    for _ in 0..quarter {
        out.push(sample_ball(rng, 2 * n, d, true));
    }
    // e = 0 slice and thin slivers around it
    for k in 0..(count - 2 * quarter) {
        let zr = d * rng.gen_range(0.1f64..1.0);
        let z = sample_ball(rng, n, zr, false);
        let mut xi = vec![0.0; 2 * n];
        xi[..n].copy_from_slice(&z);
        if k % 2 == 1 {
            let znorm: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            let er = 0.01 * znorm * rng.gen_range(0.0f64..1.0);
            let e = sample_ball(rng, n, er, false);
            xi[n..].copy_from_slice(&e);
        }
        out.push(xi);
    }
    out
}

pub fn solve_delta(
    ext: &ExtendedSystem,
    phi: &Polynomial,
    p: usize,
    d: f64,
    z_radius: f64,
    epsilon: f64,
    params: &DeltaSearchParams,
) -> Result<DeltaCertificate, DeltaError> {
    solve_delta_with_report(ext, phi, p, d, z_radius, epsilon, params).map(|(c, _)| c)
}

pub fn solve_delta_with_report(
    ext: &ExtendedSystem,
    phi: &Polynomial,
    p: usize,
    d: f64,
    z_radius: f64,
    epsilon: f64,
    params: &DeltaSearchParams,
) -> Result<(DeltaCertificate, SolveReport), DeltaError> {
    if p < 1 {
        return Err(DeltaError::BadOrder);
    }
    if !(d > 0.0 && z_radius > 0.0) || d + 1e-12 < 5f64.sqrt() * z_radius {
        return Err(DeltaError::ProxyDoesNotFit { d, z_radius });
    }
    if epsilon <= 0.0 {
        return Err(DeltaError::BadEpsilon);
    }
    let n = ext.n;
    let mut lie_phis = vec![phi.clone()];
    for _ in 0..p {
        lie_phis.push(ext.field.lie_derivative(lie_phis.last().unwrap())?);
    }
    let phi_state = PolyWithGrad::new(restrict_to_state(phi, n).scale(-1.0));
    // sup of -phi(z,0) over Z: how much condition (b) charges per unit delta_0
    let b_charge = certified_sup_on_ball(&phi_state, z_radius, 4000).max(0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let samples = search_samples(&mut rng, n, d, params.lp_samples);
    let table: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| lie_phis.iter().map(|l| l.eval(s).unwrap()).collect())
        .collect();
    let sup_abs: Vec<f64> = (0..=p)
        .map(|i| {
            table
                .iter()
                .map(|row| row[i].abs())
                .fold(0.0f64, f64::max)
                .max(1e-300)
        })
        .collect();
    let caps: Vec<f64> = (0..p)
        .map(|i| params.coeff_cap_ratio * sup_abs[p] / sup_abs[i])
        .collect();

    // delta_p needed by conditions (a) and (b) at the samples, for fixed
    // lower-order deltas
    let needed = |lower: &[f64]| -> f64 {
        let mut need = epsilon + lower[0] * b_charge;
        for row in &table {
            let mut rhs = 0.0;
            for i in 0..p {
                rhs += lower[i] * row[i];
            }
            need = need.max(row[p] - rhs);
        }
        need
    };

    // coordinate descent on the lower-order deltas (the objective is convex
    // piecewise-linear in them)
    let mut lower = vec![0.0f64; p];
    let mut best = needed(&lower);
    for _ in 0..40 {
        let mut improved = false;
        for i in 0..p {
            let ladder = [0.0, 1e-3, 1e-2, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1e3];
            for &frac in &ladder {
                let cand_val = (frac * caps[i].min(1e12)).min(caps[i]);
                let mut cand = lower.clone();
                cand[i] = cand_val;
                let v = needed(&cand);
                if v < best * (1.0 - 1e-12) {
                    best = v;
                    lower = cand;
                    improved = true;
                }
            }
            for &f in &[0.5f64, 0.8, 1.25, 2.0] {
                let mut cand = lower.clone();
                cand[i] = (cand[i] * f).min(caps[i]);
                let v = needed(&cand);
                if v < best * (1.0 - 1e-12) {
                    best = v;
                    lower = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }

    let mut delta_p = (best.max(epsilon)) * 1.05;
    let mut boxes_total = 0usize;
    for round in 0..params.max_rounds {
        match certify(
            &lie_phis,
            &lower,
            delta_p,
            d,
            epsilon,
            b_charge,
            params.max_boxes,
        ) {
            CertifyOutcome::Ok { boxes } => {
                boxes_total += boxes;
                let mut deltas = lower.clone();
                deltas.push(delta_p);
                let cert = DeltaCertificate {
                    deltas,
                    p,
                    d,
                    z_radius,
                    epsilon,
                    lie_phis,
                };
                return Ok((
                    cert,
                    SolveReport {
                        rounds_used: round + 1,
                        used_fallback: false,
                        boxes_explored: boxes_total,
                    },
                ));
            }
            CertifyOutcome::Fail { boxes, need_hint } => {
                boxes_total += boxes;
                delta_p = (delta_p * 1.5).max(need_hint * 1.02);
            }
        }
    }
    // always-valid fallback: zero lower-order deltas, constant bounding the
    // p-th Lie derivative over the ball
    let gp = PolyWithGrad::new(lie_phis[p].clone());
    let sup_p = certified_sup_on_ball(&gp, d, 20_000);
    let fallback_delta_p = sup_p.max(epsilon);
    let mut deltas = vec![0.0; p];
    deltas.push(fallback_delta_p);
    let cert = DeltaCertificate {
        deltas,
        p,
        d,
        z_radius,
        epsilon,
        lie_phis,
    };
    Ok((
        cert,
        SolveReport {
            rounds_used: params.max_rounds,
            used_fallback: true,
            boxes_explored: boxes_total,
        },
    ))
}

enum CertifyOutcome {
    Ok { boxes: usize },
    Fail { boxes: usize, need_hint: f64 },
}

#[allow(clippy::too_many_arguments)]
fn certify(
    lie_phis: &[Polynomial],
    lower: &[f64],
    delta_p: f64,
    d: f64,
    epsilon: f64,
    b_charge: f64,
    max_boxes: usize,
) -> CertifyOutcome {
    // condition (b) with the ball proxy reduces to a scalar comparison
    if lower[0] * b_charge + epsilon > delta_p {
        return CertifyOutcome::Fail {
            boxes: 0,
            need_hint: lower[0] * b_charge + epsilon,
        };
    }
    let p = lower.len();
    let mut g = lie_phis[p].clone();
    for i in 0..p {
        g = g.sub(&lie_phis[i].scale(lower[i]));
    }
    let gg = PolyWithGrad::new(g);
    match certify_sup_on_ball(&gg, d, delta_p, max_boxes) {
        Sweep::Certified { boxes } => CertifyOutcome::Ok { boxes },
        Sweep::Refuted { value } => CertifyOutcome::Fail {
            boxes: 0,
            need_hint: value,
        },
        Sweep::Indeterminate { boxes, best_ub } => CertifyOutcome::Fail {
            boxes,
            need_hint: best_ub.max(delta_p),
        },
    }
}

/// Worst signed margins of the two certificate inequalities over a Monte
/// Carlo sample; nonnegative margins mean no violation.
#[derive(Debug, Clone)]
pub struct ViolationReport {
    pub samples: usize,
    /// min over samples of delta_p + sum delta_i L^i - L^p (condition a)
    pub worst_margin_a: f64,
    /// min over Z samples of delta_0 phi(z,0) + delta_p - epsilon (condition b)
    pub worst_margin_b: f64,
    pub violations_a: Vec<Vec<f64>>,
    pub violations_b: Vec<Vec<f64>>,
}

impl ViolationReport {
    pub fn passed(&self) -> bool {
        self.violations_a.is_empty() && self.violations_b.is_empty()
    }
}

pub fn verify_delta(cert: &DeltaCertificate, n_samples: usize, rng_seed: u64) -> ViolationReport {
    let p = cert.p;
    let dim = cert.lie_phis[0].dim();
    let n = dim / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let phi_state = restrict_to_state(&cert.lie_phis[0], n);
    let mut worst_a = f64::INFINITY;
    let mut worst_b = f64::INFINITY;
    let mut viol_a = Vec::new();
    let mut viol_b = Vec::new();
    for k in 0..n_samples {
        // alternate generic ball points with near-slice points, mirroring
        // where each inequality actually binds
        let xi = if k % 3 == 2 {
            let zr = cert.d * rng.gen_range(0.05f64..1.0);
            let z = sample_ball(&mut rng, n, zr, false);
            let mut v = vec![0.0; dim];
            v[..n].copy_from_slice(&z);
            v
        } else {
            sample_ball(&mut rng, dim, cert.d, k % 3 == 1)
        };
        let mut rhs = cert.deltas[p];
        for i in 0..p {
            rhs += cert.deltas[i] * cert.lie_phis[i].eval(&xi).unwrap();
        }
        let margin = rhs - cert.lie_phis[p].eval(&xi).unwrap();
        if margin < worst_a {
            worst_a = margin;
        }
        if margin < 0.0 {
            viol_a.push(xi);
        }
        let z = sample_ball(&mut rng, n, cert.z_radius, k % 2 == 0);
        let margin_b =
            cert.deltas[0] * phi_state.eval(&z).unwrap() + cert.deltas[p] - cert.epsilon;
        if margin_b < worst_b {
            worst_b = margin_b;
        }
        if margin_b < 0.0 {
            viol_b.push(z);
        }
    }
    ViolationReport {
        samples: n_samples,
        worst_margin_a: worst_a,
        worst_margin_b: worst_b,
        violations_a: viol_a,
        violations_b: viol_b,
    }
}

impl DeltaCertificate {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "deltas": self.deltas,
            "p": self.p,
            "d": self.d,
            "z_radius": self.z_radius,
            "epsilon": self.epsilon,
            "dim": self.lie_phis[0].dim(),
            "lie_phis": self.lie_phis.iter().map(|p| p.to_string()).collect::<Vec<_>>(),
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self, DeltaError> {
        let get = |k: &str| {
            v.get(k)
                .ok_or_else(|| DeltaError::BadJson(format!("missing field `{k}`")))
        };
        let deltas: Vec<f64> = serde_json::from_value(get("deltas")?.clone())
            .map_err(|e| DeltaError::BadJson(e.to_string()))?;
        let p = get("p")?
            .as_u64()
            .ok_or_else(|| DeltaError::BadJson("p must be an integer".into()))? as usize;
        let dim = get("dim")?
            .as_u64()
            .ok_or_else(|| DeltaError::BadJson("dim must be an integer".into()))?
            as usize;
        let texts: Vec<String> = serde_json::from_value(get("lie_phis")?.clone())
            .map_err(|e| DeltaError::BadJson(e.to_string()))?;
        let lie_phis: Vec<Polynomial> = texts
            .iter()
            .map(|t| Polynomial::parse(t, dim))
            .collect::<Result<_, _>>()?;
        let d = get("d")?.as_f64().ok_or_else(|| DeltaError::BadJson("d".into()))?;
        let z_radius = get("z_radius")?
            .as_f64()
            .ok_or_else(|| DeltaError::BadJson("z_radius".into()))?;
        let epsilon = get("epsilon")?
            .as_f64()
            .ok_or_else(|| DeltaError::BadJson("epsilon".into()))?;
        if deltas.len() != p + 1 || lie_phis.len() != p + 1 {
            return Err(DeltaError::BadJson("length mismatch".into()));
        }
        Ok(Self {
            deltas,
            p,
            d,
            z_radius,
            epsilon,
            lie_phis,
        })
    }
}
