//! Semi-algebraic ball-segment overapproximations of the quotient regions:
//! certified spherical radii per cone via interval subdivision of the
//! direction arc, bisection on the radius, and the homogeneity shortcut that
//! scales one certified pair of radii to every band.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::interval::Interval;
use crate::isochron::{IsochronError, MuFunction};
use crate::partition::Cone;
use crate::poly::Polynomial;

#[derive(Debug, Error)]
pub enum OverapproxError {
    #[error("cone {0} carries no angular interval; radius certification is planar")]
    NoAngularData(usize),
    #[error("no certified bracket within radii [{lo}, {hi}] for cone {cone}")]
    NoBracket { cone: usize, lo: f64, hi: f64 },
    #[error(transparent)]
    Isochron(#[from] IsochronError),
}

/// Cone intersected with an annulus (a ball for innermost bands).
#[derive(Debug, Clone, PartialEq)]
pub struct BallSegment {
    pub cone: usize,
    pub r_inner: f64,
    pub r_outer: f64,
}

impl BallSegment {
    pub fn contains_radius(&self, r: f64) -> bool {
        self.r_inner <= r && r <= self.r_outer
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CertifyParams {
    pub max_patches: usize,
    /// Give up (indeterminate) below this patch width in radians.
    pub min_patch_width: f64,
}

impl Default for CertifyParams {
    fn default() -> Self {
        Self {
            max_patches: 20_000,
            min_patch_width: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Certified,
    Refuted,
    /// Subdivision budget exhausted; callers treat this as not certified.
    Indeterminate,
}

impl Verdict {
    pub fn holds(self) -> bool {
        self == Verdict::Certified
    }
}

fn inflate_rel(x: f64, rel: f64) -> Interval {
    let pad = x.abs() * rel + f64::MIN_POSITIVE;
    Interval::new(x - pad, x + pad)
}

/// Sign certification of mu on the spherical segment of radius `r` inside the
/// cone. With |x| fixed the matrix exponential becomes one numeric row, so
/// mu's sign on the segment is the sign of a fixed linear combination of the
/// direction vector, bounded patch-wise with interval arithmetic.
fn certify_sign(
    mu: &MuFunction,
    cone: &Cone,
    tau_star: f64,
    r: f64,
    want_nonpositive: bool,
    params: &CertifyParams,
) -> Result<Verdict, OverapproxError> {
    let (lo, hi) = cone
        .angular
        .ok_or(OverapproxError::NoAngularData(cone.index))?;
    let s = mu.scaled_time(r, tau_star);
    // absorbs matrix-exponential rounding
    let w: Vec<Interval> = mu.exp_row(s).iter().map(|&x| inflate_rel(x, 1e-12)).collect();
    let mut stack = vec![Interval::new(lo, hi)];
    let mut patches = 0usize;
    while let Some(arc) = stack.pop() {
        patches += 1;
        if patches > params.max_patches {
            return Ok(Verdict::Indeterminate);
        }
        let v = mu.direction_vector_interval(&arc);
        let mut dot = Interval::ZERO;
        for (wi, vi) in w.iter().zip(&v) {
            dot = dot.add(&wi.mul(vi));
        }
        let ok = if want_nonpositive { dot.hi <= 0.0 } else { dot.lo >= 0.0 };
        if ok {
            continue;
        }
        // a point value of the wrong sign refutes outright
        let mid = arc.mid();
        let vm = mu.direction_vector(&[mid.cos(), mid.sin()]);
        let point: f64 = mu
            .exp_row(s)
            .iter()
            .zip(&vm)
            .map(|(a, b)| a * b)
            .sum();
        let bad = if want_nonpositive { point > 0.0 } else { point < 0.0 };
        if bad {
            return Ok(Verdict::Refuted);
        }
        if arc.width() < params.min_patch_width {
            return Ok(Verdict::Indeterminate);
        }
        stack.push(Interval::new(arc.lo, mid));
        stack.push(Interval::new(mid, arc.hi));
    }
    Ok(Verdict::Certified)
}

/// True iff mu(r u, tau_star) <= 0 for every unit direction u in the cone,
/// i.e. the spherical segment lies inside the manifold approximation.
pub fn certify_inner_radius(
    mu: &MuFunction,
    cone: &Cone,
    tau_star: f64,
    r: f64,
    params: &CertifyParams,
) -> Result<Verdict, OverapproxError> {
    certify_sign(mu, cone, tau_star, r, true, params)
}

/// True iff mu(r u, tau_star) >= 0 on the segment (outside the approximation).
pub fn certify_outer_radius(
    mu: &MuFunction,
    cone: &Cone,
    tau_star: f64,
    r: f64,
    params: &CertifyParams,
) -> Result<Verdict, OverapproxError> {
    certify_sign(mu, cone, tau_star, r, false, params)
}

/// Largest certified inner and smallest certified outer radius, located by
/// bisection to absolute width `tol`. Brackets are seeded from ray roots at
/// `seed_directions` directions, inflated by 20%.
pub fn bisect_radii(
    mu: &MuFunction,
    cone: &Cone,
    tau_star: f64,
    tol: f64,
    seed_directions: usize,
    params: &CertifyParams,
) -> Result<(f64, f64), OverapproxError> {
    let (lo_ang, hi_ang) = cone
        .angular
        .ok_or(OverapproxError::NoAngularData(cone.index))?;
    let seeds = seed_directions.max(2);
    let mut root_min = f64::INFINITY;
    let mut root_max = f64::NEG_INFINITY;
    for k in 0..seeds {
        let a = lo_ang + (hi_ang - lo_ang) * (k as f64) / ((seeds - 1) as f64);
        let root = mu.manifold_radius_along_ray(&[a.cos(), a.sin()], tau_star, tol * 0.1)?;
        root_min = root_min.min(root);
        root_max = root_max.max(root);
    }
    let mut bracket_lo = root_min * 0.8;
    let mut bracket_hi = root_max * 1.2;
    // inner radius: largest certified r with mu <= 0 on the segment
    let mut tries = 0;
    while !certify_inner_radius(mu, cone, tau_star, bracket_lo, params)?.holds() {
        bracket_lo *= 0.8;
        tries += 1;
        if tries > 40 {
            return Err(OverapproxError::NoBracket {
                cone: cone.index,
                lo: bracket_lo,
                hi: bracket_hi,
            });
        }
    }
    let mut in_lo = bracket_lo; // certified
    let mut in_hi = root_max * 1.2; // not certifiable (above some root)
    while in_hi - in_lo > tol {
        let mid = 0.5 * (in_lo + in_hi);
        if certify_inner_radius(mu, cone, tau_star, mid, params)?.holds() {
            in_lo = mid;
        } else {
            in_hi = mid;
        }
    }
    // outer radius: smallest certified r with mu >= 0 on the segment
    tries = 0;
    while !certify_outer_radius(mu, cone, tau_star, bracket_hi, params)?.holds() {
        bracket_hi *= 1.25;
        tries += 1;
        if tries > 40 {
            return Err(OverapproxError::NoBracket {
                cone: cone.index,
                lo: bracket_lo,
                hi: bracket_hi,
            });
        }
    }
    let mut out_lo = root_min * 0.8; // not certifiable
    let mut out_hi = bracket_hi; // certified
    while out_hi - out_lo > tol {
        let mid = 0.5 * (out_lo + out_hi);
        if certify_outer_radius(mu, cone, tau_star, mid, params)?.holds() {
            out_hi = mid;
        } else {
            out_lo = mid;
        }
    }
    debug_assert!(in_lo <= out_hi);
    Ok((in_lo, out_hi))
}

/// Radius scaling factor between isochron times: lambda_i = (tau*/tau_i)^(1/alpha).
pub fn scale_radii(r_star: f64, tau_star: f64, tau_i: f64, alpha: i64) -> f64 {
    (tau_star / tau_i).powf(1.0 / alpha as f64) * r_star
}

/// Bisect radii once per cone at the first (smallest) time and scale to all
/// bands. Band i gets the annulus [inner radius of band i+1's manifold,
/// outer radius of band i's]; the innermost band keeps the full ball.
pub fn build_ball_segments(
    mu: &MuFunction,
    cones: &[Cone],
    times: &[f64],
    tol: f64,
    seed_directions: usize,
    params: &CertifyParams,
) -> Result<BTreeMap<(usize, usize), BallSegment>, OverapproxError> {
    assert!(times.windows(2).all(|w| w[0] < w[1]), "times must be sorted");
    let q = times.len();
    let tau_star = times[0];
    let mut out = BTreeMap::new();
    for cone in cones {
        let (r_in_star, r_out_star) =
            bisect_radii(mu, cone, tau_star, tol, seed_directions, params)?;
        for (idx, _) in times.iter().enumerate() {
            let band = idx + 1;
            let lam_i = scale_radii(1.0, tau_star, times[idx], mu.alpha);
            let r_outer = lam_i * r_out_star;
            let r_inner = if band == q {
                0.0
            } else {
                scale_radii(r_in_star, tau_star, times[idx + 1], mu.alpha)
            };
            out.insert(
                (band, cone.index),
                BallSegment {
                    cone: cone.index,
                    r_inner,
                    r_outer,
                },
            );
        }
    }
    Ok(out)
}

pub fn write_segments_csv<W: std::io::Write>(
    w: &mut W,
    segments: &BTreeMap<(usize, usize), BallSegment>,
) -> std::io::Result<()> {
    writeln!(w, "band,cone,r_inner,r_outer")?;
    for ((i, j), seg) in segments {
        writeln!(w, "{i},{j},{},{}", seg.r_inner, seg.r_outer)?;
    }
    Ok(())
}

/// Exact decimal expansion of an f64 as an SMT-LIB Real literal.
fn smt_real(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let body = if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{:.1}", x.abs())
    } else {
        let s = format!("{:.340}", x.abs());
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    };
    if x < 0.0 {
        format!("(- {body})")
    } else {
        body
    }
}

fn poly_to_smt(p: &Polynomial) -> String {
    if p.is_zero() {
        return "0".to_string();
    }
    let mut terms = Vec::new();
    for (m, c) in p.terms() {
        let mut factors = vec![smt_real(c)];
        for (k, &e) in m.0.iter().enumerate() {
            for _ in 0..e {
                factors.push(format!("x{}", k + 1));
            }
        }
        terms.push(if factors.len() == 1 {
            factors.pop().unwrap()
        } else {
            format!("(* {})", factors.join(" "))
        });
    }
    if terms.len() == 1 {
        terms.pop().unwrap()
    } else {
        format!("(+ {})", terms.join(" "))
    }
}

/// The spherical-segment sign condition as an SMT-LIB query: unsat confirms
/// the certified claim. Variables are the planar state; the matrix
/// exponential row is already numeric because |x| is pinned to `r`.
pub fn emit_smtlib_query(
    mu: &MuFunction,
    cone: &Cone,
    tau_star: f64,
    r: f64,
    inner: bool,
) -> Result<String, OverapproxError> {
    if mu.state_dim() != 2 {
        return Err(OverapproxError::NoAngularData(cone.index));
    }
    let p = mu.cert.p;
    let s = mu.scaled_time(r, tau_star);
    let w = mu.exp_row(s);
    // L^k phi((rho/r) x, 0) as polynomials in the planar state
    let scale = mu.rho / r;
    let images: Vec<Polynomial> = vec![
        Polynomial::variable(2, 0).scale(scale),
        Polynomial::variable(2, 1).scale(scale),
        Polynomial::zero(2),
        Polynomial::zero(2),
    ];
    let mut out = String::new();
    out.push_str("(set-logic QF_NRA)\n");
    out.push_str(&format!(
        "; segment sign query: cone {}, tau* = {}, r = {}, {} claim\n",
        cone.index,
        tau_star,
        r,
        if inner { "inner (mu <= 0)" } else { "outer (mu >= 0)" }
    ));
    out.push_str("(declare-const x1 Real)\n(declare-const x2 Real)\n");
    for row in &cone.rows {
        out.push_str(&format!(
            "(assert (>= (+ (* {} x1) (* {} x2)) 0))\n",
            smt_real(row[0]),
            smt_real(row[1])
        ));
    }
    out.push_str(&format!(
        "(assert (= (+ (* x1 x1) (* x2 x2)) {}))\n",
        smt_real(r * r)
    ));
    let mut sum_terms = Vec::new();
    for (k, wv) in w.iter().enumerate().take(p + 1) {
        let wk = smt_real(*wv);
        if k == p {
            sum_terms.push(format!("(* {wk} {})", smt_real(mu.cert.deltas[p])));
            continue;
        }
        let poly = mu.cert.lie_phis[k].substitute(&images).expect("planar");
        let expr = poly_to_smt(&poly);
        if k == 0 {
            sum_terms.push(format!("(* {wk} {expr})"));
        } else {
            sum_terms.push(format!("(* {wk} (ite (> {expr} 0) {expr} 0))"));
        }
    }
    let mu_expr = format!("(+ {})", sum_terms.join(" "));
    // negation of the claim: a witness direction of the wrong sign
    let op = if inner { ">" } else { "<" };
    out.push_str(&format!("(assert ({op} {mu_expr} 0))\n"));
    out.push_str("(check-sat)\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delta::{solve_delta, DeltaSearchParams};
    use crate::etc::{build_extended_field, EtcSystem};
    use crate::partition::build_cones;
    use crate::poly::PolyVectorField;

    fn demo_mu() -> MuFunction {
        use std::sync::OnceLock;
        static CACHE: OnceLock<MuFunction> = OnceLock::new();
        CACHE
            .get_or_init(|| {
                let plant = PolyVectorField::new(vec![
                    Polynomial::parse("-1*x1^3 + x1*x2^2", 3).unwrap(),
                    Polynomial::parse("x1*x2^2 - x1^2*x2 + x3", 3).unwrap(),
                ]);
                let controller = PolyVectorField::new(vec![Polynomial::parse(
                    "-1*x2^3 - x1*x2^2",
                    2,
                )
                .unwrap()]);
                let sys = EtcSystem::new(plant, controller, 1.45161e-5, Some(2)).unwrap();
                let ext = build_extended_field(&sys).unwrap();
                let phi = sys.triggering_polynomial();
                let params = DeltaSearchParams {
                    lp_samples: 600,
                    max_rounds: 0,
                    ..Default::default()
                };
                let cert = solve_delta(&ext, &phi, 4, 5f64.sqrt(), 1.0, 1e-6, &params).unwrap();
                MuFunction::new(cert, 1.0, sys.alpha, sys.theta).unwrap()
            })
            .clone()
    }

    fn dense_root_span(mu: &MuFunction, cone: &Cone, tau: f64, k: usize) -> (f64, f64) {
        let (lo, hi) = cone.angular.unwrap();
        let mut mn = f64::INFINITY;
        let mut mx = f64::NEG_INFINITY;
        for i in 0..=k {
            let a = lo + (hi - lo) * (i as f64) / (k as f64);
            let r = mu
                .manifold_radius_along_ray(&[a.cos(), a.sin()], tau, 1e-9)
                .unwrap();
            mn = mn.min(r);
            mx = mx.max(r);
        }
        (mn, mx)
    }

    #[test]
    fn small_radius_certifies_inner_large_refutes() {
        let mu = demo_mu();
        let cones = build_cones(16, 2).unwrap();
        let cone = &cones[0];
        let tau = 4e-4;
        let params = CertifyParams::default();
        let (mn, mx) = dense_root_span(&mu, cone, tau, 256);
        assert!(certify_inner_radius(&mu, cone, tau, 0.99 * mn, &params)
            .unwrap()
            .holds());
        assert!(!certify_inner_radius(&mu, cone, tau, 1.01 * mx, &params)
            .unwrap()
            .holds());
        assert!(certify_inner_radius(&mu, cone, tau, 1e-3 * mn, &params)
            .unwrap()
            .holds());
    }

    #[test]
    fn outer_certification_mirrors_inner() {
        let mu = demo_mu();
        let cones = build_cones(16, 2).unwrap();
        let cone = &cones[2];
        let tau = 4e-4;
        let params = CertifyParams::default();
        let (mn, mx) = dense_root_span(&mu, cone, tau, 256);
        assert!(!certify_outer_radius(&mu, cone, tau, 0.99 * mn, &params)
            .unwrap()
            .holds());
        assert!(certify_outer_radius(&mu, cone, tau, 1.01 * mx, &params)
            .unwrap()
            .holds());
    }

    #[test]
    fn bisected_radii_bracket_dense_roots() {
        let mu = demo_mu();
        let cones = build_cones(16, 2).unwrap();
        let cone = &cones[5];
        let tau = 4e-4;
        let tol = 1e-4;
        let params = CertifyParams::default();
        let (r_in, r_out) = bisect_radii(&mu, cone, tau, tol, 64, &params).unwrap();
        let (mn, mx) = dense_root_span(&mu, cone, tau, 512);
        assert!(r_in <= mn + tol, "inner {r_in} above dense min {mn}");
        assert!(r_out >= mx - tol, "outer {r_out} below dense max {mx}");
        // certification soundness at the returned radii: 1e4 directions find
        // no sign of the wrong kind on either spherical segment
        let (alo, ahi) = cone.angular.unwrap();
        for k in 0..=10_000 {
            let a = alo + (ahi - alo) * (k as f64) / 10_000.0;
            let u = [a.cos(), a.sin()];
            let v = mu.direction_vector(&u);
            assert!(mu.mu_from_parts(r_in, &v, tau) <= 0.0);
            assert!(mu.mu_from_parts(r_out, &v, tau) >= 0.0);
        }
        // gap bound: certified gap within the direction spread plus slack
        assert!(
            r_out - r_in <= (mx - mn) + 2.0 * tol + 1e-3 * r_out,
            "gap {} too wide vs spread {}",
            r_out - r_in,
            mx - mn
        );
    }

    #[test]
    fn degenerate_single_direction_cone_converges_to_ray_root() {
        let mu = demo_mu();
        let a = 1.1f64;
        let cone = Cone {
            index: 1,
            rows: vec![vec![-a.sin(), a.cos()], vec![a.sin(), -a.cos()]],
            angular: Some((a, a)),
        };
        let tau = 4e-4;
        let tol = 1e-6;
        let root = mu
            .manifold_radius_along_ray(&[a.cos(), a.sin()], tau, 1e-10)
            .unwrap();
        let (r_in, r_out) =
            bisect_radii(&mu, &cone, tau, tol, 4, &CertifyParams::default()).unwrap();
        assert!((r_in - root).abs() <= 2.0 * tol, "{r_in} vs {root}");
        assert!((r_out - root).abs() <= 2.0 * tol, "{r_out} vs {root}");
    }

    #[test]
    fn radius_scaling_arithmetic() {
        assert_eq!(scale_radii(3.0, 4e-4, 4e-4, 2), 3.0);
        assert!((scale_radii(1.0, 4e-4, 16e-4, 2) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn scaled_radii_recertify_at_their_own_time() {
        let mu = demo_mu();
        let cones = build_cones(16, 2).unwrap();
        let cone = &cones[7];
        let tau_star = 4e-4;
        let tol = 1e-4;
        let params = CertifyParams::default();
        let (r_in, r_out) = bisect_radii(&mu, cone, tau_star, tol, 64, &params).unwrap();
        for tau_i in [8e-4, 2e-3] {
            let si = scale_radii(r_in, tau_star, tau_i, mu.alpha);
            let so = scale_radii(r_out, tau_star, tau_i, mu.alpha);
            assert!(certify_inner_radius(&mu, cone, tau_i, si * 0.999, &params)
                .unwrap()
                .holds());
            assert!(certify_outer_radius(&mu, cone, tau_i, so * 1.001, &params)
                .unwrap()
                .holds());
        }
    }

    #[test]
    fn segments_nest_and_innermost_reaches_origin() {
        let mu = demo_mu();
        let cones = build_cones(16, 2).unwrap();
        let times = [4e-4, 8e-4, 2e-3];
        let segs =
            build_ball_segments(&mu, &cones, &times, 1e-3, 32, &CertifyParams::default())
                .unwrap();
        assert_eq!(segs.len(), 48);
        for j in 1..=16 {
            for i in 1..3 {
                let outer_band = &segs[&(i, j)];
                let inner_band = &segs[&(i + 1, j)];
                assert!(inner_band.r_outer <= outer_band.r_outer + 1e-12);
                assert!(outer_band.r_inner < outer_band.r_outer);
            }
            assert_eq!(segs[&(3, j)].r_inner, 0.0);
        }
    }

    #[test]
    fn region_points_are_inside_their_segments() {
        use rand::{Rng, SeedableRng};
        let mu = demo_mu();
        let cones = build_cones(16, 2).unwrap();
        let times = [4e-4, 8e-4, 2e-3];
        let segs =
            build_ball_segments(&mu, &cones, &times, 1e-3, 32, &CertifyParams::default())
                .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(33);
        let mut checked = 0;
        while checked < 10_000 {
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = rng.gen_range(1e-3..5.0f64);
            let x = [r * a.cos(), r * a.sin()];
            if let Some((i, j)) =
                crate::partition::region_index(&mu, &cones, &times, &x).unwrap()
            {
                let seg = &segs[&(i, j)];
                assert!(
                    seg.contains_radius(r),
                    "point at radius {r} classified ({i},{j}) escapes [{}, {}]",
                    seg.r_inner,
                    seg.r_outer
                );
                checked += 1;
            }
        }
    }

    #[test]
    fn smtlib_query_is_well_formed() {
        let mu = demo_mu();
        let cones = build_cones(16, 2).unwrap();
        let q = emit_smtlib_query(&mu, &cones[0], 4e-4, 2.5, true).unwrap();
        assert!(q.starts_with("(set-logic QF_NRA)"));
        assert!(q.contains("(declare-const x1 Real)"));
        assert!(q.trim_end().ends_with("(check-sat)"));
        assert!(q.contains("ite"));
        // balanced parentheses
        let bal: i64 = q
            .chars()
            .map(|c| match c {
                '(' => 1,
                ')' => -1,
                _ => 0,
            })
            .sum();
        assert_eq!(bal, 0);
    }
}
