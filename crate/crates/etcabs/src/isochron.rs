//! The analytic inner approximation of isochronous manifolds and its ray-wise
//! geometry: evaluation, radius location along rays, and band membership.
//!
//! mu(x, t) = C (|x|/rho)^(theta+1) exp(A (|x|/rho)^alpha t) v(x/|x|), where
//! v collects the triggering function and its clipped Lie derivatives on the
//! reference sphere and A is the companion-with-constant matrix built from
//! the delta coefficients. Points with mu(x, t) <= 0 lie inside the
//! approximation of the manifold for time t.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::delta::DeltaCertificate;
use crate::etc::FieldEval;
use crate::expm::expm;
use crate::interval::{eval_poly_interval, IBox, Interval};
use crate::poly::PolyVectorField;

#[derive(Debug, Error)]
pub enum IsochronError {
    #[error("direction undefined at the origin")]
    OriginState,
    #[error("rho must satisfy 0 < rho <= z_radius (got rho = {rho}, z_radius = {z_radius})")]
    BadRho { rho: f64, z_radius: f64 },
    #[error("no sign change bracketed along the ray within radii [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },
}

#[derive(Debug, Clone)]
pub struct MuFunction {
    pub cert: DeltaCertificate,
    pub rho: f64,
    pub alpha: i64,
    pub theta: i64,
    /// Radii searched when bracketing ray intersections.
    pub radial_range: (f64, f64),
    a_matrix: DMatrix<f64>,
    lie_eval: FieldEval,
    n: usize,
}

impl MuFunction {
    pub fn new(
        cert: DeltaCertificate,
        rho: f64,
        alpha: i64,
        theta: i64,
    ) -> Result<Self, IsochronError> {
        if !(rho > 0.0 && rho <= cert.z_radius) {
            return Err(IsochronError::BadRho {
                rho,
                z_radius: cert.z_radius,
            });
        }
        let p = cert.p;
        let mut a = DMatrix::zeros(p + 1, p + 1);
        for k in 0..p.saturating_sub(1) {
            a[(k, k + 1)] = 1.0;
        }
        for i in 0..p {
            a[(p - 1, i)] = cert.deltas[i];
        }
        a[(p - 1, p)] = 1.0;
        let n = cert.lie_phis[0].dim() / 2;
        let lie_eval = FieldEval::new(&PolyVectorField::new(cert.lie_phis.clone()));
        Ok(Self {
            cert,
            rho,
            alpha,
            theta,
            radial_range: (1e-9, 1e9),
            a_matrix: a,
            lie_eval,
            n,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    /// The (p+1)-vector (phi(rho u, 0), max(L^1 phi, 0), ..,
    /// max(L^{p-1} phi, 0), delta_p) for a unit direction u.
    pub fn direction_vector(&self, u: &[f64]) -> Vec<f64> {
        let p = self.cert.p;
        let mut point = vec![0.0; 2 * self.n];
        for (pt, &ui) in point.iter_mut().zip(u) {
            *pt = self.rho * ui;
        }
        let mut vals = vec![0.0; p + 1];
        self.lie_eval.eval_into(&point, &mut vals);
        let mut v = Vec::with_capacity(p + 1);
        v.push(vals[0]);
        for item in vals.iter().take(p).skip(1) {
            v.push(item.max(0.0));
        }
        v.push(self.cert.deltas[p]);
        v
    }

    /// Interval enclosure of the direction vector over a 2-D arc of unit
    /// directions (angles in radians).
    pub fn direction_vector_interval(&self, angles: &Interval) -> Vec<Interval> {
        assert_eq!(self.n, 2, "arc enclosures are for planar systems");
        let p = self.cert.p;
        let cosr = angles.cos_range().scale(self.rho);
        let sinr = angles.sin_range().scale(self.rho);
        let b: IBox = vec![cosr, sinr, Interval::ZERO, Interval::ZERO];
        let mut v = Vec::with_capacity(p + 1);
        for (i, lie) in self.cert.lie_phis.iter().take(p).enumerate() {
            let enc = eval_poly_interval(lie, &b);
            v.push(if i == 0 { enc } else { enc.max_zero() });
        }
        v.push(Interval::point(self.cert.deltas[p]));
        v
    }

    /// First row of exp(A s).
    pub fn exp_row(&self, s: f64) -> Vec<f64> {
        let e = expm(&(&self.a_matrix * s));
        (0..self.cert.p + 1).map(|j| e[(0, j)]).collect()
    }

    /// Time-scale argument (|x|/rho)^alpha * t.
    pub fn scaled_time(&self, norm: f64, t: f64) -> f64 {
        (norm / self.rho).powi(self.alpha as i32) * t
    }

    pub fn radial_prefactor(&self, norm: f64) -> f64 {
        (norm / self.rho).powi(self.theta as i32 + 1)
    }

    pub fn mu_eval(&self, x: &[f64], t: f64) -> Result<f64, IsochronError> {
        let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(IsochronError::OriginState);
        }
        let u: Vec<f64> = x.iter().map(|v| v / norm).collect();
        let v = self.direction_vector(&u);
        Ok(self.mu_from_parts(norm, &v, t))
    }

    /// mu for a precomputed direction vector; `norm` is |x|.
    pub fn mu_from_parts(&self, norm: f64, v: &[f64], t: f64) -> f64 {
        let w = self.exp_row(self.scaled_time(norm, t));
        let dot: f64 = w.iter().zip(v).map(|(a, b)| a * b).sum();
        self.radial_prefactor(norm) * dot
    }

    /// The unique radius r with mu(r u, tau_star) = 0, by geometric
    /// bracketing from rho and bisection to width `tol`.
    pub fn manifold_radius_along_ray(
        &self,
        u: &[f64],
        tau_star: f64,
        tol: f64,
    ) -> Result<f64, IsochronError> {
        let v = self.direction_vector(u);
        let g = |r: f64| self.mu_from_parts(r, &v, tau_star);
        let (lo_lim, hi_lim) = self.radial_range;
        let mut lo;
        let mut hi;
        if g(self.rho) <= 0.0 {
            lo = self.rho;
            hi = self.rho * 2.0;
            while g(hi) <= 0.0 {
                lo = hi;
                hi *= 2.0;
                if hi > hi_lim {
                    return Err(IsochronError::NoBracket { lo: lo_lim, hi: hi_lim });
                }
            }
        } else {
            hi = self.rho;
            lo = self.rho * 0.5;
            while g(lo) > 0.0 {
                hi = lo;
                lo *= 0.5;
                if lo < lo_lim {
                    return Err(IsochronError::NoBracket { lo: lo_lim, hi: hi_lim });
                }
            }
        }
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if g(mid) <= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Band index (1-based) for `x` given the sorted lower-bound times:
    /// the largest i with mu(x, tau_i) <= 0, `None` outside the outermost
    /// approximation. Index q is the innermost band containing the origin's
    /// punctured neighborhood.
    pub fn region_membership(&self, times: &[f64], x: &[f64]) -> Result<Option<usize>, IsochronError> {
        let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(IsochronError::OriginState);
        }
        let u: Vec<f64> = x.iter().map(|v| v / norm).collect();
        let v = self.direction_vector(&u);
        let mut band = None;
        for (i, &tau) in times.iter().enumerate() {
            if self.mu_from_parts(norm, &v, tau) <= 0.0 {
                band = Some(i + 1);
            }
        }
        Ok(band)
    }
}

/// CSV rows (angle, tau, radius) for ray intersections of the manifold
/// approximations, reproducing the radial-sweep picture.
pub fn write_radial_sweep_csv<W: std::io::Write>(
    w: &mut W,
    mu: &MuFunction,
    times: &[f64],
    angles: usize,
    tol: f64,
) -> std::io::Result<()> {
    writeln!(w, "angle,tau,radius")?;
    for k in 0..angles {
        let a = std::f64::consts::TAU * (k as f64) / (angles as f64);
        let u = [a.cos(), a.sin()];
        for &tau in times {
            match mu.manifold_radius_along_ray(&u, tau, tol) {
                Ok(r) => writeln!(w, "{a},{tau},{r}")?,
                Err(_) => writeln!(w, "{a},{tau},")?,
            }
        }
    }
    Ok(())
}
