//! Outward-rounded interval arithmetic.
//!
//! Directed rounding is emulated by bumping computed endpoints outward with
//! `next_down`/`next_up`, which is conservative for every IEEE-754 operation
//! whose exact result lies within 1/2 ulp of the computed one. Transcendental
//! endpoints (sin/cos) get a wider bump to absorb libm error.

use crate::poly::Polynomial;

const ULP_BUMPS: u32 = 2;
const TRIG_BUMPS: u32 = 8;

fn bump_down(mut x: f64, n: u32) -> f64 {
    for _ in 0..n {
        x = x.next_down();
    }
    x
}

fn bump_up(mut x: f64, n: u32) -> f64 {
    for _ in 0..n {
        x = x.next_up();
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "inverted interval [{lo}, {hi}]");
        Self { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub const ZERO: Interval = Interval { lo: 0.0, hi: 0.0 };

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn mag(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn intersects(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval::new(self.lo.min(other.lo), self.hi.max(other.hi))
    }

    pub fn intersection(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        if lo <= hi {
            Some(Interval::new(lo, hi))
        } else {
            None
        }
    }

    pub fn inflate(&self, eps: f64) -> Interval {
        Interval::new(self.lo - eps, self.hi + eps)
    }

    pub fn add(&self, other: &Interval) -> Interval {
        Interval::new(
            bump_down(self.lo + other.lo, ULP_BUMPS),
            bump_up(self.hi + other.hi, ULP_BUMPS),
        )
    }

    pub fn sub(&self, other: &Interval) -> Interval {
        Interval::new(
            bump_down(self.lo - other.hi, ULP_BUMPS),
            bump_up(self.hi - other.lo, ULP_BUMPS),
        )
    }

    pub fn neg(&self) -> Interval {
        Interval::new(-self.hi, -self.lo)
    }

    pub fn mul(&self, other: &Interval) -> Interval {
        let c = [
            self.lo * other.lo,
            self.lo * other.hi,
            self.hi * other.lo,
            self.hi * other.hi,
        ];
        let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Interval::new(bump_down(lo, ULP_BUMPS), bump_up(hi, ULP_BUMPS))
    }

    pub fn scale(&self, k: f64) -> Interval {
        let (a, b) = (self.lo * k, self.hi * k);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        Interval::new(bump_down(lo, ULP_BUMPS), bump_up(hi, ULP_BUMPS))
    }

    /// Integer power with the usual even-power tightening at zero.
    pub fn powi(&self, e: u32) -> Interval {
        match e {
            0 => Interval::point(1.0),
            1 => *self,
            _ => {
                if e.is_multiple_of(2) {
                    let m = self.mag();
                    let hi = bump_up(m.powi(e as i32), ULP_BUMPS + 1);
                    let lo = if self.contains(0.0) {
                        0.0
                    } else {
                        let small = self.lo.abs().min(self.hi.abs());
                        bump_down(small.powi(e as i32), ULP_BUMPS + 1).max(0.0)
                    };
                    Interval::new(lo, hi)
                } else {
                    Interval::new(
                        bump_down(self.lo.powi(e as i32), ULP_BUMPS + 1),
                        bump_up(self.hi.powi(e as i32), ULP_BUMPS + 1),
                    )
                }
            }
        }
    }

    pub fn max_zero(&self) -> Interval {
        Interval::new(self.lo.max(0.0), self.hi.max(0.0))
    }

    /// Enclosure of cos over this interval of angles.
    pub fn cos_range(&self) -> Interval {
        use std::f64::consts::PI;
        let (a, b) = (self.lo - 1e-9, self.hi + 1e-9);
        let ca = self.lo.cos();
        let cb = self.hi.cos();
        let mut lo = bump_down(ca.min(cb), TRIG_BUMPS);
        let mut hi = bump_up(ca.max(cb), TRIG_BUMPS);
        // critical points: maxima at 2k*pi, minima at (2k+1)*pi
        if contains_multiple(a, b, 2.0 * PI, 0.0) {
            hi = 1.0;
        }
        if contains_multiple(a, b, 2.0 * PI, PI) {
            lo = -1.0;
        }
        Interval::new(lo.max(-1.0), hi.min(1.0))
    }

    /// Enclosure of sin over this interval of angles.
    pub fn sin_range(&self) -> Interval {
        use std::f64::consts::PI;
        let (a, b) = (self.lo - 1e-9, self.hi + 1e-9);
        let sa = self.lo.sin();
        let sb = self.hi.sin();
        let mut lo = bump_down(sa.min(sb), TRIG_BUMPS);
        let mut hi = bump_up(sa.max(sb), TRIG_BUMPS);
        if contains_multiple(a, b, 2.0 * PI, 0.5 * PI) {
            hi = 1.0;
        }
        if contains_multiple(a, b, 2.0 * PI, 1.5 * PI) {
            lo = -1.0;
        }
        Interval::new(lo.max(-1.0), hi.min(1.0))
    }
}

/// Whether [a, b] contains a point of the form offset + k*period.
fn contains_multiple(a: f64, b: f64, period: f64, offset: f64) -> bool {
    ((b - offset) / period).floor() >= ((a - offset) / period).ceil()
}

/// Axis-aligned box: one interval per coordinate.
pub type IBox = Vec<Interval>;

pub fn box_widths(b: &IBox) -> Vec<f64> {
    b.iter().map(|i| i.width()).collect()
}

pub fn box_max_width(b: &IBox) -> f64 {
    b.iter().map(|i| i.width()).fold(0.0, f64::max)
}

pub fn box_contains(b: &IBox, x: &[f64], slack: f64) -> bool {
    b.iter()
        .zip(x)
        .all(|(i, &v)| i.lo - slack <= v && v <= i.hi + slack)
}

pub fn box_hull(a: &IBox, b: &IBox) -> IBox {
    a.iter().zip(b).map(|(x, y)| x.hull(y)).collect()
}

/// Lower bound on |x| over the box (0 if the box contains the origin).
pub fn box_min_norm(b: &IBox) -> f64 {
    let mut sq = 0.0;
    for i in b {
        let d = if i.contains(0.0) {
            0.0
        } else {
            i.lo.abs().min(i.hi.abs())
        };
        sq += d * d;
    }
    sq.sqrt()
}

/// Upper bound on |x| over the box.
pub fn box_max_norm(b: &IBox) -> f64 {
    let mut sq = 0.0;
    for i in b {
        let d = i.mag();
        sq += d * d;
    }
    bump_up(sq.sqrt(), ULP_BUMPS)
}

/// Plain interval extension of a polynomial over a box.
pub fn eval_poly_interval(p: &Polynomial, b: &IBox) -> Interval {
    assert_eq!(p.dim(), b.len(), "box dimension mismatch");
    let mut acc = Interval::ZERO;
    for (m, c) in p.terms() {
        let mut term = Interval::point(c);
        for (iv, &e) in b.iter().zip(&m.0) {
            if e > 0 {
                term = term.mul(&iv.powi(e));
            }
        }
        acc = acc.add(&term);
    }
    acc
}

/// Polynomial bundled with its gradient, for mean-value-form evaluation.
#[derive(Debug, Clone)]
pub struct PolyWithGrad {
    pub p: Polynomial,
    pub grads: Vec<Polynomial>,
}

impl PolyWithGrad {
    pub fn new(p: Polynomial) -> Self {
        let grads = (0..p.dim()).map(|k| p.partial(k)).collect();
        Self { p, grads }
    }

    /// Intersection of the plain extension with the mean-value form
    /// f(mid) + grad(B) . (B - mid); both are enclosures.
    pub fn eval_interval(&self, b: &IBox) -> Interval {
        let plain = eval_poly_interval(&self.p, b);
        let mid_box: IBox = b.iter().map(|i| Interval::point(i.mid())).collect();
        let mut mv = eval_poly_interval(&self.p, &mid_box);
        for (g, iv) in self.grads.iter().zip(b) {
            let gi = eval_poly_interval(g, b);
            let dev = iv.sub(&Interval::point(iv.mid()));
            mv = mv.add(&gi.mul(&dev));
        }
        plain.intersection(&mv).unwrap_or(plain)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::Polynomial;
    use rand::{Rng, SeedableRng};

    #[test]
    fn arithmetic_contains_samples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = Interval::new(rng.gen_range(-2.0..0.5), rng.gen_range(0.5..2.0));
            let b = Interval::new(rng.gen_range(-1.0..0.0), rng.gen_range(0.0..1.5));
            let xa = rng.gen_range(a.lo..=a.hi);
            let xb = rng.gen_range(b.lo..=b.hi);
            assert!(a.add(&b).contains(xa + xb));
            assert!(a.sub(&b).contains(xa - xb));
            assert!(a.mul(&b).contains(xa * xb));
            assert!(a.powi(3).contains(xa * xa * xa));
            assert!(a.powi(4).contains(xa.powi(4)));
        }
    }

    #[test]
    fn even_power_tightens_at_zero() {
        let a = Interval::new(-2.0, 1.0);
        let sq = a.powi(2);
        assert_eq!(sq.lo, 0.0);
        assert!(sq.hi >= 4.0 && sq.hi < 4.0 + 1e-12);
    }

    #[test]
    fn trig_ranges_contain_samples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let a = rng.gen_range(-7.0..7.0);
            let w = rng.gen_range(0.0..3.0);
            let iv = Interval::new(a, a + w);
            let cr = iv.cos_range();
            let sr = iv.sin_range();
            for k in 0..=20 {
                let t = (a + w * (k as f64) / 20.0).clamp(iv.lo, iv.hi);
                assert!(cr.contains(t.cos()), "cos({t}) not in {cr:?}");
                assert!(sr.contains(t.sin()), "sin({t}) not in {sr:?}");
            }
        }
    }

    #[test]
    fn trig_full_period_is_unit_range() {
        let iv = Interval::new(0.0, 7.0);
        assert_eq!(iv.cos_range(), Interval::new(-1.0, 1.0));
        assert_eq!(iv.sin_range(), Interval::new(-1.0, 1.0));
    }

    #[test]
    fn poly_interval_contains_samples() {
        let p = Polynomial::parse("x1^3*x2 - 2*x1*x2^2 + 0.5", 2).unwrap();
        let pg = PolyWithGrad::new(p.clone());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let b: IBox = vec![
                Interval::new(rng.gen_range(-2.0..0.0), rng.gen_range(0.0..2.0)),
                Interval::new(rng.gen_range(-2.0..0.0), rng.gen_range(0.0..2.0)),
            ];
            let enc = pg.eval_interval(&b);
            for _ in 0..20 {
                let x = [
                    rng.gen_range(b[0].lo..=b[0].hi),
                    rng.gen_range(b[1].lo..=b[1].hi),
                ];
                let v = p.eval(&x).unwrap();
                assert!(enc.contains(v), "{v} not in {enc:?} over {b:?}");
            }
        }
    }

    #[test]
    fn mean_value_form_tightens_small_boxes() {
        let p = Polynomial::parse("x1^4 + x1*x2^3", 2).unwrap();
        let pg = PolyWithGrad::new(p.clone());
        let b: IBox = vec![Interval::new(1.0, 1.01), Interval::new(0.5, 0.51)];
        let plain = eval_poly_interval(&p, &b);
        let best = pg.eval_interval(&b);
        assert!(best.width() <= plain.width());
    }

    #[test]
    fn box_norm_bounds() {
        let b: IBox = vec![Interval::new(-1.0, 2.0), Interval::new(3.0, 4.0)];
        assert_eq!(box_min_norm(&b), 3.0); // x1 can be 0, x2 at least 3
        assert!((box_max_norm(&b) - (4.0f64 + 16.0).sqrt()).abs() < 1e-12);
    }
}
