//! Exact multivariate polynomial arithmetic over f64 coefficients.
//!
//! Polynomials are stored sparsely as exponent-vector -> coefficient maps in
//! graded lexicographic order, so printed and serialized forms are canonical.
//! Differentiation, products and substitution are exact in the exponents;
//! only coefficient arithmetic rounds.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PolyError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("parse error at `{at}`: {msg}")]
    Parse { at: String, msg: String },
}

/// Exponent vector ordered by total degree first, then lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Monomial(pub Vec<u32>);

impl Monomial {
    pub fn total_degree(&self) -> u32 {
        self.0.iter().sum()
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.total_degree()
            .cmp(&other.total_degree())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Sparse multivariate polynomial over a fixed ambient dimension.
///
/// Invariants: no stored coefficient is exactly 0.0, and every exponent
/// vector has length `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    dim: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        let mut p = Self::zero(dim);
        if c != 0.0 {
            p.terms.insert(Monomial(vec![0; dim]), c);
        }
        p
    }

    /// The coordinate polynomial x_{index} (0-based).
    pub fn variable(dim: usize, index: usize) -> Self {
        assert!(index < dim, "variable index out of range");
        let mut exps = vec![0u32; dim];
        exps[index] = 1;
        let mut p = Self::zero(dim);
        p.terms.insert(Monomial(exps), 1.0);
        p
    }

    pub fn from_terms(dim: usize, terms: impl IntoIterator<Item = (Vec<u32>, f64)>) -> Self {
        let mut p = Self::zero(dim);
        for (exps, c) in terms {
            assert_eq!(exps.len(), dim, "exponent vector length mismatch");
            p.add_term(Monomial(exps), c);
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn total_degree(&self) -> Option<u32> {
        self.terms.keys().map(|m| m.total_degree()).max()
    }

    fn add_term(&mut self, m: Monomial, c: f64) {
        if c == 0.0 {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(m) {
            Entry::Occupied(mut e) => {
                let v = e.get() + c;
                if v == 0.0 {
                    e.remove();
                } else {
                    *e.get_mut() = v;
                }
            }
            Entry::Vacant(e) => {
                e.insert(c);
            }
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "polynomial dimension mismatch");
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.add_term(m.clone(), c);
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, k: f64) -> Self {
        if k == 0.0 {
            return Self::zero(self.dim);
        }
        let mut out = Self::zero(self.dim);
        for (m, &c) in &self.terms {
            out.terms.insert(m.clone(), c * k);
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "polynomial dimension mismatch");
        let mut out = Self::zero(self.dim);
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                let exps: Vec<u32> = ma.0.iter().zip(&mb.0).map(|(a, b)| a + b).collect();
                out.add_term(Monomial(exps), ca * cb);
            }
        }
        out
    }

    /// Exact partial derivative with respect to variable `index`.
    pub fn partial(&self, index: usize) -> Self {
        assert!(index < self.dim, "variable index out of range");
        let mut out = Self::zero(self.dim);
        for (m, &c) in &self.terms {
            let e = m.0[index];
            if e == 0 {
                continue;
            }
            let mut exps = m.0.clone();
            exps[index] = e - 1;
            out.add_term(Monomial(exps), c * e as f64);
        }
        out
    }

    /// Evaluate at `x` with Neumaier compensated summation over the terms.
    pub fn eval(&self, x: &[f64]) -> Result<f64, PolyError> {
        if x.len() != self.dim {
            return Err(PolyError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for (m, &c) in &self.terms {
            let mut term = c;
            for (xi, &e) in x.iter().zip(&m.0) {
                if e > 0 {
                    term *= xi.powi(e as i32);
                }
            }
            let t = sum + term;
            if sum.abs() >= term.abs() {
                comp += (sum - t) + term;
            } else {
                comp += (term - t) + sum;
            }
            sum = t;
        }
        Ok(sum + comp)
    }

    /// Substitute each variable by the given polynomial (all over a common
    /// target dimension). Returns the composed polynomial.
    pub fn substitute(&self, images: &[Polynomial]) -> Result<Polynomial, PolyError> {
        if images.len() != self.dim {
            return Err(PolyError::DimensionMismatch {
                expected: self.dim,
                got: images.len(),
            });
        }
        let target_dim = images.first().map(|p| p.dim).unwrap_or(0);
        for p in images {
            if p.dim != target_dim {
                return Err(PolyError::DimensionMismatch {
                    expected: target_dim,
                    got: p.dim,
                });
            }
        }
        let mut out = Polynomial::zero(target_dim);
        for (m, &c) in &self.terms {
            let mut term = Polynomial::constant(target_dim, c);
            for (img, &e) in images.iter().zip(&m.0) {
                for _ in 0..e {
                    term = term.mul(img);
                }
            }
            out = out.add(&term);
        }
        Ok(out)
    }

    /// Embed into a larger ambient dimension, keeping variable indices.
    pub fn embed(&self, new_dim: usize) -> Polynomial {
        assert!(new_dim >= self.dim);
        let mut out = Polynomial::zero(new_dim);
        for (m, &c) in &self.terms {
            let mut exps = m.0.clone();
            exps.resize(new_dim, 0);
            out.terms.insert(Monomial(exps), c);
        }
        out
    }

    /// Parse the config text syntax: a sum of terms `c * x1^a * x2^b`,
    /// explicit `*` between factors, `^` for exponents, variables `x1..xN`
    /// (1-based). A term may also be a bare number or a bare variable
    /// product. Implicit multiplication is rejected.
    pub fn parse(text: &str, dim: usize) -> Result<Polynomial, PolyError> {
        let mut out = Polynomial::zero(dim);
        let mut rest = text.trim();
        if rest.is_empty() {
            return Err(PolyError::Parse {
                at: text.to_string(),
                msg: "empty polynomial".to_string(),
            });
        }
        let mut sign = 1.0f64;
        // leading sign
        if let Some(r) = rest.strip_prefix('-') {
            sign = -1.0;
            rest = r.trim_start();
        } else if let Some(r) = rest.strip_prefix('+') {
            rest = r.trim_start();
        }
        loop {
            let (term_str, remainder) = split_term(rest);
            let (coeff, exps) = parse_term(term_str, dim)?;
            out.add_term(Monomial(exps), sign * coeff);
            match remainder {
                None => break,
                Some((s, r)) => {
                    sign = s;
                    rest = r;
                }
            }
        }
        Ok(out)
    }
}

/// Split off the first additive term; returns the term text and, if more
/// terms follow, the sign connecting them plus the rest of the input.
fn split_term(s: &str) -> (&str, Option<(f64, &str)>) {
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c == '+' || c == '-' {
            // not a sign inside an exponent like `1e-5`
            let prev = s[..i].trim_end().chars().last();
            let is_exponent_sign = matches!(prev, Some('e') | Some('E'))
                && s[..i]
                    .trim_end()
                    .chars()
                    .rev()
                    .nth(1)
                    .map(|p| p.is_ascii_digit() || p == '.')
                    .unwrap_or(false);
            if !is_exponent_sign {
                let sign = if c == '+' { 1.0 } else { -1.0 };
                return (s[..i].trim(), Some((sign, s[i + 1..].trim_start())));
            }
        }
        i += 1;
    }
    (s.trim(), None)
}

fn parse_term(term: &str, dim: usize) -> Result<(f64, Vec<u32>), PolyError> {
    let mut coeff = 1.0f64;
    let mut exps = vec![0u32; dim];
    let mut saw_factor = false;
    for factor in term.split('*') {
        let f = factor.trim();
        if f.is_empty() {
            return Err(PolyError::Parse {
                at: term.to_string(),
                msg: "empty factor (check for stray `*`)".to_string(),
            });
        }
        saw_factor = true;
        if let Some(var) = f.strip_prefix('x') {
            let (idx_str, exp) = match var.split_once('^') {
                Some((i, e)) => {
                    let exp: u32 = e.trim().parse().map_err(|_| PolyError::Parse {
                        at: f.to_string(),
                        msg: "exponent must be a nonnegative integer".to_string(),
                    })?;
                    (i.trim(), exp)
                }
                None => (var.trim(), 1),
            };
            let idx: usize = idx_str.parse().map_err(|_| PolyError::Parse {
                at: f.to_string(),
                msg: "variable must be x<k> with k a positive integer".to_string(),
            })?;
            if idx == 0 || idx > dim {
                return Err(PolyError::Parse {
                    at: f.to_string(),
                    msg: format!("variable index out of range 1..={dim}"),
                });
            }
            exps[idx - 1] += exp;
        } else {
            let c: f64 = f.parse().map_err(|_| PolyError::Parse {
                at: f.to_string(),
                msg: "expected a number or x<k>[^e] factor (implicit multiplication is not allowed)"
                    .to_string(),
            })?;
            coeff *= c;
        }
    }
    if !saw_factor {
        return Err(PolyError::Parse {
            at: term.to_string(),
            msg: "empty term".to_string(),
        });
    }
    Ok((coeff, exps))
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, &c) in &self.terms {
            let mag = c.abs();
            if first {
                if c < 0.0 {
                    write!(f, "-")?;
                }
                first = false;
            } else if c < 0.0 {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let mut wrote = false;
            if mag != 1.0 || m.total_degree() == 0 {
                write!(f, "{}", mag)?;
                wrote = true;
            }
            for (k, &e) in m.0.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                if wrote {
                    write!(f, "*")?;
                }
                write!(f, "x{}", k + 1)?;
                if e > 1 {
                    write!(f, "^{}", e)?;
                }
                wrote = true;
            }
        }
        Ok(())
    }
}

/// An ordered list of polynomials over a common ambient dimension, read as a
/// map R^dim -> R^len.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyVectorField {
    components: Vec<Polynomial>,
    dim: usize,
}

/// Verdict of the classical-homogeneity check (standard dilation).
#[derive(Debug, Clone, PartialEq)]
pub enum Homogeneity {
    Degree(i64),
    NotHomogeneous {
        component: usize,
        offending_term: Monomial,
    },
}

impl PolyVectorField {
    pub fn new(components: Vec<Polynomial>) -> Self {
        let dim = components
            .first()
            .map(|p| p.dim())
            .expect("vector field needs at least one component");
        for p in &components {
            assert_eq!(p.dim(), dim, "component dimension mismatch");
        }
        Self { components, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn component(&self, i: usize) -> &Polynomial {
        &self.components[i]
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.components
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, PolyError> {
        self.components.iter().map(|p| p.eval(x)).collect()
    }

    /// Lie derivative of `h` along this field: sum_k dh/dx_k * f_k.
    /// Requires a square field (dim == len) over the same space as `h`.
    pub fn lie_derivative(&self, h: &Polynomial) -> Result<Polynomial, PolyError> {
        if h.dim() != self.dim {
            return Err(PolyError::DimensionMismatch {
                expected: self.dim,
                got: h.dim(),
            });
        }
        if self.components.len() != self.dim {
            return Err(PolyError::DimensionMismatch {
                expected: self.dim,
                got: self.components.len(),
            });
        }
        let mut out = Polynomial::zero(self.dim);
        for k in 0..self.dim {
            out = out.add(&h.partial(k).mul(&self.components[k]));
        }
        Ok(out)
    }

    /// Classical homogeneity: returns degree `a` if every monomial of every
    /// component has total degree `a + 1`, otherwise identifies an offending
    /// term. Zero components are compatible with any degree.
    pub fn homogeneity_degree(&self) -> Homogeneity {
        let mut degree: Option<u32> = None;
        for (ci, p) in self.components.iter().enumerate() {
            for (m, _) in p.terms() {
                let d = m.total_degree();
                match degree {
                    None => degree = Some(d),
                    Some(expected) if expected == d => {}
                    Some(_) => {
                        return Homogeneity::NotHomogeneous {
                            component: ci,
                            offending_term: m.clone(),
                        }
                    }
                }
            }
        }
        match degree {
            Some(d) => Homogeneity::Degree(d as i64 - 1),
            // all-zero field: homogeneous of any degree; report 0
            None => Homogeneity::Degree(0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(text: &str, dim: usize) -> Polynomial {
        Polynomial::parse(text, dim).unwrap()
    }

    #[test]
    fn eval_simple() {
        // x1^3 + x1*x2^2 at (1, 2) = 1 + 4 = 5
        let poly = p("x1^3 + x1*x2^2", 2);
        assert_eq!(poly.eval(&[1.0, 2.0]).unwrap(), 5.0);
    }

    #[test]
    fn eval_empty_is_zero() {
        let z = Polynomial::zero(3);
        assert_eq!(z.eval(&[1.0, -2.0, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn eval_closed_loop_component() {
        // second closed-loop component x1*x2^2 - x1^2*x2 + u with
        // u = -x2^3 - x1*x2^2 substituted: at (1, 1) equals 1 - 1 + (-1 - 1) = -2
        let poly = p("x1*x2^2 - x1^2*x2 - x2^3 - x1*x2^2", 2);
        assert_eq!(poly.eval(&[1.0, 1.0]).unwrap(), -2.0);
        // simplified form
        let simplified = p("-1*x1^2*x2 - x2^3", 2);
        assert_eq!(poly, simplified);
    }

    #[test]
    fn eval_dimension_mismatch() {
        let poly = p("x1 + x2", 2);
        assert!(matches!(
            poly.eval(&[1.0]),
            Err(PolyError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn lie_derivative_constant_is_zero() {
        let f = PolyVectorField::new(vec![p("x2", 2), p("-1*x1", 2)]);
        let h = Polynomial::constant(2, 3.5);
        assert!(f.lie_derivative(&h).unwrap().is_zero());
    }

    #[test]
    fn lie_derivative_rotation() {
        // h = x1, f = (x2, -x1) -> L_f h = x2
        let f = PolyVectorField::new(vec![p("x2", 2), p("-1*x1", 2)]);
        let h = p("x1", 2);
        assert_eq!(f.lie_derivative(&h).unwrap(), p("x2", 2));
    }

    #[test]
    fn lie_derivative_linearity() {
        let f = PolyVectorField::new(vec![p("x1^2 + x2", 2), p("x1*x2 - 3*x2^2", 2)]);
        let h1 = p("x1^3 - 2*x2", 2);
        let h2 = p("x1*x2 + x2^3", 2);
        let (a, b) = (2.5, -1.25);
        let combo = h1.scale(a).add(&h2.scale(b));
        let lhs = f.lie_derivative(&combo).unwrap();
        let rhs = f
            .lie_derivative(&h1)
            .unwrap()
            .scale(a)
            .add(&f.lie_derivative(&h2).unwrap().scale(b));
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn lie_derivative_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let dim = 3;
            let rand_poly = |rng: &mut rand_chacha::ChaCha8Rng| {
                let mut terms = Vec::new();
                for _ in 0..5 {
                    let exps: Vec<u32> = (0..dim).map(|_| rng.gen_range(0..3u32)).collect();
                    terms.push((exps, rng.gen_range(-2.0..2.0)));
                }
                Polynomial::from_terms(dim, terms)
            };
            let h = rand_poly(&mut rng);
            let f = PolyVectorField::new((0..dim).map(|_| rand_poly(&mut rng)).collect());
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lie = f.lie_derivative(&h).unwrap().eval(&x).unwrap();
            // directional finite difference along f
            let fx = f.eval(&x).unwrap();
            let t = 1e-6;
            let xp: Vec<f64> = x.iter().zip(&fx).map(|(a, b)| a + t * b).collect();
            let xm: Vec<f64> = x.iter().zip(&fx).map(|(a, b)| a - t * b).collect();
            let fd = (h.eval(&xp).unwrap() - h.eval(&xm).unwrap()) / (2.0 * t);
            let scale = 1.0 + lie.abs();
            assert!(
                (lie - fd).abs() / scale < 1e-5,
                "lie {lie} vs fd {fd} at {x:?}"
            );
        }
    }

    #[test]
    fn homogeneity_of_linear_field() {
        let f = PolyVectorField::new(vec![p("x2", 2), p("-1*x1", 2)]);
        assert_eq!(f.homogeneity_degree(), Homogeneity::Degree(0));
    }

    #[test]
    fn homogeneity_detects_mixed_degrees() {
        let f = PolyVectorField::new(vec![p("x1 + x1^2", 2), p("x2", 2)]);
        match f.homogeneity_degree() {
            Homogeneity::NotHomogeneous {
                component,
                offending_term,
            } => {
                assert_eq!(component, 0);
                // one of the two monomials of component 0 is reported
                assert!(offending_term.0 == vec![2, 0] || offending_term.0 == vec![1, 0]);
            }
            other => panic!("expected not-homogeneous, got {other:?}"),
        }
    }

    #[test]
    fn homogeneity_scaling_certificate() {
        use rand::{Rng, SeedableRng};
        // cubic field, homogeneous of degree 2
        let f = PolyVectorField::new(vec![
            p("-1*x1^3 + x1*x2^2", 2),
            p("-1*x1^2*x2 - x2^3", 2),
        ]);
        let alpha = match f.homogeneity_degree() {
            Homogeneity::Degree(a) => a,
            other => panic!("expected homogeneous, got {other:?}"),
        };
        assert_eq!(alpha, 2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let lambda: f64 = rng.gen_range(0.1..10.0);
            let lx = [lambda * x[0], lambda * x[1]];
            let flx = f.eval(&lx).unwrap();
            let fx = f.eval(&x).unwrap();
            let k = lambda.powi(alpha as i32 + 1);
            for (a, b) in flx.iter().zip(&fx) {
                assert!(
                    (a - k * b).abs() <= 1e-9 * (1.0 + a.abs()),
                    "scaling failed: {a} vs {}",
                    k * b
                );
            }
        }
    }

    #[test]
    fn parse_rejects_implicit_multiplication() {
        assert!(Polynomial::parse("2x1", 2).is_err());
        assert!(Polynomial::parse("x1 x2", 2).is_err());
    }

    #[test]
    fn parse_scientific_coefficients() {
        let poly = p("1.45161e-5*x1^2 - 1e+0*x2", 2);
        assert_eq!(poly.eval(&[1.0, 0.0]).unwrap(), 1.45161e-5);
        assert_eq!(poly.eval(&[0.0, 2.0]).unwrap(), -2.0);
    }

    #[test]
    fn parse_display_round_trip() {
        let poly = p("3*x1^2*x2 - 0.5*x2^3 + 2", 2);
        let reparsed = Polynomial::parse(&poly.to_string(), 2).unwrap();
        assert_eq!(poly, reparsed);
    }

    #[test]
    fn substitution_composes() {
        // p(y1, y2) = y1^2 + y2, with y1 = x1 + x2, y2 = x1*x2 over R^2
        let outer = p("x1^2 + x2", 2);
        let images = vec![p("x1 + x2", 2), p("x1*x2", 2)];
        let composed = outer.substitute(&images).unwrap();
        let expect = p("x1^2 + 2*x1*x2 + x2^2 + x1*x2", 2);
        assert_eq!(composed, expect);
    }

    #[test]
    fn canonical_ordering_is_graded_lex() {
        let poly = p("x2 + x1 + x1^2", 2);
        let degrees: Vec<u32> = poly.terms().map(|(m, _)| m.total_degree()).collect();
        assert_eq!(degrees, vec![1, 1, 2]);
        let firsts: Vec<u32> = poly.terms().map(|(m, _)| m.0[0]).collect();
        assert_eq!(firsts, vec![0, 1, 2]);
    }
}
