//! Multivariate polynomials over program atoms, generic over the coefficient ring.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::ast::{BinOp, Expr, Formula, Name};

/// Coefficient ring requirements.
pub trait Coeff:
    Clone
    + Debug
    + PartialEq
    + Zero
    + One
    + Neg<Output = Self>
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
{
}

impl<T> Coeff for T where
    T: Clone
        + Debug
        + PartialEq
        + Zero
        + One
        + Neg<Output = T>
        + Add<Output = T>
        + Sub<Output = T>
        + Mul<Output = T>
{
}

/// A polynomial variable: `N`, a scalar, or an uninterpreted term.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Atom {
    /// Array reads, non-polynomial divisions and conditionals.
    Opaque(Expr),
    Var(Name),
    N,
}

impl Atom {
    pub fn to_expr(&self) -> Expr {
        match self {
            Atom::N => Expr::N,
            Atom::Var(x) => Expr::Var(x.clone()),
            Atom::Opaque(e) => e.clone(),
        }
    }
}

/// Sorted list of `(atom, exponent)`.
pub type Monomial = Vec<(Atom, u32)>;

#[derive(Clone, Debug, PartialEq)]
pub struct Poly<C> {
    pub terms: BTreeMap<Monomial, C>,
}

pub type IntPoly = Poly<i128>;
pub type RatPoly = Poly<BigRational>;

fn mono_mul(a: &Monomial, b: &Monomial) -> Monomial {
    let mut m: BTreeMap<Atom, u32> = a.iter().cloned().collect();
    for (x, k) in b {
        *m.entry(x.clone()).or_insert(0) += k;
    }
    m.into_iter().collect()
}

pub fn mono_degree(m: &Monomial) -> u32 {
    m.iter().map(|(_, k)| k).sum()
}

impl<C: Coeff> Poly<C> {
    pub fn zero() -> Self {
        Poly {
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(c: C) -> Self {
        let mut p = Self::zero();
        p.add_term(Vec::new(), c);
        p
    }

    pub fn atom(a: Atom) -> Self {
        let mut p = Self::zero();
        p.add_term(vec![(a, 1)], C::one());
        p
    }

    pub fn var(x: &str) -> Self {
        Self::atom(Atom::Var(x.to_string()))
    }

    pub fn n() -> Self {
        Self::atom(Atom::N)
    }

    pub fn add_term(&mut self, m: Monomial, c: C) {
        if c.is_zero() {
            return;
        }
        let entry = self.terms.entry(m.clone()).or_insert_with(C::zero);
        *entry = entry.clone() + c;
        if entry.is_zero() {
            self.terms.remove(&m);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn as_constant(&self) -> Option<C> {
        match self.terms.len() {
            0 => Some(C::zero()),
            1 => self.terms.get(&Vec::new()).cloned(),
            _ => None,
        }
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(mono_degree).max().unwrap_or(0)
    }

    pub fn scale(&self, c: &C) -> Self {
        let mut p = Self::zero();
        for (m, k) in &self.terms {
            p.add_term(m.clone(), k.clone() * c.clone());
        }
        p
    }

    pub fn pow(&self, k: u32) -> Self {
        (0..k).fold(Self::constant(C::one()), |acc, _| &acc * self)
    }

    pub fn atoms(&self) -> Vec<Atom> {
        let mut v: Vec<Atom> = self
            .terms
            .keys()
            .flat_map(|m| m.iter().map(|(a, _)| a.clone()))
            .collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn mentions(&self, a: &Atom) -> bool {
        self.terms.keys().any(|m| m.iter().any(|(x, _)| x == a))
    }

    /// Writes `self = coef * a + rest` when `self` is linear in `a`.
    pub fn split_linear(&self, a: &Atom) -> Option<(Self, Self)> {
        let mut coef = Self::zero();
        let mut rest = Self::zero();
        for (m, c) in &self.terms {
            match m.iter().find(|(x, _)| x == a) {
                None => rest.add_term(m.clone(), c.clone()),
                Some((_, 1)) => {
                    let others: Monomial = m.iter().filter(|(x, _)| x != a).cloned().collect();
                    coef.add_term(others, c.clone());
                }
                Some(_) => return None,
            }
        }
        Some((coef, rest))
    }

    /// Substitutes polynomials for atoms.
    pub fn subst(&self, f: &dyn Fn(&Atom) -> Option<Self>) -> Self {
        let mut out = Self::zero();
        for (m, c) in &self.terms {
            let mut term = Self::constant(c.clone());
            for (a, k) in m {
                let base = f(a).unwrap_or_else(|| Self::atom(a.clone()));
                term = &term * &base.pow(*k);
            }
            out = &out + &term;
        }
        out
    }

    /// Evaluates with every atom bound; `None` if some atom is missing.
    pub fn eval(&self, f: &dyn Fn(&Atom) -> Option<C>) -> Option<C> {
        let mut total = C::zero();
        for (m, c) in &self.terms {
            let mut t = c.clone();
            for (a, k) in m {
                let v = f(a)?;
                for _ in 0..*k {
                    t = t * v.clone();
                }
            }
            total = total + t;
        }
        Some(total)
    }

    pub fn map_coeffs<D: Coeff>(&self, f: impl Fn(&C) -> D) -> Poly<D> {
        let mut p = Poly::zero();
        for (m, c) in &self.terms {
            p.add_term(m.clone(), f(c));
        }
        p
    }
}

impl<'a, C: Coeff> Add for &'a Poly<C> {
    type Output = Poly<C>;
    fn add(self, o: &Poly<C>) -> Poly<C> {
        let mut p = self.clone();
        for (m, c) in &o.terms {
            p.add_term(m.clone(), c.clone());
        }
        p
    }
}

impl<'a, C: Coeff> Sub for &'a Poly<C> {
    type Output = Poly<C>;
    fn sub(self, o: &Poly<C>) -> Poly<C> {
        let mut p = self.clone();
        for (m, c) in &o.terms {
            p.add_term(m.clone(), -c.clone());
        }
        p
    }
}

impl<'a, C: Coeff> Mul for &'a Poly<C> {
    type Output = Poly<C>;
    fn mul(self, o: &Poly<C>) -> Poly<C> {
        let mut p = Poly::zero();
        for (m1, c1) in &self.terms {
            for (m2, c2) in &o.terms {
                p.add_term(mono_mul(m1, m2), c1.clone() * c2.clone());
            }
        }
        p
    }
}

impl<'a, C: Coeff> Neg for &'a Poly<C> {
    type Output = Poly<C>;
    fn neg(self) -> Poly<C> {
        self.scale(&-C::one())
    }
}

/// Display order: monomials with program atoms first, then powers of `N`, constant last.
fn term_order(m: &Monomial) -> (u8, std::cmp::Reverse<u32>, Monomial) {
    let has_other = m.iter().any(|(a, _)| *a != Atom::N);
    let class = if m.is_empty() {
        2
    } else if has_other {
        0
    } else {
        1
    };
    (class, std::cmp::Reverse(mono_degree(m)), m.clone())
}

fn mono_expr(m: &Monomial) -> Option<Expr> {
    let mut e: Option<Expr> = None;
    for (a, k) in m {
        for _ in 0..*k {
            let x = a.to_expr();
            e = Some(match e {
                None => x,
                Some(acc) => Expr::mul(acc, x),
            });
        }
    }
    e
}

impl IntPoly {
    pub fn from_expr(e: &Expr) -> IntPoly {
        match e {
            Expr::Int(i) => Poly::constant(*i),
            Expr::N => Poly::n(),
            Expr::Var(x) => Poly::var(x),
            Expr::Read(a, idx) => Poly::atom(Atom::Opaque(Expr::Read(
                a.clone(),
                idx.iter().map(simplify_expr).collect(),
            ))),
            Expr::Bin(BinOp::Add, a, b) => &IntPoly::from_expr(a) + &IntPoly::from_expr(b),
            Expr::Bin(BinOp::Sub, a, b) => &IntPoly::from_expr(a) - &IntPoly::from_expr(b),
            Expr::Bin(BinOp::Mul, a, b) => &IntPoly::from_expr(a) * &IntPoly::from_expr(b),
            Expr::Neg(a) => -&IntPoly::from_expr(a),
            Expr::Bin(op @ (BinOp::Div | BinOp::Mod), a, b) => {
                let pa = IntPoly::from_expr(a);
                let pb = IntPoly::from_expr(b);
                if let Some(k) = pb.as_constant().filter(|k| *k != 0) {
                    if let Some(x) = pa.as_constant() {
                        return Poly::constant(if *op == BinOp::Div {
                            x.div_euclid(k)
                        } else {
                            x.rem_euclid(k)
                        });
                    }
                    if pa.terms.values().all(|c| c % k == 0) {
                        return if *op == BinOp::Div {
                            pa.map_coeffs(|c| c / k)
                        } else {
                            Poly::zero()
                        };
                    }
                    if *op == BinOp::Mod && (k == 1 || k == -1) {
                        return Poly::zero();
                    }
                }
                Poly::atom(Atom::Opaque(Expr::bin(*op, pa.to_expr(), pb.to_expr())))
            }
            Expr::Ite(c, a, b) => {
                let c = crate::logic::simplify(c);
                match c {
                    Formula::Bool(true) => IntPoly::from_expr(a),
                    Formula::Bool(false) => IntPoly::from_expr(b),
                    c => {
                        let pa = IntPoly::from_expr(a);
                        let pb = IntPoly::from_expr(b);
                        if pa == pb {
                            pa
                        } else {
                            Poly::atom(Atom::Opaque(Expr::ite(c, pa.to_expr(), pb.to_expr())))
                        }
                    }
                }
            }
        }
    }

    pub fn to_expr(&self) -> Expr {
        let mut ms: Vec<(&Monomial, &i128)> = self.terms.iter().collect();
        ms.sort_by_key(|(m, _)| term_order(m));
        let mut out: Option<Expr> = None;
        for (m, c) in ms {
            let mag = c.abs();
            let body = match mono_expr(m) {
                None => Expr::Int(mag),
                Some(x) if mag == 1 => x,
                Some(x) => Expr::mul(Expr::Int(mag), x),
            };
            out = Some(match out {
                None if *c < 0 => match body {
                    Expr::Int(k) => Expr::Int(-k),
                    b => Expr::Neg(Box::new(b)),
                },
                None => body,
                Some(acc) if *c < 0 => Expr::sub(acc, body),
                Some(acc) => Expr::add(acc, body),
            });
        }
        out.unwrap_or(Expr::Int(0))
    }

    /// Greatest common divisor of the coefficients (positive), 0 for the zero polynomial.
    pub fn content(&self) -> i128 {
        self.terms.values().fold(0i128, |g, c| gcd(g, c.abs()))
    }

    pub fn to_rat(&self) -> RatPoly {
        self.map_coeffs(|c| BigRational::from_integer(BigInt::from(*c)))
    }
}

impl RatPoly {
    /// Integer polynomial `p` and denominator `d` with `self = p / d`.
    pub fn to_int_over(&self) -> Option<(IntPoly, i128)> {
        let mut d = BigInt::one();
        for c in self.terms.values() {
            let den = c.denom().clone();
            let g = num_integer_gcd(&d, &den);
            d = &d * &den / g;
        }
        let mut p = IntPoly::zero();
        for (m, c) in &self.terms {
            let v = (c * BigRational::from_integer(d.clone())).to_integer();
            p.add_term(m.clone(), v.to_i128()?);
        }
        Some((p, d.to_i128()?))
    }

    pub fn to_expr(&self) -> Option<Expr> {
        let (p, d) = self.to_int_over()?;
        Some(if d == 1 {
            p.to_expr()
        } else {
            Expr::bin(BinOp::Div, p.to_expr(), Expr::Int(d))
        })
    }
}

fn num_integer_gcd(a: &BigInt, b: &BigInt) -> BigInt {
    let (mut a, mut b) = (a.abs(), b.abs());
    while !b.is_zero() {
        let r = &a % &b;
        a = b;
        b = r;
    }
    a
}

pub fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

/// Canonical polynomial form of an expression.
pub fn simplify_expr(e: &Expr) -> Expr {
    IntPoly::from_expr(e).to_expr()
}

/// Field operations needed by Gaussian elimination.
pub trait Field: Coeff + std::ops::Div<Output = Self> {}
impl<T: Coeff + std::ops::Div<Output = T>> Field for T {}

/// Solves `rows * x = rhs` exactly. Free variables are set to zero.
/// Returns `None` when the system is inconsistent.
pub fn solve_linear<F: Field>(rows: &[Vec<F>], rhs: &[F]) -> Option<Vec<F>> {
    let ncols = rows.first().map_or(0, Vec::len);
    let mut m: Vec<Vec<F>> = rows
        .iter()
        .zip(rhs)
        .map(|(r, b)| {
            let mut row = r.clone();
            row.push(b.clone());
            row
        })
        .collect();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..ncols {
        let Some(p) = (r..m.len()).find(|&i| !m[i][c].is_zero()) else {
            continue;
        };
        m.swap(r, p);
        let inv = F::one() / m[r][c].clone();
        for k in c..=ncols {
            m[r][k] = m[r][k].clone() * inv.clone();
        }
        for i in 0..m.len() {
            if i != r && !m[i][c].is_zero() {
                let factor = m[i][c].clone();
                for k in c..=ncols {
                    let v = m[r][k].clone() * factor.clone();
                    m[i][k] = m[i][k].clone() - v;
                }
            }
        }
        pivots.push(c);
        r += 1;
        if r == m.len() {
            break;
        }
    }
    if m[r..].iter().any(|row| !row[ncols].is_zero()) {
        return None;
    }
    let mut x = vec![F::zero(); ncols];
    for (i, c) in pivots.iter().enumerate() {
        x[*c] = m[i][ncols].clone();
    }
    Some(x)
}

/// Exact rational solve used by template fitting.
pub fn solve_rational(rows: &[Vec<BigRational>], rhs: &[BigRational]) -> Option<Vec<BigRational>> {
    solve_linear(rows, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_expr;

    fn p(s: &str) -> IntPoly {
        IntPoly::from_expr(&parse_expr(s).unwrap())
    }

    #[test]
    fn normalizes_running_example_delta() {
        assert_eq!(p("(N - 1) * (2 * N - 1)"), p("2*N*N - 3*N + 1"));
        assert_eq!(p("(N-1)*(2*N-1) + N*N"), p("3*N*N - 3*N + 1"));
        assert_eq!(p("x - x"), IntPoly::zero());
    }

    #[test]
    fn exact_division_and_mod() {
        assert_eq!(p("(4*N + 2) / 2"), p("2*N + 1"));
        assert_eq!(p("(-7) / 2"), p("-4"));
        assert_eq!(p("(-7) % 2"), p("1"));
        assert_eq!(p("(6*N) % 3"), IntPoly::zero());
        assert!(matches!(p("N / 2").atoms()[0], Atom::Opaque(_)));
    }

    #[test]
    fn round_trip_through_expr() {
        for s in [
            "x*N - 3",
            "-N*N + 2*i*N - i",
            "A[i+1] - A[i] * 2",
            "7",
            "-x",
        ] {
            let q = p(s);
            assert_eq!(IntPoly::from_expr(&q.to_expr()), q, "{s}");
        }
    }

    #[test]
    fn split_linear_in_counter() {
        let (c, r) = p("2*i*N - i + 5")
            .split_linear(&Atom::Var("i".into()))
            .unwrap();
        assert_eq!(c, p("2*N - 1"));
        assert_eq!(r, p("5"));
        assert!(p("i*i").split_linear(&Atom::Var("i".into())).is_none());
    }

    #[test]
    fn gauss_solves_and_detects_inconsistency() {
        let r = |v: i64| BigRational::from_integer(v.into());
        // x + y = 3, x - y = 1
        let rows = vec![vec![r(1), r(1)], vec![r(1), r(-1)]];
        assert_eq!(
            solve_rational(&rows, &[r(3), r(1)]).unwrap(),
            vec![r(2), r(1)]
        );
        let rows = vec![vec![r(1), r(1)], vec![r(2), r(2)]];
        assert!(solve_rational(&rows, &[r(1), r(3)]).is_none());
        let x = solve_linear(&[vec![2.0]], &[3.0]).unwrap();
        assert!((x[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn rational_to_int_over() {
        let half = BigRational::new(1.into(), 2.into());
        let q = RatPoly::var("i").scale(&half);
        let (ip, d) = q.to_int_over().unwrap();
        assert_eq!(d, 2);
        assert_eq!(ip, p("i"));
    }
}
