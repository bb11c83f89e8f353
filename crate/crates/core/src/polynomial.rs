//! Exact polynomial calculus on `R^{2n+m}`: the left-invariant fields `X_i`,
//! the sublaplacian `L = Σ X_i²`, and the heat semigroup on polynomials,
//! `P_t p = Σ_k t^k/k! L^k p`, which terminates because `L` lowers the
//! dilation weight `deg_x + 2 deg_z` by two.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::algebra::{format_rational, parse_rational, EuclideanGradient, GrowthCertificate, HTypeGroup, Point, ScalarField};
use crate::error::{Error, Result};

pub type Exponents = Vec<u32>;

/// Multivariate polynomial in `x^1..x^{2n}, z^1..z^m` with exact rational
/// coefficients. Zero coefficients are never stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Polynomial {
    n: usize,
    m: usize,
    terms: BTreeMap<Exponents, BigRational>,
}

impl Polynomial {
    pub fn zero(n: usize, m: usize) -> Self {
        Polynomial {
            n,
            m,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(n: usize, m: usize, c: BigRational) -> Self {
        let mut p = Self::zero(n, m);
        p.add_term(vec![0; 2 * n + m], c);
        p
    }

    /// Variable with flat index `var` (`0..2n` are `x`, then `z`).
    pub fn variable(n: usize, m: usize, var: usize) -> Self {
        let mut e = vec![0; 2 * n + m];
        e[var] = 1;
        Self::monomial(n, m, e, BigRational::one())
    }

    /// `x^i`, 1-based.
    pub fn x(n: usize, m: usize, i: usize) -> Self {
        assert!((1..=2 * n).contains(&i), "x index {i} out of range");
        Self::variable(n, m, i - 1)
    }

    /// `z^j`, 1-based.
    pub fn z(n: usize, m: usize, j: usize) -> Self {
        assert!((1..=m).contains(&j), "z index {j} out of range");
        Self::variable(n, m, 2 * n + j - 1)
    }

    pub fn monomial(n: usize, m: usize, exps: Exponents, c: BigRational) -> Self {
        assert_eq!(exps.len(), 2 * n + m);
        let mut p = Self::zero(n, m);
        p.add_term(exps, c);
        p
    }

    fn add_term(&mut self, exps: Exponents, c: BigRational) {
        if c.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(exps) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    pub fn num_vars(&self) -> usize {
        2 * self.n + self.m
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exponents, &BigRational)> {
        self.terms.iter()
    }

    pub fn coefficient(&self, exps: &[u32]) -> BigRational {
        self.terms.get(exps).cloned().unwrap_or_else(BigRational::zero)
    }

    /// Dilation weight `deg_x + 2 deg_z` of the heaviest term (0 for zero).
    pub fn weight(&self) -> u32 {
        let nx = 2 * self.n;
        self.terms
            .keys()
            .map(|e| e[..nx].iter().sum::<u32>() + 2 * e[nx..].iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    pub fn total_degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    pub fn scale(&self, c: &BigRational) -> Self {
        if c.is_zero() {
            return Self::zero(self.n, self.m);
        }
        Polynomial {
            n: self.n,
            m: self.m,
            terms: self.terms.iter().map(|(e, v)| (e.clone(), v * c)).collect(),
        }
    }

    pub fn partial(&self, var: usize) -> Self {
        let mut out = Self::zero(self.n, self.m);
        for (e, c) in &self.terms {
            if e[var] == 0 {
                continue;
            }
            let mut d = e.clone();
            d[var] -= 1;
            out.add_term(d, c * BigRational::from_integer(e[var].into()));
        }
        out
    }

    fn check_same(&self, other: &Self) {
        assert_eq!((self.n, self.m), (other.n, other.m), "polynomials live on different groups");
    }

    pub fn eval_rational(&self, at: &[BigRational]) -> BigRational {
        let mut sum = BigRational::zero();
        for (e, c) in &self.terms {
            let mut term = c.clone();
            for (v, &k) in at.iter().zip(e) {
                if k > 0 {
                    term *= num_traits::pow(v.clone(), k as usize);
                }
            }
            sum += term;
        }
        sum
    }

    /// Value at the identity (the constant coefficient).
    pub fn at_identity(&self) -> BigRational {
        self.coefficient(&vec![0; self.num_vars()])
    }

    pub fn eval_f64(&self, at: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| {
                let mut term = c.to_f64().unwrap_or(f64::NAN);
                for (v, &k) in at.iter().zip(e) {
                    if k > 0 {
                        term *= v.powi(k as i32);
                    }
                }
                term
            })
            .sum()
    }

    /// Substitutes `(x, z) -> (αx, α²z)`.
    pub fn dilate(&self, alpha: &BigRational) -> Self {
        let nx = 2 * self.n;
        let mut out = Self::zero(self.n, self.m);
        for (e, c) in &self.terms {
            let w = e[..nx].iter().sum::<u32>() + 2 * e[nx..].iter().sum::<u32>();
            out.add_term(e.clone(), c * num_traits::pow(alpha.clone(), w as usize));
        }
        out
    }

    /// Sum of absolute coefficient values.
    pub fn l1_norm(&self) -> f64 {
        self.terms.values().map(|c| c.abs().to_f64().unwrap_or(f64::INFINITY)).sum()
    }

    fn var_name(&self, var: usize) -> String {
        if var < 2 * self.n {
            format!("x{}", var + 1)
        } else {
            format!("z{}", var - 2 * self.n + 1)
        }
    }

    /// Parses the text form produced by `Display`.
    pub fn parse(n: usize, m: usize, s: &str) -> Result<Self> {
        let mut out = Self::zero(n, m);
        let s = s.trim();
        if s.is_empty() || s == "0" {
            return Ok(out);
        }
        for term in s.split(" + ") {
            let term = term.trim();
            let (coeff, mono) = match term.split_once(" * ") {
                Some((c, rest)) => (parse_rational(c)?, rest),
                None => {
                    if let Ok(c) = parse_rational(term) {
                        out.add_term(vec![0; 2 * n + m], c);
                        continue;
                    }
                    (BigRational::one(), term)
                }
            };
            let mut exps = vec![0u32; 2 * n + m];
            for factor in mono.split([' ', '*']).filter(|f| !f.is_empty()) {
                let (name, pow) = match factor.split_once('^') {
                    Some((name, p)) => (name, p.parse::<u32>().map_err(|_| Error::Parse(format!("bad exponent in {factor:?}")))?),
                    None => (factor, 1),
                };
                let idx: usize = name[1..].parse().map_err(|_| Error::Parse(format!("bad variable {name:?}")))?;
                let var = match name.as_bytes().first() {
                    Some(b'x') if (1..=2 * n).contains(&idx) => idx - 1,
                    Some(b'z') if (1..=m).contains(&idx) => 2 * n + idx - 1,
                    _ => return Err(Error::Parse(format!("unknown variable {name:?}"))),
                };
                exps[var] += pow;
            }
            out.add_term(exps, coeff);
        }
        Ok(out)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        let mut first = true;
        for (e, c) in &self.terms {
            if !first {
                f.write_str(" + ")?;
            }
            first = false;
            let factors: Vec<String> = e
                .iter()
                .enumerate()
                .filter(|(_, &k)| k > 0)
                .map(|(v, &k)| {
                    if k == 1 {
                        self.var_name(v)
                    } else {
                        format!("{}^{k}", self.var_name(v))
                    }
                })
                .collect();
            if factors.is_empty() {
                write!(f, "{}", format_rational(c))?;
            } else {
                write!(f, "{} * {}", format_rational(c), factors.join(" "))?;
            }
        }
        Ok(())
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        self.check_same(rhs);
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.add_term(e.clone(), c.clone());
        }
        out
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self + &(-rhs)
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(&-BigRational::one())
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        self.check_same(rhs);
        let mut out = Polynomial::zero(self.n, self.m);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &rhs.terms {
                let e = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out.add_term(e, ca * cb);
            }
        }
        out
    }
}

/// Exact differential calculus for a group with rational structure constants.
#[derive(Debug, Clone)]
pub struct PolyCalculus {
    n: usize,
    m: usize,
    /// `coupling[i][j]` is the linear polynomial `<J_{u_j} x, e_i> = Σ_l (J_j)_{il} x^l`.
    coupling: Vec<Vec<Polynomial>>,
}

impl PolyCalculus {
    pub fn new(group: &HTypeGroup) -> Result<Self> {
        let j = group.j_exact().ok_or(Error::NonRationalGroup)?;
        let (n, m) = (group.n(), group.m());
        let dim = 2 * n;
        let coupling = (0..dim)
            .map(|i| {
                j.iter()
                    .map(|mat| {
                        let mut p = Polynomial::zero(n, m);
                        for l in 0..dim {
                            let c = &mat[i * dim + l];
                            if !c.is_zero() {
                                let mut e = vec![0; dim + m];
                                e[l] = 1;
                                p.add_term(e, c.clone());
                            }
                        }
                        p
                    })
                    .collect()
            })
            .collect();
        Ok(PolyCalculus { n, m, coupling })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= 2 * self.n {
            return Err(Error::InvalidArgument(format!("X_i index {} out of range 1..={}", i + 1, 2 * self.n)));
        }
        Ok(())
    }

    fn vector_field(&self, p: &Polynomial, i: usize, sign: i32) -> Result<Polynomial> {
        self.check_index(i)?;
        let mut out = p.partial(i);
        let half = BigRational::new(BigInt::from(sign), BigInt::from(2));
        for (j, lin) in self.coupling[i].iter().enumerate() {
            if lin.is_zero() {
                continue;
            }
            let dz = p.partial(2 * self.n + j);
            if dz.is_zero() {
                continue;
            }
            out = &out + &(&lin.scale(&half) * &dz);
        }
        Ok(out)
    }

    /// `X_i p = ∂_{x^i} p + ½ Σ_j <J_{u_j} x, e_i> ∂_{z^j} p`; `i` is 0-based.
    pub fn apply_x(&self, p: &Polynomial, i: usize) -> Result<Polynomial> {
        self.vector_field(p, i, 1)
    }

    /// Right-invariant `X̂_i p = ∂_{x^i} p - ½ Σ_j <J_{u_j} x, e_i> ∂_{z^j} p`.
    pub fn apply_x_hat(&self, p: &Polynomial, i: usize) -> Result<Polynomial> {
        self.vector_field(p, i, -1)
    }

    pub fn gradient(&self, p: &Polynomial) -> Vec<Polynomial> {
        (0..2 * self.n).map(|i| self.apply_x(p, i).expect("index in range")).collect()
    }

    pub fn gradient_hat(&self, p: &Polynomial) -> Vec<Polynomial> {
        (0..2 * self.n).map(|i| self.apply_x_hat(p, i).expect("index in range")).collect()
    }

    /// `|∇p|² = Σ_i (X_i p)²`.
    pub fn gradient_norm_squared(&self, p: &Polynomial) -> Polynomial {
        self.gradient(p)
            .iter()
            .fold(Polynomial::zero(self.n, self.m), |acc, q| &acc + &(q * q))
    }

    /// `L p = Σ_i X_i X_i p`.
    pub fn sublaplacian(&self, p: &Polynomial) -> Polynomial {
        let mut out = Polynomial::zero(self.n, self.m);
        for i in 0..2 * self.n {
            let once = self.apply_x(p, i).expect("index in range");
            out = &out + &self.apply_x(&once, i).expect("index in range");
        }
        out
    }

    /// Terms `L^k p / k!` of the heat series, until `L^k p = 0`.
    pub fn heat_series(&self, p: &Polynomial) -> Result<Vec<Polynomial>> {
        let limit = p.weight().div_ceil(2) as usize + 1;
        let mut out = Vec::new();
        let mut current = p.clone();
        let mut k = 0usize;
        while !current.is_zero() {
            if k > limit {
                return Err(Error::NonTermination(k));
            }
            out.push(current.scale(&BigRational::new(BigInt::one(), factorial(k))));
            current = self.sublaplacian(&current);
            k += 1;
        }
        Ok(out)
    }

    /// `P_t p = Σ_k t^k/k! L^k p`, exactly.
    pub fn heat_semigroup(&self, p: &Polynomial, t: &BigRational) -> Result<Polynomial> {
        let series = self.heat_series(p)?;
        let mut out = Polynomial::zero(self.n, self.m);
        let mut tk = BigRational::one();
        for term in &series {
            out = &out + &term.scale(&tk);
            tk *= t;
        }
        Ok(out)
    }

    /// The test function `f = x^1 + z^1 x^2` used to bound the optimal
    /// gradient constant from below.
    pub fn extremal_example(&self) -> Polynomial {
        let (n, m) = (self.n, self.m);
        &Polynomial::x(n, m, 1) + &(&Polynomial::z(n, m, 1) * &Polynomial::x(n, m, 2))
    }

    /// `k₂(t) = |∇P_t f(0)|² / P_t(|∇f|²)(0)` for `f = x^1 + z^1 x^2`.
    pub fn k2_ratio(&self, t: &BigRational) -> Result<BigRational> {
        self.squared_gradient_ratio(&self.extremal_example(), t)
    }

    /// `|∇P_t f(0)|² / P_t(|∇f|²)(0)` for any polynomial `f`.
    pub fn squared_gradient_ratio(&self, f: &Polynomial, t: &BigRational) -> Result<BigRational> {
        let num = self.gradient_at_identity_after_heat(f, t)?
            .iter()
            .fold(BigRational::zero(), |acc, c| acc + c * c);
        let den = self.heat_semigroup(&self.gradient_norm_squared(f), t)?.at_identity();
        if den.is_zero() {
            return Err(Error::DegenerateDenominator(0.0));
        }
        Ok(num / den)
    }

    /// `(∇P_t f)(0)` exactly.
    pub fn gradient_at_identity_after_heat(&self, f: &Polynomial, t: &BigRational) -> Result<Vec<BigRational>> {
        let heat = self.heat_semigroup(f, t)?;
        Ok(self.gradient(&heat).iter().map(Polynomial::at_identity).collect())
    }

    /// Floating point field with analytic Euclidean gradient and a growth
    /// certificate `C(1 + d)^w` bounding `|f| + |∇f| + |∇̂f|`.
    pub fn field(&self, p: &Polynomial) -> ScalarField {
        let (n, m) = (self.n, self.m);
        let value = CompiledPoly::new(p);
        let partials: Vec<CompiledPoly> = (0..2 * n + m).map(|v| CompiledPoly::new(&p.partial(v))).collect();
        let mut c = p.l1_norm();
        for q in self.gradient(p).iter().chain(self.gradient_hat(p).iter()) {
            c += q.l1_norm();
        }
        let w = p.weight();
        ScalarField::new(move |g: &Point| value.eval(&g.x, &g.z))
            .with_gradient(move |g: &Point| {
                let mut all: Vec<f64> = partials.iter().map(|q| q.eval(&g.x, &g.z)).collect();
                let z = all.split_off(2 * n);
                EuclideanGradient { x: all, z }
            })
            .with_growth(GrowthCertificate::polynomial(c.max(1e-300), w))
    }
}

fn factorial(k: usize) -> BigInt {
    (1..=k).fold(BigInt::one(), |acc, v| acc * BigInt::from(v))
}

/// Polynomial flattened for fast `f64` evaluation.
#[derive(Debug, Clone)]
struct CompiledPoly {
    terms: Vec<(f64, Vec<(usize, i32)>)>,
    nx: usize,
}

impl CompiledPoly {
    fn new(p: &Polynomial) -> Self {
        let nx = 2 * p.n;
        let terms = p
            .terms
            .iter()
            .map(|(e, c)| {
                let powers = e
                    .iter()
                    .enumerate()
                    .filter(|(_, &k)| k > 0)
                    .map(|(v, &k)| (v, k as i32))
                    .collect();
                (c.to_f64().unwrap_or(f64::NAN), powers)
            })
            .collect();
        CompiledPoly { terms, nx }
    }

    fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, powers)| {
                powers.iter().fold(*c, |acc, &(v, k)| {
                    let base = if v < self.nx { x[v] } else { z[v - self.nx] };
                    acc * base.powi(k)
                })
            })
            .sum()
    }
}

/// `(1+t)² / (1 - 2t + (3n+2)t²)`.
pub fn k2_closed_form(n: usize, t: &BigRational) -> BigRational {
    let one = BigRational::one();
    let num = (&one + t) * (&one + t);
    let den = &one - t * BigRational::from_integer(2.into()) + t * t * BigRational::from_integer((3 * n + 2).into());
    num / den
}
