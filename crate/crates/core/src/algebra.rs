//! H-type group structure: structure constants `J_{u_j}`, the bracket, the
//! group law, dilations and the left/right invariant horizontal gradients.
//!
//! Points are written `g = (x, z)` with `x ∈ R^{2n}` horizontal and `z ∈ R^m`
//! central. The group law is `v ⋆ w = v + w + ½[v, w]` where
//! `[v, w]_j = <J_j x_v, x_w>`.

use std::fmt;
use std::sync::Arc;

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Axiom, Error, Result};

/// Tolerance for validating floating point structure constants.
pub const AXIOM_TOLERANCE: f64 = 1e-10;

/// A point `(x, z)` of `G ≅ R^{2n} × R^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

impl Point {
    pub fn new(x: Vec<f64>, z: Vec<f64>) -> Self {
        Point { x, z }
    }

    pub fn identity(n: usize, m: usize) -> Self {
        Point {
            x: vec![0.0; 2 * n],
            z: vec![0.0; m],
        }
    }

    pub fn x_norm(&self) -> f64 {
        norm(&self.x)
    }

    pub fn z_norm(&self) -> f64 {
        norm(&self.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.z).all(|v| v.is_finite())
    }

    /// Coordinates flattened as `(x, z)`.
    pub fn coords(&self) -> Vec<f64> {
        self.x.iter().chain(&self.z).copied().collect()
    }

    pub fn from_coords(coords: &[f64], n: usize) -> Self {
        Point {
            x: coords[..2 * n].to_vec(),
            z: coords[2 * n..].to_vec(),
        }
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[f64]| {
            v.iter()
                .map(|c| format!("{c}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        write!(f, "(x=[{}], z=[{}])", join(&self.x), join(&self.z))
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Validated structure constants of an H-type group.
///
/// `j[k]` holds the `2n × 2n` matrix of `J_{u_{k+1}}` in row-major order.
#[derive(Debug, Clone)]
pub struct HTypeGroup {
    n: usize,
    m: usize,
    j: Vec<Vec<f64>>,
    j_exact: Option<Vec<Vec<BigRational>>>,
}

impl PartialEq for HTypeGroup {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.m == other.m && self.j == other.j
    }
}

impl HTypeGroup {
    /// Isotropic Heisenberg group `H_n` (`m = 1`), with
    /// `J_1 = diag([[0,-1],[1,0]], ...)` so that `J_1 e_1 = e_2`.
    pub fn heisenberg(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("heisenberg: n must be >= 1".into()));
        }
        let dim = 2 * n;
        let mut j = vec![BigRational::zero(); dim * dim];
        for b in 0..n {
            let (r, c) = (2 * b, 2 * b);
            j[r * dim + c + 1] = -BigRational::one();
            j[(r + 1) * dim + c] = BigRational::one();
        }
        Self::from_rational_matrices(n, 1, vec![j])
    }

    /// Quaternionic H-type group on `R^{4k} × R^3`: `J_1, J_2, J_3` are block
    /// copies of left multiplication by `i, j, k` on `R^4 = H`.
    pub fn quaternionic(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("quaternionic: k must be >= 1".into()));
        }
        // Left multiplication on the basis (1, i, j, k).
        const UNITS: [[[i32; 4]; 4]; 3] = [
            [[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]],
            [[0, 0, -1, 0], [0, 0, 0, 1], [1, 0, 0, 0], [0, -1, 0, 0]],
            [[0, 0, 0, -1], [0, 0, -1, 0], [0, 1, 0, 0], [1, 0, 0, 0]],
        ];
        let dim = 4 * k;
        let mats = UNITS
            .iter()
            .map(|unit| {
                let mut mat = vec![BigRational::zero(); dim * dim];
                for b in 0..k {
                    for (r, row) in unit.iter().enumerate() {
                        for (c, &v) in row.iter().enumerate() {
                            mat[(4 * b + r) * dim + 4 * b + c] = BigRational::from_integer(v.into());
                        }
                    }
                }
                mat
            })
            .collect();
        Self::from_rational_matrices(2 * k, 3, mats)
    }

    /// Builds a group from floating point matrices (row-major, `2n × 2n`),
    /// validating the H-type axioms to [`AXIOM_TOLERANCE`].
    pub fn from_matrices(n: usize, m: usize, j: Vec<Vec<f64>>) -> Result<Self> {
        check_shape(n, m, j.len(), j.iter().map(Vec::len))?;
        if j.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite structure constant".into()));
        }
        validate_float(n, &j)?;
        Ok(HTypeGroup {
            n,
            m,
            j,
            j_exact: None,
        })
    }

    /// Builds a group from exact rational matrices; the axioms are checked
    /// exactly.
    pub fn from_rational_matrices(n: usize, m: usize, j: Vec<Vec<BigRational>>) -> Result<Self> {
        check_shape(n, m, j.len(), j.iter().map(Vec::len))?;
        validate_exact(n, &j)?;
        let float = j
            .iter()
            .map(|mat| mat.iter().map(rational_to_f64).collect())
            .collect();
        Ok(HTypeGroup {
            n,
            m,
            j: float,
            j_exact: Some(j),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Horizontal dimension `2n`.
    pub fn horizontal_dim(&self) -> usize {
        2 * self.n
    }

    /// Homogeneous dimension `Q = 2n + 2m`.
    pub fn homogeneous_dimension(&self) -> usize {
        2 * self.n + 2 * self.m
    }

    /// Row-major matrix of `J_{u_{k+1}}`.
    pub fn j_matrix(&self, k: usize) -> &[f64] {
        &self.j[k]
    }

    pub fn j_matrices(&self) -> &[Vec<f64>] {
        &self.j
    }

    pub fn j_exact(&self) -> Option<&[Vec<BigRational>]> {
        self.j_exact.as_deref()
    }

    pub fn identity(&self) -> Point {
        Point::identity(self.n, self.m)
    }

    pub fn check_point(&self, g: &Point) -> Result<()> {
        if g.x.len() != 2 * self.n || g.z.len() != self.m {
            return Err(Error::DimensionMismatch(format!(
                "point has dims ({}, {}), group expects ({}, {})",
                g.x.len(),
                g.z.len(),
                2 * self.n,
                self.m
            )));
        }
        if !g.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite point {g}")));
        }
        Ok(())
    }

    /// Matrix of `J_z = Σ_j z^j J_j`, row-major.
    pub fn j_z_matrix(&self, z: &[f64]) -> Vec<f64> {
        let dim = 2 * self.n;
        let mut out = vec![0.0; dim * dim];
        for (zj, mat) in z.iter().zip(&self.j) {
            if *zj == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(mat) {
                *o += zj * a;
            }
        }
        out
    }

    /// `J_z x` without dimension checks.
    pub(crate) fn apply_jz(&self, z: &[f64], x: &[f64]) -> Vec<f64> {
        let dim = 2 * self.n;
        let mut out = vec![0.0; dim];
        for (zj, mat) in z.iter().zip(&self.j) {
            if *zj == 0.0 {
                continue;
            }
            for (r, o) in out.iter_mut().enumerate() {
                *o += zj * dot(&mat[r * dim..(r + 1) * dim], x);
            }
        }
        out
    }

    /// `J_z x`.
    pub fn j_map(&self, z: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.m || x.len() != 2 * self.n {
            return Err(Error::DimensionMismatch(format!(
                "j_map expects z in R^{} and x in R^{}, got {} and {}",
                self.m,
                2 * self.n,
                z.len(),
                x.len()
            )));
        }
        Ok(self.apply_jz(z, x))
    }

    /// Horizontal bracket `[x, y]_j = <J_j x, y>`.
    ///
    /// Summed over pairs `r < c` using skewness, so `[x, x]` and `[-x, x]`
    /// vanish exactly in floating point.
    pub(crate) fn bracket_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let dim = 2 * self.n;
        self.j
            .iter()
            .map(|mat| {
                let mut s = 0.0;
                for r in 0..dim {
                    for c in r + 1..dim {
                        let a = 0.5 * (mat[r * dim + c] - mat[c * dim + r]);
                        if a != 0.0 {
                            s += a * (y[r] * x[c] - y[c] * x[r]);
                        }
                    }
                }
                s
            })
            .collect()
    }

    /// Lie bracket `[v, w]`, which only depends on the horizontal parts.
    pub fn bracket(&self, v: &Point, w: &Point) -> Vec<f64> {
        self.bracket_x(&v.x, &w.x)
    }

    /// Group law `g ⋆ h = g + h + ½[g, h]`.
    pub fn mul(&self, g: &Point, h: &Point) -> Point {
        let br = self.bracket_x(&g.x, &h.x);
        Point {
            x: g.x.iter().zip(&h.x).map(|(a, b)| a + b).collect(),
            z: g
                .z
                .iter()
                .zip(&h.z)
                .zip(&br)
                .map(|((a, b), c)| a + b + 0.5 * c)
                .collect(),
        }
    }

    pub fn inv(&self, g: &Point) -> Point {
        Point {
            x: g.x.iter().map(|v| -v).collect(),
            z: g.z.iter().map(|v| -v).collect(),
        }
    }

    /// Dilation `φ_α(x, z) = (αx, α²z)`.
    pub fn dilate(&self, alpha: f64, g: &Point) -> Point {
        Point {
            x: g.x.iter().map(|v| alpha * v).collect(),
            z: g.z.iter().map(|v| alpha * alpha * v).collect(),
        }
    }

    /// Combines Euclidean gradients into `(∇f, ∇̂f)`:
    /// `∇_x f ± ½ J_{∇_z f} x`.
    pub fn combine_gradients(&self, x: &[f64], grad: &EuclideanGradient) -> (Vec<f64>, Vec<f64>) {
        let twist = self.apply_jz(&grad.z, x);
        let left = grad.x.iter().zip(&twist).map(|(a, b)| a + 0.5 * b).collect();
        let right = grad.x.iter().zip(&twist).map(|(a, b)| a - 0.5 * b).collect();
        (left, right)
    }

    /// Left-invariant subgradient `∇f = (X_1 f, ..., X_{2n} f)`.
    pub fn left_gradient(&self, f: &ScalarField, g: &Point) -> Result<Vec<f64>> {
        self.check_point(g)?;
        let grad = f.euclidean_gradient(g)?;
        Ok(self.combine_gradients(&g.x, &grad).0)
    }

    /// Right-invariant subgradient `∇̂f`.
    pub fn right_gradient(&self, f: &ScalarField, g: &Point) -> Result<Vec<f64>> {
        self.check_point(g)?;
        let grad = f.euclidean_gradient(g)?;
        Ok(self.combine_gradients(&g.x, &grad).1)
    }

    /// Central gradient `∇_z f`, both left- and right-invariant.
    pub fn z_gradient(&self, f: &ScalarField, g: &Point) -> Result<Vec<f64>> {
        self.check_point(g)?;
        Ok(f.euclidean_gradient(g)?.z)
    }

    /// Largest residual of each axiom over all index pairs (float check).
    pub fn axiom_residuals(&self) -> AxiomResiduals {
        let dim = 2 * self.n;
        let mut res = AxiomResiduals::default();
        for (a, ja) in self.j.iter().enumerate() {
            res.skew = res.skew.max(skew_residual(ja, dim));
            for (b, jb) in self.j.iter().enumerate().skip(a) {
                let r = anticommutator_residual(ja, jb, dim, a == b);
                if a == b {
                    res.square = res.square.max(r);
                } else {
                    res.anticommutation = res.anticommutation.max(r);
                }
            }
        }
        res
    }

    pub fn to_json(&self) -> GroupJson {
        let j = match &self.j_exact {
            Some(exact) => exact
                .iter()
                .map(|mat| mat.iter().map(MatrixEntry::from_rational).collect())
                .collect(),
            None => self
                .j
                .iter()
                .map(|mat| mat.iter().map(|v| MatrixEntry::Float(*v)).collect())
                .collect(),
        };
        GroupJson {
            n: self.n,
            m: self.m,
            j: JsonMatrices::Flat(j),
        }
    }

    /// Re-validates the axioms; exact when every entry is an integer or a
    /// `"p/q"` string.
    pub fn from_json(doc: &GroupJson) -> Result<Self> {
        let dim = 2 * doc.n;
        let flat = doc.j.flatten(dim)?;
        let exact: Option<Vec<Vec<BigRational>>> = flat
            .iter()
            .map(|mat| mat.iter().map(MatrixEntry::to_rational).collect())
            .collect();
        match exact {
            Some(exact) => Self::from_rational_matrices(doc.n, doc.m, exact),
            None => {
                let floats = flat
                    .iter()
                    .map(|mat| mat.iter().map(MatrixEntry::to_f64).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()?;
                Self::from_matrices(doc.n, doc.m, floats)
            }
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: GroupJson = serde_json::from_str(s)?;
        Self::from_json(&doc)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct AxiomResiduals {
    pub skew: f64,
    pub square: f64,
    pub anticommutation: f64,
}

impl AxiomResiduals {
    pub fn max(&self) -> f64 {
        self.skew.max(self.square).max(self.anticommutation)
    }
}

fn check_shape(n: usize, m: usize, count: usize, lens: impl Iterator<Item = usize>) -> Result<()> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("n and m must be positive".into()));
    }
    if count != m {
        return Err(Error::DimensionMismatch(format!("expected {m} J matrices, got {count}")));
    }
    let want = 4 * n * n;
    for (k, len) in lens.enumerate() {
        if len != want {
            return Err(Error::DimensionMismatch(format!(
                "J_{} has {len} entries, expected {want} ({}x{})",
                k + 1,
                2 * n,
                2 * n
            )));
        }
    }
    Ok(())
}

fn skew_residual(a: &[f64], dim: usize) -> f64 {
    let mut s = 0.0;
    for r in 0..dim {
        for c in 0..dim {
            let v = a[r * dim + c] + a[c * dim + r];
            s += v * v;
        }
    }
    s.sqrt()
}

/// Frobenius norm of `AB + BA + 2δ I`.
fn anticommutator_residual(a: &[f64], b: &[f64], dim: usize, same: bool) -> f64 {
    let mut s = 0.0;
    for r in 0..dim {
        for c in 0..dim {
            let mut v = 0.0;
            for k in 0..dim {
                v += a[r * dim + k] * b[k * dim + c] + b[r * dim + k] * a[k * dim + c];
            }
            if same && r == c {
                v += 2.0;
            }
            s += v * v;
        }
    }
    s.sqrt()
}

fn validate_float(n: usize, j: &[Vec<f64>]) -> Result<()> {
    let dim = 2 * n;
    for (a, ja) in j.iter().enumerate() {
        let r = skew_residual(ja, dim);
        if r > AXIOM_TOLERANCE {
            return Err(Error::AxiomViolation {
                axiom: Axiom::Skew,
                j: a + 1,
                k: a + 1,
                residual: r,
            });
        }
    }
    for (a, ja) in j.iter().enumerate() {
        for (b, jb) in j.iter().enumerate().skip(a) {
            let r = anticommutator_residual(ja, jb, dim, a == b);
            if r > AXIOM_TOLERANCE {
                return Err(Error::AxiomViolation {
                    axiom: if a == b { Axiom::Square } else { Axiom::Anticommutation },
                    j: a + 1,
                    k: b + 1,
                    residual: r,
                });
            }
        }
    }
    Ok(())
}

fn validate_exact(n: usize, j: &[Vec<BigRational>]) -> Result<()> {
    let dim = 2 * n;
    for (a, ja) in j.iter().enumerate() {
        let mut bad = BigRational::zero();
        for r in 0..dim {
            for c in 0..dim {
                let v = &ja[r * dim + c] + &ja[c * dim + r];
                bad += &v * &v;
            }
        }
        if !bad.is_zero() {
            return Err(Error::AxiomViolation {
                axiom: Axiom::Skew,
                j: a + 1,
                k: a + 1,
                residual: rational_to_f64(&bad).sqrt(),
            });
        }
    }
    for (a, ja) in j.iter().enumerate() {
        for (b, jb) in j.iter().enumerate().skip(a) {
            let mut bad = BigRational::zero();
            for r in 0..dim {
                for c in 0..dim {
                    let mut v = BigRational::zero();
                    for k in 0..dim {
                        v += &ja[r * dim + k] * &jb[k * dim + c] + &jb[r * dim + k] * &ja[k * dim + c];
                    }
                    if a == b && r == c {
                        v += BigRational::from_integer(2.into());
                    }
                    bad += &v * &v;
                }
            }
            if !bad.is_zero() {
                return Err(Error::AxiomViolation {
                    axiom: if a == b { Axiom::Square } else { Axiom::Anticommutation },
                    j: a + 1,
                    k: b + 1,
                    residual: rational_to_f64(&bad).sqrt(),
                });
            }
        }
    }
    Ok(())
}

pub fn rational_to_f64(q: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    q.to_f64().unwrap_or(f64::NAN)
}

/// Parses `"p/q"`, `"p"` or a decimal such as `"0.25"` into an exact rational.
pub fn parse_rational(s: &str) -> Result<BigRational> {
    let s = s.trim();
    let bad = || Error::Parse(format!("not a rational number: {s:?}"));
    if let Some((p, q)) = s.split_once('/') {
        let p: num_bigint::BigInt = p.trim().parse().map_err(|_| bad())?;
        let q: num_bigint::BigInt = q.trim().parse().map_err(|_| bad())?;
        if q.is_zero() {
            return Err(bad());
        }
        return Ok(BigRational::new(p, q));
    }
    if let Ok(p) = s.parse::<num_bigint::BigInt>() {
        return Ok(BigRational::from_integer(p));
    }
    // Finite decimal expansion.
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int, frac) = body.split_once('.').ok_or_else(bad)?;
    if frac.is_empty() && int.is_empty() {
        return Err(bad());
    }
    let digits = format!("{int}{frac}");
    if !digits.chars().all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let num: num_bigint::BigInt = digits.parse().map_err(|_| bad())?;
    let den = num_traits::pow(num_bigint::BigInt::from(10), frac.len());
    let q = BigRational::new(num, den);
    Ok(if neg { -q } else { q })
}

/// One matrix entry in the group JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixEntry {
    Int(i64),
    Float(f64),
    /// `"p/q"` rational literal.
    Text(String),
}

impl MatrixEntry {
    fn from_rational(q: &BigRational) -> Self {
        use num_traits::ToPrimitive;
        if q.is_integer() {
            if let Some(v) = q.to_integer().to_i64() {
                return MatrixEntry::Int(v);
            }
        }
        MatrixEntry::Text(format_rational(q))
    }

    fn to_rational(&self) -> Option<BigRational> {
        match self {
            MatrixEntry::Int(v) => Some(BigRational::from_integer((*v).into())),
            MatrixEntry::Float(_) => None,
            MatrixEntry::Text(s) => parse_rational(s).ok(),
        }
    }

    fn to_f64(&self) -> Result<f64> {
        match self {
            MatrixEntry::Int(v) => Ok(*v as f64),
            MatrixEntry::Float(v) => Ok(*v),
            MatrixEntry::Text(s) => s
                .trim()
                .parse::<f64>()
                .or_else(|_| parse_rational(s).map(|q| rational_to_f64(&q))),
        }
    }
}

/// `J` matrices either flat row-major or as nested rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JsonMatrices {
    Flat(Vec<Vec<MatrixEntry>>),
    Nested(Vec<Vec<Vec<MatrixEntry>>>),
}

impl JsonMatrices {
    fn flatten(&self, dim: usize) -> Result<Vec<Vec<MatrixEntry>>> {
        match self {
            JsonMatrices::Flat(v) => Ok(v.clone()),
            JsonMatrices::Nested(v) => v
                .iter()
                .map(|rows| {
                    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                        return Err(Error::DimensionMismatch(format!("J matrices must be {dim}x{dim}")));
                    }
                    Ok(rows.iter().flatten().cloned().collect())
                })
                .collect(),
        }
    }
}

/// Serialized group: `{ "n": .., "m": .., "J": [[row-major entries], ...] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupJson {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "J")]
    pub j: JsonMatrices,
}

pub fn format_rational(q: &BigRational) -> String {
    if q.is_integer() {
        q.numer().to_string()
    } else {
        let sign = if q.is_negative() { "-" } else { "" };
        format!("{sign}{}/{}", q.numer().abs(), q.denom())
    }
}

/// Euclidean partial derivatives `(∇_x f, ∇_z f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EuclideanGradient {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

/// Witness `(M, a, ε)` that `|f| + |∇f| + |∇̂f| <= M exp(a d(0,g)^{2-ε})`,
/// i.e. membership in the class on which `P_t` acts by convolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthCertificate {
    pub m: f64,
    pub a: f64,
    pub epsilon: f64,
}

impl GrowthCertificate {
    pub fn new(m: f64, a: f64, epsilon: f64) -> Result<Self> {
        if !(m >= 0.0 && a >= 0.0 && epsilon > 0.0 && epsilon < 1.0) || !m.is_finite() || !a.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "growth certificate needs M >= 0, a >= 0, eps in (0,1); got ({m}, {a}, {epsilon})"
            )));
        }
        Ok(GrowthCertificate { m, a, epsilon })
    }

    /// Bounded functions.
    pub fn bounded(m: f64) -> Self {
        GrowthCertificate {
            m,
            a: 0.0,
            epsilon: 0.5,
        }
    }

    /// Certificate for growth `C (1 + d)^w`, taking `a = 0.1`, `ε = ½`.
    pub fn polynomial(c: f64, w: u32) -> Self {
        let a = 0.1;
        // sup_d (1+d)^w exp(-a d^{3/2}); the maximiser is well below 1e4.
        let mut best: f64 = 1.0;
        let mut d: f64 = 0.0;
        while d < 1e4 {
            best = best.max((w as f64 * (1.0 + d).ln() - a * d.powf(1.5)).exp());
            d += 0.01 * (1.0 + d);
        }
        GrowthCertificate {
            m: c * best * 1.01,
            a,
            epsilon: 0.5,
        }
    }

    /// Upper bound on `|f|` at distance `d`.
    pub fn bound(&self, d: f64) -> f64 {
        self.m * (self.a * d.powf(2.0 - self.epsilon)).exp()
    }
}

type ValueFn = dyn Fn(&Point) -> f64 + Send + Sync;
type GradientFn = dyn Fn(&Point) -> EuclideanGradient + Send + Sync;

/// A real function on `G`, optionally with its Euclidean gradient and a
/// growth certificate.
///
/// Without an analytic gradient, central differences are used with step
/// `h = max(1e-6, 1e-6 |coordinate|)`; expect roughly 1e-9 accuracy on
/// well-scaled fields.
#[derive(Clone)]
pub struct ScalarField {
    value: Arc<ValueFn>,
    gradient: Option<Arc<GradientFn>>,
    growth: Option<GrowthCertificate>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("analytic_gradient", &self.gradient.is_some())
            .field("growth", &self.growth)
            .finish()
    }
}

impl ScalarField {
    pub fn new(value: impl Fn(&Point) -> f64 + Send + Sync + 'static) -> Self {
        ScalarField {
            value: Arc::new(value),
            gradient: None,
            growth: None,
        }
    }

    pub fn with_gradient(mut self, gradient: impl Fn(&Point) -> EuclideanGradient + Send + Sync + 'static) -> Self {
        self.gradient = Some(Arc::new(gradient));
        self
    }

    pub fn with_growth(mut self, growth: GrowthCertificate) -> Self {
        self.growth = Some(growth);
        self
    }

    pub fn growth(&self) -> Option<&GrowthCertificate> {
        self.growth.as_ref()
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    /// Raw evaluation; callers on hot paths check finiteness themselves.
    pub fn value_unchecked(&self, g: &Point) -> f64 {
        (self.value)(g)
    }

    pub fn eval(&self, g: &Point) -> Result<f64> {
        let v = (self.value)(g);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::FieldEvaluation(g.to_string()))
        }
    }

    pub fn euclidean_gradient(&self, g: &Point) -> Result<EuclideanGradient> {
        let grad = match &self.gradient {
            Some(grad) => grad(g),
            None => self.finite_difference_gradient(g)?,
        };
        if grad.x.iter().chain(&grad.z).all(|v| v.is_finite()) {
            Ok(grad)
        } else {
            Err(Error::FieldEvaluation(g.to_string()))
        }
    }

    fn finite_difference_gradient(&self, g: &Point) -> Result<EuclideanGradient> {
        let mut coords = g.coords();
        let n = g.x.len() / 2;
        let mut partials = Vec::with_capacity(coords.len());
        for i in 0..coords.len() {
            let c = coords[i];
            let h = 1e-6_f64.max(1e-6 * c.abs());
            coords[i] = c + h;
            let fp = self.eval(&Point::from_coords(&coords, n))?;
            coords[i] = c - h;
            let fm = self.eval(&Point::from_coords(&coords, n))?;
            coords[i] = c;
            partials.push((fp - fm) / (2.0 * h));
        }
        let z = partials.split_off(2 * n);
        Ok(EuclideanGradient { x: partials, z })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_point(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Point {
        Point::new(
            (0..2 * n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
    }

    fn groups() -> Vec<HTypeGroup> {
        vec![
            HTypeGroup::heisenberg(1).unwrap(),
            HTypeGroup::heisenberg(3).unwrap(),
            HTypeGroup::quaternionic(1).unwrap(),
            HTypeGroup::quaternionic(2).unwrap(),
        ]
    }

    #[test]
    fn heisenberg_one_is_symplectic_form() {
        let g = HTypeGroup::heisenberg(1).unwrap();
        assert_eq!(g.j_matrix(0), &[0.0, -1.0, 1.0, 0.0]);
        assert_eq!(g.axiom_residuals().max(), 0.0);
        assert_eq!(g.homogeneous_dimension(), 4);
    }

    #[test]
    fn heisenberg_three_squares_to_minus_identity() {
        let g = HTypeGroup::heisenberg(3).unwrap();
        let j = g.j_matrix(0);
        for r in 0..6 {
            for c in 0..6 {
                let v: f64 = (0..6).map(|k| j[r * 6 + k] * j[k * 6 + c]).sum();
                assert_eq!(v, if r == c { -1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn heisenberg_two_bracket_of_e1_e2_is_u1() {
        let g = HTypeGroup::heisenberg(2).unwrap();
        let mut e1 = g.identity();
        e1.x[0] = 1.0;
        let mut e2 = g.identity();
        e2.x[1] = 1.0;
        assert_eq!(g.j_map(&[1.0], &e1.x).unwrap()[1], 1.0);
        assert_eq!(g.bracket(&e1, &e2), vec![1.0]);
    }

    #[test]
    fn quaternionic_units_anticommute() {
        let g = HTypeGroup::quaternionic(1).unwrap();
        assert_eq!((g.n(), g.m()), (2, 3));
        let (a, b) = (g.j_matrix(0), g.j_matrix(1));
        for r in 0..4 {
            for c in 0..4 {
                let ab: f64 = (0..4).map(|k| a[r * 4 + k] * b[k * 4 + c]).sum();
                let ba: f64 = (0..4).map(|k| b[r * 4 + k] * a[k * 4 + c]).sum();
                assert_eq!(ab, -ba);
            }
        }
        // J_z is orthogonal for z = (1, 0, 0).
        let jz = g.j_z_matrix(&[1.0, 0.0, 0.0]);
        for r in 0..4 {
            for c in 0..4 {
                let v: f64 = (0..4).map(|k| jz[k * 4 + r] * jz[k * 4 + c]).sum();
                assert_eq!(v, if r == c { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(g.j_map(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0]).unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn quaternionic_two_passes_axiom_checker() {
        let g = HTypeGroup::quaternionic(2).unwrap();
        assert_eq!(g.axiom_residuals().max(), 0.0);
        // The float path agrees.
        HTypeGroup::from_matrices(4, 3, g.j_matrices().to_vec()).unwrap();
    }

    #[test]
    fn custom_symplectic_is_heisenberg() {
        let g = HTypeGroup::from_matrices(1, 1, vec![vec![0.0, -1.0, 1.0, 0.0]]).unwrap();
        assert_eq!(g, HTypeGroup::heisenberg(1).unwrap());
    }

    #[test]
    fn custom_symmetric_is_rejected_as_not_skew() {
        let err = HTypeGroup::from_matrices(1, 1, vec![vec![0.0, 1.0, 1.0, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::AxiomViolation { axiom: Axiom::Skew, j: 1, .. }), "{err}");
    }

    #[test]
    fn custom_repeated_j_fails_anticommutation() {
        let j = vec![0.0, -1.0, 1.0, 0.0];
        let err = HTypeGroup::from_matrices(1, 2, vec![j.clone(), j]).unwrap_err();
        match err {
            Error::AxiomViolation {
                axiom: Axiom::Anticommutation,
                j: 1,
                k: 2,
                residual,
            } => assert!((residual - 8f64.sqrt()).abs() < 1e-12),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn custom_tolerates_roundoff_but_not_more() {
        let s = 1.0 / 2f64.sqrt();
        // Rotated symplectic form written through an orthogonal change of basis.
        let ok = vec![0.0, -(s * s + s * s), s * s + s * s, 0.0];
        HTypeGroup::from_matrices(1, 1, vec![ok]).unwrap();
        let bad = vec![0.0, -1.0 - 1e-8, 1.0 + 1e-8, 0.0];
        assert!(HTypeGroup::from_matrices(1, 1, vec![bad]).is_err());
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(
            HTypeGroup::from_matrices(1, 2, vec![vec![0.0; 4]]),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            HTypeGroup::from_matrices(1, 1, vec![vec![0.0; 3]]),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(HTypeGroup::heisenberg(0).is_err());
    }

    #[test]
    fn j_map_examples() {
        let g = HTypeGroup::heisenberg(1).unwrap();
        assert_eq!(g.j_map(&[1.0], &[1.0, 0.0]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(g.j_map(&[0.0], &[3.0, -7.0]).unwrap(), vec![0.0, 0.0]);
        let v = g.j_map(&[2.0], &[3.0, 4.0]).unwrap();
        assert!((norm(&v) - 10.0).abs() < 1e-14);
        assert!(g.j_map(&[1.0, 2.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn bracket_is_antisymmetric_and_ignores_center() {
        let g = HTypeGroup::heisenberg(1).unwrap();
        let v = Point::new(vec![1.5, -2.0], vec![3.0]);
        assert_eq!(g.bracket(&v, &v), vec![0.0]);
        let w = Point::new(vec![3.0, -4.0], vec![-1.0]);
        assert_eq!(g.bracket(&v, &w), vec![0.0]);
        assert_eq!(
            g.bracket(&Point::new(vec![1.0, 0.0], vec![0.0]), &Point::new(vec![0.0, 1.0], vec![0.0])),
            vec![1.0]
        );
    }

    #[test]
    fn mul_examples() {
        let g = HTypeGroup::heisenberg(1).unwrap();
        let e1 = Point::new(vec![1.0, 0.0], vec![0.0]);
        let e2 = Point::new(vec![0.0, 1.0], vec![0.0]);
        assert_eq!(g.mul(&e1, &e2), Point::new(vec![1.0, 1.0], vec![0.5]));
        let p = Point::new(vec![0.3, -0.2], vec![1.1]);
        assert_eq!(g.mul(&p, &g.identity()), p);
        assert_eq!(g.mul(&p, &g.inv(&p)), g.identity());
    }

    #[test]
    fn group_axioms_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for g in groups() {
            for _ in 0..1000 {
                let a = random_point(&mut rng, g.n(), g.m());
                let b = random_point(&mut rng, g.n(), g.m());
                let c = random_point(&mut rng, g.n(), g.m());
                let l = g.mul(&g.mul(&a, &b), &c).coords();
                let r = g.mul(&a, &g.mul(&b, &c)).coords();
                let res = norm(&l.iter().zip(&r).map(|(p, q)| p - q).collect::<Vec<_>>());
                assert!(res <= 1e-12, "associativity residual {res}");
                let alpha = rng.gen_range(0.1..3.0);
                let lhs = g.dilate(alpha, &g.mul(&a, &b)).coords();
                let rhs = g.mul(&g.dilate(alpha, &a), &g.dilate(alpha, &b)).coords();
                for (p, q) in lhs.iter().zip(&rhs) {
                    assert!((p - q).abs() <= 1e-12 * (1.0 + p.abs()));
                }
            }
        }
    }

    #[test]
    fn jz_identities_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for g in groups() {
            let dim = g.horizontal_dim();
            for _ in 0..100 {
                let mut z: Vec<f64> = (0..g.m()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let zn = norm(&z);
                z.iter_mut().for_each(|v| *v /= zn);
                let jz = g.j_z_matrix(&z);
                let mut ortho: f64 = 0.0;
                let mut square: f64 = 0.0;
                for r in 0..dim {
                    for c in 0..dim {
                        let tt: f64 = (0..dim).map(|k| jz[k * dim + r] * jz[k * dim + c]).sum();
                        let sq: f64 = (0..dim).map(|k| jz[r * dim + k] * jz[k * dim + c]).sum();
                        let id = if r == c { 1.0 } else { 0.0 };
                        ortho += (tt - id).powi(2);
                        square += (sq + id).powi(2);
                    }
                }
                assert!(ortho.sqrt() <= 1e-12 && square.sqrt() <= 1e-12);

                let w: Vec<f64> = (0..g.m()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let y: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let jzx = g.apply_jz(&z, &x);
                let jwx = g.apply_jz(&w, &x);
                let jzy = g.apply_jz(&z, &y);
                let x2 = dot(&x, &x);
                assert!((dot(&jzx, &jwx) - dot(&z, &w) * x2).abs() < 1e-12);
                assert!((dot(&jzx, &jzy) - dot(&z, &z) * dot(&x, &y)).abs() < 1e-12);
                assert!(dot(&jzx, &x).abs() < 1e-12);
                // <J_z x, y> = <z, [x, y]>
                assert!((dot(&jzx, &y) - dot(&z, &g.bracket_x(&x, &y))).abs() < 1e-12);
            }
        }
    }

    fn z1_field() -> ScalarField {
        ScalarField::new(|g| g.z[0]).with_gradient(|g| EuclideanGradient {
            x: vec![0.0; g.x.len()],
            z: vec![1.0],
        })
    }

    #[test]
    fn gradient_examples() {
        let g = HTypeGroup::heisenberg(1).unwrap();
        let x1 = ScalarField::new(|p| p.x[0]);
        let p = Point::new(vec![0.7, -1.3], vec![2.0]);
        for v in [g.left_gradient(&x1, &p).unwrap(), g.right_gradient(&x1, &p).unwrap()] {
            assert!((v[0] - 1.0).abs() < 1e-9 && v[1].abs() < 1e-9);
        }

        let f = z1_field();
        let at = Point::new(vec![1.0, 0.0], vec![0.0]);
        assert_eq!(g.left_gradient(&f, &at).unwrap(), vec![0.0, 0.5]);
        assert_eq!(g.right_gradient(&f, &at).unwrap(), vec![0.0, -0.5]);
        assert_eq!(g.z_gradient(&f, &at).unwrap(), vec![1.0]);

        let origin_x = Point::new(vec![0.0, 0.0], vec![4.0]);
        assert_eq!(g.left_gradient(&f, &origin_x).unwrap(), g.right_gradient(&f, &origin_x).unwrap());
    }

    #[test]
    fn left_minus_right_has_norm_x_times_grad_z() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for g in groups() {
            let field = ScalarField::new(|p| p.z.iter().enumerate().map(|(j, z)| (j as f64 + 1.0) * z * p.x[0]).sum())
                .with_gradient(|p| {
                    let mut x = vec![0.0; p.x.len()];
                    x[0] = p.z.iter().enumerate().map(|(j, z)| (j as f64 + 1.0) * z).sum();
                    EuclideanGradient {
                        x,
                        z: (0..p.z.len()).map(|j| (j as f64 + 1.0) * p.x[0]).collect(),
                    }
                });
            for _ in 0..50 {
                let p = random_point(&mut rng, g.n(), g.m());
                let l = g.left_gradient(&field, &p).unwrap();
                let r = g.right_gradient(&field, &p).unwrap();
                let diff: Vec<f64> = l.iter().zip(&r).map(|(a, b)| a - b).collect();
                let want = p.x_norm() * norm(&g.z_gradient(&field, &p).unwrap());
                assert!((norm(&diff) - want).abs() <= 1e-12 * (1.0 + want));
            }
        }
    }

    #[test]
    fn gradient_commutes_with_dilation() {
        // ∇(f∘φ_α)(g) = α (∇f)(φ_α g)
        let g = HTypeGroup::quaternionic(1).unwrap();
        let f = ScalarField::new(|p| p.x[0] * p.x[1] + p.z[1] * p.x[2] - p.z[2]).with_gradient(|p| EuclideanGradient {
            x: vec![p.x[1], p.x[0], p.z[1], 0.0],
            z: vec![0.0, p.x[2], -1.0],
        });
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let alpha: f64 = rng.gen_range(0.2..3.0);
            let p = random_point(&mut rng, 2, 3);
            let inner = f.clone();
            let grp = g.clone();
            let composed = ScalarField::new(move |q| inner.value_unchecked(&grp.dilate(alpha, q)));
            let lhs = g.left_gradient(&composed, &p).unwrap();
            let rhs = g.left_gradient(&f, &g.dilate(alpha, &p)).unwrap();
            for (a, b) in lhs.iter().zip(&rhs) {
                // composed uses the finite-difference path
                assert!((a - alpha * b).abs() < 1e-7, "{a} vs {}", alpha * b);
            }
        }
    }

    #[test]
    fn field_failure_propagates() {
        let g = HTypeGroup::heisenberg(1).unwrap();
        let f = ScalarField::new(|p| p.x[0].ln());
        let bad = Point::new(vec![-1.0, 0.0], vec![0.0]);
        assert!(matches!(f.eval(&bad), Err(Error::FieldEvaluation(_))));
        assert!(g.left_gradient(&f, &bad).is_err());
    }

    #[test]
    fn json_roundtrip_revalidates() {
        for g in groups() {
            let text = serde_json::to_string(&g.to_json()).unwrap();
            let back = HTypeGroup::from_json_str(&text).unwrap();
            assert_eq!(back, g);
            assert!(back.j_exact().is_some());
        }
        let nested = r#"{"n":1,"m":1,"J":[[[0,-1],[1,0]]]}"#;
        assert_eq!(HTypeGroup::from_json_str(nested).unwrap(), HTypeGroup::heisenberg(1).unwrap());
        let floats = r#"{"n":1,"m":1,"J":[[0.0,-1.0,1.0,0.0]]}"#;
        assert!(HTypeGroup::from_json_str(floats).unwrap().j_exact().is_none());
        let bad = r#"{"n":1,"m":1,"J":[[0,1,1,0]]}"#;
        assert!(matches!(HTypeGroup::from_json_str(bad), Err(Error::AxiomViolation { .. })));
        let rational = r#"{"n":1,"m":1,"J":[["0","-4/4","1","0"]]}"#;
        assert!(HTypeGroup::from_json_str(rational).unwrap().j_exact().is_some());
    }

    #[test]
    fn parse_rational_forms() {
        assert_eq!(format_rational(&parse_rational("1/3").unwrap()), "1/3");
        assert_eq!(format_rational(&parse_rational("-6/4").unwrap()), "-3/2");
        assert_eq!(format_rational(&parse_rational("7").unwrap()), "7");
        assert_eq!(format_rational(&parse_rational("0.25").unwrap()), "1/4");
        assert_eq!(format_rational(&parse_rational("-.5").unwrap()), "-1/2");
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("abc").is_err());
    }

    #[test]
    fn growth_certificate_bounds_polynomials() {
        let c = GrowthCertificate::polynomial(2.0, 4);
        for d in [0.0, 0.5, 3.0, 10.0, 40.0] {
            assert!(2.0 * (1.0_f64 + d).powi(4) <= c.bound(d));
        }
        assert!(GrowthCertificate::new(1.0, 0.0, 1.0).is_err());
    }
}
