//! Numerical checks of the heat-kernel estimates, the commutation and
//! integration-by-parts identities, and the gradient inequality.
//!
//! Estimate checks produce an [`EstimateReport`] holding the observed range of
//! a ratio whose boundedness is claimed. The constants involved are only known
//! to exist, so a report passes when the range is positive and finite; the
//! empirical extremes are recorded but never compared with invented values.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::sync::OnceLock;

use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{
    format_rational, norm, EuclideanGradient, GrowthCertificate, HTypeGroup, Point, ScalarField,
};
use crate::error::{Error, Result};
use crate::geometry::{
    cc_distance_from_identity, jacobian_radial, phi, radial_x_norm, radial_z_norm, region_of, GeodesicCoords, RegionLabel,
};
use crate::heat_kernel::{HeatGrid, KernelEvaluator, QuadratureConfig};
use crate::polynomial::{k2_closed_form, PolyCalculus, Polynomial};
use crate::quadrature::{integrate_vec, AdaptiveOptions};

/// Step of the symmetric differences along `s ↦ (s e_i, 0)`.
pub const FD_STEP: f64 = 1e-5;

/// A sample where a ratio was observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    /// Region label (`B`, `R1`, `R2`, `R3`) or family member name.
    pub label: String,
    /// Group point, `x` then `z`; empty for family members.
    pub point: Vec<f64>,
    /// `|u|` of the geodesic coordinates, if the sample came from a grid.
    pub r: Option<f64>,
    /// `|η|` of the geodesic coordinates, if the sample came from a grid.
    pub rho: Option<f64>,
    pub ratio: f64,
}

impl Witness {
    fn key(&self) -> (&[f64], f64, f64, &str) {
        (&self.point, self.r.unwrap_or(0.0), self.rho.unwrap_or(0.0), &self.label)
    }

    /// Deterministic order used to break ties between equal ratios.
    fn tie_cmp(&self, other: &Witness) -> Ordering {
        let (pa, ra, ha, la) = self.key();
        let (pb, rb, hb, lb) = other.key();
        for (a, b) in pa.iter().zip(pb) {
            match a.total_cmp(b) {
                Ordering::Equal => {}
                o => return o,
            }
        }
        pa.len()
            .cmp(&pb.len())
            .then(ra.total_cmp(&rb))
            .then(ha.total_cmp(&hb))
            .then(la.cmp(lb))
    }
}

/// A labelled number attached to a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxValue {
    pub label: String,
    pub value: f64,
}

/// Observed range of one ratio over a sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimate_id: String,
    pub grid_spec: String,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub argmin: Option<Witness>,
    pub argmax: Option<Witness>,
    pub n_points: usize,
    pub failures: Vec<String>,
    /// Sample counts per region label.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub region_counts: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub auxiliary: Vec<AuxValue>,
}

impl EstimateReport {
    pub fn empty(estimate_id: &str, grid_spec: &str) -> Self {
        EstimateReport {
            estimate_id: estimate_id.to_string(),
            grid_spec: grid_spec.to_string(),
            min_ratio: f64::INFINITY,
            max_ratio: f64::NEG_INFINITY,
            argmin: None,
            argmax: None,
            n_points: 0,
            failures: Vec::new(),
            region_counts: BTreeMap::new(),
            auxiliary: Vec::new(),
        }
    }

    /// Adds one observation. Non-finite or negative ratios become failures.
    pub fn record(&mut self, w: Witness) {
        self.n_points += 1;
        *self.region_counts.entry(w.label.clone()).or_insert(0) += 1;
        if !(w.ratio.is_finite() && w.ratio >= 0.0) {
            self.failures.push(format!("ratio {} at {:?}", w.ratio, w));
            return;
        }
        self.offer(w);
    }

    fn offer(&mut self, w: Witness) {
        let better_min = match &self.argmin {
            None => true,
            Some(cur) => match w.ratio.total_cmp(&cur.ratio) {
                Ordering::Less => true,
                Ordering::Equal => w.tie_cmp(cur) == Ordering::Less,
                Ordering::Greater => false,
            },
        };
        if better_min {
            self.min_ratio = w.ratio;
            self.argmin = Some(w.clone());
        }
        let better_max = match &self.argmax {
            None => true,
            Some(cur) => match w.ratio.total_cmp(&cur.ratio) {
                Ordering::Greater => true,
                Ordering::Equal => w.tie_cmp(cur) == Ordering::Less,
                Ordering::Less => false,
            },
        };
        if better_max {
            self.max_ratio = w.ratio;
            self.argmax = Some(w);
        }
    }

    pub fn record_failure(&mut self, label: &str, err: &Error) {
        self.n_points += 1;
        *self.region_counts.entry(label.to_string()).or_insert(0) += 1;
        self.failures.push(format!("{label}: {err}"));
    }

    /// Combines two reports over disjoint sample sets. The result does not
    /// depend on the order of merging.
    pub fn merge(mut self, other: EstimateReport) -> EstimateReport {
        self.n_points += other.n_points;
        self.failures.extend(other.failures);
        for (k, v) in other.region_counts {
            *self.region_counts.entry(k).or_insert(0) += v;
        }
        self.auxiliary.extend(other.auxiliary);
        if let Some(w) = other.argmin {
            self.offer(w);
        }
        if let Some(w) = other.argmax {
            self.offer(w);
        }
        self
    }

    /// `0 < min_ratio <= max_ratio < ∞` with no failures.
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
            && self.n_points > 0
            && self.min_ratio > 0.0
            && self.min_ratio <= self.max_ratio
            && self.max_ratio.is_finite()
    }

    /// Like [`Self::passed`] but allowing a zero minimum.
    pub fn finite(&self) -> bool {
        self.failures.is_empty() && self.n_points > 0 && self.min_ratio >= 0.0 && self.max_ratio.is_finite()
    }
}

/// Tensor grid in `(d, ρ)`: `d = |u||η|` and `ρ = |η|`, with
/// `u = (d/ρ) e_1` and `η = ρ u_1`. Endpoints are included, so
/// [`Self::doubled`] contains every node of the original grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicGrid {
    pub d_min: f64,
    pub d_max: f64,
    pub n_d: usize,
    pub rho_min: f64,
    pub rho_max: f64,
    pub n_rho: usize,
}

impl GeodesicGrid {
    /// 576 points with `d ∈ [0.05, 6]`, all `ρ` in `(0, 2π)`.
    pub fn estimates() -> Self {
        GeodesicGrid {
            d_min: 0.05,
            d_max: 6.0,
            n_d: 24,
            rho_min: 1e-3,
            rho_max: TAU - 1e-3,
            n_rho: 24,
        }
    }

    /// Samples for the geodesic-integral lemma, `d ∈ [1, 6]`.
    pub fn lemma() -> Self {
        GeodesicGrid {
            d_min: 1.0,
            ..Self::estimates()
        }
    }

    /// Grid for the Jacobian asymptotics, `ρ ∈ [1e-4, 2π - 1e-4]`.
    pub fn jacobian() -> Self {
        GeodesicGrid {
            rho_min: 1e-4,
            rho_max: TAU - 1e-4,
            ..Self::estimates()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.d_min > 0.0
            && self.d_min <= self.d_max
            && self.d_max.is_finite()
            && self.rho_min > 0.0
            && self.rho_min <= self.rho_max
            && self.rho_max < TAU
            && self.n_d >= 1
            && self.n_rho >= 1
            && (self.n_d > 1 || self.d_min == self.d_max)
            && (self.n_rho > 1 || self.rho_min == self.rho_max);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid grid {self:?}")))
        }
    }

    /// Halves the spacing in both directions.
    pub fn doubled(&self) -> Self {
        GeodesicGrid {
            n_d: 2 * self.n_d - 1,
            n_rho: 2 * self.n_rho - 1,
            ..self.clone()
        }
    }

    pub fn len(&self) -> usize {
        self.n_d * self.n_rho
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![lo];
        }
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    /// `(d, ρ)` pairs, `d` outermost.
    pub fn nodes(&self) -> Vec<(f64, f64)> {
        let ds = Self::axis(self.d_min, self.d_max, self.n_d);
        let rhos = Self::axis(self.rho_min, self.rho_max, self.n_rho);
        ds.iter().flat_map(|&d| rhos.iter().map(move |&r| (d, r))).collect()
    }

    pub fn describe(&self) -> String {
        format!(
            "d in [{}, {}] x {} by |eta| in [{}, {}] x {}, u = (d/|eta|) e1, eta = |eta| u1",
            self.d_min, self.d_max, self.n_d, self.rho_min, self.rho_max, self.n_rho
        )
    }
}

/// `B` when `d = |u||η| < 1`, otherwise the region of `(d/ρ, ρ)`.
pub fn region_label(d: f64, rho: f64) -> String {
    if d < 1.0 {
        return "B".to_string();
    }
    // Clamp so that rounding in d/ρ cannot push a boundary node inside.
    let r = (d / rho).max(1.0 / rho);
    match region_of(r, rho) {
        Ok(l) => l.to_string(),
        Err(_) => RegionLabel::R1.to_string(),
    }
}

/// The point `Φ((d/ρ) e_1, ρ u_1)`.
pub fn grid_point(group: &HTypeGroup, d: f64, rho: f64) -> Result<Point> {
    let mut u = vec![0.0; group.horizontal_dim()];
    u[0] = d / rho;
    let mut eta = vec![0.0; group.m()];
    eta[0] = rho;
    phi(group, &GeodesicCoords::new(u, eta)?)
}

/// `(1 + d^{2n-m-1}) / (1 + (|x| d)^{n-1/2}) e^{-d²/4}`.
pub fn p1_envelope(n: usize, m: usize, x_norm: f64, d: f64) -> f64 {
    let top = 1.0 + d.powi(2 * n as i32 - m as i32 - 1);
    let bottom = 1.0 + (x_norm * d).powf(n as f64 - 0.5);
    top / bottom * (-0.25 * d * d).exp()
}

/// `r^{2m} ρ^{2(m+n)} (2π - ρ)^{2n-1}`.
pub fn a_model(n: usize, m: usize, r: f64, rho: f64) -> f64 {
    r.powi(2 * m as i32) * rho.powi(2 * (m + n) as i32) * (TAU - rho).powi(2 * n as i32 - 1)
}

/// Residuals of the two integration-by-parts identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ByPartsResiduals {
    /// `|∫(∇f)p₁ + ∫(∇p₁)f|` over the normaliser.
    pub left: f64,
    /// `|∫(∇̂f)p₁ + ∫(∇̂p₁)f|` over the normaliser.
    pub right: f64,
    /// `∫|∇f|p₁`, or 1 when that vanishes.
    pub normaliser: f64,
}

/// Both sides of `∇̂P_t f(0) = P_t(∇̂f)(0)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommutationReport {
    /// Richardson-extrapolated differences of `P_t f` at the identity.
    pub lhs: Vec<f64>,
    /// `P_t(∇̂f)(0)`.
    pub rhs: Vec<f64>,
    /// `P_t(|∇̂f|)(0)`.
    pub scale: f64,
    /// `|lhs - rhs| / scale`, or absolute when `scale` vanishes.
    pub residual: f64,
}

/// Convolutions at the identity needed by the gradient checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityProbe {
    /// `∇P_t f(0)` by extrapolated differences.
    pub grad_heat: Vec<f64>,
    /// `P_t(∇̂f)(0)`.
    pub heat_grad_hat: Vec<f64>,
    /// `P_t(|∇f|)(0)`.
    pub heat_abs_grad: f64,
    /// `P_t(|∇̂f|)(0)`.
    pub heat_abs_grad_hat: f64,
    /// `P_t(|∇f|²)(0)`.
    pub heat_grad_sq: f64,
}

/// The ratio of the gradient inequality evaluated through quadrature and
/// through the exact polynomial semigroup.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleComparison {
    /// `|∇P_t f(0)| / P_t(|∇f|)(0)`, all by quadrature.
    pub ratio_quadrature: f64,
    /// Same with the exact numerator.
    pub ratio_exact_numerator: f64,
    /// `|∇P_t f(0)|² / P_t(|∇f|²)(0)` by quadrature.
    pub k2_quadrature: f64,
    /// Same, exactly.
    pub k2_exact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalConstantRecord {
    pub n: usize,
    /// Maximiser of `k₂` as an exact rational.
    pub t_max: String,
    /// `k₂(t_max)`, exact.
    pub k2_max: String,
    pub lower_bound: f64,
    /// Maximiser found by golden-section search before rounding.
    pub search_estimate: f64,
    /// `k₂(0)`, exact.
    pub k2_at_zero: String,
    /// `t_max = 2/(3n+3)`, `k₂(t_max) = (3n+5)/(3n+1)` and the closed form
    /// all agree exactly, and `t_max` is a strict local maximum.
    pub closed_form_verified: bool,
}

/// One field in a [`TestFunctionFamily`].
#[derive(Debug, Clone)]
pub struct FamilyMember {
    pub name: String,
    pub polynomial: Option<Polynomial>,
    pub field: ScalarField,
}

/// Fields with growth certificates.
#[derive(Debug, Clone)]
pub struct TestFunctionFamily {
    pub members: Vec<FamilyMember>,
    pub seed: u64,
    pub description: String,
}

impl TestFunctionFamily {
    pub fn new(description: &str, seed: u64) -> Self {
        TestFunctionFamily {
            members: Vec::new(),
            seed,
            description: description.to_string(),
        }
    }

    /// Adds a field; it must carry a growth certificate.
    pub fn push_field(&mut self, name: &str, field: ScalarField) -> Result<()> {
        if field.growth().is_none() {
            return Err(Error::MissingGrowthCertificate);
        }
        self.members.push(FamilyMember {
            name: name.to_string(),
            polynomial: None,
            field,
        });
        Ok(())
    }

    pub fn push_polynomial(&mut self, calc: &PolyCalculus, name: &str, p: Polynomial) {
        self.members.push(FamilyMember {
            name: name.to_string(),
            field: calc.field(&p),
            polynomial: Some(p),
        });
    }

    /// `x^1`, `z^1`, `x^1 + z^1 x^2` followed by `count` random polynomials
    /// of weight at most 4 with rational coefficients in `[-3, 3]`.
    pub fn standard(group: &HTypeGroup, count: usize, seed: u64) -> Result<Self> {
        let calc = PolyCalculus::new(group)?;
        let (n, m) = (group.n(), group.m());
        let mut fam = TestFunctionFamily::new(
            &format!("x1, z1, x1 + z1 x2 and {count} random polynomials of weight <= 4, seed {seed}"),
            seed,
        );
        fam.push_polynomial(&calc, "x1", Polynomial::x(n, m, 1));
        fam.push_polynomial(&calc, "z1", Polynomial::z(n, m, 1));
        fam.push_polynomial(&calc, "x1 + z1 x2", calc.extremal_example());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, p) in random_polynomials(n, m, 4, count, &mut rng).into_iter().enumerate() {
            fam.push_polynomial(&calc, &format!("random {i}: {p}"), p);
        }
        Ok(fam)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Exponent vectors of weight `deg_x + 2 deg_z <= max_weight`.
fn monomials(n: usize, m: usize, max_weight: u32) -> Vec<Vec<u32>> {
    let vars = 2 * n + m;
    let mut out = Vec::new();
    let mut cur = vec![0u32; vars];
    fn rec(v: usize, budget: u32, n2: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if v == cur.len() {
            out.push(cur.clone());
            return;
        }
        let w = if v < n2 { 1 } else { 2 };
        let mut k = 0;
        while k * w <= budget {
            cur[v] = k;
            rec(v + 1, budget - k * w, n2, cur, out);
            k += 1;
        }
        cur[v] = 0;
    }
    rec(0, max_weight, 2 * n, &mut cur, &mut out);
    out
}

/// Random non-constant polynomials; each monomial is kept with probability
/// 0.4 and gets a coefficient `p/q` with `q <= 4`, `|p/q| <= 3`.
pub fn random_polynomials(n: usize, m: usize, max_weight: u32, count: usize, rng: &mut ChaCha8Rng) -> Vec<Polynomial> {
    let basis = monomials(n, m, max_weight);
    let coefficient = |rng: &mut ChaCha8Rng| loop {
        let q: i64 = rng.gen_range(1..=4);
        let p: i64 = rng.gen_range(-3 * q..=3 * q);
        if p != 0 {
            return BigRational::new(p.into(), q.into());
        }
    };
    (0..count)
        .map(|_| {
            let mut p = Polynomial::zero(n, m);
            for e in &basis {
                if rng.gen_bool(0.4) {
                    p = &p + &Polynomial::monomial(n, m, e.clone(), coefficient(rng));
                }
            }
            if p.weight() == 0 {
                let e = basis[rng.gen_range(1..basis.len())].clone();
                p = &p + &Polynomial::monomial(n, m, e, coefficient(rng));
            }
            p
        })
        .collect()
}

/// `(1 + x^1 + z^1) exp(-(|x|² + |z|²)/4)` scaled by `c`, with analytic
/// gradient.
pub fn gaussian_field(c: f64) -> ScalarField {
    let value = move |g: &Point| {
        let e = (-0.25 * (dot2(&g.x) + dot2(&g.z))).exp();
        c * (1.0 + g.x[0] + g.z[0]) * e
    };
    ScalarField::new(value)
        .with_gradient(move |g: &Point| {
            let e = (-0.25 * (dot2(&g.x) + dot2(&g.z))).exp();
            let poly = 1.0 + g.x[0] + g.z[0];
            let mut x: Vec<f64> = g.x.iter().map(|v| -0.5 * v * poly * c * e).collect();
            let mut z: Vec<f64> = g.z.iter().map(|v| -0.5 * v * poly * c * e).collect();
            x[0] += c * e;
            z[0] += c * e;
            EuclideanGradient { x, z }
        })
        // |f| + |∇f| + |∇̂f| <= c (1 + |g|) e^{-|g|²/4} · poly(|x|) is bounded.
        .with_growth(GrowthCertificate::polynomial(10.0 * c.abs(), 2))
}

/// `exp(1 - 1/(1 - |g - center|²/R²))` inside the Euclidean ball of radius
/// `R` around `center` and 0 outside: smooth with compact support.
pub fn bump_field(center: Point, radius: f64) -> ScalarField {
    let c2 = center.clone();
    let inv_r2 = 1.0 / (radius * radius);
    let s_of = move |g: &Point, c: &Point| {
        let dx: f64 = g.x.iter().zip(&c.x).map(|(a, b)| (a - b) * (a - b)).sum();
        let dz: f64 = g.z.iter().zip(&c.z).map(|(a, b)| (a - b) * (a - b)).sum();
        (dx + dz) * inv_r2
    };
    ScalarField::new(move |g: &Point| {
        let s = s_of(g, &center);
        if s < 1.0 {
            (1.0 - 1.0 / (1.0 - s)).exp()
        } else {
            0.0
        }
    })
    .with_gradient(move |g: &Point| {
        let s = s_of(g, &c2);
        let scale = if s < 1.0 {
            let f = (1.0 - 1.0 / (1.0 - s)).exp();
            -f / ((1.0 - s) * (1.0 - s)) * 2.0 * inv_r2
        } else {
            0.0
        };
        EuclideanGradient {
            x: g.x.iter().zip(&c2.x).map(|(a, b)| scale * (a - b)).collect(),
            z: g.z.iter().zip(&c2.z).map(|(a, b)| scale * (a - b)).collect(),
        }
    })
    .with_growth(GrowthCertificate::bounded(1.0 + 20.0 * (1.0 + radius) / radius))
}

fn dot2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

/// Numerical checks for one group.
#[derive(Debug, Clone)]
pub struct Verifier {
    evaluator: KernelEvaluator,
    ball_volume: OnceLock<f64>,
}

impl Verifier {
    pub fn new(group: HTypeGroup, config: QuadratureConfig) -> Result<Self> {
        Ok(Verifier {
            evaluator: KernelEvaluator::new(group, config)?,
            ball_volume: OnceLock::new(),
        })
    }

    pub fn with_defaults(group: HTypeGroup) -> Self {
        Verifier {
            evaluator: KernelEvaluator::with_defaults(group),
            ball_volume: OnceLock::new(),
        }
    }

    pub fn evaluator(&self) -> &KernelEvaluator {
        &self.evaluator
    }

    pub fn group(&self) -> &HTypeGroup {
        self.evaluator.group()
    }

    fn dims(&self) -> (usize, usize) {
        (self.group().n(), self.group().m())
    }

    /// Kernel data accurate relative to itself, without an absolute floor.
    fn radial_relative(&self, t: f64, x_norm: f64, z_norm: f64) -> Result<crate::heat_kernel::RadialKernel> {
        self.evaluator.radial_with_tol(t, x_norm, z_norm, f64::MIN_POSITIVE)
    }

    fn scan<F>(&self, id: &str, grid: &GeodesicGrid, f: F) -> Result<EstimateReport>
    where
        F: Fn(f64, f64, &Point) -> Result<f64> + Sync,
    {
        Ok(self.scan_many(&[id], grid, |d, rho, g| Ok(vec![f(d, rho, g)?]))?.remove(0))
    }

    /// Evaluates several ratios per grid node and folds them in node order.
    fn scan_many<F>(&self, ids: &[&str], grid: &GeodesicGrid, f: F) -> Result<Vec<EstimateReport>>
    where
        F: Fn(f64, f64, &Point) -> Result<Vec<f64>> + Sync,
    {
        grid.validate()?;
        let spec = grid.describe();
        let nodes = grid.nodes();
        let outcomes: Vec<(String, Result<(Point, Vec<f64>)>)> = nodes
            .par_iter()
            .map(|&(d, rho)| {
                let label = region_label(d, rho);
                let res = grid_point(self.group(), d, rho).and_then(|g| {
                    let v = f(d, rho, &g)?;
                    Ok((g, v))
                });
                (label, res)
            })
            .collect();
        let mut reports: Vec<EstimateReport> = ids.iter().map(|id| EstimateReport::empty(id, &spec)).collect();
        for (&(d, rho), (label, res)) in nodes.iter().zip(outcomes) {
            match res {
                Ok((g, values)) => {
                    for (rep, ratio) in reports.iter_mut().zip(values) {
                        rep.record(Witness {
                            label: label.clone(),
                            point: g.coords(),
                            r: Some(d / rho),
                            rho: Some(rho),
                            ratio,
                        });
                    }
                }
                Err(e) => {
                    for rep in reports.iter_mut() {
                        rep.record_failure(&format!("{label} d={d} rho={rho}"), &e);
                    }
                }
            }
        }
        Ok(reports)
    }

    /// `p₁(g)` divided by its two-sided envelope.
    pub fn p1_ratio(&self, g: &Point) -> Result<f64> {
        self.group().check_point(g)?;
        let (n, m) = self.dims();
        let d = cc_distance_from_identity(g);
        let p = self.radial_relative(1.0, g.x_norm(), g.z_norm())?.p;
        Ok(p / p1_envelope(n, m, g.x_norm(), d))
    }

    pub fn check_p1_estimate(&self, grid: &GeodesicGrid) -> Result<EstimateReport> {
        self.scan("p1_estimate", grid, |_, _, g| self.p1_ratio(g))
    }

    /// `[|∇p₁|/((1+d)p₁), |∇_z p₁|/p₁, |∇̂p₁|/((1+d)p₁)]` and the slack of
    /// `|∇̂p₁| <= |∇p₁| + |x||∇_z p₁|` (non-negative when it holds).
    pub fn gradient_ratios(&self, g: &Point) -> Result<([f64; 3], f64)> {
        self.group().check_point(g)?;
        let d = cc_distance_from_identity(g);
        let rk = self.radial_relative(1.0, g.x_norm(), g.z_norm())?;
        let (grad, hat) = self.evaluator.gradients_from_radial(&g.x, &g.z, rk.a, rk.b);
        let gz = rk.b.abs() * g.z_norm();
        let (ng, nh) = (norm(&grad), norm(&hat));
        let ratios = [ng / ((1.0 + d) * rk.p), gz / rk.p, nh / ((1.0 + d) * rk.p)];
        let slack = ng + g.x_norm() * gz - nh;
        Ok((ratios, slack / (ng + g.x_norm() * gz).max(f64::MIN_POSITIVE)))
    }

    /// Reports for `∇p₁`, `∇_z p₁` and `∇̂p₁`, in that order. Points where
    /// `|∇̂p₁| <= |∇p₁| + |x||∇_z p₁|` fails are failures of the last one.
    pub fn check_gradient_estimates(&self, grid: &GeodesicGrid) -> Result<[EstimateReport; 3]> {
        let ids = ["grad_p1_estimate", "grad_z_p1_estimate", "grad_hat_p1_estimate", "combination"];
        let reps = self.scan_many(&ids, grid, |_, _, g| {
            let (r, slack) = self.gradient_ratios(g)?;
            // Negative entries are recorded as failures.
            Ok(vec![r[0], r[1], r[2], if slack < -1e-12 { slack } else { 0.0 }])
        })?;
        let mut it = reps.into_iter();
        let (a, b, mut c, combo) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
        c.failures.extend(combo.failures);
        Ok([a, b, c])
    }

    /// `A(r, ρ) / (r^{2m} ρ^{2(m+n)} (2π - ρ)^{2n-1})`.
    pub fn a_ratio(&self, r: f64, rho: f64) -> f64 {
        let (n, m) = self.dims();
        jacobian_radial(n, m, r, rho) / a_model(n, m, r, rho)
    }

    pub fn check_a_asymptotics(&self, grid: &GeodesicGrid) -> Result<EstimateReport> {
        self.scan("a_asymptotics", grid, |d, rho, _| Ok(self.a_ratio(d / rho, rho)))
    }

    /// `I·(|u||η|)² / (p₁(u,η) A(u,|η|))` with
    /// `I = ∫_1^{2π/|η|} p₁(u, tη) A(u, t|η|) t^q dt`, one value per `q`.
    ///
    /// The integral is cut where `e^{-(t²-1)d²/4} < e^{-60}`; the neglected
    /// tail is far below the quadrature tolerance.
    pub fn geodesic_integral_ratios(&self, r: f64, rho: f64, qs: &[u32]) -> Result<Vec<f64>> {
        if qs.is_empty() || qs.len() > 3 {
            return Err(Error::InvalidArgument("between one and three exponents q".into()));
        }
        if !(r > 0.0 && rho > 0.0 && rho < TAU) {
            return Err(Error::DomainViolation(format!("need r > 0 and 0 < |eta| < 2pi, got {r}, {rho}")));
        }
        let d = r * rho;
        if d < 1.0 - 1e-12 {
            return Err(Error::InsideBall(d));
        }
        let (n, m) = self.dims();
        let err: RefCell<Option<Error>> = RefCell::new(None);
        let weight = |t: f64| -> f64 {
            let th = t * rho;
            match self.radial_relative(1.0, radial_x_norm(r, th), radial_z_norm(r, th)) {
                Ok(k) => k.p * jacobian_radial(n, m, r, th),
                Err(e) => {
                    err.borrow_mut().get_or_insert(e);
                    0.0
                }
            }
        };
        let upper = (TAU / rho).min((1.0 + 240.0 / (d * d)).sqrt());
        let pad = |i: usize| qs[i.min(qs.len() - 1)] as i32;
        let breaks: Vec<f64> = (0..=8).map(|i| 1.0 + (upper - 1.0) * i as f64 / 8.0).collect();
        let opts = AdaptiveOptions {
            rel_tol: 1e-8,
            abs_tol: 0.0,
            max_panels: 4000,
        };
        let integral = integrate_vec(
            |t| {
                let w = weight(t);
                [w * t.powi(pad(0)), w * t.powi(pad(1)), w * t.powi(pad(2))]
            },
            &breaks,
            &opts,
        )?;
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
        let base = self.radial_relative(1.0, radial_x_norm(r, rho), radial_z_norm(r, rho))?.p
            * jacobian_radial(n, m, r, rho);
        Ok((0..qs.len()).map(|i| integral.value[i] * d * d / base).collect())
    }

    /// One report per exponent `q` (at most three).
    pub fn check_geodesic_integral_lemma_multi(&self, grid: &GeodesicGrid, qs: &[u32]) -> Result<Vec<EstimateReport>> {
        let ids: Vec<String> = qs.iter().map(|q| format!("geodesic_integral_lemma_q{q}")).collect();
        let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        if grid.d_min < 1.0 {
            return Err(Error::InvalidArgument("lemma samples need |u||eta| >= 1".into()));
        }
        self.scan_many(&id_refs, grid, |d, rho, _| self.geodesic_integral_ratios(d / rho, rho, qs))
    }

    pub fn check_geodesic_integral_lemma(&self, grid: &GeodesicGrid, q: u32) -> Result<EstimateReport> {
        Ok(self.check_geodesic_integral_lemma_multi(grid, &[q])?.remove(0))
    }

    /// The exponents `{0, m-1, 2}` without repetition.
    pub fn lemma_exponents(&self) -> Vec<u32> {
        let mut qs = vec![0, self.group().m() as u32 - 1, 2];
        qs.sort_unstable();
        qs.dedup();
        qs
    }

    /// `∫_B f dm / ∫_B dm` over the unit ball `d(0, g) < 1`.
    pub fn ball_average(&self, f: &ScalarField) -> Result<f64> {
        self.ball_average_with(f, 2)
    }

    /// [`Self::ball_average`] with `panels` radial panels.
    pub fn ball_average_with(&self, f: &ScalarField, panels: usize) -> Result<f64> {
        let grid = self.evaluator.geometry_grid(1.0, panels)?;
        let [num] = self.evaluator.integrate_grid(&grid, |s| Ok([f.eval(&s.k)?]))?;
        let volume = if panels == 2 {
            *self.ball_volume.get_or_init(|| grid.nodes.iter().map(|n| n.weight).sum())
        } else {
            grid.nodes.iter().map(|n| n.weight).sum()
        };
        Ok(num / volume)
    }

    /// Haar measure of the unit ball.
    pub fn ball_volume(&self) -> Result<f64> {
        if let Some(v) = self.ball_volume.get() {
            return Ok(*v);
        }
        let grid = self.evaluator.geometry_grid(1.0, 2)?;
        Ok(*self.ball_volume.get_or_init(|| grid.nodes.iter().map(|n| n.weight).sum()))
    }

    fn grid_for(&self, f: &ScalarField, t: f64, dg: f64) -> Result<std::sync::Arc<HeatGrid>> {
        let growth = f.growth().ok_or(Error::MissingGrowthCertificate)?;
        self.evaluator.grid_for_growth(growth, t, dg)
    }

    /// All convolutions at the identity used by the gradient checks, from a
    /// single pass over the grid.
    pub fn identity_probe(&self, f: &ScalarField, t: f64) -> Result<IdentityProbe> {
        let group = self.group();
        let dim = group.horizontal_dim();
        let m = group.m();
        let h = FD_STEP;
        let steps = [h, -h, 2.0 * h, -2.0 * h];
        let shifts: Vec<Point> = (0..dim)
            .flat_map(|i| {
                steps.iter().map(move |&s| {
                    let mut x = vec![0.0; dim];
                    x[i] = s;
                    Point::new(x, vec![0.0; m])
                })
            })
            .collect();
        let grid = self.grid_for(f, t, 2.0 * h)?;
        let n_shift = shifts.len();
        let len = n_shift + dim + 3;
        let sums = self.evaluator.integrate_grid_dyn(&grid, len, |s, out| {
            let p = s.p();
            for (o, g) in out.iter_mut().zip(&shifts) {
                *o = f.eval(&group.mul(g, &s.k))? * p;
            }
            let grad = f.euclidean_gradient(&s.k)?;
            let (left, right) = group.combine_gradients(&s.k.x, &grad);
            for (o, v) in out[n_shift..n_shift + dim].iter_mut().zip(&right) {
                *o = v * p;
            }
            let nl = norm(&left);
            out[n_shift + dim] = nl * p;
            out[n_shift + dim + 1] = norm(&right) * p;
            out[n_shift + dim + 2] = nl * nl * p;
            Ok(())
        })?;
        let grad_heat = (0..dim)
            .map(|i| {
                let v = &sums[4 * i..4 * i + 4];
                let d1 = (v[0] - v[1]) / (2.0 * h);
                let d2 = (v[2] - v[3]) / (4.0 * h);
                (4.0 * d1 - d2) / 3.0
            })
            .collect();
        Ok(IdentityProbe {
            grad_heat,
            heat_grad_hat: sums[n_shift..n_shift + dim].to_vec(),
            heat_abs_grad: sums[n_shift + dim],
            heat_abs_grad_hat: sums[n_shift + dim + 1],
            heat_grad_sq: sums[n_shift + dim + 2],
        })
    }

    pub fn check_commutation(&self, f: &ScalarField, t: f64) -> Result<CommutationReport> {
        let probe = self.identity_probe(f, t)?;
        let diff: Vec<f64> = probe.grad_heat.iter().zip(&probe.heat_grad_hat).map(|(a, b)| a - b).collect();
        let scale = probe.heat_abs_grad_hat;
        let residual = if scale > self.evaluator.config().abs_tol {
            norm(&diff) / scale
        } else {
            norm(&diff)
        };
        Ok(CommutationReport {
            lhs: probe.grad_heat,
            rhs: probe.heat_grad_hat,
            scale,
            residual,
        })
    }

    pub fn check_integration_by_parts(&self, f: &ScalarField) -> Result<ByPartsResiduals> {
        let group = self.group();
        let dim = group.horizontal_dim();
        let grid = self.grid_for(f, 1.0, 0.0)?;
        let sums = self.evaluator.integrate_grid_dyn(&grid, 2 * dim + 1, |s, out| {
            let p = s.p();
            let v = f.eval(&s.k)?;
            let grad = f.euclidean_gradient(&s.k)?;
            let (left, right) = group.combine_gradients(&s.k.x, &grad);
            let k = &s.node.kernel;
            let (gp, hp) = self.evaluator.gradients_from_radial(&s.k.x, &s.k.z, k.a, k.b);
            for i in 0..dim {
                out[i] = left[i] * p + gp[i] * v;
                out[dim + i] = right[i] * p + hp[i] * v;
            }
            out[2 * dim] = norm(&left) * p;
            Ok(())
        })?;
        let den = sums[2 * dim];
        let normaliser = if den > self.evaluator.config().abs_tol { den } else { 1.0 };
        Ok(ByPartsResiduals {
            left: norm(&sums[..dim]) / normaliser,
            right: norm(&sums[dim..2 * dim]) / normaliser,
            normaliser,
        })
    }

    /// `|∇P_t f(0)| / P_t(|∇f|)(0)`.
    pub fn gradient_ratio(&self, f: &ScalarField, t: f64) -> Result<f64> {
        let probe = self.identity_probe(f, t)?;
        self.ratio_from_probe(&probe)
    }

    fn ratio_from_probe(&self, probe: &IdentityProbe) -> Result<f64> {
        if probe.heat_abs_grad <= self.evaluator.config().abs_tol {
            return Err(Error::DegenerateDenominator(probe.heat_abs_grad));
        }
        Ok(norm(&probe.grad_heat) / probe.heat_abs_grad)
    }

    /// `|∫((∇ - ∇̂)f) p₁ dm| / ∫|∇f| p₁ dm`.
    pub fn integral_to_show(&self, f: &ScalarField) -> Result<f64> {
        let group = self.group();
        let dim = group.horizontal_dim();
        let grid = self.grid_for(f, 1.0, 0.0)?;
        let sums = self.evaluator.integrate_grid_dyn(&grid, dim + 1, |s, out| {
            let p = s.p();
            let grad = f.euclidean_gradient(&s.k)?;
            let (left, right) = group.combine_gradients(&s.k.x, &grad);
            for i in 0..dim {
                out[i] = (left[i] - right[i]) * p;
            }
            out[dim] = norm(&left) * p;
            Ok(())
        })?;
        if sums[dim] <= self.evaluator.config().abs_tol {
            return Err(Error::DegenerateDenominator(sums[dim]));
        }
        Ok(norm(&sums[..dim]) / sums[dim])
    }

    /// Largest `gradient_ratio` over the family. Each member's
    /// [`Self::integral_to_show`] value is attached as an auxiliary entry.
    pub fn scan_gradient_inequality(&self, family: &TestFunctionFamily, t: f64) -> Result<EstimateReport> {
        let mut rep = EstimateReport::empty(
            "gradient_inequality",
            &format!("{} at t = {t}", family.description),
        );
        for member in &family.members {
            match self.gradient_ratio(&member.field, t) {
                Ok(ratio) => rep.record(Witness {
                    label: member.name.clone(),
                    point: Vec::new(),
                    r: None,
                    rho: None,
                    ratio,
                }),
                Err(e) => rep.record_failure(&member.name, &e),
            }
            match self.integral_to_show(&member.field) {
                Ok(v) => rep.auxiliary.push(AuxValue {
                    label: format!("integral_to_show {}", member.name),
                    value: v,
                }),
                Err(e) => rep.failures.push(format!("integral_to_show {}: {e}", member.name)),
            }
        }
        Ok(rep)
    }

    /// The gradient ratio of a polynomial by quadrature and by the exact
    /// semigroup. `t` must be a rational number.
    pub fn compare_with_polynomial_oracle(&self, p: &Polynomial, t: &BigRational) -> Result<OracleComparison> {
        let calc = PolyCalculus::new(self.group())?;
        let tf = t.to_f64().ok_or_else(|| Error::InvalidArgument("t out of range".into()))?;
        let probe = self.identity_probe(&calc.field(p), tf)?;
        let ratio_quadrature = self.ratio_from_probe(&probe)?;
        let exact_grad: Vec<f64> = calc
            .gradient_at_identity_after_heat(p, t)?
            .iter()
            .map(|q| q.to_f64().unwrap_or(f64::NAN))
            .collect();
        let k2_exact = calc.squared_gradient_ratio(p, t)?.to_f64().unwrap_or(f64::NAN);
        let num = norm(&probe.grad_heat);
        Ok(OracleComparison {
            ratio_quadrature,
            ratio_exact_numerator: norm(&exact_grad) / probe.heat_abs_grad,
            k2_quadrature: num * num / probe.heat_grad_sq,
            k2_exact,
        })
    }

    /// `|T(x)∇p_t - ½(∇ - ∇̂)p_t| / |∇p_t|` where `T(x)` projects onto
    /// `span{J_{u_j} x}`.
    pub fn projection_identity_residual(&self, t: f64, g: &Point) -> Result<f64> {
        let group = self.group();
        group.check_point(g)?;
        let x2 = dot2(&g.x);
        if x2 == 0.0 {
            return Err(Error::DomainViolation("projection needs x != 0".into()));
        }
        let kg = self.evaluator.kernel_gradients(t, g)?;
        let dim = group.horizontal_dim();
        let mut proj = vec![0.0; dim];
        for j in 0..group.m() {
            let mut e = vec![0.0; group.m()];
            e[j] = 1.0;
            let v = group.apply_jz(&e, &g.x);
            let c: f64 = v.iter().zip(&kg.grad).map(|(a, b)| a * b).sum::<f64>() / x2;
            for (p, vi) in proj.iter_mut().zip(&v) {
                *p += c * vi;
            }
        }
        let diff: Vec<f64> = (0..dim).map(|i| proj[i] - 0.5 * (kg.grad[i] - kg.grad_hat[i])).collect();
        Ok(norm(&diff) / norm(&kg.grad).max(f64::MIN_POSITIVE))
    }
}

/// Best rational approximation of `x` with denominator at most `max_den`.
pub fn best_rational(x: f64, max_den: u64) -> BigRational {
    // Continued-fraction convergents.
    let (mut h0, mut h1) = (0i128, 1i128);
    let (mut k0, mut k1) = (1i128, 0i128);
    let mut v = x;
    for _ in 0..64 {
        let a = v.floor();
        let ai = a as i128;
        let h2 = ai * h1 + h0;
        let k2 = ai * k1 + k0;
        if k2 > max_den as i128 {
            break;
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = v - a;
        if frac < 1e-12 {
            break;
        }
        v = 1.0 / frac;
    }
    BigRational::new(h1.into(), k1.into())
}

/// Maximises `k₂` over `t ∈ [0, 1]` by golden-section search on exact
/// evaluations, rounds the maximiser to a small-denominator rational and
/// checks the closed forms there exactly.
pub fn optimal_constant_experiment(group: &HTypeGroup) -> Result<OptimalConstantRecord> {
    let calc = PolyCalculus::new(group)?;
    let n = group.n();
    let k2 = |t: f64| -> Result<f64> {
        let q = BigRational::from_float(t).ok_or_else(|| Error::InvalidArgument(format!("t = {t}")))?;
        Ok(calc.k2_ratio(&q)?.to_f64().unwrap_or(f64::NAN))
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0f64, 1.0f64);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (k2(c)?, k2(d)?);
    while b - a > 1e-10 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = k2(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = k2(d)?;
        }
    }
    let estimate = 0.5 * (a + b);
    let t_max = best_rational(estimate, 1000);
    let k2_max = calc.k2_ratio(&t_max)?;
    let int = |v: usize| BigRational::from_integer(v.into());
    let expected_t = int(2) / int(3 * n + 3);
    let expected_k = int(3 * n + 5) / int(3 * n + 1);
    let eps = BigRational::new(1.into(), 1_000_000.into());
    let left = calc.k2_ratio(&(&t_max - &eps))?;
    let right = calc.k2_ratio(&(&t_max + &eps))?;
    let verified = t_max == expected_t
        && k2_max == expected_k
        && k2_closed_form(n, &t_max) == k2_max
        && left < k2_max
        && right < k2_max
        && t_max.is_positive();
    let k0 = calc.k2_ratio(&BigRational::zero())?;
    Ok(OptimalConstantRecord {
        n,
        t_max: format_rational(&t_max),
        lower_bound: k2_max.to_f64().unwrap_or(f64::NAN).sqrt(),
        k2_max: format_rational(&k2_max),
        search_estimate: estimate,
        k2_at_zero: format_rational(&k0),
        closed_form_verified: verified && k0 == BigRational::one(),
    })
}
