//! One-dimensional and spherical quadrature.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::special::gamma_half;

// 21-point Kronrod extension of the 10-point Gauss rule (QUADPACK qk21).
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_797_052_034,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];
// Gauss weights for XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub abs_error: f64,
    pub evaluations: usize,
}

/// Result of an adaptive integration of `K` integrands sharing one set of
/// panels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegralVec<const K: usize> {
    pub value: [f64; K],
    pub abs_error: [f64; K],
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
struct Panel<const K: usize> {
    a: f64,
    b: f64,
    value: [f64; K],
    error: [f64; K],
    resabs: [f64; K],
    key: f64,
}

impl<const K: usize> PartialEq for Panel<K> {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl<const K: usize> Eq for Panel<K> {}
impl<const K: usize> PartialOrd for Panel<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<const K: usize> Ord for Panel<K> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.total_cmp(&other.key)
    }
}

fn gk21<const K: usize, F: Fn(f64) -> [f64; K]>(f: &F, a: f64, b: f64) -> Panel<K> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut fv1 = [[0.0; K]; 10];
    let mut fv2 = [[0.0; K]; 10];
    for j in 0..10 {
        let dx = h * XGK[j];
        fv1[j] = f(c - dx);
        fv2[j] = f(c + dx);
    }
    let habs = h.abs();
    let mut panel = Panel {
        a,
        b,
        value: [0.0; K],
        error: [0.0; K],
        resabs: [0.0; K],
        key: 0.0,
    };
    for k in 0..K {
        let mut resk = fc[k] * WGK[10];
        let mut resabs = resk.abs();
        let mut resg = 0.0;
        for j in 0..10 {
            let (f1, f2) = (fv1[j][k], fv2[j][k]);
            resk += WGK[j] * (f1 + f2);
            resabs += WGK[j] * (f1.abs() + f2.abs());
            if j % 2 == 1 {
                resg += WG[j / 2] * (f1 + f2);
            }
        }
        let mean = 0.5 * resk;
        let mut resasc = WGK[10] * (fc[k] - mean).abs();
        for j in 0..10 {
            resasc += WGK[j] * ((fv1[j][k] - mean).abs() + (fv2[j][k] - mean).abs());
        }
        resabs *= habs;
        resasc *= habs;
        let mut error = ((resk - resg) * h).abs();
        if resasc != 0.0 && error != 0.0 {
            error = resasc * (200.0 * error / resasc).powf(1.5).min(1.0);
        }
        if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
            error = error.max(50.0 * f64::EPSILON * resabs);
        }
        panel.value[k] = resk * h;
        panel.error[k] = error;
        panel.resabs[k] = resabs;
    }
    panel
}

/// Tolerances for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_panels: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        AdaptiveOptions {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            max_panels: 2000,
        }
    }
}

/// Globally adaptive Gauss–Kronrod (10/21) on `[breaks[0], breaks.last()]`,
/// starting from the panels given by consecutive break points.
///
/// Converges when the summed error estimate is below
/// `max(abs_tol, rel_tol |I|)`; an estimate sitting at the roundoff floor
/// (`100 ε ∫|f|`) also counts as converged.
pub fn integrate<F: Fn(f64) -> f64>(f: F, breaks: &[f64], opts: &AdaptiveOptions) -> Result<Integral> {
    let r = integrate_vec(|x| [f(x)], breaks, opts)?;
    Ok(Integral {
        value: r.value[0],
        abs_error: r.abs_error[0],
        evaluations: r.evaluations,
    })
}

/// [`integrate`] for `K` integrands at once. Every component must meet the
/// tolerance; panels are refined in order of their worst normalised error.
pub fn integrate_vec<const K: usize, F: Fn(f64) -> [f64; K]>(
    f: F,
    breaks: &[f64],
    opts: &AdaptiveOptions,
) -> Result<IntegralVec<K>> {
    if breaks.len() < 2 {
        return Err(Error::InvalidArgument("need at least two break points".into()));
    }
    let mut panels = Vec::with_capacity(breaks.len());
    for w in breaks.windows(2) {
        if !(w[0].is_finite() && w[1].is_finite()) {
            return Err(Error::InvalidArgument("break points must be finite".into()));
        }
        if w[1] != w[0] {
            panels.push(gk21(&f, w[0], w[1]));
        }
    }
    let mut evaluations = 21 * panels.len();
    let totals = |panels: &mut dyn Iterator<Item = &Panel<K>>| {
        let mut v = [0.0; K];
        let mut e = [0.0; K];
        let mut r = [0.0; K];
        for p in panels {
            for k in 0..K {
                v[k] += p.value[k];
                e[k] += p.error[k];
                r[k] += p.resabs[k];
            }
        }
        (v, e, r)
    };
    let weights = |value: &[f64; K]| {
        let mut w = [0.0; K];
        for k in 0..K {
            w[k] = 1.0 / opts.abs_tol.max(opts.rel_tol * value[k].abs()).max(f64::MIN_POSITIVE);
        }
        w
    };
    let key = |p: &Panel<K>, w: &[f64; K]| (0..K).map(|k| p.error[k] * w[k]).fold(0.0, f64::max);

    let (v0, _, _) = totals(&mut panels.iter());
    let mut w = weights(&v0);
    for p in panels.iter_mut() {
        p.key = key(p, &w);
    }
    let mut heap: BinaryHeap<Panel<K>> = panels.into();
    let mut next_rebuild = 2 * heap.len().max(8);
    loop {
        let (value, error, resabs) = totals(&mut heap.iter());
        let mut done = true;
        let mut worst: (f64, f64) = (0.0, 0.0);
        for k in 0..K {
            if !value[k].is_finite() {
                return Err(Error::QuadratureFailure {
                    estimated_error: f64::INFINITY,
                    requested: opts.abs_tol,
                });
            }
            let target = opts.abs_tol.max(opts.rel_tol * value[k].abs());
            if error[k] > target && error[k] > 100.0 * f64::EPSILON * resabs[k] {
                done = false;
                if error[k] / target > worst.0 / worst.1.max(f64::MIN_POSITIVE) || worst.1 == 0.0 {
                    worst = (error[k], target);
                }
            }
        }
        if done {
            return Ok(IntegralVec {
                value,
                abs_error: error,
                evaluations,
            });
        }
        if heap.len() >= opts.max_panels {
            return Err(Error::QuadratureFailure {
                estimated_error: worst.0,
                requested: worst.1,
            });
        }
        if heap.len() >= next_rebuild {
            w = weights(&value);
            let mut v = heap.into_vec();
            for p in v.iter_mut() {
                p.key = key(p, &w);
            }
            heap = v.into();
            next_rebuild = 2 * heap.len();
        }
        let top = heap.pop().expect("non-empty heap");
        let mid = 0.5 * (top.a + top.b);
        if mid <= top.a.min(top.b) || mid >= top.a.max(top.b) {
            return Err(Error::QuadratureFailure {
                estimated_error: worst.0,
                requested: worst.1,
            });
        }
        for (lo, hi) in [(top.a, mid), (mid, top.b)] {
            let mut p = gk21(&f, lo, hi);
            p.key = key(&p, &w);
            heap.push(p);
        }
        evaluations += 42;
    }
}

/// `n`-point Gauss–Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Composite Gauss–Legendre nodes on `[a, b]` split into `panels` equal pieces.
pub fn composite_gauss_legendre(a: f64, b: f64, panels: usize, per_panel: usize) -> (Vec<f64>, Vec<f64>) {
    let (gx, gw) = gauss_legendre(per_panel);
    let h = (b - a) / panels as f64;
    let mut xs = Vec::with_capacity(panels * per_panel);
    let mut ws = Vec::with_capacity(panels * per_panel);
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (x, w) in gx.iter().zip(&gw) {
            xs.push(lo + 0.5 * h * (x + 1.0));
            ws.push(0.5 * h * w);
        }
    }
    (xs, ws)
}

/// `n`-point Gauss rule for the weight `(1 - t²)^alpha` on `[-1, 1]` by
/// Golub–Welsch. `alpha > -1`.
pub fn gauss_gegenbauer(n: usize, alpha: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0 && alpha > -1.0);
    if alpha == 0.0 {
        return gauss_legendre(n);
    }
    // Monic three-term recurrence: zero diagonal, off-diagonal squared
    // k(k+2 alpha)/(4(k+alpha)^2 - 1), written with lambda = alpha + 1/2.
    let lambda = alpha + 0.5;
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let kf = k as f64;
        let b = if k == 1 && lambda == 0.0 {
            // Chebyshev limit of the 0/0 expression.
            0.5
        } else {
            kf * (kf + 2.0 * lambda - 1.0) / (4.0 * (kf + lambda) * (kf + lambda - 1.0))
        };
        let s = b.sqrt();
        jac[(k, k - 1)] = s;
        jac[(k - 1, k)] = s;
    }
    let mu0 = PI.sqrt() * gamma_ratio(alpha);
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Symmetrise away eigen-solver noise.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (pairs[j].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[j].1);
        pairs[i] = (-x, w);
        pairs[j] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    pairs.into_iter().unzip()
}

/// `Γ(alpha+1)/Γ(alpha+3/2)` for half-integer `alpha >= -1/2`.
fn gamma_ratio(alpha: f64) -> f64 {
    let twice = (2.0 * alpha).round();
    assert!((2.0 * alpha - twice).abs() < 1e-12 && twice >= -1.0, "alpha must be a half-integer");
    let k = twice as i64;
    gamma_half((k + 2) as u32) / gamma_half((k + 3) as u32)
}

/// Cubature on the unit sphere `S^{d-1} ⊂ R^d`, normalised to total weight 1
/// (i.e. it computes spherical means), exact for polynomials of degree
/// `<= degree`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereRule {
    dim: usize,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl SphereRule {
    pub fn new(dim: usize, degree: usize) -> Self {
        assert!(dim >= 1);
        let (points, weights) = sphere_rule(dim, degree);
        SphereRule { dim, points, weights }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points.iter().map(|p| p.as_slice()).zip(self.weights.iter().copied())
    }

    /// Spherical mean of `f`.
    pub fn mean<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> f64 {
        self.iter().map(|(p, w)| w * f(p)).sum()
    }
}

fn sphere_rule(dim: usize, degree: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    match dim {
        1 => (vec![vec![-1.0], vec![1.0]], vec![0.5, 0.5]),
        2 => {
            let n = degree + 1;
            let pts = (0..n)
                .map(|k| {
                    let a = 2.0 * PI * k as f64 / n as f64;
                    vec![a.cos(), a.sin()]
                })
                .collect();
            (pts, vec![1.0 / n as f64; n])
        }
        _ => {
            // ω = (t, sqrt(1-t²) ω') with t weighted by (1-t²)^{(d-3)/2}.
            let alpha = (dim as f64 - 3.0) / 2.0;
            let nt = degree / 2 + 1;
            let (ts, tw) = gauss_gegenbauer(nt, alpha);
            let total: f64 = tw.iter().sum();
            let (sub_pts, sub_w) = sphere_rule(dim - 1, degree);
            let mut pts = Vec::with_capacity(nt * sub_pts.len());
            let mut ws = Vec::with_capacity(nt * sub_pts.len());
            for (t, wt) in ts.iter().zip(&tw) {
                let s = (1.0 - t * t).max(0.0).sqrt();
                for (p, w) in sub_pts.iter().zip(&sub_w) {
                    let mut q = Vec::with_capacity(dim);
                    q.push(*t);
                    q.extend(p.iter().map(|c| s * c));
                    pts.push(q);
                    ws.push(wt / total * w);
                }
            }
            (pts, ws)
        }
    }
}
