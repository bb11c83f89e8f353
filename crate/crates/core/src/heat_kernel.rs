//! The heat kernel `p_t` of the sublaplacian and the semigroup it generates.
//!
//! The kernel is radial in `(|x|, |z|)`:
//!
//! ```text
//! p_t(r, ζ) = C ∫_0^∞ h_t(s) s^{m-1} Λ_ν(sζ) ds,
//! h_t(s)    = exp(-¼ r² s coth(ts)) (s / sinh(ts))^n,
//! C         = (2π)^{-m} (4π)^{-n} |S^{m-1}|,      ν = m/2 - 1,
//! ```
//!
//! where `Λ_ν` is the spherical mean of `cos(sζ ω_1)` (see [`crate::special`]).
//! Differentiating under the integral gives `∇_x p = a x`, `∇_z p = b z` with
//!
//! ```text
//! a = -½ C ∫ s coth(ts) h_t(s) s^{m-1} Λ_ν(sζ) ds,
//! b = -(C/m) ∫ h_t(s) s^{m+1} Λ_{ν+1}(sζ) ds.
//! ```
//!
//! Convolutions are integrated in geodesic coordinates `k = Φ(u, η)` with
//! `|u| = d/ρ`, `|η| = ρ`, so that the Gaussian decay in `d = d(0, k)` fixes a
//! cutoff independent of the direction.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::algebra::{HTypeGroup, Point, ScalarField};
use crate::error::{Error, Result};
use crate::geometry::{jacobian_radial, radial_x_norm, radial_z_norm};
use crate::quadrature::{composite_gauss_legendre, integrate_vec, AdaptiveOptions, SphereRule};
use crate::special::{sphere_area, SphericalBessel};

/// Below this time the kernel is evaluated at `t = 1` and rescaled.
pub const MIN_DIRECT_TIME: f64 = 1e-6;

/// How the upper limit of the `s`-integral is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum CutoffPolicy {
    /// Grow the cutoff until the exponential tail bound is `e^{-41}` below
    /// the envelope peak.
    Automatic,
    /// Fixed upper limit, in units of `1/t`.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadratureConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub lambda_cutoff_policy: CutoffPolicy,
    /// Panel budget of the adaptive `s`-integral.
    pub max_subdivisions: usize,
    /// Polynomial exactness of the rules on `S^{2n-1}` and `S^{m-1}`.
    pub sphere_rule_degree: usize,
    /// Radial panel width for convolutions, in units of `√t`.
    pub radial_panel_width: f64,
    pub radial_nodes_per_panel: usize,
    pub angle_panels: usize,
    pub angle_nodes_per_panel: usize,
    /// Spatial step of the heat-equation stencil.
    pub heat_step: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            lambda_cutoff_policy: CutoffPolicy::Automatic,
            max_subdivisions: 4000,
            sphere_rule_degree: 8,
            radial_panel_width: 1.5,
            radial_nodes_per_panel: 16,
            angle_panels: 4,
            angle_nodes_per_panel: 12,
            heat_step: 1e-2,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rel_tol > 0.0
            && self.abs_tol > 0.0
            && self.max_subdivisions >= 16
            && self.radial_panel_width > 0.0
            && self.radial_nodes_per_panel > 0
            && self.angle_panels > 0
            && self.angle_nodes_per_panel > 0
            && self.heat_step > 0.0
            && match self.lambda_cutoff_policy {
                CutoffPolicy::Automatic => true,
                CutoffPolicy::Fixed(s) => s > 0.0 && s.is_finite(),
            };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid quadrature configuration {self:?}")))
        }
    }
}

/// `p`, `a`, `b` at one radial point with the quadrature error estimate of
/// each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadialKernel {
    pub p: f64,
    pub a: f64,
    pub b: f64,
    pub error: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelGradients {
    pub value: f64,
    /// Left-invariant gradient `∇p_t`.
    pub grad: Vec<f64>,
    /// Euclidean `z`-gradient.
    pub grad_z: Vec<f64>,
    /// Right-invariant gradient `∇̂p_t`.
    pub grad_hat: Vec<f64>,
    /// Estimated absolute error of `value`.
    pub error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// One node of a convolution grid, in radial coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridNode {
    /// `d(0, k) = |u||η|`.
    pub d: f64,
    /// `|u|`.
    pub r: f64,
    /// `|η|`.
    pub rho: f64,
    /// Quadrature weight including the Haar density and both sphere areas.
    pub weight: f64,
    pub kernel: RadialKernel,
}

/// A point `k` of a convolution grid together with the kernel data there.
#[derive(Debug, Clone)]
pub struct GridSample<'a> {
    pub k: Point,
    pub node: &'a GridNode,
}

impl GridSample<'_> {
    pub fn p(&self) -> f64 {
        self.node.kernel.p
    }
}

/// Radial nodes with cached kernel values for one `t` and cutoff.
#[derive(Debug, Clone)]
pub struct HeatGrid {
    pub t: f64,
    pub radius: f64,
    pub nodes: Vec<GridNode>,
}

#[derive(Debug, Clone)]
struct SphereProduct {
    /// `(weight, ω, σ, J_σ ω)`; weights sum to 1.
    points: Vec<(f64, Vec<f64>, Vec<f64>, Vec<f64>)>,
}

#[derive(Debug)]
pub struct KernelEvaluator {
    group: HTypeGroup,
    config: QuadratureConfig,
    bessel: SphericalBessel,
    bessel_next: SphericalBessel,
    constant: f64,
    spheres: OnceLock<SphereProduct>,
    grids: Mutex<HashMap<(u64, usize), Arc<HeatGrid>>>,
}

impl Clone for KernelEvaluator {
    fn clone(&self) -> Self {
        KernelEvaluator::new(self.group.clone(), self.config.clone()).expect("validated config")
    }
}

/// `y coth y`.
fn y_coth_y(y: f64) -> f64 {
    if y < 1e-4 {
        let y2 = y * y;
        1.0 + y2 / 3.0 - y2 * y2 / 45.0
    } else {
        y / y.tanh()
    }
}

/// `ln(y / sinh y)`.
fn ln_y_over_sinh(y: f64) -> f64 {
    if y < 1e-4 {
        let y2 = y * y;
        -y2 / 6.0 + y2 * y2 / 180.0
    } else if y < 20.0 {
        (y / y.sinh()).ln()
    } else {
        (2.0 * y).ln() - y - (-(-2.0 * y).exp()).ln_1p()
    }
}

impl KernelEvaluator {
    pub fn new(group: HTypeGroup, config: QuadratureConfig) -> Result<Self> {
        config.validate()?;
        let (n, m) = (group.n(), group.m());
        let constant = (2.0 * PI).powi(-(m as i32)) * (4.0 * PI).powi(-(n as i32)) * sphere_area(m);
        Ok(KernelEvaluator {
            bessel: SphericalBessel::new(m),
            bessel_next: SphericalBessel::new(m + 2),
            constant,
            group,
            config,
            spheres: OnceLock::new(),
            grids: Mutex::new(HashMap::new()),
        })
    }

    pub fn with_defaults(group: HTypeGroup) -> Self {
        KernelEvaluator::new(group, QuadratureConfig::default()).expect("default config is valid")
    }

    pub fn group(&self) -> &HTypeGroup {
        &self.group
    }

    pub fn config(&self) -> &QuadratureConfig {
        &self.config
    }

    fn q(&self) -> i32 {
        self.group.homogeneous_dimension() as i32
    }

    fn check_time(t: f64) -> Result<()> {
        if t > 0.0 && t.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("time t = {t} must be positive and finite")))
        }
    }

    /// `p_t(r, ζ)` with `r = |x|`, `ζ = |z|`.
    pub fn kernel_radial(&self, t: f64, r: f64, zeta: f64) -> Result<f64> {
        Ok(self.radial(t, r, zeta)?.p)
    }

    /// `p_t`, `a`, `b` at `(r, ζ)`, see the module docs.
    pub fn radial(&self, t: f64, r: f64, zeta: f64) -> Result<RadialKernel> {
        self.radial_with_tol(t, r, zeta, self.config.abs_tol)
    }

    pub(crate) fn radial_with_tol(&self, t: f64, r: f64, zeta: f64, abs_tol: f64) -> Result<RadialKernel> {
        Self::check_time(t)?;
        if !(r >= 0.0 && zeta >= 0.0 && r.is_finite() && zeta.is_finite()) {
            return Err(Error::InvalidArgument(format!("radial arguments ({r}, {zeta}) must be finite and >= 0")));
        }
        if t < MIN_DIRECT_TIME {
            // p_t(r, ζ) = t^{-Q/2} p_1(r/√t, ζ/t)
            let st = t.sqrt();
            let one = self.radial_with_tol(1.0, r / st, zeta / t, abs_tol * t.powf(self.q() as f64 / 2.0))?;
            let sp = t.powf(-(self.q() as f64) / 2.0);
            return Ok(RadialKernel {
                p: sp * one.p,
                a: sp / t * one.a,
                b: sp / (t * t) * one.b,
                error: [sp * one.error[0], sp / t * one.error[1], sp / (t * t) * one.error[2]],
            });
        }
        let n = self.group.n() as f64;
        let m = self.group.m();
        let mf = m as f64;
        let r2 = r * r;
        let ln_t = t.ln();
        let log_h = |s: f64| {
            let y = t * s;
            -0.25 * r2 / t * y_coth_y(y) + n * (ln_y_over_sinh(y) - ln_t)
        };
        let integrand = |s: f64| -> [f64; 3] {
            if s <= 0.0 {
                return [0.0; 3];
            }
            let y = t * s;
            let h = log_h(s).exp();
            let sm1 = s.powi(m as i32 - 1);
            let lam = self.bessel.eval(s * zeta);
            let base = h * sm1 * lam;
            [
                base,
                -0.5 * (y_coth_y(y) / t) * base,
                -(h * sm1 * s * s / mf) * self.bessel_next.eval(s * zeta),
            ]
        };
        let upper = match self.config.lambda_cutoff_policy {
            CutoffPolicy::Fixed(s) => s / t,
            CutoffPolicy::Automatic => {
                let kappa = n * t + 0.25 * r2;
                let log_env = |s: f64| {
                    log_h(s) + (mf - 1.0) * s.max(1e-300).ln() + (1.0 + s * s + y_coth_y(t * s) / t).ln()
                };
                let scan_to = 40.0 / kappa;
                let mut log_peak = f64::NEG_INFINITY;
                for j in 1..=200 {
                    log_peak = log_peak.max(log_env(scan_to * j as f64 / 200.0));
                }
                let log_thresh = log_peak - 41.0;
                let mut s = scan_to * 0.25;
                let mut guard = 0;
                while log_env(s) + (s + 1.0 / kappa).ln() > log_thresh && guard < 400 {
                    s *= 1.25;
                    guard += 1;
                }
                s
            }
        };
        let max_panels = self.config.max_subdivisions;
        let panels = ((upper * zeta / PI).ceil() as usize).clamp(8, max_panels / 2);
        let breaks: Vec<f64> = (0..=panels).map(|i| upper * i as f64 / panels as f64).collect();
        // Far in the tail the integrand itself is tiny, so the absolute
        // tolerance is capped by its size at s = 0 to keep relative accuracy.
        let tail_tol = 1e-3 * self.config.rel_tol * log_h(0.0).exp();
        let opts = AdaptiveOptions {
            rel_tol: self.config.rel_tol,
            abs_tol: (abs_tol / self.constant).min(tail_tol).max(f64::MIN_POSITIVE),
            max_panels,
        };
        let res = integrate_vec(integrand, &breaks, &opts)?;
        let c = self.constant;
        Ok(RadialKernel {
            p: c * res.value[0],
            a: c * res.value[1],
            b: c * res.value[2],
            error: [c * res.abs_error[0], c * res.abs_error[1], c * res.abs_error[2]],
        })
    }

    /// `p_t(g)`.
    pub fn kernel(&self, t: f64, g: &Point) -> Result<f64> {
        self.group.check_point(g)?;
        self.kernel_radial(t, g.x_norm(), g.z_norm())
    }

    /// `(∇p_t, ∇_z p_t, ∇̂p_t)` at `g`, from the differentiated integrands.
    pub fn kernel_gradients(&self, t: f64, g: &Point) -> Result<KernelGradients> {
        self.group.check_point(g)?;
        let rk = self.radial(t, g.x_norm(), g.z_norm())?;
        let (grad, grad_hat) = self.gradients_from_radial(&g.x, &g.z, rk.a, rk.b);
        Ok(KernelGradients {
            value: rk.p,
            grad,
            grad_z: g.z.iter().map(|v| rk.b * v).collect(),
            grad_hat,
            error: rk.error[0],
        })
    }

    /// `(∇p, ∇̂p) = (a x + ½ b J_z x, a x - ½ b J_z x)`.
    pub fn gradients_from_radial(&self, x: &[f64], z: &[f64], a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let jzx = self.group.apply_jz(z, x);
        let grad = x.iter().zip(&jzx).map(|(x, j)| a * x + 0.5 * b * j).collect();
        let hat = x.iter().zip(&jzx).map(|(x, j)| a * x - 0.5 * b * j).collect();
        (grad, hat)
    }

    /// `|α^Q p_{α²t}(φ_α g) / p_t(g) - 1|`.
    pub fn scaling_residual(&self, t: f64, alpha: f64, g: &Point) -> Result<f64> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha = {alpha} must be positive")));
        }
        let base = self.kernel(t, g)?;
        let scaled = self.kernel(alpha * alpha * t, &self.group.dilate(alpha, g))?;
        Ok((alpha.powi(self.q()) * scaled - base).abs() / base)
    }

    /// `|∂_t p_t(g) - L p_t(g)| / p_t(g)` with the configured stencil step.
    pub fn heat_equation_residual(&self, t: f64, g: &Point) -> Result<f64> {
        self.heat_equation_residual_with_step(t, g, self.config.heat_step)
    }

    /// As [`Self::heat_equation_residual`] with spatial step `h`.
    ///
    /// `X_i² p(g)` is the second derivative of `s ↦ p(g ⋆ (s e_i, 0))`;
    /// `∂_t` uses a central difference with step `10⁻³ t`.
    pub fn heat_equation_residual_with_step(&self, t: f64, g: &Point, h: f64) -> Result<f64> {
        self.group.check_point(g)?;
        let p0 = self.kernel(t, g)?;
        let tau = 1e-3 * t;
        let dt = (self.kernel(t + tau, g)? - self.kernel(t - tau, g)?) / (2.0 * tau);
        let dim = self.group.horizontal_dim();
        let mut lap = 0.0;
        for i in 0..dim {
            let mut e = vec![0.0; dim];
            e[i] = h;
            let fwd = self.group.mul(g, &Point::new(e.clone(), vec![0.0; self.group.m()]));
            e[i] = -h;
            let bwd = self.group.mul(g, &Point::new(e, vec![0.0; self.group.m()]));
            lap += (self.kernel(t, &fwd)? - 2.0 * p0 + self.kernel(t, &bwd)?) / (h * h);
        }
        Ok((dt - lap).abs() / p0)
    }

    fn spheres(&self) -> &SphereProduct {
        self.spheres.get_or_init(|| {
            let deg = self.config.sphere_rule_degree;
            let horiz = SphereRule::new(self.group.horizontal_dim(), deg);
            let center = SphereRule::new(self.group.m(), deg);
            let mut points = Vec::with_capacity(horiz.len() * center.len());
            for (sigma, ws) in center.iter() {
                for (omega, wo) in horiz.iter() {
                    let js = self.group.apply_jz(sigma, omega);
                    points.push((wo * ws, omega.to_vec(), sigma.to_vec(), js));
                }
            }
            SphereProduct { points }
        })
    }

    /// Radial cutoff (a multiple of the panel width) so that a field obeying
    /// `growth` contributes less than `abs_tol` beyond it, for convolution
    /// centred at distance `dg` from the identity.
    fn panels_for(&self, t: f64, growth: &crate::algebra::GrowthCertificate, dg: f64) -> usize {
        let st = t.sqrt();
        let width = self.config.radial_panel_width * st;
        let q = self.q() as f64;
        let target = (1e-2 * self.config.abs_tol).ln();
        let mut k = ((6.0 * st) / width).ceil() as usize;
        loop {
            let dmax = k as f64 * width;
            let log_tail = growth.m.max(1e-300).ln() + growth.a * (dg + dmax).powf(2.0 - growth.epsilon)
                - dmax * dmax / (4.0 * t)
                + (q + 2.0) * (1.0 + dmax / st).ln()
                - 0.5 * q * t.ln();
            if log_tail < target || k > 10_000 {
                return k;
            }
            k += 1;
        }
    }

    /// The cached convolution grid for `t` with `panels` radial panels.
    pub fn heat_grid(&self, t: f64, panels: usize) -> Result<Arc<HeatGrid>> {
        Self::check_time(t)?;
        let key = (t.to_bits(), panels);
        if let Some(g) = self.grids.lock().expect("grid cache poisoned").get(&key) {
            return Ok(Arc::clone(g));
        }
        let grid = Arc::new(self.build_grid(t, panels)?);
        self.grids
            .lock()
            .expect("grid cache poisoned")
            .insert(key, Arc::clone(&grid));
        Ok(grid)
    }

    fn build_grid(&self, t: f64, panels: usize) -> Result<HeatGrid> {
        let radius = panels as f64 * self.config.radial_panel_width * t.sqrt();
        let pairs = self.radial_pairs(radius, panels);
        // Kernel values only need to be accurate relative to themselves or at
        // the roundoff floor; an absolute floor would swamp the far nodes.
        let nodes: Result<Vec<GridNode>> = pairs
            .par_iter()
            .map(|&(d, r, rho, weight)| {
                let kernel = self.radial_with_tol(t, radial_x_norm(r, rho), radial_z_norm(r, rho), f64::MIN_POSITIVE)?;
                Ok(GridNode {
                    d,
                    r,
                    rho,
                    weight,
                    kernel,
                })
            })
            .collect();
        Ok(HeatGrid {
            t,
            radius,
            nodes: nodes?,
        })
    }

    /// `Σ_nodes weight · mean_{spheres} F(k)`, i.e. `∫_G F(k) dm(k)` where `F`
    /// may use the kernel data carried by the sample.
    pub fn integrate_grid<const K: usize, F>(&self, grid: &HeatGrid, f: F) -> Result<[f64; K]>
    where
        F: Fn(&GridSample) -> Result<[f64; K]> + Sync,
    {
        let v = self.integrate_grid_dyn(grid, K, |s, out| {
            out.copy_from_slice(&f(s)?);
            Ok(())
        })?;
        let mut total = [0.0; K];
        total.copy_from_slice(&v);
        Ok(total)
    }

    /// [`Self::integrate_grid`] for a vector integrand whose length is only
    /// known at run time. `f` writes into a zeroed buffer of length `len`.
    pub fn integrate_grid_dyn<F>(&self, grid: &HeatGrid, len: usize, f: F) -> Result<Vec<f64>>
    where
        F: Fn(&GridSample, &mut [f64]) -> Result<()> + Sync,
    {
        let spheres = self.spheres();
        let partial: Result<Vec<Vec<f64>>> = grid
            .nodes
            .par_iter()
            .map(|node| {
                let s = half_sin_sq2(node.rho);
                let sin = node.rho.sin();
                let zf = radial_z_norm(node.r, node.rho);
                let mut acc = vec![0.0; len];
                let mut buf = vec![0.0; len];
                for (w, omega, sigma, js) in &spheres.points {
                    let x = omega
                        .iter()
                        .zip(js)
                        .map(|(o, j)| node.r * (s * o - sin * j))
                        .collect();
                    let z = sigma.iter().map(|v| zf * v).collect();
                    let sample = GridSample {
                        k: Point::new(x, z),
                        node,
                    };
                    buf.iter_mut().for_each(|b| *b = 0.0);
                    f(&sample, &mut buf)?;
                    for (a, b) in acc.iter_mut().zip(&buf) {
                        *a += w * b;
                    }
                }
                for a in acc.iter_mut() {
                    *a *= node.weight;
                }
                Ok(acc)
            })
            .collect();
        let mut total = vec![0.0; len];
        for v in partial? {
            for (t, x) in total.iter_mut().zip(&v) {
                *t += x;
            }
        }
        Ok(total)
    }

    /// Nodes covering the ball `d(0, k) < radius` with no kernel data
    /// (`kernel` is zero and `t` is 0). Used for plain Haar integrals.
    pub fn geometry_grid(&self, radius: f64, panels: usize) -> Result<HeatGrid> {
        if !(radius > 0.0 && radius.is_finite()) || panels == 0 {
            return Err(Error::InvalidArgument(format!("bad ball radius {radius} or panel count {panels}")));
        }
        let nodes = self
            .radial_pairs(radius, panels)
            .into_iter()
            .map(|(d, r, rho, weight)| GridNode {
                d,
                r,
                rho,
                weight,
                kernel: RadialKernel {
                    p: 0.0,
                    a: 0.0,
                    b: 0.0,
                    error: [0.0; 3],
                },
            })
            .collect();
        Ok(HeatGrid { t: 0.0, radius, nodes })
    }

    /// `(d, r, ρ, weight)` for the tensor Gauss–Legendre rule on
    /// `[0, radius] × [0, 2π]`.
    fn radial_pairs(&self, radius: f64, panels: usize) -> Vec<(f64, f64, f64, f64)> {
        let (n, m) = (self.group.n(), self.group.m());
        let (ds, dw) = composite_gauss_legendre(0.0, radius, panels, self.config.radial_nodes_per_panel);
        let (rhos, rw) = composite_gauss_legendre(
            0.0,
            2.0 * PI,
            self.config.angle_panels,
            self.config.angle_nodes_per_panel,
        );
        let areas = sphere_area(2 * n) * sphere_area(m);
        let mut out = Vec::with_capacity(ds.len() * rhos.len());
        for (d, wd) in ds.iter().zip(&dw) {
            for (rho, wr) in rhos.iter().zip(&rw) {
                let r = d / rho;
                let jac = jacobian_radial(n, m, r, *rho);
                let weight = wd * wr * jac * r.powi(2 * n as i32 - 1) * rho.powi(m as i32 - 2) * areas;
                out.push((*d, r, *rho, weight));
            }
        }
        out
    }

    /// Grid for convolving any field with certificate `growth` around a point
    /// at distance `dg` from the identity.
    pub fn grid_for_growth(&self, growth: &crate::algebra::GrowthCertificate, t: f64, dg: f64) -> Result<Arc<HeatGrid>> {
        self.heat_grid(t, self.panels_for(t, growth, dg))
    }

    /// `∫_G p_t dm`.
    pub fn mass(&self, t: f64) -> Result<f64> {
        let growth = crate::algebra::GrowthCertificate::bounded(1.0);
        let grid = self.heat_grid(t, self.panels_for(t, &growth, 0.0))?;
        Ok(grid.nodes.iter().map(|n| n.weight * n.kernel.p).sum())
    }

    /// Grid for convolving a field with the given certificate around `g`.
    pub fn grid_for(&self, f: &ScalarField, t: f64, g: &Point) -> Result<Arc<HeatGrid>> {
        let growth = f.growth().ok_or(Error::MissingGrowthCertificate)?;
        let dg = crate::geometry::cc_distance_from_identity(g);
        self.heat_grid(t, self.panels_for(t, growth, dg))
    }

    /// `P_t f(g) = ∫ f(g ⋆ k) p_t(k) dm(k)`.
    pub fn convolve(&self, f: &ScalarField, t: f64, g: &Point) -> Result<f64> {
        self.group.check_point(g)?;
        let grid = self.grid_for(f, t, g)?;
        self.convolve_on(&grid, f, g)
    }

    /// [`Self::convolve`] with an explicit radial cutoff in place of a
    /// growth certificate.
    pub fn convolve_within(&self, f: &ScalarField, t: f64, g: &Point, radius: f64) -> Result<f64> {
        self.group.check_point(g)?;
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!("radius {radius} must be positive")));
        }
        let width = self.config.radial_panel_width * t.sqrt();
        let grid = self.heat_grid(t, (radius / width).ceil().max(1.0) as usize)?;
        self.convolve_on(&grid, f, g)
    }

    /// Convolution on a prepared grid.
    pub fn convolve_on(&self, grid: &HeatGrid, f: &ScalarField, g: &Point) -> Result<f64> {
        let [v] = self.integrate_grid(grid, |s| {
            let y = self.group.mul(g, &s.k);
            Ok([f.eval(&y)? * s.p()])
        })?;
        Ok(v)
    }

    /// Importance-sampling estimate of `P_t f(g)`: `x ~ N(0, 4t I)` and
    /// independent Laplace(`t`) central coordinates, both heavier-tailed than
    /// the kernel.
    pub fn convolve_monte_carlo(
        &self,
        f: &ScalarField,
        t: f64,
        g: &Point,
        samples: usize,
        seed: u64,
    ) -> Result<MonteCarloEstimate> {
        Self::check_time(t)?;
        self.group.check_point(g)?;
        if samples < 2 {
            return Err(Error::InvalidArgument("need at least two samples".into()));
        }
        let dim = self.group.horizontal_dim();
        let m = self.group.m();
        let sigma = (4.0 * t).sqrt();
        let draws: Vec<(Vec<f64>, Vec<f64>)> = {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..samples)
                .map(|_| {
                    let x = (0..dim).map(|_| sigma * standard_normal(&mut rng)).collect();
                    let z = (0..m)
                        .map(|_| {
                            let u: f64 = rng.gen_range(-0.5..0.5);
                            -t * u.signum() * (1.0 - 2.0 * u.abs()).ln()
                        })
                        .collect();
                    (x, z)
                })
                .collect()
        };
        let log_norm_x = -(dim as f64) * (sigma * (2.0 * PI).sqrt()).ln();
        let log_norm_z = -(m as f64) * (2.0 * t).ln();
        let values: Result<Vec<f64>> = draws
            .par_iter()
            .map(|(x, z)| {
                let k = Point::new(x.clone(), z.clone());
                let x2: f64 = x.iter().map(|v| v * v).sum();
                let z1: f64 = z.iter().map(|v| v.abs()).sum();
                let log_q = log_norm_x - x2 / (2.0 * sigma * sigma) + log_norm_z - z1 / t;
                let p = self.kernel(t, &k)?;
                Ok(f.eval(&self.group.mul(g, &k))? * p / log_q.exp())
            })
            .collect();
        let values = values?;
        let mean = values.iter().sum::<f64>() / samples as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (samples as f64 - 1.0);
        Ok(MonteCarloEstimate {
            value: mean,
            std_error: (var / samples as f64).sqrt(),
            samples,
        })
    }
}

/// `1 - cos ρ = 2 sin²(ρ/2)`.
fn half_sin_sq2(rho: f64) -> f64 {
    let s = crate::geometry::half_sin(rho);
    2.0 * s * s
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box–Muller; one draw per call keeps the stream layout simple.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::GrowthCertificate;
    use crate::polynomial::{PolyCalculus, Polynomial};
    use num_rational::BigRational;
    use num_traits::ToPrimitive;

    fn h1() -> KernelEvaluator {
        KernelEvaluator::with_defaults(HTypeGroup::heisenberg(1).unwrap())
    }

    #[test]
    fn origin_value_heisenberg() {
        let e = h1();
        let p = e.kernel_radial(1.0, 0.0, 0.0).unwrap();
        assert!((p - 1.0 / 16.0).abs() < 1e-12, "{p}");
    }

    #[test]
    fn radial_symmetry_and_inverse() {
        let e = h1();
        let g = Point::new(vec![0.3, -1.1], vec![0.7]);
        let a = e.kernel(1.0, &g).unwrap();
        let b = e.kernel(1.0, &e.group().inv(&g)).unwrap();
        let c = e.kernel(1.0, &Point::new(vec![1.1, 0.3], vec![-0.7])).unwrap();
        assert!((a - b).abs() < 1e-15 && (a - c).abs() < 1e-14);
        assert!(a > 0.0);
    }

    #[test]
    fn scaling_law() {
        let e = h1();
        let g = Point::new(vec![1.0, 0.0], vec![0.2]);
        assert!(e.scaling_residual(1.0, 2.0, &g).unwrap() <= 1e-8);
        assert!(e.scaling_residual(1.0, 1.0, &g).unwrap() == 0.0);
        let q = KernelEvaluator::with_defaults(HTypeGroup::quaternionic(1).unwrap());
        let g = Point::new(vec![0.4, 0.1, -0.3, 0.2], vec![0.1, 0.5, -0.2]);
        assert!(q.scaling_residual(0.7, 1.6, &g).unwrap() <= 1e-8);
        // The small-time route goes through the same law.
        let tiny = e.kernel_radial(1e-8, 1e-4, 1e-8).unwrap();
        let direct = 1e16 * e.kernel_radial(1.0, 1.0, 1.0).unwrap();
        assert!((tiny / direct - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for e in [h1(), KernelEvaluator::with_defaults(HTypeGroup::quaternionic(1).unwrap())] {
            let g = e.group().clone();
            let pts = if g.m() == 1 {
                vec![Point::new(vec![0.8, -0.4], vec![0.6]), Point::new(vec![2.0, 1.0], vec![-3.0])]
            } else {
                vec![Point::new(vec![0.5, 0.2, -0.7, 0.1], vec![0.3, -0.4, 0.9])]
            };
            for p in pts {
                let kg = e.kernel_gradients(1.0, &p).unwrap();
                let f = |q: &Point| e.kernel(1.0, q).unwrap();
                let mut coords = p.coords();
                let h = 1e-4;
                let mut fd = Vec::new();
                for i in 0..coords.len() {
                    let c = coords[i];
                    coords[i] = c + h;
                    let a = f(&Point::from_coords(&coords, g.n()));
                    coords[i] = c - h;
                    let b = f(&Point::from_coords(&coords, g.n()));
                    coords[i] = c;
                    fd.push((a - b) / (2.0 * h));
                }
                let fz = fd.split_off(g.horizontal_dim());
                let grad_x: Vec<f64> = fd;
                let (grad, hat) = g.combine_gradients(
                    &p.x,
                    &crate::algebra::EuclideanGradient {
                        x: grad_x,
                        z: fz.clone(),
                    },
                );
                let scale = kg.grad.iter().chain(&kg.grad_z).map(|v| v.abs()).fold(0.0, f64::max);
                for (a, b) in kg.grad.iter().zip(&grad).chain(kg.grad_hat.iter().zip(&hat)).chain(kg.grad_z.iter().zip(&fz)) {
                    assert!((a - b).abs() <= 1e-6 * scale, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn gradient_vanishes_at_origin_and_hat_agrees_on_axis() {
        let e = h1();
        let kg = e.kernel_gradients(1.0, &Point::new(vec![0.0, 0.0], vec![0.0])).unwrap();
        assert!(kg.grad.iter().chain(&kg.grad_z).all(|v| *v == 0.0));
        let kg = e.kernel_gradients(1.0, &Point::new(vec![0.0, 0.0], vec![0.8])).unwrap();
        assert_eq!(kg.grad, kg.grad_hat);
    }

    #[test]
    fn heat_equation() {
        let e = h1();
        let g = Point::new(vec![1.0, 0.0], vec![0.3]);
        let r1 = e.heat_equation_residual(1.0, &g).unwrap();
        assert!(r1 <= 1e-3, "{r1}");
        assert!(e.heat_equation_residual(1.0, &e.group().identity()).unwrap() <= 1e-3);
        let coarse = e.heat_equation_residual_with_step(1.0, &g, 0.2).unwrap();
        let fine = e.heat_equation_residual_with_step(1.0, &g, 0.1).unwrap();
        let ratio = coarse / fine;
        assert!((3.0..5.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn total_mass_heisenberg() {
        let e = h1();
        let m = e.mass(1.0).unwrap();
        assert!((m - 1.0).abs() < 1e-6, "{m}");
        let m = e.mass(0.3).unwrap();
        assert!((m - 1.0).abs() < 1e-6, "{m}");
    }

    #[test]
    fn convolution_matches_polynomial_semigroup() {
        let e = h1();
        let calc = PolyCalculus::new(e.group()).unwrap();
        for src in ["x1 + x2 z1", "x1^2 z1 + 3 * z1^2 + -1 * x2^4", "2 * x1 x2 + z1"] {
            let f = Polynomial::parse(1, 1, src).unwrap();
            for t in [BigRational::new(1.into(), 3.into()), BigRational::from_integer(1.into())] {
                let tf = t.to_f64().unwrap();
                let exact = calc.heat_semigroup(&f, &t).unwrap();
                let g = Point::new(vec![0.3, -0.2], vec![0.5]);
                let want = exact.eval_f64(&g.coords());
                let got = e.convolve(&calc.field(&f), tf, &g).unwrap();
                assert!((got - want).abs() <= 1e-6 * want.abs().max(1.0), "{src} t={tf}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn convolution_needs_certificate() {
        let e = h1();
        let f = ScalarField::new(|_| 1.0);
        assert!(matches!(
            e.convolve(&f, 1.0, &e.group().identity()),
            Err(Error::MissingGrowthCertificate)
        ));
        let v = e.convolve_within(&f, 1.0, &e.group().identity(), 15.0).unwrap();
        assert!((v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn semigroup_property_spot_check() {
        // The shifted kernel is not polynomial on the spheres; use a richer rule.
        let config = QuadratureConfig {
            sphere_rule_degree: 14,
            radial_nodes_per_panel: 6,
            angle_nodes_per_panel: 6,
            ..QuadratureConfig::default()
        };
        let e = KernelEvaluator::new(HTypeGroup::heisenberg(1).unwrap(), config).unwrap();
        let s = 0.5;
        for g0 in [
            Point::new(vec![0.0, 0.0], vec![0.0]),
            Point::new(vec![0.7, 0.2], vec![0.4]),
            Point::new(vec![-1.0, 0.5], vec![-1.2]),
        ] {
            let ev = e.clone();
            let g0c = g0.clone();
            let f = ScalarField::new(move |k| {
                let y = ev.group().mul(&g0c, k);
                ev.kernel(s, &y).unwrap_or(f64::NAN)
            })
            .with_growth(GrowthCertificate::bounded(1.0));
            let got = e.convolve(&f, 1.0, &e.group().identity()).unwrap();
            let want = e.kernel(1.0 + s, &g0).unwrap();
            assert!((got / want - 1.0).abs() < 1e-5, "{got} vs {want}");
        }
    }

    #[test]
    fn monte_carlo_agrees_roughly() {
        let e = h1();
        let calc = PolyCalculus::new(e.group()).unwrap();
        let f = Polynomial::parse(1, 1, "x1^2 + z1 + 1").unwrap();
        let mc = e
            .convolve_monte_carlo(&calc.field(&f), 1.0, &e.group().identity(), 20_000, 1)
            .unwrap();
        let exact = calc
            .heat_semigroup(&f, &BigRational::from_integer(1.into()))
            .unwrap()
            .at_identity()
            .to_f64()
            .unwrap();
        assert!((mc.value - exact).abs() < 5.0 * mc.std_error + 1e-3, "{mc:?} vs {exact}");
        let again = e
            .convolve_monte_carlo(&calc.field(&f), 1.0, &e.group().identity(), 20_000, 1)
            .unwrap();
        assert_eq!(mc, again);
    }
}
