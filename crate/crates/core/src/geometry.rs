//! Carnot–Carathéodory geometry through geodesic coordinates.
//!
//! `Φ(u, η) = ((I - e^{J_η}) u, (|u|²/2)(1 - sin|η|/|η|) η)` with
//! `e^{J_η} = cos|η| I + (sin|η|/|η|) J_η`. The path `s ↦ Φ(u, sη)` is a
//! horizontal geodesic from the identity of speed `|u||η|`, so
//! `d(0, Φ(u, η)) = |u||η|` for `0 < |η| < 2π`.
//!
//! Everything radial is expressed through `θ = |η|` and `r = |u|`:
//! `|x| = 2r sin(θ/2)`, `|z| = (r²/2)(θ - sin θ)`.

use std::f64::consts::{PI, TAU};

use serde::Serialize;

use crate::algebra::{norm, HTypeGroup, Point};
use crate::error::{Error, Result};

/// Cap used by [`phi_inverse`] to keep `|η|` away from `2π`.
pub const ETA_CAP: f64 = 1e-9;

/// Geodesic coordinates `(u, η)` with `|u| > 0` and `0 < |η| < 2π`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeodesicCoords {
    pub u: Vec<f64>,
    pub eta: Vec<f64>,
}

impl GeodesicCoords {
    pub fn new(u: Vec<f64>, eta: Vec<f64>) -> Result<Self> {
        let c = GeodesicCoords { u, eta };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        let r = self.u_norm();
        let th = self.eta_norm();
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::DomainViolation(format!("|u| = {r} must be positive")));
        }
        if !(th > 0.0 && th < TAU) {
            return Err(Error::DomainViolation(format!("|eta| = {th} must lie in (0, 2pi)")));
        }
        Ok(())
    }

    pub fn u_norm(&self) -> f64 {
        norm(&self.u)
    }

    pub fn eta_norm(&self) -> f64 {
        norm(&self.eta)
    }

    /// `|u||η|`, the distance of `Φ(u, η)` from the identity.
    pub fn length(&self) -> f64 {
        self.u_norm() * self.eta_norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum RegionLabel {
    R1,
    R2,
    R3,
}

impl RegionLabel {
    pub const ALL: [RegionLabel; 3] = [RegionLabel::R1, RegionLabel::R2, RegionLabel::R3];
}

impl std::fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RegionLabel::R1 => "R1",
            RegionLabel::R2 => "R2",
            RegionLabel::R3 => "R3",
        };
        f.write_str(s)
    }
}

/// `sin(θ/2)` for `θ ∈ [0, 2π]`, exact in the reflected variable near `2π`.
pub(crate) fn half_sin(theta: f64) -> f64 {
    if theta > PI {
        (0.5 * (TAU - theta)).sin()
    } else {
        (0.5 * theta).sin()
    }
}

/// `θ - sin θ` without cancellation at small θ.
pub fn theta_minus_sin(theta: f64) -> f64 {
    if theta.abs() < 0.5 {
        let t2 = theta * theta;
        let mut term = theta * t2 / 6.0;
        let mut sum = term;
        let mut k = 1.0;
        loop {
            term *= -t2 / ((2.0 * k + 2.0) * (2.0 * k + 3.0));
            sum += term;
            if term.abs() <= 1e-18 * sum.abs() {
                return sum;
            }
            k += 1.0;
        }
    } else {
        theta - theta.sin()
    }
}

/// `sin h - h cos h`, small-`h` safe.
fn sin_minus_h_cos(h: f64) -> f64 {
    if h.abs() < 0.5 {
        let h2 = h * h;
        // Σ_{k>=1} (-1)^{k+1} 2k h^{2k+1}/(2k+1)!
        let mut pow_fact = h * h2 / 6.0;
        let mut sum = 2.0 * pow_fact;
        let mut k = 1.0;
        loop {
            pow_fact *= -h2 / ((2.0 * k + 2.0) * (2.0 * k + 3.0));
            let term = 2.0 * (k + 1.0) * pow_fact;
            sum += term;
            if term.abs() <= 1e-18 * sum.abs() {
                return sum;
            }
            k += 1.0;
        }
    } else {
        h.sin() - h * h.cos()
    }
}

/// `μ(θ) = (θ - sin θ)/(2 - 2cos θ)`, increasing from 0 to ∞ on `(0, 2π)`.
pub fn mu(theta: f64) -> f64 {
    let s = half_sin(theta);
    theta_minus_sin(theta) / (4.0 * s * s)
}

/// `μ` written in `δ = 2π - θ`.
fn mu_reflected(delta: f64) -> f64 {
    let s = (0.5 * delta).sin();
    (TAU - delta + delta.sin()) / (4.0 * s * s)
}

/// Solve `μ(θ) = target` for `θ ∈ (0, 2π)`. Returns `(θ, 2π - θ)`, the second
/// entry accurate to full relative precision when θ is close to `2π`.
pub fn solve_theta(target: f64) -> (f64, f64) {
    debug_assert!(target > 0.0);
    if target <= PI / 4.0 {
        // μ(θ) >= θ/6 on (0, π], so θ <= 6 target.
        let mut lo = 0.0;
        let mut hi = (6.0 * target).min(PI);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mu(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * hi {
                break;
            }
        }
        let mut th = 0.5 * (lo + hi);
        for _ in 0..2 {
            let d = mu_prime(th);
            if d > 0.0 {
                let next = th - (mu(th) - target) / d;
                if next > lo - (hi - lo) && next < hi + (hi - lo) {
                    th = next;
                }
            }
        }
        (th, TAU - th)
    } else {
        let mut lo = 0.0;
        let mut hi = PI;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            // μ decreases in δ.
            if mu_reflected(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * hi {
                break;
            }
        }
        let mut delta = 0.5 * (lo + hi);
        for _ in 0..2 {
            let d = mu_prime(TAU - delta);
            if d > 0.0 {
                let next = delta + (mu_reflected(delta) - target) / d;
                if next > lo - (hi - lo) && next < hi + (hi - lo) {
                    delta = next;
                }
            }
        }
        (TAU - delta, delta)
    }
}

fn mu_prime(theta: f64) -> f64 {
    let s = half_sin(theta);
    let d = 4.0 * s * s;
    0.5 - 2.0 * theta_minus_sin(theta) * theta.sin() / (d * d)
}

/// `|x|` of `Φ(u, η)` from `r = |u|`, `θ = |η|`.
pub fn radial_x_norm(r: f64, theta: f64) -> f64 {
    2.0 * r * half_sin(theta)
}

/// `|z|` of `Φ(u, η)` from `r = |u|`, `θ = |η|`.
pub fn radial_z_norm(r: f64, theta: f64) -> f64 {
    0.5 * r * r * theta_minus_sin(theta)
}

/// `d(0, (x, z))` from `|x|` and `|z|` alone.
pub fn distance_from_norms(x_norm: f64, z_norm: f64) -> f64 {
    if z_norm == 0.0 {
        return x_norm;
    }
    if x_norm == 0.0 {
        return 2.0 * (PI * z_norm).sqrt();
    }
    let target = 2.0 * z_norm / (x_norm * x_norm);
    if !target.is_finite() {
        return 2.0 * (PI * z_norm).sqrt();
    }
    if target == 0.0 {
        return x_norm;
    }
    let (theta, _) = solve_theta(target);
    if theta <= PI {
        x_norm * theta / (2.0 * half_sin(theta))
    } else {
        theta * (2.0 * z_norm / theta_minus_sin(theta)).sqrt()
    }
}

fn check_dims(g: &HTypeGroup, u: &[f64], eta: &[f64]) -> Result<()> {
    if u.len() != g.horizontal_dim() || eta.len() != g.m() {
        return Err(Error::DimensionMismatch(format!(
            "coordinates ({}, {}) for group with 2n = {}, m = {}",
            u.len(),
            eta.len(),
            g.horizontal_dim(),
            g.m()
        )));
    }
    Ok(())
}

/// `Φ(u, η)`.
pub fn phi(g: &HTypeGroup, c: &GeodesicCoords) -> Result<Point> {
    check_dims(g, &c.u, &c.eta)?;
    c.validate()?;
    let r = c.u_norm();
    let theta = c.eta_norm();
    let s = half_sin(theta);
    let one_minus_cos = 2.0 * s * s;
    let sinc = theta.sin() / theta;
    let ju = g.apply_jz(&c.eta, &c.u);
    let x = c
        .u
        .iter()
        .zip(&ju)
        .map(|(u, j)| one_minus_cos * u - sinc * j)
        .collect();
    let zf = 0.5 * r * r * theta_minus_sin(theta) / theta;
    let z = c.eta.iter().map(|e| zf * e).collect();
    Ok(Point::new(x, z))
}

/// Inverse of [`phi`] on points with `x ≠ 0`, `z ≠ 0`.
pub fn phi_inverse(g: &HTypeGroup, p: &Point) -> Result<GeodesicCoords> {
    g.check_point(p)?;
    let xn = p.x_norm();
    let zn = p.z_norm();
    if xn == 0.0 || zn == 0.0 {
        return Err(Error::OutsideChart);
    }
    let target = 2.0 * zn / (xn * xn);
    if !(target.is_finite() && target > 0.0) {
        return Err(Error::OutsideChart);
    }
    let (mut theta, mut delta) = solve_theta(target);
    if delta < ETA_CAP {
        delta = ETA_CAP;
        theta = TAU - delta;
    }
    let e: Vec<f64> = p.z.iter().map(|v| v / zn).collect();
    // (I - e^{J_η})^{-1} = ½ (I + cot(θ/2) J_e)
    let half_angle = if theta > PI { PI - 0.5 * delta } else { 0.5 * theta };
    let cot = half_angle.cos() / half_sin(theta);
    let je_x = g.apply_jz(&e, &p.x);
    let u = p.x.iter().zip(&je_x).map(|(x, j)| 0.5 * (x + cot * j)).collect();
    let eta = e.iter().map(|v| theta * v).collect();
    Ok(GeodesicCoords { u, eta })
}

/// `d(0, g)`.
pub fn cc_distance_from_identity(p: &Point) -> f64 {
    distance_from_norms(p.x_norm(), p.z_norm())
}

/// `d(g, h) = d(0, g⁻¹ h)`.
pub fn cc_distance(g: &HTypeGroup, a: &Point, b: &Point) -> Result<f64> {
    g.check_point(a)?;
    g.check_point(b)?;
    Ok(cc_distance_from_identity(&g.mul(&g.inv(a), b)))
}

/// Jacobian of `Φ` at `|u| = r`, `|η| = ρ`, for dimensions `(n, m)`.
pub fn jacobian_radial(n: usize, m: usize, r: f64, rho: f64) -> f64 {
    let s = half_sin(rho);
    let h = if rho > PI { PI - 0.5 * (TAU - rho) } else { 0.5 * rho };
    let core = 4.0 * s * sin_minus_h_cos(h);
    let one_minus_sinc_half = theta_minus_sin(rho) / (2.0 * rho);
    r.powi(2 * m as i32)
        * one_minus_sinc_half.powi(m as i32 - 1)
        * (4.0 * s * s).powi(n as i32 - 1)
        * core
}

/// `A(r, ρ)`, the Haar density in geodesic coordinates.
pub fn jacobian_a(g: &HTypeGroup, r: f64, rho: f64) -> Result<f64> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::DomainViolation(format!("r = {r} must be >= 0")));
    }
    if !(rho > 0.0 && rho < TAU) {
        return Err(Error::DomainViolation(format!("rho = {rho} must lie in (0, 2pi)")));
    }
    Ok(jacobian_radial(g.n(), g.m(), r, rho))
}

/// Region of `(u, η)` outside the unit ball.
pub fn region_classify(c: &GeodesicCoords) -> Result<RegionLabel> {
    c.validate()?;
    region_of(c.u_norm(), c.eta_norm())
}

/// Region from `(|u|, |η|)`.
pub fn region_of(r: f64, theta: f64) -> Result<RegionLabel> {
    let len = r * theta;
    if len < 1.0 {
        return Err(Error::InsideBall(len));
    }
    Ok(if theta <= PI {
        RegionLabel::R1
    } else if theta <= TAU - 1.0 / (r * r) {
        RegionLabel::R2
    } else {
        RegionLabel::R3
    })
}

/// `d(0, g) <= 1`.
pub fn in_unit_ball(p: &Point) -> bool {
    cc_distance_from_identity(p) <= 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn h1() -> HTypeGroup {
        HTypeGroup::heisenberg(1).unwrap()
    }

    fn random_coords(g: &HTypeGroup, rng: &mut ChaCha8Rng) -> GeodesicCoords {
        loop {
            let u: Vec<f64> = (0..g.horizontal_dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let dir: Vec<f64> = (0..g.m()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dn = norm(&dir);
            if dn < 1e-3 || norm(&u) < 1e-3 {
                continue;
            }
            let th = rng.gen_range(0.05..TAU - 0.05);
            return GeodesicCoords::new(u, dir.iter().map(|v| th * v / dn).collect()).unwrap();
        }
    }

    #[test]
    fn phi_examples() {
        let g = h1();
        let c = GeodesicCoords::new(vec![1.0, 0.0], vec![PI]).unwrap();
        let p = phi(&g, &c).unwrap();
        assert!((p.x[0] - 2.0).abs() < 1e-15 && p.x[1].abs() < 1e-15);
        assert!((p.z[0] - PI / 2.0).abs() < 1e-15);

        let back = phi_inverse(&g, &Point::new(vec![2.0, 0.0], vec![PI / 2.0])).unwrap();
        assert!((back.eta[0] - PI).abs() < 1e-12);
        assert!((back.u[0] - 1.0).abs() < 1e-12 && back.u[1].abs() < 1e-12);

        assert!(matches!(
            phi_inverse(&g, &Point::new(vec![1.0, 0.0], vec![0.0])),
            Err(Error::OutsideChart)
        ));
        assert!(matches!(
            phi_inverse(&g, &Point::new(vec![0.0, 0.0], vec![1.0])),
            Err(Error::OutsideChart)
        ));
        assert!(GeodesicCoords::new(vec![1.0, 0.0], vec![TAU]).is_err());
        assert!(GeodesicCoords::new(vec![0.0, 0.0], vec![1.0]).is_err());
    }

    #[test]
    fn norm_identities_and_rotation_invariance() {
        let g = h1();
        let j = g.j_matrix(0).to_vec();
        let j = [[j[0], j[1]], [j[2], j[3]]];
        for &(r, th) in &[(0.3, 1e-3), (1.0, 0.7), (2.5, 3.0), (0.8, 6.0)] {
            let c = GeodesicCoords::new(vec![r, 0.0], vec![th]).unwrap();
            let p = phi(&g, &c).unwrap();
            let x2 = p.x_norm().powi(2);
            assert!((x2 - r * r * (2.0 - 2.0 * th.cos())).abs() <= 1e-12 * x2.max(1e-300) + 1e-15);
            assert!((p.z_norm() - 0.5 * r * r * (th - th.sin())).abs() < 1e-12);
            for s in [0.4f64, 1.9, -2.2] {
                // e^{sJ} u
                let u: Vec<f64> = (0..2)
                    .map(|i| s.cos() * c.u[i] + s.sin() * (j[i][0] * c.u[0] + j[i][1] * c.u[1]))
                    .collect();
                let q = phi(&g, &GeodesicCoords::new(u, vec![th]).unwrap()).unwrap();
                assert!((q.x_norm() - p.x_norm()).abs() < 1e-13);
                assert!((q.z_norm() - p.z_norm()).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn roundtrip_on_log_grid() {
        for g in [h1(), HTypeGroup::heisenberg(2).unwrap(), HTypeGroup::quaternionic(1).unwrap()] {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let dims = g.horizontal_dim();
            for i in 0..=24 {
                let r = 10f64.powf(-3.0 + 6.0 * i as f64 / 24.0);
                for k in 0..=30 {
                    let th = 1e-3 + (TAU - 2e-3) * k as f64 / 30.0;
                    let mut u: Vec<f64> = (0..dims).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let un = norm(&u);
                    u.iter_mut().for_each(|v| *v *= r / un);
                    let mut eta: Vec<f64> = (0..g.m()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let en = norm(&eta);
                    eta.iter_mut().for_each(|v| *v *= th / en);
                    let c = GeodesicCoords::new(u, eta).unwrap();
                    let back = phi_inverse(&g, &phi(&g, &c).unwrap()).unwrap();
                    let du: Vec<f64> = back.u.iter().zip(&c.u).map(|(a, b)| a - b).collect();
                    let de: Vec<f64> = back.eta.iter().zip(&c.eta).map(|(a, b)| a - b).collect();
                    assert!(norm(&du) <= 1e-10 * r, "r={r} th={th}: {}", norm(&du) / r);
                    assert!(norm(&de) <= 1e-10 * th, "r={r} th={th}");
                }
            }
        }
    }

    #[test]
    fn distance_matches_geodesic_length() {
        for g in [h1(), HTypeGroup::heisenberg(2).unwrap(), HTypeGroup::quaternionic(1).unwrap()] {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            for _ in 0..500 {
                let c = random_coords(&g, &mut rng);
                let d = cc_distance_from_identity(&phi(&g, &c).unwrap());
                assert!((d - c.length()).abs() <= 1e-10 * c.length());
            }
        }
        let g = h1();
        let p = Point::new(vec![2.0, 0.0], vec![PI / 2.0]);
        assert!((cc_distance_from_identity(&p) - PI).abs() < 1e-13);
        assert_eq!(cc_distance_from_identity(&Point::new(vec![3.0, 4.0], vec![0.0])), 5.0);
        let z = 0.7;
        let on_axis = cc_distance_from_identity(&Point::new(vec![0.0, 0.0], vec![z]));
        assert!((on_axis - 2.0 * (PI * z).sqrt()).abs() < 1e-14);
        // Continuity across both chart boundaries.
        let near_axis = cc_distance_from_identity(&Point::new(vec![1e-7, 0.0], vec![z]));
        assert!((near_axis - on_axis).abs() < 1e-6);
        let near_axis = cc_distance_from_identity(&Point::new(vec![1e-12, 0.0], vec![z]));
        assert!((near_axis - on_axis).abs() < 1e-8);
        let near_plane = cc_distance_from_identity(&Point::new(vec![1.3, 0.0], vec![1e-12]));
        assert!((near_plane - 1.3).abs() < 1e-8);
        assert!(in_unit_ball(&g.identity()));
        assert!(!in_unit_ball(&p));
        assert!(in_unit_ball(&Point::new(vec![1.0, 0.0], vec![0.0])));
    }

    #[test]
    fn distance_symmetry_triangle_and_dilation() {
        let g = HTypeGroup::quaternionic(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pt = |rng: &mut ChaCha8Rng| {
            Point::new(
                (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            )
        };
        for _ in 0..200 {
            let (a, b, c) = (pt(&mut rng), pt(&mut rng), pt(&mut rng));
            let ab = cc_distance(&g, &a, &b).unwrap();
            let ba = cc_distance(&g, &b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-10 * (1.0 + ab));
            let bc = cc_distance(&g, &b, &c).unwrap();
            let ac = cc_distance(&g, &a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-8);
            assert!(cc_distance(&g, &a, &a).unwrap().abs() < 1e-12);
            let alpha = rng.gen_range(0.1..5.0);
            let da = cc_distance_from_identity(&g.dilate(alpha, &a));
            let d = cc_distance_from_identity(&a);
            assert!((da - alpha * d).abs() < 1e-10 * da.max(1.0));
        }
    }

    #[test]
    fn distance_comparable_to_homogeneous_norm() {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..=60 {
            let xn = if i == 0 { 0.0 } else { 10f64.powf(-4.0 + 8.0 * i as f64 / 60.0) };
            for k in 0..=60 {
                let zn = if k == 0 { 0.0 } else { 10f64.powf(-8.0 + 16.0 * k as f64 / 60.0) };
                if xn == 0.0 && zn == 0.0 {
                    continue;
                }
                let ratio = distance_from_norms(xn, zn) / (xn + zn.sqrt());
                lo = lo.min(ratio);
                hi = hi.max(ratio);
            }
        }
        assert!(lo >= 0.5 && hi <= 2.0 * PI.sqrt() + 1e-9, "[{lo}, {hi}]");
    }

    #[test]
    fn geodesic_has_constant_speed_and_is_horizontal() {
        let g = HTypeGroup::quaternionic(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let c = random_coords(&g, &mut rng);
            let at = |s: f64| {
                phi(
                    &g,
                    &GeodesicCoords {
                        u: c.u.clone(),
                        eta: c.eta.iter().map(|e| s * e).collect(),
                    },
                )
                .unwrap()
            };
            let h = 1e-5;
            for k in 1..10 {
                let s = k as f64 / 10.0;
                let (a, b, p) = (at(s - h), at(s + h), at(s));
                let xdot: Vec<f64> = a.x.iter().zip(&b.x).map(|(a, b)| (b - a) / (2.0 * h)).collect();
                assert!((norm(&xdot) - c.length()).abs() < 1e-7 * c.length());
                let bracket = g.bracket_x(&p.x, &xdot);
                for j in 0..3 {
                    let zdot = (b.z[j] - a.z[j]) / (2.0 * h);
                    assert!((zdot - 0.5 * bracket[j]).abs() < 1e-7 * (1.0 + zdot.abs()));
                }
            }
        }
    }

    fn fd_jacobian_det(g: &HTypeGroup, c: &GeodesicCoords) -> f64 {
        let dim = g.horizontal_dim() + g.m();
        let mut coords: Vec<f64> = c.u.iter().chain(&c.eta).copied().collect();
        let mut jac = DMatrix::<f64>::zeros(dim, dim);
        let split = g.horizontal_dim();
        for k in 0..dim {
            let h = 1e-6 * coords[k].abs().max(1.0);
            let mut eval = |delta: f64| {
                let old = coords[k];
                coords[k] = old + delta;
                let p = phi(
                    g,
                    &GeodesicCoords {
                        u: coords[..split].to_vec(),
                        eta: coords[split..].to_vec(),
                    },
                )
                .unwrap();
                coords[k] = old;
                p.coords()
            };
            let (p2, p1, m1, m2) = (eval(2.0 * h), eval(h), eval(-h), eval(-2.0 * h));
            for i in 0..dim {
                jac[(i, k)] = (-p2[i] + 8.0 * p1[i] - 8.0 * m1[i] + m2[i]) / (12.0 * h);
            }
        }
        jac.determinant()
    }

    #[test]
    fn jacobian_matches_finite_difference_determinant() {
        for g in [h1(), HTypeGroup::heisenberg(2).unwrap(), HTypeGroup::quaternionic(1).unwrap()] {
            let mut rng = ChaCha8Rng::seed_from_u64(13);
            for _ in 0..100 {
                let c = random_coords(&g, &mut rng);
                let a = jacobian_a(&g, c.u_norm(), c.eta_norm()).unwrap();
                let det = fd_jacobian_det(&g, &c).abs();
                assert!(a > 0.0);
                assert!((det - a).abs() <= 1e-6 * a, "{det} vs {a}");
            }
        }
    }

    #[test]
    fn jacobian_examples_and_small_angle_branch() {
        let g = h1();
        assert!((jacobian_a(&g, 1.0, PI).unwrap() - 4.0).abs() < 1e-14);
        for &(r, rho) in &[(0.5, 0.1), (2.0, 1.3), (1.0, 4.0), (3.0, 6.2)] {
            let want = r * r * (2.0 - 2.0 * f64::cos(rho) - rho * f64::sin(rho));
            assert!((jacobian_a(&g, r, rho).unwrap() - want).abs() < 1e-12 * want.max(1.0));
        }
        // Across the series switch both branches agree.
        for h in [0.4999999, 0.5000001] {
            let series_or_not = sin_minus_h_cos(h);
            assert!((series_or_not - (h.sin() - h * h.cos())).abs() < 1e-15);
        }
        for t in [0.4999999, 0.5000001, 1e-6] {
            assert!((theta_minus_sin(t) - (t - t.sin())).abs() <= 1e-15 * t.max(1e-10));
        }
        assert!(jacobian_a(&g, 1.0, 0.0).is_err());
        assert!(jacobian_a(&g, 1.0, TAU).is_err());
        assert!(jacobian_a(&g, -1.0, 1.0).is_err());
    }

    #[test]
    fn jacobian_asymptotic_ratio_bounded() {
        for (n, m) in [(1usize, 1usize), (2, 1), (1, 3), (2, 3)] {
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for k in 1..2000 {
                let rho = TAU * k as f64 / 2000.0;
                let ratio = jacobian_radial(n, m, 1.0, rho)
                    / (rho.powi(2 * (m + n) as i32) * (TAU - rho).powi(2 * n as i32 - 1));
                lo = lo.min(ratio);
                hi = hi.max(ratio);
            }
            assert!(lo > 0.0 && hi.is_finite() && hi / lo < 1e6, "({n},{m}): [{lo}, {hi}]");
        }
    }

    #[test]
    fn regions() {
        let c = |r: f64, th: f64| GeodesicCoords::new(vec![r, 0.0], vec![th]).unwrap();
        assert_eq!(region_classify(&c(4.0, PI / 2.0)).unwrap(), RegionLabel::R1);
        assert_eq!(region_classify(&c(10.0, 1.5 * PI)).unwrap(), RegionLabel::R2);
        assert_eq!(region_classify(&c(0.9, 6.2)).unwrap(), RegionLabel::R3);
        assert!(matches!(region_classify(&c(0.1, 1.0)), Err(Error::InsideBall(_))));
    }

    #[test]
    fn theta_solver_accuracy() {
        for k in 1..400 {
            let th = TAU * k as f64 / 400.0;
            let (got, delta) = solve_theta(mu(th));
            assert!((got - th).abs() < 1e-13 * th.max(1.0), "{th}: {got}");
            assert!((delta - (TAU - th)).abs() < 1e-13);
        }
        for &d in &[1e-3, 1e-5, 1e-7] {
            let (_, delta) = solve_theta(mu_reflected(d));
            assert!((delta - d).abs() < 1e-12 * d);
        }
        for &t in &[1e-8, 1e-5, 1e-3] {
            let (got, _) = solve_theta(mu(t));
            assert!((got - t).abs() < 1e-13 * t);
        }
    }
}
