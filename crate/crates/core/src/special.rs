//! Special functions needed by the radial heat-kernel integrals.
//!
//! The angular part of a Fourier integral over `R^m` is the normalised Bessel
//! function
//!
//! ```text
//! Λ_ν(y) = Γ(ν+1) (2/y)^ν J_ν(y) = mean over ω ∈ S^{m-1} of cos(y ω_1),   ν = m/2 - 1,
//! ```
//!
//! an entire function with `Λ_ν(0) = 1`, `|Λ_ν| <= 1` and
//! `Λ_ν'(y) = -y/(2(ν+1)) Λ_{ν+1}(y)`.

use std::f64::consts::PI;

/// `Γ(k/2)` for a positive integer `k`.
pub fn gamma_half(k: u32) -> f64 {
    assert!(k > 0, "gamma_half(0) is a pole");
    let (mut value, mut x) = if k % 2 == 0 { (1.0, 1.0) } else { (PI.sqrt(), 0.5) };
    let target = k as f64 / 2.0;
    while x < target - 0.25 {
        value *= x;
        x += 1.0;
    }
    value
}

/// Surface area of the unit sphere `S^{d-1} ⊂ R^d`.
pub fn sphere_area(d: usize) -> f64 {
    assert!(d > 0);
    2.0 * PI.powf(d as f64 / 2.0) / gamma_half(d as u32)
}

/// `Λ_ν` for `ν = k/2 - 1` with `k >= 1`, i.e. the spherical average of
/// `cos(y ω_1)` over `S^{k-1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalBessel {
    /// Dimension `k` of the ambient space of the sphere.
    k: usize,
}

impl SphericalBessel {
    pub fn new(k: usize) -> Self {
        assert!(k >= 1, "sphere dimension must be >= 1");
        SphericalBessel { k }
    }

    /// Order `ν = k/2 - 1`.
    pub fn order(&self) -> f64 {
        self.k as f64 / 2.0 - 1.0
    }

    pub fn eval(&self, y: f64) -> f64 {
        let y = y.abs();
        if self.k == 1 {
            return y.cos();
        }
        if y < 1e-300 {
            return 1.0;
        }
        if self.k % 2 == 1 {
            let l = (self.k - 3) / 2;
            if y < l as f64 + 2.0 {
                self.series(y)
            } else {
                half_integer_upward(l, y)
            }
        } else if y < 1.0 {
            self.series(y)
        } else {
            self.poisson_trapezoid(y)
        }
    }

    /// `0F1(; ν+1; -y²/4)`.
    fn series(&self, y: f64) -> f64 {
        let b = self.order() + 1.0;
        let q = -0.25 * y * y;
        let mut term = 1.0;
        let mut sum = 1.0;
        for j in 1..200 {
            let jf = j as f64;
            term *= q / (jf * (b + jf - 1.0));
            sum += term;
            if term.abs() < 1e-18 * sum.abs().max(1e-300) {
                break;
            }
        }
        sum
    }

    /// Even `k`: `c ∫_0^π sin^{k-2}θ cos(y cos θ) dθ` by the trapezoid rule,
    /// spectrally accurate because the integrand is smooth and π-periodic.
    fn poisson_trapezoid(&self, y: f64) -> f64 {
        let p = (self.k - 2) as i32;
        let nodes = (0.5 * y + 0.5 * p as f64 + 30.0).ceil() as usize;
        let h = PI / nodes as f64;
        let sum: f64 = (0..nodes)
            .map(|i| {
                let th = i as f64 * h;
                th.sin().powi(p) * (y * th.cos()).cos()
            })
            .sum();
        let c = gamma_half(self.k as u32) / (gamma_half(self.k as u32 - 1) * PI.sqrt());
        c * h * sum
    }
}

/// `(2l+1)!! j_l(y) / y^l` via upward recurrence, stable for `y > l`.
fn half_integer_upward(l: usize, y: f64) -> f64 {
    let (s, c) = y.sin_cos();
    let mut prev = s / y;
    if l == 0 {
        return prev;
    }
    let mut cur = s / (y * y) - c / y;
    for i in 1..l {
        let next = (2 * i + 1) as f64 / y * cur - prev;
        prev = cur;
        cur = next;
    }
    let mut scale = 1.0;
    for i in 0..l {
        scale *= (2 * i + 3) as f64 / y;
    }
    cur * scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_and_sphere_areas() {
        assert!((gamma_half(1) - PI.sqrt()).abs() < 1e-15);
        assert_eq!(gamma_half(2), 1.0);
        assert_eq!(gamma_half(8), 6.0);
        assert!((gamma_half(5) - 0.75 * PI.sqrt()).abs() < 1e-14);
        assert_eq!(sphere_area(1), 2.0);
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-14);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-13);
        assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-13);
    }

    #[test]
    fn closed_forms() {
        for &y in &[0.0, 0.3, 1.7, 5.0, 23.4, 150.0] {
            assert!((SphericalBessel::new(1).eval(y) - y.cos()).abs() < 1e-15);
            let sinc = if y == 0.0 { 1.0 } else { y.sin() / y };
            assert!((SphericalBessel::new(3).eval(y) - sinc).abs() < 1e-14, "y={y}");
            if y > 0.5 {
                let l32 = 3.0 * (y.sin() - y * y.cos()) / y.powi(3);
                assert!((SphericalBessel::new(5).eval(y) - l32).abs() < 1e-13, "y={y}");
            }
        }
    }

    #[test]
    fn integer_orders_match_reference_bessel_values() {
        // J0(1), J1(1), J0(10), J1(10) from standard tables.
        assert!((SphericalBessel::new(2).eval(1.0) - 0.765_197_686_557_966_6).abs() < 1e-14);
        assert!((SphericalBessel::new(2).eval(10.0) - -0.245_935_764_451_348_3).abs() < 1e-14);
        assert!((SphericalBessel::new(4).eval(1.0) - 2.0 * 0.440_050_585_744_933_5).abs() < 1e-14);
        assert!((SphericalBessel::new(4).eval(10.0) - 0.2 * 0.043_472_746_168_861_44).abs() < 1e-14);
    }

    #[test]
    fn derivative_identity_all_small_dimensions() {
        for k in 1..=9 {
            let f = SphericalBessel::new(k);
            let next = SphericalBessel::new(k + 2);
            for &y in &[0.2, 0.9, 2.5, 4.1, 7.7, 13.0, 31.0] {
                let h = 1e-5;
                let fd = (f.eval(y + h) - f.eval(y - h)) / (2.0 * h);
                let want = -y / k as f64 * next.eval(y);
                assert!((fd - want).abs() < 1e-8, "k={k} y={y}: {fd} vs {want}");
            }
        }
    }

    #[test]
    fn series_and_asymptotic_branches_agree() {
        for k in [2usize, 3, 4, 5, 7, 8] {
            let f = SphericalBessel::new(k);
            for &y in &[0.999, 1.001, 2.999, 3.001, 4.5, 5.5] {
                let a = f.series(y);
                let b = if k % 2 == 1 {
                    half_integer_upward((k - 3) / 2, y)
                } else {
                    f.poisson_trapezoid(y)
                };
                assert!((a - b).abs() < 1e-12, "k={k} y={y}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn bounded_by_one() {
        for k in 1..=8 {
            let f = SphericalBessel::new(k);
            for i in 0..2000 {
                let y = i as f64 * 0.05;
                assert!(f.eval(y).abs() <= 1.0 + 1e-14);
            }
        }
    }
}
