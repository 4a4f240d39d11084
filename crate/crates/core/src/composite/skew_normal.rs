//! Skew-normal distribution: CDF via Owen's T function, quantiles by
//! bisection, and a method-of-moments fit.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

/// Largest attainable |skewness| of a skew-normal law (the δ → ±1 limit).
pub fn max_skewness() -> f64 {
    let c = (2.0 / PI).sqrt();
    0.5 * (4.0 - PI) * c.powi(3) / (1.0 - 2.0 / PI).powf(1.5)
}

/// Fraction of [`max_skewness`] that sample skewness is clamped to.
pub const SKEWNESS_CLAMP: f64 = 0.99;

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail 1 - Φ(x), accurate far into the tail.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

const GL_ORDER: usize = 20;

fn gauss_legendre() -> &'static ([f64; GL_ORDER], [f64; GL_ORDER]) {
    static NODES: OnceLock<([f64; GL_ORDER], [f64; GL_ORDER])> = OnceLock::new();
    NODES.get_or_init(|| {
        let n = GL_ORDER;
        let mut x = [0.0; GL_ORDER];
        let mut w = [0.0; GL_ORDER];
        for i in 0..n.div_ceil(2) {
            let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut pp;
            loop {
                let (mut p1, mut p2) = (1.0, 0.0);
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    p1 = ((2.0 * j as f64 + 1.0) * z * p2 - j as f64 * p3) / (j as f64 + 1.0);
                }
                pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() < 1e-15 {
                    break;
                }
            }
            x[i] = -z;
            x[n - 1 - i] = z;
            w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
            w[n - 1 - i] = w[i];
        }
        (x, w)
    })
}

/// T(h, a) for h ≥ 0 and 0 ≤ a ≤ 1 by composite Gauss-Legendre quadrature
/// of (1/2π) ∫₀ᵃ exp(-h²(1+x²)/2) / (1+x²) dx.
fn owens_t_quadrature(h: f64, a: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    let (nodes, weights) = gauss_legendre();
    // Panels narrow enough to resolve the exp(-h²x²/2) peak at the origin.
    let panels = ((4.0 * a * h).ceil() as usize).clamp(1, 256);
    let width = a / panels as f64;
    let hh = 0.5 * h * h;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * width;
        let half = 0.5 * width;
        let mut s = 0.0;
        for (x, w) in nodes.iter().zip(weights) {
            let t = mid + half * x;
            let q = 1.0 + t * t;
            s += w * (-hh * q).exp() / q;
        }
        total += s * half;
    }
    total / (2.0 * PI)
}

/// Owen's T function T(h, a).
pub fn owens_t(h: f64, a: f64) -> f64 {
    if a == 0.0 || h.is_infinite() {
        return 0.0;
    }
    if a < 0.0 {
        return -owens_t(h, -a);
    }
    let h = h.abs();
    if a <= 1.0 {
        return owens_t_quadrature(h, a);
    }
    // T(h,a) + T(ah,1/a) = ½Q(h) + ½Q(ah) − Q(h)Q(ah), Q the upper tail.
    let ah = a * h;
    let qh = norm_sf(h);
    let qah = norm_sf(ah);
    0.5 * qh + 0.5 * qah - qh * qah - owens_t_quadrature(ah, 1.0 / a)
}

/// Location ξ, scale ω > 0, shape α.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewNormalParams {
    pub location: f64,
    pub scale: f64,
    pub shape: f64,
}

impl SkewNormalParams {
    pub fn new(location: f64, scale: f64, shape: f64) -> Option<Self> {
        (scale > 0.0 && scale.is_finite() && location.is_finite() && shape.is_finite())
            .then_some(Self { location, scale, shape })
    }

    pub fn delta(&self) -> f64 {
        self.shape / (1.0 + self.shape * self.shape).sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.location + self.scale * self.delta() * (2.0 / PI).sqrt()
    }

    pub fn variance(&self) -> f64 {
        let d = self.delta();
        self.scale * self.scale * (1.0 - 2.0 * d * d / PI)
    }

    pub fn skewness(&self) -> f64 {
        skewness_of_delta(self.delta())
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let z = (x - self.location) / self.scale;
        2.0 / self.scale * norm_pdf(z) * norm_cdf(self.shape * z)
    }

    /// F(x) = Φ(z) − 2·T(z, α).
    pub fn cdf(&self, x: f64) -> f64 {
        let z = (x - self.location) / self.scale;
        (norm_cdf(z) - 2.0 * owens_t(z, self.shape)).clamp(0.0, 1.0)
    }

    /// Inverse CDF by bisection on ξ ± 12ω, to an absolute width of 1e-9.
    pub fn quantile(&self, p: f64) -> f64 {
        assert!(p > 0.0 && p < 1.0, "quantile probability must lie in (0, 1)");
        let mut lo = self.location - 12.0 * self.scale;
        let mut hi = self.location + 12.0 * self.scale;
        while hi - lo > 1e-9 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Parameters matching a mean, SD and skewness. The skewness is clamped
    /// to ±0.99 of the attainable maximum first.
    pub fn from_moments(mean: f64, sd: f64, skewness: f64) -> Option<Self> {
        if !(sd > 0.0) || !mean.is_finite() || !skewness.is_finite() {
            return None;
        }
        let g = clamp_skewness(skewness);
        let d = solve_delta(g);
        let shape = d / (1.0 - d * d).sqrt();
        let scale = sd / (1.0 - 2.0 * d * d / PI).sqrt();
        let location = mean - scale * d * (2.0 / PI).sqrt();
        Self::new(location, scale, shape)
    }
}

pub fn clamp_skewness(g: f64) -> f64 {
    let limit = SKEWNESS_CLAMP * max_skewness();
    g.clamp(-limit, limit)
}

pub fn skewness_of_delta(d: f64) -> f64 {
    let m = d * (2.0 / PI).sqrt();
    0.5 * (4.0 - PI) * m.powi(3) / (1.0 - m * m).powf(1.5)
}

/// Solves skewness(δ) = g for δ ∈ (−1, 1) by bisection; skewness(δ) is
/// strictly increasing there.
fn solve_delta(g: f64) -> f64 {
    if g == 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if skewness_of_delta(mid) < g {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Mean, SD (n−1 denominator) and moment skewness m3 / m2^{3/2}.
pub fn sample_moments(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3) = (0.0, 0.0);
    for v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    let sd = (m2 / (n - 1.0)).sqrt();
    let (m2, m3) = (m2 / n, m3 / n);
    let skew = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    (mean, sd, skew)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Composite Simpson over many panels: independent of the quadrature
    /// used in the implementation.
    fn owens_t_simpson(h: f64, a: f64) -> f64 {
        let m = 200_000;
        let step = a / m as f64;
        let f = |x: f64| (-0.5 * h * h * (1.0 + x * x)).exp() / (1.0 + x * x);
        let mut s = f(0.0) + f(a);
        for i in 1..m {
            let x = i as f64 * step;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * step / 3.0 / (2.0 * PI)
    }

    #[test]
    fn owens_t_closed_forms() {
        for a in [0.1, 0.5, 1.0, 2.0, 10.0] {
            assert_abs_diff_eq!(owens_t(0.0, a), a.atan() / (2.0 * PI), epsilon = 1e-12);
        }
        for h in [0.0, 0.3, 1.0, 2.5, 5.0] {
            let p = norm_cdf(h);
            assert_abs_diff_eq!(owens_t(h, 1.0), 0.5 * p * (1.0 - p), epsilon = 1e-10);
        }
    }

    #[test]
    fn owens_t_matches_simpson_oracle() {
        for &h in &[0.0, 0.25, 0.7, 1.5, 3.0, 6.0] {
            for &a in &[0.05, 0.4, 0.99, 1.7, 4.0, 25.0] {
                let got = owens_t(h, a);
                let want = owens_t_simpson(h, a);
                assert_abs_diff_eq!(got, want, epsilon = 1e-10);
                assert_abs_diff_eq!(owens_t(-h, a), got, epsilon = 0.0);
                assert_abs_diff_eq!(owens_t(h, -a), -got, epsilon = 0.0);
            }
        }
    }

    #[test]
    fn symmetric_law_is_normal() {
        let p = SkewNormalParams::new(1.0, 2.0, 0.0).unwrap();
        for x in [-3.0, 0.0, 1.0, 4.5] {
            assert_abs_diff_eq!(p.cdf(x), norm_cdf((x - 1.0) / 2.0), epsilon = 1e-14);
        }
    }

    #[test]
    fn cdf_matches_integrated_pdf() {
        let p = SkewNormalParams::new(0.5, 1.3, -2.5).unwrap();
        let lo = p.location - 14.0 * p.scale;
        for x in [-2.0, 0.0, 0.5, 1.2] {
            let m = 100_000;
            let step = (x - lo) / m as f64;
            let mut s = p.pdf(lo) + p.pdf(x);
            for i in 1..m {
                s += if i % 2 == 1 { 4.0 } else { 2.0 } * p.pdf(lo + i as f64 * step);
            }
            assert_abs_diff_eq!(p.cdf(x), s * step / 3.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        let p = SkewNormalParams::new(-1.0, 0.7, 3.0).unwrap();
        for k in 1..=10 {
            let q = k as f64 / 11.0;
            let x = p.quantile(q);
            assert_abs_diff_eq!(p.cdf(x), q, epsilon = 1e-8);
        }
    }

    #[test]
    fn maximum_skewness_constant() {
        assert_abs_diff_eq!(max_skewness(), 0.9952717, epsilon = 1e-7);
    }

    #[test]
    fn zero_skew_gives_normal() {
        let p = SkewNormalParams::from_moments(3.0, 2.0, 0.0).unwrap();
        assert_eq!(p.shape, 0.0);
        assert_abs_diff_eq!(p.location, 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.scale, 2.0, epsilon = 1e-15);
    }

    /// Closed-form inverse of the skewness equation, used as an oracle for
    /// the bisection solver.
    fn delta_closed_form(g: f64) -> f64 {
        let c = (0.5 * (4.0 - PI)).powf(2.0 / 3.0);
        let a = g.abs().powf(2.0 / 3.0);
        g.signum() * (PI / 2.0 * a / (a + c)).sqrt()
    }

    #[test]
    fn moment_round_trip() {
        for &g in &[0.5, -0.5, 0.1, 0.9] {
            let p = SkewNormalParams::from_moments(1.0, 2.0, g).unwrap();
            assert_abs_diff_eq!(p.delta(), delta_closed_form(g), epsilon = 1e-10);
            assert_abs_diff_eq!(p.mean(), 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(p.variance().sqrt(), 2.0, epsilon = 1e-10);
            assert_abs_diff_eq!(p.skewness(), g, epsilon = 1e-10);
        }
    }

    #[test]
    fn extreme_skewness_is_clamped() {
        let p = SkewNormalParams::from_moments(0.0, 1.0, 2.0).unwrap();
        let limit = 0.99 * max_skewness();
        assert_abs_diff_eq!(p.skewness(), limit, epsilon = 1e-10);
        assert_abs_diff_eq!(p.mean(), 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(p.variance(), 1.0, epsilon = 1e-10);
        let q = SkewNormalParams::from_moments(0.0, 1.0, -5.0).unwrap();
        assert_abs_diff_eq!(q.skewness(), -limit, epsilon = 1e-10);
    }
}
