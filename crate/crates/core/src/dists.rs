//! Truncated normal, Dirichlet and inverse-gamma densities and samplers.
//!
//! The truncated normal works in log space throughout so emissions whose
//! mass sits far in a tail relative to the [−30, 0] window keep finite
//! normalizers.

use std::f64::consts::{LN_2, PI, SQRT_2};

use rand::Rng;
use rand_distr::{Distribution, Gamma, Open01};
use libm::{erfc, lgamma as ln_gamma};
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this argument `log_ndtr` switches to the asymptotic tail series.
const TAIL_SWITCH: f64 = -25.0;

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

pub fn std_normal_logpdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// `ln Φ(x)`, accurate in both tails.
pub fn log_ndtr(x: f64) -> f64 {
    if x == f64::INFINITY {
        0.0
    } else if x > 0.0 {
        (-0.5 * erfc(x / SQRT_2)).ln_1p()
    } else if x > TAIL_SWITCH {
        (0.5 * erfc(-x / SQRT_2)).ln()
    } else if x == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        // Mills-ratio series: Φ(x) ≈ φ(x)/|x| · Σ (−1)^n (2n−1)!! / x^{2n}
        let x2 = x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        for n in 1..12 {
            term *= -((2 * n - 1) as f64) / x2;
            sum += term;
        }
        std_normal_logpdf(x) - (-x).ln() + sum.ln()
    }
}

/// `ln(1 − e^d)` for `d ≤ 0`.
fn log1mexp(d: f64) -> f64 {
    if d > -LN_2 {
        (-d.exp_m1()).ln()
    } else {
        (-d.exp()).ln_1p()
    }
}

/// Inverse of [`log_ndtr`]: the `x` with `ln Φ(x) = log_p`.
pub fn inv_log_ndtr(log_p: f64) -> f64 {
    if log_p >= 0.0 {
        return f64::INFINITY;
    }
    if log_p == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let p = log_p.exp();
    let mut x = if p > 1e-300 {
        -SQRT_2 * erfc_inv(2.0 * p)
    } else {
        // leading-order inversion of the tail series
        let t = -2.0 * log_p;
        -(t - (t * 2.0 * PI).ln()).sqrt()
    };
    if !x.is_finite() {
        x = if log_p < -1.0 { -40.0 } else { 8.0 };
    }
    // Newton on ln Φ; the map is concave so a few steps suffice.
    for _ in 0..50 {
        let lf = log_ndtr(x);
        let slope = (std_normal_logpdf(x) - lf).exp();
        if !(slope.is_finite() && slope > 0.0) {
            break;
        }
        let step = (lf - log_p) / slope;
        x -= step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

/// Normal distribution with location `mu` and scale `sigma` restricted to
/// `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncNormal {
    pub mu: f64,
    pub sigma: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Quantities shared by density, moment and gradient evaluations.
#[derive(Debug, Clone, Copy)]
pub struct TnCache {
    pub log_z: f64,
    pub alpha: f64,
    pub beta: f64,
    /// φ(α)/Z and φ(β)/Z.
    pub phi_a_over_z: f64,
    pub phi_b_over_z: f64,
}

impl TruncNormal {
    pub fn new(mu: f64, sigma: f64, lower: f64, upper: f64) -> Result<Self> {
        if !(mu.is_finite() && sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "truncated normal needs finite mu and positive sigma, got ({mu}, {sigma})"
            )));
        }
        if !(lower < upper) {
            return Err(Error::InvalidDistribution(format!(
                "truncated normal needs lower < upper, got [{lower}, {upper}]"
            )));
        }
        Ok(TruncNormal {
            mu,
            sigma,
            lower,
            upper,
        })
    }

    fn degenerate(&self) -> Error {
        Error::DegenerateNormalizer {
            loc: self.mu,
            scale: self.sigma,
            lower: self.lower,
            upper: self.upper,
        }
    }

    /// `ln Z` with `Z = Φ(β) − Φ(α)`.
    pub fn log_normalizer(&self) -> Result<f64> {
        let a = (self.lower - self.mu) / self.sigma;
        let b = (self.upper - self.mu) / self.sigma;
        let log_z = if b <= 0.0 {
            let lb = log_ndtr(b);
            lb + log1mexp(log_ndtr(a) - lb)
        } else if a >= 0.0 {
            let la = log_ndtr(-a);
            la + log1mexp(log_ndtr(-b) - la)
        } else {
            (-(std_normal_cdf(a) + std_normal_cdf(-b))).ln_1p()
        };
        if log_z.is_finite() {
            Ok(log_z)
        } else {
            Err(self.degenerate())
        }
    }

    pub fn cache(&self) -> Result<TnCache> {
        let log_z = self.log_normalizer()?;
        let alpha = (self.lower - self.mu) / self.sigma;
        let beta = (self.upper - self.mu) / self.sigma;
        Ok(TnCache {
            log_z,
            alpha,
            beta,
            phi_a_over_z: (std_normal_logpdf(alpha) - log_z).exp(),
            phi_b_over_z: (std_normal_logpdf(beta) - log_z).exp(),
        })
    }

    /// Log density given a precomputed normalizer.
    #[inline]
    pub fn logpdf_with(&self, log_z: f64, x: f64) -> f64 {
        if x < self.lower || x > self.upper {
            return f64::NEG_INFINITY;
        }
        let z = (x - self.mu) / self.sigma;
        -0.5 * z * z - LN_SQRT_2PI - self.sigma.ln() - log_z
    }

    /// `(∂ ln Z/∂μ, ∂ ln Z/∂σ)`.
    pub fn log_normalizer_grad(&self, c: &TnCache) -> (f64, f64) {
        let d_mu = (c.phi_a_over_z - c.phi_b_over_z) / self.sigma;
        let d_sigma = (c.alpha * c.phi_a_over_z - c.beta * c.phi_b_over_z) / self.sigma;
        (d_mu, d_sigma)
    }

    /// Gradient of the log density at `x` with respect to `(μ, σ)`.
    pub fn score(&self, c: &TnCache, x: f64) -> (f64, f64) {
        let (gz_mu, gz_sigma) = self.log_normalizer_grad(c);
        let z = (x - self.mu) / self.sigma;
        (z / self.sigma - gz_mu, (z * z - 1.0) / self.sigma - gz_sigma)
    }
}

pub fn tn_logpdf(d: &TruncNormal, x: f64) -> Result<f64> {
    let log_z = d.log_normalizer()?;
    Ok(d.logpdf_with(log_z, x))
}

/// Mean and variance from the closed forms in φ/Φ.
pub fn tn_moments(d: &TruncNormal) -> Result<(f64, f64)> {
    let c = d.cache()?;
    let r = c.phi_a_over_z - c.phi_b_over_z;
    // α·φ(α) is 0 when φ(α) underflows, even for huge |α|.
    let ta = if c.phi_a_over_z == 0.0 { 0.0 } else { c.alpha * c.phi_a_over_z };
    let tb = if c.phi_b_over_z == 0.0 { 0.0 } else { c.beta * c.phi_b_over_z };
    let mean = (d.mu + d.sigma * r).clamp(d.lower, d.upper);
    let var = d.sigma * d.sigma * (1.0 + ta - tb - r * r);
    Ok((mean, var.max(0.0)))
}

/// Inverse-CDF draw. The uniform is mapped inside whichever tail keeps the
/// most precision, so far-tail windows never stall.
pub fn tn_sample<R: Rng + ?Sized>(d: &TruncNormal, rng: &mut R) -> Result<f64> {
    d.log_normalizer()?;
    let u: f64 = Open01.sample(rng);
    let a = (d.lower - d.mu) / d.sigma;
    let b = (d.upper - d.mu) / d.sigma;
    let (std, flip) = if a >= 0.0 { (sample_std_window(-b, -a, u), true) } else { (sample_std_window(a, b, u), false) };
    let z = if flip { -std } else { std };
    Ok((d.mu + d.sigma * z).clamp(d.lower, d.upper))
}

/// Standard normal restricted to `[a, b]` with `a < 0`, by inverting the CDF
/// in log space.
fn sample_std_window(a: f64, b: f64, u: f64) -> f64 {
    let la = log_ndtr(a);
    let lb = log_ndtr(b);
    // ln(Φ(a) + u (Φ(b) − Φ(a))) = lb + ln(e^{la−lb} + u (1 − e^{la−lb}))
    let r = (la - lb).exp();
    let lp = lb + (r + u * (1.0 - r)).ln();
    inv_log_ndtr(lp).clamp(a, b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParams {
    pub alpha: Vec<f64>,
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() || alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::InvalidDistribution(format!(
                "dirichlet concentration must be positive, got {alpha:?}"
            )));
        }
        Ok(DirichletParams { alpha })
    }

    pub fn ones(k: usize) -> Self {
        DirichletParams {
            alpha: vec![1.0; k],
        }
    }

    pub fn log_normalizer(&self) -> f64 {
        ln_gamma(self.alpha.iter().sum()) - self.alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>()
    }
}

pub const DIRICHLET_SIMPLEX_TOL: f64 = 1e-9;

pub fn dirichlet_logpdf(p: &DirichletParams, x: &[f64]) -> Result<f64> {
    if x.len() != p.alpha.len() {
        return Err(Error::DimensionMismatch {
            expected: p.alpha.len(),
            got: x.len(),
        });
    }
    let sum: f64 = x.iter().sum();
    if x.iter().any(|v| !(*v >= -DIRICHLET_SIMPLEX_TOL)) || (sum - 1.0).abs() > DIRICHLET_SIMPLEX_TOL {
        return Err(Error::OffSimplex(format!("{x:?} sums to {sum}")));
    }
    let kernel: f64 = p
        .alpha
        .iter()
        .zip(x)
        .filter(|(a, _)| **a != 1.0)
        .map(|(a, v)| (a - 1.0) * v.max(0.0).ln())
        .sum();
    Ok(p.log_normalizer() + kernel)
}

pub fn dirichlet_sample<R: Rng + ?Sized>(p: &DirichletParams, rng: &mut R) -> Vec<f64> {
    let mut g: Vec<f64> = p
        .alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("validated shape").sample(rng))
        .collect();
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Inverse gamma with density ∝ x^(−α−1) exp(−β/x).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvGammaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl InvGammaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::InvalidDistribution(format!(
                "inverse gamma needs positive shape and scale, got ({alpha}, {beta})"
            )));
        }
        Ok(InvGammaParams { alpha, beta })
    }

    pub fn mode(&self) -> f64 {
        self.beta / (self.alpha + 1.0)
    }

    /// d/dx of the log density.
    pub fn dlogpdf(&self, x: f64) -> f64 {
        -(self.alpha + 1.0) / x + self.beta / (x * x)
    }
}

pub fn invgamma_logpdf(p: &InvGammaParams, x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    p.alpha * p.beta.ln() - ln_gamma(p.alpha) - (p.alpha + 1.0) * x.ln() - p.beta / x
}

pub fn invgamma_sample<R: Rng + ?Sized>(p: &InvGammaParams, rng: &mut R) -> f64 {
    let g = Gamma::new(p.alpha, 1.0 / p.beta).expect("validated shape").sample(rng);
    1.0 / g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{integrate, quad_moments};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tn(mu: f64, sigma: f64) -> TruncNormal {
        TruncNormal::new(mu, sigma, -30.0, 0.0).unwrap()
    }

    #[test]
    fn cdf_values() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert_abs_diff_eq!(std_normal_cdf(10.0), 1.0, epsilon = 1e-12);
        // Simpson-integrated oracle value of the density up to 1.
        assert_abs_diff_eq!(std_normal_cdf(1.0), 0.841_344_746_068_542_9, epsilon = 1e-12);
    }

    #[test]
    fn cdf_matches_quadrature_oracle() {
        for &x in &[-3.0, -1.0, 0.3, 1.0, 2.5] {
            let q = 0.5 + integrate(&|t| (std_normal_logpdf(t)).exp(), 0.0, x, 1e-14);
            assert_abs_diff_eq!(std_normal_cdf(x), q, epsilon = 1e-12);
        }
    }

    #[test]
    fn log_ndtr_tail_is_continuous() {
        let below = log_ndtr(TAIL_SWITCH - 1e-9);
        let above = log_ndtr(TAIL_SWITCH + 1e-9);
        assert!((below - above).abs() < 1e-6, "{below} vs {above}");
        assert!(log_ndtr(-1000.0).is_finite());
        assert!(log_ndtr(40.0) == 0.0 || log_ndtr(40.0) > -1e-300);
    }

    #[test]
    fn inv_log_ndtr_round_trips() {
        for &x in &[-800.0, -40.0, -26.0, -10.0, -1.0, 0.0, 2.0, 7.5] {
            let back = inv_log_ndtr(log_ndtr(x));
            assert!((back - x).abs() < 1e-9 * x.abs().max(1.0), "{x} -> {back}");
        }
    }

    #[test]
    fn tn_logpdf_outside_support() {
        assert_eq!(tn_logpdf(&tn(-15.0, 4.0), -40.0).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn tn_logpdf_is_symmetric_about_centered_mode() {
        let d = tn(-15.0, 4.0);
        let f = |x| tn_logpdf(&d, x).unwrap();
        assert_abs_diff_eq!(f(-15.0) - f(-19.0), f(-15.0) - f(-11.0), epsilon = 1e-14);
    }

    #[test]
    fn tn_logpdf_at_mode_matches_quadrature_normalizer() {
        let d = tn(-15.0, 4.0);
        let z = integrate(&|x| (std_normal_logpdf((x + 15.0) / 4.0)).exp() / 4.0, -30.0, 0.0, 1e-14);
        let expected = (std_normal_logpdf(0.0).exp() / 4.0).ln() - z.ln();
        assert_abs_diff_eq!(tn_logpdf(&d, -15.0).unwrap(), expected, epsilon = 1e-10);
    }

    #[test]
    fn tn_moments_symmetric_case() {
        let (m, v) = tn_moments(&tn(-15.0, 4.0)).unwrap();
        assert_abs_diff_eq!(m, -15.0, epsilon = 1e-12);
        assert!(v < 16.0);
    }

    #[test]
    fn tn_moments_match_quadrature() {
        let d = tn(-2.0, 5.0);
        let (m, v) = tn_moments(&d).unwrap();
        let (qm, qv) = quad_moments(d.mu, d.sigma, d.lower, d.upper);
        assert_abs_diff_eq!(m, qm, epsilon = 1e-8);
        assert_abs_diff_eq!(v, qv, epsilon = 1e-8);
    }

    #[test]
    fn degenerate_normalizer_is_an_error() {
        let d = TruncNormal::new(10.0, 1e-300, -30.0, 0.0).unwrap();
        assert!(matches!(d.log_normalizer(), Err(Error::DegenerateNormalizer { .. })));
    }

    #[test]
    fn tn_samples_stay_in_support_and_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = tn(-15.0, 4.0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| tn_sample(&d, &mut rng).unwrap()).collect();
        assert!(xs.iter().all(|x| (-30.0..=0.0).contains(x)));
        let mean = xs.iter().sum::<f64>() / n as f64;
        let (_, var) = tn_moments(&d).unwrap();
        let se = (var / n as f64).sqrt();
        assert!((mean + 15.0).abs() < 4.0 * se, "mean {mean}");
    }

    #[test]
    fn tn_samples_match_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = tn(-2.0, 5.0);
        let (m, v) = tn_moments(&d).unwrap();
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| tn_sample(&d, &mut rng).unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - m).abs() < 4.0 * (v / n as f64).sqrt());
        let m4: f64 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n as f64;
        let se_var = ((m4 - v * v) / n as f64).sqrt();
        assert!((var - v).abs() < 4.0 * se_var, "var {var} vs {v}");
    }

    #[test]
    fn far_tail_window_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = tn(50.0, 1.0);
        for _ in 0..1000 {
            let x = tn_sample(&d, &mut rng).unwrap();
            assert!((-30.0..=0.0).contains(&x));
            assert!(x > -0.5);
        }
    }

    #[test]
    fn dirichlet_flat_cases() {
        let d3 = DirichletParams::ones(3);
        assert_abs_diff_eq!(dirichlet_logpdf(&d3, &[0.2, 0.5, 0.3]).unwrap(), 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(dirichlet_logpdf(&d3, &[1.0, 0.0, 0.0]).unwrap(), 2f64.ln(), epsilon = 1e-12);
        let d2 = DirichletParams::ones(2);
        assert_abs_diff_eq!(dirichlet_logpdf(&d2, &[0.3, 0.7]).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn dirichlet_general_matches_factorial_form() {
        // Γ(9)/(Γ(2)Γ(3)Γ(4)) = 40320/(1·2·6) = 3360
        let d = DirichletParams::new(vec![2.0, 3.0, 4.0]).unwrap();
        let x = [0.2, 0.3, 0.5];
        let expected = 3360f64.ln() + 0.2f64.ln() + 2.0 * 0.3f64.ln() + 3.0 * 0.5f64.ln();
        assert_abs_diff_eq!(dirichlet_logpdf(&d, &x).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn dirichlet_rejects_off_simplex() {
        let d = DirichletParams::ones(2);
        assert!(matches!(dirichlet_logpdf(&d, &[0.6, 0.6]), Err(Error::OffSimplex(_))));
    }

    #[test]
    fn invgamma_support_and_mode() {
        let p = InvGammaParams::new(40.0, 80.0).unwrap();
        assert_eq!(invgamma_logpdf(&p, -1.0), f64::NEG_INFINITY);
        assert_abs_diff_eq!(p.mode(), 80.0 / 41.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.dlogpdf(p.mode()), 0.0, epsilon = 1e-12);
        let m = p.mode();
        assert!(invgamma_logpdf(&p, m) > invgamma_logpdf(&p, m * 1.01));
        assert!(invgamma_logpdf(&p, m) > invgamma_logpdf(&p, m * 0.99));
    }

    #[test]
    fn invgamma_matches_quadrature_normalized_kernel() {
        let p = InvGammaParams::new(40.0, 80.0).unwrap();
        let kernel = |x: f64| (-(41.0) * x.ln() - 80.0 / x + 41.0 * 2f64.ln() + 40.0).exp();
        let z = integrate(&kernel, 1e-3, 50.0, 1e-15);
        let expected = kernel(2.0).ln() - z.ln();
        assert_abs_diff_eq!(invgamma_logpdf(&p, 2.0), expected, epsilon = 1e-10);
    }

    #[test]
    fn samplers_match_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let d = DirichletParams::ones(3);
        let mut acc = [0.0; 3];
        for _ in 0..n {
            let x = dirichlet_sample(&d, &mut rng);
            assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, v) in acc.iter_mut().zip(&x) {
                *a += v;
            }
        }
        // marginal Beta(1, 2): variance 2/36
        let se = (2.0 / 36.0 / n as f64).sqrt();
        for a in acc {
            assert!((a / n as f64 - 1.0 / 3.0).abs() < 4.0 * se);
        }

        let ig = InvGammaParams::new(40.0, 80.0).unwrap();
        let xs: Vec<f64> = (0..n).map(|_| invgamma_sample(&ig, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let true_mean = 80.0 / 39.0;
        let var = true_mean * true_mean / 38.0;
        assert!((mean - true_mean).abs() < 4.0 * (var / n as f64).sqrt());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn tn_density_integrates_to_one(mu in -60.0f64..60.0, sigma in 0.1f64..20.0) {
            let d = tn(mu, sigma);
            let lz = d.log_normalizer().unwrap();
            let total = integrate(&|x| d.logpdf_with(lz, x).exp(), -30.0, 0.0, 1e-12);
            prop_assert!((total - 1.0).abs() < 1e-8, "total {}", total);
        }

        #[test]
        fn tn_moments_agree_with_quadrature(mu in -60.0f64..60.0, sigma in 0.1f64..20.0) {
            let d = tn(mu, sigma);
            let (m, v) = tn_moments(&d).unwrap();
            let (qm, qv) = quad_moments(d.mu, d.sigma, d.lower, d.upper);
            prop_assert!((m - qm).abs() < 1e-8, "mean {} vs {}", m, qm);
            prop_assert!((v - qv).abs() < 1e-8, "var {} vs {}", v, qv);
        }

        #[test]
        fn flat_dirichlet_is_constant(raw in prop::collection::vec(0.001f64..1.0, 2..7)) {
            let s: f64 = raw.iter().sum();
            let x: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let k = x.len();
            let v = dirichlet_logpdf(&DirichletParams::ones(k), &x).unwrap();
            prop_assert!((v - ln_gamma(k as f64)).abs() < 1e-12);
        }

        #[test]
        fn log_densities_finite_inside_support(
            mu in -60.0f64..60.0,
            sigma in 0.1f64..20.0,
            x in -29.999f64..-0.001,
            ig_x in 0.01f64..100.0,
        ) {
            prop_assert!(tn_logpdf(&tn(mu, sigma), x).unwrap().is_finite());
            let ig = InvGammaParams::new(40.0, 80.0).unwrap();
            prop_assert!(invgamma_logpdf(&ig, ig_x).is_finite());
        }
    }
}
